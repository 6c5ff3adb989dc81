//! One-dimensional minimization used by the numeric M-steps.

/// Result of a 1-D minimization.
#[derive(Clone, Copy, Debug)]
pub struct Minimum {
    pub x: f64,
    pub f: f64,
    pub evaluations: usize,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's method on `[a, b]` (parabolic steps with golden-section fallback).
pub fn brent_minimize<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> Minimum {
    let (mut a, mut b) = if a < b { (a, b) } else { (b, a) };
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut evaluations = 1;
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        evaluations += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum { x, f: fx, evaluations }
}

/// Minimizes `f` near `x0` by expanding a bracket outward in steps of
/// `step` and then running Brent inside it. Non-finite values count as +∞.
pub fn minimize_near<F: FnMut(f64) -> f64>(mut f: F, x0: f64, step: f64, tol: f64) -> Minimum {
    let mut eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let f0 = eval(x0);
    let (mut a, mut fa) = (x0, f0);
    let (mut b, mut fb) = (x0 + step, eval(x0 + step));
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = b + 1.618 * (b - a);
    let mut fc = eval(c);
    let mut evaluations = 3;
    while fc < fb && evaluations < 80 {
        a = b;
        b = c;
        fb = fc;
        c = b + 1.618 * (b - a);
        fc = eval(c);
        evaluations += 1;
    }
    let _ = fa;
    let (lo, hi) = if a < c { (a, c) } else { (c, a) };
    let mut best = brent_minimize(&mut eval, lo, hi, tol, 200);
    best.evaluations += evaluations;
    if f0 <= best.f {
        best.x = x0;
        best.f = f0;
    }
    best
}
