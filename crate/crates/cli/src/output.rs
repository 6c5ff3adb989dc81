//! Output directory handling and the TOML run report.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const ECHO_FILE: &str = "config.resolved.toml";
pub const REPORT_FILE: &str = "report.toml";

pub struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// Renders through a core CSV writer into `name`.
    pub fn write_with(&mut self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> sepp::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        render(&mut buf).map_err(|source| CliError::Core {
            context: format!("writing {name}"),
            source,
        })?;
        self.write(name, &buf)
    }

    pub fn write_toml<S: serde::Serialize>(&mut self, name: &str, value: &S) -> CliResult<()> {
        let text = toml::to_string(value).map_err(|e| CliError::Config(format!("serializing {name}: {e}")))?;
        self.write(name, text.as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Key-value run summary, written with keys in sorted order.
#[derive(Default)]
pub struct Report {
    root: Table,
}

impl Report {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.root.insert(key.to_string(), value.into());
    }

    pub fn section(&mut self, name: &str) -> &mut Table {
        self.root
            .entry(name.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("report sections are tables")
    }

    pub fn into_table(self) -> Table {
        self.root
    }
}

pub fn floats(values: &[f64]) -> Value {
    Value::Array(values.iter().map(|v| Value::Float(*v)).collect())
}

pub fn strings<S: AsRef<str>>(values: &[S]) -> Value {
    Value::Array(values.iter().map(|v| Value::String(v.as_ref().to_string())).collect())
}

pub fn count(n: usize) -> Value {
    Value::Integer(n as i64)
}
