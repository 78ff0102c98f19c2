use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

/// 17 significant digits: parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{:.16e}", x)
}

/// A CSV table whose header carries `#` comment lines.
pub struct Table {
    header: String,
    columns: Vec<&'static str>,
    rows: Vec<String>,
}

impl Table {
    pub fn new(header: String, columns: &[&'static str]) -> Self {
        Table { header, columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells.join(","));
    }

    pub fn render(&self) -> String {
        let mut s = self.header.clone();
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.render()).map_err(|e| CliError::Failure(format!("writing {}: {}", path.display(), e)))
    }
}

/// Line-buffered per-round report written while the engine runs.
pub struct Stream {
    file: fs::File,
}

impl Stream {
    pub fn create(path: &Path, header: &str, columns: &[&str], append: bool) -> Result<Self, CliError> {
        let exists = append && path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| CliError::Usage(format!("cannot open {}: {}", path.display(), e)))?;
        if !exists {
            write!(file, "{}{}\n", header, columns.join(","))?;
        }
        Ok(Stream { file })
    }

    pub fn row(&mut self, cells: &[String]) -> Result<(), CliError> {
        writeln!(self.file, "{}", cells.join(","))?;
        Ok(())
    }
}

pub fn out_dir(dir: Option<&Path>) -> Result<PathBuf, CliError> {
    let d = dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("imps-out"));
    fs::create_dir_all(&d).map_err(|e| CliError::Usage(format!("cannot create {}: {}", d.display(), e)))?;
    Ok(d)
}
