//! Run directories and the artifact writers.
//!
//! Every CSV row ends with `config_hash` and `seed` columns. Floats are
//! printed with 17 significant digits so files round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use eal_core::dynsys::fmt_f64;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::svg::{Figure, Panel};

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i128),
    Float(f64),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Empty => String::new(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i128)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i128)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[macro_export]
macro_rules! row {
    ($($cell:expr),* $(,)?) => {
        vec![$($crate::output::Cell::from($cell)),*]
    };
}

/// Output directory of one experiment run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    written: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `out_dir/<experiment>-<hash>` and stores the resolved config.
    pub fn create(config: &ExperimentConfig) -> CliResult<Self> {
        let path = config.run_dir();
        fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        let mut dir = Self {
            path,
            config_hash: config.hash(),
            seed: config.seed,
            written: Vec::new(),
        };
        dir.json("config.json", config)?;
        Ok(dir)
    }

    /// A child directory owned by one sub-run.
    pub fn child(&self, name: &str) -> CliResult<Self> {
        let path = self.path.join(name);
        fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            path,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> CliResult<PathBuf> {
        let bytes = csv_bytes(header, rows, &self.config_hash, self.seed)?;
        self.put(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Parse(e.to_string()))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, title: &str, columns: usize, panels: Vec<Panel>) -> CliResult<PathBuf> {
        let fig = Figure {
            title: title.to_string(),
            columns,
            panels,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        };
        self.put(name, fig.render().as_bytes())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        self.put(name, bytes)
    }
}

/// RFC 4180 bytes with the provenance columns appended.
pub fn csv_bytes(header: &[&str], rows: &[Vec<Cell>], config_hash: &str, seed: u64) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Core(eal_core::Error::Csv(e.to_string()));
    let mut head: Vec<&str> = header.to_vec();
    head.extend(["config_hash", "seed"]);
    w.write_record(&head).map_err(io)?;
    let seed = seed.to_string();
    for row in rows {
        if row.len() != header.len() {
            return Err(CliError::Core(eal_core::Error::Csv(format!(
                "row has {} cells, header has {}",
                row.len(),
                header.len()
            ))));
        }
        let mut rec: Vec<String> = row.iter().map(Cell::render).collect();
        rec.push(config_hash.to_string());
        rec.push(seed.clone());
        w.write_record(&rec).map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Core(eal_core::Error::Csv(e.to_string())))
}

/// Files under `dir` with the given extension, sorted, relative to `dir`.
pub fn list_files(dir: &Path, ext: &str) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == ext) {
                out.push(p.strip_prefix(dir).unwrap_or(&p).to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_columns_and_quoting() {
        let rows = vec![row!["a,b", 3usize, 0.1f64, None::<f64>]];
        let bytes = csv_bytes(&["name", "n", "x", "y"], &rows, "h", 7).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "name,n,x,y,config_hash,seed\r\n\"a,b\",3,1.0000000000000001e-1,,h,7\r\n"
        );
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(csv_bytes(&["a", "b"], &[row!["x"]], "h", 0).is_err());
    }
}
