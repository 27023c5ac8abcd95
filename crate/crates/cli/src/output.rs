//! CSV and report writers. Every file starts with `#` lines carrying the
//! tool version and the resolved configuration.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::fmt_f64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header block shared by all output files of one run.
#[derive(Debug, Clone)]
pub struct Header {
    lines: Vec<String>,
}

impl Header {
    pub fn new(command: &str, echo: &[String], extra: &[String]) -> Self {
        let mut lines = vec![format!("qnd-squeeze {VERSION}"), format!("command = {command}")];
        lines.extend(extra.iter().cloned());
        lines.extend(echo.iter().cloned());
        Self { lines }
    }

    pub fn with_note(&self, note: &str) -> Self {
        let mut lines = self.lines.clone();
        lines.push(note.to_string());
        Self { lines }
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        for l in &self.lines {
            writeln!(w, "# {l}")?;
        }
        Ok(())
    }
}

pub enum Cell {
    Int(usize),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => fmt_f64(*x),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
    width: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &Header, columns: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        header.write_to(&mut out)?;
        writeln!(out, "{}", columns.join(","))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            width: columns.len(),
        })
    }

    pub fn row(&mut self, cells: Vec<Cell>) -> Result<()> {
        assert_eq!(cells.len(), self.width, "row width in {}", self.path.display());
        let rendered: Vec<String> = cells.iter().map(Cell::render).collect();
        writeln!(self.out, "{}", rendered.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().with_context(|| format!("writing {}", self.path.display()))?;
        Ok(self.path)
    }
}

pub fn write_text(path: &Path, header: &Header, body: &str) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut buf = Vec::new();
    header.write_to(&mut buf)?;
    buf.extend_from_slice(body.as_bytes());
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/a.csv");
        let header = Header::new("pure", &["n_atoms = 3".into()], &[]);
        let mut w = CsvWriter::create(&path, &header, &["k", "p"]).unwrap();
        w.row(vec![0usize.into(), 0.5.into()]).unwrap();
        w.finish().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let expected = format!("# qnd-squeeze {VERSION}\n# command = pure\n# n_atoms = 3\nk,p\n0,5.0000000000000000e-1\n");
        assert_eq!(text, expected);
    }

    #[test]
    fn round_trip_formatting() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -1e-300, std::f64::consts::PI] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
