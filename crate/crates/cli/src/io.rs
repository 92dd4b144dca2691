//! CSV and JSON persistence.
//!
//! Floats are written with the shortest decimal that parses back to the same
//! double, so tables are byte-stable and lossless.

use std::io::{Read, Write};
use std::path::Path;

use diffsense_core::sampling::EllipseSample;
use serde::Serialize;

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Empty,
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Empty => String::new(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => fmt_f64(*x),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        // Seeds above i64::MAX keep their exact decimal form.
        i64::try_from(x).map_or_else(|_| Cell::Text(x.to_string()), Cell::Int)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

pub fn fmt_f64(x: f64) -> String {
    let mut b = ryu::Buffer::new();
    b.format(x).to_string()
}

/// Header plus rows, written in row order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }

    pub fn write<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r.iter().map(Cell::render))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f)).map_err(std::io::Error::other)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(std::io::Error::other)
}

pub fn sample_to_json(s: &EllipseSample) -> String {
    serde_json::to_string(s).expect("samples serialize")
}

pub fn sample_from_json(text: &str) -> Result<EllipseSample, String> {
    serde_json::from_str(text).map_err(|e| format!("invalid sample JSON: {e}"))
}

/// CSV with `# key=value` metadata lines and `shot,z_a,z_b,phi_cn` rows.
pub fn write_sample_csv<W: Write>(s: &EllipseSample, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# n_atoms_a={}", s.n_atoms_a)?;
    writeln!(w, "# n_atoms_b={}", s.n_atoms_b)?;
    writeln!(w, "# true_dphi={}", fmt_f64(s.true_dphi))?;
    writeln!(w, "# seed={}", s.seed)?;
    writeln!(w, "# stream={}", s.stream)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["shot", "z_a", "z_b", "phi_cn"])?;
    for (j, p) in s.points.iter().enumerate() {
        let phi = s.phase_record.as_ref().map(|r| fmt_f64(r[j])).unwrap_or_default();
        out.write_record([j.to_string(), fmt_f64(p[0]), fmt_f64(p[1]), phi])?;
    }
    out.flush()
}

pub fn read_sample_csv<R: Read>(mut r: R) -> Result<EllipseSample, String> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(|e| e.to_string())?;
    let mut meta = std::collections::HashMap::new();
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        if let Some((k, v)) = line.trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    fn get<T: std::str::FromStr>(meta: &std::collections::HashMap<String, String>, k: &str) -> Result<T, String> {
        meta.get(k).ok_or_else(|| format!("missing metadata {k}"))?.parse().map_err(|_| format!("bad metadata {k}"))
    }
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut points = Vec::new();
    let mut phases = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| -> Result<f64, String> { rec.get(i).unwrap_or("").parse().map_err(|_| format!("bad number in row {}", points.len())) };
        points.push([f(1)?, f(2)?]);
        match rec.get(3) {
            Some(p) if !p.is_empty() => phases.push(p.parse::<f64>().map_err(|_| "bad phase".to_string())?),
            _ => {}
        }
    }
    let phase_record = match phases.len() {
        0 => None,
        n if n == points.len() => Some(phases),
        _ => return Err("phase column is only partly filled".to_string()),
    };
    Ok(EllipseSample {
        n_atoms_a: get(&meta, "n_atoms_a")?,
        n_atoms_b: get(&meta, "n_atoms_b")?,
        true_dphi: get(&meta, "true_dphi")?,
        seed: get(&meta, "seed")?,
        stream: get(&meta, "stream")?,
        points,
        phase_record,
    })
}

/// Reads a sample from `.json` or CSV depending on the extension.
pub fn read_sample_file(path: &Path) -> Result<EllipseSample, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    if path.extension().is_some_and(|x| x == "json") {
        sample_from_json(&text)
    } else {
        read_sample_csv(text.as_bytes())
    }
}
