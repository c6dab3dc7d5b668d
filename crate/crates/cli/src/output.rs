//! Tabular output: CSV (17 significant digits, LF) or JSON with a meta record.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_nan() => "nan".into(),
            Cell::Float(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Str(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(i) => json!(i),
            Cell::Float(x) if x.is_finite() => json!(x),
            Cell::Float(x) => json!(Cell::Float(*x).to_csv()),
            Cell::Str(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Str(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Str(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        Cell::Float(x.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub struct Meta {
    pub seed: u64,
    pub flags: Vec<String>,
}

pub fn render(table: &Table, format: Format, meta: &Meta) -> io::Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(&table.header)?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::to_csv))?;
            }
            w.into_inner().map_err(|e| io::Error::other(e.to_string()))
        }
        Format::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|row| {
                    let mut m = Map::new();
                    for (k, c) in table.header.iter().zip(row) {
                        m.insert((*k).to_string(), c.to_json());
                    }
                    Value::Object(m)
                })
                .collect();
            let doc = json!({
                "meta": {
                    "version": env!("CARGO_PKG_VERSION"),
                    "seed": meta.seed,
                    "flags": meta.flags,
                },
                "rows": rows,
            });
            let mut out = serde_json::to_vec_pretty(&doc)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

pub fn emit(bytes: &[u8], out: Option<&Path>) -> io::Result<()> {
    match out {
        Some(path) => File::create(path)?.write_all(bytes),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(bytes)?;
            lock.flush()
        }
    }
}
