//! Numeric CSV tables: one header row, then one record per line with every
//! value written in 17 significant digits (`{:.16e}`), so that reading a file
//! and writing it again reproduces it byte for byte.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use crate::simulate::{TrainingSample, TrajectoryRow};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: cannot parse `{field}` as a number")]
    Parse { line: usize, field: String },
    #[error("line {line}: expected {expected} fields, found {got}")]
    Shape {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("unexpected header: {0}")]
    Header(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// `prefix0, prefix1, ...`
pub fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

impl Table {
    pub fn new(header: impl IntoIterator<Item = String>) -> Self {
        Table {
            header: header.into_iter().collect(),
            rows: Vec::new(),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), TableError> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|&v| format_value(v)))?;
        }
        out.flush().map_err(|e| TableError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    pub fn read<R: Read>(r: R) -> Result<Self, TableError> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != header.len() {
                return Err(TableError::Shape {
                    line,
                    expected: header.len(),
                    got: rec.len(),
                });
            }
            let row = rec
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| TableError::Parse {
                        line,
                        field: f.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| TableError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TableError> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| TableError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Table::read(std::io::BufReader::new(f))
    }
}

/// `t, q0.., qdot0.., aero0..` where `aero` is the applied `B2 u2`.
pub fn trajectory_table(rows: &[TrajectoryRow], n_q: usize) -> Table {
    let mut t = Table::new(
        std::iter::once("t".to_string())
            .chain(indexed("q", n_q))
            .chain(indexed("qdot", n_q))
            .chain(indexed("aero", n_q)),
    );
    for r in rows {
        let mut v = Vec::with_capacity(1 + 3 * n_q);
        v.push(r.t);
        v.extend(r.q.iter().chain(r.qdot.iter()).chain(r.aero.iter()));
        t.push(v);
    }
    t
}

/// `t, x0.., a0..` with `x = [q; q']` and `a` the extracted target.
pub fn samples_table(samples: &[TrainingSample], n_q: usize) -> Table {
    let mut t = Table::new(
        std::iter::once("t".to_string())
            .chain(indexed("x", 2 * n_q))
            .chain(indexed("a", n_q)),
    );
    for s in samples {
        let mut v = Vec::with_capacity(1 + 3 * n_q);
        v.push(s.t);
        v.extend(s.x.iter().chain(s.a.iter()));
        t.push(v);
    }
    t
}

/// Inverse of [`samples_table`].
pub fn samples_from_table(t: &Table, n_q: usize) -> Result<Vec<TrainingSample>, TableError> {
    let want: Vec<String> = std::iter::once("t".to_string())
        .chain(indexed("x", 2 * n_q))
        .chain(indexed("a", n_q))
        .collect();
    if t.header != want {
        return Err(TableError::Header(format!(
            "expected {} columns `t,x0..x{},a0..a{}`, found `{}`",
            want.len(),
            2 * n_q - 1,
            n_q - 1,
            t.header.join(",")
        )));
    }
    Ok(t.rows
        .iter()
        .map(|r| TrainingSample {
            t: r[0],
            x: DVector::from_column_slice(&r[1..1 + 2 * n_q]),
            a: DVector::from_column_slice(&r[1 + 2 * n_q..]),
        })
        .collect())
}
