//! Plain CSV tables of floats and JSON files.
//!
//! Floats are written with 17 significant digits so that a value read back
//! is bit-identical to the one written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `header` and then one row per entry of `rows`.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt_f64).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Columns written one after another, all of equal length.
pub fn write_columns(path: &Path, header: &[&str], cols: &[&[f64]]) -> Result<()> {
    let n = cols.first().map_or(0, |c| c.len());
    if cols.iter().any(|c| c.len() != n) || cols.len() != header.len() {
        return Err(Error::GridMismatch(format!(
            "{}: columns of unequal length",
            path.display()
        )));
    }
    write_csv(
        path,
        header,
        (0..n).map(|i| cols.iter().map(|c| c[i]).collect()),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Streams a CSV of floats: `on_header` sees the header, `on_row` each
/// data row. Errors name the 1-based line.
fn scan_csv(
    path: &Path,
    on_header: impl FnOnce(&[String]) -> Result<()>,
    mut on_row: impl FnMut(&[f64]) -> Result<()>,
) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let mut lines = BufReader::new(file).lines();
    let header: Vec<String> = match lines.next() {
        Some(l) => l
            .map_err(|e| Error::io(path, e))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect(),
        None => {
            return Err(Error::Parse {
                path: shown,
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    on_header(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        row.clear();
        for (j, f) in line.split(',').enumerate() {
            row.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: shown.clone(),
                line: line_no,
                message: format!("column {}: `{}` is not a number", j + 1, f.trim()),
            })?);
        }
        if row.len() != header.len() {
            return Err(Error::Parse {
                path: shown,
                line: line_no,
                message: format!("{} fields, header has {}", row.len(), header.len()),
            });
        }
        on_row(&row)?;
    }
    Ok(header)
}

/// Reads a header line and rows of floats. Errors name the 1-based line.
pub fn read_csv(path: &Path) -> Result<Table> {
    let mut rows = Vec::new();
    let header = scan_csv(
        path,
        |_| Ok(()),
        |r| {
            rows.push(r.to_vec());
            Ok(())
        },
    )?;
    Ok(Table { header, rows })
}

/// Reads one named column without holding the rest of the table.
pub fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let index = std::cell::Cell::new(0);
    let mut out = Vec::new();
    scan_csv(
        path,
        |h| {
            let i = h
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    message: format!("no column `{name}`"),
                })?;
            index.set(i);
            Ok(())
        },
        |r| {
            out.push(r[index.get()]);
            Ok(())
        },
    )?;
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// 64-bit FNV-1a, used to fingerprint configurations.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let vals = [0.1, -1.0 / 3.0, 6.02214076e23, 5e-324, 0.0];
        write_columns(&p, &["a", "b"], &[&vals, &vals]).unwrap();
        let t = read_csv(&p).unwrap();
        assert_eq!(t.column("b").unwrap(), vals.to_vec());
    }

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        std::fs::write(&p, "t,x\n0,1\n1,oops\n").unwrap();
        match read_csv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
