//! CSV ingestion for datasets.
//!
//! Columns are identified by header: `x1 … xP1` (matched covariates),
//! `z1 … zP2` (mismatched, proxy files only) and `y`. Row and column numbers
//! in errors are 1-based, with the header on row 1.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    X(usize),
    Z(usize),
    Y,
}

struct Layout {
    /// Source column for each matched covariate, in index order.
    x: Vec<usize>,
    z: Vec<usize>,
    y: Option<usize>,
    width: usize,
}

fn parse_error(source: &str, row: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        row,
        col,
        msg: msg.into(),
    }
}

fn role(name: &str) -> Option<Role> {
    let name = name.trim();
    if name == "y" {
        return Some(Role::Y);
    }
    let (head, digits) = name.split_at(name.len().min(1));
    let k: usize = digits.parse().ok().filter(|k| *k >= 1)?;
    match head {
        "x" => Some(Role::X(k)),
        "z" => Some(Role::Z(k)),
        _ => None,
    }
}

fn ordered(source: &str, mut cols: Vec<(usize, usize)>, prefix: char) -> Result<Vec<usize>> {
    cols.sort_unstable();
    for (expected, &(k, col)) in cols.iter().enumerate() {
        if k != expected + 1 {
            let msg = if k == expected {
                format!("duplicate column {prefix}{k}")
            } else {
                format!("expected column {prefix}{}, found {prefix}{k}", expected + 1)
            };
            return Err(parse_error(source, 1, col + 1, msg));
        }
    }
    Ok(cols.into_iter().map(|(_, col)| col).collect())
}

fn layout(source: &str, header: &csv::StringRecord) -> Result<Layout> {
    let (mut xs, mut zs, mut y) = (Vec::new(), Vec::new(), None);
    for (col, name) in header.iter().enumerate() {
        match role(name) {
            Some(Role::X(k)) => xs.push((k, col)),
            Some(Role::Z(k)) => zs.push((k, col)),
            Some(Role::Y) if y.is_none() => y = Some(col),
            Some(Role::Y) => return Err(parse_error(source, 1, col + 1, "duplicate column y")),
            None => {
                return Err(parse_error(
                    source,
                    1,
                    col + 1,
                    format!("unrecognized column `{}` (expected x<k>, z<k> or y)", name.trim()),
                ))
            }
        }
    }
    if xs.is_empty() {
        return Err(parse_error(source, 1, 1, "no matched covariate columns (x1, x2, ...)"));
    }
    Ok(Layout {
        x: ordered(source, xs, 'x')?,
        z: ordered(source, zs, 'z')?,
        y,
        width: header.len(),
    })
}

struct Table {
    layout: Layout,
    rows: Vec<Vec<f64>>,
}

fn read_table<R: Read>(reader: R, source: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_error(source, 1, 1, e.to_string()))?
        .clone();
    let layout = layout(source, &header)?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_error(source, line, 1, e.to_string()))?;
        if record.len() != layout.width {
            return Err(parse_error(
                source,
                line,
                record.len().min(layout.width) + 1,
                format!("expected {} fields, found {}", layout.width, record.len()),
            ));
        }
        let mut values = Vec::with_capacity(layout.width);
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(source, line, c + 1, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(source, line, c + 1, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(parse_error(source, 2, 1, "no data rows"));
    }
    Ok(Table { layout, rows })
}

fn gather(rows: &[Vec<f64>], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| rows[i][cols[j]])
}

/// Reads a dataset; `y` is required, `z` columns are optional.
pub fn read_dataset<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let t = read_table(reader, source)?;
    let y_col = t
        .layout
        .y
        .ok_or_else(|| parse_error(source, 1, t.layout.width + 1, "missing response column y"))?;
    let x = gather(&t.rows, &t.layout.x);
    let z = (!t.layout.z.is_empty()).then(|| gather(&t.rows, &t.layout.z));
    let y = DVector::from_iterator(t.rows.len(), t.rows.iter().map(|r| r[y_col]));
    Dataset::new(x, z, y)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(File::open(path)?, &path.display().to_string())
}

/// Reads the `x` columns of a file for prediction; a `y` column is ignored
/// and `z` columns are rejected.
pub fn read_covariates<R: Read>(reader: R, source: &str) -> Result<DMatrix<f64>> {
    let t = read_table(reader, source)?;
    if let Some(&col) = t.layout.z.first() {
        return Err(parse_error(
            source,
            1,
            col + 1,
            "prediction input must not contain z columns",
        ));
    }
    Ok(gather(&t.rows, &t.layout.x))
}

pub fn read_covariates_file(path: &Path) -> Result<DMatrix<f64>> {
    read_covariates(File::open(path)?, &path.display().to_string())
}

/// Writes a single-column CSV with header `name`.
pub fn write_column<W: Write>(out: W, name: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([name]).map_err(to_io)?;
    for v in values {
        w.write_record([v.to_string()]).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `[x | z | y]` with the standard header.
pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header: Vec<String> = (1..=data.p1()).map(|k| format!("x{k}")).collect();
    header.extend((1..=data.p2()).map(|k| format!("z{k}")));
    header.push("y".into());
    w.write_record(&header).map_err(to_io)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.x().row(i).iter().map(f64::to_string).collect();
        if let Some(z) = data.z() {
            row.extend(z.row(i).iter().map(f64::to_string));
        }
        row.push(data.y()[i].to_string());
        w.write_record(&row).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}
