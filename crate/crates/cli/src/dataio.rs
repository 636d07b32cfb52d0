//! File formats: CSV tables with round-trip-safe numbers, observation
//! ingestion for each space kind, and JSONL streams of covariate/label
//! pairs.

use std::collections::HashMap;
use std::path::Path;

use predbayes_core::{Point, SpaceKind};

use crate::context::{config_err, io_ctx, CliResult};

/// 17 significant digits: enough for `f64` values to survive a
/// write/parse round trip bit-exactly.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// CSV writing
// ---------------------------------------------------------------------------

/// Accumulates a CSV table in memory; flushing the finished string in one
/// write keeps output files atomic at the byte level.
pub struct CsvBuilder {
    buf: String,
    columns: usize,
}

impl CsvBuilder {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push('\n');
        CsvBuilder { buf, columns: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns, "ragged CSV row");
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Column names for one observation of the given space.
pub fn value_columns(space: &SpaceKind) -> Vec<String> {
    match space {
        SpaceKind::RealVector { dim } => (0..*dim).map(|i| format!("x{i}")).collect(),
        _ => vec!["value".to_string()],
    }
}

/// Tag-valued observations have no serializable identity, so tables show
/// them as integers in order of first appearance.
pub struct TagRelabel {
    map: HashMap<Point, u64>,
}

impl TagRelabel {
    pub fn new() -> Self {
        TagRelabel { map: HashMap::new() }
    }

    fn index(&mut self, p: &Point) -> u64 {
        let next = self.map.len() as u64;
        *self.map.entry(p.clone()).or_insert(next)
    }
}

/// CSV cells for one observation: labels as plain integers, reals and
/// vector entries in 17-significant-digit form, tags relabeled.
pub fn point_cells(p: &Point, tags: &mut TagRelabel) -> Vec<String> {
    match p {
        Point::Label(v) => vec![format!("{v}")],
        Point::Real(v) => vec![fmt_sig(*v)],
        Point::Vector(v) => v.iter().map(|x| fmt_sig(*x)).collect(),
        Point::Tag(_) => vec![format!("{}", tags.index(p))],
    }
}

// ---------------------------------------------------------------------------
// CSV reading
// ---------------------------------------------------------------------------

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> CliResult<CsvTable> {
    let text = io_ctx(std::fs::read_to_string(path), path, "reading data")?;
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    let header_line = lines
        .next()
        .filter(|l| !l.trim().is_empty())
        .ok_or_else(|| config_err(format!("{}: missing CSV header", path.display())))?;
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if cells.len() != header.len() {
            return Err(config_err(format!(
                "{} line {}: {} fields where the header has {}",
                path.display(),
                i + 2,
                cells.len(),
                header.len()
            )));
        }
        rows.push(cells);
    }
    Ok(CsvTable { header, rows })
}

fn parse_real(cell: &str, path: &Path, line: usize) -> CliResult<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        config_err(format!("{} line {line}: `{cell}` is not a number", path.display()))
    })?;
    if !v.is_finite() {
        return Err(config_err(format!(
            "{} line {line}: observations must be finite, got `{cell}`",
            path.display()
        )));
    }
    Ok(v)
}

fn parse_label(cell: &str, size: u32, path: &Path, line: usize) -> CliResult<u32> {
    // Accept both "1" and "1.0"; tables written by other tools often
    // stringify integers through floats.
    let v = match cell.parse::<u32>() {
        Ok(v) => v,
        Err(_) => {
            let f = parse_real(cell, path, line)?;
            if f.fract() != 0.0 || f < 0.0 || f > u32::MAX as f64 {
                return Err(config_err(format!(
                    "{} line {line}: `{cell}` is not a category label",
                    path.display()
                )));
            }
            f as u32
        }
    };
    if v >= size {
        return Err(config_err(format!(
            "{} line {line}: label {v} outside the categorical space of size {size}",
            path.display()
        )));
    }
    Ok(v)
}

/// Read one observation per row for the given space. A `step` column, as
/// written by `simulate`, is ignored, so chain output can be fed back in.
pub fn read_points(path: &Path, space: &SpaceKind) -> CliResult<Vec<Point>> {
    if matches!(space, SpaceKind::Tagged) {
        return Err(config_err(
            "tag-valued observations cannot be read from CSV; use a categorical base \
             when conditioning on data files",
        ));
    }
    let table = read_csv(path)?;
    let value_idx: Vec<usize> = table
        .header
        .iter()
        .enumerate()
        .filter(|(_, name)| name.as_str() != "step")
        .map(|(i, _)| i)
        .collect();
    let want = match space {
        SpaceKind::RealVector { dim } => *dim,
        _ => 1,
    };
    if value_idx.len() != want {
        return Err(config_err(format!(
            "{}: expected {want} value column(s) for {}, found {} ({})",
            path.display(),
            space.describe(),
            value_idx.len(),
            table.header.join(",")
        )));
    }
    let mut out = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let line = r + 2;
        let point = match space {
            SpaceKind::Categorical { size } => {
                Point::Label(parse_label(&row[value_idx[0]], *size, path, line)?)
            }
            SpaceKind::RealLine => Point::Real(parse_real(&row[value_idx[0]], path, line)?),
            SpaceKind::RealVector { .. } => {
                let mut v = Vec::with_capacity(want);
                for &i in &value_idx {
                    v.push(parse_real(&row[i], path, line)?);
                }
                Point::Vector(v)
            }
            SpaceKind::Tagged => unreachable!("rejected above"),
        };
        out.push(point);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

/// One streamed record: covariates plus an optional binary label. Records
/// without a label are scored but not learned from.
#[derive(Debug)]
pub struct PairRecord {
    pub x: Vec<f64>,
    pub y: Option<u8>,
}

pub fn read_jsonl(path: &Path) -> CliResult<Vec<PairRecord>> {
    let text = io_ctx(std::fs::read_to_string(path), path, "reading data")?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
            config_err(format!("{} line {}: invalid JSON: {e}", path.display(), i + 1))
        })?;
        let bad = |what: &str| {
            config_err(format!(
                "{} line {}: {what}; expected {{\"x\": [numbers], \"y\": 0 or 1}}",
                path.display(),
                i + 1
            ))
        };
        let obj = value.as_object().ok_or_else(|| bad("record is not an object"))?;
        let xs = obj
            .get("x")
            .and_then(|v| v.as_array())
            .ok_or_else(|| bad("missing covariate array `x`"))?;
        let mut x = Vec::with_capacity(xs.len());
        for entry in xs {
            let v = entry.as_f64().ok_or_else(|| bad("covariates must be numbers"))?;
            if !v.is_finite() {
                return Err(bad("covariates must be finite"));
            }
            x.push(v);
        }
        let y = match obj.get("y") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => match v.as_u64() {
                Some(0) => Some(0),
                Some(1) => Some(1),
                _ => return Err(bad("label `y` must be 0 or 1")),
            },
        };
        out.push(PairRecord { x, y });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
