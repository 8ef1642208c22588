//! CSV ingestion.
//!
//! Features are columns `x1..xp`. Responses are `y1..yd` (Euclidean),
//! `y1,y2,y3` (sphere) or `m11,m12,..,mdd`, the row-major upper triangle of
//! an SPD matrix. An optional `id` column names query rows.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use frechet_core::metric_space::MetricPoint;
use nalgebra::DMatrix;

use crate::output::Cased;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResponseKind {
    Euclidean,
    Sphere,
    Spd,
}

/// Rows of one file with their 1-based line numbers.
struct Table {
    name: String,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot open {name}"))?;
    let headers: Vec<String> =
        reader.headers().with_context(|| format!("{name}: cannot read header"))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("{name}: malformed CSV"))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(Table { name, headers, rows })
}

/// Columns named `<prefix>1..<prefix>p`, in index order.
fn numbered_columns(headers: &[String], prefix: &str) -> Result<Vec<usize>> {
    let mut found = BTreeMap::new();
    for (col, h) in headers.iter().enumerate() {
        if let Some(i) = h.strip_prefix(prefix).and_then(|rest| rest.parse::<usize>().ok()) {
            if i == 0 || found.insert(i, col).is_some() {
                bail!("line 1: bad or repeated column {h:?}");
            }
        }
    }
    let p = found.len();
    if let Some((&last, _)) = found.iter().next_back() {
        if last != p {
            bail!("line 1: columns {prefix}1..{prefix}{last} have gaps; expected {prefix}1..{prefix}{p}");
        }
    }
    Ok(found.into_values().collect())
}

/// SPD columns `mij` (i ≤ j), returned with the matrix size.
fn spd_columns(headers: &[String]) -> Result<(usize, Vec<(usize, usize, usize)>)> {
    let mut cols = Vec::new();
    for (col, h) in headers.iter().enumerate() {
        let Some(rest) = h.strip_prefix('m') else { continue };
        let digits: Vec<u32> = rest.chars().filter_map(|c| c.to_digit(10)).collect();
        if digits.len() != 2 || rest.len() != 2 || digits[0] == 0 || digits[0] > digits[1] {
            bail!("line 1: column {h:?} is not of the form mij with 1 <= i <= j <= 9");
        }
        cols.push((digits[0] as usize - 1, digits[1] as usize - 1, col));
    }
    let d = cols.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if d == 0 || cols.len() != d * (d + 1) / 2 {
        bail!("line 1: SPD responses need all columns mij for 1 <= i <= j <= d");
    }
    Ok((d, cols))
}

fn number(table: &Table, line: u64, col: usize, raw: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => bail!("{} line {line}: column {}: {raw:?} is not a finite number", table.name, table.headers[col]),
    }
}

fn check_known(table: &Table, known: &[usize]) -> Result<()> {
    for (col, h) in table.headers.iter().enumerate() {
        if !known.contains(&col) && h != "id" {
            bail!("{} line 1: unexpected column {h:?}", table.name);
        }
    }
    Ok(())
}

fn features_of(table: &Table, cols: &[usize], line: u64, row: &[String]) -> Result<Vec<f64>> {
    cols.iter().map(|&c| number(table, line, c, &row[c])).collect()
}

fn feature_columns(table: &Table) -> Result<Vec<usize>> {
    let cols = numbered_columns(&table.headers, "x").with_context(|| table.name.clone())?;
    if cols.is_empty() {
        bail!("{} line 1: no feature columns x1..xp", table.name);
    }
    Ok(cols)
}

pub struct Labeled {
    pub features: Vec<Vec<f64>>,
    pub responses: Vec<MetricPoint>,
}

/// Labeled training data: features plus responses of `kind`.
pub fn read_labeled(path: &Path, kind: ResponseKind) -> Result<Labeled> {
    let table = read_table(path)?;
    let xcols = feature_columns(&table)?;
    let (ycols, spd) = match kind {
        ResponseKind::Spd => (Vec::new(), Some(spd_columns(&table.headers).with_context(|| table.name.clone())?)),
        _ => (numbered_columns(&table.headers, "y").with_context(|| table.name.clone())?, None),
    };
    match kind {
        ResponseKind::Euclidean if ycols.is_empty() => bail!("{} line 1: no response columns y1..yd", table.name),
        ResponseKind::Sphere if ycols.len() != 3 => {
            bail!("{} line 1: sphere responses need exactly y1,y2,y3", table.name)
        }
        _ => {}
    }
    let mut known = xcols.clone();
    known.extend(&ycols);
    if let Some((_, cols)) = &spd {
        known.extend(cols.iter().map(|c| c.2));
    }
    check_known(&table, &known)?;

    let mut features = Vec::with_capacity(table.rows.len());
    let mut responses = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        features.push(features_of(&table, &xcols, *line, row)?);
        let point = match &spd {
            Some((d, cols)) => {
                let mut m = DMatrix::zeros(*d, *d);
                for &(i, j, c) in cols {
                    let v = number(&table, *line, c, &row[c])?;
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
                MetricPoint::spd(m)
            }
            None => {
                let y: Vec<f64> = ycols.iter().map(|&c| number(&table, *line, c, &row[c])).collect::<Result<_>>()?;
                match kind {
                    ResponseKind::Sphere => MetricPoint::sphere([y[0], y[1], y[2]]),
                    _ => MetricPoint::euclidean(y),
                }
            }
        };
        let point = point.map_err(|e| {
            anyhow::anyhow!(
                "{} line {line}: invalid {} response: {}",
                table.name,
                format!("{kind:?}").to_lowercase(),
                e.cased()
            )
        })?;
        responses.push(point);
    }
    if responses.is_empty() {
        bail!("{}: no labeled rows", table.name);
    }
    Ok(Labeled { features, responses })
}

/// Feature rows with their ids (the `id` column, or the 0-based row index).
pub fn read_features(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let table = read_table(path)?;
    let xcols = feature_columns(&table)?;
    check_known(&table, &xcols)?;
    let id_col = table.headers.iter().position(|h| h == "id");
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut rows = Vec::with_capacity(table.rows.len());
    for (i, (line, row)) in table.rows.iter().enumerate() {
        rows.push(features_of(&table, &xcols, *line, row)?);
        ids.push(id_col.map_or_else(|| i.to_string(), |c| row[c].clone()));
    }
    Ok((ids, rows))
}

/// Feature columns only; any other column is ignored.
pub fn read_feature_columns(path: &Path) -> Result<Vec<Vec<f64>>> {
    let table = read_table(path)?;
    let xcols = feature_columns(&table)?;
    table.rows.iter().map(|(line, row)| features_of(&table, &xcols, *line, row)).collect()
}
