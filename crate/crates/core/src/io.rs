//! CSV and binary serialization of distributions and Wigner fields.
//!
//! CSV columns are `k1..kd[,r1..rd],W` with 17 significant digits. The binary
//! format is an 8-byte little-endian header length, a JSON header, and the
//! values as little-endian `f64`, momentum index fastest.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{QkinError, Result};
use crate::grids::{Distribution, GridKind, MomentumGrid, SpatialGrid, Statistics, WignerField};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_row(out: &mut String, cols: &[f64]) {
    for (i, c) in cols.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*c));
    }
    out.push('\n');
}

pub fn distribution_to_csv(w: &Distribution) -> String {
    let grid = w.grid();
    let d = grid.dim();
    let mut out = String::new();
    for a in 0..d {
        let _ = write!(out, "k{},", a + 1);
    }
    out.push_str("W\n");
    let mut row = vec![0.0; d + 1];
    for (i, v) in w.values().iter().enumerate() {
        row[..d].copy_from_slice(grid.node(i));
        row[d] = *v;
        csv_row(&mut out, &row);
    }
    out
}

/// Plain per-node values (for example a collision term) on a grid.
pub fn values_to_csv(grid: &MomentumGrid, name: &str, values: &[f64]) -> String {
    let d = grid.dim();
    let mut out = String::new();
    for a in 0..d {
        let _ = write!(out, "k{},", a + 1);
    }
    out.push_str(name);
    out.push('\n');
    let mut row = vec![0.0; d + 1];
    for (i, v) in values.iter().enumerate() {
        row[..d].copy_from_slice(grid.node(i));
        row[d] = *v;
        csv_row(&mut out, &row);
    }
    out
}

pub fn wigner_to_csv(f: &WignerField) -> String {
    let grid = f.grid();
    let sp = f.spatial();
    let d = grid.dim();
    let dr = sp.dim();
    let mut out = String::new();
    for a in 0..d {
        let _ = write!(out, "k{},", a + 1);
    }
    for a in 0..dr {
        let _ = write!(out, "r{},", a + 1);
    }
    out.push_str("W\n");
    let nk = grid.len();
    let mut row = vec![0.0; d + dr + 1];
    for c in 0..sp.cells() {
        let r = sp.center(c);
        for i in 0..nk {
            row[..d].copy_from_slice(grid.node(i));
            row[d..d + dr].copy_from_slice(&r);
            row[d + dr] = f.values()[c * nk + i];
            csv_row(&mut out, &row);
        }
    }
    out
}

fn parse_rows(reader: impl BufRead) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| QkinError::Format("empty CSV".into()))??;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| QkinError::Format(format!("line {}: {e}", ln + 2)))?;
        if row.len() != names.len() {
            return Err(QkinError::Format(format!(
                "line {}: expected {} columns, found {}",
                ln + 2,
                names.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok((names, rows))
}

/// Reconstructs the grid from the node coordinates of a distribution CSV.
pub fn distribution_from_csv(reader: impl BufRead, stats: Statistics) -> Result<Distribution> {
    let (names, rows) = parse_rows(reader)?;
    let d = names.len().saturating_sub(1);
    if d == 0 || d > 3 || names.iter().take(d).enumerate().any(|(a, n)| *n != format!("k{}", a + 1)) {
        return Err(QkinError::Format(format!(
            "expected header k1..kd,W, found {}",
            names.join(",")
        )));
    }
    let grid = infer_grid(&rows, d)?;
    let mut values = vec![f64::NAN; grid.len()];
    for row in &rows {
        let i = locate(&grid, &row[..d])?;
        values[i] = row[d];
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(QkinError::Format(format!("node {i} missing from CSV")));
    }
    Distribution::new(Arc::new(grid), values, stats)
}

fn infer_grid(rows: &[Vec<f64>], d: usize) -> Result<MomentumGrid> {
    let mut axis: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    axis.sort_by(|a, b| a.total_cmp(b));
    axis.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let n = axis.len();
    if n < 2 || n.pow(d as u32) != rows.len() {
        return Err(QkinError::Format(format!(
            "{} rows do not form a regular {d}-dimensional product grid",
            rows.len()
        )));
    }
    let h = (axis[n - 1] - axis[0]) / (n - 1) as f64;
    let torus_h = 2.0 * std::f64::consts::PI / n as f64;
    let grid = if (axis[0] + std::f64::consts::PI).abs() < 1e-9 && (h - torus_h).abs() < 1e-9 {
        MomentumGrid::torus(d, n)?
    } else {
        MomentumGrid::boxed(d, n, axis[n - 1] + 0.5 * h)?
    };
    if grid.kind() == GridKind::BoxUniform && (axis[0] + grid.half_width() - 0.5 * h).abs() > 1e-9 {
        return Err(QkinError::Format("box grid is not symmetric about 0".into()));
    }
    Ok(grid)
}

fn locate(grid: &MomentumGrid, k: &[f64]) -> Result<usize> {
    let axis = grid.axis();
    let h = axis[1] - axis[0];
    let mut idx = [0usize; 3];
    for (a, &x) in k.iter().enumerate() {
        let j = ((x - axis[0]) / h).round();
        if j < 0.0 || j as usize >= axis.len() || (axis[j as usize] - x).abs() > 1e-9 {
            return Err(QkinError::Format(format!("coordinate {x} is not a grid node")));
        }
        idx[a] = j as usize;
    }
    Ok(grid.flat_index(&idx[..k.len()]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridHeader {
    kind: GridKind,
    dim: usize,
    n: usize,
    half_width: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BinaryHeader {
    format: String,
    version: u32,
    field: String,
    grid: GridHeader,
    spatial: Option<SpatialGrid>,
    statistics: Statistics,
    count: usize,
    dtype: String,
    layout: String,
}

fn grid_header(g: &MomentumGrid) -> GridHeader {
    GridHeader {
        kind: g.kind(),
        dim: g.dim(),
        n: g.n(),
        half_width: g.half_width(),
    }
}

fn write_binary(mut out: impl Write, header: &BinaryHeader, values: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| QkinError::Format(e.to_string()))?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_binary(mut input: impl Read) -> Result<(BinaryHeader, Vec<f64>)> {
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(QkinError::Format(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: BinaryHeader =
        serde_json::from_slice(&json).map_err(|e| QkinError::Format(e.to_string()))?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != header.count * 8 {
        return Err(QkinError::Format(format!(
            "payload has {} bytes, header declares {} values",
            payload.len(),
            header.count
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

fn header_for(field: &str, g: &MomentumGrid, spatial: Option<SpatialGrid>, stats: Statistics, count: usize) -> BinaryHeader {
    BinaryHeader {
        format: "qkin-field".into(),
        version: 1,
        field: field.into(),
        grid: grid_header(g),
        spatial,
        statistics: stats,
        count,
        dtype: "f64-le".into(),
        layout: "row-major, momentum index fastest".into(),
    }
}

pub fn write_distribution_binary(out: impl Write, w: &Distribution) -> Result<()> {
    let h = header_for("distribution", w.grid(), None, w.statistics(), w.values().len());
    write_binary(out, &h, w.values())
}

pub fn write_wigner_binary(out: impl Write, f: &WignerField) -> Result<()> {
    let h = header_for(
        "wigner",
        f.grid(),
        Some(f.spatial().clone()),
        f.statistics(),
        f.values().len(),
    );
    write_binary(out, &h, f.values())
}

fn rebuild_grid(h: &GridHeader) -> Result<MomentumGrid> {
    match h.kind {
        GridKind::TorusUniform => MomentumGrid::torus(h.dim, h.n),
        GridKind::BoxUniform => MomentumGrid::boxed(h.dim, h.n, h.half_width),
    }
}

pub fn read_distribution_binary(input: impl Read) -> Result<Distribution> {
    let (h, values) = read_binary(input)?;
    if h.field != "distribution" {
        return Err(QkinError::Format(format!("expected a distribution, found {}", h.field)));
    }
    Distribution::new(Arc::new(rebuild_grid(&h.grid)?), values, h.statistics)
}

pub fn read_wigner_binary(input: impl Read) -> Result<WignerField> {
    let (h, values) = read_binary(input)?;
    let spatial = match (h.field.as_str(), h.spatial) {
        ("wigner", Some(s)) => s,
        _ => return Err(QkinError::Format("expected a Wigner field".into())),
    };
    WignerField::new(spatial, Arc::new(rebuild_grid(&h.grid)?), values, h.statistics)
}
