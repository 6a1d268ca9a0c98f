//! CSV exports for plotting elsewhere.

use std::path::Path;

use super::{Histogram, Projection, SparsityReport};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// `bin_lo,bin_hi,count,density`, one row per bin.
pub fn write_histogram_csv(path: impl AsRef<Path>, h: &Histogram) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["bin_lo", "bin_hi", "count", "density"])
        .map_err(|e| csv_err(path, e))?;
    for (i, (&count, density)) in h.counts.iter().zip(h.density()).enumerate() {
        w.write_record([
            h.bin_edges[i].to_string(),
            h.bin_edges[i + 1].to_string(),
            count.to_string(),
            density.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`write_histogram_csv`] back into edges and counts.
pub fn read_histogram_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<u64>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut edges = Vec::new();
    let mut counts = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: msg.to_string(),
        };
        let lo: f64 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bin_lo"))?;
        let hi: f64 = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bin_hi"))?;
        let c: u64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("count"))?;
        if edges.is_empty() {
            edges.push(lo);
        }
        edges.push(hi);
        counts.push(c);
    }
    Ok((edges, counts))
}

/// `x,y,label` per row; the label column is empty for unlabeled data.
pub fn write_projection_csv(path: impl AsRef<Path>, p: &Projection) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["x", "y", "label"]).map_err(|e| csv_err(path, e))?;
    for r in 0..p.coords.rows() {
        let label = p.labels.as_ref().map(|l| l[r].to_string()).unwrap_or_default();
        w.write_record([p.coords.get(r, 0).to_string(), p.coords.get(r, 1).to_string(), label])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Raw matrix with header `label,c0,...` for external embedding tools.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix, labels: Option<&[u32]>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..m.cols()).map(|c| format!("c{c}")))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (r, row) in m.iter_rows().enumerate() {
        let label = labels.map(|l| l[r].to_string()).unwrap_or_default();
        let rec: Vec<String> = std::iter::once(label).chain(row.iter().map(f64::to_string)).collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// `layer,count,tau,fraction_near_zero,mean_abs`.
pub fn write_sparsity_csv(path: impl AsRef<Path>, report: &SparsityReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["layer", "count", "tau", "fraction_near_zero", "mean_abs"])
        .map_err(|e| csv_err(path, e))?;
    for l in &report.layers {
        w.write_record([
            l.layer.clone(),
            l.count.to_string(),
            report.tau.to_string(),
            l.fraction_near_zero.to_string(),
            l.mean_abs.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}
