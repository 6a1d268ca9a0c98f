use std::path::Path;

use super::FeatureDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Reads a small hand-made fixture with header `label,f0,...,f{D-1}`.
///
/// The label column is either filled on every row or empty on every row
/// (unlabeled). `num_classes` defaults to one more than the largest label.
pub fn read_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(1, e.to_string()))?;

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let dim = headers.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("label".to_string())
        .chain((0..dim).map(|i| format!("f{i}")))
        .collect();
    if dim == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            1,
            format!("header must be label,f0,...,f{{D-1}}, got {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    }

    let mut data = Vec::new();
    let mut labels: Vec<Option<u32>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(parse_err(line, format!("expected {} fields, got {}", dim + 1, record.len())));
        }
        let label = match &record[0] {
            "" => None,
            s => Some(
                s.parse::<u32>()
                    .map_err(|_| parse_err(line, format!("bad label '{s}'")))?,
            ),
        };
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("bad feature '{field}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature '{field}'")));
            }
            data.push(v);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    let labels = if labels.iter().all(Option::is_none) {
        None
    } else if let Some(pos) = labels.iter().position(Option::is_none) {
        return Err(parse_err(pos + 2, "missing label in a labeled file".into()));
    } else {
        Some(labels.into_iter().map(|l| l.expect("checked")).collect::<Vec<_>>())
    };
    let k = match (num_classes, &labels) {
        (Some(k), _) => k,
        (None, Some(ls)) => ls.iter().max().map_or(1, |&m| m as usize + 1),
        (None, None) => 1,
    };
    let domain = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("csv")
        .chars()
        .take(super::BNCF_NAME_LEN)
        .collect::<String>();
    FeatureDataset::new(Matrix::from_vec(n, dim, data)?, labels, k, domain)
}
