use serde::{Deserialize, Serialize};

use super::{tapped_activations, LayerTap};
use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::layers::EvalStats;
use crate::linalg::Matrix;
use crate::model::BncModel;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 200_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    #[default]
    Pca,
}

#[derive(Clone, Debug)]
pub struct Projection {
    /// `N×2` coordinates on the two leading principal axes.
    pub coords: Matrix,
    /// `2×C` unit component directions.
    pub components: Matrix,
    /// Variance along each component.
    pub variances: [f64; 2],
    pub labels: Option<Vec<u32>>,
}

/// PCA of the eval-mode softmax inputs of `ds`.
pub fn project_2d(
    model: &mut BncModel,
    ds: &FeatureDataset,
    method: ProjectionMethod,
    eval_stats: EvalStats,
) -> Result<Projection> {
    let act = tapped_activations(model, ds, LayerTap::SmIn, eval_stats)?;
    let ProjectionMethod::Pca = method;
    let mut proj = pca_2d(&act)?;
    proj.labels = ds.labels().map(<[u32]>::to_vec);
    Ok(proj)
}

/// Top-2 principal components of the rows of `x` by power iteration with
/// deflation on the (biased) covariance matrix. Each component is signed so
/// that its largest-magnitude loading is positive.
pub fn pca_2d(x: &Matrix) -> Result<Projection> {
    if x.rows() < 3 {
        return Err(Error::Domain(format!("projection needs at least 3 rows, got {}", x.rows())));
    }
    let (mean, _) = x.col_stats()?;
    let centered = x.sub(&Matrix::zeros(x.rows(), x.cols()).add_row(&mean)?)?;
    let mut cov = centered.transpose().matmul(&centered)?.scale(1.0 / x.rows() as f64);
    let trace: f64 = (0..cov.rows()).map(|i| cov.get(i, i)).sum();
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::Domain("degenerate projection: data has zero variance".into()));
    }
    let dim = cov.cols();

    let (v1, l1) = power_iteration(&cov, None, trace);
    for i in 0..dim {
        for j in 0..dim {
            let d = cov.get(i, j) - l1 * v1[i] * v1[j];
            cov.set(i, j, d);
        }
    }
    let (v2, l2) = if dim >= 2 {
        power_iteration(&cov, Some(&v1), trace)
    } else {
        (vec![0.0], 0.0)
    };

    let mut components = Matrix::zeros(2, dim);
    components.row_mut(0).copy_from_slice(&v1);
    if dim >= 2 {
        components.row_mut(1).copy_from_slice(&v2);
    }
    let coords = centered.matmul(&components.transpose())?;
    Ok(Projection {
        coords,
        components,
        variances: [l1, l2.max(0.0)],
        labels: None,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let d: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(against).for_each(|(a, b)| *a -= d * b);
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if a.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

/// Dominant eigenpair of symmetric `m`, optionally restricted to the
/// complement of `exclude`. Returns a zero eigenvalue and an arbitrary
/// orthogonal unit vector when `m` is negligible on that subspace.
fn power_iteration(m: &Matrix, exclude: Option<&[f64]>, scale: f64) -> (Vec<f64>, f64) {
    let dim = m.cols();
    // Fixed, non-symmetric start so no eigenvector is missed by symmetry.
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 0.1).collect();
    if let Some(e) = exclude {
        orthogonalize(&mut v, e);
    }
    normalize(&mut v);

    let apply = |v: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    };
    let negligible = scale * 1e-13;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = apply(&v);
        if let Some(e) = exclude {
            orthogonalize(&mut w, e);
        }
        if normalize(&mut w) <= negligible {
            fix_sign(&mut v);
            return (v, 0.0);
        }
        // compare up to sign
        let dot: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            w.iter_mut().for_each(|a| *a = -*a);
        }
        let diff = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = w;
        if diff < POWER_TOL {
            break;
        }
    }
    if let Some(e) = exclude {
        orthogonalize(&mut v, e);
        normalize(&mut v);
    }
    fix_sign(&mut v);
    let mv = apply(&v);
    let lambda = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
    (v, lambda)
}
