mod common;

use bnc::analysis::pca_2d;
use bnc::Matrix;
use common::{bn_invariant_errors, random};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

/// Top-2 eigenpairs of the biased covariance from a dense symmetric solver.
fn eigen_oracle(x: &Matrix) -> (Vec<Vec<f64>>, [f64; 2]) {
    let (n, d) = x.shape();
    let m = DMatrix::from_fn(n, d, |r, c| x.get(r, c));
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |r, c| m[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vecs = order[..2]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (vecs, [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]])
}

/// Scales columns so the spectrum has well separated leading eigenvalues.
fn anisotropic(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut x = random(rows, cols, seed);
    for r in 0..rows {
        for c in 0..cols {
            x.set(r, c, x.get(r, c) * (cols - c) as f64 + c as f64);
        }
    }
    x
}

#[test]
fn pca_matches_dense_eigendecomposition_50x8() {
    for seed in 0..5 {
        let x = anisotropic(50, 8, seed);
        let proj = pca_2d(&x).unwrap();
        let (vecs, vals) = eigen_oracle(&x);
        let col_mean: Vec<f64> = (0..8).map(|c| (0..50).map(|r| x.get(r, c)).sum::<f64>() / 50.0).collect();
        for (j, v) in vecs.iter().enumerate() {
            assert!((proj.variances[j] - vals[j]).abs() <= 1e-6 * vals[0], "seed {seed} variance {j}");
            let ours: Vec<f64> = (0..8).map(|c| proj.components.get(j, c)).collect();
            let sign = if ours.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for (a, b) in ours.iter().zip(v) {
                assert!((a - sign * b).abs() <= 1e-6, "seed {seed} component {j}");
            }
            for r in 0..50 {
                let oracle: f64 = (0..8).map(|c| (x.get(r, c) - col_mean[c]) * sign * v[c]).sum();
                assert!((proj.coords.get(r, j) - oracle).abs() <= 1e-6, "seed {seed} row {r} axis {j}");
            }
        }
        let dot: f64 = (0..8).map(|c| proj.components.get(0, c) * proj.components.get(1, c)).sum();
        assert!(dot.abs() <= 1e-8);
    }
}

#[test]
fn bn_invariants_on_fixed_batches() {
    for seed in 0..20 {
        let e = bn_invariant_errors(16, 6, seed);
        assert!(e.mean <= 1e-9 && e.variance <= 1e-9 && e.composition <= 1e-9, "seed {seed}: {e:?}");
    }
}

proptest! {
    #[test]
    fn bn_invariants_hold(rows in 2usize..40, cols in 1usize..8, seed in any::<u64>()) {
        let e = bn_invariant_errors(rows, cols, seed);
        prop_assert!(e.mean <= 1e-9, "{:?}", e);
        prop_assert!(e.variance <= 1e-9, "{:?}", e);
        prop_assert!(e.composition <= 1e-9, "{:?}", e);
    }

    #[test]
    fn pca_components_are_orthonormal(rows in 3usize..30, cols in 2usize..6, seed in any::<u64>()) {
        let proj = pca_2d(&random(rows, cols, seed)).unwrap();
        let c = &proj.components;
        let dot = |a: usize, b: usize| (0..cols).map(|j| c.get(a, j) * c.get(b, j)).sum::<f64>();
        prop_assert!((dot(0, 0) - 1.0).abs() <= 1e-8);
        prop_assert!(proj.variances[1] == 0.0 || (dot(1, 1) - 1.0).abs() <= 1e-8);
        prop_assert!(dot(0, 1).abs() <= 1e-8);
        prop_assert!(proj.variances[0] + 1e-12 >= proj.variances[1]);
    }
}
