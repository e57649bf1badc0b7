//! Small dense helpers: operator norms and a nonnegative quadratic program
//! solved by a Lawson–Hanson active set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Spectral norm `‖A‖₂` (largest singular value).
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |m: f64, s| m.max(*s))
}

/// Minimum-norm solution of the (possibly singular) symmetric system `G x = c`.
fn pseudo_solve(g: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0, |m: f64, s| m.max(*s));
    let eps = 1e-12 * smax.max(f64::MIN_POSITIVE);
    svd.solve(c, eps)
        .unwrap_or_else(|_| DVector::zeros(c.len()))
}

/// Numerical rank with relative cutoff `1e-10`.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0, |m: f64, s| m.max(*s));
    sv.iter().filter(|s| **s > 1e-10 * smax).count()
}

/// Solves `min ½ μᵀ G μ − cᵀ μ` subject to `μ ≥ 0` for symmetric positive
/// semidefinite `G`.
///
/// Passive-set subproblems use the SVD pseudo-inverse, so a rank-deficient
/// `G` yields the minimum-norm solution on the final passive set.
pub fn nonneg_qp(g: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    let m = c.len();
    let mut mu = DVector::zeros(m);
    if m == 0 {
        return Ok(mu);
    }
    let scale = c.amax().max(g.amax()).max(1.0);
    let tol = 1e-13 * scale;
    let mut passive = vec![false; m];
    let max_outer = 10 * m + 10;

    for _ in 0..max_outer {
        let w = c - g * &mu;
        let candidate = (0..m)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate else {
            return Ok(mu);
        };
        passive[j] = true;

        for _ in 0..max_outer {
            let idx: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            let gp = DMatrix::from_fn(idx.len(), idx.len(), |r, s| g[(idx[r], idx[s])]);
            let cp = DVector::from_fn(idx.len(), |r, _| c[idx[r]]);
            let zp = pseudo_solve(&gp, &cp);
            let mut z = DVector::zeros(m);
            for (r, &i) in idx.iter().enumerate() {
                z[i] = zp[r];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                mu = z;
                break;
            }
            let mut alpha = 1.0f64;
            for &i in &idx {
                if z[i] <= 0.0 {
                    let denom = mu[i] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(mu[i] / denom);
                    }
                }
            }
            mu += (z - &mu) * alpha;
            let mut dropped = false;
            for &i in &idx {
                if mu[i] <= tol {
                    mu[i] = 0.0;
                    passive[i] = false;
                    dropped = true;
                }
            }
            if !dropped {
                // alpha hit no bound exactly; drop the most negative candidate
                if let Some(&i) = idx.iter().min_by(|&&a, &&b| mu[a].total_cmp(&mu[b])) {
                    mu[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    Err(Error::ProjectionFailure {
        iterations: max_outer,
        residual: (c - g * &mu).amax(),
    })
}

/// `min ‖E z − f‖` subject to `z ≥ 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    let et = e.transpose();
    nonneg_qp(&(&et * e), &(&et * f))
}

/// Euclidean projection of `u` onto `{q : A q ≤ b}` through the dual
/// nonnegative QP. Returns the projection and the multipliers.
pub fn project_polyhedron(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let residual = a * u - b;
    if residual.iter().all(|r| *r <= 0.0) {
        return Ok((u.clone(), DVector::zeros(b.len())));
    }
    let g = a * a.transpose();
    let mu = nonneg_qp(&g, &residual)?;
    Ok((u - a.transpose() * &mu, mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn operator_norm_of_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -5.0]);
        assert!((operator_norm(&a) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_component() {
        let e = DMatrix::identity(2, 2);
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let z = nnls(&e, &f).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn nnls_min_norm_on_duplicate_columns() {
        // two identical columns: any split z1 + z2 = 2 fits; min norm is (1, 1)
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let f = DVector::from_vec(vec![2.0]);
        let z = nnls(&e, &f).unwrap();
        assert!((&e * &z - &f).norm() < 1e-12);
        assert!(z.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn polyhedron_projection_onto_corner() {
        // x ≤ 0, y ≤ 0 from (1, 2) lands at the origin
        let a = DMatrix::identity(2, 2);
        let b = DVector::zeros(2);
        let (p, mu) = project_polyhedron(&a, &b, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(p.norm() < 1e-14);
        assert_eq!(mu.as_slice(), &[1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn nnls_satisfies_kkt(
            entries in proptest::collection::vec(-3.0f64..3.0, 12),
            rhs in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let e = DMatrix::from_row_slice(4, 3, &entries);
            let f = DVector::from_vec(rhs);
            let z = nnls(&e, &f).unwrap();
            let grad = e.transpose() * (&e * &z - &f);
            for i in 0..3 {
                prop_assert!(z[i] >= 0.0);
                prop_assert!(grad[i] >= -1e-9);
                prop_assert!((z[i] * grad[i]).abs() <= 1e-9);
            }
        }
    }
}
