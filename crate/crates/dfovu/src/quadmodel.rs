//! Second-order approximation: the `2n+1`-point stencil, the
//! minimum-Frobenius-norm quadratic interpolant per subfunction, and the
//! resulting approximate U-Hessian `U' H U`.
//!
//! For the fixed `x +/- eps e_k` stencil the minimum-Frobenius interpolant is
//! closed-form: in center-shifted coordinates the Hessian is the diagonal of
//! second central differences, the off-diagonal entries being unconstrained
//! and hence zeroed by Frobenius minimality.

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;
use crate::greybox::{EvalRecord, Oracle};

/// The `2n+1`-point stencil `[x, x+eps e_1, x-eps e_1, ..., x+eps e_n, x-eps e_n]`.
#[derive(Debug, Clone)]
pub struct QuadStencil {
    pub center: DVector<f64>,
    pub epsilon: f64,
    pub points: Vec<DVector<f64>>,
}

/// A quadratic interpolant `q(z) = 1/2 z'Hz + D'z + C` in original coordinates.
#[derive(Debug, Clone)]
pub struct HessianFit {
    pub h: DMatrix<f64>,
    pub d: DVector<f64>,
    pub c: f64,
}

impl QuadStencil {
    pub fn new(center: &DVector<f64>, epsilon: f64) -> Result<Self, SolverError> {
        if epsilon <= 0.0 {
            return Err(SolverError::InvalidArgument(format!(
                "stencil diameter must be positive, got {epsilon}"
            )));
        }
        let n = center.len();
        let mut points = Vec::with_capacity(2 * n + 1);
        points.push(center.clone());
        for k in 0..n {
            let mut p = center.clone();
            p[k] += epsilon;
            points.push(p);
            let mut m = center.clone();
            m[k] -= epsilon;
            points.push(m);
        }
        Ok(QuadStencil {
            center: center.clone(),
            epsilon,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl HessianFit {
    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.h * z).dot(z) + self.d.dot(z) + self.c
    }
}

/// Minimum-Frobenius-norm quadratic interpolant of the `2n+1` values over the
/// stencil, returned in original coordinates.  `vals` must follow stencil
/// point order (center, then `+k`, `-k` pairs).
pub fn min_frobenius_fit(
    stencil: &QuadStencil,
    vals: &DVector<f64>,
) -> Result<HessianFit, SolverError> {
    let n = stencil.center.len();
    if vals.len() != 2 * n + 1 {
        return Err(SolverError::DimensionMismatch {
            expected: 2 * n + 1,
            got: vals.len(),
        });
    }
    let eps = stencil.epsilon;
    let v0 = vals[0];
    let mut hdiag = DVector::zeros(n);
    let mut d_shift = DVector::zeros(n);
    for k in 0..n {
        let vp = vals[1 + 2 * k];
        let vm = vals[2 + 2 * k];
        hdiag[k] = (vp + vm - 2.0 * v0) / (eps * eps);
        d_shift[k] = (vp - vm) / (2.0 * eps);
    }
    let h = DMatrix::from_diagonal(&hdiag);
    // shift q(y) = 1/2 y'Hy + d'y + v0, y = z - c, back to z coordinates
    let c = &stencil.center;
    let hc = &h * c;
    let d = &d_shift - &hc;
    let cc = v0 - d_shift.dot(c) + 0.5 * hc.dot(c);
    Ok(HessianFit { h, d, c: cc })
}

/// Fit every active subfunction over the `2n+1` stencil at `x` (center reused
/// from `cached_center` when bit-identical).  Returns the fits in `active`
/// order together with the center evaluation.
pub fn active_fits(
    oracle: &Oracle,
    x: &DVector<f64>,
    epsilon: f64,
    active: &[usize],
    cached_center: Option<&EvalRecord>,
) -> Result<(Vec<HessianFit>, EvalRecord), SolverError> {
    assert!(!active.is_empty(), "active set must be nonempty");
    let n = x.len();
    let stencil = QuadStencil::new(x, epsilon)?;
    let center = match cached_center {
        Some(rec) if rec.x == *x => rec.clone(),
        _ => oracle.evaluate(x)?,
    };
    let offsets: Vec<EvalRecord> = stencil.points[1..]
        .iter()
        .map(|p| oracle.evaluate(p))
        .collect::<Result<_, _>>()?;

    let fits = active
        .iter()
        .map(|&i| {
            let vals = DVector::from_iterator(
                2 * n + 1,
                std::iter::once(center.values[i]).chain(offsets.iter().map(|r| r.values[i])),
            );
            min_frobenius_fit(&stencil, &vals)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((fits, center))
}

/// Like [`active_fits`], but the active set is the union of the soft-threshold
/// active sets over all `2n+1` stencil points: a subfunction that attains the
/// max anywhere on the stencil shapes `f` within the sampling radius and must
/// not be dropped from the local model.  Returns the fitted indices, fits and
/// the center evaluation.
pub fn stencil_active_fits(
    oracle: &Oracle,
    x: &DVector<f64>,
    epsilon: f64,
    cached_center: Option<&EvalRecord>,
) -> Result<(Vec<usize>, Vec<HessianFit>, EvalRecord), SolverError> {
    let n = x.len();
    let stencil = QuadStencil::new(x, epsilon)?;
    let center = match cached_center {
        Some(rec) if rec.x == *x => rec.clone(),
        _ => oracle.evaluate(x)?,
    };
    let offsets: Vec<EvalRecord> = stencil.points[1..]
        .iter()
        .map(|p| oracle.evaluate(p))
        .collect::<Result<_, _>>()?;

    let m = center.values.len();
    let mut seen = vec![false; m];
    for rec in std::iter::once(&center).chain(offsets.iter()) {
        for &i in &rec.active {
            seen[i] = true;
        }
    }
    let active: Vec<usize> = (0..m).filter(|&i| seen[i]).collect();
    let fits = active
        .iter()
        .map(|&i| {
            let vals = DVector::from_iterator(
                2 * n + 1,
                std::iter::once(center.values[i]).chain(offsets.iter().map(|r| r.values[i])),
            );
            min_frobenius_fit(&stencil, &vals)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((active, fits, center))
}

/// Approximate U-Hessian at `x`: evaluates the oracle over the `2n+1` stencil
/// (center reused from `cached_center` when bit-identical), fits each active
/// subfunction, averages the fitted Hessians and returns the symmetrized
/// `U' H U`.
pub fn u_hessian(
    oracle: &Oracle,
    x: &DVector<f64>,
    epsilon: f64,
    active: &[usize],
    u: &DMatrix<f64>,
    cached_center: Option<&EvalRecord>,
) -> Result<DMatrix<f64>, SolverError> {
    let (fits, _) = active_fits(oracle, x, epsilon, active, cached_center)?;
    Ok(project_u_hessian(&fits, u))
}

/// Average the fitted Hessians and project: symmetrized `U' H U`.
pub fn project_u_hessian(fits: &[HessianFit], u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let mut h_avg = DMatrix::zeros(n, n);
    for fit in fits {
        h_avg += &fit.h;
    }
    h_avg /= fits.len() as f64;
    let hu = u.transpose() * h_avg * u;
    0.5 * (&hu + hu.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greybox::{Oracle, ProblemSpec, Quad};
    use approx::assert_relative_eq;

    #[test]
    fn stencil_shape() {
        let s = QuadStencil::new(&DVector::zeros(3), 0.1).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s.points[0], DVector::zeros(3));
        assert_relative_eq!(s.points[1][0], 0.1);
        assert_relative_eq!(s.points[2][0], -0.1);
    }

    #[test]
    fn diagonal_quadratic_exact_at_origin() {
        let d = [2.0, 5.0, 0.5];
        let f = |z: &DVector<f64>| 0.5 * (0..3).map(|k| d[k] * z[k] * z[k]).sum::<f64>();
        let s = QuadStencil::new(&DVector::zeros(3), 0.1).unwrap();
        let vals = DVector::from_iterator(7, s.points.iter().map(&f));
        let fit = min_frobenius_fit(&s, &vals).unwrap();
        for k in 0..3 {
            assert_relative_eq!(fit.h[(k, k)], d[k], epsilon = 1e-10);
        }
        assert_relative_eq!(fit.d.norm(), 0.0, epsilon = 1e-10);
        assert_relative_eq!(fit.c, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dense_quadratic_recovers_diagonal() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, -0.5, 1.0, 3.0, 0.2, -0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.3]);
        let f = |z: &DVector<f64>| 0.5 * (&h * z).dot(z) + b.dot(z);
        let center = DVector::from_vec(vec![0.4, -0.7, 1.1]);
        let s = QuadStencil::new(&center, 0.05).unwrap();
        let vals = DVector::from_iterator(7, s.points.iter().map(&f));
        let fit = min_frobenius_fit(&s, &vals).unwrap();
        for k in 0..3 {
            assert_relative_eq!(fit.h[(k, k)], h[(k, k)], epsilon = 1e-8);
            for l in 0..3 {
                if l != k {
                    assert_relative_eq!(fit.h[(k, l)], 0.0, epsilon = 1e-10);
                }
            }
        }
        // interpolation at all stencil points
        for (j, p) in s.points.iter().enumerate() {
            let r = (fit.eval(p) - vals[j]).abs();
            assert!(r <= 1e-8 * (1.0 + vals[j].abs()), "residual {r} at point {j}");
        }
    }

    #[test]
    fn u_hessian_single_quadratic_identity_u() {
        let d = DVector::from_vec(vec![2.0, 5.0]);
        let spec = ProblemSpec {
            n: 2,
            m: 1,
            quads: vec![Quad {
                h: DMatrix::from_diagonal(&d),
                b: DVector::zeros(2),
            }],
            known_opt_value: Some(0.0),
            known_opt_point: None,
            known_dim_v: Some(0),
            convex: true,
            seed: None,
        };
        let oracle = Oracle::new(&spec);
        let u = DMatrix::identity(2, 2);
        let h = u_hessian(&oracle, &DVector::zeros(2), 0.1, &[0], &u, None).unwrap();
        assert_relative_eq!(h[(0, 0)], 2.0, epsilon = 1e-9);
        assert_relative_eq!(h[(1, 1)], 5.0, epsilon = 1e-9);
        assert_eq!(oracle.calls(), 5);
    }

    #[test]
    fn u_hessian_kinked_function() {
        // f(x) = max(x1, -x1) + 1/2 x2^2: both pieces have Hessian diag(0, 1);
        // with U = e2 the U-Hessian is [1].
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let spec = ProblemSpec {
            n: 2,
            m: 2,
            quads: vec![
                Quad {
                    h: h.clone(),
                    b: e1.clone(),
                },
                Quad { h, b: -e1 },
            ],
            known_opt_value: Some(0.0),
            known_opt_point: Some(DVector::zeros(2)),
            known_dim_v: Some(1),
            convex: true,
            seed: None,
        };
        let oracle = Oracle::new(&spec);
        let u = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let hu = u_hessian(&oracle, &DVector::zeros(2), 0.01, &[0, 1], &u, None).unwrap();
        assert_eq!(hu.nrows(), 1);
        assert_relative_eq!(hu[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn center_caching_saves_one_call() {
        let spec = crate::greybox::generate_random(4, 2, 3, true).unwrap();
        let oracle = Oracle::new(&spec);
        let x = DVector::from_element(4, 0.2);
        let rec = oracle.evaluate(&x).unwrap();
        let before = oracle.calls();
        let u = DMatrix::identity(4, 4);
        let _ = u_hessian(&oracle, &x, 0.05, &rec.active, &u, Some(&rec)).unwrap();
        assert_eq!(oracle.calls() - before, 8); // 2n, center reused
    }

    #[test]
    fn output_symmetric_to_last_bit() {
        let spec = crate::greybox::generate_random(5, 3, 9, true).unwrap();
        let oracle = Oracle::new(&spec);
        let x = DVector::from_element(5, 0.1);
        let rec = oracle.evaluate(&x).unwrap();
        let u = DMatrix::identity(5, 5);
        let h = u_hessian(&oracle, &x, 0.01, &rec.active, &u, Some(&rec)).unwrap();
        assert_eq!((&h - h.transpose()).abs().max(), 0.0);
    }
}
