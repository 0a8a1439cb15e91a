//! Simplex stencils, simplex gradients and the first-order VU approximation:
//! approximate subgradient, V/U basis matrices and approximate U-gradient,
//! all from grey-box values over an `n+1`-point orthonormal stencil.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::SolverError;
use crate::greybox::{EvalRecord, Oracle};

/// Relative tolerance of the numerical rank decision for the V-space.
pub const RANK_TOL: f64 = 1e-8;

/// An `n+1`-point simplex stencil with orthonormal directions.
#[derive(Debug, Clone)]
pub struct SimplexStencil {
    pub center: DVector<f64>,
    pub epsilon: f64,
    /// Orthonormal direction matrix; offset point `i` is `center + epsilon * d_i`.
    pub directions: DMatrix<f64>,
    pub points: Vec<DVector<f64>>,
    /// Stencil condition number; 1 exactly for orthonormal directions.
    pub mhat_cond: f64,
}

/// First-order output: approximate subgradient, V/U bases and U-gradient.
#[derive(Debug, Clone)]
pub struct FirstOrderInfo {
    /// Almost-active indices at the stencil center (0-based).
    pub active: Vec<usize>,
    /// Approximate subgradient (mean of active simplex gradients).
    pub g_eps: DVector<f64>,
    /// Columns are differences of active simplex gradients; `n x (|active|-1)`.
    pub v: DMatrix<f64>,
    /// Orthonormal basis of the complement of `col V`; `n x (n - rank V)`.
    pub u: DMatrix<f64>,
    /// `U' g_eps`.
    pub u_grad: DVector<f64>,
}

/// Build the stencil `[x, x + eps d_1, ..., x + eps d_n]`.  Directions are the
/// canonical basis, or the columns of a seeded random orthogonal matrix.
pub fn build_stencil(
    center: &DVector<f64>,
    epsilon: f64,
    rotate_seed: Option<u64>,
) -> Result<SimplexStencil, SolverError> {
    if epsilon <= 0.0 {
        return Err(SolverError::InvalidArgument(format!(
            "stencil diameter must be positive, got {epsilon}"
        )));
    }
    let n = center.len();
    let directions = match rotate_seed {
        None => DMatrix::identity(n, n),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(n, n, |_, _| {
                rand_distr::StandardNormal.sample(&mut rng)
            });
            g.qr().q()
        }
    };
    let points = (0..n)
        .map(|i| center + epsilon * directions.column(i))
        .collect();
    Ok(SimplexStencil {
        center: center.clone(),
        epsilon,
        directions,
        points,
        mhat_cond: 1.0,
    })
}

/// Gradient of the linear interpolant of one subfunction over the stencil.
/// With orthonormal directions this is `(1/eps) * sum_i (v_i - v_0) d_i`.
pub fn simplex_gradient(
    stencil: &SimplexStencil,
    center_val: f64,
    point_vals: &DVector<f64>,
) -> DVector<f64> {
    let delta = point_vals.map(|v| (v - center_val) / stencil.epsilon);
    &stencil.directions * delta
}

/// Pivoted modified Gram-Schmidt: orthonormal basis of the column space of
/// `cols` with columns accepted while their residual norm exceeds
/// `RANK_TOL * max_col_norm`.
fn pivoted_basis(cols: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let mut residuals: Vec<DVector<f64>> = (0..cols.ncols())
        .map(|j| cols.column(j).into_owned())
        .collect();
    let max_norm = residuals
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max);
    let tol = RANK_TOL * max_norm;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    loop {
        let Some((best, norm)) = residuals
            .iter()
            .enumerate()
            .map(|(j, c)| (j, c.norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        if norm <= tol || norm == 0.0 {
            break;
        }
        let mut q = residuals.swap_remove(best);
        q /= q.norm();
        for r in residuals.iter_mut() {
            let proj = q.dot(r);
            *r -= proj * &q;
        }
        basis.push(q);
    }
    basis
}

/// Extend an orthonormal set to a full orthonormal basis of `R^n` using
/// canonical vectors; returns the added (complement) columns as a matrix.
fn orthonormal_complement(n: usize, basis: &[DVector<f64>]) -> DMatrix<f64> {
    let mut full: Vec<DVector<f64>> = basis.to_vec();
    let mut added: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        if full.len() == n {
            break;
        }
        let mut r: DVector<f64> = DVector::zeros(n);
        r[i] = 1.0;
        // two rounds of reorthogonalization
        for _ in 0..2 {
            for q in &full {
                let proj = q.dot(&r);
                r -= proj * q;
            }
        }
        let norm = r.norm();
        if norm > 1e-6 {
            r /= norm;
            full.push(r.clone());
            added.push(r);
        }
    }
    DMatrix::from_fn(n, added.len(), |i, j| added[j][i])
}

/// Orthonormal basis of the column space of `cols`, returned as matrix
/// columns (empty matrix when `cols` is numerically rank zero).
pub fn column_space_basis(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let basis = pivoted_basis(cols);
    DMatrix::from_fn(cols.nrows(), basis.len(), |i, j| basis[j][i])
}

/// Split a family of active-subfunction gradients into the VU objects:
/// mean gradient, V matrix of gradient differences and orthonormal U basis
/// of the complement of `col V`.
pub fn vu_split(grads: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = grads[0].len();
    let mut g_eps = DVector::zeros(n);
    for g in grads {
        g_eps += g;
    }
    g_eps /= grads.len() as f64;
    let v = DMatrix::from_fn(n, grads.len().saturating_sub(1), |i, j| {
        grads[j + 1][i] - grads[0][i]
    });
    let u = if v.ncols() == 0 {
        DMatrix::identity(n, n)
    } else {
        let basis = pivoted_basis(&v);
        orthonormal_complement(n, &basis)
    };
    (g_eps, v, u)
}

/// First-order approximation at `x`: evaluates the oracle over an `n+1`-point
/// stencil (the center evaluation is reused from `cached_center` when its
/// point is bit-identical to `x`), averages the active simplex gradients into
/// `g_eps`, builds the V matrix of gradient differences, and takes U as an
/// orthonormal basis of the complement of `col V`.
///
/// Returns the info together with the center evaluation record.
pub fn first_order(
    oracle: &Oracle,
    x: &DVector<f64>,
    epsilon: f64,
    rotate_seed: Option<u64>,
    cached_center: Option<&EvalRecord>,
) -> Result<(FirstOrderInfo, EvalRecord), SolverError> {
    let n = x.len();
    let stencil = build_stencil(x, epsilon, rotate_seed)?;

    let center = match cached_center {
        Some(rec) if rec.x == *x => rec.clone(),
        _ => oracle.evaluate(x)?,
    };
    let point_recs: Vec<EvalRecord> = stencil
        .points
        .iter()
        .map(|p| oracle.evaluate(p))
        .collect::<Result<_, _>>()?;

    let active = center.active.clone();
    let grads: Vec<DVector<f64>> = active
        .iter()
        .map(|&i| {
            let vals = DVector::from_iterator(n, point_recs.iter().map(|r| r.values[i]));
            simplex_gradient(&stencil, center.values[i], &vals)
        })
        .collect();

    let (g_eps, v, u) = vu_split(&grads);
    let u_grad = u.transpose() * &g_eps;

    Ok((
        FirstOrderInfo {
            active,
            g_eps,
            v,
            u,
            u_grad,
        },
        center,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greybox::{ProblemSpec, Quad};
    use approx::assert_relative_eq;

    #[test]
    fn canonical_stencil_points() {
        let s = build_stencil(&DVector::zeros(2), 0.1, None).unwrap();
        assert_relative_eq!(s.points[0][0], 0.1);
        assert_relative_eq!(s.points[0][1], 0.0);
        assert_relative_eq!(s.points[1][1], 0.1);
        assert_eq!(s.mhat_cond, 1.0);
    }

    #[test]
    fn rotated_stencil_orthonormal() {
        let c = DVector::from_vec(vec![1.0, 2.0]);
        let s = build_stencil(&c, 0.5, Some(42)).unwrap();
        for p in &s.points {
            assert_relative_eq!((p - &c).norm(), 0.5, epsilon = 1e-12);
        }
        let d1 = &s.points[0] - &c;
        let d2 = &s.points[1] - &c;
        assert_relative_eq!(d1.dot(&d2), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_epsilon_rejected() {
        assert!(build_stencil(&DVector::zeros(2), 0.0, None).is_err());
        assert!(build_stencil(&DVector::zeros(2), -1.0, None).is_err());
    }

    #[test]
    fn exact_on_linear() {
        let b = DVector::from_vec(vec![2.0, -3.0, 0.5]);
        let f = |x: &DVector<f64>| b.dot(x);
        for seed in [None, Some(7)] {
            let s = build_stencil(&DVector::from_vec(vec![0.3, -0.2, 1.0]), 1e-3, seed).unwrap();
            let vals = DVector::from_iterator(3, s.points.iter().map(&f));
            let g = simplex_gradient(&s, f(&s.center), &vals);
            assert_relative_eq!((g - &b).norm(), 0.0, epsilon = 1e-9 * b.norm());
        }
    }

    #[test]
    fn quadratic_forward_difference_error() {
        // f(x) = 1/2 x'Hx + b'x on a canonical stencil: component i of the
        // simplex gradient is (Hx + b)_i + (eps/2) H_ii.
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![-1.0, 0.5]);
        let x = DVector::from_vec(vec![0.7, -0.4]);
        let f = |y: &DVector<f64>| 0.5 * (&h * y).dot(y) + b.dot(y);
        let eps = 1e-2;
        let s = build_stencil(&x, eps, None).unwrap();
        let vals = DVector::from_iterator(2, s.points.iter().map(&f));
        let g = simplex_gradient(&s, f(&x), &vals);
        let exact = &h * &x + &b;
        for i in 0..2 {
            assert_relative_eq!(g[i], exact[i] + 0.5 * eps * h[(i, i)], epsilon = 1e-10);
        }
        // halving eps halves the error
        let s2 = build_stencil(&x, eps / 2.0, None).unwrap();
        let vals2 = DVector::from_iterator(2, s2.points.iter().map(&f));
        let g2 = simplex_gradient(&s2, f(&x), &vals2);
        let e1 = (g - &exact).norm();
        let e2 = (g2 - &exact).norm();
        assert_relative_eq!(e1 / e2, 2.0, max_relative = 1e-6);
    }

    fn abs_x1_problem() -> ProblemSpec {
        // f(x) = max(x1, -x1) on R^2
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        ProblemSpec {
            n: 2,
            m: 2,
            quads: vec![
                Quad {
                    h: DMatrix::zeros(2, 2),
                    b: e1.clone(),
                },
                Quad {
                    h: DMatrix::zeros(2, 2),
                    b: -e1,
                },
            ],
            known_opt_value: Some(0.0),
            known_opt_point: None,
            known_dim_v: Some(1),
            convex: true,
            seed: None,
        }
    }

    #[test]
    fn kinked_function_vu_split() {
        let spec = abs_x1_problem();
        let oracle = Oracle::new(&spec);
        let (info, _) = first_order(&oracle, &DVector::zeros(2), 1e-4, None, None).unwrap();
        assert_eq!(info.active, vec![0, 1]);
        assert_eq!(info.v.ncols(), 1);
        assert_relative_eq!(info.v[(0, 0)].abs(), 2.0, epsilon = 1e-8);
        assert_relative_eq!(info.v[(1, 0)], 0.0, epsilon = 1e-8);
        assert_eq!(info.u.ncols(), 1);
        assert_relative_eq!(info.u[(1, 0)].abs(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(info.g_eps.norm(), 0.0, epsilon = 1e-8);
        assert_eq!(oracle.calls(), 3);
    }

    #[test]
    fn smooth_case_full_u() {
        let spec = ProblemSpec {
            n: 2,
            m: 1,
            quads: vec![Quad {
                h: DMatrix::identity(2, 2),
                b: DVector::zeros(2),
            }],
            known_opt_value: Some(0.0),
            known_opt_point: None,
            known_dim_v: Some(0),
            convex: true,
            seed: None,
        };
        let oracle = Oracle::new(&spec);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let (info, _) = first_order(&oracle, &x, 1e-5, None, None).unwrap();
        assert_eq!(info.v.ncols(), 0);
        assert_eq!(info.u.ncols(), 2);
        assert_relative_eq!(info.u_grad[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(info.u_grad[1], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn u_orthonormal_and_orthogonal_to_v() {
        let spec = crate::greybox::generate_random(8, 3, 13, true).unwrap();
        let oracle = Oracle::new(&spec);
        for seed in 0..5u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = DVector::from_fn(8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let (info, _) = first_order(&oracle, &x, 1e-4, None, None).unwrap();
            let utu = info.u.transpose() * &info.u;
            let eye = DMatrix::identity(utu.nrows(), utu.ncols());
            assert!((utu - eye).abs().max() <= 1e-10);
            if info.v.ncols() > 0 {
                let utv = info.u.transpose() * &info.v;
                assert!(utv.abs().max() <= 1e-10 * info.v.abs().max().max(1.0));
            }
            let rank_v = 8 - info.u.ncols();
            assert!(rank_v <= info.v.ncols());
            // u_grad is U'g by construction
            let diff = (&info.u.transpose() * &info.g_eps) - &info.u_grad;
            assert_eq!(diff.abs().max(), 0.0);
        }
    }

    #[test]
    fn center_caching_saves_one_call() {
        let spec = abs_x1_problem();
        let oracle = Oracle::new(&spec);
        let x = DVector::from_vec(vec![0.5, 0.5]);
        let rec = oracle.evaluate(&x).unwrap();
        let before = oracle.calls();
        let _ = first_order(&oracle, &x, 1e-4, None, Some(&rec)).unwrap();
        assert_eq!(oracle.calls() - before, 2); // n calls, center reused
    }
}
