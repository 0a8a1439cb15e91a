//! Grey-box oracle contract and test-problem construction.
//!
//! A problem is a finite-max of quadratics `f(x) = max_j { 1/2 x' H_j x + b_j' x }`.
//! The oracle reports every subfunction value at a point (one call per point),
//! which also yields the almost-active index set.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;

/// Relative threshold of the almost-active test.
pub const THETA_ACT: f64 = 1e-3;
/// Absolute fallback threshold, used when `|f(x)|` is numerically zero.
pub const THETA_ABS: f64 = 1e-6;

/// One quadratic piece `f_j(x) = 1/2 x' H x + b' x`.
#[derive(Debug, Clone)]
pub struct Quad {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// A finite-max objective with optional known-solution metadata.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    pub quads: Vec<Quad>,
    pub known_opt_value: Option<f64>,
    pub known_opt_point: Option<DVector<f64>>,
    pub known_dim_v: Option<usize>,
    pub convex: bool,
    pub seed: Option<i64>,
}

/// Output of one grey-box call.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub x: DVector<f64>,
    pub values: DVector<f64>,
    pub fmax: f64,
    /// Indices passing the soft-threshold activity test (0-based).
    pub active: Vec<usize>,
}

impl ProblemSpec {
    /// Subfunction values at `x`, without activity bookkeeping.
    pub fn piece_values(&self, x: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        if x.len() != self.n {
            return Err(SolverError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let vals = DVector::from_iterator(
            self.m,
            self.quads
                .iter()
                .map(|q| 0.5 * (&q.h * x).dot(x) + q.b.dot(x)),
        );
        Ok(vals)
    }

    /// `f(x)`, bypassing the oracle counter.  Intended for metrics and test oracles.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.piece_values(x).expect("dimension mismatch").max()
    }

    /// Exact gradient of piece `j` at `x`: `H_j x + b_j`.
    pub fn piece_gradient(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.quads[j].h * x + &self.quads[j].b
    }

    /// Exactly-active index set (subfunction value equal to the max up to `tol`).
    pub fn exact_active(&self, x: &DVector<f64>, tol: f64) -> Vec<usize> {
        let vals = self.piece_values(x).expect("dimension mismatch");
        let fmax = vals.max();
        (0..self.m).filter(|&j| fmax - vals[j] <= tol).collect()
    }

    fn record(&self, x: &DVector<f64>) -> Result<EvalRecord, SolverError> {
        let values = self.piece_values(x)?;
        let fmax = values.max();
        let active = active_set(&values, fmax);
        Ok(EvalRecord {
            x: x.clone(),
            values,
            fmax,
            active,
        })
    }
}

/// Almost-active indices: `fmax - v_j <= THETA_ACT |fmax|`, with the absolute
/// fallback `THETA_ABS` when `|fmax|` is below 1e-12.  The argmax always passes.
pub fn active_set(values: &DVector<f64>, fmax: f64) -> Vec<usize> {
    let thresh = if fmax.abs() < 1e-12 {
        THETA_ABS
    } else {
        THETA_ACT * fmax.abs()
    };
    let mut active: Vec<usize> = (0..values.len())
        .filter(|&j| fmax - values[j] <= thresh)
        .collect();
    if active.is_empty() {
        // round-off guard; the exact argmax passes by construction
        let argmax = (0..values.len())
            .max_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap();
        active.push(argmax);
    }
    active
}

/// Grey-box oracle over a problem spec with an atomic call counter.
/// One call = one point, all `m` subfunction values.
pub struct Oracle<'a> {
    spec: &'a ProblemSpec,
    calls: AtomicU64,
}

impl<'a> Oracle<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Self {
        Oracle {
            spec,
            calls: AtomicU64::new(0),
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Evaluate all subfunctions at `x`, incrementing the call counter.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<EvalRecord, SolverError> {
        let rec = self.spec.record(x)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(rec)
    }

    /// Evaluate without touching the call counter (metrics, test oracles).
    pub fn evaluate_uncounted(&self, x: &DVector<f64>) -> Result<EvalRecord, SolverError> {
        self.spec.record(x)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Optimal value of the classical 10-dimensional, 5-piece maxquad instance.
pub const MAXQUAD_OPT_VALUE: f64 = -0.841_408_334_596_418_14;

/// The classical maxquad test function: n = 10, m = 5, with pieces
/// `x' A_k x - c_k' x` mapped into the `1/2 x' H x + b' x` convention.
pub fn make_maxquad() -> ProblemSpec {
    let n = 10;
    let m = 5;
    let mut quads = Vec::with_capacity(m);
    for k in 1..=m {
        let mut a = DMatrix::zeros(n, n);
        for i in 1..=n {
            for j in 1..=n {
                if i < j {
                    let v = ((i as f64) / (j as f64)).exp()
                        * ((i * j) as f64).cos()
                        * (k as f64).sin();
                    a[(i - 1, j - 1)] = v;
                    a[(j - 1, i - 1)] = v;
                }
            }
        }
        for i in 1..=n {
            let off: f64 = (1..=n)
                .filter(|&j| j != i)
                .map(|j| a[(i - 1, j - 1)].abs())
                .sum();
            a[(i - 1, i - 1)] = (i as f64) / 10.0 * (k as f64).sin().abs() + off;
        }
        let c = DVector::from_iterator(
            n,
            (1..=n).map(|i| ((i as f64) / (k as f64)).exp() * ((i * k) as f64).sin()),
        );
        // x'Ax - c'x  =  1/2 x'(2A)x + (-c)'x
        quads.push(Quad { h: 2.0 * a, b: -c });
    }
    ProblemSpec {
        n,
        m,
        quads,
        known_opt_value: Some(MAXQUAD_OPT_VALUE),
        known_opt_point: None,
        known_dim_v: Some(3),
        convex: true,
        seed: None,
    }
}

fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        rand_distr::StandardNormal.sample(rng)
    });
    g.qr().q()
}

fn log_uniform(lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    (rng.random::<f64>() * (hi.ln() - lo.ln()) + lo.ln()).exp()
}

/// Rank-`dim_v` PSD matrix with nonzero-eigenvalue ratio exactly `dim_v^2`.
fn random_psd(n: usize, dim_v: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let hi = (dim_v * dim_v) as f64;
    let mut eigs = vec![0.0; n];
    eigs[0] = 1.0;
    if dim_v > 1 {
        eigs[1] = hi;
        for e in eigs.iter_mut().take(dim_v).skip(2) {
            *e = log_uniform(1.0, hi, rng);
        }
    }
    let q = random_orthogonal(n, rng);
    let d = DMatrix::from_diagonal(&DVector::from_vec(eigs));
    let h = &q * d * q.transpose();
    // symmetrize round-off
    0.5 * (&h + h.transpose())
}

/// Full-rank SPD matrix with eigenvalues in `[1, dim_v^2]`.
fn random_spd(n: usize, dim_v: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let hi = ((dim_v * dim_v) as f64).max(2.0);
    let eigs: Vec<f64> = (0..n).map(|_| log_uniform(1.0, hi, rng)).collect();
    let q = random_orthogonal(n, rng);
    let h = &q * DMatrix::from_diagonal(&DVector::from_vec(eigs)) * q.transpose();
    0.5 * (&h + h.transpose())
}

fn rank_of(cols: &[DVector<f64>]) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let n = cols[0].len();
    let mat = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let svd = mat.svd(false, false);
    let smax = svd.singular_values.max();
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax.max(1.0))
        .count()
}

/// Random max-of-quadratics instance with minimizer 0, optimal value 0 and
/// `m = dim_v + 1` pieces all active at the origin.  With `convex = false`,
/// one piece is made concave and one strictly convex; the origin stays a
/// critical point with value 0.
pub fn generate_random(
    n: usize,
    dim_v: usize,
    seed: u64,
    convex: bool,
) -> Result<ProblemSpec, SolverError> {
    if dim_v < 1 || dim_v > n - 1 {
        return Err(SolverError::InvalidArgument(format!(
            "dim_v must be in [1, n-1], got {dim_v} for n = {n}"
        )));
    }
    let m = dim_v + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // strictly positive simplex weights
    let mut lambda: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= total);

    let mut bs: Option<Vec<DVector<f64>>> = None;
    for _ in 0..100 {
        let mut cand: Vec<DVector<f64>> = (0..m - 1)
            .map(|_| DVector::from_fn(n, |_, _| rand_distr::StandardNormal.sample(&mut rng)))
            .collect();
        let mut last = DVector::zeros(n);
        for (j, b) in cand.iter().enumerate() {
            last -= lambda[j] * b;
        }
        last /= lambda[m - 1];
        cand.push(last);
        let diffs: Vec<DVector<f64>> = (1..m).map(|j| &cand[j] - &cand[0]).collect();
        if rank_of(&diffs) == m - 1 {
            bs = Some(cand);
            break;
        }
    }
    let bs = bs.ok_or_else(|| {
        SolverError::Generation("100 consecutive linear-independence failures".into())
    })?;

    let mut quads = Vec::with_capacity(m);
    for (j, b) in bs.into_iter().enumerate() {
        let h = if convex {
            random_psd(n, dim_v, &mut rng)
        } else if j == 0 {
            random_spd(n, dim_v, &mut rng)
        } else if j == m - 1 {
            -random_spd(n, dim_v, &mut rng)
        } else {
            random_psd(n, dim_v, &mut rng)
        };
        quads.push(Quad { h, b });
    }

    Ok(ProblemSpec {
        n,
        m,
        quads,
        known_opt_value: Some(0.0),
        known_opt_point: Some(DVector::zeros(n)),
        known_dim_v: Some(dim_v),
        convex,
        seed: Some(seed as i64),
    })
}

// --- JSON schema -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct QuadJson {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    n: usize,
    m: usize,
    quads: Vec<QuadJson>,
    known_opt_value: Option<f64>,
    known_opt_point: Option<Vec<f64>>,
    known_dim_v: Option<usize>,
    convex: bool,
    seed: Option<i64>,
}

impl ProblemSpec {
    pub fn to_json(&self) -> Result<String, SolverError> {
        let pj = ProblemJson {
            n: self.n,
            m: self.m,
            quads: self
                .quads
                .iter()
                .map(|q| QuadJson {
                    h: (0..self.n)
                        .map(|i| (0..self.n).map(|j| q.h[(i, j)]).collect())
                        .collect(),
                    b: q.b.iter().copied().collect(),
                })
                .collect(),
            known_opt_value: self.known_opt_value,
            known_opt_point: self
                .known_opt_point
                .as_ref()
                .map(|p| p.iter().copied().collect()),
            known_dim_v: self.known_dim_v,
            convex: self.convex,
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&pj)?)
    }

    /// Parse a problem from JSON, verifying dimensions and matrix symmetry
    /// (`max |H - H'| <= 1e-12`).
    pub fn from_json(s: &str) -> Result<Self, SolverError> {
        let pj: ProblemJson = serde_json::from_str(s)?;
        if pj.quads.len() != pj.m {
            return Err(SolverError::InvalidArgument(format!(
                "expected {} quads, found {}",
                pj.m,
                pj.quads.len()
            )));
        }
        let mut quads = Vec::with_capacity(pj.m);
        for qj in &pj.quads {
            if qj.h.len() != pj.n || qj.h.iter().any(|r| r.len() != pj.n) || qj.b.len() != pj.n {
                return Err(SolverError::DimensionMismatch {
                    expected: pj.n,
                    got: qj.b.len(),
                });
            }
            let h = DMatrix::from_fn(pj.n, pj.n, |i, j| qj.h[i][j]);
            let asym = (&h - h.transpose()).abs().max();
            if asym > 1e-12 {
                return Err(SolverError::InvalidArgument(format!(
                    "matrix not symmetric: max |H - H'| = {asym:.3e}"
                )));
            }
            quads.push(Quad {
                h,
                b: DVector::from_vec(qj.b.clone()),
            });
        }
        Ok(ProblemSpec {
            n: pj.n,
            m: pj.m,
            quads,
            known_opt_value: pj.known_opt_value,
            known_opt_point: pj.known_opt_point.map(DVector::from_vec),
            known_dim_v: pj.known_dim_v,
            convex: pj.convex,
            seed: pj.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_quadratic() -> ProblemSpec {
        ProblemSpec {
            n: 2,
            m: 1,
            quads: vec![Quad {
                h: DMatrix::identity(2, 2),
                b: DVector::zeros(2),
            }],
            known_opt_value: Some(0.0),
            known_opt_point: Some(DVector::zeros(2)),
            known_dim_v: Some(0),
            convex: true,
            seed: None,
        }
    }

    #[test]
    fn single_quadratic_eval() {
        let spec = single_quadratic();
        let oracle = Oracle::new(&spec);
        let rec = oracle.evaluate(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(rec.values.len(), 1);
        assert_relative_eq!(rec.fmax, 1.0);
        assert_eq!(rec.active, vec![0]);
        assert_eq!(oracle.calls(), 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = single_quadratic();
        let oracle = Oracle::new(&spec);
        assert!(oracle.evaluate(&DVector::zeros(3)).is_err());
        assert_eq!(oracle.calls(), 0);
    }

    #[test]
    fn maxquad_shape_and_definition() {
        let spec = make_maxquad();
        assert_eq!(spec.n, 10);
        assert_eq!(spec.m, 5);
        // evaluate at a fixed point equals max of the 5 quadratics computed independently
        let x = DVector::from_fn(10, |i, _| 0.1 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 });
        let f = spec.value(&x);
        let manual = (0..5)
            .map(|k| 0.5 * (&spec.quads[k].h * &x).dot(&x) + spec.quads[k].b.dot(&x))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(f, manual, max_relative = 1e-14);
    }

    #[test]
    fn generated_convex_origin_all_active() {
        let spec = generate_random(10, 5, 1, true).unwrap();
        assert_eq!(spec.m, 6);
        let oracle = Oracle::new(&spec);
        let rec = oracle.evaluate(&DVector::zeros(10)).unwrap();
        assert_relative_eq!(rec.fmax, 0.0);
        assert_eq!(rec.active.len(), 6);
    }

    #[test]
    fn generated_convex_nonnegative_on_samples() {
        let spec = generate_random(10, 5, 3, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let x = DVector::from_fn(10, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            assert!(spec.value(&x) >= -1e-12);
        }
    }

    #[test]
    fn generated_eigenvalue_ratio() {
        let dim_v = 5;
        let spec = generate_random(10, dim_v, 7, true).unwrap();
        for q in &spec.quads {
            let eigs = q.h.clone().symmetric_eigen().eigenvalues;
            let nonzero: Vec<f64> = eigs.iter().copied().filter(|&e| e > 1e-8).collect();
            assert_eq!(nonzero.len(), dim_v);
            let lo = nonzero.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = nonzero.iter().fold(0.0f64, |a, &b| a.max(b));
            assert!(eigs.min() > -1e-10);
            let target = (dim_v * dim_v) as f64;
            assert!((hi / lo - target).abs() / target < 0.01);
        }
    }

    #[test]
    fn two_piece_simplex_condition() {
        let spec = generate_random(10, 1, 2, true).unwrap();
        assert_eq!(spec.m, 2);
        // b_2 = -(l1/l2) b_1 for some strictly positive weights: vectors antiparallel
        let b1 = &spec.quads[0].b;
        let b2 = &spec.quads[1].b;
        let cosine = b1.dot(b2) / (b1.norm() * b2.norm());
        assert_relative_eq!(cosine, -1.0, epsilon = 1e-10);
    }

    #[test]
    fn dim_v_out_of_range() {
        assert!(generate_random(10, 0, 1, true).is_err());
        assert!(generate_random(10, 10, 1, true).is_err());
    }

    #[test]
    fn json_round_trip_and_symmetry_check() {
        let spec = generate_random(6, 2, 5, true).unwrap();
        let s = spec.to_json().unwrap();
        let back = ProblemSpec::from_json(&s).unwrap();
        assert_eq!(back.n, 6);
        assert_eq!(back.m, 3);
        let x = DVector::from_element(6, 0.3);
        assert_relative_eq!(spec.value(&x), back.value(&x), max_relative = 1e-12);

        let mut bad = serde_json::from_str::<serde_json::Value>(&s).unwrap();
        bad["quads"][0]["H"][0][1] = serde_json::json!(123.0);
        assert!(ProblemSpec::from_json(&bad.to_string()).is_err());
    }

    #[test]
    fn nonconvex_has_negative_definite_and_positive_definite_piece() {
        let spec = generate_random(10, 4, 11, false).unwrap();
        assert!(!spec.convex);
        let mins: Vec<f64> = spec
            .quads
            .iter()
            .map(|q| q.h.clone().symmetric_eigen().eigenvalues.min())
            .collect();
        let maxs: Vec<f64> = spec
            .quads
            .iter()
            .map(|q| q.h.clone().symmetric_eigen().eigenvalues.max())
            .collect();
        assert!(mins.iter().any(|&e| e > 0.5)); // an SPD piece
        assert!(maxs.iter().any(|&e| e < -0.5)); // a negative-definite piece
        assert_relative_eq!(spec.value(&DVector::zeros(10)), 0.0);
    }
}
