//! Numerical kernels: the simplex-constrained dual QP of the proximal step for
//! a piecewise-linear model, and the regularized symmetric solve behind the
//! U-Newton step.

use nalgebra::{DMatrix, DVector};

use crate::error::SolverError;

/// Relative duality-gap tolerance of the prox QP.
pub const GAP_TOL: f64 = 1e-8;

/// A piecewise-linear model `phi(z) = max_i { a_i + g_i' z }` in intercept form.
#[derive(Debug, Clone, Default)]
pub struct CutSet {
    pub gradients: Vec<DVector<f64>>,
    pub intercepts: Vec<f64>,
}

impl CutSet {
    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    /// Add the cut `a + g' z`.
    pub fn push(&mut self, gradient: DVector<f64>, intercept: f64) {
        self.gradients.push(gradient);
        self.intercepts.push(intercept);
    }

    /// Cut passing through `(point, fval)` with slope `g`.
    pub fn push_linearization(&mut self, point: &DVector<f64>, fval: f64, g: DVector<f64>) {
        let a = fval - g.dot(point);
        self.push(g, a);
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        (0..self.len())
            .map(|i| self.intercepts[i] + self.gradients[i].dot(z))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Proximal point of a piecewise-linear model with its dual certificate.
#[derive(Debug, Clone)]
pub struct ProxSolution {
    pub z: DVector<f64>,
    /// Simplex weights on the cuts.
    pub lambda: DVector<f64>,
    /// Aggregate gradient `sum_i lambda_i g_i = r (z0 - z)`.
    pub s: DVector<f64>,
    pub model_value_at_z: f64,
}

/// Euclidean projection onto the unit simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

struct DualQp {
    /// `Q = G'G / r`.
    q: DMatrix<f64>,
    /// `c_i = a_i + g_i' z0` (cut values at the prox center).
    c: DVector<f64>,
}

impl DualQp {
    fn objective(&self, lambda: &DVector<f64>) -> f64 {
        0.5 * (&self.q * lambda).dot(lambda) - self.c.dot(lambda)
    }

    fn gradient(&self, lambda: &DVector<f64>) -> DVector<f64> {
        &self.q * lambda - &self.c
    }
}

/// Equality-constrained solve on the working set: min over the support of
/// `1/2 l'Ql - c'l` subject to `sum l = 1`.
fn solve_working_set(qp: &DualQp, working: &[usize]) -> Option<DVector<f64>> {
    let w = working.len();
    // row-scaling Q and c by the dominant diagonal entry leaves lambda
    // unchanged (the multiplier absorbs the factor) and keeps the relative
    // regularization honest for badly scaled cuts
    let qscale = working
        .iter()
        .map(|&i| qp.q[(i, i)])
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut kkt = DMatrix::zeros(w + 1, w + 1);
    let mut exact = DMatrix::zeros(w + 1, w + 1);
    let mut rhs = DVector::zeros(w + 1);
    let reg = 1e-13;
    for (a, &i) in working.iter().enumerate() {
        for (b, &j) in working.iter().enumerate() {
            exact[(a, b)] = qp.q[(i, j)] / qscale;
            kkt[(a, b)] = exact[(a, b)];
        }
        kkt[(a, a)] += reg;
        kkt[(a, w)] = 1.0;
        exact[(a, w)] = 1.0;
        kkt[(w, a)] = 1.0;
        exact[(w, a)] = 1.0;
        rhs[a] = qp.c[i] / qscale;
    }
    rhs[w] = 1.0;
    let lu = kkt.full_piv_lu();
    let mut sol = lu.solve(&rhs)?;
    // iterative refinement against the unregularized system
    for _ in 0..2 {
        let resid = &rhs - &exact * &sol;
        match lu.solve(&resid) {
            Some(corr) => sol += corr,
            None => break,
        }
    }
    Some(sol.rows(0, w).into_owned())
}

/// Dense active-set method for the simplex-constrained dual.  Optimality is
/// certified through the Frank-Wolfe gap `lambda' grad - min_j grad_j`, which
/// vanishes exactly at the solution.
fn active_set_solve(qp: &DualQp) -> DVector<f64> {
    let k = qp.c.len();
    let start = (0..k)
        .max_by(|&a, &b| qp.c[a].total_cmp(&qp.c[b]))
        .unwrap();
    let mut working: Vec<usize> = vec![start];
    let mut lambda = DVector::zeros(k);
    lambda[start] = 1.0;

    let max_outer = 100 * (k + 2);
    for _ in 0..max_outer {
        let Some(target) = solve_working_set(qp, &working) else {
            break;
        };
        if target.iter().all(|&v| v >= -1e-12) {
            let mut full = DVector::zeros(k);
            for (a, &i) in working.iter().enumerate() {
                full[i] = target[a].max(0.0);
            }
            let total: f64 = full.iter().sum();
            if total > 0.0 {
                full /= total;
            }
            let grad = qp.gradient(&full);
            let nu = full.dot(&grad);
            let scale = 1.0 + grad.abs().max();
            let jmin = (0..k).min_by(|&a, &b| grad[a].total_cmp(&grad[b])).unwrap();
            lambda = full;
            if nu - grad[jmin] <= 1e-12 * scale {
                return lambda;
            }
            // drop slack indices; the violator must enter with room to move
            working.retain(|&i| lambda[i] > 0.0 && i != jmin);
            working.push(jmin);
        } else {
            // ratio test toward the equality-constrained target
            let mut cur: Vec<f64> = working.iter().map(|&i| lambda[i]).collect();
            let mut alpha = 1.0f64;
            let mut blocker = None;
            for (a, &t) in target.iter().enumerate() {
                if t < cur[a] {
                    let step = cur[a] / (cur[a] - t);
                    if step < alpha {
                        alpha = step;
                        blocker = Some(a);
                    }
                }
            }
            for (a, v) in cur.iter_mut().enumerate() {
                *v += alpha * (target[a] - *v);
            }
            for (a, &i) in working.iter().enumerate() {
                lambda[i] = cur[a].max(0.0);
            }
            if let Some(b) = blocker {
                lambda[working[b]] = 0.0;
                working.remove(b);
            }
            // renormalize round-off
            let s: f64 = lambda.iter().sum();
            if s > 0.0 {
                lambda /= s;
            }
        }
    }
    lambda
}

/// Accelerated projected-gradient (FISTA) fallback on the simplex, stepping
/// with the exact largest eigenvalue of `Q`.
fn projected_gradient_solve(qp: &DualQp, start: &DVector<f64>, iters: usize) -> DVector<f64> {
    let lip = qp
        .q
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .max()
        .max(1e-12);
    let step = 1.0 / lip;
    let mut lambda = project_simplex(start);
    let mut y = lambda.clone();
    let mut t = 1.0f64;
    let mut best = lambda.clone();
    let mut best_obj = qp.objective(&lambda);
    for _ in 0..iters {
        let next = project_simplex(&(&y - step * qp.gradient(&y)));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + ((t - 1.0) / t_next) * (&next - &lambda);
        lambda = next;
        t = t_next;
        let obj = qp.objective(&lambda);
        if obj < best_obj {
            best_obj = obj;
            best = lambda.clone();
        }
    }
    best
}

/// Re-solve the equality-constrained KKT system on the support of `lambda`;
/// returns a polished point when the result stays feasible.
fn polish_support(qp: &DualQp, lambda: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 1e-10).collect();
    if support.is_empty() {
        return None;
    }
    let target = solve_working_set(qp, &support)?;
    if target.iter().any(|&v| v < -1e-12) {
        return None;
    }
    let mut full = DVector::zeros(lambda.len());
    for (a, &i) in support.iter().enumerate() {
        full[i] = target[a].max(0.0);
    }
    let total: f64 = full.iter().sum();
    if total > 0.0 {
        full /= total;
    }
    Some(full)
}

fn assemble(
    cuts: &CutSet,
    z0: &DVector<f64>,
    r: f64,
    lambda: DVector<f64>,
) -> ProxSolution {
    let n = z0.len();
    let mut s = DVector::zeros(n);
    for i in 0..cuts.len() {
        s += lambda[i] * &cuts.gradients[i];
    }
    let z = z0 - &s / r;
    let model_value_at_z = cuts.value(&z);
    ProxSolution {
        z,
        lambda,
        s,
        model_value_at_z,
    }
}

fn duality_gap(z0: &DVector<f64>, r: f64, qp: &DualQp, sol: &ProxSolution) -> (f64, f64) {
    let primal = sol.model_value_at_z + 0.5 * r * (&sol.z - z0).norm_squared();
    let dual = qp.c.dot(&sol.lambda) - 0.5 / r * sol.s.norm_squared();
    (primal - dual, primal)
}

/// Proximal point of the cutting-plane model at `z0` with parameter `r`,
/// solved through the simplex-constrained dual.  Primal recovery is
/// `z = z0 - s / r` with `s` the aggregate of the cut gradients.
pub fn prox_pl(cuts: &CutSet, z0: &DVector<f64>, r: f64) -> Result<ProxSolution, SolverError> {
    if cuts.is_empty() {
        return Err(SolverError::InvalidArgument("empty cut set".into()));
    }
    if r <= 0.0 {
        return Err(SolverError::InvalidArgument(format!(
            "proximal parameter must be positive, got {r}"
        )));
    }
    let k = cuts.len();
    let n = z0.len();
    let g = DMatrix::from_fn(n, k, |i, j| cuts.gradients[j][i]);
    let q = g.transpose() * &g / r;
    let c = DVector::from_fn(k, |i, _| cuts.intercepts[i] + cuts.gradients[i].dot(z0));
    let qp = DualQp { q, c };

    let lambda = active_set_solve(&qp);
    let sol = assemble(cuts, z0, r, lambda);
    let (gap, primal) = duality_gap(z0, r, &qp, &sol);
    if gap.abs() <= GAP_TOL * (1.0 + primal.abs()) {
        return Ok(sol);
    }

    let fallback_iters = 50_000;
    let mut lambda = projected_gradient_solve(&qp, &sol.lambda, fallback_iters);
    if let Some(polished) = polish_support(&qp, &lambda) {
        if qp.objective(&polished) <= qp.objective(&lambda) {
            lambda = polished;
        }
    }
    let sol = assemble(cuts, z0, r, lambda);
    let (gap, primal) = duality_gap(z0, r, &qp, &sol);
    if gap.abs() <= GAP_TOL * (1.0 + primal.abs()) {
        Ok(sol)
    } else {
        Err(SolverError::QpFailure {
            iters: fallback_iters,
            gap,
        })
    }
}

/// Solve `(Hu + sigma I) du = -gu` with `sigma` chosen so the smallest
/// eigenvalue is at least `1e-8 ||Hu||`; the result satisfies `du' gu <= 0`.
pub fn solve_newton(hu: &DMatrix<f64>, gu: &DVector<f64>) -> DVector<f64> {
    let d = gu.len();
    if d == 0 {
        return DVector::zeros(0);
    }
    let eig = hu.clone().symmetric_eigen();
    let norm = eig.eigenvalues.abs().max();
    let floor = 1e-8 * if norm > 0.0 { norm } else { 1.0 };
    let lmin = eig.eigenvalues.min();
    let sigma = if lmin >= floor { 0.0 } else { floor - lmin };
    let mut du = DVector::zeros(d);
    for i in 0..d {
        let qi = eig.eigenvectors.column(i);
        du -= (qi.dot(gu) / (eig.eigenvalues[i] + sigma)) * qi;
    }
    du
}
