//! Tilt-corrected derivative-free proximal bundle subroutine (the V-step):
//! linearization with tilt correction, cutting-plane model, prox iteration,
//! inner stopping test, aggregate element and bundle management.

use nalgebra::DVector;

use crate::error::SolverError;
use crate::greybox::{EvalRecord, Oracle, THETA_ABS, THETA_ACT};
use crate::qpkernels::{prox_pl, CutSet};
use crate::stencil::first_order;

/// Tilt threshold: overshoots below this are left uncorrected.
pub const TILT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Regular,
    Aggregate,
}

/// One bundle element: a cut through `(point, fval)` with slope `grad`.
/// The aggregate element carries the model value at the last prox point and
/// the aggregate gradient `r (z0 - z)`.
#[derive(Debug, Clone)]
pub struct BundleElement {
    pub kind: ElementKind,
    pub point: DVector<f64>,
    pub fval: f64,
    pub grad: DVector<f64>,
}

impl BundleElement {
    /// Cut value at `z`.
    pub fn cut_at(&self, z: &DVector<f64>) -> f64 {
        self.fval + self.grad.dot(&(z - &self.point))
    }
}

/// Result of one V-step.
#[derive(Debug, Clone)]
pub struct VStepResult {
    pub x_next: DVector<f64>,
    /// Aggregate subgradient `r (z0 - x_next)`.
    pub s_next: DVector<f64>,
    pub f_next: f64,
    /// Center evaluation at `x_next`, reusable by the caller.
    pub record_next: EvalRecord,
    /// Value of `f` at the step's center `x_k`.
    pub f_center: f64,
    /// Evaluation at the center `x_k`, reusable on null steps.
    pub record_center: EvalRecord,
    pub inner_iters: usize,
    /// `f(x_next) - model(x_next)`, at most `eps^2 / r` on success.
    pub model_gap: f64,
    pub calls_used: u64,
    /// Approximate subgradient from the first inner iteration (for the
    /// dynamic prox-parameter rule).
    pub g0_norm_sq: f64,
}

/// Per-inner-iteration trace record.
#[derive(Debug, Clone)]
pub struct InnerTrace {
    pub j: usize,
    pub model_gap: f64,
    pub s_norm: f64,
    pub calls: u64,
}

/// Tilt a cut slope down so the cut through `(zj, f_zj)` does not exceed
/// `f(z0)` at the bundle center.  The overshoot is
/// `E = f_zj + g~'(z0 - zj) - f_z0`; when it exceeds the threshold, the slope
/// is adjusted along `z0 - zj` so the corrected cut satisfies
/// `f_zj + g'(z0 - zj) = f_z0` exactly.
pub fn tilt_gradient(
    g_tilde: &DVector<f64>,
    z0: &DVector<f64>,
    f_z0: f64,
    zj: &DVector<f64>,
    f_zj: f64,
) -> DVector<f64> {
    let dir = z0 - zj;
    let dist_sq = dir.norm_squared();
    if dist_sq == 0.0 {
        return g_tilde.clone();
    }
    let overshoot = f_zj + g_tilde.dot(&dir) - f_z0;
    if overshoot > TILT_THRESHOLD {
        g_tilde - (overshoot / dist_sq) * dir
    } else {
        g_tilde.clone()
    }
}

fn cuts_from(bundle: &[BundleElement]) -> CutSet {
    let mut cuts = CutSet::default();
    for el in bundle {
        cuts.push_linearization(&el.point, el.fval, el.grad.clone());
    }
    cuts
}

/// Prune to `cap` elements, keeping the aggregate, the center cut, the
/// newest element and cuts almost active at `z_new`; among the rest, lowest
/// dual weight goes first.
fn prune_bundle(
    bundle: &mut Vec<BundleElement>,
    lambda: &DVector<f64>,
    z0: &DVector<f64>,
    z_new: &DVector<f64>,
    model_at_z_new: f64,
    cap: usize,
) {
    if bundle.len() <= cap {
        return;
    }
    let last = bundle.len() - 1;
    let thresh = THETA_ACT * model_at_z_new.abs() + THETA_ABS;
    let mut keep: Vec<bool> = bundle
        .iter()
        .enumerate()
        .map(|(i, el)| {
            el.point == *z0
                || i == last
                || el.kind == ElementKind::Aggregate
                || model_at_z_new - el.cut_at(z_new) <= thresh
        })
        .collect();
    let mut kept = keep.iter().filter(|&&k| k).count();
    // drop lowest-weight optional cuts until at the cap
    let mut order: Vec<usize> = (0..bundle.len()).filter(|&i| !keep[i]).collect();
    order.sort_by(|&a, &b| {
        let la = lambda.get(a).copied().unwrap_or(0.0);
        let lb = lambda.get(b).copied().unwrap_or(0.0);
        lb.total_cmp(&la)
    });
    for &i in &order {
        if kept < cap {
            keep[i] = true;
            kept += 1;
        }
    }
    // if mandatory elements alone exceed the cap they all stay
    let mut idx = 0;
    bundle.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
}

/// One V-step from `x_k`: builds a tilt-corrected cutting-plane model from
/// simplex-gradient linearizations and iterates prox steps until the model
/// gap at the prox point drops to `eps^2 / r`.
///
/// `bundle` carries cuts between V-steps; carried cuts are re-tilted against
/// the new center before use and the final bundle is left in place for the
/// next call.  Pass an empty vector for a cold start.
///
/// `budget` is the total grey-box call allowance for the run; the step fails
/// with `BudgetExhausted` if an inner iteration would exceed it.
/// `cached_center` lets the caller pass an existing evaluation at `x_k`.
#[allow(clippy::too_many_arguments)]
pub fn v_step(
    oracle: &Oracle,
    x_k: &DVector<f64>,
    eps_k: f64,
    r: f64,
    budget: u64,
    bundle_cap: usize,
    bundle: &mut Vec<BundleElement>,
    cached_center: Option<&EvalRecord>,
    mut trace: Option<&mut Vec<InnerTrace>>,
) -> Result<VStepResult, SolverError> {
    if eps_k <= 0.0 || r <= 0.0 {
        return Err(SolverError::InvalidArgument(format!(
            "eps and r must be positive, got eps = {eps_k}, r = {r}"
        )));
    }
    let calls_at_entry = oracle.calls();
    let n = x_k.len();
    let z0 = x_k.clone();

    let mut z_j = z0.clone();
    let mut rec_j: Option<EvalRecord> = cached_center.cloned();
    let mut f_z0 = f64::NAN;
    let mut center_rec: Option<EvalRecord> = None;
    let mut g0_norm_sq = 0.0;
    let mut prev_inner_obj = f64::NEG_INFINITY;

    let inner_cost = (n as u64) + 1;
    for j in 0..usize::MAX {
        if oracle.calls() - calls_at_entry + inner_cost > budget {
            return Err(SolverError::BudgetExhausted {
                used: oracle.calls() - calls_at_entry,
                budget,
            });
        }
        // linearization at z_j
        let (info, center) = first_order(oracle, &z_j, eps_k, None, rec_j.as_ref())?;
        if j == 0 {
            f_z0 = center.fmax;
            center_rec = Some(center.clone());
            g0_norm_sq = info.g_eps.norm_squared();
            // carried cuts were tilted against the previous center; re-tilt
            // so none of them overshoots f at the new one
            for el in bundle.iter_mut() {
                el.grad = tilt_gradient(&el.grad, &z0, f_z0, &el.point, el.fval);
            }
        }
        let g = tilt_gradient(&info.g_eps, &z0, f_z0, &z_j, center.fmax);
        bundle.push(BundleElement {
            kind: ElementKind::Regular,
            point: z_j.clone(),
            fval: center.fmax,
            grad: g,
        });

        // proximal point of the model
        let cuts = cuts_from(bundle);
        let sol = prox_pl(&cuts, &z0, r)?;
        let s = r * (&z0 - &sol.z);
        debug_assert!((&s - &sol.s).norm() <= 1e-8 * (1.0 + sol.s.norm()));

        let inner_obj = sol.model_value_at_z + 0.5 * r * (&sol.z - &z0).norm_squared();
        assert!(
            inner_obj >= prev_inner_obj - 1e-8 * (1.0 + inner_obj.abs()),
            "inner prox objective decreased: {prev_inner_obj} -> {inner_obj}"
        );
        prev_inner_obj = inner_obj;

        // stopping test needs f at the prox point
        if oracle.calls() - calls_at_entry + 1 > budget {
            return Err(SolverError::BudgetExhausted {
                used: oracle.calls() - calls_at_entry,
                budget,
            });
        }
        let rec_next = oracle.evaluate(&sol.z)?;
        let model_gap = rec_next.fmax - sol.model_value_at_z;
        if let Some(t) = trace.as_deref_mut() {
            t.push(InnerTrace {
                j,
                model_gap,
                s_norm: s.norm(),
                calls: oracle.calls() - calls_at_entry,
            });
        }

        if model_gap <= eps_k * eps_k / r {
            return Ok(VStepResult {
                x_next: sol.z.clone(),
                s_next: s,
                f_next: rec_next.fmax,
                record_next: rec_next,
                f_center: f_z0,
                record_center: center_rec.expect("center recorded on first iteration"),
                inner_iters: j + 1,
                model_gap,
                calls_used: oracle.calls() - calls_at_entry,
                g0_norm_sq,
            });
        }

        // aggregate element and bundle management; the fresh aggregate cut
        // minorizes the whole current model at the prox point, so the
        // previous aggregate is subsumed and dropped
        bundle.retain(|el| el.kind != ElementKind::Aggregate);
        bundle.push(BundleElement {
            kind: ElementKind::Aggregate,
            point: sol.z.clone(),
            fval: sol.model_value_at_z,
            grad: s,
        });
        prune_bundle(
            bundle,
            &sol.lambda,
            &z0,
            &sol.z,
            sol.model_value_at_z,
            bundle_cap,
        );
        z_j = sol.z;
        rec_j = Some(rec_next);
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greybox::{ProblemSpec, Quad};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn tilt_noop_when_cut_below() {
        let g = DVector::from_vec(vec![1.0, 2.0]);
        let z0 = DVector::zeros(2);
        let zj = DVector::from_vec(vec![1.0, 0.0]);
        // cut at z0: f_zj + g'(z0-zj) = 3 - 1 = 2 <= f_z0 = 5
        let out = tilt_gradient(&g, &z0, 5.0, &zj, 3.0);
        assert_eq!(out, g);
    }

    #[test]
    fn tilt_restores_center_consistency() {
        let g = DVector::from_vec(vec![-2.0]);
        let z0 = DVector::from_vec(vec![0.0]);
        let zj = DVector::from_vec(vec![1.0]);
        let (f_z0, f_zj) = (0.0, 1.0);
        // overshoot E = 1 + (-2)(-1) - 0 = 3
        let out = tilt_gradient(&g, &z0, f_z0, &zj, f_zj);
        let cut_at_z0 = f_zj + out.dot(&(&z0 - &zj));
        assert_relative_eq!(cut_at_z0, f_z0, epsilon = 1e-12);
    }

    #[test]
    fn tilt_center_point_untouched() {
        let g = DVector::from_vec(vec![3.0]);
        let z = DVector::from_vec(vec![0.5]);
        let out = tilt_gradient(&g, &z, 1.0, &z, 1.0);
        assert_eq!(out, g);
    }

    fn single_quadratic(n: usize) -> ProblemSpec {
        ProblemSpec {
            n,
            m: 1,
            quads: vec![Quad {
                h: DMatrix::identity(n, n),
                b: DVector::zeros(n),
            }],
            known_opt_value: Some(0.0),
            known_opt_point: Some(DVector::zeros(n)),
            known_dim_v: Some(0),
            convex: true,
            seed: None,
        }
    }

    #[test]
    fn smooth_prox_reached() {
        // prox of 1/2||x||^2 at x0 is x0 / (1 + 1/r)
        let spec = single_quadratic(2);
        let oracle = Oracle::new(&spec);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let (eps, r) = (1e-4, 1.0);
        let res = v_step(&oracle, &x, eps, r, 10_000, 12, &mut Vec::new(), None, None).unwrap();
        let expected = &x / (1.0 + 1.0 / r);
        let mu_plus_one_eps_over_r = 2.0 * eps / r + 1e-3;
        assert!(
            (&res.x_next - &expected).norm() <= mu_plus_one_eps_over_r.max(1e-3),
            "prox point off by {}",
            (&res.x_next - &expected).norm()
        );
        assert!(res.model_gap <= eps * eps / r);
        assert!((r * (&x - &res.x_next) - &res.s_next).norm() == 0.0);
    }

    #[test]
    fn abs_value_prox() {
        // prox of |x| at 1 with r = 1 is 0
        let e = DVector::from_vec(vec![1.0]);
        let spec = ProblemSpec {
            n: 1,
            m: 2,
            quads: vec![
                Quad {
                    h: DMatrix::zeros(1, 1),
                    b: e.clone(),
                },
                Quad {
                    h: DMatrix::zeros(1, 1),
                    b: -e,
                },
            ],
            known_opt_value: Some(0.0),
            known_opt_point: Some(DVector::zeros(1)),
            known_dim_v: Some(1),
            convex: true,
            seed: None,
        };
        let oracle = Oracle::new(&spec);
        let x = DVector::from_vec(vec![1.0]);
        let res = v_step(&oracle, &x, 1e-4, 1.0, 10_000, 12, &mut Vec::new(), None, None).unwrap();
        assert!(res.x_next[0].abs() <= 1e-2);
        assert_relative_eq!(res.s_next[0], 1.0, epsilon = 1e-2);
    }

    #[test]
    fn budget_exhaustion_reported() {
        let spec = single_quadratic(4);
        let oracle = Oracle::new(&spec);
        let x = DVector::from_element(4, 1.0);
        let err = v_step(&oracle, &x, 1e-4, 1.0, 3, 12, &mut Vec::new(), None, None).unwrap_err();
        assert!(matches!(err, SolverError::BudgetExhausted { .. }));
    }

    #[test]
    fn trace_emitted() {
        let spec = single_quadratic(2);
        let oracle = Oracle::new(&spec);
        let x = DVector::from_vec(vec![0.5, -0.5]);
        let mut trace = Vec::new();
        let res = v_step(&oracle, &x, 1e-3, 1.0, 10_000, 12, &mut Vec::new(), None, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), res.inner_iters);
        assert!(trace.last().unwrap().model_gap <= 1e-6);
    }

    #[test]
    fn bundle_elements_respect_center_after_tilt() {
        // on a generated problem, every regular cut must not overshoot f(z0)
        let spec = crate::greybox::generate_random(5, 2, 21, true).unwrap();
        let oracle = Oracle::new(&spec);
        let x = DVector::from_element(5, 0.6);
        let res = v_step(&oracle, &x, 1e-2, 1.0, 50_000, 12, &mut Vec::new(), None, None).unwrap();
        assert!(res.model_gap <= 1e-4 / 1.0 + 1e-12);
    }
}
