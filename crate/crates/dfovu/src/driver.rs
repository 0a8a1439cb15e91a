//! Outer solver loop: serious/null logic, accuracy schedule, stopping tests,
//! U-Newton step and the dynamic proximal parameter.  Also provides a
//! no-U-step bundle baseline for benchmarking.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bench::compute_ra;
use crate::error::SolverError;
use crate::greybox::{EvalRecord, Oracle};
use crate::qpkernels::solve_newton;
use crate::quadmodel::{project_u_hessian, stencil_active_fits};
use crate::stencil::{column_space_basis, first_order, vu_split};
use crate::vstep::{v_step, BundleElement, InnerTrace, VStepResult};

/// Hard floor on the accuracy parameter; the run stops before a U-step once
/// `eps` falls below it.
pub const EPS_GUARD_DEFAULT: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Stopping test passed: `||s||^2 <= delta` and `eps <= eps_min`.
    Stopped,
    /// Accuracy parameter fell below the guard floor.
    EpsGuard,
    /// Grey-box call budget exhausted.
    Budget,
    /// The proximal QP failed to converge.
    QpFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Serious,
    Null,
    UStep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub kind: StepKind,
    pub f: f64,
    pub s_norm_sq: f64,
    pub eps: f64,
    pub r: f64,
    pub calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum RRule {
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stopping tolerance on `||s||^2`.
    pub delta: f64,
    /// Accuracy tolerance on `eps`.
    pub eps_min: f64,
    /// Descent parameter in (0,1).
    pub m_descent: f64,
    /// Initial accuracy parameter.
    pub eps0: f64,
    /// Multiplicative decrease of `eps` on null steps and converged serious steps.
    pub eps_factor: f64,
    /// Hard floor on `eps`; termination with `EpsGuard` below it.
    pub eps_guard: f64,
    /// Initial (or fixed) proximal parameter.
    pub r0: f64,
    pub r_rule: RRule,
    /// Total grey-box call budget.
    pub max_calls: u64,
    /// Bundle capacity of the V-step.
    pub bundle_cap: usize,
    pub seed: u64,
}

impl SolverConfig {
    /// Benchmark defaults: `delta = eps_min = 1e-2`, `eps` shrink factor 0.9,
    /// dynamic proximal parameter, budget `800 min(n, 20)`.
    pub fn defaults_for(n: usize) -> Self {
        SolverConfig {
            delta: 1e-2,
            eps_min: 1e-2,
            m_descent: 0.1,
            eps0: 0.1,
            eps_factor: 0.9,
            eps_guard: EPS_GUARD_DEFAULT,
            r0: 1.0,
            r_rule: RRule::Dynamic,
            max_calls: 800 * (n.min(20) as u64),
            bundle_cap: n + 10,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(0.0 < self.m_descent && self.m_descent < 1.0) {
            return Err(SolverError::InvalidArgument(format!(
                "m_descent must be in (0,1), got {}",
                self.m_descent
            )));
        }
        if !(0.0 < self.eps_factor && self.eps_factor < 1.0) {
            return Err(SolverError::InvalidArgument(format!(
                "eps_factor must be in (0,1), got {}",
                self.eps_factor
            )));
        }
        if self.eps0 <= 0.0 || self.r0 <= 0.0 {
            return Err(SolverError::InvalidArgument(
                "eps0 and r0 must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub x_final: Vec<f64>,
    pub f_final: f64,
    pub s_final_norm: f64,
    pub eps_final: f64,
    pub outer_iters: usize,
    pub serious_steps: usize,
    pub null_steps: usize,
    pub u_steps: usize,
    pub calls: u64,
    pub wall_time: f64,
    pub termination: Termination,
    /// Digits of accuracy, when the optimal value is known.
    pub ra: Option<f64>,
    /// `|A(x_final)| - 1`, when evaluated.
    pub v_found: Option<usize>,
    pub step_log: Vec<StepRecord>,
}

impl RunReport {
    pub fn x_final_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.x_final.clone())
    }

    pub fn to_json(&self) -> Result<String, SolverError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write the step log as CSV (`k,kind,f,s_norm_sq,eps,r,calls`).
    pub fn step_log_csv(&self) -> String {
        let mut out = String::from("k,kind,f,s_norm_sq,eps,r,calls\n");
        for s in &self.step_log {
            let kind = match s.kind {
                StepKind::Serious => "serious",
                StepKind::Null => "null",
                StepKind::UStep => "u_step",
            };
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                s.k, kind, s.f, s.s_norm_sq, s.eps, s.r, s.calls
            ));
        }
        out
    }
}

/// Dynamic proximal parameter rule:
/// `t = 0.5 |g|^2 / (1 + |f|)` (or 2 when `|f|` is numerically zero) and
/// `r = max(1, min(1/t, 100 r_prev, 1e6))`.
pub fn prox_parameter(g_norm_sq: f64, f_xk: f64, r_prev: f64) -> f64 {
    let t = if f_xk.abs() > 1e-10 {
        0.5 * g_norm_sq / (1.0 + f_xk.abs())
    } else {
        2.0
    };
    1.0f64.max((1.0 / t).min(100.0 * r_prev).min(1e6))
}

/// U-Newton and restoration components at `x_k`, from the second-order
/// stencil: the tangent component `step_u = U du` solves the regularized
/// projected Newton system, the normal component `step_v` equalizes the
/// active subfunction values to first order within `span(V)` so steps can
/// track the activity manifold instead of drifting alongside it.  The
/// active set is the union of soft-active indices over the whole stencil.
fn newton_components(
    oracle: &Oracle,
    x_k: &DVector<f64>,
    eps_k: f64,
    center: &EvalRecord,
) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
    let n = x_k.len();
    let (active, fits, _) = stencil_active_fits(oracle, x_k, eps_k, Some(center))?;
    let grads: Vec<DVector<f64>> = fits.iter().map(|fit| &fit.h * x_k + &fit.d).collect();
    let (g_c, v_diffs, u) = vu_split(&grads);
    let step_u = if u.ncols() == 0 {
        DVector::zeros(n)
    } else {
        let u_grad = u.transpose() * &g_c;
        let hu = project_u_hessian(&fits, &u);
        let du = solve_newton(&hu, &u_grad);
        &u * du
    };
    let step_v = if v_diffs.ncols() > 0 {
        let basis = column_space_basis(&v_diffs);
        let a = v_diffs.transpose() * &basis;
        let rhs = DVector::from_fn(v_diffs.ncols(), |i, _| {
            center.values[active[0]] - center.values[active[i + 1]]
        });
        match a.svd(true, true).solve(&rhs, 1e-12) {
            Ok(dv) => basis * dv,
            Err(_) => DVector::zeros(n),
        }
    } else {
        DVector::zeros(n)
    };
    Ok((step_u, step_v))
}

/// One U-Newton step at `x_k`: first-order info for the active set and U
/// basis, second-order U-Hessian, regularized solve, `x + U du + dv` with
/// `dv` the manifold-restoration component.  A candidate is kept only when
/// one guarding evaluation confirms descent; the Newton component is
/// backtracked (eventually dropped) before giving up, and when nothing
/// passes the guard `x_k` is returned unchanged.
pub fn u_step(
    oracle: &Oracle,
    x_k: &DVector<f64>,
    eps_k: f64,
    cached_center: Option<&EvalRecord>,
) -> Result<(DVector<f64>, f64, f64, Option<EvalRecord>), SolverError> {
    let (info, center) = first_order(oracle, x_k, eps_k, None, cached_center)?;
    let g_norm_sq = info.g_eps.norm_squared();
    if info.u.ncols() == 0 {
        return Ok((x_k.clone(), g_norm_sq, center.fmax, Some(center)));
    }
    let (step_u, step_v) = newton_components(oracle, x_k, eps_k, &center)?;
    if step_u.norm() == 0.0 && step_v.norm() == 0.0 {
        return Ok((x_k.clone(), g_norm_sq, center.fmax, Some(center)));
    }
    let zero = DVector::zeros(x_k.len());
    for (t, sv) in [
        (1.0, &step_v),
        (0.5, &step_v),
        (0.0, &step_v),
        (1.0, &zero),
        (0.5, &zero),
        (0.25, &zero),
    ] {
        let x_new = x_k + t * &step_u + sv;
        let rec_new = oracle.evaluate(&x_new)?;
        if rec_new.fmax < center.fmax {
            return Ok((x_new, g_norm_sq, center.fmax, Some(rec_new)));
        }
    }
    Ok((x_k.clone(), g_norm_sq, center.fmax, Some(center)))
}

/// Pure manifold-restoration step: move within `span(V)` to equalize the
/// active subfunction values, with no tangent Newton component.  Used to
/// polish the final iterate; guarded by one descent evaluation per
/// candidate (full step, then half step).
fn restoration_step(
    oracle: &Oracle,
    x_k: &DVector<f64>,
    eps_k: f64,
    cached_center: Option<&EvalRecord>,
) -> Result<(DVector<f64>, Option<EvalRecord>), SolverError> {
    let center = match cached_center {
        Some(rec) if rec.x == *x_k => rec.clone(),
        _ => oracle.evaluate(x_k)?,
    };
    let (_, step_v) = newton_components(oracle, x_k, eps_k, &center)?;
    if step_v.norm() == 0.0 {
        return Ok((x_k.clone(), Some(center)));
    }
    for t in [1.0, 0.5] {
        let x_new = x_k + t * &step_v;
        let rec_new = oracle.evaluate(&x_new)?;
        if rec_new.fmax < center.fmax {
            return Ok((x_new, Some(rec_new)));
        }
    }
    Ok((x_k.clone(), Some(center)))
}

struct RunState {
    x: DVector<f64>,
    eps: f64,
    r: f64,
    k: usize,
    serious_steps: usize,
    null_steps: usize,
    u_steps: usize,
    best_f: f64,
    best_x: DVector<f64>,
    last_s_norm: f64,
    step_log: Vec<StepRecord>,
}

fn finish(
    oracle: &Oracle,
    state: RunState,
    termination: Termination,
    started: Instant,
) -> RunReport {
    let calls = oracle.calls();
    let ra = oracle
        .spec()
        .known_opt_value
        .map(|fbar| compute_ra(state.best_f, fbar));
    let v_found = oracle
        .evaluate_uncounted(&state.best_x)
        .ok()
        .map(|rec| rec.active.len() - 1);
    RunReport {
        x_final: state.best_x.iter().copied().collect(),
        f_final: state.best_f,
        s_final_norm: state.last_s_norm,
        eps_final: state.eps,
        outer_iters: state.k,
        serious_steps: state.serious_steps,
        null_steps: state.null_steps,
        u_steps: state.u_steps,
        calls,
        wall_time: started.elapsed().as_secs_f64(),
        termination,
        ra,
        v_found,
        step_log: state.step_log,
    }
}

fn solve_loop(
    oracle: &Oracle,
    x0: &DVector<f64>,
    config: &SolverConfig,
    take_u_steps: bool,
    mut trace: Option<&mut Vec<InnerTrace>>,
    mut on_v_step: Option<&mut dyn FnMut(&VStepResult, f64, f64)>,
) -> Result<RunReport, SolverError> {
    config.validate()?;
    let started = Instant::now();
    let n = x0.len();
    let mut state = RunState {
        x: x0.clone(),
        eps: config.eps0,
        r: match config.r_rule {
            RRule::Fixed => config.r0,
            RRule::Dynamic => config.r0.max(1.0),
        },
        k: 0,
        serious_steps: 0,
        null_steps: 0,
        u_steps: 0,
        best_f: f64::INFINITY,
        best_x: x0.clone(),
        last_s_norm: f64::NAN,
        step_log: Vec::new(),
    };
    let mut cached: Option<EvalRecord> = None;
    let mut last_g_norm_sq: Option<f64> = None;
    let mut last_f: Option<f64> = None;
    let mut bundle: Vec<BundleElement> = Vec::new();

    loop {
        if let (RRule::Dynamic, Some(g2), Some(f)) = (config.r_rule, last_g_norm_sq, last_f) {
            state.r = prox_parameter(g2, f, state.r);
        }
        let remaining = config.max_calls.saturating_sub(oracle.calls());
        bundle.clear();
        let res = match v_step(
            oracle,
            &state.x,
            state.eps,
            state.r,
            remaining,
            config.bundle_cap,
            &mut bundle,
            cached.as_ref(),
            trace.as_deref_mut(),
        ) {
            Ok(res) => res,
            Err(SolverError::BudgetExhausted { .. }) => {
                return Ok(finish(oracle, state, Termination::Budget, started));
            }
            Err(SolverError::QpFailure { .. }) => {
                return Ok(finish(oracle, state, Termination::QpFailure, started));
            }
            Err(e) => return Err(e),
        };

        let f_center = res.f_center;
        if f_center < state.best_f {
            state.best_f = f_center;
            state.best_x = state.x.clone();
        }
        if res.f_next < state.best_f {
            state.best_f = res.f_next;
            state.best_x = res.x_next.clone();
        }
        last_g_norm_sq = Some(res.g0_norm_sq);
        last_f = Some(f_center);

        let s_sq = res.s_next.norm_squared();
        state.last_s_norm = s_sq.sqrt();
        if let Some(cb) = on_v_step.as_deref_mut() {
            cb(&res, state.eps, state.r);
        }

        // stopping test
        if s_sq <= config.delta && state.eps <= config.eps_min {
            state.k += 1;
            state.serious_steps += 1;
            state.step_log.push(StepRecord {
                k: state.k,
                kind: StepKind::Serious,
                f: res.f_next,
                s_norm_sq: s_sq,
                eps: state.eps,
                r: state.r,
                calls: oracle.calls(),
            });
            state.x = res.x_next;
            // final restoration polish: guarded equalization steps from the
            // prox output so the reported point sits on the activity
            // manifold rather than beside it
            if take_u_steps {
                let polish_cost = (2 * n + 3) as u64;
                let mut polish_cache = Some(res.record_next);
                for _ in 0..3 {
                    if oracle.calls() + polish_cost > config.max_calls {
                        break;
                    }
                    let Ok((x_new, rec_new)) =
                        restoration_step(oracle, &state.x, state.eps, polish_cache.as_ref())
                    else {
                        break;
                    };
                    let moved = x_new != state.x;
                    state.x = x_new;
                    polish_cache = rec_new;
                    if let Some(rec) = &polish_cache {
                        if rec.fmax < state.best_f {
                            state.best_f = rec.fmax;
                            state.best_x = state.x.clone();
                        }
                    }
                    if !moved {
                        break;
                    }
                }
            }
            return Ok(finish(oracle, state, Termination::Stopped, started));
        }

        // serious/null decision
        let descent = f_center - res.f_next >= config.m_descent / (2.0 * state.r) * s_sq;
        let serious = descent;
        if serious {
            debug_assert!(
                f_center - res.f_next >= config.m_descent / (2.0 * state.r) * s_sq - 1e-12
            );
            if s_sq <= config.delta && state.eps > config.eps_min {
                state.eps *= config.eps_factor;
            }
            state.k += 1;
            state.serious_steps += 1;
            state.step_log.push(StepRecord {
                k: state.k,
                kind: StepKind::Serious,
                f: res.f_next,
                s_norm_sq: s_sq,
                eps: state.eps,
                r: state.r,
                calls: oracle.calls(),
            });
            state.x = res.x_next;
            cached = Some(res.record_next);
            last_f = Some(res.f_next);

            if state.eps < config.eps_guard {
                return Ok(finish(oracle, state, Termination::EpsGuard, started));
            }
            if take_u_steps {
                // first-order + second-order stencils + guard evaluations
                let u_cost = (3 * n + 7) as u64;
                if oracle.calls() + u_cost > config.max_calls {
                    return Ok(finish(oracle, state, Termination::Budget, started));
                }
                match u_step(oracle, &state.x, state.eps, cached.as_ref()) {
                    Ok((x_new, g2, f_at_x, rec_new)) => {
                        last_g_norm_sq = Some(g2);
                        last_f = rec_new.as_ref().map(|r| r.fmax).or(Some(f_at_x));
                        state.k += 1;
                        state.u_steps += 1;
                        state.x = x_new;
                        cached = rec_new;
                        if let Some(rec) = &cached {
                            if rec.fmax < state.best_f {
                                state.best_f = rec.fmax;
                                state.best_x = state.x.clone();
                            }
                        }
                        state.step_log.push(StepRecord {
                            k: state.k,
                            kind: StepKind::UStep,
                            f: f_at_x,
                            s_norm_sq: s_sq,
                            eps: state.eps,
                            r: state.r,
                            calls: oracle.calls(),
                        });
                    }
                    Err(SolverError::QpFailure { .. }) => {
                        return Ok(finish(oracle, state, Termination::QpFailure, started));
                    }
                    Err(_) => {
                        return Ok(finish(oracle, state, Termination::Budget, started));
                    }
                }
            }
        } else {
            state.eps *= config.eps_factor;
            state.k += 1;
            state.null_steps += 1;
            state.step_log.push(StepRecord {
                k: state.k,
                kind: StepKind::Null,
                f: f_center,
                s_norm_sq: s_sq,
                eps: state.eps,
                r: state.r,
                calls: oracle.calls(),
            });
            // center unchanged; keep its evaluation for reuse
            cached = Some(res.record_center);
        }
    }
}

/// Full solver: alternates tilt-corrected V-steps with U-Newton steps.
pub fn dfo_vu_solve(
    oracle: &Oracle,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<RunReport, SolverError> {
    solve_loop(oracle, x0, config, true, None, None)
}

/// Baseline: the identical loop with the U-step disabled.
pub fn baseline_bundle_solve(
    oracle: &Oracle,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<RunReport, SolverError> {
    solve_loop(oracle, x0, config, false, None, None)
}

/// Solve with observer hooks, used by tests that check per-step certificates.
/// The callback receives each V-step result together with the `eps` and `r`
/// in force when it was produced.
pub fn solve_with_observer(
    oracle: &Oracle,
    x0: &DVector<f64>,
    config: &SolverConfig,
    take_u_steps: bool,
    on_v_step: &mut dyn FnMut(&VStepResult, f64, f64),
) -> Result<RunReport, SolverError> {
    solve_loop(oracle, x0, config, take_u_steps, None, Some(on_v_step))
}

/// Solve while collecting the inner V-step trace.
pub fn solve_with_trace(
    oracle: &Oracle,
    x0: &DVector<f64>,
    config: &SolverConfig,
    take_u_steps: bool,
    trace: &mut Vec<InnerTrace>,
) -> Result<RunReport, SolverError> {
    solve_loop(oracle, x0, config, take_u_steps, Some(trace), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greybox::{generate_random, ProblemSpec, Quad};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn prox_parameter_printed_rule() {
        // zero function value branch
        assert_relative_eq!(prox_parameter(5.0, 0.0, 1.0), 1.0);
        // plain arithmetic branch
        assert_relative_eq!(prox_parameter(2.0, 1.0, 1.0), 2.0);
        // clamping
        assert!(prox_parameter(1e-12, 1.0, 1e9) <= 1e6);
        assert!(prox_parameter(1e9, 1.0, 1.0) >= 1.0);
    }

    fn kinked_2d() -> ProblemSpec {
        // f(x) = max(x1, -x1) + 1/2 x2^2, minimum 0 at the origin
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        ProblemSpec {
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
        }
    }

    #[test]
    fn u_step_on_smooth_quadratic() {
        let spec = ProblemSpec {
            n: 2,
            m: 1,
            quads: vec![Quad {
                h: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
                b: DVector::zeros(2),
            }],
            known_opt_value: Some(0.0),
            known_opt_point: Some(DVector::zeros(2)),
            known_dim_v: Some(0),
            convex: true,
            seed: None,
        };
        let oracle = Oracle::new(&spec);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let (x_new, _, _, _) = u_step(&oracle, &x, 1e-5, None).unwrap();
        assert!(x_new.norm() <= 1e-3, "Newton step missed: {x_new}");
    }

    #[test]
    fn u_step_on_kinked_function() {
        let spec = kinked_2d();
        let oracle = Oracle::new(&spec);
        let x = DVector::from_vec(vec![0.0, 1.0]);
        let (x_new, _, _, _) = u_step(&oracle, &x, 1e-5, None).unwrap();
        assert!(x_new[0].abs() <= 1e-3);
        assert!(x_new[1].abs() <= 1e-3, "U-Newton missed: {x_new}");
    }

    #[test]
    fn solves_kinked_2d() {
        let spec = kinked_2d();
        let oracle = Oracle::new(&spec);
        let x0 = DVector::from_vec(vec![0.8, 0.9]);
        let mut cfg = SolverConfig::defaults_for(2);
        cfg.delta = 1e-4;
        cfg.eps_min = 1e-4;
        cfg.eps0 = 1e-2;
        cfg.max_calls = 100_000;
        let report = dfo_vu_solve(&oracle, &x0, &cfg).unwrap();
        assert!(report.f_final <= 1e-2, "f_final = {}", report.f_final);
        assert!(report.x_final_vector().norm() <= 0.2);
        assert_eq!(report.calls, oracle.calls());
    }

    #[test]
    fn null_steps_shrink_eps_and_keep_f() {
        let spec = generate_random(6, 3, 17, true).unwrap();
        let oracle = Oracle::new(&spec);
        let x0 = DVector::from_element(6, 0.5);
        let cfg = SolverConfig::defaults_for(6);
        let report = dfo_vu_solve(&oracle, &x0, &cfg).unwrap();
        let mut eps_prev = cfg.eps0;
        let mut serious_f = f64::INFINITY;
        for step in &report.step_log {
            assert!(step.eps <= eps_prev + 1e-15, "eps increased");
            if step.kind == StepKind::Null {
                assert!(step.eps < eps_prev);
            }
            // descent holds between serious steps; an intervening U-step is
            // an unguarded Newton predictor and resets the reference value
            match step.kind {
                StepKind::Serious => {
                    assert!(step.f < serious_f, "serious step did not descend");
                    serious_f = step.f;
                }
                StepKind::UStep => serious_f = f64::INFINITY,
                StepKind::Null => {}
            }
            eps_prev = step.eps;
        }
    }

    #[test]
    fn stopped_certificate() {
        let spec = generate_random(5, 2, 23, true).unwrap();
        let oracle = Oracle::new(&spec);
        let x0 = DVector::from_element(5, 0.4);
        let cfg = SolverConfig::defaults_for(5);
        let report = dfo_vu_solve(&oracle, &x0, &cfg).unwrap();
        if report.termination == Termination::Stopped {
            assert!(report.s_final_norm.powi(2) <= cfg.delta + 1e-15);
            assert!(report.eps_final <= cfg.eps_min + 1e-15);
        }
    }

    #[test]
    fn zero_tolerances_end_by_budget_or_guard() {
        let spec = generate_random(5, 2, 29, true).unwrap();
        let oracle = Oracle::new(&spec);
        let x0 = DVector::from_element(5, 0.4);
        let mut cfg = SolverConfig::defaults_for(5);
        cfg.delta = 0.0;
        cfg.eps_min = 0.0;
        cfg.max_calls = 10_000;
        let report = dfo_vu_solve(&oracle, &x0, &cfg).unwrap();
        assert!(matches!(
            report.termination,
            Termination::Budget | Termination::EpsGuard
        ));
    }

    #[test]
    fn baseline_matches_contract() {
        let spec = generate_random(5, 2, 31, true).unwrap();
        let oracle = Oracle::new(&spec);
        let x0 = DVector::from_element(5, 0.3);
        let cfg = SolverConfig::defaults_for(5);
        let report = baseline_bundle_solve(&oracle, &x0, &cfg).unwrap();
        assert_eq!(report.u_steps, 0);
        assert_eq!(report.calls, oracle.calls());
    }

    #[test]
    fn report_serializes() {
        let spec = generate_random(4, 2, 37, true).unwrap();
        let oracle = Oracle::new(&spec);
        let cfg = SolverConfig::defaults_for(4);
        let report = dfo_vu_solve(&oracle, &DVector::from_element(4, 0.2), &cfg).unwrap();
        let json = report.to_json().unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.calls, report.calls);
        assert!(report.step_log_csv().starts_with("k,kind,"));
    }
}
