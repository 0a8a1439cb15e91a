//! Benchmark machinery: accuracy metrics, battery runner over generated
//! problem cells, accuracy profiles and report/summary persistence.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{baseline_bundle_solve, dfo_vu_solve, RunReport, SolverConfig, Termination};
use crate::error::SolverError;
use crate::greybox::{generate_random, Oracle};

/// Digits of accuracy: `max[0, -log10 max(1e-16, (f_found - f_bar)/(1+|f_bar|))]`.
pub fn compute_ra(f_found: f64, f_bar: f64) -> f64 {
    let ratio = ((f_found - f_bar) / (1.0 + f_bar.abs())).max(1e-16);
    (-ratio.log10()).max(0.0)
}

/// `|A(x_found)| - 1` from a single (counted) oracle evaluation.
pub fn compute_v_found(oracle: &Oracle, x_found: &DVector<f64>) -> Result<usize, SolverError> {
    let rec = oracle.evaluate(x_found)?;
    Ok(rec.active.len() - 1)
}

/// Floor applied to RA before forming the `1/RA` profile resource.
pub const PROFILE_RA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dfovu,
    Baseline,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Dfovu => "dfovu",
            SolverKind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub dims: Vec<usize>,
    /// Target V-dimension as a fraction of n; `dim_v = round(frac * n)`
    /// clamped to `[1, n-1]`.
    pub vdim_fractions: Vec<f64>,
    pub instances_per_cell: usize,
    /// Starts per instance, components uniform in [-1, 1].
    pub starts_per_instance: usize,
    /// Overrides the default budget `800 min(n, 20)` when set.
    pub max_calls: Option<u64>,
    pub solvers: Vec<SolverKind>,
    pub convex: bool,
    pub seed: u64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            dims: vec![10],
            vdim_fractions: vec![0.25, 0.5, 0.75],
            instances_per_cell: 5,
            starts_per_instance: 2,
            max_calls: None,
            solvers: vec![SolverKind::Dfovu, SolverKind::Baseline],
            convex: true,
            seed: 0,
        }
    }
}

impl BatteryConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if self.vdim_fractions.iter().any(|&f| !(0.0 < f && f < 1.0)) {
            return Err(SolverError::InvalidArgument(
                "vdim fractions must lie in (0,1)".into(),
            ));
        }
        if self.instances_per_cell == 0
            || self.starts_per_instance == 0
            || self.dims.is_empty()
            || self.solvers.is_empty()
        {
            return Err(SolverError::InvalidArgument(
                "battery counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub fn vdim_for(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64).round() as usize;
    raw.clamp(1, n - 1)
}

/// One (instance, start, solver) run with its identifying coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryRun {
    pub instance_id: usize,
    pub start_id: usize,
    pub solver: SolverKind,
    pub n: usize,
    pub dim_v: usize,
    pub problem_seed: u64,
    pub failed: bool,
    pub report: RunReport,
}

/// Mean-RA rows grouped by the relative V-dimension bands
/// (0,15%), [15,30%), [30,45%), [45,60%), [60,100%).
pub const VDIM_BANDS: [(f64, f64); 5] = [
    (0.0, 0.15),
    (0.15, 0.30),
    (0.30, 0.45),
    (0.45, 0.60),
    (0.60, 1.0),
];

fn band_index(dim_v: usize, n: usize) -> usize {
    let frac = dim_v as f64 / n as f64;
    for (i, &(lo, hi)) in VDIM_BANDS.iter().enumerate() {
        if (i == 0 && frac > lo && frac < hi) || (i > 0 && frac >= lo && frac < hi) {
            return i;
        }
    }
    VDIM_BANDS.len() - 1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: SolverKind,
    pub runs: usize,
    pub failures: usize,
    pub mean_ra: f64,
    /// Mean RA per V-dimension band (`None` where the band is empty).
    pub mean_ra_by_band: Vec<Option<f64>>,
    /// v_found hit counts at distances 0 / <=1 / <=2 / <=5 from known dim V.
    pub vfound_exact: usize,
    pub vfound_within1: usize,
    pub vfound_within2: usize,
    pub vfound_within5: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryOutput {
    pub runs: Vec<BatteryRun>,
    pub summaries: Vec<SolverSummary>,
}

fn run_one(
    oracle: &Oracle,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
    solver: SolverKind,
) -> Result<RunReport, SolverError> {
    match solver {
        SolverKind::Dfovu => dfo_vu_solve(oracle, x0, cfg),
        SolverKind::Baseline => baseline_bundle_solve(oracle, x0, cfg),
    }
}

/// Runs every (instance, start, solver) triple of the battery, deterministic
/// given the seed, ordered by (instance id, start id, solver id).
pub fn run_battery(config: &BatteryConfig) -> Result<BatteryOutput, SolverError> {
    config.validate()?;
    let mut runs = Vec::new();
    let mut instance_id = 0usize;
    for &n in &config.dims {
        for &frac in &config.vdim_fractions {
            let dim_v = vdim_for(n, frac);
            for inst in 0..config.instances_per_cell {
                let problem_seed = config
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((instance_id as u64) * 97 + inst as u64);
                let spec = generate_random(n, dim_v, problem_seed, config.convex)?;
                for start_id in 0..config.starts_per_instance {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        problem_seed.wrapping_add(0x9e37_79b9).wrapping_add(start_id as u64),
                    );
                    let x0 =
                        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                    for &solver in &config.solvers {
                        let oracle = Oracle::new(&spec);
                        let mut cfg = SolverConfig::defaults_for(n);
                        cfg.seed = problem_seed;
                        if let Some(mc) = config.max_calls {
                            cfg.max_calls = mc;
                        }
                        let report = run_one(&oracle, &x0, &cfg, solver)?;
                        let failed = matches!(
                            report.termination,
                            Termination::Budget | Termination::QpFailure
                        );
                        runs.push(BatteryRun {
                            instance_id,
                            start_id,
                            solver,
                            n,
                            dim_v,
                            problem_seed,
                            failed,
                            report,
                        });
                    }
                }
                instance_id += 1;
            }
        }
    }
    let summaries = summarize(&runs, &config.solvers);
    Ok(BatteryOutput { runs, summaries })
}

fn summarize(runs: &[BatteryRun], solvers: &[SolverKind]) -> Vec<SolverSummary> {
    solvers
        .iter()
        .map(|&solver| {
            let mine: Vec<&BatteryRun> = runs.iter().filter(|r| r.solver == solver).collect();
            let ras: Vec<f64> = mine
                .iter()
                .map(|r| r.report.ra.unwrap_or(0.0))
                .collect();
            let mean_ra = if ras.is_empty() {
                0.0
            } else {
                ras.iter().sum::<f64>() / ras.len() as f64
            };
            let mut band_sums = vec![(0.0f64, 0usize); VDIM_BANDS.len()];
            for r in &mine {
                let b = band_index(r.dim_v, r.n);
                band_sums[b].0 += r.report.ra.unwrap_or(0.0);
                band_sums[b].1 += 1;
            }
            let mean_ra_by_band = band_sums
                .iter()
                .map(|&(s, c)| if c > 0 { Some(s / c as f64) } else { None })
                .collect();
            let mut exact = 0;
            let (mut w1, mut w2, mut w5) = (0, 0, 0);
            for r in &mine {
                if let Some(v) = r.report.v_found {
                    let d = (v as i64 - r.dim_v as i64).unsigned_abs() as usize;
                    if d == 0 {
                        exact += 1;
                    }
                    if d <= 1 {
                        w1 += 1;
                    }
                    if d <= 2 {
                        w2 += 1;
                    }
                    if d <= 5 {
                        w5 += 1;
                    }
                }
            }
            SolverSummary {
                solver,
                runs: mine.len(),
                failures: mine.iter().filter(|r| r.failed).count(),
                mean_ra,
                mean_ra_by_band,
                vfound_exact: exact,
                vfound_within1: w1,
                vfound_within2: w2,
                vfound_within5: w5,
            }
        })
        .collect()
}

/// Per-solver accuracy-profile curve: points `(theta, phi_s(theta))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileData {
    pub solvers: Vec<String>,
    pub curves: Vec<Vec<(f64, f64)>>,
}

/// Builds accuracy profiles from per-solver RA lists aligned over the same
/// instance set.  Resource is `1 / max(RA, 1e-3)`; per instance each solver's
/// ratio is its resource over the instance-best resource; `phi_s(theta)` is
/// the fraction of instances with ratio at most `theta`.
pub fn compute_profiles(
    solver_names: &[String],
    ras_per_solver: &[Vec<f64>],
) -> Result<ProfileData, SolverError> {
    if solver_names.len() != ras_per_solver.len() || solver_names.is_empty() {
        return Err(SolverError::InvalidArgument(
            "one RA list per solver required".into(),
        ));
    }
    let n_inst = ras_per_solver[0].len();
    if ras_per_solver.iter().any(|v| v.len() != n_inst) || n_inst == 0 {
        return Err(SolverError::InvalidArgument(
            "all solvers must cover the same nonempty instance set".into(),
        ));
    }
    let resources: Vec<Vec<f64>> = ras_per_solver
        .iter()
        .map(|ras| ras.iter().map(|&ra| 1.0 / ra.max(PROFILE_RA_FLOOR)).collect())
        .collect();
    let mut ratios: Vec<Vec<f64>> = vec![Vec::with_capacity(n_inst); solver_names.len()];
    for i in 0..n_inst {
        let best = resources
            .iter()
            .map(|r| r[i])
            .fold(f64::INFINITY, f64::min);
        for (s, r) in resources.iter().enumerate() {
            ratios[s].push(r[i] / best);
        }
    }
    let mut thetas: Vec<f64> = ratios.iter().flatten().copied().collect();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let curves = ratios
        .iter()
        .map(|rs| {
            thetas
                .iter()
                .map(|&t| {
                    let phi =
                        rs.iter().filter(|&&x| x <= t + 1e-12).count() as f64 / n_inst as f64;
                    (t, phi)
                })
                .collect()
        })
        .collect();
    Ok(ProfileData {
        solvers: solver_names.to_vec(),
        curves,
    })
}

impl BatteryOutput {
    /// Per-solver RA lists in shared (instance, start) order, for profiles.
    pub fn ras_by_solver(&self, solvers: &[SolverKind]) -> Vec<Vec<f64>> {
        solvers
            .iter()
            .map(|&s| {
                self.runs
                    .iter()
                    .filter(|r| r.solver == s)
                    .map(|r| r.report.ra.unwrap_or(0.0))
                    .collect()
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "solver,runs,failures,mean_ra,band0,band1,band2,band3,band4,\
             vfound_exact,vfound_within1,vfound_within2,vfound_within5\n",
        );
        for s in &self.summaries {
            let bands: Vec<String> = s
                .mean_ra_by_band
                .iter()
                .map(|b| b.map_or(String::new(), |v| format!("{v:.6}")))
                .collect();
            out.push_str(&format!(
                "{},{},{},{:.6},{},{},{},{},{},{},{},{},{}\n",
                s.solver.name(),
                s.runs,
                s.failures,
                s.mean_ra,
                bands[0],
                bands[1],
                bands[2],
                bands[3],
                bands[4],
                s.vfound_exact,
                s.vfound_within1,
                s.vfound_within2,
                s.vfound_within5,
            ));
        }
        out
    }
}

impl ProfileData {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("solver,theta,phi\n");
        for (name, curve) in self.solvers.iter().zip(&self.curves) {
            for &(t, p) in curve {
                out.push_str(&format!("{name},{t:.10},{p:.10}\n"));
            }
        }
        out
    }

    /// Self-contained SVG plot: theta on the x axis, phi on the y axis, one
    /// polyline per solver.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 420.0, 50.0);
        let t_max = self
            .curves
            .iter()
            .flatten()
            .map(|&(t, _)| t)
            .fold(1.0f64, f64::max);
        let sx = |t: f64| pad + (t - 1.0) / (t_max - 1.0).max(1e-12) * (w - 2.0 * pad);
        let sy = |p: f64| h - pad - p * (h - 2.0 * pad);
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <line x1=\"{pad}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
             <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y0}\" stroke=\"black\"/>\n\
             <text x=\"{xm}\" y=\"{yl}\" text-anchor=\"middle\" font-size=\"13\">theta</text>\n\
             <text x=\"14\" y=\"{ym}\" text-anchor=\"middle\" font-size=\"13\" \
             transform=\"rotate(-90 14 {ym})\">phi</text>\n",
            y0 = h - pad,
            x1 = w - pad,
            xm = w / 2.0,
            yl = h - 12.0,
            ym = h / 2.0,
        );
        for (i, (name, curve)) in self.solvers.iter().zip(&self.curves).enumerate() {
            let mut points = String::new();
            let mut prev: Option<(f64, f64)> = None;
            for &(t, p) in curve {
                // step curve: hold phi until the next theta
                if let Some((_, pp)) = prev {
                    points.push_str(&format!("{:.2},{:.2} ", sx(t), sy(pp)));
                }
                points.push_str(&format!("{:.2},{:.2} ", sx(t), sy(p)));
                prev = Some((t, p));
            }
            let color = colors[i % colors.len()];
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" \
                 points=\"{points}\"/>\n\
                 <text x=\"{x}\" y=\"{y}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
                x = w - pad + 4.0 - 80.0,
                y = pad + 16.0 * (i as f64 + 1.0),
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}
