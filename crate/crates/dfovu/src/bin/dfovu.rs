use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dfovu::bench::{compute_profiles, run_battery, BatteryConfig, BatteryRun};
use dfovu::driver::{solve_with_trace, RRule, Termination};
use dfovu::{Oracle, ProblemSpec, SolverConfig};

#[derive(Parser)]
#[command(name = "dfovu", about = "Derivative-free VU solver for finite-max grey-box functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random max-of-quadratics problem file.
    Generate(GenerateArgs),
    /// Solve one problem and write a JSON run report.
    Solve(SolveArgs),
    /// Run a problem battery from a JSON config.
    Bench(BenchArgs),
    /// Build accuracy profiles from a directory of run reports.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dimv: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    nonconvex: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    /// "rand" or a JSON file holding the start vector.
    #[arg(long, default_value = "rand")]
    x0: String,
    #[arg(long, default_value = "dfovu")]
    solver: String,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long = "eps-min")]
    eps_min: Option<f64>,
    #[arg(long = "eps-factor")]
    eps_factor: Option<f64>,
    #[arg(long = "m-descent")]
    m_descent: Option<f64>,
    #[arg(long = "max-calls")]
    max_calls: Option<u64>,
    /// "dynamic" or a fixed numeric value.
    #[arg(long)]
    r: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn usage_err(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn run_err(msg: &str) -> ExitCode {
    eprintln!("run failure: {msg}");
    ExitCode::from(1)
}

fn cmd_generate(a: &GenerateArgs) -> ExitCode {
    let spec = match dfovu::greybox::generate_random(a.n, a.dimv, a.seed, !a.nonconvex) {
        Ok(s) => s,
        Err(e) => return usage_err(&e.to_string()),
    };
    let json = match spec.to_json() {
        Ok(j) => j,
        Err(e) => return run_err(&e.to_string()),
    };
    if let Err(e) = fs::write(&a.out, json) {
        return run_err(&format!("writing {}: {e}", a.out.display()));
    }
    println!("wrote {} (n={}, dim_v={}, m={})", a.out.display(), a.n, a.dimv, spec.m);
    ExitCode::SUCCESS
}

fn load_x0(arg: &str, n: usize, seed: u64) -> Result<DVector<f64>, String> {
    if arg == "rand" {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return Ok(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)));
    }
    let text = fs::read_to_string(arg).map_err(|e| format!("reading {arg}: {e}"))?;
    let vals: Vec<f64> =
        serde_json::from_str(&text).map_err(|e| format!("parsing {arg}: {e}"))?;
    if vals.len() != n {
        return Err(format!("x0 has {} components, problem needs {n}", vals.len()));
    }
    Ok(DVector::from_vec(vals))
}

fn cmd_solve(a: &SolveArgs) -> ExitCode {
    let text = match fs::read_to_string(&a.problem) {
        Ok(t) => t,
        Err(e) => return usage_err(&format!("reading {}: {e}", a.problem.display())),
    };
    let spec = match ProblemSpec::from_json(&text) {
        Ok(s) => s,
        Err(e) => return usage_err(&e.to_string()),
    };
    let x0 = match load_x0(&a.x0, spec.n, a.seed) {
        Ok(x) => x,
        Err(e) => return usage_err(&e),
    };
    let mut cfg = SolverConfig::defaults_for(spec.n);
    cfg.seed = a.seed;
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.eps0 {
        cfg.eps0 = v;
    }
    if let Some(v) = a.eps_min {
        cfg.eps_min = v;
    }
    if let Some(v) = a.eps_factor {
        cfg.eps_factor = v;
    }
    if let Some(v) = a.m_descent {
        cfg.m_descent = v;
    }
    if let Some(v) = a.max_calls {
        cfg.max_calls = v;
    }
    if let Some(r) = &a.r {
        if r == "dynamic" {
            cfg.r_rule = RRule::Dynamic;
        } else {
            match r.parse::<f64>() {
                Ok(v) if v > 0.0 => {
                    cfg.r_rule = RRule::Fixed;
                    cfg.r0 = v;
                }
                _ => return usage_err("--r expects 'dynamic' or a positive number"),
            }
        }
    }
    let take_u_steps = match a.solver.as_str() {
        "dfovu" => true,
        "baseline" => false,
        other => return usage_err(&format!("unknown solver '{other}'")),
    };

    let oracle = Oracle::new(&spec);
    let mut trace = Vec::new();
    let report = match solve_with_trace(&oracle, &x0, &cfg, take_u_steps, &mut trace) {
        Ok(r) => r,
        Err(e) => return run_err(&e.to_string()),
    };
    let json = match report.to_json() {
        Ok(j) => j,
        Err(e) => return run_err(&e.to_string()),
    };
    if let Err(e) = fs::write(&a.report, json) {
        return run_err(&format!("writing {}: {e}", a.report.display()));
    }
    if let Some(path) = &a.trace {
        let mut csv = String::from("j,model_gap,s_norm,calls\n");
        for t in &trace {
            csv.push_str(&format!("{},{:.10e},{:.10e},{}\n", t.j, t.model_gap, t.s_norm, t.calls));
        }
        if let Err(e) = fs::write(path, csv) {
            return run_err(&format!("writing {}: {e}", path.display()));
        }
    }
    println!(
        "f_final = {:.12e}  calls = {}  termination = {:?}{}",
        report.f_final,
        report.calls,
        report.termination,
        report
            .ra
            .map(|ra| format!("  RA = {ra:.2}"))
            .unwrap_or_default()
    );
    match report.termination {
        Termination::Budget | Termination::QpFailure => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    }
}

fn cmd_bench(a: &BenchArgs) -> ExitCode {
    let text = match fs::read_to_string(&a.config) {
        Ok(t) => t,
        Err(e) => return usage_err(&format!("reading {}: {e}", a.config.display())),
    };
    let config: BatteryConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => return usage_err(&format!("parsing {}: {e}", a.config.display())),
    };
    if let Err(e) = fs::create_dir_all(&a.out_dir) {
        return run_err(&format!("creating {}: {e}", a.out_dir.display()));
    }
    let out = match run_battery(&config) {
        Ok(o) => o,
        Err(e) => return run_err(&e.to_string()),
    };
    for run in &out.runs {
        let name = format!(
            "run_{:03}_{:02}_{}.json",
            run.instance_id,
            run.start_id,
            run.solver.name()
        );
        let json = match serde_json::to_string_pretty(run) {
            Ok(j) => j,
            Err(e) => return run_err(&e.to_string()),
        };
        if let Err(e) = fs::write(a.out_dir.join(&name), json) {
            return run_err(&format!("writing {name}: {e}"));
        }
    }
    if let Err(e) = fs::write(a.out_dir.join("summary.csv"), out.summary_csv()) {
        return run_err(&format!("writing summary.csv: {e}"));
    }
    for s in &out.summaries {
        println!(
            "{:9}  runs {:3}  failures {:2}  mean RA {:.3}",
            s.solver.name(),
            s.runs,
            s.failures,
            s.mean_ra
        );
    }
    ExitCode::SUCCESS
}

fn load_runs(dir: &Path) -> Result<Vec<BatteryRun>, String> {
    let mut runs = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| format!("reading {}: {e}", dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json")
            || !path
                .file_name()
                .and_then(|f| f.to_str())
                .is_some_and(|f| f.starts_with("run_"))
        {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let run: BatteryRun =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        runs.push(run);
    }
    runs.sort_by_key(|r| (r.instance_id, r.start_id, r.solver.name()));
    Ok(runs)
}

fn cmd_profile(a: &ProfileArgs) -> ExitCode {
    let runs = match load_runs(&a.reports) {
        Ok(r) if !r.is_empty() => r,
        Ok(_) => return usage_err("no run_*.json reports found"),
        Err(e) => return usage_err(&e),
    };
    let mut solvers: Vec<&'static str> = Vec::new();
    for r in &runs {
        if !solvers.contains(&r.solver.name()) {
            solvers.push(r.solver.name());
        }
    }
    solvers.sort_unstable();
    let names: Vec<String> = solvers.iter().map(|s| s.to_string()).collect();
    let ras: Vec<Vec<f64>> = solvers
        .iter()
        .map(|&s| {
            runs.iter()
                .filter(|r| r.solver.name() == s)
                .map(|r| r.report.ra.unwrap_or(0.0))
                .collect()
        })
        .collect();
    let profiles = match compute_profiles(&names, &ras) {
        Ok(p) => p,
        Err(e) => return usage_err(&e.to_string()),
    };
    if let Err(e) = fs::write(&a.out, profiles.to_csv()) {
        return run_err(&format!("writing {}: {e}", a.out.display()));
    }
    if let Some(svg) = &a.svg {
        if let Err(e) = fs::write(svg, profiles.to_svg()) {
            return run_err(&format!("writing {}: {e}", svg.display()));
        }
    }
    println!("profiled {} runs over {} solvers", runs.len(), names.len());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Profile(a) => cmd_profile(a),
    }
}
