use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use shadow_price::config::RunConfig;
use shadow_price::output::{self, RunManifest};
use shadow_price::shadow::{default_anchor, ShadowEvaluator, ShadowState};
use shadow_price::sim::{mean_and_se, simulate, verify_martingales, verify_pathwise, TestEntry};
use shadow_price::suite::run_suite;
use shadow_price::value::{BoundaryReport, Normalization, SolutionSummary, VDerivs};
use shadow_price::{Error, ValueFunction};

/// Path rows above which `--emit-paths` is refused.
const MAX_EMITTED_ROWS: usize = 10_000_000;

#[derive(Parser)]
#[command(name = "shadow-price", version, about = "Shadow prices under proportional transaction costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration
    #[arg(long, global = true, env = "SHADOW_PRICE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "SHADOW_PRICE_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "SHADOW_PRICE_PATHS")]
    paths: Option<usize>,
    #[arg(long, global = true, env = "SHADOW_PRICE_DT")]
    dt: Option<f64>,
    #[arg(long, global = true, env = "SHADOW_PRICE_HORIZON")]
    horizon: Option<f64>,
    /// Relative tolerance of the ODE solver (absolute tolerance is 1% of it)
    #[arg(long, global = true, env = "SHADOW_PRICE_TOL")]
    tol: Option<f64>,
    #[arg(long, global = true, env = "SHADOW_PRICE_OUT", default_value = "out")]
    out: PathBuf,
    /// Write per-step path CSV (simulate only)
    #[arg(long, global = true, env = "SHADOW_PRICE_EMIT_PATHS")]
    emit_paths: bool,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "SHADOW_PRICE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the free boundary problem and write grids and the manifest
    Solve,
    /// Print every shadow-market quantity at one state as JSON
    Eval {
        /// Bond position
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        /// Stock position (value)
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
        /// Mid price
        #[arg(long, default_value_t = 1.0)]
        price: f64,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        /// Anchor bond position (default: geometric middle of the interval)
        #[arg(long, requires = "y0")]
        x0: Option<f64>,
        #[arg(long, requires = "x0")]
        y0: Option<f64>,
    },
    /// Simulate paths and write martingale and pathwise checks
    Simulate {
        #[arg(long)]
        antithetic: bool,
    },
    /// Run every check; exits with status 1 if any fails
    Verify,
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        let sim = &mut cfg.simulation;
        if let Some(s) = self.seed {
            sim.seed = s;
        }
        if let Some(n) = self.paths {
            sim.n_paths = n;
        }
        if let Some(dt) = self.dt {
            sim.dt = dt;
        }
        if let Some(h) = self.horizon {
            sim.horizon = h;
        }
        if let Some(tol) = self.tol {
            cfg.solver = cfg.solver.with_rtol(tol);
        }
    }
}

#[derive(Serialize)]
struct SolveOutput {
    summary: SolutionSummary,
    normalization: Normalization,
    boundary: BoundaryReport,
}

#[derive(Serialize)]
struct EvalOutput {
    anchor: (f64, f64),
    state: ShadowState,
    derivatives: VDerivs,
}

#[derive(Serialize)]
struct Estimate {
    mean: f64,
    standard_error: f64,
}

#[derive(Serialize)]
struct SimulateOutput {
    n_paths: usize,
    dt: f64,
    n_steps: usize,
    m0: f64,
    v0: f64,
    density: Estimate,
    shadow_value: Estimate,
    bellman: Estimate,
    mean_cum_buy: f64,
    mean_cum_sell: f64,
    passed: bool,
    entries: Vec<TestEntry>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.apply(&mut cfg);
    if let Command::Simulate { antithetic: true } = cli.command {
        cfg.simulation.antithetic = true;
    }
    let params = cfg.validate()?;
    if c.emit_paths {
        let rows = cfg.simulation.n_paths * (cfg.simulation.n_steps() + 1);
        if rows > MAX_EMITTED_ROWS {
            return Err(Error::Config(format!(
                "--emit-paths would write {rows} rows (limit {MAX_EMITTED_ROWS}); lower --paths or raise --dt"
            )));
        }
    }
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let vf = ValueFunction::solve(&params, &cfg.solver)?;
    let out = c.out.as_path();
    match &cli.command {
        Command::Solve => solve(&vf, &cfg, out),
        Command::Eval { x, y, price, t, x0, y0 } => {
            let anchor = match (x0, y0) {
                (Some(a), Some(b)) => (*a, *b),
                _ => default_anchor(&vf),
            };
            let ev = ShadowEvaluator::new(&vf, anchor.0, anchor.1)?;
            let state = ev.snapshot(*t, *x, *y, *price)?;
            let derivatives = vf.eval_v(*x, *y)?;
            let text = serde_json::to_string_pretty(&EvalOutput { anchor, state, derivatives })
                .expect("serializable");
            println!("{text}");
            Ok(true)
        }
        Command::Simulate { .. } => simulate_cmd(&vf, &cfg, out, c.emit_paths),
        Command::Verify => verify(&vf, &cfg, out),
    }
}

fn manifest(command: &str, vf: &ValueFunction, cfg: &RunConfig, with_sim: bool) -> RunManifest {
    RunManifest::new(
        command,
        cfg.params,
        cfg.solver,
        cfg.table_points,
        vf.summary(),
        with_sim.then(|| cfg.simulation.clone()),
    )
}

fn solve(vf: &ValueFunction, cfg: &RunConfig, out: &Path) -> Result<bool, Error> {
    let hash = output::write_manifest(out, &manifest("solve", vf, cfg, false))?;
    let rows = vf.table(cfg.table_points)?;
    output::write_atomic(&out.join("g_grid.csv"), output::g_grid_csv(&hash, vf.solution()).as_bytes())?;
    output::write_atomic(&out.join("value_table.csv"), output::value_table_csv(&hash, &rows).as_bytes())?;
    let body = SolveOutput {
        summary: vf.summary(),
        normalization: vf.normalization(),
        boundary: vf.boundary_check()?,
    };
    output::write_json(&out.join("solution.json"), &hash, &body)?;
    let s = body.summary;
    eprintln!(
        "u1 = {:.10}  u2 = {:.10}  theta1 = {:.10}  theta2 = {:.10}  K = {:.10}",
        s.u1, s.u2, s.theta1, s.theta2, s.k
    );
    eprintln!("wrote {}", out.display());
    Ok(true)
}

fn simulate_cmd(vf: &ValueFunction, cfg: &RunConfig, out: &Path, emit: bool) -> Result<bool, Error> {
    let ev = ShadowEvaluator::with_default_anchor(vf)?;
    let res = simulate(&ev, &cfg.simulation, emit)?;
    let hash = output::write_manifest(out, &manifest("simulate", vf, cfg, true))?;
    let mut entries = verify_martingales(&res);
    entries.extend(verify_pathwise(&res, &ev)?);
    let est = |f: fn(&shadow_price::sim::PathSummary) -> f64| {
        let (mean, standard_error) = mean_and_se(&res, f);
        Estimate { mean, standard_error }
    };
    let n = res.summaries.len() as f64;
    let body = SimulateOutput {
        n_paths: res.summaries.len(),
        dt: res.dt,
        n_steps: res.n_steps,
        m0: res.m0,
        v0: res.v0,
        density: est(|s| s.z_closed),
        shadow_value: est(|s| s.m),
        bellman: est(|s| s.bellman),
        mean_cum_buy: res.summaries.iter().map(|s| s.cum_buy).sum::<f64>() / n,
        mean_cum_sell: res.summaries.iter().map(|s| s.cum_sell).sum::<f64>() / n,
        passed: entries.iter().all(|e| e.pass),
        entries,
    };
    output::write_json(&out.join("simulation.json"), &hash, &body)?;
    if let Some(paths) = &res.paths {
        output::write_atomic(&out.join("paths.csv"), output::paths_csv(&hash, paths).as_bytes())?;
    }
    print_entries(&body.entries);
    Ok(body.passed)
}

fn verify(vf: &ValueFunction, cfg: &RunConfig, out: &Path) -> Result<bool, Error> {
    let report = run_suite(vf, cfg)?;
    let hash = output::write_manifest(out, &manifest("verify", vf, cfg, true))?;
    output::write_json(&out.join("verification.json"), &hash, &report)?;
    print_entries(&report.entries);
    Ok(report.passed)
}

fn print_entries(entries: &[TestEntry]) {
    for e in entries {
        let tag = if e.pass { "PASS" } else { "FAIL" };
        match (e.z_score, e.standard_error) {
            (Some(z), Some(se)) => {
                println!("[{tag}] {:<34} mean={:<22} se={se:.3e} z={z:+.3}", e.name, e.statistic)
            }
            _ => println!("[{tag}] {:<34} value={:.6e} tol={:.1e}", e.name, e.statistic, e.tolerance),
        }
    }
}
