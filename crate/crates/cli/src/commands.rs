//! Subcommand dispatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mmq_core::cost::{replicate, ErgodicWindow, GapConfig};
use mmq_core::diffusion::simulate_sde;
use mmq_core::hjb::{epsilon_truncation, solve_discounted, solve_ergodic, CostModel, GridValueFunction, TRUNCATION_DELTA};
use mmq_core::policy::default_kappa;
use mmq_core::rng::{stream, stream_index};
use mmq_core::sim::{fluid_point, PathObserver, Segment, SimOptions};
use mmq_core::stability::{drift_inequality_scan, StabilityModel};
use mmq_core::stats::{mean, variance};
use mmq_core::{cost, DiffusionSpec, MarkovControl, ModelParams, SchedulingPolicy, Simulator};
use serde::Serialize;
use serde_json::json;

use crate::config::{CriterionKind, ExperimentConfig, Overrides, PolicyKind};
use crate::manifest::{sha256_hex, Manifest, RunDir, MANIFEST};
use crate::recipes::{fclt_check, rows};
use crate::{CliError, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK};

pub const TAG_SIMULATE: u16 = 1;
pub const TAG_SDE: u16 = 2;

#[derive(Parser, Debug)]
#[command(name = "mmq", version, about = "Markov-modulated many-server queue experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Root of the output tree (default: `output.dir` of the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "grid-h")]
    grid_h: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            n: self.n,
            horizon: self.horizon,
            dt: self.dt,
            grid_h: self.grid_h,
            criterion: None,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stationary law, deviation matrix and covariance of the environment.
    EnvAnalyze(Common),
    /// Prelimit trajectories.
    Simulate(Common),
    /// Euler paths of the limiting diffusion.
    Sde(Common),
    /// Value function and control field on a grid.
    SolveHjb {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        criterion: Option<CriterionKind>,
    },
    /// Foster-Lyapunov drift scan.
    StabilityScan(Common),
    /// Prelimit marginals against the diffusion across system sizes.
    FcltCheck(Common),
    /// Simulated cost of the solver's policy against the diffusion optimum.
    OptimalityGap(Common),
    /// Re-run a manifest and compare the artifacts byte for byte.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Replay { manifest, out, threads } => match replay(&manifest, &out, threads) {
            Ok(outcome) => {
                println!("{}", outcome.summary());
                return if outcome.identical() { EXIT_OK } else { EXIT_FAILURE };
            }
            Err(e) => Err(e),
        },
        Command::SolveHjb { common, criterion } => {
            let mut o = common.overrides();
            o.criterion = criterion;
            run_from_file("solve-hjb", &common, o)
        }
        Command::EnvAnalyze(c) => run_from_file("env-analyze", &c, c.overrides()),
        Command::Simulate(c) => run_from_file("simulate", &c, c.overrides()),
        Command::Sde(c) => run_from_file("sde", &c, c.overrides()),
        Command::StabilityScan(c) => run_from_file("stability-scan", &c, c.overrides()),
        Command::FcltCheck(c) => run_from_file("fclt-check", &c, c.overrides()),
        Command::OptimalityGap(c) => run_from_file("optimality-gap", &c, c.overrides()),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_from_file(command: &str, c: &Common, overrides: Overrides) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| CliError::Config(format!("--config {}: {e}", c.config.display())))?;
    execute(command, &text, &overrides, c.out.as_deref(), c.threads)
}

/// Runs `command` on the config `text` and returns the committed output directory.
pub fn execute(
    command: &str,
    text: &str,
    overrides: &Overrides,
    out: Option<&Path>,
    threads: Option<usize>,
) -> Result<PathBuf, CliError> {
    let mut cfg = ExperimentConfig::parse(text)?;
    cfg.apply(overrides);
    let root = out.map_or_else(|| PathBuf::from(&cfg.output.dir), Path::to_path_buf);
    let mut dir = RunDir::create(&root, &cfg.label, command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| dispatch(command, &cfg, &mut dir))?;
    let manifest = Manifest {
        command: command.into(),
        label: cfg.label.clone(),
        config: text.into(),
        config_sha256: sha256_hex(text.as_bytes()),
        seed: cfg.run.seed,
        overrides: overrides.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        files: Vec::new(),
    };
    dir.commit(manifest)
}

fn dispatch(command: &str, cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    match command {
        "env-analyze" => env_analyze(cfg, dir),
        "simulate" => simulate(cfg, dir),
        "sde" => sde(cfg, dir),
        "solve-hjb" => solve_hjb(cfg, dir),
        "stability-scan" => stability_scan(cfg, dir),
        "fclt-check" => fclt(cfg, dir),
        "optimality-gap" => optimality_gap(cfg, dir),
        other => Err(CliError::Config(format!("unknown command {other:?}"))),
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub original: PathBuf,
    pub replayed: PathBuf,
    pub compared: usize,
    pub mismatched: Vec<String>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.identical() {
            format!("{}: {} files identical to {}", self.replayed.display(), self.compared, self.original.display())
        } else {
            format!("{}: differs from {} in {:?}", self.replayed.display(), self.original.display(), self.mismatched)
        }
    }
}

/// Re-executes a manifest under `out` and compares every artifact, the
/// manifest included, byte for byte.
pub fn replay(manifest_path: &Path, out: &Path, threads: Option<usize>) -> Result<ReplayOutcome, CliError> {
    let m = Manifest::load(manifest_path)?;
    let original = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let replayed = execute(&m.command, &m.config, &m.overrides, Some(out), threads)?;
    let mut names: Vec<String> = m.files.iter().map(|f| f.name.clone()).collect();
    names.push(MANIFEST.into());
    let mut mismatched = Vec::new();
    for name in &names {
        let a = fs::read(original.join(name));
        let b = fs::read(replayed.join(name));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => mismatched.push(name.clone()),
        }
    }
    Ok(ReplayOutcome {
        original,
        replayed,
        compared: names.len(),
        mismatched,
    })
}

fn json<T: Serialize>(cfg: &ExperimentConfig, dir: &mut RunDir, name: &str, v: &T) -> Result<(), CliError> {
    if cfg.wants("json") {
        dir.write_json(name, v)?;
    }
    Ok(())
}

fn csv(cfg: &ExperimentConfig, dir: &mut RunDir, name: &str, text: &str) -> Result<(), CliError> {
    if cfg.wants("csv") {
        dir.write(name, text.as_bytes())?;
    }
    Ok(())
}

fn env_analyze(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let p = cfg.params()?;
    let a = p.env.analytics()?;
    let res = a.residuals(p.env.q());
    let dq = p.derive()?;
    let report = json!({
        "states": p.states(),
        "classes": p.classes(),
        "n": dq.n,
        "alpha": dq.alpha,
        "beta": dq.beta,
        "regime": dq.regime,
        "pi": a.pi.iter().copied().collect::<Vec<f64>>(),
        "upsilon": rows(&a.upsilon),
        "big_pi": rows(&a.big_pi),
        "residuals": res,
        "theta": rows(&dq.theta),
        "lambda_sq": rows(&dq.lambda_sq),
        "sigma": rows(&dq.sigma),
        "rho": dq.rho,
        "lambda_pi": dq.lambda_pi,
        "mu_pi": dq.mu_pi,
        "gamma_pi": dq.gamma_pi,
        "ell": dq.ell,
    });
    json(cfg, dir, "report.json", &report)
}

/// Solves the ergodic problem and truncates its control for use in the prelimit.
fn solver_control(cfg: &ExperimentConfig, p: &ModelParams, cmd: &str) -> Result<MarkovControl, CliError> {
    let s = cfg.solver(cmd)?;
    let spec = DiffusionSpec::from_derived(&p.derive()?)?;
    let v = solve_ergodic(&spec, &cfg.cost(cmd)?, &s.grid()?, &s.options())?;
    Ok(epsilon_truncation(&v.control()?, s.truncation_radius(), TRUNCATION_DELTA)?)
}

fn markov_control(cfg: &ExperimentConfig, p: &ModelParams, cmd: &str) -> Result<MarkovControl, CliError> {
    let d = p.classes();
    match (&cfg.policy.kind, &cfg.policy.control) {
        (PolicyKind::StaticPriority, _) => Ok(MarkovControl::last_class(d)),
        (PolicyKind::OmegaControl, None) => Err(CliError::Config("policy.control: required for omega-control".into())),
        (PolicyKind::OmegaControl, Some(c)) => match c.fixed(d)? {
            Some(u) => Ok(u),
            None => solver_control(cfg, p, cmd),
        },
    }
}

fn scheduling_policy(cfg: &ExperimentConfig, p: &ModelParams, cmd: &str) -> Result<SchedulingPolicy, CliError> {
    match cfg.policy.kind {
        PolicyKind::StaticPriority => Ok(SchedulingPolicy::StaticPriority),
        PolicyKind::OmegaControl => {
            let control = markov_control(cfg, p, cmd)?;
            let kappa = match cfg.policy.kappa {
                Some(k) => k,
                None => default_kappa(&p.derive()?.rho),
            };
            Ok(SchedulingPolicy::omega(control, kappa))
        }
    }
}

fn initial_state(cfg: &ExperimentConfig, p: &ModelParams) -> Result<Vec<u64>, CliError> {
    let dq = p.derive()?;
    let n = p.n();
    match &cfg.run.x0 {
        None => Ok(fluid_point(n, &dq.rho)),
        Some(x) if x.len() != dq.d => Err(CliError::Config(format!("run.x0: needs {} entries", dq.d))),
        Some(x) => {
            let s = (n as f64).powf(dq.beta);
            Ok(x.iter()
                .zip(&dq.rho)
                .map(|(xi, r)| (n as f64 * r + s * xi).round().max(0.0) as u64)
                .collect())
        }
    }
}

/// Time integrals of the unscaled counts.
struct Occupation {
    x: Vec<f64>,
    q: Vec<f64>,
}

impl PathObserver for Occupation {
    fn segment(&mut self, seg: &Segment<'_>) {
        let dt = seg.t1 - seg.t0;
        for i in 0..self.x.len() {
            self.x[i] += dt * seg.x[i] as f64;
            self.q[i] += dt * seg.q[i] as f64;
        }
    }
}

fn simulate(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let p = cfg.params()?;
    let horizon = cfg.horizon("simulate")?;
    let reps = cfg.replications();
    let sim = Simulator::new(&p, scheduling_policy(cfg, &p, "simulate")?)?;
    let x0 = initial_state(cfg, &p)?;
    let opts = SimOptions {
        initial_env: None,
        stride: cfg.run.stride.unwrap_or(1),
    };
    let seed = cfg.run.seed;
    let d = p.classes();
    let runs = replicate(reps, |r| {
        let mut rng = stream(seed, stream_index(TAG_SIMULATE, 0, r as u32));
        let mut occ = Occupation {
            x: vec![0.0; d],
            q: vec![0.0; d],
        };
        let (traj, summary) = sim.trajectory_observed(horizon, &x0, &mut rng, &opts, &mut occ)?;
        let mut text = Vec::new();
        traj.write_csv(&mut text).map_err(|e| mmq_core::Error::Numerical(e.to_string()))?;
        let avg = |v: &[f64]| v.iter().map(|s| if horizon > 0.0 { s / horizon } else { 0.0 }).collect::<Vec<_>>();
        Ok((
            text,
            json!({
                "replication": r,
                "stream": stream_index(TAG_SIMULATE, 0, r as u32),
                "events": summary.events,
                "final_state": summary.final_state,
                "time_average_x": avg(&occ.x),
                "time_average_q": avg(&occ.q),
            }),
        ))
    })?;
    let mut summaries = Vec::with_capacity(reps);
    for (r, (text, s)) in runs.into_iter().enumerate() {
        if cfg.wants("csv") {
            dir.write(&format!("trajectory_{r:04}.csv"), &text)?;
        }
        summaries.push(s);
    }
    let report = json!({
        "n": p.n(),
        "horizon": horizon,
        "initial_state": x0,
        "policy": cfg.policy,
        "seed": seed,
        "replications": summaries,
    });
    json(cfg, dir, "summary.json", &report)
}

fn sde(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let p = cfg.params()?;
    let dq = p.derive()?;
    let spec = DiffusionSpec::from_derived(&dq)?;
    let control = markov_control(cfg, &p, "sde")?;
    let horizon = cfg.horizon("sde")?;
    let dt = cfg.dt();
    let reps = cfg.replications();
    let x0 = cfg.run.x0.clone().unwrap_or_else(|| vec![0.0; dq.d]);
    if x0.len() != dq.d {
        return Err(CliError::Config(format!("run.x0: needs {} entries", dq.d)));
    }
    let seed = cfg.run.seed;
    let paths = replicate(reps, |r| {
        let mut rng = stream(seed, stream_index(TAG_SDE, 0, r as u32));
        simulate_sde(&spec, &control, &x0, horizon, dt, &mut rng)
    })?;
    let mut terminals = Vec::with_capacity(reps);
    for (r, path) in paths.iter().enumerate() {
        if cfg.wants("csv") {
            let mut text = Vec::new();
            path.write_csv(&mut text)?;
            dir.write(&format!("path_{r:04}.csv"), &text)?;
        }
        terminals.push(path.terminal().to_vec());
    }
    let col = |i: usize| terminals.iter().map(|t| t[i]).collect::<Vec<f64>>();
    let report = json!({
        "horizon": horizon,
        "dt": dt,
        "x0": x0,
        "regime": dq.regime,
        "sigma": rows(spec.sigma()),
        "seed": seed,
        "terminal": terminals,
        "terminal_mean": (0..dq.d).map(|i| mean(&col(i))).collect::<Vec<_>>(),
        "terminal_variance": (0..dq.d).map(|i| variance(&col(i))).collect::<Vec<_>>(),
    });
    json(cfg, dir, "summary.json", &report)
}

fn field_csv(v: &GridValueFunction) -> Result<String, CliError> {
    let mut out = Vec::new();
    v.write_csv(&mut out)?;
    String::from_utf8(out).map_err(|e| CliError::Other(e.to_string()))
}

fn solve_hjb(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let p = cfg.params()?;
    let s = cfg.solver("solve-hjb")?;
    let spec = DiffusionSpec::from_derived(&p.derive()?)?;
    let cost: CostModel = cfg.cost("solve-hjb")?;
    let grid = s.grid()?;
    let v = match s.criterion() {
        CriterionKind::Ergodic => solve_ergodic(&spec, &cost, &grid, &s.options())?,
        CriterionKind::Discounted => solve_discounted(&spec, &cost, s.theta()?, &grid, &s.options())?,
    };
    let mut report = serde_json::to_value(v.report()).map_err(|e| CliError::Other(e.to_string()))?;
    report["cost"] = serde_json::to_value(cost).map_err(|e| CliError::Other(e.to_string()))?;
    match v.rho() {
        Some(rho) => report["rho_star"] = json!(rho),
        None => report["value_at_origin"] = json!(v.value_at_origin()),
    }
    json(cfg, dir, "report.json", &report)?;
    csv(cfg, dir, "value.csv", &field_csv(&v)?)
}

fn stability_scan(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let p = cfg.params()?;
    let model = StabilityModel::new(&p, scheduling_policy(cfg, &p, "stability-scan")?)?;
    let report = drift_inequality_scan(&model, &p, &cfg.scan_config())?;
    json(cfg, dir, "report.json", &report)
}

fn fclt(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let p = cfg.params()?;
    let cmd = "fclt-check";
    let n_list = cfg.n_list(cmd)?;
    let t_star = cfg
        .run
        .t_star
        .ok_or_else(|| CliError::Config(format!("run.t_star: required by `{cmd}`")))?;
    let reps = cfg.replications();
    let ref_reps = cfg.run.reference_replications.unwrap_or(reps);
    let report = fclt_check(&p, &n_list, t_star, reps, ref_reps, cfg.dt(), cfg.run.seed)?;
    let mut table = String::from("n,class,mean,variance,reference_mean,reference_variance\n");
    for row in &report.rows {
        for i in 0..row.prelimit.mean.len() {
            let _ = writeln!(
                table,
                "{},{},{},{},{},{}",
                row.n,
                i + 1,
                row.prelimit.mean[i],
                row.prelimit.variance[i],
                report.reference.mean[i],
                report.reference.variance[i]
            );
        }
    }
    json(cfg, dir, "report.json", &report)?;
    csv(cfg, dir, "table.csv", &table)
}

fn optimality_gap(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<(), CliError> {
    let p = cfg.params()?;
    let cmd = "optimality-gap";
    let s = cfg.solver(cmd)?;
    let mut gc = GapConfig::new(
        cfg.n_list(cmd)?,
        cfg.horizon(cmd)?,
        cfg.replications(),
        cfg.run.seed,
        s.truncation_radius(),
    );
    gc.window = ErgodicWindow {
        burn_in: cfg.run.burn_in,
        batches: cfg.run.batches.unwrap_or(cost::DEFAULT_BATCHES),
    };
    gc.kappa = cfg.policy.kappa;
    gc.solver = s.options();
    let table = cost::optimality_gap(&p, &cfg.cost(cmd)?, &s.grid()?, &gc)?;
    let mut text = String::from("n,cost,half_width,gap,lower_bound_ok\n");
    for r in &table.rows {
        let _ = writeln!(text, "{},{},{},{},{}", r.n, r.cost.mean, r.half_width, r.gap, r.lower_bound_ok);
    }
    json(cfg, dir, "report.json", &table)?;
    csv(cfg, dir, "gap.csv", &text)
}
