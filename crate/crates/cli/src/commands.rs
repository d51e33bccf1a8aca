use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wnlw_core::convergence::{convergence_csv, mesh_check, ConvergenceConfig, ConvergenceLab, ConvergenceRun};
use wnlw_core::duhamel::{duhamel_multiplier_abs, QuadratureSpec};
use wnlw_core::dynamics::{solve, EquationSpec, Observers, StepperConfig, Variant, WickSource};
use wnlw_core::field::FieldSnapshot;
use wnlw_core::hermite::hermite_eval;
use wnlw_core::inflation::{
    f_of_a, ladder_csv, plan_at, run_deterministic_inflation, smooth_base, AsInflation, AsOptions, BaseData,
    InflationPlan, LadderRow, PlanOptions, RunOptions,
};
use wnlw_core::seeding::derive_seed;
use wnlw_core::stochastic::{
    covariance_oracle, gff_profile, sample_gff, sigma_truncated, wick_moment_ensemble, GaussianDraw, Smoothing,
    WickEnsembleConfig,
};
use wnlw_core::trees::{enumerate_trees, fuss_catalan, term_norm_table, term_norms_csv, xi_series};
use wnlw_core::{FieldPair, Kernel, LabError, Lattice, Mode, Result, SpectralField};

use crate::config::{merge, ConfigFile, Globals};
use crate::output::Output;
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut globals: Globals = file.globals.clone();
    if let Some(s) = cli.global.seed {
        globals.seed = s;
    }
    if let Some(o) = &cli.global.out {
        globals.out = Some(o.clone());
    }
    if let Some(t) = cli.global.threads {
        globals.threads = Some(t);
    }
    if let Some(t) = globals.threads {
        wnlw_core::par::set_threads(t);
    }
    let mut out = Output::new(globals.out.clone())?;
    let (name, resolved) = match cli.command {
        Command::Sample(a) => ("sample", resolve(&file, "sample", a, |c: &mut SampleConfig, a: SampleArgs| merge!(c, a; d, m, s))?),
        Command::Wick(a) => ("wick", resolve(&file, "wick", a, |c: &mut WickConfig, a: WickArgs| merge!(c, a; d, m, l, n_cut, modes, samples))?),
        Command::Solve(a) => ("solve", resolve(&file, "solve", a, SolveConfig::apply)?),
        Command::Trees(a) => ("trees", resolve(&file, "trees", a, TreesConfig::apply)?),
        Command::Inflate(a) => ("inflate", resolve(&file, "inflate", a, InflateConfig::apply)?),
        Command::AsInflate(a) => ("as-inflate", resolve(&file, "as-inflate", a, AsInflateConfig::apply)?),
        Command::Converge(a) => ("converge", resolve(&file, "converge", a, ConvergeConfig::apply)?),
        Command::Oracle(a) => ("oracle", resolve(&file, "oracle", a, |c: &mut OracleConfig, a: OracleArgs| merge!(c, a; op, d, n_cut, l, mode, xi, t, j, s, a, k, x, sigma))?),
    };
    let seed = globals.seed;
    let config = match name {
        "sample" => exec_sample(from_value(&resolved)?, seed, &mut out),
        "wick" => exec_wick(from_value(&resolved)?, seed, &mut out),
        "solve" => exec_solve(from_value(&resolved)?, seed, &mut out),
        "trees" => exec_trees(from_value(&resolved)?, &mut out),
        "inflate" => exec_inflate(from_value(&resolved)?, &mut out),
        "as-inflate" => exec_as_inflate(from_value(&resolved)?, seed, &mut out),
        "converge" => exec_converge(from_value(&resolved)?, seed, &mut out),
        _ => exec_oracle(from_value(&resolved)?, &mut out),
    };
    config?;
    out.finish(name, seed, globals.threads, resolved)
}

/// File section, then flags; returned as JSON for the manifest.
fn resolve<C, A>(file: &ConfigFile, name: &str, args: A, apply: impl Fn(&mut C, A)) -> Result<serde_json::Value>
where
    C: Serialize + for<'de> Deserialize<'de> + Default,
{
    let mut cfg: C = file.section(name)?;
    apply(&mut cfg, args);
    Ok(serde_json::to_value(&cfg)?)
}

fn from_value<C: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<C> {
    serde_json::from_value(v.clone()).map_err(|e| LabError::Config(e.to_string()))
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let parse = |p: &str| p.trim().parse::<i64>().map_err(|e| format!("bad mode `{s}`: {e}"));
    match parts.as_slice() {
        [a] => Ok([parse(a)?, 0]),
        [a, b] => Ok([parse(a)?, parse(b)?]),
        _ => Err(format!("bad mode `{s}`, expected `n1:n2`")),
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

// ---------------------------------------------------------------- sample

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long)]
    d: Option<usize>,
    /// Lattice cutoff.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Sobolev index of the reported norm.
    #[arg(long, allow_hyphen_values = true)]
    s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SampleConfig {
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    s: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { d: 2, m: 32, s: -0.5 }
    }
}

#[derive(Serialize)]
struct SampleReport {
    schema: &'static str,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    seed: u64,
    s: f64,
    hs: f64,
    pos: FieldSnapshot,
    vel: FieldSnapshot,
}

fn exec_sample(cfg: SampleConfig, seed: u64, out: &mut Output) -> Result<()> {
    let lattice = Lattice::new(cfg.d, cfg.m)?;
    let u = sample_gff(&lattice, derive_seed(seed, "sample"));
    let hs = u.sobolev_norm(cfg.s);
    emit(&format!("d={} M={} seed={} hs_{}={}\n", cfg.d, cfg.m, seed, cfg.s, hs));
    out.json(
        "sample.json",
        &SampleReport {
            schema: "wnlw.sample.v1",
            d: cfg.d,
            m: cfg.m,
            seed,
            s: cfg.s,
            hs,
            pos: u.pos.snapshot(),
            vel: u.vel.snapshot(),
        },
    )
}

/// Reads a pair written by `sample` (keys `pos` and `vel`).
fn load_pair(path: &Path) -> Result<FieldPair> {
    #[derive(Deserialize)]
    struct Pair {
        pos: FieldSnapshot,
        vel: FieldSnapshot,
    }
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
    let p: Pair = serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
    let pos = SpectralField::from_snapshot(&p.pos)?;
    let vel = SpectralField::from_snapshot(&p.vel)?;
    if pos.lattice().cutoff() != vel.lattice().cutoff() || pos.lattice().dim() != vel.lattice().dim() {
        return Err(LabError::Shape("position and velocity live on different lattices".into()));
    }
    // Rebuild the velocity on the position lattice so both share one Arc.
    let vel = SpectralField::from_fn(pos.lattice(), |n| vel.coeff(n));
    FieldPair::new(pos, vel)
}

// ---------------------------------------------------------------- wick

#[derive(Args, Debug, Clone)]
pub struct WickArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    /// Highest Wick power.
    #[arg(long)]
    l: Option<usize>,
    /// Truncations, comma separated.
    #[arg(long = "N", value_delimiter = ',')]
    n_cut: Option<Vec<f64>>,
    /// Modes as `n1:n2`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, allow_hyphen_values = true)]
    modes: Option<Vec<Mode>>,
    #[arg(long)]
    samples: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct WickConfig {
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    l: usize,
    #[serde(rename = "N")]
    n_cut: Vec<f64>,
    modes: Vec<Mode>,
    samples: u64,
}

impl Default for WickConfig {
    fn default() -> Self {
        Self { d: 2, m: 8, l: 3, n_cut: vec![2.0, 4.0, 8.0], modes: vec![[0, 0], [1, 0], [1, 1], [2, 1]], samples: 10_000 }
    }
}

fn exec_wick(cfg: WickConfig, seed: u64, out: &mut Output) -> Result<()> {
    let report = wick_moment_ensemble(&WickEnsembleConfig {
        d: cfg.d,
        m: cfg.m,
        max_l: cfg.l,
        truncations: cfg.n_cut.clone(),
        modes: cfg.modes.clone(),
        samples: cfg.samples,
        seed,
    })?;
    let mut csv = String::from("l,N,n1,n2,exact,mean,se,z,samples\n");
    for e in &report.entries {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            e.l,
            e.n_cut,
            e.n[0],
            e.n[1],
            e.exact,
            e.mean,
            e.se,
            e.z_score(),
            e.samples
        ));
    }
    emit(&csv);
    out.json("wick.json", &report)?;
    out.text("wick.csv", &csv)
}

// ---------------------------------------------------------------- solve

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// linear, plain-cubic, truncated-wick, residual-wick or sigma-renormalized.
    #[arg(long)]
    variant: Option<String>,
    /// zero, smooth, gff or the path of a `sample` report.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    /// Factor applied to the data.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long = "t-end", allow_hyphen_values = true)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Sobolev indices recorded along the trajectory.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    observe: Option<Vec<f64>>,
    /// Number of equally spaced recording times.
    #[arg(long)]
    records: Option<usize>,
    /// Truncation of the truncated Wick variant.
    #[arg(long = "N")]
    n_cut: Option<f64>,
    /// Kernel of the sigma-renormalized variant.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Odd power of the sigma-renormalized variant.
    #[arg(long)]
    k: Option<usize>,
    /// Exit with the accuracy code when the trajectory stops early.
    #[arg(long)]
    require_complete: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolveConfig {
    variant: String,
    data: String,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    scale: f64,
    t_end: f64,
    dt: Option<f64>,
    observe: Vec<f64>,
    records: usize,
    #[serde(rename = "N")]
    n_cut: Option<f64>,
    kernel: String,
    delta: f64,
    k: usize,
    require_complete: bool,
    stepper: StepperConfig,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            variant: "plain-cubic".into(),
            data: "smooth".into(),
            d: 2,
            m: 16,
            scale: 1.0,
            t_end: 1.0,
            dt: None,
            observe: vec![0.0],
            records: 20,
            n_cut: None,
            kernel: "gaussian-bump".into(),
            delta: 0.2,
            k: 3,
            require_complete: false,
            stepper: StepperConfig::default(),
        }
    }
}

impl SolveConfig {
    fn apply(&mut self, a: SolveArgs) {
        merge!(self, a; variant, data, d, m, scale, t_end, observe, records, kernel, delta, k);
        if a.dt.is_some() {
            self.dt = a.dt;
        }
        if a.n_cut.is_some() {
            self.n_cut = a.n_cut;
        }
        self.require_complete |= a.require_complete;
    }
}

#[derive(Serialize)]
struct SolveSummary {
    schema: &'static str,
    variant: String,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    steps: usize,
    final_time: f64,
    energy_drift: f64,
    terminated: Option<wnlw_core::dynamics::Termination>,
}

fn exec_solve(cfg: SolveConfig, seed: u64, out: &mut Output) -> Result<()> {
    let data_seed = derive_seed(seed, "solve:data");
    let (data, lattice) = match cfg.data.as_str() {
        "zero" | "smooth" | "gff" => {
            let lattice = Lattice::new(cfg.d, cfg.m)?;
            let data = match cfg.data.as_str() {
                "zero" => FieldPair::zeros(&lattice),
                "smooth" => smooth_base(&lattice)?,
                _ => sample_gff(&lattice, data_seed),
            };
            (data, lattice)
        }
        path => {
            let data = load_pair(&PathBuf::from(path))?;
            let lattice = data.lattice().clone();
            (data, lattice)
        }
    };
    let mut data = data.scaled(cfg.scale);
    let variant = match cfg.variant.as_str() {
        "linear" => Variant::Linear,
        "plain-cubic" => Variant::PlainCubic,
        "truncated-wick" => Variant::TruncatedWick { n: cfg.n_cut.unwrap_or(lattice.cutoff() as f64) },
        "residual-wick" => {
            let z = sample_gff(&lattice, derive_seed(seed, "solve:source"));
            let sigma = Smoothing::Identity.variance(lattice.dim(), lattice.cutoff());
            Variant::ResidualWick(WickSource::new(z, sigma))
        }
        "sigma-renormalized" => {
            let kernel = Kernel::parse(&cfg.kernel)?;
            let profile = gff_profile(&lattice, &Smoothing::Mollify { kernel, delta: cfg.delta });
            data = GaussianDraw::from_seed(&lattice, data_seed).randomize(&profile)?;
            Variant::SigmaRenormalized { profile, k: cfg.k }
        }
        other => return Err(LabError::Config(format!("unknown variant `{other}`"))),
    };
    let spec = EquationSpec::new(variant);
    let records = cfg.records.max(1);
    let times: Vec<f64> = (1..=records).map(|j| cfg.t_end * j as f64 / records as f64).collect();
    let obs = Observers { times: Some(times), sobolev: cfg.observe.clone(), ..Default::default() };
    let traj = solve(&spec, &data, cfg.t_end, cfg.dt, &obs, cfg.stepper)?;
    let csv = traj.to_csv();
    emit(&csv);
    let e0 = traj.energy[0];
    let drift = traj.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE);
    out.text("trajectory.csv", &csv)?;
    out.json(
        "summary.json",
        &SolveSummary {
            schema: "wnlw.solve.v1",
            variant: spec.variant.name().into(),
            d: lattice.dim(),
            m: lattice.cutoff(),
            steps: traj.steps,
            final_time: traj.final_time(),
            energy_drift: drift,
            terminated: traj.terminated.clone(),
        },
    )?;
    out.json("final.json", &json!({"pos": traj.last.pos.snapshot(), "vel": traj.last.vel.snapshot()}))?;
    if let Some(t) = &traj.terminated {
        eprintln!("trajectory stopped at t = {}: {}", t.t, t.reason);
        if cfg.require_complete {
            return Err(LabError::Accuracy(format!("trajectory stopped at t = {}: {}", t.t, t.reason)));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- trees

#[derive(Args, Debug, Clone)]
pub struct TreesArgs {
    /// Print the number of trees with `j` non-terminal nodes.
    #[arg(long)]
    count: bool,
    #[arg(long)]
    j: Option<usize>,
    /// smooth or the path of a `sample` report.
    #[arg(long)]
    data: Option<String>,
    #[arg(long = "M")]
    m: Option<usize>,
    /// Evaluation times, comma separated.
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TreesConfig {
    count: bool,
    j: usize,
    data: String,
    #[serde(rename = "M")]
    m: usize,
    t: Vec<f64>,
    quadrature: QuadratureSpec,
}

impl Default for TreesConfig {
    fn default() -> Self {
        Self { count: false, j: 3, data: "smooth".into(), m: 6, t: vec![0.05, 0.1, 0.2], quadrature: QuadratureSpec::default() }
    }
}

impl TreesConfig {
    fn apply(&mut self, a: TreesArgs) {
        merge!(self, a; j, data, m, t);
        self.count |= a.count;
    }
}

fn exec_trees(cfg: TreesConfig, out: &mut Output) -> Result<()> {
    if cfg.count {
        let n = fuss_catalan(cfg.j);
        if let Ok(trees) = enumerate_trees(cfg.j) {
            debug_assert_eq!(trees.len() as u64, n);
        }
        emit(&format!("{n}\n"));
        return out.json("trees.json", &json!({"schema": "wnlw.tree-count.v1", "j": cfg.j, "count": n}));
    }
    let data = match cfg.data.as_str() {
        "smooth" => smooth_base(&Lattice::new(2, cfg.m)?)?,
        path => load_pair(&PathBuf::from(path))?,
    };
    let xi = xi_series(cfg.j, &data, &cfg.t, &cfg.quadrature)?;
    let rows = term_norm_table(&xi, &cfg.t, data.wiener_norm());
    let csv = term_norms_csv(&rows);
    emit(&csv);
    out.text("term_norms.csv", &csv)
}

// ---------------------------------------------------------------- inflate

#[derive(Args, Debug, Clone)]
pub struct InflateArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    s: Option<f64>,
    /// Plan points `N`, comma separated.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<u64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// zero or smooth.
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Largest admissible lattice cutoff.
    #[arg(long)]
    max_cutoff: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Print the plans without solving.
    #[arg(long)]
    plan_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InflateConfig {
    d: usize,
    s: f64,
    ladder: Vec<u64>,
    delta: Option<f64>,
    theta: Option<f64>,
    base: String,
    target: f64,
    margin: f64,
    max_cutoff: usize,
    dt: Option<f64>,
    plan_only: bool,
    run: RunOptions,
}

impl Default for InflateConfig {
    fn default() -> Self {
        let p = PlanOptions::default();
        Self {
            d: 2,
            s: -1.2,
            ladder: vec![16, 32, 64],
            delta: None,
            theta: None,
            base: "zero".into(),
            target: p.target,
            margin: p.margin,
            max_cutoff: 512,
            dt: None,
            plan_only: false,
            run: RunOptions::default(),
        }
    }
}

impl InflateConfig {
    fn apply(&mut self, a: InflateArgs) {
        merge!(self, a; d, s, ladder, base, target, margin, max_cutoff);
        for (slot, v) in [(&mut self.delta, a.delta), (&mut self.theta, a.theta), (&mut self.dt, a.dt)] {
            if v.is_some() {
                *slot = v;
            }
        }
        self.plan_only |= a.plan_only;
    }
}

fn plans(d: usize, s: f64, ladder: &[u64], opts: &PlanOptions) -> Result<Vec<InflationPlan>> {
    if ladder.is_empty() {
        return Err(LabError::Config("empty ladder".into()));
    }
    ladder
        .iter()
        .map(|&n| {
            let p = plan_at(d, s, n, opts)?;
            if p.cutoff > opts.max_cutoff {
                return Err(LabError::Infeasible {
                    binding: "lattice cutoff 3N + 2A".into(),
                    detail: format!("N = {n} needs M = {} > {}", p.cutoff, opts.max_cutoff),
                });
            }
            Ok(p)
        })
        .collect()
}

fn exec_inflate(cfg: InflateConfig, out: &mut Output) -> Result<()> {
    let opts = PlanOptions {
        delta: cfg.delta,
        theta: cfg.theta,
        target: cfg.target,
        margin: cfg.margin,
        max_cutoff: cfg.max_cutoff,
    };
    let plans = plans(cfg.d, cfg.s, &cfg.ladder, &opts)?;
    if cfg.plan_only {
        emit(&format!("{}\n", serde_json::to_string_pretty(&plans)?));
        return out.json("plans.json", &plans);
    }
    let base = BaseData::parse(&cfg.base)?;
    let mut run = cfg.run;
    if cfg.dt.is_some() {
        run.dt = cfg.dt;
    }
    let mut rows = Vec::new();
    for plan in &plans {
        let report = run_deterministic_inflation(plan, base, &run)?;
        out.json(&format!("inflate_N{}.json", plan.n), &report)?;
        rows.push(LadderRow::deterministic(&report));
    }
    let csv = ladder_csv(&rows);
    emit(&csv);
    out.text("ladder.csv", &csv)
}

// ---------------------------------------------------------------- as-inflate

#[derive(Args, Debug, Clone)]
pub struct AsInflateArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    s: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<u64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Ensemble size per plan point.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    max_cutoff: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AsInflateConfig {
    d: usize,
    s: f64,
    ladder: Vec<u64>,
    delta: Option<f64>,
    theta: Option<f64>,
    alpha: f64,
    seeds: u64,
    target: f64,
    max_cutoff: usize,
    dt: Option<f64>,
    run: RunOptions,
}

impl Default for AsInflateConfig {
    fn default() -> Self {
        Self {
            d: 2,
            s: -1.2,
            ladder: vec![16, 24, 32],
            delta: None,
            theta: None,
            alpha: 0.02,
            seeds: 32,
            target: PlanOptions::default().target,
            max_cutoff: 512,
            dt: None,
            run: RunOptions::default(),
        }
    }
}

impl AsInflateConfig {
    fn apply(&mut self, a: AsInflateArgs) {
        merge!(self, a; d, s, ladder, alpha, seeds, target, max_cutoff);
        for (slot, v) in [(&mut self.delta, a.delta), (&mut self.theta, a.theta), (&mut self.dt, a.dt)] {
            if v.is_some() {
                *slot = v;
            }
        }
    }
}

fn exec_as_inflate(cfg: AsInflateConfig, seed: u64, out: &mut Output) -> Result<()> {
    let opts = PlanOptions {
        delta: cfg.delta,
        theta: cfg.theta,
        target: cfg.target,
        max_cutoff: cfg.max_cutoff,
        ..PlanOptions::default()
    };
    let plans = plans(cfg.d, cfg.s, &cfg.ladder, &opts)?;
    let mut run = cfg.run;
    if cfg.dt.is_some() {
        run.dt = cfg.dt;
    }
    let as_opts = AsOptions { alpha: cfg.alpha, run, ..AsOptions::default() };
    let members: Vec<u64> = (0..cfg.seeds).map(|i| seed.wrapping_add(i)).collect();
    let mut rows = Vec::new();
    for plan in &plans {
        let lab = AsInflation::new(plan, &as_opts)?;
        let seeds = members.iter().map(|&m| lab.run_seed(m)).collect::<Result<Vec<_>>>()?;
        let report = lab.report(seeds)?;
        let phi_hs = plan.block_data(lab.lattice())?.sobolev_norm(plan.s);
        out.json(&format!("as_inflate_N{}.json", plan.n), &report)?;
        if let Some(why) = &report.lwp_shortfall {
            eprintln!("N = {}: {why}", plan.n);
        }
        rows.push(LadderRow::almost_sure(&report, phi_hs));
    }
    let csv = ladder_csv(&rows);
    emit(&csv);
    out.text("ladder.csv", &csv)
}

// ---------------------------------------------------------------- converge

#[derive(Args, Debug, Clone)]
pub struct ConvergeArgs {
    /// Kernels, comma separated.
    #[arg(long, value_delimiter = ',')]
    kernel: Option<Vec<String>>,
    #[arg(long = "delta-ladder", value_delimiter = ',')]
    delta_ladder: Option<Vec<f64>>,
    /// Ensemble size.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    checkpoints: Option<usize>,
    /// Repeat the first seed on a lattice of twice the cutoff.
    #[arg(long)]
    mesh_check: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConvergeConfig {
    kernel: Vec<String>,
    delta_ladder: Vec<f64>,
    seeds: u64,
    s0: f64,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    horizon: f64,
    checkpoints: usize,
    alpha: f64,
    respect_guarantee: bool,
    mesh_check: bool,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        let c = ConvergenceConfig::default();
        Self {
            kernel: vec!["gaussian-bump".into(), "tent".into()],
            delta_ladder: c.deltas,
            seeds: 16,
            s0: c.s0,
            d: c.d,
            m: c.m,
            horizon: c.horizon,
            checkpoints: c.checkpoints,
            alpha: c.alpha,
            respect_guarantee: c.respect_guarantee,
            mesh_check: false,
        }
    }
}

impl ConvergeConfig {
    fn apply(&mut self, a: ConvergeArgs) {
        merge!(self, a; kernel, delta_ladder, seeds, s0, d, m, horizon, checkpoints);
        self.mesh_check |= a.mesh_check;
    }
}

fn exec_converge(cfg: ConvergeConfig, seed: u64, out: &mut Output) -> Result<()> {
    let kernels = cfg.kernel.iter().map(|k| Kernel::parse(k)).collect::<Result<Vec<_>>>()?;
    let lab_cfg = ConvergenceConfig {
        d: cfg.d,
        m: cfg.m,
        s0: cfg.s0,
        alpha: cfg.alpha,
        horizon: cfg.horizon,
        respect_guarantee: cfg.respect_guarantee,
        checkpoints: cfg.checkpoints,
        deltas: cfg.delta_ladder.clone(),
        ..ConvergenceConfig::default()
    };
    let mut runs: Vec<ConvergenceRun> = Vec::new();
    for i in 0..cfg.seeds {
        let lab = ConvergenceLab::new(&lab_cfg, seed.wrapping_add(i))?;
        for &k in &kernels {
            runs.push(lab.run(k)?);
        }
    }
    let csv = convergence_csv(&runs);
    emit(&csv);
    for &k in &kernels {
        let mine: Vec<&ConvergenceRun> = runs.iter().filter(|r| r.kernel == k).collect();
        let monotone = mine.iter().filter(|r| r.is_monotone()).count();
        eprintln!("{}: monotone {}/{}", k.name(), monotone, mine.len());
    }
    out.json("convergence.json", &runs)?;
    out.text("convergence.csv", &csv)?;
    if cfg.mesh_check {
        out.json("mesh_check.json", &mesh_check(&lab_cfg, seed)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- oracle

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    /// sigma, gamma, multiplier, fuss-catalan, f-of-a or hermite.
    #[arg(long)]
    op: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "N")]
    n_cut: Option<f64>,
    #[arg(long)]
    l: Option<usize>,
    /// Mode `n1:n2`.
    #[arg(long = "n", value_parser = parse_mode, allow_hyphen_values = true)]
    mode: Option<Mode>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    s: Option<f64>,
    #[arg(long = "A")]
    a: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OracleConfig {
    op: String,
    d: usize,
    #[serde(rename = "N")]
    n_cut: f64,
    l: usize,
    mode: Mode,
    xi: f64,
    t: f64,
    j: usize,
    s: f64,
    #[serde(rename = "A")]
    a: f64,
    k: usize,
    x: f64,
    sigma: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            op: "sigma".into(),
            d: 2,
            n_cut: 1.0,
            l: 2,
            mode: [0, 0],
            xi: 1.0,
            t: 1.0,
            j: 1,
            s: -1.2,
            a: 2.0,
            k: 2,
            x: 0.0,
            sigma: 1.0,
        }
    }
}

fn whole(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(LabError::Domain(format!("{what} must be a non-negative integer, got {x}")))
    }
}

fn exec_oracle(cfg: OracleConfig, out: &mut Output) -> Result<()> {
    let value = match cfg.op.as_str() {
        "sigma" => sigma_truncated(whole(cfg.n_cut, "N")?, cfg.d),
        "gamma" => {
            let bound = whole(cfg.n_cut.ceil(), "N")?;
            covariance_oracle(cfg.l, cfg.mode, cfg.d, Smoothing::Truncate { n: cfg.n_cut }, None, bound)?.moment
        }
        "multiplier" => duhamel_multiplier_abs((1.0 + cfg.xi * cfg.xi).sqrt(), cfg.t),
        "fuss-catalan" => fuss_catalan(cfg.j) as f64,
        "f-of-a" => f_of_a(cfg.s, cfg.d, cfg.a)?,
        "hermite" => hermite_eval(cfg.k, cfg.x, cfg.sigma)?,
        other => return Err(LabError::Config(format!("unknown oracle `{other}`"))),
    };
    emit(&format!("{value}\n"));
    out.json("oracle.json", &json!({"schema": "wnlw.oracle.v1", "op": cfg.op, "value": value}))
}

