//! Mollified Gaussian data against the Wick-ordered reference solution.
//!
//! The free-field data `u^w` is truncated to `|n| <= M`. The reference is the
//! residual `v = u - z` of the Wick-ordered equation driven by
//! `z(t) = S(t) P_M u^w`. Each mollified run solves the `sigma(t)`-renormalized
//! equation from `rho_delta * P_M u^w` and compares its residual
//! `v_delta = u_delta - S(t)(rho_delta * P_M u^w)` with `v` on common
//! checkpoints, all from the same Gaussian coefficients.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    default_dt, perturbed_lwp_estimate, solve, wick_sup_bound, EquationSpec, Observers, StepperConfig,
    Termination, Trajectory, Variant, WickSource,
};
use crate::error::{LabError, Result};
use crate::field::{FieldPair, Kernel, Lattice, Mode, SpectralField};
use crate::seeding::derive_seed;
use crate::stochastic::{sigma_truncated, GaussianDraw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub d: usize,
    /// Lattice cutoff and truncation scale `M`.
    pub m: usize,
    /// Regularity of the distance, inside `(1/2, 1)`.
    pub s0: f64,
    /// Exponent of the perturbed local theory used for the horizon.
    pub alpha: f64,
    /// Requested horizon; capped by the guaranteed existence time unless
    /// `respect_guarantee` is off.
    pub horizon: f64,
    pub respect_guarantee: bool,
    pub checkpoints: usize,
    pub deltas: Vec<f64>,
    pub k_times: Vec<f64>,
    pub stepper: StepperConfig,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            d: 2,
            m: 16,
            s0: 0.75,
            alpha: 0.25,
            horizon: 1.0,
            respect_guarantee: true,
            checkpoints: 8,
            deltas: vec![0.4, 0.2, 0.1, 0.05],
            k_times: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            stepper: StepperConfig::default(),
        }
    }
}

impl ConvergenceConfig {
    fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.5 && self.s0 < 1.0) {
            return Err(LabError::Domain(format!("s0 must lie in (1/2, 1), got {}", self.s0)));
        }
        if !(self.horizon > 0.0) || self.checkpoints == 0 {
            return Err(LabError::Domain("horizon and checkpoint count must be positive".into()));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
            return Err(LabError::Domain(format!("mollification scales must lie in (0, 1], got {:?}", self.deltas)));
        }
        Ok(())
    }
}

/// Randomization profile `(a(n) / <n>, a(n))` with `a = rho^(delta n) 1_{|n| <= M}`.
pub fn truncated_profile(lattice: &Arc<Lattice>, m: usize, filter: Option<(Kernel, f64)>) -> FieldPair {
    let cut = (m * m) as i64;
    let weight = |n: Mode| -> f64 {
        if n[0] * n[0] + n[1] * n[1] > cut {
            return 0.0;
        }
        match filter {
            None => 1.0,
            Some((k, delta)) => k.hat([delta * n[0] as f64, delta * n[1] as f64]),
        }
    };
    let br = |n: Mode| (1.0 + (n[0] * n[0] + n[1] * n[1]) as f64).sqrt();
    let pos = SpectralField::from_fn(lattice, |n| Complex64::new(weight(n) / br(n), 0.0));
    let vel = SpectralField::from_fn(lattice, |n| Complex64::new(weight(n), 0.0));
    FieldPair { pos, vel }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub schema: String,
    pub seed: Option<u64>,
    pub kernel: Kernel,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub s0: f64,
    pub sigma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub t_guaranteed: f64,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `||v(t)||_{H^{s0}}` of the reference.
    pub reference_hs: Vec<f64>,
    /// `distances[i][k] = ||v(t_k) - v_{delta_i}(t_k)||_{H^{s0}}`.
    pub distances: Vec<Vec<f64>>,
    pub sup_distance: Vec<f64>,
    pub terminated: Option<Termination>,
}

impl ConvergenceRun {
    pub const SCHEMA: &'static str = "wnlw.convergence.v1";

    /// Number of strict decreases of the sup distance along the ladder.
    pub fn decreasing_steps(&self) -> usize {
        self.sup_distance.windows(2).filter(|w| w[1] < w[0]).count()
    }

    pub fn is_monotone(&self) -> bool {
        self.decreasing_steps() + 1 == self.sup_distance.len()
    }

    pub fn terminal_distance(&self) -> f64 {
        *self.sup_distance.last().unwrap()
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        for (i, delta) in self.deltas.iter().enumerate() {
            out.push_str(&format!(
                "{seed},{},{delta},{:.17e},{:.17e}",
                self.kernel.name(),
                self.horizon,
                self.sup_distance[i]
            ));
            for d in &self.distances[i] {
                out.push_str(&format!(",{d:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn convergence_csv_header(checkpoints: usize) -> String {
    let mut h = String::from("seed,kernel,delta,T,sup_distance");
    for k in 1..=checkpoints {
        h.push_str(&format!(",d_{k}"));
    }
    h.push('\n');
    h
}

pub fn convergence_csv(runs: &[ConvergenceRun]) -> String {
    let k = runs.first().map(|r| r.checkpoints.len()).unwrap_or(0);
    let mut out = convergence_csv_header(k);
    for r in runs {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Reference solution of one Gaussian draw, shared by every kernel and
/// mollification scale.
pub struct ConvergenceLab {
    cfg: ConvergenceConfig,
    seed: Option<u64>,
    lattice: Arc<Lattice>,
    draw: GaussianDraw,
    sigma: f64,
    k: f64,
    t_guaranteed: f64,
    horizon: f64,
    dt: f64,
    reference: Trajectory,
}

impl ConvergenceLab {
    pub fn new(cfg: &ConvergenceConfig, seed: u64) -> Result<Self> {
        let lattice = Lattice::new(cfg.d, cfg.m)?;
        let key = format!("convergence:d{}:M{}", cfg.d, cfg.m);
        let draw = GaussianDraw::from_seed(&lattice, derive_seed(seed, &key));
        let mut lab = Self::with_draw(cfg, draw)?;
        lab.seed = Some(seed);
        Ok(lab)
    }

    pub fn with_draw(cfg: &ConvergenceConfig, draw: GaussianDraw) -> Result<Self> {
        cfg.validate()?;
        let lattice = draw.lattice().clone();
        if lattice.dim() != cfg.d || lattice.cutoff() != cfg.m {
            return Err(LabError::Shape("draw and configuration use different lattices".into()));
        }
        let data = draw.randomize(&truncated_profile(&lattice, cfg.m, None))?;
        let sigma = sigma_truncated(cfg.m, cfg.d);
        let source = WickSource::new(data.clone(), sigma);
        let k = wick_sup_bound(&source, cfg.alpha, &cfg.k_times)?;
        let zero = FieldPair::zeros(&lattice);
        let t_guaranteed = perturbed_lwp_estimate(&zero, k, cfg.alpha)?.t_guaranteed;
        let horizon = if cfg.respect_guarantee { cfg.horizon.min(t_guaranteed) } else { cfg.horizon };
        let dt = (horizon / cfg.checkpoints as f64).min(default_dt(&data));
        let obs = Self::observers(cfg, horizon);
        let reference = solve(&EquationSpec::new(Variant::ResidualWick(source)), &zero, horizon, Some(dt), &obs, cfg.stepper)?;
        Ok(Self { cfg: cfg.clone(), seed: None, lattice, draw, sigma, k, t_guaranteed, horizon, dt, reference })
    }

    fn observers(cfg: &ConvergenceConfig, horizon: f64) -> Observers {
        let n = cfg.checkpoints;
        Observers {
            times: Some((1..=n).map(|j| horizon * j as f64 / n as f64).collect()),
            keep_states: true,
            ..Default::default()
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn reference(&self) -> &Trajectory {
        &self.reference
    }

    /// Mollified residual `v_delta` on the checkpoints.
    pub fn mollified(&self, kernel: Kernel, delta: f64) -> Result<Trajectory> {
        let profile = truncated_profile(&self.lattice, self.cfg.m, Some((kernel, delta)));
        let data = self.draw.randomize(&profile)?;
        let spec = EquationSpec::new(Variant::SigmaRenormalized { profile, k: 3 });
        let obs = Self::observers(&self.cfg, self.horizon);
        let mut traj = solve(&spec, &data, self.horizon, Some(self.dt), &obs, self.cfg.stepper)?;
        for (state, &t) in traj.states.iter_mut().zip(&traj.times) {
            *state = state.sub(&data.propagate(t));
        }
        Ok(traj)
    }

    pub fn run(&self, kernel: Kernel) -> Result<ConvergenceRun> {
        let s0 = self.cfg.s0;
        let mut distances = Vec::new();
        let mut terminated = self.reference.terminated.clone();
        for &delta in &self.cfg.deltas {
            let v = self.mollified(kernel, delta)?;
            if terminated.is_none() {
                terminated = v.terminated.clone();
            }
            let row: Vec<f64> = self
                .reference
                .states
                .iter()
                .zip(&v.states)
                .skip(1)
                .map(|(a, b)| a.pos.sub(&b.pos).sobolev_norm(s0))
                .collect();
            distances.push(row);
        }
        let complete = terminated.is_none();
        let sup_distance = distances
            .iter()
            .map(|r| if complete { r.iter().cloned().fold(0.0, f64::max) } else { f64::NAN })
            .collect();
        Ok(ConvergenceRun {
            schema: ConvergenceRun::SCHEMA.into(),
            seed: self.seed,
            kernel,
            d: self.cfg.d,
            m: self.cfg.m,
            s0,
            sigma: self.sigma,
            k: self.k,
            t_guaranteed: self.t_guaranteed,
            horizon: self.horizon,
            checkpoints: self.reference.times[1..].to_vec(),
            deltas: self.cfg.deltas.clone(),
            reference_hs: self.reference.states[1..].iter().map(|s| s.pos.sobolev_norm(s0)).collect(),
            distances,
            sup_distance,
            terminated,
        })
    }
}

/// One seed and one kernel.
pub fn run_convergence(cfg: &ConvergenceConfig, kernel: Kernel, seed: u64) -> Result<ConvergenceRun> {
    ConvergenceLab::new(cfg, seed)?.run(kernel)
}

/// Copies coefficients onto a larger lattice.
pub fn embed(field: &SpectralField, target: &Arc<Lattice>) -> Result<SpectralField> {
    let src = field.lattice();
    if src.dim() != target.dim() || src.cutoff() > target.cutoff() {
        return Err(LabError::Shape("embedding needs a larger lattice of the same dimension".into()));
    }
    Ok(SpectralField::from_fn(target, |n| src.index(n).map(|i| field.coeffs()[i]).unwrap_or_default()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshCheck {
    #[serde(rename = "M")]
    pub m: usize,
    pub horizon: f64,
    /// `sup_t ||v_M(t) - v_{2M}(t)||_{H^{s0}}` on the coarse box.
    pub sup_distance: f64,
    /// `sup_t` of the `H^{s0}` norm of `v_{2M}(t)` outside the coarse box.
    pub sup_outside: f64,
    /// `sup_t ||v_M(t)||_{H^{s0}}`.
    pub sup_reference: f64,
}

/// Reference at cutoff `M` against the same Gaussian coefficients on a
/// lattice of cutoff `2M` (still truncated at `|n| <= M`), over the same
/// horizon.
pub fn mesh_check(cfg: &ConvergenceConfig, seed: u64) -> Result<MeshCheck> {
    let coarse = ConvergenceLab::new(cfg, seed)?;
    let fine_lat = Lattice::new(cfg.d, 2 * cfg.m)?;
    let data = coarse.draw.randomize(&truncated_profile(&coarse.lattice, cfg.m, None))?;
    let fine_data = FieldPair::new(embed(&data.pos, &fine_lat)?, embed(&data.vel, &fine_lat)?)?;
    let source = WickSource::new(fine_data, coarse.sigma);
    let obs = ConvergenceLab::observers(cfg, coarse.horizon);
    let fine = solve(
        &EquationSpec::new(Variant::ResidualWick(source)),
        &FieldPair::zeros(&fine_lat),
        coarse.horizon,
        Some(coarse.dt),
        &obs,
        cfg.stepper,
    )?
    .require_complete()?;
    let (mut sup_distance, mut sup_outside, mut sup_reference): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (a, b) in coarse.reference.states.iter().zip(&fine.states) {
        let inner = SpectralField::from_fn(&coarse.lattice, |n| b.pos.coeff(n));
        sup_distance = sup_distance.max(a.pos.sub(&inner).sobolev_norm(cfg.s0));
        sup_outside = sup_outside.max(b.pos.sub(&embed(&inner, &fine_lat)?).sobolev_norm(cfg.s0));
        sup_reference = sup_reference.max(a.pos.sobolev_norm(cfg.s0));
    }
    Ok(MeshCheck { m: cfg.m, horizon: coarse.horizon, sup_distance, sup_outside, sup_reference })
}
