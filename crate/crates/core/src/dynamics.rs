//! Time stepping for the cubic wave equation and its renormalized variants
//!
//! ```text
//! d_t^2 u + (m - Laplacian) u + F(t, u) = 0
//! ```
//!
//! with an exact linear propagator and Gauss collocation of the Duhamel
//! integral, solved by Picard corrections on each step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::duhamel::{Dispersion, PanelRule, WeightCache};
use crate::error::{LabError, Result};
use crate::field::{pointwise, pointwise_many, pointwise_many_on, FieldPair, Lattice, SpectralField};
use crate::hermite::hermite_unchecked;
use crate::quadrature::lagrange_basis;
use crate::stochastic::{sigma_smooth, sigma_truncated};

/// Variance rule of a Wick source.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaRule {
    Constant(f64),
    /// `sigma(t)` of the free evolution of a randomized profile.
    Smooth(FieldPair),
}

impl SigmaRule {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            SigmaRule::Constant(s) => *s,
            SigmaRule::Smooth(p) => sigma_smooth(p, t),
        }
    }
}

/// Random linear solution `z(t) = S(t) data` together with the variance used
/// for its Wick powers. Valid for all times.
#[derive(Debug, Clone, PartialEq)]
pub struct WickSource {
    pub data: FieldPair,
    pub sigma: SigmaRule,
}

impl WickSource {
    pub fn new(data: FieldPair, sigma: f64) -> Self {
        Self { data, sigma: SigmaRule::Constant(sigma) }
    }

    /// The degenerate source `z = 0`.
    pub fn zero(lattice: &Arc<Lattice>) -> Self {
        Self::new(FieldPair::zeros(lattice), 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// No nonlinearity; reproduces the free evolution.
    Linear,
    PlainCubic,
    /// `F = P_N H_3(P_N u; sigma_N)`.
    TruncatedWick { n: f64 },
    /// Equation for `v = u - z`: `F = H_3(z(t) + v; sigma)`.
    ResidualWick(WickSource),
    /// `F = H_k(u; sigma(t))` for odd `k >= 3`.
    SigmaRenormalized { profile: FieldPair, k: usize },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Linear => "linear",
            Variant::PlainCubic => "plain-cubic",
            Variant::TruncatedWick { .. } => "truncated-wick",
            Variant::ResidualWick(_) => "residual-wick",
            Variant::SigmaRenormalized { .. } => "sigma-renormalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquationSpec {
    pub variant: Variant,
    pub mass: f64,
}

impl EquationSpec {
    pub fn new(variant: Variant) -> Self {
        Self { variant, mass: 1.0 }
    }

    pub fn plain_cubic() -> Self {
        Self::new(Variant::PlainCubic)
    }

    pub fn validate(&self, lattice: &Arc<Lattice>) -> Result<()> {
        if !(self.mass >= 0.0) {
            return Err(LabError::Domain(format!("mass must be >= 0, got {}", self.mass)));
        }
        match &self.variant {
            Variant::TruncatedWick { n } if *n < 0.0 => {
                Err(LabError::Domain(format!("truncation N must be >= 0, got {n}")))
            }
            Variant::ResidualWick(src) if **src.data.lattice() != **lattice => {
                Err(LabError::Shape("Wick source lives on a different lattice".into()))
            }
            Variant::SigmaRenormalized { profile, k } => {
                if *k < 3 || k % 2 == 0 || *k > 9 {
                    return Err(LabError::Domain(format!("renormalized power k must be odd in 3..=9, got {k}")));
                }
                if **profile.lattice() != **lattice {
                    return Err(LabError::Shape("profile lives on a different lattice".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Nonlinear term `F(t, u)`.
    pub fn forcing(&self, t: f64, u: &SpectralField, disp: &Dispersion) -> Result<SpectralField> {
        match &self.variant {
            Variant::Linear => Ok(SpectralField::zeros(u.lattice())),
            Variant::PlainCubic => pointwise(&[u], |a| a[0] * a[0] * a[0]),
            Variant::TruncatedWick { n } => {
                let sigma = sigma_truncated(n.floor() as usize, u.lattice().dim());
                let w = u.project(*n);
                Ok(pointwise(&[&w], |a| hermite_unchecked(3, a[0], sigma))?.project(*n))
            }
            Variant::ResidualWick(src) => {
                let z = disp.rotate_pos(&src.data, t);
                let sigma = src.sigma.at(t);
                pointwise(&[&z, u], |a| hermite_unchecked(3, a[0] + a[1], sigma))
            }
            Variant::SigmaRenormalized { profile, k } => {
                let sigma = sigma_smooth(profile, t);
                let grid = u.lattice().product_grid(*k);
                let k = *k;
                Ok(pointwise_many_on(&grid, &[u], 1, |a, o| o[0] = hermite_unchecked(k, a[0], sigma))?
                    .pop()
                    .unwrap())
            }
        }
    }

    /// `F(t_i, u_i)` for several nodes at once; the fields share the FFT
    /// passes.
    pub fn forcing_nodes(&self, ts: &[f64], us: &[SpectralField], disp: &Dispersion) -> Result<Vec<SpectralField>> {
        let q = us.len();
        if ts.len() != q || q == 0 {
            return Err(LabError::Shape("forcing needs one time per node".into()));
        }
        match &self.variant {
            Variant::Linear => Ok(us.iter().map(|u| SpectralField::zeros(u.lattice())).collect()),
            Variant::PlainCubic => {
                let refs: Vec<&SpectralField> = us.iter().collect();
                pointwise_many(&refs, q, |a, o| {
                    for (o, a) in o.iter_mut().zip(a) {
                        *o = a * a * a;
                    }
                })
            }
            Variant::TruncatedWick { n } => {
                let sigma = sigma_truncated(n.floor() as usize, us[0].lattice().dim());
                let ws: Vec<SpectralField> = us.iter().map(|u| u.project(*n)).collect();
                let refs: Vec<&SpectralField> = ws.iter().collect();
                let out = pointwise_many(&refs, q, |a, o| {
                    for (o, a) in o.iter_mut().zip(a) {
                        *o = hermite_unchecked(3, *a, sigma);
                    }
                })?;
                Ok(out.iter().map(|f| f.project(*n)).collect())
            }
            Variant::ResidualWick(src) => {
                let zs: Vec<SpectralField> = ts.iter().map(|&t| disp.rotate_pos(&src.data, t)).collect();
                let sig: Vec<f64> = ts.iter().map(|&t| src.sigma.at(t)).collect();
                let refs: Vec<&SpectralField> = zs.iter().chain(us).collect();
                pointwise_many(&refs, q, |a, o| {
                    for i in 0..q {
                        o[i] = hermite_unchecked(3, a[i] + a[q + i], sig[i]);
                    }
                })
            }
            Variant::SigmaRenormalized { profile, k } => {
                let sig: Vec<f64> = ts.iter().map(|&t| sigma_smooth(profile, t)).collect();
                let grid = us[0].lattice().product_grid(*k);
                let k = *k;
                let refs: Vec<&SpectralField> = us.iter().collect();
                pointwise_many_on(&grid, &refs, q, |a, o| {
                    for i in 0..q {
                        o[i] = hermite_unchecked(k, a[i], sig[i]);
                    }
                })
            }
        }
    }

    /// Energy `1/2 sum w_n^2 |u_n|^2 + 1/2 sum |v_n|^2 + int V(u)` with the
    /// potential matching the variant. Conserved for the autonomous variants.
    pub fn energy(&self, state: &FieldPair, disp: &Dispersion) -> Result<f64> {
        let w = disp.omega();
        let quad: f64 = (0..w.len())
            .map(|i| 0.5 * (w[i] * w[i] * state.pos.coeffs()[i].norm_sqr() + state.vel.coeffs()[i].norm_sqr()))
            .sum();
        let potential = match &self.variant {
            Variant::Linear => 0.0,
            Variant::TruncatedWick { n } => {
                let sigma = sigma_truncated(n.floor() as usize, state.lattice().dim());
                let p = state.pos.project(*n);
                pointwise(&[&p], |a| 0.25 * hermite_unchecked(4, a[0], sigma))?.coeff([0, 0]).re
            }
            _ => pointwise(&[&state.pos], |a| 0.25 * a[0].powi(4))?.coeff([0, 0]).re,
        };
        Ok(quad + potential)
    }
}

/// Collocation and Picard-correction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    /// Gauss nodes per step.
    pub nodes: usize,
    /// Maximum Picard corrections per step.
    pub corrections: usize,
    /// Relative `FL^1` change at which corrections stop early.
    pub tol: f64,
    /// Grid sup above which the solution is declared to have blown up.
    pub blowup_guard: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self { nodes: 3, corrections: 16, tol: 1e-14, blowup_guard: 1e8 }
    }
}

/// Statistics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub corrections: usize,
    pub last_change: f64,
}

/// Stateful stepper; caches collocation weights per step length.
pub struct Stepper {
    spec: EquationSpec,
    cfg: StepperConfig,
    cache: WeightCache,
    /// End time, length and nodal forcing of the last accepted step.
    last: Option<(f64, f64, Vec<SpectralField>)>,
}

impl Stepper {
    pub fn new(spec: EquationSpec, lattice: &Arc<Lattice>, cfg: StepperConfig) -> Result<Self> {
        spec.validate(lattice)?;
        let disp = Arc::new(Dispersion::new(lattice, spec.mass)?);
        Ok(Self { spec, cfg, cache: WeightCache::new(disp, PanelRule::gauss(cfg.nodes)?), last: None })
    }

    pub fn spec(&self) -> &EquationSpec {
        &self.spec
    }

    pub fn dispersion(&self) -> &Arc<Dispersion> {
        self.cache.dispersion()
    }

    pub fn energy(&self, state: &FieldPair) -> Result<f64> {
        self.spec.energy(state, self.dispersion())
    }

    /// Advances `state` from `t` to `t + dt`.
    pub fn step(&mut self, state: &FieldPair, t: f64, dt: f64) -> Result<(FieldPair, StepInfo)> {
        if **state.lattice() != **self.dispersion().lattice() {
            return Err(LabError::Shape("state and stepper use different lattices".into()));
        }
        let w = self.cache.get(dt);
        let disp = self.dispersion().clone();
        let nodes: Vec<f64> = self.cache.rule().nodes().iter().map(|c| t + c * dt).collect();
        let q = nodes.len();
        let zero: Vec<SpectralField> = (0..q).map(|_| SpectralField::zeros(state.lattice())).collect();
        let mut u = match &self.last {
            Some((te, h, fp)) if (te - t).abs() <= 1e-12 * dt.abs() && (h - dt).abs() <= 1e-12 * dt.abs() => {
                // continue the previous step's forcing polynomial
                let c = self.cache.rule().nodes();
                let guess: Vec<SpectralField> = c
                    .iter()
                    .map(|ci| {
                        let mut g = SpectralField::zeros(state.lattice());
                        for (m, fm) in fp.iter().enumerate() {
                            g.axpy(lagrange_basis(c, m, 1.0 + ci), fm);
                        }
                        g
                    })
                    .collect();
                w.nodal(&disp, state, &guess)
            }
            _ => w.nodal(&disp, state, &zero),
        };
        self.last = None;
        let mut f;
        let mut info = StepInfo::default();
        if matches!(self.spec.variant, Variant::Linear) {
            return Ok((w.advance(&disp, state, &zero), info));
        }
        // the final forcing belongs to the previous iterate, which differs
        // from `u` by at most the stopping tolerance
        loop {
            f = self.spec.forcing_nodes(&nodes, &u, &disp)?;
            if info.corrections == self.cfg.corrections {
                break;
            }
            let next = w.nodal(&disp, state, &f);
            let scale = next.iter().map(|x| x.wiener_norm()).fold(1.0, f64::max);
            let change = next.iter().zip(&u).map(|(a, b)| a.sub(b).wiener_norm()).fold(0.0, f64::max);
            u = next;
            info.corrections += 1;
            info.last_change = change / scale;
            if !info.last_change.is_finite() {
                return Err(LabError::Blowup { t, reason: "non-finite Picard iterate".into() });
            }
            if info.last_change <= self.cfg.tol {
                break;
            }
        }
        if info.last_change > 1e-6 {
            return Err(LabError::Accuracy(format!(
                "Picard corrections stalled at relative change {:.3e} (t = {t}, dt = {dt})",
                info.last_change
            )));
        }
        let next = w.advance(&disp, state, &f);
        self.last = Some((t + dt, dt, f));
        let bound = next.pos.wiener_norm();
        if !bound.is_finite() {
            return Err(LabError::Blowup { t: t + dt, reason: "non-finite state".into() });
        }
        if bound > self.cfg.blowup_guard {
            let sup = next.pos.grid_sup(0.0, 2);
            if sup > self.cfg.blowup_guard {
                return Err(LabError::Blowup {
                    t: t + dt,
                    reason: format!("grid sup {sup:.3e} exceeds {:.1e}", self.cfg.blowup_guard),
                });
            }
        }
        Ok((next, info))
    }
}

/// One step with fresh weights.
pub fn step(spec: &EquationSpec, state: &FieldPair, t: f64, dt: f64) -> Result<FieldPair> {
    let mut s = Stepper::new(spec.clone(), state.lattice(), StepperConfig::default())?;
    Ok(s.step(state, t, dt)?.0)
}

/// Default step `min(0.1 / ||data||_{FL^{0,1}}, 0.05)`.
pub fn default_dt(data: &FieldPair) -> f64 {
    let n = data.wiener_norm();
    if n == 0.0 {
        0.05
    } else {
        (0.1 / n).min(0.05)
    }
}

/// Which quantities a trajectory records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Observers {
    /// Recording times in `(0, t_end]`; every step when absent.
    pub times: Option<Vec<f64>>,
    /// `H^s` norms of the position component.
    pub sobolev: Vec<f64>,
    /// `FL^{s,p}` norms of the position component.
    pub fourier_lebesgue: Vec<(f64, f64)>,
    pub keep_states: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub columns: Vec<String>,
    /// `norms[k][j]` is column `j` at `times[k]`.
    pub norms: Vec<Vec<f64>>,
    pub states: Vec<FieldPair>,
    pub last: FieldPair,
    pub steps: usize,
    pub terminated: Option<Termination>,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn require_complete(self) -> Result<Self> {
        match &self.terminated {
            None => Ok(self),
            Some(t) => Err(LabError::Blowup { t: t.t, reason: t.reason.clone() }),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.norms.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,energy");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.17e},{:.17e}", self.energy[k]));
            for v in &self.norms[k] {
                out.push_str(&format!(",{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn observe(
    obs: &Observers,
    stepper: &Stepper,
    t: f64,
    state: &FieldPair,
    traj: &mut Trajectory,
) -> Result<()> {
    traj.times.push(t);
    traj.energy.push(stepper.energy(state)?);
    let mut row: Vec<f64> = obs.sobolev.iter().map(|&s| state.pos.sobolev_norm(s)).collect();
    for &(s, p) in &obs.fourier_lebesgue {
        row.push(state.pos.fourier_lebesgue_norm(s, p)?);
    }
    traj.norms.push(row);
    if obs.keep_states {
        traj.states.push(state.clone());
    }
    Ok(())
}

/// Integrates from `t = 0` to `t_end` (either sign). A blowup or a stalled
/// step ends the trajectory early with `terminated` set.
pub fn solve(
    spec: &EquationSpec,
    data: &FieldPair,
    t_end: f64,
    dt: Option<f64>,
    observers: &Observers,
    cfg: StepperConfig,
) -> Result<Trajectory> {
    let dt = dt.unwrap_or_else(|| default_dt(data));
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LabError::Domain(format!("step must be positive, got {dt}")));
    }
    let mut stepper = Stepper::new(spec.clone(), data.lattice(), cfg)?;
    let sign = if t_end < 0.0 { -1.0 } else { 1.0 };
    let horizon = t_end.abs();
    let marks: Vec<f64> = match &observers.times {
        Some(ts) => {
            let mut v: Vec<f64> = ts.iter().map(|t| t.abs()).filter(|&t| t > 0.0 && t <= horizon).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            if v.last().is_none_or(|&l| l < horizon) {
                v.push(horizon);
            }
            v
        }
        None => vec![horizon],
    };
    let every_step = observers.times.is_none();
    let mut columns: Vec<String> = observers.sobolev.iter().map(|s| format!("hs_{s}")).collect();
    columns.extend(observers.fourier_lebesgue.iter().map(|(s, p)| format!("fl_{s}_{p}")));
    let mut traj = Trajectory {
        times: vec![],
        energy: vec![],
        columns,
        norms: vec![],
        states: vec![],
        last: data.clone(),
        steps: 0,
        terminated: None,
    };
    observe(observers, &stepper, 0.0, data, &mut traj)?;
    let mut state = data.clone();
    let mut t = 0.0;
    'outer: for &mark in &marks {
        let n = ((mark - t) / dt - 1e-9).ceil().max(1.0) as usize;
        let h = (mark - t) / n as f64;
        for k in 0..n {
            let t0 = sign * t;
            let target = if k + 1 == n { mark } else { t + h };
            match advance_with_retries(&mut stepper, &state, t0, sign * (target - t)) {
                Ok(next) => state = next,
                Err(LabError::Blowup { t: tb, reason }) => {
                    traj.terminated = Some(Termination { t: tb, reason });
                    break 'outer;
                }
                Err(LabError::Accuracy(reason)) => {
                    traj.terminated = Some(Termination { t: t0, reason });
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            t = target;
            traj.steps += 1;
            if every_step && k + 1 < n {
                observe(observers, &stepper, sign * t, &state, &mut traj)?;
            }
        }
        observe(observers, &stepper, sign * t, &state, &mut traj)?;
    }
    traj.last = state;
    Ok(traj)
}

/// One step, split into halves when the Picard corrections stall.
fn advance_with_retries(stepper: &mut Stepper, state: &FieldPair, t: f64, dt: f64) -> Result<FieldPair> {
    fn go(stepper: &mut Stepper, state: &FieldPair, t: f64, dt: f64, depth: usize) -> Result<FieldPair> {
        match stepper.step(state, t, dt) {
            Ok((s, _)) => Ok(s),
            Err(LabError::Accuracy(r)) if depth < 6 => {
                let _ = r;
                let mid = go(stepper, state, t, dt / 2.0, depth + 1)?;
                go(stepper, &mid, t + dt / 2.0, dt / 2.0, depth + 1)
            }
            Err(e) => Err(e),
        }
    }
    go(stepper, state, t, dt, 0)
}

/// Contraction constant of the Wiener-algebra local theory. With
/// `||S(t) data||_{FL^1} <= ||data||` and `||I[u^3](t)||_{FL^1} <= t^2/2 ||u||^3`,
/// the Picard map contracts on the ball of radius `2 ||data||` once
/// `t <= 1 / (sqrt(12) ||data||)`.
pub const WIENER_CONTRACTION: f64 = 0.288_675_134_594_812_9;

/// Guaranteed existence time `c / ||data||_{FL^{0,1}}`; `+inf` for zero data.
pub fn wiener_lwp_time(data: &FieldPair) -> f64 {
    let n = data.wiener_norm();
    if n == 0.0 {
        f64::INFINITY
    } else {
        WIENER_CONTRACTION / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedLwpEstimate {
    pub alpha: f64,
    /// `||(phi_0, phi_1)||` in `FL^{alpha, 1/(1-alpha)} x FL^{alpha-1, 1/(1-alpha)}`.
    pub data_norm: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub branch_data: f64,
    pub branch_wick: f64,
    pub t_guaranteed: f64,
}

/// Sampled `K = max_{t, l} sup_x |<grad>^{-alpha/2} :z^l:(t)|` over times in
/// `[-1, 1]` and `l = 1, 2, 3`.
pub fn wick_sup_bound(source: &WickSource, alpha: f64, times: &[f64]) -> Result<f64> {
    let disp = Dispersion::new(source.data.lattice(), 1.0)?;
    let mut k: f64 = 0.0;
    for &t in times {
        if t.abs() > 1.0 {
            return Err(LabError::Domain(format!("sampling time {t} outside [-1, 1]")));
        }
        let z = disp.rotate_pos(&source.data, t);
        let st = crate::stochastic::wick_powers(&z, source.sigma.at(t), 3)?;
        for l in 1..=3 {
            k = k.max(st.power(l).grid_sup(alpha / 2.0, 2));
        }
    }
    Ok(k)
}

/// `T = { max(||phi||^{1/(1-alpha)}, K (1 + ||phi||)) }^{-1}`.
pub fn perturbed_lwp_estimate(data: &FieldPair, k: f64, alpha: f64) -> Result<PerturbedLwpEstimate> {
    if !(alpha > 0.0 && alpha <= 0.25) {
        return Err(LabError::Domain(format!("alpha must lie in (0, 1/4], got {alpha}")));
    }
    let p = 1.0 / (1.0 - alpha);
    let norm = data.fourier_lebesgue_norm(alpha, p)?;
    let branch_data = norm.powf(1.0 / (1.0 - alpha));
    let branch_wick = k * (1.0 + norm);
    let m = branch_data.max(branch_wick);
    let t_guaranteed = if m == 0.0 { f64::INFINITY } else { 1.0 / m };
    Ok(PerturbedLwpEstimate { alpha, data_norm: norm, k, branch_data, branch_wick, t_guaranteed })
}

/// `sup_t ||u(t) - v(t)||_{L^2}` over the common recording times.
pub fn approximation_gap(u: &Trajectory, v: &Trajectory) -> Result<f64> {
    if u.times.len() != v.times.len() || u.times.iter().zip(&v.times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(LabError::Shape("trajectories use different time grids".into()));
    }
    if u.states.len() != u.times.len() || v.states.len() != v.times.len() {
        return Err(LabError::Shape("approximation gap needs recorded states".into()));
    }
    Ok(u.states
        .iter()
        .zip(&v.states)
        .map(|(a, b)| a.pos.sub(&b.pos).l2_norm())
        .fold(0.0, f64::max))
}
