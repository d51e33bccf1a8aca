//! Exact-in-time treatment of the linear part and piecewise-polynomial
//! treatment of forcing terms.
//!
//! On a panel `[t0, t0 + h]` a forcing `F` known at the Gauss nodes
//! `t0 + c_i h` is replaced by its Lagrange interpolant, and the integrals
//! `int sin((tau - s) w) / w * l_m(s) ds` and `int cos((tau - s) w) l_m(s) ds`
//! are precomputed per distinct frequency. This gives both the stepper of
//! the nonlinear equations and the Duhamel integrator used by the tree
//! expansion.

use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{FieldPair, Lattice, SpectralField};
use crate::par;
use crate::quadrature::{lagrange_basis, GaussLegendre};

/// `sin(a w) / w`, continuous at `w = 0`.
#[inline]
pub fn sin_over(a: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else {
        (a * w).sin() / w
    }
}

/// Frequencies `w_n = sqrt(m + |n|^2)` of the Klein-Gordon operator with mass `m`.
#[derive(Debug, Clone)]
pub struct Dispersion {
    lattice: Arc<Lattice>,
    mass: f64,
    omega: Vec<f64>,
    /// Distinct `|n|^2` values and, per lattice index, its slot.
    keys: Vec<i64>,
    slot: Vec<u32>,
}

impl Dispersion {
    pub fn new(lattice: &Arc<Lattice>, mass: f64) -> Result<Self> {
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(LabError::Domain(format!("mass must be >= 0, got {mass}")));
        }
        let omega = (0..lattice.len())
            .map(|i| (mass + lattice.norm2(i) as f64).sqrt())
            .collect();
        let mut keys: Vec<i64> = (0..lattice.len()).map(|i| lattice.norm2(i)).collect();
        keys.sort_unstable();
        keys.dedup();
        let lookup: HashMap<i64, u32> = keys.iter().enumerate().map(|(s, &k)| (k, s as u32)).collect();
        let slot = (0..lattice.len()).map(|i| lookup[&lattice.norm2(i)]).collect();
        Ok(Self { lattice: lattice.clone(), mass, omega, keys, slot })
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    fn slot_omega(&self, s: usize) -> f64 {
        (self.mass + self.keys[s] as f64).sqrt()
    }

    /// Free evolution of a pair over time `t`.
    pub fn rotate(&self, data: &FieldPair, t: f64) -> FieldPair {
        let mut pos = data.pos.clone();
        let mut vel = data.vel.clone();
        {
            let (p, v) = (pos.coeffs_mut(), vel.coeffs_mut());
            for (i, &w) in self.omega.iter().enumerate() {
                let c = (t * w).cos();
                let sw = sin_over(t, w);
                let (u0, v0) = (p[i], v[i]);
                p[i] = u0 * c + v0 * sw;
                v[i] = -u0 * (w * w * sw) + v0 * c;
            }
        }
        FieldPair { pos, vel }
    }

    /// Position component of the free evolution.
    pub fn rotate_pos(&self, data: &FieldPair, t: f64) -> SpectralField {
        let mut pos = SpectralField::zeros(&self.lattice);
        let p = pos.coeffs_mut();
        for (i, &w) in self.omega.iter().enumerate() {
            p[i] = data.pos.coeffs()[i] * (t * w).cos() + data.vel.coeffs()[i] * sin_over(t, w);
        }
        pos
    }
}

/// Collocation nodes on `[0, 1]` (Gauss-Legendre) with their Lagrange basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRule {
    nodes: Vec<f64>,
}

impl PanelRule {
    pub fn gauss(q: usize) -> Result<Self> {
        if q == 0 || q > 16 {
            return Err(LabError::Domain(format!("collocation node count must be in 1..=16, got {q}")));
        }
        let gl = GaussLegendre::new(q);
        Ok(Self { nodes: gl.nodes().iter().map(|x| 0.5 * (x + 1.0)).collect() })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Per-frequency weights for one panel length `h`.
#[derive(Debug, Clone)]
pub struct PanelWeights {
    q: usize,
    h: f64,
    width: usize,
    data: Vec<f64>,
}

impl PanelWeights {
    // slot layout: cos_i (q) | sin_i/w (q) | A_im (q*q) | cos h, sin h / w, w sin h | Epos (q) | Evel (q)
    pub fn new(disp: &Dispersion, rule: &PanelRule, h: f64) -> Self {
        let q = rule.len();
        let width = 4 * q + q * q + 3;
        let gl = GaussLegendre::new(20);
        let c = rule.nodes();
        let slots = par::map_range(disp.keys.len(), |s| {
            let w = disp.slot_omega(s);
            let mut row = vec![0.0; width];
            // integral over [0, b] (in units of h) of k(x) l_m(x), split so
            // each panel carries at most ~2 radians of phase
            let integrate = |b: f64, k: &dyn Fn(f64) -> f64, m: usize| -> f64 {
                let panels = 1 + ((h * w).abs() * b / 2.0).floor() as usize;
                h * gl.integrate_panels(0.0, b, panels, |x| k(x) * lagrange_basis(c, m, x))
            };
            for i in 0..q {
                row[i] = (c[i] * h * w).cos();
                row[q + i] = sin_over(c[i] * h, w);
                for m in 0..q {
                    row[2 * q + i * q + m] = integrate(c[i], &|x| sin_over(h * (c[i] - x), w), m);
                }
            }
            let base = 2 * q + q * q;
            row[base] = (h * w).cos();
            row[base + 1] = sin_over(h, w);
            row[base + 2] = w * (h * w).sin();
            for m in 0..q {
                row[base + 3 + m] = integrate(1.0, &|x| sin_over(h * (1.0 - x), w), m);
                row[base + 3 + q + m] = integrate(1.0, &|x| (h * (1.0 - x) * w).cos(), m);
            }
            row
        });
        Self { q, h, width, data: slots.concat() }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    fn row(&self, slot: u32) -> &[f64] {
        let s = slot as usize * self.width;
        &self.data[s..s + self.width]
    }

    /// Positions at the panel nodes:
    /// `S(c_i h) state - sum_m A_im F_m`.
    pub fn nodal(&self, disp: &Dispersion, state: &FieldPair, forcing: &[SpectralField]) -> Vec<SpectralField> {
        let q = self.q;
        let lat = disp.lattice();
        let mut out: Vec<SpectralField> = (0..q).map(|_| SpectralField::zeros(lat)).collect();
        let (u, v) = (state.pos.coeffs(), state.vel.coeffs());
        for (i, o) in out.iter_mut().enumerate() {
            let oc = o.coeffs_mut();
            for idx in 0..lat.len() {
                let r = self.row(disp.slot[idx]);
                let mut acc = u[idx] * r[i] + v[idx] * r[q + i];
                for (m, f) in forcing.iter().enumerate() {
                    acc -= f.coeffs()[idx] * r[2 * q + i * q + m];
                }
                oc[idx] = acc;
            }
        }
        out
    }

    /// State at the end of the panel.
    pub fn advance(&self, disp: &Dispersion, state: &FieldPair, forcing: &[SpectralField]) -> FieldPair {
        let q = self.q;
        let lat = disp.lattice();
        let base = 2 * q + q * q;
        let mut pos = SpectralField::zeros(lat);
        let mut vel = SpectralField::zeros(lat);
        let (u, v) = (state.pos.coeffs(), state.vel.coeffs());
        {
            let (pc, vc) = (pos.coeffs_mut(), vel.coeffs_mut());
            for idx in 0..lat.len() {
                let r = self.row(disp.slot[idx]);
                let mut p = u[idx] * r[base] + v[idx] * r[base + 1];
                let mut w = -u[idx] * r[base + 2] + v[idx] * r[base];
                for (m, f) in forcing.iter().enumerate() {
                    let fm: Complex64 = f.coeffs()[idx];
                    p -= fm * r[base + 3 + m];
                    w -= fm * r[base + 3 + q + m];
                }
                pc[idx] = p;
                vc[idx] = w;
            }
        }
        FieldPair { pos, vel }
    }
}

/// Cache of panel weights keyed by the exact panel length.
#[derive(Debug, Clone)]
pub struct WeightCache {
    disp: Arc<Dispersion>,
    rule: PanelRule,
    tables: HashMap<u64, Arc<PanelWeights>>,
}

impl WeightCache {
    pub fn new(disp: Arc<Dispersion>, rule: PanelRule) -> Self {
        Self { disp, rule, tables: HashMap::new() }
    }

    pub fn dispersion(&self) -> &Arc<Dispersion> {
        &self.disp
    }

    pub fn rule(&self) -> &PanelRule {
        &self.rule
    }

    pub fn get(&mut self, h: f64) -> Arc<PanelWeights> {
        if self.tables.len() > 64 {
            self.tables.clear();
        }
        let (disp, rule) = (&self.disp, &self.rule);
        self.tables
            .entry(h.to_bits())
            .or_insert_with(|| Arc::new(PanelWeights::new(disp, rule, h)))
            .clone()
    }
}

/// Panel decomposition of `[0, t_last]` with breakpoints at the requested
/// output times and `per_interval` equal panels between breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelGrid {
    /// `(start, length)` per panel.
    pub panels: Vec<(f64, f64)>,
    /// Index of the panel ending at each requested time.
    pub output_panel: Vec<usize>,
}

impl PanelGrid {
    pub fn new(times: &[f64], per_interval: usize) -> Result<Self> {
        let mut prev = 0.0;
        let mut panels = Vec::new();
        let mut output_panel = Vec::new();
        for &t in times {
            if !(t > prev) && !(t == prev && t == 0.0 && panels.is_empty()) {
                return Err(LabError::Domain(format!("output times must be positive and increasing, got {times:?}")));
            }
            if t > prev {
                let h = (t - prev) / per_interval as f64;
                for p in 0..per_interval {
                    panels.push((prev + p as f64 * h, h));
                }
            }
            output_panel.push(panels.len());
            prev = t;
        }
        Ok(Self { panels, output_panel })
    }

    /// Times of all collocation nodes, panel-major.
    pub fn node_times(&self, rule: &PanelRule) -> Vec<f64> {
        self.panels
            .iter()
            .flat_map(|&(a, h)| rule.nodes().iter().map(move |c| a + c * h))
            .collect()
    }
}

/// Duhamel integral `-int_0^t sin((t - s) w) / w F(s) ds` of a forcing
/// sampled at every node of `grid`, returned at every node and at every
/// output time.
pub fn duhamel_on_grid(
    cache: &mut WeightCache,
    grid: &PanelGrid,
    forcing: &[SpectralField],
) -> Result<(Vec<SpectralField>, Vec<SpectralField>)> {
    let q = cache.rule().len();
    if forcing.len() != grid.panels.len() * q {
        return Err(LabError::Shape(format!(
            "forcing has {} samples, the panel grid needs {}",
            forcing.len(),
            grid.panels.len() * q
        )));
    }
    let disp = cache.dispersion().clone();
    let mut state = FieldPair::zeros(disp.lattice());
    let mut at_nodes = Vec::with_capacity(forcing.len());
    let mut ends = vec![state.pos.clone()];
    for (p, &(_, h)) in grid.panels.iter().enumerate() {
        let w = cache.get(h);
        let f = &forcing[p * q..(p + 1) * q];
        at_nodes.extend(w.nodal(&disp, &state, f));
        state = w.advance(&disp, &state, f);
        ends.push(state.pos.clone());
    }
    let outputs = grid.output_panel.iter().map(|&p| ends[p].clone()).collect();
    Ok((at_nodes, outputs))
}

/// Tolerance settings for adaptive panel doubling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss nodes per panel.
    pub nodes: usize,
    /// Target `FL^1` change between successive refinements, relative to
    /// `max(1, ||result||_{FL^1})`.
    pub tol: f64,
    pub max_doublings: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { nodes: 6, tol: 1e-9, max_doublings: 10 }
    }
}

/// Modewise Duhamel integral of a time-dependent source at time `t`, with
/// panel doubling until two refinements agree.
pub fn duhamel(
    lattice: &Arc<Lattice>,
    source: impl Fn(f64) -> Result<SpectralField>,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<SpectralField> {
    let disp = Arc::new(Dispersion::new(lattice, 1.0)?);
    let mut cache = WeightCache::new(disp, PanelRule::gauss(spec.nodes)?);
    if t == 0.0 {
        return Ok(SpectralField::zeros(lattice));
    }
    let sign = t.signum();
    let mut prev: Option<SpectralField> = None;
    let mut panels = 1;
    for _ in 0..=spec.max_doublings {
        let grid = PanelGrid::new(&[t.abs()], panels)?;
        let forcing = grid
            .node_times(cache.rule())
            .into_iter()
            .map(|s| source(sign * s))
            .collect::<Result<Vec<_>>>()?;
        // for t < 0 the substitution s -> -s leaves the kernel invariant
        let (_, out) = duhamel_on_grid(&mut cache, &grid, &forcing)?;
        let value = out.into_iter().next().unwrap();
        if let Some(p) = &prev {
            let diff = value.sub(p).wiener_norm();
            if diff <= spec.tol * value.wiener_norm().max(1.0) {
                return Ok(value);
            }
        }
        prev = Some(value);
        panels *= 2;
    }
    Err(LabError::Accuracy(format!(
        "Duhamel quadrature did not reach tolerance {} after {} doublings",
        spec.tol, spec.max_doublings
    )))
}

/// Closed form of `int_0^t |sin((t - s) w)| / w ds = w^{-2} int_0^{tw} |sin y| dy`.
pub fn duhamel_multiplier_abs(w: f64, t: f64) -> f64 {
    let x = (t * w).abs();
    if w == 0.0 {
        return 0.5 * t * t;
    }
    let k = (x / std::f64::consts::PI).floor();
    let r = x - k * std::f64::consts::PI;
    (2.0 * k + 1.0 - r.cos()) / (w * w)
}

/// The same integral by composite Gauss-Legendre quadrature over the half
/// periods of the integrand.
pub fn duhamel_multiplier_numeric(w: f64, t: f64) -> f64 {
    let gl = GaussLegendre::new(16);
    let x = (t * w).abs();
    let pi = std::f64::consts::PI;
    let full = (x / pi).floor() as usize;
    let mut acc = 0.0;
    for k in 0..full {
        acc += gl.integrate(k as f64 * pi, (k + 1) as f64 * pi, |y| y.sin().abs());
    }
    acc += gl.integrate(full as f64 * pi, x, |y| y.sin().abs());
    acc / (w * w)
}
