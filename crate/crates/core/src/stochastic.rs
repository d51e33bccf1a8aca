//! Gaussian free field data, the random linear solution, Wick powers, and
//! closed-form second moments of their Fourier coefficients.
//!
//! All second moments reduce to sums over
//! `Gamma_l(n) = { (n_1, .., n_l) : n_1 + .. + n_l = n }` of products of
//! one-mode weights. For two coefficient filters `a`, `b` applied to the
//! free field the covariance identity for Hermite polynomials of jointly
//! Gaussian variables gives
//!
//! ```text
//! E | <:z_a^l: - :z_b^l:, e_n> |^2 = l! sum_{Gamma_l(n)} (prod a(n_j) - prod b(n_j))^2 prod <n_j>^{-2}
//! ```
//!
//! which is evaluated either by exhaustive enumeration or through the
//! convolution powers `c^{*l}(n)` of the expanded square.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{pointwise_many, FieldPair, Kernel, Lattice, Mode, SpectralField};
use crate::hermite::{hermite_all, hermite_unchecked};
use crate::par;
use crate::seeding::member_rng;
use crate::stats::{loglog_fit, LinearFit, Moments};

/// Per-mode standard complex Gaussians `g_{0,n}`, `g_{1,n}` with
/// `g_{j,-n} = conj g_{j,n}`; real and imaginary parts have variance 1/2 off
/// the origin, the self-conjugate mode is a real unit Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDraw {
    lattice: Arc<Lattice>,
    pub g0: Vec<Complex64>,
    pub g1: Vec<Complex64>,
}

fn draw_field(lattice: &Lattice, rng: &mut impl Rng) -> Vec<Complex64> {
    let mut g = vec![Complex64::new(0.0, 0.0); lattice.len()];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for idx in 0..lattice.len() {
        let neg = lattice.neg(idx);
        if idx < neg {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            g[idx] = Complex64::new(h * re, h * im);
            g[neg] = g[idx].conj();
        } else if idx == neg {
            let re: f64 = rng.sample(StandardNormal);
            g[idx] = Complex64::new(re, 0.0);
        }
    }
    g
}

impl GaussianDraw {
    pub fn sample(lattice: &Arc<Lattice>, rng: &mut impl Rng) -> Self {
        let g0 = draw_field(lattice, rng);
        let g1 = draw_field(lattice, rng);
        Self { lattice: lattice.clone(), g0, g1 }
    }

    /// The degenerate draw `g = 0`.
    pub fn zeros(lattice: &Arc<Lattice>) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); lattice.len()];
        Self { lattice: lattice.clone(), g0: z.clone(), g1: z }
    }

    pub fn from_seed(lattice: &Arc<Lattice>, seed: u64) -> Self {
        Self::sample(lattice, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// Randomization `phi_j^w = sum g_{j,n} phi_j^(n) e_n` of a profile pair.
    pub fn randomize(&self, profile: &FieldPair) -> Result<FieldPair> {
        if **profile.lattice() != *self.lattice {
            return Err(LabError::Shape("profile and Gaussian draw use different lattices".into()));
        }
        let mk = |g: &[Complex64], f: &SpectralField| {
            let c = g.iter().zip(f.coeffs()).map(|(g, c)| g * c).collect();
            SpectralField::from_coeffs_symmetrized(&self.lattice, c)
        };
        FieldPair::new(mk(&self.g0, &profile.pos)?, mk(&self.g1, &profile.vel)?)
    }

    /// Free-field data `u_0^(n) = g_{0,n} / <n>`, `u_1^(n) = g_{1,n}`.
    pub fn gff(&self) -> FieldPair {
        let lat = &self.lattice;
        let pos = SpectralField::from_fn(lat, |n| {
            let i = lat.index(n).unwrap();
            self.g0[i] / lat.bracket(i)
        });
        let vel = SpectralField::from_fn(lat, |n| self.g1[lat.index(n).unwrap()]);
        FieldPair { pos, vel }
    }
}

/// Samples the massive Gaussian free field data on `lattice`.
pub fn sample_gff(lattice: &Arc<Lattice>, seed: u64) -> FieldPair {
    GaussianDraw::from_seed(lattice, seed).gff()
}

/// Deterministic profile of the free field: `(sum e_n / <n>, sum e_n)`
/// optionally filtered. Its randomization is the free field.
pub fn gff_profile(lattice: &Arc<Lattice>, filter: &Smoothing) -> FieldPair {
    let pos = SpectralField::from_fn(lattice, |n| {
        let b = (1.0 + (n[0] * n[0] + n[1] * n[1]) as f64).sqrt();
        Complex64::new(filter.weight(n) / b, 0.0)
    });
    let vel = SpectralField::from_fn(lattice, |n| Complex64::new(filter.weight(n), 0.0));
    FieldPair { pos, vel }
}

/// `(S(t) data, d_t S(t) data)`.
pub fn linear_flow(data: &FieldPair, t: f64) -> FieldPair {
    data.propagate(t)
}

/// `sigma_N = sum_{|n| <= N} <n>^{-2}` over `Z^d`.
pub fn sigma_truncated(n_cut: usize, d: usize) -> f64 {
    let nn = n_cut as i64;
    let lim = nn * nn;
    let mut s = 0.0;
    if d == 1 {
        for a in -nn..=nn {
            s += 1.0 / (1.0 + (a * a) as f64);
        }
        return s;
    }
    for a in -nn..=nn {
        for b in -nn..=nn {
            let q = a * a + b * b;
            if q <= lim {
                s += 1.0 / (1.0 + q as f64);
            }
        }
    }
    s
}

/// `sigma(t) = sum_n cos^2(t<n>) |phi_0^(n)|^2 + sin^2(t<n>) <n>^{-2} |phi_1^(n)|^2`,
/// the pointwise variance of the free evolution of a randomized profile.
pub fn sigma_smooth(profile: &FieldPair, t: f64) -> f64 {
    let lat = profile.lattice();
    (0..lat.len())
        .map(|i| {
            let w = lat.bracket(i);
            let (s, c) = (t * w).sin_cos();
            c * c * profile.pos.coeffs()[i].norm_sqr() + s * s / (w * w) * profile.vel.coeffs()[i].norm_sqr()
        })
        .sum()
}

/// How a Wick stack was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Truncated { n: f64 },
    Mollified { kernel: Kernel, delta: f64 },
    SmoothData,
    Lattice,
}

/// A field `z` with its Wick powers `:z^l: = H_l(z; sigma)`.
#[derive(Debug, Clone)]
pub struct WickStack {
    pub z: SpectralField,
    /// `powers[l]` is `:z^l:`, `powers[0]` the constant one.
    pub powers: Vec<SpectralField>,
    pub sigma: f64,
    pub provenance: Provenance,
}

impl WickStack {
    pub fn power(&self, l: usize) -> &SpectralField {
        &self.powers[l]
    }
}

/// Wick powers formed pointwise on the dealiasing grid and projected back
/// to the lattice.
pub fn wick_powers(z: &SpectralField, sigma: f64, max_l: usize) -> Result<WickStack> {
    if max_l > 3 {
        return Err(LabError::Domain(format!("Wick powers are formed up to l = 3, got {max_l}")));
    }
    if sigma < 0.0 {
        return Err(LabError::Domain(format!("negative Wick variance {sigma}")));
    }
    let powers = pointwise_many(&[z], max_l + 1, |a, o| hermite_all(a[0], sigma, o))?;
    Ok(WickStack { z: z.clone(), powers, sigma, provenance: Provenance::Lattice })
}

/// Coefficient filter applied to the free field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoothing {
    /// Sharp projection `P_N` onto `|n| <= N`.
    Truncate { n: f64 },
    /// Multiplication by `rho^(delta n)`.
    Mollify { kernel: Kernel, delta: f64 },
    /// No filter.
    Identity,
}

impl Smoothing {
    pub fn weight(&self, n: Mode) -> f64 {
        match *self {
            Smoothing::Truncate { n: cut } => {
                if ((n[0] * n[0] + n[1] * n[1]) as f64) <= cut * cut {
                    1.0
                } else {
                    0.0
                }
            }
            Smoothing::Mollify { kernel, delta } => kernel.hat([delta * n[0] as f64, delta * n[1] as f64]),
            Smoothing::Identity => 1.0,
        }
    }

    /// Pointwise variance `sum a(n)^2 <n>^{-2}` of the filtered field on the
    /// enumeration box `|n_i| <= bound`.
    pub fn variance(&self, d: usize, bound: usize) -> f64 {
        let box_ = ModeBox::new(d, bound);
        box_.modes().map(|n| self.weight(n).powi(2) / bracket2(n)).sum()
    }
}

#[inline]
fn bracket2(n: Mode) -> f64 {
    1.0 + (n[0] * n[0] + n[1] * n[1]) as f64
}

/// Box `|n_i| <= bound` in `Z^d` used for enumerations.
#[derive(Debug, Clone, Copy)]
struct ModeBox {
    d: usize,
    bound: i64,
}

impl ModeBox {
    fn new(d: usize, bound: usize) -> Self {
        Self { d, bound: bound as i64 }
    }

    fn side(&self) -> usize {
        (2 * self.bound + 1) as usize
    }

    fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    fn contains(&self, n: Mode) -> bool {
        n[0].abs() <= self.bound && n[1].abs() <= self.bound && (self.d == 2 || n[1] == 0)
    }

    fn index(&self, n: Mode) -> usize {
        let a = (n[0] + self.bound) as usize;
        let b = if self.d == 2 { (n[1] + self.bound) as usize } else { 0 };
        a + self.side() * b
    }

    fn mode(&self, i: usize) -> Mode {
        let s = self.side();
        let n1 = (i % s) as i64 - self.bound;
        let n2 = if self.d == 2 { (i / s) as i64 - self.bound } else { 0 };
        [n1, n2]
    }

    fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.len()).map(move |i| self.mode(i))
    }
}

/// Largest enumeration box allowed for exhaustive `l = 3` sums.
pub const EXHAUSTIVE_L3_BOUND: usize = 16;

/// `sum_{Gamma_l(n), |n_j|_inf <= bound} w(n_1, .., n_l)` by direct enumeration.
pub fn gamma_sum_exhaustive(
    l: usize,
    n: Mode,
    d: usize,
    bound: usize,
    w: impl Fn(&[Mode]) -> f64,
) -> Result<f64> {
    if l == 0 || l > 3 {
        return Err(LabError::Domain(format!("Gamma sums are implemented for 1 <= l <= 3, got {l}")));
    }
    if l == 3 && bound > EXHAUSTIVE_L3_BOUND {
        return Err(LabError::Size(format!(
            "exhaustive l = 3 enumeration limited to |n_j| <= {EXHAUSTIVE_L3_BOUND}, got {bound}"
        )));
    }
    let b = ModeBox::new(d, bound);
    let sub = |a: Mode, c: Mode| [a[0] - c[0], a[1] - c[1]];
    Ok(match l {
        1 => {
            if b.contains(n) {
                w(&[n])
            } else {
                0.0
            }
        }
        2 => b
            .modes()
            .map(|n1| {
                let n2 = sub(n, n1);
                if b.contains(n2) {
                    w(&[n1, n2])
                } else {
                    0.0
                }
            })
            .sum(),
        _ => b
            .modes()
            .map(|n1| {
                b.modes()
                    .map(|n2| {
                        let n3 = sub(sub(n, n1), n2);
                        if b.contains(n3) {
                            w(&[n1, n2, n3])
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
            })
            .sum(),
    })
}

/// Exact second moment, optionally of a difference of two filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    /// The Gamma sum without the `l!` factor.
    pub gamma_sum: f64,
    /// `l! * gamma_sum`, the second moment itself.
    pub moment: f64,
}

fn factorial(l: usize) -> f64 {
    (1..=l).fold(1.0, |a, i| a * i as f64)
}

/// Exhaustive oracle for `E|<:z_a^l:, e_n>|^2` (when `b` is `None`) or
/// `E|<:z_a^l: - :z_b^l:, e_n>|^2`.
pub fn covariance_oracle(
    l: usize,
    n: Mode,
    d: usize,
    a: Smoothing,
    b: Option<Smoothing>,
    bound: usize,
) -> Result<OracleValue> {
    let gamma = gamma_sum_exhaustive(l, n, d, bound, |ms| {
        let base: f64 = ms.iter().map(|&m| 1.0 / bracket2(m)).product();
        let pa: f64 = ms.iter().map(|&m| a.weight(m)).product();
        match b {
            None => pa * pa * base,
            Some(b) => {
                let pb: f64 = ms.iter().map(|&m| b.weight(m)).product();
                (pa - pb) * (pa - pb) * base
            }
        }
    })?;
    Ok(OracleValue { gamma_sum: gamma, moment: factorial(l) * gamma })
}

/// Dense array over a mode box, used for convolution powers.
#[derive(Debug, Clone)]
struct BoxArray {
    b: ModeBox,
    v: Vec<f64>,
}

impl BoxArray {
    fn from_fn(d: usize, bound: usize, f: impl Fn(Mode) -> f64) -> Self {
        let b = ModeBox::new(d, bound);
        let v = b.modes().map(f).collect();
        Self { b, v }
    }

    fn get(&self, n: Mode) -> f64 {
        if self.b.contains(n) {
            self.v[self.b.index(n)]
        } else {
            0.0
        }
    }

    fn convolve(&self, other: &BoxArray) -> BoxArray {
        let d = self.b.d;
        let out_bound = (self.b.bound + other.b.bound) as usize;
        let ob = ModeBox::new(d, out_bound);
        let nz: Vec<(Mode, f64)> = self
            .b
            .modes()
            .zip(&self.v)
            .filter(|(_, &x)| x != 0.0)
            .map(|(m, &x)| (m, x))
            .collect();
        let v = par::map_range(ob.len(), |i| {
            let n = ob.mode(i);
            nz.iter()
                .map(|&(m, x)| x * other.get([n[0] - m[0], n[1] - m[1]]))
                .sum()
        });
        BoxArray { b: ob, v }
    }

    /// `(self * other)(n)` at a single mode.
    fn convolve_at(&self, other: &BoxArray, n: Mode) -> f64 {
        self.b
            .modes()
            .zip(&self.v)
            .filter(|(_, &x)| x != 0.0)
            .map(|(m, &x)| x * other.get([n[0] - m[0], n[1] - m[1]]))
            .sum()
    }
}

/// Convolution-power route: `c^{*l}(n)` with `c(m) = w(m)`, evaluated at
/// arbitrary `n` after precomputing `c^{*(l-1)}`.
#[derive(Debug, Clone)]
pub struct ConvolutionPower {
    l: usize,
    base: BoxArray,
    partial: BoxArray,
}

impl ConvolutionPower {
    pub fn new(l: usize, d: usize, bound: usize, w: impl Fn(Mode) -> f64) -> Result<Self> {
        if l == 0 || l > 3 {
            return Err(LabError::Domain(format!("convolution powers for 1 <= l <= 3, got {l}")));
        }
        let side = 2 * bound + 1;
        let work = (side.pow(d as u32) as f64).powi(l as i32 - 1) * 2f64.powi(d as i32 * (l as i32 - 2).max(0));
        if work > 5e10 {
            return Err(LabError::Size(format!("convolution power l = {l} with bound {bound} is too large")));
        }
        let base = BoxArray::from_fn(d, bound, w);
        let mut partial = base.clone();
        for _ in 2..l {
            partial = partial.convolve(&base);
        }
        Ok(Self { l, base, partial })
    }

    pub fn at(&self, n: Mode) -> f64 {
        if self.l == 1 {
            self.base.get(n)
        } else {
            self.base.convolve_at(&self.partial, n)
        }
    }
}

/// Convolution-identity oracle: expands `(prod a - prod b)^2` into three
/// convolution powers of `a^2`, `ab`, `b^2` weighted by `<n>^{-2}`.
#[derive(Debug, Clone)]
pub struct ConvolutionOracle {
    l: usize,
    aa: ConvolutionPower,
    cross: Option<(ConvolutionPower, ConvolutionPower)>,
}

impl ConvolutionOracle {
    pub fn new(l: usize, d: usize, a: Smoothing, b: Option<Smoothing>, bound: usize) -> Result<Self> {
        let aa = ConvolutionPower::new(l, d, bound, |m| a.weight(m).powi(2) / bracket2(m))?;
        let cross = match b {
            None => None,
            Some(b) => Some((
                ConvolutionPower::new(l, d, bound, |m| a.weight(m) * b.weight(m) / bracket2(m))?,
                ConvolutionPower::new(l, d, bound, |m| b.weight(m).powi(2) / bracket2(m))?,
            )),
        };
        Ok(Self { l, aa, cross })
    }

    pub fn value(&self, n: Mode) -> OracleValue {
        let gamma = match &self.cross {
            None => self.aa.at(n),
            Some((ab, bb)) => self.aa.at(n) - 2.0 * ab.at(n) + bb.at(n),
        };
        OracleValue { gamma_sum: gamma, moment: factorial(self.l) * gamma }
    }
}

/// Monte Carlo statistics of one Fourier coefficient of a Wick power.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WickMomentEntry {
    pub l: usize,
    #[serde(rename = "N")]
    pub n_cut: f64,
    pub n: Mode,
    pub exact: f64,
    pub mean: f64,
    pub se: f64,
    pub samples: u64,
    /// Empirical `E|X|^4` and `E|X|^6`.
    pub p4: f64,
    pub p6: f64,
}

impl WickMomentEntry {
    pub fn z_score(&self) -> f64 {
        let d = (self.mean - self.exact).abs();
        // Exact zeros come back as FFT roundoff squared.
        if d <= 1e-24 * self.exact.abs().max(1.0) {
            return 0.0;
        }
        if self.se == 0.0 {
            if d <= 1e-12 * self.exact.abs().max(1e-300) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / self.se
        }
    }
}

/// Configuration of a Wick-moment ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WickEnsembleConfig {
    pub d: usize,
    /// Lattice cutoff; the free field is sampled on `|n_i| <= M`.
    #[serde(rename = "M")]
    pub m: usize,
    pub max_l: usize,
    pub truncations: Vec<f64>,
    pub modes: Vec<Mode>,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub schema: String,
    pub config: WickEnsembleConfig,
    pub entries: Vec<WickMomentEntry>,
}

impl EnsembleReport {
    pub const SCHEMA: &'static str = "wnlw.wick-ensemble.v1";
}

#[derive(Clone, Default)]
struct Accum {
    m2: Moments,
    p4: Moments,
    p6: Moments,
}

/// Samples `samples` free fields, forms `:z_N^l:` for every truncation `N`
/// and accumulates `|<:z_N^l:, e_n>|^2` for the requested modes. Each member
/// owns the stream `(seed, "wick-ensemble", member)`; batches are merged in
/// index order so the result does not depend on the thread count.
pub fn wick_moment_ensemble(cfg: &WickEnsembleConfig) -> Result<EnsembleReport> {
    let lattice = Lattice::new(cfg.d, cfg.m)?;
    if cfg.max_l == 0 || cfg.max_l > 3 {
        return Err(LabError::Domain(format!("max_l must be in 1..=3, got {}", cfg.max_l)));
    }
    let mode_idx: Vec<usize> = cfg
        .modes
        .iter()
        .map(|&n| {
            lattice
                .index(n)
                .ok_or_else(|| LabError::Shape(format!("mode {n:?} outside the lattice")))
        })
        .collect::<Result<_>>()?;
    let sigmas: Vec<f64> = cfg
        .truncations
        .iter()
        .map(|&nc| Smoothing::Truncate { n: nc }.variance(cfg.d, cfg.m))
        .collect();
    let n_stats = cfg.truncations.len() * cfg.max_l * mode_idx.len();
    let batch = 256u64;
    let batches = cfg.samples.div_ceil(batch);
    let partials: Vec<Result<Vec<Accum>>> = par::map_range(batches as usize, |bi| {
        let mut acc = vec![Accum::default(); n_stats];
        let start = bi as u64 * batch;
        let end = (start + batch).min(cfg.samples);
        for member in start..end {
            let mut rng = member_rng(cfg.seed, "wick-ensemble", member);
            let z = GaussianDraw::sample(&lattice, &mut rng).gff().pos;
            for (ti, (&nc, &sigma)) in cfg.truncations.iter().zip(&sigmas).enumerate() {
                let zn = z.project(nc);
                let powers = pointwise_many(&[&zn], cfg.max_l, |a, o| {
                    for (l, slot) in o.iter_mut().enumerate() {
                        *slot = hermite_unchecked(l + 1, a[0], sigma);
                    }
                })?;
                for (l, p) in powers.iter().enumerate() {
                    for (mi, &idx) in mode_idx.iter().enumerate() {
                        let x = p.coeffs()[idx].norm_sqr();
                        let a = &mut acc[(ti * cfg.max_l + l) * mode_idx.len() + mi];
                        a.m2.push(x);
                        a.p4.push(x * x);
                        a.p6.push(x * x * x);
                    }
                }
            }
        }
        Ok(acc)
    });
    let mut total = vec![Accum::default(); n_stats];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part?) {
            t.m2.merge(&p.m2);
            t.p4.merge(&p.p4);
            t.p6.merge(&p.p6);
        }
    }
    let mut entries = Vec::with_capacity(n_stats);
    for (ti, &nc) in cfg.truncations.iter().enumerate() {
        let oracle = (1..=cfg.max_l)
            .map(|l| ConvolutionOracle::new(l, cfg.d, Smoothing::Truncate { n: nc }, None, cfg.m))
            .collect::<Result<Vec<_>>>()?;
        for l in 0..cfg.max_l {
            for (mi, &n) in cfg.modes.iter().enumerate() {
                let a = &total[(ti * cfg.max_l + l) * cfg.modes.len() + mi];
                entries.push(WickMomentEntry {
                    l: l + 1,
                    n_cut: nc,
                    n,
                    exact: oracle[l].value(n).moment,
                    mean: a.m2.mean,
                    se: a.m2.se(),
                    samples: a.m2.count,
                    p4: a.p4.mean,
                    p6: a.p6.mean,
                });
            }
        }
    }
    Ok(EnsembleReport { schema: EnsembleReport::SCHEMA.into(), config: cfg.clone(), entries })
}

/// Outcome of a Monte Carlo check against an exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCheck {
    pub exact: f64,
    pub mean: f64,
    pub se: f64,
    pub samples: u64,
}

impl McCheck {
    fn from_moments(m: &Moments, exact: f64) -> Self {
        Self { exact, mean: m.mean, se: m.se(), samples: m.count }
    }

    pub fn z_score(&self) -> f64 {
        let d = (self.mean - self.exact).abs();
        // Exact zeros come back as FFT roundoff squared.
        if d <= 1e-24 * self.exact.abs().max(1.0) {
            return 0.0;
        }
        if self.se == 0.0 {
            if d < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / self.se
        }
    }

    pub fn within(&self, k_se: f64) -> bool {
        self.z_score() <= k_se
    }
}

/// `I(f, h)[t] = sum_n f^(n) conj(h^(n)) cos(t <n>)`.
pub fn pairing_kernel(f: &SpectralField, h: &SpectralField, t: f64) -> f64 {
    let lat = f.lattice();
    f.coeffs()
        .iter()
        .zip(h.coeffs())
        .enumerate()
        .map(|(i, (a, b))| (a * b.conj()).re * (t * lat.bracket(i)).cos())
        .sum()
}

/// Empirical `E[H_k(W_f^{t1}) H_m(W_h^{t2})]` against
/// `delta_{km} k! I(f,h)[t1 - t2]^k`, where
/// `W_f^t = sum f^(n) conj(g^t_{0,n})` is the white-noise functional of the
/// rotated Gaussians.
#[allow(clippy::too_many_arguments)]
pub fn pairing_check(
    f: &SpectralField,
    h: &SpectralField,
    k: usize,
    m: usize,
    t1: f64,
    t2: f64,
    samples: u64,
    seed: u64,
) -> Result<McCheck> {
    if !f.same_lattice(h) {
        return Err(LabError::Shape("pairing check needs a common lattice".into()));
    }
    for (name, g) in [("f", f), ("h", h)] {
        let norm = g.l2_norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(LabError::Precondition(format!("||{name}||_L2 = {norm}, expected 1")));
        }
    }
    let lat = f.lattice().clone();
    let support: Vec<usize> = (0..lat.len())
        .filter(|&i| f.coeffs()[i].norm() > 0.0 || h.coeffs()[i].norm() > 0.0)
        .collect();
    let w = |g: &GaussianDraw, field: &SpectralField, t: f64| -> f64 {
        support
            .iter()
            .map(|&i| {
                let (s, c) = (t * lat.bracket(i)).sin_cos();
                let gt = g.g0[i] * c + g.g1[i] * s;
                (field.coeffs()[i] * gt.conj()).re
            })
            .sum()
    };
    let batch = 4096u64;
    let parts = par::map_range(samples.div_ceil(batch) as usize, |bi| {
        let mut acc = Moments::default();
        let start = bi as u64 * batch;
        for member in start..(start + batch).min(samples) {
            let mut rng = member_rng(seed, "pairing", member);
            let g = GaussianDraw::sample(&lat, &mut rng);
            let x = hermite_unchecked(k, w(&g, f, t1), 1.0) * hermite_unchecked(m, w(&g, h, t2), 1.0);
            acc.push(x);
        }
        acc
    });
    let mut total = Moments::default();
    parts.iter().for_each(|p| total.merge(p));
    let exact = if k == m { factorial(k) * pairing_kernel(f, h, t1 - t2).powi(k as i32) } else { 0.0 };
    Ok(McCheck::from_moments(&total, exact))
}

/// Spec-facing form of [`pairing_check`] with equal degrees.
pub fn white_noise_pairing_check(
    f: &SpectralField,
    h: &SpectralField,
    k: usize,
    t1: f64,
    t2: f64,
    samples: u64,
    seed: u64,
) -> Result<McCheck> {
    pairing_check(f, h, k, k, t1, t2, samples, seed)
}

/// Empirical `E[H_k(g) H_m(g)]` for a standard Gaussian `g`.
pub fn hermite_orthogonality(k: usize, m: usize, samples: u64, seed: u64) -> McCheck {
    let batch = 1 << 15;
    let parts = par::map_range(samples.div_ceil(batch) as usize, |bi| {
        let mut rng = member_rng(seed, "hermite-orthogonality", bi as u64);
        let start = bi as u64 * batch;
        let mut acc = Moments::default();
        for _ in start..(start + batch).min(samples) {
            let g: f64 = rng.sample(StandardNormal);
            acc.push(hermite_unchecked(k, g, 1.0) * hermite_unchecked(m, g, 1.0));
        }
        acc
    });
    let mut total = Moments::default();
    parts.iter().for_each(|p| total.merge(p));
    McCheck::from_moments(&total, if k == m { factorial(k) } else { 0.0 })
}

/// One row of the time-modulus table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeModulusRow {
    pub n: Mode,
    pub h: f64,
    pub exact: f64,
    /// `exact / (|h|^theta <n>^{theta + eps - 2})`.
    pub envelope_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeModulusReport {
    pub l: usize,
    #[serde(rename = "N")]
    pub n_cut: f64,
    pub theta: f64,
    pub eps: f64,
    pub rows: Vec<TimeModulusRow>,
    /// Log-log slope in `h` per mode.
    pub h_exponents: Vec<(Mode, LinearFit)>,
    /// Largest envelope ratio over the table.
    pub envelope_constant: f64,
}

/// Exact `E|<:z_N^l:(t + h) - :z_N^l:(t), e_n>|^2 =
/// 2 l! sum_{Gamma_l(n)} (prod <n_j>^{-2} - prod cos(h <n_j>) <n_j>^{-2})`.
pub fn time_difference_moment(l: usize, n_cut: f64, d: usize, n: Mode, h: f64) -> Result<f64> {
    let bound = n_cut.floor() as usize;
    let trunc = Smoothing::Truncate { n: n_cut };
    let full = ConvolutionPower::new(l, d, bound, |m| trunc.weight(m) / bracket2(m))?;
    let shifted = ConvolutionPower::new(l, d, bound, |m| {
        trunc.weight(m) * (h * bracket2(m).sqrt()).cos() / bracket2(m)
    })?;
    Ok(2.0 * factorial(l) * (full.at(n) - shifted.at(n)))
}

pub fn time_modulus_check(
    l: usize,
    n_cut: f64,
    d: usize,
    theta: f64,
    eps: f64,
    h_grid: &[f64],
    n_grid: &[Mode],
) -> Result<TimeModulusReport> {
    if l == 0 || l > 3 {
        return Err(LabError::Domain(format!("time modulus check needs 1 <= l <= 3, got {l}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(LabError::Domain(format!("theta = {theta} outside (0, 1)")));
    }
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &n in n_grid {
        let b = bracket2(n).sqrt();
        let mut ys = Vec::new();
        for &h in h_grid {
            let exact = time_difference_moment(l, n_cut, d, n, h)?;
            ys.push(exact);
            rows.push(TimeModulusRow {
                n,
                h,
                exact,
                envelope_ratio: exact / (h.abs().powf(theta) * b.powf(theta + eps - 2.0)),
            });
        }
        if h_grid.len() >= 2 && ys.iter().all(|&y| y > 0.0) {
            fits.push((n, loglog_fit(h_grid, &ys)));
        }
    }
    let envelope_constant = rows.iter().map(|r| r.envelope_ratio).fold(0.0, f64::max);
    Ok(TimeModulusReport { l, n_cut, theta, eps, rows, h_exponents: fits, envelope_constant })
}

/// Family of smoothing operators indexed by a scale `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmoothingFamily {
    Truncation,
    Mollifier { kernel: Kernel },
}

impl SmoothingFamily {
    pub fn at_scale(&self, n: f64) -> Smoothing {
        match *self {
            SmoothingFamily::Truncation => Smoothing::Truncate { n },
            SmoothingFamily::Mollifier { kernel } => Smoothing::Mollify { kernel, delta: 1.0 / n },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub l: usize,
    pub ladder: Vec<f64>,
    /// Largest exact difference over the mode window, per ladder point.
    pub max_difference: Vec<f64>,
    /// Decay exponent `gamma` of `max_difference ~ N^{-gamma}`.
    pub gamma: f64,
    pub fit: LinearFit,
}

/// Exact oracle differences `E|<:z_a^l: - :z_b^l:, e_n>|^2` along a ladder of
/// scales and the fitted decay rate.
pub fn wick_convergence_rate(
    l: usize,
    d: usize,
    families: (SmoothingFamily, SmoothingFamily),
    ladder: &[f64],
    window: &[Mode],
    bound_factor: f64,
) -> Result<RateReport> {
    let mut maxima = Vec::new();
    for &n in ladder {
        let bound = (bound_factor * n).ceil() as usize;
        let oracle = ConvolutionOracle::new(l, d, families.0.at_scale(n), Some(families.1.at_scale(n)), bound)?;
        let m = window.iter().map(|&k| oracle.value(k).moment).fold(0.0, f64::max);
        maxima.push(m);
    }
    let fit = loglog_fit(ladder, &maxima);
    Ok(RateReport { l, ladder: ladder.to_vec(), max_difference: maxima, gamma: -fit.slope, fit })
}

/// Sample of `||S(t) data||_{H^s}` statistics at several times (law invariance).
pub fn flow_norm_statistics(lattice: &Arc<Lattice>, s: f64, times: &[f64], samples: u64, seed: u64) -> Vec<McCheck> {
    let per_member = par::map_range(samples as usize, |i| {
        let mut rng = member_rng(seed, "flow-law", i as u64);
        let data = GaussianDraw::sample(lattice, &mut rng).gff();
        times.iter().map(|&t| data.propagate(t).pos.sobolev_norm(s)).collect::<Vec<f64>>()
    });
    let expect = lattice.brackets().iter().map(|b| b.powf(2.0 * s - 2.0)).sum::<f64>();
    (0..times.len())
        .map(|j| {
            let m: Moments = per_member.iter().map(|v| v[j] * v[j]).collect();
            McCheck::from_moments(&m, expect)
        })
        .collect()
}

/// Exceedance table for the probabilistic Strichartz diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailRow {
    pub lambda: f64,
    pub frequency: f64,
    /// `exp(-lambda^2 / (T^{2/q} ||phi||_{H^0}^2))`.
    pub gaussian_shape: f64,
}

/// Frequencies of `||S(t) phi^w||_{L^q_T L^r_x} > lambda` for the randomized
/// profile, reported next to the Gaussian-tail shape. No constant is fitted.
#[allow(clippy::too_many_arguments)]
pub fn strichartz_tail(
    profile: &FieldPair,
    q: f64,
    r: f64,
    horizon: f64,
    time_nodes: usize,
    lambdas: &[f64],
    samples: u64,
    seed: u64,
) -> Result<Vec<TailRow>> {
    let lat = profile.lattice().clone();
    let quad = crate::quadrature::GaussLegendre::new(time_nodes);
    let nodes = quad.on(-horizon, horizon);
    let norms = par::map_range(samples as usize, |i| -> Result<f64> {
        let mut rng = member_rng(seed, "strichartz", i as u64);
        let data = GaussianDraw::sample(&lat, &mut rng).randomize(profile)?;
        let mut acc = 0.0;
        for &(t, w) in &nodes {
            let vals = data.propagate(t).pos.grid_values();
            let lr = (vals.iter().map(|v| v.abs().powf(r)).sum::<f64>() / vals.len() as f64).powf(1.0 / r);
            acc += w * lr.powf(q);
        }
        Ok(acc.powf(1.0 / q))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let h0 = profile.sobolev_norm(0.0);
    Ok(lambdas
        .iter()
        .map(|&lambda| TailRow {
            lambda,
            frequency: norms.iter().filter(|&&x| x > lambda).count() as f64 / norms.len() as f64,
            gaussian_shape: (-lambda * lambda / (horizon.powf(2.0 / q) * h0 * h0)).exp(),
        })
        .collect())
}
