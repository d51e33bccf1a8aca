//! Real fields on the torus `T^d` (`d = 1, 2`) stored as Hermitian-symmetric
//! Fourier coefficients on the square lattice `|n_i| <= M`.
//!
//! Conventions: `f(x) = sum_n f^(n) e^{i n.x}` with the normalized torus
//! measure, so `f^(n)` is the plain average of `f e^{-i n.x}` and no `2 pi`
//! factors appear in any norm.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::par;

/// Lattice point `n = (n_1, n_2)`; the second entry is zero in one dimension.
pub type Mode = [i64; 2];

/// Smallest `2^a 3^b 5^c` that is at least `n`.
pub fn next_fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Truncated Fourier lattice `{ n in Z^d : |n_i| <= M }`.
pub struct Lattice {
    dim: usize,
    cutoff: usize,
    side: usize,
    norm2: Vec<i64>,
    bracket: Vec<f64>,
    dealias: OnceLock<Arc<GridPlan>>,
    refined: Mutex<Vec<Arc<GridPlan>>>,
}

impl std::fmt::Debug for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lattice")
            .field("dim", &self.dim)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.cutoff == other.cutoff
    }
}

impl Lattice {
    pub fn new(dim: usize, cutoff: usize) -> Result<Arc<Self>> {
        if dim != 1 && dim != 2 {
            return Err(LabError::Domain(format!("dimension must be 1 or 2, got {dim}")));
        }
        if cutoff == 0 {
            return Err(LabError::Domain("lattice cutoff must be positive".into()));
        }
        let side = 2 * cutoff + 1;
        let len = side.pow(dim as u32);
        let m = cutoff as i64;
        let mut norm2 = Vec::with_capacity(len);
        for idx in 0..len {
            let (a, b) = (idx % side, idx / side);
            let n1 = a as i64 - m;
            let n2 = if dim == 2 { b as i64 - m } else { 0 };
            norm2.push(n1 * n1 + n2 * n2);
        }
        let bracket = norm2.iter().map(|&q| (1.0 + q as f64).sqrt()).collect();
        Ok(Arc::new(Self {
            dim,
            cutoff,
            side,
            norm2,
            bracket,
            dealias: OnceLock::new(),
            refined: Mutex::new(Vec::new()),
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.norm2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norm2.is_empty()
    }

    pub fn mode(&self, idx: usize) -> Mode {
        let m = self.cutoff as i64;
        let n1 = (idx % self.side) as i64 - m;
        let n2 = if self.dim == 2 { (idx / self.side) as i64 - m } else { 0 };
        [n1, n2]
    }

    pub fn index(&self, n: Mode) -> Option<usize> {
        let m = self.cutoff as i64;
        if n[0].abs() > m || n[1].abs() > m || (self.dim == 1 && n[1] != 0) {
            return None;
        }
        let a = (n[0] + m) as usize;
        let b = if self.dim == 2 { (n[1] + m) as usize } else { 0 };
        Some(a + self.side * b)
    }

    /// Index of `-n` given the index of `n`.
    #[inline]
    pub fn neg(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    /// `<n> = sqrt(1 + |n|^2)`.
    #[inline]
    pub fn bracket(&self, idx: usize) -> f64 {
        self.bracket[idx]
    }

    pub fn brackets(&self) -> &[f64] {
        &self.bracket
    }

    /// `|n|^2`.
    #[inline]
    pub fn norm2(&self, idx: usize) -> i64 {
        self.norm2[idx]
    }

    pub fn modes(&self) -> impl Iterator<Item = (usize, Mode)> + '_ {
        (0..self.len()).map(move |i| (i, self.mode(i)))
    }

    /// Grid on which products of up to three lattice fields are computed
    /// without aliasing onto the lattice (`L >= 4M + 1`).
    pub fn dealias_grid(&self) -> Arc<GridPlan> {
        self.dealias
            .get_or_init(|| Arc::new(GridPlan::new(self.dim, next_fft_size(4 * self.cutoff + 2))))
            .clone()
    }

    /// Grid on which polynomials of degree `k` in lattice fields are
    /// alias-free after projection (`L >= (k + 1) M + 1`).
    pub fn product_grid(&self, k: usize) -> Arc<GridPlan> {
        if k <= 3 {
            self.dealias_grid()
        } else {
            self.refined_grid((k + 1).div_ceil(2))
        }
    }

    /// Physical grid with `factor` points per Nyquist point, used for sup-norm
    /// proxies.
    pub fn refined_grid(&self, factor: usize) -> Arc<GridPlan> {
        let size = next_fft_size(factor.max(1) * self.side);
        let mut cache = self.refined.lock().expect("grid cache poisoned");
        if let Some(g) = cache.iter().find(|g| g.size == size) {
            return g.clone();
        }
        let g = Arc::new(GridPlan::new(self.dim, size));
        cache.push(g.clone());
        g
    }
}

/// FFT plans for a uniform `L^d` physical grid.
pub struct GridPlan {
    dim: usize,
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl GridPlan {
    fn new(dim: usize, size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dim,
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn points(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    fn wrap(&self, n: i64) -> usize {
        n.rem_euclid(self.size as i64) as usize
    }

    fn grid_index(&self, n: Mode) -> usize {
        self.wrap(n[0]) + if self.dim == 2 { self.size * self.wrap(n[1]) } else { 0 }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let l = self.size;
        if self.dim == 1 {
            fft.process(buf);
            return;
        }
        let rows = (l / 16).max(1) * l;
        par::for_each_chunk_mut(buf, rows, |_, c| fft.process(c));
        let mut t = transpose(buf, l);
        par::for_each_chunk_mut(&mut t, rows, |_, c| fft.process(c));
        let back = transpose(&t, l);
        buf.copy_from_slice(&back);
    }

    /// Physical values of two real fields at once (`a + i b` trick).
    fn synthesize_pair(&self, a: &SpectralField, b: Option<&SpectralField>) -> Vec<Complex64> {
        let lat = a.lattice();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.points()];
        for (idx, n) in lat.modes() {
            let mut c = a.coeffs[idx];
            if let Some(b) = b {
                c += Complex64::new(0.0, 1.0) * b.coeffs[idx];
            }
            buf[self.grid_index(n)] = c;
        }
        self.transform(&mut buf, true);
        buf
    }

    /// Grid values `f(x_j)` of a set of real fields sharing one lattice.
    pub fn synthesize(&self, fields: &[&SpectralField]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(fields.len());
        for pair in fields.chunks(2) {
            let buf = self.synthesize_pair(pair[0], pair.get(1).copied());
            out.push(buf.iter().map(|z| z.re).collect());
            if pair.len() == 2 {
                out.push(buf.iter().map(|z| z.im).collect());
            }
        }
        out
    }

    /// Lattice projection of grid data, two real arrays per transform.
    pub fn analyze(&self, lattice: &Arc<Lattice>, values: &[Vec<f64>]) -> Vec<SpectralField> {
        let scale = 1.0 / self.points() as f64;
        let mut out = Vec::with_capacity(values.len());
        for pair in values.chunks(2) {
            let mut buf: Vec<Complex64> = match pair {
                [a, b] => a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect(),
                [a] => a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
                _ => unreachable!(),
            };
            self.transform(&mut buf, false);
            let mut fa = SpectralField::zeros(lattice);
            let mut fb = SpectralField::zeros(lattice);
            for (idx, n) in lattice.modes() {
                let z = buf[self.grid_index(n)] * scale;
                let zm = buf[self.grid_index([-n[0], -n[1]])].conj() * scale;
                fa.coeffs[idx] = (z + zm) * 0.5;
                fb.coeffs[idx] = (z - zm) * Complex64::new(0.0, -0.5);
            }
            out.push(fa);
            if pair.len() == 2 {
                out.push(fb);
            }
        }
        out
    }
}

fn transpose(src: &[Complex64], l: usize) -> Vec<Complex64> {
    const B: usize = 32;
    let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
    for ib in (0..l).step_by(B) {
        for jb in (0..l).step_by(B) {
            for i in ib..(ib + B).min(l) {
                for j in jb..(jb + B).min(l) {
                    dst[j * l + i] = src[i * l + j];
                }
            }
        }
    }
    dst
}

/// Mollification kernels with closed-form Fourier transforms
/// `rho^(xi) = int rho(x) e^{-i x.xi} dx`, tensorized over the axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// Gaussian with per-axis variance 1/24 (same second moment as `Tent`).
    GaussianBump,
    /// Fejer kernel: `rho^(xi) = prod (1 - |xi_i|)_+`.
    Fejer,
    /// Triangle supported in `[-1/2, 1/2]` per axis: `rho^ = prod sinc^2(xi_i / 4)`.
    Tent,
}

impl Kernel {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian-bump" | "gaussian" => Ok(Kernel::GaussianBump),
            "fejer" => Ok(Kernel::Fejer),
            "tent" => Ok(Kernel::Tent),
            other => Err(LabError::Config(format!("unknown kernel `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::GaussianBump => "gaussian-bump",
            Kernel::Fejer => "fejer",
            Kernel::Tent => "tent",
        }
    }

    fn hat_1d(self, xi: f64) -> f64 {
        match self {
            Kernel::GaussianBump => (-xi * xi / 48.0).exp(),
            Kernel::Fejer => (1.0 - xi.abs()).max(0.0),
            Kernel::Tent => {
                let y = xi / 4.0;
                if y.abs() < 1e-8 {
                    1.0 - y * y / 3.0
                } else {
                    let s = y.sin() / y;
                    s * s
                }
            }
        }
    }

    /// `rho^(xi)`; equals 1 at the origin.
    pub fn hat(self, xi: [f64; 2]) -> f64 {
        self.hat_1d(xi[0]) * self.hat_1d(xi[1])
    }

    /// Lipschitz constant of `rho^` along one axis.
    pub fn lipschitz(self) -> f64 {
        match self {
            // max |d/dxi exp(-xi^2/48)| = (1/sqrt(24)) e^{-1/2}
            Kernel::GaussianBump => (1.0 / 24f64).sqrt() * (-0.5f64).exp(),
            Kernel::Fejer => 1.0,
            // |d/dxi sinc^2(xi/4)| <= 1/4 * max|2 sinc sinc'| < 1/4 * 0.87
            Kernel::Tent => 0.25,
        }
    }
}

/// Real field as Hermitian-symmetric Fourier coefficients.
#[derive(Clone, Debug)]
pub struct SpectralField {
    lattice: Arc<Lattice>,
    coeffs: Vec<Complex64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        *self.lattice == *other.lattice && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(lattice: &Arc<Lattice>) -> Self {
        Self {
            lattice: lattice.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); lattice.len()],
        }
    }

    /// The constant field `c e_0`.
    pub fn constant(lattice: &Arc<Lattice>, c: f64) -> Self {
        let mut f = Self::zeros(lattice);
        f.coeffs[lattice.index([0, 0]).unwrap()] = Complex64::new(c, 0.0);
        f
    }

    /// `amp (e_n + e_{-n})`, i.e. `2 amp cos(n.x)`.
    pub fn cosine(lattice: &Arc<Lattice>, n: Mode, amp: f64) -> Result<Self> {
        let idx = lattice
            .index(n)
            .ok_or_else(|| LabError::Shape(format!("mode {n:?} outside the lattice")))?;
        let mut f = Self::zeros(lattice);
        f.coeffs[idx] += Complex64::new(amp, 0.0);
        f.coeffs[lattice.neg(idx)] += Complex64::new(amp, 0.0);
        Ok(f)
    }

    /// Builds a field from per-mode coefficients. The closure must respect
    /// `c(-n) = conj c(n)`; this is checked in debug builds.
    pub fn from_fn(lattice: &Arc<Lattice>, f: impl Fn(Mode) -> Complex64) -> Self {
        let coeffs = lattice.modes().map(|(_, n)| f(n)).collect();
        let out = Self { lattice: lattice.clone(), coeffs };
        debug_assert!(out.is_hermitian(1e-12), "from_fn produced a non-real field");
        out
    }

    /// Builds a field from raw coefficients, symmetrizing them so that the
    /// result is real.
    pub fn from_coeffs_symmetrized(lattice: &Arc<Lattice>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(LabError::Shape(format!(
                "expected {} coefficients, got {}",
                lattice.len(),
                coeffs.len()
            )));
        }
        let sym = (0..coeffs.len())
            .map(|i| (coeffs[i] + coeffs[lattice.neg(i)].conj()) * 0.5)
            .collect();
        Ok(Self { lattice: lattice.clone(), coeffs: sym })
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, n: Mode) -> Complex64 {
        self.lattice
            .index(n)
            .map(|i| self.coeffs[i])
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn same_lattice(&self, other: &SpectralField) -> bool {
        *self.lattice == *other.lattice
    }

    fn check_lattice(&self, other: &SpectralField) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(LabError::Shape(format!(
                "lattice mismatch: {:?} vs {:?}",
                self.lattice, other.lattice
            )))
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
        (0..self.coeffs.len())
            .all(|i| (self.coeffs[i] - self.coeffs[self.lattice.neg(i)].conj()).norm() <= tol * scale)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn scale(&mut self, a: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= a);
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        assert!(self.same_lattice(other), "axpy on mismatched lattices");
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += *o * a;
        }
    }

    pub fn add(&self, other: &SpectralField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &SpectralField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `( sum_n <n>^{2s} |f^(n)|^2 )^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let lat = &self.lattice;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| lat.bracket(i).powf(2.0 * s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `|| <n>^s f^(n) ||_{l^p}`; `p = f64::INFINITY` gives the sup over modes.
    pub fn fourier_lebesgue_norm(&self, s: f64, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(LabError::Domain(format!("Fourier-Lebesgue exponent p = {p} < 1")));
        }
        let lat = &self.lattice;
        let weighted = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| lat.bracket(i).powf(s) * c.norm());
        Ok(if p.is_infinite() {
            weighted.fold(0.0, f64::max)
        } else if p == 1.0 {
            weighted.sum()
        } else {
            weighted.map(|w| w.powf(p)).sum::<f64>().powf(1.0 / p)
        })
    }

    /// Wiener-algebra norm `sum |f^(n)|`.
    pub fn wiener_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// Coefficientwise product with a Fourier multiplier `m(n, <n>)`.
    pub fn multiplier_apply(&self, m: impl Fn(Mode, f64) -> Complex64) -> Self {
        let lat = &self.lattice;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * m(lat.mode(i), lat.bracket(i)))
            .collect();
        let out = Self { lattice: lat.clone(), coeffs };
        debug_assert!(out.is_hermitian(1e-9));
        out
    }

    /// Real multiplier depending only on `<n>`, e.g. `<grad>^alpha`.
    pub fn radial_multiplier(&self, m: impl Fn(f64) -> f64) -> Self {
        let lat = &self.lattice;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * m(lat.bracket(i)))
            .collect();
        Self { lattice: lat.clone(), coeffs }
    }

    /// Frequency projection onto `|n| <= N`.
    pub fn project(&self, n_cut: f64) -> Self {
        let lim = n_cut * n_cut;
        let lat = &self.lattice;
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| if (lat.norm2(i) as f64) <= lim { c } else { Complex64::new(0.0, 0.0) })
            .collect();
        Self { lattice: lat.clone(), coeffs }
    }

    /// Multiplies the coefficients by `rho^(delta n)`.
    pub fn mollify(&self, kernel: Kernel, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(LabError::Domain(format!("mollification scale {delta} outside (0, 1]")));
        }
        Ok(self.multiplier_apply(|n, _| {
            Complex64::new(kernel.hat([delta * n[0] as f64, delta * n[1] as f64]), 0.0)
        }))
    }

    /// Truncated convolution `(f g)^` restricted to the lattice, computed on
    /// the zero-padded grid.
    pub fn dealiased_product(&self, other: &SpectralField) -> Result<Self> {
        self.check_lattice(other)?;
        pointwise(&[self, other], |v| v[0] * v[1])
    }

    /// Physical values on the dealiasing grid.
    pub fn grid_values(&self) -> Vec<f64> {
        let grid = self.lattice.dealias_grid();
        grid.synthesize(&[self]).pop().unwrap()
    }

    /// Grid sup of `|<grad>^{-eps} f|` on a grid refined `oversample` times
    /// beyond Nyquist; proxy for the `W^{-eps, inf}` norm.
    pub fn grid_sup(&self, eps: f64, oversample: usize) -> f64 {
        let smoothed = self.radial_multiplier(|b| b.powf(-eps));
        let grid = self.lattice.refined_grid(oversample);
        grid.synthesize(&[&smoothed])[0]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn snapshot(&self) -> FieldSnapshot {
        let modes = self
            .lattice
            .modes()
            .filter(|(i, _)| self.coeffs[*i].norm() != 0.0)
            .map(|(i, n)| SnapshotMode {
                n: n[..self.lattice.dim()].to_vec(),
                re: self.coeffs[i].re,
                im: self.coeffs[i].im,
            })
            .collect();
        FieldSnapshot {
            schema: FieldSnapshot::SCHEMA.to_string(),
            d: self.lattice.dim(),
            m: self.lattice.cutoff(),
            modes,
        }
    }

    pub fn from_snapshot(snap: &FieldSnapshot) -> Result<Self> {
        if snap.schema != FieldSnapshot::SCHEMA {
            return Err(LabError::Config(format!("unsupported field schema `{}`", snap.schema)));
        }
        let lattice = Lattice::new(snap.d, snap.m)?;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); lattice.len()];
        for m in &snap.modes {
            if m.n.len() != snap.d {
                return Err(LabError::Shape(format!("mode {:?} has wrong dimension", m.n)));
            }
            let n = [m.n[0], if snap.d == 2 { m.n[1] } else { 0 }];
            let idx = lattice
                .index(n)
                .ok_or_else(|| LabError::Shape(format!("mode {:?} outside the lattice", m.n)))?;
            coeffs[idx] = Complex64::new(m.re, m.im);
        }
        let f = Self { lattice, coeffs };
        if !f.is_hermitian(1e-12) {
            return Err(LabError::Precondition("snapshot is not a real field".into()));
        }
        Ok(f)
    }
}

/// Evaluates `g(f_1(x), ..., f_k(x))` on the dealiasing grid and projects the
/// result back to the lattice. Exact (alias-free) whenever `g` is a
/// polynomial of degree at most three.
pub fn pointwise(
    fields: &[&SpectralField],
    g: impl Fn(&[f64]) -> f64 + Sync + Send,
) -> Result<SpectralField> {
    let mut out = pointwise_many(fields, 1, |v, o| o[0] = g(v))?;
    Ok(out.pop().unwrap())
}

/// Like [`pointwise`] but with `outputs` result fields written by `g`.
pub fn pointwise_many(
    fields: &[&SpectralField],
    outputs: usize,
    g: impl Fn(&[f64], &mut [f64]) + Sync + Send,
) -> Result<Vec<SpectralField>> {
    let first = fields
        .first()
        .ok_or_else(|| LabError::Shape("pointwise needs at least one field".into()))?;
    for f in &fields[1..] {
        first.check_lattice(f)?;
    }
    let lattice = first.lattice().clone();
    pointwise_many_on(&lattice.dealias_grid(), fields, outputs, g)
}

/// [`pointwise_many`] on an explicit grid, e.g. [`Lattice::product_grid`]
/// for nonlinearities of degree above three.
pub fn pointwise_many_on(
    grid: &GridPlan,
    fields: &[&SpectralField],
    outputs: usize,
    g: impl Fn(&[f64], &mut [f64]) + Sync + Send,
) -> Result<Vec<SpectralField>> {
    let lattice = fields[0].lattice().clone();
    let inputs = grid.synthesize(fields);
    let npts = grid.points();
    let k = fields.len();
    let chunk = 4096;
    let mut results = vec![vec![0.0; npts]; outputs];
    // gather per-chunk outputs in a flat buffer, then split
    let mut flat = vec![0.0; npts * outputs];
    par::for_each_chunk_mut(&mut flat, chunk * outputs, |ci, out| {
        let start = ci * chunk;
        let mut args = vec![0.0; k];
        let mut res = vec![0.0; outputs];
        for (j, o) in out.chunks_mut(outputs).enumerate() {
            let p = start + j;
            for (a, inp) in args.iter_mut().zip(&inputs) {
                *a = inp[p];
            }
            g(&args, &mut res);
            o.copy_from_slice(&res);
        }
    });
    for p in 0..npts {
        for (r, res) in results.iter_mut().enumerate() {
            res[p] = flat[p * outputs + r];
        }
    }
    Ok(grid.analyze(&lattice, &results))
}

/// Position/velocity pair `(u, d_t u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub pos: SpectralField,
    pub vel: SpectralField,
}

impl FieldPair {
    pub fn new(pos: SpectralField, vel: SpectralField) -> Result<Self> {
        pos.check_lattice(&vel)?;
        Ok(Self { pos, vel })
    }

    pub fn zeros(lattice: &Arc<Lattice>) -> Self {
        Self { pos: SpectralField::zeros(lattice), vel: SpectralField::zeros(lattice) }
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        self.pos.lattice()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { pos: self.pos.scaled(a), vel: self.vel.scaled(a) }
    }

    pub fn add(&self, other: &FieldPair) -> Self {
        Self { pos: self.pos.add(&other.pos), vel: self.vel.add(&other.vel) }
    }

    pub fn sub(&self, other: &FieldPair) -> Self {
        Self { pos: self.pos.sub(&other.pos), vel: self.vel.sub(&other.vel) }
    }

    /// `( ||u||_{H^s}^2 + ||v||_{H^{s-1}}^2 )^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.pos.sobolev_norm(s).hypot(self.vel.sobolev_norm(s - 1.0))
    }

    /// `||u||_{FL^{s,p}} + ||v||_{FL^{s-1,p}}`.
    pub fn fourier_lebesgue_norm(&self, s: f64, p: f64) -> Result<f64> {
        Ok(self.pos.fourier_lebesgue_norm(s, p)? + self.vel.fourier_lebesgue_norm(s - 1.0, p)?)
    }

    /// Wiener-algebra norm of the pair, `FL^{0,1} x FL^{-1,1}`.
    pub fn wiener_norm(&self) -> f64 {
        let lat = self.lattice();
        self.pos.wiener_norm()
            + self
                .vel
                .coeffs()
                .iter()
                .enumerate()
                .map(|(i, c)| c.norm() / lat.bracket(i))
                .sum::<f64>()
    }

    /// Free evolution `(S(t) data, d_t S(t) data)`, a rotation per mode.
    pub fn propagate(&self, t: f64) -> FieldPair {
        let lat = self.lattice().clone();
        let mut pos = SpectralField::zeros(&lat);
        let mut vel = SpectralField::zeros(&lat);
        for i in 0..lat.len() {
            let w = lat.bracket(i);
            let (s, c) = (t * w).sin_cos();
            let (u, v) = (self.pos.coeffs[i], self.vel.coeffs[i]);
            pos.coeffs[i] = u * c + v * (s / w);
            vel.coeffs[i] = -u * (w * s) + v * c;
        }
        FieldPair { pos, vel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMode {
    pub n: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

/// Self-describing JSON record of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub schema: String,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub modes: Vec<SnapshotMode>,
}

impl FieldSnapshot {
    pub const SCHEMA: &'static str = "wnlw.field.v1";
}

/// Physical coordinate of grid point `j` on a grid of `size` points.
pub fn grid_coordinate(j: usize, size: usize) -> f64 {
    2.0 * PI * j as f64 / size as f64
}
