//! Norm inflation by high-to-low frequency transfer.
//!
//! The data `phi_0 = R sum_{j = +-1, +-2} 1_{jN e_1 + Q_A}`, `phi_1 = N phi_0`
//! lives on four cubes of side `A` around `+-N e_1`, `+-2N e_1`. The cubic
//! interaction of these blocks deposits a coefficient of size
//! `t^2 R^3 A^{2d}` on the low cube `Q_A`, which dominates `||u(t)||_{H^s}`
//! for suitable `(A, R, T)` as powers of `N`.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::duhamel::QuadratureSpec;
use crate::dynamics::{
    approximation_gap, default_dt, perturbed_lwp_estimate, solve, wick_sup_bound, EquationSpec, Observers,
    PerturbedLwpEstimate, StepperConfig, Termination, Trajectory, Variant, WickSource,
};
use crate::error::{LabError, Result};
use crate::field::{FieldPair, Lattice, Mode, SpectralField};
use crate::par;
use crate::seeding::derive_seed;
use crate::stats::{loglog_fit, median};
use crate::stochastic::GaussianDraw;
use crate::trees::xi_series;

type Q = Ratio<i128>;

/// Exact decimal conversion; parameters are accepted with up to six digits.
fn rational(x: f64, what: &str) -> Result<Q> {
    const DEN: i128 = 1_000_000;
    if !x.is_finite() {
        return Err(LabError::Domain(format!("{what} must be finite, got {x}")));
    }
    let q = Q::new((x * DEN as f64).round() as i128, DEN);
    if (to_f64(q) - x).abs() > 1e-12 {
        return Err(LabError::Domain(format!("{what} = {x} needs more than six decimal digits")));
    }
    Ok(q)
}

fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn show(q: Q) -> String {
    if *q.denom() == 1 {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// `N^n (log N)^l`, the asymptotic size of a plan quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Power {
    pub n: Q,
    pub log: Q,
}

impl Power {
    pub fn new(n: Q, log: Q) -> Self {
        Self { n, log }
    }

    pub fn one() -> Self {
        Self::new(Q::from_integer(0), Q::from_integer(0))
    }

    pub fn of_n(n: Q) -> Self {
        Self::new(n, Q::from_integer(0))
    }

    pub fn mul(self, o: Power) -> Power {
        Power::new(self.n + o.n, self.log + o.log)
    }

    pub fn pow(self, k: Q) -> Power {
        Power::new(self.n * k, self.log * k)
    }

    pub fn inv(self) -> Power {
        Power::new(-self.n, -self.log)
    }

    /// Growth relative to a constant as `N -> infinity`.
    pub fn order(self) -> Ordering {
        let zero = Q::from_integer(0);
        match self.n.cmp(&zero) {
            Ordering::Equal => self.log.cmp(&zero),
            o => o,
        }
    }

    pub fn exponent(self) -> f64 {
        to_f64(self.n)
    }

    pub fn log_exponent(self) -> f64 {
        to_f64(self.log)
    }
}

impl fmt::Display for Power {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N^({})", show(self.n))?;
        if self.log != Q::from_integer(0) {
            write!(f, " (log N)^({})", show(self.log))?;
        }
        Ok(())
    }
}

/// Parameter regime, chosen by the sign of `s + d/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    /// `s < -d/2`: `A = N^{(1-delta)/d}`, `R = N^{2 delta}`, `T = N^{-1-3delta/2}`.
    Supercritical,
    /// `s = -d/2`: logarithmic `A`, `R = 1`.
    Critical,
    /// `-d/2 < s < 0` in two dimensions.
    Subcritical,
}

impl Case {
    pub fn number(self) -> u8 {
        match self {
            Case::Supercritical => 1,
            Case::Critical => 2,
            Case::Subcritical => 3,
        }
    }

    pub fn select(d: usize, s: f64) -> Result<Case> {
        if d != 1 && d != 2 {
            return Err(LabError::Domain(format!("dimension must be 1 or 2, got {d}")));
        }
        if !(s < 0.0) {
            return Err(LabError::Domain(format!("regularity must be negative, got {s}")));
        }
        if d == 1 && s > -0.5 {
            return Err(LabError::Domain(format!("one-dimensional inflation needs s <= -1/2, got {s}")));
        }
        let gap = s + d as f64 / 2.0;
        Ok(if gap.abs() < 1e-12 {
            Case::Critical
        } else if gap < 0.0 {
            Case::Supercritical
        } else {
            Case::Subcritical
        })
    }
}

/// `f(A)`: 1 below the critical index, `(log A)^{1/2}` at it and
/// `A^{d/2 + s}` above it.
pub fn f_of_a(s: f64, d: usize, a: f64) -> Result<f64> {
    if !(a >= 2.0) {
        return Err(LabError::Domain(format!("f(A) needs A >= 2, got {a}")));
    }
    Ok(match Case::select(d, s)? {
        Case::Supercritical => 1.0,
        Case::Critical => a.ln().sqrt(),
        Case::Subcritical => a.powf(d as f64 / 2.0 + s),
    })
}

/// Exact exponents of `A`, `R`, `T` and `f(A)`.
#[derive(Debug, Clone, Copy)]
pub struct Scaling {
    pub a: Power,
    pub r: Power,
    pub t: Power,
    pub f: Power,
}

fn scaling(case: Case, d: usize, s: Q, delta: Q, theta: Q) -> Scaling {
    let dq = Q::from_integer(d as i128);
    let one = Q::from_integer(1);
    let half = Q::new(1, 2);
    match case {
        Case::Supercritical => Scaling {
            a: Power::of_n((one - delta) / dq),
            r: Power::of_n(delta * 2),
            t: Power::of_n(-one - Q::new(3, 2) * delta),
            f: Power::one(),
        },
        Case::Critical => Scaling {
            a: Power::new(one / dq, -one / (dq * 16)),
            r: Power::one(),
            t: Power::new(-one, Q::new(-1, 16)),
            f: Power::new(Q::from_integer(0), half),
        },
        Case::Subcritical => {
            let a = Power::of_n(Q::from_integer(2) / dq - delta);
            Scaling {
                a,
                r: Power::of_n(-one - s + dq * delta / 2 - theta),
                t: Power::of_n(-one + s + dq * delta / 2 + theta / 2),
                f: a.pow(dq / 2 + s),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub delta: Option<f64>,
    pub theta: Option<f64>,
    /// Inflation target `n`.
    pub target: f64,
    /// Factor turning `<<` and `>>` into checked inequalities.
    pub margin: f64,
    /// Largest lattice cutoff a plan may require.
    pub max_cutoff: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { delta: None, theta: None, target: 1.0, margin: 10.0, max_cutoff: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub label: String,
    pub quantity: String,
    /// `"<<"` or `">>"`.
    pub relation: String,
    pub target: f64,
    pub value: f64,
    /// `target / value` for `<<`, `value / target` for `>>`.
    pub margin: f64,
    /// Exponent of `N` in the asymptotic size of `quantity`.
    pub exponent: f64,
    pub log_exponent: f64,
    pub exponent_exact: String,
    /// The exponent has the sign the relation needs.
    pub asymptotic: bool,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationPlan {
    pub d: usize,
    pub s: f64,
    pub target: f64,
    pub case: Case,
    pub delta: f64,
    pub theta: f64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "A")]
    pub a: u64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub a_exact: f64,
    pub t_exact: f64,
    #[serde(rename = "fA")]
    pub f_a: f64,
    pub margin_factor: f64,
    /// Lattice cutoff `3N + 2A`.
    pub cutoff: usize,
    pub exponents: PlanExponents,
    pub conditions: Vec<ConditionVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExponents {
    #[serde(rename = "A")]
    pub a: String,
    #[serde(rename = "R")]
    pub r: String,
    #[serde(rename = "T")]
    pub t: String,
    #[serde(rename = "fA")]
    pub f: String,
}

impl InflationPlan {
    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn condition(&self, label: &str) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.label == label)
    }

    /// Condition with the smallest margin.
    pub fn binding(&self) -> &ConditionVerdict {
        self.conditions
            .iter()
            .min_by(|a, b| a.margin.partial_cmp(&b.margin).unwrap_or(Ordering::Equal))
            .unwrap()
    }

    fn exact(&self) -> Result<(Q, Q, Q)> {
        Ok((rational(self.s, "s")?, rational(self.delta, "delta")?, rational(self.theta, "theta")?))
    }

    pub fn scaling(&self) -> Result<Scaling> {
        let (s, delta, theta) = self.exact()?;
        Ok(scaling(self.case, self.d, s, delta, theta))
    }

    pub fn lattice(&self) -> Result<Arc<Lattice>> {
        Lattice::new(self.d, self.cutoff)
    }

    pub fn block_data(&self, lattice: &Arc<Lattice>) -> Result<FieldPair> {
        build_block_data(lattice, self.n, self.a, self.r)
    }

    /// Admissible `alpha` for the perturbed local theory: the existence time
    /// `||phi||^{-1/(1-alpha)}` must outlast `T` asymptotically.
    pub fn alpha_bound(&self) -> Result<f64> {
        let (s, delta, theta) = self.exact()?;
        Ok(match self.case {
            Case::Supercritical => to_f64(delta / (Q::from_integer(2) + delta * 5)),
            Case::Critical => 0.0,
            Case::Subcritical => to_f64(theta / (-s * 2 + delta * 2 - theta)),
        })
    }

    /// Exponent of `T ||phi||^{1/(1-alpha)}`, with
    /// `||phi||_{FL^{alpha, 1/(1-alpha)}} ~ R N^alpha A^{d(1-alpha)}`.
    pub fn lwp_exponent(&self, alpha: f64) -> Result<Power> {
        let a = rational(alpha, "alpha")?;
        let one = Q::from_integer(1);
        if !(a > Q::from_integer(0) && a < one) {
            return Err(LabError::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let sc = self.scaling()?;
        let p = one / (one - a);
        let dq = Q::from_integer(self.d as i128);
        Ok(sc.t.mul(sc.r.mul(Power::of_n(a)).pow(p)).mul(sc.a.pow(dq)))
    }
}

fn round_even(x: f64) -> u64 {
    (((x / 2.0).round() as u64) * 2).max(2)
}

/// Plan at a fixed even `N` with every condition evaluated.
pub fn plan_at(d: usize, s: f64, n: u64, opts: &PlanOptions) -> Result<InflationPlan> {
    let case = Case::select(d, s)?;
    if n < 4 || n % 2 != 0 {
        return Err(LabError::Domain(format!("N must be even and at least 4, got {n}")));
    }
    if !(opts.target >= 1.0 && opts.margin >= 1.0) {
        return Err(LabError::Domain("target and margin factor must be at least 1".into()));
    }
    let sq = rational(s, "s")?;
    let dq = Q::from_integer(d as i128);
    let zero = Q::from_integer(0);
    let (delta, theta) = match case {
        Case::Supercritical => {
            let room = (Q::new(-1, 2) - sq) * Q::new(2, 3);
            let delta = match opts.delta {
                Some(x) => rational(x, "delta")?,
                None => Q::new(1, 10).min(room / 2),
            };
            if !(delta > zero && delta < room) {
                return Err(LabError::Domain(format!(
                    "delta = {} violates s < -1/2 - 3 delta / 2",
                    to_f64(delta)
                )));
            }
            (delta, zero)
        }
        Case::Critical => (zero, zero),
        Case::Subcritical => {
            if d != 2 {
                return Err(LabError::Domain("the regime -d/2 < s < 0 is realized in two dimensions only".into()));
            }
            let delta = match opts.delta {
                Some(x) => rational(x, "delta")?,
                None => Q::new(1, 10).min(-sq / (dq * 2)),
            };
            let theta = match opts.theta {
                Some(x) => rational(x, "theta")?,
                None => (delta / 10).min(-sq * delta / 4).min((-sq * 2 - dq * delta) / 2),
            };
            if !(delta > zero && theta > zero && -sq * 2 > dq * delta + theta && -sq * delta > theta * 2) {
                return Err(LabError::Domain(format!(
                    "(delta, theta) = ({}, {}) violates -2s > d delta + theta and -s delta > 2 theta",
                    to_f64(delta),
                    to_f64(theta)
                )));
            }
            (delta, theta)
        }
    };
    let sc = scaling(case, d, sq, delta, theta);
    let nf = n as f64;
    let ln = nf.ln();
    let eval = |p: Power| nf.powf(p.exponent()) * ln.powf(p.log_exponent());
    let a_exact = eval(sc.a);
    let a = round_even(a_exact);
    let r = eval(sc.r);
    let t_exact = eval(sc.t);
    // keeps T^2 R^2 A^{2d} on its exact power after rounding A
    let t = t_exact * (a_exact / a as f64).powi(d as i32);
    let af = a as f64;
    let f_a = f_of_a(s, d, af)?;
    let dd = d as f64;

    let half_d = dq / 2;
    let n_pow = Power::of_n(Q::from_integer(1));
    let rad = sc.r.mul(sc.a.pow(half_d));
    let quad = sc.t.pow(Q::from_integer(2)).mul(sc.r.pow(Q::from_integer(2))).mul(sc.a.pow(dq * 2));
    let cubic = quad.mul(sc.r).mul(sc.f);
    let items: [(&str, &str, bool, f64, f64, Power); 6] = [
        ("i", "R A^{d/2} N^s", false, 1.0 / opts.target, r * af.powf(dd / 2.0) * nf.powf(s), rad.mul(n_pow.pow(sq))),
        ("ii", "T^2 R^2 A^{2d}", false, 1.0, (t * r).powi(2) * af.powf(2.0 * dd), quad),
        ("iii", "T^2 R^3 A^{2d} f(A)", true, opts.target, (t * r).powi(2) * r * af.powf(2.0 * dd) * f_a, cubic),
        ("iv", "1 / (T^2 R^2 A^{2d})", true, 1.0, 1.0 / ((t * r).powi(2) * af.powf(2.0 * dd)), quad.inv()),
        ("v", "T N", false, 1.0, t * nf, sc.t.mul(n_pow)),
        ("vi", "R A^{d/2}", true, 1.0, r * af.powf(dd / 2.0), rad),
    ];
    let conditions = items
        .iter()
        .map(|&(label, quantity, large, target, value, p)| {
            let margin = if large { value / target } else { target / value };
            let asymptotic = if large { p.order() == Ordering::Greater } else { p.order() == Ordering::Less };
            ConditionVerdict {
                label: label.into(),
                quantity: quantity.into(),
                relation: if large { ">>" } else { "<<" }.into(),
                target,
                value,
                margin,
                exponent: p.exponent(),
                log_exponent: p.log_exponent(),
                exponent_exact: p.to_string(),
                asymptotic,
                holds: margin >= opts.margin,
            }
        })
        .collect();
    Ok(InflationPlan {
        d,
        s,
        target: opts.target,
        case,
        delta: to_f64(delta),
        theta: to_f64(theta),
        n,
        a,
        r,
        t,
        a_exact,
        t_exact,
        f_a,
        margin_factor: opts.margin,
        cutoff: 3 * n as usize + 2 * a as usize,
        exponents: PlanExponents {
            a: sc.a.to_string(),
            r: sc.r.to_string(),
            t: sc.t.to_string(),
            f: sc.f.to_string(),
        },
        conditions,
    })
}

/// Smallest even `N` within the lattice budget at which all six conditions
/// hold with the configured margin.
pub fn select_parameters(d: usize, s: f64, opts: &PlanOptions) -> Result<InflationPlan> {
    let mut last: Option<InflationPlan> = None;
    let mut n = 4;
    loop {
        let plan = plan_at(d, s, n, opts)?;
        if plan.cutoff > opts.max_cutoff {
            break;
        }
        if plan.all_hold() {
            return Ok(plan);
        }
        last = Some(plan);
        n += 2;
    }
    match last {
        None => Err(LabError::Infeasible {
            binding: "lattice budget".into(),
            detail: format!("cutoff {} admits no plan point", opts.max_cutoff),
        }),
        Some(p) => {
            let b = p.binding();
            Err(LabError::Infeasible {
                binding: format!("({}) {}", b.label, b.quantity),
                detail: format!(
                    "at N = {} (cutoff {}) the margin is {:.3} < {}, size {}",
                    p.n, p.cutoff, b.margin, opts.margin, b.exponent_exact
                ),
            })
        }
    }
}

/// The four blocks `+-(jN e_1 + Q_A)`, `j = 1, 2`, with
/// `Q_A = [-A/2, A/2)^d`; the negative blocks are mirror images so the
/// data is real.
pub fn block_support(d: usize, n: u64, a: u64) -> Result<Vec<Mode>> {
    if a < 2 || a % 2 != 0 || n < a {
        return Err(LabError::Domain(format!("blocks need even A >= 2 and N >= A, got N = {n}, A = {a}")));
    }
    let (n, h) = (n as i64, a as i64 / 2);
    let second: Vec<i64> = if d == 2 { (-h..h).collect() } else { vec![0] };
    let mut out = Vec::new();
    for j in [1, 2] {
        for k1 in -h..h {
            for &k2 in &second {
                let m = [j * n + k1, k2];
                out.push(m);
                out.push([-m[0], -m[1]]);
            }
        }
    }
    Ok(out)
}

/// Low-frequency cube `Q_A`.
pub fn low_cube(d: usize, a: u64) -> Vec<Mode> {
    let h = a as i64 / 2;
    let second: Vec<i64> = if d == 2 { (-h..h).collect() } else { vec![0] };
    let mut out = Vec::new();
    for k1 in -h..h {
        for &k2 in &second {
            out.push([k1, k2]);
        }
    }
    out
}

pub fn build_block_data(lattice: &Arc<Lattice>, n: u64, a: u64, r: f64) -> Result<FieldPair> {
    let need = 3 * n as usize + 2 * a as usize;
    if lattice.cutoff() < need {
        return Err(LabError::Size(format!(
            "block data at N = {n}, A = {a} needs lattice cutoff {need}, have {}",
            lattice.cutoff()
        )));
    }
    let mut pos = SpectralField::zeros(lattice);
    {
        let c = pos.coeffs_mut();
        for m in block_support(lattice.dim(), n, a)? {
            c[lattice.index(m).unwrap()] = r.into();
        }
    }
    let vel = pos.scaled(n as f64);
    FieldPair::new(pos, vel)
}

/// Frequencies `a + b + c` with `a, b, c` in `support`.
pub fn reachable_sums(support: &[Mode]) -> HashSet<Mode> {
    let pairs: HashSet<Mode> = support
        .iter()
        .flat_map(|a| support.iter().map(move |b| [a[0] + b[0], a[1] + b[1]]))
        .collect();
    pairs
        .iter()
        .flat_map(|p| support.iter().map(move |c| [p[0] + c[0], p[1] + c[1]]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Xi1Row {
    pub t: f64,
    pub tn: f64,
    pub hs: f64,
    /// `||Xi_1(t)||_{H^s} / (t^2 R^3 A^{2d} f(A))`.
    pub c_norm: f64,
    /// `min_{Q_A} |Xi_1^(xi)(t)| / (t^2 R^3 A^{2d})`.
    pub c_mode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Xi1Report {
    pub schema: String,
    pub plan: InflationPlan,
    pub rows: Vec<Xi1Row>,
    pub t_exponent: f64,
    pub t_fit_r2: f64,
    /// Smallest `c_norm` over the grid.
    pub c_norm: f64,
    /// Smallest `c_mode` over the grid.
    pub c_mode: f64,
    /// Largest coefficient outside the reachable sums relative to the
    /// largest coefficient overall.
    pub support_violation: f64,
    /// `||Xi_1(3 phi)|| / ||Xi_1(phi)||` at the middle of the grid.
    pub r_tripling: f64,
}

impl Xi1Report {
    pub const SCHEMA: &'static str = "wnlw.xi1-check.v1";
}

/// Measures the second Picard iterate of the block data against the
/// `t^2 R^3 A^{2d}` lower bound for `0 < t <= 0.1 / N`.
pub fn xi1_lower_bound_check(plan: &InflationPlan, times: &[f64], spec: &QuadratureSpec) -> Result<Xi1Report> {
    let nf = plan.n as f64;
    if times.iter().any(|&t| t * nf > 0.1) {
        return Err(LabError::Precondition("the lower-bound grid needs t N <= 0.1".into()));
    }
    let lat = plan.lattice()?;
    let data = plan.block_data(&lat)?;
    let xi = xi_series(1, &data, times, spec)?;
    let scale = plan.r.powi(3) * (plan.a as f64).powi(2 * plan.d as i32);
    let cube: Vec<usize> = low_cube(plan.d, plan.a).into_iter().map(|m| lat.index(m).unwrap()).collect();
    let reach = reachable_sums(&block_support(plan.d, plan.n, plan.a)?);
    let mut rows = Vec::new();
    let mut violation: f64 = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let f = &xi[1][k];
        let hs = f.sobolev_norm(plan.s);
        let min_mode = cube.iter().map(|&i| f.coeffs()[i].norm()).fold(f64::INFINITY, f64::min);
        let (mut inside, mut outside): (f64, f64) = (0.0, 0.0);
        for (i, m) in lat.modes() {
            let c = f.coeffs()[i].norm();
            if reach.contains(&m) {
                inside = inside.max(c);
            } else {
                outside = outside.max(c);
            }
        }
        violation = violation.max(if inside > 0.0 { outside / inside } else { outside });
        let base = t * t * scale;
        rows.push(Xi1Row { t, tn: t * nf, hs, c_norm: hs / (base * plan.f_a), c_mode: min_mode / base });
    }
    let fit = loglog_fit(times, &rows.iter().map(|r| r.hs).collect::<Vec<_>>());
    let mid = times[times.len() / 2];
    let tripled = xi_series(1, &data.scaled(3.0), &[mid], spec)?;
    let r_tripling = tripled[1][0].sobolev_norm(plan.s) / rows[times.len() / 2].hs;
    Ok(Xi1Report {
        schema: Xi1Report::SCHEMA.into(),
        plan: plan.clone(),
        c_norm: rows.iter().map(|r| r.c_norm).fold(f64::INFINITY, f64::min),
        c_mode: rows.iter().map(|r| r.c_mode).fold(f64::INFINITY, f64::min),
        rows,
        t_exponent: fit.slope,
        t_fit_r2: fit.r2,
        support_violation: violation,
        r_tripling,
    })
}

/// Background data the perturbation is added to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseData {
    Zero,
    /// A fixed trigonometric pair with unit `FL^{0,1}` norm.
    Smooth,
}

impl BaseData {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(BaseData::Zero),
            "smooth" => Ok(BaseData::Smooth),
            _ => Err(LabError::Config(format!("unknown base data `{name}` (zero, smooth)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseData::Zero => "zero",
            BaseData::Smooth => "smooth",
        }
    }

    pub fn build(self, lattice: &Arc<Lattice>) -> Result<FieldPair> {
        match self {
            BaseData::Zero => Ok(FieldPair::zeros(lattice)),
            BaseData::Smooth => smooth_base(lattice),
        }
    }
}

pub fn smooth_base(lattice: &Arc<Lattice>) -> Result<FieldPair> {
    let second: Mode = if lattice.dim() == 2 { [0, 1] } else { [2, 0] };
    let diag: Mode = if lattice.dim() == 2 { [1, 1] } else { [3, 0] };
    let pos = SpectralField::cosine(lattice, [1, 0], 0.2)?.add(&SpectralField::cosine(lattice, second, 0.15)?);
    let w = lattice.bracket(lattice.index(diag).unwrap());
    let vel = SpectralField::cosine(lattice, diag, 0.15 * w)?;
    FieldPair::new(pos, vel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Step; [`default_dt`] of the data when absent.
    pub dt: Option<f64>,
    /// Number of equally spaced scan times in `(0, T]`.
    pub scan_points: usize,
    pub stepper: StepperConfig,
    pub quadrature: QuadratureSpec,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { dt: None, scan_points: 8, stepper: StepperConfig::default(), quadrature: QuadratureSpec::default() }
    }
}

impl RunOptions {
    fn scan(&self, t: f64) -> Vec<f64> {
        let k = self.scan_points.max(1);
        (1..=k).map(|j| t * j as f64 / k as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationReport {
    pub schema: String,
    pub plan: InflationPlan,
    pub base: BaseData,
    /// `||phi||_{H^s x H^{s-1}}`.
    pub phi_hs: f64,
    /// `||phi_0||_{H^s}`.
    pub phi0_hs: f64,
    /// `||phi||_{FL^{0,1} x FL^{-1,1}}`.
    pub phi_fl: f64,
    pub dt: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    /// `||u(t)||_{H^s}` on `times`.
    pub u_hs: Vec<f64>,
    pub u_t_hs: f64,
    pub scan_max_hs: f64,
    /// `||S(T) u_0||_{H^s}` of the full data.
    pub xi0_hs: f64,
    /// `||Xi_1(u_0)(T)||_{H^s}` of the full data.
    pub xi1_hs: f64,
    /// `||Xi_1(phi)(T)||_{H^s}`.
    pub xi1_phi_hs: f64,
    /// `||Xi_1(base + phi)(T) - Xi_1(phi)(T)||_{H^s}`.
    pub mixed_hs: f64,
    /// `mixed_hs / (T^2 ||base||_{H^0} R^2 A^{2d})`; absent for zero base.
    pub mixed_constant: Option<f64>,
    /// `||u(T) - Xi_0(T) - Xi_1(T)||_{H^s}`.
    pub tail_hs: f64,
    /// All condition margins reach the margin factor.
    pub applicable: bool,
    /// `||u(T)||_{H^s} / ||Xi_1(T)||_{H^s}`.
    pub growth_ratio: f64,
    pub terminated: Option<Termination>,
}

impl InflationReport {
    pub const SCHEMA: &'static str = "wnlw.inflation.v1";

    pub fn half_xi1_holds(&self) -> bool {
        self.growth_ratio >= 0.5
    }
}

fn trajectory_hs(traj: &Trajectory, s: f64) -> Vec<f64> {
    traj.column(&format!("hs_{s}")).unwrap()
}

/// Plain cubic evolution of `base + phi` up to the plan time `T`.
pub fn run_deterministic_inflation(plan: &InflationPlan, base: BaseData, opts: &RunOptions) -> Result<InflationReport> {
    let lat = plan.lattice()?;
    let phi = plan.block_data(&lat)?;
    let u0 = base.build(&lat)?;
    let data = u0.add(&phi);
    let dt = opts.dt.unwrap_or_else(|| default_dt(&data));
    let obs = Observers { times: Some(opts.scan(plan.t)), sobolev: vec![plan.s], ..Default::default() };
    let traj = solve(&EquationSpec::plain_cubic(), &data, plan.t, Some(dt), &obs, opts.stepper)?;
    let u_hs = trajectory_hs(&traj, plan.s);
    let xi = xi_series(1, &data, &[plan.t], &opts.quadrature)?;
    let (xi0, xi1) = (&xi[0][0], &xi[1][0]);
    let xi1_phi = match base {
        BaseData::Zero => xi1.clone(),
        BaseData::Smooth => xi_series(1, &phi, &[plan.t], &opts.quadrature)?.pop().unwrap().pop().unwrap(),
    };
    let mixed_hs = xi1.sub(&xi1_phi).sobolev_norm(plan.s);
    let mixed_constant = match base {
        BaseData::Zero => None,
        BaseData::Smooth => {
            let scale = plan.t.powi(2) * u0.sobolev_norm(0.0) * plan.r.powi(2) * (plan.a as f64).powi(2 * plan.d as i32);
            Some(mixed_hs / scale)
        }
    };
    let complete = traj.terminated.is_none();
    let u_t_hs = if complete { *u_hs.last().unwrap() } else { f64::NAN };
    let tail_hs = if complete { traj.last.pos.sub(xi0).sub(xi1).sobolev_norm(plan.s) } else { f64::NAN };
    let xi1_hs = xi1.sobolev_norm(plan.s);
    Ok(InflationReport {
        schema: InflationReport::SCHEMA.into(),
        plan: plan.clone(),
        base,
        phi_hs: phi.sobolev_norm(plan.s),
        phi0_hs: phi.pos.sobolev_norm(plan.s),
        phi_fl: phi.wiener_norm(),
        dt,
        steps: traj.steps,
        scan_max_hs: u_hs[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        times: traj.times.clone(),
        u_hs,
        u_t_hs,
        xi0_hs: xi0.sobolev_norm(plan.s),
        xi1_hs,
        xi1_phi_hs: xi1_phi.sobolev_norm(plan.s),
        mixed_hs,
        mixed_constant,
        tail_hs,
        applicable: plan.all_hold(),
        growth_ratio: u_t_hs / xi1_hs,
        terminated: traj.terminated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsOptions {
    pub alpha: f64,
    pub run: RunOptions,
    /// Times in `[-1, 1]` at which the Wick powers are sampled for `K`.
    pub k_times: Vec<f64>,
}

impl Default for AsOptions {
    fn default() -> Self {
        Self { alpha: 0.01, run: RunOptions::default(), k_times: vec![-1.0, -0.5, 0.0, 0.5, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    /// Absent for a supplied Wick source.
    pub seed: Option<u64>,
    /// `||z(T) + v(T)||_{H^s}`.
    pub w_t_hs: f64,
    pub v_t_hs: f64,
    pub z_t_hs: f64,
    pub passes: bool,
    /// `sup_t ||u(t) - v(t)||_{L^2}` over the scan times.
    pub gap: f64,
    pub lwp: PerturbedLwpEstimate,
    pub lwp_covers: bool,
    /// `"data"` or `"wick"`, whichever branch fixes the guaranteed time.
    pub lwp_binding: String,
    pub terminated: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsReport {
    pub schema: String,
    pub plan: InflationPlan,
    pub alpha: f64,
    pub alpha_bound: f64,
    pub lwp_exponent: String,
    /// `T ||phi||^{1/(1-alpha)}` decays in `N`.
    pub exponent_ok: bool,
    /// Lattice variance of the free field.
    pub sigma: f64,
    pub u_t_hs: f64,
    pub xi1_hs: f64,
    /// Growth target: the plan's inflation index `n`.
    pub target: f64,
    pub seeds: Vec<SeedReport>,
    pub pass_fraction: f64,
    pub median_gap: f64,
    /// Every solve reached `T`.
    pub feasible: bool,
    /// Seeds whose guaranteed existence time falls short of `T`, with the
    /// binding branch.
    pub lwp_shortfall: Option<String>,
}

impl AsReport {
    pub const SCHEMA: &'static str = "wnlw.as-inflation.v1";
}

/// One plan point of the almost-sure experiment: the deterministic
/// solution `u` from `phi` is shared by all seeds.
pub struct AsInflation {
    plan: InflationPlan,
    opts: AsOptions,
    lattice: Arc<Lattice>,
    phi: FieldPair,
    u: Trajectory,
    dt: f64,
    target: f64,
    xi1_hs: f64,
    sigma: f64,
}

impl AsInflation {
    pub fn new(plan: &InflationPlan, opts: &AsOptions) -> Result<Self> {
        let bound = plan.alpha_bound()?;
        if !(opts.alpha > 0.0 && opts.alpha < bound) {
            return Err(LabError::Precondition(format!(
                "alpha = {} must lie in (0, {bound}) for case {}",
                opts.alpha,
                plan.case.number()
            )));
        }
        let lattice = plan.lattice()?;
        let phi = plan.block_data(&lattice)?;
        let dt = opts.run.dt.unwrap_or_else(|| default_dt(&phi));
        let u = solve(&EquationSpec::plain_cubic(), &phi, plan.t, Some(dt), &Self::observers(plan, opts), opts.run.stepper)?;
        let xi1_hs = xi_series(1, &phi, &[plan.t], &opts.run.quadrature)?[1][0].sobolev_norm(plan.s);
        let sigma = lattice.brackets().iter().map(|b| 1.0 / (b * b)).sum();
        Ok(Self { plan: plan.clone(), opts: opts.clone(), lattice, phi, u, dt, target: plan.target, xi1_hs, sigma })
    }

    fn observers(plan: &InflationPlan, opts: &AsOptions) -> Observers {
        Observers { times: Some(opts.run.scan(plan.t)), sobolev: vec![plan.s], keep_states: true, ..Default::default() }
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Free field of `seed` with its lattice variance.
    pub fn source(&self, seed: u64) -> WickSource {
        let key = format!("as-inflation:d{}:N{}", self.plan.d, self.plan.n);
        WickSource::new(GaussianDraw::from_seed(&self.lattice, derive_seed(seed, &key)).gff(), self.sigma)
    }

    pub fn run_seed(&self, seed: u64) -> Result<SeedReport> {
        let mut r = self.run_source(&self.source(seed))?;
        r.seed = Some(seed);
        Ok(r)
    }

    pub fn run_source(&self, source: &WickSource) -> Result<SeedReport> {
        let plan = &self.plan;
        let spec = EquationSpec::new(Variant::ResidualWick(source.clone()));
        let v = solve(&spec, &self.phi, plan.t, Some(self.dt), &Self::observers(plan, &self.opts), self.opts.run.stepper)?;
        let k = wick_sup_bound(source, self.opts.alpha, &self.opts.k_times)?;
        let lwp = perturbed_lwp_estimate(&self.phi, k, self.opts.alpha)?;
        let z_t = source.data.propagate(plan.t).pos;
        let complete = v.terminated.is_none() && self.u.terminated.is_none();
        let (w_t_hs, v_t_hs, gap) = if complete {
            (v.last.pos.add(&z_t).sobolev_norm(plan.s), v.last.pos.sobolev_norm(plan.s), approximation_gap(&self.u, &v)?)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        Ok(SeedReport {
            seed: None,
            w_t_hs,
            v_t_hs,
            z_t_hs: z_t.sobolev_norm(plan.s),
            passes: complete && w_t_hs > self.target,
            gap,
            lwp_covers: lwp.t_guaranteed >= plan.t,
            lwp_binding: if lwp.branch_data >= lwp.branch_wick { "data" } else { "wick" }.into(),
            lwp,
            terminated: v.terminated,
        })
    }

    pub fn report(&self, seeds: Vec<SeedReport>) -> Result<AsReport> {
        let plan = &self.plan;
        let exponent = plan.lwp_exponent(self.opts.alpha)?;
        let passed = seeds.iter().filter(|r| r.passes).count();
        let gaps: Vec<f64> = seeds.iter().map(|r| r.gap).filter(|g| g.is_finite()).collect();
        let short: Vec<&SeedReport> = seeds.iter().filter(|r| !r.lwp_covers).collect();
        let lwp_shortfall = (!short.is_empty()).then(|| {
            let data = short.iter().filter(|r| r.lwp_binding == "data").count();
            format!(
                "{} of {} seeds: guaranteed time below T = {:.3e} (binding: data {}, wick {})",
                short.len(),
                seeds.len(),
                plan.t,
                data,
                short.len() - data
            )
        });
        Ok(AsReport {
            schema: AsReport::SCHEMA.into(),
            plan: plan.clone(),
            alpha: self.opts.alpha,
            alpha_bound: plan.alpha_bound()?,
            lwp_exponent: exponent.to_string(),
            exponent_ok: exponent.order() == Ordering::Less,
            sigma: self.sigma,
            u_t_hs: self.u.norms.last().map(|r| r[0]).unwrap_or(f64::NAN),
            xi1_hs: self.xi1_hs,
            target: self.target,
            feasible: self.u.terminated.is_none() && seeds.iter().all(|r| r.terminated.is_none()),
            pass_fraction: if seeds.is_empty() { 0.0 } else { passed as f64 / seeds.len() as f64 },
            median_gap: if gaps.is_empty() { f64::NAN } else { median(&gaps) },
            seeds,
            lwp_shortfall,
        })
    }
}

/// Runs every seed at one plan point.
pub fn run_almost_sure_inflation(plan: &InflationPlan, seeds: &[u64], opts: &AsOptions) -> Result<AsReport> {
    let job = AsInflation::new(plan, opts)?;
    let rows = par::map_slice(seeds, |&s| job.run_seed(s)).into_iter().collect::<Result<Vec<_>>>()?;
    job.report(rows)
}

/// One row of the aggregated ladder table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "A")]
    pub a: u64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub phi_hs: f64,
    pub u_t_hs: f64,
    pub xi1_hs: f64,
    pub margins: [f64; 6],
    pub gap: f64,
}

impl LadderRow {
    fn margins(plan: &InflationPlan) -> [f64; 6] {
        let mut m = [f64::NAN; 6];
        for (k, c) in plan.conditions.iter().enumerate().take(6) {
            m[k] = c.margin;
        }
        m
    }

    pub fn deterministic(r: &InflationReport) -> Self {
        let p = &r.plan;
        Self {
            n: p.n,
            a: p.a,
            r: p.r,
            t: p.t,
            phi_hs: r.phi_hs,
            u_t_hs: r.u_t_hs,
            xi1_hs: r.xi1_hs,
            margins: Self::margins(p),
            gap: f64::NAN,
        }
    }

    pub fn almost_sure(r: &AsReport, phi_hs: f64) -> Self {
        let p = &r.plan;
        Self {
            n: p.n,
            a: p.a,
            r: p.r,
            t: p.t,
            phi_hs,
            u_t_hs: r.u_t_hs,
            xi1_hs: r.xi1_hs,
            margins: Self::margins(p),
            gap: r.median_gap,
        }
    }
}

pub fn ladder_csv(rows: &[LadderRow]) -> String {
    let mut out = String::from(
        "N,A,R,T,phi_hs,u_T_hs,xi1_hs,margin_i,margin_ii,margin_iii,margin_iv,margin_v,margin_vi,gap\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.n, r.a, r.r, r.t, r.phi_hs, r.u_t_hs, r.xi1_hs
        ));
        for m in r.margins {
            out.push_str(&format!(",{m:.17e}"));
        }
        out.push_str(&format!(",{:.17e}\n", r.gap));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q(a: i128, b: i128) -> Q {
        Q::new(a, b)
    }

    #[test]
    fn f_of_a_regimes() {
        assert_eq!(f_of_a(-1.1, 2, 8.0).unwrap(), 1.0);
        assert_relative_eq!(f_of_a(-1.0, 2, 2f64.exp()).unwrap(), 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(f_of_a(-0.5, 2, 16.0).unwrap(), 4.0, epsilon = 1e-14);
        assert!(f_of_a(-1.1, 2, 1.0).is_err());
    }

    #[test]
    fn case_one_exponents_are_exact() {
        let p = plan_at(2, -1.2, 64, &PlanOptions::default()).unwrap();
        assert_eq!(p.case, Case::Supercritical);
        let sc = p.scaling().unwrap();
        assert_eq!(sc.a.n, q(9, 20));
        assert_eq!(sc.r.n, q(1, 5));
        assert_eq!(sc.t.n, q(-23, 20));
        let e = |l: &str| p.condition(l).unwrap().exponent;
        assert_eq!(e("ii"), -0.1);
        assert_eq!(e("iii"), 0.1);
        assert_eq!(e("iv"), 0.1);
        assert_eq!(e("v"), -0.15);
        assert_eq!(e("vi"), 0.65);
        assert_relative_eq!(e("i"), -0.55, epsilon = 1e-15);
        assert!(p.conditions.iter().all(|c| c.asymptotic));
    }

    #[test]
    fn rounding_keeps_quadratic_quantity_exact() {
        let p = plan_at(2, -1.2, 32, &PlanOptions::default()).unwrap();
        assert_eq!(p.a % 2, 0);
        let ii = p.condition("ii").unwrap();
        assert_relative_eq!(ii.value, 32f64.powf(-0.1), max_relative = 1e-12);
    }

    #[test]
    fn case_three_exponents() {
        let p = plan_at(2, -0.5, 64, &PlanOptions { delta: Some(0.1), theta: Some(0.01), ..Default::default() }).unwrap();
        assert_eq!(p.case, Case::Subcritical);
        let e = |l: &str| p.condition(l).unwrap().exponent;
        assert_relative_eq!(e("i"), -0.01, epsilon = 1e-15);
        assert_relative_eq!(e("ii"), -0.01, epsilon = 1e-15);
        assert_relative_eq!(e("iii"), -2.0 * 0.01 + 0.5 * 0.1, epsilon = 1e-15);
        assert_relative_eq!(e("iv"), 0.01, epsilon = 1e-15);
        assert_relative_eq!(e("v"), -0.5 + 0.1 + 0.005, epsilon = 1e-15);
        assert_relative_eq!(e("vi"), 0.5 - 0.01, epsilon = 1e-15);
        assert!(plan_at(2, -0.5, 64, &PlanOptions { delta: Some(0.1), theta: Some(0.1), ..Default::default() }).is_err());
    }

    #[test]
    fn critical_case_is_logarithmic() {
        let p = plan_at(1, -0.5, 64, &PlanOptions::default()).unwrap();
        assert_eq!(p.case, Case::Critical);
        assert_eq!(p.r, 1.0);
        let sc = p.scaling().unwrap();
        assert_eq!(sc.a, Power::new(q(1, 1), q(-1, 16)));
        assert_eq!(p.condition("ii").unwrap().exponent, 0.0);
        assert_eq!(p.condition("ii").unwrap().log_exponent, -0.25);
    }

    #[test]
    fn lwp_exponent_matches_closed_forms() {
        let p = plan_at(2, -1.2, 64, &PlanOptions::default()).unwrap();
        for alpha in [0.01, 0.02, 0.05] {
            let closed = -(0.1 - 2.5 * alpha) / (2.0 * (1.0 - alpha));
            assert_relative_eq!(p.lwp_exponent(alpha).unwrap().exponent(), closed, epsilon = 1e-14);
        }
        assert_relative_eq!(p.alpha_bound().unwrap(), 0.04, epsilon = 1e-15);
        let (s, d, th) = (-0.5, 0.1, 0.01);
        let p3 = plan_at(2, s, 64, &PlanOptions { delta: Some(d), theta: Some(th), ..Default::default() }).unwrap();
        for alpha in [0.001, 0.005] {
            let closed = -(th + (2.0 * s - 2.0 * d + th) * alpha) / (2.0 * (1.0 - alpha));
            assert_relative_eq!(p3.lwp_exponent(alpha).unwrap().exponent(), closed, epsilon = 1e-14);
        }
        assert_relative_eq!(p3.alpha_bound().unwrap(), th / (-2.0 * s + 2.0 * d - th), epsilon = 1e-15);
    }

    #[test]
    fn selection_reports_the_binding_condition() {
        match select_parameters(2, -1.2, &PlanOptions::default()) {
            Err(LabError::Infeasible { binding, .. }) => assert!(binding.starts_with("(")),
            other => panic!("expected infeasible, got {other:?}"),
        }
        let loose = PlanOptions { margin: 1.0, ..Default::default() };
        let p = select_parameters(2, -1.2, &loose).unwrap();
        assert!(p.all_hold());
    }

    #[test]
    fn block_data_counts_and_norms() {
        let lat = Lattice::new(2, 52).unwrap();
        let phi = build_block_data(&lat, 16, 2, 1.0).unwrap();
        let count = phi.pos.coeffs().iter().filter(|c| c.norm() > 0.0).count();
        assert_eq!(count, 4 * 4);
        assert!(phi.pos.is_hermitian(0.0));
        let direct: f64 = block_support(2, 16, 2)
            .unwrap()
            .iter()
            .map(|m| (1.0 + (m[0] * m[0] + m[1] * m[1]) as f64).powf(-1.0))
            .sum::<f64>()
            .sqrt();
        let hs = phi.pos.sobolev_norm(-1.0);
        assert_relative_eq!(hs, direct, max_relative = 1e-14);
        let shape = 2.0 / 16.0;
        assert!(hs >= shape / 4.0 && hs <= 4.0 * shape);
        let fl = phi.wiener_norm();
        assert!(fl >= 8.0 * 4.0 / 2.0 && fl <= 2.0 * 8.0 * 4.0);
        let tripled = build_block_data(&lat, 16, 2, 3.0).unwrap();
        assert_relative_eq!(tripled.sobolev_norm(-1.0), 3.0 * phi.sobolev_norm(-1.0), max_relative = 1e-15);
        assert!(matches!(build_block_data(&Lattice::new(2, 40).unwrap(), 16, 2, 1.0), Err(LabError::Size(_))));
    }

    #[test]
    fn reachable_sums_cover_the_low_cube() {
        let sup = block_support(2, 8, 2).unwrap();
        let reach = reachable_sums(&sup);
        for m in low_cube(2, 2) {
            assert!(reach.contains(&m));
        }
        assert!(!reach.contains(&[4, 0]));
    }
}
