//! Hermite polynomials with variance parameter and the Wick substitution
//! `:(z + v)^k: = sum_l C(k, l) :z^l: v^{k-l}`.
//!
//! `H_k(x; sigma)` is defined by `exp(t x - sigma t^2 / 2) = sum_k t^k/k! H_k(x; sigma)`,
//! so `H_0 = 1`, `H_1 = x`, `H_2 = x^2 - sigma`, `H_3 = x^3 - 3 sigma x`.

use crate::error::{LabError, Result};
use crate::field::{pointwise, SpectralField};

/// Largest degree supported by [`hermite_eval`].
pub const MAX_DEGREE: usize = 16;

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma < 0.0 || sigma.is_nan() {
        Err(LabError::Domain(format!("Hermite variance parameter must be >= 0, got {sigma}")))
    } else {
        Ok(())
    }
}

/// `H_k(x; sigma)` by the three-term recurrence
/// `H_k = x H_{k-1} - (k - 1) sigma H_{k-2}`.
pub fn hermite_eval(k: usize, x: f64, sigma: f64) -> Result<f64> {
    if k > MAX_DEGREE {
        return Err(LabError::Domain(format!("Hermite degree {k} exceeds {MAX_DEGREE}")));
    }
    check_sigma(sigma)?;
    Ok(hermite_unchecked(k, x, sigma))
}

/// Recurrence without argument checks; used in inner loops.
#[inline]
pub fn hermite_unchecked(k: usize, x: f64, sigma: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return 1.0;
    }
    for j in 2..=k {
        let next = x * cur - (j - 1) as f64 * sigma * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// All of `H_0 .. H_{out.len()-1}` at `x`.
#[inline]
pub fn hermite_all(x: f64, sigma: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for j in 2..out.len() {
        out[j] = x * out[j - 1] - (j - 1) as f64 * sigma * out[j - 2];
    }
}

/// `H_k(x; sigma)` as an explicit polynomial in `x` whose coefficients are
/// exact integers times powers of the symbolic `sigma`:
/// `H_k = sum_m c_m sigma^m x^{k - 2m}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HermitePoly {
    degree: usize,
    /// `sigma_coeffs[m]` multiplies `sigma^m x^{degree - 2m}`.
    sigma_coeffs: Vec<i64>,
}

impl HermitePoly {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(LabError::Domain(format!("Hermite degree {degree} exceeds {MAX_DEGREE}")));
        }
        // Build from the recurrence on coefficient vectors indexed by power of x,
        // storing the integer attached to sigma^((k - power)/2).
        let mut prev: Vec<i64> = vec![1];
        let mut cur: Vec<i64> = vec![0, 1];
        if degree == 0 {
            return Ok(Self { degree, sigma_coeffs: vec![1] });
        }
        for j in 2..=degree {
            let mut next = vec![0i64; j + 1];
            for (p, &c) in cur.iter().enumerate() {
                next[p + 1] += c;
            }
            for (p, &c) in prev.iter().enumerate() {
                next[p] -= (j as i64 - 1) * c;
            }
            prev = cur;
            cur = next;
        }
        let sigma_coeffs = (0..=degree / 2).map(|m| cur[degree - 2 * m]).collect();
        Ok(Self { degree, sigma_coeffs })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficients in powers of `x` (index = power) for a bound `sigma`.
    pub fn coefficients(&self, sigma: f64) -> Vec<f64> {
        let mut c = vec![0.0; self.degree + 1];
        for (m, &a) in self.sigma_coeffs.iter().enumerate() {
            c[self.degree - 2 * m] = a as f64 * sigma.powi(m as i32);
        }
        c
    }

    /// Leading coefficient in `x` (always 1).
    pub fn leading(&self) -> i64 {
        self.sigma_coeffs[0]
    }

    /// Integer attached to `sigma^m x^{k-2m}`.
    pub fn sigma_coefficient(&self, m: usize) -> i64 {
        self.sigma_coeffs.get(m).copied().unwrap_or(0)
    }

    /// Horner evaluation of the expanded form.
    pub fn eval_expanded(&self, x: f64, sigma: f64) -> f64 {
        self.coefficients(sigma).iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Both sides of `H_k(x + y; sigma) = sum_l C(k, l) H_l(y; sigma) x^{k - l}`.
pub fn hermite_addition_check(k: usize, x: f64, y: f64, sigma: f64) -> Result<(f64, f64)> {
    if k > 8 {
        return Err(LabError::Domain(format!("addition check supports k <= 8, got {k}")));
    }
    let lhs = hermite_eval(k, x + y, sigma)?;
    let rhs = (0..=k)
        .map(|l| binomial(k, l) * hermite_unchecked(l, y, sigma) * x.powi((k - l) as i32))
        .sum();
    Ok((lhs, rhs))
}

/// Renormalized power `sum_{l=0}^{k} C(k, l) :z^l: v^{k-l}` with the products
/// evaluated pseudospectrally. `z_powers[l]` is `:z^l:`, `z_powers[0]` the
/// constant one field.
pub fn wick_substitute(k: usize, z_powers: &[SpectralField], v: &SpectralField) -> Result<SpectralField> {
    if k != 3 {
        return Err(LabError::Domain(format!("Wick substitution is implemented for k = 3, got {k}")));
    }
    if z_powers.len() != k + 1 {
        return Err(LabError::Shape(format!(
            "expected {} Wick powers, got {}",
            k + 1,
            z_powers.len()
        )));
    }
    for z in z_powers {
        if !z.same_lattice(v) {
            return Err(LabError::Shape("Wick powers and v live on different lattices".into()));
        }
    }
    let mut args: Vec<&SpectralField> = z_powers.iter().collect();
    args.push(v);
    pointwise(&args, |a| {
        let v = a[4];
        a[0] * v * v * v + 3.0 * a[1] * v * v + 3.0 * a[2] * v + a[3]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Lattice;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn listed_values() {
        assert_eq!(hermite_eval(2, 2.0, 1.0).unwrap(), 3.0);
        assert_eq!(hermite_eval(1, 5.0, 7.0).unwrap(), 5.0);
        assert_eq!(hermite_eval(3, 2.0, 4.0).unwrap(), -16.0);
        assert_eq!(hermite_eval(0, 123.0, 9.0).unwrap(), 1.0);
        assert!(matches!(hermite_eval(2, 1.0, -0.5), Err(LabError::Domain(_))));
        assert!(hermite_eval(17, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_variance_gives_monomials() {
        for k in 0..=8 {
            assert_relative_eq!(hermite_eval(k, 1.7, 0.0).unwrap(), 1.7f64.powi(k as i32), max_relative = 1e-14);
        }
    }

    /// Coefficients from the generating function: the t^k coefficient of
    /// exp(tx) exp(-sigma t^2/2) times k!, i.e. sum_m k!/(m!(k-2m)!) (-1/2)^m.
    fn generating_coefficient(k: usize, m: usize) -> f64 {
        let fact = |n: usize| (1..=n).fold(1.0, |a, i| a * i as f64);
        fact(k) / (fact(m) * fact(k - 2 * m)) * (-0.5f64).powi(m as i32)
    }

    #[test]
    fn expanded_coefficients_match_generating_function() {
        for k in 0..=MAX_DEGREE {
            let p = HermitePoly::new(k).unwrap();
            assert_eq!(p.leading(), 1);
            for m in 0..=k / 2 {
                assert_eq!(p.sigma_coefficient(m) as f64, generating_coefficient(k, m), "k={k} m={m}");
            }
        }
        let h3 = HermitePoly::new(3).unwrap();
        assert_eq!(h3.coefficients(1.0), vec![0.0, -3.0, 0.0, 1.0]);
    }

    #[test]
    fn recurrence_agrees_with_expansion() {
        for k in 0..=10 {
            let p = HermitePoly::new(k).unwrap();
            for &x in &[-2.5, -0.3, 0.0, 1.1, 3.0] {
                let a = hermite_eval(k, x, 0.7).unwrap();
                let b = p.eval_expanded(x, 0.7);
                assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "k={k} x={x}");
            }
        }
    }

    #[test]
    fn scaling_identity_on_grid() {
        for &sigma in &[0.1, 1.0, 10.0] {
            for k in 0..=8 {
                for i in 0..=200 {
                    let x = -10.0 + 0.1 * i as f64;
                    let lhs = hermite_eval(k, x, sigma).unwrap();
                    let rhs = sigma.powf(k as f64 / 2.0) * hermite_eval(k, x / sigma.sqrt(), 1.0).unwrap();
                    let scale = lhs.abs().max(sigma.powf(k as f64 / 2.0));
                    assert!((lhs - rhs).abs() <= 1e-12 * scale, "k={k} sigma={sigma} x={x}");
                }
            }
        }
    }

    #[test]
    fn addition_identity_examples() {
        assert_eq!(hermite_addition_check(2, 1.0, 1.0, 1.0).unwrap(), (3.0, 3.0));
        let (l, r) = hermite_addition_check(0, 4.0, -2.0, 3.0).unwrap();
        assert_eq!((l, r), (1.0, 1.0));
        let g = 0.8123;
        let (l, r) = hermite_addition_check(3, 0.0, g, 1.0).unwrap();
        assert_relative_eq!(l, hermite_eval(3, g, 1.0).unwrap());
        assert_relative_eq!(r, l);
    }

    proptest! {
        #[test]
        fn addition_identity_holds(k in 0usize..=8, x in -3.0f64..3.0, y in -3.0f64..3.0, s in 0.0f64..4.0) {
            let (l, r) = hermite_addition_check(k, x, y, s).unwrap();
            prop_assert!((l - r).abs() <= 1e-9 * (1.0 + l.abs()));
        }
    }

    fn wick_stack_const(lat: &std::sync::Arc<Lattice>, c: f64, sigma: f64) -> Vec<SpectralField> {
        (0..=3)
            .map(|l| SpectralField::constant(lat, hermite_eval(l, c, sigma).unwrap()))
            .collect()
    }

    #[test]
    fn wick_substitute_reductions() {
        let lat = Lattice::new(2, 4).unwrap();
        let z = SpectralField::cosine(&lat, [1, 0], 0.4).unwrap();
        let sigma = 0.3;
        let powers = crate::field::pointwise_many(&[&z], 4, |a, o| hermite_all(a[0], sigma, o)).unwrap();
        // v = 0 leaves :z^3:
        let zero = SpectralField::zeros(&lat);
        let out = wick_substitute(3, &powers, &zero).unwrap();
        assert!(out.sub(&powers[3]).l2_norm() < 1e-14);
        // z = 0: only l = 0 survives
        let mut zs = vec![SpectralField::constant(&lat, 1.0)];
        zs.extend((1..=3).map(|_| SpectralField::zeros(&lat)));
        let v = SpectralField::cosine(&lat, [0, 1], 0.5).unwrap();
        let v3 = crate::field::pointwise(&[&v], |a| a[0].powi(3)).unwrap();
        assert!(wick_substitute(3, &zs, &v).unwrap().sub(&v3).l2_norm() < 1e-14);
        assert!(wick_substitute(2, &zs, &v).is_err());
        let other = Lattice::new(2, 5).unwrap();
        assert!(matches!(
            wick_substitute(3, &zs, &SpectralField::zeros(&other)),
            Err(LabError::Shape(_))
        ));
    }

    #[test]
    fn wick_substitute_constant_unrenormalized() {
        // z constant c with sigma = 0: the result is (c + v)^3 pointwise.
        let lat = Lattice::new(2, 3).unwrap();
        let c = 0.7;
        let v = SpectralField::cosine(&lat, [1, 1], 0.2)
            .unwrap()
            .add(&SpectralField::cosine(&lat, [0, 1], -0.1).unwrap());
        let out = wick_substitute(3, &wick_stack_const(&lat, c, 0.0), &v).unwrap();
        // direct cube on an 8x8 grid via explicit DFT sums
        let n = 8;
        let vals = |f: &SpectralField, x: f64, y: f64| -> f64 {
            f.lattice()
                .modes()
                .map(|(i, m)| (f.coeffs()[i] * rustfft::num_complex::Complex64::from_polar(1.0, m[0] as f64 * x + m[1] as f64 * y)).re)
                .sum()
        };
        for a in 0..n {
            for b in 0..n {
                let (x, y) = (crate::field::grid_coordinate(a, n), crate::field::grid_coordinate(b, n));
                let expect = (c + vals(&v, x, y)).powi(3);
                assert_relative_eq!(vals(&out, x, y), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn wick_substitute_matches_expansion_with_monomials() {
        // :z^l: replaced by exact monomials z^l (sigma = 0) reproduces (z+v)^3.
        let lat = Lattice::new(1, 6).unwrap();
        let z = SpectralField::cosine(&lat, [2, 0], 0.3).unwrap();
        let v = SpectralField::cosine(&lat, [1, 0], 0.25).unwrap();
        let powers = crate::field::pointwise_many(&[&z], 4, |a, o| hermite_all(a[0], 0.0, o)).unwrap();
        let lhs = wick_substitute(3, &powers, &v).unwrap();
        let rhs = crate::field::pointwise(&[&z, &v], |a| (a[0] + a[1]).powi(3)).unwrap();
        assert!(lhs.sub(&rhs).l2_norm() < 1e-14);
    }
}
