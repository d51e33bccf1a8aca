use std::sync::Arc;

use wnlw_core::dynamics::{
    approximation_gap, perturbed_lwp_estimate, solve, wiener_lwp_time, EquationSpec, Observers, StepperConfig, Variant,
    WickSource,
};
use wnlw_core::stochastic::{sample_gff, Smoothing};
use wnlw_core::{FieldPair, Lattice, SpectralField};

fn smooth(lat: &Arc<Lattice>) -> FieldPair {
    let pos = SpectralField::cosine(lat, [1, 0], 0.3).unwrap().add(&SpectralField::cosine(lat, [1, 2], 0.1).unwrap());
    let vel = SpectralField::cosine(lat, [0, 1], 0.2).unwrap();
    FieldPair::new(pos, vel).unwrap()
}

fn every(n: usize, t: f64) -> Observers {
    Observers { times: Some((1..=n).map(|k| t * k as f64 / n as f64).collect()), keep_states: true, ..Default::default() }
}

#[test]
fn time_reversal_returns_to_data() {
    let lat = Lattice::new(2, 8).unwrap();
    let data = smooth(&lat);
    let cfg = StepperConfig::default();
    let fwd = solve(&EquationSpec::plain_cubic(), &data, 0.5, None, &Observers::default(), cfg).unwrap();
    let mut back_data = fwd.last.clone();
    back_data.vel.scale(-1.0);
    let back = solve(&EquationSpec::plain_cubic(), &back_data, 0.5, None, &Observers::default(), cfg).unwrap();
    assert!(back.last.pos.sub(&data.pos).wiener_norm() < 1e-10);
}

#[test]
fn negative_time_matches_reflected_data() {
    let lat = Lattice::new(2, 6).unwrap();
    let data = smooth(&lat);
    let cfg = StepperConfig::default();
    let past = solve(&EquationSpec::plain_cubic(), &data, -0.3, None, &Observers::default(), cfg).unwrap();
    let mut refl = data.clone();
    refl.vel.scale(-1.0);
    let fut = solve(&EquationSpec::plain_cubic(), &refl, 0.3, None, &Observers::default(), cfg).unwrap();
    assert!(past.last.pos.sub(&fut.last.pos).wiener_norm() < 1e-12);
}

#[test]
fn zero_source_residual_equation_is_the_plain_cubic() {
    let lat = Lattice::new(2, 6).unwrap();
    let data = smooth(&lat);
    let cfg = StepperConfig::default();
    let plain = solve(&EquationSpec::plain_cubic(), &data, 0.4, None, &Observers::default(), cfg).unwrap();
    let resid = solve(
        &EquationSpec::new(Variant::ResidualWick(WickSource::zero(&lat))),
        &data,
        0.4,
        None,
        &Observers::default(),
        cfg,
    )
    .unwrap();
    assert!(plain.last.pos.sub(&resid.last.pos).wiener_norm() < 1e-13);
}

#[test]
fn noise_plus_residual_solves_the_cubic_at_zero_variance() {
    // With sigma = 0 the residual nonlinearity is (z + v)^3, so z + v is
    // the cubic solution started from the noise.
    let lat = Lattice::new(2, 4).unwrap();
    let noise = sample_gff(&lat, 3).scaled(0.05);
    let sigma = 0.0;
    let src = WickSource::new(noise.clone(), sigma);
    let t = 0.2;
    let cfg = StepperConfig::default();
    let dt = Some(0.02);
    let v = solve(&EquationSpec::new(Variant::ResidualWick(src)), &FieldPair::zeros(&lat), t, dt, &Observers::default(), cfg)
        .unwrap();
    let u = solve(&EquationSpec::plain_cubic(), &noise, t, dt, &Observers::default(), cfg).unwrap();
    let w = noise.propagate(t).pos.add(&v.last.pos);
    let err = w.sub(&u.last.pos).wiener_norm();
    assert!(err < 1e-11, "{err:e}");
}

#[test]
fn observers_and_csv() {
    let lat = Lattice::new(1, 8).unwrap();
    let data = FieldPair::new(SpectralField::cosine(&lat, [2, 0], 0.4).unwrap(), SpectralField::zeros(&lat)).unwrap();
    let obs = Observers { sobolev: vec![0.0, -1.0], fourier_lebesgue: vec![(0.0, 1.0)], ..every(4, 0.4) };
    let tr = solve(&EquationSpec::plain_cubic(), &data, 0.4, None, &obs, StepperConfig::default()).unwrap();
    assert_eq!(tr.times.len(), 5);
    assert_eq!(tr.columns, ["hs_0", "hs_-1", "fl_0_1"]);
    let csv = tr.to_csv();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("t,energy,hs_0,hs_-1,fl_0_1\n"));
    let fl = tr.column("fl_0_1").unwrap();
    assert!((fl[0] - data.pos.wiener_norm()).abs() < 1e-15);
}

#[test]
fn gap_between_trajectories() {
    let lat = Lattice::new(2, 4).unwrap();
    let data = smooth(&lat);
    let obs = every(3, 0.3);
    let a = solve(&EquationSpec::plain_cubic(), &data, 0.3, None, &obs, StepperConfig::default()).unwrap();
    let b = solve(&EquationSpec::new(Variant::Linear), &data, 0.3, None, &obs, StepperConfig::default()).unwrap();
    let g = approximation_gap(&a, &b).unwrap();
    assert!(g > 0.0 && g < 0.1);
    assert_eq!(approximation_gap(&a, &a).unwrap(), 0.0);
}

#[test]
fn local_time_estimates() {
    let lat = Lattice::new(2, 4).unwrap();
    let data = smooth(&lat);
    let t = wiener_lwp_time(&data);
    assert!((t * data.wiener_norm() - 1.0 / 12f64.sqrt()).abs() < 1e-15);
    assert!(wiener_lwp_time(&FieldPair::zeros(&lat)).is_infinite());
    let est = perturbed_lwp_estimate(&data, 2.0, 0.1).unwrap();
    assert!(est.t_guaranteed <= 1.0 / (2.0 * (1.0 + est.data_norm)) + 1e-15);
    let sigma = Smoothing::Identity.variance(2, 4);
    assert!(sigma > 1.0);
}
