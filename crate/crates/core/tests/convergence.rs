use wnlw_core::convergence::{convergence_csv, convergence_csv_header, run_convergence, ConvergenceConfig, ConvergenceLab};
use wnlw_core::{Kernel, LabError};

fn small() -> ConvergenceConfig {
    ConvergenceConfig { m: 8, checkpoints: 4, ..ConvergenceConfig::default() }
}

#[test]
fn distances_shrink_with_delta() {
    let cfg = small();
    let mut monotone = 0;
    for seed in 0..4 {
        let r = run_convergence(&cfg, Kernel::GaussianBump, seed).unwrap();
        assert_eq!(r.distances.len(), cfg.deltas.len());
        assert!(r.distances.iter().all(|d| d.len() == cfg.checkpoints));
        assert!(r.horizon <= cfg.horizon && r.horizon <= r.t_guaranteed);
        if r.is_monotone() {
            monotone += 1;
        }
    }
    assert!(monotone >= 3);
}

#[test]
fn kernels_share_the_reference() {
    let lab = ConvergenceLab::new(&small(), 2).unwrap();
    let a = lab.run(Kernel::GaussianBump).unwrap();
    let b = lab.run(Kernel::Tent).unwrap();
    assert_eq!(a.reference_hs, b.reference_hs);
    let q = a.terminal_distance() / b.terminal_distance();
    assert!((0.25..=4.0).contains(&q), "{q}");
    let csv = convergence_csv(&[a, b]);
    assert!(csv.starts_with(&convergence_csv_header(4)));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn invalid_configs() {
    let cfg = ConvergenceConfig { s0: 1.2, ..small() };
    assert!(matches!(ConvergenceLab::new(&cfg, 0), Err(LabError::Domain(_))));
    let cfg = ConvergenceConfig { deltas: vec![], ..small() };
    assert!(ConvergenceLab::new(&cfg, 0).is_err());
}
