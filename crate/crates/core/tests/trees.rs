use wnlw_core::duhamel::QuadratureSpec;
use wnlw_core::dynamics::{solve, EquationSpec, Observers, StepperConfig};
use wnlw_core::stats::loglog_fit;
use wnlw_core::trees::{enumerate_trees, fitted_xi_constant, fuss_catalan, term_norm_table, xi_series, xi_sum, xi_sum_by_trees};
use wnlw_core::{FieldPair, Lattice, SpectralField};

fn unit_data(m: usize) -> FieldPair {
    let lat = Lattice::new(2, m).unwrap();
    let pos = SpectralField::cosine(&lat, [1, 0], 0.2).unwrap().add(&SpectralField::cosine(&lat, [0, 1], 0.15).unwrap());
    let vel = SpectralField::cosine(&lat, [1, 1], 0.15 * 3f64.sqrt()).unwrap();
    FieldPair::new(pos, vel).unwrap()
}

#[test]
fn enumeration_matches_closed_form() {
    for j in 0..=6 {
        let trees = enumerate_trees(j).unwrap();
        assert_eq!(trees.len() as u64, fuss_catalan(j));
        assert!(trees.iter().all(|t| t.generation() == j && t.terminals() == 2 * j + 1));
    }
}

#[test]
fn recursion_equals_tree_sum() {
    let data = unit_data(4);
    let spec = QuadratureSpec::default();
    for j in 1..=3 {
        let a = xi_sum(j, &data, 0.1, &spec).unwrap();
        let b = xi_sum_by_trees(j, &data, 0.1, &spec).unwrap();
        let err = a.sub(&b).wiener_norm() / a.wiener_norm();
        assert!(err <= 1e-8, "j = {j}: {err:e}");
    }
}

#[test]
fn picard_partial_sums_approach_the_solution() {
    let data = unit_data(6);
    assert!((data.wiener_norm() - 1.0).abs() < 1e-12);
    let ts = [0.05, 0.07, 0.1, 0.14, 0.2];
    let spec = QuadratureSpec { nodes: 8, tol: 1e-15, max_doublings: 6 };
    let xi = xi_series(2, &data, &ts, &spec).unwrap();
    let cfg = StepperConfig { nodes: 8, corrections: 60, tol: 1e-16, blowup_guard: 1e8 };
    let mut defects = vec![Vec::new(); 3];
    for (k, &t) in ts.iter().enumerate() {
        let u = solve(&EquationSpec::plain_cubic(), &data, t, Some(t / 2.0), &Observers::default(), cfg).unwrap().last.pos;
        let mut partial = SpectralField::zeros(data.lattice());
        for (j, d) in defects.iter_mut().enumerate() {
            partial = partial.add(&xi[j][k]);
            d.push(u.sub(&partial).wiener_norm());
        }
    }
    for (j, d) in defects.iter().enumerate() {
        let slope = loglog_fit(&ts, d).slope;
        assert!((slope - 2.0 * (j as f64 + 1.0)).abs() < 0.3, "J = {j}: slope {slope}");
    }
}

#[test]
fn term_norms_are_geometric() {
    let data = unit_data(4);
    let ts = [0.1, 0.2];
    let xi = xi_series(3, &data, &ts, &QuadratureSpec::default()).unwrap();
    let rows = term_norm_table(&xi, &ts, data.wiener_norm());
    assert_eq!(rows.len(), 8);
    let c = fitted_xi_constant(&rows);
    // Each generation is bounded by (27/8)^j (t^2 ||u0||^2)^j ||u0||.
    assert!(c > 0.0 && c <= 27.0 / 8.0, "{c}");
}
