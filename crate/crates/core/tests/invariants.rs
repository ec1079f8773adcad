mod common;

use common::*;

#[test]
fn energy_balance_holds_each_step_without_forcing() {
    let (residuals, energies) = energy_identity(10, 1, 20, 11).unwrap();
    let worst = residuals.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 1e-9, "identity residual {worst:e}");
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "energy grew: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn energy_balance_at_higher_order() {
    let (residuals, _) = energy_identity(4, 3, 5, 2).unwrap();
    assert!(residuals.iter().all(|&r| r <= 1e-9), "{residuals:?}");
}

#[test]
fn graddiv_and_pressure_forms_agree_on_two_triangles() {
    for (dt, seed) in [(0.1, 1), (1e-3, 2), (1.0, 3)] {
        let (vel, pres) = scheme_equivalence(dt, seed).unwrap();
        assert!(vel <= 1e-10, "dt={dt}: velocity difference {vel:e}");
        assert!(pres <= 1e-10, "dt={dt}: pressure relation defect {pres:e}");
    }
}

#[test]
fn divergence_commutes_with_interpolation() {
    for k in 1..=3 {
        let d = commuting_defect(k, 4, 30, k as u64).unwrap();
        assert!(d <= 1e-10, "k={k}: {d:e}");
    }
}

#[test]
fn condensed_solve_matches_unreduced_solve() {
    for (k, n) in [(1, 4), (2, 4), (3, 2), (4, 2)] {
        let d = condensation_defect(k, n, 7).unwrap();
        assert!(d <= 1e-9, "k={k} n={n}: {d:e}");
    }
}
