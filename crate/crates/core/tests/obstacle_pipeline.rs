use aggregation_lab::flow::{run, FlowConfig};
use aggregation_lab::kernels::{Attraction, Kernel};
use aggregation_lab::measures::RadialGrid;
use aggregation_lab::obstacle::{
    level_for_mass, penalized_solve, psor_solve, self_consistent_minimizer, solve, ObstacleProblem,
};
use aggregation_lab::verify::{grid_oscillation, uniqueness_crosscheck};

fn r_m() -> f64 {
    (3.0 / (4.0 * std::f64::consts::PI)).cbrt()
}

fn ball(h: f64) -> aggregation_lab::obstacle::ObstacleSolution {
    let k = Kernel::newtonian_quadratic(3, 1.0 / 6.0).unwrap();
    self_consistent_minimizer(&k, &RadialGrid::new(h, 2.0).unwrap()).unwrap()
}

#[test]
fn contact_radius_grows_like_sqrt_of_level() {
    // With F = 1 the density is 1 on the contact set, so mass 2^{N/2}
    // (the mass at doubled level) has radius sqrt(2) r_m.
    let grid = RadialGrid::new(1e-3, 2.0).unwrap();
    let p = ObstacleProblem::new(3, grid.clone(), vec![1.0; grid.len()], 0.0, 0.0).unwrap();
    let radius = |m: f64| {
        let c0 = level_for_mass(&p, m).unwrap();
        solve(&p.with_level(c0)).unwrap().contact_radius()
    };
    let (r1, r2) = (radius(1.0), radius(2f64.powf(1.5)));
    assert!((r1 / r_m() - 1.0).abs() < 0.01, "r1 = {r1}");
    assert!((r2 / r1 / 2f64.sqrt() - 1.0).abs() < 0.01, "ratio {}", r2 / r1);
}

#[test]
fn contact_radius_error_is_first_order() {
    let errs: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&h| (ball(h).contact_radius() - r_m()).abs())
        .collect();
    for (h, e) in [4e-3, 2e-3, 1e-3].iter().zip(&errs) {
        assert!(e <= h, "error {e} at h = {h}");
    }
    let slope = (errs[0] / errs[2]).log2() / 2.0;
    assert!(slope >= 0.8, "errors {errs:?}, slope {slope}");
}

#[test]
fn psi_oscillation_decays_under_refinement() {
    let osc: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&h| grid_oscillation(&ball(h).psi)).collect();
    for w in osc.windows(2) {
        assert!(w[0] / w[1] >= 1.5, "{osc:?}");
    }
}

#[test]
fn penalized_and_projected_solutions_agree() {
    let h = 2e-3;
    let sol = ball(h);
    let p = ObstacleProblem::new(3, sol.grid.clone(), sol.f.clone(), sol.c0, *sol.psi.last().unwrap()).unwrap();
    let exact = psor_solve(&p).unwrap();
    for delta in [1e-4, 1e-6] {
        let pen = penalized_solve(&p, delta).unwrap();
        let gap = pen.iter().zip(&exact.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 5.0 * delta.sqrt() + 10.0 * h * h, "delta {delta}: gap {gap}");
    }
}

#[test]
fn quartic_obstacle_matches_particle_flow() {
    let k = Kernel::new(3, 1.0, Attraction::Power { q: 4.0, coeff: 1.0 }, None).unwrap();
    let sol = self_consistent_minimizer(&k, &RadialGrid::new(1e-3, 2.0).unwrap()).unwrap();
    assert!((sol.mass() - 1.0).abs() < 1e-9);
    let mut cfg = FlowConfig::new(k.clone(), 2000);
    cfg.dt0 = 0.5;
    cfg.t_max = 30.0;
    cfg.seed = 5;
    let trace = run(&cfg, cfg.initial_cloud().unwrap()).unwrap();
    let cc = uniqueness_crosscheck(&k, &trace.final_cloud, &sol).unwrap();
    assert!(cc.d2 <= 0.05, "{cc:?}");
}
