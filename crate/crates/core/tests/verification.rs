use aggregation_lab::flow::{run, FlowConfig};
use aggregation_lab::kernels::{Attraction, FnProfile, GammaTable, Kernel, Tail};
use aggregation_lab::measures::{sample_ball, ParticleCloud, RadialGrid};
use aggregation_lab::obstacle::{frac_quadratic_minimizer, self_consistent_minimizer, RieszPotential};
use aggregation_lab::quadrature::ball_volume;
use aggregation_lab::verify::{
    ball_second_moment_optimality, el_check, frac_exterior_check, frac_mean_value_check, mean_value_check,
    uniqueness_crosscheck, ElOptions, SupportSet,
};

const PI: f64 = std::f64::consts::PI;

fn ball_kernel() -> Kernel {
    Kernel::newtonian_quadratic(3, 1.0 / 6.0).unwrap()
}

fn r_m() -> f64 {
    (3.0 / (4.0 * PI)).cbrt()
}

#[test]
fn two_particle_equilibrium_passes_el_check() {
    let k = ball_kernel();
    // Force balance 1 / (4 pi d^2) = 2 K d.
    let d = (1.0 / (8.0 * PI / 6.0)).cbrt();
    let c = ParticleCloud::uniform(3, vec![-d / 2.0, 0.0, 0.0, d / 2.0, 0.0, 0.0]).unwrap();
    let rep = el_check(&c, &k, &ElOptions::default()).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.support_oscillation < 1e-14);
}

#[test]
fn displaced_particle_fails_el_check() {
    let k = ball_kernel();
    let mut cfg = FlowConfig::new(k.clone(), 200);
    cfg.dt0 = 0.5;
    cfg.t_max = 30.0;
    cfg.seed = 4;
    let c = run(&cfg, cfg.initial_cloud().unwrap()).unwrap().final_cloud;
    assert!(el_check(&c, &k, &ElOptions::default()).unwrap().passed());
    let far = (0..c.len()).max_by(|&a, &b| c.radius(a).total_cmp(&c.radius(b))).unwrap();
    let scale = (c.radius(far) + 0.3) / c.radius(far);
    let mut p = c.positions().to_vec();
    p[3 * far..3 * far + 3].iter_mut().for_each(|x| *x *= scale);
    let rep = el_check(&c.with_positions(p).unwrap(), &k, &ElOptions::default()).unwrap();
    assert!(!rep.pass_oscillation, "{rep:?}");
}

#[test]
fn sampled_ball_passes_smoothed_el_check() {
    let c = sample_ball(3, r_m(), 100_000, 3).unwrap();
    let opts = ElOptions {
        smoothing: 0.02,
        max_centers: 32,
        m_samples: 512,
        ..ElOptions::default()
    };
    let rep = el_check(&c, &ball_kernel(), &opts).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn exact_ball_agrees_with_its_own_sample() {
    let k = ball_kernel();
    let sol = self_consistent_minimizer(&k, &RadialGrid::new(2e-3, 2.0).unwrap()).unwrap();
    let c = sample_ball(3, r_m(), 4000, 21).unwrap();
    let cc = uniqueness_crosscheck(&k, &c, &sol).unwrap();
    assert!(cc.d2 < 0.02, "{cc:?}");
    assert!(cc.symmetry_residual < 0.05, "{cc:?}");
}

#[test]
fn ball_minimizer_potential_satisfies_mean_value_inequality() {
    // psi = 3 r_m^2 / 5 on the ball and |x|^2/6 + 1/(4 pi |x|) + const outside,
    // so |Delta psi| <= 1.
    let r = r_m();
    let c0 = 0.6 * r * r;
    let psi = move |x: &[f64]| {
        let t = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if t <= r {
            c0
        } else {
            t * t / 6.0 + 1.0 / (4.0 * PI * t) - (r * r / 6.0 + 1.0 / (4.0 * PI * r)) + c0
        }
    };
    for x in [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.3, 0.4, 0.1]] {
        for d in mean_value_check(&psi, 1.0, &x, &[0.05, 0.1, 0.2], f64::INFINITY).unwrap() {
            // psi >= C0 = psi(x0) pointwise, so the average dominates psi(x0).
            assert!(d.raw <= 1e-12, "psi average dips below psi(x0): {d:?}");
            assert!(d.deficit >= 0.0, "{d:?}");
        }
    }
}

#[test]
fn fractional_deficits_of_constant_vanish_with_lambda() {
    let table = GammaTable::new(2, 0.5).unwrap();
    // u = 1 on B_5 is harmonic for (-Delta)^s only in the limit; the deficit
    // shrinks like the outer mass of gamma_lambda.
    let u = FnProfile {
        f: |r: f64| if r < 5.0 { 1.0 } else { 0.0 },
        breakpoints: vec![5.0],
        tail: Tail::Compact { radius: 5.0 },
    };
    let d = frac_mean_value_check(&u, &[0.0, 0.0], &[0.4, 0.2, 0.1, 0.05], &table).unwrap();
    for w in d.windows(2) {
        assert!(w[1].deficit.abs() < w[0].deficit.abs(), "{d:?}");
    }
    assert!(d.iter().all(|x| x.deficit >= -1e-9));
}

#[test]
fn fractional_exterior_bound_is_tight_off_the_support() {
    let k = Kernel::new(2, 0.5, Attraction::Quadratic { k: 3.0 / 16.0 }, None).unwrap();
    let rep = frac_quadratic_minimizer(&k, &RadialGrid::new(0.01, 3.0).unwrap()).unwrap();
    let h = RieszPotential::from_solution(&rep.solution);
    let table = GammaTable::new(2, 0.5).unwrap();
    let x = [1.6, 0.0];
    let slack = frac_exterior_check(&h, &x, &[0.1, 0.2], &table, 0.0).unwrap();
    let scale = aggregation_lab::kernels::RadialProfile::value(&h, 1.6);
    for s in slack {
        assert!(s.abs() <= 1e-3 * scale, "slack {s} vs h = {scale}");
    }
}

#[test]
fn ball_beats_other_unit_volume_sets() {
    for dim in [2usize, 3] {
        let r_half = (0.5 / ball_volume(dim, 1.0)).powf(1.0 / dim as f64);
        let mut candidates = vec![SupportSet::unit_ball(dim)];
        // Shell with the same volume.
        let inner = 0.3;
        let outer = ((1.0 + ball_volume(dim, inner)) / ball_volume(dim, 1.0)).powf(1.0 / dim as f64);
        candidates.push(SupportSet::Radial {
            dim,
            shells: vec![(inner, outer)],
        });
        let mut margins = Vec::new();
        // Half-separations exceed r_half in both dimensions, so the balls are disjoint.
        for d in [0.5, 1.0] {
            let mut a = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            a[0] = -d;
            b[0] = d;
            candidates.push(SupportSet::BallUnion {
                dim,
                centers: vec![a, b],
                radius: r_half,
            });
        }
        let rank = ball_second_moment_optimality(&candidates).unwrap();
        assert_eq!(rank.winner, 0);
        let n = dim as f64;
        let r1 = (1.0 / ball_volume(dim, 1.0)).powf(1.0 / n);
        assert!((rank.moments[0] - n / (n + 2.0) * r1 * r1).abs() < 1e-12);
        for m in &rank.moments[2..] {
            margins.push(m - rank.moments[0]);
        }
        assert!(margins.iter().all(|&g| g > 0.0));
        assert!(margins[1] > margins[0], "margin grows with separation");
    }
}

#[test]
fn tied_candidates_pick_the_first() {
    let rank = ball_second_moment_optimality(&[SupportSet::unit_ball(3), SupportSet::unit_ball(3)]).unwrap();
    assert_eq!(rank.winner, 0);
    assert!(ball_second_moment_optimality(&[SupportSet::ball(3, 1.0)]).is_err());
}
