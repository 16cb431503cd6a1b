mod common;

use common::*;
use mvlse::asymptotics::LimitQuantities;
use mvlse::simulate::{limit_ode, InitialPath};
use mvlse::DiscretePath;

/// Smooth fixed input path sampled on the grid with `n` steps.
fn smooth_path(n: usize) -> DiscretePath {
    let g = grid(n);
    let data = (0..g.path_len()).map(|j| (1.3 * g.node_time(j)).sin() + 0.2).collect();
    DiscretePath::new(g, 1, data).unwrap()
}

#[test]
fn riemann_sums_converge_at_first_order() {
    let m = model();
    let theta = [0.1, 0.8];
    let value = |n: usize| {
        let x = smooth_path(n);
        let lq = LimitQuantities::new(&m, &x, &THETA0).unwrap();
        (lq.xi(&theta), lq.info(&THETA0)[(0, 1)], lq.info(&THETA0)[(1, 1)])
    };
    let (a, b, c) = (value(100), value(200), value(400));
    for (q0, q1, q2) in [(a.0, b.0, c.0), (a.1, b.1, c.1), (a.2, b.2, c.2)] {
        let ratio = (q0 - q1) / (q1 - q2);
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn limit_path_self_convergence_matches_taming_order() {
    // With taming the scheme error is O(delta^alpha), so successive
    // differences shrink by 2^alpha rather than 2.
    let m = model();
    let at_t = |n: usize| {
        let g = grid(n);
        let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
        limit_ode(&m, &xi, &THETA0, &g, 0.5).unwrap().at_step(n)[0]
    };
    let (x1, x2, x3) = (at_t(800), at_t(1600), at_t(3200));
    let ratio = (x1 - x2) / (x2 - x3);
    assert!((ratio - 2f64.sqrt()).abs() <= 0.3, "ratio {ratio}");
}

#[test]
fn smaller_alpha_slows_convergence() {
    let text = |alpha: f64| {
        format!(
            "r0 = 0.5\nT = 1\nn = 400\ntheta0 = 0.5, 0.3\ntheta_box = 0:1, 0:1\nalpha = {alpha}\nrate_levels = 4, 5, 6, 7, 8\nrate_reference = 12\n"
        )
    };
    let slope = |alpha| {
        let cfg = mvlse::experiments::parse_config(&text(alpha)).unwrap();
        mvlse::experiments::run_rate_study(&cfg).unwrap().rate.unwrap().slope.unwrap()
    };
    let (fast, slow) = (slope(0.5), slope(0.1));
    assert!(fast >= 0.4);
    assert!(slow < fast - 0.1, "alpha 0.1 slope {slow} vs alpha 0.5 slope {fast}");
}

#[test]
fn noise_free_particles_match_the_limit_path() {
    let obs = ensemble_data(100, 0.0, 7, 1, 0);
    let x0 = limit_path(100);
    let mvlse::simulate::LawProvider::Ensemble(paths) = &obs.law else { panic!("ensemble law expected") };
    for p in paths.iter() {
        for (a, b) in p.as_slice().iter().zip(x0.as_slice()) {
            assert!((a - b).abs() <= 1e-13);
        }
    }
}
