mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::*;
use mvlse::asymptotics::LimitQuantities;
use mvlse::estimate::{solve_linear_design, Contrast};
use mvlse::measure::{empirical_integral, w2_empirical};
use mvlse::model::{inverse_diffusion, tame_drift, Model};
use mvlse::segment::{eval_segment, interp_segment, sup_norm};
use mvlse::{DiscretePath, GridSpec, ParticleEnsemble, Segment};

fn segment_values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, len)
}

fn ensemble(n: usize) -> impl Strategy<Value = ParticleEnsemble> {
    prop::collection::vec(segment_values(4), n)
        .prop_map(|ps| ParticleEnsemble::new(ps.into_iter().map(|v| Segment::scalar(0.25, v).unwrap()).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_a_metric_on_triples(a in ensemble(5), b in ensemble(5), c in ensemble(5)) {
        let ab = w2_empirical(&a, &b).unwrap().value;
        let ba = w2_empirical(&b, &a).unwrap().value;
        let bc = w2_empirical(&b, &c).unwrap().value;
        let ac = w2_empirical(&a, &c).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(w2_empirical(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn permutation_leaves_integrals_and_w2_unchanged(a in ensemble(6), b in ensemble(6), shift in 0usize..6) {
        let mut ps = a.particles().to_vec();
        ps.rotate_left(shift);
        let rotated = ParticleEnsemble::new(ps).unwrap();
        let f = |s: &Segment| DVector::from_element(1, s.head()[0].powi(2) + s.integral()[0]);
        prop_assert!((empirical_integral(&a, f) - empirical_integral(&rotated, f)).norm() <= 1e-12);
        let d1 = w2_empirical(&a, &b).unwrap().value;
        let d2 = w2_empirical(&rotated, &b).unwrap().value;
        prop_assert!((d1 - d2).abs() <= 1e-12);
    }

    #[test]
    fn empirical_integral_is_linear(mu in ensemble(4), s in -3.0..3.0f64, t in -3.0..3.0f64) {
        let f = |z: &Segment| DVector::from_element(1, z.head()[0]);
        let g = |z: &Segment| DVector::from_element(1, z.abs_integral());
        let combined = empirical_integral(&mu, |z| f(z) * s + g(z) * t);
        let separate = empirical_integral(&mu, f) * s + empirical_integral(&mu, g) * t;
        prop_assert!((combined - separate).norm() <= 1e-12);
    }

    #[test]
    fn taming_is_a_parallel_shrink(v in prop::collection::vec(-1e6..1e6f64, 1..5), delta in 1e-4..1.0f64, alpha in 0.01..=0.5f64) {
        let b = DVector::from_vec(v);
        let t = tame_drift(&b, delta, alpha).unwrap();
        prop_assert!(t.norm() <= b.norm());
        prop_assert!(t.norm() <= delta.powf(-alpha));
        if b.norm() > 0.0 {
            let cosine = t.dot(&b) / (t.norm() * b.norm());
            prop_assert!((cosine - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sigma_hat_inverts_sigma_sigma_t(entries in prop::collection::vec(-1.0..1.0f64, 9)) {
        let sigma = DMatrix::from_vec(3, 3, entries) + DMatrix::identity(3, 3) * 3.0;
        let w = inverse_diffusion(&sigma).unwrap();
        let err = (w * &sigma * sigma.transpose() - DMatrix::identity(3, 3)).norm();
        prop_assert!(err <= 1e-10);
    }

    #[test]
    fn interpolated_segments_reproduce_nodes(values in segment_values(13), k in 0usize..=8, i in 0usize..=4) {
        let grid = GridSpec::new(2.0, 8, 1.0).unwrap();
        let path = DiscretePath::new(grid, 1, values.clone()).unwrap();
        let seg = interp_segment(&path, k).unwrap();
        let at = eval_segment(&seg, -(i as f64) * grid.delta).unwrap();
        prop_assert_eq!(at[0].to_bits(), values[k + 4 - i].to_bits());
        let window_max = values[k..=k + 4].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(sup_norm(&seg) <= window_max);
        let lip = values[k..=k + 4].windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max) / grid.delta;
        let (s1, s2) = (-0.37, -0.12);
        let diff = (eval_segment(&seg, s1).unwrap()[0] - eval_segment(&seg, s2).unwrap()[0]).abs();
        prop_assert!(diff <= lip * (s1 - s2).abs() + 1e-12);
    }

    #[test]
    fn closed_form_is_scale_consistent(a in prop::collection::vec(0.1..5.0f64, 5), c in 0.1..10.0f64) {
        // increments scale with delta: A2, A3 scale by c when delta does
        let a = [a[0] + a[3], a[1], a[2], a[3] * 0.5, a[4] + a[3]];
        let base = solve_linear_design(a, 0.01).unwrap();
        let scaled = solve_linear_design([a[0], c * a[1], c * a[2], a[3], a[4]], 0.01 * c).unwrap();
        prop_assert!((base[0] - scaled[0]).abs() <= 1e-9 * base[0].abs().max(1.0));
        prop_assert!((base[1] - scaled[1]).abs() <= 1e-9 * base[1].abs().max(1.0));
    }

    #[test]
    fn example_drift_is_affine(t1 in prop::collection::vec(-3.0..3.0f64, 2), t2 in prop::collection::vec(-3.0..3.0f64, 2)) {
        let m = model();
        let x0 = limit_path(40);
        let seg = x0.segment_at(20).unwrap();
        let mu = ParticleEnsemble::dirac(seg.clone());
        let zero = m.drift(&seg, &mu, &[0.0, 0.0]);
        let sum = [t1[0] + t2[0], t1[1] + t2[1]];
        let lhs = m.drift(&seg, &mu, &sum) - &zero;
        let rhs = (m.drift(&seg, &mu, &t1) - &zero) + (m.drift(&seg, &mu, &t2) - &zero);
        prop_assert!((lhs - rhs).norm() <= 1e-12);
        prop_assert_eq!(m.grad_theta_drift(&seg, &mu, &t1), m.grad_theta_drift(&seg, &mu, &t2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn contrast_invariants(seed in 0u64..1000, t in prop::collection::vec(-1.0..2.0f64, 2), eps in 0.005..0.2f64) {
        let obs = dirac_data(80, eps, seed);
        let m = model();
        let c = Contrast::new(&obs, &m).unwrap();
        prop_assert!(c.psi(&t).unwrap() >= 0.0);
        prop_assert_eq!(c.phi(&THETA0, &THETA0), 0.0);
        let (lhs, rhs) = (c.phi(&t, &THETA0), c.decomposition(&t, &THETA0));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-300));
    }

    #[test]
    fn limit_quantities_invariants(t in prop::collection::vec(-1.0..2.0f64, 2)) {
        let m = model();
        let x0 = limit_path(80);
        let lq = LimitQuantities::new(&m, &x0, &THETA0).unwrap();
        let info = lq.info(&t);
        prop_assert!((&info - info.transpose()).amax() <= 1e-14);
        prop_assert!(info.symmetric_eigenvalues().min() >= -1e-12);
        prop_assert!(lq.xi(&t) >= 0.0);
        prop_assert_eq!(lq.xi(&THETA0), 0.0);
        prop_assert_eq!(lq.k(&THETA0), DMatrix::zeros(2, 2));
    }
}
