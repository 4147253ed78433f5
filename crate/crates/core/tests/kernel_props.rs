use hetcon_core::graph::{build_selectors, validate_spanning_tree, Edge, Topology};
use hetcon_core::matstack::{
    eigenvalues, inverse, max_singular_value, pseudo_inverse, singular_values, solve_linear,
    spectral_radius, Mat,
};
use hetcon_core::scenarios;
use hetcon_core::verify::penrose_violation;
use hetcon_core::Scenario;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn mat_strategy(max: usize) -> impl Strategy<Value = Mat> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1.0f64..1.0, r * c).prop_map(move |d| Mat::new(r, c, d).unwrap())
    })
}

fn square_strategy(max: usize) -> impl Strategy<Value = Mat> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |d| Mat::new(n, n, d).unwrap())
    })
}

/// Products of thin random factors give exactly rank-deficient inputs.
fn low_rank_strategy() -> impl Strategy<Value = Mat> {
    (1..=6usize, 1..=6usize, 1..=5usize).prop_flat_map(|(r, c, k)| {
        let k = k.min(r.min(c));
        (
            prop::collection::vec(-1.0f64..1.0, r * k),
            prop::collection::vec(-1.0f64..1.0, k * c),
        )
            .prop_map(move |(a, b)| &Mat::new(r, k, a).unwrap() * &Mat::new(k, c, b).unwrap())
    })
}

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn penrose_conditions_full(m in mat_strategy(6)) {
        prop_assert!(penrose_violation(&m) <= 1e-8);
    }

    #[test]
    fn penrose_conditions_rank_deficient(m in low_rank_strategy()) {
        prop_assert!(penrose_violation(&m) <= 1e-8);
    }

    #[test]
    fn sigma_max_dominates_spectral_radius(m in square_strategy(8)) {
        let rho = spectral_radius(&m).unwrap();
        prop_assert!(rho <= max_singular_value(&m) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn solve_residual_well_conditioned(m in square_strategy(8), rhs in prop::collection::vec(-1.0f64..1.0, 8)) {
        let n = m.rows();
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += n as f64 + 1.0;
        }
        let b = Mat::col(&rhs[..n]).unwrap();
        let x = solve_linear(&a, &b).unwrap();
        let r = (&(&a * &x) - &b).norm_fro();
        prop_assert!(r <= 1e-12 * (a.norm_fro() * x.norm_fro() + b.norm_fro()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn spectral_radius_scales(m in square_strategy(8), alpha in -5.0f64..5.0) {
        let lhs = spectral_radius(&m.scale(alpha)).unwrap();
        let rhs = alpha.abs() * spectral_radius(&m).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1e-6));
    }

    #[test]
    fn eigenvalue_moduli_match_nalgebra(m in square_strategy(7)) {
        let mut ours: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|&(re, im)| re.hypot(im)).collect();
        let mut theirs: Vec<f64> = to_na(&m).complex_eigenvalues().iter().map(|z| z.norm()).collect();
        ours.sort_by(f64::total_cmp);
        theirs.sort_by(f64::total_cmp);
        prop_assert_eq!(ours.len(), theirs.len());
        for (a, b) in ours.iter().zip(&theirs) {
            // defective clusters lose about half the digits
            prop_assert!((a - b).abs() <= 1e-6, "{ours:?} vs {theirs:?}");
        }
    }

    #[test]
    fn singular_values_match_nalgebra(m in mat_strategy(6)) {
        let ours = singular_values(&m);
        let mut theirs: Vec<f64> = to_na(&m).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-10 * theirs[0].max(1.0));
        }
    }

    #[test]
    fn inverse_matches_nalgebra(m in square_strategy(6)) {
        let n = m.rows();
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += 2.0;
        }
        let ours = inverse(&a).unwrap();
        let theirs = to_na(&a).try_inverse().unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((ours[(i, j)] - theirs[(i, j)]).abs() <= 1e-10 * (1.0 + theirs.amax()));
            }
        }
    }

    #[test]
    fn pseudo_inverse_matches_nalgebra(m in mat_strategy(6)) {
        let ours = pseudo_inverse(&m);
        let theirs = to_na(&m).pseudo_inverse(1e-12).unwrap();
        let scale = 1.0 + theirs.amax();
        for i in 0..ours.rows() {
            for j in 0..ours.cols() {
                prop_assert!((ours[(i, j)] - theirs[(i, j)]).abs() <= 1e-7 * scale);
            }
        }
    }

    #[test]
    fn selectors_partition_the_stack(parents in prop::collection::vec(0usize..100, 1..7), d in 1usize..4) {
        let edges: Vec<Edge> = parents
            .iter()
            .enumerate()
            .map(|(k, p)| Edge { from: p % (k + 1), to: k + 1, weight: 1.0 })
            .collect();
        let n = edges.len();
        let topo = Topology::new(n + 1, edges).unwrap();
        let pm = validate_spanning_tree(&topo).unwrap();
        let sel = build_selectors(&pm, d);
        prop_assert_eq!(sel.len(), n);
        let mut sum = Mat::zeros(n * d, n * d);
        for s in &sel {
            prop_assert_eq!(s.shape(), (d, n * d));
            prop_assert!((s * &s.transpose()).approx_eq(&Mat::identity(d), 0.0));
            sum = &sum + &(&s.transpose() * s);
        }
        prop_assert!(sum.approx_eq(&Mat::identity(n * d), 0.0));
        let order = pm.topological_order();
        for (pos, &i) in order.iter().enumerate() {
            let p = pm.parent(i);
            prop_assert!(p == 0 || order[..pos].contains(&p));
        }
    }

    #[test]
    fn scenario_json_round_trip(idx in 0usize..5, seed in any::<u64>(), horizon in 0usize..500) {
        let mut s = scenarios::by_name(scenarios::NAMES[idx]).unwrap();
        s.optimizer_seed = seed;
        s.horizon = horizon;
        let back = Scenario::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(back, s);
    }
}
