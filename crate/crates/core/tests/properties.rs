use std::collections::HashSet;

use advsysid::linalg::{Matrix, Vector};
use advsysid::markov::{stacked_regressor, true_markov};
use advsysid::realization::hankel_from_markov;
use advsysid::rng::{from_seed, replicate_seed};
use advsysid::simkit::gen_system;
use advsysid::streaming::{project_ball, subgradient};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0..10.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn vector(len: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-10.0..10.0f64, len).prop_map(Vector::from_vec)
}

proptest! {
    #[test]
    fn projection_is_nonexpansive(a in matrix(3, 8), b in matrix(3, 8), radius in 0.1..30.0f64) {
        let pa = project_ball(&a, radius);
        let pb = project_ball(&b, radius);
        prop_assert!(pa.norm() <= radius * (1.0 + 1e-12));
        prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-9);
    }

    #[test]
    fn projection_fixes_points_inside(a in matrix(2, 5)) {
        let r = a.norm() + 1.0;
        prop_assert_eq!(project_ball(&a, r), a);
    }

    #[test]
    fn subgradient_inequality(g in matrix(3, 6), h in matrix(3, 6), y in vector(3), u in vector(6)) {
        let sg = subgradient(&g, &y, &u);
        let f_h = (&y - &h * &u).norm();
        let linear = sg.value + sg.g.dot(&(&h - &g));
        prop_assert!(f_h >= linear - 1e-7 * (1.0 + f_h.abs()));
    }

    #[test]
    fn hankel_has_constant_anti_diagonals(blocks in prop::collection::vec(matrix(2, 3), 1..8), alpha in 0usize..3, beta in 1usize..5) {
        let h = hankel_from_markov(&blocks, alpha, beta).unwrap();
        prop_assert!(h.is_block_hankel(0.0));
        prop_assert_eq!(h.data.shape(), (2 * beta, 3 * beta));
        for i in 0..beta {
            for j in 0..beta {
                let expected = blocks.get(alpha + i + j).cloned().unwrap_or_else(|| Matrix::zeros(2, 3));
                prop_assert_eq!(h.block(i, j), expected);
            }
        }
    }

    #[test]
    fn regressor_is_stacked_newest_first(inputs in prop::collection::vec(vector(2), 6..12), k in 1usize..6) {
        let t = inputs.len() - 1;
        let u = stacked_regressor(&inputs, t, k);
        prop_assert_eq!(u.len(), 2 * k);
        for j in 0..k {
            prop_assert_eq!(u.rows(2 * j, 2).into_owned(), inputs[t - j].clone());
        }
    }

    #[test]
    fn markov_matrix_leads_with_feedthrough(seed in any::<u64>(), k in 1usize..6) {
        let sys = gen_system(4, 2, 3, 0.5, &mut from_seed(seed)).unwrap();
        let g = true_markov(&sys, k).unwrap();
        prop_assert_eq!(g.g.shape(), (3, 2 * k));
        prop_assert_eq!(g.feedthrough(), sys.d.clone());
        if k > 1 {
            prop_assert!((g.block(1) - &sys.c * &sys.b).abs().max() < 1e-12);
        }
    }

    #[test]
    fn replicate_seeds_are_distinct(master in any::<u64>()) {
        let seeds: HashSet<u64> = (0..64).map(|i| replicate_seed(master, i)).collect();
        prop_assert_eq!(seeds.len(), 64);
        prop_assert_eq!(replicate_seed(master, 5), replicate_seed(master, 5));
    }
}
