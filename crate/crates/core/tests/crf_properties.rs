mod common;

use common::{codes, random_matrix, Enumeration};
use proptest::prelude::*;
use segpr::corpus::is_valid_tags;
use segpr::crf::Lattice;
use segpr::numerics::Rng;

fn lattice(seed: u64, n: usize) -> (segpr::numerics::Matrix, segpr::numerics::Matrix) {
    let mut rng = Rng::new(seed);
    (
        random_matrix(&mut rng, n, 4, -2.0, 2.0),
        random_matrix(&mut rng, 4, 4, -2.0, 2.0),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_and_marginals_match_enumeration(seed in any::<u64>(), n in 1usize..6, constrained in any::<bool>()) {
        let (u, a) = lattice(seed, n);
        let lat = Lattice::new(&u, &a).unwrap();
        let brute = Enumeration::new(&u, &a, constrained);
        prop_assert!((lat.log_partition(constrained) - brute.log_z).abs() < 1e-9);
        let m = lat.marginals(constrained);
        let (node, edge) = brute.marginals(n);
        prop_assert!(m.node.max_abs_diff(&node) < 1e-9);
        for (x, y) in m.edge.iter().zip(&edge) {
            prop_assert!(x.max_abs_diff(y) < 1e-9);
        }
    }

    #[test]
    fn kbest_is_the_enumeration_top_k(seed in any::<u64>(), n in 1usize..6, k in 1usize..9, constrained in any::<bool>()) {
        let (u, a) = lattice(seed, n);
        let lat = Lattice::new(&u, &a).unwrap();
        let got = lat.kbest(k, constrained);
        let want = Enumeration::new(&u, &a, constrained).top(k);
        prop_assert_eq!(got.len(), want.len());
        for (g, (tags, score)) in got.iter().zip(&want) {
            prop_assert_eq!(codes(&g.tags), codes(tags));
            prop_assert!((g.score - score).abs() < 1e-9);
        }
        prop_assert_eq!(&got[0].tags, &lat.viterbi(constrained).tags);
        if constrained {
            prop_assert!(got.iter().all(|s| is_valid_tags(&s.tags)));
        }
    }

    #[test]
    fn unary_shift_moves_partition_only(seed in any::<u64>(), n in 1usize..6, c in -5.0f64..5.0) {
        let (u, a) = lattice(seed, n);
        let mut shifted = u.clone();
        shifted.data_mut().iter_mut().for_each(|x| *x += c);
        let (l1, l2) = (Lattice::new(&u, &a).unwrap(), Lattice::new(&shifted, &a).unwrap());
        prop_assert!((l2.log_partition(false) - l1.log_partition(false) - n as f64 * c).abs() < 1e-9);
        prop_assert_eq!(l1.viterbi(true).tags, l2.viterbi(true).tags);
        let kb1: Vec<_> = l1.kbest(4, true).into_iter().map(|s| s.tags).collect();
        let kb2: Vec<_> = l2.kbest(4, true).into_iter().map(|s| s.tags).collect();
        prop_assert_eq!(kb1, kb2);
    }
}
