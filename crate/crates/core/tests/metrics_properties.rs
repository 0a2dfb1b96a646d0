use std::collections::HashMap;

use msdpp::attributes::{AttributeKind, AttributeSpec, Direction};
use msdpp::engine::{greedy_rerank, RerankConfig, TnMode};
use msdpp::metrics::{diversity_metric, harmonic_mean, ncs_at_k, prs, vendi_score, VENDI_Q};
use msdpp::synth::{random_bundle, random_spd};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random correlation matrix: a Gram matrix rescaled to unit diagonal.
fn correlation(seed: u64, n: usize) -> DMatrix<f64> {
    let s = random_spd(&mut ChaCha8Rng::seed_from_u64(seed), n, 0.01, 3.0);
    let m = s.as_sym().as_matrix();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vendi_permutation_invariant(seed in any::<u64>(), n in 1usize..=15) {
        let k = correlation(seed, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let p = DMatrix::from_fn(n, n, |i, j| k[(perm[i], perm[j])]);
        let a = vendi_score(&k, VENDI_Q).unwrap();
        let b = vendi_score(&p, VENDI_Q).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a, "{a} vs {b}");
    }

    #[test]
    fn vendi_bounded_by_size(seed in any::<u64>(), n in 1usize..=15) {
        let vs = vendi_score(&correlation(seed, n), VENDI_Q).unwrap();
        prop_assert!(vs >= 1.0 - 1e-9 && vs <= n as f64 + 1e-9, "{vs}");
    }

    #[test]
    fn decrease_is_complement_of_increase(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bundle = random_bundle(&mut rng, 20, 2);
        let spec = |d0, d1| vec![
            AttributeSpec::new("a0", AttributeKind::Generic, d0, 0.5),
            AttributeSpec::new("a1", AttributeKind::Generic, d1, 0.5),
        ];
        let cfg = RerankConfig::new(0.8, 6, 20, TnMode::TvM, spec(Direction::Increase, Direction::Decrease)).unwrap();
        let ranked = greedy_rerank(&bundle, &cfg).unwrap();
        let (inc, _) = diversity_metric(&ranked, &bundle, &spec(Direction::Increase, Direction::Increase), 6).unwrap();
        let (dec, _) = diversity_metric(&ranked, &bundle, &spec(Direction::Decrease, Direction::Decrease), 6).unwrap();
        for (i, d) in inc.iter().zip(&dec) {
            prop_assert_eq!(d.normalized, 1.0 - i.normalized);
            prop_assert_eq!(d.vs, i.vs);
        }
    }

    #[test]
    fn prs_affine_invariant(
        divs in prop::collection::vec(-5.0f64..5.0, 3..=11),
        scale in 0.01f64..100.0,
        offset in -100.0f64..100.0,
    ) {
        let weights: Vec<f64> = (0..divs.len()).map(|i| i as f64 / 10.0).collect();
        let shifted: Vec<f64> = divs.iter().map(|d| scale * d + offset).collect();
        let a = prs(&divs, &weights).unwrap();
        let b = prs(&shifted, &weights).unwrap();
        prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn prs_monotone_uniform_sweep_is_ten(mut divs in prop::collection::vec(-5.0f64..5.0, 11)) {
        divs.sort_by(f64::total_cmp);
        prop_assume!(divs[10] > divs[0]);
        let weights: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        prop_assert_eq!(prs(&divs, &weights).unwrap(), 10.0);
    }

    #[test]
    fn ncs_ignores_items_past_cutoff(
        scores in prop::collection::vec(0.0f64..1.0, 12..=30),
        extra in prop::collection::vec(0usize..30, 0..10),
    ) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("i{i}")).collect();
        let map: HashMap<String, f64> = ids.iter().cloned().zip(scores.iter().copied()).collect();
        let top: Vec<String> = ids[..10].to_vec();
        let mut longer = top.clone();
        longer.extend(extra.iter().map(|&e| ids[e % ids.len()].clone()));
        prop_assert_eq!(ncs_at_k(&top, &map, 10).unwrap(), ncs_at_k(&longer, &map, 10).unwrap());
    }

    #[test]
    fn harmonic_mean_bounds(x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let h = harmonic_mean(x, y);
        prop_assert!(h <= (x + y) / 2.0 + 1e-15 && h >= x.min(y) - 1e-15);
    }
}
