mod common;

use mcvsa::attention::EncoderParams;
use mcvsa::diffcore::{softmax_rows, Tensor};
use mcvsa::metrics::{fscore, kendall_tau, spearman_rho};
use mcvsa::summarize::{capacity, knapsack_select, make_summary, ShotSegmentation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Values drawn from a small alphabet so ties are common.
fn tied(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..6, n),
            prop::collection::vec(prop_oneof![(0u8..6).prop_map(f64::from), -3.0f64..3.0], n),
        )
    })
    .prop_map(|(a, b)| (a.into_iter().map(f64::from).collect(), b))
}

fn segmentation(lengths: &[usize]) -> ShotSegmentation {
    let mut starts = Vec::with_capacity(lengths.len());
    let mut at = 0;
    for &l in lengths {
        starts.push(at);
        at += l;
    }
    ShotSegmentation::from_starts(starts, at).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tau_matches_pairwise_oracle((a, b) in tied(2..50)) {
        let t = kendall_tau(&a, &b).unwrap();
        prop_assert!((t - common::tau_b_quadratic(&a, &b)).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&t));
        prop_assert!((t - kendall_tau(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rho_matches_pairwise_oracle((a, b) in tied(2..50)) {
        let r = spearman_rho(&a, &b).unwrap();
        prop_assert!((r - common::rho_quadratic(&a, &b)).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
    }

    #[test]
    fn correlations_ignore_monotone_transforms((a, b) in tied(2..40)) {
        let b2: Vec<f64> = b.iter().map(|v| 3.0 * v.powi(3) + 1.0).collect();
        prop_assert!((kendall_tau(&a, &b).unwrap() - kendall_tau(&a, &b2).unwrap()).abs() < 1e-12);
        prop_assert!((spearman_rho(&a, &b).unwrap() - spearman_rho(&a, &b2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn knapsack_is_optimal_and_feasible(
        items in prop::collection::vec((0.0f64..1.0, 1usize..20), 0..13),
        cap in 0usize..80,
    ) {
        let (values, lengths): (Vec<f64>, Vec<usize>) = items.into_iter().unzip();
        let chosen = knapsack_select(&values, &lengths, cap);
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let used: usize = chosen.iter().map(|&i| lengths[i]).sum();
        prop_assert!(used <= cap);
        let got: f64 = chosen.iter().map(|&i| values[i]).sum();
        let best = common::knapsack_exhaustive(&values, &lengths, cap);
        prop_assert!((got - best).abs() <= 1e-12 * best.max(1.0), "{got} vs {best}");
    }

    #[test]
    fn summaries_are_shot_aligned_and_within_budget(
        shots in prop::collection::vec((1usize..15, 0.0f64..1.0), 1..20),
        budget in 0.0f64..=1.0,
    ) {
        let lengths: Vec<usize> = shots.iter().map(|s| s.0).collect();
        let seg = segmentation(&lengths);
        let scores: Vec<f64> = shots.iter().flat_map(|&(l, v)| std::iter::repeat_n(v, l)).collect();
        let m = make_summary(&scores, &seg, budget).unwrap();
        prop_assert!(m.count() <= capacity(seg.frames(), budget));
        for r in seg.shots() {
            let on = m.selected[r.clone()].iter().filter(|&&s| s).count();
            prop_assert!(on == 0 || on == r.len());
        }
    }

    #[test]
    fn fscore_is_symmetric_and_bounded(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60),
    ) {
        let (p, g): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let f = fscore(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, fscore(&g, &p).unwrap());
    }

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(
        seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9, shift in -50.0f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::uniform(rows, cols, 20.0, &mut rng);
        let s = softmax_rows(&a);
        let shifted = Tensor::matrix(rows, cols, a.data().iter().map(|v| v + shift).collect()).unwrap();
        prop_assert!(s.max_abs_diff(&softmax_rows(&shifted)) < 1e-12);
        for r in 0..rows {
            let sum: f64 = s.row_slice(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_encoder_is_permutation_equivariant(
        seed in any::<u64>(),
        frames in 1usize..12,
        d in 1usize..9,
        heads in prop::collection::vec(1usize..6, 1..4),
        layers in 1usize..4,
        scaled in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderParams::init(d, &heads, layers, &mut rng).unwrap();
        let x = Tensor::uniform(frames, d, 3.0, &mut rng);
        let (z, maps) = enc.forward(&x, scaled).unwrap();
        prop_assert_eq!(z.shape(), &[frames, d]);
        prop_assert_eq!(maps.len(), layers * heads.len());
        for m in &maps {
            for r in 0..frames {
                let row = m.weights.row_slice(r);
                prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let mut perm: Vec<usize> = (0..frames).collect();
        for i in (1..frames).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (zp, _) = enc.forward(&common::permute_rows(&x, &perm), scaled).unwrap();
        prop_assert!(zp.max_abs_diff(&common::permute_rows(&z, &perm)) < 1e-9);
    }
}
