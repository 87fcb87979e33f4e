mod common;

use common::*;
use offsetlab::acm::{blend, correction_weight};
use offsetlab::numerics::Tensor3;
use offsetlab::oem::{normalize_score, spatial_variation, temporal_deviation, NormState, OffsetSignals};
use offsetlab::rng::SplitMix64;
use offsetlab::toymodel::{block_forward, init_weights, ModelDims};
use proptest::prelude::*;

#[test]
fn block_matches_scalar_loops() {
    let dims = ModelDims {
        layers: 3,
        channels: 8,
        patches: 4,
        patch_dim: 4,
        max_timesteps: 6,
        num_classes: 2,
    };
    let w = init_weights(11, dims);
    let mut rng = SplitMix64::new(5);
    for layer in 0..dims.layers {
        for t in [0, 3, 5] {
            let h = random_tensor(&mut rng, 2, 4, 8, 2.0);
            let got = block_forward(&h, layer, t, &w).unwrap();
            let want = oracle_block(&h, layer, t, &w);
            for (g, e) in got.data().iter().zip(want.data()) {
                assert!(rel_err(*g, *e) < 1e-10 || (g - e).abs() < 1e-12, "{g} vs {e}");
            }
        }
    }
}

#[test]
fn signals_match_loops_on_fixed_case() {
    let a = Tensor3::new(1, 2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
    let c = Tensor3::new(1, 2, 3, vec![1.0, 2.0, 1.0, 3.0, 4.0, 0.0]).unwrap();
    assert_eq!(temporal_deviation(&a, &c).unwrap(), oracle_temporal(&a, &c));
    assert_eq!(temporal_deviation(&a, &c).unwrap(), 3.5);
    assert!((spatial_variation(&a) - oracle_spatial(&a)).abs() < 1e-15);
}

#[test]
fn score_combines_with_spatial_weight() {
    let mut rng = SplitMix64::new(9);
    let a = random_tensor(&mut rng, 2, 5, 7, 1.0);
    let c = random_tensor(&mut rng, 2, 5, 7, 1.0);
    let s = OffsetSignals::measure(1, 4, &a, Some(&c), 0.25).unwrap();
    let want = oracle_temporal(&a, &c) + 0.25 * oracle_spatial(&a);
    assert!(rel_err(s.score, want) < 1e-12);
    let first = OffsetSignals::measure(1, 4, &a, None, 0.25).unwrap();
    assert_eq!(first.score, f64::INFINITY);
}

/// EMA written as an explicit recurrence over the whole history.
fn oracle_normalized(history: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut ema = 0.0;
    for (k, &raw) in history.iter().enumerate() {
        if k == 0 {
            ema = raw;
            out.push(1.0);
            continue;
        }
        ema = 0.9 * ema + 0.1 * raw;
        out.push(if ema > 0.0 { raw / ema } else { 0.0 });
    }
    out
}

proptest! {
    #[test]
    fn signals_agree_with_loops(seed in any::<u64>(), b in 1usize..3, p in 1usize..9, d in 1usize..17) {
        let mut rng = SplitMix64::new(seed);
        let a = random_tensor(&mut rng, b, p, d, 3.0);
        let c = random_tensor(&mut rng, b, p, d, 3.0);
        prop_assert!(rel_err(temporal_deviation(&a, &c).unwrap(), oracle_temporal(&a, &c)) < 1e-12);
        prop_assert!(rel_err(spatial_variation(&a), oracle_spatial(&a)) < 1e-12);
    }

    #[test]
    fn ema_matches_recurrence(history in prop::collection::vec(0.0f64..10.0, 1..40)) {
        let want = oracle_normalized(&history);
        let mut state = NormState::default();
        for (raw, w) in history.iter().zip(want) {
            let (got, next) = normalize_score(*raw, state);
            state = next;
            prop_assert!((got - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn weight_is_clipped_product(score in 0.0f64..50.0, gamma in 0.0f64..5.0) {
        let w = correction_weight(score, gamma).unwrap();
        prop_assert_eq!(w, (gamma * score).clamp(0.0, 1.0));
    }

    #[test]
    fn blend_is_convex_elementwise(seed in any::<u64>(), w in 0.0f64..=1.0) {
        let mut rng = SplitMix64::new(seed);
        let c = random_tensor(&mut rng, 1, 3, 4, 2.0);
        let f = random_tensor(&mut rng, 1, 3, 4, 2.0);
        let out = blend(&c, &f, w).unwrap();
        for ((o, x), y) in out.data().iter().zip(c.data()).zip(f.data()) {
            prop_assert!((o - ((1.0 - w) * x + w * y)).abs() < 1e-15);
        }
    }
}
