use mma_core::autodiff::{softmax_values, Tape, Var};
use mma_core::model::layers::{attention_pool, AttentionVars};
use mma_core::model::{
    forward, forward_on_tape, forward_with, joint_loss, ForwardOptions, ModelConfig, Objective, ParamStore,
};
use mma_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn micro() -> ModelConfig {
    ModelConfig {
        d_proj: 4,
        d_hidden: 5,
        beat_len: 10,
        slice_len: 30,
        ..ModelConfig::default()
    }
}

fn mask_strategy(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n).prop_filter("one unmasked entry", |m| m.iter().any(|&b| b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_contracts(
        x in prop::collection::vec(-30f64..30.0, 1..20),
        c in -50f64..50.0,
        seed in any::<u64>(),
    ) {
        let mut r = rng::stream(seed, &[]);
        let mut mask: Vec<bool> = x.iter().map(|_| r.random_bool(0.7)).collect();
        mask[0] = true;
        let p = softmax_values(&x, Some(&mask)).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (v, m) in p.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*v, 0.0);
            }
        }
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let q = softmax_values(&shifted, Some(&mask)).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn attention_weights_are_a_masked_distribution(
        (n, mask) in (1usize..12).prop_flat_map(|n| (Just(n), mask_strategy(n))),
        seed in any::<u64>(),
    ) {
        let mut r = rng::stream(seed, &[]);
        let mut rand_var = |tape: &mut Tape, shape: &[usize]| -> Var {
            let len = shape.iter().product();
            tape.constant(shape, (0..len).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
        };
        let mut tape = Tape::new();
        let h = rand_var(&mut tape, &[n, 4]);
        let attn = AttentionVars {
            weight: rand_var(&mut tape, &[3, 4]),
            bias: rand_var(&mut tape, &[3]),
            context: rand_var(&mut tape, &[3]),
        };
        let p = attention_pool(&mut tape, h, attn, Some(&mask)).unwrap();
        let w = tape.value(p.weights).to_vec();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (v, m) in w.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*v, 0.0);
            }
        }
        let rows = tape.value(h);
        let pooled = tape.value(p.pooled);
        for d in 0..4 {
            let direct: f64 = (0..n).map(|i| w[i] * rows[i * 4 + d]).sum();
            prop_assert!((direct - pooled[d]).abs() <= 1e-12);
        }
    }
}

fn slice_loss(store: &ParamStore, samples: &[f64], mask: &[bool], labels: &[u8]) -> f64 {
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let fv = forward_on_tape(
        store,
        &mut tape,
        &vars,
        samples,
        mask,
        ForwardOptions::default(),
        &mut rng::stream(0, &[]),
    )
    .unwrap();
    let l = joint_loss(&mut tape, &fv, 1, labels, store.config(), Objective::Joint).unwrap();
    tape.scalar(l.total)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn masked_samples_do_not_move_the_loss(
        valid in 1usize..30,
        seed in any::<u64>(),
        noise in prop::collection::vec(-1e6f64..1e6, 30),
    ) {
        let cfg = micro();
        let store = ParamStore::init(&cfg, &mut rng::stream(seed, &[0])).unwrap();
        let mut r = rng::stream(seed, &[1]);
        let samples: Vec<f64> = (0..30).map(|i| if i < valid { r.random_range(-2.0..2.0) } else { 0.0 }).collect();
        let mask: Vec<bool> = (0..30).map(|i| i < valid).collect();
        let labels: Vec<u8> = (0..30).map(|_| u8::from(r.random_bool(0.5))).collect();
        let base = slice_loss(&store, &samples, &mask, &labels);
        let mut perturbed = samples.clone();
        let mut flipped = labels.clone();
        for i in valid..30 {
            perturbed[i] = noise[i];
            flipped[i] = 1 - flipped[i];
        }
        prop_assert!((slice_loss(&store, &perturbed, &mask, &flipped) - base).abs() < 1e-12);
    }
}

#[test]
fn zero_network_fixed_point() {
    for cfg in [
        micro(),
        ModelConfig {
            concat_slice_features: true,
            ..micro()
        },
        ModelConfig::desk(),
    ] {
        let store = ParamStore::zeros(&cfg).unwrap();
        let samples: Vec<f64> = (0..cfg.slice_len).map(|i| (i as f64).sin() * 3.0).collect();
        let mask: Vec<bool> = (0..cfg.slice_len).map(|i| i < cfg.slice_len - 7).collect();
        let out = forward(&store, &samples, &mask).unwrap();
        for p in &out.slice_probs {
            assert!((p - 1.0 / 3.0).abs() <= 1e-12);
        }
        for (p, v) in out.point_probs.iter().zip(&out.point_valid) {
            if *v {
                assert!((p - 0.5).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn fresh_network_sanity_band() {
    let cfg = ModelConfig::desk();
    let (mut worst_slice, mut lo, mut hi) = (0.0f64, 1.0f64, 0.0f64);
    for seed in 0..100u64 {
        let store = ParamStore::init(&cfg, &mut rng::stream(seed, &[7])).unwrap();
        let mut r = rng::stream(seed, &[8]);
        let samples: Vec<f64> = (0..cfg.slice_len).map(|_| r.random_range(-2.0..2.0)).collect();
        let out = forward(&store, &samples, &vec![true; cfg.slice_len]).unwrap();
        for p in &out.slice_probs {
            worst_slice = worst_slice.max((p - 1.0 / 3.0).abs());
        }
        for p in &out.point_probs {
            lo = lo.min(*p);
            hi = hi.max(*p);
        }
    }
    assert!(worst_slice <= 0.15, "slice probabilities deviate by {worst_slice}");
    assert!(lo >= 0.2 && hi <= 0.8, "point probabilities span [{lo}, {hi}]");
}

/// Point recurrence without memory: recurrent weights zero and forget gates
/// saturated shut, so every point feature depends on its own sample only.
fn memoryless(cfg: &ModelConfig) -> ParamStore {
    let mut store = ParamStore::init(cfg, &mut rng::stream(5, &[])).unwrap();
    let h = cfg.d_hidden;
    for dir in ["fwd", "bwd"] {
        let p = store.params_mut();
        p.get_mut(&format!("point_lstm.{dir}.w_hh"))
            .unwrap()
            .data_mut()
            .fill(0.0);
        p.get_mut(&format!("point_lstm.{dir}.bias")).unwrap().data_mut()[h..2 * h].fill(-1e4);
    }
    store
}

#[test]
fn permuting_beats_permutes_slice_attention_without_beat_recurrence() {
    let cfg = ModelConfig {
        slice_len: 50,
        ..micro()
    };
    let store = memoryless(&cfg);
    let opts = ForwardOptions {
        training: false,
        bypass_beat_recurrence: true,
    };
    let mut r = rng::stream(9, &[]);
    let samples: Vec<f64> = (0..50).map(|_| r.random_range(-2.0..2.0)).collect();
    let mask = vec![true; 50];
    let base = forward_with(&store, &samples, &mask, opts, &mut rng::stream(0, &[])).unwrap();
    for perm in [[4usize, 3, 2, 1, 0], [1, 0, 3, 4, 2], [2, 4, 0, 1, 3]] {
        let permuted: Vec<f64> = perm
            .iter()
            .flat_map(|&m| samples[m * 10..(m + 1) * 10].to_vec())
            .collect();
        let out = forward_with(&store, &permuted, &mask, opts, &mut rng::stream(0, &[])).unwrap();
        for (k, &m) in perm.iter().enumerate() {
            assert!((out.slice_attention[k] - base.slice_attention[m]).abs() <= 1e-12);
            assert_eq!(out.beat_row(k, 10), base.beat_row(m, 10));
        }
        for (a, b) in out.slice_probs.iter().zip(&base.slice_probs) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
