use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::adapter::LoRAAdapter;
use crate::continual::{GradientImportance, RegConfig, TaskRecord};
use crate::data::{EncodedPair, BOS, EOS};
use crate::error::Error;
use crate::model::{Model, ModelConfig, TargetSelector};

fn cfg_model(vocab: usize) -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        vocab_size: vocab,
        max_len: 10,
        dropout: 0.0,
        seed: 1,
        tied_embeddings: false,
        ln_eps: 1e-5,
    }
}

fn random_pairs(n: usize, vocab: u32, seed: u64, copy: bool) -> Vec<EncodedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..6);
            let src: Vec<u32> = (0..len).map(|_| rng.random_range(4..vocab)).collect();
            let body: Vec<u32> = if copy {
                src.clone()
            } else {
                (0..len).map(|_| rng.random_range(4..vocab)).collect()
            };
            let tgt = std::iter::once(BOS).chain(body).chain([EOS]).collect();
            EncodedPair { src, tgt }
        })
        .collect()
}

fn quick(scope: Scope) -> TrainConfig {
    TrainConfig {
        scope,
        lr: 1e-2,
        warmup_steps: 0,
        weight_decay: 0.0,
        batch_size: 8,
        max_epochs: 3,
        patience: 50,
        eval_every: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn bleu_identity_and_clipping() {
    let s = |t: &str| -> Vec<String> { t.split_whitespace().map(str::to_string).collect() };
    let hyp = vec![s("a b c d e"), s("the cat sat on the mat")];
    assert_eq!(bleu(&hyp, &hyp).unwrap().score, 100.0);
    let clip = bleu(&[s("the the the the")], &[s("the cat")]).unwrap();
    // "the" occurs once in the reference, so one of four unigrams counts.
    assert_eq!(clip.matches[0], 1);
    assert_eq!(clip.precisions[0], 0.25);
    assert_eq!(clip.score, 0.0);
    let empty: Vec<Vec<String>> = vec![];
    assert!(matches!(bleu(&empty, &empty), Err(Error::Config(_))));
    assert!(matches!(bleu(&hyp, &hyp[..1]), Err(Error::Config(_))));
}

#[test]
fn bleu_brevity_penalty_by_hand() {
    let s = |t: &str| -> Vec<String> { t.split_whitespace().map(str::to_string).collect() };
    let r = bleu(&[s("a b c d")], &[s("a b c d e f")]).unwrap();
    assert!((r.brevity_penalty - (1.0f64 - 6.0 / 4.0).exp()).abs() < 1e-12);
    assert!((r.score - 100.0 * r.brevity_penalty).abs() < 1e-9);
}

#[test]
fn token_accuracy_matches_recount() {
    let m = Model::<f32>::new(cfg_model(12)).unwrap();
    let pairs = random_pairs(10, 12, 4, false);
    let acc = token_accuracy(&m, &pairs, None).unwrap();
    let (mut hit, mut n) = (0, 0);
    for p in &pairs {
        let logits = m.logits(&p.src, &p.tgt[..p.tgt.len() - 1], None).unwrap();
        for (pos, &gold) in p.tgt[1..].iter().enumerate() {
            let row: Vec<f32> = (0..12).map(|j| logits.at2(pos, j)).collect();
            let best = (0..12).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hit += (best as u32 == gold) as usize;
            n += 1;
        }
    }
    assert_eq!(acc, hit as f64 / n as f64);
}

#[test]
fn untrained_accuracy_is_chance() {
    let v = 20u32;
    let m = Model::<f32>::new(cfg_model(v as usize)).unwrap();
    // Targets uniform over all 20 ids, independent of the source.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pairs: Vec<EncodedPair> = (0..600)
        .map(|_| {
            let src: Vec<u32> = (0..4).map(|_| rng.random_range(4..v)).collect();
            let body: Vec<u32> = (0..3).map(|_| rng.random_range(0..v)).collect();
            EncodedPair {
                src,
                tgt: std::iter::once(BOS).chain(body).collect(),
            }
        })
        .collect();
    let acc = token_accuracy(&m, &pairs, None).unwrap();
    let n = 1800.0;
    let p = 1.0 / v as f64;
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma, "accuracy {acc}, chance {p} ± {}", 3.0 * sigma);
}

#[test]
fn adapter_scope_keeps_base_frozen() {
    let base = Model::<f32>::new(cfg_model(12)).unwrap();
    let a = LoRAAdapter::init(&base, &TargetSelector::attention(), 2, 0, "t").unwrap();
    let train_set = random_pairs(32, 12, 1, true);
    let valid = random_pairs(8, 12, 2, true);
    let data = TrainData {
        train: &train_set,
        valid: &valid,
        monitors: &[],
        vocab: None,
    };
    let snapshot = crate::model::checkpoint::to_bytes(&base, None).unwrap();
    let out = train(&base, Some(&a), data, &quick(Scope::Adapter), &[]).unwrap();
    assert_eq!(crate::model::checkpoint::to_bytes(&base, None).unwrap(), snapshot);
    assert_eq!(crate::model::checkpoint::to_bytes(&out.model, None).unwrap(), snapshot);
    assert_ne!(out.adapter.unwrap(), a);
}

#[test]
fn zero_lr_changes_nothing() {
    let base = Model::<f32>::new(cfg_model(12)).unwrap();
    let train_set = random_pairs(24, 12, 1, true);
    let valid = random_pairs(8, 12, 2, true);
    let data = TrainData {
        train: &train_set,
        valid: &valid,
        monitors: &[],
        vocab: None,
    };
    let cfg = TrainConfig { lr: 0.0, weight_decay: 0.1, ..quick(Scope::Full) };
    let out = train(&base, None, data, &cfg, &[]).unwrap();
    assert_eq!(out.model, base);
    let v0 = out.history.records[0].val_loss;
    assert!(out.history.records.iter().all(|r| r.val_loss == v0));
}

#[test]
fn runs_are_reproducible_and_clipped() {
    let base = Model::<f32>::new(ModelConfig { dropout: 0.1, ..cfg_model(12) }).unwrap();
    let train_set = random_pairs(40, 12, 1, true);
    let valid = random_pairs(8, 12, 2, true);
    let mon = [Monitor { name: "copy", pairs: &valid }];
    let data = TrainData {
        train: &train_set,
        valid: &valid,
        monitors: &mon,
        vocab: None,
    };
    let cfg = TrainConfig { clip_norm: 0.05, ..quick(Scope::Full) };
    let a = train(&base, None, data, &cfg, &[]).unwrap();
    let b = train(&base, None, data, &cfg, &[]).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history.records, b.history.records);
    assert!(a.max_clipped_norm <= cfg.clip_norm + 1e-6);
    assert!(a.history.records.iter().all(|r| r.metrics.contains_key("val_acc_copy")));
}

#[test]
fn early_stopping_honours_patience() {
    let base = Model::<f32>::new(cfg_model(12)).unwrap();
    // Random targets: validation loss soon stops improving.
    let train_set = random_pairs(64, 12, 1, false);
    let valid = random_pairs(16, 12, 2, false);
    let data = TrainData {
        train: &train_set,
        valid: &valid,
        monitors: &[],
        vocab: None,
    };
    let cfg = TrainConfig {
        lr: 3e-2,
        patience: 2,
        eval_every: 2,
        max_epochs: 30,
        ..quick(Scope::Full)
    };
    let out = train(&base, None, data, &cfg, &[]).unwrap();
    let recs = &out.history.records;
    let best_idx = recs.iter().position(|r| r.step == out.best_step).unwrap();
    assert!(recs.len() - 1 - best_idx <= cfg.patience);
    assert!(out.steps < 30 * 8, "should stop early, ran {} steps", out.steps);
    let best = out.history.best().unwrap();
    assert_eq!(best.step, out.best_step);
}

#[test]
fn inactive_regularisation_matches_plain_training() {
    let base = Model::<f32>::new(cfg_model(12)).unwrap();
    let a = LoRAAdapter::init(&base, &TargetSelector::attention(), 2, 0, "t").unwrap();
    let rec = TaskRecord::new(a.clone(), GradientImportance::uniform(&a, 1.0)).unwrap();
    let train_set = random_pairs(24, 12, 1, true);
    let valid = random_pairs(8, 12, 2, true);
    let data = TrainData {
        train: &train_set,
        valid: &valid,
        monitors: &[],
        vocab: None,
    };
    let plain = train(&base, Some(&a), data, &quick(Scope::Adapter), &[]).unwrap();
    let cfg = TrainConfig { reg: RegConfig::none(), ..quick(Scope::Adapter) };
    let none = train(&base, Some(&a), data, &cfg, std::slice::from_ref(&rec)).unwrap();
    assert_eq!(plain.adapter, none.adapter);
    assert_eq!(plain.history.records, none.history.records);
}

#[test]
fn non_finite_loss_is_divergence() {
    let mut base = Model::<f32>::new(cfg_model(12)).unwrap();
    base.param_mut("out.bias").unwrap().data_mut()[5] = f32::NAN;
    let train_set = random_pairs(8, 12, 1, true);
    let data = TrainData {
        train: &train_set,
        valid: &train_set,
        monitors: &[],
        vocab: None,
    };
    match train(&base, None, data, &quick(Scope::Full), &[]) {
        Err(Error::Divergence { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_errors() {
    let base = Model::<f32>::new(cfg_model(12)).unwrap();
    let p = random_pairs(4, 12, 1, true);
    let data = TrainData {
        train: &p,
        valid: &p,
        monitors: &[],
        vocab: None,
    };
    let bad = TrainConfig { patience: 0, ..TrainConfig::default() };
    assert!(matches!(train(&base, None, data, &bad, &[]), Err(Error::Config(_))));
    let bad = TrainConfig { clip_norm: 0.0, ..TrainConfig::default() };
    assert!(matches!(train(&base, None, data, &bad, &[]), Err(Error::Config(_))));
    assert!(matches!(
        train(&base, None, data, &quick(Scope::Adapter), &[]),
        Err(Error::Usage(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bleu_in_range_and_order_free(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["a", "b", "c", "d", "e"];
        let sent = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..rng.random_range(1..9)).map(|_| words[rng.random_range(0..5)].to_string()).collect()
        };
        let mut pairs: Vec<(Vec<String>, Vec<String>)> = (0..6).map(|_| (sent(&mut rng), sent(&mut rng))).collect();
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let s1 = bleu(&h, &r).unwrap().score;
        pairs.shuffle(&mut rng);
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let s2 = bleu(&h, &r).unwrap().score;
        prop_assert!((0.0..=100.0).contains(&s1));
        prop_assert!((s1 - s2).abs() < 1e-9);
    }
}
