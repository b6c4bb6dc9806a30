use std::cell::Cell;
use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::adapter::MergeDirection;
use crate::data::BOS;
use crate::model::{ModelConfig, TargetSelector};

fn tiny() -> Model<f32> {
    Model::new(ModelConfig {
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: 13,
        max_len: 10,
        dropout: 0.0,
        seed: 11,
        tied_embeddings: false,
        ln_eps: 1e-5,
    })
    .unwrap()
}

fn random_adapter(m: &Model<f32>, sel: &TargetSelector, seed: u64) -> LoRAAdapter<f32> {
    let mut a = LoRAAdapter::init(m, sel, 2, seed, &format!("a{seed}")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for f in a.entries_mut().values_mut() {
        f.y = Tensor::randn(f.y.shape().to_vec(), 0.5, &mut rng);
    }
    a
}

fn registry(m: &Model<f32>, n: u64) -> BTreeMap<String, LoRAAdapter<f32>> {
    let sels = [
        TargetSelector::attention(),
        TargetSelector::decoder_attention(),
        TargetSelector::new("*.ff.w?").unwrap(),
    ];
    (0..n)
        .map(|i| (format!("a{i}"), random_adapter(m, &sels[i as usize % 3], i)))
        .collect()
}

fn max_diff(a: &WeightOverrides<f32>, b: &WeightOverrides<f32>) -> f64 {
    assert_eq!(
        a.keys().collect::<std::collections::BTreeSet<_>>(),
        b.keys().collect::<std::collections::BTreeSet<_>>()
    );
    a.iter()
        .map(|(k, v)| v.max_abs_diff(&b[k]).unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn single_unit_component_equals_merge() {
    let m = tiny();
    let reg = registry(&m, 1);
    let w = compose(&m, &reg, &AdapterMixture::new(vec![MixtureComponent::new("a0", 1.0, 1.0)])).unwrap();
    let mut merged = m.clone();
    reg["a0"].merge_into(&mut merged, 1.0, MergeDirection::Apply).unwrap();
    assert_eq!(w.len(), reg["a0"].entries().len());
    for (k, v) in &w {
        assert!(v.bit_eq(merged.param(k).unwrap()), "{k}");
    }
}

#[test]
fn two_halves_equal_one_whole() {
    let m = tiny();
    let mut reg = registry(&m, 1);
    reg.insert("copy".into(), reg["a0"].clone());
    let halves = AdapterMixture::new(vec![
        MixtureComponent::new("a0", 1.0, 0.5),
        MixtureComponent::new("copy", 0.5, 1.0),
    ]);
    let whole = AdapterMixture::new(vec![MixtureComponent::new("a0", 1.0, 1.0)]);
    let d = max_diff(&compose(&m, &reg, &halves).unwrap(), &compose(&m, &reg, &whole).unwrap());
    assert!(d < 1e-6, "{d}");
}

#[test]
fn all_zero_alpha_is_base() {
    let m = tiny();
    let reg = registry(&m, 3);
    let mix = AdapterMixture::new(reg.keys().map(|k| MixtureComponent::new(k, 0.0, 1.0)).collect());
    let w = compose(&m, &reg, &mix).unwrap();
    assert!(w.is_empty());
    let base = m.logits(&[4, 5], &[BOS, 6], None).unwrap();
    assert!(m.logits(&[4, 5], &[BOS, 6], Some(&w)).unwrap().bit_eq(&base));
}

#[test]
fn errors() {
    let m = tiny();
    let reg = registry(&m, 1);
    let unknown = AdapterMixture::new(vec![MixtureComponent::new("zzz", 1.0, 1.0)]);
    assert!(matches!(compose(&m, &reg, &unknown), Err(Error::Lookup { .. })));
    let nan = AdapterMixture::new(vec![MixtureComponent::new("a0", f64::NAN, 1.0)]);
    assert!(matches!(compose(&m, &reg, &nan), Err(Error::Input(_))));
    let other = Model::<f32>::new(ModelConfig { d_model: 12, heads: 2, ..m.config().clone() }).unwrap();
    let ok = AdapterMixture::new(vec![MixtureComponent::new("a0", 1.0, 1.0)]);
    assert!(matches!(compose(&other, &reg, &ok), Err(Error::Compatibility(_))));
}

#[test]
fn hash_ignores_order_but_not_values() {
    let a = AdapterMixture::new(vec![MixtureComponent::new("x", 1.0, 0.5), MixtureComponent::new("y", -1.0, 1.0)]);
    let mut b = a.clone();
    b.components.reverse();
    assert_eq!(a.content_hash(), b.content_hash());
    b.components[0].alpha = 0.25;
    assert_ne!(a.content_hash(), b.content_hash());
}

#[test]
fn descriptor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("mix.json");
    let mix = AdapterMixture::new(vec![MixtureComponent::new("x.lora", 0.5, 2.0)]);
    mix.save_descriptor(&p).unwrap();
    assert_eq!(AdapterMixture::load_descriptor(&p).unwrap(), mix);
    std::fs::write(&p, r#"[{"id": "y", "alpha": 1, "lambda": -1}]"#).unwrap();
    assert_eq!(AdapterMixture::load_descriptor(&p).unwrap().components[0].adapter, "y");
}

#[test]
fn cache_reuses_deltas() {
    let m = tiny();
    let reg = registry(&m, 2);
    let mut cache = DeltaCache::new();
    let mix = AdapterMixture::new(vec![MixtureComponent::new("a0", 1.0, 1.0), MixtureComponent::new("a1", 0.3, 1.0)]);
    let first = cache.compose(&m, &reg, &mix).unwrap();
    let n = cache.len();
    assert_eq!(n, reg["a0"].entries().len() + reg["a1"].entries().len());
    let second = cache.compose(&m, &reg, &mix).unwrap();
    assert_eq!(cache.len(), n);
    assert_eq!(max_diff(&first, &second), 0.0);
    assert_eq!(max_diff(&first, &compose(&m, &reg, &mix).unwrap()), 0.0);
}

/// Distance-based score: domain `d` prefers `W + c_d·Δ_A`.
fn distance_score<'a>(m: &'a Model<f32>, good: &'a LoRAAdapter<f32>, c: f64) -> impl Fn(&WeightOverrides<f32>) -> f64 + 'a {
    move |w| {
        let mut s = 0.0;
        for name in good.targets() {
            let mut want = m.param(name).unwrap().clone();
            want.axpy(c as f32, &good.delta(name).unwrap()).unwrap();
            let have = w.get(name).unwrap_or(m.param(name).unwrap());
            s += want.sub(have).unwrap().sq_norm();
        }
        -s
    }
}

#[test]
fn calibration_drops_a_harmful_adapter() {
    let m = tiny();
    let good = random_adapter(&m, &TargetSelector::attention(), 3);
    let mut bad = good.clone();
    for f in bad.entries_mut().values_mut() {
        f.x = f.x.scale(-1.0);
    }
    let mut reg = BTreeMap::new();
    reg.insert("good".to_string(), good.clone());
    reg.insert("bad".to_string(), bad);
    let domains = [distance_score(&m, &good, 1.0), distance_score(&m, &good, 0.5)];
    let ids = vec!["good".to_string(), "bad".to_string()];
    let names = vec!["d1".to_string(), "d2".to_string()];
    let grid = [0.0, 1.0];
    let report = calibrate(&m, &reg, &ids, &names, &grid, |w, d| Ok(domains[d](w))).unwrap();
    assert_eq!(report.chosen[1], 0.0);
    // Exhaustive oracle over the full product grid.
    let mut best = (f64::NEG_INFINITY, vec![]);
    for &lg in &grid {
        for &lb in &grid {
            let mix = AdapterMixture::new(vec![
                MixtureComponent::new("good", 1.0, lg),
                MixtureComponent::new("bad", 1.0, lb),
            ]);
            let w = compose(&m, &reg, &mix).unwrap();
            let min = domains.iter().map(|f| f(&w)).fold(f64::INFINITY, f64::min);
            if min > best.0 {
                best = (min, vec![lg, lb]);
            }
        }
    }
    assert_eq!(report.chosen, best.1);
    assert!(report.chosen.iter().all(|l| grid.contains(l)));
}

#[test]
fn calibration_counts_and_trivial_grid() {
    let m = tiny();
    let reg = registry(&m, 2);
    let ids: Vec<String> = reg.keys().cloned().collect();
    let names = vec!["x".to_string(), "y".to_string()];
    let calls = Cell::new([0usize; 2]);
    let report = calibrate(&m, &reg, &ids, &names, &[0.5, 1.0], |_, d| {
        let mut c = calls.get();
        c[d] += 1;
        calls.set(c);
        Ok(d as f64)
    })
    .unwrap();
    assert_eq!(calls.get(), [4, 4]);
    assert_eq!(report.table.len(), 4);

    let one = vec![ids[0].clone()];
    let r = calibrate(&m, &reg, &one, &names[..1], &[1.0], |_, _| Ok(0.75)).unwrap();
    assert_eq!(r.chosen, vec![1.0]);
    assert_eq!(r.before, vec![0.75]);
    assert_eq!(r.after, r.before);
    assert!(matches!(
        calibrate(&m, &reg, &one, &names[..1], &[], |_, _| Ok(0.0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn alpha_sweep_zero_is_base_and_repeatable() {
    let m = tiny();
    let reg = registry(&m, 2);
    let mix = AdapterMixture::new(reg.keys().map(|k| MixtureComponent::new(k, 1.0, 1.0)).collect());
    let metric = |w: &WeightOverrides<f32>| -> Result<f64> {
        Ok(m.logits(&[4, 5, 6], &[BOS, 7], Some(w))?.data()[3] as f64)
    };
    let alphas = [0.0, 0.5, 1.0];
    let curve = sweep_alpha(&m, &reg, &mix, &alphas, metric).unwrap();
    let base = m.logits(&[4, 5, 6], &[BOS, 7], None).unwrap().data()[3] as f64;
    assert_eq!(curve[0].metric, base);
    assert_eq!(curve, sweep_alpha(&m, &reg, &mix, &alphas, metric).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn composition_is_order_independent(seed in 0u64..1000) {
        let m = tiny();
        let reg = registry(&m, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut comps: Vec<MixtureComponent> = reg
            .keys()
            .enumerate()
            .map(|(i, k)| MixtureComponent::new(k, 0.3 * i as f64 - 0.4, 1.0 + seed as f64 / 1000.0))
            .collect();
        let a = compose(&m, &reg, &AdapterMixture::new(comps.clone())).unwrap();
        comps.shuffle(&mut rng);
        let b = compose(&m, &reg, &AdapterMixture::new(comps)).unwrap();
        prop_assert!(max_diff(&a, &b) < 1e-6);
    }

    #[test]
    fn composition_is_linear(c in -2.0f64..2.0) {
        let m = tiny();
        let reg = registry(&m, 3);
        let comps: Vec<MixtureComponent> =
            reg.keys().enumerate().map(|(i, k)| MixtureComponent::new(k, 0.5 + i as f64, 0.7)).collect();
        let scaled: Vec<MixtureComponent> =
            comps.iter().map(|x| MixtureComponent::new(x.adapter.clone(), c * x.alpha, x.lambda)).collect();
        let w1 = compose(&m, &reg, &AdapterMixture::new(comps)).unwrap();
        let wc = compose(&m, &reg, &AdapterMixture::new(scaled)).unwrap();
        for (k, w) in &w1 {
            let base = m.param(k).unwrap();
            let expect = base.add(&w.sub(base).unwrap().scale(c as f32)).unwrap();
            let got = wc.get(k).cloned().unwrap_or_else(|| base.clone());
            prop_assert!(expect.max_abs_diff(&got).unwrap() < 1e-6);
        }
    }
}
