use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use loramix_core::adapter::LoRAAdapter;
use loramix_core::mole::{compose, AdapterMixture, MixtureComponent};
use loramix_core::model::{Model, ModelConfig, TargetSelector};
use loramix_service::fixtures::{self, random_state};
use loramix_service::{ServiceOptions, ServiceState};

const PROBES: [&str; 4] = ["w1 w2 w3", "w4 w4 w9 w0", "w15 w3", "w7 w8 w9 w10 w11"];

fn state(n: usize) -> ServiceState {
    random_state(n, 4, ServiceOptions::default()).unwrap()
}

fn mix(parts: &[(&str, f64, f64)]) -> Vec<MixtureComponent> {
    parts.iter().map(|&(id, a, l)| MixtureComponent::new(id, a, l)).collect()
}

/// Translation computed without the service: compose, then greedy decode.
fn direct(s: &ServiceState, components: &[MixtureComponent], text: &str) -> String {
    let registry: HashMap<String, LoRAAdapter<f32>> = (0..3)
        .map(|i| {
            let base = s.base();
            let a = fixtures::random_adapter(base, &format!("task{i}"), 4, 0.3, i as u64 + 1).unwrap();
            (format!("a{i}"), a)
        })
        .collect();
    let w = compose(s.base(), &registry, &AdapterMixture::new(components.to_vec())).unwrap();
    let src = s.vocab().encode_source(text);
    let ids = s.base().greedy_decode(&[src], 12, Some(&w)).unwrap();
    s.vocab().decode(&ids[0])
}

#[test]
fn registry_listing() {
    assert!(state(0).adapters().is_empty());
    let s = state(2);
    let list = s.adapters();
    assert_eq!(list.len(), 2);
    let sel = TargetSelector::new(fixtures::TARGETS).unwrap();
    let expected: usize = s
        .base()
        .select(&sel)
        .iter()
        .map(|n| {
            let shape = s.base().param(n).unwrap().shape().to_vec();
            4 * (shape[0] + shape[1])
        })
        .sum();
    for a in &list {
        assert_eq!(a.rank, 4);
        assert_eq!(a.param_count, expected);
        assert_eq!(a.default_lambda, 1.0);
    }
    assert_eq!(list.iter().map(|a| a.id.as_str()).collect::<Vec<_>>(), ["a0", "a1"]);
    assert_eq!(s.adapters(), list);
}

#[test]
fn set_then_get_echoes_and_hash_is_order_free() {
    let s = state(2);
    let c = mix(&[("a1", 0.5, 1.0), ("a0", -0.25, 2.0)]);
    let put = s.set_mixture(c.clone()).unwrap();
    assert_eq!(put.components, c);
    assert_eq!(put.mixture_hash, put.active_hash);
    assert_eq!(put.mixture_hash, AdapterMixture::new(c.clone()).content_hash());
    let got = s.mixture();
    assert_eq!(got.components, c);
    assert_eq!(got.mixture_hash, put.mixture_hash);

    let reordered = s.set_mixture(vec![c[1].clone(), c[0].clone()]).unwrap();
    assert_eq!(reordered.mixture_hash, put.mixture_hash);
}

#[test]
fn empty_and_zero_alpha_mixtures_match_the_base() {
    let s = state(3);
    let base_out: Vec<String> = PROBES.iter().map(|p| s.translate(p, None).unwrap().translation).collect();
    for (p, b) in PROBES.iter().zip(&base_out) {
        assert_eq!(*b, direct(&s, &[], p));
    }
    s.set_mixture(mix(&[("a0", 1.0, 1.0), ("a2", 0.7, 1.0)])).unwrap();
    let mixed: Vec<String> = PROBES.iter().map(|p| s.translate(p, None).unwrap().translation).collect();
    assert_ne!(mixed, base_out, "random adapters should change at least one probe");

    s.set_mixture(mix(&[("a0", 0.0, 1.0), ("a1", 0.0, 3.0), ("a2", 0.0, 1.0)])).unwrap();
    for (p, b) in PROBES.iter().zip(&base_out) {
        assert_eq!(s.translate(p, None).unwrap().translation, *b);
    }
    s.set_mixture(Vec::new()).unwrap();
    for (p, b) in PROBES.iter().zip(&base_out) {
        assert_eq!(s.translate(p, None).unwrap().translation, *b);
    }
}

#[test]
fn translation_is_deterministic_and_matches_direct_decoding() {
    let s = state(3);
    let c = mix(&[("a0", 0.8, 1.0), ("a1", -0.4, 1.0)]);
    s.set_mixture(c.clone()).unwrap();
    for p in PROBES {
        let first = s.translate(p, None).unwrap();
        let second = s.translate(p, None).unwrap();
        assert_eq!(first.translation, second.translation);
        assert_eq!(first.mixture_hash, second.mixture_hash);
        assert_eq!(first.translation, direct(&s, &c, p));
        assert!(first.latency_ms >= 0.0);
    }
}

#[test]
fn override_uses_its_mixture_and_leaves_active_alone() {
    let s = state(3);
    let active = mix(&[("a2", 1.0, 1.0)]);
    let put = s.set_mixture(active).unwrap();
    let other = mix(&[("a0", 1.0, 1.0), ("a1", 0.5, 1.0)]);
    for p in PROBES {
        let r = s.translate(p, Some(&other)).unwrap();
        assert_eq!(r.translation, direct(&s, &other, p));
        assert_eq!(r.mixture_hash, AdapterMixture::new(other.clone()).content_hash());
    }
    assert_eq!(s.mixture().mixture_hash, put.mixture_hash);
    assert_eq!(s.translate(PROBES[0], None).unwrap().mixture_hash, put.mixture_hash);
}

#[test]
fn errors_leave_the_active_mixture_unchanged() {
    let s = state(2);
    let good = s.set_mixture(mix(&[("a0", 1.0, 1.0)])).unwrap();

    let e = s.set_mixture(mix(&[("a0", 1.0, 1.0), ("nope", 1.0, 1.0)])).unwrap_err();
    assert_eq!(e.status, StatusCode::NOT_FOUND);
    for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
        let e = s.set_mixture(mix(&[("a1", bad, 1.0)])).unwrap_err();
        assert_eq!(e.status, StatusCode::UNPROCESSABLE_ENTITY);
        let e = s.set_mixture(mix(&[("a1", 1.0, bad)])).unwrap_err();
        assert_eq!(e.status, StatusCode::UNPROCESSABLE_ENTITY);
    }
    assert_eq!(s.mixture().mixture_hash, good.mixture_hash);

    for empty in ["", "   ", "\t\n"] {
        assert_eq!(s.translate(empty, None).unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let e = s.translate("w1", Some(&mix(&[("ghost", 1.0, 1.0)]))).unwrap_err();
    assert_eq!(e.status, StatusCode::NOT_FOUND);
    assert_eq!(e.problem().status, 404);
    assert_eq!(s.counters().recompositions, 1);
}

#[test]
fn concurrent_puts_end_in_exactly_one_of_them() {
    let m1 = mix(&[("a0", 1.0, 1.0)]);
    let m2 = mix(&[("a1", -1.0, 0.5), ("a2", 0.3, 1.0)]);
    let h1 = AdapterMixture::new(m1.clone()).content_hash();
    let h2 = AdapterMixture::new(m2.clone()).content_hash();
    for _ in 0..50 {
        let s = Arc::new(state(3));
        let handles: Vec<_> = [m1.clone(), m2.clone()]
            .into_iter()
            .map(|m| {
                let s = s.clone();
                std::thread::spawn(move || s.set_mixture(m).unwrap())
            })
            .collect();
        for h in handles {
            let r = h.join().unwrap();
            assert!([&h1, &h2].contains(&&r.active_hash));
        }
        let fin = s.active();
        let expected = if fin.hash == h1 { &m1 } else { &m2 };
        assert!(fin.hash == h1 || fin.hash == h2);
        assert_eq!(&fin.mixture.components, expected);
        assert_eq!(s.translate(PROBES[3], None).unwrap().translation, direct(&s, expected, PROBES[3]));
    }
}

#[test]
fn interleaved_requests_never_see_a_torn_state() {
    let s = Arc::new(state(3));
    let candidates: Vec<Vec<MixtureComponent>> = (0..6)
        .map(|k| {
            let t = k as f64 / 5.0;
            mix(&[("a0", 1.0 - t, 1.0), ("a1", t, 1.0), ("a2", (k % 2) as f64, 0.5)])
        })
        .collect();
    let mut expected: HashMap<String, Vec<String>> = HashMap::new();
    expected.insert(AdapterMixture::default().content_hash(), PROBES.iter().map(|p| direct(&s, &[], p)).collect());
    for c in &candidates {
        let h = AdapterMixture::new(c.clone()).content_hash();
        expected.insert(h, PROBES.iter().map(|p| direct(&s, c, p)).collect());
    }
    let expected = Arc::new(expected);

    let writers: Vec<_> = (0..2)
        .map(|w| {
            let (s, candidates) = (s.clone(), candidates.clone());
            std::thread::spawn(move || {
                for i in 0..40 {
                    s.set_mixture(candidates[(i * 7 + w) % candidates.len()].clone()).unwrap();
                }
            })
        })
        .collect();
    let readers: Vec<_> = (0..4)
        .map(|r| {
            let (s, expected) = (s.clone(), expected.clone());
            std::thread::spawn(move || {
                for i in 0..60 {
                    let k = (i + r) % PROBES.len();
                    let out = s.translate(PROBES[k], None).unwrap();
                    let table = expected.get(&out.mixture_hash).expect("hash of a submitted mixture");
                    assert_eq!(out.translation, table[k], "hash {} served another state", out.mixture_hash);
                }
            })
        })
        .collect();
    for h in writers.into_iter().chain(readers) {
        h.join().unwrap();
    }
    let c = s.counters();
    assert_eq!(c.mixture_updates, 80);
    assert!(c.recompositions <= c.mixture_updates);
}

#[test]
fn bursts_are_coalesced_and_settle_on_a_submitted_mixture() {
    let s = Arc::new(state(3));
    let submitted: Vec<Vec<MixtureComponent>> = (0..64).map(|i| mix(&[("a0", i as f64 / 64.0, 1.0)])).collect();
    let hashes: Vec<String> = submitted.iter().map(|c| AdapterMixture::new(c.clone()).content_hash()).collect();
    let handles: Vec<_> = submitted
        .chunks(8)
        .map(|chunk| {
            let (s, chunk) = (s.clone(), chunk.to_vec());
            std::thread::spawn(move || chunk.into_iter().map(|c| s.set_mixture(c).unwrap()).collect::<Vec<_>>())
        })
        .collect();
    for h in handles {
        for r in h.join().unwrap() {
            assert!(hashes.contains(&r.active_hash));
        }
    }
    let c = s.counters();
    assert_eq!(c.mixture_updates, 64);
    assert!(c.recompositions <= 64);
    assert!(hashes.contains(&s.active().hash));
}

#[test]
fn recomposition_of_four_rank_64_adapters_is_interactive() {
    // Full-sized base (3 layers, d=256); every attention and feed-forward
    // matrix is a target.
    let base = Model::<f32>::new(ModelConfig {
        layers: 3,
        heads: 4,
        d_model: 256,
        d_ff: 512,
        vocab_size: fixtures::vocab().len(),
        max_len: 12,
        dropout: 0.0,
        seed: 3,
        tied_embeddings: false,
        ln_eps: 1e-5,
    })
    .unwrap();
    let sel = TargetSelector::new("*.attn.?|*.cross.?|*.ff.w?").unwrap();
    let adapters: Vec<_> = (0..4)
        .map(|i| (format!("a{i}"), fixtures::random_adapter_on(&base, &sel, "t", 64, 0.05, i).unwrap()))
        .collect();
    let s = ServiceState::new(base, fixtures::vocab(), adapters, ServiceOptions::default()).unwrap();
    let mut times = Vec::new();
    for step in 0..21 {
        let a = step as f64 / 20.0;
        let c = mix(&[("a0", a, 1.0), ("a1", 1.0 - a, 1.0), ("a2", 0.5, 1.0), ("a3", -a, 1.0)]);
        let t = Instant::now();
        s.set_mixture(c).unwrap();
        times.push(t.elapsed());
    }
    times.sort();
    let median = times[times.len() / 2];
    assert!(median < Duration::from_millis(100), "median recomposition {median:?}");
}

#[test]
fn stale_reads_past_the_deadline_get_503() {
    let opts = ServiceOptions {
        staleness_deadline: Duration::ZERO,
        ..ServiceOptions::default()
    };
    let s = Arc::new(random_state(3, 8, opts).unwrap());
    let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let writer = {
        let (s, stop) = (s.clone(), stop.clone());
        std::thread::spawn(move || {
            let mut i = 0u64;
            while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                s.set_mixture(mix(&[("a0", i as f64, 1.0), ("a1", 1.0, 1.0), ("a2", -1.0, 1.0)])).unwrap();
                i += 1;
            }
        })
    };
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut saw_503 = false;
    while Instant::now() < deadline {
        match s.translate("w1 w2", None) {
            Ok(_) => {}
            Err(e) => {
                assert_eq!(e.status, StatusCode::SERVICE_UNAVAILABLE);
                assert_eq!(e.retry_after_secs, Some(1));
                saw_503 = true;
                break;
            }
        }
    }
    stop.store(true, std::sync::atomic::Ordering::Relaxed);
    writer.join().unwrap();
    assert!(saw_503, "no translation overlapped a recomposition in 20 s");
    // Once nothing is recomposing, reads succeed again.
    assert!(s.translate("w1 w2", None).is_ok());
}

#[test]
fn adapters_for_another_base_are_rejected() {
    let base = fixtures::base_model(7);
    let mut a = fixtures::random_adapter(&base, "t", 2, 0.1, 1).unwrap();
    a.provenance.base_hash = Some("not-this-base".into());
    let err = ServiceState::new(base, fixtures::vocab(), [("x".to_string(), a)], ServiceOptions::default()).unwrap_err();
    assert!(err.to_string().contains("not-this-base"));

    let other = fixtures::base_model(9);
    let wide = Model::<f32>::new(ModelConfig {
        d_model: 64,
        d_ff: 128,
        ..other.config().clone()
    })
    .unwrap();
    let a = fixtures::random_adapter(&wide, "t", 2, 0.1, 1).unwrap();
    assert!(ServiceState::new(other, fixtures::vocab(), [("x".to_string(), a)], ServiceOptions::default()).is_err());
}
