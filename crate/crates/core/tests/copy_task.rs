use std::time::Instant;

use loramix_core::data::{encode_corpus, gen_synthetic, SplitSizes, SyntheticTaskSpec, TaskKind, Vocab};
use loramix_core::model::{Model, ModelConfig};
use loramix_core::train::{token_accuracy, train, translate_all, Monitor, TrainConfig, TrainData};

#[test]
fn one_layer_model_learns_to_copy() {
    let spec = SyntheticTaskSpec {
        name: "copy".into(),
        kind: TaskKind::Copy,
        vocab_size: 16,
        min_len: 3,
        max_len: 10,
        sizes: SplitSizes {
            train: 1800,
            valid: 100,
            test: 100,
        },
        seed: 1,
        permutation_seed: None,
        focus: None,
        background: None,
        style: None,
        remap: None,
    };
    let corpora = gen_synthetic(&spec).unwrap();
    let (vocab, _) = Vocab::build(&[&corpora.train, &corpora.valid, &corpora.test], None).unwrap();
    assert_eq!(vocab.len(), 20);
    let train_set = encode_corpus(&corpora.train, &vocab, 12);
    let valid = encode_corpus(&corpora.valid, &vocab, 12);
    let test = encode_corpus(&corpora.test, &vocab, 12);

    let model = Model::<f32>::new(ModelConfig {
        layers: 1,
        heads: 4,
        d_model: 32,
        d_ff: 64,
        vocab_size: vocab.len(),
        max_len: 12,
        dropout: 0.0,
        seed: 0,
        tied_embeddings: false,
        ln_eps: 1e-5,
    })
    .unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        warmup_steps: 50,
        weight_decay: 0.0,
        max_epochs: 10,
        patience: 3,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let monitors = [Monitor {
        name: "copy",
        pairs: &valid,
    }];
    let out = train(
        &model,
        None,
        TrainData {
            train: &train_set,
            valid: &valid,
            monitors: &monitors,
            vocab: None,
        },
        &cfg,
        &[],
    )
    .unwrap();
    assert!(start.elapsed().as_secs() < 300, "took {:?}", start.elapsed());

    let acc = token_accuracy(&out.model, &test, None).unwrap();
    assert!(acc >= 0.95, "held-out token accuracy {acc}");

    let sources: Vec<Vec<u32>> = test.iter().map(|p| p.src.clone()).collect();
    let hyps = translate_all(&out.model, &vocab, &sources, None, 12).unwrap();
    let exact = hyps
        .iter()
        .zip(corpora.test.pairs())
        .filter(|(h, (src, _))| h.as_str() == src.as_str())
        .count();
    assert!(exact * 100 >= 95 * hyps.len(), "{exact}/{} sequences copied exactly", hyps.len());
}
