use crate::data::{make_batches, Batch, EncodedPair, Vocab, EOS, PAD};
use crate::error::Result;
use crate::model::{argmax, Binder, Model, WeightOverrides};
use crate::tensor::{Float, Tape};

use super::bleu::{bleu, BleuScore};

const EVAL_BATCH: usize = 64;

fn eval_batches(pairs: &[EncodedPair]) -> Vec<Batch> {
    make_batches(pairs, EVAL_BATCH, None)
}

/// Token-weighted mean cross-entropy under teacher forcing.
pub fn eval_loss<T: Float>(model: &Model<T>, pairs: &[EncodedPair], weights: Option<&WeightOverrides<T>>) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for b in eval_batches(pairs) {
        let mut tape = Tape::new();
        let mut binder = Binder::new(model).with_overrides(weights);
        let l = model.loss(&mut tape, &b, &mut binder)?;
        let n = b.target_tokens();
        total += tape.value(l).item().as_f64() * n as f64;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Fraction of non-pad target positions whose teacher-forced argmax equals
/// the reference token.
pub fn token_accuracy<T: Float>(
    model: &Model<T>,
    pairs: &[EncodedPair],
    weights: Option<&WeightOverrides<T>>,
) -> Result<f64> {
    let (mut hit, mut count) = (0usize, 0usize);
    let v = model.config().vocab_size;
    for b in eval_batches(pairs) {
        let mut tape = Tape::new();
        let mut binder = Binder::new(model).with_overrides(weights);
        let logits = model.forward(&mut tape, &b, &mut binder)?;
        let values = tape.value(logits).data();
        for (pos, &gold) in b.tgt_out.iter().enumerate() {
            if gold == PAD {
                continue;
            }
            count += 1;
            if argmax(&values[pos * v..(pos + 1) * v]) as u32 == gold {
                hit += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { hit as f64 / count as f64 })
}

/// Greedy translations of every source, as text.
pub fn translate_all<T: Float>(
    model: &Model<T>,
    vocab: &Vocab,
    sources: &[Vec<u32>],
    weights: Option<&WeightOverrides<T>>,
    max_len: usize,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(EVAL_BATCH) {
        for ids in model.greedy_decode(chunk, max_len, weights)? {
            let end = ids.iter().position(|&t| t == EOS).unwrap_or(ids.len());
            out.push(vocab.decode(&ids[..end]));
        }
    }
    Ok(out)
}

/// Corpus BLEU of greedy translations against the encoded references.
pub fn decode_bleu<T: Float>(
    model: &Model<T>,
    vocab: &Vocab,
    pairs: &[EncodedPair],
    weights: Option<&WeightOverrides<T>>,
) -> Result<BleuScore> {
    let sources: Vec<Vec<u32>> = pairs.iter().map(|p| p.src.clone()).collect();
    let hyps = translate_all(model, vocab, &sources, weights, model.config().max_len)?;
    let refs: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| {
            p.tgt[1..p.tgt.len() - 1]
                .iter()
                .map(|&t| vocab.token(t).to_string())
                .collect()
        })
        .collect();
    let hyps: Vec<Vec<String>> = hyps
        .iter()
        .map(|h| h.split_whitespace().map(str::to_string).collect())
        .collect();
    bleu(&hyps, &refs)
}
