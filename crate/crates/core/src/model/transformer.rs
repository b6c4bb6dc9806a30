use std::collections::HashMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, TargetSelector};
use crate::data::{Batch, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::tensor::{AttentionSpec, Float, Tape, Tensor, Var};

/// Replacement weights `W′` keyed by parameter name.
pub type WeightOverrides<T> = HashMap<String, Tensor<T>>;

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

/// Encoder-decoder transformer with named parameters.
///
/// Linear weights are stored `[in × out]` and applied as `x·W`, so a LoRA
/// delta `XYᵀ` with `X[p×r]`, `Y[q×r]` has the weight's own shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Float = f32> {
    config: ModelConfig,
    params: IndexMap<String, Tensor<T>>,
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, ff, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let resid = |fan_in: usize| {
        Init::Normal(1.0 / (fan_in as f64).sqrt() / (2.0 * cfg.layers as f64).sqrt())
    };
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let norm = |specs: &mut Vec<_>, name: &str| {
        specs.push((format!("{name}.gain"), vec![d], Init::Ones));
        specs.push((format!("{name}.bias"), vec![d], Init::Zeros));
    };
    let attn = |specs: &mut Vec<_>, pfx: &str| {
        for p in ["q", "k", "v", "o"] {
            let init = if p == "o" { resid(d) } else { lin(d) };
            specs.push((format!("{pfx}.{p}"), vec![d, d], init));
            specs.push((format!("{pfx}.{p}.bias"), vec![d], Init::Zeros));
        }
    };
    let ffn = |specs: &mut Vec<_>, pfx: &str| {
        specs.push((format!("{pfx}.w1"), vec![d, ff], lin(d)));
        specs.push((format!("{pfx}.w1.bias"), vec![ff], Init::Zeros));
        specs.push((format!("{pfx}.w2"), vec![ff, d], resid(ff)));
        specs.push((format!("{pfx}.w2.bias"), vec![d], Init::Zeros));
    };
    if cfg.tied_embeddings {
        specs.push(("embed.tok".into(), vec![v, d], Init::Normal(1.0)));
    } else {
        specs.push(("enc.embed".into(), vec![v, d], Init::Normal(1.0)));
        specs.push(("dec.embed".into(), vec![v, d], Init::Normal(1.0)));
    }
    specs.push(("enc.pos".into(), vec![cfg.max_len, d], Init::Normal(1.0)));
    specs.push(("dec.pos".into(), vec![cfg.max_len, d], Init::Normal(1.0)));
    for l in 0..cfg.layers {
        norm(&mut specs, &format!("enc.{l}.ln1"));
        attn(&mut specs, &format!("enc.{l}.attn"));
        norm(&mut specs, &format!("enc.{l}.ln2"));
        ffn(&mut specs, &format!("enc.{l}.ff"));
    }
    norm(&mut specs, "enc.ln_f");
    for l in 0..cfg.layers {
        norm(&mut specs, &format!("dec.{l}.ln1"));
        attn(&mut specs, &format!("dec.{l}.attn"));
        norm(&mut specs, &format!("dec.{l}.ln2"));
        attn(&mut specs, &format!("dec.{l}.cross"));
        norm(&mut specs, &format!("dec.{l}.ln3"));
        ffn(&mut specs, &format!("dec.{l}.ff"));
    }
    norm(&mut specs, "dec.ln_f");
    if !cfg.tied_embeddings {
        specs.push(("out.proj".into(), vec![d, v], lin(d)));
    }
    specs.push(("out.bias".into(), vec![v], Init::Zeros));
    specs
}

impl<T: Float> Model<T> {
    /// Deterministic initialisation from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = param_specs(&cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Normal(std) => Tensor::randn(shape, std, &mut rng),
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => Tensor::full(shape, T::one()),
                };
                (name, t)
            })
            .collect();
        Ok(Self {
            config: cfg,
            params,
        })
    }

    /// Assembles a model from loaded parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: IndexMap<String, Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if specs.len() != params.len() {
            return Err(Error::Compatibility(format!(
                "expected {} parameters, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &specs {
            let p = params
                .get(name)
                .ok_or_else(|| Error::lookup("parameter", name.clone()))?;
            if p.shape() != shape.as_slice() {
                return Err(Error::Compatibility(format!(
                    "parameter {name}: expected shape {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        let params = specs
            .iter()
            .map(|(n, _, _)| (n.clone(), params[n].clone()))
            .collect();
        Ok(Self {
            config: cfg,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::lookup("parameter", name))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::lookup("parameter", name))
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.values_mut()
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Scalar parameter count, optionally restricted to selected matrices.
    pub fn count_params(&self, sel: Option<&TargetSelector>) -> usize {
        self.params
            .iter()
            .filter(|(n, t)| sel.is_none_or(|s| s.selects(n, t.shape())))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Names of the 2-D parameters picked by `sel`, in model order.
    pub fn select(&self, sel: &TargetSelector) -> Vec<String> {
        self.params
            .iter()
            .filter(|(n, t)| sel.selects(n, t.shape()))
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Teacher-forced logits `[batch·tgt_len × vocab]`.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Batch, binder: &mut Binder<'_, T>) -> Result<Var> {
        self.check_batch(batch)?;
        let memory = self.encode(tape, batch.size, batch.src_len, &batch.src, binder)?;
        self.decode(tape, memory, batch, &batch.tgt_in, batch.tgt_len, binder)
    }

    /// Mean token cross-entropy of a batch.
    pub fn loss(&self, tape: &mut Tape<T>, batch: &Batch, binder: &mut Binder<'_, T>) -> Result<Var> {
        let logits = self.forward(tape, batch, binder)?;
        tape.cross_entropy(logits, &batch.tgt_out, PAD)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let v = self.config.vocab_size as u32;
        if let Some(&bad) = batch
            .src
            .iter()
            .chain(&batch.tgt_in)
            .chain(&batch.tgt_out)
            .find(|&&id| id >= v)
        {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {v}"
            )));
        }
        let max = self.config.max_len;
        if batch.src_len > max || batch.tgt_len > max {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_len {max}",
                batch.src_len.max(batch.tgt_len)
            )));
        }
        Ok(())
    }

    fn embed(
        &self,
        tape: &mut Tape<T>,
        side: &str,
        ids: &[u32],
        len: usize,
        binder: &mut Binder<'_, T>,
    ) -> Result<Var> {
        let table_name = if self.config.tied_embeddings {
            "embed.tok".to_string()
        } else {
            format!("{side}.embed")
        };
        let table = binder.bind(tape, &table_name)?;
        let tok = tape.embedding(table, ids)?;
        let pos_table = binder.bind(tape, &format!("{side}.pos"))?;
        let positions: Vec<u32> = (0..ids.len()).map(|i| (i % len) as u32).collect();
        let pos = tape.embedding(pos_table, &positions)?;
        let x = tape.add(tok, pos)?;
        Ok(binder.dropout(tape, x))
    }

    fn encode(
        &self,
        tape: &mut Tape<T>,
        batch: usize,
        src_len: usize,
        src: &[u32],
        binder: &mut Binder<'_, T>,
    ) -> Result<Var> {
        let key_valid: Vec<bool> = src.iter().map(|&t| t != PAD).collect();
        let mut x = self.embed(tape, "enc", src, src_len, binder)?;
        for l in 0..self.config.layers {
            let h = self.norm(tape, x, &format!("enc.{l}.ln1"), binder)?;
            let spec = AttentionSpec {
                batch,
                q_len: src_len,
                k_len: src_len,
                heads: self.config.heads,
                causal: false,
                key_valid: key_valid.clone(),
            };
            let a = self.attention(tape, h, h, &format!("enc.{l}.attn"), spec, binder)?;
            x = tape.add(x, a)?;
            let h = self.norm(tape, x, &format!("enc.{l}.ln2"), binder)?;
            let f = self.ffn(tape, h, &format!("enc.{l}.ff"), binder)?;
            x = tape.add(x, f)?;
        }
        self.norm(tape, x, "enc.ln_f", binder)
    }

    fn decode(
        &self,
        tape: &mut Tape<T>,
        memory: Var,
        batch: &Batch,
        tgt_in: &[u32],
        tgt_len: usize,
        binder: &mut Binder<'_, T>,
    ) -> Result<Var> {
        let self_valid: Vec<bool> = tgt_in.iter().map(|&t| t != PAD).collect();
        let src_valid: Vec<bool> = batch.src.iter().map(|&t| t != PAD).collect();
        let mut x = self.embed(tape, "dec", tgt_in, tgt_len, binder)?;
        for l in 0..self.config.layers {
            let h = self.norm(tape, x, &format!("dec.{l}.ln1"), binder)?;
            let spec = AttentionSpec {
                batch: batch.size,
                q_len: tgt_len,
                k_len: tgt_len,
                heads: self.config.heads,
                causal: true,
                key_valid: self_valid.clone(),
            };
            let a = self.attention(tape, h, h, &format!("dec.{l}.attn"), spec, binder)?;
            x = tape.add(x, a)?;
            let h = self.norm(tape, x, &format!("dec.{l}.ln2"), binder)?;
            let spec = AttentionSpec {
                batch: batch.size,
                q_len: tgt_len,
                k_len: batch.src_len,
                heads: self.config.heads,
                causal: false,
                key_valid: src_valid.clone(),
            };
            let c = self.attention(tape, h, memory, &format!("dec.{l}.cross"), spec, binder)?;
            x = tape.add(x, c)?;
            let h = self.norm(tape, x, &format!("dec.{l}.ln3"), binder)?;
            let f = self.ffn(tape, h, &format!("dec.{l}.ff"), binder)?;
            x = tape.add(x, f)?;
        }
        let h = self.norm(tape, x, "dec.ln_f", binder)?;
        let logits = if self.config.tied_embeddings {
            let table = binder.bind(tape, "embed.tok")?;
            tape.matmul_nt(h, table)?
        } else {
            binder.linear_nobias(tape, h, "out.proj")?
        };
        let bias = binder.bind(tape, "out.bias")?;
        tape.add_row(logits, bias)
    }

    fn norm(&self, tape: &mut Tape<T>, x: Var, name: &str, binder: &mut Binder<'_, T>) -> Result<Var> {
        let g = binder.bind(tape, &format!("{name}.gain"))?;
        let b = binder.bind(tape, &format!("{name}.bias"))?;
        tape.layer_norm(x, g, b, self.config.ln_eps)
    }

    fn attention(
        &self,
        tape: &mut Tape<T>,
        query_in: Var,
        kv_in: Var,
        pfx: &str,
        spec: AttentionSpec,
        binder: &mut Binder<'_, T>,
    ) -> Result<Var> {
        let q = binder.linear(tape, query_in, &format!("{pfx}.q"))?;
        let k = binder.linear(tape, kv_in, &format!("{pfx}.k"))?;
        let v = binder.linear(tape, kv_in, &format!("{pfx}.v"))?;
        let o = tape.attention(q, k, v, spec)?;
        let out = binder.linear(tape, o, &format!("{pfx}.o"))?;
        Ok(binder.dropout(tape, out))
    }

    fn ffn(&self, tape: &mut Tape<T>, x: Var, pfx: &str, binder: &mut Binder<'_, T>) -> Result<Var> {
        let h = binder.linear(tape, x, &format!("{pfx}.w1"))?;
        let h = tape.relu(h);
        let out = binder.linear(tape, h, &format!("{pfx}.w2"))?;
        Ok(binder.dropout(tape, out))
    }

    /// Teacher-forced logits `[tgt.len() × vocab]` for a single pair, where
    /// `tgt` is the decoder input (starting with bos).
    pub fn logits(&self, src: &[u32], tgt: &[u32], overrides: Option<&WeightOverrides<T>>) -> Result<Tensor<T>> {
        let pair = crate::data::EncodedPair {
            src: src.to_vec(),
            tgt: tgt.iter().copied().chain([EOS]).collect(),
        };
        let batch = Batch::from_pairs(&[&pair]);
        let mut tape = Tape::new();
        let mut binder = Binder::new(self).with_overrides(overrides);
        let out = self.forward(&mut tape, &batch, &mut binder)?;
        Ok(tape.value(out).clone())
    }

    /// Argmax decoding of each source until eos or `max_len` tokens.
    ///
    /// Returned sequences exclude bos and include the eos when one was emitted.
    pub fn greedy_decode(
        &self,
        sources: &[Vec<u32>],
        max_len: usize,
        overrides: Option<&WeightOverrides<T>>,
    ) -> Result<Vec<Vec<u32>>> {
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let max_len = max_len.min(self.config.max_len);
        let size = sources.len();
        let src_len = sources.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let mut src = vec![PAD; size * src_len];
        for (b, s) in sources.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Input("empty source sentence".into()));
            }
            src[b * src_len..][..s.len()].copy_from_slice(s);
        }
        let frame = Batch {
            size,
            src_len,
            tgt_len: 1,
            src,
            tgt_in: vec![BOS; size],
            tgt_out: vec![PAD; size],
        };
        self.check_batch(&frame)?;
        let mut tape = Tape::new();
        let mut binder = Binder::new(self).with_overrides(overrides);
        binder.bind_all(&mut tape)?;
        let memory = self.encode(&mut tape, size, src_len, &frame.src, &mut binder)?;
        let mark = tape.len();
        let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); size];
        let mut done = vec![false; size];
        let vocab = self.config.vocab_size;
        for step in 0..max_len {
            let t = step + 1;
            let mut tgt_in = vec![PAD; size * t];
            for b in 0..size {
                tgt_in[b * t] = BOS;
                for (i, &tok) in outputs[b].iter().enumerate() {
                    tgt_in[b * t + i + 1] = tok;
                }
            }
            let logits = self.decode(&mut tape, memory, &frame, &tgt_in, t, &mut binder)?;
            let values = tape.value(logits).data();
            for b in 0..size {
                if done[b] {
                    continue;
                }
                let row = &values[(b * t + t - 1) * vocab..][..vocab];
                let next = argmax(row) as u32;
                outputs[b].push(next);
                if next == EOS {
                    done[b] = true;
                }
            }
            tape.truncate(mark);
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(outputs)
    }
}

pub(crate) fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One low-rank factor pair applied on the fly: `x·W + c·(x·X)·Yᵀ`.
#[derive(Debug, Clone, Copy)]
pub struct DynamicFactor<T: Float> {
    pub x: Var,
    pub y: Var,
    pub coef: T,
}

/// Resolves parameter names to tape variables for one forward pass.
///
/// Base parameters are bound lazily as constants unless `trainable_base` is
/// set. An override map substitutes `W′` for named weights, and dynamic
/// factors add low-rank products without materialising `W′`.
pub struct Binder<'m, T: Float> {
    model: &'m Model<T>,
    overrides: Option<&'m WeightOverrides<T>>,
    trainable_base: bool,
    dynamic: HashMap<String, Vec<DynamicFactor<T>>>,
    vars: HashMap<String, Var>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'m, T: Float> Binder<'m, T> {
    pub fn new(model: &'m Model<T>) -> Self {
        Self {
            model,
            overrides: None,
            trainable_base: false,
            dynamic: HashMap::new(),
            vars: HashMap::new(),
            dropout: None,
        }
    }

    pub fn with_overrides(mut self, overrides: Option<&'m WeightOverrides<T>>) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn trainable(mut self, trainable: bool) -> Self {
        self.trainable_base = trainable;
        self
    }

    /// Enables dropout (training mode) with a seeded mask stream.
    pub fn with_dropout(mut self, p: f64, seed: u64) -> Self {
        if p > 0.0 {
            self.dropout = Some((p, ChaCha8Rng::seed_from_u64(seed)));
        }
        self
    }

    pub fn add_dynamic(&mut self, name: &str, factor: DynamicFactor<T>) {
        self.dynamic.entry(name.to_string()).or_default().push(factor);
    }

    /// Tape variables of the base parameters bound so far.
    pub fn bound(&self) -> &HashMap<String, Var> {
        &self.vars
    }

    /// Variable holding the effective weight of `name`. Dynamic factors are
    /// materialised as `W + Σ c·XYᵀ` here; linear layers avoid that product
    /// and apply the factors to activations instead.
    pub fn bind(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        let mut w = self.bind_base(tape, name)?;
        if let Some(factors) = self.dynamic.get(name) {
            for f in factors.clone() {
                let d = tape.matmul_nt(f.x, f.y)?;
                let d = if f.coef == T::one() { d } else { tape.scale(d, f.coef) };
                w = tape.add(w, d)?;
            }
        }
        Ok(w)
    }

    fn bind_base(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let base = self.model.param(name)?;
        let v = match self.overrides.and_then(|o| o.get(name)) {
            Some(w) => {
                if w.shape() != base.shape() {
                    return Err(Error::Compatibility(format!(
                        "override for {name}: shape {:?} vs base {:?}",
                        w.shape(),
                        base.shape()
                    )));
                }
                tape.constant(w.clone())
            }
            None if self.trainable_base => tape.param(base.clone()),
            None => tape.constant(base.clone()),
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bind_all(&mut self, tape: &mut Tape<T>) -> Result<()> {
        let names: Vec<String> = self.model.params.keys().cloned().collect();
        for n in names {
            self.bind_base(tape, &n)?;
        }
        Ok(())
    }

    fn linear_nobias(&mut self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let w = self.bind_base(tape, name)?;
        let mut y = tape.matmul(x, w)?;
        if let Some(factors) = self.dynamic.get(name) {
            for f in factors.clone() {
                let xa = tape.matmul(x, f.x)?;
                let delta = tape.matmul_nt(xa, f.y)?;
                let delta = if f.coef == T::one() {
                    delta
                } else {
                    tape.scale(delta, f.coef)
                };
                y = tape.add(y, delta)?;
            }
        }
        Ok(y)
    }

    fn linear(&mut self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let y = self.linear_nobias(tape, x, name)?;
        let b = self.bind(tape, &format!("{name}.bias"))?;
        tape.add_row(y, b)
    }

    fn dropout(&mut self, tape: &mut Tape<T>, x: Var) -> Var {
        match &mut self.dropout {
            Some((p, rng)) => tape.dropout(x, *p, rng),
            None => x,
        }
    }
}
