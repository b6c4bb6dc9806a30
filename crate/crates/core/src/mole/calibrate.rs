use serde::{Deserialize, Serialize};

use super::{AdapterMixture, AdapterSource, DeltaCache, MixtureComponent};
use crate::error::{Error, Result};
use crate::model::{Model, WeightOverrides};
use crate::tensor::Float;

/// One evaluated grid point: adapter `adapter` set to `lambda`, others at
/// their current values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub adapter: String,
    pub lambdas: Vec<f64>,
    pub scores: Vec<f64>,
    pub min_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub adapters: Vec<String>,
    pub domains: Vec<String>,
    pub grid: Vec<f64>,
    pub chosen: Vec<f64>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub table: Vec<CalibrationRow>,
}

impl CalibrationReport {
    /// Mixture with α = 1 and the calibrated λ for every adapter.
    pub fn mixture(&self) -> AdapterMixture {
        AdapterMixture::new(
            self.adapters
                .iter()
                .zip(&self.chosen)
                .map(|(a, &l)| MixtureComponent::new(a.clone(), 1.0, l))
                .collect(),
        )
    }
}

fn nearest(grid: &[f64], v: f64) -> f64 {
    grid.iter()
        .copied()
        .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
        .expect("non-empty grid")
}

/// Coordinate-wise maximin search for per-adapter λ.
///
/// Each adapter starts at the grid value nearest its `default_lambda`. One
/// pass visits the adapters in order and, holding the others fixed, picks
/// the grid value that maximises the worst per-domain score (ties go to the
/// earlier grid value). That is `adapters × grid` evaluations of every
/// domain. `score(weights, d)` evaluates domain `d` under effective weights.
pub fn calibrate<T, S, F>(
    model: &Model<T>,
    source: &S,
    adapters: &[String],
    domains: &[String],
    grid: &[f64],
    mut score: F,
) -> Result<CalibrationReport>
where
    T: Float,
    S: AdapterSource<T>,
    F: FnMut(&WeightOverrides<T>, usize) -> Result<f64>,
{
    if adapters.is_empty() || domains.is_empty() || grid.is_empty() {
        return Err(Error::config("calibration needs adapters, domains and a non-empty grid"));
    }
    if let Some(bad) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::config(format!("non-finite grid value {bad}")));
    }
    let mut lambdas = Vec::with_capacity(adapters.len());
    for id in adapters {
        let a = source
            .adapter(id)
            .ok_or_else(|| Error::lookup("adapter", id.clone()))?;
        lambdas.push(nearest(grid, a.default_lambda));
    }
    let initial = lambdas.clone();
    let mut cache = DeltaCache::new();
    let mut table = Vec::with_capacity(adapters.len() * grid.len());
    let mut before = None;
    let mut after = Vec::new();
    for (i, id) in adapters.iter().enumerate() {
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for &l in grid {
            lambdas[i] = l;
            let mix = AdapterMixture::new(
                adapters
                    .iter()
                    .zip(&lambdas)
                    .map(|(a, &lam)| MixtureComponent::new(a.clone(), 1.0, lam))
                    .collect(),
            );
            let w = cache.compose(model, source, &mix)?;
            let scores = (0..domains.len())
                .map(|d| score(&w, d))
                .collect::<Result<Vec<f64>>>()?;
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            if i == 0 && lambdas == initial {
                before = Some(scores.clone());
            }
            table.push(CalibrationRow {
                adapter: id.clone(),
                lambdas: lambdas.clone(),
                scores: scores.clone(),
                min_score: min,
            });
            if best.as_ref().is_none_or(|(m, _, _)| min > *m) {
                best = Some((min, l, scores));
            }
        }
        let (_, l, scores) = best.expect("non-empty grid");
        lambdas[i] = l;
        after = scores;
    }
    Ok(CalibrationReport {
        adapters: adapters.to_vec(),
        domains: domains.to_vec(),
        grid: grid.to_vec(),
        chosen: lambdas,
        before: before.expect("initial λ lies on the grid"),
        after,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alphas: Vec<f64>,
    pub metric: f64,
}

/// Evaluates `metric` with every component's α replaced by each entry of
/// `alphas` in turn.
pub fn sweep_alpha<T, S, F>(
    model: &Model<T>,
    source: &S,
    mix: &AdapterMixture,
    alphas: &[f64],
    metric: F,
) -> Result<Vec<AlphaPoint>>
where
    T: Float,
    S: AdapterSource<T>,
    F: FnMut(&WeightOverrides<T>) -> Result<f64>,
{
    let vectors: Vec<Vec<f64>> = alphas.iter().map(|&a| vec![a; mix.components.len()]).collect();
    sweep_alpha_vectors(model, source, mix, &vectors, metric)
}

/// Like [`sweep_alpha`] with one α per component at each point.
pub fn sweep_alpha_vectors<T, S, F>(
    model: &Model<T>,
    source: &S,
    mix: &AdapterMixture,
    points: &[Vec<f64>],
    mut metric: F,
) -> Result<Vec<AlphaPoint>>
where
    T: Float,
    S: AdapterSource<T>,
    F: FnMut(&WeightOverrides<T>) -> Result<f64>,
{
    let mut cache = DeltaCache::new();
    points
        .iter()
        .map(|alphas| {
            if alphas.len() != mix.components.len() {
                return Err(Error::config(format!(
                    "{} alphas for {} components",
                    alphas.len(),
                    mix.components.len()
                )));
            }
            let mut m = mix.clone();
            for (c, &a) in m.components.iter_mut().zip(alphas) {
                c.alpha = a;
            }
            let w = cache.compose(model, source, &m)?;
            Ok(AlphaPoint {
                alphas: alphas.clone(),
                metric: metric(&w)?,
            })
        })
        .collect()
}
