use serde::{Deserialize, Serialize};

use super::{RegConfig, RegMode};
use crate::error::{Error, Result};

/// `2ab / (a + b)`, zero when both are zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda_reg: f64,
    pub gamma: f64,
    /// `None` when the run diverged.
    pub old_score: Option<f64>,
    pub new_score: Option<f64>,
    pub harmonic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub mode: RegMode,
    pub selected: RegConfig,
    pub selected_index: usize,
    pub cells: Vec<GridCell>,
}

/// Runs `adapt` for every `(λ, γ)` cell and picks the one with the best
/// harmonic mean of (old-task, new-task) scores. Ties go to the larger λ
/// (prefer stability). Divergent cells are kept in the table but never
/// selected.
pub fn grid_search_reg<F>(mode: RegMode, lambdas: &[f64], gammas: &[f64], mut adapt: F) -> Result<GridReport>
where
    F: FnMut(RegConfig, usize) -> Result<(f64, f64)>,
{
    if lambdas.is_empty() || gammas.is_empty() {
        return Err(Error::config("regularisation grid must be non-empty"));
    }
    // γ is meaningless without a penalty, so `none` gets a single control cell.
    let gammas: Vec<f64> = match mode {
        RegMode::L2 | RegMode::None => vec![2.0],
        RegMode::Gradient => gammas.to_vec(),
    };
    let lambdas: Vec<f64> = match mode {
        RegMode::None => vec![0.0],
        _ => lambdas.to_vec(),
    };
    let mut cells = Vec::new();
    let mut configs = Vec::new();
    for &l in &lambdas {
        for &g in &gammas {
            let cfg = if l == 0.0 {
                RegConfig { mode, lambda_reg: 0.0, gamma: g }
            } else {
                RegConfig::new(mode, l, g)?
            };
            let idx = cells.len();
            let cell = match adapt(cfg, idx) {
                Ok((old, new)) if old.is_finite() && new.is_finite() => GridCell {
                    lambda_reg: l,
                    gamma: g,
                    old_score: Some(old),
                    new_score: Some(new),
                    harmonic: Some(harmonic_mean(old, new)),
                    failure: None,
                },
                Ok((old, new)) => GridCell {
                    lambda_reg: l,
                    gamma: g,
                    old_score: None,
                    new_score: None,
                    harmonic: None,
                    failure: Some(format!("non-finite scores ({old}, {new})")),
                },
                Err(e @ Error::Divergence { .. }) => GridCell {
                    lambda_reg: l,
                    gamma: g,
                    old_score: None,
                    new_score: None,
                    harmonic: None,
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            cells.push(cell);
            configs.push(cfg);
        }
    }
    let selected_index = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.harmonic.map(|h| (i, h, c.lambda_reg)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(a.2.total_cmp(&b.2)))
        .map(|(i, _, _)| i)
        .ok_or_else(|| Error::Config("every grid cell diverged".into()))?;
    Ok(GridReport {
        mode,
        selected: configs[selected_index],
        selected_index,
        cells,
    })
}
