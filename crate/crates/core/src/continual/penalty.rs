use serde::{Deserialize, Serialize};

use super::TaskRecord;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// Importance-weighted `Σ G ⊙ |Δ|^γ`.
    Gradient,
    /// Unit importance, γ = 2.
    L2,
    #[default]
    None,
}

impl std::fmt::Display for RegMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegMode::Gradient => "grad",
            RegMode::L2 => "l2",
            RegMode::None => "none",
        })
    }
}

impl std::str::FromStr for RegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" | "gradient" => Ok(RegMode::Gradient),
            "l2" => Ok(RegMode::L2),
            "none" => Ok(RegMode::None),
            other => Err(Error::Usage(format!("unknown regularisation mode `{other}` (grad, l2, none)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub mode: RegMode,
    #[serde(default)]
    pub lambda_reg: f64,
    #[serde(default = "two")]
    pub gamma: f64,
}

fn two() -> f64 {
    2.0
}

impl Default for RegConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl RegConfig {
    /// Builds a config, forcing γ = 2 for `l2` and λ = 0 for `none`.
    pub fn new(mode: RegMode, lambda_reg: f64, gamma: f64) -> Result<Self> {
        let cfg = match mode {
            RegMode::Gradient => Self { mode, lambda_reg, gamma },
            RegMode::L2 => Self { mode, lambda_reg, gamma: 2.0 },
            RegMode::None => Self::none(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        Self {
            mode: RegMode::None,
            lambda_reg: 0.0,
            gamma: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg.is_finite() && self.lambda_reg >= 0.0) {
            return Err(Error::config(format!("lambda_reg must be finite and ≥ 0, got {}", self.lambda_reg)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.mode == RegMode::L2 && self.gamma != 2.0 {
            return Err(Error::config("l2 mode requires gamma = 2"));
        }
        if self.mode == RegMode::None && self.lambda_reg != 0.0 {
            return Err(Error::config("mode none requires lambda_reg = 0"));
        }
        Ok(())
    }

    /// Whether the penalty contributes anything.
    pub fn is_active(&self) -> bool {
        self.mode != RegMode::None && self.lambda_reg > 0.0
    }
}

/// `λ · Σₙ Σ_targets [G_X,n ⊙ |X − Xₙ|^γ + G_Y,n ⊙ |Y − Yₙ|^γ]` on `tape`.
///
/// `factors` are the live `(target, X, Y)` variables. Under `l2` the
/// importance is taken as 1 everywhere; under `none`, or with no history,
/// the result is a constant zero.
pub fn reg_penalty<T: Float>(
    tape: &mut Tape<T>,
    factors: &[(String, Var, Var)],
    history: &[TaskRecord<T>],
    cfg: &RegConfig,
) -> Result<Var> {
    cfg.validate()?;
    if !cfg.is_active() || history.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let gamma = T::from_f64_lossy(cfg.gamma);
    let mut total: Option<Var> = None;
    for rec in history {
        for (name, x, y) in factors {
            let snap = rec.snapshot.entry(name).map_err(|_| {
                Error::Compatibility(format!("task {} has no snapshot for {name}", rec.task_name))
            })?;
            let imp = match cfg.mode {
                RegMode::Gradient => Some(rec.importance.entry(name).map_err(|_| {
                    Error::Compatibility(format!("task {} has no importance for {name}", rec.task_name))
                })?),
                _ => None,
            };
            for (live, past, g) in [
                (*x, &snap.x, imp.map(|i| &i.x)),
                (*y, &snap.y, imp.map(|i| &i.y)),
            ] {
                if tape.value(live).shape() != past.shape() {
                    return Err(Error::Compatibility(format!(
                        "{name}: live factor {:?} vs snapshot {:?} of task {}",
                        tape.value(live).shape(),
                        past.shape(),
                        rec.task_name
                    )));
                }
                let past = tape.constant(past.clone());
                let d = tape.sub(live, past)?;
                let mut term = tape.abs_pow(d, gamma)?;
                if let Some(g) = g {
                    let g = tape.constant(g.clone());
                    term = tape.mul(term, g)?;
                }
                let s = tape.sum(term);
                total = Some(match total {
                    Some(t) => tape.add(t, s)?,
                    None => s,
                });
            }
        }
    }
    let total = total.unwrap_or_else(|| tape.constant(Tensor::scalar(T::zero())));
    Ok(tape.scale(total, T::from_f64_lossy(cfg.lambda_reg)))
}

/// `L′ = L + penalty`.
pub fn regularized_step_loss<T: Float>(tape: &mut Tape<T>, task_loss: Var, penalty: Var) -> Result<Var> {
    tape.add(task_loss, penalty)
}
