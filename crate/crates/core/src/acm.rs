//! Adaptive correction: offset score → correction weight → blended activation,
//! plus the reuse policies the adaptive rule is compared against.

use crate::error::{Error, Result};
use crate::numerics::{clip_unit, Tensor3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Score-driven continuous blend.
    Adaptive,
    /// Reuse unless the step index is a multiple of `interval`.
    StaticInterval,
    /// Reuse when the raw score is at most `binary_threshold`, otherwise recompute.
    BinaryThreshold,
    FullRecompute,
    /// Reuse whenever a cache entry exists.
    PureReuse,
}

/// How the adaptive policy spends compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecutionMode {
    /// Always run the block, then interpolate. Saves nothing; isolates the quality effect.
    Faithful,
    /// Skip the block outright when the weight is at or below `skip_threshold`.
    Economic,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_lambda_spatial() -> f64 {
    1.0
}
fn default_skip_threshold() -> f64 {
    0.05
}
fn default_interval() -> usize {
    2
}
fn default_binary_threshold() -> f64 {
    1.0
}
fn default_tau_max() -> usize {
    4
}
fn default_mode() -> ExecutionMode {
    ExecutionMode::Faithful
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Sensitivity γ.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Weight of the spatial term in the offset score.
    #[serde(default = "default_lambda_spatial")]
    pub lambda_spatial: f64,
    /// Economic mode reuses when the weight is `<=` this.
    #[serde(default = "default_skip_threshold")]
    pub skip_threshold: f64,
    /// `N` for [`PolicyKind::StaticInterval`].
    #[serde(default = "default_interval")]
    pub interval: usize,
    /// `θ` for [`PolicyKind::BinaryThreshold`].
    #[serde(default = "default_binary_threshold")]
    pub binary_threshold: f64,
    /// Entries older than this many sampling steps are treated as missing.
    #[serde(default = "default_tau_max")]
    pub tau_max: usize,
    #[serde(default = "default_mode")]
    pub mode: ExecutionMode,
    #[serde(default = "default_true")]
    pub normalize_scores: bool,
    /// Force a full recompute on every step whose index is a multiple of `R`.
    #[serde(default)]
    pub refresh_interval: Option<usize>,
    /// Cache-eligible layers; `None` means every layer except the first and last.
    #[serde(default)]
    pub eligible_layers: Option<Vec<usize>>,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            gamma: default_gamma(),
            lambda_spatial: default_lambda_spatial(),
            skip_threshold: default_skip_threshold(),
            interval: default_interval(),
            binary_threshold: default_binary_threshold(),
            tau_max: default_tau_max(),
            mode: default_mode(),
            normalize_scores: true,
            refresh_interval: None,
            eligible_layers: None,
        }
    }

    pub fn adaptive(gamma: f64, mode: ExecutionMode) -> Self {
        Self {
            gamma,
            mode,
            ..Self::new(PolicyKind::Adaptive)
        }
    }

    pub fn static_interval(interval: usize) -> Self {
        Self {
            interval,
            ..Self::new(PolicyKind::StaticInterval)
        }
    }

    /// Check the invariants; errors name the offending field as `policy.<name>`.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::bad_config(format!("policy.{field}"), reason));
        if !(0.0..f64::INFINITY).contains(&self.gamma) {
            return bad("gamma", format!("{} must be finite and >= 0", self.gamma));
        }
        if !(0.0..f64::INFINITY).contains(&self.lambda_spatial) {
            return bad(
                "lambda_spatial",
                format!("{} must be finite and >= 0", self.lambda_spatial),
            );
        }
        if !(0.0..=1.0).contains(&self.skip_threshold) {
            return bad("skip_threshold", format!("{} must lie in [0, 1]", self.skip_threshold));
        }
        if self.interval == 0 {
            return bad("interval", "must be >= 1".into());
        }
        if !(0.0..=f64::INFINITY).contains(&self.binary_threshold) {
            return bad("binary_threshold", format!("{} must be >= 0", self.binary_threshold));
        }
        if self.tau_max == 0 {
            return bad("tau_max", "must be >= 1".into());
        }
        if self.refresh_interval == Some(0) {
            return bad("refresh_interval", "must be >= 1 when set".into());
        }
        Ok(())
    }

    /// Resolve the eligible-layer set for an `layers`-layer model.
    pub fn eligible_set(&self, layers: usize) -> Result<Vec<bool>> {
        let mut set = vec![false; layers];
        match &self.eligible_layers {
            Some(list) => {
                for &l in list {
                    if l >= layers {
                        return Err(Error::bad_config(
                            "policy.eligible_layers",
                            format!("layer {l} out of range for {layers} layers"),
                        ));
                    }
                    set[l] = true;
                }
            }
            None => {
                for (l, slot) in set.iter_mut().enumerate() {
                    *slot = l != 0 && l + 1 != layers;
                }
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// Output the cached activation; the block is not evaluated.
    Reuse,
    /// Evaluate the block and interpolate with the cached activation.
    BlendCompute,
    /// Evaluate the block and use it as is.
    FullCompute,
}

impl Action {
    pub fn block_evals(self) -> u32 {
        match self {
            Action::Reuse => 0,
            Action::BlendCompute | Action::FullCompute => 1,
        }
    }
}

/// What to do for one layer at one step. `weight` is the blend weight actually
/// applied: 0 for reuse, 1 for full compute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReuseDecision {
    pub action: Action,
    pub weight: f64,
}

impl ReuseDecision {
    pub const FULL: ReuseDecision = ReuseDecision {
        action: Action::FullCompute,
        weight: 1.0,
    };
    pub const REUSE: ReuseDecision = ReuseDecision {
        action: Action::Reuse,
        weight: 0.0,
    };
}

/// `clip(γ·score, 0, 1)`; the `+∞` "no history" score maps to 1.
pub fn correction_weight(score: f64, gamma: f64) -> Result<f64> {
    if !(0.0..f64::INFINITY).contains(&gamma) {
        return Err(Error::BadSensitivity(gamma));
    }
    if score.is_infinite() {
        return Ok(1.0);
    }
    Ok(clip_unit(gamma * score))
}

/// `(1 − λ)·cached + λ·fresh`, elementwise.
pub fn blend(cached: &Tensor3, fresh: &Tensor3, weight: f64) -> Result<Tensor3> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::BadWeight(format!("blend weight {weight} outside [0, 1]")));
    }
    cached.zip_with(fresh, |c, f| (1.0 - weight) * c + weight * f)
}

/// Inputs to [`decide`] for one layer at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionInput {
    /// Correction weight from [`correction_weight`].
    pub weight: f64,
    /// Raw (unnormalized) offset score, `+∞` without history.
    pub raw_score: f64,
    /// Sampling-clock value of the current step.
    pub step: usize,
    pub layer: usize,
    /// Age of the valid cache entry, `None` when there is none.
    pub cache_age: Option<usize>,
}

/// Choose between reuse, blending and full recompute.
///
/// A missing or stale entry and a scheduled refresh always force a full
/// recompute. Otherwise the policy kind decides; only the adaptive policy ever
/// blends.
pub fn decide(config: &PolicyConfig, input: &DecisionInput) -> ReuseDecision {
    match input.cache_age {
        Some(age) if age <= config.tau_max => {}
        _ => return ReuseDecision::FULL,
    }
    if let Some(r) = config.refresh_interval {
        if input.step.is_multiple_of(r) {
            return ReuseDecision::FULL;
        }
    }
    match config.kind {
        PolicyKind::Adaptive => match config.mode {
            ExecutionMode::Economic if input.weight <= config.skip_threshold => ReuseDecision::REUSE,
            _ => ReuseDecision {
                action: Action::BlendCompute,
                weight: input.weight,
            },
        },
        PolicyKind::StaticInterval => {
            if !input.step.is_multiple_of(config.interval) {
                ReuseDecision::REUSE
            } else {
                ReuseDecision::FULL
            }
        }
        PolicyKind::BinaryThreshold => {
            if input.raw_score <= config.binary_threshold {
                ReuseDecision::REUSE
            } else {
                ReuseDecision::FULL
            }
        }
        PolicyKind::FullRecompute => ReuseDecision::FULL,
        PolicyKind::PureReuse => ReuseDecision::REUSE,
    }
}
