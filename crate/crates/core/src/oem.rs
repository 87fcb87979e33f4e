//! Offset estimation: how far a layer's input has drifted since it was cached,
//! and how much structure it carries across channels.
//!
//! Both signals are token-level statistics averaged into one scalar per layer.
//! The combined score is `d_temp + λ_spatial · d_spatial`, where the spatial
//! term stands in for the norm of the spatial gradient.

use crate::error::{Error, Result};
use crate::numerics::{l2_norm, population_variance, Tensor3};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

/// Default EMA decay for score normalization.
pub const DEFAULT_NORM_DECAY: f64 = 0.9;

/// Mean over all `(b, i)` tokens of `‖h_cur[b,i,:] − h_prev[b,i,:]‖₂`.
pub fn temporal_deviation(h_cur: &Tensor3, h_prev: &Tensor3) -> Result<f64> {
    h_cur.ensure_same_shape(h_prev)?;
    let (b, p, _) = h_cur.dims();
    if b * p == 0 {
        return Ok(0.0);
    }
    let total: f64 = h_cur
        .tokens()
        .zip(h_prev.tokens())
        .map(|(a, c)| a.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    Ok(total / (b * p) as f64)
}

fn token_spread(token: &[f64]) -> f64 {
    population_variance(token).map(f64::sqrt).unwrap_or(0.0)
}

/// Mean over all tokens of the channel-wise standard deviation.
pub fn spatial_variation(h: &Tensor3) -> f64 {
    let (b, p, _) = h.dims();
    if b * p == 0 {
        return 0.0;
    }
    h.tokens().map(token_spread).sum::<f64>() / (b * p) as f64
}

/// Per-token channel standard deviation, one row per batch element.
///
/// This is the spatial-variation statistic before averaging; its mean equals
/// [`spatial_variation`].
pub fn patch_variation_map(h: &Tensor3) -> Vec<Vec<f64>> {
    (0..h.batch())
        .map(|b| (0..h.patches()).map(|i| token_spread(h.token(b, i))).collect())
        .collect()
}

/// `d_temp + λ_spatial · d_spatial`.
pub fn offset_score(d_temp: f64, d_spatial: f64, lambda_spatial: f64) -> Result<f64> {
    if !(0.0..f64::INFINITY).contains(&lambda_spatial) {
        return Err(Error::BadWeight(format!(
            "spatial weight {lambda_spatial} must be finite and >= 0"
        )));
    }
    Ok(d_temp + lambda_spatial * d_spatial)
}

/// Running per-layer score scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub ema: f64,
    pub decay: f64,
    pub count: u64,
}

impl NormState {
    pub fn new(decay: f64) -> Self {
        Self {
            ema: 0.0,
            decay,
            count: 0,
        }
    }

    /// Fold `raw` into the average and return `raw / ema`.
    ///
    /// The first observation initializes the average and normalizes to 1.
    pub fn observe(&mut self, raw: f64) -> f64 {
        if self.count == 0 {
            self.ema = raw;
            self.count = 1;
            return 1.0;
        }
        self.ema = self.decay * self.ema + (1.0 - self.decay) * raw;
        self.count += 1;
        if self.ema > 0.0 {
            raw / self.ema
        } else {
            0.0
        }
    }
}

impl Default for NormState {
    fn default() -> Self {
        Self::new(DEFAULT_NORM_DECAY)
    }
}

/// Functional form of [`NormState::observe`].
pub fn normalize_score(raw: f64, state: NormState) -> (f64, NormState) {
    let mut next = state;
    let normalized = next.observe(raw);
    (normalized, next)
}

/// Offset signals of one layer at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetSignals {
    pub layer: usize,
    pub step: usize,
    /// `None` when nothing was cached to compare against.
    pub d_temp: Option<f64>,
    pub d_spatial: f64,
    /// Raw combined score; `+∞` when `d_temp` is unavailable.
    #[serde(with = "crate::serde_util::finite_or_null")]
    pub score: f64,
    /// Score after normalization (equal to `score` when normalization is off).
    #[serde(with = "crate::serde_util::finite_or_null")]
    pub score_normalized: f64,
}

impl OffsetSignals {
    /// Measure `h_cur` against the previously cached input, if any.
    pub fn measure(
        layer: usize,
        step: usize,
        h_cur: &Tensor3,
        h_prev: Option<&Tensor3>,
        lambda_spatial: f64,
    ) -> Result<Self> {
        let d_spatial = spatial_variation(h_cur);
        let d_temp = h_prev.map(|prev| temporal_deviation(h_cur, prev)).transpose()?;
        let score = match d_temp {
            Some(dt) => offset_score(dt, d_spatial, lambda_spatial)?,
            None => f64::INFINITY,
        };
        Ok(Self {
            layer,
            step,
            d_temp,
            d_spatial,
            score,
            score_normalized: score,
        })
    }

    /// Replace the normalized score using `state`; the `+∞` sentinel passes through untouched.
    pub fn normalize_with(mut self, state: &mut NormState) -> Self {
        if self.score.is_finite() {
            self.score_normalized = state.observe(self.score);
        }
        self
    }
}

/// Settings for [`estimate_lipschitz`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzProbe {
    pub probe_count: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for LipschitzProbe {
    fn default() -> Self {
        Self {
            probe_count: 64,
            radius: 0.1,
            seed: 0x11F5,
        }
    }
}

/// Empirical lower bound on the Lipschitz constant of `block` near `anchor`.
///
/// Each probe jitters the anchor by uniform noise of the anchor's RMS size,
/// draws a random direction `δ` with `‖δ‖ = radius`, and records
/// `‖block(h+δ) − block(h)‖ / ‖δ‖`. Returns the maximum ratio.
pub fn estimate_lipschitz<F>(mut block: F, anchor: &Tensor3, probe: LipschitzProbe) -> Result<f64>
where
    F: FnMut(&Tensor3) -> Result<Tensor3>,
{
    let n = anchor.data().len();
    if n == 0 || probe.probe_count == 0 || probe.radius.is_nan() || probe.radius <= 0.0 {
        return Ok(0.0);
    }
    let rms = anchor.norm() / (n as f64).sqrt();
    let spread = if rms > 0.0 { rms } else { 1.0 };
    let (b, p, d) = anchor.dims();
    let mut rng = SplitMix64::new(probe.seed);
    let mut best = 0.0f64;
    for _ in 0..probe.probe_count {
        let base = anchor.map(|v| v + rng.symmetric(spread));
        let mut dir: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let len = l2_norm(&dir);
        if len == 0.0 {
            continue;
        }
        for v in &mut dir {
            *v *= probe.radius / len;
        }
        let delta = Tensor3::new(b, p, d, dir)?;
        let moved = base.add(&delta)?;
        let out_moved = block(&moved)?;
        let out_base = block(&base)?;
        let ratio = out_moved.sub(&out_base)?.norm() / delta.norm();
        best = best.max(ratio);
    }
    Ok(best)
}
