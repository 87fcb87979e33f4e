//! The cached sampling loop, its full-recompute reference and trace comparison.
//!
//! Each sampling step walks the layers once. For every layer the current
//! input is measured against the input stored in the cache, the score becomes
//! a correction weight, the policy picks an action and the cache is rewritten
//! with this step's input and (possibly blended) output.

use crate::acm::{blend, correction_weight, decide, Action, DecisionInput, PolicyConfig, PolicyKind, ReuseDecision};
use crate::cachestore::{CacheStats, CacheStore};
use crate::error::{Error, Result};
use crate::image::{Image, PatchLayout};
use crate::metrics::{FidelityReport, PairFidelity};
use crate::numerics::Tensor3;
use crate::oem::{
    estimate_lipschitz, patch_variation_map, temporal_deviation, LipschitzProbe, NormState, OffsetSignals,
};
use crate::toymodel::{
    block_forward, decode, embed, latent_noise, predicted_noise, scheduler_step, synthetic_scene, LatentState,
    ModelDims, ModelWeights, SceneSpec,
};
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Peak value used for PSNR and SSIM; scenes live in `[0, 1]`.
pub const IMAGE_PEAK: f64 = 1.0;

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_seed() -> u64 {
    7
}
fn default_weight_scale() -> f64 {
    1.0
}
fn default_step_size() -> f64 {
    0.1
}
fn default_batch() -> usize {
    1
}
fn default_policy() -> PolicyConfig {
    PolicyConfig::new(PolicyKind::Adaptive)
}
fn default_true() -> bool {
    true
}
fn default_frames() -> usize {
    32
}
fn default_blobs() -> usize {
    3
}
fn default_speed() -> f64 {
    1.0
}

/// Parameters of the bundled synthetic motion scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    /// Pixels per frame.
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: default_frames(),
            blobs: default_blobs(),
            speed: default_speed(),
            seed: default_seed(),
        }
    }
}

impl SceneConfig {
    /// Generate the scene on the model's image grid.
    pub fn to_spec(&self, dims: &ModelDims) -> Result<SceneSpec> {
        let layout = PatchLayout::for_model(dims.patches, dims.patch_dim)?;
        Ok(SceneSpec::generate(
            layout.height(),
            layout.width(),
            self.blobs,
            self.speed,
            self.frames,
            self.seed,
        ))
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub weights_seed: u64,
    #[serde(default = "default_seed")]
    pub latent_seed: u64,
    #[serde(default)]
    pub model: ModelDims,
    /// Multiplies every weight after initialization.
    #[serde(default = "default_weight_scale")]
    pub weight_scale: f64,
    #[serde(default)]
    pub label: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_policy")]
    pub policy: PolicyConfig,
    /// Conditions the initial latent on frame 0 (single runs) or on every frame (sequences).
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    /// Keep patch-variation maps for heatmap export.
    #[serde(default)]
    pub trace_images: bool,
    /// Keep every block output and step latent so runs can be compared state by state.
    #[serde(default = "default_true")]
    pub record_states: bool,
    #[serde(default)]
    pub lipschitz: LipschitzProbe,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            weights_seed: default_seed(),
            latent_seed: default_seed(),
            model: ModelDims::default(),
            weight_scale: default_weight_scale(),
            label: 0,
            step_size: default_step_size(),
            batch: default_batch(),
            policy: default_policy(),
            scene: None,
            trace_images: false,
            record_states: true,
            lipschitz: LipschitzProbe::default(),
        }
    }
}

impl RunConfig {
    pub fn with_policy(&self, policy: PolicyConfig) -> Self {
        Self { policy, ..self.clone() }
    }

    /// The same run with every layer recomputed at every step.
    pub fn reference(&self) -> Self {
        Self {
            policy: PolicyConfig {
                kind: PolicyKind::FullRecompute,
                ..self.policy.clone()
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::bad_config(field, reason));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!(
                    "{} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }
        let m = &self.model;
        if m.max_timesteps < 2 {
            return bad("model.max_timesteps", format!("{} must be >= 2", m.max_timesteps));
        }
        for (name, v) in [
            ("model.layers", m.layers),
            ("model.channels", m.channels),
            ("model.patches", m.patches),
            ("model.num_classes", m.num_classes),
        ] {
            if v == 0 {
                return bad(name, "must be >= 1".into());
            }
        }
        PatchLayout::for_model(m.patches, m.patch_dim)?;
        if self.label >= m.num_classes {
            return bad(
                "label",
                format!("{} out of range for {} classes", self.label, m.num_classes),
            );
        }
        if self.batch == 0 {
            return bad("batch", "must be >= 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return bad("step_size", format!("{} must lie in (0, 1]", self.step_size));
        }
        if !(self.weight_scale.is_finite() && self.weight_scale > 0.0) {
            return bad("weight_scale", format!("{} must be finite and > 0", self.weight_scale));
        }
        self.policy.validate()?;
        self.policy.eligible_set(m.layers)?;
        if let Some(scene) = &self.scene {
            if scene.frames < 1 {
                return bad("scene.frames", "must be >= 1".into());
            }
            if !(0.0..f64::INFINITY).contains(&scene.speed) {
                return bad("scene.speed", format!("{} must be finite and >= 0", scene.speed));
            }
        }
        if self.lipschitz.probe_count == 0 || self.lipschitz.radius.is_nan() || self.lipschitz.radius <= 0.0 {
            return bad("lipschitz", "probe_count must be >= 1 and radius > 0".into());
        }
        Ok(())
    }

    pub fn build_weights(&self) -> ModelWeights {
        ModelWeights::init(self.weights_seed, self.model).scaled(self.weight_scale)
    }

    pub fn layout(&self) -> Result<PatchLayout> {
        PatchLayout::for_model(self.model.patches, self.model.patch_dim)
    }

    /// Latent noise from `latent_seed`, plus the scene frame when one is given.
    pub fn initial_latent(&self, scene_frame: Option<&Image>) -> Result<Tensor3> {
        let m = &self.model;
        let noise = latent_noise(self.latent_seed, self.batch, m.patches, m.patch_dim);
        match scene_frame {
            None => Ok(noise),
            Some(img) => {
                let pixels = self.layout()?.patchify(img)?;
                Ok(Tensor3::from_fn(self.batch, m.patches, m.patch_dim, |b, i, d| {
                    noise.get(b, i, d) + pixels.get(0, i, d)
                }))
            }
        }
    }
}

/// One layer at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub frame: usize,
    pub step: usize,
    pub layer: usize,
    /// Layer belongs to the cache-eligible set.
    pub eligible: bool,
    /// Age of the cache entry used, `None` when there was none.
    pub cache_age: Option<usize>,
    pub signals: OffsetSignals,
    /// Correction weight computed from the score, before the policy acts.
    pub weight: f64,
    pub decision: ReuseDecision,
    pub block_evals: u32,
    /// `‖fresh − output‖` (Frobenius), when both a fresh and a cached activation existed.
    pub deviation: Option<f64>,
    /// Same quantity as a mean token norm.
    pub deviation_mean_token: Option<f64>,
    /// `‖fresh − cached‖` (Frobenius).
    pub cache_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationMap {
    pub step: usize,
    pub layer: usize,
    /// `batch × patches`.
    pub values: Vec<Vec<f64>>,
}

/// Everything recorded during one sampling run (one frame of a sequence).
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config: RunConfig,
    pub frame: usize,
    /// `L` records per step, steps in sampling order (`t = T-1` first).
    pub records: Vec<LayerRecord>,
    pub step_wall_ms: Vec<f64>,
    /// Clean-image prediction after each step, sampling order.
    pub step_images: Vec<Tensor3>,
    pub final_image: Tensor3,
    /// Latent entering each step; empty unless `record_states`.
    pub latents: Vec<Tensor3>,
    /// Output of every record; empty unless `record_states`.
    pub states: Vec<Tensor3>,
    pub variation_maps: Vec<VariationMap>,
    pub stats: CacheStats,
}

impl RunTrace {
    pub fn layers(&self) -> usize {
        self.config.model.layers
    }

    pub fn steps(&self) -> usize {
        self.config.model.max_timesteps
    }

    pub fn total_block_evals(&self) -> u64 {
        self.records.iter().map(|r| u64::from(r.block_evals)).sum()
    }

    /// Records of the `index`-th executed step (0 is the first, noisiest step).
    pub fn step_records(&self, index: usize) -> &[LayerRecord] {
        let l = self.layers();
        &self.records[index * l..(index + 1) * l]
    }

    pub fn final_images(&self) -> Result<Vec<Image>> {
        self.config.layout()?.images(&self.final_image)
    }
}

struct Sampler<'a> {
    config: &'a RunConfig,
    weights: &'a ModelWeights,
    eligible: Vec<bool>,
    /// Score normalization state, `[store][layer]`.
    norms: Vec<Vec<NormState>>,
}

impl<'a> Sampler<'a> {
    fn new(config: &'a RunConfig, weights: &'a ModelWeights, stores: usize) -> Result<Self> {
        Ok(Self {
            config,
            weights,
            eligible: config.policy.eligible_set(config.model.layers)?,
            norms: vec![vec![NormState::default(); config.model.layers]; stores],
        })
    }

    /// Run all `T` steps from `x_init`. `store_of(t)` picks the cache store used
    /// at timestep `t`; `clock` is the value of the sampling clock at `t`.
    fn sample(
        &mut self,
        x_init: Tensor3,
        frame: usize,
        caches: &mut [CacheStore],
        store_of: impl Fn(usize) -> usize,
        clock: impl Fn(usize) -> usize,
    ) -> Result<RunTrace> {
        let cfg = self.config;
        let policy = &cfg.policy;
        let w = self.weights;
        let layers = cfg.model.layers;
        let steps = cfg.model.max_timesteps;
        let before = total_stats(caches);

        let mut records = Vec::with_capacity(layers * steps);
        let mut step_wall_ms = Vec::with_capacity(steps);
        let mut step_images = Vec::with_capacity(steps);
        let mut latents = Vec::new();
        let mut states = Vec::new();
        let mut variation_maps = Vec::new();
        let mut final_image = None;

        let mut x = LatentState {
            x: x_init,
            t: steps - 1,
        };
        for t in (0..steps).rev() {
            let started = Instant::now();
            let now = clock(t);
            let slot = store_of(t);
            let store = &mut caches[slot];
            if cfg.record_states {
                latents.push(x.x.clone());
            }
            let mut h = embed(&x, cfg.label, w)?;
            for l in 0..layers {
                let (signals, cached, cache_age) = match store.get(l, now, policy.tau_max) {
                    Some((entry, age)) => (
                        OffsetSignals::measure(l, t, &h, Some(&entry.input), policy.lambda_spatial)?,
                        Some(entry.output.clone()),
                        Some(age),
                    ),
                    None => (
                        OffsetSignals::measure(l, t, &h, None, policy.lambda_spatial)?,
                        None,
                        None,
                    ),
                };
                let (signals, driving_score) = if policy.normalize_scores {
                    let s = signals.normalize_with(&mut self.norms[slot][l]);
                    (s, s.score_normalized)
                } else {
                    (signals, signals.score)
                };
                let weight = correction_weight(driving_score, policy.gamma)?;
                let decision = if self.eligible[l] {
                    decide(
                        policy,
                        &DecisionInput {
                            weight,
                            raw_score: signals.score,
                            step: now,
                            layer: l,
                            cache_age,
                        },
                    )
                } else {
                    ReuseDecision::FULL
                };

                let (out, fresh) = match (decision.action, &cached) {
                    (Action::Reuse, Some(c)) => (c.clone(), None),
                    (Action::BlendCompute, Some(c)) => {
                        let f = block_forward(&h, l, t, w)?;
                        (blend(c, &f, decision.weight)?, Some(f))
                    }
                    _ => {
                        let f = block_forward(&h, l, t, w)?;
                        (f.clone(), Some(f))
                    }
                };
                let (deviation, deviation_mean_token, cache_gap) = match (&fresh, &cached) {
                    (Some(f), Some(c)) => (
                        Some(f.sub(&out)?.norm()),
                        Some(temporal_deviation(f, &out)?),
                        Some(f.sub(c)?.norm()),
                    ),
                    _ => (None, None, None),
                };
                if self.eligible[l] {
                    store.record_reuse(decision.weight, decision.action == Action::Reuse);
                }
                if cfg.trace_images && l == layers / 2 {
                    variation_maps.push(VariationMap {
                        step: t,
                        layer: l,
                        values: patch_variation_map(&h),
                    });
                }
                records.push(LayerRecord {
                    frame,
                    step: t,
                    layer: l,
                    eligible: self.eligible[l],
                    cache_age,
                    signals,
                    weight,
                    decision,
                    block_evals: decision.action.block_evals(),
                    deviation,
                    deviation_mean_token,
                    cache_gap,
                });
                if cfg.record_states {
                    states.push(out.clone());
                }
                store.put(l, h, out.clone(), now);
                h = out;
            }
            let clean = decode(&h, w)?;
            if t > 0 {
                let eps = predicted_noise(&x, &clean)?;
                x = scheduler_step(&x, &eps, cfg.step_size)?;
            } else {
                final_image = Some(clean.clone());
            }
            step_images.push(clean);
            step_wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        }

        Ok(RunTrace {
            config: cfg.clone(),
            frame,
            records,
            step_wall_ms,
            step_images,
            final_image: final_image.expect("the loop always reaches t = 0"),
            latents,
            states,
            variation_maps,
            stats: total_stats(caches).since(&before),
        })
    }
}

fn total_stats(caches: &[CacheStore]) -> CacheStats {
    let mut s = CacheStats::default();
    for c in caches {
        s.merge(c.stats());
    }
    s
}

/// One cached sampling run. A configured scene conditions the latent on frame 0.
pub fn run_inference(config: &RunConfig) -> Result<RunTrace> {
    config.validate()?;
    let weights = config.build_weights();
    let frame0 = match &config.scene {
        Some(sc) => Some(synthetic_scene(&sc.to_spec(&config.model)?, 0)?),
        None => None,
    };
    let x0 = config.initial_latent(frame0.as_ref())?;
    let mut sampler = Sampler::new(config, &weights, 1)?;
    let mut caches = [CacheStore::new()];
    sampler.sample(x0, 0, &mut caches, |_| 0, |t| t)
}

/// [`run_inference`] with the policy forced to full recompute.
pub fn run_reference(config: &RunConfig) -> Result<RunTrace> {
    run_inference(&config.reference())
}

/// Sample every frame of `scene` in order, carrying cache and score history.
///
/// Each timestep keeps its own cache store and score normalization, so frame
/// `f` at step `t` is measured against frame `f-1` at the same `t`. The clock used for ages,
/// refresh and static intervals counts frames down (`frames - 1 - f`).
pub fn run_sequence(config: &RunConfig, scene: &SceneSpec) -> Result<Vec<RunTrace>> {
    config.validate()?;
    let layout = config.layout()?;
    if scene.height != layout.height() || scene.width != layout.width() {
        return Err(Error::bad_config(
            "scene",
            format!(
                "{}x{} scene does not match the {}x{} model image",
                scene.width,
                scene.height,
                layout.width(),
                layout.height()
            ),
        ));
    }
    if scene.frames < 2 {
        return Err(Error::bad_config(
            "scene.frames",
            format!("{} must be >= 2", scene.frames),
        ));
    }
    let weights = config.build_weights();
    let steps = config.model.max_timesteps;
    let mut sampler = Sampler::new(config, &weights, steps)?;
    let mut caches = vec![CacheStore::new(); steps];
    (0..scene.frames)
        .map(|f| {
            let img = synthetic_scene(scene, f)?;
            let x0 = config.initial_latent(Some(&img))?;
            let clock = scene.frames - 1 - f;
            sampler.sample(x0, f, &mut caches, |t| t, |_| clock)
        })
        .collect()
}

/// Slack of the propagated-error bound over blended records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub records: usize,
    /// Records where `(1−λ)·L̂·τ·S ≥ measured deviation`.
    pub satisfied: usize,
    pub min_slack: Option<f64>,
    pub mean_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Clean-image predictions, step by step.
    pub per_step: FidelityReport,
    pub final_image: PairFidelity,
    /// Mean-token-norm distance between test and reference block outputs,
    /// `[step index][layer]`; `None` unless both runs kept states.
    pub hidden_deviation: Option<Vec<Vec<f64>>>,
    pub max_hidden_deviation: Option<f64>,
    /// Empirical per-layer Lipschitz estimates (lower bounds) near the reference trajectory.
    pub lipschitz_estimates: Option<Vec<f64>>,
    pub bound: Option<BoundSummary>,
    /// Largest relative error of `‖fresh − out‖ = (1−λ)‖fresh − cached‖` over blended records.
    pub blend_identity_max_rel_error: Option<f64>,
    /// Fraction of records with history where the temporal step stays within `τ·S`.
    pub drift_bound_satisfaction: Option<f64>,
}

impl ErrorReport {
    /// Largest hidden-state deviation over the last `fraction` of steps (at least one step).
    pub fn tail_hidden_deviation(&self, fraction: f64) -> Option<f64> {
        let rows = self.hidden_deviation.as_ref()?;
        let keep = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len());
        Some(rows[rows.len() - keep..].iter().flatten().copied().fold(0.0, f64::max))
    }
}

fn comparable(test: &RunTrace, reference: &RunTrace) -> Result<()> {
    let strip = |c: &RunConfig| RunConfig {
        policy: PolicyConfig::new(PolicyKind::FullRecompute),
        trace_images: false,
        record_states: false,
        ..c.clone()
    };
    if strip(&test.config) != strip(&reference.config) {
        return Err(Error::IncomparableRuns("configs differ beyond the policy".into()));
    }
    if test.frame != reference.frame {
        return Err(Error::IncomparableRuns(format!(
            "frame {} vs frame {}",
            test.frame, reference.frame
        )));
    }
    if test.records.len() != reference.records.len() || test.step_images.len() != reference.step_images.len() {
        return Err(Error::IncomparableRuns("traces have different lengths".into()));
    }
    Ok(())
}

/// Compare a test run with a reference run of the same config.
pub fn compare_runs(test: &RunTrace, reference: &RunTrace) -> Result<ErrorReport> {
    comparable(test, reference)?;
    let layout = test.config.layout()?;
    let layers = test.layers();

    let per_step = test
        .step_images
        .iter()
        .zip(&reference.step_images)
        .map(|(a, b)| PairFidelity::of_batch(&layout.images(a)?, &layout.images(b)?, IMAGE_PEAK))
        .collect::<Result<Vec<_>>>()?;
    let final_image = PairFidelity::of_batch(
        &layout.images(&test.final_image)?,
        &layout.images(&reference.final_image)?,
        IMAGE_PEAK,
    )?;

    let have_states = !test.states.is_empty() && test.states.len() == reference.states.len();
    let hidden_deviation = if have_states {
        let flat = test
            .states
            .iter()
            .zip(&reference.states)
            .map(|(a, b)| temporal_deviation(b, a))
            .collect::<Result<Vec<_>>>()?;
        Some(flat.chunks(layers).map(|c| c.to_vec()).collect::<Vec<_>>())
    } else {
        None
    };
    let max_hidden_deviation = hidden_deviation
        .as_ref()
        .map(|rows: &Vec<Vec<f64>>| rows.iter().flatten().copied().fold(0.0, f64::max));

    let lipschitz_estimates = if !reference.states.is_empty() && !reference.latents.is_empty() {
        Some(layer_lipschitz(reference)?)
    } else {
        None
    };

    let blended: Vec<&LayerRecord> = test
        .records
        .iter()
        .filter(|r| r.decision.action == Action::BlendCompute)
        .collect();

    let bound = lipschitz_estimates.as_ref().map(|lip| {
        let slacks: Vec<f64> = blended
            .iter()
            .filter_map(|r| {
                let (dev, age) = (r.deviation_mean_token?, r.cache_age?);
                if !r.signals.score.is_finite() {
                    return None;
                }
                let rhs = (1.0 - r.decision.weight) * lip[r.layer] * age as f64 * r.signals.score;
                Some(rhs - dev)
            })
            .collect();
        BoundSummary {
            records: slacks.len(),
            satisfied: slacks.iter().filter(|&&s| s >= 0.0).count(),
            min_slack: slacks.iter().copied().reduce(f64::min),
            mean_slack: (!slacks.is_empty()).then(|| slacks.iter().sum::<f64>() / slacks.len() as f64),
        }
    });

    let blend_identity_max_rel_error = blended
        .iter()
        .filter_map(|r| {
            let expected = (1.0 - r.decision.weight) * r.cache_gap?;
            let measured = r.deviation?;
            Some(if expected == 0.0 && measured == 0.0 {
                0.0
            } else {
                (measured - expected).abs() / expected.abs().max(measured.abs())
            })
        })
        .reduce(f64::max);

    let drift: Vec<bool> = test
        .records
        .iter()
        .filter_map(|r| {
            let (d, age) = (r.signals.d_temp?, r.cache_age?);
            Some(d <= age as f64 * r.signals.score)
        })
        .collect();
    let drift_bound_satisfaction =
        (!drift.is_empty()).then(|| drift.iter().filter(|&&ok| ok).count() as f64 / drift.len() as f64);

    Ok(ErrorReport {
        per_step: FidelityReport::from_pairs(per_step),
        final_image,
        hidden_deviation,
        max_hidden_deviation,
        lipschitz_estimates,
        bound,
        blend_identity_max_rel_error,
        drift_bound_satisfaction,
    })
}

/// Probe each block around its input at the middle step of `trace`.
fn layer_lipschitz(trace: &RunTrace) -> Result<Vec<f64>> {
    let cfg = &trace.config;
    let weights = cfg.build_weights();
    let layers = trace.layers();
    let mid = trace.latents.len() / 2;
    let t = cfg.model.max_timesteps - 1 - mid;
    (0..layers)
        .map(|l| {
            let anchor = if l == 0 {
                embed(
                    &LatentState {
                        x: trace.latents[mid].clone(),
                        t,
                    },
                    cfg.label,
                    &weights,
                )?
            } else {
                trace.states[mid * layers + l - 1].clone()
            };
            estimate_lipschitz(|h| block_forward(h, l, t, &weights), &anchor, cfg.lipschitz)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acm::ExecutionMode;

    fn small() -> RunConfig {
        RunConfig {
            model: ModelDims {
                layers: 4,
                channels: 8,
                patches: 4,
                patch_dim: 4,
                max_timesteps: 6,
                num_classes: 3,
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn record_layout() {
        let tr = run_inference(&small()).unwrap();
        assert_eq!(tr.records.len(), 24);
        assert_eq!(tr.step_images.len(), 6);
        assert_eq!(tr.states.len(), 24);
        assert_eq!(tr.step_records(0)[0].step, 5);
        assert_eq!(tr.step_records(5)[3].layer, 3);
        for r in &tr.records {
            assert_eq!(r.block_evals, r.decision.action.block_evals());
        }
    }

    #[test]
    fn full_recompute_costs_everything() {
        let tr = run_reference(&small()).unwrap();
        assert_eq!(tr.total_block_evals(), 24);
        assert!(tr.records.iter().all(|r| r.decision == ReuseDecision::FULL));
        assert_eq!(crate::cachestore::hit_rate(&tr.stats).unwrap(), 0.0);
    }

    #[test]
    fn pure_reuse_skips_after_first_step() {
        let cfg = small().with_policy(PolicyConfig::new(PolicyKind::PureReuse));
        let tr = run_inference(&cfg).unwrap();
        for r in &tr.records[4..] {
            assert_eq!(r.block_evals, u32::from(!r.eligible));
        }
    }

    #[test]
    fn self_comparison_is_exact() {
        let tr = run_inference(&small()).unwrap();
        let rep = compare_runs(&tr, &tr).unwrap();
        assert_eq!(rep.final_image.mse, 0.0);
        assert_eq!(rep.final_image.psnr, 99.0);
        assert_eq!(rep.max_hidden_deviation, Some(0.0));
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let a = run_inference(&small()).unwrap();
        let mut other = small();
        other.latent_seed = 8;
        let b = run_inference(&other).unwrap();
        assert!(matches!(compare_runs(&a, &b), Err(Error::IncomparableRuns(_))));
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = small();
        cfg.model.max_timesteps = 1;
        match run_inference(&cfg) {
            Err(Error::BadConfig { field, .. }) => assert_eq!(field, "model.max_timesteps"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = small();
        cfg.label = 3;
        assert!(matches!(cfg.validate(), Err(Error::BadConfig { field, .. }) if field == "label"));
        let mut cfg = small();
        cfg.policy.gamma = f64::NAN;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn economic_never_costs_more_than_faithful() {
        let mut cfg = small();
        cfg.policy = PolicyConfig::adaptive(0.5, ExecutionMode::Faithful);
        let faithful = run_inference(&cfg).unwrap().total_block_evals();
        cfg.policy.mode = ExecutionMode::Economic;
        let economic = run_inference(&cfg).unwrap().total_block_evals();
        assert!(economic <= faithful);
        assert_eq!(faithful, 24);
    }

    #[test]
    fn sequence_clock_and_stores() {
        let mut cfg = small();
        cfg.record_states = false;
        let layout = cfg.layout().unwrap();
        let scene = SceneSpec::generate(layout.height(), layout.width(), 1, 0.5, 3, 1);
        let traces = run_sequence(&cfg, &scene).unwrap();
        assert_eq!(traces.len(), 3);
        // the first frame has no history
        assert!(traces[0].records.iter().all(|r| r.cache_age.is_none()));
        assert!(traces[1].records.iter().all(|r| r.cache_age == Some(1)));
        assert_eq!(traces[2].frame, 2);
    }
}
