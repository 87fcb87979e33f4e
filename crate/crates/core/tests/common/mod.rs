//! Explicit-loop reference implementations and shared fixtures.
#![allow(dead_code, clippy::needless_range_loop)]

use offsetlab::acm::{ExecutionMode, PolicyConfig};
use offsetlab::cli::evaluate;
use offsetlab::engine::{run_sequence, RunConfig, RunTrace, SceneConfig};
use offsetlab::numerics::Tensor3;
use offsetlab::rng::SplitMix64;
use offsetlab::toymodel::ModelWeights;

pub fn random_tensor(rng: &mut SplitMix64, b: usize, p: usize, d: usize, scale: f64) -> Tensor3 {
    Tensor3::from_fn(b, p, d, |_, _, _| rng.symmetric(scale))
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        return 0.0;
    }
    (got - want).abs() / want.abs().max(got.abs())
}

/// Mean over tokens of the channel-wise Euclidean distance.
pub fn oracle_temporal(a: &Tensor3, c: &Tensor3) -> f64 {
    let (bs, ps, ds) = a.dims();
    let mut total = 0.0;
    for b in 0..bs {
        for i in 0..ps {
            let mut sq = 0.0;
            for d in 0..ds {
                let diff = a.get(b, i, d) - c.get(b, i, d);
                sq += diff * diff;
            }
            total += sq.sqrt();
        }
    }
    total / (bs * ps) as f64
}

/// Mean over tokens of the channel standard deviation (population).
pub fn oracle_spatial(a: &Tensor3) -> f64 {
    let (bs, ps, ds) = a.dims();
    let mut total = 0.0;
    for b in 0..bs {
        for i in 0..ps {
            let mut mean = 0.0;
            for d in 0..ds {
                mean += a.get(b, i, d);
            }
            mean /= ds as f64;
            let mut var = 0.0;
            for d in 0..ds {
                var += (a.get(b, i, d) - mean).powi(2);
            }
            total += (var / ds as f64).sqrt();
        }
    }
    total / (bs * ps) as f64
}

fn ln(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mut mean = 0.0;
    for x in v {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0;
    for x in v {
        var += (x - mean) * (x - mean);
    }
    var /= n;
    v.iter().map(|x| (x - mean) / (var + 1e-5).sqrt()).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Block forward written with scalar loops only.
pub fn oracle_block(h: &Tensor3, layer: usize, t: usize, w: &ModelWeights) -> Tensor3 {
    let (bs, ps, ds) = h.dims();
    let lw = &w.layers[layer];
    let hidden = lw.w1.cols();
    let mut out = vec![0.0; bs * ps * ds];
    for b in 0..bs {
        let a: Vec<Vec<f64>> = (0..ps)
            .map(|i| {
                let tok: Vec<f64> = (0..ds).map(|d| h.get(b, i, d)).collect();
                ln(&tok)
                    .iter()
                    .enumerate()
                    .map(|(d, v)| v + w.time_embed.get(t, d))
                    .collect()
            })
            .collect();
        let proj = |m: &offsetlab::numerics::Matrix, i: usize, c: usize| {
            let mut s = 0.0;
            for d in 0..ds {
                s += a[i][d] * m.get(d, c);
            }
            s
        };
        let mut h1 = vec![vec![0.0; ds]; ps];
        for i in 0..ps {
            let mut scores = vec![0.0; ps];
            for j in 0..ps {
                let mut s = 0.0;
                for c in 0..ds {
                    s += proj(&lw.wq, i, c) * proj(&lw.wk, j, c);
                }
                scores[j] = s / (ds as f64).sqrt();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            let mut attn = vec![0.0; ds];
            for j in 0..ps {
                let p = (scores[j] - m).exp() / z;
                for c in 0..ds {
                    attn[c] += p * proj(&lw.wv, j, c);
                }
            }
            for c in 0..ds {
                let mut o = 0.0;
                for k in 0..ds {
                    o += attn[k] * lw.wo.get(k, c);
                }
                h1[i][c] = h.get(b, i, c) + o;
            }
        }
        for i in 0..ps {
            let n = ln(&h1[i]);
            let mut act = vec![0.0; hidden];
            for k in 0..hidden {
                let mut s = 0.0;
                for d in 0..ds {
                    s += n[d] * lw.w1.get(d, k);
                }
                act[k] = gelu(s);
            }
            for c in 0..ds {
                let mut s = 0.0;
                for k in 0..hidden {
                    s += act[k] * lw.w2.get(k, c);
                }
                out[(b * ps + i) * ds + c] = h1[i][c] + s;
            }
        }
    }
    Tensor3::new(bs, ps, ds, out).unwrap()
}

pub fn default_config() -> RunConfig {
    RunConfig::default()
}

/// Contractive setting used for the convergence probe.
pub fn contractive_config(steps: usize) -> RunConfig {
    let mut c = RunConfig {
        weight_scale: 0.5,
        step_size: 0.02,
        policy: PolicyConfig::adaptive(1.0, ExecutionMode::Faithful),
        ..RunConfig::default()
    };
    c.model.max_timesteps = steps;
    c.policy.refresh_interval = Some(8);
    c
}

/// The bundled 32-frame motion sequence on the default model.
pub fn sequence_config() -> RunConfig {
    RunConfig {
        record_states: false,
        scene: Some(SceneConfig::default()),
        ..RunConfig::default()
    }
}

pub fn sequence_reference(config: &RunConfig) -> Vec<RunTrace> {
    let spec = config.scene.clone().unwrap().to_spec(&config.model).unwrap();
    run_sequence(&config.reference(), &spec).unwrap()
}

/// Mean final-image MSE over frames and total block evaluations.
pub fn sequence_score(config: &RunConfig, reference: &[RunTrace]) -> (f64, u64) {
    let e = evaluate(config, reference).unwrap();
    (e.mse(), e.cost.total_block_evals)
}

/// Bisect the Economic skip threshold until the adaptive run spends within
/// `tolerance` of `target` block evaluations. Returns (threshold, mse, evals).
pub fn match_budget(
    config: &RunConfig,
    reference: &[RunTrace],
    target: u64,
    tolerance: f64,
) -> Option<(f64, f64, u64)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let mut p = PolicyConfig::adaptive(1.0, ExecutionMode::Economic);
        p.skip_threshold = mid;
        let (mse, evals) = sequence_score(&config.with_policy(p), reference);
        if (evals as f64 - target as f64).abs() <= tolerance * target as f64 {
            return Some((mid, mse, evals));
        }
        if evals > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    None
}
