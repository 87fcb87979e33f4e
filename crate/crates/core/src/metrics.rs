//! Image fidelity (MSE, PSNR, SSIM) and block-evaluation cost accounting.

use crate::acm::Action;
use crate::cachestore::{hit_rate, CacheStats};
use crate::engine::RunTrace;
use crate::error::{Error, Result};
use crate::image::Image;
use serde::{Deserialize, Serialize};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(mse_slices(a.data(), b.data()))
}

fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// PSNR in dB from a precomputed MSE, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::BadWeight(format!("psnr peak {peak} must be > 0")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Mean SSIM over non-overlapping 8×8 windows, no Gaussian weighting.
/// Pixels past the last full window are ignored.
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::BadWeight(format!("ssim peak {peak} must be > 0")));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in 0..h / SSIM_WINDOW {
        for wx in 0..w / SSIM_WINDOW {
            let mut sa = 0.0;
            let mut sb = 0.0;
            for y in 0..SSIM_WINDOW {
                for x in 0..SSIM_WINDOW {
                    sa += a.get(wy * SSIM_WINDOW + y, wx * SSIM_WINDOW + x);
                    sb += b.get(wy * SSIM_WINDOW + y, wx * SSIM_WINDOW + x);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..SSIM_WINDOW {
                for x in 0..SSIM_WINDOW {
                    let da = a.get(wy * SSIM_WINDOW + y, wx * SSIM_WINDOW + x) - ma;
                    let db = b.get(wy * SSIM_WINDOW + y, wx * SSIM_WINDOW + x) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Fidelity of one compared pair (or one batch of pairs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFidelity {
    pub mse: f64,
    pub psnr: f64,
    /// `None` when the images are smaller than one SSIM window.
    pub ssim: Option<f64>,
}

impl PairFidelity {
    /// Compare two equally long batches of images; MSE is pooled over all pixels.
    pub fn of_batch(test: &[Image], reference: &[Image], peak: f64) -> Result<Self> {
        if test.len() != reference.len() || test.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "batches of {} and {} images",
                test.len(),
                reference.len()
            )));
        }
        let mut sq = 0.0;
        let mut count = 0usize;
        let mut ssim_sum = 0.0;
        let mut ssim_ok = true;
        for (a, b) in test.iter().zip(reference) {
            check_shapes(a, b)?;
            sq += mse_slices(a.data(), b.data()) * a.data().len() as f64;
            count += a.data().len();
            match ssim(a, b, peak) {
                Ok(s) => ssim_sum += s,
                Err(Error::ImageTooSmall { .. }) => ssim_ok = false,
                Err(e) => return Err(e),
            }
        }
        let mse = if count == 0 { 0.0 } else { sq / count as f64 };
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse, peak),
            ssim: ssim_ok.then(|| ssim_sum / test.len() as f64),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// One entry per compared pair, in sampling order.
    pub pairs: Vec<PairFidelity>,
    pub mean_mse: f64,
    pub max_mse: f64,
    pub mean_psnr: f64,
    pub min_psnr: f64,
    pub mean_ssim: Option<f64>,
    pub min_ssim: Option<f64>,
    /// Reserved; these need a pretrained perceptual network.
    pub fid: Option<f64>,
    pub t_fid: Option<f64>,
}

impl FidelityReport {
    pub fn from_pairs(pairs: Vec<PairFidelity>) -> Self {
        let n = pairs.len().max(1) as f64;
        let mean_mse = pairs.iter().map(|p| p.mse).sum::<f64>() / n;
        let max_mse = pairs.iter().map(|p| p.mse).fold(0.0, f64::max);
        let mean_psnr = pairs.iter().map(|p| p.psnr).sum::<f64>() / n;
        let min_psnr = pairs.iter().map(|p| p.psnr).fold(PSNR_CAP_DB, f64::min);
        let ssims: Option<Vec<f64>> = pairs.iter().map(|p| p.ssim).collect();
        let (mean_ssim, min_ssim) = match ssims {
            Some(v) if !v.is_empty() => (
                Some(v.iter().sum::<f64>() / v.len() as f64),
                Some(v.iter().copied().fold(1.0, f64::min)),
            ),
            _ => (None, None),
        };
        Self {
            pairs,
            mean_mse,
            max_mse,
            mean_psnr,
            min_psnr,
            mean_ssim,
            min_ssim,
            fid: None,
            t_fid: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_block_evals: u64,
    /// `L·T` per trace, summed over traces.
    pub max_possible: u64,
    pub eval_fraction: f64,
    /// Mean applied weight `p` over cache-eligible records; `None` without any.
    pub mean_lambda: Option<f64>,
    /// `1 − p`, the fraction the complexity estimate predicts.
    pub predicted_fraction: Option<f64>,
    /// Mean `1 − λ` over eligible records.
    pub hit_rate: Option<f64>,
    /// Fraction of eligible records whose block was skipped.
    pub skip_rate: Option<f64>,
    /// Fraction of records that are cache-eligible.
    pub eligible_fraction: f64,
    pub reuse_records: u64,
    pub blend_records: u64,
    pub full_records: u64,
}

pub fn cost_summary(trace: &RunTrace) -> CostSummary {
    cost_summary_all(std::slice::from_ref(trace))
}

/// One summary over several traces, e.g. all frames of a sequence.
pub fn cost_summary_all(traces: &[RunTrace]) -> CostSummary {
    let mut stats = CacheStats::default();
    let mut total = 0u64;
    let mut max_possible = 0u64;
    let mut records = 0u64;
    let (mut reuse, mut blend, mut full) = (0u64, 0u64, 0u64);
    for t in traces {
        stats.merge(&t.stats);
        max_possible += t.records.len() as u64;
        for r in &t.records {
            records += 1;
            total += u64::from(r.block_evals);
            match r.decision.action {
                Action::Reuse => reuse += 1,
                Action::BlendCompute => blend += 1,
                Action::FullCompute => full += 1,
            }
        }
    }
    let hr = hit_rate(&stats).ok();
    CostSummary {
        total_block_evals: total,
        max_possible,
        eval_fraction: if max_possible == 0 {
            0.0
        } else {
            total as f64 / max_possible as f64
        },
        mean_lambda: hr.map(|h| 1.0 - h),
        predicted_fraction: hr,
        hit_rate: hr,
        skip_rate: stats.skip_rate().ok(),
        eligible_fraction: if records == 0 {
            0.0
        } else {
            stats.eligible_steps as f64 / records as f64
        },
        reuse_records: reuse,
        blend_records: blend,
        full_records: full,
    }
}
