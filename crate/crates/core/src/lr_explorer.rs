//! Cyclical learning-rate exploration and curvature-based selection of the
//! largest stable learning rate.
//!
//! During an exploratory epoch, batch `i` is trained at grid rate `i mod K`,
//! so one pass samples the whole loss-versus-rate landscape. The discrete
//! second derivative of the per-rate mean losses is taken over the grid
//! index (uniform in log-rate under the default log spacing); a sliding
//! window then picks the region of low curvature with the largest rates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::BatchRef;
use crate::trainer::{LrSchedule, Trainer, TrainerError};

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(
        "exploration has {have} batches for {need} learning-rate candidates; raise the exploration fraction or lower the grid count"
    )]
    NotEnoughBatches { have: usize, need: usize },
    #[error("curvature needs at least 3 loss points, found {0}")]
    TooFewPoints(usize),
    #[error("window size {window} needs at least {needed} grid points, found {count}")]
    WindowTooLarge { window: usize, needed: usize, count: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    Log,
    Linear,
}

/// Learning-rate candidate grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrGrid {
    pub lr_min: f64,
    pub lr_max: f64,
    pub count: usize,
    pub spacing: GridSpacing,
}

impl Default for LrGrid {
    fn default() -> Self {
        Self { lr_min: 0.001, lr_max: 1.0, count: 20, spacing: GridSpacing::Log }
    }
}

impl LrGrid {
    pub fn validate(&self) -> Result<(), ExploreError> {
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return Err(ExploreError::InvalidGrid(format!(
                "needs 0 < lr_min < lr_max, found {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.count < 4 {
            return Err(ExploreError::InvalidGrid(format!(
                "needs at least 4 points, found {}",
                self.count
            )));
        }
        Ok(())
    }

    /// Strictly increasing candidate rates.
    pub fn values(&self) -> Vec<f64> {
        let k = self.count;
        (0..k)
            .map(|j| {
                let t = j as f64 / (k - 1) as f64;
                match self.spacing {
                    GridSpacing::Log => self.lr_min * (self.lr_max / self.lr_min).powf(t),
                    GridSpacing::Linear => self.lr_min + (self.lr_max - self.lr_min) * t,
                }
            })
            .collect()
    }
}

/// Per-rate mean losses gathered by one cyclical pass.
#[derive(Debug, Clone)]
pub struct CyclicalOutcome {
    /// One mean per grid rate, in grid order. Diverged observations enter as
    /// `+inf`, which makes the whole group infinite.
    pub mean_loss_per_lr: Vec<f64>,
    /// Batches whose pre-step loss was non-finite.
    pub diverged_batches: usize,
}

/// Trains batch `i` at grid rate `i mod K` and averages the recorded
/// pre-step losses per rate.
///
/// The trainer must already be snapshotted by the caller; exploration is
/// expected to be rolled back afterwards. On a divergence the offending
/// batch's group records `+inf` and the trainer is reset to its
/// exploration-start state before continuing — without the reset a single
/// unstable rate would poison every later group and no stable region could
/// ever be observed.
pub fn cyclical_losses(
    trainer: &mut dyn Trainer,
    batches: &[BatchRef<'_>],
    grid: &LrGrid,
) -> Result<CyclicalOutcome, ExploreError> {
    grid.validate()?;
    let k = grid.count;
    if batches.len() < k {
        return Err(ExploreError::NotEnoughBatches { have: batches.len(), need: k });
    }
    let values = grid.values();
    let recovery = trainer.snapshot();
    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    let mut diverged_batches = 0;
    for (i, batch) in batches.iter().enumerate() {
        let slot = i % k;
        match trainer.train_batches(&[*batch], &LrSchedule::Constant(values[slot])) {
            Ok(losses) => {
                sums[slot] += losses[0];
            }
            Err(TrainerError::Divergence { .. }) => {
                sums[slot] = f64::INFINITY;
                diverged_batches += 1;
                trainer.restore(&recovery)?;
            }
            Err(other) => return Err(other.into()),
        }
        counts[slot] += 1;
    }
    let mean_loss_per_lr = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    Ok(CyclicalOutcome { mean_loss_per_lr, diverged_batches })
}

/// Central second difference over grid index: `L[j+1] - 2 L[j] + L[j-1]` for
/// `j = 1 .. K-2`. Any non-finite operand makes the entry `+inf`.
pub fn loss_curvature(mean_loss_per_lr: &[f64]) -> Result<Vec<f64>, ExploreError> {
    let k = mean_loss_per_lr.len();
    if k < 3 {
        return Err(ExploreError::TooFewPoints(k));
    }
    Ok((1..k - 1)
        .map(|j| {
            let (a, b, c) =
                (mean_loss_per_lr[j - 1], mean_loss_per_lr[j], mean_loss_per_lr[j + 1]);
            if !a.is_finite() || !b.is_finite() || !c.is_finite() {
                f64::INFINITY
            } else {
                c - 2.0 * b + a
            }
        })
        .collect())
}

/// Result of the sliding-window stability analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureAnalysis {
    #[serde(with = "crate::ledger::json_f64_vec")]
    pub mean_loss_per_lr: Vec<f64>,
    #[serde(with = "crate::ledger::json_f64_vec")]
    pub curvature: Vec<f64>,
    pub window_size: usize,
    /// Inclusive grid-index range whose curvature stencils lie inside the
    /// selected window; `None` on the fallback path.
    pub selected_window: Option<(usize, usize)>,
    pub selected_lr: f64,
    /// True when every window was infinite and the selection fell back to
    /// the grid minimum.
    pub fallback: bool,
}

/// Slides a window of `window_size` curvature entries, scores each by mean
/// absolute curvature, and keeps windows at or below the median finite
/// score. Among those it selects the one with the largest mean grid rate
/// (ties to the lower index) and returns the largest rate whose curvature
/// stencil lies inside it. If no finite window exists the selection falls
/// back to the grid minimum with `fallback` set.
pub fn select_stable_lr(
    mean_loss_per_lr: &[f64],
    grid: &LrGrid,
    window_size: usize,
) -> Result<CurvatureAnalysis, ExploreError> {
    grid.validate()?;
    let curvature = loss_curvature(mean_loss_per_lr)?;
    if curvature.len() < window_size {
        return Err(ExploreError::WindowTooLarge {
            window: window_size,
            needed: window_size + 2,
            count: mean_loss_per_lr.len(),
        });
    }
    let values = grid.values();
    let n_windows = curvature.len() - window_size + 1;
    let scores: Vec<f64> = (0..n_windows)
        .map(|t| {
            let slice = &curvature[t..t + window_size];
            if slice.iter().any(|c| !c.is_finite()) {
                f64::INFINITY
            } else {
                slice.iter().map(|c| c.abs()).sum::<f64>() / window_size as f64
            }
        })
        .collect();
    let mut finite: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    if finite.is_empty() {
        return Ok(CurvatureAnalysis {
            mean_loss_per_lr: mean_loss_per_lr.to_vec(),
            curvature,
            window_size,
            selected_window: None,
            selected_lr: grid.lr_min,
            fallback: true,
        });
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let threshold = if finite.len() % 2 == 1 {
        finite[finite.len() / 2]
    } else {
        0.5 * (finite[finite.len() / 2 - 1] + finite[finite.len() / 2])
    };
    // Window t covers curvature entries t .. t+w-1, i.e. grid indices
    // t .. t+w+1; its center indices t+1 .. t+w are the rates whose stencils
    // lie fully inside.
    let mut best: Option<(usize, f64)> = None;
    for (t, &score) in scores.iter().enumerate() {
        if !(score <= threshold) {
            continue;
        }
        let span = &values[t..t + window_size + 2];
        let mean_lr = span.iter().sum::<f64>() / span.len() as f64;
        let better = match best {
            None => true,
            Some((_, best_lr)) => mean_lr > best_lr,
        };
        if better {
            best = Some((t, mean_lr));
        }
    }
    let (t, _) = best.expect("at least one finite window is <= the median");
    Ok(CurvatureAnalysis {
        mean_loss_per_lr: mean_loss_per_lr.to_vec(),
        curvature,
        window_size,
        selected_window: Some((t + 1, t + window_size)),
        selected_lr: values[t + window_size],
        fallback: false,
    })
}

/// Grid index where the loss landscape stops improving: the first infinite
/// mean, or failing that the index of the smallest mean. With pre-step loss
/// attribution this marks the first unstable rate to within one grid step.
pub fn instability_onset(mean_loss_per_lr: &[f64]) -> Option<usize> {
    if let Some(idx) = mean_loss_per_lr.iter().position(|l| !l.is_finite()) {
        return Some(idx);
    }
    mean_loss_per_lr
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
}
