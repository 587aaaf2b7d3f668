//! Hint sampling and recurrent-inference configuration.
//!
//! Training hints are informed: Gaussian noise around the whitened ground
//! truth. Inference hints are uninformed: unit-scale normal draws. Hints live
//! in whitened coordinates end to end, so one sigma suits every environment.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Hint noise and recurrence settings.
///
/// Inference hints always come from the unit normal; a uniform-within-bounds
/// alternative would slot in here as another distribution variant but is not
/// implemented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintConfig {
    /// Per-axis training noise, whitened units.
    pub train_sigma: Vec<f64>,
    pub max_iterations: usize,
    /// Recurrence stops once successive whitened predictions move less than
    /// this far (Euclidean norm).
    pub convergence_tolerance: f64,
}

impl HintConfig {
    pub fn new(train_sigma: Vec<f64>) -> Self {
        Self { train_sigma, max_iterations: 20, convergence_tolerance: 1e-3 }
    }

    pub fn validate(&self, pose_dim: usize) -> Result<()> {
        if self.train_sigma.len() != pose_dim {
            return Err(Error::InvalidConfig(format!(
                "hint sigma has {} axes, pose has {}",
                self.train_sigma.len(),
                pose_dim
            )));
        }
        if self.train_sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("hint sigma must be positive per axis".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Informed training hint: `hint[i] ~ Normal(gt_whitened[i], sigma[i])`.
pub fn sample_training_hint<R: Rng>(
    gt_whitened: &[f64],
    sigma: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if gt_whitened.len() != sigma.len() {
        return Err(Error::ShapeMismatch(format!(
            "hint sigma has {} axes, target has {}",
            sigma.len(),
            gt_whitened.len()
        )));
    }
    gt_whitened
        .iter()
        .zip(sigma)
        .map(|(&gt, &s)| {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig("hint sigma must be positive".into()));
            }
            let n = Normal::new(gt, s)
                .map_err(|e| Error::InvalidConfig(format!("hint distribution: {e}")))?;
            Ok(n.sample(rng))
        })
        .collect()
}

/// Uninformed inference hint: `d` independent unit-normal draws.
pub fn sample_uninformed_hint<R: Rng>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidInput("hint dimension must be at least 1".into()));
    }
    Ok((0..d).map(|_| StandardNormal.sample(rng)).collect())
}

/// Record of one recurrent-inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrace {
    /// Whitened prediction per iteration, oldest first.
    pub whitened: Vec<Vec<f64>>,
    /// De-whitened pose per iteration.
    pub poses: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl InferenceTrace {
    pub fn final_pose(&self) -> &[f64] {
        self.poses.last().expect("trace has at least one iteration")
    }

    /// Pose as of iteration `k` (1-based); once the recurrence converges the
    /// last pose persists for later indices.
    pub fn pose_at_iteration(&self, k: usize) -> &[f64] {
        let idx = k.clamp(1, self.poses.len());
        &self.poses[idx - 1]
    }
}
