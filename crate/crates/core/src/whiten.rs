//! PCA whitening of regression targets.
//!
//! Targets are whitened per block (position, orientation, ...) so every
//! regressed axis starts at zero mean and unit variance, which removes the
//! need to hand-tune per-environment scales for weights and hints.
//! Predictions are de-whitened before the loss and before reporting.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Eigenvalues are floored here before the inverse square root, so
/// near-rank-deficient blocks (e.g. quaternions of forward-facing scenes)
/// whiten without blowing up. The round trip stays exact regardless.
pub const EIGENVALUE_FLOOR: f64 = 1e-6;

/// A fitted whitening transform `w(v) = F (v - mean)` with exact inverse
/// `w^-1(u) = G u + mean`, where `F = diag(lambda^-1/2) V^T` comes from the
/// eigendecomposition of the sample covariance (N-1 convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitener {
    dim: usize,
    mean: Vec<f64>,
    /// Row-major `dim x dim` forward transform.
    forward: Vec<f64>,
    /// Row-major `dim x dim` inverse transform.
    inverse: Vec<f64>,
}

impl Whitener {
    /// Fits a whitener to `n` row vectors of width `dim`. Requires `n >= 2`.
    pub fn fit(targets: &[f64], n: usize, dim: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "whitener needs at least 2 samples, got {n}"
            )));
        }
        if targets.len() != n * dim || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "expected {n}x{dim} target matrix, got {} values",
                targets.len()
            )));
        }
        let mut mean = vec![0.0; dim];
        for row in targets.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }

        // Sample covariance, N-1 convention.
        let mut cov = vec![0.0; dim * dim];
        for row in targets.chunks(dim) {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in i..dim {
                    cov[i * dim + j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] /= denom;
                cov[j * dim + i] = cov[i * dim + j];
            }
        }

        let (eigvals, eigvecs) = symmetric_eigen(&cov, dim);

        // forward = diag(l^-1/2) V^T, inverse = V diag(l^1/2)
        let mut forward = vec![0.0; dim * dim];
        let mut inverse = vec![0.0; dim * dim];
        for k in 0..dim {
            let l = eigvals[k].max(EIGENVALUE_FLOOR);
            let inv_s = 1.0 / l.sqrt();
            let s = l.sqrt();
            for i in 0..dim {
                // V stored column-per-eigenvector: V[i][k] = eigvecs[i*dim+k]
                forward[k * dim + i] = inv_s * eigvecs[i * dim + k];
                inverse[i * dim + k] = s * eigvecs[i * dim + k];
            }
        }
        Ok(Self { dim, mean, forward, inverse })
    }

    /// Identity whitener (zero mean, unit transforms) for untrained models.
    pub fn identity(dim: usize) -> Self {
        let mut forward = vec![0.0; dim * dim];
        let mut inverse = vec![0.0; dim * dim];
        for i in 0..dim {
            forward[i * dim + i] = 1.0;
            inverse[i * dim + i] = 1.0;
        }
        Self { dim, mean: vec![0.0; dim], forward, inverse }
    }

    /// Builds a whitener directly from its raw components. Used by the
    /// checkpoint loader and by tests that need a transform with known,
    /// recognizable scales.
    pub fn from_parts(mean: Vec<f64>, forward: Vec<f64>, inverse: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        if forward.len() != dim * dim || inverse.len() != dim * dim {
            return Err(Error::ShapeMismatch(
                "whitener transforms must be dim x dim".into(),
            ));
        }
        Ok(Self { dim, mean, forward, inverse })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn forward_matrix(&self) -> &[f64] {
        &self.forward
    }

    pub fn inverse_matrix(&self) -> &[f64] {
        &self.inverse
    }

    pub fn whiten(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += self.forward[i * self.dim + j] * (v[j] - self.mean[j]);
            }
            out[i] = acc;
        }
        Ok(out)
    }

    pub fn dewhiten(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut out = self.mean.clone();
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += self.inverse[i * self.dim + j] * v[j];
            }
            out[i] += acc;
        }
        Ok(out)
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "whitener dimension {} does not match vector length {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }
}

/// Per-block whiteners for a full target vector, aligned with
/// [`PoseLayout::blocks`](crate::pose::PoseLayout::blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseWhiteners {
    layout: crate::pose::PoseLayout,
    blocks: Vec<Whitener>,
}

impl PoseWhiteners {
    pub fn identity(layout: crate::pose::PoseLayout) -> Self {
        let blocks = layout.blocks().iter().map(|b| Whitener::identity(b.dim)).collect();
        Self { layout, blocks }
    }

    /// Fits one whitener per block from `n` raw target rows.
    pub fn fit(layout: crate::pose::PoseLayout, targets: &[f64], n: usize) -> Result<Self> {
        let d = layout.pose_dim();
        if targets.len() != n * d {
            return Err(Error::ShapeMismatch(format!(
                "expected {n}x{d} targets, got {} values",
                targets.len()
            )));
        }
        let mut blocks = Vec::new();
        for b in layout.blocks() {
            let mut cols = Vec::with_capacity(n * b.dim);
            for row in targets.chunks(d) {
                cols.extend_from_slice(&row[b.start..b.start + b.dim]);
            }
            blocks.push(Whitener::fit(&cols, n, b.dim)?);
        }
        Ok(Self { layout, blocks })
    }

    pub fn from_blocks(layout: crate::pose::PoseLayout, blocks: Vec<Whitener>) -> Result<Self> {
        let spec = layout.blocks();
        if blocks.len() != spec.len() || blocks.iter().zip(spec).any(|(w, b)| w.dim() != b.dim) {
            return Err(Error::ShapeMismatch("whitener blocks do not match layout".into()));
        }
        Ok(Self { layout, blocks })
    }

    pub fn layout(&self) -> crate::pose::PoseLayout {
        self.layout
    }

    pub fn blocks(&self) -> &[Whitener] {
        &self.blocks
    }

    pub fn whiten_vec(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.layout.pose_dim());
        for (b, w) in self.layout.blocks().iter().zip(&self.blocks) {
            out.extend(w.whiten(&raw[b.start..b.start + b.dim])?);
        }
        Ok(out)
    }

    pub fn dewhiten_vec(&self, whitened: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.layout.pose_dim());
        for (b, w) in self.layout.blocks().iter().zip(&self.blocks) {
            out.extend(w.dewhiten(&whitened[b.start..b.start + b.dim])?);
        }
        Ok(out)
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and eigenvectors as columns.
/// Dimensions here are tiny (<= 7), so Jacobi is both simple and exact
/// enough; sweeps stop once all off-diagonals vanish at 1e-14 scale.
fn symmetric_eigen(matrix: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..dim {
            for j in i + 1..dim {
                off += a[i * dim + j].abs();
            }
        }
        if off < 1e-14 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = a[p * dim + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * dim + p];
                let aqq = a[q * dim + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        a[j * dim + j].partial_cmp(&a[i * dim + i]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigvals: Vec<f64> = order.iter().map(|&k| a[k * dim + k]).collect();
    let mut eigvecs = vec![0.0; dim * dim];
    for (new_k, &old_k) in order.iter().enumerate() {
        for i in 0..dim {
            eigvecs[i * dim + new_k] = v[i * dim + old_k];
        }
    }
    (eigvals, eigvecs)
}
