//! Pose representations and error metrics.
//!
//! Quaternions live on a double cover: `q` and `-q` encode the same rotation.
//! Both training targets and metric inputs are therefore mapped onto a single
//! hyper-hemisphere (unit norm, first non-zero component positive) so the
//! regressor never sees two labels for one orientation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// 6-DoF pose: position in meters plus a unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6D {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

/// Planar aerial pose: tile-frame position in meters, altitude in meters,
/// and a cosine-sine heading vector.
///
/// Ground-truth headings are unit-norm; predictions are not constrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePlanar {
    pub x: f64,
    pub y: f64,
    pub altitude: f64,
    pub heading: [f64; 2],
}

impl PosePlanar {
    pub fn from_yaw(x: f64, y: f64, altitude: f64, yaw_rad: f64) -> Self {
        Self { x, y, altitude, heading: [yaw_rad.cos(), yaw_rad.sin()] }
    }

    /// Target vector layout: `[x, y, altitude, cos, sin]`.
    pub fn to_target(&self) -> Vec<f64> {
        vec![self.x, self.y, self.altitude, self.heading[0], self.heading[1]]
    }
}

impl Pose6D {
    /// Target vector layout: `[x, y, z, qw, qx, qy, qz]` with the quaternion
    /// hemisphere-normalized.
    pub fn to_target(&self) -> Result<Vec<f64>> {
        let q = normalize_quaternion(&self.orientation)?;
        Ok(vec![self.position[0], self.position[1], self.position[2], q[0], q[1], q[2], q[3]])
    }
}

/// Unit-normalizes a quaternion and flips its sign so the first non-zero
/// component is strictly positive.
pub fn normalize_quaternion(q: &[f64; 4]) -> Result<[f64; 4]> {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidInput("cannot normalize a zero quaternion".into()));
    }
    let mut out = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
    for i in 0..4 {
        if out[i] != 0.0 {
            if out[i] < 0.0 {
                for v in &mut out {
                    *v = -*v;
                }
            }
            break;
        }
    }
    Ok(out)
}

/// Angle in degrees between two orientations, ignoring quaternion sign:
/// `2 * acos(min(1, |<q1, q2>|))` after normalizing both. Range `[0, 180]`.
pub fn quat_angular_error(q1: &[f64; 4], q2: &[f64; 4]) -> Result<f64> {
    let a = normalize_quaternion(q1)?;
    let b = normalize_quaternion(q2)?;
    let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]).abs().min(1.0);
    Ok(2.0 * dot.acos().to_degrees())
}

/// Angle between a predicted heading vector and ground truth, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingError {
    pub degrees: f64,
    /// Set when the prediction had (near-)zero length and the error was
    /// scored as 180 degrees instead of crashing.
    pub degenerate: bool,
}

/// Both vectors are normalized before comparison, so prediction scale is
/// irrelevant. A zero-length prediction scores 180 degrees with the
/// degenerate flag set; a zero-length ground truth is a caller error.
pub fn heading_error(pred: &[f64; 2], gt: &[f64; 2]) -> Result<HeadingError> {
    let gt_norm = (gt[0] * gt[0] + gt[1] * gt[1]).sqrt();
    if gt_norm == 0.0 || !gt_norm.is_finite() {
        return Err(Error::InvalidInput("ground-truth heading must be non-zero".into()));
    }
    let pred_norm = (pred[0] * pred[0] + pred[1] * pred[1]).sqrt();
    if pred_norm == 0.0 || !pred_norm.is_finite() {
        return Ok(HeadingError { degrees: 180.0, degenerate: true });
    }
    let cos = ((pred[0] * gt[0] + pred[1] * gt[1]) / (pred_norm * gt_norm)).clamp(-1.0, 1.0);
    Ok(HeadingError { degrees: cos.acos().to_degrees(), degenerate: false })
}

/// How a world's target vector is laid out, block by block.
///
/// Whitening, uncertainty weights and the loss are all applied per block,
/// which keeps the position/orientation split of the loss meaningful and
/// lets the aerial altitude carry its own scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseLayout {
    /// One scalar position in `[0, 1]` (the two-hills world).
    Scalar1D,
    /// `[x, y, altitude, cos, sin]` (aerial worlds).
    PlanarAerial,
    /// `[x, y, z, qw, qx, qy, qz]` (terrestrial 6-DoF).
    SixDof,
}

/// Which learned uncertainty weight a block is balanced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Spatial residual, weighted by `s_x`.
    Spatial,
    /// Altitude residual, weighted by `s_z`.
    Altitude,
    /// Angular residual (quaternion or heading), weighted by `s_q`.
    Angular,
}

/// A contiguous slice of the target vector with its own whitener.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub start: usize,
    pub dim: usize,
    pub kind: BlockKind,
}

impl PoseLayout {
    pub fn pose_dim(&self) -> usize {
        match self {
            PoseLayout::Scalar1D => 1,
            PoseLayout::PlanarAerial => 5,
            PoseLayout::SixDof => 7,
        }
    }

    pub fn blocks(&self) -> &'static [Block] {
        match self {
            PoseLayout::Scalar1D => &[Block {
                name: "position",
                start: 0,
                dim: 1,
                kind: BlockKind::Spatial,
            }],
            PoseLayout::PlanarAerial => &[
                Block { name: "lateral", start: 0, dim: 2, kind: BlockKind::Spatial },
                Block { name: "altitude", start: 2, dim: 1, kind: BlockKind::Altitude },
                Block { name: "heading", start: 3, dim: 2, kind: BlockKind::Angular },
            ],
            PoseLayout::SixDof => &[
                Block { name: "position", start: 0, dim: 3, kind: BlockKind::Spatial },
                Block { name: "orientation", start: 3, dim: 4, kind: BlockKind::Angular },
            ],
        }
    }

    pub fn has_kind(&self, kind: BlockKind) -> bool {
        self.blocks().iter().any(|b| b.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_blocks_tile_the_target() {
        for layout in [PoseLayout::Scalar1D, PoseLayout::PlanarAerial, PoseLayout::SixDof] {
            let mut covered = 0;
            for b in layout.blocks() {
                assert_eq!(b.start, covered);
                covered += b.dim;
            }
            assert_eq!(covered, layout.pose_dim());
        }
    }

    #[test]
    fn normalize_identity() {
        assert_eq!(normalize_quaternion(&[1.0, 0.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_flips_sign_of_first_nonzero() {
        let q = normalize_quaternion(&[-0.5, 0.5, 0.5, -0.5]).unwrap();
        assert_eq!(q, [0.5, -0.5, -0.5, 0.5]);
    }

    #[test]
    fn normalize_first_nonzero_is_second_entry() {
        let q = normalize_quaternion(&[0.0, -2.0, 0.0, 0.0]).unwrap();
        assert_eq!(q, [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(normalize_quaternion(&[0.0; 4]).is_err());
    }

    #[test]
    fn angular_error_self_is_zero() {
        let q = [0.3, 0.5, -0.2, 0.7];
        assert!(quat_angular_error(&q, &q).unwrap() < 1e-9);
    }

    #[test]
    fn angular_error_double_cover() {
        let q = [0.3, 0.5, -0.2, 0.7];
        let neg = [-0.3, -0.5, 0.2, -0.7];
        assert!(quat_angular_error(&q, &neg).unwrap() < 1e-9);
    }

    #[test]
    fn angular_error_ninety_degrees() {
        // Rotation by 90 degrees about x: q = (cos 45, sin 45, 0, 0); the
        // half-angle identity makes the angle to identity exactly 90.
        let half = std::f64::consts::FRAC_PI_4;
        let q = [half.cos(), half.sin(), 0.0, 0.0];
        let e = quat_angular_error(&[1.0, 0.0, 0.0, 0.0], &q).unwrap();
        assert!((e - 90.0).abs() < 1e-9);
    }

    #[test]
    fn heading_error_basics() {
        assert_eq!(heading_error(&[1.0, 0.0], &[1.0, 0.0]).unwrap().degrees, 0.0);
        // Prediction scale is normalized away.
        assert_eq!(heading_error(&[5.0, 0.0], &[1.0, 0.0]).unwrap().degrees, 0.0);
        let e = heading_error(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((e.degrees - 90.0).abs() < 1e-9);
        assert!(!e.degenerate);
    }

    #[test]
    fn heading_error_degenerate_prediction() {
        let e = heading_error(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(e.degrees, 180.0);
        assert!(e.degenerate);
    }

    #[test]
    fn heading_error_rejects_zero_ground_truth() {
        assert!(heading_error(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }
}
