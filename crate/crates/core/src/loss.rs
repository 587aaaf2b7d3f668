//! Learned homoscedastic-uncertainty training loss.
//!
//! Each residual block contributes `||r||_2 * exp(-s) + s` with its own
//! learnable scalar `s`; the norm is the unsquared Euclidean norm taken per
//! sample and then averaged over the batch. For a fixed residual scale `r`
//! the term is strictly convex in `s` with its minimum at `s = ln r`, so the
//! weights settle at the log of each component's residual scale.
//!
//! The loss consumes de-whitened poses: callers route whitened predictions
//! through the inverse whitening transform first.

use crate::autodiff::{Parameter, Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use crate::pose::{BlockKind, PoseLayout};

/// Smoothing added under the square root so the norm stays differentiable at
/// exactly zero residual, which tests do hit.
pub const NORM_EPSILON: f64 = 1e-12;

/// The learnable balance weights. `s_q` exists when the layout has an
/// angular block, `s_z` when it has a separate altitude block. All start at
/// zero: with whitened targets the residual scale is near one, making zero a
/// neutral initial value.
#[derive(Debug, Clone)]
pub struct UncertaintyWeights {
    pub s_x: Parameter,
    pub s_q: Option<Parameter>,
    pub s_z: Option<Parameter>,
}

impl UncertaintyWeights {
    pub fn for_layout(layout: PoseLayout) -> Self {
        let scalar = |name: &str| Parameter::new(name, Tensor::scalar(0.0));
        Self {
            s_x: scalar("loss.s_x"),
            s_q: layout.has_kind(BlockKind::Angular).then(|| scalar("loss.s_q")),
            s_z: layout.has_kind(BlockKind::Altitude).then(|| scalar("loss.s_z")),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.s_x];
        out.extend(self.s_q.as_ref());
        out.extend(self.s_z.as_ref());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.s_x];
        out.extend(self.s_q.as_mut());
        out.extend(self.s_z.as_mut());
        out
    }
}

/// Tape handles for the bound uncertainty weights.
#[derive(Debug, Clone, Copy)]
pub struct BoundWeights {
    pub s_x: ValueId,
    pub s_q: Option<ValueId>,
    pub s_z: Option<ValueId>,
}

impl BoundWeights {
    pub fn for_kind(&self, kind: BlockKind) -> Result<ValueId> {
        match kind {
            BlockKind::Spatial => Ok(self.s_x),
            BlockKind::Angular => {
                self.s_q.ok_or_else(|| Error::InvalidInput("loss requires s_q weight".into()))
            }
            BlockKind::Altitude => {
                self.s_z.ok_or_else(|| Error::InvalidInput("loss requires s_z weight".into()))
            }
        }
    }
}

/// One block term: mean over the batch of the smoothed per-sample Euclidean
/// residual norm, attenuated by `exp(-s)`, plus `s`.
pub fn residual_norm_term(
    tape: &mut Tape,
    pred: ValueId,
    target: &Tensor,
    s: ValueId,
) -> Result<ValueId> {
    if tape.value(pred).shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "loss block: prediction {:?} vs target {:?}",
            tape.value(pred).shape(),
            target.shape()
        )));
    }
    let target_id = tape.constant(target);
    let diff = tape.sub(pred, target_id)?;
    let sq = tape.mul_elem(diff, diff)?;
    let sums = tape.row_sum(sq)?;
    let smoothed = tape.add_const(sums, NORM_EPSILON);
    let norms = tape.sqrt(smoothed);
    let mean_norm = tape.mean(norms);
    let neg_s = tape.neg(s);
    let attenuation = tape.exp(neg_s);
    let weighted = tape.mul_elem(mean_norm, attenuation)?;
    tape.add(weighted, s)
}

fn validate_unit_rows(t: &Tensor, what: &str) -> Result<()> {
    let d = *t.shape().last().unwrap_or(&0);
    for row in t.data().chunks(d.max(1)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "{what} targets must be unit-norm, found norm {norm}"
            )));
        }
    }
    Ok(())
}

fn validate_hemisphere_rows(t: &Tensor) -> Result<()> {
    let d = *t.shape().last().unwrap_or(&0);
    for row in t.data().chunks(d.max(1)) {
        for &v in row {
            if v != 0.0 {
                if v < 0.0 {
                    return Err(Error::InvalidInput(
                        "orientation targets must be hemisphere-normalized \
                         (first non-zero component positive)"
                            .into(),
                    ));
                }
                break;
            }
        }
    }
    Ok(())
}

/// Terrestrial loss: position block weighted by `s_x`, orientation block by
/// `s_q`, batch-averaged. Orientation targets must arrive unit-norm and
/// hemisphere-normalized; that is the caller's contract and is enforced.
pub fn pose_loss(
    tape: &mut Tape,
    pred_pos: ValueId,
    target_pos: &Tensor,
    pred_ori: ValueId,
    target_ori: &Tensor,
    w: &BoundWeights,
) -> Result<ValueId> {
    validate_unit_rows(target_ori, "orientation")?;
    validate_hemisphere_rows(target_ori)?;
    let s_q = w.for_kind(BlockKind::Angular)?;
    let pos = residual_norm_term(tape, pred_pos, target_pos, w.s_x)?;
    let ori = residual_norm_term(tape, pred_ori, target_ori, s_q)?;
    tape.add(pos, ori)
}

/// Aerial loss: lateral (`s_x`), altitude (`s_z`) and heading (`s_q`) terms.
pub fn aerial_pose_loss(
    tape: &mut Tape,
    pred_lateral: ValueId,
    target_lateral: &Tensor,
    pred_alt: ValueId,
    target_alt: &Tensor,
    pred_heading: ValueId,
    target_heading: &Tensor,
    w: &BoundWeights,
) -> Result<ValueId> {
    validate_unit_rows(target_heading, "heading")?;
    let s_z = w.for_kind(BlockKind::Altitude)?;
    let s_q = w.for_kind(BlockKind::Angular)?;
    let lat = residual_norm_term(tape, pred_lateral, target_lateral, w.s_x)?;
    let alt = residual_norm_term(tape, pred_alt, target_alt, s_z)?;
    let head = residual_norm_term(tape, pred_heading, target_heading, s_q)?;
    let partial = tape.add(lat, alt)?;
    tape.add(partial, head)
}
