//! Training loop and its loss plumbing.
//!
//! Each step draws a fresh batch from the training stream (cycling over the
//! split), samples a fresh informed hint per presentation, runs the model
//! forward in whitened space, de-whitens the prediction inside the graph,
//! and applies the uncertainty loss against raw targets. Everything is
//! driven by the experiment seed: strict mode makes two runs bit-identical.

mod eval;

pub use eval::{
    evaluate, hint_scale_sweep, median, mode_metrics, pose_errors, sweep_csv, write_report,
    CurvePoint, EvalReport, ModeReport, PoseErrors, SampleRecord, SweepRow,
};

use crate::autodiff::{adam_step, AdamState, Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use crate::loss;
use crate::model::{sample_training_hint, BoundModel, HintedModel};
use crate::pose::PoseLayout;
use crate::rng;
use crate::synth::{stack_features, Dataset, TrainStream};
use crate::whiten::PoseWhiteners;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-axis hint noise in whitened units; `None` uses the world default
    /// (0.3 everywhere, or 0.2 spatial / 0.5 angular for aerial poses).
    #[serde(default)]
    pub hint_sigma: Option<Vec<f64>>,
    pub seed: u64,
    /// Run every kernel sequentially for exact reproducibility.
    #[serde(default)]
    pub strict: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 64,
            learning_rate: 1e-4,
            hint_sigma: None,
            seed: 42,
            strict: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if let Some(sigma) = &self.hint_sigma {
            if sigma.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidConfig("hint sigma must be positive per axis".into()));
            }
        }
        Ok(())
    }
}

/// One loss-log row; `s` values are sampled after the optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub s: Vec<f64>,
}

#[derive(Debug)]
pub struct TrainResult {
    pub loss_log: Vec<LossRecord>,
    pub adam: AdamState,
}

impl TrainResult {
    /// Loss log as CSV: `step,loss,s_x[,s_q][,s_z]`.
    pub fn loss_log_csv(&self, model: &HintedModel) -> String {
        let mut out = String::from("step,loss,s_x");
        if model.uncertainty.s_q.is_some() {
            out.push_str(",s_q");
        }
        if model.uncertainty.s_z.is_some() {
            out.push_str(",s_z");
        }
        out.push('\n');
        for rec in &self.loss_log {
            let _ = write!(out, "{},{}", rec.step, rec.loss);
            for v in &rec.s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Fits per-block whiteners on training targets. Only the training stream
/// type is accepted here; there is no way to hand this function test data.
pub fn fit_whiteners(train: &TrainStream<'_>, layout: PoseLayout) -> Result<PoseWhiteners> {
    let n = train.len();
    let d = layout.pose_dim();
    let mut flat = Vec::with_capacity(n as usize * d);
    for i in 0..n {
        flat.extend(train.target(i)?);
    }
    PoseWhiteners::fit(layout, &flat, n as usize)
}

/// De-whitens an in-graph whitened block through constant dense weights, so
/// the loss sees raw-unit poses and gradients flow back through the inverse
/// transform.
fn dewhiten_in_graph(
    tape: &mut Tape,
    whiteners: &PoseWhiteners,
    block_idx: usize,
    pred_block: ValueId,
) -> Result<ValueId> {
    let w = &whiteners.blocks()[block_idx];
    let d = w.dim();
    // dense computes x * W + bias; dewhiten is G v + mean, so W = G^T.
    let g = w.inverse_matrix();
    let mut wt = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            wt[i * d + j] = g[j * d + i];
        }
    }
    let weight = tape.constant(&Tensor::new(vec![d, d], wt)?);
    let bias = tape.constant(&Tensor::from_vec(w.mean().to_vec()));
    tape.dense(pred_block, weight, bias)
}

/// Builds the layout-appropriate uncertainty loss for a whitened prediction
/// batch against raw targets. Predictions are de-whitened per block inside
/// the graph before the loss consumes them.
pub fn training_loss(
    tape: &mut Tape,
    model: &HintedModel,
    bound: &BoundModel,
    prediction: ValueId,
    raw_targets: &Tensor,
) -> Result<ValueId> {
    let layout = model.layout();
    let blocks = layout.blocks();
    let weights = bound.weights(model);
    let batch = raw_targets.shape()[0];
    let d = layout.pose_dim();
    if raw_targets.shape() != [batch, d] || tape.value(prediction).shape() != [batch, d] {
        return Err(Error::ShapeMismatch(format!(
            "training loss expects [{batch},{d}] prediction and targets, got {:?} and {:?}",
            tape.value(prediction).shape(),
            raw_targets.shape()
        )));
    }

    let mut dewhitened = Vec::with_capacity(blocks.len());
    let mut targets = Vec::with_capacity(blocks.len());
    for (bi, b) in blocks.iter().enumerate() {
        let pred_block = tape.slice_cols(prediction, b.start, b.dim)?;
        dewhitened.push(dewhiten_in_graph(tape, &model.whiteners, bi, pred_block)?);
        let mut data = Vec::with_capacity(batch * b.dim);
        for row in raw_targets.data().chunks(d) {
            data.extend_from_slice(&row[b.start..b.start + b.dim]);
        }
        targets.push(Tensor::new(vec![batch, b.dim], data)?);
    }

    match layout {
        PoseLayout::Scalar1D => {
            loss::residual_norm_term(tape, dewhitened[0], &targets[0], weights.s_x)
        }
        PoseLayout::SixDof => loss::pose_loss(
            tape,
            dewhitened[0],
            &targets[0],
            dewhitened[1],
            &targets[1],
            &weights,
        ),
        PoseLayout::PlanarAerial => loss::aerial_pose_loss(
            tape,
            dewhitened[0],
            &targets[0],
            dewhitened[1],
            &targets[1],
            dewhitened[2],
            &targets[2],
            &weights,
        ),
    }
}

/// Trains in place. Zero iterations is a no-op that leaves the model
/// untouched (whiteners included). Fresh hints are drawn per presentation,
/// indexed by the global presentation counter.
pub fn train(model: &mut HintedModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    crate::tune_allocator();
    cfg.validate()?;
    if model.layout() != dataset.layout() {
        return Err(Error::InvalidConfig(format!(
            "model layout {:?} does not match dataset layout {:?}",
            model.layout(),
            dataset.layout()
        )));
    }
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.value.len()).collect();
    let mut result = TrainResult { loss_log: Vec::new(), adam: AdamState::new(&sizes) };
    if cfg.iterations == 0 {
        return Ok(result);
    }

    let sigma = cfg.hint_sigma.clone().unwrap_or_else(|| dataset.default_hint_sigma());
    let d = model.pose_dim();
    if sigma.len() != d {
        return Err(Error::InvalidConfig(format!(
            "hint sigma has {} axes, pose has {d}",
            sigma.len()
        )));
    }

    let train_stream = dataset.train();
    model.whiteners = fit_whiteners(&train_stream, model.layout())?;
    let hinted = model.variant().is_hinted();

    for step in 0..cfg.iterations as u64 {
        let mut samples = Vec::with_capacity(cfg.batch_size);
        for j in 0..cfg.batch_size as u64 {
            samples.push(train_stream.sample(step * cfg.batch_size as u64 + j)?);
        }
        let features = stack_features(&samples)?;
        let targets = Tensor::from_rows(
            &samples.iter().map(|s| s.target.clone()).collect::<Vec<_>>(),
        )?;

        let hints = if hinted {
            let mut rows = Vec::with_capacity(samples.len());
            for (j, s) in samples.iter().enumerate() {
                let presentation = step * cfg.batch_size as u64 + j as u64;
                let whitened = model.whiteners.whiten_vec(&s.target)?;
                let mut hint_rng = rng::stream(cfg.seed, "train-hint", presentation);
                rows.push(sample_training_hint(&whitened, &sigma, &mut hint_rng)?);
            }
            Some(Tensor::from_rows(&rows)?)
        } else {
            None
        };

        let mut tape = Tape::with_parallelism(!cfg.strict);
        let bound = model.bind(&mut tape);
        let input_id = tape.leaf(features);
        let hint_id = hints.map(|h| tape.leaf(h));
        let emb = model.encode(&mut tape, &bound, input_id)?;
        let pred = model.head_forward(&mut tape, &bound, emb, hint_id)?;
        let loss_id = training_loss(&mut tape, model, &bound, pred, &targets)?;
        let loss_value = tape.value(loss_id).data()[0];
        tape.backward(loss_id)?;

        // Consuming the tape releases the bound parameter buffers, so the
        // Adam update below mutates the model's tensors in place.
        let grads = tape.into_gradients();
        let grad_refs: Vec<Option<&[f64]>> =
            bound.all_ids().iter().map(|&id| grads.get(id)).collect();
        let mut params = model.parameters_mut();
        adam_step(&mut params, &grad_refs, &mut result.adam, cfg.learning_rate)?;

        let s_values: Vec<f64> = model
            .uncertainty
            .parameters()
            .iter()
            .map(|p| p.value.data()[0])
            .collect();
        result.loss_log.push(LossRecord { step: step + 1, loss: loss_value, s: s_values });
    }
    Ok(result)
}
