//! The three regressor variants and their inference modes.
//!
//! All variants share an encoder that compresses the observation into a
//! feature embedding. The baseline regresses the whitened pose from the
//! embedding through a single 2048-wide hidden layer. The hinted variants
//! concatenate a hint (an estimate of the whitened pose) with the embedding
//! and mix the pair through three hidden layers of 1024/2048/1024 channels;
//! the residual variant additionally adds the hint to the head output, which
//! turns the task into residual regression. The hint and the residual
//! addition both live in whitened coordinates.
//!
//! Because hint and output share a representation, a hinted model can refine
//! its own prediction: feed it back as the next hint, reusing the embedding
//! across iterations.

mod encoder;
mod hints;

pub use encoder::{ConvEncoderConfig, EncoderConfig, VectorEncoderConfig};
pub use hints::{sample_training_hint, sample_uninformed_hint, HintConfig, InferenceTrace};

use crate::autodiff::{Parameter, Tape, Tensor, ValueId};
use crate::error::{Error, Result};
use crate::loss::{BoundWeights, UncertaintyWeights};
use crate::pose::PoseLayout;
use crate::rng;
use crate::whiten::PoseWhiteners;
use encoder::Encoder;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Baseline head width.
const BASELINE_HIDDEN: [usize; 1] = [2048];
/// Hinted head widths; three non-linear layers so hint and embedding mix.
const HINTED_HIDDEN: [usize; 3] = [1024, 2048, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    Baseline,
    HintedEmbedding,
    HintedResidual,
}

impl ModelVariant {
    pub fn is_hinted(&self) -> bool {
        !matches!(self, ModelVariant::Baseline)
    }

    fn hidden_widths(&self) -> &'static [usize] {
        if self.is_hinted() {
            &HINTED_HIDDEN
        } else {
            &BASELINE_HIDDEN
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelVariant::Baseline),
            "hinted-embedding" => Ok(ModelVariant::HintedEmbedding),
            "hinted-residual" => Ok(ModelVariant::HintedResidual),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant '{other}' (expected baseline, hinted-embedding or hinted-residual)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelVariant::Baseline => "baseline",
            ModelVariant::HintedEmbedding => "hinted-embedding",
            ModelVariant::HintedResidual => "hinted-residual",
        };
        f.write_str(s)
    }
}

/// Everything needed to rebuild a model's parameter shapes; stored verbatim
/// in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub encoder: EncoderConfig,
    pub layout: PoseLayout,
}

#[derive(Debug, Clone)]
struct Head {
    layers: Vec<(Parameter, Parameter)>,
}

impl Head {
    fn build(
        variant: ModelVariant,
        embedding_dim: usize,
        pose_dim: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Self {
        let hint_dim = if variant.is_hinted() { pose_dim } else { 0 };
        let mut dims = vec![embedding_dim + hint_dim];
        dims.extend_from_slice(variant.hidden_widths());
        dims.push(pose_dim);
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            let last = i == dims.len() - 2;
            // The output layer starts at zero, so an untrained model predicts
            // the whitened origin, i.e. the training-set mean pose — and an
            // untrained residual model passes its hint straight through.
            let std = if last { 0.0 } else { 1.0 / (d_in as f64).sqrt() };
            let name = if last { "out".to_string() } else { format!("fc{i}") };
            let weight = if last {
                Tensor::zeros(&[d_in, d_out])
            } else {
                Tensor::randn(&[d_in, d_out], std, rng)
            };
            layers.push((
                Parameter::new(format!("head.{name}.weight"), weight),
                Parameter::new(format!("head.{name}.bias"), Tensor::zeros(&[d_out])),
            ));
        }
        Self { layers }
    }

    /// Dense chain with relu between hidden layers, linear at the output.
    fn forward(&self, tape: &mut Tape, param_ids: &[ValueId], input: ValueId) -> Result<ValueId> {
        let n = self.layers.len();
        let mut x = input;
        for (i, pair) in param_ids.chunks(2).enumerate() {
            x = tape.dense(x, pair[0], pair[1])?;
            if i + 1 < n {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// Tape bindings for every model parameter, in `parameters()` order.
pub struct BoundModel {
    ids: Vec<ValueId>,
    n_encoder: usize,
    n_head: usize,
}

impl BoundModel {
    pub fn all_ids(&self) -> &[ValueId] {
        &self.ids
    }

    fn encoder_ids(&self) -> &[ValueId] {
        &self.ids[..self.n_encoder]
    }

    fn head_ids(&self) -> &[ValueId] {
        &self.ids[self.n_encoder..self.n_encoder + self.n_head]
    }

    /// Bound uncertainty weights, for feeding the loss.
    pub fn weights(&self, model: &HintedModel) -> BoundWeights {
        let mut rest = self.ids[self.n_encoder + self.n_head..].iter().copied();
        let s_x = rest.next().expect("s_x is always present");
        let s_q = model.uncertainty.s_q.as_ref().map(|_| rest.next().expect("s_q bound"));
        let s_z = model.uncertainty.s_z.as_ref().map(|_| rest.next().expect("s_z bound"));
        BoundWeights { s_x, s_q, s_z }
    }
}

/// A pose regressor: encoder, head, learned uncertainty weights, and the
/// per-block whiteners its hints and outputs are expressed in.
#[derive(Debug)]
pub struct HintedModel {
    pub config: ModelConfig,
    encoder: Encoder,
    head: Head,
    pub uncertainty: UncertaintyWeights,
    pub whiteners: PoseWhiteners,
    encoder_invocations: AtomicU64,
}

impl HintedModel {
    /// Assembles a variant with freshly initialized parameters. The seed
    /// fixes every init draw; identical seeds give identical models.
    pub fn build(
        variant: ModelVariant,
        encoder_config: EncoderConfig,
        layout: PoseLayout,
        seed: u64,
    ) -> Result<Self> {
        encoder_config.validate()?;
        let mut rng = rng::stream(seed, "model-init", 0);
        let encoder = Encoder::build(&encoder_config, &mut rng)?;
        let head = Head::build(variant, encoder_config.embedding_dim(), layout.pose_dim(), &mut rng);
        Ok(Self {
            config: ModelConfig { variant, encoder: encoder_config, layout },
            encoder,
            head,
            uncertainty: UncertaintyWeights::for_layout(layout),
            whiteners: PoseWhiteners::identity(layout),
            encoder_invocations: AtomicU64::new(0),
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn layout(&self) -> PoseLayout {
        self.config.layout
    }

    pub fn pose_dim(&self) -> usize {
        self.config.layout.pose_dim()
    }

    /// All trainable parameters in a stable order: encoder, head, then
    /// uncertainty weights. Checkpoints and the optimizer rely on this order.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = self.encoder.parameters();
        for (w, b) in &self.head.layers {
            out.push(w);
            out.push(b);
        }
        out.extend(self.uncertainty.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.encoder.parameters_mut();
        for (w, b) in &mut self.head.layers {
            out.push(w);
            out.push(b);
        }
        out.extend(self.uncertainty.parameters_mut());
        out
    }

    /// Total scalar count across head parameters (hidden + output layers).
    pub fn head_parameter_count(&self) -> usize {
        self.head.layers.iter().map(|(w, b)| w.value.len() + b.value.len()).sum()
    }

    /// Copies every parameter onto the tape. Gradients flow to these bound
    /// leaves; the trainer maps them back by position.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let params = self.parameters();
        let ids = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        BoundModel {
            ids,
            n_encoder: self.encoder.param_count(),
            n_head: self.head.layers.len() * 2,
        }
    }

    /// Encodes an observation batch into embeddings. Counted, so tests can
    /// assert recurrent inference reuses the embedding.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundModel, input: ValueId) -> Result<ValueId> {
        self.encoder_invocations.fetch_add(1, Ordering::Relaxed);
        self.encoder.forward(tape, bound.encoder_ids(), input)
    }

    /// Head pass over an embedding and (for hinted variants) a hint batch,
    /// including the residual skip when the variant has one. Returns the
    /// whitened pose prediction.
    pub fn head_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        embedding: ValueId,
        hint: Option<ValueId>,
    ) -> Result<ValueId> {
        let out = match (self.config.variant.is_hinted(), hint) {
            (false, None) => self.head.forward(tape, bound.head_ids(), embedding)?,
            (true, Some(hint)) => {
                let mixed = tape.concat(embedding, hint, 1)?;
                let raw = self.head.forward(tape, bound.head_ids(), mixed)?;
                if self.config.variant == ModelVariant::HintedResidual {
                    tape.add(raw, hint)?
                } else {
                    raw
                }
            }
            (false, Some(_)) => {
                return Err(Error::InvalidInput("baseline model takes no hint".into()))
            }
            (true, None) => {
                return Err(Error::InvalidInput(format!(
                    "{} model requires a hint",
                    self.config.variant
                )))
            }
        };
        Ok(out)
    }

    /// One feed-forward pass over a batch: bind, encode, head. The hint batch
    /// must be present exactly when the variant is hinted.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        input: &Tensor,
        hint: Option<&Tensor>,
    ) -> Result<ValueId> {
        self.encoder.validate_input(input)?;
        if let Some(h) = hint {
            let b = input.shape()[0];
            if h.shape() != [b, self.pose_dim()] {
                return Err(Error::ShapeMismatch(format!(
                    "hint batch must be [{b},{}], got {:?}",
                    self.pose_dim(),
                    h.shape()
                )));
            }
        }
        let bound = self.bind(tape);
        let input_id = tape.leaf(input.clone());
        let hint_id = hint.map(|h| tape.leaf(h.clone()));
        let emb = self.encode(tape, &bound, input_id)?;
        self.head_forward(tape, &bound, emb, hint_id)
    }

    /// Iterative refinement on a single observation: the embedding is
    /// computed once, then each prediction becomes the next hint until the
    /// whitened prediction moves less than the tolerance or the iteration
    /// cap is reached.
    pub fn recurrent_infer(
        &self,
        input: &Tensor,
        hint0: &[f64],
        cfg: &HintConfig,
        parallel: bool,
    ) -> Result<InferenceTrace> {
        if !self.config.variant.is_hinted() {
            return Err(Error::InvalidInput(
                "recurrent inference requires a hinted variant".into(),
            ));
        }
        if cfg.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        self.encoder.validate_input(input)?;
        let d = self.pose_dim();
        if hint0.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "initial hint has {} axes, pose has {d}",
                hint0.len()
            )));
        }
        if input.shape()[0] != 1 {
            return Err(Error::InvalidInput("recurrent_infer takes a single observation".into()));
        }

        let mut tape = Tape::with_parallelism(parallel);
        let bound = self.bind(&mut tape);
        let input_id = tape.leaf(input.clone());
        let emb = self.encode(&mut tape, &bound, input_id)?;

        let mut trace = InferenceTrace {
            whitened: Vec::new(),
            poses: Vec::new(),
            iterations: 0,
            converged: false,
        };
        let mut hint = hint0.to_vec();
        for k in 1..=cfg.max_iterations {
            let hint_id = tape.leaf(Tensor::new(vec![1, d], hint.clone())?);
            let out = self.head_forward(&mut tape, &bound, emb, Some(hint_id))?;
            let w = tape.value(out).data().to_vec();
            let step = trace
                .whitened
                .last()
                .map(|prev| {
                    prev.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                });
            trace.poses.push(self.whiteners.dewhiten_vec(&w)?);
            trace.whitened.push(w.clone());
            trace.iterations = k;
            if let Some(step) = step {
                if step < cfg.convergence_tolerance {
                    trace.converged = true;
                    break;
                }
            }
            hint = w;
        }
        Ok(trace)
    }

    pub fn encoder_invocations(&self) -> u64 {
        self.encoder_invocations.load(Ordering::Relaxed)
    }

    /// Zeroes a parameter by name. Test hook for forcing degenerate heads
    /// (e.g. a residual model that passes its hint through untouched).
    pub fn zero_parameter(&mut self, name: &str) -> Result<()> {
        for p in self.parameters_mut() {
            if p.name == name {
                p.value.data_mut().fill(0.0);
                return Ok(());
            }
        }
        Err(Error::InvalidInput(format!("no parameter named '{name}'")))
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters().into_iter().find(|p| p.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_encoder(dim: usize) -> EncoderConfig {
        EncoderConfig::Vector(VectorEncoderConfig { input_dim: dim, widths: vec![8] })
    }

    #[test]
    fn baseline_head_parameter_count_matches_shape_arithmetic() {
        // Embedding 64, pose 7: 64*2048 + 2048 hidden, 2048*7 + 7 output.
        let cfg = EncoderConfig::Vector(VectorEncoderConfig { input_dim: 10, widths: vec![64] });
        let m = HintedModel::build(ModelVariant::Baseline, cfg, PoseLayout::SixDof, 0).unwrap();
        assert_eq!(m.head_parameter_count(), 64 * 2048 + 2048 + 2048 * 7 + 7);
    }

    #[test]
    fn hinted_first_layer_width_includes_hint() {
        let cfg = EncoderConfig::Vector(VectorEncoderConfig { input_dim: 10, widths: vec![64] });
        let m =
            HintedModel::build(ModelVariant::HintedEmbedding, cfg, PoseLayout::SixDof, 0).unwrap();
        let w0 = m.parameter("head.fc0.weight").unwrap();
        assert_eq!(w0.value.shape(), &[64 + 7, 1024]);
    }

    #[test]
    fn embedding_and_residual_variants_have_equal_parameter_counts() {
        let cfg = EncoderConfig::Vector(VectorEncoderConfig { input_dim: 10, widths: vec![16] });
        let e = HintedModel::build(ModelVariant::HintedEmbedding, cfg.clone(), PoseLayout::SixDof, 0)
            .unwrap();
        let r =
            HintedModel::build(ModelVariant::HintedResidual, cfg, PoseLayout::SixDof, 0).unwrap();
        let count = |m: &HintedModel| -> usize { m.parameters().iter().map(|p| p.value.len()).sum() };
        assert_eq!(count(&e), count(&r));
    }

    #[test]
    fn baseline_rejects_hint_and_hinted_requires_one() {
        let m = HintedModel::build(
            ModelVariant::Baseline,
            vec_encoder(4),
            PoseLayout::Scalar1D,
            1,
        )
        .unwrap();
        let mut tape = Tape::new();
        let input = Tensor::zeros(&[1, 4]);
        let hint = Tensor::zeros(&[1, 1]);
        assert!(m.forward_batch(&mut tape, &input, Some(&hint)).is_err());
        assert!(m.forward_batch(&mut tape, &input, None).is_ok());

        let h = HintedModel::build(
            ModelVariant::HintedEmbedding,
            vec_encoder(4),
            PoseLayout::Scalar1D,
            1,
        )
        .unwrap();
        let mut tape = Tape::new();
        assert!(h.forward_batch(&mut tape, &input, None).is_err());
    }

    #[test]
    fn residual_with_zeroed_head_passes_hint_through() {
        let mut m = HintedModel::build(
            ModelVariant::HintedResidual,
            vec_encoder(4),
            PoseLayout::PlanarAerial,
            3,
        )
        .unwrap();
        m.zero_parameter("head.out.weight").unwrap();
        m.zero_parameter("head.out.bias").unwrap();
        let mut tape = Tape::new();
        let input = Tensor::filled(&[1, 4], 0.3);
        let hint = Tensor::new(vec![1, 5], vec![0.1, -0.2, 0.3, -0.4, 0.5]).unwrap();
        let out = m.forward_batch(&mut tape, &input, Some(&hint)).unwrap();
        assert_eq!(tape.value(out).data(), hint.data());
    }

    #[test]
    fn embedding_with_zeroed_final_layer_ignores_hint() {
        let mut m = HintedModel::build(
            ModelVariant::HintedEmbedding,
            vec_encoder(4),
            PoseLayout::PlanarAerial,
            3,
        )
        .unwrap();
        m.zero_parameter("head.out.weight").unwrap();
        m.zero_parameter("head.out.bias").unwrap();
        let mut tape = Tape::new();
        let input = Tensor::filled(&[1, 4], 0.3);
        let hint = Tensor::new(vec![1, 5], vec![0.1, -0.2, 0.3, -0.4, 0.5]).unwrap();
        let out = m.forward_batch(&mut tape, &input, Some(&hint)).unwrap();
        assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unknown_variant_string_is_rejected() {
        assert!("hinted".parse::<ModelVariant>().is_err());
        assert_eq!("hinted-residual".parse::<ModelVariant>().unwrap(), ModelVariant::HintedResidual);
    }

    #[test]
    fn recurrent_infer_rejects_baseline() {
        let m = HintedModel::build(
            ModelVariant::Baseline,
            vec_encoder(4),
            PoseLayout::Scalar1D,
            1,
        )
        .unwrap();
        let cfg = HintConfig::new(vec![0.3]);
        assert!(m.recurrent_infer(&Tensor::zeros(&[1, 4]), &[0.0], &cfg, false).is_err());
    }

    #[test]
    fn recurrent_infer_fixed_point_converges_at_iteration_two() {
        // Zeroed residual head is the identity map on hints: prediction_1
        // equals hint0, prediction_2 equals prediction_1, converged at 2.
        let mut m = HintedModel::build(
            ModelVariant::HintedResidual,
            vec_encoder(4),
            PoseLayout::Scalar1D,
            5,
        )
        .unwrap();
        m.zero_parameter("head.out.weight").unwrap();
        m.zero_parameter("head.out.bias").unwrap();
        let cfg = HintConfig::new(vec![0.3]);
        let trace =
            m.recurrent_infer(&Tensor::filled(&[1, 4], 0.5), &[0.7], &cfg, false).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations, 2);
        assert_eq!(trace.whitened.len(), 2);
        for w in &trace.whitened {
            assert_eq!(w.as_slice(), &[0.7]);
        }
    }

    #[test]
    fn recurrent_infer_hint_ignoring_head_converges_in_two() {
        // Zero the hint columns of the first hidden layer: predictions no
        // longer depend on the hint, so iteration 2 repeats iteration 1.
        let mut m = HintedModel::build(
            ModelVariant::HintedEmbedding,
            vec_encoder(4),
            PoseLayout::Scalar1D,
            6,
        )
        .unwrap();
        {
            let emb_dim = m.config.encoder.embedding_dim();
            let params = m.parameters_mut();
            let w0 = params.into_iter().find(|p| p.name == "head.fc0.weight").unwrap();
            let out_w = w0.value.shape()[1];
            for row in emb_dim..emb_dim + 1 {
                for j in 0..out_w {
                    w0.value.data_mut()[row * out_w + j] = 0.0;
                }
            }
        }
        let cfg = HintConfig::new(vec![0.3]);
        let trace =
            m.recurrent_infer(&Tensor::filled(&[1, 4], 0.5), &[3.0], &cfg, false).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations, 2);
        assert_eq!(trace.whitened[0], trace.whitened[1]);
    }

    #[test]
    fn encoder_runs_once_per_recurrent_call() {
        let m = HintedModel::build(
            ModelVariant::HintedResidual,
            vec_encoder(4),
            PoseLayout::Scalar1D,
            7,
        )
        .unwrap();
        let cfg = HintConfig { train_sigma: vec![0.3], max_iterations: 9, convergence_tolerance: 0.0 };
        assert_eq!(m.encoder_invocations(), 0);
        let trace =
            m.recurrent_infer(&Tensor::filled(&[1, 4], 0.5), &[0.7], &cfg, false).unwrap();
        assert_eq!(trace.iterations, 9);
        assert_eq!(m.encoder_invocations(), 1);
        m.recurrent_infer(&Tensor::filled(&[1, 4], 0.5), &[0.7], &cfg, false).unwrap();
        assert_eq!(m.encoder_invocations(), 2);
    }

    #[test]
    fn single_iteration_recurrence_equals_forward_call() {
        let m = HintedModel::build(
            ModelVariant::HintedResidual,
            vec_encoder(4),
            PoseLayout::PlanarAerial,
            8,
        )
        .unwrap();
        let input = Tensor::filled(&[1, 4], 0.25);
        let hint0 = vec![0.3, -0.1, 0.9, 0.0, -0.5];
        let cfg = HintConfig { train_sigma: vec![0.2; 5], max_iterations: 1, convergence_tolerance: 1e-3 };
        let trace = m.recurrent_infer(&input, &hint0, &cfg, false).unwrap();
        assert_eq!(trace.iterations, 1);
        assert!(!trace.converged);

        let mut tape = Tape::new();
        let hint = Tensor::new(vec![1, 5], hint0).unwrap();
        let out = m.forward_batch(&mut tape, &input, Some(&hint)).unwrap();
        assert_eq!(trace.whitened[0].as_slice(), tape.value(out).data());
    }

    #[test]
    fn fixed_seed_gives_identical_models() {
        let cfg = vec_encoder(6);
        let a = HintedModel::build(ModelVariant::HintedResidual, cfg.clone(), PoseLayout::PlanarAerial, 42)
            .unwrap();
        let b = HintedModel::build(ModelVariant::HintedResidual, cfg, PoseLayout::PlanarAerial, 42)
            .unwrap();
        for (pa, pb) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }
}
