//! Evaluation, iteration-convergence curves, mode statistics, sweeps.

use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{
    sample_uninformed_hint, EncoderConfig, HintConfig, HintedModel, ModelVariant,
};
use crate::pose::{heading_error, quat_angular_error, PoseLayout};
use crate::rng;
use crate::synth::{single_features, Dataset};
use crate::Tape;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Median of a sample; even-length inputs average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: u64,
    pub target: Vec<f64>,
    pub prediction: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub position_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angular_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub altitude_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub median_position_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_angular_error: Option<f64>,
}

/// Test-set evaluation: medians over the full split, per-iteration curves
/// (indexed from 1), and one record per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub n_samples: u64,
    pub median_position_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_angular_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_altitude_error: Option<f64>,
    pub degenerate_headings: u64,
    pub curves: Vec<CurvePoint>,
    pub records: Vec<SampleRecord>,
}

/// Per-sample de-whitened-unit errors between a predicted and true pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrors {
    pub position: f64,
    pub angular: Option<f64>,
    pub altitude: Option<f64>,
    pub degenerate: bool,
}

/// Layout-aware error metrics: Euclidean position error (lateral only for
/// aerial poses, with altitude reported separately), quaternion or heading
/// angular error in degrees.
pub fn pose_errors(layout: PoseLayout, prediction: &[f64], target: &[f64]) -> Result<PoseErrors> {
    match layout {
        PoseLayout::Scalar1D => Ok(PoseErrors {
            position: (prediction[0] - target[0]).abs(),
            angular: None,
            altitude: None,
            degenerate: false,
        }),
        PoseLayout::PlanarAerial => {
            let dx = prediction[0] - target[0];
            let dy = prediction[1] - target[1];
            let h = heading_error(
                &[prediction[3], prediction[4]],
                &[target[3], target[4]],
            )?;
            Ok(PoseErrors {
                position: (dx * dx + dy * dy).sqrt(),
                angular: Some(h.degrees),
                altitude: Some((prediction[2] - target[2]).abs()),
                degenerate: h.degenerate,
            })
        }
        PoseLayout::SixDof => {
            let dp: f64 = (0..3).map(|i| (prediction[i] - target[i]).powi(2)).sum();
            let q_pred = [prediction[3], prediction[4], prediction[5], prediction[6]];
            let q_gt = [target[3], target[4], target[5], target[6]];
            Ok(PoseErrors {
                position: dp.sqrt(),
                angular: Some(quat_angular_error(&q_pred, &q_gt)?),
                altitude: None,
                degenerate: false,
            })
        }
    }
}

/// Evaluates a trained model on the test split. The baseline runs a single
/// feed-forward pass per sample and ignores hints entirely; hinted variants
/// start from a seeded uninformed hint and refine recurrently. Errors are in
/// de-whitened units; curves report the median error at every iteration
/// index up to the configured cap.
pub fn evaluate(
    model: &HintedModel,
    dataset: &Dataset,
    hint_cfg: &HintConfig,
    eval_seed: u64,
    strict: bool,
) -> Result<EvalReport> {
    let test = dataset.test();
    let layout = model.layout();
    let d = model.pose_dim();
    let hinted = model.variant().is_hinted();
    let max_iters = if hinted { hint_cfg.max_iterations.max(1) } else { 1 };

    let mut records = Vec::with_capacity(test.len() as usize);
    let mut per_iter_pos: Vec<Vec<f64>> = vec![Vec::new(); max_iters];
    let mut per_iter_ang: Vec<Vec<f64>> = vec![Vec::new(); max_iters];
    let mut degenerate = 0u64;

    for i in 0..test.len() {
        let sample = test.sample(i)?;
        let input = single_features(&sample)?;
        let (poses, iterations, converged): (Vec<Vec<f64>>, usize, bool) = if hinted {
            let mut hint_rng = rng::stream(eval_seed, "eval-hint", i);
            let hint0 = sample_uninformed_hint(d, &mut hint_rng)?;
            let trace = model.recurrent_infer(&input, &hint0, hint_cfg, !strict)?;
            let poses = (1..=max_iters).map(|k| trace.pose_at_iteration(k).to_vec()).collect();
            (poses, trace.iterations, trace.converged)
        } else {
            let mut tape = Tape::with_parallelism(!strict);
            let out = model.forward_batch(&mut tape, &input, None)?;
            let pose = model.whiteners.dewhiten_vec(tape.value(out).data())?;
            (vec![pose], 1, true)
        };

        for (k, pose) in poses.iter().enumerate() {
            let err = pose_errors(layout, pose, &sample.target)?;
            per_iter_pos[k].push(err.position);
            if let Some(a) = err.angular {
                per_iter_ang[k].push(a);
            }
        }

        let final_pose = poses.last().expect("at least one iteration");
        let err = pose_errors(layout, final_pose, &sample.target)?;
        if err.degenerate {
            degenerate += 1;
        }
        records.push(SampleRecord {
            index: i,
            target: sample.target.clone(),
            prediction: final_pose.clone(),
            iterations,
            converged,
            position_error: err.position,
            angular_error: err.angular,
            altitude_error: err.altitude,
        });
    }

    let curves = (0..max_iters)
        .map(|k| CurvePoint {
            iteration: k + 1,
            median_position_error: median(&per_iter_pos[k]),
            median_angular_error: if per_iter_ang[k].is_empty() {
                None
            } else {
                Some(median(&per_iter_ang[k]))
            },
        })
        .collect();

    let positions: Vec<f64> = records.iter().map(|r| r.position_error).collect();
    let angles: Vec<f64> = records.iter().filter_map(|r| r.angular_error).collect();
    let alts: Vec<f64> = records.iter().filter_map(|r| r.altitude_error).collect();
    Ok(EvalReport {
        variant: model.variant().to_string(),
        n_samples: test.len(),
        median_position_error: median(&positions),
        median_angular_error: if angles.is_empty() { None } else { Some(median(&angles)) },
        median_altitude_error: if alts.is_empty() { None } else { Some(median(&alts)) },
        degenerate_headings: degenerate,
        curves,
        records,
    })
}

/// Writes `summary.json` (report without records), `records.jsonl` (one
/// JSON object per sample) and `curves.csv` under `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut summary = report.clone();
    summary.records = Vec::new();
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text)?;

    let mut records = String::new();
    for r in &report.records {
        records.push_str(&serde_json::to_string(r)?);
        records.push('\n');
    }
    std::fs::write(dir.join("records.jsonl"), records)?;

    let mut curves = String::from("iteration,median_position_error,median_angular_error\n");
    for c in &report.curves {
        let _ = write!(curves, "{},{}", c.iteration, c.median_position_error);
        match c.median_angular_error {
            Some(a) => {
                let _ = writeln!(curves, ",{a}");
            }
            None => curves.push_str(",\n"),
        }
    }
    std::fs::write(dir.join("curves.csv"), curves)?;
    Ok(())
}

/// Fractions of predictions within `delta` of each anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub delta: f64,
    pub n: u64,
    pub frac_mode_a: f64,
    pub frac_mode_b: f64,
    pub frac_midpoint: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Counts predictions within `delta` (Euclidean) of mode A, mode B, and the
/// midpoint. The three balls must be pairwise disjoint or the call is
/// rejected, so the fractions never double-count.
pub fn mode_metrics(
    predictions: &[Vec<f64>],
    mode_a: &[f64],
    mode_b: &[f64],
    midpoint: &[f64],
    delta: f64,
) -> Result<ModeReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("delta must be positive".into()));
    }
    let anchors = [mode_a, mode_b, midpoint];
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[i + 1..] {
            if dist(a, b) <= 2.0 * delta {
                return Err(Error::InvalidInput(format!(
                    "mode regions overlap: anchors {:?} and {:?} are within 2*delta = {}",
                    a,
                    b,
                    2.0 * delta
                )));
            }
        }
    }
    let n = predictions.len() as u64;
    let frac = |anchor: &[f64]| -> f64 {
        if n == 0 {
            return 0.0;
        }
        predictions.iter().filter(|p| dist(p, anchor) <= delta).count() as f64 / n as f64
    };
    Ok(ModeReport {
        delta,
        n,
        frac_mode_a: frac(mode_a),
        frac_mode_b: frac(mode_b),
        frac_midpoint: frac(midpoint),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub median_position_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_angular_error: Option<f64>,
}

/// Trains one model per hint scale (identical seeds across runs) and
/// evaluates each on the test split. Requires at least two scales.
pub fn hint_scale_sweep(
    dataset: &Dataset,
    variant: ModelVariant,
    encoder: EncoderConfig,
    scales: &[f64],
    cfg: &TrainConfig,
    hint_cfg: &HintConfig,
) -> Result<Vec<SweepRow>> {
    if scales.len() < 2 {
        return Err(Error::InvalidInput("sweep needs at least two scales".into()));
    }
    if !variant.is_hinted() {
        return Err(Error::InvalidInput("hint scale sweeps need a hinted variant".into()));
    }
    let d = dataset.layout().pose_dim();
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        if !(scale > 0.0) {
            return Err(Error::InvalidInput(format!("hint scale {scale} must be positive")));
        }
        let mut model =
            HintedModel::build(variant, encoder.clone(), dataset.layout(), cfg.seed)?;
        let run_cfg = TrainConfig { hint_sigma: Some(vec![scale; d]), ..cfg.clone() };
        train(&mut model, dataset, &run_cfg)?;
        let report = evaluate(
            &model,
            dataset,
            hint_cfg,
            rng::derive_seed(cfg.seed, "sweep-eval", 0),
            cfg.strict,
        )?;
        rows.push(SweepRow {
            scale,
            median_position_error: report.median_position_error,
            median_angular_error: report.median_angular_error,
        });
    }
    Ok(rows)
}

/// Sweep table as CSV, one row per requested scale.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("scale,median_position_error,median_angular_error\n");
    for r in rows {
        let _ = write!(out, "{},{}", r.scale, r.median_position_error);
        match r.median_angular_error {
            Some(a) => {
                let _ = writeln!(out, ",{a}");
            }
            None => out.push_str(",\n"),
        }
    }
    out
}
