//! End-to-end probe of the two-hills mode study.

use hinted_core::model::*;
use hinted_core::pose::PoseLayout;
use hinted_core::synth::*;
use hinted_core::train::*;
use std::time::Instant;

fn main() {
    hinted_core::tune_allocator();
    let seed = 42;
    let ds = Dataset::build(&DatasetConfig {
        world: WorldConfig::TwoHills(TwoHillsDatasetConfig::default()),
        camera: Default::default(),
        train_samples: 4096,
        test_samples: 512,
        seed,
    })
    .unwrap();
    let cfg = TrainConfig { iterations: 5000, batch_size: 16, seed, ..Default::default() };
    let hint_cfg = HintConfig::new(vec![0.3]);

    // Baseline.
    let t0 = Instant::now();
    let mut base = HintedModel::build(
        ModelVariant::Baseline, ds.default_encoder_config(), PoseLayout::Scalar1D, seed).unwrap();
    train(&mut base, &ds, &cfg).unwrap();
    let report = evaluate(&base, &ds, &hint_cfg, seed, false).unwrap();
    let preds: Vec<Vec<f64>> = report.records.iter().map(|r| r.prediction.clone()).collect();
    let modes = mode_metrics(&preds, &[0.25], &[0.75], &[0.5], 0.05).unwrap();
    println!("baseline: {:.1}s  median err {:.4}", t0.elapsed().as_secs_f64(), report.median_position_error);
    println!("  midpoint frac {:.3}  A {:.3}  B {:.3}", modes.frac_midpoint, modes.frac_mode_a, modes.frac_mode_b);

    // Hinted residual.
    let t0 = Instant::now();
    let mut hr = HintedModel::build(
        ModelVariant::HintedResidual, ds.default_encoder_config(), PoseLayout::Scalar1D, seed).unwrap();
    train(&mut hr, &ds, &cfg).unwrap();
    let report = evaluate(&hr, &ds, &hint_cfg, seed, false).unwrap();
    let preds: Vec<Vec<f64>> = report.records.iter().map(|r| r.prediction.clone()).collect();
    let modes = mode_metrics(&preds, &[0.25], &[0.75], &[0.5], 0.05).unwrap();
    println!("hinted-residual: {:.1}s  median err {:.4}", t0.elapsed().as_secs_f64(), report.median_position_error);
    println!("  midpoint frac {:.3}  A {:.3}  B {:.3}", modes.frac_midpoint, modes.frac_mode_a, modes.frac_mode_b);
    let hits = modes.frac_mode_a + modes.frac_mode_b;
    println!("  some-hill {:.3}; A share of hits {:.3}", hits, modes.frac_mode_a / hits.max(1e-9));
    println!("  curves:");
    for c in &report.curves {
        println!("    iter {:>2}: median pos err {:.4}", c.iteration, c.median_position_error);
    }
}
