//! Rough training-throughput probe used to size test budgets.

use hinted_core::model::*;
use hinted_core::pose::PoseLayout;
use hinted_core::synth::*;
use hinted_core::train::*;
use std::time::Instant;

fn main() {
    let ds = Dataset::build(&DatasetConfig {
        world: WorldConfig::TwoHills(TwoHillsDatasetConfig::default()),
        camera: Default::default(),
        train_samples: 512, test_samples: 64, seed: 1,
    }).unwrap();
    for batch in [8usize, 16] {
        let mut model = HintedModel::build(ModelVariant::HintedResidual,
            ds.default_encoder_config(), PoseLayout::Scalar1D, 3).unwrap();
        let cfg = TrainConfig { iterations: 30, batch_size: batch, seed: 5, ..Default::default() };
        let t0 = Instant::now();
        train(&mut model, &ds, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64() / 30.0;
        println!("two-hills HR batch {batch}: {:.1} ms/step -> 5k steps = {:.1} min", dt*1e3, dt*5000.0/60.0);
    }

    let ds = Dataset::build(&DatasetConfig {
        world: WorldConfig::AerialProcedural(ProceduralTileConfig::default()),
        camera: CameraSampleSpec::default(),
        train_samples: 256, test_samples: 32, seed: 2,
    }).unwrap();
    for (batch, widths) in [(8usize, vec![8usize,16,32]), (16, vec![8,16,32]), (8, vec![16,32,64])] {
        let enc = EncoderConfig::Conv(ConvEncoderConfig { in_channels: 3, image_size: 64, widths: widths.clone() });
        let mut model = HintedModel::build(ModelVariant::HintedResidual, enc, PoseLayout::PlanarAerial, 3).unwrap();
        let cfg = TrainConfig { iterations: 10, batch_size: batch, seed: 5, ..Default::default() };
        let t0 = Instant::now();
        train(&mut model, &ds, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64() / 10.0;
        println!("aerial HR batch {batch} widths {widths:?}: {:.1} ms/step -> 5k = {:.1} min", dt*1e3, dt*5000.0/60.0);
    }

    let mut model = HintedModel::build(ModelVariant::Baseline,
        EncoderConfig::Conv(ConvEncoderConfig { in_channels: 3, image_size: 64, widths: vec![8,16,32] }),
        PoseLayout::PlanarAerial, 3).unwrap();
    let cfg = TrainConfig { iterations: 10, batch_size: 8, seed: 5, ..Default::default() };
    let t0 = Instant::now();
    train(&mut model, &ds, &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64() / 10.0;
    println!("aerial baseline batch 8 widths [8,16,32]: {:.1} ms/step -> 5k = {:.1} min", dt*1e3, dt*5000.0/60.0);
}
