//! Per-component timing: Adam, bind+tape, forward, backward.

use hinted_core::autodiff::*;
use hinted_core::model::*;
use hinted_core::pose::PoseLayout;
use std::time::Instant;

fn main() {
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
    let enc = EncoderConfig::default_vector(32);
    let mut model =
        HintedModel::build(ModelVariant::HintedResidual, enc, PoseLayout::Scalar1D, 3).unwrap();
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    println!("total params: {total}");

    // Adam alone with fake gradients.
    let mut state = AdamState::new(&sizes);
    let grads_owned: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![1e-3; n]).collect();
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let grads: Vec<Option<&[f64]>> = grads_owned.iter().map(|g| Some(g.as_slice())).collect();
        let mut params = model.parameters_mut();
        adam_step(&mut params, &grads, &mut state, 1e-4).unwrap();
    }
    println!("adam_step: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // Bind (param copy into tape).
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let _b = model.bind(&mut tape);
    }
    println!("bind: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // Forward only, batch 8.
    let batch = 8;
    let input = Tensor::filled(&[batch, 32], 0.3);
    let hint = Tensor::filled(&[batch, 1], 0.1);
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let out = model.forward_batch(&mut tape, &input, Some(&hint)).unwrap();
        std::hint::black_box(tape.value(out).data()[0]);
    }
    println!("forward batch 8: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // Forward + backward.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let out = model.forward_batch(&mut tape, &input, Some(&hint)).unwrap();
        let s = tape.sum(out);
        tape.backward(s).unwrap();
    }
    println!("forward+backward batch 8: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // Backward repeated on one tape.
    let mut tape = Tape::new();
    let out = model.forward_batch(&mut tape, &input, Some(&hint)).unwrap();
    let s = tape.sum(out);
    tape.backward(s).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps {
        tape.backward(s).unwrap();
    }
    println!("backward alone (warm tape): {:.1} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
