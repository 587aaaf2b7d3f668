//! Raw kernel timings at the hinted-head shapes, batch 8.

use std::time::Instant;

fn time<F: FnMut()>(label: &str, reps: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{label}: {:.2} ms", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);
}

fn main() {
    let reps = 30;
    // Big alloc + zero (grad buffer churn).
    time("alloc+zero 34MB", reps, || {
        let v = vec![0.0f64; 4_272_258];
        std::hint::black_box(&v);
    });

    let b = 8usize;
    let shapes = [(1024usize, 2048usize), (2048, 1024)];
    for (n_in, n_out) in shapes {
        let x = vec![0.5f64; b * n_in];
        let w = vec![0.25f64; n_in * n_out];
        let bias = vec![0.0f64; n_out];
        let dy = vec![0.1f64; b * n_out];
        let mut out = vec![0.0f64; b * n_out];
        let mut dx = vec![0.0f64; b * n_in];
        let mut dw = vec![0.0f64; n_in * n_out];
        time(&format!("dense fwd {n_in}x{n_out} b{b}"), reps, || {
            hinted_core::autodiff::bench_dense_forward(&x, &w, &bias, b, n_in, n_out, &mut out, true);
        });
        time(&format!("dense dX  {n_in}x{n_out} b{b}"), reps, || {
            hinted_core::autodiff::bench_dense_backward_input(&dy, &w, b, n_in, n_out, &mut dx, true);
        });
        time(&format!("dense dW  {n_in}x{n_out} b{b}"), reps, || {
            hinted_core::autodiff::bench_dense_backward_weights(&x, &dy, b, n_in, n_out, &mut dw, true);
        });
    }
}
