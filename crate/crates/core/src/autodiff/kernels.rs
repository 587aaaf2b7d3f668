//! Hot numeric kernels behind the tape operations.
//!
//! Every kernel accumulates each output element in a fixed order, so results
//! are bit-identical whether a kernel runs sequentially or parallel: work is
//! only ever partitioned across disjoint output slices, never across the
//! summation order of a single element.

use rayon::prelude::*;

/// Rows per slab when splitting `total` rows across the thread pool. Slab
/// boundaries only decide which thread computes which output elements; each
/// element's summation order is fixed by the kernel loops, so results do not
/// depend on this count. Fewer slabs keep streamed weight matrices hot.
fn slab_rows(total: usize, parallel: bool) -> usize {
    let slabs = if parallel { rayon::current_num_threads().max(1) } else { 1 };
    ((total + slabs - 1) / slabs).max(1)
}

/// Runs `f` over disjoint chunks of `out`, in parallel when asked.
/// `f(chunk_start_index, chunk)` must only write its own chunk.
fn for_each_slab<F>(out: &mut [f64], chunk: usize, parallel: bool, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if out.is_empty() {
        return;
    }
    if parallel {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i * chunk, c));
    }
}

/// y += a * x, the vectorizable inner step of every matmul-like kernel.
#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product over eight independent accumulator lanes. The lane split is
/// part of the kernel's defined summation order, not an optimization left to
/// chance; lane-parallel accumulation also vectorizes cleanly.
#[inline]
fn dot8(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let mut acc = [0.0f64; LANES];
    let chunks = n / LANES;
    for i in 0..chunks {
        let av = &a[i * LANES..(i + 1) * LANES];
        let bv = &b[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            acc[l] += av[l] * bv[l];
        }
    }
    let mut tail = 0.0;
    for j in chunks * LANES..n {
        tail += a[j] * b[j];
    }
    let head = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    head + tail
}

/// out[b, j] = sum_i x[b, i] * w[i, j] + bias[j]
pub fn dense_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
    out: &mut [f64],
    parallel: bool,
) {
    debug_assert_eq!(out.len(), batch * n_out);
    let rows_per_slab = slab_rows(batch, parallel);
    for_each_slab(out, rows_per_slab * n_out, parallel, |start, chunk| {
        let row0 = start / n_out;
        let rows = chunk.len() / n_out;
        for (r, out_row) in chunk.chunks_mut(n_out).enumerate() {
            out_row.copy_from_slice(bias);
            let _ = r;
        }
        // i-outer order streams each weight row once per slab while the
        // slab's output rows stay cache-resident.
        for i in 0..n_in {
            let wrow = &w[i * n_out..(i + 1) * n_out];
            for r in 0..rows {
                let xv = x[(row0 + r) * n_in + i];
                axpy(&mut chunk[r * n_out..(r + 1) * n_out], xv, wrow);
            }
        }
    });
}

/// dx[b, i] += sum_j dy[b, j] * w[i, j]
pub fn dense_backward_input(
    dy: &[f64],
    w: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
    dx: &mut [f64],
    parallel: bool,
) {
    debug_assert_eq!(dx.len(), batch * n_in);
    let rows_per_slab = slab_rows(batch, parallel);
    for_each_slab(dx, rows_per_slab * n_in, parallel, |start, chunk| {
        let row0 = start / n_in;
        let rows = chunk.len() / n_in;
        for i in 0..n_in {
            let wrow = &w[i * n_out..(i + 1) * n_out];
            for r in 0..rows {
                let dyrow = &dy[(row0 + r) * n_out..(row0 + r + 1) * n_out];
                chunk[r * n_in + i] += dot8(dyrow, wrow);
            }
        }
    });
}

/// dw[i, j] += sum_b x[b, i] * dy[b, j]
pub fn dense_backward_weights(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    parallel: bool,
) {
    debug_assert_eq!(dw.len(), n_in * n_out);
    // dw rows see dy repeatedly; fine-grained slabs balance the pool.
    let slabs = if parallel { 4 * rayon::current_num_threads().max(1) } else { 1 };
    let rows_per_slab = ((n_in + slabs - 1) / slabs).max(1);
    for_each_slab(dw, rows_per_slab * n_out, parallel, |start, chunk| {
        let i0 = start / n_out;
        let rows = chunk.len() / n_out;
        for r in 0..rows {
            let i = i0 + r;
            let dw_row = &mut chunk[r * n_out..(r + 1) * n_out];
            for b in 0..batch {
                let xv = x[b * n_in + i];
                axpy(dw_row, xv, &dy[b * n_out..(b + 1) * n_out]);
            }
        }
    });
}

/// db[j] += sum_b dy[b, j]
pub fn dense_backward_bias(dy: &[f64], batch: usize, n_out: usize, db: &mut [f64]) {
    for b in 0..batch {
        for j in 0..n_out {
            db[j] += dy[b * n_out + j];
        }
    }
}

/// Geometry of a conv2d call, precomputed once at record time.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

/// Cross-correlation: out[b, f, oh, ow] = sum_{c, kh, kw}
///   x[b, c, oh*s + kh - p, ow*s + kw - p] * kernel[f, c, kh, kw]
pub fn conv2d_forward(x: &[f64], kernel: &[f64], d: ConvDims, out: &mut [f64], parallel: bool) {
    let out_plane = d.h_out * d.w_out;
    let out_image = d.c_out * out_plane;
    debug_assert_eq!(out.len(), d.batch * out_image);
    for_each_slab(out, out_plane, parallel, |start, plane| {
        let b = start / out_image;
        let f = (start % out_image) / out_plane;
        conv2d_forward_plane(x, kernel, d, b, f, plane);
    });
}

fn conv2d_forward_plane(x: &[f64], kernel: &[f64], d: ConvDims, b: usize, f: usize, out: &mut [f64]) {
    let in_plane = d.h * d.w;
    let x_img = &x[b * d.c_in * in_plane..(b + 1) * d.c_in * in_plane];
    for c in 0..d.c_in {
        let x_ch = &x_img[c * in_plane..(c + 1) * in_plane];
        for kh in 0..d.k {
            for kw in 0..d.k {
                let kv = kernel[((f * d.c_in + c) * d.k + kh) * d.k + kw];
                if kv == 0.0 {
                    continue;
                }
                for oh in 0..d.h_out {
                    let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                    if ih < 0 || ih as usize >= d.h {
                        continue;
                    }
                    let ih = ih as usize;
                    let out_row = &mut out[oh * d.w_out..(oh + 1) * d.w_out];
                    if d.stride == 1 {
                        // Contiguous segment: clip the ow range to stay in bounds.
                        let p = d.padding as isize;
                        let ow_lo = (p - kw as isize).max(0) as usize;
                        let ow_hi = (d.w as isize + p - kw as isize).min(d.w_out as isize).max(0) as usize;
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let iw0 = (ow_lo as isize + kw as isize - p) as usize;
                        let xs = &x_ch[ih * d.w + iw0..ih * d.w + iw0 + (ow_hi - ow_lo)];
                        axpy(&mut out_row[ow_lo..ow_hi], kv, xs);
                    } else {
                        for ow in 0..d.w_out {
                            let iw = (ow * d.stride + kw) as isize - d.padding as isize;
                            if iw < 0 || iw as usize >= d.w {
                                continue;
                            }
                            out_row[ow] += kv * x_ch[ih * d.w + iw as usize];
                        }
                    }
                }
            }
        }
    }
}

/// dx[b, c, ih, iw] += sum_{f, kh, kw} kernel[f, c, kh, kw] * dy[b, f, oh, ow]
pub fn conv2d_backward_input(
    dy: &[f64],
    kernel: &[f64],
    d: ConvDims,
    dx: &mut [f64],
    parallel: bool,
) {
    let in_image = d.c_in * d.h * d.w;
    debug_assert_eq!(dx.len(), d.batch * in_image);
    for_each_slab(dx, in_image, parallel, |start, dx_img| {
        let b = start / in_image;
        let out_plane = d.h_out * d.w_out;
        for f in 0..d.c_out {
            let dy_plane = &dy[(b * d.c_out + f) * out_plane..(b * d.c_out + f + 1) * out_plane];
            for c in 0..d.c_in {
                let dx_ch = &mut dx_img[c * d.h * d.w..(c + 1) * d.h * d.w];
                for kh in 0..d.k {
                    for kw in 0..d.k {
                        let kv = kernel[((f * d.c_in + c) * d.k + kh) * d.k + kw];
                        if kv == 0.0 {
                            continue;
                        }
                        for oh in 0..d.h_out {
                            let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                            if ih < 0 || ih as usize >= d.h {
                                continue;
                            }
                            let ih = ih as usize;
                            for ow in 0..d.w_out {
                                let iw = (ow * d.stride + kw) as isize - d.padding as isize;
                                if iw < 0 || iw as usize >= d.w {
                                    continue;
                                }
                                dx_ch[ih * d.w + iw as usize] += kv * dy_plane[oh * d.w_out + ow];
                            }
                        }
                    }
                }
            }
        }
    });
}

/// dk[f, c, kh, kw] += sum_{b, oh, ow} x[b, c, ih, iw] * dy[b, f, oh, ow]
pub fn conv2d_backward_kernel(
    x: &[f64],
    dy: &[f64],
    d: ConvDims,
    dk: &mut [f64],
    parallel: bool,
) {
    let filter = d.c_in * d.k * d.k;
    debug_assert_eq!(dk.len(), d.c_out * filter);
    for_each_slab(dk, filter, parallel, |start, dk_f| {
        let f = start / filter;
        let out_plane = d.h_out * d.w_out;
        let in_plane = d.h * d.w;
        for b in 0..d.batch {
            let dy_plane = &dy[(b * d.c_out + f) * out_plane..(b * d.c_out + f + 1) * out_plane];
            for c in 0..d.c_in {
                let x_ch = &x[(b * d.c_in + c) * in_plane..(b * d.c_in + c + 1) * in_plane];
                for kh in 0..d.k {
                    for kw in 0..d.k {
                        let mut acc = 0.0;
                        for oh in 0..d.h_out {
                            let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                            if ih < 0 || ih as usize >= d.h {
                                continue;
                            }
                            let ih = ih as usize;
                            if d.stride == 1 {
                                let p = d.padding as isize;
                                let ow_lo = (p - kw as isize).max(0) as usize;
                                let ow_hi =
                                    (d.w as isize + p - kw as isize).min(d.w_out as isize).max(0) as usize;
                                if ow_lo >= ow_hi {
                                    continue;
                                }
                                let iw0 = (ow_lo as isize + kw as isize - p) as usize;
                                acc += dot8(
                                    &x_ch[ih * d.w + iw0..ih * d.w + iw0 + (ow_hi - ow_lo)],
                                    &dy_plane[oh * d.w_out + ow_lo..oh * d.w_out + ow_hi],
                                );
                            } else {
                                for ow in 0..d.w_out {
                                    let iw = (ow * d.stride + kw) as isize - d.padding as isize;
                                    if iw < 0 || iw as usize >= d.w {
                                        continue;
                                    }
                                    acc += x_ch[ih * d.w + iw as usize] * dy_plane[oh * d.w_out + ow];
                                }
                            }
                        }
                        dk_f[(c * d.k + kh) * d.k + kw] += acc;
                    }
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dense_forward_parallel_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (b, n_in, n_out) = (5, 37, 41);
        let x = randv(b * n_in, &mut rng);
        let w = randv(n_in * n_out, &mut rng);
        let bias = randv(n_out, &mut rng);
        let mut seq = vec![0.0; b * n_out];
        let mut par = vec![0.0; b * n_out];
        dense_forward(&x, &w, &bias, b, n_in, n_out, &mut seq, false);
        dense_forward(&x, &w, &bias, b, n_in, n_out, &mut par, true);
        assert_eq!(seq, par);
    }

    #[test]
    fn conv_forward_parallel_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = ConvDims {
            batch: 3,
            c_in: 2,
            h: 9,
            w: 9,
            c_out: 4,
            k: 3,
            stride: 1,
            padding: 1,
            h_out: 9,
            w_out: 9,
        };
        let x = randv(d.batch * d.c_in * d.h * d.w, &mut rng);
        let kernel = randv(d.c_out * d.c_in * d.k * d.k, &mut rng);
        let mut seq = vec![0.0; d.batch * d.c_out * d.h_out * d.w_out];
        let mut par = seq.clone();
        conv2d_forward(&x, &kernel, d, &mut seq, false);
        conv2d_forward(&x, &kernel, d, &mut par, true);
        assert_eq!(seq, par);
    }
}
