//! Gradient integrity: every layer and both losses against central finite
//! differences, plus the naive matmul/convolution value oracles.

use hinted_core::autodiff::{Tape, Tensor, ValueId};
use hinted_core::loss::{aerial_pose_loss, pose_loss, residual_norm_term, BoundWeights};
use hinted_core::model::{
    ConvEncoderConfig, EncoderConfig, HintConfig, HintedModel, ModelVariant,
};
use hinted_core::pose::PoseLayout;
use hinted_core::rng::stream;
use hinted_core::train::training_loss;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks d(loss)/d(inputs[i]) against central differences for every
/// coordinate of every input, where `f` rebuilds the graph from scratch.
fn check_gradients(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[ValueId]) -> ValueId) {
    let mut tape = Tape::new();
    let ids: Vec<ValueId> =
        inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let loss = f(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> =
        ids.iter().map(|&id| tape.grad(id).unwrap().to_vec()).collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &ids);
        tape.value(loss).data()[0]
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    for (pi, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + H;
            let up = eval(&work);
            work[pi].data_mut()[k] = orig - H;
            let down = eval(&work);
            work[pi].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * H);
            let an = analytic[pi][k];
            assert!(
                rel_err(fd, an) < TOL,
                "input {pi} coord {k}: finite difference {fd} vs analytic {an}"
            );
        }
    }
}

/// Scalarizes a tensor with fixed pseudo-random coefficients so every output
/// coordinate contributes a distinct weight to the loss.
fn weighted_sum(tape: &mut Tape, y: ValueId, seed: u64) -> ValueId {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = stream(seed, "scalarize", 0);
    let coeffs = rand_tensor(&shape, &mut rng);
    let c = tape.constant(&coeffs);
    let prod = tape.mul_elem(y, c).unwrap();
    tape.sum(prod)
}

#[test]
fn dense_matches_naive_matmul_oracle() {
    // Independent triple-loop oracle for the forward value.
    let mut rng = stream(1, "dense-oracle", 0);
    let x = rand_tensor(&[3, 4], &mut rng);
    let w = rand_tensor(&[4, 2], &mut rng);
    let b = rand_tensor(&[2], &mut rng);

    let mut expected = vec![0.0; 3 * 2];
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = b.data()[j];
            for k in 0..4 {
                acc += x.data()[i * 4 + k] * w.data()[k * 2 + j];
            }
            expected[i * 2 + j] = acc;
        }
    }

    let mut tape = Tape::new();
    let (xi, wi, bi) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
    let y = tape.dense(xi, wi, bi).unwrap();
    for (got, want) in tape.value(y).data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn conv2d_matches_naive_six_loop_oracle() {
    let mut rng = stream(2, "conv-oracle", 0);
    let x = rand_tensor(&[1, 2, 5, 5], &mut rng);
    let k = rand_tensor(&[3, 2, 3, 3], &mut rng);
    let (stride, padding) = (1usize, 0usize);
    let out_hw = 3usize;

    let mut expected = vec![0.0; 3 * out_hw * out_hw];
    for f in 0..3 {
        for oh in 0..out_hw {
            for ow in 0..out_hw {
                let mut acc = 0.0;
                for c in 0..2 {
                    for kh in 0..3 {
                        for kw in 0..3 {
                            let ih = oh * stride + kh - padding;
                            let iw = ow * stride + kw - padding;
                            acc += x.data()[(c * 5 + ih) * 5 + iw]
                                * k.data()[((f * 2 + c) * 3 + kh) * 3 + kw];
                        }
                    }
                }
                expected[(f * out_hw + oh) * out_hw + ow] = acc;
            }
        }
    }

    let mut tape = Tape::new();
    let (xi, ki) = (tape.leaf(x), tape.leaf(k));
    let y = tape.conv2d(xi, ki, stride, padding).unwrap();
    for (got, want) in tape.value(y).data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn dense_gradients() {
    let mut rng = stream(3, "g", 0);
    let inputs = vec![
        rand_tensor(&[3, 4], &mut rng),
        rand_tensor(&[4, 5], &mut rng),
        rand_tensor(&[5], &mut rng),
    ];
    check_gradients(&inputs, &|tape, ids| {
        let y = tape.dense(ids[0], ids[1], ids[2]).unwrap();
        weighted_sum(tape, y, 30)
    });
}

#[test]
fn conv2d_gradients_with_padding_and_stride() {
    let mut rng = stream(4, "g", 0);
    let inputs = vec![rand_tensor(&[2, 2, 6, 6], &mut rng), rand_tensor(&[3, 2, 3, 3], &mut rng)];
    check_gradients(&inputs, &|tape, ids| {
        let y = tape.conv2d(ids[0], ids[1], 1, 1).unwrap();
        weighted_sum(tape, y, 31)
    });
    // Strided, unpadded variant.
    let inputs = vec![rand_tensor(&[1, 2, 7, 7], &mut rng), rand_tensor(&[2, 2, 3, 3], &mut rng)];
    check_gradients(&inputs, &|tape, ids| {
        let y = tape.conv2d(ids[0], ids[1], 2, 0).unwrap();
        weighted_sum(tape, y, 32)
    });
}

#[test]
fn relu_gradients() {
    // Inputs away from the kink so finite differences are valid.
    let mut rng = stream(5, "g", 0);
    let mut t = rand_tensor(&[4, 5], &mut rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v + 0.01);
        }
    }
    check_gradients(&[t], &|tape, ids| {
        let y = tape.relu(ids[0]);
        weighted_sum(tape, y, 33)
    });
}

#[test]
fn max_pool_gradients() {
    let mut rng = stream(6, "g", 0);
    let inputs = vec![rand_tensor(&[2, 3, 4, 4], &mut rng)];
    check_gradients(&inputs, &|tape, ids| {
        let y = tape.max_pool2d(ids[0], 2).unwrap();
        weighted_sum(tape, y, 34)
    });
}

#[test]
fn global_avg_pool_gradients() {
    let mut rng = stream(7, "g", 0);
    let inputs = vec![rand_tensor(&[2, 3, 4, 4], &mut rng)];
    check_gradients(&inputs, &|tape, ids| {
        let y = tape.global_avg_pool(ids[0]).unwrap();
        weighted_sum(tape, y, 35)
    });
}

#[test]
fn concat_gradients() {
    let mut rng = stream(8, "g", 0);
    let inputs = vec![rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3, 2], &mut rng)];
    check_gradients(&inputs, &|tape, ids| {
        let y = tape.concat(ids[0], ids[1], 1).unwrap();
        weighted_sum(tape, y, 36)
    });
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = stream(9, "g", 0);
    // Positive inputs keep sqrt well-conditioned.
    let mut a = rand_tensor(&[3, 4], &mut rng);
    for v in a.data_mut() {
        *v = v.abs() + 0.5;
    }
    let b = rand_tensor(&[3, 4], &mut rng);
    check_gradients(&[a, b], &|tape, ids| {
        let prod = tape.mul_elem(ids[0], ids[1]).unwrap();
        let sq = tape.mul_elem(prod, prod).unwrap();
        let rows = tape.row_sum(sq).unwrap();
        let shifted = tape.add_const(rows, 0.1);
        let root = tape.sqrt(shifted);
        let e = tape.exp(root);
        let n = tape.neg(e);
        let s = tape.scale(n, 0.25);
        let diff = tape.sub(ids[0], ids[1]).unwrap();
        let partial = weighted_sum(tape, diff, 37);
        let m = tape.mean(s);
        tape.add(partial, m).unwrap()
    });
}

#[test]
fn pose_loss_gradients() {
    let mut rng = stream(10, "g", 0);
    let pred_pos = rand_tensor(&[2, 3], &mut rng);
    let pred_ori = rand_tensor(&[2, 4], &mut rng);
    let s = Tensor::new(vec![1], vec![0.3]).unwrap();
    let s2 = Tensor::new(vec![1], vec![-0.2]).unwrap();
    let target_pos = rand_tensor(&[2, 3], &mut rng);
    // Hemisphere-normalized unit targets.
    let mut ori_rows = Vec::new();
    for _ in 0..2 {
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q = hinted_core::pose::normalize_quaternion(&[q[0], q[1], q[2], q[3]]).unwrap();
        ori_rows.push(q.to_vec());
    }
    let target_ori = Tensor::from_rows(&ori_rows).unwrap();

    check_gradients(&[pred_pos, pred_ori, s, s2], &|tape, ids| {
        let w = BoundWeights { s_x: ids[2], s_q: Some(ids[3]), s_z: None };
        pose_loss(tape, ids[0], &target_pos, ids[1], &target_ori, &w).unwrap()
    });
}

#[test]
fn aerial_pose_loss_gradients() {
    let mut rng = stream(11, "g", 0);
    let pred_lat = rand_tensor(&[2, 2], &mut rng);
    let pred_alt = rand_tensor(&[2, 1], &mut rng);
    let pred_head = rand_tensor(&[2, 2], &mut rng);
    let sx = Tensor::new(vec![1], vec![0.1]).unwrap();
    let sz = Tensor::new(vec![1], vec![0.4]).unwrap();
    let sq = Tensor::new(vec![1], vec![-0.3]).unwrap();
    let target_lat = rand_tensor(&[2, 2], &mut rng);
    let target_alt = rand_tensor(&[2, 1], &mut rng);
    let target_head = Tensor::from_rows(&[
        vec![0.6, 0.8],
        vec![1.0, 0.0],
    ])
    .unwrap();

    check_gradients(&[pred_lat, pred_alt, pred_head, sx, sz, sq], &|tape, ids| {
        let w = BoundWeights { s_x: ids[3], s_q: Some(ids[5]), s_z: Some(ids[4]) };
        aerial_pose_loss(
            tape,
            ids[0],
            &target_lat,
            ids[1],
            &target_alt,
            ids[2],
            &target_head,
            &w,
        )
        .unwrap()
    });
}

#[test]
fn loss_stationarity_at_log_residual_norms() {
    // dL/ds vanishes at s = ln(residual norm) for norms 0.5, 1, 2, 3.
    for r in [0.5f64, 1.0, 2.0, 3.0] {
        let mut tape = Tape::new();
        let target = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let pred = tape.constant(&Tensor::new(vec![1, 2], vec![r, 0.0]).unwrap());
        let s = tape.leaf(Tensor::scalar(r.ln()).with_grad());
        let loss = residual_norm_term(&mut tape, pred, &target, s).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(s).unwrap()[0];
        assert!(g.abs() < 1e-6, "residual {r}: dL/ds = {g}");
    }
}

/// Full assembled hinted-residual model: conv encoder, 1024/2048/1024 head,
/// residual skip, in-graph de-whitening, aerial loss. Finite differences on
/// every scalar of the small tensors and a seeded sample of the large ones.
#[test]
fn full_hinted_residual_model_gradients() {
    let encoder = EncoderConfig::Conv(ConvEncoderConfig {
        in_channels: 3,
        image_size: 8,
        widths: vec![2, 3],
    });
    let mut model =
        HintedModel::build(ModelVariant::HintedResidual, encoder, PoseLayout::PlanarAerial, 77)
            .unwrap();

    let mut rng = stream(78, "full-model", 0);
    let batch = 2usize;
    let images = rand_tensor(&[batch, 3, 8, 8], &mut rng);
    let hints = rand_tensor(&[batch, 5], &mut rng);
    let targets = Tensor::from_rows(&[
        vec![10.0, -4.0, 120.0, 0.6, 0.8],
        vec![-3.0, 7.5, 80.0, 1.0, 0.0],
    ])
    .unwrap();

    // Make the whiteners non-trivial so the de-whitening path carries real
    // scales into the loss.
    model.whiteners = hinted_core::whiten::PoseWhiteners::fit(
        PoseLayout::PlanarAerial,
        &[
            2.0, 1.0, 100.0, 0.6, 0.8, //
            -1.0, 4.0, 140.0, 0.0, 1.0, //
            5.0, -2.0, 90.0, -0.6, 0.8, //
            0.5, 2.5, 110.0, 0.8, 0.6,
        ],
        4,
    )
    .unwrap();

    let loss_value = |m: &HintedModel| -> f64 {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let input_id = tape.leaf(images.clone());
        let hint_id = tape.leaf(hints.clone());
        let emb = m.encode(&mut tape, &bound, input_id).unwrap();
        let pred = m.head_forward(&mut tape, &bound, emb, Some(hint_id)).unwrap();
        let loss = training_loss(&mut tape, m, &bound, pred, &targets).unwrap();
        tape.value(loss).data()[0]
    };

    // Analytic gradients once.
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let input_id = tape.leaf(images.clone());
        let hint_id = tape.leaf(hints.clone());
        let emb = model.encode(&mut tape, &bound, input_id).unwrap();
        let pred = model.head_forward(&mut tape, &bound, emb, Some(hint_id)).unwrap();
        let loss = training_loss(&mut tape, &model, &bound, pred, &targets).unwrap();
        tape.backward(loss).unwrap();
        bound.all_ids().iter().map(|&id| tape.grad(id).unwrap().to_vec()).collect()
    };

    let n_params = model.parameters().len();
    let mut checked = 0usize;
    let mut check_rng = stream(79, "full-model-pick", 0);
    for pi in 0..n_params {
        let len = model.parameters()[pi].value.len();
        let indices: Vec<usize> = if len <= 8 {
            (0..len).collect()
        } else {
            (0..6).map(|_| check_rng.gen_range(0..len)).collect()
        };
        for k in indices {
            let orig = model.parameters()[pi].value.data()[k];
            model.parameters_mut()[pi].value.data_mut()[k] = orig + H;
            let up = loss_value(&model);
            model.parameters_mut()[pi].value.data_mut()[k] = orig - H;
            let down = loss_value(&model);
            model.parameters_mut()[pi].value.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * H);
            let an = analytic[pi][k];
            assert!(
                rel_err(fd, an) < TOL,
                "param {} coord {k}: finite difference {fd} vs analytic {an}",
                model.parameters()[pi].name
            );
            checked += 1;
        }
    }
    assert!(checked > 50, "sampled too few coordinates: {checked}");
}

#[test]
fn residual_jacobian_wrt_hint_is_identity_at_zeroed_head() {
    let encoder = EncoderConfig::Conv(ConvEncoderConfig {
        in_channels: 3,
        image_size: 8,
        widths: vec![2, 2],
    });
    let mut model =
        HintedModel::build(ModelVariant::HintedResidual, encoder, PoseLayout::PlanarAerial, 5)
            .unwrap();
    model.zero_parameter("head.out.weight").unwrap();
    model.zero_parameter("head.out.bias").unwrap();

    let mut rng = stream(80, "jac", 0);
    let image = rand_tensor(&[1, 3, 8, 8], &mut rng);
    let hint0: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cfg = HintConfig { train_sigma: vec![0.2; 5], max_iterations: 1, convergence_tolerance: 1e-3 };

    let forward = |hint: &[f64]| -> Vec<f64> {
        model.recurrent_infer(&image, hint, &cfg, false).unwrap().whitened[0].clone()
    };

    for j in 0..5 {
        let mut up = hint0.clone();
        up[j] += H;
        let mut down = hint0.clone();
        down[j] -= H;
        let (fu, fd) = (forward(&up), forward(&down));
        for i in 0..5 {
            let d = (fu[i] - fd[i]) / (2.0 * H);
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((d - expect).abs() < 1e-9, "jacobian[{i}][{j}] = {d}");
        }
    }
}
