use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_point(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Weighted sum with fixed pseudo-random weights, turning any tensor into a scalar
/// whose gradient exercises every output element differently.
fn project(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> crate::Result<Var> {
    let n = tape.value(y).numel();
    let w = tape.input(Tensor::new(tape.shape(y).to_vec(), random_point(n, seed)).unwrap());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::<f64>::new();
    let i = tape.input(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let b = tape.input(Tensor::matrix(&[vec![5.0, 6.0], vec![7.0, 8.0]]));
    let y = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, 6.0, 7.0, 8.0]);

    let a = tape.input(Tensor::matrix(&[vec![1.0, 2.0]]));
    let c = tape.input(Tensor::matrix(&[vec![3.0], vec![4.0]]));
    let y = tape.matmul(a, c).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1]);
    assert_eq!(tape.value(y).item(), 11.0);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.input(Tensor::zeros(&[2, 3]));
    let b = tape.input(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    // a: 3×4 packed first, b: 4×2 after it
    let point = random_point(12 + 8, 1);
    let report = gradcheck_fn(&[20], &point, |tape, x| {
        let a = tape.slice(x, 0, 0, 12)?;
        let a = tape.reshape(a, &[3, 4])?;
        let b = tape.slice(x, 0, 12, 8)?;
        let b = tape.reshape(b, &[4, 2])?;
        let y = tape.matmul(a, b)?;
        project(tape, y, 2)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn conv1d_zero_input_and_hand_example() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::zeros(&[2, 4]));
    let w = tape.input(Tensor::new(vec![3, 2, 3], random_point(18, 3)).unwrap());
    let b = tape.input(Tensor::zeros(&[3]));
    let y = tape.conv1d(x, w, b).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let x = tape.input(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let w = tape.input(Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap());
    let b = tape.input(Tensor::zeros(&[1]));
    let y = tape.conv1d(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv1d_gradcheck() {
    // x 4×7, w 3×4×3, b 3
    let (nx, nw, nb) = (28, 36, 3);
    let point = random_point(nx + nw + nb, 4);
    let report = gradcheck_fn(&[nx + nw + nb], &point, |tape, p| {
        let x = tape.slice(p, 0, 0, nx)?;
        let x = tape.reshape(x, &[4, 7])?;
        let w = tape.slice(p, 0, nx, nw)?;
        let w = tape.reshape(w, &[3, 4, 3])?;
        let b = tape.slice(p, 0, nx + nw, nb)?;
        let y = tape.conv1d(x, w, b)?;
        project(tape, y, 5)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn batchnorm_constant_channel_yields_shift() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm1d::new(&mut store, "bn", 2);
    store.get_mut(bn.beta).tensor.data_mut().copy_from_slice(&[0.25, -1.5]);
    let mut tape = Tape::with_params(&store);
    let x = tape.input(Tensor::new(vec![2, 3], vec![4.0, 4.0, 4.0, -2.0, -2.0, -2.0]).unwrap());
    let (y, stats) = bn.forward(&mut tape, x, Mode::Train).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25, 0.25, 0.25, -1.5, -1.5, -1.5]);
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![4.0, -2.0]);
    assert_eq!(stats.var, vec![0.0, 0.0]);
}

#[test]
fn batchnorm_normalizes_standard_normal_batch() {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(7);
    let (c, len) = (3, 20_000);
    let data: Vec<f64> = (0..c * len)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut r);
            z * (1.0 + (i / len) as f64) + 3.0
        })
        .collect();
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm1d::new(&mut store, "bn", c);
    let mut tape = Tape::with_params(&store);
    let x = tape.input(Tensor::new(vec![c, len], data).unwrap());
    let (y, _) = bn.forward(&mut tape, x, Mode::Train).unwrap();
    let yd = tape.value(y).data();
    for ch in 0..c {
        let row = &yd[ch * len..(ch + 1) * len];
        let mean = row.iter().sum::<f64>() / len as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
        assert!(mean.abs() < 1e-2, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "channel {ch} var {var}");
    }
}

#[test]
fn batchnorm_train_gradcheck() {
    let (c, len) = (3, 6);
    let n = c * len + 2 * c;
    let point = random_point(n, 8);
    let report = gradcheck_fn(&[n], &point, |tape, p| {
        let x = tape.slice(p, 0, 0, c * len)?;
        let x = tape.reshape(x, &[c, len])?;
        let g = tape.slice(p, 0, c * len, c)?;
        let b = tape.slice(p, 0, c * len + c, c)?;
        let (y, _) = tape.batchnorm_train(x, g, b, BN_EPS)?;
        project(tape, y, 9)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-5, "{report:?}");
}

#[test]
fn batchnorm_eval_before_training_uses_identity_statistics() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm1d::new(&mut store, "bn", 1);
    let mut tape = Tape::with_params(&store);
    let x = tape.input(Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap());
    let (y, stats) = bn.forward(&mut tape, x, Mode::Eval).unwrap();
    assert!(stats.is_none());
    let s = 1.0 / (1.0 + BN_EPS).sqrt();
    assert_eq!(tape.value(y).data(), &[s, -2.0 * s]);
}

#[test]
fn running_statistics_follow_momentum() {
    let mut store = ParamStore::<f64>::new();
    let mut bn = BatchNorm1d::new(&mut store, "bn", 1);
    bn.update_running(&BatchStats {
        mean: vec![2.0],
        var: vec![3.0],
        count: 4,
    });
    assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 3.0 * 4.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn sigmoid_and_softmax_values() {
    assert_eq!(sigmoid(0.0f64), 0.5);
    assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    for c in [-1e3f64, 0.0, 7.5, 1e3] {
        let p = softmax_slice(&[c, c, c]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
    let p = softmax_slice(&[1.0f64, 2.0, 3.0]);
    let z: f64 = [1f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
    for (i, v) in p.iter().enumerate() {
        assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-12);
    }
}

#[test]
fn softmax_over_designated_axis() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::matrix(&[vec![0.0, 1.0], vec![2.0, 5.0]]));
    let y = tape.softmax(x, 0).unwrap();
    let yv = tape.value(y);
    assert!((yv.at(&[0, 0]) + yv.at(&[1, 0]) - 1.0).abs() < 1e-12);
    assert!((yv.at(&[0, 1]) + yv.at(&[1, 1]) - 1.0).abs() < 1e-12);
    assert!((yv.at(&[1, 0]) - sigmoid(2.0)).abs() < 1e-12);
}

#[test]
fn elementwise_and_softmax_gradchecks() {
    let point: Vec<f64> = random_point(12, 10)
        .into_iter()
        .map(|v| if v.abs() < 0.1 { v + 0.3f64.copysign(v) } else { v })
        .collect();
    let cases: Vec<(&str, f64)> = vec![("relu", 1e-7), ("sigmoid", 1e-6), ("softmax", 1e-6), ("log_softmax", 1e-6)];
    for (name, tol) in cases {
        let report = gradcheck_fn(&[3, 4], &point, |tape, x| {
            let y = match name {
                "relu" => tape.relu(x)?,
                "sigmoid" => tape.sigmoid(x)?,
                "softmax" => tape.softmax(x, 1)?,
                _ => tape.log_softmax(x, 0)?,
            };
            project(tape, y, 11)
        })
        .unwrap();
        assert!(report.max_rel_error <= tol, "{name}: {report:?}");
    }
}

#[test]
fn maxpool_windows_and_constant_input() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::new(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let y = tape.maxpool1d(x).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 4.0, 5.0]);
    let x = tape.input(Tensor::full(&[2, 6], 1.5));
    let y = tape.maxpool1d(x).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
}

#[test]
fn maxpool_gradcheck_distinct_elements() {
    let mut point: Vec<f64> = (0..14).map(|i| (i as f64 * 0.37).sin() * 3.0 + 0.05 * i as f64).collect();
    point[3] = -4.0;
    let report = gradcheck_fn(&[2, 7], &point, |tape, x| {
        let y = tape.maxpool1d(x)?;
        project(tape, y, 12)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn reductions_and_concat() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::vector(vec![2.0, 4.0, 6.0]));
    let m = tape.reduce_mean(x, 0).unwrap();
    assert_eq!(tape.value(m).item(), 4.0);

    let single = tape.input(Tensor::new(vec![3, 1], vec![1.0, -2.0, 5.0]).unwrap());
    let mx = tape.reduce_max(single, 1).unwrap();
    assert_eq!(tape.value(mx).data(), &[1.0, -2.0, 5.0]);

    let a = tape.input(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.input(Tensor::vector(vec![3.0]));
    let c = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);

    let bad = tape.input(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.concat(&[a, bad], 0), Err(Error::Shape { .. })));
    assert!(matches!(tape.concat(&[], 0), Err(Error::EmptySequence(_))));
}

#[test]
fn structural_op_gradchecks() {
    let point = random_point(24, 13);
    let report = gradcheck_fn(&[2, 3, 4], &point, |tape, x| {
        let mean1 = tape.reduce_mean(x, 1)?;
        let max2 = tape.reduce_max(x, 2)?;
        let flat_a = tape.reshape(mean1, &[8])?;
        let flat_b = tape.reshape(max2, &[6])?;
        let c = tape.concat(&[flat_a, flat_b], 0)?;
        let s = tape.slice(c, 0, 2, 10)?;
        let p = tape.pick(s, &[0, 3, 3, 9])?;
        let q = tape.scale(p, -0.5)?;
        project(tape, q, 14)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn pairwise_and_bias_gradchecks() {
    // u: 3×2, v: 3×4, b: 3
    let point = random_point(6 + 12 + 3, 15);
    let report = gradcheck_fn(&[21], &point, |tape, p| {
        let u = tape.slice(p, 0, 0, 6)?;
        let u = tape.reshape(u, &[3, 2])?;
        let v = tape.slice(p, 0, 6, 12)?;
        let v = tape.reshape(v, &[3, 4])?;
        let b = tape.slice(p, 0, 18, 3)?;
        let o = tape.outer_add(u, v)?;
        let o = tape.add_bias(o, b)?;
        let o2 = tape.mul(o, o)?;
        let s = tape.add(o, o2)?;
        project(tape, s, 16)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn ln_clamped_and_gather_gradchecks() {
    let point: Vec<f64> = random_point(8, 17).into_iter().map(|v| v.abs() + 0.2).collect();
    let report = gradcheck_fn(&[4, 2], &point, |tape, table| {
        let g = tape.gather(table, &[2, 0, 2])?;
        let l = tape.ln_clamped(g, 1e-12)?;
        project(tape, l, 18)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");

    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::vector(vec![0.0, 1e-20, 0.5]));
    let y = tape.ln_clamped(x, 1e-12).unwrap();
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[0.0, 0.0, 2.0]);
    assert_eq!(tape.value(y).data()[0], 1e-12f64.ln());
}

#[test]
fn gather_rejects_out_of_vocabulary_ids() {
    let mut tape = Tape::<f64>::new();
    let t = tape.input(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.gather(t, &[1, 3]), Err(Error::Vocabulary { id: 3, size: 3 })));
    assert!(matches!(tape.gather(t, &[]), Err(Error::EmptySequence(_))));
}

#[test]
fn fan_out_accumulates_gradients() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::vector(vec![3.0]));
    let y = tape.add(x, x).unwrap();
    let z = tape.mul(y, x).unwrap(); // 2x²
    let g = tape.backward(z).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[12.0]);
}

#[test]
fn dropout_identity_cases_and_rate_validation() {
    let mut r = rng(19);
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
    assert_eq!(dropout(&mut tape, x, 0.0, Mode::Train, &mut r).unwrap(), x);
    assert_eq!(dropout(&mut tape, x, 0.9, Mode::Eval, &mut r).unwrap(), x);
    assert!(matches!(dropout(&mut tape, x, 1.0, Mode::Train, &mut r), Err(Error::Config(_))));
    assert!(matches!(dropout(&mut tape, x, -0.1, Mode::Train, &mut r), Err(Error::Config(_))));
}

#[test]
fn dropout_statistics_on_seeded_mask() {
    let n = 100_000;
    let mut r = rng(20);
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::full(&[n], 1.0));
    let y = dropout(&mut tape, x, 0.2, Mode::Train, &mut r).unwrap();
    let yd = tape.value(y).data();
    let kept = yd.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    let mean = yd.iter().sum::<f64>() / n as f64;
    assert!((kept - 0.8).abs() <= 0.01, "kept {kept}");
    assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", ParamKind::Weight, Tensor::vector(vec![0.5, -1.0]));
    let mut state = AdamState::new(&store, 1e-3);
    adam_step(&mut store, &mut state).unwrap();
    assert_eq!(store.get(id).tensor.data(), &[0.5, -1.0]);
    assert_eq!(state.step_count(), 1);
}

#[test]
fn adam_single_step_matches_formula() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", ParamKind::Weight, Tensor::scalar(2.0));
    store.get_mut(id).tensor.accumulate_grad(&[1.0]).unwrap();
    let mut state = AdamState::new(&store, 1e-4);
    adam_step(&mut store, &mut state).unwrap();
    // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1
    let m_hat = (0.1 * 1.0) / (1.0 - 0.9);
    let v_hat = (0.001 * 1.0) / (1.0 - 0.999);
    let expected = 2.0 - 1e-4 * m_hat / (f64::sqrt(v_hat) + 1e-8);
    assert!((store.get(id).tensor.item() - expected).abs() <= 1e-12);
}

#[test]
fn adam_skips_frozen_params_and_checks_shapes() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("e", ParamKind::Embedding, Tensor::vector(vec![1.0]));
    store.get_mut(id).tensor.set_requires_grad(false);
    let mut state = AdamState::new(&store, 1.0);
    adam_step(&mut store, &mut state).unwrap();
    assert_eq!(store.get(id).tensor.item(), 1.0);

    let other = ParamStore::<f64>::new();
    let mut wrong = AdamState::new(&other, 1.0);
    assert!(matches!(adam_step(&mut store, &mut wrong), Err(Error::Shape { .. })));
}

#[test]
fn lr_schedule_decays_by_five_every_ten_epochs() {
    let s = LrSchedule::default();
    assert_eq!(s.at_epoch(0), 1e-4);
    assert_eq!(s.at_epoch(9), 1e-4);
    assert_eq!(s.at_epoch(10), 2e-5);
    assert_eq!(s.at_epoch(20), 4e-6);
}

#[test]
fn gradcheck_quadratic_and_relu() {
    let report = gradcheck_fn(&[2], &[1.0, 2.0], |tape, x| {
        let sq = tape.mul(x, x)?;
        tape.sum(sq)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-8, "{report:?}");

    let report = gradcheck_fn(&[4], &[0.5, -0.3, 1.2, -2.0], |tape, x| {
        let r = tape.relu(x)?;
        project(tape, r, 21)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-7, "{report:?}");
}

#[test]
fn gradcheck_rejects_non_scalar_output() {
    let err = gradcheck_fn(&[2], &[1.0, 2.0], |tape, x| tape.relu(x)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn injected_fault_is_detected() {
    let point = random_point(6, 22);
    let mut f = TapeFn::new(&[2, 3], |tape: &mut Tape<'_, f64>, x| {
        tape.inject_fault(Some(OpKind::Sigmoid));
        let y = tape.sigmoid(x)?;
        project(tape, y, 23)
    });
    let report = gradcheck(&mut f, &point, 1e-5).unwrap();
    assert!(report.max_rel_error > 1e-3, "{report:?}");
}

#[test]
fn strict_mode_rejects_non_finite_results() {
    let mut tape = Tape::<f64>::new().strict(true);
    let x = tape.input(Tensor::vector(vec![1e308, 1e308]));
    assert!(matches!(tape.scale(x, 10.0), Err(Error::NonFinite(_))));
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut r = rng(24);
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new(vec![3, 5], random_point(15, 25)).unwrap());
        let w = tape.input(Tensor::new(vec![4, 3, 3], random_point(36, 26)).unwrap());
        let b = tape.input(Tensor::zeros(&[4]));
        let y = tape.conv1d(x, w, b).unwrap();
        let y = dropout(&mut tape, y, 0.2, Mode::Train, &mut r).unwrap();
        let y = tape.maxpool1d(y).unwrap();
        tape.value(y).data().to_vec()
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn f32_tape_runs_the_same_ops() {
    let mut tape = Tape::<f32>::new();
    let x = tape.input(Tensor::new(vec![1, 3], vec![1.0f32, 2.0, 3.0]).unwrap());
    let w = tape.input(Tensor::new(vec![1, 1, 3], vec![1.0f32, 1.0, 1.0]).unwrap());
    let b = tape.input(Tensor::zeros(&[1]));
    let y = tape.conv1d(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0f32, 6.0, 5.0]);
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        xs in prop::collection::vec(-30.0f64..30.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let p = softmax_slice(&xs);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let q = softmax_slice(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn conv_and_pool_output_lengths(len in 1usize..40, ci in 1usize..4) {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::full(&[ci, len], 0.5));
        let w = tape.input(Tensor::full(&[2, ci, 3], 0.1));
        let b = tape.input(Tensor::zeros(&[2]));
        let y = tape.conv1d(x, w, b).unwrap();
        prop_assert_eq!(tape.shape(y), &[2, len]);
        let p = tape.maxpool1d(y).unwrap();
        prop_assert_eq!(tape.shape(p), &[2, len.div_ceil(2)]);
    }

    #[test]
    fn matmul_gradcheck_random_points(seed in 0u64..1000) {
        let point = random_point(6 + 6, seed);
        let report = gradcheck_fn(&[12], &point, |tape, p| {
            let a = tape.slice(p, 0, 0, 6)?;
            let a = tape.reshape(a, &[2, 3])?;
            let b = tape.slice(p, 0, 6, 6)?;
            let b = tape.reshape(b, &[3, 2])?;
            let y = tape.matmul(a, b)?;
            let y = tape.sigmoid(y)?;
            project(tape, y, seed + 1)
        }).unwrap();
        prop_assert!(report.max_rel_error <= 1e-5);
    }
}

#[test]
fn tensor_equality_ignores_gradient_contents() {
    let mut a = Tensor::<f64>::vector(vec![1.0, 2.0]);
    let mut b = a.clone();
    assert_eq!(a, b);
    a.set_requires_grad(true);
    assert_ne!(a, b);
    b.set_requires_grad(true);
    a.accumulate_grad(&[0.5, -1.0]).unwrap();
    assert_eq!(a, b);
    b.data_mut()[0] = 1.5;
    assert_ne!(a, b);
}
