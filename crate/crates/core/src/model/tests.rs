use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{gradcheck, sigmoid, Tape, DEFAULT_STEP};

fn small(vocab: usize, levels: usize, mode: ScoreMode) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: 8,
        levels,
        channels: 8,
        compare_hidden: 8,
        match_dim: 8,
        aggregate_hidden: 8,
        mode,
        dropout: 0.0,
    }
}

fn tokens(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(1..vocab as u32)).collect()
}

/// Overwrites every parameter of `dst` that has a same-named, same-shaped counterpart in `src`.
fn copy_shared(src: &MatchingModel<f64>, dst: &mut MatchingModel<f64>) -> usize {
    let mut copied = 0;
    for p in dst.params.iter_mut() {
        if let Some(id) = src.params.find(&p.name) {
            let s = &src.params.get(id).tensor;
            if s.shape() == p.tensor.shape() {
                p.tensor.data_mut().copy_from_slice(s.data());
                copied += 1;
            }
        }
    }
    copied
}

#[test]
fn scale_pair_counts() {
    for k in 1..=3 {
        assert_eq!(ScoreMode::WordOnly.scale_pairs(k).len(), 1);
        assert_eq!(ScoreMode::WordPlusNgram.scale_pairs(k).len(), 2 * k + 1);
        assert_eq!(ScoreMode::Full.scale_pairs(k).len(), (k + 1) * (k + 1));
    }
    assert_eq!(
        ScoreMode::WordPlusNgram.scale_pairs(2),
        vec![(0, 0), (0, 1), (0, 2), (1, 0), (2, 0)]
    );
    assert_eq!(ScoreMode::Full.scale_pairs(1), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
}

#[test]
fn match_vector_counts_follow_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = tokens(&mut rng, 6, 20);
    let a = tokens(&mut rng, 4, 20);
    for (mode, expected) in [(ScoreMode::WordOnly, 1), (ScoreMode::WordPlusNgram, 5), (ScoreMode::Full, 9)] {
        let model = MatchingModel::<f64>::new(small(20, 2, mode), 1).unwrap();
        let trace = model.score_traced(&q, &a).unwrap();
        assert_eq!(trace.match_vectors.len(), expected);
        for (_, mv) in &trace.match_vectors {
            assert_eq!(mv.shape(), &[16]);
            assert!(mv.is_finite());
        }
    }
}

#[test]
fn layer_widths() {
    let cfg = ModelConfig {
        channels: 12,
        match_dim: 5,
        ..small(30, 2, ScoreMode::Full)
    };
    let model = MatchingModel::<f64>::new(cfg, 0).unwrap();
    for cmp in model.comparators() {
        let w1 = &model.params.get(cmp.net.w1).tensor;
        let (u, v) = cmp.pair;
        let expect = model.config.width(u) + model.config.width(v);
        assert_eq!(w1.shape()[1], expect);
    }
    let agg = &model.params.get(model.aggregator().w1).tensor;
    assert_eq!(agg.shape()[1], 2 * 5 * 9);
    assert_eq!(model.params.get(model.aggregator().w2).tensor.shape(), &[1, 8]);
}

#[test]
fn hierarchy_lengths() {
    let model = MatchingModel::<f64>::new(small(10, 2, ScoreMode::Full), 0).unwrap();
    let h = model.encode(&[1, 2, 3, 4, 5]).unwrap();
    let shapes: Vec<_> = h.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![8, 5], vec![8, 3], vec![8, 2]]);

    let single = model.encode(&[7]).unwrap();
    assert!(single.iter().all(|t| t.shape()[1] == 1));

    let flat = MatchingModel::<f64>::new(small(10, 0, ScoreMode::WordOnly), 0).unwrap();
    let h = flat.encode(&[4, 2, 9]).unwrap();
    assert_eq!(h.len(), 1);
    let table = &flat.params.get(flat.embedding()).tensor;
    for (j, &id) in [4u32, 2, 9].iter().enumerate() {
        for c in 0..8 {
            assert_eq!(h[0].at(&[c, j]), table.at(&[id as usize, c]));
        }
    }
}

fn changed_positions(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<usize> {
    let (rows, cols) = (a.shape()[0], a.shape()[1]);
    (0..cols)
        .filter(|&j| (0..rows).any(|c| a.at(&[c, j]) != b.at(&[c, j])))
        .collect()
}

#[test]
fn receptive_field_probe() {
    let cfg = ModelConfig {
        channels: 16,
        ..small(40, 2, ScoreMode::Full)
    };
    let model = MatchingModel::<f64>::new(cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = tokens(&mut rng, 20, 40);
    let mut probe = base.clone();
    probe[7] = if base[7] == 1 { 2 } else { 1 };
    let (h0, h1) = (model.encode(&base).unwrap(), model.encode(&probe).unwrap());

    assert_eq!(changed_positions(&h0[0], &h1[0]), vec![7]);
    // level-1 position i covers tokens 2i-2 ..= 2i+2
    let window1: Vec<usize> = (0..10).filter(|&i| 2 * i <= 9 && 7 <= 2 * i + 2).collect();
    assert_eq!(window1, vec![3, 4]);
    let c1 = changed_positions(&h0[1], &h1[1]);
    assert!(!c1.is_empty());
    assert!(c1.iter().all(|i| window1.contains(i)), "{c1:?}");
    // level-2 position i covers level-1 positions 2i-2 ..= 2i+2, i.e. tokens 4i-6 ..= 4i+6
    let c2 = changed_positions(&h0[2], &h1[2]);
    assert!(c2.iter().all(|&i| 4 * i <= 7 + 6 && 7 <= 4 * i + 6), "{c2:?}");

    // every token within the window of position 3 influences it; none outside does
    for t in 0..20 {
        let mut p = base.clone();
        p[t] = if base[t] == 1 { 2 } else { 1 };
        let h = model.encode(&p).unwrap();
        let moved = changed_positions(&h0[1], &h[1]).contains(&3);
        let inside = (4..=8).contains(&t);
        if !inside {
            assert!(!moved, "token {t} leaked into position 3");
        }
    }
}

/// Model with level-0 width 2, comparator hidden 3 and output 2, all set by hand.
fn toy_matcher() -> MatchingModel<f64> {
    let cfg = ModelConfig {
        vocab_size: 4,
        embed_dim: 2,
        levels: 0,
        channels: 1,
        compare_hidden: 3,
        match_dim: 2,
        aggregate_hidden: 2,
        mode: ScoreMode::WordOnly,
        dropout: 0.0,
    };
    let mut model = MatchingModel::new(cfg, 0).unwrap();
    let net = model.comparators()[0].net.clone();
    let set = |m: &mut MatchingModel<f64>, id: ParamId, v: &[f64]| {
        m.params.get_mut(id).tensor.data_mut().copy_from_slice(v);
    };
    set(&mut model, net.w1, &[0.5, -1.0, 0.25, 2.0, 1.5, 0.75, -0.5, 1.0, -2.0, 0.3, 1.1, -0.7]);
    set(&mut model, net.b1, &[0.1, -0.2, 0.05]);
    set(&mut model, net.w2, &[1.0, -0.5, 2.0, 0.3, 0.8, -1.2]);
    set(&mut model, net.b2, &[0.01, -0.03]);
    model
}

fn brute_force_match(model: &MatchingModel<f64>, xq: &[[f64; 2]], xa: &[[f64; 2]]) -> Vec<f64> {
    let net = &model.comparators()[0].net;
    let w1 = model.params.get(net.w1).tensor.data().to_vec();
    let b1 = model.params.get(net.b1).tensor.data().to_vec();
    let w2 = model.params.get(net.w2).tensor.data().to_vec();
    let b2 = model.params.get(net.b2).tensor.data().to_vec();
    let h = |q: &[f64; 2], a: &[f64; 2]| -> Vec<f64> {
        let input = [q[0], q[1], a[0], a[1]];
        let hidden: Vec<f64> = (0..3)
            .map(|r| {
                let z: f64 = (0..4).map(|c| w1[r * 4 + c] * input[c]).sum::<f64>() + b1[r];
                z.max(0.0)
            })
            .collect();
        (0..2)
            .map(|r| (0..3).map(|c| w2[r * 3 + c] * hidden[c]).sum::<f64>() + b2[r])
            .collect()
    };
    let mut hq = vec![0.0; 2];
    for q in xq {
        for c in 0..2 {
            let best = xa.iter().map(|a| h(q, a)[c]).fold(f64::NEG_INFINITY, f64::max);
            hq[c] += best / xq.len() as f64;
        }
    }
    let mut ha = vec![0.0; 2];
    for a in xa {
        for c in 0..2 {
            let best = xq.iter().map(|q| h(q, a)[c]).fold(f64::NEG_INFINITY, f64::max);
            ha[c] += best / xa.len() as f64;
        }
    }
    hq.extend(ha);
    hq
}

fn columns(cols: &[[f64; 2]]) -> Tensor<f64> {
    let mut data = Vec::new();
    for r in 0..2 {
        data.extend(cols.iter().map(|c| c[r]));
    }
    Tensor::new(vec![2, cols.len()], data).unwrap()
}

fn run_match(model: &MatchingModel<f64>, xq: &[[f64; 2]], xa: &[[f64; 2]]) -> Vec<f64> {
    let mut tape = Tape::with_params(&model.params);
    let q = tape.input(columns(xq));
    let a = tape.input(columns(xa));
    let cmp = model.comparators()[0].clone();
    let out = model.match_pair(&mut tape, q, a, &cmp, &mut Pass::Eval).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn match_pair_matches_direct_formula() {
    let model = toy_matcher();
    let xq = [[0.3, -1.2], [1.0, 0.4], [-0.6, 0.9]];
    let xa = [[0.7, 0.2], [-1.1, 0.5]];
    let got = run_match(&model, &xq, &xa);
    let want = brute_force_match(&model, &xq, &xa);
    assert_eq!(got.len(), 4);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn match_pair_single_answer_and_duplicates() {
    let model = toy_matcher();
    let xq = [[0.3, -1.2], [1.0, 0.4], [-0.6, 0.9]];
    let one = [[0.7, 0.2]];
    let got = run_match(&model, &xq, &one);
    assert_eq!(got, brute_force_match(&model, &xq, &one));

    let xa = [[0.7, 0.2], [-1.1, 0.5]];
    let dup = [[0.7, 0.2], [-1.1, 0.5], [-1.1, 0.5]];
    let (a, b) = (run_match(&model, &xq, &xa), run_match(&model, &xq, &dup));
    assert_eq!(a[..2], b[..2]);
}

#[test]
fn match_pair_rejects_width_mismatch() {
    let model = toy_matcher();
    let mut tape = Tape::with_params(&model.params);
    let q = tape.input(Tensor::zeros(&[3, 2]));
    let a = tape.input(Tensor::zeros(&[2, 2]));
    let cmp = model.comparators()[0].clone();
    let err = model.match_pair(&mut tape, q, a, &cmp, &mut Pass::Eval).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
}

#[test]
fn word_only_ignores_encoder() {
    let deep = MatchingModel::<f64>::new(small(20, 2, ScoreMode::WordOnly), 4).unwrap();
    let mut flat = MatchingModel::<f64>::new(small(20, 0, ScoreMode::WordOnly), 99).unwrap();
    assert_eq!(copy_shared(&deep, &mut flat), flat.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let q = tokens(&mut rng, 7, 20);
        let a = tokens(&mut rng, 4, 20);
        assert_eq!(deep.score(&q, &a).unwrap(), flat.score(&q, &a).unwrap());
    }
}

#[test]
fn word_only_permutation_invariance() {
    let model = MatchingModel::<f64>::new(small(30, 2, ScoreMode::WordOnly), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = tokens(&mut rng, 9, 30);
    let a = tokens(&mut rng, 6, 30);
    let base = model.score(&q, &a).unwrap();
    let (mut qr, mut ar) = (q.clone(), a.clone());
    qr.reverse();
    ar.rotate_left(2);
    assert!((model.score(&qr, &a).unwrap() - base).abs() <= 1e-10);
    assert!((model.score(&q, &ar).unwrap() - base).abs() <= 1e-10);
}

#[test]
fn ngram_mode_word_pair_is_order_free() {
    let model = MatchingModel::<f64>::new(small(30, 2, ScoreMode::WordPlusNgram), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = tokens(&mut rng, 9, 30);
    let a = tokens(&mut rng, 8, 30);
    let mut ar = a.clone();
    ar.reverse();
    let (t0, t1) = (model.score_traced(&q, &a).unwrap(), model.score_traced(&q, &ar).unwrap());
    assert_eq!(t0.match_vectors[0].0, (0, 0));
    for (x, y) in t0.match_vectors[0].1.data().iter().zip(t1.match_vectors[0].1.data()) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn score_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let q = tokens(&mut rng, 5, 12);
    let a = tokens(&mut rng, 7, 12);
    let cfg = small(12, 1, ScoreMode::WordPlusNgram);
    let model = MatchingModel::<f64>::new(cfg, 17).unwrap();
    for train in [false, true] {
        let (q, a) = (q.clone(), a.clone());
        let mut f = ParamObjective::new(model.clone(), move |m, tape| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let mut pass = if train { Pass::Train(&mut drop_rng) } else { Pass::Eval };
            let (s, _) = m.score_batch(tape, &[&q, &a], &[(0, 1)], &mut pass)?;
            Ok(s[0])
        });
        let x = f.point();
        let report = gradcheck(&mut f, &x, DEFAULT_STEP).unwrap();
        assert!(report.max_rel_error <= 1e-5, "train={train}: {report:?}");
    }
}

#[test]
fn discriminator_probability() {
    assert_eq!(sigmoid(0.0f64), 0.5);
    assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    let model = MatchingModel::<f64>::new(small(20, 1, ScoreMode::WordPlusNgram), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = tokens(&mut rng, 6, 20);
    let answers: Vec<Vec<u32>> = (0..6).map(|_| tokens(&mut rng, 5, 20)).collect();
    let mut pairs: Vec<(f64, f64)> = answers
        .iter()
        .map(|a| (model.score(&q, a).unwrap(), model.discriminator_prob(&q, a).unwrap()))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    for w in pairs.windows(2) {
        if w[0].0 < w[1].0 {
            assert!(w[0].1 < w[1].1);
        }
    }
    assert!(pairs.iter().all(|p| p.1 > 0.0 && p.1 < 1.0));
}

#[test]
fn score_many_agrees_with_score() {
    let model = MatchingModel::<f64>::new(small(20, 2, ScoreMode::Full), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = tokens(&mut rng, 6, 20);
    let answers: Vec<Vec<u32>> = (0..4).map(|i| tokens(&mut rng, 2 + i, 20)).collect();
    let refs: Vec<&[u32]> = answers.iter().map(|a| a.as_slice()).collect();
    let many = model.score_many(&q, &refs).unwrap();
    for (a, s) in answers.iter().zip(many) {
        assert_eq!(model.score(&q, a).unwrap(), s);
    }
}

#[test]
fn eval_deterministic_train_seeded() {
    let cfg = ModelConfig {
        dropout: 0.2,
        ..small(20, 1, ScoreMode::WordPlusNgram)
    };
    let model = MatchingModel::<f64>::new(cfg, 5).unwrap();
    let (q, a) = (vec![1, 2, 3, 4], vec![5, 6, 7]);
    assert_eq!(model.score(&q, &a).unwrap(), model.score(&q, &a).unwrap());
    let train_score = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::with_params(&model.params);
        let (s, stats) = model
            .score_batch(&mut tape, &[&q, &a], &[(0, 1)], &mut Pass::Train(&mut rng))
            .unwrap();
        assert_eq!(stats.len(), 1);
        tape.value(s[0]).item()
    };
    assert_eq!(train_score(9), train_score(9));
    assert_ne!(train_score(9), train_score(10));
}

#[test]
fn running_stats_update() {
    let mut model = MatchingModel::<f64>::new(small(20, 2, ScoreMode::Full), 5).unwrap();
    let before = model.score(&[1, 2, 3], &[4, 5]).unwrap();
    let stats = {
        let mut tape = Tape::with_params(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q: &[u32] = &[1, 2, 3];
        let a: &[u32] = &[4, 5];
        model
            .score_batch(&mut tape, &[q, a], &[(0, 1)], &mut Pass::Train(&mut rng))
            .unwrap()
            .1
    };
    assert_eq!(stats.len(), 2);
    model.update_running_stats(&stats).unwrap();
    assert_ne!(model.score(&[1, 2, 3], &[4, 5]).unwrap(), before);
    assert!(model.update_running_stats(&stats[..1]).is_err());
}

#[test]
fn encode_errors() {
    let model = MatchingModel::<f64>::new(small(10, 1, ScoreMode::WordPlusNgram), 0).unwrap();
    assert!(matches!(model.encode(&[]), Err(Error::EmptySequence(_))));
    assert!(matches!(model.score(&[1], &[]), Err(Error::EmptySequence(_))));
    assert!(matches!(model.encode(&[1, 10]), Err(Error::Vocabulary { id: 10, size: 10 })));
}

#[test]
fn config_validation() {
    assert!(MatchingModel::<f64>::new(ModelConfig { channels: 0, ..small(5, 1, ScoreMode::Full) }, 0).is_err());
    assert!(MatchingModel::<f64>::new(ModelConfig { dropout: 1.0, ..small(5, 1, ScoreMode::Full) }, 0).is_err());
    let d = ModelConfig::default();
    assert_eq!((d.levels, d.channels, d.match_dim, d.mode), (2, 128, 128, ScoreMode::WordPlusNgram));
    assert_eq!(d.dropout, 0.2);
}

#[test]
fn regularized_parameter_kinds() {
    let model = MatchingModel::<f64>::new(small(10, 1, ScoreMode::WordPlusNgram), 0).unwrap();
    for (_, p) in model.params.iter() {
        let expect = p.name.ends_with("weight") || p.name == "embedding";
        assert_eq!(p.kind.is_regularized(), expect, "{}", p.name);
    }
}

#[test]
fn frozen_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut table = EmbeddingTable::<f64>::random(10, 8, &mut rng);
    table.trainable = false;
    let model = MatchingModel::with_embeddings(small(1, 1, ScoreMode::WordPlusNgram), table.clone(), 3).unwrap();
    assert!(!model.embeddings_trainable());
    assert_eq!(model.config.vocab_size, 10);
    assert_eq!(model.params.get(model.embedding()).tensor.data(), table.vectors.data());
    let mut tape = Tape::with_params(&model.params);
    let (s, _) = model.score_batch(&mut tape, &[&[1, 2], &[3]], &[(0, 1)], &mut Pass::Eval).unwrap();
    let g = tape.backward(s[0]).unwrap();
    assert!(g.param(model.embedding()).is_none());
}

fn tiny(vocab: usize, levels: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: 6,
        levels,
        channels: 5,
        compare_hidden: 4,
        match_dim: 3,
        aggregate_hidden: 4,
        mode: ScoreMode::Full,
        dropout: 0.2,
    }
}

#[test]
fn checkpoint_roundtrip_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mut model = MatchingModel::<f32>::new(tiny(15, 2), 8).unwrap();
    model.blocks[0].norm.running_mean[0] = 0.123_456_79;
    let vocab: Vec<String> = (0..15).map(|i| format!("w{i}")).collect();
    model.save(&path, Some(vocab.clone())).unwrap();
    let ckpt = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(ckpt.vocabulary.as_ref(), Some(&vocab));
    assert_eq!(ckpt.to_model().unwrap(), model);
    assert_eq!(MatchingModel::<f32>::load(&path).unwrap(), model);
    assert!(MatchingModel::<f64>::load(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_roundtrip_bit_exact(seed in any::<u64>(), levels in 0usize..3, bump in -1e3f64..1e3) {
        let cfg = tiny(9, levels);
        let mut model = MatchingModel::<f64>::new(cfg, seed).unwrap();
        let first = model.params.iter().next().unwrap().0;
        model.params.get_mut(first).tensor.data_mut()[0] = bump / 3.0;
        if let Some(b) = model.blocks.first_mut() {
            b.norm.running_var[0] = bump.abs() / 7.0 + f64::MIN_POSITIVE;
        }
        let json = Checkpoint::from_model(&model, None).to_json().unwrap();
        let ckpt = Checkpoint::<f64>::from_json(&json).unwrap();
        prop_assert!(ckpt.vocabulary.is_none());
        let back = ckpt.to_model().unwrap();
        for ((_, a), (_, b)) in model.params.iter().zip(back.params.iter()) {
            let same = a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same, "{}", a.name);
        }
        prop_assert_eq!(back, model);
    }
}
