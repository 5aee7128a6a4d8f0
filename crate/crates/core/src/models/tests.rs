use super::*;
use crate::gradcheck::grad_check;
use crate::sve::overhead_stats;
use crate::training::JointObjective;

fn rows(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

fn base_mlp(dims: &[usize], rng: &Rng) -> Vec<(Tensor, Vec<f64>)> {
    let mut r = rng.split("base");
    dims.windows(2)
        .map(|w| {
            let l = DenseLinear::init("b", w[1], w[0], &mut r);
            (l.weight, l.bias.data().to_vec())
        })
        .collect()
}

#[test]
fn svf_with_zero_noise_equals_base_mlp() {
    let rng = Rng::seed_from_u64(1);
    let base = base_mlp(&[2, 8], &rng);
    let sve = mlp_model(&[2, 8], 2, &SveConfig::new(1, 0.0), Some(&base), &rng).unwrap();
    let mut dense = EnsembleModel::dense(&sve.spec, Some(&sve.base_weights().unwrap()), &rng).unwrap();
    dense.heads = sve.heads.clone();
    let x = rows(&mut Rng::seed_from_u64(2), 5, 2);
    let a = sve.member_logits_one(0, &x, None).unwrap();
    let b = dense.member_logits_one(0, &x, None).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-12);
    // Dense path computed from the raw base weights, independently of the model code.
    let (w, bias) = &base[0];
    for s in 0..5 {
        let h: Vec<f64> = (0..8).map(|i| (w.at(i, 0) * x.at(s, 0) + w.at(i, 1) * x.at(s, 1) + bias[i]).max(0.0)).collect();
        for c in 0..2 {
            let hw = &sve.heads[0];
            let z: f64 = (0..8).map(|i| hw.weight.at(c, i) * h[i]).sum::<f64>() + hw.bias.data()[c];
            assert!((z - a.at(s, c)).abs() <= 1e-12);
        }
    }
}

#[test]
fn four_members_have_four_heads_and_sigma_sets() {
    let rng = Rng::seed_from_u64(3);
    let m = mlp_model(&[3, 6, 5], 4, &SveConfig::new(4, 0.01), None, &rng).unwrap();
    assert_eq!(m.heads.len(), 4);
    assert!(m.sve_layers().all(|l| l.n_members() == 4));
    assert_eq!(m.sve_layers().count(), 2);
}

#[test]
fn trainable_count_matches_overhead_stats() {
    let rng = Rng::seed_from_u64(4);
    let mut m = mlp_model(&[7, 10, 6], 3, &SveConfig::new(3, 0.01), None, &rng).unwrap();
    let stats = overhead_stats(&[(10, 7), (6, 10)], 6, 3, (6, 3)).unwrap();
    assert_eq!(m.trainable_param_count(), stats.total_trainable);
    assert_eq!(m.trainable_param_count(), 3 * (7 + 6) + 3 * (6 * 3 + 3));
}

#[test]
fn heads_are_independent_draws() {
    let m = mlp_model(&[3, 4], 2, &SveConfig::new(2, 0.0), None, &Rng::seed_from_u64(0)).unwrap();
    assert_ne!(m.heads[0].weight, m.heads[1].weight);
}

#[test]
fn zero_noise_members_agree_bitwise() {
    let rng = Rng::seed_from_u64(5);
    let m = transformer_block_model(8, 2, 12, 3, 4, &SveConfig::new(3, 0.0), None, &rng).unwrap();
    let x = rows(&mut Rng::seed_from_u64(6), 4, 24);
    let p = predict(&m, &x, Mode::Eval, &rng).unwrap();
    // Heads differ per member, so compare backbones through a shared head.
    let mut shared = m.clone();
    for h in 1..3 {
        shared.heads[h] = shared.heads[0].clone();
    }
    let q = predict(&shared, &x, Mode::Eval, &rng).unwrap();
    assert_eq!(q.member_logits[0], q.member_logits[1]);
    assert_eq!(q.member_logits[0], q.member_logits[2]);
    assert_eq!(q.mean_disagreement(), 0.0);
    assert_eq!(q.mean_probs, q.member_probs[0]);
    assert_eq!(p.member_logits.len(), 3);
}

#[test]
fn shared_head_init_makes_untrained_zero_noise_members_identical() {
    let rng = Rng::seed_from_u64(5);
    let cfg = SveConfig {
        head_init: crate::sve::HeadInit::Shared,
        ..SveConfig::new(3, 0.0)
    };
    let m = mlp_model(&[4, 6, 5], 3, &cfg, None, &rng).unwrap();
    assert_eq!(m.heads[0].weight, m.heads[2].weight);
    assert_ne!(m.heads[0].name, m.heads[2].name);
    let p = predict(&m, &rows(&mut Rng::seed_from_u64(6), 7, 4), Mode::Eval, &rng).unwrap();
    assert_eq!(p.member_logits[0], p.member_logits[2]);
    assert_eq!(p.mean_probs, p.member_probs[1]);
}

#[test]
fn transformer_at_pretrained_sigmas_matches_dense_block() {
    let rng = Rng::seed_from_u64(7);
    let spec = ModelSpec::transformer(8, 2, 16, 4, 3);
    let mut dense = EnsembleModel::dense(&spec, None, &rng).unwrap();
    // Non-trivial layer norms.
    for n in &mut dense.norms {
        n.gain.data_mut().iter_mut().enumerate().for_each(|(i, g)| *g = 1.0 + 0.1 * i as f64);
        n.bias.data_mut().iter_mut().enumerate().for_each(|(i, b)| *b = 0.05 * i as f64);
    }
    let base = dense.base_weights().unwrap();
    let mut sve = EnsembleModel::sve(&spec, &SveConfig::new(2, 0.0), Some(&base), &rng).unwrap();
    sve.heads[0] = dense.heads[0].clone();
    let x = rows(&mut Rng::seed_from_u64(8), 5, 32);
    let a = sve.member_logits_one(0, &x, None).unwrap();
    let b = dense.member_logits_one(0, &x, None).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-10, "{}", a.max_abs_diff(&b));
}

#[test]
fn sve_freezes_layer_norms() {
    let m = transformer_block_model(4, 1, 8, 2, 2, &SveConfig::new(2, 0.01), None, &Rng::seed_from_u64(0)).unwrap();
    assert!(m.norms.iter().all(|n| !n.trainable));
    let mut names = Vec::new();
    m.clone().visit_params_mut(&mut |n, _, _| names.push(n));
    assert!(names.iter().all(|n| n.contains(".sigma.") || n.starts_with("head.")), "{names:?}");
}

#[test]
fn predict_averages_probabilities() {
    let l0 = Tensor::from_rows(&[vec![50.0, -50.0]]).unwrap();
    let l1 = Tensor::from_rows(&[vec![-50.0, 50.0]]).unwrap();
    let p = PredictionBatch::from_logits(vec![l0, l1]).unwrap();
    assert!((p.mean_probs.at(0, 0) - 0.5).abs() < 1e-15);
    assert!((p.mean_probs.at(0, 1) - 0.5).abs() < 1e-15);
}

#[test]
fn predict_matches_hand_averaged_softmax() {
    let mut rng = Rng::seed_from_u64(9);
    let logits: Vec<Tensor> = (0..3).map(|_| rows(&mut rng, 6, 4).map(|v| 3.0 * v)).collect();
    let p = PredictionBatch::from_logits(logits.clone()).unwrap();
    for b in 0..6 {
        for c in 0..4 {
            let mut acc = 0.0;
            for l in &logits {
                let z: f64 = (0..4).map(|j| l.at(b, j).exp()).sum();
                acc += l.at(b, c).exp() / z;
            }
            assert!((p.mean_probs.at(b, c) - acc / 3.0).abs() <= 1e-12);
        }
        for mp in &p.member_probs {
            assert!((mp.row(b).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn predict_rejects_non_finite_and_train_mode() {
    let bad = Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
    assert!(matches!(PredictionBatch::from_logits(vec![bad]), Err(Error::Numeric(_))));
    let m = mlp_model(&[2, 3], 2, &SveConfig::new(1, 0.0), None, &Rng::seed_from_u64(0)).unwrap();
    let x = Tensor::zeros(&[1, 2]);
    assert!(predict(&m, &x, Mode::Train, &Rng::seed_from_u64(0)).is_err());
}

#[test]
fn wrong_input_width_is_dimension_error() {
    let m = mlp_model(&[2, 3], 2, &SveConfig::new(1, 0.0), None, &Rng::seed_from_u64(0)).unwrap();
    let x = Tensor::zeros(&[1, 5]);
    assert!(matches!(m.member_logits_one(0, &x, None), Err(Error::Dimension { .. })));
    assert!(matches!(m.member_logits_one(3, &Tensor::zeros(&[1, 2]), None), Err(Error::Index { .. })));
}

#[test]
fn mismatched_base_weights_rejected() {
    let base = vec![(Tensor::zeros(&[4, 3]), vec![0.0; 4])];
    assert!(mlp_model(&[2, 4], 2, &SveConfig::new(1, 0.0), Some(&base), &Rng::seed_from_u64(0)).is_err());
}

#[test]
fn mc_dropout_passes_differ_and_eval_is_deterministic() {
    let mut spec = ModelSpec::mlp(vec![3, 16], 3);
    spec.dropout_rate = 0.05;
    let m = EnsembleModel::dense(&spec, None, &Rng::seed_from_u64(1)).unwrap();
    let x = rows(&mut Rng::seed_from_u64(2), 8, 3);
    let rng = Rng::seed_from_u64(3);
    let mc = predict(&m, &x, Mode::McDropoutEval, &rng).unwrap();
    assert_eq!(mc.member_logits.len(), 10);
    assert!(mc.member_logits.iter().any(|l| *l != mc.member_logits[0]));
    let e1 = predict(&m, &x, Mode::Eval, &rng).unwrap();
    let e2 = predict(&m, &x, Mode::Eval, &Rng::seed_from_u64(99)).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn chunked_predict_equals_single_pass() {
    let m = mlp_model(&[3, 5], 2, &SveConfig::new(2, 0.01), None, &Rng::seed_from_u64(1)).unwrap();
    let x = rows(&mut Rng::seed_from_u64(2), 1100, 3);
    let p = predict(&m, &x, Mode::Eval, &Rng::seed_from_u64(0)).unwrap();
    let direct = m.member_logits_one(1, &x, None).unwrap();
    assert_eq!(p.member_logits[1], direct);
}

#[test]
fn named_arrays_round_trip() {
    let m = transformer_block_model(4, 2, 6, 2, 3, &SveConfig::new(2, 0.01), None, &Rng::seed_from_u64(1)).unwrap();
    let arrays: BTreeMap<String, Tensor> = m.named_arrays().into_iter().collect();
    let back = EnsembleModel::from_named_arrays(&m.layout(), &arrays).unwrap();
    let x = rows(&mut Rng::seed_from_u64(2), 3, 8);
    for k in 0..2 {
        assert_eq!(m.member_logits_one(k, &x, None).unwrap(), back.member_logits_one(k, &x, None).unwrap());
    }
    let mut short = arrays.clone();
    short.remove("head.1.bias");
    assert!(EnsembleModel::from_named_arrays(&m.layout(), &short).is_err());
}

#[test]
fn sve_mlp_loss_gradients_match_finite_differences() {
    let rng = Rng::seed_from_u64(11);
    let m = mlp_model(&[4, 6, 5], 3, &SveConfig::new(2, 0.05), None, &rng).unwrap();
    let x = rows(&mut Rng::seed_from_u64(12), 8, 4);
    let y = vec![0, 1, 2, 0, 1, 2, 0, 1];
    let mut obj = JointObjective::new(m, x, y);
    let err = grad_check(&mut obj, 1e-5, 60, &mut Rng::seed_from_u64(13)).unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn transformer_loss_gradients_match_finite_differences() {
    let rng = Rng::seed_from_u64(14);
    let m = transformer_block_model(4, 2, 8, 3, 3, &SveConfig::new(2, 0.05), None, &rng).unwrap();
    let x = rows(&mut Rng::seed_from_u64(15), 8, 12);
    let y = vec![0, 1, 2, 0, 1, 2, 0, 1];
    let mut obj = JointObjective::new(m, x, y);
    let err = grad_check(&mut obj, 1e-5, 60, &mut Rng::seed_from_u64(16)).unwrap();
    assert!(err <= 1e-4, "{err}");
}
