use proptest::prelude::*;

use sve_core::experiments::checkpoint::{decode, encode};
use sve_core::experiments::results::mean_std;
use sve_core::metrics::{accuracy, auroc, bin_index, brier, ece, nll, ood_metrics, OodScores};
use sve_core::models::{softmax_rows, ModelSpec, PredictionBatch};
use sve_core::svd::svd;
use sve_core::sve::{SveConfig, SveLinear};
use sve_core::tensor::Tensor;
use sve_core::training::{build_sve, lr_at, Method, Schedule, TrainConfig};
use sve_core::Rng;

fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap()))
}

/// `b × c` logits with labels.
fn logits_and_labels() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (1usize..24, 2usize..6).prop_flat_map(|(b, c)| {
        (
            prop::collection::vec(-8.0f64..8.0, b * c).prop_map(move |d| Tensor::matrix(b, c, d).unwrap()),
            prop::collection::vec(0..c, b),
        )
    })
}

fn scores() -> impl Strategy<Value = OodScores> {
    // Coarse grid so ties occur often.
    let s = prop::collection::vec((0i32..20).prop_map(|v| v as f64 / 20.0), 1..30);
    (s.clone(), s).prop_map(|(in_dist, ood)| OodScores { in_dist, ood })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_with_sorted_spectrum_and_orthonormal_factors(w in matrix(9)) {
        let f = svd(&w).unwrap();
        let scale = w.norm().max(1.0);
        prop_assert!(f.reconstruct().max_abs_diff(&w) <= 1e-10 * scale);
        prop_assert!(f.sigma.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(f.sigma.iter().all(|&s| s >= 0.0));
        let r = f.rank_dim();
        let utu = f.u.transpose().unwrap().matmul(&f.u).unwrap();
        let vvt = f.vt.matmul(&f.vt.transpose().unwrap()).unwrap();
        prop_assert!(utu.max_abs_diff(&Tensor::eye(r)) <= 1e-10);
        prop_assert!(vvt.max_abs_diff(&Tensor::eye(r)) <= 1e-10);
    }

    #[test]
    fn softmax_rows_and_ensemble_mean_are_distributions(
        (l, _) in logits_and_labels(),
        shifts in prop::collection::vec(-3.0f64..3.0, 1..5),
    ) {
        let p = softmax_rows(&l);
        for r in 0..p.rows() {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let members: Vec<Tensor> = shifts.iter().map(|s| l.map(|v| v * s)).collect();
        let batch = PredictionBatch::from_logits(members).unwrap();
        for r in 0..batch.mean_probs.rows() {
            prop_assert!((batch.mean_probs.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(batch.mean_probs.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let d = batch.mean_disagreement();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
    }

    #[test]
    fn identical_members_average_to_the_member_exactly((l, _) in logits_and_labels(), m in 1usize..6) {
        let batch = PredictionBatch::from_logits(vec![l.clone(); m]).unwrap();
        prop_assert_eq!(&batch.mean_probs, &softmax_rows(&l));
        prop_assert_eq!(batch.mean_disagreement(), 0.0);
    }

    #[test]
    fn classification_metrics_stay_in_range((l, y) in logits_and_labels(), bins in 1usize..20) {
        let p = softmax_rows(&l);
        let acc = accuracy(&p, &y).unwrap();
        let (e, table) = ece(&p, &y, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(nll(&p, &y).unwrap() >= 0.0);
        prop_assert!((0.0..=2.0).contains(&brier(&p, &y).unwrap()));
        prop_assert_eq!(table.iter().map(|b| b.count).sum::<usize>(), y.len());
    }

    #[test]
    fn auroc_is_antisymmetric_under_role_swap(s in scores()) {
        let swapped = OodScores { in_dist: s.ood.clone(), ood: s.in_dist.clone() };
        let (a, b) = (auroc(&s).unwrap(), auroc(&swapped).unwrap());
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
        let m = ood_metrics(&s).unwrap();
        for v in [m.auroc, m.auprc, m.fpr_at_95_tpr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn bin_index_matches_half_open_intervals(c in 0.0f64..=1.0, n in 1usize..40) {
        let i = bin_index(c, n);
        prop_assert!(i < n);
        if c > 0.0 {
            prop_assert!(c > i as f64 / n as f64 && c <= (i + 1) as f64 / n as f64);
        } else {
            prop_assert_eq!(i, 0);
        }
    }

    #[test]
    fn learning_rate_stays_within_bounds(
        total in 1usize..500,
        frac in 0.0f64..0.5,
        lr in 0.0f64..1.0,
        schedule in prop_oneof![Just(Schedule::Cosine), Just(Schedule::Linear), Just(Schedule::Constant)],
    ) {
        let cfg = TrainConfig { warmup_fraction: frac, schedule, ..TrainConfig::new(Method::Single, 1, lr) };
        for step in 0..=total {
            let v = lr_at(step, total, &cfg);
            prop_assert!(v >= 0.0 && v <= lr * (1.0 + 1e-15), "step {step}: {v}");
        }
    }

    #[test]
    fn projection_clamps_every_spectrum_at_zero(
        w in matrix(6),
        noise in prop::collection::vec(-10.0f64..10.0, 36 * 3),
        seed: u64,
    ) {
        let mut l = SveLinear::wrap("fc", &w, None, &SveConfig::new(3, 0.0), &Rng::seed_from_u64(seed)).unwrap();
        let mut it = noise.iter();
        let before: Vec<Vec<f64>> = l
            .sigma_members
            .iter_mut()
            .map(|s| {
                s.data_mut().iter_mut().for_each(|v| *v += it.next().unwrap());
                s.data().to_vec()
            })
            .collect();
        l.project_nonneg();
        for (s, b) in l.sigma_members.iter().zip(&before) {
            for (&v, &o) in s.data().iter().zip(b) {
                prop_assert!(v >= 0.0);
                prop_assert_eq!(v, o.max(0.0));
            }
        }
    }

    #[test]
    fn rng_splits_are_deterministic_and_tag_separated(seed: u64, a in "[a-z]{1,8}", b in "[a-z]{1,8}") {
        let root = Rng::seed_from_u64(seed);
        let draw = |r: &Rng| { let mut r = r.clone(); (0..4).map(|_| r.next_u64()).collect::<Vec<_>>() };
        prop_assert_eq!(draw(&root.split(&a)), draw(&Rng::seed_from_u64(seed).split(&a)));
        if a != b {
            prop_assert_ne!(draw(&root.split(&a)), draw(&root.split(&b)));
        }
        prop_assert_ne!(draw(&root.split_indexed(&a, 0)), draw(&root.split_indexed(&a, 1)));
    }

    #[test]
    fn sample_statistics_match_direct_formulas(xs in prop::collection::vec(-1e3f64..1e3, 1..30)) {
        let (m, s) = mean_std(&xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        prop_assert!((m - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        if xs.len() == 1 {
            prop_assert_eq!(s, 0.0);
        } else {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            prop_assert!((s - var.sqrt()).abs() <= 1e-12 * var.sqrt().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed: u64, members in 1usize..4, sigma_init in 0.0f64..0.1) {
        let tc = TrainConfig { seed, n_members: members, sigma_init, ..TrainConfig::new(Method::Sve, 1, 0.01) };
        let m = build_sve(&ModelSpec::mlp(vec![5, 7], 3), None, &tc).unwrap();
        let bytes = encode(&m, Some(&tc)).unwrap();
        let (back, header) = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(header.train_config.as_ref(), Some(&tc));
        prop_assert_eq!(encode(&back, Some(&tc)).unwrap(), bytes);
    }
}
