//! Experiment protocols over seeds.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{ExperimentConfig, ExperimentKind, PretrainConfig};
use super::results::{aggregate, fmt_f64, write_csv, write_json, write_record, ResultsRecord, RunEntry, SigmaDistance};
use crate::data::{corrupt, load_csv, load_idx, source_spec, CorruptionSpec, Dataset, SplitTag, Standardizer, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{max_softmax, ood_metrics, MetricsReport, OodScores};
use crate::models::{predict, BaseWeights, Classifier, DeepEnsemble, EnsembleModel, Mode, ModelSpec, PredictionBatch};
use crate::rng::{Rng, ALGORITHM_ID};
use crate::sve::DiversityTable;
use crate::tensor::Tensor;
use crate::training::{build_sve, eval_mode, pretrain_base, train_deep_ensemble, train_joint, train_single, Method, TrainConfig};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A trained predictor of any method.
#[derive(Clone, Debug)]
pub enum Trained {
    Model(EnsembleModel),
    Ensemble(DeepEnsemble),
}

impl Classifier for Trained {
    fn n_classes(&self) -> usize {
        match self {
            Trained::Model(m) => m.n_classes(),
            Trained::Ensemble(e) => e.n_classes(),
        }
    }

    fn member_logits(&self, x: &Tensor, mode: Mode, rng: &Rng) -> Result<Vec<Tensor>> {
        match self {
            Trained::Model(m) => m.member_logits(x, mode, rng),
            Trained::Ensemble(e) => e.member_logits(x, mode, rng),
        }
    }
}

impl Trained {
    pub fn trainable_params(&self) -> usize {
        match self {
            Trained::Model(m) => m.clone().trainable_param_count(),
            Trained::Ensemble(e) => e.models.iter().map(|m| m.clone().trainable_param_count()).sum(),
        }
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Single => "single",
        Method::Svf => "svf",
        Method::Sve => "sve",
        Method::DeepEnsemble => "deep_ensemble",
        Method::McDropout => "mc_dropout",
    }
}

fn mode_for(m: Method) -> Mode {
    if m == Method::McDropout {
        Mode::McDropoutEval
    } else {
        Mode::Eval
    }
}

/// Target data for one seed, standardized with target-train statistics.
pub struct SeedData {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Standardizer,
}

pub fn seed_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let d = &cfg.data;
    let (train, test) = if let Some(t) = &d.task {
        (
            t.generate(d.n_train_per_class, &format!("train-{seed}"), SplitTag::Train)?,
            t.generate(d.n_test_per_class, &format!("test-{seed}"), SplitTag::Test)?,
        )
    } else if let Some(c) = &d.csv {
        (load_csv(&c.train, &c.schema, SplitTag::Train)?, load_csv(&c.test, &c.schema, SplitTag::Test)?)
    } else if let Some(i) = &d.idx {
        (
            load_idx(&i.train_images, &i.train_labels, i.n_classes, SplitTag::Train)?,
            load_idx(&i.test_images, &i.test_labels, i.n_classes, SplitTag::Test)?,
        )
    } else {
        return Err(Error::Config {
            path: "data".into(),
            msg: "no data source".into(),
        });
    };
    if train.dim() != cfg.model.input_dim() {
        return Err(Error::dim("dataset vs model input", &[train.dim()], &[cfg.model.input_dim()]));
    }
    let standardizer = Standardizer::fit(&train);
    Ok(SeedData {
        train: standardizer.apply(&train)?,
        test: standardizer.apply(&test)?,
        standardizer,
    })
}

/// Pretrains on the source task at `overlap` for `epochs` epochs.
fn pretrain_on_source(
    cfg: &ExperimentConfig,
    task: &TaskSpec,
    p: &PretrainConfig,
    overlap: f64,
    epochs: usize,
    seed: u64,
    std: &Standardizer,
) -> Result<(EnsembleModel, BaseWeights, Dataset)> {
    let src = source_spec(task, overlap);
    let train = std.apply(&src.generate(p.n_per_class, &format!("source-train-{seed}"), SplitTag::Train)?)?;
    let test = std.apply(&src.generate(p.n_per_class, &format!("source-test-{seed}"), SplitTag::Test)?)?;
    let tc = TrainConfig {
        seed,
        epochs,
        ..p.train.clone()
    };
    let (model, base, _) = pretrain_base(&cfg.model, &train, &tc)?;
    Ok((model, base, test))
}

/// The backbone every method of one seed starts from.
fn base_for_seed(cfg: &ExperimentConfig, seed: u64, data: &SeedData) -> Result<Option<BaseWeights>> {
    if let Some(path) = &cfg.checkpoint {
        let (m, _) = load_checkpoint(path)?;
        if m.spec.architecture != cfg.model.architecture {
            return Err(Error::Config {
                path: "checkpoint".into(),
                msg: "checkpoint architecture differs from model".into(),
            });
        }
        return Ok(Some(m.base_weights()?));
    }
    match (&cfg.pretrain, &cfg.data.task) {
        (Some(p), Some(t)) => Ok(Some(pretrain_on_source(cfg, t, p, p.overlap, p.train.epochs, seed, &data.standardizer)?.1)),
        _ => Ok(None),
    }
}

/// Trains `method` for one seed. `members` overrides the ensemble size.
pub fn train_method(cfg: &ExperimentConfig, method: Method, base: Option<&BaseWeights>, train: &Dataset, seed: u64, members: Option<usize>) -> Result<Trained> {
    let m = members.unwrap_or(cfg.train.n_members);
    let baseline = cfg.baseline_train();
    match method {
        Method::Single => {
            let tc = TrainConfig {
                seed,
                method,
                n_members: 1,
                ..baseline.clone()
            };
            Ok(Trained::Model(train_single(&cfg.model, base, train, None, &tc)?.0))
        }
        Method::McDropout => {
            let spec = ModelSpec {
                dropout_rate: cfg.mc_dropout_rate,
                ..cfg.model.clone()
            };
            let tc = TrainConfig {
                seed,
                method,
                n_members: 1,
                ..baseline.clone()
            };
            Ok(Trained::Model(train_single(&spec, base, train, None, &tc)?.0))
        }
        Method::DeepEnsemble => {
            let tc = TrainConfig { seed, ..baseline.clone() };
            Ok(Trained::Ensemble(train_deep_ensemble(&cfg.model, base, train, &tc, m)?.0))
        }
        Method::Sve | Method::Svf => {
            let tc = TrainConfig {
                seed,
                method,
                n_members: if method == Method::Svf { 1 } else { m },
                ..cfg.train.clone()
            };
            let mut model = build_sve(&cfg.model, base, &tc)?;
            train_joint(&mut model, train, None, &tc)?;
            Ok(Trained::Model(model))
        }
    }
}

fn predict_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed).split("predict")
}

fn evaluate(model: &Trained, mode: Mode, test: &Dataset, seed: u64) -> Result<(PredictionBatch, MetricsReport)> {
    let p = predict(model, &test.x, mode, &predict_rng(seed))?;
    let r = MetricsReport::compute(&p.mean_probs, &test.y)?;
    Ok((p, r))
}

fn entry(seed: u64, method: &str, label: String, model: &Trained, p: &PredictionBatch, metrics: MetricsReport) -> RunEntry {
    RunEntry {
        seed,
        method: method.to_string(),
        label,
        metrics,
        disagreement: p.mean_disagreement(),
        trainable_params: model.trainable_params(),
        diversity: vec![],
        sigma_distances: vec![],
    }
}

fn checkpoint_dir(out: &Path) -> Result<PathBuf> {
    let d = out.join("checkpoints");
    std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

fn save_trained(t: &Trained, cfg: &TrainConfig, dir: &Path, stem: &str) -> Result<()> {
    match t {
        Trained::Model(m) => save_checkpoint(m, Some(cfg), &dir.join(format!("{stem}.sve"))),
        Trained::Ensemble(e) => e
            .models
            .iter()
            .enumerate()
            .try_for_each(|(i, m)| save_checkpoint(m, Some(cfg), &dir.join(format!("{stem}_m{i}.sve")))),
    }
}

fn method_config(cfg: &ExperimentConfig, method: Method, seed: u64) -> TrainConfig {
    let base = if matches!(method, Method::Sve | Method::Svf) {
        &cfg.train
    } else {
        cfg.baseline_train()
    };
    TrainConfig { seed, method, ..base.clone() }
}

fn run_pretrain(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunEntry>> {
    let p = cfg.pretrain.as_ref().expect("validated");
    let data = seed_data(cfg, seed)?;
    let (model, test) = match &cfg.data.task {
        Some(t) => {
            let (m, _, test) = pretrain_on_source(cfg, t, p, p.overlap, p.train.epochs, seed, &data.standardizer)?;
            (m, test)
        }
        // On-disk data: the given training split is the source task.
        None => {
            let tc = TrainConfig { seed, ..p.train.clone() };
            (pretrain_base(&cfg.model, &data.train, &tc)?.0, data.test)
        }
    };
    let tc = TrainConfig { seed, ..p.train.clone() };
    save_checkpoint(&model, Some(&tc), &checkpoint_dir(out)?.join(format!("pretrain_seed{seed}.sve")))?;
    let t = Trained::Model(model);
    let (pb, r) = evaluate(&t, Mode::Eval, &test, seed)?;
    Ok(vec![entry(seed, "pretrain", "source".into(), &t, &pb, r)])
}

fn run_finetune(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunEntry>> {
    let data = seed_data(cfg, seed)?;
    let base = base_for_seed(cfg, seed, &data)?;
    let dir = checkpoint_dir(out)?;
    let mut runs = Vec::new();
    for &method in &cfg.methods {
        let t = train_method(cfg, method, base.as_ref(), &data.train, seed, None)?;
        save_trained(&t, &method_config(cfg, method, seed), &dir, &format!("{}_seed{seed}", method_name(method)))?;
        let (p, r) = evaluate(&t, mode_for(method), &data.test, seed)?;
        runs.push(entry(seed, method_name(method), String::new(), &t, &p, r));
    }
    Ok(runs)
}

fn run_eval(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunEntry>> {
    let path = cfg.checkpoint.as_ref().expect("validated");
    let (model, header) = load_checkpoint(path)?;
    let mode = header.train_config.as_ref().map(eval_mode).unwrap_or(Mode::Eval);
    let method = header.train_config.as_ref().map(|c| method_name(c.method)).unwrap_or("checkpoint");
    let data = seed_data(cfg, seed)?;
    let t = Trained::Model(model);
    let (p, r) = evaluate(&t, mode, &data.test, seed)?;
    Ok(vec![entry(seed, method, String::new(), &t, &p, r)])
}

fn run_ood(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunEntry>> {
    let task = cfg.data.task.as_ref().expect("validated");
    let shift = cfg.ood.as_ref().map_or(0.0, |o| o.shift);
    let n_ood = cfg.ood.as_ref().map_or(cfg.data.n_test_per_class, |o| o.n_per_class);
    let data = seed_data(cfg, seed)?;
    let ood = data
        .standardizer
        .apply(&task.ood_variant(shift).generate(n_ood, &format!("ood-{seed}"), SplitTag::Test)?)?;
    let base = base_for_seed(cfg, seed, &data)?;
    let mut runs = Vec::new();
    for &method in &cfg.methods {
        let t = train_method(cfg, method, base.as_ref(), &data.train, seed, None)?;
        let (p, mut r) = evaluate(&t, mode_for(method), &data.test, seed)?;
        let q = predict(&t, &ood.x, mode_for(method), &predict_rng(seed).split("ood"))?;
        r.ood = Some(ood_metrics(&OodScores {
            in_dist: max_softmax(&p.mean_probs),
            ood: max_softmax(&q.mean_probs),
        })?);
        runs.push(entry(seed, method_name(method), format!("shift={shift}"), &t, &p, r));
    }
    Ok(runs)
}

fn run_shift_sweep(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunEntry>> {
    let kinds = cfg
        .shift
        .as_ref()
        .map(|s| s.kinds.clone())
        .unwrap_or_else(|| crate::data::CorruptionKind::ALL.to_vec());
    let data = seed_data(cfg, seed)?;
    let base = base_for_seed(cfg, seed, &data)?;
    let mut runs = Vec::new();
    for &method in &cfg.methods {
        let t = train_method(cfg, method, base.as_ref(), &data.train, seed, None)?;
        let (p, r) = evaluate(&t, mode_for(method), &data.test, seed)?;
        runs.push(entry(seed, method_name(method), "clean/0".into(), &t, &p, r));
        for &kind in &kinds {
            for severity in 1..=5u8 {
                let spec = CorruptionSpec { kind, severity };
                let test = corrupt(&data.test, spec, seed)?;
                let (p, r) = evaluate(&t, mode_for(method), &test, seed)?;
                runs.push(entry(seed, method_name(method), format!("{}/{severity}", kind_name(kind)), &t, &p, r));
            }
        }
    }
    Ok(runs)
}

pub fn kind_name(k: crate::data::CorruptionKind) -> &'static str {
    use crate::data::CorruptionKind::*;
    match k {
        GaussianNoise => "gaussian_noise",
        UniformNoise => "uniform_noise",
        FeatureDropout => "feature_dropout",
        AffineShift => "affine_shift",
    }
}

fn run_members_ablation(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunEntry>> {
    let sizes = cfg.ablation.as_ref().map(|a| a.members.clone()).unwrap_or_else(|| vec![1, 2, 4, 8]);
    let data = seed_data(cfg, seed)?;
    let base = base_for_seed(cfg, seed, &data)?;
    sizes
        .iter()
        .map(|&m| {
            let t = train_method(cfg, Method::Sve, base.as_ref(), &data.train, seed, Some(m))?;
            let (p, r) = evaluate(&t, Mode::Eval, &data.test, seed)?;
            Ok(entry(seed, "sve", format!("M={m}"), &t, &p, r))
        })
        .collect()
}

/// Names of the three backbone arms in order of representation quality.
pub const ARMS: [&str; 3] = ["random", "weak", "strong"];

fn run_backbone_quality(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunEntry>> {
    let task = cfg.data.task.as_ref().expect("validated");
    let p = cfg.pretrain.as_ref().expect("validated");
    let q = cfg.quality.as_ref().expect("validated");
    let data = seed_data(cfg, seed)?;
    let weak = pretrain_on_source(cfg, task, p, q.weak_overlap.unwrap_or(p.overlap), q.weak_epochs, seed, &data.standardizer)?.1;
    let strong = pretrain_on_source(cfg, task, p, p.overlap, p.train.epochs, seed, &data.standardizer)?.1;
    let mut runs = Vec::new();
    for (arm, base) in ARMS.iter().zip([None, Some(weak), Some(strong)]) {
        for method in [Method::Sve, Method::DeepEnsemble] {
            let t = train_method(cfg, method, base.as_ref(), &data.train, seed, None)?;
            let (pb, r) = evaluate(&t, Mode::Eval, &data.test, seed)?;
            runs.push(entry(seed, method_name(method), format!("arm={arm}"), &t, &pb, r));
        }
    }
    Ok(runs)
}

/// Layer group of a projection: attention q/k/v, attention output, or feed-forward.
pub fn layer_group(name: &str) -> &'static str {
    match name {
        "attn.q" | "attn.k" | "attn.v" => "qkv",
        "attn.o" => "proj",
        _ => "fc",
    }
}

/// Percent change of the top singular values per member, for every SVE layer.
pub fn diversity_tables(model: &EnsembleModel, top_k: usize) -> Result<Vec<DiversityTable>> {
    if !model.is_sve() {
        return Err(Error::Capability("diversity needs a model with SVE layers".into()));
    }
    model.sve_layers().map(|l| l.diversity_report(top_k.min(l.rank()))).collect()
}

/// Writes one CSV per layer group into `dir` and returns the tables.
/// Columns: layer, index, pretrained, member_0.. (percent change).
pub fn diversity_dump(model: &EnsembleModel, top_k: usize, dir: &Path) -> Result<Vec<DiversityTable>> {
    let tables = diversity_tables(model, top_k)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut header: Vec<String> = ["layer", "index", "pretrained"].map(String::from).to_vec();
    header.extend((0..model.n_members()).map(|m| format!("member_{m}")));
    for group in ["qkv", "proj", "fc"] {
        let rows: Vec<Vec<String>> = tables
            .iter()
            .filter(|t| layer_group(&t.layer) == group)
            .flat_map(|t| {
                t.rows.iter().map(|r| {
                    let mut row = vec![t.layer.clone(), r.index.to_string(), fmt_f64(r.pretrained)];
                    row.extend(r.percent_change.iter().map(|&v| fmt_f64(v)));
                    row
                })
            })
            .collect();
        if !rows.is_empty() {
            write_csv(&dir.join(format!("diversity_{group}.csv")), &header, &rows)?;
        }
    }
    Ok(tables)
}

fn sigma_distances(model: &EnsembleModel) -> Vec<SigmaDistance> {
    model
        .sve_layers()
        .flat_map(|l| {
            l.pairwise_sigma_distances().into_iter().map(|(a, b, distance)| SigmaDistance {
                layer: l.name.clone(),
                a,
                b,
                distance,
            })
        })
        .collect()
}

fn run_diversity(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<RunEntry>> {
    let top_k = cfg.diversity.as_ref().map_or(8, |d| d.top_k);
    let data = seed_data(cfg, seed)?;
    let (model, label) = match &cfg.checkpoint {
        Some(path) => {
            let (m, _) = load_checkpoint(path)?;
            if !m.is_sve() {
                return Err(Error::Capability(format!("checkpoint {} has no SVE layers", path.display())));
            }
            (m, "checkpoint")
        }
        None => {
            let base = base_for_seed(cfg, seed, &data)?;
            match train_method(cfg, Method::Sve, base.as_ref(), &data.train, seed, None)? {
                Trained::Model(m) => (m, "trained"),
                Trained::Ensemble(_) => unreachable!("sve trains one model"),
            }
        }
    };
    let tables = diversity_dump(&model, top_k, &out.join(format!("diversity_seed{seed}")))?;
    let distances = sigma_distances(&model);
    let t = Trained::Model(model);
    let (p, r) = evaluate(&t, Mode::Eval, &data.test, seed)?;
    let mut e = entry(seed, "sve", label.into(), &t, &p, r);
    e.diversity = tables;
    e.sigma_distances = distances;
    Ok(vec![e])
}

#[derive(Serialize)]
struct Runtime<'a> {
    experiment: &'a str,
    total_seconds: f64,
    per_seed_seconds: Vec<(u64, f64)>,
}

/// Runs the configured experiment for every seed and writes `results.json`,
/// `per_seed.csv`, `plot_data.csv` and `runtime.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<ResultsRecord> {
    cfg.validate()?;
    if let Some(p) = &cfg.checkpoint {
        if !p.exists() {
            return Err(Error::Dependency(format!("checkpoint {} does not exist", p.display())));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    // Seeds are independent; collect() keeps them in seed order.
    let per_seed: Vec<(Vec<RunEntry>, f64)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let t = Instant::now();
            log::info!("{} seed {seed}", cfg.experiment.name());
            let runs = match cfg.experiment {
                ExperimentKind::Pretrain => run_pretrain(cfg, seed, out),
                ExperimentKind::Finetune => run_finetune(cfg, seed, out),
                ExperimentKind::Eval => run_eval(cfg, seed),
                ExperimentKind::Ood => run_ood(cfg, seed),
                ExperimentKind::ShiftSweep => run_shift_sweep(cfg, seed),
                ExperimentKind::MembersAblation => run_members_ablation(cfg, seed),
                ExperimentKind::BackboneQuality => run_backbone_quality(cfg, seed),
                ExperimentKind::Diversity => run_diversity(cfg, seed, out),
            }?;
            Ok((runs, t.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let seconds: Vec<(u64, f64)> = cfg.seeds.iter().copied().zip(per_seed.iter().map(|(_, s)| *s)).collect();
    let runs: Vec<RunEntry> = per_seed.into_iter().flat_map(|(r, _)| r).collect();
    let record = ResultsRecord {
        experiment: cfg.experiment.name().to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        algorithm_id: ALGORITHM_ID.to_string(),
        code_version: CODE_VERSION.to_string(),
        aggregates: aggregate(&runs),
        runs,
    };
    write_record(&record, out)?;
    write_json(
        &Runtime {
            experiment: cfg.experiment.name(),
            total_seconds: start.elapsed().as_secs_f64(),
            per_seed_seconds: seconds,
        },
        &out.join("runtime.json"),
    )?;
    Ok(record)
}
