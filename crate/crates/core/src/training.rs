//! Joint ensemble optimization with AdamW, warmup plus decay schedules and
//! global-norm clipping, and the baseline runners.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradcheck::Objective;
use crate::metrics::MetricsReport;
use crate::models::{predict, BaseWeights, DeepEnsemble, EnsembleModel, MemberGraph, Mode, ModelSpec, ParamKind};
use crate::rng::Rng;
use crate::sve::SveConfig;
use crate::tape::{Grads, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Cosine,
    Linear,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    Svf,
    Sve,
    DeepEnsemble,
    McDropout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub warmup_fraction: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub seed: u64,
    pub method: Method,
    #[serde(default = "default_members")]
    pub n_members: usize,
    #[serde(default = "default_sigma_init")]
    pub sigma_init: f64,
    /// Each member draws its own batch order instead of sharing one.
    #[serde(default)]
    pub independent_batches: bool,
    /// Runs member forward/backward passes on worker threads.
    #[serde(default)]
    pub parallel: bool,
}

fn default_batch() -> usize {
    64
}

fn default_schedule() -> Schedule {
    Schedule::Cosine
}

fn default_clip() -> f64 {
    1.0
}

fn default_members() -> usize {
    4
}

fn default_sigma_init() -> f64 {
    0.01
}

impl TrainConfig {
    pub fn new(method: Method, epochs: usize, lr: f64) -> Self {
        TrainConfig {
            epochs,
            batch_size: default_batch(),
            lr,
            weight_decay: 0.0,
            schedule: default_schedule(),
            warmup_fraction: 0.0,
            grad_clip: default_clip(),
            seed: 0,
            method,
            n_members: if matches!(method, Method::Sve | Method::DeepEnsemble) {
                default_members()
            } else {
                1
            },
            sigma_init: default_sigma_init(),
            independent_batches: false,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Input(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Input(format!("grad_clip must be positive, got {}", self.grad_clip)));
        }
        if self.n_members == 0 || self.batch_size == 0 {
            return Err(Error::Input("n_members and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Input(format!("warmup_fraction must lie in [0, 1), got {}", self.warmup_fraction)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Input("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn sve_config(&self) -> SveConfig {
        SveConfig::new(self.n_members, self.sigma_init)
    }
}

/// Learning rate at `step` of a run with `total_steps` steps: linear warmup
/// from 0 over `round(warmup_fraction·total_steps)` steps, then decay that
/// reaches 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warm = (cfg.warmup_fraction * total_steps as f64).round() as usize;
    if step < warm {
        return cfg.lr * step as f64 / warm as f64;
    }
    if cfg.schedule == Schedule::Constant || total_steps <= warm {
        return cfg.lr;
    }
    let p = ((step - warm) as f64 / (total_steps - warm) as f64).min(1.0);
    match cfg.schedule {
        Schedule::Cosine => cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()),
        Schedule::Linear => cfg.lr * (1.0 - p),
        Schedule::Constant => unreachable!(),
    }
}

/// AdamW with decoupled weight decay, applied before the moment update.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once before the `update`s of a step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates parameter slot `slot` in place.
    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64], decay: bool, lr: f64) {
        if self.m.len() <= slot {
            self.m.resize(slot + 1, Vec::new());
            self.v.resize(slot + 1, Vec::new());
        }
        if self.m[slot].len() != param.len() {
            self.m[slot] = vec![0.0; param.len()];
            self.v[slot] = vec![0.0; param.len()];
        }
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            if decay {
                param[i] *= 1.0 - lr * self.weight_decay;
            }
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            param[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }

    /// One step over every trainable tensor of `model`. Weight decay applies
    /// to [`ParamKind::Weight`] only.
    pub fn step_model(&mut self, model: &mut EnsembleModel, lr: f64) {
        self.begin_step();
        let mut slot = 0;
        model.visit_params_mut(&mut |_, kind, t| {
            let g = t.grad.take().unwrap_or_else(|| vec![0.0; t.len()]);
            self.update(slot, t.data_mut(), &g, kind == ParamKind::Weight, lr);
            t.grad = Some(g);
            slot += 1;
        });
    }
}

/// Global L2 norm of all accumulated gradients.
pub fn grad_norm(model: &mut EnsembleModel) -> f64 {
    let mut s = 0.0;
    model.visit_params_mut(&mut |_, _, t| {
        if let Some(g) = &t.grad {
            s += g.iter().map(|v| v * v).sum::<f64>();
        }
    });
    s.sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(model: &mut EnsembleModel, max_norm: f64) -> f64 {
    let norm = grad_norm(model);
    if norm > max_norm {
        let s = max_norm / norm;
        model.visit_params_mut(&mut |_, _, t| {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|v| *v *= s);
            }
        });
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Training loss of every optimizer step, before the update.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
}

fn check_method(model: &EnsembleModel, cfg: &TrainConfig) -> Result<()> {
    let ok = match cfg.method {
        Method::Sve => model.is_sve() && model.n_members() == cfg.n_members,
        Method::Svf => model.is_sve() && model.n_members() == 1,
        Method::Single | Method::DeepEnsemble => !model.is_sve() && model.n_members() == 1,
        Method::McDropout => !model.is_sve() && model.n_members() == 1 && model.spec.dropout_rate > 0.0,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "model ({} members, sve={}, dropout={}) does not fit method {:?} with n_members={}",
            model.n_members(),
            model.is_sve(),
            model.spec.dropout_rate,
            cfg.method,
            cfg.n_members
        )))
    }
}

/// Loss of one member on one batch and the gradients of `scale · loss`.
fn member_pass(model: &EnsembleModel, member: usize, x: &Tensor, y: &[usize], scale: f64, dropout: Option<Rng>) -> Result<(f64, MemberGraph, Grads)> {
    let mut tape = Tape::new();
    let mut dropout = dropout;
    let g = model.forward_member(&mut tape, member, x, dropout.as_mut())?;
    let logits = tape.transpose(g.logits)?;
    let loss = tape.softmax_cross_entropy(logits, y)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward_scaled(loss, scale)?;
    Ok((value, g, grads))
}

/// Accumulates gradients of the training loss on one batch per member into
/// `model`. With `mean_over_members` the loss is `(1/M) Σ_m CE_m`, otherwise
/// the single member's plain cross-entropy. Members are reduced in ascending
/// order, so the parallel and sequential paths give identical bits.
fn accumulate(model: &mut EnsembleModel, batches: &[(Tensor, Vec<usize>)], mean_over_members: bool, parallel: bool, dropout: &Rng) -> Result<f64> {
    let m = model.n_members();
    let scale = if mean_over_members { 1.0 / m as f64 } else { 1.0 };
    let has_dropout = model.spec.dropout_rate > 0.0;
    let run = |k: usize| {
        let (x, y) = &batches[k.min(batches.len() - 1)];
        let r = has_dropout.then(|| dropout.split_indexed("member", k as u64));
        member_pass(model, k, x, y, scale, r)
    };
    let results: Vec<Result<(f64, MemberGraph, Grads)>> = if parallel && m > 1 {
        (0..m).into_par_iter().map(run).collect()
    } else {
        (0..m).map(run).collect()
    };
    let mut total = 0.0;
    for r in results {
        let (loss, graph, grads) = r?;
        total += loss;
        model.absorb(&graph, &grads);
    }
    Ok(if mean_over_members { total / m as f64 } else { total })
}

/// Trains `model` in place on `train`, evaluating on `eval` after every epoch.
///
/// SVE models use the mean member cross-entropy; all other methods use the
/// plain cross-entropy of their single member.
pub fn train_joint(model: &mut EnsembleModel, train: &Dataset, eval: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    check_method(model, cfg)?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mean_over_members = cfg.method == Method::Sve;
    let n = train.len();
    let spe = cfg.steps_per_epoch(n);
    let total = cfg.epochs * spe;
    let root = Rng::seed_from_u64(cfg.seed).split("train");
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut history = TrainHistory::default();
    let m = model.n_members();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let orders: Vec<Vec<usize>> = if cfg.independent_batches {
            (0..m)
                .map(|k| root.split_indexed("epoch", epoch as u64).split_indexed("member", k as u64).permutation(n))
                .collect()
        } else {
            vec![root.split_indexed("epoch", epoch as u64).permutation(n)]
        };
        let mut epoch_loss = 0.0;
        for b in 0..spe {
            let lo = b * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(n);
            let batches: Vec<(Tensor, Vec<usize>)> = orders.iter().map(|o| train.select(&o[lo..hi])).collect();
            model.zero_grads();
            let loss = accumulate(model, &batches, mean_over_members, cfg.parallel, &root.split_indexed("dropout", step as u64)).map_err(|e| match e {
                Error::Numeric(_) => Error::NonFiniteLoss { step },
                e => e,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            clip_grad_norm(model, cfg.grad_clip);
            opt.step_model(model, lr_at(step, total, cfg));
            model.project_nonneg();
            history.step_losses.push(loss);
            epoch_loss += loss;
            step += 1;
        }
        let eval_report = match eval {
            Some(d) => {
                let p = predict(&*model, &d.x, eval_mode(cfg), &root.split_indexed("eval", epoch as u64))?;
                Some(MetricsReport::compute(&p.mean_probs, &d.y)?)
            }
            None => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / spe as f64,
            eval: eval_report,
        });
    }
    model.zero_grads();
    Ok(history)
}

/// Prediction mode matching a training method.
pub fn eval_mode(cfg: &TrainConfig) -> Mode {
    if cfg.method == Method::McDropout {
        Mode::McDropoutEval
    } else {
        Mode::Eval
    }
}

/// Trains a plain model on the source task and returns it with its weights.
/// Zero epochs return the initialization.
pub fn pretrain_base(spec: &ModelSpec, source: &Dataset, cfg: &TrainConfig) -> Result<(EnsembleModel, BaseWeights, TrainHistory)> {
    let cfg = TrainConfig {
        method: Method::Single,
        n_members: 1,
        ..cfg.clone()
    };
    let mut spec = spec.clone();
    spec.dropout_rate = 0.0;
    let mut model = EnsembleModel::dense(&spec, None, &Rng::seed_from_u64(cfg.seed).split("pretrain-init"))?;
    let history = train_joint(&mut model, source, None, &cfg)?;
    let base = model.base_weights()?;
    Ok((model, base, history))
}

/// A fully trainable single model started from `base` (or from scratch).
pub fn train_single(
    spec: &ModelSpec,
    base: Option<&BaseWeights>,
    train: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(EnsembleModel, TrainHistory)> {
    let mut model = EnsembleModel::dense(spec, base, &Rng::seed_from_u64(cfg.seed).split("init"))?;
    let h = train_joint(&mut model, train, eval, cfg)?;
    Ok((model, h))
}

/// `n_members` independent single-model trainings with seeds `seed + m`.
pub fn train_deep_ensemble(
    spec: &ModelSpec,
    base: Option<&BaseWeights>,
    train: &Dataset,
    cfg: &TrainConfig,
    n_members: usize,
) -> Result<(DeepEnsemble, Vec<TrainHistory>)> {
    if n_members == 0 {
        return Err(Error::Input("deep ensemble needs at least one member".into()));
    }
    let runs = (0..n_members)
        .map(|m| {
            let c = TrainConfig {
                seed: cfg.seed + m as u64,
                method: Method::DeepEnsemble,
                n_members: 1,
                ..cfg.clone()
            };
            train_single(spec, base, train, None, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, hist) = runs.into_iter().unzip();
    Ok((DeepEnsemble { models }, hist))
}

/// SVE model over `base` with `cfg.n_members` members (the SVF model when
/// `cfg.method` is [`Method::Svf`]).
pub fn build_sve(spec: &ModelSpec, base: Option<&BaseWeights>, cfg: &TrainConfig) -> Result<EnsembleModel> {
    let sve = SveConfig::new(if cfg.method == Method::Svf { 1 } else { cfg.n_members }, cfg.sigma_init);
    EnsembleModel::sve(spec, &sve, base, &Rng::seed_from_u64(cfg.seed).split("init"))
}

/// The joint training loss of `model` on one batch, exposed as an
/// [`Objective`] over its trainable tensors for finite-difference checks.
pub struct JointObjective {
    model: EnsembleModel,
    x: Tensor,
    y: Vec<usize>,
    params: Vec<Tensor>,
}

impl JointObjective {
    pub fn new(mut model: EnsembleModel, x: Tensor, y: Vec<usize>) -> Self {
        let mut params = Vec::new();
        model.visit_params_mut(&mut |_, _, t| params.push(t.clone()));
        JointObjective { model, x, y, params }
    }

    fn sync(&mut self) {
        let mut i = 0;
        let params = &self.params;
        self.model.visit_params_mut(&mut |_, _, t| {
            t.data_mut().copy_from_slice(params[i].data());
            i += 1;
        });
    }

    fn eval(&mut self, grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
        self.sync();
        self.model.zero_grads();
        let batch = [(self.x.clone(), self.y.clone())];
        let loss = accumulate(&mut self.model, &batch, true, false, &Rng::seed_from_u64(0))?;
        let mut g = Vec::new();
        if grads {
            self.model
                .visit_params_mut(&mut |_, _, t| g.push(t.grad.clone().unwrap_or_else(|| vec![0.0; t.len()])));
        }
        Ok((loss, g))
    }
}

impl Objective for JointObjective {
    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn param(&self, i: usize) -> &Tensor {
        &self.params[i]
    }

    fn param_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i]
    }

    fn loss(&mut self) -> Result<f64> {
        self.eval(false).map(|r| r.0)
    }

    fn loss_and_grads(&mut self) -> Result<(f64, Vec<Vec<f64>>)> {
        self.eval(true)
    }
}
