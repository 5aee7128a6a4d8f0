//! Desk-scale classifiers built on [`Projection`] layers.
//!
//! Two backbones are supported: a ReLU/GELU MLP and a single pre-norm
//! transformer encoder block over a short token sequence. Either backbone can
//! be plain (dense, used by the baselines and for pretraining) or SVE-wrapped,
//! and every ensemble member owns its own classification head.

mod layers;
mod transformer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use layers::{DenseBinding, DenseLinear, LayerNorm, ParamKind, Projection, ProjectionBinding, LAYER_NORM_EPS};
pub use transformer::transformer_block_model;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sve::{HeadInit, SveConfig, SveLinear};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    GeluTanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// `dims[0]` is the input width, the rest are hidden widths.
    Mlp { dims: Vec<usize> },
    /// Inputs of width `seq_len · d_model` are read as `seq_len` tokens.
    Transformer {
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        seq_len: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub n_classes: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Only used by the MC-dropout baseline.
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_mc_passes")]
    pub mc_passes: usize,
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_mc_passes() -> usize {
    10
}

impl ModelSpec {
    pub fn mlp(dims: Vec<usize>, n_classes: usize) -> Self {
        ModelSpec {
            architecture: Architecture::Mlp { dims },
            n_classes,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            mc_passes: default_mc_passes(),
        }
    }

    pub fn transformer(d_model: usize, n_heads: usize, d_ff: usize, seq_len: usize, n_classes: usize) -> Self {
        ModelSpec {
            architecture: Architecture::Transformer {
                d_model,
                n_heads,
                d_ff,
                seq_len,
            },
            n_classes,
            activation: Activation::GeluTanh,
            dropout_rate: 0.0,
            mc_passes: default_mc_passes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Input("n_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Input(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        match &self.architecture {
            Architecture::Mlp { dims } => {
                if dims.len() < 2 || dims.contains(&0) {
                    return Err(Error::Input(format!("mlp dims need an input and at least one hidden width: {dims:?}")));
                }
            }
            Architecture::Transformer {
                d_model,
                n_heads,
                d_ff,
                seq_len,
            } => {
                if *n_heads == 0 || d_model % n_heads != 0 {
                    return Err(Error::Input(format!("d_model {d_model} not divisible by n_heads {n_heads}")));
                }
                if *d_ff == 0 || *seq_len == 0 || *d_model == 0 {
                    return Err(Error::Input("transformer sizes must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match &self.architecture {
            Architecture::Mlp { dims } => dims[0],
            Architecture::Transformer { d_model, seq_len, .. } => d_model * seq_len,
        }
    }

    /// Width of the representation the heads read.
    pub fn feature_dim(&self) -> usize {
        match &self.architecture {
            Architecture::Mlp { dims } => *dims.last().expect("validated"),
            Architecture::Transformer { d_model, .. } => *d_model,
        }
    }

    /// `(name, out, in)` of every backbone projection, in forward order.
    pub fn projection_shapes(&self) -> Vec<(String, usize, usize)> {
        match &self.architecture {
            Architecture::Mlp { dims } => dims.windows(2).enumerate().map(|(i, w)| (format!("fc{i}"), w[1], w[0])).collect(),
            Architecture::Transformer { d_model: d, d_ff, .. } => vec![
                ("attn.q".into(), *d, *d),
                ("attn.k".into(), *d, *d),
                ("attn.v".into(), *d, *d),
                ("attn.o".into(), *d, *d),
                ("mlp.fc1".into(), *d_ff, *d),
                ("mlp.fc2".into(), *d, *d_ff),
            ],
        }
    }

    pub fn norm_names(&self) -> Vec<String> {
        match &self.architecture {
            Architecture::Mlp { .. } => vec![],
            Architecture::Transformer { .. } => vec!["ln1".into(), "ln2".into()],
        }
    }
}

/// Forward-pass behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Dropout active (when the model has a dropout rate).
    Train,
    Eval,
    /// Dropout active at inference; stochastic passes act as members.
    McDropoutEval,
}

/// Frozen weights harvested from a (usually pretrained) model.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseWeights {
    pub layers: Vec<(String, Tensor, Vec<f64>)>,
    pub norms: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl BaseWeights {
    fn layer(&self, name: &str) -> Result<&(String, Tensor, Vec<f64>)> {
        self.layers
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::Input(format!("base weights lack layer {name}")))
    }

    fn norm(&self, name: &str) -> Option<&(String, Vec<f64>, Vec<f64>)> {
        self.norms.iter().find(|(n, _, _)| n == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub spec: ModelSpec,
    /// Backbone projections in forward order (see [`ModelSpec::projection_shapes`]).
    pub projections: Vec<Projection>,
    pub norms: Vec<LayerNorm>,
    /// One head per member.
    pub heads: Vec<DenseLinear>,
}

/// Tape handles produced by one member's forward pass.
#[derive(Debug)]
pub struct MemberGraph {
    /// `C × B`
    pub logits: Var,
    projections: Vec<ProjectionBinding>,
    norms: Vec<(Var, Var)>,
    head: DenseBinding,
    member: usize,
}

fn init_heads(spec: &ModelSpec, n_members: usize, head_init: HeadInit, rng: &Rng) -> Vec<DenseLinear> {
    let d = spec.feature_dim();
    (0..n_members)
        .map(|m| {
            let draw = if head_init == HeadInit::Shared { 0 } else { m };
            let mut r = rng.split_indexed("head", draw as u64);
            DenseLinear::init(&format!("head.{m}"), spec.n_classes, d, &mut r)
        })
        .collect()
}

fn init_dense_backbone(spec: &ModelSpec, rng: &Rng) -> BaseWeights {
    let mut r = rng.split("backbone");
    let layers = spec
        .projection_shapes()
        .into_iter()
        .map(|(name, out, inp)| {
            let l = DenseLinear::init(&name, out, inp, &mut r);
            (name, l.weight.clone(), l.bias.data().to_vec())
        })
        .collect();
    let norms = spec
        .norm_names()
        .into_iter()
        .map(|n| {
            let d = spec.feature_dim();
            (n, vec![1.0; d], vec![0.0; d])
        })
        .collect();
    BaseWeights { layers, norms }
}

fn check_base(spec: &ModelSpec, base: &BaseWeights) -> Result<()> {
    for (name, out, inp) in spec.projection_shapes() {
        let (_, w, b) = base.layer(&name)?;
        if w.shape() != [out, inp] || b.len() != out {
            return Err(Error::dim("base weights", w.shape(), &[out, inp]));
        }
    }
    Ok(())
}

impl EnsembleModel {
    /// A plain single-member model with a fully trainable dense backbone,
    /// initialized from `base` when given and randomly otherwise.
    pub fn dense(spec: &ModelSpec, base: Option<&BaseWeights>, rng: &Rng) -> Result<Self> {
        spec.validate()?;
        let owned;
        let base = match base {
            Some(b) => {
                check_base(spec, b)?;
                b
            }
            None => {
                owned = init_dense_backbone(spec, rng);
                &owned
            }
        };
        let projections = spec
            .projection_shapes()
            .into_iter()
            .map(|(name, _, _)| {
                let (_, w, b) = base.layer(&name)?;
                DenseLinear::from_parts(&name, w.clone(), b.clone(), true).map(Projection::Dense)
            })
            .collect::<Result<_>>()?;
        let norms = norms_from(spec, base, true);
        Ok(EnsembleModel {
            spec: spec.clone(),
            projections,
            norms,
            heads: init_heads(spec, 1, HeadInit::Independent, rng),
        })
    }

    /// An SVE model: every projection matched by `cfg.target_layers` is split
    /// and wrapped, all others stay dense and frozen. Without `base` the
    /// backbone is drawn fresh and then wrapped.
    pub fn sve(spec: &ModelSpec, cfg: &SveConfig, base: Option<&BaseWeights>, rng: &Rng) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let owned;
        let base = match base {
            Some(b) => {
                check_base(spec, b)?;
                b
            }
            None => {
                owned = init_dense_backbone(spec, rng);
                &owned
            }
        };
        let wrap_rng = rng.split("sve");
        let projections = spec
            .projection_shapes()
            .into_iter()
            .map(|(name, _, _)| {
                let (_, w, b) = base.layer(&name)?;
                if cfg.targets(&name) {
                    SveLinear::wrap(&name, w, Some(b.clone()), cfg, &wrap_rng.split(&name)).map(Projection::Sve)
                } else {
                    DenseLinear::from_parts(&name, w.clone(), b.clone(), false).map(Projection::Dense)
                }
            })
            .collect::<Result<_>>()?;
        Ok(EnsembleModel {
            spec: spec.clone(),
            projections,
            norms: norms_from(spec, base, false),
            heads: init_heads(spec, cfg.n_members, cfg.head_init, rng),
        })
    }

    pub fn n_members(&self) -> usize {
        self.heads.len()
    }

    pub fn is_sve(&self) -> bool {
        self.projections.iter().any(|p| matches!(p, Projection::Sve(_)))
    }

    pub fn sve_layers(&self) -> impl Iterator<Item = &SveLinear> {
        self.projections.iter().filter_map(Projection::as_sve)
    }

    /// Effective backbone weights as seen by member 0.
    pub fn base_weights(&self) -> Result<BaseWeights> {
        let layers = self
            .projections
            .iter()
            .map(|p| {
                let (w, b) = p.effective(0)?;
                Ok((p.name().to_string(), w, b))
            })
            .collect::<Result<_>>()?;
        let norms = self
            .norms
            .iter()
            .map(|n| (n.name.clone(), n.gain.data().to_vec(), n.bias.data().to_vec()))
            .collect();
        Ok(BaseWeights { layers, norms })
    }

    /// Visits every trainable tensor in a fixed order: projections, norms, heads.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ParamKind, &mut Tensor)) {
        for p in &mut self.projections {
            p.visit_params_mut(f);
        }
        for n in &mut self.norms {
            n.visit_params_mut(f);
        }
        for h in &mut self.heads {
            h.visit_params_mut(f);
        }
    }

    pub fn trainable_param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params_mut(&mut |_, _, t| n += t.len());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, _, t| t.zero_grad());
    }

    pub fn project_nonneg(&mut self) {
        for p in &mut self.projections {
            if let Some(s) = p.as_sve_mut() {
                s.project_nonneg();
            }
        }
    }

    /// Rearranges sample rows `B × D` into the backbone's column layout.
    fn input_columns(&self, x: &Tensor) -> Result<Tensor> {
        let d_in = self.spec.input_dim();
        if !x.is_matrix() || x.cols() != d_in {
            return Err(Error::dim("model input", x.shape(), &[x.rows(), d_in]));
        }
        match &self.spec.architecture {
            Architecture::Mlp { .. } => x.transpose(),
            Architecture::Transformer { d_model, seq_len, .. } => {
                let (d, t, b) = (*d_model, *seq_len, x.rows());
                let n = t * b;
                let mut out = vec![0.0; d * n];
                for s in 0..b {
                    let row = x.row(s);
                    for tok in 0..t {
                        for f in 0..d {
                            out[f * n + s * t + tok] = row[tok * d + f];
                        }
                    }
                }
                Tensor::matrix(d, n, out)
            }
        }
    }

    /// Builds member `member`'s forward pass for sample rows `x`. When `dropout`
    /// is given and the model has a dropout rate, masks are drawn from it.
    pub fn forward_member(&self, tape: &mut Tape, member: usize, x: &Tensor, dropout: Option<&mut Rng>) -> Result<MemberGraph> {
        if member >= self.n_members() {
            return Err(Error::Index {
                what: "ensemble member",
                index: member,
                len: self.n_members(),
            });
        }
        let cols = self.input_columns(x)?;
        let input = tape.constant(cols);
        let mut dropout = dropout.filter(|_| self.spec.dropout_rate > 0.0);
        let rate = self.spec.dropout_rate;
        let mut bindings = Vec::with_capacity(self.projections.len());
        for p in &self.projections {
            bindings.push(p.bind(tape, member)?);
        }
        let norms: Vec<(Var, Var)> = self.norms.iter().map(|n| n.bind(tape)).collect();

        let features = match &self.spec.architecture {
            Architecture::Mlp { .. } => {
                let mut h = input;
                for b in &bindings {
                    h = b.apply(tape, h)?;
                    h = match self.spec.activation {
                        Activation::Relu => tape.relu(h),
                        Activation::GeluTanh => tape.gelu(h),
                    };
                    if let Some(r) = dropout.as_deref_mut() {
                        h = apply_dropout(tape, h, rate, r)?;
                    }
                }
                h
            }
            Architecture::Transformer { n_heads, seq_len, .. } => {
                transformer::block_forward(tape, input, &bindings, &norms, *n_heads, *seq_len, dropout.map(|r| (r, rate)))?
            }
        };
        let head = self.heads[member].bind(tape);
        let logits = head.apply(tape, features)?;
        Ok(MemberGraph {
            logits,
            projections: bindings,
            norms,
            head,
            member,
        })
    }

    /// Adds the gradients recorded for `graph` into the model's accumulators.
    pub fn absorb(&mut self, graph: &MemberGraph, grads: &crate::tape::Grads) {
        let m = graph.member;
        for (p, b) in self.projections.iter_mut().zip(&graph.projections) {
            p.absorb(m, b, grads);
        }
        for (n, b) in self.norms.iter_mut().zip(&graph.norms) {
            n.absorb(*b, grads);
        }
        self.heads[m].absorb(&graph.head, grads);
    }

    /// Logits `B × C` of one member.
    pub fn member_logits_one(&self, member: usize, x: &Tensor, dropout: Option<&mut Rng>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let g = self.forward_member(&mut tape, member, x, dropout)?;
        let t = tape.transpose(g.logits)?;
        Ok(tape.value(t).clone())
    }

    /// Serializable description of the model's parameters.
    pub fn layout(&self) -> ModelLayout {
        ModelLayout {
            spec: self.spec.clone(),
            projections: self
                .projections
                .iter()
                .map(|p| match p {
                    Projection::Dense(d) => LayerLayout {
                        name: d.name.clone(),
                        sve: false,
                        trainable: d.trainable,
                        has_bias: true,
                    },
                    Projection::Sve(s) => LayerLayout {
                        name: s.name.clone(),
                        sve: true,
                        trainable: true,
                        has_bias: s.bias().is_some(),
                    },
                })
                .collect(),
            norms_trainable: self.norms.first().is_some_and(|n| n.trainable),
            n_members: self.n_members(),
        }
    }

    /// Every array needed to rebuild the model, keyed by a stable name.
    pub fn named_arrays(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for p in &self.projections {
            match p {
                Projection::Dense(d) => {
                    out.push((format!("{}.weight", d.name), d.weight.clone()));
                    out.push((format!("{}.bias", d.name), d.bias.clone()));
                }
                Projection::Sve(s) => {
                    out.push((format!("{}.u", s.name), s.u().clone()));
                    out.push((format!("{}.vt", s.name), s.vt().clone()));
                    out.push((format!("{}.sigma_pretrained", s.name), Tensor::vector(s.sigma_pretrained().to_vec())));
                    if let Some(b) = s.bias() {
                        out.push((format!("{}.bias", s.name), Tensor::vector(b.to_vec())));
                    }
                    for (m, sig) in s.sigma_members.iter().enumerate() {
                        out.push((format!("{}.sigma.{m}", s.name), sig.clone()));
                    }
                }
            }
        }
        for n in &self.norms {
            out.push((format!("{}.gain", n.name), n.gain.clone()));
            out.push((format!("{}.bias", n.name), n.bias.clone()));
        }
        for h in &self.heads {
            out.push((format!("{}.weight", h.name), h.weight.clone()));
            out.push((format!("{}.bias", h.name), h.bias.clone()));
        }
        out.into_iter()
            .map(|(k, mut t)| {
                t.grad = None;
                t.requires_grad = false;
                (k, t)
            })
            .collect()
    }

    /// Inverse of [`named_arrays`](Self::named_arrays).
    pub fn from_named_arrays(layout: &ModelLayout, arrays: &BTreeMap<String, Tensor>) -> Result<Self> {
        layout.spec.validate()?;
        let get = |k: &str| -> Result<&Tensor> { arrays.get(k).ok_or_else(|| Error::Format(format!("missing array {k}"))) };
        let mut projections = Vec::new();
        for l in &layout.projections {
            if l.sve {
                let bias = if l.has_bias {
                    Some(get(&format!("{}.bias", l.name))?.data().to_vec())
                } else {
                    None
                };
                let members = (0..layout.n_members)
                    .map(|m| get(&format!("{}.sigma.{m}", l.name)).map(|t| t.data().to_vec()))
                    .collect::<Result<Vec<_>>>()?;
                projections.push(Projection::Sve(SveLinear::from_parts(
                    &l.name,
                    get(&format!("{}.u", l.name))?.clone(),
                    get(&format!("{}.vt", l.name))?.clone(),
                    get(&format!("{}.sigma_pretrained", l.name))?.data().to_vec(),
                    bias,
                    members,
                )?));
            } else {
                projections.push(Projection::Dense(DenseLinear::from_parts(
                    &l.name,
                    get(&format!("{}.weight", l.name))?.clone(),
                    get(&format!("{}.bias", l.name))?.data().to_vec(),
                    l.trainable,
                )?));
            }
        }
        let mut norms = Vec::new();
        for name in layout.spec.norm_names() {
            norms.push(LayerNorm {
                gain: get(&format!("{name}.gain"))?.clone().with_grad(),
                bias: get(&format!("{name}.bias"))?.clone().with_grad(),
                name,
                trainable: layout.norms_trainable,
            });
        }
        let mut heads = Vec::new();
        for m in 0..layout.n_members {
            heads.push(DenseLinear::from_parts(
                &format!("head.{m}"),
                get(&format!("head.{m}.weight"))?.clone(),
                get(&format!("head.{m}.bias"))?.data().to_vec(),
                true,
            )?);
        }
        let model = EnsembleModel {
            spec: layout.spec.clone(),
            projections,
            norms,
            heads,
        };
        if model.layout() != *layout {
            return Err(Error::Format("arrays do not match the stored layout".into()));
        }
        Ok(model)
    }
}

fn norms_from(spec: &ModelSpec, base: &BaseWeights, trainable: bool) -> Vec<LayerNorm> {
    spec.norm_names()
        .into_iter()
        .map(|name| {
            let d = spec.feature_dim();
            let mut n = LayerNorm::identity(&name, d);
            if let Some((_, g, b)) = base.norm(&name) {
                n.gain = Tensor::vector(g.clone()).with_grad();
                n.bias = Tensor::vector(b.clone()).with_grad();
            }
            n.trainable = trainable;
            n
        })
        .collect()
}

/// Inverted dropout: zeroes each entry with probability `rate`, scales survivors by `1/(1-rate)`.
pub(crate) fn apply_dropout(tape: &mut Tape, h: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
    let shape = tape.value(h).shape().to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..n).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(h, m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub name: String,
    pub sve: bool,
    pub trainable: bool,
    pub has_bias: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub spec: ModelSpec,
    pub projections: Vec<LayerLayout>,
    pub norms_trainable: bool,
    pub n_members: usize,
}

/// SVE MLP: `dims[0]` inputs, hidden widths `dims[1..]`, `n_classes` outputs.
/// `base_layers` gives `(W, b)` for each hidden layer (the pretrained regime);
/// without it the layers are drawn fresh and then wrapped.
pub fn mlp_model(dims: &[usize], n_classes: usize, cfg: &SveConfig, base_layers: Option<&[(Tensor, Vec<f64>)]>, rng: &Rng) -> Result<EnsembleModel> {
    let spec = ModelSpec::mlp(dims.to_vec(), n_classes);
    spec.validate()?;
    let base = match base_layers {
        Some(layers) => {
            if layers.len() != dims.len() - 1 {
                return Err(Error::dim("mlp base weights", &[layers.len()], &[dims.len() - 1]));
            }
            Some(BaseWeights {
                layers: layers.iter().enumerate().map(|(i, (w, b))| (format!("fc{i}"), w.clone(), b.clone())).collect(),
                norms: vec![],
            })
        }
        None => None,
    };
    EnsembleModel::sve(&spec, cfg, base.as_ref(), rng)
}

/// Row-wise softmax of `B × C` logits.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Something that yields per-member logits for a batch of samples.
pub trait Classifier {
    fn n_classes(&self) -> usize;

    /// `B × C` logits of every member (or stochastic pass).
    fn member_logits(&self, x: &Tensor, mode: Mode, rng: &Rng) -> Result<Vec<Tensor>>;
}

impl Classifier for EnsembleModel {
    fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    fn member_logits(&self, x: &Tensor, mode: Mode, rng: &Rng) -> Result<Vec<Tensor>> {
        match mode {
            Mode::Train => Err(Error::Input("predict requires eval or mc_dropout_eval mode".into())),
            Mode::Eval => (0..self.n_members()).map(|m| self.member_logits_one(m, x, None)).collect(),
            Mode::McDropoutEval => (0..self.spec.mc_passes)
                .map(|p| {
                    let mut r = rng.split_indexed("mc-pass", p as u64);
                    self.member_logits_one(0, x, Some(&mut r))
                })
                .collect(),
        }
    }
}

/// Independently trained models whose probabilities are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepEnsemble {
    pub models: Vec<EnsembleModel>,
}

impl Classifier for DeepEnsemble {
    fn n_classes(&self) -> usize {
        self.models[0].spec.n_classes
    }

    fn member_logits(&self, x: &Tensor, mode: Mode, rng: &Rng) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for (i, m) in self.models.iter().enumerate() {
            out.extend(m.member_logits(x, mode, &rng.split_indexed("model", i as u64))?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch {
    pub member_logits: Vec<Tensor>,
    pub member_probs: Vec<Tensor>,
    pub mean_probs: Tensor,
}

impl PredictionBatch {
    pub fn from_logits(member_logits: Vec<Tensor>) -> Result<Self> {
        if member_logits.is_empty() {
            return Err(Error::Input("no members to average".into()));
        }
        if member_logits.iter().any(|l| !l.all_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let member_probs: Vec<Tensor> = member_logits.iter().map(softmax_rows).collect();
        // Written as p₀ + Σ(pₘ − p₀)/M so that equal members average to p₀ exactly.
        let p0 = &member_probs[0];
        let mut dev = vec![0.0; p0.len()];
        for p in &member_probs[1..] {
            dev.iter_mut().zip(p.data().iter().zip(p0.data())).for_each(|(a, (b, c))| *a += b - c);
        }
        let k = member_probs.len() as f64;
        let mut mean = p0.clone();
        mean.data_mut().iter_mut().zip(&dev).for_each(|(v, d)| *v += d / k);
        Ok(PredictionBatch {
            member_logits,
            member_probs,
            mean_probs: mean,
        })
    }

    /// Mean total-variation distance between member distributions, over
    /// samples and member pairs.
    pub fn mean_disagreement(&self) -> f64 {
        let m = self.member_probs.len();
        if m < 2 {
            return 0.0;
        }
        let b = self.mean_probs.rows();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..m {
            for j in i + 1..m {
                let tv: f64 = self.member_probs[i]
                    .data()
                    .iter()
                    .zip(self.member_probs[j].data())
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
                    * 0.5;
                total += tv / b as f64;
                pairs += 1;
            }
        }
        total / pairs as f64
    }
}

/// Rows evaluated per tape during prediction.
const PREDICT_CHUNK: usize = 512;

/// Runs every member (or every MC-dropout pass) and averages probabilities.
pub fn predict(model: &impl Classifier, x: &Tensor, mode: Mode, rng: &Rng) -> Result<PredictionBatch> {
    let n = x.rows();
    if n <= PREDICT_CHUNK {
        return PredictionBatch::from_logits(model.member_logits(x, mode, rng)?);
    }
    let d = x.cols();
    let mut parts: Vec<Vec<f64>> = Vec::new();
    let mut c = 0;
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(n);
        let chunk = Tensor::matrix(end - start, d, x.data()[start * d..end * d].to_vec())?;
        let logits = model.member_logits(&chunk, mode, &rng.split_indexed("chunk", start as u64))?;
        if parts.is_empty() {
            parts = vec![Vec::with_capacity(n * logits[0].cols()); logits.len()];
        }
        for (acc, l) in parts.iter_mut().zip(&logits) {
            c = l.cols();
            acc.extend_from_slice(l.data());
        }
    }
    let logits = parts.into_iter().map(|p| Tensor::matrix(n, c, p)).collect::<Result<Vec<_>>>()?;
    PredictionBatch::from_logits(logits)
}

#[cfg(test)]
mod tests;
