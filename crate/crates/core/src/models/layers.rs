use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sve::{SveBinding, SveLinear};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;

/// What a parameter is, for weight-decay decisions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Sigma,
    Norm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLinear {
    pub name: String,
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseBinding {
    w: Var,
    b: Var,
}

impl DenseLinear {
    /// Uniform init in `±1/√in` for weight and bias.
    pub fn init(name: &str, out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Tensor::uniform(rng, &[out_dim, in_dim], bound).with_grad();
        let bias = Tensor::uniform(rng, &[out_dim], bound).with_grad();
        DenseLinear {
            name: name.to_string(),
            weight,
            bias,
            trainable: true,
        }
    }

    pub fn from_parts(name: &str, weight: Tensor, bias: Vec<f64>, trainable: bool) -> Result<Self> {
        if !weight.is_matrix() || bias.len() != weight.rows() {
            return Err(Error::dim("dense layer", weight.shape(), &[bias.len()]));
        }
        Ok(DenseLinear {
            name: name.to_string(),
            weight: weight.with_grad(),
            bias: Tensor::vector(bias).with_grad(),
            trainable,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseBinding {
        if self.trainable {
            DenseBinding {
                w: tape.param(&self.weight),
                b: tape.param(&self.bias),
            }
        } else {
            DenseBinding {
                w: tape.constant(self.weight.clone()),
                b: tape.constant(self.bias.clone()),
            }
        }
    }

    pub fn absorb(&mut self, binding: &DenseBinding, grads: &Grads) {
        if !self.trainable {
            return;
        }
        if let Some(g) = grads.get(binding.w) {
            self.weight.accumulate_grad(g);
        }
        if let Some(g) = grads.get(binding.b) {
            self.bias.accumulate_grad(g);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ParamKind, &mut Tensor)) {
        if self.trainable {
            f(format!("{}.weight", self.name), ParamKind::Weight, &mut self.weight);
            f(format!("{}.bias", self.name), ParamKind::Bias, &mut self.bias);
        }
    }
}

impl DenseBinding {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(self.w, x)?;
        tape.add_bias(y, self.b)
    }
}

/// A backbone projection: either a plain dense layer or an SVE layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Dense(DenseLinear),
    Sve(SveLinear),
}

#[derive(Clone, Copy, Debug)]
pub enum ProjectionBinding {
    Dense(DenseBinding),
    Sve(SveBinding),
}

impl ProjectionBinding {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            ProjectionBinding::Dense(b) => b.apply(tape, x),
            ProjectionBinding::Sve(b) => b.apply(tape, x),
        }
    }
}

impl Projection {
    pub fn name(&self) -> &str {
        match self {
            Projection::Dense(d) => &d.name,
            Projection::Sve(s) => &s.name,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Projection::Dense(d) => (d.out_dim(), d.in_dim()),
            Projection::Sve(s) => (s.out_dim(), s.in_dim()),
        }
    }

    pub fn bind(&self, tape: &mut Tape, member: usize) -> Result<ProjectionBinding> {
        Ok(match self {
            Projection::Dense(d) => ProjectionBinding::Dense(d.bind(tape)),
            Projection::Sve(s) => ProjectionBinding::Sve(s.bind(tape, member)?),
        })
    }

    pub fn absorb(&mut self, member: usize, binding: &ProjectionBinding, grads: &Grads) {
        match (self, binding) {
            (Projection::Dense(d), ProjectionBinding::Dense(b)) => d.absorb(b, grads),
            (Projection::Sve(s), ProjectionBinding::Sve(b)) => s.absorb(member, b, grads),
            _ => unreachable!("binding kind matches projection kind"),
        }
    }

    /// Effective weight and bias as seen by `member`.
    pub fn effective(&self, member: usize) -> Result<(Tensor, Vec<f64>)> {
        match self {
            Projection::Dense(d) => Ok((d.weight.clone(), d.bias.data().to_vec())),
            Projection::Sve(s) => {
                let b = s.bias().map_or_else(|| vec![0.0; s.out_dim()], <[f64]>::to_vec);
                Ok((s.member_weight(member)?, b))
            }
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ParamKind, &mut Tensor)) {
        match self {
            Projection::Dense(d) => d.visit_params_mut(f),
            Projection::Sve(s) => {
                let name = s.name.clone();
                for (m, t) in s.sigma_members.iter_mut().enumerate() {
                    f(format!("{name}.sigma.{m}"), ParamKind::Sigma, t);
                }
            }
        }
    }

    pub fn as_sve(&self) -> Option<&SveLinear> {
        match self {
            Projection::Sve(s) => Some(s),
            Projection::Dense(_) => None,
        }
    }

    pub fn as_sve_mut(&mut self) -> Option<&mut SveLinear> {
        match self {
            Projection::Sve(s) => Some(s),
            Projection::Dense(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub name: String,
    pub gain: Tensor,
    pub bias: Tensor,
    pub trainable: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn identity(name: &str, d: usize) -> Self {
        LayerNorm {
            name: name.to_string(),
            gain: Tensor::full(&[d], 1.0).with_grad(),
            bias: Tensor::zeros(&[d]).with_grad(),
            trainable: true,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> (Var, Var) {
        if self.trainable {
            (tape.param(&self.gain), tape.param(&self.bias))
        } else {
            (tape.constant(self.gain.clone()), tape.constant(self.bias.clone()))
        }
    }

    pub fn absorb(&mut self, binding: (Var, Var), grads: &Grads) {
        if !self.trainable {
            return;
        }
        if let Some(g) = grads.get(binding.0) {
            self.gain.accumulate_grad(g);
        }
        if let Some(g) = grads.get(binding.1) {
            self.bias.accumulate_grad(g);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ParamKind, &mut Tensor)) {
        if self.trainable {
            f(format!("{}.gain", self.name), ParamKind::Norm, &mut self.gain);
            f(format!("{}.bias", self.name), ParamKind::Norm, &mut self.bias);
        }
    }
}
