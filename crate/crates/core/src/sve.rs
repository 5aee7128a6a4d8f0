//! Singular-value-ensemble linear layers.
//!
//! A pretrained weight `W = U Σ Vᵀ` is split once. `U`, `Vᵀ`, the pretrained
//! spectrum and the bias are frozen; every ensemble member owns a trainable
//! copy `σ⁽ᵐ⁾` initialized as `σ ⊙ (1 + ε⁽ᵐ⁾)`, `ε⁽ᵐ⁾ ~ N(0, σ_init²)`.
//! Member `m` computes `U (σ⁽ᵐ⁾ ⊙ (Vᵀ x)) + b`, which equals
//! `(U diag(σ⁽ᵐ⁾) Vᵀ) x + b` without building the dense matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::svd::{svd, SvdFactors};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::{gaussian, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SveConfig {
    pub n_members: usize,
    #[serde(default = "default_sigma_init")]
    pub sigma_init: f64,
    /// Layer-name patterns (`*` matches any run of characters).
    #[serde(default = "default_targets")]
    pub target_layers: Vec<String>,
    #[serde(default)]
    pub head_init: HeadInit,
}

/// How member heads are initialized. Heads are separate parameters either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Member `m` draws from its own rng child.
    #[default]
    Independent,
    /// Every head starts from member 0's draw, so with `sigma_init = 0`
    /// all members are identical until trained.
    Shared,
}

fn default_sigma_init() -> f64 {
    0.01
}

fn default_targets() -> Vec<String> {
    vec!["*".to_string()]
}

impl Default for SveConfig {
    fn default() -> Self {
        SveConfig {
            n_members: 4,
            sigma_init: default_sigma_init(),
            target_layers: default_targets(),
            head_init: HeadInit::Independent,
        }
    }
}

impl SveConfig {
    pub fn new(n_members: usize, sigma_init: f64) -> Self {
        SveConfig {
            n_members,
            sigma_init,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::Input("n_members must be at least 1".into()));
        }
        if !(self.sigma_init >= 0.0 && self.sigma_init < 1.0) {
            return Err(Error::Input(format!("sigma_init must lie in [0, 1), got {}", self.sigma_init)));
        }
        if self.sigma_init > 0.5 {
            log::warn!("sigma_init {} is large; negative draws will be clamped", self.sigma_init);
        }
        Ok(())
    }

    pub fn targets(&self, layer_name: &str) -> bool {
        self.target_layers.iter().any(|p| glob_match(p, layer_name))
    }
}

/// `*`-only glob matching.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    let first = parts[0];
    if !rest.starts_with(first) {
        return false;
    }
    rest = &rest[first.len()..];
    let last = parts[parts.len() - 1];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(pos) => rest = &rest[pos + mid.len()..],
            None => return false,
        }
    }
    rest.len() >= last.len() && rest.ends_with(last)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SveLinear {
    pub name: String,
    u: Tensor,
    vt: Tensor,
    sigma_pretrained: Vec<f64>,
    bias: Option<Vec<f64>>,
    /// One trainable spectrum per member.
    pub sigma_members: Vec<Tensor>,
}

/// Tape handles for one member's view of a layer.
#[derive(Clone, Copy, Debug)]
pub struct SveBinding {
    u: Var,
    vt: Var,
    bias: Option<Var>,
    pub sigma: Var,
}

impl SveBinding {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.matmul(self.vt, x)?;
        let z = tape.row_scale(z, self.sigma)?;
        let y = tape.matmul(self.u, z)?;
        match self.bias {
            Some(b) => tape.add_bias(y, b),
            None => Ok(y),
        }
    }
}

impl SveLinear {
    /// Splits `w` and initializes `cfg.n_members` perturbed spectra. Member `m`
    /// draws its noise from `rng.split_indexed("sigma-init", m)`.
    pub fn wrap(name: &str, w: &Tensor, bias: Option<Vec<f64>>, cfg: &SveConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        if let Some(b) = &bias {
            if b.len() != w.rows() {
                return Err(Error::dim("wrap bias", w.shape(), &[b.len()]));
            }
        }
        let SvdFactors { u, sigma, vt } = svd(w)?;
        let r = sigma.len();
        let mut members = Vec::with_capacity(cfg.n_members);
        for m in 0..cfg.n_members {
            let mut child = rng.split_indexed("sigma-init", m as u64);
            let eps = gaussian(&mut child, &[r], 0.0, cfg.sigma_init)?;
            let s: Vec<f64> = sigma.iter().zip(eps.data()).map(|(s, e)| (s * (1.0 + e)).max(0.0)).collect();
            members.push(Tensor::vector(s).with_grad());
        }
        Ok(SveLinear {
            name: name.to_string(),
            u,
            vt,
            sigma_pretrained: sigma,
            bias,
            sigma_members: members,
        })
    }

    /// Reassembles a layer from stored parts (checkpoint loading).
    pub fn from_parts(name: &str, u: Tensor, vt: Tensor, sigma_pretrained: Vec<f64>, bias: Option<Vec<f64>>, sigma_members: Vec<Vec<f64>>) -> Result<Self> {
        let r = sigma_pretrained.len();
        if u.cols() != r || vt.rows() != r || r != u.rows().min(vt.cols()) {
            return Err(Error::dim("sve layer parts", u.shape(), vt.shape()));
        }
        if sigma_members.iter().any(|s| s.len() != r) || sigma_members.is_empty() {
            return Err(Error::Input(format!("layer {name}: bad member spectra")));
        }
        if bias.as_ref().is_some_and(|b| b.len() != u.rows()) {
            return Err(Error::Input(format!("layer {name}: bias length")));
        }
        Ok(SveLinear {
            name: name.to_string(),
            u,
            vt,
            sigma_pretrained,
            bias,
            sigma_members: sigma_members.into_iter().map(|s| Tensor::vector(s).with_grad()).collect(),
        })
    }

    pub fn n_members(&self) -> usize {
        self.sigma_members.len()
    }

    pub fn out_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.vt.cols()
    }

    pub fn rank(&self) -> usize {
        self.sigma_pretrained.len()
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }

    pub fn vt(&self) -> &Tensor {
        &self.vt
    }

    pub fn sigma_pretrained(&self) -> &[f64] {
        &self.sigma_pretrained
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    fn check_member(&self, member: usize) -> Result<()> {
        if member >= self.n_members() {
            return Err(Error::Index {
                what: "ensemble member",
                index: member,
                len: self.n_members(),
            });
        }
        Ok(())
    }

    /// Places the frozen factors as constants and member `member`'s spectrum as a parameter.
    pub fn bind(&self, tape: &mut Tape, member: usize) -> Result<SveBinding> {
        self.check_member(member)?;
        Ok(SveBinding {
            u: tape.constant(self.u.clone()),
            vt: tape.constant(self.vt.clone()),
            bias: self.bias.as_ref().map(|b| tape.constant(Tensor::vector(b.clone()))),
            sigma: tape.param(&self.sigma_members[member]),
        })
    }

    pub fn absorb(&mut self, member: usize, binding: &SveBinding, grads: &Grads) {
        if let Some(g) = grads.get(binding.sigma) {
            self.sigma_members[member].accumulate_grad(g);
        }
    }

    /// Member forward for `x: n×B`.
    pub fn forward(&self, member: usize, x: &Tensor) -> Result<Tensor> {
        if !x.all_finite() {
            return Err(Error::Numeric("non-finite layer input".into()));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, member)?;
        let xv = tape.constant(x.clone());
        let y = b.apply(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }

    /// `U diag(σ⁽ᵐ⁾) Vᵀ`.
    pub fn member_weight(&self, member: usize) -> Result<Tensor> {
        self.check_member(member)?;
        Ok(crate::svd::reconstruct_with(&self.u, self.sigma_members[member].data(), &self.vt))
    }

    /// Clamps every member spectrum at zero.
    pub fn project_nonneg(&mut self) {
        for s in &mut self.sigma_members {
            s.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    /// Percent change of the top `top_k` pretrained singular values, per member.
    pub fn diversity_report(&self, top_k: usize) -> Result<DiversityTable> {
        if top_k > self.rank() {
            return Err(Error::Input(format!("top_k {top_k} exceeds rank {}", self.rank())));
        }
        let rows = (0..top_k)
            .filter(|&i| self.sigma_pretrained[i] != 0.0)
            .map(|i| {
                let s = self.sigma_pretrained[i];
                DiversityRow {
                    index: i,
                    pretrained: s,
                    percent_change: self.sigma_members.iter().map(|m| 100.0 * (m.data()[i] - s) / s).collect(),
                }
            })
            .collect();
        Ok(DiversityTable {
            layer: self.name.clone(),
            rows,
        })
    }

    /// `‖σ⁽ᵃ⁾ − σ⁽ᵇ⁾‖ / ‖σ‖` for every member pair `a < b`.
    pub fn pairwise_sigma_distances(&self) -> Vec<(usize, usize, f64)> {
        let denom = self.sigma_pretrained.iter().map(|s| s * s).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let m = self.n_members();
        let mut out = Vec::new();
        for a in 0..m {
            for b in a + 1..m {
                let d = self.sigma_members[a]
                    .data()
                    .iter()
                    .zip(self.sigma_members[b].data())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                out.push((a, b, d / denom));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub index: usize,
    pub pretrained: f64,
    pub percent_change: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityTable {
    pub layer: String,
    pub rows: Vec<DiversityRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadStats {
    /// Singular values per member, `Σ min(m, n)`.
    pub trainable_per_member: usize,
    /// Head parameters per member, `d·C + C`.
    pub head_params_per_member: usize,
    /// `M · (trainable_per_member + head_params_per_member)`.
    pub total_trainable: usize,
    /// `Σ m·n` over the target matrices.
    pub base_params: usize,
    /// `(M − 1) · Σ min(m, n) / Σ m·n`.
    pub overhead_fraction: f64,
    /// `(M − 1) / (2d)`, exact for the six square-ish transformer projections.
    pub overhead_approx: f64,
}

/// Parameter accounting for `n_members` members over `layers` (each `(m, n)`)
/// with per-member heads `head = (d, C)`.
pub fn overhead_stats(layers: &[(usize, usize)], d: usize, n_members: usize, head: (usize, usize)) -> Result<OverheadStats> {
    if n_members == 0 {
        return Err(Error::Input("n_members must be at least 1".into()));
    }
    let per_member: usize = layers.iter().map(|&(m, n)| m.min(n)).sum();
    let base: usize = layers.iter().map(|&(m, n)| m * n).sum();
    let head_params = head.0 * head.1 + head.1;
    let extra = (n_members - 1) * per_member;
    Ok(OverheadStats {
        trainable_per_member: per_member,
        head_params_per_member: head_params,
        total_trainable: n_members * (per_member + head_params),
        base_params: base,
        overhead_fraction: if base == 0 { 0.0 } else { extra as f64 / base as f64 },
        overhead_approx: (n_members - 1) as f64 / (2.0 * d as f64),
    })
}

/// The six projections of one standard transformer layer: q, k, v, o (`d×d`),
/// fc1 (`4d×d`) and fc2 (`d×4d`).
pub fn transformer_layer_shapes(d: usize) -> Vec<(usize, usize)> {
    vec![(d, d), (d, d), (d, d), (d, d), (4 * d, d), (d, 4 * d)]
}
