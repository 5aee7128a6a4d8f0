use super::{apply_dropout, BaseWeights, EnsembleModel, ModelSpec, ProjectionBinding, LAYER_NORM_EPS};
use crate::error::Result;
use crate::rng::Rng;
use crate::sve::SveConfig;
use crate::tape::{Tape, Var};

/// Pre-norm encoder block followed by mean pooling over tokens.
///
/// `x` is `d × (seq_len·B)`; bindings are `q, k, v, o, fc1, fc2` and norms
/// `ln1, ln2`. Returns `d × B`.
pub(super) fn block_forward(
    tape: &mut Tape,
    x: Var,
    proj: &[ProjectionBinding],
    norms: &[(Var, Var)],
    n_heads: usize,
    seq_len: usize,
    mut dropout: Option<(&mut Rng, f64)>,
) -> Result<Var> {
    let [q, k, v, o, fc1, fc2] = proj else {
        unreachable!("transformer block has six projections")
    };
    let [ln1, ln2] = norms else { unreachable!("transformer block has two norms") };
    let a = tape.layer_norm(x, ln1.0, ln1.1, LAYER_NORM_EPS)?;
    let qa = q.apply(tape, a)?;
    let ka = k.apply(tape, a)?;
    let va = v.apply(tape, a)?;
    let att = tape.attention(qa, ka, va, n_heads, seq_len)?;
    let att = o.apply(tape, att)?;
    let h = tape.add(x, att)?;

    let b = tape.layer_norm(h, ln2.0, ln2.1, LAYER_NORM_EPS)?;
    let f = fc1.apply(tape, b)?;
    let mut f = tape.gelu(f);
    if let Some((r, rate)) = dropout.as_mut() {
        f = apply_dropout(tape, f, *rate, r)?;
    }
    let f = fc2.apply(tape, f)?;
    let out = tape.add(h, f)?;
    tape.mean_pool(out, seq_len)
}

/// SVE transformer classifier: one encoder block of width `d` over
/// `seq_len` tokens, every targeted projection wrapped.
#[allow(clippy::too_many_arguments)]
pub fn transformer_block_model(
    d: usize,
    n_heads: usize,
    d_ff: usize,
    seq_len: usize,
    n_classes: usize,
    cfg: &SveConfig,
    base: Option<&BaseWeights>,
    rng: &Rng,
) -> Result<EnsembleModel> {
    let spec = ModelSpec::transformer(d, n_heads, d_ff, seq_len, n_classes);
    EnsembleModel::sve(&spec, cfg, base, rng)
}
