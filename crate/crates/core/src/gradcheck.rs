//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A scalar function of a fixed, ordered set of parameter tensors.
pub trait Objective {
    fn param_count(&self) -> usize;

    fn param(&self, i: usize) -> &Tensor;

    fn param_mut(&mut self, i: usize) -> &mut Tensor;

    /// Loss value only.
    fn loss(&mut self) -> Result<f64>;

    /// Loss value and analytic gradients, one vector per parameter.
    fn loss_and_grads(&mut self) -> Result<(f64, Vec<Vec<f64>>)>;
}

/// Wraps a closure that builds a scalar on a tape from parameter leaves.
pub struct FnObjective<F> {
    params: Vec<Tensor>,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    pub fn new(params: Vec<Tensor>, f: F) -> Self {
        FnObjective { params, f }
    }

    fn run(&self) -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(p)).collect();
        let out = (self.f)(&mut tape, &vars)?;
        Ok((tape, vars, out))
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
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
        let (tape, _, out) = self.run()?;
        Ok(tape.value(out).data()[0])
    }

    fn loss_and_grads(&mut self) -> Result<(f64, Vec<Vec<f64>>)> {
        let (tape, vars, out) = self.run()?;
        let loss = tape.value(out).data()[0];
        let grads = tape.backward(out)?;
        let g = vars.iter().zip(&self.params).map(|(&v, p)| grads.get_or_zeros(v, p.len())).collect();
        Ok((loss, g))
    }
}

/// Compares analytic gradients against central differences at `n_probe`
/// randomly chosen scalar coordinates and returns the worst relative error,
/// using `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn grad_check(obj: &mut impl Objective, h: f64, n_probe: usize, rng: &mut Rng) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Input(format!("grad_check step must be positive, got {h}")));
    }
    let (f0, analytic) = obj.loss_and_grads()?;
    if !f0.is_finite() {
        return Err(Error::Numeric(format!("objective is not finite: {f0}")));
    }
    let sizes: Vec<usize> = (0..obj.param_count()).map(|i| obj.param(i).len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for _ in 0..n_probe {
        // Sampling uniformly over all scalars weights large tensors accordingly.
        let mut flat = rng.below(total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let orig = obj.param(which).data()[flat];
        obj.param_mut(which).data_mut()[flat] = orig + h;
        let fp = obj.loss();
        obj.param_mut(which).data_mut()[flat] = orig - h;
        let fm = obj.loss();
        obj.param_mut(which).data_mut()[flat] = orig;
        let (fp, fm) = (fp?, fm?);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric("objective became non-finite under perturbation".into()));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[which][flat];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
