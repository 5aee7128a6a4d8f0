//! Dense singular value decomposition by one-sided Jacobi rotations.
//!
//! For `w: m×n` with `m ≥ n` the columns of a working copy are rotated in
//! cyclic sweeps until every pair is numerically orthogonal; the column norms
//! are then the singular values and the accumulated rotations form `V`. Wide
//! matrices are handled through the transpose.
//!
//! Output is canonical: singular values descending (ties by original column
//! index), and in every column of `u` the entry of largest magnitude is
//! non-negative (ties by lowest row), with the matching row of `vt` flipped.
//! Zero singular values are kept and their `u` columns completed to an
//! orthonormal set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_SWEEPS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdFactors {
    /// `m × r`
    pub u: Tensor,
    /// length `r`, descending, non-negative
    pub sigma: Vec<f64>,
    /// `r × n`
    pub vt: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumStats {
    /// Number of singular values above `eps · σ₁`.
    pub rank: usize,
    /// Cumulative `Σσᵢ² / Σσ²` for each prefix.
    pub energy_fractions: Vec<f64>,
}

impl SvdFactors {
    pub fn rank_dim(&self) -> usize {
        self.sigma.len()
    }

    /// `u · diag(sigma) · vt`.
    pub fn reconstruct(&self) -> Tensor {
        reconstruct_with(&self.u, &self.sigma, &self.vt)
    }

    pub fn spectrum_stats(&self, eps: f64) -> SpectrumStats {
        let s1 = self.sigma.first().copied().unwrap_or(0.0);
        let rank = self.sigma.iter().filter(|&&s| s > eps * s1).count();
        let total: f64 = self.sigma.iter().map(|s| s * s).sum();
        let mut run = 0.0;
        let energy_fractions = self
            .sigma
            .iter()
            .map(|s| {
                run += s * s;
                if total > 0.0 {
                    run / total
                } else {
                    0.0
                }
            })
            .collect();
        SpectrumStats { rank, energy_fractions }
    }
}

/// `u · diag(sigma) · vt` for any compatible sigma.
pub fn reconstruct_with(u: &Tensor, sigma: &[f64], vt: &Tensor) -> Tensor {
    let (m, n) = (u.rows(), vt.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for (k, &s) in sigma.iter().enumerate() {
            let c = u.at(i, k) * s;
            if c == 0.0 {
                continue;
            }
            for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(vt.row(k)) {
                *o += c * v;
            }
        }
    }
    Tensor::matrix(m, n, out).expect("factor shapes")
}

pub fn svd(w: &Tensor) -> Result<SvdFactors> {
    if !w.is_matrix() {
        return Err(Error::dim("svd", w.shape(), &[2]));
    }
    if !w.all_finite() {
        return Err(Error::Numeric("svd input contains non-finite entries".into()));
    }
    let (m, n) = (w.rows(), w.cols());
    let (u, sigma, v) = if m >= n {
        jacobi_tall(w.data(), m, n)?
    } else {
        // wᵀ = U' Σ V'ᵀ  ⇒  w = V' Σ U'ᵀ
        let wt = w.transpose()?;
        let (u2, s, v2) = jacobi_tall(wt.data(), n, m)?;
        (v2, s, u2)
    };
    let r = m.min(n);
    // u: m×r (row-major), v: n×r (row-major, columns are right vectors)
    let mut u = u;
    let mut v = v;
    for k in 0..r {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m {
            let a = u[i * r + k].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u[best * r + k] < 0.0 {
            for i in 0..m {
                u[i * r + k] = -u[i * r + k];
            }
            for j in 0..n {
                v[j * r + k] = -v[j * r + k];
            }
        }
    }
    let mut vt = vec![0.0; r * n];
    for j in 0..n {
        for k in 0..r {
            vt[k * n + j] = v[j * r + k];
        }
    }
    Ok(SvdFactors {
        u: Tensor::matrix(m, r, u)?,
        sigma,
        vt: Tensor::matrix(r, n, vt)?,
    })
}

/// One-sided Jacobi on `a: m×n`, `m ≥ n`. Returns `(u m×n, sigma, v n×n)`,
/// sorted, with `u` completed to orthonormal columns.
fn jacobi_tall(a: &[f64], m: usize, n: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    // Column-major working copies for contiguous column access.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let tol = (m as f64) * f64::EPSILON;
    let mut converged = n < 2;
    let mut residual = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        residual = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / scale;
                residual = residual.max(off);
                if off <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
                let (vl, vr) = vcols.split_at_mut(q);
                rotate(&mut vl[p], &mut vr[0], c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Convergence { sweeps: MAX_SWEEPS, residual });
    }

    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps original column order among ties
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let s1 = norms[order[0]];
    let zero_cut = s1 * (m.max(n) as f64) * f64::EPSILON;
    let mut sigma = Vec::with_capacity(n);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > zero_cut && s > 0.0 {
            ucols.push(cols[j].iter().map(|x| x / s).collect());
            sigma.push(s);
        } else {
            // numerically zero: treat as exact zero and complete u later
            ucols.push(vec![0.0; m]);
            sigma.push(if s > 0.0 { s } else { 0.0 });
            pending.push(k);
        }
    }
    complete_basis(&mut ucols, &pending, m);

    let mut u = vec![0.0; m * n];
    for (k, col) in ucols.iter().enumerate() {
        for i in 0..m {
            u[i * n + k] = col[i];
        }
    }
    let mut v = vec![0.0; n * n];
    for (k, &j) in order.iter().enumerate() {
        for i in 0..n {
            v[i * n + k] = vcols[j][i];
        }
    }
    Ok((u, sigma, v))
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the columns listed in `pending` with unit vectors orthogonal to all
/// other columns, trying standard basis vectors in order (two Gram–Schmidt passes).
fn complete_basis(cols: &mut [Vec<f64>], pending: &[usize], m: usize) {
    let mut candidate = 0;
    for &k in pending {
        while candidate < m {
            let mut v = vec![0.0; m];
            v[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, other) in cols.iter().enumerate() {
                    if j == k || (pending.contains(&j) && other.iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let d: f64 = v.iter().zip(other).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(other).for_each(|(a, b)| *a -= d * b);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols[k] = v.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}
