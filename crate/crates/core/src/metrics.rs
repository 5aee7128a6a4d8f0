//! Classification quality, calibration and OOD-separation metrics.
//!
//! Every function takes a `B × C` probability matrix (rows on the simplex)
//! and integer labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 15;

/// Floor applied to the true-class probability before taking its log.
pub const NLL_FLOOR: f64 = 1e-12;

fn check(probs: &Tensor, labels: &[usize]) -> Result<()> {
    if !probs.is_matrix() || probs.rows() != labels.len() {
        return Err(Error::dim("metrics", probs.shape(), &[labels.len()]));
    }
    if labels.is_empty() {
        return Err(Error::Input("metrics need at least one sample".into()));
    }
    let c = probs.cols();
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index {
            what: "label",
            index: l,
            len: c,
        });
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Largest class probability of every row.
pub fn max_softmax(probs: &Tensor) -> Vec<f64> {
    let c = probs.cols();
    probs.data().chunks(c).map(|r| r[argmax(r)]).collect()
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check(probs, labels)?;
    let c = probs.cols();
    let hits = probs.data().chunks(c).zip(labels).filter(|(r, &l)| argmax(r) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// 0 for empty bins.
    pub mean_conf: f64,
    pub mean_acc: f64,
}

/// Bin of confidence `c` among `(i/n, (i+1)/n]`; `c ≤ 0` falls in bin 0.
pub fn bin_index(c: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut i = ((c * n).ceil() as isize - 1).clamp(0, n_bins as isize - 1) as usize;
    while i > 0 && c <= i as f64 / n {
        i -= 1;
    }
    while i + 1 < n_bins && c > (i + 1) as f64 / n {
        i += 1;
    }
    i
}

/// Expected calibration error over equal-width confidence bins, with the
/// per-bin reliability table.
pub fn ece(probs: &Tensor, labels: &[usize], n_bins: usize) -> Result<(f64, Vec<BinStat>)> {
    check(probs, labels)?;
    if n_bins == 0 {
        return Err(Error::Input("n_bins must be at least 1".into()));
    }
    let c = probs.cols();
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut acc = vec![0.0; n_bins];
    for (row, &l) in probs.data().chunks(c).zip(labels) {
        let k = argmax(row);
        let b = bin_index(row[k], n_bins);
        count[b] += 1;
        conf[b] += row[k];
        if k == l {
            acc[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    let table = (0..n_bins)
        .map(|i| {
            let (mc, ma) = if count[i] == 0 {
                (0.0, 0.0)
            } else {
                (conf[i] / count[i] as f64, acc[i] / count[i] as f64)
            };
            total += count[i] as f64 / n * (ma - mc).abs();
            BinStat {
                lower: i as f64 / n_bins as f64,
                upper: (i + 1) as f64 / n_bins as f64,
                count: count[i],
                mean_conf: mc,
                mean_acc: ma,
            }
        })
        .collect();
    Ok((total, table))
}

pub fn nll(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check(probs, labels)?;
    let c = probs.cols();
    let s: f64 = probs.data().chunks(c).zip(labels).map(|(r, &l)| -r[l].max(NLL_FLOOR).ln()).sum();
    Ok(s / labels.len() as f64)
}

pub fn brier(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check(probs, labels)?;
    let c = probs.cols();
    let s: f64 = probs
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(r, &l)| {
            r.iter()
                .enumerate()
                .map(|(j, &p)| {
                    let t = if j == l { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(s / labels.len() as f64)
}

/// Confidence scores; in-distribution samples are the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodScores {
    pub in_dist: Vec<f64>,
    pub ood: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub fpr_at_95_tpr: f64,
}

/// Distinct thresholds in descending order with cumulative
/// (positives, negatives) at or above each.
fn threshold_counts(scores: &OodScores) -> Vec<(f64, usize, usize)> {
    let mut all: Vec<(f64, bool)> = scores
        .in_dist
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(s, pos)) in all.iter().enumerate() {
        if pos {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 == all.len() || all[i + 1].0 != s {
            out.push((s, tp, fp));
        }
    }
    out
}

/// AUROC by the rank statistic with mid-ranks for ties.
pub fn auroc(scores: &OodScores) -> Result<f64> {
    check_scores(scores)?;
    let mut all: Vec<(f64, bool)> = scores
        .in_dist
        .iter()
        .map(|&s| (s, true))
        .chain(scores.ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|(_, p)| *p).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (scores.in_dist.len() as f64, scores.ood.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

fn check_scores(scores: &OodScores) -> Result<()> {
    if scores.in_dist.is_empty() || scores.ood.is_empty() {
        return Err(Error::Input("OOD metrics need non-empty in-distribution and OOD score sets".into()));
    }
    if scores.in_dist.iter().chain(&scores.ood).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite OOD score".into()));
    }
    Ok(())
}

/// AUROC, step-wise average precision, and the FPR at the highest threshold
/// whose TPR reaches 0.95.
pub fn ood_metrics(scores: &OodScores) -> Result<OodMetrics> {
    let auroc = auroc(scores)?;
    let np = scores.in_dist.len() as f64;
    let nn = scores.ood.len() as f64;
    let mut auprc = 0.0;
    let mut prev_recall = 0.0;
    let mut fpr95 = None;
    for (_, tp, fp) in threshold_counts(scores) {
        let recall = tp as f64 / np;
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        if fpr95.is_none() && recall >= 0.95 {
            fpr95 = Some(fp as f64 / nn);
        }
    }
    Ok(OodMetrics {
        auroc,
        auprc,
        fpr_at_95_tpr: fpr95.expect("the lowest threshold admits every positive"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub n_bins: usize,
    pub bin_table: Vec<BinStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodMetrics>,
}

impl MetricsReport {
    pub fn compute(probs: &Tensor, labels: &[usize]) -> Result<Self> {
        Self::with_bins(probs, labels, DEFAULT_BINS)
    }

    pub fn with_bins(probs: &Tensor, labels: &[usize], n_bins: usize) -> Result<Self> {
        let (e, table) = ece(probs, labels, n_bins)?;
        Ok(MetricsReport {
            accuracy: accuracy(probs, labels)?,
            ece: e,
            nll: nll(probs, labels)?,
            brier: brier(probs, labels)?,
            n_bins,
            bin_table: table,
            ood: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn probs(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_probs(rng: &mut Rng, n: usize, c: usize) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            let row: Vec<f64> = (0..c).map(|_| (3.0 * rng.normal()).exp()).collect();
            let z: f64 = row.iter().sum();
            data.extend(row.iter().map(|v| v / z));
        }
        let labels = (0..n).map(|_| rng.below(c)).collect();
        (Tensor::matrix(n, c, data).unwrap(), labels)
    }

    #[test]
    fn accuracy_all_correct() {
        let p = probs(&[&[0.9, 0.1], &[0.2, 0.8]]);
        assert_eq!(accuracy(&p, &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_ties_pick_lowest_class() {
        let p = probs(&[&[0.25; 4], &[0.25; 4]]);
        assert_eq!(accuracy(&p, &[0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_matches_counting_oracle() {
        let mut rng = Rng::seed_from_u64(3);
        let (p, y) = random_probs(&mut rng, 200, 5);
        let mut hits = 0;
        for (i, &label) in y.iter().enumerate() {
            let mut best = 0;
            for j in 0..5 {
                if p.at(i, j) > p.at(i, best) {
                    best = j;
                }
            }
            hits += usize::from(best == label);
        }
        assert_eq!(accuracy(&p, &y).unwrap(), hits as f64 / 200.0);
    }

    #[test]
    fn label_out_of_range_is_index_error() {
        let p = probs(&[&[0.5, 0.5]]);
        assert!(matches!(accuracy(&p, &[2]), Err(Error::Index { .. })));
    }

    #[test]
    fn ece_perfect_confidence() {
        let p = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (e, t) = ece(&p, &[0, 1], 15).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(t[14].count, 2);
    }

    #[test]
    fn ece_single_bin_exact() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![0.9, 0.1]).collect();
        let p = Tensor::from_rows(&rows).unwrap();
        let y: Vec<usize> = (0..10).map(|i| usize::from(i == 9)).collect();
        let (e, _) = ece(&p, &y, 15).unwrap();
        assert!(e.abs() < 1e-15, "{e}");
    }

    #[test]
    fn bin_edges_are_upper_inclusive() {
        assert_eq!(bin_index(0.0, 15), 0);
        assert_eq!(bin_index(1.0, 15), 14);
        assert_eq!(bin_index(1.0 / 15.0, 15), 0);
        assert_eq!(bin_index(0.5, 2), 0);
        assert_eq!(bin_index(0.5000001, 2), 1);
    }

    #[test]
    fn nll_and_brier_fixtures() {
        let p = probs(&[&[1.0, 0.0]]);
        assert_eq!(nll(&p, &[0]).unwrap(), 0.0);
        assert_eq!(brier(&p, &[0]).unwrap(), 0.0);
        let u = probs(&[&[0.25; 4]]);
        assert!((nll(&u, &[2]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let h = probs(&[&[0.5, 0.5]]);
        assert_eq!(brier(&h, &[1]).unwrap(), 0.5);
    }

    #[test]
    fn nll_floors_zero_probability() {
        let p = probs(&[&[1.0, 0.0]]);
        assert!((nll(&p, &[1]).unwrap() + NLL_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn ood_perfect_separation() {
        let s = OodScores {
            in_dist: vec![0.9, 0.8, 0.95],
            ood: vec![0.1, 0.2],
        };
        let m = ood_metrics(&s).unwrap();
        assert_eq!((m.auroc, m.auprc, m.fpr_at_95_tpr), (1.0, 1.0, 0.0));
    }

    #[test]
    fn ood_all_tied_is_half() {
        let s = OodScores {
            in_dist: vec![0.5; 4],
            ood: vec![0.5; 6],
        };
        let m = ood_metrics(&s).unwrap();
        assert_eq!(m.auroc, 0.5);
        assert_eq!(m.fpr_at_95_tpr, 1.0);
        assert!((m.auprc - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ood_empty_is_input_error() {
        let s = OodScores {
            in_dist: vec![],
            ood: vec![0.1],
        };
        assert!(matches!(ood_metrics(&s), Err(Error::Input(_))));
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = Rng::seed_from_u64(9);
        // Coarse rounding forces ties.
        let r = |rng: &mut Rng, shift: f64| ((rng.uniform() + shift).min(1.0) * 20.0).round() / 20.0;
        let s = OodScores {
            in_dist: (0..500).map(|_| r(&mut rng, 0.2)).collect(),
            ood: (0..500).map(|_| r(&mut rng, 0.0)).collect(),
        };
        let mut pairs = 0.0;
        for &a in &s.in_dist {
            for &b in &s.ood {
                pairs += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let oracle = pairs / (500.0 * 500.0);
        assert!((auroc(&s).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn ece_ignores_sample_order() {
        let mut rng = Rng::seed_from_u64(1);
        let (p, y) = random_probs(&mut rng, 300, 4);
        let perm = rng.permutation(300);
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| p.row(i).to_vec()).collect();
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let a = ece(&p, &y, 15).unwrap().0;
        let b = ece(&Tensor::from_rows(&rows).unwrap(), &yp, 15).unwrap().0;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn report_bins_cover_all_samples() {
        let mut rng = Rng::seed_from_u64(2);
        let (p, y) = random_probs(&mut rng, 123, 3);
        let r = MetricsReport::compute(&p, &y).unwrap();
        assert_eq!(r.bin_table.iter().map(|b| b.count).sum::<usize>(), 123);
        assert!((0.0..=1.0).contains(&r.ece) && r.nll >= 0.0 && (0.0..=2.0).contains(&r.brier));
    }
}
