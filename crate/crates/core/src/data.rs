//! Datasets: synthetic generators, corruptions, OOD pairs, and CSV/IDX loaders.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `N × D`
    pub x: Tensor,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub split: SplitTag,
    pub provenance: String,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, n_classes: usize, split: SplitTag, provenance: String) -> Result<Self> {
        if !x.is_matrix() || x.rows() != y.len() {
            return Err(Error::dim("dataset", x.shape(), &[y.len()]));
        }
        if let Some(&l) = y.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Index {
                what: "label",
                index: l,
                len: n_classes,
            });
        }
        if !x.all_finite() {
            return Err(Error::Numeric("dataset features must be finite".into()));
        }
        Ok(Dataset {
            x,
            y,
            n_classes,
            split,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows `idx` as a new batch.
    pub fn select(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.x.row(i));
        }
        let x = Tensor::matrix(idx.len(), d, data).expect("rows of a valid dataset");
        (x, idx.iter().map(|&i| self.y[i]).collect())
    }

    fn shuffled(mut self, rng: &mut Rng) -> Self {
        let perm = rng.permutation(self.len());
        let (x, y) = self.select(&perm);
        self.x = x;
        self.y = y;
        self
    }
}

/// Gaussian blobs around class means evenly spaced on a circle of `radius`
/// in the first two coordinates (remaining coordinates have mean 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default = "one")]
    pub radius: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl RingSpec {
    fn mean(&self, c: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        let a = 2.0 * PI * c as f64 / self.n_classes as f64;
        m[0] = self.radius * a.cos();
        if self.dim > 1 {
            m[1] = self.radius * a.sin();
        }
        m
    }

    pub fn generate(&self, n_per_class: usize, stream: &str, split: SplitTag) -> Result<Dataset> {
        if self.n_classes < 2 || self.dim == 0 || n_per_class == 0 {
            return Err(Error::Input("ring task needs ≥ 2 classes, dim ≥ 1, n_per_class ≥ 1".into()));
        }
        let mut rng = Rng::seed_from_u64(self.seed).split(stream);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for c in 0..self.n_classes {
            let m = self.mean(c);
            for _ in 0..n_per_class {
                data.extend(m.iter().map(|&v| v + self.spread * rng.normal()));
                y.push(c);
            }
        }
        let x = Tensor::matrix(y.len(), self.dim, data)?;
        let prov = format!(
            "ring(n_classes={}, dim={}, spread={}, radius={}, seed={}, stream={stream})",
            self.n_classes, self.dim, self.spread, self.radius, self.seed
        );
        Ok(Dataset::new(x, y, self.n_classes, split, prov)?.shuffled(&mut rng))
    }
}

pub fn make_clusters(n_classes: usize, n_per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    RingSpec {
        n_classes,
        dim,
        spread,
        radius: 1.0,
        seed,
    }
    .generate(n_per_class, "train", SplitTag::Train)
}

/// A classification task in a latent space embedded nonlinearly into the
/// input space.
///
/// Each class owns `modes_per_class` Gaussian prototypes in `latent_dim`
/// dimensions. A sample is `z = prototype + noise·N(0, I)`, embedded as
/// `x = A₂ tanh(A₁ z) + input_noise·N(0, I)`, where `A₁` and `A₂` are fixed
/// random matrices. A fraction `label_noise` of labels is resampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub n_classes: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    #[serde(default = "default_modes")]
    pub modes_per_class: usize,
    #[serde(default = "default_embed_width")]
    pub embed_width: usize,
    #[serde(default = "one")]
    pub prototype_scale: f64,
    pub noise: f64,
    #[serde(default)]
    pub input_noise: f64,
    #[serde(default)]
    pub label_noise: f64,
    /// Seed of the geometry: prototypes and embedding.
    pub seed: u64,
    /// Replaces the prototypes of classes `k..` with fresh ones drawn
    /// under this tag; set by [`source_target_split`] and [`TaskSpec::ood_variant`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototype_override: Option<(usize, String)>,
    /// Added to every prototype coordinate.
    #[serde(default)]
    pub prototype_shift: f64,
}

fn default_modes() -> usize {
    2
}

fn default_embed_width() -> usize {
    48
}

struct Geometry {
    prototypes: Vec<Vec<Vec<f64>>>,
    a1: Tensor,
    a2: Tensor,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.latent_dim == 0 || self.input_dim == 0 || self.modes_per_class == 0 || self.embed_width == 0 {
            return Err(Error::Input("task needs ≥ 2 classes and positive dimensions".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) || self.noise < 0.0 || self.input_noise < 0.0 {
            return Err(Error::Input("task noise levels must be non-negative and label_noise ≤ 1".into()));
        }
        Ok(())
    }

    fn geometry(&self) -> Result<Geometry> {
        let root = Rng::seed_from_u64(self.seed);
        let draw_protos = |rng: &mut Rng| -> Vec<Vec<Vec<f64>>> {
            (0..self.n_classes)
                .map(|_| {
                    (0..self.modes_per_class)
                        .map(|_| {
                            (0..self.latent_dim)
                                .map(|_| self.prototype_scale * rng.normal() + self.prototype_shift)
                                .collect()
                        })
                        .collect()
                })
                .collect()
        };
        let mut prototypes = draw_protos(&mut root.split("prototypes"));
        if let Some((keep, tag)) = &self.prototype_override {
            let fresh = draw_protos(&mut root.split(tag));
            let from = (*keep).min(self.n_classes);
            prototypes[from..].clone_from_slice(&fresh[from..]);
        }
        let mut er = root.split("embedding");
        let a1 = crate::tensor::gaussian(&mut er, &[self.embed_width, self.latent_dim], 0.0, 1.5 / (self.latent_dim as f64).sqrt())?;
        let a2 = crate::tensor::gaussian(&mut er, &[self.input_dim, self.embed_width], 0.0, 1.0 / (self.embed_width as f64).sqrt())?;
        Ok(Geometry { prototypes, a1, a2 })
    }

    /// `n_per_class` samples of every class from the stream named `stream`.
    pub fn generate(&self, n_per_class: usize, stream: &str, split: SplitTag) -> Result<Dataset> {
        self.validate()?;
        if n_per_class == 0 {
            return Err(Error::Input("n_per_class must be positive".into()));
        }
        let g = self.geometry()?;
        let mut rng = Rng::seed_from_u64(self.seed).split("samples").split(stream);
        let n = n_per_class * self.n_classes;
        let mut z = vec![0.0; self.latent_dim * n];
        let mut y = Vec::with_capacity(n);
        for c in 0..self.n_classes {
            for _ in 0..n_per_class {
                let s = y.len();
                let proto = &g.prototypes[c][rng.below(self.modes_per_class)];
                for (k, &p) in proto.iter().enumerate() {
                    z[k * n + s] = p + self.noise * rng.normal();
                }
                y.push(c);
            }
        }
        // Columns are samples.
        let z = Tensor::matrix(self.latent_dim, n, z)?;
        let h = g.a1.matmul(&z)?.map(f64::tanh);
        let xc = g.a2.matmul(&h)?;
        let mut x = xc.transpose()?;
        if self.input_noise > 0.0 {
            for v in x.data_mut() {
                *v += self.input_noise * rng.normal();
            }
        }
        for l in y.iter_mut() {
            if rng.uniform() < self.label_noise {
                *l = rng.below(self.n_classes);
            }
        }
        let prov = format!(
            "latent_task(seed={}, stream={stream}, spec={})",
            self.seed,
            serde_json::to_string(self).expect("spec serializes")
        );
        Ok(Dataset::new(x, y, self.n_classes, split, prov)?.shuffled(&mut rng))
    }

    /// Same embedding, every class prototype replaced and shifted: a task
    /// whose inputs come from a different region of the input space.
    pub fn ood_variant(&self, shift: f64) -> TaskSpec {
        TaskSpec {
            prototype_override: Some((0, "ood-prototypes".into())),
            prototype_shift: self.prototype_shift + shift,
            label_noise: 0.0,
            ..self.clone()
        }
    }

    /// Prototype sets per class, for tests and diagnostics.
    pub fn prototypes(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        Ok(self.geometry()?.prototypes)
    }
}

/// Source and target tasks sharing the input embedding. The first
/// `round(overlap·C)` classes keep the target's prototypes; the rest get
/// fresh ones. Samples are drawn from distinct streams.
pub fn source_target_split(spec: &TaskSpec, overlap: f64, n_per_class: usize) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::Input(format!("overlap must lie in [0, 1], got {overlap}")));
    }
    let source = source_spec(spec, overlap);
    Ok((
        source.generate(n_per_class, "source", SplitTag::Train)?,
        spec.generate(n_per_class, "target", SplitTag::Train)?,
    ))
}

/// The task used for pretraining at a given class overlap.
pub fn source_spec(spec: &TaskSpec, overlap: f64) -> TaskSpec {
    let keep = (overlap * spec.n_classes as f64).round() as usize;
    TaskSpec {
        prototype_override: if keep >= spec.n_classes {
            None
        } else {
            Some((keep, "source-prototypes".into()))
        },
        ..spec.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    UniformNoise,
    FeatureDropout,
    AffineShift,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::UniformNoise,
        CorruptionKind::FeatureDropout,
        CorruptionKind::AffineShift,
    ];

    /// Magnitude at severities 1..=5.
    ///
    /// gaussian_noise: additive std. uniform_noise: half-width of additive
    /// uniform noise. feature_dropout: probability of zeroing a feature.
    /// affine_shift: `s` in `x ← (1+s)·x + s·d` with a fixed random sign vector `d`.
    pub fn magnitudes(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussianNoise => [0.05, 0.1, 0.2, 0.4, 0.8],
            CorruptionKind::UniformNoise => [0.1, 0.2, 0.35, 0.7, 1.4],
            CorruptionKind::FeatureDropout => [0.05, 0.1, 0.2, 0.35, 0.5],
            CorruptionKind::AffineShift => [0.05, 0.1, 0.2, 0.4, 0.8],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn magnitude(&self) -> Result<f64> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::Input(format!("severity must lie in 1..=5, got {}", self.severity)));
        }
        Ok(self.kind.magnitudes()[self.severity as usize - 1])
    }
}

/// Applies a corruption to the inputs; labels are untouched.
pub fn corrupt(d: &Dataset, spec: CorruptionSpec, seed: u64) -> Result<Dataset> {
    let s = spec.magnitude()?;
    let mut rng = Rng::seed_from_u64(seed).split(&format!("corrupt/{:?}/{}", spec.kind, spec.severity));
    let mut x = d.x.clone();
    match spec.kind {
        CorruptionKind::GaussianNoise => x.data_mut().iter_mut().for_each(|v| *v += s * rng.normal()),
        CorruptionKind::UniformNoise => x.data_mut().iter_mut().for_each(|v| *v += rng.uniform_range(-s, s)),
        CorruptionKind::FeatureDropout => x.data_mut().iter_mut().for_each(|v| {
            if rng.uniform() < s {
                *v = 0.0;
            }
        }),
        CorruptionKind::AffineShift => {
            let dcol = d.dim();
            // The sign vector depends on the seed only, not the severity.
            let mut sr = Rng::seed_from_u64(seed).split("affine-direction");
            let dir: Vec<f64> = (0..dcol).map(|_| if sr.uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
            for row in x.data_mut().chunks_mut(dcol) {
                for (v, &di) in row.iter_mut().zip(&dir) {
                    *v = (1.0 + s) * *v + s * di;
                }
            }
        }
    }
    Ok(Dataset {
        x,
        y: d.y.clone(),
        n_classes: d.n_classes,
        split: d.split,
        provenance: format!("{} | corrupt({:?}, severity={}, seed={seed})", d.provenance, spec.kind, spec.severity),
    })
}

/// An in-distribution test set and an OOD set; `degenerate` marks identical generators.
#[derive(Clone, Debug, PartialEq)]
pub struct OodPair {
    pub in_dist: Dataset,
    pub ood: Dataset,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Ring(RingSpec),
    Latent(TaskSpec),
}

impl GeneratorSpec {
    pub fn generate(&self, n_per_class: usize, stream: &str, split: SplitTag) -> Result<Dataset> {
        match self {
            GeneratorSpec::Ring(r) => r.generate(n_per_class, stream, split),
            GeneratorSpec::Latent(t) => t.generate(n_per_class, stream, split),
        }
    }
}

pub fn ood_pair(in_dist: &GeneratorSpec, ood: &GeneratorSpec, n_per_class: usize) -> Result<OodPair> {
    let degenerate = in_dist == ood;
    if degenerate {
        log::warn!("ood_pair: in-distribution and OOD generators are identical");
    }
    Ok(OodPair {
        in_dist: in_dist.generate(n_per_class, "ood-in", SplitTag::Test)?,
        ood: ood.generate(n_per_class, "ood-out", SplitTag::Test)?,
        degenerate,
    })
}

/// Per-feature affine standardization fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant features get unit scale.
    pub fn fit(train: &Dataset) -> Self {
        let (n, d) = (train.len() as f64, train.dim());
        let mut mean = vec![0.0; d];
        for r in train.x.data().chunks(d) {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in train.x.data().chunks(d) {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.dim() != self.mean.len() {
            return Err(Error::dim("standardize", d.x.shape(), &[self.mean.len()]));
        }
        let mut out = d.clone();
        for r in out.x.data_mut().chunks_mut(self.mean.len()) {
            for ((v, m), s) in r.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Standardizes both splits with statistics of `train` only.
pub fn standardize_pair(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train);
    Ok((s.apply(train)?, s.apply(test)?, s))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    pub n_classes: usize,
}

/// Reads a headered CSV of numeric features plus an integer label column.
/// Features are returned as read; see [`standardize_pair`].
pub fn load_csv(path: &Path, schema: &CsvSchema, split: SplitTag) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    let label_idx = headers.iter().position(|h| h.trim() == schema.label_column).ok_or_else(|| Error::Parse {
        line: 1,
        msg: format!("no label column named {}", schema.label_column),
    })?;
    let d = headers.len() - 1;
    let mut data = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", d + 1, rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if j == label_idx {
                let l: usize = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("label {field:?} is not a non-negative integer"),
                })?;
                if l >= schema.n_classes {
                    return Err(Error::Parse {
                        line,
                        msg: format!("label {l} out of range for {} classes", schema.n_classes),
                    });
                }
                y.push(l);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("feature {field:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("feature {field:?} is not finite"),
                    });
                }
                data.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Input(format!("{} has no data rows", path.display())));
    }
    let x = Tensor::matrix(y.len(), d, data)?;
    Dataset::new(x, y, schema.n_classes, split, format!("csv(sha256={})", sha256_hex(&bytes)))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Reads an IDX image file (pixels scaled to `[0, 1]`) and its label file.
pub fn load_idx(images: &Path, labels: &Path, n_classes: usize, split: SplitTag) -> Result<Dataset> {
    let ib = read_file(images)?;
    let lb = read_file(labels)?;
    if be_u32(&ib, 0)? != IDX_IMAGES {
        return Err(Error::Format(format!("{}: bad IDX image magic", images.display())));
    }
    if be_u32(&lb, 0)? != IDX_LABELS {
        return Err(Error::Format(format!("{}: bad IDX label magic", labels.display())));
    }
    let n = be_u32(&ib, 4)? as usize;
    let (r, c) = (be_u32(&ib, 8)? as usize, be_u32(&ib, 12)? as usize);
    let nl = be_u32(&lb, 4)? as usize;
    if nl != n {
        return Err(Error::Format(format!("{n} images but {nl} labels")));
    }
    let d = r * c;
    if ib.len() != 16 + n * d {
        return Err(Error::Length {
            expected: (16 + n * d) as u64,
            found: ib.len() as u64,
        });
    }
    if lb.len() != 8 + n {
        return Err(Error::Length {
            expected: (8 + n) as u64,
            found: lb.len() as u64,
        });
    }
    let x = Tensor::matrix(n, d, ib[16..].iter().map(|&p| p as f64 / 255.0).collect())?;
    let y = lb[8..].iter().map(|&l| l as usize).collect();
    let mut h = Sha256::new();
    h.update(&ib);
    h.update(&lb);
    let prov = format!("idx(sha256={})", h.finalize().iter().map(|b| format!("{b:02x}")).collect::<String>());
    Dataset::new(x, y, n_classes, split, prov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn task() -> TaskSpec {
        TaskSpec {
            n_classes: 4,
            latent_dim: 3,
            input_dim: 6,
            modes_per_class: 2,
            embed_width: 8,
            prototype_scale: 1.0,
            noise: 0.2,
            input_noise: 0.0,
            label_noise: 0.0,
            seed: 5,
            prototype_override: None,
            prototype_shift: 0.0,
        }
    }

    fn row_hashes(d: &Dataset) -> HashSet<Vec<u64>> {
        (0..d.len()).map(|i| d.x.row(i).iter().map(|v| v.to_bits()).collect()).collect()
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let d = make_clusters(3, 5, 4, 0.0, 1).unwrap();
        let spec = RingSpec {
            n_classes: 3,
            dim: 4,
            spread: 0.0,
            radius: 1.0,
            seed: 1,
        };
        for i in 0..d.len() {
            assert_eq!(d.x.row(i), spec.mean(d.y[i]).as_slice());
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(make_clusters(3, 10, 2, 0.3, 7).unwrap(), make_clusters(3, 10, 2, 0.3, 7).unwrap());
        let t = task();
        assert_eq!(t.generate(5, "a", SplitTag::Train).unwrap(), t.generate(5, "a", SplitTag::Train).unwrap());
    }

    #[test]
    fn full_overlap_keeps_prototypes() {
        let t = task();
        assert_eq!(source_spec(&t, 1.0).prototypes().unwrap(), t.prototypes().unwrap());
    }

    #[test]
    fn zero_overlap_makes_disjoint_prototypes() {
        let t = task();
        let a: HashSet<Vec<u64>> = t
            .prototypes()
            .unwrap()
            .concat()
            .iter()
            .map(|p| p.iter().map(|v| v.to_bits()).collect())
            .collect();
        let b: HashSet<Vec<u64>> = source_spec(&t, 0.0)
            .prototypes()
            .unwrap()
            .concat()
            .iter()
            .map(|p| p.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn source_and_target_samples_are_disjoint() {
        let (s, t) = source_target_split(&task(), 1.0, 50).unwrap();
        assert!(row_hashes(&s).is_disjoint(&row_hashes(&t)));
    }

    #[test]
    fn severity_map_increases() {
        for k in CorruptionKind::ALL {
            assert!(k.magnitudes().windows(2).all(|w| w[0] < w[1]), "{k:?}");
        }
    }

    #[test]
    fn gaussian_noise_moment() {
        let x = Tensor::zeros(&[10_000, 1]);
        let d = Dataset::new(x, vec![0; 10_000], 2, SplitTag::Test, "zeros".into()).unwrap();
        let c = corrupt(
            &d,
            CorruptionSpec {
                kind: CorruptionKind::GaussianNoise,
                severity: 1,
            },
            3,
        )
        .unwrap();
        let v = c.x.data();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!((sd - 0.05).abs() < 0.005, "{sd}");
        assert_eq!(c.y, d.y);
    }

    #[test]
    fn severity_out_of_range() {
        let spec = CorruptionSpec {
            kind: CorruptionKind::AffineShift,
            severity: 6,
        };
        assert!(spec.magnitude().is_err());
    }

    #[test]
    fn ood_pair_flags_identical_generators() {
        let g = GeneratorSpec::Latent(task());
        assert!(ood_pair(&g, &g, 3).unwrap().degenerate);
    }

    #[test]
    fn disjoint_rings_are_separated() {
        let a = GeneratorSpec::Ring(RingSpec {
            n_classes: 4,
            dim: 2,
            spread: 0.05,
            radius: 1.0,
            seed: 2,
        });
        let b = GeneratorSpec::Ring(RingSpec {
            n_classes: 4,
            dim: 2,
            spread: 0.05,
            radius: 3.0,
            seed: 2,
        });
        let p = ood_pair(&a, &b, 25).unwrap();
        assert!(!p.degenerate);
        let mut min = f64::INFINITY;
        for i in 0..p.in_dist.len() {
            for j in 0..p.ood.len() {
                let d: f64 = p.in_dist.x.row(i).iter().zip(p.ood.x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 0.0);
    }

    fn write_tmp(contents: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents).unwrap();
        f
    }

    #[test]
    fn csv_three_rows() {
        let f = write_tmp(b"a,b,label\n1.5,2,0\n-1,0.25,2\n3,4,1\n");
        let schema = CsvSchema {
            label_column: "label".into(),
            n_classes: 3,
        };
        let d = load_csv(f.path(), &schema, SplitTag::Train).unwrap();
        assert_eq!(d.x.data(), &[1.5, 2.0, -1.0, 0.25, 3.0, 4.0]);
        assert_eq!(d.y, vec![0, 2, 1]);
        assert!(d.provenance.starts_with("csv(sha256="));
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let schema = CsvSchema {
            label_column: "label".into(),
            n_classes: 3,
        };
        let f = write_tmp(b"a,label\n1,0\nx,1\n");
        assert!(matches!(load_csv(f.path(), &schema, SplitTag::Train), Err(Error::Parse { line: 3, .. })));
        let f = write_tmp(b"a,label\n1,0\n2,7\n");
        assert!(matches!(load_csv(f.path(), &schema, SplitTag::Train), Err(Error::Parse { line: 3, .. })));
        let f = write_tmp(b"a,label\nNaN,0\n");
        assert!(matches!(load_csv(f.path(), &schema, SplitTag::Train), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn standardization_uses_train_statistics() {
        let train = Dataset::new(
            Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]]).unwrap(),
            vec![0, 1, 0],
            2,
            SplitTag::Train,
            "t".into(),
        )
        .unwrap();
        let test = Dataset::new(
            Tensor::from_rows(&[vec![103.0, 12.0], vec![105.0, 12.0]]).unwrap(),
            vec![0, 1],
            2,
            SplitTag::Test,
            "t".into(),
        )
        .unwrap();
        let (tr, te, s) = standardize_pair(&train, &test).unwrap();
        for j in 0..2 {
            let m: f64 = (0..3).map(|i| tr.x.at(i, j)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-10);
        }
        let sd = (8.0f64 / 3.0).sqrt();
        assert_eq!(s.std[1], 1.0);
        assert!((te.x.at(0, 0) - 100.0 / sd).abs() < 1e-12);
        assert_eq!(te.x.at(0, 1), 2.0);
    }

    #[test]
    fn idx_round_trip_and_bad_magic() {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend([0, 255, 51, 102]);
        let lab = [0u8, 0, 8, 1, 0, 0, 0, 2, 1, 0];
        let (fi, fl) = (write_tmp(&img), write_tmp(&lab));
        let d = load_idx(fi.path(), fl.path(), 2, SplitTag::Train).unwrap();
        assert_eq!(d.x.data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.y, vec![1, 0]);
        assert!(matches!(load_idx(fl.path(), fl.path(), 2, SplitTag::Train), Err(Error::Format(_))));
        let short = write_tmp(&img[..18]);
        assert!(matches!(load_idx(short.path(), fl.path(), 2, SplitTag::Train), Err(Error::Length { .. })));
    }
}
