//! Probabilistic neural network over GCC features.
//!
//! Training stores every feature vector with its cluster label. A query
//! evaluates a Gaussian kernel against each stored vector, averages per
//! cluster and normalizes the cluster scores with a softmax.
//!
//! # Model file
//!
//! ```text
//! magic     8 bytes   "GCAPNN\0\0"
//! version   u32 LE
//! hdr_len   u64 LE
//! header    hdr_len bytes of UTF-8 JSON (ModelHeader)
//! count     u64 LE    number of records
//! records   count x (label u32 LE, D x f64 LE)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSpec, GccFeature};
use crate::geometry::{ClusterGrid, RoomSpec, Vec3};

pub const MODEL_MAGIC: [u8; 8] = *b"GCAPNN\0\0";
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_SIGMA: f64 = 5.0;

/// Scale applied to the averaged kernel sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelScale {
    /// Kernel without the Gaussian normalization constant.
    #[default]
    Unit,
    /// Multiplies by `1 / ((2 pi)^(D/2) sigma^D)`. Underflows for large D;
    /// meant for small models.
    Gaussian,
}

/// Everything needed to reproduce the features a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub k: usize,
    pub d: usize,
    pub sigma: f64,
    pub kernel_scale: KernelScale,
    pub room: RoomSpec,
    pub grid: ClusterGrid,
    pub mic_positions: Vec<Vec3>,
    pub feature: FeatureSpec,
    pub pair_order: Vec<(usize, usize)>,
    /// Per-cluster prior probabilities.
    pub priors: Vec<f64>,
    /// Per-cluster misclassification losses.
    pub losses: Vec<f64>,
}

/// Provenance recorded alongside the training vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub room: RoomSpec,
    pub mic_positions: Vec<Vec3>,
    pub feature: FeatureSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnnModel {
    header: ModelHeader,
    /// Row-major `N x D` training vectors.
    centers: Vec<f64>,
    labels: Vec<u32>,
    counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProbs {
    pub probs: Vec<f64>,
    pub softmax: bool,
}

/// Stores the labelled features. No iterative fitting takes place.
pub fn train(
    features: &[GccFeature],
    labels: &[usize],
    sigma: f64,
    grid: &ClusterGrid,
    meta: ModelMeta,
) -> Result<PnnModel> {
    if features.len() != labels.len() {
        return Err(Error::invalid(
            "training set",
            format!("{} features but {} labels", features.len(), labels.len()),
        ));
    }
    if features.is_empty() {
        return Err(Error::invalid("training set", "no samples"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("sigma", "must be positive"));
    }
    let k = grid.k();
    let d = features[0].dimension();
    let pair_order = crate::features::pair_order(meta.mic_positions.len());
    if d != meta.feature.lags_per_pair * pair_order.len() {
        return Err(Error::DimensionMismatch {
            expected: meta.feature.lags_per_pair * pair_order.len(),
            actual: d,
        });
    }
    let mut centers = Vec::with_capacity(features.len() * d);
    let mut counts = vec![0u32; k];
    for (f, &label) in features.iter().zip(labels) {
        if f.dimension() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: f.dimension(),
            });
        }
        if label >= k {
            return Err(Error::ClusterIndex { index: label, k });
        }
        centers.extend_from_slice(&f.values);
        counts[label] += 1;
    }
    let header = ModelHeader {
        format_version: MODEL_VERSION,
        k,
        d,
        sigma,
        kernel_scale: KernelScale::Unit,
        room: meta.room,
        grid: *grid,
        mic_positions: meta.mic_positions,
        feature: meta.feature,
        pair_order,
        priors: vec![1.0; k],
        losses: vec![1.0; k],
    };
    Ok(PnnModel {
        header,
        centers,
        labels: labels.iter().map(|&l| l as u32).collect(),
        counts,
    })
}

/// Gaussian kernel without normalization: `exp(-|g - c|^2 / (2 sigma^2))`.
pub fn kernel(g: &[f64], center: &[f64], sigma: f64) -> Result<f64> {
    if g.len() != center.len() {
        return Err(Error::DimensionMismatch {
            expected: center.len(),
            actual: g.len(),
        });
    }
    Ok(kernel_unchecked(g, center, sigma))
}

#[inline]
fn kernel_unchecked(g: &[f64], center: &[f64], sigma: f64) -> f64 {
    let d2: f64 = g.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Numerically stable softmax.
pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl PnnModel {
    pub fn header(&self) -> &ModelHeader {
        &self.header
    }

    pub fn grid(&self) -> &ClusterGrid {
        &self.header.grid
    }

    pub fn sigma(&self) -> f64 {
        self.header.sigma
    }

    pub fn dimension(&self) -> usize {
        self.header.d
    }

    pub fn num_clusters(&self) -> usize {
        self.header.k
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.header.d..(i + 1) * self.header.d]
    }

    pub fn set_kernel_scale(&mut self, scale: KernelScale) {
        self.header.kernel_scale = scale;
    }

    /// Replaces the per-cluster priors and losses used by [`Self::classify`].
    pub fn set_decision_weights(&mut self, priors: Vec<f64>, losses: Vec<f64>) -> Result<()> {
        let k = self.header.k;
        for (name, v) in [("priors", &priors), ("losses", &losses)] {
            if v.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::invalid("decision weights", format!("{name} must be positive")));
            }
        }
        self.header.priors = priors;
        self.header.losses = losses;
        Ok(())
    }

    fn check_dim(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.header.d {
            return Err(Error::DimensionMismatch {
                expected: self.header.d,
                actual: g.len(),
            });
        }
        Ok(())
    }

    /// Per-cluster mean kernel response; empty clusters score 0.
    pub fn raw_scores(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(g)?;
        let mut sums = vec![0.0; self.header.k];
        for (i, &label) in self.labels.iter().enumerate() {
            sums[label as usize] += kernel_unchecked(g, self.center(i), self.header.sigma);
        }
        let norm = match self.header.kernel_scale {
            KernelScale::Unit => 1.0,
            KernelScale::Gaussian => {
                let d = self.header.d as f64;
                1.0 / ((2.0 * std::f64::consts::PI).powf(d / 2.0) * self.header.sigma.powf(d))
            }
        };
        Ok(sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &n)| if n == 0 { 0.0 } else { norm * s / n as f64 })
            .collect())
    }

    pub fn cluster_probabilities(&self, g: &[f64]) -> Result<ClusterProbs> {
        Ok(ClusterProbs {
            probs: softmax(&self.raw_scores(g)?),
            softmax: true,
        })
    }

    /// Bayes decision: argmax of prior x loss x probability, ties to the
    /// lowest cluster index.
    pub fn decide(&self, probs: &ClusterProbs) -> usize {
        argmax_lowest(
            probs
                .probs
                .iter()
                .zip(self.header.priors.iter().zip(&self.header.losses))
                .map(|(p, (h, c))| h * c * p),
        )
    }

    pub fn classify(&self, g: &[f64]) -> Result<usize> {
        Ok(self.decide(&self.cluster_probabilities(g)?))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.labels.len() as u64).to_le_bytes())?;
        for (i, label) in self.labels.iter().enumerate() {
            w.write_all(&label.to_le_bytes())?;
            for v in self.center(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |msg: &str| Error::ModelFormat(msg.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if magic != MODEL_MAGIC {
            return Err(bad("not a model file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version}"
            )));
        }
        let hdr_len = read_u64(&mut r)? as usize;
        if hdr_len > 1 << 30 {
            return Err(bad("header length implausible"));
        }
        let mut hdr = vec![0u8; hdr_len];
        r.read_exact(&mut hdr).map_err(|_| bad("truncated header"))?;
        let header: ModelHeader = serde_json::from_slice(&hdr)
            .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        if header.grid.k() != header.k
            || header.priors.len() != header.k
            || header.losses.len() != header.k
        {
            return Err(bad("header cluster counts disagree"));
        }
        let n = read_u64(&mut r)? as usize;
        let d = header.d;
        let mut labels = Vec::with_capacity(n.min(1 << 24));
        let mut centers = Vec::with_capacity(n.min(1 << 24) * d);
        let mut counts = vec![0u32; header.k];
        let mut buf = [0u8; 8];
        for _ in 0..n {
            let label = read_u32(&mut r)?;
            if label as usize >= header.k {
                return Err(Error::ModelFormat(format!("record label {label} >= K")));
            }
            counts[label as usize] += 1;
            labels.push(label);
            for _ in 0..d {
                r.read_exact(&mut buf).map_err(|_| bad("truncated record"))?;
                centers.push(f64::from_le_bytes(buf));
            }
        }
        if labels.is_empty() {
            return Err(bad("no records"));
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(bad("trailing bytes after records"));
        }
        Ok(PnnModel {
            header,
            centers,
            labels,
            counts,
        })
    }

    /// Writes the model atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
        Self::read_from(BufReader::new(f))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::ModelFormat("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::ModelFormat("truncated integer".into()))?;
    Ok(u64::from_le_bytes(b))
}
