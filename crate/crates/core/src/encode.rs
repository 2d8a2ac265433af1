//! Fixed-length feature encodings of descriptor sets.
//!
//! Three schemes, all consuming the same local descriptors:
//!
//! - BoVW: histogram of hard nearest-word assignments, L1-normalized.
//! - VLAD: per-word sums of residuals to the nearest centroid,
//!   concatenated, signed-square-rooted and globally L2-normalized.
//! - Fisher vector: normalized gradients of the GMM log-likelihood with
//!   respect to means and standard deviations, same power + L2
//!   normalization.
//!
//! Empty descriptor sets encode to zero vectors rather than erroring;
//! a patch with no texture is degenerate but still classifiable.

use crate::codebook::{assign_nearest, Codebook, GmmModel};
use crate::Result;
use std::fmt;

/// Where a feature vector came from; fixes its expected dimensionality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Bovw,
    Vlad,
    Fisher,
    Cnn(String),
    Raw,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Bovw => write!(f, "bovw"),
            Provenance::Vlad => write!(f, "vlad"),
            Provenance::Fisher => write!(f, "fisher"),
            Provenance::Cnn(layer) => write!(f, "cnn:{layer}"),
            Provenance::Raw => write!(f, "raw"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f32>,
    provenance: Provenance,
}

impl FeatureVector {
    pub fn new(values: Vec<f32>, provenance: Provenance) -> Self {
        FeatureVector { values, provenance }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Histogram of nearest-word counts divided by the descriptor count.
pub fn encode_bovw(codebook: &Codebook, descriptors: &[Vec<f32>]) -> Result<FeatureVector> {
    let k = codebook.k();
    let mut counts = vec![0.0f32; k];
    for d in descriptors {
        let w = assign_nearest(codebook, d)?;
        counts[w] += 1.0;
    }
    if !descriptors.is_empty() {
        let n = descriptors.len() as f32;
        for c in counts.iter_mut() {
            *c /= n;
        }
    }
    Ok(FeatureVector::new(counts, Provenance::Bovw))
}

/// Concatenated residual sums to the nearest centroid, signed square root,
/// global L2 normalization.
pub fn encode_vlad(codebook: &Codebook, descriptors: &[Vec<f32>]) -> Result<FeatureVector> {
    let (k, d) = (codebook.k(), codebook.dim());
    let mut acc = vec![0.0f64; k * d];
    for x in descriptors {
        let w = assign_nearest(codebook, x)?;
        let c = codebook.centroid(w);
        for (r, (&xv, &cv)) in x.iter().zip(c.iter()).enumerate() {
            acc[w * d + r] += (xv - cv) as f64;
        }
    }
    let values = power_then_l2(&acc);
    Ok(FeatureVector::new(values, Provenance::Vlad))
}

/// Fisher vector: all mean gradients then all deviation gradients (dim 2kd),
/// signed square root, global L2 normalization.
pub fn encode_fisher(gmm: &GmmModel, descriptors: &[Vec<f32>]) -> Result<FeatureVector> {
    let raw = fisher_raw(gmm, descriptors)?;
    let values = power_then_l2(&raw);
    Ok(FeatureVector::new(values, Provenance::Fisher))
}

/// Pre-normalization Fisher vector in f64: the gradient of the per-sample
/// average GMM log-likelihood, scaled by the diagonal Fisher approximation.
///
/// For component j and dimension r, with posteriors g_j(x):
///   mean part:  1/(n sqrt(pi_j))   * sum_x g_j(x) (x_r - mu_jr)/sigma_jr
///   sigma part: 1/(n sqrt(2 pi_j)) * sum_x g_j(x) ((x_r - mu_jr)^2/var_jr - 1)
pub fn fisher_raw(gmm: &GmmModel, descriptors: &[Vec<f32>]) -> Result<Vec<f64>> {
    let (k, d) = (gmm.k(), gmm.dim());
    let mut grad_mu = vec![0.0f64; k * d];
    let mut grad_sigma = vec![0.0f64; k * d];
    if descriptors.is_empty() {
        let mut out = grad_mu;
        out.append(&mut grad_sigma);
        return Ok(out);
    }
    for x in descriptors {
        let gamma = gmm.posteriors_f64(x)?;
        for j in 0..k {
            let g = gamma[j];
            if g == 0.0 {
                continue;
            }
            let mu = gmm.mean(j);
            let inv_sigma = gmm.inv_sigma(j);
            let inv_var = gmm.inv_variance(j);
            for r in 0..d {
                let diff = x[r] as f64 - mu[r] as f64;
                grad_mu[j * d + r] += g * diff * inv_sigma[r];
                grad_sigma[j * d + r] += g * (diff * diff * inv_var[r] - 1.0);
            }
        }
    }
    let n = descriptors.len() as f64;
    for j in 0..k {
        let pi = gmm.weight(j) as f64;
        let mu_scale = 1.0 / (n * pi.sqrt());
        let sigma_scale = 1.0 / (n * (2.0 * pi).sqrt());
        for r in 0..d {
            grad_mu[j * d + r] *= mu_scale;
            grad_sigma[j * d + r] *= sigma_scale;
        }
    }
    let mut out = grad_mu;
    out.append(&mut grad_sigma);
    Ok(out)
}

/// Signed square root per entry, then global L2 normalization.
/// The all-zero vector stays zero.
fn power_then_l2(raw: &[f64]) -> Vec<f32> {
    let powered: Vec<f64> = raw
        .iter()
        .map(|&v| v.signum() * v.abs().sqrt())
        .collect();
    let norm = powered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; raw.len()];
    }
    powered.iter().map(|&v| (v / norm) as f32).collect()
}

/// Expected output dimensionality per encoding.
pub fn encoded_dim(provenance: &Provenance, k: usize, d: usize) -> usize {
    match provenance {
        Provenance::Bovw => k,
        Provenance::Vlad => k * d,
        Provenance::Fisher => 2 * k * d,
        _ => 0,
    }
}

impl FeatureVector {
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
