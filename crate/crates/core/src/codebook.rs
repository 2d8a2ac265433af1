//! Visual-word models learned from training descriptors: k-means centroids
//! for BoVW/VLAD and a diagonal-covariance Gaussian mixture for Fisher
//! vectors.
//!
//! k-means uses k-means++ seeding and Lloyd iterations; empty clusters are
//! reseeded to the point farthest from its current centroid, which keeps
//! the objective non-increasing. The GMM is initialized from a k-means fit
//! and refined by EM with a per-dimension variance floor applied each
//! M-step; the floor is a box constraint, so the constrained M-step keeps
//! the log-likelihood non-decreasing as well.

use crate::rng::SplitMix64;
use crate::{Error, Result};

/// k-means centroids: k rows of dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
    k: usize,
    dim: usize,
}

impl Codebook {
    /// Build from explicit centroid rows, enforcing the type invariants
    /// (nonempty, consistent dims, finite, pairwise distinct).
    pub fn from_centroids(rows: Vec<Vec<f32>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("codebook centroids".to_string()));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidSpec("zero-dimensional centroids".to_string()));
        }
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("codebook centroid".to_string()));
            }
        }
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                if rows[i] == rows[j] {
                    return Err(Error::InvalidSpec(format!(
                        "centroids {i} and {j} are identical"
                    )));
                }
            }
        }
        let k = rows.len();
        let centroids = rows.into_iter().flatten().collect();
        Ok(Codebook { centroids, k, dim })
    }

    fn from_flat(centroids: Vec<f32>, k: usize, dim: usize) -> Self {
        debug_assert_eq!(centroids.len(), k * dim);
        Codebook { centroids, k, dim }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centroid_rows(&self) -> Vec<Vec<f32>> {
        (0..self.k).map(|j| self.centroid(j).to_vec()).collect()
    }
}

#[cfg(test)]
fn dist_sq(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Squared distance with an abandon bound: once the partial sum exceeds
/// `bound` the exact value no longer matters and the scan stops. Partial
/// sums accumulate in the same order as [`dist_sq`], so completed
/// distances are bit-identical.
#[inline]
fn dist_sq_bounded(a: &[f32], b: &[f32], bound: f32) -> f32 {
    let mut acc = 0.0f32;
    let mut a = a;
    let mut b = b;
    while a.len() >= 16 {
        for (x, y) in a[..16].iter().zip(b[..16].iter()) {
            let d = x - y;
            acc += d * d;
        }
        if acc > bound {
            return f32::INFINITY;
        }
        a = &a[16..];
        b = &b[16..];
    }
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid by squared Euclidean distance;
/// ties break to the lowest index.
pub fn assign_nearest(codebook: &Codebook, descriptor: &[f32]) -> Result<usize> {
    if descriptor.len() != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            got: descriptor.len(),
        });
    }
    let mut best = 0usize;
    let mut best_d = f32::INFINITY;
    for j in 0..codebook.k {
        let d = dist_sq_bounded(descriptor, codebook.centroid(j), best_d);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    Ok(best)
}

fn validate_points(points: &[Vec<f32>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidSpec("k must be at least 1".to_string()));
    }
    if points.len() < k {
        return Err(Error::InvalidSpec(format!(
            "need at least k={k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor".to_string()));
        }
    }
    Ok(dim)
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans_fit(
    points: &[Vec<f32>],
    k: usize,
    seed: u64,
    max_iter: usize,
    rel_tol: f64,
) -> Result<Codebook> {
    Ok(kmeans_fit_traced(points, k, seed, max_iter, rel_tol)?.0)
}

/// As [`kmeans_fit`] but also returns the per-iteration objective
/// (total within-cluster squared distance after each assignment).
pub fn kmeans_fit_traced(
    points: &[Vec<f32>],
    k: usize,
    seed: u64,
    max_iter: usize,
    rel_tol: f64,
) -> Result<(Codebook, Vec<f64>)> {
    let dim = validate_points(points, k)?;
    let n = points.len();
    let mut rng = SplitMix64::new(seed);

    // Centroids are held in f64 throughout Lloyd iterations so the
    // objective is non-increasing down to rounding noise.
    let mut centroids = vec![0.0f64; k * dim];
    let copy_point = |centroids: &mut [f64], j: usize, p: &[f32]| {
        for (c, &v) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(p.iter()) {
            *c = v as f64;
        }
    };

    // k-means++ seeding.
    let first = rng.next_below(n as u64) as usize;
    copy_point(&mut centroids, 0, &points[first]);
    let mut min_d: Vec<f64> = points
        .iter()
        .map(|p| dist_sq64(p, &centroids[..dim]))
        .collect();
    for j in 1..k {
        let total: f64 = min_d.iter().sum();
        let chosen = if total > 0.0 {
            let mut r = rng.next_f64() * total;
            let mut pick = n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            // All remaining mass is zero (duplicate-heavy data): walk
            // indices deterministically.
            j % n
        };
        copy_point(&mut centroids, j, &points[chosen]);
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq64(p, &centroids[j * dim..(j + 1) * dim]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut trace: Vec<f64> = Vec::new();
    let mut prev_obj: Option<f64> = None;

    let assign = |centroids: &[f64], assignments: &mut [usize], dists: &mut [f64]| -> f64 {
        let mut obj = 0.0f64;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let d = dist_sq64_bounded(p, &centroids[j * dim..(j + 1) * dim], best_d);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assignments[i] = best;
            dists[i] = best_d;
            obj += best_d;
        }
        obj
    };

    for _ in 0..max_iter {
        let mut obj = assign(&centroids, &mut assignments, &mut dists);

        // Reseed empty clusters to the point farthest from its centroid,
        // then redo the assignment so the objective stays consistent.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        if counts.contains(&0) {
            let mut taken = vec![false; n];
            #[allow(clippy::needless_range_loop)]
            for j in 0..k {
                if counts[j] > 0 {
                    continue;
                }
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).expect("finite"))
                    .expect("n >= k guarantees a free point");
                taken[far] = true;
                copy_point(&mut centroids, j, &points[far]);
            }
            obj = assign(&centroids, &mut assignments, &mut dists);
        }
        trace.push(obj);

        if let Some(prev) = prev_obj {
            if prev <= 0.0 || (prev - obj) < rel_tol * prev {
                break;
            }
        }
        prev_obj = Some(obj);

        // Update step: per-cluster means.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(assignments.iter()) {
            counts[a] += 1;
            let row = &mut sums[a * dim..(a + 1) * dim];
            for (s, &v) in row.iter_mut().zip(p.iter()) {
                *s += v as f64;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for r in 0..dim {
                centroids[j * dim + r] = sums[j * dim + r] * inv;
            }
        }
    }

    let rounded: Vec<f32> = centroids.iter().map(|&v| v as f32).collect();
    Ok((Codebook::from_flat(rounded, k, dim), trace))
}

#[inline]
fn dist_sq64(a: &[f32], b: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x as f64 - y;
        acc += d * d;
    }
    acc
}

#[inline]
fn dist_sq64_bounded(a: &[f32], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0f64;
    let mut a = a;
    let mut b = b;
    while a.len() >= 16 {
        for (x, y) in a[..16].iter().zip(b[..16].iter()) {
            let d = *x as f64 - y;
            acc += d * d;
        }
        if acc > bound {
            return f64::INFINITY;
        }
        a = &a[16..];
        b = &b[16..];
    }
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x as f64 - y;
        acc += d * d;
    }
    acc
}

/// Diagonal-covariance Gaussian mixture.
///
/// Per-component log-normalization constants and reciprocal (co)variances
/// are precomputed at construction; posterior and Fisher-gradient
/// evaluation over large descriptor sets then needs no transcendentals in
/// the inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f32>,
    means: Vec<f32>,
    variances: Vec<f32>,
    k: usize,
    dim: usize,
    log_weight: Vec<f64>,
    /// sum_r ln(2 pi var_jr) per component.
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
    inv_sigma: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl GmmModel {
    fn build(weights: Vec<f32>, means: Vec<f32>, variances: Vec<f32>, k: usize, dim: usize) -> Self {
        let mut model = GmmModel {
            weights,
            means,
            variances,
            k,
            dim,
            log_weight: Vec::new(),
            log_norm: Vec::new(),
            inv_var: Vec::new(),
            inv_sigma: Vec::new(),
        };
        model.refresh_caches();
        model
    }

    pub(crate) fn refresh_caches(&mut self) {
        let (k, dim) = (self.k, self.dim);
        self.log_weight = self
            .weights
            .iter()
            .map(|&w| (w as f64).max(1e-300).ln())
            .collect();
        self.inv_var = self.variances.iter().map(|&v| 1.0 / v as f64).collect();
        self.inv_sigma = self
            .variances
            .iter()
            .map(|&v| 1.0 / (v as f64).sqrt())
            .collect();
        self.log_norm = (0..k)
            .map(|j| {
                (0..dim)
                    .map(|r| LN_2PI + (self.variances[j * dim + r] as f64).ln())
                    .sum()
            })
            .collect();
    }

    #[cfg(test)]
    pub(crate) fn scale_weights_for_test(&mut self, factor: f32) {
        for w in self.weights.iter_mut() {
            *w *= factor;
        }
        self.refresh_caches();
    }

    pub fn from_parts(
        weights: Vec<f32>,
        means: Vec<Vec<f32>>,
        variances: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidSpec(
                "weights, means and variances must agree on k >= 1".to_string(),
            ));
        }
        let dim = means[0].len();
        let sum: f64 = weights.iter().map(|&w| w as f64).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSpec(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidSpec("negative or non-finite weight".to_string()));
        }
        for (m, v) in means.iter().zip(variances.iter()) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: if m.len() != dim { m.len() } else { v.len() },
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("gmm mean".to_string()));
            }
            if v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(Error::InvalidSpec(
                    "variances must be strictly positive".to_string(),
                ));
            }
        }
        Ok(GmmModel::build(
            weights,
            means.into_iter().flatten().collect(),
            variances.into_iter().flatten().collect(),
            k,
            dim,
        ))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self, j: usize) -> f32 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn mean(&self, j: usize) -> &[f32] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    pub fn variance(&self, j: usize) -> &[f32] {
        &self.variances[j * self.dim..(j + 1) * self.dim]
    }

    /// Per-component responsibilities for one descriptor, computed in
    /// log space with max subtraction; sums to 1.
    pub fn posteriors(&self, descriptor: &[f32]) -> Result<Vec<f32>> {
        Ok(self
            .posteriors_f64(descriptor)?
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }

    pub(crate) fn posteriors_f64(&self, descriptor: &[f32]) -> Result<Vec<f64>> {
        let (log_post, _) = self.log_joint(descriptor)?;
        let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = log_post.iter().map(|&lp| (lp - max).exp()).collect();
        let sum: f64 = out.iter().sum();
        for v in out.iter_mut() {
            *v /= sum;
        }
        Ok(out)
    }

    pub(crate) fn inv_sigma(&self, j: usize) -> &[f64] {
        &self.inv_sigma[j * self.dim..(j + 1) * self.dim]
    }

    pub(crate) fn inv_variance(&self, j: usize) -> &[f64] {
        &self.inv_var[j * self.dim..(j + 1) * self.dim]
    }

    /// log(pi_j N(x; mu_j, var_j)) per component, plus the descriptor's
    /// total log-likelihood via log-sum-exp.
    fn log_joint(&self, descriptor: &[f32]) -> Result<(Vec<f64>, f64)> {
        if descriptor.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: descriptor.len(),
            });
        }
        let mut log_post = Vec::with_capacity(self.k);
        for j in 0..self.k {
            let mu = self.mean(j);
            let iv = self.inv_variance(j);
            let mut quad = 0.0f64;
            for r in 0..self.dim {
                let diff = descriptor[r] as f64 - mu[r] as f64;
                quad += diff * diff * iv[r];
            }
            log_post.push(self.log_weight[j] - 0.5 * (self.log_norm[j] + quad));
        }
        let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + log_post.iter().map(|&lp| (lp - max).exp()).sum::<f64>().ln();
        Ok((log_post, lse))
    }

    /// Average per-descriptor log-likelihood of a set.
    pub fn mean_log_likelihood(&self, descriptors: &[Vec<f32>]) -> Result<f64> {
        if descriptors.is_empty() {
            return Err(Error::EmptyInput("descriptors".to_string()));
        }
        let mut total = 0.0f64;
        for d in descriptors {
            total += self.log_joint(d)?.1;
        }
        Ok(total / descriptors.len() as f64)
    }
}

/// EM fit of a diagonal GMM initialized from k-means.
pub fn gmm_fit_em(
    points: &[Vec<f32>],
    k: usize,
    seed: u64,
    max_iter: usize,
    rel_tol: f64,
    variance_floor: f32,
) -> Result<GmmModel> {
    Ok(gmm_fit_em_traced(points, k, seed, max_iter, rel_tol, variance_floor)?.0)
}

/// As [`gmm_fit_em`] but also returns the total log-likelihood after each
/// E-step.
pub fn gmm_fit_em_traced(
    points: &[Vec<f32>],
    k: usize,
    seed: u64,
    max_iter: usize,
    rel_tol: f64,
    variance_floor: f32,
) -> Result<(GmmModel, Vec<f64>)> {
    let dim = validate_points(points, k)?;
    if variance_floor <= 0.0 {
        return Err(Error::InvalidSpec(
            "variance floor must be positive".to_string(),
        ));
    }
    let n = points.len();
    let floor = variance_floor as f64;

    // Initialization from k-means: means = centroids, variances =
    // within-cluster variances (floored), weights = cluster fractions.
    // EM state is kept in f64; the returned model is rounded once.
    let book = kmeans_fit(points, k, seed, max_iter, rel_tol)?;
    let mut counts = vec![0usize; k];
    let mut var_acc = vec![0.0f64; k * dim];
    for p in points {
        let a = assign_nearest(&book, p)?;
        counts[a] += 1;
        let c = book.centroid(a);
        for r in 0..dim {
            let diff = (p[r] - c[r]) as f64;
            var_acc[a * dim + r] += diff * diff;
        }
    }
    let mut weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut means: Vec<f64> = Vec::with_capacity(k * dim);
    for j in 0..k {
        means.extend(book.centroid(j).iter().map(|&v| v as f64));
    }
    let mut variances = vec![floor; k * dim];
    for j in 0..k {
        if counts[j] > 0 {
            for r in 0..dim {
                variances[j * dim + r] = (var_acc[j * dim + r] / counts[j] as f64).max(floor);
            }
        }
    }
    // Guard against zero-count components from duplicate-point reseeding.
    let wsum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= wsum;
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut prev_ll: Option<f64> = None;
    let mut resp = vec![0.0f64; n * k];

    for _ in 0..max_iter {
        // Per-iteration component constants keep transcendentals out of
        // the inner loop.
        let log_w: Vec<f64> = weights.iter().map(|&w| w.max(1e-300).ln()).collect();
        let inv_var: Vec<f64> = variances.iter().map(|&v| 1.0 / v).collect();
        let log_norm: Vec<f64> = (0..k)
            .map(|j| (0..dim).map(|r| LN_2PI + variances[j * dim + r].ln()).sum())
            .collect();

        // E-step: responsibilities and total log-likelihood.
        let mut ll = 0.0f64;
        for (i, p) in points.iter().enumerate() {
            let mut log_post = Vec::with_capacity(k);
            for j in 0..k {
                let mut quad = 0.0f64;
                for r in 0..dim {
                    let diff = p[r] as f64 - means[j * dim + r];
                    quad += diff * diff * inv_var[j * dim + r];
                }
                log_post.push(log_w[j] - 0.5 * (log_norm[j] + quad));
            }
            let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + log_post.iter().map(|&lp| (lp - max).exp()).sum::<f64>().ln();
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (log_post[j] - lse).exp();
            }
        }
        trace.push(ll);
        if let Some(prev) = prev_ll {
            if (ll - prev).abs() < rel_tol * prev.abs().max(1e-12) {
                break;
            }
        }
        prev_ll = Some(ll);

        // M-step with the variance floor (a box constraint, so the
        // constrained maximizer keeps EM monotone).
        for j in 0..k {
            let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nj < 1e-12 {
                continue;
            }
            let inv = 1.0 / nj;
            let mut mu = vec![0.0f64; dim];
            for (i, p) in points.iter().enumerate() {
                let g = resp[i * k + j];
                for r in 0..dim {
                    mu[r] += g * p[r] as f64;
                }
            }
            for m in mu.iter_mut() {
                *m *= inv;
            }
            let mut var = vec![0.0f64; dim];
            for (i, p) in points.iter().enumerate() {
                let g = resp[i * k + j];
                for r in 0..dim {
                    let diff = p[r] as f64 - mu[r];
                    var[r] += g * diff * diff;
                }
            }
            weights[j] = nj / n as f64;
            for r in 0..dim {
                means[j * dim + r] = mu[r];
                variances[j * dim + r] = (var[r] * inv).max(floor);
            }
        }
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
    }

    let model = GmmModel::build(
        weights.iter().map(|&v| v as f32).collect(),
        means.iter().map(|&v| v as f32).collect(),
        variances
            .iter()
            .map(|&v| (v as f32).max(variance_floor))
            .collect(),
        k,
        dim,
    );
    Ok((model, trace))
}
