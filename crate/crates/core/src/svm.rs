//! Multiclass linear SVM with L1 hinge loss.
//!
//! The binary solver minimizes 0.5 ||w||^2 + C sum_i max(0, 1 - y_i w.x_i)
//! by coordinate descent on the dual over shuffled indices, with the bias
//! handled by augmenting every feature vector with a constant 1 (the bias
//! is therefore regularized, a deliberate deviation from the
//! unregularized-bias formulation). Training stops when the largest
//! projected-gradient violation in an epoch drops below the tolerance.
//!
//! Multiclass is one-vs-rest; C is selected by stratified 3-fold
//! cross-validation on the training samples only. No feature
//! standardization is applied anywhere.

use crate::harness::stratified_kfold;
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrainConfig {
    pub c: f64,
    /// Stopping threshold on the maximal projected-gradient violation.
    pub tolerance: f64,
    /// Maximum number of outer epochs.
    pub max_iter: usize,
    /// Seed for the per-epoch index permutation.
    pub seed: u64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        SvmTrainConfig {
            c: 1.0,
            tolerance: 0.1,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl SvmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c.is_nan() || self.c <= 0.0 {
            return Err(Error::InvalidSpec("svm C must be positive".to_string()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidSpec("svm tolerance must be positive".to_string()));
        }
        Ok(())
    }
}

/// One (w, b) per class; prediction is the argmax decision value.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    weights: Vec<f32>,
    biases: Vec<f32>,
    num_classes: usize,
    dim: usize,
}

impl LinearSvmModel {
    pub fn from_parts(weights: Vec<Vec<f32>>, biases: Vec<f32>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidSpec(
                "need one weight vector and bias per class".to_string(),
            ));
        }
        let dim = weights[0].len();
        for w in &weights {
            if w.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("svm weights".to_string()));
            }
        }
        if biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("svm biases".to_string()));
        }
        Ok(LinearSvmModel {
            num_classes: weights.len(),
            dim,
            weights: weights.into_iter().flatten().collect(),
            biases,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_weights(&self, class: usize) -> &[f32] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn class_bias(&self, class: usize) -> f32 {
        self.biases[class]
    }

    /// Per-class decision values w_c . x + b_c.
    pub fn decision_values(&self, feature: &[f32]) -> Result<Vec<f64>> {
        if feature.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: feature.len(),
            });
        }
        Ok((0..self.num_classes)
            .map(|c| {
                let w = self.class_weights(c);
                let mut acc = self.biases[c] as f64;
                for (wv, xv) in w.iter().zip(feature.iter()) {
                    acc += *wv as f64 * *xv as f64;
                }
                acc
            })
            .collect())
    }
}

/// Argmax of the decision values; ties break to the lowest class index.
pub fn predict(model: &LinearSvmModel, feature: &[f32]) -> Result<usize> {
    let scores = model.decision_values(feature)?;
    let mut best = 0usize;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    Ok(best)
}

fn validate_binary_input(features: &[Vec<f32>], labels: &[i8]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    if features.len() < 2 {
        return Err(Error::InvalidSpec("need at least 2 training points".to_string()));
    }
    let dim = features[0].len();
    for f in features {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("svm features".to_string()));
        }
    }
    if labels.iter().any(|&y| y != 1 && y != -1) {
        return Err(Error::InvalidSpec("binary labels must be +1 or -1".to_string()));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::SingleClass);
    }
    Ok(dim)
}

/// Dual coordinate descent for the binary L1-hinge problem.
pub fn train_binary(
    features: &[Vec<f32>],
    labels: &[i8],
    config: &SvmTrainConfig,
) -> Result<(Vec<f32>, f32)> {
    let (w, b, _) = solve_binary(features, labels, config, false)?;
    Ok((w, b))
}

/// As [`train_binary`], also returning the dual objective
/// 0.5 ||w||^2 - sum(alpha) after every coordinate update (it never
/// increases under exact arithmetic).
pub fn train_binary_traced(
    features: &[Vec<f32>],
    labels: &[i8],
    config: &SvmTrainConfig,
) -> Result<(Vec<f32>, f32, Vec<f64>)> {
    solve_binary(features, labels, config, true)
}

fn solve_binary(
    features: &[Vec<f32>],
    labels: &[i8],
    config: &SvmTrainConfig,
    trace_objective: bool,
) -> Result<(Vec<f32>, f32, Vec<f64>)> {
    config.validate()?;
    let dim = validate_binary_input(features, labels)?;
    let n = features.len();
    let c = config.c;
    let mut rng = SplitMix64::new(config.seed);

    // Augmented weight vector: w[0..dim] plus the regularized bias slot.
    let mut w = vec![0.0f64; dim + 1];
    let mut alpha = vec![0.0f64; n];
    // Q_ii = x_i . x_i + 1 for the augmented feature.
    let qii: Vec<f64> = features
        .iter()
        .map(|x| x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() + 1.0)
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut trace: Vec<f64> = Vec::new();

    for _ in 0..config.max_iter {
        rng.shuffle(&mut order);
        let mut max_violation = 0.0f64;
        for &i in &order {
            let x = &features[i];
            let y = labels[i] as f64;
            let mut dot = w[dim];
            for (wv, xv) in w[..dim].iter().zip(x.iter()) {
                dot += wv * *xv as f64;
            }
            let g = y * dot - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg.abs() > max_violation {
                max_violation = pg.abs();
            }
            if pg.abs() > 1e-14 {
                let old = alpha[i];
                let next = (old - g / qii[i]).clamp(0.0, c);
                let delta = (next - old) * y;
                if delta != 0.0 {
                    alpha[i] = next;
                    for (wv, xv) in w[..dim].iter_mut().zip(x.iter()) {
                        *wv += delta * *xv as f64;
                    }
                    w[dim] += delta;
                }
            }
            if trace_objective {
                let wnorm: f64 = w.iter().map(|v| v * v).sum();
                let asum: f64 = alpha.iter().sum();
                trace.push(0.5 * wnorm - asum);
            }
        }
        if max_violation < config.tolerance {
            break;
        }
    }

    let bias = w[dim] as f32;
    let weights: Vec<f32> = w[..dim].iter().map(|&v| v as f32).collect();
    Ok((weights, bias, trace))
}

/// One-vs-rest: one binary problem per class with the same config and seed.
pub fn train_ovr(
    features: &[Vec<f32>],
    labels: &[usize],
    num_classes: usize,
    config: &SvmTrainConfig,
) -> Result<LinearSvmModel> {
    if num_classes < 2 {
        return Err(Error::InvalidSpec("need at least 2 classes".to_string()));
    }
    let mut weights = Vec::with_capacity(num_classes);
    let mut biases = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let binary: Vec<i8> = labels
            .iter()
            .map(|&l| if l == class { 1 } else { -1 })
            .collect();
        let (w, b) = train_binary(features, &binary, config)?;
        weights.push(w);
        biases.push(b);
    }
    LinearSvmModel::from_parts(weights, biases)
}

/// Pick C from the grid by stratified 3-fold cross-validation; ties go to
/// the smallest C. Deterministic in the seed.
pub fn select_c(
    features: &[Vec<f32>],
    labels: &[usize],
    num_classes: usize,
    c_grid: &[f64],
    base: &SvmTrainConfig,
    seed: u64,
) -> Result<f64> {
    if c_grid.is_empty() {
        return Err(Error::EmptyInput("C grid".to_string()));
    }
    let mut grid: Vec<f64> = c_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite C values"));

    let plan = stratified_kfold(labels, 3, seed)?;
    let mut best: Option<(f64, f64)> = None;
    for &c in &grid {
        let mut total_correct = 0usize;
        let mut total = 0usize;
        for fold in 0..3 {
            let (train_idx, val_idx) = plan.split(fold);
            let train_f: Vec<Vec<f32>> = train_idx.iter().map(|&i| features[i].clone()).collect();
            let train_l: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
            let config = SvmTrainConfig {
                c,
                seed: derive_seed(seed, fold as u64),
                ..base.clone()
            };
            let model = train_ovr(&train_f, &train_l, num_classes, &config)?;
            for &i in &val_idx {
                if predict(&model, &features[i])? == labels[i] {
                    total_correct += 1;
                }
            }
            total += val_idx.len();
        }
        let acc = total_correct as f64 / total as f64;
        match best {
            Some((_, best_acc)) if acc <= best_acc => {}
            _ => best = Some((c, acc)),
        }
    }
    Ok(best.expect("grid nonempty").0)
}

/// Primal objective 0.5 ||w||^2 + 0.5 b^2 + C sum hinge, with the bias
/// regularized exactly as the solver regularizes it.
pub fn primal_objective(
    features: &[Vec<f32>],
    labels: &[i8],
    w: &[f32],
    b: f32,
    c: f64,
) -> f64 {
    let wnorm: f64 = w.iter().map(|&v| v as f64 * v as f64).sum::<f64>() + (b as f64) * (b as f64);
    let mut hinge = 0.0f64;
    for (x, &y) in features.iter().zip(labels.iter()) {
        let mut dot = b as f64;
        for (wv, xv) in w.iter().zip(x.iter()) {
            dot += *wv as f64 * *xv as f64;
        }
        hinge += (1.0 - y as f64 * dot).max(0.0);
    }
    0.5 * wnorm + c * hinge
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> SvmTrainConfig {
        SvmTrainConfig {
            c: 10.0,
            tolerance: 1e-6,
            max_iter: 20_000,
            seed: 3,
        }
    }

    #[test]
    fn two_point_analytic_case() {
        let features = vec![vec![-1.0], vec![1.0]];
        let labels = vec![-1i8, 1];
        let (w, b) = train_binary(&features, &labels, &tight()).unwrap();
        assert!((w[0] - 1.0).abs() < 5e-2, "w = {}", w[0]);
        assert!(b.abs() < 5e-2, "b = {b}");
    }

    #[test]
    fn separable_2d_zero_training_error() {
        let mut rng = SplitMix64::new(4);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10 {
            features.push(vec![rng.next_f32() - 3.0, rng.next_f32()]);
            labels.push(-1i8);
            features.push(vec![rng.next_f32() + 3.0, rng.next_f32()]);
            labels.push(1i8);
        }
        let (w, b) = train_binary(&features, &labels, &tight()).unwrap();
        for (x, &y) in features.iter().zip(labels.iter()) {
            let score = w[0] as f64 * x[0] as f64 + w[1] as f64 * x[1] as f64 + b as f64;
            assert!(score.signum() as i8 == y, "point {x:?} misclassified");
        }
    }

    #[test]
    fn duplicated_points_same_decisions_on_separable_data() {
        let features = vec![
            vec![-2.0, 0.1],
            vec![-1.5, -0.4],
            vec![2.0, 0.3],
            vec![1.7, -0.2],
        ];
        let labels = vec![-1i8, -1, 1, 1];
        let mut doubled_f = features.clone();
        doubled_f.extend(features.iter().cloned());
        let mut doubled_l = labels.clone();
        doubled_l.extend(labels.iter().cloned());

        let cfg = tight();
        let (w1, b1) = train_binary(&features, &labels, &cfg).unwrap();
        let (w2, b2) = train_binary(&doubled_f, &doubled_l, &cfg).unwrap();
        for gx in -6..=6 {
            for gy in -3..=3 {
                let p = [gx as f32 * 0.5, gy as f32 * 0.5];
                let s1 = w1[0] * p[0] + w1[1] * p[1] + b1;
                let s2 = w2[0] * p[0] + w2[1] * p[1] + b2;
                assert_eq!(s1 > 0.0, s2 > 0.0, "probe {p:?}: {s1} vs {s2}");
            }
        }
    }

    #[test]
    fn flipped_labels_negate_decision() {
        let mut rng = SplitMix64::new(8);
        let features: Vec<Vec<f32>> = (0..12)
            .map(|_| vec![rng.next_f32() * 2.0 - 1.0, rng.next_f32() * 2.0 - 1.0])
            .collect();
        let labels: Vec<i8> = (0..12).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let flipped: Vec<i8> = labels.iter().map(|&y| -y).collect();
        let cfg = SvmTrainConfig {
            c: 1.0,
            tolerance: 1e-8,
            max_iter: 50_000,
            seed: 5,
        };
        let (w1, b1) = train_binary(&features, &labels, &cfg).unwrap();
        let (w2, b2) = train_binary(&features, &flipped, &cfg).unwrap();
        for (a, b) in w1.iter().zip(w2.iter()) {
            assert!((a + b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((b1 + b2).abs() < 1e-9);
    }

    #[test]
    fn dual_objective_never_increases() {
        let mut rng = SplitMix64::new(10);
        for seed in 0..5u64 {
            let features: Vec<Vec<f32>> = (0..15)
                .map(|_| vec![rng.next_f32() * 4.0 - 2.0, rng.next_f32() * 4.0 - 2.0])
                .collect();
            let labels: Vec<i8> = (0..15)
                .map(|_| if rng.next_f64() < 0.5 { 1 } else { -1 })
                .collect();
            if !labels.contains(&1) || !labels.contains(&-1) {
                continue;
            }
            let cfg = SvmTrainConfig {
                c: 5.0,
                tolerance: 1e-7,
                max_iter: 200,
                seed,
            };
            let (_, _, trace) = train_binary_traced(&features, &labels, &cfg).unwrap();
            for w in trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()),
                    "dual objective rose: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn single_class_errors() {
        let features = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train_binary(&features, &[1, 1], &SvmTrainConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn non_finite_features_error() {
        let features = vec![vec![f32::INFINITY], vec![1.0]];
        assert!(train_binary(&features, &[1, -1], &SvmTrainConfig::default()).is_err());
    }

    #[test]
    fn ovr_two_classes_matches_binary_sign() {
        let features = vec![vec![-1.5], vec![-1.0], vec![1.0], vec![1.2]];
        let labels = vec![0usize, 0, 1, 1];
        let cfg = tight();
        let model = train_ovr(&features, &labels, 2, &cfg).unwrap();
        let binary: Vec<i8> = labels.iter().map(|&l| if l == 1 { 1 } else { -1 }).collect();
        let (w, b) = train_binary(&features, &binary, &cfg).unwrap();
        for x in &features {
            let s = w[0] * x[0] + b;
            let want = if s > 0.0 { 1 } else { 0 };
            assert_eq!(predict(&model, x).unwrap(), want);
        }
    }

    #[test]
    fn ovr_three_blobs_perfect_training_accuracy() {
        let mut rng = SplitMix64::new(12);
        let centers = [[0.0f32, 0.0], [8.0, 0.0], [0.0, 8.0]];
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..12 {
                features.push(vec![
                    center[0] + rng.next_f32() - 0.5,
                    center[1] + rng.next_f32() - 0.5,
                ]);
                labels.push(c);
            }
        }
        let model = train_ovr(&features, &labels, 3, &tight()).unwrap();
        let correct = features
            .iter()
            .zip(labels.iter())
            .filter(|(x, &l)| predict(&model, x).unwrap() == l)
            .count();
        assert_eq!(correct, features.len());
    }

    #[test]
    fn ovr_label_permutation_symmetry() {
        let mut rng = SplitMix64::new(13);
        let features: Vec<Vec<f32>> = (0..30)
            .map(|i| {
                vec![
                    (i % 3) as f32 * 5.0 + rng.next_f32(),
                    (i % 3) as f32 * -3.0 + rng.next_f32(),
                ]
            })
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        // permute class ids: 0->2, 1->0, 2->1
        let perm = [2usize, 0, 1];
        let permuted: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let cfg = tight();
        let m1 = train_ovr(&features, &labels, 3, &cfg).unwrap();
        let m2 = train_ovr(&features, &permuted, 3, &cfg).unwrap();
        for x in &features {
            let p1 = predict(&m1, x).unwrap();
            let p2 = predict(&m2, x).unwrap();
            assert_eq!(perm[p1], p2);
        }
    }

    #[test]
    fn predict_tie_and_scaling_rules() {
        let model = LinearSvmModel::from_parts(
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![0.0, 0.0, 1.0],
        )
        .unwrap();
        // class 2 strictly max
        assert_eq!(predict(&model, &[1.0, 0.0]).unwrap(), 2);
        // all-equal scores -> class 0
        let flat = LinearSvmModel::from_parts(
            vec![vec![0.0], vec![0.0], vec![0.0]],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap();
        assert_eq!(predict(&flat, &[3.0]).unwrap(), 0);
        // uniform positive rescaling keeps the argmax
        let scaled = LinearSvmModel::from_parts(
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![7.0, 0.0]],
            vec![0.0, 0.0, 7.0],
        )
        .unwrap();
        assert_eq!(predict(&scaled, &[1.0, 0.0]).unwrap(), 2);
        // dim mismatch errors
        assert!(predict(&model, &[1.0]).is_err());
    }

    #[test]
    fn select_c_basics() {
        let mut rng = SplitMix64::new(14);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..9 {
                features.push(vec![
                    c as f32 * 6.0 + rng.next_f32(),
                    rng.next_f32(),
                ]);
                labels.push(c);
            }
        }
        let base = SvmTrainConfig::default();
        // single-value grid returns that value
        let c = select_c(&features, &labels, 2, &[0.42], &base, 7).unwrap();
        assert_eq!(c, 0.42);
        // determinism
        let grid = [0.01, 1.0, 100.0];
        let a = select_c(&features, &labels, 2, &grid, &base, 7).unwrap();
        let b = select_c(&features, &labels, 2, &grid, &base, 7).unwrap();
        assert_eq!(a, b);
        // class smaller than 3 errors
        let few_labels = vec![0usize, 0, 0, 1, 1, 0];
        let few_features: Vec<Vec<f32>> =
            (0..6).map(|i| vec![i as f32, 0.0]).collect();
        assert!(select_c(&few_features, &few_labels, 2, &grid, &base, 7).is_err());
    }

    #[test]
    fn select_c_returns_best_inner_accuracy() {
        // Separable data: compare the winner's inner accuracy against every
        // grid value by recomputation.
        let mut rng = SplitMix64::new(20);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3usize {
            for _ in 0..9 {
                features.push(vec![
                    (c as f32) * 10.0 + rng.next_f32(),
                    (c as f32) * -4.0 + rng.next_f32(),
                ]);
                labels.push(c);
            }
        }
        let base = SvmTrainConfig::default();
        let grid = [0.01, 1.0, 100.0];
        let seed = 5u64;
        let winner = select_c(&features, &labels, 3, &grid, &base, seed).unwrap();

        let inner_acc = |c: f64| -> f64 {
            let plan = stratified_kfold(&labels, 3, seed).unwrap();
            let mut correct = 0;
            let mut total = 0;
            for fold in 0..3 {
                let (tr, va) = plan.split(fold);
                let tf: Vec<Vec<f32>> = tr.iter().map(|&i| features[i].clone()).collect();
                let tl: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
                let cfg = SvmTrainConfig {
                    c,
                    seed: derive_seed(seed, fold as u64),
                    ..base.clone()
                };
                let m = train_ovr(&tf, &tl, 3, &cfg).unwrap();
                for &i in &va {
                    if predict(&m, &features[i]).unwrap() == labels[i] {
                        correct += 1;
                    }
                }
                total += va.len();
            }
            correct as f64 / total as f64
        };
        let winner_acc = inner_acc(winner);
        for &c in &grid {
            assert!(winner_acc >= inner_acc(c) - 1e-12);
        }
    }
}
