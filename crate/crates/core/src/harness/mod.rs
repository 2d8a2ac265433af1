//! The experiment engine: stratified k-fold cross-validation with inner
//! model selection, repeated trials for codebook pipelines (their visual
//! words differ per training fold, so folds are not exchangeable across
//! one split), and aggregation into per-pipeline mean and sample standard
//! deviation.
//!
//! Folds and trials are independent and run on the rayon pool; results
//! are reduced in fold/trial order, so accuracies are identical for any
//! thread count.

mod folds;
mod pipeline;
mod report;

pub use folds::{stratified_kfold, FoldPlan};
pub use pipeline::{
    evaluate_fold, feature_dim, features_with_fit, fit_fold, EmConfig, FeatureSource, FoldFit,
    KmeansConfig, PipelineSpec, PreparedPipeline, SiftParams, SvmSearchConfig,
};
pub use report::{csv_string, parse_csv, report, svg_string, write_csv, write_svg};

use crate::dataset::Dataset;
use crate::net::{infer_shapes, Network};
use crate::rng::derive_seed;
use crate::{Error, Result};
use rayon::prelude::*;
use std::sync::Arc;
use std::time::Instant;

/// One bar of the final chart: a pipeline's accuracy across folds or
/// trials, plus its feature dimension.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub pipeline: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub feature_dim: usize,
    /// Per-fold accuracies (single trial) or per-trial mean accuracies.
    pub per_unit: Vec<f64>,
    pub wall_time: f64,
    /// True when only one unit was run, making the sample std undefined;
    /// the reported std is 0 in that case.
    pub std_degenerate: bool,
}

/// Mean and sample standard deviation (divisor n-1); a single value has
/// undefined std, reported as 0.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fold_seed(run_seed: u64, fold: usize) -> u64 {
    derive_seed(run_seed, fold as u64 + 1)
}

/// One k-fold cross-validation run: everything data-dependent is fitted
/// on each fold's training split only.
pub fn run_cv(
    pipeline: &PipelineSpec,
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<ExperimentResult> {
    let prepared = PreparedPipeline::new(pipeline, dataset)?;
    run_cv_prepared(&prepared, k, seed)
}

fn run_cv_prepared(prepared: &PreparedPipeline<'_>, k: usize, seed: u64) -> Result<ExperimentResult> {
    let start = Instant::now();
    let labels = prepared.dataset.labels();
    let plan = stratified_kfold(&labels, k, seed)?;
    let accuracies: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = plan.split(f);
            let fit = fit_fold(prepared, &train, fold_seed(seed, f))?;
            evaluate_fold(prepared, &fit, &test)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_and_sample_std(&accuracies);
    Ok(ExperimentResult {
        pipeline: prepared.spec.label.clone(),
        mean_accuracy: mean,
        std_accuracy: std,
        feature_dim: feature_dim(prepared.spec)?,
        std_degenerate: accuracies.len() < 2,
        per_unit: accuracies,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Repeated-trial protocol: trial t runs [`run_cv`] with seed
/// `base_seed + t`; the result aggregates the trials' mean accuracies.
pub fn run_trials(
    pipeline: &PipelineSpec,
    dataset: &Dataset,
    trials: usize,
    k: usize,
    base_seed: u64,
) -> Result<ExperimentResult> {
    if trials == 0 {
        return Err(Error::InvalidSpec("need at least one trial".to_string()));
    }
    let start = Instant::now();
    let prepared = PreparedPipeline::new(pipeline, dataset)?;
    let mut trial_means = Vec::with_capacity(trials);
    for t in 0..trials {
        let r = run_cv_prepared(&prepared, k, base_seed + t as u64)?;
        trial_means.push(r.mean_accuracy);
    }
    let (mean, std) = mean_and_sample_std(&trial_means);
    Ok(ExperimentResult {
        pipeline: pipeline.label.clone(),
        mean_accuracy: mean,
        std_accuracy: std,
        feature_dim: feature_dim(pipeline)?,
        std_degenerate: trials < 2,
        per_unit: trial_means,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Sweep several layers of one network: a single shared forward pass per
/// image per fold feeds every requested layer, one fold split is reused
/// across layers, and each layer's SVM trains exactly as it would under
/// [`run_cv`] alone.
pub fn layer_sweep(
    network: &Arc<Network>,
    layer_names: &[String],
    dataset: &Dataset,
    k: usize,
    seed: u64,
    svm: &SvmSearchConfig,
) -> Result<Vec<ExperimentResult>> {
    // Fail before any compute if a layer is unknown.
    for name in layer_names {
        if !network.graph.contains(name) {
            return Err(Error::UnknownLayer {
                name: name.clone(),
                available: network.graph.layer_names().join(", "),
            });
        }
    }
    if layer_names.is_empty() {
        return Err(Error::EmptyInput("layer names".to_string()));
    }
    let labels = dataset.labels();
    let plan = stratified_kfold(&labels, k, seed)?;
    let shape = network.graph.input_shape();
    let (h, w) = (shape[1] as u32, shape[2] as u32);
    let num_layers = layer_names.len();

    struct FoldOutcome {
        accuracies: Vec<f64>,
        shared_secs: f64,
        layer_secs: Vec<f64>,
    }

    let outcomes: Vec<FoldOutcome> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<FoldOutcome> {
            let (train, test) = plan.split(f);
            let shared_start = Instant::now();
            let train_patches: Vec<&crate::dataset::ImagePatch> =
                train.iter().map(|&i| &dataset.patches()[i]).collect();
            let mean_rgb = crate::dataset::compute_mean_rgb(&train_patches, w, h)?;
            let pre = crate::dataset::PreprocessSpec {
                target_width: w,
                target_height: h,
                mean_rgb,
            };
            // One forward pass per patch; tap every requested layer.
            let mut captured: Vec<Vec<Vec<f32>>> = vec![Vec::new(); dataset.len()];
            for (i, patch) in dataset.patches().iter().enumerate() {
                let input = crate::dataset::preprocess(patch, &pre)?;
                let acts = crate::net::forward(&network.graph, &network.weights, &input)?;
                captured[i] = layer_names
                    .iter()
                    .map(|name| {
                        acts.get(name)
                            .expect("layer validated above")
                            .data()
                            .to_vec()
                    })
                    .collect();
            }
            let shared_secs = shared_start.elapsed().as_secs_f64();

            let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let mut accuracies = Vec::with_capacity(num_layers);
            let mut layer_secs = Vec::with_capacity(num_layers);
            #[allow(clippy::needless_range_loop)]
            for li in 0..num_layers {
                let layer_start = Instant::now();
                let train_feats: Vec<Vec<f32>> =
                    train.iter().map(|&i| captured[i][li].clone()).collect();
                let (_, model) = pipeline::train_fold_svm(
                    &train_feats,
                    &train_labels,
                    dataset.num_classes(),
                    svm,
                    fold_seed(seed, f),
                )?;
                let correct = test
                    .iter()
                    .filter(|&&i| {
                        crate::svm::predict(&model, &captured[i][li]).expect("dims align")
                            == labels[i]
                    })
                    .count();
                accuracies.push(correct as f64 / test.len().max(1) as f64);
                layer_secs.push(layer_start.elapsed().as_secs_f64());
            }
            Ok(FoldOutcome {
                accuracies,
                shared_secs,
                layer_secs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let shapes = infer_shapes(&network.graph)?;
    let mut results = Vec::with_capacity(num_layers);
    for (li, name) in layer_names.iter().enumerate() {
        let accs: Vec<f64> = outcomes.iter().map(|o| o.accuracies[li]).collect();
        let (mean, std) = mean_and_sample_std(&accs);
        let shared: f64 = outcomes.iter().map(|o| o.shared_secs).sum::<f64>() / num_layers as f64;
        let own: f64 = outcomes.iter().map(|o| o.layer_secs[li]).sum();
        results.push(ExperimentResult {
            pipeline: name.clone(),
            mean_accuracy: mean,
            std_accuracy: std,
            feature_dim: shapes[name].iter().product(),
            std_degenerate: accs.len() < 2,
            per_unit: accs,
            wall_time: shared + own,
        });
    }
    Ok(results)
}
