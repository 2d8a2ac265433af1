//! Pipeline definitions plus the per-fold fit/evaluate machinery.
//!
//! Leakage control is structural: [`fit_fold`] receives training indices
//! only, and everything data-dependent (mean RGB, codebook, GMM, the
//! selected C, the SVM itself) lives in the returned [`FoldFit`]. Test
//! patches are only ever touched through [`features_with_fit`].

use crate::codebook::{gmm_fit_em, kmeans_fit, Codebook, GmmModel};
use crate::dataset::{compute_mean_rgb, preprocess, Dataset, PreprocessSpec};
use crate::encode::{encode_bovw, encode_fisher, encode_vlad, FeatureVector, Provenance};
use crate::net::{extract_feature, forward, infer_shapes, Network};
use crate::rng::{derive_seed, SplitMix64};
use crate::sift::{extract_dense_sift, DenseSamplingSpec};
use crate::svm::{predict, select_c, train_ovr, LinearSvmModel, SvmTrainConfig};
use crate::{Error, Result};
use std::sync::Arc;

/// Dense SIFT parameters for codebook pipelines, plus the cap on how many
/// training descriptors the codebook/GMM fit may consume (a seeded
/// subsample keeps desk-scale fits fast without touching test data).
#[derive(Debug, Clone, PartialEq)]
pub struct SiftParams {
    pub sampling: DenseSamplingSpec,
    pub max_fit_descriptors: usize,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            sampling: DenseSamplingSpec::default(),
            max_fit_descriptors: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        KmeansConfig {
            max_iter: 100,
            rel_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub variance_floor: f32,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 100,
            rel_tol: 1e-5,
            variance_floor: 1e-4,
        }
    }
}

/// SVM settings shared by every fold: the C grid for the inner 3-fold
/// search plus solver knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSearchConfig {
    pub c_grid: Vec<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmSearchConfig {
    fn default() -> Self {
        SvmSearchConfig {
            c_grid: vec![1e-2, 1e-1, 1.0, 10.0, 100.0],
            tolerance: 0.1,
            max_iter: 1000,
        }
    }
}

/// What to classify: one feature source per experiment bar.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    /// The preprocessed image itself, resized and mean-subtracted.
    RawPixels { width: u32, height: u32 },
    /// A named layer of a fixed network.
    CnnLayer { network: Arc<Network>, layer: String },
    Bovw {
        words: usize,
        sift: SiftParams,
        kmeans: KmeansConfig,
    },
    Vlad {
        words: usize,
        sift: SiftParams,
        kmeans: KmeansConfig,
    },
    Fisher {
        components: usize,
        sift: SiftParams,
        em: EmConfig,
    },
}

impl FeatureSource {
    /// Codebook pipelines rerun under the repeated-trial protocol; CNN and
    /// raw-pixel pipelines are deterministic given their weights.
    pub fn uses_codebook(&self) -> bool {
        matches!(
            self,
            FeatureSource::Bovw { .. } | FeatureSource::Vlad { .. } | FeatureSource::Fisher { .. }
        )
    }

    fn sift_params(&self) -> Option<&SiftParams> {
        match self {
            FeatureSource::Bovw { sift, .. } | FeatureSource::Vlad { sift, .. } => Some(sift),
            FeatureSource::Fisher { sift, .. } => Some(sift),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub label: String,
    pub source: FeatureSource,
    pub svm: SvmSearchConfig,
}

impl PipelineSpec {
    pub fn new(label: impl Into<String>, source: FeatureSource) -> Self {
        PipelineSpec {
            label: label.into(),
            source,
            svm: SvmSearchConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.svm.c_grid.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "pipeline {}: empty C grid",
                self.label
            )));
        }
        match &self.source {
            FeatureSource::RawPixels { width, height } => {
                if *width < 8 || *height < 8 {
                    return Err(Error::InvalidSpec(format!(
                        "pipeline {}: raw-pixel target too small",
                        self.label
                    )));
                }
            }
            FeatureSource::CnnLayer { network, layer } => {
                if !network.graph.contains(layer) {
                    return Err(Error::UnknownLayer {
                        name: layer.clone(),
                        available: network.graph.layer_names().join(", "),
                    });
                }
            }
            FeatureSource::Bovw { words, sift, .. } | FeatureSource::Vlad { words, sift, .. } => {
                if *words == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "pipeline {}: need at least one visual word",
                        self.label
                    )));
                }
                sift.sampling.validate()?;
            }
            FeatureSource::Fisher { components, sift, em } => {
                if *components == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "pipeline {}: need at least one mixture component",
                        self.label
                    )));
                }
                if em.variance_floor <= 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "pipeline {}: variance floor must be positive",
                        self.label
                    )));
                }
                sift.sampling.validate()?;
            }
        }
        Ok(())
    }
}

/// Dataset-wide precomputation that does not depend on fold membership:
/// dense SIFT descriptors are a pure function of each patch, so they are
/// extracted once and shared across folds and trials.
pub struct PreparedPipeline<'a> {
    pub spec: &'a PipelineSpec,
    pub dataset: &'a Dataset,
    descriptors: Option<Vec<Vec<Vec<f32>>>>,
}

impl<'a> PreparedPipeline<'a> {
    pub fn new(spec: &'a PipelineSpec, dataset: &'a Dataset) -> Result<Self> {
        spec.validate()?;
        let descriptors = spec.source.sift_params().map(|params| {
            use rayon::prelude::*;
            dataset
                .patches()
                .par_iter()
                .map(|p| {
                    extract_dense_sift(p, &params.sampling)
                        .into_iter()
                        .map(|d| d.vector)
                        .collect()
                })
                .collect()
        });
        Ok(PreparedPipeline {
            spec,
            dataset,
            descriptors,
        })
    }

    fn descriptors_of(&self, index: usize) -> &[Vec<f32>] {
        &self.descriptors.as_ref().expect("codebook pipeline")[index]
    }
}

/// Everything fitted on one training fold.
#[derive(Debug, Clone)]
pub struct FoldFit {
    pub mean_rgb: Option<[f32; 3]>,
    pub codebook: Option<Codebook>,
    pub gmm: Option<GmmModel>,
    pub selected_c: f64,
    pub model: LinearSvmModel,
    pub feature_dim: usize,
}

// Salts for the independent random streams inside one fold context.
const SALT_SUBSAMPLE: u64 = 0x5eed_0001;
const SALT_CODEBOOK: u64 = 0x5eed_0002;
const SALT_SELECT: u64 = 0x5eed_0003;
const SALT_FINAL: u64 = 0x5eed_0004;

/// Fit every data-dependent stage on the training indices only.
pub fn fit_fold(
    prepared: &PreparedPipeline<'_>,
    train_idx: &[usize],
    fold_seed: u64,
) -> Result<FoldFit> {
    let dataset = prepared.dataset;
    let spec = prepared.spec;
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| dataset.patches()[i].label).collect();

    let stage: FittedStage = match &spec.source {
        FeatureSource::RawPixels { width, height } => {
            let patches: Vec<&crate::dataset::ImagePatch> =
                train_idx.iter().map(|&i| &dataset.patches()[i]).collect();
            let mean_rgb = compute_mean_rgb(&patches, *width, *height)?;
            FittedStage::Raw {
                spec: PreprocessSpec {
                    target_width: *width,
                    target_height: *height,
                    mean_rgb,
                },
            }
        }
        FeatureSource::CnnLayer { network, layer } => {
            let shape = network.graph.input_shape();
            let (h, w) = (shape[1] as u32, shape[2] as u32);
            let patches: Vec<&crate::dataset::ImagePatch> =
                train_idx.iter().map(|&i| &dataset.patches()[i]).collect();
            let mean_rgb = compute_mean_rgb(&patches, w, h)?;
            FittedStage::Cnn {
                network: network.clone(),
                layer: layer.clone(),
                spec: PreprocessSpec {
                    target_width: w,
                    target_height: h,
                    mean_rgb,
                },
            }
        }
        FeatureSource::Bovw { words, sift, kmeans }
        | FeatureSource::Vlad { words, sift, kmeans } => {
            let sample = pooled_training_sample(prepared, train_idx, sift, fold_seed);
            let book = kmeans_fit(
                &sample,
                *words,
                derive_seed(fold_seed, SALT_CODEBOOK),
                kmeans.max_iter,
                kmeans.rel_tol,
            )?;
            let vlad = matches!(spec.source, FeatureSource::Vlad { .. });
            FittedStage::Book { book, vlad }
        }
        FeatureSource::Fisher { components, sift, em } => {
            let sample = pooled_training_sample(prepared, train_idx, sift, fold_seed);
            let gmm = gmm_fit_em(
                &sample,
                *components,
                derive_seed(fold_seed, SALT_CODEBOOK),
                em.max_iter,
                em.rel_tol,
                em.variance_floor,
            )?;
            FittedStage::Mixture { gmm }
        }
    };
    let features = stage.features(prepared, train_idx)?;

    let feature_dim = features.first().map(|f| f.dim()).unwrap_or(0);
    let raw_features: Vec<Vec<f32>> = features.into_iter().map(|f| f.into_values()).collect();
    let (selected_c, model) = train_fold_svm(
        &raw_features,
        &train_labels,
        dataset.num_classes(),
        &spec.svm,
        fold_seed,
    )?;

    let (mean_rgb, codebook, gmm) = match &stage {
        FittedStage::Raw { spec } => (Some(spec.mean_rgb), None, None),
        FittedStage::Cnn { spec, .. } => (Some(spec.mean_rgb), None, None),
        FittedStage::Book { book, .. } => (None, Some(book.clone()), None),
        FittedStage::Mixture { gmm } => (None, None, Some(gmm.clone())),
    };
    Ok(FoldFit {
        mean_rgb,
        codebook,
        gmm,
        selected_c,
        model,
        feature_dim,
    })
}

/// The fold-fitted feature extractor.
enum FittedStage {
    Raw {
        spec: PreprocessSpec,
    },
    Cnn {
        network: Arc<Network>,
        layer: String,
        spec: PreprocessSpec,
    },
    Book {
        book: Codebook,
        vlad: bool,
    },
    Mixture {
        gmm: GmmModel,
    },
}

impl FittedStage {
    /// Features for many patches, computed in parallel in index order.
    fn features(
        &self,
        prepared: &PreparedPipeline<'_>,
        indices: &[usize],
    ) -> Result<Vec<FeatureVector>> {
        use rayon::prelude::*;
        indices
            .par_iter()
            .map(|&i| self.feature(prepared, i))
            .collect()
    }

    fn feature(&self, prepared: &PreparedPipeline<'_>, index: usize) -> Result<FeatureVector> {
        let patch = &prepared.dataset.patches()[index];
        match self {
            FittedStage::Raw { spec } => {
                let t = preprocess(patch, spec)?;
                Ok(FeatureVector::new(t.into_data(), Provenance::Raw))
            }
            FittedStage::Cnn { network, layer, spec } => {
                let input = preprocess(patch, spec)?;
                let acts = forward(&network.graph, &network.weights, &input)?;
                extract_feature(&network.graph, &acts, layer)
            }
            FittedStage::Book { book, vlad } => {
                let descs = prepared.descriptors_of(index);
                if *vlad {
                    encode_vlad(book, descs)
                } else {
                    encode_bovw(book, descs)
                }
            }
            FittedStage::Mixture { gmm } => encode_fisher(gmm, prepared.descriptors_of(index)),
        }
    }
}

/// Inner C selection plus the final one-vs-rest fit, with the random
/// streams derived from the fold seed. Shared by [`fit_fold`] and the
/// layer sweep so a layer swept alongside others trains exactly as it
/// would alone.
pub(crate) fn train_fold_svm(
    features: &[Vec<f32>],
    labels: &[usize],
    num_classes: usize,
    svm: &SvmSearchConfig,
    fold_seed: u64,
) -> Result<(f64, LinearSvmModel)> {
    let base = SvmTrainConfig {
        c: 1.0,
        tolerance: svm.tolerance,
        max_iter: svm.max_iter,
        seed: derive_seed(fold_seed, SALT_FINAL),
    };
    let selected_c = select_c(
        features,
        labels,
        num_classes,
        &svm.c_grid,
        &base,
        derive_seed(fold_seed, SALT_SELECT),
    )?;
    let model = train_ovr(
        features,
        labels,
        num_classes,
        &SvmTrainConfig {
            c: selected_c,
            ..base
        },
    )?;
    Ok((selected_c, model))
}

/// Pool the training folds' descriptors and subsample to the configured
/// cap with a fold-local seed.
fn pooled_training_sample(
    prepared: &PreparedPipeline<'_>,
    train_idx: &[usize],
    sift: &SiftParams,
    fold_seed: u64,
) -> Vec<Vec<f32>> {
    let mut pool: Vec<&Vec<f32>> = Vec::new();
    for &i in train_idx {
        for d in prepared.descriptors_of(i) {
            pool.push(d);
        }
    }
    if pool.len() <= sift.max_fit_descriptors {
        return pool.into_iter().cloned().collect();
    }
    let mut rng = SplitMix64::new(derive_seed(fold_seed, SALT_SUBSAMPLE));
    rng.sample_indices(pool.len(), sift.max_fit_descriptors)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect()
}

/// Accuracy of a fitted fold on the given (test) indices.
pub fn evaluate_fold(
    prepared: &PreparedPipeline<'_>,
    fit: &FoldFit,
    test_idx: &[usize],
) -> Result<f64> {
    let stage = rebuild_stage(prepared, fit)?;
    let features = stage.features(prepared, test_idx)?;
    let mut correct = 0usize;
    for (&i, f) in test_idx.iter().zip(features.iter()) {
        if predict(&fit.model, f.values())? == prepared.dataset.patches()[i].label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_idx.len().max(1) as f64)
}

/// Feature of a single patch under a fitted fold (used by tests and by
/// the leakage canary).
pub fn features_with_fit(
    prepared: &PreparedPipeline<'_>,
    fit: &FoldFit,
    index: usize,
) -> Result<FeatureVector> {
    rebuild_stage(prepared, fit)?.feature(prepared, index)
}

fn rebuild_stage(prepared: &PreparedPipeline<'_>, fit: &FoldFit) -> Result<FittedStage> {
    Ok(match &prepared.spec.source {
        FeatureSource::RawPixels { width, height } => FittedStage::Raw {
            spec: PreprocessSpec {
                target_width: *width,
                target_height: *height,
                mean_rgb: fit.mean_rgb.expect("raw fit carries mean rgb"),
            },
        },
        FeatureSource::CnnLayer { network, layer } => {
            let shape = network.graph.input_shape();
            FittedStage::Cnn {
                network: network.clone(),
                layer: layer.clone(),
                spec: PreprocessSpec {
                    target_width: shape[2] as u32,
                    target_height: shape[1] as u32,
                    mean_rgb: fit.mean_rgb.expect("cnn fit carries mean rgb"),
                },
            }
        }
        FeatureSource::Bovw { .. } => FittedStage::Book {
            book: fit.codebook.clone().expect("bovw fit carries codebook"),
            vlad: false,
        },
        FeatureSource::Vlad { .. } => FittedStage::Book {
            book: fit.codebook.clone().expect("vlad fit carries codebook"),
            vlad: true,
        },
        FeatureSource::Fisher { .. } => FittedStage::Mixture {
            gmm: fit.gmm.clone().expect("fisher fit carries gmm"),
        },
    })
}

/// Flattened feature length this pipeline will produce (for reporting).
pub fn feature_dim(spec: &PipelineSpec) -> Result<usize> {
    Ok(match &spec.source {
        FeatureSource::RawPixels { width, height } => 3 * (*width as usize) * (*height as usize),
        FeatureSource::CnnLayer { network, layer } => {
            let shapes = infer_shapes(&network.graph)?;
            shapes
                .get(layer)
                .ok_or_else(|| Error::UnknownLayer {
                    name: layer.clone(),
                    available: network.graph.layer_names().join(", "),
                })?
                .iter()
                .product()
        }
        FeatureSource::Bovw { words, .. } => *words,
        FeatureSource::Vlad { words, .. } => words * crate::sift::DESCRIPTOR_DIM,
        FeatureSource::Fisher { components, .. } => 2 * components * crate::sift::DESCRIPTOR_DIM,
    })
}
