//! Experiment configuration file.
//!
//! A single TOML document describes the dataset source, cross-validation
//! parameters, output paths and the list of pipelines; the full grammar
//! is documented in the repository README. No environment variables are
//! consulted.

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use texbench_core::dataset::{self, Dataset, SyntheticSpec, TextureFamily};
use texbench_core::harness::{
    EmConfig, FeatureSource, KmeansConfig, PipelineSpec, SiftParams, SvmSearchConfig,
};
use texbench_core::net::{load_network, load_arch, seeded_weights, Network};
use texbench_core::sift::DenseSamplingSpec;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub cv: CvConfig,
    pub output: OutputConfig,
    #[serde(default, rename = "pipeline")]
    pub pipelines: Vec<PipelineConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: String,
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub patches_per_class: usize,
    #[serde(default = "default_size_min")]
    pub size_min: u32,
    #[serde(default = "default_size_max")]
    pub size_max: u32,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default, rename = "class")]
    pub classes: Vec<ClassConfig>,
}

fn default_size_min() -> u32 {
    150
}
fn default_size_max() -> u32 {
    600
}
fn default_noise_sigma() -> f64 {
    8.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub family: String,
    pub angle: Option<f64>,
    pub period: Option<f64>,
    pub cell: Option<f64>,
    pub scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            trials: 10,
            base_seed: 0,
        }
    }
}

fn default_folds() -> usize {
    10
}
fn default_trials() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    /// Target directory for `generate`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub kind: String,
    pub label: Option<String>,
    // raw-pixels
    pub width: Option<u32>,
    pub height: Option<u32>,
    // cnn-layer
    pub arch: Option<PathBuf>,
    pub weights: Option<String>,
    pub layer: Option<String>,
    // codebook pipelines
    pub words: Option<usize>,
    pub components: Option<usize>,
    #[serde(default)]
    pub sift: SiftConfig,
    #[serde(default)]
    pub kmeans: KmeansToml,
    #[serde(default)]
    pub em: EmToml,
    pub svm: Option<SvmToml>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiftConfig {
    pub step: Option<u32>,
    pub scales: Option<Vec<u32>>,
    pub margin: Option<u32>,
    pub max_fit_descriptors: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmeansToml {
    pub max_iter: Option<usize>,
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmToml {
    pub max_iter: Option<usize>,
    pub rel_tol: Option<f64>,
    pub variance_floor: Option<f32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmToml {
    pub c_grid: Option<Vec<f64>>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if config.pipelines.is_empty() {
            bail!("config declares no pipelines");
        }
        Ok(config)
    }

    pub fn synthetic_spec(&self, seed_override: Option<u64>) -> Result<SyntheticSpec> {
        let synth = self
            .dataset
            .synthetic
            .as_ref()
            .context("dataset.synthetic section required")?;
        let families = if synth.classes.is_empty() {
            TextureFamily::default_set(synth.num_classes)
        } else {
            synth
                .classes
                .iter()
                .map(parse_family)
                .collect::<Result<Vec<_>>>()?
        };
        Ok(SyntheticSpec {
            num_classes: synth.num_classes,
            patches_per_class: synth.patches_per_class,
            size_range: [synth.size_min, synth.size_max],
            families,
            noise_sigma: synth.noise_sigma,
            seed: seed_override.unwrap_or(synth.seed),
        })
    }

    /// Materialize the dataset: load a directory or synthesize in memory.
    pub fn build_dataset(&self, seed_override: Option<u64>) -> Result<Dataset> {
        match self.dataset.source.as_str() {
            "directory" => {
                let path = self
                    .dataset
                    .path
                    .as_ref()
                    .context("dataset.path required for directory source")?;
                Ok(dataset::load_dataset(path)?)
            }
            "synthetic" => Ok(dataset::generate_synthetic(&self.synthetic_spec(seed_override)?)?),
            other => bail!("unknown dataset source {other:?} (use directory|synthetic)"),
        }
    }
}

fn parse_family(c: &ClassConfig) -> Result<TextureFamily> {
    Ok(match c.family.as_str() {
        "grating" => TextureFamily::OrientedGrating {
            angle_deg: c.angle.unwrap_or(25.0),
            period: c.period.unwrap_or(18.0),
        },
        "checker" => TextureFamily::Checker {
            cell: c.cell.unwrap_or(12.0),
        },
        "blobs" => TextureFamily::BlobNoise {
            scale: c.scale.unwrap_or(14.0),
        },
        other => bail!("unknown texture family {other:?} (use grating|checker|blobs)"),
    })
}

/// How a pipeline's network weights are obtained.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum WeightsSpec {
    Seed(u64),
    File(PathBuf),
}

pub fn parse_weights_spec(s: &str) -> Result<WeightsSpec> {
    if let Some(seed) = s.strip_prefix("seed:") {
        Ok(WeightsSpec::Seed(
            seed.parse::<u64>().context("weights seed must be a u64")?,
        ))
    } else {
        Ok(WeightsSpec::File(PathBuf::from(s)))
    }
}

pub fn load_network_for(arch: &Path, weights: &WeightsSpec) -> Result<Arc<Network>> {
    let network = match weights {
        WeightsSpec::File(path) => load_network(arch, path)?,
        WeightsSpec::Seed(seed) => {
            let graph = load_arch(arch)?;
            let weights = seeded_weights(&graph, *seed);
            Network { graph, weights }
        }
    };
    Ok(Arc::new(network))
}

impl PipelineConfig {
    fn sift_params(&self) -> SiftParams {
        let defaults = DenseSamplingSpec::default();
        let sampling = DenseSamplingSpec {
            step: self.sift.step.unwrap_or(defaults.step),
            patch_sizes: self
                .sift
                .scales
                .clone()
                .unwrap_or(defaults.patch_sizes),
            boundary_margin: self.sift.margin.unwrap_or(defaults.boundary_margin),
        };
        SiftParams {
            sampling,
            max_fit_descriptors: self
                .sift
                .max_fit_descriptors
                .unwrap_or(SiftParams::default().max_fit_descriptors),
        }
    }

    fn kmeans_config(&self) -> KmeansConfig {
        let d = KmeansConfig::default();
        KmeansConfig {
            max_iter: self.kmeans.max_iter.unwrap_or(d.max_iter),
            rel_tol: self.kmeans.rel_tol.unwrap_or(d.rel_tol),
        }
    }

    fn em_config(&self) -> EmConfig {
        let d = EmConfig::default();
        EmConfig {
            max_iter: self.em.max_iter.unwrap_or(d.max_iter),
            rel_tol: self.em.rel_tol.unwrap_or(d.rel_tol),
            variance_floor: self.em.variance_floor.unwrap_or(d.variance_floor),
        }
    }

    fn svm_config(&self) -> SvmSearchConfig {
        let d = SvmSearchConfig::default();
        match &self.svm {
            None => d,
            Some(s) => SvmSearchConfig {
                c_grid: s.c_grid.clone().unwrap_or(d.c_grid),
                tolerance: s.tolerance.unwrap_or(d.tolerance),
                max_iter: s.max_iter.unwrap_or(d.max_iter),
            },
        }
    }

    pub fn default_label(&self) -> String {
        match self.kind.as_str() {
            "raw-pixels" => format!(
                "raw-{}x{}",
                self.width.unwrap_or(0),
                self.height.unwrap_or(0)
            ),
            "cnn-layer" => {
                let stem = self
                    .arch
                    .as_ref()
                    .and_then(|p| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "net".to_string());
                format!("{stem}:{}", self.layer.clone().unwrap_or_default())
            }
            "bovw" => format!("bovw-{}", self.words.unwrap_or(0)),
            "vlad" => format!("vlad-{}", self.words.unwrap_or(0)),
            "fisher" => format!("fisher-{}", self.components.unwrap_or(0)),
            other => other.to_string(),
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.default_label())
    }

    /// Resolve into a harness pipeline. CNN networks are loaded via
    /// `networks` so pipelines sharing an (arch, weights) pair share one
    /// instance.
    pub fn resolve(
        &self,
        networks: &mut std::collections::HashMap<(PathBuf, WeightsSpec), Arc<Network>>,
    ) -> Result<PipelineSpec> {
        let source = match self.kind.as_str() {
            "raw-pixels" => FeatureSource::RawPixels {
                width: self.width.context("raw-pixels needs width")?,
                height: self.height.context("raw-pixels needs height")?,
            },
            "cnn-layer" => {
                let arch = self.arch.clone().context("cnn-layer needs arch")?;
                let weights =
                    parse_weights_spec(self.weights.as_deref().context("cnn-layer needs weights")?)?;
                let layer = self.layer.clone().context("cnn-layer needs layer")?;
                let key = (arch.clone(), weights.clone());
                let network = match networks.get(&key) {
                    Some(n) => n.clone(),
                    None => {
                        let n = load_network_for(&arch, &weights)?;
                        networks.insert(key, n.clone());
                        n
                    }
                };
                FeatureSource::CnnLayer { network, layer }
            }
            "bovw" => FeatureSource::Bovw {
                words: self.words.context("bovw needs words")?,
                sift: self.sift_params(),
                kmeans: self.kmeans_config(),
            },
            "vlad" => FeatureSource::Vlad {
                words: self.words.context("vlad needs words")?,
                sift: self.sift_params(),
                kmeans: self.kmeans_config(),
            },
            "fisher" => FeatureSource::Fisher {
                components: self.components.context("fisher needs components")?,
                sift: self.sift_params(),
                em: self.em_config(),
            },
            other => bail!("unknown pipeline kind {other:?}"),
        };
        let spec = PipelineSpec {
            label: self.label(),
            source,
            svm: self.svm_config(),
        };
        spec.validate()?;
        Ok(spec)
    }
}
