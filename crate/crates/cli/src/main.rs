//! `texbench` — run texture-classification benchmarks from a config file.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use config::{ExperimentConfig, WeightsSpec};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use texbench_core::dataset::{generate_synthetic, save_patch_png};
use texbench_core::harness::{
    self, layer_sweep, run_cv, run_trials, ExperimentResult, FeatureSource, PipelineSpec,
};
use texbench_core::net::{infer_shapes, load_arch, Network};

#[derive(Parser)]
#[command(name = "texbench", version, about = "Texture patch classification benchmark")]
struct Cli {
    /// Worker threads for folds and trials (1 = fully sequential).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Override the experiment base seed (and the synthetic dataset seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the configured synthetic dataset to a class-per-directory
    /// tree of PNGs plus a manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every configured pipeline under cross-validation and write the
    /// CSV and SVG reports.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the layer table (name, kind, output shape, flattened dim) of
    /// an architecture file.
    Inspect {
        arch: PathBuf,
    },
    /// Re-render the SVG chart from an existing results CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .context("initializing worker pool")?;
    match &cli.command {
        Command::Generate { config } => cmd_generate(config, cli.seed),
        Command::Run { config } => cmd_run(config, cli.seed),
        Command::Inspect { arch } => cmd_inspect(arch),
        Command::Report { csv, svg } => cmd_report(csv, svg),
    }
}

fn cmd_generate(config_path: &Path, seed: Option<u64>) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let dir = config
        .output
        .dir
        .clone()
        .context("output.dir required for generate")?;
    let spec = config.synthetic_spec(seed)?;
    let dataset = generate_synthetic(&spec)?;

    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = String::new();
    manifest.push_str("# texbench dataset manifest\n");
    manifest.push_str(&format!("# seed: {}\n", spec.seed));
    manifest.push_str(&format!("# classes: {}\n", spec.num_classes));
    manifest.push_str(&format!("# patches_per_class: {}\n", spec.patches_per_class));

    for class in dataset.class_names() {
        std::fs::create_dir_all(dir.join(class))
            .with_context(|| format!("creating class directory {class}"))?;
    }
    for patch in dataset.patches() {
        let rel = format!("{}.png", patch.id);
        let path = dir.join(&rel);
        save_patch_png(patch, &path)?;
        let bytes = std::fs::read(&path)?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        manifest.push_str(&format!("{rel} {hex}\n"));
    }
    let manifest_path = dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!(
        "wrote {} patches in {} classes to {}",
        dataset.len(),
        dataset.num_classes(),
        dir.display()
    );
    Ok(())
}

fn cmd_run(config_path: &Path, seed: Option<u64>) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let base_seed = seed.unwrap_or(config.cv.base_seed);
    let dataset = config.build_dataset(seed)?;

    // Resolve every pipeline up front so bad configs (missing arch files,
    // unknown layers) fail before any training starts.
    let mut networks: HashMap<(PathBuf, WeightsSpec), Arc<Network>> = HashMap::new();
    let mut resolved: Vec<PipelineSpec> = Vec::with_capacity(config.pipelines.len());
    for p in &config.pipelines {
        let spec = p
            .resolve(&mut networks)
            .with_context(|| format!("pipeline {}", p.label()))?;
        resolved.push(spec);
    }

    // Group CNN pipelines sharing one network and SVM config into layer
    // sweeps so each image is forwarded once per fold for all swept layers.
    let mut results: Vec<Option<ExperimentResult>> = vec![None; resolved.len()];
    let mut sweeps: Vec<(Arc<Network>, Vec<usize>)> = Vec::new();
    for (i, spec) in resolved.iter().enumerate() {
        if let FeatureSource::CnnLayer { network, .. } = &spec.source {
            let slot = sweeps.iter_mut().find(|(n, indices)| {
                Arc::ptr_eq(n, network) && resolved[indices[0]].svm == spec.svm
            });
            match slot {
                Some((_, indices)) => indices.push(i),
                None => sweeps.push((network.clone(), vec![i])),
            }
        }
    }

    for (network, indices) in &sweeps {
        let layers: Vec<String> = indices
            .iter()
            .map(|&i| match &resolved[i].source {
                FeatureSource::CnnLayer { layer, .. } => layer.clone(),
                _ => unreachable!(),
            })
            .collect();
        let svm = resolved[indices[0]].svm.clone();
        let sweep = layer_sweep(network, &layers, &dataset, config.cv.folds, base_seed, &svm)
            .with_context(|| format!("pipeline {}", resolved[indices[0]].label))?;
        for (&i, mut r) in indices.iter().zip(sweep) {
            r.pipeline = resolved[i].label.clone();
            results[i] = Some(r);
        }
    }

    for (i, spec) in resolved.iter().enumerate() {
        if results[i].is_some() {
            continue;
        }
        let r = if spec.source.uses_codebook() {
            run_trials(spec, &dataset, config.cv.trials, config.cv.folds, base_seed)
        } else {
            run_cv(spec, &dataset, config.cv.folds, base_seed)
        }
        .with_context(|| format!("pipeline {}", spec.label))?;
        results[i] = Some(r);
    }
    let results: Vec<ExperimentResult> = results.into_iter().map(|r| r.unwrap()).collect();

    for r in &results {
        println!(
            "{:<24} acc {:.4} +/- {:.4}  dim {:>8}  {:.2}s",
            r.pipeline, r.mean_accuracy, r.std_accuracy, r.feature_dim, r.wall_time
        );
    }

    let mut meta = vec![
        format!("base_seed={base_seed}"),
        format!("folds={}", config.cv.folds),
        format!("trials={}", config.cv.trials),
        format!("dataset={}", config.dataset.source),
        format!("patches={}", dataset.len()),
    ];
    if config.dataset.source == "synthetic" {
        if let Ok(spec) = config.synthetic_spec(seed) {
            meta.push(format!("dataset_seed={}", spec.seed));
        }
    }
    for p in &config.pipelines {
        if let Some(w) = &p.weights {
            meta.push(format!("weights[{}]={w}", p.label()));
        }
    }
    if let Some(csv) = &config.output.csv {
        harness::write_csv(&results, &meta, csv)?;
        println!("wrote {}", csv.display());
    }
    if let Some(svg) = &config.output.svg {
        harness::write_svg(&results, svg)?;
        println!("wrote {}", svg.display());
    }
    Ok(())
}

fn cmd_inspect(arch: &Path) -> Result<()> {
    use std::io::Write;
    let graph = load_arch(arch)?;
    let shapes = infer_shapes(&graph)?;
    let mut out = std::io::stdout().lock();
    let mut emit = |line: String| writeln!(out, "{line}").is_ok();
    if !emit(format!(
        "{:<28} {:<8} {:>16} {:>10}",
        "layer", "kind", "shape", "dim"
    )) {
        return Ok(()); // downstream closed the pipe
    }
    for node in graph.nodes() {
        let shape = &shapes[&node.name];
        let dim: usize = shape.iter().product();
        let shape_str = shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        if !emit(format!(
            "{:<28} {:<8} {:>16} {:>10}",
            node.name,
            node.kind.name(),
            shape_str,
            dim
        )) {
            return Ok(());
        }
    }
    Ok(())
}

fn cmd_report(csv: &Path, svg: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv)
        .with_context(|| format!("reading {}", csv.display()))?;
    let results = harness::parse_csv(&text)?;
    if results.is_empty() {
        bail!("{} contains no result rows", csv.display());
    }
    harness::write_svg(&results, svg)?;
    println!("wrote {}", svg.display());
    Ok(())
}
