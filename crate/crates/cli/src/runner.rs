//! Executes one (variant, seed) run and writes its outputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use demp_core::data::{load_idx_dir, subset, synth_blobs, Dataset};
use demp_core::engine::{csv_header, overlap_ratio, train_demp, PruneReport, TrainData, TrainOutcome};
use demp_core::optim::Optimizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DataConfig, Variant};

/// Datasets are resolved relative to the config file's directory.
pub fn load_data(variant: &Variant, config_dir: &Path) -> Result<(Dataset, Option<Dataset>), String> {
    match &variant.config.data {
        DataConfig::Mnist { path, subset: n, train_size, split_seed, .. } => {
            let dir = if path.is_absolute() { path.clone() } else { config_dir.join(path) };
            let full = load_idx_dir(&dir).map_err(|e| e.to_string())?;
            let picked = subset(&full, *n, *split_seed).map_err(|e| format!("data.subset: {e}"))?;
            let (train, eval) = picked.split(*train_size, *split_seed).map_err(|e| format!("data.train_size: {e}"))?;
            Ok((train, Some(eval)))
        }
        DataConfig::Blobs { classes, per_class, dim, separation, blob_seed, eval_fraction, .. } => {
            let ds = synth_blobs(*classes, *per_class, *dim, *separation, *blob_seed).map_err(|e| e.to_string())?;
            if *eval_fraction <= 0.0 {
                return Ok((ds.clone(), Some(ds)));
            }
            let n_train = ((1.0 - eval_fraction) * ds.len() as f64).round() as usize;
            let (train, eval) = ds.split(n_train, *blob_seed).map_err(|e| format!("data.eval_fraction: {e}"))?;
            Ok((train, Some(eval)))
        }
    }
}

pub fn run_id(variant: &Variant, seed: u64) -> String {
    if variant.label.is_empty() {
        format!("{}-seed{seed}", variant.config.name)
    } else {
        format!("{}-{}-seed{seed}", variant.config.name, variant.label)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapPoint {
    pub step: u64,
    pub previous_step: u64,
    /// `null` when either checkpoint has no inactive units.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalMetrics {
    pub step: u64,
    pub train_loss: f64,
    pub eval_accuracy: Option<f64>,
    pub neuron_sparsity: f64,
    pub weight_sparsity: f64,
    pub flops_estimate: u64,
    pub dead_counts: Vec<usize>,
    pub param_count: usize,
    pub layer_widths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub run_id: String,
    pub config_name: &'a str,
    pub variant: &'a str,
    pub seed: u64,
    pub config_hash: &'a str,
    pub steps_completed: usize,
    pub aborted: Option<String>,
    #[serde(rename = "final")]
    pub final_metrics: Option<FinalMetrics>,
    pub overlap_trace: Vec<OverlapPoint>,
    pub prune_reports: &'a [PruneReport],
    /// Resolved configuration of this variant.
    pub config: &'a crate::config::ExperimentConfig,
    /// The config file exactly as read.
    pub config_text: &'a str,
}

pub fn overlap_trace(outcome: &TrainOutcome) -> Vec<OverlapPoint> {
    let sets: Vec<(u64, BTreeSet<(usize, usize)>)> =
        outcome.liveness.history.iter().map(|c| (c.step, c.flattened())).collect();
    sets.windows(2)
        .map(|w| OverlapPoint { step: w[1].0, previous_step: w[0].0, ratio: overlap_ratio(&w[0].1, &w[1].1).ok() })
        .collect()
}

pub fn metrics_csv(outcome: &TrainOutcome, hash: &str, seed: u64) -> String {
    let mut s = format!("# config_hash={hash} seed={seed}\n{}\n", csv_header(outcome.liveness.layers.len()));
    for r in &outcome.metrics {
        writeln!(s, "{}", r.to_csv()).unwrap();
    }
    s
}

/// Trains one seed of one variant. Network initialization and noise use
/// separate streams of a generator seeded with `seed`.
pub fn train_seed(variant: &Variant, seed: u64, train: &Dataset, eval: Option<&Dataset>) -> Result<TrainOutcome, String> {
    let cfg = &variant.config;
    let net = cfg.build_network(&mut ChaCha8Rng::seed_from_u64(seed))?;
    let optimizer = Optimizer::new(cfg.optimizer_kind()?, &net).map_err(|e| e.to_string())?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let data = TrainData { train, eval };
    train_demp(net, &data, optimizer, &cfg.demp_config(), &cfg.train_settings(seed), &mut noise_rng)
        .map_err(|e| e.to_string())
}

pub fn write_outputs(
    variant: &Variant,
    config_text: &str,
    seed: u64,
    outcome: &TrainOutcome,
    out_root: &Path,
) -> Result<PathBuf, String> {
    let id = run_id(variant, seed);
    let dir = out_root.join(&id);
    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let final_metrics = outcome.metrics.last().map(|r| FinalMetrics {
        step: r.step,
        train_loss: r.train_loss,
        eval_accuracy: outcome.final_eval_accuracy(),
        neuron_sparsity: r.neuron_sparsity,
        weight_sparsity: r.weight_sparsity,
        flops_estimate: r.flops_estimate,
        dead_counts: r.dead_counts.clone(),
        param_count: outcome.net.param_count(),
        layer_widths: outcome.net.neuron_units().iter().map(|u| u.1).collect(),
    });
    let summary = Summary {
        run_id: id,
        config_name: &variant.config.name,
        variant: &variant.label,
        seed,
        config_hash: &variant.hash,
        steps_completed: outcome.losses.len(),
        aborted: outcome.aborted.clone(),
        final_metrics,
        overlap_trace: overlap_trace(outcome),
        prune_reports: &outcome.prune_reports,
        config: &variant.config,
        config_text,
    };
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| format!("{}: {e}", p.display()))
    };
    write("metrics.csv", &metrics_csv(outcome, &variant.hash, seed))?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?;
    write("summary.json", &(json + "\n"))?;
    Ok(dir)
}
