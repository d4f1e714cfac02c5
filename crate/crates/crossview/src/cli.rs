//! Command implementations behind the `crossview` binary: dataset
//! generation, training, gradient checking, evaluation, and the
//! relation-block ablation. Every run writes a manifest next to its output
//! and all files are written atomically (temp then rename).

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{finite_difference_check_opts, GradCheckReport};
use crate::heads::LossWeights;
use crate::metrics::{evaluate, EvalConfig, MetricsReport};
use crate::model::{ModelDims, ModelParams};
use crate::numerics::Rng;
use crate::synth::{generate_dataset, random_toy_sample, read_dataset, write_dataset, GeneratorConfig, PairedSample};
use crate::trainer::{load_checkpoint, run_ablation, train, TrainConfig};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Generation config file: case count plus the generator fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub cases: usize,
    #[serde(flatten)]
    pub generator: GeneratorConfig,
}

/// Record of one CLI run, sufficient to regenerate its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub artifact_version: String,
    pub duration_secs: f64,
}

/// Write bytes via a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    std::io::Write::write_all(&mut tmp.as_file(), bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    atomic_write(path, json.as_bytes())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        duration_secs: started.elapsed().as_secs_f64(),
    };
    write_json_atomic(&manifest_path(out), &manifest)
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("{}: {e}", path.display()))
    })
}

/// `generate`: synthesize a dataset from a config file.
pub fn cmd_generate(config_path: &Path, out_path: &Path, seed_override: Option<u64>) -> Result<()> {
    let started = Instant::now();
    let mut cfg: DatasetConfig = read_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg.generator.seed = seed;
    }
    cfg.generator.validate()?;
    let samples = generate_dataset(&cfg.generator, cfg.cases)?;
    let tmp_dir = out_path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(tmp_dir).map_err(|e| Error::io(out_path, e))?;
    write_dataset(&samples, tmp.path())?;
    tmp.persist(out_path).map_err(|e| Error::io(out_path, e.error))?;
    write_manifest(
        out_path,
        "generate",
        serde_json::to_value(&cfg).unwrap(),
        cfg.generator.seed,
        &[config_path],
        &[out_path],
        started,
    )
}

/// `train`: fit a model on a dataset file and write a checkpoint.
pub fn cmd_train(dataset_path: &Path, config_path: &Path, checkpoint_out: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg: TrainConfig = read_config(config_path)?;
    cfg.validate()?;
    let dataset = read_dataset(dataset_path)?;
    let ckpt = train(&dataset, &cfg)?;
    let json = serde_json::to_string(&ckpt).map_err(|e| Error::Io {
        path: checkpoint_out.display().to_string(),
        source: e.into(),
    })?;
    atomic_write(checkpoint_out, json.as_bytes())?;
    let final_loss = ckpt.train_loss_history.last().copied();
    let mut config = serde_json::to_value(&cfg).unwrap();
    config["final_train_loss"] = serde_json::json!(final_loss);
    write_manifest(
        checkpoint_out,
        "train",
        config,
        cfg.seed,
        &[dataset_path, config_path],
        &[checkpoint_out],
        started,
    )
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub d_f: usize,
    pub d_k: usize,
    pub d_emb: usize,
    pub candidates_per_view: usize,
    pub n_blocks: usize,
    pub step: f64,
    pub tolerance: f64,
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 0,
            d_f: 8,
            d_k: 4,
            d_emb: 8,
            candidates_per_view: 3,
            n_blocks: 2,
            step: 1e-5,
            tolerance: 1e-4,
            corrupt: false,
        }
    }
}

/// A gate pre-activation within the finite-difference step of 0 would be
/// perturbed across the ReLU kink, where the normalized aggregate is not
/// differentiable; such instances are invalid for central differences.
fn min_gate_preact_magnitude(sample: &PairedSample, model: &ModelParams) -> Result<f64> {
    let mut min = f64::INFINITY;
    let pairs = [
        (&sample.view1, &sample.view2, &model.stack.blocks_1from2),
        (&sample.view2, &sample.view1, &model.stack.blocks_2from1),
    ];
    for (targets, sources, blocks) in pairs {
        for block in blocks.iter() {
            for t in targets.iter() {
                for s in sources.iter() {
                    let g = crate::relation::geometric_normalize(
                        &t.geometry,
                        &s.geometry,
                        crate::relation::DEFAULT_GEOMETRY_EPS,
                    )?;
                    let emb =
                        crate::relation::embed_geometry(&g, block.d_emb, model.dims.wavelength)?;
                    let p = crate::numerics::dot(&block.gate, &emb)?;
                    min = min.min(p.abs());
                }
            }
        }
    }
    Ok(min)
}

/// `gradcheck`: central-difference verification on a randomly built toy
/// model and sample. Models whose gate pre-activations land too close to
/// the ReLU kink are redrawn, since the difference quotient would straddle
/// a genuine non-differentiability instead of measuring a derivative.
pub fn cmd_gradcheck(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = Rng::from_seed(opts.seed);
    let sample: PairedSample = random_toy_sample(
        &mut rng,
        opts.candidates_per_view,
        opts.candidates_per_view,
        opts.d_f,
    )?;
    let dims = ModelDims::new(opts.d_f, opts.d_k, opts.d_emb, opts.n_blocks);
    let margin = 10.0 * opts.step.abs().max(1e-4);
    let mut model = ModelParams::init(dims.clone(), &mut rng)?;
    for _ in 0..100 {
        if min_gate_preact_magnitude(&sample, &model)? >= margin {
            break;
        }
        model = ModelParams::init(dims.clone(), &mut rng)?;
    }
    finite_difference_check_opts(
        &sample,
        &model,
        &LossWeights::default(),
        opts.step,
        opts.tolerance,
        opts.corrupt,
    )
}

/// `eval`: score a checkpoint against a dataset; returns the report and
/// optionally writes it (plus a FROC CSV) to disk.
pub fn cmd_eval(
    checkpoint_path: &Path,
    dataset_path: &Path,
    eval_cfg: &EvalConfig,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    let started = Instant::now();
    let ckpt = load_checkpoint(checkpoint_path)?;
    let dataset = read_dataset(dataset_path)?;
    let data_d_f = dataset.first().map_or(0, |s| s.feature_len());
    if data_d_f != ckpt.model.dims.d_f {
        return Err(Error::Shape(format!(
            "dimension mismatch: checkpoint {} has d_f={}, dataset {} has d_f={}",
            checkpoint_path.display(),
            ckpt.model.dims.d_f,
            dataset_path.display(),
            data_d_f
        )));
    }
    let report = evaluate(&ckpt.model, &dataset, eval_cfg)?;
    if let Some(out_path) = out {
        #[derive(Serialize)]
        struct EvalOutput<'a> {
            config: &'a EvalConfig,
            metrics: &'a MetricsReport,
        }
        write_json_atomic(
            out_path,
            &EvalOutput {
                config: eval_cfg,
                metrics: &report,
            },
        )?;
        let mut csv = String::from("fpi,tpr\n");
        for p in &report.froc {
            csv.push_str(&format!("{},{}\n", p.fpi, p.tpr));
        }
        let csv_path = out_path.with_extension("froc.csv");
        atomic_write(&csv_path, csv.as_bytes())?;
        write_manifest(
            out_path,
            "eval",
            serde_json::to_value(eval_cfg).unwrap(),
            ckpt.config.seed,
            &[checkpoint_path, dataset_path],
            &[out_path, &csv_path],
            started,
        )?;
    }
    Ok(report)
}

/// One ablation row: a trained-and-evaluated (N, seed) pair.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub n_blocks: usize,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    /// Per-N means over seeds: (n_blocks, mean precision, recall, f1, fpi).
    pub means: Vec<AblationRow>,
}

/// Train/evaluate every (N, seed) combination and aggregate per-N means.
pub fn ablate(
    train_set: &[PairedSample],
    test_set: &[PairedSample],
    base_cfg: &TrainConfig,
    n_values: &[usize],
    seeds: &[u64],
) -> Result<AblationSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..base_cfg.clone()
        };
        for (n, report) in run_ablation(train_set, test_set, &cfg, n_values)? {
            rows.push(AblationRow {
                n_blocks: n,
                seed,
                precision: report.precision,
                recall: report.recall,
                f1: report.f1,
                fpi: report.fpi,
            });
        }
    }
    rows.sort_by_key(|r| (r.n_blocks, r.seed));
    let mut means = Vec::new();
    for &n in n_values {
        let group: Vec<&AblationRow> = rows.iter().filter(|r| r.n_blocks == n).collect();
        let k = group.len() as f64;
        means.push(AblationRow {
            n_blocks: n,
            seed: 0,
            precision: group.iter().map(|r| r.precision).sum::<f64>() / k,
            recall: group.iter().map(|r| r.recall).sum::<f64>() / k,
            f1: group.iter().map(|r| r.f1).sum::<f64>() / k,
            fpi: group.iter().map(|r| r.fpi).sum::<f64>() / k,
        });
    }
    means.sort_by_key(|r| r.n_blocks);
    Ok(AblationSummary { rows, means })
}

/// `ablate`: file-level wrapper that emits CSV + JSON + manifest.
#[allow(clippy::too_many_arguments)]
pub fn cmd_ablate(
    train_path: &Path,
    test_path: &Path,
    config_path: &Path,
    n_values: &[usize],
    seeds: &[u64],
    out_csv: &Path,
    out_json: &Path,
) -> Result<AblationSummary> {
    let started = Instant::now();
    let base_cfg: TrainConfig = read_config(config_path)?;
    base_cfg.validate()?;
    let train_set = read_dataset(train_path)?;
    let test_set = read_dataset(test_path)?;
    let summary = ablate(&train_set, &test_set, &base_cfg, n_values, seeds)?;

    let mut csv = String::from("n_blocks,seed,precision,recall,f1,fpi\n");
    for r in &summary.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n_blocks, r.seed, r.precision, r.recall, r.f1, r.fpi
        ));
    }
    for r in &summary.means {
        csv.push_str(&format!(
            "{},mean,{},{},{},{}\n",
            r.n_blocks, r.precision, r.recall, r.f1, r.fpi
        ));
    }
    atomic_write(out_csv, csv.as_bytes())?;
    write_json_atomic(out_json, &summary)?;
    let config = serde_json::json!({
        "train_config": base_cfg,
        "n_values": n_values,
        "seeds": seeds,
    });
    write_manifest(
        out_json,
        "ablate",
        config,
        base_cfg.seed,
        &[train_path, test_path, config_path],
        &[out_csv, out_json],
        started,
    )?;
    Ok(summary)
}
