//! Config-driven runs: stream construction, training over seeds and the
//! files written for each run.
//!
//! ```text
//! <output_dir>/aggregate.json
//! <output_dir>/seed_<s>/accuracy.csv
//! <output_dir>/seed_<s>/member_<i>_accuracy.csv    (vanilla ensemble only)
//! <output_dir>/seed_<s>/summary.json
//! <output_dir>/seed_<s>/flops.json
//! <output_dir>/seed_<s>/timing.json
//! <output_dir>/seed_<s>/checkpoints/task_<tt>.eclw
//! ```
//! Everything except `timing.json` is a deterministic function of the config.

mod checkpoint;
mod config;
mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::MetricsSummary;
use crate::numkit::Tensor;
use crate::tasks::{
    load_idx, make_permuted_stream, make_rotated_stream, make_split_stream, make_synthetic_stream, BaseDataset,
    LabeledSet, StreamKind, TaskStream,
};
use crate::trainers::{train, Method, RunRecord};
use crate::{Error, Result};

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{BenchmarkConfig, ModelConfig, RunConfig};
pub use report::{grid_csv, noise_csv, path_csv};

pub const DATA_DIR_ENV: &str = "ECL_DATA_DIR";

const TRAIN_FILES: [&str; 2] = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"];
const TEST_FILES: [[&str; 2]; 2] = [
    ["test-images-idx3-ubyte", "test-labels-idx1-ubyte"],
    ["t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"],
];

fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.gz"), stem.to_string()]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

fn load_split(dir: &Path, pairs: &[[&str; 2]]) -> Result<LabeledSet> {
    for [img, lab] in pairs {
        if let (Some(i), Some(l)) = (find_file(dir, img), find_file(dir, lab)) {
            let (features, labels) = load_idx(&i, &l)?;
            return LabeledSet::new(features, labels);
        }
    }
    Err(Error::io(
        dir.join(pairs[0][0]),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found (tried plain and .gz)"),
    ))
}

/// Reads an MNIST-style directory of IDX files, gzipped or not.
pub fn load_base_dataset(dir: &Path) -> Result<BaseDataset> {
    let train = load_split(dir, &[TRAIN_FILES])?;
    let test = load_split(dir, &TEST_FILES)?;
    let d = train.features.cols();
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d || test.features.cols() != d {
        return Err(Error::Format {
            offset: 0,
            message: format!("{}: images are not square with matching sizes", dir.display()),
        });
    }
    let num_classes = train.labels.iter().chain(&test.labels).max().map_or(0, |m| m + 1);
    Ok(BaseDataset {
        train,
        test,
        num_classes,
        image_side: side,
    })
}

/// Dataset root: the explicit override, then `benchmark.data_dir`, then
/// `ECL_DATA_DIR`.
pub fn resolve_data_dir(cfg: &RunConfig, override_dir: Option<&Path>) -> Result<PathBuf> {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.benchmark.data_dir.clone())
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config(format!(
                "benchmark kind {:?} needs data: set benchmark.data_dir, {DATA_DIR_ENV} or --data-dir",
                cfg.benchmark.kind
            ))
        })
}

/// Base images when the benchmark needs them.
pub fn load_benchmark_base(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<Option<BaseDataset>> {
    if cfg.benchmark.kind == StreamKind::Synthetic {
        return Ok(None);
    }
    load_base_dataset(&resolve_data_dir(cfg, data_dir)?).map(Some)
}

pub fn build_stream(cfg: &RunConfig, base: Option<&BaseDataset>, seed: u64) -> Result<TaskStream> {
    let b = &cfg.benchmark;
    let base = || base.ok_or_else(|| Error::State("image benchmark without a loaded dataset".into()));
    let missing = |f: &str| Error::Config(format!("benchmark.{f} missing"));
    match b.kind {
        StreamKind::Rotated => make_rotated_stream(
            base()?,
            b.tasks,
            b.delta_deg.ok_or_else(|| missing("delta_deg"))?,
            b.train_per_task.ok_or_else(|| missing("train_per_task"))?,
            b.test_per_task.ok_or_else(|| missing("test_per_task"))?,
        ),
        StreamKind::Permuted => make_permuted_stream(
            base()?,
            b.tasks,
            b.train_per_task.ok_or_else(|| missing("train_per_task"))?,
            b.test_per_task.ok_or_else(|| missing("test_per_task"))?,
            seed,
        ),
        StreamKind::Split => make_split_stream(
            base()?,
            b.tasks,
            b.classes_per_task.ok_or_else(|| missing("classes_per_task"))?,
            b.train_per_class.ok_or_else(|| missing("train_per_class"))?,
            b.test_per_class.ok_or_else(|| missing("test_per_class"))?,
            seed,
        ),
        StreamKind::Synthetic => make_synthetic_stream(b.synthetic.as_ref().ok_or_else(|| missing("synthetic"))?, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub method: Method,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent for a single seed.
    pub std: Option<f64>,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub final_accuracy: Stat,
    pub forgetting: Stat,
    pub learning_accuracy: Stat,
}

impl Aggregate {
    pub fn of(method: Method, seeds: &[u64], summaries: &[MetricsSummary]) -> Self {
        let col = |f: fn(&MetricsSummary) -> f64| Stat::of(summaries.iter().map(f).collect());
        Self {
            method,
            seeds: seeds.to_vec(),
            final_accuracy: col(|s| s.final_accuracy),
            forgetting: col(|s| s.forgetting),
            learning_accuracy: col(|s| s.learning_accuracy),
        }
    }
}

pub struct SeedRun {
    pub seed: u64,
    pub record: RunRecord,
    pub summary: MetricsSummary,
}

pub struct ExperimentOutput {
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed_{seed}"))
}

pub fn checkpoint_path(output_dir: &Path, seed: u64, task: usize) -> PathBuf {
    seed_dir(output_dir, seed).join("checkpoints").join(format!("task_{task:02}.eclw"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    write(path, text)
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_seed(out: &Path, cfg: &RunConfig, run: &SeedRun) -> Result<()> {
    let dir = seed_dir(out, run.seed);
    mkdir(&dir.join("checkpoints"))?;
    let rec = &run.record;
    write(&dir.join("accuracy.csv"), rec.accuracy.to_csv_string())?;
    if let Some(members) = &rec.member_accuracy {
        for (i, m) in members.iter().enumerate() {
            write(&dir.join(format!("member_{}_accuracy.csv", i + 1)), m.to_csv_string())?;
        }
    }
    let summary = SeedSummary {
        method: cfg.method,
        seed: run.seed,
        metrics: run.summary.clone(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("flops.json"), &rec.flops)?;
    write_json(&dir.join("timing.json"), &serde_json::json!({ "wall_time_s": rec.wall_time_s }))?;
    let n = if matches!(cfg.method, Method::Single | Method::Multitask) {
        1
    } else {
        cfg.train.n_models
    };
    for snap in &rec.snapshots {
        let ck = Checkpoint {
            n,
            snapshot: snap.clone(),
        };
        save_checkpoint(&checkpoint_path(out, run.seed, snap.task), &ck)?;
    }
    Ok(())
}

/// Trains every seed (in parallel) and writes all outputs under
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let base = load_benchmark_base(cfg, data_dir)?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let stream = build_stream(cfg, base.as_ref(), seed)?;
            let spec = cfg.model_spec(&stream)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = seed;
            let record = train(cfg.method, &stream, &train_cfg, &spec, cfg.combiner)?;
            let summary = MetricsSummary::of(&record.accuracy, None);
            log::info!("{} seed {seed}: {:?}", cfg.method.name(), summary);
            Ok(SeedRun { seed, record, summary })
        })
        .collect::<Result<Vec<_>>>()?;
    mkdir(&cfg.output_dir)?;
    for run in &runs {
        write_seed(&cfg.output_dir, cfg, run)?;
    }
    let summaries: Vec<MetricsSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let aggregate = Aggregate::of(cfg.method, &cfg.seeds, &summaries);
    write_json(&cfg.output_dir.join("aggregate.json"), &aggregate)?;
    Ok(ExperimentOutput { runs, aggregate })
}

/// Test or train split of one task as tensors.
pub fn task_data(stream: &TaskStream, task: usize, train_split: bool) -> Result<(Tensor, Vec<usize>)> {
    let t = stream
        .tasks
        .get(task.wrapping_sub(1))
        .ok_or_else(|| Error::input(format!("task {task} outside 1..={}", stream.len())))?;
    Ok(crate::tasks::stack_examples(if train_split { &t.train } else { &t.test }))
}
