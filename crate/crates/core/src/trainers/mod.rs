//! Continual training procedures over a task stream.
//!
//! Every trainer is a pure function of `(stream, config, spec)`: all
//! randomness comes from [`SeededRng`] streams keyed by `config.seed`.

mod batch;
mod connect;
mod eval;
mod sequential;
mod sgd;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{flops_report, FlopsMethod, FlopsReport};
use crate::metrics::{AccuracyMatrix, Combiner};
use crate::numkit::{MlpSpec, ParamVector, SeededRng};
use crate::tasks::{ReplayPolicy, TaskStream};
use crate::weightspace::FastInit;
use crate::{Error, Result};

pub use batch::train_batch_ensemble;
pub use connect::{connectivity_loss, train_subspace_connectivity, ConnectivityLoss};
pub use eval::{eval_accuracy, Predictor};
pub use sequential::{train_multitask, train_single, train_subspace, train_subspace_er, train_vanilla_ensemble};
pub use sgd::{sgd_step, task_lr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    VanillaEnsemble,
    Subspace,
    BatchEnsemble,
    SubspaceEr,
    SubspaceConnectivity,
    Multitask,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Single,
        Method::VanillaEnsemble,
        Method::Subspace,
        Method::BatchEnsemble,
        Method::SubspaceEr,
        Method::SubspaceConnectivity,
        Method::Multitask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::VanillaEnsemble => "vanilla_ensemble",
            Method::Subspace => "subspace",
            Method::BatchEnsemble => "batch_ensemble",
            Method::SubspaceEr => "subspace_er",
            Method::SubspaceConnectivity => "subspace_connectivity",
            Method::Multitask => "multitask",
        }
    }

    fn flops_method(self) -> FlopsMethod {
        match self {
            Method::Single | Method::Multitask => FlopsMethod::Single,
            Method::VanillaEnsemble => FlopsMethod::VanillaEnsemble,
            Method::BatchEnsemble => FlopsMethod::BatchEnsemble,
            Method::Subspace | Method::SubspaceEr | Method::SubspaceConnectivity => FlopsMethod::Subspace,
        }
    }

    fn uses_members(self) -> bool {
        !matches!(self, Method::Single | Method::Multitask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay_per_task: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    pub n_models: usize,
    pub sigma_init: f64,
    pub sigma_connect_noise: f64,
    pub alpha_init_mix: f64,
    pub reg_samples: usize,
    pub m_b: usize,
    pub seed: u64,
    /// Learning rate of the connectivity step.
    pub connect_lr: f64,
    /// Optimization steps of the connectivity step per task.
    pub connect_steps: usize,
    pub replay_policy: ReplayPolicy,
    pub be_fast_init: FastInit,
    /// When false the batch-ensemble fast weights stay at their initial value.
    pub be_train_fast: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            lr_decay_per_task: 0.5,
            momentum: 0.0,
            batch_size: 10,
            epochs_per_task: 1,
            n_models: 3,
            sigma_init: 1.0,
            sigma_connect_noise: 0.005,
            alpha_init_mix: 0.85,
            reg_samples: 5,
            m_b: 1,
            seed: 0,
            connect_lr: 0.05,
            connect_steps: 100,
            replay_policy: ReplayPolicy::First,
            be_fast_init: FastInit::RandomSign,
            be_train_fast: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("train.lr0 must be > 0");
        }
        if !(self.lr_decay_per_task > 0.0 && self.lr_decay_per_task <= 1.0) {
            return bad("train.lr_decay_per_task must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("train.momentum must be in [0, 1)");
        }
        if self.batch_size == 0 || self.epochs_per_task == 0 || self.n_models == 0 {
            return bad("train.batch_size, train.epochs_per_task and train.n_models must be >= 1");
        }
        if !(self.sigma_init >= 0.0 && self.sigma_connect_noise >= 0.0) {
            return bad("noise scales must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.alpha_init_mix) {
            return bad("train.alpha_init_mix must be in [0, 1]");
        }
        if self.reg_samples == 0 || self.m_b == 0 {
            return bad("train.reg_samples and train.m_b must be >= 1");
        }
        if !(self.connect_lr > 0.0 && self.connect_lr.is_finite()) {
            return bad("train.connect_lr must be > 0");
        }
        Ok(())
    }

    pub(crate) fn rng(&self, purpose: crate::numkit::Purpose, index: u64) -> SeededRng {
        SeededRng::for_purpose(self.seed, purpose, index)
    }
}

/// Named weight vectors saved after one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub task: usize,
    pub entries: Vec<(String, ParamVector)>,
}

impl Snapshot {
    pub fn get(&self, label: &str) -> Option<&ParamVector> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, p)| p)
    }

    /// The vector used for predictions: `mid` for subspaces, else `model`.
    pub fn eval_point(&self) -> Option<&ParamVector> {
        self.get("mid").or_else(|| self.get("model"))
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub accuracy: AccuracyMatrix,
    /// Per-member accuracy matrices of a vanilla ensemble.
    pub member_accuracy: Option<Vec<AccuracyMatrix>>,
    pub snapshots: Vec<Snapshot>,
    pub wall_time_s: f64,
    pub flops: FlopsReport,
}

/// Runs one method. `combiner` only affects the vanilla ensemble.
pub fn train(
    method: Method,
    stream: &TaskStream,
    cfg: &TrainConfig,
    spec: &MlpSpec,
    combiner: Combiner,
) -> Result<RunRecord> {
    cfg.validate()?;
    spec.validate()?;
    if stream.is_empty() {
        return Err(Error::input("empty task stream"));
    }
    if stream.input_dim() != spec.input_dim() || stream.output_dim() != spec.output_dim() {
        return Err(Error::Config(format!(
            "model is {} -> {} but the stream needs {} -> {}",
            spec.input_dim(),
            spec.output_dim(),
            stream.input_dim(),
            stream.output_dim()
        )));
    }
    let start = Instant::now();
    let mut rec = match method {
        Method::Single => train_single(stream, cfg, spec),
        Method::VanillaEnsemble => train_vanilla_ensemble(stream, cfg, spec, combiner),
        Method::Subspace => train_subspace(stream, cfg, spec),
        Method::BatchEnsemble => train_batch_ensemble(stream, cfg, spec),
        Method::SubspaceEr => train_subspace_er(stream, cfg, spec),
        Method::SubspaceConnectivity => train_subspace_connectivity(stream, cfg, spec),
        Method::Multitask => train_multitask(stream, cfg, spec),
    }?;
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

pub(crate) fn finish_record(
    method: Method,
    rows: Vec<Vec<f64>>,
    member_rows: Option<Vec<Vec<Vec<f64>>>>,
    snapshots: Vec<Snapshot>,
    cfg: &TrainConfig,
    spec: &MlpSpec,
) -> Result<RunRecord> {
    let n = if method.uses_members() { cfg.n_models } else { 1 };
    Ok(RunRecord {
        method,
        accuracy: AccuracyMatrix::new(rows)?,
        member_accuracy: member_rows
            .map(|m| m.into_iter().map(AccuracyMatrix::new).collect::<Result<Vec<_>>>())
            .transpose()?,
        snapshots,
        wall_time_s: 0.0,
        flops: flops_report(spec, cfg.batch_size, method.flops_method(), n)?,
    })
}

pub(crate) fn check_loss(loss: f64, task: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss at task {task}, step {step}")))
    }
}
