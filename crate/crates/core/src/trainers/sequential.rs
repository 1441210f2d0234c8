use rand::seq::SliceRandom;

use super::eval::{eval_accuracy, Predictor};
use super::sgd::{sgd_step, task_lr};
use super::{check_loss, finish_record, Method, RunRecord, Snapshot, TrainConfig};
use crate::metrics::Combiner;
use crate::numkit::{
    cross_entropy, mlp_backward, mlp_forward, MlpSpec, Mode, ParamVector, Purpose, SeededRng, Tensor,
};
use crate::tasks::{stack_examples, Example, ReplayBuffer, TaskDataset, TaskStream};
use crate::weightspace::{
    convex_combine, init_ensemble, midpoint, sample_simplex, subspace_grad_distribute, EnsembleWeights,
};
use crate::{Error, Result};

/// Shuffled mini-batches over `examples`, one shuffle per epoch.
pub(crate) fn for_each_batch<F>(examples: &[Example], cfg: &TrainConfig, task: usize, mut f: F) -> Result<()>
where
    F: FnMut(usize, Tensor, Vec<usize>) -> Result<()>,
{
    let mut step = 0;
    for epoch in 0..cfg.epochs_per_task {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut cfg.rng(Purpose::Shuffle, ((task as u64) << 20) | epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = stack_examples(chunk.iter().map(|&i| &examples[i]));
            f(step, x, y)?;
            step += 1;
        }
    }
    Ok(())
}

pub(crate) fn loss_and_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &Tensor,
    y: &[usize],
    dropout: &mut SeededRng,
) -> Result<(f64, ParamVector)> {
    let (logits, cache) = mlp_forward(spec, params, x, Mode::Train(dropout))?;
    let (loss, g) = cross_entropy(&logits, y)?;
    Ok((loss, mlp_backward(spec, &cache, &g)?))
}

fn ensure_finite(ok: bool, what: &str, task: usize) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} became non-finite during task {task}")))
    }
}

fn eval_row(spec: &MlpSpec, pred: Predictor<'_>, tasks: &[TaskDataset]) -> Result<Vec<f64>> {
    tasks.iter().map(|t| eval_accuracy(spec, pred, &t.test)).collect()
}

pub fn train_single(stream: &TaskStream, cfg: &TrainConfig, spec: &MlpSpec) -> Result<RunRecord> {
    let mut w = spec.init_params(&mut cfg.rng(Purpose::Init, 0));
    let mut dropout = cfg.rng(Purpose::Dropout, 0);
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    for (ti, task) in stream.tasks.iter().enumerate() {
        let t = ti + 1;
        let lr = task_lr(cfg.lr0, cfg.lr_decay_per_task, t);
        let mut vel = Vec::new();
        for_each_batch(&task.train, cfg, t, |step, x, y| {
            let (loss, g) = loss_and_grad(spec, &w, &x, &y, &mut dropout)?;
            check_loss(loss, t, step)?;
            sgd_step(&mut w, &g, lr, cfg.momentum, &mut vel)
        })?;
        ensure_finite(w.is_finite(), "weights", t)?;
        rows.push(eval_row(spec, Predictor::Single(&w), &stream.tasks[..t])?);
        snapshots.push(Snapshot {
            task: t,
            entries: vec![("model".into(), w.clone())],
        });
        log::info!("single: task {t} done, row {:?}", rows.last().unwrap());
    }
    finish_record(Method::Single, rows, None, snapshots, cfg, spec)
}

pub fn train_vanilla_ensemble(
    stream: &TaskStream,
    cfg: &TrainConfig,
    spec: &MlpSpec,
    combiner: Combiner,
) -> Result<RunRecord> {
    let n = cfg.n_models;
    let mut members = init_ensemble(spec, n, cfg.sigma_init, cfg.seed)?.into_members();
    let mut dropout: Vec<SeededRng> = (0..n).map(|i| cfg.rng(Purpose::Dropout, i as u64)).collect();
    let mut rows = Vec::new();
    let mut member_rows = vec![Vec::new(); n];
    let mut snapshots = Vec::new();
    for (ti, task) in stream.tasks.iter().enumerate() {
        let t = ti + 1;
        let lr = task_lr(cfg.lr0, cfg.lr_decay_per_task, t);
        let mut vel = vec![Vec::new(); n];
        for_each_batch(&task.train, cfg, t, |step, x, y| {
            for i in 0..n {
                let (loss, g) = loss_and_grad(spec, &members[i], &x, &y, &mut dropout[i])?;
                check_loss(loss, t, step)?;
                sgd_step(&mut members[i], &g, lr, cfg.momentum, &mut vel[i])?;
            }
            Ok(())
        })?;
        ensure_finite(members.iter().all(ParamVector::is_finite), "weights", t)?;
        let seen = &stream.tasks[..t];
        rows.push(eval_row(spec, Predictor::Ensemble(&members, combiner), seen)?);
        for (i, m) in members.iter().enumerate() {
            member_rows[i].push(eval_row(spec, Predictor::Single(m), seen)?);
        }
        snapshots.push(Snapshot {
            task: t,
            entries: members
                .iter()
                .enumerate()
                .map(|(i, m)| (format!("member{}", i + 1), m.clone()))
                .collect(),
        });
        log::info!("vanilla ensemble: task {t} done, row {:?}", rows.last().unwrap());
    }
    finish_record(Method::VanillaEnsemble, rows, Some(member_rows), snapshots, cfg, spec)
}

/// Random streams shared by the subspace trainers.
pub(crate) struct SubspaceRngs {
    pub simplex: SeededRng,
    pub dropout: SeededRng,
    pub replay: SeededRng,
}

impl SubspaceRngs {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            simplex: cfg.rng(Purpose::Simplex, 0),
            dropout: cfg.rng(Purpose::Dropout, 0),
            replay: cfg.rng(Purpose::Replay, 0),
        }
    }
}

/// One task of subspace training: per batch a fresh `α`, one backward pass
/// through the mixed weights, and member updates with `α_i · g`. With a
/// buffer, every batch is extended by replayed examples of earlier tasks.
pub(crate) fn subspace_task(
    w: &mut EnsembleWeights,
    task: &TaskDataset,
    cfg: &TrainConfig,
    spec: &MlpSpec,
    rngs: &mut SubspaceRngs,
    buffer: Option<&ReplayBuffer>,
) -> Result<()> {
    let t = task.task_id;
    let lr = task_lr(cfg.lr0, cfg.lr_decay_per_task, t);
    let n = w.n();
    let mut vel = vec![Vec::new(); n];
    let previous: Vec<usize> = buffer.map_or(Vec::new(), |b| b.tasks().into_iter().filter(|&j| j < t).collect());
    for_each_batch(&task.train, cfg, t, |step, x, y| {
        let (x, y) = match buffer {
            Some(buf) if !previous.is_empty() => {
                let per_task = (cfg.batch_size / previous.len()).max(1);
                let replay = buf.sample(per_task, &previous, &mut rngs.replay)?;
                let (rx, ry) = stack_examples(&replay);
                let mut data = x.into_data();
                data.extend_from_slice(rx.data());
                let mut labels = y;
                labels.extend(ry);
                (Tensor::new(vec![labels.len(), spec.input_dim()], data)?, labels)
            }
            _ => (x, y),
        };
        let alpha = sample_simplex(n, &mut rngs.simplex);
        let mixed = convex_combine(w, &alpha)?;
        let (loss, g) = loss_and_grad(spec, &mixed, &x, &y, &mut rngs.dropout)?;
        check_loss(loss, t, step)?;
        for (i, gi) in subspace_grad_distribute(&g, &alpha).iter().enumerate() {
            sgd_step(&mut w.members_mut()[i], gi, lr, cfg.momentum, &mut vel[i])?;
        }
        Ok(())
    })?;
    ensure_finite(w.is_finite(), "subspace members", t)
}

pub(crate) fn subspace_entries(w: &EnsembleWeights, prefix: &str) -> Vec<(String, ParamVector)> {
    let mut out: Vec<(String, ParamVector)> = w
        .members()
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("{prefix}member{}", i + 1), m.clone()))
        .collect();
    out.push((format!("{prefix}mid"), midpoint(w)));
    out
}

fn subspace_run(stream: &TaskStream, cfg: &TrainConfig, spec: &MlpSpec, replay: bool) -> Result<RunRecord> {
    let mut w = init_ensemble(spec, cfg.n_models, cfg.sigma_init, cfg.seed)?;
    let mut rngs = SubspaceRngs::new(cfg);
    let mut buffer = replay.then(|| ReplayBuffer::new(cfg.m_b, cfg.replay_policy, cfg.rng(Purpose::Replay, 1)));
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    for (ti, task) in stream.tasks.iter().enumerate() {
        let t = ti + 1;
        subspace_task(&mut w, task, cfg, spec, &mut rngs, buffer.as_ref())?;
        if let Some(buf) = buffer.as_mut() {
            task.train.iter().for_each(|ex| {
                buf.insert(ex.clone());
            });
        }
        let mid = midpoint(&w);
        rows.push(eval_row(spec, Predictor::Single(&mid), &stream.tasks[..t])?);
        snapshots.push(Snapshot {
            task: t,
            entries: subspace_entries(&w, ""),
        });
        log::info!("subspace (replay {replay}): task {t} done, row {:?}", rows.last().unwrap());
    }
    let method = if replay { Method::SubspaceEr } else { Method::Subspace };
    finish_record(method, rows, None, snapshots, cfg, spec)
}

pub fn train_subspace(stream: &TaskStream, cfg: &TrainConfig, spec: &MlpSpec) -> Result<RunRecord> {
    subspace_run(stream, cfg, spec, false)
}

pub fn train_subspace_er(stream: &TaskStream, cfg: &TrainConfig, spec: &MlpSpec) -> Result<RunRecord> {
    subspace_run(stream, cfg, spec, true)
}

/// Single model on the shuffled union of every task's training data,
/// evaluated once at the end.
pub fn train_multitask(stream: &TaskStream, cfg: &TrainConfig, spec: &MlpSpec) -> Result<RunRecord> {
    let mut w = spec.init_params(&mut cfg.rng(Purpose::Init, 0));
    let mut dropout = cfg.rng(Purpose::Dropout, 0);
    let union: Vec<Example> = stream.tasks.iter().flat_map(|t| t.train.iter().cloned()).collect();
    let mut vel = Vec::new();
    for_each_batch(&union, cfg, 1, |step, x, y| {
        let (loss, g) = loss_and_grad(spec, &w, &x, &y, &mut dropout)?;
        check_loss(loss, 1, step)?;
        sgd_step(&mut w, &g, cfg.lr0, cfg.momentum, &mut vel)
    })?;
    ensure_finite(w.is_finite(), "weights", 1)?;
    let row = eval_row(spec, Predictor::Single(&w), &stream.tasks)?;
    let snapshots = vec![Snapshot {
        task: stream.len(),
        entries: vec![("model".into(), w)],
    }];
    finish_record(Method::Multitask, vec![row], None, snapshots, cfg, spec)
}
