use super::eval::Predictor;
use super::sequential::for_each_batch;
use super::sgd::{sgd_step, task_lr};
use super::{check_loss, finish_record, Method, RunRecord, Snapshot, TrainConfig};
use crate::metrics::Combiner;
use crate::numkit::{cross_entropy, MlpSpec, Mode, ParamVector, Purpose};
use crate::tasks::TaskStream;
use crate::weightspace::{assign_members, batch_ensemble_backward, batch_ensemble_forward, BatchEnsembleWeights};
use crate::{Error, Result};

/// Shared and fast weights are carried across tasks and follow the same
/// learning-rate schedule. Predictions average the members.
pub fn train_batch_ensemble(stream: &TaskStream, cfg: &TrainConfig, spec: &MlpSpec) -> Result<RunRecord> {
    let n = cfg.n_models;
    let mut w = BatchEnsembleWeights::init(spec, n, cfg.be_fast_init, cfg.seed)?;
    let mut assign_rng = cfg.rng(Purpose::Assignment, 0);
    let mut dropout = cfg.rng(Purpose::Dropout, 0);
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    for (ti, task) in stream.tasks.iter().enumerate() {
        let t = ti + 1;
        let lr = task_lr(cfg.lr0, cfg.lr_decay_per_task, t);
        let (mut v_shared, mut v_fast) = (Vec::new(), Vec::new());
        for_each_batch(&task.train, cfg, t, |step, x, y| {
            let asg = assign_members(y.len(), n, &mut assign_rng);
            let (logits, cache) = batch_ensemble_forward(&w, &x, &asg, Mode::Train(&mut dropout))?;
            let (loss, g) = cross_entropy(&logits, &y)?;
            check_loss(loss, t, step)?;
            let grad = batch_ensemble_backward(&w, &cache, &g)?;
            let (shared, fast) = w.parts_mut();
            sgd_step(shared, &grad.shared, lr, cfg.momentum, &mut v_shared)?;
            if cfg.be_train_fast {
                sgd_step(fast, &grad.fast, lr, cfg.momentum, &mut v_fast)?;
            }
            Ok(())
        })?;
        if !w.is_finite() {
            return Err(Error::Numeric(format!("batch-ensemble weights became non-finite during task {t}")));
        }
        let effective: Vec<ParamVector> = (0..n).map(|i| w.member_effective(i)).collect();
        rows.push(
            stream.tasks[..t]
                .iter()
                .map(|task| super::eval_accuracy(spec, Predictor::Ensemble(&effective, Combiner::Average), &task.test))
                .collect::<Result<Vec<_>>>()?,
        );
        let mut entries = vec![("shared".to_string(), w.shared().clone()), ("fast".to_string(), w.fast().clone())];
        entries.extend(effective.into_iter().enumerate().map(|(i, p)| (format!("member{}", i + 1), p)));
        snapshots.push(Snapshot { task: t, entries });
        log::info!("batch ensemble: task {t} done, row {:?}", rows.last().unwrap());
    }
    finish_record(Method::BatchEnsemble, rows, None, snapshots, cfg, spec)
}
