//! Rank-one fast weights on top of one shared network.
//!
//! Member `i` owns `(r_i, s_i)` per dense layer and behaves like the network
//! with weights `W ∘ r_i s_iᵀ`. Biases are shared and unscaled.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numkit::{
    dense_backward, dense_forward, ForwardCache, LayerSlot, Layout, MlpSpec, Mode, ParamVector, Purpose,
    RowScales, SeededRng, Tensor,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastInit {
    Identity,
    /// Entries drawn from `{-1, +1}`.
    #[default]
    RandomSign,
    /// Entries drawn from `N(1, sigma)`.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEnsembleWeights {
    spec: MlpSpec,
    n: usize,
    shared: ParamVector,
    fast: ParamVector,
}

fn fast_layout(spec: &MlpSpec, n: usize) -> Arc<Layout> {
    let mut slots = Vec::new();
    let mut off = 0;
    for m in 0..n {
        for (li, (k, l)) in spec.layer_dims().into_iter().enumerate() {
            for (tag, len) in [("r", k), ("s", l)] {
                slots.push(LayerSlot {
                    name: format!("member{}.fc{}.{tag}", m + 1, li + 1),
                    offset: off,
                    shape: vec![len],
                });
                off += len;
            }
        }
    }
    Arc::new(Layout::new(slots).expect("fast layout is contiguous"))
}

impl BatchEnsembleWeights {
    pub fn new(spec: MlpSpec, n: usize, shared: ParamVector, fast: ParamVector) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("batch ensemble needs n >= 1"));
        }
        spec.check_params(&shared)?;
        let layout = fast_layout(&spec, n);
        if **fast.layout() != *layout {
            return Err(Error::dim(
                "fast weights",
                format!("{} values for n = {n}", layout.len()),
                format!("{} values", fast.len()),
            ));
        }
        Ok(Self { spec, n, shared, fast })
    }

    /// Shared weights use the same stream as a single model with this seed.
    pub fn init(spec: &MlpSpec, n: usize, fast_init: FastInit, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("batch ensemble needs n >= 1"));
        }
        let shared = spec.init_params(&mut SeededRng::for_purpose(seed, Purpose::Init, 0));
        let layout = fast_layout(spec, n);
        let per_member = layout.len() / n;
        let mut data = Vec::with_capacity(layout.len());
        for m in 0..n {
            let mut rng = SeededRng::for_purpose(seed, Purpose::FastInit, m as u64);
            for _ in 0..per_member {
                data.push(match fast_init {
                    FastInit::Identity => 1.0,
                    FastInit::RandomSign => {
                        if rng.random_bool(0.5) {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    FastInit::Gaussian { sigma } => 1.0 + sigma * rng.normal(),
                });
            }
        }
        let fast = ParamVector::new(layout, data)?;
        Self::new(spec.clone(), n, shared, fast)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shared(&self) -> &ParamVector {
        &self.shared
    }

    pub fn fast(&self) -> &ParamVector {
        &self.fast
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut ParamVector, &mut ParamVector) {
        (&mut self.shared, &mut self.fast)
    }

    pub fn r(&self, member: usize, layer: usize) -> &[f64] {
        self.fast
            .slot(&format!("member{}.fc{}.r", member + 1, layer + 1))
            .expect("member and layer in range")
    }

    pub fn s(&self, member: usize, layer: usize) -> &[f64] {
        self.fast
            .slot(&format!("member{}.fc{}.s", member + 1, layer + 1))
            .expect("member and layer in range")
    }

    /// Plain MLP weights `W ∘ r sᵀ` of one member.
    pub fn member_effective(&self, member: usize) -> ParamVector {
        let mut out = self.shared.clone();
        for (li, ((k, l), (w_off, _))) in self.spec.layer_dims().into_iter().zip(self.spec.offsets()).enumerate() {
            let (r, s) = (self.r(member, li), self.s(member, li));
            let w = &mut out.data_mut()[w_off..w_off + k * l];
            for kk in 0..k {
                for j in 0..l {
                    w[kk * l + j] *= r[kk] * s[j];
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.shared.is_finite() && self.fast.is_finite()
    }
}

/// Uniform i.i.d. member index per example.
pub fn assign_members(batch_size: usize, n: usize, rng: &mut SeededRng) -> Vec<usize> {
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone)]
pub struct BatchEnsembleCache {
    inner: ForwardCache,
    assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEnsembleGrad {
    pub shared: ParamVector,
    pub fast: ParamVector,
}

fn row_scales(w: &BatchEnsembleWeights, assignment: &[usize]) -> Vec<RowScales> {
    (0..w.spec.num_layers())
        .map(|li| {
            let mut input = Vec::new();
            let mut output = Vec::new();
            for &m in assignment {
                input.extend_from_slice(w.r(m, li));
                output.extend_from_slice(w.s(m, li));
            }
            RowScales { input, output }
        })
        .collect()
}

/// Forward pass where example `j` uses member `assignment[j]`:
/// per layer `((x ∘ R) · W) ∘ S + b`.
pub fn batch_ensemble_forward(
    w: &BatchEnsembleWeights,
    batch: &Tensor,
    assignment: &[usize],
    mode: Mode<'_>,
) -> Result<(Tensor, BatchEnsembleCache)> {
    if assignment.len() != batch.rows() {
        return Err(Error::input(format!(
            "{} member assignments for a batch of {}",
            assignment.len(),
            batch.rows()
        )));
    }
    if let Some(bad) = assignment.iter().find(|&&m| m >= w.n) {
        return Err(Error::input(format!("member index {bad} with n = {}", w.n)));
    }
    let scales = row_scales(w, assignment);
    let (logits, inner) = dense_forward(&w.spec, &w.shared, batch, mode, Some(scales))?;
    Ok((
        logits,
        BatchEnsembleCache {
            inner,
            assignment: assignment.to_vec(),
        },
    ))
}

pub fn batch_ensemble_backward(
    w: &BatchEnsembleWeights,
    cache: &BatchEnsembleCache,
    grad_logits: &Tensor,
) -> Result<BatchEnsembleGrad> {
    let (shared, scale_grads) = dense_backward(&w.spec, &cache.inner, grad_logits)?;
    let scale_grads =
        scale_grads.ok_or_else(|| Error::Internal("cache was not produced by a batch-ensemble pass".into()))?;
    let mut fast = ParamVector::zeros(w.fast.layout().clone());
    let layout = w.fast.layout().clone();
    for (li, ((k, l), g)) in w.spec.layer_dims().into_iter().zip(&scale_grads).enumerate() {
        for (row, &m) in cache.assignment.iter().enumerate() {
            let r_slot = layout.slot(&format!("member{}.fc{}.r", m + 1, li + 1)).expect("slot");
            let s_slot = layout.slot(&format!("member{}.fc{}.s", m + 1, li + 1)).expect("slot");
            let data = fast.data_mut();
            data[r_slot.range()]
                .iter_mut()
                .zip(&g.input[row * k..(row + 1) * k])
                .for_each(|(a, b)| *a += b);
            data[s_slot.range()]
                .iter_mut()
                .zip(&g.output[row * l..(row + 1) * l])
                .for_each(|(a, b)| *a += b);
        }
    }
    Ok(BatchEnsembleGrad { shared, fast })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{cross_entropy, finite_diff_grad, mlp_forward, mlp_logits};

    fn spec() -> MlpSpec {
        MlpSpec::new(5, vec![7, 6], 3).unwrap()
    }

    fn batch(b: usize, seed: u64) -> Tensor {
        let mut rng = SeededRng::for_purpose(seed, Purpose::Test, 0);
        Tensor::new(vec![b, 5], (0..b * 5).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_fast_weights_reduce_to_plain_forward() {
        let w = BatchEnsembleWeights::init(&spec(), 3, FastInit::Identity, 4).unwrap();
        let x = batch(6, 1);
        let asg = assign_members(6, 3, &mut SeededRng::for_purpose(0, Purpose::Test, 9));
        let (be, _) = batch_ensemble_forward(&w, &x, &asg, Mode::Eval).unwrap();
        let (plain, _) = mlp_forward(&spec(), w.shared(), &x, Mode::Eval).unwrap();
        assert_eq!(be, plain);
    }

    #[test]
    fn rank_one_materialization_matches() {
        let w = BatchEnsembleWeights::init(&spec(), 3, FastInit::Gaussian { sigma: 0.5 }, 5).unwrap();
        let x = batch(4, 2);
        let asg = [2, 0, 1, 2];
        let (be, _) = batch_ensemble_forward(&w, &x, &asg, Mode::Eval).unwrap();
        for (row, &m) in asg.iter().enumerate() {
            let single = Tensor::new(vec![1, 5], x.row(row).to_vec()).unwrap();
            let want = mlp_logits(&spec(), &w.member_effective(m), &single).unwrap();
            for (a, b) in be.row(row).iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn bad_assignment_rejected() {
        let w = BatchEnsembleWeights::init(&spec(), 2, FastInit::RandomSign, 5).unwrap();
        let x = batch(2, 3);
        assert!(matches!(
            batch_ensemble_forward(&w, &x, &[0, 2], Mode::Eval),
            Err(Error::Input(_))
        ));
        assert!(batch_ensemble_forward(&w, &x, &[0], Mode::Eval).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let w = BatchEnsembleWeights::init(&spec(), 2, FastInit::Gaussian { sigma: 0.3 }, 6).unwrap();
        let x = batch(5, 4);
        let labels = [0, 1, 2, 1, 0];
        let asg = [1, 0, 1, 1, 0];
        let (logits, cache) = batch_ensemble_forward(&w, &x, &asg, Mode::Eval).unwrap();
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        let grad = batch_ensemble_backward(&w, &cache, &g).unwrap();

        let loss_at = |ww: &BatchEnsembleWeights| {
            let (lg, _) = batch_ensemble_forward(ww, &x, &asg, Mode::Eval).unwrap();
            cross_entropy(&lg, &labels).unwrap().0
        };
        let fd_shared = finite_diff_grad(
            |p| loss_at(&BatchEnsembleWeights::new(spec(), 2, p.clone(), w.fast().clone()).unwrap()),
            w.shared(),
            1e-5,
        )
        .unwrap();
        let fd_fast = finite_diff_grad(
            |p| loss_at(&BatchEnsembleWeights::new(spec(), 2, w.shared().clone(), p.clone()).unwrap()),
            w.fast(),
            1e-5,
        )
        .unwrap();
        let rel = |a: &ParamVector, b: &ParamVector| {
            a.max_abs_diff(b) / a.data().iter().fold(1e-3_f64, |m, v| m.max(v.abs()))
        };
        assert!(rel(&grad.shared, &fd_shared) < 1e-5);
        assert!(rel(&grad.fast, &fd_fast) < 1e-5);
    }

    #[test]
    fn assignment_counts_are_balanced() {
        let mut rng = SeededRng::for_purpose(0, Purpose::Test, 5);
        let (n, draws) = (4, 40_000);
        let asg = assign_members(draws, n, &mut rng);
        let p = 1.0 / n as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for m in 0..n {
            let c = asg.iter().filter(|&&a| a == m).count() as f64;
            assert!((c - draws as f64 * p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn shared_init_matches_single_model() {
        let w = BatchEnsembleWeights::init(&spec(), 2, FastInit::RandomSign, 12).unwrap();
        let single = spec().init_params(&mut SeededRng::for_purpose(12, Purpose::Init, 0));
        assert_eq!(w.shared(), &single);
        assert!(w.fast().data().iter().all(|v| v.abs() == 1.0));
    }
}
