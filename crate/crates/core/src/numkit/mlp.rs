//! Fully connected ReLU networks with an explicit forward cache.
//!
//! Layer `i` owns two slots, `fc{i}.weight` with shape `(in, out)` and
//! `fc{i}.bias` with shape `(out,)`, so a batch `x` of shape `(b, in)` maps to
//! `x · W + b`. Dropout is inverted dropout on hidden activations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{cross_entropy, LayerSlot, Layout, ParamVector, SeededRng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    output_dim: usize,
    activation: Activation,
    dropout_rate: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
            dropout_rate: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        self.dropout_rate = rate;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::input("all MLP dimensions must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::input(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// `(in, out)` for every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(k, l)| k * l + l).sum()
    }

    /// Offsets of `(weight, bias)` for each layer.
    pub(crate) fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layer_dims()
            .into_iter()
            .map(|(k, l)| {
                let w = off;
                off += k * l;
                let b = off;
                off += l;
                (w, b)
            })
            .collect()
    }

    pub fn layout(&self) -> Arc<Layout> {
        let mut slots = Vec::new();
        for (i, ((k, l), (w, b))) in self.layer_dims().into_iter().zip(self.offsets()).enumerate() {
            slots.push(LayerSlot {
                name: format!("fc{}.weight", i + 1),
                offset: w,
                shape: vec![k, l],
            });
            slots.push(LayerSlot {
                name: format!("fc{}.bias", i + 1),
                offset: b,
                shape: vec![l],
            });
        }
        Arc::new(Layout::new(slots).expect("mlp layout is contiguous"))
    }

    /// Fan-in scaled uniform init: every weight and bias of a layer with
    /// fan-in `k` is drawn from `U(-1/sqrt(k), 1/sqrt(k))`.
    pub fn init_params(&self, rng: &mut SeededRng) -> ParamVector {
        let mut data = Vec::with_capacity(self.param_count());
        for (k, l) in self.layer_dims() {
            let bound = 1.0 / (k as f64).sqrt();
            for _ in 0..k * l + l {
                data.push(bound * (2.0 * rng.uniform() - 1.0));
            }
        }
        ParamVector::new(self.layout(), data).expect("init matches layout")
    }

    pub(crate) fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() || **params.layout() != *self.layout() {
            return Err(Error::dim(
                "parameters",
                format!("{} values in the MLP layout", self.param_count()),
                format!("{} values", params.len()),
            ));
        }
        Ok(())
    }
}

pub enum Mode<'a> {
    Eval,
    /// Training pass; the generator supplies dropout masks.
    Train(&'a mut SeededRng),
}

/// Per-example multiplicative factors applied around one dense layer:
/// `((x ∘ input) · W) ∘ output + b`. Both are row-major, `(b, in)` and `(b, out)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RowScales {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Vec<(usize, usize)>,
    batch: usize,
    params: ParamVector,
    inputs: Vec<Vec<f64>>,
    products: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    scales: Option<Vec<RowScales>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

pub fn mlp_forward(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &Tensor,
    mode: Mode<'_>,
) -> Result<(Tensor, ForwardCache)> {
    dense_forward(spec, params, batch, mode, None)
}

/// Eval-mode logits without keeping a cache.
pub fn mlp_logits(spec: &MlpSpec, params: &ParamVector, batch: &Tensor) -> Result<Tensor> {
    dense_forward(spec, params, batch, Mode::Eval, None).map(|(logits, _)| logits)
}

/// Mean cross-entropy and accuracy of eval-mode predictions.
pub fn evaluate(spec: &MlpSpec, params: &ParamVector, batch: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    let logits = mlp_logits(spec, params, batch)?;
    let (loss, _) = cross_entropy(&logits, labels)?;
    Ok((loss, accuracy(&logits, labels)))
}

/// Fraction of rows whose first maximal logit is the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let k = logits.cols();
    let hits = logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn mlp_backward(spec: &MlpSpec, cache: &ForwardCache, grad_logits: &Tensor) -> Result<ParamVector> {
    if cache.scales.is_some() {
        return Err(Error::Internal(
            "cache came from a batch-ensemble pass; use the batch-ensemble backward".into(),
        ));
    }
    dense_backward(spec, cache, grad_logits).map(|(g, _)| g)
}

pub(crate) fn dense_forward(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &Tensor,
    mode: Mode<'_>,
    scales: Option<Vec<RowScales>>,
) -> Result<(Tensor, ForwardCache)> {
    spec.validate()?;
    spec.check_params(params)?;
    let dims = spec.layer_dims();
    let b = batch.rows();
    if batch.shape().len() != 2 || batch.cols() != spec.input_dim() {
        return Err(Error::dim(
            "fc1 input",
            format!("(batch, {})", spec.input_dim()),
            format!("{:?}", batch.shape()),
        ));
    }
    if let Some(sc) = &scales {
        if sc.len() != dims.len()
            || sc
                .iter()
                .zip(&dims)
                .any(|(s, (k, l))| s.input.len() != b * k || s.output.len() != b * l)
        {
            return Err(Error::Internal("row scales do not match the layer shapes".into()));
        }
    }

    let mut rng = match mode {
        Mode::Train(rng) => Some(rng),
        Mode::Eval => None,
    };
    let q = spec.dropout_rate();
    let keep_scale = 1.0 / (1.0 - q);
    let w = params.data();
    let offsets = spec.offsets();
    let last = dims.len() - 1;

    let mut inputs = Vec::with_capacity(dims.len());
    let mut products = Vec::new();
    let mut pre = Vec::with_capacity(last);
    let mut masks = Vec::with_capacity(last);
    let mut a = batch.data().to_vec();
    let mut logits = Vec::new();

    for (li, &(k, l)) in dims.iter().enumerate() {
        let (w_off, b_off) = offsets[li];
        let weight = &w[w_off..w_off + k * l];
        let bias = &w[b_off..b_off + l];
        let layer_scales = scales.as_ref().map(|s| &s[li]);

        let scaled_input;
        let u: &[f64] = match layer_scales {
            Some(s) => {
                scaled_input = a.iter().zip(&s.input).map(|(x, r)| x * r).collect::<Vec<_>>();
                &scaled_input
            }
            None => &a,
        };
        let mut v = vec![0.0; b * l];
        matmul_acc(u, weight, &mut v, b, k, l);

        let mut z = v.clone();
        if let Some(s) = layer_scales {
            z.iter_mut().zip(&s.output).for_each(|(zv, sv)| *zv *= sv);
            products.push(v);
        }
        for row in z.chunks_exact_mut(l) {
            row.iter_mut().zip(bias).for_each(|(zv, bv)| *zv += bv);
        }
        inputs.push(std::mem::take(&mut a));

        if li == last {
            logits = z;
            break;
        }
        let mut h: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        let mask = match rng.as_deref_mut() {
            Some(r) if q > 0.0 => {
                let m: Vec<f64> = (0..h.len())
                    .map(|_| if r.uniform() < q { 0.0 } else { keep_scale })
                    .collect();
                h.iter_mut().zip(&m).for_each(|(hv, mv)| *hv *= mv);
                Some(m)
            }
            _ => None,
        };
        masks.push(mask);
        pre.push(z);
        a = h;
    }

    let out = Tensor::new(vec![b, spec.output_dim()], logits)?;
    let cache = ForwardCache {
        dims,
        batch: b,
        params: params.clone(),
        inputs,
        products,
        pre,
        masks,
        scales,
    };
    Ok((out, cache))
}

/// Returns the parameter gradient and, for scaled passes, the gradient with
/// respect to every row scale.
pub(crate) fn dense_backward(
    spec: &MlpSpec,
    cache: &ForwardCache,
    grad_logits: &Tensor,
) -> Result<(ParamVector, Option<Vec<RowScales>>)> {
    if cache.dims != spec.layer_dims() || cache.inputs.len() != cache.dims.len() {
        return Err(Error::Internal("forward cache does not belong to this MLP".into()));
    }
    let b = cache.batch;
    if grad_logits.shape() != [b, spec.output_dim()] {
        return Err(Error::Internal(format!(
            "stale forward cache: gradient shape {:?} vs cached batch ({b}, {})",
            grad_logits.shape(),
            spec.output_dim()
        )));
    }
    let offsets = spec.offsets();
    let w = cache.params.data();
    let mut grad = ParamVector::zeros(cache.params.layout().clone());
    let mut scale_grads: Vec<RowScales> = Vec::new();
    let mut dz = grad_logits.data().to_vec();

    for li in (0..cache.dims.len()).rev() {
        let (k, l) = cache.dims[li];
        let (w_off, b_off) = offsets[li];
        let a = &cache.inputs[li];
        let layer_scales = cache.scales.as_ref().map(|s| &s[li]);

        {
            let g = grad.data_mut();
            for row in dz.chunks_exact(l) {
                g[b_off..b_off + l].iter_mut().zip(row).for_each(|(gb, d)| *gb += d);
            }
        }

        let (dv, ds) = match layer_scales {
            Some(s) => {
                let v = &cache.products[li];
                let ds: Vec<f64> = dz.iter().zip(v).map(|(d, v)| d * v).collect();
                let dv: Vec<f64> = dz.iter().zip(&s.output).map(|(d, s)| d * s).collect();
                (dv, Some(ds))
            }
            None => (std::mem::take(&mut dz), None),
        };

        let scaled_input;
        let u: &[f64] = match layer_scales {
            Some(s) => {
                scaled_input = a.iter().zip(&s.input).map(|(x, r)| x * r).collect::<Vec<_>>();
                &scaled_input
            }
            None => a,
        };
        {
            let gw = &mut grad.data_mut()[w_off..w_off + k * l];
            for i in 0..b {
                let dv_row = &dv[i * l..(i + 1) * l];
                for kk in 0..k {
                    let x = u[i * k + kk];
                    if x != 0.0 {
                        gw[kk * l..(kk + 1) * l]
                            .iter_mut()
                            .zip(dv_row)
                            .for_each(|(g, d)| *g += x * d);
                    }
                }
            }
        }

        let need_du = li > 0 || layer_scales.is_some();
        let du = if need_du {
            let weight = &w[w_off..w_off + k * l];
            let mut du = vec![0.0; b * k];
            for i in 0..b {
                let dv_row = &dv[i * l..(i + 1) * l];
                for kk in 0..k {
                    du[i * k + kk] = dot(dv_row, &weight[kk * l..(kk + 1) * l]);
                }
            }
            du
        } else {
            Vec::new()
        };

        let da = match layer_scales {
            Some(s) => {
                let dr: Vec<f64> = du.iter().zip(a).map(|(d, x)| d * x).collect();
                scale_grads.push(RowScales {
                    input: dr,
                    output: ds.expect("scaled layer records output grads"),
                });
                du.iter().zip(&s.input).map(|(d, r)| d * r).collect()
            }
            None => du,
        };

        if li > 0 {
            let z = &cache.pre[li - 1];
            let mask = cache.masks[li - 1].as_deref();
            dz = da
                .iter()
                .enumerate()
                .map(|(idx, &d)| {
                    if z[idx] > 0.0 {
                        mask.map_or(d, |m| d * m[idx])
                    } else {
                        0.0
                    }
                })
                .collect();
        }
    }

    let scale_grads = cache.scales.as_ref().map(|_| {
        scale_grads.reverse();
        scale_grads
    });
    Ok((grad, scale_grads))
}

/// `out += x · w` for row-major `x: (b, k)`, `w: (k, l)`, `out: (b, l)`.
fn matmul_acc(x: &[f64], w: &[f64], out: &mut [f64], b: usize, k: usize, l: usize) {
    for i in 0..b {
        let out_row = &mut out[i * l..(i + 1) * l];
        for kk in 0..k {
            let xv = x[i * k + kk];
            if xv != 0.0 {
                out_row
                    .iter_mut()
                    .zip(&w[kk * l..(kk + 1) * l])
                    .for_each(|(o, wv)| *o += xv * wv);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
