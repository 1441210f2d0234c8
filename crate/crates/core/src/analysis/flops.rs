//! Operation counts per forward pass. One multiply-accumulate is 2 FLOPs;
//! activations and softmax are not counted.

use serde::{Deserialize, Serialize};

use crate::numkit::MlpSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopsMethod {
    Single,
    VanillaEnsemble,
    Subspace,
    BatchEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub method: FlopsMethod,
    pub n: usize,
    pub batch_size: usize,
    pub layer_dims: Vec<(usize, usize)>,
    pub param_count: usize,
    /// One forward pass of the single model.
    pub single_forward: u64,
    /// Forward cost of this method, overhead included.
    pub forward: u64,
    pub overhead: u64,
    /// Forward plus a backward pass costed at twice the forward.
    pub training: u64,
    pub relative_ratio: f64,
}

/// `Σ 2·b·k·l + b·l` over the dense layers.
pub fn forward_flops(spec: &MlpSpec, batch_size: usize) -> u64 {
    let b = batch_size as u64;
    spec.layer_dims()
        .iter()
        .map(|&(k, l)| 2 * b * k as u64 * l as u64 + b * l as u64)
        .sum()
}

pub fn flops_report(spec: &MlpSpec, batch_size: usize, method: FlopsMethod, n: usize) -> Result<FlopsReport> {
    if n == 0 || batch_size == 0 {
        return Err(Error::input("flops report needs n >= 1 and batch_size >= 1"));
    }
    let single = forward_flops(spec, batch_size);
    let p = spec.param_count() as u64;
    let b = batch_size as u64;
    let nn = n as u64;
    let overhead = match method {
        FlopsMethod::Single => 0,
        FlopsMethod::VanillaEnsemble => (nn - 1) * single,
        // n scalings and n-1 additions of p-vectors to form the mixed weights
        FlopsMethod::Subspace => (2 * nn - 1) * p,
        // x∘R before and (xW)∘S after every layer
        FlopsMethod::BatchEnsemble => spec
            .layer_dims()
            .iter()
            .map(|&(k, l)| 2 * b * (k + l) as u64)
            .sum(),
    };
    let forward = single + overhead;
    Ok(FlopsReport {
        method,
        n,
        batch_size,
        layer_dims: spec.layer_dims(),
        param_count: spec.param_count(),
        single_forward: single,
        forward,
        overhead,
        training: 3 * forward,
        relative_ratio: forward as f64 / single as f64,
    })
}
