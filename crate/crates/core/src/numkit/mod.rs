//! Dense tensors, flat parameter vectors, the fixed MLP family with hand-written
//! backpropagation, softmax cross-entropy and a finite-difference oracle.

mod fd;
mod loss;
mod mlp;
mod params;
mod rng;
mod tensor;

pub use fd::finite_diff_grad;
pub use loss::{cross_entropy, softmax_rows};
pub use mlp::{accuracy, evaluate, mlp_backward, mlp_forward, mlp_logits, Activation, ForwardCache, MlpSpec, Mode};
pub use params::{LayerSlot, Layout, ParamVector};
pub use rng::{Purpose, SeededRng};
pub use tensor::Tensor;

pub(crate) use mlp::{dense_backward, dense_forward, RowScales};
