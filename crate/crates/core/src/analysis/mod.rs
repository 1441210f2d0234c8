//! Weight-space diagnostics and the FLOPS cost model.

mod flops;
mod hessian;
mod landscape;

pub use flops::{flops_report, forward_flops, FlopsMethod, FlopsReport};
pub use hessian::{hessian_top_eigs, hessian_top_eigs_with, hvp, HessianSpectrum, HVP_DELTA};
pub use landscape::{
    eval_linear_path, eval_linear_path_with, eval_noise_robustness, eval_simplex_grid, linear_path, simplex_grid_points,
    GridPoint, NoisePoint, PathEval, SimplexGrid,
};
