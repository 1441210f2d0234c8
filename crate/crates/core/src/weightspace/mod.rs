//! Weight-space algebra for ensembles and subspaces.

mod batch;

use rand_distr::{Distribution, Exp1};

use crate::numkit::{MlpSpec, ParamVector, Purpose, SeededRng};
use crate::{Error, Result};

pub use batch::{
    assign_members, batch_ensemble_backward, batch_ensemble_forward, BatchEnsembleCache,
    BatchEnsembleGrad, BatchEnsembleWeights, FastInit,
};

/// `n` models sharing one parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights {
    members: Vec<ParamVector>,
}

impl EnsembleWeights {
    pub fn new(members: Vec<ParamVector>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::input("an ensemble needs at least one member"))?;
        for (i, m) in members.iter().enumerate().skip(1) {
            first.check_layout(m, &format!("ensemble member {}", i + 1))?;
        }
        Ok(Self { members })
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[ParamVector] {
        &self.members
    }

    pub fn member(&self, i: usize) -> &ParamVector {
        &self.members[i]
    }

    pub(crate) fn members_mut(&mut self) -> &mut [ParamVector] {
        &mut self.members
    }

    pub fn into_members(self) -> Vec<ParamVector> {
        self.members
    }

    pub fn is_finite(&self) -> bool {
        self.members.iter().all(ParamVector::is_finite)
    }
}

/// Convex weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    alpha: Vec<f64>,
}

impl SimplexPoint {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::input("simplex point needs at least one coordinate"));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::input(format!("simplex coordinates must be >= 0: {alpha:?}")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::input(format!("simplex coordinates sum to {sum}")));
        }
        Ok(Self { alpha })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1, "simplex of dimension 0");
        Self {
            alpha: vec![1.0 / n as f64; n],
        }
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(i < n, "vertex {i} of an {n}-simplex");
        let mut alpha = vec![0.0; n];
        alpha[i] = 1.0;
        Self { alpha }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }
}

/// Uniform draw from the simplex: normalized i.i.d. Exp(1) variates.
pub fn sample_simplex(n: usize, rng: &mut SeededRng) -> SimplexPoint {
    assert!(n >= 1, "simplex of dimension 0");
    if n == 1 {
        return SimplexPoint { alpha: vec![1.0] };
    }
    let mut e: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= sum);
    SimplexPoint { alpha: e }
}

/// `Σ α_i ω_i`, accumulated member by member.
pub fn convex_combine(w: &EnsembleWeights, alpha: &SimplexPoint) -> Result<ParamVector> {
    if alpha.n() != w.n() {
        return Err(Error::input(format!(
            "simplex point has {} coordinates for {} members",
            alpha.n(),
            w.n()
        )));
    }
    let mut out = ParamVector::zeros(w.member(0).layout().clone());
    for (m, &a) in w.members().iter().zip(alpha.alpha()) {
        out.axpy(a, m)?;
    }
    Ok(out)
}

pub fn midpoint(w: &EnsembleWeights) -> ParamVector {
    convex_combine(w, &SimplexPoint::uniform(w.n())).expect("uniform point matches n")
}

/// Member gradients `α_i · g` of a loss evaluated at the mixed point.
pub fn subspace_grad_distribute(grad_mixed: &ParamVector, alpha: &SimplexPoint) -> Vec<ParamVector> {
    alpha.alpha().iter().map(|&a| grad_mixed.scaled(a)).collect()
}

/// `θ ∘ ε` with `ε ~ N(1, σ)` drawn per coordinate.
pub fn multiplicative_perturb(params: &ParamVector, sigma: f64, rng: &mut SeededRng) -> Result<ParamVector> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::input(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let data = params
        .data()
        .iter()
        .map(|&x| x * (1.0 + sigma * rng.normal()))
        .collect();
    params.with_data(data)
}

/// Member 1 is a fresh fan-in init; member `i > 1` is member 1 times
/// `N(1, sigma_init)` noise from its own stream.
pub fn init_ensemble(spec: &MlpSpec, n: usize, sigma_init: f64, seed: u64) -> Result<EnsembleWeights> {
    if n == 0 {
        return Err(Error::input("n_models must be >= 1"));
    }
    let first = spec.init_params(&mut SeededRng::for_purpose(seed, Purpose::Init, 0));
    let mut members = Vec::with_capacity(n);
    for i in 1..n {
        let mut rng = SeededRng::for_purpose(seed, Purpose::MemberSpread, i as u64);
        members.push(multiplicative_perturb(&first, sigma_init, &mut rng)?);
    }
    members.insert(0, first);
    EnsembleWeights::new(members)
}
