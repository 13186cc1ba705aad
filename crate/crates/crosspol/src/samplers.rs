//! Initial-estimate generators: prior-proposal importance
//! sampling-resampling, and random-walk Metropolis for problems (like
//! orbit determination) where the prior is a poor proposal.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::WeightedEnsemble;
use crate::error::{Error, Result};
use crate::fusion::{joint_log_density, LikelihoodTerm};
use crate::rng::RngStream;

use std::sync::Arc;

/// A sampler for the common prior over particles.
#[derive(Clone)]
pub struct PriorSampler {
    dim: usize,
    sample: Arc<dyn Fn(&mut RngStream) -> Vec<f64> + Send + Sync>,
}

impl PriorSampler {
    pub fn new(dim: usize, sample: impl Fn(&mut RngStream) -> Vec<f64> + Send + Sync + 'static) -> Self {
        PriorSampler {
            dim,
            sample: Arc::new(sample),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        (self.sample)(rng)
    }
}

impl std::fmt::Debug for PriorSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PriorSampler").field("dim", &self.dim).finish()
    }
}

/// Importance sampling-resampling against the common prior: draw `n`
/// prior particles, log-weight each by the sum of the given
/// log-likelihoods, and multinomially resample back to `n` equally
/// weighted particles.
///
/// An empty likelihood list degenerates to a resampled prior draw.
pub fn importance_resample_init(
    prior: &PriorSampler,
    likelihoods: &[LikelihoodTerm],
    n: usize,
    rng: &mut RngStream,
) -> Result<WeightedEnsemble> {
    if n == 0 {
        return Err(Error::invalid("ensemble size must be >= 1"));
    }
    let dim = prior.dim();
    let mut particles = Vec::with_capacity(n * dim);
    let mut log_weights = Vec::with_capacity(n);
    for _ in 0..n {
        let p = prior.sample(rng);
        debug_assert_eq!(p.len(), dim);
        log_weights.push(joint_log_density(likelihoods, &p));
        particles.extend_from_slice(&p);
    }
    let weighted = WeightedEnsemble::new(particles, dim, log_weights)?;
    weighted.multinomial_resample(n, rng)
}

/// Output of a random-walk Metropolis run: the kept samples as a
/// uniformly weighted ensemble, plus the overall acceptance rate.
#[derive(Debug)]
pub struct McmcResult {
    pub ensemble: WeightedEnsemble,
    pub acceptance_rate: f64,
}

/// Random-walk Metropolis with independent per-dimension Gaussian
/// proposal scales.
///
/// Runs `burn_in + n_samples * thin` iterations, discards the burn-in,
/// and keeps every `thin`-th state thereafter. The accept test is done
/// in the log domain; a proposal with a higher target value is always
/// accepted.
pub fn random_walk_metropolis(
    log_target: impl Fn(&[f64]) -> f64,
    init: &[f64],
    step_scales: &[f64],
    n_samples: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut RngStream,
) -> Result<McmcResult> {
    let dim = init.len();
    if dim == 0 {
        return Err(Error::invalid("chain state must have dimension >= 1"));
    }
    if step_scales.len() != dim {
        return Err(Error::invalid(format!(
            "{} step scales for dimension {dim}",
            step_scales.len()
        )));
    }
    if step_scales.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(Error::invalid("step scales must be finite and >= 0"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    if thin == 0 {
        return Err(Error::invalid("thin must be >= 1"));
    }

    let mut x = init.to_vec();
    let mut log_px = log_target(&x);
    if !log_px.is_finite() {
        return Err(Error::invalid(
            "log-target must be finite at the chain's initial state",
        ));
    }

    let total = burn_in + n_samples * thin;
    let mut kept = Vec::with_capacity(n_samples * dim);
    let mut proposal = vec![0.0; dim];
    let mut accepted = 0usize;

    for it in 0..total {
        for (p, (xi, s)) in proposal.iter_mut().zip(x.iter().zip(step_scales)) {
            let z: f64 = StandardNormal.sample(rng);
            *p = xi + z * s;
        }
        let log_py = log_target(&proposal);
        if log_py.is_nan() {
            return Err(Error::contract("log-target returned NaN"));
        }
        let accept = if log_py >= log_px {
            true
        } else {
            let u: f64 = rng.random();
            u.ln() < log_py - log_px
        };
        if accept {
            x.copy_from_slice(&proposal);
            log_px = log_py;
            accepted += 1;
        }
        if it >= burn_in && (it - burn_in + 1) % thin == 0 {
            kept.extend_from_slice(&x);
        }
    }

    let ensemble = WeightedEnsemble::uniform(kept, dim)?;
    Ok(McmcResult {
        ensemble,
        acceptance_rate: accepted as f64 / total as f64,
    })
}
