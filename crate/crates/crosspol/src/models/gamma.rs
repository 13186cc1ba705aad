//! Conjugate Gamma verification problem.
//!
//! A scalar rate-like quantity `x` carries a Gamma(shape `k0`, scale
//! `theta0`) prior and each observation is `y_j | x ~ Gamma(k_j, 1/x)`.
//! The posterior is again Gamma with a closed form, which makes this the
//! convergence oracle for the fusion schemes: estimated moments can be
//! compared against exact ones at any particle count.
//!
//! Parametrization is shape-scale throughout so the conjugate update
//! below holds verbatim.

use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;

use crate::ensemble::Moments;
use crate::error::{Error, Result};
use crate::fusion::LikelihoodTerm;
use crate::rng::RngStream;
use crate::samplers::PriorSampler;

/// Prior shape/scale and the observation list `(y_j, k_j)`.
#[derive(Debug, Clone)]
pub struct GammaModelParams {
    pub shape0: f64,
    pub scale0: f64,
    pub obs: Vec<GammaObs>,
}

/// One observation: the observed value and its known shape parameter.
#[derive(Debug, Clone, Copy)]
pub struct GammaObs {
    pub y: f64,
    pub shape: f64,
}

impl GammaModelParams {
    /// The reference configuration: prior Gamma(5/2, 1/2) and three
    /// observations (1, 4), (2, 10), (3, 25), whose posterior is
    /// Gamma(41.5, 0.125).
    pub fn paper_defaults() -> Self {
        GammaModelParams {
            shape0: 2.5,
            scale0: 0.5,
            obs: vec![
                GammaObs { y: 1.0, shape: 4.0 },
                GammaObs { y: 2.0, shape: 10.0 },
                GammaObs { y: 3.0, shape: 25.0 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape0 > 0.0) || !(self.scale0 > 0.0) {
            return Err(Error::invalid("prior shape and scale must be > 0"));
        }
        for (i, o) in self.obs.iter().enumerate() {
            if !(o.y > 0.0) || !(o.shape > 0.0) {
                return Err(Error::invalid(format!(
                    "observation {i} must have y > 0 and shape > 0"
                )));
            }
        }
        Ok(())
    }
}

/// Draw `n` i.i.d. samples from the prior Gamma(shape0, scale0).
pub fn prior_sample(params: &GammaModelParams, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    params.validate()?;
    let dist = rand_distr::Gamma::new(params.shape0, params.scale0)
        .map_err(|e| Error::invalid(format!("invalid gamma parameters: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// A [`PriorSampler`] over 1-dimensional particles for this model.
pub fn prior_sampler(params: &GammaModelParams) -> PriorSampler {
    let shape = params.shape0;
    let scale = params.scale0;
    let dist = rand_distr::Gamma::new(shape, scale).expect("validated parameters");
    PriorSampler::new(1, move |rng| vec![dist.sample(rng)])
}

/// Log-density of `y_j | x ~ Gamma(k_j, 1/x)`, i.e.
/// `k ln x - ln Gamma(k) + (k - 1) ln y - x y`.
///
/// Returns `-inf` outside the support (`x <= 0` or `y <= 0`), never NaN.
pub fn obs_log_likelihood(x: f64, y: f64, shape: f64) -> f64 {
    if x <= 0.0 || y <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * x.ln() - ln_gamma(shape) + (shape - 1.0) * y.ln() - x * y
}

/// The likelihood group for a single observation, over 1-dim particles.
pub fn likelihood_term(y: f64, shape: f64) -> LikelihoodTerm {
    LikelihoodTerm::new(format!("gamma obs y={y} k={shape}"), move |p| {
        obs_log_likelihood(p[0], y, shape)
    })
}

/// Conjugate posterior `(shape, scale)`: shape `k0 + sum k_j`, scale
/// `1 / (1/theta0 + sum y_j)`.
pub fn analytic_posterior(params: &GammaModelParams) -> (f64, f64) {
    let shape = params.shape0 + params.obs.iter().map(|o| o.shape).sum::<f64>();
    let scale = 1.0 / (1.0 / params.scale0 + params.obs.iter().map(|o| o.y).sum::<f64>());
    (shape, scale)
}

/// Closed-form Gamma moments: mean `k*theta`, variance `k*theta^2`, skew
/// `2/sqrt(k)`, kurtosis (non-excess) `3 + 6/k`.
pub fn posterior_moments(shape: f64, scale: f64) -> Moments {
    Moments {
        mean: shape * scale,
        variance: shape * scale * scale,
        skewness: Some(2.0 / shape.sqrt()),
        kurtosis: Some(3.0 + 6.0 / shape),
    }
}
