//! Weighted particle ensembles and the log-domain weight arithmetic,
//! resampling, perturbation, and moment diagnostics shared by every
//! fusion scheme.
//!
//! Weights are kept as unnormalized natural-log values throughout.
//! Products of many likelihoods underflow quickly in the linear domain,
//! so all weight algebra happens as sums of logs and is only
//! exponentiated after a max-shifted normalization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// `N` particles of common dimension `d` with unnormalized log-weights.
///
/// This is the concrete realization of every discrete (Dirac-mixture)
/// measure handled by the fusion schemes: an initial single-source
/// estimate, a cross-epoch weighted estimate, a pooled measure, or a
/// resampled output.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    /// Row-major `n x dim` storage.
    particles: Vec<f64>,
    dim: usize,
    log_weights: Vec<f64>,
    /// Optional tag recording which data partition the particles came from.
    seed_lineage: Option<usize>,
}

impl WeightedEnsemble {
    /// Build an ensemble from flat row-major particle storage.
    ///
    /// Requires at least one particle, finite particle coordinates, and at
    /// least one finite log-weight (`-inf` marks individual zero-density
    /// particles; an all-`-inf` ensemble is an error state, never a value).
    pub fn new(particles: Vec<f64>, dim: usize, log_weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("particle dimension must be >= 1"));
        }
        if particles.is_empty() {
            return Err(Error::invalid("ensemble must contain at least one particle"));
        }
        if particles.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "particle storage length {} is not a multiple of dim {}",
                particles.len(),
                dim
            )));
        }
        let n = particles.len() / dim;
        if log_weights.len() != n {
            return Err(Error::invalid(format!(
                "{} log-weights for {} particles",
                log_weights.len(),
                n
            )));
        }
        if particles.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("particle coordinates must be finite"));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::invalid("log-weights must not be NaN or +inf"));
        }
        if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(Error::TotalWeightCollapse);
        }
        Ok(WeightedEnsemble {
            particles,
            dim,
            log_weights,
            seed_lineage: None,
        })
    }

    /// Build a uniformly weighted ensemble (`log w = -ln n` for each particle).
    pub fn uniform(particles: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || particles.is_empty() || particles.len() % dim != 0 {
            return WeightedEnsemble::new(particles, dim, vec![0.0]);
        }
        let n = particles.len() / dim;
        let lw = -(n as f64).ln();
        WeightedEnsemble::new(particles, dim, vec![lw; n])
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor guarantees n >= 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.particles.chunks_exact(self.dim)
    }

    pub fn particle_storage(&self) -> &[f64] {
        &self.particles
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Replace the log-weights, re-validating the ensemble invariants.
    pub fn set_log_weights(&mut self, log_weights: Vec<f64>) -> Result<()> {
        if log_weights.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} log-weights for {} particles",
                log_weights.len(),
                self.len()
            )));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::invalid("log-weights must not be NaN or +inf"));
        }
        if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(Error::TotalWeightCollapse);
        }
        self.log_weights = log_weights;
        Ok(())
    }

    pub fn seed_lineage(&self) -> Option<usize> {
        self.seed_lineage
    }

    pub fn with_seed_lineage(mut self, lineage: Option<usize>) -> Self {
        self.seed_lineage = lineage;
        self
    }

    /// Normalized linear weights and the log-normalizer. See
    /// [`normalize_log_weights`].
    pub fn normalized_weights(&self) -> Result<(Vec<f64>, f64)> {
        normalize_log_weights(&self.log_weights)
    }

    /// True when all log-weights are equal to within an absolute slack,
    /// i.e. the ensemble is (up to normalization) uniformly weighted.
    pub fn has_uniform_weights(&self) -> bool {
        let first = self.log_weights[0];
        self.log_weights.iter().all(|w| (w - first).abs() <= 1e-9)
    }

    /// Draw `n_out` particles i.i.d. from the categorical distribution the
    /// weights define. Output weights are uniform (`log w = -ln n_out`).
    pub fn multinomial_resample(&self, n_out: usize, rng: &mut RngStream) -> Result<Self> {
        let (weights, _) = self.normalized_weights()?;
        let indices = multinomial_resample_indices(&weights, n_out, rng)?;
        let mut particles = Vec::with_capacity(n_out * self.dim);
        for &i in &indices {
            particles.extend_from_slice(self.particle(i));
        }
        let out = WeightedEnsemble::uniform(particles, self.dim)?;
        Ok(out.with_seed_lineage(self.seed_lineage))
    }

    /// Add independent zero-mean Gaussian jitter with per-dimension standard
    /// deviation `bandwidth`. Weights are unchanged.
    pub fn perturb(&self, bandwidth: &[f64], rng: &mut RngStream) -> Result<Self> {
        if bandwidth.len() != self.dim {
            return Err(Error::invalid(format!(
                "bandwidth has {} entries for dimension {}",
                bandwidth.len(),
                self.dim
            )));
        }
        if bandwidth.iter().any(|b| *b < 0.0 || !b.is_finite()) {
            return Err(Error::invalid("bandwidth entries must be finite and >= 0"));
        }
        let mut particles = self.particles.clone();
        for chunk in particles.chunks_exact_mut(self.dim) {
            for (x, &b) in chunk.iter_mut().zip(bandwidth) {
                let z: f64 = StandardNormal.sample(rng);
                *x += z * b;
            }
        }
        let mut out = self.clone();
        out.particles = particles;
        Ok(out)
    }

    /// Weighted moments of coordinate `dim`: mean, central variance, and
    /// standardized skewness / kurtosis (kurtosis is non-excess, so a
    /// Gaussian reports 3). Skewness and kurtosis are `None` when the
    /// variance is zero rather than propagating NaN.
    ///
    /// Estimators are plain plug-in expectations under the normalized
    /// discrete measure; no small-sample bias correction is applied.
    pub fn moments(&self, dim: usize) -> Result<Moments> {
        if dim >= self.dim {
            return Err(Error::invalid(format!(
                "moment dimension {} out of range for d={}",
                dim, self.dim
            )));
        }
        let (weights, _) = self.normalized_weights()?;
        let mut mean = 0.0;
        for (w, p) in weights.iter().zip(self.particles()) {
            mean += w * p[dim];
        }
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for (w, p) in weights.iter().zip(self.particles()) {
            let d = p[dim] - mean;
            let d2 = d * d;
            m2 += w * d2;
            m3 += w * d2 * d;
            m4 += w * d2 * d2;
        }
        let (skewness, kurtosis) = if m2 > 0.0 {
            (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2)))
        } else {
            (None, None)
        };
        Ok(Moments {
            mean,
            variance: m2,
            skewness,
            kurtosis,
        })
    }
}

/// First four weighted moments of one ensemble coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    /// Standardized third moment; `None` when the variance is zero.
    pub skewness: Option<f64>,
    /// Standardized fourth moment, non-excess (Gaussian = 3); `None` when
    /// the variance is zero.
    pub kurtosis: Option<f64>,
}

/// `log(sum_i exp(x_i))`, max-shifted so that inputs anywhere in the f64
/// exponent range (log-weights up to around +-700 and far beyond) neither
/// overflow nor underflow. Returns `-inf` for an all-`-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        // all -inf, or a +inf/NaN input dominates either way
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalize unnormalized log-weights.
///
/// Returns `(weights, log_normalizer)` with `weights[i] =
/// exp(log_w[i] - logsumexp(log_w))` summing to one, and `log_normalizer =
/// logsumexp(log_w)`.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<(Vec<f64>, f64)> {
    if log_w.is_empty() {
        return Err(Error::invalid("cannot normalize an empty weight vector"));
    }
    if log_w.iter().any(|w| w.is_nan()) {
        return Err(Error::contract("log-weights contain NaN"));
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::TotalWeightCollapse);
    }
    let exps: Vec<f64> = log_w.iter().map(|&w| (w - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_norm = max + sum.ln();
    let weights = exps.iter().map(|e| e / sum).collect();
    Ok((weights, log_norm))
}

/// Effective sample size `1 / sum_i w_i^2` of normalized weights.
///
/// Always in `[1, N]`; equals `N` exactly when the weights are uniform and
/// degrades toward 1 as mass concentrates on a single particle.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::invalid("cannot compute ESS of an empty weight vector"));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::contract("weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "weights sum to {sum}, expected 1 within 1e-9"
        )));
    }
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(1.0 / sum_sq)
}

/// Draw `n_out` indices i.i.d. from the categorical distribution given by
/// normalized `weights` (inverse-CDF with binary search per draw).
pub fn multinomial_resample_indices(
    weights: &[f64],
    n_out: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if n_out == 0 {
        return Err(Error::invalid("n_out must be >= 1"));
    }
    if weights.is_empty() {
        return Err(Error::invalid("cannot resample from an empty weight vector"));
    }
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let last = weights.len() - 1;
    let mut indices = Vec::with_capacity(n_out);
    for _ in 0..n_out {
        let u: f64 = rng.random::<f64>() * total;
        // first index with cdf > u; zero-weight particles are never selected
        let i = cdf.partition_point(|&c| c <= u).min(last);
        indices.push(i);
    }
    Ok(indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand_distr::Gamma;

    fn stream(id: u64) -> RngStream {
        RngStream::new(0xC0FFEE, id)
    }

    #[test]
    fn normalize_symmetric() {
        let (w, logz) = normalize_log_weights(&[0.0, 0.0, 0.0]).unwrap();
        for wi in &w {
            assert_abs_diff_eq!(*wi, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(logz, 3.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn normalize_analytic_softmax() {
        let (w, logz) = normalize_log_weights(&[3.0f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(logz, 4.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn normalize_far_below_underflow_threshold() {
        // adding a -1000 shift costs ~1e-13 to f64 cancellation in the
        // exponent; the weights are still softmax(0, ln 2)
        let (w, logz) = normalize_log_weights(&[-1000.0, -1000.0 + 2.0f64.ln()]).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(logz, -1000.0 + 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normalize_handles_extreme_magnitudes() {
        // log-weights at +-700 are fine: the max-shift keeps every exp in range
        let (w, _) = normalize_log_weights(&[700.0, 700.0 - 1.0, -700.0]).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_total_collapse_errors() {
        let err = normalize_log_weights(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap_err();
        assert!(matches!(err, Error::TotalWeightCollapse));
    }

    #[test]
    fn ess_uniform_is_n() {
        let w = vec![0.01; 100];
        assert_abs_diff_eq!(effective_sample_size(&w).unwrap(), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn ess_degenerate_is_one() {
        let mut w = vec![0.0; 10];
        w[3] = 1.0;
        assert_abs_diff_eq!(effective_sample_size(&w).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ess_two_equal_halves() {
        let w = vec![0.5, 0.5, 0.0, 0.0];
        assert_abs_diff_eq!(effective_sample_size(&w).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ess_rejects_unnormalized() {
        let err = effective_sample_size(&[0.5, 0.6]).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn resample_degenerate_weight_forces_copies() {
        let e = WeightedEnsemble::new(
            vec![1.0, 2.0, 3.0],
            1,
            vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
        )
        .unwrap();
        let out = e.multinomial_resample(50, &mut stream(1)).unwrap();
        assert_eq!(out.len(), 50);
        assert!(out.particles().all(|p| p[0] == 2.0));
        let lw = -(50f64).ln();
        for w in out.log_weights() {
            assert_abs_diff_eq!(*w, lw, epsilon = 1e-15);
        }
    }

    #[test]
    fn resample_counts_match_multinomial_law() {
        // uniform weights over 4 particles, n_out = 1e5: per-particle counts
        // within 4 sigma of Binomial(1e5, 1/4)
        let n_out = 100_000usize;
        let e = WeightedEnsemble::uniform(vec![0.0, 1.0, 2.0, 3.0], 1).unwrap();
        let out = e.multinomial_resample(n_out, &mut stream(2)).unwrap();
        let mut counts = [0usize; 4];
        for p in out.particles() {
            counts[p[0] as usize] += 1;
        }
        let expected = n_out as f64 * 0.25;
        let sigma = (n_out as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!(
                (c as f64 - expected).abs() < 4.0 * sigma,
                "count {c} outside 4 sigma of {expected}"
            );
        }
    }

    #[test]
    fn resample_rejects_zero_output() {
        let e = WeightedEnsemble::uniform(vec![0.0, 1.0], 1).unwrap();
        let err = e.multinomial_resample(0, &mut stream(3)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn perturb_zero_bandwidth_is_identity() {
        let e = WeightedEnsemble::uniform(vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let out = e.perturb(&[0.0, 0.0], &mut stream(4)).unwrap();
        assert_eq!(out.particle_storage(), e.particle_storage());
        assert_eq!(out.log_weights(), e.log_weights());
    }

    #[test]
    fn perturb_unit_bandwidth_sample_sd() {
        let n = 100_000usize;
        let e = WeightedEnsemble::uniform(vec![0.0; n], 1).unwrap();
        let out = e.perturb(&[1.0], &mut stream(5)).unwrap();
        let m = out.moments(0).unwrap();
        assert_relative_eq!(m.variance.sqrt(), 1.0, max_relative = 0.01);
    }

    #[test]
    fn perturb_rejects_bandwidth_shape_mismatch() {
        let e = WeightedEnsemble::uniform(vec![0.0, 0.0], 2).unwrap();
        let err = e.perturb(&[1.0], &mut stream(6)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn moments_single_particle() {
        let e = WeightedEnsemble::uniform(vec![7.0], 1).unwrap();
        let m = e.moments(0).unwrap();
        assert_abs_diff_eq!(m.mean, 7.0);
        assert_abs_diff_eq!(m.variance, 0.0);
        assert!(m.skewness.is_none());
        assert!(m.kurtosis.is_none());
    }

    #[test]
    fn moments_two_point_symmetric() {
        let e = WeightedEnsemble::uniform(vec![0.0, 2.0], 1).unwrap();
        let m = e.moments(0).unwrap();
        assert_abs_diff_eq!(m.mean, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.variance, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.skewness.unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn moments_match_analytic_gamma() {
        // 1e6 iid draws from Gamma(shape 41.5, scale 0.125):
        // mean 5.1875 within 0.01, variance 0.6484375 within 0.02
        let mut rng = stream(7);
        let gamma = Gamma::new(41.5, 0.125).unwrap();
        let draws: Vec<f64> = (0..1_000_000).map(|_| gamma.sample(&mut rng)).collect();
        let e = WeightedEnsemble::uniform(draws, 1).unwrap();
        let m = e.moments(0).unwrap();
        assert!((m.mean - 5.1875).abs() < 0.01, "mean {}", m.mean);
        assert!((m.variance - 0.6484375).abs() < 0.02, "var {}", m.variance);
    }

    #[test]
    fn ensemble_rejects_all_collapsed_weights() {
        let err =
            WeightedEnsemble::new(vec![0.0], 1, vec![f64::NEG_INFINITY]).unwrap_err();
        assert!(matches!(err, Error::TotalWeightCollapse));
    }

    #[test]
    fn ensemble_rejects_shape_mismatch() {
        let err = WeightedEnsemble::new(vec![0.0, 1.0, 2.0], 2, vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
