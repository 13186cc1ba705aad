//! Batch cross-pollination: cross-epoch weighting, pooling, and resampling
//! of single-source posterior ensembles into a joint posterior estimate.
//!
//! Each data partition `j` contributes an initial uniformly weighted
//! ensemble (its particles were importance-resampled, or MCMC-sampled,
//! against the partition's own data) together with the likelihoods of the
//! complement data. Cross-epoch weighting assigns every particle the
//! product of complement likelihoods, realizing the Radon-Nikodym
//! derivative between the single-source posterior and the full posterior.
//! The weighted ensembles are then pooled and multinomially resampled to
//! equal weights under one of three weighting schemes:
//!
//! - norming apart: weights normalized within each partition, pooled with
//!   mass `1/M` per partition;
//! - norming together: one normalization over all `M x N` weights;
//! - deterministic mixture: each particle weighted by the full likelihood
//!   product divided by the sum of group likelihoods, then normalized
//!   globally.
//!
//! The core requirement for any of this to work is that every particle
//! can be pushed through every complement likelihood; callers satisfy it
//! by constructing [`LikelihoodTerm`]s with the appropriate measurement
//! map baked in.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::ensemble::{log_sum_exp, WeightedEnsemble};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// An evaluable log-density over particles: one likelihood group `g`,
/// carrying its measurement, noise scale, and measurement map.
///
/// `log_density` must be deterministic and may return `-inf` only for
/// genuinely zero-density particles, never NaN. Normalizing constants
/// should be included: they cancel under the norming-apart and
/// norming-together schemes but matter for deterministic-mixture weights,
/// whose ratio structure is not scale-free.
#[derive(Clone)]
pub struct LikelihoodTerm {
    label: String,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl LikelihoodTerm {
    pub fn new(
        label: impl Into<String>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LikelihoodTerm {
            label: label.into(),
            eval: Arc::new(eval),
        }
    }

    /// Compose several terms into one group whose log-density is their sum,
    /// e.g. to treat a multi-measurement partition as a single likelihood
    /// group for deterministic-mixture weighting.
    pub fn product(label: impl Into<String>, terms: Vec<LikelihoodTerm>) -> Self {
        LikelihoodTerm {
            label: label.into(),
            eval: Arc::new(move |p| terms.iter().map(|t| t.log_density(p)).sum()),
        }
    }

    pub fn log_density(&self, particle: &[f64]) -> f64 {
        (self.eval)(particle)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for LikelihoodTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LikelihoodTerm")
            .field("label", &self.label)
            .finish()
    }
}

/// Sum of log-densities of `terms` at `particle` (an empty list is the
/// empty product, log 0.0).
pub fn joint_log_density(terms: &[LikelihoodTerm], particle: &[f64]) -> f64 {
    terms.iter().map(|t| t.log_density(particle)).sum()
}

/// One element of the data partition: the initial ensemble built from
/// partition `j`'s own data, plus that partition's own likelihood groups
/// and the likelihood groups of the complement data.
///
/// `own_likelihoods` is consulted only by the deterministic-mixture
/// scheme, which needs the full product over all `M` groups; the
/// norming schemes use `complement_likelihoods` alone. Together the two
/// lists must enumerate all `M` likelihood groups exactly once.
#[derive(Debug, Clone)]
pub struct FusionInput {
    pub ensemble: WeightedEnsemble,
    pub own_likelihoods: Vec<LikelihoodTerm>,
    pub complement_likelihoods: Vec<LikelihoodTerm>,
}

/// Which pooled-weight formula a fusion run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingScheme {
    NormingApart,
    NormingTogether,
    DeterministicMixture,
}

impl WeightingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            WeightingScheme::NormingApart => "apart",
            WeightingScheme::NormingTogether => "together",
            WeightingScheme::DeterministicMixture => "dm",
        }
    }
}

impl std::str::FromStr for WeightingScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "apart" | "norming-apart" => Ok(WeightingScheme::NormingApart),
            "together" | "norming-together" => Ok(WeightingScheme::NormingTogether),
            "dm" | "deterministic-mixture" => Ok(WeightingScheme::DeterministicMixture),
            other => Err(format!(
                "unknown weighting scheme '{other}' (expected apart | together | dm)"
            )),
        }
    }
}

/// The pooled `M x N` measure materialized before resampling: particles
/// from every partition with normalized pooled log-weights, plus the
/// partition index each particle came from.
#[derive(Debug, Clone)]
pub struct PooledEnsemble {
    pub ensemble: WeightedEnsemble,
    pub source_partition: Vec<usize>,
}

/// Cross-epoch weights: `log w~_j^(i) = sum_k log g_k(theta_j^(i))` over
/// the complement likelihood groups, own likelihoods excluded. An empty
/// complement (M = 1) yields all-zero log-weights.
///
/// Requires the input ensemble to carry uniform weights, as initial
/// estimates do; evaluation across particles runs in parallel with a
/// deterministic output order.
pub fn cross_epoch_log_weights(input: &FusionInput) -> Result<Vec<f64>> {
    let e = &input.ensemble;
    if !e.has_uniform_weights() {
        return Err(Error::contract(
            "cross-epoch weighting requires a uniformly weighted initial ensemble",
        ));
    }
    let lw: Vec<f64> = (0..e.len())
        .into_par_iter()
        .map(|i| joint_log_density(&input.complement_likelihoods, e.particle(i)))
        .collect();
    if let Some(i) = lw.iter().position(|w| w.is_nan()) {
        return Err(Error::contract(format!(
            "likelihood evaluation produced NaN at particle {i}"
        )));
    }
    Ok(lw)
}

fn validate_inputs(inputs: &[FusionInput]) -> Result<usize> {
    if inputs.is_empty() {
        return Err(Error::invalid("fusion requires at least one partition"));
    }
    let dim = inputs[0].ensemble.dim();
    for (j, input) in inputs.iter().enumerate() {
        if input.ensemble.dim() != dim {
            return Err(Error::invalid(format!(
                "partition {j} has dimension {} but partition 0 has {dim}",
                input.ensemble.dim()
            )));
        }
    }
    Ok(dim)
}

fn pool(
    inputs: &[FusionInput],
    pooled_log_weights: Vec<f64>,
) -> Result<PooledEnsemble> {
    let dim = inputs[0].ensemble.dim();
    let total: usize = inputs.iter().map(|i| i.ensemble.len()).sum();
    let mut particles = Vec::with_capacity(total * dim);
    let mut source_partition = Vec::with_capacity(total);
    for (j, input) in inputs.iter().enumerate() {
        particles.extend_from_slice(input.ensemble.particle_storage());
        source_partition.extend(std::iter::repeat(j).take(input.ensemble.len()));
    }
    Ok(PooledEnsemble {
        ensemble: WeightedEnsemble::new(particles, dim, pooled_log_weights)?,
        source_partition,
    })
}

/// Pool under norming-apart: cross-epoch weights normalized within each
/// partition, every partition carrying total pooled mass `1/M`. The
/// returned log-weights are normalized over the full `M x N` set.
///
/// A partition whose weights all collapse to `-inf` is a fatal
/// [`Error::PartitionCollapse`]: its "best of the bad" particle would
/// otherwise be replicated `~ n_out/M` times and bias the estimate.
pub fn pool_norming_apart(inputs: &[FusionInput]) -> Result<PooledEnsemble> {
    validate_inputs(inputs)?;
    let ln_m = (inputs.len() as f64).ln();
    let mut pooled_log_weights = Vec::new();
    for (j, input) in inputs.iter().enumerate() {
        let lw = cross_epoch_log_weights(input)?;
        let log_norm = log_sum_exp(&lw);
        if log_norm == f64::NEG_INFINITY {
            return Err(Error::PartitionCollapse { partition: j });
        }
        pooled_log_weights.extend(lw.iter().map(|&w| w - log_norm - ln_m));
    }
    pool(inputs, pooled_log_weights)
}

/// Pool under norming-together: a single normalization over all `M x N`
/// cross-epoch weights. Only a global collapse is fatal; a partition with
/// zero relative mass simply contributes nothing.
pub fn pool_norming_together(inputs: &[FusionInput]) -> Result<PooledEnsemble> {
    validate_inputs(inputs)?;
    let mut all_lw = Vec::new();
    for input in inputs {
        all_lw.extend(cross_epoch_log_weights(input)?);
    }
    let log_norm = log_sum_exp(&all_lw);
    if log_norm == f64::NEG_INFINITY {
        return Err(Error::TotalWeightCollapse);
    }
    for w in &mut all_lw {
        *w -= log_norm;
    }
    pool(inputs, all_lw)
}

/// Pool under deterministic-mixture weights: each particle's unnormalized
/// weight is the product of all `M` group likelihoods divided by their
/// unweighted sum, followed by a global normalization.
///
/// Every input's own likelihood groups must be populated, and own plus
/// complement must enumerate the same number of groups for every
/// partition. A particle with zero density under every group gets zero
/// weight.
pub fn pool_deterministic_mixture(inputs: &[FusionInput]) -> Result<PooledEnsemble> {
    validate_inputs(inputs)?;
    let n_groups = inputs[0].own_likelihoods.len() + inputs[0].complement_likelihoods.len();
    for (j, input) in inputs.iter().enumerate() {
        if input.own_likelihoods.is_empty() {
            return Err(Error::contract(format!(
                "deterministic-mixture weighting requires own likelihoods for partition {j}"
            )));
        }
        if input.own_likelihoods.len() + input.complement_likelihoods.len() != n_groups {
            return Err(Error::contract(format!(
                "partition {j} enumerates a different number of likelihood groups than partition 0"
            )));
        }
    }
    let mut all_lw = Vec::new();
    for input in inputs {
        let e = &input.ensemble;
        if !e.has_uniform_weights() {
            return Err(Error::contract(
                "deterministic-mixture weighting requires uniformly weighted initial ensembles",
            ));
        }
        let groups: Vec<&LikelihoodTerm> = input
            .own_likelihoods
            .iter()
            .chain(input.complement_likelihoods.iter())
            .collect();
        let lw: Vec<f64> = (0..e.len())
            .into_par_iter()
            .map(|i| {
                let p = e.particle(i);
                let logs: Vec<f64> = groups.iter().map(|g| g.log_density(p)).collect();
                let numerator: f64 = logs.iter().sum();
                let denominator = log_sum_exp(&logs);
                if denominator == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    numerator - denominator
                }
            })
            .collect();
        if lw.iter().any(|w| w.is_nan()) {
            return Err(Error::contract("likelihood evaluation produced NaN"));
        }
        all_lw.extend(lw);
    }
    let log_norm = log_sum_exp(&all_lw);
    if log_norm == f64::NEG_INFINITY {
        return Err(Error::TotalWeightCollapse);
    }
    for w in &mut all_lw {
        *w -= log_norm;
    }
    pool(inputs, all_lw)
}

/// Full norming-apart cross-pollination: cross-epoch weighting, pooling,
/// and a multinomial resample down to `n_out` equally weighted particles.
pub fn fuse_norming_apart(
    inputs: &[FusionInput],
    n_out: usize,
    rng: &mut RngStream,
) -> Result<WeightedEnsemble> {
    let pooled = pool_norming_apart(inputs)?;
    pooled.ensemble.multinomial_resample(n_out, rng)
}

/// Full norming-together cross-pollination.
pub fn fuse_norming_together(
    inputs: &[FusionInput],
    n_out: usize,
    rng: &mut RngStream,
) -> Result<WeightedEnsemble> {
    let pooled = pool_norming_together(inputs)?;
    pooled.ensemble.multinomial_resample(n_out, rng)
}

/// Full deterministic-mixture cross-pollination.
pub fn fuse_deterministic_mixture(
    inputs: &[FusionInput],
    n_out: usize,
    rng: &mut RngStream,
) -> Result<WeightedEnsemble> {
    let pooled = pool_deterministic_mixture(inputs)?;
    pooled.ensemble.multinomial_resample(n_out, rng)
}

/// Dispatch on the scheme.
pub fn fuse(
    scheme: WeightingScheme,
    inputs: &[FusionInput],
    n_out: usize,
    rng: &mut RngStream,
) -> Result<WeightedEnsemble> {
    match scheme {
        WeightingScheme::NormingApart => fuse_norming_apart(inputs, n_out, rng),
        WeightingScheme::NormingTogether => fuse_norming_together(inputs, n_out, rng),
        WeightingScheme::DeterministicMixture => fuse_deterministic_mixture(inputs, n_out, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::normalize_log_weights;
    use crate::models::gamma;
    use approx::assert_abs_diff_eq;

    fn stream(id: u64) -> RngStream {
        RngStream::new(0xFACADE, id)
    }

    fn constant_term(c: f64) -> LikelihoodTerm {
        LikelihoodTerm::new(format!("const {c}"), move |_| c)
    }

    fn uniform_input(values: Vec<f64>, complement: Vec<LikelihoodTerm>) -> FusionInput {
        FusionInput {
            ensemble: WeightedEnsemble::uniform(values, 1).unwrap(),
            own_likelihoods: vec![],
            complement_likelihoods: complement,
        }
    }

    #[test]
    fn empty_complement_gives_zero_log_weights() {
        let input = uniform_input(vec![1.0, 2.0, 3.0], vec![]);
        let lw = cross_epoch_log_weights(&input).unwrap();
        assert_eq!(lw, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_complement_gives_uniform_normalized_weights() {
        let input = uniform_input(vec![1.0, 2.0], vec![constant_term(-3.7)]);
        let lw = cross_epoch_log_weights(&input).unwrap();
        assert_eq!(lw, vec![-3.7, -3.7]);
        let (w, _) = normalize_log_weights(&lw).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gamma_cross_epoch_weight_matches_independent_evaluation() {
        // particle x = 5 with complement observations (y=2, k=10), (y=3, k=25);
        // expected value computed with a 40-digit log-gamma evaluation
        let input = uniform_input(
            vec![5.0],
            vec![gamma::likelihood_term(2.0, 10.0), gamma::likelihood_term(3.0, 25.0)],
        );
        let lw = cross_epoch_log_weights(&input).unwrap();
        assert_abs_diff_eq!(lw[0], -3.651210389926135, epsilon = 1e-11);
    }

    #[test]
    fn nonuniform_initial_weights_are_rejected() {
        let ensemble =
            WeightedEnsemble::new(vec![1.0, 2.0], 1, vec![0.0, 1.0]).unwrap();
        let input = FusionInput {
            ensemble,
            own_likelihoods: vec![],
            complement_likelihoods: vec![],
        };
        let err = cross_epoch_log_weights(&input).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn single_partition_norming_apart_reduces_to_resample() {
        // M = 1: empty complement, so pooled weights are uniform and the
        // output is distributionally a multinomial resample of the input
        let input = uniform_input(vec![0.0, 10.0, 20.0, 30.0], vec![]);
        let pooled = pool_norming_apart(std::slice::from_ref(&input)).unwrap();
        let (w, _) = pooled.ensemble.normalized_weights().unwrap();
        for wi in &w {
            assert_abs_diff_eq!(*wi, 0.25, epsilon = 1e-15);
        }
        let fused = fuse_norming_apart(&[input], 4, &mut stream(1)).unwrap();
        assert_eq!(fused.len(), 4);
        assert!(fused.has_uniform_weights());
    }

    #[test]
    fn constant_likelihoods_split_mass_equally_between_partitions() {
        let a = uniform_input(vec![0.0; 100], vec![constant_term(-1.0)]);
        let b = uniform_input(vec![1.0; 100], vec![constant_term(-1.0)]);
        let pooled = pool_norming_apart(&[a.clone(), b.clone()]).unwrap();
        let (w, _) = pooled.ensemble.normalized_weights().unwrap();
        assert!(w.iter().all(|wi| (wi - 0.005).abs() < 1e-12));

        // each source contributes about n_out/2 of the resampled particles
        let n_out = 10_000usize;
        let fused = fuse_norming_apart(&[a, b], n_out, &mut stream(2)).unwrap();
        let from_b = fused.particles().filter(|p| p[0] == 1.0).count();
        let sigma = (n_out as f64 * 0.25).sqrt();
        assert!(
            (from_b as f64 - n_out as f64 / 2.0).abs() < 4.0 * sigma,
            "partition split {from_b} / {n_out}"
        );
    }

    #[test]
    fn norming_together_partition_mass_follows_unnormalized_totals() {
        // partition 1 weights all e^c, partition 2 all e^(c + ln 3):
        // partition 2 receives pooled mass 0.75
        let c = -2.0;
        let a = uniform_input(vec![0.0; 50], vec![constant_term(c)]);
        let b = uniform_input(vec![1.0; 50], vec![constant_term(c + 3.0f64.ln())]);
        let pooled = pool_norming_together(&[a, b]).unwrap();
        let (w, _) = pooled.ensemble.normalized_weights().unwrap();
        let mass_b: f64 = w
            .iter()
            .zip(&pooled.source_partition)
            .filter(|(_, &j)| j == 1)
            .map(|(wi, _)| wi)
            .sum();
        assert_abs_diff_eq!(mass_b, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn partition_collapse_is_fatal_and_named() {
        let dead = LikelihoodTerm::new("dead", |_| f64::NEG_INFINITY);
        let a = uniform_input(vec![0.0, 1.0], vec![constant_term(0.0)]);
        let b = uniform_input(vec![0.0, 1.0], vec![dead]);
        let err = pool_norming_apart(&[a, b]).unwrap_err();
        match err {
            Error::PartitionCollapse { partition } => assert_eq!(partition, 1),
            other => panic!("expected PartitionCollapse, got {other:?}"),
        }
    }

    #[test]
    fn norming_together_requires_global_collapse_to_fail() {
        let dead = LikelihoodTerm::new("dead", |_| f64::NEG_INFINITY);
        let a = uniform_input(vec![0.0, 1.0], vec![constant_term(0.0)]);
        let b = uniform_input(vec![0.0, 1.0], vec![dead.clone()]);
        // one dead partition is tolerated
        let pooled = pool_norming_together(&[a, b]).unwrap();
        let (w, _) = pooled.ensemble.normalized_weights().unwrap();
        assert_abs_diff_eq!(w[0] + w[1], 1.0, epsilon = 1e-12);

        let c = uniform_input(vec![0.0, 1.0], vec![dead.clone()]);
        let d = uniform_input(vec![0.0, 1.0], vec![dead]);
        let err = pool_norming_together(&[c, d]).unwrap_err();
        assert!(matches!(err, Error::TotalWeightCollapse));
    }

    #[test]
    fn deterministic_mixture_single_partition_is_uniform() {
        // M = 1: w~ = g/g = 1 for every particle
        let g = gamma::likelihood_term(2.0, 10.0);
        let input = FusionInput {
            ensemble: WeightedEnsemble::uniform(vec![1.0, 2.0, 5.0], 1).unwrap(),
            own_likelihoods: vec![g],
            complement_likelihoods: vec![],
        };
        let pooled = pool_deterministic_mixture(&[input]).unwrap();
        let (w, _) = pooled.ensemble.normalized_weights().unwrap();
        for wi in &w {
            assert_abs_diff_eq!(*wi, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_mixture_constant_groups_are_uniform() {
        let c = -0.5;
        let mk = |vals: Vec<f64>| FusionInput {
            ensemble: WeightedEnsemble::uniform(vals, 1).unwrap(),
            own_likelihoods: vec![constant_term(c)],
            complement_likelihoods: vec![constant_term(c), constant_term(c)],
        };
        let pooled = pool_deterministic_mixture(&[mk(vec![0.0; 10]), mk(vec![1.0; 10]), mk(vec![2.0; 10])]).unwrap();
        let (w, _) = pooled.ensemble.normalized_weights().unwrap();
        for wi in &w {
            assert_abs_diff_eq!(*wi, 1.0 / 30.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_mixture_requires_own_likelihoods() {
        let input = uniform_input(vec![0.0], vec![constant_term(0.0)]);
        let err = pool_deterministic_mixture(&[input]).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn pooled_weights_sum_to_one_under_all_schemes() {
        let g1 = gamma::likelihood_term(1.0, 4.0);
        let g2 = gamma::likelihood_term(2.0, 10.0);
        let mk = |vals: Vec<f64>, own: &LikelihoodTerm, comp: &LikelihoodTerm| FusionInput {
            ensemble: WeightedEnsemble::uniform(vals, 1).unwrap(),
            own_likelihoods: vec![own.clone()],
            complement_likelihoods: vec![comp.clone()],
        };
        let inputs = vec![
            mk(vec![1.0, 3.0, 5.0, 7.0], &g1, &g2),
            mk(vec![2.0, 4.0, 6.0, 8.0], &g2, &g1),
        ];
        for pooled in [
            pool_norming_apart(&inputs).unwrap(),
            pool_norming_together(&inputs).unwrap(),
            pool_deterministic_mixture(&inputs).unwrap(),
        ] {
            let (w, _) = pooled.ensemble.normalized_weights().unwrap();
            let direct: f64 = pooled
                .ensemble
                .log_weights()
                .iter()
                .map(|lw| lw.exp())
                .sum();
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(direct, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = uniform_input(vec![0.0], vec![]);
        let b = FusionInput {
            ensemble: WeightedEnsemble::uniform(vec![0.0, 0.0], 2).unwrap(),
            own_likelihoods: vec![],
            complement_likelihoods: vec![],
        };
        let err = pool_norming_apart(&[a, b]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
