//! Sequential cross-pollination for stochastic-motion smoothing.
//!
//! A running cross-pollinated trajectory ensemble is fused epoch by epoch
//! with fresh single-observation trajectory ensembles drawn from the
//! prior. At epoch `j` the running trajectories are motioned forward and
//! weighted by the current likelihood alone, while the fresh trajectories
//! are weighted by the product of all earlier ("backward in time")
//! likelihoods evaluated on their saved historical states; the two sets
//! are pooled and resampled like a two-partition batch fusion.
//!
//! Saving the state at every observation epoch is what satisfies the core
//! requirement here: a past likelihood can always be applied to a fresh
//! trajectory because the state it constrains was recorded.
//!
//! Long backward products degenerate quickly, so the accumulation
//! resamples (and jitters the newest state of) the fresh ensemble
//! whenever its effective sample size falls below a threshold.

use std::sync::Arc;

use rayon::prelude::*;

use crate::ensemble::{
    effective_sample_size, log_sum_exp, multinomial_resample_indices, normalize_log_weights,
    WeightedEnsemble,
};
use crate::error::{Error, Result};
use crate::fusion::{LikelihoodTerm, WeightingScheme};
use crate::rng::RngStream;
use crate::samplers::PriorSampler;

use rand_distr::{Distribution, StandardNormal};

/// `N` equally long state histories with log-weights.
///
/// Trajectory `i` stores states at epochs `0..=current_epoch`, where
/// epoch 0 is the initial draw and epoch `k >= 1` is the state at the
/// k-th observation time. All trajectories always share the same length.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    /// Row-major `n x (current_epoch + 1) x dim` storage.
    states: Vec<f64>,
    n: usize,
    dim: usize,
    current_epoch: usize,
    log_weights: Vec<f64>,
}

impl TrajectoryEnsemble {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn current_epoch(&self) -> usize {
        self.current_epoch
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    fn stride(&self) -> usize {
        (self.current_epoch + 1) * self.dim
    }

    /// State of trajectory `i` at `epoch` (0 = initial state).
    pub fn state(&self, i: usize, epoch: usize) -> &[f64] {
        let base = i * self.stride() + epoch * self.dim;
        &self.states[base..base + self.dim]
    }

    pub fn latest_state(&self, i: usize) -> &[f64] {
        self.state(i, self.current_epoch)
    }

    /// The states at one epoch viewed as a particle ensemble carrying this
    /// ensemble's weights.
    pub fn epoch_ensemble(&self, epoch: usize) -> Result<WeightedEnsemble> {
        if epoch > self.current_epoch {
            return Err(Error::invalid(format!(
                "epoch {epoch} beyond current epoch {}",
                self.current_epoch
            )));
        }
        let mut particles = Vec::with_capacity(self.n * self.dim);
        for i in 0..self.n {
            particles.extend_from_slice(self.state(i, epoch));
        }
        WeightedEnsemble::new(particles, self.dim, self.log_weights.clone())
    }

    /// Weighted mean state at one epoch.
    pub fn mean_state(&self, epoch: usize) -> Result<Vec<f64>> {
        let (w, _) = normalize_log_weights(&self.log_weights)?;
        if epoch > self.current_epoch {
            return Err(Error::invalid(format!(
                "epoch {epoch} beyond current epoch {}",
                self.current_epoch
            )));
        }
        let mut mean = vec![0.0; self.dim];
        for (i, wi) in w.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(self.state(i, epoch)) {
                *m += wi * x;
            }
        }
        Ok(mean)
    }

    /// Select trajectories by index (duplicates allowed), resetting the
    /// weights to uniform.
    fn select(&self, indices: &[usize]) -> TrajectoryEnsemble {
        let stride = self.stride();
        let mut states = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            states.extend_from_slice(&self.states[i * stride..(i + 1) * stride]);
        }
        let n = indices.len();
        TrajectoryEnsemble {
            states,
            n,
            dim: self.dim,
            current_epoch: self.current_epoch,
            log_weights: vec![-(n as f64).ln(); n],
        }
    }

    /// Gaussian jitter on the newest state only. Historical states anchor
    /// the backward likelihoods and are never perturbed.
    fn perturb_latest(&mut self, bandwidth: &[f64], rng: &mut RngStream) -> Result<()> {
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
        let stride = self.stride();
        let offset = self.current_epoch * self.dim;
        for i in 0..self.n {
            let base = i * stride + offset;
            for (k, &b) in bandwidth.iter().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                self.states[base + k] += z * b;
            }
        }
        Ok(())
    }
}

/// Stochastic one-step state transition.
#[derive(Clone)]
pub struct MotionModel {
    state_dim: usize,
    step: Arc<dyn Fn(&[f64], &mut RngStream) -> Vec<f64> + Send + Sync>,
}

impl MotionModel {
    pub fn new(
        state_dim: usize,
        step: impl Fn(&[f64], &mut RngStream) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        MotionModel {
            state_dim,
            step: Arc::new(step),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn step(&self, state: &[f64], rng: &mut RngStream) -> Vec<f64> {
        (self.step)(state, rng)
    }
}

impl std::fmt::Debug for MotionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MotionModel")
            .field("state_dim", &self.state_dim)
            .finish()
    }
}

/// Knobs for the sequential fusion loop.
#[derive(Debug, Clone)]
pub struct SequentialConfig {
    /// Resample-and-perturb the fresh ensemble during backward-weight
    /// accumulation when ESS drops below this fraction of N.
    pub ess_threshold_fraction: f64,
    /// Per-dimension jitter applied to the newest state after a triggered
    /// resample.
    pub perturb_bandwidth: Vec<f64>,
    pub n_particles: usize,
    /// Degenerate mode that pools only the running partition; the loop
    /// then reduces to a bootstrap (sequential importance resampling)
    /// filter over whole trajectories.
    pub running_only: bool,
}

impl SequentialConfig {
    /// Defaults: ESS trigger at half the particle count, no degenerate
    /// mode.
    pub fn new(n_particles: usize, perturb_bandwidth: Vec<f64>) -> Self {
        SequentialConfig {
            ess_threshold_fraction: 0.5,
            perturb_bandwidth,
            n_particles,
            running_only: false,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.ess_threshold_fraction > 0.0 && self.ess_threshold_fraction <= 1.0) {
            return Err(Error::invalid(
                "ess_threshold_fraction must lie in (0, 1]",
            ));
        }
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles must be >= 1"));
        }
        if self.perturb_bandwidth.len() != dim {
            return Err(Error::invalid(format!(
                "perturb_bandwidth has {} entries for dimension {dim}",
                self.perturb_bandwidth.len()
            )));
        }
        Ok(())
    }
}

/// Diagnostics of one sequential step, computed on the pooled weighted
/// candidates just before the final resample.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// ESS of the pooled weights.
    pub pooled_ess: f64,
    /// How many ESS-triggered resample-and-perturb passes ran during
    /// backward-weight accumulation.
    pub resample_triggers: usize,
    /// Weighted mean of the pooled newest states.
    pub pooled_mean: Vec<f64>,
    /// Weighted central variance of the pooled newest states.
    pub pooled_variance: Vec<f64>,
}

/// Build the epoch-1 ensemble: prior draws motioned to the first
/// observation time, importance-weighted by `g_1` on the state at epoch 1,
/// and resampled to uniform whole trajectories.
pub fn init_from_first_observation(
    prior: &PriorSampler,
    motion: &MotionModel,
    g_1: &LikelihoodTerm,
    n: usize,
    rng: &mut RngStream,
) -> Result<TrajectoryEnsemble> {
    fresh_single_obs_ensemble(prior, motion, 1, g_1, n, rng)
}

/// Build the single-observation ensemble for epoch `j`: prior draws
/// propagated forward to epoch `j` saving the state at every epoch, then
/// importance-resampled on `g_j` alone.
pub fn fresh_single_obs_ensemble(
    prior: &PriorSampler,
    motion: &MotionModel,
    j: usize,
    g_j: &LikelihoodTerm,
    n: usize,
    rng: &mut RngStream,
) -> Result<TrajectoryEnsemble> {
    if n == 0 {
        return Err(Error::invalid("ensemble size must be >= 1"));
    }
    if j == 0 {
        return Err(Error::invalid("epochs are 1-indexed"));
    }
    if prior.dim() != motion.state_dim() {
        return Err(Error::invalid(format!(
            "prior dimension {} does not match motion dimension {}",
            prior.dim(),
            motion.state_dim()
        )));
    }
    let dim = prior.dim();
    let stride = (j + 1) * dim;
    let mut states = Vec::with_capacity(n * stride);
    let mut log_weights = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = prior.sample(rng);
        states.extend_from_slice(&x);
        for _ in 0..j {
            x = motion.step(&x, rng);
            states.extend_from_slice(&x);
        }
        log_weights.push(g_j.log_density(&x));
    }
    let weighted = TrajectoryEnsemble {
        states,
        n,
        dim,
        current_epoch: j,
        log_weights,
    };
    let (w, _) = normalize_log_weights(&weighted.log_weights)?;
    let indices = multinomial_resample_indices(&w, n, rng)?;
    Ok(weighted.select(&indices))
}

/// Advance the running ensemble from epoch `j-1` to epoch `j` by fusing
/// it with the fresh single-observation ensemble of epoch `j`.
///
/// The running trajectories are extended one motion step and weighted by
/// `g_j` alone; the fresh trajectories are weighted by the backward
/// product of `past_likelihoods` evaluated on their saved states, with
/// ESS-triggered resample-and-perturb during accumulation. The two
/// partitions are pooled under `scheme` (norming-apart or
/// norming-together) and multinomially resampled to uniform weights.
///
/// `fresh` may be `None` only in `running_only` mode.
pub fn sequential_step(
    running: &TrajectoryEnsemble,
    fresh: Option<&TrajectoryEnsemble>,
    past_likelihoods: &[LikelihoodTerm],
    g_j: &LikelihoodTerm,
    motion: &MotionModel,
    cfg: &SequentialConfig,
    scheme: WeightingScheme,
    rng: &mut RngStream,
) -> Result<(TrajectoryEnsemble, StepDiagnostics)> {
    let dim = running.dim();
    cfg.validate(dim)?;
    if scheme == WeightingScheme::DeterministicMixture {
        return Err(Error::invalid(
            "sequential cross-pollination supports the norming-apart and norming-together schemes",
        ));
    }
    let j = running.current_epoch() + 1;
    if past_likelihoods.len() != j - 1 {
        return Err(Error::invalid(format!(
            "{} past likelihoods for step to epoch {j}",
            past_likelihoods.len()
        )));
    }
    if motion.state_dim() != dim {
        return Err(Error::invalid("motion model dimension mismatch"));
    }

    // Extend the running trajectories to t_j and weight them by g_j alone;
    // their history already carries every earlier likelihood.
    let stride_out = (j + 1) * dim;
    let mut extended_states = Vec::with_capacity(running.len() * stride_out);
    for i in 0..running.len() {
        let base = i * running.stride();
        extended_states.extend_from_slice(&running.states[base..base + running.stride()]);
        let next = motion.step(running.latest_state(i), rng);
        extended_states.extend_from_slice(&next);
    }
    let extended = TrajectoryEnsemble {
        states: extended_states,
        n: running.len(),
        dim,
        current_epoch: j,
        log_weights: vec![0.0; running.len()],
    };
    let running_log_w: Vec<f64> = (0..extended.len())
        .into_par_iter()
        .map(|i| g_j.log_density(extended.latest_state(i)))
        .collect();

    // Weight the fresh trajectories by the backward likelihood product on
    // their saved states, resampling mid-accumulation when the ESS sinks.
    let mut triggers = 0usize;
    let fresh_weighted = match (cfg.running_only, fresh) {
        (true, _) => None,
        (false, None) => {
            return Err(Error::invalid(
                "a fresh ensemble is required unless running_only is set",
            ))
        }
        (false, Some(f)) => {
            if f.current_epoch() != j {
                return Err(Error::invalid(format!(
                    "fresh ensemble is at epoch {} but the step targets epoch {j}",
                    f.current_epoch()
                )));
            }
            if f.dim() != dim {
                return Err(Error::invalid("fresh ensemble dimension mismatch"));
            }
            let mut fw = f.clone();
            let mut acc = vec![0.0; fw.len()];
            for (k, g_k) in past_likelihoods.iter().enumerate() {
                let epoch = k + 1;
                let increments: Vec<f64> = (0..fw.len())
                    .into_par_iter()
                    .map(|i| g_k.log_density(fw.state(i, epoch)))
                    .collect();
                for (a, inc) in acc.iter_mut().zip(&increments) {
                    *a += inc;
                }
                let (w, _) = normalize_log_weights(&acc).map_err(|e| match e {
                    Error::TotalWeightCollapse => Error::PartitionCollapse { partition: 1 },
                    other => other,
                })?;
                let ess = effective_sample_size(&w)?;
                if ess < cfg.ess_threshold_fraction * fw.len() as f64 {
                    let indices = multinomial_resample_indices(&w, fw.len(), rng)?;
                    fw = fw.select(&indices);
                    fw.perturb_latest(&cfg.perturb_bandwidth, rng)?;
                    acc = vec![0.0; fw.len()];
                    triggers += 1;
                }
            }
            Some((fw, acc))
        }
    };

    // Pool the two partitions (running = partition 0, fresh = partition 1)
    // and resample to n_particles uniform trajectories.
    let pooled_log_w: Vec<f64> = match (&fresh_weighted, scheme) {
        (None, _) => {
            let z = log_sum_exp(&running_log_w);
            if z == f64::NEG_INFINITY {
                return Err(Error::PartitionCollapse { partition: 0 });
            }
            running_log_w.iter().map(|w| w - z).collect()
        }
        (Some((_, fresh_log_w)), WeightingScheme::NormingApart) => {
            let zr = log_sum_exp(&running_log_w);
            if zr == f64::NEG_INFINITY {
                return Err(Error::PartitionCollapse { partition: 0 });
            }
            let zf = log_sum_exp(fresh_log_w);
            if zf == f64::NEG_INFINITY {
                return Err(Error::PartitionCollapse { partition: 1 });
            }
            let half = 2.0f64.ln();
            running_log_w
                .iter()
                .map(|w| w - zr - half)
                .chain(fresh_log_w.iter().map(|w| w - zf - half))
                .collect()
        }
        (Some((_, fresh_log_w)), WeightingScheme::NormingTogether) => {
            let all: Vec<f64> = running_log_w
                .iter()
                .chain(fresh_log_w.iter())
                .cloned()
                .collect();
            let z = log_sum_exp(&all);
            if z == f64::NEG_INFINITY {
                return Err(Error::TotalWeightCollapse);
            }
            all.iter().map(|w| w - z).collect()
        }
        (_, WeightingScheme::DeterministicMixture) => unreachable!(),
    };

    let pooled_w: Vec<f64> = pooled_log_w.iter().map(|w| w.exp()).collect();
    let pooled_ess = effective_sample_size(&pooled_w)?;

    let candidate_latest = |idx: usize| -> &[f64] {
        if idx < extended.len() {
            extended.latest_state(idx)
        } else {
            let (fw, _) = fresh_weighted.as_ref().expect("fresh indices only exist with a fresh partition");
            fw.latest_state(idx - extended.len())
        }
    };
    let mut pooled_mean = vec![0.0; dim];
    for (idx, wi) in pooled_w.iter().enumerate() {
        for (m, x) in pooled_mean.iter_mut().zip(candidate_latest(idx)) {
            *m += wi * x;
        }
    }
    let mut pooled_variance = vec![0.0; dim];
    for (idx, wi) in pooled_w.iter().enumerate() {
        for ((v, m), x) in pooled_variance
            .iter_mut()
            .zip(&pooled_mean)
            .zip(candidate_latest(idx))
        {
            let d = x - m;
            *v += wi * d * d;
        }
    }

    let indices = multinomial_resample_indices(&pooled_w, cfg.n_particles, rng)?;
    let stride = (j + 1) * dim;
    let mut states = Vec::with_capacity(indices.len() * stride);
    for &idx in &indices {
        if idx < extended.len() {
            let base = idx * stride;
            states.extend_from_slice(&extended.states[base..base + stride]);
        } else {
            let (fw, _) = fresh_weighted.as_ref().unwrap();
            let fidx = idx - extended.len();
            let base = fidx * stride;
            states.extend_from_slice(&fw.states[base..base + stride]);
        }
    }
    let out = TrajectoryEnsemble {
        states,
        n: cfg.n_particles,
        dim,
        current_epoch: j,
        log_weights: vec![-(cfg.n_particles as f64).ln(); cfg.n_particles],
    };
    Ok((
        out,
        StepDiagnostics {
            pooled_ess,
            resample_triggers: triggers,
            pooled_mean,
            pooled_variance,
        },
    ))
}

/// Run the full sequential loop over time-ordered per-epoch likelihoods,
/// returning the trajectory ensemble that estimates the smoothing
/// posterior at the final epoch.
pub fn run_sequential(
    prior: &PriorSampler,
    motion: &MotionModel,
    epoch_likelihoods: &[LikelihoodTerm],
    cfg: &SequentialConfig,
    scheme: WeightingScheme,
    rng: &mut RngStream,
) -> Result<TrajectoryEnsemble> {
    if epoch_likelihoods.is_empty() {
        return Err(Error::invalid("at least one observation epoch is required"));
    }
    let mut running = init_from_first_observation(
        prior,
        motion,
        &epoch_likelihoods[0],
        cfg.n_particles,
        rng,
    )?;
    for j in 2..=epoch_likelihoods.len() {
        let fresh = if cfg.running_only {
            None
        } else {
            Some(fresh_single_obs_ensemble(
                prior,
                motion,
                j,
                &epoch_likelihoods[j - 1],
                cfg.n_particles,
                rng,
            )?)
        };
        let (next, _) = sequential_step(
            &running,
            fresh.as_ref(),
            &epoch_likelihoods[..j - 1],
            &epoch_likelihoods[j - 1],
            motion,
            cfg,
            scheme,
            rng,
        )?;
        running = next;
    }
    Ok(running)
}
