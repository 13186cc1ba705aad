//! Gamma convergence study and single-shot Gamma fusion runs against the
//! analytic posterior oracle.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crosspol::fusion::{fuse, FusionInput, WeightingScheme};
use crosspol::models::gamma::{
    analytic_posterior, likelihood_term, posterior_moments, prior_sampler, GammaModelParams,
};
use crosspol::samplers::importance_resample_init;
use crosspol::{Moments, RngStream, WeightedEnsemble};

use crate::config::CliResult;
use crate::report::{fmt_f64, CsvWriter};

pub const MOMENT_NAMES: [&str; 4] = ["mean", "variance", "skewness", "kurtosis"];

/// Schema line for the convergence CSV. Kurtosis values are non-excess
/// (a Gaussian reports 3).
pub const CONVERGENCE_SCHEMA: &str =
    "crosspol gamma-convergence csv schema v1; kurtosis is non-excess (gaussian = 3)";

pub fn write_convergence_csv(
    path: &std::path::Path,
    summary: &ConvergenceSummary,
) -> CliResult<()> {
    let mut w = CsvWriter::create(
        path,
        CONVERGENCE_SCHEMA,
        &["scheme", "n_particles", "trial", "moment", "abs_error", "wall_ms"],
    )?;
    for row in &summary.rows {
        w.row(&[
            row.scheme.to_string(),
            row.n_particles.to_string(),
            row.trial.to_string(),
            row.moment.to_string(),
            fmt_f64(row.abs_error),
            row.wall_ms.to_string(),
        ])?;
    }
    w.finish()
}

/// Distinct stream-id ranges per experiment so no two draws ever share a
/// stream.
const STREAMS_PER_TRIAL: u64 = 8;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub scheme: &'static str,
    pub n_particles: usize,
    pub trial: usize,
    pub moment: &'static str,
    pub abs_error: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceSettings {
    pub particle_grid: Vec<usize>,
    pub n_trials: usize,
    pub seed: u64,
    pub params: GammaModelParams,
    pub timing: bool,
}

impl ConvergenceSettings {
    pub fn desk_scale(seed: u64) -> Self {
        ConvergenceSettings {
            particle_grid: vec![100, 1_000, 10_000, 100_000],
            n_trials: 100,
            seed,
            params: GammaModelParams::paper_defaults(),
            timing: false,
        }
    }

    /// Full-size study: 1000 trials over N up to 1e6.
    pub fn paper_scale(seed: u64) -> Self {
        ConvergenceSettings {
            particle_grid: vec![100, 1_000, 10_000, 100_000, 1_000_000],
            n_trials: 1_000,
            ..ConvergenceSettings::desk_scale(seed)
        }
    }
}

#[derive(Debug)]
pub struct ConvergenceSummary {
    pub rows: Vec<ConvergenceRow>,
    /// Mean absolute error keyed by `(scheme, n_particles, moment)`.
    pub mean_abs_error: BTreeMap<(String, usize, String), f64>,
}

impl ConvergenceSummary {
    pub fn mean_abs_error(&self, scheme: &str, n: usize, moment: &str) -> f64 {
        self.mean_abs_error[&(scheme.to_string(), n, moment.to_string())]
    }
}

/// Absolute moment errors; a degenerate (zero-variance) estimate leaves
/// its standardized moments undefined, marked `None` rather than NaN.
fn abs_errors(est: &Moments, truth: &Moments) -> [Option<f64>; 4] {
    [
        Some((est.mean - truth.mean).abs()),
        Some((est.variance - truth.variance).abs()),
        est.skewness.map(|s| (s - truth.skewness.unwrap()).abs()),
        est.kurtosis.map(|k| (k - truth.kurtosis.unwrap()).abs()),
    ]
}

/// Build the three single-observation initial ensembles of one trial and
/// assemble the fusion inputs (each partition's complement holds the
/// other observations' likelihood groups).
fn trial_inputs(
    params: &GammaModelParams,
    n: usize,
    base_stream: u64,
    seed: u64,
) -> crosspol::Result<Vec<FusionInput>> {
    let prior = prior_sampler(params);
    let m = params.obs.len();
    let mut inputs = Vec::with_capacity(m);
    for j in 0..m {
        let own = likelihood_term(params.obs[j].y, params.obs[j].shape);
        let mut rng = RngStream::new(seed, base_stream + j as u64);
        let ensemble =
            importance_resample_init(&prior, std::slice::from_ref(&own), n, &mut rng)?
                .with_seed_lineage(Some(j));
        let complement = (0..m)
            .filter(|k| *k != j)
            .map(|k| likelihood_term(params.obs[k].y, params.obs[k].shape))
            .collect();
        inputs.push(FusionInput {
            ensemble,
            own_likelihoods: vec![own],
            complement_likelihoods: complement,
        });
    }
    Ok(inputs)
}

/// Run the convergence study: for each (N, trial), build the three
/// initial ensembles, fuse under norming-apart and norming-together, and
/// record the absolute error of the first four moments against the
/// analytic posterior. Trials run in parallel on per-trial streams;
/// aggregation order is fixed by (N, trial) index.
pub fn run_convergence(settings: &ConvergenceSettings) -> CliResult<ConvergenceSummary> {
    settings
        .params
        .validate()
        .map_err(crate::config::CliError::from)?;
    let (shape, scale) = analytic_posterior(&settings.params);
    let truth = posterior_moments(shape, scale);

    let jobs: Vec<(usize, usize)> = settings
        .particle_grid
        .iter()
        .enumerate()
        .flat_map(|(n_idx, _)| (0..settings.n_trials).map(move |t| (n_idx, t)))
        .collect();

    let results: Vec<crosspol::Result<Vec<ConvergenceRow>>> = jobs
        .par_iter()
        .map(|&(n_idx, trial)| {
            let n = settings.particle_grid[n_idx];
            let base =
                ((n_idx * settings.n_trials + trial) as u64 + 1) * STREAMS_PER_TRIAL;
            let inputs = trial_inputs(&settings.params, n, base, settings.seed)?;
            let mut rows = Vec::with_capacity(8);
            for (scheme, stream_offset) in [
                (WeightingScheme::NormingApart, 3),
                (WeightingScheme::NormingTogether, 4),
            ] {
                let mut rng = RngStream::new(settings.seed, base + stream_offset);
                let t0 = Instant::now();
                let fused = fuse(scheme, &inputs, n, &mut rng)?;
                let wall_ms = if settings.timing {
                    t0.elapsed().as_millis() as u64
                } else {
                    0
                };
                let est = fused.moments(0)?;
                for (moment, err) in MOMENT_NAMES.iter().zip(abs_errors(&est, &truth)) {
                    // degenerate estimates produce no row for that moment
                    if let Some(err) = err {
                        rows.push(ConvergenceRow {
                            scheme: scheme.name(),
                            n_particles: n,
                            trial,
                            moment,
                            abs_error: err,
                            wall_ms,
                        });
                    }
                }
            }
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::with_capacity(jobs.len() * 8);
    for r in results {
        rows.extend(r.map_err(crate::config::CliError::from)?);
    }

    let mut sums: BTreeMap<(String, usize, String), (f64, usize)> = BTreeMap::new();
    for row in &rows {
        let key = (row.scheme.to_string(), row.n_particles, row.moment.to_string());
        let entry = sums.entry(key).or_insert((0.0, 0));
        entry.0 += row.abs_error;
        entry.1 += 1;
    }
    let mean_abs_error = sums
        .into_iter()
        .map(|(k, (sum, count))| (k, sum / count as f64))
        .collect();

    Ok(ConvergenceSummary {
        rows,
        mean_abs_error,
    })
}

#[derive(Debug, Clone)]
pub struct FuseSettings {
    pub n_particles: usize,
    pub seed: u64,
    pub schemes: Vec<WeightingScheme>,
    pub params: GammaModelParams,
}

#[derive(Debug, Serialize)]
pub struct SchemeReport {
    pub scheme: String,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub abs_error_mean: f64,
    pub abs_error_variance: f64,
    pub abs_error_skewness: f64,
    pub abs_error_kurtosis: f64,
}

#[derive(Debug, Serialize)]
pub struct FuseSummary {
    pub n_particles: usize,
    pub seed: u64,
    pub analytic_mean: f64,
    pub analytic_variance: f64,
    pub schemes: Vec<SchemeReport>,
}

/// One fusion run per requested scheme at a single particle count,
/// reported against the analytic posterior.
pub fn run_fuse(settings: &FuseSettings) -> CliResult<FuseSummary> {
    let (shape, scale) = analytic_posterior(&settings.params);
    let truth = posterior_moments(shape, scale);
    let mut reports = Vec::new();
    for (i, &scheme) in settings.schemes.iter().enumerate() {
        let base = (i as u64 + 1) * STREAMS_PER_TRIAL;
        let inputs = trial_inputs(&settings.params, settings.n_particles, base, settings.seed)?;
        let mut rng = RngStream::new(settings.seed, base + 5);
        let fused: WeightedEnsemble = fuse(scheme, &inputs, settings.n_particles, &mut rng)?;
        let est = fused.moments(0)?;
        let errs = abs_errors(&est, &truth);
        reports.push(SchemeReport {
            scheme: scheme.name().to_string(),
            mean: est.mean,
            variance: est.variance,
            skewness: est.skewness.unwrap_or(f64::NAN),
            kurtosis: est.kurtosis.unwrap_or(f64::NAN),
            abs_error_mean: errs[0].unwrap_or(f64::NAN),
            abs_error_variance: errs[1].unwrap_or(f64::NAN),
            abs_error_skewness: errs[2].unwrap_or(f64::NAN),
            abs_error_kurtosis: errs[3].unwrap_or(f64::NAN),
        });
    }
    Ok(FuseSummary {
        n_particles: settings.n_particles,
        seed: settings.seed,
        analytic_mean: truth.mean,
        analytic_variance: truth.variance,
        schemes: reports,
    })
}
