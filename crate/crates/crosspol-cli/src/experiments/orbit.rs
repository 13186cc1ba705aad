//! Two-sensor orbit-determination fusion: MCMC initial orbit estimates
//! per sensor, norming-together cross-pollination, perturbation, and
//! RMSE reporting against the simulated truth.

use std::f64::consts::PI;
use std::sync::atomic::Ordering;

use rand::Rng;
use serde::Serialize;

use crosspol::fusion::{fuse, FusionInput, LikelihoodTerm, WeightingScheme};
use crosspol::models::orbit::{
    kepler_propagate, likelihood_term, simulate_scenario, ObservationSpec, Observer, OrbitState,
    RadecObs,
};
use crosspol::samplers::random_walk_metropolis;
use crosspol::{RngStream, WeightedEnsemble};

use crate::config::{CliError, CliResult, OrbitBlock};
use crate::report::{fmt_f64, rmse, CsvWriter};

pub const TRACES_SCHEMA: &str = "crosspol orbit-fusion traces csv schema v1";

pub fn write_traces_csv(path: &std::path::Path, rows: &[PlotRow]) -> CliResult<()> {
    let mut w = CsvWriter::create(
        path,
        TRACES_SCHEMA,
        &["ensemble", "particle", "time_s", "x_km", "y_km", "z_km"],
    )?;
    for r in rows {
        w.row(&[
            r.ensemble.to_string(),
            r.particle.to_string(),
            fmt_f64(r.time_s),
            fmt_f64(r.x_km),
            fmt_f64(r.y_km),
            fmt_f64(r.z_km),
        ])?;
    }
    w.finish()
}

pub const ARCSEC_TO_RAD: f64 = PI / (180.0 * 3600.0);

const STREAM_SIM: u64 = 0;
const STREAM_MCMC_BASE: u64 = 1; // one per sensor
const STREAM_FUSE: u64 = 16;
const STREAM_PERTURB: u64 = 17;
const STREAM_PLOT: u64 = 18;

#[derive(Debug, Clone)]
pub struct OrbitSettings {
    pub block: OrbitBlock,
    pub n_particles: usize,
    pub seed: u64,
    pub scheme: WeightingScheme,
}

impl OrbitSettings {
    pub fn desk_scale(seed: u64) -> Self {
        OrbitSettings {
            block: OrbitBlock::default(),
            n_particles: 10_000,
            seed,
            scheme: WeightingScheme::NormingTogether,
        }
    }

    /// Paper-size ensembles: 50,000 samples per sensor.
    pub fn paper_scale(seed: u64) -> Self {
        OrbitSettings {
            n_particles: 50_000,
            ..OrbitSettings::desk_scale(seed)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleRmse {
    pub position_km: f64,
    pub velocity_km_s: f64,
}

#[derive(Debug, Serialize)]
pub struct OrbitSummary {
    pub seed: u64,
    pub n_particles: usize,
    pub scheme: String,
    pub rmse_leo: EnsembleRmse,
    pub rmse_ground: EnsembleRmse,
    pub rmse_fused: EnsembleRmse,
    pub mcmc_acceptance: Vec<f64>,
    pub propagation_failures: usize,
    pub truth_state: [f64; 6],
}

/// One point of a plotted orbit trace.
#[derive(Debug, Clone)]
pub struct PlotRow {
    pub ensemble: &'static str,
    pub particle: usize,
    pub time_s: f64,
    pub x_km: f64,
    pub y_km: f64,
    pub z_km: f64,
}

fn gaussian_log_pdf_diag(x: &[f64], mean: &[f64], sd: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((xi, mi), si) in x.iter().zip(mean).zip(sd) {
        let d = (xi - mi) / si;
        acc += -0.5 * d * d - si.ln() - 0.5 * (2.0 * PI).ln();
    }
    acc
}

/// Simulate the scenario, run one random-walk Metropolis chain per
/// sensor against that sensor's own data (under the common Gaussian
/// prior), fuse the two ensembles, perturb, and report RMSEs.
pub fn run_orbit_fusion(
    settings: &OrbitSettings,
) -> CliResult<(OrbitSummary, Vec<PlotRow>)> {
    let block = &settings.block;
    let mu = block.mu_km3_s2;
    let truth = block
        .truth
        .to_state(mu, 0.0)
        .map_err(CliError::from)?;
    let leo_orbit = block.leo_observer.to_state(mu, 0.0).map_err(CliError::from)?;

    let leo_observer = Observer::Leo { orbit: leo_orbit };
    let ground_observer = Observer::Ground {
        lat_rad: block.ground_lat_deg.to_radians(),
        lon_rad: block.ground_lon_deg.to_radians(),
        rotation_rate: block.earth_rotation_rad_s,
        radius_km: block.earth_radius_km,
    };

    let mut schedule = Vec::new();
    for &t in &block.leo_times_s {
        schedule.push(ObservationSpec {
            time: t,
            observer: leo_observer.clone(),
            sigma: block.sigma_leo_arcsec * ARCSEC_TO_RAD,
        });
    }
    let n_leo = schedule.len();
    for &t in &block.ground_times_s {
        schedule.push(ObservationSpec {
            time: t,
            observer: ground_observer.clone(),
            sigma: block.sigma_ground_arcsec * ARCSEC_TO_RAD,
        });
    }

    let mut sim_rng = RngStream::new(settings.seed, STREAM_SIM);
    let observations =
        simulate_scenario(&truth, &schedule, mu, &mut sim_rng).map_err(CliError::from)?;
    let sensors: [Vec<RadecObs>; 2] = [
        observations[..n_leo].to_vec(),
        observations[n_leo..].to_vec(),
    ];

    // common prior: diagonal Gaussian around a coarse initial guess
    let truth_particle = truth.to_particle();
    let prior_mean: [f64; 6] = block.prior_mean.unwrap_or_else(|| {
        let mut m = truth_particle;
        for (mi, off) in m.iter_mut().zip(block.prior_mean_offset) {
            *mi += off;
        }
        m
    });
    let prior_sd = block.prior_sd;

    // one likelihood group per observation, over particles at epoch 0
    let mut failure_counters = Vec::new();
    let mut sensor_terms: Vec<Vec<LikelihoodTerm>> = Vec::new();
    for sensor_obs in &sensors {
        let mut terms = Vec::new();
        for obs in sensor_obs {
            let rl = likelihood_term(obs.clone(), mu, 0.0);
            failure_counters.push(rl.propagation_failures);
            terms.push(rl.term);
        }
        sensor_terms.push(terms);
    }

    // per-sensor MCMC initial orbit determination on the sensor's own data
    let step_scales = [&block.mcmc_step_scales_leo, &block.mcmc_step_scales_ground];
    let mut ensembles: Vec<WeightedEnsemble> = Vec::new();
    let mut acceptance = Vec::new();
    for (j, terms) in sensor_terms.iter().enumerate() {
        let terms = terms.clone();
        let target = move |x: &[f64]| {
            let mut lp = gaussian_log_pdf_diag(x, &prior_mean, &prior_sd);
            if lp > f64::NEG_INFINITY {
                for t in &terms {
                    lp += t.log_density(x);
                    if lp == f64::NEG_INFINITY {
                        break;
                    }
                }
            }
            lp
        };

        // staged locate phase: walk in from the prior mean on a geometric
        // ladder of the tuned scales (so each stage keeps the likelihood's
        // position/velocity anisotropy) before the fine chain explores the
        // ridge
        let mut rng = RngStream::new(settings.seed, STREAM_MCMC_BASE + j as u64);
        let ladder = [64.0, 16.0, 4.0];
        let stage_iters = (block.mcmc_coarse_burn_in / ladder.len()).max(1);
        let mut start = prior_mean.to_vec();
        for factor in ladder {
            let scales: Vec<f64> = step_scales[j].iter().map(|s| s * factor).collect();
            let stage = random_walk_metropolis(
                &target,
                &start,
                &scales,
                1,
                stage_iters,
                1,
                &mut rng,
            )
            .map_err(CliError::from)?;
            start = stage.ensemble.particle(0).to_vec();
        }

        let result = random_walk_metropolis(
            &target,
            &start,
            step_scales[j],
            settings.n_particles,
            block.mcmc_burn_in,
            block.mcmc_thin,
            &mut rng,
        )
        .map_err(CliError::from)?;
        acceptance.push(result.acceptance_rate);
        ensembles.push(result.ensemble.with_seed_lineage(Some(j)));
    }

    let inputs: Vec<FusionInput> = (0..sensors.len())
        .map(|j| {
            let complement = (0..sensors.len())
                .filter(|k| *k != j)
                .flat_map(|k| sensor_terms[k].clone())
                .collect();
            FusionInput {
                ensemble: ensembles[j].clone(),
                own_likelihoods: sensor_terms[j].clone(),
                complement_likelihoods: complement,
            }
        })
        .collect();

    let mut fuse_rng = RngStream::new(settings.seed, STREAM_FUSE);
    let fused = fuse(settings.scheme, &inputs, settings.n_particles, &mut fuse_rng)
        .map_err(CliError::from)?;
    let mut perturb_rng = RngStream::new(settings.seed, STREAM_PERTURB);
    let fused = fused
        .perturb(&block.perturb_bandwidth, &mut perturb_rng)
        .map_err(CliError::from)?;

    let summary = OrbitSummary {
        seed: settings.seed,
        n_particles: settings.n_particles,
        scheme: settings.scheme.name().to_string(),
        rmse_leo: ensemble_rmse(&ensembles[0], &truth_particle),
        rmse_ground: ensemble_rmse(&ensembles[1], &truth_particle),
        rmse_fused: ensemble_rmse(&fused, &truth_particle),
        mcmc_acceptance: acceptance,
        propagation_failures: failure_counters
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .sum(),
        truth_state: truth_particle,
    };

    let plots = plot_rows(
        settings,
        mu,
        &truth,
        &[
            ("leo", &ensembles[0]),
            ("ground", &ensembles[1]),
            ("fused", &fused),
        ],
    )?;

    Ok((summary, plots))
}

fn ensemble_rmse(e: &WeightedEnsemble, truth: &[f64; 6]) -> EnsembleRmse {
    EnsembleRmse {
        position_km: rmse(e, 0..3, truth),
        velocity_km_s: rmse(e, 3..6, truth),
    }
}

/// Trace a random subsample of each ensemble's orbits over one nominal
/// period for plotting, plus the truth orbit.
fn plot_rows(
    settings: &OrbitSettings,
    mu: f64,
    truth: &OrbitState,
    ensembles: &[(&'static str, &WeightedEnsemble)],
) -> CliResult<Vec<PlotRow>> {
    let block = &settings.block;
    if block.plot_subsample == 0 || block.plot_points == 0 {
        return Ok(Vec::new());
    }
    let a = block.truth.semi_major_axis_km;
    let period = 2.0 * PI * (a * a * a / mu).sqrt();
    let times: Vec<f64> = (0..block.plot_points)
        .map(|k| period * k as f64 / block.plot_points as f64)
        .collect();

    let mut rng = RngStream::new(settings.seed, STREAM_PLOT);
    let mut rows = Vec::new();
    for (name, ensemble) in ensembles {
        let count = block.plot_subsample.min(ensemble.len());
        for pick in 0..count {
            let idx = rng.random_range(0..ensemble.len());
            let state = OrbitState::from_particle(ensemble.particle(idx), 0.0);
            for &t in &times {
                // skip particles that fail to propagate; they are counted
                // by the likelihood diagnostics, not the plot
                if let Ok(s) = kepler_propagate(&state, t, mu) {
                    rows.push(PlotRow {
                        ensemble: name,
                        particle: pick,
                        time_s: t,
                        x_km: s.position[0],
                        y_km: s.position[1],
                        z_km: s.position[2],
                    });
                }
            }
        }
    }
    for &t in &times {
        let s = kepler_propagate(truth, t, mu).map_err(CliError::from)?;
        rows.push(PlotRow {
            ensemble: "truth",
            particle: 0,
            time_s: t,
            x_km: s.position[0],
            y_km: s.position[1],
            z_km: s.position[2],
        });
    }
    Ok(rows)
}
