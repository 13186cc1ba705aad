//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`, or automatically when a
//! criterion fails). Tolerances are pinned in the constants below.
//!
//! Two clauses are expected to fail and do so honestly rather than with
//! loosened tolerances: the norming-apart skewness/kurtosis slope window
//! in criterion 1 (a small-N bias plateau flattens those curves) and the
//! deterministic-mixture clause of criterion 2 (the scheme's infinite-N
//! limit on this problem is mean 6.036, not 5.1875, because the
//! single-observation evidences differ by three orders of magnitude).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crosspol::ensemble::{
    effective_sample_size, log_sum_exp, normalize_log_weights, WeightedEnsemble,
};
use crosspol::fusion::{
    cross_epoch_log_weights, fuse, pool_norming_apart, pool_norming_together, FusionInput,
    LikelihoodTerm, WeightingScheme,
};
use crosspol::models::bearings::{bearing_log_likelihood, BearingsScenario};
use crosspol::models::orbit::{elements_to_state, kepler_propagate, EARTH_GM_KM3_S2};
use crosspol::sequential::{init_from_first_observation, sequential_step, SequentialConfig};
use crosspol::RngStream;

use crosspol_cli::config::BearingsBlock;
use crosspol_cli::experiments::{bearings, gamma, orbit};
use crosspol_cli::report::log_log_slope;

// criterion 1
const SLOPE_LO: f64 = -0.65;
const SLOPE_HI: f64 = -0.35;
const ENVELOPE_LO_FACTOR: f64 = 0.5 * 0.2; // 0.5/sqrt(N) * 0.2
const ENVELOPE_HI_FACTOR: f64 = 8.0 * 5.0; // 8/sqrt(N) * 5
// criterion 2
const GAMMA_MEAN: f64 = 5.1875;
const GAMMA_VARIANCE: f64 = 0.6484375;
const NORMING_MEAN_TOL: f64 = 0.02;
const NORMING_VARIANCE_TOL: f64 = 0.05;
const DM_MEAN_TOL: f64 = 0.05;
const DM_VARIANCE_TOL: f64 = 0.10;
// criterion 3
const STRUCTURAL_IDENTITY_TOL: f64 = 1e-12;
const STRUCTURAL_INSTANCES: usize = 50;
// criterion 4
const DEGENERACY_INSTANCES: usize = 20;
const DEGENERACY_N_OUT: usize = 10_000;
// criterion 5 / 6 seeds
const EXPERIMENT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const CONSERVATION_TOL: f64 = 1e-9;
// criterion 7
const SIR_SEEDS: [u64; 3] = [0, 1, 2];
const SIR_N: usize = 10_000;
const SIR_SIGMAS: f64 = 3.0;
/// Replicate filter runs per side; the filtered mean of a particle
/// filter carries resampling-genealogy noise that per-run weight-based
/// standard errors cannot see, so the combined standard error is
/// estimated from independent replicates.
const SIR_REPLICATES: usize = 16;
// criterion 8
const PROPERTY_CASES: u32 = 1000;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

#[test]
fn criterion_1_convergence_rate() {
    let settings = gamma::ConvergenceSettings {
        particle_grid: vec![100, 1_000, 10_000, 100_000],
        n_trials: 100,
        seed: 3,
        params: crosspol::models::gamma::GammaModelParams::paper_defaults(),
        timing: false,
    };
    let t0 = std::time::Instant::now();
    let summary = gamma::run_convergence(&settings).expect("convergence study");
    let elapsed = t0.elapsed().as_secs_f64();

    let mut failures = String::new();
    let mut slopes = BTreeMap::new();
    for scheme in ["apart", "together"] {
        for moment in gamma::MOMENT_NAMES {
            let points: Vec<(f64, f64)> = settings
                .particle_grid
                .iter()
                .map(|&n| (n as f64, summary.mean_abs_error(scheme, n, moment)))
                .collect();
            let slope = log_log_slope(&points);
            slopes.insert((scheme, moment), slope);
            if !(SLOPE_LO..=SLOPE_HI).contains(&slope) {
                let _ = write!(
                    failures,
                    " [{scheme}/{moment} slope {slope:.3} outside [{SLOPE_LO}, {SLOPE_HI}]]"
                );
            }
        }
        for &n in &settings.particle_grid {
            let mae = summary.mean_abs_error(scheme, n, "mean");
            let lo = ENVELOPE_LO_FACTOR / (n as f64).sqrt();
            let hi = ENVELOPE_HI_FACTOR / (n as f64).sqrt();
            if !(lo..=hi).contains(&mae) {
                let _ = write!(
                    failures,
                    " [{scheme} mean abs error {mae:.4} at N={n} outside [{lo:.4}, {hi:.4}]]"
                );
            }
        }
    }

    let pass = failures.is_empty();
    let detail = format!(
        "slopes {:?}; runtime {elapsed:.1}s{}",
        slopes
            .iter()
            .map(|((s, m), v)| format!("{s}/{m}={v:.2}"))
            .collect::<Vec<_>>(),
        failures
    );
    report("criterion 1 (convergence rate)", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_2_gamma_oracle_match() {
    let settings = gamma::FuseSettings {
        n_particles: 1_000_000,
        seed: 1,
        schemes: vec![
            WeightingScheme::NormingApart,
            WeightingScheme::NormingTogether,
            WeightingScheme::DeterministicMixture,
        ],
        params: crosspol::models::gamma::GammaModelParams::paper_defaults(),
    };
    let summary = gamma::run_fuse(&settings).expect("gamma fuse");
    assert!((summary.analytic_mean - GAMMA_MEAN).abs() < 1e-12);
    assert!((summary.analytic_variance - GAMMA_VARIANCE).abs() < 1e-12);

    let mut failures = String::new();
    let mut detail = String::new();
    for s in &summary.schemes {
        let (mean_tol, var_tol) = if s.scheme == "dm" {
            (DM_MEAN_TOL, DM_VARIANCE_TOL)
        } else {
            (NORMING_MEAN_TOL, NORMING_VARIANCE_TOL)
        };
        let _ = write!(
            detail,
            " {}: mean {:.4} (err {:.4}, tol {mean_tol}), var {:.4} (err {:.4}, tol {var_tol});",
            s.scheme, s.mean, s.abs_error_mean, s.variance, s.abs_error_variance
        );
        if s.abs_error_mean > mean_tol {
            let _ = write!(failures, " [{} mean error {:.4} > {mean_tol}]", s.scheme, s.abs_error_mean);
        }
        if s.abs_error_variance > var_tol {
            let _ = write!(
                failures,
                " [{} variance error {:.4} > {var_tol}]",
                s.scheme, s.abs_error_variance
            );
        }
    }
    let pass = failures.is_empty();
    report(
        "criterion 2 (gamma oracle match)",
        pass,
        &format!("{detail}{failures}"),
    );
    assert!(pass, "{detail}{failures}");
}

fn gauss_term(center: f64, sd: f64) -> LikelihoodTerm {
    LikelihoodTerm::new("gauss", move |p: &[f64]| {
        let d = (p[0] - center) / sd;
        -0.5 * d * d - sd.ln()
    })
}

#[test]
fn criterion_3_structural_identity() {
    let mut worst: f64 = 0.0;
    for instance in 0..STRUCTURAL_INSTANCES {
        let mut rng = RngStream::new(0x57AB, instance as u64);
        let m = 1 + (rng.next_u64() % 4) as usize;
        let inputs: Vec<FusionInput> = (0..m)
            .map(|_| {
                let n = 2 + (rng.next_u64() % 63) as usize;
                let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
                let center = rng.random::<f64>() * 4.0 - 2.0;
                let sd = 0.3 + rng.random::<f64>() * 1.5;
                FusionInput {
                    ensemble: WeightedEnsemble::uniform(values, 1).unwrap(),
                    own_likelihoods: vec![],
                    complement_likelihoods: vec![
                        gauss_term(center, sd),
                        gauss_term(center * 0.5 - 0.3, sd * 1.4),
                    ],
                }
            })
            .collect();

        let together = pool_norming_together(&inputs).expect("together pool");
        let (w_together, _) = together.ensemble.normalized_weights().unwrap();

        // K_j computed from the raw cross-epoch weights
        let per_partition: Vec<(Vec<f64>, f64)> = inputs
            .iter()
            .map(|input| {
                let lw = cross_epoch_log_weights(input).unwrap();
                let z = log_sum_exp(&lw);
                (lw, z)
            })
            .collect();
        let z_all = log_sum_exp(
            &per_partition.iter().map(|(_, z)| *z).collect::<Vec<f64>>(),
        );

        let mut idx = 0;
        for (lw, z_j) in &per_partition {
            let k_j = (z_j - z_all).exp();
            let (w_apart, _) = normalize_log_weights(lw).unwrap();
            for w in w_apart {
                worst = worst.max((w_together[idx] - k_j * w).abs());
                idx += 1;
            }
        }
    }
    let pass = worst < STRUCTURAL_IDENTITY_TOL;
    report(
        "criterion 3 (structural identity)",
        pass,
        &format!(
            "{STRUCTURAL_INSTANCES} randomized instances, worst |together - K_j x apart| = {worst:.2e} (tol {STRUCTURAL_IDENTITY_TOL:.0e})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_degeneracy_reductions() {
    let mut worst_z: f64 = 0.0;
    for instance in 0..DEGENERACY_INSTANCES {
        let mut rng = RngStream::new(0xDE6E, instance as u64);
        let n = 50 + (rng.next_u64() % 200) as usize;
        let shift = rng.random::<f64>() * 10.0 - 5.0;
        let scale = 0.5 + rng.random::<f64>() * 3.0;
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                shift + scale * z
            })
            .collect();
        let input_mean = values.iter().sum::<f64>() / n as f64;
        let input_var =
            values.iter().map(|v| (v - input_mean) * (v - input_mean)).sum::<f64>() / n as f64;
        let se = (input_var / DEGENERACY_N_OUT as f64).sqrt();

        let input = FusionInput {
            ensemble: WeightedEnsemble::uniform(values, 1).unwrap(),
            own_likelihoods: vec![gauss_term(shift, scale)],
            complement_likelihoods: vec![],
        };
        for (k, scheme) in [
            WeightingScheme::NormingApart,
            WeightingScheme::NormingTogether,
            WeightingScheme::DeterministicMixture,
        ]
        .into_iter()
        .enumerate()
        {
            let mut fuse_rng = RngStream::new(0xDE6E + 1, instance as u64 * 8 + k as u64);
            let fused = fuse(scheme, std::slice::from_ref(&input), DEGENERACY_N_OUT, &mut fuse_rng)
                .expect("single-partition fusion");
            let m = fused.moments(0).unwrap();
            worst_z = worst_z.max((m.mean - input_mean).abs() / se);
        }
    }
    let pass = worst_z < 3.0;
    report(
        "criterion 4 (degeneracy reductions)",
        pass,
        &format!(
            "{DEGENERACY_INSTANCES} instances x 3 schemes, worst |z| = {worst_z:.2} (limit 3)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_orbit_experiment() {
    // propagator conservation over 10 periods on a fixed grid of orbits
    let mu = EARTH_GM_KM3_S2;
    let mut worst_drift: f64 = 0.0;
    for (i, &(a, e, inc)) in [
        (6900.0, 0.01, 0.3),
        (7200.0, 0.1, 0.9),
        (8000.0, 0.3, 1.4),
        (26600.0, 0.55, 1.1),
        (42164.0, 0.001, 0.05),
    ]
    .iter()
    .enumerate()
    {
        let s = elements_to_state(a, e, inc, 0.3 * i as f64, 0.7, 1.0, mu, 0.0).unwrap();
        let period = 2.0 * std::f64::consts::PI * (a * a * a / mu as f64).sqrt();
        let out = kepler_propagate(&s, 10.0 * period, mu).unwrap();
        let e0 = s.specific_energy(mu);
        let h0 = s.angular_momentum();
        let h_norm = (h0[0] * h0[0] + h0[1] * h0[1] + h0[2] * h0[2]).sqrt();
        worst_drift = worst_drift.max(((out.specific_energy(mu) - e0) / e0).abs());
        let h1 = out.angular_momentum();
        for k in 0..3 {
            worst_drift = worst_drift.max(((h1[k] - h0[k]) / h_norm).abs());
        }
    }

    let mut pos_failures = 0usize;
    let mut vel_wins = 0usize;
    let mut detail = String::new();
    for &seed in &EXPERIMENT_SEEDS {
        let settings = orbit::OrbitSettings::desk_scale(seed);
        let (summary, _) = orbit::run_orbit_fusion(&settings).expect("orbit fusion");
        let min_pos = summary
            .rmse_leo
            .position_km
            .min(summary.rmse_ground.position_km);
        let min_vel = summary
            .rmse_leo
            .velocity_km_s
            .min(summary.rmse_ground.velocity_km_s);
        if summary.rmse_fused.position_km >= min_pos {
            pos_failures += 1;
        }
        if summary.rmse_fused.velocity_km_s < min_vel {
            vel_wins += 1;
        }
        let _ = write!(
            detail,
            " seed {seed}: pos {:.2}/{min_pos:.2} vel {:.4}/{min_vel:.4};",
            summary.rmse_fused.position_km, summary.rmse_fused.velocity_km_s
        );
    }
    let pass = pos_failures == 0 && vel_wins >= 4 && worst_drift < CONSERVATION_TOL;
    report(
        "criterion 5 (orbit experiment)",
        pass,
        &format!(
            "fused-vs-min RMSE{detail} velocity wins {vel_wins}/5; worst conservation drift {worst_drift:.1e} (tol {CONSERVATION_TOL:.0e})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_bearings_experiment() {
    let mut failures = String::new();
    let mut detail = String::new();
    for &seed in &EXPERIMENT_SEEDS {
        let mut settings = bearings::BearingsSettings::desk_scale(seed);
        settings.block = BearingsBlock::default();
        let (summary, _) = bearings::run_bearings_sequential(&settings).expect("bearings run");

        let min_initial = summary
            .epochs
            .iter()
            .map(|e| e.rmse_initial_pos)
            .fold(f64::INFINITY, f64::min);
        if summary.final_position_rmse >= min_initial {
            let _ = write!(
                failures,
                " [seed {seed}: final fused RMSE {:.3} not below every initial RMSE (min {min_initial:.3})]",
                summary.final_position_rmse
            );
        }
        let worst_resid = summary
            .epochs
            .iter()
            .map(|e| e.fused_mean_bearing_residual)
            .fold(0.0f64, f64::max);
        if worst_resid >= 3.0 * summary.sigma_r {
            let _ = write!(
                failures,
                " [seed {seed}: worst per-epoch residual {:.2} sigma_r >= 3]",
                worst_resid / summary.sigma_r
            );
        }
        let _ = write!(
            detail,
            " seed {seed}: fused {:.3} vs min initial {min_initial:.3}, worst residual {:.2} sigma_r;",
            summary.final_position_rmse,
            worst_resid / summary.sigma_r
        );
    }
    let pass = failures.is_empty();
    report(
        "criterion 6 (bearings experiment)",
        pass,
        &format!("{detail}{failures}"),
    );
    assert!(pass, "{detail}{failures}");
}

/// Independently coded bootstrap (sequential importance resampling)
/// filter: prior draws, motion, weight by the current bearing
/// likelihood, record the weighted position means, multinomial resample.
/// Hand-rolled normalization and resampling, sharing no code with the
/// library path it checks. Returns per-epoch `[x, y]` filtered means.
fn sir_oracle(
    scenario: &BearingsScenario,
    bearings_obs: &[(usize, f64)],
    n: usize,
    seed: u64,
    stream: u64,
) -> Vec<[f64; 2]> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let mut states: Vec<[f64; 4]> = (0..n)
        .map(|_| {
            let mut s = [0.0; 4];
            for k in 0..4 {
                let z: f64 = StandardNormal.sample(&mut rng);
                s[k] = scenario.prior_mean[k] + scenario.prior_sd[k] * z;
            }
            s
        })
        .collect();

    let mut out = Vec::with_capacity(bearings_obs.len());
    for &(sensor_index, z_obs) in bearings_obs {
        // motion step
        for s in &mut states {
            let w1: f64 = StandardNormal.sample(&mut rng);
            let w2: f64 = StandardNormal.sample(&mut rng);
            let (wx, wy) = (scenario.sigma_q * w1, scenario.sigma_q * w2);
            *s = [
                s[0] + s[1] + 0.5 * wx,
                s[1] + wx,
                s[2] + s[3] + 0.5 * wy,
                s[3] + wy,
            ];
        }
        // weight by the current likelihood (log domain, hand-rolled
        // normalization)
        let sensor = scenario.sensors[sensor_index];
        let lw: Vec<f64> = states
            .iter()
            .map(|s| bearing_log_likelihood(s, z_obs, sensor, scenario.sigma_r))
            .collect();
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = lw.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        let w: Vec<f64> = unnorm.iter().map(|u| u / total).collect();

        let mut mean = [0.0; 2];
        for (wi, s) in w.iter().zip(&states) {
            mean[0] += wi * s[0];
            mean[1] += wi * s[2];
        }
        out.push(mean);

        // hand-rolled multinomial resample via inverse CDF
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for wi in &w {
            acc += wi;
            cdf.push(acc);
        }
        let resampled: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let mut lo = 0usize;
                let mut hi = cdf.len() - 1;
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if cdf[mid] <= u {
                        lo = mid + 1;
                    } else {
                        hi = mid;
                    }
                }
                states[lo]
            })
            .collect();
        states = resampled;
    }
    out
}

/// One run of the sequential machinery in the degenerate running-only
/// mode; returns per-epoch `[x, y]` filtered means (pre-resample pooled
/// means for epochs >= 2, the post-resample mean for epoch 1).
fn running_only_means(
    scenario: &BearingsScenario,
    terms: &[LikelihoodTerm],
    n: usize,
    seed: u64,
    stream: u64,
) -> Vec<[f64; 2]> {
    let motion = scenario.motion_model();
    let prior = scenario.prior_sampler();
    let cfg = SequentialConfig {
        running_only: true,
        ..SequentialConfig::new(n, vec![0.0; 4])
    };
    let mut rng = RngStream::new(seed, stream);
    let mut running = init_from_first_observation(&prior, &motion, &terms[0], n, &mut rng).unwrap();
    let m1 = running.mean_state(1).unwrap();
    let mut out = vec![[m1[0], m1[2]]];
    for j in 2..=terms.len() {
        let (next, diag) = sequential_step(
            &running,
            None,
            &terms[..j - 1],
            &terms[j - 1],
            &motion,
            &cfg,
            WeightingScheme::NormingTogether,
            &mut rng,
        )
        .unwrap();
        out.push([diag.pooled_mean[0], diag.pooled_mean[2]]);
        running = next;
    }
    out
}

#[test]
fn criterion_7_sir_equivalence() {
    let mut scenario = BearingsScenario::paper_defaults();
    scenario.truth_x0 = [-0.05, 0.001, 0.7, -0.055];

    let mut worst_z: f64 = 0.0;
    let mut detail = String::new();
    for &seed in &SIR_SEEDS {
        let mut sim_rng = RngStream::new(seed, 0);
        let truth = scenario.simulate_truth(&mut sim_rng).unwrap();
        let terms: Vec<LikelihoodTerm> = truth
            .observations
            .iter()
            .map(|o| scenario.likelihood_term(o))
            .collect();
        let obs_pairs: Vec<(usize, f64)> = truth
            .observations
            .iter()
            .map(|o| (o.sensor_index, o.bearing))
            .collect();

        // independent replicate runs per side; the combined standard
        // error of each per-epoch mean comes from the replicate spread,
        // which is the only estimator of a particle filter's true mean
        // variability (per-run weight-based errors ignore resampling
        // genealogy)
        let seq_reps: Vec<Vec<[f64; 2]>> = (0..SIR_REPLICATES)
            .map(|r| running_only_means(&scenario, &terms, SIR_N, seed, 100 + r as u64))
            .collect();
        let sir_reps: Vec<Vec<[f64; 2]>> = (0..SIR_REPLICATES)
            .map(|r| sir_oracle(&scenario, &obs_pairs, SIR_N, seed, 200 + r as u64))
            .collect();

        let r = SIR_REPLICATES as f64;
        for epoch_idx in 0..scenario.n_steps {
            for d in 0..2 {
                let a: Vec<f64> = seq_reps.iter().map(|rep| rep[epoch_idx][d]).collect();
                let b: Vec<f64> = sir_reps.iter().map(|rep| rep[epoch_idx][d]).collect();
                let mean_a = a.iter().sum::<f64>() / r;
                let mean_b = b.iter().sum::<f64>() / r;
                let var_a =
                    a.iter().map(|x| (x - mean_a) * (x - mean_a)).sum::<f64>() / (r - 1.0);
                let var_b =
                    b.iter().map(|x| (x - mean_b) * (x - mean_b)).sum::<f64>() / (r - 1.0);
                let se = (var_a / r + var_b / r).sqrt();
                let z = (mean_a - mean_b).abs() / se;
                if z > worst_z {
                    worst_z = z;
                    detail = format!(
                        "worst |z| = {z:.2} at seed {seed}, epoch {}, dim {d} (seq {mean_a:+.5}, sir {mean_b:+.5}, combined se {se:.6})",
                        epoch_idx + 1
                    );
                }
            }
        }
    }
    let pass = worst_z < SIR_SIGMAS;
    report(
        "criterion 7 (SIR equivalence)",
        pass,
        &format!(
            "{} seeds x 20 epochs x 2 dims, {SIR_REPLICATES} replicates per side; {detail} (limit {SIR_SIGMAS})",
            SIR_SEEDS.len()
        ),
    );
    assert!(pass, "{detail}");
}

#[test]
fn criterion_8_invariant_suites() {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};

    let config = Config {
        cases: PROPERTY_CASES,
        ..Config::default()
    };
    let mut failures = String::new();

    // weight normalization: shift invariance
    {
        let mut runner = TestRunner::new_with_rng(
            config.clone(),
            proptest::test_runner::TestRng::deterministic_rng(
                proptest::test_runner::RngAlgorithm::ChaCha,
            ),
        );
        let strategy = (
            proptest::collection::vec(-40.0..40.0f64, 1..64),
            -300.0..300.0f64,
        );
        let r = runner.run(&strategy, |(lw, shift)| {
            let (w0, z0) = normalize_log_weights(&lw).unwrap();
            let shifted: Vec<f64> = lw.iter().map(|x| x + shift).collect();
            let (w1, z1) = normalize_log_weights(&shifted).unwrap();
            for (a, b) in w0.iter().zip(&w1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((z1 - z0 - shift).abs() < 1e-9);
            Ok(())
        });
        if let Err(e) = r {
            let _ = write!(failures, " [normalization: {e}]");
        }
    }

    // ESS bounds
    {
        let mut runner = TestRunner::new_with_rng(
            config.clone(),
            proptest::test_runner::TestRng::deterministic_rng(
                proptest::test_runner::RngAlgorithm::ChaCha,
            ),
        );
        let strategy = proptest::collection::vec(-40.0..40.0f64, 1..64);
        let r = runner.run(&strategy, |lw| {
            let (w, _) = normalize_log_weights(&lw).unwrap();
            let ess = effective_sample_size(&w).unwrap();
            prop_assert!(ess >= 1.0 - 1e-12 && ess <= lw.len() as f64 + 1e-9);
            let uniform = vec![1.0 / lw.len() as f64; lw.len()];
            prop_assert!(
                (effective_sample_size(&uniform).unwrap() - lw.len() as f64).abs() < 1e-9
            );
            Ok(())
        });
        if let Err(e) = r {
            let _ = write!(failures, " [ess bounds: {e}]");
        }
    }

    // resampling unbiasedness on a 3-point ensemble
    {
        let mut runner = TestRunner::new_with_rng(
            config.clone(),
            proptest::test_runner::TestRng::deterministic_rng(
                proptest::test_runner::RngAlgorithm::ChaCha,
            ),
        );
        let strategy = (
            proptest::collection::vec(0.01..1.0f64, 3),
            0u64..1_000_000u64,
        );
        let r = runner.run(&strategy, |(raw, seed)| {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let lw: Vec<f64> = w.iter().map(|x| x.ln()).collect();
            let e = WeightedEnsemble::new(vec![0.0, 1.0, 2.0], 1, lw).unwrap();
            let exact: f64 = w.iter().zip([0.0, 1.0, 2.0]).map(|(wi, x)| wi * x).sum();
            let var: f64 = w
                .iter()
                .zip([0.0, 1.0, 2.0])
                .map(|(wi, x)| wi * (x - exact) * (x - exact))
                .sum();
            let n_out = 2000;
            let mut rng = RngStream::new(seed, 23);
            let out = e.multinomial_resample(n_out, &mut rng).unwrap();
            let m = out.moments(0).unwrap();
            let se = (var / n_out as f64).sqrt();
            prop_assert!((m.mean - exact).abs() <= 6.0 * se + 1e-12);
            Ok(())
        });
        if let Err(e) = r {
            let _ = write!(failures, " [resampling unbiasedness: {e}]");
        }
    }

    // likelihood wrap symmetry
    {
        let mut runner = TestRunner::new_with_rng(
            config.clone(),
            proptest::test_runner::TestRng::deterministic_rng(
                proptest::test_runner::RngAlgorithm::ChaCha,
            ),
        );
        let strategy = (-10.0..10.0f64, -10.0..10.0f64, -20.0..20.0f64, 0.1..0.5f64);
        let r = runner.run(&strategy, |(x, y, z, r_off)| {
            let s = [x, 0.0, y, 0.0];
            let sensor = (1.0, -1.0);
            if (x - sensor.0).abs() < 1e-6 && (y - sensor.1).abs() < 1e-6 {
                return Ok(());
            }
            let sigma = 0.01;
            let l1 = bearing_log_likelihood(&s, z, sensor, sigma);
            let l2 =
                bearing_log_likelihood(&s, z + 2.0 * std::f64::consts::PI, sensor, sigma);
            prop_assert!((l1 - l2).abs() < 1e-9);
            let b = crosspol::models::bearings::bearing(&s, sensor).unwrap();
            let lp = bearing_log_likelihood(&s, b + r_off, sensor, sigma);
            let lm = bearing_log_likelihood(&s, b - r_off, sensor, sigma);
            prop_assert!((lp - lm).abs() < 1e-9);
            Ok(())
        });
        if let Err(e) = r {
            let _ = write!(failures, " [wrap symmetry: {e}]");
        }
    }

    // constant-scaling invariance of normalized cross-epoch weights
    // (the Eq. 2.3 form shared by the apart and together schemes), plus
    // the apart pooled weights that inherit it
    {
        let mut runner = TestRunner::new_with_rng(
            config.clone(),
            proptest::test_runner::TestRng::deterministic_rng(
                proptest::test_runner::RngAlgorithm::ChaCha,
            ),
        );
        let strategy = (
            proptest::collection::vec(0.1..8.0f64, 2..32),
            proptest::collection::vec(0.1..8.0f64, 2..32),
            -3.0..3.0f64,
            -50.0..50.0f64,
        );
        let r = runner.run(&strategy, |(va, vb, center, log_c)| {
            let scaled = {
                let inner = gauss_term(center, 0.7);
                LikelihoodTerm::new("scaled", move |p: &[f64]| inner.log_density(p) + log_c)
            };
            let mk = |values: &[f64], first: LikelihoodTerm| FusionInput {
                ensemble: WeightedEnsemble::uniform(values.to_vec(), 1).unwrap(),
                own_likelihoods: vec![],
                complement_likelihoods: vec![first, gauss_term(center - 1.0, 1.1)],
            };
            // per-partition normalized cross-epoch weights are unchanged
            let lw0 = cross_epoch_log_weights(&mk(&va, gauss_term(center, 0.7))).unwrap();
            let lw1 = cross_epoch_log_weights(&mk(&va, scaled.clone())).unwrap();
            let (w0, _) = normalize_log_weights(&lw0).unwrap();
            let (w1, _) = normalize_log_weights(&lw1).unwrap();
            for (a, b) in w0.iter().zip(&w1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // and the norming-apart pooled weights inherit the invariance
            let base = [
                mk(&va, gauss_term(center, 0.7)),
                mk(&vb, gauss_term(center, 0.7)),
            ];
            let scaled_inputs = [mk(&va, scaled.clone()), mk(&vb, scaled)];
            let p0 = pool_norming_apart(&base).unwrap();
            let p1 = pool_norming_apart(&scaled_inputs).unwrap();
            let (w0, _) = p0.ensemble.normalized_weights().unwrap();
            let (w1, _) = p1.ensemble.normalized_weights().unwrap();
            for (a, b) in w0.iter().zip(&w1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            Ok(())
        });
        if let Err(e) = r {
            let _ = write!(failures, " [constant scaling: {e}]");
        }
    }

    let pass = failures.is_empty();
    report(
        "criterion 8 (invariant suites)",
        pass,
        &format!("5 suites x {PROPERTY_CASES} cases{failures}"),
    );
    assert!(pass, "{failures}");
}
