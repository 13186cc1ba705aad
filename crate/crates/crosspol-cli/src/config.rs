//! Experiment configuration: JSON files with strict schema validation
//! (unknown keys are rejected), merged with command-line overrides.
//!
//! Every numeric scenario constant has a built-in default so each
//! experiment runs without a config file; a config overrides defaults and
//! flags override the config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crosspol::fusion::WeightingScheme;
use crosspol::models::bearings::BearingsScenario;
use crosspol::models::gamma::{GammaModelParams, GammaObs};
use crosspol::models::orbit;

/// Failures that map to distinct process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments, or I/O: exit code 2.
    Config(String),
    /// Numerical failure inside a run (weight collapse, propagation):
    /// exit code 3.
    Numerical(crosspol::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<crosspol::Error> for CliError {
    fn from(e: crosspol::Error) -> Self {
        match e {
            crosspol::Error::TotalWeightCollapse
            | crosspol::Error::PartitionCollapse { .. }
            | crosspol::Error::Propagation(_) => CliError::Numerical(e),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Config(_) => 2,
        CliError::Numerical(_) => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GammaConvergence,
    GammaFuse,
    OrbitFusion,
    BearingsSequential,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GammaConvergence => "gamma-convergence",
            ExperimentKind::GammaFuse => "gamma-fuse",
            ExperimentKind::OrbitFusion => "orbit-fusion",
            ExperimentKind::BearingsSequential => "bearings-sequential",
        }
    }
}

/// The on-disk configuration. All fields beyond `experiment` are
/// optional; one model block may be present and it must match the
/// experiment.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    /// apart | together | dm
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub n_particles: Option<usize>,
    #[serde(default)]
    pub n_trials: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub paper_scale: Option<bool>,
    /// Populate wall-clock columns. Off by default so outputs are
    /// bit-reproducible for a given (config, seed).
    #[serde(default)]
    pub timing: Option<bool>,
    #[serde(default)]
    pub gamma: Option<GammaBlock>,
    #[serde(default)]
    pub orbit: Option<OrbitBlock>,
    #[serde(default)]
    pub bearings: Option<BearingsBlock>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if let Some(scheme) = &self.scheme {
            scheme
                .parse::<WeightingScheme>()
                .map_err(CliError::Config)?;
        }
        if self.n_particles == Some(0) {
            return Err(CliError::Config("n_particles must be >= 1".into()));
        }
        if self.n_trials == Some(0) {
            return Err(CliError::Config("n_trials must be >= 1".into()));
        }
        let blocks = [
            (self.gamma.is_some(), "gamma"),
            (self.orbit.is_some(), "orbit"),
            (self.bearings.is_some(), "bearings"),
        ];
        if let Some(kind) = self.experiment {
            let allowed = match kind {
                ExperimentKind::GammaConvergence | ExperimentKind::GammaFuse => "gamma",
                ExperimentKind::OrbitFusion => "orbit",
                ExperimentKind::BearingsSequential => "bearings",
            };
            for (present, name) in blocks {
                if present && name != allowed {
                    return Err(CliError::Config(format!(
                        "config block '{name}' does not belong to experiment '{}'",
                        kind.name()
                    )));
                }
            }
        }
        if let Some(b) = &self.gamma {
            b.to_params().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(b) = &self.bearings {
            b.to_scenario().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn scheme(&self) -> CliResult<Option<WeightingScheme>> {
        match &self.scheme {
            None => Ok(None),
            Some(s) => s
                .parse::<WeightingScheme>()
                .map(Some)
                .map_err(CliError::Config),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GammaBlock {
    pub shape0: f64,
    pub scale0: f64,
    /// Observation pairs `[y_j, k_j]`.
    pub obs: Vec<[f64; 2]>,
}

impl Default for GammaBlock {
    fn default() -> Self {
        let p = GammaModelParams::paper_defaults();
        GammaBlock {
            shape0: p.shape0,
            scale0: p.scale0,
            obs: p.obs.iter().map(|o| [o.y, o.shape]).collect(),
        }
    }
}

impl GammaBlock {
    pub fn to_params(&self) -> crosspol::Result<GammaModelParams> {
        let params = GammaModelParams {
            shape0: self.shape0,
            scale0: self.scale0,
            obs: self
                .obs
                .iter()
                .map(|[y, shape]| GammaObs {
                    y: *y,
                    shape: *shape,
                })
                .collect(),
        };
        params.validate()?;
        Ok(params)
    }
}

/// Classical orbital elements with angles in degrees (config boundary
/// only; everything downstream is radians).
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ElementsBlock {
    pub semi_major_axis_km: f64,
    pub eccentricity: f64,
    pub inclination_deg: f64,
    pub raan_deg: f64,
    pub arg_periapsis_deg: f64,
    pub true_anomaly_deg: f64,
}

impl ElementsBlock {
    pub fn to_state(&self, mu: f64, epoch: f64) -> crosspol::Result<orbit::OrbitState> {
        let d = std::f64::consts::PI / 180.0;
        orbit::elements_to_state(
            self.semi_major_axis_km,
            self.eccentricity,
            self.inclination_deg * d,
            self.raan_deg * d,
            self.arg_periapsis_deg * d,
            self.true_anomaly_deg * d,
            mu,
            epoch,
        )
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitBlock {
    pub mu_km3_s2: f64,
    pub earth_radius_km: f64,
    pub earth_rotation_rad_s: f64,
    pub truth: ElementsBlock,
    pub leo_observer: ElementsBlock,
    pub ground_lat_deg: f64,
    pub ground_lon_deg: f64,
    pub leo_times_s: Vec<f64>,
    pub ground_times_s: Vec<f64>,
    pub sigma_leo_arcsec: f64,
    pub sigma_ground_arcsec: f64,
    /// Absolute prior mean `[x y z vx vy vz]`; when absent, the truth
    /// state offset by `prior_mean_offset` (a stand-in for a coarse
    /// two-position initial-orbit guess).
    pub prior_mean: Option<[f64; 6]>,
    pub prior_mean_offset: [f64; 6],
    pub prior_sd: [f64; 6],
    pub mcmc_coarse_burn_in: usize,
    pub mcmc_burn_in: usize,
    pub mcmc_thin: usize,
    /// Per-dimension proposal scales, one set per sensor chain (the LEO
    /// likelihood is ten times tighter than the ground one).
    pub mcmc_step_scales_leo: [f64; 6],
    pub mcmc_step_scales_ground: [f64; 6],
    pub perturb_bandwidth: [f64; 6],
    pub plot_subsample: usize,
    pub plot_points: usize,
}

impl Default for OrbitBlock {
    fn default() -> Self {
        OrbitBlock {
            mu_km3_s2: orbit::EARTH_GM_KM3_S2,
            earth_radius_km: orbit::EARTH_RADIUS_KM,
            earth_rotation_rad_s: orbit::EARTH_ROTATION_RAD_S,
            truth: ElementsBlock {
                semi_major_axis_km: 7000.0,
                eccentricity: 0.05,
                inclination_deg: 45.0,
                raan_deg: 0.0,
                arg_periapsis_deg: 0.0,
                true_anomaly_deg: 0.0,
            },
            leo_observer: ElementsBlock {
                semi_major_axis_km: 6800.0,
                eccentricity: 0.0,
                inclination_deg: 30.0,
                raan_deg: 0.0,
                arg_periapsis_deg: 0.0,
                true_anomaly_deg: -10.0,
            },
            ground_lat_deg: 35.0,
            ground_lon_deg: -105.0,
            leo_times_s: vec![0.0, 90.0, 180.0],
            ground_times_s: vec![540.0, 660.0, 780.0],
            sigma_leo_arcsec: 2.0,
            sigma_ground_arcsec: 20.0,
            prior_mean: None,
            prior_mean_offset: [50.0, -30.0, 20.0, 0.02, -0.03, 0.01],
            prior_sd: [100.0, 100.0, 100.0, 0.1, 0.1, 0.1],
            mcmc_coarse_burn_in: 8_000,
            mcmc_burn_in: 40_000,
            mcmc_thin: 20,
            mcmc_step_scales_leo: [0.014, 0.014, 0.014, 1.4e-5, 1.4e-5, 1.4e-5],
            mcmc_step_scales_ground: [0.8, 0.8, 0.8, 8e-4, 8e-4, 8e-4],
            perturb_bandwidth: [0.05, 0.05, 0.05, 5e-5, 5e-5, 5e-5],
            plot_subsample: 450,
            plot_points: 120,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BearingsBlock {
    pub sigma_q: f64,
    pub sigma_r: f64,
    pub sensors: Vec<[f64; 2]>,
    pub prior_mean: [f64; 4],
    pub prior_sd: [f64; 4],
    pub truth_x0: [f64; 4],
    pub n_steps: usize,
    pub ess_threshold_fraction: f64,
    /// Per-dimension jitter applied to the newest state after a triggered
    /// resample. The shipped default is measurement-resolution sized
    /// (sigma_r times a unit range on positions, a tenth of that on
    /// velocities); explicit `null` falls back to sigma_q / 10 per
    /// dimension, which is far below the likelihood resolution and leaves
    /// triggered resamples degenerate.
    pub perturb_bandwidth: Option<[f64; 4]>,
    pub dump_epochs: Vec<usize>,
}

impl Default for BearingsBlock {
    fn default() -> Self {
        let s = BearingsScenario::paper_defaults();
        BearingsBlock {
            sigma_q: s.sigma_q,
            sigma_r: s.sigma_r,
            sensors: s.sensors.iter().map(|&(x, y)| [x, y]).collect(),
            prior_mean: s.prior_mean,
            prior_sd: s.prior_sd,
            // The reference text prints a start state whose descent speed
            // sits 50 prior sigmas below the prior mean, which no
            // prior-drawn trajectory can follow; the shipped default uses
            // the source scenario's start (one digit in two entries) so
            // the prior actually covers the truth. The printed variant
            // remains available through this config field.
            truth_x0: [-0.05, 0.001, 0.7, -0.055],
            n_steps: s.n_steps,
            ess_threshold_fraction: 0.5,
            perturb_bandwidth: Some([0.002, 0.0002, 0.002, 0.0002]),
            dump_epochs: vec![1, 4, 7, 10, 13, 16, 19, 20],
        }
    }
}

impl BearingsBlock {
    pub fn to_scenario(&self) -> crosspol::Result<BearingsScenario> {
        let scenario = BearingsScenario {
            sigma_q: self.sigma_q,
            sigma_r: self.sigma_r,
            sensors: self.sensors.iter().map(|[x, y]| (*x, *y)).collect(),
            prior_mean: self.prior_mean,
            prior_sd: self.prior_sd,
            truth_x0: self.truth_x0,
            n_steps: self.n_steps,
            ..BearingsScenario::paper_defaults()
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn bandwidth(&self) -> [f64; 4] {
        self.perturb_bandwidth
            .unwrap_or([self.sigma_q / 10.0; 4])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(
            r#"{"experiment": "gamma-fuse", "no_such_key": 1}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn block_must_match_experiment() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"experiment": "orbit-fusion", "gamma": {"shape0": 1.0, "scale0": 1.0, "obs": []}}"#,
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scheme_strings_parse() {
        for (s, expected) in [
            ("apart", WeightingScheme::NormingApart),
            ("together", WeightingScheme::NormingTogether),
            ("dm", WeightingScheme::DeterministicMixture),
        ] {
            let cfg = ExperimentConfig {
                scheme: Some(s.to_string()),
                ..Default::default()
            };
            assert_eq!(cfg.scheme().unwrap(), Some(expected));
        }
        let bad = ExperimentConfig {
            scheme: Some("sideways".to_string()),
            ..Default::default()
        };
        assert!(bad.scheme().is_err());
    }

    #[test]
    fn default_orbit_block_round_trips_through_json() {
        let block = OrbitBlock::default();
        let text = serde_json::to_string(&block).unwrap();
        let back: OrbitBlock = serde_json::from_str(&text).unwrap();
        assert_eq!(back.plot_subsample, 450);
        assert_eq!(back.sigma_leo_arcsec, 2.0);
    }

    #[test]
    fn bearings_bandwidth_null_falls_back_to_tenth_of_sigma_q() {
        let block = BearingsBlock {
            perturb_bandwidth: None,
            ..BearingsBlock::default()
        };
        assert_eq!(block.bandwidth(), [0.0001; 4]);
        assert_eq!(
            BearingsBlock::default().bandwidth(),
            [0.002, 0.0002, 0.002, 0.0002]
        );
    }
}
