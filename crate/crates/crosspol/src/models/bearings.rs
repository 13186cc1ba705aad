//! Two-sensor bearings-only tracking problem: a near-constant-velocity
//! planar target driven by a linear-Gaussian motion model, observed
//! through noisy full-quadrant bearing angles from two fixed sensors
//! with alternating cadence.

use rand_distr::{Distribution, StandardNormal};

use crate::angles::wrap_angle;
use crate::error::{Error, Result};
use crate::fusion::LikelihoodTerm;
use crate::rng::RngStream;
use crate::samplers::PriorSampler;
use crate::sequential::MotionModel;

use std::f64::consts::PI;

/// State ordering is `(x, x_dot, y, y_dot)` with an implicit unit time
/// step baked into the transition matrix.
pub type BearingsState = [f64; 4];

/// Unit-step constant-velocity transition matrix.
pub const PHI: [[f64; 4]; 4] = [
    [1.0, 1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 1.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Maps the 2-dim acceleration-like noise into the state.
pub const GAMMA: [[f64; 2]; 4] = [
    [0.5, 0.0],
    [1.0, 0.0],
    [0.0, 0.5],
    [0.0, 1.0],
];

/// Scenario constants: dynamics, noise scales, sensor sites, prior, truth
/// start, and horizon.
#[derive(Debug, Clone)]
pub struct BearingsScenario {
    pub phi: [[f64; 4]; 4],
    pub gamma: [[f64; 2]; 4],
    pub sigma_q: f64,
    pub sigma_r: f64,
    pub sensors: Vec<(f64, f64)>,
    pub prior_mean: [f64; 4],
    /// Standard deviations of the diagonal Gaussian prior.
    pub prior_sd: [f64; 4],
    pub truth_x0: [f64; 4],
    pub n_steps: usize,
}

impl BearingsScenario {
    /// The reference two-sensor scenario: sigma_q = 0.001, sigma_r = 0.005,
    /// sensors at (-1, 1) and (1, -1), prior N([0, 0, 0.4, -0.05],
    /// diag(0.5^2, 0.005^2, 0.3^2, 0.01^2)), truth start
    /// [-0.5, 0.001, 0.7, -0.55], 20 steps.
    pub fn paper_defaults() -> Self {
        BearingsScenario {
            phi: PHI,
            gamma: GAMMA,
            sigma_q: 0.001,
            sigma_r: 0.005,
            sensors: vec![(-1.0, 1.0), (1.0, -1.0)],
            prior_mean: [0.0, 0.0, 0.4, -0.05],
            prior_sd: [0.5, 0.005, 0.3, 0.01],
            truth_x0: [-0.5, 0.001, 0.7, -0.55],
            n_steps: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_q > 0.0) || !(self.sigma_r > 0.0) {
            return Err(Error::invalid("sigma_q and sigma_r must be > 0"));
        }
        if self.prior_sd.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("prior standard deviations must be > 0"));
        }
        if self.sensors.is_empty() {
            return Err(Error::invalid("at least one sensor is required"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be >= 1"));
        }
        Ok(())
    }

    /// Sensor observing epoch `j` (1-indexed): odd epochs go to the first
    /// sensor, even epochs to the second.
    pub fn sensor_for_epoch(&self, epoch: usize) -> (f64, f64) {
        self.sensors[(epoch - 1) % self.sensors.len()]
    }

    /// One motion step with this scenario's transition and noise map.
    pub fn step(&self, s: &BearingsState, rng: &mut RngStream) -> BearingsState {
        step_with(&self.phi, &self.gamma, self.sigma_q, s, rng)
    }

    pub fn motion_model(&self) -> MotionModel {
        let phi = self.phi;
        let gamma = self.gamma;
        let sigma_q = self.sigma_q;
        MotionModel::new(4, move |s, rng| {
            let state: BearingsState = [s[0], s[1], s[2], s[3]];
            step_with(&phi, &gamma, sigma_q, &state, rng).to_vec()
        })
    }

    pub fn prior_sampler(&self) -> PriorSampler {
        let mean = self.prior_mean;
        let sd = self.prior_sd;
        PriorSampler::new(4, move |rng| {
            (0..4)
                .map(|k| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean[k] + sd[k] * z
                })
                .collect()
        })
    }

    /// Truth trajectory (states at epochs `1..=n_steps`) and the noisy
    /// alternating-sensor bearing observations taken of it.
    pub fn simulate_truth(&self, rng: &mut RngStream) -> Result<BearingsTruth> {
        self.validate()?;
        let mut states = Vec::with_capacity(self.n_steps);
        let mut observations = Vec::with_capacity(self.n_steps);
        let mut x = self.truth_x0;
        for epoch in 1..=self.n_steps {
            x = self.step(&x, rng);
            let sensor = self.sensor_for_epoch(epoch);
            let b = bearing(&x, sensor)?;
            let z: f64 = StandardNormal.sample(rng);
            states.push(x);
            observations.push(BearingObs {
                epoch,
                sensor_index: (epoch - 1) % self.sensors.len(),
                bearing: wrap_angle(b + self.sigma_r * z),
            });
        }
        Ok(BearingsTruth {
            states,
            observations,
        })
    }

    /// The likelihood group of one bearing observation, over 4-dim
    /// particles (applied by the sequential machinery to the state slice
    /// at the observation's epoch).
    pub fn likelihood_term(&self, obs: &BearingObs) -> LikelihoodTerm {
        let sensor = self.sensors[obs.sensor_index];
        let z = obs.bearing;
        let sigma_r = self.sigma_r;
        LikelihoodTerm::new(
            format!("bearing epoch={} sensor={}", obs.epoch, obs.sensor_index),
            move |p| {
                let s: BearingsState = [p[0], p[1], p[2], p[3]];
                bearing_log_likelihood(&s, z, sensor, sigma_r)
            },
        )
    }
}

/// A simulated truth run: states at epochs `1..=n_steps` and one bearing
/// observation per epoch.
#[derive(Debug, Clone)]
pub struct BearingsTruth {
    pub states: Vec<BearingsState>,
    pub observations: Vec<BearingObs>,
}

#[derive(Debug, Clone, Copy)]
pub struct BearingObs {
    pub epoch: usize,
    pub sensor_index: usize,
    pub bearing: f64,
}

fn step_with(
    phi: &[[f64; 4]; 4],
    gamma: &[[f64; 2]; 4],
    sigma_q: f64,
    s: &BearingsState,
    rng: &mut RngStream,
) -> BearingsState {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let w = [sigma_q * z1, sigma_q * z2];
    let mut out = [0.0; 4];
    for i in 0..4 {
        let mut v = 0.0;
        for (j, sj) in s.iter().enumerate() {
            v += phi[i][j] * sj;
        }
        out[i] = v + gamma[i][0] * w[0] + gamma[i][1] * w[1];
    }
    out
}

/// One step of the reference unit-step motion model, `Phi s + Gamma w`
/// with `w ~ N(0, sigma_q^2 I_2)`.
pub fn motion_step(s: &BearingsState, sigma_q: f64, rng: &mut RngStream) -> BearingsState {
    step_with(&PHI, &GAMMA, sigma_q, s, rng)
}

/// Full-quadrant bearing `atan2(y - y_s, x - x_s)` in `(-pi, pi]`.
pub fn bearing(s: &BearingsState, sensor: (f64, f64)) -> Result<f64> {
    let dx = s[0] - sensor.0;
    let dy = s[2] - sensor.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::invalid("target coincides with the sensor"));
    }
    Ok(wrap_angle(dy.atan2(dx)))
}

/// Gaussian log-density of the wrapped bearing residual.
pub fn bearing_log_likelihood(
    s: &BearingsState,
    z: f64,
    sensor: (f64, f64),
    sigma_r: f64,
) -> f64 {
    match bearing(s, sensor) {
        Ok(b) => {
            let resid = wrap_angle(b - z);
            -(sigma_r * (2.0 * PI).sqrt()).ln() - 0.5 * (resid / sigma_r) * (resid / sigma_r)
        }
        Err(_) => f64::NEG_INFINITY,
    }
}
