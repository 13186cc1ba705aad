//! Keplerian two-body orbit model with angles-only (right ascension /
//! declination) observers: a sensor in low Earth orbit and a rotating
//! ground station.
//!
//! The inferred quantity is the full 6-dim inertial position/velocity
//! state at a reference epoch; measurement maps propagate a candidate
//! state to each observation time and read off the RADEC geometry. Pure
//! two-body dynamics only: no J2, light time, or aberration.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::angles::wrap_angle;
use crate::error::{Error, Result};
use crate::fusion::LikelihoodTerm;
use crate::rng::RngStream;

use std::f64::consts::PI;

/// Earth gravitational parameter, km^3/s^2. Config-overridable default.
pub const EARTH_GM_KM3_S2: f64 = 398600.4418;
/// Earth radius used for ground stations and the validity floor, km.
pub const EARTH_RADIUS_KM: f64 = 6378.0;
/// Earth rotation rate, rad/s (sidereal).
pub const EARTH_ROTATION_RAD_S: f64 = 7.2921159e-5;

/// Inertial position/velocity at an epoch (km, km/s, s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub epoch: f64,
}

impl OrbitState {
    /// Reassemble a state from a 6-dim particle `[x y z vx vy vz]` pinned
    /// at `epoch`.
    pub fn from_particle(p: &[f64], epoch: f64) -> Self {
        OrbitState {
            position: [p[0], p[1], p[2]],
            velocity: [p[3], p[4], p[5]],
            epoch,
        }
    }

    pub fn to_particle(&self) -> [f64; 6] {
        [
            self.position[0],
            self.position[1],
            self.position[2],
            self.velocity[0],
            self.velocity[1],
            self.velocity[2],
        ]
    }

    /// Specific orbital energy `v^2/2 - mu/r` (km^2/s^2).
    pub fn specific_energy(&self, mu: f64) -> f64 {
        dot(self.velocity, self.velocity) / 2.0 - mu / norm(self.position)
    }

    /// Specific angular momentum vector `r x v`.
    pub fn angular_momentum(&self) -> [f64; 3] {
        cross(self.position, self.velocity)
    }
}

/// An observation platform: either another orbiting sensor or a ground
/// station fixed to the rotating Earth.
#[derive(Debug, Clone)]
pub enum Observer {
    Leo { orbit: OrbitState },
    Ground {
        lat_rad: f64,
        lon_rad: f64,
        rotation_rate: f64,
        radius_km: f64,
    },
}

/// One right ascension / declination measurement with its 1-sigma angular
/// noise (radians) and the observer that took it.
#[derive(Debug, Clone)]
pub struct RadecObs {
    pub ra: f64,
    pub dec: f64,
    pub time: f64,
    pub sigma: f64,
    pub observer: Observer,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Stumpff functions c2(psi), c3(psi) with a series fallback near zero.
fn stumpff_c2_c3(psi: f64) -> (f64, f64) {
    if psi > 1e-6 {
        let s = psi.sqrt();
        ((1.0 - s.cos()) / psi, (s - s.sin()) / (psi * s))
    } else if psi < -1e-6 {
        let s = (-psi).sqrt();
        ((1.0 - s.cosh()) / psi, (s.sinh() - s) / (-psi * s))
    } else {
        (
            0.5 - psi / 24.0 + psi * psi / 720.0 - psi * psi * psi / 40320.0,
            1.0 / 6.0 - psi / 120.0 + psi * psi / 5040.0 - psi * psi * psi / 362880.0,
        )
    }
}

/// Two-body propagation by `dt` seconds via Newton iteration on the
/// universal-variable Kepler equation, closing with the f and g
/// functions.
///
/// Only bound (elliptical) orbits are accepted; the Newton tolerance
/// corresponds to an eccentric-anomaly residual below 1e-12 rad, with at
/// most 50 iterations.
pub fn kepler_propagate(s: &OrbitState, dt: f64, mu: f64) -> Result<OrbitState> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::invalid("mu must be positive and finite"));
    }
    let r0 = s.position;
    let v0 = s.velocity;
    let r0_mag = norm(r0);
    if r0_mag == 0.0 {
        return Err(Error::invalid("degenerate state at the attracting center"));
    }
    let energy = dot(v0, v0) / 2.0 - mu / r0_mag;
    if energy >= 0.0 {
        return Err(Error::invalid(format!(
            "unbound orbit (specific energy {energy} >= 0)"
        )));
    }
    if dt == 0.0 {
        return Ok(*s);
    }

    let alpha = -2.0 * energy / mu; // 1/a, positive for bound orbits
    let semi_major = 1.0 / alpha;
    let rdotv = dot(r0, v0);
    let sqrt_mu = mu.sqrt();

    // chi = sqrt(a) * delta-eccentric-anomaly, so this tolerance is an
    // anomaly residual of 1e-12 rad
    let chi_tol = 1e-12 * semi_major.sqrt();

    let mut chi = sqrt_mu * dt * alpha;
    let mut converged = false;
    for _ in 0..50 {
        let chi2 = chi * chi;
        let psi = chi2 * alpha;
        let (c2, c3) = stumpff_c2_c3(psi);
        let r = chi2 * c2 + rdotv / sqrt_mu * chi * (1.0 - psi * c3) + r0_mag * (1.0 - psi * c2);
        let f = r0_mag * chi * (1.0 - psi * c3) + rdotv / sqrt_mu * chi2 * c2 + chi2 * chi * c3
            - sqrt_mu * dt;
        let delta = f / r;
        chi -= delta;
        if delta.abs() < chi_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Propagation(format!(
            "universal Kepler iteration did not converge for dt = {dt}"
        )));
    }

    let chi2 = chi * chi;
    let psi = chi2 * alpha;
    let (c2, c3) = stumpff_c2_c3(psi);
    let r_mag = chi2 * c2 + rdotv / sqrt_mu * chi * (1.0 - psi * c3) + r0_mag * (1.0 - psi * c2);

    let f = 1.0 - chi2 * c2 / r0_mag;
    let g = dt - chi2 * chi * c3 / sqrt_mu;
    let f_dot = sqrt_mu / (r_mag * r0_mag) * chi * (psi * c3 - 1.0);
    let g_dot = 1.0 - chi2 * c2 / r_mag;

    Ok(OrbitState {
        position: [
            f * r0[0] + g * v0[0],
            f * r0[1] + g * v0[1],
            f * r0[2] + g * v0[2],
        ],
        velocity: [
            f_dot * r0[0] + g_dot * v0[0],
            f_dot * r0[1] + g_dot * v0[1],
            f_dot * r0[2] + g_dot * v0[2],
        ],
        epoch: s.epoch + dt,
    })
}

/// Topocentric right ascension and declination of `target_pos` as seen
/// from `observer_pos`: `ra = atan2(dy, dx)` in `(-pi, pi]`,
/// `dec = asin(dz / range)`.
pub fn radec_from_geometry(target_pos: [f64; 3], observer_pos: [f64; 3]) -> Result<(f64, f64)> {
    let d = [
        target_pos[0] - observer_pos[0],
        target_pos[1] - observer_pos[1],
        target_pos[2] - observer_pos[2],
    ];
    let range = norm(d);
    if range == 0.0 {
        return Err(Error::invalid("target and observer positions coincide"));
    }
    let ra = wrap_angle(d[1].atan2(d[0]));
    let dec = (d[2] / range).clamp(-1.0, 1.0).asin();
    Ok((ra, dec))
}

/// Inertial position of an observer at time `t`: an orbiting sensor is
/// two-body propagated, a ground station is the Earth-fixed point rotated
/// about the inertial z axis.
pub fn observer_position(observer: &Observer, t: f64, mu: f64) -> Result<[f64; 3]> {
    match observer {
        Observer::Leo { orbit } => Ok(kepler_propagate(orbit, t - orbit.epoch, mu)?.position),
        Observer::Ground {
            lat_rad,
            lon_rad,
            rotation_rate,
            radius_km,
        } => {
            let lon = lon_rad + rotation_rate * t;
            Ok([
                radius_km * lat_rad.cos() * lon.cos(),
                radius_km * lat_rad.cos() * lon.sin(),
                radius_km * lat_rad.sin(),
            ])
        }
    }
}

/// Log bivariate Gaussian density of the wrapped RADEC residual between
/// the particle's predicted measurement and `obs`, with covariance
/// `sigma^2 I_2`. The RA residual is wrapped to `(-pi, pi]`; no cos(dec)
/// metric correction is applied, matching a plain Gaussian on the two
/// angles. Returns `-inf` when the particle cannot be propagated to the
/// observation time.
pub fn radec_log_likelihood(particle: &OrbitState, obs: &RadecObs, mu: f64) -> f64 {
    let predicted = kepler_propagate(particle, obs.time - particle.epoch, mu)
        .and_then(|s| {
            let op = observer_position(&obs.observer, obs.time, mu)?;
            radec_from_geometry(s.position, op)
        });
    match predicted {
        Ok((ra, dec)) => {
            let dra = wrap_angle(ra - obs.ra);
            let ddec = dec - obs.dec;
            let s2 = obs.sigma * obs.sigma;
            -(2.0 * PI * s2).ln() - 0.5 * (dra * dra + ddec * ddec) / s2
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// A RADEC likelihood group over 6-dim particles pinned at
/// `reference_epoch`, with a shared counter of propagation failures
/// mapped to `-inf`.
pub struct RadecLikelihood {
    pub term: LikelihoodTerm,
    pub propagation_failures: Arc<AtomicUsize>,
}

pub fn likelihood_term(obs: RadecObs, mu: f64, reference_epoch: f64) -> RadecLikelihood {
    let failures = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&failures);
    let label = format!("radec t={}", obs.time);
    let term = LikelihoodTerm::new(label, move |p| {
        let state = OrbitState::from_particle(p, reference_epoch);
        let ll = radec_log_likelihood(&state, &obs, mu);
        if ll == f64::NEG_INFINITY {
            counter.fetch_add(1, Ordering::Relaxed);
        }
        ll
    });
    RadecLikelihood {
        term,
        propagation_failures: failures,
    }
}

/// One scheduled measurement opportunity.
#[derive(Debug, Clone)]
pub struct ObservationSpec {
    pub time: f64,
    pub observer: Observer,
    pub sigma: f64,
}

/// Generate noisy RADEC observations of `truth` along a schedule:
/// noiseless geometry plus i.i.d. Gaussian noise of the scheduled sigma
/// on each angle component.
pub fn simulate_scenario(
    truth: &OrbitState,
    schedule: &[ObservationSpec],
    mu: f64,
    rng: &mut RngStream,
) -> Result<Vec<RadecObs>> {
    let mut out = Vec::with_capacity(schedule.len());
    for spec in schedule {
        if spec.time < truth.epoch {
            return Err(Error::invalid(format!(
                "observation time {} precedes the truth epoch {}",
                spec.time, truth.epoch
            )));
        }
        let state = kepler_propagate(truth, spec.time - truth.epoch, mu)?;
        let op = observer_position(&spec.observer, spec.time, mu)?;
        let (ra0, dec0) = radec_from_geometry(state.position, op)?;
        let zr: f64 = StandardNormal.sample(rng);
        let zd: f64 = StandardNormal.sample(rng);
        out.push(RadecObs {
            ra: wrap_angle(ra0 + spec.sigma * zr),
            dec: (dec0 + spec.sigma * zd).clamp(-PI / 2.0, PI / 2.0),
            time: spec.time,
            sigma: spec.sigma,
            observer: spec.observer.clone(),
        });
    }
    Ok(out)
}

/// Classical orbital elements to an inertial state: semi-major axis (km),
/// eccentricity, inclination / RAAN / argument of periapsis / true
/// anomaly (rad).
pub fn elements_to_state(
    a: f64,
    e: f64,
    inc: f64,
    raan: f64,
    argp: f64,
    nu: f64,
    mu: f64,
    epoch: f64,
) -> Result<OrbitState> {
    if !(a > 0.0) || !(e >= 0.0) || e >= 1.0 {
        return Err(Error::invalid(
            "elements must describe a bound ellipse (a > 0, 0 <= e < 1)",
        ));
    }
    let p = a * (1.0 - e * e);
    let r = p / (1.0 + e * nu.cos());
    let r_pf = [r * nu.cos(), r * nu.sin(), 0.0];
    let vs = (mu / p).sqrt();
    let v_pf = [-vs * nu.sin(), vs * (e + nu.cos()), 0.0];

    let (cr, sr) = (raan.cos(), raan.sin());
    let (ci, si) = (inc.cos(), inc.sin());
    let (cw, sw) = (argp.cos(), argp.sin());
    // R = Rz(raan) Rx(inc) Rz(argp)
    let rot = [
        [
            cr * cw - sr * sw * ci,
            -cr * sw - sr * cw * ci,
            sr * si,
        ],
        [
            sr * cw + cr * sw * ci,
            -sr * sw + cr * cw * ci,
            -cr * si,
        ],
        [sw * si, cw * si, ci],
    ];
    let apply = |v: [f64; 3]| {
        [
            rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2],
            rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2],
            rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2],
        ]
    };
    Ok(OrbitState {
        position: apply(r_pf),
        velocity: apply(v_pf),
        epoch,
    })
}
