//! Circular-orbit pass geometry over a fixed ground station.
//!
//! Spherical Earth, circular orbit, Earth rotation neglected over one pass.
//! A pass is parameterized by its maximum elevation: the satellite ground
//! track is a great circle whose closest angular approach to the station is
//! the offset angle `beta0`. With `psi(t)` the Earth-central angle between
//! the sub-satellite point and the station,
//!
//!   cos psi(t) = cos(beta0) * cos(omega * t)
//!
//! where `omega = sqrt(GM / (Re + h)^3)` is the orbital angular rate and
//! `beta0 = psi(max_elevation)` follows from the elevation relation
//! `tan(el) = (cos psi - Re/r) / sin psi`, `r = Re + h`.

use crate::params::OrbitParams;
use serde::Serialize;
use thiserror::Error;

/// Gravitational parameter of Earth, km^3/s^2.
pub const EARTH_GM_KM3_S2: f64 = 398_600.44;

/// Geometry at one instant of a pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PassSample {
    /// Seconds relative to closest approach.
    pub t_s: f64,
    pub elevation_deg: f64,
    pub slant_range_km: f64,
}

#[derive(Debug, Error)]
pub enum OrbitError {
    #[error("degenerate orbit: altitude {0} km must be > 0")]
    DegenerateOrbit(f64),
    #[error("empty pass: max elevation {max:.2}° below cutoff {min:.2}°")]
    EmptyPass { max: f64, min: f64 },
}

/// Ground-station slant range for a given elevation.
///
/// d = sqrt(Re² sin²ε + 2 Re h + h²) − Re sin ε
pub fn slant_range_km(elevation_deg: f64, altitude_km: f64, earth_radius_km: f64) -> f64 {
    let sin_e = elevation_deg.to_radians().sin();
    let re = earth_radius_km;
    let h = altitude_km;
    (re * re * sin_e * sin_e + 2.0 * re * h + h * h).sqrt() - re * sin_e
}

/// Earth-central angle between sub-satellite point and station at a given
/// elevation: psi = 90° − ε − asin(Re cos ε / r).
pub fn central_angle_rad(elevation_deg: f64, altitude_km: f64, earth_radius_km: f64) -> f64 {
    let e = elevation_deg.to_radians();
    let r = earth_radius_km + altitude_km;
    std::f64::consts::FRAC_PI_2 - e - (earth_radius_km * e.cos() / r).asin()
}

/// Elevation (deg) from the Earth-central angle.
pub fn elevation_from_central_angle_deg(
    psi_rad: f64,
    altitude_km: f64,
    earth_radius_km: f64,
) -> f64 {
    let r = earth_radius_km + altitude_km;
    let num = psi_rad.cos() - earth_radius_km / r;
    num.atan2(psi_rad.sin()).to_degrees()
}

/// Slant range (km) from the Earth-central angle (law of cosines).
pub fn slant_range_from_central_angle_km(
    psi_rad: f64,
    altitude_km: f64,
    earth_radius_km: f64,
) -> f64 {
    let r = earth_radius_km + altitude_km;
    let re = earth_radius_km;
    (re * re + r * r - 2.0 * re * r * psi_rad.cos()).sqrt()
}

/// Orbital angular rate, rad/s.
pub fn orbital_rate_rad_s(altitude_km: f64, earth_radius_km: f64) -> f64 {
    let r = earth_radius_km + altitude_km;
    (EARTH_GM_KM3_S2 / (r * r * r)).sqrt()
}

/// Half-duration of the pass above the elevation cutoff, s.
pub fn pass_half_duration_s(orbit: &OrbitParams) -> Result<f64, OrbitError> {
    if orbit.altitude_km <= 0.0 {
        return Err(OrbitError::DegenerateOrbit(orbit.altitude_km));
    }
    if orbit.max_elevation_deg < orbit.min_elevation_deg {
        return Err(OrbitError::EmptyPass {
            max: orbit.max_elevation_deg,
            min: orbit.min_elevation_deg,
        });
    }
    let beta0 = central_angle_rad(
        orbit.max_elevation_deg,
        orbit.altitude_km,
        orbit.earth_radius_km,
    );
    let psi_max = central_angle_rad(
        orbit.min_elevation_deg,
        orbit.altitude_km,
        orbit.earth_radius_km,
    );
    let omega = orbital_rate_rad_s(orbit.altitude_km, orbit.earth_radius_km);
    let ratio = (psi_max.cos() / beta0.cos()).clamp(-1.0, 1.0);
    Ok(ratio.acos() / omega)
}

/// Uniformly sampled pass, symmetric about closest approach (t = 0).
pub fn pass_geometry(orbit: &OrbitParams) -> Result<Vec<PassSample>, OrbitError> {
    let half = pass_half_duration_s(orbit)?;
    let beta0 = central_angle_rad(
        orbit.max_elevation_deg,
        orbit.altitude_km,
        orbit.earth_radius_km,
    );
    let omega = orbital_rate_rad_s(orbit.altitude_km, orbit.earth_radius_km);
    let dt = orbit.sample_dt_s;
    // tiny slack keeps the endpoint sample at exactly the cutoff elevation
    let steps = ((half / dt) * (1.0 + 1e-12)).floor() as i64;
    let mut samples = Vec::with_capacity((2 * steps + 1) as usize);
    for k in -steps..=steps {
        let t = k as f64 * dt;
        let cos_psi = beta0.cos() * (omega * t).cos();
        let psi = cos_psi.clamp(-1.0, 1.0).acos();
        samples.push(PassSample {
            t_s: t,
            elevation_deg: elevation_from_central_angle_deg(
                psi,
                orbit.altitude_km,
                orbit.earth_radius_km,
            ),
            slant_range_km: slant_range_from_central_angle_km(
                psi,
                orbit.altitude_km,
                orbit.earth_radius_km,
            ),
        });
    }
    Ok(samples)
}
