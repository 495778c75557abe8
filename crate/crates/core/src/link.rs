//! Downlink channel loss budget.
//!
//! Four contributions, each reported in positive dB: far-field diffraction
//! spreading versus the receiver aperture, pointing-jitter penalty,
//! plane-parallel atmospheric attenuation (zenith value scaled by airmass
//! 1/sin ε), and receiver optics transmission.
//!
//! The transmitted beam is a Gaussian of waist w0 = tx_aperture/2 with M²
//! times the diffraction-limited divergence θ = M² λ / (π w0); truncation is
//! ignored. The fraction collected by a centered aperture of radius a is
//! 1 − exp(−2a²/w²). Pointing error displaces the beam by a Gaussian offset
//! per axis (std σ = jitter · range); averaging the collected fraction over
//! that offset is exact after convolving the beam with the pointing
//! distribution, which simply widens the effective spot to
//! w_eff² = w² + 4σ².

use crate::orbit::PassSample;
use crate::params::LinkParams;
use serde::Serialize;

/// Per-contribution loss at one pass sample, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkBreakdown {
    pub geometric_loss_db: f64,
    pub pointing_loss_db: f64,
    pub atmospheric_loss_db: f64,
    pub optics_loss_db: f64,
    pub total_loss_db: f64,
}

fn db_from_fraction(fraction: f64) -> f64 {
    -10.0 * fraction.log10()
}

/// 1/e² beam radius after `range_km` of propagation, m.
fn beam_radius_m(range_km: f64, tx_aperture_m: f64, m2: f64, wavelength_nm: f64) -> f64 {
    let w0 = tx_aperture_m / 2.0;
    let theta = m2 * wavelength_nm * 1e-9 / (std::f64::consts::PI * w0);
    let z = range_km * 1e3;
    (w0 * w0 + theta * theta * z * z).sqrt()
}

/// Fraction of the transmitted beam collected by the receiver aperture,
/// averaged over Gaussian pointing error of std `pointing_jitter_urad` per
/// axis.
pub fn geometric_collection(
    range_km: f64,
    tx_aperture_m: f64,
    rx_aperture_m: f64,
    m2: f64,
    wavelength_nm: f64,
    pointing_jitter_urad: f64,
) -> f64 {
    let w = beam_radius_m(range_km, tx_aperture_m, m2, wavelength_nm);
    let sigma = pointing_jitter_urad * 1e-6 * range_km * 1e3;
    let w_eff_sq = w * w + 4.0 * sigma * sigma;
    let a = rx_aperture_m / 2.0;
    1.0 - (-2.0 * a * a / w_eff_sq).exp()
}

/// Full loss breakdown for one pass sample.
pub fn channel_loss(
    sample: &PassSample,
    link: &LinkParams,
    signal_wavelength_nm: f64,
) -> LinkBreakdown {
    let captured_centered = geometric_collection(
        sample.slant_range_km,
        link.tx_aperture_m,
        link.rx_aperture_m,
        link.beam_quality_m2,
        signal_wavelength_nm,
        0.0,
    );
    let captured_jittered = geometric_collection(
        sample.slant_range_km,
        link.tx_aperture_m,
        link.rx_aperture_m,
        link.beam_quality_m2,
        signal_wavelength_nm,
        link.pointing_jitter_urad,
    );
    let geometric_loss_db = db_from_fraction(captured_centered);
    let pointing_loss_db = (db_from_fraction(captured_jittered) - geometric_loss_db).max(0.0);
    let airmass = 1.0 / sample.elevation_deg.to_radians().sin();
    let atmospheric_loss_db = link.zenith_atm_loss_db * airmass;
    let optics_loss_db = db_from_fraction(link.optics_efficiency);
    LinkBreakdown {
        geometric_loss_db,
        pointing_loss_db,
        atmospheric_loss_db,
        optics_loss_db,
        total_loss_db: geometric_loss_db + pointing_loss_db + atmospheric_loss_db + optics_loss_db,
    }
}
