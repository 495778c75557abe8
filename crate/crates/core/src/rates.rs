//! Analytic BBM92 count-rate statistics.
//!
//! Chain at one operating point (fixed channel loss):
//!
//! - singles per side: pair photons plus dark/background noise, each detector
//!   throttled by non-paralyzable dead time m = r/(1 + r·t_dead), then
//!   inflated by the after-pulse probability;
//! - true coincidences: pairs surviving both arms, both dead times, and the
//!   coincidence-window capture of the combined timing spread;
//! - accidental coincidences: product rule S_a·S_b·τ between measured
//!   photon-origin singles (multi-pair pile-up);
//! - noise coincidences: the remaining product-rule pairings, i.e. anything
//!   involving a dark, background or after-pulse count;
//! - QBER: source term (1−V)/2 on true pairs, 1/2 on accidental and noise
//!   pairs;
//! - asymptotic secret key rate R = sifted · max(0, 1 − f·h(Q) − h(Q)).

use crate::params::{DetectorParams, SystemParams};
use serde::Serialize;
use thiserror::Error;

/// Which detection setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Space,
    Ground,
}

/// Full analytic bundle at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub singles_space_cps: f64,
    pub singles_ground_cps: f64,
    pub coinc_true_cps: f64,
    pub coinc_acc_cps: f64,
    pub coinc_noise_cps: f64,
    pub qber: f64,
    pub sifted_rate_cps: f64,
    pub asym_key_rate_cps: f64,
    pub mean_pairs_per_window: f64,
}

#[derive(Debug, Error)]
pub enum RateError {
    #[error("no coincidences: QBER undefined for zero total coincidence rate")]
    NoCoincidences,
}

/// Binary entropy, bits.
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// Measured singles split by origin, after dead time and after-pulsing.
#[derive(Debug, Clone, Copy)]
pub struct SinglesBreakdown {
    /// Pair-photon singles that survive dead time, cps.
    pub photon_cps: f64,
    /// Dark + background + after-pulse singles, cps.
    pub noise_cps: f64,
    /// Everything recorded, cps.
    pub total_cps: f64,
    /// Per-event dead-time survival probability.
    pub deadtime_survival: f64,
}

fn detector_breakdown(
    det: &DetectorParams,
    photon_raw_cps: f64,
    noise_raw_cps: f64,
    cap_cps: f64,
) -> SinglesBreakdown {
    let arrivals = photon_raw_cps + noise_raw_cps;
    let per_detector = arrivals / 4.0;
    let survival = 1.0 / (1.0 + per_detector * det.dead_time_s());
    let mut photon = photon_raw_cps * survival;
    let mut noise = noise_raw_cps * survival;
    // after-pulses are uncorrelated extra counts on top of what was recorded
    noise += (photon + noise) * det.afterpulse_prob;
    if cap_cps > 0.0 {
        let total = photon + noise;
        if total > cap_cps {
            let scale = cap_cps / total;
            photon *= scale;
            noise *= scale;
        }
    }
    SinglesBreakdown {
        photon_cps: photon,
        noise_cps: noise,
        total_cps: photon + noise,
        deadtime_survival: survival,
    }
}

/// Measured singles breakdown for one side. Link loss applies to the ground
/// side only.
pub fn singles_breakdown(params: &SystemParams, loss_db: f64, side: Side) -> SinglesBreakdown {
    let b = params.source.pair_rate;
    match side {
        Side::Space => detector_breakdown(
            &params.detector_space,
            b * params.detector_space.efficiency,
            4.0 * params.detector_space.dark_cps,
            params.protocol.space_singles_cap_cps,
        ),
        Side::Ground => {
            let transmittance = 10f64.powf(-loss_db / 10.0);
            detector_breakdown(
                &params.detector_ground,
                b * params.detector_ground.efficiency * transmittance,
                4.0 * params.detector_ground.dark_cps + params.link.background_cps,
                0.0,
            )
        }
    }
}

/// Total measured singles for one side, cps.
pub fn singles(params: &SystemParams, loss_db: f64, side: Side) -> f64 {
    singles_breakdown(params, loss_db, side).total_cps
}

/// Product-rule rate of uncorrelated pairings between two singles streams.
pub fn pairwise_accidental_rate(s_a_cps: f64, s_b_cps: f64, tau_c_s: f64) -> f64 {
    s_a_cps * s_b_cps * tau_c_s
}

/// Standard deviation of the space-ground detection time difference, ps.
///
/// Combines both detectors' Gaussian jitter, both time-tag quantizations
/// (uniform, variance res²/12) and the budgeted time-transfer residual.
pub fn delta_t_sigma_ps(params: &SystemParams) -> f64 {
    let js = params.detector_space.jitter_sigma_ps();
    let jg = params.detector_ground.jitter_sigma_ps();
    let qs = params.detector_space.timestamp_resolution_ps;
    let qg = params.detector_ground.timestamp_resolution_ps;
    let sync = params.protocol.sync_residual_ps;
    (js * js + jg * jg + (qs * qs + qg * qg) / 12.0 + sync * sync).sqrt()
}

/// Probability that a true pair's time difference falls inside ±τ/2.
pub fn window_capture(params: &SystemParams) -> f64 {
    let sigma = delta_t_sigma_ps(params);
    if sigma <= 0.0 {
        return 1.0;
    }
    let half_window_ps = params.protocol.tau_c_ns * 1e3 / 2.0;
    libm::erf(half_window_ps / (std::f64::consts::SQRT_2 * sigma))
}

/// True, accidental and noise coincidence rates, cps.
pub fn coincidences(params: &SystemParams, loss_db: f64) -> (f64, f64, f64) {
    let space = singles_breakdown(params, loss_db, Side::Space);
    let ground = singles_breakdown(params, loss_db, Side::Ground);
    let transmittance = 10f64.powf(-loss_db / 10.0);
    let tau_s = params.protocol.tau_c_ns * 1e-9;

    let true_cps = params.source.pair_rate
        * params.detector_space.efficiency
        * params.detector_ground.efficiency
        * transmittance
        * space.deadtime_survival
        * ground.deadtime_survival
        * window_capture(params);
    let acc_cps = pairwise_accidental_rate(space.photon_cps, ground.photon_cps, tau_s);
    let noise_cps =
        (pairwise_accidental_rate(space.total_cps, ground.total_cps, tau_s) - acc_cps).max(0.0);
    (true_cps, acc_cps, noise_cps)
}

/// QBER from the coincidence composition. Accidental and noise pairings are
/// uncorrelated in polarization and err half the time.
pub fn qber(
    params: &SystemParams,
    true_cps: f64,
    acc_cps: f64,
    noise_cps: f64,
) -> Result<f64, RateError> {
    let total = true_cps + acc_cps + noise_cps;
    if total <= 0.0 {
        return Err(RateError::NoCoincidences);
    }
    let q_src = (1.0 - params.source.visibility) / 2.0;
    Ok((q_src * true_cps + 0.5 * (acc_cps + noise_cps)) / total)
}

/// Asymptotic secret key rate after error correction and privacy
/// amplification, cps.
pub fn asymptotic_key_rate(sifted_cps: f64, qber: f64, ec_efficiency: f64) -> f64 {
    let h = binary_entropy(qber);
    sifted_cps * (1.0 - ec_efficiency * h - h).max(0.0)
}

/// Compose the full analytic bundle at one channel loss.
///
/// A completely dead operating point (no coincidences of any kind) yields a
/// zero bundle with QBER 0 rather than an error, so pass integration over
/// degenerate configurations stays total.
pub fn rate_point(params: &SystemParams, loss_db: f64) -> Result<RatePoint, RateError> {
    let space = singles_breakdown(params, loss_db, Side::Space);
    let ground = singles_breakdown(params, loss_db, Side::Ground);
    let (true_cps, acc_cps, noise_cps) = coincidences(params, loss_db);
    let q = qber(params, true_cps, acc_cps, noise_cps).unwrap_or(0.0);
    let sifted = params.protocol.basis_factor * (true_cps + acc_cps + noise_cps);
    Ok(RatePoint {
        singles_space_cps: space.total_cps,
        singles_ground_cps: ground.total_cps,
        coinc_true_cps: true_cps,
        coinc_acc_cps: acc_cps,
        coinc_noise_cps: noise_cps,
        qber: q,
        sifted_rate_cps: sifted,
        asym_key_rate_cps: asymptotic_key_rate(sifted, q, params.protocol.ec_efficiency),
        mean_pairs_per_window: params.source.pair_rate * params.protocol.tau_c_ns * 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::channel_loss;
    use crate::orbit::slant_range_km;
    use crate::orbit::PassSample;
    use approx::assert_relative_eq;

    /// Ideal detectors: no dark counts, no dead time, no after-pulsing, no
    /// timing spread.
    fn ideal_params() -> SystemParams {
        let mut p = SystemParams::default();
        for d in [&mut p.detector_space, &mut p.detector_ground] {
            d.dark_cps = 0.0;
            d.dead_time_ns = 0.0;
            d.afterpulse_prob = 0.0;
            d.jitter_ps = 0.0;
            d.timestamp_resolution_ps = 0.0;
        }
        p.link.background_cps = 0.0;
        p.protocol.sync_residual_ps = 0.0;
        p
    }

    #[test]
    fn space_singles_at_25_percent_ratio() {
        let mut p = ideal_params();
        p.source.pair_rate = 70e6;
        let total = singles(&p, 0.0, Side::Space);
        assert_relative_eq!(total, 17.5e6, epsilon = 1.0);
        // 4.375 M per detector under uniform splitting
        assert_relative_eq!(total / 4.0, 4.375e6, epsilon = 1.0);
    }

    #[test]
    fn source_off_leaves_dark_counts() {
        let mut p = ideal_params();
        p.source.pair_rate = 0.0;
        p.detector_space.dark_cps = 500.0;
        assert_relative_eq!(singles(&p, 0.0, Side::Space), 2000.0, epsilon = 1e-9);
        p.detector_space.afterpulse_prob = 0.05;
        assert_relative_eq!(singles(&p, 0.0, Side::Space), 2100.0, epsilon = 1e-9);
    }

    #[test]
    fn dead_time_throughput_hand_check() {
        // per-detector raw 1e7 cps with 50 ns dead time -> 1e7/1.5 measured
        let mut p = ideal_params();
        p.detector_space.dead_time_ns = 50.0;
        p.detector_space.efficiency = 0.25;
        p.source.pair_rate = 1.6e8; // 4e7 singles -> 1e7 per detector
        let total = singles(&p, 0.0, Side::Space);
        assert_relative_eq!(total, 4.0 * 6.666_666_7e6, epsilon = 100.0);
    }

    #[test]
    fn space_singles_cap() {
        let mut p = ideal_params();
        p.source.pair_rate = 70e6;
        p.protocol.space_singles_cap_cps = 8e6;
        assert_relative_eq!(singles(&p, 0.0, Side::Space), 8e6, epsilon = 1e-6);
    }

    #[test]
    fn accidental_product_rule() {
        assert_relative_eq!(
            pairwise_accidental_rate(1e6, 1e5, 1e-9),
            100.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn window_limit_zero_tau() {
        // with no timing spread the capture is total for any window, so
        // shrinking the window only kills accidentals
        let mut p = ideal_params();
        p.source.pair_rate = 1e6;
        let (t1, a1, _) = coincidences(&p, 0.0);
        p.protocol.tau_c_ns = 1e-6;
        let (t2, a2, _) = coincidences(&p, 0.0);
        assert_relative_eq!(t1, t2, epsilon = 1e-9);
        assert!(a2 < a1 * 1e-3);
    }

    #[test]
    fn mean_pairs_per_window_is_brightness_times_window() {
        let mut p = ideal_params();
        p.source.pair_rate = 70e6;
        let rp = rate_point(&p, 0.0).unwrap();
        assert_relative_eq!(rp.mean_pairs_per_window, 0.07, epsilon = 1e-12);
    }

    #[test]
    fn qber_examples() {
        let p = ideal_params(); // V = 0.98
        assert_relative_eq!(qber(&p, 1000.0, 0.0, 0.0).unwrap(), 0.01, epsilon = 1e-12);
        let mut perfect = ideal_params();
        perfect.source.visibility = 1.0;
        let q = qber(&perfect, 900.0, 100.0, 0.0).unwrap();
        assert_relative_eq!(q, 0.5 * 100.0 / 1000.0, epsilon = 1e-12);
        assert!(matches!(
            qber(&p, 0.0, 0.0, 0.0),
            Err(RateError::NoCoincidences)
        ));
    }

    #[test]
    fn key_rate_limits() {
        assert_relative_eq!(asymptotic_key_rate(100.0, 0.0, 1.1), 100.0, epsilon = 1e-12);
        assert_relative_eq!(asymptotic_key_rate(100.0, 0.5, 1.1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn key_rate_zero_crossing_with_f_one() {
        // oracle: bisection on 1 - 2 h(q) = 0
        let f = |q: f64| 1.0 - 2.0 * binary_entropy(q);
        let (mut lo, mut hi) = (0.01, 0.4);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let threshold = 0.5 * (lo + hi);
        assert!((threshold - 0.110).abs() < 1.5e-3, "{threshold}");
        assert!(asymptotic_key_rate(100.0, threshold + 0.002, 1.0) == 0.0);
        assert!(asymptotic_key_rate(100.0, threshold - 0.002, 1.0) > 0.0);
    }

    #[test]
    fn loss_to_infinity_is_noise_dominated() {
        let p = SystemParams::default();
        let rp = rate_point(&p, 200.0).unwrap();
        assert!(rp.asym_key_rate_cps == 0.0);
        assert!((rp.qber - 0.5).abs() < 1e-3);
    }

    #[test]
    fn linear_true_quadratic_accidentals() {
        let mut p = ideal_params();
        p.source.pair_rate = 1e6;
        let (t1, a1, _) = coincidences(&p, 10.0);
        p.source.pair_rate = 2e6;
        let (t2, a2, _) = coincidences(&p, 10.0);
        assert_relative_eq!(t2 / t1, 2.0, epsilon = 1e-9);
        assert_relative_eq!(a2 / a1, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn qber_monotone_in_loss_and_ground_dark() {
        let p = SystemParams::default();
        let mut last = 0.0;
        for loss in [20.0, 25.0, 30.0, 35.0, 40.0, 50.0, 60.0] {
            let rp = rate_point(&p, loss).unwrap();
            assert!(rp.qber >= last - 1e-12, "loss {loss}");
            last = rp.qber;
        }
        let mut last = 0.0;
        for dark in [0.0, 100.0, 500.0, 5e3, 5e4, 5e5] {
            let mut p2 = p.clone();
            p2.detector_ground.dark_cps = dark;
            let rp = rate_point(&p2, 30.0).unwrap();
            assert!(rp.qber >= last - 1e-12, "dark {dark}");
            last = rp.qber;
        }
    }

    #[test]
    fn key_rate_non_increasing_in_qber() {
        let mut last = f64::INFINITY;
        for q in [0.0, 0.01, 0.03, 0.05, 0.08, 0.1, 0.12, 0.2, 0.5] {
            let r = asymptotic_key_rate(1000.0, q, 1.1);
            assert!(r <= last + 1e-12);
            last = r;
        }
    }

    #[test]
    fn zenith_qber_near_budget_total() {
        // canonical parameters, zenith loss: total QBER ~3.5% with a 1%
        // source term
        let p = SystemParams::default();
        let zenith = PassSample {
            t_s: 0.0,
            elevation_deg: 90.0,
            slant_range_km: slant_range_km(90.0, p.orbit.altitude_km, p.orbit.earth_radius_km),
        };
        let loss = channel_loss(&zenith, &p.link, p.source.wavelength_signal_nm);
        let rp = rate_point(&p, loss.total_loss_db).unwrap();
        assert!(
            rp.qber > 0.025 && rp.qber < 0.045,
            "zenith QBER {}",
            rp.qber
        );
        assert_relative_eq!((1.0 - p.source.visibility) / 2.0, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn dark_count_asymmetry_at_fixed_loss() {
        // space dark counts barely matter; ground dark counts are fatal
        let p = SystemParams::default();
        let loss = 30.0;
        let base = rate_point(&p, loss).unwrap().asym_key_rate_cps;
        let mut space_heavy = p.clone();
        space_heavy.detector_space.dark_cps = 1_000.0;
        let low_space = rate_point(&space_heavy, loss).unwrap().asym_key_rate_cps;
        assert!((low_space - base).abs() / base < 0.1);
        let mut ground_heavy = p.clone();
        ground_heavy.detector_ground.dark_cps = 50_000.0;
        let bad = rate_point(&ground_heavy, loss).unwrap().asym_key_rate_cps;
        assert!(bad < 0.2 * base, "ground-dark key {bad} vs {base}");
    }
}
