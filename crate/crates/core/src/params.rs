//! System parameter set and flat-file config I/O.
//!
//! Parameters mirror the standard input table for space-to-ground key rate
//! calculations: entangled-photon source, the two detection setups, the
//! optical link, protocol constants and the orbit. Configs are flat
//! `key = value` files with dotted keys (`source.pair_rate = 25e6`), one per
//! line, `#` comments. Unspecified keys keep their defaults.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Entangled photon pair source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Pair production rate (brightness), pairs/s.
    pub pair_rate: f64,
    /// Polarization-correlation visibility, 0..1.
    pub visibility: f64,
    /// Signal (downlink) wavelength, nm.
    pub wavelength_signal_nm: f64,
    /// Idler (local detection) wavelength, nm.
    pub wavelength_idler_nm: f64,
    /// SPDC emission bandwidth, nm.
    pub bandwidth_nm: f64,
}

/// How the `jitter_ps` figure is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterMode {
    /// Full width at half maximum of the timing response.
    Fwhm,
    /// Gaussian standard deviation.
    Sigma,
}

impl fmt::Display for JitterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JitterMode::Fwhm => write!(f, "fwhm"),
            JitterMode::Sigma => write!(f, "sigma"),
        }
    }
}

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 sqrt(2 ln 2)

/// One 4-channel polarization detection setup (space or ground side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Total detection efficiency (pair-to-singles ratio contribution), 0..1.
    pub efficiency: f64,
    /// Dark counts per detector, cps.
    pub dark_cps: f64,
    /// Non-paralyzable dead time per detector, ns.
    pub dead_time_ns: f64,
    /// Detector timing jitter, ps (see `jitter_mode`).
    pub jitter_ps: f64,
    /// FWHM or sigma interpretation of `jitter_ps`.
    pub jitter_mode: JitterMode,
    /// After-pulsing probability, 0..1.
    pub afterpulse_prob: f64,
    /// Time-tagging granularity, ps. 0 disables quantization.
    pub timestamp_resolution_ps: f64,
}

impl DetectorParams {
    /// Gaussian sigma of the timing jitter in ps.
    pub fn jitter_sigma_ps(&self) -> f64 {
        match self.jitter_mode {
            JitterMode::Fwhm => self.jitter_ps / FWHM_TO_SIGMA,
            JitterMode::Sigma => self.jitter_ps,
        }
    }

    /// Dead time in seconds.
    pub fn dead_time_s(&self) -> f64 {
        self.dead_time_ns * 1e-9
    }
}

/// Free-space optical downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Transmitter aperture diameter, m.
    pub tx_aperture_m: f64,
    /// Receiver aperture diameter, m.
    pub rx_aperture_m: f64,
    /// Beam quality factor M^2 (multiplies the diffraction divergence), >= 1.
    pub beam_quality_m2: f64,
    /// Atmospheric attenuation at zenith, dB; scaled by airmass off zenith.
    pub zenith_atm_loss_db: f64,
    /// Pointing jitter, microradians (Gaussian std per axis).
    pub pointing_jitter_urad: f64,
    /// Receiver optics transmission, 0..1.
    pub optics_efficiency: f64,
    /// Sky/stray background at the ground receiver, cps (all channels).
    pub background_cps: f64,
}

/// Protocol constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Error-correction inefficiency f >= 1.
    pub ec_efficiency: f64,
    /// Basis reconciliation factor (0.5 for unbiased splitting).
    pub basis_factor: f64,
    /// Coincidence time window, ns.
    pub tau_c_ns: f64,
    /// Correctness failure probability.
    pub eps_cor: f64,
    /// Secrecy failure probability.
    pub eps_sec: f64,
    /// Budgeted RMS residual of space-ground time transfer, ps.
    /// Widens the coincidence-window capture term in the analytic model only;
    /// the Monte Carlo path earns its own residual through `sync`.
    pub sync_residual_ps: f64,
    /// Optional hard cap on measured space singles (time-tagger throughput
    /// limit), cps. 0 disables the cap.
    pub space_singles_cap_cps: f64,
}

/// Circular-orbit pass description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitParams {
    /// Orbit altitude, km.
    pub altitude_km: f64,
    /// Maximum elevation reached during the pass, deg.
    pub max_elevation_deg: f64,
    /// Earth radius, km.
    pub earth_radius_km: f64,
    /// Sample spacing along the pass, s.
    pub sample_dt_s: f64,
    /// Elevation cutoff below which the pass is not used, deg.
    pub min_elevation_deg: f64,
}

/// Complete system parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub source: SourceParams,
    pub detector_space: DetectorParams,
    pub detector_ground: DetectorParams,
    pub link: LinkParams,
    pub protocol: ProtocolParams,
    pub orbit: OrbitParams,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            pair_rate: 25e6,
            visibility: 0.98,
            wavelength_signal_nm: 780.0,
            wavelength_idler_nm: 842.0,
            bandwidth_nm: 10.0,
        }
    }
}

impl DetectorParams {
    fn default_space() -> Self {
        Self {
            efficiency: 0.25,
            dark_cps: 100_000.0,
            dead_time_ns: 50.0,
            jitter_ps: 320.0,
            jitter_mode: JitterMode::Fwhm,
            afterpulse_prob: 0.01,
            timestamp_resolution_ps: 500.0,
        }
    }

    fn default_ground() -> Self {
        Self {
            dark_cps: 500.0,
            ..Self::default_space()
        }
    }
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            tx_aperture_m: 0.09,
            rx_aperture_m: 0.6,
            beam_quality_m2: 1.6,
            zenith_atm_loss_db: 3.0,
            pointing_jitter_urad: 5.0,
            optics_efficiency: 0.5,
            background_cps: 1300.0,
        }
    }
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            ec_efficiency: 1.1,
            basis_factor: 0.5,
            tau_c_ns: 1.0,
            eps_cor: 1e-10,
            eps_sec: 1e-10,
            sync_residual_ps: 300.0,
            space_singles_cap_cps: 0.0,
        }
    }
}

impl Default for OrbitParams {
    fn default() -> Self {
        Self {
            altitude_km: 500.0,
            max_elevation_deg: 90.0,
            earth_radius_km: 6371.0,
            sample_dt_s: 1.0,
            min_elevation_deg: 10.0,
        }
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            source: SourceParams::default(),
            detector_space: DetectorParams::default_space(),
            detector_ground: DetectorParams::default_ground(),
            link: LinkParams::default(),
            protocol: ProtocolParams::default(),
            orbit: OrbitParams::default(),
        }
    }
}

/// Errors from config parsing and validation.
#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("{key} = {value} ∉ {bound}")]
    OutOfRange {
        key: String,
        value: f64,
        bound: String,
    },
}

fn check(ok: bool, key: &str, value: f64, bound: &str) -> Result<(), ParamsError> {
    if ok {
        Ok(())
    } else {
        Err(ParamsError::OutOfRange {
            key: key.to_string(),
            value,
            bound: bound.to_string(),
        })
    }
}

fn check_fraction(key: &str, value: f64) -> Result<(), ParamsError> {
    check((0.0..=1.0).contains(&value), key, value, "[0,1]")
}

fn check_nonneg(key: &str, value: f64) -> Result<(), ParamsError> {
    check(value >= 0.0 && value.is_finite(), key, value, "[0,∞)")
}

fn check_pos(key: &str, value: f64) -> Result<(), ParamsError> {
    check(value > 0.0 && value.is_finite(), key, value, "(0,∞)")
}

impl SystemParams {
    /// Validate every bound; the offending key is named in the error.
    pub fn validate(&self) -> Result<(), ParamsError> {
        let s = &self.source;
        check_nonneg("source.pair_rate", s.pair_rate)?;
        check_fraction("source.visibility", s.visibility)?;
        check_pos("source.wavelength_signal_nm", s.wavelength_signal_nm)?;
        check_pos("source.wavelength_idler_nm", s.wavelength_idler_nm)?;
        check_pos("source.bandwidth_nm", s.bandwidth_nm)?;

        for (prefix, d) in [
            ("detector_space", &self.detector_space),
            ("detector_ground", &self.detector_ground),
        ] {
            check_fraction(&format!("{prefix}.efficiency"), d.efficiency)?;
            check_nonneg(&format!("{prefix}.dark_cps"), d.dark_cps)?;
            check_nonneg(&format!("{prefix}.dead_time_ns"), d.dead_time_ns)?;
            check_nonneg(&format!("{prefix}.jitter_ps"), d.jitter_ps)?;
            check_fraction(&format!("{prefix}.afterpulse_prob"), d.afterpulse_prob)?;
            check_nonneg(
                &format!("{prefix}.timestamp_resolution_ps"),
                d.timestamp_resolution_ps,
            )?;
        }

        let l = &self.link;
        check_pos("link.tx_aperture_m", l.tx_aperture_m)?;
        check_pos("link.rx_aperture_m", l.rx_aperture_m)?;
        check(
            l.beam_quality_m2 >= 1.0,
            "link.beam_quality_m2",
            l.beam_quality_m2,
            "[1,∞)",
        )?;
        check_nonneg("link.zenith_atm_loss_db", l.zenith_atm_loss_db)?;
        check_nonneg("link.pointing_jitter_urad", l.pointing_jitter_urad)?;
        check_fraction("link.optics_efficiency", l.optics_efficiency)?;
        check_nonneg("link.background_cps", l.background_cps)?;

        let p = &self.protocol;
        check(
            p.ec_efficiency >= 1.0,
            "protocol.ec_efficiency",
            p.ec_efficiency,
            "[1,∞)",
        )?;
        check_fraction("protocol.basis_factor", p.basis_factor)?;
        check_pos("protocol.tau_c_ns", p.tau_c_ns)?;
        check(
            p.eps_cor > 0.0 && p.eps_cor < 1.0,
            "protocol.eps_cor",
            p.eps_cor,
            "(0,1)",
        )?;
        check(
            p.eps_sec > 0.0 && p.eps_sec < 1.0,
            "protocol.eps_sec",
            p.eps_sec,
            "(0,1)",
        )?;
        check_nonneg("protocol.sync_residual_ps", p.sync_residual_ps)?;
        check_nonneg("protocol.space_singles_cap_cps", p.space_singles_cap_cps)?;

        let o = &self.orbit;
        check_pos("orbit.altitude_km", o.altitude_km)?;
        check_pos("orbit.earth_radius_km", o.earth_radius_km)?;
        check_pos("orbit.sample_dt_s", o.sample_dt_s)?;
        check(
            (0.0..=90.0).contains(&o.min_elevation_deg),
            "orbit.min_elevation_deg",
            o.min_elevation_deg,
            "[0,90]",
        )?;
        check(
            (0.0..=90.0).contains(&o.max_elevation_deg),
            "orbit.max_elevation_deg",
            o.max_elevation_deg,
            "[0,90]",
        )?;
        Ok(())
    }

    /// All sweepable numeric parameter paths.
    pub fn numeric_paths() -> &'static [&'static str] {
        NUMERIC_PATHS
    }

    /// Read a numeric parameter by dotted path.
    pub fn get(&self, path: &str) -> Result<f64, ParamsError> {
        numeric_field(&mut self.clone(), path).map(|f| *f)
    }

    /// Set a numeric parameter by dotted path. Does not re-validate.
    pub fn set(&mut self, path: &str, value: f64) -> Result<(), ParamsError> {
        *numeric_field(self, path)? = value;
        Ok(())
    }
}

const NUMERIC_PATHS: &[&str] = &[
    "source.pair_rate",
    "source.visibility",
    "source.wavelength_signal_nm",
    "source.wavelength_idler_nm",
    "source.bandwidth_nm",
    "detector_space.efficiency",
    "detector_space.dark_cps",
    "detector_space.dead_time_ns",
    "detector_space.jitter_ps",
    "detector_space.afterpulse_prob",
    "detector_space.timestamp_resolution_ps",
    "detector_ground.efficiency",
    "detector_ground.dark_cps",
    "detector_ground.dead_time_ns",
    "detector_ground.jitter_ps",
    "detector_ground.afterpulse_prob",
    "detector_ground.timestamp_resolution_ps",
    "link.tx_aperture_m",
    "link.rx_aperture_m",
    "link.beam_quality_m2",
    "link.zenith_atm_loss_db",
    "link.pointing_jitter_urad",
    "link.optics_efficiency",
    "link.background_cps",
    "protocol.ec_efficiency",
    "protocol.basis_factor",
    "protocol.tau_c_ns",
    "protocol.eps_cor",
    "protocol.eps_sec",
    "protocol.sync_residual_ps",
    "protocol.space_singles_cap_cps",
    "orbit.altitude_km",
    "orbit.max_elevation_deg",
    "orbit.earth_radius_km",
    "orbit.sample_dt_s",
    "orbit.min_elevation_deg",
];

fn numeric_field<'a>(p: &'a mut SystemParams, path: &str) -> Result<&'a mut f64, ParamsError> {
    let field: Option<&mut f64> = match path {
        "source.pair_rate" => Some(&mut p.source.pair_rate),
        "source.visibility" => Some(&mut p.source.visibility),
        "source.wavelength_signal_nm" => Some(&mut p.source.wavelength_signal_nm),
        "source.wavelength_idler_nm" => Some(&mut p.source.wavelength_idler_nm),
        "source.bandwidth_nm" => Some(&mut p.source.bandwidth_nm),
        "detector_space.efficiency" => Some(&mut p.detector_space.efficiency),
        "detector_space.dark_cps" => Some(&mut p.detector_space.dark_cps),
        "detector_space.dead_time_ns" => Some(&mut p.detector_space.dead_time_ns),
        "detector_space.jitter_ps" => Some(&mut p.detector_space.jitter_ps),
        "detector_space.afterpulse_prob" => Some(&mut p.detector_space.afterpulse_prob),
        "detector_space.timestamp_resolution_ps" => {
            Some(&mut p.detector_space.timestamp_resolution_ps)
        }
        "detector_ground.efficiency" => Some(&mut p.detector_ground.efficiency),
        "detector_ground.dark_cps" => Some(&mut p.detector_ground.dark_cps),
        "detector_ground.dead_time_ns" => Some(&mut p.detector_ground.dead_time_ns),
        "detector_ground.jitter_ps" => Some(&mut p.detector_ground.jitter_ps),
        "detector_ground.afterpulse_prob" => Some(&mut p.detector_ground.afterpulse_prob),
        "detector_ground.timestamp_resolution_ps" => {
            Some(&mut p.detector_ground.timestamp_resolution_ps)
        }
        "link.tx_aperture_m" => Some(&mut p.link.tx_aperture_m),
        "link.rx_aperture_m" => Some(&mut p.link.rx_aperture_m),
        "link.beam_quality_m2" => Some(&mut p.link.beam_quality_m2),
        "link.zenith_atm_loss_db" => Some(&mut p.link.zenith_atm_loss_db),
        "link.pointing_jitter_urad" => Some(&mut p.link.pointing_jitter_urad),
        "link.optics_efficiency" => Some(&mut p.link.optics_efficiency),
        "link.background_cps" => Some(&mut p.link.background_cps),
        "protocol.ec_efficiency" => Some(&mut p.protocol.ec_efficiency),
        "protocol.basis_factor" => Some(&mut p.protocol.basis_factor),
        "protocol.tau_c_ns" => Some(&mut p.protocol.tau_c_ns),
        "protocol.eps_cor" => Some(&mut p.protocol.eps_cor),
        "protocol.eps_sec" => Some(&mut p.protocol.eps_sec),
        "protocol.sync_residual_ps" => Some(&mut p.protocol.sync_residual_ps),
        "protocol.space_singles_cap_cps" => Some(&mut p.protocol.space_singles_cap_cps),
        "orbit.altitude_km" => Some(&mut p.orbit.altitude_km),
        "orbit.max_elevation_deg" => Some(&mut p.orbit.max_elevation_deg),
        "orbit.earth_radius_km" => Some(&mut p.orbit.earth_radius_km),
        "orbit.sample_dt_s" => Some(&mut p.orbit.sample_dt_s),
        "orbit.min_elevation_deg" => Some(&mut p.orbit.min_elevation_deg),
        _ => None,
    };
    field.ok_or_else(|| ParamsError::UnknownKey(path.to_string()))
}

/// One `key = value` assignment from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parse a flat config document into raw entries. No key interpretation.
pub fn parse_config(text: &str) -> Result<Vec<ConfigEntry>, ParamsError> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| ParamsError::Parse {
            line,
            msg: format!("expected 'key = value', got '{stripped}'"),
        })?;
        entries.push(ConfigEntry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(entries)
}

fn parse_f64(e: &ConfigEntry) -> Result<f64, ParamsError> {
    e.value.parse::<f64>().map_err(|_| ParamsError::Parse {
        line: e.line,
        msg: format!("'{}' is not a number for key '{}'", e.value, e.key),
    })
}

/// Apply one entry to `params`. Returns false if the key belongs to a
/// scenario section (`sim.`, `clock.`, `beacon.`) and was left alone.
pub fn apply_entry(params: &mut SystemParams, e: &ConfigEntry) -> Result<bool, ParamsError> {
    if ["sim.", "clock.", "beacon."]
        .iter()
        .any(|p| e.key.starts_with(p))
    {
        return Ok(false);
    }
    match e.key.as_str() {
        "detector_space.jitter_mode" => {
            params.detector_space.jitter_mode = parse_jitter_mode(e)?;
        }
        "detector_ground.jitter_mode" => {
            params.detector_ground.jitter_mode = parse_jitter_mode(e)?;
        }
        _ => {
            let value = parse_f64(e)?;
            *numeric_field(params, &e.key)? = value;
        }
    }
    Ok(true)
}

fn parse_jitter_mode(e: &ConfigEntry) -> Result<JitterMode, ParamsError> {
    match e.value.as_str() {
        "fwhm" => Ok(JitterMode::Fwhm),
        "sigma" => Ok(JitterMode::Sigma),
        other => Err(ParamsError::Parse {
            line: e.line,
            msg: format!("jitter_mode must be 'fwhm' or 'sigma', got '{other}'"),
        }),
    }
}

/// Parse params from config text, starting from defaults.
pub fn params_from_str(text: &str) -> Result<SystemParams, ParamsError> {
    let mut params = SystemParams::default();
    for e in parse_config(text)? {
        apply_entry(&mut params, &e)?;
    }
    params.validate()?;
    Ok(params)
}

/// Load a validated parameter set from a config file.
///
/// Scenario-section keys (`sim.`, `clock.`, `beacon.`) are tolerated and
/// ignored so that scenario files can be fed to analytic commands directly.
pub fn load_params(path: impl AsRef<Path>) -> Result<SystemParams, ParamsError> {
    let text = std::fs::read_to_string(path)?;
    params_from_str(&text)
}

/// Render the full parameter set as a config document.
pub fn params_to_string(p: &SystemParams) -> String {
    let mut clone = p.clone();
    let mut out = String::new();
    for key in NUMERIC_PATHS {
        // jitter_mode is interleaved right after each jitter value
        let value = *numeric_field(&mut clone, key).expect("path list is exhaustive");
        out.push_str(&format!("{key} = {value}\n"));
        if let Some(prefix) = key.strip_suffix(".jitter_ps") {
            let mode = if prefix == "detector_space" {
                p.detector_space.jitter_mode
            } else {
                p.detector_ground.jitter_mode
            };
            out.push_str(&format!("{prefix}.jitter_mode = {mode}\n"));
        }
    }
    out
}

/// Write the parameter set to a config file.
pub fn save_params(p: &SystemParams, path: impl AsRef<Path>) -> Result<(), ParamsError> {
    std::fs::write(path, params_to_string(p))?;
    Ok(())
}
