//! In-orbit telemetry analysis: polarization-correlation fits with CHSH
//! estimation, and detector dark-count fits versus temperature with
//! day-over-day degradation.
//!
//! The correlation model is C(θ) = A·cos²(θ−φ) + c per analyzer setting.
//! Written as a0 + a1·cos2θ + a2·sin2θ it is linear, so the fit is ordinary
//! least squares with an exact covariance. Fringe visibility per setting is
//! V = sqrt(a1²+a2²)/a0 and the CHSH statistic for measurements at the
//! optimal angles is S = 2√2 · (V_HV + V_DA)/2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Idler-arm analyzer setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IdlerSetting {
    H,
    V,
    D,
    A,
}

impl IdlerSetting {
    pub const ALL: [IdlerSetting; 4] = [
        IdlerSetting::H,
        IdlerSetting::V,
        IdlerSetting::D,
        IdlerSetting::A,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "H" | "h" => Some(IdlerSetting::H),
            "V" | "v" => Some(IdlerSetting::V),
            "D" | "d" => Some(IdlerSetting::D),
            "A" | "a" => Some(IdlerSetting::A),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            IdlerSetting::H => "H",
            IdlerSetting::V => "V",
            IdlerSetting::D => "D",
            IdlerSetting::A => "A",
        }
    }

    fn index(&self) -> usize {
        match self {
            IdlerSetting::H => 0,
            IdlerSetting::V => 1,
            IdlerSetting::D => 2,
            IdlerSetting::A => 3,
        }
    }
}

/// One scan point of a correlation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub setting: IdlerSetting,
    pub angle_deg: f64,
    pub coincidences: f64,
    /// Estimated accidentals at this point, subtracted before fitting.
    pub accidentals: f64,
}

/// Fitted cosine-squared curve for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettingFit {
    pub amplitude: f64,
    pub phase_deg: f64,
    pub offset: f64,
    pub visibility: f64,
    pub visibility_err: f64,
}

/// Correlation-scan analysis result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChshFit {
    pub settings: Vec<(String, SettingFit)>,
    pub visibility_hv: f64,
    pub visibility_da: f64,
    pub s_value: f64,
    pub s_err: f64,
    /// Points whose net counts went negative after accidental subtraction
    /// and were clamped to zero.
    pub clamped_points: usize,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("setting {0} has {1} points; at least 8 angle samples required")]
    InsufficientAngles(&'static str, usize),
    #[error("fit is singular for setting {0}")]
    SingularFit(&'static str),
    #[error("need at least {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("non-positive count {value} at sample {index}")]
    NonPositiveCounts { index: usize, value: f64 },
    #[error("temperature span {0:.2} °C is below the required {1} °C")]
    InsufficientSpan(f64, f64),
    #[error("csv error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

struct LinearFit3 {
    coeffs: [f64; 3],
    cov: [[f64; 3]; 3],
}

/// Unweighted least squares of y against [1, cos2θ, sin2θ].
fn fit_cosine2(angles_rad: &[f64], y: &[f64]) -> Option<LinearFit3> {
    let n = angles_rad.len();
    let mut xtx = [[0.0f64; 3]; 3];
    let mut xty = [0.0f64; 3];
    for (&th, &yi) in angles_rad.iter().zip(y) {
        let basis = [1.0, (2.0 * th).cos(), (2.0 * th).sin()];
        for i in 0..3 {
            for j in 0..3 {
                xtx[i][j] += basis[i] * basis[j];
            }
            xty[i] += basis[i] * yi;
        }
    }
    let inv = invert3(&xtx)?;
    let mut coeffs = [0.0f64; 3];
    for i in 0..3 {
        for j in 0..3 {
            coeffs[i] += inv[i][j] * xty[j];
        }
    }
    // residual variance
    let mut ssr = 0.0;
    for (&th, &yi) in angles_rad.iter().zip(y) {
        let basis = [1.0, (2.0 * th).cos(), (2.0 * th).sin()];
        let fit: f64 = (0..3).map(|i| coeffs[i] * basis[i]).sum();
        ssr += (yi - fit) * (yi - fit);
    }
    let dof = (n as f64 - 3.0).max(1.0);
    let sigma2 = ssr / dof;
    let mut cov = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = sigma2 * inv[i][j];
        }
    }
    Some(LinearFit3 { coeffs, cov })
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0f64; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(inv)
}

const TWO_SQRT_2: f64 = 2.828_427_124_746_190_3;

/// Fit all four correlation curves and estimate the CHSH statistic.
pub fn fit_correlation_curves(data: &[CorrelationPoint]) -> Result<ChshFit, FitError> {
    let mut clamped_points = 0usize;
    let mut per_setting: [Vec<(f64, f64)>; 4] = Default::default();
    for p in data {
        let mut net = p.coincidences - p.accidentals;
        if net < 0.0 {
            net = 0.0;
            clamped_points += 1;
        }
        per_setting[p.setting.index()].push((p.angle_deg.to_radians(), net));
    }

    let mut fits: Vec<(String, SettingFit)> = Vec::with_capacity(4);
    let mut visibilities = [0.0f64; 4];
    let mut variances = [0.0f64; 4];
    for setting in IdlerSetting::ALL {
        let points = &per_setting[setting.index()];
        if points.len() < 8 {
            return Err(FitError::InsufficientAngles(setting.label(), points.len()));
        }
        let angles: Vec<f64> = points.iter().map(|p| p.0).collect();
        let counts: Vec<f64> = points.iter().map(|p| p.1).collect();
        let lf = fit_cosine2(&angles, &counts).ok_or(FitError::SingularFit(setting.label()))?;
        let [a0, a1, a2] = lf.coeffs;
        if a0 <= 0.0 {
            return Err(FitError::SingularFit(setting.label()));
        }
        let rho = (a1 * a1 + a2 * a2).sqrt();
        let amplitude = 2.0 * rho;
        let offset = a0 - rho;
        let phase_deg = 0.5 * a2.atan2(a1).to_degrees();
        let visibility = (rho / a0).clamp(0.0, 1.0);
        // delta method on V = sqrt(a1^2+a2^2)/a0
        let g = if rho > 0.0 {
            [-rho / (a0 * a0), a1 / (rho * a0), a2 / (rho * a0)]
        } else {
            [0.0, 1.0 / a0, 1.0 / a0]
        };
        let mut var = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                var += g[i] * lf.cov[i][j] * g[j];
            }
        }
        let visibility_err = var.max(0.0).sqrt();
        visibilities[setting.index()] = visibility;
        variances[setting.index()] = var.max(0.0);
        fits.push((
            setting.label().to_string(),
            SettingFit {
                amplitude,
                phase_deg,
                offset,
                visibility,
                visibility_err,
            },
        ));
    }

    let visibility_hv = 0.5 * (visibilities[0] + visibilities[1]);
    let visibility_da = 0.5 * (visibilities[2] + visibilities[3]);
    let var_hv = 0.25 * (variances[0] + variances[1]);
    let var_da = 0.25 * (variances[2] + variances[3]);
    let s_value = (TWO_SQRT_2 * 0.5 * (visibility_hv + visibility_da)).clamp(0.0, TWO_SQRT_2);
    let s_err = TWO_SQRT_2 * 0.5 * (var_hv + var_da).sqrt();
    Ok(ChshFit {
        settings: fits,
        visibility_hv,
        visibility_da,
        s_value,
        s_err,
        clamped_points,
    })
}

/// Correlation E = (N_same − N_diff)/(N_same + N_diff) from the four outcome
/// counts of one setting pair.
pub fn correlation_from_counts(n_pp: f64, n_pm: f64, n_mp: f64, n_mm: f64) -> f64 {
    let same = n_pp + n_mm;
    let diff = n_pm + n_mp;
    if same + diff == 0.0 {
        0.0
    } else {
        (same - diff) / (same + diff)
    }
}

/// Direct CHSH combination S = E(a,b) − E(a,b') + E(a',b) + E(a',b').
pub fn chsh_from_correlations(e_ab: f64, e_ab2: f64, e_a2b: f64, e_a2b2: f64) -> f64 {
    e_ab - e_ab2 + e_a2b + e_a2b2
}

/// Exponential dark-count model a·e^{bT}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    pub amp_cps: f64,
    pub slope_per_deg_c: f64,
    pub fit_rms_cps: f64,
}

/// Complete dark-count analysis for one detector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DarkCountFit {
    pub amp_cps: f64,
    pub slope_per_deg_c: f64,
    pub extrapolated_cps_at_10c: f64,
    pub degradation_cps_per_day: Option<f64>,
    pub fit_rms: f64,
}

/// One telemetry sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarkCountSample {
    pub temp_deg_c: f64,
    pub dark_cps: f64,
}

/// Least-squares fit of ln(counts) against temperature.
pub fn fit_darkcounts(samples: &[DarkCountSample]) -> Result<ExpFit, FitError> {
    if samples.len() < 5 {
        return Err(FitError::InsufficientData {
            need: 5,
            got: samples.len(),
        });
    }
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    for (index, s) in samples.iter().enumerate() {
        if s.dark_cps <= 0.0 {
            return Err(FitError::NonPositiveCounts {
                index,
                value: s.dark_cps,
            });
        }
        t_min = t_min.min(s.temp_deg_c);
        t_max = t_max.max(s.temp_deg_c);
    }
    if t_max - t_min < 5.0 {
        return Err(FitError::InsufficientSpan(t_max - t_min, 5.0));
    }
    let n = samples.len() as f64;
    let sx: f64 = samples.iter().map(|s| s.temp_deg_c).sum();
    let sy: f64 = samples.iter().map(|s| s.dark_cps.ln()).sum();
    let sxx: f64 = samples.iter().map(|s| s.temp_deg_c * s.temp_deg_c).sum();
    let sxy: f64 = samples.iter().map(|s| s.temp_deg_c * s.dark_cps.ln()).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let amp = intercept.exp();
    let mut ssr = 0.0;
    for s in samples {
        let fit = amp * (slope * s.temp_deg_c).exp();
        ssr += (fit - s.dark_cps) * (fit - s.dark_cps);
    }
    Ok(ExpFit {
        amp_cps: amp,
        slope_per_deg_c: slope,
        fit_rms_cps: (ssr / n).sqrt(),
    })
}

/// Evaluate the fitted exponential at a temperature.
pub fn extrapolate(fit: &ExpFit, temp_deg_c: f64) -> f64 {
    fit.amp_cps * (fit.slope_per_deg_c * temp_deg_c).exp()
}

/// Linear-regression slope of extrapolated counts over mission days.
pub fn degradation_rate(points: &[(f64, f64)]) -> Result<f64, FitError> {
    if points.len() < 3 {
        return Err(FitError::InsufficientData {
            need: 3,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

fn split_csv_line(line: &str) -> Vec<String> {
    line.split(',').map(|s| s.trim().to_string()).collect()
}

/// Read a correlation scan CSV: `setting,angle_deg,coincidences[,accidentals]`
/// or with `singles_signal,singles_idler,window_ns,int_time_s` columns, from
/// which accidentals follow the product rule.
pub fn read_correlation_csv(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<CorrelationPoint>, FitError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(FitError::Csv {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols = split_csv_line(header);
    let col = |name: &str| cols.iter().position(|c| c == name);
    let c_setting = col("setting").ok_or(FitError::Csv {
        line: 1,
        msg: "missing 'setting' column".into(),
    })?;
    let c_angle = col("angle_deg").ok_or(FitError::Csv {
        line: 1,
        msg: "missing 'angle_deg' column".into(),
    })?;
    let c_coinc = col("coincidences").ok_or(FitError::Csv {
        line: 1,
        msg: "missing 'coincidences' column".into(),
    })?;
    let c_acc = col("accidentals");
    let c_ss = col("singles_signal");
    let c_si = col("singles_idler");
    let c_win = col("window_ns");
    let c_int = col("int_time_s");

    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(raw);
        let get = |c: usize| -> Result<f64, FitError> {
            fields
                .get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or(FitError::Csv {
                    line,
                    msg: format!("bad numeric field {c}"),
                })
        };
        let setting = IdlerSetting::parse(&fields[c_setting]).ok_or(FitError::Csv {
            line,
            msg: format!("unknown setting '{}'", fields[c_setting]),
        })?;
        let accidentals = if let Some(c) = c_acc {
            get(c)?
        } else if let (Some(ss), Some(si), Some(w), Some(it)) = (c_ss, c_si, c_win, c_int) {
            get(ss)? * get(si)? * get(w)? * 1e-9 * get(it)?
        } else {
            0.0
        };
        out.push(CorrelationPoint {
            setting,
            angle_deg: get(c_angle)?,
            coincidences: get(c_coinc)?,
            accidentals,
        });
    }
    Ok(out)
}

/// Read a dark-count CSV: `temp_degC,dark_cps[,day]`. Returns (day, sample).
pub fn read_darkcount_csv(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<(Option<f64>, DarkCountSample)>, FitError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(FitError::Csv {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols = split_csv_line(header);
    let col = |name: &str| cols.iter().position(|c| c == name);
    let c_temp = col("temp_degC").ok_or(FitError::Csv {
        line: 1,
        msg: "missing 'temp_degC' column".into(),
    })?;
    let c_cps = col("dark_cps").ok_or(FitError::Csv {
        line: 1,
        msg: "missing 'dark_cps' column".into(),
    })?;
    let c_day = col("day");
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(raw);
        let get = |c: usize| -> Result<f64, FitError> {
            fields
                .get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or(FitError::Csv {
                    line,
                    msg: format!("bad numeric field {c}"),
                })
        };
        out.push((
            c_day.map(&get).transpose()?,
            DarkCountSample {
                temp_deg_c: get(c_temp)?,
                dark_cps: get(c_cps)?,
            },
        ));
    }
    Ok(out)
}

/// Per-day exponential fits, 10 °C extrapolations and the degradation slope.
pub fn darkcount_analysis(
    rows: &[(Option<f64>, DarkCountSample)],
    extrapolate_at_deg_c: f64,
) -> Result<DarkCountFit, FitError> {
    let all: Vec<DarkCountSample> = rows.iter().map(|r| r.1).collect();
    let pooled = fit_darkcounts(&all)?;
    let mut days: Vec<f64> = rows.iter().filter_map(|r| r.0).collect();
    days.sort_by(f64::total_cmp);
    days.dedup();
    let degradation = if days.len() >= 3 {
        let mut points = Vec::with_capacity(days.len());
        for &day in &days {
            let subset: Vec<DarkCountSample> = rows
                .iter()
                .filter(|r| r.0 == Some(day))
                .map(|r| r.1)
                .collect();
            let fit = fit_darkcounts(&subset)?;
            points.push((day, extrapolate(&fit, extrapolate_at_deg_c)));
        }
        Some(degradation_rate(&points)?)
    } else {
        None
    };
    Ok(DarkCountFit {
        amp_cps: pooled.amp_cps,
        slope_per_deg_c: pooled.slope_per_deg_c,
        extrapolated_cps_at_10c: extrapolate(&pooled, extrapolate_at_deg_c),
        degradation_cps_per_day: degradation,
        fit_rms: pooled.fit_rms_cps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Noiseless curves with fringe visibility `vis` and mean level `amp`/2,
    /// sitting on an accidental floor that the fit must subtract away.
    fn synthetic_curves(vis: f64, amp: f64, floor: f64, n_angles: usize) -> Vec<CorrelationPoint> {
        let phases = [0.0f64, 90.0, 45.0, 135.0];
        let mut out = Vec::new();
        for (setting, phase) in IdlerSetting::ALL.into_iter().zip(phases) {
            for k in 0..n_angles {
                let angle = 180.0 * k as f64 / n_angles as f64;
                let th = (angle - phase).to_radians();
                let net = amp * 0.5 * (1.0 + vis * (2.0 * th).cos());
                out.push(CorrelationPoint {
                    setting,
                    angle_deg: angle,
                    coincidences: net + floor,
                    accidentals: floor,
                });
            }
        }
        out
    }

    #[test]
    fn ideal_state_reaches_tsirelson() {
        let fit = fit_correlation_curves(&synthetic_curves(1.0, 500.0, 0.0, 16)).unwrap();
        assert_relative_eq!(fit.s_value, TWO_SQRT_2, epsilon = 1e-6);
        assert_relative_eq!(fit.visibility_hv, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn flat_curves_give_zero_s() {
        let fit = fit_correlation_curves(&synthetic_curves(0.0, 500.0, 0.0, 16)).unwrap();
        assert!(fit.s_value < 1e-9);
    }

    #[test]
    fn known_visibility_recovered() {
        let v = 0.8945;
        let fit = fit_correlation_curves(&synthetic_curves(v, 300.0, 20.0, 16)).unwrap();
        assert_relative_eq!(fit.visibility_hv, v, epsilon = 1e-9);
        assert_relative_eq!(fit.s_value, TWO_SQRT_2 * v, epsilon = 1e-9);
    }

    #[test]
    fn scale_invariance_and_floor_invariance() {
        let base = synthetic_curves(0.9, 250.0, 15.0, 12);
        let fit0 = fit_correlation_curves(&base).unwrap();
        let scaled: Vec<_> = base
            .iter()
            .map(|p| CorrelationPoint {
                coincidences: p.coincidences * 7.0,
                accidentals: p.accidentals * 7.0,
                ..*p
            })
            .collect();
        let fit1 = fit_correlation_curves(&scaled).unwrap();
        assert_relative_eq!(fit0.s_value, fit1.s_value, epsilon = 1e-9);
        // a constant accidental floor, once subtracted, leaves V unchanged
        let lifted: Vec<_> = base
            .iter()
            .map(|p| CorrelationPoint {
                coincidences: p.coincidences + 40.0,
                accidentals: p.accidentals + 40.0,
                ..*p
            })
            .collect();
        let fit2 = fit_correlation_curves(&lifted).unwrap();
        assert_relative_eq!(fit0.s_value, fit2.s_value, epsilon = 1e-9);
    }

    #[test]
    fn too_few_angles_rejected() {
        let few = synthetic_curves(0.9, 100.0, 0.0, 4);
        assert!(matches!(
            fit_correlation_curves(&few),
            Err(FitError::InsufficientAngles(_, 4))
        ));
    }

    #[test]
    fn direct_chsh_combination() {
        let e = 1.0 / std::f64::consts::SQRT_2;
        let s = chsh_from_correlations(e, -e, e, e);
        assert_relative_eq!(s, TWO_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(
            correlation_from_counts(50.0, 0.0, 0.0, 50.0),
            1.0,
            epsilon = 1e-12
        );
    }

    fn exp_samples(a: f64, b: f64, temps: &[f64]) -> Vec<DarkCountSample> {
        temps
            .iter()
            .map(|&t| DarkCountSample {
                temp_deg_c: t,
                dark_cps: a * (b * t).exp(),
            })
            .collect()
    }

    #[test]
    fn exponential_fit_recovers_parameters() {
        let samples = exp_samples(1000.0, 0.08, &[5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        let fit = fit_darkcounts(&samples).unwrap();
        assert_relative_eq!(fit.amp_cps, 1000.0, max_relative = 1e-4);
        assert_relative_eq!(fit.slope_per_deg_c, 0.08, max_relative = 1e-4);
        // extrapolation at a sampled temperature equals the curve there
        assert_relative_eq!(
            extrapolate(&fit, 15.0),
            1000.0 * (0.08f64 * 15.0).exp(),
            max_relative = 1e-6
        );
    }

    #[test]
    fn constant_counts_extrapolate_to_mean() {
        let samples = exp_samples(1234.0, 0.0, &[5.0, 8.0, 12.0, 16.0, 20.0]);
        let fit = fit_darkcounts(&samples).unwrap();
        assert!(fit.slope_per_deg_c.abs() < 1e-9);
        assert_relative_eq!(extrapolate(&fit, 10.0), 1234.0, max_relative = 1e-9);
    }

    #[test]
    fn scaling_counts_scales_amplitude_only() {
        let samples = exp_samples(800.0, 0.06, &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0]);
        let scaled: Vec<_> = samples
            .iter()
            .map(|s| DarkCountSample {
                dark_cps: s.dark_cps * 3.0,
                ..*s
            })
            .collect();
        let f1 = fit_darkcounts(&samples).unwrap();
        let f2 = fit_darkcounts(&scaled).unwrap();
        assert_relative_eq!(f2.amp_cps, 3.0 * f1.amp_cps, max_relative = 1e-9);
        assert_relative_eq!(f2.slope_per_deg_c, f1.slope_per_deg_c, epsilon = 1e-12);
    }

    #[test]
    fn fit_input_validation() {
        let few = exp_samples(100.0, 0.1, &[5.0, 10.0]);
        assert!(matches!(
            fit_darkcounts(&few),
            Err(FitError::InsufficientData { .. })
        ));
        let narrow = exp_samples(100.0, 0.1, &[10.0, 10.5, 11.0, 11.5, 12.0]);
        assert!(matches!(
            fit_darkcounts(&narrow),
            Err(FitError::InsufficientSpan(..))
        ));
        let mut bad = exp_samples(100.0, 0.1, &[5.0, 10.0, 15.0, 20.0, 25.0]);
        bad[2].dark_cps = 0.0;
        assert!(matches!(
            fit_darkcounts(&bad),
            Err(FitError::NonPositiveCounts { index: 2, .. })
        ));
    }

    #[test]
    fn degradation_slope_and_duplicate_epochs() {
        let points: Vec<(f64, f64)> = (0..10)
            .map(|d| (d as f64, 100.0 + 170.0 * d as f64))
            .collect();
        let slope = degradation_rate(&points).unwrap();
        assert_relative_eq!(slope, 170.0, max_relative = 1e-9);
        // appending duplicate epochs leaves the slope unchanged
        let mut dup = points.clone();
        dup.push(points[3]);
        dup.push(points[7]);
        // duplicates at existing (x, y) do not change an exact linear fit
        let slope2 = degradation_rate(&dup).unwrap();
        assert_relative_eq!(slope2, 170.0, max_relative = 1e-9);
    }
}
