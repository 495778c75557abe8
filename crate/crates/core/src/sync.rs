//! Clock recovery and coincidence processing on timestamp streams.
//!
//! Synchronization runs in stages, each cheap and linear in the stream
//! length:
//!
//! 1. coarse offset: binned (1 µs) cross-correlation of beacon events over
//!    ±search window, evaluated on a chunk around the stream midpoint;
//! 2. per-segment coarse offsets across the whole pass, fitted linearly to
//!    pick up clock drift (optionally quadratically for Doppler-like drift);
//! 3. per-segment fine offsets (1 ns bins, centroid-refined), refit;
//! 4. with a periodic beacon the absolute offset is only known modulo the
//!    pulse period, so candidate multiples are scored by pair correlation of
//!    the photon channels and the winner resolves the ambiguity.
//!
//! Afterwards [`find_coincidences`] pairs the corrected streams with a greedy
//! earliest-first nearest-neighbour sweep and [`sift_and_estimate`] keeps
//! same-basis pairs and counts outcome errors.

use crate::event_sim::BeaconParams;
use crate::timestamps::TimestampRecord;
use serde::Serialize;
use thiserror::Error;

/// Recovered ground-clock error model and lock quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyncResult {
    /// Ground minus space offset at ground time zero, ps.
    pub offset_ps: f64,
    /// Linear drift, ppm of elapsed ground time.
    pub drift_ppm: f64,
    /// Quadratic drift term, ppm/s (zero unless fitted).
    pub drift_rate_ppm_per_s: f64,
    /// RMS of per-segment offsets about the fitted model, ps.
    pub residual_rms_ps: f64,
    /// Coarse correlation peak height in background sigmas.
    pub correlation_peak_significance: f64,
    /// Beacon-period multiples applied while resolving the comb ambiguity.
    pub period_steps: i64,
    pub n_segments: usize,
}

impl SyncResult {
    /// Model evaluated at a ground timestamp.
    pub fn delta_ps(&self, t_ground_ps: f64) -> f64 {
        let u = t_ground_ps * 1e-12;
        self.offset_ps + self.drift_ppm * 1e6 * u + 0.5 * self.drift_rate_ppm_per_s * 1e6 * u * u
    }
}

/// Knobs for the synchronizer. Defaults match the two-stage design.
#[derive(Debug, Clone, Copy)]
pub struct SyncOptions {
    /// Half-width of the coarse offset search, s.
    pub search_window_s: f64,
    /// Coarse correlation bin, ps.
    pub coarse_bin_ps: f64,
    /// Fine correlation bin, ps.
    pub fine_bin_ps: f64,
    /// Segment length for drift fitting, s.
    pub segment_s: f64,
    /// Half-width of the per-segment coarse search around the running
    /// prediction, ps. Must cover the drift accumulated over the pass.
    pub segment_search_ps: f64,
    /// Fit the quadratic drift term as well.
    pub quadratic: bool,
    /// Minimum acceptable coarse-peak significance.
    pub min_significance: f64,
    /// Pair window used when scoring period candidates, ns.
    pub verify_window_ns: f64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            search_window_s: 5e-3,
            coarse_bin_ps: 1e6,
            fine_bin_ps: 1e3,
            segment_s: 10.0,
            segment_search_ps: 6e8,
            quadratic: false,
            min_significance: 6.0,
            verify_window_ns: 4.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("no beacon events in {0} stream")]
    NoBeaconEvents(&'static str),
    #[error("no significant correlation peak (significance {significance:.2})")]
    NoCorrelationPeak { significance: f64 },
    #[error("too few usable segments ({0}) for a drift fit")]
    TooFewSegments(usize),
}

/// One matched event pair; indices into the two input slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Pairing {
    pub space_idx: usize,
    pub ground_idx: usize,
    /// Ground minus space, ps.
    pub dt_ps: i64,
}

/// Sifting summary over a pair list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiftReport {
    pub n_coincidences: u64,
    pub n_sifted: u64,
    pub n_errors: u64,
    pub qber_est: f64,
    pub coincidence_rate_cps: f64,
}

fn beacon_times_ps(records: &[TimestampRecord]) -> Vec<i64> {
    records
        .iter()
        .filter(|r| r.is_beacon())
        .map(|r| r.time_ps as i64)
        .collect()
}

fn photon_times_ps(records: &[TimestampRecord]) -> Vec<i64> {
    records
        .iter()
        .filter(|r| r.is_photon())
        .map(|r| r.time_ps as i64)
        .collect()
}

/// Histogram of detrended lags (query − reference − predict(query)) within
/// ±window. Returns (peak residual refined by centroid, peak count,
/// significance of the peak over the median background).
fn correlate(
    reference: &[i64],
    query: &[i64],
    predict: impl Fn(f64) -> f64,
    half_window_ps: f64,
    bin_ps: f64,
) -> Option<(f64, u64, f64)> {
    if reference.is_empty() || query.is_empty() {
        return None;
    }
    let n_bins = ((2.0 * half_window_ps / bin_ps).ceil() as usize).max(1);
    let lo = -half_window_ps;
    let mut hist = vec![0u64; n_bins];
    for &q in query {
        let center = predict(q as f64);
        let from = (q as f64 - center - half_window_ps) as i64;
        let to = (q as f64 - center + half_window_ps) as i64;
        let start = reference.partition_point(|&r| r < from);
        for &r in &reference[start..] {
            if r > to {
                break;
            }
            let residual = (q - r) as f64 - center;
            let idx = ((residual - lo) / bin_ps) as usize;
            if idx < n_bins {
                hist[idx] += 1;
            }
        }
    }
    let (peak_idx, &peak) = hist
        .iter()
        .enumerate()
        .max_by_key(|(_, &c)| c)
        .expect("non-empty histogram");
    if peak == 0 {
        return None;
    }
    // background level from the median bin; robust against comb aliases
    let mut sorted: Vec<u64> = hist.clone();
    sorted.sort_unstable();
    let background = sorted[sorted.len() / 2] as f64;
    let significance = (peak as f64 - background) / background.sqrt().max(1.0);
    // centroid over the peak neighbourhood for sub-bin resolution
    let lo_idx = peak_idx.saturating_sub(5);
    let hi_idx = (peak_idx + 5).min(n_bins - 1);
    let mut weight = 0.0;
    let mut moment = 0.0;
    for (idx, &count) in hist.iter().enumerate().take(hi_idx + 1).skip(lo_idx) {
        let c = count as f64;
        let residual_center = lo + (idx as f64 + 0.5) * bin_ps;
        weight += c;
        moment += c * residual_center;
    }
    let refined = if weight > 0.0 {
        moment / weight
    } else {
        lo + (peak_idx as f64 + 0.5) * bin_ps
    };
    Some((refined, peak, significance))
}

/// Weighted polynomial fit of per-segment offsets vs segment time.
/// Returns coefficients about u = 0 (absolute ground seconds).
fn fit_offsets(points: &[(f64, f64, f64)], quadratic: bool) -> (f64, f64, f64) {
    // center the abscissa for conditioning
    let wsum: f64 = points.iter().map(|p| p.2).sum();
    let u0 = points.iter().map(|p| p.0 * p.2).sum::<f64>() / wsum;
    let order = if quadratic && points.len() >= 3 { 2 } else { 1 };
    if points.len() == 1 || order == 1 && points.len() < 2 {
        return (points[0].1, 0.0, 0.0);
    }
    // normal equations for order 1 or 2
    let mut m = [[0.0f64; 3]; 3];
    let mut v = [0.0f64; 3];
    for &(u, d, w) in points {
        let x = u - u0;
        let basis = [1.0, x, x * x];
        for i in 0..=order {
            for j in 0..=order {
                m[i][j] += w * basis[i] * basis[j];
            }
            v[i] += w * basis[i] * d;
        }
    }
    let coeffs = solve_small(&mut m, &mut v, order + 1);
    let (c0, c1, c2) = (coeffs[0], coeffs[1], coeffs[2]);
    // expand back around u = 0
    let a0 = c0 - c1 * u0 + c2 * u0 * u0;
    let a1 = c1 - 2.0 * c2 * u0;
    let a2 = c2;
    (a0, a1, a2)
}

fn solve_small(m: &mut [[f64; 3]; 3], v: &mut [f64; 3], n: usize) -> [f64; 3] {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[row][col].abs() > m[pivot][col].abs() {
                pivot = row;
            }
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        let diag = m[col][col];
        if diag.abs() < 1e-30 {
            continue;
        }
        let pivot_row = m[col];
        for row in col + 1..n {
            let factor = m[row][col] / diag;
            for (k, &pivot_val) in pivot_row.iter().enumerate().take(n).skip(col) {
                m[row][k] -= factor * pivot_val;
            }
            v[row] -= factor * v[col];
        }
    }
    let mut out = [0.0f64; 3];
    for col in (0..n).rev() {
        let mut acc = v[col];
        for k in col + 1..n {
            acc -= m[col][k] * out[k];
        }
        out[col] = if m[col][col].abs() < 1e-30 {
            0.0
        } else {
            acc / m[col][col]
        };
    }
    out
}

struct SegmentPass {
    /// (segment mid ground-time s, offset ps, weight)
    points: Vec<(f64, f64, f64)>,
}

fn segment_bounds(ground_beacons: &[i64], segment_span_ps: f64) -> Vec<(usize, usize, f64)> {
    let t0 = *ground_beacons.first().unwrap() as f64;
    let t1 = *ground_beacons.last().unwrap() as f64;
    let n_segments = (((t1 - t0) / segment_span_ps).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(n_segments);
    let mut cursor = 0usize;
    for k in 0..n_segments {
        let seg_lo = t0 + k as f64 * segment_span_ps;
        let seg_hi = (seg_lo + segment_span_ps).min(t1 + 1.0);
        let start = cursor;
        while cursor < ground_beacons.len() && (ground_beacons[cursor] as f64) < seg_hi {
            cursor += 1;
        }
        out.push((start, cursor, 0.5 * (seg_lo + seg_hi)));
    }
    out
}

/// Per-segment offsets against a fixed model prediction.
fn segment_offsets(
    space_beacons: &[i64],
    ground_beacons: &[i64],
    predict: impl Fn(f64) -> f64,
    segment_span_ps: f64,
    half_window_ps: f64,
    bin_ps: f64,
) -> SegmentPass {
    let mut points = Vec::new();
    for (start, end, mid) in segment_bounds(ground_beacons, segment_span_ps) {
        let seg = &ground_beacons[start..end];
        if seg.len() < 10 {
            continue;
        }
        if let Some((residual, peak, sig)) =
            correlate(space_beacons, seg, &predict, half_window_ps, bin_ps)
        {
            if sig > 3.0 {
                points.push((mid * 1e-12, predict(mid) + residual, peak as f64));
            }
        }
    }
    SegmentPass { points }
}

/// Per-segment offsets by tracking outward from the centre segment, each
/// prediction taken from the nearest segment already locked. Keeps the
/// search window narrower than the beacon period without losing a drifting
/// comb.
fn segment_offsets_tracked(
    space_beacons: &[i64],
    ground_beacons: &[i64],
    start_offset_ps: f64,
    segment_span_ps: f64,
    half_window_ps: f64,
    bin_ps: f64,
) -> SegmentPass {
    let bounds = segment_bounds(ground_beacons, segment_span_ps);
    let n = bounds.len();
    let centre = n / 2;
    let mut found: Vec<Option<(f64, f64, f64)>> = vec![None; n];
    // centre, then alternating outward
    let order = std::iter::once(centre)
        .chain((1..n).flat_map(|d| {
            let mut pair = Vec::with_capacity(2);
            if centre + d < n {
                pair.push(centre + d);
            }
            if centre >= d {
                pair.push(centre - d);
            }
            pair
        }))
        .collect::<Vec<_>>();
    for idx in order {
        let (start, end, mid) = bounds[idx];
        let seg = &ground_beacons[start..end];
        if seg.len() < 10 {
            continue;
        }
        // nearest already-locked neighbour, else the coarse seed
        let prediction = (1..n)
            .find_map(|d| {
                let right = idx.checked_add(d).filter(|&i| i < n).and_then(|i| found[i]);
                let left = idx.checked_sub(d).and_then(|i| found[i]);
                right.or(left).map(|p| p.1)
            })
            .unwrap_or(start_offset_ps);
        if let Some((residual, peak, sig)) =
            correlate(space_beacons, seg, |_| prediction, half_window_ps, bin_ps)
        {
            if sig > 3.0 {
                found[idx] = Some((mid * 1e-12, prediction + residual, peak as f64));
            }
        }
    }
    SegmentPass {
        points: found.into_iter().flatten().collect(),
    }
}

/// Count photon pairs between `space` and shifted `ground` within ±half.
fn count_pairs_shifted(space: &[i64], ground: &[i64], shift_ps: f64, half_ps: i64) -> u64 {
    let mut count = 0u64;
    let mut start = 0usize;
    for &g in ground {
        let t = g as f64 - shift_ps;
        let lo = (t - half_ps as f64) as i64;
        let hi = (t + half_ps as f64) as i64;
        while start < space.len() && space[start] < lo {
            start += 1;
        }
        let mut j = start;
        while j < space.len() && space[j] <= hi {
            count += 1;
            j += 1;
        }
    }
    count
}

/// Recover the ground-clock model from beacon events, resolving the comb
/// ambiguity with photon correlations when photons are present.
pub fn sync_clocks(
    space: &[TimestampRecord],
    ground: &[TimestampRecord],
    beacon: &BeaconParams,
    opts: &SyncOptions,
) -> Result<SyncResult, SyncError> {
    let space_beacons = beacon_times_ps(space);
    let ground_beacons = beacon_times_ps(ground);
    if space_beacons.is_empty() {
        return Err(SyncError::NoBeaconEvents("space"));
    }
    if ground_beacons.is_empty() {
        return Err(SyncError::NoBeaconEvents("ground"));
    }

    // stage 1: coarse lock on a chunk around the ground-stream midpoint
    let window_ps = opts.search_window_s * 1e12;
    let mid_idx = ground_beacons.len() / 2;
    let chunk_half = ((20.0e12 / (1e12 / beacon.rate_hz)) as usize).max(100);
    let lo = mid_idx.saturating_sub(chunk_half);
    let hi = (mid_idx + chunk_half).min(ground_beacons.len());
    let chunk = &ground_beacons[lo..hi];
    let (coarse_offset, _, significance) = correlate(
        &space_beacons,
        chunk,
        |_| 0.0,
        window_ps,
        opts.coarse_bin_ps,
    )
    .ok_or(SyncError::NoCorrelationPeak { significance: 0.0 })?;
    if significance < opts.min_significance {
        return Err(SyncError::NoCorrelationPeak { significance });
    }

    // stage 2: track the comb segment by segment from the centre outward,
    // with the search window capped below the beacon period so a drifting
    // comb cannot hop aliases between segments
    let period_ps = 1e12 / beacon.rate_hz;
    let segment_span_ps = opts.segment_s * 1e12;
    let tracked = segment_offsets_tracked(
        &space_beacons,
        &ground_beacons,
        coarse_offset,
        segment_span_ps,
        opts.segment_search_ps.min(0.45 * period_ps),
        opts.coarse_bin_ps,
    );
    if tracked.points.is_empty() {
        return Err(SyncError::TooFewSegments(0));
    }
    let mut model = fit_offsets(&tracked.points, opts.quadratic);
    let mut points = tracked.points;

    // stage 3: refine with shrinking windows, detrending each pass by the
    // previous fit so the within-segment smear collapses iteratively; the
    // final width is repeated once so the last fit's own error is flushed
    let stages: [(f64, f64); 3] = [
        (5e7, 32.0 * opts.fine_bin_ps),
        (2e6, opts.fine_bin_ps),
        (2e6, opts.fine_bin_ps),
    ];
    for &(half, bin) in stages.iter() {
        let m = model;
        let pass = segment_offsets(
            &space_beacons,
            &ground_beacons,
            |t_ps| {
                let u = t_ps * 1e-12;
                m.0 + m.1 * u + m.2 * u * u
            },
            segment_span_ps,
            half,
            bin,
        );
        if pass.points.is_empty() {
            continue;
        }
        points = pass.points;
        model = fit_offsets(&points, opts.quadratic);
    }
    let (mut b0, b1, b2) = model;

    let residual_rms_ps = {
        let mut acc = 0.0;
        for &(u, d, _) in &points {
            let fit = b0 + b1 * u + b2 * u * u;
            let r = d - fit;
            acc += r * r;
        }
        (acc / points.len() as f64).sqrt()
    };

    // stage 4: photon correlation resolves how many whole beacon periods the
    // comb alignment is off
    let space_photons = photon_times_ps(space);
    let ground_photons = photon_times_ps(ground);
    let mut period_steps = 0i64;
    if !space_photons.is_empty() && !ground_photons.is_empty() {
        let half = (opts.verify_window_ns * 1e3 / 2.0) as i64;
        // the fitted comb alias can sit a full window away from truth
        let k_max = (2.0 * window_ps / period_ps).ceil() as i64;
        let mut best: Option<(i64, u64)> = None;
        for k in -k_max..=k_max {
            let mut matched = 0u64;
            // score against the drift-corrected ground photons
            let shifted: Vec<i64> = ground_photons
                .iter()
                .map(|&g| {
                    let u = g as f64 * 1e-12;
                    (g as f64 - (b0 + k as f64 * period_ps + b1 * u + b2 * u * u)) as i64
                })
                .collect();
            matched += count_pairs_shifted(&space_photons, &shifted, 0.0, half);
            match best {
                None => best = Some((k, matched)),
                Some((_, m)) if matched > m => best = Some((k, matched)),
                _ => {}
            }
        }
        if let Some((k, _)) = best {
            period_steps = k;
            b0 += k as f64 * period_ps;
        }

        // photon vernier: the beacon comb can carry a small systematic
        // (pulse shape, double detections); re-center the constant term on
        // the pair-correlation peak, which is what coincidence finding
        // actually needs aligned
        if let Some((residual, _, sig)) = correlate(
            &space_photons,
            &ground_photons,
            |t_ps| {
                let u = t_ps * 1e-12;
                b0 + b1 * u + b2 * u * u
            },
            3e3,
            100.0,
        ) {
            if sig > opts.min_significance {
                b0 += residual;
            }
        }
    }

    Ok(SyncResult {
        offset_ps: b0,
        drift_ppm: b1 / 1e6,
        // delta carries 1/2 * rate * u^2, so the raw u^2 coefficient doubles
        drift_rate_ppm_per_s: 2.0 * b2 / 1e6,
        residual_rms_ps,
        correlation_peak_significance: significance,
        period_steps,
        n_segments: points.len(),
    })
}

/// Apply the recovered model: corrected time = t − delta(t).
pub fn apply_correction(records: &[TimestampRecord], sync: &SyncResult) -> Vec<TimestampRecord> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let t = r.time_ps as f64;
        let corrected = t - sync.delta_ps(t);
        out.push(TimestampRecord::new(
            corrected.max(0.0) as u64,
            r.channel,
            r.flags,
        ));
    }
    out.sort_by_key(|r| r.time_ps);
    out
}

/// Greedy nearest-neighbour pairing within |Δt| ≤ τ/2; each event is used at
/// most once, earlier space events claim first.
pub fn find_coincidences(
    space: &[TimestampRecord],
    ground: &[TimestampRecord],
    tau_c_ns: f64,
) -> Vec<Pairing> {
    let half = (tau_c_ns * 1e3 / 2.0).floor() as i64;
    let mut pairs = Vec::new();
    let mut used = vec![false; ground.len()];
    let mut frontier = 0usize;
    for (i, s) in space.iter().enumerate() {
        let t = s.time_ps as i64;
        let lo = t - half;
        let hi = t + half;
        while frontier < ground.len() && (used[frontier] || (ground[frontier].time_ps as i64) < lo)
        {
            frontier += 1;
        }
        let mut best: Option<(usize, i64)> = None;
        let mut j = frontier;
        while j < ground.len() {
            let tg = ground[j].time_ps as i64;
            if tg > hi {
                break;
            }
            if !used[j] {
                let d = (tg - t).abs();
                match best {
                    None => best = Some((j, d)),
                    Some((_, bd)) if d < bd => best = Some((j, d)),
                    _ => {}
                }
            }
            j += 1;
        }
        if let Some((bj, _)) = best {
            used[bj] = true;
            pairs.push(Pairing {
                space_idx: i,
                ground_idx: bj,
                dt_ps: ground[bj].time_ps as i64 - t,
            });
        }
    }
    pairs
}

/// Keep same-basis photon pairs and count outcome errors. The entangled
/// state is correlated in both bases, so an error is a disagreeing outcome.
pub fn sift_and_estimate(
    space: &[TimestampRecord],
    ground: &[TimestampRecord],
    pairs: &[Pairing],
    duration_s: f64,
) -> SiftReport {
    let mut n_coincidences = 0u64;
    let mut n_sifted = 0u64;
    let mut n_errors = 0u64;
    for p in pairs {
        let s = space[p.space_idx];
        let g = ground[p.ground_idx];
        if !s.is_photon() || !g.is_photon() {
            continue;
        }
        n_coincidences += 1;
        if s.basis() == g.basis() {
            n_sifted += 1;
            if s.outcome() != g.outcome() {
                n_errors += 1;
            }
        }
    }
    SiftReport {
        n_coincidences,
        n_sifted,
        n_errors,
        qber_est: if n_sifted > 0 {
            n_errors as f64 / n_sifted as f64
        } else {
            0.0
        },
        coincidence_rate_cps: if duration_s > 0.0 {
            n_coincidences as f64 / duration_s
        } else {
            0.0
        },
    }
}

/// Raw key bits (ground outcomes of sifted pairs, time order).
pub fn raw_key_bits(
    space: &[TimestampRecord],
    ground: &[TimestampRecord],
    pairs: &[Pairing],
) -> Vec<bool> {
    let mut bits = Vec::new();
    for p in pairs {
        let s = space[p.space_idx];
        let g = ground[p.ground_idx];
        if s.is_photon() && g.is_photon() && s.basis() == g.basis() {
            bits.push(g.outcome() == 1);
        }
    }
    bits
}
