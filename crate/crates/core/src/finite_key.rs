//! Finite-size secret key length from accumulated raw (sifted) key.
//!
//! The bound is kept in one place, [`finite_key_length`]. Structure: with
//! unbiased basis choice the sifted rounds split evenly; one half forms the
//! key, the other half estimates the phase error rate. The estimate is
//! penalized by a Serfling-type sampling correction
//!
//!   mu = sqrt( ln(2/eps_sec) / n_test ),
//!
//! and error-correction capacity is budgeted at the same penalized rate, so
//!
//!   len = n_key * (1 - (1+f) h(Q + mu)) - log2(2/eps_cor) - 2 log2(1/(2 eps_sec)),
//!
//! floored to whole bits and clamped at zero, with Q + mu clamped at 1/2.

use crate::rates::binary_entropy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inputs for one finite-key evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteKeyInput {
    /// Sifted coincidences accumulated during the pass, bits.
    pub n_raw: u64,
    /// Average QBER over the accumulated key, 0..0.5.
    pub qber_avg: f64,
    pub eps_cor: f64,
    pub eps_sec: f64,
    /// Error-correction inefficiency f >= 1.
    pub f: f64,
}

#[derive(Debug, Error)]
pub enum FiniteKeyError {
    #[error("qber {0} ∉ [0,0.5]")]
    InvalidQber(f64),
    #[error("epsilon {0} ∉ (0,1)")]
    InvalidEpsilon(f64),
    #[error("ec efficiency {0} < 1")]
    InvalidEcEfficiency(f64),
}

impl FiniteKeyInput {
    pub fn validate(&self) -> Result<(), FiniteKeyError> {
        if !(0.0..=0.5).contains(&self.qber_avg) {
            return Err(FiniteKeyError::InvalidQber(self.qber_avg));
        }
        for eps in [self.eps_cor, self.eps_sec] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(FiniteKeyError::InvalidEpsilon(eps));
            }
        }
        if self.f < 1.0 {
            return Err(FiniteKeyError::InvalidEcEfficiency(self.f));
        }
        Ok(())
    }
}

/// Extractable secret key, bits. Zero for n_raw = 0.
pub fn finite_key_length(input: &FiniteKeyInput) -> u64 {
    if input.n_raw == 0 {
        return 0;
    }
    let n_key = (input.n_raw / 2) as f64;
    let n_test = (input.n_raw - input.n_raw / 2) as f64;
    let mu = ((2.0 / input.eps_sec).ln() / n_test).sqrt();
    let q_pen = (input.qber_avg + mu).min(0.5);
    let correctness = (2.0 / input.eps_cor).log2();
    let privacy = 2.0 * (1.0 / (2.0 * input.eps_sec)).log2();
    let len = n_key * (1.0 - (1.0 + input.f) * binary_entropy(q_pen)) - correctness - privacy;
    if len <= 0.0 {
        0
    } else {
        len.floor() as u64
    }
}

/// Infinite-data limit for the same raw key: n(1 − (1+f) h(Q)).
pub fn asymptotic_key_bits(n_raw: u64, qber: f64, f: f64) -> f64 {
    (n_raw as f64 * (1.0 - (1.0 + f) * binary_entropy(qber))).max(0.0)
}

/// Whole 256-bit keys contained in `bits`.
pub fn keys_256(bits: u64) -> u64 {
    bits / 256
}

/// Elementwise finite key over an (n, QBER) grid; rows follow `n_grid`.
pub fn finite_key_map(
    n_grid: &[u64],
    q_grid: &[f64],
    eps_cor: f64,
    eps_sec: f64,
    f: f64,
) -> Vec<Vec<u64>> {
    n_grid
        .iter()
        .map(|&n| {
            q_grid
                .iter()
                .map(|&q| {
                    finite_key_length(&FiniteKeyInput {
                        n_raw: n,
                        qber_avg: q,
                        eps_cor,
                        eps_sec,
                        f,
                    })
                })
                .collect()
        })
        .collect()
}

/// QBER at which the finite key crosses zero for a given raw key size,
/// by bisection.
pub fn zero_crossing_qber(n_raw: u64, eps_cor: f64, eps_sec: f64, f: f64) -> f64 {
    let positive = |q: f64| {
        finite_key_length(&FiniteKeyInput {
            n_raw,
            qber_avg: q,
            eps_cor,
            eps_sec,
            f,
        }) > 0
    };
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    if !positive(lo) {
        return 0.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (hi + lo);
        if positive(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (hi + lo)
}
