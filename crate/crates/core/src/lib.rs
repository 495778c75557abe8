//! Modeling toolkit for entanglement-based (BBM92) satellite-to-ground QKD links.
//!
//! The crate is organized as a chain of small, pure modules:
//!
//! - [`params`]: the system parameter set (source, detectors, optical link,
//!   protocol, orbit), flat-file config I/O and validation.
//! - [`orbit`]: circular-orbit pass geometry (elevation / slant range vs time).
//! - [`link`]: downlink loss budget (diffraction, pointing jitter, airmass,
//!   receiver optics).
//! - [`rates`]: analytic singles / coincidence / accidental statistics, QBER
//!   composition and asymptotic secret key rate.
//! - [`finite_key`]: finite-size secret key length from accumulated raw key.
//! - [`event_sim`]: seeded Monte Carlo timestamp-stream generator, the
//!   brute-force oracle for the analytic model.
//! - [`sync`]: beacon cross-correlation clock recovery, coincidence search,
//!   sifting and QBER estimation on timestamp streams.
//! - [`telemetry`]: polarization-correlation / CHSH fitting and detector
//!   dark-count degradation fits.
//! - [`trade`]: pass integration, 2-D parameter sweeps and static loss sweeps.
//!
//! Conventions: rates are in counts per second (cps), times in integer
//! picoseconds for event data and seconds elsewhere, losses in dB (positive),
//! angles in degrees at API boundaries.

pub mod event_sim;
pub mod finite_key;
pub mod link;
pub mod orbit;
pub mod params;
pub mod rates;
pub mod sync;
pub mod telemetry;
pub mod timestamps;
pub mod trade;

pub use event_sim::{BeaconParams, ClockModel, LossProfile, Scenario, SimOutput};
pub use finite_key::FiniteKeyInput;
pub use link::LinkBreakdown;
pub use orbit::PassSample;
pub use params::SystemParams;
pub use rates::RatePoint;
pub use sync::{SiftReport, SyncResult};
pub use telemetry::{ChshFit, DarkCountFit};
pub use timestamps::TimestampRecord;
pub use trade::{PassReport, SweepSpec};
