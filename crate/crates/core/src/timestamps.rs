//! Detector event records and their binary on-disk format.
//!
//! A stream is a flat sequence of 16-byte records sorted non-decreasing in
//! time: `u64` little-endian picoseconds from epoch, `u8` channel, `u8`
//! flags, six reserved zero bytes. Channels 0-3 are the polarization
//! detectors (H, V, D, A); channel 4 is the beacon / health-check tap.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHANNEL_H: u8 = 0;
pub const CHANNEL_V: u8 = 1;
pub const CHANNEL_D: u8 = 2;
pub const CHANNEL_A: u8 = 3;
pub const CHANNEL_BEACON: u8 = 4;
/// Highest legal channel number (exclusive).
pub const CHANNEL_LIMIT: u8 = 8;

/// Flag bit 0 marks beacon-pulse events.
pub const FLAG_BEACON: u8 = 0b0000_0001;

pub const RECORD_BYTES: usize = 16;

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TimestampRecord {
    /// Picoseconds from stream epoch.
    pub time_ps: u64,
    /// Detector channel, < 8.
    pub channel: u8,
    /// Bitfield; bit 0 = beacon event.
    pub flags: u8,
}

impl TimestampRecord {
    pub fn new(time_ps: u64, channel: u8, flags: u8) -> Self {
        Self {
            time_ps,
            channel,
            flags,
        }
    }

    pub fn is_beacon(&self) -> bool {
        self.flags & FLAG_BEACON != 0 || self.channel == CHANNEL_BEACON
    }

    /// Polarization events usable for key generation.
    pub fn is_photon(&self) -> bool {
        self.channel < CHANNEL_BEACON && self.flags & FLAG_BEACON == 0
    }

    /// Measurement basis: 0 for H/V, 1 for D/A. Meaningless for channel 4.
    pub fn basis(&self) -> u8 {
        self.channel >> 1
    }

    /// Outcome bit within the basis: H/D -> 0, V/A -> 1.
    pub fn outcome(&self) -> u8 {
        self.channel & 1
    }

    pub fn encode(&self) -> [u8; RECORD_BYTES] {
        let mut buf = [0u8; RECORD_BYTES];
        buf[..8].copy_from_slice(&self.time_ps.to_le_bytes());
        buf[8] = self.channel;
        buf[9] = self.flags;
        buf
    }

    pub fn decode(buf: &[u8; RECORD_BYTES]) -> Self {
        Self {
            time_ps: u64::from_le_bytes(buf[..8].try_into().unwrap()),
            channel: buf[8],
            flags: buf[9],
        }
    }
}

#[derive(Debug, Error)]
pub enum TimestampError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("truncated record at index {0}")]
    Truncated(usize),
    #[error("unsorted at index {0}")]
    Unsorted(usize),
    #[error("unknown channel {channel} at index {index}")]
    UnknownChannel { index: usize, channel: u8 },
}

/// Read a whole stream, verifying sortedness and channel range.
pub fn read_timestamps(path: impl AsRef<Path>) -> Result<Vec<TimestampRecord>, TimestampError> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut buf = [0u8; RECORD_BYTES];
    let mut last = 0u64;
    loop {
        match read_exact_or_eof(&mut reader, &mut buf) {
            ReadOutcome::Eof => break,
            ReadOutcome::Partial => return Err(TimestampError::Truncated(records.len())),
            ReadOutcome::Full => {}
        }
        let rec = TimestampRecord::decode(&buf);
        let index = records.len();
        if rec.channel >= CHANNEL_LIMIT {
            return Err(TimestampError::UnknownChannel {
                index,
                channel: rec.channel,
            });
        }
        if index > 0 && rec.time_ps < last {
            return Err(TimestampError::Unsorted(index));
        }
        last = rec.time_ps;
        records.push(rec);
    }
    Ok(records)
}

enum ReadOutcome {
    Full,
    Partial,
    Eof,
}

fn read_exact_or_eof(reader: &mut impl Read, buf: &mut [u8]) -> ReadOutcome {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return if filled == 0 {
                    ReadOutcome::Eof
                } else {
                    ReadOutcome::Partial
                }
            }
            Ok(n) => filled += n,
            Err(ref e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(_) => return ReadOutcome::Partial,
        }
    }
    ReadOutcome::Full
}

/// Write a stream, verifying sortedness and channel range first.
pub fn write_timestamps(
    records: &[TimestampRecord],
    path: impl AsRef<Path>,
) -> Result<(), TimestampError> {
    for (index, pair) in records.windows(2).enumerate() {
        if pair[1].time_ps < pair[0].time_ps {
            return Err(TimestampError::Unsorted(index + 1));
        }
    }
    if let Some((index, rec)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.channel >= CHANNEL_LIMIT)
    {
        return Err(TimestampError::UnknownChannel {
            index,
            channel: rec.channel,
        });
    }
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    for rec in records {
        writer.write_all(&rec.encode())?;
    }
    writer.flush()?;
    Ok(())
}
