//! Shared broadcast medium: geometry-based decodability, energy sensing and
//! collision classification.

use crate::sim::SimTime;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        assert!(x.is_finite() && y.is_finite(), "non-finite position");
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    /// Decode range, meters.
    pub tx_range: f64,
    /// Carrier-sense / interference range, meters.
    pub cs_range: f64,
    /// Channel bit rate, bits per second.
    pub bitrate: u64,
    pub prop_delay: SimTime,
    /// Fixed PLCP preamble + header time added to every frame.
    pub phy_overhead: SimTime,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            tx_range: 250.0,
            cs_range: 550.0,
            bitrate: 2_000_000,
            prop_delay: SimTime::from_micros(1),
            phy_overhead: SimTime::from_micros(192),
        }
    }
}

/// How a receiver at some distance relates to a sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reach {
    Decodable,
    EnergyOnly,
    None,
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tx_range > 0.0) {
            return Err(format!("tx_range must be positive, got {}", self.tx_range));
        }
        if self.cs_range < self.tx_range {
            return Err(format!(
                "cs_range {} must be >= tx_range {}",
                self.cs_range, self.tx_range
            ));
        }
        if self.bitrate == 0 {
            return Err("bitrate must be positive".into());
        }
        Ok(())
    }

    pub fn reach(&self, distance: f64) -> Reach {
        if distance <= self.tx_range {
            Reach::Decodable
        } else if distance <= self.cs_range {
            Reach::EnergyOnly
        } else {
            Reach::None
        }
    }

    /// Airtime of a frame carrying `bytes` bytes of MAC-level data.
    pub fn airtime(&self, bytes: u32) -> SimTime {
        let bits = bytes as u64 * 8;
        let us = (bits * 1_000_000).div_ceil(self.bitrate);
        self.phy_overhead + SimTime::from_micros(us)
    }
}

/// One transmission as seen by a particular receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionRecord {
    pub id: u64,
    pub sender: NodeId,
    pub start: SimTime,
    pub end: SimTime,
    /// Whether the receiver is within decode range of the sender.
    pub decodable: bool,
}

impl TransmissionRecord {
    fn overlaps(&self, other: &TransmissionRecord) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    /// The record with this id was received cleanly.
    Decoded(u64),
    Collision,
    EnergyOnly,
}

/// Classifies what a node makes of a set of overlapping transmissions.
///
/// A decodable frame survives only if nothing else overlaps any part of its
/// airtime. There is no capture effect.
pub fn classify_reception(records: &[TransmissionRecord]) -> Reception {
    let mut clean: Option<&TransmissionRecord> = None;
    let mut any_decodable = false;
    for r in records.iter().filter(|r| r.decodable) {
        any_decodable = true;
        let hit = records
            .iter()
            .any(|o| o.id != r.id && o.overlaps(r));
        // Disjoint clean frames can coexist in the query; report the earliest.
        if !hit && clean.is_none_or(|c| (r.start, r.id) < (c.start, c.id)) {
            clean = Some(r);
        }
    }
    match (clean, any_decodable) {
        (Some(r), _) => Reception::Decoded(r.id),
        (None, true) => Reception::Collision,
        (None, false) => Reception::EnergyOnly,
    }
}

/// Incremental per-node view of energy on the medium, fed by energy
/// start/end events. Equivalent to [`classify_reception`] applied to each
/// frame's airtime.
#[derive(Debug, Default, Clone)]
pub struct ReceptionTracker {
    active: Vec<Incoming>,
    transmitting: bool,
}

#[derive(Debug, Clone)]
struct Incoming {
    id: u64,
    decodable: bool,
    corrupted: bool,
}

impl ReceptionTracker {
    pub fn energy_count(&self) -> usize {
        self.active.len()
    }

    pub fn is_transmitting(&self) -> bool {
        self.transmitting
    }

    /// True while any decodable, still-intact frame is arriving.
    pub fn is_receiving(&self) -> bool {
        self.active.iter().any(|a| a.decodable && !a.corrupted)
    }

    pub fn energy_start(&mut self, id: u64, decodable: bool) {
        let clash = self.transmitting || !self.active.is_empty();
        if clash {
            for a in &mut self.active {
                a.corrupted = true;
            }
        }
        self.active.push(Incoming {
            id,
            decodable,
            corrupted: clash,
        });
    }

    /// Returns `Some(true)` if a decodable frame ended intact, `Some(false)`
    /// if it was decodable but corrupted, `None` for pure energy or an
    /// unknown id.
    pub fn energy_end(&mut self, id: u64) -> Option<bool> {
        let idx = self.active.iter().position(|a| a.id == id)?;
        let a = self.active.swap_remove(idx);
        a.decodable.then_some(!a.corrupted)
    }

    /// Half duplex: starting to transmit destroys everything being received.
    pub fn start_transmit(&mut self) {
        self.transmitting = true;
        for a in &mut self.active {
            a.corrupted = true;
        }
    }

    pub fn end_transmit(&mut self) {
        self.transmitting = false;
    }
}
