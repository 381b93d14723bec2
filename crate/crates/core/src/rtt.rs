//! Retransmission timer estimation (srtt + 4·rttvar) shared by both transports.

use crate::sim::SimTime;

pub const RTO_MIN: SimTime = SimTime::from_millis(200);
pub const RTO_MAX: SimTime = SimTime::from_secs(60);
pub const RTO_INIT: SimTime = SimTime::from_secs(1);

#[derive(Debug, Clone, Default)]
pub struct RttEstimator {
    pub srtt: Option<f64>,
    pub rttvar: f64,
}

impl RttEstimator {
    pub fn sample(&mut self, rtt: SimTime) {
        let r = rtt.as_micros() as f64;
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2.0;
            }
            Some(s) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (s - r).abs();
                self.srtt = Some(0.875 * s + 0.125 * r);
            }
        }
    }

    /// Base RTO before exponential backoff.
    pub fn rto(&self) -> SimTime {
        match self.srtt {
            None => RTO_INIT,
            Some(s) => {
                let us = (s + 4.0 * self.rttvar).ceil() as u64;
                SimTime::from_micros(us).max(RTO_MIN).min(RTO_MAX)
            }
        }
    }
}

/// `base` doubled `backoff` times, capped at [`RTO_MAX`].
pub fn backed_off(base: SimTime, backoff: u32) -> SimTime {
    let us = base
        .as_micros()
        .checked_shl(backoff.min(32))
        .unwrap_or(u64::MAX);
    SimTime::from_micros(us).min(RTO_MAX)
}
