//! WCCP sender (leaky bucket paced by explicit feedback) and receiver.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::rtt::{backed_off, RttEstimator};
use crate::sim::SimTime;

use super::header::CongestionHeader;

#[derive(Debug, Clone, PartialEq)]
pub struct SenderConfig {
    /// Transport packet size including the congestion header, bytes.
    pub packet_bytes: u32,
    pub t_c: SimTime,
    pub rp_init: f64,
    pub rp_min: f64,
    pub bucket_depth: f64,
    pub fb_init: f64,
}

impl SenderConfig {
    /// One packet per control interval to start and as the floor, a
    /// two-packet bucket. Below one packet per interval a forwarder often has
    /// no traffic to apportion and offers zero, so the rate could not recover.
    pub fn for_packet(packet_bytes: u32, t_c: SimTime, fb_init: f64) -> Self {
        let p = packet_bytes as f64;
        let per_interval = p / t_c.as_secs_f64();
        Self {
            packet_bytes,
            t_c,
            rp_init: per_interval,
            rp_min: per_interval,
            bucket_depth: 2.0 * p,
            fb_init,
        }
    }
}

/// Rate update on ACK arrival: `rp + fb`, floored at `rp_min`.
pub fn update_rate(rp: f64, fb: f64, rp_min: f64) -> f64 {
    (rp + fb).max(rp_min)
}

#[derive(Debug, Clone)]
struct Outstanding {
    sent_at: SimTime,
    retransmitted: bool,
    queued_for_retx: bool,
}

/// A packet released by the leaky bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub seq: u64,
    pub header: CongestionHeader,
    pub retransmission: bool,
}

/// Outcome of an ACK at the sender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckOutcome {
    pub rtt_sample: Option<SimTime>,
    pub new_rp: f64,
}

#[derive(Debug, Clone)]
pub struct SenderState {
    pub cfg: SenderConfig,
    pub rp: f64,
    pub permits: f64,
    pub rtt: RttEstimator,
    pub rto_backoff: u32,
    pub retransmissions: u64,
    pub rp_max_seen: f64,
    last_accrual: SimTime,
    next_seq: u64,
    unacked: BTreeMap<u64, Outstanding>,
    retx: VecDeque<u64>,
}

const PERMIT_EPS: f64 = 1e-6;

impl SenderState {
    pub fn new(cfg: SenderConfig, now: SimTime) -> Self {
        Self {
            rp: cfg.rp_init,
            rp_max_seen: cfg.rp_init,
            // Enough for the first packet to leave immediately.
            permits: (cfg.packet_bytes as f64).min(cfg.bucket_depth),
            rtt: RttEstimator::default(),
            rto_backoff: 0,
            retransmissions: 0,
            last_accrual: now,
            next_seq: 0,
            unacked: BTreeMap::new(),
            retx: VecDeque::new(),
            cfg,
        }
    }

    pub fn outstanding(&self) -> usize {
        self.unacked.len()
    }

    fn accrue(&mut self, now: SimTime) {
        let dt = now.saturating_sub(self.last_accrual).as_secs_f64();
        self.permits = (self.permits + self.rp * dt).min(self.cfg.bucket_depth);
        self.last_accrual = now;
    }

    /// Header stamped on every new or retransmitted packet.
    pub fn sender_emit(&self) -> CongestionHeader {
        CongestionHeader {
            rp: self.rp,
            tc: self.cfg.t_c,
            fb: self.cfg.fb_init,
        }
    }

    /// Releases every packet the bucket currently permits. Retransmissions
    /// go first. The sender is always backlogged.
    pub fn leaky_bucket_tick(&mut self, now: SimTime) -> Vec<Emission> {
        self.accrue(now);
        let p = self.cfg.packet_bytes as f64;
        let mut out = Vec::new();
        while self.permits + PERMIT_EPS >= p {
            self.permits = (self.permits - p).max(0.0);
            let header = self.sender_emit();
            let (seq, retransmission) = match self.retx.pop_front() {
                Some(seq) => {
                    let o = self.unacked.get_mut(&seq).expect("queued retx is outstanding");
                    o.sent_at = now;
                    o.retransmitted = true;
                    o.queued_for_retx = false;
                    self.retransmissions += 1;
                    (seq, true)
                }
                None => {
                    let seq = self.next_seq;
                    self.next_seq += 1;
                    self.unacked.insert(
                        seq,
                        Outstanding {
                            sent_at: now,
                            retransmitted: false,
                            queued_for_retx: false,
                        },
                    );
                    (seq, false)
                }
            };
            out.push(Emission {
                seq,
                header,
                retransmission,
            });
        }
        out
    }

    /// Next time the bucket will hold a full packet's worth of permits.
    pub fn next_emission_at(&self, now: SimTime) -> SimTime {
        let p = self.cfg.packet_bytes as f64;
        let missing = (p - self.permits).max(0.0);
        let wait = (missing / self.rp * 1e6).ceil() as u64;
        now + SimTime::from_micros(wait.max(1))
    }

    /// Applies an ACK. Only ACKs for outstanding packets move the rate.
    pub fn on_ack(&mut self, now: SimTime, seq: u64, fb: f64) -> Option<AckOutcome> {
        let o = self.unacked.remove(&seq)?;
        if o.queued_for_retx {
            self.retx.retain(|s| *s != seq);
        }
        let rtt_sample = (!o.retransmitted).then(|| now - o.sent_at);
        if let Some(r) = rtt_sample {
            self.rtt.sample(r);
        }
        self.rto_backoff = 0;
        self.accrue(now);
        self.rp = update_rate(self.rp, fb, self.cfg.rp_min);
        self.rp_max_seen = self.rp_max_seen.max(self.rp);
        Some(AckOutcome {
            rtt_sample,
            new_rp: self.rp,
        })
    }

    pub fn rto(&self) -> SimTime {
        backed_off(self.rtt.rto(), self.rto_backoff)
    }

    /// Expiry time of the retransmission timer, if anything is outstanding
    /// and not already queued for retransmission.
    pub fn rto_deadline(&self) -> Option<SimTime> {
        let rto = self.rto();
        self.unacked
            .values()
            .filter(|o| !o.queued_for_retx)
            .map(|o| o.sent_at + rto)
            .min()
    }

    /// Queues every timed-out packet for retransmission and backs off.
    /// Loss does not touch the permit rate.
    pub fn on_rto(&mut self, now: SimTime) -> usize {
        let rto = self.rto();
        let mut n = 0;
        for (seq, o) in self.unacked.iter_mut() {
            if !o.queued_for_retx && o.sent_at + rto <= now {
                o.queued_for_retx = true;
                self.retx.push_back(*seq);
                n += 1;
            }
        }
        if n > 0 {
            self.rto_backoff = (self.rto_backoff + 1).min(16);
        }
        n
    }
}

/// Destination side: counts unique deliveries and echoes feedback.
#[derive(Debug, Clone, Default)]
pub struct ReceiverState {
    cumulative: u64,
    above: BTreeSet<u64>,
    pub delivered_packets: u64,
}

impl ReceiverState {
    /// Returns true if `seq` is new.
    pub fn on_data(&mut self, seq: u64) -> bool {
        if seq < self.cumulative || self.above.contains(&seq) {
            return false;
        }
        self.above.insert(seq);
        while self.above.remove(&self.cumulative) {
            self.cumulative += 1;
        }
        self.delivered_packets += 1;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> SenderConfig {
        SenderConfig {
            packet_bytes: 1000,
            t_c: SimTime::from_millis(200),
            rp_init: 1000.0,
            rp_min: 50.0,
            bucket_depth: 2000.0,
            fb_init: 25_000.0,
        }
    }

    #[test]
    fn rate_update_rule() {
        assert_eq!(update_rate(1000.0, -200.0, 50.0), 800.0);
        assert_eq!(update_rate(1000.0, 0.0, 50.0), 1000.0);
        assert_eq!(update_rate(100.0, -500.0, 50.0), 50.0);
    }

    #[test]
    fn defaults_follow_packet_size() {
        let c = SenderConfig::for_packet(1012, SimTime::from_millis(200), 25_000.0);
        assert!((c.rp_init - 5060.0).abs() < 1e-9);
        assert!((c.rp_min - 5060.0).abs() < 1e-9);
        assert_eq!(c.bucket_depth, 2024.0);
    }

    /// Drives the bucket the way the event loop does: tick, then sleep until
    /// the next permit.
    fn run_bucket(s: &mut SenderState, until: SimTime) -> Vec<(SimTime, Emission)> {
        let mut out = Vec::new();
        let mut now = SimTime::ZERO;
        while now <= until {
            for e in s.leaky_bucket_tick(now) {
                out.push((now, e));
            }
            now = s.next_emission_at(now);
        }
        out
    }

    #[test]
    fn emits_at_permit_rate() {
        // The first packet leaves at t=0 on the initial permit, then one per
        // second: 10 packets by t=9 s, 11 counting t=10 s.
        let mut s = SenderState::new(cfg(), SimTime::ZERO);
        let em = run_bucket(&mut s, SimTime::from_secs(10) - SimTime::from_micros(1));
        assert_eq!(em.len(), 10);
        assert!(em.iter().all(|(_, e)| !e.retransmission));
    }

    #[test]
    fn idle_bucket_saturates() {
        let mut s = SenderState::new(cfg(), SimTime::ZERO);
        s.permits = 0.0;
        s.accrue(SimTime::from_secs(100));
        assert_eq!(s.permits, 2000.0);
    }

    #[test]
    fn fresh_header_and_rate_freshness() {
        let mut s = SenderState::new(cfg(), SimTime::ZERO);
        let h = s.sender_emit();
        assert_eq!((h.rp, h.fb, h.tc), (1000.0, 25_000.0, SimTime::from_millis(200)));
        let em = s.leaky_bucket_tick(SimTime::ZERO);
        s.on_ack(SimTime::from_millis(10), em[0].seq, -200.0).unwrap();
        assert_eq!(s.sender_emit().rp, 800.0);
    }

    #[test]
    fn duplicate_ack_does_not_move_rate() {
        let mut s = SenderState::new(cfg(), SimTime::ZERO);
        let em = s.leaky_bucket_tick(SimTime::ZERO);
        assert!(s.on_ack(SimTime::from_millis(5), em[0].seq, 100.0).is_some());
        assert!(s.on_ack(SimTime::from_millis(6), em[0].seq, 100.0).is_none());
        assert_eq!(s.rp, 1100.0);
    }

    #[test]
    fn timeout_retransmits_without_rate_change() {
        let mut s = SenderState::new(cfg(), SimTime::ZERO);
        let em = s.leaky_bucket_tick(SimTime::ZERO);
        let deadline = s.rto_deadline().unwrap();
        assert_eq!(deadline, SimTime::from_secs(1));
        assert_eq!(s.on_rto(deadline), 1);
        assert_eq!(s.rp, 1000.0);
        s.permits = 1000.0;
        let again = s.leaky_bucket_tick(deadline);
        assert_eq!(again[0].seq, em[0].seq);
        assert!(again[0].retransmission);
        // Karn: no RTT sample from a retransmitted packet.
        let out = s.on_ack(deadline + SimTime::from_millis(50), em[0].seq, 0.0).unwrap();
        assert_eq!(out.rtt_sample, None);
    }

    #[test]
    fn receiver_counts_unique() {
        let mut r = ReceiverState::default();
        assert!(r.on_data(1));
        assert!(r.on_data(0));
        assert!(!r.on_data(1));
        assert!(!r.on_data(0));
        assert!(r.on_data(2));
        assert_eq!(r.delivered_packets, 3);
    }

    proptest! {
        #[test]
        fn bucket_conformance(fbs in proptest::collection::vec(-3000.0f64..3000.0, 1..60), gap_ms in 1u64..300) {
            // ACKs arrive every gap_ms carrying random feedback; check every
            // window between two emissions against rp_max·W + depth.
            let mut s = SenderState::new(cfg(), SimTime::ZERO);
            let mut emissions: Vec<SimTime> = Vec::new();
            let mut now = SimTime::ZERO;
            let mut acks = fbs.into_iter();
            let mut next_ack = SimTime::from_millis(gap_ms);
            let end = SimTime::from_secs(20);
            while now <= end {
                for e in s.leaky_bucket_tick(now) {
                    emissions.push(now);
                    let _ = e;
                }
                let next_emit = s.next_emission_at(now);
                if next_ack <= next_emit {
                    now = next_ack;
                    if let Some(fb) = acks.next() {
                        if let Some(seq) = s.unacked.keys().next().copied() {
                            s.on_ack(now, seq, fb);
                        }
                    }
                    next_ack = now + SimTime::from_millis(gap_ms);
                } else {
                    now = next_emit;
                }
                prop_assert!(s.permits >= 0.0 && s.permits <= s.cfg.bucket_depth + 1e-9);
                prop_assert!(s.rp >= s.cfg.rp_min);
            }
            let p = s.cfg.packet_bytes as f64;
            let bound_rate = s.rp_max_seen;
            for i in 0..emissions.len() {
                for j in i..emissions.len() {
                    let w = (emissions[j] - emissions[i]).as_secs_f64();
                    let bytes = (j - i + 1) as f64 * p;
                    // The window [t_i, t_j] holds j-i+1 packets; the initial
                    // permit counts against the bucket depth.
                    prop_assert!(bytes <= bound_rate * w + s.cfg.bucket_depth + p * 1e-6 + 1e-6,
                        "window {}..{}: {} bytes > {}", i, j, bytes, bound_rate * w + s.cfg.bucket_depth);
                }
            }
        }
    }
}
