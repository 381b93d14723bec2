//! Per-node resource allocation and feedback computation.
//!
//! Each node measures its busyness ratio `rb` over a control interval and
//! derives how much its total traffic `S` should change so that `rb` lands on
//! the threshold `thb` next interval. The change is handed out to passing
//! packets as per-packet feedback until the interval's budget is spent.

use std::collections::BTreeMap;

use crate::phy::NodeId;
use crate::sim::SimTime;

use super::header::CongestionHeader;

/// Available bandwidth in bytes/second for a node below threshold.
///
/// `bitrate` is in bits/second; `data_avg` and `ts_avg` are average payload
/// airtime and average successful exchange time in the same unit.
pub fn compute_available_bandwidth(rb: f64, thb: f64, bitrate: u64, data_avg: f64, ts_avg: f64) -> f64 {
    if rb >= thb || ts_avg <= 0.0 {
        return 0.0;
    }
    bitrate as f64 / 8.0 * (thb - rb) * data_avg / ts_avg
}

/// Signed traffic change (bytes) that moves `rb` onto `thb`, proportional to
/// current traffic `s_bytes`. The same linear law applies above threshold.
pub fn compute_delta_s(rb: f64, thb: f64, s_bytes: f64) -> f64 {
    if rb <= 0.0 {
        // No busy time means no traffic to scale.
        return 0.0;
    }
    (thb - rb) / rb * s_bytes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwarderParams {
    pub thb: f64,
    pub t_c: SimTime,
    /// Payload size assumed for a flow before any packet of it is seen.
    pub default_payload: f64,
    pub payload_alpha: f64,
}

impl Default for ForwarderParams {
    fn default() -> Self {
        Self {
            thb: 0.5,
            t_c: SimTime::from_millis(200),
            default_payload: 1000.0,
            payload_alpha: 0.125,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwarderState {
    pub params: ForwarderParams,
    pub s_bytes: f64,
    pub j_accum: f64,
    pub k_count: u64,
    /// J of the last closed interval, used to apportion increases.
    pub j_prev: f64,
    pub k_prev: u64,
    pub delta_s: f64,
    /// Aggregate rate change (bytes/second) this node may hand out.
    pub budget: f64,
    /// Cumulative signed feedback handed out this interval.
    pub granted: f64,
    pub granted_abs: f64,
    pub max_grant_abs: f64,
    pub rb_last: f64,
    payload_avg: BTreeMap<(NodeId, NodeId), f64>,
}

impl ForwarderState {
    pub fn new(params: ForwarderParams) -> Self {
        Self {
            params,
            s_bytes: 0.0,
            j_accum: 0.0,
            k_count: 0,
            j_prev: 0.0,
            k_prev: 0,
            delta_s: 0.0,
            budget: 0.0,
            granted: 0.0,
            granted_abs: 0.0,
            max_grant_abs: 0.0,
            rb_last: 0.0,
            payload_avg: BTreeMap::new(),
        }
    }

    fn t_c_secs(&self) -> f64 {
        self.params.t_c.as_secs_f64()
    }

    fn flow_payload(&self, flow: (NodeId, NodeId)) -> f64 {
        self.payload_avg
            .get(&flow)
            .copied()
            .unwrap_or(self.params.default_payload)
    }

    /// Packet rate (packets/second) of the flow a header belongs to.
    fn packet_rate(&self, header: &CongestionHeader, flow: (NodeId, NodeId)) -> f64 {
        header.rp / self.flow_payload(flow)
    }

    /// Accounts one observation of a data packet. Transit packets are
    /// observed once on the way in and once on the way out, so a transit
    /// flow contributes two to `J`.
    pub fn accumulate_packet(
        &mut self,
        header: &CongestionHeader,
        flow: (NodeId, NodeId),
        _direction: Direction,
        payload_bytes: u32,
    ) {
        debug_assert!(header.rp > 0.0 && header.tc > SimTime::ZERO);
        let alpha = self.params.payload_alpha;
        self.payload_avg
            .entry(flow)
            .and_modify(|avg| *avg = (1.0 - alpha) * *avg + alpha * payload_bytes as f64)
            .or_insert(payload_bytes as f64);
        self.s_bytes += payload_bytes as f64;
        self.k_count += 1;
        let r_pk = self.packet_rate(header, flow);
        if r_pk > 0.0 {
            self.j_accum += 1.0 / (r_pk * self.t_c_secs());
        }
    }

    /// Traffic that carries no congestion header (ACKs) still occupies the
    /// channel and counts toward `S`.
    pub fn accumulate_bytes(&mut self, bytes: u32) {
        self.s_bytes += bytes as f64;
    }

    /// Starts a new control interval from the busyness measured over the one
    /// that just closed.
    pub fn open_interval(&mut self, rb: f64) {
        self.rb_last = rb;
        self.delta_s = compute_delta_s(rb, self.params.thb, self.s_bytes);
        self.budget = self.delta_s / self.t_c_secs();
        self.j_prev = self.j_accum;
        self.k_prev = self.k_count;
        self.s_bytes = 0.0;
        self.j_accum = 0.0;
        self.k_count = 0;
        self.granted = 0.0;
        self.granted_abs = 0.0;
        self.max_grant_abs = 0.0;
    }

    /// Unclamped per-packet offer.
    pub fn raw_feedback(&self, header: &CongestionHeader, flow: (NodeId, NodeId)) -> f64 {
        let tc = self.t_c_secs();
        if self.delta_s >= 0.0 {
            if self.j_prev <= 0.0 {
                return 0.0;
            }
            let r_pk = self.packet_rate(header, flow);
            if r_pk <= 0.0 {
                return 0.0;
            }
            // Equal increase per flow: C_p is handed out in r_pk·t_c slices.
            let c_p = self.delta_s / (tc * self.j_prev);
            c_p / (r_pk * tc)
        } else {
            if self.k_prev == 0 {
                return 0.0;
            }
            // Equal decrease per packet, so per flow in proportion to rate.
            self.delta_s / (tc * self.k_prev as f64)
        }
    }

    /// Local feedback for one packet, clamped to what is left of the budget.
    /// The budget is charged whether or not the offer ends up in the header.
    pub fn packet_feedback(&mut self, header: &CongestionHeader, flow: (NodeId, NodeId)) -> f64 {
        let raw = self.raw_feedback(header, flow);
        let mut remaining = self.budget - self.granted;
        if remaining.abs() <= 1e-9 * self.budget.abs() {
            remaining = 0.0;
        }
        let f = if self.budget >= 0.0 {
            raw.min(remaining).max(0.0)
        } else {
            raw.max(remaining).min(0.0)
        };
        self.granted += f;
        self.granted_abs += f.abs();
        self.max_grant_abs = self.max_grant_abs.max(f.abs());
        f
    }

    /// Sum of |grants| stays within |budget| plus one grant.
    pub fn budget_rule_holds(&self) -> bool {
        self.granted_abs <= self.budget.abs() + self.max_grant_abs + 1e-9 * self.budget.abs().max(1.0)
    }
}

/// Channel diagnostics for one interval: utilization by successful
/// exchanges, collision probability and normalized payload throughput.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelStats {
    pub cu: f64,
    pub p_coll: f64,
    pub s_norm: f64,
}

impl ChannelStats {
    pub fn from_counters(counters: &crate::mac::AccessCounters, interval: SimTime, bitrate: u64) -> Self {
        let span = interval.as_micros() as f64;
        if span <= 0.0 {
            return Self::default();
        }
        let cu = (counters.success_airtime_us as f64 / span).clamp(0.0, 1.0);
        let p_coll = if counters.attempts == 0 {
            0.0
        } else {
            (counters.failures as f64 / counters.attempts as f64).clamp(0.0, 1.0)
        };
        let s_norm = (counters.payload_bits as f64 / (bitrate as f64 * span / 1e6)).clamp(0.0, 1.0);
        Self { cu, p_coll, s_norm }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOW: (NodeId, NodeId) = (1, 9);

    fn hdr(rp: f64) -> CongestionHeader {
        CongestionHeader {
            rp,
            tc: SimTime::from_millis(200),
            fb: 25_000.0,
        }
    }

    fn fwd(thb: f64) -> ForwarderState {
        ForwarderState::new(ForwarderParams {
            thb,
            ..Default::default()
        })
    }

    #[test]
    fn available_bandwidth_hand_values() {
        assert_eq!(compute_available_bandwidth(0.92, 0.92, 2_000_000, 4000.0, 5000.0), 0.0);
        let bw = compute_available_bandwidth(0.52, 0.92, 2_000_000, 4000.0, 5000.0);
        assert!((bw - 80_000.0).abs() < 1e-6);
        let half = compute_available_bandwidth(0.52, 0.92, 2_000_000, 4000.0, 10_000.0);
        assert!((half - 40_000.0).abs() < 1e-6);
    }

    #[test]
    fn delta_s_hand_values() {
        assert_eq!(compute_delta_s(0.9, 0.9, 1234.0), 0.0);
        assert!((compute_delta_s(0.6, 0.9, 600.0) - 300.0).abs() < 1e-9);
        let dec = compute_delta_s(0.95, 0.9, 1000.0);
        assert!((dec - (-52.63)).abs() < 0.005);
        assert_eq!(compute_delta_s(0.0, 0.9, 0.0), 0.0);
    }

    #[test]
    fn originating_flow_counts_once() {
        // 10 pkt/s at 1000 B packets, t_c 0.2 s: two packets in the interval.
        let mut f = fwd(0.9);
        for _ in 0..2 {
            f.accumulate_packet(&hdr(10_000.0), FLOW, Direction::Outgoing, 1000);
        }
        assert!((f.j_accum - 1.0).abs() < 1e-12);
        assert_eq!(f.s_bytes, 2000.0);
    }

    #[test]
    fn transit_flow_counts_twice() {
        let mut f = fwd(0.9);
        for _ in 0..2 {
            f.accumulate_packet(&hdr(10_000.0), FLOW, Direction::Incoming, 1000);
            f.accumulate_packet(&hdr(10_000.0), FLOW, Direction::Outgoing, 1000);
        }
        assert!((f.j_accum - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_interval() {
        let mut f = fwd(0.9);
        f.open_interval(0.3);
        assert_eq!((f.j_prev, f.s_bytes, f.budget), (0.0, 0.0, 0.0));
    }

    #[test]
    fn open_interval_sets_budget() {
        let mut f = fwd(0.9);
        f.s_bytes = 600.0;
        f.open_interval(0.6);
        assert!((f.delta_s - 300.0).abs() < 1e-9);
        assert!((f.budget - 1500.0).abs() < 1e-9);
        assert_eq!(f.s_bytes, 0.0);

        let mut at = fwd(0.9);
        at.s_bytes = 600.0;
        at.open_interval(0.9);
        assert_eq!(at.budget, 0.0);
        assert_eq!(at.packet_feedback(&hdr(10_000.0), FLOW), 0.0);
    }

    #[test]
    fn positive_feedback_equal_per_flow() {
        // delta_s +300 B, t_c 0.2 s, J 3, r_pk 10 pkt/s -> 250 B/s per packet
        let mut f = fwd(0.9);
        f.delta_s = 300.0;
        f.budget = 1500.0;
        f.j_prev = 3.0;
        assert!((f.raw_feedback(&hdr(10_000.0), FLOW) - 250.0).abs() < 1e-9);
        assert!((f.packet_feedback(&hdr(10_000.0), FLOW) - 250.0).abs() < 1e-9);
    }

    #[test]
    fn negative_feedback_equal_per_packet() {
        let mut f = fwd(0.9);
        f.delta_s = -40.0;
        f.budget = -200.0;
        f.k_prev = 20;
        assert!((f.packet_feedback(&hdr(10_000.0), FLOW) - (-10.0)).abs() < 1e-9);
    }

    #[test]
    fn exhausted_budget_gives_zero() {
        let mut f = fwd(0.9);
        f.delta_s = 300.0;
        f.budget = 1500.0;
        f.j_prev = 3.0;
        let mut total = 0.0;
        for _ in 0..6 {
            total += f.packet_feedback(&hdr(10_000.0), FLOW);
        }
        assert!((total - 1500.0).abs() < 1e-9);
        assert_eq!(f.packet_feedback(&hdr(10_000.0), FLOW), 0.0);
        assert_eq!(f.packet_feedback(&hdr(1.0), (2, 3)), 0.0);
        assert!(f.budget_rule_holds());
    }

    #[test]
    fn no_basis_to_apportion() {
        let mut f = fwd(0.9);
        f.delta_s = 300.0;
        f.budget = 1500.0;
        assert_eq!(f.packet_feedback(&hdr(10_000.0), FLOW), 0.0);
        f.delta_s = -300.0;
        f.budget = -1500.0;
        assert_eq!(f.packet_feedback(&hdr(10_000.0), FLOW), 0.0);
    }

    #[test]
    fn channel_stats_bounds() {
        let c = crate::mac::AccessCounters {
            attempts: 10,
            failures: 2,
            success_airtime_us: 100_000,
            payload_bits: 200_000,
        };
        let s = ChannelStats::from_counters(&c, SimTime::from_millis(200), 2_000_000);
        assert!((s.cu - 0.5).abs() < 1e-12);
        assert!((s.p_coll - 0.2).abs() < 1e-12);
        assert!((s.s_norm - 0.5).abs() < 1e-12);
    }
}
