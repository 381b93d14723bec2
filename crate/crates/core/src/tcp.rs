//! TCP Reno baseline: slow start, congestion avoidance, fast retransmit and
//! fast recovery over a byte-sequenced, always-backlogged connection.

use std::collections::BTreeMap;

use crate::rtt::{backed_off, RttEstimator};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpPhase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

/// Window arithmetic and phase of a Reno sender.
#[derive(Debug, Clone)]
pub struct TcpState {
    pub cwnd: f64,
    pub ssthresh: f64,
    pub mss: u32,
    pub phase: TcpPhase,
    pub dup_acks: u32,
    pub rtt: RttEstimator,
    pub rto_backoff: u32,
    pub snd_nxt: u64,
    pub snd_una: u64,
    pub rwnd: u64,
}

/// What the connection should do after a duplicate ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DupAckAction {
    None,
    FastRetransmit,
}

impl TcpState {
    pub fn new(mss: u32) -> Self {
        Self {
            cwnd: mss as f64,
            ssthresh: 64.0 * 1024.0,
            mss,
            phase: TcpPhase::SlowStart,
            dup_acks: 0,
            rtt: RttEstimator::default(),
            rto_backoff: 0,
            snd_nxt: 0,
            snd_una: 0,
            rwnd: u64::MAX,
        }
    }

    fn mss_f(&self) -> f64 {
        self.mss as f64
    }

    pub fn flight(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    fn halve_flight(&self) -> f64 {
        (self.flight() as f64 / 2.0).max(2.0 * self.mss_f())
    }

    /// ACK that advances `snd_una` by `acked_bytes`.
    pub fn on_new_ack(&mut self, acked_bytes: u64) {
        self.snd_una += acked_bytes;
        self.snd_nxt = self.snd_nxt.max(self.snd_una);
        self.dup_acks = 0;
        self.rto_backoff = 0;
        let mss = self.mss_f();
        match self.phase {
            TcpPhase::FastRecovery => {
                self.cwnd = self.ssthresh;
                self.phase = TcpPhase::CongestionAvoidance;
            }
            TcpPhase::SlowStart => {
                self.cwnd += mss;
                if self.cwnd >= self.ssthresh {
                    self.phase = TcpPhase::CongestionAvoidance;
                }
            }
            TcpPhase::CongestionAvoidance => {
                self.cwnd += mss * mss / self.cwnd;
            }
        }
    }

    /// Retransmission timer fired for `snd_una`. The caller resends from
    /// `snd_una` (go-back-N).
    pub fn on_timeout(&mut self) {
        self.ssthresh = self.halve_flight();
        self.cwnd = self.mss_f();
        self.phase = TcpPhase::SlowStart;
        self.dup_acks = 0;
        self.rto_backoff = (self.rto_backoff + 1).min(16);
        self.snd_nxt = self.snd_una;
    }

    pub fn on_dup_ack(&mut self) -> DupAckAction {
        self.dup_acks += 1;
        match (self.phase, self.dup_acks) {
            (TcpPhase::FastRecovery, _) => {
                self.cwnd += self.mss_f();
                DupAckAction::None
            }
            (_, 3) => {
                self.ssthresh = self.halve_flight();
                self.cwnd = self.ssthresh + 3.0 * self.mss_f();
                self.phase = TcpPhase::FastRecovery;
                DupAckAction::FastRetransmit
            }
            _ => DupAckAction::None,
        }
    }

    /// Bytes that may still be put in flight.
    pub fn send_window(&self) -> u64 {
        let wnd = (self.cwnd.floor() as u64).min(self.rwnd);
        wnd.saturating_sub(self.flight())
    }

    pub fn rto(&self) -> SimTime {
        backed_off(self.rtt.rto(), self.rto_backoff)
    }
}

/// A segment the connection wants to put on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub seq: u64,
    pub len: u32,
    pub retransmission: bool,
}

/// Always-backlogged Reno sender.
#[derive(Debug, Clone)]
pub struct TcpSender {
    pub state: TcpState,
    pub retransmissions: u64,
    high_water: u64,
    /// seq -> (sent_at, was retransmitted)
    sent: BTreeMap<u64, (SimTime, bool)>,
    /// When the retransmission timer was last (re)armed.
    timer_base: Option<SimTime>,
}

/// Outcome of an incoming ACK at the sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpAckOutcome {
    pub rtt_sample: Option<SimTime>,
    pub fast_retransmit: Option<Segment>,
}

impl TcpSender {
    pub fn new(mss: u32) -> Self {
        Self {
            state: TcpState::new(mss),
            retransmissions: 0,
            high_water: 0,
            sent: BTreeMap::new(),
            timer_base: None,
        }
    }

    /// Next segment the window allows, if any.
    pub fn next_segment(&mut self, now: SimTime) -> Option<Segment> {
        let mss = self.state.mss;
        if self.state.send_window() < mss as u64 {
            return None;
        }
        let seq = self.state.snd_nxt;
        let retransmission = seq < self.high_water;
        self.state.snd_nxt += mss as u64;
        self.high_water = self.high_water.max(self.state.snd_nxt);
        if retransmission {
            self.retransmissions += 1;
        }
        self.sent.insert(seq, (now, retransmission));
        if self.timer_base.is_none() {
            self.timer_base = Some(now);
        }
        Some(Segment {
            seq,
            len: mss,
            retransmission,
        })
    }

    /// Handles a cumulative ACK number.
    pub fn on_ack(&mut self, now: SimTime, ack: u64) -> TcpAckOutcome {
        let st = &mut self.state;
        if ack > st.snd_una {
            // Karn: only sample from the segment just below the ACK point if
            // it was never retransmitted.
            let mut rtt_sample = None;
            if let Some((&seq, &(sent_at, retx))) = self.sent.range(..ack).next_back() {
                if !retx && seq + st.mss as u64 == ack {
                    rtt_sample = Some(now - sent_at);
                }
            }
            if let Some(r) = rtt_sample {
                st.rtt.sample(r);
            }
            let acked = ack - st.snd_una;
            st.on_new_ack(acked);
            self.sent = self.sent.split_off(&ack);
            self.timer_base = if st.flight() > 0 { Some(now) } else { None };
            TcpAckOutcome {
                rtt_sample,
                fast_retransmit: None,
            }
        } else if ack == st.snd_una && st.flight() > 0 {
            let fast_retransmit = match st.on_dup_ack() {
                DupAckAction::FastRetransmit => {
                    let seq = st.snd_una;
                    let len = st.mss;
                    self.sent.insert(seq, (now, true));
                    self.retransmissions += 1;
                    Some(Segment {
                        seq,
                        len,
                        retransmission: true,
                    })
                }
                DupAckAction::None => None,
            };
            TcpAckOutcome {
                rtt_sample: None,
                fast_retransmit,
            }
        } else {
            TcpAckOutcome {
                rtt_sample: None,
                fast_retransmit: None,
            }
        }
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.timer_base.map(|t| t + self.state.rto())
    }

    pub fn on_timeout(&mut self, now: SimTime) {
        self.state.on_timeout();
        self.timer_base = Some(now);
    }
}

/// Cumulative-ACK receiver with an out-of-order buffer.
#[derive(Debug, Clone, Default)]
pub struct TcpReceiver {
    pub rcv_nxt: u64,
    ooo: BTreeMap<u64, u32>,
}

impl TcpReceiver {
    /// Accepts a segment and returns `(ack number, newly in-order bytes)`.
    pub fn on_segment(&mut self, seq: u64, len: u32) -> (u64, u64) {
        let before = self.rcv_nxt;
        if seq + len as u64 > self.rcv_nxt {
            if seq <= self.rcv_nxt {
                self.rcv_nxt = seq + len as u64;
            } else {
                let e = self.ooo.entry(seq).or_insert(len);
                *e = (*e).max(len);
            }
        }
        while let Some((&s, &l)) = self.ooo.iter().next() {
            if s > self.rcv_nxt {
                break;
            }
            self.ooo.remove(&s);
            self.rcv_nxt = self.rcv_nxt.max(s + l as u64);
        }
        (self.rcv_nxt, self.rcv_nxt - before)
    }
}
