//! Simplified IEEE 802.11 DCF.
//!
//! [`MacNode`] holds one station's access state. It never touches the event
//! queue itself; the network layer asks it for deadlines and feeds it channel
//! and timer events. The node also measures its channel busyness ratio and the
//! average duration of a successful exchange.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::phy::{NodeId, ReceptionTracker};
use crate::sim::SimTime;

pub const MTU: u32 = 2304;
pub const DATA_HEADER_BYTES: u32 = 28;
pub const MACK_BYTES: u32 = 14;
pub const RTS_BYTES: u32 = 20;
pub const CTS_BYTES: u32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Mack,
    Rts,
    Cts,
}

#[derive(Debug, Clone)]
pub struct Frame<S> {
    pub kind: FrameKind,
    pub src: NodeId,
    pub dst: NodeId,
    /// NAV reservation for the remainder of the exchange.
    pub duration: SimTime,
    pub payload_bytes: u32,
    pub mac_seq: u64,
    pub segment: Option<S>,
}

impl<S> Frame<S> {
    pub fn data(src: NodeId, dst: NodeId, payload_bytes: u32, segment: S) -> Self {
        assert!(payload_bytes <= MTU, "payload {payload_bytes} exceeds MTU");
        Self {
            kind: FrameKind::Data,
            src,
            dst,
            duration: SimTime::ZERO,
            payload_bytes,
            mac_seq: 0,
            segment: Some(segment),
        }
    }

    pub fn control(kind: FrameKind, src: NodeId, dst: NodeId, duration: SimTime) -> Self {
        Self {
            kind,
            src,
            dst,
            duration,
            payload_bytes: 0,
            mac_seq: 0,
            segment: None,
        }
    }

    /// Bytes on the air, excluding PHY preamble.
    pub fn wire_bytes(&self) -> u32 {
        match self.kind {
            FrameKind::Data => DATA_HEADER_BYTES + self.payload_bytes,
            FrameKind::Mack => MACK_BYTES,
            FrameKind::Rts => RTS_BYTES,
            FrameKind::Cts => CTS_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcfParams {
    pub slot: SimTime,
    pub sifs: SimTime,
    pub difs: SimTime,
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub queue_cap: usize,
    pub rts_cts: bool,
    pub ewma_alpha: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            slot: SimTime::from_micros(20),
            sifs: SimTime::from_micros(10),
            difs: SimTime::from_micros(50),
            cw_min: 31,
            cw_max: 1023,
            retry_limit: 7,
            queue_cap: 50,
            rts_cts: false,
            ewma_alpha: 0.125,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.cw_min >= self.cw_max {
            return Err(format!("cw_min {} must be < cw_max {}", self.cw_min, self.cw_max));
        }
        if self.slot == SimTime::ZERO || self.sifs == SimTime::ZERO || self.difs == SimTime::ZERO {
            return Err("DCF durations must be positive".into());
        }
        if self.queue_cap == 0 {
            return Err("queue_cap must be positive".into());
        }
        Ok(())
    }

    /// Contention window after `k` consecutive failures.
    pub fn cw_after_failures(&self, k: u32) -> u32 {
        let grown = (self.cw_min as u64 + 1)
            .checked_shl(k)
            .map(|v| v - 1)
            .unwrap_or(u64::MAX);
        grown.min(self.cw_max as u64) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacPhase {
    /// Nothing to send.
    Idle,
    /// Frame pending, waiting for the medium to go idle.
    Defer,
    /// DIFS + backoff countdown running.
    Backoff,
    Transmitting,
    AwaitCts,
    AwaitMack,
}

/// Accumulates busy time over a control interval as the union of the
/// intervals in which the busy condition holds.
#[derive(Debug, Clone)]
pub struct BusynessAccumulator {
    pub interval_start: SimTime,
    pub busy_micros: u64,
    pub rb_last: f64,
    busy_since: Option<SimTime>,
}

impl BusynessAccumulator {
    pub fn new(start: SimTime) -> Self {
        Self {
            interval_start: start,
            busy_micros: 0,
            rb_last: 0.0,
            busy_since: None,
        }
    }

    /// Records the busy condition as of `now`. Repeated calls with the same
    /// state are no-ops, so overlapping causes are never double counted.
    pub fn busy_update(&mut self, now: SimTime, busy: bool) {
        match (busy, self.busy_since) {
            (true, None) => self.busy_since = Some(now.max(self.interval_start)),
            (false, Some(since)) => {
                self.busy_micros += now.saturating_sub(since).as_micros();
                self.busy_since = None;
            }
            _ => {}
        }
    }

    pub fn is_busy(&self) -> bool {
        self.busy_since.is_some()
    }

    /// Closes the interval ending at `now` and returns its busyness ratio.
    pub fn close_interval(&mut self, now: SimTime) -> f64 {
        if let Some(since) = self.busy_since {
            self.busy_micros += now.saturating_sub(since).as_micros();
            self.busy_since = Some(now);
        }
        let elapsed = now.saturating_sub(self.interval_start).as_micros();
        let rb = if elapsed == 0 {
            0.0
        } else {
            self.busy_micros as f64 / elapsed as f64
        };
        self.rb_last = rb;
        self.busy_micros = 0;
        self.interval_start = now;
        rb
    }
}

/// EWMA of successful exchange duration and payload airtime.
#[derive(Debug, Clone, Default)]
pub struct TsEstimator {
    pub ts_avg: Option<f64>,
    pub data_avg: Option<f64>,
    pub alpha: f64,
}

impl TsEstimator {
    pub fn new(alpha: f64) -> Self {
        Self {
            ts_avg: None,
            data_avg: None,
            alpha,
        }
    }

    pub fn record_success(&mut self, exchange: SimTime, payload_airtime: SimTime) {
        let ewma = |avg: Option<f64>, sample: f64| match avg {
            None => sample,
            Some(a) => (1.0 - self.alpha) * a + self.alpha * sample,
        };
        self.ts_avg = Some(ewma(self.ts_avg, exchange.as_micros() as f64));
        self.data_avg = Some(ewma(self.data_avg, payload_airtime.as_micros() as f64));
    }
}

/// Per-interval counters feeding the channel diagnostics.
#[derive(Debug, Clone, Default)]
pub struct AccessCounters {
    pub attempts: u64,
    pub failures: u64,
    pub success_airtime_us: u64,
    pub payload_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

/// Result of a failed exchange.
#[derive(Debug)]
pub enum FailureOutcome<S> {
    Retry,
    Dropped(Frame<S>),
}

pub struct MacNode<S> {
    pub id: NodeId,
    pub params: DcfParams,
    pub phase: MacPhase,
    pub cw: u32,
    pub backoff_remaining: u32,
    pub retries: u32,
    pub nav_until: SimTime,
    pub queue: VecDeque<Frame<S>>,
    pub rx: ReceptionTracker,
    pub busy: BusynessAccumulator,
    pub ts: TsEstimator,
    pub counters: AccessCounters,
    pub drops_queue: u64,
    pub drops_retry: u64,
    /// Pending control response (MACK or CTS) scheduled after SIFS.
    pub responding: bool,
    countdown_from: Option<SimTime>,
    attempt_start: SimTime,
    next_mac_seq: u64,
    last_seq_from: BTreeMap<NodeId, u64>,
    rng: ChaCha8Rng,
}

impl<S: Clone> MacNode<S> {
    pub fn new(id: NodeId, params: DcfParams, rng: ChaCha8Rng) -> Self {
        let alpha = params.ewma_alpha;
        Self {
            id,
            cw: params.cw_min,
            params,
            phase: MacPhase::Idle,
            backoff_remaining: 0,
            retries: 0,
            nav_until: SimTime::ZERO,
            queue: VecDeque::new(),
            rx: ReceptionTracker::default(),
            busy: BusynessAccumulator::new(SimTime::ZERO),
            ts: TsEstimator::new(alpha),
            counters: AccessCounters::default(),
            drops_queue: 0,
            drops_retry: 0,
            responding: false,
            countdown_from: None,
            attempt_start: SimTime::ZERO,
            next_mac_seq: 0,
            last_seq_from: BTreeMap::new(),
            rng,
        }
    }

    /// Tail-drop enqueue.
    pub fn enqueue(&mut self, mut frame: Frame<S>) -> EnqueueOutcome {
        if self.queue.len() >= self.params.queue_cap {
            self.drops_queue += 1;
            return EnqueueOutcome::Dropped;
        }
        frame.mac_seq = self.next_mac_seq;
        self.next_mac_seq += 1;
        self.queue.push_back(frame);
        if self.phase == MacPhase::Idle {
            self.draw_backoff();
            self.phase = MacPhase::Defer;
        }
        EnqueueOutcome::Accepted
    }

    fn draw_backoff(&mut self) {
        self.backoff_remaining = self.rng.gen_range(0..=self.cw);
    }

    /// Physical or virtual carrier sense.
    pub fn medium_busy(&self, now: SimTime) -> bool {
        self.rx.is_transmitting() || self.rx.energy_count() > 0 || self.nav_until > now
    }

    /// Condition counted toward the busyness ratio.
    pub fn busy_condition(&self, now: SimTime, include_energy: bool) -> bool {
        let sensed = if include_energy {
            self.rx.energy_count() > 0
        } else {
            self.rx.is_receiving()
        };
        self.rx.is_transmitting() || sensed || self.nav_until > now
    }

    pub fn refresh_busy(&mut self, now: SimTime, include_energy: bool) {
        let b = self.busy_condition(now, include_energy);
        self.busy.busy_update(now, b);
    }

    /// Starts the DIFS + backoff countdown if the node has a frame and the
    /// medium is idle. Returns the time at which the countdown expires.
    pub fn start_countdown(&mut self, now: SimTime) -> Option<SimTime> {
        if self.phase != MacPhase::Defer || self.responding || self.medium_busy(now) {
            return None;
        }
        let from = now + self.params.difs;
        self.countdown_from = Some(from);
        self.phase = MacPhase::Backoff;
        Some(from + SimTime::from_micros(self.backoff_remaining as u64 * self.params.slot.as_micros()))
    }

    /// Medium went busy: freeze the countdown, keeping whole slots already
    /// elapsed. Returns true if a countdown was running (its timer must be
    /// cancelled).
    pub fn freeze(&mut self, now: SimTime) -> bool {
        if self.phase != MacPhase::Backoff {
            return false;
        }
        let from = self.countdown_from.take().expect("countdown running");
        if now > from {
            let slots = ((now - from).as_micros() / self.params.slot.as_micros()) as u32;
            self.backoff_remaining -= slots.min(self.backoff_remaining);
        }
        self.phase = MacPhase::Defer;
        true
    }

    /// Countdown reached zero: returns the frame to put on the air (RTS when
    /// enabled, otherwise the head DATA frame).
    pub fn countdown_expired(&mut self, now: SimTime, mack_airtime: SimTime, rts_extra: SimTime) -> Frame<S> {
        assert_eq!(self.phase, MacPhase::Backoff, "countdown expired outside backoff");
        self.countdown_from = None;
        self.backoff_remaining = 0;
        self.phase = MacPhase::Transmitting;
        self.attempt_start = now;
        self.counters.attempts += 1;
        let head = self.queue.front().expect("backoff without frame");
        let data_nav = self.params.sifs + mack_airtime;
        if self.params.rts_cts {
            Frame::control(FrameKind::Rts, self.id, head.dst, rts_extra + data_nav)
        } else {
            let mut f = head.clone();
            f.duration = data_nav;
            f
        }
    }

    /// DATA frame for the second half of an RTS/CTS exchange.
    pub fn data_after_cts(&mut self, mack_airtime: SimTime) -> Frame<S> {
        assert_eq!(self.phase, MacPhase::AwaitCts);
        self.phase = MacPhase::Transmitting;
        let mut f = self.queue.front().expect("cts without frame").clone();
        f.duration = self.params.sifs + mack_airtime;
        f
    }

    pub fn tx_finished(&mut self, kind: FrameKind) {
        match kind {
            FrameKind::Rts => self.phase = MacPhase::AwaitCts,
            FrameKind::Data => self.phase = MacPhase::AwaitMack,
            FrameKind::Mack | FrameKind::Cts => {}
        }
    }

    /// MACK received for the head frame.
    pub fn mack_received(&mut self, now: SimTime, payload_airtime: SimTime) -> Frame<S> {
        assert_eq!(self.phase, MacPhase::AwaitMack, "unexpected MACK");
        let frame = self.queue.pop_front().expect("acked frame");
        let exchange = now - self.attempt_start + self.params.difs;
        self.ts.record_success(exchange, payload_airtime);
        self.counters.success_airtime_us += exchange.as_micros();
        self.counters.payload_bits += frame.payload_bytes as u64 * 8;
        self.cw = self.params.cw_min;
        self.retries = 0;
        self.next_head();
        frame
    }

    /// CTS or MACK never arrived.
    pub fn exchange_failed(&mut self) -> FailureOutcome<S> {
        assert!(
            matches!(self.phase, MacPhase::AwaitMack | MacPhase::AwaitCts),
            "failure outside an exchange"
        );
        self.counters.failures += 1;
        if self.retries >= self.params.retry_limit {
            let frame = self.queue.pop_front().expect("failed frame");
            self.drops_retry += 1;
            self.cw = self.params.cw_min;
            self.retries = 0;
            self.next_head();
            return FailureOutcome::Dropped(frame);
        }
        self.retries += 1;
        self.cw = (2 * (self.cw + 1) - 1).min(self.params.cw_max);
        self.draw_backoff();
        self.phase = MacPhase::Defer;
        FailureOutcome::Retry
    }

    fn next_head(&mut self) {
        if self.queue.is_empty() {
            self.phase = MacPhase::Idle;
        } else {
            self.draw_backoff();
            self.phase = MacPhase::Defer;
        }
    }

    /// Duplicate filter for retransmitted DATA whose MACK was lost.
    pub fn accept_data(&mut self, from: NodeId, mac_seq: u64) -> bool {
        match self.last_seq_from.get(&from) {
            Some(&s) if s >= mac_seq => false,
            _ => {
                self.last_seq_from.insert(from, mac_seq);
                true
            }
        }
    }

    pub fn set_nav(&mut self, until: SimTime) -> bool {
        if until > self.nav_until {
            self.nav_until = until;
            true
        } else {
            false
        }
    }

    /// Current cw matches the doubling law for the current retry count.
    pub fn cw_law_holds(&self) -> bool {
        self.cw == self.params.cw_after_failures(self.retries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RandomSource;

    fn node() -> MacNode<u32> {
        MacNode::new(0, DcfParams::default(), RandomSource::new(1).node_stream(0))
    }

    fn us(v: u64) -> SimTime {
        SimTime::from_micros(v)
    }

    #[test]
    fn enqueue_tail_drops_at_capacity() {
        let mut n = node();
        assert_eq!(n.enqueue(Frame::data(0, 1, 100, 0)), EnqueueOutcome::Accepted);
        for i in 1..50 {
            assert_eq!(n.enqueue(Frame::data(0, 1, 100, i)), EnqueueOutcome::Accepted);
        }
        assert_eq!(n.enqueue(Frame::data(0, 1, 100, 50)), EnqueueOutcome::Dropped);
        assert_eq!(n.queue.len(), 50);
        assert_eq!(n.drops_queue, 1);
    }

    #[test]
    fn countdown_freezes_on_busy_and_keeps_elapsed_slots() {
        let mut n = node();
        n.enqueue(Frame::data(0, 1, 100, 0));
        n.backoff_remaining = 10;
        let fire = n.start_countdown(us(0)).unwrap();
        assert_eq!(fire, us(50 + 200));
        // 3 whole slots and part of a 4th elapse before the medium goes busy.
        assert!(n.freeze(us(50 + 70)));
        assert_eq!(n.backoff_remaining, 7);
        assert_eq!(n.phase, MacPhase::Defer);
        // Busy during DIFS consumes nothing.
        n.start_countdown(us(1000)).unwrap();
        n.freeze(us(1040));
        assert_eq!(n.backoff_remaining, 7);
    }

    #[test]
    fn no_countdown_while_nav_active() {
        let mut n = node();
        n.enqueue(Frame::data(0, 1, 100, 0));
        n.set_nav(us(500));
        assert!(n.start_countdown(us(100)).is_none());
        assert!(n.start_countdown(us(500)).is_some());
    }

    #[test]
    fn cw_doubles_then_resets() {
        let mut n = node();
        n.enqueue(Frame::data(0, 1, 100, 0));
        let expect = [63, 127, 255, 511, 1023, 1023, 1023];
        for (k, want) in expect.iter().enumerate() {
            n.start_countdown(us(0));
            n.countdown_expired(us(0), us(248), SimTime::ZERO);
            n.tx_finished(FrameKind::Data);
            assert!(matches!(n.exchange_failed(), FailureOutcome::Retry));
            assert_eq!(n.cw, *want, "after {} failures", k + 1);
            assert!(n.cw_law_holds());
        }
        // 8th consecutive failure with retry_limit 7 drops the frame.
        n.start_countdown(us(0));
        n.countdown_expired(us(0), us(248), SimTime::ZERO);
        n.tx_finished(FrameKind::Data);
        assert!(matches!(n.exchange_failed(), FailureOutcome::Dropped(_)));
        assert_eq!(n.cw, 31);
        assert_eq!(n.phase, MacPhase::Idle);
        assert_eq!(n.drops_retry, 1);
    }

    #[test]
    fn success_resets_cw() {
        let mut n = node();
        n.enqueue(Frame::data(0, 1, 100, 0));
        n.enqueue(Frame::data(0, 1, 100, 1));
        n.start_countdown(us(0));
        n.countdown_expired(us(0), us(248), SimTime::ZERO);
        n.tx_finished(FrameKind::Data);
        n.exchange_failed();
        assert_eq!(n.cw, 63);
        n.start_countdown(us(0));
        n.countdown_expired(us(0), us(248), SimTime::ZERO);
        n.tx_finished(FrameKind::Data);
        let f = n.mack_received(us(5000), us(400));
        assert_eq!(f.segment, Some(0));
        assert_eq!(n.cw, 31);
        assert_eq!(n.retries, 0);
        assert_eq!(n.phase, MacPhase::Defer);
    }

    #[test]
    fn cw_law_closed_form() {
        let p = DcfParams::default();
        assert_eq!(p.cw_after_failures(0), 31);
        assert_eq!(p.cw_after_failures(1), 63);
        assert_eq!(p.cw_after_failures(5), 1023);
        assert_eq!(p.cw_after_failures(40), 1023);
    }

    #[test]
    fn busy_idle_interval_is_zero() {
        let mut b = BusynessAccumulator::new(SimTime::ZERO);
        assert_eq!(b.close_interval(SimTime::from_millis(200)), 0.0);
    }

    #[test]
    fn busy_full_interval_is_one() {
        let mut b = BusynessAccumulator::new(SimTime::ZERO);
        b.busy_update(SimTime::ZERO, true);
        assert_eq!(b.close_interval(SimTime::from_millis(200)), 1.0);
        // Still busy: carries into the next interval.
        assert_eq!(b.close_interval(SimTime::from_millis(400)), 1.0);
    }

    #[test]
    fn busy_forty_of_two_hundred() {
        let mut b = BusynessAccumulator::new(SimTime::ZERO);
        b.busy_update(SimTime::from_millis(10), true);
        b.busy_update(SimTime::from_millis(50), false);
        assert_eq!(b.busy_micros, 40_000);
        assert!((b.close_interval(SimTime::from_millis(200)) - 0.2).abs() < 1e-12);
        assert_eq!(b.busy_micros, 0);
    }

    #[test]
    fn overlapping_causes_counted_once() {
        // NAV 10..20 ms overlapping reception 10..20 ms: both keep the
        // condition true, and the accumulator only sees the union.
        let mut n = node();
        n.set_nav(SimTime::from_millis(20));
        n.rx.energy_start(1, true);
        n.refresh_busy(SimTime::from_millis(10), true);
        n.refresh_busy(SimTime::from_millis(15), true);
        n.rx.energy_end(1);
        n.refresh_busy(SimTime::from_millis(20), true);
        assert_eq!(n.busy.busy_micros, 10_000);
    }

    #[test]
    fn ts_estimator_ewma() {
        let mut t = TsEstimator::new(0.125);
        t.record_success(us(2000), us(1000));
        assert_eq!(t.ts_avg, Some(2000.0));
        t.record_success(us(4000), us(1000));
        assert_eq!(t.ts_avg, Some(2250.0));
        for _ in 0..400 {
            t.record_success(us(3000), us(1000));
        }
        assert!((t.ts_avg.unwrap() - 3000.0).abs() < 1e-6);
        assert_eq!(t.data_avg, Some(1000.0));
    }

    #[test]
    fn duplicate_data_is_filtered() {
        let mut n = node();
        assert!(n.accept_data(3, 0));
        assert!(!n.accept_data(3, 0));
        assert!(n.accept_data(3, 1));
        assert!(n.accept_data(4, 0));
    }
}
