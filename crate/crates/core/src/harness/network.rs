//! The simulated network: nodes on a chain, each with a DCF MAC, a WCCP
//! forwarder shim and static routing, plus the flow endpoints.
//!
//! Every state change happens inside [`Network::handle`], called once per
//! event in `(time, seq)` order. Run-time invariant checks record the first
//! violation and stop the run.

use std::collections::{BTreeMap, VecDeque};

use crate::error::SimError;
use crate::mac::{EnqueueOutcome, FailureOutcome, Frame, FrameKind, MacNode, CTS_BYTES, MACK_BYTES};
use crate::phy::{NodeId, Reach};
use crate::sim::{Event, EventId, EventQueue, RandomSource, SimTime, Target};
use crate::tcp::{Segment, TcpReceiver, TcpSender};
use crate::wccp::{
    overwrite_feedback, ChannelStats, CongestionHeader, Direction, ForwarderParams,
    ForwarderState, ReceiverState, SenderConfig, SenderState,
};

use super::config::RunConfig;
use super::metrics::{jain_index, BusySample, FlowMetrics, RunMetrics, BIN};
use super::scenario::{ScenarioSpec, Transport};
use super::topology::{build_chain, Topology};

pub const IP_HEADER_BYTES: u32 = 20;
pub const TCP_HEADER_BYTES: u32 = 20;
/// Ports and sequence number ahead of the congestion header.
pub const WCCP_BASE_BYTES: u32 = 8;

#[derive(Debug, Clone)]
pub struct Packet {
    pub flow: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: u32,
    pub body: Body,
}

#[derive(Debug, Clone)]
pub enum Body {
    TcpData(Segment),
    TcpAck(u64),
    WccpData { seq: u64, header: CongestionHeader },
    WccpAck { seq: u64, header: CongestionHeader },
}

#[derive(Debug, Clone)]
enum Ev {
    FlowStart(usize),
    EnergyStart(u64),
    EnergyEnd(u64),
    TxEnd(u64),
    Countdown,
    NavEnd,
    Respond,
    ExchangeTimeout,
    DataAfterCts,
    IntervalTick,
    Bucket(usize),
    Rto(usize),
}

struct ActiveTx {
    sender: NodeId,
    frame: Frame<Packet>,
    refs: usize,
}

struct Node {
    mac: MacNode<Packet>,
    countdown: Option<EventId>,
    exchange_timer: Option<EventId>,
    response: Option<Frame<Packet>>,
    fwd: ForwarderState,
    neighbors: Vec<(NodeId, Reach)>,
    stats: ChannelStats,
}

enum Endpoint {
    Tcp {
        tx: TcpSender,
        rx: TcpReceiver,
    },
    Wccp {
        tx: SenderState,
        rx: ReceiverState,
        bucket: Option<EventId>,
        recent: VecDeque<SimTime>,
    },
}

struct Flow {
    src: NodeId,
    dst: NodeId,
    transport: Transport,
    ep: Option<Endpoint>,
    rto: Option<(EventId, SimTime)>,
    bins: Vec<u64>,
    window_bytes: u64,
    receiver_total: u64,
    rtt: Vec<SimTime>,
}

pub(crate) struct Network {
    cfg: RunConfig,
    topo: Topology,
    nodes: Vec<Node>,
    flows: Vec<Flow>,
    txs: BTreeMap<u64, ActiveTx>,
    next_tx: u64,
    busy: Vec<BusySample>,
    decoded_data_bits: Vec<u64>,
    violation: Option<(SimTime, String)>,
}

const RECENT_EMISSIONS: usize = 32;

impl Network {
    pub(crate) fn new(spec: &ScenarioSpec, cfg: &RunConfig) -> Self {
        let p = &cfg.params;
        let topo = build_chain(spec.node_count, p.spacing_m);
        let rng = RandomSource::new(cfg.seed);
        let fparams = ForwarderParams {
            thb: p.thb,
            t_c: p.t_c,
            default_payload: (p.payload_bytes + IP_HEADER_BYTES + WCCP_BASE_BYTES + crate::wccp::HEADER_BYTES) as f64,
            ..Default::default()
        };
        let nodes = (0..topo.node_count())
            .map(|i| {
                let neighbors = (0..topo.node_count())
                    .filter(|&j| j != i)
                    .map(|j| (j, p.channel.reach(topo.positions[i].distance(&topo.positions[j]))))
                    .filter(|(_, r)| *r != Reach::None)
                    .collect();
                Node {
                    mac: MacNode::new(i, p.dcf.clone(), rng.node_stream(i)),
                    countdown: None,
                    exchange_timer: None,
                    response: None,
                    fwd: ForwarderState::new(fparams.clone()),
                    neighbors,
                    stats: ChannelStats::default(),
                }
            })
            .collect();
        let flows = spec
            .flows
            .iter()
            .map(|f| Flow {
                src: f.src - 1,
                dst: f.dst - 1,
                transport: f.transport,
                ep: None,
                rto: None,
                bins: Vec::new(),
                window_bytes: 0,
                receiver_total: 0,
                rtt: Vec::new(),
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            topo,
            nodes,
            flows,
            txs: BTreeMap::new(),
            next_tx: 0,
            busy: Vec::new(),
            decoded_data_bits: vec![0; spec.node_count],
            violation: None,
        }
    }

    fn check(&mut self, now: SimTime, ok: bool, what: impl FnOnce() -> String) {
        if !ok && self.violation.is_none() {
            self.violation = Some((now, what()));
        }
    }

    fn wccp_packet_bytes(&self) -> u32 {
        self.cfg.params.payload_bytes + IP_HEADER_BYTES + WCCP_BASE_BYTES + crate::wccp::HEADER_BYTES
    }

    fn tcp_packet_bytes(&self) -> u32 {
        self.cfg.params.payload_bytes + IP_HEADER_BYTES + TCP_HEADER_BYTES
    }

    fn ack_bytes(&self, t: Transport) -> u32 {
        match t {
            Transport::Tcp => IP_HEADER_BYTES + TCP_HEADER_BYTES,
            Transport::Wccp => IP_HEADER_BYTES + WCCP_BASE_BYTES + crate::wccp::HEADER_BYTES,
        }
    }

    fn airtime(&self, frame: &Frame<Packet>) -> SimTime {
        self.cfg.params.channel.airtime(frame.wire_bytes())
    }

    fn mack_air(&self) -> SimTime {
        self.cfg.params.channel.airtime(MACK_BYTES)
    }

    fn cts_air(&self) -> SimTime {
        self.cfg.params.channel.airtime(CTS_BYTES)
    }

    // ---- event dispatch ----------------------------------------------------

    fn handle(&mut self, q: &mut EventQueue<Ev>, ev: Event<Ev>) {
        let now = ev.at;
        let node = match ev.target {
            Target::Node(n) => n,
            Target::Global => usize::MAX,
        };
        match ev.payload {
            Ev::FlowStart(f) => self.start_flow(q, now, f),
            Ev::EnergyStart(tx) => self.energy_start(q, now, node, tx),
            Ev::EnergyEnd(tx) => self.energy_end(q, now, node, tx),
            Ev::TxEnd(tx) => self.tx_end(q, now, node, tx),
            Ev::Countdown => self.countdown(q, now, node),
            Ev::NavEnd => {
                if self.nodes[node].mac.nav_until <= now {
                    self.medium_changed(q, now, node);
                }
            }
            Ev::Respond => {
                if let Some(frame) = self.nodes[node].response.take() {
                    self.nodes[node].mac.responding = false;
                    if !self.nodes[node].mac.rx.is_transmitting() {
                        self.begin_transmission(q, now, node, frame);
                    }
                }
            }
            Ev::ExchangeTimeout => self.exchange_timeout(q, now, node),
            Ev::DataAfterCts => {
                let mack = self.mack_air();
                let frame = self.nodes[node].mac.data_after_cts(mack);
                self.begin_transmission(q, now, node, frame);
            }
            Ev::IntervalTick => self.interval_tick(q, now),
            Ev::Bucket(f) => self.bucket(q, now, f),
            Ev::Rto(f) => self.rto(q, now, f),
        }
    }

    // ---- PHY ---------------------------------------------------------------

    fn begin_transmission(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, frame: Frame<Packet>) {
        assert!(
            !self.nodes[node].mac.rx.is_transmitting(),
            "node {node} started a transmission while already transmitting"
        );
        let id = self.next_tx;
        self.next_tx += 1;
        let end = now + self.airtime(&frame);
        let prop = self.cfg.params.channel.prop_delay;
        let neighbors = self.nodes[node].neighbors.clone();
        for &(n, _) in &neighbors {
            q.schedule(now + prop, Target::Node(n), Ev::EnergyStart(id));
            q.schedule(end + prop, Target::Node(n), Ev::EnergyEnd(id));
        }
        q.schedule(end, Target::Node(node), Ev::TxEnd(id));
        self.txs.insert(
            id,
            ActiveTx {
                sender: node,
                frame,
                refs: neighbors.len() + 1,
            },
        );
        self.nodes[node].mac.rx.start_transmit();
        self.medium_changed(q, now, node);
    }

    fn release_tx(&mut self, id: u64) {
        let tx = self.txs.get_mut(&id).expect("live transmission");
        tx.refs -= 1;
        if tx.refs == 0 {
            self.txs.remove(&id);
        }
    }

    fn energy_start(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, id: u64) {
        let sender = self.txs[&id].sender;
        let decodable = self.nodes[node]
            .neighbors
            .iter()
            .any(|&(n, r)| n == sender && r == Reach::Decodable);
        self.nodes[node].mac.rx.energy_start(id, decodable);
        self.medium_changed(q, now, node);
    }

    fn energy_end(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, id: u64) {
        let clean = self.nodes[node].mac.rx.energy_end(id);
        if clean == Some(true) {
            let frame = self.txs[&id].frame.clone();
            self.on_decoded(q, now, node, frame);
        }
        self.release_tx(id);
        self.medium_changed(q, now, node);
    }

    fn tx_end(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, id: u64) {
        let kind = self.txs[&id].frame.kind;
        self.release_tx(id);
        let sifs = self.cfg.params.dcf.sifs;
        let slot = self.cfg.params.dcf.slot;
        let prop = self.cfg.params.channel.prop_delay;
        let n = &mut self.nodes[node];
        n.mac.rx.end_transmit();
        n.mac.tx_finished(kind);
        let wait = match kind {
            FrameKind::Data => Some(self.mack_air()),
            FrameKind::Rts => Some(self.cts_air()),
            _ => None,
        };
        if let Some(reply) = wait {
            let at = now + sifs + reply + prop + prop + slot;
            let ev = q.schedule(at, Target::Node(node), Ev::ExchangeTimeout);
            self.nodes[node].exchange_timer = Some(ev);
        }
        self.medium_changed(q, now, node);
    }

    // ---- MAC ---------------------------------------------------------------

    /// Re-evaluates carrier sense: freezes or (re)starts the countdown and
    /// updates the busyness accumulator.
    fn medium_changed(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        let include_energy = self.cfg.params.busy_includes_energy;
        let n = &mut self.nodes[node];
        n.mac.refresh_busy(now, include_energy);
        if n.mac.medium_busy(now) {
            if n.mac.freeze(now) {
                if let Some(ev) = n.countdown.take() {
                    q.cancel(ev);
                }
            }
        } else if n.countdown.is_none() {
            if let Some(at) = n.mac.start_countdown(now) {
                n.countdown = Some(q.schedule(at, Target::Node(node), Ev::Countdown));
            }
        }
    }

    fn countdown(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        self.nodes[node].countdown = None;
        let sifs = self.cfg.params.dcf.sifs;
        let rts_extra = {
            let n = &self.nodes[node];
            match n.mac.queue.front() {
                Some(head) => sifs + sifs + self.cts_air() + self.airtime(head),
                None => SimTime::ZERO,
            }
        };
        let busy = self.nodes[node].mac.medium_busy(now);
        self.check(now, !busy, || {
            format!("node {} accessed the medium while carrier sensed or NAV active", node + 1)
        });
        let mack = self.mack_air();
        let frame = self.nodes[node].mac.countdown_expired(now, mack, rts_extra);
        self.begin_transmission(q, now, node, frame);
    }

    fn exchange_timeout(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId) {
        self.nodes[node].exchange_timer = None;
        match self.nodes[node].mac.exchange_failed() {
            FailureOutcome::Retry => {}
            FailureOutcome::Dropped(_frame) => {}
        }
        let ok = self.nodes[node].mac.cw_law_holds();
        self.check(now, ok, || format!("node {} contention window off the doubling law", node + 1));
        self.medium_changed(q, now, node);
    }

    fn on_decoded(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, frame: Frame<Packet>) {
        let sifs = self.cfg.params.dcf.sifs;
        if frame.dst != node {
            let until = now + frame.duration;
            if self.nodes[node].mac.set_nav(until) {
                q.schedule(until, Target::Node(node), Ev::NavEnd);
            }
            return;
        }
        match frame.kind {
            FrameKind::Data => {
                self.decoded_data_bits[node] += frame.payload_bytes as u64 * 8;
                let n = &mut self.nodes[node];
                if !n.mac.responding {
                    n.mac.responding = true;
                    n.response = Some(Frame::control(FrameKind::Mack, node, frame.src, SimTime::ZERO));
                    q.schedule(now + sifs, Target::Node(node), Ev::Respond);
                }
                if n.mac.accept_data(frame.src, frame.mac_seq) {
                    let pkt = frame.segment.expect("data frame carries a packet");
                    self.deliver_up(q, now, node, pkt);
                }
            }
            FrameKind::Rts => {
                let cts_air = self.cts_air();
                let n = &mut self.nodes[node];
                if !n.mac.responding && n.mac.nav_until <= now && !n.mac.rx.is_transmitting() {
                    n.mac.responding = true;
                    let dur = frame.duration.saturating_sub(sifs + cts_air);
                    n.response = Some(Frame::control(FrameKind::Cts, node, frame.src, dur));
                    q.schedule(now + sifs, Target::Node(node), Ev::Respond);
                }
            }
            FrameKind::Cts => {
                let n = &mut self.nodes[node];
                if n.mac.phase == crate::mac::MacPhase::AwaitCts {
                    if let Some(ev) = n.exchange_timer.take() {
                        q.cancel(ev);
                    }
                    q.schedule(now + sifs, Target::Node(node), Ev::DataAfterCts);
                }
            }
            FrameKind::Mack => {
                if self.nodes[node].mac.phase == crate::mac::MacPhase::AwaitMack {
                    if let Some(ev) = self.nodes[node].exchange_timer.take() {
                        q.cancel(ev);
                    }
                    let payload_air = {
                        let head = self.nodes[node].mac.queue.front().expect("head frame");
                        self.airtime(head).saturating_sub(self.cfg.params.channel.phy_overhead)
                    };
                    self.nodes[node].mac.mack_received(now, payload_air);
                    let ok = self.nodes[node].mac.cw_law_holds();
                    self.check(now, ok, || format!("node {} contention window not reset", node + 1));
                }
            }
        }
    }

    // ---- routing and forwarder shim ---------------------------------------

    fn deliver_up(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, mut pkt: Packet) {
        match &mut pkt.body {
            Body::WccpData { header, .. } => {
                let flow_key = (pkt.src, pkt.dst);
                let fwd = &mut self.nodes[node].fwd;
                fwd.accumulate_packet(header, flow_key, Direction::Incoming, pkt.bytes);
                if pkt.dst == node {
                    let f = fwd.packet_feedback(header, flow_key);
                    let next = overwrite_feedback(*header, f);
                    let ok = next.fb <= header.fb;
                    *header = next;
                    self.check(now, ok, || "feedback increased along the path".into());
                }
            }
            Body::WccpAck { .. } => self.nodes[node].fwd.accumulate_bytes(pkt.bytes),
            _ => {}
        }
        if pkt.dst == node {
            self.deliver_to_endpoint(q, now, pkt);
        } else {
            self.route_out(q, now, node, pkt);
        }
    }

    /// Hands a packet from the routing layer to the MAC toward its next hop.
    fn route_out(&mut self, q: &mut EventQueue<Ev>, now: SimTime, node: NodeId, mut pkt: Packet) {
        let next = self.topo.next_hop(node, pkt.dst);
        let n = &mut self.nodes[node];
        if n.mac.queue.len() >= n.mac.params.queue_cap {
            n.mac.drops_queue += 1;
            return;
        }
        match &mut pkt.body {
            Body::WccpData { header, .. } => {
                let flow_key = (pkt.src, pkt.dst);
                n.fwd.accumulate_packet(header, flow_key, Direction::Outgoing, pkt.bytes);
                let f = n.fwd.packet_feedback(header, flow_key);
                let next_hdr = overwrite_feedback(*header, f);
                let ok = next_hdr.fb <= header.fb;
                *header = next_hdr;
                self.check(now, ok, || "feedback increased along the path".into());
            }
            Body::WccpAck { .. } => n.fwd.accumulate_bytes(pkt.bytes),
            _ => {}
        }
        let bytes = pkt.bytes;
        let out = self.nodes[node].mac.enqueue(Frame::data(node, next, bytes, pkt));
        debug_assert_eq!(out, EnqueueOutcome::Accepted);
        self.medium_changed(q, now, node);
    }

    // ---- endpoints ---------------------------------------------------------

    fn start_flow(&mut self, q: &mut EventQueue<Ev>, now: SimTime, f: usize) {
        let p = &self.cfg.params;
        match self.flows[f].transport {
            Transport::Tcp => {
                self.flows[f].ep = Some(Endpoint::Tcp {
                    tx: TcpSender::new(p.payload_bytes),
                    rx: TcpReceiver::default(),
                });
                self.tcp_pump(q, now, f);
            }
            Transport::Wccp => {
                let pkt = self.wccp_packet_bytes();
                let mut sc = SenderConfig::for_packet(pkt, p.t_c, p.fb_init());
                if let Some(v) = p.rp_min_bytes_per_s {
                    sc.rp_min = v;
                    sc.rp_init = sc.rp_init.max(v);
                }
                sc.bucket_depth = p.bucket_depth_pkts * pkt as f64;
                self.flows[f].ep = Some(Endpoint::Wccp {
                    tx: SenderState::new(sc, now),
                    rx: ReceiverState::default(),
                    bucket: None,
                    recent: VecDeque::new(),
                });
                self.bucket(q, now, f);
            }
        }
    }

    fn send_from_source(&mut self, q: &mut EventQueue<Ev>, now: SimTime, f: usize, body: Body, bytes: u32) {
        let (src, dst) = (self.flows[f].src, self.flows[f].dst);
        let pkt = Packet {
            flow: f,
            src,
            dst,
            bytes,
            body,
        };
        self.route_out(q, now, src, pkt);
    }

    fn send_ack(&mut self, q: &mut EventQueue<Ev>, now: SimTime, f: usize, body: Body) {
        let (src, dst, t) = (self.flows[f].src, self.flows[f].dst, self.flows[f].transport);
        let pkt = Packet {
            flow: f,
            src: dst,
            dst: src,
            bytes: self.ack_bytes(t),
            body,
        };
        self.route_out(q, now, dst, pkt);
    }

    fn record_delivery(&mut self, now: SimTime, f: usize, bytes: u64) {
        let (warmup, duration) = (self.cfg.warmup, self.cfg.duration);
        let flow = &mut self.flows[f];
        let bin = (now.as_micros() / BIN.as_micros()) as usize;
        if flow.bins.len() <= bin {
            flow.bins.resize(bin + 1, 0);
        }
        flow.bins[bin] += bytes;
        flow.receiver_total += bytes;
        if now >= warmup && now < duration {
            flow.window_bytes += bytes;
        }
    }

    fn record_rtt(&mut self, now: SimTime, f: usize, sample: Option<SimTime>) {
        if let Some(r) = sample {
            if now >= self.cfg.warmup {
                self.flows[f].rtt.push(r);
            }
        }
    }

    fn deliver_to_endpoint(&mut self, q: &mut EventQueue<Ev>, now: SimTime, pkt: Packet) {
        let f = pkt.flow;
        let payload = self.cfg.params.payload_bytes as u64;
        match pkt.body {
            Body::TcpData(seg) => {
                let Some(Endpoint::Tcp { rx, .. }) = &mut self.flows[f].ep else {
                    unreachable!("tcp data for non-tcp flow")
                };
                let (ack, new_bytes) = rx.on_segment(seg.seq, seg.len);
                if new_bytes > 0 {
                    self.record_delivery(now, f, new_bytes);
                }
                self.send_ack(q, now, f, Body::TcpAck(ack));
            }
            Body::TcpAck(ack) => {
                let Some(Endpoint::Tcp { tx, .. }) = &mut self.flows[f].ep else {
                    unreachable!("tcp ack for non-tcp flow")
                };
                let out = tx.on_ack(now, ack);
                self.record_rtt(now, f, out.rtt_sample);
                if let Some(seg) = out.fast_retransmit {
                    let bytes = self.tcp_packet_bytes();
                    self.send_from_source(q, now, f, Body::TcpData(seg), bytes);
                }
                self.tcp_pump(q, now, f);
            }
            Body::WccpData { seq, header } => {
                let Some(Endpoint::Wccp { rx, .. }) = &mut self.flows[f].ep else {
                    unreachable!("wccp data for non-wccp flow")
                };
                if rx.on_data(seq) {
                    self.record_delivery(now, f, payload);
                }
                let echoed = crate::wccp::echo_feedback(&header);
                self.send_ack(q, now, f, Body::WccpAck { seq, header: echoed });
            }
            Body::WccpAck { seq, header } => {
                let Some(Endpoint::Wccp { tx, .. }) = &mut self.flows[f].ep else {
                    unreachable!("wccp ack for non-wccp flow")
                };
                let rp_before = tx.rp;
                let out = tx.on_ack(now, seq, header.fb);
                if let Some(o) = out {
                    let ok = o.new_rp >= tx.cfg.rp_min
                        && (o.new_rp - (rp_before + header.fb).max(tx.cfg.rp_min)).abs() < 1e-6;
                    self.check(now, ok, || format!("flow {} rate update off rp + fb", f + 1));
                    self.record_rtt(now, f, o.rtt_sample);
                    // Permit rate changed: recompute the next release.
                    self.reschedule_bucket(q, now, f);
                    self.reschedule_rto(q, f);
                }
            }
        }
    }

    fn tcp_pump(&mut self, q: &mut EventQueue<Ev>, now: SimTime, f: usize) {
        let bytes = self.tcp_packet_bytes();
        loop {
            let Some(Endpoint::Tcp { tx, .. }) = &mut self.flows[f].ep else {
                return;
            };
            let Some(seg) = tx.next_segment(now) else { break };
            self.send_from_source(q, now, f, Body::TcpData(seg), bytes);
        }
        self.reschedule_rto(q, f);
    }

    fn bucket(&mut self, q: &mut EventQueue<Ev>, now: SimTime, f: usize) {
        let bytes = self.wccp_packet_bytes();
        let Some(Endpoint::Wccp { tx, bucket, recent, .. }) = &mut self.flows[f].ep else {
            return;
        };
        *bucket = None;
        let emissions = tx.leaky_bucket_tick(now);
        let depth = tx.cfg.bucket_depth;
        let permits_ok = tx.permits >= 0.0 && tx.permits <= depth + 1e-9;
        let rp_max = tx.rp_max_seen;
        let mut conform = true;
        for _ in &emissions {
            recent.push_back(now);
            if recent.len() > RECENT_EMISSIONS {
                recent.pop_front();
            }
            let len = recent.len();
            for (i, t) in recent.iter().enumerate() {
                let count = (len - i) as f64;
                let w = (now - *t).as_secs_f64();
                if count * bytes as f64 > rp_max * w + depth + 1e-3 {
                    conform = false;
                }
            }
        }
        self.check(now, permits_ok && conform, || {
            format!("flow {} leaky bucket exceeded its conformance bound", f + 1)
        });
        for e in emissions {
            self.send_from_source(q, now, f, Body::WccpData { seq: e.seq, header: e.header }, bytes);
        }
        self.reschedule_bucket(q, now, f);
        self.reschedule_rto(q, f);
    }

    fn reschedule_bucket(&mut self, q: &mut EventQueue<Ev>, now: SimTime, f: usize) {
        let Some(Endpoint::Wccp { tx, bucket, .. }) = &mut self.flows[f].ep else {
            return;
        };
        if let Some(ev) = bucket.take() {
            q.cancel(ev);
        }
        let at = tx.next_emission_at(now);
        *bucket = Some(q.schedule(at, Target::Global, Ev::Bucket(f)));
    }

    fn reschedule_rto(&mut self, q: &mut EventQueue<Ev>, f: usize) {
        let flow = &mut self.flows[f];
        let deadline = match &flow.ep {
            Some(Endpoint::Tcp { tx, .. }) => tx.rto_deadline(),
            Some(Endpoint::Wccp { tx, .. }) => tx.rto_deadline(),
            None => None,
        };
        if flow.rto.map(|(_, t)| Some(t)) == Some(deadline) {
            return;
        }
        if let Some((ev, _)) = flow.rto.take() {
            q.cancel(ev);
        }
        if let Some(at) = deadline {
            let at = at.max(q.now());
            flow.rto = Some((q.schedule(at, Target::Global, Ev::Rto(f)), at));
        }
    }

    fn rto(&mut self, q: &mut EventQueue<Ev>, now: SimTime, f: usize) {
        self.flows[f].rto = None;
        match &mut self.flows[f].ep {
            Some(Endpoint::Tcp { tx, .. }) => {
                if tx.rto_deadline().is_some_and(|d| d <= now) {
                    tx.on_timeout(now);
                }
                self.tcp_pump(q, now, f);
            }
            Some(Endpoint::Wccp { tx, .. }) => {
                tx.on_rto(now);
                self.reschedule_rto(q, f);
            }
            None => {}
        }
    }

    // ---- control intervals -------------------------------------------------

    fn interval_tick(&mut self, q: &mut EventQueue<Ev>, now: SimTime) {
        let include_energy = self.cfg.params.busy_includes_energy;
        let t_c = self.cfg.params.t_c;
        let bitrate = self.cfg.params.channel.bitrate;
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            n.mac.refresh_busy(now, include_energy);
            let rb = n.mac.busy.close_interval(now);
            let budget_ok = n.fwd.budget_rule_holds();
            n.stats = ChannelStats::from_counters(&n.mac.counters, t_c, bitrate);
            n.mac.counters = Default::default();
            n.fwd.open_interval(rb);
            self.busy.push(BusySample {
                time: now,
                node: i + 1,
                rb,
            });
            self.check(now, (0.0..=1.0).contains(&rb), || {
                format!("node {} busyness ratio {rb} outside [0, 1]", i + 1)
            });
            self.check(now, budget_ok, || {
                format!("node {} granted more feedback than its budget", i + 1)
            });
        }
        let next = now + t_c;
        if next <= self.cfg.duration {
            q.schedule(next, Target::Global, Ev::IntervalTick);
        }
    }
}

/// Runs one scenario to completion and collects its metrics.
pub fn run(spec: &ScenarioSpec, cfg: &RunConfig) -> Result<RunMetrics, SimError> {
    spec.validate()?;
    cfg.validate()?;
    let mut net = Network::new(spec, cfg);
    let mut q: EventQueue<Ev> = EventQueue::new();
    for (i, f) in spec.flows.iter().enumerate() {
        if f.start <= cfg.duration {
            q.schedule(f.start, Target::Global, Ev::FlowStart(i));
        }
    }
    if cfg.params.t_c <= cfg.duration {
        q.schedule(cfg.params.t_c, Target::Global, Ev::IntervalTick);
    }
    let mut dispatched = 0;
    while let Some(ev) = q.pop_until(cfg.duration) {
        dispatched += 1;
        net.handle(&mut q, ev);
        if let Some((at, what)) = net.violation.take() {
            return Err(SimError::Invariant { at, what });
        }
    }
    q.advance_to(cfg.duration);

    // A receiver decodes at most one frame at a time.
    let capacity_bits = cfg.params.channel.bitrate as f64 * cfg.duration.as_secs_f64();
    for (i, &bits) in net.decoded_data_bits.iter().enumerate() {
        if bits as f64 > capacity_bits {
            return Err(SimError::Invariant {
                at: cfg.duration,
                what: format!("node {} decoded {bits} bits, above channel capacity {capacity_bits}", i + 1),
            });
        }
    }
    Ok(collect(spec, cfg, net, dispatched))
}

fn collect(spec: &ScenarioSpec, cfg: &RunConfig, net: Network, dispatched: usize) -> RunMetrics {
    let window = cfg.duration.saturating_sub(cfg.warmup).as_secs_f64();
    let topo = &net.topo;
    let flows: Vec<FlowMetrics> = net
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let retransmissions = match &f.ep {
                Some(Endpoint::Tcp { tx, .. }) => tx.retransmissions,
                Some(Endpoint::Wccp { tx, .. }) => tx.retransmissions,
                None => 0,
            };
            FlowMetrics {
                flow_id: i + 1,
                src: f.src + 1,
                dst: f.dst + 1,
                hops: topo.hops(f.src, f.dst),
                transport: f.transport.to_string(),
                delivered_bytes: f.window_bytes,
                throughput: if window > 0.0 {
                    f.window_bytes as f64 / window
                } else {
                    0.0
                },
                rtt_samples: f.rtt.clone(),
                retransmissions,
                delivery_bins: f.bins.clone(),
            }
        })
        .collect();
    let tputs: Vec<f64> = flows.iter().map(|f| f.throughput).collect();
    let jain = jain_index(&tputs);
    RunMetrics {
        scenario: spec.name.clone(),
        transport: spec.transport_label(),
        seed: cfg.seed,
        node_count: spec.node_count,
        t_c: cfg.params.t_c,
        warmup: cfg.warmup,
        duration: cfg.duration,
        aggregate_throughput: tputs.iter().sum(),
        jain_index: jain.unwrap_or(0.0),
        jain_defined: jain.is_some(),
        destination_counters: net.flows.iter().map(|f| f.receiver_total).collect(),
        flows,
        busyness: net.busy,
        dispatched_events: dispatched,
    }
}
