//! Per-flow and per-run statistics.

use crate::sim::SimTime;

/// Width of the delivery histogram bins.
pub const BIN: SimTime = SimTime::from_millis(100);

/// Jain's fairness index `(Σx)² / (n·Σx²)`.
///
/// Returns `None` for an empty or all-zero input, where the index is
/// undefined.
pub fn jain_index(xs: &[f64]) -> Option<f64> {
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if xs.is_empty() || sq <= 0.0 {
        return None;
    }
    Some(sum * sum / (xs.len() as f64 * sq))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMetrics {
    /// 1-based flow number.
    pub flow_id: usize,
    pub src: usize,
    pub dst: usize,
    pub hops: usize,
    pub transport: String,
    /// Bytes delivered in order at the destination within the measurement
    /// window.
    pub delivered_bytes: u64,
    /// `delivered_bytes` over the window length, bytes/second.
    pub throughput: f64,
    /// RTT samples taken within the measurement window.
    pub rtt_samples: Vec<SimTime>,
    pub retransmissions: u64,
    /// Delivered bytes per [`BIN`] since time zero.
    pub delivery_bins: Vec<u64>,
}

impl FlowMetrics {
    pub fn mean_rtt(&self) -> Option<f64> {
        if self.rtt_samples.is_empty() {
            return None;
        }
        let s: f64 = self.rtt_samples.iter().map(|t| t.as_micros() as f64).sum();
        Some(s / self.rtt_samples.len() as f64)
    }

    pub fn rtt_std(&self) -> Option<f64> {
        let mean = self.mean_rtt()?;
        let n = self.rtt_samples.len() as f64;
        let var = self
            .rtt_samples
            .iter()
            .map(|t| (t.as_micros() as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        Some(var.sqrt())
    }

    /// Nearest-rank percentile, `q` in (0, 1].
    pub fn rtt_percentile(&self, q: f64) -> Option<SimTime> {
        if self.rtt_samples.is_empty() {
            return None;
        }
        let mut v = self.rtt_samples.clone();
        v.sort();
        let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
        Some(v[rank - 1])
    }

    /// Bytes delivered in `[from, to)`, at bin granularity.
    pub fn delivered_between(&self, from: SimTime, to: SimTime) -> u64 {
        let a = (from.as_micros() / BIN.as_micros()) as usize;
        let b = (to.as_micros().div_ceil(BIN.as_micros())) as usize;
        self.delivery_bins
            .iter()
            .take(b)
            .skip(a)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusySample {
    /// End of the control interval.
    pub time: SimTime,
    /// 1-based node number.
    pub node: usize,
    pub rb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub transport: String,
    pub seed: u64,
    pub node_count: usize,
    pub t_c: SimTime,
    pub warmup: SimTime,
    pub duration: SimTime,
    pub flows: Vec<FlowMetrics>,
    pub busyness: Vec<BusySample>,
    pub aggregate_throughput: f64,
    /// 0 when undefined (every flow delivered nothing).
    pub jain_index: f64,
    pub jain_defined: bool,
    /// Destination-side in-order byte counters over the window, per flow.
    pub destination_counters: Vec<u64>,
    pub dispatched_events: usize,
}

impl RunMetrics {
    /// rb series of one node (1-based), in interval order.
    pub fn rb_series(&self, node: usize) -> Vec<(SimTime, f64)> {
        self.busyness
            .iter()
            .filter(|s| s.node == node)
            .map(|s| (s.time, s.rb))
            .collect()
    }

    pub fn flow(&self, src: usize, dst: usize) -> impl Iterator<Item = &FlowMetrics> {
        self.flows.iter().filter(move |f| f.src == src && f.dst == dst)
    }
}
