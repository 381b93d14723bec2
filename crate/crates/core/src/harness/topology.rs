//! Chain topologies with static hop-by-hop routes.

use crate::phy::{NodeId, Position};

#[derive(Debug, Clone)]
pub struct Topology {
    pub positions: Vec<Position>,
}

impl Topology {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    /// Next hop from `at` toward `dst` along the chain (0-based ids).
    pub fn next_hop(&self, at: NodeId, dst: NodeId) -> NodeId {
        assert_ne!(at, dst, "no next hop to self");
        if dst > at {
            at + 1
        } else {
            at - 1
        }
    }

    /// Nodes visited after `src` on the way to `dst`.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Vec<NodeId> {
        let mut hops = Vec::new();
        let mut at = src;
        while at != dst {
            at = self.next_hop(at, dst);
            hops.push(at);
        }
        hops
    }

    pub fn hops(&self, src: NodeId, dst: NodeId) -> usize {
        src.abs_diff(dst)
    }
}

/// `n` nodes on a line, `spacing` meters apart. Node `i` (0-based) sits at
/// `(i·spacing, 0)`.
pub fn build_chain(n: usize, spacing: f64) -> Topology {
    assert!(n >= 2, "a chain needs at least two nodes");
    Topology {
        positions: (0..n).map(|i| Position::new(i as f64 * spacing, 0.0)).collect(),
    }
}
