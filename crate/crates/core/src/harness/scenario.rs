//! The three 9-node chain traffic patterns.

use std::fmt;
use std::str::FromStr;

use crate::error::SimError;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transport {
    Tcp,
    Wccp,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Tcp => "tcp",
            Transport::Wccp => "wccp",
        })
    }
}

impl FromStr for Transport {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "tcp" => Ok(Transport::Tcp),
            "wccp" => Ok(Transport::Wccp),
            other => Err(SimError::Config(format!("unknown transport `{other}`"))),
        }
    }
}

/// A bulk transfer between two nodes, numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub src: usize,
    pub dst: usize,
    pub transport: Transport,
    pub start: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub node_count: usize,
    pub flows: Vec<FlowSpec>,
}

impl ScenarioSpec {
    /// Builds a spec from `(src, dst)` pairs, starting flows `stagger` apart.
    pub fn new(name: &str, node_count: usize, pairs: &[(usize, usize)], stagger: SimTime) -> Self {
        let flows = pairs
            .iter()
            .enumerate()
            .map(|(i, &(src, dst))| FlowSpec {
                src,
                dst,
                transport: Transport::Wccp,
                start: SimTime::from_micros(stagger.as_micros() * i as u64),
            })
            .collect();
        Self {
            name: name.to_owned(),
            node_count,
            flows,
        }
    }

    pub fn with_transport(mut self, t: Transport) -> Self {
        for f in &mut self.flows {
            f.transport = t;
        }
        self
    }

    /// Label for output: the shared transport, or `mixed`.
    pub fn transport_label(&self) -> String {
        match self.flows.first() {
            Some(first) if self.flows.iter().all(|f| f.transport == first.transport) => {
                first.transport.to_string()
            }
            Some(_) => "mixed".into(),
            None => "none".into(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.node_count < 2 {
            return Err(SimError::Config("node_count must be >= 2".into()));
        }
        for f in &self.flows {
            if f.src == f.dst {
                return Err(SimError::Config(format!("flow {}->{} has src == dst", f.src, f.dst)));
            }
            for n in [f.src, f.dst] {
                if n < 1 || n > self.node_count {
                    return Err(SimError::Config(format!(
                        "node {n} outside 1..={}",
                        self.node_count
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Named chain scenarios. Flows start 100 ms apart.
pub fn scenario(name: &str) -> Result<ScenarioSpec, SimError> {
    let stagger = SimTime::from_millis(100);
    let pairs: &[(usize, usize)] = match name {
        "s1" => &[(1, 9)],
        "s2" => &[(1, 5), (1, 9), (5, 9)],
        "s3" => &[(1, 3), (1, 3), (1, 3), (1, 3), (7, 9), (1, 9)],
        other => return Err(SimError::UnknownScenario(other.to_owned())),
    };
    Ok(ScenarioSpec::new(name, 9, pairs, stagger))
}
