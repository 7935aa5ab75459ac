use thiserror::Error;

use crate::model::{AgentId, FlowId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("no position for agent {0}")]
    MissingPosition(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("flow endpoints coincide")]
    DegenerateFlow,
    #[error("oracle guard exceeded: {flows} flows, {total} nodes (limit {max_flows} flows, {max_total} nodes)")]
    Capacity {
        flows: usize,
        total: usize,
        max_flows: usize,
        max_total: usize,
    },
    #[error("invalid allocation input: {0}")]
    InvalidAllocation(&'static str),
    #[error("potential evaluated outside its domain: distance {distance} not in {range}")]
    PotentialDomain { distance: f64, range: &'static str },
    #[error("potential evaluated at coincident positions")]
    Coincident,
    #[error("agents {0} and {1} occupy the same position")]
    Singular(AgentId, AgentId),
    #[error("flow {0} source is unreachable from its destination")]
    FlowUnreachable(FlowId),
    #[error("flows {0} and {1} are disconnected in the supergraph")]
    SupergraphDisconnected(FlowId, FlowId),
    #[error("connected core is not connected (bridge detection fault)")]
    CoreDisconnected,
    #[error("non-finite control for agent {0}")]
    NonFiniteControl(AgentId),
    #[error("scenario is invalid: {0:?}")]
    InvalidScenario(Vec<crate::model::Violation>),
    #[error("fault at tick {tick}: {source}")]
    AtTick {
        tick: u64,
        #[source]
        source: Box<Error>,
    },
}
