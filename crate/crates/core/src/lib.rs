//! Discrete-time simulator for a hybrid network of mobile relays and static
//! wireless nodes.
//!
//! Static nodes form source/destination pairs ("flows"). An information
//! control plane ([`icp`]) decides which mobile agents serve which flow while
//! keeping the network connected, and a physical control plane ([`pcp`])
//! moves the agents with potential-field controllers so that each flow ends
//! up with equally spaced relays. [`sim`] drives both layers tick by tick and
//! records a [`sim::Trace`].

pub mod alloc;
pub mod error;
pub mod exec;
pub mod geom;
pub mod graph;
pub mod icp;
pub mod io;
pub mod link;
pub mod model;
pub mod pcp;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geom::Vec2;
pub use model::{AgentId, BehaviorState, Flow, FlowId, Params, Scenario, WorldState};
