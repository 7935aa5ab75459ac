//! Shared domain types: identifiers, flows, parameters, scenarios and the
//! per-tick world state.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::graph::{self, EdgeSet};

/// 1-based agent index. Mobile agents use `1..=m`, static nodes `m+1..=m+s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    pub fn from_index(index: usize) -> Self {
        AgentId(index as u32 + 1)
    }

    /// Zero-based slot in per-agent vectors.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Flow index in `n+1..=n+f`, disjoint from agent ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: FlowId,
    pub source: AgentId,
    pub destination: AgentId,
    pub active: bool,
}

impl Flow {
    pub fn endpoints(&self, positions: &[Vec2]) -> (Vec2, Vec2) {
        (
            positions[self.source.index()],
            positions[self.destination.index()],
        )
    }

    pub fn length(&self, positions: &[Vec2]) -> f64 {
        let (s, d) = self.endpoints(positions);
        s.distance(d)
    }
}

/// Numeric parameters shared by every layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Collision avoidance radius.
    pub rho0: f64,
    /// Link establishment radius.
    pub rho1: f64,
    /// Interaction radius; links are lost beyond it.
    pub rho2: f64,
    /// Sigmoid shape of the reception model.
    pub a: f64,
    /// Sigmoid center of the reception model.
    pub b: f64,
    /// Weight on the detachment score when deciding a reconfiguration.
    pub beta: f64,
    /// Waypoint convergence margin.
    pub eps_w: f64,
    /// On-path margin.
    pub eps_f: f64,
    /// Projection bias keeping waypoints off flow endpoints.
    pub alpha: f64,
    /// Integration step.
    pub dt: f64,
    /// Speed saturation.
    pub vmax: f64,
    /// Multiplier on dispersion terms from static flow neighbors.
    #[serde(default = "default_static_gain")]
    pub static_gain: f64,
}

fn default_static_gain() -> f64 {
    1.0
}

impl Params {
    /// Parameter set scaled to an interaction radius `rho2`.
    pub fn scaled(rho2: f64) -> Self {
        Params {
            rho0: 0.125 * rho2,
            rho1: 0.8 * rho2,
            rho2,
            a: 10.0 / rho2,
            b: 0.6 * rho2,
            beta: 1.5,
            eps_w: 0.05 * rho2,
            eps_f: 0.05 * rho2,
            alpha: 0.05,
            dt: 0.01,
            vmax: rho2 / 10.0,
            static_gain: 1.0,
        }
    }
}

impl Default for Params {
    fn default() -> Self {
        Params::scaled(2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BehaviorState {
    #[default]
    Swarming,
    Reconfigure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Activate,
    Deactivate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEvent {
    pub tick: u64,
    pub flow: FlowId,
    pub kind: EventKind,
}

fn default_icp_period() -> u64 {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub m: usize,
    pub s: usize,
    pub f: usize,
    pub static_positions: Vec<Vec2>,
    pub initial_mobile_positions: Vec<Vec2>,
    pub flows: Vec<Flow>,
    #[serde(default)]
    pub events: Vec<FlowEvent>,
    pub params: Params,
    pub max_ticks: u64,
    #[serde(default)]
    pub seed: u64,
    /// Ticks between scheduled ICP invocations.
    #[serde(default = "default_icp_period")]
    pub icp_period: u64,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.m + self.s
    }

    pub fn is_mobile(&self, id: AgentId) -> bool {
        (id.0 as usize) <= self.m
    }

    /// Positions of all agents at tick 0, mobile first.
    pub fn initial_positions(&self) -> Vec<Vec2> {
        self.initial_mobile_positions
            .iter()
            .chain(self.static_positions.iter())
            .copied()
            .collect()
    }

    pub fn flow_id(&self, k: usize) -> FlowId {
        FlowId((self.n() + k + 1) as u32)
    }
}

/// Reasons a scenario is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    RadiusOrdering,
    NonPositiveParameter { name: String },
    StepTooLarge,
    CountMismatch { field: String },
    FlowIdOutOfRange { flow: FlowId },
    FlowEndpointNotStatic { flow: FlowId },
    FlowSelfLoop { flow: FlowId },
    UnknownEventFlow { flow: FlowId },
    NonFinitePosition { agent: AgentId },
    CoincidentAgents { a: AgentId, b: AgentId },
    ZeroIcpPeriod,
    DisconnectedInitialGraph,
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::RadiusOrdering => "radius-ordering",
            Violation::NonPositiveParameter { .. } => "non-positive-parameter",
            Violation::StepTooLarge => "step-too-large",
            Violation::CountMismatch { .. } => "count-mismatch",
            Violation::FlowIdOutOfRange { .. } => "flow-id-out-of-range",
            Violation::FlowEndpointNotStatic { .. } => "flow-endpoint-not-static",
            Violation::FlowSelfLoop { .. } => "flow-self-loop",
            Violation::UnknownEventFlow { .. } => "unknown-event-flow",
            Violation::NonFinitePosition { .. } => "non-finite-position",
            Violation::CoincidentAgents { .. } => "coincident-agents",
            Violation::ZeroIcpPeriod => "zero-icp-period",
            Violation::DisconnectedInitialGraph => "disconnected-initial-graph",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveParameter { name } => write!(f, "{}: {name}", self.code()),
            Violation::CountMismatch { field } => write!(f, "{}: {field}", self.code()),
            Violation::FlowIdOutOfRange { flow }
            | Violation::FlowEndpointNotStatic { flow }
            | Violation::FlowSelfLoop { flow }
            | Violation::UnknownEventFlow { flow } => write!(f, "{}: {flow}", self.code()),
            Violation::NonFinitePosition { agent } => write!(f, "{}: agent {agent}", self.code()),
            Violation::CoincidentAgents { a, b } => {
                write!(f, "{}: agents {a} and {b}", self.code())
            }
            _ => f.write_str(self.code()),
        }
    }
}

/// Checks every scenario invariant. An empty result means the scenario can be
/// run.
pub fn validate_scenario(sc: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = &sc.params;

    if !(p.rho0 < p.rho1 && p.rho1 < p.rho2) {
        out.push(Violation::RadiusOrdering);
    }
    let positive = [
        ("rho0", p.rho0),
        ("a", p.a),
        ("b", p.b),
        ("beta", p.beta),
        ("eps_w", p.eps_w),
        ("eps_f", p.eps_f),
        ("alpha", p.alpha),
        ("dt", p.dt),
        ("vmax", p.vmax),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            out.push(Violation::NonPositiveParameter { name: name.into() });
        }
    }
    for (name, v) in [("eps_w", p.eps_w), ("eps_f", p.eps_f)] {
        if v >= p.rho1 {
            out.push(Violation::NonPositiveParameter {
                name: format!("{name} (must be well below rho1)"),
            });
        }
    }
    if !(p.static_gain >= 0.0 && p.static_gain.is_finite()) {
        out.push(Violation::NonPositiveParameter {
            name: "static_gain".into(),
        });
    }
    if p.dt > 0.0 && p.vmax > 0.0 && p.dt * p.vmax > p.rho2 / 10.0 {
        out.push(Violation::StepTooLarge);
    }
    if sc.icp_period == 0 {
        out.push(Violation::ZeroIcpPeriod);
    }

    if sc.static_positions.len() != sc.s {
        out.push(Violation::CountMismatch {
            field: "static_positions".into(),
        });
    }
    if sc.initial_mobile_positions.len() != sc.m {
        out.push(Violation::CountMismatch {
            field: "initial_mobile_positions".into(),
        });
    }
    if sc.flows.len() != sc.f {
        out.push(Violation::CountMismatch {
            field: "flows".into(),
        });
    }
    let n = sc.n() as u32;
    for (k, fl) in sc.flows.iter().enumerate() {
        if fl.id != sc.flow_id(k) {
            out.push(Violation::FlowIdOutOfRange { flow: fl.id });
        }
        let is_static = |a: AgentId| a.0 as usize > sc.m && a.0 <= n;
        if !is_static(fl.source) || !is_static(fl.destination) {
            out.push(Violation::FlowEndpointNotStatic { flow: fl.id });
        }
        if fl.source == fl.destination {
            out.push(Violation::FlowSelfLoop { flow: fl.id });
        }
    }
    for ev in &sc.events {
        if !sc.flows.iter().any(|fl| fl.id == ev.flow) {
            out.push(Violation::UnknownEventFlow { flow: ev.flow });
        }
    }

    // Geometry checks only make sense once the counts line up.
    if out
        .iter()
        .any(|v| matches!(v, Violation::CountMismatch { .. }))
    {
        return out;
    }
    let pos = sc.initial_positions();
    let mut geometry_ok = true;
    for (i, x) in pos.iter().enumerate() {
        if !x.is_finite() {
            out.push(Violation::NonFinitePosition {
                agent: AgentId::from_index(i),
            });
            geometry_ok = false;
        }
    }
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            if pos[i] == pos[j] {
                out.push(Violation::CoincidentAgents {
                    a: AgentId::from_index(i),
                    b: AgentId::from_index(j),
                });
                geometry_ok = false;
            }
        }
    }
    if geometry_ok && p.rho1 > 0.0 && p.rho1 < p.rho2 && !pos.is_empty() {
        let es = graph::initial_edges(&pos, p);
        let all: BTreeSet<AgentId> = (0..pos.len()).map(AgentId::from_index).collect();
        if !graph::is_connected(&es, &all) {
            out.push(Violation::DisconnectedInitialGraph);
        }
    }
    out
}

/// Complete simulation state at one tick. Per-agent vectors are indexed by
/// [`AgentId::index`]; `behavior`, `command` and `waypoint` only cover the
/// mobile agents.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub mobile_count: usize,
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub edges: EdgeSet,
    pub behavior: Vec<BehaviorState>,
    pub membership: Vec<BTreeSet<FlowId>>,
    pub command: Vec<Option<FlowId>>,
    pub waypoint: Vec<Option<Vec2>>,
    pub bridges: Vec<bool>,
    /// Consecutive pairs on the backbone of every active flow, as of the last
    /// ICP run.
    pub backbone_links: BTreeSet<(AgentId, AgentId)>,
    /// Extra links kept so that the retained links span every agent.
    pub tethers: BTreeSet<(AgentId, AgentId)>,
    /// Closest approach to the waypoint of a commanded agent and the tick it
    /// was reached.
    pub progress: Vec<Option<(f64, u64)>>,
}

impl WorldState {
    pub fn initial(sc: &Scenario) -> Self {
        let positions = sc.initial_positions();
        let n = positions.len();
        let edges = graph::initial_edges(&positions, &sc.params);
        WorldState {
            tick: 0,
            mobile_count: sc.m,
            velocities: vec![Vec2::ZERO; n],
            positions,
            edges,
            behavior: vec![BehaviorState::Swarming; sc.m],
            membership: vec![BTreeSet::new(); n],
            command: vec![None; sc.m],
            waypoint: vec![None; sc.m],
            bridges: vec![false; n],
            backbone_links: BTreeSet::new(),
            tethers: BTreeSet::new(),
            progress: vec![None; sc.m],
        }
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn is_mobile(&self, id: AgentId) -> bool {
        id.index() < self.mobile_count
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> {
        (0..self.n()).map(AgentId::from_index)
    }

    pub fn mobile_agents(&self) -> impl Iterator<Item = AgentId> {
        (0..self.mobile_count).map(AgentId::from_index)
    }

    /// Behavior of any agent; static nodes count as permanently swarming.
    pub fn behavior_of(&self, id: AgentId) -> BehaviorState {
        self.behavior
            .get(id.index())
            .copied()
            .unwrap_or(BehaviorState::Swarming)
    }

    pub fn shares_flow(&self, i: AgentId, j: AgentId) -> bool {
        !self.membership[i.index()].is_disjoint(&self.membership[j.index()])
    }
}
