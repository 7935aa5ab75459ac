//! Tick loop: events, ICP cadence, PCP control, integration, link update and
//! metric recording.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geom::Vec2;
use crate::graph;
use crate::icp::{self, IcpCommand, Network};
use crate::link;
use crate::model::{
    validate_scenario, AgentId, BehaviorState, EventKind, Flow, FlowId, Scenario, WorldState,
};
use crate::pcp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow: FlowId,
    /// ETX along the cheapest route through the flow's members; zero for
    /// inactive flows.
    pub cost: f64,
    pub active: bool,
    /// Largest relative deviation of a hop from the equal split; zero for
    /// inactive flows.
    pub spacing_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub flows: Vec<FlowMetrics>,
    pub connected: bool,
    pub icp_ran: bool,
    /// Connectivity of the flow members plus bridges, when the ICP ran.
    pub core_connected: Option<bool>,
    pub commands: Vec<IcpCommand>,
    /// Links with an active deletion predicate that were lost anyway.
    pub retention_violations: usize,
    /// Present on ticks selected by the position stride.
    pub positions: Option<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub flow_ids: Vec<FlowId>,
    pub records: Vec<TickRecord>,
}

/// Options that shape what gets recorded; they never change the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub exec: Execution,
    /// Keep positions every `stride` ticks (0 disables).
    pub stride: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            exec: Execution::default(),
            stride: 10,
        }
    }
}

pub struct Simulator {
    scenario: Scenario,
    flows: Vec<Flow>,
    state: WorldState,
    events: BTreeMap<u64, Vec<(FlowId, EventKind)>>,
    opts: RunOptions,
    icp_requested: bool,
}

/// Ticks a commanded agent may go without getting closer to its waypoint
/// before the command is dropped.
pub const STALL_TICKS: u64 = 500;
const STALL_MIN_GAIN: f64 = 1e-3;

impl Simulator {
    pub fn new(scenario: &Scenario, opts: RunOptions) -> Result<Self> {
        let violations = validate_scenario(scenario);
        if !violations.is_empty() {
            return Err(Error::InvalidScenario(violations));
        }
        let mut events: BTreeMap<u64, Vec<(FlowId, EventKind)>> = BTreeMap::new();
        for ev in &scenario.events {
            events.entry(ev.tick).or_default().push((ev.flow, ev.kind));
        }
        Ok(Simulator {
            flows: scenario.flows.clone(),
            state: WorldState::initial(scenario),
            scenario: scenario.clone(),
            events,
            opts,
            icp_requested: false,
        })
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    /// Advances one tick and returns its record.
    pub fn step(&mut self) -> Result<TickRecord> {
        let tick = self.state.tick;
        self.inner_step(tick).map_err(|e| Error::AtTick {
            tick,
            source: Box::new(e),
        })
    }

    fn apply_events(&mut self, tick: u64) -> bool {
        let Some(due) = self.events.get(&tick) else {
            return false;
        };
        for &(k, kind) in due {
            if let Some(fl) = self.flows.iter_mut().find(|f| f.id == k) {
                fl.active = kind == EventKind::Activate;
            }
            if kind == EventKind::Deactivate {
                for i in 0..self.state.mobile_count {
                    if self.state.command[i] == Some(k) {
                        self.state.command[i] = None;
                        self.state.waypoint[i] = None;
                        self.state.behavior[i] = BehaviorState::Swarming;
                    }
                }
                for set in &mut self.state.membership {
                    set.remove(&k);
                }
            }
        }
        true
    }

    fn run_icp(&mut self) -> Result<(bool, Vec<IcpCommand>)> {
        let busy: BTreeSet<AgentId> = (0..self.state.mobile_count)
            .filter(|&i| self.state.command[i].is_some())
            .map(AgentId::from_index)
            .collect();
        let net = Network {
            edges: &self.state.edges,
            flows: &self.flows,
            positions: &self.state.positions,
            mobile_count: self.state.mobile_count,
            params: &self.scenario.params,
        };
        let out = icp::icp_step(&net, &busy, &self.state.membership)?;
        let core_ok = graph::is_connected(&self.state.edges, &out.core);
        self.state.membership = out.assignment.membership;
        self.state.bridges = out.assignment.bridges;
        self.state.backbone_links = out
            .assignment
            .backbones
            .values()
            .flat_map(|path| path.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))))
            .collect();
        let mut commands = Vec::new();
        if let Some(c) = out.command {
            self.state.command[c.agent.index()] = Some(c.target);
            self.state.progress[c.agent.index()] = None;
            commands.push(c);
        }
        Ok((core_ok, commands))
    }

    fn inner_step(&mut self, tick: u64) -> Result<TickRecord> {
        let p = self.scenario.params;
        let event = self.apply_events(tick);
        let period = self.scenario.icp_period.max(1);
        let icp_due = event || self.icp_requested || tick.is_multiple_of(period);
        self.icp_requested = false;
        let (core_connected, commands) = if icp_due {
            let (ok, c) = self.run_icp()?;
            (Some(ok), c)
        } else {
            (None, Vec::new())
        };

        let out = pcp::pcp_step(&self.state, &self.flows, &p, self.opts.exec)?;
        let updates = out.updates;
        self.state.tethers = out.tethers;
        for (i, up) in updates.iter().enumerate() {
            self.state.behavior[i] = up.behavior;
            self.state.waypoint[i] = up.waypoint;
            if up.arrived {
                if let Some(k) = self.state.command[i].take() {
                    self.state.membership[i] = BTreeSet::from([k]);
                    self.state.progress[i] = None;
                    self.icp_requested = true;
                }
            }
        }
        pcp::integrate(&mut self.state, &updates, &p)?;

        let snapshot = &self.state;
        let (edges, violated) = graph::update_edges_with(
            &snapshot.edges,
            &snapshot.positions,
            &p,
            tick + 1,
            self.opts.exec,
            |i, j| pcp::deletion_predicate(snapshot, i, j),
        );
        self.state.edges = edges;
        self.state.tick = tick + 1;
        self.track_progress(tick);

        let all: BTreeSet<AgentId> = self.state.agents().collect();
        let record = TickRecord {
            tick,
            flows: self.flow_metrics()?,
            connected: graph::is_connected(&self.state.edges, &all),
            icp_ran: icp_due,
            core_connected,
            commands,
            retention_violations: violated.len(),
            positions: (self.opts.stride > 0 && tick.is_multiple_of(self.opts.stride))
                .then(|| self.state.positions.clone()),
        };
        Ok(record)
    }

    /// Cancels commands whose agent has not come closer to its waypoint for
    /// [`STALL_TICKS`] ticks.
    fn track_progress(&mut self, tick: u64) {
        for i in 0..self.state.mobile_count {
            let (Some(_), Some(w)) = (self.state.command[i], self.state.waypoint[i]) else {
                continue;
            };
            let d = self.state.positions[i].distance(w);
            match self.state.progress[i] {
                Some((best, _)) if d >= best - STALL_MIN_GAIN => {}
                _ => {
                    self.state.progress[i] = Some((d, tick));
                    continue;
                }
            }
            let (_, since) = self.state.progress[i].unwrap();
            if tick - since >= STALL_TICKS {
                self.state.command[i] = None;
                self.state.waypoint[i] = None;
                self.state.behavior[i] = BehaviorState::Swarming;
                self.state.progress[i] = None;
                self.icp_requested = true;
            }
        }
    }

    /// ETX of the cheapest route between the endpoints of `fl` that uses only
    /// links among its members. A flow whose members do not connect its
    /// endpoints costs [`link::MAX_ETX`].
    fn route_cost(&self, fl: &Flow) -> f64 {
        let (_, edges) = graph::flow_subgraph(&self.state.edges, &self.state.membership, fl.id);
        let sub = graph::EdgeSet::from_pairs(self.state.n(), edges);
        let net = Network {
            edges: &sub,
            flows: &self.flows,
            positions: &self.state.positions,
            mobile_count: self.state.mobile_count,
            params: &self.scenario.params,
        };
        icp::shortest_path(&net, fl.source, fl.destination, &BTreeSet::new())
            .map_or(link::MAX_ETX, |(c, _)| c)
    }

    fn flow_metrics(&self) -> Result<Vec<FlowMetrics>> {
        self.flows
            .iter()
            .map(|fl| {
                if !fl.active {
                    return Ok(FlowMetrics {
                        flow: fl.id,
                        cost: 0.0,
                        active: false,
                        spacing_err: 0.0,
                    });
                }
                Ok(FlowMetrics {
                    flow: fl.id,
                    cost: self.route_cost(fl),
                    active: true,
                    spacing_err: spacing_error(&self.state, fl)?,
                })
            })
            .collect()
    }
}

/// Orders the mobile members of `fl` along its segment and compares each hop,
/// endpoints included, with the equal split of the segment length.
pub fn spacing_error(state: &WorldState, fl: &Flow) -> Result<f64> {
    let (s, d) = fl.endpoints(&state.positions);
    let sd = d - s;
    let len = sd.norm();
    if len == 0.0 {
        return Err(Error::DegenerateFlow);
    }
    let mut along: Vec<(f64, Vec2)> = state
        .mobile_agents()
        .filter(|a| state.membership[a.index()].contains(&fl.id))
        .map(|a| {
            let x = state.positions[a.index()];
            ((x - s).dot(sd) / (len * len), x)
        })
        .collect();
    along.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ideal = len / (along.len() + 1) as f64;
    let mut points = vec![s];
    points.extend(along.into_iter().map(|(_, x)| x));
    points.push(d);
    Ok(points
        .windows(2)
        .map(|w| (w[0].distance(w[1]) - ideal).abs() / ideal)
        .fold(0.0, f64::max))
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario, opts: RunOptions) -> Result<Trace> {
    let mut sim = Simulator::new(scenario, opts)?;
    let mut trace = Trace {
        flow_ids: scenario.flows.iter().map(|f| f.id).collect(),
        records: Vec::with_capacity(scenario.max_ticks as usize),
    };
    for _ in 0..scenario.max_ticks {
        trace.records.push(sim.step()?);
    }
    Ok(trace)
}

/// Runs independent scenarios, in parallel when enabled. Each run itself uses
/// sequential per-agent evaluation to avoid nested fan-out.
pub fn run_batch(scenarios: &[Scenario], opts: RunOptions) -> Vec<Result<Trace>> {
    let inner = RunOptions {
        exec: Execution::Sequential,
        ..opts
    };
    opts.exec.map_slice(scenarios, |sc| run(sc, inner))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub start_tick: u64,
    pub end_tick: u64,
    pub active_flows: Vec<FlowId>,
    /// First tick from which every active flow cost stays within 0.1% over
    /// the following window.
    pub convergence_tick: Option<u64>,
    pub final_cost: BTreeMap<FlowId, f64>,
    pub commands: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ticks: usize,
    pub final_cost: BTreeMap<FlowId, f64>,
    pub always_connected: bool,
    pub disconnected_ticks: usize,
    pub core_always_connected: bool,
    pub max_spacing_err: f64,
    pub commands: usize,
    pub retention_violations: usize,
    pub phases: Vec<PhaseSummary>,
}

pub const CONVERGENCE_WINDOW: usize = 50;
pub const CONVERGENCE_TOL: f64 = 1e-3;

fn active_set(r: &TickRecord) -> Vec<FlowId> {
    r.flows.iter().filter(|f| f.active).map(|f| f.flow).collect()
}

fn costs(r: &TickRecord) -> BTreeMap<FlowId, f64> {
    r.flows
        .iter()
        .filter(|f| f.active)
        .map(|f| (f.flow, f.cost))
        .collect()
}

fn settled(window: &[TickRecord]) -> bool {
    let first = costs(&window[0]);
    window.iter().all(|r| {
        costs(r).iter().all(|(k, &c)| {
            let c0 = first.get(k).copied().unwrap_or(c);
            let scale = c0.abs().max(1e-12);
            (c - c0).abs() / scale < CONVERGENCE_TOL
        })
    })
}

/// First record index from which the cost stays within the tolerance for a
/// full window.
pub fn convergence_index(records: &[TickRecord]) -> Option<usize> {
    if records.len() < CONVERGENCE_WINDOW {
        return None;
    }
    (0..=records.len() - CONVERGENCE_WINDOW).find(|&s| settled(&records[s..s + CONVERGENCE_WINDOW]))
}

/// Splits a trace into phases at every change of the active flow set.
pub fn phases(trace: &Trace) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..trace.records.len() {
        if active_set(&trace.records[i]) != active_set(&trace.records[i - 1]) {
            out.push(start..i);
            start = i;
        }
    }
    if !trace.records.is_empty() {
        out.push(start..trace.records.len());
    }
    out
}

pub fn summarize(trace: &Trace) -> Summary {
    let recs = &trace.records;
    let phase_summaries = phases(trace)
        .into_iter()
        .map(|range| {
            let slice = &recs[range.clone()];
            let last = &slice[slice.len() - 1];
            PhaseSummary {
                start_tick: slice[0].tick,
                end_tick: last.tick,
                active_flows: active_set(last),
                convergence_tick: convergence_index(slice).map(|i| slice[i].tick),
                final_cost: costs(last),
                commands: slice.iter().map(|r| r.commands.len()).sum(),
            }
        })
        .collect();
    Summary {
        ticks: recs.len(),
        final_cost: recs.last().map(costs).unwrap_or_default(),
        always_connected: recs.iter().all(|r| r.connected),
        disconnected_ticks: recs.iter().filter(|r| !r.connected).count(),
        core_always_connected: recs.iter().all(|r| r.core_connected != Some(false)),
        max_spacing_err: recs
            .iter()
            .flat_map(|r| r.flows.iter().map(|f| f.spacing_err))
            .fold(0.0, f64::max),
        commands: recs.iter().map(|r| r.commands.len()).sum(),
        retention_violations: recs.iter().map(|r| r.retention_violations).sum(),
        phases: phase_summaries,
    }
}
