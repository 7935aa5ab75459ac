//! Physical control plane: behavior switching and potential-field control of
//! the mobile agents.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geom::Vec2;
use crate::model::{AgentId, BehaviorState, Flow, FlowId, Params, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Saturated total input.
    pub u: Vec2,
    /// Waypoint seeking term.
    pub u_e: Vec2,
    /// Dispersion term.
    pub u_o: Vec2,
    /// Sum of negated potential gradients (retention and collision).
    pub u_pot: Vec2,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborClass {
    pub attract: BTreeSet<AgentId>,
    pub repel: BTreeSet<AgentId>,
    pub collide: BTreeSet<AgentId>,
}

fn ordered(i: AgentId, j: AgentId) -> (AgentId, AgentId) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Link deletion predicate: true when losing the link `(i, j)` would violate
/// connectivity. Static nodes count as swarming. Tethers always qualify.
pub fn deletion_predicate(state: &WorldState, i: AgentId, j: AgentId) -> bool {
    flow_retention(state, i, j) || state.tethers.contains(&ordered(i, j))
}

/// The flow and bridge part of the deletion predicate. Within a flow only the
/// hops of its backbone are protected; other links between members may lapse.
pub fn flow_retention(state: &WorldState, i: AgentId, j: AgentId) -> bool {
    let swarming = state.behavior_of(i) == BehaviorState::Swarming
        || state.behavior_of(j) == BehaviorState::Swarming;
    swarming
        && (state.backbone_links.contains(&ordered(i, j))
            || state.bridges[i.index()]
            || state.bridges[j.index()])
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Shortest links that join the pieces left by [`flow_retention`] into one
/// spanning structure, chosen like a minimum spanning forest. Agents that
/// belong to no flow (migrating relays, idle statics) stay attached to the
/// network through these, and a migrating relay hands over to whichever
/// neighbor is nearest as it travels.
pub fn compute_tethers(state: &WorldState) -> BTreeSet<(AgentId, AgentId)> {
    let n = state.n();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut rest = Vec::new();
    for (i, j) in state.edges.iter() {
        if flow_retention(state, i, j) {
            let (a, b) = (find(&mut parent, i.index()), find(&mut parent, j.index()));
            parent[a] = b;
        } else {
            let d = state.positions[i.index()].distance(state.positions[j.index()]);
            rest.push((d, i, j));
        }
    }
    rest.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut tethers = BTreeSet::new();
    for (_, i, j) in rest {
        let (a, b) = (find(&mut parent, i.index()), find(&mut parent, j.index()));
        if a != b {
            parent[a] = b;
            tethers.insert((i, j));
        }
    }
    tethers
}

/// Sorts the surroundings of mobile agent `i`. Link additions are always
/// allowed, so nothing is ever repelled.
pub fn classify_neighbors(i: AgentId, state: &WorldState, p: &Params) -> NeighborClass {
    let xi = state.positions[i.index()];
    let mut class = NeighborClass::default();
    for &j in state.edges.adjacent(i) {
        let d = xi.distance(state.positions[j.index()]);
        if d > p.rho1 && d <= p.rho2 && deletion_predicate(state, i, j) {
            class.attract.insert(j);
        }
    }
    for j in state.agents() {
        if j != i && xi.distance(state.positions[j.index()]) <= p.rho0 {
            class.collide.insert(j);
        }
    }
    class
}

/// Retention potential, zero at `rho1` and unbounded toward `rho2`.
pub fn attract_potential(d: f64, p: &Params) -> f64 {
    1.0 / (p.rho2 * p.rho2 - d * d) - 1.0 / (p.rho2 * p.rho2 - p.rho1 * p.rho1)
}

/// Denial potential, zero at `rho2` and unbounded toward `rho1`.
pub fn repel_potential(d: f64, p: &Params) -> f64 {
    1.0 / (d * d - p.rho1 * p.rho1) - 1.0 / (p.rho2 * p.rho2 - p.rho1 * p.rho1)
}

/// Collision potential, zero at `rho0` and unbounded toward contact.
pub fn collision_potential(d: f64, p: &Params) -> f64 {
    1.0 / (d * d) - 1.0 / (p.rho0 * p.rho0)
}

/// Gradient of the retention potential with respect to `x_i`, where
/// `x_ij = x_i - x_j`.
pub fn attract_gradient(x_ij: Vec2, p: &Params) -> Result<Vec2> {
    let d = x_ij.norm();
    if !(d >= p.rho1 && d < p.rho2) {
        return Err(Error::PotentialDomain {
            distance: d,
            range: "[rho1, rho2)",
        });
    }
    let den = p.rho2 * p.rho2 - d * d;
    Ok(x_ij * (2.0 / (den * den)))
}

pub fn repel_gradient(x_ij: Vec2, p: &Params) -> Result<Vec2> {
    let d = x_ij.norm();
    if !(d > p.rho1 && d < p.rho2) {
        return Err(Error::PotentialDomain {
            distance: d,
            range: "(rho1, rho2)",
        });
    }
    let den = d * d - p.rho1 * p.rho1;
    Ok(x_ij * (-2.0 / (den * den)))
}

pub fn collision_gradient(x_ij: Vec2, p: &Params) -> Result<Vec2> {
    let d2 = x_ij.norm_sq();
    if d2 == 0.0 {
        return Err(Error::Coincident);
    }
    if d2.sqrt() >= p.rho0 {
        return Err(Error::PotentialDomain {
            distance: d2.sqrt(),
            range: "(0, rho0)",
        });
    }
    Ok(x_ij * (-2.0 / (d2 * d2)))
}

/// Retention gradient that stays finite up to and including `rho2`; the
/// speed saturation bounds the resulting input anyway.
fn retention_gradient(x_ij: Vec2, p: &Params) -> Vec2 {
    let d2 = x_ij.norm_sq();
    let den = (p.rho2 * p.rho2 - d2).max(1e-9 * p.rho2 * p.rho2);
    x_ij * (2.0 / (den * den))
}

/// Damped waypoint seeking: unit vector toward `x_w` minus velocity. The unit
/// term vanishes at the waypoint itself.
pub fn waypoint_control(x: Vec2, x_w: Vec2, v: Vec2) -> Vec2 {
    let diff = x_w - x;
    let n = diff.norm();
    let dir = if n > 0.0 { diff * (1.0 / n) } else { Vec2::ZERO };
    dir - v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub tau: f64,
    pub point: Vec2,
    pub on_path: bool,
}

/// Projects `x` onto the segment of `flow`. Projections falling outside the
/// segment are pulled back inside by `alpha * tau` of its length so they never
/// land on an endpoint.
pub fn project_to_flow(x: Vec2, flow: &Flow, positions: &[Vec2], p: &Params) -> Result<Projection> {
    let (s, d) = flow.endpoints(positions);
    let sd = d - s;
    let len_sq = sd.norm_sq();
    if len_sq == 0.0 {
        return Err(Error::DegenerateFlow);
    }
    let tau = (x - s).dot(sd) / len_sq;
    let point = if tau < 0.0 {
        s - sd * (p.alpha * tau)
    } else if tau > 1.0 {
        d - sd * (p.alpha * tau)
    } else {
        s + sd * tau
    };
    Ok(Projection {
        tau,
        point,
        on_path: point.distance(x) <= p.eps_f,
    })
}

/// Neighbors `i` disperses against: co-members that are swarming or static.
fn dispersion_set(i: AgentId, state: &WorldState) -> Vec<AgentId> {
    state
        .edges
        .adjacent(i)
        .iter()
        .copied()
        .filter(|&j| {
            state.shares_flow(i, j)
                && (!state.is_mobile(j) || state.behavior_of(j) == BehaviorState::Swarming)
        })
        .collect()
}

/// Inverse-square dispersion among flow co-members. Terms from static
/// neighbors are scaled by `p.static_gain`.
pub fn dispersion_control(i: AgentId, state: &WorldState, p: &Params) -> Result<Vec2> {
    let xi = state.positions[i.index()];
    let mut u = Vec2::ZERO;
    for j in dispersion_set(i, state) {
        let x_ij = xi - state.positions[j.index()];
        let d2 = x_ij.norm_sq();
        if d2 == 0.0 {
            return Err(Error::Singular(i, j));
        }
        let term = x_ij * (2.0 / (d2 * d2));
        u += if state.is_mobile(j) {
            term
        } else {
            term * p.static_gain
        };
    }
    Ok(u)
}

/// Behavior, waypoint and control chosen for one mobile agent in one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentUpdate {
    pub control: ControlInput,
    pub behavior: BehaviorState,
    pub waypoint: Option<Vec2>,
    /// Reached its waypoint this tick.
    pub arrived: bool,
}

fn flow_by_id(flows: &[Flow], k: FlowId) -> Option<&Flow> {
    flows.iter().find(|f| f.id == k)
}

/// Command and on-path handling: decides the behavior each agent runs this
/// tick before any control is computed.
fn select_behavior(
    i: AgentId,
    state: &WorldState,
    flows: &[Flow],
    p: &Params,
) -> Result<(BehaviorState, Option<Vec2>)> {
    let idx = i.index();
    let mut behavior = state.behavior[idx];
    let mut waypoint = state.waypoint[idx];
    if let Some(target) = state.command[idx] {
        let fl = flow_by_id(flows, target).ok_or(Error::UnknownFlow(target))?;
        let (s, d) = fl.endpoints(&state.positions);
        return Ok((BehaviorState::Reconfigure, Some(s.midpoint(d))));
    }
    let member_flows: Vec<&Flow> = state.membership[idx]
        .iter()
        .filter_map(|&k| flow_by_id(flows, k))
        .filter(|f| f.active)
        .collect();
    if !member_flows.is_empty() && behavior != BehaviorState::Reconfigure {
        let x = state.positions[idx];
        let mut nearest: Option<Projection> = None;
        for fl in member_flows {
            let pr = project_to_flow(x, fl, &state.positions, p)?;
            if nearest.is_none_or(|n| pr.point.distance(x) < n.point.distance(x)) {
                nearest = Some(pr);
            }
        }
        let pr = nearest.expect("at least one member flow");
        if pr.on_path {
            behavior = BehaviorState::Swarming;
            waypoint = None;
        } else {
            behavior = BehaviorState::Reconfigure;
            waypoint = Some(pr.point);
        }
    }
    if behavior == BehaviorState::Reconfigure && waypoint.is_none() {
        behavior = BehaviorState::Swarming;
    }
    Ok((behavior, waypoint))
}

fn agent_control(
    i: AgentId,
    state: &WorldState,
    behavior: BehaviorState,
    waypoint: Option<Vec2>,
    p: &Params,
) -> Result<AgentUpdate> {
    let x = state.positions[i.index()];
    let mut u_e = Vec2::ZERO;
    let mut u_o = Vec2::ZERO;
    let mut next = behavior;
    let mut next_wp = waypoint;
    let mut arrived = false;
    match (behavior, waypoint) {
        (BehaviorState::Swarming, _) => u_o = dispersion_control(i, state, p)?,
        (BehaviorState::Reconfigure, Some(w)) => {
            u_e = waypoint_control(x, w, state.velocities[i.index()]);
            if w.distance(x) <= p.eps_w {
                next = BehaviorState::Swarming;
                next_wp = None;
                arrived = true;
            }
        }
        (BehaviorState::Reconfigure, None) => unreachable!("select_behavior assigns a waypoint"),
    }
    let class = classify_neighbors(i, state, p);
    let mut u_pot = Vec2::ZERO;
    for &j in &class.attract {
        u_pot -= retention_gradient(x - state.positions[j.index()], p);
    }
    for &j in &class.collide {
        let x_ij = x - state.positions[j.index()];
        if x_ij.norm_sq() == 0.0 {
            return Err(Error::Singular(i, j));
        }
        let d2 = x_ij.norm_sq();
        u_pot += x_ij * (2.0 / (d2 * d2));
    }
    let raw = u_e + u_o + u_pot;
    if !raw.is_finite() {
        return Err(Error::NonFiniteControl(i));
    }
    Ok(AgentUpdate {
        control: ControlInput {
            u: raw.clamp_norm(p.vmax),
            u_e,
            u_o,
            u_pot,
        },
        behavior: next,
        waypoint: next_wp,
        arrived,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcpOutput {
    /// One entry per mobile agent, in id order.
    pub updates: Vec<AgentUpdate>,
    /// Tethers in force this tick.
    pub tethers: BTreeSet<(AgentId, AgentId)>,
}

/// Runs the switching logic and computes saturated controls for every mobile
/// agent from the same snapshot.
pub fn pcp_step(state: &WorldState, flows: &[Flow], p: &Params, exec: Execution) -> Result<PcpOutput> {
    let m = state.mobile_count;
    let chosen = exec.map(m, |i| select_behavior(AgentId::from_index(i), state, flows, p));
    let chosen: Vec<(BehaviorState, Option<Vec2>)> = chosen.into_iter().collect::<Result<_>>()?;
    // Controls see everyone's behavior for this tick.
    let mut view = state.clone();
    for (i, &(b, w)) in chosen.iter().enumerate() {
        view.behavior[i] = b;
        view.waypoint[i] = w;
    }
    view.tethers = compute_tethers(&view);
    let view = &view;
    let updates = exec
        .map(m, |i| {
            let (b, w) = chosen[i];
            agent_control(AgentId::from_index(i), view, b, w, p)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(PcpOutput {
        updates,
        tethers: view.tethers.clone(),
    })
}

/// Explicit Euler step for mobile agents; static nodes do not move.
pub fn integrate(state: &mut WorldState, updates: &[AgentUpdate], p: &Params) -> Result<()> {
    for (i, up) in updates.iter().enumerate() {
        let u = up.control.u;
        if !u.is_finite() {
            return Err(Error::NonFiniteControl(AgentId::from_index(i)));
        }
        state.positions[i] += u * p.dt;
        state.velocities[i] = u;
    }
    Ok(())
}
