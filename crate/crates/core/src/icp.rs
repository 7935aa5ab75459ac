//! Information control plane.
//!
//! Each invocation rebuilds flow membership from scratch:
//!
//! 1. every active flow gets the minimum-ETX path between its endpoints as
//!    its backbone;
//! 2. a supergraph contracting each flow into one vertex exposes the agents
//!    that keep flows connected to each other (bridges);
//! 3. remaining mobile agents are attached provisionally to the flow they
//!    contribute most to, and become candidates for detachment;
//! 4. the cheapest detachment is paired with the most useful attachment and,
//!    if worthwhile, emitted as a reconfiguration command.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::alloc::ideal_flow_cost;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::graph::{self, EdgeSet};
use crate::link::weight_between;
use crate::model::{AgentId, Flow, FlowId, Params};

/// Read-only view of the network the ICP reasons about.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    pub edges: &'a EdgeSet,
    pub flows: &'a [Flow],
    pub positions: &'a [Vec2],
    pub mobile_count: usize,
    pub params: &'a Params,
}

impl<'a> Network<'a> {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn is_mobile(&self, a: AgentId) -> bool {
        a.index() < self.mobile_count
    }

    pub fn active_flows(&self) -> impl Iterator<Item = &'a Flow> {
        self.flows.iter().filter(|f| f.active)
    }

    fn flow(&self, k: FlowId) -> Option<&'a Flow> {
        self.flows.iter().find(|f| f.id == k)
    }

    fn weight(&self, i: AgentId, j: AgentId) -> f64 {
        weight_between(self.positions[i.index()], self.positions[j.index()], self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowAssignment {
    /// Flows each agent serves, including provisional attachments.
    pub membership: Vec<BTreeSet<FlowId>>,
    /// Minimum-ETX path per active flow, source first.
    pub backbones: BTreeMap<FlowId, Vec<AgentId>>,
    pub bridges: Vec<bool>,
    /// Agents attached provisionally, free to be moved elsewhere.
    pub detachable: BTreeMap<FlowId, BTreeSet<AgentId>>,
}

impl FlowAssignment {
    /// Membership implied by the backbones alone.
    pub fn backbone_membership(&self) -> Vec<BTreeSet<FlowId>> {
        membership_from_paths(self.membership.len(), &self.backbones)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcpCommand {
    pub agent: AgentId,
    pub target: FlowId,
}

/// Supergraph vertex. Agents order before flows, matching their id ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Agent(AgentId),
    Flow(FlowId),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuperGraph {
    pub vertices: BTreeSet<Node>,
    pub edges: BTreeSet<(Node, Node)>,
}

impl SuperGraph {
    fn add_edge(&mut self, u: Node, v: Node) {
        if u != v {
            self.edges.insert(if u < v { (u, v) } else { (v, u) });
        }
    }

    fn adjacency(&self) -> BTreeMap<Node, BTreeSet<Node>> {
        let mut adj: BTreeMap<Node, BTreeSet<Node>> =
            self.vertices.iter().map(|&v| (v, BTreeSet::new())).collect();
        for &(u, v) in &self.edges {
            adj.entry(u).or_default().insert(v);
            adj.entry(v).or_default().insert(u);
        }
        adj
    }
}

fn membership_from_paths(
    n: usize,
    paths: &BTreeMap<FlowId, Vec<AgentId>>,
) -> Vec<BTreeSet<FlowId>> {
    let mut m = vec![BTreeSet::new(); n];
    for (&k, path) in paths {
        for a in path {
            m[a.index()].insert(k);
        }
    }
    m
}

/// Minimum-ETX path from `src` to `dst` avoiding `avoid` as intermediate
/// vertices. Equal-cost paths are ordered by their vertex-id sequence and the
/// smallest wins.
pub fn shortest_path(
    net: &Network,
    src: AgentId,
    dst: AgentId,
    avoid: &BTreeSet<AgentId>,
) -> Option<(f64, Vec<AgentId>)> {
    let n = net.n();
    let mut dist = vec![f64::INFINITY; n];
    let mut path: Vec<Option<Vec<AgentId>>> = vec![None; n];
    let mut done = vec![false; n];
    dist[src.index()] = 0.0;
    path[src.index()] = Some(vec![src]);
    loop {
        let mut next: Option<usize> = None;
        for v in 0..n {
            if done[v] || path[v].is_none() {
                continue;
            }
            next = match next {
                None => Some(v),
                Some(u) if dist[v] < dist[u] => Some(v),
                Some(u) if dist[v] == dist[u] && path[v] < path[u] => Some(v),
                keep => keep,
            };
        }
        let Some(u) = next else { break };
        done[u] = true;
        let ua = AgentId::from_index(u);
        if ua == dst {
            break;
        }
        if ua != src && avoid.contains(&ua) {
            continue;
        }
        for &v in net.edges.adjacent(ua) {
            if done[v.index()] {
                continue;
            }
            let cand = dist[u] + net.weight(ua, v);
            let better = cand < dist[v.index()]
                || (cand == dist[v.index()] && {
                    let mut p = path[u].clone().unwrap();
                    p.push(v);
                    Some(p) < path[v.index()]
                });
            if better {
                let mut p = path[u].clone().unwrap();
                p.push(v);
                dist[v.index()] = cand;
                path[v.index()] = Some(p);
            }
        }
    }
    path[dst.index()].take().map(|p| (dist[dst.index()], p))
}

/// Backbone membership for every active flow. Agents in `avoid` are routed
/// around when possible.
pub fn initial_membership(
    net: &Network,
    avoid: &BTreeSet<AgentId>,
) -> Result<(Vec<BTreeSet<FlowId>>, BTreeMap<FlowId, Vec<AgentId>>)> {
    let mut paths = BTreeMap::new();
    for fl in net.active_flows() {
        let found = shortest_path(net, fl.source, fl.destination, avoid)
            .or_else(|| shortest_path(net, fl.source, fl.destination, &BTreeSet::new()));
        let (_, p) = found.ok_or(Error::FlowUnreachable(fl.id))?;
        paths.insert(fl.id, p);
    }
    Ok((membership_from_paths(net.n(), &paths), paths))
}

/// Contracts every active flow's members into one vertex.
///
/// Agent vertices are agents without membership that have at least two
/// neighbors (leaves cannot sit inside a path). Besides the adjacency among
/// agent vertices and from agent vertices to flows, two flow vertices are
/// joined when an agent serves both or when members of the two flows are
/// neighbors.
pub fn build_supergraph(net: &Network, membership: &[BTreeSet<FlowId>]) -> SuperGraph {
    let mut sg = SuperGraph::default();
    let active: BTreeSet<FlowId> = net.active_flows().map(|f| f.id).collect();
    for &k in &active {
        sg.vertices.insert(Node::Flow(k));
    }
    let flows_of = |a: AgentId| -> Vec<FlowId> {
        membership[a.index()]
            .iter()
            .copied()
            .filter(|k| active.contains(k))
            .collect()
    };
    let candidate: Vec<bool> = (0..net.n())
        .map(|i| {
            let a = AgentId::from_index(i);
            flows_of(a).is_empty() && net.edges.degree(a) >= 2
        })
        .collect();
    for i in 0..net.n() {
        if candidate[i] {
            sg.vertices.insert(Node::Agent(AgentId::from_index(i)));
        }
    }
    for i in 0..net.n() {
        let a = AgentId::from_index(i);
        let mine = flows_of(a);
        if candidate[i] {
            for &b in net.edges.adjacent(a) {
                if candidate[b.index()] {
                    sg.add_edge(Node::Agent(a), Node::Agent(b));
                }
                for k in flows_of(b) {
                    sg.add_edge(Node::Agent(a), Node::Flow(k));
                }
            }
        }
        for (x, &k) in mine.iter().enumerate() {
            for &l in &mine[x + 1..] {
                sg.add_edge(Node::Flow(k), Node::Flow(l));
            }
            for &b in net.edges.adjacent(a) {
                for l in flows_of(b) {
                    sg.add_edge(Node::Flow(k), Node::Flow(l));
                }
            }
        }
    }
    sg
}

/// Shortest hop path in the supergraph. Breadth-first search over sorted
/// adjacency yields the lexicographically smallest among shortest paths.
fn supergraph_path(
    adj: &BTreeMap<Node, BTreeSet<Node>>,
    from: Node,
    to: Node,
) -> Option<Vec<Node>> {
    let mut parent: BTreeMap<Node, Node> = BTreeMap::new();
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            let mut path = vec![to];
            let mut cur = to;
            while let Some(&p) = parent.get(&cur) {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for &v in adj.get(&u).into_iter().flatten() {
            if seen.insert(v) {
                parent.insert(v, u);
                queue.push_back(v);
            }
        }
    }
    None
}

/// Flags every agent vertex on a shortest supergraph path between a pair of
/// active flows.
pub fn detect_bridges(sg: &SuperGraph, flows: &[Flow], n: usize) -> Result<Vec<bool>> {
    let mut bridges = vec![false; n];
    let active: Vec<FlowId> = flows.iter().filter(|f| f.active).map(|f| f.id).collect();
    let adj = sg.adjacency();
    for (x, &k) in active.iter().enumerate() {
        for &l in &active[x + 1..] {
            let path = supergraph_path(&adj, Node::Flow(k), Node::Flow(l))
                .ok_or(Error::SupergraphDisconnected(k, l))?;
            for node in path {
                if let Node::Agent(a) = node {
                    bridges[a.index()] = true;
                }
            }
        }
    }
    Ok(bridges)
}

/// All flow members plus bridges. Fails if the induced subgraph is not
/// connected.
pub fn connected_core(
    es: &EdgeSet,
    membership: &[BTreeSet<FlowId>],
    bridges: &[bool],
) -> Result<BTreeSet<AgentId>> {
    let core: BTreeSet<AgentId> = (0..membership.len())
        .filter(|&i| !membership[i].is_empty() || bridges[i])
        .map(AgentId::from_index)
        .collect();
    if graph::is_connected(es, &core) {
        Ok(core)
    } else {
        Err(Error::CoreDisconnected)
    }
}

/// Flow an unassigned agent would help most: the largest sum of reciprocal
/// ETX to that flow's members within interaction range. Agents out of range of
/// every flow go to the flow whose segment is nearest. Ties pick the lowest id.
pub fn most_contributed_flow(
    net: &Network,
    membership: &[BTreeSet<FlowId>],
    i: AgentId,
) -> Option<FlowId> {
    let x = net.positions[i.index()];
    let mut best: Option<(FlowId, f64)> = None;
    for fl in net.active_flows() {
        let score: f64 = membership
            .iter()
            .enumerate()
            .filter(|(j, m)| *j != i.index() && m.contains(&fl.id))
            .map(|(j, _)| net.positions[j])
            .filter(|y| x.distance(*y) <= net.params.rho2)
            .map(|y| 1.0 / weight_between(x, y, net.params))
            .sum();
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((fl.id, score));
        }
    }
    match best {
        Some((k, s)) if s > 0.0 => Some(k),
        Some(_) => {
            let mut near: Option<(FlowId, f64)> = None;
            for fl in net.active_flows() {
                let (s, d) = fl.endpoints(net.positions);
                let dist = x.distance_to_segment(s, d);
                if near.is_none_or(|(_, b)| dist < b) {
                    near = Some((fl.id, dist));
                }
            }
            near.map(|(k, _)| k)
        }
        None => None,
    }
}

/// Attaches every idle mobile agent (no membership, not a bridge, not in
/// `busy`) to a flow, recording it as detachable.
///
/// An agent whose `prior` membership is exactly one active flow stays with
/// it, so a relay that just arrived where it was sent is not immediately
/// credited to a neighboring flow. Everyone else goes to the flow it
/// contributes most to. `prior` may be shorter than the agent count.
pub fn assign_detachable(
    net: &Network,
    assignment: &mut FlowAssignment,
    busy: &BTreeSet<AgentId>,
    prior: &[BTreeSet<FlowId>],
) {
    let backbone = assignment.membership.clone();
    let idle: Vec<AgentId> = (0..net.mobile_count)
        .map(AgentId::from_index)
        .filter(|a| {
            backbone[a.index()].is_empty() && !assignment.bridges[a.index()] && !busy.contains(a)
        })
        .collect();
    for a in idle {
        let kept = prior
            .get(a.index())
            .filter(|m| m.len() == 1)
            .and_then(|m| m.first().copied())
            .filter(|&k| net.active_flows().any(|fl| fl.id == k));
        if let Some(k) = kept.or_else(|| most_contributed_flow(net, &backbone, a)) {
            assignment.membership[a.index()].insert(k);
            assignment.detachable.entry(k).or_default().insert(a);
        }
    }
}

/// Detachable agents with their in-flow ETX sum, cheapest first (ties by id).
pub fn rank_detachments(net: &Network, assignment: &FlowAssignment) -> Vec<(AgentId, FlowId, f64)> {
    let mut ranked = Vec::new();
    for (&k, agents) in &assignment.detachable {
        for &a in agents {
            let score: f64 = graph::flow_neighbors(net.edges, &assignment.membership, a)
                .expect("agent ids come from the same network")
                .into_iter()
                .map(|j| net.weight(a, j))
                .sum();
            ranked.push((a, k, score));
        }
    }
    ranked.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)));
    ranked
}

/// Provisionally assigns idle agents and returns the detachable agent with the
/// smallest sum of ETX weights to its flow neighbors.
pub fn best_detachment(
    net: &Network,
    assignment: &mut FlowAssignment,
    busy: &BTreeSet<AgentId>,
    prior: &[BTreeSet<FlowId>],
) -> Option<(AgentId, f64)> {
    assign_detachable(net, assignment, busy, prior);
    rank_detachments(net, assignment)
        .first()
        .map(|&(a, _, s)| (a, s))
}

/// Attachment score of a flow: `(|V|+1) * sum_j 1/|x_j - midpoint|` over its
/// members, with distances floored at `eps_f`.
pub fn attachment_score(net: &Network, membership: &[BTreeSet<FlowId>], fl: &Flow) -> f64 {
    let (s, d) = fl.endpoints(net.positions);
    let mid = s.midpoint(d);
    let mut count = 0usize;
    let mut sum = 0.0;
    for (j, m) in membership.iter().enumerate() {
        if m.contains(&fl.id) {
            count += 1;
            sum += 1.0 / net.positions[j].distance(mid).max(net.params.eps_f);
        }
    }
    (count + 1) as f64 * sum
}

/// Active flow with the highest attachment score (ties by lowest id).
pub fn best_attachment(net: &Network, membership: &[BTreeSet<FlowId>]) -> Option<(FlowId, f64)> {
    let mut best: Option<(FlowId, f64)> = None;
    for fl in net.active_flows() {
        let a = attachment_score(net, membership, fl);
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((fl.id, a));
        }
    }
    best
}

/// Relay count per active flow. A relay serving several flows is counted
/// once, for the one whose segment lies nearest (ties to the lower id), so a
/// flow routed over another flow's chain does not look populated.
fn mobile_counts(net: &Network, membership: &[BTreeSet<FlowId>]) -> BTreeMap<FlowId, f64> {
    let mut counts: BTreeMap<FlowId, f64> = net.active_flows().map(|f| (f.id, 0.0)).collect();
    for (i, m) in membership[..net.mobile_count].iter().enumerate() {
        let x = net.positions[i];
        let nearest = m
            .iter()
            .filter_map(|&k| net.flow(k))
            .filter(|fl| fl.active)
            .map(|fl| {
                let (s, d) = fl.endpoints(net.positions);
                (x.distance_to_segment(s, d), fl.id)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, k)) = nearest {
            *counts.entry(k).or_default() += 1.0;
        }
    }
    counts
}

/// Ideal cost at a fractional relay count, linear between integer counts.
fn ideal_cost_at(len: f64, m: f64, p: &crate::Params) -> f64 {
    let lo = m.floor();
    let t = m - lo;
    let below = ideal_flow_cost(len, lo as usize, p);
    if t == 0.0 {
        below
    } else {
        below + t * (ideal_flow_cost(len, lo as usize + 1, p) - below)
    }
}

/// Change in ideal total cost when one relay moves from `from` to `to`.
fn move_gain(net: &Network, counts: &BTreeMap<FlowId, f64>, from: FlowId, to: FlowId) -> f64 {
    let p = net.params;
    let len = |k: FlowId| net.flow(k).map(|f| f.length(net.positions)).unwrap_or(0.0);
    let (mf, mt) = (counts[&from], counts[&to]);
    if mf < 1.0 {
        return f64::INFINITY;
    }
    let rise = ideal_cost_at(len(from), mf - 1.0, p) - ideal_cost_at(len(from), mf, p);
    let fall = ideal_cost_at(len(to), mt, p) - ideal_cost_at(len(to), mt + 1.0, p);
    rise - fall
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpOutcome {
    pub assignment: FlowAssignment,
    pub command: Option<IcpCommand>,
    /// Cheapest detachment considered, with its score.
    pub detachment: Option<(AgentId, f64)>,
    /// Best attachment overall, with its score.
    pub attachment: Option<(FlowId, f64)>,
    pub core: BTreeSet<AgentId>,
}

/// One ICP invocation.
///
/// `busy` holds agents still executing an earlier command. They are routed
/// around, never reassigned, and while any exist no new command is issued.
/// A command requires the attachment score to exceed `beta` times the
/// detachment score and the move to lower the ideal total cost given the
/// current per-flow relay counts. `prior` is the membership left by the
/// previous invocation (see [`assign_detachable`]).
pub fn icp_step(
    net: &Network,
    busy: &BTreeSet<AgentId>,
    prior: &[BTreeSet<FlowId>],
) -> Result<IcpOutcome> {
    let (membership, backbones) = initial_membership(net, busy)?;
    let sg = build_supergraph(net, &membership);
    let bridges = detect_bridges(&sg, net.flows, net.n())?;
    let core = connected_core(net.edges, &membership, &bridges)?;
    let mut assignment = FlowAssignment {
        membership,
        backbones,
        bridges,
        detachable: BTreeMap::new(),
    };
    assign_detachable(net, &mut assignment, busy, prior);
    let ranked = rank_detachments(net, &assignment);
    let attachment = best_attachment(net, &assignment.membership);
    let detachment = ranked.first().map(|&(a, _, s)| (a, s));

    let mut command = None;
    if busy.is_empty() {
        let counts = mobile_counts(net, &assignment.membership);
        let scores: Vec<(FlowId, f64)> = net
            .active_flows()
            .map(|fl| (fl.id, attachment_score(net, &assignment.membership, fl)))
            .collect();
        'search: for &(agent, from, d_score) in &ranked {
            let mut target: Option<(FlowId, f64)> = None;
            for &(k, a_score) in &scores {
                if k == from || move_gain(net, &counts, from, k) >= 0.0 {
                    continue;
                }
                if target.is_none_or(|(_, b)| a_score > b) {
                    target = Some((k, a_score));
                }
            }
            if let Some((k, a_score)) = target {
                if a_score > net.params.beta * d_score {
                    command = Some(IcpCommand { agent, target: k });
                    break 'search;
                }
            }
        }
    }
    if let Some(c) = command {
        assignment.membership[c.agent.index()].clear();
        for set in assignment.detachable.values_mut() {
            set.remove(&c.agent);
        }
    }
    Ok(IcpOutcome {
        assignment,
        command,
        detachment,
        attachment,
        core,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WorldState;
    use crate::scenarios::{random_connected, RandomSpec};
    use proptest::prelude::*;

    fn id(i: u32) -> AgentId {
        AgentId(i)
    }

    fn flow(k: u32, s: u32, d: u32) -> Flow {
        Flow {
            id: FlowId(k),
            source: id(s),
            destination: id(d),
            active: true,
        }
    }

    /// Owns everything a [`Network`] borrows.
    struct World {
        positions: Vec<Vec2>,
        edges: EdgeSet,
        flows: Vec<Flow>,
        mobile_count: usize,
        params: Params,
    }

    impl World {
        fn linked(mobile_count: usize, positions: Vec<Vec2>, flows: Vec<Flow>) -> Self {
            let params = Params::default();
            let edges = graph::initial_edges(&positions, &params);
            World {
                positions,
                edges,
                flows,
                mobile_count,
                params,
            }
        }

        fn with_edges(
            mobile_count: usize,
            positions: Vec<Vec2>,
            pairs: &[(u32, u32)],
            flows: Vec<Flow>,
        ) -> Self {
            let edges = EdgeSet::from_pairs(positions.len(), pairs.iter().map(|&(i, j)| (id(i), id(j))));
            World {
                positions,
                edges,
                flows,
                mobile_count,
                params: Params::default(),
            }
        }

        fn net(&self) -> Network<'_> {
            Network {
                edges: &self.edges,
                flows: &self.flows,
                positions: &self.positions,
                mobile_count: self.mobile_count,
                params: &self.params,
            }
        }
    }

    fn pts(xy: &[(f64, f64)]) -> Vec<Vec2> {
        xy.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    fn path_cost(net: &Network, path: &[AgentId]) -> f64 {
        path.windows(2).map(|w| net.weight(w[0], w[1])).sum()
    }

    /// Every simple path from `src` to `dst`, by depth-first enumeration.
    fn all_paths(es: &EdgeSet, src: AgentId, dst: AgentId) -> Vec<Vec<AgentId>> {
        fn go(es: &EdgeSet, dst: AgentId, cur: &mut Vec<AgentId>, out: &mut Vec<Vec<AgentId>>) {
            let last = *cur.last().unwrap();
            if last == dst {
                out.push(cur.clone());
                return;
            }
            for &v in es.adjacent(last) {
                if !cur.contains(&v) {
                    cur.push(v);
                    go(es, dst, cur, out);
                    cur.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(es, dst, &mut vec![src], &mut out);
        out
    }

    #[test]
    fn direct_link_beats_detour() {
        // relay 1, statics 2 and 3
        let w = World::linked(1, pts(&[(0.5, 0.3), (0.0, 0.0), (1.0, 0.0)]), vec![flow(4, 2, 3)]);
        let (membership, backbones) = initial_membership(&w.net(), &BTreeSet::new()).unwrap();
        assert_eq!(backbones[&FlowId(4)], vec![id(2), id(3)]);
        assert!(membership[0].is_empty());
    }

    #[test]
    fn relay_joins_when_two_hops_are_cheaper() {
        let p = Params::default();
        let b = p.b;
        let w = World::with_edges(
            1,
            pts(&[(b, 0.0), (0.0, 0.0), (2.0 * b, 0.0)]),
            &[(1, 2), (1, 3), (2, 3)],
            vec![flow(4, 2, 3)],
        );
        let net = w.net();
        // 2 + 2 against 1 + e^{ab}
        assert!((path_cost(&net, &[id(2), id(1), id(3)]) - 4.0).abs() < 1e-12);
        assert!(net.weight(id(2), id(3)) > 4.0);
        let (membership, backbones) = initial_membership(&net, &BTreeSet::new()).unwrap();
        assert_eq!(backbones[&FlowId(4)], vec![id(2), id(1), id(3)]);
        assert!(membership[0].contains(&FlowId(4)));
        let best = all_paths(&w.edges, id(2), id(3))
            .into_iter()
            .map(|p| path_cost(&net, &p))
            .fold(f64::INFINITY, f64::min);
        assert!((best - 4.0).abs() < 1e-12);
    }

    #[test]
    fn equal_cost_paths_break_by_vertex_ids() {
        // a square: 3 -> 1 -> 4 and 3 -> 2 -> 4 cost the same
        let w = World::linked(
            2,
            pts(&[(1.0, 1.0), (1.0, -1.0), (0.0, 0.0), (2.0, 0.0)]),
            vec![flow(5, 3, 4)],
        );
        let (_, backbones) = initial_membership(&w.net(), &BTreeSet::new()).unwrap();
        assert_eq!(backbones[&FlowId(5)], vec![id(3), id(1), id(4)]);
    }

    #[test]
    fn busy_agents_are_routed_around() {
        let w = World::linked(
            2,
            pts(&[(1.0, 0.2), (1.0, -0.6), (0.0, 0.0), (2.0, 0.0)]),
            vec![flow(5, 3, 4)],
        );
        let net = w.net();
        let (_, free) = initial_membership(&net, &BTreeSet::new()).unwrap();
        assert_eq!(free[&FlowId(5)], vec![id(3), id(1), id(4)]);
        let (_, routed) = initial_membership(&net, &BTreeSet::from([id(1)])).unwrap();
        assert_eq!(routed[&FlowId(5)], vec![id(3), id(2), id(4)]);
        // with no way around, the busy agent is used anyway
        let (_, forced) = initial_membership(&net, &BTreeSet::from([id(1), id(2)])).unwrap();
        assert_eq!(forced[&FlowId(5)], vec![id(3), id(1), id(4)]);
    }

    #[test]
    fn unreachable_destination_is_reported() {
        let w = World::linked(0, pts(&[(0.0, 0.0), (5.0, 0.0)]), vec![flow(3, 1, 2)]);
        assert!(matches!(
            initial_membership(&w.net(), &BTreeSet::new()),
            Err(Error::FlowUnreachable(FlowId(3)))
        ));
    }

    #[test]
    fn single_flow_supergraph_is_one_vertex() {
        let w = World::linked(
            2,
            pts(&[(0.9, 0.0), (1.8, 0.0), (0.0, 0.0), (2.7, 0.0)]),
            vec![flow(5, 3, 4)],
        );
        let net = w.net();
        let (membership, _) = initial_membership(&net, &BTreeSet::new()).unwrap();
        assert!(membership.iter().all(|m| m.contains(&FlowId(5))));
        let sg = build_supergraph(&net, &membership);
        assert_eq!(sg.vertices, BTreeSet::from([Node::Flow(FlowId(5))]));
        assert!(sg.edges.is_empty());
        assert_eq!(detect_bridges(&sg, &w.flows, net.n()).unwrap(), vec![false; 4]);
    }

    /// Two parallel flows 3.2 apart, joined by a two-relay column (agents 1
    /// and 2) between their midpoints.
    fn two_flows_and_a_bridge() -> World {
        World::linked(
            4,
            pts(&[
                (1.2, 1.1),
                (1.2, 2.1),
                (1.2, 0.0),
                (1.2, 3.2),
                (0.0, 0.0),
                (2.4, 0.0),
                (0.0, 3.2),
                (2.4, 3.2),
            ]),
            vec![flow(9, 5, 6), flow(10, 7, 8)],
        )
    }

    #[test]
    fn multi_hop_bridge_is_detected() {
        let w = two_flows_and_a_bridge();
        let net = w.net();
        let (membership, backbones) = initial_membership(&net, &BTreeSet::new()).unwrap();
        assert_eq!(backbones[&FlowId(9)], vec![id(5), id(3), id(6)]);
        assert_eq!(backbones[&FlowId(10)], vec![id(7), id(4), id(8)]);
        let sg = build_supergraph(&net, &membership);
        assert!(sg.vertices.contains(&Node::Agent(id(1))));
        assert!(sg.vertices.contains(&Node::Agent(id(2))));
        let bridges = detect_bridges(&sg, &w.flows, net.n()).unwrap();
        let flagged: Vec<u32> = (0..net.n()).filter(|&i| bridges[i]).map(|i| i as u32 + 1).collect();
        assert_eq!(flagged, vec![1, 2]);
        let core = connected_core(&w.edges, &membership, &bridges).unwrap();
        assert_eq!(core.len(), 8);
    }

    #[test]
    fn missing_bridge_disconnects_supergraph_and_core() {
        let w = two_flows_and_a_bridge();
        let net = w.net();
        let (membership, _) = initial_membership(&net, &BTreeSet::new()).unwrap();
        let mut sg = build_supergraph(&net, &membership);
        sg.edges.retain(|&(u, v)| u != Node::Agent(id(1)) && v != Node::Agent(id(1)));
        assert!(matches!(
            detect_bridges(&sg, &w.flows, net.n()),
            Err(Error::SupergraphDisconnected(..))
        ));
        assert!(matches!(
            connected_core(&w.edges, &membership, &[false; 8]),
            Err(Error::CoreDisconnected)
        ));
    }

    #[test]
    fn shared_member_joins_flow_vertices() {
        // relay 1 sits on both flows' only path
        let w = World::linked(
            1,
            pts(&[(1.0, 1.0), (0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)]),
            vec![flow(6, 2, 3), flow(7, 4, 5)],
        );
        let net = w.net();
        let (membership, _) = initial_membership(&net, &BTreeSet::new()).unwrap();
        assert_eq!(membership[0], BTreeSet::from([FlowId(6), FlowId(7)]));
        let sg = build_supergraph(&net, &membership);
        assert!(sg.edges.contains(&(Node::Flow(FlowId(6)), Node::Flow(FlowId(7)))));
        let bridges = detect_bridges(&sg, &w.flows, net.n()).unwrap();
        assert!(bridges.iter().all(|b| !b));
    }

    #[test]
    fn bridges_follow_relabeling() {
        let w = two_flows_and_a_bridge();
        let (membership, _) = initial_membership(&w.net(), &BTreeSet::new()).unwrap();
        let base = detect_bridges(&build_supergraph(&w.net(), &membership), &w.flows, 8).unwrap();
        // reverse the mobile ids and swap the two flows' statics
        let perm = [4usize, 3, 2, 1, 7, 8, 5, 6];
        let mut positions = vec![Vec2::default(); 8];
        for (old, &new) in perm.iter().enumerate() {
            positions[new - 1] = w.positions[old];
        }
        let map = |a: u32| perm[a as usize - 1] as u32;
        let flows = vec![flow(9, map(5), map(6)), flow(10, map(7), map(8))];
        let r = World::linked(4, positions, flows);
        let (membership, _) = initial_membership(&r.net(), &BTreeSet::new()).unwrap();
        let relabeled = detect_bridges(&build_supergraph(&r.net(), &membership), &r.flows, 8).unwrap();
        for old in 0..8 {
            assert_eq!(base[old], relabeled[perm[old] - 1], "agent {}", old + 1);
        }
    }

    #[test]
    fn detachment_prefers_the_cheaper_link() {
        let p = Params::default();
        let far = p.b + 3f64.ln() / p.a;
        // agents 1 and 2 idle, flow 5 = 3 -> 4 linked directly
        let w = World::with_edges(
            2,
            pts(&[(-p.b, 0.0), (1.0 + far, 0.0), (0.0, 0.0), (1.0, 0.0)]),
            &[(3, 4), (1, 3), (2, 4)],
            vec![flow(5, 3, 4)],
        );
        let net = w.net();
        let (membership, backbones) = initial_membership(&net, &BTreeSet::new()).unwrap();
        let mut assignment = FlowAssignment {
            bridges: vec![false; 4],
            membership,
            backbones,
            detachable: BTreeMap::new(),
        };
        let best = best_detachment(&net, &mut assignment, &BTreeSet::new(), &[]).unwrap();
        assert_eq!(best.0, id(1));
        assert!((best.1 - 2.0).abs() < 1e-12);
        let ranked = rank_detachments(&net, &assignment);
        let scores: Vec<(AgentId, f64)> = ranked.iter().map(|&(a, _, s)| (a, s)).collect();
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[1].0, id(2));
        assert!((scores[1].1 - 4.0).abs() < 1e-9);
        assert_eq!(assignment.detachable[&FlowId(5)], BTreeSet::from([id(1), id(2)]));
    }

    #[test]
    fn no_idle_agent_means_no_detachment() {
        let w = World::linked(
            2,
            pts(&[(0.9, 0.0), (1.8, 0.0), (0.0, 0.0), (2.7, 0.0)]),
            vec![flow(5, 3, 4)],
        );
        let out = icp_step(&w.net(), &BTreeSet::new(), &[]).unwrap();
        assert_eq!(out.detachment, None);
        assert_eq!(out.command, None);
        assert!(out.assignment.detachable.is_empty());
    }

    #[test]
    fn attachment_score_examples() {
        let w = World::linked(
            1,
            pts(&[(1.0, 0.0), (0.0, 0.0), (2.0, 0.0)]),
            vec![flow(4, 2, 3)],
        );
        let net = w.net();
        let fl = w.flows[0];
        let mut membership = vec![BTreeSet::new(); 3];
        membership[1].insert(FlowId(4));
        membership[2].insert(FlowId(4));
        // (2 + 1) * (1/1 + 1/1)
        assert!((attachment_score(&net, &membership, &fl) - 6.0).abs() < 1e-12);
        // a member exactly on the midpoint counts 1/eps_f
        membership[0].insert(FlowId(4));
        let s = attachment_score(&net, &membership, &fl);
        assert!(s.is_finite());
        assert!((s - 4.0 * (2.0 + 1.0 / w.params.eps_f)).abs() < 1e-9);
    }

    #[test]
    fn populated_flow_attracts_more() {
        // flows 6 and 7 are translates; relay 1 sits near flow 7's midpoint
        let w = World::linked(
            1,
            pts(&[(1.0, 3.1), (0.0, 0.0), (2.0, 0.0), (0.0, 3.0), (2.0, 3.0)]),
            vec![flow(6, 2, 3), flow(7, 4, 5)],
        );
        let net = w.net();
        let mut membership = vec![BTreeSet::new(); 5];
        for (i, k) in [(1, 6), (2, 6), (3, 7), (4, 7), (0, 7)] {
            membership[i].insert(FlowId(k));
        }
        let a6 = attachment_score(&net, &membership, &w.flows[0]);
        let a7 = attachment_score(&net, &membership, &w.flows[1]);
        assert!(a7 > a6);
        assert_eq!(best_attachment(&net, &membership), Some((FlowId(7), a7)));
    }

    /// Flow 8 (statics 4 -> 5, length 2) carries three relays, only the
    /// middle one on its backbone. Flow 9 (6 -> 7, a direct link of 1.5) runs
    /// above it and has no relay.
    fn crowded_and_empty(beta: f64) -> World {
        let mut w = World::linked(
            3,
            pts(&[
                (0.5, 0.0),
                (1.0, 0.0),
                (1.5, 0.0),
                (0.0, 0.0),
                (2.0, 0.0),
                (0.0, 1.5),
                (1.5, 1.5),
            ]),
            vec![flow(8, 4, 5), flow(9, 6, 7)],
        );
        w.params.beta = beta;
        w
    }

    #[test]
    fn command_needs_attachment_above_beta_times_detachment() {
        let probe = crowded_and_empty(1e9);
        let net = probe.net();
        let out = icp_step(&net, &BTreeSet::new(), &[]).unwrap();
        assert_eq!(out.command, None);
        let ranked = rank_detachments(&net, &out.assignment);
        let &(first, from, d) = ranked.first().expect("crowded flow has spare relays");
        assert_eq!(from, FlowId(8));
        let a = attachment_score(&net, &out.assignment.membership, &probe.flows[1]);
        assert!(a > 0.0 && d > 0.0);

        // a == beta * d: not strictly greater, and later candidates score worse
        let at = crowded_and_empty(a / d);
        assert_eq!(icp_step(&at.net(), &BTreeSet::new(), &[]).unwrap().command, None);

        let below = crowded_and_empty(0.99 * a / d);
        let out = icp_step(&below.net(), &BTreeSet::new(), &[]).unwrap();
        assert_eq!(out.command, Some(IcpCommand { agent: first, target: FlowId(9) }));
        assert!(out.assignment.membership[first.index()].is_empty());
        assert!(out.assignment.detachable.values().all(|s| !s.contains(&first)));
    }

    #[test]
    fn idle_agent_keeps_its_previous_flow() {
        let w = crowded_and_empty(1e9);
        let net = w.net();
        let fresh = icp_step(&net, &BTreeSet::new(), &[]).unwrap();
        assert_eq!(fresh.assignment.membership[0], BTreeSet::from([FlowId(8)]));
        let mut prior = vec![BTreeSet::new(); 7];
        prior[0] = BTreeSet::from([FlowId(9)]);
        let kept = icp_step(&net, &BTreeSet::new(), &prior).unwrap();
        assert_eq!(kept.assignment.membership[0], BTreeSet::from([FlowId(9)]));
        assert!(kept.assignment.detachable[&FlowId(9)].contains(&id(1)));
        // a prior flow that is no longer active is ignored
        let mut inactive = w.flows.clone();
        inactive.push(Flow { id: FlowId(10), active: false, ..inactive[0] });
        let net = Network { flows: &inactive, ..net };
        prior[0] = BTreeSet::from([FlowId(10)]);
        let out = icp_step(&net, &BTreeSet::new(), &prior).unwrap();
        assert_eq!(out.assignment.membership[0], BTreeSet::from([FlowId(8)]));
    }

    #[test]
    fn busy_agents_block_new_commands() {
        let w = crowded_and_empty(1e-6);
        let out = icp_step(&w.net(), &BTreeSet::from([id(1)]), &[]).unwrap();
        assert_eq!(out.command, None);
    }

    #[test]
    fn no_move_when_it_would_raise_ideal_cost() {
        // both flows evenly served: moving a relay only hurts
        let w = World::linked(
            2,
            pts(&[(1.0, 0.0), (1.0, 1.5), (0.0, 0.0), (2.0, 0.0), (0.0, 1.5), (2.0, 1.5)]),
            vec![flow(7, 3, 4), flow(8, 5, 6)],
        );
        let mut w = w;
        w.params.beta = 1e-9;
        let out = icp_step(&w.net(), &BTreeSet::new(), &[]).unwrap();
        assert_eq!(out.command, None);
    }

    #[test]
    fn mobile_counts_credit_the_nearest_flow() {
        let w = crowded_and_empty(1.0);
        let net = w.net();
        let mut membership = vec![BTreeSet::new(); 7];
        membership[1] = BTreeSet::from([FlowId(8), FlowId(9)]);
        membership[0] = BTreeSet::from([FlowId(8)]);
        let counts = mobile_counts(&net, &membership);
        assert_eq!(counts[&FlowId(8)], 2.0);
        assert_eq!(counts[&FlowId(9)], 0.0);
    }

    #[test]
    fn fractional_ideal_cost_interpolates() {
        let p = Params::default();
        let lo = ideal_flow_cost(3.0, 2, &p);
        let hi = ideal_flow_cost(3.0, 3, &p);
        assert_eq!(ideal_cost_at(3.0, 2.0, &p), lo);
        assert!((ideal_cost_at(3.0, 2.25, &p) - (0.75 * lo + 0.25 * hi)).abs() < 1e-12);
    }

    fn small_world() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<bool>)> {
        (3usize..=10)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0), n),
                    proptest::collection::vec(any::<bool>(), n * (n - 1) / 2),
                )
            })
    }

    proptest! {
        #[test]
        fn dijkstra_matches_exhaustive_enumeration((xy, keep) in small_world()) {
            let n = xy.len();
            let mut pairs = Vec::new();
            let mut k = 0;
            for i in 1..=n as u32 {
                for j in i + 1..=n as u32 {
                    if keep[k] {
                        pairs.push((i, j));
                    }
                    k += 1;
                }
            }
            let w = World::with_edges(n - 2, pts(&xy), &pairs, vec![]);
            let net = w.net();
            let (src, dst) = (id(n as u32 - 1), id(n as u32));
            let paths = all_paths(&w.edges, src, dst);
            match shortest_path(&net, src, dst, &BTreeSet::new()) {
                None => prop_assert!(paths.is_empty()),
                Some((cost, path)) => {
                    let best = paths.iter().map(|p| path_cost(&net, p)).fold(f64::INFINITY, f64::min);
                    prop_assert!((cost - best).abs() <= 1e-9 * best.max(1.0));
                    prop_assert!((path_cost(&net, &path) - cost).abs() <= 1e-9 * cost.max(1.0));
                    prop_assert_eq!(path.first(), Some(&src));
                    prop_assert_eq!(path.last(), Some(&dst));
                }
            }
        }

        #[test]
        fn commands_never_move_backbone_or_bridge_agents(seed in 0u64..10_000) {
            let sc = random_connected(
                RandomSpec { mobiles: 8, statics: 4, flows: 2, max_ticks: 10 },
                seed,
            );
            let mut flows = sc.flows.clone();
            for f in &mut flows {
                f.active = true;
            }
            let st = WorldState::initial(&sc);
            let mut params = sc.params;
            params.beta = 1e-6;
            let net = Network {
                edges: &st.edges,
                flows: &flows,
                positions: &st.positions,
                mobile_count: st.mobile_count,
                params: &params,
            };
            let out = icp_step(&net, &BTreeSet::new(), &[]).unwrap();
            let backbone = out.assignment.backbone_membership();
            for (i, on) in out.assignment.bridges.iter().enumerate() {
                if *on {
                    prop_assert!(out.assignment.detachable.values().all(|s| !s.contains(&AgentId::from_index(i))));
                }
            }
            if let Some(c) = out.command {
                prop_assert!(net.is_mobile(c.agent));
                prop_assert!(!out.assignment.bridges[c.agent.index()]);
                prop_assert!(backbone[c.agent.index()].is_empty());
            }
            prop_assert!(graph::is_connected(&st.edges, &out.core));
        }
    }
}
