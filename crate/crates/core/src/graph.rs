//! The hysteretic proximity graph and connectivity queries.
//!
//! Links form once two agents come within `rho1` and are lost only when they
//! separate beyond `rho2`. In between, a pair keeps whatever status it had on
//! the previous tick.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geom::Vec2;
use crate::model::{AgentId, FlowId, Params};

fn key(i: AgentId, j: AgentId) -> (AgentId, AgentId) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Undirected, irreflexive edge set with per-edge establishment tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeSet {
    edges: BTreeMap<(AgentId, AgentId), u64>,
    adj: Vec<Vec<AgentId>>,
}

impl EdgeSet {
    pub fn new(n: usize) -> Self {
        EdgeSet {
            edges: BTreeMap::new(),
            adj: vec![Vec::new(); n],
        }
    }

    /// Builds an edge set from explicit pairs, all established at tick 0.
    /// Self-pairs are ignored.
    pub fn from_pairs<I>(n: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (AgentId, AgentId)>,
    {
        let edges = pairs
            .into_iter()
            .filter(|(i, j)| i != j)
            .map(|(i, j)| (key(i, j), 0))
            .collect();
        Self::from_map(n, edges)
    }

    fn from_map(n: usize, edges: BTreeMap<(AgentId, AgentId), u64>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges.keys() {
            adj[i.index()].push(j);
            adj[j.index()].push(i);
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        EdgeSet { edges, adj }
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, i: AgentId, j: AgentId) -> bool {
        self.edges.contains_key(&key(i, j))
    }

    /// Tick at which the pair's current link was established.
    pub fn established(&self, i: AgentId, j: AgentId) -> Option<u64> {
        self.edges.get(&key(i, j)).copied()
    }

    /// Edges as `(lo, hi)` pairs in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
        self.edges.keys().copied()
    }

    /// Sorted adjacency of `i`. Panics on an out-of-range id; use
    /// [`neighbors`] for a checked lookup.
    pub fn adjacent(&self, i: AgentId) -> &[AgentId] {
        &self.adj[i.index()]
    }

    pub fn degree(&self, i: AgentId) -> usize {
        self.adj[i.index()].len()
    }

    fn knows(&self, i: AgentId) -> bool {
        i.0 >= 1 && i.index() < self.adj.len()
    }
}

/// Edges at tick 0: every pair already within the link establishment radius.
pub fn initial_edges(positions: &[Vec2], p: &Params) -> EdgeSet {
    update_edges(&EdgeSet::new(positions.len()), positions, p, 0)
}

/// Applies the hysteresis rule to every pair.
pub fn update_edges(prev: &EdgeSet, positions: &[Vec2], p: &Params, tick: u64) -> EdgeSet {
    update_edges_with(prev, positions, p, tick, Execution::Sequential, |_, _| false).0
}

/// Like [`update_edges`], also reporting links that were dropped although
/// `retain(i, j)` asked for them to be kept. The predicate does not change the
/// outcome; removal beyond `rho2` is unconditional.
pub fn update_edges_with<F>(
    prev: &EdgeSet,
    positions: &[Vec2],
    p: &Params,
    tick: u64,
    exec: Execution,
    retain: F,
) -> (EdgeSet, Vec<(AgentId, AgentId)>)
where
    F: Fn(AgentId, AgentId) -> bool + Sync,
{
    let n = positions.len();
    let rows = exec.map(n, |a| {
        let i = AgentId::from_index(a);
        let mut row = Vec::new();
        for b in a + 1..n {
            let j = AgentId::from_index(b);
            let d = positions[a].distance(positions[b]);
            let before = prev.edges.get(&(i, j)).copied();
            let now = match before {
                Some(t) if d <= p.rho2 => Some(t),
                Some(_) => None,
                None if d <= p.rho1 => Some(tick),
                None => None,
            };
            row.push((j, before.is_some(), now));
        }
        row
    });
    let mut edges = BTreeMap::new();
    let mut violated = Vec::new();
    for (a, row) in rows.into_iter().enumerate() {
        let i = AgentId::from_index(a);
        for (j, existed, now) in row {
            match now {
                Some(t) => {
                    edges.insert((i, j), t);
                }
                None if existed && retain(i, j) => violated.push((i, j)),
                None => {}
            }
        }
    }
    (EdgeSet::from_map(n, edges), violated)
}

pub fn neighbors(es: &EdgeSet, i: AgentId) -> Result<BTreeSet<AgentId>> {
    if !es.knows(i) {
        return Err(Error::UnknownAgent(i));
    }
    Ok(es.adjacent(i).iter().copied().collect())
}

/// True when the subgraph induced on `vertices` is connected. A single vertex
/// (or none) is trivially connected.
pub fn is_connected(es: &EdgeSet, vertices: &BTreeSet<AgentId>) -> bool {
    let Some(&start) = vertices.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        if !es.knows(v) {
            continue;
        }
        for &u in es.adjacent(v) {
            if vertices.contains(&u) && seen.insert(u) {
                queue.push_back(u);
            }
        }
    }
    seen.len() == vertices.len()
}

/// Vertices carrying flow `k` and the links among them.
pub fn flow_subgraph(
    es: &EdgeSet,
    membership: &[BTreeSet<FlowId>],
    k: FlowId,
) -> (BTreeSet<AgentId>, Vec<(AgentId, AgentId)>) {
    let vertices: BTreeSet<AgentId> = membership
        .iter()
        .enumerate()
        .filter(|(_, m)| m.contains(&k))
        .map(|(i, _)| AgentId::from_index(i))
        .collect();
    let edges = es
        .iter()
        .filter(|(i, j)| vertices.contains(i) && vertices.contains(j))
        .collect();
    (vertices, edges)
}

/// Neighbors of `i` that share at least one flow with it.
pub fn flow_neighbors(
    es: &EdgeSet,
    membership: &[BTreeSet<FlowId>],
    i: AgentId,
) -> Result<BTreeSet<AgentId>> {
    let mine = membership.get(i.index()).ok_or(Error::UnknownAgent(i))?;
    Ok(neighbors(es, i)?
        .into_iter()
        .filter(|j| !membership[j.index()].is_disjoint(mine))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(i: u32) -> AgentId {
        AgentId(i)
    }

    fn line(xs: &[f64]) -> Vec<Vec2> {
        xs.iter().map(|&x| Vec2::new(x, 0.0)).collect()
    }

    #[test]
    fn link_forms_at_rho1() {
        let p = Params::default();
        let es = update_edges(&EdgeSet::new(2), &line(&[0.0, p.rho1]), &p, 3);
        assert!(es.contains(a(1), a(2)));
        assert_eq!(es.established(a(2), a(1)), Some(3));
    }

    #[test]
    fn link_kept_inside_band() {
        let p = Params::default();
        let prev = EdgeSet::from_pairs(2, [(a(1), a(2))]);
        let mid = 0.5 * (p.rho1 + p.rho2);
        let es = update_edges(&prev, &line(&[0.0, mid]), &p, 1);
        assert!(es.contains(a(1), a(2)));
        assert_eq!(es.established(a(1), a(2)), Some(0));
        // retained exactly at rho2
        let es = update_edges(&prev, &line(&[0.0, p.rho2]), &p, 1);
        assert!(es.contains(a(1), a(2)));
        // no link is created inside the band
        let es = update_edges(&EdgeSet::new(2), &line(&[0.0, mid]), &p, 1);
        assert!(es.is_empty());
    }

    #[test]
    fn link_lost_beyond_rho2() {
        let p = Params::default();
        let prev = EdgeSet::from_pairs(2, [(a(1), a(2))]);
        let (es, dropped) = update_edges_with(
            &prev,
            &line(&[0.0, p.rho2 + 1e-9]),
            &p,
            1,
            Execution::Sequential,
            |_, _| true,
        );
        assert!(es.is_empty());
        assert_eq!(dropped, vec![(a(1), a(2))]);
    }

    #[test]
    fn neighbor_queries() {
        let es = EdgeSet::new(3);
        assert!(neighbors(&es, a(1)).unwrap().is_empty());
        let es = EdgeSet::from_pairs(3, [(a(1), a(2)), (a(3), a(2))]);
        assert_eq!(neighbors(&es, a(2)).unwrap(), BTreeSet::from([a(1), a(3)]));
        assert_eq!(neighbors(&es, a(4)), Err(Error::UnknownAgent(a(4))));
        assert_eq!(neighbors(&es, a(0)), Err(Error::UnknownAgent(a(0))));
    }

    #[test]
    fn connectivity_basics() {
        let es = EdgeSet::new(2);
        assert!(is_connected(&es, &BTreeSet::from([a(1)])));
        assert!(!is_connected(&es, &BTreeSet::from([a(1), a(2)])));
        let es = EdgeSet::from_pairs(3, [(a(1), a(2)), (a(2), a(3))]);
        assert!(is_connected(&es, &BTreeSet::from([a(1), a(2), a(3)])));
        // induced: dropping the middle vertex disconnects the ends
        assert!(!is_connected(&es, &BTreeSet::from([a(1), a(3)])));
    }

    #[test]
    fn flow_subgraph_cases() {
        let f = FlowId(10);
        let es = EdgeSet::from_pairs(4, [(a(1), a(2)), (a(2), a(3)), (a(3), a(4))]);
        let none = vec![BTreeSet::new(); 4];
        let (v, e) = flow_subgraph(&es, &none, f);
        assert!(v.is_empty() && e.is_empty());

        let mut m = none.clone();
        for i in [1, 2, 3] {
            m[i].insert(f);
        }
        let (v, e) = flow_subgraph(&es, &m, f);
        assert_eq!(v, BTreeSet::from([a(2), a(3), a(4)]));
        assert_eq!(e, vec![(a(2), a(3)), (a(3), a(4))]);
        assert_eq!(flow_neighbors(&es, &m, a(3)).unwrap(), BTreeSet::from([a(2), a(4)]));
        assert!(flow_neighbors(&es, &m, a(1)).unwrap().is_empty());
    }

    /// Transitive closure by repeated squaring of the adjacency relation.
    fn closure_connected(n: usize, pairs: &[(usize, usize)]) -> bool {
        let mut r = vec![vec![false; n]; n];
        for i in 0..n {
            r[i][i] = true;
        }
        for &(i, j) in pairs {
            r[i][j] = true;
            r[j][i] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        r.iter().all(|row| row.iter().all(|&x| x))
    }

    proptest! {
        #[test]
        fn search_matches_closure(n in 1usize..=12, raw in proptest::collection::vec((0usize..12, 0usize..12), 0..30)) {
            let pairs: Vec<(usize, usize)> = raw.into_iter().filter(|&(i, j)| i < n && j < n && i != j).collect();
            let es = EdgeSet::from_pairs(n, pairs.iter().map(|&(i, j)| (AgentId::from_index(i), AgentId::from_index(j))));
            let all: BTreeSet<AgentId> = (0..n).map(AgentId::from_index).collect();
            prop_assert_eq!(is_connected(&es, &all), closure_connected(n, &pairs));
        }

        #[test]
        fn band_never_chatters(linked in any::<bool>(), ds in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let p = Params::default();
            let mut es = if linked { EdgeSet::from_pairs(2, [(a(1), a(2))]) } else { EdgeSet::new(2) };
            for (t, u) in ds.into_iter().enumerate() {
                // strictly inside (rho1, rho2]
                let d = p.rho1 + (p.rho2 - p.rho1) * (1.0 - u);
                es = update_edges(&es, &line(&[0.0, d]), &p, t as u64 + 1);
                prop_assert_eq!(es.contains(a(1), a(2)), linked);
            }
        }

        #[test]
        fn update_is_idempotent(pts in proptest::collection::vec((0.0f64..6.0, 0.0f64..6.0), 2..10)) {
            let p = Params::default();
            let pos: Vec<Vec2> = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
            let es0 = update_edges(&EdgeSet::new(pos.len()), &pos, &p, 0);
            let es1 = update_edges(&es0, &pos, &p, 1);
            prop_assert_eq!(es0, es1);
        }
    }
}
