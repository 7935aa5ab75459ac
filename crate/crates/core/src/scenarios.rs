//! Built-in scenarios: the three-flow reference run, single-flow spacing
//! runs and a seeded generator of random connected layouts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom::Vec2;
use crate::model::{AgentId, EventKind, Flow, FlowEvent, FlowId, Params, Scenario};

/// Ticks per unit of the reference timeline (activation at 450, deactivation
/// at 850, end at 1300 units).
pub const REFERENCE_TICK_SCALE: u64 = 20;

/// Three flows sharing nine relays.
///
/// The first flow (length 4) runs along the x axis and the third (length
/// about 7.2) above it; the second is a short link hanging off the right
/// end. The relays start in a row between the first and third flows. The
/// third flow starts inactive and switches on at 450 units; the second
/// switches off at 850 units.
///
/// The ETX midpoint `b` sits at `0.75 * rho2`, so a flow crowded to hops
/// under roughly `0.75` has relays its shortest path skips, which are the
/// only ones the ICP may move.
pub fn reference() -> Scenario {
    reference_scaled(REFERENCE_TICK_SCALE)
}

/// Distance between the two sources, just inside the link establishment
/// radius so they are linked.
pub const REFERENCE_FLOW_GAP: f64 = 1.58;

/// [`reference`] with `scale` ticks per timeline unit.
pub fn reference_scaled(scale: u64) -> Scenario {
    let m = 9;
    let gap = REFERENCE_FLOW_GAP;
    let static_positions = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(4.0, 0.0),
        Vec2::new(5.7, 0.9),
        Vec2::new(4.3, -1.3),
        Vec2::new(0.0, gap),
        Vec2::new(7.0, gap),
    ];
    let mut initial_mobile_positions: Vec<Vec2> = (1..m)
        .map(|i| Vec2::new(0.5 * i as f64, 0.5 * gap))
        .collect();
    initial_mobile_positions.push(Vec2::new(5.0, -0.2));
    let id = |k: usize| FlowId((m + 6 + k + 1) as u32);
    let st = |j: usize| AgentId((m + j) as u32);
    let flows = vec![
        Flow {
            id: id(0),
            source: st(1),
            destination: st(2),
            active: true,
        },
        Flow {
            id: id(1),
            source: st(3),
            destination: st(4),
            active: true,
        },
        Flow {
            id: id(2),
            source: st(5),
            destination: st(6),
            active: false,
        },
    ];
    Scenario {
        name: "reference".into(),
        m,
        s: 6,
        f: 3,
        static_positions,
        initial_mobile_positions,
        flows,
        events: vec![
            FlowEvent {
                tick: 450 * scale,
                flow: id(2),
                kind: EventKind::Activate,
            },
            FlowEvent {
                tick: 850 * scale,
                flow: id(1),
                kind: EventKind::Deactivate,
            },
        ],
        params: Params {
            b: 0.75 * Params::default().rho2,
            ..Params::default()
        },
        max_ticks: 1300 * scale,
        seed: 0,
        icp_period: 25,
    }
}

/// One flow of length `hop * (m + 1)` with `m` relays near the equal split,
/// every other one shifted by `jitter` toward the destination.
///
/// With `hop` inside the link establishment radius but more than half of
/// it, only consecutive relays are linked.
pub fn single_flow(m: usize, hop: f64, jitter: f64, max_ticks: u64) -> Scenario {
    let len = hop * (m + 1) as f64;
    let static_positions = vec![Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)];
    let initial_mobile_positions: Vec<Vec2> = (1..=m)
        .map(|i| Vec2::new(hop * i as f64 + if i % 2 == 1 { jitter } else { 0.0 }, 0.0))
        .collect();
    Scenario {
        name: format!("single-flow-{m}"),
        m,
        s: 2,
        f: 1,
        static_positions,
        initial_mobile_positions,
        flows: vec![Flow {
            id: FlowId((m + 3) as u32),
            source: AgentId((m + 1) as u32),
            destination: AgentId((m + 2) as u32),
            active: true,
        }],
        events: vec![],
        params: Params::default(),
        max_ticks,
        seed: 0,
        icp_period: 25,
    }
}

/// Shape of a randomly generated scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub mobiles: usize,
    pub statics: usize,
    pub flows: usize,
    pub max_ticks: u64,
}

/// Grows a connected layout: every new agent lands between 0.5 and 0.9 of the
/// link establishment radius from a random earlier agent and at least a
/// quarter of it from all others. Flows join distinct static pairs; the last
/// flow may start inactive and switch on midway.
pub fn random_connected(spec: RandomSpec, seed: u64) -> Scenario {
    assert!(spec.statics >= 2, "flows need two static endpoints");
    let max_pairs = spec.statics * (spec.statics - 1) / 2;
    assert!(spec.flows <= max_pairs, "not enough static pairs for the flows");
    let p = Params::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = spec.mobiles + spec.statics;
    let mut pts: Vec<Vec2> = vec![Vec2::ZERO];
    while pts.len() < total {
        let anchor = pts[rng.gen_range(0..pts.len())];
        let r = rng.gen_range(0.5..0.9) * p.rho1;
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = anchor + Vec2::new(r * th.cos(), r * th.sin());
        if pts.iter().all(|q| q.distance(x) >= 0.25 * p.rho1) {
            pts.push(x);
        }
    }
    // Interleave so statics are spread through the growth order.
    let mut order: Vec<usize> = (0..total).collect();
    for i in (1..total).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let statics: Vec<Vec2> = order[..spec.statics].iter().map(|&i| pts[i]).collect();
    let mobiles: Vec<Vec2> = order[spec.statics..].iter().map(|&i| pts[i]).collect();

    let m = spec.mobiles;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    while pairs.len() < spec.flows {
        let a = rng.gen_range(0..spec.statics);
        let b = rng.gen_range(0..spec.statics);
        if a != b && !pairs.contains(&(a, b)) && !pairs.contains(&(b, a)) {
            pairs.push((a, b));
        }
    }
    let n = m + spec.statics;
    let flows: Vec<Flow> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| Flow {
            id: FlowId((n + k + 1) as u32),
            source: AgentId((m + a + 1) as u32),
            destination: AgentId((m + b + 1) as u32),
            active: true,
        })
        .collect();
    let mut sc = Scenario {
        name: format!("random-{seed}"),
        m,
        s: spec.statics,
        f: spec.flows,
        static_positions: statics,
        initial_mobile_positions: mobiles,
        flows,
        events: vec![],
        params: p,
        max_ticks: spec.max_ticks,
        seed,
        icp_period: 25,
    };
    if spec.flows >= 2 && rng.gen_bool(0.5) {
        let last = sc.flows.last_mut().unwrap();
        last.active = false;
        sc.events.push(FlowEvent {
            tick: spec.max_ticks / 3,
            flow: last.id,
            kind: EventKind::Activate,
        });
    }
    sc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;

    #[test]
    fn builtins_validate() {
        assert!(validate_scenario(&reference()).is_empty());
        for m in [2, 3, 5] {
            let sc = single_flow(m, 1.3, 0.25, 100);
            assert!(validate_scenario(&sc).is_empty(), "{m}");
        }
    }

    #[test]
    fn random_layouts_validate_and_repeat() {
        let spec = RandomSpec {
            mobiles: 7,
            statics: 4,
            flows: 3,
            max_ticks: 10,
        };
        for seed in 0..30 {
            let sc = random_connected(spec, seed);
            assert!(validate_scenario(&sc).is_empty(), "seed {seed}: {:?}", validate_scenario(&sc));
            assert_eq!(sc, random_connected(spec, seed));
        }
    }
}
