//! Distance-based link quality: packet reception rate, ETX weight and path
//! cost.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::model::{AgentId, Params};

/// Largest ETX value reported. Links stretched far past the sigmoid center
/// saturate here instead of overflowing.
pub const MAX_ETX: f64 = 1e18;

/// Expected transmissions per delivered packet, always `>= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LinkWeight(pub f64);

impl LinkWeight {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn etx(d: f64, p: &Params) -> f64 {
    (1.0 + (p.a * (d - p.b)).exp()).min(MAX_ETX)
}

/// Packet reception probability at distance `d`, a sigmoid falling from ~1
/// to 0 around `p.b`.
pub fn reception_rate(d: f64, p: &Params) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::NegativeDistance(d));
    }
    // 1 - 1/(1 + e^{-a(d-b)}) rewritten as 1/(1 + e^{a(d-b)})
    Ok(1.0 / etx(d, p))
}

/// ETX weight `1 + e^{a(d-b)}` of a link of length `d`.
pub fn link_weight(d: f64, p: &Params) -> Result<LinkWeight> {
    if !(d >= 0.0) {
        return Err(Error::NegativeDistance(d));
    }
    Ok(LinkWeight(etx(d, p)))
}

/// ETX weight for a pair of points; never fails since distances are
/// non-negative by construction.
pub fn weight_between(x: Vec2, y: Vec2, p: &Params) -> f64 {
    etx(x.distance(y), p)
}

/// Sum of link weights over `edges`. Zero for an empty set.
pub fn flow_cost<'a, I>(edges: I, positions: &[Vec2], p: &Params) -> Result<f64>
where
    I: IntoIterator<Item = &'a (AgentId, AgentId)>,
{
    let pos = |a: AgentId| {
        positions
            .get(a.0.wrapping_sub(1) as usize)
            .copied()
            .ok_or(Error::MissingPosition(a))
    };
    let mut total = 0.0;
    for &(i, j) in edges {
        total += weight_between(pos(i)?, pos(j)?, p);
    }
    Ok(total)
}
