//! Per-token input features `(x, y, d, t, kappa, gamma, omega, c, a)`.

use super::solution::check_prefix;
use super::{euclid, Point, ProblemInstance, DEPOT_ID, DEPOT_XY};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const FEATURE_DIM: usize = 9;

/// Rigid rotation of one point about the depot.
#[inline]
pub fn rotate_point(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    let dx = p[0] - DEPOT_XY[0];
    let dy = p[1] - DEPOT_XY[1];
    [DEPOT_XY[0] + c * dx - s * dy, DEPOT_XY[1] + s * dx + c * dy]
}

/// Rotates every coordinate about the depot. Results may leave the unit square.
pub fn rotate(coords: &[Point], angle: f64) -> Vec<Point> {
    if angle == 0.0 {
        return coords.to_vec();
    }
    coords.iter().map(|&p| rotate_point(p, angle)).collect()
}

/// Rotation-dependent geometry of one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeGeometry {
    pub x: f64,
    pub y: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub omega: f64,
}

/// Geometry of every instance node (local order) under `rotation`.
pub fn node_geometry(inst: &ProblemInstance, rotation: f64) -> Vec<NodeGeometry> {
    rotate(inst.coords(), rotation)
        .into_iter()
        .map(|p| {
            let dx = p[0] - DEPOT_XY[0];
            let dy = p[1] - DEPOT_XY[1];
            let r = dx.hypot(dy);
            // the direction of a zero-length vector is undefined; use +x
            let (gamma, omega) = if r > 0.0 { (dx / r, dy / r) } else { (1.0, 0.0) };
            NodeGeometry {
                x: p[0],
                y: p[1],
                kappa: euclid(p, DEPOT_XY) / inst.kappa_scale(),
                gamma,
                omega,
            }
        })
        .collect()
}

/// Feature row of one token: geometry, normalized demand, depot flag,
/// route utilization `c` and served fraction `a`.
pub(crate) fn token_row(g: &NodeGeometry, d: f64, depot: bool, c: f64, a: f64) -> [f64; FEATURE_DIM] {
    let t = if depot { 1.0 } else { 0.0 };
    [g.x, g.y, d, t, g.kappa, g.gamma, g.omega, c, a]
}

fn push_row<T: Scalar>(out: &mut Vec<T>, g: &NodeGeometry, d: f64, depot: bool, c: f64, a: f64) {
    out.extend(token_row(g, d, depot, c, a).iter().map(|&v| T::of(v)));
}

/// One row per instance node, in `node_ids` order; `c = a = 0`.
pub fn problem_features<T: Scalar>(inst: &ProblemInstance, rotation: f64) -> Tensor<T> {
    let geo = node_geometry(inst, rotation);
    let cap = inst.capacity() as f64;
    let mut data = Vec::with_capacity(inst.len() * FEATURE_DIM);
    for (i, g) in geo.iter().enumerate() {
        let d = inst.demands()[i] as f64 / cap;
        push_row(&mut data, g, d, i == 0, 0.0, 0.0);
    }
    Tensor::matrix(inst.len(), FEATURE_DIM, data).expect("feature shape")
}

/// One row per prefix token.
///
/// `c` is the current route's load after serving the token, over capacity
/// (zero on depot tokens); `a` is the demand served so far over total demand.
pub fn solution_features<T: Scalar>(
    inst: &ProblemInstance,
    tokens: &[usize],
    rotation: f64,
) -> Result<Tensor<T>> {
    let mut violations = Vec::new();
    check_prefix(inst, tokens, &mut violations);
    if !violations.is_empty() {
        return Err(Error::InvalidSolution(crate::graph::ValidationReport {
            violations,
        }));
    }
    let geo = node_geometry(inst, rotation);
    Ok(solution_features_unchecked(inst, &geo, tokens))
}

pub(crate) fn solution_features_unchecked<T: Scalar>(
    inst: &ProblemInstance,
    geo: &[NodeGeometry],
    tokens: &[usize],
) -> Tensor<T> {
    let cap = inst.capacity() as f64;
    let total = inst.total_demand().max(1) as f64;
    let mut data = Vec::with_capacity(tokens.len() * FEATURE_DIM);
    let (mut load, mut served) = (0u32, 0u32);
    for &tok in tokens {
        let local = inst.local_index(tok).expect("prefix checked");
        let demand = inst.demands()[local];
        if tok == DEPOT_ID {
            load = 0;
        } else {
            load += demand;
            served += demand;
        }
        push_row(
            &mut data,
            &geo[local],
            demand as f64 / cap,
            tok == DEPOT_ID,
            load as f64 / cap,
            served as f64 / total,
        );
    }
    Tensor::matrix(tokens.len(), FEATURE_DIM, data).expect("feature shape")
}
