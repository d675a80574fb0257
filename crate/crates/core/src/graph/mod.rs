//! Fixed city graph, sampled problem instances, and solutions.
//!
//! A [`FixedGraph`] holds every potential stop of the city with the depot at
//! index 0 in the middle of the unit square. A [`ProblemInstance`] is a
//! subset of those nodes with integer demands and a vehicle capacity; it
//! carries a copy of its nodes' coordinates so that every downstream
//! computation only needs the instance. A [`Solution`] is the node-ID token
//! sequence the model reads and writes.

mod features;
mod solution;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use features::{
    node_geometry, problem_features, rotate, rotate_point, solution_features, NodeGeometry,
    FEATURE_DIM,
};
pub use solution::{
    canonicalize_route_order, solution_cost, validate_solution, Solution, ValidationReport,
    Violation,
};
pub(crate) use features::{solution_features_unchecked, token_row};
pub(crate) use solution::check_prefix;

pub const DEPOT_ID: usize = 0;
pub const DEPOT_XY: [f64; 2] = [0.5, 0.5];
pub const MAX_DEMAND: u32 = 9;

pub type Point = [f64; 2];

#[inline]
pub fn euclid(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// The static graph every instance is drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedGraph {
    coords: Vec<Point>,
    max_depot_dist: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    size: usize,
    coords: Vec<Point>,
    seed: u64,
}

impl FixedGraph {
    /// Builds a graph from explicit coordinates; `coords[0]` must be the depot.
    pub fn from_coords(coords: Vec<Point>, seed: u64) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::invalid("graph needs a depot and at least one customer"));
        }
        if coords[DEPOT_ID] != DEPOT_XY {
            return Err(Error::invalid(format!(
                "depot must sit at (0.5, 0.5), got {:?}",
                coords[DEPOT_ID]
            )));
        }
        if let Some((i, p)) = coords
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
        {
            return Err(Error::invalid(format!("node {i} at {p:?} outside the unit square")));
        }
        let max_depot_dist = coords
            .iter()
            .map(|&p| euclid(p, DEPOT_XY))
            .fold(0.0, f64::max);
        if max_depot_dist <= 0.0 {
            return Err(Error::invalid("all nodes coincide with the depot"));
        }
        Ok(FixedGraph {
            coords,
            max_depot_dist,
            seed,
        })
    }

    /// Number of nodes including the depot.
    pub fn size(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn coord(&self, id: usize) -> Point {
        self.coords[id]
    }

    pub fn max_depot_dist(&self) -> f64 {
        self.max_depot_dist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphFile {
            size: self.size(),
            coords: self.coords.clone(),
            seed: self.seed,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        if file.size != file.coords.len() {
            return Err(Error::invalid(format!(
                "graph file declares size {} but lists {} coordinates",
                file.size,
                file.coords.len()
            )));
        }
        Self::from_coords(file.coords, file.seed)
    }
}

/// One sampled instance: a depot plus a subset of the graph's customers.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    node_ids: Vec<usize>,
    demands: Vec<u32>,
    capacity: u32,
    coords: Vec<Point>,
    kappa_scale: f64,
}

impl ProblemInstance {
    /// `node_ids` must be strictly increasing and start with the depot.
    pub fn new(
        graph: &FixedGraph,
        node_ids: Vec<usize>,
        demands: Vec<u32>,
        capacity: u32,
    ) -> Result<Self> {
        if node_ids.first() != Some(&DEPOT_ID) {
            return Err(Error::invalid("instance must list the depot first"));
        }
        if node_ids.len() != demands.len() {
            return Err(Error::invalid(format!(
                "{} node ids but {} demands",
                node_ids.len(),
                demands.len()
            )));
        }
        if node_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("node ids must be strictly increasing"));
        }
        if let Some(&bad) = node_ids.iter().find(|&&id| id >= graph.size()) {
            return Err(Error::invalid(format!(
                "node {bad} is not in the graph (size {})",
                graph.size()
            )));
        }
        if demands[0] != 0 {
            return Err(Error::invalid("depot demand must be 0"));
        }
        for (&id, &d) in node_ids.iter().zip(&demands).skip(1) {
            if !(1..=MAX_DEMAND).contains(&d) {
                return Err(Error::invalid(format!("customer {id} has demand {d} outside 1..=9")));
            }
            if d > capacity {
                return Err(Error::invalid(format!(
                    "customer {id} demand {d} exceeds capacity {capacity}"
                )));
            }
        }
        let coords = node_ids.iter().map(|&id| graph.coord(id)).collect();
        Ok(ProblemInstance {
            node_ids,
            demands,
            capacity,
            coords,
            kappa_scale: graph.max_depot_dist(),
        })
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn demands(&self) -> &[u32] {
        &self.demands
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// Coordinates in the same order as [`Self::node_ids`].
    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Distance normalizer for the depot-distance feature.
    pub fn kappa_scale(&self) -> f64 {
        self.kappa_scale
    }

    /// Number of nodes including the depot.
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn n_customers(&self) -> usize {
        self.node_ids.len() - 1
    }

    pub fn total_demand(&self) -> u32 {
        self.demands.iter().sum()
    }

    /// Position of a graph node inside this instance.
    pub fn local_index(&self, node_id: usize) -> Option<usize> {
        self.node_ids.binary_search(&node_id).ok()
    }

    pub fn demand_of(&self, node_id: usize) -> Option<u32> {
        self.local_index(node_id).map(|i| self.demands[i])
    }

    pub fn coord_of(&self, node_id: usize) -> Option<Point> {
        self.local_index(node_id).map(|i| self.coords[i])
    }

    /// Distance between two instance-local indices.
    #[inline]
    pub fn dist_local(&self, a: usize, b: usize) -> f64 {
        euclid(self.coords[a], self.coords[b])
    }

    /// Dense distance matrix over instance-local indices.
    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.dist_local(i, j)).collect())
            .collect()
    }
}
