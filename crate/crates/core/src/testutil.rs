//! Small fixtures shared by unit tests.

use crate::graph::{FixedGraph, Point, ProblemInstance, DEPOT_XY};

/// Graph with the depot followed by `points` (IDs 1..).
pub fn graph_of(points: &[Point]) -> FixedGraph {
    let mut coords = vec![DEPOT_XY];
    coords.extend_from_slice(points);
    FixedGraph::from_coords(coords, 0).unwrap()
}

/// Instance covering every node of [`graph_of`]`(points)`.
pub fn instance_of(points: &[Point], demands: &[u32], capacity: u32) -> (FixedGraph, ProblemInstance) {
    let g = graph_of(points);
    let ids = (0..=points.len()).collect();
    let mut d = vec![0];
    d.extend_from_slice(demands);
    let inst = ProblemInstance::new(&g, ids, d, capacity).unwrap();
    (g, inst)
}

/// Randomly initialized parameters with every tensor (gains and biases
/// included) jittered, so no layer is at its symmetric starting point.
pub fn jittered_params(cfg: &crate::model::ModelConfig, seed: u64) -> crate::model::ModelParams<f64> {
    use rand::{Rng, SeedableRng};
    let mut p = crate::model::ModelParams::<f64>::init(cfg, seed).unwrap();
    let mut rng = crate::rng::Rng::seed_from_u64(seed ^ 0x5eed);
    for t in p.tensors.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    p
}

/// Instance of `n` customers drawn from a fresh 40-node graph.
pub fn random_instance(n: usize, seed: u64) -> (FixedGraph, ProblemInstance) {
    let g = crate::datagen::build_fixed_graph(40, seed).unwrap();
    let table = crate::datagen::CapacityTable::extended();
    let inst = crate::datagen::sample_instance(&g, n, &table, seed).unwrap();
    (g, inst)
}
