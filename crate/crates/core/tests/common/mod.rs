//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use fmcvrp_core::graph::euclid;
use fmcvrp_core::{FixedGraph, ProblemInstance};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Instance with a tight capacity so most optima use several routes.
pub fn tight_instance(graph: &FixedGraph, n: usize, seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = index::sample(&mut rng, graph.size() - 1, n).into_iter().map(|i| i + 1).collect();
    ids.sort_unstable();
    ids.insert(0, 0);
    let mut demands = vec![0];
    demands.extend((0..n).map(|_| rng.gen_range(1..=9u32)));
    let capacity = rng.gen_range(9..=20);
    ProblemInstance::new(graph, ids, demands, capacity).unwrap()
}

fn heap_permutations(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(items);
        return;
    }
    for i in 0..k - 1 {
        heap_permutations(items, k - 1, visit);
        if k.is_multiple_of(2) {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
    heap_permutations(items, k - 1, visit);
}

/// Enumerates every customer order and splits each one optimally into
/// consecutive capacity-feasible routes. Works on raw coordinates only.
pub fn permutation_optimum(inst: &ProblemInstance) -> f64 {
    let xy = inst.coords();
    let dem = inst.demands();
    let cap = inst.capacity();
    let mut order: Vec<usize> = (1..inst.len()).collect();
    let k = order.len();
    let mut best = f64::INFINITY;
    heap_permutations(&mut order, k, &mut |perm| {
        // split[j] = cheapest cover of perm[..j]
        let mut split = vec![f64::INFINITY; perm.len() + 1];
        split[0] = 0.0;
        for start in 0..perm.len() {
            let mut load = 0;
            let mut path = 0.0;
            for end in start..perm.len() {
                load += dem[perm[end]];
                if load > cap {
                    break;
                }
                if end > start {
                    path += euclid(xy[perm[end - 1]], xy[perm[end]]);
                }
                let route = euclid(xy[0], xy[perm[start]]) + path + euclid(xy[perm[end]], xy[0]);
                split[end + 1] = split[end + 1].min(split[start] + route);
            }
        }
        best = best.min(split[perm.len()]);
    });
    best
}

/// ln Gamma via the Stirling series after shifting the argument above 30.
fn ln_gamma_stirling(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 30.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

fn t_pdf(x: f64, dof: f64) -> f64 {
    let ln_norm = ln_gamma_stirling((dof + 1.0) / 2.0)
        - ln_gamma_stirling(dof / 2.0)
        - 0.5 * (dof * std::f64::consts::PI).ln();
    (ln_norm - (dof + 1.0) / 2.0 * (1.0 + x * x / dof).ln()).exp()
}

/// Composite Simpson integration of the density from 0 to |t|.
pub fn t_cdf_quadrature(t: f64, dof: f64) -> f64 {
    let steps = 200_000;
    let h = t.abs() / steps as f64;
    let mut acc = t_pdf(0.0, dof) + t_pdf(t.abs(), dof);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * t_pdf(i as f64 * h, dof);
    }
    let half = acc * h / 3.0;
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}
