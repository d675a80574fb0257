use super::{to_solution, Dist};
use crate::graph::{ProblemInstance, Solution};
use crate::{Error, Result};

pub const EXACT_MAX_CUSTOMERS: usize = 8;

/// Optimal solution by dynamic programming over customer subsets.
///
/// Held-Karp gives the cheapest route through every capacity-feasible
/// subset; a second DP partitions the full set into such routes.
pub fn exact_small(inst: &ProblemInstance) -> Result<Solution> {
    let m = inst.n_customers();
    if m > EXACT_MAX_CUSTOMERS {
        return Err(Error::invalid(format!(
            "exact solver handles at most {EXACT_MAX_CUSTOMERS} customers, got {m}"
        )));
    }
    if m == 0 {
        return Ok(Solution::new(vec![0]));
    }
    let dist = Dist::new(inst);
    let full = (1usize << m) - 1;
    // customer bit k is local node k + 1
    let demand: Vec<u32> = inst.demands()[1..].to_vec();
    let load: Vec<u32> = (0..=full)
        .map(|s| (0..m).filter(|k| s >> k & 1 == 1).map(|k| demand[k]).sum())
        .collect();

    // hk[s * m + k]: cheapest depot -> ... -> k path covering exactly s
    let inf = f64::INFINITY;
    let mut hk = vec![inf; (full + 1) * m];
    let mut parent = vec![usize::MAX; (full + 1) * m];
    for k in 0..m {
        hk[(1 << k) * m + k] = dist.get(0, k + 1);
    }
    for s in 1..=full {
        if load[s] > inst.capacity() {
            continue;
        }
        for k in 0..m {
            let cur = hk[s * m + k];
            if s >> k & 1 == 0 || cur == inf {
                continue;
            }
            for j in 0..m {
                if s >> j & 1 == 1 {
                    continue;
                }
                let t = s | 1 << j;
                let c = cur + dist.get(k + 1, j + 1);
                if c < hk[t * m + j] {
                    hk[t * m + j] = c;
                    parent[t * m + j] = k;
                }
            }
        }
    }
    let mut route_cost = vec![inf; full + 1];
    let mut route_end = vec![usize::MAX; full + 1];
    for s in 1..=full {
        if load[s] > inst.capacity() {
            continue;
        }
        for k in 0..m {
            let c = hk[s * m + k] + dist.get(k + 1, 0);
            if c < route_cost[s] {
                route_cost[s] = c;
                route_end[s] = k;
            }
        }
    }

    let mut best = vec![inf; full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = 0.0;
    for s in 1..=full {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        // enumerate t = low | (subset of rest)
        let mut sub = rest;
        loop {
            let t = sub | low;
            let c = route_cost[t] + best[s ^ t];
            if c < best[s] {
                best[s] = c;
                choice[s] = t;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }

    let mut routes = Vec::new();
    let mut s = full;
    while s != 0 {
        let t = choice[s];
        let mut route = Vec::new();
        let (mut set, mut k) = (t, route_end[t]);
        while k != usize::MAX {
            route.push(k + 1);
            let p = parent[set * m + k];
            set ^= 1 << k;
            k = p;
        }
        route.reverse();
        routes.push(route);
        s ^= t;
    }
    Ok(to_solution(inst, &routes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::solution_cost;
    use crate::testutil::instance_of;

    #[test]
    fn one_customer() {
        let (_, inst) = instance_of(&[[0.2, 0.3]], &[5], 10);
        assert_eq!(exact_small(&inst).unwrap().tokens(), &[0, 1, 0]);
    }

    #[test]
    fn infeasible_merge_gives_two_routes() {
        let (_, inst) = instance_of(&[[0.9, 0.9], [0.9, 0.8]], &[6, 5], 10);
        assert_eq!(exact_small(&inst).unwrap().routes().len(), 2);
    }

    #[test]
    fn too_many_customers() {
        let pts: Vec<[f64; 2]> = (0..9).map(|k| [0.1 * k as f64, 0.2]).collect();
        let (_, inst) = instance_of(&pts, &[1; 9], 30);
        assert!(exact_small(&inst).is_err());
    }

    #[test]
    fn square_tour_is_the_perimeter() {
        let pts = [[0.3, 0.3], [0.7, 0.3], [0.7, 0.7], [0.3, 0.7]];
        let (_, inst) = instance_of(&pts, &[1, 1, 1, 1], 30);
        let cost = solution_cost(&inst, &exact_small(&inst).unwrap()).unwrap();
        let expect = 3.0 * 0.4 + 2.0 * (0.08f64).sqrt();
        assert!((cost - expect).abs() < 1e-12, "{cost} vs {expect}");
    }
}
