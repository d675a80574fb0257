//! Inexpensive teacher solver and an exact oracle for tiny instances.
//!
//! The teacher is Clarke-Wright savings followed by first-improvement local
//! search (intra-route 2-opt, inter-route relocate and swap). Its output is
//! only meant to be good, not optimal: the model learns from it.

mod exact;
mod local_search;
mod savings;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::graph::{canonicalize_route_order, solution_cost, ProblemInstance, Solution};
use crate::{Error, Result};

pub use exact::{exact_small, EXACT_MAX_CUSTOMERS};
pub use local_search::{local_search, Budget};
pub use savings::savings_construct;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Wall-clock budget for local search in seconds; 0 disables it.
    pub time_budget_s: f64,
    /// Optional cap on accepted improving moves (deterministic budget).
    pub max_moves: Option<u64>,
    pub two_opt: bool,
    pub relocate: bool,
    pub swap: bool,
    /// Seeds the customer scan order of the inter-route neighborhoods.
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            time_budget_s: 0.05,
            max_moves: None,
            two_opt: true,
            relocate: true,
            swap: true,
            seed: 0,
        }
    }
}

impl TeacherConfig {
    /// Savings construction only.
    pub fn construction_only() -> Self {
        TeacherConfig {
            time_budget_s: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_budget_s >= 0.0) || !self.time_budget_s.is_finite() {
            return Err(Error::Config(format!(
                "teacher time budget must be a finite non-negative number, got {}",
                self.time_budget_s
            )));
        }
        Ok(())
    }

    fn search_enabled(&self) -> bool {
        self.time_budget_s > 0.0 && self.max_moves != Some(0)
    }
}

#[derive(Clone, Debug)]
pub struct TeacherResult {
    pub solution: Solution,
    pub cost: f64,
    pub wall_time_s: f64,
    /// Improving moves applied by local search.
    pub moves: u64,
    /// True if local search stopped on the budget rather than at a local optimum.
    pub budget_exhausted: bool,
}

/// Construction, budgeted local search, canonical route order, validation.
pub fn solve(inst: &ProblemInstance, cfg: &TeacherConfig) -> Result<TeacherResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut sol = savings_construct(inst);
    let mut moves = 0;
    let mut exhausted = false;
    if cfg.search_enabled() && inst.n_customers() > 1 {
        let budget = Budget {
            deadline: Some(start + Duration::from_secs_f64(cfg.time_budget_s)),
            max_moves: cfg.max_moves,
        };
        let out = local_search::search(inst, &sol, &budget, cfg);
        sol = out.solution;
        moves = out.moves;
        exhausted = out.budget_exhausted;
    }
    let sol = canonicalize_route_order(&sol, inst);
    let cost = solution_cost(inst, &sol)?;
    Ok(TeacherResult {
        solution: sol,
        cost,
        wall_time_s: start.elapsed().as_secs_f64(),
        moves,
        budget_exhausted: exhausted,
    })
}

/// Routes of instance-local indices; every route is non-empty.
pub(crate) type LocalRoutes = Vec<Vec<usize>>;

pub(crate) fn to_solution(inst: &ProblemInstance, routes: &LocalRoutes) -> Solution {
    let ids = inst.node_ids();
    let mapped: Vec<Vec<usize>> = routes
        .iter()
        .map(|r| r.iter().map(|&l| ids[l]).collect())
        .collect();
    Solution::from_routes(&mapped)
}

pub(crate) fn to_local(inst: &ProblemInstance, sol: &Solution) -> LocalRoutes {
    sol.routes()
        .into_iter()
        .map(|r| {
            r.iter()
                .map(|&id| inst.local_index(id).expect("solution node outside instance"))
                .collect()
        })
        .collect()
}

/// Flattened symmetric distance matrix over local indices.
pub(crate) struct Dist {
    n: usize,
    d: Vec<f64>,
}

impl Dist {
    pub(crate) fn new(inst: &ProblemInstance) -> Self {
        let n = inst.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = inst.dist_local(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Dist { n, d }
    }

    #[inline]
    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_solution;
    use crate::testutil::instance_of;

    #[test]
    fn zero_budget_is_construction_only() {
        let pts = [[0.1, 0.2], [0.9, 0.1], [0.8, 0.85], [0.2, 0.7], [0.55, 0.15], [0.3, 0.95]];
        let (_, inst) = instance_of(&pts, &[3, 4, 5, 6, 7, 8], 12);
        let r = solve(&inst, &TeacherConfig::construction_only()).unwrap();
        let built = canonicalize_route_order(&savings_construct(&inst), &inst);
        assert_eq!(r.solution, built);
        assert_eq!(r.moves, 0);
        assert!(validate_solution(&inst, &r.solution).is_valid());
    }

    #[test]
    fn negative_budget_rejected() {
        let cfg = TeacherConfig {
            time_budget_s: -1.0,
            ..Default::default()
        };
        let (_, inst) = instance_of(&[[0.1, 0.2]], &[3], 12);
        assert!(solve(&inst, &cfg).is_err());
    }
}
