use std::time::Instant;

use rand::seq::SliceRandom;

use super::{to_local, to_solution, Dist, LocalRoutes, TeacherConfig};
use crate::graph::{ProblemInstance, Solution};
use crate::rng::{stream_rng, Stream};

const IMPROVE_EPS: f64 = 1e-10;

/// Stopping rule for local search.
#[derive(Clone, Debug, Default)]
pub struct Budget {
    pub deadline: Option<Instant>,
    pub max_moves: Option<u64>,
}

pub(crate) struct SearchOutcome {
    pub solution: Solution,
    pub moves: u64,
    pub budget_exhausted: bool,
}

/// First-improvement 2-opt, relocate and swap until a local optimum or the
/// budget runs out. The result is feasible and never costlier than `sol`.
pub fn local_search(inst: &ProblemInstance, sol: &Solution, budget: &Budget) -> Solution {
    search(inst, sol, budget, &TeacherConfig::default()).solution
}

struct State<'a> {
    inst: &'a ProblemInstance,
    dist: Dist,
    routes: LocalRoutes,
    load: Vec<u32>,
    moves: u64,
    budget: &'a Budget,
    stopped: bool,
}

impl State<'_> {
    /// Records one accepted move; returns false once the budget is spent.
    fn accept(&mut self) -> bool {
        self.moves += 1;
        if self.budget.max_moves.is_some_and(|m| self.moves >= m)
            || self.budget.deadline.is_some_and(|d| Instant::now() >= d)
        {
            self.stopped = true;
        }
        !self.stopped
    }

    fn demand(&self, c: usize) -> u32 {
        self.inst.demands()[c]
    }

    /// 2-opt inside every route.
    fn two_opt(&mut self) -> bool {
        let mut improved = false;
        for r in 0..self.routes.len() {
            loop {
                let mut seq = Vec::with_capacity(self.routes[r].len() + 2);
                seq.push(0);
                seq.extend_from_slice(&self.routes[r]);
                seq.push(0);
                let mut found = None;
                'scan: for i in 0..seq.len() - 2 {
                    for j in i + 2..seq.len() - 1 {
                        let (a, b, c, e) = (seq[i], seq[i + 1], seq[j], seq[j + 1]);
                        let delta = self.dist.get(a, c) + self.dist.get(b, e)
                            - self.dist.get(a, b)
                            - self.dist.get(c, e);
                        if delta < -IMPROVE_EPS {
                            found = Some((i, j));
                            break 'scan;
                        }
                    }
                }
                let Some((i, j)) = found else { break };
                // seq[i+1..=j] maps to routes[r][i..j]
                self.routes[r][i..j].reverse();
                improved = true;
                if !self.accept() {
                    return true;
                }
            }
        }
        improved
    }

    fn prev(&self, r: usize, p: usize) -> usize {
        if p == 0 {
            0
        } else {
            self.routes[r][p - 1]
        }
    }

    fn next(&self, r: usize, p: usize) -> usize {
        self.routes[r].get(p + 1).copied().unwrap_or(0)
    }

    fn locate(&self) -> Vec<(usize, usize)> {
        let mut at = vec![(usize::MAX, 0); self.inst.len()];
        for (r, route) in self.routes.iter().enumerate() {
            for (p, &c) in route.iter().enumerate() {
                at[c] = (r, p);
            }
        }
        at
    }

    /// Moves one customer into another route.
    fn relocate(&mut self, order: &[usize]) -> bool {
        let mut improved = false;
        for &u in order {
            let at = self.locate();
            let (ra, pa) = at[u];
            let (pu, nu) = (self.prev(ra, pa), self.next(ra, pa));
            let removal = self.dist.get(pu, nu) - self.dist.get(pu, u) - self.dist.get(u, nu);
            let mut best = None;
            'targets: for rb in 0..self.routes.len() {
                if rb == ra || self.load[rb] + self.demand(u) > self.inst.capacity() {
                    continue;
                }
                for q in 0..=self.routes[rb].len() {
                    let a = self.prev(rb, q);
                    let b = self.routes[rb].get(q).copied().unwrap_or(0);
                    let insert = self.dist.get(a, u) + self.dist.get(u, b) - self.dist.get(a, b);
                    if removal + insert < -IMPROVE_EPS {
                        best = Some((rb, q));
                        break 'targets;
                    }
                }
            }
            if let Some((rb, q)) = best {
                self.routes[ra].remove(pa);
                self.routes[rb].insert(q, u);
                self.load[ra] -= self.demand(u);
                self.load[rb] += self.demand(u);
                if self.routes[ra].is_empty() {
                    self.routes.remove(ra);
                    self.load.remove(ra);
                }
                improved = true;
                if !self.accept() {
                    return true;
                }
            }
        }
        improved
    }

    /// Exchanges two customers of different routes.
    fn swap(&mut self, order: &[usize]) -> bool {
        let mut improved = false;
        let cap = self.inst.capacity();
        for &u in order {
            let at = self.locate();
            let (ra, pa) = at[u];
            let (pu, nu) = (self.prev(ra, pa), self.next(ra, pa));
            let du = self.demand(u);
            let mut found = None;
            for &v in order {
                let (rb, pb) = at[v];
                if rb <= ra {
                    continue;
                }
                let dv = self.demand(v);
                if self.load[ra] - du + dv > cap || self.load[rb] - dv + du > cap {
                    continue;
                }
                let (pv, nv) = (self.prev(rb, pb), self.next(rb, pb));
                let d = &self.dist;
                let delta = d.get(pu, v) + d.get(v, nu) - d.get(pu, u) - d.get(u, nu)
                    + d.get(pv, u) + d.get(u, nv)
                    - d.get(pv, v)
                    - d.get(v, nv);
                if delta < -IMPROVE_EPS {
                    found = Some((v, rb, pb));
                    break;
                }
            }
            if let Some((v, rb, pb)) = found {
                self.routes[ra][pa] = v;
                self.routes[rb][pb] = u;
                let dv = self.demand(v);
                self.load[ra] = self.load[ra] - du + dv;
                self.load[rb] = self.load[rb] - dv + du;
                improved = true;
                if !self.accept() {
                    return true;
                }
            }
        }
        improved
    }
}

pub(crate) fn search(
    inst: &ProblemInstance,
    sol: &Solution,
    budget: &Budget,
    cfg: &TeacherConfig,
) -> SearchOutcome {
    let routes = to_local(inst, sol);
    let load = routes
        .iter()
        .map(|r| r.iter().map(|&c| inst.demands()[c]).sum())
        .collect();
    let mut st = State {
        inst,
        dist: Dist::new(inst),
        routes,
        load,
        moves: 0,
        budget,
        stopped: budget.max_moves == Some(0),
    };
    let mut order: Vec<usize> = (1..inst.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, Stream::Teacher, &[inst.len() as u64]));

    while !st.stopped {
        let mut improved = false;
        if cfg.two_opt {
            improved |= st.two_opt();
        }
        if cfg.relocate && !st.stopped {
            improved |= st.relocate(&order);
        }
        if cfg.swap && !st.stopped {
            improved |= st.swap(&order);
        }
        if !improved {
            break;
        }
        if budget.deadline.is_some_and(|d| Instant::now() >= d) {
            st.stopped = true;
        }
    }
    SearchOutcome {
        solution: to_solution(inst, &st.routes),
        moves: st.moves,
        budget_exhausted: st.stopped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{solution_cost, validate_solution};
    use crate::teacher::savings_construct;
    use crate::testutil::instance_of;

    #[test]
    fn uncrosses_square() {
        let pts = [[0.3, 0.3], [0.7, 0.3], [0.7, 0.7], [0.3, 0.7]];
        let (_, inst) = instance_of(&pts, &[1, 1, 1, 1], 30);
        let crossed = Solution::new(vec![0, 1, 3, 2, 4, 0]);
        let fixed = local_search(&inst, &crossed, &Budget::default());
        let (before, after) = (
            solution_cost(&inst, &crossed).unwrap(),
            solution_cost(&inst, &fixed).unwrap(),
        );
        assert!(after < before - 1e-9, "{before} -> {after}");
    }

    #[test]
    fn local_optimum_is_a_fixed_point() {
        let pts = [[0.1, 0.2], [0.9, 0.1], [0.8, 0.85], [0.2, 0.7], [0.55, 0.15], [0.3, 0.95]];
        let (_, inst) = instance_of(&pts, &[3, 4, 5, 6, 7, 8], 12);
        let once = local_search(&inst, &savings_construct(&inst), &Budget::default());
        let twice = local_search(&inst, &once, &Budget::default());
        assert_eq!(once, twice);
        assert!(validate_solution(&inst, &once).is_valid());
    }

    #[test]
    fn move_budget_is_respected() {
        let pts = [[0.3, 0.3], [0.7, 0.3], [0.7, 0.7], [0.3, 0.7]];
        let (_, inst) = instance_of(&pts, &[1, 1, 1, 1], 30);
        let crossed = Solution::new(vec![0, 1, 3, 2, 4, 0]);
        let budget = Budget {
            deadline: None,
            max_moves: Some(0),
        };
        assert_eq!(local_search(&inst, &crossed, &budget), crossed);
    }
}
