use super::{to_solution, Dist, LocalRoutes};
use crate::graph::{ProblemInstance, Solution};

/// Parallel Clarke-Wright savings construction.
///
/// Starts from one out-and-back route per customer and merges route ends in
/// descending order of `d(0,i) + d(0,j) - d(i,j)` while capacity allows.
pub fn savings_construct(inst: &ProblemInstance) -> Solution {
    to_solution(inst, &construct_local(inst))
}

pub(crate) fn construct_local(inst: &ProblemInstance) -> LocalRoutes {
    let n = inst.len();
    let dist = Dist::new(inst);
    let demand = inst.demands();

    let mut pairs = Vec::with_capacity(n * n / 2);
    for i in 1..n {
        for j in i + 1..n {
            let s = dist.get(0, i) + dist.get(0, j) - dist.get(i, j);
            if s > 0.0 {
                pairs.push((s, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    // route_of[c] indexes into `routes`; merged-away routes become empty
    let mut routes: Vec<Vec<usize>> = (0..n).map(|c| if c == 0 { vec![] } else { vec![c] }).collect();
    let mut route_of: Vec<usize> = (0..n).collect();
    let mut load: Vec<u32> = demand.to_vec();

    for (_, i, j) in pairs {
        let (ri, rj) = (route_of[i], route_of[j]);
        if ri == rj || load[ri] + load[rj] > inst.capacity() {
            continue;
        }
        let (a, b) = (&routes[ri], &routes[rj]);
        let i_first = a.first() == Some(&i);
        let i_last = a.last() == Some(&i);
        let j_first = b.first() == Some(&j);
        let j_last = b.last() == Some(&j);
        if !(i_first || i_last) || !(j_first || j_last) {
            continue;
        }
        let mut left = std::mem::take(&mut routes[ri]);
        let mut right = std::mem::take(&mut routes[rj]);
        // orient as [.., i] ++ [j, ..]
        if !i_last {
            left.reverse();
        }
        if !j_first {
            right.reverse();
        }
        for &c in &right {
            route_of[c] = ri;
        }
        left.extend(right);
        routes[ri] = left;
        load[ri] += load[rj];
    }
    routes.into_iter().filter(|r| !r.is_empty()).collect()
}
