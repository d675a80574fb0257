use std::fmt;

use serde::{Deserialize, Serialize};

use super::{euclid, ProblemInstance, DEPOT_ID, DEPOT_XY};
use crate::{Error, Result};

/// Depot-delimited node-ID token sequence, e.g. `[0, 4, 9, 0, 2, 0]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Solution {
    tokens: Vec<usize>,
}

impl Solution {
    pub fn new(tokens: Vec<usize>) -> Self {
        Solution { tokens }
    }

    /// Joins routes of customer node IDs into a token sequence.
    pub fn from_routes<R: AsRef<[usize]>>(routes: &[R]) -> Self {
        let mut tokens = vec![DEPOT_ID];
        for r in routes {
            let r = r.as_ref();
            if r.is_empty() {
                continue;
            }
            tokens.extend_from_slice(r);
            tokens.push(DEPOT_ID);
        }
        Solution { tokens }
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<usize> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Maximal depot-free runs of customer tokens.
    pub fn routes(&self) -> Vec<&[usize]> {
        self.tokens
            .split(|&t| t == DEPOT_ID)
            .filter(|r| !r.is_empty())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    MissingStartDepot,
    MissingEndDepot,
    UnknownNode { position: usize, node: usize },
    DuplicateVisit { position: usize, node: usize },
    MissingCustomer { node: usize },
    CapacityExceeded { position: usize, load: u32, capacity: u32 },
    EmptyRoute { position: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty token sequence"),
            Violation::MissingStartDepot => write!(f, "first token is not the depot"),
            Violation::MissingEndDepot => write!(f, "last token is not the depot"),
            Violation::UnknownNode { position, node } => {
                write!(f, "node {node} at position {position} is not in the instance")
            }
            Violation::DuplicateVisit { position, node } => {
                write!(f, "customer visited twice: node {node} again at position {position}")
            }
            Violation::MissingCustomer { node } => write!(f, "customer missing: node {node}"),
            Violation::CapacityExceeded {
                position,
                load,
                capacity,
            } => write!(
                f,
                "capacity exceeded: route load {load} > {capacity} at position {position}"
            ),
            Violation::EmptyRoute { position } => {
                write!(f, "consecutive depot tokens at position {position}")
            }
        }
    }
}

/// Every constraint a token sequence breaks against an instance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidSolution(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks prefix-level rules shared by full solutions and partial decodes:
/// depot start, known nodes, no repeats, no empty routes, capacity.
pub(crate) fn check_prefix(inst: &ProblemInstance, tokens: &[usize], out: &mut Vec<Violation>) {
    if tokens.first() != Some(&DEPOT_ID) {
        out.push(Violation::MissingStartDepot);
    }
    let mut seen = vec![false; inst.len()];
    let mut load = 0u32;
    let mut over = false;
    for (pos, &tok) in tokens.iter().enumerate() {
        if tok == DEPOT_ID {
            if pos > 0 && tokens[pos - 1] == DEPOT_ID {
                out.push(Violation::EmptyRoute { position: pos });
            }
            load = 0;
            over = false;
            continue;
        }
        let Some(local) = inst.local_index(tok) else {
            out.push(Violation::UnknownNode {
                position: pos,
                node: tok,
            });
            continue;
        };
        if seen[local] {
            out.push(Violation::DuplicateVisit {
                position: pos,
                node: tok,
            });
        }
        seen[local] = true;
        load += inst.demands()[local];
        if load > inst.capacity() && !over {
            over = true;
            out.push(Violation::CapacityExceeded {
                position: pos,
                load,
                capacity: inst.capacity(),
            });
        }
    }
}

pub fn validate_solution(inst: &ProblemInstance, sol: &Solution) -> ValidationReport {
    let tokens = sol.tokens();
    let mut violations = Vec::new();
    if tokens.is_empty() {
        violations.push(Violation::Empty);
        return ValidationReport { violations };
    }
    check_prefix(inst, tokens, &mut violations);
    if tokens.last() != Some(&DEPOT_ID) {
        violations.push(Violation::MissingEndDepot);
    }
    if tokens.len() == 1 {
        // a lone depot has no return leg
        violations.push(Violation::MissingEndDepot);
    }
    let mut seen = vec![false; inst.len()];
    for &t in tokens {
        if let Some(i) = inst.local_index(t) {
            seen[i] = true;
        }
    }
    for (i, &id) in inst.node_ids().iter().enumerate().skip(1) {
        if !seen[i] {
            violations.push(Violation::MissingCustomer { node: id });
        }
    }
    ValidationReport { violations }
}

/// Total Euclidean length of the token walk.
pub fn solution_cost(inst: &ProblemInstance, sol: &Solution) -> Result<f64> {
    validate_solution(inst, sol).into_result()?;
    Ok(walk_length(inst, sol.tokens()))
}

/// Length of a token walk over instance nodes without validation.
pub(crate) fn walk_length(inst: &ProblemInstance, tokens: &[usize]) -> f64 {
    tokens
        .windows(2)
        .map(|w| {
            let a = inst.coord_of(w[0]).expect("token outside instance");
            let b = inst.coord_of(w[1]).expect("token outside instance");
            euclid(a, b)
        })
        .sum()
}

/// Angle in `[0, 2pi)` of `p` around the depot, counter-clockwise from +x.
pub(crate) fn depot_angle(p: [f64; 2]) -> f64 {
    let a = (p[1] - DEPOT_XY[1]).atan2(p[0] - DEPOT_XY[0]);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Sorts routes by the polar angle of their demand-weighted centroid.
///
/// Ties fall back to the first customer's node ID. Within-route order is
/// untouched, so the cost is unchanged.
pub fn canonicalize_route_order(sol: &Solution, inst: &ProblemInstance) -> Solution {
    let mut keyed: Vec<(f64, usize, &[usize])> = sol
        .routes()
        .into_iter()
        .map(|route| {
            let (mut sx, mut sy, mut w) = (0.0, 0.0, 0.0);
            for &id in route {
                let local = inst.local_index(id).expect("route node outside instance");
                let d = inst.demands()[local] as f64;
                let p = inst.coords()[local];
                sx += d * p[0];
                sy += d * p[1];
                w += d;
            }
            let angle = if w > 0.0 {
                depot_angle([sx / w, sy / w])
            } else {
                0.0
            };
            (angle, route[0], route)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let routes: Vec<&[usize]> = keyed.into_iter().map(|(_, _, r)| r).collect();
    Solution::from_routes(&routes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{graph_of, instance_of};

    #[test]
    fn out_and_back_costs_twice_the_radius() {
        let (_, inst) = instance_of(&[[0.5, 1.0]], &[3], 10);
        let id = inst.node_ids()[1];
        assert_eq!(solution_cost(&inst, &Solution::new(vec![0, id, 0])).unwrap(), 1.0);
    }

    #[test]
    fn consecutive_depots_rejected() {
        let g = graph_of(&[[0.2, 0.2]]);
        let inst = ProblemInstance::new(&g, vec![0], vec![0], 30).unwrap();
        let err = solution_cost(&inst, &Solution::new(vec![0, 0])).unwrap_err();
        assert!(err.to_string().contains("consecutive depot"), "{err}");
    }

    #[test]
    fn square_around_depot() {
        // corners of a 0.2-side square centered on the depot
        let pts = [[0.4, 0.4], [0.6, 0.4], [0.6, 0.6], [0.4, 0.6]];
        let (_, inst) = instance_of(&pts, &[1, 1, 1, 1], 30);
        let ids = &inst.node_ids()[1..];
        let sol = Solution::new(vec![0, ids[0], ids[1], ids[2], ids[3], 0]);
        // three sides of 0.2 plus two half-diagonals of 0.1*sqrt(2)
        let expected = 3.0 * 0.2 + 2.0 * (0.1f64 * 0.1 + 0.1 * 0.1).sqrt();
        assert!((solution_cost(&inst, &sol).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_and_duplicate_customers() {
        let (_, inst) = instance_of(&[[0.1, 0.1], [0.9, 0.9]], &[1, 1], 30);
        let (a, b) = (inst.node_ids()[1], inst.node_ids()[2]);
        let r = validate_solution(&inst, &Solution::new(vec![0, a, 0]));
        assert_eq!(r.violations, vec![Violation::MissingCustomer { node: b }]);
        assert!(r.to_string().contains("customer missing"));

        let r = validate_solution(&inst, &Solution::new(vec![0, a, b, a, 0]));
        assert_eq!(
            r.violations,
            vec![Violation::DuplicateVisit {
                position: 3,
                node: a
            }]
        );
        assert!(r.to_string().contains("customer visited twice"));
    }

    #[test]
    fn capacity_boundary_is_feasible() {
        let (_, inst) = instance_of(&[[0.1, 0.1], [0.9, 0.9]], &[4, 6], 10);
        let (a, b) = (inst.node_ids()[1], inst.node_ids()[2]);
        assert!(validate_solution(&inst, &Solution::new(vec![0, a, b, 0])).is_valid());

        let (_, tight) = instance_of(&[[0.1, 0.1], [0.9, 0.9]], &[4, 7], 10);
        let r = validate_solution(&tight, &Solution::new(vec![0, a, b, 0]));
        assert!(matches!(
            r.violations[..],
            [Violation::CapacityExceeded { load: 11, .. }]
        ));
    }

    #[test]
    fn endpoints_must_be_depots() {
        let (_, inst) = instance_of(&[[0.1, 0.1]], &[1], 10);
        let a = inst.node_ids()[1];
        let r = validate_solution(&inst, &Solution::new(vec![a, 0]));
        assert!(r.violations.contains(&Violation::MissingStartDepot));
        let r = validate_solution(&inst, &Solution::new(vec![0, a]));
        assert!(r.violations.contains(&Violation::MissingEndDepot));
        let r = validate_solution(&inst, &Solution::new(vec![0, 77, a, 0]));
        assert!(r.violations.contains(&Violation::UnknownNode {
            position: 1,
            node: 77
        }));
    }

    #[test]
    fn canonical_order_sorts_by_centroid_angle() {
        let deg = |d: f64| {
            let r = d.to_radians();
            [0.5 + 0.3 * r.cos(), 0.5 + 0.3 * r.sin()]
        };
        let (_, inst) = instance_of(&[deg(200.0), deg(10.0)], &[1, 1], 1);
        let (p200, p10) = (inst.node_ids()[1], inst.node_ids()[2]);
        let sol = Solution::new(vec![0, p200, 0, p10, 0]);
        let canon = canonicalize_route_order(&sol, &inst);
        assert_eq!(canon.tokens(), &[0, p10, 0, p200, 0]);
        assert_eq!(canonicalize_route_order(&canon, &inst), canon);
        let before = solution_cost(&inst, &sol).unwrap();
        let after = solution_cost(&inst, &canon).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn single_route_is_unchanged() {
        let (_, inst) = instance_of(&[[0.1, 0.2], [0.8, 0.3]], &[1, 1], 10);
        let (a, b) = (inst.node_ids()[1], inst.node_ids()[2]);
        let sol = Solution::new(vec![0, b, a, 0]);
        assert_eq!(canonicalize_route_order(&sol, &inst), sol);
    }
}
