use crate::graph::{ProblemInstance, ValidationReport, DEPOT_ID};
use crate::{Error, Result};

/// Decoding state that determines which next tokens are feasible.
///
/// Works on instance-local indices (0 is the depot).
#[derive(Clone, Debug)]
pub struct FeasState {
    demands: Vec<u32>,
    capacity: u32,
    visited: Vec<bool>,
    load: u32,
    last_depot: bool,
    remaining: usize,
}

impl FeasState {
    /// State after the initial depot token.
    pub fn new(inst: &ProblemInstance) -> Self {
        FeasState {
            demands: inst.demands().to_vec(),
            capacity: inst.capacity(),
            visited: vec![false; inst.len()],
            load: 0,
            last_depot: true,
            remaining: inst.n_customers(),
        }
    }

    /// State after a node-ID prefix, which must start with the depot.
    pub fn from_prefix(inst: &ProblemInstance, tokens: &[usize]) -> Result<Self> {
        let mut violations = Vec::new();
        crate::graph::check_prefix(inst, tokens, &mut violations);
        if tokens.is_empty() {
            violations.push(crate::graph::Violation::Empty);
        }
        if !violations.is_empty() {
            return Err(Error::InvalidSolution(ValidationReport { violations }));
        }
        let mut s = Self::new(inst);
        for &t in &tokens[1..] {
            s.push(inst.local_index(t).expect("checked"));
        }
        Ok(s)
    }

    /// All customers served and the vehicle is back at the depot.
    pub fn is_complete(&self) -> bool {
        self.remaining == 0 && self.last_depot
    }

    pub fn remaining_capacity(&self) -> u32 {
        self.capacity - self.load
    }

    /// Route load after the last token.
    pub fn load(&self) -> u32 {
        self.load
    }

    /// Fills `allowed` (one flag per local index); returns how many are set.
    pub fn allowed(&self, allowed: &mut [bool]) -> usize {
        allowed.fill(false);
        if self.is_complete() {
            return 0;
        }
        let mut count = 0;
        for i in 1..self.demands.len() {
            if !self.visited[i] && self.load + self.demands[i] <= self.capacity {
                allowed[i] = true;
                count += 1;
            }
        }
        if !self.last_depot || count == 0 {
            allowed[0] = true;
            count += 1;
        }
        count
    }

    pub fn push(&mut self, local: usize) {
        if local == 0 {
            self.load = 0;
            self.last_depot = true;
        } else {
            debug_assert!(!self.visited[local]);
            self.visited[local] = true;
            self.load += self.demands[local];
            self.remaining -= 1;
            self.last_depot = false;
        }
    }
}

/// Allowed-next-token flags over the full vocabulary (pad included).
pub fn feasibility_mask(
    inst: &ProblemInstance,
    prefix: &[usize],
    vocab_size: usize,
) -> Result<Vec<bool>> {
    let state = FeasState::from_prefix(inst, prefix)?;
    let mut local = vec![false; inst.len()];
    state.allowed(&mut local);
    let mut out = vec![false; vocab_size];
    for (i, &ok) in local.iter().enumerate() {
        let id = inst.node_ids()[i];
        if ok && id < vocab_size.saturating_sub(1) {
            out[id] = true;
        }
    }
    debug_assert!(!out[DEPOT_ID] || local[0]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::instance_of;

    #[test]
    fn fresh_prefix_masks_depot() {
        let (g, inst) = instance_of(&[[0.1, 0.1], [0.2, 0.2]], &[3, 4], 10);
        let m = feasibility_mask(&inst, &[0], g.size() + 1).unwrap();
        assert_eq!(m, vec![false, true, true, false]);
    }

    #[test]
    fn capacity_forces_depot() {
        let (g, inst) = instance_of(&[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]], &[7, 5, 7], 10);
        // after node 1 (demand 7) remaining capacity is 3 and pending demands are 5 and 7
        let m = feasibility_mask(&inst, &[0, 1], g.size() + 1).unwrap();
        assert_eq!(m, vec![true, false, false, false, false]);
    }

    #[test]
    fn finished_tour_only_allows_depot_then_nothing() {
        let (g, inst) = instance_of(&[[0.1, 0.1]], &[3], 10);
        let m = feasibility_mask(&inst, &[0, 1], g.size() + 1).unwrap();
        assert_eq!(m, vec![true, false, false]);
        let m = feasibility_mask(&inst, &[0, 1, 0], g.size() + 1).unwrap();
        assert!(m.iter().all(|&x| !x));
    }

    #[test]
    fn non_instance_nodes_and_pad_are_masked() {
        let (g, full) = instance_of(&[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]], &[1, 1, 1], 10);
        let inst = ProblemInstance::new(&g, vec![0, 2], vec![0, 1], 10).unwrap();
        let m = feasibility_mask(&inst, &[0], g.size() + 1).unwrap();
        assert_eq!(m, vec![false, false, true, false, false]);
        assert!(feasibility_mask(&full, &[0, 0], 5).is_err());
    }
}
