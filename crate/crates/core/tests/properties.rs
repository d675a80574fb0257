use fmcvrp_core::datagen::{build_fixed_graph, sample_instance, CapacityTable};
use fmcvrp_core::decode::nucleus_support;
use fmcvrp_core::eval::{aggregate, gap_percent, paired_t_test};
use fmcvrp_core::graph::{canonicalize_route_order, solution_cost, validate_solution, Solution};
use fmcvrp_core::model::{feasibility_mask, FeasState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random walk that only ever takes tokens the mask allows.
fn masked_walk(inst: &fmcvrp_core::ProblemInstance, seed: u64) -> Solution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = FeasState::new(inst);
    let mut allowed = vec![false; inst.len()];
    let mut tokens = vec![0];
    while state.allowed(&mut allowed) > 0 {
        let choices: Vec<usize> = (0..inst.len()).filter(|&i| allowed[i]).collect();
        let pick = choices[rng.gen_range(0..choices.len())];
        state.push(pick);
        tokens.push(inst.node_ids()[pick]);
        assert!(tokens.len() <= 2 * inst.len() + 2, "walk did not terminate");
    }
    assert!(state.is_complete());
    Solution::new(tokens)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_instances_respect_the_capacity_table(n in 1usize..=60, seed in any::<u64>()) {
        let graph = build_fixed_graph(201, 1).unwrap();
        let table = CapacityTable::extended();
        let inst = sample_instance(&graph, n, &table, seed).unwrap();
        let (lo, hi) = table.range(n).unwrap();
        prop_assert!(inst.capacity() >= lo && inst.capacity() < hi);
        prop_assert_eq!(inst.n_customers(), n);
        prop_assert_eq!(inst.demands()[0], 0);
        prop_assert!(inst.demands()[1..].iter().all(|&d| (1..=9).contains(&d)));
        prop_assert!(inst.node_ids().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn masked_walks_are_feasible(n in 1usize..=40, seed in any::<u64>()) {
        let graph = build_fixed_graph(201, 2).unwrap();
        let inst = sample_instance(&graph, n, &CapacityTable::extended(), seed).unwrap();
        let sol = masked_walk(&inst, seed ^ 0x5a5a);
        prop_assert!(validate_solution(&inst, &sol).is_valid());
        // every prefix mask agrees with the local state and never allows pad
        let vocab = graph.size() + 1;
        for k in 1..sol.len() {
            let mask = feasibility_mask(&inst, &sol.tokens()[..k], vocab).unwrap();
            prop_assert!(mask[sol.tokens()[k]]);
            prop_assert!(!mask[vocab - 1]);
        }
    }

    #[test]
    fn canonical_order_is_idempotent_and_cost_preserving(n in 1usize..=30, seed in any::<u64>()) {
        let graph = build_fixed_graph(201, 3).unwrap();
        let inst = sample_instance(&graph, n, &CapacityTable::extended(), seed).unwrap();
        let sol = masked_walk(&inst, seed.wrapping_add(1));
        let once = canonicalize_route_order(&sol, &inst);
        let twice = canonicalize_route_order(&once, &inst);
        prop_assert_eq!(&once, &twice);
        let (a, b) = (solution_cost(&inst, &sol).unwrap(), solution_cost(&inst, &once).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
        let mut before: Vec<Vec<usize>> = sol.routes().iter().map(|r| r.to_vec()).collect();
        let mut after: Vec<Vec<usize>> = once.routes().iter().map(|r| r.to_vec()).collect();
        before.sort();
        after.sort();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn gap_is_scale_invariant(z in 0.1f64..100.0, b in 0.1f64..100.0, c in 0.01f64..1000.0) {
        let g1 = gap_percent(z, b).unwrap();
        let g2 = gap_percent(c * z, c * b).unwrap();
        prop_assert!((g1 - g2).abs() <= 1e-9 * g1.abs().max(1.0));
    }

    #[test]
    fn percentiles_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..80)) {
        let a = aggregate(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= a.p10 && a.p10 <= a.p90 && a.p90 <= hi);
        prop_assert!(lo <= a.mean + 1e-9 && a.mean <= hi + 1e-9);
    }

    #[test]
    fn t_test_is_antisymmetric(pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..60)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let (Ok(a), Ok(b)) = (paired_t_test(&x, &y), paired_t_test(&y, &x)) {
            prop_assert_eq!(a.dof, x.len() - 1);
            prop_assert!((a.t + b.t).abs() <= 1e-9 * a.t.abs().max(1.0));
            prop_assert!((a.p + b.p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nucleus_support_is_a_minimal_prefix(raw in prop::collection::vec(0.0f64..1.0, 1..30), p in 0.05f64..=1.0) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-6);
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let support = nucleus_support(&probs, p).unwrap();
        prop_assert!(!support.is_empty());
        let renorm: f64 = support.iter().map(|s| s.1).sum();
        prop_assert!((renorm - 1.0).abs() < 1e-9);
        let kept: f64 = support.iter().map(|s| probs[s.0]).sum();
        prop_assert!(kept >= p - 1e-9);
        // dropping the smallest kept entry must fall below p
        let smallest = support.iter().map(|s| probs[s.0]).fold(f64::INFINITY, f64::min);
        prop_assert!(kept - smallest < p + 1e-9);
        // nothing outside the support beats anything inside
        for (i, &q) in probs.iter().enumerate() {
            if !support.iter().any(|s| s.0 == i) {
                prop_assert!(q <= smallest + 1e-15);
            }
        }
    }
}
