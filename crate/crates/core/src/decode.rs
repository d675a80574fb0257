//! Autoregressive solution construction from a trained model.
//!
//! Every decode starts from the depot token and appends one node ID per
//! step from the masked output distribution until all customers are served
//! and the vehicle is back at the depot. `best_of` runs several trajectories
//! in lockstep through one batched decoder call per step.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{node_geometry, solution_cost, token_row, NodeGeometry, ProblemInstance, Solution, FEATURE_DIM};
use crate::model::{Encoded, FeasState, Inference, ModelParams, StepRows};
use crate::rng::{stream_rng, Rng, Stream};
use crate::tensor::Scalar;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Nucleus,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Nucleus => "nucleus",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodePolicy {
    pub strategy: Strategy,
    pub top_p: f64,
    /// Trajectories per instance.
    pub samples: usize,
    pub seed: u64,
    /// Rotate every trajectory but the first by an independent uniform angle.
    pub rotate: bool,
    /// Token budget; `None` means `3 * customers + 2`.
    pub max_tokens: Option<usize>,
}

impl Default for DecodePolicy {
    fn default() -> Self {
        DecodePolicy {
            strategy: Strategy::Greedy,
            top_p: 0.9,
            samples: 1,
            seed: 0,
            rotate: false,
            max_tokens: None,
        }
    }
}

impl DecodePolicy {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn nucleus(top_p: f64, samples: usize, seed: u64) -> Self {
        DecodePolicy {
            strategy: Strategy::Nucleus,
            top_p,
            samples,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.samples == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn token_budget(&self, n_customers: usize) -> Result<usize> {
        let min = 2 * n_customers + 2;
        match self.max_tokens {
            None => Ok(3 * n_customers + 2),
            Some(b) if b >= min => Ok(b),
            Some(b) => Err(Error::Config(format!(
                "token budget {b} is below the minimum {min} for {n_customers} customers"
            ))),
        }
    }
}

/// Smallest set of highest-probability entries whose mass reaches `p`,
/// renormalized; ties in probability go to the lower index.
pub fn nucleus_support(probs: &[f64], p: f64) -> Result<Vec<(usize, f64)>> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::invalid("nucleus sampling over an all-zero probability row"));
    }
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    // tolerate rounding in rows that should sum to one
    let target = p * total - 1e-12;
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for &i in &order {
        kept.push(i);
        cum += probs[i];
        if cum >= target {
            break;
        }
    }
    Ok(kept.into_iter().map(|i| (i, probs[i] / cum)).collect())
}

/// Draws one index from the nucleus of `probs`.
pub fn nucleus_sample_step(probs: &[f64], p: f64, rng: &mut Rng) -> Result<usize> {
    let support = nucleus_support(probs, p)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(i, q) in &support {
        acc += q;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(support.last().expect("non-empty").0)
}

/// Outcome of one multi-trajectory decode.
#[derive(Clone, Debug)]
pub struct BestOf {
    pub best: Solution,
    pub best_cost: f64,
    /// Index of the winning trajectory.
    pub best_index: usize,
    /// Cost of every trajectory, in sample order.
    pub costs: Vec<f64>,
    pub solutions: Vec<Solution>,
    pub rotations: Vec<f64>,
}

struct Trajectory {
    rng: Rng,
    enc: usize,
    geo: usize,
    state: FeasState,
    tokens: Vec<usize>,
    served: u32,
    cache_done: bool,
}

fn feature_row<T: Scalar>(
    inst: &ProblemInstance,
    geo: &[NodeGeometry],
    local: usize,
    load: u32,
    served: u32,
) -> [T; FEATURE_DIM] {
    let cap = inst.capacity() as f64;
    let total = inst.total_demand().max(1) as f64;
    let row = token_row(
        &geo[local],
        inst.demands()[local] as f64 / cap,
        local == 0,
        load as f64 / cap,
        served as f64 / total,
    );
    row.map(T::of)
}

/// Decodes `policy.samples` trajectories for one instance.
pub fn best_of<T: Scalar>(params: &ModelParams<T>, inst: &ProblemInstance, policy: &DecodePolicy) -> Result<BestOf> {
    policy.validate()?;
    let budget = policy.token_budget(inst.n_customers())?;
    if inst.node_ids().last().is_some_and(|&id| id >= params.config.pad_id()) {
        return Err(Error::Config("instance uses node IDs beyond the model vocabulary".into()));
    }
    let engine = Inference::new(params, budget);
    let m = inst.len();

    let mut rotations = Vec::with_capacity(policy.samples);
    let mut rngs = Vec::with_capacity(policy.samples);
    for k in 0..policy.samples {
        let mut rng = stream_rng(policy.seed, Stream::Decode, &[k as u64]);
        let angle = if policy.rotate && k > 0 { rng.gen::<f64>() * TAU } else { 0.0 };
        rotations.push(angle);
        rngs.push(rng);
    }
    // one encoding and geometry per distinct rotation
    let mut encs: Vec<Encoded<T>> = Vec::new();
    let mut geos: Vec<Vec<NodeGeometry>> = Vec::new();
    let mut trajs: Vec<Trajectory> = Vec::with_capacity(policy.samples);
    for (rng, &angle) in rngs.into_iter().zip(&rotations) {
        let idx = match encs.iter().position(|e| e.rotation == angle) {
            Some(i) => i,
            None => {
                encs.push(engine.encode(inst, angle));
                geos.push(node_geometry(inst, angle));
                encs.len() - 1
            }
        };
        trajs.push(Trajectory {
            rng,
            enc: idx,
            geo: idx,
            state: FeasState::new(inst),
            tokens: vec![0],
            served: 0,
            cache_done: false,
        });
    }
    let mut caches: Vec<StepRows<T>> = (0..trajs.len()).map(|_| engine.new_cache()).collect();
    let mut allowed = vec![false; m];
    let mut probs = vec![0.0f64; m];

    loop {
        let active: Vec<usize> = (0..trajs.len()).filter(|&b| !trajs[b].cache_done).collect();
        if active.is_empty() {
            break;
        }
        let feats: Vec<[T; FEATURE_DIM]> = active
            .iter()
            .map(|&b| {
                let t = &trajs[b];
                let last = inst.local_index(*t.tokens.last().expect("non-empty")).expect("in instance");
                feature_row(inst, &geos[t.geo], last, t.state.load(), t.served)
            })
            .collect();
        let enc_refs: Vec<&Encoded<T>> = active.iter().map(|&b| &encs[trajs[b].enc]).collect();
        let logits = {
            let mut cache_refs: Vec<&mut StepRows<T>> = caches
                .iter_mut()
                .enumerate()
                .filter(|(b, _)| !trajs[*b].cache_done)
                .map(|(_, c)| c)
                .collect();
            engine.step(&enc_refs, &mut cache_refs, &feats)
        };
        for (row, &b) in logits.iter().zip(&active) {
            let t = &mut trajs[b];
            if t.state.allowed(&mut allowed) == 0 {
                return Err(Error::invalid("feasibility mask excludes every node"));
            }
            let max = row
                .iter()
                .zip(&allowed)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| v.as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..m {
                probs[j] = if allowed[j] { (row[j].as_f64() - max).exp() } else { 0.0 };
                sum += probs[j];
            }
            for p in probs.iter_mut() {
                *p /= sum;
            }
            let next = match policy.strategy {
                Strategy::Greedy => {
                    let mut best = usize::MAX;
                    for j in 0..m {
                        if allowed[j] && (best == usize::MAX || probs[j] > probs[best]) {
                            best = j;
                        }
                    }
                    best
                }
                Strategy::Nucleus => nucleus_sample_step(&probs, policy.top_p, &mut t.rng)?,
            };
            t.state.push(next);
            if next != 0 {
                t.served += inst.demands()[next];
            }
            t.tokens.push(inst.node_ids()[next]);
            if t.state.is_complete() {
                t.cache_done = true;
            } else if t.tokens.len() >= budget {
                return Err(Error::TokenBudget { budget });
            }
        }
    }

    let mut solutions = Vec::with_capacity(trajs.len());
    let mut costs = Vec::with_capacity(trajs.len());
    for t in trajs {
        let sol = Solution::new(t.tokens);
        costs.push(solution_cost(inst, &sol)?);
        solutions.push(sol);
    }
    let best_index = (0..costs.len())
        .min_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)))
        .expect("at least one sample");
    Ok(BestOf {
        best: solutions[best_index].clone(),
        best_cost: costs[best_index],
        best_index,
        costs,
        solutions,
        rotations,
    })
}

/// Single deterministic trajectory taking the most probable feasible node.
pub fn greedy_decode<T: Scalar>(params: &ModelParams<T>, inst: &ProblemInstance) -> Result<Solution> {
    Ok(best_of(params, inst, &DecodePolicy::greedy())?.best)
}

/// One line of a decode output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeRecord {
    pub instance_id: String,
    pub strategy: Strategy,
    pub p: f64,
    pub s: usize,
    pub seed: u64,
    pub tokens: Vec<usize>,
    pub cost: f64,
    pub wall_time_s: f64,
}

/// Sampling seed of one instance, derived from the policy seed and the
/// instance ID so that results do not depend on input order.
pub fn instance_decode_seed(seed: u64, instance_id: &str) -> u64 {
    let h = instance_id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    crate::rng::derive_seed(seed, Stream::Decode, &[h])
}

/// Decodes many instances in parallel; output order follows input order.
pub fn decode_all<T: Scalar>(
    params: &ModelParams<T>,
    instances: &[(String, ProblemInstance)],
    policy: &DecodePolicy,
    workers: usize,
) -> Result<Vec<DecodeRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        instances
            .par_iter()
            .map(|(id, inst)| {
                let start = Instant::now();
                let local = DecodePolicy {
                    seed: instance_decode_seed(policy.seed, id),
                    ..policy.clone()
                };
                let out = best_of(params, inst, &local)?;
                Ok(DecodeRecord {
                    instance_id: id.clone(),
                    strategy: policy.strategy,
                    p: policy.top_p,
                    s: policy.samples,
                    seed: policy.seed,
                    tokens: out.best.into_tokens(),
                    cost: out.best_cost,
                    wall_time_s: start.elapsed().as_secs_f64(),
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn nucleus_cumulative_rule() {
        let s = nucleus_support(&[0.5, 0.3, 0.15, 0.05], 0.8).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[0].1 - 0.625).abs() < 1e-12 && (s[1].1 - 0.375).abs() < 1e-12);
        assert_eq!(nucleus_support(&[0.5, 0.3, 0.15, 0.05], 1.0).unwrap().len(), 4);
        assert_eq!(nucleus_support(&[0.1, 0.85, 0.05], 0.8).unwrap(), vec![(1, 1.0)]);
        assert!(nucleus_support(&[0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn nucleus_ties_prefer_lower_index() {
        let s = nucleus_support(&[0.25, 0.25, 0.25, 0.25], 0.5).unwrap();
        assert_eq!(s.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn nucleus_frequencies() {
        let mut rng = Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            counts[nucleus_sample_step(&[0.5, 0.3, 0.15, 0.05], 0.8, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2] + counts[3], 0);
        let f = counts[0] as f64 / 20_000.0;
        assert!((f - 0.625).abs() < 0.015, "{f}");
    }

    #[test]
    fn budget_floor() {
        let p = DecodePolicy {
            max_tokens: Some(5),
            ..Default::default()
        };
        assert!(p.token_budget(2).is_err());
        assert_eq!(DecodePolicy::default().token_budget(10).unwrap(), 32);
    }
}
