//! Self-checks shared by the command line and the acceptance suite.

use rand::{Rng as _, SeedableRng};
use serde::Serialize;

use crate::datagen::{build_fixed_graph, sample_instance, CapacityTable};
use crate::decode::{best_of, DecodePolicy};
use crate::graph::{validate_solution, FixedGraph};
use crate::model::{bind, dual_loss, ForwardCtx, ModelConfig, ModelParams};
use crate::rng::{derive_seed, stream_rng, Rng, Stream};
use crate::teacher::{solve, TeacherConfig};
use crate::tensor::{finite_diff_check, GradCheckReport, Tape};
use crate::{Error, Result};

/// Random parameter point: the usual initialization with every entry
/// (gains and biases included) jittered uniformly by up to `jitter`.
pub fn random_params<T: crate::Scalar>(cfg: &ModelConfig, seed: u64, jitter: f64) -> Result<ModelParams<T>> {
    let mut p = ModelParams::<T>::init(cfg, seed)?;
    let mut rng = stream_rng(seed, Stream::Init, &[1]);
    for t in p.tensors.iter_mut() {
        for v in t.data_mut() {
            *v += T::of(rng.gen_range(-jitter..=jitter));
        }
    }
    Ok(p)
}

fn flatten(p: &ModelParams<f64>) -> Vec<f64> {
    p.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(p: &mut ModelParams<f64>, flat: &[f64]) {
    let mut off = 0;
    for t in p.tensors.iter_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckSummary {
    pub points: usize,
    pub coords_per_point: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name of the worst coordinate.
    pub worst_param: String,
}

/// Central finite differences of the full dual loss (problem plus solution
/// cross-entropy, dropout off, 64-bit) against the tape gradients.
///
/// Each of `points` random parameter points gets its own random instance
/// of `n_customers` customers. `coords` coordinates are checked per point:
/// one in every parameter tensor, the rest uniform over all parameters.
pub fn model_gradient_check(
    cfg: &ModelConfig,
    points: usize,
    coords: usize,
    n_customers: usize,
    seed: u64,
) -> Result<GradCheckSummary> {
    const EPS: f64 = 1e-5;
    let graph_size = cfg.vocab_size - 1;
    let graph = build_fixed_graph(graph_size.max(crate::datagen::MIN_GRAPH_SIZE), seed)?;
    cfg.check_graph(graph.size())?;
    let mut summary = GradCheckSummary {
        points,
        coords_per_point: coords,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_param: String::new(),
    };
    for point in 0..points {
        let pseed = derive_seed(seed, Stream::Init, &[point as u64]);
        let mut params = random_params::<f64>(cfg, pseed, 0.1)?;
        let inst = sample_instance(&graph, n_customers, &CapacityTable::extended(), pseed)?;
        let tokens = solve(&inst, &TeacherConfig::construction_only())?.solution.into_tokens();
        let rotation = Rng::seed_from_u64(pseed).gen::<f64>() * std::f64::consts::TAU;

        let loss = |p: &ModelParams<f64>, grads: bool| -> Result<(f64, Vec<f64>)> {
            let mut tape = Tape::<f64>::new();
            let vars = bind(&mut tape, p, &vec![grads; p.tensors.len()]);
            let ctx = ForwardCtx { params: p, vars: &vars, dropout: 0.0 };
            let parts = dual_loss(&mut tape, &ctx, &inst, &tokens, rotation, true, None)?;
            let sol = parts.solution.ok_or_else(|| Error::invalid("missing solution loss"))?;
            let total = tape.add(parts.problem, sol)?;
            let value = tape.value(total).item();
            if !grads {
                return Ok((value, Vec::new()));
            }
            let mut g = tape.backward(total)?;
            Ok((value, vars.iter().flat_map(|&v| g.take(v).into_data()).collect()))
        };
        let (_, analytic) = loss(&params, true)?;
        let flat = flatten(&params);

        let mut rng = stream_rng(pseed, Stream::Init, &[2]);
        let mut idx = Vec::with_capacity(coords);
        let mut off = 0;
        for t in &params.tensors {
            if idx.len() < coords {
                idx.push(off + rng.gen_range(0..t.numel()));
            }
            off += t.numel();
        }
        while idx.len() < coords {
            idx.push(rng.gen_range(0..flat.len()));
        }
        let mut scratch = params.clone();
        let report: GradCheckReport = finite_diff_check(
            |x| {
                unflatten(&mut scratch, x);
                loss(&scratch, false).map(|r| r.0).unwrap_or(f64::NAN)
            },
            &flat,
            &analytic,
            EPS,
            Some(&idx),
        );
        if report.max_rel_error.is_nan() {
            return Err(Error::invalid("loss evaluation failed during the gradient check"));
        }
        summary.max_abs_error = summary.max_abs_error.max(report.max_abs_error);
        if report.max_rel_error >= summary.max_rel_error {
            summary.max_rel_error = report.max_rel_error;
            let mut off = 0;
            for (name, t) in params.names.iter().zip(&params.tensors) {
                if report.worst_index < off + t.numel() {
                    summary.worst_param = name.clone();
                    break;
                }
                off += t.numel();
            }
        }
        unflatten(&mut params, &flat);
    }
    Ok(summary)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InvariantSummary {
    /// `best_of` calls.
    pub decodes: usize,
    /// Solutions produced across all calls.
    pub solutions: usize,
    pub infeasible: usize,
    pub budget_errors: usize,
    pub other_errors: usize,
    pub teacher_invalid: usize,
}

impl InvariantSummary {
    pub fn ok(&self) -> bool {
        self.infeasible + self.budget_errors + self.other_errors + self.teacher_invalid == 0
    }
}

/// Decodes `count` random instances (sizes cycling through `sizes`) with
/// freshly drawn untrained parameters, alternating greedy and 4-sample
/// nucleus decoding with rotations, and validates every output. Teacher
/// solutions of the same instances are validated too.
pub fn invariant_check(cfg: &ModelConfig, graph: &FixedGraph, sizes: &[usize], count: usize, seed: u64) -> Result<InvariantSummary> {
    let mut s = InvariantSummary::default();
    let table = CapacityTable::extended();
    let mut params = random_params::<f32>(cfg, seed, 0.5)?;
    for i in 0..count {
        if i % 50 == 0 {
            params = random_params::<f32>(cfg, derive_seed(seed, Stream::Init, &[i as u64]), 0.5)?;
        }
        let n = sizes[i % sizes.len()];
        let inst = sample_instance(graph, n, &table, derive_seed(seed, Stream::EvalInstance, &[i as u64]))?;
        match solve(&inst, &TeacherConfig::construction_only()) {
            Ok(r) if validate_solution(&inst, &r.solution).is_valid() => {}
            _ => s.teacher_invalid += 1,
        }
        let policy = if i % 2 == 0 {
            DecodePolicy::greedy()
        } else {
            DecodePolicy {
                rotate: true,
                ..DecodePolicy::nucleus(1.0, 4, i as u64)
            }
        };
        match best_of(&params, &inst, &policy) {
            Ok(out) => {
                s.decodes += 1;
                s.solutions += out.solutions.len();
                s.infeasible += out.solutions.iter().filter(|x| !validate_solution(&inst, x).is_valid()).count();
            }
            Err(Error::TokenBudget { .. }) => s.budget_errors += 1,
            Err(e) => {
                log::warn!("decode failed: {e}");
                s.other_errors += 1;
            }
        }
    }
    Ok(s)
}
