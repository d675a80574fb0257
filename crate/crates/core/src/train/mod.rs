//! Curriculum-phased training.
//!
//! A phase walks through one or more curriculum stages (`Cr_i` for each
//! listed `i`), splitting its step budget evenly across them. Every epoch of
//! a stage visits its pairs smallest size first, shuffled within each size,
//! and cuts them into consecutive batches. One step builds a single tape for
//! the whole batch; each row runs on its unpadded length, which gives the
//! same result as running padded rows under key-padding masks.

mod batch;
mod trainlog;
mod schedule;

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{curriculum, DatasetRecord, SizedDatasets};
use crate::graph::{FixedGraph, ProblemInstance};
use crate::model::{bind, dual_loss, ForwardCtx, ModelParams};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{
    clip_global_norm, global_norm, read_tensors, write_tensors, AdamW, AdamWConfig, Tape, Tensor,
};
use crate::{Error, Result};

pub use batch::{make_batches, padding_fraction, Batch};
pub use trainlog::{TrainLog, TrainLogRow};
pub use schedule::{lr_scaled_constant, lr_t5, LrSchedule};

pub const CLIP_NORM: f64 = 1.0;
pub const MODEL_FILE: &str = "model.ckpt";
pub const OPTIM_FILE: &str = "optim.ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Encoder and shared projections only, trained on the problem loss.
    Encoder,
    EncoderDecoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub name: String,
    /// Smallest size of every curriculum union.
    pub min_size: usize,
    /// Upper sizes `i` of the stages `Cr_i`, visited in order.
    pub stages: Vec<usize>,
    /// Per-size cap, giving the truncated curricula.
    pub trunc: Option<usize>,
    pub scope: Scope,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub rotation: bool,
    pub steps: u64,
    /// Optional wall-clock cap in hours; the phase ends at whichever of the
    /// step and time budgets runs out first. Leave unset for replayable runs.
    #[serde(default)]
    pub time_budget_h: Option<f64>,
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phase {}: {m}", self.name)));
        if self.stages.is_empty() {
            return bad("no curriculum stages".into());
        }
        if self.stages.iter().any(|&s| s < self.min_size) {
            return bad(format!("stage below the minimum size {}", self.min_size));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.time_budget_h.is_some_and(|h| !(h > 0.0)) {
            return bad("time budget must be positive".into());
        }
        if self.trunc == Some(0) {
            return bad("truncation of 0 pairs".into());
        }
        self.schedule.validate()
    }

    /// Steps given to stage `k`; the remainder goes to the last stage.
    pub fn stage_steps(&self, k: usize) -> u64 {
        let n = self.stages.len() as u64;
        let base = self.steps / n;
        if k as u64 == n - 1 {
            base + self.steps % n
        } else {
            base
        }
    }
}

/// Parameters, optimizer state and the global step counter.
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub optim: AdamW<f32>,
    pub global_step: u64,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>, adamw: AdamWConfig) -> Self {
        let optim = AdamW::new(adamw, &params.sizes());
        TrainState {
            params,
            optim,
            global_step: 0,
        }
    }

    /// Writes `model.ckpt` and `optim.ckpt` under `dir`, each atomically.
    pub fn save(&self, dir: &Path, phase: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let extra = serde_json::json!({ "global_step": self.global_step, "phase": phase });
        self.params.save(&dir.join(MODEL_FILE), extra)?;

        let (m, v) = self.optim.moments();
        let as_tensor = |x: &Vec<f32>| Tensor::new(vec![x.len()], x.clone());
        let mut named = Vec::with_capacity(2 * m.len());
        for (i, (mi, vi)) in m.iter().zip(v).enumerate() {
            named.push((format!("m.{i}"), as_tensor(mi)?));
            named.push((format!("v.{i}"), as_tensor(vi)?));
        }
        let refs: Vec<(&str, &Tensor<f32>)> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let header = serde_json::json!({ "adamw": self.optim.config, "steps": self.optim.steps() }).to_string();
        let path = dir.join(OPTIM_FILE);
        let tmp = path.with_extension("tmp");
        {
            let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(f);
            write_tensors(&mut w, &header, &refs)?;
            std::io::Write::flush(&mut w).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, expect: Option<&crate::model::ModelConfig>) -> Result<Self> {
        let (params, extra) = ModelParams::<f32>::load(&dir.join(MODEL_FILE), expect)?;
        let path = dir.join(OPTIM_FILE);
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let (header, tensors) = read_tensors(&mut BufReader::new(f))?;
        #[derive(Deserialize)]
        struct Header {
            adamw: AdamWConfig,
            steps: u64,
        }
        let h: Header = serde_json::from_str(&header)?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in tensors {
            if name.starts_with("m.") {
                m.push(t.into_data());
            } else {
                v.push(t.into_data());
            }
        }
        let mut state = TrainState::new(params, h.adamw);
        state.optim.restore(h.steps, m, v)?;
        state.global_step = extra["global_step"].as_u64().unwrap_or(0);
        Ok(state)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions<'a> {
    pub seed: u64,
    /// Checkpoint directory; `None` disables checkpointing.
    pub checkpoint_dir: Option<&'a Path>,
    /// Steps between checkpoints (and log flushes); 0 means phase end only.
    pub checkpoint_every: u64,
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub problem_loss: f64,
    pub solution_loss: Option<f64>,
    pub grad_norm: f64,
}

/// One optimizer step on `rows`. Losses are token means over the batch.
pub fn train_step(
    state: &mut TrainState,
    rows: &[(&ProblemInstance, &[usize])],
    scope: Scope,
    rotation: bool,
    lr: f64,
    seed: u64,
) -> Result<StepStats> {
    let step = state.global_step + 1;
    let params = &state.params;
    let trainable: Vec<bool> = match scope {
        Scope::Encoder => params.layout.encoder_side.clone(),
        Scope::EncoderDecoder => vec![true; params.tensors.len()],
    };
    let with_solution = scope == Scope::EncoderDecoder;
    let mut tape = Tape::<f32>::new();
    let vars = bind(&mut tape, params, &trainable);
    let ctx = ForwardCtx {
        params,
        vars: &vars,
        dropout: params.config.dropout,
    };

    let mut parts = Vec::with_capacity(rows.len());
    for (b, &(inst, tokens)) in rows.iter().enumerate() {
        let key = [step, b as u64];
        let angle = if rotation {
            stream_rng(seed, Stream::Rotation, &key).gen::<f64>() * TAU
        } else {
            0.0
        };
        let mut drop_rng = stream_rng(seed, Stream::Dropout, &key);
        parts.push(dual_loss(&mut tape, &ctx, inst, tokens, angle, with_solution, Some(&mut drop_rng))?);
    }
    let n_problem: usize = parts.iter().map(|p| p.problem_count).sum();
    let n_solution: usize = parts.iter().map(|p| p.solution_count).sum();
    let mut problem = None;
    let mut solution = None;
    for p in &parts {
        let wp = tape.scale(p.problem, p.problem_count as f32 / n_problem as f32);
        problem = Some(match problem {
            Some(acc) => tape.add(acc, wp)?,
            None => wp,
        });
        if let Some(s) = p.solution {
            let ws = tape.scale(s, p.solution_count as f32 / n_solution as f32);
            solution = Some(match solution {
                Some(acc) => tape.add(acc, ws)?,
                None => ws,
            });
        }
    }
    let problem = problem.ok_or_else(|| Error::invalid("empty batch"))?;
    let problem_loss = tape.value(problem).item() as f64;
    let solution_loss = solution.map(|s| tape.value(s).item() as f64);
    let total = match solution {
        Some(s) => tape.add(problem, s)?,
        None => problem,
    };
    let total_value = tape.value(total).item() as f64;
    if !total_value.is_finite() {
        return Err(Error::Divergence {
            step,
            what: format!("loss is {total_value}"),
        });
    }

    let mut grads = tape.backward(total)?;
    let mut g: Vec<Tensor<f32>> = vars.iter().map(|&v| grads.take(v)).collect();
    let mut refs: Vec<&mut Tensor<f32>> = g.iter_mut().collect();
    let pre = clip_global_norm(&mut refs, CLIP_NORM);
    if !pre.is_finite() {
        return Err(Error::Divergence {
            step,
            what: format!("gradient norm is {pre}"),
        });
    }
    let grad_norm = global_norm(&g.iter().collect::<Vec<_>>());
    let mut prefs: Vec<&mut Tensor<f32>> = state.params.tensors.iter_mut().collect();
    let grefs: Vec<&Tensor<f32>> = g.iter().collect();
    state.optim.step_subset(&mut prefs, &grefs, lr, &trainable)?;
    state.global_step = step;
    Ok(StepStats {
        problem_loss,
        solution_loss,
        grad_norm,
    })
}

fn size_grouped_order(data: &[&DatasetRecord], rng: &mut crate::rng::Rng) -> Vec<usize> {
    let mut order = Vec::with_capacity(data.len());
    let mut start = 0;
    while start < data.len() {
        let n = data[start].node_ids.len();
        let mut end = start;
        while end < data.len() && data[end].node_ids.len() == n {
            end += 1;
        }
        let mut group: Vec<usize> = (start..end).collect();
        group.shuffle(rng);
        order.extend(group);
        start = end;
    }
    order
}

/// Runs one phase, appending to `log`. On divergence the error is returned
/// and the last checkpoint on disk is left untouched.
pub fn train_phase(
    spec: &PhaseSpec,
    state: &mut TrainState,
    graph: &FixedGraph,
    data: &SizedDatasets,
    opts: &TrainOptions<'_>,
    log: &mut TrainLog,
) -> Result<()> {
    spec.validate()?;
    state.params.config.check_graph(graph.size())?;
    // phases with different names shuffle independently
    let phase_tag = spec.name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let started = std::time::Instant::now();
    let out_of_time = || spec.time_budget_h.is_some_and(|h| started.elapsed().as_secs_f64() >= h * 3600.0);
    let mut phase_step = 0u64;
    'stages: for (k, &upper) in spec.stages.iter().enumerate() {
        let budget = spec.stage_steps(k);
        if budget == 0 {
            continue;
        }
        let cr = curriculum(data, spec.min_size, upper, spec.trunc)?;
        let instances: Vec<ProblemInstance> = cr.iter().map(|r| r.instance(graph)).collect::<Result<_>>()?;
        let mut done = 0u64;
        let mut epoch = 0u64;
        while done < budget {
            let mut rng = stream_rng(opts.seed, Stream::Shuffle, &[phase_tag, k as u64, epoch]);
            let order = size_grouped_order(&cr, &mut rng);
            for batch in order.chunks(spec.batch_size) {
                if done == budget {
                    break;
                }
                if out_of_time() {
                    log::info!("phase {} reached its time budget after {phase_step} steps", spec.name);
                    break 'stages;
                }
                phase_step += 1;
                let lr = spec.schedule.at(phase_step);
                let rows: Vec<(&ProblemInstance, &[usize])> =
                    batch.iter().map(|&i| (&instances[i], cr[i].tokens.as_slice())).collect();
                let stats = match train_step(state, &rows, spec.scope, spec.rotation, lr, opts.seed) {
                    Ok(s) => s,
                    Err(e) => {
                        log.flush()?;
                        return Err(e);
                    }
                };
                log.push(TrainLogRow {
                    step: state.global_step,
                    phase: spec.name.clone(),
                    lr,
                    problem_loss: stats.problem_loss,
                    solution_loss: stats.solution_loss,
                    grad_norm: stats.grad_norm,
                    wall_time_s: log.elapsed_s(),
                });
                done += 1;
                if opts.checkpoint_every > 0 && phase_step.is_multiple_of(opts.checkpoint_every) {
                    checkpoint(state, spec, opts, log)?;
                }
            }
            epoch += 1;
        }
    }
    checkpoint(state, spec, opts, log)
}

fn checkpoint(state: &TrainState, spec: &PhaseSpec, opts: &TrainOptions<'_>, log: &mut TrainLog) -> Result<()> {
    if let Some(dir) = opts.checkpoint_dir {
        state.save(dir, &spec.name)?;
    }
    log.flush()
}
