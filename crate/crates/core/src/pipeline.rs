//! End-to-end orchestration over a run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json            config, its hash, and per-command input/output hashes
//! graph.json
//! data/train.jsonl         teacher-labelled training pairs (+ .manifest.json)
//! data/heldout.jsonl       held-out instances with teacher labels
//! teacher/<name>.jsonl     extra teacher runs on the held-out set
//! train/model.ckpt         final or latest parameters
//! train/optim.ckpt
//! train/trainlog.csv
//! decode/<name>.jsonl      one record per held-out instance
//! eval/report.csv
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::datagen::{
    build_dataset, build_fixed_graph, content_digest, group_by_size, label, read_dataset, sample_instance,
    write_records, DatasetManifest, DatasetRecord, DatasetSpec,
};
use crate::decode::{decode_all, DecodePolicy, DecodeRecord, Strategy};
use crate::eval::{build_report, export_geometry, write_report_csv, EvalRow, ReportLine};
use crate::graph::{FixedGraph, ProblemInstance, Solution};
use crate::model::ModelParams;
use crate::rng::{derive_seed, Stream};
use crate::teacher::TeacherConfig;
use crate::train::{train_phase, TrainLog, TrainLogRow, TrainOptions, TrainState};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    /// Relative path to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub notes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub steps: BTreeMap<String, StepEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// A run directory bound to one configuration.
pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
}

impl RunDir {
    /// Opens (creating if needed) `root`. An existing manifest written with a
    /// different configuration is an error: outputs would mix two runs.
    pub fn open(root: &Path, config: RunConfig) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let dir = RunDir {
            root: root.to_path_buf(),
            config,
        };
        let hash = dir.config_hash()?;
        match dir.read_manifest()? {
            Some(m) if m.config_sha256 != hash => {
                return Err(Error::Config(format!(
                    "{} was created with a different configuration",
                    root.display()
                )))
            }
            Some(_) => {}
            None => dir.write_manifest(&RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_sha256: hash,
                config: dir.config.clone(),
                steps: BTreeMap::new(),
            })?,
        }
        Ok(dir)
    }

    /// Hash of the configuration minus the worker count, which never
    /// changes outputs.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.config.clone();
        c.workers = 0;
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&c)?)))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn ensure_parent(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    pub fn read_manifest(&self) -> Result<Option<RunManifest>> {
        let p = self.path(MANIFEST_FILE);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        let p = self.path(MANIFEST_FILE);
        let tmp = p.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(m)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &p).map_err(|e| Error::io(&p, e))
    }

    /// Records a finished command with the hashes of its files.
    pub fn record_step(&self, name: &str, inputs: &[&str], outputs: &[&str], notes: &[(&str, String)]) -> Result<()> {
        let mut m = self
            .read_manifest()?
            .ok_or_else(|| Error::Config("run directory has no manifest".into()))?;
        let hash_all = |rels: &[&str]| -> Result<BTreeMap<String, String>> {
            rels.iter().map(|r| Ok((r.to_string(), sha256_file(&self.path(r))?))).collect()
        };
        m.steps.insert(
            name.to_string(),
            StepEntry {
                inputs: hash_all(inputs)?,
                outputs: hash_all(outputs)?,
                notes: notes.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            },
        );
        self.write_manifest(&m)
    }

    fn require(&self, rel: &str, produced_by: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::io(
                &p,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("run `{produced_by}` first")),
            ))
        }
    }
}

pub const GRAPH_FILE: &str = "graph.json";
pub const TRAIN_DATA: &str = "data/train.jsonl";
pub const HELDOUT_DATA: &str = "data/heldout.jsonl";
pub const TRAIN_DIR: &str = "train";
pub const TRAIN_LOG: &str = "train/trainlog.csv";
pub const MODEL_CKPT: &str = "train/model.ckpt";
pub const REPORT: &str = "eval/report.csv";

pub fn graph_build(run: &RunDir) -> Result<FixedGraph> {
    let g = build_fixed_graph(run.config.data.graph_size, run.config.seed)?;
    let p = run.path(GRAPH_FILE);
    std::fs::write(&p, g.to_json()?).map_err(|e| Error::io(&p, e))?;
    run.record_step("graph build", &[], &[GRAPH_FILE], &[])?;
    Ok(g)
}

pub fn load_graph(run: &RunDir) -> Result<FixedGraph> {
    let p = run.require(GRAPH_FILE, "graph build")?;
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let g = FixedGraph::from_json(&text)?;
    if g.size() != run.config.data.graph_size {
        return Err(Error::Config(format!(
            "graph.json has {} nodes, config expects {}",
            g.size(),
            run.config.data.graph_size
        )));
    }
    Ok(g)
}

/// Held-out instances: `count` draws spread round-robin over `sizes`, from
/// a seed stream disjoint from the training data.
pub fn heldout_instances(
    cfg: &RunConfig,
    graph: &FixedGraph,
    sizes: &[usize],
    count: usize,
) -> Result<Vec<(String, ProblemInstance)>> {
    let table = cfg.data.capacity.table();
    (0..count)
        .map(|i| {
            let n = sizes[i % sizes.len()];
            let idx = i / sizes.len();
            let seed = derive_seed(cfg.seed, Stream::EvalInstance, &[n as u64, idx as u64]);
            Ok((format!("eval-n{n}-{idx:04}"), sample_instance(graph, n, &table, seed)?))
        })
        .collect()
}

/// Teacher-labels instances; failures are dropped (and logged).
pub fn label_all(instances: &[(String, ProblemInstance)], teacher: &TeacherConfig) -> Vec<DatasetRecord> {
    instances.iter().filter_map(|(id, inst)| label(inst, id.clone(), teacher)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataOutputs {
    pub train: DatasetManifest,
    pub heldout_digest: String,
}

pub fn data_gen(run: &RunDir, graph: &FixedGraph) -> Result<DataOutputs> {
    let cfg = &run.config;
    let spec = DatasetSpec {
        sizes: cfg.data.sizes.clone(),
        per_size: cfg.data.per_size,
        table: cfg.data.capacity.table(),
        teacher: cfg.data.teacher.clone(),
        master_seed: cfg.seed,
    };
    let train_path = run.ensure_parent(TRAIN_DATA)?;
    let train = build_dataset(graph, &spec, cfg.workers, &train_path)?;
    let held = label_all(&heldout_instances(cfg, graph, &cfg.eval.sizes, cfg.eval.count)?, &cfg.data.teacher);
    write_records(&run.path(HELDOUT_DATA), &held)?;
    let heldout_digest = content_digest(&held)?;
    run.record_step(
        "data gen",
        &[GRAPH_FILE],
        &[TRAIN_DATA, HELDOUT_DATA],
        &[
            ("train_digest", train.content_digest.clone()),
            ("heldout_digest", heldout_digest.clone()),
        ],
    )?;
    Ok(DataOutputs { train, heldout_digest })
}

pub fn load_heldout(run: &RunDir, graph: &FixedGraph) -> Result<(Vec<DatasetRecord>, Vec<(String, ProblemInstance)>)> {
    let recs = read_dataset(&run.require(HELDOUT_DATA, "data gen")?)?;
    let inst = recs
        .iter()
        .map(|r| Ok((r.instance_id.clone(), r.instance(graph)?)))
        .collect::<Result<_>>()?;
    Ok((recs, inst))
}

/// Re-solves the held-out set with another teacher setting, written to
/// `teacher/<name>.jsonl`.
pub fn teacher_solve(run: &RunDir, graph: &FixedGraph, name: &str, teacher: &TeacherConfig) -> Result<Vec<DatasetRecord>> {
    let (_, inst) = load_heldout(run, graph)?;
    let recs = label_all(&inst, teacher);
    let rel = format!("teacher/{name}.jsonl");
    write_records(&run.ensure_parent(&rel)?, &recs)?;
    run.record_step(&format!("teacher solve {name}"), &[HELDOUT_DATA], &[&rel], &[])?;
    Ok(recs)
}

pub fn train_run(run: &RunDir, graph: &FixedGraph) -> Result<(TrainState, Vec<TrainLogRow>)> {
    let cfg = &run.config;
    let data = group_by_size(read_dataset(&run.require(TRAIN_DATA, "data gen")?)?);
    let params = ModelParams::<f32>::init(&cfg.model, cfg.seed)?;
    let mut state = TrainState::new(params, cfg.train.adamw);
    let dir = run.path(TRAIN_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let log_path = run.path(TRAIN_LOG);
    if log_path.exists() {
        // a rerun starts from scratch, so the log does too
        std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
    }
    let mut log = TrainLog::with_file(&log_path)?;
    let opts = TrainOptions {
        seed: cfg.seed,
        checkpoint_dir: Some(&dir),
        checkpoint_every: cfg.train.checkpoint_every,
    };
    for phase in &cfg.train.phases {
        log::info!("phase {}: {} steps", phase.name, phase.steps);
        train_phase(phase, &mut state, graph, &data, &opts, &mut log)?;
    }
    run.record_step(
        "train run",
        &[TRAIN_DATA],
        &[MODEL_CKPT, TRAIN_LOG],
        &[("steps", state.global_step.to_string())],
    )?;
    Ok((state, log.rows().to_vec()))
}

pub fn load_model(run: &RunDir) -> Result<ModelParams<f32>> {
    Ok(ModelParams::load(&run.require(MODEL_CKPT, "train run")?, Some(&run.config.model))?.0)
}

/// The decoders every run evaluates: greedy and the configured policy.
pub fn decoders(cfg: &RunConfig) -> Vec<(String, DecodePolicy)> {
    let greedy = DecodePolicy {
        max_tokens: cfg.decode.max_tokens,
        ..DecodePolicy::greedy()
    };
    let mut out = vec![("greedy".to_string(), greedy)];
    if cfg.decode.strategy == Strategy::Nucleus || cfg.decode.samples > 1 {
        let p = cfg.decode.clone();
        out.push((format!("{}-s{}", p.strategy.as_str(), p.samples), DecodePolicy { seed: cfg.seed ^ p.seed, ..p }));
    }
    out
}

pub fn write_decode(path: &Path, recs: &[DecodeRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in recs {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_decode(path: &Path) -> Result<Vec<DecodeRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn decode_run(run: &RunDir, graph: &FixedGraph) -> Result<Vec<(String, Vec<DecodeRecord>)>> {
    let params = load_model(run)?;
    let (_, inst) = load_heldout(run, graph)?;
    let mut out = Vec::new();
    for (name, policy) in decoders(&run.config) {
        let recs = decode_all(&params, &inst, &policy, run.config.workers)?;
        let rel = format!("decode/{name}.jsonl");
        write_decode(&run.ensure_parent(&rel)?, &recs)?;
        run.record_step(&format!("decode run {name}"), &[MODEL_CKPT, HELDOUT_DATA], &[&rel], &[])?;
        out.push((name, recs));
    }
    Ok(out)
}

fn list_jsonl(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    v.sort();
    Ok(v)
}

/// Builds the report from the held-out labels (the baseline), every
/// `teacher/*.jsonl` and every `decode/*.jsonl`, and draws the first
/// held-out instance's best decoded solution.
pub fn eval_report(run: &RunDir, graph: &FixedGraph) -> Result<Vec<ReportLine>> {
    let (held, inst) = load_heldout(run, graph)?;
    let size_of: BTreeMap<&str, usize> = held.iter().map(|r| (r.instance_id.as_str(), r.n_customers())).collect();
    let baseline = run.config.eval.baseline.clone();
    let mut rows: Vec<EvalRow> = held
        .iter()
        .map(|r| EvalRow {
            instance_id: r.instance_id.clone(),
            n: r.n_customers(),
            method: baseline.clone(),
            decoder: "-".into(),
            s: 1,
            objective: r.teacher_cost,
            wall_time_s: r.teacher_wall_time,
        })
        .collect();
    let mut inputs = vec![HELDOUT_DATA.to_string()];
    for p in list_jsonl(&run.path("teacher"))? {
        let name = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
        inputs.push(format!("teacher/{name}.jsonl"));
        rows.extend(read_dataset(&p)?.into_iter().map(|r| EvalRow {
            n: r.n_customers(),
            instance_id: r.instance_id,
            method: format!("teacher-{name}"),
            decoder: "-".into(),
            s: 1,
            objective: r.teacher_cost,
            wall_time_s: r.teacher_wall_time,
        }));
    }
    let mut example: Option<(f64, Solution)> = None;
    for p in list_jsonl(&run.path("decode"))? {
        let name = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
        inputs.push(format!("decode/{name}.jsonl"));
        for r in read_decode(&p)? {
            let n = *size_of
                .get(r.instance_id.as_str())
                .ok_or_else(|| Error::invalid(format!("{} is not a held-out instance", r.instance_id)))?;
            if Some(r.instance_id.as_str()) == held.first().map(|h| h.instance_id.as_str())
                && example.as_ref().is_none_or(|(c, _)| r.cost < *c)
            {
                example = Some((r.cost, Solution::new(r.tokens.clone())));
            }
            rows.push(EvalRow {
                instance_id: r.instance_id,
                n,
                method: "model".into(),
                decoder: r.strategy.as_str().into(),
                s: r.s,
                objective: r.cost,
                wall_time_s: r.wall_time_s,
            });
        }
    }
    let report = build_report(&rows, &baseline)?;
    let path = run.ensure_parent(REPORT)?;
    write_report_csv(&report, &path)?;
    let mut outputs = vec![REPORT.to_string()];
    if let (Some((_, sol)), Some((_, first))) = (example, inst.first()) {
        export_geometry(first, &sol, &run.path("eval/example"))?;
        outputs.push("eval/example.svg".into());
        outputs.push("eval/example.csv".into());
    }
    let ins: Vec<&str> = inputs.iter().map(String::as_str).collect();
    let outs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    run.record_step("eval report", &ins, &outs, &[])?;
    Ok(report)
}

/// Everything a full run produces that must replay exactly.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub data: DataOutputs,
    pub log: Vec<TrainLogRow>,
    pub decoded: Vec<(String, Vec<DecodeRecord>)>,
    pub report: Vec<ReportLine>,
}

pub fn run_all(run: &RunDir) -> Result<RunSummary> {
    let graph = graph_build(run)?;
    let data = data_gen(run, &graph)?;
    let (_, log) = train_run(run, &graph)?;
    let decoded = decode_run(run, &graph)?;
    let report = eval_report(run, &graph)?;
    Ok(RunSummary {
        data,
        log,
        decoded,
        report,
    })
}
