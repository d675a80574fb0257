//! Fixed-graph construction, instance sampling, and teacher-labelled datasets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{validate_solution, FixedGraph, ProblemInstance, Solution, DEPOT_XY, MAX_DEMAND};
use crate::rng::{stream_rng, Stream};
use crate::teacher::{self, TeacherConfig};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MIN_GRAPH_SIZE: usize = 21;

/// Vehicle capacity range per instance size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityTable {
    /// `(n_lo, n_hi, c_lo, c_hi)`: sizes `n_lo..=n_hi` draw from `c_lo..c_hi`.
    pub rows: Vec<(usize, usize, u32, u32)>,
}

impl CapacityTable {
    /// Rows for 20 to 1000 customers.
    pub fn standard() -> Self {
        CapacityTable {
            rows: vec![
                (20, 49, 30, 40),
                (50, 99, 40, 50),
                (100, 199, 50, 60),
                (200, 400, 60, 70),
                (401, 1000, 70, 80),
            ],
        }
    }

    /// The standard table with its first row extended down to one customer.
    pub fn extended() -> Self {
        let mut t = Self::standard();
        t.rows[0].0 = 1;
        t
    }

    /// Half-open capacity range `[lo, hi)` for `n` customers.
    pub fn range(&self, n: usize) -> Result<(u32, u32)> {
        self.rows
            .iter()
            .find(|r| (r.0..=r.1).contains(&n))
            .map(|r| (r.2, r.3))
            .ok_or_else(|| {
                let lo = self.rows.first().map_or(0, |r| r.0);
                let hi = self.rows.last().map_or(0, |r| r.1);
                Error::invalid(format!("no capacity range for {n} customers (table covers {lo}..={hi})"))
            })
    }
}

/// Capacity range from the standard table.
pub fn capacity_range(n_customers: usize) -> Result<(u32, u32)> {
    CapacityTable::standard().range(n_customers)
}

/// Depot at the center, `size - 1` customers uniform on the unit square.
pub fn build_fixed_graph(size: usize, seed: u64) -> Result<FixedGraph> {
    if size < MIN_GRAPH_SIZE {
        return Err(Error::invalid(format!(
            "graph size must be at least {MIN_GRAPH_SIZE}, got {size}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Graph, &[]);
    let mut coords = Vec::with_capacity(size);
    coords.push(DEPOT_XY);
    for _ in 1..size {
        coords.push([rng.gen::<f64>(), rng.gen::<f64>()]);
    }
    FixedGraph::from_coords(coords, seed)
}

/// Customers without replacement, demands uniform on `1..=9`, integer
/// capacity uniform on the table range.
pub fn sample_instance(
    graph: &FixedGraph,
    n_customers: usize,
    table: &CapacityTable,
    seed: u64,
) -> Result<ProblemInstance> {
    if n_customers == 0 || n_customers >= graph.size() {
        return Err(Error::invalid(format!(
            "cannot sample {n_customers} customers from a graph of {} nodes",
            graph.size()
        )));
    }
    let (lo, hi) = table.range(n_customers)?;
    let mut rng = crate::rng::Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = index::sample(&mut rng, graph.size() - 1, n_customers)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    ids.sort_unstable();
    let mut node_ids = Vec::with_capacity(n_customers + 1);
    node_ids.push(0);
    node_ids.extend(ids);
    let mut demands = vec![0];
    demands.extend((0..n_customers).map(|_| rng.gen_range(1..=MAX_DEMAND)));
    let capacity = rng.gen_range(lo..hi);
    ProblemInstance::new(graph, node_ids, demands, capacity)
}

/// Instance `index` of size `n` under a master seed.
pub fn instance_seed(master: u64, n_customers: usize, index: usize) -> u64 {
    crate::rng::derive_seed(master, Stream::Instance, &[n_customers as u64, index as u64])
}

/// One teacher-labelled problem-solution pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub instance_id: String,
    pub node_ids: Vec<usize>,
    pub demands: Vec<u32>,
    pub capacity: u32,
    pub tokens: Vec<usize>,
    pub teacher_cost: f64,
    pub teacher_wall_time: f64,
}

impl DatasetRecord {
    pub fn instance(&self, graph: &FixedGraph) -> Result<ProblemInstance> {
        ProblemInstance::new(graph, self.node_ids.clone(), self.demands.clone(), self.capacity)
    }

    pub fn solution(&self) -> Solution {
        Solution::new(self.tokens.clone())
    }

    pub fn n_customers(&self) -> usize {
        self.node_ids.len() - 1
    }
}

pub fn instance_id(n_customers: usize, index: usize) -> String {
    format!("n{n_customers}-{index:06}")
}

/// Sidecar written next to every dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub graph_seed: u64,
    pub graph_size: usize,
    pub master_seed: u64,
    pub sizes: Vec<usize>,
    pub per_size: usize,
    pub teacher: TeacherConfig,
    pub records: usize,
    pub skipped: usize,
    /// Hex SHA-256 of the records with wall times zeroed.
    pub content_digest: String,
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    dataset.with_file_name(name)
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub sizes: Vec<usize>,
    pub per_size: usize,
    pub table: CapacityTable,
    pub teacher: TeacherConfig,
    pub master_seed: u64,
}

/// Labels one instance with the teacher; `None` (logged) if the teacher fails.
pub fn label_instance(
    graph: &FixedGraph,
    spec: &DatasetSpec,
    n: usize,
    index: usize,
) -> Result<Option<DatasetRecord>> {
    let inst = sample_instance(graph, n, &spec.table, instance_seed(spec.master_seed, n, index))?;
    Ok(label(&inst, instance_id(n, index), &spec.teacher))
}

/// Teacher-labelled record of `inst`, or `None` (logged) on failure.
pub fn label(inst: &ProblemInstance, id: String, teacher: &TeacherConfig) -> Option<DatasetRecord> {
    match teacher::solve(inst, teacher) {
        Ok(r) => {
            let report = validate_solution(inst, &r.solution);
            if !report.is_valid() {
                log::warn!("skipping {id}: teacher produced an invalid solution ({report})");
                return None;
            }
            Some(DatasetRecord {
                instance_id: id,
                node_ids: inst.node_ids().to_vec(),
                demands: inst.demands().to_vec(),
                capacity: inst.capacity(),
                tokens: r.solution.into_tokens(),
                teacher_cost: r.cost,
                teacher_wall_time: r.wall_time_s,
            })
        }
        Err(e) => {
            log::warn!("skipping {id}: teacher failed: {e}");
            None
        }
    }
}

/// Writes records as JSONL.
pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Generates, labels and writes a dataset plus its manifest.
///
/// Instances are processed in parallel on `workers` threads; records are
/// written in (size, index) order, so the file does not depend on `workers`.
pub fn build_dataset(
    graph: &FixedGraph,
    spec: &DatasetSpec,
    workers: usize,
    out: &Path,
) -> Result<DatasetManifest> {
    spec.teacher.validate()?;
    for &n in &spec.sizes {
        spec.table.range(n)?;
        if n >= graph.size() {
            return Err(Error::invalid(format!("size {n} needs a graph with more than {n} nodes")));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    let mut digest = Sha256::new();
    let (mut records, mut skipped) = (0, 0);
    const CHUNK: usize = 4096;
    for &n in &spec.sizes {
        let mut start = 0;
        while start < spec.per_size {
            let end = (start + CHUNK).min(spec.per_size);
            let batch: Vec<Result<Option<DatasetRecord>>> = pool.install(|| {
                (start..end)
                    .into_par_iter()
                    .map(|i| label_instance(graph, spec, n, i))
                    .collect()
            });
            for r in batch {
                match r? {
                    Some(rec) => {
                        digest_record(&mut digest, &rec)?;
                        serde_json::to_writer(&mut w, &rec)?;
                        w.write_all(b"\n").map_err(|e| Error::io(out, e))?;
                        records += 1;
                    }
                    None => skipped += 1,
                }
            }
            start = end;
        }
        log::info!("size {n}: {} records so far", records);
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        graph_seed: graph.seed(),
        graph_size: graph.size(),
        master_seed: spec.master_seed,
        sizes: spec.sizes.clone(),
        per_size: spec.per_size,
        teacher: spec.teacher.clone(),
        records,
        skipped,
        content_digest: hex::encode(digest.finalize()),
    };
    let mpath = manifest_path(out);
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

fn digest_record(h: &mut Sha256, rec: &DatasetRecord) -> Result<()> {
    let mut r = rec.clone();
    r.teacher_wall_time = 0.0;
    h.update(serde_json::to_vec(&r)?);
    h.update(b"\n");
    Ok(())
}

/// SHA-256 over records, ignoring teacher wall time.
pub fn content_digest(records: &[DatasetRecord]) -> Result<String> {
    let mut h = Sha256::new();
    for r in records {
        digest_record(&mut h, r)?;
    }
    Ok(hex::encode(h.finalize()))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Records grouped by instance size.
pub type SizedDatasets = BTreeMap<usize, Vec<DatasetRecord>>;

pub fn group_by_size(records: Vec<DatasetRecord>) -> SizedDatasets {
    let mut out = SizedDatasets::new();
    for r in records {
        out.entry(r.n_customers()).or_default().push(r);
    }
    out
}

/// Union of the per-size datasets for sizes `min_size..=max_size`, smallest
/// size first; `trunc` keeps only the first `trunc` pairs of each size.
pub fn curriculum(
    datasets: &SizedDatasets,
    min_size: usize,
    max_size: usize,
    trunc: Option<usize>,
) -> Result<Vec<&DatasetRecord>> {
    let mut out = Vec::new();
    for n in min_size..=max_size {
        let set = datasets
            .get(&n)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::invalid(format!("curriculum needs the size-{n} dataset, which is missing")))?;
        let take = trunc.unwrap_or(set.len()).min(set.len());
        out.extend(&set[..take]);
    }
    Ok(out)
}
