//! Run configuration: one JSON document covering every stage of the
//! pipeline, with shipped `desk` and `paper` profiles.
//!
//! Layering, lowest to highest precedence: profile defaults, the config
//! file (merged key by key), `FMCVRP_*` environment variables, and explicit
//! command-line flags. Nested keys in environment variables are separated by
//! a double underscore, e.g. `FMCVRP_DATA__PER_SIZE=100`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::CapacityTable;
use crate::decode::DecodePolicy;
use crate::model::ModelConfig;
use crate::teacher::TeacherConfig;
use crate::tensor::AdamWConfig;
use crate::train::{lr_scaled_constant, LrSchedule, PhaseSpec, Scope};
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "FMCVRP_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
    /// Desk defaults edited by the user.
    Custom,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            "custom" => Ok(Profile::Custom),
            _ => Err(Error::Config(format!("unknown profile {s:?} (desk, paper, custom)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapacityRule {
    /// Table rows as published (sizes 20 and up).
    Standard,
    /// First row extended down to one customer.
    Extended,
}

impl CapacityRule {
    pub fn table(self) -> CapacityTable {
        match self {
            CapacityRule::Standard => CapacityTable::standard(),
            CapacityRule::Extended => CapacityTable::extended(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub graph_size: usize,
    pub sizes: Vec<usize>,
    pub per_size: usize,
    pub capacity: CapacityRule,
    pub teacher: TeacherConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub adamw: AdamWConfig,
    pub phases: Vec<PhaseSpec>,
    /// Steps between checkpoints; 0 checkpoints at phase ends only.
    pub checkpoint_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out sizes, drawn independently of the training data.
    pub sizes: Vec<usize>,
    /// Total held-out instances, spread round-robin over `sizes`.
    pub count: usize,
    /// Method name the gaps are measured against.
    pub baseline: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub workers: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodePolicy,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        let graph_size = 201;
        let constant = LrSchedule::Constant {
            lr: lr_scaled_constant(1e-3, 2.0).expect("positive ratio"),
        };
        RunConfig {
            profile: Profile::Desk,
            seed: 2024,
            workers: 1,
            data: DataConfig {
                graph_size,
                sizes: (10..=30).collect(),
                per_size: 2_000,
                capacity: CapacityRule::Extended,
                teacher: TeacherConfig::default(),
            },
            model: ModelConfig::desk(graph_size),
            train: TrainConfig {
                adamw: AdamWConfig::default(),
                phases: vec![
                    PhaseSpec {
                        name: "I".into(),
                        min_size: 10,
                        stages: (10..=20).collect(),
                        trunc: Some(200),
                        scope: Scope::Encoder,
                        batch_size: 16,
                        schedule: LrSchedule::InverseSqrt {
                            peak: 0.01,
                            floor: 0.002,
                            warmup: 500,
                        },
                        rotation: false,
                        steps: 1_000,
                        time_budget_h: None,
                    },
                    PhaseSpec {
                        name: "II-A".into(),
                        min_size: 10,
                        stages: (10..=20).collect(),
                        trunc: None,
                        scope: Scope::EncoderDecoder,
                        batch_size: 16,
                        schedule: constant.clone(),
                        rotation: false,
                        steps: 4_000,
                        time_budget_h: None,
                    },
                    PhaseSpec {
                        name: "II-B".into(),
                        min_size: 10,
                        stages: vec![20],
                        trunc: None,
                        scope: Scope::EncoderDecoder,
                        batch_size: 16,
                        schedule: constant,
                        rotation: false,
                        steps: 4_000,
                        time_budget_h: None,
                    },
                ],
                checkpoint_every: 1_000,
            },
            decode: DecodePolicy {
                samples: 50,
                ..DecodePolicy::nucleus(0.9, 50, 0)
            },
            eval: EvalConfig {
                sizes: (10..=20).collect(),
                count: 200,
                baseline: "teacher".into(),
            },
        }
    }

    /// Full-scale settings; documents the original setup and is not meant
    /// to run on one machine.
    pub fn paper() -> Self {
        let graph_size = 1001;
        let constant = LrSchedule::Constant {
            lr: lr_scaled_constant(1e-3, 2.0).expect("positive ratio"),
        };
        let phase = |name: &str, stages: Vec<usize>, hours: f64| PhaseSpec {
            name: name.into(),
            min_size: 20,
            stages,
            trunc: None,
            scope: Scope::EncoderDecoder,
            batch_size: 256,
            schedule: constant.clone(),
            rotation: true,
            steps: u64::MAX,
            time_budget_h: Some(hours),
        };
        RunConfig {
            profile: Profile::Paper,
            seed: 2024,
            workers: 1,
            data: DataConfig {
                graph_size,
                sizes: (20..=400).collect(),
                per_size: 100_000,
                capacity: CapacityRule::Standard,
                teacher: TeacherConfig {
                    time_budget_s: 5.0,
                    ..TeacherConfig::default()
                },
            },
            model: ModelConfig::paper(graph_size),
            train: TrainConfig {
                adamw: AdamWConfig::default(),
                phases: vec![
                    PhaseSpec {
                        name: "I".into(),
                        trunc: Some(1_000),
                        scope: Scope::Encoder,
                        schedule: LrSchedule::InverseSqrt {
                            peak: 0.01,
                            floor: 0.002,
                            warmup: 10_000,
                        },
                        rotation: false,
                        ..phase("I", (20..=400).collect(), 52.0)
                    },
                    phase("II-A", (20..=50).collect(), 59.0),
                    phase("II-B", vec![200], 26.0),
                    phase("II-C", vec![400], 96.0),
                ],
                checkpoint_every: 10_000,
            },
            decode: DecodePolicy {
                rotate: true,
                ..DecodePolicy::nucleus(0.9, 1000, 0)
            },
            eval: EvalConfig {
                sizes: vec![20, 50, 100],
                count: 1_000,
                baseline: "teacher".into(),
            },
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
            Profile::Custom => RunConfig {
                profile: Profile::Custom,
                ..Self::desk()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.model.check_graph(self.data.graph_size)?;
        self.data.teacher.validate()?;
        self.decode.validate()?;
        let table = self.data.capacity.table();
        for &n in self.data.sizes.iter().chain(&self.eval.sizes) {
            if n == 0 || n >= self.data.graph_size {
                return bad(format!("size {n} does not fit a graph of {} nodes", self.data.graph_size));
            }
            table.range(n)?;
        }
        if self.data.per_size == 0 {
            return bad("data.per_size must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        for p in &self.train.phases {
            p.validate()?;
            for n in p.min_size..=p.stages.iter().copied().max().unwrap_or(0) {
                if !self.data.sizes.contains(&n) {
                    return bad(format!("phase {} needs size {n}, which data.sizes does not generate", p.name));
                }
            }
        }
        if self.eval.sizes.is_empty() {
            return bad("eval.sizes is empty".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds a config from an optional file and environment overrides.
    /// The file may set `"profile"` to pick its base; `profile` overrides it.
    pub fn resolve(
        file: Option<&Path>,
        profile: Option<Profile>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let file_value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                if !v.is_object() {
                    return Err(Error::Config(format!("{}: top level must be an object", p.display())));
                }
                Some(v)
            }
            None => None,
        };
        let file_profile = match file_value.as_ref().and_then(|v| v.get("profile")) {
            Some(v) => Some(
                serde_json::from_value::<Profile>(v.clone()).map_err(|e| Error::Config(format!("profile: {e}")))?,
            ),
            None => None,
        };
        let base_profile = profile.or(file_profile).unwrap_or(Profile::Desk);
        let mut value = serde_json::to_value(Self::for_profile(base_profile))?;
        if let Some(f) = file_value {
            merge(&mut value, f);
        }
        if let Some(p) = profile {
            value["profile"] = serde_json::to_value(p)?;
        }
        apply_env(&mut value, env)?;
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Recursively overlays `over` onto `base`; arrays and scalars replace.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `FMCVRP_A__B=value` pairs. Values are parsed as JSON when
/// possible and kept as strings otherwise. Keys that name nothing in the
/// config are rejected.
pub fn apply_env(value: &mut Value, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut pairs: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        let mut slot = &mut *value;
        for part in &path {
            slot = slot
                .get_mut(part.as_str())
                .ok_or_else(|| Error::Config(format!("{key}: no config key {:?}", path.join("."))))?;
        }
        *slot = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn profiles_validate_and_roundtrip() {
        for p in [Profile::Desk, Profile::Paper, Profile::Custom] {
            let c = RunConfig::for_profile(p);
            c.validate().unwrap();
            let back: RunConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn env_overrides_file_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"data": {"per_size": 10}, "seed": 1}"#).unwrap();
        let c = RunConfig::resolve(Some(&path), None, env(&[("FMCVRP_SEED", "9")])).unwrap();
        assert_eq!((c.data.per_size, c.seed, c.profile), (10, 9, Profile::Desk));
        let c = RunConfig::resolve(None, None, env(&[("FMCVRP_DATA__TEACHER__TIME_BUDGET_S", "0.5")])).unwrap();
        assert_eq!(c.data.teacher.time_budget_s, 0.5);
        assert!(RunConfig::resolve(None, None, env(&[("FMCVRP_NOPE", "1")])).is_err());
        std::fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        assert!(RunConfig::resolve(Some(&path), None, env(&[])).is_err());
    }

    #[test]
    fn profile_flag_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"profile": "paper"}"#).unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), None, env(&[])).unwrap().data.graph_size, 1001);
        let c = RunConfig::resolve(Some(&path), Some(Profile::Desk), env(&[])).unwrap();
        assert_eq!((c.profile, c.data.graph_size), (Profile::Desk, 201));
    }
}
