//! Encoder-decoder transformer over node-ID tokens.
//!
//! The encoder reads the problem tokens as a set (no positional code); the
//! decoder reads the solution prefix with sinusoidal positions, attends
//! causally to itself and fully to the encoder output, and both stacks share
//! one input projection and one output matrix `W_o` onto node IDs.

mod forward;
mod infer;
mod mask;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph::FEATURE_DIM;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{read_tensors, write_tensors, Scalar, Tensor};
use crate::{Error, Result};

pub use forward::{attention, bind, dual_loss, ForwardCtx, LossParts};
pub use infer::{Encoded, Inference, StepRows};
pub use mask::{feasibility_mask, FeasState};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Graph size plus one padding slot.
    pub vocab_size: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn desk(graph_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: graph_size + 1,
            dropout: 0.1,
        }
    }

    pub fn paper(graph_size: usize) -> Self {
        ModelConfig {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_ff: 3072,
            vocab_size: graph_size + 1,
            dropout: 0.1,
        }
    }

    pub fn pad_id(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("model dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < 3 {
            return bad(format!("vocab_size {} is too small", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Checks that the vocabulary covers a graph of `graph_size` nodes plus pad.
    pub fn check_graph(&self, graph_size: usize) -> Result<()> {
        if self.vocab_size != graph_size + 1 {
            return Err(Error::Config(format!(
                "model vocabulary {} does not match graph size {graph_size} + 1",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NormIdx {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct FfIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EncLayerIdx {
    pub ln1: NormIdx,
    pub attn: AttnIdx,
    pub ln2: NormIdx,
    pub ff: FfIdx,
}

#[derive(Clone, Copy, Debug)]
pub struct DecLayerIdx {
    pub ln1: NormIdx,
    pub self_attn: AttnIdx,
    pub ln2: NormIdx,
    pub cross: AttnIdx,
    pub ln3: NormIdx,
    pub ff: FfIdx,
}

/// Positions of every named parameter in [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub input_w: usize,
    pub input_b: usize,
    pub enc: Vec<EncLayerIdx>,
    pub enc_norm: NormIdx,
    pub dec: Vec<DecLayerIdx>,
    pub dec_norm: NormIdx,
    pub w_out: usize,
    /// Tensors touched by the encoder-only objective.
    pub encoder_side: Vec<bool>,
}

enum Init {
    Zeros,
    Ones,
    Xavier,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
    encoder_side: Vec<bool>,
}

impl Builder {
    fn add(&mut self, name: String, shape: [usize; 2], init: Init, enc: bool) -> usize {
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.inits.push(init);
        self.encoder_side.push(enc);
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize, enc: bool) -> NormIdx {
        NormIdx {
            g: self.add(format!("{prefix}.g"), [1, d], Init::Ones, enc),
            b: self.add(format!("{prefix}.b"), [1, d], Init::Zeros, enc),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize, enc: bool) -> AttnIdx {
        let mut m = |n: &str| self.add(format!("{prefix}.{n}"), [d, d], Init::Xavier, enc);
        AttnIdx {
            wq: m("wq"),
            wk: m("wk"),
            wv: m("wv"),
            wo: m("wo"),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, dff: usize, enc: bool) -> FfIdx {
        FfIdx {
            w1: self.add(format!("{prefix}.w1"), [d, dff], Init::Xavier, enc),
            b1: self.add(format!("{prefix}.b1"), [1, dff], Init::Zeros, enc),
            w2: self.add(format!("{prefix}.w2"), [dff, d], Init::Xavier, enc),
            b2: self.add(format!("{prefix}.b2"), [1, d], Init::Zeros, enc),
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let d = cfg.d_model;
    let mut b = Builder {
        names: vec![],
        shapes: vec![],
        inits: vec![],
        encoder_side: vec![],
    };
    let input_w = b.add("input.w".into(), [FEATURE_DIM, d], Init::Xavier, true);
    let input_b = b.add("input.b".into(), [1, d], Init::Zeros, true);
    let enc = (0..cfg.n_layers)
        .map(|l| EncLayerIdx {
            ln1: b.norm(&format!("enc.{l}.ln1"), d, true),
            attn: b.attn(&format!("enc.{l}.attn"), d, true),
            ln2: b.norm(&format!("enc.{l}.ln2"), d, true),
            ff: b.ff(&format!("enc.{l}.ff"), d, cfg.d_ff, true),
        })
        .collect();
    let enc_norm = b.norm("enc.norm", d, true);
    let dec = (0..cfg.n_layers)
        .map(|l| DecLayerIdx {
            ln1: b.norm(&format!("dec.{l}.ln1"), d, false),
            self_attn: b.attn(&format!("dec.{l}.self"), d, false),
            ln2: b.norm(&format!("dec.{l}.ln2"), d, false),
            cross: b.attn(&format!("dec.{l}.cross"), d, false),
            ln3: b.norm(&format!("dec.{l}.ln3"), d, false),
            ff: b.ff(&format!("dec.{l}.ff"), d, cfg.d_ff, false),
        })
        .collect();
    let dec_norm = b.norm("dec.norm", d, false);
    let w_out = b.add("output.w".into(), [d, cfg.vocab_size], Init::Xavier, true);
    let layout = Layout {
        input_w,
        input_b,
        enc,
        enc_norm,
        dec,
        dec_norm,
        w_out,
        encoder_side: b.encoder_side.clone(),
    };
    (layout, b)
}

/// All trainable tensors of one model.
#[derive(Clone, Debug)]
pub struct ModelParams<T = f32> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

impl<T: Scalar> ModelParams<T> {
    /// Xavier-uniform matrices, zero biases, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(config);
        let mut rng = stream_rng(seed, Stream::Init, &[]);
        let tensors = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(shape, init)| match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, T::one()),
                Init::Xavier => {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::from_fn(shape[0], shape[1], |_, _| T::of(rng.gen_range(-limit..limit)))
                }
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            layout,
            names: b.names,
            tensors,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.numel()).collect()
    }

    /// Writes config and tensors; `extra` is stored verbatim in the header.
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let header = serde_json::to_string(&CheckpointHeader {
            model: self.config.clone(),
            extra,
        })?;
        let tmp = path.with_extension("tmp");
        {
            let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(f);
            let named: Vec<(&str, &Tensor<T>)> = self
                .names
                .iter()
                .map(String::as_str)
                .zip(&self.tensors)
                .collect();
            write_tensors(&mut w, &header, &named)?;
            std::io::Write::flush(&mut w).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint; if `expect` is given, its config must match.
    pub fn load(path: &Path, expect: Option<&ModelConfig>) -> Result<(Self, serde_json::Value)> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let (header, tensors) = read_tensors(&mut BufReader::new(f))?;
        let header: CheckpointHeader = serde_json::from_str(&header)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if let Some(exp) = expect {
            if exp != &header.model {
                return Err(Error::Checkpoint(format!(
                    "config mismatch: checkpoint has {:?}, expected {:?}",
                    header.model, exp
                )));
            }
        }
        let mut params = Self::init(&header.model, 0)?;
        if tensors.len() != params.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model needs {}",
                tensors.len(),
                params.tensors.len()
            )));
        }
        for (i, (name, t)) in tensors.into_iter().enumerate() {
            if name != params.names[i] || t.shape() != params.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: found {name} {:?}, expected {} {:?}",
                    t.shape(),
                    params.names[i],
                    params.tensors[i].shape()
                )));
            }
            params.tensors[i] = t.cast();
        }
        Ok((params, header.extra))
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid() {
        let c = ModelConfig::desk(201);
        c.validate().unwrap();
        assert_eq!(c.vocab_size, 202);
        assert_eq!(c.pad_id(), 201);
        let bad = ModelConfig {
            n_heads: 5,
            ..c
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn layout_names_are_unique() {
        let p = ModelParams::<f32>::init(&ModelConfig::desk(201), 1).unwrap();
        let mut names = p.names.clone();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.names.len());
        assert_eq!(p.tensors[p.layout.w_out].shape(), &[64, 202]);
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = ModelParams::<f32>::init(&ModelConfig::desk(30), 3).unwrap();
        p.save(&path, serde_json::json!({"step": 7})).unwrap();
        let (q, extra) = ModelParams::<f32>::load(&path, Some(&p.config)).unwrap();
        assert_eq!(extra["step"], 7);
        for (a, b) in p.tensors.iter().zip(&q.tensors) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let other = ModelConfig::desk(31);
        let err = ModelParams::<f32>::load(&path, Some(&other)).unwrap_err();
        assert!(err.to_string().contains("config mismatch"), "{err}");
    }
}
