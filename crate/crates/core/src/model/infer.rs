//! Tape-free forward pass for decoding.
//!
//! The encoder runs once per (instance, rotation). The decoder advances
//! several trajectories in lockstep, one token per call, keeping per-layer
//! key/value caches so each step costs `O(t)` instead of `O(t^2)`.

use super::{AttnIdx, FfIdx, ModelParams, NormIdx, LN_EPS};
use crate::graph::{problem_features, ProblemInstance, FEATURE_DIM};
use crate::tensor::kernels::{self, dot, layer_norm_rows, sinusoidal_positions};
use crate::tensor::{Scalar, Tensor};

/// Encoder output of one instance under one rotation, with the per-layer
/// cross-attention keys/values and the output columns of its node IDs.
#[derive(Clone, Debug)]
pub struct Encoded<T> {
    pub rotation: f64,
    /// Number of instance nodes.
    pub m: usize,
    pub e: Vec<T>,
    cross_k: Vec<Vec<T>>,
    cross_v: Vec<Vec<T>>,
    /// Row `j` is the `W_o` column of local node `j`.
    w_cols: Vec<T>,
}

/// Self-attention cache of one trajectory.
#[derive(Clone, Debug, Default)]
pub struct StepRows<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

impl<T> StepRows<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub struct Inference<'a, T> {
    params: &'a ModelParams<T>,
    positions: Vec<T>,
}

impl<'a, T: Scalar> Inference<'a, T> {
    /// `max_len` bounds the number of decoder positions.
    pub fn new(params: &'a ModelParams<T>, max_len: usize) -> Self {
        let d = params.config.d_model;
        Inference {
            params,
            positions: sinusoidal_positions(max_len, d),
        }
    }

    pub fn max_len(&self) -> usize {
        self.positions.len() / self.params.config.d_model
    }

    fn t(&self, i: usize) -> &Tensor<T> {
        &self.params.tensors[i]
    }

    fn linear(&self, x: &[T], rows: usize, w: usize, b: Option<usize>) -> Vec<T> {
        let wt = self.t(w);
        let (k, n) = (wt.rows(), wt.cols());
        let mut out = vec![T::zero(); rows * n];
        kernels::matmul(x, wt.data(), rows, k, n, &mut out);
        if let Some(b) = b {
            let bias = self.t(b).data();
            for row in out.chunks_mut(n) {
                kernels::axpy(T::one(), bias, row);
            }
        }
        out
    }

    fn norm(&self, x: &[T], n: NormIdx) -> Vec<T> {
        let d = self.params.config.d_model;
        let mut out = vec![T::zero(); x.len()];
        layer_norm_rows(x, d, T::of(LN_EPS), &mut out);
        let (g, b) = (self.t(n.g).data(), self.t(n.b).data());
        for row in out.chunks_mut(d) {
            for ((o, &gi), &bi) in row.iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        out
    }

    fn ff(&self, x: &[T], rows: usize, f: FfIdx) -> Vec<T> {
        let mut h = self.linear(x, rows, f.w1, Some(f.b1));
        for v in h.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        self.linear(&h, rows, f.w2, Some(f.b2))
    }

    /// Multi-head attention of one query row over `len` key/value rows.
    fn attend(&self, q: &[T], keys: &[T], vals: &[T], len: usize, out: &mut [T], scores: &mut Vec<T>) {
        let cfg = &self.params.config;
        let (d, dk) = (cfg.d_model, cfg.head_dim());
        let scale = T::of(1.0 / (dk as f64).sqrt());
        out.fill(T::zero());
        for h in 0..cfg.n_heads {
            let qh = &q[h * dk..(h + 1) * dk];
            scores.clear();
            scores.extend((0..len).map(|j| dot(qh, &keys[j * d + h * dk..j * d + (h + 1) * dk]) * scale));
            kernels::softmax_row(scores);
            let oh = &mut out[h * dk..(h + 1) * dk];
            for (j, &p) in scores.iter().enumerate() {
                kernels::axpy(p, &vals[j * d + h * dk..j * d + (h + 1) * dk], oh);
            }
        }
    }

    fn self_attention_full(&self, x: &[T], rows: usize, a: AttnIdx) -> Vec<T> {
        let d = self.params.config.d_model;
        let q = self.linear(x, rows, a.wq, None);
        let k = self.linear(x, rows, a.wk, None);
        let v = self.linear(x, rows, a.wv, None);
        let mut cat = vec![T::zero(); rows * d];
        let mut scores = Vec::new();
        for i in 0..rows {
            self.attend(&q[i * d..(i + 1) * d], &k, &v, rows, &mut cat[i * d..(i + 1) * d], &mut scores);
        }
        self.linear(&cat, rows, a.wo, None)
    }

    /// Encoder forward (dropout off) for one rotation of an instance.
    pub fn encode(&self, inst: &ProblemInstance, rotation: f64) -> Encoded<T> {
        let l = &self.params.layout;
        let d = self.params.config.d_model;
        let feats = problem_features::<T>(inst, rotation);
        let m = inst.len();
        let mut x = self.linear(feats.data(), m, l.input_w, Some(l.input_b));
        for layer in &l.enc {
            let h = self.norm(&x, layer.ln1);
            let a = self.self_attention_full(&h, m, layer.attn);
            kernels::axpy(T::one(), &a, &mut x);
            let h = self.norm(&x, layer.ln2);
            let f = self.ff(&h, m, layer.ff);
            kernels::axpy(T::one(), &f, &mut x);
        }
        let e = self.norm(&x, l.enc_norm);
        let cross_k = l.dec.iter().map(|dl| self.linear(&e, m, dl.cross.wk, None)).collect();
        let cross_v = l.dec.iter().map(|dl| self.linear(&e, m, dl.cross.wv, None)).collect();
        let w = self.t(l.w_out);
        let vocab = w.cols();
        let mut w_cols = Vec::with_capacity(m * d);
        for &id in inst.node_ids() {
            w_cols.extend((0..d).map(|r| w.data()[r * vocab + id]));
        }
        Encoded {
            rotation,
            m,
            e,
            cross_k,
            cross_v,
            w_cols,
        }
    }

    /// Full-vocabulary problem logits `E W_o` (`m x vocab`).
    pub fn problem_logits(&self, enc: &Encoded<T>) -> Vec<T> {
        self.linear(&enc.e, enc.m, self.params.layout.w_out, None)
    }

    pub fn new_cache(&self) -> StepRows<T> {
        let n = self.params.layout.dec.len();
        StepRows {
            k: vec![Vec::new(); n],
            v: vec![Vec::new(); n],
            len: 0,
        }
    }

    /// Feeds one token per trajectory and returns unmasked logits over each
    /// trajectory's local nodes (`enc[b].m` values for row `b`).
    ///
    /// All caches must hold the same number of positions.
    pub fn step(
        &self,
        encs: &[&Encoded<T>],
        caches: &mut [&mut StepRows<T>],
        feats: &[[T; FEATURE_DIM]],
    ) -> Vec<Vec<T>> {
        let l = &self.params.layout;
        let d = self.params.config.d_model;
        let rows = feats.len();
        assert_eq!(rows, encs.len());
        assert_eq!(rows, caches.len());
        let pos = caches.first().map_or(0, |c| c.len);
        assert!(pos < self.max_len(), "decoder position {pos} beyond the positional table");
        let flat: Vec<T> = feats.iter().flatten().copied().collect();
        let mut x = self.linear(&flat, rows, l.input_w, Some(l.input_b));
        let pe = &self.positions[pos * d..(pos + 1) * d];
        for row in x.chunks_mut(d) {
            kernels::axpy(T::one(), pe, row);
        }
        let mut scores = Vec::new();
        let mut cat = vec![T::zero(); rows * d];
        for (li, layer) in l.dec.iter().enumerate() {
            let h = self.norm(&x, layer.ln1);
            let q = self.linear(&h, rows, layer.self_attn.wq, None);
            let k = self.linear(&h, rows, layer.self_attn.wk, None);
            let v = self.linear(&h, rows, layer.self_attn.wv, None);
            for (b, cache) in caches.iter_mut().enumerate() {
                debug_assert_eq!(cache.len, pos);
                cache.k[li].extend_from_slice(&k[b * d..(b + 1) * d]);
                cache.v[li].extend_from_slice(&v[b * d..(b + 1) * d]);
                let out = &mut cat[b * d..(b + 1) * d];
                self.attend(&q[b * d..(b + 1) * d], &cache.k[li], &cache.v[li], pos + 1, out, &mut scores);
            }
            let a = self.linear(&cat, rows, layer.self_attn.wo, None);
            kernels::axpy(T::one(), &a, &mut x);

            let h = self.norm(&x, layer.ln2);
            let q = self.linear(&h, rows, layer.cross.wq, None);
            for (b, enc) in encs.iter().enumerate() {
                let out = &mut cat[b * d..(b + 1) * d];
                self.attend(&q[b * d..(b + 1) * d], &enc.cross_k[li], &enc.cross_v[li], enc.m, out, &mut scores);
            }
            let c = self.linear(&cat, rows, layer.cross.wo, None);
            kernels::axpy(T::one(), &c, &mut x);

            let h = self.norm(&x, layer.ln3);
            let f = self.ff(&h, rows, layer.ff);
            kernels::axpy(T::one(), &f, &mut x);
        }
        for cache in caches.iter_mut() {
            cache.len += 1;
        }
        let g = self.norm(&x, l.dec_norm);
        encs.iter()
            .enumerate()
            .map(|(b, enc)| {
                let gb = &g[b * d..(b + 1) * d];
                (0..enc.m).map(|j| dot(gb, &enc.w_cols[j * d..(j + 1) * d])).collect()
            })
            .collect()
    }
}
