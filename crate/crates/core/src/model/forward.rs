//! Differentiable forward pass recorded on a [`Tape`].

use super::{AttnIdx, FeasState, FfIdx, ModelParams, NormIdx, LN_EPS};
use crate::graph::{
    node_geometry, problem_features, solution_features_unchecked, ProblemInstance, FEATURE_DIM,
};
use crate::rng::Rng;
use crate::tensor::kernels::sinusoidal_positions;
use crate::tensor::{Scalar, Tape, Tensor, Var, NEG_INF_SURROGATE};
use crate::{Error, Result};

/// Puts every parameter on the tape; only tensors with `trainable[i]`
/// receive gradients.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>, trainable: &[bool]) -> Vec<Var> {
    params
        .tensors
        .iter()
        .zip(trainable)
        .map(|(t, &tr)| {
            if tr {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

/// Parameters bound to a tape plus the dropout setting of one pass.
pub struct ForwardCtx<'a, T> {
    pub params: &'a ModelParams<T>,
    pub vars: &'a [Var],
    /// Dropout probability; ignored when no RNG is supplied.
    pub dropout: f64,
}

/// Single-head scaled dot-product attention with an optional additive mask.
pub fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let dk = tape.value(q).cols();
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, T::of(1.0 / (dk as f64).sqrt()));
    let s = match mask {
        Some(m) => tape.add(s, m)?,
        None => s,
    };
    let p = tape.row_softmax(s);
    tape.matmul(p, v)
}

fn causal_mask<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::from_fn(n, n, |i, j| if j > i { T::of(NEG_INF_SURROGATE) } else { T::zero() })
}

impl<T: Scalar> ForwardCtx<'_, T> {
    fn p(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn norm(&self, tape: &mut Tape<T>, x: Var, n: NormIdx) -> Result<Var> {
        let h = tape.layer_norm(x, T::of(LN_EPS));
        let h = tape.mul_row(h, self.p(n.g))?;
        tape.add_row(h, self.p(n.b))
    }

    fn drop(&self, tape: &mut Tape<T>, x: Var, rng: &mut Option<&mut Rng>) -> Result<Var> {
        match rng {
            Some(r) if self.dropout > 0.0 => tape.dropout(x, self.dropout, *r),
            _ => Ok(x),
        }
    }

    fn mha(&self, tape: &mut Tape<T>, a: AttnIdx, xq: Var, xkv: Var, mask: Option<Var>) -> Result<Var> {
        let cfg = &self.params.config;
        let dk = cfg.head_dim();
        let q = tape.matmul(xq, self.p(a.wq))?;
        let k = tape.matmul(xkv, self.p(a.wk))?;
        let v = tape.matmul(xkv, self.p(a.wv))?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            heads.push(attention(tape, qh, kh, vh, mask)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        tape.matmul(cat, self.p(a.wo))
    }

    fn ff(&self, tape: &mut Tape<T>, f: FfIdx, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.p(f.w1))?;
        let h = tape.add_row(h, self.p(f.b1))?;
        let h = tape.relu(h);
        let h = tape.matmul(h, self.p(f.w2))?;
        tape.add_row(h, self.p(f.b2))
    }

    fn project_input(&self, tape: &mut Tape<T>, feats: Tensor<T>) -> Result<Var> {
        if feats.cols() != FEATURE_DIM {
            return Err(Error::Shape {
                op: "input projection",
                lhs: feats.shape().to_vec(),
                rhs: vec![FEATURE_DIM],
            });
        }
        let l = &self.params.layout;
        let x = tape.constant(feats);
        let x = tape.matmul(x, self.p(l.input_w))?;
        tape.add_row(x, self.p(l.input_b))
    }

    /// Problem features `m x 9` to encoder output `E` (`m x d_model`).
    pub fn encode(&self, tape: &mut Tape<T>, feats: Tensor<T>, mut rng: Option<&mut Rng>) -> Result<Var> {
        let l = &self.params.layout;
        let mut x = self.project_input(tape, feats)?;
        x = self.drop(tape, x, &mut rng)?;
        for layer in &l.enc {
            let h = self.norm(tape, x, layer.ln1)?;
            let a = self.mha(tape, layer.attn, h, h, None)?;
            let a = self.drop(tape, a, &mut rng)?;
            x = tape.add(x, a)?;
            let h = self.norm(tape, x, layer.ln2)?;
            let f = self.ff(tape, layer.ff, h)?;
            let f = self.drop(tape, f, &mut rng)?;
            x = tape.add(x, f)?;
        }
        self.norm(tape, x, l.enc_norm)
    }

    /// Solution-prefix features `n x 9` and `E` to decoder output `G`.
    pub fn decode(&self, tape: &mut Tape<T>, feats: Tensor<T>, e: Var, mut rng: Option<&mut Rng>) -> Result<Var> {
        let l = &self.params.layout;
        let n = feats.rows();
        let d = self.params.config.d_model;
        let mut x = self.project_input(tape, feats)?;
        let pe = tape.constant(Tensor::matrix(n, d, sinusoidal_positions(n, d))?);
        x = tape.add(x, pe)?;
        x = self.drop(tape, x, &mut rng)?;
        let causal = tape.constant(causal_mask(n));
        for layer in &l.dec {
            let h = self.norm(tape, x, layer.ln1)?;
            let a = self.mha(tape, layer.self_attn, h, h, Some(causal))?;
            let a = self.drop(tape, a, &mut rng)?;
            x = tape.add(x, a)?;
            let h = self.norm(tape, x, layer.ln2)?;
            let c = self.mha(tape, layer.cross, h, e, None)?;
            let c = self.drop(tape, c, &mut rng)?;
            x = tape.add(x, c)?;
            let h = self.norm(tape, x, layer.ln3)?;
            let f = self.ff(tape, layer.ff, h)?;
            let f = self.drop(tape, f, &mut rng)?;
            x = tape.add(x, f)?;
        }
        self.norm(tape, x, l.dec_norm)
    }

    /// Logits `E W_o` over the full vocabulary.
    pub fn problem_logits(&self, tape: &mut Tape<T>, e: Var) -> Result<Var> {
        tape.matmul(e, self.p(self.params.layout.w_out))
    }

    /// Masked solution logits restricted to the instance's node IDs.
    ///
    /// Every ID outside the instance (and the pad slot) carries the
    /// `-inf` surrogate in the full-vocabulary mask, so its probability is
    /// exactly zero; dropping those columns leaves the softmax unchanged.
    /// Column `j` corresponds to `inst.node_ids()[j]`.
    pub fn solution_logits(
        &self,
        tape: &mut Tape<T>,
        g: Var,
        inst: &ProblemInstance,
        prefix: &[usize],
    ) -> Result<Var> {
        let w = tape.select_cols(self.p(self.params.layout.w_out), inst.node_ids())?;
        let logits = tape.matmul(g, w)?;
        let m = tape.constant(prefix_mask(inst, prefix)?);
        tape.add(logits, m)
    }
}

/// Additive feasibility mask, one row per prefix position, over local indices.
pub(crate) fn prefix_mask<T: Scalar>(inst: &ProblemInstance, prefix: &[usize]) -> Result<Tensor<T>> {
    let m = inst.len();
    let mut state = FeasState::from_prefix(inst, &prefix[..1])?;
    let mut allowed = vec![false; m];
    let mut data = Vec::with_capacity(prefix.len() * m);
    for (i, &tok) in prefix.iter().enumerate() {
        if i > 0 {
            let local = inst
                .local_index(tok)
                .ok_or_else(|| Error::invalid(format!("token {tok} outside the instance")))?;
            state.push(local);
        }
        if state.allowed(&mut allowed) == 0 {
            return Err(Error::invalid(format!(
                "feasibility mask row {i} excludes every node"
            )));
        }
        data.extend(allowed.iter().map(|&ok| {
            if ok {
                T::zero()
            } else {
                T::of(NEG_INF_SURROGATE)
            }
        }));
    }
    Tensor::matrix(prefix.len(), m, data)
}

/// Loss terms of one training pair.
pub struct LossParts {
    pub problem: Var,
    pub problem_count: usize,
    pub solution: Option<Var>,
    pub solution_count: usize,
}

/// Problem loss (each token predicts its own node ID through `F`) and,
/// if `with_solution`, solution loss (each prefix position predicts the
/// next teacher token through the masked `H`).
pub fn dual_loss<T: Scalar>(
    tape: &mut Tape<T>,
    ctx: &ForwardCtx<'_, T>,
    inst: &ProblemInstance,
    tokens: &[usize],
    rotation: f64,
    with_solution: bool,
    mut rng: Option<&mut Rng>,
) -> Result<LossParts> {
    let e = ctx.encode(tape, problem_features(inst, rotation), rng.as_deref_mut())?;
    let f = ctx.problem_logits(tape, e)?;
    let own: Vec<Option<usize>> = inst.node_ids().iter().map(|&id| Some(id)).collect();
    let problem = tape.cross_entropy(f, &own)?;
    let mut out = LossParts {
        problem,
        problem_count: inst.len(),
        solution: None,
        solution_count: 0,
    };
    if !with_solution {
        return Ok(out);
    }
    if tokens.len() < 2 {
        return Err(Error::invalid("target solution needs at least two tokens"));
    }
    let prefix = &tokens[..tokens.len() - 1];
    let geo = node_geometry(inst, rotation);
    let mut violations = Vec::new();
    crate::graph::check_prefix(inst, tokens, &mut violations);
    if !violations.is_empty() {
        return Err(Error::InvalidSolution(crate::graph::ValidationReport { violations }));
    }
    let sfeat = solution_features_unchecked(inst, &geo, prefix);
    let g = ctx.decode(tape, sfeat, e, rng)?;
    let h = ctx.solution_logits(tape, g, inst, prefix)?;
    let targets: Vec<Option<usize>> = tokens[1..]
        .iter()
        .map(|&t| inst.local_index(t))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::invalid("target token outside the instance"))?
        .into_iter()
        .map(Some)
        .collect();
    out.solution = Some(tape.cross_entropy(h, &targets)?);
    out.solution_count = targets.len();
    Ok(out)
}
