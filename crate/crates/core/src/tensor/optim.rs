//! Global-norm clipping and AdamW with decoupled weight decay.

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// L2 norm over every element of every tensor, accumulated in `f64`.
pub fn global_norm<T: Scalar>(tensors: &[&Tensor<T>]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.data())
        .map(|v| {
            let v = v.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients together so that their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [&mut Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(&grads.iter().map(|g| &**g).collect::<Vec<_>>());
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: first and second moments per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        AdamW {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], lr: f64) -> Result<()> {
        let all = vec![true; params.len()];
        self.step_subset(params, grads, lr, &all)
    }

    /// One update restricted to parameters with `active[i]`; the others keep
    /// both their values and their moment estimates.
    pub fn step_subset(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        lr: f64,
        active: &[bool],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || active.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        let decay = T::of(1.0 - lr * c.weight_decay);
        for i in 0..params.len() {
            if !active[i] {
                continue;
            }
            let p = params[i].data_mut();
            let g = grads[i].data();
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape {
                    op: "adamw",
                    lhs: vec![p.len()],
                    rhs: vec![g.len()],
                });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                v[j] = b2 * v[j] + ob2 * g[j] * g[j];
                let denom = (v[j] * inv_bc2).sqrt() + eps;
                p[j] = p[j] * decay - step_size * m[j] / denom;
            }
        }
        Ok(())
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        let same = |a: &[Vec<T>], b: &[Vec<T>]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len())
        };
        if !same(&m, &self.m) || !same(&v, &self.v) {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::<f64>::new(cfg, &[1]);
        let mut w = one(1.0);
        opt.step(&mut [&mut w], &[&one(1.0)], 0.1).unwrap();
        assert!((w.item() - 0.9).abs() < 1e-6, "{}", w.item());
    }

    #[test]
    fn zero_gradient_only_decays() {
        let cfg = AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::<f64>::new(cfg, &[1]);
        let mut w = one(2.0);
        opt.step(&mut [&mut w], &[&one(0.0)], 0.1).unwrap();
        // shrinks by lr * lambda * w = 0.1 * 0.5 * 2
        assert!((w.item() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn inactive_parameters_are_frozen() {
        let mut opt = AdamW::<f64>::new(AdamWConfig::default(), &[1, 1]);
        let (mut a, mut b) = (one(1.0), one(1.0));
        opt.step_subset(&mut [&mut a, &mut b], &[&one(1.0), &one(1.0)], 0.1, &[true, false])
            .unwrap();
        assert!(a.item() < 1.0);
        assert_eq!(b.item(), 1.0);
        assert_eq!(opt.moments().0[1][0], 0.0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut a = Tensor::<f64>::full(&[2], 3.0);
        let mut b = Tensor::<f64>::full(&[1], 4.0);
        // sqrt(9 + 9 + 16) = sqrt(34)
        let before = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert!((before - 34f64.sqrt()).abs() < 1e-12);
        assert!((global_norm(&[&a, &b]) - 1.0).abs() < 1e-12);

        let mut small = Tensor::<f64>::full(&[1], 0.5);
        clip_global_norm(&mut [&mut small], 1.0);
        assert_eq!(small.item(), 0.5);
    }
}
