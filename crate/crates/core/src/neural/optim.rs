use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f64>) -> Self {
        let zeros = |p: &ParamStore<f64>| {
            p.ids().map(|id| Tensor::zeros(p.get(id).rows(), p.get(id).cols())).collect::<Vec<_>>()
        };
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0), step: 0, m: zeros(params), v: zeros(params) }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore<f64>, grads: &Gradients<f64>, lr: f64) {
        self.step += 1;
        let clip = match self.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in params.ids() {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = params.get_mut(id);
            for i in 0..g.len() {
                let gi = g.values()[i] * clip;
                let mi = &mut m.values_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                let vi = &mut v.values_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (m.values()[i] / bc1) / ((v.values()[i] / bc2).sqrt() + self.eps);
                p.values_mut()[i] -= lr * update;
            }
        }
    }
}

/// Linear warmup to `base_lr` over the first `warmup_frac` of steps, then
/// linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
}

impl LinearSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warmup = (self.warmup_frac * total).round().max(1.0);
        let s = step as f64 + 1.0;
        if s <= warmup {
            self.base_lr * s / warmup
        } else {
            self.base_lr * ((total - s + 1.0) / (total - warmup + 1.0)).max(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::ParamId;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_const("x", 1, 2, 3.0);
        let mut opt = Adam::new(&store);
        for _ in 0..2000 {
            let x = store.get(id).values().to_vec();
            let mut g = Gradients::new(1);
            g.accumulate(ParamId(0), &Tensor::from_rows(1, 2, vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] + 2.0)]));
            opt.update(&mut store, &g, 0.01);
        }
        let x = store.get(id).values();
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 2.0).abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LinearSchedule { base_lr: 1.0, total_steps: 100, warmup_frac: 0.1 };
        assert!((s.lr(0) - 0.1).abs() < 1e-12);
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!(s.lr(50) < 1.0 && s.lr(50) > s.lr(80));
        assert!(s.lr(99) > 0.0);
        assert!((1..100).all(|i| s.lr(i) >= 0.0));
    }
}
