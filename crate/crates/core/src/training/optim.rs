//! AdamW with a linear warmup/decay schedule and global-norm clipping.

use crate::error::{Error, Result};
use crate::math;
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
}

pub const DEFAULT_LR_GRID: [f64; 4] = [1e-5, 2e-5, 5e-5, 1e-4];

impl OptimizerSpec {
    pub fn new(lr: f64, total_steps: usize) -> Self {
        OptimizerSpec { lr, weight_decay: 1e-5, warmup_fraction: 0.1, total_steps, batch_size: 128, clip_norm: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(alloc::format!("optimizer: {m}")));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("steps and batch size must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        libm::round(self.warmup_fraction * self.total_steps as f64) as usize
    }

    /// `lr * min(step / warmup, (total - step) / (total - warmup))`, at 0 or above.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.total_steps as f64;
        let warm = self.warmup_steps() as f64;
        let s = step as f64;
        let up = if warm > 0.0 { s / warm } else { f64::INFINITY };
        let down = if total > warm { (total - s) / (total - warm) } else { 0.0 };
        self.lr * up.min(down).max(0.0)
    }
}

/// Scale `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().map(|(_, t)| t.data.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = math::sqrt(sq);
    if norm > max_norm {
        let s = max_norm / norm;
        for id in grads.ids() {
            for x in &mut grads.get_mut(id).expect("listed id").data {
                *x *= s;
            }
        }
    }
    norm
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ModelParams,
    v: ModelParams,
    t: u32,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    /// One update with decoupled weight decay.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for id in params.ids() {
            let g = &grads.get(id).expect("grad layout").data;
            let m = &mut self.m.get_mut(id).expect("moment layout").data;
            let v = &mut self.v.get_mut(id).expect("moment layout").data;
            let p = &mut params.get_mut(id).expect("listed id").data;
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (math::sqrt(vhat) + self.eps) + weight_decay * p[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, EncoderParams};

    fn model() -> ModelParams {
        ModelParams::new(EncoderParams::init(EncoderConfig::with_dims(16, 3, 4), 1).unwrap())
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let o = OptimizerSpec::new(0.5, 200);
        assert_eq!(o.warmup_steps(), 20);
        assert_eq!(o.lr_at(0), 0.0);
        assert_eq!(o.lr_at(20), 0.5);
        assert_eq!(o.lr_at(10), 0.25);
        assert_eq!(o.lr_at(200), 0.0);
        assert!((o.lr_at(110) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn clipping_scales_to_unit_norm() {
        let p = model();
        let mut g = p.zeros_like();
        g.encoder.output_bias.data[0] = 6.0;
        g.encoder.output_bias.data[1] = 8.0;
        assert_eq!(clip_grad_norm(&mut g, 1.0), 10.0);
        assert!((g.encoder.output_bias.data[0] - 0.6).abs() < 1e-15);
        assert!((g.encoder.output_bias.data[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_without_decay_leave_params() {
        let mut p = model();
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, 0.1, 0.0);
        opt.step(&mut p, &g, 0.1, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn invalid_specs() {
        let mut o = OptimizerSpec::new(1e-3, 10);
        o.validate().unwrap();
        o.warmup_fraction = 1.5;
        assert!(o.validate().is_err());
        assert!(OptimizerSpec::new(0.0, 10).validate().is_err());
    }
}
