use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip: f64,
}

/// Base rate halved after each third of the run.
pub fn step_decay_lr(base: f64, step: usize, total: usize) -> f64 {
    let phase = (3 * step) / total.max(1);
    base * 0.5f64.powi(phase.min(2) as i32)
}

/// Adam with moment buffers kept in f64.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads` follow the module's `visit_mut` order.
    pub fn step<T: Scalar>(&mut self, module: &mut dyn Module<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        let mut norm_sq = 0.0;
        for g in grads {
            for &x in g.data() {
                norm_sq += x.as_f64() * x.as_f64();
            }
        }
        if !norm_sq.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        let clip = self.config.clip;
        let scale = if clip > 0.0 && norm_sq.sqrt() > clip {
            clip / norm_sq.sqrt()
        } else {
            1.0
        };
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut idx = 0;
        let mut err = None;
        let (m, v) = (&mut self.m, &mut self.v);
        module.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            let Some(g) = grads.get(idx) else {
                err = Some(Error::InvalidArgument(format!("no gradient for {name}")));
                return;
            };
            if g.shape() != p.shape() || m[idx].len() != p.len() {
                err = Some(Error::shape("adam", format!("{name}: grad {:?} vs param {:?}", g.shape(), p.shape())));
                return;
            }
            let (mi, vi) = (&mut m[idx], &mut v[idx]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj.as_f64() * scale;
                mi[j] = beta1 * mi[j] + (1.0 - beta1) * gj;
                vi[j] = beta2 * vi[j] + (1.0 - beta2) * gj * gj;
                let upd = lr * (mi[j] / bc1) / ((vi[j] / bc2).sqrt() + eps);
                *w = T::from_f64(w.as_f64() - upd);
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != grads.len() {
            return Err(Error::InvalidArgument(format!("{} gradients for {idx} parameters", grads.len())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Conv2d;

    #[test]
    fn decay_halves_at_thirds() {
        assert_eq!(step_decay_lr(4e-4, 0, 300), 4e-4);
        assert_eq!(step_decay_lr(4e-4, 99, 300), 4e-4);
        assert_eq!(step_decay_lr(4e-4, 100, 300), 2e-4);
        assert_eq!(step_decay_lr(4e-4, 200, 300), 1e-4);
        assert_eq!(step_decay_lr(4e-4, 299, 300), 1e-4);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut conv = Conv2d::<f64>::zeros(1, 1, 2, 1);
        let grads = vec![
            Tensor::from_vec(&[1, 1, 1, 2], vec![3.0, -0.5]).unwrap(),
            Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap(),
        ];
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 0.0,
        });
        adam.step(&mut conv, &grads, 0.1).unwrap();
        let w = conv.weight.data();
        assert!((w[0] + 0.1).abs() < 1e-7 && (w[1] - 0.1).abs() < 1e-7);
        assert_eq!(conv.bias.data()[0], 0.0);
        assert!(adam.step(&mut conv, &grads[..1], 0.1).is_err());
    }
}
