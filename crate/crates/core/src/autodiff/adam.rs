use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        AdamState {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// One bias-corrected Adam descent step. To ascend, pass negated
    /// gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "adam: state tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((x, &gi), mi), vi) in pd
                .iter_mut()
                .zip(gd)
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut q = Tensor::vector(vec![1.0, -2.0]);
        let mut fresh = AdamState::new(AdamConfig::default(), [&q]);
        for _ in 0..5 {
            fresh
                .step(&mut [&mut q], &[Tensor::vector(vec![0.0, 0.0])])
                .unwrap();
        }
        assert_eq!(q.data(), &[1.0, -2.0]);
        assert_eq!(fresh.step, 5);

        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        st.m[0] = Tensor::vector(vec![0.5, -0.5]);
        st.v[0] = Tensor::vector(vec![0.25, 0.25]);
        st.step(&mut [&mut p], &[Tensor::vector(vec![0.0, 0.0])])
            .unwrap();
        assert_eq!(st.m[0].data(), &[0.9 * 0.5, 0.9 * -0.5]);
        assert_eq!(st.v[0].data(), &[0.999 * 0.25, 0.999 * 0.25]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        // m̂ = g and v̂ = g² after one step, so Δ = -lr·g/(|g|+ε).
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let g = [0.3, -2.0, 1e-3];
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut st = AdamState::new(cfg, [&p]);
        st.step(&mut [&mut p], &[Tensor::vector(g.to_vec())])
            .unwrap();
        for (x, gi) in p.data().iter().zip(g) {
            let expect = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((x - expect).abs() < 1e-15, "{x} vs {expect}");
        }
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut st = AdamState::new(cfg, [&p]);
        let g = Tensor::vector(vec![0.7, -0.2]);
        let mut prev = p.clone();
        for _ in 0..2000 {
            prev = p.clone();
            st.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        }
        let d0 = p.data()[0] - prev.data()[0];
        let d1 = p.data()[1] - prev.data()[1];
        assert!((d0 + cfg.lr).abs() < 1e-6 * 50.0);
        assert!((d1 - cfg.lr).abs() < 1e-6 * 50.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        let err = st.step(&mut [&mut p], &[Tensor::vector(vec![0.0; 2])]);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }
}
