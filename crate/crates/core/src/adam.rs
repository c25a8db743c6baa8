use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Apply one update to every parameter, bump the step counter and zero
    /// the gradients.
    pub fn step<T: Real>(&self, params: &mut ParamStore<T>) -> Result<()> {
        if !params.grads_ready() {
            return Err(Error::usage(
                "adam step without gradients; run backward first",
            ));
        }
        let t = params.step_count() as i32 + 1;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let step = T::from_f64(self.lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(self.eps);
        for (_, e) in params.iter_mut() {
            let value = e.value.data_mut();
            let grad = e.grad.data();
            let m = e.adam_m.data_mut();
            let v = e.adam_v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                value[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        params.bump_step();
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(p: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(p)).unwrap();
        s
    }

    #[test]
    fn refuses_to_step_without_gradients() {
        let mut s = scalar_store(1.0);
        assert!(matches!(Adam::default().step(&mut s), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut s = scalar_store(1.0);
        s.get_mut("p").unwrap().adam_m = Tensor::scalar(0.5);
        s.get_mut("p").unwrap().adam_v = Tensor::scalar(0.25);
        s.accumulate_grad("p", &Tensor::scalar(0.0)).unwrap();
        Adam::default().step(&mut s).unwrap();
        let e = s.get("p").unwrap();
        assert_eq!(e.adam_m.item(), 0.45);
        assert!((e.adam_v.item() - 0.24975).abs() < 1e-15);
        // m stays positive, so the parameter still moves; reset and check
        // the pure zero-moment case.
        let mut s = scalar_store(1.0);
        s.accumulate_grad("p", &Tensor::scalar(0.0)).unwrap();
        Adam::default().step(&mut s).unwrap();
        assert_eq!(s.value("p").unwrap().item(), 1.0);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², update = lr · g / (|g| + ε)
        let mut s = scalar_store(1.0);
        s.accumulate_grad("p", &Tensor::scalar(1.0)).unwrap();
        Adam::with_lr(0.1).step(&mut s).unwrap();
        let p = s.value("p").unwrap().item();
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12, "{p}");
        assert_eq!(s.grad("p").unwrap().item(), 0.0);
        assert!(!s.grads_ready());
    }
}
