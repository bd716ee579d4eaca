use crate::param::Parameter;
use crate::scalar::Scalar;

/// ADAM moment-decay constants. The learning rate is passed per step so
/// schedules live with the caller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update of every parameter from its stored gradient.
pub fn adam_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    lr: f64,
    cfg: &AdamConfig,
) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    for p in params {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr_t = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(cfg.eps);
        let Parameter {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = p;
        for (((x, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(adam_m.data_mut())
            .zip(adam_v.data_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Parameter::new("w", Tensor::<f64>::scalar(0.0));
        p.grad = Tensor::scalar(1.0);
        adam_step([&mut p], 0.001, &AdamConfig::default());
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
        assert!((p.value.data()[0] + 0.001).abs() < 1e-8);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn zero_grad_decays_moments() {
        let mut p = Parameter::new("w", Tensor::<f64>::scalar(0.5));
        p.adam_m = Tensor::scalar(0.2);
        p.adam_v = Tensor::scalar(0.04);
        p.step_count = 3;
        adam_step([&mut p], 0.001, &AdamConfig::default());
        assert!((p.adam_m.data()[0] - 0.18).abs() < 1e-15);
        assert!((p.adam_v.data()[0] - 0.04 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_from_rest_leaves_value_unchanged() {
        let mut q = Parameter::new("w", Tensor::<f64>::scalar(0.5));
        for _ in 0..5 {
            adam_step([&mut q], 0.001, &AdamConfig::default());
        }
        assert_eq!(q.value.data()[0], 0.5);
        assert_eq!(q.adam_m.data()[0], 0.0);
        assert_eq!(q.adam_v.data()[0], 0.0);
    }

    #[test]
    fn identical_params_follow_identical_trajectories() {
        let mut a = Parameter::new("a", Tensor::<f32>::from_fn(&[4], |i| i as f32 * 0.1));
        let mut b = a.clone();
        for step in 0..20 {
            let g = Tensor::from_fn(&[4], |i| ((i + step) as f32).sin());
            a.grad = g.clone();
            b.grad = g;
            adam_step([&mut a, &mut b], 0.01, &AdamConfig::default());
        }
        assert_eq!(a.value, b.value);
    }
}
