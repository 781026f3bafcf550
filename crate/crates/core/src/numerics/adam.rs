use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape().to_vec());
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
) -> Result<(), NumericsError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumericsError::LengthMismatch {
            context: "adam_step parameter count",
            left: params.len(),
            right: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if !p.same_shape(g) || !p.same_shape(&state.m[i]) {
            return Err(NumericsError::ShapeMismatch {
                context: "adam_step",
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pv = p.values_mut();
        let mv = m.values_mut();
        let vv = v.values_mut();
        for (k, &gk) in g.values().iter().enumerate() {
            mv[k] = beta1 * mv[k] + (1.0 - beta1) * gk;
            vv[k] = beta2 * vv[k] + (1.0 - beta2) * gk * gk;
            let m_hat = mv[k] / bc1;
            let v_hat = vv[k] / bc2;
            pv[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::row(vec![v])]
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![Tensor::row(vec![1.0, -2.0, 3.0])];
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &p);
        for _ in 0..5 {
            adam_step(&mut p, &[Tensor::zeros(vec![1, 3])], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1), &p);
        assert!(st.first_moment()[0].values().iter().all(|&v| v == 0.0));
        adam_step(&mut p, &scalar(4.0), &mut st).unwrap();
        // m_hat = 4, v_hat = 16 → step = 0.1 * 4 / (4 + 1e-8)
        let expected = 1.0 - 0.1 * 4.0 / (4.0 + 1e-8);
        assert!((p[0].values()[0] - expected).abs() < 1e-15);
        assert!((p[0].values()[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        let mut p = scalar(0.5);
        let cfg = AdamConfig::with_lr(0.01);
        let mut st = AdamState::new(cfg, &p);
        let g = 2.0;
        adam_step(&mut p, &scalar(g), &mut st).unwrap();
        adam_step(&mut p, &scalar(g), &mut st).unwrap();
        // Step-by-step by hand:
        //   t=1: m=0.2, v=0.004, m̂=2, v̂=4 → Δ=0.01*2/(2+1e-8)
        //   t=2: m=0.38, v=0.007996, m̂=0.38/0.19=2, v̂=0.007996/0.001999=4
        let d1 = 0.01 * 2.0 / (2.0 + 1e-8);
        let m2: f64 = 0.9 * 0.2 + 0.1 * 2.0;
        let v2: f64 = 0.999 * 0.004 + 0.001 * 4.0;
        let d2 = 0.01 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let expected = 0.5 - d1 - d2;
        assert!((p[0].values()[0] - expected).abs() < 1e-12);
        assert!((p[0].values()[0] - 0.48).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let bad = vec![Tensor::row(vec![1.0, 2.0])];
        assert!(adam_step(&mut p, &bad, &mut st).is_err());
        assert!(adam_step(&mut p, &[], &mut st).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
