//! Adaptive-moment (Adam) optimizer with bias correction.

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// First/second moment buffers, one pair per parameter slice.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moments: Vec<Vec<T>>,
    pub second_moments: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    /// Zeroed moments sized for `lens` parameter slices.
    pub fn with_lengths(config: AdamConfig, lens: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = lens.into_iter().collect();
        OptimizerState {
            config,
            step: 0,
            first_moments: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moments: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_network(config: AdamConfig, net: &Network<T>) -> Self {
        Self::with_lengths(
            config,
            net.named_parameters().iter().map(|(_, _, v)| v.len()),
        )
    }

    /// One bias-corrected update over `(parameter, gradient)` slice pairs.
    pub fn update(&mut self, pairs: &mut [(&mut [T], &[T])]) -> Result<()> {
        if pairs.len() != self.first_moments.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameter slices, got {}",
                self.first_moments.len(),
                pairs.len()
            )));
        }
        for ((p, g), m) in pairs.iter().zip(&self.first_moments) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape(format!(
                    "parameter slice of length {} does not match gradient {} / moments {}",
                    p.len(),
                    g.len(),
                    m.len()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let lr = T::from_f64(c.learning_rate);
        let eps = T::from_f64(c.epsilon);
        for (((p, g), m), v) in pairs
            .iter_mut()
            .zip(self.first_moments.iter_mut())
            .zip(self.second_moments.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Apply one optimizer step from the network's accumulated gradients, then
/// clear them.
pub fn optimizer_step<T: Real>(net: &mut Network<T>, state: &mut OptimizerState<T>) -> Result<()> {
    if !net.has_grads() {
        return Err(Error::InvalidState(
            "optimizer step requested before any backward pass".into(),
        ));
    }
    let mut pairs = net.param_grad_pairs();
    state.update(&mut pairs)?;
    net.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Mode};
    use crate::tensor::Tensor;

    #[test]
    fn step_before_backward_rejected() {
        let mut net = Network::<f32>::new(vec![Layer::conv("c", 1, 1, 3)], (1, 4, 4)).unwrap();
        let mut st = OptimizerState::for_network(AdamConfig::default(), &net);
        assert!(matches!(
            optimizer_step(&mut net, &mut st),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut net = Network::<f64>::new(vec![Layer::conv("c", 1, 2, 3)], (1, 4, 4)).unwrap();
        net.init_parameters(3);
        let before = net.flat_parameters();
        let x = Tensor::full([1, 1, 4, 4], 0.5);
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        net.backward(cache, &Tensor::zeros([1, 2, 4, 4])).unwrap();
        let mut st = OptimizerState::for_network(AdamConfig::default(), &net);
        optimizer_step(&mut net, &mut st).unwrap();
        assert_eq!(net.flat_parameters(), before);
        assert_eq!(st.step, 1);
        assert!(!net.has_grads());
    }

    #[test]
    fn single_step_descends() {
        for g in [2.5f64, -0.3] {
            let mut w = [1.0f64];
            let mut st = OptimizerState::with_lengths(AdamConfig::default(), [1]);
            st.update(&mut [(&mut w[..], &[g][..])]).unwrap();
            assert!((w[0] - 1.0).signum() == -g.signum());
        }
    }

    #[test]
    fn quadratic_converges() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut w = [0.0f64];
        let mut st = OptimizerState::with_lengths(cfg, [1]);
        for _ in 0..200 {
            let g = 2.0 * (w[0] - 3.0);
            st.update(&mut [(&mut w[..], &[g][..])]).unwrap();
            assert!(w[0].is_finite());
        }
        assert!((w[0] - 3.0).abs() < 0.1, "w = {}", w[0]);
        assert_eq!(st.step, 200);
    }

    #[test]
    fn mismatched_slices_rejected() {
        let mut st = OptimizerState::<f32>::with_lengths(AdamConfig::default(), [2]);
        let mut w = [0.0f32; 3];
        assert!(st.update(&mut [(&mut w[..], &[0.0; 3][..])]).is_err());
    }
}
