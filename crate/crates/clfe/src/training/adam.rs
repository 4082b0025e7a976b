//! Adam with bias correction: m and v track the first and second gradient
//! moments per parameter; the update is
//! `p -= lr * m^ / (sqrt(v^) + eps)` with `m^ = m/(1-b1^t)`, `v^ = v/(1-b2^t)`.

use crate::layers::Param;
use crate::tensor::Tensor;

use super::TrainError;

pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        let zeros: Vec<Tensor> =
            params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One optimizer step over all parameters; `grads` must align with the
    /// parameter order used at construction.
    pub fn step(
        &mut self,
        params: &mut [&mut Param],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::ParamCount {
                expected: self.m.len(),
                found: params.len().min(grads.len()),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if param.value.rows() != grad.rows() || param.value.cols() != grad.cols() {
                return Err(TrainError::GradShape {
                    name: param.name.clone(),
                    expected: param.value.shape_str(),
                    found: grad.shape_str(),
                });
            }
            for i in 0..grad.numel() {
                let g = grad.data()[i];
                m.data_mut()[i] = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                v.data_mut()[i] = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data()[i] / bc1;
                let v_hat = v.data()[i] / bc2;
                param.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_param(value: f64) -> Param {
        Param { name: "p".into(), value: Tensor::scalar(value) }
    }

    #[test]
    fn first_step_applies_bias_corrected_update() {
        // g=1 at t=1: m^ = v^ = 1, so delta = -lr / (1 + eps)
        let mut p = single_param(0.0);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], &[Tensor::scalar(1.0)], 0.01).unwrap();
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = single_param(0.37);
        let mut state = AdamState::new(&[&p]);
        for _ in 0..5 {
            state.step(&mut [&mut p], &[Tensor::scalar(0.0)], 0.1).unwrap();
        }
        assert_eq!(p.value.data()[0], 0.37);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = single_param(1.0);
            let mut state = AdamState::new(&[&p]);
            for k in 0..20 {
                let g = (k as f64 * 0.3).sin();
                state.step(&mut [&mut p], &[Tensor::scalar(g)], 0.01).unwrap();
            }
            p.value.data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = single_param(0.0);
        let mut state = AdamState::new(&[&p]);
        let err = state.step(&mut [&mut p], &[Tensor::zeros(2, 1)], 0.1).unwrap_err();
        assert!(matches!(err, TrainError::GradShape { .. }));
    }

    proptest! {
        // the eps guard keeps updates finite for any finite gradient,
        // including zero-variance sequences
        #[test]
        fn never_produces_nan_on_finite_gradients(
            grads in proptest::collection::vec(-1e6f64..1e6, 1..40),
            lr in 1e-6f64..1.0,
        ) {
            let mut p = single_param(0.5);
            let mut state = AdamState::new(&[&p]);
            for g in grads {
                state.step(&mut [&mut p], &[Tensor::scalar(g)], lr).unwrap();
                prop_assert!(p.value.data()[0].is_finite());
            }
        }
    }
}
