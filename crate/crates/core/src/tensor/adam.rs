//! ADAM with bias-corrected moments.

use super::Tensor;
use crate::scalar::Scalar;

/// Optimizer state for a fixed list of parameters.
///
/// Moment tensors shape-match their parameters; the step counter is
/// strictly increasing.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with the standard defaults (beta1=0.9, beta2=0.999,
    /// epsilon=1e-8).
    pub fn new(param_shapes: &[&[usize]]) -> Self {
        AdamState {
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
        }
    }

    pub fn for_params(params: &[&Tensor<T>]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One ADAM update over a parameter list. Gradients must shape-match
/// the parameters the state was built for.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: T,
) {
    assert_eq!(params.len(), grads.len(), "params/grads count mismatch");
    assert_eq!(params.len(), state.m.len(), "params/state count mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    let one = T::one();
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        assert_eq!(
            param.shape(),
            grad.shape(),
            "gradient shape does not match parameter"
        );
        for ((p, &g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = state.beta1 * *mi + (one - state.beta1) * g;
            *vi = state.beta2 * *vi + (one - state.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]);
        let g = Tensor::zeros(&[3]);
        let mut state = AdamState::for_params(&[&p]);
        let before = p.clone();
        adam_step(&mut [&mut p], &[g], &mut state, 0.005);
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_lr_times_sign() {
        // With zeroed state, m_hat = g and v_hat = g^2, so the update is
        // lr * g / (|g| + eps) = lr * sign(g) up to the eps correction.
        let lr = 0.005f64;
        let mut p = Tensor::new(vec![2], vec![0.0f64, 0.0]);
        let g = Tensor::new(vec![2], vec![0.5f64, -3.0]);
        let mut state = AdamState::for_params(&[&p]);
        adam_step(&mut [&mut p], &[g], &mut state, lr);
        assert!((p[0] - (-lr)).abs() < 1e-9);
        assert!((p[1] - lr).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_descends_against_its_sign() {
        let mut p = Tensor::new(vec![2], vec![1.0f64, -1.0]);
        let g = Tensor::new(vec![2], vec![2.0f64, -2.0]);
        let mut state = AdamState::for_params(&[&p]);
        for _ in 0..50 {
            adam_step(&mut [&mut p], &[g.clone()], &mut state, 0.01);
        }
        assert!(p[0] < 1.0 - 0.1);
        assert!(p[1] > -1.0 + 0.1);
        assert_eq!(state.step_count(), 50);
    }

    #[test]
    #[should_panic(expected = "gradient shape does not match parameter")]
    fn mismatched_gradient_shape_panics() {
        let mut p = Tensor::<f64>::zeros(&[3]);
        let g = Tensor::zeros(&[2, 1]);
        let mut state = AdamState::for_params(&[&p]);
        adam_step(&mut [&mut p], &[g], &mut state, 0.01);
    }
}
