//! Central finite-difference oracle for gradient checks.

use super::Tensor;
use crate::scalar::Scalar;

/// Max relative error between `grad` and the central finite-difference
/// gradient of `f` at `x`, probed at every coordinate.
///
/// Per-coordinate error is
/// `|(f(x+h e_i) - f(x-h e_i)) / 2h - grad_i| / (|grad_i| + 1e-8)`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, grad: &Tensor<T>, h: T) -> T
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> T,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, grad, h, &all)
}

/// Same as [`finite_diff_check`] but only probing the given coordinates
/// (useful when `x` is large and evaluation is expensive).
pub fn finite_diff_check_at<T, F>(f: F, x: &Tensor<T>, grad: &Tensor<T>, h: T, coords: &[usize]) -> T
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> T,
{
    assert_eq!(
        x.shape(),
        grad.shape(),
        "gradient shape must match input shape"
    );
    let floor = T::from_f64(1e-8);
    let two = T::from_f64(2.0);
    let mut worst = T::zero();
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        let fd = (fp - fm) / (two * h);
        let gi = grad.data()[i];
        let err = (fd - gi).abs() / (gi.abs() + floor);
        if err > worst {
            worst = err;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::Tape;

    #[test]
    fn l2_norm_sq_gradient_is_polynomial_exact() {
        let x = Tensor::new(vec![2], vec![1.0f64, 2.0]);
        let mut tape = Tape::new();
        let xv = tape.var(x.clone());
        let y = tape.l2_norm_sq(xv);
        let grads = tape.backward(y).unwrap();
        let g = grads.get(xv).unwrap();
        let err = finite_diff_check(
            |t| t.data().iter().map(|&v| v * v).sum(),
            &x,
            &g,
            1e-5,
        );
        assert!(err <= 1e-6, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_error_against_zero_grad() {
        let x = Tensor::new(vec![3], vec![0.3f64, -0.7, 1.1]);
        let g = Tensor::zeros(&[3]);
        let err = finite_diff_check(|_| 42.0f64, &x, &g, 1e-5);
        assert_eq!(err, 0.0);
    }
}
