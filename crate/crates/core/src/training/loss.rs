use crate::tensor::{Scalar, Tensor, TensorError};

/// Predictions are clamped into `[PRED_CLAMP, 1 - PRED_CLAMP]` before the log.
pub const PRED_CLAMP: f64 = 1e-7;

fn check_shapes<S: Scalar>(op: &'static str, pred: &Tensor<S>, target: &Tensor<S>) -> Result<(), TensorError> {
    if pred.shape() == target.shape() {
        Ok(())
    } else {
        Err(TensorError::Shape {
            op,
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        })
    }
}

/// Mean over points of `-(y log p + (1 - y) log(1 - p))`, with continuous
/// targets in [0, 1].
pub fn cross_entropy_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    check_shapes("cross_entropy_loss", pred, target)?;
    let eps = S::from_f64_lossy(PRED_CLAMP);
    let p = pred.clamp(eps, S::one() - eps);
    let y = target.detach();
    let one_minus = |t: &Tensor<S>| t.neg().add_scalar(S::one());
    let pos = y.mul(&p.log()?)?;
    let neg = one_minus(&y).mul(&one_minus(&p).log()?)?;
    Ok(pos.add(&neg)?.mean().neg())
}

/// Mean squared difference.
pub fn mse_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    check_shapes("mse_loss", pred, target)?;
    let d = pred.sub(&target.detach())?;
    Ok(d.mul(&d)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::check_gradients;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn cross_entropy_at_one_half_is_ln2() {
        let l = cross_entropy_loss(&t(&[0.5; 8]), &t(&[0.5; 8])).unwrap().item().unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_vanishes_as_pred_meets_zero_target() {
        let l = cross_entropy_loss(&t(&[1e-9; 4]), &t(&[0.0; 4])).unwrap().item().unwrap();
        assert!(l < 2e-7);
        let l = cross_entropy_loss(&t(&[0.0, 1.0]), &t(&[1.0, 0.0])).unwrap().item().unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn cross_entropy_gradient_closed_form_and_fd() {
        let pred = Tensor::variable(&[5], vec![0.1, 0.3, 0.5, 0.7, 0.95]).unwrap();
        let y = [0.0, 0.2, 0.5, 1.0, 0.4];
        cross_entropy_loss(&pred, &t(&y)).unwrap().backward().unwrap();
        let g = pred.grad().unwrap();
        for i in 0..5 {
            let p = pred.data()[i];
            let want = (p - y[i]) / (p * (1.0 - p)) / 5.0;
            assert!((g[i] - want).abs() < 1e-12, "{i}: {} vs {want}", g[i]);
        }
        let r = check_gradients(&[pred.detach()], |x| cross_entropy_loss(&x[0], &t(&y)).unwrap());
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn mse_values_and_gradient() {
        let y = [0.2, 0.4, 0.6];
        assert_eq!(mse_loss(&t(&y), &t(&y)).unwrap().item().unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        let l = mse_loss(&t(&shifted), &t(&y)).unwrap().item().unwrap();
        assert!((l - 0.01).abs() < 1e-12);

        let pred = Tensor::variable(&[3], vec![0.5, 0.1, 0.9]).unwrap();
        mse_loss(&pred, &t(&y)).unwrap().backward().unwrap();
        let g = pred.grad().unwrap();
        for i in 0..3 {
            assert!((g[i] - 2.0 * (pred.data()[i] - y[i]) / 3.0).abs() < 1e-12);
        }
        let r = check_gradients(&[pred.detach()], |x| mse_loss(&x[0], &t(&y)).unwrap());
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn shape_mismatch() {
        assert!(cross_entropy_loss(&t(&[0.5; 2]), &t(&[0.5; 3])).is_err());
        assert!(mse_loss(&t(&[0.5; 2]), &t(&[0.5; 3])).is_err());
    }
}
