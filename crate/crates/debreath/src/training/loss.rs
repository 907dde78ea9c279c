//! The training objective: mean absolute error plus a speech-preservation
//! term that weights mistakes by the true amplitude.
//!
//! Both terms reduce with the same deterministic pairwise summation the
//! graph ops use, so the pure values here and the graph-node values agree
//! bit for bit and `total == mae + speech` holds exactly.

use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, Scalar, Tensor};

fn check_operands<E: Scalar>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<()> {
    if y_true.shape() != y_pred.shape() {
        return Err(Error::Input(format!(
            "loss operands disagree: {:?} vs {:?}",
            y_true.shape(),
            y_pred.shape()
        )));
    }
    if !y_true.all_finite() || !y_pred.all_finite() {
        return Err(Error::Input("loss operands must be finite".into()));
    }
    Ok(())
}

/// Mean of |y_true - y_pred| over all entries.
pub fn mae_loss<E: Scalar>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<E> {
    check_operands(y_true, y_pred)?;
    let t = y_true.data();
    let p = y_pred.data();
    let sum = pairwise_sum(t.len(), &|i| (t[i] - p[i]).abs());
    Ok(sum / E::from_f64(t.len() as f64))
}

/// 2/N * sum |y_true^2 - y_pred * y_true|: errors on loud speech bins cost
/// proportionally more, silent bins cost nothing.
pub fn speech_loss<E: Scalar>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<E> {
    check_operands(y_true, y_pred)?;
    if y_true.data().iter().any(|&v| v < E::zero()) {
        return Err(Error::Invariant(
            "speech loss expects nonnegative true magnitudes".into(),
        ));
    }
    let t = y_true.data();
    let p = y_pred.data();
    let sum = pairwise_sum(t.len(), &|i| (t[i] * t[i] - p[i] * t[i]).abs());
    Ok(E::from_f64(2.0) * sum / E::from_f64(t.len() as f64))
}

/// Sum of the two terms.
pub fn total_loss<E: Scalar>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<E> {
    Ok(mae_loss(y_true, y_pred)? + speech_loss(y_true, y_pred)?)
}
