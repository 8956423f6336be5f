//! Fused softmax/cross-entropy loss and the Adadelta update rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::tensor::{Scalar, Tensor};

/// Probability floor applied before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossResult<T> {
    /// Cross-entropy averaged over the batch.
    pub mean_loss: f64,
    /// `(softmax(logits) - targets) / batch`.
    pub grad_logits: Tensor<T>,
}

/// Checks that every row of `targets` is exactly one-hot.
pub fn target_classes<T: Scalar>(targets: &Tensor<T>) -> Result<Vec<usize>> {
    let &[_, classes] = targets.dims() else {
        return Err(Error::Data(format!(
            "targets must be batch×classes, got {}",
            targets.shape()
        )));
    };
    targets
        .data()
        .chunks_exact(classes)
        .enumerate()
        .map(|(row, t)| {
            let ones: Vec<usize> = t
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == T::one())
                .map(|(i, _)| i)
                .collect();
            let zeros = t.iter().filter(|&&v| v == T::zero()).count();
            match ones.as_slice() {
                [class] if zeros == classes - 1 => Ok(*class),
                _ => Err(Error::Data(format!("target row {row} is not one-hot"))),
            }
        })
        .collect()
}

/// Mean categorical cross-entropy of `softmax(logits)` against one-hot
/// `targets`, and its gradient with respect to the logits.
///
/// The per-sample loss is `logsumexp(z) - z_true`, capped at
/// `-ln(PROB_FLOOR)`; this equals `-ln(max(p_true, PROB_FLOOR))` without
/// forming `p_true` first.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<LossResult<T>> {
    if logits.dims() != targets.dims() {
        return Err(Error::Shape(format!(
            "logits {} and targets {} differ",
            logits.shape(),
            targets.shape()
        )));
    }
    let truth = target_classes(targets)?;
    let &[batch, classes] = logits.dims() else {
        unreachable!("target_classes checked rank 2");
    };
    let inv_batch = T::from_f64_lossy(1.0 / batch as f64);
    let cap = -PROB_FLOOR.ln();

    let mut grad = logits.clone();
    let mut total = 0.0f64;
    for ((row, &t), z) in grad
        .data_mut()
        .chunks_exact_mut(classes)
        .zip(&truth)
        .zip(logits.data().chunks_exact(classes))
    {
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (g, &zi) in row.iter_mut().zip(z) {
            *g = (zi - max).exp();
            sum = sum + *g;
        }
        let lse = max.as_f64() + sum.as_f64().ln();
        total += (lse - z[t].as_f64()).min(cap);
        for (i, g) in row.iter_mut().enumerate() {
            let y = if i == t { T::one() } else { T::zero() };
            *g = (*g / sum - y) * inv_batch;
        }
    }
    let mean_loss = total / batch as f64;
    if !mean_loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok(LossResult {
        mean_loss,
        grad_logits: grad,
    })
}

/// One Adadelta update of both tensors in `params`, in place:
///
/// ```text
/// E[g²] ← ρ E[g²] + (1-ρ) g²
/// Δ     ← -sqrt(E[Δ²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δ²] ← ρ E[Δ²] + (1-ρ) Δ²
/// θ     ← θ + lr · Δ
/// ```
///
/// Consumes the gradients: a second call without a new backward pass is a
/// state error.
pub fn adadelta_step<T: Scalar>(params: &mut ParamSet<T>, config: &AdadeltaConfig) -> Result<()> {
    if !params.grads_ready() {
        return Err(Error::State(
            "adadelta_step called before a backward pass populated the gradients".into(),
        ));
    }
    let rho = T::from_f64_lossy(config.rho);
    let one_minus_rho = T::from_f64_lossy(1.0 - config.rho);
    let eps = T::from_f64_lossy(config.epsilon);
    let lr = T::from_f64_lossy(config.learning_rate);
    for p in params.params_mut() {
        let values = p.value.data_mut().iter_mut();
        let grads = p.grad.data().iter();
        let acc_g = p.acc_grad.data_mut().iter_mut();
        let acc_d = p.acc_delta.data_mut().iter_mut();
        for (((w, &g), eg), ed) in values.zip(grads).zip(acc_g).zip(acc_d) {
            *eg = rho * *eg + one_minus_rho * g * g;
            let delta = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ed = rho * *ed + one_minus_rho * delta * delta;
            *w = *w + lr * delta;
        }
    }
    params.set_grads_ready(false);
    Ok(())
}
