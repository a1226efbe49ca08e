//! Soft Jaccard loss on continuous predictions.
//!
//! For ground truth `t ∈ {0,1}^N` and predictions `y ∈ [0,1]^N`
//!
//! ```text
//! L(t, y) = -(Σ t·y + ε) / (Σ t + Σ y - Σ t·y + ε)
//! ```
//!
//! with `ε = 1e-7`. Sums are accumulated in `f64` regardless of the element
//! type so that full-size patches in `f32` do not lose the small terms.

use thiserror::Error;

use crate::scalar::Scalar;

pub const JACCARD_EPSILON: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("ground truth has {t} values but prediction has {y}")]
    ShapeMismatch { t: usize, y: usize },
    #[error("loss needs at least one pixel")]
    Empty,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Borrowed, validated loss inputs.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a, T> {
    t: &'a [T],
    y: &'a [T],
    epsilon: f64,
}

impl<'a, T: Scalar> LossInputs<'a, T> {
    pub fn new(t: &'a [T], y: &'a [T]) -> Result<Self> {
        Self::with_epsilon(t, y, JACCARD_EPSILON)
    }

    pub fn with_epsilon(t: &'a [T], y: &'a [T], epsilon: f64) -> Result<Self> {
        if t.len() != y.len() {
            return Err(LossError::ShapeMismatch {
                t: t.len(),
                y: y.len(),
            });
        }
        if t.is_empty() {
            return Err(LossError::Empty);
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(LossError::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        if let Some(v) = t.iter().find(|v| !(v.is_zero() || v.is_one())) {
            return Err(LossError::Domain(format!("ground truth value {v} is not binary")));
        }
        if let Some(v) = y.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(LossError::Domain(format!("prediction {v} outside [0, 1]")));
        }
        Ok(Self { t, y, epsilon })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `(Σ t·y, Σ t, Σ y)`
    fn sums(&self) -> (f64, f64, f64) {
        let mut inter = 0.0;
        let mut st = 0.0;
        let mut sy = 0.0;
        for (&t, &y) in self.t.iter().zip(self.y) {
            let (t, y) = (t.to_f64().unwrap(), y.to_f64().unwrap());
            inter += t * y;
            st += t;
            sy += y;
        }
        (inter, st, sy)
    }
}

pub fn soft_jaccard_loss<T: Scalar>(inputs: &LossInputs<'_, T>) -> T {
    let (inter, st, sy) = inputs.sums();
    let eps = inputs.epsilon;
    T::lit(-(inter + eps) / (st + sy - inter + eps))
}

/// Loss value together with `∂L/∂yᵢ` for every pixel.
pub fn soft_jaccard_loss_grad<T: Scalar>(inputs: &LossInputs<'_, T>) -> (T, Vec<T>) {
    let (inter, st, sy) = inputs.sums();
    let eps = inputs.epsilon;
    let num = inter + eps;
    let den = st + sy - inter + eps;
    // dL/dy_i = -(t_i * den - num * (1 - t_i)) / den^2
    let den2 = den * den;
    let grad = inputs
        .t
        .iter()
        .map(|&t| {
            let t = t.to_f64().unwrap();
            T::lit(-(t * den - num * (1.0 - t)) / den2)
        })
        .collect();
    (T::lit(-num / den), grad)
}

/// Mean of per-sample losses over `(t, y)` pairs.
pub fn batch_loss<T: Scalar>(batch: &[(&[T], &[T])]) -> Result<T> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    for (t, y) in batch {
        total += soft_jaccard_loss(&LossInputs::new(t, y)?).to_f64().unwrap();
    }
    Ok(T::lit(total / batch.len() as f64))
}

/// Per-sample training objective. The trainer is written against this trait
/// so alternative objectives can be swapped in for experiments.
pub trait SegmentationLoss<T: Scalar>: Send + Sync {
    /// Returns the sample loss and its gradient with respect to `y`.
    fn loss_grad(&self, t: &[T], y: &[T]) -> Result<(T, Vec<T>)>;

    fn loss(&self, t: &[T], y: &[T]) -> Result<T> {
        self.loss_grad(t, y).map(|(l, _)| l)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SoftJaccard {
    pub epsilon: f64,
}

impl Default for SoftJaccard {
    fn default() -> Self {
        Self {
            epsilon: JACCARD_EPSILON,
        }
    }
}

impl<T: Scalar> SegmentationLoss<T> for SoftJaccard {
    fn loss_grad(&self, t: &[T], y: &[T]) -> Result<(T, Vec<T>)> {
        Ok(soft_jaccard_loss_grad(&LossInputs::with_epsilon(t, y, self.epsilon)?))
    }

    fn loss(&self, t: &[T], y: &[T]) -> Result<T> {
        Ok(soft_jaccard_loss(&LossInputs::with_epsilon(t, y, self.epsilon)?))
    }
}
