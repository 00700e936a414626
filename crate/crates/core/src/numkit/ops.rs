use crate::Result;

use super::{Real, Tensor};

/// Default epsilon used by hidden-layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Numerically stable logistic function, kept strictly inside (0, 1).
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / T::of(2.0);
    y.max(T::min_positive_value()).min(hi)
}

/// Elementwise [`sigmoid`] over a tensor.
pub fn sigmoid_bound<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(sigmoid)
}

/// Normalizes a single row in place, returning `1 / sqrt(var + eps)`.
pub(crate) fn layer_norm_row<T: Real>(row: &mut [T], eps: T) -> T {
    let d = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / d;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / d;
    let inv_std = T::one() / (var + eps).sqrt();
    for x in row.iter_mut() {
        *x = (*x - mean) * inv_std;
    }
    inv_std
}

/// Per-row normalization to zero mean and unit variance with no learned
/// scale or shift. `x` is treated as `[batch, d]`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(crate::Error::invalid("layer norm eps must be positive"));
    }
    let d = x.row_len();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        layer_norm_row(row, eps);
    }
    Ok(out)
}
