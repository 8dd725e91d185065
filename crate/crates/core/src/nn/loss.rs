use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of a B×K tensor, stabilised by subtracting the row max.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, k) = dims2(logits)?;
    let mut out = vec![T::zero(); b * k];
    for (src, dst) in logits.data().chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        softmax_row(src, dst);
    }
    Tensor::from_vec(&[b, k], out)
}

pub(crate) fn softmax_row<T: Real>(src: &[T], dst: &mut [T]) {
    let max = src.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d = *d / sum;
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`.
///
/// Per-row terms are evaluated as `logsumexp(z) - z[label]` in `f64` and
/// summed in row order.
pub fn cross_entropy_loss<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (b, k) = dims2(logits)?;
    check_labels(b, k, labels)?;
    let mut total = 0.0f64;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[y].as_f64();
    }
    Ok(total / b as f64)
}

/// Loss together with `d loss / d logits = (softmax - onehot) / B`.
pub(crate) fn cross_entropy_with_grad<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Vec<T>)> {
    let loss = cross_entropy_loss(logits, labels)?;
    let (b, k) = dims2(logits)?;
    let scale = T::of_f64(1.0 / b as f64);
    let mut grad = vec![T::zero(); b * k];
    for ((src, dst), &y) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.chunks_exact_mut(k))
        .zip(labels)
    {
        softmax_row(src, dst);
        dst[y] -= T::one();
        for d in dst.iter_mut() {
            *d *= scale;
        }
    }
    Ok((loss, grad))
}

pub(crate) fn check_labels(batch: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn dims2<T: Real>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        &[b, k] => Ok((b, k)),
        s => Err(Error::Shape(format!("expected a B×K tensor, got {s:?}"))),
    }
}
