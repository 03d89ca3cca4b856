use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Row-wise softmax of a `[batch, classes]` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [_, classes] = batch_dims(logits)?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

fn batch_dims(logits: &Tensor) -> Result<[usize; 2]> {
    match logits.shape() {
        [b, c] => Ok([*b, *c]),
        other => Err(Error::shape("logits", &[0, 10], other)),
    }
}

/// Per-sample `-log softmax(logits)[label]`.
pub fn per_sample_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let [batch, classes] = batch_dims(logits)?;
    check_labels(batch, classes, labels)?;
    Ok(logits
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .collect())
}

fn check_labels(batch: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [batch, classes] = batch_dims(logits)?;
    let losses = per_sample_cross_entropy(logits, labels)?;
    let mut grad = softmax(logits)?;
    let inv = 1.0 / batch as f64;
    for (row, &y) in grad.data_mut().chunks_exact_mut(classes).zip(labels) {
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((losses.iter().sum::<f64>() * inv, grad))
}

/// Index of the largest logit in each row; ties go to the lower class.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_logits_give_ln10() {
        let logits = Tensor::zeros(&[3, 10]);
        let (loss, _) = cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert_relative_eq!(loss, 10f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn large_margin_gives_zero_loss() {
        let mut logits = Tensor::zeros(&[1, 10]);
        logits.data_mut()[3] = 1e3;
        let (loss, _) = cross_entropy(&logits, &[3]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::from_fn(&[4, 10], |i| (i as f64 * 0.7).sin() * 3.0);
        let (_, grad) = cross_entropy(&logits, &[1, 2, 3, 9]).unwrap();
        for row in grad.data().chunks_exact(10) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let logits = Tensor::from_fn(&[2, 10], |i| (i as f64 * 1.3).cos());
        let labels = [7, 0];
        let (_, grad) = cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let fd = (cross_entropy(&p, &labels).unwrap().0
                - cross_entropy(&m, &labels).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let logits = Tensor::zeros(&[1, 10]);
        assert!(cross_entropy(&logits, &[10]).is_err());
        assert!(cross_entropy(&logits, &[1, 2]).is_err());
    }
}
