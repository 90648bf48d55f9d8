use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of `[n, k]` scores, max-subtracted.
pub fn softmax<T: Real>(scores: &Tensor<T>) -> Tensor<T> {
    let k = scores.item_len();
    let mut out = scores.clone();
    out.grad = None;
    for row in out.data.chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy of softmax(scores) against `labels`, with its gradient
/// `(softmax - onehot) / n`.
pub fn softmax_loss<T: Real>(scores: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let n = scores.batch();
    let k = scores.item_len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let mut loss = 0.0;
    let mut grad = softmax(scores);
    let inv_n = T::one() / T::from_usize(n).expect("batch size");
    for (i, (row, probs)) in scores.data.chunks(k).zip(grad.data.chunks_mut(k)).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max).to_f64_lossy();
        let lse = max + row.iter().map(|&v| (v.to_f64_lossy() - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[i]].to_f64_lossy();
        probs[labels[i]] -= T::one();
        for p in probs.iter_mut() {
            *p *= inv_n;
        }
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_scores_give_log_k() {
        let s = Tensor::<f64>::from_vec(&[2, 40], vec![0.3; 80]).unwrap();
        let (loss, _) = softmax_loss(&s, &[0, 39]).unwrap();
        assert!((loss - 40f64.ln()).abs() < 1e-12);
        assert!((loss - 3.6889).abs() < 1e-4);
    }

    #[test]
    fn saturated_true_class() {
        let mut v = vec![0.0f64; 5];
        v[2] = 1000.0;
        let s = Tensor::from_vec(&[1, 5], v).unwrap();
        let (loss, _) = softmax_loss(&s, &[2]).unwrap();
        assert!(loss < 1e-6);
        assert!(loss.is_finite());
    }

    #[test]
    fn label_out_of_range() {
        let s = Tensor::<f32>::zeros(&[1, 3]);
        assert!(softmax_loss(&s, &[3]).is_err());
        assert!(softmax_loss(&s, &[0, 1]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = [1, 4, 0];
        let s = Tensor::from_vec(&[3, 5], data.clone()).unwrap();
        let (_, grad) = softmax_loss(&s, &labels).unwrap();
        let h = 1e-5;
        for i in 0..15 {
            let mut plus = data.clone();
            plus[i] += h;
            let mut minus = data.clone();
            minus[i] -= h;
            let lp = softmax_loss(&Tensor::from_vec(&[3, 5], plus).unwrap(), &labels).unwrap().0;
            let lm = softmax_loss(&Tensor::from_vec(&[3, 5], minus).unwrap(), &labels).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (numeric - grad.data[i]).abs() / numeric.abs().max(grad.data[i].abs());
            assert!(rel < 1e-6, "{i}: {numeric} vs {}", grad.data[i]);
        }
    }
}
