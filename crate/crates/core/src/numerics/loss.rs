//! Scalar losses returning `(value, ∂value/∂prediction)`.

use super::real::Real;

/// Mean over the batch of squared error on a single selected output per row.
///
/// `predictions` is `batch × width`; row `i` contributes
/// `(targets[i] − predictions[i, selected[i]])²`. The gradient is zero on
/// every unselected output.
pub fn selected_mse<T: Real>(
    predictions: &[T],
    width: usize,
    selected: &[usize],
    targets: &[T],
) -> (T, Vec<T>) {
    let batch = selected.len();
    assert_eq!(predictions.len(), batch * width);
    assert_eq!(targets.len(), batch);
    let mut grad = vec![T::zero(); predictions.len()];
    if batch == 0 {
        return (T::zero(), grad);
    }
    let n = T::of_f64(batch as f64);
    let two = T::of_f64(2.0);
    let mut total = T::zero();
    for (row, (&a, &y)) in selected.iter().zip(targets).enumerate() {
        let diff = predictions[row * width + a] - y;
        total += diff * diff;
        grad[row * width + a] = two * diff / n;
    }
    (total / n, grad)
}

/// Mean softmax cross-entropy over a batch of logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], classes: usize, labels: &[usize]) -> (T, Vec<T>) {
    let batch = labels.len();
    assert_eq!(logits.len(), batch * classes);
    let mut grad = vec![T::zero(); logits.len()];
    if batch == 0 {
        return (T::zero(), grad);
    }
    let n = T::of_f64(batch as f64);
    let mut total = T::zero();
    for (row, &label) in labels.iter().enumerate() {
        let z = &logits[row * classes..(row + 1) * classes];
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exp: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exp.iter().copied().sum();
        total += sum.ln() - (z[label] - max);
        for (k, e) in exp.into_iter().enumerate() {
            let p = e / sum;
            let target = if k == label { T::one() } else { T::zero() };
            grad[row * classes + k] = (p - target) / n;
        }
    }
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selected_mse_ignores_other_outputs() {
        let (loss, grad) = selected_mse(&[0.0f64, 5.0, -2.0, 0.5], 2, &[0, 1], &[1.0, 0.5]);
        assert!((loss - 0.5).abs() < 1e-15);
        assert_eq!(grad, vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.0f64; 4], 4, &[2]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[2] + 0.75).abs() < 1e-12);
        assert!((grad[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_difference_quotient() {
        let logits = [0.3f64, -1.2, 2.0, 0.1, 0.0, -0.4];
        let labels = [2, 0];
        let (_, grad) = softmax_cross_entropy(&logits, 3, &labels);
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut up = logits;
            let mut dn = logits;
            up[i] += h;
            dn[i] -= h;
            let num = (softmax_cross_entropy(&up, 3, &labels).0 - softmax_cross_entropy(&dn, 3, &labels).0) / (2.0 * h);
            assert!((num - grad[i]).abs() < 1e-8);
        }
    }
}
