//! Softmax cross-entropy loss.

use super::{Scalar, Tensor};

/// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
/// max-subtraction. `logits` is `[batch, classes]`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Tensor<T> {
    assert_eq!(logits.shape().len(), 2, "logits must be [batch, classes]");
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    assert_eq!(labels.len(), b, "one label per batch row");
    for &l in labels {
        assert!(l < c, "label {} out of range for {} classes", l, c);
    }

    let mut probs = vec![T::zero(); b * c];
    let mut total = T::zero();
    {
        let lv = logits.values();
        for (bi, &label) in labels.iter().enumerate() {
            let row = &lv[bi * c..(bi + 1) * c];
            let max = row.iter().cloned().fold(row[0], T::max);
            let mut denom = T::zero();
            for (j, &z) in row.iter().enumerate() {
                let e = (z - max).exp();
                probs[bi * c + j] = e;
                denom = denom + e;
            }
            for p in &mut probs[bi * c..(bi + 1) * c] {
                *p = *p / denom;
            }
            // -log softmax[label] = log(denom) - (z[label] - max)
            total = total + denom.ln() - (row[label] - max);
        }
    }
    let inv_b = T::one() / T::of(b as f64);
    let loss = total * inv_b;

    let labels: Vec<usize> = labels.to_vec();
    let blog = logits.clone();
    Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |dout: &[T]| {
            let d = dout[0] * inv_b;
            let mut g = vec![T::zero(); b * c];
            for (bi, &label) in labels.iter().enumerate() {
                for j in 0..c {
                    let indicator = if j == label { T::one() } else { T::zero() };
                    g[bi * c + j] = d * (probs[bi * c + j] - indicator);
                }
            }
            blog.accumulate_grad(&g);
        }),
    )
}
