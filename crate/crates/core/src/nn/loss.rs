use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::par::Real;

/// Softmax cross-entropy restricted to the active output units.
///
/// Returns `(-log p(target), dloss/dlogits)`; inactive entries of the
/// gradient are exactly zero.
pub fn masked_softmax_xent<T: Real>(logits: &[T], target: usize, active: &[bool]) -> Result<(T, Vec<T>)> {
    if active.len() != logits.len() {
        return Err(Error::shape("active mask", &[logits.len()], &[active.len()]));
    }
    if target >= logits.len() || !active[target] {
        return Err(Error::InactiveTarget { target });
    }
    let idx: Vec<usize> = (0..logits.len()).filter(|&i| active[i]).collect();
    let mut grad = vec![T::zero(); logits.len()];
    let loss = xent_over(logits, target, idx.iter().copied(), &mut grad);
    Ok((loss, grad))
}

/// Probabilities over the active units (zero elsewhere).
pub fn masked_softmax<T: Real>(logits: &[T], active: &[bool]) -> Vec<T> {
    let mut p = vec![T::zero(); logits.len()];
    let idx: Vec<usize> = (0..logits.len()).filter(|&i| active[i]).collect();
    softmax_into(logits, idx.iter().copied(), &mut p);
    p
}

fn softmax_into<T: Real, I: Iterator<Item = usize> + Clone>(logits: &[T], idx: I, out: &mut [T]) {
    let max = idx.clone().fold(T::neg_infinity(), |m, i| m.max(logits[i]));
    let mut sum = T::zero();
    for i in idx.clone() {
        let e = (logits[i] - max).exp();
        out[i] = e;
        sum += e;
    }
    for i in idx {
        out[i] = out[i] / sum;
    }
}

fn xent_over<T: Real, I: Iterator<Item = usize> + Clone>(logits: &[T], target: usize, idx: I, grad: &mut [T]) -> T {
    let max = idx.clone().fold(T::neg_infinity(), |m, i| m.max(logits[i]));
    let mut sum = T::zero();
    for i in idx.clone() {
        sum += (logits[i] - max).exp();
    }
    let log_z = max + sum.ln();
    for i in idx {
        grad[i] = (logits[i] - log_z).exp();
    }
    grad[target] -= T::one();
    log_z - logits[target]
}

/// Mean masked cross-entropy over a batch where each sample's active units
/// form a contiguous range. The returned gradient already carries the
/// `1/batch` factor.
pub fn batch_xent<T: Real>(logits: &Tensor<T>, targets: &[usize], active: &[Range<usize>]) -> Result<(T, Tensor<T>)> {
    let (n, width) = (logits.rows(), logits.row_len());
    if targets.len() != n || active.len() != n {
        return Err(Error::shape("batch targets", &[n], &[targets.len(), active.len()]));
    }
    let mut grad = vec![T::zero(); n * width];
    let mut total = T::zero();
    let scale = T::one() / T::lit(n as f64);
    for (i, (&t, r)) in targets.iter().zip(active).enumerate() {
        if r.end > width || r.is_empty() || !r.contains(&t) {
            return Err(Error::InactiveTarget { target: t });
        }
        let row = logits.row(i);
        let g = &mut grad[i * width..(i + 1) * width];
        total += xent_over(row, t, r.clone(), g);
        for v in &mut g[r.clone()] {
            *v *= scale;
        }
    }
    Ok((total * scale, Tensor::from_vec(vec![n, width], grad)?))
}

/// Arg-max over the active range of each row.
pub fn predict(logits: &Tensor<impl Real>, active: &[Range<usize>]) -> Vec<usize> {
    active
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let row = logits.row(i);
            let mut best = r.start;
            for j in r.clone() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_two_way_is_ln2() {
        let (l, _) = masked_softmax_xent(&[0.0f64, 0.0], 0, &[true, true]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn masking_equals_truncation() {
        let (full, g_full) = masked_softmax_xent(&[5.0f64, -3.0, 9.0, 9.0], 0, &[true, true, false, false]).unwrap();
        let (small, g_small) = masked_softmax_xent(&[5.0f64, -3.0], 0, &[true, true]).unwrap();
        assert_eq!(full, small);
        assert_eq!(&g_full[..2], &g_small[..]);
        assert_eq!(g_full[2], 0.0);
        assert_eq!(g_full[3], 0.0);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let logits = [1.0f64, 2.0, 3.0];
        let mask = [true; 3];
        let (_, g) = masked_softmax_xent(&logits, 2, &mask).unwrap();
        let eps = 1e-6;
        for i in 0..3 {
            let mut p = logits;
            let mut m = logits;
            p[i] += eps;
            m[i] -= eps;
            let num = (masked_softmax_xent(&p, 2, &mask).unwrap().0 - masked_softmax_xent(&m, 2, &mask).unwrap().0) / (2.0 * eps);
            assert!((num - g[i]).abs() < 1e-6, "{i}: {num} vs {}", g[i]);
        }
        // -ln softmax_2 of [1,2,3]
        let expected = -(3.0f64.exp() / (1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp())).ln();
        let (l, _) = masked_softmax_xent(&logits, 2, &mask).unwrap();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn inactive_target_is_an_error() {
        assert!(matches!(
            masked_softmax_xent(&[0.0f32, 1.0], 1, &[true, false]),
            Err(Error::InactiveTarget { target: 1 })
        ));
    }

    #[test]
    fn batch_matches_per_sample() {
        let logits = Tensor::from_vec(vec![2, 4], vec![0.3f64, -1.0, 2.0, 0.5, 1.0, 1.0, -2.0, 4.0]).unwrap();
        let (loss, g) = batch_xent(&logits, &[1, 3], &[0..2, 2..4]).unwrap();
        let (l0, g0) = masked_softmax_xent(logits.row(0), 1, &[true, true, false, false]).unwrap();
        let (l1, g1) = masked_softmax_xent(logits.row(1), 3, &[false, false, true, true]).unwrap();
        assert!((loss - (l0 + l1) / 2.0).abs() < 1e-12);
        for j in 0..4 {
            assert!((g.row(0)[j] - g0[j] / 2.0).abs() < 1e-12);
            assert!((g.row(1)[j] - g1[j] / 2.0).abs() < 1e-12);
        }
        assert_eq!(predict(&logits, &[0..2, 2..4]), vec![0, 3]);
    }
}
