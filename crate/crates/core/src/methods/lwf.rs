//! Distillation loss against a frozen copy of the pre-task model.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::{batch_xent, Tensor};
use crate::par::Real;

fn softmax_t<T: Real>(z: &[T], temp: T) -> Vec<T> {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let e: Vec<T> = z.iter().map(|&v| ((v - max) / temp).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `T² · KL(softmax(old/T) ‖ softmax(new/T))` and its gradient with
/// respect to `new`.
pub fn distill_kl<T: Real>(new: &[T], old: &[T], temp: T) -> (T, Vec<T>) {
    let p = softmax_t(old, temp);
    let q = softmax_t(new, temp);
    let mut kl = T::zero();
    for (&p, &q) in p.iter().zip(&q) {
        if p > T::zero() {
            kl += p * (p.ln() - q.ln());
        }
    }
    let grad = p.iter().zip(&q).map(|(&p, &q)| temp * (q - p)).collect();
    (temp * temp * kl, grad)
}

/// Single-sample LwF objective:
/// `(1−α)·CE(new, target) + α·T²·KL(softmax(old/T) ‖ softmax(new/T))`,
/// the KL averaged over `old_ranges`. Without `old_ranges` it is plain
/// cross-entropy over `active`.
pub fn lwf_loss<T: Real>(
    new_logits: &[T],
    old_logits: &[T],
    target: usize,
    active: Range<usize>,
    old_ranges: &[Range<usize>],
    temp: T,
    alpha: T,
) -> Result<(T, Vec<T>)> {
    if let Some(r) = old_ranges.iter().find(|r| r.end > old_logits.len() || r.end > new_logits.len()) {
        return Err(Error::shape("distillation range", &[old_logits.len().min(new_logits.len())], &[r.end]));
    }
    let logits = Tensor::from_vec(vec![1, new_logits.len()], new_logits.to_vec())?;
    let (ce, g) = batch_xent(&logits, &[target], &[active])?;
    let mut grad = g.into_data();
    if old_ranges.is_empty() {
        return Ok((ce, grad));
    }
    let one = T::one();
    grad.iter_mut().for_each(|v| *v *= one - alpha);
    let w = alpha / T::lit(old_ranges.len() as f64);
    let mut kd = T::zero();
    for r in old_ranges {
        let (l, g) = distill_kl(&new_logits[r.clone()], &old_logits[r.clone()], temp);
        kd += l;
        for (dst, v) in grad[r.clone()].iter_mut().zip(g) {
            *dst += w * v;
        }
    }
    Ok(((one - alpha) * ce + w * kd, grad))
}

/// Batch mean of [`lwf_loss`]; the gradient carries the `1/batch` factor.
pub fn lwf_batch<T: Real>(
    logits: &Tensor<T>,
    old: Option<&Tensor<T>>,
    targets: &[usize],
    active: &[Range<usize>],
    old_ranges: &[Range<usize>],
    temp: T,
    alpha: T,
) -> Result<(T, Tensor<T>)> {
    let old = match old {
        Some(o) if !old_ranges.is_empty() => o,
        _ => return batch_xent(logits, targets, active),
    };
    let n = logits.rows();
    let scale = T::one() / T::lit(n as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for i in 0..n {
        let (l, g) = lwf_loss(logits.row(i), old.row(i), targets[i], active[i].clone(), old_ranges, temp, alpha)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((total * scale, Tensor::from_vec(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
#[allow(clippy::single_range_in_vec_init)]
mod tests {
    use super::*;

    #[test]
    fn no_teacher_is_cross_entropy() {
        let (l, _) = lwf_loss(&[0.0f64, 0.0], &[0.0, 0.0], 0, 0..2, &[], 2.0, 0.5).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn identical_logits_have_zero_distillation() {
        let z = [0.3f64, -1.2, 2.0];
        let (kl, g) = distill_kl(&z, &z, 2.0);
        assert!(kl.abs() < 1e-15);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_logit_hand_case() {
        // T=2, new=[1,0], old=[0,1]: p=[σ(-1/2),σ(1/2)], q=[σ(1/2),σ(-1/2)]
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (p0, p1, q0, q1) = (s(-0.5), s(0.5), s(0.5), s(-0.5));
        let kl = p0 * (p0 / q0).ln() + p1 * (p1 / q1).ln();
        let (got, _) = distill_kl(&[1.0f64, 0.0], &[0.0, 1.0], 2.0);
        assert!((got - 4.0 * kl).abs() < 1e-12);

        let ce = -(s(1.0)).ln();
        let (l, _) = lwf_loss(&[1.0f64, 0.0], &[0.0, 1.0], 0, 0..2, &[0..2], 2.0, 0.5).unwrap();
        assert!((l - (0.5 * ce + 0.5 * 4.0 * kl)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let new = [0.4f64, -0.3, 1.1, 0.2];
        let old = [1.0f64, 0.5, -0.5, 0.0];
        let f = |z: &[f64]| lwf_loss(z, &old, 3, 0..4, &[0..2, 2..3], 2.0, 0.3).unwrap().0;
        let (_, g) = lwf_loss(&new, &old, 3, 0..4, &[0..2, 2..3], 2.0, 0.3).unwrap();
        for i in 0..4 {
            let (mut a, mut b) = (new, new);
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let num = (f(&a) - f(&b)) / 2e-6;
            assert!((num - g[i]).abs() < 1e-7, "{i}");
        }
    }
}
