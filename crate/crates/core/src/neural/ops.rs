//! Stand-alone forward primitives.
//!
//! These are the per-filter, per-document building blocks. The model runs the
//! batched versions recorded on a [`Graph`](super::Graph); both share these
//! definitions and are cross-checked in tests.

use rand::Rng;

use super::array::{dot, Array, Real};
use crate::error::{Error, Result};

/// Probability floor applied before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `c[i] = ReLU(b + <W, X[i..i+k]>)` over every full window of `x` (L x d) with
/// kernel `w` (k x d).
pub fn conv1d_valid<T: Real>(x: &Array<T>, w: &Array<T>, b: T) -> Result<Vec<T>> {
    let (l, d) = matrix_dims(x, "conv input")?;
    let (k, dw) = matrix_dims(w, "conv kernel")?;
    if d != dw {
        return Err(Error::Shape(format!("kernel width {dw} vs input width {d}")));
    }
    if k == 0 || l < k {
        return Err(Error::Shape(format!("sequence length {l} shorter than kernel {k}")));
    }
    let span = k * d;
    Ok((0..=l - k)
        .map(|i| {
            let z = b + dot(&x.data()[i * d..i * d + span], w.data());
            z.max(T::zero())
        })
        .collect())
}

/// Maximum entry and the first index attaining it.
pub fn global_max_pool<T: Real>(c: &[T]) -> Result<(T, usize)> {
    let mut best = *c.first().ok_or(Error::Empty("feature map"))?;
    let mut arg = 0;
    for (i, &v) in c.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            arg = i;
        }
    }
    Ok((best, arg))
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `softmax(W_c h + b_c)` with `W_c` of shape K x H.
pub fn linear_softmax<T: Real>(h: &[T], wc: &Array<T>, bc: &[T]) -> Result<Vec<T>> {
    let (k, hd) = matrix_dims(wc, "classifier weights")?;
    if hd != h.len() || bc.len() != k {
        return Err(Error::Shape(format!(
            "classifier {k}x{hd}, bias {}, features {}",
            bc.len(),
            h.len()
        )));
    }
    let logits: Vec<T> = (0..k).map(|j| bc[j] + dot(wc.row(j), h)).collect();
    Ok(softmax(&logits))
}

/// `-(1/N) * sum_n alpha[y_n] * log(p[n, y_n])` over an N x K probability batch.
pub fn weighted_cross_entropy<T: Real>(probs: &Array<T>, targets: &[usize], alpha: &[T]) -> Result<T> {
    let (n, k) = matrix_dims(probs, "probabilities")?;
    check_targets(n, k, targets, alpha)?;
    let floor = T::lit(PROB_FLOOR);
    let total = targets
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &y)| acc + alpha[y] * probs.row(i)[y].max(floor).ln());
    Ok(-total / T::lit(n as f64))
}

pub(crate) fn check_targets<T: Real>(n: usize, k: usize, targets: &[usize], alpha: &[T]) -> Result<()> {
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} rows", targets.len())));
    }
    if alpha.len() != k {
        return Err(Error::Shape(format!("{} class weights for {k} classes", alpha.len())));
    }
    if alpha.iter().any(|&a| !(a > T::zero())) {
        return Err(Error::InvalidConfig("class weights must be strictly positive".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&y| y >= k) {
        return Err(Error::ClassOutOfRange { index: bad, bound: k });
    }
    Ok(())
}

/// Inverted-dropout multiplier mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`. `None` means identity.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(n: usize, rate: f64, mode: Mode, rng: &mut R) -> Option<Vec<T>> {
    if mode == Mode::Infer || rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    Some(
        (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

pub fn dropout<T: Real, R: Rng + ?Sized>(v: &[T], rate: f64, mode: Mode, rng: &mut R) -> Vec<T> {
    match dropout_mask(v.len(), rate, mode, rng) {
        None => v.to_vec(),
        Some(mask) => v.iter().zip(mask).map(|(&x, m)| x * m).collect(),
    }
}

pub(crate) fn matrix_dims<T: Real>(a: &Array<T>, what: &str) -> Result<(usize, usize)> {
    match a.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::Shape(format!("{what} must be 2-d, got {s:?}"))),
    }
}
