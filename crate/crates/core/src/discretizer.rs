//! Discrete regression for rewards and values in a symmetric-log space:
//! scalars are symlog-transformed, spread onto the two nearest of a fixed
//! grid of bins (two-hot), trained with cross-entropy, and decoded back
//! as the symexp of the expected bin center.

use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::nn::softmax_rows;
use crate::scalar::{c, Scalar};

/// sign(y) * ln(1 + |y|). Odd and monotone.
pub fn symlog<S: Scalar>(y: S) -> S {
    if y < S::ZERO {
        -((-y).ln_1p())
    } else {
        y.ln_1p()
    }
}

/// Inverse of `symlog`: sign(u) * (e^|u| - 1).
pub fn symexp<S: Scalar>(u: S) -> S {
    if u < S::ZERO {
        -((-u).exp() - S::ONE)
    } else {
        u.exp() - S::ONE
    }
}

/// Uniform bin grid in transformed (symlog) space.
#[derive(Clone, Debug)]
pub struct DiscretizerSpec<S> {
    num_bins: usize,
    vmin: S,
    vmax: S,
    centers: Vec<S>,
}

impl<S: Scalar> DiscretizerSpec<S> {
    pub fn new(num_bins: usize, vmin: S, vmax: S) -> Result<Self> {
        if num_bins < 2 {
            return Err(NewtError::invalid("need at least 2 bins".to_string()));
        }
        if !(vmin < vmax) {
            return Err(NewtError::invalid("vmin must be < vmax".to_string()));
        }
        let step = (vmax - vmin) / c::<S>((num_bins - 1) as f64);
        let centers = (0..num_bins)
            .map(|i| vmin + step * c::<S>(i as f64))
            .collect();
        Ok(DiscretizerSpec {
            num_bins,
            vmin,
            vmax,
            centers,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }
    pub fn centers(&self) -> &[S] {
        &self.centers
    }
    pub fn bin_width(&self) -> S {
        (self.vmax - self.vmin) / c::<S>((self.num_bins - 1) as f64)
    }

    /// Two-hot encoding of a raw-space scalar. Out-of-range targets clamp
    /// to the boundary bin (online RL transiently produces extreme TD
    /// targets; erroring here would be fatal mid-training).
    pub fn two_hot(&self, y: S) -> Vec<S> {
        let mut weights = vec![S::ZERO; self.num_bins];
        let u = symlog(y).clamp_to(self.vmin, self.vmax);
        let step = self.bin_width();
        let pos = ((u - self.vmin) / step).to_f64();
        let k = (pos.floor() as usize).min(self.num_bins - 2);
        let hi = (u - self.centers[k]) / step;
        let hi = hi.clamp_to(S::ZERO, S::ONE);
        weights[k] = S::ONE - hi;
        weights[k + 1] = hi;
        weights
    }

    /// Fills `out` with the two-hot encoding without allocating.
    pub fn two_hot_into(&self, y: S, out: &mut [S]) {
        debug_assert_eq!(out.len(), self.num_bins);
        out.iter_mut().for_each(|w| *w = S::ZERO);
        let u = symlog(y).clamp_to(self.vmin, self.vmax);
        let step = self.bin_width();
        let pos = ((u - self.vmin) / step).to_f64();
        let k = (pos.floor() as usize).min(self.num_bins - 2);
        let hi = ((u - self.centers[k]) / step).clamp_to(S::ZERO, S::ONE);
        out[k] = S::ONE - hi;
        out[k + 1] = hi;
    }

    /// Expected raw-space value under an explicit probability vector.
    pub fn expected_value(&self, probs: &[S]) -> S {
        let mut acc = S::ZERO;
        for (&p, &ctr) in probs.iter().zip(&self.centers) {
            acc += p * ctr;
        }
        symexp(acc)
    }

    /// symexp( softmax(logits) . centers ).
    pub fn decode(&self, logits: &[S]) -> S {
        debug_assert_eq!(logits.len(), self.num_bins);
        let m = Matrix::row_vector(logits.to_vec());
        let probs = softmax_rows(&m);
        self.expected_value(probs.row(0))
    }

    /// Row-wise decode of a logits matrix.
    pub fn decode_rows(&self, logits: &Matrix<S>) -> Result<Vec<S>> {
        if logits.cols() != self.num_bins {
            return Err(NewtError::dim(format!(
                "decode: {} logits != {} bins",
                logits.cols(),
                self.num_bins
            )));
        }
        let probs = softmax_rows(logits);
        Ok((0..probs.rows())
            .map(|r| self.expected_value(probs.row(r)))
            .collect())
    }

    /// Gradient of `decode` with respect to the logits, scaled by the
    /// upstream scalar `dy`.
    pub fn decode_backward_row(&self, logits: &[S], dy: S) -> Vec<S> {
        let m = Matrix::row_vector(logits.to_vec());
        let probs = softmax_rows(&m);
        let p = probs.row(0);
        let mut u = S::ZERO;
        for (&pv, &ctr) in p.iter().zip(&self.centers) {
            u += pv * ctr;
        }
        // d symexp(u)/du = e^{|u|}
        let dsym = u.abs().exp();
        let mut dot = S::ZERO;
        for (&pv, &ctr) in p.iter().zip(&self.centers) {
            dot += pv * ctr;
        }
        p.iter()
            .zip(&self.centers)
            .map(|(&pv, &ctr)| dy * dsym * pv * (ctr - dot))
            .collect()
    }
}

/// Cross-entropy between softmax(logits) and an explicit target
/// distribution. Returns the loss and its gradient with respect to the
/// logits (softmax(logits) - target).
pub fn ce_loss<S: Scalar>(logits: &[S], target: &[S]) -> Result<(S, Vec<S>)> {
    if logits.len() != target.len() {
        return Err(NewtError::dim("ce_loss length mismatch".to_string()));
    }
    let mut tsum = S::ZERO;
    for &t in target {
        tsum += t;
    }
    if (tsum - S::ONE).abs() > c(1e-6) {
        return Err(NewtError::invalid(format!(
            "ce_loss target sums to {tsum}, expected 1"
        )));
    }
    // log-softmax with max subtraction
    let mut max = logits[0];
    for &v in logits {
        max = max.maxv(v);
    }
    let mut sum = S::ZERO;
    for &v in logits {
        sum += (v - max).exp_bulk();
    }
    let logz = sum.ln() + max;
    let mut loss = S::ZERO;
    let mut grad = Vec::with_capacity(logits.len());
    for (&l, &t) in logits.iter().zip(target) {
        loss -= t * (l - logz);
        grad.push((l - logz).exp_bulk() - t);
    }
    Ok((loss, grad))
}

/// Batched cross-entropy over matching rows; returns the mean loss and
/// the per-row gradients scaled by 1/rows. The target rows are trusted
/// two-hot encodings here (normalization is checked in `ce_loss`, whose
/// scalar path this mirrors exactly).
pub fn ce_loss_rows<S: Scalar>(logits: &Matrix<S>, targets: &Matrix<S>) -> Result<(S, Matrix<S>)> {
    if !logits.same_shape(targets) {
        return Err(NewtError::dim("ce_loss_rows shape mismatch".to_string()));
    }
    let inv = c::<S>(1.0 / logits.rows() as f64);
    let mut total = S::ZERO;
    let mut grads = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let lrow = logits.row(r);
        let trow = targets.row(r);
        let mut max = lrow[0];
        for &v in lrow {
            max = max.maxv(v);
        }
        let grow = grads.row_mut(r);
        let mut sum = S::ZERO;
        for (g, &l) in grow.iter_mut().zip(lrow) {
            let e = (l - max).exp_bulk();
            *g = e;
            sum += e;
        }
        let logz = sum.ln() + max;
        let inv_sum = S::ONE / sum;
        let mut loss = S::ZERO;
        for i in 0..lrow.len() {
            loss -= trow[i] * (lrow[i] - logz);
            grow[i] = (grow[i] * inv_sum - trow[i]) * inv;
        }
        total += loss;
    }
    Ok((total * inv, grads))
}
