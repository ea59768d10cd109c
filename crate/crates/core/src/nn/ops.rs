use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::scalar::{c, Scalar};

/// y = x . w + b with the bias row broadcast over batch rows.
pub fn dense_forward<S: Scalar>(x: &Matrix<S>, w: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(NewtError::dim(format!(
            "dense bias [{}x{}] does not match weight cols {}",
            b.rows(),
            b.cols(),
            w.cols()
        )));
    }
    let mut y = x.matmul(w)?;
    let bias = b.row(0);
    for r in 0..y.rows() {
        for (v, &bv) in y.row_mut(r).iter_mut().zip(bias) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Gradients of `dense_forward` given upstream dy. Returns dx and
/// accumulates dw/db into the provided buffers.
pub fn dense_backward<S: Scalar>(
    x: &Matrix<S>,
    w: &Matrix<S>,
    dy: &Matrix<S>,
    dw: &mut Matrix<S>,
    db: &mut Matrix<S>,
) -> Result<Matrix<S>> {
    Matrix::accumulate_transpose_lhs_matmul(x, dy, dw)?;
    let dbr = db.row_mut(0);
    for r in 0..dy.rows() {
        for (d, &g) in dbr.iter_mut().zip(dy.row(r)) {
            *d += g;
        }
    }
    dy.matmul_transpose_rhs(w)
}

/// Per-row statistics recorded by the LayerNorm forward pass.
pub struct LayerNormCache<S> {
    pub normed: Matrix<S>,
    pub inv_std: Vec<S>,
}

/// Per row: (x - mean) / sqrt(var + eps) * gain + bias.
pub fn layernorm_forward<S: Scalar>(
    x: &Matrix<S>,
    gain: &Matrix<S>,
    bias: &Matrix<S>,
    eps: S,
) -> Result<(Matrix<S>, LayerNormCache<S>)> {
    let n = x.cols();
    if n == 0 {
        return Err(NewtError::dim("layernorm over zero columns".to_string()));
    }
    if gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n {
        return Err(NewtError::dim("layernorm gain/bias shape".to_string()));
    }
    let inv_n = c::<S>(1.0 / n as f64);
    let mut normed = Matrix::zeros(x.rows(), n);
    let mut inv_std = vec![S::ZERO; x.rows()];
    let mut y = Matrix::zeros(x.rows(), n);
    let gain_row = gain.row(0);
    let bias_row = bias.row(0);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut mean = S::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_n;
        let mut var = S::ZERO;
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_n;
        let istd = S::ONE / (var + eps).sqrt();
        inv_std[r] = istd;
        let nr = normed.row_mut(r);
        for (h, &v) in nr.iter_mut().zip(row) {
            *h = (v - mean) * istd;
        }
        let yr = y.row_mut(r);
        for i in 0..n {
            yr[i] = nr[i] * gain_row[i] + bias_row[i];
        }
    }
    Ok((y, LayerNormCache { normed, inv_std }))
}

/// Gradients of `layernorm_forward`. Accumulates dgain/dbias, returns dx.
pub fn layernorm_backward<S: Scalar>(
    cache: &LayerNormCache<S>,
    gain: &Matrix<S>,
    dy: &Matrix<S>,
    dgain: &mut Matrix<S>,
    dbias: &mut Matrix<S>,
) -> Result<Matrix<S>> {
    let n = dy.cols();
    if n == 0 || !cache.normed.same_shape(dy) {
        return Err(NewtError::dim("layernorm backward shape".to_string()));
    }
    let inv_n = c::<S>(1.0 / n as f64);
    let mut dx = Matrix::zeros(dy.rows(), n);
    let gain_row = gain.row(0);
    for r in 0..dy.rows() {
        let dyr = dy.row(r);
        let hr = cache.normed.row(r);
        // dh = dy * gain; dx = inv_std * (dh - mean(dh) - h * mean(dh*h))
        let mut mean_dh = S::ZERO;
        let mut mean_dhh = S::ZERO;
        for i in 0..n {
            let dh = dyr[i] * gain_row[i];
            mean_dh += dh;
            mean_dhh += dh * hr[i];
        }
        mean_dh *= inv_n;
        mean_dhh *= inv_n;
        let istd = cache.inv_std[r];
        let dxr = dx.row_mut(r);
        for i in 0..n {
            let dh = dyr[i] * gain_row[i];
            dxr[i] = istd * (dh - mean_dh - hr[i] * mean_dhh);
        }
        let dgr = dgain.row_mut(0);
        let dbr = dbias.row_mut(0);
        for i in 0..n {
            dgr[i] += dyr[i] * hr[i];
            dbr[i] += dyr[i];
        }
    }
    Ok(dx)
}

/// Elementwise x * tanh(softplus(x)), computed through the identity
/// tanh(ln y) = (y^2 - 1)/(y^2 + 1) with y = 1 + e^x so the whole
/// activation needs a single exp. The argument clamp at 40 changes
/// nothing representable: tanh(softplus(40)) already rounds to 1.
pub fn mish_forward<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    x.map(|v| {
        let y = S::ONE + v.minv(c(40.0)).exp_bulk();
        let y2 = y * y;
        v * ((y2 - S::ONE) / (y2 + S::ONE))
    })
}

/// d/dx mish(x) = tanh(sp) + x * sigmoid(x) * (1 - tanh(sp)^2), through
/// the same single-exp identity as the forward pass.
pub fn mish_backward<S: Scalar>(x: &Matrix<S>, dy: &Matrix<S>) -> Result<Matrix<S>> {
    if !x.same_shape(dy) {
        return Err(NewtError::dim("mish backward shape".to_string()));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let y = S::ONE + v.minv(c(40.0)).exp_bulk();
        let y2 = y * y;
        let denom = y2 + S::ONE;
        let t = (y2 - S::ONE) / denom;
        // sigmoid(x) = (y - 1)/y; 1 - t^2 = 4 y^2/(y^2+1)^2
        *d *= t + v * (y - S::ONE) * c::<S>(4.0) * y / (denom * denom);
    }
    Ok(dx)
}

/// Row-wise softmax, stabilized by max subtraction.
pub fn softmax_rows<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    let mut y = x.clone();
    for r in 0..y.rows() {
        softmax_slice(y.row_mut(r));
    }
    y
}

pub(crate) fn softmax_slice<S: Scalar>(row: &mut [S]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.maxv(v);
    }
    let mut sum = S::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp_bulk();
        sum += *v;
    }
    let inv = S::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Gradient of row-wise softmax given its output y: dx = y * (dy - sum(dy*y)).
pub fn softmax_backward<S: Scalar>(y: &Matrix<S>, dy: &Matrix<S>) -> Result<Matrix<S>> {
    if !y.same_shape(dy) {
        return Err(NewtError::dim("softmax backward shape".to_string()));
    }
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        softmax_backward_slice(y.row(r), dy.row(r), dx.row_mut(r));
    }
    Ok(dx)
}

pub(crate) fn softmax_backward_slice<S: Scalar>(y: &[S], dy: &[S], dx: &mut [S]) {
    let mut dot = S::ZERO;
    for (&yv, &gv) in y.iter().zip(dy) {
        dot += yv * gv;
    }
    for i in 0..y.len() {
        dx[i] = y[i] * (dy[i] - dot);
    }
}

/// Splits each row into groups of width `v` and softmax-normalizes each
/// group in place, producing a stack of probability simplices.
pub fn simplicial_forward<S: Scalar>(z: &Matrix<S>, v: usize) -> Result<Matrix<S>> {
    if v == 0 || z.cols() % v != 0 {
        return Err(NewtError::dim(format!(
            "simplicial: width {} not divisible by v={v}",
            z.cols()
        )));
    }
    let mut y = z.clone();
    for r in 0..y.rows() {
        for group in y.row_mut(r).chunks_mut(v) {
            softmax_slice(group);
        }
    }
    Ok(y)
}

/// Gradient of `simplicial_forward` given its output y.
pub fn simplicial_backward<S: Scalar>(y: &Matrix<S>, v: usize, dy: &Matrix<S>) -> Result<Matrix<S>> {
    if v == 0 || y.cols() % v != 0 || !y.same_shape(dy) {
        return Err(NewtError::dim("simplicial backward shape".to_string()));
    }
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let dxr = dx.row_mut(r);
        for g in 0..yr.len() / v {
            let lo = g * v;
            softmax_backward_slice(&yr[lo..lo + v], &dyr[lo..lo + v], &mut dxr[lo..lo + v]);
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_passthrough() {
        let x = Matrix::from_vec(1, 2, vec![1.0f64, 2.0]).unwrap();
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Matrix::row_vector(vec![0.0, 0.0]);
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_zero_input_returns_bias() {
        let x = Matrix::from_vec(1, 2, vec![0.0f64, 0.0]).unwrap();
        let w = Matrix::from_vec(2, 2, vec![0.3, -0.7, 1.5, 0.2]).unwrap();
        let b = Matrix::row_vector(vec![3.0, 4.0]);
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn layernorm_constant_row_is_bias() {
        let x = Matrix::from_vec(1, 3, vec![1.0f64, 1.0, 1.0]).unwrap();
        let gain = Matrix::row_vector(vec![1.0, 1.0, 1.0]);
        let bias = Matrix::row_vector(vec![0.0, 0.0, 0.0]);
        let (y, _) = layernorm_forward(&x, &gain, &bias, 1e-5).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_symmetric_row() {
        let x = Matrix::from_vec(1, 2, vec![-1.0f64, 1.0]).unwrap();
        let gain = Matrix::row_vector(vec![1.0, 1.0]);
        let bias = Matrix::row_vector(vec![0.0, 0.0]);
        let (y, _) = layernorm_forward(&x, &gain, &bias, 1e-5).unwrap();
        assert!(y.get(0, 0) < 0.0 && y.get(0, 1) > 0.0);
        assert!((y.get(0, 0) + y.get(0, 1)).abs() < 1e-12);
        assert!(y.get(0, 1) < 1.0);
    }

    #[test]
    fn layernorm_matches_high_precision_recompute() {
        let mut rng = crate::rng::Rng::seed_from(9);
        let data: Vec<f32> = (0..20).map(|_| rng.range(-3.0, 3.0) as f32).collect();
        let x = Matrix::from_vec(4, 5, data.clone()).unwrap();
        let gain = Matrix::row_vector(vec![1.0f32; 5]);
        let bias = Matrix::row_vector(vec![0.0f32; 5]);
        let (y, _) = layernorm_forward(&x, &gain, &bias, 1e-5).unwrap();
        for r in 0..4 {
            let row: Vec<f64> = (0..5).map(|i| data[r * 5 + i] as f64).collect();
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            for i in 0..5 {
                let want = (row[i] - mean) / (var + 1e-5).sqrt();
                assert!((y.get(r, i) as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn mish_reference_points() {
        let x = Matrix::from_vec(1, 3, vec![0.0f64, 20.0, -1.0]).unwrap();
        let y = mish_forward(&x);
        assert_eq!(y.get(0, 0), 0.0);
        assert!((y.get(0, 1) - 20.0).abs() < 1e-6);
        // independent scalar evaluation of x*tanh(ln(1+e^x)) at x=-1
        let want = -1.0f64 * (1.0f64 + (-1.0f64).exp()).ln().tanh();
        assert!((y.get(0, 2) - want).abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let x = Matrix::from_vec(1, 4, vec![0.0f64; 4]).unwrap();
        let y = softmax_rows(&x);
        for &v in y.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let x = Matrix::from_vec(1, 2, vec![1000.0f64, 0.0]).unwrap();
        let y = softmax_rows(&x);
        assert!(y.all_finite());
        assert!(y.get(0, 0) > 0.999999);
        assert!(y.get(0, 1) < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::Rng::seed_from(4);
        for _ in 0..50 {
            let cols = 2 + rng.below(12);
            let data = (0..cols).map(|_| rng.range(-5.0, 5.0)).collect();
            let x = Matrix::from_vec(1, cols, data).unwrap();
            let y = softmax_rows(&x);
            let s: f64 = y.data().iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn simplicial_uniform_groups() {
        let z = Matrix::from_vec(1, 16, vec![0.0f64; 16]).unwrap();
        let y = simplicial_forward(&z, 8).unwrap();
        for &v in y.data() {
            assert!((v - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn simplicial_groups_sum_to_one() {
        let mut rng = crate::rng::Rng::seed_from(5);
        let data = (0..24).map(|_| rng.range(-4.0, 4.0)).collect();
        let z = Matrix::from_vec(1, 24, data).unwrap();
        let y = simplicial_forward(&z, 8).unwrap();
        for group in y.data().chunks(8) {
            let s: f64 = group.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            for &v in group {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn simplicial_single_group_is_softmax() {
        let data = vec![0.3f64, -1.0, 2.0, 0.1];
        let z = Matrix::from_vec(1, 4, data).unwrap();
        let a = simplicial_forward(&z, 4).unwrap();
        let b = softmax_rows(&z);
        assert_eq!(a, b);
    }

    #[test]
    fn simplicial_indivisible_width_errors() {
        let z: Matrix<f64> = Matrix::zeros(1, 10);
        assert!(simplicial_forward(&z, 8).is_err());
    }

    #[test]
    fn dense_backward_identity_weights() {
        let x = Matrix::from_vec(2, 2, vec![0.5f64, -0.3, 1.0, 0.0]).unwrap();
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let dy = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut dw = Matrix::zeros(2, 2);
        let mut db = Matrix::zeros(1, 2);
        let dx = dense_backward(&x, &w, &dy, &mut dw, &mut db).unwrap();
        assert_eq!(dx, dy);
    }

    #[test]
    fn mish_gradient_at_zero() {
        let x = Matrix::from_vec(1, 1, vec![0.0f64]).unwrap();
        let dy = Matrix::from_vec(1, 1, vec![1.0f64]).unwrap();
        let dx = mish_backward(&x, &dy).unwrap();
        // analytic: tanh(ln 2) + 0 * (...)
        let want = (2.0f64).ln().tanh();
        assert!((dx.get(0, 0) - want).abs() < 1e-12);
    }
}
