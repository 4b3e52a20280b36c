//! Forward and backward passes for the primitive operations the models are
//! built from. Backward functions take the upstream gradient and return (or
//! accumulate) gradients with respect to every input.

use crate::error::{Error, Result};
use crate::numeric::matrix::{gemm, Matrix};
use crate::rng::{self, Rng};

/// Xavier-uniform initialization: entries uniform in `[-a, a]` with
/// `a = sqrt(6 / (rows + cols))`.
pub fn xavier_init(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidShape(format!("xavier_init({rows}, {cols})")));
    }
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| a * (2.0 * rng::uniform(rng) - 1.0))
        .collect();
    Matrix::new(rows, cols, data)
}

/// `x · w + b`, with `b` broadcast over rows.
pub fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols() {
        return Err(Error::InvalidShape(format!(
            "affine: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), w.cols());
    for r in 0..out.rows() {
        out.row_mut(r).copy_from_slice(b.row(0));
    }
    gemm(1.0, x, false, w, false, 1.0, &mut out)?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct AffineGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Matrix,
}

pub fn affine_backward(x: &Matrix, w: &Matrix, dout: &Matrix) -> Result<AffineGrads> {
    let mut dw = Matrix::zeros(w.rows(), w.cols());
    let mut db = Matrix::zeros(1, w.cols());
    let dx = affine_backward_accumulate(x, w, dout, &mut dw, &mut db)?;
    Ok(AffineGrads { dx, dw, db })
}

/// Adds the weight and bias gradients into `dw`/`db` and returns `dx`.
pub fn affine_backward_accumulate(
    x: &Matrix,
    w: &Matrix,
    dout: &Matrix,
    dw: &mut Matrix,
    db: &mut Matrix,
) -> Result<Matrix> {
    if dout.rows() != x.rows() || dout.cols() != w.cols() {
        return Err(Error::InvalidShape(format!(
            "affine_backward: dout {:?} for x {:?}, w {:?}",
            dout.shape(),
            x.shape(),
            w.shape()
        )));
    }
    gemm(1.0, x, true, dout, false, 1.0, dw)?;
    let db_row = db.row_mut(0);
    for r in 0..dout.rows() {
        for (acc, g) in db_row.iter_mut().zip(dout.row(r)) {
            *acc += g;
        }
    }
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    gemm(1.0, dout, false, w, true, 0.0, &mut dx)?;
    Ok(dx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn activate(kind: Activation, x: &Matrix) -> Result<Matrix> {
    if !x.is_finite() {
        return Err(Error::NonFinite("activation input"));
    }
    Ok(x.map(|v| kind.apply(v)))
}

pub fn activation_backward(kind: Activation, x: &Matrix, y: &Matrix, dout: &Matrix) -> Result<Matrix> {
    x.check_same_shape(y)?;
    x.check_same_shape(dout)?;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(dout.data())
        .map(|((&xi, &yi), &g)| g * kind.derivative(xi, yi))
        .collect();
    Matrix::new(x.rows(), x.cols(), data)
}

/// Numerically stable softmax over each row.
pub fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Given softmax output `y` and upstream `dout`, returns the input gradient.
pub fn row_softmax_backward(y: &Matrix, dout: &Matrix) -> Result<Matrix> {
    y.check_same_shape(dout)?;
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = dout.row(r);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *d = yi * (gi - dot);
        }
    }
    Ok(dx)
}

/// Scalar loss together with its gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct CrossEntropy {
    pub loss: f64,
    pub grad: Matrix,
}

/// Mean token cross-entropy over the positions where `mask` is 1.
pub fn masked_cross_entropy(logits: &Matrix, targets: &[usize], mask: &[u8]) -> Result<CrossEntropy> {
    if mask.len() != logits.rows() {
        return Err(Error::InvalidShape(format!(
            "mask length {} for {} logit rows",
            mask.len(),
            logits.rows()
        )));
    }
    let active = mask.iter().filter(|&&m| m != 0).count();
    if active == 0 {
        return Err(Error::DegenerateMask);
    }
    let weights: Vec<f64> = mask
        .iter()
        .map(|&m| if m != 0 { 1.0 / active as f64 } else { 0.0 })
        .collect();
    weighted_cross_entropy(logits, targets, &weights)
}

/// `-Σ_t weights[t] · log softmax(logits[t])[targets[t]]`.
pub fn weighted_cross_entropy(logits: &Matrix, targets: &[usize], weights: &[f64]) -> Result<CrossEntropy> {
    let (t_len, v) = logits.shape();
    if targets.len() != t_len || weights.len() != t_len {
        return Err(Error::InvalidShape(format!(
            "{} targets and {} weights for {t_len} logit rows",
            targets.len(),
            weights.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&id| id >= v) {
        return Err(Error::InvalidId { id: bad, size: v });
    }
    let mut grad = Matrix::zeros(t_len, v);
    let mut loss = 0.0;
    for t in 0..t_len {
        let w = weights[t];
        if w == 0.0 {
            continue;
        }
        let row = logits.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        loss -= w * (row[targets[t]] - log_z);
        let g = grad.row_mut(t);
        for (gi, &xi) in g.iter_mut().zip(row) {
            *gi = w * (xi - log_z).exp();
        }
        g[targets[t]] -= w;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy"));
    }
    Ok(CrossEntropy { loss, grad })
}

#[derive(Clone, Debug)]
pub struct Pooled {
    pub values: Matrix,
    pub argmax: Vec<usize>,
}

/// Column-wise maximum over positions; ties go to the lowest position.
pub fn max_over_time(features: &Matrix) -> Result<Pooled> {
    if features.rows() == 0 {
        return Err(Error::EmptyInput("max_over_time needs at least one position"));
    }
    let f = features.cols();
    let mut values = Matrix::row_vector(features.row(0));
    let mut argmax = vec![0; f];
    for p in 1..features.rows() {
        for (c, &x) in features.row(p).iter().enumerate() {
            if x > values[(0, c)] {
                values[(0, c)] = x;
                argmax[c] = p;
            }
        }
    }
    Ok(Pooled { values, argmax })
}

/// Routes each feature's upstream gradient to its argmax position.
pub fn max_over_time_backward(argmax: &[usize], dout: &Matrix, positions: usize) -> Result<Matrix> {
    if dout.rows() != 1 || dout.cols() != argmax.len() {
        return Err(Error::InvalidShape("max_over_time_backward".into()));
    }
    let mut dx = Matrix::zeros(positions, argmax.len());
    for (c, &p) in argmax.iter().enumerate() {
        dx[(p, c)] += dout[(0, c)];
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::seeded(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng::uniform(&mut r) * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let bound = 3f64.sqrt();
        for seed in 0..20 {
            let m = xavier_init(1, 1, &mut rng::seeded(seed)).unwrap();
            assert!(m[(0, 0)].abs() <= bound);
        }
        let a = xavier_init(5, 7, &mut rng::seeded(9)).unwrap();
        let b = xavier_init(5, 7, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(xavier_init(0, 3, &mut rng::seeded(1)), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn xavier_mean_within_three_sigma() {
        let m = xavier_init(64, 64, &mut rng::seeded(42)).unwrap();
        let a = (6.0f64 / 128.0).sqrt();
        let sigma = a / (3.0f64 * 4096.0).sqrt();
        let mean = m.data().iter().sum::<f64>() / 4096.0;
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
    }

    #[test]
    fn affine_identity_and_zero_input() {
        let x = rand_matrix(3, 4, 1);
        let out = affine(&x, &Matrix::identity(4), &Matrix::zeros(1, 4)).unwrap();
        assert_eq!(out, x);

        let b = Matrix::row_vector(&[0.5, -1.0]);
        let out = affine(&Matrix::zeros(3, 4), &rand_matrix(4, 2, 2), &b).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), b.row(0));
        }
        assert!(affine(&x, &Matrix::zeros(3, 2), &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn affine_matches_triple_loop() {
        let x = rand_matrix(3, 4, 11);
        let w = rand_matrix(4, 2, 12);
        let b = rand_matrix(1, 2, 13);
        let out = affine(&x, &w, &b).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let mut s = b[(0, c)];
                for i in 0..4 {
                    s += x[(r, i)] * w[(i, c)];
                }
                assert!((out[(r, c)] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activation_values() {
        let x = Matrix::row_vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(activate(Activation::Relu, &x).unwrap().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        let bad = Matrix::row_vector(&[f64::NAN]);
        assert!(matches!(activate(Activation::Tanh, &bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_uniform_shift_and_direct_formula() {
        let y = row_softmax(&Matrix::row_vector(&[0.0; 4]));
        assert_eq!(y.data(), &[0.25; 4]);

        let a = row_softmax(&Matrix::row_vector(&[0.3, -1.2, 2.0]));
        let b = row_softmax(&Matrix::row_vector(&[100.3, 98.8, 102.0]));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }

        let y = row_softmax(&Matrix::row_vector(&[1.0, 2.0, 3.0]));
        let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        for i in 0..3 {
            assert!((y[(0, i)] - ((i + 1) as f64).exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        // Near-one-hot logits give near-zero loss.
        let mut logits = Matrix::filled(2, 3, -800.0);
        logits[(0, 1)] = 0.0;
        logits[(1, 2)] = 0.0;
        let ce = masked_cross_entropy(&logits, &[1, 2], &[1, 1]).unwrap();
        assert!(ce.loss.abs() < 1e-12);

        let uniform = Matrix::zeros(4, 1000);
        let ce = masked_cross_entropy(&uniform, &[3, 7, 0, 999], &[1, 1, 1, 0]).unwrap();
        assert!((ce.loss - 1000f64.ln()).abs() < 1e-12);
        assert!((ce.loss - 6.9078).abs() < 1e-4);

        assert!(matches!(
            masked_cross_entropy(&uniform, &[0; 4], &[0; 4]),
            Err(Error::DegenerateMask)
        ));
    }

    #[test]
    fn masked_cross_entropy_matches_per_position_sum() {
        let logits = rand_matrix(5, 6, 21);
        let targets = [0, 5, 2, 2, 4];
        let mask = [1, 0, 1, 1, 0];
        let ce = masked_cross_entropy(&logits, &targets, &mask).unwrap();
        let mut total = 0.0;
        for t in [0, 2, 3] {
            let row = logits.row(t);
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            total += -(row[targets[t]].exp() / z).ln();
        }
        assert!((ce.loss - total / 3.0).abs() < 1e-12);
        // Masked rows carry no gradient.
        assert!(ce.grad.row(1).iter().all(|&g| g == 0.0));
        assert!(ce.grad.row(4).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn max_over_time_cases() {
        let single = Matrix::row_vector(&[1.0, -2.0]);
        let p = max_over_time(&single).unwrap();
        assert_eq!(p.values, single);

        let constant = Matrix::new(3, 1, vec![4.0, 4.0, 4.0]).unwrap();
        let p = max_over_time(&constant).unwrap();
        assert_eq!((p.values[(0, 0)], p.argmax[0]), (4.0, 0));

        let feats = rand_matrix(7, 3, 31);
        let p = max_over_time(&feats).unwrap();
        for c in 0..3 {
            let mut best = 0;
            for r in 1..7 {
                if feats[(r, c)] > feats[(best, c)] {
                    best = r;
                }
            }
            assert_eq!(p.argmax[c], best);
            assert_eq!(p.values[(0, c)], feats[(best, c)]);
        }

        assert!(matches!(max_over_time(&Matrix::zeros(0, 3)), Err(Error::EmptyInput(_))));
    }
}
