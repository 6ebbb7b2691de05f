//! Dense kernels used by the prompt-learning stack.
//!
//! Vectors are plain `[f64]` slices; [`Matrix`] is a row-major dense matrix.
//! Every reduction sums in index order so that repeated runs are
//! bit-reproducible regardless of thread scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

/// Loss reported when the labelled class has zero probability.
pub const DEFAULT_CE_CAP: f64 = 1e6;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return config(format!("matrix shape {rows}x{cols} does not match {} entries", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return config(format!("row {i} has {} entries, expected {cols}", row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.iter_rows().map(|row| dot(row, x)).collect()
    }

    /// `selfᵀ · y` for `y` of length `rows`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.iter_rows().zip(y) {
            axpy(yr, row, &mut out);
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                axpy(a, other.row(k), dst);
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            for c in 0..other.rows {
                out.data[r * other.rows + c] = dot(self.row(r), other.row(c));
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                axpy(a, b, &mut out.data[i * other.cols..(i + 1) * other.cols]);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(a: &mut [f64], s: f64) {
    a.iter_mut().for_each(|v| *v *= s);
}

/// Returns `a / |a|` together with `|a|`.
pub fn normalize(a: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return domain("cannot normalize a zero or non-finite vector");
    }
    Ok((a.iter().map(|v| v / n).collect(), n))
}

/// Backward pass of `u = a / |a|`: maps `∂L/∂u` to `∂L/∂a`.
pub fn normalize_backward(unit: &[f64], norm: f64, grad_unit: &[f64]) -> Vec<f64> {
    let radial = dot(unit, grad_unit);
    unit.iter().zip(grad_unit).map(|(u, g)| (g - radial * u) / norm).collect()
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Temperature softmax `exp(z_j / tau) / Σ_i exp(z_i / tau)`, max-shifted.
pub fn softmax_temp(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return config(format!("softmax temperature must be positive, got {tau}"));
    }
    if logits.is_empty() {
        return domain("softmax over an empty logit vector");
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return domain("softmax over non-finite logits");
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return config(format!("cosine similarity of lengths {} and {}", a.len(), b.len()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return domain("cosine similarity with a zero-norm vector");
    }
    // Product of norms keeps the expression symmetric in (a, b).
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Outcome of a capped cross-entropy evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// True when `probs[label]` was zero and the loss was replaced by the cap.
    pub saturated: bool,
}

/// `-ln probs[label]`, replaced by `cap` when the probability is zero.
pub fn cross_entropy_capped(probs: &[f64], label: usize, cap: f64) -> Result<CrossEntropy> {
    let Some(&p) = probs.get(label) else {
        return domain(format!("label {label} out of range for {} classes", probs.len()));
    };
    if p <= 0.0 {
        return Ok(CrossEntropy { loss: cap, saturated: true });
    }
    Ok(CrossEntropy { loss: (-p.ln()).min(cap), saturated: false })
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<CrossEntropy> {
    cross_entropy_capped(probs, label, DEFAULT_CE_CAP)
}

/// Gradient of `cross_entropy(softmax_temp(z, tau), label)` with respect to `z`.
pub fn cross_entropy_logit_grad(probs: &[f64], label: usize, tau: f64) -> Vec<f64> {
    probs.iter().enumerate().map(|(j, p)| (p - if j == label { 1.0 } else { 0.0 }) / tau).collect()
}

/// `KL(target ∥ probs) = Σ target_j ln(target_j / probs_j)`.
pub fn kl_divergence(target: &[f64], probs: &[f64]) -> f64 {
    target.iter().zip(probs).filter(|(t, _)| **t > 0.0).fold(0.0, |acc, (t, p)| acc + t * (t.ln() - p.max(f64::MIN_POSITIVE).ln()))
}

/// Gradient of `KL(target ∥ softmax_temp(z, tau))` with respect to `z`.
pub fn kl_logit_grad(target: &[f64], probs: &[f64], tau: f64) -> Vec<f64> {
    probs.iter().zip(target).map(|(p, t)| (p - t) / tau).collect()
}

/// Central finite differences `(f(x + h e_k) - f(x - h e_k)) / 2h`.
///
/// Test oracle only; the caller owns the tolerance.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let plus = f(&probe);
            probe[k] = orig - h;
            let minus = f(&probe);
            probe[k] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)` over whole vectors.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax_temp(&[0.2, 0.2], 1.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_low_temperature() {
        let p = softmax_temp(&[0.5, 0.3], 0.1).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[0] - expected).abs() < 1e-15);
        assert!((p[1] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn softmax_single_class_and_errors() {
        assert_eq!(softmax_temp(&[3.7], 0.5).unwrap(), vec![1.0]);
        assert!(matches!(softmax_temp(&[1.0], 0.0), Err(crate::Error::Config(_))));
        assert!(matches!(softmax_temp(&[1.0], -1.0), Err(crate::Error::Config(_))));
        assert!(matches!(softmax_temp(&[], 1.0), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn cosine_cases() {
        let a = [0.3, -1.2, 2.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], 0).unwrap().loss, 0.0);
        let uniform = vec![0.2; 5];
        assert!((cross_entropy(&uniform, 3).unwrap().loss - 5f64.ln()).abs() < 1e-12);
        let ce = cross_entropy(&[0.8808, 0.1192], 1).unwrap();
        assert!((ce.loss - 2.127).abs() < 1e-3);
        let sat = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!(sat.saturated);
        assert_eq!(sat.loss, DEFAULT_CE_CAP);
        assert_eq!(cross_entropy_capped(&[1.0, 0.0], 1, 50.0).unwrap().loss, 50.0);
    }

    #[test]
    fn finite_diff_quadratic_and_constant() {
        let g = finite_diff_gradient(|x| dot(x, x), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        let z = finite_diff_gradient(|_| 7.0, &[1.0, -3.0, 0.5], 1e-5);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn finite_diff_matches_softmax_cross_entropy() {
        let logits = [0.3, -0.7, 1.1, 0.05];
        let tau = 0.5;
        let probs = softmax_temp(&logits, tau).unwrap();
        let analytic = cross_entropy_logit_grad(&probs, 2, tau);
        let numeric = finite_diff_gradient(|z| cross_entropy(&softmax_temp(z, tau).unwrap(), 2).unwrap().loss, &logits, 1e-5);
        assert!(relative_error(&analytic, &numeric, 1e-12) < 1e-6);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let target = softmax_temp(&[0.1, 0.4, -0.2], 1.0).unwrap();
        let z = [0.5, -0.1, 0.3];
        let tau = 0.2;
        let p = softmax_temp(&z, tau).unwrap();
        let analytic = kl_logit_grad(&target, &p, tau);
        let numeric = finite_diff_gradient(|z| kl_divergence(&target, &softmax_temp(z, tau).unwrap()), &z, 1e-5);
        assert!(relative_error(&analytic, &numeric, 1e-12) < 1e-6);
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let a = [0.4, -1.3, 0.9];
        let w = [1.0, 2.0, -0.5];
        let (u, n) = normalize(&a).unwrap();
        let analytic = normalize_backward(&u, n, &w);
        let numeric = finite_diff_gradient(|x| dot(&normalize(x).unwrap().0, &w), &a, 1e-5);
        assert!(relative_error(&analytic, &numeric, 1e-12) < 1e-7);
    }

    #[test]
    fn matrix_products_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.5, -1.0], vec![2.0, 0.0, 1.0]]).unwrap();
        let ab = a.matmul(&b);
        assert_eq!(ab.row(0), &[5.0, 0.5, 1.0]);
        let bt = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(a.matmul_t(&bt), ab);
        assert_eq!(a.t_matmul(&a), Matrix::from_rows(&[vec![35.0, 44.0], vec![44.0, 56.0]]).unwrap());
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
        assert_eq!(a.matvec_t(&[1.0, 0.0, 1.0]), vec![6.0, 8.0]);
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn softmax_sums_to_one(
            logits in prop::collection::vec(-50.0f64..50.0, 1..12),
            tau in 0.01f64..10.0,
        ) {
            let p = softmax_temp(&logits, tau).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
        }

        #[test]
        fn cosine_is_exactly_symmetric(
            pair in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )),
        ) {
            let (a, b) = pair;
            prop_assume!(norm(&a) > 1e-9 && norm(&b) > 1e-9);
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
