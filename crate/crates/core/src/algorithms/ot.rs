//! Entropic optimal transport in the log domain.

use crate::error::{config, domain, Result};
use crate::numerics::{self, logsumexp, Matrix};

const ROW_TOLERANCE: f64 = 1e-13;
const NEWTON_STEPS: usize = 50;

/// Balanced entropic plan between `row_marginal` and `col_marginal`.
pub fn sinkhorn(cost: &Matrix, eps: f64, iters: usize, row_marginal: &[f64], col_marginal: &[f64]) -> Result<Matrix> {
    sinkhorn_unbalanced(cost, eps, iters, row_marginal, col_marginal, 1.0)
}

/// Sinkhorn with the column constraint enforced only up to weight `relax`.
///
/// Each column potential update is scaled by `relax`; `relax = 1` is the
/// balanced iteration and `relax = 0` drops the column constraint.
pub fn sinkhorn_unbalanced(
    cost: &Matrix,
    eps: f64,
    iters: usize,
    row_marginal: &[f64],
    col_marginal: &[f64],
    relax: f64,
) -> Result<Matrix> {
    let (m, n) = (cost.rows(), cost.cols());
    if !(eps > 0.0) {
        return config(format!("sinkhorn epsilon must be positive, got {eps}"));
    }
    if !(0.0..=1.0).contains(&relax) {
        return config(format!("ot_relax must lie in [0, 1], got {relax}"));
    }
    if row_marginal.len() != m || col_marginal.len() != n || m == 0 || n == 0 {
        return config(format!("marginals of length {}/{} for a {m}x{n} cost", row_marginal.len(), col_marginal.len()));
    }
    if !cost.is_finite() {
        return domain("transport cost contains non-finite entries");
    }
    for marginal in [row_marginal, col_marginal] {
        if marginal.iter().any(|v| !(*v > 0.0)) || (marginal.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return config("marginals must be positive and sum to 1");
        }
    }
    let log_a: Vec<f64> = row_marginal.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = col_marginal.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut buf_row = vec![0.0; n];
    let mut buf_col = vec![0.0; m];
    for _ in 0..iters {
        for i in 0..m {
            for k in 0..n {
                buf_row[k] = (g[k] - cost.get(i, k)) / eps;
            }
            f[i] = eps * (log_a[i] - logsumexp(&buf_row));
        }
        column_update(cost, eps, &f, &log_b, relax, &mut g, &mut buf_col);
    }
    if relax == 1.0 {
        newton_polish(cost, eps, row_marginal, &log_b, &mut f, &mut g);
    }
    let plan = plan_of(cost, eps, &f, &g);
    Ok(plan)
}

fn column_update(cost: &Matrix, eps: f64, f: &[f64], log_b: &[f64], relax: f64, g: &mut [f64], buf: &mut [f64]) {
    for k in 0..g.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = (f[i] - cost.get(i, k)) / eps;
        }
        g[k] = relax * eps * (log_b[k] - logsumexp(buf));
    }
}

fn plan_of(cost: &Matrix, eps: f64, f: &[f64], g: &[f64]) -> Matrix {
    let mut plan = Matrix::zeros(f.len(), g.len());
    for (i, fi) in f.iter().enumerate() {
        for (k, gk) in g.iter().enumerate() {
            plan.set(i, k, ((fi + gk - cost.get(i, k)) / eps).exp());
        }
    }
    plan
}

fn row_residual(plan: &Matrix, a: &[f64]) -> Vec<f64> {
    plan.iter_rows().zip(a).map(|(r, ai)| ai - r.iter().sum::<f64>()).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton iterations on the row potentials of the balanced semi-dual; the
/// column potentials stay at their exact best response.
///
/// Plain scaling contracts slowly when `eps` is small against the cost
/// spread; a few Newton steps reach the same fixed point to round-off.
fn newton_polish(cost: &Matrix, eps: f64, a: &[f64], log_b: &[f64], f: &mut [f64], g: &mut [f64]) {
    let (m, n) = (f.len(), g.len());
    if m < 2 {
        return;
    }
    let mut buf = vec![0.0; m];
    let mut plan = plan_of(cost, eps, f, g);
    let mut residual = row_residual(&plan, a);
    for _ in 0..NEWTON_STEPS {
        let err = max_abs(&residual);
        if err < ROW_TOLERANCE {
            break;
        }
        // (diag r − P diag(1/b) Pᵀ) / eps, with f_0 pinned.
        let cols: Vec<f64> = (0..n).map(|k| (0..m).map(|i| plan.get(i, k)).sum()).collect();
        let rows: Vec<f64> = plan.iter_rows().map(|r| r.iter().sum()).collect();
        let dim = m - 1;
        let mut h = Matrix::zeros(dim, dim);
        for p in 0..dim {
            for q in 0..dim {
                let (i, j) = (p + 1, q + 1);
                let cross: f64 = (0..n).map(|k| plan.get(i, k) * plan.get(j, k) / cols[k]).sum();
                let diag = if i == j { rows[i] } else { 0.0 };
                h.set(p, q, (diag - cross) / eps);
            }
        }
        let Some(step) = solve(h, residual[1..].to_vec()) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut f_try = f.to_vec();
            for (p, d) in step.iter().enumerate() {
                f_try[p + 1] += t * d;
            }
            let mut g_try = g.to_vec();
            column_update(cost, eps, &f_try, log_b, 1.0, &mut g_try, &mut buf);
            let plan_try = plan_of(cost, eps, &f_try, &g_try);
            let res_try = row_residual(&plan_try, a);
            if max_abs(&res_try) < err {
                f.copy_from_slice(&f_try);
                g.copy_from_slice(&g_try);
                plan = plan_try;
                residual = res_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Matrix, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a.get(x, col).abs().total_cmp(&a.get(y, col).abs()))?;
        if a.get(pivot, col).abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                let tmp = a.get(col, c);
                a.set(col, c, a.get(pivot, c));
                a.set(pivot, c, tmp);
            }
            b.swap(col, pivot);
        }
        for r in col + 1..n {
            let factor = a.get(r, col) / a.get(col, col);
            for c in col..n {
                a.set(r, c, a.get(r, c) - factor * a.get(col, c));
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a.get(r, c) * x[c]).sum();
        x[r] = (b[r] - tail) / a.get(r, r);
    }
    Some(x)
}

/// Transport score of one class and the plan it came from.
#[derive(Debug, Clone)]
pub struct OtScore {
    pub logit: f64,
    pub plan: Matrix,
}

/// `−⟨plan, 1 − cos⟩` between local visual features and a class's prompt
/// features under uniform marginals.
pub fn plot_class_score(locals: &Matrix, prompts: &[&[f64]], eps: f64, iters: usize, relax: f64) -> Result<OtScore> {
    if prompts.is_empty() {
        return config("transport score needs at least one prompt feature");
    }
    let (m, n) = (locals.rows(), prompts.len());
    let mut cost = Matrix::zeros(m, n);
    for i in 0..m {
        for (k, p) in prompts.iter().enumerate() {
            cost.set(i, k, 1.0 - numerics::cosine_similarity(locals.row(i), p)?);
        }
    }
    let plan = sinkhorn_unbalanced(&cost, eps, iters, &vec![1.0 / m as f64; m], &vec![1.0 / n as f64; n], relax)?;
    let logit = -numerics::dot(plan.as_slice(), cost.as_slice());
    Ok(OtScore { logit, plan })
}
