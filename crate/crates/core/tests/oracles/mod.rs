//! Reference implementations written without reusing any library kernel.

use nalgebra::{DMatrix, DVector};

/// Column means and population stds of a row-major design.
pub fn standardize(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let p = x[0].len();
    let mut means = vec![0.0; p];
    let mut stds = vec![0.0; p];
    for j in 0..p {
        means[j] = x.iter().map(|r| r[j]).sum::<f64>() / n;
        stds[j] = (x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt();
    }
    (means, stds)
}

pub struct OracleFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// FISTA with gradient restart on (1/2n)‖y − ȳ − Zb‖² + λ‖b‖₁ in standardized
/// coordinates, mapped back to the original scale.
pub fn fista_lasso(x: &[Vec<f64>], y: &[f64], lambda: f64) -> OracleFit {
    let n = x.len();
    let p = x[0].len();
    let (means, stds) = standardize(x);
    let ybar = y.iter().sum::<f64>() / n as f64;
    let z = DMatrix::from_fn(n, p, |i, j| (x[i][j] - means[j]) / stds[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let gram = z.transpose() * &z / n as f64;
    let zty = z.transpose() * &yc / n as f64;
    let lip = gram.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lip;

    let mut b = DVector::<f64>::zeros(p);
    let mut v = b.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let grad = &gram * &v - &zty;
        let next = DVector::from_iterator(p, (0..p).map(|j| soft(v[j] - step * grad[j], step * lambda)));
        let delta = &next - &b;
        let restart = (&v - &next).dot(&delta) > 0.0;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        v = if restart {
            t = 1.0;
            next.clone()
        } else {
            let mom = (t - 1.0) / t_next;
            t = t_next;
            &next + delta.clone() * mom
        };
        let change = delta.amax();
        b = next;
        if change < 1e-15 {
            break;
        }
    }
    let coefficients: Vec<f64> = (0..p).map(|j| b[j] / stds[j]).collect();
    let intercept = ybar - (0..p).map(|j| coefficients[j] * means[j]).sum::<f64>();
    OracleFit { intercept, coefficients }
}

/// (1/2n)·RSS + λ·Σ|β_j|·s_j on the original data.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let n = x.len() as f64;
    let (_, stds) = standardize(x);
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(r, v)| {
            let f = intercept + r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            (v - f).powi(2)
        })
        .sum();
    rss / (2.0 * n) + lambda * beta.iter().zip(&stds).map(|(b, s)| (b * s).abs()).sum::<f64>()
}

/// Max violation of the lasso optimality conditions in standardized
/// coordinates, including the intercept's zero-mean residual condition.
pub fn lasso_kkt(x: &[Vec<f64>], y: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let n = x.len();
    let (means, stds) = standardize(x);
    let resid: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(r, v)| v - intercept - r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut worst = (resid.iter().sum::<f64>() / n as f64).abs();
    for j in 0..beta.len() {
        let g = (0..n)
            .map(|i| (x[i][j] - means[j]) / stds[j] * resid[i])
            .sum::<f64>()
            / n as f64;
        let bj = beta[j] * stds[j];
        let viol = if bj != 0.0 {
            (g - lambda * bj.signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(viol);
    }
    worst
}

/// Minimizes Tr(A·M·Aᵀ) − 2·Tr(A·Cᵀ) subject to 1ᵀ·A·w = y by solving the
/// full KKT system over vec(A) (row-major) and the multiplier.
pub fn constrained_ls_kkt(m: &DMatrix<f64>, c: &DMatrix<f64>, w: &DVector<f64>, y: f64) -> (DMatrix<f64>, f64) {
    let (n, d) = (c.nrows(), c.ncols());
    let dim = n * d + 1;
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                k[(i * d + a, i * d + b)] = 2.0 * m[(a, b)];
            }
            k[(i * d + a, n * d)] = -w[a];
            k[(n * d, i * d + a)] = w[a];
            rhs[i * d + a] = 2.0 * c[(i, a)];
        }
    }
    rhs[n * d] = y;
    let sol = k.lu().solve(&rhs).expect("KKT system is nonsingular");
    let a = DMatrix::from_fn(n, d, |i, j| sol[i * d + j]);
    (a, sol[n * d])
}

/// ∂/∂A of Tr(Σ_ZZ) − 2·Tr(A·Σ_WZ) + Tr(A·M·Aᵀ) − λ·(1ᵀ·A·w − y), entry by
/// entry.
pub fn lagrangian_gradient(m: &DMatrix<f64>, c: &DMatrix<f64>, w: &DVector<f64>, a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (n, d) = (a.nrows(), a.ncols());
    DMatrix::from_fn(n, d, |i, k| {
        let am: f64 = (0..d).map(|l| a[(i, l)] * (m[(l, k)] + m[(k, l)])).sum();
        am - 2.0 * c[(i, k)] - lambda * w[k]
    })
}

/// Quantile by linear interpolation between order statistics at (n−1)·p.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Literal outlier overwrite: large when above the 0.999 quantile of the
/// input and above mean + 3·std of the previous 7 (already overwritten)
/// days; small when below the 0.01 quantile; both replaced by the mean of
/// the previous 3 days. Days 0..3 are kept.
pub fn naive_iqr(series: &[f64]) -> Vec<f64> {
    let q_hi = quantile(series, 0.999);
    let q_lo = quantile(series, 0.01);
    let mut out = series.to_vec();
    for t in 3..out.len() {
        let past: Vec<f64> = out[t.saturating_sub(7)..t].to_vec();
        let mean = past.iter().sum::<f64>() / past.len() as f64;
        let var = past.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (past.len() - 1) as f64;
        let large = out[t] > q_hi && out[t] > mean + 3.0 * var.sqrt();
        let small = out[t] < q_lo;
        if large || small {
            out[t] = (out[t - 3] + out[t - 2] + out[t - 1]) / 3.0;
        }
    }
    out
}
