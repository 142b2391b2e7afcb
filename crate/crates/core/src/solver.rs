//! Penalized least squares: coordinate-descent LASSO with an unpenalized
//! intercept, ordinary least squares, and the rolling-origin search for the
//! shared penalty.
//!
//! The LASSO objective is
//!
//! ```text
//! (1 / 2n) · Σ (y − μ − Xβ)² + λ · ‖β_std‖₁
//! ```
//!
//! where `β_std` are coefficients on standardized columns (population std).
//! Coefficients are reported on the original column scale.

use std::sync::Arc;

use thiserror::Error;

use crate::homotopy;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("penalty must be finite and non-negative, got {0}")]
    InvalidPenalty(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need at least {min} rows, got {n}")]
    InsufficientRows { n: usize, min: usize },
    #[error("design is rank deficient")]
    SingularDesign,
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Relative std below which a column is treated as constant.
const ZERO_STD_RTOL: f64 = 1e-12;

/// Dense design, column-major, with per-column standardization stats.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
    names: Arc<[String]>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl DesignMatrix {
    /// `data` is column-major, `n * names.len()` long.
    pub fn from_columns(n: usize, data: Vec<f64>, names: Arc<[String]>) -> Result<Self> {
        let p = names.len();
        if data.len() != n * p {
            return Err(SolverError::InvalidInput(format!(
                "expected {} values for {n}x{p}, got {}",
                n * p,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidInput("non-finite design value".into()));
        }
        let mut means = Vec::with_capacity(p);
        let mut stds = Vec::with_capacity(p);
        for j in 0..p {
            let col = &data[j * n..(j + 1) * n];
            let (m, s) = mean_pop_std(col);
            means.push(m);
            stds.push(s);
        }
        Ok(DesignMatrix {
            n,
            p,
            data,
            names,
            means,
            stds,
        })
    }

    /// Row-major convenience constructor; names default to `x0..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(SolverError::InvalidInput("ragged rows".into()));
        }
        let mut data = vec![0.0; n * p];
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                data[j * n + i] = *v;
            }
        }
        let names: Arc<[String]> = (0..p).map(|j| format!("x{j}")).collect();
        Self::from_columns(n, data, names)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.p
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j)).collect()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.stds[j] <= ZERO_STD_RTOL * (1.0 + self.means[j].abs())
    }

    /// Rows `from..to` as a new design with recomputed stats.
    pub fn row_range(&self, from: usize, to: usize) -> DesignMatrix {
        let m = to - from;
        let mut data = Vec::with_capacity(m * self.p);
        for j in 0..self.p {
            data.extend_from_slice(&self.column(j)[from..to]);
        }
        DesignMatrix::from_columns(m, data, self.names.clone()).expect("subset of valid design")
    }

    /// Fitted values `μ + Xβ` on this design.
    pub fn predict(&self, intercept: f64, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![intercept; self.n];
        for (j, b) in coefficients.iter().enumerate() {
            if *b != 0.0 {
                for (o, x) in out.iter_mut().zip(self.column(j)) {
                    *o += b * x;
                }
            }
        }
        out
    }
}

fn mean_pop_std(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    if col.is_empty() {
        return (0.0, 0.0);
    }
    let m = col.iter().sum::<f64>() / n;
    let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub intercept: f64,
    /// Original column scale.
    pub coefficients: Vec<f64>,
    /// Standardized column scale; zero for constant columns.
    pub standardized: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub nonzero: usize,
    pub sweeps: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Converged when no standardized coefficient moves more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Try an exact solve on the active set once the sign pattern settles.
    pub polish: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-7,
            max_sweeps: 10_000,
            polish: true,
        }
    }
}

/// Standardized, centered view of (X, y) restricted to non-constant columns.
struct Prepared {
    n: usize,
    /// Indices of non-constant columns in the original design.
    active: Vec<usize>,
    /// Gram matrix Zᵀ Z / n, row-major, `a x a`.
    gram: Vec<f64>,
    /// Zᵀ (y − ȳ) / n.
    xty: Vec<f64>,
    y_mean: f64,
}

impl Prepared {
    fn new(x: &DesignMatrix, y: &[f64]) -> Prepared {
        let n = x.n;
        let active: Vec<usize> = (0..x.p).filter(|&j| !x.is_constant(j)).collect();
        let a = active.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let mut z = Vec::with_capacity(n * a);
        for &j in &active {
            let (m, inv) = (x.means[j], 1.0 / x.stds[j]);
            z.extend(x.column(j).iter().map(|v| (v - m) * inv));
        }
        let inv_n = 1.0 / n as f64;
        let mut gram = vec![0.0; a * a];
        let mut xty = vec![0.0; a];
        for k in 0..a {
            let zk = &z[k * n..(k + 1) * n];
            xty[k] = zk
                .iter()
                .zip(y)
                .map(|(zi, yi)| zi * (yi - y_mean))
                .sum::<f64>()
                * inv_n;
            for l in 0..=k {
                let zl = &z[l * n..(l + 1) * n];
                let g = dot(zk, zl) * inv_n;
                gram[k * a + l] = g;
                gram[l * a + k] = g;
            }
        }
        Prepared {
            n,
            active,
            gram,
            xty,
            y_mean,
        }
    }

    fn dim(&self) -> usize {
        self.active.len()
    }

    fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Maps standardized active-set coefficients back to the full original scale.
    fn unstandardize(&self, x: &DesignMatrix, beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut coef = vec![0.0; x.p];
        let mut std_full = vec![0.0; x.p];
        let mut intercept = self.y_mean;
        for (k, &j) in self.active.iter().enumerate() {
            let b = beta[k] / x.stds[j];
            coef[j] = b;
            std_full[j] = beta[k];
            intercept -= b * x.means[j];
        }
        (intercept, coef, std_full)
    }

    /// Standardized active-set coefficients from original-scale ones.
    fn standardize_coefs(&self, x: &DesignMatrix, coef: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&j| coef[j] * x.stds[j]).collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn sign_pattern(beta: &[f64]) -> Vec<i8> {
    beta.iter()
        .map(|b| {
            if *b > 0.0 {
                1
            } else if *b < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// In-place Cholesky of a row-major SPD matrix. Returns the smallest pivot
/// or `None` if a pivot is not positive.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Option<f64> {
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        min_pivot = min_pivot.min(d);
        let l = d.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    Some(min_pivot)
}

/// Solves L Lᵀ x = b given the lower factor from `cholesky_in_place`.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Exact solve on the support of `beta` assuming its sign pattern is final.
/// Accepted only if the signs hold and every inactive coordinate satisfies
/// the subgradient bound.
fn polish(p: &Prepared, lambda: f64, beta: &mut [f64], grad: &mut [f64]) -> bool {
    let a = p.dim();
    let support: Vec<usize> = (0..a).filter(|&j| beta[j] != 0.0).collect();
    let s = support.len();
    if s == 0 {
        return false;
    }
    let mut g = vec![0.0; s * s];
    let mut rhs = vec![0.0; s];
    for (r, &j) in support.iter().enumerate() {
        for (c, &k) in support.iter().enumerate() {
            g[r * s + c] = p.gram[j * a + k];
        }
        rhs[r] = p.xty[j] - lambda * beta[j].signum();
    }
    if cholesky_in_place(&mut g, s).is_none() {
        return false;
    }
    cholesky_solve(&g, s, &mut rhs);
    for (r, &j) in support.iter().enumerate() {
        if rhs[r] * beta[j] <= 0.0 {
            return false;
        }
    }
    let mut new_grad = p.xty.clone();
    for (r, &k) in support.iter().enumerate() {
        let b = rhs[r];
        for (j, gj) in new_grad.iter_mut().enumerate() {
            *gj -= p.gram[j * a + k] * b;
        }
    }
    let bound = lambda * (1.0 + 1e-9) + 1e-14;
    for j in 0..a {
        if beta[j] == 0.0 && new_grad[j].abs() > bound {
            return false;
        }
    }
    for b in beta.iter_mut() {
        *b = 0.0;
    }
    for (r, &j) in support.iter().enumerate() {
        beta[j] = rhs[r];
    }
    grad.copy_from_slice(&new_grad);
    true
}

/// Cyclic coordinate descent on the prepared problem. `beta` is the warm
/// start and receives the solution. Returns (sweeps, converged).
fn coordinate_descent(
    p: &Prepared,
    lambda: f64,
    beta: &mut [f64],
    opts: &LassoOptions,
    mut on_sweep: impl FnMut(&[f64]),
) -> (usize, bool) {
    let a = p.dim();
    if a == 0 {
        return (0, true);
    }
    let mut grad = p.xty.clone();
    for k in 0..a {
        if beta[k] != 0.0 {
            for j in 0..a {
                grad[j] -= p.gram[j * a + k] * beta[k];
            }
        }
    }
    let mut last_pattern: Vec<i8> = Vec::new();
    let mut tried_pattern: Vec<i8> = Vec::new();
    for sweep in 1..=opts.max_sweeps {
        let mut max_change = 0.0f64;
        for j in 0..a {
            let gjj = p.gram[j * a + j];
            let old = beta[j];
            let z = grad[j] + gjj * old;
            let new = soft_threshold(z, lambda) / gjj;
            if new != old {
                let d = new - old;
                let col = &p.gram[j * a..(j + 1) * a];
                for (g, gk) in grad.iter_mut().zip(col) {
                    *g -= d * gk;
                }
                beta[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        on_sweep(beta);
        if max_change < opts.tol {
            return (sweep, true);
        }
        if opts.polish {
            let pattern = sign_pattern(beta);
            if pattern == last_pattern && pattern != tried_pattern {
                tried_pattern = pattern.clone();
                polish(p, lambda, beta, &mut grad);
            }
            last_pattern = pattern;
        }
    }
    (opts.max_sweeps, false)
}

fn check_inputs(x: &DesignMatrix, y: &[f64], lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SolverError::InvalidPenalty(lambda));
    }
    if y.len() != x.n {
        return Err(SolverError::InvalidInput(format!(
            "{} targets for {} rows",
            y.len(),
            x.n
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::InvalidInput("non-finite target".into()));
    }
    if x.n < 2 {
        return Err(SolverError::InsufficientRows { n: x.n, min: 2 });
    }
    Ok(())
}

fn finish(x: &DesignMatrix, y: &[f64], prep: &Prepared, beta: &[f64], lambda: f64, sweeps: usize, converged: bool) -> FitResult {
    let (intercept, coefficients, standardized) = prep.unstandardize(x, beta);
    let objective = lasso_objective(x, y, intercept, &coefficients, &standardized, lambda);
    FitResult {
        intercept,
        nonzero: coefficients.iter().filter(|b| **b != 0.0).count(),
        coefficients,
        standardized,
        lambda,
        objective,
        sweeps,
        converged,
    }
}

/// (1/2n)·RSS + λ‖β_std‖₁ evaluated on the original data.
pub fn lasso_objective(
    x: &DesignMatrix,
    y: &[f64],
    intercept: f64,
    coefficients: &[f64],
    standardized: &[f64],
    lambda: f64,
) -> f64 {
    let fitted = x.predict(intercept, coefficients);
    let rss: f64 = fitted.iter().zip(y).map(|(f, v)| (v - f) * (v - f)).sum();
    rss / (2.0 * x.n as f64) + lambda * standardized.iter().map(|b| b.abs()).sum::<f64>()
}

pub fn lasso_fit(x: &DesignMatrix, y: &[f64], lambda: f64) -> Result<FitResult> {
    lasso_fit_with(x, y, lambda, &LassoOptions::default(), None)
}

/// LASSO with explicit options and an optional original-scale warm start.
pub fn lasso_fit_with(
    x: &DesignMatrix,
    y: &[f64],
    lambda: f64,
    opts: &LassoOptions,
    warm: Option<&[f64]>,
) -> Result<FitResult> {
    check_inputs(x, y, lambda)?;
    let prep = Prepared::new(x, y);
    let mut beta = match warm {
        Some(w) => prep.standardize_coefs(x, w),
        None => vec![0.0; prep.dim()],
    };
    let (sweeps, converged) = coordinate_descent(&prep, lambda, &mut beta, opts, |_| {});
    Ok(finish(x, y, &prep, &beta, lambda, sweeps, converged))
}

/// Objective value after every sweep, for monotonicity checks.
pub fn lasso_objective_trace(
    x: &DesignMatrix,
    y: &[f64],
    lambda: f64,
    opts: &LassoOptions,
) -> Result<Vec<f64>> {
    check_inputs(x, y, lambda)?;
    let prep = Prepared::new(x, y);
    let mut beta = vec![0.0; prep.dim()];
    let mut trace = Vec::new();
    coordinate_descent(&prep, lambda, &mut beta, opts, |b| {
        let (mu, coef, std) = prep.unstandardize(x, b);
        trace.push(lasso_objective(x, y, mu, &coef, &std, lambda));
    });
    Ok(trace)
}

/// Smallest penalty at which every standardized coefficient is zero.
pub fn lambda_max(x: &DesignMatrix, y: &[f64]) -> f64 {
    let n = x.n as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    (0..x.p)
        .filter(|&j| !x.is_constant(j))
        .map(|j| {
            let (m, s) = (x.means[j], x.stds[j]);
            let c: f64 = x.column(j).iter().zip(y).map(|(v, yi)| (v - m) / s * (yi - y_mean)).sum();
            (c / n).abs()
        })
        .fold(0.0, f64::max)
}

/// `grid_size` log-spaced values from `lmax` down to `1e-4 · lmax`.
pub fn lambda_grid(lmax: f64, grid_size: usize) -> Vec<f64> {
    if grid_size <= 1 {
        return vec![lmax];
    }
    let ratio: f64 = 1e-4;
    (0..grid_size)
        .map(|k| lmax * ratio.powf(k as f64 / (grid_size - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub validation_mse: Vec<f64>,
    /// Original-scale coefficients fitted on the training rows at `lambda`.
    pub train_coefficients: Vec<f64>,
}

pub const MIN_CV_ROWS: usize = 20;

/// Rolling-origin holdout: fit on the first 75% of rows along a warm-started
/// path, score on the last 25%, keep the penalty with the lowest validation
/// MSE (ties go to the larger penalty).
pub fn cross_validate_lambda(x: &DesignMatrix, y: &[f64], grid_size: usize) -> Result<CvOutcome> {
    check_inputs(x, y, 0.0)?;
    cross_validate_from(x, y, grid_size, lambda_max(x, y))
}

fn cross_validate_from(x: &DesignMatrix, y: &[f64], grid_size: usize, lmax: f64) -> Result<CvOutcome> {
    if x.n < MIN_CV_ROWS {
        return Err(SolverError::InsufficientRows {
            n: x.n,
            min: MIN_CV_ROWS,
        });
    }
    let grid = lambda_grid(lmax, grid_size.max(1));
    let n_val = ((x.n as f64 * 0.25).round() as usize).max(1);
    let n_train = x.n - n_val;
    let train = x.row_range(0, n_train);
    let valid = x.row_range(n_train, x.n);
    let (y_train, y_valid) = y.split_at(n_train);

    let prep = Prepared::new(&train, y_train);
    // Validation rows standardized with the training statistics, by column.
    let a = prep.dim();
    let mut z_valid = vec![0.0; n_val * a];
    for (k, &j) in prep.active.iter().enumerate() {
        let (m, sd) = (train.means[j], train.stds[j]);
        for (dst, v) in z_valid[k * n_val..(k + 1) * n_val].iter_mut().zip(valid.column(j)) {
            *dst = (v - m) / sd;
        }
    }
    let mut best = (f64::INFINITY, 0usize);
    let mut best_beta = vec![0.0; a];
    let mut validation_mse = Vec::with_capacity(grid.len());
    // Along one homotopy segment the residuals are base + t·slope.
    let mut resid = vec![0.0; n_val];
    let mut base = vec![0.0; n_val];
    let mut slope = vec![0.0; n_val];
    let mut segment_id = None;
    path_solutions(&prep, &grid, |k, beta, seg| {
        match seg {
            Some(seg) => {
                if segment_id != Some(seg.id) {
                    segment_id = Some(seg.id);
                    for (r, yv) in base.iter_mut().zip(y_valid) {
                        *r = prep.y_mean - yv;
                    }
                    slope.fill(0.0);
                    for ((&m, b), d) in seg.active.iter().zip(seg.anchor).zip(seg.dir) {
                        let col = &z_valid[m * n_val..(m + 1) * n_val];
                        for ((r, s), z) in base.iter_mut().zip(slope.iter_mut()).zip(col) {
                            *r += b * z;
                            *s += d * z;
                        }
                    }
                }
                for ((r, b), s) in resid.iter_mut().zip(&base).zip(&slope) {
                    *r = b + seg.t * s;
                }
            }
            None => {
                for (r, yv) in resid.iter_mut().zip(y_valid) {
                    *r = prep.y_mean - yv;
                }
                for (col, b) in z_valid.chunks_exact(n_val).zip(beta) {
                    if *b != 0.0 {
                        for (r, z) in resid.iter_mut().zip(col) {
                            *r += b * z;
                        }
                    }
                }
            }
        }
        let mse = resid.iter().map(|r| r * r).sum::<f64>() / n_val as f64;
        validation_mse.push(mse);
        if mse < best.0 {
            best = (mse, k);
            best_beta.copy_from_slice(beta);
        }
    });
    let (_, best_coef, _) = prep.unstandardize(&train, &best_beta);
    Ok(CvOutcome {
        lambda: grid[best.1],
        grid,
        validation_mse,
        train_coefficients: best_coef,
    })
}

/// Standardized solutions along `grid`, handed to `visit` in order: the
/// exact homotopy path, then warm-started coordinate descent for any tail it
/// could not reach (active block singular once the support saturates the
/// rows).
fn path_solutions(p: &Prepared, grid: &[f64], mut visit: impl FnMut(usize, &[f64], Option<homotopy::Segment<'_>>)) {
    let (mut beta, reached) = homotopy::lasso_path(&p.gram, &p.xty, grid, &mut visit);
    let opts = LassoOptions::default();
    for (k, &lambda) in grid.iter().enumerate().skip(reached) {
        coordinate_descent(p, lambda, &mut beta, &opts, |_| {});
        visit(k, &beta, None);
    }
}

/// Cross-validated penalty, then a coordinate-descent fit on all rows,
/// warm-started from the exact homotopy solution at that penalty (or from
/// the training-rows solution if the homotopy stops short).
pub fn lasso_fit_cv(x: &DesignMatrix, y: &[f64], grid_size: usize) -> Result<FitResult> {
    check_inputs(x, y, 0.0)?;
    let prep = Prepared::new(x, y);
    let cv = cross_validate_from(x, y, grid_size, prep.lambda_max())?;
    // The training-rows support usually carries over; when its exact solve
    // fails the optimality check, walk the full-data path instead.
    let mut beta = prep.standardize_coefs(x, &cv.train_coefficients);
    let mut grad = vec![0.0; prep.dim()];
    if !polish(&prep, cv.lambda, &mut beta, &mut grad) {
        let (exact, reached) =
            homotopy::lasso_path(&prep.gram, &prep.xty, &[cv.lambda], |_, _, _| {});
        if reached == 1 {
            beta = exact;
        }
    }
    let (sweeps, converged) =
        coordinate_descent(&prep, cv.lambda, &mut beta, &LassoOptions::default(), |_| {});
    Ok(finish(x, y, &prep, &beta, cv.lambda, sweeps, converged))
}

const OLS_JITTER: f64 = 1e-10;
const OLS_MIN_PIVOT: f64 = 1e-8;

/// Least squares with intercept via the normal equations on standardized
/// columns, with `1e-10` added to the diagonal of ZᵀZ.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    check_inputs(x, y, 0.0)?;
    if (0..x.p).any(|j| x.is_constant(j)) {
        return Err(SolverError::SingularDesign);
    }
    let prep = Prepared::new(x, y);
    let a = prep.dim();
    // Jitter is on the unnormalized Gram ZᵀZ; `prep.gram` carries a 1/n.
    let mut g = prep.gram.clone();
    for j in 0..a {
        g[j * a + j] += OLS_JITTER / prep.n as f64;
    }
    match cholesky_in_place(&mut g, a) {
        Some(pivot) if pivot >= OLS_MIN_PIVOT => {}
        _ if a == 0 => {}
        _ => return Err(SolverError::SingularDesign),
    }
    let mut beta = prep.xty.clone();
    cholesky_solve(&g, a, &mut beta);
    Ok(finish(x, y, &prep, &beta, 0.0, 0, true))
}
