//! Second-step state models over weekly increments: the joint/alone
//! shrunk best linear predictor and the nationally constrained variant.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoId, RegionMap};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum ArgoxError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("constraint degenerate: centered predictor has zero norm under the shrunk precision")]
    ConstraintDegenerate,
    #[error("need {needed} weeks of history, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, ArgoxError>;

pub const DEFAULT_ALONE: [&str; 6] = ["AK", "HI", "DE", "KY", "VT", "ME"];
pub const DEFAULT_EXCLUDED: [&str; 2] = ["HI", "VT"];
/// States never considered for the joint model regardless of correlation.
pub const ISLAND_STATES: [&str; 2] = ["AK", "HI"];

/// Mixing weights applied as Σ_ZW → w_cov·Σ_ZW and
/// Σ_WW → w_cov·Σ_WW + w_diag·D_WW + jitter·I.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Shrinkage {
    pub w_cov: f64,
    pub w_diag: f64,
    pub jitter: f64,
}

impl Default for Shrinkage {
    fn default() -> Self {
        Shrinkage {
            w_cov: 0.5,
            w_diag: 0.5,
            jitter: 1e-8,
        }
    }
}

impl Shrinkage {
    /// No shrinkage and no jitter: the textbook best linear predictor.
    pub fn none() -> Self {
        Shrinkage {
            w_cov: 1.0,
            w_diag: 0.0,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateGrouping {
    pub joint: Vec<GeoId>,
    pub alone: Vec<GeoId>,
    /// States in the constrained model (all but `excluded`).
    pub constrained: Vec<GeoId>,
    /// States predicted by the first-step full model instead.
    pub excluded: Vec<GeoId>,
}

impl StateGrouping {
    pub fn new(alone: &[GeoId], excluded: &[GeoId]) -> Result<Self> {
        for g in alone.iter().chain(excluded) {
            if !g.is_state() {
                return Err(ArgoxError::InvalidGrouping(format!("{g} is not a state")));
            }
        }
        let states = geo::all_states();
        let joint: Vec<GeoId> = states.iter().filter(|s| !alone.contains(s)).cloned().collect();
        let constrained: Vec<GeoId> = states.iter().filter(|s| !excluded.contains(s)).cloned().collect();
        let mut alone = alone.to_vec();
        alone.sort();
        alone.dedup();
        let mut excluded = excluded.to_vec();
        excluded.sort();
        excluded.dedup();
        if joint.is_empty() || constrained.is_empty() {
            return Err(ArgoxError::InvalidGrouping("empty joint or constrained set".into()));
        }
        Ok(StateGrouping {
            joint,
            alone,
            constrained,
            excluded,
        })
    }

    /// The same grouping over `present` states only.
    pub fn restrict(&self, present: &[GeoId]) -> Result<Self> {
        let keep = |v: &[GeoId]| -> Vec<GeoId> { v.iter().filter(|g| present.contains(g)).cloned().collect() };
        let (joint, constrained) = (keep(&self.joint), keep(&self.constrained));
        if joint.is_empty() || constrained.is_empty() {
            return Err(ArgoxError::InvalidGrouping("empty joint or constrained set".into()));
        }
        Ok(StateGrouping {
            joint,
            alone: keep(&self.alone),
            constrained,
            excluded: keep(&self.excluded),
        })
    }

    pub fn from_codes(alone: &[String], excluded: &[String]) -> Result<Self> {
        let parse = |codes: &[String]| -> Result<Vec<GeoId>> {
            codes
                .iter()
                .map(|c| GeoId::state(c).map_err(|e| ArgoxError::InvalidGrouping(e.to_string())))
                .collect()
        };
        StateGrouping::new(&parse(alone)?, &parse(excluded)?)
    }
}

impl Default for StateGrouping {
    fn default() -> Self {
        let alone: Vec<GeoId> = DEFAULT_ALONE.iter().map(|c| GeoId::state(c).unwrap()).collect();
        let excluded: Vec<GeoId> = DEFAULT_EXCLUDED.iter().map(|c| GeoId::state(c).unwrap()).collect();
        StateGrouping::new(&alone, &excluded).unwrap()
    }
}

/// Which predictor blocks to stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorSet {
    /// Z_{τ−1}, GT − y, region − y, nation − y.
    Four,
    /// Z_{τ−1}, GT − y, nation − y.
    NoRegion,
}

/// First-step estimates for one anchor week and horizon, over all 51
/// states in alphabetical order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyEstimateBundle {
    /// Index of the latest fully observed week.
    pub anchor_week: i64,
    pub horizon: usize,
    pub states: Vec<GeoId>,
    /// Query-only first-step state estimates.
    pub gt: Vec<f64>,
    /// Query-only region estimate of each state's region.
    pub reg: Vec<f64>,
    /// Full-model national estimate, the same for every state.
    pub nat: Vec<f64>,
    /// y at the anchor week.
    pub last: Vec<f64>,
    /// y_anchor − y_{anchor−1}.
    pub prev_increment: Vec<f64>,
}

impl WeeklyEstimateBundle {
    /// Broadcasts region and nation estimates onto the state ordering.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        anchor_week: i64,
        horizon: usize,
        gt: &BTreeMap<GeoId, f64>,
        reg: &BTreeMap<GeoId, f64>,
        nat: f64,
        last: &BTreeMap<GeoId, f64>,
        before_last: &BTreeMap<GeoId, f64>,
        regions: &RegionMap,
    ) -> Result<Self> {
        let states: Vec<GeoId> = geo::all_states().into_iter().filter(|s| gt.contains_key(s)).collect();
        if states.is_empty() {
            return Err(ArgoxError::Dimension("no state estimates".into()));
        }
        let pick = |m: &BTreeMap<GeoId, f64>, g: &GeoId, what: &str| -> Result<f64> {
            m.get(g)
                .copied()
                .ok_or_else(|| ArgoxError::Dimension(format!("missing {what} for {g}")))
        };
        let mut b = WeeklyEstimateBundle {
            anchor_week,
            horizon,
            states: states.clone(),
            gt: Vec::with_capacity(51),
            reg: Vec::with_capacity(51),
            nat: vec![nat; states.len()],
            last: Vec::with_capacity(51),
            prev_increment: Vec::with_capacity(51),
        };
        for s in &states {
            let region = regions
                .region_of(s)
                .map_err(|e| ArgoxError::Dimension(e.to_string()))?;
            b.gt.push(pick(gt, s, "state estimate")?);
            b.reg.push(pick(reg, &region, "region estimate")?);
            let y = pick(last, s, "last week")?;
            b.last.push(y);
            b.prev_increment.push(y - pick(before_last, s, "previous week")?);
        }
        Ok(b)
    }

    pub fn index_of(&self, g: &GeoId) -> Option<usize> {
        self.states.iter().position(|s| s == g)
    }

    pub fn indices(&self, geos: &[GeoId]) -> Result<Vec<usize>> {
        geos.iter()
            .map(|g| {
                self.index_of(g)
                    .ok_or_else(|| ArgoxError::Dimension(format!("{g} not in bundle")))
            })
            .collect()
    }

    /// Predictor vector stacked block-wise: all of block 1 for `idx`, then
    /// all of block 2, and so on.
    pub fn predictors(&self, idx: &[usize], set: PredictorSet) -> Vec<f64> {
        let mut w = Vec::with_capacity(idx.len() * 4);
        w.extend(idx.iter().map(|&i| self.prev_increment[i]));
        w.extend(idx.iter().map(|&i| self.gt[i] - self.last[i]));
        if set == PredictorSet::Four {
            w.extend(idx.iter().map(|&i| self.reg[i] - self.last[i]));
        }
        w.extend(idx.iter().map(|&i| self.nat[i] - self.last[i]));
        w
    }

    /// Realized increments y_{anchor+h} − y_anchor.
    pub fn increments(&self, idx: &[usize], realized: &[f64]) -> Vec<f64> {
        idx.iter().map(|&i| realized[i] - self.last[i]).collect()
    }
}

/// Means and sample covariances (ddof 1) of paired (Z, W) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CovStats {
    pub window: usize,
    pub mu_z: DVector<f64>,
    pub mu_w: DVector<f64>,
    pub sigma_zz: DMatrix<f64>,
    pub sigma_zw: DMatrix<f64>,
    pub sigma_ww: DMatrix<f64>,
    pub d_ww: DVector<f64>,
}

impl CovStats {
    pub fn from_samples(z: &[Vec<f64>], w: &[Vec<f64>]) -> Result<Self> {
        let n = z.len();
        if n < 2 || w.len() != n {
            return Err(ArgoxError::InsufficientHistory {
                needed: 2,
                available: n.min(w.len()),
            });
        }
        let (dz, dw) = (z[0].len(), w[0].len());
        if z.iter().any(|v| v.len() != dz) || w.iter().any(|v| v.len() != dw) {
            return Err(ArgoxError::Dimension("ragged samples".into()));
        }
        let zm = DMatrix::from_fn(n, dz, |i, j| z[i][j]);
        let wm = DMatrix::from_fn(n, dw, |i, j| w[i][j]);
        let mu_z = DVector::from_iterator(dz, zm.column_iter().map(|c| c.mean()));
        let mu_w = DVector::from_iterator(dw, wm.column_iter().map(|c| c.mean()));
        let zc = DMatrix::from_fn(n, dz, |i, j| zm[(i, j)] - mu_z[j]);
        let wc = DMatrix::from_fn(n, dw, |i, j| wm[(i, j)] - mu_w[j]);
        let scale = 1.0 / (n - 1) as f64;
        let sigma_zz = zc.tr_mul(&zc) * scale;
        let sigma_zw = zc.tr_mul(&wc) * scale;
        let mut sigma_ww = wc.tr_mul(&wc) * scale;
        // Exact symmetry regardless of summation order.
        for i in 0..dw {
            for j in 0..i {
                let v = sigma_ww[(i, j)];
                sigma_ww[(j, i)] = v;
            }
        }
        let d_ww = sigma_ww.diagonal();
        Ok(CovStats {
            window: n,
            mu_z,
            mu_w,
            sigma_zz,
            sigma_zw,
            sigma_ww,
            d_ww,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.mu_z.len()
    }

    pub fn w_dim(&self) -> usize {
        self.mu_w.len()
    }

    /// (w_cov·Σ_ZW, Cholesky of w_cov·Σ_WW + w_diag·D_WW + jitter·I).
    fn shrunk(&self, s: &Shrinkage) -> Result<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
        if let Some(k) = self.d_ww.iter().position(|v| !(*v > 0.0)) {
            return Err(ArgoxError::NumericalFailure(format!(
                "predictor {k} has zero variance over the window"
            )));
        }
        let mut m = &self.sigma_ww * s.w_cov;
        for k in 0..self.w_dim() {
            m[(k, k)] += s.w_diag * self.d_ww[k] + s.jitter;
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| ArgoxError::NumericalFailure("shrunk predictor covariance is not positive definite".into()))?;
        Ok((&self.sigma_zw * s.w_cov, chol))
    }

    fn centered(&self, w_now: &[f64]) -> Result<DVector<f64>> {
        if w_now.len() != self.w_dim() {
            return Err(ArgoxError::Dimension(format!(
                "predictor has {} entries, covariance expects {}",
                w_now.len(),
                self.w_dim()
            )));
        }
        Ok(DVector::from_column_slice(w_now) - &self.mu_w)
    }
}

/// Ẑ = μ_Z + C·M⁻¹·(W − μ_W) with the shrunk C, M.
pub fn blp_joint(cov: &CovStats, w_now: &[f64], shrink: &Shrinkage) -> Result<DVector<f64>> {
    let w_tilde = cov.centered(w_now)?;
    let (c, chol) = cov.shrunk(shrink)?;
    Ok(&cov.mu_z + c * chol.solve(&w_tilde))
}

/// Single-state version on the three-predictor set.
pub fn blp_alone(cov: &CovStats, w_now: &[f64], shrink: &Shrinkage) -> Result<f64> {
    if cov.z_dim() != 1 {
        return Err(ArgoxError::Dimension("stand-alone model predicts one state".into()));
    }
    Ok(blp_joint(cov, w_now, shrink)?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    pub z_hat: DVector<f64>,
    /// Recovered coefficient matrix A (states × predictors).
    pub a: DMatrix<f64>,
    /// Lagrange multiplier.
    pub lambda: f64,
}

/// Increment predictor whose implied predictions sum to `target`:
/// with C, M the shrunk matrices, S = M⁻¹, W̃ = W − μ_W and
/// ỹ = target − 1ᵀy_last − 1ᵀμ_Z,
/// κ = (ỹ − 1ᵀC·S·W̃) / (n·W̃ᵀS·W̃), A = (C + κ·1·W̃ᵀ)·S, λ = 2κ,
/// Ẑ = μ_Z + A·W̃.
pub fn blp_nat_constrained(
    cov: &CovStats,
    w_now: &[f64],
    last: &[f64],
    target: f64,
    shrink: &Shrinkage,
) -> Result<ConstrainedSolution> {
    let n = cov.z_dim();
    if last.len() != n {
        return Err(ArgoxError::Dimension(format!("{} last values for {n} states", last.len())));
    }
    let w_tilde = cov.centered(w_now)?;
    let (c, chol) = cov.shrunk(shrink)?;
    let s_w = chol.solve(&w_tilde);
    let quad = w_tilde.dot(&s_w);
    let y_tilde = target - last.iter().sum::<f64>() - cov.mu_z.sum();
    let free = &c * &s_w;
    let gap = y_tilde - free.sum();
    let (kappa, a_extra) = if quad > 0.0 && quad.is_finite() {
        (gap / (n as f64 * quad), true)
    } else {
        // W̃ = 0: Ẑ = μ_Z regardless of A, so the constraint either already
        // holds or cannot be met.
        if gap.abs() <= 1e-8 * target.abs().max(1.0) {
            (0.0, false)
        } else {
            return Err(ArgoxError::ConstraintDegenerate);
        }
    };
    let mut coef = c;
    if a_extra {
        for i in 0..n {
            for (k, wk) in w_tilde.iter().enumerate() {
                coef[(i, k)] += kappa * wk;
            }
        }
    }
    // A = coef·S = (S·coefᵀ)ᵀ since S is symmetric.
    let a = chol.solve(&coef.transpose()).transpose();
    let z_hat = &cov.mu_z + &free + DVector::from_element(n, kappa * quad);
    Ok(ConstrainedSolution {
        z_hat,
        a,
        lambda: 2.0 * kappa,
    })
}

/// ∇_A of the Lagrangian in transposed form, 2·M·Aᵀ − 2·Cᵀ − λ·W̃·1ᵀ, with
/// the shrunk C, M. Zero at the constrained optimum.
pub fn lagrangian_gradient(
    cov: &CovStats,
    sol: &ConstrainedSolution,
    w_now: &[f64],
    shrink: &Shrinkage,
) -> Result<DMatrix<f64>> {
    let w_tilde = cov.centered(w_now)?;
    let mut m = &cov.sigma_ww * shrink.w_cov;
    for k in 0..cov.w_dim() {
        m[(k, k)] += shrink.w_diag * cov.d_ww[k] + shrink.jitter;
    }
    let c = &cov.sigma_zw * shrink.w_cov;
    let n = cov.z_dim();
    let ones = DVector::from_element(n, 1.0);
    Ok(&m * sol.a.transpose() * 2.0 - c.transpose() * 2.0 - &w_tilde * ones.transpose() * sol.lambda)
}

/// Ridge jitter on the standardized normal equations of the multiple
/// correlation projection.
pub const MULTIPLE_CORRELATION_RIDGE: f64 = 1e-6;
pub const MULTIPLE_CORRELATION_MIN_WEEKS: usize = 10;

/// Multiple correlation of `target` with `predictors` (each the same length
/// as `target`): predictors standardized, projection by ridge-jittered least
/// squares, R = sqrt(R²) clamped to [0, 1]. Constant predictors are ignored;
/// a constant target has R = 0.
pub fn multiple_correlation(target: &[f64], predictors: &[Vec<f64>]) -> Result<f64> {
    let n = target.len();
    if n < MULTIPLE_CORRELATION_MIN_WEEKS {
        return Err(ArgoxError::InsufficientHistory {
            needed: MULTIPLE_CORRELATION_MIN_WEEKS,
            available: n,
        });
    }
    if predictors.iter().any(|p| p.len() != n) {
        return Err(ArgoxError::Dimension("predictor length differs from target".into()));
    }
    let ym = stats::mean(target);
    let yc: Vec<f64> = target.iter().map(|v| v - ym).collect();
    let tss: f64 = yc.iter().map(|v| v * v).sum();
    if tss <= 0.0 {
        return Ok(0.0);
    }
    let cols: Vec<Vec<f64>> = predictors
        .iter()
        .filter_map(|p| {
            let m = stats::mean(p);
            let sd = stats::pop_variance(p).sqrt();
            (sd > 0.0).then(|| p.iter().map(|v| (v - m) / sd).collect())
        })
        .collect();
    if cols.is_empty() {
        return Ok(0.0);
    }
    let k = cols.len();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let mut g = x.tr_mul(&x) / n as f64;
    for j in 0..k {
        g[(j, j)] += MULTIPLE_CORRELATION_RIDGE;
    }
    let y = DVector::from_vec(yc);
    let rhs = x.tr_mul(&y) / n as f64;
    let beta = g
        .cholesky()
        .ok_or_else(|| ArgoxError::NumericalFailure("multiple correlation normal equations".into()))?
        .solve(&rhs);
    let resid = &y - &x * beta;
    let r2 = (1.0 - resid.norm_squared() / tss).clamp(0.0, 1.0);
    Ok(r2.sqrt())
}

/// Multiple correlation of each state's weekly deaths against the nation,
/// the regions other than its own, and all other states. `weekly` must
/// contain every state, every region and the nation over the same weeks.
pub fn state_multiple_correlations(
    weekly: &BTreeMap<GeoId, Vec<f64>>,
    regions: &RegionMap,
) -> Result<BTreeMap<GeoId, f64>> {
    let nation = GeoId::nation();
    let get = |g: &GeoId| -> Result<&Vec<f64>> {
        weekly
            .get(g)
            .ok_or_else(|| ArgoxError::Dimension(format!("no weekly series for {g}")))
    };
    let states: Vec<GeoId> = geo::all_states().into_iter().filter(|s| weekly.contains_key(s)).collect();
    let region_ids: Vec<GeoId> = geo::all_regions().into_iter().filter(|r| weekly.contains_key(r)).collect();
    let mut out = BTreeMap::new();
    for s in states.iter().cloned() {
        let own = regions
            .region_of(&s)
            .map_err(|e| ArgoxError::Dimension(e.to_string()))?;
        let mut preds = vec![get(&nation)?.clone()];
        for r in &region_ids {
            if *r != own {
                preds.push(get(r)?.clone());
            }
        }
        for o in states.iter().cloned() {
            if o != s {
                preds.push(get(&o)?.clone());
            }
        }
        out.insert(s.clone(), multiple_correlation(get(&s)?, &preds)?);
    }
    Ok(out)
}

/// AK and HI plus the `n_low` non-island states with the lowest multiple
/// correlation (ties broken by state code).
pub fn select_alone_states(correlations: &BTreeMap<GeoId, f64>, n_low: usize) -> Vec<GeoId> {
    let islands: Vec<GeoId> = ISLAND_STATES.iter().map(|c| GeoId::state(c).unwrap()).collect();
    let mut rest: Vec<(&GeoId, f64)> = correlations
        .iter()
        .filter(|(g, _)| !islands.contains(g))
        .map(|(g, r)| (g, *r))
        .collect();
    rest.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    let mut out = islands;
    out.extend(rest.into_iter().take(n_low).map(|(g, _)| g.clone()));
    out.sort();
    out
}

/// A current bundle with its trailing training samples (each paired with
/// the realized y at anchor + horizon, state-ordered).
pub struct SecondStepInput<'a> {
    pub current: &'a WeeklyEstimateBundle,
    pub history: &'a [(&'a WeeklyEstimateBundle, &'a [f64])],
}

impl SecondStepInput<'_> {
    fn check(&self, window: usize) -> Result<()> {
        if self.history.len() < window {
            return Err(ArgoxError::InsufficientHistory {
                needed: window,
                available: self.history.len(),
            });
        }
        Ok(())
    }

    fn cov(&self, idx: &[usize], set: PredictorSet, window: usize) -> Result<CovStats> {
        let recent = &self.history[self.history.len() - window..];
        let z: Vec<Vec<f64>> = recent.iter().map(|(b, y)| b.increments(idx, y)).collect();
        let w: Vec<Vec<f64>> = recent.iter().map(|(b, _)| b.predictors(idx, set)).collect();
        CovStats::from_samples(&z, &w)
    }
}

/// Joint model over `grouping.joint`, stand-alone model per alone state.
/// Returns state-ordered weekly predictions y_last + Ẑ.
pub fn argox_two_step(
    input: &SecondStepInput<'_>,
    grouping: &StateGrouping,
    window: usize,
    shrink: &Shrinkage,
) -> Result<BTreeMap<GeoId, f64>> {
    input.check(window)?;
    let cur = input.current;
    let mut out = BTreeMap::new();
    let joint = cur.indices(&grouping.joint)?;
    let cov = input.cov(&joint, PredictorSet::Four, window)?;
    let z = blp_joint(&cov, &cur.predictors(&joint, PredictorSet::Four), shrink)?;
    for (k, &i) in joint.iter().enumerate() {
        out.insert(cur.states[i].clone(), cur.last[i] + z[k]);
    }
    for g in &grouping.alone {
        let idx = cur.indices(std::slice::from_ref(g))?;
        let cov = input.cov(&idx, PredictorSet::NoRegion, window)?;
        let z = blp_alone(&cov, &cur.predictors(&idx, PredictorSet::NoRegion), shrink)?;
        out.insert(g.clone(), cur.last[idx[0]] + z);
    }
    Ok(out)
}

/// Constrained model over `grouping.constrained`; `national_target` is the
/// national estimate minus the excluded states' estimates, and the excluded
/// states receive `excluded_estimates`.
pub fn argox_nat_constrained(
    input: &SecondStepInput<'_>,
    grouping: &StateGrouping,
    national_target: f64,
    excluded_estimates: &BTreeMap<GeoId, f64>,
    window: usize,
    shrink: &Shrinkage,
) -> Result<BTreeMap<GeoId, f64>> {
    input.check(window)?;
    let cur = input.current;
    let idx = cur.indices(&grouping.constrained)?;
    let cov = input.cov(&idx, PredictorSet::Four, window)?;
    let last: Vec<f64> = idx.iter().map(|&i| cur.last[i]).collect();
    let sol = blp_nat_constrained(
        &cov,
        &cur.predictors(&idx, PredictorSet::Four),
        &last,
        national_target,
        shrink,
    )?;
    let mut out = BTreeMap::new();
    for (k, &i) in idx.iter().enumerate() {
        out.insert(cur.states[i].clone(), cur.last[i] + sol.z_hat[k]);
    }
    for g in &grouping.excluded {
        let v = excluded_estimates
            .get(g)
            .ok_or_else(|| ArgoxError::Dimension(format!("no estimate for excluded state {g}")))?;
        out.insert(g.clone(), *v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(seed: u64, n: usize, dz: usize, dw: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dw).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let z = w
            .iter()
            .map(|wi| {
                (0..dz)
                    .map(|j| 0.7 * wi[j % dw] - 0.2 * wi[(j + 1) % dw] + rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        (z, w)
    }

    #[test]
    fn default_grouping_shape() {
        let g = StateGrouping::default();
        assert_eq!(g.joint.len(), 45);
        assert_eq!(g.alone.len(), 6);
        assert_eq!(g.constrained.len(), 49);
        assert!(!g.constrained.iter().any(|s| s.code() == "HI" || s.code() == "VT"));
        for s in &g.alone {
            assert!(!g.joint.contains(s));
        }
    }

    #[test]
    fn covariance_is_symmetric_and_recomputable() {
        let (z, w) = random_samples(1, 30, 3, 12);
        let a = CovStats::from_samples(&z, &w).unwrap();
        let b = CovStats::from_samples(&z, &w).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sigma_ww, a.sigma_ww.transpose());
        assert_eq!(a.window, 30);
    }

    #[test]
    fn centered_predictor_returns_mean_increment() {
        let (z, w) = random_samples(2, 30, 3, 12);
        let cov = CovStats::from_samples(&z, &w).unwrap();
        let mu_w: Vec<f64> = cov.mu_w.iter().copied().collect();
        let zhat = blp_joint(&cov, &mu_w, &Shrinkage::default()).unwrap();
        assert_eq!(zhat, cov.mu_z);
    }

    #[test]
    fn uncorrelated_predictors_carry_no_signal() {
        let (z, w) = random_samples(3, 30, 2, 4);
        let mut cov = CovStats::from_samples(&z, &w).unwrap();
        cov.sigma_zw.fill(0.0);
        let zhat = blp_joint(&cov, &[9.0, -3.0, 1.0, 4.0], &Shrinkage::default()).unwrap();
        assert_eq!(zhat, cov.mu_z);
    }

    #[test]
    fn no_shrinkage_is_textbook_blp() {
        let (z, w) = random_samples(4, 40, 3, 4);
        let cov = CovStats::from_samples(&z, &w).unwrap();
        let w_now = [1.0, -2.0, 0.5, 3.0];
        let got = blp_joint(&cov, &w_now, &Shrinkage::none()).unwrap();
        let inv = cov.sigma_ww.clone().try_inverse().unwrap();
        let want = &cov.mu_z + &cov.sigma_zw * inv * (DVector::from_column_slice(&w_now) - &cov.mu_w);
        assert!((got - want).amax() < 1e-10);
    }

    #[test]
    fn zero_variance_predictor_fails() {
        let (z, mut w) = random_samples(5, 30, 1, 3);
        for wi in &mut w {
            wi[1] = 4.0;
        }
        let cov = CovStats::from_samples(&z, &w).unwrap();
        assert!(matches!(
            blp_alone(&cov, &[0.0, 4.0, 1.0], &Shrinkage::default()),
            Err(ArgoxError::NumericalFailure(_))
        ));
    }

    #[test]
    fn constraint_holds_and_gradient_vanishes() {
        let (z, w) = random_samples(6, 30, 4, 16);
        let cov = CovStats::from_samples(&z, &w).unwrap();
        let w_now: Vec<f64> = (0..16).map(|k| (k as f64 * 0.7).sin() * 3.0).collect();
        let last = [10.0, 20.0, 30.0, 40.0];
        let sh = Shrinkage::default();
        let sol = blp_nat_constrained(&cov, &w_now, &last, 111.0, &sh).unwrap();
        let total: f64 = last.iter().sum::<f64>() + sol.z_hat.sum();
        assert!((total - 111.0).abs() < 1e-8 * 111.0);
        let grad = lagrangian_gradient(&cov, &sol, &w_now, &sh).unwrap();
        assert!(grad.amax() < 1e-8, "{}", grad.amax());
        // Ẑ = μ_Z + A·W̃ with the recovered A.
        let w_tilde = DVector::from_column_slice(&w_now) - &cov.mu_w;
        assert!((&cov.mu_z + &sol.a * w_tilde - &sol.z_hat).amax() < 1e-9);
    }

    #[test]
    fn inactive_constraint_reproduces_joint() {
        let (z, w) = random_samples(7, 30, 3, 12);
        let cov = CovStats::from_samples(&z, &w).unwrap();
        let w_now: Vec<f64> = (0..12).map(|k| k as f64 - 5.0).collect();
        let sh = Shrinkage::default();
        let free = blp_joint(&cov, &w_now, &sh).unwrap();
        let last = [1.0, 2.0, 3.0];
        let target = last.iter().sum::<f64>() + free.sum();
        let sol = blp_nat_constrained(&cov, &w_now, &last, target, &sh).unwrap();
        assert!(sol.lambda.abs() < 1e-10);
        assert!((sol.z_hat - free).amax() < 1e-10);
    }

    #[test]
    fn degenerate_constraint() {
        let (z, w) = random_samples(8, 30, 2, 4);
        let cov = CovStats::from_samples(&z, &w).unwrap();
        let mu_w: Vec<f64> = cov.mu_w.iter().copied().collect();
        let sh = Shrinkage::default();
        let err = blp_nat_constrained(&cov, &mu_w, &[0.0, 0.0], 1e6, &sh).unwrap_err();
        assert_eq!(err, ArgoxError::ConstraintDegenerate);
        let ok_target = cov.mu_z.sum();
        let sol = blp_nat_constrained(&cov, &mu_w, &[0.0, 0.0], ok_target, &sh).unwrap();
        assert_eq!(sol.z_hat, cov.mu_z);
    }

    #[test]
    fn multiple_correlation_examples() {
        let nation: Vec<f64> = (0..20).map(|t| (t as f64 / 3.0).sin() * 10.0 + 50.0).collect();
        let r = multiple_correlation(&nation, &[nation.clone()]).unwrap();
        assert!((r - 1.0).abs() < 1e-6);
        assert!(matches!(
            multiple_correlation(&nation[..5], &[nation[..5].to_vec()]),
            Err(ArgoxError::InsufficientHistory { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = multiple_correlation(&noise, &[nation.iter().cycle().take(200).copied().collect()]).unwrap();
        assert!(r.is_finite() && (0.0..=1.0).contains(&r));
    }

    #[test]
    fn multiple_correlation_single_predictor_is_abs_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + rng.random_range(-3.0..3.0)).collect();
        let r = multiple_correlation(&y, &[x.clone()]).unwrap();
        let p = stats::pearson(&x, &y).unwrap().abs();
        // The ridge term shrinks the projection by a factor 1/(1 + 1e-6).
        assert!((r - p).abs() < 1e-6);
    }

    #[test]
    fn alone_selection_keeps_islands() {
        let mut corr = BTreeMap::new();
        for (k, s) in geo::all_states().into_iter().enumerate() {
            corr.insert(s, 0.5 + k as f64 / 200.0);
        }
        let picked = select_alone_states(&corr, 4);
        let codes: Vec<&str> = picked.iter().map(|g| g.code()).collect();
        assert_eq!(codes.len(), 6);
        assert!(codes.contains(&"AK") && codes.contains(&"HI"));
        // Lowest non-island codes alphabetically: AL, AR, AZ, CA.
        for c in ["AL", "AR", "AZ", "CA"] {
            assert!(codes.contains(&c));
        }
    }
}
