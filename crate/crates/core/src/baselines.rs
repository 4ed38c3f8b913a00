//! OLS and LASSO competitors on vectorized covariates, plus the
//! in-sample and h-step forecast scoring harness shared with MSMETR.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{cholesky_jittered, log_normal_pdf};
use crate::error::{Error, Result};
use crate::model::{stationary_distribution, Dataset};
use crate::sampler::{hamilton_filter, PosteriorDraws};
use crate::tensor::{inner_product, Tensor};

pub const LASSO_GAP_TOL: f64 = 1e-8;
pub const LASSO_MAX_SWEEPS: usize = 100_000;
pub const CV_FOLDS: usize = 5;
pub const CV_GRID: usize = 50;
/// Smallest grid penalty relative to `λ_max`.
pub const CV_RATIO: f64 = 1e-3;

fn check_design(y: &[f64], x: &DMatrix<f64>) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} responses for a design with {} rows", y.len(), x.nrows())));
    }
    if y.is_empty() || x.ncols() == 0 {
        return Err(Error::Dimension("empty design".into()));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("design contains non-finite values".into()));
    }
    Ok(())
}

/// Least squares through the normal equations. Rank-deficient designs fall
/// back to a jittered factorization.
pub fn fit_ols(y: &[f64], x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_design(y, x)?;
    let gram = x.tr_mul(x);
    let rhs = x.tr_mul(&DVector::from_column_slice(y));
    let chol = cholesky_jittered(&gram)?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn soft(z: f64, lambda: f64) -> f64 {
    z.signum() * (z.abs() - lambda).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    pub sweeps: usize,
    pub duality_gap: f64,
    /// Largest violation of the stationarity conditions.
    pub kkt_violation: f64,
}

/// Covariance-form coordinate descent state for one design.
struct GramProblem {
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    yty: f64,
}

impl GramProblem {
    fn new(y: &[f64], x: &DMatrix<f64>) -> Self {
        let yv = DVector::from_column_slice(y);
        GramProblem { gram: x.tr_mul(x), xty: x.tr_mul(&yv).iter().copied().collect(), yty: yv.norm_squared() }
    }

    fn p(&self) -> usize {
        self.xty.len()
    }

    /// `½‖y−Xβ‖²` and `y'r` from Gram quantities.
    fn residual_terms(&self, beta: &[f64], grad: &[f64]) -> (f64, f64) {
        // grad = X'y − Gβ, so β'Gβ = β'X'y − β'grad.
        let bc: f64 = beta.iter().zip(&self.xty).map(|(b, c)| b * c).sum();
        let bg: f64 = beta.iter().zip(grad).map(|(b, g)| b * g).sum();
        let rr = (self.yty - 2.0 * bc + (bc - bg)).max(0.0);
        (0.5 * rr, self.yty - bc)
    }

    fn diagnostics(&self, beta: &[f64], grad: &[f64], lambda: f64) -> (f64, f64) {
        let kkt = beta
            .iter()
            .zip(grad)
            .map(|(&b, &g)| if b != 0.0 { (g - lambda * b.signum()).abs() } else { (g.abs() - lambda).max(0.0) })
            .fold(0.0, f64::max);
        let (half_rr, ytr) = self.residual_terms(beta, grad);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let s = if gmax <= lambda { 1.0 } else { lambda / gmax };
        // Dual objective at θ = s·r: ½‖y‖² − ½‖y − θ‖².
        let dual = s * ytr - s * s * half_rr;
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        let gap = (half_rr + lambda * l1 - dual).max(0.0);
        (gap, kkt)
    }

    fn solve(&self, lambda: f64, warm: Option<&[f64]>) -> LassoFit {
        let p = self.p();
        let mut beta = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
        let mut grad: Vec<f64> = (0..p)
            .map(|j| self.xty[j] - (0..p).map(|i| self.gram[(j, i)] * beta[i]).sum::<f64>())
            .collect();
        let scale = self.xty.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        let kkt_tol = 1e-10 * scale;
        let mut sweeps = 0;
        loop {
            for j in 0..p {
                let njj = self.gram[(j, j)];
                if njj <= 0.0 {
                    beta[j] = 0.0;
                    continue;
                }
                let new = soft(grad[j] + njj * beta[j], lambda) / njj;
                let delta = new - beta[j];
                if delta != 0.0 {
                    beta[j] = new;
                    for (i, g) in grad.iter_mut().enumerate() {
                        *g -= self.gram[(i, j)] * delta;
                    }
                }
            }
            sweeps += 1;
            let (gap, kkt) = self.diagnostics(&beta, &grad, lambda);
            // The gap certificate is vacuous at λ = 0, where only the
            // stationarity conditions can certify optimality.
            let gap_ok = gap <= LASSO_GAP_TOL || lambda == 0.0;
            if (gap_ok && kkt <= kkt_tol) || sweeps >= LASSO_MAX_SWEEPS {
                return LassoFit { coef: beta, sweeps, duality_gap: gap, kkt_violation: kkt };
            }
        }
    }
}

/// Minimizer of `½‖y − Xβ‖² + λ‖β‖₁` on the design as given.
pub fn fit_lasso(y: &[f64], x: &DMatrix<f64>, lambda: f64) -> Result<LassoFit> {
    check_design(y, x)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("LASSO penalty {lambda}")));
    }
    Ok(GramProblem::new(y, x).solve(lambda, None))
}

/// Affine predictor `a + x'b` on the original covariate scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// Penalty on the standardized scale, for LASSO fits.
    pub lambda: Option<f64>,
}

impl LinearFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coef.len() {
            return Err(Error::Dimension(format!("{} columns for {} coefficients", x.ncols(), self.coef.len())));
        }
        Ok((0..x.nrows())
            .map(|t| self.intercept + (0..x.ncols()).map(|j| x[(t, j)] * self.coef[j]).sum::<f64>())
            .collect())
    }
}

/// Centered and unit-variance columns with the maps back.
struct Standardized {
    x: DMatrix<f64>,
    y: Vec<f64>,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
}

impl Standardized {
    fn new(y: &[f64], x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let x_mean: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
        let x_sd: Vec<f64> = (0..x.ncols())
            .map(|j| (x.column(j).iter().map(|v| (v - x_mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let xs = DMatrix::from_fn(x.nrows(), x.ncols(), |t, j| if x_sd[j] > 0.0 { (x[(t, j)] - x_mean[j]) / x_sd[j] } else { 0.0 });
        let y_mean = y.iter().sum::<f64>() / n;
        Standardized { x: xs, y: y.iter().map(|v| v - y_mean).collect(), x_mean, x_sd, y_mean }
    }

    fn unscale(&self, beta: &[f64], lambda: Option<f64>) -> LinearFit {
        let coef: Vec<f64> = beta.iter().zip(&self.x_sd).map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 }).collect();
        let intercept = self.y_mean - coef.iter().zip(&self.x_mean).map(|(c, m)| c * m).sum::<f64>();
        LinearFit { intercept, coef, lambda }
    }

    fn lambda_max(&self) -> f64 {
        self.x.tr_mul(&DVector::from_column_slice(&self.y)).amax()
    }
}

/// OLS with an intercept.
pub fn fit_ols_intercept(y: &[f64], x: &DMatrix<f64>) -> Result<LinearFit> {
    check_design(y, x)?;
    let st = Standardized::new(y, x);
    let beta = fit_ols(&st.y, &st.x)?;
    Ok(st.unscale(&beta, None))
}

fn lasso_path(st: &Standardized, grid: &[f64]) -> Vec<LinearFit> {
    let problem = GramProblem::new(&st.y, &st.x);
    let mut warm: Option<Vec<f64>> = None;
    grid.iter()
        .map(|&lam| {
            let fit = problem.solve(lam, warm.as_deref());
            warm = Some(fit.coef.clone());
            st.unscale(&fit.coef, Some(lam))
        })
        .collect()
}

/// Decreasing log-spaced penalties from `λ_max` to `CV_RATIO·λ_max`.
pub fn lambda_grid(lambda_max: f64, n: usize) -> Vec<f64> {
    if n == 1 || lambda_max <= 0.0 {
        return vec![lambda_max.max(0.0)];
    }
    (0..n)
        .map(|i| lambda_max * CV_RATIO.powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoCv {
    pub fit: LinearFit,
    pub grid: Vec<f64>,
    pub cv_mse: Vec<f64>,
}

/// LASSO with an intercept on standardized columns. With no penalty
/// given, it is chosen by contiguous-fold cross-validation.
pub fn fit_lasso_standardized(y: &[f64], x: &DMatrix<f64>, lambda: Option<f64>) -> Result<LassoCv> {
    check_design(y, x)?;
    let st = Standardized::new(y, x);
    if let Some(lam) = lambda {
        if !(lam >= 0.0 && lam.is_finite()) {
            return Err(Error::Parameter(format!("LASSO penalty {lam}")));
        }
        let fit = lasso_path(&st, &[lam]).remove(0);
        return Ok(LassoCv { fit, grid: vec![lam], cv_mse: vec![] });
    }
    let t = y.len();
    if t < 2 * CV_FOLDS {
        return Err(Error::Dimension(format!("{t} observations for {CV_FOLDS}-fold cross-validation")));
    }
    let grid = lambda_grid(st.lambda_max(), CV_GRID);
    let mut sse = vec![0.0; grid.len()];
    for f in 0..CV_FOLDS {
        let (lo, hi) = (f * t / CV_FOLDS, (f + 1) * t / CV_FOLDS);
        let train: Vec<usize> = (0..t).filter(|i| *i < lo || *i >= hi).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = x.rows(lo, hi - lo).into_owned();
        for (g, fit) in lasso_path(&Standardized::new(&yt, &xt), &grid).iter().enumerate() {
            let pred = fit.predict(&xv)?;
            sse[g] += pred.iter().zip(&y[lo..hi]).map(|(p, o)| (p - o).powi(2)).sum::<f64>();
        }
    }
    let cv_mse: Vec<f64> = sse.iter().map(|s| s / t as f64).collect();
    let best = cv_mse.iter().enumerate().fold(0, |b, (i, v)| if *v < cv_mse[b] { i } else { b });
    // Warm-start down the grid to the chosen penalty.
    let fit = lasso_path(&st, &grid[..=best]).pop().expect("non-empty path");
    Ok(LassoCv { fit, grid, cv_mse })
}

/// Rows `range` of equation `l` as a design with vectorized covariates.
pub fn design(data: &Dataset, l: usize, range: std::ops::Range<usize>) -> Result<DMatrix<f64>> {
    if l >= data.n() || range.end > data.t() || range.start >= range.end {
        return Err(Error::Index(format!("equation {l}, rows {range:?} of {}", data.t())));
    }
    let xs = data.x(l);
    let p = xs[0].len();
    Ok(DMatrix::from_fn(range.len(), p, |i, j| xs[range.start + i].data()[j]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

pub fn metrics(pred: &[f64], obs: &[f64]) -> Result<Metrics> {
    if pred.len() != obs.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} predictions for {} observations", pred.len(), obs.len())));
    }
    let n = pred.len() as f64;
    Ok(Metrics {
        mse: pred.iter().zip(obs).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / n,
        mae: pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub in_sample: Metrics,
    pub out_of_sample: Vec<HorizonMetrics>,
    pub note: Option<String>,
}

/// Posterior-mean plug-in parameters of a fitted MSMETR chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointModel {
    /// `[ℓ][k]`
    pub mu: Vec<Vec<f64>>,
    pub coefficients: Vec<Vec<Tensor>>,
    pub noise_var: Vec<Vec<f64>>,
    pub trans: Vec<Vec<f64>>,
}

impl PointModel {
    pub fn from_draws(draws: &PosteriorDraws) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Parameter("no stored draws".into()));
        }
        Ok(PointModel {
            mu: draws.mean_mu(),
            coefficients: draws.mean_coefficients(),
            noise_var: draws.mean_noise_var(),
            trans: draws.mean_trans(),
        })
    }

    pub fn k(&self) -> usize {
        self.trans.len()
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if self.mu.len() != data.n() {
            return Err(Error::Dimension(format!("model has {} equations, data {}", self.mu.len(), data.n())));
        }
        for l in 0..data.n() {
            if self.coefficients[l].iter().any(|c| c.shape() != data.shape(l)) {
                return Err(Error::Dimension(format!("coefficient shape of equation {l} differs from the data")));
            }
        }
        Ok(())
    }

    /// `[t][ℓ][k]` regime-conditional means.
    fn regime_means(&self, data: &Dataset) -> Result<Vec<Vec<Vec<f64>>>> {
        (0..data.t())
            .map(|t| {
                (0..data.n())
                    .map(|l| {
                        (0..self.k())
                            .map(|k| Ok(self.mu[l][k] + inner_product(&self.coefficients[l][k], &data.x(l)[t])?))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Predictive means `[t][ℓ]` at horizon `h`: the filtered regime
    /// distribution at `t − h` propagated `h` steps, with observed
    /// covariates at `t`. Times before `h` use the stationary distribution.
    pub fn forecast(&self, data: &Dataset, h: usize) -> Result<Vec<Vec<f64>>> {
        self.check(data)?;
        let means = self.regime_means(data)?;
        let k = self.k();
        let log_em: Vec<Vec<f64>> = (0..data.t())
            .map(|t| {
                (0..k)
                    .map(|s| (0..data.n()).map(|l| log_normal_pdf(data.y(l)[t], means[t][l][s], self.noise_var[l][s])).sum())
                    .collect()
            })
            .collect();
        let init = stationary_distribution(&self.trans);
        let (filtered, _) = hamilton_filter(&log_em, &self.trans, &init)?;
        let step = |p: &[f64]| -> Vec<f64> { (0..k).map(|j| (0..k).map(|i| p[i] * self.trans[i][j]).sum()).collect() };
        Ok((0..data.t())
            .map(|t| {
                let mut w = if t >= h { filtered[t - h].clone() } else { init.clone() };
                for _ in 0..h {
                    w = step(&w);
                }
                (0..data.n()).map(|l| (0..k).map(|s| w[s] * means[t][l][s]).sum()).collect()
            })
            .collect())
    }
}

fn pooled(pred: &[Vec<f64>], data: &Dataset, range: std::ops::Range<usize>) -> Result<Metrics> {
    let mut p = Vec::new();
    let mut o = Vec::new();
    for t in range {
        for l in 0..data.n() {
            p.push(pred[t][l]);
            o.push(data.y(l)[t]);
        }
    }
    metrics(&p, &o)
}

fn check_split(data: &Dataset, train: usize) -> Result<()> {
    if train == 0 || train >= data.t() {
        return Err(Error::Parameter(format!("training size {train} for {} observations", data.t())));
    }
    Ok(())
}

/// Scores a plug-in MSMETR model fitted on the first `train` rows: in
/// sample at `h = 0`, out of sample on `train..T` per horizon.
pub fn evaluate_msmetr(method: &str, model: &PointModel, data: &Dataset, train: usize, horizons: &[usize]) -> Result<FitReport> {
    check_split(data, train)?;
    let fitted = model.forecast(data, 0)?;
    let in_sample = pooled(&fitted, data, 0..train)?;
    let out_of_sample = horizons
        .iter()
        .map(|&h| {
            let m = pooled(&model.forecast(data, h)?, data, train..data.t())?;
            Ok(HorizonMetrics { horizon: h, mse: m.mse, mae: m.mae })
        })
        .collect::<Result<_>>()?;
    Ok(FitReport { method: method.to_string(), in_sample, out_of_sample, note: None })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearMethod {
    Ols,
    Lasso,
}

impl LinearMethod {
    pub fn name(self) -> &'static str {
        match self {
            LinearMethod::Ols => "OLS",
            LinearMethod::Lasso => "LASSO",
        }
    }
}

/// Fits one equation-wise linear baseline on the first `train` rows and
/// scores it. Future covariates are observed, so every horizon shares the
/// same plug-in predictions.
pub fn evaluate_linear(
    method: LinearMethod,
    data: &Dataset,
    train: usize,
    horizons: &[usize],
    lambda: Option<f64>,
) -> Result<FitReport> {
    check_split(data, train)?;
    let mut pred = vec![vec![0.0; data.n()]; data.t()];
    let mut notes = Vec::new();
    for l in 0..data.n() {
        let x_train = design(data, l, 0..train)?;
        let y_train = &data.y(l)[..train];
        let fit = match method {
            LinearMethod::Ols => fit_ols_intercept(y_train, &x_train)?,
            LinearMethod::Lasso => {
                let cv = fit_lasso_standardized(y_train, &x_train, lambda)?;
                let how = if lambda.is_some() { "fixed" } else { "5-fold CV" };
                notes.push(format!("eq{l} lambda={:.6e} ({how})", cv.fit.lambda.unwrap_or(0.0)));
                cv.fit
            }
        };
        for (t, p) in fit.predict(&design(data, l, 0..data.t())?)?.into_iter().enumerate() {
            pred[t][l] = p;
        }
    }
    let in_sample = pooled(&pred, data, 0..train)?;
    let oos = pooled(&pred, data, train..data.t())?;
    Ok(FitReport {
        method: method.name().to_string(),
        in_sample,
        out_of_sample: horizons.iter().map(|&h| HorizonMetrics { horizon: h, mse: oos.mse, mae: oos.mae }).collect(),
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

/// One row per method; MSE and MAE in sample, then per horizon.
pub fn reports_csv(reports: &[FitReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::Parameter("no reports".into()));
    };
    let horizons: Vec<usize> = first.out_of_sample.iter().map(|h| h.horizon).collect();
    let mut out = String::from("method,in_mse,in_mae");
    for h in &horizons {
        out.push_str(&format!(",h{h}_mse,h{h}_mae"));
    }
    out.push('\n');
    for r in reports {
        if r.out_of_sample.iter().map(|h| h.horizon).ne(horizons.iter().copied()) {
            return Err(Error::Dimension(format!("report `{}` uses different horizons", r.method)));
        }
        out.push_str(&format!("{},{:.17e},{:.17e}", r.method, r.in_sample.mse, r.in_sample.mae));
        for h in &r.out_of_sample {
            out.push_str(&format!(",{:.17e},{:.17e}", h.mse, h.mae));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{rng_stream, std_normal};
    use proptest::prelude::*;

    fn random_design(t: usize, p: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
        let mut rng = rng_stream(seed, 0);
        let x = DMatrix::from_fn(t, p, |_, _| std_normal(&mut rng));
        let y = (0..t).map(|_| std_normal(&mut rng)).collect();
        (y, x)
    }

    #[test]
    fn ols_examples() {
        let y = vec![1.5, -2.0, 0.25];
        let b = fit_ols(&y, &DMatrix::identity(3, 3)).unwrap();
        for (a, e) in b.iter().zip(&y) {
            assert!((a - e).abs() < 1e-12);
        }
        let (_, x) = random_design(30, 4, 1);
        let truth = DVector::from_vec(vec![1.0, -0.5, 2.0, 0.0]);
        let y: Vec<f64> = (&x * &truth).iter().copied().collect();
        let b = fit_ols(&y, &x).unwrap();
        let fitted = &x * DVector::from_vec(b);
        assert!(fitted.iter().zip(&y).all(|(f, o)| (f - o).abs() < 1e-10));
        assert!(fit_ols(&y[..5], &x).is_err());
    }

    #[test]
    fn ols_matches_svd_solve() {
        let (y, x) = random_design(50, 6, 2);
        let b = fit_ols(&y, &x).unwrap();
        let svd = x.clone().svd(true, true);
        let oracle = svd.solve(&DVector::from_column_slice(&y), 1e-12).unwrap();
        for (a, e) in b.iter().zip(oracle.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn lasso_zero_penalty_is_ols() {
        let (y, x) = random_design(100, 10, 3);
        let ols = fit_ols(&y, &x).unwrap();
        let lasso = fit_lasso(&y, &x, 0.0).unwrap();
        for (a, b) in lasso.coef.iter().zip(&ols) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn lasso_kill_condition() {
        let (y, x) = random_design(40, 8, 4);
        let lmax = x.tr_mul(&DVector::from_column_slice(&y)).amax();
        assert!(fit_lasso(&y, &x, lmax).unwrap().coef.iter().all(|b| *b == 0.0));
        assert!(fit_lasso(&y, &x, 0.9 * lmax).unwrap().coef.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn lasso_orthonormal_design_soft_thresholds() {
        let (y, x) = random_design(30, 5, 5);
        let q = x.qr().q();
        let z = q.tr_mul(&DVector::from_column_slice(&y));
        for lam in [0.0, 0.1, 0.5, 1.0] {
            let fit = fit_lasso(&y, &q, lam).unwrap();
            for (b, zj) in fit.coef.iter().zip(z.iter()) {
                assert!((b - soft(*zj, lam)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn standardized_lasso_recovers_sparse_signal() {
        let mut rng = rng_stream(6, 0);
        let (t, p) = (200, 20);
        let x = DMatrix::from_fn(t, p, |_, j| 3.0 * std_normal(&mut rng) + j as f64);
        let y: Vec<f64> = (0..t).map(|i| 4.0 + 2.0 * x[(i, 0)] - 1.0 * x[(i, 3)] + 0.5 * std_normal(&mut rng)).collect();
        let cv = fit_lasso_standardized(&y, &x, None).unwrap();
        assert_eq!(cv.grid.len(), CV_GRID);
        assert!(cv.grid.contains(&cv.fit.lambda.unwrap()));
        assert!((cv.fit.coef[0] - 2.0).abs() < 0.05);
        assert!((cv.fit.coef[3] + 1.0).abs() < 0.05);
        assert!((cv.fit.intercept - 4.0).abs() < 1.0);
        let ols = fit_ols_intercept(&y, &x).unwrap();
        let zero = fit_lasso_standardized(&y, &x, Some(0.0)).unwrap().fit;
        for (a, b) in zero.coef.iter().zip(&ols.coef) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((zero.intercept - ols.intercept).abs() < 1e-5);
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let (y, mut x) = random_design(60, 4, 7);
        x.column_mut(2).fill(5.0);
        let fit = fit_lasso_standardized(&y, &x, Some(0.5)).unwrap().fit;
        assert_eq!(fit.coef[2], 0.0);
    }

    #[test]
    fn grid_endpoints() {
        let g = lambda_grid(10.0, CV_GRID);
        assert_eq!(g[0], 10.0);
        assert!((g[CV_GRID - 1] - 0.01).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn metrics_and_csv() {
        let m = metrics(&[1.0, 2.0], &[0.0, 4.0]).unwrap();
        assert_eq!((m.mse, m.mae), (2.5, 1.5));
        let r = FitReport {
            method: "OLS".into(),
            in_sample: m,
            out_of_sample: vec![HorizonMetrics { horizon: 1, mse: 1.0, mae: 1.0 }, HorizonMetrics { horizon: 5, mse: 2.0, mae: 1.0 }],
            note: None,
        };
        let csv = reports_csv(&[r.clone(), r]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,in_mse,in_mae,h1_mse,h1_mae,h5_mse,h5_mae");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 7);
    }

    fn two_regime_data() -> (Dataset, PointModel, Vec<usize>) {
        let mut rng = rng_stream(8, 0);
        let path: Vec<usize> = (0..60).map(|t| (t / 15) % 2).collect();
        let coefs = vec![Tensor::from_fn(&[2, 2], |i| (i[0] == i[1]) as u8 as f64), Tensor::filled(&[2, 2], -1.0)];
        let xs: Vec<Tensor> = (0..60).map(|_| Tensor::from_fn(&[2, 2], |_| std_normal(&mut rng))).collect();
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|t| vec![5.0 * path[t] as f64 + inner_product(&coefs[path[t]], &xs[t]).unwrap() + 0.1 * std_normal(&mut rng)])
            .collect();
        let model = PointModel {
            mu: vec![vec![0.0, 5.0]],
            coefficients: vec![coefs],
            noise_var: vec![vec![0.01, 0.01]],
            trans: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        };
        (Dataset::shared(&rows, xs).unwrap(), model, path)
    }

    #[test]
    fn zero_horizon_tracks_the_active_regime() {
        let (data, model, _) = two_regime_data();
        let fitted = model.forecast(&data, 0).unwrap();
        let m = pooled(&fitted, &data, 0..60).unwrap();
        assert!(m.mse < 0.05, "{m:?}");
        let report = evaluate_msmetr("MSMETR", &model, &data, 45, &[1, 5]).unwrap();
        assert!((report.in_sample.mse - pooled(&fitted, &data, 0..45).unwrap().mse).abs() < 1e-15);
        // Predictive weights flatten with the horizon.
        assert!(report.out_of_sample[0].mse < report.out_of_sample[1].mse);
        assert!(report.out_of_sample.iter().all(|h| h.mse >= 0.0 && h.mae >= 0.0));
    }

    #[test]
    fn single_regime_ignores_the_horizon() {
        let (data, mut model, _) = two_regime_data();
        model.mu = vec![vec![1.0]];
        model.coefficients = vec![vec![model.coefficients[0][0].clone()]];
        model.noise_var = vec![vec![1.0]];
        model.trans = vec![vec![1.0]];
        let f0 = model.forecast(&data, 0).unwrap();
        assert_eq!(f0, model.forecast(&data, 1).unwrap());
        assert_eq!(f0, model.forecast(&data, 7).unwrap());
    }

    #[test]
    fn linear_reports_share_the_window() {
        let (data, _, _) = two_regime_data();
        let ols = evaluate_linear(LinearMethod::Ols, &data, 45, &[1, 5], None).unwrap();
        let lasso = evaluate_linear(LinearMethod::Lasso, &data, 45, &[1, 5], None).unwrap();
        assert_eq!(ols.out_of_sample[0].mse, ols.out_of_sample[1].mse);
        assert!(lasso.note.unwrap().contains("5-fold CV"));
        assert!(evaluate_linear(LinearMethod::Ols, &data, 60, &[1], None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn lasso_kkt_holds(seed in 0u64..1000, frac in 0.01f64..1.0, p in 2usize..12) {
            let (y, x) = random_design(3 * p + 5, p, seed);
            let lmax = x.tr_mul(&DVector::from_column_slice(&y)).amax();
            let lam = frac * lmax;
            let fit = fit_lasso(&y, &x, lam).unwrap();
            let r = DVector::from_column_slice(&y) - &x * DVector::from_column_slice(&fit.coef);
            let g = x.tr_mul(&r);
            for (j, b) in fit.coef.iter().enumerate() {
                if *b == 0.0 {
                    prop_assert!(g[j].abs() <= lam + 1e-6);
                } else {
                    prop_assert!((g[j] - lam * b.signum()).abs() <= 1e-6);
                }
            }
            prop_assert!(fit.duality_gap <= LASSO_GAP_TOL);
        }
    }
}
