//! Chain and estimate quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::PosteriorDraws;
use crate::simulation::Truth;
use crate::tensor::Tensor;

pub const SUMMARY_LAGS: [usize; 3] = [1, 5, 10];

/// Sample autocorrelation with the lag-0 denominator.
pub fn acf(series: &[f64], lags: &[usize]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Parameter("autocorrelation needs at least two values".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean).powi(2)).sum();
    if !(c0 > 0.0) {
        return Err(Error::Numerical("autocorrelation of a constant series is undefined".into()));
    }
    Ok(lags
        .iter()
        .map(|&h| {
            if h >= n {
                return 0.0;
            }
            let ch: f64 = (0..n - h).map(|t| (series[t] - mean) * (series[t + h] - mean)).sum();
            ch / c0
        })
        .collect())
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::Parameter(format!("quantile {q} of {} values", values.len())));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// At [`SUMMARY_LAGS`]; `None` for constant series.
    pub acf: Option<Vec<f64>>,
}

pub fn summarize_series(name: &str, series: &[f64]) -> Result<SeriesSummary> {
    if series.is_empty() {
        return Err(Error::Parameter(format!("series `{name}` is empty")));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sd = if series.len() > 1 { (series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(SeriesSummary {
        name: name.to_string(),
        mean,
        sd,
        q05: quantile(series, 0.05)?,
        q50: quantile(series, 0.5)?,
        q95: quantile(series, 0.95)?,
        acf: acf(series, &SUMMARY_LAGS).ok(),
    })
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared entrywise error.
pub fn mse_coeff(estimate: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same(estimate, truth)?;
    Ok(estimate.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / estimate.len() as f64)
}

/// Mean absolute entrywise error.
pub fn mae_coeff(estimate: &Tensor, truth: &Tensor) -> Result<f64> {
    check_same(estimate, truth)?;
    Ok(estimate.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / estimate.len() as f64)
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..k.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..k).rev().find(|&j| current[j] > current[i]).expect("pivot exists");
        current.swap(i, j);
        current[i + 1..].reverse();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateAccuracy {
    /// Mean of `(ŝ_t − s_t)²` over labels after alignment.
    pub mse: f64,
    pub hit_rate: f64,
    /// `permutation[estimated] = true label`.
    pub permutation: Vec<usize>,
}

/// Scores the MAP path of `smoothed` (`T × K`) against `true_path` under
/// the label permutation that maximizes the hit rate.
pub fn state_accuracy(smoothed: &[Vec<f64>], true_path: &[usize]) -> Result<StateAccuracy> {
    if smoothed.len() != true_path.len() || smoothed.is_empty() {
        return Err(Error::Dimension(format!("{} smoothed rows for a path of {}", smoothed.len(), true_path.len())));
    }
    let k = smoothed[0].len();
    if k == 0 || k > 8 || smoothed.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension(format!("state accuracy supports 1 to 8 regimes, got {k}")));
    }
    let kt = true_path.iter().max().map_or(0, |&m| m + 1);
    if kt > k {
        return Err(Error::Index(format!("true label {} with K = {k}", kt - 1)));
    }
    let map: Vec<usize> = smoothed
        .iter()
        .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b }).0)
        .collect();
    let t = true_path.len() as f64;
    let mut best: Option<StateAccuracy> = None;
    for perm in permutations(k) {
        let hits = map.iter().zip(true_path).filter(|(m, s)| perm[**m] == **s).count() as f64;
        if best.as_ref().is_none_or(|b| hits / t > b.hit_rate) {
            let mse = map.iter().zip(true_path).map(|(m, s)| (perm[*m] as f64 - *s as f64).powi(2)).sum::<f64>() / t;
            best = Some(StateAccuracy { mse, hit_rate: hits / t, permutation: perm });
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Gaussian-approximation HPD ellipse over paired draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpdEllipse {
    pub level: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// Squared Mahalanobis radius, the χ²₂ quantile at `level`.
    pub radius_sq: f64,
    /// Whether the ellipse meets the line `x = y`.
    pub intersects_diagonal: bool,
}

impl HpdEllipse {
    /// `n` boundary points, for plotting.
    pub fn boundary(&self, n: usize) -> Vec<[f64; 2]> {
        let [[a, b], [_, d]] = self.cov;
        // Cholesky of the 2×2 covariance; degenerate directions collapse.
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        let r = self.radius_sq.sqrt();
        (0..n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let (u, v) = (r * th.cos(), r * th.sin());
                [self.mean[0] + l11 * u, self.mean[1] + l21 * u + l22 * v]
            })
            .collect()
    }
}

pub fn hpd_region(pairs: &[(f64, f64)], level: f64) -> Result<HpdEllipse> {
    if pairs.is_empty() {
        return Err(Error::Parameter("HPD region needs at least one draw".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("HPD level {level} outside (0, 1)")));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let denom = if pairs.len() > 1 { n - 1.0 } else { 1.0 };
    let sxx = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / denom;
    let syy = pairs.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / denom;
    let sxy = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / denom;
    let radius_sq = -2.0 * (1.0 - level).ln();
    // Distance from the center to x = y along the normal (1, −1)/√2,
    // against the ellipse's half-width in that direction.
    let offset = (mx - my) / std::f64::consts::SQRT_2;
    let spread = ((sxx + syy - 2.0 * sxy) / 2.0).max(0.0);
    let intersects_diagonal = offset.abs() <= (radius_sq * spread).sqrt();
    Ok(HpdEllipse { level, mean: [mx, my], cov: [[sxx, sxy], [sxy, syy]], radius_sq, intersects_diagonal })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub equation: usize,
    pub regime: usize,
    pub mean: Tensor,
    /// Against the aligned true coefficient, when a truth is supplied.
    pub mse: Option<f64>,
    pub mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub draws: usize,
    pub scalars: Vec<SeriesSummary>,
    pub coefficients: Vec<CoefficientSummary>,
    pub states: Option<StateAccuracy>,
    /// Mean over regimes of the coefficient MSE, when a truth is supplied.
    pub coefficient_mse: Option<f64>,
    pub zeta_acceptance: f64,
    pub final_outcome_mse: Option<f64>,
}

/// Posterior summaries of a chain, scored against `truth` when given.
/// Equation 0 is compared with the truth's coefficients.
pub fn summarize(draws: &PosteriorDraws, truth: Option<&Truth>) -> Result<ChainSummary> {
    if draws.is_empty() {
        return Err(Error::Parameter("no stored draws".into()));
    }
    let mut scalars = Vec::new();
    for l in 0..draws.n {
        for k in 0..draws.k {
            let mu: Vec<f64> = draws.draws.iter().map(|d| d.mu[l][k]).collect();
            scalars.push(summarize_series(&format!("mu[{l}][{k}]"), &mu)?);
            let nv: Vec<f64> = draws.draws.iter().map(|d| d.noise_var[l][k]).collect();
            scalars.push(summarize_series(&format!("sigma2[{l}][{k}]"), &nv)?);
            let tau: Vec<f64> = draws.draws.iter().map(|d| d.tau[l][k]).collect();
            scalars.push(summarize_series(&format!("tau[{l}][{k}]"), &tau)?);
        }
    }
    for i in 0..draws.k {
        for j in 0..draws.k {
            if draws.k > 1 {
                let p: Vec<f64> = draws.draws.iter().map(|d| d.trans[i][j]).collect();
                scalars.push(summarize_series(&format!("trans[{i}][{j}]"), &p)?);
            }
        }
    }

    let states = match truth {
        Some(tr) if draws.k > 1 => Some(state_accuracy(&draws.smoothed_mean, &tr.path)?),
        _ => None,
    };
    let perm: Vec<usize> = states.as_ref().map_or_else(|| (0..draws.k).collect(), |s| s.permutation.clone());
    let means = draws.mean_coefficients();
    let mut coefficients = Vec::new();
    let mut mses = Vec::new();
    for (l, row) in means.into_iter().enumerate() {
        for (k, mean) in row.into_iter().enumerate() {
            let target = truth.filter(|_| l == 0).and_then(|tr| tr.coefficients.get(perm[k]));
            let (mse, mae) = match target {
                Some(t) => (Some(mse_coeff(&mean, t)?), Some(mae_coeff(&mean, t)?)),
                None => (None, None),
            };
            if let Some(m) = mse {
                mses.push(m);
            }
            coefficients.push(CoefficientSummary { equation: l, regime: k, mean, mse, mae });
        }
    }
    let coefficient_mse = (!mses.is_empty()).then(|| mses.iter().sum::<f64>() / mses.len() as f64);
    Ok(ChainSummary {
        draws: draws.len(),
        scalars,
        coefficients,
        states,
        coefficient_mse,
        zeta_acceptance: draws.zeta_acceptance,
        final_outcome_mse: draws.outcome_mse.last().copied(),
    })
}
