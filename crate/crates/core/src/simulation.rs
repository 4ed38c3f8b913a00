//! Synthetic data: structured binary coefficient matrices, IID or AR(1)
//! covariates, and single-regime or Markov-switching responses.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{rng_stream, sample_categorical, std_normal};
use crate::error::{Error, Result};
use crate::model::{stationary_distribution, Dataset};
use crate::tensor::{dot, Tensor};

/// Standard deviation of the perturbation added to noisy patterns.
pub const PATTERN_NOISE_SD: f64 = 0.1;
/// AR(1) coefficient used by the preset settings.
pub const DEFAULT_AR: f64 = 0.5;
/// Diagonal of the preset two-regime transition matrix.
pub const DEFAULT_PERSISTENCE: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Diagonal,
    AntiDiagonal,
    Cross,
    Circle,
    CorePeriphery,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Diagonal,
        Pattern::AntiDiagonal,
        Pattern::Cross,
        Pattern::Circle,
        Pattern::CorePeriphery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Diagonal => "diagonal",
            Pattern::AntiDiagonal => "anti-diagonal",
            Pattern::Cross => "cross",
            Pattern::Circle => "circle",
            Pattern::CorePeriphery => "core-periphery",
        }
    }

    fn needs_square(self) -> bool {
        !matches!(self, Pattern::Diagonal)
    }

    fn cell(self, i: usize, j: usize, p: usize) -> bool {
        match self {
            Pattern::Diagonal => i == j,
            Pattern::AntiDiagonal => i + j + 1 == p,
            Pattern::Cross => i == j || i + j + 1 == p,
            Pattern::Circle => {
                let c = (p as f64 - 1.0) / 2.0;
                let r = p as f64 / 3.0;
                let dist = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
                (dist - r).abs() <= std::f64::consts::FRAC_1_SQRT_2
            }
            Pattern::CorePeriphery => {
                let k = (p / 4).max(1);
                i == j || (i < k && j < k)
            }
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown pattern `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateKind {
    Iid,
    Ar1(f64),
}

impl fmt::Display for CovariateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateKind::Iid => f.write_str("iid"),
            CovariateKind::Ar1(rho) => write!(f, "ar1({rho})"),
        }
    }
}

impl FromStr for CovariateKind {
    type Err = Error;

    /// `iid`, `ar1` (default coefficient) or `ar1(ρ)`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(CovariateKind::Iid),
            "ar1" => Ok(CovariateKind::Ar1(DEFAULT_AR)),
            _ => {
                let inner = s
                    .strip_prefix("ar1(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Parse(format!("unknown covariate kind `{s}`")))?;
                let rho: f64 = inner.trim().parse().map_err(|_| Error::Parse(format!("bad AR coefficient `{inner}`")))?;
                Ok(CovariateKind::Ar1(rho))
            }
        }
    }
}

/// Two or more regimes: one pattern, intercept and noise variance each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub patterns: Vec<Pattern>,
    pub trans: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub noise_var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub name: String,
    /// Pattern of the single-regime coefficient; ignored when `regimes` is set.
    pub pattern: Pattern,
    pub size: (usize, usize),
    pub noisy: bool,
    pub covariates: CovariateKind,
    pub t: usize,
    /// Noise variance of the single-regime response.
    pub noise_var: f64,
    pub regimes: Option<RegimeSpec>,
}

impl SimSetting {
    /// Single-regime setting on a `20 × 20` coefficient with `T = 400`:
    /// 1 diagonal, 2 cross, 3 circle, 4 core-periphery.
    pub fn simple(index: usize, covariates: CovariateKind, noisy: bool) -> Result<Self> {
        let pattern = match index {
            1 => Pattern::Diagonal,
            2 => Pattern::Cross,
            3 => Pattern::Circle,
            4 => Pattern::CorePeriphery,
            _ => return Err(Error::Parameter(format!("simple settings are 1 to 4, got {index}"))),
        };
        let prefix = if noisy { "S~" } else { "S" };
        Ok(SimSetting {
            name: format!("{prefix}{index}-{covariates}"),
            pattern,
            size: (20, 20),
            noisy,
            covariates,
            t: 400,
            noise_var: 1.0,
            regimes: None,
        })
    }

    /// Two-regime setting on `12 × 12` coefficients with `T = 800`:
    /// 1 anti-diagonal / diagonal with unit noise, 2 cross / diagonal with
    /// noise variances 2 and 0.1.
    pub fn markov_switching(index: usize, covariates: CovariateKind) -> Result<Self> {
        let (patterns, noise_var) = match index {
            1 => (vec![Pattern::AntiDiagonal, Pattern::Diagonal], vec![1.0, 1.0]),
            2 => (vec![Pattern::Cross, Pattern::Diagonal], vec![2.0, 0.1]),
            _ => return Err(Error::Parameter(format!("switching settings are 1 and 2, got {index}"))),
        };
        let p = DEFAULT_PERSISTENCE;
        Ok(SimSetting {
            name: format!("S{index}MS-{covariates}"),
            pattern: patterns[0],
            size: (12, 12),
            noisy: false,
            covariates,
            t: 800,
            noise_var: 1.0,
            regimes: Some(RegimeSpec {
                patterns,
                trans: vec![vec![p, 1.0 - p], vec![1.0 - p, p]],
                mu: vec![0.0, 0.0],
                noise_var,
            }),
        })
    }

    pub fn k(&self) -> usize {
        self.regimes.as_ref().map_or(1, |r| r.patterns.len())
    }
}

/// Ground truth behind a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub setting: SimSetting,
    /// One coefficient per regime.
    pub coefficients: Vec<Tensor>,
    pub mu: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub path: Vec<usize>,
}

pub fn gen_coefficient(pattern: Pattern, size: (usize, usize), noisy: bool, rng: &mut impl Rng) -> Result<Tensor> {
    let (p1, p2) = size;
    if p1 == 0 || p2 == 0 {
        return Err(Error::Dimension("pattern size must be positive".into()));
    }
    if pattern.needs_square() && p1 != p2 {
        return Err(Error::Dimension(format!("{pattern} needs a square size, got {p1}×{p2}")));
    }
    let mut b = Tensor::from_fn(&[p1, p2], |idx| if pattern.cell(idx[0], idx[1], p1) { 1.0 } else { 0.0 });
    if noisy {
        b.data_mut().iter_mut().for_each(|v| *v += PATTERN_NOISE_SD * std_normal(rng));
    }
    Ok(b)
}

/// `t` covariate tensors with standard normal margins.
pub fn gen_covariates(kind: CovariateKind, shape: &[usize], t: usize, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    let mut x = Tensor::from_fn(shape, |_| std_normal(rng));
    match kind {
        CovariateKind::Iid => {
            let mut out = Vec::with_capacity(t);
            if t > 0 {
                out.push(x);
            }
            for _ in 1..t {
                out.push(Tensor::from_fn(shape, |_| std_normal(rng)));
            }
            Ok(out)
        }
        CovariateKind::Ar1(rho) => {
            if !(rho.abs() < 1.0) {
                return Err(Error::Parameter(format!("AR(1) coefficient must satisfy |ρ| < 1, got {rho}")));
            }
            let innov = (1.0 - rho * rho).sqrt();
            let mut out = Vec::with_capacity(t);
            for i in 0..t {
                if i > 0 {
                    x.data_mut().iter_mut().for_each(|v| *v = rho * *v + innov * std_normal(rng));
                }
                out.push(x.clone());
            }
            Ok(out)
        }
    }
}

/// Markov path of length `t` started from the stationary distribution.
pub fn gen_path(trans: &[Vec<f64>], t: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let mut path = Vec::with_capacity(t);
    if t == 0 {
        return Ok(path);
    }
    path.push(sample_categorical(&stationary_distribution(trans), rng)?);
    for i in 1..t {
        path.push(sample_categorical(&trans[path[i - 1]], rng)?);
    }
    Ok(path)
}

/// `y_t = µ_{s_t} + <B_{s_t}, X_t> + σ_{s_t} ε_t`.
pub fn gen_responses(
    coefficients: &[Tensor],
    mu: &[f64],
    noise_var: &[f64],
    path: &[usize],
    xs: &[Tensor],
    rng: &mut impl Rng,
) -> Vec<f64> {
    path.iter()
        .zip(xs)
        .map(|(&s, x)| mu[s] + dot(coefficients[s].data(), x.data()) + noise_var[s].sqrt() * std_normal(rng))
        .collect()
}

/// Draws a dataset and its truth. Covariates, coefficients, path and noise
/// use separate streams of `seed`.
pub fn gen_dataset(setting: &SimSetting, seed: u64) -> Result<(Dataset, Truth)> {
    if setting.t == 0 {
        return Err(Error::Parameter("sample size must be positive".into()));
    }
    let shape = [setting.size.0, setting.size.1];
    let mut coef_rng = rng_stream(seed, 1);
    let mut cov_rng = rng_stream(seed, 2);
    let mut path_rng = rng_stream(seed, 3);
    let mut noise_rng = rng_stream(seed, 4);
    let (coefficients, mu, noise_var, trans) = match &setting.regimes {
        None => (
            vec![gen_coefficient(setting.pattern, setting.size, setting.noisy, &mut coef_rng)?],
            vec![0.0],
            vec![setting.noise_var],
            vec![vec![1.0]],
        ),
        Some(r) => {
            let k = r.patterns.len();
            if k == 0 || r.mu.len() != k || r.noise_var.len() != k || r.trans.len() != k || r.trans.iter().any(|row| row.len() != k) {
                return Err(Error::Dimension("regime specification sizes disagree".into()));
            }
            let coefs = r
                .patterns
                .iter()
                .map(|&p| gen_coefficient(p, setting.size, setting.noisy, &mut coef_rng))
                .collect::<Result<Vec<_>>>()?;
            (coefs, r.mu.clone(), r.noise_var.clone(), r.trans.clone())
        }
    };
    if noise_var.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Parameter("noise variances must be non-negative".into()));
    }
    let xs = gen_covariates(setting.covariates, &shape, setting.t, &mut cov_rng)?;
    let path = if coefficients.len() == 1 { vec![0; setting.t] } else { gen_path(&trans, setting.t, &mut path_rng)? };
    let y = gen_responses(&coefficients, &mu, &noise_var, &path, &xs, &mut noise_rng);
    let rows: Vec<Vec<f64>> = y.into_iter().map(|v| vec![v]).collect();
    let data = Dataset::shared(&rows, xs)?;
    let truth = Truth { seed, setting: setting.clone(), coefficients, mu, noise_var, trans, path };
    Ok((data, truth))
}
