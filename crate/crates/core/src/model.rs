//! Data container, the parameter state of every equation and regime, the
//! hidden Markov chain, and likelihood evaluation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{log_normal_pdf, std_normal};
use crate::error::{Error, Result};
use crate::prior::Hyperparameters;
use crate::tensor::{dot, hadamard_compose, FactorSet, Marginals, Tensor};

/// Responses `y_{ℓt}` and covariate tensors `X_t` for each equation.
///
/// Equations that share covariates hold clones of one `Arc`.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// `[ℓ][t]`
    responses: Vec<Vec<f64>>,
    /// `[ℓ] → [t]`
    covariates: Vec<Arc<Vec<Tensor>>>,
}

impl Dataset {
    /// `rows` is the `T × N` response matrix, one row per time point.
    pub fn new(rows: &[Vec<f64>], covariates: Vec<Arc<Vec<Tensor>>>) -> Result<Self> {
        let t = rows.len();
        if t == 0 {
            return Err(Error::Dimension("dataset needs at least one time point".into()));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::Dimension("dataset needs at least one equation".into()));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Dimension(format!("response row {i} has {} entries, expected {n}", r.len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("responses contain non-finite values".into()));
        }
        if covariates.len() != n {
            return Err(Error::Dimension(format!("{n} equations but {} covariate sequences", covariates.len())));
        }
        for (l, xs) in covariates.iter().enumerate() {
            if xs.len() != t {
                return Err(Error::Dimension(format!(
                    "equation {l}: {} covariate tensors for {t} responses",
                    xs.len()
                )));
            }
            let shape = xs[0].shape();
            if shape.len() < 2 {
                return Err(Error::Dimension(format!("equation {l}: covariates need at least two modes")));
            }
            if xs.iter().any(|x| x.shape() != shape) {
                return Err(Error::Dimension(format!("equation {l}: covariate shapes differ across time")));
            }
            if xs.iter().any(|x| x.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Parameter(format!("equation {l}: covariates contain non-finite values")));
            }
        }
        let responses = (0..n).map(|l| rows.iter().map(|r| r[l]).collect()).collect();
        Ok(Dataset { responses, covariates })
    }

    /// Every equation uses the same covariate sequence.
    pub fn shared(rows: &[Vec<f64>], covariates: Vec<Tensor>) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        let shared = Arc::new(covariates);
        Self::new(rows, vec![shared; n])
    }

    pub fn t(&self) -> usize {
        self.responses[0].len()
    }

    pub fn n(&self) -> usize {
        self.responses.len()
    }

    pub fn y(&self, l: usize) -> &[f64] {
        &self.responses[l]
    }

    pub fn response_rows(&self) -> Vec<Vec<f64>> {
        (0..self.t()).map(|t| self.responses.iter().map(|y| y[t]).collect()).collect()
    }

    pub fn x(&self, l: usize) -> &Arc<Vec<Tensor>> {
        &self.covariates[l]
    }

    pub fn shape(&self, l: usize) -> &[usize] {
        self.covariates[l][0].shape()
    }

    /// Whether all equations alias a single covariate sequence.
    pub fn is_shared(&self) -> bool {
        self.covariates.iter().all(|c| Arc::ptr_eq(c, &self.covariates[0]))
    }

    /// Time points `range` of every equation, keeping covariate aliasing.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        if range.start >= range.end || range.end > self.t() {
            return Err(Error::Index(format!("time range {range:?} of {}", self.t())));
        }
        let mut seen: Vec<(*const Vec<Tensor>, Arc<Vec<Tensor>>)> = Vec::new();
        let covariates = self
            .covariates
            .iter()
            .map(|c| {
                let key = Arc::as_ptr(c);
                if let Some((_, s)) = seen.iter().find(|(k, _)| *k == key) {
                    return s.clone();
                }
                let s = Arc::new(c[range.clone()].to_vec());
                seen.push((key, s.clone()));
                s
            })
            .collect();
        let responses = self.responses.iter().map(|y| y[range.clone()].to_vec()).collect();
        Ok(Dataset { responses, covariates })
    }
}

/// Parameters of one equation in one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub factors: FactorSet,
    pub marginals: Marginals,
    pub zeta: Vec<f64>,
    pub tau: f64,
    /// `σ²_m`, one per mode.
    pub sigma_mode_sq: Vec<f64>,
    /// `w[d][m][j]`
    pub w: Vec<Vec<Vec<f64>>>,
    /// `λ[d][m]`
    pub lambda: Vec<Vec<f64>>,
    pub mu: f64,
    pub noise_var: f64,
}

impl StateParams {
    pub fn coefficient(&self) -> Tensor {
        hadamard_compose(&self.factors)
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn shape(&self) -> &[usize] {
        self.factors.shape()
    }

    /// Draws starting values: factors, marginals and intercept from
    /// `N(0, 0.1²)`, uniform `ζ`, and prior means for the scales.
    pub fn initial<R: Rng>(shape: &[usize], hyper: &Hyperparameters, noise_var: f64, rng: &mut R) -> Self {
        let d = hyper.d;
        let m = shape.len();
        let small = |rng: &mut R| 0.1 * std_normal(rng);
        let factors = (0..d)
            .map(|_| (0..m).map(|_| Tensor::from_fn(shape, |_| small(rng))).collect())
            .collect();
        let gamma = (0..d)
            .map(|_| shape.iter().map(|&p| (0..p).map(|_| small(rng)).collect()).collect())
            .collect();
        StateParams {
            factors: FactorSet::new(factors).expect("valid factor shapes"),
            marginals: Marginals::new(gamma, shape).expect("valid marginal lengths"),
            zeta: vec![1.0 / d as f64; d],
            tau: hyper.a_tau / hyper.b_tau,
            sigma_mode_sq: vec![hyper.a_sigma / hyper.b_sigma; m],
            w: (0..d).map(|_| shape.iter().map(|&p| vec![hyper.hard_term(); p]).collect()).collect(),
            lambda: vec![vec![hyper.a_lambda / hyper.b_lambda; m]; d],
            mu: small(rng),
            noise_var,
        }
    }
}

/// Row-stochastic transition matrix, the current regime path (0-based
/// labels) and the smoothed regime probabilities of the last filter pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub trans: Vec<Vec<f64>>,
    pub path: Vec<usize>,
    pub smoothed: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(trans: Vec<Vec<f64>>, path: Vec<usize>) -> Result<Self> {
        let k = trans.len();
        if k == 0 || trans.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("transition matrix must be square and non-empty".into()));
        }
        for (i, r) in trans.iter().enumerate() {
            let s: f64 = r.iter().sum();
            if r.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-8 {
                return Err(Error::Parameter(format!("transition row {i} is not a probability vector")));
            }
        }
        if let Some(&s) = path.iter().find(|&&s| s >= k) {
            return Err(Error::Index(format!("state {s} with K = {k}")));
        }
        let smoothed = path.iter().map(|&s| (0..k).map(|j| if j == s { 1.0 } else { 0.0 }).collect()).collect();
        Ok(MarkovChain { trans, path, smoothed })
    }

    pub fn k(&self) -> usize {
        self.trans.len()
    }

    /// Stationary distribution of `trans`; uniform when the linear system is
    /// singular or the solution leaves the simplex.
    pub fn stationary(&self) -> Vec<f64> {
        stationary_distribution(&self.trans)
    }
}

pub fn stationary_distribution(trans: &[Vec<f64>]) -> Vec<f64> {
    let k = trans.len();
    let uniform = vec![1.0 / k as f64; k];
    if k == 1 {
        return uniform;
    }
    // (Pᵀ − I)π = 0 with the last equation replaced by Σπ = 1.
    let mut a = DMatrix::from_fn(k, k, |i, j| trans[j][i] - if i == j { 1.0 } else { 0.0 });
    let mut rhs = DVector::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    rhs[k - 1] = 1.0;
    match a.lu().solve(&rhs) {
        Some(pi) if pi.iter().all(|&v| v.is_finite() && v >= -1e-10) => {
            let clipped: Vec<f64> = pi.iter().map(|&v| v.max(0.0)).collect();
            let s: f64 = clipped.iter().sum();
            if s > 0.0 {
                clipped.into_iter().map(|v| v / s).collect()
            } else {
                uniform
            }
        }
        _ => uniform,
    }
}

/// Complete sampler state: `params[ℓ][k]` and the shared chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub params: Vec<Vec<StateParams>>,
    pub chain: MarkovChain,
}

impl ModelState {
    /// Starting values for every equation and regime. The noise variance
    /// starts at the sample variance of each response; transition rows at the
    /// Dirichlet prior mean; the path uniformly at random.
    pub fn initial(data: &Dataset, hyper: &Hyperparameters, rng: &mut impl Rng) -> Result<Self> {
        hyper.validate()?;
        for l in 0..data.n() {
            if data.shape(l).len() != hyper.m {
                return Err(Error::Dimension(format!(
                    "equation {l} has {} modes, hyperparameters say {}",
                    data.shape(l).len(),
                    hyper.m
                )));
            }
        }
        let k = hyper.k;
        let params = (0..data.n())
            .map(|l| {
                let y = data.y(l);
                let mean = y.iter().sum::<f64>() / y.len() as f64;
                let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
                let var = if var > 0.0 { var } else { 1.0 };
                (0..k).map(|_| StateParams::initial(data.shape(l), hyper, var, rng)).collect()
            })
            .collect();
        let nu_sum: f64 = hyper.nu.iter().sum();
        let row: Vec<f64> = hyper.nu.iter().map(|v| v / nu_sum).collect();
        let path = (0..data.t()).map(|_| rng.random_range(0..k)).collect();
        Ok(ModelState { params, chain: MarkovChain::new(vec![row; k], path)? })
    }

    pub fn n(&self) -> usize {
        self.params.len()
    }

    pub fn k(&self) -> usize {
        self.chain.k()
    }
}

/// `µ_{ℓk} + <B_{ℓk}, X_t>`.
pub fn conditional_mean(data: &Dataset, sp: &StateParams, l: usize, t: usize) -> f64 {
    sp.mu + dot(sp.coefficient().data(), data.x(l)[t].data())
}

/// Gaussian log-density of `y_{ℓt}` under regime `k`.
pub fn loglik_point(data: &Dataset, state: &ModelState, l: usize, k: usize, t: usize) -> f64 {
    let sp = &state.params[l][k];
    log_normal_pdf(data.y(l)[t], conditional_mean(data, sp, l, t), sp.noise_var)
}

/// Complete-data log-likelihood of `path`: all emissions, the initial
/// (stationary) state probability, and the transitions.
pub fn loglik_path(data: &Dataset, state: &ModelState, path: &[usize]) -> Result<f64> {
    if path.len() != data.t() {
        return Err(Error::Dimension(format!("path of length {} for T = {}", path.len(), data.t())));
    }
    let k = state.k();
    if let Some(&s) = path.iter().find(|&&s| s >= k) {
        return Err(Error::Index(format!("state {s} with K = {k}")));
    }
    let coefs: Vec<Vec<Tensor>> = state.params.iter().map(|r| r.iter().map(|sp| sp.coefficient()).collect()).collect();
    let mut total = 0.0;
    for (t, &s) in path.iter().enumerate() {
        for l in 0..data.n() {
            let sp = &state.params[l][s];
            let mean = sp.mu + dot(coefs[l][s].data(), data.x(l)[t].data());
            total += log_normal_pdf(data.y(l)[t], mean, sp.noise_var);
        }
    }
    total += state.chain.stationary()[path[0]].ln();
    for w in path.windows(2) {
        total += state.chain.trans[w[0]][w[1]].ln();
    }
    Ok(total)
}
