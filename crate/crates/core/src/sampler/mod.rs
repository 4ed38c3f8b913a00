//! Gibbs sampler for the Markov-switching tensor regression.
//!
//! One sweep runs the collapsed factor and marginal updates on a random
//! partial scan of `(d, m)` blocks, refreshes every scale parameter,
//! intercept and noise variance, the transition matrix, the regime path by
//! FFBS, and finally relabels regimes.

mod cache;
pub mod draws;
pub mod ffbs;
pub mod relabel;
pub mod scan;
mod steps;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{rng_stream, ChainRng};
use crate::error::{Error, Result};
use crate::model::{Dataset, ModelState};
use crate::prior::Hyperparameters;
use crate::tensor::dot;

use cache::SliceCache;
pub use draws::{Draw, PosteriorDraws};
pub use ffbs::{ffbs_from_log_emissions, hamilton_filter, FfbsOutput};
pub use relabel::{apply_permutation, relabel, IdentRule};
pub use scan::{subset_size, ScanPlan};
pub use steps::shrinkage_count;

/// Prior precision used in the collapsed factor update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaPrior {
    /// Exact marginal of a slice with its marginal integrated out:
    /// `N(0, τζ(σ²_m I + w ιιᵀ))`.
    Collapsed,
    /// Diagonal approximation `N(0, τζ(w + σ²_m) I)`.
    Isotropic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Stream index; chains sharing a seed but not a stream are independent.
    pub chain: u64,
    /// Fraction of the `D·M` factor blocks updated per sweep.
    pub scan_fraction: f64,
    pub ident_rule: IdentRule,
    /// Equation whose coefficients drive the relabeling.
    pub ident_equation: usize,
    pub beta_prior: BetaPrior,
    /// Opening sweeps, capped at `burn_in`, that hold the regime path fixed
    /// while the coefficients adapt to it. Only used when `K ≥ 2`.
    pub path_warmup: usize,
    /// Independent starts tried by `run_chain` when `K ≥ 2`; the one with the
    /// highest marginal likelihood after `path_warmup + start_sweeps`
    /// sweeps becomes the chain.
    pub starts: usize,
    pub start_sweeps: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 3000,
            burn_in: 1500,
            thin: 5,
            seed: 0,
            chain: 0,
            scan_fraction: 1.0,
            ident_rule: IdentRule::TraceOrder,
            ident_equation: 0,
            beta_prior: BetaPrior::Collapsed,
            path_warmup: 50,
            starts: 3,
            start_sweeps: 50,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Parameter(format!(
                "need burn_in < iterations, got {} and {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Parameter("thin must be at least 1".into()));
        }
        if !(self.scan_fraction > 0.0 && self.scan_fraction <= 1.0) {
            return Err(Error::Parameter(format!("scan_fraction {} outside (0, 1]", self.scan_fraction)));
        }
        if self.starts == 0 {
            return Err(Error::Parameter("starts must be at least 1".into()));
        }
        Ok(())
    }

    fn effective_warmup(&self) -> usize {
        self.path_warmup.min(self.burn_in)
    }

    /// Sweeps each start runs before the best one is chosen.
    fn start_length(&self) -> usize {
        (self.effective_warmup() + self.start_sweeps).min(self.burn_in)
    }
}

/// Summary of one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepInfo {
    /// Mean squared residual over all equations under the new path.
    pub outcome_mse: f64,
    pub path_changed: bool,
    pub permutation: Vec<usize>,
}

/// Sampler state plus the caches that make the factor updates cheap.
pub struct Sampler {
    data: Dataset,
    hyper: Hyperparameters,
    cfg: ChainConfig,
    state: ModelState,
    /// Equation → covariate group.
    group_of: Vec<usize>,
    caches: Vec<SliceCache>,
    /// `[group][k][m][j]`
    grams: Vec<Vec<Vec<Vec<Option<Vec<f64>>>>>>,
    /// Time points assigned to each regime.
    times: Vec<Vec<usize>>,
    /// `[ℓ][k][i]`: `y − µ − <B, X>` at `times[k][i]`.
    resid: Vec<Vec<Vec<f64>>>,
    rng: ChainRng,
    sweeps: usize,
    zeta_proposals: u64,
    zeta_accepts: u64,
}

impl Sampler {
    /// Starts from `ModelState::initial` drawn with the chain's own stream.
    pub fn new(data: Dataset, hyper: Hyperparameters, cfg: ChainConfig) -> Result<Self> {
        let stream = cfg.chain;
        Self::with_stream(data, hyper, cfg, stream)
    }

    fn with_stream(data: Dataset, hyper: Hyperparameters, cfg: ChainConfig, stream: u64) -> Result<Self> {
        let mut rng = rng_stream(cfg.seed, stream);
        let state = ModelState::initial(&data, &hyper, &mut rng)?;
        Self::build(data, hyper, cfg, state, rng)
    }

    pub fn with_state(data: Dataset, hyper: Hyperparameters, cfg: ChainConfig, state: ModelState) -> Result<Self> {
        let rng = rng_stream(cfg.seed, cfg.chain);
        Self::build(data, hyper, cfg, state, rng)
    }

    fn build(data: Dataset, hyper: Hyperparameters, cfg: ChainConfig, state: ModelState, rng: ChainRng) -> Result<Self> {
        cfg.validate()?;
        hyper.validate()?;
        if state.n() != data.n() || state.k() != hyper.k || state.chain.path.len() != data.t() {
            return Err(Error::Dimension("state does not match data and hyperparameters".into()));
        }
        for l in 0..data.n() {
            if state.params[l].iter().any(|sp| sp.shape() != data.shape(l) || sp.rank() != hyper.d) {
                return Err(Error::Dimension(format!("equation {l}: parameter shape or rank mismatch")));
            }
        }
        if cfg.ident_equation >= data.n() {
            return Err(Error::Index(format!("ident_equation {} of {}", cfg.ident_equation, data.n())));
        }
        let mut group_of = Vec::with_capacity(data.n());
        let mut reps: Vec<usize> = Vec::new();
        for l in 0..data.n() {
            match reps.iter().position(|&r| Arc::ptr_eq(data.x(r), data.x(l))) {
                Some(g) => group_of.push(g),
                None => {
                    group_of.push(reps.len());
                    reps.push(l);
                }
            }
        }
        let caches: Vec<SliceCache> = reps.iter().map(|&l| SliceCache::new(data.x(l))).collect();
        let grams = caches
            .iter()
            .map(|c| vec![c.offsets.iter().map(|per| vec![None; per.len()]).collect(); hyper.k])
            .collect();
        let mut s = Sampler {
            data,
            hyper,
            cfg,
            state,
            group_of,
            caches,
            grams,
            times: Vec::new(),
            resid: Vec::new(),
            rng,
            sweeps: 0,
            zeta_proposals: 0,
            zeta_accepts: 0,
        };
        s.resync();
        Ok(s)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    /// Mutable access for callers that pin parameters by hand. Call
    /// [`Sampler::resync`] afterwards.
    pub fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn times(&self, k: usize) -> &[usize] {
        &self.times[k]
    }

    /// Acceptance rate of the `ζ` proposals so far (1 when `D = 1`).
    pub fn zeta_acceptance(&self) -> f64 {
        if self.zeta_proposals == 0 {
            1.0
        } else {
            self.zeta_accepts as f64 / self.zeta_proposals as f64
        }
    }

    /// Rebuilds regime time sets and residuals from the state and drops
    /// every cached Gram matrix.
    pub fn resync(&mut self) {
        let k = self.state.k();
        let mut times = vec![Vec::new(); k];
        for (t, &s) in self.state.chain.path.iter().enumerate() {
            times[s].push(t);
        }
        self.times = times;
        for per_group in self.grams.iter_mut() {
            for per_k in per_group.iter_mut() {
                for per_m in per_k.iter_mut() {
                    per_m.iter_mut().for_each(|g| *g = None);
                }
            }
        }
        self.recompute_residuals();
    }

    fn recompute_residuals(&mut self) {
        let k = self.state.k();
        self.resid = (0..self.data.n())
            .map(|l| {
                let xs = self.data.x(l);
                let y = self.data.y(l);
                (0..k)
                    .map(|kk| {
                        let sp = &self.state.params[l][kk];
                        let b = sp.coefficient();
                        self.times[kk].iter().map(|&t| y[t] - sp.mu - dot(b.data(), xs[t].data())).collect()
                    })
                    .collect()
            })
            .collect();
    }

    /// `Σ_ℓ log N(y_ℓt; µ_ℓk + <B_ℓk, X_ℓt>, σ²_ℓk)` for every `t` and `k`.
    /// Log likelihood with the regime path summed out, at the current
    /// parameters and a stationary initial distribution.
    pub fn log_marginal(&self) -> Result<f64> {
        let chain = &self.state.chain;
        Ok(hamilton_filter(&self.log_emissions(), &chain.trans, &chain.stationary())?.1)
    }

    pub fn log_emissions(&self) -> Vec<Vec<f64>> {
        log_emissions(&self.data, &self.state)
    }

    fn outcome_mse(&self) -> f64 {
        let total: f64 = self.resid.iter().flatten().flatten().map(|r| r * r).sum();
        total / (self.data.n() * self.data.t()) as f64
    }

    /// One iteration of the sampler.
    pub fn sweep(&mut self) -> Result<SweepInfo> {
        let d_rank = self.hyper.d;
        let m_modes = self.hyper.m;
        let n_blocks = d_rank * m_modes;
        let plan = ScanPlan::draw(n_blocks, subset_size(self.cfg.scan_fraction, n_blocks), &mut self.rng)?;
        let k_states = self.state.k();
        let n_eq = self.data.n();
        for &block in &plan.order {
            let (d, m) = (block / m_modes, block % m_modes);
            // Mode sizes may differ across equations.
            let max_p = (0..n_eq).map(|l| self.data.shape(l)[m]).max().unwrap_or(0);
            for j in 0..max_p {
                for k in 0..k_states {
                    for l in 0..n_eq {
                        if j < self.data.shape(l)[m] {
                            self.step_beta(l, k, d, m, j)?;
                            self.step_gamma(l, k, d, m, j)?;
                        }
                    }
                }
            }
        }
        for l in 0..n_eq {
            for k in 0..k_states {
                self.step_zeta_tau(l, k)?;
                self.step_lambda_w(l, k)?;
                for m in 0..m_modes {
                    self.step_sigma_mode(l, k, m)?;
                }
                self.step_noise_and_mu(l, k)?;
            }
        }
        self.step_transition()?;
        let mut path_changed = false;
        let mut permutation: Vec<usize> = (0..k_states).collect();
        if k_states > 1 && self.sweeps >= self.cfg.effective_warmup() {
            let old_path = self.state.chain.path.clone();
            self.step_states()?;
            permutation = relabel(&mut self.state, self.cfg.ident_rule, self.cfg.ident_equation)?;
            path_changed = self.state.chain.path != old_path;
        }
        if path_changed {
            self.resync();
        } else {
            self.recompute_residuals();
        }
        self.sweeps += 1;
        Ok(SweepInfo { outcome_mse: self.outcome_mse(), path_changed, permutation })
    }
}

/// Log emission densities of every time point under every regime, summed
/// over equations.
pub fn log_emissions(data: &Dataset, state: &ModelState) -> Vec<Vec<f64>> {
    let k = state.k();
    let mut out = vec![vec![0.0; k]; data.t()];
    for l in 0..data.n() {
        let xs = data.x(l);
        let y = data.y(l);
        for kk in 0..k {
            let sp = &state.params[l][kk];
            let b = sp.coefficient();
            let inv = 1.0 / sp.noise_var;
            let norm = -0.5 * (2.0 * std::f64::consts::PI * sp.noise_var).ln();
            for (t, row) in out.iter_mut().enumerate() {
                let r = y[t] - sp.mu - dot(b.data(), xs[t].data());
                row[kk] += norm - 0.5 * r * r * inv;
            }
        }
    }
    out
}

/// Runs the opening sweeps of `cfg.starts` independent starts (one when
/// `K = 1`) and keeps the start with the highest marginal likelihood,
/// returned with its outcome-MSE trace. Start 0 uses the chain's own stream.
pub fn select_start(data: &Dataset, hyper: &Hyperparameters, cfg: &ChainConfig) -> Result<(Sampler, Vec<f64>)> {
    cfg.validate()?;
    let starts = if hyper.k > 1 { cfg.starts } else { 1 };
    let opening = if starts > 1 { cfg.start_length() } else { 0 };
    let mut best: Option<(f64, Sampler, Vec<f64>)> = None;
    for r in 0..starts {
        let stream = cfg.chain.wrapping_add((r as u64) << 32);
        let mut sampler = Sampler::with_stream(data.clone(), hyper.clone(), cfg.clone(), stream)?;
        let mut trace = Vec::with_capacity(cfg.iterations);
        for _ in 0..opening {
            trace.push(sampler.sweep()?.outcome_mse);
        }
        let score = if starts > 1 { sampler.log_marginal()? } else { 0.0 };
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, sampler, trace));
        }
    }
    let (_, sampler, trace) = best.expect("at least one start");
    Ok((sampler, trace))
}

/// Runs one chain and collects its thinned post-burn-in draws. The sweeps
/// of the selected start count toward `iterations`.
pub fn run_chain(data: &Dataset, hyper: &Hyperparameters, cfg: &ChainConfig) -> Result<PosteriorDraws> {
    let (mut sampler, trace) = select_start(data, hyper, cfg)?;
    let mut draws = PosteriorDraws::empty(data, hyper, cfg);
    draws.outcome_mse = trace;
    for it in sampler.sweeps()..cfg.iterations {
        let info = sampler.sweep()?;
        draws.outcome_mse.push(info.outcome_mse);
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.record(it, sampler.state());
        }
    }
    draws.zeta_acceptance = sampler.zeta_acceptance();
    Ok(draws)
}

/// Runs `n_chains` chains in parallel on streams `0..n_chains` of `cfg.seed`.
pub fn run_chains(data: &Dataset, hyper: &Hyperparameters, cfg: &ChainConfig, n_chains: usize) -> Result<Vec<PosteriorDraws>> {
    if n_chains == 0 {
        return Err(Error::Parameter("need at least one chain".into()));
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| {
                let cfg = ChainConfig { chain: c as u64, ..cfg.clone() };
                scope.spawn(move || run_chain(data, hyper, &cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Numerical("chain thread panicked".into()))?)
            .collect()
    })
}
