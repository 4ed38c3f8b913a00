//! Stored posterior draws and their summaries.

use serde::{Deserialize, Serialize};

use super::ChainConfig;
use crate::model::{Dataset, ModelState};
use crate::prior::Hyperparameters;
use crate::tensor::Tensor;

/// One stored iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub sweep: usize,
    /// `[ℓ][k]`
    pub coefficients: Vec<Vec<Tensor>>,
    pub mu: Vec<Vec<f64>>,
    pub noise_var: Vec<Vec<f64>>,
    pub trans: Vec<Vec<f64>>,
    pub path: Vec<usize>,
    /// `[ℓ][k][d]`
    pub zeta: Vec<Vec<Vec<f64>>>,
    pub tau: Vec<Vec<f64>>,
}

impl Draw {
    pub fn from_state(sweep: usize, state: &ModelState) -> Self {
        let per = |f: &dyn Fn(&crate::model::StateParams) -> f64| -> Vec<Vec<f64>> {
            state.params.iter().map(|r| r.iter().map(f).collect()).collect()
        };
        Draw {
            sweep,
            coefficients: state.params.iter().map(|r| r.iter().map(|sp| sp.coefficient()).collect()).collect(),
            mu: per(&|sp| sp.mu),
            noise_var: per(&|sp| sp.noise_var),
            trans: state.chain.trans.clone(),
            path: state.chain.path.clone(),
            zeta: state.params.iter().map(|r| r.iter().map(|sp| sp.zeta.clone()).collect()).collect(),
            tau: per(&|sp| sp.tau),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: ChainConfig,
    pub n: usize,
    pub k: usize,
    pub rank: usize,
    pub t: usize,
    /// Coefficient shape of each equation.
    pub shapes: Vec<Vec<usize>>,
    pub draws: Vec<Draw>,
    /// Mean over stored draws of the smoothed regime probabilities.
    pub smoothed_mean: Vec<Vec<f64>>,
    /// Mean squared outcome residual after every sweep, burn-in included.
    pub outcome_mse: Vec<f64>,
    pub zeta_acceptance: f64,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

impl PosteriorDraws {
    pub fn empty(data: &Dataset, hyper: &Hyperparameters, cfg: &ChainConfig) -> Self {
        PosteriorDraws {
            config: cfg.clone(),
            n: data.n(),
            k: hyper.k,
            rank: hyper.d,
            t: data.t(),
            shapes: (0..data.n()).map(|l| data.shape(l).to_vec()).collect(),
            draws: Vec::new(),
            smoothed_mean: vec![vec![0.0; hyper.k]; data.t()],
            outcome_mse: Vec::new(),
            zeta_acceptance: 1.0,
        }
    }

    /// Appends a draw and folds its smoothed probabilities into the mean.
    pub fn record(&mut self, sweep: usize, state: &ModelState) {
        let n = self.draws.len() as f64;
        for (acc, row) in self.smoothed_mean.iter_mut().zip(&state.chain.smoothed) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += (v - *a) / (n + 1.0);
            }
        }
        self.draws.push(Draw::from_state(sweep, state));
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Posterior mean coefficient tensor of every equation and regime.
    pub fn mean_coefficients(&self) -> Vec<Vec<Tensor>> {
        (0..self.n)
            .map(|l| {
                (0..self.k)
                    .map(|k| {
                        let mut acc = Tensor::zeros(&self.shapes[l]);
                        for d in &self.draws {
                            acc.add_assign(&d.coefficients[l][k]).expect("stored shapes agree");
                        }
                        acc.scale(1.0 / self.draws.len() as f64);
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    pub fn mean_mu(&self) -> Vec<Vec<f64>> {
        self.mean_table(|d, l, k| d.mu[l][k])
    }

    pub fn mean_noise_var(&self) -> Vec<Vec<f64>> {
        self.mean_table(|d, l, k| d.noise_var[l][k])
    }

    pub fn mean_trans(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| mean_of(self.draws.iter().map(|d| d.trans[i][j]))).collect())
            .collect()
    }

    fn mean_table(&self, f: impl Fn(&Draw, usize, usize) -> f64) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|l| (0..self.k).map(|k| mean_of(self.draws.iter().map(|d| f(d, l, k)))).collect())
            .collect()
    }

    /// Trace of coefficient entry `flat` for equation `l`, regime `k`.
    pub fn coefficient_series(&self, l: usize, k: usize, flat: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.coefficients[l][k].data()[flat]).collect()
    }

    /// Most probable regime at every time point under `smoothed_mean`.
    pub fn map_path(&self) -> Vec<usize> {
        self.smoothed_mean
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect()
    }
}
