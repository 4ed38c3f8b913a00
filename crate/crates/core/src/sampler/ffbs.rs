//! Forward filtering, backward sampling for a finite-state hidden Markov
//! chain given per-time log emission densities.

use rand::Rng;

use crate::distributions::{sample_categorical, softmax};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FfbsOutput {
    pub path: Vec<usize>,
    /// `P(s_t | y_{1:T})`
    pub smoothed: Vec<Vec<f64>>,
    /// `P(s_t | y_{1:t})`
    pub filtered: Vec<Vec<f64>>,
    pub log_marginal: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Hamilton filter: `P(s_t | y_{1:t})` for every `t` and the log marginal
/// likelihood, starting from `init`.
pub fn hamilton_filter(log_em: &[Vec<f64>], trans: &[Vec<f64>], init: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
    let k = trans.len();
    if log_em.is_empty() || init.len() != k || log_em.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension("emission, transition and initial sizes disagree".into()));
    }
    let log_trans: Vec<Vec<f64>> = trans.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
    let mut filtered: Vec<Vec<f64>> = Vec::with_capacity(log_em.len());
    let mut log_marginal = 0.0;
    let mut pred_log: Vec<f64> = init.iter().map(|p| p.ln()).collect();
    for (t, em) in log_em.iter().enumerate() {
        if t > 0 {
            let prev = &filtered[t - 1];
            pred_log = (0..k)
                .map(|j| {
                    let terms: Vec<f64> = (0..k).map(|i| prev[i].ln() + log_trans[i][j]).collect();
                    log_sum_exp(&terms)
                })
                .collect();
        }
        let joint: Vec<f64> = pred_log.iter().zip(em).map(|(a, b)| a + b).collect();
        let norm = log_sum_exp(&joint);
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("filtered probabilities vanish at t = {t}")));
        }
        log_marginal += norm;
        filtered.push(softmax(&joint));
    }
    Ok((filtered, log_marginal))
}

/// Hamilton filter forward, joint path draw backward, and smoothed
/// probabilities. `log_em[t][k]` is the log emission density of time `t`
/// under state `k`.
pub fn ffbs_from_log_emissions(
    log_em: &[Vec<f64>],
    trans: &[Vec<f64>],
    init: &[f64],
    rng: &mut impl Rng,
) -> Result<FfbsOutput> {
    let (filtered, log_marginal) = hamilton_filter(log_em, trans, init)?;
    let t_len = log_em.len();
    let k = trans.len();
    let log_trans: Vec<Vec<f64>> = trans.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();

    let mut path = vec![0usize; t_len];
    path[t_len - 1] = sample_categorical(&filtered[t_len - 1], rng)?;
    for t in (0..t_len - 1).rev() {
        let next = path[t + 1];
        let w: Vec<f64> = (0..k).map(|i| filtered[t][i].ln() + log_trans[i][next]).collect();
        path[t] = sample_categorical(&softmax(&w), rng)?;
    }

    // ξ_{t|T}(i) = ξ_{t|t}(i) Σ_j p_ij ξ_{t+1|T}(j) / ξ_{t+1|t}(j)
    let mut smoothed = vec![vec![0.0; k]; t_len];
    smoothed[t_len - 1] = filtered[t_len - 1].clone();
    for t in (0..t_len - 1).rev() {
        let pred: Vec<f64> = (0..k).map(|j| (0..k).map(|i| filtered[t][i] * trans[i][j]).sum()).collect();
        let ratio: Vec<f64> = (0..k)
            .map(|j| if pred[j] > 0.0 { smoothed[t + 1][j] / pred[j] } else { 0.0 })
            .collect();
        let raw: Vec<f64> = (0..k).map(|i| filtered[t][i] * (0..k).map(|j| trans[i][j] * ratio[j]).sum::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        smoothed[t] = if s > 0.0 { raw.iter().map(|v| v / s).collect() } else { filtered[t].clone() };
    }

    Ok(FfbsOutput { path, smoothed, filtered, log_marginal })
}
