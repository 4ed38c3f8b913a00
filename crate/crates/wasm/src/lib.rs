//! Browser bindings. Exported functions return JSON strings and report
//! failures as `{"error": "..."}`; only the demo constructor throws.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use msmetr::diagnostics::state_accuracy;
use msmetr::distributions::rng_stream;
use msmetr::sampler::{select_start, Sampler};
use msmetr::simulation::{gen_coefficient, gen_dataset, CovariateKind, Pattern, SimSetting, Truth};
use msmetr::{ChainConfig, Hyperparameters, IdentRule};

fn to_json<T: Serialize>(r: msmetr::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[derive(Debug, Serialize)]
pub struct PriorReport {
    pub b_tau: f64,
    pub b_sigma: f64,
    pub entry_variance: f64,
    pub additional_variance: f64,
}

/// Rates elicited for a matrix coefficient of rank `d`, with the variance
/// they imply recomputed from the hierarchy.
pub fn prior_report(d: usize, v: f64, av: f64) -> msmetr::Result<PriorReport> {
    let h = Hyperparameters::elicited(d, 2, 1, v, av)?;
    Ok(PriorReport {
        b_tau: h.b_tau,
        b_sigma: h.b_sigma,
        entry_variance: h.prior_entry_variance()?,
        additional_variance: h.relative_additional_variance()?,
    })
}

#[wasm_bindgen]
pub fn elicit(d: usize, v: f64, av: f64) -> String {
    to_json(prior_report(d, v, av))
}

#[derive(Debug, Serialize)]
pub struct PatternGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

pub fn pattern_grid(name: &str, p: usize, noisy: bool, seed: u64) -> msmetr::Result<PatternGrid> {
    let pattern: Pattern = name.parse()?;
    let b = gen_coefficient(pattern, (p, p), noisy, &mut rng_stream(seed, 0))?;
    Ok(PatternGrid { rows: p, cols: p, values: b.into_data() })
}

/// Row-major `p × p` coefficient with the named pattern.
#[wasm_bindgen]
pub fn pattern(name: &str, p: usize, noisy: bool, seed: u64) -> String {
    to_json(pattern_grid(name, p, noisy, seed))
}

#[derive(Debug, Serialize)]
pub struct StepReport {
    pub sweep: usize,
    pub outcome_mse: f64,
    pub hit_rate: f64,
    pub coefficient_mse: f64,
    /// Row-major coefficient per regime, in the truth's labeling.
    pub coefficients: Vec<Vec<f64>>,
    pub prob_regime0: Vec<f64>,
}

/// Two-regime sampler on a simulated switching dataset, advanced a few
/// sweeps at a time. Construction runs the multi-start opening, so the
/// first report comes after `path_warmup + start_sweeps` sweeps.
#[wasm_bindgen]
pub struct MsDemo {
    sampler: Sampler,
    truth: Truth,
}

impl MsDemo {
    pub fn create(setting: usize, t: usize, rank: usize, seed: u64) -> msmetr::Result<MsDemo> {
        let mut s = SimSetting::markov_switching(setting, CovariateKind::Iid)?;
        s.t = t;
        let (data, truth) = gen_dataset(&s, seed)?;
        let hyper = Hyperparameters::defaults(rank, 2, 2)?;
        let rule = if setting == 1 { IdentRule::TraceOrder } else { IdentRule::FrobeniusOrder };
        let cfg = ChainConfig { seed, ident_rule: rule, ..ChainConfig::default() };
        let (sampler, _) = select_start(&data, &hyper, &cfg)?;
        Ok(MsDemo { sampler, truth })
    }

    pub fn advance(&mut self, sweeps: usize) -> msmetr::Result<StepReport> {
        let mut outcome_mse = f64::NAN;
        for _ in 0..sweeps.max(1) {
            outcome_mse = self.sampler.sweep()?.outcome_mse;
        }
        let state = self.sampler.state();
        let acc = state_accuracy(&state.chain.smoothed, &self.truth.path)?;
        // permutation maps estimated labels to true labels.
        let mut coefficients = vec![Vec::new(); state.k()];
        let mut prob_regime0 = vec![0.0; state.chain.smoothed.len()];
        let mut mse = 0.0;
        for (k, &true_k) in acc.permutation.iter().enumerate() {
            let c = state.params[0][k].coefficient();
            let truth = &self.truth.coefficients[true_k];
            mse += c.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / c.len() as f64;
            coefficients[true_k] = c.into_data();
            if true_k == 0 {
                for (p, row) in prob_regime0.iter_mut().zip(&state.chain.smoothed) {
                    *p = row[k];
                }
            }
        }
        Ok(StepReport {
            sweep: self.sampler.sweeps(),
            outcome_mse,
            hit_rate: acc.hit_rate,
            coefficient_mse: mse / state.k() as f64,
            coefficients,
            prob_regime0,
        })
    }
}

#[wasm_bindgen]
impl MsDemo {
    /// Setting 1 or 2, series length `t`, PARAFAC rank and seed.
    #[wasm_bindgen(constructor)]
    pub fn new(setting: usize, t: usize, rank: usize, seed: u64) -> Result<MsDemo, JsError> {
        Self::create(setting, t, rank, seed).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn step(&mut self, sweeps: usize) -> String {
        to_json(self.advance(sweeps))
    }

    /// Row-major `12 × 12` true coefficients and the true regime path.
    pub fn truth(&self) -> String {
        serde_json::json!({
            "coefficients": self.truth.coefficients.iter().map(|c| c.data().to_vec()).collect::<Vec<_>>(),
            "path": self.truth.path,
        })
        .to_string()
    }

    pub fn side(&self) -> usize {
        self.truth.coefficients[0].shape()[0]
    }
}
