//! Identification of regime labels by ordering a coefficient summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentRule {
    /// Ascending trace of the coefficient tensor.
    TraceOrder,
    /// Descending Frobenius norm.
    FrobeniusOrder,
    None,
}

impl std::str::FromStr for IdentRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" | "trace-order" => Ok(IdentRule::TraceOrder),
            "frobenius" | "frobenius-order" => Ok(IdentRule::FrobeniusOrder),
            "none" => Ok(IdentRule::None),
            other => Err(Error::Parse(format!("unknown identification rule `{other}`"))),
        }
    }
}

/// Permutation `perm` with `perm[new] = old` that sorts the regimes of
/// equation `equation` by `rule`. Ties keep their current order.
pub fn ordering(state: &ModelState, rule: IdentRule, equation: usize) -> Result<Vec<usize>> {
    let k = state.k();
    let mut perm: Vec<usize> = (0..k).collect();
    if rule == IdentRule::None || k == 1 {
        return Ok(perm);
    }
    let row = state
        .params
        .get(equation)
        .ok_or_else(|| Error::Index(format!("equation {equation} of {}", state.n())))?;
    let keys = row
        .iter()
        .map(|sp| {
            let b = sp.coefficient();
            match rule {
                IdentRule::TraceOrder => b.trace(),
                IdentRule::FrobeniusOrder => Ok(-b.frobenius_norm()),
                IdentRule::None => unreachable!(),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    perm.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    Ok(perm)
}

/// Applies `perm` (`perm[new] = old`) to every regime-indexed quantity.
pub fn apply_permutation(state: &mut ModelState, perm: &[usize]) {
    let k = perm.len();
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return;
    }
    let mut inverse = vec![0; k];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    for row in state.params.iter_mut() {
        let old = row.clone();
        for (new, &o) in perm.iter().enumerate() {
            row[new] = old[o].clone();
        }
    }
    let chain = &mut state.chain;
    let trans = chain.trans.clone();
    for i in 0..k {
        for j in 0..k {
            chain.trans[i][j] = trans[perm[i]][perm[j]];
        }
    }
    chain.path.iter_mut().for_each(|s| *s = inverse[*s]);
    for row in chain.smoothed.iter_mut() {
        let old = row.clone();
        for (new, &o) in perm.iter().enumerate() {
            row[new] = old[o];
        }
    }
}

/// Sorts regimes by `rule`; returns the permutation applied.
pub fn relabel(state: &mut ModelState, rule: IdentRule, equation: usize) -> Result<Vec<usize>> {
    let perm = ordering(state, rule, equation)?;
    apply_permutation(state, &perm);
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{rng_stream, std_normal};
    use crate::model::{loglik_path, Dataset, MarkovChain};
    use crate::prior::Hyperparameters;
    use crate::tensor::{FactorSet, Tensor};
    use rand::Rng;

    fn state_with_traces(traces: &[f64], seed: u64) -> (Dataset, ModelState) {
        let k = traces.len();
        let mut rng = rng_stream(seed, 0);
        let t = 12;
        let xs: Vec<Tensor> = (0..t).map(|_| Tensor::from_fn(&[3, 3], |_| std_normal(&mut rng))).collect();
        let rows: Vec<Vec<f64>> = (0..t).map(|_| vec![std_normal(&mut rng)]).collect();
        let data = Dataset::shared(&rows, xs).unwrap();
        let hyper = Hyperparameters::defaults(1, 2, k).unwrap();
        let mut state = ModelState::initial(&data, &hyper, &mut rng).unwrap();
        for (kk, &tr) in traces.iter().enumerate() {
            // B = diag(tr/3) via factors identity·(tr/3) and all-ones.
            let a = Tensor::from_fn(&[3, 3], |i| if i[0] == i[1] { tr / 3.0 } else { 0.0 });
            let b = Tensor::filled(&[3, 3], 1.0);
            let sp = &mut state.params[0][kk];
            sp.factors = FactorSet::new(vec![vec![a, b]]).unwrap();
            sp.mu = kk as f64;
            sp.noise_var = 0.5 + kk as f64;
        }
        let trans: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let path: Vec<usize> = (0..t).map(|_| rng.random_range(0..k)).collect();
        state.chain = MarkovChain::new(trans, path).unwrap();
        (data, state)
    }

    #[test]
    fn ordered_model_is_untouched() {
        let (_, mut state) = state_with_traces(&[-1.0, 2.0], 1);
        let before = state.clone();
        assert_eq!(relabel(&mut state, IdentRule::TraceOrder, 0).unwrap(), vec![0, 1]);
        assert_eq!(state, before);
    }

    #[test]
    fn swap_is_an_involution() {
        let (data, mut state) = state_with_traces(&[3.0, 1.0], 2);
        let before = state.clone();
        let ll = loglik_path(&data, &state, &state.chain.path).unwrap();
        assert_eq!(relabel(&mut state, IdentRule::TraceOrder, 0).unwrap(), vec![1, 0]);
        assert_eq!(state.params[0][0], before.params[0][1]);
        assert_eq!(state.chain.trans[0][0], before.chain.trans[1][1]);
        assert_eq!(state.chain.trans[0][1], before.chain.trans[1][0]);
        assert!(state.chain.path.iter().zip(&before.chain.path).all(|(a, b)| *a == 1 - *b));
        let ll2 = loglik_path(&data, &state, &state.chain.path).unwrap();
        assert!((ll - ll2).abs() < 1e-9 * ll.abs());
        apply_permutation(&mut state, &[1, 0]);
        assert_eq!(state, before);
    }

    #[test]
    fn three_regimes_follow_sort_oracle() {
        let mut rng = rng_stream(3, 1);
        for seed in 0..20 {
            let traces: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (data, mut state) = state_with_traces(&traces, 10 + seed);
            let ll = loglik_path(&data, &state, &state.chain.path).unwrap();
            let mut oracle: Vec<usize> = (0..3).collect();
            oracle.sort_by(|&a, &b| traces[a].partial_cmp(&traces[b]).unwrap());
            assert_eq!(relabel(&mut state, IdentRule::TraceOrder, 0).unwrap(), oracle);
            let tr: Vec<f64> = state.params[0].iter().map(|sp| sp.coefficient().trace().unwrap()).collect();
            assert!(tr.windows(2).all(|w| w[0] <= w[1]));
            let ll2 = loglik_path(&data, &state, &state.chain.path).unwrap();
            assert!((ll - ll2).abs() < 1e-9 * ll.abs());
        }
    }

    #[test]
    fn frobenius_orders_descending() {
        let (_, mut state) = state_with_traces(&[1.0, -4.0, 2.0], 4);
        relabel(&mut state, IdentRule::FrobeniusOrder, 0).unwrap();
        let f: Vec<f64> = state.params[0].iter().map(|sp| sp.coefficient().frobenius_norm()).collect();
        assert!(f.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn trace_needs_equal_modes() {
        let mut rng = rng_stream(5, 0);
        let xs: Vec<Tensor> = (0..4).map(|_| Tensor::from_fn(&[2, 3], |_| std_normal(&mut rng))).collect();
        let data = Dataset::shared(&[vec![0.0], vec![1.0], vec![0.5], vec![0.2]], xs).unwrap();
        let hyper = Hyperparameters::defaults(1, 2, 2).unwrap();
        let mut state = ModelState::initial(&data, &hyper, &mut rng).unwrap();
        assert!(relabel(&mut state, IdentRule::TraceOrder, 0).is_err());
        assert!(relabel(&mut state, IdentRule::FrobeniusOrder, 0).is_ok());
        assert!(relabel(&mut state, IdentRule::TraceOrder, 3).is_err());
    }
}
