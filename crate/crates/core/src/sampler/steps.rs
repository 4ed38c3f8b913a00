//! Full-conditional updates. Each step reads and writes the sampler state
//! and keeps the cached residuals consistent.

use nalgebra::DMatrix;
use rand::Rng;

use super::ffbs::ffbs_from_log_emissions;
use super::{BetaPrior, Sampler};
use crate::distributions::{sample_dirichlet, sample_gamma, sample_gig, sample_inv_gamma, std_normal, GigParams};
use crate::error::Result;
use crate::tensor::dot;

const FLOOR: f64 = 1e-300;

/// `I₀ = Σ_m p_m(q_m + 1)`: factor entries plus marginal entries of one
/// component, each carrying one power of `τζ_d`.
pub fn shrinkage_count(shape: &[usize]) -> usize {
    let p: usize = shape.iter().product();
    shape.len() * p + shape.iter().sum::<usize>()
}

impl Sampler {
    fn ensure_gram(&mut self, g: usize, k: usize, m: usize, j: usize) {
        if self.grams[g][k][m][j].is_none() {
            self.grams[g][k][m][j] = Some(self.caches[g].gram(m, j, &self.times[k]));
        }
    }

    /// `‖β_j − γ_j ι‖²` for every slice `j` of factor `(d, m)`.
    fn slice_deviations(&self, l: usize, k: usize, d: usize, m: usize) -> Vec<f64> {
        let sp = &self.state.params[l][k];
        let data = sp.factors.factor(d, m).data();
        let gamma = sp.marginals.get(d, m);
        self.caches[self.group_of[l]].offsets[m]
            .iter()
            .zip(gamma)
            .map(|(offs, &g)| offs.iter().map(|&o| (data[o] - g).powi(2)).sum())
            .collect()
    }

    /// Collapsed draw of slice `j` of factor `(d, m)` for equation `l`,
    /// regime `k`, with its marginal `γ` integrated out.
    pub fn step_beta(&mut self, l: usize, k: usize, d: usize, m: usize, j: usize) -> Result<()> {
        let g = self.group_of[l];
        self.ensure_gram(g, k, m, j);
        let cache = &self.caches[g];
        let offs = &cache.offsets[m][j];
        let q = offs.len();
        let sp = &self.state.params[l][k];
        let others = sp.factors.component_except(d, Some(m));
        let h: Vec<f64> = offs.iter().map(|&o| others.data()[o]).collect();
        let factor = sp.factors.factor(d, m).data();
        let beta_old: Vec<f64> = offs.iter().map(|&o| factor[o]).collect();
        let gram = self.grams[g][k][m][j].as_deref().expect("gram cached above");
        let inv_noise = 1.0 / sp.noise_var;

        let mut s = vec![0.0; q];
        for (&t, &e) in self.times[k].iter().zip(&self.resid[l][k]) {
            for (sa, &x) in s.iter_mut().zip(cache.row(m, j, t)) {
                *sa += x * e;
            }
        }
        let hb: Vec<f64> = h.iter().zip(&beta_old).map(|(a, b)| a * b).collect();
        let lin: Vec<f64> = (0..q)
            .map(|a| h[a] * (s[a] + dot(&gram[a * q..(a + 1) * q], &hb)) * inv_noise)
            .collect();
        let mut prec = DMatrix::from_fn(q, q, |a, b| h[a] * gram[a * q + b] * h[b] * inv_noise);

        let scale = sp.tau * sp.zeta[d];
        let s2m = sp.sigma_mode_sq[m];
        let w = sp.w[d][m][j];
        match self.cfg.beta_prior {
            BetaPrior::Collapsed => {
                let c = 1.0 / (scale * s2m);
                let off = c * w / (s2m + q as f64 * w);
                for a in 0..q {
                    for b in 0..q {
                        prec[(a, b)] -= off;
                    }
                    prec[(a, a)] += c;
                }
            }
            BetaPrior::Isotropic => {
                let c = 1.0 / (scale * (w + s2m));
                for a in 0..q {
                    prec[(a, a)] += c;
                }
            }
        }
        let beta_new = crate::distributions::sample_mvn_precision(&prec, &lin, &mut self.rng)?;

        let v: Vec<f64> = (0..q).map(|a| h[a] * (beta_new[a] - beta_old[a])).collect();
        for (&t, e) in self.times[k].iter().zip(self.resid[l][k].iter_mut()) {
            *e -= dot(cache.row(m, j, t), &v);
        }
        let factor = self.state.params[l][k].factors.factor_mut(d, m).data_mut();
        for (&o, &b) in offs.iter().zip(&beta_new) {
            factor[o] = b;
        }
        Ok(())
    }

    /// `γ_j | β_j ~ N(w/(qw + σ²_m)·Σβ_j, τζ w σ²_m/(qw + σ²_m))`.
    pub fn step_gamma(&mut self, l: usize, k: usize, d: usize, m: usize, j: usize) -> Result<()> {
        let offs = &self.caches[self.group_of[l]].offsets[m][j];
        let sp = &mut self.state.params[l][k];
        let data = sp.factors.factor(d, m).data();
        let sum: f64 = offs.iter().map(|&o| data[o]).sum();
        let q = offs.len() as f64;
        let w = sp.w[d][m][j];
        let s2m = sp.sigma_mode_sq[m];
        let denom = q * w + s2m;
        let mean = w * sum / denom;
        let var = sp.tau * sp.zeta[d] * w * s2m / denom;
        sp.marginals.get_mut(d, m)[j] = mean + var.sqrt() * std_normal(&mut self.rng);
        Ok(())
    }

    /// Joint update of the component weights `ζ` and the global scale `τ`.
    ///
    /// `φ_d = τζ_d` is proposed from independent GiG conditionals, which are
    /// exact when `a_τ = α`; otherwise an independence Metropolis–Hastings
    /// step with ratio `(Σφ'/Σφ)^{a_τ−α}` corrects for the difference. `τ`
    /// is then drawn given `ζ`.
    pub fn step_zeta_tau(&mut self, l: usize, k: usize) -> Result<()> {
        let hp = &self.hyper;
        let shape = self.data.shape(l).to_vec();
        let i0 = shrinkage_count(&shape) as f64;
        let d_rank = hp.d;
        let c: Vec<f64> = (0..d_rank)
            .map(|d| {
                let sp = &self.state.params[l][k];
                let mut total = 0.0;
                for m in 0..shape.len() {
                    let dev: f64 = self.slice_deviations(l, k, d, m).iter().sum();
                    total += dev / sp.sigma_mode_sq[m];
                    total += sp.marginals.get(d, m).iter().zip(&sp.w[d][m]).map(|(g, w)| g * g / w).sum::<f64>();
                }
                total.max(FLOOR)
            })
            .collect();
        let (alpha, a_tau, b_tau) = (hp.alpha, hp.a_tau, hp.b_tau);
        let sp = &mut self.state.params[l][k];
        if d_rank > 1 {
            let proposal = c
                .iter()
                .map(|&cd| sample_gig(GigParams::new(alpha / d_rank as f64 - i0 / 2.0, 2.0 * b_tau, cd)?, &mut self.rng))
                .collect::<Result<Vec<f64>>>()?;
            let total: f64 = proposal.iter().sum();
            let log_ratio = (a_tau - alpha) * (total.ln() - sp.tau.ln());
            self.zeta_proposals += 1;
            let u: f64 = self.rng.random();
            if log_ratio >= 0.0 || u.ln() < log_ratio {
                self.zeta_accepts += 1;
                sp.zeta = proposal.iter().map(|v| v / total).collect();
                sp.tau = total;
            }
        } else {
            sp.zeta = vec![1.0];
        }
        let b: f64 = c.iter().zip(&sp.zeta).map(|(cd, z)| cd / z).sum();
        sp.tau = sample_gig(GigParams::new(a_tau - d_rank as f64 * i0 / 2.0, 2.0 * b_tau, b.max(FLOOR))?, &mut self.rng)?;
        Ok(())
    }

    /// Rate parameters `λ` with the local scales integrated out, then the
    /// local scales `w` given `λ`.
    pub fn step_lambda_w(&mut self, l: usize, k: usize) -> Result<()> {
        let (a_lambda, b_lambda) = (self.hyper.a_lambda, self.hyper.b_lambda);
        let sp = &mut self.state.params[l][k];
        for d in 0..sp.w.len() {
            let scale = sp.tau * sp.zeta[d];
            let root = scale.sqrt();
            for m in 0..sp.w[d].len() {
                let gamma = sp.marginals.get(d, m);
                let abs_sum: f64 = gamma.iter().map(|g| g.abs() / root).sum();
                let lambda = sample_gamma(a_lambda + gamma.len() as f64, abs_sum + b_lambda, &mut self.rng)?;
                sp.lambda[d][m] = lambda;
                for (w, g) in sp.w[d][m].iter_mut().zip(gamma) {
                    *w = sample_gig(GigParams::new(0.5, lambda * lambda, (g * g / scale).max(FLOOR))?, &mut self.rng)?;
                }
            }
        }
        Ok(())
    }

    /// `σ²_m ~ GiG(a_σ − D p_m q_m/2, 2b_σ, Σ_d ‖B_dm − G_dm‖²/(τζ_d))`.
    pub fn step_sigma_mode(&mut self, l: usize, k: usize, m: usize) -> Result<()> {
        let d_rank = self.hyper.d;
        let p_total: usize = self.data.shape(l).iter().product();
        let b: f64 = (0..d_rank)
            .map(|d| {
                let sp = &self.state.params[l][k];
                self.slice_deviations(l, k, d, m).iter().sum::<f64>() / (sp.tau * sp.zeta[d])
            })
            .sum();
        let p = self.hyper.a_sigma - (d_rank * p_total) as f64 / 2.0;
        let draw = sample_gig(GigParams::new(p, 2.0 * self.hyper.b_sigma, b.max(FLOOR))?, &mut self.rng)?;
        self.state.params[l][k].sigma_mode_sq[m] = draw;
        Ok(())
    }

    /// Noise variance, then intercept, over the time points of regime `k`.
    pub fn step_noise_and_mu(&mut self, l: usize, k: usize) -> Result<()> {
        let resid = &mut self.resid[l][k];
        let n = resid.len() as f64;
        let sp = &mut self.state.params[l][k];
        let ss: f64 = resid.iter().map(|r| r * r).sum();
        let noise = sample_inv_gamma(self.hyper.a_noise + n / 2.0, self.hyper.b_noise + ss / 2.0, &mut self.rng)?;
        sp.noise_var = noise;
        let sum_r: f64 = resid.iter().map(|r| r + sp.mu).sum();
        let post_var = 1.0 / (n / noise + 1.0 / self.hyper.sigma_mu_sq);
        let post_mean = post_var * sum_r / noise;
        let mu = post_mean + post_var.sqrt() * std_normal(&mut self.rng);
        let shift = mu - sp.mu;
        resid.iter_mut().for_each(|r| *r -= shift);
        sp.mu = mu;
        Ok(())
    }

    /// Rows drawn from `Dir(ν + counts)` of the transitions along the path.
    pub fn step_transition(&mut self) -> Result<()> {
        let k = self.state.k();
        if k == 1 {
            return Ok(());
        }
        let chain = &mut self.state.chain;
        let mut counts = vec![vec![0.0; k]; k];
        for w in chain.path.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
        chain.trans = counts
            .iter()
            .map(|row| {
                let conc: Vec<f64> = row.iter().zip(&self.hyper.nu).map(|(c, v)| c + v).collect();
                sample_dirichlet(&conc, &mut self.rng)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(())
    }

    /// FFBS draw of the regime path; records smoothed probabilities. Call
    /// [`Sampler::resync`] before further parameter steps.
    pub fn step_states(&mut self) -> Result<()> {
        let em = self.log_emissions();
        let init = self.state.chain.stationary();
        let out = ffbs_from_log_emissions(&em, &self.state.chain.trans, &init, &mut self.rng)?;
        self.state.chain.path = out.path;
        self.state.chain.smoothed = out.smoothed;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{run_chain, ChainConfig, Sampler};
    use super::*;
    use crate::distributions::{rng_stream, std_normal};
    use crate::model::{Dataset, MarkovChain, ModelState};
    use crate::prior::Hyperparameters;
    use crate::quadrature::integrate_positive;
    use crate::tensor::Tensor;

    fn toy(shape: &[usize], t: usize, k: usize, d: usize, seed: u64) -> Sampler {
        let mut rng = rng_stream(seed, 99);
        let xs: Vec<Tensor> = (0..t).map(|_| Tensor::from_fn(shape, |_| std_normal(&mut rng))).collect();
        let rows: Vec<Vec<f64>> = (0..t).map(|_| vec![std_normal(&mut rng)]).collect();
        let data = Dataset::shared(&rows, xs).unwrap();
        let hyper = Hyperparameters::defaults(d, shape.len(), k).unwrap();
        let cfg = ChainConfig { seed, iterations: 10, burn_in: 0, thin: 1, ..ChainConfig::default() };
        Sampler::new(data, hyper, cfg).unwrap()
    }

    fn set_path(s: &mut Sampler, path: Vec<usize>) {
        let trans = s.state().chain.trans.clone();
        s.state_mut().chain = MarkovChain::new(trans, path).unwrap();
        s.resync();
    }

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    /// Mean and batch-means standard error for autocorrelated draws.
    fn batch_mean_se(v: &[f64]) -> (f64, f64) {
        let b = 50;
        let len = v.len() / b;
        let means: Vec<f64> = (0..b).map(|i| v[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64).collect();
        mean_se(&means)
    }

    fn slice(s: &Sampler, k: usize, d: usize, m: usize, j: usize) -> Vec<f64> {
        s.state().params[0][k].factors.factor(d, m).mode_slice_vec(m, j).unwrap()
    }

    #[test]
    fn shrinkage_count_example() {
        assert_eq!(shrinkage_count(&[20, 20]), 840);
        assert_eq!(shrinkage_count(&[2, 3, 4]), 3 * 24 + 9);
    }

    fn empty_regime_covariance(prior: BetaPrior) {
        let mut s = toy(&[2, 3], 20, 2, 1, 1);
        s.cfg.beta_prior = prior;
        set_path(&mut s, vec![0; 20]);
        {
            let sp = &mut s.state_mut().params[0][1];
            sp.tau = 1.7;
            sp.sigma_mode_sq[0] = 0.4;
            sp.w[0][0][0] = 0.9;
        }
        let (scale, s2, w) = (1.7, 0.4, 0.9);
        let n = 40_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                s.step_beta(0, 1, 0, 0, 0).unwrap();
                slice(&s, 1, 0, 0, 0)
            })
            .collect();
        let q = 3;
        for a in 0..q {
            let (m, se) = mean_se(&draws.iter().map(|v| v[a]).collect::<Vec<_>>());
            assert!(m.abs() < 3.5 * se, "mean {m}");
            for b in 0..q {
                let expected = match prior {
                    BetaPrior::Collapsed => scale * (if a == b { s2 } else { 0.0 } + w),
                    BetaPrior::Isotropic => if a == b { scale * (w + s2) } else { 0.0 },
                };
                let cov = draws.iter().map(|v| v[a] * v[b]).sum::<f64>() / n as f64;
                let (vaa, vbb) = match prior {
                    BetaPrior::Collapsed => (scale * (s2 + w), scale * (s2 + w)),
                    BetaPrior::Isotropic => (scale * (w + s2), scale * (w + s2)),
                };
                let se = ((vaa * vbb + expected * expected) / n as f64).sqrt();
                assert!((cov - expected).abs() < 3.5 * se, "cov[{a},{b}] {cov} vs {expected}");
            }
        }
    }

    #[test]
    fn empty_regime_draws_from_collapsed_prior() {
        empty_regime_covariance(BetaPrior::Collapsed);
    }

    #[test]
    fn empty_regime_draws_from_isotropic_prior() {
        empty_regime_covariance(BetaPrior::Isotropic);
    }

    #[test]
    fn flat_prior_single_observation() {
        let mut s = toy(&[2, 2], 1, 1, 1, 2);
        let x = Tensor::from_fn(&[2, 2], |i| if i == [0, 0] { 1.0 } else { 0.0 });
        let y = 1.3;
        s.data = Dataset::shared(&[vec![y]], vec![x]).unwrap();
        s.caches = vec![super::super::cache::SliceCache::new(s.data.x(0))];
        {
            let sp = &mut s.state_mut().params[0][0];
            sp.tau = 1e12;
            sp.noise_var = 1.0;
            sp.mu = 0.2;
            *sp.factors.factor_mut(0, 1) = Tensor::filled(&[2, 2], 1.0);
        }
        s.resync();
        let n = 20_000;
        let b0: Vec<f64> = (0..n)
            .map(|_| {
                s.step_beta(0, 0, 0, 0, 0).unwrap();
                slice(&s, 0, 0, 0, 0)[0]
            })
            .collect();
        let (m, se) = mean_se(&b0);
        assert!((m - (y - 0.2)).abs() < 3.0 * se + 1e-6, "{m}");
    }

    #[test]
    fn step_beta_matches_two_dimensional_quadrature() {
        // Coefficient 1×2: slice 0 of mode 0 holds both entries of factor 1.
        let mut s = toy(&[1, 2], 50, 1, 1, 3);
        let h = [0.8, -1.3];
        let (tau, s2, w, noise, mu) = (2.0, 0.5, 0.7, 0.6, 0.1);
        {
            let sp = &mut s.state_mut().params[0][0];
            sp.tau = tau;
            sp.sigma_mode_sq[0] = s2;
            sp.w[0][0][0] = w;
            sp.noise_var = noise;
            sp.mu = mu;
            *sp.factors.factor_mut(0, 1) = Tensor::new(vec![1, 2], h.to_vec()).unwrap();
        }
        s.resync();
        let xs: Vec<[f64; 2]> = s.data.x(0).iter().map(|x| [x.data()[0], x.data()[1]]).collect();
        let y = s.data.y(0).to_vec();

        // Unnormalized log posterior with γ integrated by trapezoid.
        let sd_g = (tau * w).sqrt();
        let log_post = |b: [f64; 2]| -> f64 {
            let ll: f64 = xs
                .iter()
                .zip(&y)
                .map(|(x, yt)| -(yt - mu - b[0] * h[0] * x[0] - b[1] * h[1] * x[1]).powi(2) / (2.0 * noise))
                .sum();
            let n_g = 801;
            let lo = -10.0 * sd_g;
            let step = 20.0 * sd_g / (n_g - 1) as f64;
            let prior: f64 = (0..n_g)
                .map(|i| {
                    let g = lo + i as f64 * step;
                    let wt = if i == 0 || i == n_g - 1 { 0.5 } else { 1.0 };
                    wt * (-(b[0] - g).powi(2) / (2.0 * tau * s2) - (b[1] - g).powi(2) / (2.0 * tau * s2) - g * g / (2.0 * tau * w)).exp()
                })
                .sum::<f64>()
                * step;
            ll + prior.ln()
        };
        // Locate the mode coarsely, then integrate on a box around it.
        let n_grid = 161;
        let (mut c0, mut c1, mut best) = (0.0, 0.0, f64::NEG_INFINITY);
        for i in 0..81 {
            for j in 0..81 {
                let b = [-4.0 + 0.1 * i as f64, -4.0 + 0.1 * j as f64];
                let v = log_post(b);
                if v > best {
                    best = v;
                    c0 = b[0];
                    c1 = b[1];
                }
            }
        }
        let half = 1.5;
        let (mut z, mut m0, mut m1) = (0.0, 0.0, 0.0);
        for i in 0..n_grid {
            for j in 0..n_grid {
                let b = [c0 - half + 2.0 * half * i as f64 / (n_grid - 1) as f64, c1 - half + 2.0 * half * j as f64 / (n_grid - 1) as f64];
                let p = (log_post(b) - best).exp();
                z += p;
                m0 += p * b[0];
                m1 += p * b[1];
            }
        }
        let oracle = [m0 / z, m1 / z];

        let n = 20_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                s.step_beta(0, 0, 0, 0, 0).unwrap();
                slice(&s, 0, 0, 0, 0)
            })
            .collect();
        for a in 0..2 {
            let (m, se) = mean_se(&draws.iter().map(|v| v[a]).collect::<Vec<_>>());
            assert!((m - oracle[a]).abs() < 3.0 * se, "entry {a}: {m} vs {}", oracle[a]);
        }
    }

    #[test]
    fn gamma_conditional() {
        let mut s = toy(&[3, 4], 5, 1, 2, 4);
        let mut rng = rng_stream(40, 0);
        for trial in 0..3 {
            let (tau, z, s2, w) = (
                rng.random_range(0.5..3.0),
                rng.random_range(0.2..0.8),
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
            );
            {
                let sp = &mut s.state_mut().params[0][0];
                sp.tau = tau;
                sp.zeta = vec![z, 1.0 - z];
                sp.sigma_mode_sq[1] = s2;
                sp.w[0][1][2] = w;
            }
            let beta = slice(&s, 0, 0, 1, 2);
            // Precision of γ: prior 1/(τζw) plus q/(τζσ²).
            let q = beta.len() as f64;
            let prec = 1.0 / (tau * z * w) + q / (tau * z * s2);
            let mean = beta.iter().sum::<f64>() / (tau * z * s2) / prec;
            let n = 100_000;
            let g: Vec<f64> = (0..n)
                .map(|_| {
                    s.step_gamma(0, 0, 0, 1, 2).unwrap();
                    s.state().params[0][0].marginals.get(0, 1)[2]
                })
                .collect();
            let (m, se) = mean_se(&g);
            assert!((m - mean).abs() < 3.0 * se, "trial {trial}: {m} vs {mean}");
            let var = g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let var_se = (2.0 / n as f64).sqrt() / prec;
            assert!((var - 1.0 / prec).abs() < 3.0 * var_se);
        }
        // σ²_m → 0: mean → slice average, variance → 0.
        s.state_mut().params[0][0].sigma_mode_sq[1] = 1e-14;
        let beta = slice(&s, 0, 0, 1, 2);
        let avg = beta.iter().sum::<f64>() / beta.len() as f64;
        s.step_gamma(0, 0, 0, 1, 2).unwrap();
        assert!((s.state().params[0][0].marginals.get(0, 1)[2] - avg).abs() < 1e-5);
        // β = 0 → mean 0.
        for d in 0..2 {
            *s.state_mut().params[0][0].factors.factor_mut(d, 1) = Tensor::zeros(&[3, 4]);
        }
        s.state_mut().params[0][0].sigma_mode_sq[1] = 1.0;
        let g: Vec<f64> = (0..20_000)
            .map(|_| {
                s.step_gamma(0, 0, 1, 1, 0).unwrap();
                s.state().params[0][0].marginals.get(1, 1)[0]
            })
            .collect();
        let (m, se) = mean_se(&g);
        assert!(m.abs() < 3.0 * se);
    }

    #[test]
    fn zeta_single_component() {
        let mut s = toy(&[3, 3], 10, 1, 1, 5);
        for _ in 0..10 {
            s.step_zeta_tau(0, 0).unwrap();
            assert_eq!(s.state().params[0][0].zeta, vec![1.0]);
            assert!(s.state().params[0][0].tau > 0.0);
        }
        assert_eq!(s.zeta_acceptance(), 1.0);
    }

    #[test]
    fn zeta_exchangeable_components() {
        let mut s = toy(&[3, 2], 10, 1, 3, 6);
        s.hyper.a_tau = s.hyper.alpha;
        {
            let sp = &mut s.state_mut().params[0][0];
            for d in 1..3 {
                for m in 0..2 {
                    let f = sp.factors.factor(0, m).clone();
                    *sp.factors.factor_mut(d, m) = f;
                    let g = sp.marginals.get(0, m).to_vec();
                    *sp.marginals.get_mut(d, m) = g;
                }
                sp.w[d] = sp.w[0].clone();
            }
        }
        let n = 20_000;
        let z: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                s.step_zeta_tau(0, 0).unwrap();
                s.state().params[0][0].zeta.clone()
            })
            .collect();
        assert_eq!(s.zeta_acceptance(), 1.0);
        for d in 0..3 {
            let (m, se) = mean_se(&z.iter().map(|v| v[d]).collect::<Vec<_>>());
            assert!((m - 1.0 / 3.0).abs() < 3.0 * se, "ζ_{d}: {m}");
        }
    }

    #[test]
    fn zeta_tau_matches_quadrature_when_a_tau_differs_from_alpha() {
        let mut s = toy(&[1, 2], 10, 1, 2, 7);
        s.hyper.alpha = 1.0;
        s.hyper.a_tau = 3.0;
        s.hyper.b_tau = 1.5;
        {
            let sp = &mut s.state_mut().params[0][0];
            *sp.factors.factor_mut(1, 0) = Tensor::new(vec![1, 2], vec![1.5, -0.9]).unwrap();
            sp.marginals.get_mut(1, 1)[1] = 0.8;
        }
        let sp = s.state().params[0][0].clone();
        // C_d from first principles: every factor entry against its location.
        let c: Vec<f64> = (0..2)
            .map(|d| {
                let mut total = 0.0;
                for m in 0..2 {
                    let loc = sp.marginals.location(d, m, &[1, 2]);
                    let f = sp.factors.factor(d, m);
                    total += f.data().iter().zip(loc.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sp.sigma_mode_sq[m];
                    total += sp.marginals.get(d, m).iter().zip(&sp.w[d][m]).map(|(g, w)| g * g / w).sum::<f64>();
                }
                total
            })
            .collect();
        let i0 = 2.0 * 2.0 + 3.0;
        let (alpha, a_tau, b_tau) = (1.0, 3.0, 1.5);
        let log_target = |u0: f64, u1: f64| -> f64 {
            // log φ coordinates, Jacobian included.
            let (f0, f1) = (u0.exp(), u1.exp());
            let mut v = (a_tau - alpha) * (f0 + f1).ln() + u0 + u1;
            for (f, cd) in [(f0, c[0]), (f1, c[1])] {
                v += (alpha / 2.0 - i0 / 2.0 - 1.0) * f.ln() - b_tau * f - cd / (2.0 * f);
            }
            v
        };
        let n_grid = 600;
        let (lo, hi) = (-12.0, 6.0);
        let step = (hi - lo) / n_grid as f64;
        let mut best = f64::NEG_INFINITY;
        let pts: Vec<f64> = (0..n_grid).map(|i| lo + (i as f64 + 0.5) * step).collect();
        for &u0 in &pts {
            for &u1 in &pts {
                best = best.max(log_target(u0, u1));
            }
        }
        let (mut z, mut mz, mut mt) = (0.0, 0.0, 0.0);
        for &u0 in &pts {
            for &u1 in &pts {
                let p = (log_target(u0, u1) - best).exp();
                let (f0, f1) = (u0.exp(), u1.exp());
                z += p;
                mz += p * f0 / (f0 + f1);
                mt += p * (f0 + f1);
            }
        }
        let (oracle_zeta, oracle_tau) = (mz / z, mt / z);

        let n = 100_000;
        let mut zs = Vec::with_capacity(n);
        let mut ts = Vec::with_capacity(n);
        for _ in 0..n {
            s.step_zeta_tau(0, 0).unwrap();
            zs.push(s.state().params[0][0].zeta[0]);
            ts.push(s.state().params[0][0].tau);
        }
        assert!(s.zeta_acceptance() > 0.2 && s.zeta_acceptance() < 1.0);
        let (m, se) = batch_mean_se(&zs);
        assert!((m - oracle_zeta).abs() < 3.0 * se, "ζ₁ {m} vs {oracle_zeta}");
        let (m, se) = batch_mean_se(&ts);
        assert!((m - oracle_tau).abs() < 3.0 * se, "τ {m} vs {oracle_tau}");
    }

    #[test]
    fn lambda_and_w_prior_refresh() {
        let mut s = toy(&[4, 3], 5, 1, 1, 8);
        for m in 0..2 {
            s.state_mut().params[0][0].marginals.get_mut(0, m).iter_mut().for_each(|g| *g = 0.0);
        }
        let (a, b) = (s.hyper.a_lambda, s.hyper.b_lambda);
        let n = 50_000;
        let mut lam = Vec::with_capacity(n);
        let mut wl = Vec::with_capacity(n);
        for _ in 0..n {
            s.step_lambda_w(0, 0).unwrap();
            let sp = &s.state().params[0][0];
            lam.push(sp.lambda[0][0]);
            wl.push(sp.w[0][0][1] * sp.lambda[0][0].powi(2));
        }
        let (m, se) = mean_se(&lam);
        assert!((m - (a + 4.0) / b).abs() < 3.0 * se);
        // w | λ ~ Gamma(1/2, λ²/2), so E[wλ²] = 1.
        let (m, se) = mean_se(&wl);
        assert!((m - 1.0).abs() < 3.0 * se, "{m}");
    }

    #[test]
    fn sigma_mode_zero_deviation_and_quadrature() {
        let mut s = toy(&[2, 3], 5, 1, 2, 9);
        let sp = s.state().params[0][0].clone();
        let b: f64 = (0..2)
            .map(|d| {
                let loc = sp.marginals.location(d, 0, &[2, 3]);
                let dev: f64 = sp.factors.factor(d, 0).data().iter().zip(loc.data()).map(|(x, g)| (x - g).powi(2)).sum();
                dev / (sp.tau * sp.zeta[d])
            })
            .sum();
        let p = s.hyper.a_sigma - 2.0 * 6.0 / 2.0;
        let a = 2.0 * s.hyper.b_sigma;
        let kernel = |x: f64| (p - 1.0) * x.ln() - (a * x + b / x) / 2.0;
        let mode = ((p - 1.0) + ((p - 1.0).powi(2) + a * b).sqrt()) / a;
        let peak = kernel(mode);
        let z = integrate_positive(|x| (kernel(x) - peak).exp(), mode, 1e-12);
        let m1 = integrate_positive(|x| x * (kernel(x) - peak).exp(), mode, 1e-12);
        let oracle = m1 / z;
        let n = 50_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                s.step_sigma_mode(0, 0, 0).unwrap();
                s.state().params[0][0].sigma_mode_sq[0]
            })
            .collect();
        let (m, se) = mean_se(&draws);
        assert!((m - oracle).abs() < 3.0 * se, "{m} vs {oracle}");

        // Factors exactly on their locations.
        {
            let sp = &mut s.state_mut().params[0][0];
            for d in 0..2 {
                let loc = sp.marginals.location(d, 1, &[2, 3]);
                *sp.factors.factor_mut(d, 1) = loc;
            }
        }
        s.step_sigma_mode(0, 0, 1).unwrap();
        let v = s.state().params[0][0].sigma_mode_sq[1];
        assert!(v > 0.0 && v < 1e-200, "{v}");
    }

    #[test]
    fn noise_and_mu_prior_refresh_on_empty_regime() {
        let mut s = toy(&[2, 2], 10, 2, 1, 10);
        set_path(&mut s, vec![0; 10]);
        let n = 50_000;
        let mut mus = Vec::with_capacity(n);
        let mut below = 0usize;
        for _ in 0..n {
            s.step_noise_and_mu(0, 1).unwrap();
            mus.push(s.state().params[0][1].mu);
            if s.state().params[0][1].noise_var < 1.0 {
                below += 1;
            }
        }
        let (m, se) = mean_se(&mus);
        assert!(m.abs() < 3.0 * se);
        let var = mus.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - 100.0).abs() < 3.0 * 100.0 * (2.0 / n as f64).sqrt());
        // P(σ² < 1) under InvGamma(0.01, 0.01) = Q(0.01, 0.01).
        use statrs::distribution::{ContinuousCDF, InverseGamma};
        let p = InverseGamma::new(0.01, 0.01).unwrap().cdf(1.0);
        let f = below as f64 / n as f64;
        assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{f} vs {p}");
    }

    #[test]
    fn noise_and_mu_match_joint_quadrature() {
        let mut s = toy(&[2, 2], 200, 1, 1, 11);
        let sp = s.state().params[0][0].clone();
        let b = sp.coefficient();
        let r: Vec<f64> = (0..200)
            .map(|t| s.data.y(0)[t] - crate::tensor::dot(b.data(), s.data.x(0)[t].data()) + 0.5)
            .collect();
        let (an, bn, smu) = (s.hyper.a_noise, s.hyper.b_noise, s.hyper.sigma_mu_sq);
        let n = r.len() as f64;
        let log_post = |mu: f64, v: f64| -> f64 {
            let ss: f64 = r.iter().map(|x| (x - mu).powi(2)).sum();
            -(n / 2.0) * v.ln() - ss / (2.0 * v) - mu * mu / (2.0 * smu) - (an + 1.0) * v.ln() - bn / v
        };
        let rbar = r.iter().sum::<f64>() / n;
        let s2 = r.iter().map(|x| (x - rbar).powi(2)).sum::<f64>() / n;
        let (mut z, mut mm, mut mv, mut best) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
        let g = 400;
        let grid: Vec<(f64, f64)> = (0..g)
            .flat_map(|i| (0..g).map(move |j| (i, j)))
            .map(|(i, j)| {
                let mu = rbar + (i as f64 / (g - 1) as f64 - 0.5) * 12.0 * (s2 / n).sqrt();
                let v = s2 * (0.5 + j as f64 / (g - 1) as f64);
                (mu, v)
            })
            .collect();
        for &(mu, v) in &grid {
            best = best.max(log_post(mu, v));
        }
        for &(mu, v) in &grid {
            let p = (log_post(mu, v) - best).exp();
            z += p;
            mm += p * mu;
            mv += p * v;
        }
        let (om, ov) = (mm / z, mv / z);
        let iters = 40_000;
        let mut mus = Vec::with_capacity(iters);
        let mut vs = Vec::with_capacity(iters);
        for _ in 0..iters {
            s.step_noise_and_mu(0, 0).unwrap();
            mus.push(s.state().params[0][0].mu);
            vs.push(s.state().params[0][0].noise_var);
        }
        let (m, se) = batch_mean_se(&mus);
        assert!((m - (om - 0.5)).abs() < 3.0 * se, "µ {m} vs {}", om - 0.5);
        let (m, se) = batch_mean_se(&vs);
        assert!((m - ov).abs() < 3.0 * se, "σ² {m} vs {ov}");
    }

    #[test]
    fn mu_flat_prior_limit() {
        let mut s = toy(&[2, 2], 400, 1, 1, 12);
        s.hyper.sigma_mu_sq = 1e12;
        let sp = s.state().params[0][0].clone();
        let b = sp.coefficient();
        let r: Vec<f64> = (0..400).map(|t| s.data.y(0)[t] - crate::tensor::dot(b.data(), s.data.x(0)[t].data())).collect();
        let rbar = r.iter().sum::<f64>() / 400.0;
        let mus: Vec<f64> = (0..20_000)
            .map(|_| {
                s.step_noise_and_mu(0, 0).unwrap();
                s.state().params[0][0].mu
            })
            .collect();
        let (m, se) = batch_mean_se(&mus);
        assert!((m - rbar).abs() < 3.0 * se);
    }

    #[test]
    fn transition_counts() {
        let mut s = toy(&[2, 2], 101, 2, 1, 13);
        set_path(&mut s, (0..101).map(|t| t % 2).collect());
        let n = 50_000;
        let mut p01 = Vec::with_capacity(n);
        for _ in 0..n {
            s.step_transition().unwrap();
            p01.push(s.state().chain.trans[0][1]);
        }
        let (m, se) = mean_se(&p01);
        assert!((m - 51.0 / 52.0).abs() < 3.0 * se, "{m}");

        let mut s = toy(&[2, 2], 1, 2, 1, 14);
        let p: Vec<f64> = (0..n)
            .map(|_| {
                s.step_transition().unwrap();
                s.state().chain.trans[1][0]
            })
            .collect();
        let (m, se) = mean_se(&p);
        assert!((m - 0.5).abs() < 3.0 * se);

        let mut s = toy(&[2, 2], 5, 1, 1, 15);
        s.step_transition().unwrap();
        assert_eq!(s.state().chain.trans, vec![vec![1.0]]);
    }

    #[test]
    fn residuals_stay_consistent_through_sweeps() {
        let mut s = toy(&[3, 4], 30, 2, 2, 16);
        s.cfg.ident_rule = crate::sampler::IdentRule::FrobeniusOrder;
        for _ in 0..5 {
            s.sweep().unwrap();
            let f: Vec<f64> = s.state().params[0].iter().map(|sp| sp.coefficient().frobenius_norm()).collect();
            assert!(f[0] >= f[1]);
            for k in 0..2 {
                for d in 0..2 {
                    for m in 0..2 {
                        for j in 0..[3, 4][m] {
                            s.step_beta(0, k, d, m, j).unwrap();
                        }
                    }
                }
            }
            let incremental = s.resid.clone();
            s.recompute_residuals();
            for (a, b) in incremental.iter().flatten().flatten().zip(s.resid.iter().flatten().flatten()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn run_chain_storage_and_determinism() {
        let mut rng = rng_stream(17, 0);
        let xs: Vec<Tensor> = (0..25).map(|_| Tensor::from_fn(&[3, 3], |_| std_normal(&mut rng))).collect();
        let rows: Vec<Vec<f64>> = (0..25).map(|_| vec![std_normal(&mut rng), std_normal(&mut rng)]).collect();
        let data = Dataset::shared(&rows, xs).unwrap();
        let hyper = Hyperparameters::defaults(2, 2, 2).unwrap();
        let cfg = ChainConfig { iterations: 6, burn_in: 5, thin: 1, seed: 3, ..ChainConfig::default() };
        let a = run_chain(&data, &hyper, &cfg).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.outcome_mse.len(), 6);
        let b = run_chain(&data, &hyper, &cfg).unwrap();
        assert_eq!(a, b);
        let cfg = ChainConfig { iterations: 20, burn_in: 4, thin: 3, seed: 3, ..ChainConfig::default() };
        let c = run_chain(&data, &hyper, &cfg).unwrap();
        assert_eq!(c.draws.iter().map(|d| d.sweep).collect::<Vec<_>>(), vec![4, 7, 10, 13, 16, 19]);
        let chains = crate::sampler::run_chains(&data, &hyper, &cfg, 2).unwrap();
        assert_eq!(chains[0], c);
        assert_ne!(chains[0].draws, chains[1].draws);
        let bad = ChainConfig { iterations: 5, burn_in: 5, ..cfg.clone() };
        assert!(run_chain(&data, &hyper, &bad).is_err());
        let state = ModelState::initial(&data, &hyper, &mut rng_stream(0, 0)).unwrap();
        let mut wrong = hyper.clone();
        wrong.k = 3;
        wrong.nu = vec![1.0; 3];
        assert!(Sampler::with_state(data.clone(), wrong, cfg.clone(), state).is_err());
    }

    #[test]
    fn path_is_held_during_warmup() {
        let mut s = toy(&[3, 3], 40, 2, 2, 18);
        s.cfg.burn_in = 8;
        s.cfg.path_warmup = 5;
        let start = s.state().chain.path.clone();
        for _ in 0..5 {
            s.sweep().unwrap();
            assert_eq!(s.state().chain.path, start);
        }
        let moved = (0..3).any(|_| {
            s.sweep().unwrap();
            s.state().chain.path != start
        });
        assert!(moved);
        // The warm-up never outlasts the burn-in.
        let mut s = toy(&[3, 3], 40, 2, 2, 18);
        s.cfg.burn_in = 2;
        s.cfg.path_warmup = 50;
        s.sweep().unwrap();
        s.sweep().unwrap();
        let held = s.state().chain.path.clone();
        let moved = (0..3).any(|_| {
            s.sweep().unwrap();
            s.state().chain.path != held
        });
        assert!(moved);
    }

    #[test]
    fn run_chain_keeps_the_most_likely_start() {
        let mut rng = rng_stream(19, 0);
        let xs: Vec<Tensor> = (0..40).map(|_| Tensor::from_fn(&[3, 3], |_| std_normal(&mut rng))).collect();
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![std_normal(&mut rng)]).collect();
        let data = Dataset::shared(&rows, xs).unwrap();
        let hyper = Hyperparameters::defaults(2, 2, 2).unwrap();
        let cfg = ChainConfig { iterations: 30, burn_in: 20, thin: 2, seed: 5, chain: 1, path_warmup: 4, starts: 3, start_sweeps: 3, ..ChainConfig::default() };
        let mut scores = Vec::new();
        let mut traces = Vec::new();
        for r in 0..3u64 {
            let mut s = Sampler::with_stream(data.clone(), hyper.clone(), cfg.clone(), 1 + (r << 32)).unwrap();
            traces.push((0..7).map(|_| s.sweep().unwrap().outcome_mse).collect::<Vec<_>>());
            scores.push(s.log_marginal().unwrap());
        }
        let best = (0..3).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        let draws = run_chain(&data, &hyper, &cfg).unwrap();
        assert_eq!(draws.outcome_mse.len(), 30);
        assert_eq!(&draws.outcome_mse[..7], traces[best].as_slice());
        assert_eq!(draws.draws.iter().map(|d| d.sweep).collect::<Vec<_>>(), vec![20, 22, 24, 26, 28]);

        // One start is the plain chain on the chain's own stream.
        let single = ChainConfig { starts: 1, ..cfg.clone() };
        let mut s = Sampler::new(data.clone(), hyper.clone(), single.clone()).unwrap();
        let manual: Vec<f64> = (0..30).map(|_| s.sweep().unwrap().outcome_mse).collect();
        assert_eq!(run_chain(&data, &hyper, &single).unwrap().outcome_mse, manual);
        assert!(run_chain(&data, &hyper, &ChainConfig { starts: 0, ..cfg }).is_err());
    }
}
