//! Random variate generators and log-densities for the conditional families
//! of the Gibbs sampler.
//!
//! Every sampler takes an explicit `&mut impl Rng`; draws are a pure function
//! of the generator state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature;

pub type ChainRng = ChaCha8Rng;

/// Generator for stream `stream` of `seed`. Distinct streams never overlap.
pub fn rng_stream(seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform on the open interval (0, 1).
#[inline]
fn open01(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Generalized inverse Gaussian with density proportional to
/// `x^{p−1} exp(−(a x + b/x)/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GigParams {
    pub p: f64,
    pub a: f64,
    pub b: f64,
}

impl GigParams {
    pub fn new(p: f64, a: f64, b: f64) -> Result<Self> {
        let g = GigParams { p, a, b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let GigParams { p, a, b } = *self;
        let finite = p.is_finite() && a.is_finite() && b.is_finite();
        let ok = finite
            && a >= 0.0
            && b >= 0.0
            && ((a > 0.0 && b > 0.0) || (a > 0.0 && b == 0.0 && p > 0.0) || (a == 0.0 && b > 0.0 && p < 0.0));
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("GiG(p={p}, a={a}, b={b}) is not integrable")))
        }
    }
}

/// Below this `√(ab)` and for `|p| ≥ 1/2` the Gamma / inverse-Gamma limits
/// are used; the neglected mass is of order `ω^{2|p|}`.
const GIG_LIMIT_OMEGA: f64 = 1e-10;

pub fn sample_gig(params: GigParams, rng: &mut impl Rng) -> Result<f64> {
    params.validate()?;
    let GigParams { p, a, b } = params;
    if b == 0.0 {
        return sample_gamma(p, a / 2.0, rng);
    }
    if a == 0.0 {
        return sample_inv_gamma(-p, b / 2.0, rng);
    }
    let omega = (a * b).sqrt();
    if omega < GIG_LIMIT_OMEGA && p.abs() >= 0.5 {
        return if p > 0.0 { sample_gamma(p, a / 2.0, rng) } else { sample_inv_gamma(-p, b / 2.0, rng) };
    }
    let alpha = (b / a).sqrt();
    let lambda = p.abs();
    let y = if lambda > 2.0 || omega > 3.0 {
        gig_rou_shift(lambda, omega, rng)
    } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        gig_rou_noshift(lambda, omega, rng)
    } else {
        gig_small(lambda, omega, rng)
    };
    let x = if p < 0.0 { alpha / y } else { alpha * y };
    Ok(x.max(f64::MIN_POSITIVE))
}

/// Log of the standardized kernel `y^{λ−1} exp(−ω(y + 1/y)/2)`.
#[inline]
fn gig_log_kernel(lambda: f64, omega: f64, y: f64) -> f64 {
    (lambda - 1.0) * y.ln() - 0.5 * omega * (y + 1.0 / y)
}

fn gig_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        ((lambda - 1.0).hypot(omega) + (lambda - 1.0)) / omega
    } else {
        omega / ((1.0 - lambda).hypot(omega) + (1.0 - lambda))
    }
}

/// Ratio-of-uniforms without mode shift.
fn gig_rou_noshift(lambda: f64, omega: f64, rng: &mut impl Rng) -> f64 {
    let xm = gig_mode(lambda, omega);
    let nc = gig_log_kernel(lambda, omega, xm);
    let ym = ((lambda + 1.0).hypot(omega) + (lambda + 1.0)) / omega;
    let vmax = ym * (0.5 * (gig_log_kernel(lambda, omega, ym) - nc)).exp();
    loop {
        let u = open01(rng);
        let v = open01(rng) * vmax;
        let y = v / u;
        if 2.0 * u.ln() <= gig_log_kernel(lambda, omega, y) - nc {
            return y;
        }
    }
}

/// Ratio-of-uniforms shifted by the mode; the bounding box comes from the
/// roots of a cubic.
fn gig_rou_shift(lambda: f64, omega: f64, rng: &mut impl Rng) -> f64 {
    let xm = gig_mode(lambda, omega);
    let nc = gig_log_kernel(lambda, omega, xm);

    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * PI).cos() - a / 3.0;

    let (y1, y2) = if y1 > xm && y2 > 0.0 && y2 < xm {
        (y1, y2)
    } else {
        shift_bounds_numeric(lambda, omega, xm)
    };
    let uplus = (y1 - xm) * (0.5 * (gig_log_kernel(lambda, omega, y1) - nc)).exp();
    let uminus = (y2 - xm) * (0.5 * (gig_log_kernel(lambda, omega, y2) - nc)).exp();

    loop {
        let u = open01(rng);
        let v = uminus + open01(rng) * (uplus - uminus);
        let y = v / u + xm;
        if y <= 0.0 {
            continue;
        }
        if 2.0 * u.ln() <= gig_log_kernel(lambda, omega, y) - nc {
            return y;
        }
    }
}

/// Extremes of `(y − xm)·√f(y)` on each side of the mode by golden-section
/// search; used when the closed-form cubic roots lose precision.
fn shift_bounds_numeric(lambda: f64, omega: f64, xm: f64) -> (f64, f64) {
    let h = |y: f64| (y - xm).abs().ln() + 0.5 * gig_log_kernel(lambda, omega, y);
    let golden = |mut lo: f64, mut hi: f64| {
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let m1 = hi - r * (hi - lo);
            let m2 = lo + r * (hi - lo);
            if h(m1) < h(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        0.5 * (lo + hi)
    };
    let mut hi = xm * 2.0 + 1.0;
    while h(hi) > h(0.5 * (xm + hi)) {
        hi *= 2.0;
    }
    (golden(xm, hi), golden(0.0, xm))
}

/// Piecewise-constant / power / exponential hat for `0 ≤ λ < 1`, small `ω`.
fn gig_small(lambda: f64, omega: f64, rng: &mut impl Rng) -> f64 {
    let lk = |y: f64| gig_log_kernel(lambda, omega, y);
    let m = gig_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let xstar = x0.max(2.0 / omega);

    let k1 = lk(m).exp();
    let a1 = k1 * x0;
    let (k2, a2) = if x0 < 2.0 / omega {
        let k2 = (-omega).exp();
        let a2 = if lambda == 0.0 {
            k2 * (2.0 / (omega * omega)).ln()
        } else {
            k2 * ((2.0 / omega).powf(lambda) - x0.powf(lambda)) / lambda
        };
        (k2, a2)
    } else {
        (0.0, 0.0)
    };
    let k3 = xstar.powf(lambda - 1.0);
    let a3 = 2.0 * k3 * (-xstar * omega / 2.0).exp() / omega;
    let total = a1 + a2 + a3;

    loop {
        let u = open01(rng);
        let mut v = open01(rng) * total;
        let (y, log_hat) = if v <= a1 {
            (x0 * v / a1, k1.ln())
        } else if v <= a1 + a2 {
            v -= a1;
            let y = if lambda == 0.0 {
                omega * (v * omega.exp()).exp()
            } else {
                (x0.powf(lambda) + v * lambda / k2).powf(1.0 / lambda)
            };
            (y, k2.ln() + (lambda - 1.0) * y.ln())
        } else {
            v -= a1 + a2;
            let inner = (-xstar * omega / 2.0).exp() - v * omega / (2.0 * k3);
            if inner <= 0.0 {
                continue;
            }
            let y = -2.0 / omega * inner.ln();
            (y, k3.ln() - y * omega / 2.0)
        };
        if y > 0.0 && u.ln() + log_hat <= lk(y) {
            return y;
        }
    }
}

/// Gamma with the given shape and rate.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut impl Rng) -> Result<f64> {
    Ok(log_gamma_variate(shape, rate, rng)?.exp().max(f64::MIN_POSITIVE))
}

/// Logarithm of a Gamma(shape, rate) variate. Small shapes use
/// `G(a) = G(a+1) U^{1/a}` so the result never underflows.
pub fn log_gamma_variate(shape: f64, rate: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(Error::Parameter(format!("Gamma(shape={shape}, rate={rate})")));
    }
    if shape < 1.0 {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid").sample(rng);
        Ok(g.ln() + open01(rng).ln() / shape - rate.ln())
    } else {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid").sample(rng);
        Ok(g.ln() - rate.ln())
    }
}

/// Inverse-Gamma with density proportional to `x^{−shape−1} exp(−scale/x)`.
pub fn sample_inv_gamma(shape: f64, scale: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::Parameter(format!("InvGamma(shape={shape}, scale={scale})")));
    }
    Ok((-log_gamma_variate(shape, scale, rng)?).exp().clamp(f64::MIN_POSITIVE, f64::MAX))
}

pub fn sample_dirichlet(conc: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    if conc.is_empty() || conc.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::Parameter(format!("Dirichlet concentration {conc:?}")));
    }
    let logs = conc.iter().map(|&c| log_gamma_variate(c, 1.0, rng)).collect::<Result<Vec<_>>>()?;
    Ok(softmax(&logs))
}

/// Normalizes `exp(logs)` without overflow.
pub fn softmax(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Index drawn with probability proportional to `probs`.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || !(total > 0.0) {
        return Err(Error::Parameter(format!("categorical probabilities {probs:?}")));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

/// Gaussian draw from a covariance matrix.
pub fn sample_mvn(mean: &[f64], cov: &DMatrix<f64>, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Dimension(format!("mean has {n} entries, covariance is {}×{}", cov.nrows(), cov.ncols())));
    }
    let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let z = DVector::from_fn(n, |_, _| std_normal(rng));
    let x = chol.l() * z;
    Ok(mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect())
}

/// Factorizes a symmetric precision matrix, retrying with diagonal jitter
/// `1e−10·trace/q`, grown up to `1e−4·trace/q`, when it is not numerically
/// positive definite.
pub fn cholesky_jittered(prec: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = prec.clone().cholesky() {
        return Ok(c);
    }
    let n = prec.nrows();
    let base = 1e-10 * prec.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut jitter = base;
    for _ in 0..4 {
        let mut m = prec.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c);
        }
        jitter *= 100.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Draw from `N(Λ⁻¹h, Λ⁻¹)` given the precision `Λ` and linear term `h`.
pub fn sample_mvn_precision(prec: &DMatrix<f64>, h: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = h.len();
    if prec.nrows() != n || prec.ncols() != n {
        return Err(Error::Dimension(format!("linear term has {n} entries, precision is {}×{}", prec.nrows(), prec.ncols())));
    }
    let chol = cholesky_jittered(prec)?;
    let mean = chol.solve(&DVector::from_column_slice(h));
    // Λ = L Lᵀ, so Lᵀ x = z gives x with covariance Λ⁻¹.
    let z = DVector::from_fn(n, |_, _| std_normal(rng));
    let dev = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(Error::NotPositiveDefinite)?;
    Ok(mean.iter().zip(dev.iter()).map(|(m, d)| m + d).collect())
}

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}

pub fn log_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn log_inv_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn log_dirichlet_pdf(x: &[f64], conc: &[f64]) -> f64 {
    let a0: f64 = conc.iter().sum();
    ln_gamma(a0) + x.iter().zip(conc).map(|(&xi, &ai)| (ai - 1.0) * xi.ln() - ln_gamma(ai)).sum::<f64>()
}

/// `ln K_ν(z)` for `z > 0` from `K_ν(z) = ∫_0^∞ exp(−z cosh t) cosh(νt) dt`.
pub fn log_bessel_k(nu: f64, z: f64) -> f64 {
    let nu = nu.abs();
    // Integrand peak of exp(−z cosh t + ν t): sinh t* = ν/z.
    let t_star = (nu / z).asinh();
    let log_peak = -z * t_star.cosh() + nu * t_star;
    let f = |t: f64| {
        let e = -z * t.cosh() + (nu * t).cosh().ln() - log_peak;
        e.exp()
    };
    let width = 1.0 / (z * t_star.cosh()).sqrt().max(1e-3);
    let hi = t_star + 40.0 * width + 5.0;
    let mut val = 0.0;
    let pieces = 64;
    for i in 0..pieces {
        let lo_t = hi * i as f64 / pieces as f64;
        let hi_t = hi * (i + 1) as f64 / pieces as f64;
        val += quadrature::integrate(f, lo_t, hi_t, 1e-14);
    }
    log_peak + val.ln()
}

/// Normalized GiG log-density.
pub fn log_gig_pdf(x: f64, g: GigParams) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let GigParams { p, a, b } = g;
    let log_norm = if b == 0.0 {
        return log_gamma_pdf(x, p, a / 2.0);
    } else if a == 0.0 {
        return log_inv_gamma_pdf(x, -p, b / 2.0);
    } else {
        let omega = (a * b).sqrt();
        // ∫ x^{p−1} e^{−(ax+b/x)/2} dx = 2 (b/a)^{p/2} K_p(√(ab))
        std::f64::consts::LN_2 + 0.5 * p * (b / a).ln() + log_bessel_k(p, omega)
    };
    (p - 1.0) * x.ln() - 0.5 * (a * x + b / x) - log_norm
}
