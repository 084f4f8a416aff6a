use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::stats::{norm_cdf, norm_quantile};

const MAX_ITERATIONS: usize = 200;
const LOGLIK_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_K_MAX: usize = 5;
pub const MIN_SAMPLES: usize = 8;

/// One-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponentSet {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// A fitted candidate with its log-likelihood and BIC.
#[derive(Debug, Clone)]
pub struct GmmCandidate {
    pub model: GmmComponentSet,
    pub log_likelihood: f64,
    pub bic: f64,
}

impl GmmComponentSet {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.log_density(x)).sum()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let terms: Vec<f64> = (0..self.k())
            .map(|j| self.weights[j].ln() + log_normal_pdf(x, self.means[j], self.variances[j]))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let u: f64 = (0..self.k())
            .map(|j| self.weights[j] * norm_cdf((x - self.means[j]) / self.variances[j].sqrt()))
            .sum();
        u.clamp(0.0, 1.0)
    }

    fn pdf(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// Inverts [`cdf`](Self::cdf) by safeguarded Newton iteration.
    pub fn quantile(&self, u: f64) -> Result<f64, AugmentError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(AugmentError::UOutOfRange(u));
        }
        // the mixture quantile lies between the component quantiles at u
        let z = norm_quantile(u);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..self.k() {
            let q = self.means[j] + self.variances[j].sqrt() * z;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if lo == hi {
            return Ok(lo);
        }
        // widen slightly in case z itself carries rounding error
        let pad = 1e-9 * (hi - lo).max(1.0);
        lo -= pad;
        hi += pad;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.cdf(x) - u;
            if f.abs() <= 1e-14 {
                return Ok(x);
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.pdf(x);
            let newton = x - f / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
                break;
            }
        }
        Ok(x)
    }
}

pub fn gmm_cdf(gmm: &GmmComponentSet, x: f64) -> f64 {
    gmm.cdf(x)
}

pub fn gmm_quantile(gmm: &GmmComponentSet, u: f64) -> Result<f64, AugmentError> {
    gmm.quantile(u)
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub fn variance_floor(samples: &[f64]) -> f64 {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    1e-9 * range * range + 1e-12
}

/// EM for a fixed component count, means initialized at k-quantiles.
pub fn fit_em(samples: &[f64], k: usize) -> GmmCandidate {
    let n = samples.len();
    let floor = variance_floor(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let total_var = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).max(floor);

    let mut model = GmmComponentSet {
        weights: vec![1.0 / k as f64; k],
        means: (0..k)
            .map(|j| {
                let pos = ((j as f64 + 0.5) / k as f64 * n as f64).floor() as usize;
                sorted[pos.min(n - 1)]
            })
            .collect(),
        variances: vec![
            if k == 1 {
                total_var
            } else {
                (total_var / (k * k) as f64).max(floor)
            };
            k
        ],
    };

    let mut resp = vec![0.0; n * k];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERATIONS {
        // E-step
        let mut loglik = 0.0;
        let mut terms = vec![0.0; k];
        for (i, &x) in samples.iter().enumerate() {
            for j in 0..k {
                terms[j] =
                    model.weights[j].ln() + log_normal_pdf(x, model.means[j], model.variances[j]);
            }
            let norm = log_sum_exp(&terms);
            loglik += norm;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - norm).exp();
            }
        }
        if loglik - prev < LOGLIK_TOLERANCE && loglik >= prev {
            break;
        }
        prev = loglik;

        // M-step
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk <= 1e-12 {
                model.weights[j] = 0.0;
                continue;
            }
            let mu = (0..n).map(|i| resp[i * k + j] * samples[i]).sum::<f64>() / nk;
            let var = (0..n)
                .map(|i| resp[i * k + j] * (samples[i] - mu).powi(2))
                .sum::<f64>()
                / nk;
            model.weights[j] = nk / n as f64;
            model.means[j] = mu;
            model.variances[j] = var.max(floor);
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    let loglik = model.log_likelihood(samples);
    let params = (3 * k - 1) as f64;
    GmmCandidate {
        bic: params * (n as f64).ln() - 2.0 * loglik,
        log_likelihood: loglik,
        model,
    }
}

/// Fits every k in `1..=k_max` and returns all candidates.
pub fn fit_gmm_candidates(
    samples: &[f64],
    k_max: usize,
) -> Result<Vec<GmmCandidate>, AugmentError> {
    if samples.len() < MIN_SAMPLES {
        return Err(AugmentError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if k_max == 0 {
        return Err(AugmentError::InvalidArgument("k_max must be >= 1".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(AugmentError::InvalidArgument("non-finite sample".into()));
    }
    Ok((1..=k_max.min(samples.len()))
        .map(|k| fit_em(samples, k))
        .collect())
}

/// Fits mixtures for `k = 1..=k_max` and keeps the lowest BIC (ties go to
/// the smaller k).
pub fn fit_gmm(samples: &[f64], k_max: usize) -> Result<GmmComponentSet, AugmentError> {
    let candidates = fit_gmm_candidates(samples, k_max)?;
    let best = candidates
        .into_iter()
        .reduce(|best, c| if c.bic < best.bic { c } else { best })
        .expect("at least one candidate");
    Ok(best.model)
}
