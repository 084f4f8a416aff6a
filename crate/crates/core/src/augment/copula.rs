use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use super::AugmentError;
use crate::stats::{norm_cdf, norm_quantile, open_unit};

/// Smallest eigenvalue kept after repair, before unit-diagonal rescaling.
/// Chosen slightly above 1e-8 so rescaling cannot push the minimum below it.
const EIGEN_FLOOR: f64 = 1.01e-8;
const DOF_RANGE: (f64, f64) = (2.0, 60.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    T,
}

/// Correlation structure stored in factored form
/// `C = F·Fᵀ + diag(d)` with unit diagonal.
///
/// `F` has one column per retained eigenvector, so day-vector copulas with
/// far more margins than observed days stay cheap to store and sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaModel {
    pub family: CopulaFamily,
    pub dof: Option<f64>,
    pub factor: DMatrix<f64>,
    pub diag: Vec<f64>,
    pub warnings: Vec<String>,
}

impl CopulaModel {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn identity(family: CopulaFamily, dim: usize, dof: Option<f64>) -> Self {
        CopulaModel {
            family,
            dof,
            factor: DMatrix::zeros(dim, 0),
            diag: vec![1.0; dim],
            warnings: Vec::new(),
        }
    }

    /// Builds a model from an explicit correlation matrix, applying the same
    /// PSD repair as [`fit_copula`].
    pub fn from_correlation(
        family: CopulaFamily,
        correlation: &DMatrix<f64>,
        dof: Option<f64>,
    ) -> Result<Self, AugmentError> {
        if !correlation.is_square() {
            return Err(AugmentError::InvalidArgument(
                "correlation must be square".into(),
            ));
        }
        if family == CopulaFamily::T && !dof.is_some_and(|v| v > 0.0) {
            return Err(AugmentError::InvalidArgument(
                "t copula needs dof > 0".into(),
            ));
        }
        let sym = (correlation + correlation.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let (factor, diag) = repaired_factor(&eig.eigenvectors, eig.eigenvalues.as_slice());
        Ok(CopulaModel {
            family,
            dof,
            factor,
            diag,
            warnings: Vec::new(),
        })
    }

    /// Dense correlation matrix `F·Fᵀ + diag(d)`.
    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let mut c = &self.factor * self.factor.transpose();
        for (i, d) in self.diag.iter().enumerate() {
            c[(i, i)] += d;
        }
        c
    }

    fn pair_correlation(&self, i: usize, j: usize) -> f64 {
        let r = self.factor.row(i).dot(&self.factor.row(j));
        if i == j {
            r + self.diag[i]
        } else {
            r
        }
    }
}

/// `U·diag(√(max(λ, f) − f))` plus an isotropic floor, rescaled to unit
/// diagonal.
fn repaired_factor(vectors: &DMatrix<f64>, values: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let d = vectors.nrows();
    let keep: Vec<usize> = (0..values.len())
        .filter(|&k| values[k] > EIGEN_FLOOR)
        .collect();
    let mut factor = DMatrix::zeros(d, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let scale = (values[k] - EIGEN_FLOOR).sqrt();
        for i in 0..d {
            factor[(i, c)] = vectors[(i, k)] * scale;
        }
    }
    let mut diag = vec![EIGEN_FLOOR; d];
    for i in 0..d {
        let total = factor.row(i).norm_squared() + EIGEN_FLOOR;
        let s = total.sqrt().recip();
        factor.row_mut(i).scale_mut(s);
        diag[i] = EIGEN_FLOOR * s * s;
    }
    (factor, diag)
}

/// Fits a Gaussian or t copula to pseudo-observations (`n × D`, entries in
/// `(0, 1)`).
pub fn fit_copula(
    uniforms: &DMatrix<f64>,
    family: CopulaFamily,
) -> Result<CopulaModel, AugmentError> {
    let (n, d) = uniforms.shape();
    if n < 4 {
        return Err(AugmentError::NotEnoughRows(n));
    }
    if uniforms.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
        return Err(AugmentError::InvalidArgument(
            "copula inputs must lie strictly inside (0, 1)".into(),
        ));
    }
    let mut warnings = Vec::new();
    if n < d {
        let msg = format!("only {n} observations for {d} margins; correlation is rank deficient");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut scores = uniforms.map(norm_quantile);
    for j in 0..d {
        let mut col = scores.column_mut(j);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
        if sd < 1e-12 {
            let msg = format!("margin {j} is constant; treating it as independent");
            log::warn!("{msg}");
            warnings.push(msg);
            col.fill(0.0);
        } else {
            col.scale_mut(1.0 / sd);
        }
    }
    let constant: Vec<usize> = (0..d)
        .filter(|&j| scores.column(j).iter().all(|v| *v == 0.0))
        .collect();
    let scale = 1.0 / (n - 1) as f64;

    let (mut factor, mut diag) = if d <= n {
        let corr = scores.transpose() * &scores * scale;
        let eig = SymmetricEigen::new(corr);
        repaired_factor(&eig.eigenvectors, eig.eigenvalues.as_slice())
    } else {
        // eigenpairs of Zᵀ Z / (n−1) from the n × n Gram matrix
        let gram = &scores * scores.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        let mut vectors = DMatrix::zeros(d, n);
        let mut values = vec![0.0; n];
        for k in 0..n {
            let lambda = eig.eigenvalues[k];
            if lambda <= EIGEN_FLOOR {
                continue;
            }
            let u = scores.transpose() * eig.eigenvectors.column(k) * (scale / lambda).sqrt();
            vectors.set_column(k, &u);
            values[k] = lambda;
        }
        repaired_factor(&vectors, &values)
    };

    for &j in &constant {
        factor.row_mut(j).fill(0.0);
        diag[j] = 1.0;
    }
    let mut model = CopulaModel {
        family,
        dof: None,
        factor,
        diag,
        warnings,
    };
    if family == CopulaFamily::T {
        model.dof = Some(fit_dof(uniforms, &model));
    }
    Ok(model)
}

fn bivariate_t_log_copula(x1: f64, x2: f64, rho: f64, nu: f64, norm2: f64, norm1: f64) -> f64 {
    let one_m = (1.0 - rho * rho).max(1e-15);
    let q = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / (nu * one_m);
    let log_f2 = norm2 - 0.5 * one_m.ln() - 0.5 * (nu + 2.0) * q.ln_1p();
    let log_f1 = |x: f64| norm1 - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p();
    log_f2 - log_f1(x1) - log_f1(x2)
}

/// Pairwise composite log-likelihood over neighbouring margins.
fn t_composite_loglik(uniforms: &DMatrix<f64>, model: &CopulaModel, nu: f64) -> f64 {
    let (n, d) = uniforms.shape();
    let t = StudentsT::new(0.0, 1.0, nu).expect("valid dof");
    let x = uniforms.map(|u| t.inverse_cdf(u));
    let norm2 = ln_gamma(0.5 * (nu + 2.0)) - ln_gamma(0.5 * nu) - (nu * std::f64::consts::PI).ln();
    let norm1 =
        ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for j in 0..d.saturating_sub(1) {
        let rho = model.pair_correlation(j, j + 1);
        for i in 0..n {
            total += bivariate_t_log_copula(x[(i, j)], x[(i, j + 1)], rho, nu, norm2, norm1);
        }
    }
    total
}

/// Degrees of freedom by a coarse log-spaced scan over [2, 60] followed by
/// golden-section refinement.
fn fit_dof(uniforms: &DMatrix<f64>, model: &CopulaModel) -> f64 {
    if model.dim() < 2 {
        return DOF_RANGE.1;
    }
    let (lo, hi) = (DOF_RANGE.0.ln(), DOF_RANGE.1.ln());
    let objective = |log_nu: f64| -t_composite_loglik(uniforms, model, log_nu.exp());
    let grid = 12;
    let points: Vec<f64> = (0..=grid)
        .map(|i| lo + (hi - lo) * i as f64 / grid as f64)
        .collect();
    let values: Vec<f64> = points.iter().map(|&p| objective(p)).collect();
    let best = (0..values.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let mut a = points[best.saturating_sub(1)];
    let mut b = points[(best + 1).min(grid)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut e = a + ratio * (b - a);
    let (mut fc, mut fe) = (objective(c), objective(e));
    for _ in 0..30 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - ratio * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + ratio * (b - a);
            fe = objective(e);
        }
    }
    let refined = 0.5 * (a + b);
    let candidate = if objective(refined) <= values[best] {
        refined
    } else {
        points[best]
    };
    candidate.exp().clamp(DOF_RANGE.0, DOF_RANGE.1)
}

/// Draws `n` rows of dependent uniforms. Deterministic for a given seed.
pub fn sample_copula(
    model: &CopulaModel,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>, AugmentError> {
    let d = model.dim();
    let r = model.factor.ncols();
    let t = match model.family {
        CopulaFamily::Gaussian => None,
        CopulaFamily::T => {
            let nu = model
                .dof
                .filter(|v| *v > 0.0)
                .ok_or_else(|| AugmentError::InvalidArgument("t copula without dof".into()))?;
            Some((
                nu,
                StudentsT::new(0.0, 1.0, nu)
                    .map_err(|e| AugmentError::InvalidArgument(e.to_string()))?,
                ChiSquared::new(nu).map_err(|e| AugmentError::InvalidArgument(e.to_string()))?,
            ))
        }
    };
    let sqrt_diag: Vec<f64> = model.diag.iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, d);
    let mut z = vec![0.0; r];
    for row in 0..n {
        for zk in z.iter_mut() {
            *zk = StandardNormal.sample(&mut rng);
        }
        let mix = match &t {
            Some((nu, _, chi)) => (chi.sample(&mut rng) / nu).sqrt().recip(),
            None => 1.0,
        };
        for i in 0..d {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let mut x = sqrt_diag[i] * eps;
            for (k, zk) in z.iter().enumerate() {
                x += model.factor[(i, k)] * zk;
            }
            let u = match &t {
                Some((_, dist, _)) => dist.cdf(x * mix),
                None => norm_cdf(x),
            };
            out[(row, i)] = open_unit(u);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::spearman;
    use rand::Rng;

    fn min_eigen(m: &DMatrix<f64>) -> f64 {
        SymmetricEigen::new(m.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    fn independent_uniforms(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(1e-9..1.0 - 1e-9))
    }

    #[test]
    fn independent_columns_have_small_correlation() {
        let u = independent_uniforms(5000, 2, 11);
        let m = fit_copula(&u, CopulaFamily::Gaussian).unwrap();
        let c = m.correlation_matrix();
        assert!(c[(0, 1)].abs() <= 0.05, "{}", c[(0, 1)]);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12 && (c[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn comonotonic_columns_give_unit_correlation() {
        let u = independent_uniforms(200, 1, 3);
        let both = DMatrix::from_fn(200, 2, |i, _| u[(i, 0)]);
        let c = fit_copula(&both, CopulaFamily::Gaussian)
            .unwrap()
            .correlation_matrix();
        assert!((c[(0, 1)] - 1.0).abs() < 1e-6);
        assert!(min_eigen(&c) >= 1e-8);
    }

    #[test]
    fn constant_margin_becomes_identity_row() {
        let mut u = independent_uniforms(50, 3, 5);
        u.column_mut(1).fill(0.3);
        let m = fit_copula(&u, CopulaFamily::Gaussian).unwrap();
        assert_eq!(m.warnings.len(), 1);
        let c = m.correlation_matrix();
        assert!((c[(1, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(c[(1, 0)], 0.0);
        assert_eq!(c[(1, 2)], 0.0);
    }

    #[test]
    fn too_few_rows_and_bad_inputs() {
        assert!(matches!(
            fit_copula(&independent_uniforms(3, 2, 1), CopulaFamily::Gaussian),
            Err(AugmentError::NotEnoughRows(3))
        ));
        let mut u = independent_uniforms(10, 2, 1);
        u[(0, 0)] = 1.0;
        assert!(fit_copula(&u, CopulaFamily::Gaussian).is_err());
    }

    #[test]
    fn rank_deficient_fit_is_repaired() {
        let u = independent_uniforms(6, 20, 8);
        let m = fit_copula(&u, CopulaFamily::Gaussian).unwrap();
        assert!(!m.warnings.is_empty());
        let c = m.correlation_matrix();
        assert!((&c - c.transpose()).abs().max() < 1e-12);
        assert!(c.diagonal().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(min_eigen(&c) >= 1e-8);
    }

    #[test]
    fn identity_sampling_is_uncorrelated_and_in_range() {
        let m = CopulaModel::identity(CopulaFamily::Gaussian, 2, None);
        let s = sample_copula(&m, 5000, 9).unwrap();
        assert!(s.iter().all(|u| *u > 0.0 && *u < 1.0));
        let a: Vec<f64> = s.column(0).iter().cloned().collect();
        let b: Vec<f64> = s.column(1).iter().cloned().collect();
        assert!(spearman(&a, &b).abs() <= 0.05);
        assert_eq!(s, sample_copula(&m, 5000, 9).unwrap());
    }

    #[test]
    fn t_copula_recovers_dependence_and_plausible_dof() {
        let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.7, 0.4, 0.7, 1.0, 0.7, 0.4, 0.7, 1.0]);
        let truth = CopulaModel::from_correlation(CopulaFamily::T, &corr, Some(4.0)).unwrap();
        let u = sample_copula(&truth, 3000, 21).unwrap();
        let fit = fit_copula(&u, CopulaFamily::T).unwrap();
        let nu = fit.dof.unwrap();
        assert!((2.0..=60.0).contains(&nu));
        assert!(nu < 10.0, "dof {nu}");
        assert!((fit.correlation_matrix()[(0, 1)] - 0.7).abs() < 0.05);
        let gauss = CopulaModel::from_correlation(CopulaFamily::Gaussian, &corr, None).unwrap();
        let ug = sample_copula(&gauss, 3000, 22).unwrap();
        assert!(fit_copula(&ug, CopulaFamily::T).unwrap().dof.unwrap() > 15.0);
    }
}
