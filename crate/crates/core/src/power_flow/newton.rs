use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{power_mismatch, InjectionSet, PowerFlowError, PowerFlowSolution, SolveOptions};
use crate::network::AdmittancePartition;

/// Full Newton-Raphson on the polar mismatch equations.
///
/// Unknowns are the angles and magnitudes of the PQ voltages; the Jacobian
/// is rebuilt and LU-factored every iteration.
pub fn solve_reference(
    adm: &AdmittancePartition,
    inj: &InjectionSet,
    opt: &SolveOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    opt.validate()?;
    inj.validate(adm)?;
    let n = adm.pq_count();
    let y = adm.full_matrix();
    let s = inj.complex();
    let v0 = adm.slack_voltage;

    let mut angle = vec![v0.arg(); n];
    let mut mag = vec![v0.norm(); n];
    let voltages = |angle: &[f64], mag: &[f64]| -> Vec<Complex64> {
        angle
            .iter()
            .zip(mag)
            .map(|(&a, &m)| Complex64::from_polar(m, a))
            .collect()
    };

    let mut v_pq = voltages(&angle, &mag);
    let mut residual = power_mismatch(adm, &s, &v_pq);
    let mut iterations = 0;
    while residual > opt.tolerance {
        if iterations == opt.max_iterations || !residual.is_finite() {
            return Err(PowerFlowError::NotConverged {
                iterations,
                residual,
                best: Box::new(PowerFlowSolution::from_voltages(
                    adm, &v_pq, iterations, residual,
                )),
            });
        }
        iterations += 1;

        let mut v = Vec::with_capacity(n + 1);
        v.push(v0);
        v.extend_from_slice(&v_pq);
        let current: Vec<Complex64> = (0..=n)
            .map(|i| (0..=n).map(|k| y[(i, k)] * v[k]).sum())
            .collect();

        // dS/dθ = j·diag(V)·conj(diag(I) − Y·diag(V))
        // dS/d|V| = diag(V)·conj(Y·diag(V/|V|)) + conj(diag(I))·diag(V/|V|)
        let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut f = DVector::<f64>::zeros(2 * n);
        for i in 1..=n {
            let s_calc = v[i] * current[i].conj();
            let mis = s_calc - s[i - 1];
            f[i - 1] = mis.re;
            f[n + i - 1] = mis.im;
            for k in 1..=n {
                let unit = v[k] / v[k].norm();
                let mut d_ang = -Complex64::i() * v[i] * (y[(i, k)] * v[k]).conj();
                let mut d_mag = v[i] * (y[(i, k)] * unit).conj();
                if i == k {
                    d_ang += Complex64::i() * v[i] * current[i].conj();
                    d_mag += current[i].conj() * unit;
                }
                jac[(i - 1, k - 1)] = d_ang.re;
                jac[(n + i - 1, k - 1)] = d_ang.im;
                jac[(i - 1, n + k - 1)] = d_mag.re;
                jac[(n + i - 1, n + k - 1)] = d_mag.im;
            }
        }

        let step = match jac.lu().solve(&(-f)) {
            Some(dx) if dx.iter().all(|x| x.is_finite()) => dx,
            _ => {
                return Err(PowerFlowError::NotConverged {
                    iterations,
                    residual,
                    best: Box::new(PowerFlowSolution::from_voltages(
                        adm, &v_pq, iterations, residual,
                    )),
                })
            }
        };
        for i in 0..n {
            angle[i] += step[i];
            mag[i] += step[n + i];
        }
        v_pq = voltages(&angle, &mag);
        residual = power_mismatch(adm, &s, &v_pq);
    }
    Ok(PowerFlowSolution::from_voltages(
        adm, &v_pq, iterations, residual,
    ))
}
