use num_complex::Complex64;
use rayon::prelude::*;

use super::{power_mismatch, InjectionSet, PowerFlowError, PowerFlowSolution, SolveOptions};
use crate::network::AdmittancePartition;

/// Fixed-point power flow with the PQ admittance block factored once.
///
/// Each iteration applies `v ← Y_dd⁻¹ · conj(s / v) + v_h`, where `v_h` is
/// the no-load profile. Without shunts `Y_dd·1 = −y_ds`, so `v_h` is exactly
/// the slack voltage at every node.
#[derive(Debug, Clone)]
pub struct FixedPointSolver {
    adm: AdmittancePartition,
    /// Row-major inverse of `y_dd`.
    z: Vec<Complex64>,
    n: usize,
}

impl FixedPointSolver {
    pub fn new(adm: &AdmittancePartition) -> Result<Self, PowerFlowError> {
        let n = adm.pq_count();
        let inv = adm
            .y_dd
            .clone()
            .lu()
            .try_inverse()
            .ok_or(PowerFlowError::SingularPartition)?;
        if inv.iter().any(|c| !c.is_finite()) {
            return Err(PowerFlowError::SingularPartition);
        }
        let mut z = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                z.push(inv[(i, j)]);
            }
        }
        Ok(FixedPointSolver {
            adm: adm.clone(),
            z,
            n,
        })
    }

    pub fn admittance(&self) -> &AdmittancePartition {
        &self.adm
    }

    pub fn solve(
        &self,
        inj: &InjectionSet,
        opt: &SolveOptions,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        opt.validate()?;
        inj.validate(&self.adm)?;
        let n = self.n;
        let v0 = self.adm.slack_voltage;
        let s = inj.complex();

        let mut v = vec![v0; n];
        let mut rhs = vec![Complex64::new(0.0, 0.0); n];
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        let residual = power_mismatch(&self.adm, &s, &v);
        if residual <= opt.tolerance {
            return Ok(PowerFlowSolution::from_voltages(&self.adm, &v, 0, residual));
        }

        for iteration in 1..=opt.max_iterations {
            for i in 0..n {
                rhs[i] = (s[i] / v[i]).conj();
            }
            let mut estimate: f64 = 0.0;
            for i in 0..n {
                let row = &self.z[i * n..(i + 1) * n];
                let mut acc = Complex64::new(0.0, 0.0);
                for (zij, r) in row.iter().zip(&rhs) {
                    acc += zij * r;
                }
                next[i] = acc + v0;
                // mismatch at the new iterate is s·(1 − v_new/v_old) up to roundoff
                estimate = estimate.max((s[i] * (1.0 - next[i] / v[i])).norm());
            }
            std::mem::swap(&mut v, &mut next);

            if !estimate.is_finite() || v.iter().any(|x| !x.is_finite()) {
                return Err(not_converged(&self.adm, &next, iteration, f64::INFINITY));
            }
            if estimate <= opt.tolerance {
                let residual = power_mismatch(&self.adm, &s, &v);
                if residual <= opt.tolerance {
                    return Ok(PowerFlowSolution::from_voltages(
                        &self.adm, &v, iteration, residual,
                    ));
                }
            }
        }
        let residual = power_mismatch(&self.adm, &s, &v);
        Err(not_converged(&self.adm, &v, opt.max_iterations, residual))
    }
}

fn not_converged(
    adm: &AdmittancePartition,
    v: &[Complex64],
    iterations: usize,
    residual: f64,
) -> PowerFlowError {
    PowerFlowError::NotConverged {
        iterations,
        residual,
        best: Box::new(PowerFlowSolution::from_voltages(
            adm, v, iterations, residual,
        )),
    }
}

/// Factors `y_dd` and solves a single injection set.
pub fn solve_fixed_point(
    adm: &AdmittancePartition,
    inj: &InjectionSet,
    opt: &SolveOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    FixedPointSolver::new(adm)?.solve(inj, opt)
}

/// Solves many injection sets against one factorization. Output order
/// matches input order.
pub fn batch_solve(
    adm: &AdmittancePartition,
    injs: &[InjectionSet],
    opt: &SolveOptions,
) -> Result<Vec<PowerFlowSolution>, PowerFlowError> {
    if injs.is_empty() {
        return Err(PowerFlowError::EmptyBatch);
    }
    let solver = FixedPointSolver::new(adm)?;
    injs.par_iter()
        .enumerate()
        .map(|(index, inj)| {
            solver.solve(inj, opt).map_err(|e| PowerFlowError::Batch {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
