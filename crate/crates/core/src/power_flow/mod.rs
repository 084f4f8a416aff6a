//! AC power flow on a slack/PQ admittance partition.
//!
//! [`FixedPointSolver`] is the fast path: the PQ admittance block is
//! factored once and the nodal current balance is iterated from the flat
//! profile. [`solve_reference`] is a full polar Newton-Raphson used to
//! cross-check it.

mod fixed_point;
mod newton;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::network::AdmittancePartition;

pub use fixed_point::{batch_solve, solve_fixed_point, FixedPointSolver};
pub use newton::solve_reference;

/// Net nodal injections at the PQ nodes, in canonical order (per-unit,
/// generation positive).
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(pq_count: usize) -> Self {
        InjectionSet {
            p: vec![0.0; pq_count],
            q: vec![0.0; pq_count],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub(crate) fn complex(&self) -> Vec<Complex64> {
        self.p
            .iter()
            .zip(&self.q)
            .map(|(&p, &q)| Complex64::new(p, q))
            .collect()
    }

    fn validate(&self, adm: &AdmittancePartition) -> Result<(), PowerFlowError> {
        if self.p.len() != adm.pq_count() || self.q.len() != adm.pq_count() {
            return Err(PowerFlowError::InvalidInjection(format!(
                "expected {} PQ injections, got p={} q={}",
                adm.pq_count(),
                self.p.len(),
                self.q.len()
            )));
        }
        if let Some(i) = self.p.iter().chain(&self.q).position(|x| !x.is_finite()) {
            return Err(PowerFlowError::InvalidInjection(format!(
                "non-finite injection at position {i}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Bound on the infinity norm of the complex power mismatch (pu).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<(), PowerFlowError> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(PowerFlowError::InvalidOptions);
        }
        Ok(())
    }
}

/// Converged (or best-effort) network state. All vectors are in canonical
/// node/line order; `v[0]` is the slack node.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<Complex64>,
    pub line_p: Vec<f64>,
    pub line_q: Vec<f64>,
    pub line_i2: Vec<f64>,
    pub slack_p: f64,
    pub slack_q: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl PowerFlowSolution {
    pub fn v_mag(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm()).collect()
    }

    pub fn v_ang(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.arg()).collect()
    }

    /// Total series losses `Σ z·|I|²` (complex, pu).
    pub fn losses(&self, adm: &AdmittancePartition) -> Complex64 {
        adm.branches
            .iter()
            .zip(&self.line_i2)
            .map(|(b, &i2)| Complex64::new(b.resistance * i2, b.reactance * i2))
            .sum()
    }

    pub fn report(&self, node_ids: &[usize]) -> SolutionReport {
        SolutionReport {
            node_id: node_ids.to_vec(),
            v_mag: self.v_mag(),
            v_ang_rad: self.v_ang(),
            line_p: self.line_p.clone(),
            line_q: self.line_q.clone(),
            line_i2: self.line_i2.clone(),
            slack_p: self.slack_p,
            slack_q: self.slack_q,
            iterations: self.iterations,
            residual: self.residual,
        }
    }

    /// Assembles flows and slack power from PQ voltages.
    pub(crate) fn from_voltages(
        adm: &AdmittancePartition,
        v_pq: &[Complex64],
        iterations: usize,
        residual: f64,
    ) -> Self {
        let v0 = adm.slack_voltage;
        let mut v = Vec::with_capacity(v_pq.len() + 1);
        v.push(v0);
        v.extend_from_slice(v_pq);

        let n_lines = adm.branches.len();
        let (mut line_p, mut line_q, mut line_i2) = (
            Vec::with_capacity(n_lines),
            Vec::with_capacity(n_lines),
            Vec::with_capacity(n_lines),
        );
        for b in &adm.branches {
            let current = (v[b.from_row] - v[b.to_row]) * b.admittance;
            let s = v[b.from_row] * current.conj();
            line_p.push(s.re);
            line_q.push(s.im);
            line_i2.push(current.norm_sqr());
        }
        let i_slack = adm.y_ss * v0
            + adm
                .y_ds
                .iter()
                .zip(v_pq)
                .map(|(y, v)| y * v)
                .sum::<Complex64>();
        let s_slack = v0 * i_slack.conj();
        PowerFlowSolution {
            v,
            line_p,
            line_q,
            line_i2,
            slack_p: s_slack.re,
            slack_q: s_slack.im,
            iterations,
            residual,
        }
    }
}

/// JSON document emitted by the `powerflow` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub node_id: Vec<usize>,
    pub v_mag: Vec<f64>,
    pub v_ang_rad: Vec<f64>,
    pub line_p: Vec<f64>,
    pub line_q: Vec<f64>,
    pub line_i2: Vec<f64>,
    pub slack_p: f64,
    pub slack_q: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Box<PowerFlowSolution>,
    },
    #[error("admittance block of the PQ nodes is singular")]
    SingularPartition,
    #[error("invalid injection set: {0}")]
    InvalidInjection(String),
    #[error("solve options need tolerance > 0 and max_iterations >= 1")]
    InvalidOptions,
    #[error("batch element {index} failed")]
    Batch {
        index: usize,
        #[source]
        source: Box<PowerFlowError>,
    },
    #[error("batch_solve needs at least one injection set")]
    EmptyBatch,
}

impl PowerFlowError {
    /// The best available iterate for a non-converged solve.
    pub fn best_iterate(&self) -> Option<&PowerFlowSolution> {
        match self {
            PowerFlowError::NotConverged { best, .. } => Some(best),
            PowerFlowError::Batch { source, .. } => source.best_iterate(),
            _ => None,
        }
    }
}

/// Infinity norm of `s - v·conj(Y_dd v + y_ds V0)` over the PQ nodes.
pub(crate) fn power_mismatch(adm: &AdmittancePartition, s: &[Complex64], v: &[Complex64]) -> f64 {
    let n = v.len();
    let v0 = adm.slack_voltage;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut current = adm.y_ds[i] * v0;
        for j in 0..n {
            current += adm.y_dd[(i, j)] * v[j];
        }
        let m = (s[i] - v[i] * current.conj()).norm();
        if !m.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(m);
    }
    worst
}
