//! The dispatch MDP: reset/step over one day of data.
//!
//! Actions are ESS powers in kW (charging positive). The reward at step `t`
//! is the arbitrage term `−ρ_t·Σ P^B·Δt` minus a σ-weighted voltage
//! deadband penalty.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{check_dataset, ConfigError, EnvConfig, PenaltyNodes};
use crate::data::{select_day, DataError, EpisodeSlice, SlotRecord, TimeSeriesDataset};
use crate::ess::{apply_dispatch, EssState};
use crate::network::NetworkError;
use crate::power_flow::{
    FixedPointSolver, InjectionSet, PowerFlowError, PowerFlowSolution, SolveOptions,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called before reset")]
    NotReset,
    #[error("episode finished; call reset")]
    EpisodeFinished,
    #[error("action has {got} entries, expected {expected}")]
    ActionDimensionMismatch { expected: usize, got: usize },
    #[error("action entry {0} is not finite")]
    NonFiniteAction(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

/// How an episode's day is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Day(usize),
    Random(u64),
}

/// Observation layout: net load per node (canonical order, kW), price,
/// SOC per ESS, and the elapsed fraction of the episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateVector {
    pub net_load: Vec<f64>,
    pub price: f64,
    pub socs: Vec<f64>,
    pub time_frac: f64,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.net_load.len() + 1 + self.socs.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.net_load);
        v.push(self.price);
        v.extend_from_slice(&self.socs);
        v.push(self.time_frac);
        v
    }
}

/// Signature shared by state builders.
pub type StateBuilder = fn(&SlotRecord, &[f64], usize, &EnvConfig) -> StateVector;

/// Default builder: net load `P^D − P^PV` per node.
pub fn build_state(slot: &SlotRecord, socs: &[f64], t: usize, cfg: &EnvConfig) -> StateVector {
    StateVector {
        net_load: cfg
            .network
            .nodes
            .iter()
            .map(|n| slot.net_load(n.id))
            .collect(),
        price: slot.price,
        socs: socs.to_vec(),
        time_frac: t as f64 / cfg.horizon as f64,
    }
}

/// Variant that exposes raw active demand instead of net load.
pub fn build_state_raw_demand(
    slot: &SlotRecord,
    socs: &[f64],
    t: usize,
    cfg: &EnvConfig,
) -> StateVector {
    StateVector {
        net_load: cfg
            .network
            .nodes
            .iter()
            .map(|n| slot.demand_p(n.id))
            .collect(),
        ..build_state(slot, socs, t, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub arbitrage_term: f64,
    pub penalty_term: f64,
    pub total: f64,
}

/// Sum of deadband excesses `max(0, |v_ref − v| − (v_max − v_min)/2)`.
pub fn violation_sum(v_mag: &[f64], cfg: &EnvConfig) -> f64 {
    let half_band = (cfg.v_max - cfg.v_min) / 2.0;
    v_mag
        .iter()
        .map(|v| ((cfg.v_ref - v).abs() - half_band).max(0.0))
        .sum()
}

/// Reward for one step. `v_mag` holds the monitored nodes only.
pub fn cal_reward(price: f64, realized: &[f64], v_mag: &[f64], cfg: &EnvConfig) -> RewardBreakdown {
    let arbitrage_term = 0.0 - price * realized.iter().sum::<f64>() * cfg.dt_hours;
    let penalty_term = cfg.sigma * violation_sum(v_mag, cfg);
    RewardBreakdown {
        arbitrage_term,
        penalty_term,
        total: arbitrage_term - penalty_term,
    }
}

/// Canonical row indices of the nodes whose voltage enters the penalty.
pub fn monitored_rows(cfg: &EnvConfig) -> Vec<usize> {
    let index = cfg.network.index_map();
    match cfg.penalty_nodes {
        PenaltyNodes::All => (1..cfg.network.node_count()).collect(),
        PenaltyNodes::EssOnly => cfg.fleet.iter().map(|e| index[&e.node]).collect(),
    }
}

/// Net injections for one slot: `p = −(P^D − P^PV + P^B)/S_base` and
/// `q = −Q^D/S_base` at every PQ node.
pub fn slot_injections(cfg: &EnvConfig, slot: &SlotRecord, ess_kw: &[f64]) -> InjectionSet {
    let s_base = cfg.s_base_kw();
    let pq = &cfg.network.nodes[1..];
    let mut inj = InjectionSet {
        p: pq.iter().map(|n| slot.net_load(n.id)).collect(),
        q: pq.iter().map(|n| slot.demand_q(n.id)).collect(),
    };
    for (ess, p) in cfg.fleet.iter().zip(ess_kw) {
        if let Some(i) = pq.iter().position(|n| n.id == ess.node) {
            inj.p[i] += p;
        }
    }
    inj.p.iter_mut().for_each(|p| *p = -*p / s_base);
    inj.q.iter_mut().for_each(|q| *q = -*q / s_base);
    inj
}

/// Solves a slot, falling back to the best iterate when the solver does not
/// converge. The flag is `false` in that case.
pub fn solve_slot(
    solver: &FixedPointSolver,
    inj: &InjectionSet,
    opt: &SolveOptions,
) -> Result<(PowerFlowSolution, bool), PowerFlowError> {
    match solver.solve(inj, opt) {
        Ok(sol) => Ok((sol, true)),
        Err(PowerFlowError::NotConverged { best, .. }) => Ok((*best, false)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepInfo {
    pub realized_powers: Vec<f64>,
    pub v_mag: Vec<f64>,
    pub violation_sum: f64,
    pub arbitrage_term: f64,
    pub penalty_term: f64,
    pub slack_p: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub t: usize,
    pub ess_states: Vec<EssState>,
    pub episode: EpisodeSlice,
    pub last_solution: PowerFlowSolution,
}

impl EnvState {
    pub fn socs(&self) -> Vec<f64> {
        self.ess_states.iter().map(|s| s.soc).collect()
    }
}

pub struct Environment {
    cfg: Arc<EnvConfig>,
    data: Arc<TimeSeriesDataset>,
    solver: FixedPointSolver,
    options: SolveOptions,
    monitored: Vec<usize>,
    builder: StateBuilder,
    state: Option<EnvState>,
}

impl Environment {
    pub fn new(cfg: Arc<EnvConfig>, data: Arc<TimeSeriesDataset>) -> Result<Self, EnvError> {
        cfg.validate()?;
        check_dataset(&cfg, &data)?;
        let adm = crate::network::build_admittance(&cfg.network)?;
        let solver = FixedPointSolver::new(&adm)?;
        Ok(Environment {
            monitored: monitored_rows(&cfg),
            cfg,
            data,
            solver,
            options: SolveOptions::default(),
            builder: build_state,
            state: None,
        })
    }

    pub fn with_builder(mut self, builder: StateBuilder) -> Self {
        self.builder = builder;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn data(&self) -> &TimeSeriesDataset {
        &self.data
    }

    pub fn solver(&self) -> &FixedPointSolver {
        &self.solver
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn day_count(&self) -> usize {
        self.data.day_count()
    }

    pub fn reset(&mut self, selector: Selector) -> Result<StateVector, EnvError> {
        let day = match selector {
            Selector::Day(i) => i,
            Selector::Random(seed) => {
                ChaCha8Rng::seed_from_u64(seed).random_range(0..self.data.day_count())
            }
        };
        let episode = select_day(&self.data, day)?.truncated(self.cfg.horizon);
        let ess_states: Vec<EssState> = self
            .cfg
            .fleet
            .iter()
            .map(|e| EssState {
                soc: e.soc_midpoint(),
            })
            .collect();
        let zeros = vec![0.0; self.cfg.fleet.len()];
        let inj = slot_injections(&self.cfg, &episode.rows[0], &zeros);
        let (last_solution, _) = solve_slot(&self.solver, &inj, &self.options)?;
        let socs: Vec<f64> = ess_states.iter().map(|s| s.soc).collect();
        let s0 = (self.builder)(&episode.rows[0], &socs, 0, &self.cfg);
        self.state = Some(EnvState {
            t: 0,
            ess_states,
            episode,
            last_solution,
        });
        Ok(s0)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Transition, EnvError> {
        let cfg = Arc::clone(&self.cfg);
        let st = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if st.t >= cfg.horizon {
            return Err(EnvError::EpisodeFinished);
        }
        if action.len() != cfg.fleet.len() {
            return Err(EnvError::ActionDimensionMismatch {
                expected: cfg.fleet.len(),
                got: action.len(),
            });
        }
        if let Some(i) = action.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction(i));
        }

        let mut realized = Vec::with_capacity(action.len());
        for ((ess, s), &a) in cfg.fleet.iter().zip(st.ess_states.iter_mut()).zip(action) {
            let (next, p) = apply_dispatch(ess, *s, a, cfg.dt_hours);
            *s = next;
            realized.push(p);
        }

        let slot = &st.episode.rows[st.t];
        let inj = slot_injections(&cfg, slot, &realized);
        let (solution, converged) = solve_slot(&self.solver, &inj, &self.options)?;
        let v_mag = solution.v_mag();
        let monitored: Vec<f64> = self.monitored.iter().map(|&r| v_mag[r]).collect();
        let reward = cal_reward(slot.price, &realized, &monitored, &cfg);

        st.t += 1;
        let done = st.t == cfg.horizon;
        // the terminal observation reuses the last slot's exogenous data
        let next_slot = &st.episode.rows[st.t.min(cfg.horizon - 1)];
        let socs: Vec<f64> = st.ess_states.iter().map(|s| s.soc).collect();
        let state = (self.builder)(next_slot, &socs, st.t, &cfg);
        let info = StepInfo {
            realized_powers: realized,
            violation_sum: violation_sum(&monitored, &cfg),
            arbitrage_term: reward.arbitrage_term,
            penalty_term: reward.penalty_term,
            slack_p: solution.slack_p,
            v_mag,
            converged,
        };
        st.last_solution = solution;
        Ok(Transition {
            state,
            reward: reward.total,
            done,
            info,
        })
    }
}
