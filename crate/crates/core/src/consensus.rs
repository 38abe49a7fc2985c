//! Consensus planning: agents answer price/consensus queries with proximal best
//! responses and a coordinator reconciles them with consensus ADMM.
//!
//! Each agent solves
//!
//! ```text
//! argmax_x  u(x) - pi'x - (rho/2) |x - z|^2   over x >= 0 (and sum x <= cap)
//! ```
//!
//! `u` is concave and piecewise linear for the transportation agents, so the
//! proximal problem is solved with a cutting-plane model of `u` built from
//! supergradients. Cuts are global upper bounds of a concave function, which
//! lets a responder keep its bundle across queries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{Constraint, QuadraticProgram};
use crate::transport::{SupplyPlan, UtilityOracle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BestResponseConfig {
    /// Stop once the cutting-plane model overestimates the utility at the
    /// candidate by at most `tolerance * (1 + |u|)`.
    pub tolerance: f64,
    pub max_iters: usize,
    pub max_cuts: usize,
}

impl Default for BestResponseConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iters: 10_000,
            max_cuts: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Cut {
    intercept: f64,
    slope: Vec<f64>,
}

impl Cut {
    fn value(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.slope, x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean projection onto `{x >= 0, sum x <= cap}`.
pub fn project_capped(v: &[f64], cap: Option<f64>) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|q| q.max(0.0)).collect();
    let Some(cap) = cap else { return clamped };
    let cap = cap.max(0.0);
    if clamped.iter().sum::<f64>() <= cap {
        return clamped;
    }
    // projection onto the simplex {x >= 0, sum x = cap}
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut running = 0.0;
    let mut shift = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        running += s;
        let candidate = (running - cap) / (k + 1) as f64;
        if s - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter().map(|q| (q - shift).max(0.0)).collect()
}

/// An agent wrapper that answers proximal queries and remembers its cuts.
pub struct BestResponder<A> {
    agent: A,
    cuts: Vec<Cut>,
    config: BestResponseConfig,
}

impl<A: UtilityOracle> BestResponder<A> {
    pub fn new(agent: A, config: BestResponseConfig) -> Self {
        Self {
            agent,
            cuts: Vec::new(),
            config,
        }
    }

    pub fn agent(&self) -> &A {
        &self.agent
    }

    pub fn respond(&mut self, prices: &[f64], z: &[f64], rho: f64) -> Result<SupplyPlan> {
        let n = self.agent.dim();
        if prices.len() != n || z.len() != n {
            return Err(Error::Dimension(format!(
                "query has {} prices and {} consensus entries, agent plan has {n}",
                prices.len(),
                z.len()
            )));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("penalty rho must be positive, got {rho}")));
        }
        // completing the square: the linear price term shifts the proximal center
        let center: Vec<f64> = z.iter().zip(prices).map(|(z, p)| z - p / rho).collect();
        if let Some(exact) = self.agent.proximal_point(&center, rho) {
            return exact.map(SupplyPlan::from_clamped);
        }
        let cap = self.agent.plan_capacity();
        if cap.is_some_and(|c| c <= 1e-12) {
            return Ok(SupplyPlan::zeros(n));
        }
        let start = project_capped(&center, cap);
        if self.cuts.is_empty() {
            let eval = self.agent.evaluate(&start)?;
            self.add_cut(&start, eval.utility, eval.supergradient);
        }
        for _ in 0..self.config.max_iters {
            let x = self.solve_model(&center, rho, cap, &start)?;
            let eval = self.agent.evaluate(&x)?;
            let model = self
                .cuts
                .iter()
                .map(|c| c.value(&x))
                .fold(f64::INFINITY, f64::min);
            if model - eval.utility <= self.config.tolerance * (1.0 + eval.utility.abs()) {
                return Ok(SupplyPlan::from_clamped(x));
            }
            self.add_cut(&x, eval.utility, eval.supergradient);
        }
        Err(Error::NonConvergence {
            iterations: self.config.max_iters,
            detail: "best response cutting-plane model did not close".into(),
        })
    }

    fn add_cut(&mut self, x: &[f64], utility: f64, slope: Vec<f64>) {
        let cut = Cut {
            intercept: utility - dot(&slope, x),
            slope,
        };
        if let Some(same) = self
            .cuts
            .iter_mut()
            .find(|c| c.slope.iter().zip(&cut.slope).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            same.intercept = same.intercept.min(cut.intercept);
            return;
        }
        self.cuts.push(cut);
        if self.cuts.len() > self.config.max_cuts {
            // evict the cut that is furthest from binding at the newest point
            let newest = self.cuts.len() - 1;
            let evict = (0..newest)
                .max_by(|&a, &b| self.cuts[a].value(x).total_cmp(&self.cuts[b].value(x)))
                .expect("bundle has older cuts");
            self.cuts.remove(evict);
        }
    }

    /// Maximizes `min_l cut_l(x) - (rho/2)|x - center|^2` over the domain.
    fn solve_model(
        &self,
        center: &[f64],
        rho: f64,
        cap: Option<f64>,
        start: &[f64],
    ) -> Result<Vec<f64>> {
        let n = center.len();
        // variables (x, t); minimize (rho/2)|x|^2 - rho center'x - t
        let mut hess = DMatrix::zeros(n + 1, n + 1);
        let mut linear = DVector::zeros(n + 1);
        for i in 0..n {
            hess[(i, i)] = rho;
            linear[i] = -rho * center[i];
        }
        linear[n] = -1.0;
        let mut constraints = Vec::with_capacity(self.cuts.len() + n + 1);
        for cut in &self.cuts {
            let mut coeffs: Vec<f64> = cut.slope.iter().map(|g| -g).collect();
            coeffs.push(1.0);
            constraints.push(Constraint {
                coeffs,
                bound: cut.intercept,
            });
        }
        let bounds_at = constraints.len();
        for i in 0..n {
            let mut coeffs = vec![0.0; n + 1];
            coeffs[i] = -1.0;
            constraints.push(Constraint { coeffs, bound: 0.0 });
        }
        if let Some(cap) = cap {
            let mut coeffs = vec![1.0; n + 1];
            coeffs[n] = 0.0;
            constraints.push(Constraint { coeffs, bound: cap });
        }

        let (first_cut, t0) = self
            .cuts
            .iter()
            .map(|c| c.value(start))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("bundle is never empty here");
        let mut working = vec![first_cut];
        working.extend((0..n).filter(|&i| start[i] == 0.0).map(|i| bounds_at + i));
        let mut y0 = DVector::from_column_slice(start);
        y0 = y0.push(t0);

        let qp = QuadraticProgram {
            hessian: hess,
            linear,
            constraints,
        };
        let sol = qp.solve(y0, working)?;
        let mut x: Vec<f64> = sol.y.rows(0, n).iter().map(|v| v.max(0.0)).collect();
        if let Some(cap) = cap {
            let total: f64 = x.iter().sum();
            if total > cap {
                let shrink = cap / total;
                x.iter_mut().for_each(|v| *v *= shrink);
            }
        }
        Ok(x)
    }
}

/// One-shot proximal best response with a fresh cutting-plane model.
pub fn best_response<A: UtilityOracle>(
    agent: A,
    prices: &[f64],
    z: &[f64],
    rho: f64,
) -> Result<SupplyPlan> {
    BestResponder::new(agent, BestResponseConfig::default()).respond(prices, z, rho)
}

/// Coordinator-side ADMM state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub iteration: usize,
    pub z: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
    pub responses: Vec<Vec<f64>>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
}

impl ConsensusState {
    pub fn new(z: Vec<f64>, agents: usize, rho: f64) -> Result<Self> {
        if agents == 0 {
            return Err(Error::Parameter("consensus needs at least one agent".into()));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("penalty rho must be positive, got {rho}")));
        }
        let n = z.len();
        Ok(Self {
            iteration: 0,
            prices: vec![vec![0.0; n]; agents],
            responses: vec![z.clone(); agents],
            z,
            primal_residual: 0.0,
            dual_residual: 0.0,
            rho,
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn price_sum(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim()];
        for p in &self.prices {
            for (s, v) in sum.iter_mut().zip(p) {
                *s += v;
            }
        }
        sum
    }
}

/// ADMM consensus and price update from one round of responses.
///
/// The last agent's prices are set to minus the sum of the others, so the
/// prices sum to exactly zero when accumulated in agent order.
pub fn coordinator_step(state: &ConsensusState, responses: &[Vec<f64>]) -> Result<ConsensusState> {
    let m = state.prices.len();
    let n = state.dim();
    if responses.len() != m {
        return Err(Error::Dimension(format!(
            "{} responses for {m} agents",
            responses.len()
        )));
    }
    if let Some(bad) = responses.iter().find(|r| r.len() != n) {
        return Err(Error::Dimension(format!(
            "response has {} entries, plan has {n}",
            bad.len()
        )));
    }
    let rho = state.rho;
    let mut z = vec![0.0; n];
    for (x, p) in responses.iter().zip(&state.prices) {
        for i in 0..n {
            z[i] += x[i] + p[i] / rho;
        }
    }
    z.iter_mut().for_each(|v| *v /= m as f64);

    let mut prices: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut partial = vec![0.0; n];
    for (a, (x, p)) in responses.iter().zip(&state.prices).enumerate() {
        let updated: Vec<f64> = if a + 1 < m {
            (0..n).map(|i| p[i] + rho * (x[i] - z[i])).collect()
        } else {
            partial.iter().map(|s| -s).collect()
        };
        for (s, v) in partial.iter_mut().zip(&updated) {
            *s += v;
        }
        prices.push(updated);
    }
    if m == 1 {
        // a single agent only ever agrees with itself
        prices[0] = vec![0.0; n];
    }

    let primal_residual = responses
        .iter()
        .map(|x| norm(&x.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    let dual_residual = rho * norm(&z.iter().zip(&state.z).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(ConsensusState {
        iteration: state.iteration + 1,
        z,
        prices,
        responses: responses.to_vec(),
        primal_residual,
        dual_residual,
        rho,
    })
}

/// Residual balancing can cycle on piecewise-linear utilities; ADMM is only
/// guaranteed to converge once rho stops moving.
pub const MAX_RHO_CHANGES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Residual balancing: double or halve rho when one residual dominates
    /// the other by more than 10x, at most `MAX_RHO_CHANGES` times so that
    /// rho is eventually fixed.
    pub adaptive_rho: bool,
    pub best_response: BestResponseConfig,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iters: 5000,
            adaptive_rho: false,
            best_response: BestResponseConfig::default(),
        }
    }
}

/// A set of agents the coordinator can query, in process or remote.
pub trait AgentPool {
    fn agent_count(&self) -> usize;

    fn dim(&self) -> usize;

    /// One synchronous round: every agent answers for `iteration`.
    fn query(
        &mut self,
        iteration: usize,
        prices: &[Vec<f64>],
        z: &[f64],
        rho: f64,
    ) -> Result<Vec<Vec<f64>>>;

    /// Utilities at a plan, when the pool can see them.
    fn utilities(&mut self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Agents living in the coordinator's process.
pub struct LocalPool<'a> {
    responders: Vec<BestResponder<Box<dyn UtilityOracle + 'a>>>,
}

impl<'a> LocalPool<'a> {
    pub fn new(agents: Vec<Box<dyn UtilityOracle + 'a>>, config: BestResponseConfig) -> Result<Self> {
        let Some(first) = agents.first() else {
            return Err(Error::Parameter("consensus needs at least one agent".into()));
        };
        let n = first.dim();
        if agents.iter().any(|a| a.dim() != n) {
            return Err(Error::Dimension("agents disagree on the plan dimension".into()));
        }
        Ok(Self {
            responders: agents
                .into_iter()
                .map(|a| BestResponder::new(a, config))
                .collect(),
        })
    }
}

impl AgentPool for LocalPool<'_> {
    fn agent_count(&self) -> usize {
        self.responders.len()
    }

    fn dim(&self) -> usize {
        self.responders[0].agent().dim()
    }

    fn query(
        &mut self,
        _iteration: usize,
        prices: &[Vec<f64>],
        z: &[f64],
        rho: f64,
    ) -> Result<Vec<Vec<f64>>> {
        self.responders
            .iter_mut()
            .zip(prices)
            .map(|(r, p)| r.respond(p, z, rho).map(SupplyPlan::into_inner))
            .collect()
    }

    fn utilities(&mut self, x: &[f64]) -> Option<Vec<f64>> {
        self.responders
            .iter()
            .map(|r| r.agent().evaluate(x).ok().map(|e| e.utility))
            .collect()
    }
}

/// Per-iteration trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub z: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub plan: SupplyPlan,
    pub utilities: Option<Vec<f64>>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub state: ConsensusState,
}

pub fn run_consensus(
    pool: &mut dyn AgentPool,
    config: &ConsensusConfig,
    initial: Option<&[f64]>,
) -> Result<ConsensusResult> {
    run_consensus_traced(pool, config, initial, &mut |_| {})
}

pub fn run_consensus_traced(
    pool: &mut dyn AgentPool,
    config: &ConsensusConfig,
    initial: Option<&[f64]>,
    trace: &mut dyn FnMut(&IterationRecord),
) -> Result<ConsensusResult> {
    let n = pool.dim();
    let z0 = match initial {
        Some(z) if z.len() != n => {
            return Err(Error::Dimension(format!(
                "initial plan has {} entries, expected {n}",
                z.len()
            )))
        }
        Some(z) => z.iter().map(|v| v.max(0.0)).collect(),
        None => vec![0.0; n],
    };
    let mut state = ConsensusState::new(z0, pool.agent_count(), config.rho)?;
    let mut converged = false;
    let mut rho_changes = 0;
    while state.iteration < config.max_iters {
        let responses = pool.query(state.iteration, &state.prices, &state.z, state.rho)?;
        state = coordinator_step(&state, &responses)?;
        trace(&IterationRecord {
            iteration: state.iteration,
            z: state.z.clone(),
            primal_residual: state.primal_residual,
            dual_residual: state.dual_residual,
            rho: state.rho,
        });
        let z_norm = norm(&state.z);
        let primal_tol = config.eps_abs + config.eps_rel * z_norm;
        let dual_tol = config.eps_abs + config.eps_rel * state.rho * z_norm;
        if state.primal_residual <= primal_tol && state.dual_residual <= dual_tol {
            converged = true;
            break;
        }
        if config.adaptive_rho && rho_changes < MAX_RHO_CHANGES {
            if state.primal_residual > 10.0 * state.dual_residual {
                state.rho *= 2.0;
                rho_changes += 1;
            } else if state.dual_residual > 10.0 * state.primal_residual {
                state.rho /= 2.0;
                rho_changes += 1;
            }
        }
    }
    // Every response lies in its agent's domain; no agent asked for more in
    // total than the smallest proposal, so shrinking z onto that total keeps it
    // acceptable to all agents whose domains cap the plan total.
    let smallest_total = state
        .responses
        .iter()
        .map(|r| r.iter().sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let plan = SupplyPlan::from_clamped(project_capped(&state.z, Some(smallest_total)));
    let utilities = pool.utilities(&plan);
    Ok(ConsensusResult {
        plan,
        utilities,
        iterations: state.iteration,
        primal_residual: state.primal_residual,
        dual_residual: state.dual_residual,
        converged,
        state,
    })
}
