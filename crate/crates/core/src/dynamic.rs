//! Rolling-horizon ordering: ideal JIT baselines, coordinated plans and the
//! cost benefit transfer (CBT) paid by the supplier for deviations.
//!
//! Lead time is zero: an order placed in week `t` is on hand for week `t`'s
//! sales. Future weeks are evaluated at their forecasts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{run_consensus, BestResponseConfig, ConsensusConfig, LocalPool};
use crate::error::{Error, Result};
use crate::network::FlowNetwork;
use crate::qp::{Constraint, QuadraticProgram};
use crate::transport::{Evaluation, UtilityOracle};

fn default_horizon() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryModel {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Demand forecast per week of the simulated path.
    pub forecast: Vec<f64>,
    /// Target inventory position per week; defaults to the forecast.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    pub holding_cost: f64,
    pub lost_sales_cost: f64,
    pub retailer_margin: f64,
    pub supplier_margin: f64,
    pub smoothing: f64,
    #[serde(default)]
    pub initial_inventory: f64,
    /// Order placed the week before the path starts (anchors smoothing).
    #[serde(default)]
    pub initial_order: f64,
}

impl InventoryModel {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Parameter("horizon must be at least one week".into()));
        }
        if self.forecast.is_empty() {
            return Err(Error::Parameter("forecast must cover at least one week".into()));
        }
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        for &f in &self.forecast {
            nonneg("forecast", f)?;
        }
        if let Some(target) = &self.target {
            if target.len() != self.forecast.len() {
                return Err(Error::Dimension(format!(
                    "target covers {} weeks, forecast {}",
                    target.len(),
                    self.forecast.len()
                )));
            }
            for &t in target {
                nonneg("target", t)?;
            }
        }
        nonneg("holding_cost", self.holding_cost)?;
        nonneg("lost_sales_cost", self.lost_sales_cost)?;
        nonneg("retailer_margin", self.retailer_margin)?;
        nonneg("supplier_margin", self.supplier_margin)?;
        nonneg("smoothing", self.smoothing)?;
        nonneg("initial_inventory", self.initial_inventory)?;
        nonneg("initial_order", self.initial_order)?;
        // otherwise every extra unit ordered raises the joint flow utility
        if self.supplier_margin > self.holding_cost {
            return Err(Error::Parameter(format!(
                "supplier_margin {} exceeds holding_cost {}: joint utility would be unbounded",
                self.supplier_margin, self.holding_cost
            )));
        }
        Ok(())
    }

    pub fn path_length(&self) -> usize {
        self.forecast.len()
    }

    pub fn target_at(&self, week: usize) -> f64 {
        match &self.target {
            Some(t) => t[week],
            None => self.forecast[week],
        }
    }

    /// Weeks planned at `week`: the horizon, cut off at the end of the path.
    pub fn window(&self, week: usize) -> std::ops::Range<usize> {
        week..(week + self.horizon).min(self.path_length())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitmentMode {
    /// Only the current week's order binds.
    None,
    /// The whole consensus plan binds.
    FullHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingState {
    pub week: usize,
    pub inventory: f64,
    pub last_order: f64,
    pub plan_of_record: Option<Vec<f64>>,
    pub cumulative_cbt: f64,
    pub mode: CommitmentMode,
}

impl RollingState {
    pub fn start(model: &InventoryModel, mode: CommitmentMode) -> Self {
        Self {
            week: 0,
            inventory: model.initial_inventory,
            last_order: model.initial_order,
            plan_of_record: None,
            cumulative_cbt: 0.0,
            mode,
        }
    }

    fn check(&self, model: &InventoryModel) -> Result<()> {
        if self.week >= model.path_length() {
            return Err(Error::State(format!(
                "week {} is past the end of the {}-week path",
                self.week,
                model.path_length()
            )));
        }
        Ok(())
    }
}

/// Order-up-to-target quantities over the planning window, optionally with
/// the first order pinned.
pub fn jit_policy(model: &InventoryModel, state: &RollingState, pinned_first: Option<f64>) -> Result<Vec<f64>> {
    state.check(model)?;
    let mut inventory = state.inventory;
    let mut orders = Vec::new();
    for t in model.window(state.week) {
        let order = match pinned_first {
            Some(q) if t == state.week => q.max(0.0),
            _ => (model.target_at(t) - inventory).max(0.0),
        };
        let available = inventory + order;
        inventory = available - available.min(model.forecast[t]);
        orders.push(order);
    }
    Ok(orders)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowUtility {
    pub per_week: Vec<f64>,
    pub total: f64,
}

/// Week-by-week retailer flow utility of an order sequence under the forecast.
pub fn flow_utility_retailer(model: &InventoryModel, orders: &[f64], state: &RollingState) -> Result<FlowUtility> {
    state.check(model)?;
    let window = model.window(state.week);
    if orders.len() != window.len() {
        return Err(Error::Dimension(format!(
            "order sequence has {} weeks, window has {}",
            orders.len(),
            window.len()
        )));
    }
    let mut inventory = state.inventory;
    let mut per_week = Vec::with_capacity(orders.len());
    for (t, &order) in window.zip(orders) {
        let available = inventory + order.max(0.0);
        let sales = available.min(model.forecast[t]);
        inventory = available - sales;
        let lost = model.forecast[t] - sales;
        per_week.push(
            model.retailer_margin * sales - model.holding_cost * inventory - model.lost_sales_cost * lost,
        );
    }
    let total = per_week.iter().sum();
    Ok(FlowUtility { per_week, total })
}

/// Supplier flow utility `sum_t m_S x_t - kappa (x_t - x_{t-1})^2`.
pub fn flow_utility_supplier(model: &InventoryModel, orders: &[f64], state: &RollingState) -> f64 {
    let mut prev = state.last_order;
    let mut total = 0.0;
    for &x in orders {
        total += model.supplier_margin * x - model.smoothing * (x - prev).powi(2);
        prev = x;
    }
    total
}

/// The retailer's flow utility over a window as a min-cost flow: each week's
/// stock either sells (up to the forecast) or is carried at the holding cost.
#[derive(Debug, Clone)]
pub struct RetailerFlowAgent<'a> {
    model: &'a InventoryModel,
    week: usize,
    inventory: f64,
}

impl<'a> RetailerFlowAgent<'a> {
    pub fn new(model: &'a InventoryModel, state: &RollingState) -> Self {
        Self {
            model,
            week: state.week,
            inventory: state.inventory,
        }
    }
}

impl UtilityOracle for RetailerFlowAgent<'_> {
    fn dim(&self) -> usize {
        self.model.window(self.week).len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::Dimension(format!("plan has {} weeks, window has {n}", x.len())));
        }
        if x.iter().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(Error::Infeasible("orders must be nonnegative".into()));
        }
        let m = self.model;
        let forecast = &m.forecast[m.window(self.week)];
        let sink = n;
        let mut net = FlowNetwork::new(n + 1);
        for (t, &q) in x.iter().enumerate() {
            net.set_supply(t, q);
        }
        net.set_supply(0, x[0] + self.inventory);
        net.set_supply(sink, -(x.iter().sum::<f64>() + self.inventory));
        let sale_value = m.retailer_margin + m.lost_sales_cost;
        for (t, &f) in forecast.iter().enumerate() {
            net.add_arc(t, sink, -sale_value, f);
            let next = if t + 1 < n { t + 1 } else { sink };
            net.add_arc(t, next, m.holding_cost, f64::INFINITY);
        }
        let sol = net.solve()?;
        let utility = -sol.cost - m.lost_sales_cost * forecast.iter().sum::<f64>();
        let supergradient = (0..n).map(|t| -sol.shift_price(t, sink)).collect();
        Ok(Evaluation {
            utility,
            supergradient,
        })
    }
}

/// The supplier's smooth quadratic flow utility, with an exact proximal step.
#[derive(Debug, Clone)]
pub struct SupplierFlowAgent {
    margin: f64,
    smoothing: f64,
    anchor: f64,
    weeks: usize,
}

impl SupplierFlowAgent {
    pub fn new(model: &InventoryModel, state: &RollingState) -> Self {
        Self {
            margin: model.supplier_margin,
            smoothing: model.smoothing,
            anchor: state.last_order,
            weeks: model.window(state.week).len(),
        }
    }
}

impl UtilityOracle for SupplierFlowAgent {
    fn dim(&self) -> usize {
        self.weeks
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        if x.len() != self.weeks {
            return Err(Error::Dimension(format!(
                "plan has {} weeks, window has {}",
                x.len(),
                self.weeks
            )));
        }
        let mut utility = 0.0;
        let mut grad = vec![self.margin; x.len()];
        let mut prev = self.anchor;
        for (t, &q) in x.iter().enumerate() {
            let step = q - prev;
            utility += self.margin * q - self.smoothing * step * step;
            grad[t] -= 2.0 * self.smoothing * step;
            if t > 0 {
                grad[t - 1] += 2.0 * self.smoothing * step;
            }
            prev = q;
        }
        Ok(Evaluation {
            utility,
            supergradient: grad,
        })
    }

    fn proximal_point(&self, center: &[f64], rho: f64) -> Option<Result<Vec<f64>>> {
        let n = self.weeks;
        let k2 = 2.0 * self.smoothing;
        let mut hess = DMatrix::from_diagonal_element(n, n, rho);
        for t in 0..n {
            // each difference (x_t - x_{t-1}) contributes to t and t-1
            hess[(t, t)] += k2;
            if t > 0 {
                hess[(t - 1, t - 1)] += k2;
                hess[(t, t - 1)] -= k2;
                hess[(t - 1, t)] -= k2;
            }
        }
        let mut linear = DVector::from_iterator(n, center.iter().map(|c| -rho * c - self.margin));
        linear[0] -= k2 * self.anchor;
        let constraints = (0..n)
            .map(|t| {
                let mut coeffs = vec![0.0; n];
                coeffs[t] = -1.0;
                Constraint { coeffs, bound: 0.0 }
            })
            .collect();
        let qp = QuadraticProgram {
            hessian: hess,
            linear,
            constraints,
        };
        Some(
            qp.solve(DVector::zeros(n), (0..n).collect())
                .map(|sol| sol.y.iter().map(|v| v.max(0.0)).collect()),
        )
    }
}

/// Consensus settings suited to the dynamic problem: payments compare
/// plans to the cent and below, so residuals are driven much lower.
pub fn dynamic_consensus_config() -> ConsensusConfig {
    ConsensusConfig {
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        max_iters: 20_000,
        best_response: BestResponseConfig {
            tolerance: 1e-13,
            ..BestResponseConfig::default()
        },
        ..ConsensusConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatedPlan {
    pub plan: Vec<f64>,
    pub jit: Vec<f64>,
    pub joint_utility: f64,
    pub jit_joint_utility: f64,
    pub iterations: usize,
}

pub fn coordinated_plan(model: &InventoryModel, state: &RollingState, config: &ConsensusConfig) -> Result<CoordinatedPlan> {
    model.validate()?;
    let jit = jit_policy(model, state, None)?;
    let retailer = RetailerFlowAgent::new(model, state);
    let supplier = SupplierFlowAgent::new(model, state);
    let mut pool = LocalPool::new(vec![Box::new(retailer), Box::new(supplier)], config.best_response)?;
    let res = run_consensus(&mut pool, config, Some(&jit))?;
    if !res.converged {
        return Err(Error::NonConvergence {
            iterations: res.iterations,
            detail: format!("week {} consensus residual {:.3e}", state.week, res.primal_residual),
        });
    }
    let plan = res.plan.into_inner();
    let joint = |x: &[f64]| -> Result<f64> {
        Ok(flow_utility_retailer(model, x, state)?.total + flow_utility_supplier(model, x, state))
    };
    Ok(CoordinatedPlan {
        joint_utility: joint(&plan)?,
        jit_joint_utility: joint(&jit)?,
        plan,
        jit,
        iterations: res.iterations,
    })
}

/// Payment for binding only the current week's order.
pub fn cbt_one(model: &InventoryModel, state: &RollingState, x_star: &[f64], jit: &[f64]) -> Result<f64> {
    let first = *x_star
        .first()
        .ok_or_else(|| Error::Dimension("empty consensus plan".into()))?;
    let pinned = jit_policy(model, state, Some(first))?;
    let baseline = flow_utility_retailer(model, jit, state)?.total;
    Ok(baseline - flow_utility_retailer(model, &pinned, state)?.total)
}

/// Baseline under full commitment: the plan of record, topped up with
/// order-up-to weeks where the window extends past it.
pub fn commitment_baseline(model: &InventoryModel, state: &RollingState, jit: &[f64]) -> Result<Vec<f64>> {
    let Some(record) = &state.plan_of_record else {
        return Ok(jit.to_vec());
    };
    let window = model.window(state.week);
    let mut inventory = state.inventory;
    let mut orders = Vec::with_capacity(window.len());
    for (k, t) in window.enumerate() {
        let order = match record.get(k) {
            Some(&q) => q,
            None => (model.target_at(t) - inventory).max(0.0),
        };
        let available = inventory + order;
        inventory = available - available.min(model.forecast[t]);
        orders.push(order);
    }
    Ok(orders)
}

/// Payment when the whole consensus plan binds.
pub fn cbt_six(model: &InventoryModel, state: &RollingState, x_star: &[f64], jit: &[f64]) -> Result<f64> {
    if state.mode != CommitmentMode::FullHorizon {
        return Err(Error::State("full-horizon payment requested outside full-horizon mode".into()));
    }
    let baseline = commitment_baseline(model, state, jit)?;
    Ok(flow_utility_retailer(model, &baseline, state)?.total - flow_utility_retailer(model, x_star, state)?.total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRecord {
    pub week: usize,
    pub order: f64,
    pub jit_order: f64,
    pub start_inventory: f64,
    pub end_inventory: f64,
    pub sales: f64,
    pub lost_sales: f64,
    pub cbt: f64,
}

/// Places this week's consensus order, books the payment for the state's
/// commitment mode, and advances one week against realized demand.
pub fn roll_forward(
    model: &InventoryModel,
    state: &RollingState,
    realized_demand: f64,
    consensus: &[f64],
    jit: &[f64],
) -> Result<(RollingState, WeekRecord)> {
    state.check(model)?;
    if !(realized_demand.is_finite() && realized_demand >= 0.0) {
        return Err(Error::Parameter(format!("realized demand must be >= 0, got {realized_demand}")));
    }
    let cbt = match state.mode {
        CommitmentMode::None => cbt_one(model, state, consensus, jit)?,
        CommitmentMode::FullHorizon => cbt_six(model, state, consensus, jit)?,
    };
    let order = consensus[0];
    let available = state.inventory + order;
    let sales = available.min(realized_demand);
    let end_inventory = available - sales;
    let next = RollingState {
        week: state.week + 1,
        inventory: end_inventory,
        last_order: order,
        plan_of_record: match state.mode {
            CommitmentMode::FullHorizon => Some(consensus[1..].to_vec()),
            CommitmentMode::None => None,
        },
        cumulative_cbt: state.cumulative_cbt + cbt,
        mode: state.mode,
    };
    let record = WeekRecord {
        week: state.week,
        order,
        jit_order: jit[0],
        start_inventory: state.inventory,
        end_inventory,
        sales,
        lost_sales: realized_demand - sales,
        cbt,
    };
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWeek {
    #[serde(flatten)]
    pub record: WeekRecord,
    pub plan: Vec<f64>,
    pub jit: Vec<f64>,
    pub joint_utility: f64,
    pub jit_joint_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub mode: CommitmentMode,
    pub weeks: Vec<PathWeek>,
    pub cumulative_cbt: f64,
}

/// Runs the whole path; `realized` defaults to the forecast.
pub fn simulate_path(
    model: &InventoryModel,
    mode: CommitmentMode,
    realized: Option<&[f64]>,
    config: &ConsensusConfig,
) -> Result<PathReport> {
    model.validate()?;
    let demand = realized.unwrap_or(&model.forecast);
    if demand.len() != model.path_length() {
        return Err(Error::Dimension(format!(
            "realized demand covers {} weeks, path has {}",
            demand.len(),
            model.path_length()
        )));
    }
    let mut state = RollingState::start(model, mode);
    let mut weeks = Vec::with_capacity(demand.len());
    for &d in demand {
        let coordinated = coordinated_plan(model, &state, config)?;
        let (next, record) = roll_forward(model, &state, d, &coordinated.plan, &coordinated.jit)?;
        weeks.push(PathWeek {
            record,
            plan: coordinated.plan,
            jit: coordinated.jit,
            joint_utility: coordinated.joint_utility,
            jit_joint_utility: coordinated.jit_joint_utility,
        });
        state = next;
    }
    Ok(PathReport {
        mode,
        weeks,
        cumulative_cbt: state.cumulative_cbt,
    })
}
