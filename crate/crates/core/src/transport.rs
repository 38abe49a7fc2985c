//! Transportation LPs behind the retailer's and supplier's utilities.
//!
//! Both utilities are the value of a min-cost transportation problem whose
//! right-hand side is the supply plan, so they are concave and piecewise linear
//! in the plan and their supergradients are read off the LP duals.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::FlowNetwork;

/// Quantity delivered to each inbound node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SupplyPlan(Vec<f64>);

impl SupplyPlan {
    pub fn new(quantities: Vec<f64>) -> Result<Self> {
        if let Some(q) = quantities.iter().find(|q| !q.is_finite() || **q < 0.0) {
            return Err(Error::Parameter(format!(
                "supply plan entries must be finite and nonnegative, got {q}"
            )));
        }
        Ok(Self(quantities))
    }

    /// Clamps tiny negative values (solver noise) to zero.
    pub fn from_clamped(quantities: impl IntoIterator<Item = f64>) -> Self {
        Self(quantities.into_iter().map(|q| q.max(0.0)).collect())
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SupplyPlan {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for SupplyPlan {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SupplyPlan> for Vec<f64> {
    fn from(p: SupplyPlan) -> Self {
        p.0
    }
}

/// Retailer's private data: inbound nodes `i` ship to outbound demand nodes `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetailerSpec {
    /// Demand per outbound node.
    pub demand: Vec<f64>,
    /// `arc_costs[i][j]`: cost per unit from inbound node `i` to outbound node `j`.
    pub arc_costs: Vec<Vec<f64>>,
    /// Gross profit per unit of demand at each outbound node.
    pub gross_profit: Vec<f64>,
    /// Cost per unit of demand left unserved.
    pub lost_sales_penalty: f64,
}

/// Supplier's private data: source nodes `k` ship to the retailer's inbound nodes `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplierSpec {
    pub capacity: Vec<f64>,
    /// `arc_costs[k][i]`: cost per unit from source `k` to inbound node `i`.
    pub arc_costs: Vec<Vec<f64>>,
    /// Gross profit per unit delivered to each inbound node.
    pub gross_profit: Vec<f64>,
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension(format!(
            "{name} must be {rows}x{cols}"
        )));
    }
    if m.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Parameter(format!(
            "{name} entries must be finite and nonnegative"
        )));
    }
    Ok(())
}

fn check_nonnegative(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(Error::Parameter(format!(
            "{name} entries must be finite and nonnegative"
        )));
    }
    Ok(())
}

impl RetailerSpec {
    pub fn inbound_count(&self) -> usize {
        self.arc_costs.len()
    }

    pub fn outbound_count(&self) -> usize {
        self.demand.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (i, j) = (self.inbound_count(), self.outbound_count());
        if i == 0 || j == 0 {
            return Err(Error::Dimension("retailer needs inbound and outbound nodes".into()));
        }
        check_matrix("retailer arc_costs", &self.arc_costs, i, j)?;
        check_nonnegative("retailer demand", &self.demand)?;
        if self.gross_profit.len() != j {
            return Err(Error::Dimension(format!(
                "retailer gross_profit has {} entries, expected {j}",
                self.gross_profit.len()
            )));
        }
        let max_cost = self.arc_costs.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
        if !(self.lost_sales_penalty.is_finite() && self.lost_sales_penalty > max_cost) {
            return Err(Error::Parameter(format!(
                "lost_sales_penalty {} must exceed the largest arc cost {max_cost}",
                self.lost_sales_penalty
            )));
        }
        Ok(())
    }

    /// Gross profit of serving all demand.
    pub fn gross_profit_total(&self) -> f64 {
        self.gross_profit
            .iter()
            .zip(&self.demand)
            .map(|(g, d)| g * d)
            .sum()
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }

    /// Plans the retailer can absorb: everything received is shipped on to demand.
    pub fn plan_capacity(&self) -> f64 {
        self.total_demand()
    }
}

impl SupplierSpec {
    pub fn inbound_count(&self) -> usize {
        self.gross_profit.len()
    }

    pub fn source_count(&self) -> usize {
        self.capacity.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, i) = (self.source_count(), self.inbound_count());
        if k == 0 || i == 0 {
            return Err(Error::Dimension("supplier needs source and inbound nodes".into()));
        }
        check_matrix("supplier arc_costs", &self.arc_costs, k, i)?;
        check_nonnegative("supplier capacity", &self.capacity)?;
        if self.gross_profit.iter().any(|g| !g.is_finite()) {
            return Err(Error::Parameter("supplier gross_profit must be finite".into()));
        }
        Ok(())
    }

    pub fn total_capacity(&self) -> f64 {
        self.capacity.iter().sum()
    }

    pub fn gross_profit_of(&self, x: &[f64]) -> f64 {
        self.gross_profit.iter().zip(x).map(|(g, q)| g * q).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowMode {
    /// `sum_j v_ij <= bound_i`; leftover row supply is discarded at no cost.
    AtMost,
    /// `sum_j v_ij == bound_i`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportStatus {
    Optimal,
    /// Optimal, but some requirement was met by the slack source.
    OptimalWithShortage,
}

#[derive(Debug, Clone)]
pub struct TransportProblem<'a> {
    pub costs: &'a [Vec<f64>],
    pub row_bounds: &'a [f64],
    pub col_requirements: &'a [f64],
    pub row_mode: RowMode,
    pub slack_penalty: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportSolution {
    /// `flows[i][j]`, rows by columns.
    pub flows: Vec<Vec<f64>>,
    /// Requirement met by the slack source, per column.
    pub unmet: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Marginal change of the optimal cost per unit increase of each row bound.
    pub row_prices: Vec<f64>,
    /// Marginal change of the optimal cost per unit increase of each column requirement.
    pub col_prices: Vec<f64>,
    pub status: TransportStatus,
}

/// Transportation LP with `sum_j v_ij <= row_bounds[i]` and
/// `sum_i v_ij >= col_requirements[j]`, shortfalls optionally met by a slack
/// source at `slack_penalty` per unit.
pub fn solve_transport(
    costs: &[Vec<f64>],
    row_bounds: &[f64],
    col_requirements: &[f64],
    slack_penalty: Option<f64>,
) -> Result<TransportSolution> {
    TransportProblem {
        costs,
        row_bounds,
        col_requirements,
        row_mode: RowMode::AtMost,
        slack_penalty,
    }
    .solve()
}

impl TransportProblem<'_> {
    pub fn solve(&self) -> Result<TransportSolution> {
        let rows = self.row_bounds.len();
        let cols = self.col_requirements.len();
        if self.costs.len() != rows || self.costs.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension(format!(
                "cost matrix must be {rows}x{cols}"
            )));
        }
        check_nonnegative("row bounds", self.row_bounds)?;
        check_nonnegative("column requirements", self.col_requirements)?;
        if self.costs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("arc costs must be finite".into()));
        }
        if let Some(p) = self.slack_penalty {
            if !p.is_finite() {
                return Err(Error::Parameter("slack penalty must be finite".into()));
            }
        }

        let row_total: f64 = self.row_bounds.iter().sum();
        let col_total: f64 = self.col_requirements.iter().sum();
        let slack_supply = if self.slack_penalty.is_some() {
            col_total
        } else {
            0.0
        };

        // rows, columns, slack source, sink for unused supply
        let col_node = |j: usize| rows + j;
        let slack = rows + cols;
        let sink = rows + cols + 1;
        let mut net = FlowNetwork::new(rows + cols + 2);
        for (i, &b) in self.row_bounds.iter().enumerate() {
            net.set_supply(i, b);
        }
        for (j, &d) in self.col_requirements.iter().enumerate() {
            net.set_supply(col_node(j), -d);
        }
        net.set_supply(slack, slack_supply);
        net.set_supply(sink, -(row_total + slack_supply - col_total));

        for (i, row) in self.costs.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                net.add_arc(i, col_node(j), c, f64::INFINITY);
            }
        }
        let slack_arcs = if let Some(p) = self.slack_penalty {
            let first = net.arcs().len();
            for j in 0..cols {
                net.add_arc(slack, col_node(j), p, f64::INFINITY);
            }
            net.add_arc(slack, sink, 0.0, f64::INFINITY);
            Some(first)
        } else {
            None
        };
        if self.row_mode == RowMode::AtMost {
            for i in 0..rows {
                net.add_arc(i, sink, 0.0, f64::INFINITY);
            }
        }

        let sol = net.solve().map_err(|e| match e {
            Error::Infeasible(detail) => Error::Infeasible(format!(
                "transportation problem ({rows} rows, {cols} columns): {detail}"
            )),
            other => other,
        })?;

        let flows: Vec<Vec<f64>> = (0..rows)
            .map(|i| sol.flows[i * cols..(i + 1) * cols].to_vec())
            .collect();
        let unmet = match slack_arcs {
            Some(first) => sol.flows[first..first + cols].to_vec(),
            None => vec![0.0; cols],
        };
        let status = if unmet.iter().any(|&u| u > 0.0) {
            TransportStatus::OptimalWithShortage
        } else {
            TransportStatus::Optimal
        };
        // raising a row bound also raises what the sink absorbs, and raising a
        // requirement lowers it, so both prices are measured against the sink
        let row_prices = (0..rows).map(|i| sol.shift_price(i, sink)).collect();
        let col_prices = (0..cols)
            .map(|j| sol.shift_price(sink, col_node(j)))
            .collect();
        Ok(TransportSolution {
            flows,
            unmet,
            objective: sol.cost,
            dual_objective: sol.dual_objective,
            row_prices,
            col_prices,
            status,
        })
    }
}

/// A utility value with a supergradient with respect to the plan.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub utility: f64,
    pub supergradient: Vec<f64>,
}

/// Utility together with the transportation plan that attains it.
#[derive(Debug, Clone)]
pub struct UtilityReport {
    pub utility: f64,
    pub transport_cost: f64,
    pub gross_profit: f64,
    pub supergradient: Vec<f64>,
    pub solution: TransportSolution,
}

impl From<UtilityReport> for Evaluation {
    fn from(r: UtilityReport) -> Self {
        Evaluation {
            utility: r.utility,
            supergradient: r.supergradient,
        }
    }
}

fn domain_check(x: &[f64], expected: usize, cap: f64, who: &str) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Dimension(format!(
            "{who} plan has {} entries, expected {expected}",
            x.len()
        )));
    }
    check_nonnegative("plan", x)?;
    let total: f64 = x.iter().sum();
    if total > cap + 1e-9 * (1.0 + cap) {
        return Err(Error::Infeasible(format!(
            "{who} cannot take a plan totalling {total} (limit {cap})"
        )));
    }
    Ok(())
}

/// Retailer's utility: gross profit on demand minus the cheapest way to route
/// the delivered plan to demand. Every delivered unit is shipped onward and
/// demand left uncovered is charged the lost-sales penalty.
pub fn retailer_utility(spec: &RetailerSpec, x: &[f64]) -> Result<UtilityReport> {
    domain_check(x, spec.inbound_count(), spec.plan_capacity(), "retailer")?;
    let solution = TransportProblem {
        costs: &spec.arc_costs,
        row_bounds: x,
        col_requirements: &spec.demand,
        row_mode: RowMode::Exact,
        slack_penalty: Some(spec.lost_sales_penalty),
    }
    .solve()?;
    let gross_profit = spec.gross_profit_total();
    let transport_cost = solution.objective;
    let supergradient = solution.row_prices.iter().map(|p| -p).collect();
    Ok(UtilityReport {
        utility: gross_profit - transport_cost,
        transport_cost,
        gross_profit,
        supergradient,
        solution,
    })
}

/// Supplier's utility: gross profit on the plan minus the cheapest way to
/// source it within capacity.
pub fn supplier_utility(spec: &SupplierSpec, x: &[f64]) -> Result<UtilityReport> {
    domain_check(x, spec.inbound_count(), spec.total_capacity(), "supplier")?;
    let solution = TransportProblem {
        costs: &spec.arc_costs,
        row_bounds: &spec.capacity,
        col_requirements: x,
        row_mode: RowMode::AtMost,
        slack_penalty: None,
    }
    .solve()?;
    let gross_profit = spec.gross_profit_of(x);
    let transport_cost = solution.objective;
    let supergradient = spec
        .gross_profit
        .iter()
        .zip(&solution.col_prices)
        .map(|(g, p)| g - p)
        .collect();
    Ok(UtilityReport {
        utility: gross_profit - transport_cost,
        transport_cost,
        gross_profit,
        supergradient,
        solution,
    })
}

/// Anything that can report its utility and a supergradient at a plan.
pub trait UtilityOracle {
    fn dim(&self) -> usize;

    /// Upper bound on the plan total outside of which the utility is undefined.
    fn plan_capacity(&self) -> Option<f64> {
        None
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;

    /// `argmax_x u(x) - (rho/2)|x - center|^2` for agents that can solve it
    /// directly; `None` falls back to the cutting-plane solver.
    fn proximal_point(&self, _center: &[f64], _rho: f64) -> Option<Result<Vec<f64>>> {
        None
    }
}

impl UtilityOracle for RetailerSpec {
    fn dim(&self) -> usize {
        self.inbound_count()
    }

    fn plan_capacity(&self) -> Option<f64> {
        Some(RetailerSpec::plan_capacity(self))
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        retailer_utility(self, x).map(Into::into)
    }
}

impl UtilityOracle for SupplierSpec {
    fn dim(&self) -> usize {
        self.inbound_count()
    }

    fn plan_capacity(&self) -> Option<f64> {
        Some(self.total_capacity())
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        supplier_utility(self, x).map(Into::into)
    }
}

impl<T: UtilityOracle + ?Sized> UtilityOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn proximal_point(&self, center: &[f64], rho: f64) -> Option<Result<Vec<f64>>> {
        (**self).proximal_point(center, rho)
    }
    fn plan_capacity(&self) -> Option<f64> {
        (**self).plan_capacity()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        (**self).evaluate(x)
    }
}

impl<T: UtilityOracle + ?Sized> UtilityOracle for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn proximal_point(&self, center: &[f64], rho: f64) -> Option<Result<Vec<f64>>> {
        (**self).proximal_point(center, rho)
    }
    fn plan_capacity(&self) -> Option<f64> {
        (**self).plan_capacity()
    }
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        (**self).evaluate(x)
    }
}

/// Supergradient of an agent's utility at `x`, read from the LP duals.
pub fn utility_supergradient<A: UtilityOracle + ?Sized>(agent: &A, x: &[f64]) -> Result<Vec<f64>> {
    agent.evaluate(x).map(|e| e.supergradient)
}
