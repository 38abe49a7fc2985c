//! VCG settlement between a retailer and a supplier: status quo, efficient
//! plan, transfers, budget diagnostics, activity fees and menus of contracts.

use serde::{Deserialize, Serialize};

use crate::consensus::{run_consensus, ConsensusConfig, ConsensusResult, LocalPool};
use crate::error::{Error, Result};
use crate::network::FlowNetwork;
use crate::transport::{
    retailer_utility, supplier_utility, Evaluation, RetailerSpec, SupplierSpec, SupplyPlan,
    UtilityOracle,
};

/// Slack used when classifying budget signs and checking identities.
pub const MONEY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatusQuoMode {
    JitDerived,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusQuo {
    pub retailer_plan: SupplyPlan,
    pub supplier_plan: SupplyPlan,
    pub mode: StatusQuoMode,
}

/// How the status quo is formed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StatusQuoSource {
    #[default]
    JitDerived,
    Explicit {
        retailer_plan: SupplyPlan,
        supplier_plan: SupplyPlan,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeePolicy {
    #[default]
    None,
    Additive { alpha: f64 },
    Multiplicative { beta: f64 },
    Roi { r: f64 },
    LinearDeviation { over: f64, under: f64 },
}

impl FeePolicy {
    pub fn validate(&self) -> Result<()> {
        let params: &[(&str, f64)] = match self {
            FeePolicy::None => &[],
            FeePolicy::Additive { alpha } => &[("alpha", *alpha)],
            FeePolicy::Multiplicative { beta } => &[("beta", *beta)],
            FeePolicy::Roi { r } => &[("r", *r)],
            FeePolicy::LinearDeviation { over, under } => &[("over", *over), ("under", *under)],
        };
        for (name, v) in params {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Parameter(format!("fee parameter {name} must be >= 0, got {v}")));
            }
        }
        if let FeePolicy::LinearDeviation { over, under } = self {
            if under > over {
                return Err(Error::Parameter(format!(
                    "under-delivery rate {under} exceeds over-delivery rate {over}"
                )));
            }
        }
        Ok(())
    }

    /// The additive constant, zero for other variants.
    pub fn alpha(&self) -> f64 {
        match self {
            FeePolicy::Additive { alpha } => *alpha,
            _ => 0.0,
        }
    }

    /// Variants that change the reported retailer utility and hence the plan.
    pub fn distorts_allocation(&self) -> bool {
        !matches!(self, FeePolicy::None | FeePolicy::Additive { .. })
    }
}

/// The retailer's preferred plan: each market is served from its cheapest
/// inbound node (lowest index on ties).
pub fn retailer_preferred_plan(retailer: &RetailerSpec) -> Result<SupplyPlan> {
    retailer.validate()?;
    let mut x = vec![0.0; retailer.inbound_count()];
    for (j, &d) in retailer.demand.iter().enumerate() {
        let best = (0..retailer.inbound_count())
            .min_by(|&a, &b| retailer.arc_costs[a][j].total_cmp(&retailer.arc_costs[b][j]))
            .expect("validated nonempty");
        x[best] += d;
    }
    SupplyPlan::new(x)
}

/// Supplier's best plan with each node capped at the order `q`.
pub fn partial_confirmation(supplier: &SupplierSpec, order: &[f64]) -> Result<SupplyPlan> {
    supplier.validate()?;
    let (k, n) = (supplier.source_count(), supplier.inbound_count());
    if order.len() != n {
        return Err(Error::Dimension(format!(
            "order has {} entries, supplier has {n} nodes",
            order.len()
        )));
    }
    let sink = k + n;
    let mut net = FlowNetwork::new(k + n + 1);
    for (s, &cap) in supplier.capacity.iter().enumerate() {
        net.set_supply(s, cap);
    }
    net.set_supply(sink, -supplier.total_capacity());
    for s in 0..k {
        for i in 0..n {
            net.add_arc(s, k + i, supplier.arc_costs[s][i] - supplier.gross_profit[i], f64::INFINITY);
        }
    }
    let delivered: Vec<usize> = (0..n).map(|i| net.add_arc(k + i, sink, 0.0, order[i])).collect();
    for s in 0..k {
        net.add_arc(s, sink, 0.0, f64::INFINITY);
    }
    let sol = net.solve()?;
    Ok(SupplyPlan::from_clamped(delivered.iter().map(|&a| sol.flows[a])))
}

pub fn standalone_plans(
    retailer: &RetailerSpec,
    supplier: &SupplierSpec,
    source: &StatusQuoSource,
) -> Result<StatusQuo> {
    match source {
        StatusQuoSource::Explicit {
            retailer_plan,
            supplier_plan,
        } => {
            retailer_utility(retailer, retailer_plan)?;
            supplier_utility(supplier, supplier_plan)?;
            Ok(StatusQuo {
                retailer_plan: retailer_plan.clone(),
                supplier_plan: supplier_plan.clone(),
                mode: StatusQuoMode::Explicit,
            })
        }
        StatusQuoSource::JitDerived => {
            let order = retailer_preferred_plan(retailer)?;
            let supplier_plan = match supplier_utility(supplier, &order) {
                Ok(_) => order.clone(),
                Err(Error::Infeasible(_)) => partial_confirmation(supplier, &order)?,
                Err(e) => return Err(e),
            };
            Ok(StatusQuo {
                retailer_plan: order,
                supplier_plan,
                mode: StatusQuoMode::JitDerived,
            })
        }
    }
}

/// `c(x, x_A)`: `over` per unit above the reference, `under` per unit below it.
pub fn deviation_penalty(x_star: &[f64], x_a: &[f64], over: f64, under: f64) -> Result<f64> {
    if x_star.len() != x_a.len() {
        return Err(Error::Dimension("plans differ in length".into()));
    }
    FeePolicy::LinearDeviation { over, under }.validate()?;
    Ok(x_star
        .iter()
        .zip(x_a)
        .map(|(x, a)| if x >= a { over * (x - a) } else { under * (a - x) })
        .sum())
}

/// The retailer's utility as reported under an activity fee.
///
/// Every plan satisfies `u_A(x) <= u_A(x_A)` because `x_A` is the retailer's
/// own optimum, so the return-on-investment fee `r |u_A(x_A) - u_A(x)|` is an
/// affine rescaling of `u_A` just like the multiplicative boost.
#[derive(Debug, Clone)]
pub struct BoostedRetailer<'a> {
    spec: &'a RetailerSpec,
    policy: FeePolicy,
    reference: Vec<f64>,
    reference_utility: f64,
}

impl<'a> BoostedRetailer<'a> {
    pub fn new(spec: &'a RetailerSpec, policy: FeePolicy, reference: &[f64]) -> Result<Self> {
        policy.validate()?;
        let reference_utility = retailer_utility(spec, reference)?.utility;
        Ok(Self {
            spec,
            policy,
            reference: reference.to_vec(),
            reference_utility,
        })
    }

    fn affine(&self) -> (f64, f64) {
        match self.policy {
            FeePolicy::Multiplicative { beta } => (1.0 + beta, 0.0),
            FeePolicy::Roi { r } => (1.0 + r, -r * self.reference_utility),
            _ => (1.0, 0.0),
        }
    }
}

impl UtilityOracle for BoostedRetailer<'_> {
    fn dim(&self) -> usize {
        self.spec.inbound_count()
    }

    fn plan_capacity(&self) -> Option<f64> {
        Some(self.spec.plan_capacity())
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let base = retailer_utility(self.spec, x)?;
        if let FeePolicy::LinearDeviation { over, under } = self.policy {
            let penalty = deviation_penalty(x, &self.reference, over, under)?;
            let supergradient = base
                .supergradient
                .iter()
                .zip(x.iter().zip(&self.reference))
                .map(|(g, (q, a))| if q >= a { g - over } else { g + under })
                .collect();
            return Ok(Evaluation {
                utility: base.utility - penalty,
                supergradient,
            });
        }
        let (scale, offset) = self.affine();
        Ok(Evaluation {
            utility: scale * base.utility + offset,
            supergradient: base.supergradient.iter().map(|g| scale * g).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointOptimum {
    pub plan: SupplyPlan,
    /// Boosted retailer utility plus supplier utility at the plan.
    pub value: f64,
}

/// Joint plan from one min-cost flow over both networks.
///
/// Sources feed inbound nodes (supplier cost minus supplier margin), inbound
/// nodes feed markets (retailer cost), and a slack node covers lost sales.
/// Surplus capacity drains to a sink at no cost.
pub fn centralized_optimum(
    retailer: &RetailerSpec,
    supplier: &SupplierSpec,
    boost: &FeePolicy,
    reference: &[f64],
) -> Result<JointOptimum> {
    retailer.validate()?;
    supplier.validate()?;
    boost.validate()?;
    let n = retailer.inbound_count();
    if supplier.inbound_count() != n || reference.len() != n {
        return Err(Error::Dimension(format!(
            "retailer has {n} inbound nodes, supplier {}, reference plan {}",
            supplier.inbound_count(),
            reference.len()
        )));
    }
    let (k, j) = (supplier.source_count(), retailer.outbound_count());
    let scale = match boost {
        FeePolicy::Multiplicative { beta } => 1.0 + beta,
        FeePolicy::Roi { r } => 1.0 + r,
        _ => 1.0,
    };
    let split = matches!(boost, FeePolicy::LinearDeviation { .. });
    // node layout: sources, [split entry nodes], inbound, markets, slack, sink
    let entry0 = k;
    let inbound0 = if split { k + n } else { k };
    let market0 = inbound0 + n;
    let slack = market0 + j;
    let sink = slack + 1;
    let mut net = FlowNetwork::new(sink + 1);
    let demand = retailer.total_demand();
    for (s, &cap) in supplier.capacity.iter().enumerate() {
        net.set_supply(s, cap);
    }
    for (m, &d) in retailer.demand.iter().enumerate() {
        net.set_supply(market0 + m, -d);
    }
    net.set_supply(slack, demand);
    net.set_supply(sink, -supplier.total_capacity());

    let first_leg_target = if split { entry0 } else { inbound0 };
    let mut intake = vec![Vec::with_capacity(k); n];
    for s in 0..k {
        for i in 0..n {
            let a = net.add_arc(
                s,
                first_leg_target + i,
                supplier.arc_costs[s][i] - supplier.gross_profit[i],
                f64::INFINITY,
            );
            intake[i].push(a);
        }
    }
    let mut constant = 0.0;
    if let FeePolicy::LinearDeviation { over, under } = *boost {
        for i in 0..n {
            net.add_arc(entry0 + i, inbound0 + i, -under, reference[i]);
            net.add_arc(entry0 + i, inbound0 + i, over, f64::INFINITY);
        }
        constant += under * reference.iter().sum::<f64>();
    }
    for i in 0..n {
        for m in 0..j {
            net.add_arc(inbound0 + i, market0 + m, scale * retailer.arc_costs[i][m], f64::INFINITY);
        }
    }
    for m in 0..j {
        net.add_arc(slack, market0 + m, scale * retailer.lost_sales_penalty, f64::INFINITY);
    }
    for s in 0..k {
        net.add_arc(s, sink, 0.0, f64::INFINITY);
    }
    net.add_arc(slack, sink, 0.0, f64::INFINITY);

    let sol = net.solve()?;
    let plan = SupplyPlan::from_clamped(
        intake
            .iter()
            .map(|arcs| arcs.iter().map(|&a| sol.flows[a]).sum::<f64>()),
    );
    let offset = match boost {
        FeePolicy::Roi { r } => -r * retailer_utility(retailer, reference)?.utility,
        _ => 0.0,
    };
    Ok(JointOptimum {
        plan,
        value: scale * retailer.gross_profit_total() - sol.cost - constant + offset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum PlanMethod {
    Centralized,
    Cpp(ConsensusConfig),
}

/// Runs consensus between the (possibly boosted) retailer and the supplier,
/// starting from the retailer's preferred plan.
pub fn consensus_plan(
    retailer: &RetailerSpec,
    supplier: &SupplierSpec,
    boost: &FeePolicy,
    reference: &[f64],
    config: &ConsensusConfig,
) -> Result<ConsensusResult> {
    let boosted = BoostedRetailer::new(retailer, *boost, reference)?;
    let mut pool = LocalPool::new(vec![Box::new(boosted), Box::new(supplier)], config.best_response)?;
    run_consensus(&mut pool, config, Some(reference))
}

pub fn efficient_plan(
    retailer: &RetailerSpec,
    supplier: &SupplierSpec,
    status_quo: &StatusQuo,
    boost: &FeePolicy,
    method: &PlanMethod,
) -> Result<SupplyPlan> {
    let reference = &status_quo.retailer_plan;
    match method {
        PlanMethod::Centralized => Ok(centralized_optimum(retailer, supplier, boost, reference)?.plan),
        PlanMethod::Cpp(config) => {
            let res = consensus_plan(retailer, supplier, boost, reference, config)?;
            if !res.converged {
                return Err(Error::NonConvergence {
                    iterations: res.iterations,
                    detail: format!(
                        "consensus residuals {:.3e} / {:.3e}",
                        res.primal_residual, res.dual_residual
                    ),
                });
            }
            Ok(res.plan)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetRegime {
    Deficit,
    Surplus,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementReport {
    pub plan: SupplyPlan,
    pub status_quo: StatusQuo,
    pub retailer_utility: f64,
    pub supplier_utility: f64,
    pub retailer_status_quo_utility: f64,
    pub supplier_status_quo_utility: f64,
    /// Payment to the retailer in its agent role.
    pub transfer_retailer: f64,
    /// Payment from the supplier.
    pub transfer_supplier: f64,
    /// Part of `transfer_supplier` due to the activity fee.
    pub fee_term: f64,
    pub budget_sum: f64,
    pub coordination_gain: f64,
    pub supplier_net_surplus: f64,
    /// Retailer gain with principal and agent positions netted, so the
    /// agent-side transfer cancels.
    pub retailer_net_surplus: f64,
    pub fee_policy: FeePolicy,
}

impl SettlementReport {
    /// Re-checks the accounting identities the report must satisfy.
    pub fn verify(&self) -> Result<()> {
        let tol = MONEY_TOLERANCE * (1.0 + self.retailer_status_quo_utility.abs());
        let lhs = self.retailer_utility + self.transfer_supplier;
        let rhs = self.retailer_status_quo_utility + self.fee_term;
        if (lhs - rhs).abs() > tol {
            return Err(Error::State(format!(
                "transfer identity violated: {lhs} != {rhs}"
            )));
        }
        let split = self.supplier_net_surplus + self.retailer_net_surplus;
        if (split - self.coordination_gain).abs() > tol {
            return Err(Error::State(format!(
                "surplus split {split} does not add to the gain {}",
                self.coordination_gain
            )));
        }
        if self.fee_term <= self.coordination_gain
            && self.supplier_utility - self.transfer_supplier
                < self.supplier_status_quo_utility - tol
        {
            return Err(Error::State("supplier participation violated".into()));
        }
        Ok(())
    }
}

pub fn vcg_transfers(
    retailer: &RetailerSpec,
    supplier: &SupplierSpec,
    status_quo: &StatusQuo,
    x_star: &[f64],
    fee: &FeePolicy,
) -> Result<SettlementReport> {
    fee.validate()?;
    let ua_sq = retailer_utility(retailer, &status_quo.retailer_plan)?.utility;
    let us_sq = supplier_utility(supplier, &status_quo.supplier_plan)?.utility;
    let ua = retailer_utility(retailer, x_star)?.utility;
    let us = supplier_utility(supplier, x_star)?.utility;
    let externality = ua_sq - ua;
    let fee_term = match *fee {
        FeePolicy::None => 0.0,
        FeePolicy::Additive { alpha } => alpha,
        FeePolicy::Multiplicative { beta } => beta * externality,
        FeePolicy::Roi { r } => r * externality.abs(),
        FeePolicy::LinearDeviation { over, under } => {
            deviation_penalty(x_star, &status_quo.retailer_plan, over, under)?
        }
    };
    let transfer_supplier = externality + fee_term;
    let transfer_retailer = us_sq - us;
    let coordination_gain = ua + us - ua_sq - us_sq;
    Ok(SettlementReport {
        plan: SupplyPlan::new(x_star.to_vec())?,
        status_quo: status_quo.clone(),
        retailer_utility: ua,
        supplier_utility: us,
        retailer_status_quo_utility: ua_sq,
        supplier_status_quo_utility: us_sq,
        transfer_retailer,
        transfer_supplier,
        fee_term,
        budget_sum: transfer_retailer + transfer_supplier,
        coordination_gain,
        supplier_net_surplus: us - transfer_supplier - us_sq,
        retailer_net_surplus: ua + transfer_supplier - ua_sq,
        fee_policy: *fee,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetDiagnosis {
    /// `t_A + t_S` without the activity fee.
    pub sum: f64,
    pub regime: BudgetRegime,
    /// Joint utility at the efficient plan is at least the status quo's.
    pub complements: bool,
    pub consistent: bool,
}

/// Sign of the transfer sum against the joint-utility comparison.
///
/// The fee-free transfers add up to minus the coordination gain, so a deficit
/// occurs exactly when cooperating beats the stand-alone values.
pub fn budget_balance_check(report: &SettlementReport) -> BudgetDiagnosis {
    let sum = report.budget_sum - report.fee_term;
    let regime = if sum < -MONEY_TOLERANCE {
        BudgetRegime::Deficit
    } else if sum > MONEY_TOLERANCE {
        BudgetRegime::Surplus
    } else {
        BudgetRegime::Balanced
    };
    let joint_star = report.retailer_utility + report.supplier_utility;
    let joint_sq = report.retailer_status_quo_utility + report.supplier_status_quo_utility;
    let complements = joint_star >= joint_sq - MONEY_TOLERANCE;
    let consistent = match regime {
        BudgetRegime::Deficit => complements,
        BudgetRegime::Surplus => !complements || joint_star - joint_sq <= MONEY_TOLERANCE,
        BudgetRegime::Balanced => (joint_star - joint_sq).abs() <= 2.0 * MONEY_TOLERANCE,
    };
    BudgetDiagnosis {
        sum,
        regime,
        complements,
        consistent,
    }
}

pub fn coordination_gain(report: &SettlementReport) -> f64 {
    report.retailer_utility + report.supplier_utility
        - report.retailer_status_quo_utility
        - report.supplier_status_quo_utility
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuItem {
    pub plan: SupplyPlan,
    pub fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuOffer {
    pub items: Vec<MenuItem>,
    pub alpha: f64,
}

/// Plans stepping from `x_A` toward `x*` in equal strides of `(x* - x_A)/(steps - 1)`,
/// starting one stride out; plans leaving the nonnegative orthant are dropped.
pub fn sweep_plans(x_a: &[f64], x_star: &[f64], steps: usize) -> Vec<SupplyPlan> {
    let stride = 1.0 / (steps.max(2) - 1) as f64;
    (1..=steps)
        .map(|k| {
            x_a.iter()
                .zip(x_star)
                .map(|(a, b)| a + k as f64 * stride * (b - a))
                .collect::<Vec<f64>>()
        })
        .filter(|p| p.iter().all(|&v| v >= -1e-9))
        .map(SupplyPlan::from_clamped)
        .collect()
}

pub fn build_menu(
    retailer: &RetailerSpec,
    status_quo: &StatusQuo,
    plans: &[SupplyPlan],
    alpha: f64,
) -> Result<MenuOffer> {
    if plans.is_empty() {
        return Err(Error::Parameter("menu needs at least one plan".into()));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Parameter(format!("fee constant must be >= 0, got {alpha}")));
    }
    let reference = retailer_utility(retailer, &status_quo.retailer_plan)?.utility;
    let items = plans
        .iter()
        .map(|p| {
            Ok(MenuItem {
                plan: p.clone(),
                fee: reference - retailer_utility(retailer, p)?.utility + alpha,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MenuOffer { items, alpha })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionValue {
    pub supplier_utility: f64,
    /// `u_S(plan) - fee`: what the supplier maximizes.
    pub net_utility: f64,
    /// `u_S(plan) - alpha`: utility net of the constant part of the fee.
    pub utility_net_of_alpha: f64,
}

/// Supplier-side valuation of each menu item; infeasible plans are `None`.
pub fn evaluate_menu(supplier: &SupplierSpec, menu: &MenuOffer) -> Vec<Option<OptionValue>> {
    menu.items
        .iter()
        .map(|item| {
            supplier_utility(supplier, &item.plan).ok().map(|r| OptionValue {
                supplier_utility: r.utility,
                net_utility: r.utility - item.fee,
                utility_net_of_alpha: r.utility - menu.alpha,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "kebab-case")]
pub enum MenuChoice {
    Accept {
        index: usize,
        plan: SupplyPlan,
        fee: f64,
        net_utility: f64,
    },
    Decline {
        reservation_utility: f64,
    },
}

/// Picks the item with the highest `u_S - fee` (lowest index on ties) and
/// accepts only if it is at least as good as the supplier's stand-alone plan.
pub fn supplier_choose(
    supplier: &SupplierSpec,
    standalone_plan: &[f64],
    menu: &MenuOffer,
) -> Result<MenuChoice> {
    let reservation_utility = supplier_utility(supplier, standalone_plan)?.utility;
    let mut best: Option<(usize, f64)> = None;
    for (idx, value) in evaluate_menu(supplier, menu).into_iter().enumerate() {
        if let Some(v) = value {
            if best.is_none_or(|(_, b)| v.net_utility > b) {
                best = Some((idx, v.net_utility));
            }
        }
    }
    Ok(match best {
        Some((index, net)) if net >= reservation_utility - MONEY_TOLERANCE => MenuChoice::Accept {
            index,
            plan: menu.items[index].plan.clone(),
            fee: menu.items[index].fee,
            net_utility: net,
        },
        _ => MenuChoice::Decline {
            reservation_utility,
        },
    })
}

/// Offer-level participation check used by agents answering a single offer.
pub fn accepts_offer(
    supplier: &SupplierSpec,
    standalone_plan: &[f64],
    plan: &[f64],
    fee: f64,
) -> Result<bool> {
    let reservation = supplier_utility(supplier, standalone_plan)?.utility;
    Ok(match supplier_utility(supplier, plan) {
        Ok(r) => r.utility - fee >= reservation - MONEY_TOLERANCE,
        Err(Error::Infeasible(_)) => false,
        Err(e) => return Err(e),
    })
}
