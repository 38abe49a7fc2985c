//! Runs the requested analyses on a scenario and assembles the report.

use std::fmt::Write as _;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consensus::{run_consensus_traced, ConsensusResult, IterationRecord, LocalPool};
use crate::dynamic::{dynamic_consensus_config, simulate_path, PathReport};
use crate::error::{Error, Result};
use crate::mechanism::{
    budget_balance_check, build_menu, centralized_optimum, evaluate_menu, retailer_preferred_plan,
    standalone_plans, supplier_choose, sweep_plans, vcg_transfers, BoostedRetailer, BudgetDiagnosis,
    FeePolicy, MenuChoice, MenuOffer, SettlementReport, StatusQuo,
};
use crate::protocol::{AgentService, OfferOption, OfferReply, RemotePool, WireVector, DEFAULT_TIMEOUT};
use crate::scenario::{RunMode, Scenario};
use crate::transport::{retailer_utility, supplier_utility, SupplierSpec, SupplyPlan, UtilityOracle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Jit,
    Firstbest,
    Vcg,
    Menu,
    Dynamic,
}

impl Analysis {
    pub const ALL: [Analysis; 5] = [
        Analysis::Jit,
        Analysis::Firstbest,
        Analysis::Vcg,
        Analysis::Menu,
        Analysis::Dynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Jit => "jit",
            Analysis::Firstbest => "firstbest",
            Analysis::Vcg => "vcg",
            Analysis::Menu => "menu",
            Analysis::Dynamic => "dynamic",
        }
    }
}

impl FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Parameter(format!("unknown analysis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitSection {
    pub retailer_plan: SupplyPlan,
    pub supplier_plan: SupplyPlan,
    pub retailer_cost: f64,
    pub supplier_cost: f64,
    pub total_cost: f64,
    pub retailer_utility: f64,
    pub supplier_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

impl From<&ConsensusResult> for ConsensusSummary {
    fn from(r: &ConsensusResult) -> Self {
        Self {
            iterations: r.iterations,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstBestSection {
    pub plan: SupplyPlan,
    pub retailer_cost: f64,
    pub supplier_cost: f64,
    pub total_cost: f64,
    pub joint_utility: f64,
    pub coordination_gain: f64,
    /// Drop in total transport cost relative to JIT, in percent.
    pub cost_reduction_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus: Option<ConsensusSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcgSection {
    pub settlement: SettlementReport,
    pub budget: BudgetDiagnosis,
    /// Largest per-node gap between the settled plan and the efficient plan.
    pub allocation_distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuRow {
    pub plan: SupplyPlan,
    pub fee: f64,
    pub supplier_utility: Option<f64>,
    pub net_utility: Option<f64>,
    pub utility_net_of_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuSection {
    pub alpha: f64,
    pub options: Vec<MenuRow>,
    pub choice: MenuChoice,
    /// Settlement at the chosen plan; absent when the supplier declines.
    pub settlement: Option<SettlementReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub mode: RunMode,
    pub analyses: Vec<Analysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jit: Option<JitSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_best: Option<FirstBestSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vcg: Option<VcgSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub menu: Option<MenuSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<PathReport>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

fn in_context<T>(analysis: Analysis, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Analysis {
        analysis: analysis.name().into(),
        source: Box::new(e),
    })
}

type Trace<'t> = &'t mut dyn FnMut(&IterationRecord);
type MenuBuilder<'m> = &'m dyn Fn(&[f64]) -> Result<MenuOffer>;

/// Two agents served on loopback sockets for the length of one wire session.
fn wire_session<R, T>(
    retailer: R,
    supplier: &SupplierSpec,
    reservation: f64,
    scenario: &Scenario,
    start: &[f64],
    trace: Trace<'_>,
    after: impl FnOnce(&ConsensusResult, &mut RemotePool) -> Result<T>,
) -> Result<(ConsensusResult, T)>
where
    R: UtilityOracle + Send + Sync,
{
    let listeners = [TcpListener::bind("127.0.0.1:0")?, TcpListener::bind("127.0.0.1:0")?];
    let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr()).collect::<std::io::Result<_>>()?;
    let mut retailer_service = AgentService::new(retailer);
    retailer_service.best_response = scenario.consensus.best_response;
    let mut supplier_service = AgentService::new(supplier).with_reservation(reservation);
    supplier_service.best_response = scenario.consensus.best_response;

    std::thread::scope(|scope| {
        let [lr, ls] = &listeners;
        let rs = &retailer_service;
        let ss = &supplier_service;
        scope.spawn(move || lr.accept().map(|(s, _)| rs.serve_connection(s)));
        scope.spawn(move || ls.accept().map(|(s, _)| ss.serve_connection(s)));
        let outcome = (|| {
            let mut pool = RemotePool::connect(&addrs, start.len(), DEFAULT_TIMEOUT)?;
            let result = run_consensus_traced(&mut pool, &scenario.consensus, Some(start), trace)?;
            let extra = after(&result, &mut pool)?;
            pool.close()?;
            Ok((result, extra))
        })();
        if outcome.is_err() {
            // release any server still waiting for its connection
            for a in &addrs {
                let _ = TcpStream::connect(a);
            }
        }
        outcome
    })
}

fn converged(result: ConsensusResult) -> Result<ConsensusResult> {
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NonConvergence {
            iterations: result.iterations,
            detail: format!(
                "consensus residuals {:.3e} / {:.3e}",
                result.primal_residual, result.dual_residual
            ),
        })
    }
}

fn menu_plans(scenario: &Scenario, status_quo: &StatusQuo, efficient: &[f64]) -> Vec<SupplyPlan> {
    match &scenario.menu.plans {
        Some(plans) => plans.iter().map(|p| SupplyPlan::from_clamped(p.iter().copied())).collect(),
        None => sweep_plans(&status_quo.retailer_plan, efficient, scenario.menu.steps),
    }
}

fn menu_alpha(scenario: &Scenario) -> f64 {
    scenario.menu.alpha.unwrap_or_else(|| scenario.fee.alpha())
}

/// Plans under a (possibly boosted) retailer report, for the scenario's mode.
/// In protocol mode the menu, if any, is offered over the same session.
fn plan_for(
    scenario: &Scenario,
    status_quo: &StatusQuo,
    boost: &FeePolicy,
    trace: Trace<'_>,
    offer_menu: Option<MenuBuilder<'_>>,
) -> Result<(SupplyPlan, Option<ConsensusSummary>, Option<OfferReply>)> {
    let (r, s) = (&scenario.retailer, &scenario.supplier);
    let start = &status_quo.retailer_plan;
    match scenario.mode {
        RunMode::Centralized => Ok((centralized_optimum(r, s, boost, start)?.plan, None, None)),
        RunMode::Cpp => {
            let boosted = BoostedRetailer::new(r, *boost, start)?;
            let mut pool =
                LocalPool::new(vec![Box::new(boosted), Box::new(s)], scenario.consensus.best_response)?;
            let res = converged(run_consensus_traced(&mut pool, &scenario.consensus, Some(start), trace)?)?;
            let summary = ConsensusSummary::from(&res);
            Ok((res.plan, Some(summary), None))
        }
        RunMode::Protocol => {
            let boosted = BoostedRetailer::new(r, *boost, start)?;
            let reservation = supplier_utility(s, &status_quo.supplier_plan)?.utility;
            let (res, reply) = wire_session(boosted, s, reservation, scenario, start, trace, |res, pool| {
                let Some(build) = offer_menu else { return Ok(None) };
                let menu = build(&res.plan)?;
                let options = menu
                    .items
                    .iter()
                    .map(|i| OfferOption {
                        plan: WireVector::from(&i.plan[..]),
                        fee: i.fee,
                    })
                    .collect();
                pool.offer(1, options).map(Some)
            })?;
            let res = converged(res)?;
            let summary = ConsensusSummary::from(&res);
            Ok((res.plan, Some(summary), reply))
        }
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs `analyses` (plus whatever they depend on) and reports the requested ones.
pub fn run(scenario: &Scenario, analyses: &[Analysis], trace: Option<Trace<'_>>) -> Result<Report> {
    scenario.validate()?;
    let mut noop = |_: &IterationRecord| {};
    let trace: Trace<'_> = match trace {
        Some(t) => t,
        None => &mut noop,
    };
    let mut wanted: Vec<Analysis> = analyses.to_vec();
    wanted.sort();
    wanted.dedup();
    let wants = |a: Analysis| wanted.contains(&a);
    let needs_mechanism = wants(Analysis::Jit) || wants(Analysis::Firstbest) || wants(Analysis::Vcg) || wants(Analysis::Menu);
    let (r, s) = (&scenario.retailer, &scenario.supplier);

    let mut report = Report {
        scenario: scenario.clone(),
        mode: scenario.mode,
        analyses: wanted.clone(),
        jit: None,
        first_best: None,
        vcg: None,
        menu: None,
        dynamic: None,
    };

    if needs_mechanism {
        let status_quo = in_context(Analysis::Jit, standalone_plans(r, s, &scenario.status_quo))?;
        let ra = in_context(Analysis::Jit, retailer_utility(r, &status_quo.retailer_plan))?;
        let sa = in_context(Analysis::Jit, supplier_utility(s, &status_quo.supplier_plan))?;
        let jit = JitSection {
            retailer_plan: status_quo.retailer_plan.clone(),
            supplier_plan: status_quo.supplier_plan.clone(),
            retailer_cost: ra.transport_cost,
            supplier_cost: sa.transport_cost,
            total_cost: ra.transport_cost + sa.transport_cost,
            retailer_utility: ra.utility,
            supplier_utility: sa.utility,
        };

        let alpha = menu_alpha(scenario);
        let build = |efficient: &[f64]| build_menu(r, &status_quo, &menu_plans(scenario, &status_quo, efficient), alpha);
        let offer: Option<MenuBuilder<'_>> = if wants(Analysis::Menu) { Some(&build) } else { None };

        let mut wire_reply = None;
        let mut efficient = None;
        if wants(Analysis::Firstbest) || wants(Analysis::Vcg) || wants(Analysis::Menu) {
            let (plan, summary, reply) =
                in_context(Analysis::Firstbest, plan_for(scenario, &status_quo, &FeePolicy::None, trace, offer))?;
            wire_reply = reply;
            let ru = in_context(Analysis::Firstbest, retailer_utility(r, &plan))?;
            let su = in_context(Analysis::Firstbest, supplier_utility(s, &plan))?;
            let gain = ru.utility + su.utility - jit.retailer_utility - jit.supplier_utility;
            let total_cost = ru.transport_cost + su.transport_cost;
            efficient = Some(FirstBestSection {
                plan,
                retailer_cost: ru.transport_cost,
                supplier_cost: su.transport_cost,
                total_cost,
                joint_utility: ru.utility + su.utility,
                coordination_gain: gain,
                cost_reduction_percent: if jit.total_cost > 0.0 {
                    100.0 * (jit.total_cost - total_cost) / jit.total_cost
                } else {
                    0.0
                },
                consensus: summary,
            });
        }

        if wants(Analysis::Vcg) {
            let fb = efficient.as_ref().expect("computed above");
            let settled_plan = if scenario.fee.distorts_allocation() {
                in_context(Analysis::Vcg, plan_for(scenario, &status_quo, &scenario.fee, trace, None))?.0
            } else {
                fb.plan.clone()
            };
            let settlement = in_context(Analysis::Vcg, vcg_transfers(r, s, &status_quo, &settled_plan, &scenario.fee))?;
            in_context(Analysis::Vcg, settlement.verify())?;
            let budget = budget_balance_check(&settlement);
            if !budget.consistent {
                return Err(Error::Analysis {
                    analysis: "vcg".into(),
                    source: Box::new(Error::State(format!("budget regime {:?} contradicts the gain sign", budget.regime))),
                });
            }
            report.vcg = Some(VcgSection {
                allocation_distortion: max_gap(&settled_plan, &fb.plan),
                settlement,
                budget,
            });
        }

        if wants(Analysis::Menu) {
            let fb = efficient.as_ref().expect("computed above");
            let menu = in_context(Analysis::Menu, build(&fb.plan))?;
            let choice = in_context(Analysis::Menu, supplier_choose(s, &status_quo.supplier_plan, &menu))?;
            if let Some(reply) = wire_reply {
                let agrees = match (&choice, reply) {
                    (MenuChoice::Accept { index, .. }, OfferReply::Accept(i)) => *index == i,
                    (MenuChoice::Decline { .. }, OfferReply::Decline) => true,
                    _ => false,
                };
                if !agrees {
                    return Err(Error::Analysis {
                        analysis: "menu".into(),
                        source: Box::new(Error::Protocol(format!("remote supplier answered {reply:?}, expected {choice:?}"))),
                    });
                }
            }
            let options = menu
                .items
                .iter()
                .zip(evaluate_menu(s, &menu))
                .map(|(item, v)| MenuRow {
                    plan: item.plan.clone(),
                    fee: item.fee,
                    supplier_utility: v.as_ref().map(|v| v.supplier_utility),
                    net_utility: v.as_ref().map(|v| v.net_utility),
                    utility_net_of_alpha: v.as_ref().map(|v| v.utility_net_of_alpha),
                })
                .collect();
            let settlement = match &choice {
                MenuChoice::Accept { plan, .. } => {
                    let rep = in_context(
                        Analysis::Menu,
                        vcg_transfers(r, s, &status_quo, plan, &FeePolicy::Additive { alpha }),
                    )?;
                    Some(rep)
                }
                MenuChoice::Decline { .. } => None,
            };
            report.menu = Some(MenuSection {
                alpha,
                options,
                choice,
                settlement,
            });
        }

        if wants(Analysis::Jit) {
            report.jit = Some(jit);
        }
        if wants(Analysis::Firstbest) {
            report.first_best = efficient;
        }
    }

    if wants(Analysis::Dynamic) {
        let Some(d) = &scenario.dynamic else {
            return Err(Error::Analysis {
                analysis: "dynamic".into(),
                source: Box::new(Error::Parameter("scenario has no dynamic model".into())),
            });
        };
        let path = simulate_path(&d.model, d.commitment, d.realized.as_deref(), &dynamic_consensus_config());
        report.dynamic = Some(in_context(Analysis::Dynamic, path)?);
    }
    Ok(report)
}

fn money(v: f64) -> String {
    let v = if v.abs() < 0.005 { 0.0 } else { v };
    if v < 0.0 {
        format!("-${:.2}", -v)
    } else {
        format!("${v:.2}")
    }
}

fn plan_text(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|v| format!("{v:.2}")).collect();
    format!("({})", parts.join(", "))
}

/// Human-readable tables, amounts to the cent.
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let line = |out: &mut String, label: &str, value: String| {
        let _ = writeln!(out, "  {label:<34}{value}");
    };
    let _ = writeln!(out, "mode: {:?}", report.mode);
    if let Some(j) = &report.jit {
        let _ = writeln!(out, "\nJIT (status quo)");
        line(&mut out, "retailer plan", plan_text(&j.retailer_plan));
        line(&mut out, "supplier plan", plan_text(&j.supplier_plan));
        line(&mut out, "retailer cost", money(j.retailer_cost));
        line(&mut out, "supplier cost", money(j.supplier_cost));
        line(&mut out, "total cost", money(j.total_cost));
        line(&mut out, "retailer utility", money(j.retailer_utility));
        line(&mut out, "supplier utility", money(j.supplier_utility));
    }
    if let Some(f) = &report.first_best {
        let _ = writeln!(out, "\nFirst best");
        line(&mut out, "plan", plan_text(&f.plan));
        line(&mut out, "retailer cost", money(f.retailer_cost));
        line(&mut out, "supplier cost", money(f.supplier_cost));
        line(&mut out, "total cost", money(f.total_cost));
        line(&mut out, "coordination gain", money(f.coordination_gain));
        line(&mut out, "cost reduction", format!("{:.2}%", f.cost_reduction_percent));
        if let Some(c) = &f.consensus {
            line(&mut out, "consensus iterations", c.iterations.to_string());
        }
    }
    if let Some(v) = &report.vcg {
        let st = &v.settlement;
        let _ = writeln!(out, "\nVCG settlement");
        line(&mut out, "settled plan", plan_text(&st.plan));
        line(&mut out, "supplier transfer t_S", money(st.transfer_supplier));
        line(&mut out, "retailer transfer t_A", money(st.transfer_retailer));
        line(&mut out, "fee term", money(st.fee_term));
        line(&mut out, "budget (without fee)", format!("{} ({:?})", money(v.budget.sum), v.budget.regime));
        line(&mut out, "supplier net surplus", money(st.supplier_net_surplus));
        line(&mut out, "retailer net surplus", money(st.retailer_net_surplus));
        if v.allocation_distortion > 0.0 {
            line(&mut out, "allocation distortion", format!("{:.4}", v.allocation_distortion));
        }
    }
    if let Some(m) = &report.menu {
        let _ = writeln!(out, "\nMenu (alpha = {})", money(m.alpha));
        for (k, row) in m.options.iter().enumerate() {
            let opt = |v: Option<f64>| v.map_or("infeasible".to_string(), money);
            let _ = writeln!(
                out,
                "  plan {} {:<18} fee {:<10} u_S {:<10} u_S - fee {:<10} u_S - alpha {}",
                k + 1,
                plan_text(&row.plan),
                money(row.fee),
                opt(row.supplier_utility),
                opt(row.net_utility),
                opt(row.utility_net_of_alpha)
            );
        }
        match &m.choice {
            MenuChoice::Accept { index, plan, fee, .. } => {
                let _ = writeln!(out, "  supplier chooses plan {} {} at fee {}", index + 1, plan_text(plan), money(*fee));
            }
            MenuChoice::Decline { .. } => {
                let _ = writeln!(out, "  supplier declines; status quo stands");
            }
        }
    }
    if let Some(d) = &report.dynamic {
        let _ = writeln!(out, "\nRolling horizon ({:?} commitment)", d.mode);
        let _ = writeln!(out, "  week  order    jit      start    end      lost     CBT");
        for w in &d.weeks {
            let r = &w.record;
            let _ = writeln!(
                out,
                "  {:<5} {:<8.2} {:<8.2} {:<8.2} {:<8.2} {:<8.2} {}",
                r.week + 1,
                r.order,
                r.jit_order,
                r.start_inventory,
                r.end_inventory,
                r.lost_sales,
                money(r.cbt)
            );
        }
        line(&mut out, "cumulative CBT", money(d.cumulative_cbt));
    }
    out
}

/// The retailer's preferred plan for a scenario (used by `serve`).
pub fn status_quo_for(scenario: &Scenario) -> Result<StatusQuo> {
    retailer_preferred_plan(&scenario.retailer)?;
    standalone_plans(&scenario.retailer, &scenario.supplier, &scenario.status_quo)
}
