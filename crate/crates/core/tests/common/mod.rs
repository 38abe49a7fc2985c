//! Independent reference computations shared by the integration suites.
//!
//! Nothing here calls into the solver code under test: LPs go through
//! `microlp`, small integer problems are enumerated, and the inventory
//! model is re-simulated from its defining recurrences.
#![allow(dead_code)]

use cppvcg::dynamic::InventoryModel;
use cppvcg::{RetailerSpec, SupplierSpec};
use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use nalgebra::{DMatrix, DVector};

pub const TOY_SCENARIO: &str = include_str!("../../../cli/scenarios/toy.scn");

/// Two inbound nodes, two markets, two plants, as bundled in `toy.scn`.
pub fn toy() -> (RetailerSpec, SupplierSpec) {
    (
        RetailerSpec {
            demand: vec![40.0, 60.0],
            arc_costs: vec![vec![1.0, 5.0], vec![2.0, 3.0]],
            gross_profit: vec![20.0, 20.0],
            lost_sales_penalty: 20.0,
        },
        SupplierSpec {
            capacity: vec![100.0, 10.0],
            arc_costs: vec![vec![10.0, 5.0], vec![1.0, 2.0]],
            gross_profit: vec![20.0, 20.0],
        },
    )
}

fn solve(problem: &Problem) -> Option<microlp::Solution> {
    problem.solve().ok()?.into_solution().ok()
}

/// Retailer utility by LP: route exactly `x` to the markets, unmet demand at
/// the lost-sales penalty.
pub fn retailer_utility_lp(r: &RetailerSpec, x: &[f64]) -> Option<f64> {
    let (ni, nj) = (x.len(), r.demand.len());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let v: Vec<Vec<Variable>> = (0..ni)
        .map(|i| (0..nj).map(|j| lp.add_var(r.arc_costs[i][j], (0.0, f64::INFINITY))).collect())
        .collect();
    let unmet: Vec<Variable> = (0..nj).map(|_| lp.add_var(r.lost_sales_penalty, (0.0, f64::INFINITY))).collect();
    for i in 0..ni {
        lp.add_constraint(v[i].iter().map(|&a| (a, 1.0)), ComparisonOp::Eq, x[i]);
    }
    for j in 0..nj {
        let mut terms: Vec<(Variable, f64)> = (0..ni).map(|i| (v[i][j], 1.0)).collect();
        terms.push((unmet[j], 1.0));
        lp.add_constraint(terms, ComparisonOp::Eq, r.demand[j]);
    }
    let cost = solve(&lp)?.objective();
    let gross: f64 = r.gross_profit.iter().zip(&r.demand).map(|(g, d)| g * d).sum();
    Some(gross - cost)
}

/// Supplier utility by LP; `None` when the plan exceeds capacity.
pub fn supplier_utility_lp(s: &SupplierSpec, x: &[f64]) -> Option<f64> {
    let (nk, ni) = (s.capacity.len(), x.len());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let v: Vec<Vec<Variable>> = (0..nk)
        .map(|k| (0..ni).map(|i| lp.add_var(s.arc_costs[k][i], (0.0, f64::INFINITY))).collect())
        .collect();
    for k in 0..nk {
        lp.add_constraint(v[k].iter().map(|&a| (a, 1.0)), ComparisonOp::Le, s.capacity[k]);
    }
    for i in 0..ni {
        lp.add_constraint((0..nk).map(|k| (v[k][i], 1.0)), ComparisonOp::Eq, x[i]);
    }
    let cost = solve(&lp)?.objective();
    Some(s.gross_profit.iter().zip(x).map(|(g, q)| g * q).sum::<f64>() - cost)
}

/// Maximum of `u_A(x) + u_S(x)` over all plans, from one joint LP.
pub fn joint_optimum_lp(r: &RetailerSpec, s: &SupplierSpec) -> (f64, Vec<f64>) {
    let (nk, ni, nj) = (s.capacity.len(), r.arc_costs.len(), r.demand.len());
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vs: Vec<Vec<Variable>> = (0..nk)
        .map(|k| {
            (0..ni)
                .map(|i| lp.add_var(s.gross_profit[i] - s.arc_costs[k][i], (0.0, f64::INFINITY)))
                .collect()
        })
        .collect();
    let va: Vec<Vec<Variable>> = (0..ni)
        .map(|i| (0..nj).map(|j| lp.add_var(-r.arc_costs[i][j], (0.0, f64::INFINITY))).collect())
        .collect();
    let unmet: Vec<Variable> = (0..nj).map(|_| lp.add_var(-r.lost_sales_penalty, (0.0, f64::INFINITY))).collect();
    for k in 0..nk {
        lp.add_constraint(vs[k].iter().map(|&a| (a, 1.0)), ComparisonOp::Le, s.capacity[k]);
    }
    for i in 0..ni {
        let mut terms: Vec<(Variable, f64)> = (0..nk).map(|k| (vs[k][i], 1.0)).collect();
        terms.extend(va[i].iter().map(|&a| (a, -1.0)));
        lp.add_constraint(terms, ComparisonOp::Eq, 0.0);
    }
    for j in 0..nj {
        let mut terms: Vec<(Variable, f64)> = (0..ni).map(|i| (va[i][j], 1.0)).collect();
        terms.push((unmet[j], 1.0));
        lp.add_constraint(terms, ComparisonOp::Eq, r.demand[j]);
    }
    let sol = solve(&lp).expect("joint LP is feasible and bounded");
    let gross: f64 = r.gross_profit.iter().zip(&r.demand).map(|(g, d)| g * d).sum();
    let plan = (0..ni).map(|i| (0..nk).map(|k| sol.var_value(vs[k][i])).sum()).collect();
    (sol.objective() + gross, plan)
}

/// Cheapest way to meet integer column requirements from integer row
/// supplies, by listing every integer flow matrix.
pub fn enumerate_transport(costs: &[Vec<f64>], supply: &[u32], demand: &[u32]) -> Option<f64> {
    let (rows, cols) = (supply.len(), demand.len());
    let mut best: Option<f64> = None;
    let mut left = supply.to_vec();
    let mut flows = vec![0u32; rows * cols];
    fn column(
        j: usize,
        costs: &[Vec<f64>],
        demand: &[u32],
        left: &mut [u32],
        flows: &mut [u32],
        best: &mut Option<f64>,
    ) {
        let (rows, cols) = (left.len(), demand.len());
        if j == cols {
            let cost: f64 = (0..rows * cols).map(|e| costs[e / cols][e % cols] * flows[e] as f64).sum();
            if best.map_or(true, |b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        split(0, demand[j], j, costs, demand, left, flows, best);
    }
    #[allow(clippy::too_many_arguments)]
    fn split(
        i: usize,
        remaining: u32,
        j: usize,
        costs: &[Vec<f64>],
        demand: &[u32],
        left: &mut [u32],
        flows: &mut [u32],
        best: &mut Option<f64>,
    ) {
        let cols = demand.len();
        if i + 1 == left.len() {
            if remaining <= left[i] {
                left[i] -= remaining;
                flows[i * cols + j] = remaining;
                column(j + 1, costs, demand, left, flows, best);
                flows[i * cols + j] = 0;
                left[i] += remaining;
            }
            return;
        }
        for q in 0..=remaining.min(left[i]) {
            left[i] -= q;
            flows[i * cols + j] = q;
            split(i + 1, remaining - q, j, costs, demand, left, flows, best);
            flows[i * cols + j] = 0;
            left[i] += q;
        }
    }
    column(0, costs, demand, &mut left, &mut flows, &mut best);
    best
}

/// Retailer flow utility over weeks `week..week+orders.len()`, stepping the
/// stock recurrence directly: sell what the forecast allows, hold the rest.
pub fn simulate_retailer(model: &InventoryModel, week: usize, inventory: f64, orders: &[f64]) -> f64 {
    let mut stock = inventory;
    let mut total = 0.0;
    for (k, &q) in orders.iter().enumerate() {
        let f = model.forecast[week + k];
        let on_hand = stock + q;
        let sold = if on_hand < f { on_hand } else { f };
        stock = on_hand - sold;
        total += model.retailer_margin * sold - model.holding_cost * stock - model.lost_sales_cost * (f - sold);
    }
    total
}

pub fn simulate_supplier(model: &InventoryModel, last_order: f64, orders: &[f64]) -> f64 {
    let mut prev = last_order;
    let mut total = 0.0;
    for &q in orders {
        total += model.supplier_margin * q - model.smoothing * (q - prev) * (q - prev);
        prev = q;
    }
    total
}

/// Order-up-to orders over `n` weeks, with an optional pinned first order.
pub fn order_up_to(model: &InventoryModel, week: usize, inventory: f64, n: usize, first: Option<f64>) -> Vec<f64> {
    let mut stock = inventory;
    let mut orders = Vec::with_capacity(n);
    for k in 0..n {
        let t = week + k;
        let q = match (k, first) {
            (0, Some(q)) => q,
            _ => (model.target_at(t) - stock).max(0.0),
        };
        let on_hand = stock + q;
        stock = on_hand - on_hand.min(model.forecast[t]);
        orders.push(q);
    }
    orders
}

/// Current-week payment: retailer loss from taking `first` this week and
/// returning to order-up-to afterwards.
pub fn cbt_formula(model: &InventoryModel, week: usize, inventory: f64, n: usize, first: f64) -> f64 {
    let jit = order_up_to(model, week, inventory, n, None);
    let pinned = order_up_to(model, week, inventory, n, Some(first));
    simulate_retailer(model, week, inventory, &jit) - simulate_retailer(model, week, inventory, &pinned)
}

/// Exact maximizer of the joint flow utility over a short window.
///
/// Each week either stocks out, ends with surplus, or lands exactly on its
/// forecast, and each order is either zero or free. Within one such pattern
/// the joint utility is a strictly concave quadratic restricted to an affine
/// set, so its maximizer solves a small KKT system; the optimum is the best
/// of these candidates. Needs `smoothing > 0`.
pub fn dynamic_optimum_brute(model: &InventoryModel, week: usize, inventory: f64, last_order: f64, n: usize) -> Vec<f64> {
    assert!(model.smoothing > 0.0 && n <= 4);
    let (m, h, l) = (model.retailer_margin, model.holding_cost, model.lost_sales_cost);
    let forecast = &model.forecast[week..week + n];
    // affine retailer utility and end-of-week stocks under a fixed pattern
    let pattern_eval = |pattern: &[u8], x: &[f64]| -> (f64, Vec<f64>) {
        let mut stock = inventory;
        let mut value = 0.0;
        let mut ends = Vec::with_capacity(n);
        for t in 0..n {
            let on_hand = stock + x[t];
            // 0: stockout, 1: surplus, 2: on the kink (treated as stockout)
            let (sold, end) = if pattern[t] == 1 { (forecast[t], on_hand - forecast[t]) } else { (on_hand, 0.0) };
            value += m * sold - h * end - l * (forecast[t] - sold);
            ends.push(on_hand - forecast[t]);
            stock = end;
        }
        (value, ends)
    };
    // supplier Hessian (negated) and linear part
    let k2 = 2.0 * model.smoothing;
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for t in 0..n {
        hess[(t, t)] += k2;
        if t > 0 {
            hess[(t - 1, t - 1)] += k2;
            hess[(t, t - 1)] -= k2;
            hess[(t - 1, t)] -= k2;
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let pattern: Vec<u8> = (0..n).map(|t| ((code / 3usize.pow(t as u32)) % 3) as u8).collect();
        let zero = vec![0.0; n];
        let (base, ends0) = pattern_eval(&pattern, &zero);
        let mut grad = DVector::<f64>::zeros(n);
        let mut end_rows = vec![vec![0.0; n]; n];
        for e in 0..n {
            let mut unit = zero.clone();
            unit[e] = 1.0;
            let (v, ends) = pattern_eval(&pattern, &unit);
            grad[e] = v - base + model.supplier_margin;
            for t in 0..n {
                end_rows[t][e] = ends[t] - ends0[t];
            }
        }
        grad[0] += k2 * last_order;
        for zero_set in 0..(1usize << n) {
            // equality rows: fixed-zero orders and kink weeks
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for t in 0..n {
                if zero_set >> t & 1 == 1 {
                    let mut a = vec![0.0; n];
                    a[t] = 1.0;
                    rows.push((a, 0.0));
                }
                if pattern[t] == 2 {
                    rows.push((end_rows[t].clone(), -ends0[t]));
                }
            }
            let size = n + rows.len();
            let mut kkt = DMatrix::<f64>::zeros(size, size);
            let mut rhs = DVector::<f64>::zeros(size);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
            rhs.rows_mut(0, n).copy_from(&grad);
            for (r, (a, b)) in rows.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + r, c)] = a[c];
                    kkt[(c, n + r)] = a[c];
                }
                rhs[n + r] = *b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
            if x.iter().any(|v| !v.is_finite() || *v < -1e-9) {
                continue;
            }
            let x: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
            let value = simulate_retailer(model, week, inventory, &x) + simulate_supplier(model, last_order, &x);
            if best.as_ref().map_or(true, |(b, _)| value > *b) {
                best = Some((value, x));
            }
        }
    }
    best.expect("the all-zero plan is always a candidate").1
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

pub fn cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

use cppvcg::mechanism::{
    budget_balance_check, centralized_optimum, standalone_plans, vcg_transfers, BudgetRegime, FeePolicy, StatusQuoSource,
};
use rand::Rng;

/// Mechanism properties on one instance. Returns the first violation.
///
/// `alpha_share` places the additive fee as a fraction of the coordination
/// gain; `misreports` supplier reports perturb every cost and capacity by a
/// factor in [0.5, 1.5].
pub fn mechanism_properties<R: Rng>(
    r: &RetailerSpec,
    s: &SupplierSpec,
    alpha_share: f64,
    misreports: usize,
    rng: &mut R,
) -> Result<(), String> {
    const EPS: f64 = 1e-6;
    let fail = |what: &str| Err::<(), String>(what.to_string());
    let sq = standalone_plans(r, s, &StatusQuoSource::JitDerived).map_err(|e| e.to_string())?;
    let x_star = centralized_optimum(r, s, &FeePolicy::None, &sq.retailer_plan)
        .map_err(|e| e.to_string())?
        .plan;
    // efficiency against the independent joint LP
    let (best, _) = joint_optimum_lp(r, s);
    let ua = |x: &[f64]| retailer_utility_lp(r, x).expect("retailer LP feasible");
    let us = |x: &[f64]| supplier_utility_lp(s, x);
    let joint_star = ua(&x_star) + us(&x_star).ok_or("x* exceeds capacity")?;
    if rel_gap(joint_star, best) > 1e-9 {
        return fail(&format!("x* joint {joint_star} below LP optimum {best}"));
    }
    let joint_sq = ua(&sq.retailer_plan) + us(&sq.supplier_plan).ok_or("x_S exceeds capacity")?;
    let gain = joint_star - joint_sq;
    // (c)
    if gain < -EPS {
        return fail(&format!("negative coordination gain {gain}"));
    }
    let alpha = alpha_share * gain.max(0.0);
    let fee = FeePolicy::Additive { alpha };
    let rep = vcg_transfers(r, s, &sq, &x_star, &fee).map_err(|e| e.to_string())?;
    // (a) sign of the fee-free transfer sum against the joint comparison
    let diag = budget_balance_check(&rep);
    let sum = rep.transfer_retailer + rep.transfer_supplier - alpha;
    if (sum + gain).abs() > EPS * (1.0 + gain.abs()) {
        return fail(&format!("transfer sum {sum} is not minus the gain {gain}"));
    }
    let expected = if gain > EPS { BudgetRegime::Deficit } else { BudgetRegime::Balanced };
    if !diag.consistent || (gain.abs() > 2.0 * EPS && diag.regime != expected) {
        return fail(&format!("regime {:?} with gain {gain}", diag.regime));
    }
    // (b)
    let truthful_net = us(&x_star).unwrap() - rep.transfer_supplier;
    let reservation = us(&sq.supplier_plan).unwrap();
    if truthful_net < reservation - EPS {
        return fail(&format!("participation: {truthful_net} < {reservation}"));
    }
    // (d)
    let boosted = centralized_optimum(r, s, &fee, &sq.retailer_plan).map_err(|e| e.to_string())?.plan;
    if boosted.iter().zip(x_star.iter()).any(|(a, b)| (a - b).abs() > 1e-9) {
        return fail(&format!("additive boost moved the plan: {boosted:?} vs {x_star:?}"));
    }
    // (e)
    for _ in 0..misreports {
        let mut lie = s.clone();
        for row in &mut lie.arc_costs {
            for c in row {
                *c *= rng.gen_range(0.5..=1.5);
            }
        }
        for cap in &mut lie.capacity {
            *cap *= rng.gen_range(0.5..=1.5);
        }
        let sq_lie = standalone_plans(r, &lie, &StatusQuoSource::JitDerived).map_err(|e| e.to_string())?;
        let x_lie = centralized_optimum(r, &lie, &FeePolicy::None, &sq_lie.retailer_plan)
            .map_err(|e| e.to_string())?
            .plan;
        let t_lie = vcg_transfers(r, &lie, &sq_lie, &x_lie, &fee).map_err(|e| e.to_string())?.transfer_supplier;
        // a plan the true network cannot source is worth nothing to the liar
        let Some(true_value) = us(&x_lie) else { continue };
        let lie_net = true_value - t_lie;
        if lie_net > truthful_net + EPS {
            return fail(&format!("misreport gains {}: {lie:?}", lie_net - truthful_net));
        }
    }
    Ok(())
}

use cppvcg::dynamic::{dynamic_consensus_config, simulate_path, CommitmentMode};

/// Rolling-horizon properties along one path with realized demand equal to
/// the forecast.
pub fn dynamic_properties(model: &InventoryModel) -> Result<(), String> {
    const EPS: f64 = 1e-6;
    let config = dynamic_consensus_config();
    let path = simulate_path(model, CommitmentMode::None, None, &config).map_err(|e| e.to_string())?;
    let mut inventory = model.initial_inventory;
    let mut last = model.initial_order;
    for (week, w) in path.weeks.iter().enumerate() {
        if w.record.cbt < -EPS {
            return Err(format!("week {week}: CBT {}", w.record.cbt));
        }
        let joint = |x: &[f64]| simulate_retailer(model, week, inventory, x) + simulate_supplier(model, last, x);
        let jit = order_up_to(model, week, inventory, w.plan.len(), None);
        if joint(&w.plan) < joint(&jit) - EPS {
            return Err(format!("week {week}: coordinated {} below JIT {}", joint(&w.plan), joint(&jit)));
        }
        let formula = cbt_formula(model, week, inventory, w.plan.len(), w.plan[0]);
        if (formula - w.record.cbt).abs() > EPS {
            return Err(format!("week {week}: CBT {} vs formula {formula}", w.record.cbt));
        }
        let on_hand = inventory + w.plan[0];
        inventory = on_hand - on_hand.min(model.forecast[week]);
        last = w.plan[0];
    }
    let committed = simulate_path(model, CommitmentMode::FullHorizon, None, &config).map_err(|e| e.to_string())?;
    for (week, w) in committed.weeks.iter().enumerate().skip(1) {
        if w.record.cbt.abs() > EPS {
            return Err(format!("full-horizon week {week}: CBT {}", w.record.cbt));
        }
    }
    Ok(())
}

/// Compares a short path week by week with the exact enumeration oracle.
pub fn dynamic_matches_oracle(model: &InventoryModel) -> Result<(), String> {
    const EPS: f64 = 1e-6;
    let path = simulate_path(model, CommitmentMode::None, None, &dynamic_consensus_config()).map_err(|e| e.to_string())?;
    let mut inventory = model.initial_inventory;
    let mut last = model.initial_order;
    for (week, w) in path.weeks.iter().enumerate() {
        let n = w.plan.len();
        let exact = dynamic_optimum_brute(model, week, inventory, last, n);
        let value = |x: &[f64]| simulate_retailer(model, week, inventory, x) + simulate_supplier(model, last, x);
        if value(&w.plan) < value(&exact) - EPS {
            return Err(format!("week {week}: joint {} below exact {}", value(&w.plan), value(&exact)));
        }
        let cbt = cbt_formula(model, week, inventory, n, exact[0]);
        if (cbt - w.record.cbt).abs() > EPS {
            return Err(format!("week {week}: CBT {} vs oracle {cbt} (orders {:?} vs {:?})", w.record.cbt, w.plan, exact));
        }
        let on_hand = inventory + exact[0];
        inventory = on_hand - on_hand.min(model.forecast[week]);
        last = exact[0];
    }
    Ok(())
}

use cppvcg::consensus::{run_consensus_traced, BestResponseConfig, ConsensusConfig, IterationRecord, LocalPool};
use cppvcg::protocol::{decode, encode, AgentService, Message, OfferOption, OfferReply, RemotePool, WireVector};
use std::net::TcpListener;
use std::time::Duration;

/// Consensus trajectories in process and over loopback TCP, plus the remote
/// supplier's answer to `offer` (if given) after consensus.
pub fn local_and_wire_runs(
    r: &RetailerSpec,
    s: &SupplierSpec,
    start: &[f64],
    config: &ConsensusConfig,
    reservation: f64,
    offer: Option<Vec<OfferOption>>,
) -> (Vec<IterationRecord>, Vec<IterationRecord>, Option<OfferReply>) {
    let mut local = Vec::new();
    let mut pool = LocalPool::new(vec![Box::new(r), Box::new(s)], config.best_response).unwrap();
    run_consensus_traced(&mut pool, config, Some(start), &mut |t| local.push(t.clone())).unwrap();

    let listeners = [TcpListener::bind("127.0.0.1:0").unwrap(), TcpListener::bind("127.0.0.1:0").unwrap()];
    let addrs: Vec<_> = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
    let mut retailer = AgentService::new(r);
    retailer.best_response = config.best_response;
    let mut supplier = AgentService::new(s).with_reservation(reservation);
    supplier.best_response = config.best_response;
    let mut wire = Vec::new();
    let reply = std::thread::scope(|scope| {
        let (rs, ss) = (&retailer, &supplier);
        let [lr, ls] = &listeners;
        scope.spawn(move || rs.serve(lr).unwrap());
        scope.spawn(move || ss.serve(ls).unwrap());
        let mut remote = RemotePool::connect(&addrs, start.len(), Duration::from_secs(30)).unwrap();
        run_consensus_traced(&mut remote, config, Some(start), &mut |t| wire.push(t.clone())).unwrap();
        let reply = offer.map(|o| remote.offer(1, o).unwrap());
        remote.close().unwrap();
        reply
    });
    (local, wire, reply)
}

/// Identical trajectories, compared on the bits of every float.
pub fn same_bits(a: &[IterationRecord], b: &[IterationRecord]) -> bool {
    let bits = |t: &IterationRecord| {
        let mut v: Vec<u64> = t.z.iter().map(|x| x.to_bits()).collect();
        v.extend([t.primal_residual.to_bits(), t.dual_residual.to_bits(), t.rho.to_bits(), t.iteration as u64]);
        v
    };
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| bits(x) == bits(y))
}

/// Lines for decoder fuzzing: valid messages with random byte edits,
/// truncations and splices, plus raw noise.
pub fn fuzz_lines<R: Rng>(rng: &mut R, count: usize) -> Vec<Vec<u8>> {
    let seeds: Vec<String> = vec![
        encode(&Message::Hello { session: "s".into(), dim: 2, rho: 1.0 }),
        encode(&Message::Query {
            session: "s".into(),
            iteration: 7,
            prices: WireVector::new(vec![0.5, -0.5]),
            consensus: WireVector::new(vec![10.0, 90.0]),
        }),
        encode(&Message::Response { session: "s".into(), iteration: 7, plan: WireVector::new(vec![1e-300, 3.25]) }),
        encode(&Message::Offer {
            session: "s".into(),
            options: vec![OfferOption { plan: WireVector::new(vec![10.0, 90.0]), fee: 80.0 }],
        }),
        encode(&Message::Accept { session: "s".into(), index: 0 }),
        encode(&Message::Error { session: "s".into(), reason: "x".into() }),
    ];
    let alphabet = b"{}[]\":,.-+eE0123456789 \\nulltruefalsekinddimvalues\x00\xff\n";
    (0..count)
        .map(|_| {
            let mut line = seeds[rng.gen_range(0..seeds.len())].clone().into_bytes();
            match rng.gen_range(0..5) {
                0 => (0..rng.gen_range(0..200)).map(|_| rng.gen()).collect(),
                1 => {
                    let cut = rng.gen_range(0..=line.len());
                    line.truncate(cut);
                    line
                }
                2 => {
                    let other = seeds[rng.gen_range(0..seeds.len())].as_bytes();
                    let (a, b) = (rng.gen_range(0..=line.len()), rng.gen_range(0..=other.len()));
                    line.truncate(a);
                    line.extend_from_slice(&other[b..]);
                    line
                }
                _ => {
                    for _ in 0..rng.gen_range(1..6) {
                        let at = rng.gen_range(0..line.len());
                        match rng.gen_range(0..3) {
                            0 => line[at] = alphabet[rng.gen_range(0..alphabet.len())],
                            1 => {
                                line.remove(at);
                            }
                            _ => line.insert(at, alphabet[rng.gen_range(0..alphabet.len())]),
                        }
                        if line.is_empty() {
                            break;
                        }
                    }
                    line
                }
            }
        })
        .collect()
}

/// Feeds every line to the decoder; re-encodes what parses and checks it
/// decodes to the same message. Returns how many lines parsed.
pub fn fuzz_decoder(lines: &[Vec<u8>]) -> Result<usize, String> {
    let mut parsed = 0;
    for line in lines {
        let outcome = std::panic::catch_unwind(|| decode(line));
        match outcome {
            Err(_) => return Err(format!("decoder panicked on {:?}", String::from_utf8_lossy(line))),
            Ok(Ok(msg)) => {
                parsed += 1;
                if decode(encode(&msg).as_bytes()).as_ref() != Ok(&msg) {
                    return Err(format!("re-encoding changed {msg:?}"));
                }
            }
            Ok(Err(e)) => {
                if e.offset > line.len() {
                    return Err(format!("offset {} past line end {}", e.offset, line.len()));
                }
            }
        }
    }
    Ok(parsed)
}

pub fn default_best_response() -> BestResponseConfig {
    BestResponseConfig::default()
}
