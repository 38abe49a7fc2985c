//! Seeded random instances for property suites and the `generate` command.

use rand::Rng;

use crate::dynamic::InventoryModel;
use crate::transport::{RetailerSpec, SupplierSpec};

fn cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Bilateral instance with every dimension in `1..=max_dim`, arc costs in
/// [1, 10] (to the cent) and integer demands and capacities in [0, 100].
///
/// Demand is scaled down when it exceeds total capacity, so the supplier can
/// always fill the retailer's preferred plan.
pub fn random_bilateral<R: Rng + ?Sized>(rng: &mut R, max_dim: usize) -> (RetailerSpec, SupplierSpec) {
    let max_dim = max_dim.max(1);
    let i = rng.gen_range(1..=max_dim);
    let j = rng.gen_range(1..=max_dim);
    let k = rng.gen_range(1..=max_dim);
    let mut costs = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| cents(rng.gen_range(1.0..=10.0))).collect())
            .collect()
    };
    let retailer_costs = costs(i, j);
    let supplier_costs = costs(k, i);
    let capacity: Vec<f64> = (0..k).map(|_| rng.gen_range(0..=100) as f64).collect();
    let mut demand: Vec<f64> = (0..j).map(|_| rng.gen_range(0..=100) as f64).collect();
    let (total_cap, total_demand) = (capacity.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if total_demand > total_cap {
        let shrink = total_cap / total_demand;
        demand.iter_mut().for_each(|d| *d = (*d * shrink).floor());
    }
    let retailer = RetailerSpec {
        demand,
        arc_costs: retailer_costs,
        gross_profit: (0..j).map(|_| cents(rng.gen_range(10.0..=30.0))).collect(),
        lost_sales_penalty: cents(rng.gen_range(20.0..=60.0)),
    };
    let supplier = SupplierSpec {
        capacity,
        arc_costs: supplier_costs,
        gross_profit: (0..i).map(|_| cents(rng.gen_range(10.0..=30.0))).collect(),
    };
    (retailer, supplier)
}

/// Inventory model over `weeks` weeks with integer forecasts in [0, 30].
pub fn random_inventory_model<R: Rng + ?Sized>(rng: &mut R, weeks: usize, horizon: usize) -> InventoryModel {
    let holding_cost = cents(rng.gen_range(0.2..=2.0));
    InventoryModel {
        horizon,
        forecast: (0..weeks).map(|_| rng.gen_range(0..=30) as f64).collect(),
        target: None,
        holding_cost,
        lost_sales_cost: cents(rng.gen_range(0.0..=5.0)),
        retailer_margin: cents(rng.gen_range(1.0..=5.0)),
        supplier_margin: cents(rng.gen_range(0.0..=holding_cost)),
        smoothing: cents(rng.gen_range(0.0..=1.0)),
        initial_inventory: rng.gen_range(0..=10) as f64,
        initial_order: rng.gen_range(0..=30) as f64,
    }
}
