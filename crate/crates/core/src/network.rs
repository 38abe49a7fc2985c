//! Primal network simplex for small min-cost flow problems.
//!
//! Pivoting follows Bland's rule on arc indices (lowest eligible entering arc,
//! lowest blocking leaving arc), so the optimum returned for a given arc order is
//! reproducible and the method cannot cycle. Flows are only ever updated by
//! adding or subtracting pivot amounts, which keeps integral data integral.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    /// Upper bound on the flow; `f64::INFINITY` for uncapacitated arcs.
    pub capacity: f64,
}

/// A balanced min-cost flow problem: `supply[v] > 0` is a source, `< 0` a sink.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    supply: Vec<f64>,
    arcs: Vec<FlowArc>,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub flows: Vec<f64>,
    /// Node potentials with `cost + p[from] - p[to] = 0` on every basic arc.
    pub potentials: Vec<f64>,
    pub cost: f64,
    pub dual_objective: f64,
}

impl FlowSolution {
    /// Reduced cost of an arc under the final potentials.
    pub fn reduced_cost(&self, arc: &FlowArc) -> f64 {
        arc.cost + self.potentials[arc.from] - self.potentials[arc.to]
    }

    /// Marginal cost of moving one unit of supply from `u` to `v`
    /// (raising `supply[u]` and lowering `supply[v]`).
    pub fn shift_price(&self, u: usize, v: usize) -> f64 {
        self.potentials[v] - self.potentials[u]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArcState {
    Lower,
    Upper,
    Tree,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        Self {
            supply: vec![0.0; nodes],
            arcs: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.supply.len()
    }

    pub fn set_supply(&mut self, node: usize, amount: f64) {
        self.supply[node] = amount;
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cost: f64, capacity: f64) -> usize {
        debug_assert!(from < self.supply.len() && to < self.supply.len());
        self.arcs.push(FlowArc {
            from,
            to,
            cost,
            capacity,
        });
        self.arcs.len() - 1
    }

    pub fn arcs(&self) -> &[FlowArc] {
        &self.arcs
    }

    pub fn solve(&self) -> Result<FlowSolution> {
        Simplex::new(self).run()
    }
}

struct Simplex<'a> {
    net: &'a FlowNetwork,
    n: usize,
    root: usize,
    // real arcs followed by one artificial arc per node
    from: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<f64>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    state: Vec<ArcState>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
}

const MAX_PIVOTS: usize = 1_000_000;

impl<'a> Simplex<'a> {
    fn new(net: &'a FlowNetwork) -> Self {
        let n = net.supply.len();
        let m = net.arcs.len();
        let root = n;
        let total = m + n;
        let mut from = Vec::with_capacity(total);
        let mut to = Vec::with_capacity(total);
        let mut cap = Vec::with_capacity(total);
        let mut flow = vec![0.0; total];
        let mut state = vec![ArcState::Lower; total];
        for a in &net.arcs {
            from.push(a.from);
            to.push(a.to);
            cap.push(a.capacity);
        }
        for (v, &b) in net.supply.iter().enumerate() {
            if b >= 0.0 {
                from.push(v);
                to.push(root);
                flow[m + v] = b;
            } else {
                from.push(root);
                to.push(v);
                flow[m + v] = -b;
            }
            cap.push(f64::INFINITY);
            state[m + v] = ArcState::Tree;
        }
        Self {
            net,
            n,
            root,
            from,
            to,
            cap,
            cost: vec![0.0; total],
            flow,
            state,
            parent: vec![usize::MAX; n + 1],
            parent_arc: vec![usize::MAX; n + 1],
            depth: vec![0; n + 1],
            pot: vec![0.0; n + 1],
        }
    }

    fn run(mut self) -> Result<FlowSolution> {
        let m = self.net.arcs.len();
        let scale = self
            .net
            .supply
            .iter()
            .map(|b| b.abs())
            .sum::<f64>()
            .max(1.0);

        // Phase 1: drive artificial flow to zero.
        for c in &mut self.cost[..m] {
            *c = 0.0;
        }
        for c in &mut self.cost[m..] {
            *c = 1.0;
        }
        self.pivot_loop(true, 1e-12)?;
        let artificial: f64 = self.flow[m..].iter().sum();
        if artificial > 1e-9 * scale {
            return Err(Error::Infeasible(format!(
                "{artificial} units of supply cannot be routed"
            )));
        }

        // Phase 2: artificial arcs keep their (negligible) flow and never re-enter.
        for (c, a) in self.cost.iter_mut().zip(&self.net.arcs) {
            *c = a.cost;
        }
        for k in m..self.cost.len() {
            self.cost[k] = 0.0;
            self.cap[k] = self.flow[k];
        }
        let cost_scale = self
            .net
            .arcs
            .iter()
            .map(|a| a.cost.abs())
            .fold(1.0, f64::max);
        self.pivot_loop(false, 1e-11 * cost_scale)?;

        let flows = self.flow[..m].to_vec();
        let cost = self
            .net
            .arcs
            .iter()
            .zip(&flows)
            .map(|(a, f)| a.cost * f)
            .sum();
        let potentials = self.pot[..self.n].to_vec();
        // max  -sum_v b_v p_v + sum_{a at upper} u_a * rc_a
        let mut dual_objective: f64 = -self
            .net
            .supply
            .iter()
            .zip(&potentials)
            .map(|(b, p)| b * p)
            .sum::<f64>();
        for a in &self.net.arcs {
            let rc = a.cost + potentials[a.from] - potentials[a.to];
            if rc < 0.0 && a.capacity.is_finite() {
                dual_objective += a.capacity * rc;
            }
        }
        Ok(FlowSolution {
            flows,
            potentials,
            cost,
            dual_objective,
        })
    }

    fn pivot_loop(&mut self, phase_one: bool, tol: f64) -> Result<()> {
        let m = self.net.arcs.len();
        let eligible_end = if phase_one { self.from.len() } else { m };
        for _ in 0..MAX_PIVOTS {
            self.rebuild_tree();
            let entering = (0..eligible_end).find(|&k| {
                let rc = self.cost[k] + self.pot[self.from[k]] - self.pot[self.to[k]];
                match self.state[k] {
                    ArcState::Lower => rc < -tol && self.cap[k] > 0.0,
                    ArcState::Upper => rc > tol,
                    ArcState::Tree => false,
                }
            });
            let Some(entering) = entering else {
                return Ok(());
            };
            self.pivot(entering);
        }
        Err(Error::NonConvergence {
            iterations: MAX_PIVOTS,
            detail: "network simplex pivot limit".into(),
        })
    }

    fn pivot(&mut self, entering: usize) {
        // Orient the cycle along the direction in which the entering arc's flow changes.
        let increasing = self.state[entering] == ArcState::Lower;
        let (tail, head) = if increasing {
            (self.from[entering], self.to[entering])
        } else {
            (self.to[entering], self.from[entering])
        };

        // (arc, agrees with cycle orientation)
        let mut cycle: Vec<(usize, bool)> = vec![(entering, increasing)];
        let mut a = tail;
        let mut b = head;
        let mut tail_side = Vec::new();
        while a != b {
            if self.depth[a] >= self.depth[b] && a != self.root {
                // traversed parent(a) -> a, since the cycle returns to `tail`
                let arc = self.parent_arc[a];
                tail_side.push((arc, self.to[arc] == a));
                a = self.parent[a];
            } else {
                let arc = self.parent_arc[b];
                cycle.push((arc, self.from[arc] == b));
                b = self.parent[b];
            }
        }
        cycle.extend(tail_side.into_iter().rev());

        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for &(arc, forward) in &cycle {
            let residual = if forward {
                self.cap[arc] - self.flow[arc]
            } else {
                self.flow[arc]
            };
            let residual = residual.max(0.0);
            if residual < theta || (residual == theta && arc < leaving) {
                theta = residual;
                leaving = arc;
            }
        }
        debug_assert!(theta.is_finite(), "unbounded cycle");

        if theta > 0.0 {
            for &(arc, forward) in &cycle {
                if forward {
                    self.flow[arc] += theta;
                } else {
                    self.flow[arc] -= theta;
                }
            }
        }
        let leaving_forward = cycle
            .iter()
            .find(|(arc, _)| *arc == leaving)
            .map(|&(_, f)| f)
            .unwrap_or(true);
        if leaving == entering {
            self.state[entering] = if increasing {
                ArcState::Upper
            } else {
                ArcState::Lower
            };
            return;
        }
        self.state[entering] = ArcState::Tree;
        self.state[leaving] = if leaving_forward {
            self.flow[leaving] = self.cap[leaving];
            ArcState::Upper
        } else {
            self.flow[leaving] = 0.0;
            ArcState::Lower
        };
    }

    fn rebuild_tree(&mut self) {
        let nodes = self.n + 1;
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for (k, s) in self.state.iter().enumerate() {
            if *s == ArcState::Tree {
                adjacency[self.from[k]].push(k);
                adjacency[self.to[k]].push(k);
            }
        }
        let mut seen = vec![false; nodes];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        self.pot[self.root] = 0.0;
        self.depth[self.root] = 0;
        while let Some(u) = queue.pop_front() {
            for &k in &adjacency[u] {
                let (v, pot_v) = if self.from[k] == u {
                    (self.to[k], self.pot[u] + self.cost[k])
                } else {
                    (self.from[k], self.pot[u] - self.cost[k])
                };
                if seen[v] {
                    continue;
                }
                seen[v] = true;
                self.parent[v] = u;
                self.parent_arc[v] = k;
                self.depth[v] = self.depth[u] + 1;
                self.pot[v] = pot_v;
                queue.push_back(v);
            }
        }
        debug_assert!(seen.iter().all(|&s| s), "basis is not a spanning tree");
    }
}
