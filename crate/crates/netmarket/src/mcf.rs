//! Uncapacitated min-cost flow (transshipment) with dual potentials.
//!
//! Solves `min sum c_e mu_e` subject to per-node conservation
//! `outflow - inflow = z_v` and `mu >= 0`, and returns node potentials
//! certifying optimality: `p_head - p_tail <= c` on every arc, with
//! equality wherever flow is positive. The algorithm is successive
//! shortest paths over the residual network, with Dijkstra on reduced
//! costs and early termination at the nearest deficit node.
//!
//! Direction convention: flow is the movement of goods from supply nodes
//! (`z > 0`) toward demand nodes (`z < 0`), so potentials rise along
//! active arcs like delivered prices.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::graph::{Graph, NodeId};

#[derive(Debug, Error)]
pub enum McfError {
    #[error("excess does not sum to zero (sum = {0})")]
    Unbalanced(f64),
    #[error("node {0} cannot reach any remaining demand")]
    Disconnected(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("excess is not integral at node {0}")]
    NonIntegralExcess(u32),
    #[error("total supply {0} exceeds the enumeration guard ({1})")]
    TooLarge(i64, i64),
}

/// A transshipment instance: a graph and a balanced excess vector
/// (`z_v > 0` supplies goods, `z_v < 0` demands them).
#[derive(Debug, Clone)]
pub struct FlowProblem<'a> {
    pub graph: &'a Graph,
    pub excess: Vec<f64>,
}

impl<'a> FlowProblem<'a> {
    pub fn new(graph: &'a Graph, excess: Vec<f64>) -> Result<FlowProblem<'a>, McfError> {
        if excess.len() != graph.node_count() {
            return Err(McfError::DimensionMismatch(format!(
                "excess has {} entries for {} nodes",
                excess.len(),
                graph.node_count()
            )));
        }
        let total: f64 = excess.iter().sum();
        let scale: f64 = excess.iter().map(|z| z.abs()).sum::<f64>().max(1.0);
        if total.abs() > 1e-9 * scale {
            return Err(McfError::Unbalanced(total));
        }
        Ok(FlowProblem { graph, excess })
    }

    fn tolerance(&self) -> f64 {
        let scale: f64 = self.excess.iter().map(|z| z.abs()).sum::<f64>().max(1.0);
        1e-9 * scale
    }
}

/// Optimal flow and certifying potentials.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// Flow per arc, parallel to `graph.arcs()`.
    pub flow: Vec<f64>,
    /// Dual potential per node, anchored at zero on the smallest node id of
    /// each weakly connected component.
    pub potential: Vec<f64>,
    pub total_cost: f64,
}

/// Complementary-slackness maxima for a (problem, solution) pair.
#[derive(Debug, Clone, Copy)]
pub struct SlacknessReport {
    /// max over arcs of `p_head - p_tail - c`
    pub max_dual_violation: f64,
    /// max over arcs with positive flow of `|p_head - p_tail - c|`
    pub max_support_gap: f64,
    /// max over nodes of `|outflow - inflow - z|`
    pub max_conservation_residual: f64,
    pub optimal: bool,
}

struct SearchState {
    dist: Vec<f64>,
    parent_arc: Vec<u32>,
    parent_back: Vec<bool>,
    settled: Vec<bool>,
    mark: Vec<u32>,
    generation: u32,
    settled_order: Vec<u32>,
    heap: BinaryHeap<Reverse<(DistKey, u32)>>,
}

const NO_ARC: u32 = u32::MAX;

impl SearchState {
    fn new(n: usize) -> Self {
        SearchState {
            dist: vec![f64::INFINITY; n],
            parent_arc: vec![NO_ARC; n],
            parent_back: vec![false; n],
            settled: vec![false; n],
            mark: vec![0; n],
            generation: 0,
            settled_order: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }

    fn begin(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            // marks wrapped: reset explicitly
            self.mark.fill(0);
            self.generation = 1;
        }
        self.settled_order.clear();
        self.heap.clear();
    }

    fn touch(&mut self, v: usize) {
        if self.mark[v] != self.generation {
            self.mark[v] = self.generation;
            self.dist[v] = f64::INFINITY;
            self.parent_arc[v] = NO_ARC;
            self.parent_back[v] = false;
            self.settled[v] = false;
        }
    }
}

/// Solves the min-cost flow problem. Deterministic: supply nodes are
/// processed in ascending id order, each augmentation pushes the maximum
/// feasible amount along the current shortest residual path, and distance
/// ties resolve to the smaller parent arc index.
pub fn solve_mcf(p: &FlowProblem) -> Result<FlowSolution, McfError> {
    let g = p.graph;
    let n = g.node_count();
    let m = g.arc_count();
    let eps = p.tolerance();

    let mut flow = vec![0.0; m];
    let mut potential = vec![0.0; n];
    let mut excess = p.excess.clone();
    let mut sources: BTreeSet<u32> = (0..n as u32)
        .filter(|&v| excess[v as usize] > eps)
        .collect();
    let mut state = SearchState::new(n);

    while let Some(&s) = sources.first() {
        if excess[s as usize] <= eps {
            sources.remove(&s);
            continue;
        }
        match shortest_augmenting_path(g, &flow, &potential, &excess, eps, s, &mut state) {
            Some(t) => {
                augment(g, &mut flow, &mut excess, &state, s, t);
                let d_t = state.dist[t as usize];
                for &v in &state.settled_order {
                    potential[v as usize] += state.dist[v as usize] - d_t;
                }
            }
            None => {
                if excess.iter().any(|&z| z < -eps) {
                    return Err(McfError::Disconnected(s));
                }
                break; // residual imbalance is within tolerance
            }
        }
    }

    // Anchor each weak component at its smallest node id.
    let (labels, count) = g.weak_components();
    let mut shift = vec![f64::NAN; count];
    for v in 0..n {
        let c = labels[v] as usize;
        if shift[c].is_nan() {
            shift[c] = potential[v];
        }
    }
    for v in 0..n {
        potential[v] -= shift[labels[v] as usize];
    }

    let total_cost = flow
        .iter()
        .zip(g.arcs())
        .map(|(f, a)| f * a.cost)
        .sum();
    Ok(FlowSolution {
        flow,
        potential,
        total_cost,
    })
}

/// Dijkstra over the residual network with reduced costs; returns the first
/// settled node whose excess is below `-eps`, or `None` if the heap empties
/// first. Parents for the augmenting path are left in `state`.
fn shortest_augmenting_path(
    g: &Graph,
    flow: &[f64],
    potential: &[f64],
    excess: &[f64],
    eps: f64,
    source: u32,
    state: &mut SearchState,
) -> Option<u32> {
    state.begin();
    state.touch(source as usize);
    state.dist[source as usize] = 0.0;
    state.heap.push(Reverse((DistKey(0.0), source)));

    while let Some(Reverse((DistKey(d), v))) = state.heap.pop() {
        let vi = v as usize;
        if state.settled[vi] || d > state.dist[vi] {
            continue;
        }
        state.settled[vi] = true;
        state.settled_order.push(v);
        if excess[vi] < -eps {
            return Some(v);
        }
        // forward residual arcs (uncapacitated: always present)
        for &ai in g.out_arcs(NodeId(v)) {
            let arc = g.arc(ai as usize);
            let w = arc.head.index();
            let reduced = (arc.cost + potential[vi] - potential[w]).max(0.0);
            relax(state, w, d + reduced, ai, false);
        }
        // backward residual arcs of flow-carrying in-arcs
        for &ai in g.in_arcs(NodeId(v)) {
            if flow[ai as usize] <= 0.0 {
                continue;
            }
            let arc = g.arc(ai as usize);
            let w = arc.tail.index();
            let reduced = (-arc.cost + potential[vi] - potential[w]).max(0.0);
            relax(state, w, d + reduced, ai, true);
        }
    }
    None
}

fn relax(state: &mut SearchState, w: usize, nd: f64, arc: u32, backward: bool) {
    state.touch(w);
    if state.settled[w] {
        return;
    }
    let better = nd < state.dist[w]
        || (nd == state.dist[w] && arc < state.parent_arc[w]);
    if better {
        let push = nd < state.dist[w];
        state.dist[w] = nd;
        state.parent_arc[w] = arc;
        state.parent_back[w] = backward;
        if push {
            state.heap.push(Reverse((DistKey(nd), w as u32)));
        }
    }
}

/// Pushes the maximum feasible amount along the parent path from `t` back
/// to `s`: limited by the source surplus, the sink deficit, and the flow
/// available on any reversed arc.
fn augment(
    g: &Graph,
    flow: &mut [f64],
    excess: &mut [f64],
    state: &SearchState,
    s: u32,
    t: u32,
) {
    let mut delta = excess[s as usize].min(-excess[t as usize]);
    let mut v = t;
    while v != s {
        let ai = state.parent_arc[v as usize] as usize;
        let arc = g.arc(ai);
        if state.parent_back[v as usize] {
            delta = delta.min(flow[ai]);
            v = arc.head.0;
        } else {
            v = arc.tail.0;
        }
    }
    debug_assert!(delta > 0.0);
    let mut v = t;
    while v != s {
        let ai = state.parent_arc[v as usize] as usize;
        let arc = g.arc(ai);
        if state.parent_back[v as usize] {
            flow[ai] -= delta;
            v = arc.head.0;
        } else {
            flow[ai] += delta;
            v = arc.tail.0;
        }
    }
    excess[s as usize] -= delta;
    excess[t as usize] += delta;
}

/// Evaluates the complementary-slackness conditions exactly as stated:
/// dual feasibility on every arc, equality on the support, and flow
/// conservation against the excess vector.
pub fn verify_slackness(
    p: &FlowProblem,
    s: &FlowSolution,
    tol: f64,
) -> Result<SlacknessReport, McfError> {
    let g = p.graph;
    if s.flow.len() != g.arc_count() {
        return Err(McfError::DimensionMismatch(format!(
            "flow has {} entries for {} arcs",
            s.flow.len(),
            g.arc_count()
        )));
    }
    if s.potential.len() != g.node_count() {
        return Err(McfError::DimensionMismatch(format!(
            "potential has {} entries for {} nodes",
            s.potential.len(),
            g.node_count()
        )));
    }
    let mut max_dual_violation = f64::NEG_INFINITY;
    let mut max_support_gap: f64 = 0.0;
    let mut net = vec![0.0; g.node_count()];
    for (i, arc) in g.arcs().iter().enumerate() {
        let slack = s.potential[arc.head.index()] - s.potential[arc.tail.index()] - arc.cost;
        max_dual_violation = max_dual_violation.max(slack);
        if s.flow[i] > 0.0 {
            max_support_gap = max_support_gap.max(slack.abs());
        }
        net[arc.tail.index()] += s.flow[i];
        net[arc.head.index()] -= s.flow[i];
    }
    let mut max_conservation_residual: f64 = 0.0;
    for (v, z) in p.excess.iter().enumerate() {
        max_conservation_residual = max_conservation_residual.max((net[v] - z).abs());
    }
    let optimal = max_dual_violation <= tol
        && max_support_gap <= tol
        && max_conservation_residual <= tol;
    Ok(SlacknessReport {
        max_dual_violation,
        max_support_gap,
        max_conservation_residual,
        optimal,
    })
}

/// Exact optimum by brute force, for small integral instances: every
/// assignment of demand units to supply units is enumerated and costed via
/// geodesic distances. Independent of [`solve_mcf`] by construction.
pub fn oracle_min_cost(p: &FlowProblem) -> Result<f64, McfError> {
    const GUARD: i64 = 8;
    let mut supply_units: Vec<NodeId> = Vec::new();
    let mut demand_units: Vec<NodeId> = Vec::new();
    for (v, &z) in p.excess.iter().enumerate() {
        let r = z.round();
        if (z - r).abs() > 1e-9 {
            return Err(McfError::NonIntegralExcess(v as u32));
        }
        let r = r as i64;
        for _ in 0..r.abs() {
            if r > 0 {
                supply_units.push(NodeId(v as u32));
            } else {
                demand_units.push(NodeId(v as u32));
            }
        }
        if supply_units.len() as i64 > GUARD {
            return Err(McfError::TooLarge(supply_units.len() as i64, GUARD));
        }
    }
    debug_assert_eq!(supply_units.len(), demand_units.len());

    let mut sup_nodes: Vec<NodeId> = supply_units.clone();
    sup_nodes.dedup();
    let mut dem_nodes: Vec<NodeId> = demand_units.clone();
    dem_nodes.dedup();
    let dists = crate::paths::geodesic_matrix(p.graph, &sup_nodes, &dem_nodes);
    let sup_row = |u: NodeId| sup_nodes.iter().position(|&x| x == u).unwrap();
    let dem_col = |u: NodeId| dem_nodes.iter().position(|&x| x == u).unwrap();

    fn recurse(
        demand_idx: usize,
        used: &mut [bool],
        acc: f64,
        best: &mut f64,
        supply_rows: &[usize],
        demand_cols: &[usize],
        dists: &[Vec<f64>],
    ) {
        if demand_idx == demand_cols.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for i in 0..supply_rows.len() {
            if used[i] {
                continue;
            }
            let c = dists[supply_rows[i]][demand_cols[demand_idx]];
            if !c.is_finite() {
                continue;
            }
            used[i] = true;
            recurse(demand_idx + 1, used, acc + c, best, supply_rows, demand_cols, dists);
            used[i] = false;
        }
    }

    let supply_rows: Vec<usize> = supply_units.iter().map(|&u| sup_row(u)).collect();
    let demand_cols: Vec<usize> = demand_units.iter().map(|&u| dem_col(u)).collect();
    let mut best = f64::INFINITY;
    let mut used = vec![false; supply_rows.len()];
    recurse(0, &mut used, 0.0, &mut best, &supply_rows, &demand_cols, &dists);
    Ok(best)
}

/// Total-order wrapper for heap keys; distances are never NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DistKey(f64);

impl Eq for DistKey {}

impl PartialOrd for DistKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DistKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::{Arc, Graph, Node};

    #[test]
    fn line3_inverse_instance() {
        let g = fixtures::line3();
        let p = FlowProblem::new(&g, vec![2.0, -1.0, -1.0]).unwrap();
        let sol = solve_mcf(&p).unwrap();
        assert_eq!(sol.total_cost, 3.0);
        // A->B carries 2, B->C carries 1
        let ab = g.arcs().iter().position(|a| a.tail.0 == 0 && a.head.0 == 1).unwrap();
        let bc = g.arcs().iter().position(|a| a.tail.0 == 1 && a.head.0 == 2).unwrap();
        assert_eq!(sol.flow[ab], 2.0);
        assert_eq!(sol.flow[bc], 1.0);
        assert_eq!(sol.potential, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn zero_excess_means_zero_flow() {
        let g = fixtures::line3();
        let p = FlowProblem::new(&g, vec![0.0; 3]).unwrap();
        let sol = solve_mcf(&p).unwrap();
        assert_eq!(sol.total_cost, 0.0);
        assert!(sol.flow.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn degenerate_market_duals() {
        let (g, buyers, sellers) = fixtures::degenerate_square();
        let mut z = vec![0.0; g.node_count()];
        for &b in &buyers {
            z[b.index()] = -1.0;
        }
        for &s in &sellers {
            z[s.index()] = 1.0;
        }
        let p = FlowProblem::new(&g, z).unwrap();
        let sol = solve_mcf(&p).unwrap();
        assert_eq!(sol.total_cost, 3.0);
        // both integral optima cost 3 and force this dual relation
        let gap = sol.potential[sellers[1].index()] - sol.potential[sellers[0].index()];
        assert_eq!(gap, 1.0);
        let report = verify_slackness(&p, &sol, 1e-9).unwrap();
        assert!(report.optimal);
    }

    #[test]
    fn slackness_detects_perturbation() {
        let g = fixtures::line3();
        let p = FlowProblem::new(&g, vec![2.0, -1.0, -1.0]).unwrap();
        let mut sol = solve_mcf(&p).unwrap();
        sol.potential[2] += 1.0;
        let report = verify_slackness(&p, &sol, 1e-9).unwrap();
        assert_eq!(report.max_support_gap, 1.0);
        assert!(!report.optimal);
    }

    #[test]
    fn slackness_zero_problem_any_feasible_potential() {
        let g = fixtures::line3();
        let p = FlowProblem::new(&g, vec![0.0; 3]).unwrap();
        let sol = FlowSolution {
            flow: vec![0.0; g.arc_count()],
            potential: vec![0.5, 0.0, 0.5],
            total_cost: 0.0,
        };
        let report = verify_slackness(&p, &sol, 1e-9).unwrap();
        assert!(report.optimal);
    }

    #[test]
    fn slackness_dimension_mismatch() {
        let g = fixtures::line3();
        let p = FlowProblem::new(&g, vec![0.0; 3]).unwrap();
        let sol = FlowSolution {
            flow: vec![0.0; 1],
            potential: vec![0.0; 3],
            total_cost: 0.0,
        };
        assert!(matches!(
            verify_slackness(&p, &sol, 1e-9),
            Err(McfError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn unbalanced_rejected() {
        let g = fixtures::line3();
        assert!(matches!(
            FlowProblem::new(&g, vec![1.0, 0.0, 0.0]),
            Err(McfError::Unbalanced(_))
        ));
    }

    #[test]
    fn disconnected_reported() {
        let g = Graph::build(
            (0..2).map(|i| Node::new(i, 0.0, 0.0)).collect(),
            vec![],
        )
        .unwrap();
        let p = FlowProblem::new(&g, vec![1.0, -1.0]).unwrap();
        assert!(matches!(solve_mcf(&p), Err(McfError::Disconnected(0))));
    }

    #[test]
    fn oracle_degenerate_market() {
        let (g, buyers, sellers) = fixtures::degenerate_square();
        let mut z = vec![0.0; g.node_count()];
        for &b in &buyers {
            z[b.index()] = -1.0;
        }
        for &s in &sellers {
            z[s.index()] = 1.0;
        }
        let p = FlowProblem::new(&g, z).unwrap();
        assert_eq!(oracle_min_cost(&p).unwrap(), 3.0);
    }

    #[test]
    fn oracle_single_pair() {
        // single buyer and seller at geodesic distance 7
        let g = Graph::build(
            (0..2).map(|i| Node::new(i, 0.0, 0.0)).collect(),
            vec![Arc::new(0, 1, 7.0)],
        )
        .unwrap();
        let p = FlowProblem::new(&g, vec![1.0, -1.0]).unwrap();
        assert_eq!(oracle_min_cost(&p).unwrap(), 7.0);
        assert_eq!(solve_mcf(&p).unwrap().total_cost, 7.0);
    }

    #[test]
    fn oracle_path4_alpha_one() {
        let (g, buyers, sellers) = fixtures::path4();
        let mut z = vec![0.0; g.node_count()];
        for &b in &buyers {
            z[b.index()] = -1.0;
        }
        for &s in &sellers {
            z[s.index()] = 1.0;
        }
        let p = FlowProblem::new(&g, z).unwrap();
        assert_eq!(oracle_min_cost(&p).unwrap(), 5.0);
    }

    #[test]
    fn oracle_guard() {
        let g = fixtures::line3();
        let p = FlowProblem::new(&g, vec![9.0, -9.0, 0.0]).unwrap();
        assert!(matches!(oracle_min_cost(&p), Err(McfError::TooLarge(_, _))));
    }

    #[test]
    fn oracle_rejects_fractional() {
        let g = fixtures::line3();
        let p = FlowProblem::new(&g, vec![0.5, -0.5, 0.0]).unwrap();
        assert!(matches!(
            oracle_min_cost(&p),
            Err(McfError::NonIntegralExcess(0))
        ));
    }

    #[test]
    fn integral_input_gives_integral_flow() {
        let (g, buyers, sellers) = fixtures::degenerate_square();
        let mut z = vec![0.0; g.node_count()];
        for &b in &buyers {
            z[b.index()] = -1.0;
        }
        for &s in &sellers {
            z[s.index()] = 1.0;
        }
        let p = FlowProblem::new(&g, z).unwrap();
        let sol = solve_mcf(&p).unwrap();
        for f in sol.flow {
            assert_eq!(f, f.round());
        }
    }

    #[test]
    fn cost_scaling_scales_cost_and_keeps_support() {
        let (g, buyers, sellers) = fixtures::path4();
        let z = |g: &Graph| {
            let mut z = vec![0.0; g.node_count()];
            for &b in &buyers {
                z[b.index()] = -1.0;
            }
            for &s in &sellers {
                z[s.index()] = 1.0;
            }
            z
        };
        let p = FlowProblem::new(&g, z(&g)).unwrap();
        let base = solve_mcf(&p).unwrap();
        for k in [0.5, 4.0] {
            let scaled_arcs: Vec<Arc> = g
                .arcs()
                .iter()
                .map(|a| Arc {
                    cost: a.cost * k,
                    ..a.clone()
                })
                .collect();
            let gs = Graph::build(g.nodes().to_vec(), scaled_arcs).unwrap();
            let ps = FlowProblem::new(&gs, z(&gs)).unwrap();
            let sol = solve_mcf(&ps).unwrap();
            assert_eq!(sol.total_cost, base.total_cost * k);
            let support: Vec<bool> = sol.flow.iter().map(|&f| f > 0.0).collect();
            let base_support: Vec<bool> = base.flow.iter().map(|&f| f > 0.0).collect();
            assert_eq!(support, base_support);
        }
    }
}
