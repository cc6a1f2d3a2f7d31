//! Bipartite optimal transport between buyers and sellers under
//! alpha-powered geodesic costs.
//!
//! Raising whole-trip geodesics to a power `alpha >= 1` penalizes long
//! trips superlinearly, which breaks the ties that make the plain matching
//! degenerate. The plan induces a power-diagram labeling of buyers, and a
//! probe re-solves under reversed agent order to exhibit degeneracy when
//! several optimal supports coexist.

use thiserror::Error;

use crate::equilibrium::{Buyer, Seller};
use crate::graph::{Arc, Graph, Node, NodeId};
use crate::mcf::{solve_mcf, FlowProblem, McfError};
use crate::paths::geodesic_matrix;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("total supply {supply} does not match total demand {demand}")]
    Unbalanced { supply: f64, demand: f64 },
    #[error("cost exponent must be at least 1, got {0}")]
    AlphaBelowOne(f64),
    #[error("sellers must carry observed supplies")]
    SellersNotObserved,
    #[error("no feasible plan: some demand only reaches sellers at infinite cost")]
    Infeasible,
    #[error(transparent)]
    Flow(#[from] McfError),
}

/// Size guards for the cost matrix. Beyond `max_dense_entries` only the
/// `nearest_sellers` cheapest sellers per buyer are kept (the rest are
/// treated as unreachable), trading exactness for memory; the plan is then
/// optimal for the sparsified costs, not necessarily for the full matrix.
#[derive(Debug, Clone, Copy)]
pub struct TransportLimits {
    pub max_dense_entries: usize,
    pub nearest_sellers: usize,
}

impl Default for TransportLimits {
    fn default() -> Self {
        TransportLimits {
            max_dense_entries: 5_000 * 5_000,
            nearest_sellers: 32,
        }
    }
}

/// Buyer-by-seller transport instance with costs `geodesic^alpha`.
/// Rows are stored sparsely; absent entries are infinite.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    rows: Vec<Vec<(u32, f64)>>,
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub alpha: f64,
}

impl TransportProblem {
    /// Builds from an explicit dense matrix (`f64::INFINITY` allowed).
    pub fn from_dense(
        cost: Vec<Vec<f64>>,
        supply: Vec<f64>,
        demand: Vec<f64>,
        alpha: f64,
    ) -> Result<TransportProblem, TransportError> {
        check_balance(&supply, &demand)?;
        let rows = cost
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .enumerate()
                    .filter(|(_, c)| c.is_finite())
                    .map(|(j, c)| (j as u32, c))
                    .collect()
            })
            .collect();
        Ok(TransportProblem {
            rows,
            supply,
            demand,
            alpha,
        })
    }

    pub fn buyer_count(&self) -> usize {
        self.demand.len()
    }

    pub fn seller_count(&self) -> usize {
        self.supply.len()
    }

    /// Cost of serving buyer `i` from seller `j`; infinite when unreachable
    /// or dropped by sparsification.
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|&&(col, _)| col as usize == j)
            .map_or(f64::INFINITY, |&(_, c)| c)
    }
}

fn check_balance(supply: &[f64], demand: &[f64]) -> Result<(), TransportError> {
    let s: f64 = supply.iter().sum();
    let d: f64 = demand.iter().sum();
    let scale = (s.abs() + d.abs()).max(1.0);
    if (s - d).abs() > 1e-9 * scale {
        return Err(TransportError::Unbalanced { supply: s, demand: d });
    }
    Ok(())
}

/// Computes the buyer-by-seller cost matrix `geodesic(buyer, seller)^alpha`
/// with default size limits.
pub fn build_transport(
    g: &Graph,
    buyers: &[Buyer],
    sellers: &[Seller],
    alpha: f64,
) -> Result<TransportProblem, TransportError> {
    build_transport_with(g, buyers, sellers, alpha, TransportLimits::default())
}

pub fn build_transport_with(
    g: &Graph,
    buyers: &[Buyer],
    sellers: &[Seller],
    alpha: f64,
    limits: TransportLimits,
) -> Result<TransportProblem, TransportError> {
    if alpha < 1.0 {
        return Err(TransportError::AlphaBelowOne(alpha));
    }
    let supply: Vec<f64> = sellers
        .iter()
        .map(|s| s.observed_supply.ok_or(TransportError::SellersNotObserved))
        .collect::<Result<_, _>>()?;
    let demand: Vec<f64> = buyers.iter().map(|b| b.mass).collect();
    check_balance(&supply, &demand)?;

    let buyer_nodes: Vec<NodeId> = buyers.iter().map(|b| b.node).collect();
    let seller_nodes: Vec<NodeId> = sellers.iter().map(|s| s.node).collect();
    let dists = geodesic_matrix(g, &buyer_nodes, &seller_nodes);
    let sparsify = buyers.len().saturating_mul(sellers.len()) > limits.max_dense_entries;
    let rows: Vec<Vec<(u32, f64)>> = dists
        .into_iter()
        .map(|row| {
            let mut entries: Vec<(u32, f64)> = row
                .into_iter()
                .enumerate()
                .filter(|(_, d)| d.is_finite())
                .map(|(j, d)| (j as u32, d.powf(alpha)))
                .collect();
            if sparsify && entries.len() > limits.nearest_sellers {
                entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                entries.truncate(limits.nearest_sellers);
                entries.sort_by_key(|e| e.0);
            }
            entries
        })
        .collect();
    Ok(TransportProblem {
        rows,
        supply,
        demand,
        alpha,
    })
}

/// A transport plan: positive weights only, row sums matching demand and
/// column sums matching supply.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// `(buyer, seller, weight)` sorted by buyer then seller.
    pub entries: Vec<(u32, u32, f64)>,
    pub total_cost: f64,
    /// Duals from the underlying flow: feasibility
    /// `buyer_potential - seller_potential <= cost` holds on every finite
    /// entry, with equality on the support.
    pub buyer_potential: Vec<f64>,
    pub seller_potential: Vec<f64>,
}

impl TransportPlan {
    pub fn weight(&self, buyer: usize, seller: usize) -> f64 {
        self.entries
            .iter()
            .find(|&&(b, s, _)| b as usize == buyer && s as usize == seller)
            .map_or(0.0, |&(_, _, w)| w)
    }

    /// Support as a sorted `(buyer, seller)` set.
    pub fn support(&self) -> Vec<(u32, u32)> {
        self.entries.iter().map(|&(b, s, _)| (b, s)).collect()
    }
}

/// A deterministic perturbation of the reduction: agent relabeling flips
/// the order supplies are processed in, arc-list reversal flips the
/// equal-distance parent tie-break (which keys on arc indices). Optimal
/// cost is unaffected; only the choice among tied optima can move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct SolveOrder {
    reverse_agents: bool,
    reverse_arcs: bool,
}

/// Solves the transport problem by reduction to an uncapacitated min-cost
/// flow on the bipartite closure graph. Deterministic.
pub fn solve_transport(tp: &TransportProblem) -> Result<TransportPlan, TransportError> {
    solve_ordered(tp, SolveOrder::default())
}

fn solve_ordered(tp: &TransportProblem, order: SolveOrder) -> Result<TransportPlan, TransportError> {
    let ns = tp.seller_count();
    let nb = tp.buyer_count();
    let seller_slot = |j: usize| if order.reverse_agents { ns - 1 - j } else { j };
    let buyer_slot = |i: usize| if order.reverse_agents { nb - 1 - i } else { i };

    let nodes: Vec<Node> = (0..ns + nb).map(|i| Node::new(i as u32, 0.0, 0.0)).collect();
    let mut arcs = Vec::new();
    let mut arc_pairs = Vec::new();
    for slot_i in 0..nb {
        let i = if order.reverse_agents { nb - 1 - slot_i } else { slot_i };
        for &(j, c) in &tp.rows[i] {
            arcs.push(Arc::new(
                seller_slot(j as usize) as u32,
                (ns + buyer_slot(i)) as u32,
                c,
            ));
            arc_pairs.push((i as u32, j));
        }
    }
    if order.reverse_arcs {
        arcs.reverse();
        arc_pairs.reverse();
    }
    let g = Graph::build(nodes, arcs).expect("bipartite closure is valid");
    let mut excess = vec![0.0; ns + nb];
    for (j, &s) in tp.supply.iter().enumerate() {
        excess[seller_slot(j)] += s;
    }
    for (i, &d) in tp.demand.iter().enumerate() {
        excess[ns + buyer_slot(i)] -= d;
    }
    let problem = FlowProblem::new(&g, excess)?;
    let sol = match solve_mcf(&problem) {
        Ok(sol) => sol,
        Err(McfError::Disconnected(_)) => return Err(TransportError::Infeasible),
        Err(e) => return Err(TransportError::Flow(e)),
    };

    let mut entries: Vec<(u32, u32, f64)> = arc_pairs
        .iter()
        .zip(&sol.flow)
        .filter(|(_, &f)| f > 0.0)
        .map(|(&(i, j), &f)| (i, j, f))
        .collect();
    entries.sort_by_key(|&(i, j, _)| (i, j));
    let buyer_potential = (0..nb)
        .map(|i| sol.potential[ns + buyer_slot(i)])
        .collect();
    let seller_potential = (0..ns).map(|j| sol.potential[seller_slot(j)]).collect();
    Ok(TransportPlan {
        entries,
        total_cost: sol.total_cost,
        buyer_potential,
        seller_potential,
    })
}

/// Per-buyer assignment induced by a plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuyerAssignment {
    /// One seller holds essentially all of the buyer's demand.
    Seller(u32),
    /// The buyer's demand is split across these sellers.
    Split(Vec<u32>),
    /// The buyer has no demand.
    Unserved,
}

/// Power-diagram labeling: which seller serves each buyer, with indifferent
/// buyers marked as split.
#[derive(Debug, Clone)]
pub struct PowerDiagram {
    pub assignments: Vec<BuyerAssignment>,
    pub split_count: usize,
}

/// Labels each buyer with the seller holding at least `1 - tie_tol` of its
/// demand, or marks it split across the sellers holding a significant share
/// (more than `tie_tol` of demand).
pub fn extract_power_diagram(plan: &TransportPlan, demand: &[f64], tie_tol: f64) -> PowerDiagram {
    let mut shares: Vec<Vec<(u32, f64)>> = vec![Vec::new(); demand.len()];
    for &(i, j, w) in &plan.entries {
        shares[i as usize].push((j, w));
    }
    let mut assignments = Vec::with_capacity(demand.len());
    let mut split_count = 0usize;
    for (i, d) in demand.iter().enumerate() {
        if *d <= 0.0 {
            assignments.push(BuyerAssignment::Unserved);
            continue;
        }
        let significant: Vec<(u32, f64)> = shares[i]
            .iter()
            .copied()
            .filter(|&(_, w)| w > tie_tol * d)
            .collect();
        match significant.as_slice() {
            [(j, w)] if *w >= (1.0 - tie_tol) * d => assignments.push(BuyerAssignment::Seller(*j)),
            _ => {
                split_count += 1;
                assignments.push(BuyerAssignment::Split(
                    significant.iter().map(|&(j, _)| j).collect(),
                ));
            }
        }
    }
    PowerDiagram {
        assignments,
        split_count,
    }
}

/// Result of solving under perturbed deterministic orders.
#[derive(Debug, Clone)]
pub struct DegeneracyReport {
    pub degenerate: bool,
    /// Support of the canonical solve.
    pub support_a: Vec<(u32, u32)>,
    /// First differing support, or a copy of `support_a` if none differs.
    pub support_b: Vec<(u32, u32)>,
}

/// Re-solves under reversed agent and arc orders: a support that moves
/// between runs exhibits coexisting optimal power diagrams. A stable
/// support across all orders is strong (not conclusive) evidence of a
/// unique optimum.
pub fn degeneracy_probe(tp: &TransportProblem) -> Result<DegeneracyReport, TransportError> {
    let base = solve_ordered(tp, SolveOrder::default())?;
    let support_a = base.support();
    for order in [
        SolveOrder { reverse_agents: true, reverse_arcs: false },
        SolveOrder { reverse_agents: false, reverse_arcs: true },
        SolveOrder { reverse_agents: true, reverse_arcs: true },
    ] {
        let other = solve_ordered(tp, order)?;
        debug_assert!((other.total_cost - base.total_cost).abs() <= 1e-9 * base.total_cost.abs().max(1.0));
        let support_b = other.support();
        if support_b != support_a {
            return Ok(DegeneracyReport {
                degenerate: true,
                support_a,
                support_b,
            });
        }
    }
    Ok(DegeneracyReport {
        degenerate: false,
        support_b: support_a.clone(),
        support_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn path4_agents(supplies: [f64; 2], demands: [f64; 2]) -> (Graph, Vec<Buyer>, Vec<Seller>) {
        let (g, buyers, sellers) = fixtures::path4();
        let buyers = buyers
            .iter()
            .zip(demands)
            .map(|(&n, d)| Buyer::new(n, d))
            .collect();
        let sellers = sellers
            .iter()
            .zip(supplies)
            .enumerate()
            .map(|(k, (&n, s))| Seller::observed(n, s, format!("s{k}")))
            .collect();
        (g, buyers, sellers)
    }

    #[test]
    fn costs_at_alpha_one_are_geodesics() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 1.0).unwrap();
        assert_eq!(tp.cost(0, 0), 1.0);
        assert_eq!(tp.cost(0, 1), 3.0);
        assert_eq!(tp.cost(1, 0), 2.0);
        assert_eq!(tp.cost(1, 1), 4.0);
    }

    #[test]
    fn costs_at_alpha_two_are_squares() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 2.0).unwrap();
        assert_eq!(tp.cost(0, 0), 1.0);
        assert_eq!(tp.cost(0, 1), 9.0);
        assert_eq!(tp.cost(1, 0), 4.0);
        assert_eq!(tp.cost(1, 1), 16.0);
    }

    #[test]
    fn colocated_pair_has_zero_cost() {
        let (g, buyers, _) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let sellers = vec![
            Seller::observed(buyers[0].node, 1.0, "here"),
            Seller::observed(buyers[1].node, 1.0, "there"),
        ];
        let tp = build_transport(&g, &buyers, &sellers, 2.0).unwrap();
        assert_eq!(tp.cost(0, 0), 0.0);
    }

    #[test]
    fn alpha_below_one_rejected() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        assert!(matches!(
            build_transport(&g, &buyers, &sellers, 0.5),
            Err(TransportError::AlphaBelowOne(_))
        ));
    }

    #[test]
    fn unbalanced_rejected() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 2.0]);
        assert!(matches!(
            build_transport(&g, &buyers, &sellers, 1.0),
            Err(TransportError::Unbalanced { .. })
        ));
    }

    #[test]
    fn alpha_one_total_cost_five() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 1.0).unwrap();
        let plan = solve_transport(&tp).unwrap();
        assert_eq!(plan.total_cost, 5.0);
        let row_sums: f64 = plan.entries.iter().map(|e| e.2).sum();
        assert_eq!(row_sums, 2.0);
    }

    #[test]
    fn alpha_two_unique_crossing_plan() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 2.0).unwrap();
        let plan = solve_transport(&tp).unwrap();
        // 9 + 4 beats 1 + 16
        assert_eq!(plan.total_cost, 13.0);
        assert_eq!(plan.support(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn single_pair_takes_all_mass() {
        let tp = TransportProblem::from_dense(vec![vec![3.0]], vec![2.5], vec![2.5], 1.0).unwrap();
        let plan = solve_transport(&tp).unwrap();
        assert_eq!(plan.entries, vec![(0, 0, 2.5)]);
        assert_eq!(plan.total_cost, 7.5);
    }

    #[test]
    fn infeasible_when_forced_through_infinity() {
        let tp = TransportProblem::from_dense(
            vec![vec![1.0, f64::INFINITY], vec![f64::INFINITY, f64::INFINITY]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            solve_transport(&tp),
            Err(TransportError::Infeasible)
        ));
    }

    #[test]
    fn probe_flags_alpha_one_as_degenerate() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 1.0).unwrap();
        let report = degeneracy_probe(&tp).unwrap();
        assert!(report.degenerate);
        assert_ne!(report.support_a, report.support_b);
        // every order must reach the same optimal cost
        for reverse_agents in [false, true] {
            for reverse_arcs in [false, true] {
                let plan = solve_ordered(&tp, SolveOrder { reverse_agents, reverse_arcs }).unwrap();
                assert_eq!(plan.total_cost, 5.0);
            }
        }
    }

    #[test]
    fn probe_accepts_alpha_two_as_unique() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 2.0).unwrap();
        let report = degeneracy_probe(&tp).unwrap();
        assert!(!report.degenerate);
    }

    #[test]
    fn probe_flags_degenerate_square() {
        let (g, buyers, sellers) = fixtures::degenerate_square();
        let buyers: Vec<Buyer> = buyers.iter().map(|&n| Buyer::new(n, 1.0)).collect();
        let sellers: Vec<Seller> = sellers
            .iter()
            .enumerate()
            .map(|(k, &n)| Seller::observed(n, 1.0, format!("s{k}")))
            .collect();
        let tp = build_transport(&g, &buyers, &sellers, 1.0).unwrap();
        let report = degeneracy_probe(&tp).unwrap();
        assert!(report.degenerate);
    }

    #[test]
    fn diagram_integral_plan_has_no_splits() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 2.0).unwrap();
        let plan = solve_transport(&tp).unwrap();
        let diagram = extract_power_diagram(&plan, &tp.demand, 1e-6);
        assert_eq!(diagram.split_count, 0);
        assert_eq!(
            diagram.assignments,
            vec![BuyerAssignment::Seller(1), BuyerAssignment::Seller(0)]
        );
    }

    #[test]
    fn diagram_reports_even_split() {
        let plan = TransportPlan {
            entries: vec![(0, 0, 0.5), (0, 1, 0.5)],
            total_cost: 1.0,
            buyer_potential: vec![0.0],
            seller_potential: vec![0.0, 0.0],
        };
        let diagram = extract_power_diagram(&plan, &[1.0], 1e-6);
        assert_eq!(diagram.split_count, 1);
        assert_eq!(diagram.assignments[0], BuyerAssignment::Split(vec![0, 1]));
    }

    #[test]
    fn duals_certify_plan() {
        let (g, buyers, sellers) = path4_agents([2.0, 1.0], [1.5, 1.5]);
        let tp = build_transport(&g, &buyers, &sellers, 1.0).unwrap();
        let plan = solve_transport(&tp).unwrap();
        for i in 0..tp.buyer_count() {
            for j in 0..tp.seller_count() {
                let c = tp.cost(i, j);
                if c.is_finite() {
                    let slack = plan.buyer_potential[i] - plan.seller_potential[j] - c;
                    assert!(slack <= 1e-9, "dual infeasible at ({i},{j}): {slack}");
                }
            }
        }
        for &(i, j, _) in &plan.entries {
            let gap = plan.buyer_potential[i as usize]
                - plan.seller_potential[j as usize]
                - tp.cost(i as usize, j as usize);
            assert!(gap.abs() <= 1e-9);
        }
    }

    #[test]
    fn longer_route_penalty_grows_with_alpha() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let mut previous = 0.0;
        for alpha in [1.0, 1.5, 2.0, 3.0] {
            let tp = build_transport(&g, &buyers, &sellers, alpha).unwrap();
            let ratio = tp.cost(0, 1) / tp.cost(0, 0);
            assert!(ratio > previous);
            previous = ratio;
        }
    }

    #[test]
    fn sparsification_keeps_nearest_sellers() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let limits = TransportLimits {
            max_dense_entries: 2,
            nearest_sellers: 1,
        };
        let tp = build_transport_with(&g, &buyers, &sellers, 1.0, limits).unwrap();
        assert_eq!(tp.cost(0, 0), 1.0);
        assert!(tp.cost(0, 1).is_infinite());
    }

    #[test]
    fn alpha_one_matches_network_flow_cost() {
        let (g, buyers, sellers) = path4_agents([1.0, 1.0], [1.0, 1.0]);
        let tp = build_transport(&g, &buyers, &sellers, 1.0).unwrap();
        let plan = solve_transport(&tp).unwrap();
        let mut z = vec![0.0; g.node_count()];
        for b in &buyers {
            z[b.node.index()] -= b.mass;
        }
        for s in &sellers {
            z[s.node.index()] += s.observed_supply.unwrap();
        }
        let p = FlowProblem::new(&g, z).unwrap();
        let network = solve_mcf(&p).unwrap();
        assert_relative_eq!(plan.total_cost, network.total_cost, max_relative = 1e-12);
    }
}
