//! Market construction and equilibrium price extraction.
//!
//! A market couples buyers and sellers to a road graph and appends the
//! fictitious outside-option node: a zero-price supplier connected to each
//! buyer at the cost of that buyer's reservation utility. Forward mode
//! computes delivered prices from quoted seller prices with one
//! multi-source Dijkstra; inverse mode recovers seller prices as the duals
//! of a min-cost flow matching observed supplies.

use thiserror::Error;

use crate::graph::{Arc, Graph, NodeId, Tags};
use crate::mcf::{solve_mcf, FlowProblem, FlowSolution, McfError};
use crate::paths::{dijkstra, Direction, LabelTree, PathError, Seed, SeedSet};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("node {0} does not exist in the graph")]
    UnknownNode(u32),
    #[error("sellers mix priced and observed-supply modes, or do not match the market mode")]
    MixedSellerModes,
    #[error("operation requires {0:?} mode")]
    ModeMismatch(MarketMode),
    #[error("iceberg share must lie in [0, 1), got {0}")]
    TauOutOfRange(f64),
    #[error("node {0} has no buyer to split")]
    NotBuyerNode(u32),
    #[error("split needs at least one group")]
    EmptyGroups,
    #[error(transparent)]
    Flow(#[from] McfError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Demand-side agent. `reservation_utility` is in the same units as arc
/// costs; `f64::INFINITY` means the buyer never takes the outside option.
#[derive(Debug, Clone, PartialEq)]
pub struct Buyer {
    pub node: NodeId,
    pub mass: f64,
    pub reservation_utility: f64,
    pub region: Option<String>,
}

impl Buyer {
    pub fn new(node: NodeId, mass: f64) -> Buyer {
        Buyer {
            node,
            mass,
            reservation_utility: f64::INFINITY,
            region: None,
        }
    }
}

/// Supply-side agent: quotes a price in forward mode, reports an observed
/// supply in inverse mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Seller {
    pub node: NodeId,
    pub price: Option<f64>,
    pub observed_supply: Option<f64>,
    pub label: String,
}

impl Seller {
    pub fn priced(node: NodeId, price: f64, label: impl Into<String>) -> Seller {
        Seller {
            node,
            price: Some(price),
            observed_supply: None,
            label: label.into(),
        }
    }

    pub fn observed(node: NodeId, supply: f64, label: impl Into<String>) -> Seller {
        Seller {
            node,
            price: None,
            observed_supply: Some(supply),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarketMode {
    Forward,
    Inverse,
}

/// A market instance over its own copy of the graph, extended with the
/// outside-option node (always the last `NodeId`).
#[derive(Debug, Clone)]
pub struct Market {
    pub graph: Graph,
    pub buyers: Vec<Buyer>,
    pub sellers: Vec<Seller>,
    pub mode: MarketMode,
    pub outside_node: NodeId,
}

/// Delivered prices per node and quoted/recovered prices per seller,
/// anchored at zero on the outside node.
#[derive(Debug, Clone)]
pub struct PriceVector {
    pub per_node: Vec<f64>,
    pub per_seller: Vec<f64>,
}

/// Appends the outside-option node and validates agents.
///
/// The outside node enters as a zero-price supplier with one arc toward
/// each buyer with a finite reservation utility, costing exactly that
/// utility (the goods-flow reading of the outside option).
pub fn build_market(
    g: &Graph,
    buyers: Vec<Buyer>,
    sellers: Vec<Seller>,
    mode: MarketMode,
) -> Result<Market, EquilibriumError> {
    let n = g.node_count();
    for b in &buyers {
        if b.node.index() >= n {
            return Err(EquilibriumError::UnknownNode(b.node.0));
        }
        debug_assert!(b.mass > 0.0);
    }
    for s in &sellers {
        if s.node.index() >= n {
            return Err(EquilibriumError::UnknownNode(s.node.0));
        }
        let well_formed = match mode {
            MarketMode::Forward => s.price.is_some() && s.observed_supply.is_none(),
            MarketMode::Inverse => s.observed_supply.is_some() && s.price.is_none(),
        };
        if !well_formed {
            return Err(EquilibriumError::MixedSellerModes);
        }
    }

    let outside_node = NodeId(n as u32);
    let mut nodes = g.nodes().to_vec();
    let mut outside = crate::graph::Node::new(outside_node.0, 0.0, 0.0);
    outside.tags.insert("role".into(), "outside-option".into());
    nodes.push(outside);
    let mut arcs = g.arcs().to_vec();
    for b in &buyers {
        if b.reservation_utility.is_finite() {
            arcs.push(Arc {
                tail: outside_node,
                head: b.node,
                cost: b.reservation_utility,
                tags: Tags::new(),
            });
        }
    }
    let graph = Graph::build(nodes, arcs).expect("market graph is valid");
    Ok(Market {
        graph,
        buyers,
        sellers,
        mode,
        outside_node,
    })
}

impl Market {
    /// Excess vector for the inverse flow problem: observed supplies at
    /// seller nodes, buyer masses as demand, and the residual at the
    /// outside node (buyers priced out are served by it).
    pub fn excess_vector(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.graph.node_count()];
        for s in &self.sellers {
            z[s.node.index()] += s.observed_supply.unwrap_or(0.0);
        }
        for b in &self.buyers {
            z[b.node.index()] -= b.mass;
        }
        let residual: f64 = z.iter().sum();
        z[self.outside_node.index()] = -residual;
        z
    }
}

/// Source id reserved for the outside option in forward label trees; real
/// sellers use their index in `market.sellers`.
pub const OUTSIDE_SOURCE: u32 = u32::MAX;

/// Consumer minimization: one Dijkstra seeded with every seller at its
/// price and the outside node at zero. Ties at a buyer favor real sellers
/// over the outside option, then the smaller seller index.
pub fn forward_prices(m: &Market) -> Result<(PriceVector, LabelTree), EquilibriumError> {
    if m.mode != MarketMode::Forward {
        return Err(EquilibriumError::ModeMismatch(MarketMode::Forward));
    }
    let mut seeds: Vec<Seed> = m
        .sellers
        .iter()
        .enumerate()
        .map(|(i, s)| Seed {
            node: s.node,
            label: s.price.expect("validated at build"),
            source_id: i as u32,
        })
        .collect();
    seeds.push(Seed {
        node: m.outside_node,
        label: 0.0,
        source_id: OUTSIDE_SOURCE,
    });
    let tree = dijkstra(&m.graph, &SeedSet::new(seeds)?, Direction::Forward)?;
    let per_seller = m
        .sellers
        .iter()
        .map(|s| s.price.expect("validated at build"))
        .collect();
    let prices = PriceVector {
        per_node: tree.dist.clone(),
        per_seller,
    };
    Ok((prices, tree))
}

/// Inverse equilibrium: solves the min-cost flow for the observed supplies
/// and reads prices off the duals, normalized to zero at the outside node
/// (components not containing it anchor at their smallest node id).
pub fn inverse_prices(m: &Market) -> Result<(PriceVector, FlowSolution), EquilibriumError> {
    if m.mode != MarketMode::Inverse {
        return Err(EquilibriumError::ModeMismatch(MarketMode::Inverse));
    }
    let z = m.excess_vector();
    let problem = FlowProblem::new(&m.graph, z)?;
    let mut sol = solve_mcf(&problem)?;
    // solve_mcf anchored each component at its smallest node id; re-anchor
    // the outside node's component on the outside node itself.
    let (labels, _) = m.graph.weak_components();
    let outside_comp = labels[m.outside_node.index()];
    let shift = sol.potential[m.outside_node.index()];
    for (v, p) in sol.potential.iter_mut().enumerate() {
        if labels[v] == outside_comp {
            *p -= shift;
        }
    }
    let per_seller = m
        .sellers
        .iter()
        .map(|s| sol.potential[s.node.index()])
        .collect();
    let prices = PriceVector {
        per_node: sol.potential.clone(),
        per_seller,
    };
    Ok((prices, sol))
}

/// Additive arc costs equivalent to multiplicative iceberg losses:
/// `c = -log(1 - tau)`. A good losing share `tau` in transit multiplies its
/// price by `1/(1-tau)`, which is additive in log space.
pub fn iceberg_costs(taus: &[f64]) -> Result<Vec<f64>, EquilibriumError> {
    taus.iter()
        .map(|&t| {
            if (0.0..1.0).contains(&t) {
                Ok(-(1.0 - t).ln())
            } else {
                Err(EquilibriumError::TauOutOfRange(t))
            }
        })
        .collect()
}

/// Companion transform for iceberg potentials: multiplicative prices
/// `exp(p)`, equal to 1 at the zero-potential reference node.
pub fn multiplicative_prices(potential: &[f64]) -> Vec<f64> {
    potential.iter().map(|p| p.exp()).collect()
}

/// Replaces the buyers at `node` by one replica location per group, each
/// with the group's mass and reservation utility. Replicas duplicate every
/// road arc incident to the original node, so geodesics through the node
/// are unchanged; only the outside-option arcs differ per group.
pub fn split_node(
    m: &Market,
    node: NodeId,
    groups: &[(f64, f64)],
) -> Result<Market, EquilibriumError> {
    if groups.is_empty() {
        return Err(EquilibriumError::EmptyGroups);
    }
    if node.index() >= m.graph.node_count() || node == m.outside_node {
        return Err(EquilibriumError::UnknownNode(node.0));
    }
    if m.sellers.iter().any(|s| s.node == node) || !m.buyers.iter().any(|b| b.node == node) {
        return Err(EquilibriumError::NotBuyerNode(node.0));
    }
    debug_assert!(groups.iter().all(|&(mass, u)| mass > 0.0 && u >= 0.0));

    let region = m
        .buyers
        .iter()
        .find(|b| b.node == node)
        .and_then(|b| b.region.clone());

    // Rebuild from the pre-market graph: strip the outside node and its arcs.
    let road_nodes: Vec<crate::graph::Node> = m
        .graph
        .nodes()
        .iter()
        .filter(|n| n.id != m.outside_node)
        .cloned()
        .collect();
    let road_arcs: Vec<Arc> = m
        .graph
        .arcs()
        .iter()
        .filter(|a| a.tail != m.outside_node && a.head != m.outside_node)
        .cloned()
        .collect();

    let mut nodes = road_nodes;
    let mut arcs = road_arcs.clone();
    let base = m.graph.node(node);
    let mut replica_ids = Vec::with_capacity(groups.len());
    for _ in groups {
        let id = NodeId(nodes.len() as u32);
        let mut replica = base.clone();
        replica.id = id;
        nodes.push(replica);
        for arc in &road_arcs {
            if arc.tail == node {
                arcs.push(Arc {
                    tail: id,
                    head: arc.head,
                    cost: arc.cost,
                    tags: arc.tags.clone(),
                });
            }
            if arc.head == node {
                arcs.push(Arc {
                    tail: arc.tail,
                    head: id,
                    cost: arc.cost,
                    tags: arc.tags.clone(),
                });
            }
        }
        replica_ids.push(id);
    }

    let mut buyers: Vec<Buyer> = m.buyers.iter().filter(|b| b.node != node).cloned().collect();
    for (&id, &(mass, u)) in replica_ids.iter().zip(groups) {
        buyers.push(Buyer {
            node: id,
            mass,
            reservation_utility: u,
            region: region.clone(),
        });
    }
    let graph = Graph::build(nodes, arcs).expect("split graph is valid");
    build_market(&graph, buyers, m.sellers.clone(), m.mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mcf::verify_slackness;
    use approx::assert_relative_eq;

    fn line3_forward(price: f64, utility: f64) -> Market {
        let g = fixtures::line3();
        let mut buyer = Buyer::new(NodeId(2), 1.0);
        buyer.reservation_utility = utility;
        build_market(
            &g,
            vec![buyer],
            vec![Seller::priced(NodeId(0), price, "a")],
            MarketMode::Forward,
        )
        .unwrap()
    }

    #[test]
    fn build_appends_outside_arcs() {
        let m = line3_forward(10.0, 5.0);
        assert_eq!(m.outside_node, NodeId(3));
        assert_eq!(m.graph.node_count(), 4);
        let outside_arcs = m.graph.out_arcs(m.outside_node);
        assert_eq!(outside_arcs.len(), 1);
        assert_eq!(m.graph.arc(outside_arcs[0] as usize).cost, 5.0);
    }

    #[test]
    fn build_rejects_unknown_node() {
        let g = fixtures::line3();
        let err = build_market(
            &g,
            vec![Buyer::new(NodeId(9), 1.0)],
            vec![],
            MarketMode::Forward,
        )
        .unwrap_err();
        assert!(matches!(err, EquilibriumError::UnknownNode(9)));
    }

    #[test]
    fn build_rejects_mode_mismatch_sellers() {
        let g = fixtures::line3();
        let err = build_market(
            &g,
            vec![],
            vec![Seller::observed(NodeId(0), 1.0, "a")],
            MarketMode::Forward,
        )
        .unwrap_err();
        assert!(matches!(err, EquilibriumError::MixedSellerModes));
    }

    #[test]
    fn excess_residual_goes_to_outside_supply() {
        // demand 10 vs observed supply 8: the outside node supplies 2
        let g = fixtures::line3();
        let mut b0 = Buyer::new(NodeId(1), 4.0);
        b0.reservation_utility = 5.0;
        let mut b1 = Buyer::new(NodeId(2), 6.0);
        b1.reservation_utility = 5.0;
        let m = build_market(
            &g,
            vec![b0, b1],
            vec![Seller::observed(NodeId(0), 8.0, "a")],
            MarketMode::Inverse,
        )
        .unwrap();
        let z = m.excess_vector();
        assert_eq!(z[m.outside_node.index()], 2.0);
        assert_eq!(z.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn forward_buyer_prefers_cheap_seller() {
        let m = line3_forward(10.0, 100.0);
        let (prices, tree) = forward_prices(&m).unwrap();
        assert_eq!(prices.per_node[2], 12.0);
        assert_eq!(tree.origin[2], Some(0));
    }

    #[test]
    fn forward_buyer_exits_when_utility_low() {
        let m = line3_forward(10.0, 5.0);
        let (prices, tree) = forward_prices(&m).unwrap();
        assert_eq!(prices.per_node[2], 5.0);
        assert_eq!(tree.origin[2], Some(OUTSIDE_SOURCE));
    }

    #[test]
    fn forward_tie_prefers_seller_over_outside() {
        let g = fixtures::line3();
        let mut buyer = Buyer::new(NodeId(0), 1.0);
        buyer.reservation_utility = 3.0;
        let m = build_market(
            &g,
            vec![buyer],
            vec![Seller::priced(NodeId(0), 3.0, "a")],
            MarketMode::Forward,
        )
        .unwrap();
        let (prices, tree) = forward_prices(&m).unwrap();
        assert_eq!(prices.per_node[0], 3.0);
        assert_eq!(tree.origin[0], Some(0));
    }

    #[test]
    fn forward_mode_checked() {
        let g = fixtures::line3();
        let m = build_market(
            &g,
            vec![Buyer::new(NodeId(2), 1.0)],
            vec![Seller::observed(NodeId(0), 1.0, "a")],
            MarketMode::Inverse,
        )
        .unwrap();
        assert!(matches!(
            forward_prices(&m),
            Err(EquilibriumError::ModeMismatch(MarketMode::Forward))
        ));
    }

    #[test]
    fn inverse_single_pair_price_gap_is_geodesic() {
        // one seller, one buyer at geodesic 4
        let g = crate::graph::make_bidirectional(
            &Graph::build(
                vec![
                    crate::graph::Node::new(0, 0.0, 0.0),
                    crate::graph::Node::new(1, 0.01, 0.0),
                ],
                vec![Arc::new(0, 1, 4.0)],
            )
            .unwrap(),
        );
        let m = build_market(
            &g,
            vec![Buyer::new(NodeId(1), 1.0)],
            vec![Seller::observed(NodeId(0), 1.0, "a")],
            MarketMode::Inverse,
        )
        .unwrap();
        let (prices, sol) = inverse_prices(&m).unwrap();
        assert_eq!(prices.per_node[1] - prices.per_node[0], 4.0);
        assert_eq!(prices.per_node[m.outside_node.index()], 0.0);
        let problem = FlowProblem::new(&m.graph, m.excess_vector()).unwrap();
        assert!(verify_slackness(&problem, &sol, 1e-9).unwrap().optimal);
    }

    #[test]
    fn inverse_degenerate_market_dual_relation() {
        let (g, buyers, sellers) = fixtures::degenerate_square();
        let m = build_market(
            &g,
            buyers.iter().map(|&b| Buyer::new(b, 1.0)).collect(),
            vec![
                Seller::observed(sellers[0], 1.0, "s3"),
                Seller::observed(sellers[1], 1.0, "s4"),
            ],
            MarketMode::Inverse,
        )
        .unwrap();
        let (prices, _) = inverse_prices(&m).unwrap();
        assert_eq!(prices.per_seller[1] - prices.per_seller[0], 1.0);
    }

    #[test]
    fn inverse_outside_absorbs_priced_out_mass() {
        // supplies 8 against demand 10 with u = 5 everywhere: exactly 2
        // units come from the outside node
        let g = fixtures::line3();
        let mk = |node: u32, mass: f64| {
            let mut b = Buyer::new(NodeId(node), mass);
            b.reservation_utility = 5.0;
            b
        };
        let m = build_market(
            &g,
            vec![mk(1, 4.0), mk(2, 6.0)],
            vec![Seller::observed(NodeId(0), 8.0, "a")],
            MarketMode::Inverse,
        )
        .unwrap();
        let (_, sol) = inverse_prices(&m).unwrap();
        let outside_flow: f64 = m
            .graph
            .out_arcs(m.outside_node)
            .iter()
            .map(|&ai| sol.flow[ai as usize])
            .sum();
        assert_relative_eq!(outside_flow, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn iceberg_cost_values() {
        assert_eq!(iceberg_costs(&[0.0]).unwrap(), vec![0.0]);
        let c = iceberg_costs(&[0.5]).unwrap();
        assert_relative_eq!(c[0], 0.6931471805599453, max_relative = 1e-15);
        assert!(matches!(
            iceberg_costs(&[1.0]),
            Err(EquilibriumError::TauOutOfRange(_))
        ));
    }

    #[test]
    fn split_single_group_keeps_equilibrium_cost() {
        let (g, buyers, sellers) = fixtures::degenerate_square();
        let m = build_market(
            &g,
            buyers.iter().map(|&b| Buyer::new(b, 1.0)).collect(),
            vec![
                Seller::observed(sellers[0], 1.0, "s3"),
                Seller::observed(sellers[1], 1.0, "s4"),
            ],
            MarketMode::Inverse,
        )
        .unwrap();
        let (_, base) = inverse_prices(&m).unwrap();
        let split = split_node(&m, buyers[0], &[(1.0, f64::INFINITY)]).unwrap();
        let (_, after) = inverse_prices(&split).unwrap();
        assert_relative_eq!(base.total_cost, after.total_cost, max_relative = 1e-12);
    }

    #[test]
    fn split_two_groups_diverge_on_outside_option() {
        // delivered price at the buyer node is 10; the u = 9 group exits,
        // the u = 100 group buys (9 plus the 2-hop detour through the
        // cheap replica costs 11, so no outside arbitrage either)
        let g = fixtures::line3();
        let mut buyer = Buyer::new(NodeId(2), 2.0);
        buyer.reservation_utility = 50.0;
        let m = build_market(
            &g,
            vec![buyer],
            vec![Seller::priced(NodeId(0), 8.0, "a")],
            MarketMode::Forward,
        )
        .unwrap();
        let split = split_node(&m, NodeId(2), &[(1.0, 9.0), (1.0, 100.0)]).unwrap();
        let (_, tree) = forward_prices(&split).unwrap();
        let low = split.buyers.iter().find(|b| b.reservation_utility == 9.0).unwrap();
        let high = split.buyers.iter().find(|b| b.reservation_utility == 100.0).unwrap();
        assert_eq!(tree.origin[low.node.index()], Some(OUTSIDE_SOURCE));
        assert_eq!(tree.dist[low.node.index()], 9.0);
        assert_eq!(tree.origin[high.node.index()], Some(0));
        assert_eq!(tree.dist[high.node.index()], 10.0);
    }

    #[test]
    fn split_rejects_seller_node() {
        let m = line3_forward(10.0, 5.0);
        assert!(matches!(
            split_node(&m, NodeId(0), &[(1.0, 1.0)]),
            Err(EquilibriumError::NotBuyerNode(0))
        ));
    }
}
