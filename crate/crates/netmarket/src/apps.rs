//! End-to-end pipelines: demand aggregation for priced sellers (forward)
//! and quality ranking from observed demand (inverse, balanced per region).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::equilibrium::{
    Buyer, EquilibriumError, Market, MarketMode, Seller, forward_prices, OUTSIDE_SOURCE,
};
use crate::graph::NodeId;
use crate::mcf::{solve_mcf, FlowProblem};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("operation requires a {0:?}-mode market")]
    Mode(MarketMode),
    #[error("area '{0}' has population but no nodes")]
    EmptyArea(String),
    #[error("region '{0}' is missing supply or demand")]
    EmptyRegionSide(String),
    #[error("buyer at node {0} has no region")]
    MissingRegion(u32),
    #[error("expected {expected} seller regions, got {got}")]
    SellerRegionCount { expected: usize, got: usize },
    #[error("sellers must carry observed supplies")]
    SellersNotObserved,
    #[error("region '{0}' is not balanced; apply balance_regions first")]
    Unbalanced(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Who a buyer ended up purchasing from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Seller(usize),
    Outside,
}

#[derive(Debug, Clone)]
pub struct BuyerChoice {
    pub buyer: usize,
    pub choice: Choice,
    pub delivered_price: f64,
}

/// Demand aggregated per seller. Mass conservation holds by construction:
/// seller demands plus the outside mass equal total buyer mass.
#[derive(Debug, Clone)]
pub struct DemandReport {
    pub seller_demand: Vec<f64>,
    pub choices: Vec<BuyerChoice>,
    pub outside_mass: f64,
}

/// Solves the consumer choice problem and sums buyer masses per chosen
/// seller. Buyers that no seller can reach fall into the outside bucket.
pub fn aggregate_demand(m: &Market) -> Result<DemandReport, AppError> {
    if m.mode != MarketMode::Forward {
        return Err(AppError::Mode(MarketMode::Forward));
    }
    let (prices, tree) = forward_prices(m)?;
    let mut seller_demand = vec![0.0; m.sellers.len()];
    let mut outside_mass = 0.0;
    let mut choices = Vec::with_capacity(m.buyers.len());
    for (bi, b) in m.buyers.iter().enumerate() {
        let v = b.node.index();
        let choice = match tree.origin[v] {
            Some(OUTSIDE_SOURCE) | None => {
                outside_mass += b.mass;
                Choice::Outside
            }
            Some(si) => {
                seller_demand[si as usize] += b.mass;
                Choice::Seller(si as usize)
            }
        };
        choices.push(BuyerChoice {
            buyer: bi,
            choice,
            delivered_price: prices.per_node[v],
        });
    }
    Ok(DemandReport {
        seller_demand,
        choices,
        outside_mass,
    })
}

/// Spreads per-area population counts uniformly over the nodes of each
/// area: node density stands in for population density. Returned buyers
/// have infinite reservation utility and no region label.
pub fn spread_population(
    area_counts: &[(String, f64)],
    node_areas: &[(NodeId, String)],
) -> Result<Vec<Buyer>, AppError> {
    let mut nodes_by_area: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
    for (node, area) in node_areas {
        nodes_by_area.entry(area.as_str()).or_default().push(*node);
    }
    for nodes in nodes_by_area.values_mut() {
        nodes.sort();
    }
    let mut buyers = Vec::new();
    for (area, count) in area_counts {
        if *count <= 0.0 {
            continue;
        }
        let nodes = nodes_by_area
            .get(area.as_str())
            .filter(|n| !n.is_empty())
            .ok_or_else(|| AppError::EmptyArea(area.clone()))?;
        let mass = count / nodes.len() as f64;
        for &node in nodes {
            buyers.push(Buyer::new(node, mass));
        }
    }
    Ok(buyers)
}

#[derive(Debug, Clone)]
pub struct RegionScale {
    pub region: String,
    pub scale: f64,
    pub demand_before: f64,
    pub supply: f64,
}

/// Per-region mass scaling applied by [`balance_regions`].
#[derive(Debug, Clone)]
pub struct RegionBalance {
    pub scales: Vec<RegionScale>,
}

/// Scales buyer masses so each region's demand equals its observed supply,
/// the convention that removes outside-option users from the data.
pub fn balance_regions(
    buyers: &[Buyer],
    sellers: &[Seller],
    seller_regions: &[String],
) -> Result<(Vec<Buyer>, RegionBalance), AppError> {
    if seller_regions.len() != sellers.len() {
        return Err(AppError::SellerRegionCount {
            expected: sellers.len(),
            got: seller_regions.len(),
        });
    }
    let mut demand: BTreeMap<&str, f64> = BTreeMap::new();
    for b in buyers {
        let r = b
            .region
            .as_deref()
            .ok_or(AppError::MissingRegion(b.node.0))?;
        *demand.entry(r).or_default() += b.mass;
    }
    let mut supply: BTreeMap<&str, f64> = BTreeMap::new();
    for (s, r) in sellers.iter().zip(seller_regions) {
        let v = s.observed_supply.ok_or(AppError::SellersNotObserved)?;
        *supply.entry(r.as_str()).or_default() += v;
    }

    let mut regions: Vec<&str> = demand.keys().chain(supply.keys()).copied().collect();
    regions.sort_unstable();
    regions.dedup();
    let mut scales = Vec::new();
    let mut scale_of: BTreeMap<&str, f64> = BTreeMap::new();
    for r in regions {
        let d = demand.get(r).copied().unwrap_or(0.0);
        let s = supply.get(r).copied().unwrap_or(0.0);
        if d <= 0.0 || s <= 0.0 {
            return Err(AppError::EmptyRegionSide(r.to_string()));
        }
        let scale = s / d;
        scale_of.insert(r, scale);
        scales.push(RegionScale {
            region: r.to_string(),
            scale,
            demand_before: d,
            supply: s,
        });
    }
    let balanced = buyers
        .iter()
        .map(|b| {
            let r = b.region.as_deref().expect("checked above");
            let mut b = b.clone();
            b.mass *= scale_of[r];
            b
        })
        .collect();
    Ok((balanced, RegionBalance { scales }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub label: String,
    pub region: String,
    /// Quality index: the negated equilibrium price.
    pub quality: f64,
    /// Dense rank within the region, 1 = best; exact quality ties share a
    /// rank.
    pub rank: u32,
}

/// Per-region quality ranking. Ranks are comparable within a region only.
#[derive(Debug, Clone)]
pub struct QualityRanking {
    pub entries: Vec<RankEntry>,
}

/// Solves each region's inverse problem independently on the shared graph
/// (arcs crossing regions stay usable for travel; only supply and demand
/// are regional) and ranks sellers by descending quality `q = -p`.
pub fn rank_quality(m: &Market, seller_regions: &[String]) -> Result<QualityRanking, AppError> {
    if m.mode != MarketMode::Inverse {
        return Err(AppError::Mode(MarketMode::Inverse));
    }
    if seller_regions.len() != m.sellers.len() {
        return Err(AppError::SellerRegionCount {
            expected: m.sellers.len(),
            got: seller_regions.len(),
        });
    }

    let mut regions: Vec<&str> = seller_regions.iter().map(String::as_str).collect();
    regions.sort_unstable();
    regions.dedup();

    let (labels, _) = m.graph.weak_components();
    let outside_comp = labels[m.outside_node.index()];

    let mut entries = Vec::new();
    for region in regions {
        let mut z = vec![0.0; m.graph.node_count()];
        let mut demand = 0.0;
        for b in &m.buyers {
            let r = b
                .region
                .as_deref()
                .ok_or(AppError::MissingRegion(b.node.0))?;
            if r == region {
                z[b.node.index()] -= b.mass;
                demand += b.mass;
            }
        }
        let mut supply = 0.0;
        let sellers_here: Vec<usize> = m
            .sellers
            .iter()
            .enumerate()
            .filter(|(i, _)| seller_regions[*i] == region)
            .map(|(i, _)| i)
            .collect();
        for &i in &sellers_here {
            let s = m.sellers[i]
                .observed_supply
                .ok_or(AppError::SellersNotObserved)?;
            z[m.sellers[i].node.index()] += s;
            supply += s;
        }
        let scale = (demand + supply).max(1.0);
        if (demand - supply).abs() > 1e-9 * scale {
            return Err(AppError::Unbalanced(region.to_string()));
        }
        // absorb rounding dust so the flow problem balances exactly
        z[m.outside_node.index()] = -z.iter().sum::<f64>();

        let problem = FlowProblem::new(&m.graph, z).map_err(EquilibriumError::Flow)?;
        let mut sol = solve_mcf(&problem).map_err(EquilibriumError::Flow)?;
        let shift = sol.potential[m.outside_node.index()];
        for (v, p) in sol.potential.iter_mut().enumerate() {
            if labels[v] == outside_comp {
                *p -= shift;
            }
        }

        let mut ranked: Vec<(usize, f64)> = sellers_here
            .iter()
            .map(|&i| (i, -sol.potential[m.sellers[i].node.index()]))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| m.sellers[a.0].label.cmp(&m.sellers[b.0].label))
        });
        let mut rank = 0u32;
        let mut last_q = f64::INFINITY;
        for (i, q) in ranked {
            if q != last_q {
                rank += 1;
                last_q = q;
            }
            entries.push(RankEntry {
                label: m.sellers[i].label.clone(),
                region: region.to_string(),
                quality: q,
                rank,
            });
        }
    }
    Ok(QualityRanking { entries })
}
