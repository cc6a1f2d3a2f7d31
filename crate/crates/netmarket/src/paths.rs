//! Multi-source Dijkstra with per-source initial labels.
//!
//! Seeding every seller with its price computes the consumer minimization
//! `min_w [p_w + sum of arc costs]` for all nodes in one label-setting pass.
//! Distance ties resolve to the smaller source id, implemented by running
//! the heap on lexicographic `(distance, source_id)` keys.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Graph, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("seed label for node {0} is not finite")]
    NonFiniteLabel(u32),
    #[error("arc {0} has negative cost")]
    NegativeCost(usize),
}

/// A search origin: a node, its initial label (a seller price, usually),
/// and an id reported back in [`LabelTree::origin`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub node: NodeId,
    pub label: f64,
    pub source_id: u32,
}

/// Validated, non-empty collection of seeds.
#[derive(Debug, Clone)]
pub struct SeedSet(Vec<Seed>);

impl SeedSet {
    pub fn new(seeds: Vec<Seed>) -> Result<SeedSet, PathError> {
        if seeds.is_empty() {
            return Err(PathError::EmptySeeds);
        }
        for s in &seeds {
            if !s.label.is_finite() {
                return Err(PathError::NonFiniteLabel(s.node.0));
            }
        }
        Ok(SeedSet(seeds))
    }

    pub fn single(node: NodeId) -> SeedSet {
        SeedSet(vec![Seed {
            node,
            label: 0.0,
            source_id: 0,
        }])
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Shortest-path labels from a seed set.
///
/// `parent[v]` is the arc index of the final relaxation into `v` (`None` at
/// seeds and unreached nodes); following parents from any labeled node
/// reaches a seed, accumulating `dist[v] - label(seed)`.
#[derive(Debug, Clone)]
pub struct LabelTree {
    pub dist: Vec<f64>,
    pub parent: Vec<Option<u32>>,
    pub origin: Vec<Option<u32>>,
    pub direction: Direction,
}

impl LabelTree {
    /// Arc indices of the path between the achieving seed and `v`, in
    /// travel order (seed to `v` for forward trees, `v` to seed for reverse
    /// ones). Empty when `v` is a seed; `None` when `v` was not reached.
    pub fn path_to(&self, g: &Graph, v: NodeId) -> Option<Vec<u32>> {
        if !self.dist[v.index()].is_finite() {
            return None;
        }
        let mut arcs = Vec::new();
        let mut cur = v;
        while let Some(ai) = self.parent[cur.index()] {
            arcs.push(ai);
            let arc = g.arc(ai as usize);
            cur = match self.direction {
                Direction::Forward => arc.tail,
                Direction::Reverse => arc.head,
            };
        }
        if self.direction == Direction::Forward {
            arcs.reverse();
        }
        Some(arcs)
    }
}

/// Label-setting search. `dist[v]` is the minimum over seeds of
/// `label + geodesic(seed, v)` (geodesics taken in `direction`); `origin[v]`
/// is the achieving source id, ties to the smaller id.
pub fn dijkstra(g: &Graph, seeds: &SeedSet, direction: Direction) -> Result<LabelTree, PathError> {
    let n = g.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut origin: Vec<Option<u32>> = vec![None; n];
    let mut parent: Vec<Option<u32>> = vec![None; n];
    let mut settled = vec![false; n];

    // Reverse<(dist, origin, node)> pops the lexicographic minimum.
    let mut heap: BinaryHeap<Reverse<(HeapF64, u32, u32)>> = BinaryHeap::new();
    for seed in seeds.seeds() {
        let i = seed.node.index();
        let better = seed.label < dist[i]
            || (seed.label == dist[i] && origin[i].map_or(true, |o| seed.source_id < o));
        if better {
            dist[i] = seed.label;
            origin[i] = Some(seed.source_id);
            parent[i] = None;
            heap.push(Reverse((HeapF64(seed.label), seed.source_id, seed.node.0)));
        }
    }

    while let Some(Reverse((HeapF64(d), src, v))) = heap.pop() {
        let vi = v as usize;
        if settled[vi] || d > dist[vi] || (d == dist[vi] && origin[vi] != Some(src)) {
            continue;
        }
        settled[vi] = true;
        let arcs = match direction {
            Direction::Forward => g.out_arcs(NodeId(v)),
            Direction::Reverse => g.in_arcs(NodeId(v)),
        };
        for &ai in arcs {
            let arc = g.arc(ai as usize);
            if arc.cost < 0.0 {
                return Err(PathError::NegativeCost(ai as usize));
            }
            let w = match direction {
                Direction::Forward => arc.head,
                Direction::Reverse => arc.tail,
            };
            let wi = w.index();
            if settled[wi] {
                continue;
            }
            let nd = d + arc.cost;
            let better = nd < dist[wi]
                || (nd == dist[wi] && origin[wi].map_or(true, |o| src < o));
            if better {
                dist[wi] = nd;
                origin[wi] = Some(src);
                parent[wi] = Some(ai);
                heap.push(Reverse((HeapF64(nd), src, w.0)));
            }
        }
    }

    Ok(LabelTree {
        dist,
        parent,
        origin,
        direction,
    })
}

/// Geodesic distances `rows[i] -> cols[j]`; unreachable entries are
/// infinite. Rows run as independent single-source searches, in parallel.
pub fn geodesic_matrix(g: &Graph, rows: &[NodeId], cols: &[NodeId]) -> Vec<Vec<f64>> {
    rows.par_iter()
        .map(|&r| {
            let tree = dijkstra(g, &SeedSet::single(r), Direction::Forward)
                .expect("graph costs validated at build");
            cols.iter().map(|&c| tree.dist[c.index()]).collect()
        })
        .collect()
}

/// Total-order wrapper for finite, non-NaN distances.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapF64(f64);

impl Eq for HeapF64 {}

impl PartialOrd for HeapF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
