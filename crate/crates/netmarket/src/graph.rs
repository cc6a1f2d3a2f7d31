//! Directed-graph representation of a geographic market.
//!
//! Nodes are located points (lon/lat plus free-form tags), arcs carry a
//! nonnegative generalized travel cost. The construction-time transforms
//! used when ingesting road data live here too: largest weakly connected
//! component, chain simplification and symmetrization.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

/// String tags attached to nodes and arcs (road class, admin area, ...).
///
/// A `BTreeMap` keeps iteration order deterministic, which the CLI relies
/// on for byte-identical output.
pub type Tags = BTreeMap<String, String>;

/// Dense node index, contiguous in `[0, node_count)` for the lifetime of a
/// [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// A located vertex of the market graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub lon: f64,
    pub lat: f64,
    pub tags: Tags,
}

impl Node {
    pub fn new(id: u32, lon: f64, lat: f64) -> Self {
        Node {
            id: NodeId(id),
            lon,
            lat,
            tags: Tags::new(),
        }
    }
}

/// A directed arc with a nonnegative travel cost (unit chosen by the caller).
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub tail: NodeId,
    pub head: NodeId,
    pub cost: f64,
    pub tags: Tags,
}

impl Arc {
    pub fn new(tail: u32, head: u32, cost: f64) -> Self {
        Arc {
            tail: NodeId(tail),
            head: NodeId(head),
            cost,
            tags: Tags::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("arc {0} has negative cost")]
    NegativeCost(usize),
    #[error("arc {0} references a node that does not exist")]
    DanglingEndpoint(usize),
}

/// Immutable directed graph with CSR-style adjacency in both directions.
///
/// Safe for concurrent reads once built; all construction helpers return a
/// fresh graph instead of mutating.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    out_offsets: Vec<u32>,
    out_arcs: Vec<u32>,
    in_offsets: Vec<u32>,
    in_arcs: Vec<u32>,
}

impl Graph {
    /// Builds a graph from parts, validating arc costs and endpoints.
    ///
    /// Arc order is preserved. Self-loops are dropped: with nonnegative
    /// costs they can never lie on a useful path.
    pub fn build(nodes: Vec<Node>, arcs: Vec<Arc>) -> Result<Graph, GraphError> {
        let n = nodes.len();
        for (i, arc) in arcs.iter().enumerate() {
            if !(arc.cost >= 0.0) {
                return Err(GraphError::NegativeCost(i));
            }
            if arc.tail.index() >= n || arc.head.index() >= n {
                return Err(GraphError::DanglingEndpoint(i));
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            debug_assert_eq!(node.id.index(), i, "node ids must be dense and in order");
            debug_assert!(node.lat >= -90.0 && node.lat <= 90.0);
            debug_assert!(node.lon >= -180.0 && node.lon <= 180.0);
        }
        let arcs: Vec<Arc> = arcs.into_iter().filter(|a| a.tail != a.head).collect();
        let mut g = Graph {
            nodes,
            arcs,
            out_offsets: Vec::new(),
            out_arcs: Vec::new(),
            in_offsets: Vec::new(),
            in_arcs: Vec::new(),
        };
        g.rebuild_adjacency();
        Ok(g)
    }

    fn rebuild_adjacency(&mut self) {
        let n = self.nodes.len();
        let m = self.arcs.len();
        let mut out_deg = vec![0u32; n];
        let mut in_deg = vec![0u32; n];
        for a in &self.arcs {
            out_deg[a.tail.index()] += 1;
            in_deg[a.head.index()] += 1;
        }
        let mut out_offsets = vec![0u32; n + 1];
        let mut in_offsets = vec![0u32; n + 1];
        for i in 0..n {
            out_offsets[i + 1] = out_offsets[i] + out_deg[i];
            in_offsets[i + 1] = in_offsets[i] + in_deg[i];
        }
        let mut out_arcs = vec![0u32; m];
        let mut in_arcs = vec![0u32; m];
        let mut out_pos = out_offsets.clone();
        let mut in_pos = in_offsets.clone();
        for (idx, a) in self.arcs.iter().enumerate() {
            out_arcs[out_pos[a.tail.index()] as usize] = idx as u32;
            out_pos[a.tail.index()] += 1;
            in_arcs[in_pos[a.head.index()] as usize] = idx as u32;
            in_pos[a.head.index()] += 1;
        }
        self.out_offsets = out_offsets;
        self.out_arcs = out_arcs;
        self.in_offsets = in_offsets;
        self.in_arcs = in_arcs;
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    #[inline]
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    #[inline]
    pub fn arc(&self, idx: usize) -> &Arc {
        &self.arcs[idx]
    }

    #[inline]
    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    /// Indices of arcs leaving `v`, in arc-list order.
    #[inline]
    pub fn out_arcs(&self, v: NodeId) -> &[u32] {
        let lo = self.out_offsets[v.index()] as usize;
        let hi = self.out_offsets[v.index() + 1] as usize;
        &self.out_arcs[lo..hi]
    }

    /// Indices of arcs entering `v`, in arc-list order.
    #[inline]
    pub fn in_arcs(&self, v: NodeId) -> &[u32] {
        let lo = self.in_offsets[v.index()] as usize;
        let hi = self.in_offsets[v.index() + 1] as usize;
        &self.in_arcs[lo..hi]
    }

    /// Labels every node with its weakly connected component, ignoring arc
    /// direction. Returns `(labels, component_count)`.
    pub fn weak_components(&self) -> (Vec<u32>, usize) {
        let n = self.node_count();
        let mut label = vec![u32::MAX; n];
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != u32::MAX {
                continue;
            }
            label[start] = next;
            queue.push_back(start as u32);
            while let Some(v) = queue.pop_front() {
                let v = NodeId(v);
                for &ai in self.out_arcs(v) {
                    let w = self.arcs[ai as usize].head;
                    if label[w.index()] == u32::MAX {
                        label[w.index()] = next;
                        queue.push_back(w.0);
                    }
                }
                for &ai in self.in_arcs(v) {
                    let w = self.arcs[ai as usize].tail;
                    if label[w.index()] == u32::MAX {
                        label[w.index()] = next;
                        queue.push_back(w.0);
                    }
                }
            }
            next += 1;
        }
        (label, next as usize)
    }
}

/// Result of a node-dropping transform: the new graph plus the old-id to
/// new-id mapping (`None` for removed nodes).
#[derive(Debug, Clone)]
pub struct Reduction {
    pub graph: Graph,
    pub old_to_new: Vec<Option<NodeId>>,
}

/// Keeps the largest weakly connected component; ties go to the component
/// containing the smallest original `NodeId`. Node ids are re-densified.
pub fn largest_component(g: &Graph) -> Reduction {
    if g.node_count() == 0 {
        return Reduction {
            graph: Graph::default(),
            old_to_new: Vec::new(),
        };
    }
    let (labels, count) = g.weak_components();
    let mut sizes = vec![0usize; count];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    // Components are discovered in ascending order of their minimum node id,
    // so the first maximal one realizes the tie-break.
    let mut best = 0usize;
    for c in 1..count {
        if sizes[c] > sizes[best] {
            best = c;
        }
    }
    let keep: Vec<bool> = labels.iter().map(|&l| l as usize == best).collect();
    induce(g, &keep)
}

/// Subgraph induced by the nodes flagged in `keep`, with dense new ids.
fn induce(g: &Graph, keep: &[bool]) -> Reduction {
    let mut old_to_new = vec![None; g.node_count()];
    let mut nodes = Vec::new();
    for (i, node) in g.nodes().iter().enumerate() {
        if keep[i] {
            let new_id = NodeId(nodes.len() as u32);
            old_to_new[i] = Some(new_id);
            let mut n = node.clone();
            n.id = new_id;
            nodes.push(n);
        }
    }
    let mut arcs = Vec::new();
    for arc in g.arcs() {
        if let (Some(t), Some(h)) = (old_to_new[arc.tail.index()], old_to_new[arc.head.index()]) {
            arcs.push(Arc {
                tail: t,
                head: h,
                cost: arc.cost,
                tags: arc.tags.clone(),
            });
        }
    }
    let graph = Graph::build(nodes, arcs).expect("induced subgraph is valid");
    Reduction { graph, old_to_new }
}

/// Adds the reverse of every arc that lacks one (same cost and tags).
/// Idempotent: arcs whose reverse already exists, at any cost, are left
/// alone.
pub fn make_bidirectional(g: &Graph) -> Graph {
    let mut seen: std::collections::HashSet<(u32, u32)> =
        g.arcs().iter().map(|a| (a.tail.0, a.head.0)).collect();
    let mut arcs = g.arcs().to_vec();
    for arc in g.arcs() {
        let rev = (arc.head.0, arc.tail.0);
        if !seen.contains(&rev) {
            seen.insert(rev);
            arcs.push(Arc {
                tail: arc.head,
                head: arc.tail,
                cost: arc.cost,
                tags: arc.tags.clone(),
            });
        }
    }
    Graph::build(g.nodes().to_vec(), arcs).expect("symmetrized graph is valid")
}

/// Removes pass-through nodes, merging their incident arcs with summed
/// costs. `protected` nodes (agent locations) always survive.
///
/// A node qualifies when it has exactly two distinct undirected neighbors
/// and its arcs form either a one-way pass-through (one in, one out) or a
/// two-way one (one arc each way to both neighbors). Geodesic distances
/// between surviving nodes are preserved exactly.
pub fn simplify_chains(g: &Graph, protected: &[NodeId]) -> Reduction {
    let n = g.node_count();
    let mut is_protected = vec![false; n];
    for &p in protected {
        is_protected[p.index()] = true;
    }

    // Editable adjacency: per node, the live incident arc slots.
    #[derive(Clone)]
    struct Slot {
        tail: u32,
        head: u32,
        cost: f64,
        tags: Tags,
        alive: bool,
    }
    let mut slots: Vec<Slot> = g
        .arcs()
        .iter()
        .map(|a| Slot {
            tail: a.tail.0,
            head: a.head.0,
            cost: a.cost,
            tags: a.tags.clone(),
            alive: true,
        })
        .collect();
    let mut incident: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, s) in slots.iter().enumerate() {
        incident[s.tail as usize].push(i as u32);
        incident[s.head as usize].push(i as u32);
    }

    let merged_tags = |up: &Tags, down: &Tags| -> Tags {
        let mut t = up.clone();
        for (k, v) in down {
            t.entry(k.clone()).or_insert_with(|| v.clone());
        }
        t
    };

    let mut removed = vec![false; n];
    let mut queue: VecDeque<u32> = (0..n as u32).collect();
    let mut queued = vec![true; n];
    while let Some(v) = queue.pop_front() {
        queued[v as usize] = false;
        if removed[v as usize] || is_protected[v as usize] {
            continue;
        }
        incident[v as usize].retain(|&i| slots[i as usize].alive);
        let inc = &incident[v as usize];
        let mut ins: Vec<u32> = Vec::new();
        let mut outs: Vec<u32> = Vec::new();
        let mut neighbors: Vec<u32> = Vec::new();
        for &i in inc {
            let s = &slots[i as usize];
            let other = if s.tail == v { s.head } else { s.tail };
            if !neighbors.contains(&other) {
                neighbors.push(other);
            }
            if s.head == v {
                ins.push(i);
            } else {
                outs.push(i);
            }
        }
        if neighbors.len() != 2 {
            continue;
        }
        let (a, c) = (neighbors[0], neighbors[1]);
        let mut new_arcs: Vec<Slot> = Vec::new();
        if ins.len() == 1 && outs.len() == 1 {
            // two distinct neighbors with one arc each way through v
            let si = &slots[ins[0] as usize];
            let so = &slots[outs[0] as usize];
            new_arcs.push(Slot {
                tail: si.tail,
                head: so.head,
                cost: si.cost + so.cost,
                tags: merged_tags(&si.tags, &so.tags),
                alive: true,
            });
        } else if ins.len() == 2 && outs.len() == 2 {
            let from_a = ins.iter().find(|&&i| slots[i as usize].tail == a);
            let from_c = ins.iter().find(|&&i| slots[i as usize].tail == c);
            let to_a = outs.iter().find(|&&i| slots[i as usize].head == a);
            let to_c = outs.iter().find(|&&i| slots[i as usize].head == c);
            match (from_a, from_c, to_a, to_c) {
                (Some(&fa), Some(&fc), Some(&ta), Some(&tc)) => {
                    let (fa, fc, ta, tc) = (
                        slots[fa as usize].clone(),
                        slots[fc as usize].clone(),
                        slots[ta as usize].clone(),
                        slots[tc as usize].clone(),
                    );
                    new_arcs.push(Slot {
                        tail: a,
                        head: c,
                        cost: fa.cost + tc.cost,
                        tags: merged_tags(&fa.tags, &tc.tags),
                        alive: true,
                    });
                    new_arcs.push(Slot {
                        tail: c,
                        head: a,
                        cost: fc.cost + ta.cost,
                        tags: merged_tags(&fc.tags, &ta.tags),
                        alive: true,
                    });
                }
                _ => continue,
            }
        } else {
            continue;
        }

        for &i in inc {
            slots[i as usize].alive = false;
        }
        removed[v as usize] = true;
        for s in new_arcs {
            let idx = slots.len() as u32;
            incident[s.tail as usize].push(idx);
            incident[s.head as usize].push(idx);
            slots.push(s);
        }
        for w in [a, c] {
            if !queued[w as usize] && !removed[w as usize] {
                queued[w as usize] = true;
                queue.push_back(w);
            }
        }
    }

    let mut old_to_new = vec![None; n];
    let mut nodes = Vec::new();
    for (i, node) in g.nodes().iter().enumerate() {
        if !removed[i] {
            let new_id = NodeId(nodes.len() as u32);
            old_to_new[i] = Some(new_id);
            let mut nd = node.clone();
            nd.id = new_id;
            nodes.push(nd);
        }
    }
    let mut arcs = Vec::new();
    for s in &slots {
        if !s.alive {
            continue;
        }
        let (t, h) = (
            old_to_new[s.tail as usize].expect("live arc endpoint survives"),
            old_to_new[s.head as usize].expect("live arc endpoint survives"),
        );
        arcs.push(Arc {
            tail: t,
            head: h,
            cost: s.cost,
            tags: s.tags.clone(),
        });
    }
    let graph = Graph::build(nodes, arcs).expect("simplified graph is valid");
    Reduction { graph, old_to_new }
}
