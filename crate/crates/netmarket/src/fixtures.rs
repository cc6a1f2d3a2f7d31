//! Small reference networks used across the test suites.

use crate::graph::{make_bidirectional, Arc, Graph, Node, NodeId};

/// Three nodes on a line, unit costs, both directions: `A - B - C`.
pub fn line3() -> Graph {
    let nodes = (0..3).map(|i| Node::new(i, i as f64 * 0.01, 0.0)).collect();
    let arcs = vec![Arc::new(0, 1, 1.0), Arc::new(1, 2, 1.0)];
    make_bidirectional(&Graph::build(nodes, arcs).unwrap())
}

/// A 2x2 market whose optimum is degenerate: two buyers (nodes 0, 1) and
/// two sellers (nodes 2, 3), with seller 2 at distance 2 from both buyers
/// and seller 3 at distance 1 from both. Two integral optima tie at total
/// cost 3 and any optimal dual satisfies `p(3) = p(2) + 1`.
pub fn degenerate_square() -> (Graph, [NodeId; 2], [NodeId; 2]) {
    let nodes = vec![
        Node::new(0, 0.0, 0.0),
        Node::new(1, 0.01, 0.0),
        Node::new(2, 0.0, 0.01),
        Node::new(3, 0.01, 0.01),
    ];
    let arcs = vec![
        Arc::new(2, 0, 2.0),
        Arc::new(3, 0, 1.0),
        Arc::new(2, 1, 2.0),
        Arc::new(3, 1, 1.0),
    ];
    let g = make_bidirectional(&Graph::build(nodes, arcs).unwrap());
    (g, [NodeId(0), NodeId(1)], [NodeId(2), NodeId(3)])
}

/// Four agents on a path: seller 3 (node 3) - 2 - seller 2 (node 2) - 1 -
/// buyer 0 (node 0) - 1 - buyer 1 (node 1). Buyer-to-seller geodesics are
/// `[[1, 3], [2, 4]]`, so matching is degenerate at unit cost exponent and
/// unique once longer trips are penalized superlinearly.
pub fn path4() -> (Graph, [NodeId; 2], [NodeId; 2]) {
    let nodes = vec![
        Node::new(0, 0.01, 0.0),
        Node::new(1, 0.02, 0.0),
        Node::new(2, 0.0, 0.0),
        Node::new(3, -0.02, 0.0),
    ];
    let arcs = vec![
        Arc::new(3, 2, 2.0),
        Arc::new(2, 0, 1.0),
        Arc::new(0, 1, 1.0),
    ];
    let g = make_bidirectional(&Graph::build(nodes, arcs).unwrap());
    (g, [NodeId(0), NodeId(1)], [NodeId(2), NodeId(3)])
}
