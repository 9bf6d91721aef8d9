//! Undirected, connected, bounded-degree edge-server graphs.
//!
//! Each node is an edge server; an edge means the two servers can hand the
//! model to each other directly. The degenerate single-node graph carries a
//! self-loop so "pick a neighbor" is total for every graph this module
//! produces.

use crate::error::{Error, Result};
use crate::numerics::RandomStream;

/// Undirected edge-server graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EsGraph {
    adjacency: Vec<Vec<usize>>,
}

impl EsGraph {
    /// Builds a graph from an explicit edge list over `node_count` nodes,
    /// validating symmetry is implied (edges are undirected), connectivity,
    /// and absence of duplicate edges. A self-loop is only legal in the
    /// single-node graph.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::contract("graph: need at least one node"));
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::contract(format!(
                    "graph: edge ({a}, {b}) references a node outside 0..{node_count}"
                )));
            }
            if a == b && node_count > 1 {
                return Err(Error::contract(format!(
                    "graph: self-loop at node {a} is only allowed in the single-node graph"
                )));
            }
            if adjacency[a].contains(&b) {
                return Err(Error::contract(format!("graph: duplicate edge ({a}, {b})")));
            }
            adjacency[a].push(b);
            if a != b {
                adjacency[b].push(a);
            }
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        let graph = EsGraph { adjacency };
        graph.ensure_connected()?;
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Sorted neighbor list of a node.
    pub fn neighbors(&self, node: usize) -> Result<&[usize]> {
        self.adjacency.get(node).map(Vec::as_slice).ok_or_else(|| {
            Error::contract(format!(
                "graph: node {node} outside 0..{}",
                self.node_count()
            ))
        })
    }

    pub fn degree(&self, node: usize) -> Result<usize> {
        Ok(self.neighbors(node)?.len())
    }

    /// Undirected edge list with `a ≤ b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (a, neighbors) in self.adjacency.iter().enumerate() {
            for &b in neighbors {
                if a <= b {
                    edges.push((a, b));
                }
            }
        }
        edges.sort_unstable();
        edges
    }

    /// One `a b` pair per line, suitable for fixture files.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = String::new();
        for (a, b) in self.edges() {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    fn ensure_connected(&self) -> Result<()> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1usize;
        while let Some(node) = queue.pop_front() {
            for &next in &self.adjacency[node] {
                if !seen[next] {
                    seen[next] = true;
                    count += 1;
                    queue.push_back(next);
                }
            }
        }
        if count != n {
            return Err(Error::contract(format!(
                "graph: only {count} of {n} nodes reachable from node 0"
            )));
        }
        Ok(())
    }
}

/// Ring over `node_count ≥ 3` nodes: node `i` connects to `i±1 mod n`.
pub fn ring_graph(node_count: usize) -> Result<EsGraph> {
    if node_count < 3 {
        return Err(Error::contract(format!(
            "ring_graph: need at least 3 nodes, got {node_count}"
        )));
    }
    let edges: Vec<(usize, usize)> = (0..node_count).map(|i| (i, (i + 1) % node_count)).collect();
    EsGraph::from_edges(node_count, &edges)
}

/// Random connected graph respecting a degree cap: a random tree grown over
/// a shuffled node order, followed by a seed-determined number of extra
/// edges. The single-node graph gets a self-loop; two nodes need
/// `max_degree ≥ 1`; three or more need `max_degree ≥ 2`.
pub fn random_connected_graph(
    node_count: usize,
    max_degree: usize,
    stream: &mut RandomStream,
) -> Result<EsGraph> {
    if node_count == 0 {
        return Err(Error::contract("random_connected_graph: need ≥ 1 node"));
    }
    if node_count == 1 {
        return EsGraph::from_edges(1, &[(0, 0)]);
    }
    let needed = if node_count == 2 { 1 } else { 2 };
    if max_degree < needed {
        return Err(Error::contract(format!(
            "random_connected_graph: {node_count} nodes need max_degree ≥ {needed}, got \
             {max_degree}"
        )));
    }

    let mut order: Vec<usize> = (0..node_count).collect();
    stream.shuffle(&mut order)?;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut degree = vec![0usize; node_count];
    // Spanning tree: attach each new node to a uniformly chosen earlier node
    // that still has degree headroom. With max_degree ≥ 2 such a node always
    // exists because a tree on i nodes has total degree 2(i − 1) < 2i.
    for i in 1..order.len() {
        let candidates: Vec<usize> = order[..i]
            .iter()
            .copied()
            .filter(|&n| degree[n] < max_degree)
            .collect();
        let target = candidates[stream.next_range(candidates.len())?];
        edges.push((order[i], target));
        degree[order[i]] += 1;
        degree[target] += 1;
    }
    // Extra edges: up to node_count random attempts, each kept only if it
    // respects the cap and does not duplicate an existing edge.
    let adjacent = |edges: &[(usize, usize)], a: usize, b: usize| {
        edges
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    };
    for _ in 0..node_count {
        let a = stream.next_range(node_count)?;
        let b = stream.next_range(node_count)?;
        if a != b && degree[a] < max_degree && degree[b] < max_degree && !adjacent(&edges, a, b) {
            edges.push((a, b));
            degree[a] += 1;
            degree[b] += 1;
        }
    }
    EsGraph::from_edges(node_count, &edges)
}
