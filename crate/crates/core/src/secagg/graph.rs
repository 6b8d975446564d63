//! Neighbor graphs for masking and share distribution.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::types::ClientId;

/// Undirected graph over client ids; adjacency lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    adj: BTreeMap<ClientId, Vec<ClientId>>,
}

impl NeighborGraph {
    pub fn complete(ids: &[ClientId]) -> Self {
        let nodes: BTreeSet<ClientId> = ids.iter().copied().collect();
        let adj = nodes
            .iter()
            .map(|&i| (i, nodes.iter().copied().filter(|&j| j != i).collect()))
            .collect();
        Self { adj }
    }

    /// Harary graph `H(k, n)`: the minimal k-connected graph on the ids in
    /// sorted order. `k == 0` or `k >= n - 1` gives the complete graph.
    pub fn harary(ids: &[ClientId], k: usize) -> Self {
        let nodes: Vec<ClientId> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let n = nodes.len();
        if k == 0 || k + 1 >= n {
            return Self::complete(&nodes);
        }
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut link = |a: usize, b: usize| {
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        };
        for i in 0..n {
            for s in 1..=k / 2 {
                link(i, (i + s) % n);
            }
        }
        if k % 2 == 1 {
            if n.is_multiple_of(2) {
                for i in 0..n / 2 {
                    link(i, i + n / 2);
                }
            } else {
                // Odd k, odd n: one vertex ends up with degree k + 1.
                for i in 0..=(n - 1) / 2 {
                    link(i, (i + n.div_ceil(2)) % n);
                }
            }
        }
        let mut adj: BTreeMap<ClientId, Vec<ClientId>> = nodes.iter().map(|&i| (i, Vec::new())).collect();
        for (a, b) in edges {
            adj.get_mut(&nodes[a]).unwrap().push(nodes[b]);
            adj.get_mut(&nodes[b]).unwrap().push(nodes[a]);
        }
        for list in adj.values_mut() {
            list.sort_unstable();
        }
        Self { adj }
    }

    pub fn nodes(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.adj.keys().copied()
    }

    pub fn neighbors(&self, id: ClientId) -> &[ClientId] {
        self.adj.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn are_adjacent(&self, a: ClientId, b: ClientId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    pub fn min_degree(&self) -> usize {
        self.adj.values().map(Vec::len).min().unwrap_or(0)
    }

    /// Whether the subgraph induced by `alive` is connected. Empty and
    /// single-node sets count as connected.
    pub fn induced_connected(&self, alive: &BTreeSet<ClientId>) -> bool {
        let Some(&start) = alive.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if alive.contains(&v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen.len() == alive.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: u32) -> Vec<u32> {
        (0..n).collect()
    }

    #[test]
    fn complete_graph_degrees() {
        let g = NeighborGraph::complete(&ids(5));
        assert!(g.nodes().all(|i| g.neighbors(i).len() == 4));
        assert!(g.are_adjacent(0, 4));
    }

    #[test]
    fn harary_is_k_regular_for_even_k() {
        let g = NeighborGraph::harary(&ids(10), 4);
        assert!(g.nodes().all(|i| g.neighbors(i).len() == 4));
        assert!(g.are_adjacent(0, 9) && g.are_adjacent(0, 2) && !g.are_adjacent(0, 5));
    }

    #[test]
    fn harary_odd_k() {
        let even_n = NeighborGraph::harary(&ids(8), 3);
        assert!(even_n.nodes().all(|i| even_n.neighbors(i).len() == 3));
        let odd_n = NeighborGraph::harary(&ids(9), 3);
        assert_eq!(odd_n.min_degree(), 3);
    }

    #[test]
    fn harary_survives_k_minus_one_removals() {
        // k-connectivity: removing any k-1 nodes keeps the rest connected.
        let n = 10;
        let g = NeighborGraph::harary(&ids(n), 4);
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let alive: BTreeSet<u32> = ids(n).into_iter().filter(|&x| x != a && x != b && x != c).collect();
                    assert!(g.induced_connected(&alive), "removed {a},{b},{c}");
                }
            }
        }
    }

    #[test]
    fn disconnection_detected() {
        let g = NeighborGraph::harary(&ids(8), 2); // a cycle
        let alive: BTreeSet<u32> = [0, 1, 4, 5].into_iter().collect();
        assert!(!g.induced_connected(&alive));
    }

    #[test]
    fn degenerate_degrees_fall_back_to_complete() {
        assert_eq!(NeighborGraph::harary(&ids(4), 0), NeighborGraph::complete(&ids(4)));
        assert_eq!(NeighborGraph::harary(&ids(4), 3), NeighborGraph::complete(&ids(4)));
    }
}
