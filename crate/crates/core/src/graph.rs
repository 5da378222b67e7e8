//! Directed-graph checks on transition supports: strong connectivity,
//! period, and (complete) bipartiteness.

use std::collections::{BTreeSet, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

pub(crate) struct SupportGraph {
    n: usize,
    out: Vec<Vec<usize>>,
}

impl SupportGraph {
    pub(crate) fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut out = vec![Vec::new(); n];
        for (i, j) in edges {
            out[i].push(j);
        }
        Self { n, out }
    }

    pub(crate) fn strongly_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut g = DiGraph::<(), ()>::with_capacity(self.n, 0);
        let nodes: Vec<_> = (0..self.n).map(|_| g.add_node(())).collect();
        for (i, targets) in self.out.iter().enumerate() {
            for &j in targets {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
        tarjan_scc(&g).len() == 1
    }

    /// gcd of all cycle lengths. Only meaningful for a strongly connected
    /// graph; returns `None` otherwise.
    pub(crate) fn period(&self) -> Option<usize> {
        if !self.strongly_connected() {
            return None;
        }
        let mut level = vec![usize::MAX; self.n];
        level[0] = 0;
        let mut queue = VecDeque::from([0]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.out[u] {
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut g = 0usize;
        for (u, targets) in self.out.iter().enumerate() {
            for &v in targets {
                let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, diff);
            }
        }
        Some(g)
    }

    /// Two-colouring of the underlying undirected graph, if one exists and
    /// the graph is connected.
    pub(crate) fn bipartition(&self) -> Option<Vec<bool>> {
        if self.n == 0 {
            return None;
        }
        let mut adj = vec![BTreeSet::new(); self.n];
        for (u, targets) in self.out.iter().enumerate() {
            for &v in targets {
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        let mut colour = vec![None; self.n];
        colour[0] = Some(false);
        let mut queue = VecDeque::from([0]);
        while let Some(u) = queue.pop_front() {
            let cu = colour[u]?;
            for &v in &adj[u] {
                match colour[v] {
                    None => {
                        colour[v] = Some(!cu);
                        queue.push_back(v);
                    }
                    Some(cv) if cv == cu => return None,
                    Some(_) => {}
                }
            }
        }
        colour.into_iter().collect()
    }

    /// True when the edge set is exactly `A x B  U  B x A` for a partition
    /// `{A, B}` of the vertices.
    pub(crate) fn is_complete_bipartite(&self) -> bool {
        let Some(side) = self.bipartition() else {
            return false;
        };
        let edges: BTreeSet<(usize, usize)> = self
            .out
            .iter()
            .enumerate()
            .flat_map(|(u, t)| t.iter().map(move |&v| (u, v)))
            .collect();
        let expected: BTreeSet<(usize, usize)> = (0..self.n)
            .flat_map(|u| (0..self.n).map(move |v| (u, v)))
            .filter(|&(u, v)| side[u] != side[v])
            .collect();
        edges == expected
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> SupportGraph {
        SupportGraph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    #[test]
    fn cycles_have_their_length_as_period() {
        assert_eq!(cycle(3).period(), Some(3));
        assert_eq!(cycle(2).period(), Some(2));
    }

    #[test]
    fn self_loop_makes_aperiodic() {
        let g = SupportGraph::new(3, [(0, 1), (1, 2), (2, 0), (1, 1)]);
        assert_eq!(g.period(), Some(1));
    }

    #[test]
    fn mixed_cycle_lengths() {
        // 2-cycle and 3-cycle through node 0
        let g = SupportGraph::new(3, [(0, 1), (1, 0), (1, 2), (2, 0)]);
        assert_eq!(g.period(), Some(1));
    }

    #[test]
    fn reducible_graph() {
        let g = SupportGraph::new(3, [(0, 1), (1, 0), (1, 2), (2, 2)]);
        assert!(!g.strongly_connected());
        assert_eq!(g.period(), None);
    }

    #[test]
    fn bipartite_detection() {
        let path = SupportGraph::new(4, [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)]);
        assert!(path.bipartition().is_some());
        assert!(!path.is_complete_bipartite());
        let k22 = SupportGraph::new(
            4,
            [
                (0, 2),
                (0, 3),
                (1, 2),
                (1, 3),
                (2, 0),
                (2, 1),
                (3, 0),
                (3, 1),
            ],
        );
        assert!(k22.is_complete_bipartite());
        assert!(!cycle(3).is_complete_bipartite());
    }
}
