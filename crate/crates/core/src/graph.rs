//! Directed communication topology. Node 0 is the leader, nodes `1..=N`
//! are followers. An edge `from -> to` with weight `a_{to,from}` means
//! agent `to` may use the state and input of agent `from`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstack::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct Topology {
    node_count: usize,
    edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    nodes: usize,
    edges: Vec<Edge>,
}

impl TryFrom<TopologyRepr> for Topology {
    type Error = Error;
    fn try_from(r: TopologyRepr) -> Result<Self> {
        Topology::new(r.nodes, r.edges)
    }
}

impl From<Topology> for TopologyRepr {
    fn from(t: Topology) -> Self {
        TopologyRepr {
            nodes: t.node_count,
            edges: t.edges,
        }
    }
}

impl Topology {
    /// `node_count` includes the leader. Zero-weight edges are dropped.
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::InvalidTopology(format!(
                "need a leader and at least one follower, got {node_count} nodes"
            )));
        }
        let mut seen = BTreeMap::new();
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            if e.from >= node_count || e.to >= node_count {
                return Err(Error::InvalidTopology(format!(
                    "edge {} -> {} references a node outside 0..{node_count}",
                    e.from, e.to
                )));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::InvalidTopology(format!(
                    "edge {} -> {} has invalid weight {}",
                    e.from, e.to, e.weight
                )));
            }
            if e.from == e.to {
                return Err(Error::InvalidTopology(format!(
                    "self-loop at node {}",
                    e.from
                )));
            }
            if e.to == 0 {
                return Err(Error::InvalidTopology(format!(
                    "the leader cannot receive information (edge {} -> 0)",
                    e.from
                )));
            }
            if e.weight == 0.0 {
                continue;
            }
            if seen.insert((e.from, e.to), ()).is_some() {
                return Err(Error::InvalidTopology(format!(
                    "duplicate edge {} -> {}",
                    e.from, e.to
                )));
            }
            kept.push(e);
        }
        Ok(Self {
            node_count,
            edges: kept,
        })
    }

    /// Chain `0 -> 1 -> ... -> n` with unit weights.
    pub fn chain(followers: usize) -> Result<Self> {
        let edges = (1..=followers)
            .map(|i| Edge {
                from: i - 1,
                to: i,
                weight: 1.0,
            })
            .collect();
        Self::new(followers + 1, edges)
    }

    /// Leader feeds every follower directly.
    pub fn star(followers: usize) -> Result<Self> {
        let edges = (1..=followers)
            .map(|i| Edge {
                from: 0,
                to: i,
                weight: 1.0,
            })
            .collect();
        Self::new(followers + 1, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn follower_count(&self) -> usize {
        self.node_count - 1
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Weight `a_ij`: how strongly agent `i` listens to node `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.edges
            .iter()
            .find(|e| e.to == i && e.from == j)
            .map_or(0.0, |e| e.weight)
    }

    /// In-neighbors `N_i` of node `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.to == i)
            .map(|e| e.from)
            .collect();
        n.sort_unstable();
        n
    }
}

/// The unique upstream node of every follower in a rooted spanning tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentMap {
    parents: Vec<usize>,
}

impl ParentMap {
    /// Parent of follower `i` (1-based).
    pub fn parent(&self, i: usize) -> usize {
        self.parents[i - 1]
    }

    pub fn follower_count(&self) -> usize {
        self.parents.len()
    }

    /// `(i, parent(i))` for `i = 1..=N`: the stacking order of the error vector.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (1..=self.parents.len())
            .map(|i| (i, self.parent(i)))
            .collect()
    }

    /// Followers ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.parents.len();
        let mut order = Vec::with_capacity(n);
        let mut frontier = vec![0usize];
        while let Some(node) = frontier.pop() {
            if node != 0 {
                order.push(node);
            }
            let mut children: Vec<usize> = (1..=n).filter(|&c| self.parent(c) == node).collect();
            children.reverse();
            frontier.extend(children);
        }
        order
    }
}

/// Checks that every follower has exactly one in-neighbor and that the
/// parent links form a tree rooted at the leader.
pub fn validate_spanning_tree(t: &Topology) -> Result<ParentMap> {
    let n = t.follower_count();
    let mut parents = Vec::with_capacity(n);
    for i in 1..=n {
        let nb = t.neighbors(i);
        if nb.len() != 1 {
            return Err(Error::TopologyShape {
                node: i,
                in_degree: nb.len(),
            });
        }
        parents.push(nb[0]);
    }
    for start in 1..=n {
        let mut node = start;
        let mut hops = 0;
        while node != 0 {
            node = parents[node - 1];
            hops += 1;
            if hops > n {
                return Err(Error::NoSpanningTree { node: start });
            }
        }
    }
    Ok(ParentMap { parents })
}

/// Measurement selectors: for follower `i`, a `block_dim × (N·block_dim)`
/// matrix picking block `i` (the error `e_{i,parent(i)}`) out of the stack.
pub fn build_selectors(pm: &ParentMap, block_dim: usize) -> Vec<Mat> {
    let n = pm.follower_count();
    (0..n)
        .map(|i| {
            let mut h = Mat::zeros(block_dim, n * block_dim);
            for r in 0..block_dim {
                h[(r, i * block_dim + r)] = 1.0;
            }
            h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(from: usize, to: usize) -> Edge {
        Edge {
            from,
            to,
            weight: 1.0,
        }
    }

    #[test]
    fn chain_parents() {
        let pm = validate_spanning_tree(&Topology::chain(3).unwrap()).unwrap();
        assert_eq!(pm.pairs(), vec![(1, 0), (2, 1), (3, 2)]);
        assert_eq!(pm.topological_order(), vec![1, 2, 3]);
    }

    #[test]
    fn star_parents() {
        let pm = validate_spanning_tree(&Topology::star(2).unwrap()).unwrap();
        assert_eq!(pm.pairs(), vec![(1, 0), (2, 0)]);
    }

    #[test]
    fn extra_in_edge_is_rejected() {
        let t = Topology::new(3, vec![edge(0, 1), edge(1, 2), edge(2, 1)]).unwrap();
        assert_eq!(
            validate_spanning_tree(&t),
            Err(Error::TopologyShape {
                node: 1,
                in_degree: 2
            })
        );
    }

    #[test]
    fn orphan_follower_is_rejected() {
        let t = Topology::new(3, vec![edge(0, 1)]).unwrap();
        assert_eq!(
            validate_spanning_tree(&t),
            Err(Error::TopologyShape {
                node: 2,
                in_degree: 0
            })
        );
    }

    #[test]
    fn cycle_is_rejected() {
        let t = Topology::new(4, vec![edge(0, 1), edge(3, 2), edge(2, 3)]).unwrap();
        assert!(matches!(
            validate_spanning_tree(&t),
            Err(Error::NoSpanningTree { .. })
        ));
    }

    #[test]
    fn malformed_topologies() {
        assert!(Topology::new(1, vec![]).is_err());
        assert!(Topology::new(2, vec![edge(1, 1)]).is_err());
        assert!(Topology::new(2, vec![edge(1, 0)]).is_err());
        assert!(Topology::new(2, vec![edge(0, 5)]).is_err());
        assert!(Topology::new(2, vec![edge(0, 1), edge(0, 1)]).is_err());
        let t = Topology::new(
            2,
            vec![Edge {
                from: 0,
                to: 1,
                weight: 0.0,
            }],
        )
        .unwrap();
        assert!(t.edges().is_empty());
    }

    #[test]
    fn selectors_chain_block2() {
        let pm = validate_spanning_tree(&Topology::chain(3).unwrap()).unwrap();
        let h = build_selectors(&pm, 2);
        let i2 = Mat::identity(2);
        let z = Mat::zeros(2, 2);
        assert_eq!(
            h[0],
            Mat::hstack(&[i2.clone(), z.clone(), z.clone()]).unwrap()
        );
        assert_eq!(
            h[1],
            Mat::hstack(&[z.clone(), i2.clone(), z.clone()]).unwrap()
        );
        assert_eq!(h[2], Mat::hstack(&[z.clone(), z, i2]).unwrap());
    }

    #[test]
    fn selectors_small_cases() {
        let pm1 = validate_spanning_tree(&Topology::chain(1).unwrap()).unwrap();
        assert_eq!(build_selectors(&pm1, 3)[0], Mat::identity(3));
        let pm2 = validate_spanning_tree(&Topology::star(2).unwrap()).unwrap();
        let h = build_selectors(&pm2, 1);
        assert_eq!(h[0], Mat::from_rows(&[[1.0, 0.0]]).unwrap());
        assert_eq!(h[1], Mat::from_rows(&[[0.0, 1.0]]).unwrap());
    }

    #[test]
    fn selector_rows_orthonormal_and_cover_stack() {
        let t = Topology::new(5, vec![edge(0, 1), edge(0, 2), edge(2, 3), edge(1, 4)]).unwrap();
        let pm = validate_spanning_tree(&t).unwrap();
        let h = build_selectors(&pm, 2);
        for hi in &h {
            assert_eq!(hi * &hi.transpose(), Mat::identity(2));
        }
        assert_eq!(Mat::vstack(&h).unwrap(), Mat::identity(8));
        let order = pm.topological_order();
        for &i in &order {
            let p = pm.parent(i);
            if p != 0 {
                let pos = |x: usize| order.iter().position(|&o| o == x).unwrap();
                assert!(pos(p) < pos(i));
            }
        }
    }
}
