//! Synthetic graphs for fixtures and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeId, SocialGraph};
use crate::rng;

/// Barabasi-Albert preferential attachment: each new node links to `m`
/// distinct earlier nodes chosen proportionally to degree. Average degree is
/// close to `2m`.
pub fn preferential_attachment(n: usize, m: usize, seed: u64) -> Result<SocialGraph> {
    if m == 0 || n <= m {
        return Err(Error::InvalidArgument(format!("need n > m >= 1, got n={n}, m={m}")));
    }
    let mut rng = rng::from_seed(seed);
    let mut edges: Vec<(NodeId, NodeId)> = Vec::with_capacity(n * m);
    // endpoint list: a node appears once per incident edge
    let mut ends: Vec<NodeId> = Vec::with_capacity(2 * n * m);
    // seed core: a star on the first m + 1 nodes
    for v in 1..=m {
        edges.push((0, v));
        ends.extend([0, v]);
    }
    let mut picked: Vec<NodeId> = Vec::with_capacity(m);
    for u in (m + 1)..n {
        picked.clear();
        while picked.len() < m {
            let v = ends[rng.gen_range(0..ends.len())];
            if !picked.contains(&v) {
                picked.push(v);
            }
        }
        for &v in &picked {
            edges.push((u, v));
            ends.extend([u, v]);
        }
    }
    SocialGraph::from_edges(n, &edges)
}

/// Uniform random graph with `n` nodes and up to `edges` distinct edges
/// (duplicates and self-loops drawn are discarded).
pub fn uniform_random(n: usize, edges: usize, seed: u64) -> Result<SocialGraph> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two nodes".into()));
    }
    let mut rng = rng::from_seed(seed);
    let list: Vec<(NodeId, NodeId)> = (0..edges).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
    SocialGraph::from_edges(n, &list)
}

/// Random relabeling of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<NodeId> {
    let mut p: Vec<NodeId> = (0..n).collect();
    p.shuffle(&mut rng::from_seed(seed));
    p
}
