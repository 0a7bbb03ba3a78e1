//! Seed selection from learned embeddings.
//!
//! Every node starts with score `Z_u = ldo(x_u)`. HIM_MD takes the `k`
//! lowest scores. The adaptive sliding window (ASW) picks the global minimum
//! first and then keeps the next `w = ceil(beta * k)` nodes of the sorted
//! list in a priority queue. After each pick `c`, queued neighbors `u` of
//! `c` are penalized by `Z_u += w_cu / d_c * Z_c`, where `w_cu` is a softmax
//! of `1 / d2(x_c, x_u)` over those neighbors. The queue minimum becomes the
//! next pick and the window refills from the sorted list.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ordered_float::OrderedFloat;
use rand::seq::index;
use rand::Rng;

use crate::diffusion::{parse_field, write_file};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{NodeId, SocialGraph};

/// Lower clamp on `d2` in the candidate softmax.
pub const MIN_SQ_DIST: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Him,
    HimMd,
    Degree,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Him, Method::HimMd, Method::Degree, Method::Random];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Him => "him",
            Method::HimMd => "him_md",
            Method::Degree => "degree",
            Method::Random => "random",
        }
    }

    pub fn uses_beta(self) -> bool {
        self == Method::Him
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One pick of a selection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub node: NodeId,
    /// Score when picked (LDO, possibly penalized; degree for the degree baseline).
    pub score: f64,
    pub penalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub seeds: Vec<NodeId>,
    pub trace: Vec<Pick>,
    pub method: Method,
    pub beta: Option<f64>,
}

impl SelectionResult {
    fn from_trace(trace: Vec<Pick>, method: Method, beta: Option<f64>) -> Self {
        Self {
            seeds: trace.iter().map(|p| p.node).collect(),
            trace,
            method,
            beta,
        }
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        match self.beta {
            Some(b) => writeln!(w, "# method={} k={} beta={}", self.method, self.seeds.len(), b)?,
            None => writeln!(w, "# method={} k={} beta=none", self.method, self.seeds.len())?,
        }
        for s in &self.seeds {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), |w| self.write(w))
    }
}

/// Reads a seed file: optional `#` header, then one node id per line.
pub fn read_seeds(reader: impl BufRead) -> Result<Vec<NodeId>> {
    let mut seeds = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<seeds>", e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        seeds.push(parse_field(Some(t), i + 1, "seed")?);
    }
    Ok(seeds)
}

pub fn load_seeds(path: impl AsRef<Path>) -> Result<Vec<NodeId>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_seeds(BufReader::new(file))
}

/// `Z_u = ldo(x_u)` for every node.
pub fn ldo_scores(table: &EmbeddingTable) -> Vec<f64> {
    (0..table.node_count()).map(|u| table.ldo(u)).collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, node_count: n });
    }
    Ok(())
}

/// The `m` lowest node ids in `(score, id)` order.
fn lowest_sorted(scores: &[f64], m: usize) -> Vec<NodeId> {
    let cmp = |a: &NodeId, b: &NodeId| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b));
    let mut ids: Vec<NodeId> = (0..scores.len()).collect();
    if m == 0 {
        return Vec::new();
    }
    if m < ids.len() {
        ids.select_nth_unstable_by(m - 1, cmp);
        ids.truncate(m);
    }
    ids.sort_unstable_by(cmp);
    ids
}

/// The `k` smallest scores, ties by smaller id.
pub fn select_lowest(scores: &[f64], k: usize) -> Result<SelectionResult> {
    check_k(k, scores.len())?;
    let trace = lowest_sorted(scores, k)
        .into_iter()
        .map(|u| Pick {
            node: u,
            score: scores[u],
            penalized: false,
        })
        .collect();
    Ok(SelectionResult::from_trace(trace, Method::HimMd, None))
}

pub fn select_him_md(table: &EmbeddingTable, k: usize) -> Result<SelectionResult> {
    select_lowest(&ldo_scores(table), k)
}

/// `Z_u + w_cu / d_c * Z_c`.
pub fn update_candidate_score(z_u: f64, z_c: f64, d_c: usize, w_cu: f64) -> f64 {
    debug_assert!(d_c >= 1);
    z_u + w_cu / d_c as f64 * z_c
}

/// Softmax over `candidates` of `1 / max(d2, MIN_SQ_DIST)`.
pub fn softmax_inverse(sq_dists: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = sq_dists.iter().map(|d| 1.0 / d.max(MIN_SQ_DIST)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Penalty weights `w_cu` of the candidates relative to the pick `c`.
pub fn candidate_weights(table: &EmbeddingTable, c: NodeId, candidates: &[NodeId]) -> Vec<f64> {
    let d: Vec<f64> = candidates.iter().map(|&u| table.sq_dist(c, u)).collect();
    softmax_inverse(&d)
}

/// `max(1, ceil(beta * k))`.
pub fn window_size(beta: f64, k: usize) -> usize {
    ((beta * k as f64 - 1e-9).ceil() as usize).max(1)
}

/// Adaptive sliding window over an embedding table.
pub fn select_asw(g: &SocialGraph, table: &EmbeddingTable, k: usize, beta: f64) -> Result<SelectionResult> {
    if table.node_count() != g.node_count() {
        return Err(Error::DimensionMismatch {
            left: table.node_count(),
            right: g.node_count(),
        });
    }
    select_asw_with(g, &ldo_scores(table), |c, u| table.sq_dist(c, u), k, beta)
}

/// Adaptive sliding window on explicit scores and a pairwise `d2` oracle.
pub fn select_asw_with(
    g: &SocialGraph,
    scores: &[f64],
    sq_dist: impl Fn(NodeId, NodeId) -> f64,
    k: usize,
    beta: f64,
) -> Result<SelectionResult> {
    let n = scores.len();
    check_k(k, n)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let w = window_size(beta, k);
    // the window never reaches past rank k + w - 1
    let order = lowest_sorted(scores, (k + w).min(n));
    let mut current = scores.to_vec();
    let mut penalized = vec![false; n];
    let mut queued = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, NodeId)>> = BinaryHeap::with_capacity(w + 1);

    let mut c = order[0];
    let mut cursor = 1;
    while cursor < order.len() && cursor <= w {
        let u = order[cursor];
        queued[u] = true;
        heap.push(Reverse((OrderedFloat(current[u]), u)));
        cursor += 1;
    }

    let mut trace = Vec::with_capacity(k);
    let mut cands = Vec::new();
    let mut dists = Vec::new();
    loop {
        trace.push(Pick {
            node: c,
            score: current[c],
            penalized: penalized[c],
        });
        if trace.len() == k {
            break;
        }

        cands.clear();
        cands.extend(g.adj(c).iter().copied().filter(|&u| queued[u]));
        if !cands.is_empty() {
            dists.clear();
            dists.extend(cands.iter().map(|&u| sq_dist(c, u)));
            let weights = softmax_inverse(&dists);
            let z_c = current[c];
            let d_c = g.degree(c);
            for (&u, &w_cu) in cands.iter().zip(&weights) {
                current[u] = update_candidate_score(current[u], z_c, d_c, w_cu);
                penalized[u] = true;
                // older entries for u become stale and are skipped on pop
                heap.push(Reverse((OrderedFloat(current[u]), u)));
            }
        }

        c = loop {
            let Reverse((OrderedFloat(s), u)) = heap.pop().expect("window holds every unpicked node");
            if queued[u] && s == current[u] {
                break u;
            }
        };
        queued[c] = false;
        if cursor < order.len() {
            let u = order[cursor];
            queued[u] = true;
            heap.push(Reverse((OrderedFloat(current[u]), u)));
            cursor += 1;
        }
    }
    Ok(SelectionResult::from_trace(trace, Method::Him, Some(beta)))
}

/// Highest degree first, ties by smaller id.
pub fn select_degree_topk(g: &SocialGraph, k: usize) -> Result<SelectionResult> {
    let neg_degree: Vec<f64> = (0..g.node_count()).map(|u| -(g.degree(u) as f64)).collect();
    let mut r = select_lowest(&neg_degree, k)?;
    for p in &mut r.trace {
        p.score = -p.score;
    }
    r.method = Method::Degree;
    Ok(r)
}

/// Uniform sample without replacement.
pub fn select_random<R: Rng + ?Sized>(g: &SocialGraph, k: usize, rng: &mut R) -> Result<SelectionResult> {
    check_k(k, g.node_count())?;
    let trace = index::sample(rng, g.node_count(), k)
        .into_iter()
        .map(|u| Pick {
            node: u,
            score: 0.0,
            penalized: false,
        })
        .collect();
    Ok(SelectionResult::from_trace(trace, Method::Random, None))
}

/// Window coefficient by graph size: 1.0 below 5000 nodes, 0.5 below 1e5, else 0.1.
pub fn default_beta(node_count: usize) -> f64 {
    if node_count < 5_000 {
        1.0
    } else if node_count < 100_000 {
        0.5
    } else {
        0.1
    }
}
