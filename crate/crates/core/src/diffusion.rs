//! Hidden-parameter diffusion models and the propagation data they produce.
//!
//! An [`IcInstance`] or [`WltInstance`] is one frozen draw of a model's
//! parameters. Both carry their own directed topology so they can be
//! serialized and evaluated without the social graph.
//!
//! IC runs use a live-edge formulation: the coin for directed edge `e` in a
//! run keyed by `k` is `unit_hash(k, e)`. A run is therefore a pure function
//! of `(instance, seeds, key)`, and two runs with the same key see the same
//! coins whatever the seed set, which is what makes coupled-world
//! monotonicity checks possible.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{NodeId, SocialGraph};
use crate::rng;

pub const IC_MAX_PROB: f64 = 0.2;
pub const WLT_THRESHOLD_RANGE: (f64, f64) = (0.5, 0.9);
pub const BRUTEFORCE_EDGE_LIMIT: usize = 22;
pub const DEFAULT_INSTANCES: usize = 30;
pub const DEFAULT_EVAL_ROUNDS: usize = 100;

/// Directed adjacency in CSR form with one value per edge.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(source, target, value)` triples; rejects duplicates.
    fn from_triples(node_count: usize, mut triples: Vec<(NodeId, NodeId, f64)>) -> Result<Self> {
        triples.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in triples.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate directed edge {} -> {}",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut offsets = vec![0usize; node_count + 1];
        for &(u, v, _) in &triples {
            for x in [u, v] {
                if x >= node_count {
                    return Err(Error::NodeOutOfRange { node: x, node_count });
                }
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            offsets[u + 1] += 1;
        }
        for i in 0..node_count {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            offsets,
            targets: triples.iter().map(|t| t.1).collect(),
            values: triples.iter().map(|t| t.2).collect(),
        })
    }

    #[inline]
    fn range(&self, u: NodeId) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    fn edge_count(&self) -> usize {
        self.targets.len()
    }

    fn get(&self, u: NodeId, v: NodeId) -> Option<f64> {
        let r = self.range(u);
        self.targets[r.clone()]
            .binary_search(&v)
            .ok()
            .map(|i| self.values[r.start + i])
    }

    fn triples(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        (0..self.node_count())
            .flat_map(move |u| self.range(u).map(move |e| (u, self.targets[e], self.values[e])))
    }
}

/// Independent-cascade parameters: one activation probability per directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct IcInstance {
    out: Csr,
}

impl IcInstance {
    /// Hand-built instance from directed `(u, v, p)` edges.
    pub fn from_directed(node_count: usize, edges: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        if let Some(&(u, v, p)) = edges.iter().find(|e| !(0.0..=1.0).contains(&e.2)) {
            return Err(Error::InvalidArgument(format!("probability {p} on {u} -> {v} outside [0, 1]")));
        }
        Ok(Self {
            out: Csr::from_triples(node_count, edges.to_vec())?,
        })
    }

    /// Every directed edge of `g` gets an independent `U[0, 0.2]` draw.
    pub fn sample(g: &SocialGraph, seed: u64) -> Self {
        let mut rng = rng::from_seed(seed);
        let n = g.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for u in 0..n {
            offsets.push(g.edge_offset(u) + g.degree(u));
        }
        let targets: Vec<NodeId> = g.directed_edges().map(|(_, v)| v).collect();
        let values = (0..targets.len()).map(|_| rng.gen_range(0.0..=IC_MAX_PROB)).collect();
        Self {
            out: Csr {
                offsets,
                targets,
                values,
            },
        }
    }

    pub fn node_count(&self) -> usize {
        self.out.node_count()
    }

    pub fn directed_edge_count(&self) -> usize {
        self.out.edge_count()
    }

    pub fn probability(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.out.get(u, v)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.out.triples()
    }

    /// Runs one cascade and records the first successful activator of each node.
    pub fn simulate(&self, seeds: &[NodeId], run_seed: u64) -> Result<PropagationInstance> {
        let seeds = normalize_seeds(seeds, self.node_count())?;
        let mut activations = Vec::new();
        let activated = self.run(&seeds, rng::mix64(run_seed), Some(&mut activations));
        Ok(PropagationInstance {
            seeds,
            activated,
            activations,
        })
    }

    /// Number of nodes activated by one run.
    pub fn spread_once(&self, seeds: &[NodeId], run_seed: u64) -> Result<usize> {
        let seeds = normalize_seeds(seeds, self.node_count())?;
        Ok(self.run(&seeds, rng::mix64(run_seed), None).len())
    }

    /// Synchronous rounds over live edges. Within a round sources are scanned
    /// in ascending id order, so a node reached by several new activators is
    /// credited to the smallest one.
    fn run(
        &self,
        seeds: &[NodeId],
        key: u64,
        mut log: Option<&mut Vec<(NodeId, NodeId)>>,
    ) -> Vec<NodeId> {
        let mut active = vec![false; self.node_count()];
        let mut activated = seeds.to_vec();
        for &s in seeds {
            active[s] = true;
        }
        let mut frontier = seeds.to_vec();
        let mut next = Vec::new();
        while !frontier.is_empty() {
            for &u in &frontier {
                for e in self.out.range(u) {
                    let v = self.out.targets[e];
                    if active[v] {
                        continue;
                    }
                    if rng::unit_hash(key, e as u64) < self.out.values[e] {
                        active[v] = true;
                        next.push(v);
                        if let Some(log) = log.as_deref_mut() {
                            log.push((u, v));
                        }
                    }
                }
            }
            next.sort_unstable();
            activated.extend_from_slice(&next);
            std::mem::swap(&mut frontier, &mut next);
            next.clear();
        }
        activated.sort_unstable();
        activated
    }

    /// Exact expected spread by enumerating every live-edge world.
    pub fn exact_spread_bruteforce(&self, seeds: &[NodeId]) -> Result<f64> {
        let seeds = normalize_seeds(seeds, self.node_count())?;
        let m = self.directed_edge_count();
        if m > BRUTEFORCE_EDGE_LIMIT {
            return Err(Error::TooManyEdges {
                edges: m,
                limit: BRUTEFORCE_EDGE_LIMIT,
            });
        }
        let edges: Vec<(NodeId, NodeId, f64)> = self.edges().collect();
        let n = self.node_count();
        let mut total = 0.0;
        let mut reached = vec![false; n];
        let mut stack = Vec::with_capacity(n);
        for world in 0u64..(1u64 << m) {
            let mut weight = 1.0;
            for (i, &(_, _, p)) in edges.iter().enumerate() {
                weight *= if world >> i & 1 == 1 { p } else { 1.0 - p };
            }
            if weight == 0.0 {
                continue;
            }
            reached.iter_mut().for_each(|r| *r = false);
            stack.clear();
            for &s in &seeds {
                reached[s] = true;
                stack.push(s);
            }
            let mut count = seeds.len();
            while let Some(u) = stack.pop() {
                for e in self.out.range(u) {
                    let v = self.out.targets[e];
                    if world >> e & 1 == 1 && !reached[v] {
                        reached[v] = true;
                        count += 1;
                        stack.push(v);
                    }
                }
            }
            total += weight * count as f64;
        }
        Ok(total)
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "IC {}", self.node_count())?;
        for (u, v, p) in self.edges() {
            writeln!(w, "{u} {v} {p}")?;
        }
        Ok(())
    }
}

/// Weighted linear-threshold parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WltInstance {
    thresholds: Vec<f64>,
    /// In-edges: for node v, sources u with weight w(u -> v).
    incoming: Csr,
    /// Same weights indexed by source.
    outgoing: Csr,
}

impl WltInstance {
    /// Hand-built instance. `edges` are `(u, v, w)` meaning u contributes `w` to v.
    pub fn from_parts(thresholds: Vec<f64>, edges: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        let n = thresholds.len();
        if let Some(t) = thresholds.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(format!("threshold {t} is not finite")));
        }
        if let Some(&(u, v, w)) = edges.iter().find(|e| !(e.2 > 0.0 && e.2.is_finite())) {
            return Err(Error::InvalidArgument(format!("weight {w} on {u} -> {v} must be positive")));
        }
        let incoming = Csr::from_triples(n, edges.iter().map(|&(u, v, w)| (v, u, w)).collect())?;
        let outgoing = Csr::from_triples(n, edges.to_vec())?;
        Ok(Self {
            thresholds,
            incoming,
            outgoing,
        })
    }

    /// Thresholds `U[0.5, 0.9]`; in-weights i.i.d. `U(0, 1)` normalized to sum 1.
    pub fn sample(g: &SocialGraph, seed: u64) -> Self {
        let mut rng = rng::from_seed(seed);
        let n = g.node_count();
        let mut thresholds = Vec::with_capacity(n);
        let mut edges = Vec::with_capacity(g.directed_edge_count());
        let mut raw = Vec::new();
        for v in 0..n {
            thresholds.push(rng.gen_range(WLT_THRESHOLD_RANGE.0..=WLT_THRESHOLD_RANGE.1));
            raw.clear();
            for _ in g.adj(v) {
                // open interval: reject exact zeros
                let x = loop {
                    let x: f64 = rng.gen();
                    if x > 0.0 {
                        break x;
                    }
                };
                raw.push(x);
            }
            let total: f64 = raw.iter().sum();
            for (&u, &x) in g.adj(v).iter().zip(&raw) {
                edges.push((u, v, x / total));
            }
        }
        Self::from_parts(thresholds, &edges).expect("sampled parameters are valid")
    }

    pub fn node_count(&self) -> usize {
        self.thresholds.len()
    }

    pub fn threshold(&self, v: NodeId) -> f64 {
        self.thresholds[v]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.incoming.get(v, u)
    }

    /// `(u, w)` pairs of in-neighbors of `v`.
    pub fn in_weights(&self, v: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.incoming
            .range(v)
            .map(move |e| (self.incoming.targets[e], self.incoming.values[e]))
    }

    /// Edges as `(u, v, w)`, ordered by source then target.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.outgoing.triples()
    }

    pub fn directed_edge_count(&self) -> usize {
        self.outgoing.edge_count()
    }

    /// Deterministic threshold cascade; every active in-neighbor of a newly
    /// activated node is recorded as a contributor.
    pub fn simulate(&self, seeds: &[NodeId]) -> Result<PropagationInstance> {
        let seeds = normalize_seeds(seeds, self.node_count())?;
        let mut activations = Vec::new();
        let activated = self.run(&seeds, Some(&mut activations));
        Ok(PropagationInstance {
            seeds,
            activated,
            activations,
        })
    }

    pub fn spread_once(&self, seeds: &[NodeId]) -> Result<usize> {
        let seeds = normalize_seeds(seeds, self.node_count())?;
        Ok(self.run(&seeds, None).len())
    }

    fn run(&self, seeds: &[NodeId], mut log: Option<&mut Vec<(NodeId, NodeId)>>) -> Vec<NodeId> {
        let n = self.node_count();
        let mut active = vec![false; n];
        let mut touched = vec![false; n];
        let mut acc = vec![0.0f64; n];
        let mut activated = seeds.to_vec();
        for &s in seeds {
            active[s] = true;
        }
        let mut frontier = seeds.to_vec();
        let mut candidates = Vec::new();
        let mut next = Vec::new();
        while !frontier.is_empty() {
            for &u in &frontier {
                for e in self.outgoing.range(u) {
                    let v = self.outgoing.targets[e];
                    if active[v] {
                        continue;
                    }
                    acc[v] += self.outgoing.values[e];
                    if !touched[v] {
                        touched[v] = true;
                        candidates.push(v);
                    }
                }
            }
            candidates.sort_unstable();
            for &v in &candidates {
                touched[v] = false;
                if acc[v] >= self.thresholds[v] {
                    next.push(v);
                }
            }
            candidates.clear();
            if let Some(log) = log.as_deref_mut() {
                for &v in &next {
                    for (u, _) in self.in_weights(v) {
                        if active[u] {
                            log.push((u, v));
                        }
                    }
                }
            }
            for &v in &next {
                active[v] = true;
            }
            activated.extend_from_slice(&next);
            std::mem::swap(&mut frontier, &mut next);
            next.clear();
        }
        activated.sort_unstable();
        activated
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "WLT {}", self.node_count())?;
        for (v, t) in self.thresholds.iter().enumerate() {
            writeln!(w, "N {v} {t}")?;
        }
        for (u, v, x) in self.edges() {
            writeln!(w, "E {u} {v} {x}")?;
        }
        Ok(())
    }
}

/// A frozen diffusion-model instance of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionModel {
    Ic(IcInstance),
    Wlt(WltInstance),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ic,
    Wlt,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ic" => Ok(ModelKind::Ic),
            "wlt" | "lt" => Ok(ModelKind::Wlt),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Ic => "ic",
            ModelKind::Wlt => "wlt",
        })
    }
}

/// Mean and standard deviation of the spread ratio `|activated| / |V|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadEstimate {
    pub mean: f64,
    pub std: f64,
    pub rounds: usize,
}

impl SpreadEstimate {
    pub fn std_error(&self) -> f64 {
        self.std / (self.rounds as f64).sqrt()
    }
}

impl DiffusionModel {
    pub fn sample(kind: ModelKind, g: &SocialGraph, seed: u64) -> Self {
        match kind {
            ModelKind::Ic => DiffusionModel::Ic(IcInstance::sample(g, seed)),
            ModelKind::Wlt => DiffusionModel::Wlt(WltInstance::sample(g, seed)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            DiffusionModel::Ic(_) => ModelKind::Ic,
            DiffusionModel::Wlt(_) => ModelKind::Wlt,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            DiffusionModel::Ic(m) => m.node_count(),
            DiffusionModel::Wlt(m) => m.node_count(),
        }
    }

    /// `run_seed` is ignored for WLT, which has no runtime randomness.
    pub fn simulate(&self, seeds: &[NodeId], run_seed: u64) -> Result<PropagationInstance> {
        match self {
            DiffusionModel::Ic(m) => m.simulate(seeds, run_seed),
            DiffusionModel::Wlt(m) => m.simulate(seeds),
        }
    }

    /// Draws `m` propagation instances, each from a uniform random seed set
    /// of size `ceil(seed_ratio * |V|)`. Instance `i` uses the stream
    /// `(INSTANCE, i)` of `master_seed`, so the output does not depend on
    /// the number of worker threads.
    pub fn generate_instances(
        &self,
        seed_ratio: f64,
        m: usize,
        master_seed: u64,
    ) -> Result<Vec<PropagationInstance>> {
        if m == 0 {
            return Err(Error::InvalidArgument("instance count M must be at least 1".into()));
        }
        let n = self.node_count();
        let size = seed_count(seed_ratio, n)?;
        (0..m)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(master_seed, rng::INSTANCE, i as u64);
                let mut seeds = index::sample(&mut rng, n, size).into_vec();
                seeds.sort_unstable();
                self.simulate(&seeds, rng.gen())
            })
            .collect()
    }

    /// Monte Carlo spread ratio over `rounds` runs. Round `r` uses the
    /// stream `(EVAL, r)` of `seed`. WLT is simulated once.
    pub fn estimate_spread(&self, seeds: &[NodeId], rounds: usize, seed: u64) -> Result<SpreadEstimate> {
        if rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be at least 1".into()));
        }
        let n = self.node_count() as f64;
        let counts: Vec<usize> = match self {
            DiffusionModel::Wlt(m) => vec![m.spread_once(seeds)?; rounds],
            DiffusionModel::Ic(m) => {
                let seeds = normalize_seeds(seeds, m.node_count())?;
                (0..rounds)
                    .into_par_iter()
                    .map(|r| {
                        let key = rng::mix64(rng::derive_seed(seed, rng::EVAL, r as u64));
                        m.run(&seeds, key, None).len()
                    })
                    .collect()
            }
        };
        // integer moments so that identical outcomes give exactly zero spread
        let r = rounds as u128;
        let sum: u128 = counts.iter().map(|&c| c as u128).sum();
        let sum_sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
        let mean = sum as f64 / rounds as f64 / n;
        let std = if rounds > 1 {
            let scaled = (sum_sq * r - sum * sum) as f64;
            (scaled / (r * (r - 1)) as f64).sqrt() / n
        } else {
            0.0
        };
        Ok(SpreadEstimate { mean, std, rounds })
    }

    pub fn write(&self, w: impl Write) -> std::io::Result<()> {
        match self {
            DiffusionModel::Ic(m) => m.write(w),
            DiffusionModel::Wlt(m) => m.write(w),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), |w| self.write(w))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    /// Parses an `IC <n>` or `WLT <n>` file.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(Error::parse(1, "missing model header")),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io("<model>", e))?;
                    if !line.trim().is_empty() {
                        break (i + 1, line);
                    }
                }
            }
        };
        let mut head = header.1.split_whitespace();
        let kind = head.next().unwrap_or_default();
        let n: usize = parse_field(head.next(), header.0, "node count")?;
        match kind {
            "IC" => {
                let mut edges = Vec::new();
                for (i, line) in lines {
                    let line = line.map_err(|e| Error::io("<model>", e))?;
                    let mut t = line.split_whitespace();
                    if t.clone().next().is_none() {
                        continue;
                    }
                    let u = parse_field(t.next(), i + 1, "source")?;
                    let v = parse_field(t.next(), i + 1, "target")?;
                    let p = parse_field(t.next(), i + 1, "probability")?;
                    edges.push((u, v, p));
                }
                Ok(DiffusionModel::Ic(IcInstance::from_directed(n, &edges)?))
            }
            "WLT" => {
                let mut thresholds = vec![f64::NAN; n];
                let mut edges = Vec::new();
                for (i, line) in lines {
                    let line = line.map_err(|e| Error::io("<model>", e))?;
                    let mut t = line.split_whitespace();
                    match t.next() {
                        None => continue,
                        Some("N") => {
                            let v: usize = parse_field(t.next(), i + 1, "node")?;
                            if v >= n {
                                return Err(Error::parse(i + 1, format!("node {v} out of range")));
                            }
                            thresholds[v] = parse_field(t.next(), i + 1, "threshold")?;
                        }
                        Some("E") => {
                            let u = parse_field(t.next(), i + 1, "source")?;
                            let v = parse_field(t.next(), i + 1, "target")?;
                            let w = parse_field(t.next(), i + 1, "weight")?;
                            edges.push((u, v, w));
                        }
                        Some(other) => {
                            return Err(Error::parse(i + 1, format!("unknown record {other:?}")))
                        }
                    }
                }
                if let Some(v) = thresholds.iter().position(|t| t.is_nan()) {
                    return Err(Error::parse(header.0, format!("missing threshold for node {v}")));
                }
                Ok(DiffusionModel::Wlt(WltInstance::from_parts(thresholds, &edges)?))
            }
            other => Err(Error::parse(header.0, format!("unknown model kind {other:?}"))),
        }
    }
}

/// Recorded activation graph of one diffusion run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagationInstance {
    /// Sorted, distinct.
    pub seeds: Vec<NodeId>,
    /// Sorted, distinct; always the closure of `activations` from `seeds`.
    pub activated: Vec<NodeId>,
    /// Directed `(u, v)` activation events in the order they happened.
    pub activations: Vec<(NodeId, NodeId)>,
}

impl PropagationInstance {
    /// Rebuilds an instance from its seeds and activation events.
    pub fn from_activations(seeds: Vec<NodeId>, activations: Vec<(NodeId, NodeId)>) -> Self {
        let mut seeds = seeds;
        seeds.sort_unstable();
        seeds.dedup();
        let mut activated: Vec<NodeId> = seeds
            .iter()
            .copied()
            .chain(activations.iter().flat_map(|&(u, v)| [u, v]))
            .collect();
        activated.sort_unstable();
        activated.dedup();
        Self {
            seeds,
            activated,
            activations,
        }
    }

    /// Nodes reachable from the seeds by replaying the activation edges.
    pub fn replay_closure(&self) -> Vec<NodeId> {
        let mut reached: std::collections::BTreeSet<NodeId> = self.seeds.iter().copied().collect();
        let mut changed = true;
        while changed {
            changed = false;
            for &(u, v) in &self.activations {
                if reached.contains(&u) && reached.insert(v) {
                    changed = true;
                }
            }
        }
        reached.into_iter().collect()
    }
}

pub fn write_instances(instances: &[PropagationInstance], mut w: impl Write) -> std::io::Result<()> {
    for (i, inst) in instances.iter().enumerate() {
        let mut seeds = String::new();
        for (j, s) in inst.seeds.iter().enumerate() {
            if j > 0 {
                seeds.push(',');
            }
            let _ = write!(seeds, "{s}");
        }
        writeln!(w, "# instance {i} seeds {seeds}")?;
        for (u, v) in &inst.activations {
            writeln!(w, "{u} {v}")?;
        }
    }
    Ok(())
}

pub fn save_instances(instances: &[PropagationInstance], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), |w| write_instances(instances, w))
}

pub fn read_instances(reader: impl BufRead) -> Result<Vec<PropagationInstance>> {
    let mut out = Vec::new();
    let mut current: Option<(Vec<NodeId>, Vec<(NodeId, NodeId)>)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<instances>", e))?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let t: Vec<&str> = rest.split_whitespace().collect();
            if t.len() < 3 || t[0] != "instance" || t[2] != "seeds" {
                return Err(Error::parse(lineno, "expected \"# instance <i> seeds <list>\""));
            }
            let seeds = match t.get(3) {
                Some(list) => list
                    .split(',')
                    .map(|s| s.parse().map_err(|_| Error::parse(lineno, format!("bad seed {s:?}"))))
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            if let Some((s, a)) = current.replace((seeds, Vec::new())) {
                out.push(PropagationInstance::from_activations(s, a));
            }
            continue;
        }
        let Some((_, acts)) = current.as_mut() else {
            return Err(Error::parse(lineno, "activation before any instance header"));
        };
        let mut t = trimmed.split_whitespace();
        let u = parse_field(t.next(), lineno, "source")?;
        let v = parse_field(t.next(), lineno, "target")?;
        acts.push((u, v));
    }
    if let Some((s, a)) = current {
        out.push(PropagationInstance::from_activations(s, a));
    }
    Ok(out)
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<PropagationInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_instances(BufReader::new(file))
}

/// `ceil(ratio * n)`, rejecting ratios outside `(0, 1]`.
pub fn seed_count(ratio: f64, n: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("seed ratio {ratio} outside (0, 1]")));
    }
    // absorb representation error such as 0.07 * 100 = 7.000000000000001
    let k = (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!("seed ratio {ratio} of {n} nodes rounds to 0")));
    }
    Ok(k.min(n))
}

fn normalize_seeds(seeds: &[NodeId], node_count: usize) -> Result<Vec<NodeId>> {
    if seeds.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s >= node_count) {
        return Err(Error::NodeOutOfRange { node: bad, node_count });
    }
    let mut s = seeds.to_vec();
    s.sort_unstable();
    s.dedup();
    Ok(s)
}

pub(crate) fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} {tok:?}")))
}

pub(crate) fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SocialGraph {
        SocialGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    fn star2(p: f64) -> IcInstance {
        IcInstance::from_directed(3, &[(0, 1, p), (0, 2, p), (1, 0, p), (2, 0, p)]).unwrap()
    }

    /// c=2 with in-neighbors a=0 (0.6) and b=1 (0.4), threshold 0.5.
    fn wlt_fixture() -> WltInstance {
        WltInstance::from_parts(vec![0.7, 0.7, 0.5], &[(0, 2, 0.6), (1, 2, 0.4)]).unwrap()
    }

    #[test]
    fn ic_sampling_range_and_determinism() {
        let g = SocialGraph::from_edges(2, &[(0, 1)]).unwrap();
        let a = IcInstance::sample(&g, 5);
        assert_eq!(a.directed_edge_count(), 2);
        assert!(a.edges().all(|(_, _, p)| (0.0..=0.2).contains(&p)));
        assert_eq!(a, IcInstance::sample(&g, 5));
        assert_ne!(a, IcInstance::sample(&g, 6));
    }

    #[test]
    fn wlt_sampling_normalizes() {
        let g = SocialGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (1, 3)]).unwrap();
        let m = WltInstance::sample(&g, 9);
        assert_eq!(m.weight(1, 0), Some(1.0));
        for v in 0..4 {
            let ws: Vec<f64> = m.in_weights(v).map(|(_, w)| w).collect();
            assert!(ws.iter().all(|&w| w > 0.0));
            assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((0.5..=0.9).contains(&m.threshold(v)));
        }
        assert_eq!(m, WltInstance::sample(&g, 9));
    }

    #[test]
    fn ic_certain_and_impossible_propagation() {
        let certain = IcInstance::from_directed(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
        let run = certain.simulate(&[0], 1).unwrap();
        assert_eq!(run.activated, vec![0, 1, 2]);
        assert_eq!(run.activations, vec![(0, 1), (1, 2)]);

        let never = IcInstance::from_directed(3, &[(0, 1, 0.0), (1, 0, 0.0), (1, 2, 0.0), (2, 1, 0.0)]).unwrap();
        let run = never.simulate(&[0, 2], 1).unwrap();
        assert_eq!(run.activated, vec![0, 2]);
        assert!(run.activations.is_empty());
        assert!(matches!(never.simulate(&[], 1), Err(Error::EmptySeedSet)));
    }

    #[test]
    fn ic_first_activator_is_smallest_id() {
        // 0 and 1 both reach 2 in the same round with certainty
        let m = IcInstance::from_directed(3, &[(0, 2, 1.0), (1, 2, 1.0)]).unwrap();
        let run = m.simulate(&[1, 0], 3).unwrap();
        assert_eq!(run.activations, vec![(0, 2)]);
    }

    #[test]
    fn wlt_hand_traces() {
        let m = wlt_fixture();
        let a = m.simulate(&[0]).unwrap();
        assert_eq!(a.activated, vec![0, 2]);
        assert_eq!(a.activations, vec![(0, 2)]);
        let b = m.simulate(&[1]).unwrap();
        assert_eq!(b.activated, vec![1]);
        assert!(b.activations.is_empty());
        let ab = m.simulate(&[0, 1]).unwrap();
        assert_eq!(ab.activations, vec![(0, 2), (1, 2)]);
        assert_eq!(m.simulate(&[0]).unwrap(), a);
    }

    #[test]
    fn star_exact_spread() {
        let m = star2(0.5);
        assert!((m.exact_spread_bruteforce(&[0]).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(m.exact_spread_bruteforce(&[0, 1, 2]).unwrap(), 3.0);
        let certain = IcInstance::from_directed(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]).unwrap();
        assert_eq!(certain.exact_spread_bruteforce(&[0]).unwrap(), 3.0);
    }

    #[test]
    fn bruteforce_refuses_large_instances() {
        let edges: Vec<(usize, usize)> = (0..12).map(|i| (i, i + 1)).collect();
        let g = SocialGraph::from_edges(13, &edges).unwrap();
        let m = IcInstance::sample(&g, 0);
        assert!(matches!(m.exact_spread_bruteforce(&[0]), Err(Error::TooManyEdges { edges: 24, limit: 22 })));
    }

    #[test]
    fn star_monte_carlo_matches_expectation() {
        let model = DiffusionModel::Ic(star2(0.5));
        let est = model.estimate_spread(&[0], 10_000, 17).unwrap();
        // activated count = 1 + Bin(2, 0.5): variance 0.5 nodes^2
        let se = (0.5f64).sqrt() / 3.0 / 100.0;
        assert!((est.mean - 2.0 / 3.0).abs() <= 3.0 * se, "{est:?}");
    }

    #[test]
    fn spread_edge_cases() {
        let zero = DiffusionModel::Ic(IcInstance::from_directed(4, &[(0, 1, 0.0), (1, 0, 0.0)]).unwrap());
        let est = zero.estimate_spread(&[0, 3], 50, 1).unwrap();
        assert_eq!(est.mean, 0.5);
        assert_eq!(est.std, 0.0);
        let wlt = DiffusionModel::Wlt(wlt_fixture());
        let est = wlt.estimate_spread(&[0], 100, 1).unwrap();
        assert_eq!(est.std, 0.0);
        assert!(zero.estimate_spread(&[0], 0, 1).is_err());
    }

    #[test]
    fn ic_spread_is_independent_of_thread_count() {
        let g = SocialGraph::from_edges(30, &(0..29).map(|i| (i, i + 1)).collect::<Vec<_>>()).unwrap();
        let model = DiffusionModel::Ic(IcInstance::sample(&g, 3));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| model.estimate_spread(&[0, 10], 200, 8).unwrap());
        let b = four.install(|| model.estimate_spread(&[0, 10], 200, 8).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn generate_instances_contract() {
        let g = path3();
        let model = DiffusionModel::sample(ModelKind::Ic, &g, 1);
        let all = model.generate_instances(1.0, 1, 4).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].activated, vec![0, 1, 2]);
        assert_eq!(model.generate_instances(0.5, 30, 4).unwrap().len(), 30);
        assert!(model.generate_instances(0.5, 0, 4).is_err());
        assert!(model.generate_instances(0.0, 3, 4).is_err());
        assert!(model.generate_instances(1.5, 3, 4).is_err());
    }

    #[test]
    fn seed_count_rounds_up() {
        assert_eq!(seed_count(0.01, 2810).unwrap(), 29);
        assert_eq!(seed_count(0.05, 2000).unwrap(), 100);
        assert_eq!(seed_count(0.07, 100).unwrap(), 7);
        assert_eq!(seed_count(1.0, 5).unwrap(), 5);
    }

    #[test]
    fn instance_file_parsing() {
        let text = "# instance 0 seeds 3,1\n1 2\n2 4\n# instance 1 seeds 0\n";
        let got = read_instances(text.as_bytes()).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].seeds, vec![1, 3]);
        assert_eq!(got[0].activated, vec![1, 2, 3, 4]);
        assert_eq!(got[1].activated, vec![0]);
        assert!(matches!(read_instances("0 1\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn model_file_errors() {
        assert!(matches!(DiffusionModel::read("XX 3\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(DiffusionModel::read("IC 3\n0 1\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(DiffusionModel::read("WLT 2\nN 0 0.5\n".as_bytes()).is_err());
    }
}
