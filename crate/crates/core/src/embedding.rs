//! Hyperbolic influence representation.
//!
//! Each node gets a point on the hyperboloid (stored as spatial coordinates)
//! and a scalar bias. Four block rotations orient head and tail nodes for the
//! social relation and for the propagation relation. The objective combines
//!
//! - a negative-sampling log-likelihood of every social edge, both directions;
//! - the same likelihood for every recorded activation `u -> v`, using the
//!   propagation rotations;
//! - a per-activation term `alpha_u * log sigmoid(sign * ldo(x_u))` with
//!   `alpha_u = sqrt(d_u / d_max)`.
//!
//! Edge score: `-w_uv * d2(Rot_head(x_u), Rot_tail(x_v)) + b_u + b_v` with
//! `w_uv = 1 / d_u` (social degree of `u`).
//!
//! Gradients are derived by hand; [`gradient_check`] compares them against
//! central finite differences.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, WeightedAliasIndex};

use crate::diffusion::{parse_field, write_file, PropagationInstance};
use crate::error::{Error, Result};
use crate::graph::{NodeId, SocialGraph};
use crate::lorentz::{self, LorentzPoint, RotationSet};
use crate::rng::{self, StreamRng};

const SIGMOID_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Structure,
    Propagation,
}

impl Relation {
    /// Indices of the (head, tail) rotation sets.
    fn rotations(self) -> (usize, usize) {
        match self {
            Relation::Structure => (0, 1),
            Relation::Propagation => (2, 3),
        }
    }
}

/// Direction of the activation regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegSign {
    /// `log sigmoid(-ldo)`: maximizing pulls activators toward the origin.
    PullToOrigin,
    /// `log sigmoid(+ldo)`, the literal printed form.
    Literal,
}

impl RegSign {
    fn factor(self) -> f64 {
        match self {
            RegSign::PullToOrigin => -1.0,
            RegSign::Literal => 1.0,
        }
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Lazy Adam: per-parameter adaptive steps on rows present in the batch.
    Adam,
    /// Plain gradient steps.
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        })
    }
}

/// Rotation tags used in the embedding file, in storage order.
pub const ROTATION_TAGS: [&str; 4] = ["SS", "ST", "DS", "DT"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub gamma: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub reg_sign: RegSign,
    pub init_std: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            gamma: lorentz::DEFAULT_GAMMA,
            negatives: 5,
            epochs: 30,
            learning_rate: 1e-2,
            batch_size: 256,
            seed: 0,
            reg_sign: RegSign::PullToOrigin,
            init_std: lorentz::DEFAULT_INIT_STD,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::OddDimension(self.dim));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init std must be positive, got {}", self.init_std));
        }
        Ok(())
    }
}

/// Trained (or initialized) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    gamma: f64,
    spatial: Vec<f64>,
    biases: Vec<f64>,
    rotations: [RotationSet; 4],
}

impl EmbeddingTable {
    /// All points at the origin, zero biases, identity rotations.
    pub fn zeros(node_count: usize, dim: usize, gamma: f64) -> Result<Self> {
        let rot = RotationSet::identity(dim)?;
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self {
            dim,
            gamma,
            spatial: vec![0.0; node_count * dim],
            biases: vec![0.0; node_count],
            rotations: [rot.clone(), rot.clone(), rot.clone(), rot],
        })
    }

    /// Wrapped-normal points, zero biases, identity rotations.
    pub fn init(node_count: usize, dim: usize, gamma: f64, std: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut t = Self::zeros(node_count, dim, gamma)?;
        for row in t.spatial.chunks_exact_mut(dim) {
            lorentz::wrapped_normal_fill(row, gamma, std, rng);
        }
        Ok(t)
    }

    /// Builds a table from explicit parameters.
    pub fn from_parts(
        dim: usize,
        gamma: f64,
        spatial: Vec<f64>,
        biases: Vec<f64>,
        rotations: [RotationSet; 4],
    ) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::OddDimension(dim));
        }
        if spatial.len() != biases.len() * dim {
            return Err(Error::DimensionMismatch {
                left: spatial.len(),
                right: biases.len() * dim,
            });
        }
        if let Some(r) = rotations.iter().find(|r| r.angles.len() * 2 != dim) {
            return Err(Error::DimensionMismatch {
                left: r.angles.len() * 2,
                right: dim,
            });
        }
        Ok(Self {
            dim,
            gamma,
            spatial,
            biases,
            rotations,
        })
    }

    pub fn node_count(&self) -> usize {
        self.biases.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn spatial(&self, u: NodeId) -> &[f64] {
        &self.spatial[u * self.dim..(u + 1) * self.dim]
    }

    pub fn spatial_mut(&mut self, u: NodeId) -> &mut [f64] {
        &mut self.spatial[u * self.dim..(u + 1) * self.dim]
    }

    pub fn point(&self, u: NodeId) -> LorentzPoint {
        LorentzPoint::new(self.spatial(u).to_vec(), self.gamma).expect("gamma validated")
    }

    pub fn bias(&self, u: NodeId) -> f64 {
        self.biases[u]
    }

    pub fn set_bias(&mut self, u: NodeId, b: f64) {
        self.biases[u] = b;
    }

    pub fn rotation(&self, i: usize) -> &RotationSet {
        &self.rotations[i]
    }

    pub fn rotation_mut(&mut self, i: usize) -> &mut RotationSet {
        &mut self.rotations[i]
    }

    pub fn ldo(&self, u: NodeId) -> f64 {
        lorentz::ldo_slice(self.spatial(u), self.gamma)
    }

    pub fn sq_dist(&self, u: NodeId, v: NodeId) -> f64 {
        lorentz::sq_dist_slices(self.spatial(u), self.spatial(v), self.gamma)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.spatial.len() + self.biases.len() + 4 * self.dim / 2
    }

    fn param(&self, i: usize) -> f64 {
        let (s, b) = (self.spatial.len(), self.biases.len());
        if i < s {
            self.spatial[i]
        } else if i < s + b {
            self.biases[i - s]
        } else {
            let j = i - s - b;
            self.rotations[j / (self.dim / 2)].angles[j % (self.dim / 2)]
        }
    }

    fn set_param(&mut self, i: usize, x: f64) {
        let (s, b) = (self.spatial.len(), self.biases.len());
        let half = self.dim / 2;
        if i < s {
            self.spatial[i] = x;
        } else if i < s + b {
            self.biases[i - s] = x;
        } else {
            let j = i - s - b;
            self.rotations[j / half].angles[j % half] = x;
        }
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "HIM-EMB {} {} {}", self.node_count(), self.dim, self.gamma)?;
        for u in 0..self.node_count() {
            write!(w, "{} {}", u, self.biases[u])?;
            for x in self.spatial(u) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        for (tag, rot) in ROTATION_TAGS.iter().zip(&self.rotations) {
            write!(w, "ROT {tag}")?;
            for a in &rot.angles {
                write!(w, " {a}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), |w| self.write(w))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let header = header.map_err(|e| Error::io("<embedding>", e))?;
        let mut h = header.split_whitespace();
        if h.next() != Some("HIM-EMB") {
            return Err(Error::parse(1, "expected \"HIM-EMB <nodes> <dim> <gamma>\""));
        }
        let n: usize = parse_field(h.next(), 1, "node count")?;
        let dim: usize = parse_field(h.next(), 1, "dimension")?;
        let gamma: f64 = parse_field(h.next(), 1, "gamma")?;
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::parse(1, format!("dimension {dim} must be even and positive")));
        }
        if !(gamma > 0.0) {
            return Err(Error::parse(1, format!("gamma {gamma} must be positive")));
        }
        let mut table = Self::zeros(n, dim, gamma)?;
        let mut seen = vec![false; n];
        let mut rot_seen = [false; 4];
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io("<embedding>", e))?;
            let mut t = line.split_whitespace();
            let Some(first) = t.next() else { continue };
            if first == "ROT" {
                let tag = t.next().unwrap_or_default();
                let r = ROTATION_TAGS
                    .iter()
                    .position(|x| *x == tag)
                    .ok_or_else(|| Error::parse(lineno, format!("unknown rotation tag {tag:?}")))?;
                let angles = t
                    .map(|x| parse_field(Some(x), lineno, "angle"))
                    .collect::<Result<Vec<f64>>>()?;
                if angles.len() != dim / 2 {
                    return Err(Error::parse(lineno, format!("expected {} angles, got {}", dim / 2, angles.len())));
                }
                table.rotations[r] = RotationSet::new(angles);
                rot_seen[r] = true;
                continue;
            }
            let u: usize = parse_field(Some(first), lineno, "node")?;
            if u >= n {
                return Err(Error::parse(lineno, format!("node {u} out of range")));
            }
            table.biases[u] = parse_field(t.next(), lineno, "bias")?;
            let row = table.spatial_mut(u);
            let mut count = 0;
            for (slot, tok) in row.iter_mut().zip(t.by_ref()) {
                *slot = parse_field(Some(tok), lineno, "coordinate")?;
                count += 1;
            }
            if count != dim || t.next().is_some() {
                return Err(Error::parse(lineno, format!("expected {dim} coordinates")));
            }
            seen[u] = true;
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(Error::parse(1, format!("missing row for node {u}")));
        }
        if let Some(r) = rot_seen.iter().position(|s| !s) {
            return Err(Error::parse(1, format!("missing rotation {}", ROTATION_TAGS[r])));
        }
        Ok(table)
    }
}

/// `sqrt(d_u / d_max)`.
pub fn influence_alpha(g: &SocialGraph, u: NodeId) -> f64 {
    if g.max_degree() == 0 {
        return 0.0;
    }
    (g.degree(u) as f64 / g.max_degree() as f64).sqrt()
}

/// `w_uv = 1 / d_u` with the social degree of `u`.
pub fn edge_weight(g: &SocialGraph, u: NodeId) -> f64 {
    1.0 / g.degree(u).max(1) as f64
}

#[inline]
fn log_sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `(-log sigmoid(z), d/dz)` with the clamp applied to the input.
#[inline]
fn neg_log_sigmoid_grad(z: f64) -> (f64, f64) {
    let loss = -log_sigmoid(z);
    let grad = if z.abs() <= SIGMOID_CLAMP {
        -1.0 / (1.0 + z.exp())
    } else {
        0.0
    };
    (loss, grad)
}

/// `-w * d2(Rot_head(x_u), Rot_tail(x_v)) + b_u + b_v`.
pub fn edge_score(table: &EmbeddingTable, u: NodeId, v: NodeId, relation: Relation, w: f64) -> f64 {
    let (h, t) = relation.rotations();
    let mut a = table.spatial(u).to_vec();
    let mut b = table.spatial(v).to_vec();
    lorentz::rotate_in_place(&table.rotations[h].angles, &mut a);
    lorentz::rotate_in_place(&table.rotations[t].angles, &mut b);
    -w * lorentz::sq_dist_slices(&a, &b, table.gamma) + table.biases[u] + table.biases[v]
}

/// Negative-sampling estimate of `log P(v | u)`.
pub fn log_edge_prob(
    table: &EmbeddingTable,
    u: NodeId,
    v: NodeId,
    negatives: &[NodeId],
    relation: Relation,
    w: f64,
) -> f64 {
    log_sigmoid(edge_score(table, u, v, relation, w))
        + negatives
            .iter()
            .map(|&o| log_sigmoid(-edge_score(table, u, o, relation, w)))
            .sum::<f64>()
}

/// Activation regularizer of one propagation instance (to be maximized).
pub fn influence_reg_term(
    table: &EmbeddingTable,
    instance: &PropagationInstance,
    g: &SocialGraph,
    sign: RegSign,
) -> f64 {
    instance
        .activations
        .iter()
        .map(|&(u, _)| influence_alpha(g, u) * log_sigmoid(sign.factor() * table.ldo(u)))
        .sum()
}

/// Draws negatives from the `degree^0.75` unigram distribution.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    alias: WeightedAliasIndex<f64>,
    weights: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(g: &SocialGraph) -> Result<Self> {
        let n = g.node_count();
        if n < 2 {
            return Err(Error::InvalidArgument("negative sampling needs at least two nodes".into()));
        }
        let mut weights: Vec<f64> = (0..n).map(|u| (g.degree(u) as f64).powf(0.75)).collect();
        if weights.iter().all(|&w| w == 0.0) {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let alias = WeightedAliasIndex::new(weights.clone())
            .map_err(|e| Error::InvalidArgument(format!("negative sampler: {e}")))?;
        Ok(Self { alias, weights })
    }

    /// Probability of drawing `u` before rejection.
    pub fn probability(&self, u: NodeId) -> f64 {
        self.weights[u] / self.weights.iter().sum::<f64>()
    }

    /// Appends `count` draws to `out`, rejecting `u` and `exclude`.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        u: NodeId,
        exclude: Option<NodeId>,
        count: usize,
        rng: &mut R,
        out: &mut Vec<NodeId>,
    ) -> Result<()> {
        let blocked = |x: NodeId| x == u || Some(x) == exclude;
        let any = self.weights.iter().enumerate().any(|(x, &w)| w > 0.0 && !blocked(x));
        if !any {
            return Err(Error::InvalidArgument(format!("no negative candidates for node {u}")));
        }
        let mut drawn = 0;
        while drawn < count {
            let x = self.alias.sample(rng);
            if !blocked(x) {
                out.push(x);
                drawn += 1;
            }
        }
        Ok(())
    }
}

/// `count` negatives for `u`, never `u` itself.
pub fn sample_negatives<R: Rng + ?Sized>(
    g: &SocialGraph,
    u: NodeId,
    count: usize,
    rng: &mut R,
) -> Result<Vec<NodeId>> {
    if count == 0 {
        return Err(Error::InvalidArgument("negative count must be at least 1".into()));
    }
    g.check(u)?;
    let mut out = Vec::with_capacity(count);
    NegativeSampler::new(g)?.sample_into(u, None, count, rng, &mut out)?;
    Ok(out)
}

/// One observed edge with its relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Positive {
    pub u: NodeId,
    pub v: NodeId,
    pub relation: Relation,
}

/// Structure edges in both orientations, then every activation of every instance.
pub fn positives(g: &SocialGraph, instances: &[PropagationInstance]) -> Vec<Positive> {
    let mut out: Vec<Positive> = g
        .directed_edges()
        .map(|(u, v)| Positive {
            u,
            v,
            relation: Relation::Structure,
        })
        .collect();
    for inst in instances {
        out.extend(inst.activations.iter().map(|&(u, v)| Positive {
            u,
            v,
            relation: Relation::Propagation,
        }));
    }
    out
}

/// Gradient of the rows written since the last clear, stored compactly in
/// write order so that a minibatch stays cache resident.
#[derive(Debug, Clone)]
pub struct Gradient {
    dim: usize,
    slot: Vec<u32>,
    touched: Vec<NodeId>,
    rows: Vec<f64>,
    biases: Vec<f64>,
    pub rotations: [Vec<f64>; 4],
}

const UNTOUCHED: u32 = u32::MAX;

impl Gradient {
    pub fn zeros_like(table: &EmbeddingTable) -> Self {
        let half = table.dim / 2;
        Self {
            dim: table.dim,
            slot: vec![UNTOUCHED; table.biases.len()],
            touched: Vec::new(),
            rows: Vec::new(),
            biases: Vec::new(),
            rotations: std::array::from_fn(|_| vec![0.0; half]),
        }
    }

    #[inline]
    fn slot(&mut self, u: NodeId) -> usize {
        let s = self.slot[u];
        if s != UNTOUCHED {
            return s as usize;
        }
        let s = self.touched.len();
        self.slot[u] = u32::try_from(s).expect("fewer than 2^32 rows per batch");
        self.touched.push(u);
        self.rows.resize(self.rows.len() + self.dim, 0.0);
        self.biases.push(0.0);
        s
    }

    #[inline]
    fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.rows[s * self.dim..(s + 1) * self.dim]
    }

    /// Spatial gradient of node `u`, zero if untouched.
    pub fn spatial(&self, u: NodeId) -> Option<&[f64]> {
        let s = self.slot[u];
        (s != UNTOUCHED).then(|| &self.rows[s as usize * self.dim..(s as usize + 1) * self.dim])
    }

    pub fn bias(&self, u: NodeId) -> f64 {
        let s = self.slot[u];
        if s == UNTOUCHED {
            0.0
        } else {
            self.biases[s as usize]
        }
    }

    /// Flattened in the same order as the table's parameter indexing.
    pub fn flat(&self) -> Vec<f64> {
        let n = self.slot.len();
        let mut out = vec![0.0; n * self.dim + n];
        for (s, &u) in self.touched.iter().enumerate() {
            out[u * self.dim..(u + 1) * self.dim].copy_from_slice(&self.rows[s * self.dim..(s + 1) * self.dim]);
            out[n * self.dim + u] = self.biases[s];
        }
        out.extend(self.rotations.iter().flatten());
        out
    }

    fn clear_touched(&mut self) {
        for &u in &self.touched {
            self.slot[u] = UNTOUCHED;
        }
        self.touched.clear();
        self.rows.clear();
        self.biases.clear();
        for r in &mut self.rotations {
            r.fill(0.0);
        }
    }
}

/// Per-call scratch space and cached `(sin, cos)` of the rotations.
struct Kernel {
    sincos: [Vec<(f64, f64)>; 4],
    head: Vec<f64>,
    tail: Vec<f64>,
}

impl Kernel {
    fn new(table: &EmbeddingTable) -> Self {
        Self {
            sincos: std::array::from_fn(|i| table.rotations[i].sincos()),
            head: vec![0.0; table.dim],
            tail: vec![0.0; table.dim],
        }
    }

    fn refresh(&mut self, table: &EmbeddingTable) {
        for (sc, rot) in self.sincos.iter_mut().zip(&table.rotations) {
            sc.clear();
            sc.extend(rot.angles.iter().map(|t| t.sin_cos()));
        }
    }

    /// Loss of one positive with its negatives, plus the activation
    /// regularizer when `reg` is `Some((alpha, sign))`. Adds gradients to
    /// `grad` when given.
    #[allow(clippy::too_many_arguments)]
    fn term(
        &mut self,
        table: &EmbeddingTable,
        p: Positive,
        w: f64,
        negatives: &[NodeId],
        reg: Option<(f64, f64)>,
        mut grad: Option<&mut Gradient>,
    ) -> f64 {
        let gamma = table.gamma;
        let dim = table.dim;
        let (h, t) = p.relation.rotations();
        let xu = table.spatial(p.u);
        let nu = lorentz::sq_norm(xu);
        let tu = (gamma + nu).sqrt();
        lorentz::rotate_with(&self.sincos[h], xu, &mut self.head);
        let mut loss = 0.0;

        let targets = std::iter::once((p.v, 1.0)).chain(negatives.iter().map(|&o| (o, -1.0)));
        for (target, sign) in targets {
            let xt = table.spatial(target);
            // tail = Rot_t x_t, with |x_t|^2 and |head - tail|^2 in the same pass
            let (mut nt, mut diff) = (0.0, 0.0);
            for (((o, x), hd), &(s, c)) in self
                .tail
                .chunks_exact_mut(2)
                .zip(xt.chunks_exact(2))
                .zip(self.head.chunks_exact(2))
                .zip(&self.sincos[t])
            {
                o[0] = c * x[0] - s * x[1];
                o[1] = s * x[0] + c * x[1];
                nt += x[0] * x[0] + x[1] * x[1];
                let (e0, e1) = (hd[0] - o[0], hd[1] - o[1]);
                diff += e0 * e0 + e1 * e1;
            }
            let tt = (gamma + nt).sqrt();
            let dt = (nu - nt) / (tu + tt);
            let d2 = (diff - dt * dt).max(0.0);
            let score = -w * d2 + table.biases[p.u] + table.biases[target];
            let (l, dl_dz) = neg_log_sigmoid_grad(sign * score);
            loss += l;
            let Some(g) = grad.as_deref_mut() else { continue };
            let dl_ds = sign * dl_dz;
            if dl_ds == 0.0 {
                continue;
            }
            let su = g.slot(p.u);
            let st = g.slot(target);
            g.biases[su] += dl_ds;
            g.biases[st] += dl_ds;
            if d2 <= 0.0 {
                continue;
            }
            let dl_dd = -w * dl_ds;

            // d(d2)/dx_u = 2 t_v / t_u * x_u - 2 Rot_h^T tail
            // d(d2)/d(theta_head) = -2 (a0 b1 - a1 b0), tail angle the negation
            let cu = dl_dd * 2.0 * tt / tu;
            let row = &mut g.rows[su * dim..(su + 1) * dim];
            for (i, (((gi, x), (hd, tl)), &(s, c))) in row
                .chunks_exact_mut(2)
                .zip(xu.chunks_exact(2))
                .zip(self.head.chunks_exact(2).zip(self.tail.chunks_exact(2)))
                .zip(&self.sincos[h])
                .enumerate()
            {
                let b0 = c * tl[0] + s * tl[1];
                let b1 = -s * tl[0] + c * tl[1];
                gi[0] += cu * x[0] - 2.0 * dl_dd * b0;
                gi[1] += cu * x[1] - 2.0 * dl_dd * b1;
                let cross = 2.0 * dl_dd * (hd[0] * tl[1] - hd[1] * tl[0]);
                g.rotations[h][i] -= cross;
                g.rotations[t][i] += cross;
            }
            // d(d2)/dx_v = 2 t_u / t_v * x_v - 2 Rot_t^T head
            let cv = dl_dd * 2.0 * tu / tt;
            let row = &mut g.rows[st * dim..(st + 1) * dim];
            for ((gi, x), (hd, &(s, c))) in row
                .chunks_exact_mut(2)
                .zip(xt.chunks_exact(2))
                .zip(self.head.chunks_exact(2).zip(&self.sincos[t]))
            {
                gi[0] += cv * x[0] - 2.0 * dl_dd * (c * hd[0] + s * hd[1]);
                gi[1] += cv * x[1] - 2.0 * dl_dd * (-s * hd[0] + c * hd[1]);
            }
        }

        if let Some((alpha, sign)) = reg {
            if alpha > 0.0 {
                let ldo = lorentz::ldo_slice(xu, gamma);
                let (l, dl_dz) = neg_log_sigmoid_grad(sign * ldo);
                loss += alpha * l;
                if let Some(g) = grad.as_deref_mut() {
                    let coef = alpha * dl_dz * sign * 2.0 * gamma.sqrt() / tu;
                    if coef != 0.0 {
                        let su = g.slot(p.u);
                        for (gi, &xi) in g.row_mut(su).iter_mut().zip(xu) {
                            *gi += coef * xi;
                        }
                    }
                }
            }
        }
        loss
    }
}

/// The full objective with its negatives drawn once, so that it can be
/// evaluated repeatedly (gradient checks, reporting).
#[derive(Debug, Clone)]
pub struct Objective {
    terms: Vec<(Positive, f64, Option<f64>)>,
    negatives: Vec<NodeId>,
    per_term: usize,
    sign: RegSign,
}

impl Objective {
    pub fn build<R: Rng + ?Sized>(
        g: &SocialGraph,
        instances: &[PropagationInstance],
        negatives: usize,
        sign: RegSign,
        rng: &mut R,
    ) -> Result<Self> {
        if negatives == 0 {
            return Err(Error::InvalidArgument("negatives must be at least 1".into()));
        }
        let sampler = NegativeSampler::new(g)?;
        let pos = positives(g, instances);
        let mut negs = Vec::with_capacity(pos.len() * negatives);
        let mut terms = Vec::with_capacity(pos.len());
        for p in pos {
            sampler.sample_into(p.u, Some(p.v), negatives, rng, &mut negs)?;
            let reg = (p.relation == Relation::Propagation).then(|| influence_alpha(g, p.u));
            terms.push((p, edge_weight(g, p.u), reg));
        }
        Ok(Self {
            terms,
            negatives: negs,
            per_term: negatives,
            sign,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn eval(&self, table: &EmbeddingTable, mut grad: Option<&mut Gradient>) -> f64 {
        let mut k = Kernel::new(table);
        let sign = self.sign.factor();
        self.terms
            .iter()
            .enumerate()
            .map(|(i, &(p, w, reg))| {
                let negs = &self.negatives[i * self.per_term..(i + 1) * self.per_term];
                k.term(table, p, w, negs, reg.map(|a| (a, sign)), grad.as_deref_mut())
            })
            .sum()
    }

    pub fn loss(&self, table: &EmbeddingTable) -> f64 {
        self.eval(table, None)
    }

    pub fn loss_and_gradient(&self, table: &EmbeddingTable) -> (f64, Gradient) {
        let mut g = Gradient::zeros_like(table);
        let loss = self.eval(table, Some(&mut g));
        (loss, g)
    }
}

/// Total loss with negatives drawn from `rng`.
pub fn total_loss<R: Rng + ?Sized>(
    table: &EmbeddingTable,
    g: &SocialGraph,
    instances: &[PropagationInstance],
    negatives: usize,
    sign: RegSign,
    rng: &mut R,
) -> Result<f64> {
    Ok(Objective::build(g, instances, negatives, sign, rng)?.loss(table))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub params_checked: usize,
}

/// Floor on the denominator of the relative error, so parameters whose
/// gradient is numerically zero are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of `objective` at `table` with central
/// finite differences of step `epsilon`. With `include_rotations == false`
/// the angles are left out of the comparison.
pub fn gradient_check(
    table: &EmbeddingTable,
    objective: &Objective,
    epsilon: f64,
    include_rotations: bool,
) -> GradCheck {
    let (_, grad) = objective.loss_and_gradient(table);
    let analytic = grad.flat();
    let count = if include_rotations {
        table.param_count()
    } else {
        table.spatial.len() + table.biases.len()
    };
    let mut probe = table.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..count {
        let x = table.param(i);
        probe.set_param(i, x + epsilon);
        let up = objective.loss(&probe);
        probe.set_param(i, x - epsilon);
        let down = objective.loss(&probe);
        probe.set_param(i, x);
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_param: worst.1,
        params_checked: count,
    }
}

/// Per-parameter first and second moment estimates.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m_spatial: Vec<f64>,
    v_spatial: Vec<f64>,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
    m_rot: [Vec<f64>; 4],
    v_rot: [Vec<f64>; 4],
    step: i32,
}

impl Adam {
    fn new(table: &EmbeddingTable, lr: f64) -> Self {
        let half = table.dim / 2;
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m_spatial: vec![0.0; table.spatial.len()],
            v_spatial: vec![0.0; table.spatial.len()],
            m_bias: vec![0.0; table.biases.len()],
            v_bias: vec![0.0; table.biases.len()],
            m_rot: std::array::from_fn(|_| vec![0.0; half]),
            v_rot: std::array::from_fn(|_| vec![0.0; half]),
            step: 0,
        }
    }

    /// Lazy update: only rows present in the batch gradient move.
    fn apply(&mut self, table: &mut EmbeddingTable, grad: &Gradient) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let update = |x: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        let dim = table.dim;
        for (s, &u) in grad.touched.iter().enumerate() {
            for j in 0..dim {
                let i = u * dim + j;
                let (x, m, v) = (&mut table.spatial[i], &mut self.m_spatial[i], &mut self.v_spatial[i]);
                update(x, m, v, grad.rows[s * dim + j]);
            }
            let (x, m, v) = (&mut table.biases[u], &mut self.m_bias[u], &mut self.v_bias[u]);
            update(x, m, v, grad.biases[s]);
        }
        for r in 0..4 {
            for i in 0..dim / 2 {
                let (x, m, v) = (
                    &mut table.rotations[r].angles[i],
                    &mut self.m_rot[r][i],
                    &mut self.v_rot[r][i],
                );
                update(x, m, v, grad.rotations[r][i]);
            }
        }
    }
}

/// Positives between a row prefetch and its use.
const PREFETCH_AHEAD: usize = 8;

/// Cache hint for a node's parameters; large tables are accessed at random.
#[inline]
fn prefetch_row(table: &EmbeddingTable, u: NodeId) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        for chunk in table.spatial(u).chunks(8) {
            // SAFETY: prefetch is a hint on a valid address and cannot fault.
            unsafe { _mm_prefetch(chunk.as_ptr().cast::<i8>(), _MM_HINT_T0) };
        }
        // SAFETY: as above.
        unsafe { _mm_prefetch((&table.biases[u] as *const f64).cast::<i8>(), _MM_HINT_T0) };
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = (table, u);
}

fn sgd_step(table: &mut EmbeddingTable, grad: &Gradient, lr: f64) {
    let dim = table.dim;
    for (s, &u) in grad.touched.iter().enumerate() {
        let g = &grad.rows[s * dim..(s + 1) * dim];
        for (x, gi) in table.spatial[u * dim..(u + 1) * dim].iter_mut().zip(g) {
            *x -= lr * gi;
        }
        table.biases[u] -= lr * grad.biases[s];
    }
    for (rot, g) in table.rotations.iter_mut().zip(&grad.rotations) {
        for (a, gi) in rot.angles.iter_mut().zip(g) {
            *a -= lr * gi;
        }
    }
}


#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Sum of minibatch losses over each epoch.
    pub epoch_losses: Vec<f64>,
    pub positives: usize,
}

pub fn train(g: &SocialGraph, instances: &[PropagationInstance], config: &TrainConfig) -> Result<EmbeddingTable> {
    train_with_report(g, instances, config).map(|(t, _)| t)
}

/// Minibatch SGD (or lazy Adam) over shuffled positives with fresh negatives per
/// positive and epoch. Single-threaded and deterministic given `config.seed`.
pub fn train_with_report(
    g: &SocialGraph,
    instances: &[PropagationInstance],
    config: &TrainConfig,
) -> Result<(EmbeddingTable, TrainReport)> {
    config.validate()?;
    let n = g.node_count();
    for inst in instances {
        for &(u, v) in &inst.activations {
            g.check(u)?;
            g.check(v)?;
        }
    }
    let mut rng: StreamRng = rng::stream(config.seed, rng::TRAIN, 0);
    let mut table = EmbeddingTable::init(n, config.dim, config.gamma, config.init_std, &mut rng)?;
    let sampler = NegativeSampler::new(g)?;
    let mut pos = positives(g, instances);
    let sign = config.reg_sign.factor();

    let mut adam = (config.optimizer == Optimizer::Adam).then(|| Adam::new(&table, config.learning_rate));
    let mut grad = Gradient::zeros_like(&table);
    let mut kernel = Kernel::new(&table);
    let mut negs = Vec::with_capacity(config.negatives * config.batch_size);
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(config.epochs),
        positives: pos.len(),
    };

    for epoch in 0..config.epochs {
        pos.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in pos.chunks(config.batch_size) {
            kernel.refresh(&table);
            negs.clear();
            for &p in batch {
                sampler.sample_into(p.u, Some(p.v), config.negatives, &mut rng, &mut negs)?;
            }
            let k = config.negatives;
            for (i, &p) in batch.iter().enumerate() {
                if let Some(q) = batch.get(i + PREFETCH_AHEAD) {
                    let j = i + PREFETCH_AHEAD;
                    for &u in [q.u, q.v].iter().chain(&negs[j * k..(j + 1) * k]) {
                        prefetch_row(&table, u);
                    }
                }
                let reg = (p.relation == Relation::Propagation).then(|| (influence_alpha(g, p.u), sign));
                epoch_loss += kernel.term(&table, p, edge_weight(g, p.u), &negs[i * k..(i + 1) * k], reg, Some(&mut grad));
            }
            match adam.as_mut() {
                Some(adam) => adam.apply(&mut table, &grad),
                None => sgd_step(&mut table, &grad, config.learning_rate),
            }
            grad.clear_touched();
        }
        if !epoch_loss.is_finite() || table.spatial.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { epoch, loss: epoch_loss });
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        report.epoch_losses.push(epoch_loss);
    }
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SocialGraph;

    fn path5() -> SocialGraph {
        SocialGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap()
    }

    fn two_point_table() -> EmbeddingTable {
        // spatial (1,0) and (0,1): d2 = 2
        EmbeddingTable::from_parts(
            2,
            1.0,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            std::array::from_fn(|_| RotationSet::identity(2).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn edge_score_examples() {
        let mut t = two_point_table();
        let s = edge_score(&t, 0, 1, Relation::Structure, 1.0);
        assert!((s + 2.0).abs() < 1e-12, "{s}");
        assert_eq!(edge_score(&t, 0, 0, Relation::Propagation, 1.0), 0.0);
        t.set_bias(0, 0.75);
        let shifted = edge_score(&t, 0, 1, Relation::Structure, 1.0);
        assert!((shifted - (s + 0.75)).abs() < 1e-12);
    }

    #[test]
    fn log_edge_prob_examples() {
        let t = EmbeddingTable::zeros(3, 2, 1.0).unwrap();
        let v = log_edge_prob(&t, 0, 1, &[2], Relation::Structure, 1.0);
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let mut t = two_point_table();
        t.set_bias(0, 1e3);
        t.set_bias(1, 1e3);
        // saturated positive, no meaningful negative: value approaches 0 from below
        let v = log_edge_prob(&t, 0, 1, &[], Relation::Structure, 1.0);
        assert!(v <= 0.0 && v > -1e-12, "{v}");
    }

    #[test]
    fn alpha_and_reg_examples() {
        // node 0 has degree 4, node 5 is a hub of degree 16
        let mut edges: Vec<(usize, usize)> = (1..=4).map(|v| (0, v)).collect();
        edges.extend((6..22).map(|v| (5, v)));
        let g = SocialGraph::from_edges(22, &edges).unwrap();
        assert_eq!(influence_alpha(&g, 0), 0.5);

        let t = EmbeddingTable::zeros(22, 2, 1.0).unwrap();
        let inst = PropagationInstance::from_activations(vec![0], vec![(0, 1)]);
        let r = influence_reg_term(&t, &inst, &g, RegSign::PullToOrigin);
        assert!((r - 0.5 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reg_increases_toward_origin() {
        let g = SocialGraph::from_edges(2, &[(0, 1)]).unwrap();
        let inst = PropagationInstance::from_activations(vec![0], vec![(0, 1)]);
        let mut prev = f64::NEG_INFINITY;
        for r in [3.0, 2.0, 1.0, 0.5, 0.1, 0.0] {
            let mut t = EmbeddingTable::zeros(2, 2, 1.0).unwrap();
            t.spatial_mut(0)[0] = r;
            let cur = influence_reg_term(&t, &inst, &g, RegSign::PullToOrigin);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn negatives_never_include_source() {
        let g = SocialGraph::from_edges(2, &[(0, 1)]).unwrap();
        let mut rng = rng::from_seed(1);
        assert_eq!(sample_negatives(&g, 0, 6, &mut rng).unwrap(), vec![1; 6]);
        let one = SocialGraph::from_edges(1, &[]).unwrap();
        assert!(sample_negatives(&one, 0, 1, &mut rng).is_err());
        let sampler = NegativeSampler::new(&g).unwrap();
        let mut out = Vec::new();
        assert!(sampler.sample_into(0, Some(1), 1, &mut rng, &mut out).is_err());

        let star = SocialGraph::from_edges(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2)]).unwrap();
        for u in 0..6 {
            let negs = sample_negatives(&star, u, 50, &mut rng).unwrap();
            assert!(!negs.contains(&u));
        }
    }

    #[test]
    fn empty_instances_reduce_to_structure() {
        let g = path5();
        let t = EmbeddingTable::init(5, 4, 1.0, 0.3, &mut rng::from_seed(2)).unwrap();
        let obj = Objective::build(&g, &[], 2, RegSign::PullToOrigin, &mut rng::from_seed(3)).unwrap();
        assert_eq!(obj.len(), 8);
        let mut manual = 0.0;
        let mut rng = rng::from_seed(3);
        let sampler = NegativeSampler::new(&g).unwrap();
        for (u, v) in g.directed_edges() {
            let mut negs = Vec::new();
            sampler.sample_into(u, Some(v), 2, &mut rng, &mut negs).unwrap();
            manual -= log_edge_prob(&t, u, v, &negs, Relation::Structure, edge_weight(&g, u));
        }
        assert!((obj.loss(&t) - manual).abs() < 1e-10);
    }

    #[test]
    fn duplicated_instance_adds_its_contribution() {
        let g = path5();
        let t = EmbeddingTable::init(5, 4, 1.0, 0.3, &mut rng::from_seed(2)).unwrap();
        let inst = PropagationInstance::from_activations(vec![1], vec![(1, 2), (2, 3)]);
        let obj = Objective::build(&g, &[inst.clone(), inst], 2, RegSign::PullToOrigin, &mut rng::from_seed(5)).unwrap();
        assert_eq!(obj.len(), 8 + 2 + 2);
        let per = obj.per_term;
        let negs = |i: usize| &obj.negatives[i * per..(i + 1) * per];
        let mut expected = 0.0;
        for (i, &(p, w, _)) in obj.terms.iter().enumerate() {
            expected -= log_edge_prob(&t, p.u, p.v, negs(i), p.relation, w);
        }
        let one_copy = PropagationInstance::from_activations(vec![1], vec![(1, 2), (2, 3)]);
        expected -= 2.0 * influence_reg_term(&t, &one_copy, &g, RegSign::PullToOrigin);
        assert!((obj.loss(&t) - expected).abs() < 1e-10);
    }

    #[test]
    fn loss_is_finite_for_extreme_parameters() {
        let g = path5();
        let mut t = EmbeddingTable::init(5, 4, 1.0, 0.3, &mut rng::from_seed(2)).unwrap();
        t.spatial_mut(0)[0] = 1e6;
        t.set_bias(3, -1e8);
        let inst = PropagationInstance::from_activations(vec![0], vec![(0, 1)]);
        let l = total_loss(&t, &g, &[inst], 5, RegSign::PullToOrigin, &mut rng::from_seed(1)).unwrap();
        assert!(l.is_finite());
    }

    fn randomized_table(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = rng::from_seed(seed);
        let mut t = EmbeddingTable::init(n, dim, 1.0, 0.5, &mut rng).unwrap();
        for u in 0..n {
            t.set_bias(u, rng.gen_range(-0.5..0.5));
        }
        for r in 0..4 {
            for a in &mut t.rotation_mut(r).angles {
                *a = rng.gen_range(-3.0..3.0);
            }
        }
        t
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = path5();
        let inst = PropagationInstance::from_activations(vec![0], vec![(0, 1), (1, 2)]);
        let t = randomized_table(5, 4, 9);
        let obj = Objective::build(&g, &[inst], 3, RegSign::PullToOrigin, &mut rng::from_seed(4)).unwrap();
        let check = gradient_check(&t, &obj, 1e-5, true);
        assert_eq!(check.params_checked, t.param_count());
        assert!(check.max_rel_error < 1e-4, "{check:?}");

        let literal = Objective::build(&g, &[], 3, RegSign::Literal, &mut rng::from_seed(4)).unwrap();
        let check = gradient_check(&t, &literal, 1e-5, true);
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    #[test]
    fn training_is_deterministic_and_keeps_points_on_manifold() {
        let g = path5();
        let inst = PropagationInstance::from_activations(vec![2], vec![(2, 1), (2, 3)]);
        let cfg = TrainConfig {
            dim: 4,
            epochs: 5,
            batch_size: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train(&g, &[inst.clone()], &cfg).unwrap();
        let b = train(&g, &[inst], &cfg).unwrap();
        assert_eq!(a, b);
        for u in 0..5 {
            let p = a.point(u);
            let ip = lorentz::lorentz_inner(&p, &p).unwrap();
            assert!((ip + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        let g = path5();
        let bad = [
            TrainConfig { dim: 3, ..TrainConfig::default() },
            TrainConfig { negatives: 0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
        ];
        for cfg in bad {
            assert!(train(&g, &[], &cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn embedding_file_round_trip() {
        let t = randomized_table(4, 6, 3);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("HIM-EMB 4 6 1\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("ROT ")).count(), 4);
        assert_eq!(EmbeddingTable::read(buf.as_slice()).unwrap(), t);
        assert!(EmbeddingTable::read("HIM-EMB 1 2 1\n0 0 0\n".as_bytes()).is_err());
    }
}
