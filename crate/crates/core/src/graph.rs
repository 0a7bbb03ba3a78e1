//! Undirected social graph in compressed sparse row form.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Undirected simple graph with dense node ids `0..node_count`.
///
/// Neighbor lists are sorted ascending. Original labels from the input file
/// are kept in `labels`, indexed by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialGraph {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    labels: Vec<String>,
    max_degree: usize,
}

/// What `load_edge_list` dropped while building the graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub self_loops: usize,
    pub duplicates: usize,
}

impl SocialGraph {
    /// Builds a graph on `node_count` nodes labelled by their ids.
    ///
    /// Edges are symmetrized; duplicates and self-loops are dropped.
    pub fn from_edges(node_count: usize, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidArgument("graph needs at least one node".into()));
        }
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= node_count {
                    return Err(Error::NodeOutOfRange { node: x, node_count });
                }
            }
        }
        let labels = (0..node_count).map(|i| i.to_string()).collect();
        Ok(Self::build(node_count, edges.iter().copied(), labels).0)
    }

    fn build(
        node_count: usize,
        edges: impl Iterator<Item = (NodeId, NodeId)>,
        labels: Vec<String>,
    ) -> (Self, usize, usize) {
        let mut self_loops = 0;
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
        for (u, v) in edges {
            if u == v {
                self_loops += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        let duplicates = before - pairs.len();

        let mut degree = vec![0usize; node_count];
        for &(u, v) in &pairs {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..node_count].to_vec();
        let mut targets = vec![0; offsets[node_count]];
        // pairs are sorted by (min, max), so each list fills in ascending order
        // for the "max" side; the "min" side needs a sort afterwards.
        for &(u, v) in &pairs {
            targets[fill[u]] = v;
            fill[u] += 1;
            targets[fill[v]] = u;
            fill[v] += 1;
        }
        for u in 0..node_count {
            targets[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        let max_degree = degree.iter().copied().max().unwrap_or(0);
        (
            Self {
                offsets,
                targets,
                labels,
                max_degree,
            },
            self_loops,
            duplicates,
        )
    }

    pub fn load_edge_list(path: impl AsRef<Path>) -> Result<(Self, LoadReport)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_edge_list(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    /// Parses the edge-list text format: `u v` per line, `#` comments.
    ///
    /// Labels may be arbitrary tokens. Ids are assigned in sorted label
    /// order (numeric order when every label is an integer), so the
    /// canonical serialization reloads to an identical graph.
    pub fn read_edge_list(reader: impl BufRead) -> Result<(Self, LoadReport)> {
        let mut raw: Vec<(String, String)> = Vec::new();
        let mut report = LoadReport::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<edge list>", e))?;
            let lineno = i + 1;
            report.lines = lineno;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut tokens = trimmed.split_whitespace();
            let (Some(u), Some(v)) = (tokens.next(), tokens.next()) else {
                return Err(Error::parse(lineno, format!("expected two tokens, got {trimmed:?}")));
            };
            if tokens.next().is_some() {
                return Err(Error::parse(lineno, format!("expected two tokens, got {trimmed:?}")));
            }
            raw.push((u.to_owned(), v.to_owned()));
        }

        // Nodes that only occur in self-loops never enter the graph.
        let mut names: Vec<&str> = raw
            .iter()
            .filter(|(u, v)| u != v)
            .flat_map(|(u, v)| [u.as_str(), v.as_str()])
            .collect();
        if names.is_empty() {
            return Err(Error::EmptyGraph {
                self_loops: raw.len(),
            });
        }
        let numeric: Option<Vec<i128>> = names.iter().map(|s| s.parse::<i128>().ok()).collect();
        match numeric {
            Some(_) => names.sort_unstable_by_key(|s| (s.parse::<i128>().unwrap(), *s)),
            None => names.sort_unstable(),
        }
        names.dedup();
        let ids: HashMap<&str, NodeId> = names.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let labels: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let node_count = labels.len();

        let edges = raw.iter().map(|(u, v)| {
            let iu = ids.get(u.as_str()).copied();
            let iv = ids.get(v.as_str()).copied();
            // a self-loop on a node absent from `ids` maps to an arbitrary loop
            match (iu, iv) {
                (Some(a), Some(b)) => (a, b),
                _ => (0, 0),
            }
        });
        let (graph, self_loops, duplicates) = Self::build(node_count, edges, labels);
        report.self_loops = self_loops;
        report.duplicates = duplicates;
        Ok((graph, report))
    }

    /// Canonical edge list: one `label label` line per undirected edge, smaller id first.
    pub fn write_edge_list(&self, mut w: impl Write) -> std::io::Result<()> {
        for (u, v) in self.edges() {
            writeln!(w, "{}\t{}", self.labels[u], self.labels[v])?;
        }
        Ok(())
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_edge_list(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Writes the `id<TAB>label` side map.
    pub fn write_labels(&self, mut w: impl Write) -> std::io::Result<()> {
        for (id, label) in self.labels.iter().enumerate() {
            writeln!(w, "{id}\t{label}")?;
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Number of directed edges after symmetrization (twice the edge count).
    pub fn directed_edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, u: NodeId) -> &str {
        &self.labels[u]
    }

    pub fn neighbors(&self, u: NodeId) -> Result<&[NodeId]> {
        self.check(u)?;
        Ok(self.adj(u))
    }

    /// Unchecked neighbor slice; panics if `u` is out of range.
    #[inline]
    pub fn adj(&self, u: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: NodeId) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    /// Position of `u`'s first neighbor in the flat directed-edge array.
    #[inline]
    pub fn edge_offset(&self, u: NodeId) -> usize {
        self.offsets[u]
    }

    pub fn contains_edge(&self, u: NodeId, v: NodeId) -> bool {
        u < self.node_count() && v < self.node_count() && self.adj(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.node_count())
            .flat_map(move |u| self.adj(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Directed edges `(u, v)` in CSR order; both orientations of every edge.
    pub fn directed_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.node_count()).flat_map(move |u| self.adj(u).iter().map(move |&v| (u, v)))
    }

    pub fn check(&self, u: NodeId) -> Result<()> {
        if u < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                node: u,
                node_count: self.node_count(),
            })
        }
    }
}
