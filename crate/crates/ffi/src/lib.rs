//! C ABI over `him-core`.
//!
//! Objects are opaque handles created by `*_load` / `*_sample` / `*_train`
//! and released with the matching `*_free`. Every fallible call returns a
//! [`HimStatus`]; on failure, [`him_last_error`] gives a message for the
//! calling thread. Panics are caught at the boundary and reported as
//! `HIM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use him_core::diffusion::{DiffusionModel, ModelKind};
use him_core::embedding::{self, EmbeddingTable, Optimizer, RegSign, TrainConfig};
use him_core::selection;
use him_core::{rng, Error, SocialGraph};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    EmptyGraph = 5,
    NodeOutOfRange = 6,
    EmptySeedSet = 7,
    DimensionMismatch = 8,
    OddDimension = 9,
    CurvatureMismatch = 10,
    KOutOfRange = 11,
    TooManyEdges = 12,
    Diverged = 13,
    InvalidArgument = 14,
    BufferTooSmall = 15,
    Panic = 99,
}

impl From<&Error> for HimStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => HimStatus::Io,
            Error::Parse { .. } => HimStatus::Parse,
            Error::EmptyGraph { .. } => HimStatus::EmptyGraph,
            Error::NodeOutOfRange { .. } => HimStatus::NodeOutOfRange,
            Error::EmptySeedSet => HimStatus::EmptySeedSet,
            Error::DimensionMismatch { .. } => HimStatus::DimensionMismatch,
            Error::OddDimension(_) => HimStatus::OddDimension,
            Error::CurvatureMismatch { .. } => HimStatus::CurvatureMismatch,
            Error::KOutOfRange { .. } => HimStatus::KOutOfRange,
            Error::TooManyEdges { .. } => HimStatus::TooManyEdges,
            Error::Diverged { .. } => HimStatus::Diverged,
            Error::InvalidArgument(_) => HimStatus::InvalidArgument,
        }
    }
}

/// Diffusion model families.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HimModelKind {
    Ic = 0,
    Wlt = 1,
}

/// Seed selection methods.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HimMethod {
    /// Adaptive sliding window.
    Him = 0,
    /// Lowest distance to the origin.
    HimMd = 1,
    Degree = 2,
    Random = 3,
}

/// Training parameters. Start from [`him_train_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HimTrainConfig {
    pub dim: usize,
    pub gamma: f64,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub init_std: f64,
    /// Nonzero selects Adam, zero plain SGD.
    pub use_adam: u8,
    /// Nonzero keeps the regularizer sign that pushes activators outward.
    pub literal_reg: u8,
    pub seed: u64,
}

impl From<&HimTrainConfig> for TrainConfig {
    fn from(c: &HimTrainConfig) -> Self {
        TrainConfig {
            dim: c.dim,
            gamma: c.gamma,
            negatives: c.negatives,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            seed: c.seed,
            reg_sign: if c.literal_reg != 0 { RegSign::Literal } else { RegSign::PullToOrigin },
            init_std: c.init_std,
            optimizer: if c.use_adam != 0 { Optimizer::Adam } else { Optimizer::Sgd },
        }
    }
}

/// Opaque social graph.
pub struct HimGraph {
    inner: SocialGraph,
}

/// Opaque frozen diffusion model instance.
pub struct HimModel {
    inner: DiffusionModel,
}

/// Opaque embedding table.
pub struct HimEmbedding {
    inner: EmbeddingTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(HimStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(HimStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HimStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HimStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            HimStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HimStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn him_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn him_train_config_default() -> HimTrainConfig {
    let c = TrainConfig::default();
    HimTrainConfig {
        dim: c.dim,
        gamma: c.gamma,
        negatives: c.negatives,
        epochs: c.epochs,
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
        init_std: c.init_std,
        use_adam: u8::from(c.optimizer == Optimizer::Adam),
        literal_reg: u8::from(c.reg_sign == RegSign::Literal),
        seed: c.seed,
    }
}

// ---- graph ----

/// Loads an edge list.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_graph_load(path: *const c_char, out: *mut *mut HimGraph) -> HimStatus {
    guard(|| {
        let path = path_arg(path)?;
        let (g, _) = SocialGraph::load_edge_list(path)?;
        put(out, HimGraph { inner: g })
    })
}

/// Builds a graph on nodes `0..node_count` from `edge_count` pairs stored
/// as `[u0, v0, u1, v1, ...]`.
///
/// # Safety
/// `edges` must point to `2 * edge_count` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_graph_from_edges(
    node_count: usize,
    edges: *const usize,
    edge_count: usize,
    out: *mut *mut HimGraph,
) -> HimStatus {
    guard(|| {
        if edges.is_null() && edge_count > 0 {
            return Err(null("edges"));
        }
        let flat = if edge_count == 0 { &[][..] } else { std::slice::from_raw_parts(edges, 2 * edge_count) };
        let pairs: Vec<(usize, usize)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        put(out, HimGraph { inner: SocialGraph::from_edges(node_count, &pairs)? })
    })
}

/// # Safety
/// `graph` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn him_graph_free(graph: *mut HimGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Node count, or 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn him_graph_node_count(graph: *const HimGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.node_count())
}

/// Undirected edge count, or 0 for NULL.
///
/// # Safety
/// `graph` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn him_graph_edge_count(graph: *const HimGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.edge_count())
}

// ---- model ----

/// Draws a frozen model instance from stream `(model, 0)` of `seed`.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_model_sample(
    graph: *const HimGraph,
    kind: HimModelKind,
    seed: u64,
    out: *mut *mut HimModel,
) -> HimStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let kind = match kind {
            HimModelKind::Ic => ModelKind::Ic,
            HimModelKind::Wlt => ModelKind::Wlt,
        };
        let m = DiffusionModel::sample(kind, &g.inner, rng::derive_seed(seed, rng::MODEL, 0));
        put(out, HimModel { inner: m })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_model_load(path: *const c_char, out: *mut *mut HimModel) -> HimStatus {
    guard(|| {
        let path = path_arg(path)?;
        put(out, HimModel { inner: DiffusionModel::load(path)? })
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn him_model_save(model: *const HimModel, path: *const c_char) -> HimStatus {
    guard(|| {
        let m = handle(model, "model")?;
        Ok(m.inner.save(path_arg(path)?)?)
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn him_model_free(model: *mut HimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Monte Carlo spread ratio (fraction of nodes) of a seed set.
///
/// # Safety
/// `seeds` must point to `seed_count` values; `mean` and `std` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_estimate_spread(
    model: *const HimModel,
    seeds: *const usize,
    seed_count: usize,
    rounds: usize,
    seed: u64,
    mean: *mut f64,
    std: *mut f64,
) -> HimStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if seeds.is_null() && seed_count > 0 {
            return Err(null("seeds"));
        }
        let s = if seed_count == 0 { &[][..] } else { std::slice::from_raw_parts(seeds, seed_count) };
        let est = m.inner.estimate_spread(s, rounds, seed)?;
        write_out(mean, est.mean, "mean")?;
        if !std.is_null() {
            *std = est.std;
        }
        Ok(())
    })
}

// ---- embedding ----

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_embedding_load(path: *const c_char, out: *mut *mut HimEmbedding) -> HimStatus {
    guard(|| {
        let path = path_arg(path)?;
        put(out, HimEmbedding { inner: EmbeddingTable::load(path)? })
    })
}

/// # Safety
/// `embedding` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn him_embedding_save(embedding: *const HimEmbedding, path: *const c_char) -> HimStatus {
    guard(|| {
        let e = handle(embedding, "embedding")?;
        Ok(e.inner.save(path_arg(path)?)?)
    })
}

/// Trains an embedding. When `model` is non-NULL, `instance_count`
/// propagation instances are simulated from seed sets of size
/// `ceil(seed_ratio * |V|)` using the config seed; otherwise only the graph
/// structure is used.
///
/// # Safety
/// `graph` and `config` must be valid; `model` may be NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_embedding_train(
    graph: *const HimGraph,
    model: *const HimModel,
    seed_ratio: f64,
    instance_count: usize,
    config: *const HimTrainConfig,
    out: *mut *mut HimEmbedding,
) -> HimStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let config = TrainConfig::from(handle(config, "config")?);
        let instances = match model.as_ref() {
            Some(m) => {
                if m.inner.node_count() != g.inner.node_count() {
                    return Err(Error::DimensionMismatch {
                        left: m.inner.node_count(),
                        right: g.inner.node_count(),
                    }
                    .into());
                }
                m.inner.generate_instances(seed_ratio, instance_count, config.seed)?
            }
            None => Vec::new(),
        };
        put(out, HimEmbedding { inner: embedding::train(&g.inner, &instances, &config)? })
    })
}

/// # Safety
/// `embedding` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn him_embedding_free(embedding: *mut HimEmbedding) {
    if !embedding.is_null() {
        drop(Box::from_raw(embedding));
    }
}

/// Squared distance of `node` to the origin.
///
/// # Safety
/// `embedding` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn him_embedding_ldo(embedding: *const HimEmbedding, node: usize, out: *mut f64) -> HimStatus {
    guard(|| {
        let e = handle(embedding, "embedding")?;
        let n = e.inner.node_count();
        if node >= n {
            return Err(Error::NodeOutOfRange { node, node_count: n }.into());
        }
        write_out(out, e.inner.ldo(node), "out")
    })
}

// ---- selection ----

/// Picks `k` seeds into `out_seeds`, which must hold `out_capacity >= k`
/// values. `embedding` may be NULL for the degree and random methods. A
/// non-positive `beta` selects the size-based default. `seed` drives the
/// random method only.
///
/// # Safety
/// `graph` must be a live handle, `embedding` NULL or live, `out_seeds`
/// writable for `out_capacity` values.
#[no_mangle]
pub unsafe extern "C" fn him_select(
    graph: *const HimGraph,
    embedding: *const HimEmbedding,
    method: HimMethod,
    k: usize,
    beta: f64,
    seed: u64,
    out_seeds: *mut usize,
    out_capacity: usize,
) -> HimStatus {
    guard(|| {
        let g = &handle(graph, "graph")?.inner;
        if out_seeds.is_null() {
            return Err(null("out_seeds"));
        }
        if out_capacity < k {
            return Err(Fail(
                HimStatus::BufferTooSmall,
                format!("output holds {out_capacity} seeds, {k} requested"),
            ));
        }
        let table = || {
            embedding
                .as_ref()
                .map(|e| &e.inner)
                .ok_or_else(|| null("embedding"))
        };
        let result = match method {
            HimMethod::Him => {
                let beta = if beta > 0.0 { beta } else { selection::default_beta(g.node_count()) };
                selection::select_asw(g, table()?, k, beta)?
            }
            HimMethod::HimMd => {
                let t = table()?;
                if t.node_count() != g.node_count() {
                    return Err(Error::DimensionMismatch {
                        left: t.node_count(),
                        right: g.node_count(),
                    }
                    .into());
                }
                selection::select_him_md(t, k)?
            }
            HimMethod::Degree => selection::select_degree_topk(g, k)?,
            HimMethod::Random => selection::select_random(g, k, &mut rng::stream(seed, rng::SELECT, 0))?,
        };
        std::slice::from_raw_parts_mut(out_seeds, k).copy_from_slice(&result.seeds);
        Ok(())
    })
}
