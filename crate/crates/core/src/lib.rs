//! Influence maximization with unknown diffusion parameters.
//!
//! Nodes of a social graph are embedded in the Lorentz model of hyperbolic
//! space from the graph structure and from recorded propagation instances.
//! Distance to the origin then ranks nodes by influence, and seed sets are
//! picked from that ranking.
//!
//! - [`graph`]: edge-list loading and the CSR social graph
//! - [`diffusion`]: IC / WLT instances, simulation, spread estimation
//! - [`lorentz`]: hyperboloid geometry kernel
//! - [`embedding`]: the training objective and optimizer
//! - [`selection`]: lowest-distance and sliding-window seed selection
//! - [`cli`]: the `him` command-line driver

pub mod cli;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod lorentz;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod synth;

pub use diffusion::{DiffusionModel, IcInstance, ModelKind, PropagationInstance, SpreadEstimate, WltInstance};

pub use embedding::{EmbeddingTable, TrainConfig};
pub use error::{Error, Result};
pub use graph::{NodeId, SocialGraph};
pub use lorentz::{LorentzPoint, RotationSet};
pub use selection::{Method, SelectionResult};

