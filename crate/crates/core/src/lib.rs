//! Synaptic kernel inverse method (SKIM).
//!
//! Spiking networks that recognise spatio-temporal spike patterns are built
//! by projecting input spikes through fixed random synapses and nonlinear
//! synaptic kernels onto dendritic potentials, then solving the dendrite to
//! soma weights by linear least squares.

pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod network;
pub mod patterns;
pub mod protocol;
pub mod pruning;
pub mod rng;
pub mod solver;
pub mod train;

pub use error::{Result, SkimError};
pub use eval::{ConfusionCounts, ErrorScore};
pub use kernel::{KernelFamily, KernelKind, KernelSpec, ParamRange};
pub use network::{
    ActivationMatrix, ForwardTrace, NetworkParams, SimOptions, SkimNetwork, SpikeRaster,
};
pub use patterns::{EmbeddedPatternTask, EmbeddedTaskParams, LabeledRasterSet};
pub use pruning::PruneReport;
pub use solver::{OnlineSolverState, TargetSignal};
pub use train::{SolveOptions, SolverKind, TrainingSet};
