//! Feedforward plus LQ-optimal distributed consensus for heterogeneous
//! discrete-time multi-agent systems: synthesis, simulation, and a
//! leader-observer baseline for comparison.

#![allow(clippy::needless_range_loop)]

pub mod baseline;
pub mod error;
pub mod graph;
pub mod matstack;
pub mod model;
pub mod scenarios;
pub mod sim;
pub mod synthesis;
pub mod verify;

pub use baseline::{BaselineDesign, ComparisonReport, LeaderEstimateInit, RegulatorSolution};
pub use error::{Error, Result, ValidationError};
pub use graph::{build_selectors, validate_spanning_tree, Edge, ParentMap, Topology};
pub use matstack::Mat;
pub use model::{AgentModel, LeaderModel, Mode, ObserverInit, Scenario, Tolerances, Weights};
pub use sim::{ConvergenceMetrics, CostReport, SimOptions, SimulationTrace, StepRecord, TraceKind};
pub use synthesis::{ErrorStack, FeedforwardLaw, SynthesisResult};
pub use verify::Check;
