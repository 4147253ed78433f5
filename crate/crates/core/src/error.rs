use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension error in {context}: {detail}")]
    Dimension {
        context: &'static str,
        detail: String,
    },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is singular (pivot {pivot:.3e} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,

    #[error("topology error: follower {node} has {in_degree} in-neighbors (exactly one required)")]
    TopologyShape { node: usize, in_degree: usize },

    #[error("topology error: {0}")]
    InvalidTopology(String),

    #[error("no spanning tree rooted at the leader: node {node} is unreachable or on a cycle")]
    NoSpanningTree { node: usize },

    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),

    #[error("feedforward infeasible for agent {agent} (parent {parent}): {reason}")]
    FeedforwardInfeasible {
        agent: usize,
        parent: usize,
        reason: String,
    },

    #[error("Riccati iteration for block {block} did not converge (pair not stabilizable?) after {iterations} iterations")]
    NonStabilizable { block: usize, iterations: usize },

    #[error("R + B'PB is singular for block {block}")]
    Conditioning { block: usize },

    #[error("observer synthesis failed: best spectral radius of A_c is {best_rho:.6}")]
    ObserverSynthesisFailed { best_rho: f64 },

    #[error("closed loop is not stable (spectral radius {rho:.6})")]
    Unstable { rho: f64 },

    #[error("start index {start} is beyond the horizon {horizon}")]
    Range { start: usize, horizon: usize },

    #[error("regulator equations infeasible for agent {agent}: residual {residual:.3e}")]
    RegulatorInfeasible { agent: usize, residual: f64 },

    #[error("baseline leader observer unstable (rho {rho:.6} at mu {mu:.4}); choose a different coupling gain")]
    BaselineUnstable { rho: f64, mu: f64 },

    #[error("contract violation: {0}")]
    Contract(String),
}

/// Scenario validation failures. Agent indices are 1-based (node 0 is the leader).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("topology has {nodes} nodes but {agents} agents were given")]
    AgentCount { nodes: usize, agents: usize },

    #[error("agent {agent}: A is {rows}x{cols}, expected square")]
    StateMatrixNotSquare {
        agent: usize,
        rows: usize,
        cols: usize,
    },

    #[error("agent {agent}: B has {rows} rows, expected {expected}")]
    InputMatrixRows {
        agent: usize,
        rows: usize,
        expected: usize,
    },

    #[error("agent {agent}: state dimension {found} differs from the common dimension {expected}")]
    StateDimension {
        agent: usize,
        found: usize,
        expected: usize,
    },

    #[error("agent {agent}: output matrix C is required in output-consensus mode")]
    MissingOutputMatrix { agent: usize },

    #[error("agent {agent}: C is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    OutputMatrixShape {
        agent: usize,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("leader: A0 is {rows}x{cols}, expected square")]
    LeaderNotSquare { rows: usize, cols: usize },

    #[error(
        "leader: state dimension {found} differs from the agent dimension {expected} in state mode"
    )]
    LeaderDimension { found: usize, expected: usize },

    #[error("leader: C0 is required in output-consensus mode")]
    MissingLeaderOutput,

    #[error("leader: C0 is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    LeaderOutputShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("leader: C0 must be absent in state-consensus mode")]
    UnexpectedLeaderOutput,

    #[error("leader: initial state has length {found}, expected {expected}")]
    LeaderInitialState { found: usize, expected: usize },

    #[error("Q is {rows}x{cols}, expected {expected}x{expected}")]
    WeightShape {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("Q is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    WeightNotSemidefinite { min_eigenvalue: f64 },

    #[error("Q is not symmetric")]
    WeightNotSymmetric,

    #[error("{found} input weights R_i given for {expected} agents")]
    InputWeightCount { found: usize, expected: usize },

    #[error("agent {agent}: R is {rows}x{cols}, expected {expected}x{expected}")]
    InputWeightShape {
        agent: usize,
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("agent {agent}: R is not symmetric positive definite")]
    InputWeightNotDefinite { agent: usize },

    #[error("{found} initial states given for {expected} agents")]
    InitialStateCount { found: usize, expected: usize },

    #[error("agent {agent}: initial state has length {found}, expected {expected}")]
    InitialStateLength {
        agent: usize,
        found: usize,
        expected: usize,
    },

    #[error("agent {agent}: non-finite value in {field}")]
    NonFinite { agent: usize, field: &'static str },
}
