//! Problem data: follower and leader dynamics, weights, initial conditions,
//! and the cross-checks that tie them to the topology.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ValidationError};
use crate::graph::{validate_spanning_tree, ParentMap, Topology};
use crate::matstack::{is_positive_definite, is_positive_semidefinite, symmetric_eigenvalues, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Followers track the leader state; all state dimensions agree.
    #[default]
    State,
    /// Followers track the leader output; state dimensions may differ.
    Output,
}

/// `x_i(k+1) = A x_i(k) + B u_i(k)`, `y_i = C x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub a: Mat,
    pub b: Mat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Mat>,
}

impl AgentModel {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }
}

/// Autonomous leader `x_0(k+1) = A_0 x_0(k)`, `y_0 = C_0 x_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderModel {
    pub a0: Mat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<Mat>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// Pairwise error weight, shared by all pairs.
    pub q: Mat,
    /// Per-agent input weights.
    pub r: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObserverInit {
    /// `Ê_i(0) = 0`.
    #[default]
    Zero,
    /// `Ê_i(0) = E(0)`.
    True,
    /// `Ê_i(0) = E(0) + scale·ξ` with ξ uniform in [-1, 1].
    Perturbed { scale: f64, seed: u64 },
}

/// Numerical knobs. Defaults are the documented tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Riccati value iteration stops when `‖P⁺ − P‖ ≤ dare_tol·(1 + ‖P‖)`.
    pub dare_tol: f64,
    pub dare_max_iters: usize,
    /// Observer-gain pattern search restarts (the unperturbed start counts as one).
    pub observer_restarts: usize,
    /// Objective evaluations allowed per restart.
    pub observer_max_evals: usize,
    /// Consensus is declared once `max_i ‖x_i − x_0‖` stays below
    /// `consensus_threshold·max(1, ‖x_0(0)‖)`.
    pub consensus_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            dare_tol: 1e-12,
            dare_max_iters: 10_000,
            observer_restarts: 4,
            observer_max_evals: 20_000,
            consensus_threshold: 1e-2,
        }
    }
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    pub topology: Topology,
    pub agents: Vec<AgentModel>,
    pub leader: LeaderModel,
    pub weights: Weights,
    pub initial_states: Vec<Vec<f64>>,
    pub horizon: usize,
    #[serde(default)]
    pub observer_init: ObserverInit,
    #[serde(default = "default_seed")]
    pub optimizer_seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Scenario {
    pub fn follower_count(&self) -> usize {
        self.agents.len()
    }

    /// Output dimension `q` in output mode, state dimension `n` in state mode.
    pub fn block_dim(&self) -> usize {
        match self.mode {
            Mode::State => self.leader.a0.rows(),
            Mode::Output => self.leader.c0.as_ref().map_or(0, Mat::rows),
        }
    }

    /// Output map of follower `i` (1-based); identity in state mode.
    pub fn output_matrix(&self, i: usize) -> Mat {
        let agent = &self.agents[i - 1];
        match (self.mode, &agent.c) {
            (Mode::Output, Some(c)) => c.clone(),
            _ => Mat::identity(agent.state_dim()),
        }
    }

    pub fn leader_output_matrix(&self) -> Mat {
        match (self.mode, &self.leader.c0) {
            (Mode::Output, Some(c)) => c.clone(),
            _ => Mat::identity(self.leader.a0.rows()),
        }
    }

    /// Verifies every structural invariant and returns the parent map.
    pub fn validate(&self) -> Result<ParentMap> {
        let pm = validate_spanning_tree(&self.topology)?;
        let n_agents = self.agents.len();
        if self.topology.follower_count() != n_agents {
            return Err(ValidationError::AgentCount {
                nodes: self.topology.node_count(),
                agents: n_agents,
            }
            .into());
        }
        let a0 = &self.leader.a0;
        if !a0.is_square() {
            return Err(ValidationError::LeaderNotSquare {
                rows: a0.rows(),
                cols: a0.cols(),
            }
            .into());
        }
        let p = a0.rows();
        if self.leader.x0.len() != p {
            return Err(ValidationError::LeaderInitialState {
                found: self.leader.x0.len(),
                expected: p,
            }
            .into());
        }
        if self.leader.x0.iter().any(|v| !v.is_finite()) {
            return Err(ValidationError::NonFinite {
                agent: 0,
                field: "x0",
            }
            .into());
        }
        for (idx, ag) in self.agents.iter().enumerate() {
            let agent = idx + 1;
            if !ag.a.is_square() {
                return Err(ValidationError::StateMatrixNotSquare {
                    agent,
                    rows: ag.a.rows(),
                    cols: ag.a.cols(),
                }
                .into());
            }
            if ag.b.rows() != ag.a.rows() {
                return Err(ValidationError::InputMatrixRows {
                    agent,
                    rows: ag.b.rows(),
                    expected: ag.a.rows(),
                }
                .into());
            }
        }
        let q_dim = match self.mode {
            Mode::State => {
                for (idx, ag) in self.agents.iter().enumerate() {
                    if ag.state_dim() != p {
                        return Err(ValidationError::StateDimension {
                            agent: idx + 1,
                            found: ag.state_dim(),
                            expected: p,
                        }
                        .into());
                    }
                }
                if self.leader.c0.is_some() {
                    return Err(ValidationError::UnexpectedLeaderOutput.into());
                }
                p
            }
            Mode::Output => {
                let c0 = self
                    .leader
                    .c0
                    .as_ref()
                    .ok_or(ValidationError::MissingLeaderOutput)?;
                let q = c0.rows();
                if c0.cols() != p || q == 0 {
                    return Err(ValidationError::LeaderOutputShape {
                        rows: c0.rows(),
                        cols: c0.cols(),
                        expected_rows: q.max(1),
                        expected_cols: p,
                    }
                    .into());
                }
                for (idx, ag) in self.agents.iter().enumerate() {
                    let c =
                        ag.c.as_ref()
                            .ok_or(ValidationError::MissingOutputMatrix { agent: idx + 1 })?;
                    if c.rows() != q || c.cols() != ag.state_dim() {
                        return Err(ValidationError::OutputMatrixShape {
                            agent: idx + 1,
                            rows: c.rows(),
                            cols: c.cols(),
                            expected_rows: q,
                            expected_cols: ag.state_dim(),
                        }
                        .into());
                    }
                }
                q
            }
        };
        let qm = &self.weights.q;
        if qm.shape() != (q_dim, q_dim) {
            return Err(ValidationError::WeightShape {
                rows: qm.rows(),
                cols: qm.cols(),
                expected: q_dim,
            }
            .into());
        }
        if crate::matstack::check_symmetric(qm).is_err() {
            return Err(ValidationError::WeightNotSymmetric.into());
        }
        if !is_positive_semidefinite(qm)? {
            let min_eigenvalue = symmetric_eigenvalues(qm)?.first().copied().unwrap_or(0.0);
            return Err(ValidationError::WeightNotSemidefinite { min_eigenvalue }.into());
        }
        if self.weights.r.len() != n_agents {
            return Err(ValidationError::InputWeightCount {
                found: self.weights.r.len(),
                expected: n_agents,
            }
            .into());
        }
        for (idx, (r, ag)) in self.weights.r.iter().zip(&self.agents).enumerate() {
            let m = ag.input_dim();
            if r.shape() != (m, m) {
                return Err(ValidationError::InputWeightShape {
                    agent: idx + 1,
                    rows: r.rows(),
                    cols: r.cols(),
                    expected: m,
                }
                .into());
            }
            if !matches!(is_positive_definite(r), Ok(true)) {
                return Err(ValidationError::InputWeightNotDefinite { agent: idx + 1 }.into());
            }
        }
        if self.initial_states.len() != n_agents {
            return Err(ValidationError::InitialStateCount {
                found: self.initial_states.len(),
                expected: n_agents,
            }
            .into());
        }
        for (idx, (x, ag)) in self.initial_states.iter().zip(&self.agents).enumerate() {
            if x.len() != ag.state_dim() {
                return Err(ValidationError::InitialStateLength {
                    agent: idx + 1,
                    found: x.len(),
                    expected: ag.state_dim(),
                }
                .into());
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(ValidationError::NonFinite {
                    agent: idx + 1,
                    field: "initial_states",
                }
                .into());
            }
        }
        Ok(pm)
    }

    /// All followers share `(A, B)` and `A` equals the leader's `A_0`.
    pub fn is_homogeneous(&self) -> bool {
        let Some(first) = self.agents.first() else {
            return false;
        };
        self.agents.iter().all(|a| a.a == first.a && a.b == first.b) && first.a == self.leader.a0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
