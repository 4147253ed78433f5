//! Built-in problem instances used by the tests, benches and shipped example files.

use crate::graph::Topology;
use crate::matstack::Mat;
use crate::model::{AgentModel, LeaderModel, Mode, ObserverInit, Scenario, Tolerances, Weights};

fn m<const C: usize>(rows: &[[f64; C]]) -> Mat {
    Mat::from_rows(rows).expect("static matrix is well formed")
}

/// Discrete rotation generator `[[cos θ, sin θ], [−sin θ, cos θ]]`.
pub fn rotation(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    m(&[[c, s], [-s, c]])
}

/// Three heterogeneous second-order followers on a chain behind a
/// sinusoidal leader, `Q = R_i = I₂`.
pub fn reference() -> Scenario {
    let agents = vec![
        AgentModel {
            a: m(&[[1.1, 1.0], [-2.0, 1.0]]),
            b: m(&[[0.0, 1.0], [0.4, 0.2]]),
            c: None,
        },
        AgentModel {
            a: m(&[[-2.0, 1.0], [1.0, -1.0]]),
            b: m(&[[0.1, 0.2], [1.0, 0.5]]),
            c: None,
        },
        AgentModel {
            a: m(&[[0.5, 0.0], [-2.0, -0.6]]),
            b: m(&[[0.2, 0.0], [0.1, 1.0]]),
            c: None,
        },
    ];
    Scenario {
        name: Some("paper_sec4".into()),
        mode: Mode::State,
        topology: Topology::chain(3).expect("chain"),
        agents,
        leader: LeaderModel {
            a0: rotation(0.5),
            c0: None,
            x0: vec![1.0, 0.0],
        },
        weights: Weights {
            q: Mat::identity(2),
            r: vec![Mat::identity(2); 3],
        },
        initial_states: vec![vec![2.0, -1.0], vec![-1.5, 2.0], vec![0.5, -2.0]],
        horizon: 60,
        observer_init: ObserverInit::Zero,
        optimizer_seed: 7,
        tolerances: Tolerances::default(),
    }
}

/// Output tracking with mixed state dimensions (2, 3, 3) and `q = 2`.
pub fn mixed_output() -> Scenario {
    let agents = vec![
        AgentModel {
            a: m(&[[0.9, 0.4], [-0.3, 1.1]]),
            b: m(&[[1.0, 0.2], [0.0, 0.8]]),
            c: Some(Mat::identity(2)),
        },
        AgentModel {
            a: m(&[[1.0, 0.2, 0.1], [0.0, 0.9, 0.3], [0.1, 0.0, 0.5]]),
            b: m(&[[1.0, 0.0], [0.0, 1.0], [0.2, 0.1]]),
            c: Some(m(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])),
        },
        AgentModel {
            a: m(&[[0.7, -0.5, 0.0], [0.6, 0.8, 0.2], [0.0, 0.3, -0.4]]),
            b: m(&[[0.5, 0.1], [0.0, 1.0], [0.3, 0.2]]),
            c: Some(m(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.5]])),
        },
    ];
    Scenario {
        name: Some("mixed_output".into()),
        mode: Mode::Output,
        topology: Topology::chain(3).expect("chain"),
        agents,
        leader: LeaderModel {
            a0: rotation(0.3),
            c0: Some(Mat::identity(2)),
            x0: vec![1.0, 0.0],
        },
        weights: Weights {
            q: Mat::identity(2),
            r: vec![Mat::identity(2); 3],
        },
        initial_states: vec![vec![1.0, -1.0], vec![-1.0, 0.5, 0.2], vec![0.5, 1.0, -0.5]],
        horizon: 60,
        observer_init: ObserverInit::Zero,
        optimizer_seed: 7,
        tolerances: Tolerances::default(),
    }
}

/// Every follower copies the leader dynamics with `B = I`.
pub fn homogeneous() -> Scenario {
    let a = rotation(0.5);
    let agent = AgentModel {
        a: a.clone(),
        b: Mat::identity(2),
        c: None,
    };
    Scenario {
        name: Some("homogeneous".into()),
        agents: vec![agent; 3],
        leader: LeaderModel {
            a0: a,
            c0: None,
            x0: vec![1.0, 0.0],
        },
        ..reference()
    }
}

/// Unstable mode `2` that no input reaches: the Riccati iteration diverges.
pub fn unstabilizable() -> Scenario {
    let a = m(&[[2.0, 0.0], [0.0, 0.5]]);
    let agent = AgentModel {
        a: a.clone(),
        b: m(&[[0.0, 0.0], [0.0, 1.0]]),
        c: None,
    };
    Scenario {
        name: Some("unstabilizable".into()),
        mode: Mode::State,
        topology: Topology::chain(2).expect("chain"),
        agents: vec![agent; 2],
        leader: LeaderModel {
            a0: a,
            c0: None,
            x0: vec![1.0, 1.0],
        },
        weights: Weights {
            q: Mat::identity(2),
            r: vec![Mat::identity(2); 2],
        },
        initial_states: vec![vec![0.0, 0.0], vec![1.0, -1.0]],
        horizon: 20,
        observer_init: ObserverInit::Zero,
        optimizer_seed: 7,
        tolerances: Tolerances::default(),
    }
}

/// Agent 1 has a rank-one `B` whose range misses the dynamics mismatch.
pub fn infeasible_feedforward() -> Scenario {
    let mut s = reference();
    s.name = Some("infeasible_feedforward".into());
    s.agents[0] = AgentModel {
        a: m(&[[1.2, 0.3], [0.0, 0.5]]),
        b: m(&[[1.0, 0.0], [0.0, 0.0]]),
        c: None,
    };
    s
}

/// Name → builder lookup for the shipped instances.
pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "paper_sec4" => Some(reference()),
        "mixed_output" => Some(mixed_output()),
        "homogeneous" => Some(homogeneous()),
        "unstabilizable" => Some(unstabilizable()),
        "infeasible_feedforward" => Some(infeasible_feedforward()),
        _ => None,
    }
}

pub const NAMES: [&str; 5] = [
    "paper_sec4",
    "mixed_output",
    "homogeneous",
    "unstabilizable",
    "infeasible_feedforward",
];
