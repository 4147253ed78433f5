//! Conventional comparison scheme: a distributed leader-state observer plus
//! regulator-equation feedforward, `u_i = F_i(x_i − X_iη_i) + U_iη_i`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matstack::{add, pseudo_inverse, spectral_radius, sub, Mat};
use crate::model::{Mode, Scenario};
use crate::sim::{convergence_metrics, Plant, SimulationTrace, StepRecord, TraceKind};
use crate::synthesis::solve_dare_matrices;

/// Largest accepted regulator-equation residual.
pub const REGULATOR_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegulatorSolution {
    pub x: Vec<Mat>,
    pub u: Vec<Mat>,
    /// `‖X_iA_0 − A_iX_i − B_iU_i‖_F + ‖C_iX_i − C_0‖_F` per agent.
    pub residuals: Vec<f64>,
}

/// Column-major `vec(M)`.
fn vec_of(m: &Mat) -> Vec<f64> {
    (0..m.cols())
        .flat_map(|c| (0..m.rows()).map(move |r| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect()
}

fn unvec(v: &[f64], rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = v[c * rows + r];
        }
    }
    m
}

/// Solves `X A_0 = A X + B U`, `C X = C_0` for one agent in the
/// least-squares sense through the Kronecker form.
fn solve_one(a: &Mat, b: &Mat, c: &Mat, a0: &Mat, c0: &Mat) -> (Mat, Mat, f64) {
    let (n, m, p, q) = (a.rows(), b.cols(), a0.rows(), c.rows());
    let ip = Mat::identity(p);
    let dyn_x = &a0.transpose().kron(&Mat::identity(n)) - &ip.kron(a);
    let dyn_u = -&ip.kron(b);
    let out_x = ip.kron(c);
    let mut sys = Mat::zeros(n * p + q * p, n * p + m * p);
    sys.set_block(0, 0, &dyn_x);
    sys.set_block(0, n * p, &dyn_u);
    sys.set_block(n * p, 0, &out_x);
    let mut rhs = vec![0.0; n * p];
    rhs.extend(vec_of(c0));
    let sol = pseudo_inverse(&sys).mul_vec(&rhs);
    let x = unvec(&sol[..n * p], n, p);
    let u = unvec(&sol[n * p..], m, p);
    let r1 = &(&(&x * a0) - &(a * &x)) - &(b * &u);
    let r2 = &(c * &x) - c0;
    (x, u, r1.norm_fro() + r2.norm_fro())
}

pub fn solve_regulator_equations(s: &Scenario) -> Result<RegulatorSolution> {
    s.validate()?;
    let c0 = s.leader_output_matrix();
    let mut out = RegulatorSolution {
        x: Vec::new(),
        u: Vec::new(),
        residuals: Vec::new(),
    };
    for (idx, ag) in s.agents.iter().enumerate() {
        let (x, u, residual) =
            solve_one(&ag.a, &ag.b, &s.output_matrix(idx + 1), &s.leader.a0, &c0);
        if residual.is_nan() || residual > REGULATOR_TOL {
            return Err(Error::RegulatorInfeasible {
                agent: idx + 1,
                residual,
            });
        }
        out.x.push(x);
        out.u.push(u);
        out.residuals.push(residual);
    }
    Ok(out)
}

/// `𝓗 = D − 𝒜` over followers, with `D` including the leader weights `a_i0`.
pub fn leader_laplacian(s: &Scenario) -> Mat {
    let n = s.follower_count();
    let t = &s.topology;
    let mut h = Mat::zeros(n, n);
    for i in 1..=n {
        let mut deg = t.weight(i, 0);
        for j in 1..=n {
            let w = t.weight(i, j);
            deg += w;
            if w != 0.0 {
                h[(i - 1, j - 1)] = -w;
            }
        }
        h[(i - 1, i - 1)] = deg;
    }
    h
}

/// Observer error matrix `(I − μ𝓗) ⊗ A_0`.
pub fn observer_error_matrix(s: &Scenario, mu: f64) -> Mat {
    let h = leader_laplacian(s);
    let n = h.rows();
    (&Mat::identity(n) - &h.scale(mu)).kron(&s.leader.a0)
}

/// 1-D search for `μ` on `(0, 2/max d_i]`: a 400-point grid followed by a
/// golden-section refinement around the best grid point.
pub fn tune_coupling_gain(s: &Scenario) -> Result<(f64, f64)> {
    let h = leader_laplacian(s);
    let dmax = (0..h.rows()).map(|i| h[(i, i)]).fold(0.0, f64::max);
    if dmax <= 0.0 {
        return Err(Error::Contract(
            "leader observer needs at least one follower in-edge".into(),
        ));
    }
    let hi = 2.0 / dmax;
    let rho = |mu: f64| spectral_radius(&observer_error_matrix(s, mu)).unwrap_or(f64::INFINITY);
    let steps = 400;
    let width = hi / steps as f64;
    let (mut best_mu, mut best_rho) = (hi, rho(hi));
    for k in 1..steps {
        let mu = width * k as f64;
        let r = rho(mu);
        if r < best_rho {
            best_mu = mu;
            best_rho = r;
        }
    }
    let (mut a, mut b) = ((best_mu - width).max(1e-12), (best_mu + width).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if rho(c) < rho(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let mid = 0.5 * (a + b);
    let r = rho(mid);
    if r < best_rho {
        best_mu = mid;
        best_rho = r;
    }
    Ok((best_mu, best_rho))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineDesign {
    pub regulator: RegulatorSolution,
    pub mu: f64,
    /// Per-agent stabilizing gains from the agent's own DARE.
    pub f: Vec<Mat>,
    pub rho_observer: f64,
    pub rho_agents: Vec<f64>,
    /// Spectral radius of the stacked `[ξ; δ]` closed loop.
    pub rho_closed: f64,
}

/// Builds the baseline with a tuned coupling gain.
pub fn design_baseline(s: &Scenario) -> Result<BaselineDesign> {
    let (mu, _) = tune_coupling_gain(s)?;
    design_baseline_with_mu(s, mu)
}

pub fn design_baseline_with_mu(s: &Scenario, mu: f64) -> Result<BaselineDesign> {
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::Contract(format!(
            "coupling gain must be positive, got {mu}"
        )));
    }
    let regulator = solve_regulator_equations(s)?;
    let rho_observer = spectral_radius(&observer_error_matrix(s, mu))?;
    if rho_observer >= 1.0 {
        return Err(Error::BaselineUnstable {
            rho: rho_observer,
            mu,
        });
    }
    let mut f = Vec::new();
    let mut rho_agents = Vec::new();
    for (idx, ag) in s.agents.iter().enumerate() {
        let q = match s.mode {
            Mode::State => s.weights.q.clone(),
            Mode::Output => {
                let c = s.output_matrix(idx + 1);
                &(&(&c.transpose() * &s.weights.q) * &c) + &Mat::identity(ag.state_dim())
            }
        };
        let sol = solve_dare_matrices(&ag.a, &ag.b, &q, &s.weights.r[idx], &s.tolerances, idx + 1)?;
        rho_agents.push(spectral_radius(&(&ag.a + &(&ag.b * &sol.k)))?);
        f.push(sol.k);
    }
    let rho_closed = spectral_radius(&stacked_closed_loop(s, &regulator, &f, mu))?;
    Ok(BaselineDesign {
        regulator,
        mu,
        f,
        rho_observer,
        rho_agents,
        rho_closed,
    })
}

/// Dynamics of `ξ_i = x_i − X_ix_0` and `δ_i = η_i − x_0`:
/// `[[diag(A_i + B_iF_i), diag(B_i(U_i − F_iX_i))], [0, (I − μ𝓗) ⊗ A_0]]`.
pub fn stacked_closed_loop(s: &Scenario, reg: &RegulatorSolution, f: &[Mat], mu: f64) -> Mat {
    let cl: Vec<Mat> = s
        .agents
        .iter()
        .zip(f)
        .map(|(ag, fi)| &ag.a + &(&ag.b * fi))
        .collect();
    let coupling: Vec<Mat> = s
        .agents
        .iter()
        .enumerate()
        .map(|(i, ag)| &ag.b * &(&reg.u[i] - &(&f[i] * &reg.x[i])))
        .collect();
    let top_left = Mat::block_diag(&cl);
    let top_right = Mat::block_diag(&coupling);
    let obs = observer_error_matrix(s, mu);
    let (nx, nd) = (top_left.rows(), obs.rows());
    let mut m = Mat::zeros(nx + nd, nx + nd);
    m.set_block(0, 0, &top_left);
    m.set_block(0, nx, &top_right);
    m.set_block(nx, nx, &obs);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeaderEstimateInit {
    #[default]
    Zero,
    /// `η_i(0) = x_0(0)`.
    Exact,
}

/// Runs the baseline. Observer `i` reads `η_j` of its in-neighbors and `x_0`
/// only when the leader is one of them.
pub fn run_baseline(
    s: &Scenario,
    design: &BaselineDesign,
    horizon: usize,
    init: &LeaderEstimateInit,
) -> Result<SimulationTrace> {
    if design.rho_observer >= 1.0 {
        return Err(Error::BaselineUnstable {
            rho: design.rho_observer,
            mu: design.mu,
        });
    }
    let plant = Plant::new(s)?;
    let n = s.follower_count();
    let a0 = &s.leader.a0;
    let mut x0 = s.leader.x0.clone();
    let mut xs = s.initial_states.clone();
    let mut eta: Vec<Vec<f64>> = match init {
        LeaderEstimateInit::Zero => vec![vec![0.0; x0.len()]; n],
        LeaderEstimateInit::Exact => vec![x0.clone(); n],
    };
    let mut records = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let mut u_ff = Vec::with_capacity(n);
        let mut u_fb = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        for i in 0..n {
            let ff = design.regulator.u[i].mul_vec(&eta[i]);
            let fb = design.f[i].mul_vec(&sub(&xs[i], &design.regulator.x[i].mul_vec(&eta[i])));
            u.push(add(&ff, &fb));
            u_ff.push(ff);
            u_fb.push(fb);
        }
        let e = plant.error(&x0, &xs);
        records.push(StepRecord {
            k,
            leader_output: plant.leader_output(&x0),
            leader_state: x0.clone(),
            outputs: plant.outputs(&xs),
            states: xs.clone(),
            stage_cost: plant.stage_cost(&e, &u_fb),
            feedforward: u_ff,
            feedback: u_fb,
            error: e,
            estimates: Vec::new(),
            observer_errors: Vec::new(),
            leader_estimates: eta.clone(),
        });
        if k == horizon {
            break;
        }
        let next_eta = (1..=n)
            .map(|i| {
                let mut acc = vec![0.0; x0.len()];
                for j in s.topology.neighbors(i) {
                    let w = s.topology.weight(i, j);
                    let src = if j == 0 { &x0 } else { &eta[j - 1] };
                    acc = add(
                        &acc,
                        &sub(src, &eta[i - 1])
                            .iter()
                            .map(|v| w * v)
                            .collect::<Vec<_>>(),
                    );
                }
                let corr: Vec<f64> = a0.mul_vec(&acc).iter().map(|v| design.mu * v).collect();
                add(&a0.mul_vec(&eta[i - 1]), &corr)
            })
            .collect();
        eta = next_eta;
        let (nx0, nxs) = plant.step(&x0, &xs, &u);
        x0 = nx0;
        xs = nxs;
    }
    Ok(SimulationTrace {
        kind: TraceKind::Baseline,
        mode: s.mode,
        feedback_enabled: true,
        pair_order: plant.pm.pairs(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub rho_proposed: f64,
    pub rho_baseline: f64,
    /// `rho_proposed / rho_baseline`.
    pub rho_ratio: Option<f64>,
    pub consensus_step_proposed: Option<usize>,
    pub consensus_step_baseline: Option<usize>,
    /// `consensus_step_proposed / consensus_step_baseline`.
    pub step_ratio: Option<f64>,
    pub deviation_proposed: Vec<f64>,
    pub deviation_baseline: Vec<f64>,
    pub proposed_faster: bool,
    pub proposed_smaller_rho: bool,
}

/// Two runs of the same scenario side by side. Each input is a trace and
/// the spectral radius governing it.
pub fn compare(
    proposed: (&SimulationTrace, f64),
    baseline: (&SimulationTrace, f64),
    threshold_rel: f64,
) -> Result<ComparisonReport> {
    let (tp, rp) = proposed;
    let (tb, rb) = baseline;
    let same_start = match (tp.records.first(), tb.records.first()) {
        (Some(a), Some(b)) => a.states == b.states && a.leader_state == b.leader_state,
        _ => false,
    };
    if tp.mode != tb.mode || tp.horizon() != tb.horizon() || !same_start {
        return Err(Error::Contract(
            "compared traces must share mode, horizon and initial conditions".into(),
        ));
    }
    let mp = convergence_metrics(tp, Some(rp), threshold_rel);
    let mb = convergence_metrics(tb, Some(rb), threshold_rel);
    let step_ratio = match (mp.consensus_step, mb.consensus_step) {
        (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
        (Some(0), Some(0)) => Some(1.0),
        _ => None,
    };
    let proposed_faster = match (mp.consensus_step, mb.consensus_step) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    Ok(ComparisonReport {
        rho_proposed: rp,
        rho_baseline: rb,
        rho_ratio: (rb > 0.0).then(|| rp / rb),
        consensus_step_proposed: mp.consensus_step,
        consensus_step_baseline: mb.consensus_step,
        step_ratio,
        deviation_proposed: mp.deviations,
        deviation_baseline: mb.deviations,
        proposed_faster,
        proposed_smaller_rho: rp < rb - 1e-9,
    })
}
