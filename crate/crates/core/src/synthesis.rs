//! Controller synthesis: the stacked error system, feedforward laws,
//! Riccati gains, distributed observer gains and the closed-loop matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{build_selectors, ParentMap};
use crate::matstack::{
    is_positive_definite, max_singular_value, rank_with_tol, solve_linear, spectral_radius, Mat,
};
use crate::model::{Mode, Scenario, Tolerances};

/// ρ(A_c) obtained with the LMI route on the reference example; reported as a gap.
pub const REFERENCE_RHO_AC: f64 = 0.7860;

/// Relative rank cutoff for the feedforward range test.
const RANGE_TOL: f64 = 1e-9;

/// Stacked pairwise error system `E(k+1) = Ã E(k) + B̃ ū(k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStack {
    pub mode: Mode,
    /// `(i, parent(i))` for `i = 1..=N`; block `i−1` of `E` is `e_{i,parent(i)}`.
    pub pair_order: Vec<(usize, usize)>,
    pub block_dim: usize,
    pub a_blocks: Vec<Mat>,
    pub b_blocks: Vec<Mat>,
    pub q: Mat,
    pub r_blocks: Vec<Mat>,
}

impl ErrorStack {
    pub fn agent_count(&self) -> usize {
        self.pair_order.len()
    }

    /// Dimension of `E`.
    pub fn error_dim(&self) -> usize {
        self.agent_count() * self.block_dim
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.b_blocks.iter().map(Mat::cols).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.b_blocks.iter().map(Mat::cols).sum()
    }

    /// Offset of agent `i` (1-based) inside the stacked input `ū`.
    pub fn input_offset(&self, i: usize) -> usize {
        self.b_blocks[..i - 1].iter().map(Mat::cols).sum()
    }

    pub fn a_tilde(&self) -> Mat {
        Mat::block_diag(&self.a_blocks)
    }

    pub fn b_tilde(&self) -> Mat {
        Mat::block_diag(&self.b_blocks)
    }

    /// Columns of `B̃` driven by agent `i` (1-based).
    pub fn b_tilde_i(&self, i: usize) -> Mat {
        let b = self.b_tilde();
        b.block(
            0,
            self.input_offset(i),
            self.error_dim(),
            self.b_blocks[i - 1].cols(),
        )
    }

    pub fn q_cal(&self) -> Mat {
        Mat::identity(self.agent_count()).kron(&self.q)
    }

    pub fn r_cal(&self) -> Mat {
        Mat::block_diag(&self.r_blocks)
    }
}

/// Stacks the pairwise errors in parent-map order. In output mode the
/// error blocks are output differences with `𝒜 = I` and `ℬ = diag(C_i B_i)`.
pub fn build_error_stack(s: &Scenario, pm: &ParentMap) -> ErrorStack {
    let pair_order = pm.pairs();
    let (block_dim, a_blocks, b_blocks) = match s.mode {
        Mode::State => (
            s.block_dim(),
            s.agents.iter().map(|a| a.a.clone()).collect(),
            s.agents.iter().map(|a| a.b.clone()).collect(),
        ),
        Mode::Output => {
            let q = s.block_dim();
            let b = (1..=s.follower_count())
                .map(|i| &s.output_matrix(i) * &s.agents[i - 1].b)
                .collect();
            (q, vec![Mat::identity(q); s.follower_count()], b)
        }
    };
    ErrorStack {
        mode: s.mode,
        pair_order,
        block_dim,
        a_blocks,
        b_blocks,
        q: s.weights.q.clone(),
        r_blocks: s.weights.r.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardKind {
    /// `B_i` (or `C_i B_i`) is invertible.
    Inverse,
    /// Minimum-norm solution through `B_i⁺`.
    PseudoInverse,
}

/// Linear feedforward `ũ_i = G_own x_i + G_state x_j + G_input u_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedforwardLaw {
    pub agent: usize,
    pub parent: usize,
    pub kind: FeedforwardKind,
    pub own_state_gain: Option<Mat>,
    pub parent_state_gain: Mat,
    /// Absent when the parent is the leader (`B_0 = 0`, `u_0 = 0`).
    pub parent_input_gain: Option<Mat>,
}

impl FeedforwardLaw {
    pub fn apply(
        &self,
        own_state: &[f64],
        parent_state: &[f64],
        parent_input: Option<&[f64]>,
    ) -> Vec<f64> {
        let mut u = self.parent_state_gain.mul_vec(parent_state);
        if let Some(g) = &self.own_state_gain {
            for (ui, v) in u.iter_mut().zip(g.mul_vec(own_state)) {
                *ui += v;
            }
        }
        if let (Some(g), Some(uj)) = (&self.parent_input_gain, parent_input) {
            for (ui, v) in u.iter_mut().zip(g.mul_vec(uj)) {
                *ui += v;
            }
        }
        u
    }
}

fn infeasible(agent: usize, parent: usize, reason: impl Into<String>) -> Error {
    Error::FeedforwardInfeasible {
        agent,
        parent,
        reason: reason.into(),
    }
}

fn range_contains(b: &Mat, m: &Mat) -> Result<bool> {
    let joined = Mat::hstack(&[b.clone(), m.clone()])?;
    Ok(rank_with_tol(&joined, RANGE_TOL) == rank_with_tol(b, RANGE_TOL))
}

/// State-tracking feedforward for follower `i` behind node `j`:
/// `ũ_i = −B_i⁻¹(A_i − A_j) x_j + B_i⁻¹ B_j u_j`. A singular `B_i` falls back
/// to `B_i⁺` when the range of `B_i` contains that of `A_i − A_j` and `B_j`.
pub fn feedforward_state(s: &Scenario, i: usize, j: usize) -> Result<FeedforwardLaw> {
    let agent = &s.agents[i - 1];
    let (a_j, b_j) = if j == 0 {
        (&s.leader.a0, None)
    } else {
        (&s.agents[j - 1].a, Some(&s.agents[j - 1].b))
    };
    let diff = &agent.a - a_j;
    let bi = &agent.b;
    let square_inverse = if bi.is_square() {
        solve_linear(bi, &Mat::identity(bi.rows())).ok()
    } else {
        None
    };
    let (kind, g) = match square_inverse {
        Some(inv) => (FeedforwardKind::Inverse, inv),
        None => {
            if !range_contains(bi, &diff)? {
                return Err(infeasible(
                    i,
                    j,
                    "range of A_i - A_j is not contained in the range of B_i",
                ));
            }
            if let Some(bj) = b_j {
                if !range_contains(bi, bj)? {
                    return Err(infeasible(
                        i,
                        j,
                        "range of B_j is not contained in the range of B_i",
                    ));
                }
            }
            (
                FeedforwardKind::PseudoInverse,
                crate::matstack::pseudo_inverse(bi),
            )
        }
    };
    Ok(FeedforwardLaw {
        agent: i,
        parent: j,
        kind,
        own_state_gain: None,
        parent_state_gain: -&(&g * &diff),
        parent_input_gain: b_j.map(|bj| &g * bj),
    })
}

/// Output-tracking feedforward:
/// `ũ_i = −G_i(A_i − I)x_i + (C_iB_i)⁻¹C_j(A_j − I)x_j + (C_iB_i)⁻¹C_jB_j u_j`
/// with `G_i = (C_iB_i)⁻¹C_i`, which is `B_i⁻¹` whenever `B_i` is invertible.
pub fn feedforward_output(s: &Scenario, i: usize, j: usize) -> Result<FeedforwardLaw> {
    let agent = &s.agents[i - 1];
    let ci = s.output_matrix(i);
    let cb = &ci * &agent.b;
    if !cb.is_square() {
        return Err(infeasible(
            i,
            j,
            format!(
                "C_i B_i is {}x{}, input count must equal the output dimension",
                cb.rows(),
                cb.cols()
            ),
        ));
    }
    let cb_inv = solve_linear(&cb, &Mat::identity(cb.rows()))
        .map_err(|_| infeasible(i, j, "C_i B_i is singular"))?;
    let g = &cb_inv * &ci;
    let ni = agent.state_dim();
    let own = -&(&g * &(&agent.a - &Mat::identity(ni)));
    let (a_j, c_j, b_j) = if j == 0 {
        (&s.leader.a0, s.leader_output_matrix(), None)
    } else {
        let p = &s.agents[j - 1];
        (&p.a, s.output_matrix(j), Some(&p.b))
    };
    let drift = &c_j * &(a_j - &Mat::identity(a_j.rows()));
    Ok(FeedforwardLaw {
        agent: i,
        parent: j,
        kind: FeedforwardKind::Inverse,
        own_state_gain: Some(own),
        parent_state_gain: &cb_inv * &drift,
        parent_input_gain: b_j.map(|bj| &cb_inv * &(&c_j * bj)),
    })
}

pub fn feedforward_laws(s: &Scenario, pm: &ParentMap) -> Result<Vec<FeedforwardLaw>> {
    pm.pairs()
        .into_iter()
        .map(|(i, j)| match s.mode {
            Mode::State => feedforward_state(s, i, j),
            Mode::Output => feedforward_output(s, i, j),
        })
        .collect()
}

/// One value-iteration sweep `f(P) = AᵀPA + Q − AᵀPB(R + BᵀPB)⁻¹BᵀPA`,
/// also returning the gain `K = −(R + BᵀPB)⁻¹BᵀPA`.
fn riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat, block: usize) -> Result<(Mat, Mat)> {
    let at = a.transpose();
    let bt = b.transpose();
    let pa = p * a;
    let pb = p * b;
    let s = r + &(&bt * &pb);
    let g = solve_linear(&s, &(&bt * &pa)).map_err(|_| Error::Conditioning { block })?;
    let next = &(&(&at * &pa) + q) - &(&(&at * &pb) * &g);
    Ok((next.symmetrize(), -&g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DareBlock {
    pub p: Mat,
    pub k: Mat,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves one DARE by value iteration from `P₀ = Q`. `block` labels errors.
pub fn solve_dare_matrices(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    tol: &Tolerances,
    block: usize,
) -> Result<DareBlock> {
    let mut p = q.symmetrize();
    for it in 1..=tol.dare_max_iters {
        let (next, _) = riccati_map(a, b, q, r, &p, block)?;
        let next_norm = next.norm_fro();
        if !next.is_finite() || next_norm > 1e14 {
            return Err(Error::NonStabilizable {
                block,
                iterations: it,
            });
        }
        let delta = (&next - &p).norm_fro();
        p = next;
        if delta <= tol.dare_tol * (1.0 + next_norm) {
            let (fp, k) = riccati_map(a, b, q, r, &p, block)?;
            let residual = (&fp - &p).norm_fro();
            return Ok(DareBlock {
                p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonStabilizable {
        block,
        iterations: tol.dare_max_iters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DareSolution {
    pub p: Mat,
    pub k: Mat,
    /// Row slices of `K`, one per agent.
    pub k_i: Vec<Mat>,
    pub residual: f64,
    pub iterations: usize,
    /// ρ(Ã + B̃K).
    pub rho_closed: f64,
}

/// The stacked DARE is block diagonal, so each agent's block is solved on
/// its own and the pieces are reassembled.
pub fn solve_dare(stack: &ErrorStack, tol: &Tolerances) -> Result<DareSolution> {
    let blocks: Vec<DareBlock> = (0..stack.agent_count())
        .map(|i| {
            solve_dare_matrices(
                &stack.a_blocks[i],
                &stack.b_blocks[i],
                &stack.q,
                &stack.r_blocks[i],
                tol,
                i + 1,
            )
        })
        .collect::<Result<_>>()?;
    let p = Mat::block_diag(&blocks.iter().map(|b| b.p.clone()).collect::<Vec<_>>());
    let k = Mat::block_diag(&blocks.iter().map(|b| b.k.clone()).collect::<Vec<_>>());
    let k_i = slice_gains(stack, &k);
    let (at, bt) = (stack.a_tilde(), stack.b_tilde());
    let residual = dare_residual(&at, &bt, &stack.q_cal(), &stack.r_cal(), &p)?;
    let rho_closed = spectral_radius(&(&at + &(&bt * &k)))?;
    Ok(DareSolution {
        p,
        k,
        k_i,
        residual,
        iterations: blocks.iter().map(|b| b.iterations).max().unwrap_or(0),
        rho_closed,
    })
}

/// `K_i = [0 … I … 0] K`.
pub fn slice_gains(stack: &ErrorStack, k: &Mat) -> Vec<Mat> {
    (1..=stack.agent_count())
        .map(|i| {
            k.block(
                stack.input_offset(i),
                0,
                stack.b_blocks[i - 1].cols(),
                k.cols(),
            )
        })
        .collect()
}

/// `‖P − f(P)‖_F` for the stacked equation.
pub fn dare_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<f64> {
    let (fp, _) = riccati_map(a, b, q, r, p, 0)?;
    Ok((&fp - p).norm_fro())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoop {
    pub theta: Vec<Mat>,
    pub a_c: Mat,
    pub psi: Mat,
    pub a_bar_c: Mat,
}

fn check_gain_shapes(stack: &ErrorStack, k: &Mat, k_i: &[Mat], l: &[Mat], h: &[Mat]) -> Result<()> {
    let d = stack.error_dim();
    let n = stack.agent_count();
    let bad = k.shape() != (stack.input_dim(), d)
        || k_i.len() != n
        || l.len() != n
        || h.len() != n
        || k_i
            .iter()
            .zip(stack.input_dims())
            .any(|(ki, m)| ki.shape() != (m, d))
        || l.iter()
            .zip(h)
            .any(|(li, hi)| li.rows() != d || hi.cols() != d || li.cols() != hi.rows());
    if bad {
        return Err(Error::Contract(
            "gain dimensions do not match the error stack".into(),
        ));
    }
    Ok(())
}

/// Builds `Θ_i = Ã + B̃K − B̃_iK_i − L_iH_i`, the observer-error matrix `A_c`
/// (Θ_i on the diagonal, `−B̃_jK_j` off it), `Ψ = [−B̃_1K_1 … −B̃_NK_N]` and
/// the block upper-triangular `Ā_c = [[Ã + B̃K, Ψ], [0, A_c]]`.
pub fn assemble_ac(
    stack: &ErrorStack,
    k: &Mat,
    k_i: &[Mat],
    l: &[Mat],
    h: &[Mat],
) -> Result<ClosedLoop> {
    check_gain_shapes(stack, k, k_i, l, h)?;
    let n = stack.agent_count();
    let d = stack.error_dim();
    let acl = &stack.a_tilde() + &(&stack.b_tilde() * k);
    let bk: Vec<Mat> = (1..=n).map(|i| &stack.b_tilde_i(i) * &k_i[i - 1]).collect();
    let theta: Vec<Mat> = (0..n)
        .map(|i| &(&acl - &bk[i]) - &(&l[i] * &h[i]))
        .collect();
    let mut a_c = Mat::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let blk = if i == j { theta[i].clone() } else { -&bk[j] };
            a_c.set_block(i * d, j * d, &blk);
        }
    }
    let psi = Mat::hstack(&bk.iter().map(|b| -b).collect::<Vec<_>>())?;
    let mut a_bar_c = Mat::zeros(d + n * d, d + n * d);
    a_bar_c.set_block(0, 0, &acl);
    a_bar_c.set_block(0, d, &psi);
    a_bar_c.set_block(d, d, &a_c);
    Ok(ClosedLoop {
        theta,
        a_c,
        psi,
        a_bar_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverObjective {
    SigmaMax,
    /// The σ_max search left ρ(A_c) ≥ 1 and ρ(A_c) was minimized instead.
    SpectralRadius,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverGains {
    pub l: Vec<Mat>,
    pub sigma_max: f64,
    /// `α = σ_max(A_c)²`.
    pub alpha: f64,
    pub rho: f64,
    pub initial_sigma_max: f64,
    pub initial_rho: f64,
    pub objective: ObserverObjective,
    pub evaluations: usize,
}

/// Objective evaluator: `A_c(L) = A_c(0) − diag(L_iH_i)`, where `L_iH_i` only
/// touches the measured column block of agent `i`.
struct AcEvaluator {
    base: Mat,
    agents: usize,
    d: usize,
    q: usize,
    /// Column offset of each agent's measured block inside `E`.
    measured: Vec<usize>,
}

impl AcEvaluator {
    fn new(stack: &ErrorStack, k: &Mat, k_i: &[Mat], h: &[Mat]) -> Result<Self> {
        let n = stack.agent_count();
        let d = stack.error_dim();
        let q = stack.block_dim;
        let zeros = vec![Mat::zeros(d, q); n];
        let base = assemble_ac(stack, k, k_i, &zeros, h)?.a_c;
        let measured = h
            .iter()
            .map(|hi| {
                (0..d)
                    .find(|&c| hi[(0, c)] != 0.0)
                    .ok_or_else(|| Error::Contract("selector has an empty first row".into()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            base,
            agents: n,
            d,
            q,
            measured,
        })
    }

    fn param_len(&self) -> usize {
        self.agents * self.d * self.q
    }

    fn matrix(&self, v: &[f64]) -> Mat {
        let mut m = self.base.clone();
        for i in 0..self.agents {
            for r in 0..self.d {
                for c in 0..self.q {
                    m[(i * self.d + r, i * self.d + self.measured[i] + c)] -=
                        v[(i * self.d + r) * self.q + c];
                }
            }
        }
        m
    }

    fn unpack(&self, v: &[f64]) -> Vec<Mat> {
        (0..self.agents)
            .map(|i| {
                let off = i * self.d * self.q;
                Mat::new(self.d, self.q, v[off..off + self.d * self.q].to_vec())
                    .expect("finite gains")
            })
            .collect()
    }

    fn sigma(&self, v: &[f64]) -> f64 {
        if v.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        max_singular_value(&self.matrix(v))
    }

    fn rho(&self, v: &[f64]) -> f64 {
        if v.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        spectral_radius(&self.matrix(v)).unwrap_or(f64::INFINITY)
    }

    fn score(&self, v: &[f64]) -> Score {
        Score {
            sigma: self.sigma(v),
            rho: self.rho(v),
        }
    }

    /// Scores `v` against `best`, computing ρ only when the objective needs it.
    fn challenge(&self, v: &[f64], best: &Score, objective: ObserverObjective) -> Option<Score> {
        let cand = match objective {
            ObserverObjective::SpectralRadius => Score {
                sigma: self.sigma(v),
                rho: self.rho(v),
            },
            ObserverObjective::SigmaMax => {
                let sigma = self.sigma(v);
                if sigma > best.sigma + sigma_tie(best.sigma) {
                    return None;
                }
                Score {
                    sigma,
                    rho: self.rho(v),
                }
            }
        };
        cand.beats(best, objective).then_some(cand)
    }
}

fn sigma_tie(sigma: f64) -> f64 {
    1e-9 * sigma.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    sigma: f64,
    rho: f64,
}

impl Score {
    /// σ_max first; values within a relative 1e-9 count as tied and ρ decides.
    fn beats(&self, other: &Score, objective: ObserverObjective) -> bool {
        match objective {
            ObserverObjective::SpectralRadius => self.rho < other.rho,
            ObserverObjective::SigmaMax => {
                if (self.sigma - other.sigma).abs() <= sigma_tie(other.sigma) {
                    self.rho < other.rho
                } else {
                    self.sigma < other.sigma
                }
            }
        }
    }
}

/// Coordinate pattern search: try `±step` on each coordinate, keep the first
/// improvement, double the step after a productive sweep, halve it otherwise.
fn pattern_search(
    eval: &AcEvaluator,
    mut v: Vec<f64>,
    objective: ObserverObjective,
    max_evals: usize,
) -> (Vec<f64>, Score, usize) {
    let mut best = eval.score(&v);
    let mut evals = 1;
    let mut step = 1.0;
    while step > 1e-7 && evals < max_evals {
        let mut improved = false;
        'coords: for k in 0..v.len() {
            for sign in [1.0, -1.0] {
                if evals >= max_evals {
                    break 'coords;
                }
                let old = v[k];
                v[k] = old + sign * step;
                evals += 1;
                if let Some(s) = eval.challenge(&v, &best, objective) {
                    best = s;
                    improved = true;
                    break;
                }
                v[k] = old;
            }
        }
        step = if improved {
            (step * 2.0).min(4.0)
        } else {
            step * 0.5
        };
    }
    (v, best, evals)
}

/// Minimizes σ_max(A_c) over the observer gains, starting from
/// `L_i = (Ã + B̃K − B̃_iK_i) H_iᵀ` plus seeded random restarts evaluated in
/// parallel. Falls back to minimizing ρ(A_c) if the result is not stable.
pub fn synthesize_observer_gains(
    stack: &ErrorStack,
    k: &Mat,
    k_i: &[Mat],
    h: &[Mat],
    seed: u64,
    tol: &Tolerances,
) -> Result<ObserverGains> {
    let eval = AcEvaluator::new(stack, k, k_i, h)?;
    let acl = &stack.a_tilde() + &(&stack.b_tilde() * k);
    let mut start = Vec::with_capacity(eval.param_len());
    for (i, hi) in h.iter().enumerate() {
        let li = &(&acl - &(&stack.b_tilde_i(i + 1) * &k_i[i])) * &hi.transpose();
        start.extend_from_slice(li.as_slice());
    }
    let initial = eval.score(&start);
    let restarts = tol.observer_restarts.max(1);
    let runs: Vec<(Vec<f64>, Score, usize)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut v0 = start.clone();
            if r > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
                for x in v0.iter_mut() {
                    *x += rng.random_range(-0.5..0.5);
                }
            }
            pattern_search(
                &eval,
                v0,
                ObserverObjective::SigmaMax,
                tol.observer_max_evals,
            )
        })
        .collect();
    let mut evaluations: usize = runs.iter().map(|r| r.2).sum();
    let mut best = 0;
    for (idx, run) in runs.iter().enumerate().skip(1) {
        if run.1.beats(&runs[best].1, ObserverObjective::SigmaMax) {
            best = idx;
        }
    }
    let (mut v, mut score, _) = runs.into_iter().nth(best).expect("at least one restart");
    let mut objective = ObserverObjective::SigmaMax;
    if score.rho >= 1.0 {
        objective = ObserverObjective::SpectralRadius;
        let (v2, s2, e2) = pattern_search(&eval, v, objective, tol.observer_max_evals);
        evaluations += e2;
        v = v2;
        score = s2;
        if score.rho >= 1.0 {
            return Err(Error::ObserverSynthesisFailed {
                best_rho: score.rho,
            });
        }
    }
    Ok(ObserverGains {
        l: eval.unpack(&v),
        sigma_max: score.sigma,
        alpha: score.sigma * score.sigma,
        rho: score.rho,
        initial_sigma_max: initial.sigma,
        initial_rho: initial.rho,
        objective,
        evaluations,
    })
}

/// `M₁ = (Ã + B̃K)ᵀPΨ − [K_1ᵀR_1K_1 … K_NᵀR_NK_N]`,
/// `M₂ = blockdiag(K_iᵀR_iK_i) + ΨᵀPΨ`.
pub fn compute_m1_m2(
    stack: &ErrorStack,
    p: &Mat,
    k: &Mat,
    k_i: &[Mat],
    psi: &Mat,
) -> Result<(Mat, Mat)> {
    let d = stack.error_dim();
    let n = stack.agent_count();
    if p.shape() != (d, d) || psi.shape() != (d, n * d) || k_i.len() != n {
        return Err(Error::Contract(
            "M1/M2 inputs do not match the error stack".into(),
        ));
    }
    let krk: Vec<Mat> = k_i
        .iter()
        .zip(&stack.r_blocks)
        .map(|(ki, ri)| &(&ki.transpose() * ri) * ki)
        .collect();
    let acl = &stack.a_tilde() + &(&stack.b_tilde() * k);
    let m1 = &(&(&acl.transpose() * p) * psi) - &Mat::hstack(&krk)?;
    let m2 = (&Mat::block_diag(&krk) + &(&(&psi.transpose() * p) * psi)).symmetrize();
    Ok((m1, m2))
}

/// Everything the simulator needs, plus the spectral summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisResult {
    pub stack: ErrorStack,
    pub feedforward: Vec<FeedforwardLaw>,
    pub selectors: Vec<Mat>,
    pub p: Mat,
    pub k: Mat,
    pub k_i: Vec<Mat>,
    pub l: Vec<Mat>,
    pub theta: Vec<Mat>,
    pub a_c: Mat,
    pub psi: Mat,
    pub a_bar_c: Mat,
    pub m1: Mat,
    pub m2: Mat,
    pub alpha: f64,
    pub sigma_max_ac: f64,
    pub rho_closed: f64,
    pub rho_ac: f64,
    pub rho_bar: f64,
    pub dare_residual: f64,
    pub dare_iterations: usize,
    pub p_positive_definite: bool,
    pub observer_objective: ObserverObjective,
    pub observer_evaluations: usize,
    /// `ρ(A_c) − 0.7860`.
    pub gap_to_reference: f64,
}

impl SynthesisResult {
    /// `Ã + B̃K`.
    pub fn closed_loop(&self) -> Mat {
        &self.stack.a_tilde() + &(&self.stack.b_tilde() * &self.k)
    }

    /// Quadratic form `[[0, M₁], [M₁ᵀ, M₂]]` acting on `[E; Ẽ]`.
    pub fn correction_form(&self) -> Mat {
        let d = self.stack.error_dim();
        let nd = self.m2.rows();
        let mut s = Mat::zeros(d + nd, d + nd);
        s.set_block(0, d, &self.m1);
        s.set_block(d, 0, &self.m1.transpose());
        s.set_block(d, d, &self.m2);
        s
    }
}

/// Full pipeline with the observer-gain search.
pub fn synthesize(s: &Scenario) -> Result<SynthesisResult> {
    let pm = s.validate()?;
    let stack = build_error_stack(s, &pm);
    let feedforward = feedforward_laws(s, &pm)?;
    let dare = solve_dare(&stack, &s.tolerances)?;
    let selectors = build_selectors(&pm, stack.block_dim);
    let obs = synthesize_observer_gains(
        &stack,
        &dare.k,
        &dare.k_i,
        &selectors,
        s.optimizer_seed,
        &s.tolerances,
    )?;
    finish(
        stack,
        feedforward,
        selectors,
        dare,
        obs.l,
        Some((obs.objective, obs.evaluations)),
    )
}

/// Pipeline with caller-supplied observer gains (no search).
pub fn synthesize_with_gains(s: &Scenario, l: Vec<Mat>) -> Result<SynthesisResult> {
    let pm = s.validate()?;
    let stack = build_error_stack(s, &pm);
    let feedforward = feedforward_laws(s, &pm)?;
    let dare = solve_dare(&stack, &s.tolerances)?;
    let selectors = build_selectors(&pm, stack.block_dim);
    finish(stack, feedforward, selectors, dare, l, None)
}

fn finish(
    stack: ErrorStack,
    feedforward: Vec<FeedforwardLaw>,
    selectors: Vec<Mat>,
    dare: DareSolution,
    l: Vec<Mat>,
    search: Option<(ObserverObjective, usize)>,
) -> Result<SynthesisResult> {
    let cl = assemble_ac(&stack, &dare.k, &dare.k_i, &l, &selectors)?;
    let (m1, m2) = compute_m1_m2(&stack, &dare.p, &dare.k, &dare.k_i, &cl.psi)?;
    let sigma_max_ac = max_singular_value(&cl.a_c);
    let rho_ac = spectral_radius(&cl.a_c)?;
    let rho_bar = spectral_radius(&cl.a_bar_c)?;
    let (observer_objective, observer_evaluations) =
        search.unwrap_or((ObserverObjective::SigmaMax, 0));
    Ok(SynthesisResult {
        p_positive_definite: is_positive_definite(&dare.p.symmetrize())?,
        stack,
        feedforward,
        selectors,
        p: dare.p,
        k: dare.k,
        k_i: dare.k_i,
        l,
        theta: cl.theta,
        a_c: cl.a_c,
        psi: cl.psi,
        a_bar_c: cl.a_bar_c,
        m1,
        m2,
        alpha: sigma_max_ac * sigma_max_ac,
        sigma_max_ac,
        rho_closed: dare.rho_closed,
        rho_ac,
        rho_bar,
        dare_residual: dare.residual,
        dare_iterations: dare.iterations,
        observer_objective,
        observer_evaluations,
        gap_to_reference: rho_ac - REFERENCE_RHO_AC,
    })
}
