//! Blocklength optimization.
//!
//! The rate constraint is moved into the objective with a quadratic penalty
//! (summed over users). The problem is then solved one packet index at a time
//! (alternating optimization over blocks `q = 0..=q_th`); each block is split
//! into `u(x) + v(y)` subject to `x = y` and solved with augmented-Lagrangian
//! updates:
//!
//! ```text
//! x <- argmin_{x >= 0} u(x) + lambda'x + tau/2 |x - y|^2      (closed form)
//! y <- argmin_y        v(y) - lambda'y + tau/2 |x - y|^2      (per-coordinate search)
//! lambda <- lambda + tau (x - y)
//! ```
//!
//! Inside a block solve the split variables are TTIs in milliseconds and the
//! objective is in milliseconds, so `tau = 1` is a sensible step. `u` is the
//! linear TTI term with the retransmission counts and queue weights frozen at
//! the block-entry iterate; `v` is the rest of the block objective.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic;
use crate::blocklength::BlocklengthMatrix;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::traffic::{self, average_access_delay};

/// Floor/ceiling applied to the coupled error probability before `Q^-1`.
const EPS_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockInit {
    /// Start each block solve from the current column.
    WarmStart,
    /// Start each block solve from the initial matrix's column.
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Penalty factor on the squared rate-constraint violation (s/bit^2).
    pub omega: f64,
    /// Augmented-Lagrangian step size.
    pub tau: f64,
    /// Absolute tolerance on successive augmented-Lagrangian values (ms).
    pub tol_inner: f64,
    /// Tolerance on the split residual `max |x - y|` (ms of TTI).
    pub primal_tol: f64,
    /// Outer-loop tolerance on the average access delay (s).
    pub tol_outer_s: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Search interval for blocklengths, in symbols.
    pub n_min: f64,
    pub n_max: f64,
    pub golden_iters: usize,
    /// Log-spaced points scanned before each golden-section refinement.
    pub scan_points: usize,
    /// TTI of the default initial point (ms).
    pub n0_tti_ms: f64,
    pub init: BlockInit,
    /// Use this error probability in the rate term instead of the model's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_epsilon: Option<f64>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            omega: 1e3,
            tau: 1.0,
            tol_inner: 1e-8,
            primal_tol: 1e-6,
            tol_outer_s: 1e-6,
            max_inner: 500,
            max_outer: 50,
            n_min: 1.0,
            n_max: 1e5,
            golden_iters: 60,
            scan_points: 64,
            n0_tti_ms: 1.0,
            init: BlockInit::WarmStart,
            fixed_epsilon: None,
        }
    }
}

impl OptimizerSettings {
    pub fn epsilon_mode(&self) -> String {
        match self.fixed_epsilon {
            Some(eps) => format!("fixed eps={eps}; gamma=mean SNR"),
            None => "eps=packet_error_prob(n); gamma=mean SNR".to_string(),
        }
    }
}

/// Error probability entering the rate term for blocklength `n`.
fn rate_epsilon(n: f64, sc: &Scenario, settings: &OptimizerSettings) -> Result<f64> {
    let eps = match settings.fixed_epsilon {
        Some(eps) => eps,
        None => analytic::packet_error_prob(n, sc.b_bits, &sc.channel)?,
    };
    Ok(eps.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP))
}

/// Deliverable bits `R(n) n` of one block.
fn block_bits(n: f64, sc: &Scenario, settings: &OptimizerSettings) -> Result<f64> {
    let eps = rate_epsilon(n, sc, settings)?;
    Ok(analytic::achievable_rate(n, sc.channel.snr_avg, eps)? * n)
}

/// Expected arriving bits `B sum_{a=0}^{q_th} a p_gen(a)`.
pub fn demand_bits(sc: &Scenario) -> f64 {
    sc.b_bits * sc.traffic.truncated_mean_arrivals()
}

/// Rate-constraint slack of one user's row in bits; positive means feasible.
pub fn rate_constraint_slack(n_row: &[f64], sc: &Scenario, settings: &OptimizerSettings) -> Result<f64> {
    if n_row.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::Domain("rate_constraint_slack needs positive blocklengths".into()));
    }
    let supply = n_row
        .iter()
        .map(|&n| block_bits(n, sc, settings))
        .sum::<Result<f64>>()?;
    Ok(supply - demand_bits(sc))
}

/// `omega * sum_k min(g_k, 0)^2`, seconds.
fn penalty_s(n: &BlocklengthMatrix, sc: &Scenario, settings: &OptimizerSettings, omega: f64) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..n.users() {
        let g = rate_constraint_slack(n.row(k), sc, settings)?;
        total += g.min(0.0).powi(2);
    }
    Ok(omega * total)
}

/// Average access delay plus the summed constraint penalty, in seconds.
pub fn penalized_objective(
    n: &BlocklengthMatrix,
    sc: &Scenario,
    settings: &OptimizerSettings,
    omega: f64,
) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("omega must be > 0, got {omega}")));
    }
    let delay = average_access_delay(n, sc)?.average_access_ms * 1e-3;
    Ok(delay + penalty_s(n, sc, settings, omega)?)
}

/// Largest per-user constraint violation (bits, >= 0).
pub fn max_violation_bits(n: &BlocklengthMatrix, sc: &Scenario, settings: &OptimizerSettings) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..n.users() {
        worst = worst.max(-rate_constraint_slack(n.row(k), sc, settings)?);
    }
    Ok(worst)
}

/// Everything about block `q` that stays fixed during its solve.
#[derive(Debug, Clone)]
pub struct BlockContext<'a> {
    sc: &'a Scenario,
    settings: &'a OptimizerSettings,
    q: usize,
    omega: f64,
    tails: Vec<f64>,
    demand: f64,
    tti_rows: Vec<Vec<f64>>,
    p_rows: Vec<Vec<f64>>,
    /// Deliverable bits of each user's other blocks.
    other_bits: Vec<f64>,
    /// Linear coefficients of `u`, ms of delay per ms of TTI.
    weights: Vec<f64>,
}

impl<'a> BlockContext<'a> {
    pub fn new(
        q: usize,
        n: &BlocklengthMatrix,
        sc: &'a Scenario,
        settings: &'a OptimizerSettings,
        omega: f64,
    ) -> Result<Self> {
        sc.check_matrix(n)?;
        let tails = sc.traffic.tails();
        let users = n.users();
        let mut tti_rows = Vec::with_capacity(users);
        let mut p_rows = Vec::with_capacity(users);
        let mut other_bits = Vec::with_capacity(users);
        let mut weights = Vec::with_capacity(users);
        for k in 0..users {
            let row = n.row(k);
            let p = sc.success_row(row)?;
            let ss = traffic::steady_state_from_tails(&p[1..], &tails)?;
            let later: f64 = ss.pi[q + 1..].iter().sum();
            weights.push(traffic::expected_retransmissions(p[q])? * (1.0 + later) / users as f64);
            let mut bits = 0.0;
            for (h, &nh) in row.iter().enumerate() {
                if h != q {
                    bits += block_bits(nh, sc, settings)?;
                }
            }
            other_bits.push(bits);
            tti_rows.push(n.tti_row(k));
            p_rows.push(p);
        }
        Ok(Self {
            sc,
            settings,
            q,
            omega,
            tails,
            demand: demand_bits(sc),
            tti_rows,
            p_rows,
            other_bits,
            weights,
        })
    }

    pub fn users(&self) -> usize {
        self.weights.len()
    }

    pub fn block(&self) -> usize {
        self.q
    }

    fn ms_to_symbols(&self, t_ms: f64) -> f64 {
        t_ms * 1e-3 * self.sc.w_hz
    }

    fn symbols_to_ms(&self, n: f64) -> f64 {
        n / self.sc.w_hz * 1e3
    }

    /// Block objective of user `k` (ms) with its `q`-th TTI set to `t_ms`:
    /// `D_k / K + omega min(g_k, 0)^2`.
    pub fn user_objective(&self, k: usize, t_ms: f64) -> Result<f64> {
        let n = self.ms_to_symbols(t_ms);
        let mut tti = self.tti_rows[k].clone();
        let mut p = self.p_rows[k].clone();
        tti[self.q] = t_ms * 1e-3;
        p[self.q] = self.sc.success_prob(n)?;
        let delay = traffic::user_delay(&tti, &p, &self.tails, self.sc.d_p_s)?;
        let slack = self.other_bits[k] + block_bits(n, self.sc, self.settings)? - self.demand;
        let penalty = self.omega * slack.min(0.0).powi(2);
        Ok(1e3 * (delay.access_s() / self.users() as f64 + penalty))
    }

    /// Convex part: linear TTI cost with frozen coefficients.
    pub fn u(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(x, w)| w * x).sum()
    }

    fn v_user(&self, k: usize, y: f64) -> Result<f64> {
        Ok(self.user_objective(k, y)? - self.weights[k] * y)
    }

    /// Non-convex remainder, so that `u(t) + v(t)` is the block objective.
    pub fn v(&self, y: &[f64]) -> Result<f64> {
        (0..y.len()).map(|k| self.v_user(k, y[k])).sum()
    }

    pub fn block_objective(&self, t: &[f64]) -> Result<f64> {
        Ok(self.u(t) + self.v(t)?)
    }

    fn search_bounds_ms(&self) -> (f64, f64) {
        (
            self.symbols_to_ms(self.settings.n_min),
            self.symbols_to_ms(self.settings.n_max),
        )
    }

    /// `argmin_y v_k(y) - lambda y + tau/2 (x - y)^2` over the search interval:
    /// a log-spaced scan (plus the supplied hints) brackets the best point, then
    /// golden-section refines inside the bracket.
    fn y_search(&self, k: usize, x: f64, lambda: f64, tau: f64, hints: &[f64]) -> Result<f64> {
        let (lo, hi) = self.search_bounds_ms();
        // Blocks too short to ever succeed are infinitely costly, not errors.
        let f = |y: f64| -> Result<f64> {
            match self.v_user(k, y) {
                Ok(v) => Ok(v - lambda * y + 0.5 * tau * (x - y).powi(2)),
                Err(Error::InfiniteRetransmission | Error::DegenerateChain { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        };
        let points = self.settings.scan_points.max(3);
        let ratio = (hi / lo).ln();
        let mut grid: Vec<f64> = (0..points)
            .map(|i| lo * (ratio * i as f64 / (points - 1) as f64).exp())
            .collect();
        grid.extend(hints.iter().map(|h| h.clamp(lo, hi)));
        grid.sort_by(f64::total_cmp);
        grid.dedup();

        let mut best = 0;
        let mut best_v = f64::INFINITY;
        for (i, &y) in grid.iter().enumerate() {
            let v = f(y)?;
            if v < best_v {
                best_v = v;
                best = i;
            }
        }
        let mut a = grid[best.saturating_sub(1)];
        let mut b = grid[(best + 1).min(grid.len() - 1)];
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - golden * (b - a);
        let mut d = a + golden * (b - a);
        let mut fc = f(c)?;
        let mut fd = f(d)?;
        for _ in 0..self.settings.golden_iters {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - golden * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + golden * (b - a);
                fd = f(d)?;
            }
        }
        let (mut arg, mut val) = (grid[best], best_v);
        for (y, v) in [(c, fc), (d, fd)] {
            if v < val {
                arg = y;
                val = v;
            }
        }
        Ok(arg)
    }
}

/// Split variables, multipliers and bookkeeping of the current block solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: f64,
    pub omega: f64,
    pub outer_iter: usize,
    pub block: usize,
    pub inner_iter: usize,
    /// Augmented-Lagrangian value after each inner iteration.
    pub trace: Vec<f64>,
    /// `max |x - y|` after each inner iteration.
    pub residuals: Vec<f64>,
}

impl OptimizerState {
    /// Consensus start `x = y = t0`, zero multipliers.
    pub fn start(t0: Vec<f64>, tau: f64, omega: f64, outer_iter: usize, block: usize) -> Self {
        let k = t0.len();
        Self {
            x: t0.clone(),
            y: t0,
            lambda: vec![0.0; k],
            tau,
            omega,
            outer_iter,
            block,
            inner_iter: 0,
            trace: Vec::new(),
            residuals: Vec::new(),
        }
    }

    pub fn primal_residual(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// `u(x) + v(y) + lambda'(x - y) + tau/2 |x - y|^2`.
pub fn augmented_lagrangian(x: &[f64], y: &[f64], lambda: &[f64], tau: f64, ctx: &BlockContext) -> Result<f64> {
    if x.len() != ctx.users() || y.len() != ctx.users() || lambda.len() != ctx.users() {
        return Err(Error::Domain("augmented_lagrangian vectors must have length K".into()));
    }
    let mut inner = 0.0;
    let mut sq = 0.0;
    for ((xi, yi), li) in x.iter().zip(y).zip(lambda) {
        inner += li * (xi - yi);
        sq += (xi - yi).powi(2);
    }
    Ok(ctx.u(x) + ctx.v(y)? + inner + 0.5 * tau * sq)
}

/// Result of one block solve.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutcome {
    /// Best consensus column found, in symbols.
    pub column: Vec<f64>,
    pub inner_iters: usize,
    pub l_value: f64,
    pub primal_residual: f64,
    pub converged: bool,
}

/// Augmented-Lagrangian iterations on block `q` until `L_q` settles.
///
/// `state` must hold the starting point (see [`OptimizerState::start`]).
/// Hitting the inner cap is reported through `converged = false`; the best
/// `y` iterate seen is returned either way.
pub fn admm_block_solve(state: &mut OptimizerState, ctx: &BlockContext) -> Result<BlockOutcome> {
    let settings = ctx.settings;
    let tau = state.tau;
    let users = ctx.users();

    let mut best_y = state.y.clone();
    let mut best_f = ctx.block_objective(&best_y)?;
    let mut prev_l = augmented_lagrangian(&state.x, &state.y, &state.lambda, tau, ctx)?;
    let mut converged = false;

    while state.inner_iter < settings.max_inner {
        state.inner_iter += 1;

        for k in 0..users {
            state.x[k] = (state.y[k] - (ctx.weights[k] + state.lambda[k]) / tau).max(0.0);
        }
        debug_assert!(state.x.iter().all(|v| *v >= 0.0));

        let y_new: Vec<f64> = (0..users)
            .into_par_iter()
            .map(|k| {
                let hints = [state.x[k], state.y[k]];
                ctx.y_search(k, state.x[k], state.lambda[k], tau, &hints)
            })
            .collect::<Result<_>>()?;
        state.y = y_new;

        for k in 0..users {
            state.lambda[k] += tau * (state.x[k] - state.y[k]);
        }

        let l = augmented_lagrangian(&state.x, &state.y, &state.lambda, tau, ctx)?;
        state.trace.push(l);
        let residual = state.primal_residual();
        state.residuals.push(residual);

        let f = ctx.block_objective(&state.y)?;
        if f < best_f {
            best_f = f;
            best_y = state.y.clone();
        }

        if !l.is_finite() {
            return Err(Error::Numerical(format!(
                "augmented Lagrangian became non-finite in block {}",
                ctx.q
            )));
        }
        if (l - prev_l).abs() <= settings.tol_inner && residual <= settings.primal_tol {
            converged = true;
            break;
        }
        prev_l = l;
    }

    Ok(BlockOutcome {
        column: best_y.iter().map(|t| ctx.ms_to_symbols(*t)).collect(),
        inner_iters: state.inner_iter,
        l_value: state.trace.last().copied().unwrap_or(prev_l),
        primal_residual: state.primal_residual(),
        converged,
    })
}

/// One row of the per-block optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub outer_iter: usize,
    pub block: usize,
    pub inner_iters: usize,
    pub l_value: f64,
    /// Accepted penalized objective after this block (s).
    pub objective_s: f64,
    pub max_violation_bits: f64,
    pub accepted: bool,
    pub inner_converged: bool,
    pub primal_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoResult {
    pub n: BlocklengthMatrix,
    pub n_rounded: BlocklengthMatrix,
    pub initial_objective_s: f64,
    /// Penalized objective after each outer iteration (s).
    pub trace: Vec<f64>,
    pub records: Vec<TraceRecord>,
    pub objective_s: f64,
    pub average_delay_ms: f64,
    pub rounded_objective_s: f64,
    pub rounded_delay_ms: f64,
    pub max_violation_bits: f64,
    pub converged: bool,
    pub outer_iters: usize,
    pub epsilon_mode: String,
}

/// Initial matrix with every TTI equal to `settings.n0_tti_ms`.
pub fn default_initial(sc: &Scenario, settings: &OptimizerSettings) -> BlocklengthMatrix {
    sc.fixed_tti(settings.n0_tti_ms * 1e-3)
}

/// Initial matrix with TTIs drawn uniformly from `[lo_ms, hi_ms]`.
pub fn random_initial(sc: &Scenario, seed: u64, lo_ms: f64, hi_ms: f64) -> BlocklengthMatrix {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut n = sc.fixed_tti(1e-3);
    for k in 0..sc.k_users {
        for q in 0..sc.cols() {
            let t_ms = rng.random_range(lo_ms..=hi_ms);
            n.set(k, q, t_ms * 1e-3 * sc.w_hz);
        }
    }
    n
}

/// Alternating optimization over packet-index blocks.
///
/// Each block result is accepted only if it does not increase the penalized
/// objective, so the returned trace is non-increasing. The loop stops when
/// the objective changes by at most `tol_outer_s` over a sweep, or at
/// `max_outer` sweeps with `converged = false`.
pub fn alternating_optimize(
    sc: &Scenario,
    settings: &OptimizerSettings,
    n0: &BlocklengthMatrix,
) -> Result<AoResult> {
    sc.validate()?;
    sc.check_matrix(n0)?;
    if !(settings.tau > 0.0) {
        return Err(Error::Domain("tau must be > 0".into()));
    }
    let omega = settings.omega;
    let mut n = n0.clone();
    let mut objective = penalized_objective(&n, sc, settings, omega)?;
    let initial_objective_s = objective;
    let mut trace = Vec::new();
    let mut records = Vec::new();
    let mut converged = false;
    let mut outer_iters = 0;

    for t in 0..settings.max_outer {
        let sweep_start = objective;
        for q in 0..sc.cols() {
            let ctx = BlockContext::new(q, &n, sc, settings, omega)?;
            let start_col = match settings.init {
                BlockInit::WarmStart => n.column(q),
                BlockInit::Reset => n0.column(q),
            };
            let t0: Vec<f64> = start_col.iter().map(|v| ctx.symbols_to_ms(*v)).collect();
            let mut state = OptimizerState::start(t0, settings.tau, omega, t, q);
            let outcome = admm_block_solve(&mut state, &ctx)?;

            let mut candidate = n.clone();
            candidate.set_column(q, &outcome.column);
            let cand_obj = penalized_objective(&candidate, sc, settings, omega)?;
            if !cand_obj.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite objective in outer iteration {t}, block {q}"
                )));
            }
            let accepted = cand_obj <= objective;
            if accepted {
                n = candidate;
                objective = cand_obj;
            }
            records.push(TraceRecord {
                outer_iter: t,
                block: q,
                inner_iters: outcome.inner_iters,
                l_value: outcome.l_value,
                objective_s: objective,
                max_violation_bits: max_violation_bits(&n, sc, settings)?,
                accepted,
                inner_converged: outcome.converged,
                primal_residual: outcome.primal_residual,
            });
        }
        if let Some(&last) = trace.last() {
            let slack = 1e-6 * (1.0 + f64::abs(last));
            if objective > last + slack {
                return Err(Error::Numerical(format!(
                    "objective increased from {last} to {objective} in outer iteration {t}"
                )));
            }
        }
        trace.push(objective);
        outer_iters = t + 1;
        if (sweep_start - objective).abs() <= settings.tol_outer_s {
            converged = true;
            break;
        }
    }

    let n_rounded = n.rounded();
    let rounded_objective_s = penalized_objective(&n_rounded, sc, settings, omega)?;
    Ok(AoResult {
        average_delay_ms: average_access_delay(&n, sc)?.average_access_ms,
        rounded_delay_ms: average_access_delay(&n_rounded, sc)?.average_access_ms,
        max_violation_bits: max_violation_bits(&n, sc, settings)?,
        n,
        n_rounded,
        initial_objective_s,
        trace,
        records,
        objective_s: objective,
        rounded_objective_s,
        converged,
        outer_iters,
        epsilon_mode: settings.epsilon_mode(),
    })
}

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
mod oracles;
