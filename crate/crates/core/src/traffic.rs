//! Poisson traffic, the per-user queue-length Markov chain and the delay
//! expressions built on its steady state.
//!
//! Conventions: queue states run `0..=q_th`; rows of TTIs and success
//! probabilities are indexed the same way. The Poisson tail used by the chain
//! is truncated at `q_th` (mass above the buffer is dropped), and the
//! transmission delay sums over every state including `q = 0`.

use crate::blocklength::BlocklengthMatrix;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    /// Packet arrival rate (packets/s).
    pub lambda_rate: f64,
    /// Arrival observation window (s).
    pub t_max: f64,
    /// Maximum queue length.
    pub q_th: usize,
}

impl TrafficParams {
    pub fn new(lambda_rate: f64, t_max: f64, q_th: usize) -> Result<Self> {
        if !(lambda_rate >= 0.0 && lambda_rate.is_finite()) {
            return Err(Error::Domain(format!("lambda_rate must be >= 0, got {lambda_rate}")));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::Domain(format!("t_max must be > 0, got {t_max}")));
        }
        Ok(Self {
            lambda_rate,
            t_max,
            q_th,
        })
    }

    /// Expected arrivals per observation window, `lambda * T_max`.
    pub fn mean_arrivals(&self) -> f64 {
        self.lambda_rate * self.t_max
    }

    /// Truncated tails `sum_{l=q}^{q_th} p_gen(l)` for `q = 0..=q_th`.
    pub fn tails(&self) -> Vec<f64> {
        let mut tails = vec![0.0; self.q_th + 1];
        let mut acc = 0.0;
        for q in (0..=self.q_th).rev() {
            acc += poisson_pmf(self, q);
            tails[q] = acc;
        }
        tails
    }

    /// Expected number of arrivals counted up to the buffer size,
    /// `sum_{a=0}^{q_th} a p_gen(a)`.
    pub fn truncated_mean_arrivals(&self) -> f64 {
        (0..=self.q_th).map(|a| a as f64 * poisson_pmf(self, a)).sum()
    }
}

/// Stationary distribution of one user's queue length.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub pi: Vec<f64>,
}

impl SteadyState {
    pub fn q_th(&self) -> usize {
        self.pi.len() - 1
    }
}

/// Delay components per user, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBreakdown {
    pub queuing_ms: Vec<f64>,
    pub transmission_ms: Vec<f64>,
    /// Share of queuing + transmission spent in propagation/processing.
    pub overhead_ms: Vec<f64>,
    pub access_ms: Vec<f64>,
    pub average_queuing_ms: f64,
    pub average_transmission_ms: f64,
    pub average_access_ms: f64,
}

/// Delay components of a single user, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserDelay {
    pub queuing_s: f64,
    pub transmission_s: f64,
    pub overhead_s: f64,
}

impl UserDelay {
    pub fn access_s(&self) -> f64 {
        self.queuing_s + self.transmission_s
    }
}

/// Poisson PMF of `a` arrivals in one window, evaluated in log-space.
pub fn poisson_pmf(tp: &TrafficParams, a: usize) -> f64 {
    let mean = tp.mean_arrivals();
    if mean == 0.0 {
        return if a == 0 { 1.0 } else { 0.0 };
    }
    let af = a as f64;
    (-mean + af * mean.ln() - libm::lgamma(af + 1.0)).exp()
}

/// Truncated tail `sum_{l=q}^{q_th} p_gen(l)` for `1 <= q <= q_th`.
pub fn poisson_tail(tp: &TrafficParams, q: usize) -> Result<f64> {
    if q == 0 || q > tp.q_th {
        return Err(Error::Domain(format!(
            "poisson_tail needs 1 <= q <= {}, got {q}",
            tp.q_th
        )));
    }
    Ok((q..=tp.q_th).map(|l| poisson_pmf(tp, l)).sum())
}

/// Steady state of the queue chain.
///
/// `p_suc[i]` is the success probability in state `i + 1`, i.e. the slice
/// covers states `1..=q_th`.
pub fn steady_state(p_suc: &[f64], tp: &TrafficParams) -> Result<SteadyState> {
    if p_suc.len() != tp.q_th {
        return Err(Error::Domain(format!(
            "steady_state expects {} success probabilities, got {}",
            tp.q_th,
            p_suc.len()
        )));
    }
    steady_state_from_tails(p_suc, &tp.tails())
}

/// `pi_0 = 1 / (1 + sum_j tail_j / p_j)`, `pi_q = pi_0 tail_q / p_q`.
pub(crate) fn steady_state_from_tails(p_suc: &[f64], tails: &[f64]) -> Result<SteadyState> {
    debug_assert_eq!(p_suc.len() + 1, tails.len());
    let mut ratios = Vec::with_capacity(p_suc.len());
    for (i, &p) in p_suc.iter().enumerate() {
        if p == 0.0 {
            return Err(Error::DegenerateChain { state: i + 1 });
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!(
                "success probability of state {} must be in (0,1], got {p}",
                i + 1
            )));
        }
        ratios.push(tails[i + 1] / p);
    }
    let pi0 = 1.0 / (1.0 + ratios.iter().sum::<f64>());
    let mut pi = Vec::with_capacity(tails.len());
    pi.push(pi0);
    pi.extend(ratios.iter().map(|r| pi0 * r));
    Ok(SteadyState { pi })
}

/// Mean of the geometric attempt count, `1 / p_suc`.
pub fn expected_retransmissions(p_suc: f64) -> Result<f64> {
    if p_suc == 0.0 {
        return Err(Error::InfiniteRetransmission);
    }
    if !(p_suc > 0.0 && p_suc <= 1.0) {
        return Err(Error::Domain(format!("p_suc must be in (0,1], got {p_suc}")));
    }
    Ok(1.0 / p_suc)
}

fn check_rows(tti_row: &[f64], p_suc_row: &[f64]) -> Result<()> {
    if tti_row.len() != p_suc_row.len() || tti_row.is_empty() {
        return Err(Error::Domain(format!(
            "row lengths disagree: {} TTIs vs {} success probabilities",
            tti_row.len(),
            p_suc_row.len()
        )));
    }
    Ok(())
}

/// `sum_{q=1}^{q_th} pi_q sum_{l=0}^{q-1} (T_l + D_P) E[X_l]`, in the units of
/// the inputs.
pub fn queuing_delay(tti_row: &[f64], p_suc_row: &[f64], pi: &SteadyState, d_p: f64) -> Result<f64> {
    check_rows(tti_row, p_suc_row)?;
    if pi.pi.len() != tti_row.len() {
        return Err(Error::Domain("steady state and rows disagree in length".into()));
    }
    let mut total = 0.0;
    let mut ahead = 0.0;
    for q in 1..tti_row.len() {
        ahead += (tti_row[q - 1] + d_p) * expected_retransmissions(p_suc_row[q - 1])?;
        total += pi.pi[q] * ahead;
    }
    Ok(total)
}

/// `sum_{q=0}^{q_th} (T_q + D_P) E[X_q]`.
pub fn transmission_delay(tti_row: &[f64], p_suc_row: &[f64], d_p: f64) -> Result<f64> {
    check_rows(tti_row, p_suc_row)?;
    tti_row
        .iter()
        .zip(p_suc_row)
        .map(|(t, &p)| Ok((t + d_p) * expected_retransmissions(p)?))
        .sum()
}

/// Delay of one user from its TTI row (seconds), success row and the
/// truncated arrival tails. Every delay figure in the crate goes through here.
pub fn user_delay(tti_row: &[f64], p_suc_row: &[f64], tails: &[f64], d_p: f64) -> Result<UserDelay> {
    check_rows(tti_row, p_suc_row)?;
    if tails.len() != tti_row.len() {
        return Err(Error::Domain("tails and rows disagree in length".into()));
    }
    let ss = steady_state_from_tails(&p_suc_row[1..], tails)?;
    let queuing_s = queuing_delay(tti_row, p_suc_row, &ss, d_p)?;
    let transmission_s = transmission_delay(tti_row, p_suc_row, d_p)?;

    let zero_tti = vec![0.0; tti_row.len()];
    let overhead_s = queuing_delay(&zero_tti, p_suc_row, &ss, d_p)?
        + transmission_delay(&zero_tti, p_suc_row, d_p)?;
    Ok(UserDelay {
        queuing_s,
        transmission_s,
        overhead_s,
    })
}

/// Delay of user `k` under blocklength matrix `n`.
pub fn access_delay(n: &BlocklengthMatrix, k: usize, sc: &Scenario) -> Result<UserDelay> {
    let p_suc = sc.success_row(n.row(k))?;
    user_delay(&n.tti_row(k), &p_suc, &sc.traffic.tails(), sc.d_p_s)
}

/// Per-user and user-averaged access delay; the optimizer's objective.
pub fn average_access_delay(n: &BlocklengthMatrix, sc: &Scenario) -> Result<DelayBreakdown> {
    sc.check_matrix(n)?;
    let tails = sc.traffic.tails();
    let mut out = DelayBreakdown {
        queuing_ms: Vec::with_capacity(n.users()),
        transmission_ms: Vec::with_capacity(n.users()),
        overhead_ms: Vec::with_capacity(n.users()),
        access_ms: Vec::with_capacity(n.users()),
        average_queuing_ms: 0.0,
        average_transmission_ms: 0.0,
        average_access_ms: 0.0,
    };
    for k in 0..n.users() {
        let p_suc = sc.success_row(n.row(k))?;
        let d = user_delay(&n.tti_row(k), &p_suc, &tails, sc.d_p_s)?;
        out.queuing_ms.push(d.queuing_s * 1e3);
        out.transmission_ms.push(d.transmission_s * 1e3);
        out.overhead_ms.push(d.overhead_s * 1e3);
        out.access_ms.push(d.access_s() * 1e3);
    }
    let users = n.users() as f64;
    out.average_queuing_ms = out.queuing_ms.iter().sum::<f64>() / users;
    out.average_transmission_ms = out.transmission_ms.iter().sum::<f64>() / users;
    out.average_access_ms = out.access_ms.iter().sum::<f64>() / users;
    Ok(out)
}

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
mod oracles;
