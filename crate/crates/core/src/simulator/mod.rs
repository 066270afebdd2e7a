//! Seeded Monte Carlo simulation of two-step grant-free access.
//!
//! Time advances in attempt slots. In every slot each user is in a queue
//! state `q`; an active user sends one block of `n[k][q]` symbols with a
//! uniformly drawn preamble. Two active users picking the same preamble both
//! collide. A collision-free block is lost with the error probability of the
//! linearized curve evaluated at a fresh exponential SNR sample. A user with
//! an empty queue sends a status-update block (index 0) when
//! `idle_users_transmit` is set, and draws `Poisson(lambda T_max)` new
//! packets at the end of the slot. A user with `q >= 1` sends its
//! head-of-line packet, which leaves the queue on success or when the
//! retransmission cap is hit. Each user's clock advances by `T[k][q] + D_P`
//! per slot.

pub mod analytic_mode;
pub mod report;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, FbErrorParams};
use crate::blocklength::BlocklengthMatrix;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorModel {
    /// Piecewise-linear error curve (the analytic model's assumption).
    Linearized,
    /// Normal-approximation error without linearization.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSettings {
    /// Attempt slots per user and replication.
    pub horizon: u64,
    pub replications: u32,
    /// Contention-resolution cap on attempts per packet.
    pub cr_max_retx: u32,
    /// Users with an empty queue still contend with a status-update block.
    pub idle_users_transmit: bool,
    pub error_model: ErrorModel,
}

impl Default for SimulatorSettings {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            replications: 1,
            cr_max_retx: 1000,
            idle_users_transmit: true,
            error_model: ErrorModel::Linearized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    /// Integer blocklengths, `K x (q_th + 1)`.
    pub n: BlocklengthMatrix,
    pub settings: SimulatorSettings,
    pub seed: u64,
    /// Packets in every queue at time zero.
    pub initial_queue: usize,
}

impl SimConfig {
    pub fn new(scenario: Scenario, n: BlocklengthMatrix, settings: SimulatorSettings, seed: u64) -> Self {
        Self {
            scenario,
            n,
            settings,
            seed,
            initial_queue: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.scenario.check_matrix(&self.n)?;
        if self.n.entries().iter().any(|v| v.fract() != 0.0) {
            return Err(Error::Domain("simulated blocklengths must be integers".into()));
        }
        let s = &self.settings;
        if s.horizon == 0 || s.replications == 0 || s.cr_max_retx == 0 {
            return Err(Error::Domain(
                "horizon, replications and cr_max_retx must all be >= 1".into(),
            ));
        }
        if self.initial_queue > self.scenario.traffic.q_th {
            return Err(Error::Domain("initial queue exceeds q_th".into()));
        }
        Ok(())
    }
}

/// Mean, 95% half-width and percentiles of a delay sample (ms).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DelaySummary {
    pub count: u64,
    pub mean_ms: f64,
    pub half_width_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

impl DelaySummary {
    fn from_samples(samples_s: &[f64]) -> Self {
        if samples_s.is_empty() {
            return Self::default();
        }
        let mut ms: Vec<f64> = samples_s.iter().map(|v| v * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let count = ms.len();
        let mean = ms.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        let pct = |p: f64| ms[((p * count as f64).ceil() as usize).clamp(1, count) - 1];
        Self {
            count: count as u64,
            mean_ms: mean,
            half_width_ms: 1.96 * (var / count as f64).sqrt(),
            p50_ms: pct(0.50),
            p95_ms: pct(0.95),
            p99_ms: pct(0.99),
        }
    }
}

/// Aggregated simulation counters. Per-(user, state) tables are indexed
/// `[k][q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub users: usize,
    pub states: usize,
    pub slots: u64,
    pub attempts: Vec<Vec<u64>>,
    pub successes: Vec<Vec<u64>>,
    pub collision_free: Vec<u64>,
    /// Sum over a user's attempts of `(1 - 1/M)^(active - 1)` with the
    /// realized number of active users in that slot.
    pub realized_contention: Vec<f64>,
    /// Delivered packets by the state they were served in.
    pub packets_served: Vec<Vec<u64>>,
    /// Attempts spent on those delivered packets.
    pub packet_attempts: Vec<Vec<u64>>,
    pub queue_slots: Vec<Vec<u64>>,
    pub generated: Vec<u64>,
    pub succeeded: Vec<u64>,
    pub dropped_cr: Vec<u64>,
    pub dropped_overflow: Vec<u64>,
    pub still_queued: Vec<u64>,
    pub queuing: DelaySummary,
    pub transmission: DelaySummary,
    pub access: DelaySummary,
}

impl SimStats {
    pub fn success_rate(&self, k: usize, q: usize) -> Option<f64> {
        let a = self.attempts[k][q];
        (a > 0).then(|| self.successes[k][q] as f64 / a as f64)
    }

    /// Mean attempts per delivered packet served in state `q`, pooled over users.
    pub fn mean_attempts_in_state(&self, q: usize) -> Option<f64> {
        let served: u64 = self.packets_served.iter().map(|r| r[q]).sum();
        let spent: u64 = self.packet_attempts.iter().map(|r| r[q]).sum();
        (served > 0).then(|| spent as f64 / served as f64)
    }

    /// Mean attempts per delivered packet over all users and states.
    pub fn mean_attempts(&self) -> Option<f64> {
        let served: u64 = self.packets_served.iter().flatten().sum();
        let spent: u64 = self.packet_attempts.iter().flatten().sum();
        (served > 0).then(|| spent as f64 / served as f64)
    }

    /// Fraction of slots spent in each queue state, pooled over users.
    pub fn queue_distribution(&self) -> Vec<f64> {
        let total: u64 = self.queue_slots.iter().flatten().sum();
        (0..self.states)
            .map(|q| self.queue_slots.iter().map(|r| r[q]).sum::<u64>() as f64 / total as f64)
            .collect()
    }

    pub fn total_dropped(&self) -> u64 {
        self.dropped_cr.iter().sum::<u64>() + self.dropped_overflow.iter().sum::<u64>()
    }

    /// `generated == succeeded + dropped + queued` for every user.
    pub fn conserves_packets(&self) -> bool {
        (0..self.users).all(|k| {
            self.generated[k]
                == self.succeeded[k] + self.dropped_cr[k] + self.dropped_overflow[k] + self.still_queued[k]
        })
    }
}

struct Packet {
    arrival_s: f64,
    first_attempt_s: f64,
    attempts: u32,
}

struct Replica {
    stats: SimStats,
    queuing_s: Vec<f64>,
    transmission_s: Vec<f64>,
}

fn zeros(users: usize, states: usize) -> Vec<Vec<u64>> {
    vec![vec![0; states]; users]
}

fn user_rng(seed: u64, replication: u32, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replication as u64) << 32) | user as u64);
    rng
}

fn run_replication(sc: &SimConfig, replication: u32) -> Result<Replica> {
    let scen = &sc.scenario;
    let users = scen.k_users;
    let states = scen.cols();
    let q_th = scen.traffic.q_th;
    let m_pre = scen.m_pre;
    let settings = &sc.settings;

    let lin: Vec<Vec<FbErrorParams>> = (0..users)
        .map(|k| {
            (0..states)
                .map(|q| analytic::error_linearization(sc.n.get(k, q), scen.b_bits))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let slot_s: Vec<Vec<f64>> = (0..users)
        .map(|k| (0..states).map(|q| sc.n.tti(k, q) + scen.d_p_s).collect())
        .collect();
    let snr_dist = Exp::new(1.0 / scen.channel.snr_avg)
        .map_err(|e| Error::Domain(format!("SNR distribution: {e}")))?;
    let mean_arrivals = scen.traffic.mean_arrivals();
    let arrivals = if mean_arrivals > 0.0 {
        Some(Poisson::new(mean_arrivals).map_err(|e| Error::Domain(format!("arrival distribution: {e}")))?)
    } else {
        None
    };
    let contention_base = 1.0 - 1.0 / m_pre as f64;

    let mut rngs: Vec<ChaCha8Rng> = (0..users).map(|k| user_rng(sc.seed, replication, k)).collect();
    let mut queues: Vec<VecDeque<Packet>> = (0..users)
        .map(|_| {
            (0..sc.initial_queue)
                .map(|_| Packet {
                    arrival_s: 0.0,
                    first_attempt_s: 0.0,
                    attempts: 0,
                })
                .collect()
        })
        .collect();
    let mut clocks = vec![0.0f64; users];

    let mut stats = SimStats {
        users,
        states,
        slots: settings.horizon,
        attempts: zeros(users, states),
        successes: zeros(users, states),
        collision_free: vec![0; users],
        realized_contention: vec![0.0; users],
        packets_served: zeros(users, states),
        packet_attempts: zeros(users, states),
        queue_slots: zeros(users, states),
        generated: vec![sc.initial_queue as u64; users],
        succeeded: vec![0; users],
        dropped_cr: vec![0; users],
        dropped_overflow: vec![0; users],
        still_queued: vec![0; users],
        queuing: DelaySummary::default(),
        transmission: DelaySummary::default(),
        access: DelaySummary::default(),
    };
    let mut queuing_s = Vec::new();
    let mut transmission_s = Vec::new();

    let mut state = vec![0usize; users];
    let mut active = vec![false; users];
    let mut preamble = vec![0usize; users];
    let mut errored = vec![false; users];
    let mut picks = vec![0u32; m_pre];

    for _ in 0..settings.horizon {
        picks.iter_mut().for_each(|c| *c = 0);
        let mut active_count = 0usize;
        for k in 0..users {
            let q = queues[k].len();
            debug_assert!(q <= q_th);
            state[k] = q;
            stats.queue_slots[k][q] += 1;
            active[k] = q > 0 || settings.idle_users_transmit;
            if active[k] {
                let rng = &mut rngs[k];
                preamble[k] = rng.random_range(0..m_pre);
                let snr: f64 = snr_dist.sample(rng);
                let eps = match settings.error_model {
                    ErrorModel::Linearized => lin[k][q].error_at(snr),
                    ErrorModel::Exact => analytic::normal_approx_error(sc.n.get(k, q), scen.b_bits, snr),
                };
                errored[k] = rng.random::<f64>() < eps;
                picks[preamble[k]] += 1;
                active_count += 1;
            }
        }

        for k in 0..users {
            let q = state[k];
            let start = clocks[k];
            clocks[k] += slot_s[k][q];
            let mut success = false;
            if active[k] {
                stats.attempts[k][q] += 1;
                stats.realized_contention[k] += contention_base.powi(active_count as i32 - 1);
                let unique = picks[preamble[k]] == 1;
                if unique {
                    stats.collision_free[k] += 1;
                }
                success = unique && !errored[k];
                if success {
                    stats.successes[k][q] += 1;
                }
            }

            if q == 0 {
                if let Some(dist) = &arrivals {
                    let a = dist.sample(&mut rngs[k]) as u64;
                    stats.generated[k] += a;
                    let room = (q_th - queues[k].len()) as u64;
                    let admitted = a.min(room);
                    stats.dropped_overflow[k] += a - admitted;
                    for _ in 0..admitted {
                        queues[k].push_back(Packet {
                            arrival_s: clocks[k],
                            first_attempt_s: 0.0,
                            attempts: 0,
                        });
                    }
                }
            } else {
                let head = queues[k].front_mut().expect("state q >= 1 has a packet");
                if head.attempts == 0 {
                    head.first_attempt_s = start;
                }
                head.attempts += 1;
                if success {
                    let pkt = queues[k].pop_front().expect("head exists");
                    stats.succeeded[k] += 1;
                    stats.packets_served[k][q] += 1;
                    stats.packet_attempts[k][q] += pkt.attempts as u64;
                    queuing_s.push(pkt.first_attempt_s - pkt.arrival_s);
                    transmission_s.push(clocks[k] - pkt.first_attempt_s);
                } else if head.attempts >= settings.cr_max_retx {
                    queues[k].pop_front();
                    stats.dropped_cr[k] += 1;
                }
            }
        }
    }
    for k in 0..users {
        stats.still_queued[k] = queues[k].len() as u64;
    }
    Ok(Replica {
        stats,
        queuing_s,
        transmission_s,
    })
}

fn add_table(into: &mut [Vec<u64>], from: &[Vec<u64>]) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn add_vec(into: &mut [u64], from: &[u64]) {
    for (x, y) in into.iter_mut().zip(from) {
        *x += y;
    }
}

/// Run every replication (in parallel) and merge the counters in
/// replication order.
pub fn simulate(sc: &SimConfig) -> Result<SimStats> {
    sc.validate()?;
    let replicas: Vec<Replica> = (0..sc.settings.replications)
        .into_par_iter()
        .map(|r| run_replication(sc, r))
        .collect::<Result<_>>()?;

    let mut iter = replicas.into_iter();
    let first = iter.next().expect("at least one replication");
    let mut stats = first.stats;
    let mut queuing = first.queuing_s;
    let mut transmission = first.transmission_s;
    for rep in iter {
        let s = rep.stats;
        stats.slots += s.slots;
        add_table(&mut stats.attempts, &s.attempts);
        add_table(&mut stats.successes, &s.successes);
        add_table(&mut stats.packets_served, &s.packets_served);
        add_table(&mut stats.packet_attempts, &s.packet_attempts);
        add_table(&mut stats.queue_slots, &s.queue_slots);
        add_vec(&mut stats.collision_free, &s.collision_free);
        add_vec(&mut stats.generated, &s.generated);
        add_vec(&mut stats.succeeded, &s.succeeded);
        add_vec(&mut stats.dropped_cr, &s.dropped_cr);
        add_vec(&mut stats.dropped_overflow, &s.dropped_overflow);
        add_vec(&mut stats.still_queued, &s.still_queued);
        for (a, b) in stats.realized_contention.iter_mut().zip(&s.realized_contention) {
            *a += b;
        }
        queuing.extend(rep.queuing_s);
        transmission.extend(rep.transmission_s);
    }
    let access: Vec<f64> = queuing.iter().zip(&transmission).map(|(a, b)| a + b).collect();
    stats.queuing = DelaySummary::from_samples(&queuing);
    stats.transmission = DelaySummary::from_samples(&transmission);
    stats.access = DelaySummary::from_samples(&access);
    Ok(stats)
}
