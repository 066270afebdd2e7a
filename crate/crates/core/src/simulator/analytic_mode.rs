//! Closed-form predictions for a simulated configuration.
//!
//! Written separately from `traffic` and `analytic`: the stationary
//! distribution uses the product form over all states instead of the
//! balance recursion, and the error curve is evaluated from its definition
//! with plain `powf`/`exp`. Agreement between the two code paths is checked
//! in tests.

use crate::error::{Error, Result};
use crate::simulator::SimConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticEstimate {
    /// Success probability per `[k][q]`.
    pub p_suc: Vec<Vec<f64>>,
    /// Stationary queue distribution per user.
    pub pi: Vec<Vec<f64>>,
    /// Collision-free probability with all K users contending.
    pub collision_free: f64,
    pub queuing_ms: Vec<f64>,
    pub transmission_ms: Vec<f64>,
    pub access_ms: Vec<f64>,
    pub average_access_ms: f64,
}

fn block_error(n: f64, b: f64, s: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mu = (n / (2f64.powf(2.0 * b / n) - 1.0)).sqrt() / (2.0 * pi);
    let beta = 2f64.powf(b / n) - 1.0;
    let g1 = beta - 1.0 / (2.0 * mu);
    let g2 = beta + 1.0 / (2.0 * mu);
    let err = if g1 >= 0.0 {
        1.0 - mu * s * ((-g1 / s).exp() - (-g2 / s).exp())
    } else {
        // Only the part of the ramp above zero SNR contributes.
        let tail = (-g2 / s).exp();
        (0.5 + mu * beta) * (1.0 - tail) - mu * (s * (1.0 - tail) - g2 * tail)
    };
    err.clamp(0.0, 1.0)
}

fn arrival_pmf(mean: f64, q_th: usize) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(q_th + 1);
    let mut term = (-mean).exp();
    for l in 0..=q_th {
        if l > 0 {
            term *= mean / l as f64;
        }
        pmf.push(term);
    }
    pmf
}

pub fn analytic_mode(sc: &SimConfig) -> Result<AnalyticEstimate> {
    sc.validate()?;
    let scen = &sc.scenario;
    let users = scen.k_users;
    let q_th = scen.traffic.q_th;
    let d_p = scen.d_p_s;

    let mut collision_free = 1.0;
    for _ in 1..users {
        collision_free *= 1.0 - 1.0 / scen.m_pre as f64;
    }
    let pmf = arrival_pmf(scen.traffic.lambda_rate * scen.traffic.t_max, q_th);

    let mut out = AnalyticEstimate {
        p_suc: Vec::with_capacity(users),
        pi: Vec::with_capacity(users),
        collision_free,
        queuing_ms: Vec::with_capacity(users),
        transmission_ms: Vec::with_capacity(users),
        access_ms: Vec::with_capacity(users),
        average_access_ms: 0.0,
    };

    for k in 0..users {
        let p: Vec<f64> = (0..=q_th)
            .map(|q| (1.0 - block_error(sc.n.get(k, q), scen.b_bits, scen.channel.snr_avg)) * collision_free)
            .collect();
        if let Some(q) = p.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateChain { state: q });
        }
        let slot: Vec<f64> = (0..=q_th).map(|q| sc.n.get(k, q) / scen.w_hz + d_p).collect();

        // pi_0 = prod p / (prod p + sum_j prod_{r != j} p_r * tail_j),
        // pi_j = pi_0 * tail_j / p_j.
        let prod: f64 = p[1..].iter().product();
        let mut denom = prod;
        for j in 1..=q_th {
            let others: f64 = (1..=q_th).filter(|&r| r != j).map(|r| p[r]).product();
            let tail: f64 = pmf[j..].iter().sum();
            denom += others * tail;
        }
        let pi0 = prod / denom;
        let mut pi = vec![pi0];
        for j in 1..=q_th {
            let tail: f64 = pmf[j..].iter().sum();
            pi.push(pi0 * tail / p[j]);
        }

        let mut queuing = 0.0;
        for q in 1..=q_th {
            let wait: f64 = (0..q).map(|l| slot[l] / p[l]).sum();
            queuing += pi[q] * wait;
        }
        let transmission: f64 = (0..=q_th).map(|q| slot[q] / p[q]).sum();

        out.queuing_ms.push(queuing * 1e3);
        out.transmission_ms.push(transmission * 1e3);
        out.access_ms.push((queuing + transmission) * 1e3);
        out.p_suc.push(p);
        out.pi.push(pi);
    }
    out.average_access_ms = out.access_ms.iter().sum::<f64>() / users as f64;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ChannelParams;
    use crate::blocklength::BlocklengthMatrix;
    use crate::scenario::Scenario;
    use crate::simulator::SimulatorSettings;
    use crate::traffic::{self, TrafficParams};
    use proptest::prelude::*;

    fn scenario(k: usize, q_th: usize, lambda: f64, b: f64) -> Scenario {
        Scenario {
            channel: ChannelParams::from_dbm(-90.0, -90.0).unwrap(),
            traffic: TrafficParams::new(lambda, 1.0, q_th).unwrap(),
            k_users: k,
            m_pre: 20,
            w_hz: 1e6,
            b_bits: b,
            d_p_s: 1e-3,
        }
    }

    proptest! {
        #[test]
        fn matches_model_delay(
            k in 1usize..6,
            q_th in 0usize..6,
            lambda in 0.0f64..3.0,
            b in 10.0f64..400.0,
            seed in any::<u64>(),
        ) {
            let sc = scenario(k, q_th, lambda, b);
            let mut n = crate::optimizer::random_initial(&sc, seed, 0.2, 2.0).rounded();
            for v in 0..k {
                for q in 0..=q_th {
                    n.set(v, q, n.get(v, q).max(50.0));
                }
            }
            let model = traffic::average_access_delay(&n, &sc).unwrap();
            let cfg = SimConfig::new(sc.clone(), n.clone(), SimulatorSettings::default(), 0);
            let est = analytic_mode(&cfg).unwrap();
            let rel = (est.average_access_ms - model.average_access_ms).abs() / model.average_access_ms;
            prop_assert!(rel <= 1e-12, "{} vs {}", est.average_access_ms, model.average_access_ms);
            for v in 0..k {
                let p = sc.success_row(n.row(v)).unwrap();
                for q in 0..=q_th {
                    prop_assert!((p[q] - est.p_suc[v][q]).abs() <= 1e-12);
                }
                let total: f64 = est.pi[v].iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_chain_is_reported() {
        let sc = scenario(2, 2, 1.0, 1e6);
        let n = BlocklengthMatrix::filled(2, 3, 1e6, 100.0);
        let cfg = SimConfig::new(sc, n, SimulatorSettings::default(), 0);
        assert!(matches!(analytic_mode(&cfg), Err(Error::DegenerateChain { .. })));
    }
}
