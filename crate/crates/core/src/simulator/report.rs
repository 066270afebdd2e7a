//! Empirical-versus-analytic comparison of a simulation run.

use std::path::Path;

use crate::analytic;
use crate::error::{Error, Result};
use crate::simulator::analytic_mode::{analytic_mode, AnalyticEstimate};
use crate::simulator::{SimConfig, SimStats};

/// Per-test z level for success probabilities. With many (user, state)
/// cells the flag threshold is raised so that the whole family has the
/// false-alarm rate of a single test at this level (Sidak correction).
pub const SUCCESS_Z_LIMIT: f64 = 3.0;
/// Relative error above which the mean attempt count is flagged.
pub const ATTEMPTS_REL_LIMIT: f64 = 0.02;
/// Total-variation distance above which the queue distribution is flagged.
pub const QUEUE_TV_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub quantity: String,
    pub user: Option<usize>,
    pub state: Option<usize>,
    pub samples: u64,
    pub empirical: f64,
    pub analytic: f64,
    pub std_err: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ComparisonRow>,
    pub max_success_z: f64,
    /// Family-wise threshold applied to the success cells.
    pub success_z_family_limit: f64,
    /// Success cells with |z| above the per-test level.
    pub success_cells_over_limit: usize,
    pub success_cells: usize,
    pub attempts_rel_err: f64,
    pub queue_tv: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| r.flagged)
    }

    pub fn write_csv(&self, path: &Path, provenance: &[(String, String)]) -> Result<()> {
        use std::io::Write;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in provenance {
            writeln!(file, "# {k}={v}").map_err(|e| Error::io(path, e))?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["quantity", "user", "state", "samples", "empirical", "analytic", "std_err", "z", "flagged"])?;
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.quantity.clone(),
                opt(r.user),
                opt(r.state),
                r.samples.to_string(),
                crate::experiment::fmt_sig(r.empirical),
                crate::experiment::fmt_sig(r.analytic),
                crate::experiment::fmt_sig(r.std_err),
                crate::experiment::fmt_sig(r.z),
                r.flagged.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// `z` such that `m` independent two-sided tests at `z` have the same
/// family-wise false-alarm rate as one test at `per_test`.
pub fn family_z_limit(per_test: f64, m: usize) -> f64 {
    if m <= 1 {
        return per_test;
    }
    let alpha = 2.0 * analytic::q_function(per_test);
    let per_cell = -((-alpha).ln_1p() / m as f64).exp_m1();
    analytic::inverse_q(per_cell / 2.0).unwrap_or(per_test)
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se > 0.0 {
        diff / se
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Compare simulated counters against the model's predictions.
///
/// Success probabilities use the binomial standard error at the predicted
/// value; attempt counts use the geometric variance `(1 - p) / p^2`.
pub fn empirical_vs_analytic_report(sc: &SimConfig, stats: &SimStats) -> Result<ValidationReport> {
    let est: AnalyticEstimate = analytic_mode(sc)?;
    let users = stats.users;
    let states = stats.states;
    let mut rows = Vec::new();
    let mut max_success_z: f64 = 0.0;

    for k in 0..users {
        for q in 0..states {
            let n = stats.attempts[k][q];
            if n == 0 {
                continue;
            }
            let p = est.p_suc[k][q];
            let emp = stats.successes[k][q] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let z = z_score(emp - p, se);
            max_success_z = max_success_z.max(z.abs());
            rows.push(ComparisonRow {
                quantity: "success_prob".into(),
                user: Some(k),
                state: Some(q),
                samples: n,
                empirical: emp,
                analytic: p,
                std_err: se,
                z,
                flagged: false,
            });
        }
    }
    let success_cells = rows.len();
    let success_z_family_limit = family_z_limit(SUCCESS_Z_LIMIT, success_cells);
    let success_cells_over_limit = rows.iter().filter(|r| r.z.abs() > SUCCESS_Z_LIMIT).count();
    for r in rows.iter_mut() {
        r.flagged = r.z.abs() > success_z_family_limit;
    }

    // Collision-free rate against both the all-users value and the value
    // implied by the realized number of contenders. Informational only.
    for k in 0..users {
        let n: u64 = stats.attempts[k].iter().sum();
        if n == 0 {
            continue;
        }
        let emp = stats.collision_free[k] as f64 / n as f64;
        for (name, p) in [
            ("collision_free", est.collision_free),
            ("collision_free_realized", stats.realized_contention[k] / n as f64),
        ] {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            rows.push(ComparisonRow {
                quantity: name.into(),
                user: Some(k),
                state: None,
                samples: n,
                empirical: emp,
                analytic: p,
                std_err: se,
                z: z_score(emp - p, se),
                flagged: false,
            });
        }
    }

    // Attempts per delivered packet, pooled over users with the realized
    // service mix as weights.
    let mut served_total = 0u64;
    let mut spent_total = 0u64;
    let mut expected_total = 0.0;
    let mut var_total = 0.0;
    for q in 1..states {
        let mut served = 0u64;
        let mut spent = 0u64;
        let mut expected = 0.0;
        let mut var = 0.0;
        for k in 0..users {
            let m = stats.packets_served[k][q];
            let p = est.p_suc[k][q];
            served += m;
            spent += stats.packet_attempts[k][q];
            expected += m as f64 / p;
            var += m as f64 * (1.0 - p) / (p * p);
        }
        served_total += served;
        spent_total += spent;
        expected_total += expected;
        var_total += var;
        if served == 0 {
            continue;
        }
        let emp = spent as f64 / served as f64;
        let mean = expected / served as f64;
        let se = var.sqrt() / served as f64;
        rows.push(ComparisonRow {
            quantity: "mean_attempts".into(),
            user: None,
            state: Some(q),
            samples: served,
            empirical: emp,
            analytic: mean,
            std_err: se,
            z: z_score(emp - mean, se),
            flagged: false,
        });
    }
    let attempts_rel_err = if served_total > 0 {
        let emp = spent_total as f64 / served_total as f64;
        let mean = expected_total / served_total as f64;
        let se = var_total.sqrt() / served_total as f64;
        let rel = (emp - mean).abs() / mean;
        rows.push(ComparisonRow {
            quantity: "mean_attempts".into(),
            user: None,
            state: None,
            samples: served_total,
            empirical: emp,
            analytic: mean,
            std_err: se,
            z: z_score(emp - mean, se),
            flagged: rel > ATTEMPTS_REL_LIMIT,
        });
        rel
    } else {
        0.0
    };

    // Pooled queue-state occupancy.
    let emp_pi = stats.queue_distribution();
    let model_pi: Vec<f64> = (0..states)
        .map(|q| est.pi.iter().map(|p| p[q]).sum::<f64>() / users as f64)
        .collect();
    let slots: u64 = stats.queue_slots.iter().flatten().sum();
    for q in 0..states {
        let p = model_pi[q];
        let se = (p * (1.0 - p) / slots as f64).sqrt();
        rows.push(ComparisonRow {
            quantity: "queue_pi".into(),
            user: None,
            state: Some(q),
            samples: slots,
            empirical: emp_pi[q],
            analytic: p,
            std_err: se,
            z: z_score(emp_pi[q] - p, se),
            flagged: false,
        });
    }
    let queue_tv = 0.5 * emp_pi.iter().zip(&model_pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
    rows.push(ComparisonRow {
        quantity: "queue_tv".into(),
        user: None,
        state: None,
        samples: slots,
        empirical: queue_tv,
        analytic: 0.0,
        std_err: 0.0,
        z: 0.0,
        flagged: queue_tv > QUEUE_TV_LIMIT,
    });

    let model_access = est.average_access_ms;
    rows.push(ComparisonRow {
        quantity: "access_delay_ms".into(),
        user: None,
        state: None,
        samples: stats.access.count,
        empirical: stats.access.mean_ms,
        analytic: model_access,
        std_err: stats.access.half_width_ms / 1.96,
        z: z_score(stats.access.mean_ms - model_access, stats.access.half_width_ms / 1.96),
        flagged: false,
    });

    let passed = !rows.iter().any(|r| r.flagged);
    Ok(ValidationReport {
        rows,
        max_success_z,
        success_z_family_limit,
        success_cells_over_limit,
        success_cells,
        attempts_rel_err,
        queue_tv,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ChannelParams;
    use crate::scenario::Scenario;
    use crate::simulator::{simulate, SimulatorSettings};
    use crate::traffic::TrafficParams;

    fn config(k: usize, lambda: f64, b: f64, horizon: u64) -> SimConfig {
        let sc = Scenario {
            channel: ChannelParams::from_dbm(-90.0, -90.0).unwrap(),
            traffic: TrafficParams::new(lambda, 1.0, 3).unwrap(),
            k_users: k,
            m_pre: 20,
            w_hz: 1e6,
            b_bits: b,
            d_p_s: 1e-3,
        };
        let n = sc.fixed_tti(1e-3);
        SimConfig::new(
            sc,
            n,
            SimulatorSettings {
                horizon,
                ..SimulatorSettings::default()
            },
            11,
        )
    }

    #[test]
    fn consistent_run_passes() {
        let cfg = config(6, 1.0, 100.0, 20_000);
        let stats = simulate(&cfg).unwrap();
        let report = empirical_vs_analytic_report(&cfg, &stats).unwrap();
        assert!(report.passed, "{:?}", report.flagged().collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_run_has_zero_scores() {
        // One user, no arrivals, almost error-free blocks.
        let cfg = config(1, 0.0, 1e-9, 2000);
        let stats = simulate(&cfg).unwrap();
        let report = empirical_vs_analytic_report(&cfg, &stats).unwrap();
        for row in report.rows.iter().filter(|r| r.quantity != "access_delay_ms") {
            assert!(row.z.abs() < 0.05, "{row:?}");
        }
        assert!(report.passed);
    }

    #[test]
    fn injected_fault_is_flagged() {
        let cfg = config(6, 1.0, 100.0, 20_000);
        let stats = simulate(&cfg).unwrap();
        // Predict with a different payload so every cell is biased.
        let mut wrong = cfg.clone();
        wrong.scenario.b_bits = 300.0;
        let report = empirical_vs_analytic_report(&wrong, &stats).unwrap();
        assert!(!report.passed);
        assert!(report.max_success_z > report.success_z_family_limit);
        assert!(report.flagged().any(|r| r.quantity == "success_prob"));
    }

    #[test]
    fn family_limit_matches_single_test_rate() {
        assert_eq!(family_z_limit(3.0, 1), 3.0);
        let m = 120;
        let z = family_z_limit(3.0, m);
        let single = 2.0 * analytic::q_function(3.0);
        let family = 1.0 - (1.0 - 2.0 * analytic::q_function(z)).powi(m as i32);
        assert!((family - single).abs() < 1e-9, "{family} vs {single}");
        assert!(z > 4.0 && z < 4.5);
    }

    #[test]
    fn csv_has_provenance_and_header() {
        let cfg = config(2, 1.0, 100.0, 500);
        let stats = simulate(&cfg).unwrap();
        let report = empirical_vs_analytic_report(&cfg, &stats).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        report.write_csv(&path, &[("seed".into(), "11".into())]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# seed=11"));
        assert!(lines.next().unwrap().starts_with("quantity,user,state"));
    }
}
