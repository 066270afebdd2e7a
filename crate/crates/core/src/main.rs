use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adaptive_fb::config::SystemConfig;
use adaptive_fb::error::{Error, Result};
use adaptive_fb::experiment::{self, baseline_label, fmt_sig, ExperimentResult};
use adaptive_fb::simulator::{self, report, SimConfig};
use adaptive_fb::traffic;
use adaptive_fb::BlocklengthMatrix;

#[derive(Parser)]
#[command(name = "afb", version, about = "Access delay analysis and blocklength optimization for grant-free access")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, default_value = "configs/reference.toml")]
    config: PathBuf,
    /// Override `system.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV output.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-user delay breakdown of the fixed-TTI baselines.
    Analyze,
    /// Optimize the blocklength matrix and write it with the trace.
    Optimize,
    /// Simulate a blocklength matrix and write per-(user, state) counters.
    Simulate {
        /// Simulate the optimized matrix instead of a fixed TTI.
        #[arg(long, conflicts_with = "tti_ms")]
        optimized: bool,
        /// Fixed TTI in ms (defaults to the first baseline).
        #[arg(long)]
        tti_ms: Option<f64>,
    },
    /// Run a parameter sweep.
    Sweep {
        #[arg(value_enum)]
        name: SweepName,
    },
    /// Compare simulation against the model; exits 3 on disagreement.
    Validate {
        #[arg(long, conflicts_with = "tti_ms")]
        optimized: bool,
        #[arg(long)]
        tti_ms: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepName {
    SuccessProb,
    BlocklengthProfile,
    DelayVsUsers,
    DelayVsBits,
    All,
}

fn write_table(path: &Path, provenance: &[(String, String)], header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let body = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    let mut out = String::new();
    for (k, v) in provenance {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut bytes = out.into_bytes();
    bytes.extend(body);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn provenance(cfg: &SystemConfig, command: &str) -> Result<Vec<(String, String)>> {
    Ok(vec![
        ("command".into(), command.into()),
        ("config_hash".into(), cfg.hash()?),
        ("seed".into(), cfg.system.seed.to_string()),
        ("code_version".into(), env!("CARGO_PKG_VERSION").into()),
    ])
}

fn sim_matrix(cfg: &SystemConfig, optimized: bool, tti_ms: Option<f64>) -> Result<BlocklengthMatrix> {
    let sc = cfg.scenario()?;
    if optimized {
        return Ok(experiment::optimize_scenario(cfg, &sc)?.n_rounded);
    }
    let t = tti_ms.unwrap_or(cfg.system.baseline_ttis_ms[0]);
    if !(t > 0.0) {
        return Err(Error::config("--tti-ms", "must be > 0"));
    }
    Ok(sc.fixed_tti(t * 1e-3).rounded())
}

fn analyze(cfg: &SystemConfig, out: &Path) -> Result<()> {
    let sc = cfg.scenario()?;
    let mut rows = Vec::new();
    for &t in &cfg.system.baseline_ttis_ms {
        let n = sc.fixed_tti(t * 1e-3);
        let d = traffic::average_access_delay(&n, &sc)?;
        let p = sc.success_prob(n.get(0, 0))?;
        println!("{}: p_suc={} average_access_ms={}", baseline_label(t), fmt_sig(p), fmt_sig(d.average_access_ms));
        for k in 0..sc.k_users {
            rows.push(vec![
                baseline_label(t),
                k.to_string(),
                fmt_sig(p),
                fmt_sig(d.queuing_ms[k]),
                fmt_sig(d.transmission_ms[k]),
                fmt_sig(d.access_ms[k]),
            ]);
        }
    }
    write_table(
        &out.join("analyze.csv"),
        &provenance(cfg, "analyze")?,
        &["scheme", "user", "p_suc", "queuing_ms", "transmission_ms", "access_ms"],
        rows,
    )
}

fn optimize(cfg: &SystemConfig, out: &Path) -> Result<()> {
    let sc = cfg.scenario()?;
    let res = experiment::optimize_scenario(cfg, &sc)?;
    println!(
        "average_access_ms={} (rounded) outer_iters={} converged={} max_violation_bits={} rate_coupling=\"{}\"",
        fmt_sig(res.rounded_delay_ms),
        res.outer_iters,
        res.converged,
        fmt_sig(res.max_violation_bits),
        res.epsilon_mode
    );
    let prov = provenance(cfg, "optimize")?;
    let mut rows = Vec::new();
    for k in 0..res.n_rounded.users() {
        for q in 0..res.n_rounded.cols() {
            rows.push(vec![
                k.to_string(),
                q.to_string(),
                (res.n_rounded.get(k, q) as i64).to_string(),
                fmt_sig(res.n_rounded.tti(k, q) * 1e3),
            ]);
        }
    }
    write_table(&out.join("optimize_blocklengths.csv"), &prov, &["user", "q", "n_symbols", "tti_ms"], rows)?;
    let trace = res
        .records
        .iter()
        .map(|r| {
            vec![
                r.outer_iter.to_string(),
                r.block.to_string(),
                r.inner_iters.to_string(),
                fmt_sig(r.l_value),
                fmt_sig(r.objective_s * 1e3),
                fmt_sig(r.max_violation_bits),
                r.accepted.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join("optimize_trace.csv"),
        &prov,
        &["outer_iter", "block", "inner_iters", "l_value", "objective_ms", "max_violation_bits", "accepted"],
        trace,
    )
}

fn sim_config(cfg: &SystemConfig, optimized: bool, tti_ms: Option<f64>) -> Result<SimConfig> {
    let n = sim_matrix(cfg, optimized, tti_ms)?;
    Ok(SimConfig::new(cfg.scenario()?, n, cfg.simulator.clone(), cfg.system.seed))
}

fn simulate(cfg: &SystemConfig, out: &Path, optimized: bool, tti_ms: Option<f64>) -> Result<()> {
    let sc = sim_config(cfg, optimized, tti_ms)?;
    let stats = simulator::simulate(&sc)?;
    println!("slots={}", stats.slots);
    println!("generated={}", stats.generated.iter().sum::<u64>());
    println!("delivered={}", stats.succeeded.iter().sum::<u64>());
    println!("dropped_cr={}", stats.dropped_cr.iter().sum::<u64>());
    println!("dropped_overflow={}", stats.dropped_overflow.iter().sum::<u64>());
    println!("mean_attempts={}", stats.mean_attempts().map(fmt_sig).unwrap_or_default());
    for (name, d) in [("queuing", stats.queuing), ("transmission", stats.transmission), ("access", stats.access)] {
        println!(
            "{name}_ms mean={} ci95=+-{} p50={} p95={} p99={}",
            fmt_sig(d.mean_ms),
            fmt_sig(d.half_width_ms),
            fmt_sig(d.p50_ms),
            fmt_sig(d.p95_ms),
            fmt_sig(d.p99_ms)
        );
    }
    let mut rows = Vec::new();
    for k in 0..stats.users {
        for q in 0..stats.states {
            rows.push(vec![
                k.to_string(),
                q.to_string(),
                (sc.n.get(k, q) as i64).to_string(),
                stats.queue_slots[k][q].to_string(),
                stats.attempts[k][q].to_string(),
                stats.successes[k][q].to_string(),
                stats.success_rate(k, q).map(fmt_sig).unwrap_or_default(),
                stats.packets_served[k][q].to_string(),
                stats.packet_attempts[k][q].to_string(),
            ]);
        }
    }
    write_table(
        &out.join("simulate_stats.csv"),
        &provenance(cfg, "simulate")?,
        &[
            "user",
            "state",
            "n_symbols",
            "queue_slots",
            "attempts",
            "successes",
            "success_rate",
            "packets_served",
            "packet_attempts",
        ],
        rows,
    )
}

fn validate(cfg: &SystemConfig, out: &Path, optimized: bool, tti_ms: Option<f64>) -> Result<()> {
    let sc = sim_config(cfg, optimized, tti_ms)?;
    let stats = simulator::simulate(&sc)?;
    let rep = report::empirical_vs_analytic_report(&sc, &stats)?;
    rep.write_csv(&out.join("validate.csv"), &provenance(cfg, "validate")?)?;
    println!(
        "max_success_z={} family_limit={} cells_over_{}sigma={}/{}",
        fmt_sig(rep.max_success_z),
        fmt_sig(rep.success_z_family_limit),
        report::SUCCESS_Z_LIMIT,
        rep.success_cells_over_limit,
        rep.success_cells
    );
    println!("mean_attempts_rel_err={}", fmt_sig(rep.attempts_rel_err));
    println!("queue_tv={}", fmt_sig(rep.queue_tv));
    for row in rep.flagged() {
        println!(
            "flagged {} user={:?} state={:?} empirical={} analytic={} z={}",
            row.quantity,
            row.user,
            row.state,
            fmt_sig(row.empirical),
            fmt_sig(row.analytic),
            fmt_sig(row.z)
        );
    }
    if rep.passed {
        println!("validation passed");
        Ok(())
    } else {
        Err(Error::Validation(format!("{} quantities flagged", rep.flagged().count())))
    }
}

fn emit(result: &ExperimentResult, out: &Path) -> Result<()> {
    experiment::emit_csv(result, &out.join(format!("{}.csv", result.id)))?;
    experiment::emit_plot_data(result, &out.join(format!("{}_plot.csv", result.id)))?;
    let failed = result.text_column("status").iter().filter(|s| *s != "ok").count();
    println!("{}: {} rows, {} failed", result.id, result.rows.len(), failed);
    Ok(())
}

fn sweep(cfg: &SystemConfig, out: &Path, name: SweepName) -> Result<()> {
    let e = &cfg.experiment;
    let all = matches!(name, SweepName::All);
    if all || matches!(name, SweepName::SuccessProb) {
        emit(&experiment::run_success_prob_sweep(cfg, &e.n_grid, &e.success_k_grid)?, out)?;
    }
    if all || matches!(name, SweepName::BlocklengthProfile) {
        emit(&experiment::run_blocklength_profile(cfg)?, out)?;
    }
    if all || matches!(name, SweepName::DelayVsUsers) {
        emit(&experiment::run_delay_vs_users(cfg, &e.k_grid)?, out)?;
    }
    if all || matches!(name, SweepName::DelayVsBits) {
        emit(&experiment::run_delay_vs_bits(cfg, &e.b_grid, &e.lambda_list)?, out)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = SystemConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.system.seed = seed;
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    let out = cli.out_dir.as_path();
    experiment::with_threads(cli.threads, || match cli.command {
        Command::Analyze => analyze(&cfg, out),
        Command::Optimize => optimize(&cfg, out),
        Command::Simulate { optimized, tti_ms } => simulate(&cfg, out, optimized, tti_ms),
        Command::Sweep { name } => sweep(&cfg, out, name),
        Command::Validate { optimized, tti_ms } => validate(&cfg, out, optimized, tti_ms),
    })?
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
