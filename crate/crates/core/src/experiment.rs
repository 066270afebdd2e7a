//! Parameter sweeps, CSV persistence and plot-data emission.
//!
//! Grid points are independent jobs run on the current rayon pool and
//! collected in grid order, so the number of threads never changes output.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::analytic;
use crate::blocklength::BlocklengthMatrix;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::optimizer::{self, AoResult};
use crate::scenario::Scenario;
use crate::simulator::{self, SimConfig, SimulatorSettings};
use crate::traffic;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_sig(*v),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub id: String,
    pub parameter: String,
    pub grid: Vec<f64>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub series: Vec<Series>,
    pub provenance: Vec<(String, String)>,
}

impl ExperimentResult {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric column by header name; `None` for empty cells.
    pub fn column(&self, name: &str) -> Vec<Option<f64>> {
        let Some(i) = self.column_index(name) else {
            return Vec::new();
        };
        self.rows.iter().map(|r| r[i].as_f64()).collect()
    }

    pub fn text_column(&self, name: &str) -> Vec<String> {
        let Some(i) = self.column_index(name) else {
            return Vec::new();
        };
        self.rows.iter().map(|r| r[i].render()).collect()
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }
}

/// Six significant digits, shortest representation.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// Label of a fixed-TTI baseline, e.g. `tti_0.5ms`.
pub fn baseline_label(tti_ms: f64) -> String {
    format!("tti_{tti_ms}ms")
}

fn provenance(cfg: &SystemConfig, id: &str, parameter: &str) -> Result<Vec<(String, String)>> {
    Ok(vec![
        ("experiment".into(), id.into()),
        ("parameter".into(), parameter.into()),
        ("config_hash".into(), cfg.hash()?),
        ("seed".into(), cfg.system.seed.to_string()),
        ("code_version".into(), env!("CARGO_PKG_VERSION").into()),
    ])
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} is not finite")))
    }
}

/// Run `f` on a pool with `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config("--threads", e.to_string()))?;
    Ok(pool.install(f))
}

/// Average access delay of every configured fixed-TTI baseline (ms).
pub fn baseline_delays(cfg: &SystemConfig, sc: &Scenario) -> Result<Vec<f64>> {
    cfg.system
        .baseline_ttis_ms
        .iter()
        .map(|&t| {
            let n = sc.fixed_tti(t * 1e-3);
            let d = traffic::average_access_delay(&n, sc)?.average_access_ms;
            finite("baseline delay", d)
        })
        .collect()
}

/// Optimize from the default initial point and check the result is usable.
pub fn optimize_scenario(cfg: &SystemConfig, sc: &Scenario) -> Result<AoResult> {
    let n0 = optimizer::default_initial(sc, &cfg.optimizer);
    let res = optimizer::alternating_optimize(sc, &cfg.optimizer, &n0)?;
    finite("optimized delay", res.rounded_delay_ms)?;
    if !res.n_rounded.entries().iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("optimized blocklengths are not finite".into()));
    }
    Ok(res)
}

/// p_suc over the cartesian product of `k_grid` and `n_grid`.
pub fn run_success_prob_sweep(cfg: &SystemConfig, n_grid: &[f64], k_grid: &[usize]) -> Result<ExperimentResult> {
    if n_grid.is_empty() || k_grid.is_empty() {
        return Err(Error::Domain("success sweep grids must be non-empty".into()));
    }
    let sc = cfg.scenario()?;
    let points: Vec<(usize, f64)> = k_grid
        .iter()
        .flat_map(|&k| n_grid.iter().map(move |&n| (k, n)))
        .collect();
    let values: Vec<Result<f64>> = points
        .par_iter()
        .map(|&(k, n)| {
            let p = analytic::success_prob(n, sc.b_bits, &sc.channel, k, sc.m_pre)?;
            finite("success probability", p)
        })
        .collect();

    let mut rows = Vec::with_capacity(points.len());
    let mut series: Vec<Series> = k_grid
        .iter()
        .map(|k| Series {
            name: format!("K={k}"),
            points: Vec::new(),
        })
        .collect();
    for (i, (&(k, n), v)) in points.iter().zip(values).enumerate() {
        match v {
            Ok(p) => {
                rows.push(vec![Cell::Int(k as i64), Cell::Float(n), Cell::Float(p), Cell::Text("ok".into())]);
                series[i / n_grid.len()].points.push((n, p));
            }
            Err(e) => rows.push(vec![
                Cell::Int(k as i64),
                Cell::Float(n),
                Cell::Empty,
                Cell::Text(format!("failed: {e}")),
            ]),
        }
    }
    Ok(ExperimentResult {
        id: "success-prob".into(),
        parameter: "n_symbols".into(),
        grid: n_grid.to_vec(),
        header: ["k_users", "n_symbols", "p_suc", "status"].map(String::from).to_vec(),
        rows,
        series,
        provenance: provenance(cfg, "success-prob", "n_symbols")?,
    })
}

/// Optimized blocklength per packet index next to the fixed-TTI rows.
pub fn run_blocklength_profile(cfg: &SystemConfig) -> Result<ExperimentResult> {
    let sc = cfg.scenario()?;
    let res = optimize_scenario(cfg, &sc)?;
    let mut schemes: Vec<(String, BlocklengthMatrix)> = vec![("adaptive".into(), res.n_rounded.clone())];
    for &t in &cfg.system.baseline_ttis_ms {
        schemes.push((baseline_label(t), sc.fixed_tti(t * 1e-3).rounded()));
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (name, n) in &schemes {
        for k in 0..n.users() {
            for q in 0..n.cols() {
                rows.push(vec![
                    Cell::Text(name.clone()),
                    Cell::Int(k as i64),
                    Cell::Int(q as i64),
                    Cell::Int(n.get(k, q) as i64),
                    Cell::Float(n.tti(k, q) * 1e3),
                ]);
            }
        }
        series.push(Series {
            name: name.clone(),
            points: (0..n.cols()).map(|q| (q as f64, n.get(0, q))).collect(),
        });
    }
    Ok(ExperimentResult {
        id: "blocklength-profile".into(),
        parameter: "q".into(),
        grid: (0..sc.cols()).map(|q| q as f64).collect(),
        header: ["scheme", "user", "q", "n_symbols", "tti_ms"].map(String::from).to_vec(),
        rows,
        series,
        provenance: provenance(cfg, "blocklength-profile", "q")?,
    })
}

struct DelayPoint {
    adaptive_ms: f64,
    baselines_ms: Vec<f64>,
    n_row: Vec<f64>,
    outer_iters: usize,
    converged: bool,
    sim: Option<simulator::DelaySummary>,
}

fn delay_point(cfg: &SystemConfig, sc: &Scenario, sim_seed: Option<u64>) -> Result<DelayPoint> {
    let baselines_ms = baseline_delays(cfg, sc)?;
    let res = optimize_scenario(cfg, sc)?;
    let sim = match sim_seed {
        Some(seed) if cfg.experiment.sim_horizon > 0 => {
            let settings = SimulatorSettings {
                horizon: cfg.experiment.sim_horizon,
                replications: 1,
                ..cfg.simulator.clone()
            };
            let stats = simulator::simulate(&SimConfig::new(sc.clone(), res.n_rounded.clone(), settings, seed))?;
            Some(stats.access)
        }
        _ => None,
    };
    Ok(DelayPoint {
        adaptive_ms: res.rounded_delay_ms,
        baselines_ms,
        n_row: res.n_rounded.row(0).to_vec(),
        outer_iters: res.outer_iters,
        converged: res.converged,
        sim,
    })
}

fn delay_header(cfg: &SystemConfig, keys: &[&str], with_sim: bool) -> Vec<String> {
    let mut h: Vec<String> = keys.iter().map(|s| s.to_string()).collect();
    h.push("adaptive_delay_ms".into());
    for &t in &cfg.system.baseline_ttis_ms {
        h.push(format!("{}_delay_ms", baseline_label(t)));
    }
    if with_sim {
        h.push("sim_access_ms".into());
        h.push("sim_ci95_ms".into());
    }
    for q in 0..=cfg.traffic.q_th {
        h.push(format!("n_q{q}"));
    }
    h.extend(["outer_iters", "converged", "status"].map(String::from));
    h
}

fn delay_row(mut keys: Vec<Cell>, point: &Result<DelayPoint>, cfg: &SystemConfig, with_sim: bool) -> Vec<Cell> {
    let cols = cfg.traffic.q_th + 1;
    let baselines = cfg.system.baseline_ttis_ms.len();
    match point {
        Ok(p) => {
            keys.push(Cell::Float(p.adaptive_ms));
            keys.extend(p.baselines_ms.iter().map(|&v| Cell::Float(v)));
            if with_sim {
                match &p.sim {
                    Some(s) if s.count > 0 => {
                        keys.push(Cell::Float(s.mean_ms));
                        keys.push(Cell::Float(s.half_width_ms));
                    }
                    _ => keys.extend([Cell::Empty, Cell::Empty]),
                }
            }
            keys.extend(p.n_row.iter().map(|&v| Cell::Int(v as i64)));
            keys.push(Cell::Int(p.outer_iters as i64));
            keys.push(Cell::Text(p.converged.to_string()));
            keys.push(Cell::Text("ok".into()));
        }
        Err(e) => {
            let empties = 1 + baselines + if with_sim { 2 } else { 0 } + cols + 2;
            keys.extend(std::iter::repeat_n(Cell::Empty, empties));
            keys.push(Cell::Text(format!("failed: {e}")));
        }
    }
    keys
}

fn push_delay_series(series: &mut Vec<Series>, cfg: &SystemConfig, suffix: &str, x: f64, point: &Result<DelayPoint>) {
    let Ok(p) = point else { return };
    let mut add = |name: String, y: f64| match series.iter_mut().find(|s| s.name == name) {
        Some(s) => s.points.push((x, y)),
        None => series.push(Series {
            name,
            points: vec![(x, y)],
        }),
    };
    add(format!("adaptive{suffix}"), p.adaptive_ms);
    for (&t, &v) in cfg.system.baseline_ttis_ms.iter().zip(&p.baselines_ms) {
        add(format!("{}{suffix}", baseline_label(t)), v);
    }
    if let Some(s) = p.sim.as_ref().filter(|s| s.count > 0) {
        add(format!("simulated{suffix}"), s.mean_ms);
    }
}

/// Adaptive and fixed-TTI delay for each number of users, with a simulated
/// check of the adaptive point.
pub fn run_delay_vs_users(cfg: &SystemConfig, k_grid: &[usize]) -> Result<ExperimentResult> {
    if k_grid.is_empty() {
        return Err(Error::Domain("k_grid must be non-empty".into()));
    }
    let base = cfg.scenario()?;
    let points: Vec<Result<DelayPoint>> = k_grid
        .par_iter()
        .enumerate()
        .map(|(i, &k)| {
            let sc = Scenario { k_users: k, ..base.clone() };
            delay_point(cfg, &sc, Some(cfg.system.seed.wrapping_add(i as u64)))
        })
        .collect();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (&k, p) in k_grid.iter().zip(&points) {
        rows.push(delay_row(vec![Cell::Int(k as i64)], p, cfg, true));
        push_delay_series(&mut series, cfg, "", k as f64, p);
    }
    Ok(ExperimentResult {
        id: "delay-vs-users".into(),
        parameter: "k_users".into(),
        grid: k_grid.iter().map(|&k| k as f64).collect(),
        header: delay_header(cfg, &["k_users"], true),
        rows,
        series,
        provenance: provenance(cfg, "delay-vs-users", "k_users")?,
    })
}

/// Adaptive and fixed-TTI delay over payload size for each arrival rate.
pub fn run_delay_vs_bits(cfg: &SystemConfig, b_grid: &[f64], lambda_list: &[f64]) -> Result<ExperimentResult> {
    if b_grid.is_empty() || lambda_list.is_empty() {
        return Err(Error::Domain("b_grid and lambda_list must be non-empty".into()));
    }
    let base = cfg.scenario()?;
    let grid: Vec<(f64, f64)> = lambda_list
        .iter()
        .flat_map(|&l| b_grid.iter().map(move |&b| (l, b)))
        .collect();
    let points: Vec<Result<DelayPoint>> = grid
        .par_iter()
        .map(|&(lambda, b)| {
            let mut sc = Scenario { b_bits: b, ..base.clone() };
            sc.traffic.lambda_rate = lambda;
            delay_point(cfg, &sc, None)
        })
        .collect();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (&(lambda, b), p) in grid.iter().zip(&points) {
        rows.push(delay_row(vec![Cell::Float(lambda), Cell::Float(b)], p, cfg, false));
        push_delay_series(&mut series, cfg, &format!(" lambda={lambda}"), b, p);
    }
    Ok(ExperimentResult {
        id: "delay-vs-bits".into(),
        parameter: "b_bits".into(),
        grid: b_grid.to_vec(),
        header: delay_header(cfg, &["lambda_rate", "b_bits"], false),
        rows,
        series,
        provenance: provenance(cfg, "delay-vs-bits", "b_bits")?,
    })
}

fn write_with_provenance(path: &Path, provenance: &[(String, String)], body: Vec<u8>) -> Result<()> {
    let mut out = Vec::new();
    for (k, v) in provenance {
        writeln!(out, "# {k}={v}").expect("write to memory");
    }
    out.extend(body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Table CSV: `# key=value` provenance lines, then the header and one row per
/// grid point.
pub fn emit_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&result.header)?;
    for row in &result.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    let body = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    write_with_provenance(path, &result.provenance, body)
}

/// Plot data in long form: `series,x,y`.
pub fn emit_plot_data(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "x", "y"])?;
    for s in &result.series {
        for &(x, y) in &s.points {
            w.write_record([s.name.clone(), fmt_sig(x), fmt_sig(y)])?;
        }
    }
    let body = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    write_with_provenance(path, &result.provenance, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SystemConfig {
        let mut cfg = SystemConfig::from_toml_str(
            r#"
[system]
k_users = 4
m_pre = 20
w_hz = 1e6
p0_dbm = -90.0
noise_dbm = -90.0
b_bits = 100.0
d_p_ms = 1.0

[traffic]
lambda_rate = 1.0
q_th = 2
"#,
        )
        .unwrap();
        cfg.experiment.sim_horizon = 2000;
        cfg
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(36.573149), "36.5731");
        assert_eq!(fmt_sig(1000.0), "1000");
        assert_eq!(fmt_sig(0.000123456789), "0.000123457");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(-2.5), "-2.5");
        assert_eq!(fmt_sig(123456789.0), "123457000");
    }

    #[test]
    fn success_sweep_is_cartesian() {
        let cfg = small_config();
        let r = run_success_prob_sweep(&cfg, &[100.0, 200.0, 300.0], &[5, 10]).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.series.len(), 2);
        assert!(run_success_prob_sweep(&cfg, &[], &[5]).is_err());
    }

    #[test]
    fn delay_sweep_has_fixed_columns() {
        let cfg = small_config();
        let r = run_delay_vs_users(&cfg, &[2, 4]).unwrap();
        assert_eq!(r.header.len(), r.rows[0].len());
        assert_eq!(r.text_column("status"), vec!["ok", "ok"]);
        assert!(r.column("sim_access_ms").iter().all(|v| v.is_some()));
        let adaptive = r.column("adaptive_delay_ms");
        let lte = r.column("tti_1ms_delay_ms");
        for (a, l) in adaptive.iter().zip(&lte) {
            assert!(a.unwrap() <= l.unwrap());
        }
    }

    #[test]
    fn csv_is_reproducible_across_thread_counts() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let one = dir.path().join("one.csv");
        let many = dir.path().join("many.csv");
        let r1 = with_threads(Some(1), || run_delay_vs_bits(&cfg, &[50.0, 150.0], &[0.2, 0.4]))
            .unwrap()
            .unwrap();
        let r4 = with_threads(Some(4), || run_delay_vs_bits(&cfg, &[50.0, 150.0], &[0.2, 0.4]))
            .unwrap()
            .unwrap();
        emit_csv(&r1, &one).unwrap();
        emit_csv(&r4, &many).unwrap();
        assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&many).unwrap());
        let text = std::fs::read_to_string(&one).unwrap();
        assert!(text.starts_with("# experiment=delay-vs-bits\n"));
        assert!(text.contains(&format!("# config_hash={}", cfg.hash().unwrap())));
        assert!(text.contains("\nlambda_rate,b_bits,adaptive_delay_ms,"));
    }

    #[test]
    fn plot_data_is_long_form() {
        let cfg = small_config();
        let r = run_blocklength_profile(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.csv");
        emit_plot_data(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], "series,x,y");
        assert_eq!(body.len(), 1 + 3 * 3);
        assert!(body.contains(&"tti_1ms,0,1000"));
        assert!(body.contains(&"tti_0.5ms,2,500"));
    }
}
