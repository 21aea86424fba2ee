//! Experiment presets, the replication runner, CSV output and the per-slot
//! scaling benchmark.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{audit_trace, run_horizon, write_trace, AuditError, SimError, Simulator};
use crate::metrics::{aggregate, Metric, MetricsReport, RunMetrics};
use crate::model::{ConfigError, SimConfig};
use crate::plan::RandomnessPlan;
use crate::policies::PolicyKind;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{policy} T={horizon} replication {replication}: {source}")]
    Audit {
        policy: PolicyKind,
        horizon: u32,
        replication: u64,
        source: AuditError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("config: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// EXWSUoI against the horizon.
    Fig4,
    /// Average age, latency and jitter against the horizon.
    Fig5,
    /// Per-policy means of the fig5 metrics over the horizon grid.
    Fig6,
    Custom,
}

impl Preset {
    pub fn metrics(&self) -> &'static [Metric] {
        match self {
            Preset::Fig4 => &[Metric::Exwsuoi],
            Preset::Fig5 | Preset::Fig6 => &[Metric::AvgAoi, Metric::AvgLatency, Metric::RmsJitter],
            Preset::Custom => &Metric::ALL,
        }
    }

    pub fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            preset: *self,
            ..ExperimentSpec::default()
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
            Preset::Custom => "custom",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig4" => Ok(Preset::Fig4),
            "fig5" => Ok(Preset::Fig5),
            "fig6" => Ok(Preset::Fig6),
            "custom" => Ok(Preset::Custom),
            other => Err(format!("unknown preset `{other}` (expected fig4, fig5, fig6 or custom)")),
        }
    }
}

/// Horizon grid `100, 200, ..., 1000`.
pub fn default_horizons() -> Vec<u32> {
    (1..=10).map(|k| k * 100).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub policies: Vec<PolicyKind>,
    pub horizons: Vec<u32>,
    pub out_dir: PathBuf,
    /// Write trace files for the first `trace_reps` replications of each cell.
    pub trace_reps: usize,
    /// `horizon` is ignored; each grid point overrides it.
    pub config: SimConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            preset: Preset::Custom,
            policies: PolicyKind::BUILTIN.to_vec(),
            horizons: default_horizons(),
            out_dir: PathBuf::from("results"),
            trace_reps: 0,
            config: SimConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.policies.is_empty() {
            return Err(ExperimentError::Invalid("policy list is empty".into()));
        }
        if self.horizons.is_empty() {
            return Err(ExperimentError::Invalid("horizon grid is empty".into()));
        }
        if self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::Invalid(format!(
                "horizon grid {:?} must be positive and strictly ascending",
                self.horizons
            )));
        }
        self.config.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    fn config_for(&self, horizon: u32) -> SimConfig {
        SimConfig {
            horizon,
            ..self.config.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub policy: PolicyKind,
    pub horizon: u32,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub cells: Vec<Cell>,
}

impl ExperimentResult {
    pub fn cell(&self, policy: PolicyKind, horizon: u32) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.policy == policy && c.horizon == horizon)
    }

    /// Mean of the per-horizon means of `metric` for `policy`.
    pub fn horizon_mean(&self, policy: PolicyKind, metric: Metric) -> f64 {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.policy == policy)
            .map(|c| c.report.summary(metric).mean)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Runs one replication and audits its trace; optionally persists it.
fn run_replication(
    cfg: &SimConfig,
    policy: PolicyKind,
    replication: u64,
    trace_dir: Option<&Path>,
) -> Result<RunMetrics, ExperimentError> {
    let trace = run_horizon(cfg, &mut *policy.build(cfg.seed, replication), replication)?;
    audit_trace(&trace).map_err(|source| ExperimentError::Audit {
        policy,
        horizon: cfg.horizon,
        replication,
        source,
    })?;
    if let Some(dir) = trace_dir {
        let path = dir.join(format!("{}_T{}_rep{}.jsonl", policy, cfg.horizon, replication));
        let file = File::create(&path).map_err(io_err(&path))?;
        write_trace(&trace, BufWriter::new(file)).map_err(io_err(&path))?;
    }
    Ok(RunMetrics::from_trace(&trace))
}

/// Simulates every (policy, horizon) cell. All policies of a replication share
/// its randomness plan; replications run in parallel and are collected in order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    spec.validate()?;
    let trace_dir = (spec.trace_reps > 0).then(|| spec.out_dir.join("traces"));
    if let Some(dir) = &trace_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut cells = Vec::with_capacity(spec.policies.len() * spec.horizons.len());
    for &policy in &spec.policies {
        for &horizon in &spec.horizons {
            let cfg = spec.config_for(horizon);
            let runs = (0..cfg.replications as u64)
                .into_par_iter()
                .map(|rep| {
                    let dir = trace_dir.as_deref().filter(|_| rep < spec.trace_reps as u64);
                    run_replication(&cfg, policy, rep, dir)
                })
                .collect::<Result<Vec<_>, _>>()?;
            cells.push(Cell {
                policy,
                horizon,
                report: aggregate(runs),
            });
        }
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        cells,
    })
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    policy: &'a str,
    horizon: u32,
    metric: &'a str,
    mean: f64,
    ci95: f64,
    reps: usize,
}

#[derive(Debug, Serialize)]
struct MeanRow<'a> {
    policy: &'a str,
    metric: &'a str,
    mean_over_horizons: f64,
    horizons: usize,
}

/// Writes `metrics.csv` (one row per policy, horizon and metric), plus
/// `horizon_means.csv` for the fig6 preset and the effective `experiment.toml`.
/// Returns the written paths.
pub fn write_outputs(result: &ExperimentResult) -> Result<Vec<PathBuf>, ExperimentError> {
    let dir = &result.spec.out_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let metrics = result.spec.preset.metrics();
    let mut written = Vec::new();

    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for cell in &result.cells {
        for m in metrics {
            let s = cell.report.summary(*m);
            w.serialize(CsvRow {
                policy: cell.policy.name(),
                horizon: cell.horizon,
                metric: m.name(),
                mean: s.mean,
                ci95: s.ci95,
                reps: s.n,
            })?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    if result.spec.preset == Preset::Fig6 {
        let path = dir.join("horizon_means.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for &policy in &result.spec.policies {
            for m in metrics {
                w.serialize(MeanRow {
                    policy: policy.name(),
                    metric: m.name(),
                    mean_over_horizons: result.horizon_mean(policy, *m),
                    horizons: result.spec.horizons.len(),
                })?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    let path = dir.join("experiment.toml");
    fs::write(&path, result.spec.to_toml()?).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub policy: PolicyKind,
    pub flows: usize,
    pub slots: u32,
    pub ns_per_slot: f64,
    pub ns_per_flow_slot: f64,
    /// Measured slot time over the linear extrapolation from the first grid point.
    pub linear_ratio: f64,
}

/// Fastest of `repeats` timings of one full run, in nanoseconds per slot.
/// Records are produced and discarded slot by slot.
pub fn time_per_slot(cfg: &SimConfig, policy: PolicyKind, repeats: usize) -> Result<f64, ExperimentError> {
    cfg.validate()?;
    let plan = RandomnessPlan::seeded(cfg, 0);
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let mut p = policy.build(cfg.seed, 0);
        let mut sim = Simulator::new(cfg, &plan)?;
        let start = Instant::now();
        while !sim.is_done() {
            std::hint::black_box(sim.step(&mut *p)?);
        }
        let ns = start.elapsed().as_nanos() as f64 / cfg.horizon as f64;
        best = best.min(ns);
    }
    Ok(best)
}

/// Per-slot wall time for each policy across an ascending flow-count grid.
pub fn bench(
    base: &SimConfig,
    policies: &[PolicyKind],
    flow_grid: &[usize],
    slots: u32,
    repeats: usize,
) -> Result<Vec<BenchRow>, ExperimentError> {
    if flow_grid.is_empty() || flow_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::Invalid(format!(
            "flow grid {flow_grid:?} must be non-empty and strictly ascending"
        )));
    }
    let mut rows = Vec::new();
    for &policy in policies {
        let mut baseline: Option<(usize, f64)> = None;
        for &flows in flow_grid {
            let cfg = SimConfig {
                flows,
                horizon: slots,
                ..base.clone()
            };
            let ns = time_per_slot(&cfg, policy, repeats)?;
            let (m0, t0) = *baseline.get_or_insert((flows, ns));
            rows.push(BenchRow {
                policy,
                flows,
                slots,
                ns_per_slot: ns,
                ns_per_flow_slot: ns / flows as f64,
                linear_ratio: ns / (t0 * flows as f64 / m0 as f64),
            });
        }
    }
    Ok(rows)
}
