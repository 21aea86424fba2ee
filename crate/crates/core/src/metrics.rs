//! Trace metrics and their Monte Carlo aggregation.

use serde::{Deserialize, Serialize};

use crate::engine::Trace;
use crate::model::Mode;

/// Objective value of one run: `alpha / (T M)` times the utility summed over
/// the active set of every slot. Its mean over replications is EXWSUoI.
pub fn objective_value(trace: &Trace) -> f64 {
    let total: f64 = trace.records.iter().map(|r| r.active_utility()).sum();
    trace.config.weight * total / normalizer(trace)
}

fn normalizer(trace: &Trace) -> f64 {
    trace.records.len() as f64 * trace.config.flows as f64
}

/// Mean age over every flow and slot, whatever the flow's mode.
pub fn average_aoi(trace: &Trace) -> f64 {
    let total: i64 = trace
        .records
        .iter()
        .flat_map(|r| r.flows.iter().map(|f| f.age))
        .sum();
    total as f64 / normalizer(trace)
}

/// Mean latency; inactive flows count as zero, out-of-service flows keep
/// accumulating latency.
pub fn average_latency(trace: &Trace) -> f64 {
    let total: i64 = trace
        .records
        .iter()
        .flat_map(|r| r.flows.iter().map(|f| f.latency))
        .sum();
    total as f64 / normalizer(trace)
}

/// Communication delays `L + 1` of every sample served in the trace.
pub fn served_delays(trace: &Trace) -> Vec<i64> {
    trace
        .records
        .iter()
        .filter_map(|r| r.served_latency())
        .map(|l| l + 1)
        .collect()
}

/// Population standard deviation of the delays of served samples; 0 when
/// nothing was served.
pub fn rms_jitter(trace: &Trace) -> f64 {
    population_std(&served_delays(trace))
}

pub fn population_std(values: &[i64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<i64>() as f64 / n;
    let ss: f64 = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    (ss / n).sqrt()
}

pub fn drop_count(trace: &Trace) -> usize {
    trace.records.iter().filter(|r| r.dropped_id.is_some()).count()
}

/// Lower bounds `L + 1` on the delay of samples still waiting at the end of
/// the horizon. Kept apart from the jitter population.
pub fn censored_delays(trace: &Trace) -> Vec<i64> {
    let end = trace.records.len() as i64 + 1;
    trace
        .terminal
        .iter()
        .filter(|f| f.mode == Mode::Active && !f.dropped)
        .map(|f| end - 1 - f.arrival + 1)
        .collect()
}

/// Metrics of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub exwsuoi: f64,
    pub avg_aoi: f64,
    pub avg_latency: f64,
    pub rms_jitter: f64,
    pub drop_count: usize,
    pub samples_served: usize,
    pub censored_samples: usize,
    pub censored_delay_mean: f64,
}

impl RunMetrics {
    pub fn from_trace(trace: &Trace) -> Self {
        let delays = served_delays(trace);
        let censored = censored_delays(trace);
        let censored_delay_mean = if censored.is_empty() {
            0.0
        } else {
            censored.iter().sum::<i64>() as f64 / censored.len() as f64
        };
        Self {
            exwsuoi: objective_value(trace),
            avg_aoi: average_aoi(trace),
            avg_latency: average_latency(trace),
            rms_jitter: population_std(&delays),
            drop_count: drop_count(trace),
            samples_served: delays.len(),
            censored_samples: censored.len(),
            censored_delay_mean,
        }
    }
}

/// Mean and normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "summary of an empty sample");
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci95 = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        };
        Self { mean, ci95, n }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Exwsuoi,
    AvgAoi,
    AvgLatency,
    RmsJitter,
    Drops,
    Served,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Exwsuoi,
        Metric::AvgAoi,
        Metric::AvgLatency,
        Metric::RmsJitter,
        Metric::Drops,
        Metric::Served,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Exwsuoi => "exwsuoi",
            Metric::AvgAoi => "avg_aoi",
            Metric::AvgLatency => "avg_latency",
            Metric::RmsJitter => "rms_jitter",
            Metric::Drops => "drops",
            Metric::Served => "served",
        }
    }

    pub fn of(&self, run: &RunMetrics) -> f64 {
        match self {
            Metric::Exwsuoi => run.exwsuoi,
            Metric::AvgAoi => run.avg_aoi,
            Metric::AvgLatency => run.avg_latency,
            Metric::RmsJitter => run.rms_jitter,
            Metric::Drops => run.drop_count as f64,
            Metric::Served => run.samples_served as f64,
        }
    }
}

/// Per-replication metrics plus their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: Vec<RunMetrics>,
    pub exwsuoi: Summary,
    pub avg_aoi: Summary,
    pub avg_latency: Summary,
    pub rms_jitter: Summary,
    pub drops: Summary,
    pub served: Summary,
    pub total_drops: usize,
}

impl MetricsReport {
    pub fn summary(&self, metric: Metric) -> Summary {
        match metric {
            Metric::Exwsuoi => self.exwsuoi,
            Metric::AvgAoi => self.avg_aoi,
            Metric::AvgLatency => self.avg_latency,
            Metric::RmsJitter => self.rms_jitter,
            Metric::Drops => self.drops,
            Metric::Served => self.served,
        }
    }
}

/// Folds per-replication metrics into a report.
pub fn aggregate(runs: Vec<RunMetrics>) -> MetricsReport {
    let col = |m: Metric| Summary::of(&runs.iter().map(|r| m.of(r)).collect::<Vec<_>>());
    MetricsReport {
        exwsuoi: col(Metric::Exwsuoi),
        avg_aoi: col(Metric::AvgAoi),
        avg_latency: col(Metric::AvgLatency),
        rms_jitter: col(Metric::RmsJitter),
        drops: col(Metric::Drops),
        served: col(Metric::Served),
        total_drops: runs.iter().map(|r| r.drop_count).sum(),
        runs,
    }
}
