//! Brute-force verification on desk-scale instances.
//!
//! [`enumerate_max`] explores every admissible decision sequence of a small
//! instance by forking the engine's [`Simulator`], so grace, drops and age
//! evolution are exactly the engine's. The ordering and dominance checks scan ordinary traces.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_with_plan, SimError, Simulator, SlotRecord, Trace};
use crate::model::{FlowId, Mode, SimConfig, SlotRange};
use crate::plan::{keyed_rng, DrawSource, DrawTable, InitialFlow, RandomnessPlan};
use crate::policies::{hlf_d, PolicyDecision, PolicyKind, Scripted};

pub const MAX_FLOWS: usize = 4;
pub const MAX_SLOTS: usize = 8;
const TOLERANCE: f64 = 1e-12;
const KEEP_SCHEDULES: usize = 32;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large: {flows} flows x {slots} slots ({sequences} decision sequences); limit is {MAX_FLOWS} flows and {MAX_SLOTS} slots")]
    TooLarge {
        flows: usize,
        slots: usize,
        sequences: u128,
    },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("traces come from different randomness plans ({0:#x} vs {1:#x})")]
    PlanMismatch(u64, u64),
    #[error("traces have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("witness file: {0}")]
    Io(#[from] std::io::Error),
    #[error("witness file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Explicit small instance: channel bits, `c`/`d` tables and initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallInstance {
    pub config: SimConfig,
    pub plan: RandomnessPlan,
}

impl SmallInstance {
    /// `actuation[i][k]` is `c_{i+1}(k)`, `rel_deadline[i][k]` is `d_{i+1}(k)`;
    /// both need `T + 2` entries per flow.
    pub fn new(
        channel: Vec<bool>,
        actuation: Vec<Vec<i64>>,
        rel_deadline: Vec<Vec<i64>>,
        initial: Vec<InitialFlow>,
    ) -> Result<Self, OracleError> {
        let config = SimConfig {
            flows: initial.len(),
            horizon: channel.len() as u32,
            replications: 1,
            ..SimConfig::default()
        };
        let inst = Self {
            config,
            plan: RandomnessPlan {
                channel,
                draws: DrawSource::Table(DrawTable {
                    actuation,
                    rel_deadline,
                }),
                initial,
            },
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn flows(&self) -> usize {
        self.config.flows
    }

    pub fn slots(&self) -> usize {
        self.config.horizon as usize
    }

    /// Upper bound on decision sequences, idle included.
    pub fn sequence_bound(&self) -> u128 {
        (self.flows() as u128 + 1).saturating_pow(self.slots() as u32)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let (m, t) = (self.flows(), self.slots());
        if m > MAX_FLOWS || t > MAX_SLOTS {
            return Err(OracleError::TooLarge {
                flows: m,
                slots: t,
                sequences: self.sequence_bound(),
            });
        }
        let bad = |msg: String| Err(OracleError::Invalid(msg));
        if m == 0 || t == 0 {
            return bad("needs at least one flow and one slot".into());
        }
        if self.plan.flows() != m || self.plan.horizon() != t {
            return bad("plan size does not match config".into());
        }
        let DrawSource::Table(table) = &self.plan.draws else {
            return bad("small instances need explicit draw tables".into());
        };
        if table.actuation.len() != m || table.rel_deadline.len() != m {
            return bad("draw tables need one row per flow".into());
        }
        for i in 0..m {
            if table.actuation[i].len() < t + 2 || table.rel_deadline[i].len() < t + 2 {
                return bad(format!("flow {}: draw rows need {} entries", i + 1, t + 2));
            }
            if table.actuation[i].iter().any(|&c| c < 0) {
                return bad(format!("flow {}: negative actuation", i + 1));
            }
            if table.rel_deadline[i][1..].iter().any(|&d| d < 1) {
                return bad(format!("flow {}: relative deadline below 1", i + 1));
            }
            let init = self.plan.initial[i];
            if init.actuation_prev != table.actuation[i][0] {
                return bad(format!("flow {}: initial c must equal c(0)", i + 1));
            }
            let limit = init.actuation_prev + table.rel_deadline[i][1];
            if init.age < 1 || init.age > limit {
                return bad(format!("flow {}: initial age outside [1, {limit}]", i + 1));
            }
        }
        self.config.validate().map_err(|e| OracleError::Invalid(e.to_string()))
    }

    /// Random instance with `c`/`d` drawn from the given ranges and initial
    /// age uniform below the first threshold. `channel` fixes the ON/OFF
    /// pattern; otherwise it is Bernoulli(`p_on`).
    pub fn random(
        rng: &mut impl Rng,
        flows: usize,
        slots: usize,
        actuation: SlotRange,
        rel_deadline: SlotRange,
        channel: Option<Vec<bool>>,
        p_on: f64,
    ) -> Result<Self, OracleError> {
        let channel = channel.unwrap_or_else(|| (0..slots).map(|_| rng.gen_bool(p_on)).collect());
        let mut c_rows = Vec::with_capacity(flows);
        let mut d_rows = Vec::with_capacity(flows);
        let mut initial = Vec::with_capacity(flows);
        for _ in 0..flows {
            let c: Vec<i64> = (0..slots + 2)
                .map(|_| rng.gen_range(actuation.lo()..=actuation.hi()))
                .collect();
            let d: Vec<i64> = (0..slots + 2)
                .map(|_| rng.gen_range(rel_deadline.lo()..=rel_deadline.hi()))
                .collect();
            initial.push(InitialFlow {
                age: rng.gen_range(1..=c[0] + d[1]),
                actuation_prev: c[0],
            });
            c_rows.push(c);
            d_rows.push(d);
        }
        Self::new(channel, c_rows, d_rows, initial)
    }
}

/// Unscaled objective `sum_t sum_{i in S_t} U_{t,i}`, exact when utilities are
/// `1 / (L + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    #[serde(with = "ratio_serde")]
    pub exact: Option<Ratio<i128>>,
}

mod ratio_serde {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<Ratio<i128>>, s: S) -> Result<S::Ok, S::Error> {
        r.map(|r| r.to_string()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Ratio<i128>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl Score {
    fn zero(exact: bool) -> Self {
        Self {
            value: 0.0,
            exact: exact.then(|| Ratio::from_integer(0)),
        }
    }

    fn add_slot(&mut self, rec: &SlotRecord) {
        for f in rec.flows.iter().filter(|f| f.mode == Mode::Active) {
            self.value += f.utility;
            if let Some(e) = &mut self.exact {
                *e += Ratio::new(1, f.latency as i128 + 1);
            }
        }
    }

    pub fn of_records<'r>(records: impl IntoIterator<Item = &'r SlotRecord>, exact: bool) -> Self {
        let mut s = Self::zero(exact);
        for r in records {
            s.add_slot(r);
        }
        s
    }

    pub fn compare(&self, other: &Score) -> Ordering {
        match (self.exact, other.exact) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ if (self.value - other.value).abs() <= TOLERANCE => Ordering::Equal,
            _ => self.value.total_cmp(&other.value),
        }
    }
}

/// Replayable record of an instance where HLF-D fell short of the maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub instance: SmallInstance,
    pub include_idle: bool,
    /// One optimal decision sequence.
    pub schedule: Vec<PolicyDecision>,
    pub hlf_d_schedule: Vec<PolicyDecision>,
    /// First slot where the optimal schedule departs from HLF-D.
    pub slot: i64,
    pub max_total: Score,
    pub hlf_d_total: Score,
}

impl Witness {
    pub fn save(&self, path: &Path) -> Result<(), OracleError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub max_total: Score,
    pub hlf_d_total: Score,
    pub hlf_d_schedule: Vec<PolicyDecision>,
    /// Up to 32 maximizing sequences, in enumeration order.
    pub optimal_schedules: Vec<Vec<PolicyDecision>>,
    pub optimal_count: u64,
    pub leaves: u64,
    pub counterexample: Option<Witness>,
}

impl OracleVerdict {
    pub fn hlf_d_optimal(&self) -> bool {
        self.hlf_d_total.compare(&self.max_total) == Ordering::Equal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationOptions {
    /// Also branch on idling while active flows wait. When false only work
    /// conserving sequences are explored.
    pub include_idle: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self { include_idle: true }
    }
}

struct Search {
    exact: bool,
    include_idle: bool,
    best: Option<Score>,
    optimal: Vec<Vec<PolicyDecision>>,
    optimal_count: u64,
    leaves: u64,
}

impl Search {
    fn offer(&mut self, score: Score, path: &[PolicyDecision]) {
        self.leaves += 1;
        let ord = self.best.map_or(Ordering::Greater, |b| score.compare(&b));
        match ord {
            Ordering::Greater => {
                self.best = Some(score);
                self.optimal.clear();
                self.optimal.push(path.to_vec());
                self.optimal_count = 1;
            }
            Ordering::Equal => {
                self.optimal_count += 1;
                if self.optimal.len() < KEEP_SCHEDULES {
                    self.optimal.push(path.to_vec());
                }
            }
            Ordering::Less => {}
        }
    }

    fn explore(&mut self, sim: Simulator<'_>, acc: Score, path: &mut Vec<PolicyDecision>) -> Result<(), SimError> {
        if sim.is_done() {
            self.offer(acc, path);
            return Ok(());
        }
        let mut idle = sim.clone();
        let mut ids: Vec<FlowId> = Vec::new();
        let rec = idle.step_with("oracle", |s| {
            ids = s.entries.iter().map(|e| e.id).collect();
            PolicyDecision::Idle
        })?;
        // On an OFF slot every decision leads to the same state.
        if !rec.channel_on || ids.is_empty() || self.include_idle {
            let mut next = acc;
            next.add_slot(&rec);
            path.push(PolicyDecision::Idle);
            self.explore(idle, next, path)?;
            path.pop();
        }
        if !rec.channel_on {
            return Ok(());
        }
        for id in ids {
            let mut branch = sim.clone();
            let rec = branch.step_with("oracle", |_| PolicyDecision::Schedule(id))?;
            let mut next = acc;
            next.add_slot(&rec);
            path.push(PolicyDecision::Schedule(id));
            self.explore(branch, next, path)?;
            path.pop();
        }
        Ok(())
    }
}

/// Objective score of `schedule` replayed through the engine.
pub fn score_schedule(inst: &SmallInstance, schedule: &[PolicyDecision]) -> Result<Score, OracleError> {
    let trace = run_with_plan(&inst.config, &inst.plan, &mut Scripted::new(schedule.to_vec()), 0)?;
    Ok(Score::of_records(&trace.records, inst.config.has_unit_utility()))
}

/// Exhaustive maximum of the objective over all decision sequences, compared
/// with the HLF-D run on the same instance.
pub fn enumerate_max(inst: &SmallInstance, opts: EnumerationOptions) -> Result<OracleVerdict, OracleError> {
    inst.validate()?;
    let exact = inst.config.has_unit_utility();
    let hlf_trace = run_with_plan(&inst.config, &inst.plan, &mut *PolicyKind::HlfD.build(0, 0), 0)?;
    let hlf_d_total = Score::of_records(&hlf_trace.records, exact);
    let hlf_d_schedule: Vec<_> = hlf_trace
        .records
        .iter()
        .map(|r| if r.channel_on { r.decision } else { PolicyDecision::Idle })
        .collect();

    let mut search = Search {
        exact,
        include_idle: opts.include_idle,
        best: None,
        optimal: Vec::new(),
        optimal_count: 0,
        leaves: 0,
    };
    let sim = Simulator::new(&inst.config, &inst.plan)?;
    search.explore(sim, Score::zero(search.exact), &mut Vec::new())?;
    let max_total = search.best.expect("at least one leaf");

    let mut verdict = OracleVerdict {
        max_total,
        hlf_d_total,
        hlf_d_schedule,
        optimal_schedules: search.optimal,
        optimal_count: search.optimal_count,
        leaves: search.leaves,
        counterexample: None,
    };
    if !verdict.hlf_d_optimal() {
        let schedule = verdict.optimal_schedules[0].clone();
        let slot = schedule
            .iter()
            .zip(&verdict.hlf_d_schedule)
            .position(|(a, b)| a != b)
            .map_or(0, |p| p as i64 + 1);
        verdict.counterexample = Some(Witness {
            instance: inst.clone(),
            include_idle: opts.include_idle,
            schedule,
            hlf_d_schedule: verdict.hlf_d_schedule.clone(),
            slot,
            max_total,
            hlf_d_total,
        });
    }
    Ok(verdict)
}

/// Re-runs the oracle on a witness' instance and replays its schedule.
pub fn replay_witness(w: &Witness) -> Result<(OracleVerdict, Score), OracleError> {
    let verdict = enumerate_max(
        &w.instance,
        EnumerationOptions {
            include_idle: w.include_idle,
        },
    )?;
    let replayed = score_schedule(&w.instance, &w.schedule)?;
    Ok((verdict, replayed))
}

/// Settings for a batch of random oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub max_flows: usize,
    pub max_slots: usize,
    pub count: usize,
    pub seed: u64,
    pub actuation: SlotRange,
    pub rel_deadline: SlotRange,
    pub channel_on_prob: f64,
    /// Shapes with at most this many flows and slots cycle through every
    /// channel pattern instead of sampling one.
    pub exhaustive_flows: usize,
    pub exhaustive_slots: usize,
    pub witness_dir: Option<PathBuf>,
    pub max_witnesses: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            max_flows: 3,
            max_slots: 6,
            count: 1000,
            seed: 2020,
            actuation: SlotRange(1, 3),
            rel_deadline: SlotRange(1, 4),
            channel_on_prob: 0.8,
            exhaustive_flows: 2,
            exhaustive_slots: 4,
            witness_dir: None,
            max_witnesses: 20,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.max_flows > MAX_FLOWS || self.max_slots > MAX_SLOTS {
            return Err(OracleError::TooLarge {
                flows: self.max_flows,
                slots: self.max_slots,
                sequences: (self.max_flows as u128 + 1).saturating_pow(self.max_slots as u32),
            });
        }
        if self.max_flows == 0 || self.max_slots == 0 {
            return Err(OracleError::Invalid("bounds must be at least one flow and one slot".into()));
        }
        if self.actuation.lo() < 0 || self.actuation.lo() > self.actuation.hi() {
            return Err(OracleError::Invalid(format!("bad actuation range {}", self.actuation)));
        }
        if self.rel_deadline.lo() < 1 || self.rel_deadline.lo() > self.rel_deadline.hi() {
            return Err(OracleError::Invalid(format!("bad deadline range {}", self.rel_deadline)));
        }
        if !(0.0..=1.0).contains(&self.channel_on_prob) {
            return Err(OracleError::Invalid("channel probability outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Instance `index` of the batch. Shapes cycle over every (flows, slots)
    /// pair within bounds.
    pub fn instance(&self, index: usize) -> Result<SmallInstance, OracleError> {
        let shapes: Vec<(usize, usize)> = (1..=self.max_flows)
            .flat_map(|m| (1..=self.max_slots).map(move |t| (m, t)))
            .collect();
        let (m, t) = shapes[index % shapes.len()];
        let round = index / shapes.len();
        let channel = (m <= self.exhaustive_flows && t <= self.exhaustive_slots).then(|| {
            let pattern = round % (1usize << t);
            (0..t).map(|b| pattern >> b & 1 == 1).collect()
        });
        let mut rng = keyed_rng(self.seed, &[0x0bac1e, index as u64]);
        SmallInstance::random(
            &mut rng,
            m,
            t,
            self.actuation,
            self.rel_deadline,
            channel,
            self.channel_on_prob,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instances: usize,
    /// HLF-D matched the maximum over all sequences, idling included.
    pub optimal: usize,
    /// HLF-D matched the maximum over work-conserving sequences.
    pub work_conserving_optimal: usize,
    pub leaves: u64,
    /// Indices of instances where HLF-D fell short, in order.
    pub failures: Vec<usize>,
    pub witnesses: Vec<PathBuf>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the oracle over `opts.count` instances in parallel and persists the
/// first `max_witnesses` counterexamples.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport, OracleError> {
    opts.validate()?;
    let results = (0..opts.count)
        .into_par_iter()
        .map(|i| {
            let inst = opts.instance(i)?;
            let full = enumerate_max(&inst, EnumerationOptions { include_idle: true })?;
            let wc = enumerate_max(&inst, EnumerationOptions { include_idle: false })?;
            Ok((full, wc.hlf_d_optimal()))
        })
        .collect::<Result<Vec<_>, OracleError>>()?;

    let mut report = VerifyReport {
        instances: opts.count,
        optimal: 0,
        work_conserving_optimal: 0,
        leaves: 0,
        failures: Vec::new(),
        witnesses: Vec::new(),
    };
    if let Some(dir) = &opts.witness_dir {
        fs::create_dir_all(dir)?;
    }
    for (i, (verdict, wc_ok)) in results.into_iter().enumerate() {
        report.leaves += verdict.leaves;
        report.work_conserving_optimal += wc_ok as usize;
        match &verdict.counterexample {
            None => report.optimal += 1,
            Some(w) => {
                report.failures.push(i);
                if let Some(dir) = &opts.witness_dir {
                    if report.witnesses.len() < opts.max_witnesses {
                        let path = dir.join(format!("witness_{i:05}.json"));
                        w.save(&path)?;
                        report.witnesses.push(path);
                    }
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Violation {
    pub policy: String,
    pub replication: u64,
    pub t: i64,
    pub pair: (FlowId, FlowId),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Scan {
    pub pairs_checked: u64,
    pub violations: Vec<Lemma1Violation>,
}

/// Scans consecutive slots for pairs of non-critical samples left unserved
/// and reports any whose utility order is not preserved into the next slot.
pub fn check_lemma1<'t>(traces: impl IntoIterator<Item = &'t Trace>) -> Lemma1Scan {
    let mut scan = Lemma1Scan::default();
    for trace in traces {
        for w in trace.records.windows(2) {
            let (now, next) = (&w[0], &w[1]);
            let served = now.decision.flow().filter(|_| now.served_ok);
            let eligible: Vec<FlowId> = now
                .active_ids
                .iter()
                .copied()
                .filter(|&id| {
                    now.flow(id).laxity > Some(0)
                        && served != Some(id)
                        && next.flow(id).mode == Mode::Active
                })
                .collect();
            for (a, &i) in eligible.iter().enumerate() {
                for &j in &eligible[a + 1..] {
                    scan.pairs_checked += 1;
                    let (ui, uj) = (now.flow(i).utility, now.flow(j).utility);
                    let (vi, vj) = (next.flow(i).utility, next.flow(j).utility);
                    let broken = (ui <= uj && vi > vj) || (uj <= ui && vj > vi);
                    if broken {
                        scan.violations.push(Lemma1Violation {
                            policy: trace.policy.clone(),
                            replication: trace.replication,
                            t: now.t,
                            pair: (i, j),
                        });
                    }
                }
            }
        }
    }
    scan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairedViolation {
    /// Fewer live active flows under HLF-D than under the rival.
    ActiveCount { t: i64, hlf_d: usize, other: usize },
    /// The rival's hard critical sample carries more utility than HLF-D's.
    CriticalUtility { t: i64, hlf_d: f64, other: f64 },
}

/// Slot-by-slot comparison of an HLF-D trace with a rival trace sharing the
/// same randomness plan.
pub fn check_lemma2_3(hlf_d: &Trace, other: &Trace) -> Result<Vec<PairedViolation>, OracleError> {
    if hlf_d.plan_id != other.plan_id {
        return Err(OracleError::PlanMismatch(hlf_d.plan_id, other.plan_id));
    }
    if hlf_d.records.len() != other.records.len() {
        return Err(OracleError::LengthMismatch(hlf_d.records.len(), other.records.len()));
    }
    let mut out = Vec::new();
    for (a, b) in hlf_d.records.iter().zip(&other.records) {
        let (na, nb) = (a.live_active_count(), b.live_active_count());
        if na < nb {
            out.push(PairedViolation::ActiveCount {
                t: a.t,
                hlf_d: na,
                other: nb,
            });
        }
        if let (Some(ha), Some(hb)) = (a.hard_critical, b.hard_critical) {
            let (ua, ub) = (a.flow(ha).utility, b.flow(hb).utility);
            if ub > ua {
                out.push(PairedViolation::CriticalUtility {
                    t: a.t,
                    hlf_d: ua,
                    other: ub,
                });
            }
        }
    }
    Ok(out)
}

/// Reference argmax used to cross-check [`hlf_d`]: infinite priority first,
/// then the largest latency, then the lowest id.
pub fn reference_hlf_d(snapshot: &crate::policies::ActiveSnapshot) -> PolicyDecision {
    let mut best: Option<&crate::policies::ActiveEntry> = None;
    for e in &snapshot.entries {
        let better = match best {
            None => true,
            Some(b) => {
                let (ei, bi) = (
                    snapshot.hard_critical == Some(e.id),
                    snapshot.hard_critical == Some(b.id),
                );
                (ei && !bi) || (ei == bi && e.latency > b.latency)
            }
        };
        if better {
            best = Some(e);
        }
    }
    let decision = best.map_or(PolicyDecision::Idle, |e| PolicyDecision::Schedule(e.id));
    debug_assert_eq!(decision, hlf_d(snapshot));
    decision
}
