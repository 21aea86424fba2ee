//! Slot-by-slot closed-loop simulation.
//!
//! Each slot runs, in order: sensing of flows whose actuation finished,
//! classification, conflict avoidance, the policy decision, service, the drop
//! of an unserved hard critical sample, and age evolution. Every pass is a
//! single sweep over the flows.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, FlowId, FlowState, Mode, Priority, SimConfig};
use crate::plan::RandomnessPlan;
use crate::policies::{ActiveEntry, ActiveSnapshot, Policy, PolicyDecision};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] model::ConfigError),
    #[error("plan covers {plan_flows} flows and {plan_slots} slots, config wants {flows} and {slots}")]
    PlanMismatch {
        plan_flows: usize,
        plan_slots: usize,
        flows: usize,
        slots: usize,
    },
    #[error("slot {t}: policy `{policy}` chose flow {id}, which is not an active flow")]
    InvalidDecision { t: i64, policy: String, id: FlowId },
    #[error("horizon of {0} slots already simulated")]
    HorizonExhausted(usize),
}

/// Per-flow view recorded at the start of a slot (after sensing, before grace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSnapshot {
    pub id: FlowId,
    pub mode: Mode,
    pub age: i64,
    pub actuation_prev: i64,
    pub rel_deadline: i64,
    pub latency: i64,
    /// `None` while inactive.
    pub laxity: Option<i64>,
    pub utility: f64,
    /// Only for active flows.
    pub priority: Option<Priority>,
}

/// Audit record of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: i64,
    pub channel_on: bool,
    pub active_ids: Vec<FlowId>,
    /// Active flows with zero laxity at the start of the slot.
    pub critical_ids: Vec<FlowId>,
    pub hard_critical: Option<FlowId>,
    pub graced_ids: Vec<FlowId>,
    pub decision: PolicyDecision,
    pub served_ok: bool,
    pub dropped_id: Option<FlowId>,
    pub flows: Vec<FlowSnapshot>,
}

impl SlotRecord {
    pub fn flow(&self, id: FlowId) -> &FlowSnapshot {
        &self.flows[id - 1]
    }

    /// Sum of utilities over the active set.
    pub fn active_utility(&self) -> f64 {
        self.flows
            .iter()
            .filter(|f| f.mode == Mode::Active)
            .map(|f| f.utility)
            .sum()
    }

    /// Active flows that are not out-of-service dummies.
    pub fn live_active_count(&self) -> usize {
        self.active_ids.len()
    }

    /// Latency of the sample served in this slot, if any.
    pub fn served_latency(&self) -> Option<i64> {
        if !self.served_ok {
            return None;
        }
        self.decision.flow().map(|id| self.flow(id).latency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config: SimConfig,
    pub policy: String,
    pub replication: u64,
    pub plan_id: u64,
    pub records: Vec<SlotRecord>,
    pub terminal: Vec<FlowState>,
}

/// The simulation state of one run. Cloning it forks the run, which is how
/// the oracle explores alternative decisions.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    cfg: &'a SimConfig,
    plan: &'a RandomnessPlan,
    flows: Vec<FlowState>,
    next_t: i64,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a SimConfig, plan: &'a RandomnessPlan) -> Result<Self, SimError> {
        if plan.flows() != cfg.flows || plan.horizon() != cfg.horizon as usize {
            return Err(SimError::PlanMismatch {
                plan_flows: plan.flows(),
                plan_slots: plan.horizon(),
                flows: cfg.flows,
                slots: cfg.horizon as usize,
            });
        }
        let flows = plan
            .initial
            .iter()
            .enumerate()
            .map(|(idx, init)| FlowState::pending(idx + 1, init.age, init.actuation_prev))
            .collect();
        Ok(Self {
            cfg,
            plan,
            flows,
            next_t: 1,
        })
    }

    pub fn flows(&self) -> &[FlowState] {
        &self.flows
    }

    /// Slot that the next call to [`Simulator::step`] simulates.
    pub fn next_slot(&self) -> i64 {
        self.next_t
    }

    pub fn is_done(&self) -> bool {
        self.next_t > self.cfg.horizon as i64
    }

    pub fn step(&mut self, policy: &mut dyn Policy) -> Result<SlotRecord, SimError> {
        let name = policy.name().to_string();
        self.step_with(&name, |s| policy.decide(s))
    }

    /// Runs one slot with the decision produced by `decide`.
    pub fn step_with(
        &mut self,
        policy_name: &str,
        decide: impl FnOnce(&ActiveSnapshot) -> PolicyDecision,
    ) -> Result<SlotRecord, SimError> {
        if self.is_done() {
            return Err(SimError::HorizonExhausted(self.cfg.horizon as usize));
        }
        let t = self.next_t;
        let channel_on = self.plan.channel_on(t);

        // Sense samples of flows whose actuation has finished.
        for f in &mut self.flows {
            if f.is_sensing_due() {
                let d = self.plan.draws.rel_deadline(f.id, f.sample);
                f.sense(t, d);
            }
            f.mode = model::classify_mode(f);
        }

        let mut snaps = Vec::with_capacity(self.flows.len());
        let mut active_ids = Vec::new();
        let mut critical_ids = Vec::new();
        let mut hard: Option<(FlowId, f64)> = None;
        for f in &self.flows {
            let sensed = f.mode != Mode::Inactive;
            let latency = model::latency(f, t);
            let laxity = sensed.then(|| model::laxity(f, t));
            let utility = model::utility(f, t, self.cfg);
            if f.mode == Mode::Active {
                active_ids.push(f.id);
                if laxity == Some(0) {
                    critical_ids.push(f.id);
                    // Highest utility wins; ids ascend so strict > keeps the lowest on ties.
                    if hard.is_none_or(|(_, u)| utility > u) {
                        hard = Some((f.id, utility));
                    }
                }
            }
            snaps.push(FlowSnapshot {
                id: f.id,
                mode: f.mode,
                age: f.age,
                actuation_prev: f.actuation_prev,
                rel_deadline: f.rel_deadline,
                latency,
                laxity,
                utility,
                priority: None,
            });
        }

        let (hard_critical, graced_ids) =
            apply_conflict_avoidance(&mut self.flows, &critical_ids, hard.map(|h| h.0), channel_on);

        let mut entries = Vec::with_capacity(active_ids.len());
        for &id in &active_ids {
            let f = &self.flows[id - 1];
            let snap = &mut snaps[id - 1];
            // Grace only moves laxity from 0 to 1, so the utility is unchanged.
            let priority = model::priority_of(model::laxity(f, t), snap.utility);
            snap.priority = Some(priority);
            entries.push(ActiveEntry {
                id,
                latency: snap.latency,
                utility: snap.utility,
                priority,
                laxity: snap.laxity.unwrap_or_default(),
                deadline: f.arrival + snap.rel_deadline,
                arrival: f.arrival,
            });
        }
        let snapshot = ActiveSnapshot {
            t,
            entries,
            hard_critical,
        };

        let decision = decide(&snapshot);
        if let PolicyDecision::Schedule(id) = decision {
            if !snapshot.contains(id) {
                return Err(SimError::InvalidDecision {
                    t,
                    policy: policy_name.to_string(),
                    id,
                });
            }
        }

        let served = decision.flow().filter(|_| channel_on);
        let dropped_id = match hard_critical {
            Some(h) if channel_on && served != Some(h) => Some(h),
            _ => None,
        };
        if let Some(id) = dropped_id {
            self.flows[id - 1].drop_sample();
        }
        for f in &mut self.flows {
            let served_ok = served == Some(f.id);
            let next_c = if served_ok {
                self.plan.draws.actuation(f.id, f.sample)
            } else {
                0
            };
            *f = model::age_step(f, served_ok, next_c);
        }
        self.next_t += 1;

        Ok(SlotRecord {
            t,
            channel_on,
            active_ids,
            critical_ids,
            hard_critical,
            graced_ids,
            decision,
            served_ok: served.is_some(),
            dropped_id,
            flows: snaps,
        })
    }
}

/// Resolves simultaneous critical samples. With the channel ON the
/// highest-utility critical (`hard`) keeps its deadline and every other
/// critical is graced one slot; with the channel OFF all are graced.
pub fn apply_conflict_avoidance(
    flows: &mut [FlowState],
    critical_ids: &[FlowId],
    hard: Option<FlowId>,
    channel_on: bool,
) -> (Option<FlowId>, Vec<FlowId>) {
    let hard = if channel_on { hard } else { None };
    let mut graced = Vec::new();
    for &id in critical_ids {
        if Some(id) != hard {
            flows[id - 1].grace();
            graced.push(id);
        }
    }
    (hard, graced)
}

/// Simulates the full horizon of `plan` under `policy`.
pub fn run_with_plan(
    cfg: &SimConfig,
    plan: &RandomnessPlan,
    policy: &mut dyn Policy,
    replication: u64,
) -> Result<Trace, SimError> {
    cfg.validate()?;
    let mut sim = Simulator::new(cfg, plan)?;
    let mut records = Vec::with_capacity(cfg.horizon as usize);
    while !sim.is_done() {
        records.push(sim.step(policy)?);
    }
    Ok(Trace {
        config: cfg.clone(),
        policy: policy.name().to_string(),
        replication,
        plan_id: plan.fingerprint(),
        records,
        terminal: sim.flows,
    })
}

/// Simulates replication `replication` of `cfg` with its seeded plan.
pub fn run_horizon(
    cfg: &SimConfig,
    policy: &mut dyn Policy,
    replication: u64,
) -> Result<Trace, SimError> {
    cfg.validate()?;
    let plan = RandomnessPlan::seeded(cfg, replication);
    run_with_plan(cfg, &plan, policy, replication)
}

#[derive(Debug, Error, PartialEq)]
pub enum AuditError {
    #[error("slot {t}, flow {id}: age {age} != 1 + c {c} + latency {latency}")]
    Decomposition {
        t: i64,
        id: FlowId,
        age: i64,
        c: i64,
        latency: i64,
    },
    #[error("slot {t}, flow {id}: laxity {laxity} disagrees with age threshold (age {age}, c {c}, d {d})")]
    DeadlineView {
        t: i64,
        id: FlowId,
        laxity: i64,
        age: i64,
        c: i64,
        d: i64,
    },
    #[error("slot {t}: {count} critical samples remain after conflict avoidance")]
    CriticalConflict { t: i64, count: usize },
    #[error("slot {t}: drop of flow {id} without an ON channel and an unserved hard critical")]
    SpuriousDrop { t: i64, id: FlowId },
    #[error("slot indices are not contiguous at position {0}")]
    SlotGap(usize),
    #[error("slot {t}: {flows} flow snapshots, expected {expected}")]
    FlowCount { t: i64, flows: usize, expected: usize },
}

/// Checks the structural invariants of a trace: the age decomposition at every
/// active slot, the equivalence of the laxity and age-threshold deadline
/// views, at most one remaining critical per slot, and well-formed drops.
pub fn audit_trace(trace: &Trace) -> Result<(), AuditError> {
    for (pos, rec) in trace.records.iter().enumerate() {
        let t = rec.t;
        if t != pos as i64 + 1 {
            return Err(AuditError::SlotGap(pos));
        }
        if rec.flows.len() != trace.config.flows {
            return Err(AuditError::FlowCount {
                t,
                flows: rec.flows.len(),
                expected: trace.config.flows,
            });
        }
        for f in &rec.flows {
            if f.mode == Mode::Active && f.age != 1 + f.actuation_prev + f.latency {
                return Err(AuditError::Decomposition {
                    t,
                    id: f.id,
                    age: f.age,
                    c: f.actuation_prev,
                    latency: f.latency,
                });
            }
            if let Some(laxity) = f.laxity {
                let past = f.age >= 1 + f.actuation_prev + f.rel_deadline;
                if (laxity < 0) != past {
                    return Err(AuditError::DeadlineView {
                        t,
                        id: f.id,
                        laxity,
                        age: f.age,
                        c: f.actuation_prev,
                        d: f.rel_deadline,
                    });
                }
            }
        }
        let remaining = rec.critical_ids.len() - rec.graced_ids.len();
        if remaining > usize::from(rec.channel_on) {
            return Err(AuditError::CriticalConflict { t, count: remaining });
        }
        if let Some(id) = rec.dropped_id {
            if !rec.channel_on || rec.hard_critical != Some(id) || rec.decision.flow() == Some(id) {
                return Err(AuditError::SpuriousDrop { t, id });
            }
        }
    }
    Ok(())
}

/// One line of an exported trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Header {
        policy: String,
        replication: u64,
        plan_id: u64,
        config: SimConfig,
    },
    Slot(SlotRecord),
    Terminal { flows: Vec<FlowState> },
}

/// Writes a trace as JSON lines: a header, one line per slot, and the
/// terminal flow states.
pub fn write_trace(trace: &Trace, mut out: impl Write) -> io::Result<()> {
    let header = TraceLine::Header {
        policy: trace.policy.clone(),
        replication: trace.replication,
        plan_id: trace.plan_id,
        config: trace.config.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for rec in &trace.records {
        serde_json::to_writer(&mut out, &TraceLine::Slot(rec.clone()))?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut out,
        &TraceLine::Terminal {
            flows: trace.terminal.clone(),
        },
    )?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn read_trace(input: impl BufRead) -> io::Result<Trace> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut header = None;
    let mut records = Vec::new();
    let mut terminal = None;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceLine>(&line)? {
            TraceLine::Header {
                policy,
                replication,
                plan_id,
                config,
            } => header = Some((policy, replication, plan_id, config)),
            TraceLine::Slot(rec) => records.push(rec),
            TraceLine::Terminal { flows } => terminal = Some(flows),
        }
    }
    let (policy, replication, plan_id, config) = header.ok_or_else(|| bad("missing header line"))?;
    Ok(Trace {
        config,
        policy,
        replication,
        plan_id,
        records,
        terminal: terminal.ok_or_else(|| bad("missing terminal line"))?,
    })
}
