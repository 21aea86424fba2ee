//! Scheduling policies behind one decision contract.
//!
//! All built-in policies are work conserving and break ties towards the
//! lowest flow id, so runs are reproducible.

use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{FlowId, Priority};
use crate::plan::policy_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyDecision {
    Schedule(FlowId),
    Idle,
}

impl PolicyDecision {
    pub fn flow(&self) -> Option<FlowId> {
        match self {
            PolicyDecision::Schedule(id) => Some(*id),
            PolicyDecision::Idle => None,
        }
    }
}

/// What a policy knows about one competing flow.
///
/// `laxity` and `deadline` are the values carried by the sample at the start
/// of the slot. `priority` already reflects conflict avoidance: only the hard
/// critical sample is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveEntry {
    pub id: FlowId,
    pub latency: i64,
    pub utility: f64,
    pub priority: Priority,
    pub laxity: i64,
    pub deadline: i64,
    pub arrival: i64,
}

/// Read-only view of the active, non-dropped flows handed to a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSnapshot {
    pub t: i64,
    /// Sorted by ascending flow id.
    pub entries: Vec<ActiveEntry>,
    pub hard_critical: Option<FlowId>,
}

impl ActiveSnapshot {
    pub fn contains(&self, id: FlowId) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }
}

fn pick<K: Ord>(snapshot: &ActiveSnapshot, key: impl Fn(&ActiveEntry) -> K) -> PolicyDecision {
    // max_by_key returns the last maximum, so fold ids in as Reverse to prefer the lowest.
    snapshot
        .entries
        .iter()
        .max_by_key(|e| (key(e), Reverse(e.id)))
        .map_or(PolicyDecision::Idle, |e| PolicyDecision::Schedule(e.id))
}

/// Deadline-aware highest latency first: the hard critical sample if there is
/// one, otherwise the highest-priority (highest-latency) sample.
pub fn hlf_d(snapshot: &ActiveSnapshot) -> PolicyDecision {
    if let Some(id) = snapshot.hard_critical {
        return PolicyDecision::Schedule(id);
    }
    pick(snapshot, |e| e.priority)
}

/// Highest latency first, blind to deadlines.
pub fn hlf(snapshot: &ActiveSnapshot) -> PolicyDecision {
    pick(snapshot, |e| e.latency)
}

/// Earliest absolute deadline; ties go to the earlier arrival.
pub fn edf(snapshot: &ActiveSnapshot) -> PolicyDecision {
    pick(snapshot, |e| (Reverse(e.deadline), Reverse(e.arrival)))
}

/// Least laxity first.
pub fn llf(snapshot: &ActiveSnapshot) -> PolicyDecision {
    pick(snapshot, |e| Reverse(e.laxity))
}

/// Uniform choice over the active flows.
pub fn random_policy(snapshot: &ActiveSnapshot, rng: &mut ChaCha8Rng) -> PolicyDecision {
    if snapshot.entries.is_empty() {
        return PolicyDecision::Idle;
    }
    let idx = rng.gen_range(0..snapshot.entries.len());
    PolicyDecision::Schedule(snapshot.entries[idx].id)
}

pub trait Policy {
    fn name(&self) -> &str;
    fn decide(&mut self, snapshot: &ActiveSnapshot) -> PolicyDecision;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "hlf-d")]
    HlfD,
    #[serde(rename = "hlf")]
    Hlf,
    #[serde(rename = "edf")]
    Edf,
    #[serde(rename = "llf")]
    Llf,
    #[serde(rename = "random")]
    Random,
}

impl PolicyKind {
    pub const BUILTIN: [PolicyKind; 4] = [
        PolicyKind::HlfD,
        PolicyKind::Hlf,
        PolicyKind::Edf,
        PolicyKind::Llf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::HlfD => "hlf-d",
            PolicyKind::Hlf => "hlf",
            PolicyKind::Edf => "edf",
            PolicyKind::Llf => "llf",
            PolicyKind::Random => "random",
        }
    }

    /// Instantiates the policy; `seed`/`replication` only matter for `random`.
    pub fn build(&self, seed: u64, replication: u64) -> Box<dyn Policy + Send> {
        match self {
            PolicyKind::Random => Box::new(RandomPolicy {
                rng: policy_rng(seed, replication),
            }),
            kind => Box::new(Deterministic(*kind)),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hlf-d" | "hlfd" => Ok(PolicyKind::HlfD),
            "hlf" => Ok(PolicyKind::Hlf),
            "edf" => Ok(PolicyKind::Edf),
            "llf" => Ok(PolicyKind::Llf),
            "random" => Ok(PolicyKind::Random),
            other => Err(format!(
                "unknown policy `{other}` (expected hlf-d, hlf, edf, llf or random)"
            )),
        }
    }
}

struct Deterministic(PolicyKind);

impl Policy for Deterministic {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn decide(&mut self, snapshot: &ActiveSnapshot) -> PolicyDecision {
        match self.0 {
            PolicyKind::HlfD => hlf_d(snapshot),
            PolicyKind::Hlf => hlf(snapshot),
            PolicyKind::Edf => edf(snapshot),
            PolicyKind::Llf => llf(snapshot),
            PolicyKind::Random => unreachable!("random policy owns a stream"),
        }
    }
}

pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, snapshot: &ActiveSnapshot) -> PolicyDecision {
        random_policy(snapshot, &mut self.rng)
    }
}

/// Replays a fixed decision sequence; slot `t` uses element `t - 1`.
/// Slots past the end of the script idle.
#[derive(Debug, Clone)]
pub struct Scripted {
    decisions: Vec<PolicyDecision>,
}

impl Scripted {
    pub fn new(decisions: Vec<PolicyDecision>) -> Self {
        Self { decisions }
    }
}

impl Policy for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }

    fn decide(&mut self, snapshot: &ActiveSnapshot) -> PolicyDecision {
        self.decisions
            .get((snapshot.t - 1) as usize)
            .copied()
            .unwrap_or(PolicyDecision::Idle)
    }
}
