//! Domain types and the per-flow calculus.
//!
//! Every quantity measured in slots is an `i64` so that arrivals sensed before
//! the horizon (negative slot indices) need no special casing. Freshness,
//! utility and priority are the only real-valued quantities.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Flow (sensor-actuator pair) identifier, `1..=M`.
pub type FlowId = usize;

/// Closed integer interval of slot counts, written `[lo, hi]` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRange(pub i64, pub i64);

impl SlotRange {
    pub fn lo(&self) -> i64 {
        self.0
    }

    pub fn hi(&self) -> i64 {
        self.1
    }

    pub fn contains(&self, v: i64) -> bool {
        self.0 <= v && v <= self.1
    }
}

impl fmt::Display for SlotRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.0, self.1)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// All parameters of a simulation run. Defaults are the symmetric
/// 16-flow network used for the reference experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of sensor-actuator pairs.
    pub flows: usize,
    /// Horizon in slots.
    pub horizon: u32,
    /// Probability that the shared channel is ON in a slot.
    pub channel_on_prob: f64,
    /// Per-flow weight in the objective (identical for all flows).
    pub weight: f64,
    /// Exponent applied to freshness in the utility.
    pub freshness_exp: f64,
    /// Exponent applied to the laxity indicator in the utility.
    pub laxity_exp: f64,
    pub k_freshness: f64,
    pub k_laxity: f64,
    /// Actuation duration `c` of every sample, in slots.
    pub actuation_range: SlotRange,
    /// Relative deadline `d` of every sample, in slots.
    pub rel_deadline_range: SlotRange,
    pub seed: u64,
    pub replications: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            flows: 16,
            horizon: 1000,
            channel_on_prob: 0.8,
            weight: 1.0,
            freshness_exp: 1.0,
            laxity_exp: 1.0,
            k_freshness: 1.0,
            k_laxity: 1.0,
            actuation_range: SlotRange(1, 25),
            rel_deadline_range: SlotRange(1, 20),
            seed: 2020,
            replications: 200,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.flows < 1 {
            return Err(invalid("flows", "must be at least 1"));
        }
        if self.horizon < 1 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.channel_on_prob) {
            return Err(invalid(
                "channel_on_prob",
                format!("{} is outside [0, 1]", self.channel_on_prob),
            ));
        }
        let positive = [
            ("weight", self.weight),
            ("freshness_exp", self.freshness_exp),
            ("laxity_exp", self.laxity_exp),
            ("k_freshness", self.k_freshness),
            ("k_laxity", self.k_laxity),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, format!("{v} is not a positive real")));
            }
        }
        let ranges = [
            ("actuation_range", self.actuation_range),
            ("rel_deadline_range", self.rel_deadline_range),
        ];
        for (field, r) in ranges {
            if r.lo() < 1 || r.lo() > r.hi() {
                return Err(invalid(field, format!("{r} must satisfy 1 <= lo <= hi")));
            }
        }
        if self.replications < 1 {
            return Err(invalid("replications", "must be at least 1"));
        }
        Ok(())
    }

    /// Combined proportionality constant `k = k_F * k_X`.
    pub fn utility_scale(&self) -> f64 {
        self.k_freshness * self.k_laxity
    }

    /// True when utilities are exactly `1 / (L + 1)`, which lets the oracle
    /// compare totals in rational arithmetic.
    pub fn has_unit_utility(&self) -> bool {
        self.freshness_exp == 1.0
            && self.laxity_exp == 1.0
            && self.k_freshness == 1.0
            && self.k_laxity == 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Actuation of the previous sample still running; no sample sensed.
    Inactive,
    /// Holding a sensed sample that competes for the channel.
    Active,
    /// Flow-line broken after a dropped sample; stays a zero-utility dummy.
    OutOfService,
}

/// State of one sensor-actuator pair at the beginning of a slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowState {
    pub id: FlowId,
    /// Index `k` of the current (or next to be sensed) sample.
    pub sample: u64,
    /// Slot index `a` of the current sample; latency is `t - 1 - a`.
    /// Only meaningful once the sample is sensed.
    pub arrival: i64,
    /// Actuation duration `c` of the previously served sample.
    pub actuation_prev: i64,
    /// Relative deadline `d` of the current sample, extended by grace.
    pub rel_deadline: i64,
    /// Age of information `h`.
    pub age: i64,
    pub mode: Mode,
    pub dropped: bool,
}

impl FlowState {
    /// A flow whose first sample has not been sensed yet. The engine senses it
    /// as soon as `age >= actuation_prev + 1`.
    pub fn pending(id: FlowId, age: i64, actuation_prev: i64) -> Self {
        Self {
            id,
            sample: 1,
            arrival: 0,
            actuation_prev,
            rel_deadline: 0,
            age,
            mode: Mode::Inactive,
            dropped: false,
        }
    }

    /// Age at which the current sample stops being serviceable.
    pub fn age_threshold(&self) -> i64 {
        1 + self.actuation_prev + self.rel_deadline
    }

    pub fn abs_deadline(&self) -> i64 {
        self.arrival + self.rel_deadline
    }

    pub fn is_sensing_due(&self) -> bool {
        !self.dropped && self.mode == Mode::Inactive && self.age > self.actuation_prev
    }

    /// Senses the current sample at slot `t`. The arrival is placed so that
    /// `age = 1 + actuation_prev + latency` holds from this slot on.
    pub fn sense(&mut self, t: i64, rel_deadline: i64) {
        self.arrival = t + self.actuation_prev - self.age;
        self.rel_deadline = rel_deadline;
        self.mode = Mode::Active;
    }

    /// Extends the deadline by one slot.
    pub fn grace(&mut self) {
        self.rel_deadline += 1;
    }

    pub fn drop_sample(&mut self) {
        self.dropped = true;
        self.mode = Mode::OutOfService;
    }
}

/// Scheduling priority: reciprocal utility, or infinite for the sample that
/// would miss its deadline if left unserved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Priority {
    Finite(f64),
    Infinite,
}

impl Eq for Priority {}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Priority::Infinite, Priority::Infinite) => Ordering::Equal,
            (Priority::Infinite, Priority::Finite(_)) => Ordering::Greater,
            (Priority::Finite(_), Priority::Infinite) => Ordering::Less,
            (Priority::Finite(a), Priority::Finite(b)) => a.total_cmp(b),
        }
    }
}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Slots the current sample has waited, `t - 1 - a`; zero while inactive.
pub fn latency(flow: &FlowState, t: i64) -> i64 {
    match flow.mode {
        Mode::Inactive => 0,
        Mode::Active | Mode::OutOfService => t - 1 - flow.arrival,
    }
}

/// `1 / (L + P)` with unit processing time.
pub fn freshness(latency: i64) -> f64 {
    debug_assert!(latency >= 0);
    1.0 / (latency as f64 + 1.0)
}

/// Slots left until the absolute deadline after this slot's processing.
pub fn laxity(flow: &FlowState, t: i64) -> i64 {
    flow.abs_deadline() - t
}

/// Laxity indicator: 1 while the deadline can still be met, 0 afterwards.
pub fn laxity_indicator(laxity: i64) -> f64 {
    if laxity >= 0 {
        1.0
    } else {
        0.0
    }
}

pub fn utility(flow: &FlowState, t: i64, cfg: &SimConfig) -> f64 {
    if flow.dropped || flow.mode != Mode::Active {
        return 0.0;
    }
    let f = freshness(latency(flow, t));
    let x = laxity_indicator(laxity(flow, t));
    cfg.utility_scale() * pow(f, cfg.freshness_exp) * pow(x, cfg.laxity_exp)
}

fn pow(x: f64, e: f64) -> f64 {
    if e == 1.0 || x == 1.0 {
        x
    } else {
        x.powf(e)
    }
}

pub fn priority(flow: &FlowState, t: i64, cfg: &SimConfig) -> Priority {
    priority_of(laxity(flow, t), utility(flow, t, cfg))
}

/// Priority from an already computed laxity and utility.
pub fn priority_of(laxity: i64, utility: f64) -> Priority {
    if laxity <= 0 {
        Priority::Infinite
    } else {
        Priority::Finite(1.0 / utility)
    }
}

/// Mode from the age-threshold view. For a sensed sample `age >= 1 + c + d`
/// coincides with negative laxity.
pub fn classify_mode(flow: &FlowState) -> Mode {
    if flow.dropped {
        Mode::OutOfService
    } else if flow.age < flow.actuation_prev + 1 {
        Mode::Inactive
    } else if flow.mode == Mode::Active && flow.age >= flow.age_threshold() {
        Mode::OutOfService
    } else if flow.mode == Mode::Active {
        Mode::Active
    } else {
        // Due for sensing but not sensed yet; the engine senses before classifying.
        Mode::Inactive
    }
}

/// Age evolution over one slot. A successfully served flow starts sample
/// `k + 1` with age 1 and the actuation duration of the sample just served.
pub fn age_step(flow: &FlowState, served_ok: bool, next_actuation: i64) -> FlowState {
    let mut next = flow.clone();
    if served_ok {
        next.sample += 1;
        next.age = 1;
        next.actuation_prev = next_actuation;
        next.mode = Mode::Inactive;
    } else {
        next.age += 1;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn active(arrival: i64, c: i64, d: i64, t: i64) -> FlowState {
        let mut f = FlowState::pending(1, 0, c);
        f.age = 1 + c + (t - 1 - arrival);
        f.arrival = arrival;
        f.rel_deadline = d;
        f.mode = Mode::Active;
        f
    }

    #[test]
    fn latency_examples() {
        assert_eq!(latency(&active(4, 2, 10, 5), 5), 0);
        assert_eq!(latency(&active(4, 2, 10, 9), 9), 4);
        let inactive = FlowState::pending(1, 2, 5);
        assert_eq!(latency(&inactive, 17), 0);
    }

    #[test]
    fn freshness_examples() {
        assert_eq!(freshness(0), 1.0);
        assert_eq!(freshness(4), 0.2);
        assert_eq!(freshness(9), 0.1);
    }

    #[test]
    fn laxity_examples() {
        assert_eq!(laxity(&active(3, 1, 9, 9), 9), 3);
        assert_eq!(laxity(&active(3, 1, 9, 12), 12), 0);
        // d=5, L=2: d - L - 1 = 2, and the absolute form with a=0, t=3.
        let f = active(0, 1, 5, 3);
        assert_eq!(latency(&f, 3), 2);
        assert_eq!(laxity(&f, 3), 2);
        assert_eq!(f.rel_deadline - latency(&f, 3) - 1, 2);
    }

    #[test]
    fn utility_examples() {
        let cfg = SimConfig::default();
        assert_eq!(utility(&active(4, 2, 10, 5), 5, &cfg), 1.0);
        assert_eq!(utility(&active(0, 2, 10, 5), 5, &cfg), 0.2);
        let mut late = active(0, 2, 3, 5);
        assert!(laxity(&late, 5) < 0);
        assert_eq!(utility(&late, 5, &cfg), 0.0);
        late.drop_sample();
        assert_eq!(utility(&late, 5, &cfg), 0.0);
    }

    #[test]
    fn utility_respects_exponents_and_constants() {
        let cfg = SimConfig {
            freshness_exp: 2.0,
            k_freshness: 3.0,
            k_laxity: 0.5,
            ..SimConfig::default()
        };
        // L = 1: 1.5 * (1/2)^2
        let u = utility(&active(3, 2, 10, 5), 5, &cfg);
        assert!((u - 0.375).abs() < 1e-15);
    }

    #[test]
    fn priority_examples() {
        let cfg = SimConfig::default();
        assert_eq!(priority(&active(3, 1, 9, 12), 12, &cfg), Priority::Infinite);
        // L = 4, U = 0.2
        assert_eq!(priority(&active(0, 1, 20, 5), 5, &cfg), Priority::Finite(5.0));
        assert_eq!(priority(&active(4, 1, 20, 5), 5, &cfg), Priority::Finite(1.0));
    }

    #[test]
    fn priority_ordering() {
        assert!(Priority::Infinite > Priority::Finite(f64::MAX));
        assert!(Priority::Finite(2.0) > Priority::Finite(1.5));
        assert_eq!(Priority::Infinite.cmp(&Priority::Infinite), Ordering::Equal);
    }

    #[test]
    fn classify_examples() {
        let mut f = FlowState::pending(1, 3, 4);
        assert_eq!(classify_mode(&f), Mode::Inactive);
        // h=5, c=4: sensed at this slot with d=7.
        f.age = 5;
        f.sense(10, 7);
        assert_eq!(classify_mode(&f), Mode::Active);
        assert_eq!(latency(&f, 10), 0);
        // h=12 = 1 + c + d
        let mut g = f.clone();
        g.age = 12;
        assert_eq!(classify_mode(&g), Mode::OutOfService);
        assert!(laxity(&g, 17) < 0);
        g.age = 11;
        assert_eq!(classify_mode(&g), Mode::Active);
        assert_eq!(laxity(&g, 16), 0);
    }

    #[test]
    fn age_step_examples() {
        let mut f = active(0, 2, 20, 5);
        f.age = 7;
        assert_eq!(age_step(&f, false, 9).age, 8);
        let served = age_step(&f, true, 9);
        assert_eq!(served.age, 1);
        assert_eq!(served.sample, f.sample + 1);
        assert_eq!(served.actuation_prev, 9);
        assert_eq!(served.mode, Mode::Inactive);

        let mut out = f.clone();
        out.age = 20;
        out.drop_sample();
        let next = age_step(&out, false, 3);
        assert_eq!(next.age, 21);
        assert_eq!(next.mode, Mode::OutOfService);
    }

    #[test]
    fn sense_places_arrival_on_decomposition() {
        // Pre-horizon sensing: h=9, c=3 at t=1 means L=5 and a=-5.
        let mut f = FlowState::pending(2, 9, 3);
        f.sense(1, 8);
        assert_eq!(f.arrival, -5);
        assert_eq!(latency(&f, 1), 5);
        assert_eq!(f.age, 1 + f.actuation_prev + latency(&f, 1));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.flows, 16);
        assert_eq!(cfg.channel_on_prob, 0.8);
        assert_eq!(cfg.actuation_range, SlotRange(1, 25));
        assert_eq!(cfg.rel_deadline_range, SlotRange(1, 20));
        assert!(cfg.has_unit_utility());
        assert!(cfg.validate().is_ok());

        let bad = SimConfig {
            channel_on_prob: 1.5,
            ..SimConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::Invalid { field: "channel_on_prob", .. })
        ));
        let bad = SimConfig {
            actuation_range: SlotRange(0, 4),
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            freshness_exp: 0.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
