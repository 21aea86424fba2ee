//! Policy-independent randomness: channel realizations, per-sample actuation
//! and deadline draws, and initial conditions.
//!
//! Sample draws are counter-based: the value for `(replication, flow, k)` is a
//! pure function of the seed, so every policy sees the same `c_i(k)` and
//! `d_i(k)` no matter when (or whether) sample `k` arrives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{FlowId, SimConfig, SlotRange};

const TAG_CHANNEL: u64 = 0x4348_414e;
const TAG_INITIAL: u64 = 0x494e_4954;
const TAG_ACTUATION: u64 = 0x4143_5455;
const TAG_DEADLINE: u64 = 0x4445_4144;
const TAG_POLICY: u64 = 0x504f_4c49;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent generator for a keyed substream.
pub fn keyed_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut x = splitmix64(seed);
    for &k in key {
        x = splitmix64(x ^ splitmix64(k));
    }
    ChaCha8Rng::seed_from_u64(x)
}

/// Stream reserved for a randomized policy in a given replication.
pub fn policy_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    keyed_rng(seed, &[TAG_POLICY, replication])
}

/// Lazily evaluated per-sample draws for one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDraws {
    pub seed: u64,
    pub replication: u64,
    pub actuation: SlotRange,
    pub rel_deadline: SlotRange,
}

impl SampleDraws {
    fn draw(&self, tag: u64, flow: FlowId, k: u64, range: SlotRange) -> i64 {
        let mut rng = keyed_rng(self.seed, &[tag, self.replication, flow as u64, k]);
        rng.gen_range(range.lo()..=range.hi())
    }

    /// `c_i(k)`: actuation duration following service of sample `k` (`k >= 0`).
    pub fn actuation(&self, flow: FlowId, k: u64) -> i64 {
        self.draw(TAG_ACTUATION, flow, k, self.actuation)
    }

    /// `d_i(k)`: relative deadline of sample `k` (`k >= 1`).
    pub fn rel_deadline(&self, flow: FlowId, k: u64) -> i64 {
        self.draw(TAG_DEADLINE, flow, k, self.rel_deadline)
    }
}

/// Explicit `c_i(k)` / `d_i(k)` tables, indexed `[flow - 1][k]`.
/// Index 0 of the deadline table is unused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawTable {
    pub actuation: Vec<Vec<i64>>,
    pub rel_deadline: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DrawSource {
    Seeded(SampleDraws),
    Table(DrawTable),
}

impl DrawSource {
    pub fn actuation(&self, flow: FlowId, k: u64) -> i64 {
        match self {
            DrawSource::Seeded(s) => s.actuation(flow, k),
            DrawSource::Table(t) => t.actuation[flow - 1][k as usize],
        }
    }

    pub fn rel_deadline(&self, flow: FlowId, k: u64) -> i64 {
        match self {
            DrawSource::Seeded(s) => s.rel_deadline(flow, k),
            DrawSource::Table(t) => t.rel_deadline[flow - 1][k as usize],
        }
    }
}

/// Initial condition of one flow: `h_{1,i}` and `c_i(0)`. The deadline of
/// the first sample comes from the draw source as `d_i(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialFlow {
    pub age: i64,
    pub actuation_prev: i64,
}

/// Everything random in a run, shared verbatim by every compared policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomnessPlan {
    /// Channel state of slots `1..=T`, index `t - 1`.
    pub channel: Vec<bool>,
    pub draws: DrawSource,
    pub initial: Vec<InitialFlow>,
}

impl RandomnessPlan {
    /// Seeded plan for replication `replication`. The channel sequence of a
    /// shorter horizon is a prefix of a longer one.
    pub fn seeded(cfg: &SimConfig, replication: u64) -> Self {
        let mut ch = keyed_rng(cfg.seed, &[TAG_CHANNEL, replication]);
        let channel = (0..cfg.horizon)
            .map(|_| ch.gen_bool(cfg.channel_on_prob))
            .collect();
        let draws = SampleDraws {
            seed: cfg.seed,
            replication,
            actuation: cfg.actuation_range,
            rel_deadline: cfg.rel_deadline_range,
        };
        let initial = (1..=cfg.flows)
            .map(|i| {
                let c0 = draws.actuation(i, 0);
                let d1 = draws.rel_deadline(i, 1);
                let mut rng = keyed_rng(cfg.seed, &[TAG_INITIAL, replication, i as u64]);
                // 1 <= h < 1 + c(0) + d(1)
                InitialFlow {
                    age: rng.gen_range(1..=c0 + d1),
                    actuation_prev: c0,
                }
            })
            .collect();
        Self {
            channel,
            draws: DrawSource::Seeded(draws),
            initial,
        }
    }

    pub fn flows(&self) -> usize {
        self.initial.len()
    }

    pub fn horizon(&self) -> usize {
        self.channel.len()
    }

    pub fn channel_on(&self, t: i64) -> bool {
        self.channel[(t - 1) as usize]
    }

    /// Stable 64-bit fingerprint (FNV-1a over the canonical JSON form).
    pub fn fingerprint(&self) -> u64 {
        let bytes = serde_json::to_vec(self).expect("plan serializes");
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
