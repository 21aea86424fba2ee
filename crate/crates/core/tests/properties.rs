use proptest::prelude::*;

use aoisim::engine::audit_trace;
use aoisim::experiment::{ExperimentSpec, Preset};
use aoisim::metrics::{average_aoi, average_latency, objective_value, RunMetrics};
use aoisim::model::{freshness, laxity, utility, FlowState};
use aoisim::oracle::{check_lemma1, reference_hlf_d};
use aoisim::policies::{edf, hlf, hlf_d, llf, ActiveEntry, ActiveSnapshot};
use aoisim::{run_horizon, run_with_plan, Mode, PolicyKind, Priority, RandomnessPlan, SimConfig, SlotRange};

fn any_policy() -> impl Strategy<Value = PolicyKind> {
    prop_oneof![
        Just(PolicyKind::HlfD),
        Just(PolicyKind::Hlf),
        Just(PolicyKind::Edf),
        Just(PolicyKind::Llf),
        Just(PolicyKind::Random),
    ]
}

prop_compose! {
    fn small_config()(
        flows in 1usize..10,
        horizon in 1u32..80,
        p in 0.0f64..=1.0,
        c_lo in 1i64..4, c_span in 0i64..8,
        d_lo in 1i64..4, d_span in 0i64..8,
        seed in any::<u64>(),
    ) -> SimConfig {
        SimConfig {
            flows,
            horizon,
            channel_on_prob: p,
            actuation_range: SlotRange(c_lo, c_lo + c_span),
            rel_deadline_range: SlotRange(d_lo, d_lo + d_span),
            seed,
            replications: 1,
            ..SimConfig::default()
        }
    }
}

prop_compose! {
    fn any_snapshot()(
        raw in prop::collection::vec((0i64..12, 0i64..6), 0..8),
        t in 10i64..20,
        hard_pick in any::<prop::sample::Index>(),
        with_hard in any::<bool>(),
    ) -> ActiveSnapshot {
        let entries: Vec<ActiveEntry> = raw
            .iter()
            .enumerate()
            .map(|(i, &(latency, laxity))| {
                let arrival = t - 1 - latency;
                let u = 1.0 / (latency as f64 + 1.0);
                ActiveEntry {
                    id: i + 1,
                    latency,
                    utility: u,
                    priority: Priority::Finite(1.0 / u),
                    laxity,
                    deadline: t + laxity,
                    arrival,
                }
            })
            .collect();
        let mut snap = ActiveSnapshot { t, entries, hard_critical: None };
        if with_hard && !snap.entries.is_empty() {
            let i = hard_pick.index(snap.entries.len());
            snap.entries[i].priority = Priority::Infinite;
            snap.entries[i].laxity = 0;
            snap.entries[i].deadline = t;
            snap.hard_critical = Some(snap.entries[i].id);
        }
        snap
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn traces_pass_structural_audit(cfg in small_config(), policy in any_policy(), rep in 0u64..50) {
        let trace = run_horizon(&cfg, &mut *policy.build(cfg.seed, rep), rep).unwrap();
        prop_assert_eq!(trace.records.len(), cfg.horizon as usize);
        if let Err(e) = audit_trace(&trace) {
            return Err(TestCaseError::fail(e.to_string()));
        }
    }

    #[test]
    fn deadline_views_agree_on_sensed_flows(cfg in small_config(), policy in any_policy()) {
        let plan = RandomnessPlan::seeded(&cfg, 0);
        let trace = run_with_plan(&cfg, &plan, &mut *policy.build(cfg.seed, 0), 0).unwrap();
        for rec in &trace.records {
            for f in rec.flows.iter().filter(|f| f.mode == Mode::Active) {
                prop_assert_eq!(f.laxity, Some(f.actuation_prev + f.rel_deadline - f.age));
            }
        }
    }

    #[test]
    fn freshness_is_decreasing_and_bounded(l in 0i64..10_000) {
        let (a, b) = (freshness(l), freshness(l + 1));
        prop_assert!(a > b && b > 0.0 && a <= 1.0);
    }

    #[test]
    fn priority_follows_latency(la in 0i64..50, lb in 0i64..50, t in 100i64..200) {
        let cfg = SimConfig::default();
        let flow = |l: i64| FlowState {
            arrival: t - 1 - l,
            rel_deadline: 60,
            mode: Mode::Active,
            ..FlowState::pending(1, 1, 0)
        };
        let (fa, fb) = (flow(la), flow(lb));
        prop_assert!(laxity(&fa, t) > 0 && laxity(&fb, t) > 0);
        let (pa, pb) = (aoisim::model::priority(&fa, t, &cfg), aoisim::model::priority(&fb, t, &cfg));
        prop_assert_eq!(la.cmp(&lb), pa.cmp(&pb));
        prop_assert_eq!(la.cmp(&lb), utility(&fb, t, &cfg).total_cmp(&utility(&fa, t, &cfg)));
    }

    #[test]
    fn unserved_utility_order_is_preserved(cfg in small_config(), policy in any_policy()) {
        let trace = run_horizon(&cfg, &mut *policy.build(cfg.seed, 0), 0).unwrap();
        let scan = check_lemma1([&trace]);
        prop_assert!(scan.violations.is_empty(), "{:?}", scan.violations);
    }

    #[test]
    fn hlf_d_matches_reference_argmax(snap in any_snapshot()) {
        prop_assert_eq!(hlf_d(&snap), reference_hlf_d(&snap));
    }

    #[test]
    fn hlf_d_is_hlf_without_hard_critical(mut snap in any_snapshot()) {
        for e in &mut snap.entries {
            e.priority = Priority::Finite(e.latency as f64 + 1.0);
        }
        snap.hard_critical = None;
        prop_assert_eq!(hlf_d(&snap), hlf(&snap));
    }

    #[test]
    fn edf_and_llf_rank_alike(snap in any_snapshot()) {
        let min_lax = snap.entries.iter().map(|e| e.laxity).min();
        let min_deadline = snap.entries.iter().map(|e| e.deadline).min();
        if let (Some(l), Some(d)) = (min_lax, min_deadline) {
            let e = edf(&snap).flow().unwrap();
            let m = llf(&snap).flow().unwrap();
            prop_assert_eq!(snap.entries[e - 1].laxity, l);
            prop_assert_eq!(snap.entries[m - 1].deadline, d);
        } else {
            prop_assert!(edf(&snap).flow().is_none() && llf(&snap).flow().is_none());
        }
    }

    #[test]
    fn normalized_metrics_are_bounded(cfg in small_config(), policy in any_policy(), weight in 0.1f64..3.0) {
        let cfg = SimConfig { weight, ..cfg };
        let trace = run_horizon(&cfg, &mut *policy.build(cfg.seed, 0), 0).unwrap();
        let v = objective_value(&trace);
        prop_assert!(v >= 0.0 && v <= weight * cfg.utility_scale() + 1e-12);
        prop_assert!(average_latency(&trace) <= average_aoi(&trace));
        let m = RunMetrics::from_trace(&trace);
        prop_assert!(m.rms_jitter >= 0.0);
        if policy == PolicyKind::HlfD {
            prop_assert_eq!(m.drop_count, 0);
        }
    }

    #[test]
    fn shorter_horizon_is_a_prefix(cfg in small_config(), policy in any_policy(), extra in 1u32..40) {
        let long_cfg = SimConfig { horizon: cfg.horizon + extra, ..cfg.clone() };
        let short = run_horizon(&cfg, &mut *policy.build(cfg.seed, 3), 3).unwrap();
        let long = run_horizon(&long_cfg, &mut *policy.build(cfg.seed, 3), 3).unwrap();
        prop_assert_eq!(&short.records[..], &long.records[..short.records.len()]);
    }

    #[test]
    fn policies_share_randomness(cfg in small_config(), rep in 0u64..20) {
        let ids: Vec<u64> = PolicyKind::BUILTIN
            .iter()
            .map(|p| run_horizon(&cfg, &mut *p.build(cfg.seed, rep), rep).unwrap().plan_id)
            .collect();
        prop_assert!(ids.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn experiment_config_round_trips(
        flows in 1usize..500,
        p in 0.0f64..=1.0,
        reps in 1usize..400,
        seed in any::<u64>(),
        grid in prop::collection::btree_set(1u32..5000, 1..12),
        preset in prop_oneof![Just(Preset::Fig4), Just(Preset::Fig5), Just(Preset::Fig6), Just(Preset::Custom)],
    ) {
        let mut spec = ExperimentSpec {
            preset,
            horizons: grid.into_iter().collect(),
            ..ExperimentSpec::default()
        };
        spec.config.flows = flows;
        spec.config.channel_on_prob = p;
        spec.config.replications = reps;
        spec.config.seed = seed;
        spec.validate().unwrap();
        let back = ExperimentSpec::from_toml(&spec.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, spec);
    }
}
