use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aoisim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoisim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn simulate_writes_csv_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(
        &["simulate", "--preset", "fig6", "--T", "50,100", "--M", "6", "--reps", "4", "--traces", "1", "--out", "out"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(csv.starts_with("policy,horizon,metric,mean,ci95,reps\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 3);
    assert!(dir.path().join("out/horizon_means.csv").exists());
    assert!(dir.path().join("out/traces/llf_T100_rep0.jsonl").exists());
    let toml = fs::read_to_string(dir.path().join("out/experiment.toml")).unwrap();
    assert!(toml.contains("flows = 6"), "{toml}");
}

#[test]
fn simulate_reads_config_file_and_reports_field_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("ok.toml"),
        "preset = \"fig4\"\npolicies = [\"hlf-d\", \"random\"]\nhorizons = [20]\nout_dir = \"res\"\n[config]\nflows = 3\nreplications = 2\n",
    )
    .unwrap();
    let o = aoisim(&["simulate", "--config", "ok.toml"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let csv = fs::read_to_string(dir.path().join("res/metrics.csv")).unwrap();
    assert!(csv.contains("random,20,exwsuoi"), "{csv}");

    fs::write(dir.path().join("bad.toml"), "[config]\nflows = 3\nchannel_prob = 0.5\n").unwrap();
    let o = aoisim(&["simulate", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    let msg = text(&o);
    assert!(msg.contains("channel_prob") && msg.contains("line 3"), "{msg}");
}

#[test]
fn simulate_rejects_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(&["simulate", "--p", "1.5", "--reps", "1", "--T", "10"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("channel_on_prob"), "{}", text(&o));
    let o = aoisim(&["simulate", "--T", "20,10"], dir.path());
    assert!(!o.status.success());
    let o = aoisim(&["simulate", "--policy", "fifo"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn simulate_fails_on_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let o = aoisim(&["simulate", "--T", "10", "--reps", "1", "--out", "blocker/sub"], dir.path());
    assert!(!o.status.success(), "{}", text(&o));
}

#[test]
fn verify_count_zero_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(&["verify", "--count", "0"], dir.path());
    assert!(o.status.success());
    assert!(text(&o).contains("warning"));
}

#[test]
fn verify_refuses_oversized_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(&["verify", "--M", "9", "--T", "20"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("too large"), "{}", text(&o));
}

#[test]
fn verify_passes_single_flow_with_instant_actuation() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(&["verify", "--M", "1", "--T", "4", "--count", "50", "--actuation", "0,0"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("PASS"));
}

#[test]
fn verify_witnesses_replay_to_the_same_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(&["verify", "--count", "200", "--out", "w"], dir.path());
    let out = text(&o);
    let witness = fs::read_dir(dir.path().join("w")).unwrap().next();
    let Some(witness) = witness else {
        assert!(o.status.success(), "{out}");
        return;
    };
    assert_eq!(o.status.code(), Some(1), "{out}");
    let path = witness.unwrap().path();
    let p = path.to_str().unwrap();
    for args in [vec!["replay", p], vec!["verify", "--replay", p]] {
        let r = aoisim(&args, dir.path());
        assert!(r.status.success(), "{}", text(&r));
        assert!(text(&r).contains("verdict reproduced"));
    }
}

#[test]
fn bench_single_m_is_a_baseline_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = aoisim(&["bench", "--M", "8", "--slots", "50", "--repeats", "1", "--out", "b.csv"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",1.0")), "{csv}");
}
