use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn dypol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dypol")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A scratch copy of the example store with the nurse session recorded.
fn recorded() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let pap = dir.path().join("pap");
    fs::create_dir(&pap).unwrap();
    for f in ["01_P.xml", "manifest.txt"] {
        fs::copy(data("pap").join(f), pap.join(f)).unwrap();
    }
    let sessions = dir.path().join("sessions.json");
    let o = dypol(&[
        "evaluate",
        "--pap",
        s(&pap),
        "--request",
        s(&data("nurse_request.json")),
        "--record",
        s(&sessions),
    ]);
    assert!(o.status.success());
    (dir, pap, sessions)
}

fn update(pap: &Path, sessions: &Path, events: &str, extra: &[&str]) -> Output {
    let events = data("events").join(events);
    let mut args = vec!["update", "--pap", s(pap), "--events", s(&events), "--sessions", s(sessions)];
    args.extend_from_slice(extra);
    dypol(&args)
}

fn decision_line(o: &Output) -> serde_json::Value {
    let out = stdout(o);
    let line = out.lines().find(|l| l.contains("\"session\"")).expect("a session line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn evaluate_permits_the_nurse() {
    let o = dypol(&["evaluate", "--pap", s(&data("pap")), "--request", s(&data("nurse_request.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), r#"{"decision":"Permit","obligations":[]}"#);
}

#[test]
fn empty_store_is_not_applicable() {
    let empty = tempfile::tempdir().unwrap();
    let o = dypol(&["evaluate", "--pap", s(empty.path()), "--request", s(&data("nurse_request.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("NotApplicable"));
}

#[test]
fn malformed_request_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    let o = dypol(&["evaluate", "--pap", s(&data("pap")), "--request", s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn strict_mode_exits_1_on_deny() {
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("late.json");
    let text = fs::read_to_string(data("nurse_request.json")).unwrap().replace("08:00", "21:00");
    fs::write(&req, text).unwrap();
    let o = dypol(&["evaluate", "--pap", s(&data("pap")), "--request", s(&req), "--strict"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("\"Deny\""));
}

#[test]
fn trace_lists_every_node() {
    let o = dypol(&[
        "evaluate",
        "--pap",
        s(&data("pap")),
        "--request",
        s(&data("nurse_request.json")),
        "--trace",
    ]);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["trace"].as_array().unwrap().len(), 7);
    assert_eq!(v["counters"]["evaluateRequest"], 1);
}

#[test]
fn deleting_the_policy_leaves_the_session_not_applicable() {
    let (_dir, pap, sessions) = recorded();
    let o = update(&pap, &sessions, "delete_policy.ndjson", &["--trace"]);
    assert_eq!(o.status.code(), Some(0));
    let v = decision_line(&o);
    assert_eq!(v["response"]["decision"], "NotApplicable");
    assert_eq!(v["counters"]["evaluateRequest"], 2);
    assert_eq!(v["counters"]["filterPolicy"], 1);
}

#[test]
fn provided_department_permits() {
    let (_dir, pap, sessions) = recorded();
    let answers = data("heart_center.json");
    let o = update(&pap, &sessions, "insert_rule.ndjson", &["--obligations", s(&answers)]);
    assert_eq!(o.status.code(), Some(0));
    let v = decision_line(&o);
    assert_eq!(v["response"]["decision"], "Permit");
    assert_eq!(v["attributeRequest"]["obligations"][0]["oid"], "Os1");
    assert_eq!(v["attributeRequest"]["obligations"][0]["aid"], "Department");
}

#[test]
fn missing_answers_are_indeterminate() {
    let (_dir, pap, sessions) = recorded();
    let o = update(&pap, &sessions, "insert_rule.ndjson", &[]);
    assert_eq!(decision_line(&o)["response"]["decision"], "IndeterminateD");
}

#[test]
fn write_persists_store_and_sessions() {
    let (_dir, pap, sessions) = recorded();
    let o = update(&pap, &sessions, "edit_rule.ndjson", &["--write"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(&sessions).unwrap().contains("\"Deny\""));
    assert!(fs::read_to_string(pap.join("01_P.xml")).unwrap().contains("integer-greater-than"));
    assert_eq!(fs::read_to_string(pap.join("journal.ndjson")).unwrap().lines().count(), 1);
    let o = dypol(&["evaluate", "--pap", s(&pap), "--request", s(&data("nurse_request.json"))]);
    assert!(stdout(&o).contains("\"Deny\""));
}

#[test]
fn unknown_target_exits_4() {
    let (dir, pap, sessions) = recorded();
    let events = dir.path().join("events.ndjson");
    fs::write(&events, "{\"op\":\"delete-rule\",\"target\":\"R99\"}\n").unwrap();
    let o = dypol(&["update", "--pap", s(&pap), "--events", s(&events), "--sessions", s(&sessions)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn session_recorded_against_another_store_is_stale() {
    let (dir, pap, sessions) = recorded();
    let text = fs::read_to_string(&sessions).unwrap().replace("\"Permit\"", "\"Deny\"");
    fs::write(&sessions, text).unwrap();
    let o = update(&pap, &sessions, "delete_rule.ndjson", &[]);
    assert_eq!(o.status.code(), Some(4));
    drop(dir);
}

#[test]
fn bench_prints_rows_for_both_engines() {
    let o = dypol(&[
        "bench", "--profile", "KMarket", "--testbed", "delete-condition", "--updates", "3", "--sessions", "20",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.contains(",incremental,3,20,"));
    assert!(out.contains(",baseline,3,20,"));
}

#[test]
fn bench_with_no_updates_is_idle() {
    let o = dypol(&["bench", "--profile", "GEYSER", "--testbed", "insert-policy", "--updates", "0", "--sessions", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains(",incremental,0,10,0,0,"));
}

#[test]
fn bench_rejects_unknown_testbed() {
    let o = dypol(&["bench", "--profile", "KMarket", "--testbed", "rename-policy"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_reads_profile_files() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("tiny.json");
    fs::write(
        &profile,
        r#"{"name":"tiny","levels":2,"policySets":1,"policies":2,"rules":4,"attributes":2,"functionMix":{"equality":1.0}}"#,
    )
    .unwrap();
    let o = dypol(&["bench", "--profile", s(&profile), "--testbed", "all", "--updates", "2", "--sessions", "8"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 11);
}

#[test]
fn verify_reports_equivalence_and_mutants() {
    let (pap, domains) = (data("pap"), data("domains.json"));
    let args = ["verify", "--pap", s(&pap), "--domains", s(&domains)];
    let o = dypol(&args);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "P: equivalent over 6561 requests");

    let mut mutant = args.to_vec();
    mutant.push("--mutant");
    let o = dypol(&mutant);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("counterexample"));

    let mut small = args.to_vec();
    small.extend(["--bound", "100"]);
    let o = dypol(&small);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bound"));
}

#[test]
fn encode_prints_atoms_and_spaces() {
    let o = dypol(&["encode", "--pap", s(&data("pap"))]);
    let out = stdout(&o);
    assert!(out.contains("ac0: subject.role == \"nurse\""));
    assert!(out.contains("dsNA: (not (and ac0 ac1 ac2))"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(dypol(&["evaluate"]).status.code(), Some(2));
    assert_eq!(dypol(&["frobnicate"]).status.code(), Some(2));
    let o = dypol(&["evaluate", "--pap", "/nonexistent", "--request", "/nonexistent"]);
    assert_eq!(o.status.code(), Some(2));
}
