use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qst(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qst"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn gen_data_writes_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(qst(dir.path(), &["gen-data", "--state", "ghz", "--qubits", "10", "--samples", "900", "--seed", "7"]));
    let text = fs::read_to_string(dir.path().join("ghz-10q-900.txt")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "qst-dataset v1 qubits=10 povm=pauli4 source=ghz seed=7");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 900);
    assert!(rows.iter().all(|r| r.len() == 10 && r.bytes().all(|b| (b'0'..=b'3').contains(&b))));
}

#[test]
fn zero_samples_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    ok(qst(dir.path(), &["gen-data", "--state", "w", "--qubits", "3", "--samples", "0", "--file", "empty.txt"]));
    let text = fs::read_to_string(dir.path().join("empty.txt")).unwrap();
    assert_eq!(text, "qst-dataset v1 qubits=3 povm=pauli4 source=w seed=0\n");
}

#[test]
fn hard_state_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen-data", "--state", "hard", "--qubits", "6", "--state-seed", "3", "--samples", "50"];
    ok(qst(dir.path(), &[&args[..], &["--file", "a.txt"]].concat()));
    ok(qst(dir.path(), &[&args[..], &["--file", "b.txt"]].concat()));
    let a = fs::read(dir.path().join("a.txt")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.txt")).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with("qst-dataset v1 qubits=6 povm=pauli4 source=hard-3 seed=0\n"));
}

#[test]
fn bad_state_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!qst(dir.path(), &["gen-data", "--state", "cluster", "--qubits", "3"]).status.success());
}

#[test]
fn train_echoes_defaults_and_rejects_short_runs() {
    let dir = tempfile::tempdir().unwrap();
    ok(qst(dir.path(), &["gen-data", "--qubits", "3", "--samples", "40", "--file", "d.txt"]));
    let data = dir.path().join("d.txt");
    let data = data.to_str().unwrap();
    let short = qst(dir.path(), &["train", "--data", data, "--epochs", "1"]);
    assert!(!short.status.success());
    assert!(String::from_utf8_lossy(&short.stderr).contains("window"));

    let run = || ok(qst(dir.path(), &["train", "--data", data, "--epochs", "6", "--window", "3", "--hidden", "4"]));
    let first = run();
    assert!(stdout(&first).contains("layers=3 lr=0.001"));
    let ledger = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    assert!(ledger.starts_with("epoch,loss,d\n1,"));
    assert!(ledger.lines().nth(1).unwrap().ends_with(','));
    assert!(ledger.lines().last().unwrap().starts_with("# selected_epoch="));
    let ckpts: Vec<_> = fs::read_dir(dir.path().join("checkpoints")).unwrap().collect();
    assert!(!ckpts.is_empty() && ckpts.len() <= 2);

    run();
    assert_eq!(ledger, fs::read_to_string(dir.path().join("ledger.csv")).unwrap());
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nqubits=2\nsamples=12\nstate=product\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = ok(qst(dir.path(), &["--config", cfg, "gen-data"]));
    assert!(stdout(&o).contains("12 samples of product (2 qubits"));
    let o = ok(qst(dir.path(), &["--config", cfg, "gen-data", "--samples", "5"]));
    assert!(stdout(&o).contains("5 samples of product (2 qubits"));
}

#[test]
fn eval_groups_exact_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    ok(qst(dir.path(), &["gen-data", "--qubits", "6", "--samples", "30", "--file", "d.txt"]));
    let data = dir.path().join("d.txt");
    ok(qst(dir.path(), &["train", "--data", data.to_str().unwrap(), "--epochs", "3", "--window", "2", "--hidden", "4"]));
    let ckpt = dir.path().join("checkpoints").join("epoch-00003.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    ok(qst(dir.path(), &["eval", "--checkpoint", ckpt, "--state", "ghz", "--groups", "5", "--samples", "500"]));
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let rows: Vec<Vec<&str>> = results.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(results.lines().next().unwrap(), "run_id,method,value,stderr,n_samples,seed");
    let mc: Vec<&Vec<&str>> = rows.iter().filter(|r| r[1] == "mc").collect();
    assert_eq!(mc.len(), 5);
    let mut seeds: Vec<&str> = mc.iter().map(|r| r[5]).collect();
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 5);
    let exact: Vec<&Vec<&str>> = rows.iter().filter(|r| r[1] == "exact").collect();
    assert_eq!(exact.len(), 1);
    assert_eq!(exact[0][3], "0");

    let wrong = qst(dir.path(), &["eval", "--checkpoint", ckpt, "--state", "ghz", "--qubits", "5"]);
    assert!(!wrong.status.success());
}

#[test]
fn reproduce_fig4_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(qst(dir.path(), &["reproduce", "fig4"]));
    let counts = fs::read_to_string(dir.path().join("fig4").join("counts.csv")).unwrap();
    assert!(counts.starts_with("state,qubits,tol,distinct_values,paper_value\n"));
    assert!(counts.contains("ghz,6,1e-10,17,17"));
    let dist = fs::read_to_string(dir.path().join("fig4").join("distributions.csv")).unwrap();
    assert_eq!(dist.lines().count(), 1 + 4 * 4096);
    assert!(dir.path().join("fig4").join("manifest.txt").exists());
}

#[test]
fn reproduce_fig2_small_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(qst(dir.path(), &["reproduce", "fig2", "--qubits", "3", "--samples", "40,80", "--epochs", "4", "--window", "2", "--hidden", "4"]));
    let curve = fs::read_to_string(dir.path().join("fig2").join("ns40.csv")).unwrap();
    assert!(curve.starts_with("epoch,loss,d,fc\n"));
    assert_eq!(curve.lines().count(), 5);
    let summary = fs::read_to_string(dir.path().join("fig2").join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}
