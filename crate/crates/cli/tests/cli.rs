use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn fedvib() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedvib"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Writes two synthetic nodes and shortens the federation to `rounds`.
fn synth_workspace(dir: &Path, rounds: u64) -> std::path::PathBuf {
    ok(fedvib()
        .args(["synth", "--nodes", "2", "--seed", "3", "--out"])
        .arg(dir)
        .output()
        .unwrap());
    let cfg = dir.join("experiment.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("rounds = 25"));
    fs::write(&cfg, text.replace("rounds = 25", &format!("rounds = {rounds}"))).unwrap();
    cfg
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn experiment_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_workspace(dir.path(), 2);
    let out = dir.path().join("results");
    let stdout = ok(fedvib().args(["experiment", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap());
    assert!(stdout.contains("node0") && stdout.contains("network:"), "{stdout}");
    for f in ["scores.csv", "rounds.csv", "metrics.csv", "network.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let rounds = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 3);
}

#[test]
fn tcp_federation_and_abort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_workspace(dir.path(), 2);
    let addr = format!("127.0.0.1:{}", free_port());
    let agg = fedvib()
        .args(["aggregate", "--clients", "2", "--rounds", "2", "--listen", &addr, "--config"])
        .arg(&cfg)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let trainers: Vec<_> = ["node0", "node1"]
        .iter()
        .map(|id| {
            fedvib()
                .args(["train", "--rounds", "2", "--aggregator", &addr, "--id", id, "--config"])
                .arg(&cfg)
                .arg("--data")
                .arg(dir.path().join(id))
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .spawn()
                .unwrap()
        })
        .collect();
    for t in trainers {
        let stdout = ok(t.wait_with_output().unwrap());
        assert!(stdout.contains("round   1"), "{stdout}");
        assert!(stdout.contains("f1"), "{stdout}");
    }
    let summary = ok(agg.wait_with_output().unwrap());
    assert_eq!(summary.lines().filter(|l| l.starts_with("round")).count(), 2, "{summary}");

    // one of two clients never shows up
    let addr = format!("127.0.0.1:{}", free_port());
    let agg = fedvib()
        .args(["aggregate", "--clients", "2", "--rounds", "2", "--timeout-secs", "2", "--listen", &addr, "--config"])
        .arg(&cfg)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let lone = fedvib()
        .args(["train", "--rounds", "2", "--aggregator", &addr, "--id", "node0", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(dir.path().join("node0"))
        .output()
        .unwrap();
    let agg = agg.wait_with_output().unwrap();
    assert_eq!(agg.status.code(), Some(3), "{}", String::from_utf8_lossy(&agg.stderr));
    assert!(!lone.status.success());
}

#[test]
fn missing_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedvib().args(["fetch-ims", "--set", "2", "--out"]).arg(dir.path().join("none")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "rounds = \"many\"\n").unwrap();
    let out = fedvib().args(["experiment", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = fedvib().args(["fetch-ims", "--set", "4", "--out", "x"]).output().unwrap();
    assert!(!out.status.success());
}
