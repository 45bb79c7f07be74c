use std::path::Path;
use std::process::{Command, Output};

fn irt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = irt(args);
    assert!(
        out.status.success(),
        "irt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_fit_recover_select() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let sim = root.join("sim");
    let stdout = ok(&[
        "simulate",
        "--n-models",
        "20",
        "--n-items",
        "120",
        "--seed",
        "3",
        "--out",
        s(&sim),
    ]);
    for name in [
        "responses.csv",
        "confidences.csv",
        "truth.json",
        "item_meta.csv",
        "flags.csv",
        "predictions.csv",
        "run.json",
    ] {
        assert!(sim.join(name).exists(), "{name} missing");
        assert!(stdout.contains(name), "no summary line for {name}");
    }
    let responses = sim.join("responses.csv");
    let before = std::fs::read(&responses).unwrap();

    let fit = root.join("fit");
    ok(&[
        "fit",
        "--responses",
        s(&responses),
        "--kind",
        "2pl",
        "--epochs",
        "300",
        "--seed",
        "3",
        "--out",
        s(&fit),
    ]);
    assert_eq!(std::fs::read(&responses).unwrap(), before, "fit modified its input");
    let trace = std::fs::read_to_string(fit.join("elbo.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("step,elbo"));
    assert_eq!(trace.lines().count(), 301);

    let rec = root.join("rec");
    let posterior = fit.join("posterior.json");
    ok(&[
        "recover",
        "--truth",
        s(&sim.join("truth.json")),
        "--posterior",
        s(&posterior),
        "--out",
        s(&rec),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rec.join("recovery.json")).unwrap()).unwrap();
    let ability = report["families"]
        .as_array()
        .unwrap()
        .iter()
        .find(|f| f["family"] == "ability")
        .unwrap();
    assert!(ability["kendall_tau"].as_f64().unwrap() > 0.7);

    let sel = root.join("sel");
    ok(&["select", "--posterior", s(&posterior), "--k", "10", "--out", s(&sel)]);
    let ids = std::fs::read_to_string(sel.join("selected.txt")).unwrap();
    assert_eq!(ids.lines().count(), 10);
    assert!(!sel.join("fidelity.json").exists());
}

#[test]
fn malformed_csv_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "model_id,a,b\nm1,1,0\nm2,0,yes\n").unwrap();
    let out = irt(&["fit", "--responses", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("m2") && err.contains("`b`") && err.contains("yes"),
        "{err}"
    );
}

#[test]
fn missing_inputs_and_unknown_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert!(!irt(&["fit", "--kind", "2pl", "--out", s(&out)]).status.success());
    assert!(!irt(&["fit", "--no-such-flag", "--out", s(&out)]).status.success());
    assert!(!irt(&[
        "recover",
        "--truth",
        s(&dir.path().join("absent.json")),
        "--out",
        s(&out)
    ])
    .status
    .success());
}

#[test]
fn config_file_replays_with_flags_on_top() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&[
        "simulate",
        "--n-models",
        "6",
        "--n-items",
        "15",
        "--kind",
        "1pl",
        "--seed",
        "9",
        "--out",
        s(&a),
    ]);
    let b = dir.path().join("b");
    ok(&["simulate", "--config", s(&a.join("run.json")), "--out", s(&b)]);
    assert_eq!(
        std::fs::read(a.join("responses.csv")).unwrap(),
        std::fs::read(b.join("responses.csv")).unwrap()
    );
    let c = dir.path().join("c");
    ok(&[
        "simulate",
        "--config",
        s(&a.join("run.json")),
        "--n-items",
        "7",
        "--out",
        s(&c),
    ]);
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(c.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "simulate");
    assert_eq!(run["settings"]["n_items"], 7);
    assert_eq!(run["settings"]["n_models"], 6);
    assert_eq!(run["settings"]["seed"], 9);
    // a config for another subcommand is refused
    assert!(!irt(&["fit", "--config", s(&a.join("run.json")), "--out", s(&c)])
        .status
        .success());
}
