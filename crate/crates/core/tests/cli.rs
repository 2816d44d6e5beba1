use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_loopbound"));
    c.env_remove("LOOPBOUND_SMT");
    c
}

fn program(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("programs").join(name)
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("loopbound-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn initial_transitions_only() {
    let f = scratch("empty.its", "start l0\nl0 -> l1\n");
    let out = bin().arg("analyze").arg(&f).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("overall: 1\n"), "{text}");
}

#[test]
fn parse_error_reports_position() {
    let f = scratch("bad.its", "start l0\nl0 -> l1 { x := }\n");
    let out = bin().arg(&f).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.its:2:"), "{err}");
}

#[test]
fn json_report_is_deterministic_and_versioned() {
    let run = || bin().args(["--json", "--mode", "analyze"]).arg(program("fig3.its")).output().unwrap().stdout;
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["version"], 1);
}

#[test]
fn disabling_log_bounds_never_improves_classes() {
    let Some(z3) = loopbound::termination::find_solver_on_path() else { return };
    let class = |extra: &[&str]| {
        let out = bin().arg("--smt-solver").arg(&z3).args(extra).arg(program("fig2.its")).output().unwrap();
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().find_map(|l| l.strip_prefix("class: ").map(str::to_string)).unwrap()
    };
    assert_eq!(class(&[]), "O(n*log(n))");
    let without = class(&["--disable", "logbounds"]);
    assert_ne!(without, "O(n*log(n))");
    assert_ne!(without, "O(n)");
}

#[test]
fn check_mode_passes_on_fig3() {
    let out = bin().args(["check", "--oracle-samples", "20"]).arg(program("fig3.its")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("PASS"));
}

#[test]
fn classify_reports_period() {
    let out = bin().arg("classify").arg(program("fig2.its")).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("period 2"), "{text}");
}
