use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn crowdnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdnav")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(crowdnav(&["--help"]).status.code(), Some(0));
    assert_eq!(crowdnav(&["--version"]).status.code(), Some(0));
    assert_eq!(crowdnav(&[]).status.code(), Some(1));
    assert_eq!(crowdnav(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = crowdnav(&["eval", "--out", p(dir.path()), "--cases", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--params"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "version = 1\n[planner]\ngama = 0.5\n").unwrap();
    let out = crowdnav(&["config", "dump", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));
    std::fs::write(&cfg, "[planner]\ngamma = 0.5\n").unwrap();
    assert_eq!(crowdnav(&["config", "dump", "--config", p(&cfg)]).status.code(), Some(2));
}

#[test]
fn config_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.toml");
    let second = dir.path().join("b.toml");
    assert!(crowdnav(&["config", "dump", "--out", p(&first)]).status.success());
    assert!(crowdnav(&["config", "dump", "--config", p(&first), "--out", p(&second)]).status.success());
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    let text = std::fs::read_to_string(&first).unwrap();
    for section in ["[sim]", "[predictor]", "[planner]", "[experiment]", "[value_net.training]"] {
        assert!(text.contains(section), "{section}");
    }
}

fn analytic_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("analytic.toml");
    std::fs::write(&cfg, "version = 1\n[experiment]\nvalue = \"analytic\"\nnum_cases = 3\n[predictor]\nnum_samples = 3\n").unwrap();
    cfg
}

#[test]
fn analytic_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = analytic_config(dir.path());
    let run = dir.path().join("run");
    let out = crowdnav(&["eval", "--config", p(&cfg), "--out", p(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("success"));
    let log = run.join("episodes").join("000001.json");
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    assert!(crowdnav(&["plot", p(&log), "--out", p(&a)]).status.success());
    assert!(crowdnav(&["plot", p(&log), "--out", p(&b)]).status.success());
    let svg = std::fs::read_to_string(&a).unwrap();
    assert_eq!(svg, std::fs::read_to_string(&b).unwrap());
    assert!(svg.starts_with("<?xml"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<svg").count(), 1);
    assert_eq!(svg.matches("<g ").count(), svg.matches("</g>").count());
    assert!(svg.contains(r#"id="vehicle""#) && svg.contains(r#"id="pedestrians""#));
    for i in 1..=5 {
        assert!(svg.contains(&format!(">{i}</text>")), "label {i}");
    }

    let again = dir.path().join("again");
    assert!(crowdnav(&["eval", "--config", p(&cfg), "--out", p(&again)]).status.success());
    assert_eq!(std::fs::read(run.join("metrics.csv")).unwrap(), std::fs::read(again.join("metrics.csv")).unwrap());

    let cmp = dir.path().join("cmp.csv");
    let out = crowdnav(&["compare", p(&run), p(&again), "--out", p(&cmp)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&cmp).unwrap().lines().count(), 4);
}

#[test]
fn tiny_training_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    std::fs::write(
        &cfg,
        "version = 1\n[value_net.training]\nil_episodes = 5\nil_epochs = 3\nrl_episodes = 5\nupdates_per_episode = 5\nbatch_size = 20\n",
    )
    .unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let start = Instant::now();
    let out = crowdnav(&["train", "--config", p(&cfg), "--out", p(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs() < 60);
    assert!(crowdnav(&["train", "--config", p(&cfg), "--out", p(&b)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.curve.csv").is_file());
    assert!(dir.path().join("a.config.toml").is_file());

    let run = dir.path().join("run");
    let out = crowdnav(&["eval", "--params", p(&a), "--out", p(&run), "--cases", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unwritable_output_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let start = Instant::now();
    let out = crowdnav(&["train", "--out", p(&blocker.join("p.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(start.elapsed().as_secs() < 10);
}
