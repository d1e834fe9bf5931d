use std::io::BufReader;
use std::net::TcpListener;
use std::time::Duration;

use crowdnav::cli::cmd_eval;
use crowdnav::config::RunConfig;
use crowdnav::external::{serve_cvm, ExternalPredictor, ServeOptions};
use crowdnav_core::eval::{Outcome, PolicyKind, ValueSource};
use crowdnav_core::predict::{predict_cvm, ObservedTracks, PredictError, Predictor, PredictorConfig, PredictorKind};
use crowdnav_core::Vec2;

fn server(extra: &[&str]) -> Vec<String> {
    let mut cmd = vec![env!("CARGO_BIN_EXE_crowdnav").to_string(), "serve-predictor".to_string()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

fn tracks() -> ObservedTracks {
    ObservedTracks::new(
        0.25,
        vec![
            vec![Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.2)],
            vec![Vec2::new(3.0, -1.0), Vec2::new(2.77, -1.0 / 3.0)],
        ],
    )
    .unwrap()
}

#[test]
fn echo_server_returns_cvm() {
    let mut p = ExternalPredictor::spawn(&server(&[]), 1, Duration::from_secs(10)).unwrap();
    for _ in 0..3 {
        assert_eq!(p.predict(&tracks(), 8, 0).unwrap(), predict_cvm(&tracks(), 8));
    }
    let mut many = ExternalPredictor::spawn(&server(&[]), 4, Duration::from_secs(10)).unwrap();
    let set = many.predict(&tracks(), 8, 0).unwrap();
    assert_eq!(set.num_samples(), 4);
    assert_eq!(set.trajectory(1, 3), predict_cvm(&tracks(), 8).trajectory(1, 0));
}

#[test]
fn wrong_sample_count_is_a_shape_error() {
    let mut p = ExternalPredictor::spawn(&server(&["--force-samples", "3"]), 5, Duration::from_secs(10)).unwrap();
    assert!(matches!(p.predict(&tracks(), 8, 0), Err(PredictError::Shape { .. })));
}

#[test]
fn slow_server_times_out() {
    let mut p = ExternalPredictor::spawn(&server(&["--delay-ms", "2000"]), 1, Duration::from_millis(100)).unwrap();
    assert_eq!(p.predict(&tracks(), 8, 0), Err(PredictError::Timeout));
    assert!(matches!(p.predict(&tracks(), 8, 0), Err(PredictError::Transport(_))));
}

#[test]
fn missing_program_is_a_transport_error() {
    let cmd = vec!["/nonexistent/predictor".to_string()];
    assert!(matches!(ExternalPredictor::spawn(&cmd, 1, Duration::from_secs(1)), Err(PredictError::Transport(_))));
}

#[test]
fn tcp_server_returns_cvm() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        serve_cvm(reader, stream, &ServeOptions::default()).unwrap();
    });
    {
        let mut p = ExternalPredictor::connect(&addr, 2, Duration::from_secs(10)).unwrap();
        let set = p.predict(&tracks(), 8, 0).unwrap();
        assert_eq!(set.trajectory(0, 1), predict_cvm(&tracks(), 8).trajectory(0, 0));
    }
    handle.join().unwrap();
}

fn eval_config(kind: PredictorKind, command: Vec<String>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.experiment.num_cases = 3;
    cfg.experiment.policy = PolicyKind::Planner;
    cfg.experiment.value = ValueSource::Analytic;
    cfg.predictor = PredictorConfig { kind, ..PredictorConfig::cvm() };
    cfg.external_predictor.command = command;
    cfg
}

#[test]
fn planner_on_echo_server_matches_builtin_cvm() {
    let dir = tempfile::tempdir().unwrap();
    let external = cmd_eval(&eval_config(PredictorKind::External, server(&[])), None, &dir.path().join("ext")).unwrap();
    let builtin = cmd_eval(&eval_config(PredictorKind::Cvm, vec![]), None, &dir.path().join("cvm")).unwrap();
    assert_eq!(external.logs, builtin.logs);
}

#[test]
fn unreachable_predictor_aborts_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = eval_config(PredictorKind::External, vec!["/nonexistent/predictor".into()]);
    let r = cmd_eval(&cfg, None, dir.path()).unwrap();
    assert!(r.logs.iter().all(|l| matches!(l.outcome, Outcome::Aborted { .. })));
    assert_eq!(r.metrics.aborted, 3);
    assert_eq!(r.metrics.success_rate, 0.0);
}
