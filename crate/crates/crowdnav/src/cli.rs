//! Subcommands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use crowdnav_core::eval::{
    self, EvalError, PolicyFactory, PolicyKind, StandardPolicies, ValueSource, VehiclePolicy,
};
use crowdnav_core::predict::{PredictError, PredictorKind};
use crowdnav_core::sim::{Env, Scenario};
use crowdnav_core::value::{train, TrainReport, ValueNet};

use crate::config::RunConfig;
use crate::external::{self, ExternalPredictor, ServeOptions};
use crate::io;
use crate::plot;

#[derive(Parser, Debug)]
#[command(name = "crowdnav", version, about = "Crowd navigation simulation, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train a value network and write its parameters.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parameter file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write `<stem>.ep<N>.json` every this many RL episodes.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Run a Monte Carlo evaluation.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Base scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Pair two evaluation runs seed by seed.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Comparison CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render an episode log as SVG.
    Plot {
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Draw agent discs every this many steps.
        #[arg(long, default_value_t = 4)]
        every: usize,
    },
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigCmd,
    },
    /// Reference predictor server on stdin/stdout (constant velocity).
    #[command(hide = true)]
    ServePredictor {
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long)]
        force_samples: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
pub enum ConfigCmd {
    /// Print the effective configuration with every default filled in.
    Dump {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { config, out, seed, checkpoint_every } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.value_net.training.seed = s;
            }
            cmd_train(&cfg, &out, checkpoint_every)
        }
        Cmd::Eval { config, params, out, seed, cases } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.experiment.base_seed = s;
            }
            if let Some(n) = cases {
                cfg.experiment.num_cases = n;
            }
            cfg.validate()?;
            cmd_eval(&cfg, params.as_deref(), &out).map(|_| ())
        }
        Cmd::Compare { run_a, run_b, out } => cmd_compare(&run_a, &run_b, &out),
        Cmd::Plot { log, out, every } => cmd_plot(&log, &out, every),
        Cmd::Config { action: ConfigCmd::Dump { config, out } } => {
            let text = load_config(config.as_deref())?.to_toml();
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("cannot write {}", p.display())),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Cmd::ServePredictor { delay_ms, force_samples } => {
            let opts = ServeOptions { delay: std::time::Duration::from_millis(delay_ms), force_samples };
            let stdin = std::io::stdin();
            external::serve_cvm(stdin.lock(), std::io::stdout(), &opts)?;
            Ok(())
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "params".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Imitation then reinforcement learning; writes the parameter file, a
/// training-curve CSV and the configuration next to it.
pub fn cmd_train(cfg: &RunConfig, out: &Path, checkpoint_every: Option<usize>) -> Result<()> {
    cfg.validate()?;
    let tc = &cfg.value_net.training;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    // Fail on an unwritable destination before spending time on training.
    fs::write(out, b"").with_context(|| format!("cannot write {}", out.display()))?;

    let mut net = ValueNet::new(cfg.value_net.layers.clone(), tc.seed)?;
    let sim = cfg.sim.clone();
    let n = tc.n_pedestrians;
    let mut factory = |seed: u64| Env::from_seed(n, seed, &sim);
    let mut report = TrainReport::default();
    let mut buffer = train::train_imitation(&mut factory, &mut net, tc, &cfg.planner, &mut report)?;
    eprintln!(
        "imitation: {} samples, loss {:.5} -> {:.5}",
        report.il_samples,
        report.il_epoch_losses.first().copied().unwrap_or(f64::NAN),
        report.il_epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let mut checkpoint_error = None;
    let mut progress = |episode: usize, r: &TrainReport, net: &ValueNet| {
        if checkpoint_every.is_some_and(|k| k > 0 && (episode + 1) % k == 0) {
            let path = sibling(out, &format!(".ep{}.json", episode + 1));
            if let Err(e) = io::save_params(&path, net, None) {
                checkpoint_error.get_or_insert(e);
            }
        }
        if (episode + 1) % 100 == 0 {
            let recent = &r.rl_outcomes[r.rl_outcomes.len().saturating_sub(100)..];
            eprintln!(
                "rl episode {}: success {:.2}, loss {:.5}",
                episode + 1,
                train::success_rate(recent),
                r.rl_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
    };
    train::train_rl(&mut factory, &mut net, &mut buffer, tc, &cfg.planner, &mut report, Some(&mut progress))?;
    if let Some(e) = checkpoint_error {
        return Err(e.into());
    }

    let mut record = io::TrainingRecord::new(tc.seed, &report);
    record.il_episodes = tc.il_episodes;
    io::save_params(out, &net, Some(record))?;
    fs::write(sibling(out, ".curve.csv"), training_curve_csv(&report)?)?;
    fs::write(sibling(out, ".config.toml"), cfg.to_toml())?;
    Ok(())
}

pub fn training_curve_csv(report: &TrainReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["phase", "index", "loss", "outcome"])?;
    for (i, l) in report.il_epoch_losses.iter().enumerate() {
        w.write_record(["imitation", &i.to_string(), &l.to_string(), ""])?;
    }
    for (i, (l, o)) in report.rl_losses.iter().zip(&report.rl_outcomes).enumerate() {
        let o = match o {
            train::EpisodeEnd::Success => "success",
            train::EpisodeEnd::Collision => "collision",
            train::EpisodeEnd::Timeout => "timeout",
        };
        w.write_record(["rl", &i.to_string(), &l.to_string(), o])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// A policy that only reports why it could not be built.
struct Unavailable(PredictError);

impl VehiclePolicy for Unavailable {
    fn plan(&mut self, _obs: &eval::Observation) -> Result<Vec<crowdnav_core::Action>, PredictError> {
        Err(self.0.clone())
    }
}

/// Built-in policies plus planners backed by an external predictor.
pub struct CliPolicies<'a> {
    pub standard: StandardPolicies<'a>,
    pub external: crate::config::ExternalPredictorConfig,
}

impl PolicyFactory for CliPolicies<'_> {
    fn make(&self, scenario: &Scenario) -> Result<Box<dyn VehiclePolicy + '_>, EvalError> {
        let s = &self.standard;
        if s.experiment.policy == PolicyKind::Planner && s.predictor.kind == PredictorKind::External {
            return match ExternalPredictor::from_config(&self.external, s.predictor.num_samples) {
                Ok(p) => s.planner_with(Box::new(p)),
                Err(e) => Ok(Box::new(Unavailable(e))),
            };
        }
        s.make(scenario)
    }
}

pub fn needs_network(cfg: &RunConfig) -> bool {
    cfg.experiment.policy == PolicyKind::Planner && cfg.experiment.value == ValueSource::Network
}

/// Runs the configured experiment and writes metrics, per-episode table,
/// logs and the configuration into `out`.
pub fn cmd_eval(cfg: &RunConfig, params: Option<&Path>, out: &Path) -> Result<eval::MonteCarloResult> {
    let net = match (needs_network(cfg), params) {
        (true, None) => bail!("this experiment uses the value network; pass --params"),
        (true, Some(p)) => Some(io::load_params(p)?),
        (false, _) => None,
    };
    let policies = CliPolicies {
        standard: StandardPolicies {
            experiment: cfg.experiment.clone(),
            planner: cfg.planner.clone(),
            predictor: cfg.predictor.clone(),
            network: net.as_ref(),
            analytic: cfg.analytic_value,
        },
        external: cfg.external_predictor.clone(),
    };
    let result = eval::monte_carlo(&cfg.experiment, &cfg.sim, &policies, &cfg.planner)?;
    fs::create_dir_all(out.join("episodes")).with_context(|| format!("cannot create {}", out.display()))?;
    for log in &result.logs {
        io::save_log(&io::log_path(out, log.seed), log)?;
    }
    let rows = [("run", &result.metrics)];
    fs::write(out.join("metrics.csv"), io::metrics_csv(&rows)?)?;
    let text = io::metrics_text(&rows);
    fs::write(out.join("metrics.txt"), &text)?;
    fs::write(out.join("episodes.csv"), io::episodes_csv(&result.episodes)?)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    print!("{text}");
    Ok(result)
}

pub fn cmd_compare(run_a: &Path, run_b: &Path, out: &Path) -> Result<()> {
    let a = eval::aggregate(io::load_run(run_a)?);
    let b = eval::aggregate(io::load_run(run_b)?);
    let report = eval::ablation_compare(&a.episodes, &b.episodes)?;
    fs::write(out, io::comparison_csv(&report)?).with_context(|| format!("cannot write {}", out.display()))?;
    print!("{}", io::comparison_text(&report));
    Ok(())
}

pub fn cmd_plot(log: &Path, out: &Path, every: usize) -> Result<()> {
    let log = io::load_log(log)?;
    fs::write(out, plot::render_svg(&log, every)).with_context(|| format!("cannot write {}", out.display()))
}
