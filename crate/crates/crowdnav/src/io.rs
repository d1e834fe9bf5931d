//! Files: value-network parameters, episode logs, metric tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crowdnav_core::eval::{ComparisonReport, EpisodeLog, EpisodeSummary, Metrics, Outcome, LOG_SCHEMA_VERSION};
use crowdnav_core::value::{TrainReport, ValueNet};
use serde::{Deserialize, Serialize};

pub const PARAMS_FORMAT: &str = "crowdnav-value-net";
pub const PARAMS_VERSION: u32 = 1;

/// Serialized network with the training record that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub format: String,
    pub version: u32,
    pub network: ValueNet,
    #[serde(default)]
    pub training: Option<TrainingRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    pub seed: u64,
    pub il_samples: usize,
    pub il_episodes: usize,
    pub rl_episodes: usize,
    pub final_il_loss: Option<f64>,
    pub final_rl_loss: Option<f64>,
}

impl TrainingRecord {
    pub fn new(seed: u64, report: &TrainReport) -> Self {
        TrainingRecord {
            seed,
            il_samples: report.il_samples,
            il_episodes: 0,
            rl_episodes: report.rl_outcomes.len(),
            final_il_loss: report.il_epoch_losses.last().copied(),
            final_rl_loss: report.rl_losses.last().copied(),
        }
    }
}

pub fn save_params(path: &Path, net: &ValueNet, training: Option<TrainingRecord>) -> Result<()> {
    let file = ParamsFile { format: PARAMS_FORMAT.into(), version: PARAMS_VERSION, network: net.clone(), training };
    let text = serde_json::to_string(&file)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn load_params(path: &Path) -> Result<ValueNet> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read params file {}", path.display()))?;
    let file: ParamsFile =
        serde_json::from_str(&text).with_context(|| format!("{} is not a params file", path.display()))?;
    if file.format != PARAMS_FORMAT || file.version != PARAMS_VERSION {
        bail!("{}: unsupported params format {} v{}", path.display(), file.format, file.version);
    }
    file.network.validate().with_context(|| format!("{}: invalid network", path.display()))?;
    Ok(file.network)
}

pub fn save_log(path: &Path, log: &EpisodeLog) -> Result<()> {
    let text = serde_json::to_string_pretty(log)?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn load_log(path: &Path) -> Result<EpisodeLog> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let log: EpisodeLog =
        serde_json::from_str(&text).with_context(|| format!("{} is not an episode log", path.display()))?;
    if log.schema_version != LOG_SCHEMA_VERSION {
        bail!("{}: unsupported log schema {}", path.display(), log.schema_version);
    }
    Ok(log)
}

/// Path of the log for `seed` inside a run directory.
pub fn log_path(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join("episodes").join(format!("{seed:06}.json"))
}

/// Every episode log of a run directory, sorted by seed.
pub fn load_run(run_dir: &Path) -> Result<Vec<EpisodeLog>> {
    let dir = run_dir.join("episodes");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut logs = paths.iter().map(|p| load_log(p)).collect::<Result<Vec<_>>>()?;
    logs.sort_by_key(|l| l.seed);
    Ok(logs)
}

fn outcome_name(o: &Outcome) -> &'static str {
    match o {
        Outcome::Success => "success",
        Outcome::Collision => "collision",
        Outcome::Timeout => "timeout",
        Outcome::Aborted { .. } => "aborted",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    schema_version: u32,
    label: &'a str,
    episodes: usize,
    success_rate: f64,
    collision_rate: f64,
    timeout_rate: f64,
    aborted: usize,
    mean_time: String,
    max_acceleration: f64,
    mean_max_acceleration: f64,
}

/// One header line plus one row per labelled metrics set.
pub fn metrics_csv(rows: &[(&str, &Metrics)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (label, m) in rows {
        w.serialize(MetricsRow {
            schema_version: LOG_SCHEMA_VERSION,
            label,
            episodes: m.episodes,
            success_rate: m.success_rate,
            collision_rate: m.collision_rate,
            timeout_rate: m.timeout_rate,
            aborted: m.aborted,
            mean_time: opt(m.mean_time),
            max_acceleration: m.max_acceleration,
            mean_max_acceleration: m.mean_max_acceleration,
        })?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Human-readable aligned table.
pub fn metrics_text(rows: &[(&str, &Metrics)]) -> String {
    let header = ["run", "cases", "success", "collision", "timeout", "time[s]", "max acc", "mean max acc"];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (label, m) in rows {
        table.push(vec![
            label.to_string(),
            m.episodes.to_string(),
            format!("{:.3}", m.success_rate),
            format!("{:.3}", m.collision_rate),
            format!("{:.3}", m.timeout_rate),
            m.mean_time.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into()),
            format!("{:.3}", m.max_acceleration),
            format!("{:.3}", m.mean_max_acceleration),
        ]);
    }
    let widths: Vec<usize> = (0..header.len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap()).collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[derive(Serialize)]
struct EpisodeRow {
    seed: u64,
    scenario_hash: String,
    outcome: &'static str,
    time: f64,
    steps: usize,
    max_acceleration: f64,
    path_length: f64,
    min_separation: String,
}

pub fn episodes_csv(summaries: &[EpisodeSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in summaries {
        w.serialize(EpisodeRow {
            seed: s.seed,
            scenario_hash: format!("{:016x}", s.scenario_hash),
            outcome: outcome_name(&s.outcome),
            time: s.time,
            steps: s.steps,
            max_acceleration: s.max_acceleration,
            path_length: s.path_length,
            min_separation: opt(s.min_separation),
        })?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Serialize)]
struct ComparisonRow {
    seed: u64,
    scenario_hash: String,
    a_success: bool,
    b_success: bool,
    delta_success: i8,
    a_max_acceleration: f64,
    b_max_acceleration: f64,
    delta_max_acceleration: f64,
    a_time: f64,
    b_time: f64,
    delta_time: String,
}

/// One row per paired seed.
pub fn comparison_csv(report: &ComparisonReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(ComparisonRow {
            seed: r.seed,
            scenario_hash: format!("{:016x}", r.scenario_hash),
            a_success: r.a_success,
            b_success: r.b_success,
            delta_success: r.delta_success,
            a_max_acceleration: r.a_max_acceleration,
            b_max_acceleration: r.b_max_acceleration,
            delta_max_acceleration: r.delta_max_acceleration,
            a_time: r.a_time,
            b_time: r.b_time,
            delta_time: opt(r.delta_time),
        })?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Short summary of a comparison.
pub fn comparison_text(report: &ComparisonReport) -> String {
    let s = &report.max_acceleration_signs;
    let mut out = metrics_text(&[("a", &report.a), ("b", &report.b)]);
    let _ = writeln!(out, "paired seeds: {}", report.rows.len());
    let _ = writeln!(
        out,
        "max acceleration b-a: {} lower, {} equal, {} higher; mean relative change {:+.3}; aggregate {:+.3}",
        s.negative, s.zero, s.positive, report.mean_relative_max_acceleration, report.aggregate_relative_max_acceleration
    );
    if let Some(t) = report.mean_relative_time {
        let _ = writeln!(out, "time b-a over common successes: mean relative change {t:+.3}");
    }
    let _ = writeln!(out, "success rate b-a: {:+.3}", report.success_rate_delta);
    out
}
