//! The dream cycle: alternate day phases (rule-driven episodes in the world)
//! with night phases (replay into the sleeping brain, patch extraction), and
//! apply each patch before the next day.
//!
//! The brain exists between phases only as snapshot bytes. Every night loads
//! the network from bytes and serializes it back afterwards, also when
//! nothing was interrupted, so a resumed run and a straight-through run see
//! byte-identical brains by construction, and the checkpoint file is nothing
//! more than the state the loop already carries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::experience::{ExperienceError, ExperienceLog};
use crate::night::{NightError, NightReport, NightRig};
use crate::rules::{apply_patch, RuleError, RuleSet};
use crate::seed::mix;
use crate::snn::Network;
use crate::world::{run_episode_with, EpisodeMetrics, EpisodeOptions, GridWorld, WorldError};

const DREAM_SCHEMA: u32 = 1;
const STATE_FILE: &str = "dream_state.json";
const CYCLES_FILE: &str = "cycles.csv";
const FINAL_RULES_FILE: &str = "final.rules";

#[derive(Debug, Error)]
pub enum DreamError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Night(#[from] NightError),
    #[error(transparent)]
    Experience(#[from] ExperienceError),
    #[error("cannot {action} {path}: {message}")]
    Io {
        action: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error(
        "checkpoint {0} belongs to a different configuration; \
         delete it or restore the original config"
    )]
    StaleCheckpoint(PathBuf),
    #[error("malformed checkpoint {path}: {message}")]
    BadCheckpoint { path: PathBuf, message: String },
}

fn io_err<'a>(
    action: &'static str,
    path: &'a Path,
) -> impl FnOnce(std::io::Error) -> DreamError + 'a {
    move |e| DreamError::Io {
        action,
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One row of the per-cycle report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    /// 1-based cycle number.
    pub cycle: u32,
    pub episodes: u32,
    /// Total pain events across the cycle's episodes.
    pub pain_count: u64,
    /// Total ticks survived across the cycle's episodes.
    pub ticks_survived: u64,
    pub charge_ticks: u64,
    /// Rule set size after the night's patch was applied.
    pub rule_count: u32,
    pub patch_adds: u32,
    pub patch_modifies: u32,
    pub patch_removes: u32,
}

impl CycleMetrics {
    pub const CSV_HEADER: &'static str = "cycle,episodes,pain_count,ticks_survived,\
                                          charge_ticks,rule_count,patch_adds,patch_modifies,patch_removes";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.episodes,
            self.pain_count,
            self.ticks_survived,
            self.charge_ticks,
            self.rule_count,
            self.patch_adds,
            self.patch_modifies,
            self.patch_removes
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
enum DreamPhase {
    /// The next day phase to run; `next_cycle` is 0-based.
    StartOfCycle { next_cycle: u32 },
    /// Day done, night pending; `row` carries the day totals.
    AfterDay {
        cycle: u32,
        day_logs: Vec<String>,
        row: CycleMetrics,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DreamState {
    schema: u32,
    config_digest: u64,
    phase: DreamPhase,
    rules: RuleSet,
    /// Network snapshot; the only form the brain takes between phases.
    brain: String,
    rows: Vec<CycleMetrics>,
}

#[derive(Debug, Clone, Default)]
pub struct DreamOptions {
    /// Also write each night's full report (trace, chains, extracted rules).
    pub dump_night: bool,
}

#[derive(Debug)]
pub struct DreamOutcome {
    pub rows: Vec<CycleMetrics>,
    pub rules: RuleSet,
    pub out_dir: PathBuf,
    /// True when a checkpoint was picked up instead of starting fresh.
    pub resumed: bool,
}

pub fn episode_file_name(cycle: u32, episode: u32) -> String {
    format!("c{:02}-e{:03}.explog", cycle + 1, episode + 1)
}

pub fn patch_file_name(cycle: u32) -> String {
    format!("c{:02}.patch", cycle + 1)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DreamError> {
    std::fs::write(path, bytes).map_err(io_err("write", path))
}

fn read_file(path: &Path) -> Result<Vec<u8>, DreamError> {
    std::fs::read(path).map_err(io_err("read", path))
}

/// Output of one day phase: the written log files and their metrics.
#[derive(Debug)]
pub struct DayOutput {
    pub log_files: Vec<String>,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Runs the configured number of episodes for one cycle and writes each log
/// next to the other artifacts. Episode seeds derive from (config seed,
/// cycle, episode), never from wall clock.
pub fn day_phase(
    cfg: &Config,
    world: &GridWorld,
    rules: &RuleSet,
    cycle: u32,
    out: &Path,
) -> Result<DayOutput, DreamError> {
    let mut log_files = Vec::new();
    let mut metrics = Vec::new();
    for ep in 0..cfg.episodes {
        let episode_id = format!("c{:02}-e{:03}", cycle + 1, ep + 1);
        let opts = EpisodeOptions {
            robot_id: cfg.robot_id.clone(),
            episode_id,
            explore_rate: cfg.explore_rate,
        };
        let seed = mix(cfg.seed, "day", &[u64::from(cycle), u64::from(ep)]);
        let (log, m) = run_episode_with(world, rules, world.max_ticks, seed, &opts)?;
        let name = episode_file_name(cycle, ep);
        write_file(&out.join(&name), &log.serialize())?;
        log_files.push(name);
        metrics.push(m);
    }
    Ok(DayOutput { log_files, metrics })
}

/// Runs one night over the given log files: load the brain from bytes,
/// replay, write the patch (and optional report dump), return the report and
/// the new brain bytes.
pub fn night_phase(
    cfg: &Config,
    brain: &str,
    rules: &RuleSet,
    day_logs: &[String],
    cycle: u32,
    out: &Path,
    dump_night: bool,
) -> Result<(NightReport, String), DreamError> {
    let mut rig = NightRig::build(&cfg.night)?;
    rig.net = Network::from_snapshot_bytes(brain.as_bytes()).map_err(NightError::from)?;

    let mut logs = Vec::with_capacity(day_logs.len());
    for name in day_logs {
        let path = out.join(name);
        logs.push(ExperienceLog::deserialize(&read_file(&path)?)?);
    }

    let run_id = format!("run-{:04}", cycle + 1);
    let seed = mix(cfg.seed, "night", &[u64::from(cycle)]);
    let report = rig.run_night(&logs, seed, rules, &run_id)?;

    write_file(&out.join(patch_file_name(cycle)), &report.patch.to_json_bytes())?;
    if dump_night {
        let mut bytes =
            serde_json::to_vec_pretty(&report).expect("night report serializes");
        bytes.push(b'\n');
        write_file(&out.join(format!("night-c{:02}.json", cycle + 1)), &bytes)?;
    }

    let brain = String::from_utf8(rig.net.to_snapshot_bytes())
        .expect("snapshots are UTF-8 JSON");
    Ok((report, brain))
}

fn fresh_state(cfg: &Config) -> Result<DreamState, DreamError> {
    let rules = RuleSet::from_json_bytes(&read_file(&cfg.rules_path())?)?;
    let rig = NightRig::build(&cfg.night)?;
    let brain = String::from_utf8(rig.net.to_snapshot_bytes())
        .expect("snapshots are UTF-8 JSON");
    Ok(DreamState {
        schema: DREAM_SCHEMA,
        config_digest: cfg.digest(),
        phase: DreamPhase::StartOfCycle { next_cycle: 0 },
        rules,
        brain,
        rows: Vec::new(),
    })
}

fn load_state(path: &Path, cfg: &Config) -> Result<DreamState, DreamError> {
    let bytes = read_file(path)?;
    let state: DreamState =
        serde_json::from_slice(&bytes).map_err(|e| DreamError::BadCheckpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if state.schema != DREAM_SCHEMA {
        return Err(DreamError::BadCheckpoint {
            path: path.to_path_buf(),
            message: format!("unsupported schema {}", state.schema),
        });
    }
    if state.config_digest != cfg.digest() {
        return Err(DreamError::StaleCheckpoint(path.to_path_buf()));
    }
    Ok(state)
}

fn checkpoint(path: &Path, state: &DreamState) -> Result<(), DreamError> {
    let tmp = path.with_extension("json.tmp");
    let mut bytes = serde_json::to_vec_pretty(state).expect("state serializes");
    bytes.push(b'\n');
    write_file(&tmp, &bytes)?;
    std::fs::rename(&tmp, path).map_err(io_err("rename", path))
}

fn write_cycles_csv(out: &Path, rows: &[CycleMetrics]) -> Result<(), DreamError> {
    let mut text = String::from(CycleMetrics::CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    write_file(&out.join(CYCLES_FILE), text.as_bytes())
}

/// Runs (or resumes) the whole dream loop. A checkpoint in the output
/// directory continues from its last completed phase; a finished run removes
/// it, so re-running the same config reproduces everything from scratch.
pub fn run_dream(cfg: &Config, opts: &DreamOptions) -> Result<DreamOutcome, DreamError> {
    let out = cfg.out_path();
    std::fs::create_dir_all(&out).map_err(io_err("create", &out))?;
    let world = GridWorld::from_json_bytes(&read_file(&cfg.world_path())?)?;
    let state_path = out.join(STATE_FILE);

    let (mut state, resumed) = if state_path.is_file() {
        (load_state(&state_path, cfg)?, true)
    } else {
        (fresh_state(cfg)?, false)
    };

    loop {
        let (cycle, day_logs, mut row) = match state.phase.clone() {
            DreamPhase::StartOfCycle { next_cycle } => {
                if next_cycle >= cfg.cycles {
                    break;
                }
                let day = day_phase(cfg, &world, &state.rules, next_cycle, &out)?;
                let row = CycleMetrics {
                    cycle: next_cycle + 1,
                    episodes: cfg.episodes,
                    pain_count: day.metrics.iter().map(|m| m.pain_count).sum(),
                    ticks_survived: day.metrics.iter().map(|m| m.ticks).sum(),
                    charge_ticks: day.metrics.iter().map(|m| m.charge_ticks).sum(),
                    rule_count: 0,
                    patch_adds: 0,
                    patch_modifies: 0,
                    patch_removes: 0,
                };
                state.phase = DreamPhase::AfterDay {
                    cycle: next_cycle,
                    day_logs: day.log_files.clone(),
                    row: row.clone(),
                };
                checkpoint(&state_path, &state)?;
                (next_cycle, day.log_files, row)
            }
            DreamPhase::AfterDay { cycle, day_logs, row } => (cycle, day_logs, row),
        };

        let (report, brain) =
            night_phase(cfg, &state.brain, &state.rules, &day_logs, cycle, &out, opts.dump_night)?;
        state.rules = apply_patch(&state.rules, &report.patch)?;
        state.brain = brain;
        row.rule_count = state.rules.rules().len() as u32;
        row.patch_adds = report.patch.adds.len() as u32;
        row.patch_modifies = report.patch.modifies.len() as u32;
        row.patch_removes = report.patch.removes.len() as u32;
        state.rows.push(row);
        state.phase = DreamPhase::StartOfCycle { next_cycle: cycle + 1 };
        write_cycles_csv(&out, &state.rows)?;
        checkpoint(&state_path, &state)?;
    }

    write_file(&out.join(FINAL_RULES_FILE), &state.rules.to_json_bytes())?;
    std::fs::remove_file(&state_path).map_err(io_err("remove", &state_path))?;
    Ok(DreamOutcome {
        rows: state.rows,
        rules: state.rules,
        out_dir: out,
        resumed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionId;

    /// Small world and short horizon so a whole dream run stays quick.
    fn test_world() -> GridWorld {
        let mut w = GridWorld::new(8, 8, (1, 1));
        w.hazards = [(4, 4), (5, 2), (2, 5)].into_iter().collect();
        w.obstacles = [(6, 6)].into_iter().collect();
        w.max_ticks = 120;
        w
    }

    fn test_config(dir: &Path, out_dir: &str) -> Config {
        std::fs::create_dir_all(dir.join("worlds")).unwrap();
        std::fs::create_dir_all(dir.join("rules")).unwrap();
        std::fs::write(dir.join("worlds/basic.json"), test_world().to_json_bytes()).unwrap();
        std::fs::write(
            dir.join("rules/boot.rules"),
            RuleSet::new(ActionId::Forward).to_json_bytes(),
        )
        .unwrap();
        let mut cfg = Config::default();
        cfg.base_dir = dir.to_path_buf();
        cfg.out_dir = out_dir.to_string();
        cfg.cycles = 2;
        cfg.episodes = 2;
        cfg
    }

    fn read_dir_files(out: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    }

    #[test]
    fn one_cycle_produces_the_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path(), "out");
        cfg.cycles = 1;
        cfg.episodes = 1;
        let outcome = run_dream(&cfg, &DreamOptions::default()).unwrap();
        assert!(!outcome.resumed);
        assert_eq!(outcome.rows.len(), 1);
        let out = outcome.out_dir;
        for f in ["c01-e001.explog", "c01.patch", "cycles.csv", "final.rules"] {
            assert!(out.join(f).is_file(), "missing artifact {f}");
        }
        assert!(!out.join(STATE_FILE).exists(), "finished runs leave no checkpoint");

        let csv = std::fs::read_to_string(out.join(CYCLES_FILE)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CycleMetrics::CSV_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("1,1,"), "cycle and episode counts lead the row: {row}");
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_a = test_config(dir.path(), "out_a");
        let mut cfg_b = cfg_a.clone();
        cfg_b.out_dir = "out_b".to_string();
        run_dream(&cfg_a, &DreamOptions::default()).unwrap();
        run_dream(&cfg_b, &DreamOptions::default()).unwrap();
        let a = read_dir_files(&cfg_a.out_path());
        let b = read_dir_files(&cfg_b.out_path());
        assert!(!a.is_empty());
        assert_eq!(a, b, "same config and seed must reproduce every artifact");
    }

    #[test]
    fn resuming_after_a_day_matches_a_straight_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_full = test_config(dir.path(), "out_full");
        run_dream(&cfg_full, &DreamOptions::default()).unwrap();

        // Interrupted twin: stop right after cycle 0's day phase, leaving the
        // checkpoint behind, then resume.
        let mut cfg_cut = cfg_full.clone();
        cfg_cut.out_dir = "out_cut".to_string();
        let out = cfg_cut.out_path();
        std::fs::create_dir_all(&out).unwrap();
        let world = GridWorld::from_json_bytes(&read_file(&cfg_cut.world_path()).unwrap()).unwrap();
        let mut state = fresh_state(&cfg_cut).unwrap();
        let day = day_phase(&cfg_cut, &world, &state.rules, 0, &out).unwrap();
        state.phase = DreamPhase::AfterDay {
            cycle: 0,
            day_logs: day.log_files.clone(),
            row: CycleMetrics {
                cycle: 1,
                episodes: cfg_cut.episodes,
                pain_count: day.metrics.iter().map(|m| m.pain_count).sum(),
                ticks_survived: day.metrics.iter().map(|m| m.ticks).sum(),
                charge_ticks: day.metrics.iter().map(|m| m.charge_ticks).sum(),
                rule_count: 0,
                patch_adds: 0,
                patch_modifies: 0,
                patch_removes: 0,
            },
        };
        checkpoint(&out.join(STATE_FILE), &state).unwrap();

        let outcome = run_dream(&cfg_cut, &DreamOptions::default()).unwrap();
        assert!(outcome.resumed);
        assert_eq!(
            read_dir_files(&cfg_full.out_path()),
            read_dir_files(&out),
            "resumed artifacts must equal the uninterrupted run's"
        );
    }

    #[test]
    fn checkpoints_from_other_configs_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = test_config(dir.path(), "out");
        let out = cfg.out_path();
        std::fs::create_dir_all(&out).unwrap();
        let mut state = fresh_state(&cfg).unwrap();
        state.config_digest ^= 1;
        checkpoint(&out.join(STATE_FILE), &state).unwrap();
        assert!(matches!(
            run_dream(&cfg, &DreamOptions::default()),
            Err(DreamError::StaleCheckpoint(_))
        ));
    }

    #[test]
    fn dump_night_writes_one_report_per_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path(), "out");
        cfg.cycles = 1;
        run_dream(&cfg, &DreamOptions { dump_night: true }).unwrap();
        let dump = cfg.out_path().join("night-c01.json");
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dump).unwrap()).unwrap();
        assert!(v.get("patch").is_some() && v.get("trace").is_some());
    }
}
