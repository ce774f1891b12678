//! One shared sleeping brain behind a mutex. Uploads land in the spool and
//! are acknowledged only once durable; a night run drains the spool snapshot
//! through the shared network in arrival order, then runs one reverse pass
//! per robot against that robot's own rule shadow.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use dreamcycle::config::{Config, ConfigError};
use dreamcycle::experience::ExperienceLog;
use dreamcycle::night::{NightError, NightRig};
use dreamcycle::reverse::ReplayRecord;
use dreamcycle::rules::{apply_patch, Provenance, RuleError, RulePatch, RuleSet};
use dreamcycle::seed::{fnv1a64, mix};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::protocol::NightStats;
use crate::spool::{Spool, SpoolError};

const RUN_COUNTER_FILE: &str = "run_counter";

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("no pending logs to run a night on")]
    EmptyQueue,
    #[error("a night phase is already running")]
    Busy,
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error(transparent)]
    Night(#[from] NightError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Spool(#[from] SpoolError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{action} failed at {path}: {message}")]
    Io {
        action: &'static str,
        path: PathBuf,
        message: String,
    },
}

fn io_err<'a>(
    action: &'static str,
    path: &'a Path,
) -> impl FnOnce(std::io::Error) -> ServerError + 'a {
    move |e| ServerError::Io {
        action,
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

struct BrainInstance {
    rig: NightRig,
    /// Per-robot rule sets the reverse pass diffs against; they evolve by
    /// applying each night's own patch.
    shadows: BTreeMap<String, RuleSet>,
    next_run: u32,
}

pub struct ServerCore {
    seed: u64,
    boot_rules: RuleSet,
    brain: Mutex<BrainInstance>,
    spool: Mutex<Spool>,
    /// Last patch per robot, readable while a night is running.
    patches: Mutex<BTreeMap<String, RulePatch>>,
    /// Set only while the brain lock is held by a night run; the
    /// compare-and-swap below is the serialization assertion.
    in_night: AtomicBool,
    night_violations: AtomicU64,
    counter_path: PathBuf,
}

impl ServerCore {
    pub fn new(cfg: &Config) -> Result<ServerCore, ServerError> {
        let rig = NightRig::build(&cfg.night)?;
        let rules_path = cfg.rules_path();
        let boot_bytes = fs::read(&rules_path).map_err(io_err("read", &rules_path))?;
        let boot_rules = RuleSet::from_json_bytes(&boot_bytes)?;
        let spool_dir = cfg.spool_path();
        let spool = Spool::open(&spool_dir)?;
        let counter_path = spool_dir.join(RUN_COUNTER_FILE);
        let next_run = match fs::read_to_string(&counter_path) {
            Ok(text) => text
                .trim()
                .parse::<u32>()
                .map_err(|e| ServerError::Io {
                    action: "parse",
                    path: counter_path.clone(),
                    message: e.to_string(),
                })?
                .max(1),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 1,
            Err(e) => return Err(io_err("read", &counter_path)(e)),
        };
        Ok(ServerCore {
            seed: cfg.seed,
            boot_rules,
            brain: Mutex::new(BrainInstance {
                rig,
                shadows: BTreeMap::new(),
                next_run,
            }),
            spool: Mutex::new(spool),
            patches: Mutex::new(BTreeMap::new()),
            in_night: AtomicBool::new(false),
            night_violations: AtomicU64::new(0),
            counter_path,
        })
    }

    /// Times the serialization assertion has failed; stays 0 unless the
    /// brain lock is ever bypassed.
    pub fn night_violations(&self) -> u64 {
        self.night_violations.load(Ordering::SeqCst)
    }

    /// Validates and durably spools one uploaded log; returns its episode id.
    pub fn upload(&self, session_robot: &str, log_text: &str) -> Result<String, ServerError> {
        let log = ExperienceLog::deserialize(log_text.as_bytes())
            .map_err(|e| ServerError::MalformedLog(e.to_string()))?;
        if log.robot_id != session_robot {
            return Err(ServerError::MalformedLog(format!(
                "log belongs to {} but the session said hello as {}",
                log.robot_id, session_robot
            )));
        }
        let mut spool = self.spool.lock().expect("spool lock");
        spool.append(log_text.as_bytes())?;
        Ok(log.episode_id)
    }

    /// Latest patch for a robot; a robot with no completed night gets an
    /// empty patch.
    pub fn fetch_patch(&self, robot_id: &str) -> RulePatch {
        let patches = self.patches.lock().expect("patches lock");
        patches
            .get(robot_id)
            .cloned()
            .unwrap_or_else(|| RulePatch::empty(Provenance::empty("none")))
    }

    /// Runs one serialized night over the current spool snapshot. Uploads
    /// arriving during the run stay spooled for the next night.
    pub fn run_night(&self) -> Result<(String, NightStats), ServerError> {
        let mut brain = self.brain.lock().expect("brain lock");
        if self
            .in_night
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            self.night_violations.fetch_add(1, Ordering::SeqCst);
            return Err(ServerError::Busy);
        }
        let _guard = NightFlag(&self.in_night);

        let entries = self.spool.lock().expect("spool lock").pending()?;
        if entries.is_empty() {
            return Err(ServerError::EmptyQueue);
        }

        let run_id = format!("run-{:04}", brain.next_run);
        let mut stats = NightStats::default();
        let mut records: BTreeMap<String, ReplayRecord> = BTreeMap::new();
        let mut any_replayed = false;

        for entry in &entries {
            let bytes = match fs::read(&entry.path) {
                Ok(b) => b,
                Err(e) => {
                    stats.logs_failed += 1;
                    stats.failures.push(format!("{}: {}", entry.file_name(), e));
                    continue;
                }
            };
            let log = match ExperienceLog::deserialize(&bytes) {
                Ok(l) => l,
                Err(e) => {
                    stats.logs_failed += 1;
                    stats.failures.push(format!("{}: {}", entry.file_name(), e));
                    continue;
                }
            };
            let record = records
                .entry(log.robot_id.clone())
                .or_insert_with(|| ReplayRecord::from_network(&brain.rig.net));
            // Idle the net between episodes so no robot's trace can chain
            // across a log boundary, its own or another robot's.
            if any_replayed {
                brain.rig.gap(record)?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(replay_seed(self.seed, &bytes));
            match brain.rig.replay_log(&log, &mut rng, record) {
                Ok(()) => {
                    stats.logs_processed += 1;
                    any_replayed = true;
                }
                Err(e) => {
                    stats.logs_failed += 1;
                    stats.failures.push(format!("{}: {}", entry.file_name(), e));
                }
            }
        }

        stats.robots = records.len() as u32;
        for (robot, record) in &records {
            let shadow = brain
                .shadows
                .get(robot)
                .unwrap_or(&self.boot_rules)
                .clone();
            match brain.rig.reverse_pass(record, &shadow, &run_id) {
                Ok(report) => {
                    let evolved = apply_patch(&shadow, &report.patch)?;
                    brain.shadows.insert(robot.clone(), evolved);
                    self.patches
                        .lock()
                        .expect("patches lock")
                        .insert(robot.clone(), report.patch);
                }
                Err(e) => {
                    stats.failures.push(format!("robot {}: {}", robot, e));
                }
            }
        }

        brain.next_run += 1;
        self.persist_counter(brain.next_run)?;
        self.spool.lock().expect("spool lock").clear(&entries)?;
        Ok((run_id, stats))
    }

    fn persist_counter(&self, next_run: u32) -> Result<(), ServerError> {
        let tmp = self.counter_path.with_extension("tmp");
        fs::write(&tmp, format!("{}\n", next_run)).map_err(io_err("write", &tmp))?;
        fs::rename(&tmp, &self.counter_path).map_err(io_err("rename", &self.counter_path))?;
        Ok(())
    }
}

struct NightFlag<'a>(&'a AtomicBool);

impl Drop for NightFlag<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

/// Replay noise is a property of the experience content: the seed hashes the
/// log body (rows only, not the robot header), so identical episodes replay
/// with identical spike draws no matter who uploaded them or when.
fn replay_seed(base: u64, log_bytes: &[u8]) -> u64 {
    let body_start = log_bytes
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| i + 1)
        .unwrap_or(0);
    mix(base, "replay", &[fnv1a64(&log_bytes[body_start..])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_seed_ignores_the_header_line() {
        let a = b"{\"robot\":\"a\"}\n{\"t\":0}\n";
        let b = b"{\"robot\":\"bbb\"}\n{\"t\":0}\n";
        let c = b"{\"robot\":\"a\"}\n{\"t\":1}\n";
        assert_eq!(replay_seed(7, a), replay_seed(7, b));
        assert_ne!(replay_seed(7, a), replay_seed(7, c));
    }
}
