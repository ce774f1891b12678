//! Subcommand bodies. Each loads the config, applies flag overrides,
//! re-validates, and maps failures onto the exit-code contract.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dreamcycle::config::{Config, ConfigError};
use dreamcycle::dream::{run_dream, DreamError, DreamOptions};
use dreamcycle::experience::ExperienceLog;
use dreamcycle::night::NightRig;
use dreamcycle::rules::{apply_patch, RuleSet};
use dreamcycle::seed::{fnv1a64, mix};
use dreamcycle::world::{EpisodeMetrics, EpisodeOptions, GridWorld};
use dreamcycle_server::{Client, ClientError, Server, ServerCore};
use thiserror::Error;

use crate::Common;

#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2: bad invocation or bad config.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Exit 3: unreadable or malformed data.
    #[error("{0}")]
    Data(String),
    /// Exit 4: connection or protocol failure.
    #[error("{0}")]
    Network(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Network(_) => 4,
        }
    }
}

fn load_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(episodes) = common.episodes {
        cfg.episodes = episodes;
    }
    if let Some(cycles) = common.cycles {
        cfg.cycles = cycles;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_data(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_data(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create_out_dir(cfg: &Config) -> Result<PathBuf, CliError> {
    let out = cfg.out_path();
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

pub fn run_day(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let world = GridWorld::from_json_bytes(&read_data(&cfg.world_path())?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let rules = RuleSet::from_json_bytes(&read_data(&cfg.rules_path())?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let out = create_out_dir(&cfg)?;

    let mut csv = String::from(EpisodeMetrics::CSV_HEADER);
    csv.push('\n');
    for ep in 1..=cfg.episodes {
        let episode_id = format!("e{:03}", ep);
        let opts = EpisodeOptions {
            robot_id: cfg.robot_id.clone(),
            episode_id: episode_id.clone(),
            explore_rate: cfg.explore_rate,
        };
        let seed = mix(cfg.seed, "day", &[1, ep as u64]);
        let (log, metrics) =
            dreamcycle::world::run_episode_with(&world, &rules, world.max_ticks, seed, &opts)
                .map_err(|e| CliError::Data(e.to_string()))?;
        write_data(&out.join(format!("{episode_id}.explog")), &log.serialize())?;
        csv.push_str(&metrics.csv_row());
        csv.push('\n');
        println!(
            "{episode_id}: ticks={} pain={} charge={}",
            metrics.ticks, metrics.pain_count, metrics.charge_ticks
        );
    }
    write_data(&out.join("day_metrics.csv"), csv.as_bytes())?;
    println!("wrote {} episodes to {}", cfg.episodes, out.display());
    Ok(())
}

/// Night summary written next to the patch; everything in it is derived
/// from (config, seeds), so reruns are byte-identical.
#[derive(serde::Serialize)]
struct NightSummary {
    run_id: String,
    logs: usize,
    replay_ticks: u64,
    mean_valence: f64,
    mean_arousal: f64,
    adds: usize,
    modifies: usize,
    removes: usize,
}

pub fn run_night(common: &Common, logs: &[PathBuf]) -> Result<(), CliError> {
    if logs.is_empty() {
        return Err(CliError::Usage(
            "night requires at least one experience log file".to_string(),
        ));
    }
    let cfg = load_config(common)?;
    let rules = RuleSet::from_json_bytes(&read_data(&cfg.rules_path())?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut parsed = Vec::with_capacity(logs.len());
    for path in logs {
        let bytes = read_data(path)?;
        let log = ExperienceLog::deserialize(&bytes)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        parsed.push(log);
    }
    let mut rig = NightRig::build(&cfg.night).map_err(|e| CliError::Data(e.to_string()))?;
    let seed = mix(cfg.seed, "night", &[1]);
    let report = rig
        .run_night(&parsed, seed, &rules, "local")
        .map_err(|e| CliError::Data(e.to_string()))?;

    let out = create_out_dir(&cfg)?;
    write_data(&out.join("night.patch"), &report.patch.to_json_bytes())?;
    let summary = NightSummary {
        run_id: "local".to_string(),
        logs: parsed.len(),
        replay_ticks: report.replay_ticks,
        mean_valence: report.mean_appraisal.valence,
        mean_arousal: report.mean_appraisal.arousal,
        adds: report.patch.adds.len(),
        modifies: report.patch.modifies.len(),
        removes: report.patch.removes.len(),
    };
    let mut summary_bytes =
        serde_json::to_vec_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    summary_bytes.push(b'\n');
    write_data(&out.join("night_summary.json"), &summary_bytes)?;
    if common.dump_night {
        let mut dump =
            serde_json::to_vec_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
        dump.push(b'\n');
        write_data(&out.join("night_report.json"), &dump)?;
    }
    println!(
        "night over {} logs: +{} ~{} -{} (valence {:+.3}, arousal {:.3})",
        summary.logs, summary.adds, summary.modifies, summary.removes,
        summary.mean_valence, summary.mean_arousal
    );
    println!("wrote {}", out.join("night.patch").display());
    Ok(())
}

pub fn run_dream_cmd(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let opts = DreamOptions {
        dump_night: common.dump_night,
    };
    let outcome = run_dream(&cfg, &opts).map_err(|e| match e {
        DreamError::Config(c) => CliError::Config(c),
        other => CliError::Data(other.to_string()),
    })?;
    if outcome.resumed {
        println!("resumed from checkpoint");
    }
    for row in &outcome.rows {
        println!(
            "cycle {}: pain={} survived={} rules={} patch(+{} ~{} -{})",
            row.cycle,
            row.pain_count,
            row.ticks_survived,
            row.rule_count,
            row.patch_adds,
            row.patch_modifies,
            row.patch_removes
        );
    }
    println!("wrote {}", outcome.out_dir.display());
    Ok(())
}

pub fn run_serve(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let core = ServerCore::new(&cfg).map_err(|e| CliError::Data(e.to_string()))?;
    let server = Server::start(std::sync::Arc::new(core), &cfg.server.addr)
        .map_err(|e| CliError::Network(format!("cannot bind {}: {e}", cfg.server.addr)))?;
    println!("listening on {}", server.addr());
    println!("spool: {}", cfg.spool_path().display());
    let _ = std::io::stdout().flush();
    server.join();
    Ok(())
}

fn dial(cfg: &Config) -> Result<Client, CliError> {
    Client::connect(
        &cfg.server.addr,
        cfg.server.retry_attempts,
        cfg.server.retry_backoff_ms,
    )
    .map_err(|e| CliError::Network(e.to_string()))
}

fn client_err(e: ClientError) -> CliError {
    match e {
        ClientError::Server { code, message } if code == "malformed_log" => {
            CliError::Data(format!("server rejected log: {message}"))
        }
        other => CliError::Network(other.to_string()),
    }
}

pub fn run_sync(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let rules_path = cfg.rules_path();
    let rules_bytes = read_data(&rules_path)?;
    let rules = RuleSet::from_json_bytes(&rules_bytes)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let rules_hash = format!("{:016x}", fnv1a64(&rules_bytes));

    let mut log_files: Vec<PathBuf> = match fs::read_dir(cfg.out_path()) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "explog").unwrap_or(false))
            .collect(),
        Err(_) => Vec::new(),
    };
    log_files.sort();

    let mut client = dial(&cfg)?;
    client
        .hello(&cfg.robot_id, &rules_hash)
        .map_err(|e| CliError::Network(e.to_string()))?;

    let mut uploaded = 0usize;
    for path in &log_files {
        let text = String::from_utf8(read_data(path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let episode_id = client.upload_log(&text).map_err(client_err)?;
        println!("uploaded {} ({episode_id})", path.display());
        uploaded += 1;
    }

    if uploaded > 0 {
        match client.run_night() {
            Ok((run_id, stats)) => {
                println!(
                    "night {run_id}: {} processed, {} failed, {} robots",
                    stats.logs_processed, stats.logs_failed, stats.robots
                );
                for line in &stats.failures {
                    eprintln!("night failure: {line}");
                }
            }
            // Another robot's serialized night drained the spool first; our
            // logs were part of it, so a patch is already waiting. The
            // rejection closed the connection, so dial again.
            Err(ClientError::Server { code, .. }) if code == "empty" => {
                client = dial(&cfg)?;
                client
                    .hello(&cfg.robot_id, &rules_hash)
                    .map_err(|e| CliError::Network(e.to_string()))?;
            }
            Err(e) => return Err(client_err(e)),
        }
    }

    let patch = client.fetch_patch().map_err(|e| CliError::Network(e.to_string()))?;
    let updated = apply_patch(&rules, &patch).map_err(|e| CliError::Data(e.to_string()))?;
    write_data(&rules_path, &updated.to_json_bytes())?;
    println!(
        "applied patch {}: +{} ~{} -{} ({} rules now)",
        patch.provenance.run_id,
        patch.adds.len(),
        patch.modifies.len(),
        patch.removes.len(),
        updated.rules().len()
    );
    Ok(())
}
