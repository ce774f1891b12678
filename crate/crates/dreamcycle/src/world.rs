//! Deterministic grid world.
//!
//! A desk-scale stand-in for a robotic platform: a bounded grid with
//! obstacles, hazard cells that hurt on contact, and one charger cell.
//! The world produces the five sensor channels the whole pipeline runs on
//! and emits pain / charge / episode-end events. Everything is a pure
//! function of `(world, robot, action)` plus a seeded generator, so episodes
//! replay byte-identically.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionId;
use crate::experience::{EventKind, EventRecord, ExperienceLog, SensorFrame};
use crate::rules::{match_rules, RuleError, RuleSet};

/// Sensor channel ids, in schema order.
pub const CHANNELS: [&str; 5] = [
    "prox_front",
    "prox_left",
    "prox_right",
    "hazard_front",
    "charger_gradient",
];

pub type Cell = (u32, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    /// Unit offset for one forward step; y grows southward.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error("malformed world file: {0}")]
    Malformed(String),
    #[error("max_ticks must be at least 1")]
    ZeroHorizon,
    #[error(transparent)]
    Rule(#[from] RuleError),
}

fn default_heading() -> Heading {
    Heading::N
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    schema: u32,
    pub width: u32,
    pub height: u32,
    /// Sorted cell sets; canonical order keeps world files diffable.
    pub obstacles: std::collections::BTreeSet<Cell>,
    pub hazards: std::collections::BTreeSet<Cell>,
    pub charger: Cell,
    /// Battery lost per tick off the charger.
    pub drain: f64,
    /// Battery gained per tick on the charger.
    pub charge_rate: f64,
    /// Default episode horizon for runners that take it from the world file.
    pub max_ticks: u64,
    /// Fixed start cell, or None for a seeded random free cell per episode.
    #[serde(default)]
    pub start: Option<Cell>,
    #[serde(default = "default_heading")]
    pub start_heading: Heading,
    /// Stddev of truncated Gaussian sensor noise; 0 = noiseless.
    #[serde(default)]
    pub sensor_noise: f64,
}

impl GridWorld {
    pub fn validate(&self) -> Result<(), WorldError> {
        let invalid = |msg: String| Err(WorldError::Invalid(msg));
        if self.width < 2 || self.height < 2 {
            return invalid(format!("grid {}x{} is too small", self.width, self.height));
        }
        let in_bounds = |&(x, y): &Cell| x < self.width && y < self.height;
        for (name, set) in [("obstacle", &self.obstacles), ("hazard", &self.hazards)] {
            if let Some(c) = set.iter().find(|c| !in_bounds(c)) {
                return invalid(format!("{name} cell {c:?} out of bounds"));
            }
        }
        if !in_bounds(&self.charger) {
            return invalid(format!("charger {:?} out of bounds", self.charger));
        }
        if self.obstacles.contains(&self.charger) || self.hazards.contains(&self.charger) {
            return invalid("charger coincides with an obstacle or hazard".into());
        }
        if !(self.drain > 0.0 && self.drain < self.charge_rate) {
            return invalid(format!(
                "need 0 < drain < charge_rate, got drain={} charge_rate={}",
                self.drain, self.charge_rate
            ));
        }
        if let Some(s) = self.start {
            if !in_bounds(&s) || self.obstacles.contains(&s) || self.hazards.contains(&s) {
                return invalid(format!("start {s:?} is not a free cell"));
            }
        }
        if !(self.sensor_noise >= 0.0 && self.sensor_noise.is_finite()) {
            return invalid(format!("sensor_noise {} must be finite and ≥ 0", self.sensor_noise));
        }
        if self.max_ticks < 1 {
            return invalid("max_ticks must be at least 1".into());
        }
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("world is serializable");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, WorldError> {
        let w: GridWorld =
            serde_json::from_slice(bytes).map_err(|e| WorldError::Malformed(e.to_string()))?;
        if w.schema != 1 {
            return Err(WorldError::Malformed(format!(
                "unsupported schema version {}",
                w.schema
            )));
        }
        w.validate()?;
        Ok(w)
    }

    /// Builder used by tests and fixtures.
    pub fn new(width: u32, height: u32, charger: Cell) -> Self {
        GridWorld {
            schema: 1,
            width,
            height,
            obstacles: Default::default(),
            hazards: Default::default(),
            charger,
            drain: 0.002,
            charge_rate: 0.01,
            max_ticks: 2000,
            start: None,
            start_heading: Heading::N,
            sensor_noise: 0.0,
        }
    }

    fn blocked(&self, x: i64, y: i64) -> bool {
        x < 0
            || y < 0
            || x >= self.width as i64
            || y >= self.height as i64
            || self.obstacles.contains(&(x as u32, y as u32))
    }

    /// Free cells strictly between `pos` and the nearest obstacle or wall
    /// along `dir`; 0 when the adjacent cell already blocks.
    fn free_run(&self, pos: Cell, dir: Heading) -> u32 {
        let (dx, dy) = dir.delta();
        let (mut x, mut y) = (pos.0 as i64 + dx, pos.1 as i64 + dy);
        let mut d = 0;
        while !self.blocked(x, y) {
            d += 1;
            x += dx;
            y += dy;
        }
        d
    }

    fn cell_ahead(&self, robot: &RobotState) -> Option<Cell> {
        let (dx, dy) = robot.heading.delta();
        let (x, y) = (robot.pos.0 as i64 + dx, robot.pos.1 as i64 + dy);
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some((x as u32, y as u32))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub pos: Cell,
    pub heading: Heading,
    pub battery: f64,
    /// Whether the previous tick's battery update was a charge; drives
    /// charge_start/charge_stop edge events.
    pub charging: bool,
}

impl RobotState {
    pub fn new(pos: Cell, heading: Heading) -> Self {
        RobotState {
            pos,
            heading,
            battery: 1.0,
            charging: false,
        }
    }
}

/// Read the five sensor channels. Proximity is `1/(1+d)` with `d` the free
/// run toward the nearest obstacle or wall; hazard_front is binary for the
/// cell directly ahead; charger_gradient is 1 minus the normalized Manhattan
/// distance to the charger.
pub fn sense(world: &GridWorld, robot: &RobotState, tick: u64) -> SensorFrame {
    let prox = |dir: Heading| 1.0 / (1.0 + world.free_run(robot.pos, dir) as f64);
    let hazard_front = match world.cell_ahead(robot) {
        Some(c) if world.hazards.contains(&c) => 1.0,
        _ => 0.0,
    };
    let manhattan = (robot.pos.0 as i64 - world.charger.0 as i64).unsigned_abs()
        + (robot.pos.1 as i64 - world.charger.1 as i64).unsigned_abs();
    let span = (world.width - 1 + world.height - 1) as f64;
    let charger_gradient = 1.0 - manhattan as f64 / span;

    let values = [
        prox(robot.heading),
        prox(robot.heading.left()),
        prox(robot.heading.right()),
        hazard_front,
        charger_gradient,
    ];
    SensorFrame {
        tick,
        channels: CHANNELS
            .iter()
            .zip(values)
            .map(|(id, v)| (id.to_string(), v))
            .collect(),
        battery: robot.battery,
    }
}

/// [`sense`] plus truncated Gaussian noise on every channel (battery is
/// internal state and stays exact). Draw order is schema order, two uniform
/// draws per channel.
pub fn sense_noisy(
    world: &GridWorld,
    robot: &RobotState,
    tick: u64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> SensorFrame {
    let mut frame = sense(world, robot, tick);
    if sigma > 0.0 {
        for (_, v) in frame.channels.iter_mut() {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            *v = (*v + sigma * z).clamp(0.0, 1.0);
        }
    }
    frame
}

/// Advance the world by one control step. Forward into an obstacle or wall
/// is a no-op move; forward into a hazard bounces the robot back to its cell
/// and emits a pain event; the battery drains off charger and charges on it;
/// reaching zero battery ends the episode.
pub fn step_world(
    world: &GridWorld,
    robot: &RobotState,
    action: ActionId,
    tick: u64,
) -> (RobotState, Vec<EventRecord>) {
    let mut next = *robot;
    let mut events = Vec::new();

    match action {
        ActionId::TurnLeft => next.heading = robot.heading.left(),
        ActionId::TurnRight => next.heading = robot.heading.right(),
        ActionId::Stay => {}
        ActionId::Forward => match world.cell_ahead(robot) {
            Some(c) if world.hazards.contains(&c) => {
                events.push(EventRecord {
                    tick,
                    kind: EventKind::Pain,
                    channel: Some("hazard_front".into()),
                });
            }
            Some(c) if !world.obstacles.contains(&c) => next.pos = c,
            _ => {}
        },
    }

    let on_charger = next.pos == world.charger;
    if on_charger {
        next.battery = (next.battery + world.charge_rate).min(1.0);
    } else {
        next.battery = (next.battery - world.drain).max(0.0);
    }
    if on_charger && !robot.charging {
        events.push(EventRecord::new(tick, EventKind::ChargeStart));
    }
    if !on_charger && robot.charging {
        events.push(EventRecord::new(tick, EventKind::ChargeStop));
    }
    next.charging = on_charger;

    if next.battery <= 0.0 {
        events.push(EventRecord::new(tick, EventKind::EpisodeEnd));
    }
    (next, events)
}

/// Per-episode metrics, one CSV row each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    pub seed: u64,
    pub ticks: u64,
    pub pain_count: u64,
    pub charge_ticks: u64,
    pub mean_battery: f64,
}

impl EpisodeMetrics {
    pub const CSV_HEADER: &'static str =
        "episode_id,seed,ticks,pain_count,charge_ticks,mean_battery";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.episode_id, self.seed, self.ticks, self.pain_count, self.charge_ticks, self.mean_battery
        )
    }
}

/// Per-run knobs of an episode beyond the world and the rule set.
#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub robot_id: String,
    pub episode_id: String,
    /// Probability per tick of replacing the controller's action with a
    /// uniformly random one. The log records what was actually taken.
    pub explore_rate: f64,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions {
            robot_id: "robot".into(),
            episode_id: "ep0".into(),
            explore_rate: 0.0,
        }
    }
}

/// Run one episode: sense → match → (maybe explore) → step → record, until
/// battery death or the tick horizon. Fully reproducible from
/// `(world, rules, seed)`.
pub fn run_episode(
    world: &GridWorld,
    rs: &RuleSet,
    max_ticks: u64,
    seed: u64,
) -> Result<(ExperienceLog, EpisodeMetrics), WorldError> {
    run_episode_with(world, rs, max_ticks, seed, &EpisodeOptions::default())
}

pub fn run_episode_with(
    world: &GridWorld,
    rs: &RuleSet,
    max_ticks: u64,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<(ExperienceLog, EpisodeMetrics), WorldError> {
    if max_ticks < 1 {
        return Err(WorldError::ZeroHorizon);
    }
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let start = match world.start {
        Some(s) => s,
        None => loop {
            let c = (rng.gen_range(0..world.width), rng.gen_range(0..world.height));
            if !world.obstacles.contains(&c) && !world.hazards.contains(&c) {
                break c;
            }
        },
    };
    let mut robot = RobotState::new(start, world.start_heading);

    let mut log = ExperienceLog::new(
        opts.robot_id.clone(),
        opts.episode_id.clone(),
        CHANNELS.iter().map(|s| s.to_string()).collect(),
        seed,
    )
    .expect("fixed schema is valid");

    let mut charge_ticks = 0u64;
    let mut battery_sum = 0.0;
    for tick in 0..max_ticks {
        let frame = sense_noisy(world, &robot, tick, world.sensor_noise, &mut rng);
        let (mut action, _) = match_rules(rs, &frame)?;
        // One draw per tick regardless of outcome keeps the stream layout
        // identical across explore_rate settings.
        let explore: f64 = rng.gen();
        if explore < opts.explore_rate {
            action = ActionId::ALL[rng.gen_range(0..ActionId::ALL.len())];
        }
        let (next, events) = step_world(world, &robot, action, tick);
        log.record_tick(&frame, action, &events)
            .expect("runner produces monotone ticks");
        battery_sum += frame.battery;
        if next.charging {
            charge_ticks += 1;
        }
        let done = events.iter().any(|e| e.kind == EventKind::EpisodeEnd);
        robot = next;
        if done {
            break;
        }
    }

    let ticks = log.len() as u64;
    let metrics = EpisodeMetrics {
        episode_id: opts.episode_id.clone(),
        seed,
        ticks,
        pain_count: log.count_events(EventKind::Pain) as u64,
        charge_ticks,
        mean_battery: if ticks == 0 { 0.0 } else { battery_sum / ticks as f64 },
    };
    Ok((log, metrics))
}
