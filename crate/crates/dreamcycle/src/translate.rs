//! Direct translation: replaying a recorded day as stimulation of the night
//! network.
//!
//! A [`StimulationPlan`] is a deterministic, serializable compilation of one
//! [`ExperienceLog`] against a set of [`ChannelSpec`]s: per replay tick it
//! holds the target firing rate of every sensory and outcome population, the
//! forced-spike fraction of the logged action's population, plus the pain
//! excitations and modulator injections derived from the log. The only
//! stochastic step is [`apply_plan_tick`], which samples the actual spikes
//! from a caller-provided RNG; the spiking core itself never draws.
//!
//! Plan ticks are replay-relative: tick `t` of the plan replays the `t`-th
//! recorded frame, regardless of the frame's own tick value. Charge events
//! are matched to frame positions through the recorded ticks.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionId;
use crate::experience::{EventKind, ExperienceLog, SensorFrame};
use crate::rules::Predicate;
use crate::snn::{Network, PopStim, StimMap};

/// How one sensory channel maps onto a population's firing rate, and when it
/// counts as painful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub channel_id: String,
    /// Population receiving this channel's rate-coded drive.
    pub population: String,
    /// Logistic slope. Positive slopes encode "more signal, more spikes".
    pub k: f64,
    /// Logistic midpoint: `encode_value(x0)` is exactly the mid rate.
    pub x0: f64,
    /// Rate floor in spikes/sec.
    pub r_min: f64,
    /// Rate ceiling in spikes/sec.
    pub r_max: f64,
    /// Values strictly above this are painful. 1.0 means "never", since the
    /// comparison is strict and values are capped at 1.
    pub pain_threshold: f64,
}

impl ChannelSpec {
    pub fn new(channel_id: &str, population: &str) -> Self {
        ChannelSpec {
            channel_id: channel_id.to_string(),
            population: population.to_string(),
            k: 10.0,
            x0: 0.5,
            r_min: 2.0,
            r_max: 120.0,
            pain_threshold: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        if !(self.r_min.is_finite() && self.r_max.is_finite() && self.r_min < self.r_max) {
            return Err(TranslateError::InvalidSpec(format!(
                "channel {:?}: rate bounds must satisfy r_min < r_max, got [{}, {}]",
                self.channel_id, self.r_min, self.r_max
            )));
        }
        if self.r_min < 0.0 {
            return Err(TranslateError::InvalidSpec(format!(
                "channel {:?}: r_min must be non-negative",
                self.channel_id
            )));
        }
        if !(self.k.is_finite() && self.x0.is_finite()) {
            return Err(TranslateError::InvalidSpec(format!(
                "channel {:?}: non-finite logistic parameters",
                self.channel_id
            )));
        }
        if !(self.pain_threshold > 0.0 && self.pain_threshold <= 1.0) {
            return Err(TranslateError::InvalidSpec(format!(
                "channel {:?}: pain_threshold must lie in (0, 1], got {}",
                self.channel_id, self.pain_threshold
            )));
        }
        Ok(())
    }
}

/// Drives one outcome population from a channel value with a polarity.
///
/// A `Ge` outcome encodes the raw value (active when the signal is high); an
/// `Lt` outcome encodes `1 - value` (active when the signal is low), which is
/// what lets "hazard cleared" show up as activity rather than silence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDrive {
    pub channel_id: String,
    pub population: String,
    pub predicate: Predicate,
    pub k: f64,
    pub x0: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl OutcomeDrive {
    fn validate(&self) -> Result<(), TranslateError> {
        // Reuse the channel checks; the pain threshold does not apply here.
        ChannelSpec {
            channel_id: self.channel_id.clone(),
            population: self.population.clone(),
            k: self.k,
            x0: self.x0,
            r_min: self.r_min,
            r_max: self.r_max,
            pain_threshold: 1.0,
        }
        .validate()
    }
}

/// Knobs of the translation that are not per-channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateConfig {
    /// Population receiving the massive pain excitation.
    pub pain_population: String,
    /// Fraction of the pain population forced to spike on a painful tick.
    pub pain_fraction: f64,
    /// Pain-modulator amount injected on a painful tick.
    pub pain_inject: f64,
    /// Dopamine injected per tick spent charging.
    pub d_charge: f64,
    /// Fraction of the logged action's population forced to spike each tick.
    pub action_fraction: f64,
    /// Population per action. Actions absent from the map are not replayed.
    pub action_populations: BTreeMap<ActionId, String>,
    /// Outcome populations driven alongside the sensory ones.
    pub outcomes: Vec<OutcomeDrive>,
}

impl TranslateConfig {
    pub fn new(pain_population: &str) -> Self {
        TranslateConfig {
            pain_population: pain_population.to_string(),
            pain_fraction: 0.8,
            pain_inject: 0.3,
            d_charge: 0.05,
            action_fraction: 0.6,
            action_populations: BTreeMap::new(),
            outcomes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        for (label, frac) in [
            ("pain_fraction", self.pain_fraction),
            ("action_fraction", self.action_fraction),
        ] {
            if !(0.0..=1.0).contains(&frac) {
                return Err(TranslateError::InvalidSpec(format!(
                    "{label} must lie in [0, 1], got {frac}"
                )));
            }
        }
        for (label, amt) in [("pain_inject", self.pain_inject), ("d_charge", self.d_charge)] {
            if !(amt.is_finite() && amt >= 0.0) {
                return Err(TranslateError::InvalidSpec(format!(
                    "{label} must be a non-negative finite amount, got {amt}"
                )));
            }
        }
        for o in &self.outcomes {
            o.validate()?;
        }
        Ok(())
    }
}

/// One population's planned drive for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    /// Poisson target rate in spikes/sec.
    Rate(f64),
    /// Deterministically force the first `ceil(fraction * len)` neurons.
    Force(f64),
}

/// A compiled replay: everything the night phase feeds the network, minus the
/// actual random draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulationPlan {
    /// Number of replay ticks (= number of recorded frames).
    pub ticks: u64,
    /// Per replay tick, population name to drive.
    pub drives: Vec<BTreeMap<String, Drive>>,
    /// (tick, population, fraction) forced volleys for painful ticks.
    pub pain_excitations: Vec<(u64, String, f64)>,
    /// (tick, amount) pain-modulator injections, one per painful tick.
    pub pain_injections: Vec<(u64, f64)>,
    /// (tick, amount) dopamine injections, one per charging tick.
    pub dopamine_injections: Vec<(u64, f64)>,
}

impl StimulationPlan {
    /// Pretty JSON for the debugging dump; keys and rows are already in
    /// deterministic order.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("plan serializes");
        out.push(b'\n');
        out
    }
}

/// A channel whose value strictly exceeded its pain threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PainEvent {
    pub tick: u64,
    pub channel_id: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum TranslateError {
    #[error("value {value} on channel {channel:?} is outside [0, 1]")]
    OutOfRange { channel: String, value: f64 },
    #[error("no channel spec for log channel {0:?}")]
    MissingSpec(String),
    #[error("invalid stimulation config: {0}")]
    InvalidSpec(String),
}

fn logistic_rate(k: f64, x0: f64, r_min: f64, r_max: f64, x: f64) -> f64 {
    let sigma = 1.0 / (1.0 + (-k * (x - x0)).exp());
    r_min + (r_max - r_min) * sigma
}

/// Rate-codes one channel value through the spec's logistic.
pub fn encode_value(spec: &ChannelSpec, x: f64) -> Result<f64, TranslateError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(TranslateError::OutOfRange { channel: spec.channel_id.clone(), value: x });
    }
    Ok(logistic_rate(spec.k, spec.x0, spec.r_min, spec.r_max, x))
}

fn first_pain(
    channels: &[String],
    values: &[f64],
    thresholds: &BTreeMap<&str, f64>,
) -> Option<usize> {
    channels.iter().zip(values).position(|(id, &v)| {
        thresholds.get(id.as_str()).is_some_and(|&t| v > t)
    })
}

/// Returns the pain event for the first (schema-order) channel strictly
/// exceeding its threshold, if any. Channels without a spec never hurt.
pub fn detect_pain(frame: &SensorFrame, specs: &[ChannelSpec]) -> Option<PainEvent> {
    let thresholds: BTreeMap<&str, f64> =
        specs.iter().map(|s| (s.channel_id.as_str(), s.pain_threshold)).collect();
    let channels: Vec<String> = frame.channels.iter().map(|(id, _)| id.clone()).collect();
    let values: Vec<f64> = frame.channels.iter().map(|(_, v)| *v).collect();
    first_pain(&channels, &values, &thresholds)
        .map(|i| PainEvent { tick: frame.tick, channel_id: channels[i].clone() })
}

/// Compiles a log into a deterministic stimulation plan.
///
/// Every log channel must have a spec and every outcome's channel must exist
/// in the log; values outside [0, 1] (possible in hand-crafted logs) are
/// rejected rather than encoded.
pub fn plan_stimulation(
    log: &ExperienceLog,
    specs: &[ChannelSpec],
    cfg: &TranslateConfig,
) -> Result<StimulationPlan, TranslateError> {
    cfg.validate()?;
    for s in specs {
        s.validate()?;
    }

    // Every drive target must be a distinct population: a population fed by
    // two sources would mix rate and forced semantics.
    let mut seen = BTreeSet::new();
    let all_pops = specs
        .iter()
        .map(|s| &s.population)
        .chain(cfg.outcomes.iter().map(|o| &o.population))
        .chain(cfg.action_populations.values())
        .chain(std::iter::once(&cfg.pain_population));
    for pop in all_pops {
        if !seen.insert(pop.clone()) {
            return Err(TranslateError::InvalidSpec(format!(
                "population {pop:?} is driven by more than one source"
            )));
        }
    }

    let by_channel: BTreeMap<&str, &ChannelSpec> =
        specs.iter().map(|s| (s.channel_id.as_str(), s)).collect();
    let channels = log.channels();
    let mut col = BTreeMap::new();
    for (i, id) in channels.iter().enumerate() {
        if !by_channel.contains_key(id.as_str()) {
            return Err(TranslateError::MissingSpec(id.clone()));
        }
        col.insert(id.as_str(), i);
    }
    for o in &cfg.outcomes {
        if !col.contains_key(o.channel_id.as_str()) {
            return Err(TranslateError::MissingSpec(o.channel_id.clone()));
        }
    }
    let thresholds: BTreeMap<&str, f64> =
        specs.iter().map(|s| (s.channel_id.as_str(), s.pain_threshold)).collect();

    let mut plan = StimulationPlan {
        ticks: log.len() as u64,
        drives: Vec::with_capacity(log.len()),
        pain_excitations: Vec::new(),
        pain_injections: Vec::new(),
        dopamine_injections: Vec::new(),
    };

    let mut charging = false;
    for (t, row) in log.rows().iter().enumerate() {
        let t = t as u64;
        let mut drives = BTreeMap::new();
        for (id, &i) in &col {
            let spec = by_channel[id];
            let x = row.values[i];
            drives.insert(spec.population.clone(), Drive::Rate(encode_value(spec, x)?));
        }
        for o in &cfg.outcomes {
            let x = row.values[col[o.channel_id.as_str()]];
            if !(0.0..=1.0).contains(&x) {
                return Err(TranslateError::OutOfRange {
                    channel: o.channel_id.clone(),
                    value: x,
                });
            }
            let polarized = match o.predicate {
                Predicate::Ge => x,
                Predicate::Lt => 1.0 - x,
            };
            drives.insert(
                o.population.clone(),
                Drive::Rate(logistic_rate(o.k, o.x0, o.r_min, o.r_max, polarized)),
            );
        }
        if let Some(pop) = cfg.action_populations.get(&row.action) {
            drives.insert(pop.clone(), Drive::Force(cfg.action_fraction));
        }
        plan.drives.push(drives);

        if first_pain(channels, &row.values, &thresholds).is_some() {
            plan.pain_excitations.push((t, cfg.pain_population.clone(), cfg.pain_fraction));
            plan.pain_injections.push((t, cfg.pain_inject));
        }

        // Charge events toggle state at their own tick; the stop tick itself
        // is not a charging tick.
        for ev in &row.events {
            match ev.kind {
                EventKind::ChargeStart => charging = true,
                EventKind::ChargeStop => charging = false,
                _ => {}
            }
        }
        if charging {
            plan.dopamine_injections.push((t, cfg.d_charge));
        }
    }
    Ok(plan)
}

fn forced_prefix(len: u32, fraction: f64) -> Vec<u32> {
    let m = ((fraction * f64::from(len)).ceil() as u32).min(len);
    (0..m).collect()
}

fn entries_at<E>(list: &[E], tick: u64, key: impl Fn(&E) -> u64) -> &[E] {
    let lo = list.partition_point(|e| key(e) < tick);
    let hi = list.partition_point(|e| key(e) <= tick);
    &list[lo..hi]
}

/// Samples one tick of the plan into concrete stimulation and applies the
/// tick's modulator injections to the network.
///
/// Rate drives draw one Bernoulli(rate·dt) per neuron, always the full
/// population, so the RNG stream depends only on the plan shape and the
/// generated spikes are reproducible from the seed. Every population named by
/// the plan must exist in `net`.
pub fn apply_plan_tick(
    net: &mut Network,
    plan: &StimulationPlan,
    tick: u64,
    rng: &mut ChaCha8Rng,
) -> StimMap {
    assert!(tick < plan.ticks, "tick {tick} outside plan of {} ticks", plan.ticks);
    let dt_s = net.dt_ms() / 1000.0;
    let mut stim = StimMap::new();
    for (pop, drive) in &plan.drives[tick as usize] {
        let info = net
            .population(pop)
            .unwrap_or_else(|| panic!("plan population {pop:?} missing from network"));
        let force = match *drive {
            Drive::Rate(rate) => {
                let p = (rate * dt_s).min(1.0);
                (0..info.len).filter(|_| rng.gen::<f64>() < p).collect()
            }
            Drive::Force(fraction) => forced_prefix(info.len, fraction),
        };
        if !force.is_empty() {
            stim.insert(pop.clone(), PopStim { current: 0.0, force });
        }
    }
    for (_, pop, fraction) in entries_at(&plan.pain_excitations, tick, |e| e.0) {
        let info = net
            .population(pop)
            .unwrap_or_else(|| panic!("pain population {pop:?} missing from network"));
        let volley = forced_prefix(info.len, *fraction);
        let entry = stim.entry(pop.clone()).or_insert(PopStim { current: 0.0, force: vec![] });
        let merged: BTreeSet<u32> = entry.force.iter().copied().chain(volley).collect();
        entry.force = merged.into_iter().collect();
    }
    for (_, amount) in entries_at(&plan.pain_injections, tick, |e| e.0) {
        net.inject_modulator(crate::snn::ModKind::Pain, *amount)
            .expect("validated pain amount");
    }
    for (_, amount) in entries_at(&plan.dopamine_injections, tick, |e| e.0) {
        net.inject_modulator(crate::snn::ModKind::Dopamine, *amount)
            .expect("validated dopamine amount");
    }
    stim
}
