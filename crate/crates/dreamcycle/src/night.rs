//! Night phase: build the sleeping brain, replay recorded days into it, and
//! reverse-translate the resulting activity into a rule patch.
//!
//! The brain layout is conventional so that day logs, stimulation plans, and
//! column labels all agree without a registry:
//!
//! - `sense_<channel>`: one population per sensor channel, rate-driven by the
//!   channel's encoder.
//! - `act_<action>`: one population per action, force-driven on ticks the log
//!   says the action was taken.
//! - `out_<channel>_<ge|lt>`: outcome populations, rate-driven so they are hot
//!   exactly when the literal they stand for holds.
//! - `pain`: the population receiving the massive excitation on painful ticks.
//!
//! Column literal thresholds are derived, not configured: a column counts as
//! active when its spike count reaches `activation_min`, which pins down the
//! firing rate and, through the encoder's logistic, the sensor value where a
//! population starts clearing that bar.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionId;
use crate::experience::ExperienceLog;
use crate::reverse::{
    convolve_chains, diff_rules, extract_activations, mine_chains, ActivationTrace, ColumnLabel,
    ColumnMap, ExtractedRule, ReplayRecord, ReverseError, ReverseParams,
};
use crate::rules::{CondLiteral, Predicate, Provenance, RulePatch, RuleSet};
use crate::seed::mix;
use crate::snn::{
    EmotionalState, ModulatorParams, Network, NeuronParams, PlasticityParams, SnnError, StimMap,
};
use crate::translate::{
    apply_plan_tick, plan_stimulation, ChannelSpec, OutcomeDrive, TranslateConfig, TranslateError,
};

pub const PAIN_POPULATION: &str = "pain";

pub fn sensory_population(channel: &str) -> String {
    format!("sense_{channel}")
}

pub fn action_population(action: ActionId) -> String {
    format!("act_{}", action.as_str())
}

pub fn outcome_population(channel: &str, predicate: Predicate) -> String {
    let suffix = match predicate {
        Predicate::Ge => "ge",
        Predicate::Lt => "lt",
    };
    format!("out_{channel}_{suffix}")
}

/// Physical shape of the sleeping brain, independent of what it senses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainLayout {
    pub dt_ms: f64,
    pub neurons_per_pop: u32,
    pub fan_out: u32,
    pub delay_ticks: u32,
    pub w_init: f64,
    pub syn_gain: f64,
    /// Seed for wiring; fixed per brain so topology survives rebuilds.
    pub topology_seed: u64,
    pub neuron: NeuronParams,
    pub modulators: ModulatorParams,
    pub plasticity: PlasticityParams,
}

impl Default for BrainLayout {
    fn default() -> Self {
        BrainLayout {
            dt_ms: 10.0,
            neurons_per_pop: 32,
            fan_out: 8,
            delay_ticks: 1,
            w_init: 0.1,
            syn_gain: 0.6,
            topology_seed: 42,
            neuron: NeuronParams::default(),
            modulators: ModulatorParams::default(),
            plasticity: PlasticityParams::default(),
        }
    }
}

/// One sensor channel as the night sees it: its encoder plus whether its
/// activity is worth mining as a rule condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightChannel {
    pub spec: ChannelSpec,
    /// Channels that flicker near their activation threshold make noisy
    /// condition columns; leave them out and they still drive the brain.
    pub mine_condition: bool,
}

/// Everything needed to assemble a night rig. The `population` fields inside
/// `channels` and `outcomes` are overwritten with the conventional names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightSpec {
    pub layout: BrainLayout,
    pub channels: Vec<NightChannel>,
    pub outcomes: Vec<OutcomeDrive>,
    pub pain_fraction: f64,
    pub pain_inject: f64,
    pub d_charge: f64,
    pub action_fraction: f64,
    pub reverse: ReverseParams,
}

impl NightSpec {
    /// Rig matching the gridworld's five sensor channels. Proximity channels
    /// drive the brain but are not mined (they hover near threshold while the
    /// robot skirts walls); hazard and charger make crisp condition columns.
    pub fn standard() -> Self {
        let mut channels = Vec::new();
        for name in crate::world::CHANNELS {
            let mut spec = ChannelSpec::new(name, "");
            spec.k = 24.0;
            spec.x0 = 0.5;
            if name == "hazard_front" {
                spec.pain_threshold = 0.9;
            }
            if name == "charger_gradient" {
                spec.k = 100.0;
                spec.x0 = 1.0;
            }
            channels.push(NightChannel {
                spec,
                mine_condition: matches!(name, "hazard_front" | "charger_gradient"),
            });
        }
        let outcomes = vec![
            OutcomeDrive {
                channel_id: "hazard_front".to_string(),
                population: String::new(),
                predicate: Predicate::Lt,
                k: 24.0,
                x0: 0.5,
                r_min: 2.0,
                r_max: 120.0,
            },
            OutcomeDrive {
                channel_id: "charger_gradient".to_string(),
                population: String::new(),
                predicate: Predicate::Ge,
                k: 100.0,
                x0: 1.0,
                r_min: 2.0,
                r_max: 120.0,
            },
        ];
        NightSpec {
            layout: BrainLayout::default(),
            channels,
            outcomes,
            pain_fraction: 0.8,
            pain_inject: 0.3,
            d_charge: 0.05,
            action_fraction: 0.6,
            reverse: ReverseParams::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NightError {
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Reverse(#[from] ReverseError),
    #[error(transparent)]
    Snn(#[from] SnnError),
    #[error("night rig cannot be built: {0}")]
    BadSpec(String),
}

/// Firing rate (Hz) at which a population of `pop_len` neurons is expected to
/// reach `activation_min` spikes within one bin.
pub fn activation_rate_hz(reverse: &ReverseParams, pop_len: u32, dt_ms: f64) -> f64 {
    let bin_seconds = reverse.bin_width as f64 * dt_ms / 1000.0;
    f64::from(reverse.activation_min) / (f64::from(pop_len) * bin_seconds)
}

/// Input value at which a logistic encoder crosses `rate_hz`, or None when
/// the rate lies outside the encoder's open range.
pub fn crossing_input(k: f64, x0: f64, r_min: f64, r_max: f64, rate_hz: f64) -> Option<f64> {
    let sigma = (rate_hz - r_min) / (r_max - r_min);
    if !(sigma > 0.0 && sigma < 1.0) {
        return None;
    }
    Some(x0 + (sigma / (1.0 - sigma)).ln() / k)
}

/// Thresholds go into rule files; four decimals keeps them stable text.
fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// A built sleeping brain plus everything needed to replay logs into it and
/// read rules back out.
#[derive(Debug, Clone)]
pub struct NightRig {
    pub net: Network,
    pub specs: Vec<ChannelSpec>,
    pub translate: TranslateConfig,
    pub cmap: ColumnMap,
    pub reverse: ReverseParams,
    /// Silent ticks inserted between episodes so chains cannot straddle them.
    pub gap_ticks: u64,
}

/// Output of one night: the patch plus the evidence it came from.
#[derive(Debug, Clone, Serialize)]
pub struct NightReport {
    pub patch: RulePatch,
    pub extracted: Vec<ExtractedRule>,
    pub trace: ActivationTrace,
    pub replay_ticks: u64,
    pub mean_appraisal: EmotionalState,
}

impl NightRig {
    pub fn build(spec: &NightSpec) -> Result<NightRig, NightError> {
        let layout = &spec.layout;
        if layout.neurons_per_pop == 0 || layout.fan_out == 0 {
            return Err(NightError::BadSpec(
                "populations and fan_out must be nonempty".to_string(),
            ));
        }
        spec.reverse.validate()?;

        let mut specs = Vec::with_capacity(spec.channels.len());
        for ch in &spec.channels {
            let mut s = ch.spec.clone();
            s.population = sensory_population(&s.channel_id);
            s.validate()?;
            specs.push(s);
        }
        let mut outcomes = Vec::with_capacity(spec.outcomes.len());
        for o in &spec.outcomes {
            let mut o = o.clone();
            o.population = outcome_population(&o.channel_id, o.predicate);
            outcomes.push(o);
        }

        let mut translate = TranslateConfig::new(PAIN_POPULATION);
        translate.pain_fraction = spec.pain_fraction;
        translate.pain_inject = spec.pain_inject;
        translate.d_charge = spec.d_charge;
        translate.action_fraction = spec.action_fraction;
        translate.action_populations =
            ActionId::ALL.iter().map(|&a| (a, action_population(a))).collect();
        translate.outcomes = outcomes.clone();
        translate.validate()?;

        let mut net = Network::new(
            layout.dt_ms,
            layout.modulators,
            layout.plasticity,
            layout.syn_gain,
        );
        let n = layout.neurons_per_pop;
        for s in &specs {
            net.add_population(&s.population, n, layout.neuron)?;
        }
        for o in &outcomes {
            net.add_population(&o.population, n, layout.neuron)?;
        }
        for &a in ActionId::ALL.iter() {
            net.add_population(&action_population(a), n, layout.neuron)?;
        }
        net.add_population(PAIN_POPULATION, n, layout.neuron)?;

        let mut rng = ChaCha8Rng::seed_from_u64(layout.topology_seed);
        for s in &specs {
            for &a in ActionId::ALL.iter() {
                net.connect_random(
                    &s.population,
                    &action_population(a),
                    layout.fan_out,
                    layout.delay_ticks,
                    layout.w_init,
                    &mut rng,
                )?;
            }
        }
        for &a in ActionId::ALL.iter() {
            for o in &outcomes {
                net.connect_random(
                    &action_population(a),
                    &o.population,
                    layout.fan_out,
                    layout.delay_ticks,
                    layout.w_init,
                    &mut rng,
                )?;
            }
        }
        for &a in ActionId::ALL.iter() {
            net.connect_random(
                PAIN_POPULATION,
                &action_population(a),
                layout.fan_out,
                layout.delay_ticks,
                layout.w_init,
                &mut rng,
            )?;
        }

        let r_star = activation_rate_hz(&spec.reverse, n, layout.dt_ms);
        let mut columns = Vec::new();
        for (ch, s) in spec.channels.iter().zip(&specs) {
            if !ch.mine_condition {
                continue;
            }
            let x = crossing_input(s.k, s.x0, s.r_min, s.r_max, r_star).ok_or_else(|| {
                NightError::BadSpec(format!(
                    "channel {:?} never reaches the activation rate {r_star} Hz",
                    s.channel_id
                ))
            })?;
            columns.push((
                s.population.clone(),
                ColumnLabel::Condition {
                    literal: CondLiteral::new(&s.channel_id, Predicate::Ge, round4(x)),
                },
            ));
        }
        for &a in ActionId::ALL.iter() {
            columns.push((action_population(a), ColumnLabel::Action { action: a }));
        }
        for o in &outcomes {
            let x = crossing_input(o.k, o.x0, o.r_min, o.r_max, r_star).ok_or_else(|| {
                NightError::BadSpec(format!(
                    "outcome {:?} never reaches the activation rate {r_star} Hz",
                    o.channel_id
                ))
            })?;
            // A `lt` outcome population encodes the mirrored value, so it is
            // hot exactly when the raw value sits below the mirrored crossing.
            let literal = match o.predicate {
                Predicate::Ge => CondLiteral::new(&o.channel_id, Predicate::Ge, round4(x)),
                Predicate::Lt => CondLiteral::new(&o.channel_id, Predicate::Lt, round4(1.0 - x)),
            };
            columns.push((o.population.clone(), ColumnLabel::Outcome { literal }));
        }
        let cmap = ColumnMap::new(columns)?;

        Ok(NightRig {
            net,
            specs,
            translate,
            cmap,
            reverse: spec.reverse.clone(),
            gap_ticks: spec.reverse.delta_max * spec.reverse.bin_width,
        })
    }

    /// Replays one day log into the brain: plan, stimulate, step, learn, and
    /// consolidate once at the end of the episode.
    pub fn replay_log(
        &mut self,
        log: &ExperienceLog,
        rng: &mut ChaCha8Rng,
        record: &mut ReplayRecord,
    ) -> Result<(), NightError> {
        let plan = plan_stimulation(log, &self.specs, &self.translate)?;
        for t in 0..plan.ticks {
            let stim = apply_plan_tick(&mut self.net, &plan, t, rng);
            let spikes = self.net.step(&stim)?;
            self.net.apply_stdp(&spikes);
            record.push_tick(&spikes, self.net.appraisal());
        }
        self.net.consolidate();
        Ok(())
    }

    /// Lets the brain idle long enough that no chain can span the boundary.
    pub fn gap(&mut self, record: &mut ReplayRecord) -> Result<(), NightError> {
        let silence = StimMap::new();
        for _ in 0..self.gap_ticks {
            let spikes = self.net.step(&silence)?;
            self.net.apply_stdp(&spikes);
            record.push_tick(&spikes, self.net.appraisal());
        }
        Ok(())
    }

    /// Pure read-out: activations → chains → rules → patch against `rules`.
    pub fn reverse_pass(
        &self,
        record: &ReplayRecord,
        rules: &RuleSet,
        run_id: &str,
    ) -> Result<NightReport, NightError> {
        let trace = extract_activations(record, &self.cmap, &self.reverse)?;
        let chains = mine_chains(&trace, &self.reverse);
        let extracted = convolve_chains(&chains, &self.reverse);
        let mood = record.mean_appraisal();
        let provenance = Provenance {
            run_id: run_id.to_string(),
            mean_valence: mood.valence,
            mean_arousal: mood.arousal,
        };
        let patch = diff_rules(rules, &extracted, &self.reverse, provenance);
        Ok(NightReport {
            patch,
            extracted,
            trace,
            replay_ticks: record.ticks,
            mean_appraisal: mood,
        })
    }

    /// One whole night for one robot: replay every log in order with gaps
    /// between episodes, then run the reverse pipeline against `rules`.
    pub fn run_night(
        &mut self,
        logs: &[ExperienceLog],
        seed: u64,
        rules: &RuleSet,
        run_id: &str,
    ) -> Result<NightReport, NightError> {
        let mut record = ReplayRecord::from_network(&self.net);
        for (i, log) in logs.iter().enumerate() {
            if i > 0 {
                self.gap(&mut record)?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, "replay", &[i as u64]));
            self.replay_log(log, &mut rng, &mut record)?;
        }
        self.reverse_pass(&record, rules, run_id)
    }
}
