//! The sleeping brain: a leaky integrate-and-fire network with delayed
//! synapses, trace-based STDP into eligibility, and dopamine-gated
//! consolidation.
//!
//! Neurons live in named populations ("columns"); the reverse-translation
//! pipeline reads rules off population activations, so population names are
//! the contract between this module and the rest of the system. All dynamics
//! are deterministic; stochastic stimulation is generated upstream and
//! arrives here as explicit forced-spike sets or input currents.
//!
//! Timing convention: `step` advances the network from tick `t` to `t+1`,
//! emitting the spikes that occurred at `t`. A spike's synaptic current
//! arrives `delay` ticks later. `apply_stdp` is called once per step with
//! that step's spikes; traces are decayed, then pairings are applied, then
//! the new spikes bump the traces, so simultaneous pre/post spikes pair with
//! zero effect.

pub mod modulators;
pub mod plasticity;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use modulators::{emotional_appraisal, EmotionalState, ModKind, ModulatorParams, ModulatorState};
pub use plasticity::{PlasticityParams, Synapse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau_m_ms: f64,
    /// Resting potential, mV.
    pub v_rest: f64,
    /// Post-spike reset potential, mV.
    pub v_reset: f64,
    /// Firing threshold, mV.
    pub v_th: f64,
    /// Input resistance, MΩ; currents are in nA so `r_in · I` is mV.
    pub r_in: f64,
    pub t_ref_ms: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau_m_ms: 20.0,
            v_rest: -65.0,
            v_reset: -70.0,
            v_th: -50.0,
            r_in: 10.0,
            t_ref_ms: 20.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<(), SnnError> {
        if !(self.v_reset < self.v_th) {
            return Err(SnnError::InvalidParams(format!(
                "v_reset {} must lie below v_th {}",
                self.v_reset, self.v_th
            )));
        }
        if !(self.tau_m_ms > 0.0) {
            return Err(SnnError::InvalidParams(format!("tau_m {} must be positive", self.tau_m_ms)));
        }
        if !(self.t_ref_ms >= 0.0) {
            return Err(SnnError::InvalidParams(format!("t_ref {} must be ≥ 0", self.t_ref_ms)));
        }
        if !(self.r_in > 0.0) {
            return Err(SnnError::InvalidParams(format!("r_in {} must be positive", self.r_in)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: f64,
    /// First tick at which the neuron integrates again.
    pub refractory_until: u64,
}

/// A population's index range and shared parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopInfo {
    pub start: u32,
    pub len: u32,
    pub params: NeuronParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub tick: u64,
    pub neuron: u32,
}

/// Per-population stimulation for one tick: a uniform input current plus a
/// set of population-local neuron indices forced to spike (forced spikes
/// bypass threshold and refractoriness; they model afferent volleys, not
/// membrane dynamics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopStim {
    pub current: f64,
    pub force: Vec<u32>,
}

pub type StimMap = BTreeMap<String, PopStim>;

#[derive(Debug, Error, PartialEq)]
pub enum SnnError {
    #[error("unknown population {0:?}")]
    UnknownPopulation(String),
    #[error("duplicate population {0:?}")]
    DuplicatePopulation(String),
    #[error("neuron {neuron} reached a non-finite membrane potential")]
    NonFiniteState { neuron: u32 },
    #[error("modulator injections must be non-negative and finite")]
    NegativeInjection,
    #[error("invalid neuron parameters: {0}")]
    InvalidParams(String),
    #[error("bad stimulation: {0}")]
    BadStim(String),
    #[error("topology is frozen once the network has stepped")]
    TopologyFrozen,
    #[error("malformed network snapshot: {0}")]
    MalformedSnapshot(String),
}

#[derive(Debug, Clone)]
pub struct Network {
    dt_ms: f64,
    tick: u64,
    stepped: bool,
    pops: BTreeMap<String, PopInfo>,
    neurons: Vec<NeuronState>,
    synapses: Vec<Synapse>,
    mods: ModulatorState,
    plasticity: PlasticityParams,
    /// Scale from synaptic weight to delivered current (nA per unit weight).
    syn_gain: f64,
    pre_trace: Vec<f64>,
    post_trace: Vec<f64>,
    /// Ring buffer of future synaptic currents; slot `t % len` holds the
    /// currents arriving at tick `t`.
    pending: Vec<Vec<f64>>,
    // Derived, rebuilt after topology changes or snapshot load.
    out_index: Vec<Vec<u32>>,
    in_index: Vec<Vec<u32>>,
    reset_of: Vec<(f64, u64)>,
}

impl Network {
    pub fn new(dt_ms: f64, mods: ModulatorParams, plasticity: PlasticityParams, syn_gain: f64) -> Self {
        assert!(dt_ms > 0.0, "dt must be positive");
        Network {
            dt_ms,
            tick: 0,
            stepped: false,
            pops: BTreeMap::new(),
            neurons: Vec::new(),
            synapses: Vec::new(),
            mods: ModulatorState::new(mods),
            plasticity,
            syn_gain,
            pre_trace: Vec::new(),
            post_trace: Vec::new(),
            pending: vec![Vec::new(), Vec::new()],
            out_index: Vec::new(),
            in_index: Vec::new(),
            reset_of: Vec::new(),
        }
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn mods(&self) -> &ModulatorState {
        &self.mods
    }

    pub fn plasticity(&self) -> &PlasticityParams {
        &self.plasticity
    }

    pub fn neuron_count(&self) -> usize {
        self.neurons.len()
    }

    pub fn neuron_v(&self, i: u32) -> f64 {
        self.neurons[i as usize].v
    }

    pub fn population(&self, name: &str) -> Option<&PopInfo> {
        self.pops.get(name)
    }

    pub fn populations(&self) -> impl Iterator<Item = (&str, &PopInfo)> {
        self.pops.iter().map(|(n, i)| (n.as_str(), i))
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    /// Eligibility of synapse `i` valued at the current tick.
    pub fn synapse_elig(&self, i: usize) -> f64 {
        let lambda = (-self.dt_ms / self.plasticity.tau_elig_ms).exp();
        self.synapses[i].elig_at(self.tick, lambda)
    }

    /// Plant an eligibility value directly (testing/diagnostic hook).
    pub fn set_elig(&mut self, i: usize, value: f64) {
        self.synapses[i].elig = value;
        self.synapses[i].elig_tick = self.tick;
    }

    pub fn set_weight(&mut self, i: usize, w: f64) {
        self.synapses[i].w = w.clamp(self.plasticity.w_min, self.plasticity.w_max);
    }

    pub fn add_population(
        &mut self,
        name: &str,
        len: u32,
        params: NeuronParams,
    ) -> Result<(), SnnError> {
        if self.stepped {
            return Err(SnnError::TopologyFrozen);
        }
        params.validate()?;
        if len == 0 {
            return Err(SnnError::InvalidParams(format!("population {name:?} is empty")));
        }
        if self.pops.contains_key(name) {
            return Err(SnnError::DuplicatePopulation(name.to_string()));
        }
        let start = self.neurons.len() as u32;
        self.pops.insert(name.to_string(), PopInfo { start, len, params });
        let v0 = params.v_rest;
        self.neurons.extend(
            std::iter::repeat(NeuronState { v: v0, refractory_until: 0 }).take(len as usize),
        );
        self.rebuild_derived();
        Ok(())
    }

    /// Connect every neuron of `pre` to `fan_out` targets sampled without
    /// replacement from `post` (capped at the population size).
    pub fn connect_random(
        &mut self,
        pre: &str,
        post: &str,
        fan_out: u32,
        delay: u32,
        w_init: f64,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<(), SnnError> {
        if self.stepped {
            return Err(SnnError::TopologyFrozen);
        }
        let a = *self.require_pop(pre)?;
        let b = *self.require_pop(post)?;
        let k = fan_out.min(b.len) as usize;
        for p in a.start..a.start + a.len {
            let picks = rand::seq::index::sample(rng, b.len as usize, k);
            let mut targets: Vec<u32> = picks.iter().map(|j| b.start + j as u32).collect();
            targets.sort_unstable();
            for t in targets {
                self.synapses.push(Synapse::new(p, t, w_init, delay.max(1)));
            }
        }
        self.rebuild_derived();
        Ok(())
    }

    /// Plant one exact synapse between global neuron indices.
    pub fn add_synapse(&mut self, pre: u32, post: u32, w: f64, delay: u32) -> Result<usize, SnnError> {
        if self.stepped {
            return Err(SnnError::TopologyFrozen);
        }
        let n = self.neurons.len() as u32;
        if pre >= n || post >= n {
            return Err(SnnError::InvalidParams(format!(
                "synapse {pre}→{post} out of range for {n} neurons"
            )));
        }
        if delay < 1 {
            return Err(SnnError::InvalidParams("synaptic delay must be ≥ 1 tick".into()));
        }
        self.synapses.push(Synapse::new(pre, post, w, delay));
        self.rebuild_derived();
        Ok(self.synapses.len() - 1)
    }

    fn require_pop(&self, name: &str) -> Result<&PopInfo, SnnError> {
        self.pops
            .get(name)
            .ok_or_else(|| SnnError::UnknownPopulation(name.to_string()))
    }

    fn rebuild_derived(&mut self) {
        let n = self.neurons.len();
        self.pre_trace.resize(n, 0.0);
        self.post_trace.resize(n, 0.0);
        self.out_index = vec![Vec::new(); n];
        self.in_index = vec![Vec::new(); n];
        for (i, s) in self.synapses.iter().enumerate() {
            self.out_index[s.pre as usize].push(i as u32);
            self.in_index[s.post as usize].push(i as u32);
        }
        let max_delay = self.synapses.iter().map(|s| s.delay).max().unwrap_or(1) as usize;
        self.pending = vec![vec![0.0; n]; max_delay + 1];
        self.reset_of = Vec::with_capacity(n);
        for _ in 0..n {
            self.reset_of.push((0.0, 0));
        }
        for info in self.pops.values() {
            let ref_ticks = (info.params.t_ref_ms / self.dt_ms).round() as u64;
            for g in info.start..info.start + info.len {
                self.reset_of[g as usize] = (info.params.v_reset, ref_ticks);
            }
        }
    }

    /// Advance one tick. Returns the tick's spikes in ascending neuron order.
    pub fn step(&mut self, stim: &StimMap) -> Result<Vec<SpikeEvent>, SnnError> {
        let n = self.neurons.len();
        for (name, s) in stim {
            let info = self.require_pop(name)?;
            if !s.current.is_finite() {
                return Err(SnnError::BadStim(format!("non-finite current into {name:?}")));
            }
            if let Some(&bad) = s.force.iter().find(|&&i| i >= info.len) {
                return Err(SnnError::BadStim(format!(
                    "forced index {bad} outside population {name:?} of {} neurons",
                    info.len
                )));
            }
        }

        let t = self.tick;
        let slot = (t % self.pending.len() as u64) as usize;
        let mut spiked = vec![false; n];
        let mut non_finite: Option<u32> = None;

        for (name, info) in &self.pops {
            let p = info.params;
            let i_stim = stim.get(name).map(|s| s.current).unwrap_or(0.0);
            let leak = self.dt_ms / p.tau_m_ms;
            for g in info.start..info.start + info.len {
                let gi = g as usize;
                let st = &mut self.neurons[gi];
                if t < st.refractory_until {
                    st.v = p.v_reset;
                    continue;
                }
                let i_total = self.pending[slot][gi] + i_stim;
                st.v += leak * (p.v_rest - st.v + p.r_in * i_total);
                if !st.v.is_finite() {
                    non_finite.get_or_insert(g);
                }
                if st.v >= p.v_th {
                    spiked[gi] = true;
                }
            }
            if let Some(s) = stim.get(name) {
                for &li in &s.force {
                    spiked[(info.start + li) as usize] = true;
                }
            }
        }
        if let Some(neuron) = non_finite {
            return Err(SnnError::NonFiniteState { neuron });
        }

        self.pending[slot].fill(0.0);

        let size = self.pending.len() as u64;
        let mut events = Vec::new();
        for gi in 0..n {
            if !spiked[gi] {
                continue;
            }
            let (v_reset, ref_ticks) = self.reset_of[gi];
            let st = &mut self.neurons[gi];
            st.v = v_reset;
            st.refractory_until = t + 1 + ref_ticks;
            events.push(SpikeEvent { tick: t, neuron: gi as u32 });
            for &si in &self.out_index[gi] {
                let s = &self.synapses[si as usize];
                let arrive = ((t + s.delay as u64) % size) as usize;
                self.pending[arrive][s.post as usize] += s.w * self.syn_gain;
            }
        }

        self.mods.decay(self.dt_ms);
        self.tick = t + 1;
        self.stepped = true;
        Ok(events)
    }

    /// One tick of plasticity for the spikes `step` just returned: decay the
    /// pre/post traces, pair each spike against the opposite trace into
    /// eligibility, then bump the traces for this tick's spikes.
    pub fn apply_stdp(&mut self, spikes: &[SpikeEvent]) {
        let lambda_p = (-self.dt_ms / self.plasticity.tau_plus_ms).exp();
        let lambda_m = (-self.dt_ms / self.plasticity.tau_minus_ms).exp();
        let lambda_e = (-self.dt_ms / self.plasticity.tau_elig_ms).exp();
        for v in self.pre_trace.iter_mut() {
            *v *= lambda_p;
        }
        for v in self.post_trace.iter_mut() {
            *v *= lambda_m;
        }
        let now = self.tick;
        for ev in spikes {
            let gi = ev.neuron as usize;
            for &si in &self.in_index[gi] {
                let s = &mut self.synapses[si as usize];
                s.fold_elig(now, lambda_e);
                s.elig += self.plasticity.a_plus * self.pre_trace[s.pre as usize];
            }
            for &si in &self.out_index[gi] {
                let s = &mut self.synapses[si as usize];
                s.fold_elig(now, lambda_e);
                s.elig -= self.plasticity.a_minus * self.post_trace[s.post as usize];
            }
        }
        for ev in spikes {
            self.pre_trace[ev.neuron as usize] += 1.0;
            self.post_trace[ev.neuron as usize] += 1.0;
        }
    }

    /// Convert eligibility into weight change, gated by dopamine's excess
    /// over baseline: `w ← clamp(w + η·(dopamine − baseline)·elig)`. At
    /// baseline the gate is exactly zero and no weight moves.
    pub fn consolidate(&mut self) {
        let gate = self.mods.dopamine_offset();
        if gate == 0.0 {
            return;
        }
        let lambda_e = (-self.dt_ms / self.plasticity.tau_elig_ms).exp();
        let eta = self.plasticity.eta;
        let (lo, hi) = (self.plasticity.w_min, self.plasticity.w_max);
        for s in &mut self.synapses {
            s.fold_elig(self.tick, lambda_e);
            if s.elig != 0.0 {
                s.w = (s.w + eta * gate * s.elig).clamp(lo, hi);
            }
        }
    }

    pub fn inject_modulator(&mut self, kind: ModKind, amount: f64) -> Result<(), SnnError> {
        if !(amount >= 0.0 && amount.is_finite()) {
            return Err(SnnError::NegativeInjection);
        }
        self.mods.inject(kind, amount);
        Ok(())
    }

    pub fn appraisal(&self) -> EmotionalState {
        emotional_appraisal(&self.mods)
    }

    /// Canonical snapshot: eligibilities folded to the current tick, sparse
    /// pending currents, sorted populations. Equal networks produce
    /// byte-identical snapshots; loading resumes bit-identically.
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let lambda_e = (-self.dt_ms / self.plasticity.tau_elig_ms).exp();
        let synapses: Vec<Synapse> = self
            .synapses
            .iter()
            .map(|s| {
                let mut c = s.clone();
                c.fold_elig(self.tick, lambda_e);
                c
            })
            .collect();
        let size = self.pending.len() as u64;
        let pending: Vec<Vec<(u32, f64)>> = (0..size)
            .map(|k| {
                let slot = ((self.tick + k) % size) as usize;
                self.pending[slot]
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(i, &c)| (i as u32, c))
                    .collect()
            })
            .collect();
        let doc = Snapshot {
            schema: 1,
            dt_ms: self.dt_ms,
            tick: self.tick,
            pops: self.pops.clone(),
            neurons: self.neurons.clone(),
            synapses,
            mods: self.mods,
            plasticity: self.plasticity,
            syn_gain: self.syn_gain,
            pre_trace: self.pre_trace.clone(),
            post_trace: self.post_trace.clone(),
            pending,
        };
        serde_json::to_vec(&doc).expect("snapshot is serializable")
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, SnnError> {
        let doc: Snapshot = serde_json::from_slice(bytes)
            .map_err(|e| SnnError::MalformedSnapshot(e.to_string()))?;
        if doc.schema != 1 {
            return Err(SnnError::MalformedSnapshot(format!(
                "unsupported schema version {}",
                doc.schema
            )));
        }
        let n = doc.neurons.len();
        let mut covered = vec![false; n];
        for (name, info) in &doc.pops {
            info.params.validate()?;
            let end = info.start as usize + info.len as usize;
            if end > n {
                return Err(SnnError::MalformedSnapshot(format!(
                    "population {name:?} range exceeds {n} neurons"
                )));
            }
            for g in info.start as usize..end {
                if covered[g] {
                    return Err(SnnError::MalformedSnapshot(format!(
                        "population {name:?} overlaps another at neuron {g}"
                    )));
                }
                covered[g] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(SnnError::MalformedSnapshot(
                "populations do not cover all neurons".into(),
            ));
        }
        if doc.pre_trace.len() != n || doc.post_trace.len() != n {
            return Err(SnnError::MalformedSnapshot("trace arrays mismatch neuron count".into()));
        }
        let mut max_delay = 1;
        for s in &doc.synapses {
            if s.pre as usize >= n || s.post as usize >= n {
                return Err(SnnError::MalformedSnapshot(format!(
                    "synapse {}→{} out of range",
                    s.pre, s.post
                )));
            }
            if s.delay < 1 {
                return Err(SnnError::MalformedSnapshot("synaptic delay below 1".into()));
            }
            max_delay = max_delay.max(s.delay as usize);
        }
        if doc.pending.len() < max_delay + 1 {
            return Err(SnnError::MalformedSnapshot("pending ring smaller than max delay".into()));
        }

        let mut net = Network {
            dt_ms: doc.dt_ms,
            tick: doc.tick,
            stepped: doc.tick > 0,
            pops: doc.pops,
            neurons: doc.neurons,
            synapses: doc.synapses,
            mods: doc.mods,
            plasticity: doc.plasticity,
            syn_gain: doc.syn_gain,
            pre_trace: doc.pre_trace,
            post_trace: doc.post_trace,
            pending: Vec::new(),
            out_index: Vec::new(),
            in_index: Vec::new(),
            reset_of: Vec::new(),
        };
        for s in &mut net.synapses {
            s.elig_tick = net.tick;
        }
        // rebuild_derived resets the ring; refill it from the snapshot rows.
        let saved_pending = doc.pending;
        net.rebuild_derived();
        let size = net.pending.len().max(saved_pending.len());
        net.pending = vec![vec![0.0; n]; size];
        for (k, row) in saved_pending.iter().enumerate() {
            let slot = ((net.tick + k as u64) % size as u64) as usize;
            for &(i, c) in row {
                if i as usize >= n {
                    return Err(SnnError::MalformedSnapshot(format!(
                        "pending current for neuron {i} out of range"
                    )));
                }
                net.pending[slot][i as usize] = c;
            }
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    schema: u32,
    dt_ms: f64,
    tick: u64,
    pops: BTreeMap<String, PopInfo>,
    neurons: Vec<NeuronState>,
    synapses: Vec<Synapse>,
    mods: ModulatorState,
    plasticity: PlasticityParams,
    syn_gain: f64,
    pre_trace: Vec<f64>,
    post_trace: Vec<f64>,
    /// Row `k` holds sparse currents arriving at `tick + k`.
    pending: Vec<Vec<(u32, f64)>>,
}

/// Closed-form inter-spike interval of a LIF neuron under constant current,
/// in ms: `t_ref + tau_m · ln((r·I − (v_reset − v_rest)) / (r·I − (v_th −
/// v_rest)))`. None when the drive cannot reach threshold.
pub fn lif_isi_ms(p: &NeuronParams, current: f64) -> Option<f64> {
    let drive = p.r_in * current;
    if drive <= p.v_th - p.v_rest {
        return None;
    }
    let num = drive - (p.v_reset - p.v_rest);
    let den = drive - (p.v_th - p.v_rest);
    Some(p.t_ref_ms + p.tau_m_ms * (num / den).ln())
}
