//! Reverse translation: turning night-phase spiking activity back into
//! IF-DO-THEN rules and a patch against the robot's current rule set.
//!
//! The pipeline is three pure passes over data recorded during replay:
//!
//! 1. [`extract_activations`] bins spikes per labeled column and binarizes
//!    by a spike-count threshold, pairing each bin with the emotional state
//!    at its end.
//! 2. [`mine_chains`] enumerates condition → action → outcome activation
//!    chains with bounded gaps and counts how often the outcome followed.
//! 3. [`convolve_chains`] merges chains that share (action, outcome) into
//!    conjunctive rules, then [`diff_rules`] turns extracted rules into an
//!    add/modify/remove patch, never touching hand-authored rules.
//!
//! Every pass is deterministic; given the same inputs the same bytes come
//! out, which is what makes repeated dreams comparable.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionId;
use crate::rules::{
    CondLiteral, ConditionExpr, ModifyEntry, Provenance, Rule, RulePatch, RuleSet,
};
use crate::seed::fnv1a64;
use crate::snn::{EmotionalState, Network, SpikeEvent};

/// Tunables of the reverse pipeline. One struct so the day side, the night
/// side, and the tests all read the same numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseParams {
    /// Ticks per activation bin.
    pub bin_width: u64,
    /// Spikes per bin a column needs to count as active.
    pub activation_min: u32,
    /// Maximum gap, in bins, between chain elements.
    pub delta_max: u64,
    /// Minimum supporting bins for a chain to survive pass 1.
    pub support_min: u64,
    /// Fraction of a rule's supporting bins a condition literal must
    /// co-occupy to join the conjunction in pass 2.
    pub co_min: f64,
    /// Confidence a rule needs to be added; half of it is the keep floor.
    pub gate: f64,
    /// Confidence drift below which an existing rule is left untouched.
    pub conf_eps: f64,
    /// Valence-to-confidence coupling strength.
    pub lambda_v: f64,
    /// Priority = round(confidence × this).
    pub priority_scale: f64,
}

impl Default for ReverseParams {
    fn default() -> Self {
        ReverseParams {
            bin_width: 5,
            activation_min: 8,
            delta_max: 3,
            support_min: 3,
            co_min: 0.9,
            gate: 0.5,
            conf_eps: 0.05,
            lambda_v: 0.25,
            priority_scale: 100.0,
        }
    }
}

impl ReverseParams {
    pub fn validate(&self) -> Result<(), ReverseError> {
        if self.bin_width < 1 || self.activation_min < 1 {
            return Err(ReverseError::BadParams(
                "bin_width and activation_min must be at least 1".to_string(),
            ));
        }
        if self.delta_max < 1 || self.support_min < 1 {
            return Err(ReverseError::BadParams(
                "delta_max and support_min must be at least 1".to_string(),
            ));
        }
        for (label, v) in [
            ("co_min", self.co_min),
            ("gate", self.gate),
            ("conf_eps", self.conf_eps),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ReverseError::BadParams(format!(
                    "{label} must lie in [0, 1], got {v}"
                )));
            }
        }
        if !(self.lambda_v.is_finite() && self.priority_scale.is_finite()) {
            return Err(ReverseError::BadParams(
                "lambda_v and priority_scale must be finite".to_string(),
            ));
        }
        Ok(())
    }
}

/// What a population's activity means in rule terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnLabel {
    /// Activity stands for a sensor literal holding (rule IF side).
    Condition { literal: CondLiteral },
    /// Activity stands for the robot doing this action (rule DO side).
    Action { action: ActionId },
    /// Activity stands for a literal holding afterwards (rule THEN side).
    Outcome { literal: CondLiteral },
}

/// Populations worth reading during reverse translation, with their labels.
/// Unlabeled populations (the pain population, plumbing) are simply invisible
/// to the miner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    columns: Vec<(String, ColumnLabel)>,
}

impl ColumnMap {
    pub fn new(columns: Vec<(String, ColumnLabel)>) -> Result<Self, ReverseError> {
        let mut pops = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for (pop, label) in &columns {
            if !pops.insert(pop.clone()) {
                return Err(ReverseError::DuplicateColumn(pop.clone()));
            }
            let key = serde_json::to_string(label).expect("label serializes");
            if !labels.insert(key) {
                return Err(ReverseError::DuplicateColumn(format!("label of {pop:?}")));
            }
        }
        Ok(ColumnMap { columns })
    }

    pub fn columns(&self) -> &[(String, ColumnLabel)] {
        &self.columns
    }
}

/// Everything the reverse pipeline needs from one night replay: which neuron
/// ranges the populations held, the spikes on a zero-based replay clock, and
/// the emotional state after every tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    /// Population name → (first neuron, length), frozen at replay start.
    pub pops: BTreeMap<String, (u32, u32)>,
    /// Replay length in ticks.
    pub ticks: u64,
    /// Spikes with ticks rebased to the replay clock.
    pub spikes: Vec<SpikeEvent>,
    /// Post-step appraisal per replay tick; length equals `ticks`.
    pub appraisals: Vec<EmotionalState>,
}

impl ReplayRecord {
    /// Captures the population layout; data is appended tick by tick.
    pub fn from_network(net: &Network) -> Self {
        ReplayRecord {
            pops: net
                .populations()
                .map(|(name, info)| (name.to_string(), (info.start, info.len)))
                .collect(),
            ticks: 0,
            spikes: Vec::new(),
            appraisals: Vec::new(),
        }
    }

    /// Appends one tick of replay output, rebasing spike times onto the
    /// record's own clock.
    pub fn push_tick(&mut self, spiked: &[SpikeEvent], mood: EmotionalState) {
        let t = self.ticks;
        self.spikes
            .extend(spiked.iter().map(|s| SpikeEvent { tick: t, neuron: s.neuron }));
        self.appraisals.push(mood);
        self.ticks += 1;
    }

    /// Mean appraisal across the whole replay; neutral zero when empty.
    pub fn mean_appraisal(&self) -> EmotionalState {
        if self.appraisals.is_empty() {
            return EmotionalState { valence: 0.0, arousal: 0.0 };
        }
        let n = self.appraisals.len() as f64;
        EmotionalState {
            valence: self.appraisals.iter().map(|a| a.valence).sum::<f64>() / n,
            arousal: self.appraisals.iter().map(|a| a.arousal).sum::<f64>() / n,
        }
    }
}

/// Binned, binarized view of a replay: one row per bin, one cell per labeled
/// column, plus the appraisal at each bin's end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub bin_width: u64,
    pub columns: Vec<(String, ColumnLabel)>,
    /// `cells[bin][column]`: did the column clear the activation threshold.
    pub cells: Vec<Vec<bool>>,
    /// Appraisal snapshot at the last tick of each bin.
    pub appraisal: Vec<EmotionalState>,
}

impl ActivationTrace {
    pub fn n_bins(&self) -> u64 {
        self.cells.len() as u64
    }
}

/// One mined condition → action → outcome chain with its counting evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateChain {
    pub condition: CondLiteral,
    pub action: ActionId,
    pub outcome: CondLiteral,
    /// Bins where condition, action, and outcome lined up in order.
    pub support: u64,
    /// Bins where condition was followed by the action, outcome or not.
    pub total: u64,
    /// Mean valence at the earliest witnessing outcome bin, over supports.
    pub mean_valence: f64,
    /// The supporting bins themselves (sorted); pass 2 needs them to measure
    /// co-occurrence between chains.
    pub support_bins: Vec<u64>,
    /// The antecedent (condition-then-action) bins, sorted.
    pub antecedent_bins: Vec<u64>,
}

impl CandidateChain {
    pub fn p(&self) -> f64 {
        if self.total == 0 { 0.0 } else { self.support as f64 / self.total as f64 }
    }
}

/// A rule distilled from one (action, outcome) group of chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRule {
    pub rule: Rule,
    /// Empirical probability: pooled support over pooled antecedents.
    pub p: f64,
    pub support: u64,
    pub total: u64,
    pub mean_valence: f64,
    /// The chains this rule was convolved from.
    pub sources: Vec<CandidateChain>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReverseError {
    #[error("column population {0:?} is not present in the replay record")]
    UnknownPopulation(String),
    #[error("duplicate column: {0}")]
    DuplicateColumn(String),
    #[error("bad reverse parameters: {0}")]
    BadParams(String),
}

/// Pass 0: bin and binarize the replay's spikes per labeled column.
///
/// Bin count is `ceil(ticks / bin_width)`; a short trailing bin keeps its
/// spikes and takes its appraisal from the last tick it covers.
pub fn extract_activations(
    record: &ReplayRecord,
    cmap: &ColumnMap,
    params: &ReverseParams,
) -> Result<ActivationTrace, ReverseError> {
    params.validate()?;
    let mut ranges = Vec::with_capacity(cmap.columns().len());
    for (pop, _) in cmap.columns() {
        let (start, len) = record
            .pops
            .get(pop)
            .copied()
            .ok_or_else(|| ReverseError::UnknownPopulation(pop.clone()))?;
        ranges.push((start, len));
    }

    // Dense neuron → column index map for O(1) spike attribution.
    let top = ranges.iter().map(|(s, l)| s + l).max().unwrap_or(0);
    let mut col_of: Vec<Option<u16>> = vec![None; top as usize];
    for (ci, (start, len)) in ranges.iter().enumerate() {
        for n in *start..start + len {
            col_of[n as usize] = Some(ci as u16);
        }
    }

    let n_bins = record.ticks.div_ceil(params.bin_width) as usize;
    let n_cols = cmap.columns().len();
    let mut counts = vec![vec![0u32; n_cols]; n_bins];
    for s in &record.spikes {
        debug_assert!(s.tick < record.ticks, "spike beyond recorded ticks");
        if s.tick >= record.ticks {
            continue;
        }
        let Some(Some(ci)) = col_of.get(s.neuron as usize) else { continue };
        counts[(s.tick / params.bin_width) as usize][*ci as usize] += 1;
    }

    let cells = counts
        .iter()
        .map(|row| row.iter().map(|&c| c >= params.activation_min).collect())
        .collect();
    let appraisal = (0..n_bins as u64)
        .map(|b| {
            let end = ((b + 1) * params.bin_width).min(record.ticks);
            record.appraisals[(end - 1) as usize]
        })
        .collect();

    Ok(ActivationTrace {
        bin_width: params.bin_width,
        columns: cmap.columns().to_vec(),
        cells,
        appraisal,
    })
}

fn split_columns(
    trace: &ActivationTrace,
) -> (Vec<(usize, &CondLiteral)>, Vec<(usize, ActionId)>, Vec<(usize, &CondLiteral)>) {
    let mut conds = Vec::new();
    let mut acts = Vec::new();
    let mut outs = Vec::new();
    for (i, (_, label)) in trace.columns.iter().enumerate() {
        match label {
            ColumnLabel::Condition { literal } => conds.push((i, literal)),
            ColumnLabel::Action { action } => acts.push((i, *action)),
            ColumnLabel::Outcome { literal } => outs.push((i, literal)),
        }
    }
    (conds, acts, outs)
}

/// Pass 1: mine (condition, action, outcome) chains.
///
/// A bin `b` is an antecedent when the condition is active at `b` and the
/// action is active at some `b'` with `1 ≤ b' − b ≤ delta_max`; it supports
/// the chain when additionally the outcome is active at some `b''` with
/// `1 ≤ b'' − b' ≤ delta_max`. Valence is read at the earliest witnessing
/// outcome bin. Chains with fewer than `support_min` supports are dropped.
pub fn mine_chains(trace: &ActivationTrace, params: &ReverseParams) -> Vec<CandidateChain> {
    debug_assert!(params.validate().is_ok());
    let (conds, acts, outs) = split_columns(trace);
    let n = trace.n_bins();
    let delta = params.delta_max;
    let mut chains = Vec::new();

    for &(ci, cond) in &conds {
        for &(ai, act) in &acts {
            for &(oi, out) in &outs {
                let mut support_bins = Vec::new();
                let mut antecedent_bins = Vec::new();
                let mut valence_sum = 0.0;
                for b in 0..n {
                    if !trace.cells[b as usize][ci] {
                        continue;
                    }
                    let a_hits: Vec<u64> = (b + 1..=(b + delta).min(n.saturating_sub(1)))
                        .filter(|&bp| trace.cells[bp as usize][ai])
                        .collect();
                    if a_hits.is_empty() {
                        continue;
                    }
                    antecedent_bins.push(b);
                    // Earliest action bin that an outcome follows decides the
                    // witnessing outcome bin.
                    let witness = a_hits.iter().find_map(|&bp| {
                        (bp + 1..=(bp + delta).min(n.saturating_sub(1)))
                            .find(|&bpp| trace.cells[bpp as usize][oi])
                    });
                    if let Some(bpp) = witness {
                        support_bins.push(b);
                        valence_sum += trace.appraisal[bpp as usize].valence;
                    }
                }
                let support = support_bins.len() as u64;
                if support < params.support_min {
                    continue;
                }
                chains.push(CandidateChain {
                    condition: cond.clone(),
                    action: act,
                    outcome: out.clone(),
                    support,
                    total: antecedent_bins.len() as u64,
                    mean_valence: valence_sum / support as f64,
                    support_bins,
                    antecedent_bins,
                });
            }
        }
    }
    chains
}

fn lit_key(l: &CondLiteral) -> (String, crate::rules::Predicate, u64) {
    (l.channel.clone(), l.predicate, l.threshold.to_bits())
}

fn canonical_triple(if_cond: &ConditionExpr, action: ActionId, then_cond: &ConditionExpr) -> String {
    serde_json::to_string(&(if_cond, action, then_cond)).expect("conditions serialize")
}

/// Content-addressed id for a mined rule: the same (IF, DO, THEN) triple maps
/// to the same id in every run, so patches from different nights line up.
fn night_rule_id(if_cond: &ConditionExpr, action: ActionId, then_cond: &ConditionExpr) -> String {
    let digest = fnv1a64(canonical_triple(if_cond, action, then_cond).as_bytes());
    format!("night.{digest:016x}")
}

/// Pass 2: convolve chains sharing (action, outcome) into conjunctive rules.
///
/// Counts are pooled as unions of the chains' bin sets. A condition literal
/// joins the conjunction when its chain supports at least `co_min` of the
/// pooled supporting bins; the best-covering literal always survives so no
/// rule comes out with an empty IF side. Valence pools as a support-weighted
/// mean. Ordering: descending confidence, then id.
pub fn convolve_chains(chains: &[CandidateChain], params: &ReverseParams) -> Vec<ExtractedRule> {
    debug_assert!(params.validate().is_ok());
    let mut groups: BTreeMap<_, Vec<&CandidateChain>> = BTreeMap::new();
    for ch in chains {
        groups.entry((ch.action, lit_key(&ch.outcome))).or_default().push(ch);
    }

    let mut rules = Vec::new();
    for ((action, _), group) in groups {
        let u_support: BTreeSet<u64> =
            group.iter().flat_map(|c| c.support_bins.iter().copied()).collect();
        let u_total: BTreeSet<u64> =
            group.iter().flat_map(|c| c.antecedent_bins.iter().copied()).collect();
        let support = u_support.len() as u64;
        let total = u_total.len() as u64;
        let p = support as f64 / total as f64;

        let weight: u64 = group.iter().map(|c| c.support).sum();
        let mean_valence = group
            .iter()
            .map(|c| c.mean_valence * c.support as f64)
            .sum::<f64>()
            / weight as f64;

        // Co-occurrence fraction per condition literal, highest first; ties
        // resolve on the literal itself so the pick is reproducible.
        let mut covering: Vec<(f64, &CandidateChain)> = group
            .iter()
            .map(|c| (c.support_bins.len() as f64 / support as f64, *c))
            .collect();
        covering.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("finite fractions")
                .then_with(|| lit_key(&a.1.condition).cmp(&lit_key(&b.1.condition)))
        });
        let mut kept = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, (frac, c)) in covering.iter().enumerate() {
            if i > 0 && *frac < params.co_min {
                break;
            }
            // One literal per (channel, direction); the better-covering one
            // got here first.
            if seen.insert((c.condition.channel.clone(), c.condition.predicate)) {
                kept.push(c.condition.clone());
            }
        }

        let if_cond = ConditionExpr::new(kept, None).expect("deduplicated literals");
        let outcome = group[0].outcome.clone();
        let then_cond = ConditionExpr::new(vec![outcome], None).expect("single literal");
        let confidence = (p * (1.0 + params.lambda_v * mean_valence)).clamp(0.0, 1.0);
        let window = params.delta_max * params.bin_width * 2;
        let rule = Rule {
            id: night_rule_id(&if_cond, action, &then_cond),
            if_cond,
            do_action: action,
            then_cond,
            confidence,
            window,
            priority: (confidence * params.priority_scale).round() as i64,
        };
        rules.push(ExtractedRule {
            rule,
            p,
            support,
            total,
            mean_valence,
            sources: group.into_iter().cloned().collect(),
        });
    }

    rules.sort_by(|a, b| {
        b.rule
            .confidence
            .partial_cmp(&a.rule.confidence)
            .expect("finite confidence")
            .then_with(|| a.rule.id.cmp(&b.rule.id))
    });
    rules
}

/// Pass 3: diff extracted rules against the robot's current rule set.
///
/// Extracted rules at or above the gate become adds when no current rule has
/// the same (IF, DO); when one does, its confidence and window are updated if
/// the confidence moved by more than `conf_eps` (the rule keeps its id,
/// priority, and THEN side). Night-sourced rules whose exact triple
/// re-extracts below `gate / 2` are removed; rules claimed by a modify (or
/// re-confirmation within `conf_eps`) and rules not carrying the night id
/// prefix are kept.
pub fn diff_rules(
    existing: &RuleSet,
    extracted: &[ExtractedRule],
    params: &ReverseParams,
    provenance: Provenance,
) -> RulePatch {
    debug_assert!(params.validate().is_ok());
    let mut patch = RulePatch::empty(provenance);

    // Strongest claims first, independent of the caller's ordering.
    let mut order: Vec<&ExtractedRule> = extracted.iter().collect();
    order.sort_by(|a, b| {
        b.rule
            .confidence
            .partial_cmp(&a.rule.confidence)
            .expect("finite confidence")
            .then_with(|| a.rule.id.cmp(&b.rule.id))
    });

    let mut claimed = BTreeSet::new();
    for ex in &order {
        if ex.rule.confidence < params.gate {
            continue;
        }
        let mut matches: Vec<&Rule> = existing
            .rules()
            .iter()
            .filter(|r| r.if_cond == ex.rule.if_cond && r.do_action == ex.rule.do_action)
            .collect();
        if matches.is_empty() {
            patch.adds.push(ex.rule.clone());
            continue;
        }
        matches.sort_by(|a, b| {
            let a_exact = a.then_cond == ex.rule.then_cond;
            let b_exact = b.then_cond == ex.rule.then_cond;
            b_exact
                .cmp(&a_exact)
                .then_with(|| b.confidence.partial_cmp(&a.confidence).expect("finite"))
                .then_with(|| a.id.cmp(&b.id))
        });
        let target = matches[0];
        if !claimed.insert(target.id.clone()) {
            continue;
        }
        if (ex.rule.confidence - target.confidence).abs() > params.conf_eps {
            let mut updated = target.clone();
            updated.confidence = ex.rule.confidence;
            updated.window = ex.rule.window;
            patch.modifies.push(ModifyEntry { id: target.id.clone(), rule: updated });
        }
    }

    // Removal pass: every extracted rule counts as re-extraction evidence,
    // gated or not.
    let mut re_extracted: BTreeMap<String, f64> = BTreeMap::new();
    for ex in extracted {
        let key = canonical_triple(&ex.rule.if_cond, ex.rule.do_action, &ex.rule.then_cond);
        let e = re_extracted.entry(key).or_insert(0.0);
        *e = e.max(ex.rule.confidence);
    }
    let mut removable: Vec<&Rule> = existing
        .rules()
        .iter()
        .filter(|r| r.id.starts_with("night.") && !claimed.contains(&r.id))
        .collect();
    removable.sort_by(|a, b| a.id.cmp(&b.id));
    for r in removable {
        let key = canonical_triple(&r.if_cond, r.do_action, &r.then_cond);
        let conf = re_extracted.get(&key).copied().unwrap_or(0.0);
        if conf < params.gate / 2.0 {
            patch.removes.push(r.id.clone());
        }
    }

    patch
}
