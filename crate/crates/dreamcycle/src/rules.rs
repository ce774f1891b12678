//! IF-DO-THEN control rules.
//!
//! A [`Rule`] pairs a conjunction of threshold literals (the IF), one action
//! (the DO), and an expected-outcome conjunction (the THEN) annotated with an
//! empirical confidence and a tick window within which the outcome is
//! expected. A [`RuleSet`] resolves conflicts with a strict total order, so
//! matching is deterministic and replayable. Night-phase output arrives as a
//! [`RulePatch`] of adds, modifies, and removes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionId;
use crate::experience::{ExperienceLog, SensorFrame};

/// Current `.rules` / `.patch` schema version.
pub const RULES_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Lt,
    Ge,
}

impl Predicate {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Predicate::Lt => value < threshold,
            Predicate::Ge => value >= threshold,
        }
    }
}

/// One threshold literal over a sensor channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondLiteral {
    pub channel: String,
    pub predicate: Predicate,
    pub threshold: f64,
}

impl CondLiteral {
    pub fn new(channel: impl Into<String>, predicate: Predicate, threshold: f64) -> Self {
        CondLiteral {
            channel: channel.into(),
            predicate,
            threshold,
        }
    }

    /// `self` entails `other` iff every value satisfying `self` also
    /// satisfies `other`. Only same-channel, same-direction literals can
    /// entail each other: `ge` entails `ge` with a lower-or-equal threshold,
    /// `lt` entails `lt` with a higher-or-equal threshold.
    pub fn entails(&self, other: &CondLiteral) -> bool {
        self.channel == other.channel
            && self.predicate == other.predicate
            && match self.predicate {
                Predicate::Ge => self.threshold >= other.threshold,
                Predicate::Lt => self.threshold <= other.threshold,
            }
    }
}

/// Threshold literal over the battery level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryCond {
    pub predicate: Predicate,
    pub threshold: f64,
}

/// Conjunction of channel literals plus an optional battery literal.
///
/// Canonical form: literals sorted by `(channel, predicate)`, at most one
/// literal per such pair, all thresholds in `[0, 1]`. The empty conjunction
/// is always true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionExpr {
    pub literals: Vec<CondLiteral>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<BatteryCond>,
}

impl ConditionExpr {
    /// The always-true condition.
    pub fn always() -> Self {
        ConditionExpr {
            literals: Vec::new(),
            battery: None,
        }
    }

    pub fn new(
        mut literals: Vec<CondLiteral>,
        battery: Option<BatteryCond>,
    ) -> Result<Self, RuleError> {
        literals.sort_by(|a, b| (&a.channel, a.predicate).cmp(&(&b.channel, b.predicate)));
        for pair in literals.windows(2) {
            if pair[0].channel == pair[1].channel && pair[0].predicate == pair[1].predicate {
                return Err(RuleError::InvalidRule(format!(
                    "two {:?} literals on channel {:?}",
                    pair[0].predicate, pair[0].channel
                )));
            }
        }
        for lit in &literals {
            if !(0.0..=1.0).contains(&lit.threshold) || !lit.threshold.is_finite() {
                return Err(RuleError::InvalidRule(format!(
                    "threshold {} on channel {:?} outside [0,1]",
                    lit.threshold, lit.channel
                )));
            }
        }
        if let Some(b) = &battery {
            if !(0.0..=1.0).contains(&b.threshold) || !b.threshold.is_finite() {
                return Err(RuleError::InvalidRule(format!(
                    "battery threshold {} outside [0,1]",
                    b.threshold
                )));
            }
        }
        Ok(ConditionExpr { literals, battery })
    }

    /// Single-literal shorthand.
    pub fn single(channel: impl Into<String>, predicate: Predicate, threshold: f64) -> Self {
        ConditionExpr::new(vec![CondLiteral::new(channel, predicate, threshold)], None)
            .expect("single literal in range")
    }

    /// Literal count including the battery literal; the specificity measure
    /// used for conflict resolution.
    pub fn literal_count(&self) -> usize {
        self.literals.len() + usize::from(self.battery.is_some())
    }

    /// Evaluate against a frame. Errors if a referenced channel is absent.
    pub fn satisfied(&self, frame: &SensorFrame) -> Result<bool, RuleError> {
        for lit in &self.literals {
            let value = frame
                .value(&lit.channel)
                .ok_or_else(|| RuleError::UnknownChannel(lit.channel.clone()))?;
            if !lit.predicate.holds(value, lit.threshold) {
                return Ok(false);
            }
        }
        if let Some(b) = &self.battery {
            if !b.predicate.holds(frame.battery, b.threshold) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `self` implies `other` iff every literal of `other` is entailed by
    /// some literal of `self` (conjunction-wise implication).
    pub fn implies(&self, other: &ConditionExpr) -> bool {
        let lits_ok = other
            .literals
            .iter()
            .all(|o| self.literals.iter().any(|s| s.entails(o)));
        let battery_ok = match (&self.battery, &other.battery) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(s), Some(o)) => {
                s.predicate == o.predicate
                    && match s.predicate {
                        Predicate::Ge => s.threshold >= o.threshold,
                        Predicate::Lt => s.threshold <= o.threshold,
                    }
            }
        };
        lits_ok && battery_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    #[serde(rename = "if")]
    pub if_cond: ConditionExpr,
    #[serde(rename = "do")]
    pub do_action: ActionId,
    #[serde(rename = "then")]
    pub then_cond: ConditionExpr,
    pub confidence: f64,
    /// Ticks after firing within which `then_cond` is expected to hold.
    pub window: u64,
    pub priority: i64,
}

impl Rule {
    pub fn validate(&self) -> Result<(), RuleError> {
        if self.id.is_empty() {
            return Err(RuleError::InvalidRule("empty rule id".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) || !self.confidence.is_finite() {
            return Err(RuleError::InvalidRule(format!(
                "rule {:?}: confidence {} outside [0,1]",
                self.id, self.confidence
            )));
        }
        if self.window < 1 {
            return Err(RuleError::InvalidRule(format!(
                "rule {:?}: window must be at least 1",
                self.id
            )));
        }
        Ok(())
    }

    /// Hand-authored rules carry the `user.` prefix and are never removed by
    /// night-phase patches.
    pub fn is_user_rule(&self) -> bool {
        self.id.starts_with("user.")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("unknown channel {0:?} referenced by a rule")]
    UnknownChannel(String),
    #[error("unknown rule id {0:?}")]
    UnknownRuleId(String),
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error("patch conflict: {0}")]
    PatchConflict(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("malformed rules data: {0}")]
    MalformedRules(String),
}

/// Ordered rule collection with a fallback action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    schema: u32,
    pub default_action: ActionId,
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(default_action: ActionId) -> Self {
        RuleSet {
            schema: RULES_SCHEMA,
            default_action,
            rules: Vec::new(),
        }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn add(&mut self, rule: Rule) -> Result<(), RuleError> {
        rule.validate()?;
        if self.get(&rule.id).is_some() {
            return Err(RuleError::DuplicateRuleId(rule.id));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Result<Rule, RuleError> {
        let i = self
            .rules
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| RuleError::UnknownRuleId(id.to_string()))?;
        Ok(self.rules.remove(i))
    }

    /// Canonical JSON bytes; equal sets serialize identically.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("rule set is serializable");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, RuleError> {
        let rs: RuleSet = serde_json::from_slice(bytes)
            .map_err(|e| RuleError::MalformedRules(e.to_string()))?;
        if rs.schema != RULES_SCHEMA {
            return Err(RuleError::MalformedRules(format!(
                "unsupported schema version {}",
                rs.schema
            )));
        }
        for (i, r) in rs.rules.iter().enumerate() {
            r.validate()?;
            if rs.rules[..i].iter().any(|p| p.id == r.id) {
                return Err(RuleError::DuplicateRuleId(r.id.clone()));
            }
        }
        Ok(rs)
    }
}

/// Provenance attached to a patch: which night run produced it and the mean
/// emotional appraisal of that run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub mean_valence: f64,
    pub mean_arousal: f64,
}

impl Provenance {
    pub fn empty(run_id: impl Into<String>) -> Self {
        Provenance {
            run_id: run_id.into(),
            mean_valence: 0.0,
            mean_arousal: 0.0,
        }
    }
}

/// A modify entry: replace the rule currently stored under `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifyEntry {
    pub id: String,
    pub rule: Rule,
}

/// Night-phase output: deltas against a robot's rule set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulePatch {
    schema: u32,
    pub provenance: Provenance,
    pub adds: Vec<Rule>,
    pub modifies: Vec<ModifyEntry>,
    pub removes: Vec<String>,
}

impl RulePatch {
    pub fn empty(provenance: Provenance) -> Self {
        RulePatch {
            schema: RULES_SCHEMA,
            provenance,
            adds: Vec::new(),
            modifies: Vec::new(),
            removes: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.adds.is_empty() && self.modifies.is_empty() && self.removes.is_empty()
    }

    /// No id may appear in two sections, and a modify entry must keep its id.
    pub fn validate(&self) -> Result<(), RuleError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut claim = |id: &str| -> Result<(), RuleError> {
            if !seen.insert(id.to_string()) {
                return Err(RuleError::PatchConflict(format!(
                    "id {id:?} appears in two patch sections"
                )));
            }
            Ok(())
        };
        for r in &self.adds {
            r.validate()?;
            claim(&r.id)?;
        }
        for m in &self.modifies {
            m.rule.validate()?;
            if m.rule.id != m.id {
                return Err(RuleError::PatchConflict(format!(
                    "modify entry {:?} carries rule id {:?}",
                    m.id, m.rule.id
                )));
            }
            claim(&m.id)?;
        }
        for id in &self.removes {
            claim(id)?;
        }
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("patch is serializable");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, RuleError> {
        let patch: RulePatch = serde_json::from_slice(bytes)
            .map_err(|e| RuleError::MalformedRules(e.to_string()))?;
        if patch.schema != RULES_SCHEMA {
            return Err(RuleError::MalformedRules(format!(
                "unsupported schema version {}",
                patch.schema
            )));
        }
        patch.validate()?;
        Ok(patch)
    }
}

/// Pick the action for a frame: among satisfied rules the winner is the one
/// with the highest priority, then the most IF literals, then the
/// lexicographically smallest id. No satisfied rule → the default action.
pub fn match_rules<'a>(
    rs: &'a RuleSet,
    frame: &SensorFrame,
) -> Result<(ActionId, Option<&'a str>), RuleError> {
    let mut winner: Option<&Rule> = None;
    for rule in &rs.rules {
        if !rule.if_cond.satisfied(frame)? {
            continue;
        }
        let better = match winner {
            None => true,
            Some(w) => {
                let key = |r: &Rule| (r.priority, r.if_cond.literal_count());
                // Reverse id ordering: smaller id wins.
                (key(rule), &w.id) > (key(w), &rule.id)
            }
        };
        if better {
            winner = Some(rule);
        }
    }
    Ok(match winner {
        Some(r) => (r.do_action, Some(r.id.as_str())),
        None => (rs.default_action, None),
    })
}

/// Apply a patch: removes, then modifies, then adds. Pure; the input set is
/// untouched.
pub fn apply_patch(rs: &RuleSet, patch: &RulePatch) -> Result<RuleSet, RuleError> {
    patch.validate()?;
    let mut out = rs.clone();
    for id in &patch.removes {
        out.remove(id)?;
    }
    for m in &patch.modifies {
        let i = out
            .rules
            .iter()
            .position(|r| r.id == m.id)
            .ok_or_else(|| RuleError::UnknownRuleId(m.id.clone()))?;
        out.rules[i] = m.rule.clone();
    }
    for r in &patch.adds {
        out.add(r.clone())?;
    }
    Ok(out)
}

/// All chain links `(a, b)` where rule `a`'s expected outcome implies rule
/// `b`'s trigger; the THEN of one rule doubling as the IF of the next.
pub fn check_chaining(rs: &RuleSet) -> Vec<(String, String)> {
    let mut links = Vec::new();
    for a in &rs.rules {
        for b in &rs.rules {
            if a.then_cond.implies(&b.if_cond) {
                links.push((a.id.clone(), b.id.clone()));
            }
        }
    }
    links
}

/// How often a rule fired and how often its expectation held.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ExpectationStats {
    pub fired: u64,
    pub satisfied: u64,
}

/// Replay a log against the rule set and count, per rule, the ticks where it
/// won the match and its action was the one actually taken ("fired"), and
/// how many firings saw `then_cond` hold at some tick in `(t, t+window]`.
/// Windows running past the end of the log are truncated but still counted.
pub fn evaluate_expectations(
    rs: &RuleSet,
    log: &ExperienceLog,
) -> Result<BTreeMap<String, ExpectationStats>, RuleError> {
    let mut stats: BTreeMap<String, ExpectationStats> = BTreeMap::new();
    for rule in &rs.rules {
        stats.insert(rule.id.clone(), ExpectationStats::default());
    }
    let rows = log.rows();
    for (i, row) in rows.iter().enumerate() {
        let frame = log.frame_at(i);
        let (action, Some(rule_id)) = match_rules(rs, &frame)? else {
            continue;
        };
        if action != row.action {
            continue;
        }
        let rule = rs.get(rule_id).expect("winner comes from this set");
        let entry = stats.get_mut(rule_id).expect("stats seeded for every rule");
        entry.fired += 1;
        let horizon = row.tick + rule.window;
        let satisfied = rows[i + 1..]
            .iter()
            .enumerate()
            .take_while(|(_, r)| r.tick <= horizon)
            .any(|(j, _)| {
                rule.then_cond
                    .satisfied(&log.frame_at(i + 1 + j))
                    .unwrap_or(false)
            });
        if satisfied {
            entry.satisfied += 1;
        }
    }
    Ok(stats)
}
