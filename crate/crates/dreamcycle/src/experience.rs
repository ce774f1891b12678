//! Append-only experience logs.
//!
//! An [`ExperienceLog`] is the robot's raw memory of one episode: per tick,
//! the sensor frame it saw, the single action it took, and any events the
//! world emitted (pain, charge boundaries, episode end). Ticks are strictly
//! monotonic and the channel schema is fixed for the lifetime of the log.
//!
//! On disk a log is UTF-8 JSONL (`.explog`): one header object, then one
//! object per tick. Serialization is canonical: equal logs produce
//! byte-identical files, which is what makes "replay the same night twice,
//! get the same patch" checkable at the byte level.
//!
//! ```text
//! {"schema":1,"robot_id":"r1","episode_id":"ep0","channels":["prox_front"],"rng_seed":7}
//! {"t":0,"s":[0.5],"b":1.0,"a":"forward","e":[]}
//! {"t":1,"s":[0.25],"b":0.998,"a":"stay","e":[{"kind":"pain"}]}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionId;

/// Current `.explog` schema version.
pub const LOG_SCHEMA: u32 = 1;

/// What the robot senses in one tick: normalized channel values plus battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub tick: u64,
    /// `(channel_id, value)` pairs in schema order; values are normalized to
    /// `[0, 1]` by the sensor layer.
    pub channels: Vec<(String, f64)>,
    /// Battery charge in `[0, 1]`.
    pub battery: f64,
}

impl SensorFrame {
    /// Value for `channel_id`, if the frame carries it.
    pub fn value(&self, channel_id: &str) -> Option<f64> {
        self.channels
            .iter()
            .find(|(id, _)| id == channel_id)
            .map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pain,
    ChargeStart,
    ChargeStop,
    EpisodeEnd,
}

/// Something that happened at a tick, beyond the sensor values themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub tick: u64,
    pub kind: EventKind,
    /// Channel the event is attributed to, when one makes sense.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
}

impl EventRecord {
    pub fn new(tick: u64, kind: EventKind) -> Self {
        EventRecord {
            tick,
            kind,
            channel: None,
        }
    }
}

/// One recorded tick: frame values (schema order), battery, action, events.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub tick: u64,
    pub values: Vec<f64>,
    pub battery: f64,
    pub action: ActionId,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExperienceError {
    #[error("non-monotonic tick {tick} (last recorded tick is {last})")]
    NonMonotonicTick { tick: u64, last: u64 },
    #[error("channel mismatch: log schema is {expected:?}, frame has {got:?}")]
    ChannelMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("event tick {event_tick} does not match frame tick {frame_tick}")]
    EventTickMismatch { frame_tick: u64, event_tick: u64 },
    #[error("empty channel schema")]
    EmptySchema,
    #[error("duplicate channel id {0:?} in schema")]
    DuplicateChannel(String),
    #[error("malformed log at byte {offset}: {reason}")]
    MalformedLog { offset: usize, reason: String },
}

/// A validation finding from [`ExperienceLog::validate`]; an empty list means
/// the log satisfies every invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NonMonotonicTick { tick: u64, prev: u64 },
    ValueOutOfRange { tick: u64, channel: String, value: f64 },
    BatteryOutOfRange { tick: u64, value: f64 },
    EventTickMismatch { row_tick: u64, event_tick: u64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonMonotonicTick { tick, prev } => {
                write!(f, "tick {tick} does not increase over {prev}")
            }
            Violation::ValueOutOfRange { tick, channel, value } => {
                write!(f, "tick {tick}: channel {channel} value {value} outside [0,1]")
            }
            Violation::BatteryOutOfRange { tick, value } => {
                write!(f, "tick {tick}: battery {value} outside [0,1]")
            }
            Violation::EventTickMismatch { row_tick, event_tick } => {
                write!(f, "event tick {event_tick} recorded on row {row_tick}")
            }
        }
    }
}

/// The complete experience of one episode for one robot.
///
/// Appending validates before mutating, so a failed [`record_tick`] leaves
/// the log exactly as it was.
///
/// [`record_tick`]: ExperienceLog::record_tick
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceLog {
    pub robot_id: String,
    pub episode_id: String,
    pub rng_seed: u64,
    /// Channel schema; every frame must carry exactly these ids in order.
    channels: Vec<String>,
    #[serde(with = "rows_serde")]
    rows: Vec<TickRow>,
}

impl ExperienceLog {
    pub fn new(
        robot_id: impl Into<String>,
        episode_id: impl Into<String>,
        channels: Vec<String>,
        rng_seed: u64,
    ) -> Result<Self, ExperienceError> {
        if channels.is_empty() {
            return Err(ExperienceError::EmptySchema);
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(ExperienceError::DuplicateChannel(c.clone()));
            }
        }
        Ok(ExperienceLog {
            robot_id: robot_id.into(),
            episode_id: episode_id.into(),
            rng_seed,
            channels,
            rows: Vec::new(),
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn rows(&self) -> &[TickRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last_tick(&self) -> Option<u64> {
        self.rows.last().map(|r| r.tick)
    }

    /// Append one tick. The frame's channel ids must match the schema exactly
    /// (same ids, same order), its tick must be strictly greater than the
    /// last recorded one, and every event must be stamped with the frame's
    /// tick. Nothing is mutated when an error is returned.
    pub fn record_tick(
        &mut self,
        frame: &SensorFrame,
        action: ActionId,
        events: &[EventRecord],
    ) -> Result<(), ExperienceError> {
        if let Some(last) = self.last_tick() {
            if frame.tick <= last {
                return Err(ExperienceError::NonMonotonicTick {
                    tick: frame.tick,
                    last,
                });
            }
        }
        if frame.channels.len() != self.channels.len()
            || frame
                .channels
                .iter()
                .zip(&self.channels)
                .any(|((id, _), want)| id != want)
        {
            return Err(ExperienceError::ChannelMismatch {
                expected: self.channels.clone(),
                got: frame.channels.iter().map(|(id, _)| id.clone()).collect(),
            });
        }
        if let Some(ev) = events.iter().find(|e| e.tick != frame.tick) {
            return Err(ExperienceError::EventTickMismatch {
                frame_tick: frame.tick,
                event_tick: ev.tick,
            });
        }
        self.rows.push(TickRow {
            tick: frame.tick,
            values: frame.channels.iter().map(|(_, v)| *v).collect(),
            battery: frame.battery,
            action,
            events: events.to_vec(),
        });
        Ok(())
    }

    /// Rebuild the full [`SensorFrame`] for row `i`.
    pub fn frame_at(&self, i: usize) -> SensorFrame {
        let row = &self.rows[i];
        SensorFrame {
            tick: row.tick,
            channels: self
                .channels
                .iter()
                .cloned()
                .zip(row.values.iter().copied())
                .collect(),
            battery: row.battery,
        }
    }

    /// All events across the log, in recording order.
    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.rows.iter().flat_map(|r| r.events.iter())
    }

    /// Count of events of `kind`.
    pub fn count_events(&self, kind: EventKind) -> usize {
        self.events().filter(|e| e.kind == kind).count()
    }

    /// Canonical `.explog` bytes: header line plus one line per tick.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.rows.len() * 64);
        let header = HeaderLine {
            schema: LOG_SCHEMA,
            robot_id: &self.robot_id,
            episode_id: &self.episode_id,
            channels: &self.channels,
            rng_seed: self.rng_seed,
        };
        out.extend_from_slice(serde_json::to_string(&header).expect("header is serializable").as_bytes());
        out.push(b'\n');
        for row in &self.rows {
            let line = RowLine {
                t: row.tick,
                s: &row.values,
                b: row.battery,
                a: row.action,
                e: row.events.iter().map(RowEvent::from).collect(),
            };
            out.extend_from_slice(serde_json::to_string(&line).expect("row is serializable").as_bytes());
            out.push(b'\n');
        }
        out
    }

    /// Parse `.explog` bytes. Errors carry the byte offset of the offending
    /// line so a truncated or hand-edited file points at itself.
    pub fn deserialize(bytes: &[u8]) -> Result<Self, ExperienceError> {
        let malformed = |offset: usize, reason: String| ExperienceError::MalformedLog { offset, reason };

        let mut lines = Vec::new();
        let mut start = 0usize;
        for (i, &b) in bytes.iter().enumerate() {
            if b == b'\n' {
                lines.push((start, &bytes[start..i]));
                start = i + 1;
            }
        }
        if start < bytes.len() {
            lines.push((start, &bytes[start..]));
        }
        let mut lines = lines
            .into_iter()
            .filter(|(_, l)| !l.iter().all(|b| b.is_ascii_whitespace()));

        let (header_off, header_bytes) = lines
            .next()
            .ok_or_else(|| malformed(0, "empty log".into()))?;
        let header_text = std::str::from_utf8(header_bytes)
            .map_err(|e| malformed(header_off, format!("invalid utf-8: {e}")))?;
        let header: OwnedHeaderLine = serde_json::from_str(header_text)
            .map_err(|e| malformed(header_off, format!("bad header: {e}")))?;
        if header.schema != LOG_SCHEMA {
            return Err(malformed(
                header_off,
                format!("unsupported schema version {}", header.schema),
            ));
        }

        let mut log = ExperienceLog::new(header.robot_id, header.episode_id, header.channels, header.rng_seed)
            .map_err(|e| malformed(header_off, e.to_string()))?;

        for (off, line) in lines {
            let text = std::str::from_utf8(line)
                .map_err(|e| malformed(off, format!("invalid utf-8: {e}")))?;
            let row: OwnedRowLine =
                serde_json::from_str(text).map_err(|e| malformed(off, format!("bad row: {e}")))?;
            if row.s.len() != log.channels.len() {
                return Err(malformed(
                    off,
                    format!(
                        "row has {} values but schema has {} channels",
                        row.s.len(),
                        log.channels.len()
                    ),
                ));
            }
            if let Some(last) = log.last_tick() {
                if row.t <= last {
                    return Err(malformed(
                        off,
                        format!("tick {} does not increase over {}", row.t, last),
                    ));
                }
            }
            log.rows.push(TickRow {
                tick: row.t,
                values: row.s,
                battery: row.b,
                action: row.a,
                events: row
                    .e
                    .into_iter()
                    .map(|ev| EventRecord {
                        tick: row.t,
                        kind: ev.kind,
                        channel: ev.channel,
                    })
                    .collect(),
            });
        }
        Ok(log)
    }

    /// Check every log invariant and report all findings (empty = valid).
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut prev: Option<u64> = None;
        for row in &self.rows {
            if let Some(p) = prev {
                if row.tick <= p {
                    out.push(Violation::NonMonotonicTick { tick: row.tick, prev: p });
                }
            }
            prev = Some(row.tick);
            for (ch, &v) in self.channels.iter().zip(&row.values) {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    out.push(Violation::ValueOutOfRange {
                        tick: row.tick,
                        channel: ch.clone(),
                        value: v,
                    });
                }
            }
            if !row.battery.is_finite() || !(0.0..=1.0).contains(&row.battery) {
                out.push(Violation::BatteryOutOfRange {
                    tick: row.tick,
                    value: row.battery,
                });
            }
            for ev in &row.events {
                if ev.tick != row.tick {
                    out.push(Violation::EventTickMismatch {
                        row_tick: row.tick,
                        event_tick: ev.tick,
                    });
                }
            }
        }
        out
    }
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    schema: u32,
    robot_id: &'a str,
    episode_id: &'a str,
    channels: &'a [String],
    rng_seed: u64,
}

#[derive(Deserialize)]
struct OwnedHeaderLine {
    schema: u32,
    robot_id: String,
    episode_id: String,
    channels: Vec<String>,
    rng_seed: u64,
}

#[derive(Serialize)]
struct RowLine<'a> {
    t: u64,
    s: &'a [f64],
    b: f64,
    a: ActionId,
    e: Vec<RowEvent>,
}

#[derive(Deserialize)]
struct OwnedRowLine {
    t: u64,
    s: Vec<f64>,
    #[serde(default = "default_battery")]
    b: f64,
    a: ActionId,
    #[serde(default)]
    e: Vec<RowEvent>,
}

fn default_battery() -> f64 {
    1.0
}

/// Event as stored on a row line; the tick is the row's `t`.
#[derive(Serialize, Deserialize)]
struct RowEvent {
    kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel: Option<String>,
}

impl From<&EventRecord> for RowEvent {
    fn from(ev: &EventRecord) -> Self {
        RowEvent {
            kind: ev.kind,
            channel: ev.channel.clone(),
        }
    }
}

/// Serde for the in-memory row list (used by the wire representation of a
/// log, e.g. inside protocol messages); the JSONL file format above is
/// produced by [`ExperienceLog::serialize`] instead.
mod rows_serde {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct WireRow {
        t: u64,
        s: Vec<f64>,
        b: f64,
        a: ActionId,
        #[serde(default)]
        e: Vec<RowEvent>,
    }

    pub fn serialize<S: Serializer>(rows: &[TickRow], ser: S) -> Result<S::Ok, S::Error> {
        let wire: Vec<WireRow> = rows
            .iter()
            .map(|r| WireRow {
                t: r.tick,
                s: r.values.clone(),
                b: r.battery,
                a: r.action,
                e: r.events.iter().map(RowEvent::from).collect(),
            })
            .collect();
        wire.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<TickRow>, D::Error> {
        let wire = Vec::<WireRow>::deserialize(de)?;
        let mut rows = Vec::with_capacity(wire.len());
        let mut prev: Option<u64> = None;
        for w in wire {
            if let Some(p) = prev {
                if w.t <= p {
                    return Err(D::Error::custom(format!(
                        "tick {} does not increase over {}",
                        w.t, p
                    )));
                }
            }
            prev = Some(w.t);
            rows.push(TickRow {
                tick: w.t,
                values: w.s,
                battery: w.b,
                action: w.a,
                events: w
                    .e
                    .into_iter()
                    .map(|ev| EventRecord {
                        tick: w.t,
                        kind: ev.kind,
                        channel: ev.channel,
                    })
                    .collect(),
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(tick: u64, vals: &[(&str, f64)], battery: f64) -> SensorFrame {
        SensorFrame {
            tick,
            channels: vals.iter().map(|(id, v)| (id.to_string(), *v)).collect(),
            battery,
        }
    }

    fn two_channel_log() -> ExperienceLog {
        ExperienceLog::new("r1", "ep0", vec!["a".into(), "b".into()], 7).unwrap()
    }

    #[test]
    fn appends_hundred_monotonic_frames_cleanly() {
        let mut log = two_channel_log();
        for t in 0..100 {
            let f = frame(t, &[("a", 0.25), ("b", 0.75)], 1.0 - t as f64 * 0.001);
            log.record_tick(&f, ActionId::Forward, &[]).unwrap();
        }
        assert_eq!(log.len(), 100);
        assert_eq!(log.last_tick(), Some(99));
        assert!(log.validate().is_empty(), "a cleanly built log has no violations");
    }

    #[test]
    fn rejects_non_monotonic_tick_and_leaves_log_unchanged() {
        let mut log = two_channel_log();
        log.record_tick(&frame(5, &[("a", 0.1), ("b", 0.2)], 1.0), ActionId::Stay, &[])
            .unwrap();
        let before = log.clone();
        let err = log
            .record_tick(&frame(5, &[("a", 0.1), ("b", 0.2)], 1.0), ActionId::Stay, &[])
            .unwrap_err();
        assert_eq!(err, ExperienceError::NonMonotonicTick { tick: 5, last: 5 });
        assert_eq!(log, before);
    }

    #[test]
    fn rejects_channel_schema_mismatch() {
        let mut log = two_channel_log();
        // Same ids, wrong order: order is part of the schema.
        let err = log
            .record_tick(&frame(0, &[("b", 0.2), ("a", 0.1)], 1.0), ActionId::Stay, &[])
            .unwrap_err();
        assert!(matches!(err, ExperienceError::ChannelMismatch { .. }));
    }

    #[test]
    fn rejects_event_with_foreign_tick() {
        let mut log = two_channel_log();
        let ev = EventRecord::new(3, EventKind::Pain);
        let err = log
            .record_tick(&frame(0, &[("a", 0.1), ("b", 0.2)], 1.0), ActionId::Stay, &[ev])
            .unwrap_err();
        assert_eq!(
            err,
            ExperienceError::EventTickMismatch { frame_tick: 0, event_tick: 3 }
        );
    }

    #[test]
    fn round_trips_three_frames_byte_identically() {
        let mut log = two_channel_log();
        log.record_tick(&frame(0, &[("a", 0.5), ("b", 0.0)], 1.0), ActionId::Forward, &[])
            .unwrap();
        log.record_tick(
            &frame(1, &[("a", 0.25), ("b", 1.0)], 0.998),
            ActionId::TurnLeft,
            &[EventRecord::new(1, EventKind::Pain)],
        )
        .unwrap();
        log.record_tick(
            &frame(4, &[("a", 0.125), ("b", 0.375)], 0.996),
            ActionId::Stay,
            &[
                EventRecord::new(4, EventKind::ChargeStart),
                EventRecord {
                    tick: 4,
                    kind: EventKind::ChargeStop,
                    channel: Some("b".into()),
                },
            ],
        )
        .unwrap();

        let bytes = log.serialize();
        let parsed = ExperienceLog::deserialize(&bytes).unwrap();
        assert_eq!(parsed, log);
        assert_eq!(parsed.serialize(), bytes, "serialization must be canonical");
    }

    #[test]
    fn truncated_bytes_report_offset_of_bad_line() {
        let mut log = two_channel_log();
        for t in 0..3 {
            log.record_tick(&frame(t, &[("a", 0.1), ("b", 0.2)], 1.0), ActionId::Forward, &[])
                .unwrap();
        }
        let bytes = log.serialize();
        // Chop the file in the middle of the last row.
        let last_line_start = bytes[..bytes.len() - 2]
            .iter()
            .rposition(|&b| b == b'\n')
            .unwrap()
            + 1;
        let cut = &bytes[..bytes.len() - 10];
        match ExperienceLog::deserialize(cut) {
            Err(ExperienceError::MalformedLog { offset, .. }) => {
                assert_eq!(offset, last_line_start)
            }
            other => panic!("expected MalformedLog, got {other:?}"),
        }
    }

    #[test]
    fn empty_bytes_are_malformed_at_offset_zero() {
        match ExperienceLog::deserialize(b"") {
            Err(ExperienceError::MalformedLog { offset: 0, .. }) => {}
            other => panic!("expected MalformedLog at 0, got {other:?}"),
        }
    }

    #[test]
    fn validator_flags_out_of_range_values_in_foreign_files() {
        // A file that parses but breaks the value-range invariant: the parser
        // accepts it, the validator reports it.
        let text = concat!(
            "{\"schema\":1,\"robot_id\":\"r\",\"episode_id\":\"e\",\"channels\":[\"a\"],\"rng_seed\":0}\n",
            "{\"t\":0,\"s\":[1.5],\"b\":2.0,\"a\":\"stay\",\"e\":[]}\n",
        );
        let log = ExperienceLog::deserialize(text.as_bytes()).unwrap();
        let violations = log.validate();
        assert_eq!(violations.len(), 2);
        assert!(matches!(violations[0], Violation::ValueOutOfRange { tick: 0, .. }));
        assert!(matches!(violations[1], Violation::BatteryOutOfRange { tick: 0, .. }));
    }

    #[test]
    fn rejects_duplicate_schema_channels_and_empty_schema() {
        assert_eq!(
            ExperienceLog::new("r", "e", vec![], 0).unwrap_err(),
            ExperienceError::EmptySchema
        );
        assert_eq!(
            ExperienceLog::new("r", "e", vec!["a".into(), "a".into()], 0).unwrap_err(),
            ExperienceError::DuplicateChannel("a".into())
        );
    }

    #[test]
    fn missing_battery_key_defaults_to_full() {
        let text = concat!(
            "{\"schema\":1,\"robot_id\":\"r\",\"episode_id\":\"e\",\"channels\":[\"a\"],\"rng_seed\":0}\n",
            "{\"t\":0,\"s\":[0.5],\"a\":\"stay\",\"e\":[]}\n",
        );
        let log = ExperienceLog::deserialize(text.as_bytes()).unwrap();
        assert_eq!(log.rows()[0].battery, 1.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_log() -> impl Strategy<Value = ExperienceLog> {
            let channels = prop::collection::vec("[a-z]{1,6}", 1..4).prop_filter(
                "unique channel ids",
                |cs| {
                    let mut seen = std::collections::BTreeSet::new();
                    cs.iter().all(|c| seen.insert(c.clone()))
                },
            );
            (channels, 0u64..1000, prop::collection::vec((1u64..5, 0.0f64..=1.0), 0..30)).prop_map(
                |(channels, seed, steps)| {
                    let mut log =
                        ExperienceLog::new("robot", "episode", channels.clone(), seed).unwrap();
                    let mut tick = 0u64;
                    for (i, (dt, v)) in steps.into_iter().enumerate() {
                        tick += dt;
                        let f = SensorFrame {
                            tick,
                            channels: channels.iter().map(|c| (c.clone(), v)).collect(),
                            battery: 1.0 - (i as f64) * 0.01,
                        };
                        let events = if i % 3 == 0 {
                            vec![EventRecord::new(tick, EventKind::Pain)]
                        } else {
                            vec![]
                        };
                        log.record_tick(&f, ActionId::ALL[i % 4], &events).unwrap();
                    }
                    log
                },
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn serialization_round_trips_and_is_stable(log in arb_log()) {
                let bytes = log.serialize();
                let parsed = ExperienceLog::deserialize(&bytes).unwrap();
                prop_assert_eq!(&parsed, &log);
                prop_assert_eq!(parsed.serialize(), bytes);
            }

            #[test]
            fn wire_serde_round_trips(log in arb_log()) {
                let json = serde_json::to_string(&log).unwrap();
                let parsed: ExperienceLog = serde_json::from_str(&json).unwrap();
                prop_assert_eq!(parsed, log);
            }
        }
    }
}
