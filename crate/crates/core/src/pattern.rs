//! Vibration patterns and their millisecond burst schedules.
//!
//! A pattern is an ordered list of burst groups, written in its canonical
//! text form as the group sizes joined by single spaces: `"1 3"` is one
//! burst, a long pause, then three bursts. Rendering a pattern against a
//! [`TimingParams`] produces a [`VibrationTimeline`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MAX_GROUPS: usize = 4;
pub const MAX_BURSTS_PER_GROUP: u8 = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("pattern is empty")]
    EmptyPattern,
    #[error("invalid token {0:?} in pattern")]
    InvalidToken(String),
    #[error("pattern out of range: {0}")]
    OutOfRange(String),
}

/// A vibration pattern: between 1 and 4 groups of 1 to 9 bursts each.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternSpec {
    groups: Vec<u8>,
}

impl PatternSpec {
    pub fn new(groups: Vec<u8>) -> Result<Self, PatternError> {
        if groups.is_empty() {
            return Err(PatternError::EmptyPattern);
        }
        if groups.len() > MAX_GROUPS {
            return Err(PatternError::OutOfRange(format!(
                "{} groups, at most {MAX_GROUPS} allowed",
                groups.len()
            )));
        }
        if let Some(bad) = groups
            .iter()
            .find(|&&c| c == 0 || c > MAX_BURSTS_PER_GROUP)
        {
            return Err(PatternError::OutOfRange(format!(
                "group of {bad} bursts, must be 1..={MAX_BURSTS_PER_GROUP}"
            )));
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[u8] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn burst_count(&self) -> usize {
        self.groups.iter().map(|&c| c as usize).sum()
    }

    /// Canonical text form, e.g. `"1 3"`.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, count) in self.groups.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{count}")?;
        }
        Ok(())
    }
}

/// Parses whitespace-separated burst counts. Any run of whitespace is
/// accepted as a separator; [`PatternSpec::canonical`] normalizes it.
pub fn parse_pattern(text: &str) -> Result<PatternSpec, PatternError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(PatternError::EmptyPattern);
    }
    let mut groups = Vec::with_capacity(tokens.len());
    for token in tokens {
        if !token.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PatternError::InvalidToken(token.to_string()));
        }
        // all-digit tokens only fail to parse on overflow
        let count: u64 = token
            .parse()
            .map_err(|_| PatternError::OutOfRange(format!("group of {token} bursts")))?;
        let count = u8::try_from(count)
            .map_err(|_| PatternError::OutOfRange(format!("group of {token} bursts")))?;
        groups.push(count);
    }
    PatternSpec::new(groups)
}

impl FromStr for PatternSpec {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pattern(s)
    }
}

impl Serialize for PatternSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PatternSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_pattern(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid timing: {0}")]
pub struct TimingError(String);

/// Burst and pause lengths in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTiming", into = "RawTiming")]
pub struct TimingParams {
    burst_ms: u32,
    intra_gap_ms: u32,
    inter_gap_ms: u32,
}

#[derive(Serialize, Deserialize)]
struct RawTiming {
    burst_ms: u32,
    intra_gap_ms: u32,
    inter_gap_ms: u32,
}

impl TryFrom<RawTiming> for TimingParams {
    type Error = TimingError;

    fn try_from(raw: RawTiming) -> Result<Self, Self::Error> {
        TimingParams::new(raw.burst_ms, raw.intra_gap_ms, raw.inter_gap_ms)
    }
}

impl From<TimingParams> for RawTiming {
    fn from(t: TimingParams) -> Self {
        RawTiming {
            burst_ms: t.burst_ms,
            intra_gap_ms: t.intra_gap_ms,
            inter_gap_ms: t.inter_gap_ms,
        }
    }
}

impl TimingParams {
    pub const DEFAULT_BURST_MS: u32 = 60;
    pub const DEFAULT_INTRA_GAP_MS: u32 = 60;
    pub const DEFAULT_INTER_GAP_MS: u32 = 200;

    pub fn new(burst_ms: u32, intra_gap_ms: u32, inter_gap_ms: u32) -> Result<Self, TimingError> {
        if burst_ms == 0 || intra_gap_ms == 0 || inter_gap_ms == 0 {
            return Err(TimingError("durations must be positive".into()));
        }
        // groups must stay perceptually separable
        if inter_gap_ms <= intra_gap_ms {
            return Err(TimingError(format!(
                "inter-group gap {inter_gap_ms} ms must exceed intra-group gap {intra_gap_ms} ms"
            )));
        }
        Ok(Self {
            burst_ms,
            intra_gap_ms,
            inter_gap_ms,
        })
    }

    pub fn burst_ms(&self) -> u32 {
        self.burst_ms
    }

    pub fn intra_gap_ms(&self) -> u32 {
        self.intra_gap_ms
    }

    pub fn inter_gap_ms(&self) -> u32 {
        self.inter_gap_ms
    }
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            burst_ms: Self::DEFAULT_BURST_MS,
            intra_gap_ms: Self::DEFAULT_INTRA_GAP_MS,
            inter_gap_ms: Self::DEFAULT_INTER_GAP_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(u64, u64)", into = "(u64, u64)")]
pub struct Burst {
    pub start_ms: u64,
    pub duration_ms: u64,
}

impl Burst {
    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }
}

impl From<(u64, u64)> for Burst {
    fn from((start_ms, duration_ms): (u64, u64)) -> Self {
        Burst {
            start_ms,
            duration_ms,
        }
    }
}

impl From<Burst> for (u64, u64) {
    fn from(b: Burst) -> Self {
        (b.start_ms, b.duration_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid timeline: {0}")]
pub struct TimelineError(String);

/// Concrete burst schedule relative to the start of a vibration.
///
/// Bursts are sorted, non-overlapping, non-empty, and the first one starts
/// at 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Burst>", into = "Vec<Burst>")]
pub struct VibrationTimeline {
    bursts: Vec<Burst>,
}

impl VibrationTimeline {
    pub fn new(bursts: Vec<Burst>) -> Result<Self, TimelineError> {
        let first = bursts
            .first()
            .ok_or_else(|| TimelineError("no bursts".into()))?;
        if first.start_ms != 0 {
            return Err(TimelineError(format!(
                "first burst starts at {} ms, expected 0",
                first.start_ms
            )));
        }
        if let Some(b) = bursts.iter().find(|b| b.duration_ms == 0) {
            return Err(TimelineError(format!(
                "zero-length burst at {} ms",
                b.start_ms
            )));
        }
        for pair in bursts.windows(2) {
            if pair[1].start_ms < pair[0].end_ms() {
                return Err(TimelineError(format!(
                    "burst at {} ms overlaps or precedes the burst ending at {} ms",
                    pair[1].start_ms,
                    pair[0].end_ms()
                )));
            }
        }
        Ok(Self { bursts })
    }

    pub fn bursts(&self) -> &[Burst] {
        &self.bursts
    }

    pub fn total_duration_ms(&self) -> u64 {
        total_duration(self)
    }
}

impl TryFrom<Vec<Burst>> for VibrationTimeline {
    type Error = TimelineError;

    fn try_from(bursts: Vec<Burst>) -> Result<Self, Self::Error> {
        VibrationTimeline::new(bursts)
    }
}

impl From<VibrationTimeline> for Vec<Burst> {
    fn from(t: VibrationTimeline) -> Self {
        t.bursts
    }
}

pub fn render_timeline(spec: &PatternSpec, timing: &TimingParams) -> VibrationTimeline {
    let burst = u64::from(timing.burst_ms);
    let mut bursts = Vec::with_capacity(spec.burst_count());
    let mut cursor = 0u64;
    for (g, &count) in spec.groups().iter().enumerate() {
        if g > 0 {
            cursor += u64::from(timing.inter_gap_ms);
        }
        for b in 0..count {
            if b > 0 {
                cursor += u64::from(timing.intra_gap_ms);
            }
            bursts.push(Burst {
                start_ms: cursor,
                duration_ms: burst,
            });
            cursor += burst;
        }
    }
    VibrationTimeline { bursts }
}

pub fn total_duration(timeline: &VibrationTimeline) -> u64 {
    timeline.bursts.last().map_or(0, Burst::end_ms)
}

/// Same burst count, and every burst's start and duration within
/// `jitter_tolerance_ms` of its counterpart.
pub fn timelines_match(
    observed: &VibrationTimeline,
    expected: &VibrationTimeline,
    jitter_tolerance_ms: u64,
) -> bool {
    observed.bursts.len() == expected.bursts.len()
        && observed
            .bursts
            .iter()
            .zip(&expected.bursts)
            .all(|(o, e)| {
                o.start_ms.abs_diff(e.start_ms) <= jitter_tolerance_ms
                    && o.duration_ms.abs_diff(e.duration_ms) <= jitter_tolerance_ms
            })
}

/// Every pattern with at most `max_groups` groups of at most
/// `max_bursts_per_group` bursts (both clamped to the alphabet bounds),
/// shortest first, lexicographic within a length.
pub fn enumerate_patterns(max_groups: usize, max_bursts_per_group: u8) -> Vec<PatternSpec> {
    let max_groups = max_groups.min(MAX_GROUPS);
    let max_count = max_bursts_per_group.min(MAX_BURSTS_PER_GROUP);
    let mut out = Vec::new();
    if max_count == 0 {
        return out;
    }
    for len in 1..=max_groups {
        let mut digits = vec![1u8; len];
        loop {
            out.push(PatternSpec {
                groups: digits.clone(),
            });
            // odometer increment, rightmost digit fastest
            match digits.iter().rposition(|&d| d < max_count) {
                Some(pos) => {
                    digits[pos] += 1;
                    digits[pos + 1..].iter_mut().for_each(|d| *d = 1);
                }
                None => break,
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> PatternSpec {
        parse_pattern(text).unwrap()
    }

    #[test]
    fn parses_named_patterns() {
        assert_eq!(p("2").groups(), &[2]);
        assert_eq!(p("1 3").groups(), &[1, 3]);
        assert_eq!(p("  1\t3 ").canonical(), "1 3");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_pattern(""), Err(PatternError::EmptyPattern));
        assert_eq!(parse_pattern("   "), Err(PatternError::EmptyPattern));
        assert!(matches!(parse_pattern("0 2"), Err(PatternError::OutOfRange(_))));
        assert!(matches!(parse_pattern("10"), Err(PatternError::OutOfRange(_))));
        assert!(matches!(
            parse_pattern("1 1 1 1 1"),
            Err(PatternError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_pattern("99999999999999999999999"),
            Err(PatternError::OutOfRange(_))
        ));
        assert!(matches!(parse_pattern("1 x"), Err(PatternError::InvalidToken(_))));
        assert!(matches!(parse_pattern("-1"), Err(PatternError::InvalidToken(_))));
        assert!(matches!(parse_pattern("1,3"), Err(PatternError::InvalidToken(_))));
    }

    #[test]
    fn renders_named_patterns_with_defaults() {
        let t = TimingParams::default();
        let two = render_timeline(&p("2"), &t);
        assert_eq!(
            two.bursts(),
            &[Burst::from((0, 60)), Burst::from((120, 60))]
        );
        assert_eq!(total_duration(&two), 180);

        let one_three = render_timeline(&p("1 3"), &t);
        assert_eq!(
            one_three.bursts(),
            &[
                Burst::from((0, 60)),
                Burst::from((260, 60)),
                Burst::from((380, 60)),
                Burst::from((500, 60))
            ]
        );
        assert_eq!(total_duration(&one_three), 560);
    }

    #[test]
    fn single_burst_ignores_gaps() {
        let t = TimingParams::new(75, 10, 900).unwrap();
        let one = render_timeline(&p("1"), &t);
        assert_eq!(one.bursts(), &[Burst::from((0, 75))]);
        assert_eq!(total_duration(&VibrationTimeline::new(vec![(0, 60).into()]).unwrap()), 60);
    }

    #[test]
    fn timing_validation() {
        assert!(TimingParams::new(0, 60, 200).is_err());
        assert!(TimingParams::new(60, 0, 200).is_err());
        assert!(TimingParams::new(60, 200, 200).is_err());
        assert!(TimingParams::new(60, 60, 61).is_ok());
        let bad: Result<TimingParams, _> =
            serde_json::from_str(r#"{"burst_ms":60,"intra_gap_ms":300,"inter_gap_ms":200}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn timeline_validation() {
        assert!(VibrationTimeline::new(vec![]).is_err());
        assert!(VibrationTimeline::new(vec![(5, 60).into()]).is_err());
        assert!(VibrationTimeline::new(vec![(0, 60).into(), (30, 60).into()]).is_err());
        assert!(VibrationTimeline::new(vec![(0, 0).into()]).is_err());
        assert!(VibrationTimeline::new(vec![(0, 60).into(), (60, 60).into()]).is_ok());
    }

    #[test]
    fn matching() {
        let t = TimingParams::default();
        let two = render_timeline(&p("2"), &t);
        let one_three = render_timeline(&p("1 3"), &t);
        assert!(timelines_match(&two, &two, 0));
        assert!(!timelines_match(&two, &one_three, 10));

        // timelines are anchored at 0, so the jitter lands on every later burst
        let shifted = VibrationTimeline::new(
            two.bursts()
                .iter()
                .enumerate()
                .map(|(i, b)| Burst {
                    start_ms: if i == 0 { 0 } else { b.start_ms + 5 },
                    duration_ms: b.duration_ms,
                })
                .collect(),
        )
        .unwrap();
        assert!(timelines_match(&shifted, &two, 10));
        assert!(!timelines_match(&shifted, &two, 4));
    }

    #[test]
    fn enumeration_small_cases() {
        let names = |v: Vec<PatternSpec>| v.iter().map(|s| s.canonical()).collect::<Vec<_>>();
        assert_eq!(names(enumerate_patterns(1, 2)), ["1", "2"]);
        assert_eq!(
            names(enumerate_patterns(2, 2)),
            ["1", "2", "1 1", "1 2", "2 1", "2 2"]
        );
        assert_eq!(enumerate_patterns(2, 9).len(), 90);
        assert_eq!(enumerate_patterns(0, 9).len(), 0);
    }

    #[test]
    fn serde_uses_canonical_text() {
        let json = serde_json::to_string(&p("1 3")).unwrap();
        assert_eq!(json, "\"1 3\"");
        let back: PatternSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p("1 3"));
        assert!(serde_json::from_str::<PatternSpec>("\"0\"").is_err());

        let tl = render_timeline(&p("2"), &TimingParams::default());
        assert_eq!(serde_json::to_string(&tl).unwrap(), "[[0,60],[120,60]]");
    }
}
