//! Session logs, aggregation, and comparison against reference rates.
//!
//! A session log is UTF-8 JSON Lines. The first line is always the header;
//! trial records follow in index order. Live sessions interleave command and
//! event lines, which aggregation skips. See `docs/session-log.md` for the
//! field-by-field layout.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::LinkModel;
use crate::live::{ConsoleCommand, EventEnvelope, Rejection};
use crate::pattern::{PatternSpec, TimingParams};
use crate::perceiver::{
    ExperienceLevel, PerceiverProfile, ASSIGNED_TARGET, CHOSEN_TARGET, DAILY_TARGET,
    NO_EXPERIENCE_TARGET, REFERENCE_RATES, SOMETIMES_TARGET,
};
use crate::scenario::{AbsenceCause, AbsencePolicy, ScenarioCounts, ScenarioId, TrialRecord, WorldConfig};
use crate::stats::{wilson_counts, wilson_half_width, Z_95};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trial index gap: expected {expected}, got {got}")]
    IndexGap { expected: u32, got: u32 },
    #[error("session log has no header")]
    HeaderMissing,
    #[error("session log already has a header")]
    DuplicateHeader,
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u32),
    #[error("no session logs to aggregate")]
    EmptyInput,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Simulated,
    Live,
}

/// Everything needed to rebuild the session's world from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub schema_version: u32,
    pub mode: SessionMode,
    pub participant_id: u32,
    pub seed: u64,
    pub schedule_seed: u64,
    pub counts: ScenarioCounts,
    pub enrolled_pattern: PatternSpec,
    pub chosen_by_user: bool,
    pub experience: Option<ExperienceLevel>,
    pub profile: Option<PerceiverProfile>,
    pub timing: TimingParams,
    pub link: LinkModel,
    pub debounce_ms: u64,
    pub distractor_pool: Vec<PatternSpec>,
    pub absence_policy: AbsencePolicy,
}

impl SessionHeader {
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            timing: self.timing,
            link: self.link,
            debounce_ms: self.debounce_ms,
            distractor_pool: self.distractor_pool.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    pub seq: u64,
    pub issued_at: u64,
    pub command: ConsoleCommand,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Header(SessionHeader),
    Trial(TrialRecord),
    Command(CommandEntry),
    Event(EventEnvelope),
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log entries serialize");
        line.push('\n');
        line
    }
}

/// In-memory session log: header, then entries in append order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    entries: Vec<LogEntry>,
    header_seen: bool,
    trial_count: u32,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_header(header: SessionHeader) -> Self {
        let mut log = Self::new();
        log.push(LogEntry::Header(header)).expect("fresh log accepts a header");
        log
    }

    pub fn header(&self) -> Option<&SessionHeader> {
        match self.entries.first() {
            Some(LogEntry::Header(h)) => Some(h),
            _ => None,
        }
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Trial(t) => Some(t),
            _ => None,
        })
    }

    pub fn record_count(&self) -> u32 {
        self.trial_count
    }

    /// Appends a trial record; its index must be exactly one past the last.
    pub fn append_record(&mut self, record: TrialRecord) -> Result<(), MetricsError> {
        self.push(LogEntry::Trial(record))
    }

    /// Appends any entry, enforcing header-first and trial index order.
    pub fn push(&mut self, entry: LogEntry) -> Result<(), MetricsError> {
        match &entry {
            LogEntry::Header(h) => {
                if self.header_seen {
                    return Err(MetricsError::DuplicateHeader);
                }
                if h.schema_version != SCHEMA_VERSION {
                    return Err(MetricsError::UnsupportedSchema(h.schema_version));
                }
                self.header_seen = true;
            }
            other => {
                if !self.header_seen {
                    return Err(MetricsError::HeaderMissing);
                }
                if let LogEntry::Trial(t) = other {
                    let expected = self.trial_count + 1;
                    if t.index != expected {
                        return Err(MetricsError::IndexGap {
                            expected,
                            got: t.index,
                        });
                    }
                    self.trial_count = expected;
                }
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(LogEntry::to_line).collect()
    }

    pub fn parse_jsonl(text: &str, origin: &str) -> Result<Self, MetricsError> {
        let mut log = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(line).map_err(|e| MetricsError::Parse {
                path: origin.to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
            log.push(entry)?;
        }
        if !log.header_seen {
            return Err(MetricsError::HeaderMissing);
        }
        Ok(log)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), MetricsError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, MetricsError> {
        let file = File::open(path)?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::parse_jsonl(&text, &path.display().to_string())
    }
}

/// Append-only file sink: every entry is validated against the in-memory
/// log, then written and flushed before returning.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: BufWriter<File>,
    log: SessionLog,
}

impl LogWriter {
    pub fn create(path: &Path, header: SessionHeader) -> Result<Self, MetricsError> {
        let file = OpenOptions::new().create_new(true).write(true).open(path)?;
        let mut w = Self {
            path: path.to_path_buf(),
            file: BufWriter::new(file),
            log: SessionLog::new(),
        };
        w.append(LogEntry::Header(header))?;
        Ok(w)
    }

    /// Reopens an existing log for further appends.
    pub fn reopen(path: &Path) -> Result<Self, MetricsError> {
        let log = SessionLog::read_from(path)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: BufWriter::new(file),
            log,
        })
    }

    pub fn append(&mut self, entry: LogEntry) -> Result<(), MetricsError> {
        let line = entry.to_line();
        self.log.push(entry)?;
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStat {
    pub correct: u64,
    pub total: u64,
    pub rate: Option<f64>,
    /// Wilson 95% half-width around the observed rate.
    pub half_width: Option<f64>,
}

impl RateStat {
    fn from_counts(correct: u64, total: u64) -> Self {
        let rate = (total > 0).then(|| correct as f64 / total as f64);
        RateStat {
            correct,
            total,
            rate,
            half_width: wilson_counts(correct, total, Z_95).map(|ci| ci.half_width()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub participants: u64,
    #[serde(flatten)]
    pub stat: RateStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub sessions: u64,
    pub unanswered: u64,
    pub per_scenario: BTreeMap<ScenarioId, RateStat>,
    pub overall: RateStat,
    pub by_experience: BTreeMap<String, GroupStat>,
    pub by_pattern_choice: BTreeMap<String, GroupStat>,
    pub s4_by_cause: BTreeMap<String, RateStat>,
}

impl AggregateReport {
    pub fn scenario(&self, id: ScenarioId) -> &RateStat {
        &self.per_scenario[&id]
    }
}

fn experience_key(e: Option<ExperienceLevel>) -> String {
    e.map_or_else(|| "unspecified".to_string(), |e| e.as_str().to_string())
}

fn choice_key(chosen: bool) -> String {
    if chosen { "chosen" } else { "assigned" }.to_string()
}

fn cause_key(c: AbsenceCause) -> String {
    match c {
        AbsenceCause::PhishingPhone => "phishing_phone",
        AbsenceCause::SupervisorSuppression => "supervisor_suppression",
    }
    .to_string()
}

/// Trials without a response are counted in `unanswered` and left out of
/// every rate.
pub fn aggregate(logs: &[SessionLog]) -> Result<AggregateReport, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut per_scenario: BTreeMap<ScenarioId, (u64, u64)> =
        ScenarioId::ALL.iter().map(|&s| (s, (0, 0))).collect();
    let mut by_exp: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let mut by_choice: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let mut by_cause: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut unanswered = 0;

    for log in logs {
        let header = log.header().ok_or(MetricsError::HeaderMissing)?;
        let exp = by_exp.entry(experience_key(header.experience)).or_default();
        exp.0 += 1;
        let choice = by_choice.entry(choice_key(header.chosen_by_user)).or_default();
        choice.0 += 1;
        for record in log.records() {
            let Some(correct) = record.is_correct() else {
                unanswered += 1;
                continue;
            };
            let c = u64::from(correct);
            let slot = per_scenario.get_mut(&record.scenario).expect("all scenarios present");
            slot.0 += c;
            slot.1 += 1;
            for group in [
                by_exp.get_mut(&experience_key(header.experience)),
                by_choice.get_mut(&choice_key(header.chosen_by_user)),
            ]
            .into_iter()
            .flatten()
            {
                group.1 += c;
                group.2 += 1;
            }
            if let Some(cause) = record.absence_cause {
                let slot = by_cause.entry(cause_key(cause)).or_default();
                slot.0 += c;
                slot.1 += 1;
            }
        }
    }

    let (correct, total) = per_scenario
        .values()
        .fold((0, 0), |acc, &(c, t)| (acc.0 + c, acc.1 + t));
    let groups = |m: BTreeMap<String, (u64, u64, u64)>| {
        m.into_iter()
            .map(|(k, (participants, c, t))| {
                (
                    k,
                    GroupStat {
                        participants,
                        stat: RateStat::from_counts(c, t),
                    },
                )
            })
            .collect()
    };
    Ok(AggregateReport {
        sessions: logs.len() as u64,
        unanswered,
        per_scenario: per_scenario
            .into_iter()
            .map(|(s, (c, t))| (s, RateStat::from_counts(c, t)))
            .collect(),
        overall: RateStat::from_counts(correct, total),
        by_experience: groups(by_exp),
        by_pattern_choice: groups(by_choice),
        s4_by_cause: by_cause
            .into_iter()
            .map(|(k, (c, t))| (k, RateStat::from_counts(c, t)))
            .collect(),
    })
}

/// Questionnaire means (1..5 Likert). Kept for the report; never simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireMeans {
    pub easy_to_use: f64,
    pub fast_to_use: f64,
    pub easy_to_adapt: f64,
    pub would_use: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTargets {
    pub per_scenario: [f64; 5],
    pub experience: BTreeMap<String, f64>,
    pub pattern_choice: BTreeMap<String, f64>,
    pub z: f64,
    pub questionnaire: QuestionnaireMeans,
}

impl Default for ReferenceTargets {
    fn default() -> Self {
        Self {
            per_scenario: REFERENCE_RATES,
            experience: [
                ("daily".to_string(), DAILY_TARGET),
                ("sometimes".to_string(), SOMETIMES_TARGET),
                ("none".to_string(), NO_EXPERIENCE_TARGET),
            ]
            .into(),
            pattern_choice: [
                ("chosen".to_string(), CHOSEN_TARGET),
                ("assigned".to_string(), ASSIGNED_TARGET),
            ]
            .into(),
            z: Z_95,
            questionnaire: QuestionnaireMeans {
                easy_to_use: 4.9,
                fast_to_use: 5.0,
                easy_to_adapt: 4.9,
                would_use: 3.4,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// No trials in the report for this target.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCheck {
    pub name: String,
    pub target: f64,
    pub observed: Option<f64>,
    pub n: u64,
    pub tolerance: Option<f64>,
    pub delta: Option<f64>,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenarios: Vec<TargetCheck>,
    pub groups: Vec<TargetCheck>,
}

impl Comparison {
    pub fn scenarios_pass(&self) -> bool {
        self.scenarios.iter().all(|c| c.status == CheckStatus::Pass)
    }
}

fn check(name: String, target: f64, stat: &RateStat, z: f64) -> TargetCheck {
    match (stat.rate, wilson_half_width(target, stat.total, z)) {
        (Some(rate), Some(tol)) => {
            let delta = rate - target;
            TargetCheck {
                name,
                target,
                observed: Some(rate),
                n: stat.total,
                tolerance: Some(tol),
                delta: Some(delta),
                status: if delta.abs() <= tol {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                },
            }
        }
        _ => TargetCheck {
            name,
            target,
            observed: None,
            n: 0,
            tolerance: None,
            delta: None,
            status: CheckStatus::Excluded,
        },
    }
}

/// A target passes when the observed rate lies within the Wilson 95%
/// half-width computed at the target rate for the report's sample size.
pub fn compare_to_reference(report: &AggregateReport, targets: &ReferenceTargets) -> Comparison {
    let scenarios = ScenarioId::ALL
        .iter()
        .map(|&s| check(s.to_string(), targets.per_scenario[s.index()], report.scenario(s), targets.z))
        .collect();
    let empty = RateStat::from_counts(0, 0);
    let mut groups = Vec::new();
    for (key, &target) in &targets.experience {
        let stat = report.by_experience.get(key).map_or(&empty, |g| &g.stat);
        groups.push(check(format!("experience:{key}"), target, stat, targets.z));
    }
    for (key, &target) in &targets.pattern_choice {
        let stat = report.by_pattern_choice.get(key).map_or(&empty, |g| &g.stat);
        groups.push(check(format!("pattern:{key}"), target, stat, targets.z));
    }
    Comparison { scenarios, groups }
}

const SCENARIO_LABELS: [&str; 5] = [
    "own pattern after waking phone",
    "unrelated vibration, no wake",
    "own pattern without waking phone",
    "no vibration after waking phone",
    "different pattern after waking phone",
];

fn fmt_opt(v: Option<f64>, width: usize, prec: usize) -> String {
    match v {
        Some(v) => format!("{v:>width$.prec$}"),
        None => format!("{:>width$}", "-"),
    }
}

/// Plain-text table: per-scenario rates against targets, then the group
/// breakdowns and questionnaire reference values.
pub fn render_report_table(report: &AggregateReport, comparison: &Comparison, targets: &ReferenceTargets) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Recognition results over {} sessions ({} unanswered trials)\n\n",
        report.sessions, report.unanswered
    ));
    out.push_str(&format!(
        "{:<4} {:<38} {:>5} {:>7} {:>7} {:>7} {:>8} {:>8}  {}\n",
        "id", "situation", "n", "correct", "rate", "target", "delta", "±wilson", "status"
    ));
    for (check, id) in comparison.scenarios.iter().zip(ScenarioId::ALL) {
        let stat = report.scenario(id);
        out.push_str(&format!(
            "{:<4} {:<38} {:>5} {:>7} {} {:>7.3} {} {}  {}\n",
            id.as_str(),
            SCENARIO_LABELS[id.index()],
            stat.total,
            stat.correct,
            fmt_opt(stat.rate, 7, 4),
            check.target,
            fmt_opt(check.delta, 8, 4),
            fmt_opt(check.tolerance, 8, 4),
            status_str(check.status)
        ));
    }
    out.push_str(&format!(
        "{:<4} {:<38} {:>5} {:>7} {}\n\n",
        "all",
        "overall",
        report.overall.total,
        report.overall.correct,
        fmt_opt(report.overall.rate, 7, 4)
    ));

    out.push_str("Groups\n");
    for check in &comparison.groups {
        out.push_str(&format!(
            "  {:<22} n={:<5} rate {} target {:.3} delta {} ±{}  {}\n",
            check.name,
            check.n,
            fmt_opt(check.observed, 6, 4),
            check.target,
            fmt_opt(check.delta, 7, 4),
            fmt_opt(check.tolerance, 6, 4),
            status_str(check.status)
        ));
    }
    if !report.s4_by_cause.is_empty() {
        out.push_str("\nS4 by cause\n");
        for (cause, stat) in &report.s4_by_cause {
            out.push_str(&format!(
                "  {:<22} n={:<5} rate {}\n",
                cause,
                stat.total,
                fmt_opt(stat.rate, 6, 4)
            ));
        }
    }
    let q = &targets.questionnaire;
    out.push_str(&format!(
        "\nQuestionnaire reference (not simulated): easy to use {:.1}, fast to use {:.1}, easy to adapt {:.1}, would use {:.1}\n",
        q.easy_to_use, q.fast_to_use, q.easy_to_adapt, q.would_use
    ));
    out
}

fn status_str(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "FAIL",
        CheckStatus::Excluded => "excluded",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::parse_pattern;
    use crate::perceiver::ParticipantResponse;

    pub(crate) fn header(participant: u32, chosen: bool, exp: Option<ExperienceLevel>) -> SessionHeader {
        SessionHeader {
            schema_version: SCHEMA_VERSION,
            mode: SessionMode::Simulated,
            participant_id: participant,
            seed: 1,
            schedule_seed: 1,
            counts: ScenarioCounts::default(),
            enrolled_pattern: parse_pattern("2").unwrap(),
            chosen_by_user: chosen,
            experience: exp,
            profile: Some(PerceiverProfile::default()),
            timing: TimingParams::default(),
            link: LinkModel::default(),
            debounce_ms: 2000,
            distractor_pool: vec![parse_pattern("2").unwrap(), parse_pattern("1 3").unwrap()],
            absence_policy: AbsencePolicy::Alternate,
        }
    }

    fn record(index: u32, scenario: ScenarioId, correct: bool) -> TrialRecord {
        TrialRecord {
            index,
            scenario,
            user_woke: scenario.scenario().user_initiates_wake,
            wake: None,
            absence_cause: None,
            suppressed: false,
            stimulus: None,
            expected_response: scenario.expected_response(),
            response: Some(if correct {
                scenario.expected_response()
            } else {
                scenario.error_response()
            }),
            started_at: u64::from(index) * 1000,
            settled_at: u64::from(index) * 1000 + 500,
            responded_at: Some(u64::from(index) * 1000 + 900),
        }
    }

    #[test]
    fn append_enforces_order() {
        let mut log = SessionLog::with_header(header(1, true, None));
        for i in 1..=3 {
            log.append_record(record(i, ScenarioId::S1, true)).unwrap();
        }
        assert!(matches!(
            log.append_record(record(5, ScenarioId::S1, true)),
            Err(MetricsError::IndexGap { expected: 4, got: 5 })
        ));
        assert_eq!(log.record_count(), 3);

        let mut bare = SessionLog::new();
        assert!(matches!(
            bare.append_record(record(1, ScenarioId::S1, true)),
            Err(MetricsError::HeaderMissing)
        ));
        assert!(matches!(
            log.push(LogEntry::Header(header(1, true, None))),
            Err(MetricsError::DuplicateHeader)
        ));
    }

    #[test]
    fn rejects_unknown_schema() {
        let mut h = header(1, true, None);
        h.schema_version = 99;
        assert!(matches!(
            SessionLog::new().push(LogEntry::Header(h)),
            Err(MetricsError::UnsupportedSchema(99))
        ));
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let mut log = SessionLog::with_header(header(1, false, Some(ExperienceLevel::Daily)));
        for i in 1..=24 {
            log.append_record(record(i, ScenarioId::ALL[(i as usize) % 5], i % 7 != 0)).unwrap();
        }
        log.write_to(&path).unwrap();
        let back = SessionLog::read_from(&path).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.record_count(), 24);
        assert_eq!(back.to_jsonl(), std::fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn writer_appends_durably() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("live.jsonl");
        let mut w = LogWriter::create(&path, header(3, true, None)).unwrap();
        w.append(LogEntry::Trial(record(1, ScenarioId::S4, true))).unwrap();
        assert!(w.append(LogEntry::Trial(record(3, ScenarioId::S4, true))).is_err());
        drop(w);
        let mut again = LogWriter::reopen(&path).unwrap();
        again.append(LogEntry::Trial(record(2, ScenarioId::S2, false))).unwrap();
        let log = SessionLog::read_from(&path).unwrap();
        assert_eq!(log.record_count(), 2);
        assert!(LogWriter::create(&path, header(3, true, None)).is_err());
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = format!("{}not json\n", LogEntry::Header(header(1, true, None)).to_line());
        match SessionLog::parse_jsonl(&text, "x.jsonl") {
            Err(MetricsError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            SessionLog::parse_jsonl("", "empty"),
            Err(MetricsError::HeaderMissing)
        ));
    }

    #[test]
    fn four_record_rate() {
        let mut log = SessionLog::with_header(header(1, true, None));
        for (i, ok) in [true, true, false, true].into_iter().enumerate() {
            log.append_record(record(i as u32 + 1, ScenarioId::S2, ok)).unwrap();
        }
        let report = aggregate(&[log]).unwrap();
        assert_eq!(report.scenario(ScenarioId::S2).rate, Some(0.75));
        assert_eq!(report.overall.correct, 3);
        assert_eq!(report.scenario(ScenarioId::S1).total, 0);
        assert_eq!(report.by_pattern_choice["chosen"].participants, 1);
    }

    #[test]
    fn unanswered_trials_are_excluded() {
        let mut log = SessionLog::with_header(header(1, true, None));
        let mut r = record(1, ScenarioId::S1, true);
        r.response = None;
        log.append_record(r).unwrap();
        log.append_record(record(2, ScenarioId::S1, true)).unwrap();
        let report = aggregate(&[log]).unwrap();
        assert_eq!(report.unanswered, 1);
        assert_eq!(report.overall.total, 1);
    }

    #[test]
    fn aggregate_needs_input() {
        assert!(matches!(aggregate(&[]), Err(MetricsError::EmptyInput)));
    }

    #[test]
    fn aggregation_ignores_order() {
        let logs: Vec<SessionLog> = (0..4)
            .map(|p| {
                let mut log = SessionLog::with_header(header(
                    p,
                    p % 2 == 0,
                    Some(ExperienceLevel::ALL[p as usize % 3]),
                ));
                for i in 1..=10 {
                    log.append_record(record(i, ScenarioId::ALL[(i + p) as usize % 5], (i * (p + 1)) % 4 != 0))
                        .unwrap();
                }
                log
            })
            .collect();
        let forward = aggregate(&logs).unwrap();
        let mut reversed = logs.clone();
        reversed.reverse();
        assert_eq!(aggregate(&reversed).unwrap(), forward);
    }

    #[test]
    fn comparison_uses_wilson_at_target() {
        let report = |s: ScenarioId, correct: u64, total: u64| {
            let mut per = BTreeMap::new();
            for id in ScenarioId::ALL {
                per.insert(id, RateStat::from_counts(0, 0));
            }
            per.insert(s, RateStat::from_counts(correct, total));
            AggregateReport {
                sessions: 1,
                unanswered: 0,
                per_scenario: per,
                overall: RateStat::from_counts(correct, total),
                by_experience: BTreeMap::new(),
                by_pattern_choice: BTreeMap::new(),
                s4_by_cause: BTreeMap::new(),
            }
        };
        let targets = ReferenceTargets::default();

        let exact = compare_to_reference(&report(ScenarioId::S1, 267, 270), &targets);
        let s1 = &exact.scenarios[0];
        assert!((s1.observed.unwrap() - 267.0 / 270.0).abs() < 1e-12);
        assert_eq!(s1.status, CheckStatus::Pass);

        let hundred = compare_to_reference(&report(ScenarioId::S1, 99, 100), &targets);
        assert_eq!(hundred.scenarios[0].delta, Some(0.0));

        let low = compare_to_reference(&report(ScenarioId::S4, 72, 90), &targets);
        let s4 = &low.scenarios[3];
        assert_eq!(s4.status, CheckStatus::Fail);
        assert!((s4.tolerance.unwrap() - 0.060_285_298_209_762_36).abs() < 1e-12);
        assert_eq!(low.scenarios[0].status, CheckStatus::Excluded);
        assert!(!low.scenarios_pass());
    }

    #[test]
    fn table_mentions_every_scenario() {
        let mut log = SessionLog::with_header(header(1, true, Some(ExperienceLevel::NoPrior)));
        for (i, s) in ScenarioId::ALL.iter().enumerate() {
            log.append_record(record(i as u32 + 1, *s, true)).unwrap();
        }
        let report = aggregate(&[log]).unwrap();
        let targets = ReferenceTargets::default();
        let table = render_report_table(&report, &compare_to_reference(&report, &targets), &targets);
        for s in ScenarioId::ALL {
            assert!(table.contains(s.as_str()));
        }
        assert!(table.contains("experience:none"));
        assert!(table.contains("would use 3.4"));
    }

    #[test]
    fn response_strings_are_stable() {
        let json = serde_json::to_string(&ParticipantResponse::ReportAbsentOrWrong).unwrap();
        assert_eq!(json, "\"report_absent_or_wrong\"");
    }
}
