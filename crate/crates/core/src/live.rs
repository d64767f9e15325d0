//! Supervisor-driven live session.
//!
//! A [`LiveSession`] is a state machine fed one [`ConsoleCommand`] at a time.
//! Every command (accepted or not), every resulting [`SessionEvent`], and
//! every completed trial is appended to the session log, so replaying the
//! accepted commands of a log against a fresh session rebuilds the same
//! state.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{PhoneSnapshot, VibrationEvent, VibrationSource, WatchSnapshot};
use crate::metrics::{CommandEntry, LogEntry, LogWriter, MetricsError, SessionHeader, SessionLog, SessionMode};
use crate::pattern::{PatternSpec, VibrationTimeline};
use crate::perceiver::ParticipantResponse;
use crate::scenario::{
    build_schedule, run_trial, stream_rng, ScenarioError, ScenarioId, SessionSchedule, TrialControls,
    TrialRecord, World, STREAM_ENGINE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConsoleCommand {
    StartSession,
    AdvanceTrial,
    InjectVibration { pattern: PatternSpec },
    SuppressNext,
    RecordResponse { value: ParticipantResponse },
    EndSession,
}

impl ConsoleCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ConsoleCommand::StartSession => "start_session",
            ConsoleCommand::AdvanceTrial => "advance_trial",
            ConsoleCommand::InjectVibration { .. } => "inject_vibration",
            ConsoleCommand::SuppressNext => "suppress_next",
            ConsoleCommand::RecordResponse { .. } => "record_response",
            ConsoleCommand::EndSession => "end_session",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionCode {
    NotStarted,
    AlreadyStarted,
    SessionEnded,
    TrialInProgress,
    NoActiveTrial,
    ScheduleExhausted,
    EngineFailure,
}

/// Structured refusal of a command that is invalid in the current state.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{command} rejected ({code:?}): {message}")]
pub struct Rejection {
    pub command: String,
    pub code: RejectionCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    SessionStarted {
        at: u64,
        participant_id: u32,
        trials: u32,
    },
    TrialStarted {
        at: u64,
        index: u32,
        scenario: ScenarioId,
    },
    VibrationEmitted {
        at: u64,
        trial: Option<u32>,
        source: VibrationSource,
        pattern: PatternSpec,
        duration_ms: u64,
        timeline: VibrationTimeline,
    },
    VibrationSuppressed {
        at: u64,
        trial: u32,
    },
    SuppressArmed {
        at: u64,
    },
    ResponseRecorded {
        at: u64,
        index: u32,
        value: ParticipantResponse,
        correct: bool,
    },
    SessionEnded {
        at: u64,
        completed: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    pub event: SessionEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Running,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Active,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub index: u32,
    pub scenario: ScenarioId,
    pub status: TrialStatus,
}

/// Consistent copy of a live session's state, as served to the console.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSnapshot {
    pub phase: Phase,
    pub participant_id: u32,
    pub now: u64,
    pub enrolled_pattern: PatternSpec,
    pub schedule: Vec<ScheduleEntry>,
    pub active_trial: Option<u32>,
    pub next_trial: Option<u32>,
    pub suppress_armed: bool,
    pub completed: u32,
    pub last_event_seq: Option<u64>,
    pub phone: PhoneSnapshot,
    pub watch: WatchSnapshot,
}

#[derive(Debug, Error)]
pub enum LiveError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Log(#[from] MetricsError),
    #[error("log is not a live session log")]
    NotLive,
    #[error("replay diverged at command {seq}: {message}")]
    ReplayDiverged { seq: u64, message: String },
}

enum Sink {
    Memory(SessionLog),
    File(LogWriter),
}

impl Sink {
    fn append(&mut self, entry: LogEntry) -> Result<(), MetricsError> {
        match self {
            Sink::Memory(log) => log.push(entry),
            Sink::File(w) => w.append(entry),
        }
    }

    fn log(&self) -> &SessionLog {
        match self {
            Sink::Memory(log) => log,
            Sink::File(w) => w.log(),
        }
    }
}

pub struct LiveSession {
    header: SessionHeader,
    phase: Phase,
    schedule: SessionSchedule,
    world: World,
    rng: ChaCha8Rng,
    active: Option<TrialRecord>,
    completed: u32,
    suppress_armed: bool,
    s4_seen: usize,
    events: Vec<EventEnvelope>,
    command_seq: u64,
    sink: Sink,
}

impl std::fmt::Debug for LiveSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveSession")
            .field("participant_id", &self.header.participant_id)
            .field("phase", &self.phase)
            .field("completed", &self.completed)
            .finish_non_exhaustive()
    }
}

impl LiveSession {
    /// Session with an in-memory log.
    pub fn new(mut header: SessionHeader) -> Result<Self, LiveError> {
        header.mode = SessionMode::Live;
        let sink = Sink::Memory(SessionLog::with_header(header.clone()));
        Self::with_sink(header, sink)
    }

    /// Session whose log is written to a new file at `path`.
    pub fn create_logged(mut header: SessionHeader, path: &Path) -> Result<Self, LiveError> {
        header.mode = SessionMode::Live;
        let sink = Sink::File(LogWriter::create(path, header.clone())?);
        Self::with_sink(header, sink)
    }

    fn with_sink(header: SessionHeader, sink: Sink) -> Result<Self, LiveError> {
        let schedule = build_schedule(header.schedule_seed, &header.counts).for_participant(header.participant_id);
        let world = World::new(
            &header.world_config(),
            header.seed,
            header.enrolled_pattern.clone(),
            header.chosen_by_user,
        )?;
        Ok(Self {
            rng: stream_rng(header.seed, STREAM_ENGINE),
            header,
            phase: Phase::Idle,
            schedule,
            world,
            active: None,
            completed: 0,
            suppress_armed: false,
            s4_seen: 0,
            events: Vec::new(),
            command_seq: 0,
            sink,
        })
    }

    /// Rebuilds a session from a live log by replaying its accepted
    /// commands, checking that every regenerated event matches the log.
    pub fn replay(log: &SessionLog) -> Result<Self, LiveError> {
        let header = log.header().ok_or(MetricsError::HeaderMissing)?.clone();
        if header.mode != SessionMode::Live {
            return Err(LiveError::NotLive);
        }
        let mut session = Self::new(header)?;
        session.replay_into(log)?;
        Ok(session)
    }

    /// Replays the log at `path`, then keeps appending to the same file.
    pub fn recover(path: &Path) -> Result<Self, LiveError> {
        let writer = LogWriter::reopen(path)?;
        let log = writer.log().clone();
        let header = log.header().ok_or(MetricsError::HeaderMissing)?.clone();
        if header.mode != SessionMode::Live {
            return Err(LiveError::NotLive);
        }
        let mut session = Self::new(header)?;
        session.replay_into(&log)?;
        session.sink = Sink::File(writer);
        Ok(session)
    }

    fn replay_into(&mut self, log: &SessionLog) -> Result<(), LiveError> {
        let logged_events: Vec<&EventEnvelope> = log
            .entries()
            .iter()
            .filter_map(|e| match e {
                LogEntry::Event(ev) => Some(ev),
                _ => None,
            })
            .collect();
        for entry in log.entries() {
            let LogEntry::Command(cmd) = entry else { continue };
            let outcome = self.apply(cmd.command.clone(), cmd.issued_at)?;
            match (&cmd.rejected, outcome) {
                (None, Ok(_)) | (Some(_), Err(_)) => {}
                (expected, got) => {
                    return Err(LiveError::ReplayDiverged {
                        seq: cmd.seq,
                        message: format!("logged rejection {expected:?}, replay produced {got:?}"),
                    })
                }
            }
        }
        if self.events.len() != logged_events.len()
            || self.events.iter().zip(&logged_events).any(|(a, b)| a != *b)
        {
            return Err(LiveError::ReplayDiverged {
                seq: self.command_seq,
                message: "regenerated events differ from the log".into(),
            });
        }
        Ok(())
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn events(&self) -> &[EventEnvelope] {
        &self.events
    }

    pub fn log(&self) -> &SessionLog {
        self.sink.log()
    }

    pub fn schedule(&self) -> &SessionSchedule {
        &self.schedule
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let active = self.active.as_ref().map(|t| t.index);
        let schedule = self
            .schedule
            .trials
            .iter()
            .enumerate()
            .map(|(i, &scenario)| {
                let index = i as u32 + 1;
                let status = if index <= self.completed {
                    TrialStatus::Done
                } else if Some(index) == active {
                    TrialStatus::Active
                } else {
                    TrialStatus::Pending
                };
                ScheduleEntry {
                    index,
                    scenario,
                    status,
                }
            })
            .collect();
        let next = self.completed + u32::from(active.is_some()) + 1;
        SessionSnapshot {
            phase: self.phase,
            participant_id: self.header.participant_id,
            now: self.world.clock.now(),
            enrolled_pattern: self.header.enrolled_pattern.clone(),
            schedule,
            active_trial: active,
            next_trial: (self.phase != Phase::Ended && next as usize <= self.schedule.trials.len())
                .then_some(next),
            suppress_armed: self.suppress_armed,
            completed: self.completed,
            last_event_seq: self.events.last().map(|e| e.seq),
            phone: self.world.phone.snapshot(),
            watch: self.world.watch.snapshot(),
        }
    }

    /// Applies one command at virtual time `now`. The outer `Result` is a
    /// fault (log I/O, engine error); the inner one is the command verdict.
    pub fn apply(
        &mut self,
        command: ConsoleCommand,
        now: u64,
    ) -> Result<Result<Vec<EventEnvelope>, Rejection>, LiveError> {
        let seq = self.command_seq;
        self.command_seq += 1;
        // live time never runs behind the virtual clock
        let now = now.max(self.world.clock.now());
        self.world.clock.advance_to(now)?;

        let verdict = self.check(&command);
        self.sink.append(LogEntry::Command(CommandEntry {
            seq,
            issued_at: now,
            command: command.clone(),
            rejected: verdict.clone().err(),
        }))?;
        if let Err(rejection) = verdict {
            return Ok(Err(rejection));
        }

        let first_new = self.events.len();
        match command {
            ConsoleCommand::StartSession => {
                self.phase = Phase::Running;
                self.emit(SessionEvent::SessionStarted {
                    at: now,
                    participant_id: self.header.participant_id,
                    trials: self.schedule.trials.len() as u32,
                })?;
            }
            ConsoleCommand::AdvanceTrial => self.advance(now)?,
            ConsoleCommand::InjectVibration { pattern } => {
                let ev = self.world.inject(&pattern);
                let trial = self.active.as_ref().map(|t| t.index);
                self.emit_vibration(&ev, trial)?;
            }
            ConsoleCommand::SuppressNext => {
                self.suppress_armed = true;
                self.emit(SessionEvent::SuppressArmed { at: now })?;
            }
            ConsoleCommand::RecordResponse { value } => {
                let mut record = self.active.take().expect("checked: trial active");
                record.fill_response(value, now)?;
                self.completed = record.index;
                self.emit(SessionEvent::ResponseRecorded {
                    at: now,
                    index: record.index,
                    value,
                    correct: record.is_correct() == Some(true),
                })?;
                self.sink.append(LogEntry::Trial(record))?;
            }
            ConsoleCommand::EndSession => {
                self.phase = Phase::Ended;
                self.emit(SessionEvent::SessionEnded {
                    at: now,
                    completed: self.completed,
                })?;
            }
        }
        Ok(Ok(self.events[first_new..].to_vec()))
    }

    fn check(&self, command: &ConsoleCommand) -> Result<(), Rejection> {
        let reject = |code, message: &str| {
            Err(Rejection {
                command: command.name().to_string(),
                code,
                message: message.to_string(),
            })
        };
        match (self.phase, command) {
            (Phase::Idle, ConsoleCommand::StartSession) => Ok(()),
            (Phase::Idle, _) => reject(RejectionCode::NotStarted, "session has not been started"),
            (Phase::Ended, _) => reject(RejectionCode::SessionEnded, "session has ended"),
            (Phase::Running, ConsoleCommand::StartSession) => {
                reject(RejectionCode::AlreadyStarted, "session is already running")
            }
            (Phase::Running, ConsoleCommand::AdvanceTrial) => {
                if self.active.is_some() {
                    reject(
                        RejectionCode::TrialInProgress,
                        "record a response for the active trial first",
                    )
                } else if self.completed as usize >= self.schedule.trials.len() {
                    reject(RejectionCode::ScheduleExhausted, "all scheduled trials are done")
                } else {
                    Ok(())
                }
            }
            (Phase::Running, ConsoleCommand::RecordResponse { .. }) => {
                if self.active.is_some() {
                    Ok(())
                } else {
                    reject(
                        RejectionCode::NoActiveTrial,
                        "no trial is awaiting a response",
                    )
                }
            }
            (Phase::Running, _) => Ok(()),
        }
    }

    fn advance(&mut self, now: u64) -> Result<(), LiveError> {
        let index = self.completed + 1;
        let scenario = self.schedule.trials[index as usize - 1];
        let controls = TrialControls {
            absence_cause: self.header.absence_policy.cause_for(self.s4_seen),
            suppress_next: std::mem::take(&mut self.suppress_armed),
        };
        if scenario == ScenarioId::S4 {
            self.s4_seen += 1;
        }
        self.emit(SessionEvent::TrialStarted {
            at: now,
            index,
            scenario,
        })?;
        let record = run_trial(index, scenario, &mut self.world, &controls, &mut self.rng)?;
        if record.suppressed {
            self.emit(SessionEvent::VibrationSuppressed {
                at: record.started_at,
                trial: index,
            })?;
        }
        if let Some(stim) = &record.stimulus {
            self.emit(SessionEvent::VibrationEmitted {
                at: stim.at,
                trial: Some(index),
                source: stim.source,
                pattern: stim.pattern.clone(),
                duration_ms: stim.timeline.total_duration_ms(),
                timeline: stim.timeline.clone(),
            })?;
        }
        self.active = Some(record);
        Ok(())
    }

    fn emit_vibration(&mut self, ev: &VibrationEvent, trial: Option<u32>) -> Result<(), LiveError> {
        self.emit(SessionEvent::VibrationEmitted {
            at: ev.at,
            trial,
            source: ev.source,
            pattern: ev.pattern.clone(),
            duration_ms: ev.timeline.total_duration_ms(),
            timeline: ev.timeline.clone(),
        })
    }

    fn emit(&mut self, event: SessionEvent) -> Result<(), LiveError> {
        let envelope = EventEnvelope {
            seq: self.events.len() as u64,
            event,
        };
        self.sink.append(LogEntry::Event(envelope.clone()))?;
        self.events.push(envelope);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::LinkModel;
    use crate::pattern::{parse_pattern, TimingParams};
    use crate::scenario::{AbsencePolicy, ScenarioCounts};

    fn header() -> SessionHeader {
        SessionHeader {
            schema_version: crate::metrics::SCHEMA_VERSION,
            mode: SessionMode::Live,
            participant_id: 1,
            seed: 17,
            schedule_seed: 17,
            counts: ScenarioCounts::default(),
            enrolled_pattern: parse_pattern("2").unwrap(),
            chosen_by_user: true,
            experience: None,
            profile: None,
            timing: TimingParams::default(),
            link: LinkModel::default(),
            debounce_ms: 2000,
            distractor_pool: vec![parse_pattern("2").unwrap(), parse_pattern("1 3").unwrap()],
            absence_policy: AbsencePolicy::Alternate,
        }
    }

    fn ok(s: &mut LiveSession, c: ConsoleCommand, now: u64) -> Vec<EventEnvelope> {
        s.apply(c, now).unwrap().unwrap()
    }

    #[test]
    fn start_then_snapshot() {
        let mut s = LiveSession::new(header()).unwrap();
        assert_eq!(s.snapshot().phase, Phase::Idle);
        ok(&mut s, ConsoleCommand::StartSession, 0);
        let snap = s.snapshot();
        assert_eq!(snap.phase, Phase::Running);
        assert_eq!(snap.next_trial, Some(1));
        assert_eq!(snap.schedule.len(), 24);
        assert!(snap.schedule.iter().all(|e| e.status == TrialStatus::Pending));
    }

    #[test]
    fn inject_emits_timeline() {
        let mut s = LiveSession::new(header()).unwrap();
        ok(&mut s, ConsoleCommand::StartSession, 0);
        let events = ok(
            &mut s,
            ConsoleCommand::InjectVibration {
                pattern: parse_pattern("1 3").unwrap(),
            },
            10,
        );
        match &events[0].event {
            SessionEvent::VibrationEmitted {
                duration_ms,
                source,
                timeline,
                ..
            } => {
                assert_eq!(*duration_ms, 560);
                assert_eq!(*source, VibrationSource::Injected);
                assert_eq!(timeline.bursts().len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn double_response_rejected() {
        let mut s = LiveSession::new(header()).unwrap();
        ok(&mut s, ConsoleCommand::StartSession, 0);
        ok(&mut s, ConsoleCommand::AdvanceTrial, 1_000);
        assert_eq!(s.snapshot().schedule[0].status, TrialStatus::Active);
        let value = ParticipantResponse::RecognizedOwnOnWake;
        ok(&mut s, ConsoleCommand::RecordResponse { value }, 5_000);
        let again = s.apply(ConsoleCommand::RecordResponse { value }, 6_000).unwrap();
        assert_eq!(again.unwrap_err().code, RejectionCode::NoActiveTrial);
        assert_eq!(s.log().record_count(), 1);
        assert_eq!(s.snapshot().schedule[0].status, TrialStatus::Done);
    }

    #[test]
    fn state_guards() {
        let mut s = LiveSession::new(header()).unwrap();
        let r = s.apply(ConsoleCommand::AdvanceTrial, 0).unwrap().unwrap_err();
        assert_eq!(r.code, RejectionCode::NotStarted);
        ok(&mut s, ConsoleCommand::StartSession, 0);
        assert_eq!(
            s.apply(ConsoleCommand::StartSession, 1).unwrap().unwrap_err().code,
            RejectionCode::AlreadyStarted
        );
        ok(&mut s, ConsoleCommand::AdvanceTrial, 2);
        assert_eq!(
            s.apply(ConsoleCommand::AdvanceTrial, 3).unwrap().unwrap_err().code,
            RejectionCode::TrialInProgress
        );
        ok(&mut s, ConsoleCommand::EndSession, 4);
        assert_eq!(
            s.apply(ConsoleCommand::SuppressNext, 5).unwrap().unwrap_err().code,
            RejectionCode::SessionEnded
        );
        // rejected commands are logged too
        let rejected = s
            .log()
            .entries()
            .iter()
            .filter(|e| matches!(e, LogEntry::Command(c) if c.rejected.is_some()))
            .count();
        assert_eq!(rejected, 4);
    }

    #[test]
    fn suppress_next_silences_following_auth_vibration() {
        let mut s = LiveSession::new(header()).unwrap();
        ok(&mut s, ConsoleCommand::StartSession, 0);
        // advance to the first trial that would play an auth vibration
        let mut now = 0;
        loop {
            let idx = s.snapshot().next_trial.unwrap() as usize - 1;
            let scenario = s.schedule().trials[idx];
            now += 90_000;
            if matches!(scenario, ScenarioId::S1 | ScenarioId::S3) {
                ok(&mut s, ConsoleCommand::SuppressNext, now);
                let events = ok(&mut s, ConsoleCommand::AdvanceTrial, now + 1);
                assert!(events
                    .iter()
                    .any(|e| matches!(e.event, SessionEvent::VibrationSuppressed { .. })));
                assert!(!events
                    .iter()
                    .any(|e| matches!(e.event, SessionEvent::VibrationEmitted { .. })));
                break;
            }
            ok(&mut s, ConsoleCommand::AdvanceTrial, now);
            ok(
                &mut s,
                ConsoleCommand::RecordResponse {
                    value: ParticipantResponse::NoReport,
                },
                now + 5_000,
            );
        }
    }

    #[test]
    fn exhausting_the_schedule() {
        let mut h = header();
        h.counts = ScenarioCounts::only(ScenarioId::S2, 1);
        let mut s = LiveSession::new(h).unwrap();
        ok(&mut s, ConsoleCommand::StartSession, 0);
        ok(&mut s, ConsoleCommand::AdvanceTrial, 1);
        ok(
            &mut s,
            ConsoleCommand::RecordResponse {
                value: ParticipantResponse::NoReport,
            },
            2,
        );
        assert_eq!(
            s.apply(ConsoleCommand::AdvanceTrial, 3).unwrap().unwrap_err().code,
            RejectionCode::ScheduleExhausted
        );
        assert_eq!(s.snapshot().next_trial, None);
    }

    #[test]
    fn replay_restores_state() {
        let mut s = LiveSession::new(header()).unwrap();
        ok(&mut s, ConsoleCommand::StartSession, 0);
        for i in 0..5u64 {
            let t = 60_000 * (i + 1);
            ok(&mut s, ConsoleCommand::AdvanceTrial, t);
            let _ = s.apply(ConsoleCommand::AdvanceTrial, t + 1).unwrap();
            ok(
                &mut s,
                ConsoleCommand::InjectVibration {
                    pattern: parse_pattern("3").unwrap(),
                },
                t + 2,
            );
            ok(
                &mut s,
                ConsoleCommand::RecordResponse {
                    value: ParticipantResponse::ReportAbsentOrWrong,
                },
                t + 3_000,
            );
        }
        ok(&mut s, ConsoleCommand::SuppressNext, 999_999);
        let replayed = LiveSession::replay(s.log()).unwrap();
        assert_eq!(replayed.snapshot(), s.snapshot());
        assert_eq!(replayed.log(), s.log());
    }

    #[test]
    fn replay_detects_tampering() {
        let mut s = LiveSession::new(header()).unwrap();
        ok(&mut s, ConsoleCommand::StartSession, 0);
        ok(&mut s, ConsoleCommand::AdvanceTrial, 100);
        let mut entries: Vec<LogEntry> = s.log().entries().to_vec();
        for e in entries.iter_mut() {
            if let LogEntry::Event(env) = e {
                if let SessionEvent::TrialStarted { scenario, .. } = &mut env.event {
                    *scenario = if *scenario == ScenarioId::S1 { ScenarioId::S2 } else { ScenarioId::S1 };
                }
            }
        }
        let mut forged = SessionLog::new();
        for e in entries {
            forged.push(e).unwrap();
        }
        assert!(matches!(
            LiveSession::replay(&forged),
            Err(LiveError::ReplayDiverged { .. })
        ));
    }

    #[test]
    fn logged_header_is_marked_live() {
        let mut h = header();
        h.mode = SessionMode::Simulated;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("live.jsonl");
        drop(LiveSession::create_logged(h, &path).unwrap());
        let log = SessionLog::read_from(&path).unwrap();
        assert_eq!(log.header().unwrap().mode, SessionMode::Live);
        assert!(LiveSession::recover(&path).is_ok());
    }

    #[test]
    fn simulated_log_is_not_replayable() {
        let mut h = header();
        h.mode = SessionMode::Simulated;
        let log = SessionLog::with_header(h);
        assert!(matches!(LiveSession::replay(&log), Err(LiveError::NotLive)));
    }
}
