//! Deterministic orchestration of the five authentication situations.
//!
//! | id | user wakes phone | watch plays        | correct response          |
//! |----|------------------|--------------------|---------------------------|
//! | S1 | yes              | enrolled pattern   | `recognized_own_on_wake`  |
//! | S2 | no               | distractor         | `no_report`               |
//! | S3 | no               | enrolled pattern   | `report_unexpected_own`   |
//! | S4 | yes              | nothing            | `report_absent_or_wrong`  |
//! | S5 | yes              | distractor         | `report_absent_or_wrong`  |
//!
//! Everything runs on a virtual millisecond clock driven by a single event
//! queue; wall-clock time is never read here.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, PhoneAgent, VibrationEvent, VibrationSource, WatchAgent};
use crate::link::{transmit, AuthPing, DeviceIdentity, DeviceKind, LinkModel, PairingRegistry};
use crate::pattern::{render_timeline, timelines_match, PatternSpec, TimingParams, VibrationTimeline};
use crate::perceiver::{perceive, ParticipantResponse, PerceiverProfile};

/// Inter-trial pause, uniform in this range (virtual ms).
pub const TRIAL_GAP_MS: (u64, u64) = (60_000, 120_000);
/// Time between the end of a trial's stimulus and the recorded response.
pub const RESPONSE_DELAY_MS: u64 = 1_500;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("world misconfigured: {0}")]
    WorldMisconfigured(String),
    #[error("distractor pool has no pattern other than the enrolled one")]
    EmptyDistractorPool,
    #[error("clock cannot move backwards from {now} to {requested}")]
    ClockRewind { now: u64, requested: u64 },
    #[error("trial {0} already has a response")]
    AlreadyResponded(u32),
    #[error("invalid scenario counts: {0}")]
    InvalidCounts(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    S5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchStimulus {
    EnrolledPattern,
    DistractorPattern,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub user_initiates_wake: bool,
    pub watch_stimulus: WatchStimulus,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
        ScenarioId::S5,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S4 => "S4",
            ScenarioId::S5 => "S5",
        }
    }

    pub fn scenario(self) -> Scenario {
        let (wake, stimulus) = match self {
            ScenarioId::S1 => (true, WatchStimulus::EnrolledPattern),
            ScenarioId::S2 => (false, WatchStimulus::DistractorPattern),
            ScenarioId::S3 => (false, WatchStimulus::EnrolledPattern),
            ScenarioId::S4 => (true, WatchStimulus::None),
            ScenarioId::S5 => (true, WatchStimulus::DistractorPattern),
        };
        Scenario {
            id: self,
            user_initiates_wake: wake,
            watch_stimulus: stimulus,
        }
    }

    pub fn expected_response(self) -> ParticipantResponse {
        match self {
            ScenarioId::S1 => ParticipantResponse::RecognizedOwnOnWake,
            ScenarioId::S2 => ParticipantResponse::NoReport,
            ScenarioId::S3 => ParticipantResponse::ReportUnexpectedOwn,
            ScenarioId::S4 | ScenarioId::S5 => ParticipantResponse::ReportAbsentOrWrong,
        }
    }

    /// The wrong answer a lapse produces.
    pub fn error_response(self) -> ParticipantResponse {
        match self {
            ScenarioId::S1 => ParticipantResponse::ReportAbsentOrWrong,
            ScenarioId::S2 => ParticipantResponse::ReportUnexpectedOwn,
            ScenarioId::S3 => ParticipantResponse::NoReport,
            ScenarioId::S4 | ScenarioId::S5 => ParticipantResponse::RecognizedOwnOnWake,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ScenarioError::InvalidCounts(format!("unknown scenario {s:?}")))
    }
}

/// Exposures per scenario in a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCounts(pub [u32; 5]);

impl Default for ScenarioCounts {
    /// 9, 6, 3, 3, 3: 24 exposures per participant.
    fn default() -> Self {
        ScenarioCounts([9, 6, 3, 3, 3])
    }
}

impl ScenarioCounts {
    pub fn only(id: ScenarioId, count: u32) -> Self {
        let mut c = [0; 5];
        c[id.index()] = count;
        ScenarioCounts(c)
    }

    pub fn get(&self, id: ScenarioId) -> u32 {
        self.0[id.index()]
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Parses `S1=9,S2=6,...`; scenarios not mentioned get 0.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut counts = [0u32; 5];
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once(['=', ':'])
                .ok_or_else(|| ScenarioError::InvalidCounts(format!("expected S<n>=<count>, got {part:?}")))?;
            let id: ScenarioId = k.parse()?;
            counts[id.index()] = v
                .trim()
                .parse()
                .map_err(|_| ScenarioError::InvalidCounts(format!("bad count {v:?} for {id}")))?;
        }
        Ok(ScenarioCounts(counts))
    }
}

impl fmt::Display for ScenarioCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = ScenarioId::ALL
            .iter()
            .map(|s| format!("{s}={}", self.get(*s)))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub participant_id: u32,
    pub seed: u64,
    pub trials: Vec<ScenarioId>,
}

pub(crate) const STREAM_SCHEDULE: u64 = 1;

/// Seeded Fisher-Yates permutation of the count multiset.
pub fn build_schedule(seed: u64, counts: &ScenarioCounts) -> SessionSchedule {
    let mut trials: Vec<ScenarioId> = ScenarioId::ALL
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, counts.get(s) as usize))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SCHEDULE);
    trials.shuffle(&mut rng);
    SessionSchedule {
        participant_id: 0,
        seed,
        trials,
    }
}

impl SessionSchedule {
    pub fn for_participant(mut self, participant_id: u32) -> Self {
        self.participant_id = participant_id;
        self
    }

    pub fn counts(&self) -> ScenarioCounts {
        let mut c = [0u32; 5];
        for s in &self.trials {
            c[s.index()] += 1;
        }
        ScenarioCounts(c)
    }

    /// One `index<TAB>scenario` line per trial, 1-based.
    pub fn export_lines(&self) -> String {
        self.trials
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}\t{s}\n", i + 1))
            .collect()
    }

    pub fn parse_lines(text: &str) -> Result<Vec<ScenarioId>, ScenarioError> {
        let mut out = Vec::new();
        for (n, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let (idx, id) = line
                .split_once('\t')
                .ok_or_else(|| ScenarioError::InvalidCounts(format!("malformed schedule line {line:?}")))?;
            if idx.trim() != (n + 1).to_string() {
                return Err(ScenarioError::InvalidCounts(format!(
                    "schedule line {} has index {idx:?}",
                    n + 1
                )));
            }
            out.push(id.parse()?);
        }
        Ok(out)
    }
}

/// Uniform draw from the pool entries that differ from `enrolled`.
pub fn pick_distractor(
    enrolled: &PatternSpec,
    pool: &[PatternSpec],
    rng: &mut impl Rng,
) -> Result<PatternSpec, ScenarioError> {
    let candidates: Vec<&PatternSpec> = pool.iter().filter(|p| *p != enrolled).collect();
    candidates
        .choose(rng)
        .map(|p| (*p).clone())
        .ok_or(ScenarioError::EmptyDistractorPool)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance_to(&mut self, t: u64) -> Result<(), ScenarioError> {
        if t < self.now {
            return Err(ScenarioError::ClockRewind {
                now: self.now,
                requested: t,
            });
        }
        self.now = t;
        Ok(())
    }

    pub fn advance_by(&mut self, ms: u64) {
        self.now += ms;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WokenDevice {
    Genuine,
    Phishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakeActor {
    Participant,
    /// Someone else picks up the participant's phone.
    ThirdParty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WakeInfo {
    pub device: WokenDevice,
    pub actor: WakeActor,
    pub at: u64,
}

/// How an S4 absence is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsenceCause {
    /// Participant picks up a look-alike phone that holds no valid pairing.
    PhishingPhone,
    /// Genuine phone, vibration suppressed by the supervisor.
    SupervisorSuppression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsencePolicy {
    PhishingPhone,
    SupervisorSuppression,
    /// Phishing for even S4 occurrences, suppression for odd ones.
    #[default]
    Alternate,
}

impl AbsencePolicy {
    pub fn cause_for(self, s4_occurrence: usize) -> AbsenceCause {
        match self {
            AbsencePolicy::PhishingPhone => AbsenceCause::PhishingPhone,
            AbsencePolicy::SupervisorSuppression => AbsenceCause::SupervisorSuppression,
            AbsencePolicy::Alternate if s4_occurrence.is_multiple_of(2) => AbsenceCause::PhishingPhone,
            AbsencePolicy::Alternate => AbsenceCause::SupervisorSuppression,
        }
    }
}

/// Supervisor controls applied to one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialControls {
    pub absence_cause: AbsenceCause,
    /// Suppress the next authentication vibration regardless of scenario.
    pub suppress_next: bool,
}

impl Default for TrialControls {
    fn default() -> Self {
        Self {
            absence_cause: AbsenceCause::PhishingPhone,
            suppress_next: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusRecord {
    pub at: u64,
    pub source: VibrationSource,
    pub pattern: PatternSpec,
    pub timeline: VibrationTimeline,
}

impl From<VibrationEvent> for StimulusRecord {
    fn from(ev: VibrationEvent) -> Self {
        StimulusRecord {
            at: ev.at,
            source: ev.source,
            pattern: ev.pattern,
            timeline: ev.timeline,
        }
    }
}

/// What the participant can perceive about a trial. Carries no source,
/// pattern name, or scenario id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusView {
    pub user_woke: bool,
    pub timeline: Option<VibrationTimeline>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u32,
    pub scenario: ScenarioId,
    pub user_woke: bool,
    pub wake: Option<WakeInfo>,
    pub absence_cause: Option<AbsenceCause>,
    pub suppressed: bool,
    pub stimulus: Option<StimulusRecord>,
    pub expected_response: ParticipantResponse,
    pub response: Option<ParticipantResponse>,
    pub started_at: u64,
    pub settled_at: u64,
    pub responded_at: Option<u64>,
}

impl TrialRecord {
    pub fn view(&self) -> StimulusView {
        StimulusView {
            user_woke: self.user_woke,
            timeline: self.stimulus.as_ref().map(|s| s.timeline.clone()),
        }
    }

    pub fn fill_response(&mut self, response: ParticipantResponse, at: u64) -> Result<(), ScenarioError> {
        if self.response.is_some() {
            return Err(ScenarioError::AlreadyResponded(self.index));
        }
        self.response = Some(response);
        self.responded_at = Some(at);
        Ok(())
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.response.map(|r| r == self.expected_response)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub timing: TimingParams,
    pub link: LinkModel,
    pub debounce_ms: u64,
    pub distractor_pool: Vec<PatternSpec>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            timing: TimingParams::default(),
            link: LinkModel::default(),
            debounce_ms: crate::agents::DEFAULT_DEBOUNCE_MS,
            distractor_pool: crate::study::default_pattern_pool(),
        }
    }
}

/// Participant's phone and watch, an attacker's look-alike phone, the radio
/// between them, and the clock.
#[derive(Debug, Clone)]
pub struct World {
    pub clock: VirtualClock,
    pub phone: PhoneAgent,
    pub phishing_phone: PhoneAgent,
    pub watch: WatchAgent,
    pub link: LinkModel,
    pub distractor_pool: Vec<PatternSpec>,
    protocol_rng: ChaCha8Rng,
}

pub(crate) const STREAM_DEVICES: u64 = 2;
pub(crate) const STREAM_PROTOCOL: u64 = 3;

impl World {
    /// Creates and pairs the devices from `seed` and enrolls `pattern`.
    pub fn new(
        config: &WorldConfig,
        seed: u64,
        pattern: PatternSpec,
        chosen_by_user: bool,
    ) -> Result<Self, ScenarioError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_DEVICES);
        let phone_id = DeviceIdentity::random(DeviceKind::Phone, &mut rng);
        let watch_id = DeviceIdentity::random(DeviceKind::Watch, &mut rng);
        let fake_id = DeviceIdentity::random(DeviceKind::Phone, &mut rng);

        let genuine = PairingRegistry::new()
            .pair_devices(&phone_id, &watch_id, 0, &mut rng)
            .map_err(AgentError::from)?;
        // the attacker's look-alike holds a pairing it made itself
        let forged = PairingRegistry::new()
            .pair_devices(&fake_id, &watch_id, 0, &mut rng)
            .map_err(AgentError::from)?;

        let mut phone = PhoneAgent::new(phone_id, config.debounce_ms);
        phone.attach_pairing(genuine.clone())?;
        let mut phishing_phone = PhoneAgent::new(fake_id, config.debounce_ms);
        phishing_phone.attach_pairing(forged)?;
        let mut watch = WatchAgent::new(watch_id, config.timing);
        watch.attach_pairing(genuine)?;
        watch.enroll(pattern, chosen_by_user)?;

        let mut protocol_rng = ChaCha8Rng::seed_from_u64(seed);
        protocol_rng.set_stream(STREAM_PROTOCOL);
        Ok(Self {
            clock: VirtualClock::new(),
            phone,
            phishing_phone,
            watch,
            link: config.link,
            distractor_pool: config.distractor_pool.clone(),
            protocol_rng,
        })
    }

    pub fn enrolled_timeline(&self) -> Result<VibrationTimeline, ScenarioError> {
        self.watch
            .enrolled_timeline()
            .ok_or_else(|| ScenarioError::WorldMisconfigured("watch has no enrolled pattern".into()))
    }

    /// Plays a supervisor-injected vibration right now.
    pub fn inject(&self, pattern: &PatternSpec) -> VibrationEvent {
        self.watch.inject(pattern, self.clock.now())
    }
}

#[derive(Debug, Clone)]
enum SimEvent {
    Wake(WokenDevice),
    PingArrival(AuthPing),
    Notification(PatternSpec),
    Inject(PatternSpec),
}

#[derive(Debug)]
struct Queued {
    at: u64,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // min-heap on (time, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Queued>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, at: u64, event: SimEvent) {
        self.heap.push(Queued {
            at,
            seq: self.next_seq,
            event,
        });
        self.next_seq += 1;
    }

    fn pop(&mut self) -> Option<Queued> {
        self.heap.pop()
    }
}

/// Runs one scenario starting at the world's current time and returns its
/// record with no response yet. The clock ends at the trial's settle time.
pub fn run_trial(
    index: u32,
    scenario: ScenarioId,
    world: &mut World,
    controls: &TrialControls,
    rng: &mut impl Rng,
) -> Result<TrialRecord, ScenarioError> {
    let enrolled = world
        .watch
        .enrolled_pattern()
        .cloned()
        .ok_or_else(|| ScenarioError::WorldMisconfigured("watch has no enrolled pattern".into()))?;
    if world.phone.pairing().is_none() {
        return Err(ScenarioError::WorldMisconfigured("participant phone is not paired".into()));
    }

    let start = world.clock.now();
    let spec = scenario.scenario();
    let mut queue = EventQueue::default();
    let mut wake = None;
    let mut absence_cause = None;
    let mut suppress = controls.suppress_next;
    let mut replacement = None;

    match scenario {
        ScenarioId::S1 | ScenarioId::S3 => {
            queue.push(start, SimEvent::Wake(WokenDevice::Genuine));
            wake = Some(WakeInfo {
                device: WokenDevice::Genuine,
                actor: if spec.user_initiates_wake {
                    WakeActor::Participant
                } else {
                    WakeActor::ThirdParty
                },
                at: start,
            });
        }
        ScenarioId::S2 => {
            let distractor = pick_distractor(&enrolled, &world.distractor_pool, rng)?;
            queue.push(start, SimEvent::Notification(distractor));
        }
        ScenarioId::S4 => {
            let device = match controls.absence_cause {
                AbsenceCause::PhishingPhone => WokenDevice::Phishing,
                AbsenceCause::SupervisorSuppression => {
                    suppress = true;
                    WokenDevice::Genuine
                }
            };
            absence_cause = Some(controls.absence_cause);
            queue.push(start, SimEvent::Wake(device));
            wake = Some(WakeInfo {
                device,
                actor: WakeActor::Participant,
                at: start,
            });
        }
        ScenarioId::S5 => {
            suppress = true;
            replacement = Some(pick_distractor(&enrolled, &world.distractor_pool, rng)?);
            queue.push(start, SimEvent::Wake(WokenDevice::Genuine));
            wake = Some(WakeInfo {
                device: WokenDevice::Genuine,
                actor: WakeActor::Participant,
                at: start,
            });
        }
    }

    let mut played: Vec<VibrationEvent> = Vec::new();
    let mut suppressed = false;
    let mut last_event_at = start;

    while let Some(Queued { at, event, .. }) = queue.pop() {
        world.clock.advance_to(at)?;
        last_event_at = at;
        match event {
            SimEvent::Wake(device) => {
                let phone = match device {
                    WokenDevice::Genuine => &mut world.phone,
                    WokenDevice::Phishing => &mut world.phishing_phone,
                };
                if let Some(ping) = phone.on_screen_wake(at, &mut world.protocol_rng)? {
                    let outcome = transmit(&ping, &world.link, &mut world.protocol_rng, at);
                    for arrival in outcome.arrivals() {
                        queue.push(arrival, SimEvent::PingArrival(ping.clone()));
                    }
                }
            }
            SimEvent::PingArrival(ping) => {
                if let Some(ev) = world.watch.on_ping_received(&ping, at)? {
                    if suppress {
                        suppress = false;
                        suppressed = true;
                        if let Some(pattern) = replacement.take() {
                            queue.push(at, SimEvent::Inject(pattern));
                        }
                    } else {
                        played.push(ev);
                    }
                }
            }
            SimEvent::Notification(pattern) => played.push(world.watch.on_notification(&pattern, at)),
            SimEvent::Inject(pattern) => played.push(world.watch.inject(&pattern, at)),
        }
    }

    let settled_at = played
        .iter()
        .map(|ev| ev.at + ev.timeline.total_duration_ms())
        .max()
        .unwrap_or(last_event_at)
        .max(last_event_at);
    world.clock.advance_to(settled_at)?;

    Ok(TrialRecord {
        index,
        scenario,
        user_woke: spec.user_initiates_wake,
        wake,
        absence_cause,
        suppressed,
        stimulus: played.into_iter().next().map(StimulusRecord::from),
        expected_response: scenario.expected_response(),
        response: None,
        started_at: start,
        settled_at,
        responded_at: None,
    })
}

/// Engine and perceiver draws come from separate streams so that protocol
/// randomness never shifts a participant's answers.
#[derive(Debug, Clone)]
pub struct SessionRng {
    pub engine: ChaCha8Rng,
    pub perceiver: ChaCha8Rng,
}

pub(crate) const STREAM_ENGINE: u64 = 4;
pub(crate) const STREAM_PERCEIVER: u64 = 5;

impl SessionRng {
    pub fn from_seed(seed: u64) -> Self {
        let mut engine = ChaCha8Rng::seed_from_u64(seed);
        engine.set_stream(STREAM_ENGINE);
        let mut perceiver = ChaCha8Rng::seed_from_u64(seed);
        perceiver.set_stream(STREAM_PERCEIVER);
        Self { engine, perceiver }
    }
}

/// Executes `schedule` in order with a random inter-trial pause before each
/// trial, and lets the perceiver answer every trial.
pub fn run_session(
    schedule: &SessionSchedule,
    world: &mut World,
    profile: &PerceiverProfile,
    absence_policy: AbsencePolicy,
    rng: &mut SessionRng,
) -> Result<Vec<TrialRecord>, ScenarioError> {
    let enrolled = world.enrolled_timeline()?;
    let mut records = Vec::with_capacity(schedule.trials.len());
    let mut s4_seen = 0;
    for (i, &scenario) in schedule.trials.iter().enumerate() {
        let gap = rng.engine.gen_range(TRIAL_GAP_MS.0..=TRIAL_GAP_MS.1);
        world.clock.advance_by(gap);
        let controls = TrialControls {
            absence_cause: absence_policy.cause_for(s4_seen),
            suppress_next: false,
        };
        if scenario == ScenarioId::S4 {
            s4_seen += 1;
        }
        let mut record = run_trial(i as u32 + 1, scenario, world, &controls, &mut rng.engine)?;
        let response = perceive(&record.view(), &enrolled, profile, &mut rng.perceiver);
        world.clock.advance_by(RESPONSE_DELAY_MS);
        record.fill_response(response, world.clock.now())?;
        records.push(record);
    }
    Ok(records)
}

/// Whether the stimulus matches the enrolled timeline exactly.
pub fn stimulus_is_enrolled(record: &TrialRecord, timing: &TimingParams, enrolled: &PatternSpec) -> Option<bool> {
    let expected = render_timeline(enrolled, timing);
    record
        .stimulus
        .as_ref()
        .map(|s| timelines_match(&s.timeline, &expected, 0))
}

/// Splits a 64-bit seed per participant without correlating neighbours.
pub fn participant_seed(session_seed: u64, participant: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = session_seed ^ (u64::from(participant).wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fresh generator on a dedicated stream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
