//! Phone and watch state machines.
//!
//! The phone only knows that it is paired and how many pings it has sent.
//! The authentication pattern lives on the watch and never crosses the link:
//! a ping is a bare authenticated trigger and the watch renders its own
//! enrolled pattern on acceptance.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{
    create_ping, verify_ping, AuthPing, DeviceId, DeviceIdentity, LinkError, PairingRecord,
    ReplayState, SendState, Verdict,
};
use crate::pattern::{render_timeline, PatternSpec, TimingParams, VibrationTimeline};

pub const DEFAULT_DEBOUNCE_MS: u64 = 2_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("device {0} is not paired")]
    NotPaired(DeviceId),
    #[error("watch {0} already has an enrolled pattern")]
    AlreadyEnrolled(DeviceId),
    #[error("watch {0} has no enrolled pattern")]
    NotEnrolled(DeviceId),
    #[error("pairing does not belong to device {0}")]
    ForeignPairing(DeviceId),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VibrationSource {
    AuthPing,
    Notification,
    Injected,
}

/// A vibration the watch actually played. `source`, `pattern`, and
/// `trigger_counter` are ground truth for bookkeeping only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VibrationEvent {
    pub at: u64,
    pub source: VibrationSource,
    pub pattern: PatternSpec,
    pub timeline: VibrationTimeline,
    /// Counter of the accepted ping, for `auth_ping` events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_counter: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct PhoneAgent {
    identity: DeviceIdentity,
    pairing: Option<PairingRecord>,
    send: SendState,
    last_wake_at: Option<u64>,
    debounce_ms: u64,
}

/// Serializable view of a phone. Contains no key material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSnapshot {
    pub identity: DeviceIdentity,
    pub paired_watch: Option<DeviceId>,
    pub send_counter: u64,
    pub last_wake_at: Option<u64>,
    pub debounce_ms: u64,
}

impl PhoneAgent {
    pub fn new(identity: DeviceIdentity, debounce_ms: u64) -> Self {
        Self {
            identity,
            pairing: None,
            send: SendState::default(),
            last_wake_at: None,
            debounce_ms,
        }
    }

    pub fn identity(&self) -> &DeviceIdentity {
        &self.identity
    }

    pub fn attach_pairing(&mut self, pairing: PairingRecord) -> Result<(), AgentError> {
        if pairing.phone_id != self.identity.id {
            return Err(AgentError::ForeignPairing(self.identity.id));
        }
        self.pairing = Some(pairing);
        Ok(())
    }

    pub fn pairing(&self) -> Option<&PairingRecord> {
        self.pairing.as_ref()
    }

    /// Emits a ping with the next counter unless the previous emitted wake
    /// is less than `debounce_ms` ago.
    pub fn on_screen_wake(
        &mut self,
        now: u64,
        rng: &mut impl RngCore,
    ) -> Result<Option<AuthPing>, AgentError> {
        let pairing = self
            .pairing
            .as_ref()
            .ok_or(AgentError::NotPaired(self.identity.id))?;
        if let Some(last) = self.last_wake_at {
            if now.saturating_sub(last) < self.debounce_ms {
                return Ok(None);
            }
        }
        let counter = self.send.last_counter + 1;
        let ping = create_ping(pairing, &mut self.send, counter, now, rng)?;
        self.last_wake_at = Some(now);
        Ok(Some(ping))
    }

    pub fn snapshot(&self) -> PhoneSnapshot {
        PhoneSnapshot {
            identity: self.identity,
            paired_watch: self.pairing.as_ref().map(|p| p.watch_id),
            send_counter: self.send.last_counter,
            last_wake_at: self.last_wake_at,
            debounce_ms: self.debounce_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrollment {
    pub pattern: PatternSpec,
    pub chosen_by_user: bool,
}

#[derive(Debug, Clone)]
pub struct WatchAgent {
    identity: DeviceIdentity,
    pairing: Option<PairingRecord>,
    replay: ReplayState,
    enrollment: Option<Enrollment>,
    timing: TimingParams,
    last_verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WatchSnapshot {
    pub identity: DeviceIdentity,
    pub paired_phone: Option<DeviceId>,
    pub replay: ReplayState,
    pub enrollment: Option<Enrollment>,
    pub timing: TimingParams,
}

impl WatchAgent {
    pub fn new(identity: DeviceIdentity, timing: TimingParams) -> Self {
        Self {
            identity,
            pairing: None,
            replay: ReplayState::new(),
            enrollment: None,
            timing,
            last_verdict: None,
        }
    }

    pub fn identity(&self) -> &DeviceIdentity {
        &self.identity
    }

    pub fn attach_pairing(&mut self, pairing: PairingRecord) -> Result<(), AgentError> {
        if pairing.watch_id != self.identity.id {
            return Err(AgentError::ForeignPairing(self.identity.id));
        }
        self.pairing = Some(pairing);
        self.replay = ReplayState::new();
        Ok(())
    }

    pub fn enroll(&mut self, pattern: PatternSpec, chosen_by_user: bool) -> Result<(), AgentError> {
        if self.pairing.is_none() {
            return Err(AgentError::NotPaired(self.identity.id));
        }
        if self.enrollment.is_some() {
            return Err(AgentError::AlreadyEnrolled(self.identity.id));
        }
        self.enrollment = Some(Enrollment {
            pattern,
            chosen_by_user,
        });
        Ok(())
    }

    pub fn enrollment(&self) -> Option<&Enrollment> {
        self.enrollment.as_ref()
    }

    pub fn enrolled_pattern(&self) -> Option<&PatternSpec> {
        self.enrollment.as_ref().map(|e| &e.pattern)
    }

    pub fn enrolled_timeline(&self) -> Option<VibrationTimeline> {
        self.enrolled_pattern()
            .map(|p| render_timeline(p, &self.timing))
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn replay_state(&self) -> &ReplayState {
        &self.replay
    }

    /// Verdict of the most recent ping this watch checked.
    pub fn last_verdict(&self) -> Option<Verdict> {
        self.last_verdict
    }

    /// Rejected pings are dropped silently: the user-facing signal for a
    /// bad ping is the absence of the pattern.
    pub fn on_ping_received(
        &mut self,
        ping: &AuthPing,
        now: u64,
    ) -> Result<Option<VibrationEvent>, AgentError> {
        let enrollment = self
            .enrollment
            .as_ref()
            .ok_or(AgentError::NotEnrolled(self.identity.id))?;
        let pairing = self
            .pairing
            .as_ref()
            .ok_or(AgentError::NotPaired(self.identity.id))?;
        let verdict = verify_ping(pairing, ping, &mut self.replay);
        self.last_verdict = Some(verdict);
        if verdict != Verdict::Accept {
            return Ok(None);
        }
        Ok(Some(VibrationEvent {
            at: now,
            source: VibrationSource::AuthPing,
            pattern: enrollment.pattern.clone(),
            timeline: render_timeline(&enrollment.pattern, &self.timing),
            trigger_counter: Some(ping.counter),
        }))
    }

    pub fn on_notification(&self, pattern: &PatternSpec, now: u64) -> VibrationEvent {
        self.play(pattern, VibrationSource::Notification, now)
    }

    /// Supervisor-injected vibration.
    pub fn inject(&self, pattern: &PatternSpec, now: u64) -> VibrationEvent {
        self.play(pattern, VibrationSource::Injected, now)
    }

    fn play(&self, pattern: &PatternSpec, source: VibrationSource, now: u64) -> VibrationEvent {
        VibrationEvent {
            at: now,
            source,
            pattern: pattern.clone(),
            timeline: render_timeline(pattern, &self.timing),
            trigger_counter: None,
        }
    }

    pub fn snapshot(&self) -> WatchSnapshot {
        WatchSnapshot {
            identity: self.identity,
            paired_phone: self.pairing.as_ref().map(|p| p.phone_id),
            replay: self.replay.clone(),
            enrollment: self.enrollment.clone(),
            timing: self.timing,
        }
    }
}

/// Checks a phone snapshot for traces of a watch-side secret: the pattern's
/// canonical form as a JSON string, or its burst schedule as a run of
/// numbers inside any JSON array.
pub fn snapshot_leaks_pattern(
    snapshot: &PhoneSnapshot,
    pattern: &PatternSpec,
    timing: &TimingParams,
) -> bool {
    let value = serde_json::to_value(snapshot).expect("snapshot serializes");
    let text = value.to_string();
    let quoted = serde_json::to_string(&pattern.canonical()).expect("string serializes");
    if text.contains(&quoted) {
        return true;
    }
    let schedule: Vec<u64> = render_timeline(pattern, timing)
        .bursts()
        .iter()
        .flat_map(|b| [b.start_ms, b.duration_ms])
        .collect();
    let group_sizes: Vec<u64> = pattern.groups().iter().map(|&g| u64::from(g)).collect();
    json_arrays_contain(&value, &schedule) || (group_sizes.len() > 1 && json_arrays_contain(&value, &group_sizes))
}

fn json_arrays_contain(value: &serde_json::Value, needle: &[u64]) -> bool {
    use serde_json::Value;
    match value {
        Value::Array(items) => {
            let flat: Vec<u64> = flatten_numbers(items);
            flat.windows(needle.len()).any(|w| w == needle)
                || items.iter().any(|v| json_arrays_contain(v, needle))
        }
        Value::Object(map) => map.values().any(|v| json_arrays_contain(v, needle)),
        _ => false,
    }
}

fn flatten_numbers(items: &[serde_json::Value]) -> Vec<u64> {
    let mut out = Vec::new();
    for item in items {
        match item {
            serde_json::Value::Number(n) => out.extend(n.as_u64()),
            serde_json::Value::Array(inner) => out.extend(flatten_numbers(inner)),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{DeviceKind, PairingRegistry};
    use crate::pattern::{parse_pattern, total_duration};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Pair {
        phone: PhoneAgent,
        watch: WatchAgent,
        rng: ChaCha8Rng,
    }

    fn pair(seed: u64) -> Pair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phone_id = DeviceIdentity::random(DeviceKind::Phone, &mut rng);
        let watch_id = DeviceIdentity::random(DeviceKind::Watch, &mut rng);
        let record = PairingRegistry::new()
            .pair_devices(&phone_id, &watch_id, 0, &mut rng)
            .unwrap();
        let mut phone = PhoneAgent::new(phone_id, DEFAULT_DEBOUNCE_MS);
        let mut watch = WatchAgent::new(watch_id, TimingParams::default());
        phone.attach_pairing(record.clone()).unwrap();
        watch.attach_pairing(record).unwrap();
        Pair { phone, watch, rng }
    }

    #[test]
    fn enroll_once() {
        let mut p = pair(1);
        p.watch.enroll(parse_pattern("1 3").unwrap(), true).unwrap();
        assert_eq!(p.watch.enrolled_pattern().unwrap().canonical(), "1 3");
        assert!(p.watch.enrollment().unwrap().chosen_by_user);
        assert_eq!(
            p.watch.enroll(parse_pattern("2").unwrap(), false),
            Err(AgentError::AlreadyEnrolled(p.watch.identity().id))
        );
    }

    #[test]
    fn enroll_requires_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut watch = WatchAgent::new(
            DeviceIdentity::random(DeviceKind::Watch, &mut rng),
            TimingParams::default(),
        );
        assert!(matches!(
            watch.enroll(parse_pattern("2").unwrap(), true),
            Err(AgentError::NotPaired(_))
        ));
    }

    #[test]
    fn phone_snapshot_has_no_pattern() {
        let mut p = pair(2);
        let pattern = parse_pattern("1 3").unwrap();
        p.watch.enroll(pattern.clone(), false).unwrap();
        p.phone.on_screen_wake(0, &mut p.rng).unwrap();
        let snap = p.phone.snapshot();
        assert!(!snapshot_leaks_pattern(&snap, &pattern, &TimingParams::default()));
        let json = serde_json::to_string(&snap).unwrap();
        assert!(!json.contains("1 3"));
        assert!(!json.contains("shared_key"));
    }

    #[test]
    fn leak_detector_fires_on_planted_secret() {
        #[derive(Serialize)]
        struct Leaky<'a> {
            snap: &'a PhoneSnapshot,
            pattern: String,
        }
        let p = pair(2);
        let pattern = parse_pattern("1 3").unwrap();
        let snap = p.phone.snapshot();
        let text = serde_json::to_value(Leaky {
            snap: &snap,
            pattern: pattern.canonical(),
        })
        .unwrap();
        assert!(text.to_string().contains("\"1 3\""));
        let schedule = serde_json::json!({"x": [[0, 60], [260, 60], [380, 60], [500, 60]]});
        assert!(json_arrays_contain(&schedule, &[0, 60, 260, 60, 380, 60, 500, 60]));
        assert!(!json_arrays_contain(&schedule, &[0, 60, 120, 60]));
    }

    #[test]
    fn wake_debounce() {
        let mut p = pair(3);
        let first = p.phone.on_screen_wake(0, &mut p.rng).unwrap().unwrap();
        assert_eq!(first.counter, 1);
        assert!(p
            .phone
            .on_screen_wake(DEFAULT_DEBOUNCE_MS - 1, &mut p.rng)
            .unwrap()
            .is_none());
        let second = p
            .phone
            .on_screen_wake(DEFAULT_DEBOUNCE_MS, &mut p.rng)
            .unwrap()
            .unwrap();
        assert_eq!(second.counter, 2);
    }

    #[test]
    fn unpaired_phone_cannot_wake() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut phone = PhoneAgent::new(
            DeviceIdentity::random(DeviceKind::Phone, &mut rng),
            DEFAULT_DEBOUNCE_MS,
        );
        assert!(matches!(
            phone.on_screen_wake(0, &mut rng),
            Err(AgentError::NotPaired(_))
        ));
    }

    #[test]
    fn ping_plays_enrolled_pattern() {
        let mut p = pair(6);
        p.watch.enroll(parse_pattern("2").unwrap(), true).unwrap();
        let ping = p.phone.on_screen_wake(0, &mut p.rng).unwrap().unwrap();
        let ev = p.watch.on_ping_received(&ping, 40).unwrap().unwrap();
        assert_eq!(ev.source, VibrationSource::AuthPing);
        assert_eq!(total_duration(&ev.timeline), 180);
        assert_eq!(ev.trigger_counter, Some(1));
        assert_eq!(ev.at, 40);
        // duplicate delivery of the same ping
        assert!(p.watch.on_ping_received(&ping, 45).unwrap().is_none());
        assert_eq!(
            p.watch.last_verdict(),
            Some(Verdict::Reject(crate::link::RejectReason::StaleCounter))
        );
    }

    #[test]
    fn ping_before_enrollment() {
        let mut p = pair(6);
        let ping = p.phone.on_screen_wake(0, &mut p.rng).unwrap().unwrap();
        assert!(matches!(
            p.watch.on_ping_received(&ping, 1),
            Err(AgentError::NotEnrolled(_))
        ));
    }

    #[test]
    fn phishing_phone_is_silent() {
        let mut genuine = pair(7);
        genuine.watch.enroll(parse_pattern("2").unwrap(), true).unwrap();
        // attacker pairs a look-alike phone with a watch carrying the victim's id
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let fake_phone = DeviceIdentity::random(DeviceKind::Phone, &mut rng);
        let record = PairingRegistry::new()
            .pair_devices(&fake_phone, genuine.watch.identity(), 0, &mut rng)
            .unwrap();
        let mut phisher = PhoneAgent::new(fake_phone, DEFAULT_DEBOUNCE_MS);
        phisher.attach_pairing(record).unwrap();
        for i in 0..50 {
            let ping = phisher
                .on_screen_wake(i * DEFAULT_DEBOUNCE_MS, &mut rng)
                .unwrap()
                .unwrap();
            assert!(genuine.watch.on_ping_received(&ping, i).unwrap().is_none());
        }
        assert_eq!(genuine.watch.replay_state().highest_accepted_counter(), 0);
    }

    #[test]
    fn notifications() {
        let mut p = pair(8);
        p.watch.enroll(parse_pattern("2").unwrap(), true).unwrap();
        let enrolled = p.watch.enrolled_timeline().unwrap();
        let other = p.watch.on_notification(&parse_pattern("1 1").unwrap(), 10);
        assert!(!crate::pattern::timelines_match(&other.timeline, &enrolled, 0));
        let same = p.watch.on_notification(&parse_pattern("2").unwrap(), 1_010);
        assert!(crate::pattern::timelines_match(&same.timeline, &enrolled, 0));
        assert_eq!(same.source, VibrationSource::Notification);
        assert!(other.at < same.at);
        assert_eq!(p.watch.inject(&parse_pattern("2").unwrap(), 5).source, VibrationSource::Injected);
    }

    #[test]
    fn foreign_pairing_rejected() {
        let p = pair(9);
        let q = pair(10);
        let mut phone = p.phone.clone();
        assert!(matches!(
            phone.attach_pairing(q.phone.pairing().unwrap().clone()),
            Err(AgentError::ForeignPairing(_))
        ));
    }
}
