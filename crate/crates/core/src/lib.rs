//! Phone-to-wearer haptic authentication: pattern codec, paired-device
//! protocol, scenario engine, simulated perceiver, and session metrics.

pub mod agents;
pub mod link;
pub mod live;
pub mod metrics;
pub mod pattern;
pub mod perceiver;
pub mod scenario;
pub mod stats;
pub mod study;

pub use agents::{PhoneAgent, VibrationEvent, VibrationSource, WatchAgent};
pub use link::{AuthPing, LinkModel, PairingRecord, PairingRegistry, ReplayState, Verdict};
pub use live::{ConsoleCommand, EventEnvelope, LiveSession, Rejection, SessionEvent, SessionSnapshot};
pub use metrics::{aggregate, AggregateReport, SessionHeader, SessionLog};
pub use pattern::{parse_pattern, render_timeline, PatternSpec, TimingParams, VibrationTimeline};
pub use perceiver::{ParticipantResponse, PerceiverProfile};
pub use scenario::{ScenarioCounts, ScenarioId, SessionSchedule, TrialRecord};
pub use study::{simulate, RunConfig, StudyResult};
