//! Simulated participant.
//!
//! A perceiver sees only what a person wearing the watch would notice:
//! whether they just woke their phone, and the burst schedule that played
//! (if any). It classifies that into one of the five situations, then
//! answers correctly with the profile's probability for that situation and
//! otherwise gives the single complementary wrong answer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pattern::{timelines_match, VibrationTimeline};
use crate::scenario::{ScenarioCounts, ScenarioId, StimulusView};

/// Reported recognition rates per scenario, S1..S5.
pub const REFERENCE_RATES: [f64; 5] = [0.99, 0.97, 0.98, 0.91, 0.94];

pub const DAILY_TARGET: f64 = 0.97;
pub const SOMETIMES_TARGET: f64 = 0.99;
pub const NO_EXPERIENCE_TARGET: f64 = 0.89;
/// Overall error rates of 2% (chose own pattern) and 5% (assigned).
pub const CHOSEN_TARGET: f64 = 0.98;
pub const ASSIGNED_TARGET: f64 = 0.95;

const CALIBRATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipantResponse {
    /// Felt their own pattern right after waking the phone.
    RecognizedOwnOnWake,
    /// Expected their pattern on wake but it was missing or different.
    ReportAbsentOrWrong,
    /// Felt their own pattern without having touched the phone.
    ReportUnexpectedOwn,
    NoReport,
}

impl ParticipantResponse {
    pub const ALL: [ParticipantResponse; 4] = [
        ParticipantResponse::RecognizedOwnOnWake,
        ParticipantResponse::ReportAbsentOrWrong,
        ParticipantResponse::ReportUnexpectedOwn,
        ParticipantResponse::NoReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParticipantResponse::RecognizedOwnOnWake => "recognized_own_on_wake",
            ParticipantResponse::ReportAbsentOrWrong => "report_absent_or_wrong",
            ParticipantResponse::ReportUnexpectedOwn => "report_unexpected_own",
            ParticipantResponse::NoReport => "no_report",
        }
    }
}

impl fmt::Display for ParticipantResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParticipantResponse {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParticipantResponse::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ProfileError::InvalidValue {
                key: "response".into(),
                value: s.into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperienceLevel {
    #[serde(rename = "none")]
    NoPrior,
    Sometimes,
    Daily,
}

impl ExperienceLevel {
    pub const ALL: [ExperienceLevel; 3] = [
        ExperienceLevel::Daily,
        ExperienceLevel::Sometimes,
        ExperienceLevel::NoPrior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperienceLevel::NoPrior => "none",
            ExperienceLevel::Sometimes => "sometimes",
            ExperienceLevel::Daily => "daily",
        }
    }

    /// Overall correct-recognition rate reported for the group.
    pub fn target_rate(self) -> f64 {
        match self {
            ExperienceLevel::NoPrior => NO_EXPERIENCE_TARGET,
            ExperienceLevel::Sometimes => SOMETIMES_TARGET,
            ExperienceLevel::Daily => DAILY_TARGET,
        }
    }
}

impl fmt::Display for ExperienceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperienceLevel {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperienceLevel::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| ProfileError::InvalidValue {
                key: "experience".into(),
                value: s.into(),
            })
    }
}

pub fn pattern_choice_target(chosen_by_user: bool) -> f64 {
    if chosen_by_user {
        CHOSEN_TARGET
    } else {
        ASSIGNED_TARGET
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("probability for {scenario} is {value}, must be within [0, 1]")]
    ProbabilityOutOfRange { scenario: ScenarioId, value: f64 },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value {value:?} for {key}")]
    InvalidValue { key: String, value: String },
    #[error("missing key {0}")]
    MissingKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CalibrationError {
    #[error("overall rate {target} is not reachable (achievable range [{min}, {max}])")]
    UnreachableTarget { target: f64, min: f64, max: f64 },
}

/// Correct-response probability per scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceiverProfile {
    pub p_correct: [f64; 5],
    #[serde(default)]
    pub experience: Option<ExperienceLevel>,
    #[serde(default)]
    pub pattern_chosen_by_user: Option<bool>,
}

impl Default for PerceiverProfile {
    fn default() -> Self {
        Self {
            p_correct: REFERENCE_RATES,
            experience: None,
            pattern_chosen_by_user: None,
        }
    }
}

impl PerceiverProfile {
    pub fn new(p_correct: [f64; 5]) -> Result<Self, ProfileError> {
        let profile = Self {
            p_correct,
            experience: None,
            pattern_chosen_by_user: None,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Every probability is 1.
    pub fn perfect() -> Self {
        Self {
            p_correct: [1.0; 5],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (scenario, &p) in ScenarioId::ALL.iter().zip(&self.p_correct) {
            if !(0.0..=1.0).contains(&p) {
                return Err(ProfileError::ProbabilityOutOfRange {
                    scenario: *scenario,
                    value: p,
                });
            }
        }
        Ok(())
    }

    pub fn p(&self, scenario: ScenarioId) -> f64 {
        self.p_correct[scenario.index()]
    }

    /// Expected overall correct rate under a trial mix.
    pub fn mix_rate(&self, mix: &ScenarioCounts) -> f64 {
        weighted_rate(&self.p_correct, mix)
    }

    /// Key-value text form, one `key = value` per line.
    pub fn to_profile_text(&self) -> String {
        let mut out = String::new();
        for (scenario, p) in ScenarioId::ALL.iter().zip(&self.p_correct) {
            out.push_str(&format!("p_{} = {p}\n", scenario.as_str().to_lowercase()));
        }
        if let Some(e) = self.experience {
            out.push_str(&format!("experience = {e}\n"));
        }
        if let Some(c) = self.pattern_chosen_by_user {
            out.push_str(&format!("chosen = {c}\n"));
        }
        out
    }

    /// Parses the key-value form. `#` starts a comment; all five
    /// probabilities are required, `experience` and `chosen` are optional.
    pub fn parse_profile_text(text: &str) -> Result<Self, ProfileError> {
        let mut probs: [Option<f64>; 5] = [None; 5];
        let mut experience = None;
        let mut chosen = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ProfileError::Syntax {
                line: n + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let invalid = || ProfileError::InvalidValue {
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "experience" => {
                    experience = match value {
                        "unspecified" => None,
                        v => Some(v.parse()?),
                    }
                }
                "chosen" => {
                    chosen = match value {
                        "true" => Some(true),
                        "false" => Some(false),
                        "unspecified" => None,
                        _ => return Err(invalid()),
                    }
                }
                k => {
                    let idx = ScenarioId::ALL
                        .iter()
                        .position(|s| format!("p_{}", s.as_str().to_lowercase()) == k)
                        .ok_or_else(|| ProfileError::Syntax {
                            line: n + 1,
                            message: format!("unknown key {k:?}"),
                        })?;
                    probs[idx] = Some(value.parse().map_err(|_| invalid())?);
                }
            }
        }
        let mut p_correct = [0.0; 5];
        for (i, slot) in probs.iter().enumerate() {
            p_correct[i] = slot.ok_or_else(|| {
                ProfileError::MissingKey(format!("p_{}", ScenarioId::ALL[i].as_str().to_lowercase()))
            })?;
        }
        let profile = Self {
            p_correct,
            experience,
            pattern_chosen_by_user: chosen,
        };
        profile.validate()?;
        Ok(profile)
    }
}

fn weighted_rate(p: &[f64; 5], mix: &ScenarioCounts) -> f64 {
    let total = mix.total() as f64;
    if total == 0.0 {
        return 0.0;
    }
    ScenarioId::ALL
        .iter()
        .map(|&s| mix.get(s) as f64 * p[s.index()])
        .sum::<f64>()
        / total
}

/// What the wearer can tell apart, mapped onto the scenario it looks like.
/// `None` means nothing happened at all.
pub fn classify(view: &StimulusView, enrolled: &VibrationTimeline) -> Option<ScenarioId> {
    let own = view
        .timeline
        .as_ref()
        .map(|t| timelines_match(t, enrolled, 0));
    match (view.user_woke, own) {
        (true, Some(true)) => Some(ScenarioId::S1),
        (false, Some(false)) => Some(ScenarioId::S2),
        (false, Some(true)) => Some(ScenarioId::S3),
        (true, None) => Some(ScenarioId::S4),
        (true, Some(false)) => Some(ScenarioId::S5),
        (false, None) => None,
    }
}

/// Draws exactly one uniform number from `rng` per call.
pub fn perceive(
    view: &StimulusView,
    enrolled: &VibrationTimeline,
    profile: &PerceiverProfile,
    rng: &mut impl Rng,
) -> ParticipantResponse {
    let draw: f64 = rng.gen_range(0.0..1.0);
    match classify(view, enrolled) {
        Some(s) if draw < profile.p(s) => s.expected_response(),
        Some(s) => s.error_response(),
        None => ParticipantResponse::NoReport,
    }
}

/// Overall target for a cohort. With both factors given, their effects are
/// combined additively in log-odds around the base profile's own rate.
pub fn cohort_target(
    experience: Option<ExperienceLevel>,
    chosen: Option<bool>,
    base_rate: f64,
) -> Option<f64> {
    match (experience, chosen) {
        (None, None) => None,
        (Some(e), None) => Some(e.target_rate()),
        (None, Some(c)) => Some(pattern_choice_target(c)),
        (Some(e), Some(c)) => Some(logistic(
            logit(e.target_rate()) + logit(pattern_choice_target(c)) - logit(base_rate),
        )),
    }
}

/// Rescales `base` to a cohort's overall target under the default trial
/// mix. See [`calibrate_to_rate`].
pub fn profile_for(
    experience: Option<ExperienceLevel>,
    chosen: Option<bool>,
    base: &PerceiverProfile,
) -> Result<PerceiverProfile, CalibrationError> {
    let mix = ScenarioCounts::default();
    let mut out = match cohort_target(experience, chosen, base.mix_rate(&mix)) {
        Some(target) => calibrate_to_rate(base, target, &mix)?,
        None => base.clone(),
    };
    out.experience = experience;
    out.pattern_chosen_by_user = chosen;
    Ok(out)
}

/// Multiplies every scenario's odds p/(1-p) by one common factor, chosen so
/// that the mix-weighted correct rate equals `target`.
pub fn calibrate_to_rate(
    base: &PerceiverProfile,
    target: f64,
    mix: &ScenarioCounts,
) -> Result<PerceiverProfile, CalibrationError> {
    let p = base.p_correct;
    let total = mix.total() as f64;
    let weight = |s: ScenarioId| {
        if total == 0.0 {
            0.0
        } else {
            mix.get(s) as f64 / total
        }
    };
    // limits as the odds factor goes to 0 and to infinity
    let min: f64 = ScenarioId::ALL
        .iter()
        .filter(|s| p[s.index()] >= 1.0)
        .map(|&s| weight(s))
        .sum();
    let max: f64 = ScenarioId::ALL
        .iter()
        .filter(|s| p[s.index()] > 0.0)
        .map(|&s| weight(s))
        .sum();
    let unreachable = CalibrationError::UnreachableTarget { target, min, max };
    if !target.is_finite() || target < min - CALIBRATION_TOLERANCE || target > max + CALIBRATION_TOLERANCE {
        return Err(unreachable);
    }

    let shifted = |shift: f64| -> [f64; 5] {
        let mut out = p;
        for v in out.iter_mut() {
            if *v > 0.0 && *v < 1.0 {
                *v = logistic(logit(*v) + shift);
            }
        }
        out
    };
    let rate_at = |shift: f64| weighted_rate(&shifted(shift), mix);
    let mut result = base.clone();

    if (rate_at(0.0) - target).abs() <= f64::EPSILON {
        return Ok(result);
    }
    if (target - max).abs() <= CALIBRATION_TOLERANCE {
        result.p_correct = p.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        return Ok(result);
    }
    if (target - min).abs() <= CALIBRATION_TOLERANCE {
        result.p_correct = p.map(|v| if v >= 1.0 { 1.0 } else { 0.0 });
        return Ok(result);
    }

    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while rate_at(lo) > target {
        lo *= 2.0;
    }
    while rate_at(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let shift = 0.5 * (lo + hi);
    result.p_correct = shifted(shift);
    if (rate_at(shift) - target).abs() > CALIBRATION_TOLERANCE {
        return Err(unreachable);
    }
    Ok(result)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
