//! Multi-participant simulated study runs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::LinkModel;
use crate::metrics::{
    aggregate, compare_to_reference, render_report_table, AggregateReport, Comparison, MetricsError,
    ReferenceTargets, SessionHeader, SessionLog, SessionMode, SCHEMA_VERSION,
};
use crate::pattern::{parse_pattern, PatternSpec, TimingParams};
use crate::perceiver::{profile_for, CalibrationError, ExperienceLevel, PerceiverProfile, ProfileError};
use crate::scenario::{
    build_schedule, participant_seed, run_session, stream_rng, AbsencePolicy, ScenarioCounts, ScenarioError,
    SessionRng, World,
};

const STREAM_ASSIGNMENT: u64 = 6;

/// Patterns handed out (or offered for choice) when none is given.
pub fn default_pattern_pool() -> Vec<PatternSpec> {
    ["2", "1 3"]
        .iter()
        .map(|p| parse_pattern(p).expect("built-in pattern parses"))
        .collect()
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// How perceiver profiles are assigned to participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortPolicy {
    /// Every participant uses the base profile unchanged.
    #[default]
    Uniform,
    /// Experience levels in a 9 / 8 / 13 split (daily / sometimes / none)
    /// per block of 30, each profile rescaled to its cohort's target.
    Stratified,
}

/// Who picks the enrolled pattern.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternPolicy {
    /// Odd participant ids choose, even ids are assigned.
    #[default]
    Mixed,
    Chosen,
    Assigned,
    /// Everyone enrolls this pattern.
    Explicit { pattern: PatternSpec, chosen: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSeedPolicy {
    /// Same trial order for every participant.
    #[default]
    Global,
    PerParticipant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub participants: u32,
    pub counts: ScenarioCounts,
    pub timing: TimingParams,
    pub link: LinkModel,
    pub debounce_ms: u64,
    pub base_profile: PerceiverProfile,
    pub cohort_policy: CohortPolicy,
    pub pattern_policy: PatternPolicy,
    pub pattern_pool: Vec<PatternSpec>,
    pub distractor_pool: Vec<PatternSpec>,
    pub schedule_seed_policy: ScheduleSeedPolicy,
    pub absence_policy: AbsencePolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            participants: 30,
            counts: ScenarioCounts::default(),
            timing: TimingParams::default(),
            link: LinkModel::default(),
            debounce_ms: crate::agents::DEFAULT_DEBOUNCE_MS,
            base_profile: PerceiverProfile::default(),
            cohort_policy: CohortPolicy::default(),
            pattern_policy: PatternPolicy::default(),
            pattern_pool: default_pattern_pool(),
            distractor_pool: default_pattern_pool(),
            schedule_seed_policy: ScheduleSeedPolicy::default(),
            absence_policy: AbsencePolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), StudyError> {
        if self.participants == 0 {
            return Err(StudyError::Config("participants must be at least 1".into()));
        }
        if self.counts.total() == 0 {
            return Err(StudyError::Config("scenario counts sum to zero".into()));
        }
        if self.pattern_pool.is_empty() && !matches!(self.pattern_policy, PatternPolicy::Explicit { .. }) {
            return Err(StudyError::Config("pattern pool is empty".into()));
        }
        self.base_profile.validate()?;
        // every enrollable pattern needs some other pattern to act as distractor
        let enrollable: Vec<&PatternSpec> = match &self.pattern_policy {
            PatternPolicy::Explicit { pattern, .. } => vec![pattern],
            _ => self.pattern_pool.iter().collect(),
        };
        let needs_distractor = self.counts.get(crate::scenario::ScenarioId::S2) > 0
            || self.counts.get(crate::scenario::ScenarioId::S5) > 0;
        if needs_distractor {
            for p in enrollable {
                if !self.distractor_pool.iter().any(|d| d != p) {
                    return Err(StudyError::Config(format!(
                        "distractor pool has no pattern other than \"{p}\""
                    )));
                }
            }
        }
        Ok(())
    }

    /// Header for participant `pid` (1-based), including its profile.
    pub fn participant_header(&self, pid: u32) -> Result<SessionHeader, StudyError> {
        let seed = participant_seed(self.seed, pid);
        let mut assign = stream_rng(seed, STREAM_ASSIGNMENT);
        let chosen = match &self.pattern_policy {
            PatternPolicy::Mixed => pid % 2 == 1,
            PatternPolicy::Chosen => true,
            PatternPolicy::Assigned => false,
            PatternPolicy::Explicit { chosen, .. } => *chosen,
        };
        let pattern = match &self.pattern_policy {
            PatternPolicy::Explicit { pattern, .. } => pattern.clone(),
            _ => self.pattern_pool[assign.gen_range(0..self.pattern_pool.len())].clone(),
        };
        let (experience, profile) = match self.cohort_policy {
            CohortPolicy::Uniform => (None, self.base_profile.clone()),
            CohortPolicy::Stratified => {
                let exp = stratified_experience(pid);
                (Some(exp), profile_for(Some(exp), Some(chosen), &self.base_profile)?)
            }
        };
        Ok(SessionHeader {
            schema_version: SCHEMA_VERSION,
            mode: SessionMode::Simulated,
            participant_id: pid,
            seed,
            schedule_seed: match self.schedule_seed_policy {
                ScheduleSeedPolicy::Global => self.seed,
                ScheduleSeedPolicy::PerParticipant => seed,
            },
            counts: self.counts,
            enrolled_pattern: pattern,
            chosen_by_user: chosen,
            experience,
            profile: Some(profile),
            timing: self.timing,
            link: self.link,
            debounce_ms: self.debounce_ms,
            distractor_pool: self.distractor_pool.clone(),
            absence_policy: self.absence_policy,
        })
    }
}

fn stratified_experience(pid: u32) -> ExperienceLevel {
    match (pid - 1) % 30 {
        0..=8 => ExperienceLevel::Daily,
        9..=16 => ExperienceLevel::Sometimes,
        _ => ExperienceLevel::NoPrior,
    }
}

/// Runs one simulated session from its header.
pub fn simulate_session(header: SessionHeader) -> Result<SessionLog, StudyError> {
    let profile = header
        .profile
        .clone()
        .ok_or_else(|| StudyError::Config("simulated session needs a perceiver profile".into()))?;
    let schedule = build_schedule(header.schedule_seed, &header.counts).for_participant(header.participant_id);
    let mut world = World::new(
        &header.world_config(),
        header.seed,
        header.enrolled_pattern.clone(),
        header.chosen_by_user,
    )?;
    let mut rng = SessionRng::from_seed(header.seed);
    let records = run_session(&schedule, &mut world, &profile, header.absence_policy, &mut rng)?;
    let mut log = SessionLog::with_header(header);
    for r in records {
        log.append_record(r)?;
    }
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub config: RunConfig,
    pub logs: Vec<SessionLog>,
    pub report: AggregateReport,
    pub comparison: Comparison,
}

pub fn simulate(config: &RunConfig) -> Result<StudyResult, StudyError> {
    config.validate()?;
    let logs = (1..=config.participants)
        .map(|pid| simulate_session(config.participant_header(pid)?))
        .collect::<Result<Vec<_>, _>>()?;
    let report = aggregate(&logs)?;
    let comparison = compare_to_reference(&report, &ReferenceTargets::default());
    Ok(StudyResult {
        config: config.clone(),
        logs,
        report,
        comparison,
    })
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    report: &'a AggregateReport,
    comparison: &'a Comparison,
}

pub fn session_file_name(pid: u32) -> String {
    format!("participant_{pid:03}.jsonl")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `config.json`, `sessions/participant_NNN.jsonl`, `report.json` and
/// `report.txt` under `dir`. Contents depend only on the result.
pub fn write_outputs(result: &StudyResult, dir: &Path) -> Result<(), StudyError> {
    let sessions = dir.join("sessions");
    fs::create_dir_all(&sessions).map_err(io_err(&sessions))?;
    let config_path = dir.join("config.json");
    let config = serde_json::to_string_pretty(&result.config).expect("config serializes") + "\n";
    fs::write(&config_path, config).map_err(io_err(&config_path))?;
    for log in &result.logs {
        let pid = log.header().map_or(0, |h| h.participant_id);
        log.write_to(&sessions.join(session_file_name(pid)))?;
    }
    write_report(&result.report, &result.comparison, dir)
}

pub fn write_report(report: &AggregateReport, comparison: &Comparison, dir: &Path) -> Result<(), StudyError> {
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&ReportFile { report, comparison }).expect("report serializes") + "\n";
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    let txt_path = dir.join("report.txt");
    let txt = render_report_table(report, comparison, &ReferenceTargets::default());
    fs::write(&txt_path, txt).map_err(io_err(&txt_path))?;
    Ok(())
}

/// Reads every `*.jsonl` under `dir` (sorted by name).
pub fn load_session_logs(dir: &Path) -> Result<Vec<SessionLog>, StudyError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| SessionLog::read_from(p).map_err(StudyError::from))
        .collect()
}
