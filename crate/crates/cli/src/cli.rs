use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hapticauth_core::link::LinkModel;
use hapticauth_core::live::LiveSession;
use hapticauth_core::metrics::{aggregate, compare_to_reference, render_report_table, ReferenceTargets};
use hapticauth_core::pattern::{parse_pattern, PatternSpec, TimingParams};
use hapticauth_core::perceiver::{ExperienceLevel, PerceiverProfile};
use hapticauth_core::scenario::{build_schedule, AbsencePolicy, ScenarioCounts};
use hapticauth_core::study::{
    load_session_logs, session_file_name, simulate, write_outputs, write_report, CohortPolicy, PatternPolicy,
    RunConfig, ScheduleSeedPolicy,
};

use crate::service;

pub const OUT_DIR_ENV: &str = "HAPTICAUTH_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "hapticauth-out";

#[derive(Debug, Parser)]
#[command(name = "hapticauth", version, about = "Wristwatch-vibration phone authentication: study simulation and live sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a full study and write session logs plus a report.
    Simulate(SimulateArgs),
    /// Print the trial order for a seed.
    Schedule(ScheduleArgs),
    /// Aggregate existing session logs.
    Report(ReportArgs),
    /// Run a live, supervisor-controlled session over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PatternPolicyArg {
    Mixed,
    Chosen,
    Assigned,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CohortArg {
    Uniform,
    Stratified,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleSeedArg {
    Global,
    PerParticipant,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AbsenceArg {
    Alternate,
    Phishing,
    Suppression,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Trials per scenario, e.g. "S1=9,S2=6,S3=3,S4=3,S5=3".
    #[arg(long, value_parser = parse_counts)]
    pub counts: Option<ScenarioCounts>,
    /// Enroll this pattern for everyone, e.g. "1 3".
    #[arg(long, value_parser = parse_pattern_arg)]
    pub pattern: Option<PatternSpec>,
    /// With --pattern: mark it as assigned instead of chosen.
    #[arg(long, requires = "pattern")]
    pub assigned: bool,
    #[arg(long, value_enum, default_value = "mixed", conflicts_with = "pattern")]
    pub pattern_policy: PatternPolicyArg,
    /// Comma-separated pool patterns are drawn from, e.g. "2,1 3".
    #[arg(long, value_parser = parse_pool)]
    pub pattern_pool: Option<Vec<PatternSpec>>,
    #[arg(long, value_parser = parse_pool)]
    pub distractor_pool: Option<Vec<PatternSpec>>,
    #[arg(long, default_value_t = TimingParams::DEFAULT_BURST_MS)]
    pub burst_ms: u32,
    #[arg(long, default_value_t = TimingParams::DEFAULT_INTRA_GAP_MS)]
    pub intra_gap_ms: u32,
    #[arg(long, default_value_t = TimingParams::DEFAULT_INTER_GAP_MS)]
    pub inter_gap_ms: u32,
    #[arg(long, default_value_t = 20)]
    pub latency_min_ms: u64,
    #[arg(long, default_value_t = 80)]
    pub latency_max_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
    #[arg(long, default_value_t = 0.0)]
    pub duplicate: f64,
    #[arg(long, default_value_t = hapticauth_core::agents::DEFAULT_DEBOUNCE_MS)]
    pub debounce_ms: u64,
    #[arg(long, value_enum, default_value = "alternate")]
    pub absence: AbsenceArg,
}

impl StudyArgs {
    fn run_config(&self, participants: u32) -> Result<RunConfig> {
        let defaults = RunConfig::default();
        Ok(RunConfig {
            seed: self.seed,
            participants,
            counts: self.counts.unwrap_or_default(),
            timing: TimingParams::new(self.burst_ms, self.intra_gap_ms, self.inter_gap_ms)?,
            link: LinkModel::new(self.latency_min_ms, self.latency_max_ms, self.loss, self.duplicate)?,
            debounce_ms: self.debounce_ms,
            pattern_policy: match (&self.pattern, self.pattern_policy) {
                (Some(p), _) => PatternPolicy::Explicit {
                    pattern: p.clone(),
                    chosen: !self.assigned,
                },
                (None, PatternPolicyArg::Mixed) => PatternPolicy::Mixed,
                (None, PatternPolicyArg::Chosen) => PatternPolicy::Chosen,
                (None, PatternPolicyArg::Assigned) => PatternPolicy::Assigned,
            },
            pattern_pool: self.pattern_pool.clone().unwrap_or(defaults.pattern_pool),
            distractor_pool: self.distractor_pool.clone().unwrap_or(defaults.distractor_pool),
            absence_policy: match self.absence {
                AbsenceArg::Alternate => AbsencePolicy::Alternate,
                AbsenceArg::Phishing => AbsencePolicy::PhishingPhone,
                AbsenceArg::Suppression => AbsencePolicy::SupervisorSuppression,
            },
            ..defaults
        })
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, default_value_t = 30)]
    pub participants: u32,
    /// Perceiver profile file (key = value lines: p_s1 .. p_s5).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "uniform")]
    pub cohorts: CohortArg,
    #[arg(long, value_enum, default_value = "global")]
    pub schedule_seed: ScheduleSeedArg,
    #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    pub out: PathBuf,
    /// Replace the results of an earlier run in --out.
    #[arg(long)]
    pub force: bool,
    /// Exit with status 3 when a scenario rate misses its reference.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_parser = parse_counts)]
    pub counts: Option<ScenarioCounts>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Session log files, or directories holding them (a run directory's
    /// `sessions/` is picked up automatically).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Also write report.json and report.txt here.
    #[arg(long)]
    pub write: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub bind: SocketAddr,
    #[arg(long, default_value_t = 1)]
    pub participant: u32,
    #[arg(long)]
    pub experience: Option<ExperienceArg>,
    /// Session log path; defaults to <out>/live/participant_NNN.jsonl.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    pub out: PathBuf,
    /// Continue the session recorded in the log instead of starting anew.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperienceArg {
    Daily,
    Sometimes,
    None,
}

fn parse_counts(s: &str) -> Result<ScenarioCounts, String> {
    ScenarioCounts::parse(s).map_err(|e| e.to_string())
}

fn parse_pattern_arg(s: &str) -> Result<PatternSpec, String> {
    parse_pattern(s).map_err(|e| e.to_string())
}

fn parse_pool(s: &str) -> Result<Vec<PatternSpec>, String> {
    s.split(',').map(parse_pattern_arg).collect()
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Schedule(args) => cmd_schedule(args),
        Command::Report(args) => cmd_report(args),
        Command::Serve(args) => cmd_serve(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let mut config = args.study.run_config(args.participants)?;
    if let Some(path) = &args.profile {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.base_profile =
            PerceiverProfile::parse_profile_text(&text).with_context(|| format!("parsing {}", path.display()))?;
    }
    config.cohort_policy = match args.cohorts {
        CohortArg::Uniform => CohortPolicy::Uniform,
        CohortArg::Stratified => CohortPolicy::Stratified,
    };
    config.schedule_seed_policy = match args.schedule_seed {
        ScheduleSeedArg::Global => ScheduleSeedPolicy::Global,
        ScheduleSeedArg::PerParticipant => ScheduleSeedPolicy::PerParticipant,
    };
    config.validate()?;

    prepare_out_dir(&args.out, args.force)?;
    let result = simulate(&config)?;
    write_outputs(&result, &args.out)?;

    let records: u32 = result.logs.iter().map(|l| l.record_count()).sum();
    let mut out = std::io::stdout().lock();
    write!(
        out,
        "{}",
        render_report_table(&result.report, &result.comparison, &ReferenceTargets::default())
    )?;
    writeln!(
        out,
        "\n{} sessions, {records} trial records written to {}",
        result.logs.len(),
        args.out.display()
    )?;
    Ok(if args.strict && !result.comparison.scenarios_pass() { 3 } else { 0 })
}

fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.join("config.json").exists() {
        if !force {
            bail!(
                "{} already holds a run; pass --force to replace it",
                out.display()
            );
        }
        let sessions = out.join("sessions");
        if sessions.exists() {
            fs::remove_dir_all(&sessions).with_context(|| format!("clearing {}", sessions.display()))?;
        }
    }
    Ok(())
}

fn cmd_schedule(args: ScheduleArgs) -> Result<i32> {
    let text = build_schedule(args.seed, &args.counts.unwrap_or_default()).export_lines();
    match args.out {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let mut logs = Vec::new();
    for input in &args.inputs {
        if input.is_dir() {
            let dir = if input.join("sessions").is_dir() {
                input.join("sessions")
            } else {
                input.clone()
            };
            logs.extend(load_session_logs(&dir)?);
        } else {
            logs.push(hapticauth_core::metrics::SessionLog::read_from(input)?);
        }
    }
    let report = aggregate(&logs)?;
    let comparison = compare_to_reference(&report, &ReferenceTargets::default());
    if let Some(dir) = &args.write {
        fs::create_dir_all(dir)?;
        write_report(&report, &comparison, dir)?;
    }
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({ "report": report, "comparison": comparison }))?
        );
    } else {
        print!("{}", render_report_table(&report, &comparison, &ReferenceTargets::default()));
    }
    Ok(0)
}

/// Builds or recovers the live session described by `args`.
pub fn open_live_session(args: &ServeArgs) -> Result<(LiveSession, PathBuf)> {
    let log_path = args.log.clone().unwrap_or_else(|| {
        args.out
            .join("live")
            .join(session_file_name(args.participant))
    });
    if args.resume {
        let session =
            LiveSession::recover(&log_path).with_context(|| format!("recovering {}", log_path.display()))?;
        return Ok((session, log_path));
    }
    if log_path.exists() {
        bail!(
            "{} exists; pass --resume to continue it or choose another --log",
            log_path.display()
        );
    }
    if let Some(parent) = log_path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let config = args.study.run_config(1)?;
    config.validate()?;
    let mut header = config.participant_header(args.participant)?;
    header.profile = None;
    header.experience = args.experience.map(|e| match e {
        ExperienceArg::Daily => ExperienceLevel::Daily,
        ExperienceArg::Sometimes => ExperienceLevel::Sometimes,
        ExperienceArg::None => ExperienceLevel::NoPrior,
    });
    let session = LiveSession::create_logged(header, &log_path)?;
    Ok((session, log_path))
}

fn cmd_serve(args: ServeArgs) -> Result<i32> {
    let (session, log_path) = open_live_session(&args)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        eprintln!(
            "serving participant {} on http://{} (log {})",
            session.header().participant_id,
            listener.local_addr()?,
            log_path.display()
        );
        let clock = service::wall_clock(&session);
        let app = service::router(service::spawn(session, clock));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(0)
    })
}
