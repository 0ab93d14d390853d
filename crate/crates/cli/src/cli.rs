use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use converge_core::critique::{AssessmentInput, Decision, NewFinding, Severity};
use converge_core::gates::{Divergence, VaVerdict, OPERATOR};
use converge_core::lens::ContextFlag;
use converge_core::metrics::AdoptionInput;
use converge_core::prompts::PromptKind;
use converge_core::store::GateSubmission;
use converge_core::{Error, GateId, PhaseId, Result, Verdict};

use crate::ops::Op;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Structured,
}

#[derive(Debug, Parser)]
#[command(name = "converge", version = converge_core::ENGINE_VERSION, about = "Gated design process engine")]
pub struct Cli {
    /// Project directory.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "human")]
    pub format: Format,
    /// Print nothing on success.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project in --root.
    Init {
        name: String,
        /// Context flags to set, e.g. external_dependencies.
        #[arg(long = "flag")]
        flags: Vec<String>,
    },
    /// Phase, iteration count and pending gate.
    Status,
    /// Dump the full project state.
    Show,
    #[command(subcommand)]
    Lens(LensCmd),
    #[command(subcommand)]
    Score(ScoreCmd),
    /// Operator confirmation of the discovery score.
    Confirm {
        #[arg(long)]
        revoke: bool,
    },
    /// Record a teach-back iteration.
    Teachback {
        #[arg(long)]
        collection: String,
        #[arg(long)]
        synthesis: String,
        /// Record the iteration as corrected, with these notes.
        #[arg(long)]
        corrected: Option<String>,
    },
    #[command(subcommand)]
    Hsa(HsaCmd),
    #[command(subcommand)]
    Arch(ArchCmd),
    /// Structural diff of the two latest versions and the G4 preview.
    ConvergeCheck,
    #[command(subcommand)]
    Finding(FindingCmd),
    #[command(subcommand)]
    Matrix(MatrixCmd),
    #[command(subcommand)]
    Gate(GateCmd),
    /// Record a phase transition authorized by a logged gate evaluation.
    Transition {
        to: String,
        #[arg(long = "gate-ref")]
        gate_ref: Option<String>,
    },
    #[command(subcommand)]
    Artifact(ArtifactCmd),
    /// Record the adversarial micro-check for a module.
    Microcheck {
        module: String,
        #[arg(long)]
        response: String,
        /// `spec_ref::description`, repeatable; append `::resolved` once fixed.
        #[arg(long = "divergence")]
        divergences: Vec<String>,
    },
    /// Tick a requirement on the validation checklist.
    Checklist {
        requirement: String,
        /// How the requirement was verified.
        #[arg(long)]
        note: String,
    },
    /// Declared modules and requirement coverage against the codebase.
    Scope,
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Render a prompt scaffold into specs/prompts/.
    Prompt {
        phase: String,
        /// discovery_questions, teachback_request, lens_critique, simplification, micro_check
        kind: String,
        /// Lens id or module name for lens_critique and micro_check.
        target: Option<String>,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: SocketAddr,
        /// Shared token required in the x-converge-token header.
        #[arg(long, env = "CONVERGE_TOKEN")]
        token: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LensCmd {
    List {
        #[arg(long)]
        active: bool,
    },
    /// Set a context flag; the rationale applies to the lenses it controls.
    Set {
        flag: String,
        #[arg(action = clap::ArgAction::Set)]
        value: bool,
        #[arg(long)]
        rationale: Option<String>,
    },
    /// Record the activation rationale for one lens.
    Rationale { lens: String, text: String },
}

#[derive(Debug, Subcommand)]
pub enum ScoreCmd {
    Show,
    Set { criterion: u8, points: u32 },
    /// All ten awards in criterion order.
    SetAll {
        #[arg(num_args = 10, required = true)]
        awards: Vec<u32>,
    },
}

#[derive(Debug, Subcommand)]
pub enum HsaCmd {
    Show,
    Converge { level: u8 },
    Notes { level: u8, text: String },
    Retroact {
        from: u8,
        to: u8,
        #[arg(long)]
        reason: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ArchCmd {
    /// Register a version directory (or manifest.toml) as the next version.
    Register { path: PathBuf },
    List,
}

#[derive(Debug, Subcommand)]
pub enum FindingCmd {
    Add {
        module: String,
        lens: String,
        #[arg(long)]
        severity: String,
        #[arg(long)]
        description: String,
    },
    Triage {
        id: String,
        decision: String,
        #[arg(long)]
        rationale: Option<String>,
    },
    Resolve {
        id: String,
        #[arg(long)]
        note: String,
    },
    List {
        #[arg(long)]
        open: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum MatrixCmd {
    Show {
        #[arg(long = "min-severity")]
        min_severity: Option<String>,
    },
    Check,
    /// Record that a cell was assessed and produced no findings.
    Clear { module: String, lens: String },
    /// Record the operator decision on a concentration flag.
    Decide { flag: String, decision: String },
}

#[derive(Debug, Args)]
pub struct VerdictArgs {
    gate: String,
    #[arg(long = "as", default_value = OPERATOR)]
    approver: String,
    #[arg(long, default_value = "")]
    note: String,
    #[arg(long = "no-advance")]
    no_advance: bool,
}

#[derive(Debug, Subcommand)]
pub enum GateCmd {
    Show { gate: String },
    /// Run the gate's automatic agents.
    Run {
        gate: String,
        #[arg(long = "no-advance")]
        no_advance: bool,
    },
    Approve(VerdictArgs),
    Reject(VerdictArgs),
}

#[derive(Debug, Subcommand)]
pub enum ArtifactCmd {
    Add { phase: String, version: u32, path: PathBuf },
    List { phase: String },
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    Efficiency { relevant_tokens: u64, total_tokens: u64 },
    Adoption {
        #[arg(long)]
        config: PathBuf,
    },
}

/// What a parsed command line asks for.
pub enum Action {
    Op(Op),
    Serve { bind: SocketAddr, token: Option<String> },
}

fn divergence(s: &str) -> Result<Divergence> {
    let parts: Vec<&str> = s.split("::").collect();
    match parts.as_slice() {
        [r, d] => Ok(Divergence { spec_ref: r.to_string(), description: d.to_string(), resolved: false }),
        [r, d, "resolved"] => Ok(Divergence { spec_ref: r.to_string(), description: d.to_string(), resolved: true }),
        _ => Err(Error::InvalidArgument(format!("divergence must be spec_ref::description[::resolved], got {s:?}"))),
    }
}

fn verdict_submission(a: VerdictArgs, verdict: Verdict) -> Result<Op> {
    Ok(Op::GateSubmit {
        gate: a.gate.parse()?,
        submission: GateSubmission {
            verdicts: vec![VaVerdict { va_id: a.approver, verdict, evidence: a.note }],
            run_automatic: false,
            advance: !a.no_advance,
        },
    })
}

impl Command {
    /// Input files named on the command line are read relative to the
    /// working directory, like any other tool.
    pub fn into_action(self) -> Result<Action> {
        let op = match self {
            Command::Serve { bind, token } => return Ok(Action::Serve { bind, token }),
            Command::Init { name, flags } => Op::Init {
                name,
                flags: flags.iter().map(|f| f.parse()).collect::<Result<Vec<ContextFlag>>>()?,
            },
            Command::Status => Op::Status,
            Command::Show => Op::Show,
            Command::Lens(LensCmd::List { active }) => Op::LensList { active_only: active },
            Command::Lens(LensCmd::Set { flag, value, rationale }) => {
                Op::SetContext { flag: flag.parse()?, value, rationale }
            }
            Command::Lens(LensCmd::Rationale { lens, text }) => Op::LensRationale { lens_id: lens, rationale: text },
            Command::Score(ScoreCmd::Show) => Op::ScoreShow,
            Command::Score(ScoreCmd::Set { criterion, points }) => {
                Op::Score { awards: vec![(criterion, points)], confirmed: None }
            }
            Command::Score(ScoreCmd::SetAll { awards }) => Op::Score {
                awards: awards.into_iter().enumerate().map(|(i, a)| (i as u8 + 1, a)).collect(),
                confirmed: None,
            },
            Command::Confirm { revoke } => Op::Score { awards: vec![], confirmed: Some(!revoke) },
            Command::Teachback { collection, synthesis, corrected } => Op::Teachback {
                collection_notes: collection,
                synthesis,
                correction: corrected,
            },
            Command::Hsa(HsaCmd::Show) => Op::HsaShow,
            Command::Hsa(HsaCmd::Converge { level }) => Op::HsaConverge { level },
            Command::Hsa(HsaCmd::Notes { level, text }) => Op::HsaNotes { level, notes: text },
            Command::Hsa(HsaCmd::Retroact { from, to, reason }) => {
                Op::HsaRetroact { from_level: from, to_level: to, reason }
            }
            Command::Arch(ArchCmd::Register { path }) => Op::ArchRegister { path: absolute(path) },
            Command::Arch(ArchCmd::List) => Op::ArchList,
            Command::ConvergeCheck => Op::ConvergeCheck,
            Command::Finding(FindingCmd::Add { module, lens, severity, description }) => Op::Assess {
                module,
                lens,
                input: AssessmentInput::Findings(vec![NewFinding { severity: severity.parse()?, description }]),
            },
            Command::Finding(FindingCmd::Triage { id, decision, rationale }) => Op::Triage {
                finding_id: id,
                decision: Decision::parse(&decision, rationale.as_deref())?,
            },
            Command::Finding(FindingCmd::Resolve { id, note }) => Op::Resolve { finding_id: id, note },
            Command::Finding(FindingCmd::List { open }) => Op::FindingList { open_only: open },
            Command::Matrix(MatrixCmd::Show { min_severity }) => Op::MatrixShow {
                min_severity: min_severity.map(|s| s.parse::<Severity>()).transpose()?,
            },
            Command::Matrix(MatrixCmd::Check) => Op::MatrixCheck,
            Command::Matrix(MatrixCmd::Clear { module, lens }) => {
                Op::Assess { module, lens, input: AssessmentInput::ExplicitNone }
            }
            Command::Matrix(MatrixCmd::Decide { flag, decision }) => Op::MatrixDecide { flag, decision },
            Command::Gate(GateCmd::Show { gate }) => Op::GateShow { gate: gate.parse()? },
            Command::Gate(GateCmd::Run { gate, no_advance }) => Op::GateSubmit {
                gate: gate.parse::<GateId>()?,
                submission: GateSubmission { verdicts: vec![], run_automatic: true, advance: !no_advance },
            },
            Command::Gate(GateCmd::Approve(a)) => verdict_submission(a, Verdict::Approved)?,
            Command::Gate(GateCmd::Reject(a)) => verdict_submission(a, Verdict::Rejected)?,
            Command::Transition { to, gate_ref } => Op::Transition { to: to.parse::<PhaseId>()?, gate_ref },
            Command::Artifact(ArtifactCmd::Add { phase, version, path }) => Op::ArtifactAdd {
                phase: phase.parse()?,
                version,
                path: absolute(path),
            },
            Command::Artifact(ArtifactCmd::List { phase }) => Op::ArtifactList { phase: phase.parse()? },
            Command::Artifact(ArtifactCmd::Verify) => Op::ArtifactVerify,
            Command::Microcheck { module, response, divergences } => Op::MicroCheck {
                module,
                response,
                divergences: divergences.iter().map(|d| divergence(d)).collect::<Result<_>>()?,
            },
            Command::Checklist { requirement, note } => Op::Checklist { requirement_id: requirement, note },
            Command::Scope => Op::Scope,
            Command::Metrics(MetricsCmd::Efficiency { relevant_tokens, total_tokens }) => {
                Op::MetricsEfficiency { relevant_tokens, total_tokens }
            }
            Command::Metrics(MetricsCmd::Adoption { config }) => {
                let text = std::fs::read_to_string(&config)
                    .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", config.display())))?;
                Op::MetricsAdoption { input: AdoptionInput::parse(&text)? }
            }
            Command::Prompt { phase, kind, target } => Op::Prompt {
                phase: phase.parse()?,
                kind: match target {
                    Some(t) => PromptKind::parse(&kind, Some(&t))?,
                    None => kind.parse()?,
                },
            },
        };
        Ok(Action::Op(op))
    }
}

fn absolute(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    }
}
