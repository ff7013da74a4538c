//! Multi-agent conversation (MAC) re-ranking: a coordinator assigns each
//! candidate condition to a named specialist who argues for it and
//! critiques the others; an admin weighs the arguments, optionally sends
//! specialists back to refine their evidence, and finally settles on one
//! diagnosis.
//!
//! The engine drives a fixed state machine so a run either produces a
//! complete, validated outcome — evidence and exactly n-1 critiques per
//! specialist, a final diagnosis drawn from the candidate list — or fails
//! with the partial transcript attached.

mod engine;
mod parse;

pub use engine::run_mac;
pub use parse::{
    extract_final_diagnosis, parse_specialist_reply, DiagnosisParseError, SpecialistReplyIssue,
};

use serde::{Deserialize, Serialize};

use crate::case::ConditionName;
use crate::gateway::GatewayError;
use crate::prompts::PromptError;

/// Candidate count the discussion protocol supports.
pub const MIN_CANDIDATES: usize = 3;
pub const MAX_CANDIDATES: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacConfig {
    /// Names handed out to specialists in order; must cover the candidate
    /// count.
    pub specialist_names: Vec<String>,
    /// Revision rounds the admin may request before the engine forces a
    /// final diagnosis.
    pub max_revision_rounds: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            specialist_names: ["Rick", "Sam", "Michael", "Laura", "Elena"]
                .map(String::from)
                .to_vec(),
            max_revision_rounds: 2,
        }
    }
}

/// One specialist's objection to a rival candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub target: ConditionName,
    pub text: String,
}

/// Everything one specialist contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialistReport {
    pub specialist: String,
    pub candidate: ConditionName,
    pub evidence: String,
    /// Exactly one critique per rival candidate.
    pub critiques: Vec<Critique>,
    /// Refined evidence, one entry per revision round this specialist was
    /// sent back in.
    pub refinements: Vec<String>,
}

/// One model turn in the discussion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MacTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl MacTranscript {
    pub fn record(&mut self, speaker: impl Into<String>, text: impl Into<String>) {
        self.entries.push(TranscriptEntry {
            speaker: speaker.into(),
            text: text.into(),
        });
    }
}

/// A completed discussion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacOutcome {
    pub case_id: String,
    pub final_diagnosis: ConditionName,
    pub observation: String,
    pub reports: Vec<SpecialistReport>,
    pub revision_rounds: u32,
    /// True when the admin still wanted revisions after the budget ran
    /// out and the engine forced the finalization.
    pub forced_finalize: bool,
    pub transcript: MacTranscript,
}

#[derive(Debug, thiserror::Error)]
pub enum MacError {
    #[error("{count} candidates; the discussion needs at least {MIN_CANDIDATES}")]
    TooFewCandidates { count: usize },
    #[error("{count} candidates; the discussion supports at most {MAX_CANDIDATES}")]
    TooManyCandidates { count: usize },
    #[error("{needed} specialists needed but only {available} names configured")]
    NotEnoughSpecialists { needed: usize, available: usize },
    #[error("protocol violation: cannot move from {from:?} to {to:?}")]
    IllegalTransition { from: MacState, to: MacState },
    #[error("specialist {specialist} reply unusable after re-ask: {detail}")]
    MalformedSpecialistReply { specialist: String, detail: String },
    #[error("admin decision unreadable after re-ask: {reply:?}")]
    AmbiguousDecision { reply: String },
    #[error("no final diagnosis in reply: {reply:?}")]
    NoFinalDiagnosis { reply: String },
    #[error("reply names several candidates as final: {matches:?}")]
    AmbiguousDiagnosis { matches: Vec<String> },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A failed run: the error plus everything said before things went wrong.
#[derive(Debug)]
pub struct MacFailure {
    pub error: MacError,
    pub transcript: MacTranscript,
}

impl std::fmt::Display for MacFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} transcript turns)",
            self.error,
            self.transcript.entries.len()
        )
    }
}

impl std::error::Error for MacFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Where the discussion stands. `SpecialistAnalysis(i)` is the i-th
/// specialist speaking; `AdminEvaluation { round }` counts completed
/// revision rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MacState {
    Init,
    Assignment,
    SpecialistAnalysis(usize),
    Compilation,
    AdminEvaluation { round: u32 },
    Revision { round: u32 },
    FinalDiagnosis,
    Terminated,
}

/// Enforces the legal discussion order and remembers the path taken.
#[derive(Debug)]
pub struct MacStateMachine {
    state: MacState,
    path: Vec<MacState>,
}

impl MacStateMachine {
    pub fn new() -> Self {
        Self {
            state: MacState::Init,
            path: vec![MacState::Init],
        }
    }

    pub fn state(&self) -> MacState {
        self.state
    }

    pub fn path(&self) -> &[MacState] {
        &self.path
    }

    pub fn transition(&mut self, to: MacState) -> Result<(), MacError> {
        use MacState::*;
        let legal = match (self.state, to) {
            (Init, Assignment) => true,
            (Assignment, SpecialistAnalysis(0)) => true,
            (SpecialistAnalysis(i), SpecialistAnalysis(j)) => j == i + 1,
            (SpecialistAnalysis(_), Compilation) => true,
            (Compilation, AdminEvaluation { round: 0 }) => true,
            (AdminEvaluation { round: r }, Revision { round: s }) => s == r,
            (AdminEvaluation { .. }, FinalDiagnosis) => true,
            (Revision { round: r }, AdminEvaluation { round: s }) => s == r + 1,
            (FinalDiagnosis, Terminated) => true,
            _ => false,
        };
        if !legal {
            return Err(MacError::IllegalTransition {
                from: self.state,
                to,
            });
        }
        self.state = to;
        self.path.push(to);
        Ok(())
    }
}

impl Default for MacStateMachine {
    fn default() -> Self {
        Self::new()
    }
}
