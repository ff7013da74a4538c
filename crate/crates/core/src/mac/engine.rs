//! The conversation driver. Each turn builds a fresh conversation from
//! the shared task framing plus the transcript so far, asks the backend,
//! and records the reply. Engine instructions are ephemeral — only model
//! replies enter the thread — so the transcript reads as the discussion
//! itself.

use crate::case::{ConditionName, DermCase};
use crate::gateway::{complete, Backend, CallCtx, ChatMessage, Conversation, Stage};
use crate::prompts::{PromptLibrary, PromptName};

use super::parse::{
    decide_admin, extract_final_diagnosis, parse_specialist_reply, AdminDecision,
    DiagnosisParseError,
};
use super::{
    MacConfig, MacError, MacFailure, MacOutcome, MacState, MacStateMachine, MacTranscript,
    SpecialistReport, MAX_CANDIDATES, MIN_CANDIDATES,
};

/// Run the multi-agent discussion for one case and return the final
/// diagnosis with the full transcript. Any failure carries the partial
/// transcript for inspection.
pub fn run_mac<B: Backend>(
    backend: &B,
    library: &PromptLibrary,
    config: &MacConfig,
    case: &DermCase,
    candidates: &[ConditionName],
) -> Result<MacOutcome, MacFailure> {
    let bare = |error: MacError| MacFailure {
        error,
        transcript: MacTranscript::default(),
    };
    if candidates.len() < MIN_CANDIDATES {
        return Err(bare(MacError::TooFewCandidates {
            count: candidates.len(),
        }));
    }
    if candidates.len() > MAX_CANDIDATES {
        return Err(bare(MacError::TooManyCandidates {
            count: candidates.len(),
        }));
    }
    if config.specialist_names.len() < candidates.len() {
        return Err(bare(MacError::NotEnoughSpecialists {
            needed: candidates.len(),
            available: config.specialist_names.len(),
        }));
    }

    let mut session = Session {
        backend,
        library,
        config,
        case,
        candidates,
        ctx: CallCtx::new(&case.case_id, Stage::Mac),
        transcript: MacTranscript::default(),
        machine: MacStateMachine::new(),
        task_text: String::new(),
    };
    match session.run() {
        Ok(outcome) => Ok(outcome),
        Err(error) => Err(MacFailure {
            error,
            transcript: session.transcript,
        }),
    }
}

struct Session<'a, B: Backend> {
    backend: &'a B,
    library: &'a PromptLibrary,
    config: &'a MacConfig,
    case: &'a DermCase,
    candidates: &'a [ConditionName],
    ctx: CallCtx,
    transcript: MacTranscript,
    machine: MacStateMachine,
    task_text: String,
}

impl<B: Backend> Session<'_, B> {
    fn run(&mut self) -> Result<MacOutcome, MacError> {
        let team = &self.config.specialist_names[..self.candidates.len()];

        let observation = self.observe()?;
        self.task_text = self.library.render(
            PromptName::MacTask,
            &[
                ("observation", observation.as_str()),
                ("case_study", self.case.query.as_str()),
                ("candidates", &join(self.candidates, ", ")),
            ],
        )?;

        self.machine.transition(MacState::Assignment)?;
        self.announce_assignments(team)?;

        let mut reports = Vec::with_capacity(self.candidates.len());
        for (i, (specialist, candidate)) in team.iter().zip(self.candidates).enumerate() {
            self.machine.transition(MacState::SpecialistAnalysis(i))?;
            reports.push(self.specialist_analysis(specialist, candidate, &observation)?);
        }

        self.machine.transition(MacState::Compilation)?;
        self.compile()?;

        let mut round = 0u32;
        let mut forced_finalize = false;
        loop {
            self.machine
                .transition(MacState::AdminEvaluation { round })?;
            let (reply, decision) = self.admin_evaluation(round, team)?;
            match decision {
                AdminDecision::Terminate => break,
                AdminDecision::Revise(_) if round == self.config.max_revision_rounds => {
                    forced_finalize = true;
                    break;
                }
                AdminDecision::Revise(targets) => {
                    self.machine.transition(MacState::Revision { round })?;
                    for idx in targets {
                        let refined = self.refine(&team[idx], &self.candidates[idx], &reply)?;
                        reports[idx].refinements.push(refined);
                    }
                    round += 1;
                }
                AdminDecision::Unclear => unreachable!("admin_evaluation resolves or errors"),
            }
        }

        self.machine.transition(MacState::FinalDiagnosis)?;
        let final_diagnosis = self.final_diagnosis(forced_finalize)?;
        self.machine.transition(MacState::Terminated)?;

        Ok(MacOutcome {
            case_id: self.case.case_id.clone(),
            final_diagnosis,
            observation,
            reports,
            revision_rounds: round,
            forced_finalize,
            transcript: std::mem::take(&mut self.transcript),
        })
    }

    /// The one image-bearing call: describe the case before any candidate
    /// is on the table.
    fn observe(&mut self) -> Result<String, MacError> {
        let prompt = self.library.render(PromptName::MacObservation, &[])?;
        let mut conv = Conversation::new();
        conv.push(ChatMessage::user_with_images(prompt, &self.case.images))?;
        let reply = complete(self.backend, &self.ctx, &conv)?;
        self.transcript.record("Observation", &reply);
        Ok(reply)
    }

    /// Build the standing conversation: role prompt, task framing, the
    /// discussion so far, then the current instruction.
    fn converse(&self, system: &str, instruction: &str) -> Result<Conversation, MacError> {
        let mut conv = Conversation::new();
        conv.push(ChatMessage::system(system))?;
        conv.push(ChatMessage::user_text(&self.task_text))?;
        for entry in &self.transcript.entries {
            conv.push(ChatMessage::assistant_named(&entry.speaker, &entry.text))?;
        }
        conv.push(ChatMessage::user_text(instruction))?;
        Ok(conv)
    }

    /// One exchange: ask, then append the reply to both the conversation
    /// (for a potential re-ask) and the transcript.
    fn ask(&mut self, conv: &mut Conversation, speaker: &str) -> Result<String, MacError> {
        let reply = complete(self.backend, &self.ctx, conv)?;
        conv.push(ChatMessage::assistant_named(speaker, &reply))?;
        self.transcript.record(speaker, &reply);
        Ok(reply)
    }

    fn re_ask(
        &mut self,
        conv: &mut Conversation,
        corrective: &str,
        speaker: &str,
    ) -> Result<String, MacError> {
        conv.push(ChatMessage::user_text(corrective))?;
        self.ask(conv, speaker)
    }

    fn announce_assignments(&mut self, team: &[String]) -> Result<(), MacError> {
        let system = self.library.render(PromptName::MacCoordinator, &[])?;
        let mut lines = String::from("The team for this case:\n");
        for (specialist, candidate) in team.iter().zip(self.candidates) {
            lines.push_str(&format!("ASSIGN {specialist}: {candidate}\n"));
        }
        lines.push_str("Announce the assignments to the team, then hand over to the specialists.");
        let mut conv = self.converse(&system, &lines)?;
        self.ask(&mut conv, "Coordinator")?;
        Ok(())
    }

    fn specialist_analysis(
        &mut self,
        specialist: &str,
        candidate: &ConditionName,
        observation: &str,
    ) -> Result<SpecialistReport, MacError> {
        let system = self
            .library
            .render(PromptName::MacSpecialist, &[("name", specialist)])?;
        let rivals: Vec<ConditionName> = self
            .candidates
            .iter()
            .filter(|c| *c != candidate)
            .cloned()
            .collect();
        let instruction = format!(
            "{specialist}, advocate for your assignment.\n\
             Your assigned condition: {candidate}\n\
             Other candidates: {}\n\
             Clinical observation: {observation}\n\
             Tune the image description toward your condition, then reply with a paragraph \
             starting 'EVIDENCE:' followed by one line 'CRITIQUE <candidate>: <reason>' \
             for each other candidate.",
            join(&rivals, " | "),
        );
        let mut conv = self.converse(&system, &instruction)?;
        let mut reply = self.ask(&mut conv, specialist)?;

        let (evidence, critiques) = match parse_specialist_reply(&reply, &rivals) {
            Ok(parsed) => parsed,
            Err(issue) => {
                let corrective = format!(
                    "That reply could not be used: {issue}. Reply again with \
                     'EVIDENCE: <your evidence>' followed by exactly one line \
                     'CRITIQUE <candidate>: <reason>' for each of: {}.",
                    join(&rivals, " | "),
                );
                reply = self.re_ask(&mut conv, &corrective, specialist)?;
                parse_specialist_reply(&reply, &rivals).map_err(|issue| {
                    MacError::MalformedSpecialistReply {
                        specialist: specialist.to_string(),
                        detail: issue.to_string(),
                    }
                })?
            }
        };
        Ok(SpecialistReport {
            specialist: specialist.to_string(),
            candidate: candidate.clone(),
            evidence,
            critiques,
            refinements: Vec::new(),
        })
    }

    fn compile(&mut self) -> Result<(), MacError> {
        let system = self.library.render(PromptName::MacCoordinator, &[])?;
        let instruction = "Compile the specialists' evidence and critiques into a single \
                           report for the Admin, keeping each specialist's strongest points.";
        let mut conv = self.converse(&system, instruction)?;
        self.ask(&mut conv, "Coordinator")?;
        Ok(())
    }

    fn admin_evaluation(
        &mut self,
        round: u32,
        team: &[String],
    ) -> Result<(String, AdminDecision), MacError> {
        let system = self.library.render(PromptName::MacAdmin, &[])?;
        let instruction = format!(
            "Evaluate the specialists' evidence and critiques against the clinical \
             observation.\n\
             Revision rounds completed: {round}\n\
             Specialists: {}\n\
             If some evidence needs strengthening, reply with a line \
             'REVISE: <specialist name>' (comma-separate several) and say what to improve. \
             If the team has converged on a diagnosis, include the word TERMINATE in your \
             reply.",
            team.join(" | "),
        );
        let mut conv = self.converse(&system, &instruction)?;
        let mut reply = self.ask(&mut conv, "Admin")?;
        let mut decision = decide_admin(&reply, team);
        if decision == AdminDecision::Unclear {
            let corrective = "That verdict was unclear. Reply with either a line \
                              'REVISE: <specialist name>' or the word TERMINATE, not both.";
            reply = self.re_ask(&mut conv, corrective, "Admin")?;
            decision = decide_admin(&reply, team);
            if decision == AdminDecision::Unclear {
                return Err(MacError::AmbiguousDecision { reply });
            }
        }
        Ok((reply, decision))
    }

    fn refine(
        &mut self,
        specialist: &str,
        candidate: &ConditionName,
        admin_reply: &str,
    ) -> Result<String, MacError> {
        let system = self
            .library
            .render(PromptName::MacSpecialist, &[("name", specialist)])?;
        let instruction = format!(
            "{specialist}, the Admin asks you to refine your analysis.\n\
             Admin feedback:\n{admin_reply}\n\
             Refine your evidence for {candidate} against the clinical observation. \
             Reply with the refined evidence paragraph.",
        );
        let mut conv = self.converse(&system, &instruction)?;
        let reply = self.ask(&mut conv, specialist)?;
        let refined = reply
            .trim()
            .trim_start_matches("REFINED EVIDENCE:")
            .trim_start_matches("Refined evidence:")
            .trim()
            .to_string();
        Ok(refined)
    }

    fn final_diagnosis(&mut self, forced: bool) -> Result<ConditionName, MacError> {
        let system = self.library.render(PromptName::MacAdmin, &[])?;
        let preamble = if forced {
            "The revision budget is exhausted; the discussion must conclude now.\n"
        } else {
            ""
        };
        let instruction = format!(
            "{preamble}Candidates: {}\n\
             State the team's final diagnosis as a single line \
             'FINAL_DIAGNOSIS: <condition name>', choosing exactly one candidate from the \
             list.",
            join(self.candidates, " | "),
        );
        let mut conv = self.converse(&system, &instruction)?;
        let mut reply = self.ask(&mut conv, "Admin")?;
        match extract_final_diagnosis(&reply, self.candidates) {
            Ok(diagnosis) => return Ok(diagnosis),
            Err(_) if !forced => {
                // One corrective pass; under a forced close the single
                // extra call is not spent.
                let corrective = format!(
                    "Reply with exactly one line 'FINAL_DIAGNOSIS: <condition name>' \
                     naming one of: {}.",
                    join(self.candidates, " | "),
                );
                reply = self.re_ask(&mut conv, &corrective, "Admin")?;
            }
            Err(_) => {}
        }
        extract_final_diagnosis(&reply, self.candidates).map_err(|err| match err {
            DiagnosisParseError::NoMatch => MacError::NoFinalDiagnosis { reply },
            DiagnosisParseError::Ambiguous { matches } => {
                MacError::AmbiguousDiagnosis { matches }
            }
        })
    }
}

fn join(names: &[ConditionName], sep: &str) -> String {
    names
        .iter()
        .map(ConditionName::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}
