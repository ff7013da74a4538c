//! Condition-name similarity judging for evaluation: exact string match is
//! too strict ("herpetic eczema" vs "seborrheic eczema" share a root), so
//! accuracy counting can delegate borderline pairs to a model.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::case::ConditionName;
use crate::gateway::{complete, Backend, CallCtx, ChatMessage, Conversation, GatewayError, Stage};

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("judge reply unparseable after re-ask: {reply:?}")]
    Parse { reply: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// The judge's decision, which rule produced it, and its own words.
/// `rule_applied` is 0 exactly when the verdict was decided without a
/// model call (the equal-names fast path or the exact judge); rules 1–4
/// come from the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityVerdict {
    pub similar: bool,
    pub rule_applied: u8,
    pub rationale: String,
}

/// Decides whether two condition names refer to similar conditions.
pub trait Judge {
    fn similar(&self, a: &ConditionName, b: &ConditionName)
        -> Result<SimilarityVerdict, JudgeError>;
}

/// Similarity is normalized string equality; never calls out.
pub struct ExactJudge;

impl Judge for ExactJudge {
    fn similar(
        &self,
        a: &ConditionName,
        b: &ConditionName,
    ) -> Result<SimilarityVerdict, JudgeError> {
        let similar = a == b;
        Ok(SimilarityVerdict {
            similar,
            rule_applied: 0,
            rationale: if similar {
                "identical normalized names".to_string()
            } else {
                "normalized names differ".to_string()
            },
        })
    }
}

/// Model-backed judge. Equal normalized names short-circuit to similar
/// without a call; everything else goes through the prompt once, with a
/// single corrective re-ask when the reply does not carry a parseable
/// verdict line. Outcomes are cached per unordered pair, so each distinct
/// pair costs at most one (re-asked) exchange per run.
pub struct LlmJudge<B> {
    backend: B,
    template: String,
    cache: Mutex<HashMap<(String, String), SimilarityVerdict>>,
}

impl<B: Backend> LlmJudge<B> {
    /// `template` must contain `{a}` and `{b}` placeholders.
    pub fn new(backend: B, template: impl Into<String>) -> Self {
        Self {
            backend,
            template: template.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn prompt(&self, a: &ConditionName, b: &ConditionName) -> String {
        self.template
            .replace("{a}", a.normalized())
            .replace("{b}", b.normalized())
    }
}

impl<B: Backend> Judge for LlmJudge<B> {
    fn similar(
        &self,
        a: &ConditionName,
        b: &ConditionName,
    ) -> Result<SimilarityVerdict, JudgeError> {
        if a == b {
            return Ok(SimilarityVerdict {
                similar: true,
                rule_applied: 0,
                rationale: "identical normalized names".to_string(),
            });
        }
        let key = pair_key(a, b);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }

        let ctx = CallCtx::new(format!("{}|{}", key.0, key.1), Stage::Judge);
        let mut conversation =
            Conversation::from_messages(vec![ChatMessage::user_text(self.prompt(a, b))])?;
        let reply = complete(&self.backend, &ctx, &conversation)?;
        let verdict = match parse_verdict(&reply) {
            Some((similar, rule_applied)) => SimilarityVerdict {
                similar,
                rule_applied,
                rationale: reply,
            },
            None => {
                // One corrective turn, then give up.
                conversation.push(ChatMessage::assistant(reply))?;
                conversation.push(ChatMessage::user_text(
                    "That reply did not match the required format. Answer with exactly one line: \
                     VERDICT: SIMILAR, RULE: <n> or VERDICT: DIFFERENT, RULE: <n>",
                ))?;
                let retry = complete(&self.backend, &ctx, &conversation)?;
                let (similar, rule_applied) =
                    parse_verdict(&retry).ok_or(JudgeError::Parse { reply: retry.clone() })?;
                SimilarityVerdict {
                    similar,
                    rule_applied,
                    rationale: retry,
                }
            }
        };
        self.cache.lock().unwrap().insert(key, verdict.clone());
        Ok(verdict)
    }
}

fn pair_key(a: &ConditionName, b: &ConditionName) -> (String, String) {
    let (x, y) = (a.normalized().to_string(), b.normalized().to_string());
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Find `VERDICT: SIMILAR|DIFFERENT, RULE: <n>` in a reply, tolerating
/// case and spacing but requiring both the verdict and the rule number.
fn parse_verdict(reply: &str) -> Option<(bool, u8)> {
    for line in reply.lines() {
        let upper = line.to_uppercase();
        let Some(at) = upper.find("VERDICT") else {
            continue;
        };
        let tail = &upper[at..];
        let similar = if tail.contains("SIMILAR") {
            true
        } else if tail.contains("DIFFERENT") {
            false
        } else {
            continue;
        };
        let rule_at = tail.find("RULE")?;
        let digits: String = tail[rule_at..]
            .chars()
            .skip_while(|c| !c.is_ascii_digit())
            .take_while(|c| c.is_ascii_digit())
            .collect();
        if let Ok(rule) = digits.parse() {
            return Some((similar, rule));
        }
    }
    None
}
