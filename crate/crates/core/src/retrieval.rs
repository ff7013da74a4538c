//! Candidate retrieval: ask the model for a differential — a list of
//! possible conditions — for a case, under one of three prompting
//! strategies. The reply parser is deliberately tolerant, because models
//! wrap the requested JSON array in prose more often than not.

use serde::{Deserialize, Serialize};

use crate::case::{ConditionName, DermCase};
use crate::gateway::{complete, Backend, CallCtx, ChatMessage, Conversation, GatewayError, Stage};
use crate::prompts::{PromptError, PromptLibrary, PromptName};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no candidates found in reply for case {case_id}: {reply:?}")]
    NoCandidates { case_id: String, reply: String },
}

/// How the differential is elicited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStrategy {
    /// Images alone; the patient query is deliberately withheld.
    ImageOnly,
    /// Images plus query with minimal instructions.
    NaiveCot,
    /// Images plus query walked through the visual-inspection guideline
    /// checklist.
    ExpertCot,
}

impl RetrievalStrategy {
    fn prompt_name(self) -> PromptName {
        match self {
            RetrievalStrategy::ImageOnly => PromptName::RetrievalImageOnly,
            RetrievalStrategy::NaiveCot => PromptName::RetrievalNaiveCot,
            RetrievalStrategy::ExpertCot => PromptName::RetrievalExpertCot,
        }
    }
}

impl std::str::FromStr for RetrievalStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image_only" => Ok(Self::ImageOnly),
            "naive_cot" => Ok(Self::NaiveCot),
            "expert_cot" => Ok(Self::ExpertCot),
            other => Err(format!(
                "unknown retrieval strategy {other:?} (expected image_only, naive_cot or expert_cot)"
            )),
        }
    }
}

impl std::fmt::Display for RetrievalStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ImageOnly => "image_only",
            Self::NaiveCot => "naive_cot",
            Self::ExpertCot => "expert_cot",
        })
    }
}

/// The parsed differential for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub case_id: String,
    pub strategy: RetrievalStrategy,
    pub candidates: Vec<ConditionName>,
}

/// Build the retrieval conversation: one user message carrying the
/// strategy's instructions and the case images. The image-only strategy
/// never sees the query text.
pub fn build_retrieval_prompt(
    library: &PromptLibrary,
    strategy: RetrievalStrategy,
    case: &DermCase,
) -> Result<Conversation, RetrievalError> {
    let text = match strategy {
        RetrievalStrategy::ImageOnly => library.render(strategy.prompt_name(), &[])?,
        _ => library.render(strategy.prompt_name(), &[("query", case.query.as_str())])?,
    };
    let message = ChatMessage::user_with_images(text, &case.images);
    Ok(Conversation::from_messages(vec![message]).expect("single user message"))
}

/// Run retrieval for one case.
pub fn retrieve(
    backend: &dyn Backend,
    library: &PromptLibrary,
    strategy: RetrievalStrategy,
    case: &DermCase,
) -> Result<CandidateSet, RetrievalError> {
    let conversation = build_retrieval_prompt(library, strategy, case)?;
    let ctx = CallCtx::new(case.case_id.clone(), Stage::Retrieval);
    let reply = complete(backend, &ctx, &conversation)?;
    let candidates = parse_candidate_list(&reply);
    if candidates.is_empty() {
        return Err(RetrievalError::NoCandidates {
            case_id: case.case_id.clone(),
            reply,
        });
    }
    Ok(CandidateSet {
        case_id: case.case_id.clone(),
        strategy,
        candidates,
    })
}

/// Extract condition names from a model reply.
///
/// Preference order: the last JSON string array anywhere in the text
/// (replies are asked to end with one), then numbered or bulleted list
/// lines. Names are deduplicated by normalized form, first occurrence
/// wins; letterless entries are dropped. Returns empty when nothing
/// usable is found — the caller decides whether that is an error.
pub fn parse_candidate_list(reply: &str) -> Vec<ConditionName> {
    if let Some(names) = last_string_array(reply) {
        let parsed = dedup_names(names.iter().map(String::as_str));
        if !parsed.is_empty() {
            return parsed;
        }
    }
    dedup_names(reply.lines().filter_map(strip_list_marker))
}

/// The last parseable JSON array of strings in `text`, scanning `[`
/// positions from the end. A trailing array is allowed to be followed by
/// prose because parsing stops at the array's closing bracket.
fn last_string_array(text: &str) -> Option<Vec<String>> {
    for (at, _) in text.match_indices('[').collect::<Vec<_>>().into_iter().rev() {
        let mut stream =
            serde_json::Deserializer::from_str(&text[at..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Array(items))) = stream.next() {
            let strings: Option<Vec<String>> = items
                .into_iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Some(s),
                    _ => None,
                })
                .collect();
            if let Some(strings) = strings {
                if !strings.is_empty() {
                    return Some(strings);
                }
            }
        }
    }
    None
}

/// `"1. Psoriasis"` -> `"Psoriasis"`; lines without a list marker are not
/// candidates. Surrounding emphasis and quote characters are shed.
fn strip_list_marker(line: &str) -> Option<&str> {
    let trimmed = line.trim();
    let rest = if let Some(rest) = trimmed
        .strip_prefix("- ")
        .or_else(|| trimmed.strip_prefix("* "))
        .or_else(|| trimmed.strip_prefix("• "))
    {
        rest
    } else {
        let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            return None;
        }
        let after = &trimmed[digits..];
        after
            .strip_prefix('.')
            .or_else(|| after.strip_prefix(')'))
            .or_else(|| after.strip_prefix(':'))?
    };
    let cleaned = rest.trim().trim_matches(['*', '"', '\'', '`']);
    (!cleaned.is_empty()).then_some(cleaned)
}

fn dedup_names<'a>(raw: impl Iterator<Item = &'a str>) -> Vec<ConditionName> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for item in raw {
        if let Ok(name) = ConditionName::new(item) {
            if seen.insert(name.normalized().to_string()) {
                out.push(name);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{ImagePayload, Split};
    use crate::gateway::{Part, ScriptedBackend};

    const TINY_JPEG: &[u8] = &[0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x10];

    fn case_with_query(query: &str) -> DermCase {
        DermCase::new(
            "case-1",
            query,
            vec![ImagePayload::new("img.jpg", TINY_JPEG.to_vec()).unwrap()],
            None,
            Split::Validation,
        )
        .unwrap()
    }

    fn names(list: &[ConditionName]) -> Vec<&str> {
        list.iter().map(|n| n.normalized()).collect()
    }

    #[test]
    fn parses_trailing_json_array_with_prose_around_it() {
        let reply = "Based on the lesion morphology I would consider:\n\
                     [\"Psoriasis\", \"Chronic Eczema\", \"Lichen Planus\"]\n\
                     Let me know if you need more detail.";
        assert_eq!(
            names(&parse_candidate_list(reply)),
            vec!["psoriasis", "chronic eczema", "lichen planus"]
        );
    }

    #[test]
    fn last_string_array_wins_over_earlier_ones() {
        let reply = "Initially [\"rosacea\"] crossed my mind.\n\
                     Final answer: [\"psoriasis\", \"folliculitis\"]";
        assert_eq!(
            names(&parse_candidate_list(reply)),
            vec!["psoriasis", "folliculitis"]
        );
    }

    #[test]
    fn non_string_arrays_are_skipped() {
        let reply = "[\"atopic dermatitis\"] scored [8, 9, 2] overall.";
        assert_eq!(names(&parse_candidate_list(reply)), vec!["atopic dermatitis"]);
    }

    #[test]
    fn falls_back_to_numbered_lists() {
        let reply = "Differential diagnosis:\n1. Prurigo Nodularis\n2) Chronic eczema.\n3: Psoriasis";
        assert_eq!(
            names(&parse_candidate_list(reply)),
            vec!["prurigo nodularis", "chronic eczema", "psoriasis"]
        );
    }

    #[test]
    fn falls_back_to_bullets_and_sheds_emphasis() {
        let reply = "- **Urticaria**\n* \"Keratosis Pilaris\"\n• rosacea";
        assert_eq!(
            names(&parse_candidate_list(reply)),
            vec!["urticaria", "keratosis pilaris", "rosacea"]
        );
    }

    #[test]
    fn duplicates_collapse_by_normalized_form() {
        let reply = "[\"Psoriasis\", \"psoriasis.\", \"PSORIASIS\", \"rosacea\"]";
        assert_eq!(names(&parse_candidate_list(reply)), vec!["psoriasis", "rosacea"]);
    }

    #[test]
    fn prose_without_lists_yields_nothing() {
        assert!(parse_candidate_list("It is hard to say without a biopsy.").is_empty());
        assert!(parse_candidate_list("").is_empty());
        assert!(parse_candidate_list("[1, 2, 3]").is_empty());
    }

    #[test]
    fn image_only_prompt_withholds_the_query() {
        let lib = PromptLibrary::bundled();
        let case = case_with_query("my secret history words");
        let conv = build_retrieval_prompt(&lib, RetrievalStrategy::ImageOnly, &case).unwrap();
        assert!(!conv.text_content().contains("my secret history words"));
        let has_image = conv.messages()[0]
            .parts()
            .iter()
            .any(|p| matches!(p, Part::Image { .. }));
        assert!(has_image);
    }

    #[test]
    fn cot_prompts_embed_the_query() {
        let lib = PromptLibrary::bundled();
        let case = case_with_query("itchy patches for two months");
        for strategy in [RetrievalStrategy::NaiveCot, RetrievalStrategy::ExpertCot] {
            let conv = build_retrieval_prompt(&lib, strategy, &case).unwrap();
            assert!(
                conv.text_content().contains("itchy patches for two months"),
                "{strategy} lost the query"
            );
        }
    }

    #[test]
    fn retrieve_builds_a_candidate_set() {
        let backend =
            ScriptedBackend::from_strs(&["Here: [\"psoriasis\", \"chronic eczema\"] done."]);
        let lib = PromptLibrary::bundled();
        let case = case_with_query("scaly elbows");
        let set = retrieve(&backend, &lib, RetrievalStrategy::NaiveCot, &case).unwrap();
        assert_eq!(set.case_id, "case-1");
        assert_eq!(set.strategy, RetrievalStrategy::NaiveCot);
        assert_eq!(names(&set.candidates), vec!["psoriasis", "chronic eczema"]);
    }

    #[test]
    fn unusable_reply_is_an_error_naming_the_case() {
        let backend = ScriptedBackend::from_strs(&["I cannot tell."]);
        let lib = PromptLibrary::bundled();
        let case = case_with_query("q");
        let err = retrieve(&backend, &lib, RetrievalStrategy::NaiveCot, &case).unwrap_err();
        assert!(matches!(
            err,
            RetrievalError::NoCandidates { case_id, .. } if case_id == "case-1"
        ));
    }
}
