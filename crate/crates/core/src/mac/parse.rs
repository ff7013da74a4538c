//! Reply parsers for the discussion turns. Models follow the requested
//! formats loosely, so each parser has a tolerant fallback; what cannot be
//! parsed after the engine's single re-ask becomes a typed error.

use crate::case::ConditionName;

use super::Critique;

/// Why a specialist reply could not be used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecialistReplyIssue {
    MissingEvidence,
    WrongCritiqueCount { expected: usize, found: usize },
    DuplicateCritique { target: String },
}

impl std::fmt::Display for SpecialistReplyIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MissingEvidence => write!(f, "no evidence section"),
            Self::WrongCritiqueCount { expected, found } => {
                write!(f, "expected {expected} critiques, found {found}")
            }
            Self::DuplicateCritique { target } => {
                write!(f, "several critiques target {target:?}")
            }
        }
    }
}

/// Split a specialist reply into the evidence paragraph and one critique
/// per rival candidate.
///
/// A critique section opens with a line `CRITIQUE <rival>: ...` (case of
/// the keyword is ignored, bullets tolerated) and runs until the next
/// section. Lines starting with `CRITIQUE` whose target matches no rival
/// are kept as ordinary content. Everything before the first section is
/// the evidence; a leading `EVIDENCE:` marker is optional. The reply must
/// cover every rival exactly once.
pub fn parse_specialist_reply(
    reply: &str,
    rivals: &[ConditionName],
) -> Result<(String, Vec<Critique>), SpecialistReplyIssue> {
    struct Section {
        rival: usize,
        text: String,
    }
    let mut evidence = String::new();
    let mut sections: Vec<Section> = Vec::new();

    for line in reply.lines() {
        if let Some((rival, inline)) = critique_head(line, rivals) {
            sections.push(Section {
                rival,
                text: inline.to_string(),
            });
            continue;
        }
        let sink = match sections.last_mut() {
            Some(section) => &mut section.text,
            None => &mut evidence,
        };
        if !sink.is_empty() {
            sink.push('\n');
        }
        sink.push_str(line);
    }

    let evidence = evidence
        .trim()
        .trim_start_matches("EVIDENCE:")
        .trim_start_matches("Evidence:")
        .trim()
        .to_string();
    if evidence.is_empty() {
        return Err(SpecialistReplyIssue::MissingEvidence);
    }

    let mut by_rival: Vec<Option<String>> = vec![None; rivals.len()];
    let mut found = 0usize;
    for section in sections {
        let slot = &mut by_rival[section.rival];
        if slot.is_some() {
            return Err(SpecialistReplyIssue::DuplicateCritique {
                target: rivals[section.rival].normalized().to_string(),
            });
        }
        *slot = Some(section.text.trim().to_string());
        found += 1;
    }
    if found != rivals.len() {
        return Err(SpecialistReplyIssue::WrongCritiqueCount {
            expected: rivals.len(),
            found,
        });
    }

    let critiques = rivals
        .iter()
        .zip(by_rival)
        .map(|(rival, text)| Critique {
            target: rival.clone(),
            text: text.expect("count checked"),
        })
        .collect();
    Ok((evidence, critiques))
}

/// If `line` opens a critique section, which rival does it target and
/// what text follows the colon?
fn critique_head<'a>(line: &'a str, rivals: &[ConditionName]) -> Option<(usize, &'a str)> {
    let trimmed = line.trim().trim_start_matches(['-', '*']).trim_start();
    if !trimmed
        .get(..8)
        .is_some_and(|p| p.eq_ignore_ascii_case("critique"))
    {
        return None;
    }
    let (target_part, inline) = trimmed[8..].split_once(':')?;
    let target = ConditionName::new(target_part).ok()?;
    let rival = unique_name_match(&target, rivals)?;
    Some((rival, inline.trim()))
}

/// Index of the single rival `target` refers to: exact normalized
/// equality, else containment either way — but only when unambiguous.
fn unique_name_match(target: &ConditionName, rivals: &[ConditionName]) -> Option<usize> {
    if let Some(exact) = rivals.iter().position(|r| r == target) {
        return Some(exact);
    }
    let t = target.normalized();
    let loose: Vec<usize> = (0..rivals.len())
        .filter(|&i| {
            let r = rivals[i].normalized();
            r.contains(t) || t.contains(r)
        })
        .collect();
    match loose.as_slice() {
        [one] => Some(*one),
        _ => None,
    }
}

/// The admin's verdict on a round of evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum AdminDecision {
    Terminate,
    /// Specialist indices to send back, in mention order.
    Revise(Vec<usize>),
    Unclear,
}

/// Read the admin's reply. The termination token is matched exactly —
/// "TERMINATE", case-sensitive — per the task contract. Revisions come
/// from a `REVISE: <names>` line, or failing that from specialist names
/// mentioned in the prose. A reply carrying both a revision request and
/// the termination token is unclear, as is one carrying neither.
pub(crate) fn decide_admin(reply: &str, specialists: &[String]) -> AdminDecision {
    let revise_targets = revise_line_targets(reply, specialists);
    let has_terminate = reply.contains("TERMINATE");

    match (&revise_targets, has_terminate) {
        (Some(targets), true) if !targets.is_empty() => AdminDecision::Unclear,
        (_, true) => AdminDecision::Terminate,
        (Some(targets), false) if !targets.is_empty() => AdminDecision::Revise(targets.clone()),
        _ => {
            let mentioned = mentioned_specialists(reply, specialists);
            if mentioned.is_empty() {
                AdminDecision::Unclear
            } else {
                AdminDecision::Revise(mentioned)
            }
        }
    }
}

/// Targets named on a `REVISE:` line, when such a line exists.
fn revise_line_targets(reply: &str, specialists: &[String]) -> Option<Vec<usize>> {
    for line in reply.lines() {
        let trimmed = line.trim().trim_start_matches(['-', '*']).trim_start();
        if !trimmed
            .get(..6)
            .is_some_and(|p| p.eq_ignore_ascii_case("revise"))
        {
            continue;
        }
        let Some((_, names)) = trimmed.split_once(':') else {
            continue;
        };
        let mut targets = Vec::new();
        for raw in names.replace(" and ", ",").split([',', '|', ';']) {
            let raw = raw.trim().trim_matches(['*', '"', '\'', '.']);
            if let Some(idx) = specialists
                .iter()
                .position(|s| s.eq_ignore_ascii_case(raw))
            {
                if !targets.contains(&idx) {
                    targets.push(idx);
                }
            }
        }
        return Some(targets);
    }
    None
}

/// Specialists whose names appear as standalone words, in mention order.
fn mentioned_specialists(reply: &str, specialists: &[String]) -> Vec<usize> {
    let bytes: Vec<char> = reply.chars().collect();
    let mut hits: Vec<(usize, usize)> = Vec::new(); // (position, index)
    for (idx, name) in specialists.iter().enumerate() {
        let mut search = 0;
        while let Some(rel) = reply[search..].find(name.as_str()) {
            let at = search + rel;
            let char_at = reply[..at].chars().count();
            let before_ok = char_at == 0 || !bytes[char_at - 1].is_alphanumeric();
            let after = char_at + name.chars().count();
            let after_ok = after >= bytes.len() || !bytes[after].is_alphanumeric();
            if before_ok && after_ok {
                hits.push((at, idx));
                break;
            }
            search = at + name.len();
        }
    }
    hits.sort();
    hits.into_iter().map(|(_, idx)| idx).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiagnosisParseError {
    #[error("no candidate named in the reply")]
    NoMatch,
    #[error("several candidates named: {matches:?}")]
    Ambiguous { matches: Vec<String> },
}

/// Pull the final diagnosis out of a reply, constrained to the candidate
/// list.
///
/// The requested format is a `FINAL_DIAGNOSIS: <condition>` line; the
/// last such marker wins and its value may carry trailing commentary.
/// Without a usable marker, the reply text is scanned for candidate names
/// longest-first (so "chronic eczema" is not double-counted as "eczema");
/// exactly one distinct candidate must remain.
pub fn extract_final_diagnosis(
    reply: &str,
    candidates: &[ConditionName],
) -> Result<ConditionName, DiagnosisParseError> {
    const MARKER: &str = "FINAL_DIAGNOSIS:";
    let upper = reply.to_uppercase();
    if let Some(at) = upper.rfind(MARKER) {
        let tail: &str = reply[at + MARKER.len()..].lines().next().unwrap_or("");
        if let Ok(stated) = ConditionName::new(tail) {
            if let Some(idx) = unique_name_match(&stated, candidates) {
                return Ok(candidates[idx].clone());
            }
        }
    }

    // Longest-first scan with consumption, so nested names count once.
    let mut haystack = squash(reply);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(candidates[i].normalized().len()));
    let mut matched: Vec<(usize, usize)> = Vec::new(); // (first position, index)
    for i in order {
        let needle = candidates[i].normalized();
        if let Some(at) = haystack.find(needle) {
            matched.push((at, i));
            haystack = haystack.replace(needle, &"\u{1}".repeat(needle.len()));
        }
    }
    matched.sort();
    match matched.as_slice() {
        [] => Err(DiagnosisParseError::NoMatch),
        [(_, one)] => Ok(candidates[*one].clone()),
        several => Err(DiagnosisParseError::Ambiguous {
            matches: several
                .iter()
                .map(|(_, i)| candidates[*i].normalized().to_string())
                .collect(),
        }),
    }
}

/// Lowercase with whitespace runs collapsed, for substring scanning.
fn squash(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = false;
    for c in text.to_lowercase().chars() {
        if c.is_whitespace() {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(c);
            last_space = false;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn name(s: &str) -> ConditionName {
        ConditionName::new(s).unwrap()
    }

    fn rivals() -> Vec<ConditionName> {
        vec![name("chronic eczema"), name("psoriasis")]
    }

    #[test]
    fn splits_evidence_and_critiques() {
        let reply = "EVIDENCE: Nodular pruritic lesions with excoriations.\n\
                     CRITIQUE chronic eczema: lacks the flexural distribution.\n\
                     CRITIQUE psoriasis: no silvery scale is visible.";
        let (evidence, critiques) = parse_specialist_reply(reply, &rivals()).unwrap();
        assert_eq!(evidence, "Nodular pruritic lesions with excoriations.");
        assert_eq!(critiques.len(), 2);
        assert_eq!(critiques[0].target.normalized(), "chronic eczema");
        assert!(critiques[1].text.contains("silvery scale"));
    }

    #[test]
    fn critique_sections_span_multiple_lines() {
        let reply = "The lesions are classic.\n\
                     Critique Chronic Eczema: first point.\nSecond point continues.\n\
                     critique psoriasis: short.";
        let (evidence, critiques) = parse_specialist_reply(reply, &rivals()).unwrap();
        assert_eq!(evidence, "The lesions are classic.");
        assert!(critiques[0].text.contains("Second point continues."));
    }

    #[test]
    fn unmatched_critique_heads_are_content_not_sections() {
        let reply = "EVIDENCE: solid.\n\
                     CRITIQUE methodology: not a candidate.\n\
                     CRITIQUE chronic eczema: a.\nCRITIQUE psoriasis: b.";
        let (evidence, critiques) = parse_specialist_reply(reply, &rivals()).unwrap();
        assert!(evidence.contains("not a candidate"));
        assert_eq!(critiques.len(), 2);
    }

    #[test]
    fn missing_critique_is_counted() {
        let reply = "EVIDENCE: fine.\nCRITIQUE psoriasis: only one.";
        let err = parse_specialist_reply(reply, &rivals()).unwrap_err();
        assert_eq!(
            err,
            SpecialistReplyIssue::WrongCritiqueCount {
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn duplicate_critique_is_rejected() {
        let reply = "EVIDENCE: fine.\nCRITIQUE psoriasis: one.\n\
                     CRITIQUE chronic eczema: ok.\nCRITIQUE psoriasis: again.";
        let err = parse_specialist_reply(reply, &rivals()).unwrap_err();
        assert!(matches!(err, SpecialistReplyIssue::DuplicateCritique { target } if target == "psoriasis"));
    }

    #[test]
    fn evidence_is_required() {
        let reply = "CRITIQUE chronic eczema: a.\nCRITIQUE psoriasis: b.";
        assert_eq!(
            parse_specialist_reply(reply, &rivals()).unwrap_err(),
            SpecialistReplyIssue::MissingEvidence
        );
    }

    fn team() -> Vec<String> {
        vec!["Rick".into(), "Sam".into(), "Michael".into()]
    }

    #[test]
    fn terminate_token_is_case_sensitive() {
        assert_eq!(
            decide_admin("We are done. TERMINATE", &team()),
            AdminDecision::Terminate
        );
        // Lowercase is not the token; with no names mentioned the reply
        // is unclear.
        assert_eq!(
            decide_admin("please terminate now", &team()),
            AdminDecision::Unclear
        );
    }

    #[test]
    fn terminate_inside_emphasis_still_counts() {
        assert_eq!(
            decide_admin("Please **TERMINATE** the conversation.", &team()),
            AdminDecision::Terminate
        );
    }

    #[test]
    fn revise_line_names_specialists() {
        assert_eq!(
            decide_admin("Weak evidence.\nREVISE: Sam, Michael\nStrengthen it.", &team()),
            AdminDecision::Revise(vec![1, 2])
        );
        assert_eq!(
            decide_admin("revise: rick and sam", &team()),
            AdminDecision::Revise(vec![0, 1])
        );
    }

    #[test]
    fn prose_mentions_fall_back_to_revision() {
        let reply = "I would like to ask Sam to enhance the evidence for Chronic Eczema.";
        assert_eq!(decide_admin(reply, &team()), AdminDecision::Revise(vec![1]));
    }

    #[test]
    fn name_mentions_respect_word_boundaries() {
        // "Samples" must not read as "Sam".
        assert_eq!(
            decide_admin("Samples look inconclusive.", &team()),
            AdminDecision::Unclear
        );
    }

    #[test]
    fn both_revise_and_terminate_is_unclear() {
        let reply = "REVISE: Sam\nOtherwise TERMINATE.";
        assert_eq!(decide_admin(reply, &team()), AdminDecision::Unclear);
    }

    fn five() -> Vec<ConditionName> {
        [
            "prurigo nodularis",
            "chronic eczema",
            "psoriasis",
            "lichen simplex chronicus",
            "allergic or irritant contact dermatitis",
        ]
        .map(name)
        .to_vec()
    }

    #[test]
    fn marker_line_wins() {
        let reply = "We weighed prurigo nodularis and psoriasis carefully.\n\
                     FINAL_DIAGNOSIS: Chronic Eczema";
        assert_eq!(
            extract_final_diagnosis(reply, &five()).unwrap().normalized(),
            "chronic eczema"
        );
    }

    #[test]
    fn last_marker_takes_precedence() {
        let reply = "FINAL_DIAGNOSIS: psoriasis\nOn reflection:\nFINAL_DIAGNOSIS: chronic eczema.";
        assert_eq!(
            extract_final_diagnosis(reply, &five()).unwrap().normalized(),
            "chronic eczema"
        );
    }

    #[test]
    fn marker_value_tolerates_trailing_commentary() {
        let reply = "FINAL_DIAGNOSIS: Chronic Eczema (most consistent with the observation)";
        assert_eq!(
            extract_final_diagnosis(reply, &five()).unwrap().normalized(),
            "chronic eczema"
        );
    }

    #[test]
    fn fallback_scan_requires_a_unique_candidate() {
        let ok = extract_final_diagnosis("The team settles on chronic eczema.", &five());
        assert_eq!(ok.unwrap().normalized(), "chronic eczema");

        let none = extract_final_diagnosis("No consensus was reached.", &five());
        assert_eq!(none.unwrap_err(), DiagnosisParseError::NoMatch);

        let two = extract_final_diagnosis("Either psoriasis or chronic eczema.", &five());
        assert!(matches!(
            two.unwrap_err(),
            DiagnosisParseError::Ambiguous { matches } if matches.len() == 2
        ));
    }

    #[test]
    fn longer_names_consume_their_words_first() {
        let candidates = vec![name("eczema"), name("chronic eczema")];
        let picked = extract_final_diagnosis("It is chronic eczema.", &candidates).unwrap();
        assert_eq!(picked.normalized(), "chronic eczema");
    }

    #[test]
    fn line_wrapped_names_still_match() {
        let reply = "The likeliest is lichen\n   simplex   chronicus overall.";
        assert_eq!(
            extract_final_diagnosis(reply, &five()).unwrap().normalized(),
            "lichen simplex chronicus"
        );
    }
}
