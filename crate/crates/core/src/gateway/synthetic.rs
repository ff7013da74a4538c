//! A deterministic stand-in model. Given the same seed and the same
//! prompts it always produces the same replies, which is what makes
//! end-to-end record/replay testing possible without a network.
//!
//! It reads the instructions in each prompt the way a real model would —
//! answering retrieval prompts with a JSON candidate array, scoring
//! prompts with SCORE lines, conversation prompts with protocol-shaped
//! turns — but derives all free choices from a hash of (seed, prompt), so
//! nothing is random.

use sha2::{Digest, Sha256};

use super::{Backend, CallCtx, Conversation, GatewayError, Stage};

/// Condition vocabulary the synthetic model "knows". Candidate lists are
/// drawn from here; names mentioned in the prompt text are preferred so
/// runs over cases that hint at their condition stay coherent end to end.
const POOL: &[&str] = &[
    "prurigo nodularis",
    "chronic eczema",
    "psoriasis",
    "lichen simplex chronicus",
    "allergic contact dermatitis",
    "seborrheic dermatitis",
    "atopic dermatitis",
    "tinea corporis",
    "rosacea",
    "folliculitis",
    "urticaria",
    "keratosis pilaris",
];

pub struct SyntheticBackend {
    seed: u64,
}

impl SyntheticBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn hash(&self, text: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    fn answer_retrieval(&self, prompt: &str) -> String {
        let lower = prompt.to_lowercase();
        let mut picked: Vec<&str> = POOL
            .iter()
            .copied()
            .filter(|name| name.split(' ').any(|w| w.len() >= 5 && lower.contains(w)))
            .collect();
        let mut cursor = self.hash(prompt);
        while picked.len() < 4 {
            let candidate = POOL[(cursor % POOL.len() as u64) as usize];
            cursor = cursor.wrapping_mul(6364136223846793005).wrapping_add(1);
            if !picked.contains(&candidate) {
                picked.push(candidate);
            }
        }
        let listed = picked
            .iter()
            .map(|n| format!("\"{n}\""))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "{} The differential considers {} possibilities.\n[{}]",
            self.observation(prompt),
            picked.len(),
            listed
        )
    }

    fn observation(&self, key: &str) -> String {
        let sizes = ["small", "large", "pea-sized"];
        let colors = ["erythematous", "hyperpigmented", "violaceous"];
        let textures = ["scaly", "smooth", "lichenified"];
        let h = self.hash(key);
        format!(
            "The images show multiple {} {} lesions with a {} surface, sharply bordered and asymmetrically distributed.",
            sizes[(h % 3) as usize],
            colors[((h >> 8) % 3) as usize],
            textures[((h >> 16) % 3) as usize],
        )
    }

    fn answer_rerank(&self, prompt: &str) -> String {
        let candidates = block_after(prompt, "Candidates:");
        let mut out = String::from("Considering the visual evidence against each candidate:\n");
        for name in &candidates {
            let score = 1 + self.hash(&format!("{name}|{prompt}")) % 10;
            out.push_str(&format!("SCORE {name}: {score}\n"));
        }
        out
    }

    /// MAC calls all share a task preamble, so dispatch keys on the
    /// engine's current instruction — the last message — while the free
    /// choices hash the whole prompt for per-case stability.
    fn answer_mac(&self, prompt: &str, instruction: &str) -> String {
        if instruction.contains("generate a clinical observation") {
            return self.observation(prompt);
        }
        if instruction.contains("Announce the assignments") {
            let lines: Vec<&str> = instruction
                .lines()
                .filter(|l| l.trim_start().starts_with("ASSIGN "))
                .collect();
            return format!("The assignments are set.\n{}", lines.join("\n"));
        }
        if let Some(assigned) = line_value(instruction, "Your assigned condition:") {
            let others = line_value(instruction, "Other candidates:")
                .map(|v| split_pipes(&v))
                .unwrap_or_default();
            let mut out = format!(
                "EVIDENCE: The observation aligns with {assigned}: the lesion morphology, distribution and chronicity all support it.\n"
            );
            for other in others {
                out.push_str(&format!(
                    "CRITIQUE {other}: {other} fits less well because the described features diverge from its classic presentation.\n"
                ));
            }
            return out;
        }
        if instruction.contains("Compile the specialists") {
            return "Compiled report: each specialist has presented evidence for their assigned condition and critiques of the rest.".to_string();
        }
        if instruction.contains("Refine your evidence") {
            return "REFINED EVIDENCE: On review, the supporting features are stronger than first stated, and the admin's concerns are addressed point by point.".to_string();
        }
        if let Some(rounds) = line_value(instruction, "Revision rounds completed:") {
            let specialists = line_value(instruction, "Specialists:")
                .map(|v| split_pipes(&v))
                .unwrap_or_default();
            let wants_revision = self.hash(prompt) % 2 == 0;
            if rounds.trim() == "0" && wants_revision && !specialists.is_empty() {
                return format!(
                    "The evidence for some candidates is thin. REVISE: {}\nPlease strengthen the tuned description against the observation.",
                    specialists[0]
                );
            }
            return "Consensus reached; the critiques converge. TERMINATE".to_string();
        }
        if instruction.contains("FINAL_DIAGNOSIS:") {
            let candidates = line_value(instruction, "Candidates:")
                .map(|v| split_pipes(&v))
                .unwrap_or_default();
            let best = candidates
                .iter()
                .max_by_key(|name| self.hash(&format!("final|{name}|{prompt}")))
                .cloned()
                .unwrap_or_else(|| "unknown".to_string());
            return format!("The panel agrees on the leading candidate. FINAL_DIAGNOSIS: {best}");
        }
        "Understood.".to_string()
    }

    fn answer_align(&self, prompt: &str) -> String {
        let draft = section_after(prompt, "Draft:");
        let draft = draft.trim();
        let body: String = draft.chars().take(400).collect();
        format!(
            "Thank you for sharing the images and your history. {body} This condition is commonly seen and manageable. If symptoms persist or worsen, please see a dermatologist in person."
        )
    }

    fn answer_judge(&self, prompt: &str) -> String {
        let a = line_value(prompt, "Condition A:").unwrap_or_default();
        let b = line_value(prompt, "Condition B:").unwrap_or_default();
        let a = a.trim().to_lowercase();
        let b = b.trim().to_lowercase();
        if a == b {
            return "VERDICT: SIMILAR, RULE: 1".to_string();
        }
        let shares_root = a
            .split(' ')
            .any(|w| w.len() >= 5 && b.split(' ').any(|v| v == w));
        if shares_root {
            "VERDICT: SIMILAR, RULE: 3".to_string()
        } else {
            "VERDICT: DIFFERENT, RULE: 1".to_string()
        }
    }

    fn answer_apo(&self) -> String {
        // A valid replacement rule set; content is fixed since the critic's
        // creativity is not what synthetic runs test.
        r#"Here is a tightened rule set.
```json
[
  {"index": 1, "title": "Simplify and Be Direct", "example": "It looks like psoriasis.", "explanation": "Lead with the diagnosis in plain words."},
  {"index": 2, "title": "Use Patient-Friendly Language", "example": "This rash is not contagious.", "explanation": "Avoid jargon; reassure where warranted."}
]
```"#
        .to_string()
    }
}

impl Backend for SyntheticBackend {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        let prompt = conversation.text_content();
        let instruction = conversation
            .messages()
            .last()
            .map(|m| m.text())
            .unwrap_or_default();
        let reply = match ctx.stage {
            Stage::Retrieval => self.answer_retrieval(&prompt),
            Stage::Rerank => self.answer_rerank(&prompt),
            Stage::Mac => self.answer_mac(&prompt, &instruction),
            Stage::Align => self.answer_align(&prompt),
            Stage::Judge => self.answer_judge(&prompt),
            Stage::Apo => self.answer_apo(),
        };
        Ok(reply)
    }
}

/// Lines following `marker` up to the first blank line, trimmed.
fn block_after(text: &str, marker: &str) -> Vec<String> {
    let Some(at) = text.find(marker) else {
        return Vec::new();
    };
    text[at + marker.len()..]
        .lines()
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .map(|l| l.trim().trim_start_matches('-').trim().to_string())
        .collect()
}

/// Everything after the line containing `marker`, on the same line.
fn line_value(text: &str, marker: &str) -> Option<String> {
    text.lines().find_map(|l| {
        let l = l.trim();
        l.starts_with(marker)
            .then(|| l[marker.len()..].trim().to_string())
    })
}

/// Everything after the first occurrence of `marker` to the end of text,
/// minus a trailing instruction paragraph if one follows a blank line.
fn section_after(text: &str, marker: &str) -> String {
    let Some(at) = text.find(marker) else {
        return String::new();
    };
    let rest = &text[at + marker.len()..];
    match rest.find("\n\nReply") {
        Some(end) => rest[..end].to_string(),
        None => rest.to_string(),
    }
}

fn split_pipes(value: &str) -> Vec<String> {
    value
        .split('|')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}
