//! Prompt templates. The canonical texts live under `prompts/` at the
//! repository root and are compiled in, so a built binary needs no data
//! files; a directory of replacement templates can override any of them
//! at runtime (the prompt optimizer and ablation runs depend on that).
//!
//! Substitution syntax is a bare `{key}` of lowercase letters and
//! underscores. Substitution happens in a single pass, so values are free
//! to contain braces of their own.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template {prompt} needs a value for {{{key}}}")]
    MissingValue { prompt: &'static str, key: String },
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Every template the pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptName {
    RetrievalNaiveCot,
    RetrievalExpertCot,
    RetrievalImageOnly,
    RerankNaiveCot,
    RerankExpertContext,
    RerankExpertImage,
    MacCoordinator,
    MacSpecialist,
    MacAdmin,
    MacTask,
    MacObservation,
    Aligner,
    Judge,
    ApoCritic,
}

impl PromptName {
    pub const ALL: [PromptName; 14] = [
        PromptName::RetrievalNaiveCot,
        PromptName::RetrievalExpertCot,
        PromptName::RetrievalImageOnly,
        PromptName::RerankNaiveCot,
        PromptName::RerankExpertContext,
        PromptName::RerankExpertImage,
        PromptName::MacCoordinator,
        PromptName::MacSpecialist,
        PromptName::MacAdmin,
        PromptName::MacTask,
        PromptName::MacObservation,
        PromptName::Aligner,
        PromptName::Judge,
        PromptName::ApoCritic,
    ];

    /// File stem under the template directory.
    pub fn file_name(self) -> &'static str {
        match self {
            PromptName::RetrievalNaiveCot => "retrieval_naive_cot.txt",
            PromptName::RetrievalExpertCot => "retrieval_expert_cot.txt",
            PromptName::RetrievalImageOnly => "retrieval_image_only.txt",
            PromptName::RerankNaiveCot => "rerank_naive_cot.txt",
            PromptName::RerankExpertContext => "rerank_expert_context.txt",
            PromptName::RerankExpertImage => "rerank_expert_image.txt",
            PromptName::MacCoordinator => "mac_coordinator.txt",
            PromptName::MacSpecialist => "mac_specialist.txt",
            PromptName::MacAdmin => "mac_admin.txt",
            PromptName::MacTask => "mac_task.txt",
            PromptName::MacObservation => "mac_observation.txt",
            PromptName::Aligner => "aligner.txt",
            PromptName::Judge => "judge.txt",
            PromptName::ApoCritic => "apo_critic.txt",
        }
    }

    fn bundled_text(self) -> &'static str {
        match self {
            PromptName::RetrievalNaiveCot => include_str!("../../../prompts/retrieval_naive_cot.txt"),
            PromptName::RetrievalExpertCot => include_str!("../../../prompts/retrieval_expert_cot.txt"),
            PromptName::RetrievalImageOnly => include_str!("../../../prompts/retrieval_image_only.txt"),
            PromptName::RerankNaiveCot => include_str!("../../../prompts/rerank_naive_cot.txt"),
            PromptName::RerankExpertContext => include_str!("../../../prompts/rerank_expert_context.txt"),
            PromptName::RerankExpertImage => include_str!("../../../prompts/rerank_expert_image.txt"),
            PromptName::MacCoordinator => include_str!("../../../prompts/mac_coordinator.txt"),
            PromptName::MacSpecialist => include_str!("../../../prompts/mac_specialist.txt"),
            PromptName::MacAdmin => include_str!("../../../prompts/mac_admin.txt"),
            PromptName::MacTask => include_str!("../../../prompts/mac_task.txt"),
            PromptName::MacObservation => include_str!("../../../prompts/mac_observation.txt"),
            PromptName::Aligner => include_str!("../../../prompts/aligner.txt"),
            PromptName::Judge => include_str!("../../../prompts/judge.txt"),
            PromptName::ApoCritic => include_str!("../../../prompts/apo_critic.txt"),
        }
    }

    fn label(self) -> &'static str {
        self.file_name().trim_end_matches(".txt")
    }
}

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: HashMap<PromptName, String>,
}

impl PromptLibrary {
    /// The compiled-in templates.
    pub fn bundled() -> Self {
        let templates = PromptName::ALL
            .iter()
            .map(|&name| (name, name.bundled_text().to_string()))
            .collect();
        Self { templates }
    }

    /// Bundled templates with any file present in `dir` taking precedence.
    /// Files in `dir` that match no known template name are ignored.
    pub fn load_from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut lib = Self::bundled();
        for name in PromptName::ALL {
            let path = dir.join(name.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| PromptError::Io { path, source })?;
                lib.templates.insert(name, text);
            }
        }
        Ok(lib)
    }

    /// Replace one template in place (the prompt optimizer rewrites the
    /// aligner rules this way).
    pub fn set(&mut self, name: PromptName, text: impl Into<String>) {
        self.templates.insert(name, text.into());
    }

    pub fn get(&self, name: PromptName) -> &str {
        &self.templates[&name]
    }

    /// Fill `{key}` placeholders from `vars` in one pass. Every
    /// placeholder in the template must be covered; unused vars are fine.
    pub fn render(&self, name: PromptName, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let template = self.get(name);
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(at) = rest.find('{') {
            out.push_str(&rest[..at]);
            let tail = &rest[at + 1..];
            if let Some(end) = tail.find('}') {
                let key = &tail[..end];
                let is_placeholder = !key.is_empty()
                    && key.chars().all(|c| c.is_ascii_lowercase() || c == '_');
                if is_placeholder {
                    let value = vars
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::MissingValue {
                            prompt: name.label(),
                            key: key.to_string(),
                        })?;
                    out.push_str(value);
                    rest = &tail[end + 1..];
                    continue;
                }
            }
            // A brace that opens no placeholder stays literal.
            out.push('{');
            rest = tail;
        }
        out.push_str(rest);
        Ok(out)
    }
}
