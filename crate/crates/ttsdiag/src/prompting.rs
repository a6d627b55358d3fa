//! Prompt templates and the builders that turn a task into request text.
//!
//! Templates use `{name}` placeholders. Rendering is a single pass over the
//! template: inserted values are never rescanned, so feature text containing
//! brace sequences cannot inject placeholders. Unknown placeholders pass
//! through verbatim, which keeps literal braces like `\boxed{}` intact.
//!
//! Prompts that demand a boxed binary answer always end with the boxed
//! instruction. Stage-1 description prompts never carry it: a grading
//! instruction would push the describer toward premature classification.
//! No system prompt is injected; `system_text` stays empty unless a caller
//! sets it.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::dataset::TaskSpec;
use crate::hashing::{sha256_hex, sha256_parts_hex};

/// What the caller expects back from the endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerFormat {
    /// A final `\boxed{0}` or `\boxed{1}` grade.
    BoxedBinary,
    /// Unconstrained text, e.g. a feature description.
    FreeText,
}

/// How the stage-1 describe prompt is phrased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Variant {
    /// Neutral: describe whatever is visible.
    Unconstrained,
    /// Steered: describe only features tied to the positive class.
    Dictated,
}

/// The six template fragments every run draws from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplates {
    pub zero_shot: String,
    pub cot: String,
    pub stage1_unconstrained: String,
    pub stage1_dictated: String,
    pub stage2: String,
    pub boxed_instruction: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("cannot read template file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid template file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("stage-2 prompt needs non-empty feature text")]
    EmptyFeatures,
}

static BUILTIN: LazyLock<PromptTemplates> = LazyLock::new(|| {
    serde_json::from_str(include_str!("../prompts/default.json"))
        .expect("bundled prompt templates are valid")
});

impl PromptTemplates {
    /// The bundled defaults.
    pub fn builtin() -> &'static PromptTemplates {
        &BUILTIN
    }

    /// Load templates from a JSON file holding exactly the six keys.
    pub fn from_file(path: &Path) -> Result<PromptTemplates, PromptError> {
        let bytes = fs::read(path).map_err(|source| PromptError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| PromptError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Hex SHA-256 over the canonical JSON form, for provenance records.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("templates serialize");
        sha256_hex(&canonical)
    }
}

/// A fully rendered prompt plus what the request built from it needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Empty by default; no system prompt is assumed.
    pub system_text: String,
    pub user_text: String,
    /// Whether the request must attach the sample image.
    pub wants_image: bool,
    pub answer_format: AnswerFormat,
}

impl PromptBundle {
    /// Hex SHA-256 over (system_text, user_text); identifies the prompt in
    /// records and cache keys.
    pub fn digest(&self) -> String {
        sha256_parts_hex(&[self.system_text.as_bytes(), self.user_text.as_bytes()])
    }
}

/// Substitute `{name}` placeholders in a single pass.
///
/// Inserted values are emitted directly and never rescanned. A `{...}` whose
/// body is not a known variable passes through verbatim, as does any brace
/// that never closes.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find(['{', '}']) {
            Some(end) if after.as_bytes()[end] == b'}' => {
                let key = &after[..end];
                if let Some((_, value)) = vars.iter().find(|(k, _)| *k == key) {
                    out.push_str(value);
                } else {
                    out.push('{');
                    out.push_str(key);
                    out.push('}');
                }
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn task_vars(task: &TaskSpec) -> [(&'static str, &str); 3] {
    [
        ("modality", task.modality_phrase.as_str()),
        ("class0", task.class0_name.as_str()),
        ("class1", task.class1_name.as_str()),
    ]
}

fn boxed_bundle(body: String, templates: &PromptTemplates, wants_image: bool) -> PromptBundle {
    PromptBundle {
        system_text: String::new(),
        user_text: format!("{body}\n{}", templates.boxed_instruction),
        wants_image,
        answer_format: AnswerFormat::BoxedBinary,
    }
}

/// Direct classification prompt: question plus the boxed instruction.
pub fn build_zero_shot(templates: &PromptTemplates, task: &TaskSpec) -> PromptBundle {
    boxed_bundle(render(&templates.zero_shot, &task_vars(task)), templates, true)
}

/// Chain-of-thought classification prompt with the step-by-step trigger.
pub fn build_one_stage_cot(templates: &PromptTemplates, task: &TaskSpec) -> PromptBundle {
    boxed_bundle(render(&templates.cot, &task_vars(task)), templates, true)
}

/// Stage-1 description prompt. Carries no grading instruction.
pub fn build_stage1(
    templates: &PromptTemplates,
    task: &TaskSpec,
    variant: Stage1Variant,
) -> PromptBundle {
    let template = match variant {
        Stage1Variant::Unconstrained => &templates.stage1_unconstrained,
        Stage1Variant::Dictated => &templates.stage1_dictated,
    };
    PromptBundle {
        system_text: String::new(),
        user_text: render(template, &task_vars(task)),
        wants_image: true,
        answer_format: AnswerFormat::FreeText,
    }
}

/// Stage-2 diagnosis prompt over a stage-1 description. Text only: the
/// decider judges the description, not the image.
pub fn build_stage2(
    templates: &PromptTemplates,
    task: &TaskSpec,
    features_text: &str,
) -> Result<PromptBundle, PromptError> {
    if features_text.is_empty() {
        return Err(PromptError::EmptyFeatures);
    }
    let mut vars = task_vars(task).to_vec();
    vars.push(("features", features_text));
    Ok(boxed_bundle(render(&templates.stage2, &vars), templates, false))
}
