//! Execute one diagnostic strategy for one sample: build prompts, collect N
//! generations, parse boxed answers.
//!
//! Endpoint failures never abort a sample. A failed generation becomes a
//! record with an Unparseable parse and an error note, and validity
//! accounting happens downstream in `aggregate`. Requests are issued through
//! the [`Completer`] trait so the runner can interpose its cache.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::client::{ChatRequest, Completer, Completion, EndpointConfig, FinishReason};
use crate::dataset::{DatasetError, Sample, TaskSpec, encode_image};
use crate::hashing::{hash_to_u64, sha256_parts};
use crate::prompting::{
    PromptBundle, PromptTemplates, Stage1Variant, build_one_stage_cot, build_stage1, build_stage2,
    build_zero_shot,
};

/// The three diagnostic strategies under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ZeroShot,
    OneStageCot,
    DescribeThenDiagnose,
}

impl Method {
    /// Stable name used in metrics keys and reports.
    pub fn name(&self) -> &'static str {
        match self {
            Method::ZeroShot => "zero_shot",
            Method::OneStageCot => "one_stage_cot",
            Method::DescribeThenDiagnose => "describe_then_diagnose",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How to run one method: sampling breadth, temperatures, and endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default = "default_stage1_variant")]
    pub stage1_variant: Stage1Variant,
    /// N: generations sampled per sample.
    pub num_samples: u32,
    /// Sampling temperature for the vision stage (and direct methods).
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Stage-2 decodes greedily by default so randomness enters only through
    /// stage-1 sampling; override for ablations.
    #[serde(default)]
    pub stage2_temperature: f64,
    pub stage1_endpoint: EndpointConfig,
    /// Required for DescribeThenDiagnose; ignored by the direct methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_endpoint: Option<EndpointConfig>,
}

fn default_stage1_variant() -> Stage1Variant {
    Stage1Variant::Unconstrained
}
fn default_temperature() -> f64 {
    0.7
}

impl MethodConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.num_samples == 0 {
            return Err(PipelineError::InvalidConfig(
                "num_samples must be at least 1".into(),
            ));
        }
        for (name, t) in [
            ("temperature", self.temperature),
            ("stage2_temperature", self.stage2_temperature),
        ] {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(PipelineError::InvalidConfig(format!(
                    "{name} must be a non-negative finite number, got {t}"
                )));
            }
        }
        self.stage1_endpoint
            .validate()
            .map_err(PipelineError::InvalidConfig)?;
        match &self.stage2_endpoint {
            Some(e) => e.validate().map_err(PipelineError::InvalidConfig)?,
            None => {
                if self.method == Method::DescribeThenDiagnose {
                    return Err(PipelineError::InvalidConfig(
                        "describe_then_diagnose needs a stage2_endpoint".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Which call produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Single-call methods (zero-shot, CoT).
    Direct,
    /// Describe: vision model emits a feature description.
    Stage1,
    /// Diagnose: text model grades the description.
    Stage2,
}

/// A parsed boxed answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParsedAnswer {
    Class0,
    Class1,
    Unparseable,
}

/// One model call's outcome. Stage1 records carry no parse (descriptions are
/// not answers); Direct and Stage2 records always carry one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub sample_id: String,
    pub stage: Stage,
    /// Generation index i in [0, N).
    pub index: u32,
    /// Hex SHA-256 of the prompt that produced this record.
    pub prompt_digest: String,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<ParsedAnswer>,
    /// Endpoint failure note; the record then parses as Unparseable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("method config invalid: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] DatasetError),
}

static BOXED: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"\\boxed\{([0-9]+)\}").expect("valid pattern"));

/// Extract the verdict from completion text.
///
/// Scans for `\boxed{D}` tokens with a contiguous digit payload and judges
/// the LAST one: reasoning text may mention candidate boxes along the way,
/// and the final one is the answer. Exactly "0" or "1" counts; anything else
/// (no token, other digits, non-digit payloads) is Unparseable. Total
/// function: any string maps to exactly one variant.
pub fn parse_boxed_answer(text: &str) -> ParsedAnswer {
    match BOXED
        .captures_iter(text)
        .last()
        .map(|c| c.get(1).expect("group 1 exists").as_str())
    {
        Some("0") => ParsedAnswer::Class0,
        Some("1") => ParsedAnswer::Class1,
        _ => ParsedAnswer::Unparseable,
    }
}

/// Derive the content-addressed identity of one generation request. The
/// tuple (model, prompt, image, index, temperature) pins everything that
/// selects a completion, so equal keys must mean interchangeable responses.
pub fn request_key(
    model_name: &str,
    prompt_digest: &str,
    image_digest: Option<&str>,
    index: u32,
    temperature: f64,
) -> String {
    hex::encode(sha256_parts(&[
        model_name.as_bytes(),
        prompt_digest.as_bytes(),
        image_digest.unwrap_or("").as_bytes(),
        &index.to_le_bytes(),
        &temperature.to_le_bytes(),
    ]))
}

/// Per-request seed forwarded on the wire: a function of the run seed and
/// the request identity, so distinct generation indices draw independently
/// from the deterministic mock while reruns stay byte-identical.
pub fn request_seed(run_seed: u64, request_tag: &str) -> u64 {
    hash_to_u64(&sha256_parts(&[
        b"request-seed",
        &run_seed.to_le_bytes(),
        request_tag.as_bytes(),
    ]))
}

/// Everything a strategy needs besides the sample itself.
pub struct PipelineContext<'a> {
    pub templates: &'a PromptTemplates,
    pub completer: &'a dyn Completer,
    /// Governs the wire seed of every request issued under this run.
    pub run_seed: u64,
}

fn completion_error(c: &Completion) -> Option<String> {
    match c.finish_reason {
        FinishReason::Error => Some(
            c.error
                .clone()
                .unwrap_or_else(|| "endpoint error".to_string()),
        ),
        _ => None,
    }
}

fn build_requests(
    ctx: &PipelineContext,
    endpoint: &EndpointConfig,
    bundle: &PromptBundle,
    image: Option<&crate::dataset::ImagePayload>,
    temperature: f64,
    indices: impl Iterator<Item = u32>,
) -> Vec<ChatRequest> {
    let prompt_digest = bundle.digest();
    indices
        .map(|i| {
            let tag = request_key(
                &endpoint.model_name,
                &prompt_digest,
                image.map(|p| p.content_digest.as_str()),
                i,
                temperature,
            );
            let seed = request_seed(ctx.run_seed, &tag);
            ChatRequest {
                prompt: bundle.clone(),
                image: image.cloned(),
                temperature,
                request_tag: tag,
                seed: Some(seed),
            }
        })
        .collect()
}

fn direct_records(
    sample: &Sample,
    bundle: &PromptBundle,
    completions: &[Completion],
) -> Vec<GenerationRecord> {
    let digest = bundle.digest();
    completions
        .iter()
        .enumerate()
        .map(|(i, c)| GenerationRecord {
            sample_id: sample.id.clone(),
            stage: Stage::Direct,
            index: i as u32,
            prompt_digest: digest.clone(),
            raw_text: c.text.clone(),
            parsed: Some(parse_boxed_answer(&c.text)),
            error: completion_error(c),
        })
        .collect()
}

fn run_direct(
    ctx: &PipelineContext,
    sample: &Sample,
    cfg: &MethodConfig,
    bundle: &PromptBundle,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    cfg.validate()?;
    let image = encode_image(sample)?;
    let reqs = build_requests(
        ctx,
        &cfg.stage1_endpoint,
        bundle,
        Some(&image),
        cfg.temperature,
        0..cfg.num_samples,
    );
    let completions = ctx.completer.complete_batch(&cfg.stage1_endpoint, &reqs);
    Ok(direct_records(sample, bundle, &completions))
}

/// Zero-shot QA: N sampled completions of the direct classification prompt.
pub fn run_zero_shot(
    ctx: &PipelineContext,
    sample: &Sample,
    task: &TaskSpec,
    cfg: &MethodConfig,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    if cfg.method != Method::ZeroShot {
        return Err(PipelineError::InvalidConfig(format!(
            "run_zero_shot called with method {}",
            cfg.method
        )));
    }
    run_direct(ctx, sample, cfg, &build_zero_shot(ctx.templates, task))
}

/// One-stage CoT: as zero-shot, with the step-by-step trigger; the reasoning
/// text is retained in raw_text.
pub fn run_one_stage_cot(
    ctx: &PipelineContext,
    sample: &Sample,
    task: &TaskSpec,
    cfg: &MethodConfig,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    if cfg.method != Method::OneStageCot {
        return Err(PipelineError::InvalidConfig(format!(
            "run_one_stage_cot called with method {}",
            cfg.method
        )));
    }
    run_direct(ctx, sample, cfg, &build_one_stage_cot(ctx.templates, task))
}

/// Describe-then-diagnose: N sampled stage-1 descriptions, each graded by
/// exactly one stage-2 completion with the matching index. Returns 2N
/// records (N Stage1 + N Stage2).
///
/// A failed stage-1 generation yields an empty-text Stage1 record and a
/// paired Unparseable Stage2 record; no stage-2 call is made for it, since
/// there is nothing to grade.
pub fn run_describe_then_diagnose(
    ctx: &PipelineContext,
    sample: &Sample,
    task: &TaskSpec,
    cfg: &MethodConfig,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    if cfg.method != Method::DescribeThenDiagnose {
        return Err(PipelineError::InvalidConfig(format!(
            "run_describe_then_diagnose called with method {}",
            cfg.method
        )));
    }
    cfg.validate()?;
    let stage2_endpoint = cfg.stage2_endpoint.as_ref().expect("validated above");

    let stage1_bundle = build_stage1(ctx.templates, task, cfg.stage1_variant);
    let image = encode_image(sample)?;
    let stage1_reqs = build_requests(
        ctx,
        &cfg.stage1_endpoint,
        &stage1_bundle,
        Some(&image),
        cfg.temperature,
        0..cfg.num_samples,
    );
    let stage1_completions = ctx.completer.complete_batch(&cfg.stage1_endpoint, &stage1_reqs);

    let stage1_digest = stage1_bundle.digest();
    let mut records: Vec<GenerationRecord> = Vec::with_capacity(2 * cfg.num_samples as usize);
    for (i, c) in stage1_completions.iter().enumerate() {
        records.push(GenerationRecord {
            sample_id: sample.id.clone(),
            stage: Stage::Stage1,
            index: i as u32,
            prompt_digest: stage1_digest.clone(),
            raw_text: c.text.clone(),
            parsed: None,
            error: completion_error(c),
        });
    }

    // Build stage-2 requests only for gradable descriptions; remember which
    // index each one belongs to.
    let mut stage2_reqs: Vec<ChatRequest> = Vec::new();
    let mut stage2_owners: Vec<(u32, String)> = Vec::new();
    for (i, c) in stage1_completions.iter().enumerate() {
        if c.text.is_empty() {
            continue;
        }
        let bundle = build_stage2(ctx.templates, task, &c.text)
            .expect("non-empty features always build");
        let mut reqs = build_requests(
            ctx,
            stage2_endpoint,
            &bundle,
            None,
            cfg.stage2_temperature,
            std::iter::once(i as u32),
        );
        stage2_owners.push((i as u32, bundle.digest()));
        stage2_reqs.append(&mut reqs);
    }
    let stage2_completions = ctx.completer.complete_batch(stage2_endpoint, &stage2_reqs);

    let mut graded: std::collections::HashMap<u32, (String, GenerationRecord)> = Default::default();
    for ((index, digest), c) in stage2_owners.into_iter().zip(&stage2_completions) {
        graded.insert(
            index,
            (
                digest.clone(),
                GenerationRecord {
                    sample_id: sample.id.clone(),
                    stage: Stage::Stage2,
                    index,
                    prompt_digest: digest,
                    raw_text: c.text.clone(),
                    parsed: Some(parse_boxed_answer(&c.text)),
                    error: completion_error(c),
                },
            ),
        );
    }
    for (i, stage1) in stage1_completions.iter().enumerate() {
        let i = i as u32;
        match graded.remove(&i) {
            Some((_, record)) => records.push(record),
            None => records.push(GenerationRecord {
                sample_id: sample.id.clone(),
                stage: Stage::Stage2,
                index: i,
                // No stage-2 prompt exists for a failed description; the
                // digest of empty input marks the hole deterministically.
                prompt_digest: crate::hashing::sha256_hex(b""),
                raw_text: String::new(),
                parsed: Some(ParsedAnswer::Unparseable),
                error: Some(format!(
                    "stage-1 generation {i} failed; stage-2 skipped ({})",
                    stage1.error.as_deref().unwrap_or("empty description")
                )),
            }),
        }
    }

    records.sort_by_key(|r| (r.stage, r.index));
    Ok(records)
}

/// Dispatch on the configured method.
pub fn run_method(
    ctx: &PipelineContext,
    sample: &Sample,
    task: &TaskSpec,
    cfg: &MethodConfig,
) -> Result<Vec<GenerationRecord>, PipelineError> {
    match cfg.method {
        Method::ZeroShot => run_zero_shot(ctx, sample, task, cfg),
        Method::OneStageCot => run_one_stage_cot(ctx, sample, task, cfg),
        Method::DescribeThenDiagnose => run_describe_then_diagnose(ctx, sample, task, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::Path;
    use std::sync::Mutex;

    // Completer driven by a closure over (endpoint, request, position in
    // batch); captures every request for pairing assertions.
    struct ScriptedCompleter<F: Fn(&EndpointConfig, &ChatRequest, usize) -> Completion + Sync> {
        f: F,
        seen: Mutex<Vec<(String, ChatRequest)>>,
    }

    impl<F: Fn(&EndpointConfig, &ChatRequest, usize) -> Completion + Sync> ScriptedCompleter<F> {
        fn new(f: F) -> Self {
            ScriptedCompleter {
                f,
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl<F: Fn(&EndpointConfig, &ChatRequest, usize) -> Completion + Sync> Completer
        for ScriptedCompleter<F>
    {
        fn complete_batch(&self, endpoint: &EndpointConfig, reqs: &[ChatRequest]) -> Vec<Completion> {
            let mut seen = self.seen.lock().unwrap();
            reqs.iter()
                .enumerate()
                .map(|(pos, r)| {
                    seen.push((endpoint.model_name.clone(), r.clone()));
                    (self.f)(endpoint, r, pos)
                })
                .collect()
        }
    }

    fn ok(text: &str) -> Completion {
        Completion {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            latency: std::time::Duration::ZERO,
            error: None,
        }
    }

    fn failed(note: &str) -> Completion {
        Completion {
            text: String::new(),
            finish_reason: FinishReason::Error,
            latency: std::time::Duration::ZERO,
            error: Some(note.into()),
        }
    }

    fn endpoint(model: &str) -> EndpointConfig {
        EndpointConfig {
            base_url: "http://unused".into(),
            model_name: model.into(),
            max_tokens: 64,
            timeout_s: 5.0,
            max_retries: 0,
            max_in_flight: 4,
        }
    }

    fn method_config(method: Method, n: u32) -> MethodConfig {
        MethodConfig {
            method,
            stage1_variant: Stage1Variant::Unconstrained,
            num_samples: n,
            temperature: 0.7,
            stage2_temperature: 0.0,
            stage1_endpoint: endpoint("vlm"),
            stage2_endpoint: Some(endpoint("llm")),
        }
    }

    fn task() -> TaskSpec {
        TaskSpec {
            dataset_name: "pneumoniamnist".into(),
            class0_name: "normal".into(),
            class1_name: "pneumonia".into(),
            modality_phrase: "pediatric chest X-ray image".into(),
        }
    }

    // One tiny PNG shared by all pipeline tests.
    fn sample(dir: &Path) -> Sample {
        let path = dir.join("img.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([9, 9, 9]))
            .save(&path)
            .unwrap();
        Sample {
            id: "s0".into(),
            image_path: path,
            label: 1,
            split: None,
        }
    }

    fn ctx<'a>(completer: &'a dyn Completer) -> PipelineContext<'a> {
        PipelineContext {
            templates: PromptTemplates::builtin(),
            completer,
            run_seed: 11,
        }
    }

    #[test]
    fn parse_examples_from_the_contract() {
        assert_eq!(parse_boxed_answer("\\boxed{1}"), ParsedAnswer::Class1);
        assert_eq!(
            parse_boxed_answer("I think \\boxed{0} but maybe \\boxed{1}"),
            ParsedAnswer::Class1
        );
        assert_eq!(parse_boxed_answer("The answer is 1."), ParsedAnswer::Unparseable);
        assert_eq!(parse_boxed_answer("\\boxed{2}"), ParsedAnswer::Unparseable);
    }

    #[test]
    fn parse_ignores_non_token_boxes() {
        // Occurrences that are not \boxed{digits} are not occurrences at all.
        assert_eq!(parse_boxed_answer("\\boxed{1} then \\boxed{ 0 }"), ParsedAnswer::Class1);
        assert_eq!(parse_boxed_answer("\\boxed{}"), ParsedAnswer::Unparseable);
        assert_eq!(parse_boxed_answer("\\boxed{01}"), ParsedAnswer::Unparseable);
        assert_eq!(parse_boxed_answer(""), ParsedAnswer::Unparseable);
    }

    #[test]
    fn zero_shot_n1_parses_class1() {
        let dir = tempfile::tempdir().unwrap();
        let completer = ScriptedCompleter::new(|_, _, _| ok("\\boxed{1}"));
        let records = run_zero_shot(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::ZeroShot, 1),
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].stage, Stage::Direct);
        assert_eq!(records[0].parsed, Some(ParsedAnswer::Class1));
        assert!(records[0].error.is_none());
    }

    #[test]
    fn zero_shot_alignment_over_four_generations() {
        let dir = tempfile::tempdir().unwrap();
        let answers = ["\\boxed{1}", "\\boxed{1}", "\\boxed{0}", "\\boxed{1}"];
        let completer = ScriptedCompleter::new(move |_, _, pos| ok(answers[pos]));
        let records = run_zero_shot(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::ZeroShot, 4),
        )
        .unwrap();
        let parses: Vec<_> = records.iter().map(|r| r.parsed.unwrap()).collect();
        assert_eq!(
            parses,
            [
                ParsedAnswer::Class1,
                ParsedAnswer::Class1,
                ParsedAnswer::Class0,
                ParsedAnswer::Class1
            ]
        );
        assert_eq!(
            records.iter().map(|r| r.index).collect::<Vec<_>>(),
            [0, 1, 2, 3]
        );
    }

    #[test]
    fn zero_shot_isolates_one_failure() {
        let dir = tempfile::tempdir().unwrap();
        let completer = ScriptedCompleter::new(|_, _, pos| {
            if pos == 1 {
                failed("transport failure after 3 attempt(s): refused")
            } else {
                ok("\\boxed{0}")
            }
        });
        let records = run_zero_shot(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::ZeroShot, 2),
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].parsed, Some(ParsedAnswer::Class0));
        assert_eq!(records[1].parsed, Some(ParsedAnswer::Unparseable));
        assert!(records[1].error.as_deref().unwrap().contains("transport"));
    }

    #[test]
    fn cot_retains_reasoning_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let completer =
            ScriptedCompleter::new(|_, _, _| ok("Step 1: inspect lungs. Step 2: clear. \\boxed{0}"));
        let records = run_one_stage_cot(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::OneStageCot, 16),
        )
        .unwrap();
        assert_eq!(records.len(), 16);
        assert!(records.iter().all(|r| r.parsed == Some(ParsedAnswer::Class0)));
        assert!(records[0].raw_text.starts_with("Step 1"));

        // The CoT prompt, not the zero-shot one, was sent.
        let seen = completer.seen.lock().unwrap();
        assert!(seen[0].1.prompt.user_text.contains("Let's think step by step."));
    }

    #[test]
    fn empty_completion_is_unparseable() {
        let dir = tempfile::tempdir().unwrap();
        let completer = ScriptedCompleter::new(|_, _, _| ok(""));
        let records = run_one_stage_cot(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::OneStageCot, 1),
        )
        .unwrap();
        assert_eq!(records[0].parsed, Some(ParsedAnswer::Unparseable));
    }

    #[test]
    fn describe_then_diagnose_composes_stages() {
        let dir = tempfile::tempdir().unwrap();
        let completer = ScriptedCompleter::new(|endpoint, req, pos| {
            if endpoint.model_name == "vlm" {
                // Stage-1 arrives as one batch, so position equals index.
                ok(&format!("description-{pos}"))
            } else if req.prompt.user_text.contains("description-2") {
                ok("\\boxed{0}")
            } else {
                ok("\\boxed{1}")
            }
        });
        let records = run_describe_then_diagnose(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::DescribeThenDiagnose, 3),
        )
        .unwrap();
        assert_eq!(records.len(), 6);
        let stage1: Vec<_> = records.iter().filter(|r| r.stage == Stage::Stage1).collect();
        let stage2: Vec<_> = records.iter().filter(|r| r.stage == Stage::Stage2).collect();
        assert_eq!(stage1.len(), 3);
        assert_eq!(stage2.len(), 3);
        assert!(stage1.iter().all(|r| r.parsed.is_none()));
        assert!(stage2.iter().all(|r| r.parsed.is_some()));
        let parses: Vec<_> = stage2.iter().map(|r| r.parsed.unwrap()).collect();
        assert_eq!(
            parses,
            [ParsedAnswer::Class1, ParsedAnswer::Class1, ParsedAnswer::Class0]
        );

        // Pairing: stage-2 prompt i contains stage-1 text i verbatim.
        let seen = completer.seen.lock().unwrap();
        for s2 in &stage2 {
            let s1 = stage1.iter().find(|r| r.index == s2.index).unwrap();
            let req = seen
                .iter()
                .find(|(model, r)| {
                    model.as_str() == "llm" && r.prompt.digest() == s2.prompt_digest
                })
                .map(|(_, r)| r)
                .unwrap();
            assert!(req.prompt.user_text.contains(&s1.raw_text));
            assert!(!req.prompt.wants_image);
            assert_eq!(req.temperature, 0.0);
        }
    }

    #[test]
    fn dtd_n1_yields_one_record_per_stage() {
        let dir = tempfile::tempdir().unwrap();
        let completer = ScriptedCompleter::new(|endpoint, _, _| {
            if endpoint.model_name == "vlm" {
                ok("clear lung fields")
            } else {
                ok("\\boxed{0}")
            }
        });
        let records = run_describe_then_diagnose(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::DescribeThenDiagnose, 1),
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].stage, Stage::Stage1);
        assert_eq!(records[1].stage, Stage::Stage2);
        assert_eq!(records[1].parsed, Some(ParsedAnswer::Class0));
    }

    #[test]
    fn failed_stage1_skips_stage2_call() {
        let dir = tempfile::tempdir().unwrap();
        let llm_calls = std::sync::atomic::AtomicUsize::new(0);
        let completer = ScriptedCompleter::new(|endpoint: &EndpointConfig, _: &ChatRequest, pos| {
            if endpoint.model_name == "vlm" {
                // Even stage-1 indices fail (batch position equals index).
                if pos % 2 == 0 {
                    failed("timeout after 2 attempt(s)")
                } else {
                    ok(&format!("some description {pos}"))
                }
            } else {
                llm_calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                ok("\\boxed{1}")
            }
        });
        let records = run_describe_then_diagnose(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::DescribeThenDiagnose, 8),
        )
        .unwrap();
        assert_eq!(records.len(), 16);

        let failures: Vec<u32> = records
            .iter()
            .filter(|r| r.stage == Stage::Stage1 && r.raw_text.is_empty())
            .map(|r| r.index)
            .collect();
        assert!(!failures.is_empty(), "fixture produced no failures");
        for r in records.iter().filter(|r| r.stage == Stage::Stage2) {
            if failures.contains(&r.index) {
                assert_eq!(r.parsed, Some(ParsedAnswer::Unparseable));
                assert!(r.error.as_deref().unwrap().contains("stage-2 skipped"));
                assert!(r.raw_text.is_empty());
            } else {
                assert_eq!(r.parsed, Some(ParsedAnswer::Class1));
            }
        }
        let graded = 8 - failures.len();
        assert_eq!(
            llm_calls.load(std::sync::atomic::Ordering::SeqCst),
            graded,
            "one stage-2 call per surviving description"
        );
    }

    #[test]
    fn method_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let completer = ScriptedCompleter::new(|_, _, _| ok("x"));
        let err = run_zero_shot(
            &ctx(&completer),
            &sample(dir.path()),
            &task(),
            &method_config(Method::OneStageCot, 1),
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::InvalidConfig(_)));
    }

    #[test]
    fn dtd_without_stage2_endpoint_is_rejected() {
        let mut cfg = method_config(Method::DescribeThenDiagnose, 1);
        cfg.stage2_endpoint = None;
        assert!(cfg.validate().is_err());
        // The direct methods run fine without one.
        let mut zs = method_config(Method::ZeroShot, 1);
        zs.stage2_endpoint = None;
        assert!(zs.validate().is_ok());
    }

    #[test]
    fn request_key_separates_every_tuple_field() {
        let base = request_key("m", "p", Some("i"), 0, 0.7);
        assert_ne!(base, request_key("m2", "p", Some("i"), 0, 0.7));
        assert_ne!(base, request_key("m", "p2", Some("i"), 0, 0.7));
        assert_ne!(base, request_key("m", "p", Some("i2"), 0, 0.7));
        assert_ne!(base, request_key("m", "p", None, 0, 0.7));
        assert_ne!(base, request_key("m", "p", Some("i"), 1, 0.7));
        assert_ne!(base, request_key("m", "p", Some("i"), 0, 0.0));
        assert_eq!(base, request_key("m", "p", Some("i"), 0, 0.7));
    }

    proptest! {
        // Total and idempotent on arbitrary text.
        #[test]
        fn parse_is_idempotent(text in "\\PC{0,80}") {
            prop_assert_eq!(parse_boxed_answer(&text), parse_boxed_answer(&text));
        }

        // Count contract: direct methods emit N records, DtD emits 2N with
        // an index bijection between the stages.
        #[test]
        fn record_counts_hold(n in 1u32..12) {
            let dir = tempfile::tempdir().unwrap();
            let completer = ScriptedCompleter::new(|endpoint: &EndpointConfig, _: &ChatRequest, _| {
                if endpoint.model_name == "vlm" { ok("desc") } else { ok("\\boxed{1}") }
            });
            let s = sample(dir.path());
            let zs = run_zero_shot(
                &ctx(&completer), &s, &task(), &method_config(Method::ZeroShot, n),
            ).unwrap();
            prop_assert_eq!(zs.len(), n as usize);

            let dtd = run_describe_then_diagnose(
                &ctx(&completer), &s, &task(), &method_config(Method::DescribeThenDiagnose, n),
            ).unwrap();
            prop_assert_eq!(dtd.len(), 2 * n as usize);
            let mut s1: Vec<u32> = dtd.iter().filter(|r| r.stage == Stage::Stage1).map(|r| r.index).collect();
            let mut s2: Vec<u32> = dtd.iter().filter(|r| r.stage == Stage::Stage2).map(|r| r.index).collect();
            s1.sort_unstable();
            s2.sort_unstable();
            prop_assert_eq!(&s1, &s2);
            let expected: Vec<u32> = (0..n).collect();
            prop_assert_eq!(s1, expected);
        }
    }
}
