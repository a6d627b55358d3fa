//! Zero-shot diagnosis of medical images through chat-completion endpoints,
//! with test-time scaling.
//!
//! Binary image classification (disease present / absent) is asked of a
//! vision-language model three ways, with no fine-tuning and no exemplars:
//!
//! - **zero-shot QA**: ask for the label directly;
//! - **one-stage CoT**: the same question with a step-by-step trigger;
//! - **describe-then-diagnose**: a vision model first describes the image,
//!   then a text model grades the description.
//!
//! Each strategy samples N generations per image and aggregates the parsed
//! verdicts into a probability estimate, so that spending more inference
//! compute (larger N) buys a better ranking. The [`runner`] executes whole
//! experiments with a content-addressed completion cache (interrupt and
//! resume at will), and [`mock`] provides a deterministic endpoint with
//! known statistics, so every pipeline claim is testable offline.
//!
//! The `book/` directory holds the long-form guide; its code snippets are
//! mirrored here as doc-tests so `cargo test` keeps both honest.
//!
//! # Prompts and answer parsing
//!
//! Prompts are rendered from [`prompting::PromptTemplates`] and a dataset's
//! [`dataset::TaskSpec`]; graded answers must arrive as `\boxed{0}` or
//! `\boxed{1}`, and the **last** boxed token in a completion is the verdict:
//!
//! ```
//! use ttsdiag::dataset::TaskSpec;
//! use ttsdiag::prompting::{PromptTemplates, build_zero_shot};
//!
//! let task = TaskSpec {
//!     dataset_name: "pneumoniamnist".into(),
//!     class0_name: "normal".into(),
//!     class1_name: "pneumonia".into(),
//!     modality_phrase: "chest X-ray image".into(),
//! };
//! let bundle = build_zero_shot(PromptTemplates::builtin(), &task);
//! assert!(bundle.user_text.starts_with(
//!     "Given a chest X-ray image, classify it as 0 (normal) or 1 (pneumonia)."
//! ));
//! assert!(bundle.wants_image);
//! ```
//!
//! ```
//! use ttsdiag::pipeline::{ParsedAnswer, parse_boxed_answer};
//!
//! assert_eq!(parse_boxed_answer(r"The answer is \boxed{1}."), ParsedAnswer::Class1);
//! // Reasoning may mention candidate boxes; the last one is the answer.
//! assert_eq!(parse_boxed_answer(r"\boxed{0} but wait, \boxed{1}"), ParsedAnswer::Class1);
//! // Only the exact digits 0 and 1 count.
//! assert_eq!(parse_boxed_answer(r"\boxed{2}"), ParsedAnswer::Unparseable);
//! assert_eq!(parse_boxed_answer("no verdict"), ParsedAnswer::Unparseable);
//! ```
//!
//! # Scaling by sampling
//!
//! [`aggregate::estimate_probability`] turns one sample's N parsed
//! generations into the fraction of positive verdicts among the parseable
//! ones. Unparseable answers leave both numerator and denominator, an
//! all-invalid sample falls back to 0.5, and either degradation sets a flag:
//!
//! ```
//! use ttsdiag::aggregate::estimate_probability;
//! use ttsdiag::pipeline::{GenerationRecord, ParsedAnswer, Stage};
//!
//! let record = |index, parsed| GenerationRecord {
//!     sample_id: "s01".into(),
//!     stage: Stage::Direct,
//!     index,
//!     prompt_digest: "p".into(),
//!     raw_text: String::new(),
//!     parsed: Some(parsed),
//!     error: None,
//! };
//! let records = vec![
//!     record(0, ParsedAnswer::Class1),
//!     record(1, ParsedAnswer::Class1),
//!     record(2, ParsedAnswer::Unparseable),
//!     record(3, ParsedAnswer::Class0),
//! ];
//! let score = estimate_probability(&records).unwrap();
//! assert_eq!(score.estimate, 2.0 / 3.0);
//! assert_eq!((score.n_total, score.n_valid), (4, 3));
//! assert!(score.degraded);
//! ```
//!
//! An n-sweep reuses one pool of N generations: the n-sample estimate is
//! computed from the first n indices ([`runner::subsample_scores`]), so
//! every point of a scaling curve shares the same underlying calls.
//!
//! # Metrics
//!
//! Estimates are ranked by AUC (Mann-Whitney with average ranks for ties)
//! and non-interpolated average precision; scaling curves are summarized by
//! a power-law fit of the error term:
//!
//! ```
//! use ttsdiag::metrics::{ScoredSet, auc, average_precision, fit_power_law};
//!
//! let set = ScoredSet::new(vec![(0.9, 1), (0.8, 1), (0.3, 0)]).unwrap();
//! assert_eq!(auc(&set), 1.0);
//! assert_eq!(average_precision(&set), 1.0);
//!
//! let points: Vec<(usize, f64)> = [1, 2, 4, 8, 16]
//!     .into_iter()
//!     .map(|n| (n, 1.0 - 0.3 * (n as f64).powf(-0.5)))
//!     .collect();
//! let fit = fit_power_law(&points).unwrap();
//! assert!((fit.alpha - 0.3).abs() < 1e-9);
//! assert!((fit.beta - 0.5).abs() < 1e-9);
//! ```
//!
//! # A complete experiment against the mock
//!
//! Everything composes through [`runner::run_experiment`]: point a config at
//! a dataset directory and an endpoint, get back scores, metrics, and a
//! resumable artifact directory. The mock stands in for the endpoint:
//!
//! ```
//! use ttsdiag::client::EndpointConfig;
//! use ttsdiag::mock::{MockConfig, label_map_from_dataset, serve};
//! use ttsdiag::pipeline::{Method, MethodConfig};
//! use ttsdiag::prompting::Stage1Variant;
//! use ttsdiag::runner::{RunConfig, run_experiment};
//!
//! // A two-image dataset on disk: task.json + samples.jsonl + PNGs.
//! let data = tempfile::tempdir().unwrap();
//! std::fs::write(data.path().join("task.json"), serde_json::json!({
//!     "dataset_name": "demo",
//!     "class0_name": "normal",
//!     "class1_name": "pneumonia",
//!     "modality_phrase": "chest X-ray image"
//! }).to_string()).unwrap();
//! let mut manifest = String::new();
//! for (i, label) in [0u8, 1].into_iter().enumerate() {
//!     let name = format!("img{i}.png");
//!     image::ImageBuffer::from_fn(8, 8, |x, y| image::Luma([(i as u32 * 90 + x + y) as u8]))
//!         .save(data.path().join(&name)).unwrap();
//!     manifest += &serde_json::json!({"id": format!("s{i}"), "image": name, "label": label})
//!         .to_string();
//!     manifest += "\n";
//! }
//! std::fs::write(data.path().join("samples.jsonl"), manifest).unwrap();
//!
//! // A deterministic mock endpoint that knows the dataset's labels.
//! let dataset = ttsdiag::dataset::load_manifest(data.path()).unwrap();
//! let mock = MockConfig {
//!     label_map: label_map_from_dataset(&dataset).unwrap(),
//!     ..serde_json::from_str("{}").unwrap()
//! };
//! let server = serve(mock, 0).unwrap();
//!
//! let endpoint = |model: &str| EndpointConfig {
//!     base_url: server.base_url(),
//!     model_name: model.into(),
//!     max_tokens: 256,
//!     timeout_s: 10.0,
//!     max_retries: 1,
//!     max_in_flight: 4,
//! };
//! let out = tempfile::tempdir().unwrap();
//! let config = RunConfig {
//!     dataset_path: data.path().into(),
//!     method_configs: vec![MethodConfig {
//!         method: Method::DescribeThenDiagnose,
//!         stage1_variant: Stage1Variant::Unconstrained,
//!         num_samples: 4,
//!         temperature: 0.7,
//!         stage2_temperature: 0.0,
//!         stage1_endpoint: endpoint("mock-vlm"),
//!         stage2_endpoint: Some(endpoint("mock-llm")),
//!     }],
//!     n_values: vec![1, 4],
//!     output_dir: out.path().into(),
//!     prompt_file: None,
//!     sample_concurrency: 2,
//!     random_seed: 7,
//! };
//! let result = run_experiment(&config).unwrap();
//! assert_eq!(result.scores["describe_then_diagnose"][&4].len(), 2);
//! assert!(out.path().join("metrics.json").exists());
//! // Rerunning answers everything from the cache; artifacts are identical.
//! let again = run_experiment(&config).unwrap();
//! assert_eq!(again.metrics, result.metrics);
//! ```

pub mod aggregate;
pub mod client;
pub mod dataset;
pub mod hashing;
pub mod metrics;
pub mod mock;
pub mod oracles;
pub mod pipeline;
pub mod prompting;
pub mod runner;
