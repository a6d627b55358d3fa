//! Experiment orchestration: collect generations for every (method, sample),
//! score them at each n, and write a reproducible bundle of artifacts.
//!
//! Output directory layout:
//!
//! ```text
//! output_dir/
//!   provenance.json     identity digests + the full config (written first)
//!   cache/              one file per request key, {text, finish_reason}
//!   generations.jsonl   every record, one JSON object per line
//!   scores.jsonl        one DiagnosisScore per (method, n, sample)
//!   metrics.json        method -> n -> {auc, ap, degraded_count}
//! ```
//!
//! Every artifact except provenance timestamps is a pure function of
//! (dataset content, prompt templates, config, endpoint behavior), so a
//! seeded mock plus a seeded run reproduces the files byte for byte.
//! Collection is cache-first: a rerun or resume refetches nothing that
//! already completed, which is also what makes interruption safe. The cache
//! key deliberately omits the run seed; an output directory is pinned to one
//! config digest (seed included), so entries can never leak across seeds.

pub mod cache;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregateError, DiagnosisScore, estimate_probability};
use crate::client::{Completer, HttpCompleter};
use crate::dataset::{Dataset, DatasetError, encode_image, load_manifest, validate_dataset};
use crate::hashing::{sha256_hex, sha256_parts_hex};
use crate::metrics::{MetricsError, ScoredSet, auc, average_precision};
use crate::pipeline::{
    GenerationRecord, MethodConfig, PipelineContext, PipelineError, Stage, run_method,
};
use crate::prompting::{PromptError, PromptTemplates};
use cache::{CacheError, CachingCompleter, DiskCache};

pub use cache::CachedCompletion;
pub use report::{ReportFormat, load_run, render_report};

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const CACHE_DIR: &str = "cache";

/// One experiment: which dataset, which methods, which n sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub method_configs: Vec<MethodConfig>,
    /// Aggregation breadths to score; each must not exceed any method's
    /// num_samples.
    pub n_values: Vec<u32>,
    pub output_dir: PathBuf,
    /// Prompt template overrides; builtin templates when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_file: Option<PathBuf>,
    /// Samples processed in parallel. Operational only: excluded from the
    /// config digest and free to vary between resume and original run.
    #[serde(default = "default_sample_concurrency")]
    pub sample_concurrency: usize,
    #[serde(default)]
    pub random_seed: u64,
}

fn default_sample_concurrency() -> usize {
    4
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.method_configs.is_empty() {
            return Err(RunnerError::InvalidConfig(
                "method_configs must not be empty".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for mc in &self.method_configs {
            mc.validate()?;
            if !seen.insert(mc.method) {
                return Err(RunnerError::InvalidConfig(format!(
                    "method {} configured twice; metrics are keyed by method name",
                    mc.method
                )));
            }
        }
        if self.n_values.is_empty() {
            return Err(RunnerError::InvalidConfig(
                "n_values must not be empty".into(),
            ));
        }
        let mut n_seen = std::collections::BTreeSet::new();
        for &n in &self.n_values {
            if n == 0 {
                return Err(RunnerError::InvalidConfig("n_values entries must be >= 1".into()));
            }
            if !n_seen.insert(n) {
                return Err(RunnerError::InvalidConfig(format!(
                    "n_values contains {n} twice"
                )));
            }
        }
        let max_n = *self.n_values.iter().max().expect("non-empty");
        for mc in &self.method_configs {
            if max_n > mc.num_samples {
                return Err(RunnerError::InvalidConfig(format!(
                    "n={max_n} exceeds num_samples={} for method {}",
                    mc.num_samples, mc.method
                )));
            }
        }
        if self.sample_concurrency == 0 {
            return Err(RunnerError::InvalidConfig(
                "sample_concurrency must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// AUC/AP for one (method, n) cell, plus how many samples aggregated with
/// missing answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub auc: f64,
    pub ap: f64,
    pub degraded_count: u32,
}

/// What a run was made from. Digest mismatches gate resume: a directory only
/// ever continues the run it was started for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Over task spec, sample ids, labels, and image content digests.
    pub dataset_digest: String,
    /// Over the prompt template set.
    pub prompt_digest: String,
    /// Over methods, n_values, and seed; paths and concurrency excluded.
    pub config_digest: String,
    pub random_seed: u64,
    pub config: RunConfig,
    pub started_at_unix: u64,
    pub finished_at_unix: Option<u64>,
}

/// Everything a completed run produced, keyed by method name then n.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    pub scores: BTreeMap<String, BTreeMap<u32, Vec<DiagnosisScore>>>,
    pub metrics: BTreeMap<String, BTreeMap<u32, MetricCell>>,
    pub provenance: Provenance,
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset failed validation:\n{0}")]
    DatasetInvalid(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("metrics for {method} at n={n}: {source}")]
    Metrics {
        method: String,
        n: u32,
        source: MetricsError,
    },
    #[error("io at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(
        "endpoint unreachable for method {method}: every generation of the \
         first sample failed after retries; first error: {first_error}"
    )]
    EndpointUnreachable { method: String, first_error: String },
    #[error("output dir holds a different run; refusing to continue:\n{diff}")]
    ProvenanceMismatch { diff: String },
    #[error("subsample n={n} exceeds the pool of {pool} generations")]
    NExceedsPool { n: u32, pool: usize },
    #[error("run at {dir} is incomplete: {missing} missing")]
    IncompleteRun { dir: PathBuf, missing: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Write via temp file + rename so readers and crashes never see a torn file.
fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), RunnerError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_bytes_atomic(path, &bytes)
}

/// Identity of the dataset content: task spec plus every sample's id, label,
/// and image bytes digest. Renaming the directory does not change it;
/// touching a pixel does.
pub fn dataset_digest(dataset: &Dataset) -> Result<String, DatasetError> {
    let task = serde_json::to_vec(&dataset.task).expect("task serializes");
    let mut parts: Vec<Vec<u8>> = vec![task];
    for sample in &dataset.samples {
        let payload = encode_image(sample)?;
        parts.push(sample.id.as_bytes().to_vec());
        parts.push(vec![sample.label]);
        parts.push(payload.content_digest.into_bytes());
    }
    let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
    Ok(sha256_parts_hex(&refs))
}

/// Identity of the experiment design. Deliberately excludes dataset_path and
/// prompt_file (content digests cover those), output_dir, and
/// sample_concurrency (operational knobs that must not block resume).
pub fn config_digest(config: &RunConfig) -> String {
    #[derive(Serialize)]
    struct Identity<'a> {
        method_configs: &'a [MethodConfig],
        n_values: &'a [u32],
        random_seed: u64,
    }
    let bytes = serde_json::to_vec(&Identity {
        method_configs: &config.method_configs,
        n_values: &config.n_values,
        random_seed: config.random_seed,
    })
    .expect("identity serializes");
    sha256_hex(&bytes)
}

/// Score the first n generations of one sample's records (prefix rule: the
/// n-generation experiment is the first n of the N-generation pool, so cells
/// at different n reuse the same calls and nest consistently).
pub fn subsample_scores(
    records: &[GenerationRecord],
    n: u32,
) -> Result<DiagnosisScore, RunnerError> {
    let pool = records.iter().filter(|r| r.stage != Stage::Stage1).count();
    if (n as usize) > pool {
        return Err(RunnerError::NExceedsPool { n, pool });
    }
    let prefix: Vec<GenerationRecord> = records
        .iter()
        .filter(|r| r.index < n)
        .cloned()
        .collect();
    Ok(estimate_probability(&prefix)?)
}

/// True when every answer-bearing record failed, i.e. the endpoint never
/// produced a single usable generation for the sample.
fn total_failure(records: &[GenerationRecord]) -> Option<String> {
    let mut first_error = None;
    for r in records {
        if r.stage == Stage::Stage1 {
            continue;
        }
        match &r.error {
            Some(e) if first_error.is_none() => first_error = Some(e.clone()),
            Some(_) => {}
            None => return None,
        }
    }
    first_error
}

/// Run one method over every sample, fanning out across samples. The first
/// sample runs alone as a reachability probe: if all of its generations fail
/// the run aborts instead of burning retries on the whole dataset.
fn collect_method(
    templates: &PromptTemplates,
    completer: &dyn Completer,
    run_seed: u64,
    dataset: &Dataset,
    cfg: &MethodConfig,
    concurrency: usize,
) -> Result<Vec<Vec<GenerationRecord>>, RunnerError> {
    let ctx = PipelineContext {
        templates,
        completer,
        run_seed,
    };
    let probe = run_method(&ctx, &dataset.samples[0], &dataset.task, cfg)?;
    if let Some(first_error) = total_failure(&probe) {
        return Err(RunnerError::EndpointUnreachable {
            method: cfg.method.name().to_string(),
            first_error,
        });
    }

    let total = dataset.samples.len();
    let slots: Mutex<Vec<Option<Result<Vec<GenerationRecord>, PipelineError>>>> =
        Mutex::new((0..total).map(|_| None).collect());
    slots.lock().unwrap()[0] = Some(Ok(probe));

    let next = AtomicUsize::new(1);
    let workers = concurrency.min(total.saturating_sub(1)).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= total {
                        break;
                    }
                    let result = run_method(&ctx, &dataset.samples[i], &dataset.task, cfg);
                    slots.lock().unwrap()[i] = Some(result);
                }
            });
        }
    });

    let mut out = Vec::with_capacity(total);
    for (i, slot) in slots.into_inner().unwrap().into_iter().enumerate() {
        let records = slot.unwrap_or_else(|| panic!("sample {i} never ran"))?;
        out.push(records);
    }
    Ok(out)
}

#[derive(Serialize)]
struct LoggedRecord<'a> {
    method: &'a str,
    #[serde(flatten)]
    record: &'a GenerationRecord,
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    method: String,
    n: u32,
    #[serde(flatten)]
    score: DiagnosisScore,
}

fn read_provenance(path: &Path) -> Result<Provenance, RunnerError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| RunnerError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Execute (or continue) the configured experiment.
///
/// Idempotent per output directory: provenance digests are checked against
/// any previous occupant and the completion cache is consulted before every
/// endpoint call, so rerunning an interrupted run finishes it, and rerunning
/// a finished run touches the endpoint zero times. Post: all artifact files
/// exist and agree with the returned [`RunResult`].
pub fn run_experiment(config: &RunConfig) -> Result<RunResult, RunnerError> {
    config.validate()?;

    let owned_templates;
    let templates: &PromptTemplates = match &config.prompt_file {
        Some(path) => {
            owned_templates = PromptTemplates::from_file(path)?;
            &owned_templates
        }
        None => PromptTemplates::builtin(),
    };

    let dataset = load_manifest(&config.dataset_path)?;
    let report = validate_dataset(&dataset);
    if !report.is_clean() {
        return Err(RunnerError::DatasetInvalid(report.issues.join("\n")));
    }

    let dataset_digest = dataset_digest(&dataset)?;
    let prompt_digest = templates.digest();
    let config_digest = config_digest(config);

    std::fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let provenance_path = config.output_dir.join(PROVENANCE_FILE);
    let mut started_at = unix_now();
    if provenance_path.exists() {
        let prior = read_provenance(&provenance_path)?;
        let mut diff = Vec::new();
        for (what, old, new) in [
            ("dataset_digest", &prior.dataset_digest, &dataset_digest),
            ("prompt_digest", &prior.prompt_digest, &prompt_digest),
            ("config_digest", &prior.config_digest, &config_digest),
        ] {
            if old != new {
                diff.push(format!("  {what}: was {old}, now {new}"));
            }
        }
        if !diff.is_empty() {
            return Err(RunnerError::ProvenanceMismatch {
                diff: diff.join("\n"),
            });
        }
        started_at = prior.started_at_unix;
    }
    let mut provenance = Provenance {
        dataset_digest,
        prompt_digest,
        config_digest,
        random_seed: config.random_seed,
        config: config.clone(),
        started_at_unix: started_at,
        finished_at_unix: None,
    };
    write_json_atomic(&provenance_path, &provenance)?;

    let cache = DiskCache::open(&config.output_dir.join(CACHE_DIR))?;
    let http = HttpCompleter;
    let completer = CachingCompleter::new(&cache, &http);

    let mut records_by_method: Vec<Vec<Vec<GenerationRecord>>> = Vec::new();
    for mc in &config.method_configs {
        records_by_method.push(collect_method(
            templates,
            &completer,
            config.random_seed,
            &dataset,
            mc,
            config.sample_concurrency,
        )?);
    }

    let result = score_and_write(config, &dataset, &records_by_method, &mut provenance)?;
    Ok(result)
}

/// Aggregate collected records into scores and metrics and write every
/// artifact. Split from collection so the output shape is a pure function of
/// the records.
fn score_and_write(
    config: &RunConfig,
    dataset: &Dataset,
    records_by_method: &[Vec<Vec<GenerationRecord>>],
    provenance: &mut Provenance,
) -> Result<RunResult, RunnerError> {
    let mut generations = String::new();
    for (mc, per_sample) in config.method_configs.iter().zip(records_by_method) {
        for records in per_sample {
            for record in records {
                let line = serde_json::to_string(&LoggedRecord {
                    method: mc.method.name(),
                    record,
                })
                .expect("record serializes");
                generations.push_str(&line);
                generations.push('\n');
            }
        }
    }

    let mut scores: BTreeMap<String, BTreeMap<u32, Vec<DiagnosisScore>>> = BTreeMap::new();
    let mut metrics: BTreeMap<String, BTreeMap<u32, MetricCell>> = BTreeMap::new();
    let mut score_lines = String::new();
    for (mc, per_sample) in config.method_configs.iter().zip(records_by_method) {
        let name = mc.method.name().to_string();
        for &n in &config.n_values {
            let mut cell_scores = Vec::with_capacity(per_sample.len());
            for records in per_sample {
                cell_scores.push(subsample_scores(records, n)?);
            }
            let pairs: Vec<(f64, u8)> = cell_scores
                .iter()
                .zip(&dataset.samples)
                .map(|(score, sample)| (score.estimate, sample.label))
                .collect();
            let set = ScoredSet::new(pairs).map_err(|source| RunnerError::Metrics {
                method: name.clone(),
                n,
                source,
            })?;
            let cell = MetricCell {
                auc: auc(&set),
                ap: average_precision(&set),
                degraded_count: cell_scores.iter().filter(|s| s.degraded).count() as u32,
            };
            for score in &cell_scores {
                let line = serde_json::to_string(&ScoreLine {
                    method: name.clone(),
                    n,
                    score: score.clone(),
                })
                .expect("score serializes");
                score_lines.push_str(&line);
                score_lines.push('\n');
            }
            scores.entry(name.clone()).or_default().insert(n, cell_scores);
            metrics.entry(name.clone()).or_default().insert(n, cell);
        }
    }

    write_bytes_atomic(
        &config.output_dir.join(GENERATIONS_FILE),
        generations.as_bytes(),
    )?;
    write_bytes_atomic(&config.output_dir.join(SCORES_FILE), score_lines.as_bytes())?;
    write_json_atomic(&config.output_dir.join(METRICS_FILE), &metrics)?;
    provenance.finished_at_unix = Some(unix_now());
    write_json_atomic(&config.output_dir.join(PROVENANCE_FILE), provenance)?;

    Ok(RunResult {
        config: config.clone(),
        scores,
        metrics,
        provenance: provenance.clone(),
    })
}

/// Continue an interrupted run from its own provenance record. The stored
/// config is re-executed against the given directory; digest checks inside
/// [`run_experiment`] refuse if the dataset or prompt file changed since.
pub fn resume(output_dir: &Path) -> Result<RunResult, RunnerError> {
    let provenance_path = output_dir.join(PROVENANCE_FILE);
    if !provenance_path.exists() {
        return Err(RunnerError::IncompleteRun {
            dir: output_dir.to_path_buf(),
            missing: PROVENANCE_FILE.to_string(),
        });
    }
    let prior = read_provenance(&provenance_path)?;
    let mut config = prior.config;
    config.output_dir = output_dir.to_path_buf();
    run_experiment(&config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ParsedAnswer;

    fn record(stage: Stage, index: u32, parsed: Option<ParsedAnswer>) -> GenerationRecord {
        GenerationRecord {
            sample_id: "s".into(),
            stage,
            index,
            prompt_digest: "d".into(),
            raw_text: String::new(),
            parsed,
            error: None,
        }
    }

    fn direct(parses: &[ParsedAnswer]) -> Vec<GenerationRecord> {
        parses
            .iter()
            .enumerate()
            .map(|(i, &p)| record(Stage::Direct, i as u32, Some(p)))
            .collect()
    }

    #[test]
    fn subsample_takes_the_prefix() {
        use ParsedAnswer::*;
        let records = direct(&[Class1, Class0, Class1, Class1]);
        let s = subsample_scores(&records, 2).unwrap();
        assert_eq!(s.estimate, 0.5);
        assert_eq!(s.n_total, 2);
        assert!(!s.degraded);
    }

    #[test]
    fn subsample_of_full_pool_matches_full_estimate() {
        use ParsedAnswer::*;
        let records = direct(&[Class1, Class0, Class1, Class1]);
        let s = subsample_scores(&records, 4).unwrap();
        let full = estimate_probability(&records).unwrap();
        assert_eq!(s, full);
    }

    #[test]
    fn subsample_ignores_later_indices_entirely() {
        use ParsedAnswer::*;
        let a = direct(&[Class1, Class0, Class1, Class1]);
        let mut b = direct(&[Class1, Class0, Class0, Class0]);
        b[2].error = Some("changed".into());
        assert_eq!(
            subsample_scores(&a, 2).unwrap(),
            subsample_scores(&b, 2).unwrap()
        );
    }

    #[test]
    fn subsample_rejects_n_beyond_pool() {
        use ParsedAnswer::*;
        let records = direct(&[Class1, Class0]);
        assert!(matches!(
            subsample_scores(&records, 3),
            Err(RunnerError::NExceedsPool { n: 3, pool: 2 })
        ));
    }

    #[test]
    fn subsample_counts_answer_records_not_stage1() {
        // A describe-then-diagnose sample: N=2 means 2 stage1 + 2 stage2
        // records, and the pool is 2, not 4.
        let records = vec![
            record(Stage::Stage1, 0, None),
            record(Stage::Stage1, 1, None),
            record(Stage::Stage2, 0, Some(ParsedAnswer::Class1)),
            record(Stage::Stage2, 1, Some(ParsedAnswer::Class0)),
        ];
        let s = subsample_scores(&records, 2).unwrap();
        assert_eq!(s.n_total, 2);
        assert_eq!(s.estimate, 0.5);
        assert!(matches!(
            subsample_scores(&records, 3),
            Err(RunnerError::NExceedsPool { .. })
        ));
    }

    #[test]
    fn total_failure_requires_every_answer_to_fail() {
        let mut records = direct(&[ParsedAnswer::Unparseable, ParsedAnswer::Unparseable]);
        records[0].error = Some("transport failure".into());
        assert_eq!(total_failure(&records), None, "one clean record: reachable");
        records[1].error = Some("timeout".into());
        assert_eq!(total_failure(&records).as_deref(), Some("transport failure"));
    }

    #[test]
    fn config_digest_ignores_operational_fields() {
        let base = RunConfig {
            dataset_path: "data".into(),
            method_configs: vec![],
            n_values: vec![1, 2],
            output_dir: "out".into(),
            prompt_file: None,
            sample_concurrency: 4,
            random_seed: 7,
        };
        let mut moved = base.clone();
        moved.output_dir = "elsewhere".into();
        moved.sample_concurrency = 99;
        moved.dataset_path = "data-copy".into();
        assert_eq!(config_digest(&base), config_digest(&moved));

        let mut reseeded = base.clone();
        reseeded.random_seed = 8;
        assert_ne!(config_digest(&base), config_digest(&reseeded));

        let mut widened = base;
        widened.n_values = vec![1, 2, 4];
        assert_ne!(config_digest(&widened), config_digest(&moved));
    }

    #[test]
    fn validate_rejects_bad_shapes() {
        let endpoint = crate::client::EndpointConfig {
            base_url: "http://localhost:1".into(),
            model_name: "m".into(),
            max_tokens: 8,
            timeout_s: 1.0,
            max_retries: 0,
            max_in_flight: 1,
        };
        let method = MethodConfig {
            method: crate::pipeline::Method::ZeroShot,
            stage1_variant: crate::prompting::Stage1Variant::Unconstrained,
            num_samples: 4,
            temperature: 0.7,
            stage2_temperature: 0.0,
            stage1_endpoint: endpoint,
            stage2_endpoint: None,
        };
        let good = RunConfig {
            dataset_path: "d".into(),
            method_configs: vec![method.clone()],
            n_values: vec![1, 4],
            output_dir: "o".into(),
            prompt_file: None,
            sample_concurrency: 2,
            random_seed: 0,
        };
        good.validate().unwrap();

        let mut empty_methods = good.clone();
        empty_methods.method_configs.clear();
        assert!(empty_methods.validate().is_err());

        let mut dup_method = good.clone();
        dup_method.method_configs.push(method.clone());
        assert!(dup_method.validate().is_err());

        let mut n_too_big = good.clone();
        n_too_big.n_values = vec![1, 8];
        assert!(n_too_big.validate().is_err());

        let mut zero_n = good.clone();
        zero_n.n_values = vec![0];
        assert!(zero_n.validate().is_err());

        let mut dup_n = good.clone();
        dup_n.n_values = vec![2, 2];
        assert!(dup_n.validate().is_err());

        let mut zero_conc = good;
        zero_conc.sample_concurrency = 0;
        assert!(zero_conc.validate().is_err());
    }

    #[test]
    fn run_config_round_trips_and_rejects_unknown_fields() {
        let json = serde_json::json!({
            "dataset_path": "data",
            "method_configs": [],
            "n_values": [1, 4],
            "output_dir": "out"
        });
        let cfg: RunConfig = serde_json::from_value(json).unwrap();
        assert_eq!(cfg.sample_concurrency, 4);
        assert_eq!(cfg.random_seed, 0);
        assert_eq!(cfg.prompt_file, None);

        let bad = serde_json::json!({
            "dataset_path": "data",
            "method_configs": [],
            "n_values": [1],
            "output_dir": "out",
            "surprise": true
        });
        assert!(serde_json::from_value::<RunConfig>(bad).is_err());
    }
}
