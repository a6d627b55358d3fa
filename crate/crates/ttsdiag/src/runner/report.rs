//! Render a completed run: summary grid, per-n curve data, power-law fit.
//!
//! Rendering is a pure function of the loaded [`RunResult`], so reporting
//! the same directory twice yields byte-identical output.

use std::collections::BTreeMap;
use std::path::Path;

use crate::metrics::fit_power_law;

use super::{
    DiagnosisScore, METRICS_FILE, MetricCell, PROVENANCE_FILE, RunResult, RunnerError,
    SCORES_FILE, ScoreLine, read_provenance,
};

/// Saturated metrics would make log(1 - metric) blow up; the error term is
/// clamped to this floor for the presentational fit and the line is marked.
const ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    /// Fixed-width summary grid plus power-law fits.
    Table,
    /// Per-(method, n) curve data, one CSV row each.
    Csv,
}

/// Load a finished run back from its output directory.
///
/// Errors with [`RunnerError::IncompleteRun`] if any artifact is missing or
/// any configured (method, n) cell never made it into metrics.json.
pub fn load_run(output_dir: &Path) -> Result<RunResult, RunnerError> {
    let missing = |name: &str| RunnerError::IncompleteRun {
        dir: output_dir.to_path_buf(),
        missing: name.to_string(),
    };

    let provenance_path = output_dir.join(PROVENANCE_FILE);
    if !provenance_path.exists() {
        return Err(missing(PROVENANCE_FILE));
    }
    let provenance = read_provenance(&provenance_path)?;
    let mut config = provenance.config.clone();
    config.output_dir = output_dir.to_path_buf();

    let metrics_path = output_dir.join(METRICS_FILE);
    if !metrics_path.exists() {
        return Err(missing(METRICS_FILE));
    }
    let bytes = std::fs::read(&metrics_path).map_err(|source| RunnerError::Io {
        path: metrics_path.clone(),
        source,
    })?;
    let metrics: BTreeMap<String, BTreeMap<u32, MetricCell>> = serde_json::from_slice(&bytes)
        .map_err(|e| RunnerError::Malformed {
            path: metrics_path.clone(),
            message: e.to_string(),
        })?;

    let scores_path = output_dir.join(SCORES_FILE);
    if !scores_path.exists() {
        return Err(missing(SCORES_FILE));
    }
    let text = std::fs::read_to_string(&scores_path).map_err(|source| RunnerError::Io {
        path: scores_path.clone(),
        source,
    })?;
    let mut scores: BTreeMap<String, BTreeMap<u32, Vec<DiagnosisScore>>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScoreLine =
            serde_json::from_str(line).map_err(|e| RunnerError::Malformed {
                path: scores_path.clone(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
        scores
            .entry(parsed.method)
            .or_default()
            .entry(parsed.n)
            .or_default()
            .push(parsed.score);
    }

    for mc in &config.method_configs {
        let name = mc.method.name();
        for &n in &config.n_values {
            let have_metric = metrics.get(name).is_some_and(|m| m.contains_key(&n));
            let have_scores = scores
                .get(name)
                .and_then(|m| m.get(&n))
                .is_some_and(|v| !v.is_empty());
            if !have_metric || !have_scores {
                return Err(missing(&format!("cell ({name}, n={n})")));
            }
        }
    }

    Ok(RunResult {
        config,
        scores,
        metrics,
        provenance,
    })
}

fn cell(result: &RunResult, method: &str, n: u32) -> MetricCell {
    result.metrics[method][&n]
}

fn render_table(result: &RunResult) -> String {
    let single_n = *result.config.n_values.iter().min().expect("validated");
    let tts_n = *result.config.n_values.iter().max().expect("validated");
    let mut out = String::new();
    out.push_str(&format!(
        "run {}  dataset {}  seed {}\n\n",
        &result.provenance.config_digest[..12],
        &result.provenance.dataset_digest[..12],
        result.provenance.random_seed,
    ));
    out.push_str(&format!(
        "{:<24} {:>22}  {:>22}\n",
        "",
        format!("single (n={single_n})"),
        format!("tts (n={tts_n})"),
    ));
    out.push_str(&format!(
        "{:<24} {:>10} {:>11}  {:>10} {:>11}\n",
        "method", "auc", "ap", "auc", "ap"
    ));
    for mc in &result.config.method_configs {
        let name = mc.method.name();
        let single = cell(result, name, single_n);
        let tts = cell(result, name, tts_n);
        out.push_str(&format!(
            "{:<24} {:>10.4} {:>11.4}  {:>10.4} {:>11.4}\n",
            name, single.auc, single.ap, tts.auc, tts.ap
        ));
    }

    let mut degraded_notes = Vec::new();
    for mc in &result.config.method_configs {
        let name = mc.method.name();
        for (&n, c) in &result.metrics[name] {
            if c.degraded_count > 0 {
                degraded_notes.push(format!("{name} n={n}: {}", c.degraded_count));
            }
        }
    }
    if !degraded_notes.is_empty() {
        out.push_str(&format!(
            "\nsamples aggregated with failed generations: {}\n",
            degraded_notes.join("; ")
        ));
    }

    out.push_str("\npower-law fit 1 - auc(n) = alpha * n^-beta:\n");
    for mc in &result.config.method_configs {
        let name = mc.method.name();
        let mut clamped = false;
        let points: Vec<(usize, f64)> = result.metrics[name]
            .iter()
            .map(|(&n, c)| {
                let metric = if c.auc > 1.0 - ERROR_FLOOR {
                    clamped = true;
                    1.0 - ERROR_FLOOR
                } else {
                    c.auc
                };
                (n as usize, metric)
            })
            .collect();
        match fit_power_law(&points) {
            Ok(fit) => out.push_str(&format!(
                "{:<24} alpha={:.4}  beta={:.4}  rmse={:.4}{}\n",
                name,
                fit.alpha,
                fit.beta,
                fit.rmse,
                if clamped { "  (error term clamped)" } else { "" }
            )),
            Err(e) => out.push_str(&format!("{name:<24} fit unavailable: {e}\n")),
        }
    }
    out
}

fn render_csv(result: &RunResult) -> String {
    let mut out = String::from("method,n,auc,ap,degraded_count\n");
    for mc in &result.config.method_configs {
        let name = mc.method.name();
        for (&n, c) in &result.metrics[name] {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                name, n, c.auc, c.ap, c.degraded_count
            ));
        }
    }
    out
}

/// Render a loaded run in the requested format.
pub fn render_report(result: &RunResult, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(result),
        ReportFormat::Csv => render_csv(result),
    }
}
