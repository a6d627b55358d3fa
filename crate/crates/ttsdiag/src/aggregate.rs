//! Turn one sample's parsed generations into a probability estimate.
//!
//! The estimate is the fraction of Class1 verdicts among the valid
//! (parseable) answers. Unparseable answers are excluded from numerator and
//! denominator rather than counted as Class0: counting failures as the
//! healthy class would bias toward under-diagnosis. With every answer valid
//! this coincides with the plain indicator average over N. When all N
//! answers are invalid the estimate falls back to 0.5, maximal uncertainty,
//! keeping metric denominators stable; both degradations are surfaced via
//! the `degraded` flag and counted by the runner.

use serde::{Deserialize, Serialize};

use crate::pipeline::{GenerationRecord, ParsedAnswer, Stage};

/// The per-sample probability estimate and its validity accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisScore {
    pub sample_id: String,
    /// Estimated P(class = 1), in [0, 1].
    pub estimate: f64,
    /// Answer-bearing generations considered (N).
    pub n_total: u32,
    /// How many of them parsed.
    pub n_valid: u32,
    /// True iff n_valid < n_total.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("records mix sample ids {a:?} and {b:?}")]
    MixedSampleIds { a: String, b: String },
    #[error("no answer-bearing records for sample {sample_id:?}")]
    NoAnswerRecords { sample_id: String },
}

/// Aggregate one sample's records into a [`DiagnosisScore`].
///
/// Only answer-bearing records (Direct or Stage2) count; Stage1 descriptions
/// are ignored. All records must belong to one sample.
pub fn estimate_probability(
    records: &[GenerationRecord],
) -> Result<DiagnosisScore, AggregateError> {
    let sample_id = records
        .first()
        .map(|r| r.sample_id.clone())
        .unwrap_or_default();
    for r in records {
        if r.sample_id != sample_id {
            return Err(AggregateError::MixedSampleIds {
                a: sample_id,
                b: r.sample_id.clone(),
            });
        }
    }

    let mut n_total = 0u32;
    let mut n_valid = 0u32;
    let mut ones = 0u32;
    for r in records {
        if r.stage == Stage::Stage1 {
            continue;
        }
        n_total += 1;
        match r.parsed {
            Some(ParsedAnswer::Class1) => {
                n_valid += 1;
                ones += 1;
            }
            Some(ParsedAnswer::Class0) => n_valid += 1,
            Some(ParsedAnswer::Unparseable) | None => {}
        }
    }
    if n_total == 0 {
        return Err(AggregateError::NoAnswerRecords { sample_id });
    }

    let estimate = if n_valid == 0 {
        0.5
    } else {
        ones as f64 / n_valid as f64
    };
    Ok(DiagnosisScore {
        sample_id,
        estimate,
        n_total,
        n_valid,
        degraded: n_valid < n_total,
    })
}
