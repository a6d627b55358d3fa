//! Labeled image datasets: manifest loading, validation, and wire encoding.
//!
//! A dataset lives in a directory holding two files:
//!
//! - `task.json` — a single JSON object naming the task:
//!   `{"dataset_name", "class0_name", "class1_name", "modality_phrase"}`.
//! - `samples.jsonl` — one JSON object per line:
//!   `{"id", "image", "label", "split"?}` where `image` is a path relative
//!   to the dataset directory and `label` is 0 or 1.
//!
//! Images are consumed as pre-exported PNG or JPEG files. A 224x224
//! resolution is expected and deviations are reported as validation notes,
//! not errors, since endpoints accept arbitrary resolutions.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::hashing::sha256_hex;

pub const TASK_FILE: &str = "task.json";
pub const MANIFEST_FILE: &str = "samples.jsonl";

/// Expected image side length; deviations are reported, not rejected.
pub const EXPECTED_RESOLUTION: u32 = 224;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("missing file {path}: {source}")]
    MissingFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed record at {path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate sample id {id:?} at {path}:{line}")]
    DuplicateId {
        id: String,
        path: PathBuf,
        line: usize,
    },
    #[error("label {label} outside {{0,1}} at {path}:{line}")]
    InvalidLabel {
        label: i64,
        path: PathBuf,
        line: usize,
    },
    #[error("invalid task config at {path}: {message}")]
    InvalidTask { path: PathBuf, message: String },
    #[error("unsupported image format {extension:?} for {path} (expected png/jpg/jpeg)")]
    UnsupportedFormat { path: PathBuf, extension: String },
    #[error("unreadable image {path}: {source}")]
    UnreadableImage {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One labeled image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Resolved path to the image file.
    pub image_path: PathBuf,
    /// Ground-truth binary label.
    pub label: u8,
    /// Optional split tag; carried through but not interpreted by the runner.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

/// Names the binary classification task a dataset poses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub dataset_name: String,
    /// Name of the negative class, e.g. "normal".
    pub class0_name: String,
    /// Name of the positive class, e.g. "pneumonia".
    pub class1_name: String,
    /// Phrase describing the image kind, e.g. "pediatric chest X-ray image".
    pub modality_phrase: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.class0_name.is_empty() || self.class1_name.is_empty() {
            return Err("class names must be non-empty".into());
        }
        if self.class0_name == self.class1_name {
            return Err(format!("class names must be distinct, both are {:?}", self.class0_name));
        }
        Ok(())
    }
}

/// A task plus its samples, in manifest order. Immutable after load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: TaskSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Number of samples per label, indexed by label.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for s in &self.samples {
            counts[s.label as usize] += 1;
        }
        counts
    }
}

/// Base64-encoded image ready for wire transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    /// "image/png" or "image/jpeg".
    pub media_type: String,
    pub base64_data: String,
    /// Hex SHA-256 of the raw image bytes.
    pub content_digest: String,
}

/// Outcome of [`validate_dataset`]. Issues block a run; notes do not.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub class_counts: [usize; 2],
    pub issues: Vec<String>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Deserialize)]
struct ManifestRecord {
    id: String,
    image: String,
    label: i64,
    #[serde(default)]
    split: Option<String>,
}

/// Load a dataset from a directory containing `task.json` and `samples.jsonl`.
///
/// Samples come back in manifest order. Image files are not opened here;
/// readability is checked by [`validate_dataset`] so a report can list every
/// problem instead of stopping at the first.
pub fn load_manifest(dir: &Path) -> Result<Dataset, DatasetError> {
    let task_path = dir.join(TASK_FILE);
    let task_bytes = fs::read(&task_path).map_err(|source| DatasetError::MissingFile {
        path: task_path.clone(),
        source,
    })?;
    let task: TaskSpec =
        serde_json::from_slice(&task_bytes).map_err(|e| DatasetError::InvalidTask {
            path: task_path.clone(),
            message: e.to_string(),
        })?;
    task.validate().map_err(|message| DatasetError::InvalidTask {
        path: task_path,
        message,
    })?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&manifest_path).map_err(|source| DatasetError::MissingFile {
        path: manifest_path.clone(),
        source,
    })?;

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::MalformedRecord {
            path: manifest_path.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRecord {
                path: manifest_path.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        if !(0..=1).contains(&record.label) {
            return Err(DatasetError::InvalidLabel {
                label: record.label,
                path: manifest_path,
                line: line_no,
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                id: record.id,
                path: manifest_path,
                line: line_no,
            });
        }
        samples.push(Sample {
            id: record.id,
            image_path: dir.join(&record.image),
            label: record.label as u8,
            split: record.split,
        });
    }

    Ok(Dataset { task, samples })
}

fn media_type_for(path: &Path) -> Result<&'static str, DatasetError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "png" => Ok("image/png"),
        "jpg" | "jpeg" => Ok("image/jpeg"),
        _ => Err(DatasetError::UnsupportedFormat {
            path: path.to_path_buf(),
            extension: ext,
        }),
    }
}

/// Read a sample's image and encode it for transport.
///
/// The payload round-trips byte-exactly: decoding `base64_data` yields the
/// original file bytes, whose SHA-256 is `content_digest`.
pub fn encode_image(sample: &Sample) -> Result<ImagePayload, DatasetError> {
    let media_type = media_type_for(&sample.image_path)?;
    let bytes = fs::read(&sample.image_path).map_err(|source| DatasetError::UnreadableImage {
        path: sample.image_path.clone(),
        source,
    })?;
    Ok(ImagePayload {
        media_type: media_type.to_string(),
        base64_data: base64::engine::general_purpose::STANDARD.encode(&bytes),
        content_digest: sha256_hex(&bytes),
    })
}

/// Check a loaded dataset: per-class counts, file readability, and
/// resolution expectations. Problems are collected into the report rather
/// than returned as errors.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport {
        class_counts: dataset.class_counts(),
        ..Default::default()
    };

    for (label, count) in report.class_counts.iter().enumerate() {
        if *count == 0 {
            report
                .issues
                .push(format!("class {label} has no samples; metrics need both classes"));
        }
    }

    for sample in &dataset.samples {
        if let Err(e) = media_type_for(&sample.image_path) {
            report.issues.push(e.to_string());
            continue;
        }
        match fs::File::open(&sample.image_path) {
            Err(e) => report.issues.push(format!(
                "sample {:?}: cannot read {}: {e}",
                sample.id,
                sample.image_path.display()
            )),
            Ok(_) => match image::image_dimensions(&sample.image_path) {
                Err(e) => report.issues.push(format!(
                    "sample {:?}: cannot decode {}: {e}",
                    sample.id,
                    sample.image_path.display()
                )),
                Ok((w, h)) => {
                    if w != EXPECTED_RESOLUTION || h != EXPECTED_RESOLUTION {
                        report.notes.push(format!(
                            "sample {:?}: resolution {w}x{h} differs from the expected {r}x{r}",
                            sample.id,
                            r = EXPECTED_RESOLUTION
                        ));
                    }
                }
            },
        }
    }

    report
}
