//! Shared fixtures for integration tests: synthetic datasets, endpoint and
//! method configs pointed at a live mock server.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ttsdiag::client::EndpointConfig;
use ttsdiag::dataset::{Dataset, load_manifest};
use ttsdiag::mock::{MockConfig, label_map_from_dataset};
use ttsdiag::pipeline::{Method, MethodConfig};
use ttsdiag::prompting::Stage1Variant;
use ttsdiag::runner::RunConfig;

/// Write a balanced synthetic dataset: `per_class` samples of each class,
/// interleaved, with unique tiny PNGs. Returns the loaded dataset.
pub fn write_dataset(dir: &Path, per_class: usize) -> Dataset {
    write_dataset_sized(dir, per_class, 16)
}

pub fn write_dataset_sized(dir: &Path, per_class: usize, side: u32) -> Dataset {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let task = serde_json::json!({
        "dataset_name": "synthetic-chest",
        "class0_name": "normal",
        "class1_name": "pneumonia",
        "modality_phrase": "chest X-ray image"
    });
    std::fs::write(
        dir.join("task.json"),
        serde_json::to_vec_pretty(&task).unwrap(),
    )
    .unwrap();

    let mut manifest = String::new();
    for i in 0..per_class * 2 {
        let label = i % 2;
        let rel = format!("images/s{i:04}.png");
        // Content varies per index so every sample has a distinct digest.
        let img = image::ImageBuffer::from_fn(side, side, |x, y| {
            image::Luma([((i as u32 * 131 + x * 7 + y * 13) % 256) as u8])
        });
        img.save(dir.join(&rel)).unwrap();
        manifest.push_str(
            &serde_json::json!({"id": format!("s{i:04}"), "image": rel, "label": label})
                .to_string(),
        );
        manifest.push('\n');
    }
    std::fs::write(dir.join("samples.jsonl"), manifest).unwrap();
    load_manifest(dir).unwrap()
}

/// Mock tuned so diagnosis quality is informative but imperfect: the
/// per-generation accuracy on known images is q*r + (1-q)/2.
pub fn informative_mock(dataset: &Dataset, q: f64, r: f64, seed: u64) -> MockConfig {
    MockConfig {
        label_map: label_map_from_dataset(dataset).unwrap(),
        stage1_informativeness: q,
        stage2_accuracy_pos: r,
        stage2_accuracy_neg: r,
        latency_ms: 0,
        fail_rate: 0.0,
        seed,
    }
}

pub fn endpoint(base_url: &str, model_name: &str) -> EndpointConfig {
    EndpointConfig {
        base_url: base_url.to_string(),
        model_name: model_name.to_string(),
        max_tokens: 256,
        timeout_s: 30.0,
        max_retries: 1,
        max_in_flight: 8,
    }
}

pub fn method_config(method: Method, base_url: &str, num_samples: u32) -> MethodConfig {
    MethodConfig {
        method,
        stage1_variant: Stage1Variant::Unconstrained,
        num_samples,
        temperature: 0.7,
        stage2_temperature: 0.0,
        stage1_endpoint: endpoint(base_url, "mock-vlm"),
        stage2_endpoint: (method == Method::DescribeThenDiagnose)
            .then(|| endpoint(base_url, "mock-llm")),
    }
}

pub fn run_config(
    dataset_dir: &Path,
    output_dir: &Path,
    methods: Vec<MethodConfig>,
    n_values: Vec<u32>,
    seed: u64,
) -> RunConfig {
    RunConfig {
        dataset_path: dataset_dir.to_path_buf(),
        method_configs: methods,
        n_values,
        output_dir: output_dir.to_path_buf(),
        prompt_file: None,
        sample_concurrency: 4,
        random_seed: seed,
    }
}

pub fn read_to_string(path: &PathBuf) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"))
}
