#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use activeseg::io;
use activeseg::oversegment::{watershed, WatershedConfig};
use activeseg::synth::{generate_synthetic_volume, SynthConfig, SyntheticDataset};
use activeseg::{ClassLabel, Dims, ProbabilityField};
use activeseg_server::{router, AppState};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: SyntheticDataset,
    pub manifest: PathBuf,
    pub probabilities: PathBuf,
    pub oversegmentation: PathBuf,
}

/// Small synthetic stack on disk, plus a membrane map that splits every
/// cell along a coarse grid so the over-segmentation has false boundaries.
pub fn fixture() -> Fixture {
    let cfg = SynthConfig { seed: 3, dims: Dims { x: 48, y: 48, z: 1 }, cell_count: 5, mito_count: 2, noise_sigma: 10.0 };
    let data = generate_synthetic_volume(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = io::save_dataset(dir.path(), &data.volume, Some(&data.labels), Some(&data.segmentation)).unwrap();
    let dims = data.volume.dims();
    let pm: Vec<f64> = (0..dims.len())
        .map(|i| {
            let (x, y, _) = dims.coords(i);
            if data.labels[i] == ClassLabel::Membrane {
                0.9
            } else if x % 12 == 6 || y % 12 == 6 {
                0.3
            } else {
                0.002
            }
        })
        .collect();
    let field = ProbabilityField::from_membrane(dims, &pm).unwrap();
    let (_, seg) = watershed(&field, &WatershedConfig::default()).unwrap();
    let probabilities = dir.path().join("probabilities.json");
    let oversegmentation = dir.path().join("overseg.json");
    io::save_probability_field(&field, &probabilities).unwrap();
    io::save_segmentation(&seg, &oversegmentation).unwrap();
    Fixture { dir, data, manifest, probabilities, oversegmentation }
}

impl Fixture {
    pub fn truth(&self, voxel: usize) -> usize {
        self.data.labels[voxel].index()
    }

    /// A few groundtruth strokes per class.
    pub fn strokes(&self, per_class: usize) -> Vec<Value> {
        activeseg::active_pixel::oracle_pool(&self.data.labels, per_class, 5)
            .into_iter()
            .map(|(voxel, label)| json!({"voxel": voxel, "label": label}))
            .collect()
    }

    pub fn pixel_request(&self, mode: &str) -> Value {
        json!({
            "v": 1,
            "manifest": self.manifest,
            "phase": "pixel",
            "mode": mode,
            "pixel": {
                "config": {"budget": 3, "subsample_size": 300, "tree_count": 10, "seed": 2},
                "pool_per_class": 10
            }
        })
    }

    pub fn boundary_request(&self, mode: &str) -> Value {
        json!({
            "v": 1,
            "manifest": self.manifest,
            "phase": "boundary",
            "mode": mode,
            "boundary": {
                "probabilities": self.probabilities,
                "oversegmentation": self.oversegmentation,
                "config": {"tree_count": 10, "budget_fraction": 0.5, "seed": 4}
            }
        })
    }
}

pub struct Client {
    pub state: Arc<AppState>,
}

impl Client {
    pub fn open(root: &Path) -> Client {
        Client { state: AppState::open(root).unwrap() }
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, body).await;
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, value)
    }

    pub async fn raw(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let builder = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => builder.body(Body::empty()),
        }
        .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn create(&self, req: Value) -> String {
        let (status, body) = self.call("POST", "/sessions", Some(req)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    /// Brushes groundtruth strokes and starts the loop.
    pub async fn start_pixel(&self, fx: &Fixture) -> String {
        let id = self.create(fx.pixel_request("interactive")).await;
        let (status, body) = self
            .call("POST", &format!("/sessions/{id}/brush"), Some(json!({"v": 1, "strokes": fx.strokes(8), "complete": true})))
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        id
    }

    pub async fn queries(&self, id: &str) -> Value {
        let (status, body) = self.call("GET", &format!("/sessions/{id}/queries"), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }

    pub async fn progress(&self, id: &str) -> Value {
        let (status, body) = self.call("GET", &format!("/sessions/{id}/progress"), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }
}

/// Groundtruth answers for a pixel query batch.
pub fn pixel_answers(fx: &Fixture, queries: &Value) -> Value {
    let labels: Vec<Value> = queries["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| {
            let s = q["sample"].as_u64().unwrap() as usize;
            json!({"sample": s, "label": fx.truth(s)})
        })
        .collect();
    json!({"v": 1, "batch": queries["batch"], "labels": labels})
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}
