//! Pluggable embedding sources: sidecar vector files or an
//! OpenAI-compatible embeddings endpoint.

use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding lookup failed for {0}")]
    NotFound(String),
    #[error("embedding endpoint error: {0}")]
    Endpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad sidecar file: {0}")]
    BadSidecar(String),
}

pub trait EmbeddingProvider {
    fn embed(&self, id: &str, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Sidecar JSONL of `{"id": ..., "vector": [...]}` rows. Vectors are
/// L2-normalized on load.
pub struct SidecarEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
}

impl SidecarEmbeddings {
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let text = std::fs::read_to_string(path)?;
        let mut vectors = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| EmbedError::BadSidecar(format!("line {}: {e}", lineno + 1)))?;
            let id = v["id"]
                .as_str()
                .map(str::to_string)
                .or_else(|| v["id"].as_u64().map(|n| n.to_string()))
                .ok_or_else(|| EmbedError::BadSidecar(format!("line {}: no id", lineno + 1)))?;
            let vec: Vec<f64> = v["vector"]
                .as_array()
                .ok_or_else(|| EmbedError::BadSidecar(format!("line {}: no vector", lineno + 1)))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(0.0))
                .collect();
            vectors.insert(id, normalize_l2(vec));
        }
        Ok(Self { vectors })
    }
}

fn normalize_l2(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

impl EmbeddingProvider for SidecarEmbeddings {
    fn embed(&self, id: &str, _text: &str) -> Result<Vec<f64>, EmbedError> {
        self.vectors
            .get(id)
            .cloned()
            .ok_or_else(|| EmbedError::NotFound(id.to_string()))
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<&str>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: api_key_env.and_then(|v| std::env::var(v).ok()),
            http: reqwest::blocking::Client::new(),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, _id: &str, text: &str) -> Result<Vec<f64>, EmbedError> {
        let url = format!("{}/embeddings", self.base_url);
        let mut builder = self.http.post(&url).json(&serde_json::json!({
            "model": self.model,
            "input": text,
        }));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| EmbedError::Endpoint(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Endpoint(format!("status {}", resp.status())));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| EmbedError::Endpoint(e.to_string()))?;
        let vec = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::Endpoint("no embedding in response".into()))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(0.0))
            .collect();
        Ok(normalize_l2(vec))
    }
}
