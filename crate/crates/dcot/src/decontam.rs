//! Dual-criterion benchmark decontamination.
//!
//! A sample is removed when its max embedding cosine similarity to any
//! benchmark item exceeds the threshold, OR it shares any 13-gram (over
//! normalized word tokens) with any benchmark item. N-gram hits are
//! confirmed by exact string comparison so no hash collision can remove
//! a sample.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_NGRAM: usize = 13;
pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.55;
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error)]
pub enum DecontamError {
    #[error("embedding dimension mismatch: sample {sample} vs benchmark {benchmark}")]
    DimMismatch { sample: usize, benchmark: usize },
    #[error("vector for {0} is not unit-norm (|1 - norm| = {1:.3e})")]
    NotUnitNorm(String, f64),
    #[error("missing embeddings for: {0:?}")]
    MissingEmbedding(Vec<String>),
}

/// Lowercase, NFKC-normalize, strip punctuation, whitespace-split.
pub fn normalize(text: &str) -> Vec<String> {
    let folded: String = text
        .nfkc()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect();
    folded.split_whitespace().map(str::to_string).collect()
}

fn fnv1a64(tokens: &[String]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for t in tokens {
        for b in t.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1f; // token separator
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Shingle index over a benchmark corpus. Fingerprints are 64-bit hashes
/// of n-token windows; each fingerprint keeps the source shingle strings
/// for exact recheck.
#[derive(Debug)]
pub struct ShingleIndex {
    pub n: usize,
    entries: HashMap<u64, Vec<(String, String)>>, // fingerprint -> (benchmark_id, shingle text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramHit {
    pub shingle: String,
    pub benchmark_id: String,
}

impl ShingleIndex {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, benchmark_id: &str, text: &str) {
        let tokens = normalize(text);
        if tokens.len() < self.n {
            return;
        }
        for window in tokens.windows(self.n) {
            let fp = fnv1a64(window);
            let shingle = window.join(" ");
            self.entries
                .entry(fp)
                .or_default()
                .push((benchmark_id.to_string(), shingle));
        }
    }

    /// First confirmed shared n-gram, if any. Samples shorter than n
    /// tokens can never hit.
    pub fn overlap(&self, sample: &str) -> Option<NgramHit> {
        let tokens = normalize(sample);
        if tokens.len() < self.n {
            return None;
        }
        for window in tokens.windows(self.n) {
            let fp = fnv1a64(window);
            if let Some(sources) = self.entries.get(&fp) {
                let shingle = window.join(" ");
                // exact recheck: the hash hit must match a stored shingle
                if let Some((bid, s)) = sources.iter().find(|(_, s)| *s == shingle) {
                    return Some(NgramHit {
                        shingle: s.clone(),
                        benchmark_id: bid.clone(),
                    });
                }
            }
        }
        None
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_unit(id: &str, v: &[f64]) -> Result<(), DecontamError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(DecontamError::NotUnitNorm(id.into(), (norm - 1.0).abs()));
    }
    Ok(())
}

/// Exact maximum dot product of a unit vector against unit benchmark rows.
pub fn max_cosine(
    sample_vec: &[f64],
    benchmark_vecs: &[(String, Vec<f64>)],
) -> Result<(f64, String), DecontamError> {
    check_unit("sample", sample_vec)?;
    if benchmark_vecs.is_empty() {
        return Ok((-1.0, String::new()));
    }
    let mut best = (f64::NEG_INFINITY, String::new());
    for (id, v) in benchmark_vecs {
        if v.len() != sample_vec.len() {
            return Err(DecontamError::DimMismatch {
                sample: sample_vec.len(),
                benchmark: v.len(),
            });
        }
        check_unit(id, v)?;
        let dot: f64 = sample_vec.iter().zip(v).map(|(a, b)| a * b).sum();
        if dot > best.0 {
            best = (dot, id.clone());
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContaminationVerdict {
    pub sample_id: String,
    pub removed: bool,
    pub max_cosine: f64,
    pub nearest_benchmark_id: String,
    pub ngram_hit: Option<NgramHit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub benchmark_name: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub threshold: f64,
    pub removed_count: u64,
}

impl SimilarityHistogram {
    pub fn new(benchmark_name: &str, threshold: f64) -> Self {
        let bin_edges = (0..=HISTOGRAM_BINS)
            .map(|i| i as f64 / HISTOGRAM_BINS as f64)
            .collect();
        Self {
            benchmark_name: benchmark_name.to_string(),
            bin_edges,
            counts: vec![0; HISTOGRAM_BINS],
            threshold,
            removed_count: 0,
        }
    }

    pub fn record(&mut self, cosine: f64) {
        let clamped = cosine.clamp(0.0, 1.0);
        let mut bin = (clamped * HISTOGRAM_BINS as f64) as usize;
        if bin == HISTOGRAM_BINS {
            bin -= 1;
        }
        self.counts[bin] += 1;
        if cosine > self.threshold {
            self.removed_count += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// One benchmark test set: items for the shingle index plus unit
/// embeddings keyed by item id.
pub struct BenchmarkSet {
    pub name: String,
    pub items: Vec<(String, String)>, // (id, text)
    pub embeddings: Vec<(String, Vec<f64>)>,
}

pub struct CorpusSample {
    pub id: String,
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug)]
pub struct FilterOutcome {
    pub clean_ids: Vec<String>,
    pub verdicts: Vec<ContaminationVerdict>,
    pub histograms: Vec<SimilarityHistogram>,
}

/// Score every sample against every benchmark set; remove on either
/// criterion firing against any set.
pub fn filter_corpus(
    samples: &[CorpusSample],
    benchmark_sets: &[BenchmarkSet],
    cosine_threshold: f64,
    ngram_n: usize,
) -> Result<FilterOutcome, DecontamError> {
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| s.embedding.is_empty())
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(DecontamError::MissingEmbedding(missing));
    }

    let indexes: Vec<ShingleIndex> = benchmark_sets
        .iter()
        .map(|set| {
            let mut idx = ShingleIndex::new(ngram_n);
            for (id, text) in &set.items {
                idx.insert(id, text);
            }
            idx
        })
        .collect();
    let mut histograms: Vec<SimilarityHistogram> = benchmark_sets
        .iter()
        .map(|set| SimilarityHistogram::new(&set.name, cosine_threshold))
        .collect();

    let mut clean_ids = Vec::new();
    let mut verdicts = Vec::new();
    for sample in samples {
        let mut overall_max = -1.0f64;
        let mut nearest = String::new();
        let mut hit: Option<NgramHit> = None;
        for (i, set) in benchmark_sets.iter().enumerate() {
            let (mc, id) = max_cosine(&sample.embedding, &set.embeddings)?;
            histograms[i].record(mc);
            if mc > overall_max {
                overall_max = mc;
                nearest = id;
            }
            if hit.is_none() {
                hit = indexes[i].overlap(&sample.text);
            }
        }
        let removed = overall_max > cosine_threshold || hit.is_some();
        if !removed {
            clean_ids.push(sample.id.clone());
        }
        verdicts.push(ContaminationVerdict {
            sample_id: sample.id.clone(),
            removed,
            max_cosine: overall_max,
            nearest_benchmark_id: nearest,
            ngram_hit: hit,
        });
    }
    Ok(FilterOutcome {
        clean_ids,
        verdicts,
        histograms,
    })
}
