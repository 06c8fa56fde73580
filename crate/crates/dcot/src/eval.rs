//! Multiple-choice evaluation: answer extraction, accuracy / Null rate /
//! Null-corrected scoring, token statistics, seed aggregation, and the
//! accuracy-vs-tokens Pareto front.

use crate::decode::client::{ChatMessage, CompletionClient};
use crate::decode::{decode, DecodeError, DecodeTranscript, SamplingPolicy, TokenCounter};
use crate::tagparse;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("run contains no records")]
    EmptyRun,
    #[error("token reduction baseline must be > 0, got {0}")]
    Domain(f64),
    #[error("cannot aggregate mixed conditions: {0} vs {1}")]
    MixedConditions(String, String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("bad benchmark file: {0}")]
    BadBenchmark(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub correct_label: char,
    pub subject: Option<String>,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let n = self.options.len();
        if !(2..=26).contains(&n) {
            return Err(EvalError::BadBenchmark(format!(
                "item {}: {} options out of range",
                self.id, n
            )));
        }
        let max = (b'A' + n as u8 - 1) as char;
        if !self.correct_label.is_ascii_uppercase() || self.correct_label > max {
            return Err(EvalError::BadBenchmark(format!(
                "item {}: label {} outside A..{max}",
                self.id, self.correct_label
            )));
        }
        Ok(())
    }
}

fn label_for(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// Generic benchmark JSONL: fields id, question, options, answer (letter or
/// 0-based index), optional subject. MMLU-Pro public field names
/// (question_id, answer_index, category) are accepted as aliases.
pub fn load_benchmark_jsonl(path: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| EvalError::BadBenchmark(format!("line {}: {e}", lineno + 1)))?;
        let item = parse_item(&v, lineno)?;
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

fn parse_item(v: &serde_json::Value, lineno: usize) -> Result<BenchmarkItem, EvalError> {
    let bad = |msg: &str| EvalError::BadBenchmark(format!("line {}: {msg}", lineno + 1));
    // GPQA public layout: correct answer plus three incorrect answers
    if v.get("Question").is_some() {
        return parse_gpqa_item(v, lineno);
    }
    let id = v
        .get("id")
        .or_else(|| v.get("question_id"))
        .map(|x| match x {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .unwrap_or_else(|| format!("item-{}", lineno + 1));
    let question = v
        .get("question")
        .and_then(|x| x.as_str())
        .ok_or_else(|| bad("missing question"))?
        .to_string();
    let options: Vec<String> = v
        .get("options")
        .and_then(|x| x.as_array())
        .ok_or_else(|| bad("missing options"))?
        .iter()
        .map(|o| o.as_str().unwrap_or_default().to_string())
        .collect();
    let correct_label = if let Some(a) = v.get("answer").and_then(|x| x.as_str()) {
        a.trim()
            .chars()
            .next()
            .ok_or_else(|| bad("empty answer"))?
            .to_ascii_uppercase()
    } else if let Some(i) = v
        .get("answer")
        .and_then(|x| x.as_u64())
        .or_else(|| v.get("answer_index").and_then(|x| x.as_u64()))
    {
        label_for(i as usize)
    } else {
        return Err(bad("missing answer"));
    };
    let subject = v
        .get("subject")
        .or_else(|| v.get("category"))
        .and_then(|x| x.as_str())
        .map(str::to_string);
    Ok(BenchmarkItem {
        id,
        question,
        options,
        correct_label,
        subject,
    })
}

/// GPQA layout: the correct option's position is a deterministic function
/// of the item index so loads are reproducible.
fn parse_gpqa_item(v: &serde_json::Value, lineno: usize) -> Result<BenchmarkItem, EvalError> {
    let bad = |msg: &str| EvalError::BadBenchmark(format!("line {}: {msg}", lineno + 1));
    let question = v["Question"]
        .as_str()
        .ok_or_else(|| bad("missing Question"))?
        .to_string();
    let correct = v["Correct Answer"]
        .as_str()
        .ok_or_else(|| bad("missing Correct Answer"))?
        .to_string();
    let mut options: Vec<String> = (1..=3)
        .map(|i| {
            v[format!("Incorrect Answer {i}")]
                .as_str()
                .unwrap_or_default()
                .to_string()
        })
        .collect();
    let slot = lineno % 4;
    options.insert(slot, correct);
    Ok(BenchmarkItem {
        id: format!("gpqa-{}", lineno + 1),
        question,
        options,
        correct_label: label_for(slot),
        subject: v["Subdomain"].as_str().map(str::to_string),
    })
}

// ---------------------------------------------------------------------------
// Answer extraction

fn explicit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\banswer\s*(?:is)?\s*[:\-]?\s*\**\(?([A-Za-z])\)?\**(?:[^A-Za-z0-9]|$)")
            .expect("valid regex")
    })
}

fn boxed_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\\boxed\{\(?([A-Za-z])\)?\}").expect("valid regex"))
}

fn standalone_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Z])\b").expect("valid regex"))
}

fn in_range(letter: char, num_options: usize) -> bool {
    let max = (b'A' + num_options as u8 - 1) as char;
    ('A'..=max).contains(&letter)
}

/// Extract the answered option letter from visible (non-think) text.
///
/// Priority: the final in-range explicit declaration ("answer is (X)",
/// "Answer: X", boxed X), then the final in-range standalone letter.
/// Letters outside the option range are ignored.
pub fn extract_answer(text: &str, num_options: usize) -> Option<char> {
    debug_assert!(num_options >= 2);
    let visible = tagparse::strip_think(text);
    let mut last: Option<(usize, char)> = None;
    for re in [explicit_re(), boxed_re()] {
        for cap in re.captures_iter(&visible) {
            let m = cap.get(1).expect("group 1");
            let letter = m.as_str().chars().next().unwrap().to_ascii_uppercase();
            if in_range(letter, num_options) && last.map_or(true, |(p, _)| m.start() >= p) {
                last = Some((m.start(), letter));
            }
        }
    }
    if let Some((_, letter)) = last {
        return Some(letter);
    }
    let mut fallback = None;
    for cap in standalone_re().captures_iter(&visible) {
        let letter = cap.get(1).unwrap().as_str().chars().next().unwrap();
        if in_range(letter, num_options) {
            fallback = Some(letter);
        }
    }
    fallback
}

// ---------------------------------------------------------------------------
// Scoring

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub transcript: DecodeTranscript,
    pub extracted_label: Option<char>,
    pub correct: bool,
    pub is_null: bool,
    pub output_tokens: u64,
    pub seed: u64,
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub condition_name: String,
    pub accuracy: f64,
    pub null_rate: f64,
    pub null_corrected: f64,
    pub mean_tokens: f64,
    pub n_items: usize,
    pub n_seeds: usize,
}

/// accuracy counts Null items as incorrect; null_corrected adds
/// random-chance credit of 1/num_options for Null items.
pub fn score_run(
    records: &[EvalRecord],
    num_options: usize,
    condition_name: &str,
) -> Result<RunMetrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = records.len() as f64;
    let correct = records.iter().filter(|r| r.correct).count() as f64;
    let nulls = records.iter().filter(|r| r.is_null).count() as f64;
    let accuracy = correct / n;
    let null_rate = nulls / n;
    Ok(RunMetrics {
        condition_name: condition_name.to_string(),
        accuracy,
        null_rate,
        null_corrected: null_corrected(accuracy, null_rate, num_options),
        mean_tokens: records.iter().map(|r| r.output_tokens as f64).sum::<f64>() / n,
        n_items: records.len(),
        n_seeds: 1,
    })
}

pub fn null_corrected(accuracy: f64, null_rate: f64, num_options: usize) -> f64 {
    accuracy + null_rate / num_options as f64
}

/// Fractional reduction (base - new) / base.
pub fn token_reduction(base_tokens: f64, new_tokens: f64) -> Result<f64, EvalError> {
    if base_tokens <= 0.0 {
        return Err(EvalError::Domain(base_tokens));
    }
    Ok((base_tokens - new_tokens) / base_tokens)
}

/// Unweighted mean across seeds; null_corrected is the mean of per-seed
/// corrected values (not corrected-of-averages).
pub fn aggregate_seeds(per_seed: &[RunMetrics]) -> Result<RunMetrics, EvalError> {
    let first = per_seed.first().ok_or(EvalError::EmptyRun)?;
    for m in per_seed {
        if m.condition_name != first.condition_name {
            return Err(EvalError::MixedConditions(
                first.condition_name.clone(),
                m.condition_name.clone(),
            ));
        }
    }
    let n = per_seed.len() as f64;
    let mean = |f: fn(&RunMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
    Ok(RunMetrics {
        condition_name: first.condition_name.clone(),
        accuracy: mean(|m| m.accuracy),
        null_rate: mean(|m| m.null_rate),
        null_corrected: mean(|m| m.null_corrected),
        mean_tokens: mean(|m| m.mean_tokens),
        n_items: first.n_items,
        n_seeds: per_seed.iter().map(|m| m.n_seeds).sum(),
    })
}

// ---------------------------------------------------------------------------
// Pareto front

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub condition_name: String,
    pub accuracy: f64,
    pub mean_tokens: f64,
    pub on_front: bool,
}

/// Flag non-dominated points (maximize accuracy, minimize tokens) via a
/// token-sorted sweep. A point is dominated when another has accuracy >=
/// and tokens <= with at least one strict.
pub fn pareto_front(points: &[(String, f64, f64)]) -> Vec<ParetoPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .2
            .partial_cmp(&points[b].2)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut on_front = vec![false; points.len()];
    let mut i = 0;
    let mut best_prev = f64::NEG_INFINITY; // max accuracy among strictly cheaper points
    while i < order.len() {
        // group of equal token cost
        let mut j = i;
        while j < order.len() && points[order[j]].2 == points[order[i]].2 {
            j += 1;
        }
        let group_max = order[i..j]
            .iter()
            .map(|&k| points[k].1)
            .fold(f64::NEG_INFINITY, f64::max);
        for &k in &order[i..j] {
            on_front[k] = points[k].1 > best_prev && points[k].1 == group_max;
        }
        best_prev = best_prev.max(group_max);
        i = j;
    }
    points
        .iter()
        .zip(on_front)
        .map(|((name, acc, tok), f)| ParetoPoint {
            condition_name: name.clone(),
            accuracy: *acc,
            mean_tokens: *tok,
            on_front: f,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Run driver

pub struct EvalRun {
    pub condition_name: String,
    pub policy: SamplingPolicy,
    pub counter: TokenCounter,
    pub system_prompt: Option<String>,
    pub seeds: Vec<u64>,
    pub concurrency: usize,
}

pub fn build_item_prompt(item: &BenchmarkItem, system_prompt: Option<&str>) -> Vec<ChatMessage> {
    let mut options = String::new();
    for (i, opt) in item.options.iter().enumerate() {
        options.push_str(&format!("{}. {}\n", label_for(i), opt));
    }
    let user = format!(
        "Question:\n{}\n\nOptions:\n{}\nAnswer with the letter of the correct option.",
        item.question, options
    );
    let mut messages = Vec::new();
    if let Some(sys) = system_prompt {
        messages.push(ChatMessage::system(sys));
    }
    messages.push(ChatMessage::user(&user));
    messages
}

fn eval_one(
    item: &BenchmarkItem,
    run: &EvalRun,
    client: &dyn CompletionClient,
    seed: u64,
) -> Result<EvalRecord, EvalError> {
    let prompt = build_item_prompt(item, run.system_prompt.as_deref());
    let transcript = decode(&prompt, &run.policy, client, run.counter)?;
    let extracted = extract_answer(&transcript.text, item.options.len());
    let correct = extracted == Some(item.correct_label);
    let output_tokens = transcript.total_tokens;
    Ok(EvalRecord {
        item_id: item.id.clone(),
        extracted_label: extracted,
        correct,
        is_null: extracted.is_none(),
        output_tokens,
        seed,
        subject: item.subject.clone(),
        transcript,
    })
}

/// Evaluate every item for one seed, concurrently under the run's limit.
/// Records come back in item order.
pub fn eval_seed(
    items: &[BenchmarkItem],
    run: &EvalRun,
    client: &dyn CompletionClient,
    seed: u64,
) -> Result<Vec<EvalRecord>, EvalError> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<EvalRecord, String>)>> =
        Mutex::new(Vec::with_capacity(items.len()));
    let workers = run.concurrency.max(1).min(items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = eval_one(&items[i], run, client, seed).map_err(|e| e.to_string());
                results.lock().unwrap().push((i, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    results
        .into_iter()
        .map(|(_, r)| r.map_err(EvalError::BadBenchmark))
        .collect()
}

pub struct EvalOutcome {
    pub per_seed: Vec<(u64, Vec<EvalRecord>)>,
    pub per_seed_metrics: Vec<RunMetrics>,
    pub aggregate: RunMetrics,
}

pub fn run_eval(
    items: &[BenchmarkItem],
    run: &EvalRun,
    client: &dyn CompletionClient,
) -> Result<EvalOutcome, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let num_options = items[0].options.len();
    let mut per_seed = Vec::new();
    let mut per_seed_metrics = Vec::new();
    for &seed in &run.seeds {
        let records = eval_seed(items, run, client, seed)?;
        let metrics = score_run(&records, num_options, &run.condition_name)?;
        per_seed.push((seed, records));
        per_seed_metrics.push(metrics);
    }
    let aggregate = aggregate_seeds(&per_seed_metrics)?;
    Ok(EvalOutcome {
        per_seed,
        per_seed_metrics,
        aggregate,
    })
}

// ---------------------------------------------------------------------------
// Report writers

pub fn write_metrics_csv(metrics: &[RunMetrics], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "condition",
        "accuracy",
        "null_rate",
        "null_corrected",
        "mean_tokens",
        "n_items",
        "n_seeds",
    ])?;
    for m in metrics {
        w.write_record([
            m.condition_name.clone(),
            format!("{:.4}", m.accuracy),
            format!("{:.4}", m.null_rate),
            format!("{:.4}", m.null_corrected),
            format!("{:.1}", m.mean_tokens),
            m.n_items.to_string(),
            m.n_seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pareto_csv(points: &[ParetoPoint], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["condition", "accuracy", "mean_tokens", "on_front"])?;
    for p in points {
        w.write_record([
            p.condition_name.clone(),
            format!("{:.4}", p.accuracy),
            format!("{:.1}", p.mean_tokens),
            p.on_front.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_jsonl(records: &[EvalRecord], path: &Path) -> anyhow::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
