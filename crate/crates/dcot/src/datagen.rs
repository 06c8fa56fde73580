//! Preference-pair dataset construction: scenario/template/rejection
//! matrix enumeration, teacher prompting, six-field schema validation,
//! and packing into chosen/rejected training records.

use crate::decode::client::{ChatMessage, CompletionClient, StreamItem};
use crate::tagparse;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("matrix axis '{0}' is empty")]
    EmptyAxis(&'static str),
    #[error("requested {requested} samples but only {available} combinations exist")]
    NTooLarge { requested: usize, available: usize },
    #[error("no few-shot exemplars configured")]
    NoExemplars,
    #[error("teacher output could not be parsed: {0}")]
    ParseError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectionAxis {
    TagUsage,
    ContentQuality,
    SafetyJudgment,
}

impl RejectionAxis {
    pub fn description(self) -> &'static str {
        match self {
            RejectionAxis::TagUsage => {
                "tag usage failure: the rejected response misuses or omits control tags"
            }
            RejectionAxis::ContentQuality => {
                "content quality failure: structurally well-formed but contains a domain-specific error"
            }
            RejectionAxis::SafetyJudgment => {
                "safety or judgment failure: understates or violates legal/physical risk"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCategory {
    pub name: String,
    pub axis: RejectionAxis,
}

/// The full generation matrix. Ships as an editable TOML file; entries not
/// named in the source material are placeholders marked "(reconstructed)".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMatrix {
    pub domains: Vec<String>,
    pub scenarios: Vec<Scenario>,
    pub templates: Vec<String>,
    pub rejection_categories: Vec<RejectionCategory>,
}

pub const DOMAINS: [&str; 7] = [
    "Legacy IT Operations",
    "Corporate Politics",
    "DIY Engineering",
    "Supply Chain Logistics",
    "Regulatory Compliance",
    "Cybersecurity Incident Response",
    "Event Crisis Management",
];

pub const TEMPLATES: [&str; 5] = [
    "emergency response",
    "procedure drafting",
    "crisis management",
    "risk analysis",
    "constraint optimization",
];

const NAMED_CATEGORIES: [(&str, RejectionAxis); 8] = [
    ("Complete Token Absence", RejectionAxis::TagUsage),
    ("Token Omission", RejectionAxis::TagUsage),
    ("Premature Creativity", RejectionAxis::TagUsage),
    ("Architectural Naivety", RejectionAxis::ContentQuality),
    ("Latency Blindness", RejectionAxis::ContentQuality),
    ("Compliance Hallucination", RejectionAxis::ContentQuality),
    ("Safety Violation", RejectionAxis::SafetyJudgment),
    ("Dangerous Minimization", RejectionAxis::SafetyJudgment),
];

impl ScenarioMatrix {
    /// 7 domains x 17 scenarios each = 119 scenarios, 5 templates,
    /// 31 rejection categories (8 named, 23 reconstructed placeholders).
    pub fn default_matrix() -> Self {
        let domains: Vec<String> = DOMAINS.iter().map(|s| s.to_string()).collect();
        let mut scenarios = Vec::with_capacity(119);
        for domain in &domains {
            for i in 1..=17 {
                scenarios.push(Scenario {
                    name: format!("{domain} scenario {i:02} (reconstructed)"),
                    domain: domain.clone(),
                });
            }
        }
        let mut rejection_categories: Vec<RejectionCategory> = NAMED_CATEGORIES
            .iter()
            .map(|(name, axis)| RejectionCategory {
                name: name.to_string(),
                axis: *axis,
            })
            .collect();
        let fill = [
            (RejectionAxis::TagUsage, "Tag Usage Failure", 7),
            (RejectionAxis::ContentQuality, "Content Quality Failure", 8),
            (RejectionAxis::SafetyJudgment, "Safety Judgment Failure", 8),
        ];
        for (axis, label, count) in fill {
            for i in 1..=count {
                rejection_categories.push(RejectionCategory {
                    name: format!("{label} {i:02} (reconstructed)"),
                    axis,
                });
            }
        }
        Self {
            domains,
            scenarios,
            templates: TEMPLATES.iter().map(|s| s.to_string()).collect(),
            rejection_categories,
        }
    }

    pub fn read(path: &Path) -> Result<Self, DatagenError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), DatagenError> {
        let text = toml::to_string_pretty(self).expect("matrix serializes");
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// One cell of the generation matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Combo {
    pub scenario: Scenario,
    pub template: String,
    pub category: RejectionCategory,
}

/// Full Cartesian product in (scenario, template, category) order.
pub fn enumerate_matrix(matrix: &ScenarioMatrix) -> Result<Vec<Combo>, DatagenError> {
    if matrix.scenarios.is_empty() {
        return Err(DatagenError::EmptyAxis("scenarios"));
    }
    if matrix.templates.is_empty() {
        return Err(DatagenError::EmptyAxis("templates"));
    }
    if matrix.rejection_categories.is_empty() {
        return Err(DatagenError::EmptyAxis("rejection_categories"));
    }
    let mut combos = Vec::with_capacity(
        matrix.scenarios.len() * matrix.templates.len() * matrix.rejection_categories.len(),
    );
    for scenario in &matrix.scenarios {
        for template in &matrix.templates {
            for category in &matrix.rejection_categories {
                combos.push(Combo {
                    scenario: scenario.clone(),
                    template: template.clone(),
                    category: category.clone(),
                });
            }
        }
    }
    Ok(combos)
}

/// `n` distinct combinations, uniform without replacement, reproducible
/// under a fixed seed.
pub fn sample_combinations(
    combos: &[Combo],
    n: usize,
    rng_seed: u64,
) -> Result<Vec<Combo>, DatagenError> {
    if n > combos.len() {
        return Err(DatagenError::NTooLarge {
            requested: n,
            available: combos.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picked = rand::seq::index::sample(&mut rng, combos.len(), n);
    Ok(picked.iter().map(|i| combos[i].clone()).collect())
}

/// A fully worked six-field example embedded in the system prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exemplar {
    pub user_prompt: String,
    pub thought_chosen: String,
    pub chosen_response: String,
    pub thought_rejected: String,
    pub rejected_response: String,
    pub reasoning: String,
}

pub const SAMPLE_FIELDS: [&str; 6] = [
    "user_prompt",
    "thought_chosen",
    "chosen_response",
    "thought_rejected",
    "rejected_response",
    "reasoning",
];

const TAG_DEFINITIONS: &str = "\
Control tags mark the thinking mode of each response segment:
  <TEMP_LOW>  fact-checking, listing prerequisites and constraints
  <TEMP_MID>  normal response, algorithmic processing, calculation
  <TEMP_HIGH> creative solutions, multi-perspective viewpoints
A response may begin without any tag; each tag prefixes the segment it governs.";

/// Build the teacher chat request for one combo.
pub fn build_teacher_request(
    combo: &Combo,
    fewshot: &[Exemplar],
) -> Result<Vec<ChatMessage>, DatagenError> {
    if fewshot.is_empty() {
        return Err(DatagenError::NoExemplars);
    }
    let mut system = String::new();
    system.push_str("You generate preference-pair training samples for structured reasoning.\n\n");
    system.push_str(TAG_DEFINITIONS);
    system.push_str("\n\nReturn a single JSON object with exactly these fields, all non-empty strings:\n");
    for f in SAMPLE_FIELDS {
        system.push_str(&format!("  - {f}\n"));
    }
    system.push_str(
        "\nRules: chosen_response must use at least one control tag. thought_chosen is a plan \
         that names which control tags to use, where, and why. thought_rejected simulates a \
         competent-but-misguided persona leading to the targeted failure. reasoning is a \
         one-sentence summary of the critical flaw (quality assurance only; not trained on).\n",
    );
    system.push_str("\nWorked examples:\n");
    for (i, ex) in fewshot.iter().enumerate() {
        system.push_str(&format!(
            "Example {}:\n{}\n",
            i + 1,
            serde_json::to_string_pretty(ex).expect("exemplar serializes")
        ));
    }

    let mut user = format!(
        "Scenario: {}\nDomain: {}\nInstruction template: {}\nTargeted rejection category: {} ({})\n",
        combo.scenario.name,
        combo.scenario.domain,
        combo.template,
        combo.category.name,
        combo.category.axis.description(),
    );
    if combo.category.name == "Complete Token Absence" {
        user.push_str("The rejected response must use no control tags at all.\n");
    }
    user.push_str("Generate the JSON object now.");
    Ok(vec![
        ChatMessage::system(&system),
        ChatMessage::user(&user),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scenario_id: String,
    pub template_id: String,
    pub rejection_category: String,
    pub teacher_model_id: String,
    pub generation_timestamp: String,
}

/// The six-field training record plus generation metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub user_prompt: String,
    pub thought_chosen: String,
    pub chosen_response: String,
    pub thought_rejected: String,
    pub rejected_response: String,
    pub reasoning: String,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingField(String),
    EmptyField(String),
    /// chosen_response contains no control tag
    NoControlTagInChosen,
    /// thought_chosen names no control tag
    NoTagMentionInThought,
    /// the rejected response breaks the targeted category's contract
    CategoryContract(String),
}

fn mentions_tag_name(text: &str) -> bool {
    ["TEMP_LOW", "TEMP_MID", "TEMP_HIGH"]
        .iter()
        .any(|t| text.contains(t))
}

/// Validate raw teacher output against the six-field schema and the
/// targeted category's mechanical contract.
pub fn validate_sample(
    raw: &serde_json::Value,
    category: &RejectionCategory,
    meta: SampleMeta,
) -> Result<Result<PreferencePair, Vec<Violation>>, DatagenError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| DatagenError::ParseError("teacher output is not a JSON object".into()))?;
    let mut violations = Vec::new();
    let mut fields = std::collections::HashMap::new();
    for name in SAMPLE_FIELDS {
        match obj.get(name) {
            None => violations.push(Violation::MissingField(name.to_string())),
            Some(v) => match v.as_str() {
                None => violations.push(Violation::MissingField(name.to_string())),
                Some(s) if s.trim().is_empty() => {
                    violations.push(Violation::EmptyField(name.to_string()))
                }
                Some(s) => {
                    fields.insert(name, s.to_string());
                }
            },
        }
    }
    if let Some(chosen) = fields.get("chosen_response") {
        if !tagparse::contains_control_tag(chosen) {
            violations.push(Violation::NoControlTagInChosen);
        }
    }
    if let Some(thought) = fields.get("thought_chosen") {
        if !mentions_tag_name(thought) {
            violations.push(Violation::NoTagMentionInThought);
        }
    }
    if category.name == "Complete Token Absence" {
        if let Some(rejected) = fields.get("rejected_response") {
            // the category demands a tag-free rejected response
            let segs = tagparse::segment(rejected);
            if segs.iter().any(|s| s.mode != tagparse::ThinkingMode::Default) {
                violations.push(Violation::CategoryContract(format!(
                    "category '{}' requires a tag-free rejected response",
                    category.name
                )));
            }
        }
    }
    if !violations.is_empty() {
        return Ok(Err(violations));
    }
    let mut take = |name: &str| fields.remove(name).expect("validated present");
    Ok(Ok(PreferencePair {
        user_prompt: take("user_prompt"),
        thought_chosen: take("thought_chosen"),
        chosen_response: take("chosen_response"),
        thought_rejected: take("thought_rejected"),
        rejected_response: take("rejected_response"),
        reasoning: take("reasoning"),
        meta,
    }))
}

/// ORPO-ready record: thought inside a think block, then the response.
/// `reasoning` is excluded from the packed training text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedOrpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

const THINK_SEPARATOR: &str = "\n";

fn pack_side(thought: &str, response: &str) -> String {
    format!("<think>{thought}</think>{THINK_SEPARATOR}{response}")
}

fn unpack_side(packed: &str) -> Option<(String, String)> {
    let inner = packed.strip_prefix("<think>")?;
    let close = inner.find("</think>")?;
    let thought = &inner[..close];
    let rest = inner[close + "</think>".len()..].strip_prefix(THINK_SEPARATOR)?;
    Some((thought.to_string(), rest.to_string()))
}

pub fn pack(pair: &PreferencePair) -> PackedOrpoRecord {
    PackedOrpoRecord {
        prompt: pair.user_prompt.clone(),
        chosen: pack_side(&pair.thought_chosen, &pair.chosen_response),
        rejected: pack_side(&pair.thought_rejected, &pair.rejected_response),
    }
}

/// Recover (thought_chosen, chosen_response, thought_rejected,
/// rejected_response) from a packed record.
pub fn unpack(record: &PackedOrpoRecord) -> Option<(String, String, String, String)> {
    let (tc, cr) = unpack_side(&record.chosen)?;
    let (tr, rr) = unpack_side(&record.rejected)?;
    Some((tc, cr, tr, rr))
}

// ---------------------------------------------------------------------------
// Generation driver

pub struct GenerationOptions {
    pub teacher_model_id: String,
    pub concurrency: usize,
    /// One repair retry when the teacher's output fails structure parsing.
    pub repair_retries: u32,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            teacher_model_id: "qwen3-235b-instruct".into(),
            concurrency: 4,
            repair_retries: 1,
        }
    }
}

pub struct GenerationReport {
    pub pairs: Vec<PreferencePair>,
    pub dropped: Vec<(Combo, String)>,
}

fn collect_completion(
    client: &dyn CompletionClient,
    messages: &[ChatMessage],
) -> Result<String, String> {
    let req = crate::decode::client::CompletionRequest {
        messages: messages.to_vec(),
        temperature: 0.7,
        top_p: 0.95,
        top_k: 20,
        max_tokens: 4096,
        continue_assistant: false,
    };
    let stream = client.stream_chat(&req).map_err(|e| e.to_string())?;
    let mut out = String::new();
    for item in stream {
        match item.map_err(|e| e.to_string())? {
            StreamItem::Delta(d) => out.push_str(&d),
            StreamItem::Done { .. } => break,
        }
    }
    Ok(out)
}

/// Pull the first top-level JSON object out of possibly chatty output.
fn extract_json_object(text: &str) -> Option<serde_json::Value> {
    if let Ok(v) = serde_json::from_str(text) {
        return Some(v);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    serde_json::from_str(&text[start..=end]).ok()
}

fn generate_one(
    combo: &Combo,
    client: &dyn CompletionClient,
    exemplars: &[Exemplar],
    opts: &GenerationOptions,
) -> Result<Result<PreferencePair, Vec<Violation>>, String> {
    let mut messages = build_teacher_request(combo, exemplars).map_err(|e| e.to_string())?;
    let mut attempts = opts.repair_retries + 1;
    loop {
        let text = collect_completion(client, &messages)?;
        match extract_json_object(&text) {
            Some(value) => {
                let meta = SampleMeta {
                    scenario_id: combo.scenario.name.clone(),
                    template_id: combo.template.clone(),
                    rejection_category: combo.category.name.clone(),
                    teacher_model_id: opts.teacher_model_id.clone(),
                    generation_timestamp: chrono::Utc::now().to_rfc3339(),
                };
                return validate_sample(&value, &combo.category, meta).map_err(|e| e.to_string());
            }
            None => {
                attempts -= 1;
                if attempts == 0 {
                    return Err("teacher output was not valid JSON after repair retry".into());
                }
                messages.push(ChatMessage::assistant(&text));
                messages.push(ChatMessage::user(
                    "That output was not a valid JSON object. Return only the JSON object with \
                     the six required fields, no prose.",
                ));
            }
        }
    }
}

/// Generate pairs for every combo, concurrently under `opts.concurrency`.
/// Samples whose output fails validation or parsing are dropped and listed.
pub fn generate_pairs(
    combos: &[Combo],
    client: &dyn CompletionClient,
    exemplars: &[Exemplar],
    opts: &GenerationOptions,
) -> GenerationReport {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<PreferencePair, String>)>> =
        Mutex::new(Vec::with_capacity(combos.len()));
    let workers = opts.concurrency.max(1).min(combos.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= combos.len() {
                    break;
                }
                let outcome = match generate_one(&combos[i], client, exemplars, opts) {
                    Ok(Ok(pair)) => Ok(pair),
                    Ok(Err(violations)) => Err(format!("validation failed: {violations:?}")),
                    Err(e) => Err(e),
                };
                results.lock().unwrap().push((i, outcome));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for (i, outcome) in results {
        match outcome {
            Ok(pair) => pairs.push(pair),
            Err(reason) => dropped.push((combos[i].clone(), reason)),
        }
    }
    GenerationReport { pairs, dropped }
}

/// UTF-8 JSON-Lines, one pair per line, field names as in the schema.
pub fn write_pairs_jsonl(pairs: &[PreferencePair], path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair).expect("pair serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_pairs_jsonl(path: &Path) -> anyhow::Result<Vec<PreferencePair>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
