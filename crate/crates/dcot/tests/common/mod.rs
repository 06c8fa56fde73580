//! Shared test helpers: an independent regex-based segmenter used as the
//! oracle for the streaming parser, and random input generators.

use dcot::tagparse::ThinkingMode;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

/// Single-pass regex tokenizer over the full string. Deliberately
/// independent of the streaming parser implementation.
pub fn oracle_segments(s: &str) -> Vec<(ThinkingMode, String, usize)> {
    let re = Regex::new("<TEMP_LOW>|<TEMP_MID>|<TEMP_HIGH>").unwrap();
    let matches: Vec<(usize, usize, ThinkingMode)> = re
        .find_iter(s)
        .map(|m| {
            let mode = match m.as_str() {
                "<TEMP_LOW>" => ThinkingMode::Low,
                "<TEMP_MID>" => ThinkingMode::Mid,
                _ => ThinkingMode::High,
            };
            (m.start(), m.end(), mode)
        })
        .collect();
    let char_at = |byte: usize| s[..byte].chars().count();
    let mut out = Vec::new();
    let lead_end = matches.first().map_or(s.len(), |m| m.0);
    if lead_end > 0 {
        out.push((ThinkingMode::Default, s[..lead_end].to_string(), 0));
    }
    for (i, (start, end, mode)) in matches.iter().enumerate() {
        let text_end = matches.get(i + 1).map_or(s.len(), |m| m.0);
        out.push((*mode, s[*end..text_end].to_string(), char_at(*start)));
    }
    out
}

const FRAGMENTS: &[&str] = &[
    "<TEMP_LOW>",
    "<TEMP_MID>",
    "<TEMP_HIGH>",
    "<think>",
    "</think>",
    "<TEM",
    "P_LOW>",
    "<think",
    "</thi",
    "<TEMP_XL>",
    "<",
    ">",
    "plain words ",
    "a",
    " ",
    "\n",
    "é✓",
    "answer is (C)",
];

pub fn random_tagged_string(rng: &mut ChaCha8Rng, max_fragments: usize) -> String {
    let n = rng.gen_range(0..=max_fragments);
    (0..n)
        .map(|_| FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())])
        .collect()
}

/// Partition `s` into chunks at random char boundaries.
pub fn random_chunking(rng: &mut ChaCha8Rng, s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    if chars.is_empty() {
        return vec![String::new()];
    }
    let mut cuts: Vec<usize> = (1..chars.len())
        .filter(|_| rng.gen_bool(0.3))
        .collect();
    cuts.push(chars.len());
    let mut chunks = Vec::new();
    let mut prev = 0;
    for cut in cuts {
        chunks.push(chars[prev..cut].iter().collect());
        prev = cut;
    }
    chunks
}
