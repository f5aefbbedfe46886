//! Safety screening: text normalization, near-duplicate similarity,
//! identifier-like pattern detection, and corpus deduplication.
//!
//! The dedup here is exact, not approximate: every candidate is scored
//! against the retained set with true character-shingle cosine, using an
//! inverted index over shingles so only notes that share at least one
//! shingle are touched. A single left-to-right pass makes the retained
//! set a pure function of input order and configuration.

use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::placeholder::{self, TokenKind};
use crate::text::char_to_byte_offsets;

/// One named detector rule.
#[derive(Debug, Clone)]
pub struct DetectorPattern {
    pub name: String,
    pub source: String,
    regex: Regex,
}

impl DetectorPattern {
    pub fn new(name: &str, source: &str) -> Result<Self, ScreeningError> {
        let regex = Regex::new(source).map_err(|e| ScreeningError::BadPattern {
            name: name.to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            name: name.to_string(),
            source: source.to_string(),
            regex,
        })
    }

    /// The compiled expression.
    pub fn regex(&self) -> &Regex {
        &self.regex
    }
}

/// Errors from screening configuration.
#[derive(Debug, thiserror::Error)]
pub enum ScreeningError {
    #[error("near_dup_threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("shingle_size must be at least 2, got {0}")]
    BadShingleSize(usize),
    #[error("pattern {name} failed to compile: {message}")]
    BadPattern { name: String, message: String },
}

/// Screening knobs: similarity threshold, shingle width, detector rules.
#[derive(Debug, Clone)]
pub struct ScreeningConfig {
    pub near_dup_threshold: f64,
    pub shingle_size: usize,
    pub patterns: Vec<DetectorPattern>,
}

impl ScreeningConfig {
    pub fn new(near_dup_threshold: f64, shingle_size: usize) -> Result<Self, ScreeningError> {
        if !(near_dup_threshold > 0.0 && near_dup_threshold <= 1.0) {
            return Err(ScreeningError::BadThreshold(near_dup_threshold));
        }
        if shingle_size < 2 {
            return Err(ScreeningError::BadShingleSize(shingle_size));
        }
        Ok(Self {
            near_dup_threshold,
            shingle_size,
            patterns: default_patterns(),
        })
    }
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            near_dup_threshold: 0.90,
            shingle_size: 5,
            patterns: default_patterns(),
        }
    }
}

/// The built-in detector rules. Each is a (name, regex) pair so reports
/// can say which rule fired; the set can be replaced wholesale from
/// configuration.
pub fn default_patterns() -> Vec<DetectorPattern> {
    let specs: &[(&str, &str)] = &[
        // Seven or more consecutive digits: phone numbers, microchip and
        // case identifiers.
        ("digit_run", r"[0-9]{7,}"),
        // Numeric dates in day/month/year or year-month-day order with
        // /, - or . separators.
        (
            "date_numeric",
            r"\b(?:[0-9]{1,2}[/.\-][0-9]{1,2}[/.\-][0-9]{2,4}|[0-9]{4}[/.\-][0-9]{1,2}[/.\-][0-9]{1,2})\b",
        ),
        // A day number with a capitalized month name, optionally a year.
        (
            "date_textual",
            r"\b[0-9]{1,2}(?:st|nd|rd|th)?\s+(?:Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec)[a-z]*\.?(?:\s+[0-9]{2,4})?",
        ),
        // Clock times such as 9:30 or 14:05.
        ("time_of_day", r"\b(?:[01]?[0-9]|2[0-3]):[0-5][0-9]\b"),
        ("email", r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b"),
        (
            "uk_postcode",
            r"\b[A-Z]{1,2}[0-9][0-9A-Z]?\s?[0-9][A-Z]{2}\b",
        ),
        // An honorific followed by a capitalized token.
        (
            "honorific_name",
            r"\b(?:Mr|Mrs|Ms|Dr)\.?\s+[A-Z][A-Za-z'\-]+",
        ),
    ];
    specs
        .iter()
        .map(|(name, source)| {
            DetectorPattern::new(name, source).expect("built-in pattern must compile")
        })
        .collect()
}

/// Canonical form used for hashing and similarity: Unicode NFC, then
/// lowercase, then whitespace runs collapsed to single spaces and the
/// ends trimmed.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let lowered = nfc.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Interns shingle strings to dense ids so vectors can be compared and
/// indexed without rehashing text.
#[derive(Default)]
struct ShingleInterner {
    ids: HashMap<String, u32>,
}

impl ShingleInterner {
    fn intern(&mut self, shingle: &str) -> u32 {
        if let Some(&id) = self.ids.get(shingle) {
            return id;
        }
        let id = self.ids.len() as u32;
        self.ids.insert(shingle.to_string(), id);
        id
    }
}

/// Term-frequency vector over interned shingles, sorted by id.
struct ShingleVector {
    entries: Vec<(u32, u32)>,
    norm: f64,
}

/// Overlapping character shingles of `normalized`, as interned ids.
/// Returns `None` when the text is shorter than the shingle width.
fn shingle_vector(
    normalized: &str,
    shingle_size: usize,
    interner: &mut ShingleInterner,
) -> Option<ShingleVector> {
    let offsets = char_to_byte_offsets(normalized);
    let n_chars = offsets.len() - 1;
    if n_chars < shingle_size {
        return None;
    }
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for i in 0..=n_chars - shingle_size {
        let slice = &normalized[offsets[i]..offsets[i + shingle_size]];
        let id = interner.intern(slice);
        *counts.entry(id).or_insert(0) += 1;
    }
    let mut entries: Vec<(u32, u32)> = counts.into_iter().collect();
    entries.sort_unstable();
    let norm = entries
        .iter()
        .map(|&(_, c)| (c as f64) * (c as f64))
        .sum::<f64>()
        .sqrt();
    Some(ShingleVector { entries, norm })
}

fn cosine(a: &ShingleVector, b: &ShingleVector) -> f64 {
    let mut dot = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.entries.len() && j < b.entries.len() {
        match a.entries[i].0.cmp(&b.entries[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += (a.entries[i].1 as f64) * (b.entries[j].1 as f64);
                i += 1;
                j += 1;
            }
        }
    }
    dot / (a.norm * b.norm)
}

/// Cosine similarity between the shingle term-frequency vectors of the
/// two texts after normalization.
///
/// When either normalized text is shorter than the shingle width the
/// vectors are undefined, so the result degenerates to string equality:
/// 1.0 if the normalized texts match, else 0.0.
pub fn similarity(a: &str, b: &str, cfg: &ScreeningConfig) -> f64 {
    let na = normalize(a);
    let nb = normalize(b);
    let mut interner = ShingleInterner::default();
    let va = shingle_vector(&na, cfg.shingle_size, &mut interner);
    let vb = shingle_vector(&nb, cfg.shingle_size, &mut interner);
    match (va, vb) {
        (Some(va), Some(vb)) => cosine(&va, &vb),
        _ => {
            if na == nb {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// One detector hit, in code-point offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierFinding {
    pub pattern: String,
    pub start: usize,
    pub end: usize,
}

/// Run every detector rule over the text and report hits, skipping any
/// hit that falls entirely inside a well-formed placeholder token (the
/// digits in `__ID1__` are structure, not content).
pub fn detect_identifier_like(text: &str, cfg: &ScreeningConfig) -> Vec<IdentifierFinding> {
    let offsets = char_to_byte_offsets(text);
    let byte_to_char = |byte: usize| -> usize {
        offsets
            .binary_search(&byte)
            .expect("regex match boundaries lie on character boundaries")
    };
    let shields: Vec<(usize, usize)> = placeholder::scan(text)
        .into_iter()
        .filter(|t| matches!(t.kind, TokenKind::WellFormed { .. }))
        .map(|t| (t.start, t.end))
        .collect();
    let mut findings = Vec::new();
    for pattern in &cfg.patterns {
        for m in pattern.regex.find_iter(text) {
            let start = byte_to_char(m.start());
            let end = byte_to_char(m.end());
            let shielded = shields.iter().any(|&(s, e)| s <= start && end <= e);
            if !shielded {
                findings.push(IdentifierFinding {
                    pattern: pattern.name.clone(),
                    start,
                    end,
                });
            }
        }
    }
    findings.sort_by_key(|f| (f.start, f.end));
    findings
}

/// Why a note was dropped during deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    /// Normalized text identical to an already-retained note.
    ExactDup { of: String },
    /// Similarity to an already-retained note at or above threshold.
    NearDup { of: String, similarity: f64 },
    /// Exact or near match against a seed note.
    SeedDup { of: String, similarity: f64 },
}

/// Outcome of one dedup pass: ids kept (in input order) and ids dropped
/// with the rule that removed them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupReport {
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedNote>,
}

/// One dropped id with its reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedNote {
    pub id: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

/// Inverted index from shingle id to (note ordinal, count) postings,
/// plus per-note norms, for exact cosine against a growing set.
#[derive(Default)]
struct CosineIndex {
    postings: HashMap<u32, Vec<(u32, u32)>>,
    norms: Vec<f64>,
    ids: Vec<String>,
    short_texts: Vec<(String, String)>,
    // Scratch for accumulation, epoch-stamped to avoid clearing.
    acc: Vec<f64>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl CosineIndex {
    fn insert(&mut self, id: &str, vector: &ShingleVector) {
        let ordinal = self.norms.len() as u32;
        for &(shingle, count) in &vector.entries {
            self.postings
                .entry(shingle)
                .or_default()
                .push((ordinal, count));
        }
        self.norms.push(vector.norm);
        self.ids.push(id.to_string());
        self.acc.push(0.0);
        self.stamp.push(0);
    }

    fn insert_short(&mut self, id: &str, normalized: &str) {
        self.short_texts
            .push((id.to_string(), normalized.to_string()));
    }

    /// Lowest-ordinal indexed note with cosine >= threshold, if any.
    fn first_match(&mut self, vector: &ShingleVector, threshold: f64) -> Option<(String, f64)> {
        self.epoch += 1;
        let mut touched: Vec<u32> = Vec::new();
        for &(shingle, count) in &vector.entries {
            let Some(postings) = self.postings.get(&shingle) else {
                continue;
            };
            for &(ordinal, other_count) in postings {
                let slot = ordinal as usize;
                if self.stamp[slot] != self.epoch {
                    self.stamp[slot] = self.epoch;
                    self.acc[slot] = 0.0;
                    touched.push(ordinal);
                }
                self.acc[slot] += (count as f64) * (other_count as f64);
            }
        }
        touched.sort_unstable();
        for ordinal in touched {
            let slot = ordinal as usize;
            let sim = self.acc[slot] / (vector.norm * self.norms[slot]);
            if sim >= threshold {
                return Some((self.ids[slot].clone(), sim));
            }
        }
        None
    }

    /// Short texts never share shingles, so their only possible match is
    /// normalized equality (similarity 1.0).
    fn first_short_match(&self, normalized: &str) -> Option<String> {
        self.short_texts
            .iter()
            .find(|(_, text)| text == normalized)
            .map(|(id, _)| id.clone())
    }
}

/// Deduplicate `(id, text)` notes in a single left-to-right pass.
///
/// Each note is checked, in order, against (a) exact normalized-hash
/// match with the retained set, (b) near-duplicate similarity with the
/// retained set, then (c) exact or near match with the seed notes; the
/// first rule that fires names the drop reason. Notes that survive all
/// three join the retained set immediately and screen later notes. With
/// the same input order and configuration the outcome is identical
/// run-to-run.
pub fn dedup(
    notes: &[(String, String)],
    seeds: &[(String, String)],
    cfg: &ScreeningConfig,
) -> DedupReport {
    let threshold = cfg.near_dup_threshold;
    let mut interner = ShingleInterner::default();

    let mut seed_hashes: HashMap<String, String> = HashMap::new();
    let mut seed_index = CosineIndex::default();
    for (id, text) in seeds {
        let norm = normalize(text);
        match shingle_vector(&norm, cfg.shingle_size, &mut interner) {
            Some(vector) => seed_index.insert(id, &vector),
            None => seed_index.insert_short(id, &norm),
        }
        seed_hashes.entry(norm).or_insert_with(|| id.clone());
    }

    let mut retained_hashes: HashMap<String, String> = HashMap::new();
    let mut retained_index = CosineIndex::default();
    let mut report = DedupReport {
        retained: Vec::new(),
        dropped: Vec::new(),
    };

    for (id, text) in notes {
        let norm = normalize(text);
        let vector = shingle_vector(&norm, cfg.shingle_size, &mut interner);

        let reason = if let Some(prev) = retained_hashes.get(&norm) {
            Some(DropReason::ExactDup { of: prev.clone() })
        } else if let Some((of, similarity)) = vector
            .as_ref()
            .and_then(|v| retained_index.first_match(v, threshold))
        {
            Some(DropReason::NearDup { of, similarity })
        } else if let Some(seed) = seed_hashes.get(&norm) {
            Some(DropReason::SeedDup {
                of: seed.clone(),
                similarity: 1.0,
            })
        } else if let Some((of, similarity)) = match vector.as_ref() {
            Some(v) => seed_index.first_match(v, threshold),
            None => seed_index
                .first_short_match(&norm)
                .map(|of| (of, 1.0)),
        } {
            Some(DropReason::SeedDup { of, similarity })
        } else {
            None
        };

        match reason {
            Some(reason) => report.dropped.push(DroppedNote {
                id: id.clone(),
                reason,
            }),
            None => {
                match vector {
                    Some(vector) => retained_index.insert(id, &vector),
                    None => retained_index.insert_short(id, &norm),
                }
                retained_hashes.insert(norm, id.clone());
                report.retained.push(id.clone());
            }
        }
    }
    report
}
