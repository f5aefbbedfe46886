//! Placeholder templates: masking real notes, validating candidate
//! templates, and deterministic template filling with exact offsets.
//!
//! The placeholder allowlist is the contract between every stage here.
//! Specific roles (`VET`, `CLINIC`, ...) appear in authored templates;
//! generic roles (`PERSON`, `DATE_GENERIC`, ...) are what [`mask_note`]
//! emits, one per label, so a masked note never reveals which kind of
//! person or organisation was removed.
//!
//! Filling is a single left-to-right pass that records each insertion's
//! span as it happens, which makes the output annotations correct by
//! construction instead of by post-hoc matching.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Note, Provenance, Span};
use crate::placeholder::{self, TokenKind};
use crate::rng::SplitMix64;
use crate::screening::{detect_identifier_like, ScreeningConfig};
use crate::text::word_count;

/// The full placeholder role allowlist with each role's label.
pub fn allowlist() -> &'static [(&'static str, Label)] {
    &[
        ("VET", Label::PER),
        ("OWNER", Label::PER),
        ("PATIENT", Label::PER),
        ("PERSON", Label::PER),
        ("CLINIC", Label::ORG),
        ("LAB", Label::ORG),
        ("ORGANISATION", Label::ORG),
        ("ORG", Label::ORG),
        ("CITY", Label::LOC),
        ("ADDRESS", Label::LOC),
        ("LOC", Label::LOC),
        ("DATE", Label::TIME),
        ("TIME", Label::TIME),
        ("DATE_GENERIC", Label::TIME),
        ("ID", Label::MISC),
        ("DEVICE", Label::MISC),
        ("MISC_GENERIC", Label::MISC),
    ]
}

/// Label for an allowlisted role name, or `None` if the role is unknown.
pub fn role_label(role: &str) -> Option<Label> {
    allowlist()
        .iter()
        .find(|(name, _)| *name == role)
        .map(|&(_, label)| label)
}

/// The generic role used when masking a span of the given label.
pub fn generic_role(label: Label) -> &'static str {
    match label {
        Label::PER => "PERSON",
        Label::ORG => "ORG",
        Label::LOC => "LOC",
        Label::TIME => "DATE_GENERIC",
        Label::MISC => "MISC_GENERIC",
    }
}

/// Length bounds a candidate template must respect relative to its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConstraints {
    pub length_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_length: Option<usize>,
}

impl Default for TemplateConstraints {
    fn default() -> Self {
        Self {
            length_tolerance: 0.30,
            seed_length: None,
        }
    }
}

/// A text with zero or more placeholder tokens, plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_id: Option<String>,
    #[serde(default = "TemplateConstraints::default")]
    pub constraints: TemplateConstraints,
    /// True when masking had to reuse an index because the source note
    /// repeated an identifier. Such templates break the unique-token
    /// rule and are excluded from the fillable pool.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat_bearing: bool,
}

/// One resolved placeholder occurrence inside a template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceholderBinding {
    pub token: String,
    pub role: String,
    pub index: u32,
    pub label: Label,
    pub start: usize,
    pub end: usize,
}

impl Template {
    /// All well-formed, allowlisted placeholder occurrences, in order.
    /// Malformed or unknown tokens are invisible here; validation is
    /// where they are rejected.
    pub fn placeholders(&self) -> Vec<PlaceholderBinding> {
        placeholder::scan(&self.text)
            .into_iter()
            .filter_map(|t| match t.kind {
                TokenKind::WellFormed { role, index } => role_label(&role).map(|label| {
                    PlaceholderBinding {
                        token: t.text,
                        role,
                        index,
                        label,
                        start: t.start,
                        end: t.end,
                    }
                }),
                TokenKind::Malformed => None,
            })
            .collect()
    }
}

/// Errors from template validation and filling.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TemplateError {
    #[error("placeholder {0} is not in the allowlist")]
    UnknownPlaceholder(String),
    #[error("token {0} does not match the placeholder grammar")]
    MalformedPlaceholder(String),
    #[error("placeholder {0} appears more than once")]
    DuplicatePlaceholder(String),
    #[error("identifier-like content {text:?} matched pattern {pattern}")]
    IdentifierLikeContent { text: String, pattern: String },
    #[error("template is {actual} words, outside [{min:.1}, {max:.1}]")]
    LengthOutOfRange { actual: usize, min: f64, max: f64 },
    #[error("no pool or generator for role {0}")]
    MissingRole(String),
    #[error("pool for role {0} ran out of distinct surface forms")]
    PoolExhausted(String),
    #[error("pool role {0} is not in the allowlist")]
    UnknownRole(String),
    #[error("pool entry {entry:?} for role {role} is empty or placeholder-like")]
    BadPoolEntry { role: String, entry: String },
    #[error("generator for role {0} has no usable patterns")]
    BadGenerator(String),
}

/// Replace every span of a valid note with a generic-role placeholder.
///
/// Numbering is per label in order of first appearance; a repeated
/// (label, entity) pair reuses its first index, and the template is then
/// flagged repeat-bearing because its tokens are no longer unique.
pub fn mask_note(note: &Note) -> Template {
    let chars: Vec<char> = note.sentence.chars().collect();
    let mut spans = note.spans.clone();
    spans.sort_by_key(|s| (s.start, s.end));

    let mut out = String::new();
    let mut cursor = 0usize;
    let mut counters: HashMap<Label, u32> = HashMap::new();
    let mut assigned: HashMap<(Label, String), u32> = HashMap::new();
    let mut repeat_bearing = false;

    for span in &spans {
        out.extend(&chars[cursor..span.start]);
        let key = (span.label, span.entity.clone());
        let index = match assigned.get(&key) {
            Some(&index) => {
                repeat_bearing = true;
                index
            }
            None => {
                let counter = counters.entry(span.label).or_insert(0);
                *counter += 1;
                assigned.insert(key, *counter);
                *counter
            }
        };
        out.push_str(&format!("__{}{}__", generic_role(span.label), index));
        cursor = span.end;
    }
    out.extend(&chars[cursor..]);

    Template {
        text: out,
        seed_id: Some(note.id.clone()),
        constraints: TemplateConstraints {
            length_tolerance: TemplateConstraints::default().length_tolerance,
            seed_length: Some(word_count(&note.sentence)),
        },
        repeat_bearing: false,
    }
    .with_repeat_flag(repeat_bearing)
}

impl Template {
    fn with_repeat_flag(mut self, repeat_bearing: bool) -> Self {
        self.repeat_bearing = repeat_bearing;
        self
    }
}

/// Word count where each well-formed placeholder counts as exactly one
/// word, even when tokens are adjacent to each other or glued to text.
fn effective_word_count(text: &str) -> usize {
    let tokens: Vec<_> = placeholder::scan(text)
        .into_iter()
        .filter(|t| matches!(t.kind, TokenKind::WellFormed { .. }))
        .collect();
    let chars: Vec<char> = text.chars().collect();
    let mut residual = String::new();
    let mut cursor = 0usize;
    for t in &tokens {
        residual.extend(&chars[cursor..t.start]);
        residual.push(' ');
        cursor = t.end;
    }
    residual.extend(&chars[cursor..]);
    word_count(&residual) + tokens.len()
}

/// Check a candidate template text against the grammar, the allowlist,
/// the identifier-like detector, and the length constraint, in that
/// order. The first violation is returned.
pub fn validate_template(
    text: &str,
    constraints: &TemplateConstraints,
    screening: &ScreeningConfig,
) -> Result<Template, TemplateError> {
    let mut seen: HashSet<String> = HashSet::new();
    for token in placeholder::scan(text) {
        match token.kind {
            TokenKind::Malformed => {
                return Err(TemplateError::MalformedPlaceholder(token.text));
            }
            TokenKind::WellFormed { ref role, .. } => {
                if role_label(role).is_none() {
                    return Err(TemplateError::UnknownPlaceholder(token.text));
                }
                if !seen.insert(token.text.clone()) {
                    return Err(TemplateError::DuplicatePlaceholder(token.text));
                }
            }
        }
    }

    // The detector already treats well-formed tokens as shielded
    // regions, so any finding here is genuine residual content.
    if let Some(finding) = detect_identifier_like(text, screening).into_iter().next() {
        let chars: Vec<char> = text.chars().collect();
        let matched: String = chars[finding.start..finding.end].iter().collect();
        return Err(TemplateError::IdentifierLikeContent {
            text: matched,
            pattern: finding.pattern,
        });
    }

    if let Some(seed_length) = constraints.seed_length {
        let actual = effective_word_count(text);
        let min = (1.0 - constraints.length_tolerance) * seed_length as f64;
        let max = (1.0 + constraints.length_tolerance) * seed_length as f64;
        if (actual as f64) < min || (actual as f64) > max {
            return Err(TemplateError::LengthOutOfRange { actual, min, max });
        }
    }

    Ok(Template {
        text: text.to_string(),
        seed_id: None,
        constraints: constraints.clone(),
        repeat_bearing: false,
    })
}

/// Surface generator: a set of format patterns, one of which is chosen
/// per draw and expanded field by field.
///
/// Pattern fields: `YYYY` (2015-2025), `YY` (10-25), `Month`/`Mon`
/// (month names), `DD` (01-28), `HH` (00-23), `MM` (month 01-12, or
/// minutes 00-59 directly after an `HH` separator), `N` (digit), `A`
/// (uppercase letter). Everything else is literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub patterns: Vec<String>,
}

const MONTHS_ABBR: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];
const MONTHS_FULL: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

fn expand_pattern(pattern: &str, rng: &mut SplitMix64) -> String {
    let chars: Vec<char> = pattern.chars().collect();
    let mut out = String::new();
    let mut i = 0usize;
    // Tracks whether the last expanded field was HH with at most one
    // literal separator since, which flips MM from month to minutes.
    let mut after_hours = false;
    let mut literals_since = 0usize;
    while i < chars.len() {
        let rest: String = chars[i..].iter().collect();
        let mut matched_field = true;
        if rest.starts_with("YYYY") {
            out.push_str(&(2015 + rng.next_below(11)).to_string());
            i += 4;
            after_hours = false;
        } else if rest.starts_with("Month") {
            out.push_str(MONTHS_FULL[rng.next_below(12) as usize]);
            i += 5;
            after_hours = false;
        } else if rest.starts_with("Mon") {
            out.push_str(MONTHS_ABBR[rng.next_below(12) as usize]);
            i += 3;
            after_hours = false;
        } else if rest.starts_with("YY") {
            out.push_str(&(10 + rng.next_below(16)).to_string());
            i += 2;
            after_hours = false;
        } else if rest.starts_with("DD") {
            out.push_str(&format!("{:02}", 1 + rng.next_below(28)));
            i += 2;
            after_hours = false;
        } else if rest.starts_with("HH") {
            out.push_str(&format!("{:02}", rng.next_below(24)));
            i += 2;
            after_hours = true;
            literals_since = 0;
        } else if rest.starts_with("MM") {
            if after_hours && literals_since <= 1 {
                out.push_str(&format!("{:02}", rng.next_below(60)));
            } else {
                out.push_str(&format!("{:02}", 1 + rng.next_below(12)));
            }
            i += 2;
            after_hours = false;
        } else if chars[i] == 'N' {
            out.push_str(&rng.next_below(10).to_string());
            i += 1;
        } else if chars[i] == 'A' {
            out.push((b'A' + rng.next_below(26) as u8) as char);
            i += 1;
        } else {
            matched_field = false;
        }
        if !matched_field {
            out.push(chars[i]);
            i += 1;
            if after_hours {
                literals_since += 1;
            }
        }
    }
    out
}

/// Where a role's surface forms come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Surfaces(Vec<String>),
    Generator(GeneratorSpec),
}

/// Role-keyed surface pools and generators.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EntityPool {
    sources: BTreeMap<String, PoolSource>,
}

impl EntityPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_surfaces(&mut self, role: &str, surfaces: Vec<String>) {
        self.sources
            .insert(role.to_string(), PoolSource::Surfaces(surfaces));
    }

    pub fn insert_generator(&mut self, role: &str, spec: GeneratorSpec) {
        self.sources
            .insert(role.to_string(), PoolSource::Generator(spec));
    }

    pub fn get(&self, role: &str) -> Option<&PoolSource> {
        self.sources.get(role)
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.sources.keys().map(String::as_str)
    }

    /// Every surface form listed for any role (generators excluded).
    pub fn all_surfaces(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sources.iter().flat_map(|(role, source)| {
            let surfaces: &[String] = match source {
                PoolSource::Surfaces(s) => s,
                PoolSource::Generator(_) => &[],
            };
            surfaces.iter().map(move |s| (role.as_str(), s.as_str()))
        })
    }

    /// Structural checks: roles allowlisted, pools non-empty, entries
    /// non-blank and free of placeholder-shaped substrings, generators
    /// have at least one non-empty pattern.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (role, source) in &self.sources {
            if role_label(role).is_none() {
                return Err(TemplateError::UnknownRole(role.clone()));
            }
            match source {
                PoolSource::Surfaces(surfaces) => {
                    if surfaces.is_empty() {
                        return Err(TemplateError::MissingRole(role.clone()));
                    }
                    for entry in surfaces {
                        if entry.trim().is_empty() || !placeholder::scan(entry).is_empty() {
                            return Err(TemplateError::BadPoolEntry {
                                role: role.clone(),
                                entry: entry.clone(),
                            });
                        }
                    }
                }
                PoolSource::Generator(spec) => {
                    if spec.patterns.is_empty() || spec.patterns.iter().any(|p| p.trim().is_empty())
                    {
                        return Err(TemplateError::BadGenerator(role.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Allowlisted roles with neither a pool nor a generator.
    pub fn missing_roles(&self) -> Vec<&'static str> {
        allowlist()
            .iter()
            .map(|&(name, _)| name)
            .filter(|name| !self.sources.contains_key(*name))
            .collect()
    }
}

/// One placeholder substitution performed by [`fill_template`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRecord {
    pub token: String,
    pub role: String,
    pub surface: String,
    pub span: Span,
}

const GENERATOR_ATTEMPTS: usize = 64;

/// Fill a template's placeholders left to right from the pools.
///
/// Surfaces within one note are pairwise distinct after case folding:
/// pool roles sample without replacement, generator roles redraw on
/// collision. Offsets are recorded at insertion time, so every record's
/// span is exact by construction. The result is a pure function of
/// (template, pools, seed).
pub fn fill_template(
    template: &Template,
    pools: &EntityPool,
    seed: u64,
) -> Result<(Note, Vec<FillRecord>), TemplateError> {
    let bindings = resolve_bindings(template)?;
    let mut rng = SplitMix64::new(seed);
    let chars: Vec<char> = template.text.chars().collect();

    let mut out = String::new();
    let mut out_chars = 0usize;
    let mut cursor = 0usize;
    let mut used: HashSet<String> = HashSet::new();
    // Per-role remaining candidate indices for without-replacement
    // sampling from surface pools.
    let mut remaining: HashMap<String, Vec<usize>> = HashMap::new();
    let mut records: Vec<FillRecord> = Vec::new();

    for binding in &bindings {
        let segment: String = chars[cursor..binding.start].iter().collect();
        out_chars += binding.start - cursor;
        out.push_str(&segment);
        cursor = binding.end;

        let source = pools
            .get(&binding.role)
            .ok_or_else(|| TemplateError::MissingRole(binding.role.clone()))?;
        let surface = match source {
            PoolSource::Surfaces(surfaces) => {
                let candidates = remaining
                    .entry(binding.role.clone())
                    .or_insert_with(|| (0..surfaces.len()).collect());
                draw_distinct_surface(surfaces, candidates, &mut used, &mut rng)
                    .ok_or_else(|| TemplateError::PoolExhausted(binding.role.clone()))?
            }
            PoolSource::Generator(spec) => {
                if spec.patterns.is_empty() {
                    return Err(TemplateError::BadGenerator(binding.role.clone()));
                }
                draw_generated_surface(spec, &mut used, &mut rng)
                    .ok_or_else(|| TemplateError::PoolExhausted(binding.role.clone()))?
            }
        };

        let start = out_chars;
        let surface_chars = surface.chars().count();
        out.push_str(&surface);
        out_chars += surface_chars;
        records.push(FillRecord {
            token: binding.token.clone(),
            role: binding.role.clone(),
            surface: surface.clone(),
            span: Span::new(start, start + surface_chars, binding.label, surface),
        });
    }
    let tail: String = chars[cursor..].iter().collect();
    out.push_str(&tail);

    let provenance = if records.is_empty() {
        Provenance::SyntheticNopii
    } else {
        Provenance::SyntheticPii
    };
    let base = template.seed_id.as_deref().unwrap_or("tpl");
    let note = Note {
        id: format!("{base}-f{seed:x}"),
        sentence: out,
        spans: records.iter().map(|r| r.span.clone()).collect(),
        provenance,
        seed_id: template.seed_id.clone(),
    };
    Ok((note, records))
}

/// Scan and check the template's tokens the way validation would, since
/// fill must refuse what validation refuses.
fn resolve_bindings(template: &Template) -> Result<Vec<PlaceholderBinding>, TemplateError> {
    let mut bindings = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for token in placeholder::scan(&template.text) {
        match token.kind {
            TokenKind::Malformed => {
                return Err(TemplateError::MalformedPlaceholder(token.text));
            }
            TokenKind::WellFormed { role, index } => {
                let label =
                    role_label(&role).ok_or(TemplateError::UnknownPlaceholder(token.text.clone()))?;
                if !seen.insert(token.text.clone()) {
                    return Err(TemplateError::DuplicatePlaceholder(token.text));
                }
                bindings.push(PlaceholderBinding {
                    token: token.text,
                    role,
                    index,
                    label,
                    start: token.start,
                    end: token.end,
                });
            }
        }
    }
    Ok(bindings)
}

fn draw_distinct_surface(
    surfaces: &[String],
    candidates: &mut Vec<usize>,
    used: &mut HashSet<String>,
    rng: &mut SplitMix64,
) -> Option<String> {
    while !candidates.is_empty() {
        let pick = rng.next_below(candidates.len() as u64) as usize;
        let surface = surfaces[candidates.swap_remove(pick)].clone();
        let folded = surface.to_lowercase();
        if used.insert(folded) {
            return Some(surface);
        }
    }
    None
}

fn draw_generated_surface(
    spec: &GeneratorSpec,
    used: &mut HashSet<String>,
    rng: &mut SplitMix64,
) -> Option<String> {
    for _ in 0..GENERATOR_ATTEMPTS {
        let pattern = &spec.patterns[rng.next_below(spec.patterns.len() as u64) as usize];
        let surface = expand_pattern(pattern, rng);
        let folded = surface.to_lowercase();
        if used.insert(folded) {
            return Some(surface);
        }
    }
    None
}

/// Optional wording overrides for [`build_prompt`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PromptStyle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preamble: Option<String>,
}

/// Assemble the rewrite instruction for a masked template.
///
/// The prompt embeds the masked text verbatim, the placeholder
/// allowlist, and the word-count bounds; identical inputs produce
/// byte-identical prompts. Because only the masked text is used, no
/// original entity surface can appear.
pub fn build_prompt(template: &Template, style: &PromptStyle) -> String {
    let mut out = String::new();
    match &style.preamble {
        Some(preamble) => out.push_str(preamble),
        None => out.push_str(
            "Rewrite the following veterinary clinical note as a fluent paraphrase. \
             Keep every placeholder token exactly as written and add no other \
             names, dates, or identifiers.",
        ),
    }
    out.push_str("\n\nAllowed placeholders: ");
    let roles: Vec<String> = allowlist()
        .iter()
        .map(|(name, _)| format!("__{name}<k>__"))
        .collect();
    out.push_str(&roles.join(", "));
    out.push('.');
    if let Some(seed_length) = template.constraints.seed_length {
        let tol = template.constraints.length_tolerance;
        let min = ((1.0 - tol) * seed_length as f64).ceil() as usize;
        let max = ((1.0 + tol) * seed_length as f64).floor() as usize;
        out.push_str(&format!(
            "\nKeep the rewrite between {min} and {max} words."
        ));
    }
    out.push_str("\n\nNote:\n");
    out.push_str(&template.text);
    out
}
