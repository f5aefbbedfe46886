//! Deterministic gazetteer/regex reference tagger.
//!
//! This exists so the full pipeline — generate, mix, tag, evaluate —
//! runs end-to-end without a learned model. A gazetteer compiled from
//! the same entity pools that filled the templates is an oracle for
//! pool-backed surfaces; detector patterns cover generated dates,
//! times, and identifier strings. It makes no attempt at context
//! disambiguation and is not a competitive baseline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, Span};
use crate::metrics::{PredSpan, Prediction};
use crate::screening::{default_patterns, DetectorPattern};
use crate::templating::role_label;
use crate::text::char_to_byte_offsets;

/// Errors from gazetteer construction.
#[derive(Debug, thiserror::Error)]
pub enum TaggerError {
    #[error("surface {surface:?} maps to both {first} and {second}")]
    ConflictingSurface {
        surface: String,
        first: Label,
        second: Label,
    },
    #[error("gazetteer surfaces must be non-empty")]
    EmptySurface,
    #[error("pool role {0} is not in the placeholder allowlist")]
    UnknownRole(String),
}

/// One pattern rule: detector regex plus the label its matches carry.
#[derive(Debug, Clone)]
pub struct PatternRule {
    pub pattern: DetectorPattern,
    pub label: Label,
}

/// Surface-form lookup plus pattern rules.
///
/// Surfaces are matched longest-first at word boundaries; pattern
/// rules then run over whatever text the surfaces did not claim.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    /// (surface as chars, label), sorted by length descending then
    /// text ascending so matching order is deterministic.
    entries: Vec<(Vec<char>, Label)>,
    rules: Vec<PatternRule>,
    case_insensitive: bool,
}

/// The default pattern rules: date and time detectors emit TIME,
/// long digit runs emit MISC.
pub fn default_rules() -> Vec<PatternRule> {
    default_patterns()
        .into_iter()
        .filter_map(|pattern| {
            let label = match pattern.name.as_str() {
                "date_numeric" | "date_textual" | "time_of_day" => Label::TIME,
                "digit_run" => Label::MISC,
                _ => return None,
            };
            Some(PatternRule { pattern, label })
        })
        .collect()
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

impl Gazetteer {
    /// Compile a gazetteer from explicit (surface, label) pairs plus
    /// pattern rules.
    pub fn new(
        surfaces: Vec<(String, Label)>,
        rules: Vec<PatternRule>,
        case_insensitive: bool,
    ) -> Result<Self, TaggerError> {
        let mut seen: HashMap<String, Label> = HashMap::new();
        let mut entries = Vec::with_capacity(surfaces.len());
        for (surface, label) in surfaces {
            if surface.is_empty() {
                return Err(TaggerError::EmptySurface);
            }
            let key = if case_insensitive {
                surface.to_lowercase()
            } else {
                surface.clone()
            };
            match seen.get(&key) {
                Some(&prev) if prev != label => {
                    return Err(TaggerError::ConflictingSurface {
                        surface,
                        first: prev,
                        second: label,
                    });
                }
                Some(_) => continue,
                None => {
                    seen.insert(key, label);
                }
            }
            let chars: Vec<char> = if case_insensitive {
                surface.chars().map(fold).collect()
            } else {
                surface.chars().collect()
            };
            entries.push((chars, label));
        }
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        Ok(Self {
            entries,
            rules,
            case_insensitive,
        })
    }

    /// Compile from entity pools: every listed surface maps to its
    /// role's label, with the default pattern rules covering
    /// generator-backed roles. `exclude_roles` supports ablations.
    pub fn from_pools(
        pools: &crate::templating::EntityPool,
        exclude_roles: &[String],
        case_insensitive: bool,
    ) -> Result<Self, TaggerError> {
        let mut surfaces = Vec::new();
        for (role, surface) in pools.all_surfaces() {
            if exclude_roles.iter().any(|r| r == role) {
                continue;
            }
            let label =
                role_label(role).ok_or_else(|| TaggerError::UnknownRole(role.to_string()))?;
            surfaces.push((surface.to_string(), label));
        }
        Self::new(surfaces, default_rules(), case_insensitive)
    }

    /// Tag one text: longest-match-first left-to-right surface scan at
    /// word boundaries, then pattern rules over the residual text.
    /// Output spans never overlap and are sorted by start.
    pub fn tag(&self, text: &str) -> Vec<Span> {
        let chars: Vec<char> = text.chars().collect();
        let haystack: Vec<char> = if self.case_insensitive {
            chars.iter().map(|&c| fold(c)).collect()
        } else {
            chars.clone()
        };
        let boundary_before = |i: usize| i == 0 || !chars[i - 1].is_alphanumeric();
        let boundary_after = |i: usize| i == chars.len() || !chars[i].is_alphanumeric();

        let mut spans: Vec<Span> = Vec::new();
        let mut i = 0usize;
        while i < chars.len() {
            if !boundary_before(i) {
                i += 1;
                continue;
            }
            let hit = self.entries.iter().find(|(surface, _)| {
                i + surface.len() <= chars.len()
                    && haystack[i..i + surface.len()] == surface[..]
                    && boundary_after(i + surface.len())
            });
            match hit {
                Some((surface, label)) => {
                    let end = i + surface.len();
                    let entity: String = chars[i..end].iter().collect();
                    spans.push(Span::new(i, end, *label, entity));
                    i = end;
                }
                None => i += 1,
            }
        }

        // Pattern rules over the residual: a match touching any
        // already-claimed region is dropped so outputs never overlap.
        let byte_offsets = char_to_byte_offsets(text);
        let to_char = |byte: usize| byte_offsets.partition_point(|&b| b < byte);
        for rule in &self.rules {
            for m in rule.pattern.regex().find_iter(text) {
                let (start, end) = (to_char(m.start()), to_char(m.end()));
                if start == end {
                    continue;
                }
                let claimed = spans.iter().any(|s| s.start < end && start < s.end);
                if !claimed {
                    let entity: String = chars[start..end].iter().collect();
                    spans.push(Span::new(start, end, rule.label, entity));
                }
            }
        }
        spans.sort_by_key(|s| (s.start, s.end));
        spans
    }
}

/// Tag every note in a corpus, returning one prediction per note in
/// corpus order.
pub fn tag_corpus(corpus: &Corpus, gazetteer: &Gazetteer) -> Vec<Prediction> {
    corpus
        .notes
        .iter()
        .map(|note| Prediction {
            id: note.id.clone(),
            spans: gazetteer
                .tag(&note.sentence)
                .into_iter()
                .map(|s| PredSpan {
                    start: s.start,
                    end: s.end,
                    label: s.label,
                    entity: Some(s.entity),
                })
                .collect(),
        })
        .collect()
}

/// Serializable gazetteer description for provenance metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GazetteerInfo {
    pub n_surfaces: usize,
    pub rules: Vec<String>,
    pub case_insensitive: bool,
}

impl Gazetteer {
    /// Summary for report metadata.
    pub fn info(&self) -> GazetteerInfo {
        GazetteerInfo {
            n_surfaces: self.entries.len(),
            rules: self.rules.iter().map(|r| r.pattern.name.clone()).collect(),
            case_insensitive: self.case_insensitive,
        }
    }
}
