//! Note and span domain types with JSONL persistence and validation.
//!
//! One JSON object per line with keys in the fixed order `id`, `sentence`,
//! `spans`, `provenance`, `seed_id` (optional). This layout is the
//! interchange format for every other module. Span offsets count Unicode
//! scalar values, so `entity` always equals the code-point substring of
//! `sentence` at `[start, end)` regardless of encoding.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_count, char_substring};

/// The five admissible identifier labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    PER,
    ORG,
    LOC,
    TIME,
    MISC,
}

impl Label {
    pub const ALL: [Label; 5] = [Label::PER, Label::ORG, Label::LOC, Label::TIME, Label::MISC];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::PER => "PER",
            Label::ORG => "ORG",
            Label::LOC => "LOC",
            Label::TIME => "TIME",
            Label::MISC => "MISC",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PER" => Ok(Label::PER),
            "ORG" => Ok(Label::ORG),
            "LOC" => Ok(Label::LOC),
            "TIME" => Ok(Label::TIME),
            "MISC" => Ok(Label::MISC),
            _ => Err(()),
        }
    }
}

/// A character-offset identifier annotation.
///
/// `start` is inclusive, `end` exclusive, both counted in code points.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: Label,
    pub entity: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: Label, entity: impl Into<String>) -> Self {
        Span {
            start,
            end,
            label,
            entity: entity.into(),
        }
    }

    /// Span length in code points.
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Length of the character-range intersection with `other`.
    pub fn intersection_len(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Where a note came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    SyntheticPii,
    SyntheticNopii,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::SyntheticPii => "synthetic_pii",
            Provenance::SyntheticNopii => "synthetic_nopii",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One clinical narrative with its identifier spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub id: String,
    pub sentence: String,
    pub spans: Vec<Span>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_id: Option<String>,
}

impl Note {
    /// True when the note carries at least one identifier span.
    pub fn has_spans(&self) -> bool {
        !self.spans.is_empty()
    }
}

/// An ordered collection of notes under a free-form subset tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub notes: Vec<Note>,
    pub subset_name: String,
}

impl Corpus {
    pub fn new(subset_name: impl Into<String>, notes: Vec<Note>) -> Self {
        Corpus {
            subset_name: subset_name.into(),
            notes,
        }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Note> {
        self.notes.iter().find(|n| n.id == id)
    }

    pub fn by_provenance(&self, provenance: Provenance) -> Vec<&Note> {
        self.notes
            .iter()
            .filter(|n| n.provenance == provenance)
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: unknown label {token:?}")]
    UnknownLabel { line: usize, token: String },
    #[error("note {id}: span offsets out of bounds")]
    OutOfBounds { id: String },
    #[error("note {id}: span {span_index} entity does not match the sentence substring")]
    SurfaceMismatch { id: String, span_index: usize },
    #[error("note {id}: overlapping spans")]
    OverlappingSpans { id: String },
    #[error("duplicate note id {id}")]
    DuplicateId { id: String },
    #[error("note {id}: no-PII provenance but spans present")]
    NoPiiWithSpans { id: String },
}

/// One invariant violation found while validating a note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoteFinding {
    OutOfBounds { span_index: usize },
    SurfaceMismatch { span_index: usize },
    OverlappingSpans,
    NoPiiWithSpans,
}

/// A span removed by longest-span overlap resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDrop {
    pub kept: Span,
    pub dropped: Span,
}

/// Outcome of validating one note.
///
/// `normalized` carries the note with spans sorted by `(start, end)`; it is
/// present unless a hard finding was recorded. Overlap resolutions (when
/// allowed) appear in `drops` and are already applied to `normalized`.
#[derive(Debug, Clone, Default)]
pub struct NoteValidation {
    pub findings: Vec<NoteFinding>,
    pub drops: Vec<SpanDrop>,
    pub normalized: Option<Note>,
}

impl NoteValidation {
    /// Empty report: every invariant held with nothing resolved away.
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty() && self.drops.is_empty()
    }
}

/// Check every note invariant, optionally resolving overlaps.
///
/// In strict mode overlapping spans are a finding. With `allow_overlaps`
/// set, overlaps are resolved by keeping the longer span (ties: earlier
/// start) and each removal is recorded as a drop.
pub fn validate_note(note: &Note, allow_overlaps: bool) -> NoteValidation {
    let mut report = NoteValidation::default();
    let n_chars = char_count(&note.sentence);

    let mut valid_spans: Vec<Span> = Vec::with_capacity(note.spans.len());
    for (idx, span) in note.spans.iter().enumerate() {
        if span.start >= span.end || span.end > n_chars {
            report.findings.push(NoteFinding::OutOfBounds { span_index: idx });
            continue;
        }
        match char_substring(&note.sentence, span.start, span.end) {
            Some(sub) if sub == span.entity => valid_spans.push(span.clone()),
            _ => report
                .findings
                .push(NoteFinding::SurfaceMismatch { span_index: idx }),
        }
    }

    valid_spans.sort_by_key(|s| (s.start, s.end));
    let has_overlap = valid_spans
        .windows(2)
        .any(|pair| pair[0].end > pair[1].start);

    let resolved = if has_overlap {
        if !allow_overlaps {
            report.findings.push(NoteFinding::OverlappingSpans);
            valid_spans
        } else {
            resolve_overlaps(valid_spans, &mut report.drops)
        }
    } else {
        valid_spans
    };

    if note.provenance == Provenance::SyntheticNopii && !note.spans.is_empty() {
        report.findings.push(NoteFinding::NoPiiWithSpans);
    }

    if report.findings.is_empty() {
        report.normalized = Some(Note {
            id: note.id.clone(),
            sentence: note.sentence.clone(),
            spans: resolved,
            provenance: note.provenance,
            seed_id: note.seed_id.clone(),
        });
    }
    report
}

/// Keep the longer span of every overlapping pair, ties to the earlier start.
fn resolve_overlaps(spans: Vec<Span>, drops: &mut Vec<SpanDrop>) -> Vec<Span> {
    let mut order: Vec<usize> = (0..spans.len()).collect();
    // Longest first; ties broken by earlier start, then input order.
    order.sort_by(|&a, &b| {
        spans[b]
            .len()
            .cmp(&spans[a].len())
            .then(spans[a].start.cmp(&spans[b].start))
            .then(a.cmp(&b))
    });

    let mut kept: Vec<Span> = Vec::with_capacity(spans.len());
    for i in order {
        let candidate = &spans[i];
        match kept.iter().find(|k| k.overlaps(candidate)) {
            Some(winner) => drops.push(SpanDrop {
                kept: winner.clone(),
                dropped: candidate.clone(),
            }),
            None => kept.push(candidate.clone()),
        }
    }
    kept.sort_by_key(|s| (s.start, s.end));
    kept
}

/// How overlapping gold spans are handled during parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPolicy {
    /// Overlaps are a parse error.
    #[default]
    Reject,
    /// Keep the longer span, drop the rest, and report each drop.
    KeepLonger,
}

/// One overlap resolution applied while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapDrop {
    pub id: String,
    pub kept: Span,
    pub dropped: Span,
}

// Raw mirror of the wire format, so parse failures can be reported with
// the precise error the caller expects instead of a generic serde message.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNote {
    id: String,
    sentence: String,
    spans: Vec<RawSpan>,
    provenance: String,
    #[serde(default)]
    seed_id: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    start: usize,
    end: usize,
    label: String,
    entity: String,
}

/// Parse a JSONL corpus, rejecting overlapping gold spans.
pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    parse_jsonl_with(path, OverlapPolicy::Reject).map(|(corpus, _)| corpus)
}

/// Parse a JSONL corpus under an explicit overlap policy.
///
/// The subset tag is taken from the file stem. Every returned note
/// satisfies the note and span invariants, with spans sorted by
/// `(start, end)`.
pub fn parse_jsonl_with(
    path: impl AsRef<Path>,
    policy: OverlapPolicy,
) -> Result<(Corpus, Vec<OverlapDrop>), CorpusError> {
    let path = path.as_ref();
    let subset_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = BufReader::new(File::open(path)?);

    let mut notes = Vec::new();
    let mut drops = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (line_index, line) in reader.lines().enumerate() {
        let line_no = line_index + 1;
        let line = line?;
        if line.trim().is_empty() && line_index == 0 && notes.is_empty() {
            // An entirely empty file still yields one empty "line".
            continue;
        }
        let raw: RawNote =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let note = convert_raw(raw, line_no)?;
        if !seen_ids.insert(note.id.clone()) {
            return Err(CorpusError::DuplicateId { id: note.id });
        }

        let report = validate_note(&note, policy == OverlapPolicy::KeepLonger);
        if let Some(finding) = report.findings.first() {
            return Err(finding_to_error(finding, &note.id));
        }
        for drop in report.drops {
            drops.push(OverlapDrop {
                id: note.id.clone(),
                kept: drop.kept,
                dropped: drop.dropped,
            });
        }
        notes.push(report.normalized.expect("no findings implies normalized"));
    }

    Ok((Corpus { notes, subset_name }, drops))
}

fn convert_raw(raw: RawNote, line_no: usize) -> Result<Note, CorpusError> {
    let mut spans = Vec::with_capacity(raw.spans.len());
    for raw_span in raw.spans {
        let label =
            Label::from_str(&raw_span.label).map_err(|_| CorpusError::UnknownLabel {
                line: line_no,
                token: raw_span.label.clone(),
            })?;
        spans.push(Span {
            start: raw_span.start,
            end: raw_span.end,
            label,
            entity: raw_span.entity,
        });
    }
    let provenance = match raw.provenance.as_str() {
        "real" => Provenance::Real,
        "synthetic_pii" => Provenance::SyntheticPii,
        "synthetic_nopii" => Provenance::SyntheticNopii,
        other => {
            return Err(CorpusError::MalformedLine {
                line: line_no,
                message: format!("unknown provenance {other:?}"),
            })
        }
    };
    Ok(Note {
        id: raw.id,
        sentence: raw.sentence,
        spans,
        provenance,
        seed_id: raw.seed_id,
    })
}

fn finding_to_error(finding: &NoteFinding, id: &str) -> CorpusError {
    match finding {
        NoteFinding::OutOfBounds { .. } => CorpusError::OutOfBounds { id: id.to_string() },
        NoteFinding::SurfaceMismatch { span_index } => CorpusError::SurfaceMismatch {
            id: id.to_string(),
            span_index: *span_index,
        },
        NoteFinding::OverlappingSpans => CorpusError::OverlappingSpans { id: id.to_string() },
        NoteFinding::NoPiiWithSpans => CorpusError::NoPiiWithSpans { id: id.to_string() },
    }
}

/// Serialize a note to its single-line JSON form.
pub fn note_to_json(note: &Note) -> String {
    serde_json::to_string(note).expect("note serialization cannot fail")
}

/// Write a corpus as JSONL (UTF-8, LF line endings).
///
/// The output re-parses to a corpus equal to the input when the file stem
/// matches the subset tag.
pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for note in &corpus.notes {
        writer.write_all(note_to_json(note).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
