//! Descriptive corpus diagnostics: composition and note-length
//! statistics, structural properties of PII-bearing notes, span label
//! distributions, and real-vs-synthetic shift reports.
//!
//! Everything here is descriptive — no hypothesis tests. Reports carry
//! raw counts alongside percentages so any figure can be recomputed
//! from the artifact without rerunning the toolkit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::text::{char_count, word_count};

/// Errors from diagnostics computation.
#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("cannot compute statistics over an empty corpus")]
    EmptyCorpus,
    #[error("corpus has no PII-bearing notes")]
    NoPiiNotes,
}

/// Median and quartiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quantile by linear interpolation at position (n−1)·q over the
/// sorted sample. The method is fixed so stored IQRs are reproducible.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let position = (sorted.len() - 1) as f64 * q;
    let lower = position.floor() as usize;
    let frac = position - lower as f64;
    if frac == 0.0 || lower + 1 == sorted.len() {
        sorted[lower]
    } else {
        sorted[lower] + frac * (sorted[lower + 1] - sorted[lower])
    }
}

/// Compute quartiles of a non-empty sample.
pub fn quartiles(values: &[f64]) -> Quartiles {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Quartiles {
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
    }
}

/// Composition and length statistics for one corpus subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStats {
    pub subset: String,
    pub n_notes: usize,
    pub n_with_span: usize,
    pub percent_with_span: f64,
    pub words: Quartiles,
    pub chars: Quartiles,
    pub total_spans: usize,
}

/// Structural properties of PII-bearing notes, as percentages of the
/// PII-bearing subset with raw counts alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralStats {
    pub subset: String,
    pub n_pii_notes: usize,
    /// Notes containing ≥1 span of each label.
    pub label_presence_count: BTreeMap<Label, usize>,
    pub label_presence_percent: BTreeMap<Label, f64>,
    pub no_per_count: usize,
    pub no_per_percent: f64,
    /// Notes with two spans sharing a label and case-folded surface.
    pub repetition_count: usize,
    pub repetition_percent: f64,
}

/// Span counts and shares per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub subset: String,
    pub total_spans: usize,
    pub count: BTreeMap<Label, usize>,
    /// Percent of all spans; 0 for every label in a span-free corpus.
    pub percent: BTreeMap<Label, f64>,
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Composition and length statistics over all notes.
pub fn subset_stats(corpus: &Corpus) -> Result<SubsetStats, DiagnosticsError> {
    if corpus.notes.is_empty() {
        return Err(DiagnosticsError::EmptyCorpus);
    }
    let words: Vec<f64> = corpus
        .notes
        .iter()
        .map(|n| word_count(&n.sentence) as f64)
        .collect();
    let chars: Vec<f64> = corpus
        .notes
        .iter()
        .map(|n| char_count(&n.sentence) as f64)
        .collect();
    let n_with_span = corpus.notes.iter().filter(|n| !n.spans.is_empty()).count();
    Ok(SubsetStats {
        subset: corpus.subset_name.clone(),
        n_notes: corpus.len(),
        n_with_span,
        percent_with_span: percent(n_with_span, corpus.len()),
        words: quartiles(&words),
        chars: quartiles(&chars),
        total_spans: corpus.notes.iter().map(|n| n.spans.len()).sum(),
    })
}

/// True when any two spans in the list share a label and a case-folded
/// surface form — the within-note repetition flag.
pub fn has_entity_repetition(spans: &[crate::corpus::Span]) -> bool {
    let mut seen = std::collections::HashSet::new();
    for span in spans {
        if !seen.insert((span.label, span.entity.to_lowercase())) {
            return true;
        }
    }
    false
}

/// Structural properties over the PII-bearing notes only.
pub fn structural_stats(corpus: &Corpus) -> Result<StructuralStats, DiagnosticsError> {
    let pii: Vec<_> = corpus.notes.iter().filter(|n| !n.spans.is_empty()).collect();
    if pii.is_empty() {
        return Err(DiagnosticsError::NoPiiNotes);
    }
    let n = pii.len();
    let mut label_presence_count: BTreeMap<Label, usize> =
        Label::ALL.iter().map(|&l| (l, 0)).collect();
    let mut repetition_count = 0usize;
    for note in &pii {
        for label in Label::ALL {
            if note.spans.iter().any(|s| s.label == label) {
                *label_presence_count.get_mut(&label).unwrap() += 1;
            }
        }
        if has_entity_repetition(&note.spans) {
            repetition_count += 1;
        }
    }
    let no_per_count = n - label_presence_count[&Label::PER];
    Ok(StructuralStats {
        subset: corpus.subset_name.clone(),
        n_pii_notes: n,
        label_presence_percent: label_presence_count
            .iter()
            .map(|(&l, &c)| (l, percent(c, n)))
            .collect(),
        label_presence_count,
        no_per_count,
        no_per_percent: percent(no_per_count, n),
        repetition_count,
        repetition_percent: percent(repetition_count, n),
    })
}

/// Span counts and shares per label over all spans in the corpus.
pub fn label_distribution(corpus: &Corpus) -> LabelDistribution {
    let mut count: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
    for note in &corpus.notes {
        for span in &note.spans {
            *count.get_mut(&span.label).unwrap() += 1;
        }
    }
    let total_spans: usize = count.values().sum();
    LabelDistribution {
        subset: corpus.subset_name.clone(),
        total_spans,
        percent: count
            .iter()
            .map(|(&l, &c)| (l, percent(c, total_spans)))
            .collect(),
        count,
    }
}

/// Everything diagnosable about one corpus in a single bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub stats: SubsetStats,
    /// Absent when the corpus has no PII-bearing notes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructuralStats>,
    pub labels: LabelDistribution,
}

/// Run all diagnostics over one corpus.
pub fn diagnose(corpus: &Corpus) -> Result<Diagnostics, DiagnosticsError> {
    Ok(Diagnostics {
        stats: subset_stats(corpus)?,
        structure: structural_stats(corpus).ok(),
        labels: label_distribution(corpus),
    })
}

/// Direction of a shift, relative to zero delta (or ratio 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Flat,
}

/// One shifted quantity with its direction flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub value: f64,
    pub direction: Direction,
}

fn shift_about(value: f64, reference: f64) -> Shift {
    let direction = if (value - reference).abs() < 1e-12 {
        Direction::Flat
    } else if value > reference {
        Direction::Up
    } else {
        Direction::Down
    };
    Shift { value, direction }
}

/// Deltas between a real corpus and a synthetic one: ratios are
/// synthetic/real; deltas are synthetic − real in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub words_median_ratio: Shift,
    pub chars_median_ratio: Shift,
    pub pii_rate_delta: Shift,
    pub label_percent_delta: BTreeMap<Label, Shift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_delta: Option<Shift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_per_delta: Option<Shift>,
}

/// Compare real diagnostics against synthetic diagnostics.
pub fn compare(real: &Diagnostics, synthetic: &Diagnostics) -> ShiftReport {
    let ratio = |a: f64, b: f64| if b == 0.0 { 1.0 } else { a / b };
    let structural = match (&real.structure, &synthetic.structure) {
        (Some(r), Some(s)) => Some((r, s)),
        _ => None,
    };
    ShiftReport {
        words_median_ratio: shift_about(
            ratio(synthetic.stats.words.median, real.stats.words.median),
            1.0,
        ),
        chars_median_ratio: shift_about(
            ratio(synthetic.stats.chars.median, real.stats.chars.median),
            1.0,
        ),
        pii_rate_delta: shift_about(
            synthetic.stats.percent_with_span - real.stats.percent_with_span,
            0.0,
        ),
        label_percent_delta: Label::ALL
            .iter()
            .map(|&l| {
                (
                    l,
                    shift_about(synthetic.labels.percent[&l] - real.labels.percent[&l], 0.0),
                )
            })
            .collect(),
        repetition_delta: structural
            .map(|(r, s)| shift_about(s.repetition_percent - r.repetition_percent, 0.0)),
        no_per_delta: structural
            .map(|(r, s)| shift_about(s.no_per_percent - r.no_per_percent, 0.0)),
    }
}

/// Format a quantity that is usually integral: no decimals when whole,
/// one decimal otherwise.
fn fmt_num(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.1}")
    }
}

fn fmt_pct(x: f64) -> String {
    format!("{x:.1}")
}

fn render_rows(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: &[String], widths: &[usize]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let header_cells: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    out.push_str(&fmt_row(&header_cells, &widths));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row, &widths));
        out.push('\n');
    }
    out
}

/// Aligned-column composition table, one row per subset.
pub fn render_composition_table(stats: &[SubsetStats]) -> String {
    let header = [
        "Subset",
        "N notes",
        "Notes w/ >=1 span",
        "Words median [IQR]",
        "Chars median [IQR]",
        "Total spans",
    ];
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|s| {
            vec![
                s.subset.clone(),
                s.n_notes.to_string(),
                format!("{} ({}%)", s.n_with_span, fmt_pct(s.percent_with_span)),
                format!(
                    "{} [{}-{}]",
                    fmt_num(s.words.median),
                    fmt_num(s.words.q1),
                    fmt_num(s.words.q3)
                ),
                format!(
                    "{} [{}-{}]",
                    fmt_num(s.chars.median),
                    fmt_num(s.chars.q1),
                    fmt_num(s.chars.q3)
                ),
                s.total_spans.to_string(),
            ]
        })
        .collect();
    render_rows(&header, &rows)
}

/// Aligned-column structural table over PII-bearing notes.
pub fn render_structural_table(stats: &[StructuralStats]) -> String {
    let header = [
        "Subset (PII notes)",
        "PER",
        "ORG",
        "LOC",
        "TIME",
        "MISC",
        "No PER",
        "Repetition",
    ];
    let rows: Vec<Vec<String>> = stats
        .iter()
        .map(|s| {
            let mut row = vec![format!("{} (n={})", s.subset, s.n_pii_notes)];
            for label in Label::ALL {
                row.push(fmt_pct(s.label_presence_percent[&label]));
            }
            row.push(fmt_pct(s.no_per_percent));
            row.push(fmt_pct(s.repetition_percent));
            row
        })
        .collect();
    render_rows(&header, &rows)
}

/// Aligned-column label distribution table, one column per subset.
pub fn render_label_table(dists: &[LabelDistribution]) -> String {
    let mut header: Vec<&str> = vec!["Label"];
    for d in dists {
        header.push(&d.subset);
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for label in Label::ALL {
        let mut row = vec![label.to_string()];
        for d in dists {
            row.push(format!("{} ({}%)", d.count[&label], fmt_pct(d.percent[&label])));
        }
        rows.push(row);
    }
    let mut total_row = vec!["Total".to_string()];
    for d in dists {
        total_row.push(format!("{} (100.0%)", d.total_spans));
    }
    rows.push(total_row);
    render_rows(&header, &rows)
}
