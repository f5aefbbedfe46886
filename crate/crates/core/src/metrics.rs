//! Span and token metrics for de-identification: exact and overlap
//! matching, BIO token scoring, document-level leakage, and multi-run
//! aggregation with normal-approximation intervals.
//!
//! Leakage is the headline safety number: the fraction of all documents
//! with at least one gold span that no overlapping same-label
//! prediction covers. Precision-style metrics describe utility;
//! leakage describes harm, which is why it is computed per document
//! rather than per span.
//!
//! Every report carries its raw TP/FP/FN counts so any alternative
//! convention can be recomputed from the artifact alone.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label, Note, Span};

/// Predicted spans for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub spans: Vec<PredSpan>,
}

/// One predicted span; `entity` is optional on the wire and verified
/// against the note text when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredSpan {
    pub start: usize,
    pub end: usize,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
}

/// Errors from evaluation and prediction parsing.
#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction references unknown document id {0}")]
    UnknownDocId(String),
    #[error("document {0}: gold and predicted tag sequences differ in length")]
    LengthMismatch(String),
    #[error("prediction for {id}, span {span_index}: {message}")]
    InvalidPrediction {
        id: String,
        span_index: usize,
        message: String,
    },
    #[error("no reports to aggregate")]
    EmptyInput,
    #[error("reports carry different metric sets")]
    HeterogeneousReports,
    #[error("predictions line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

/// Matching mode for span comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    Overlap,
}

/// Outcome of matching one document's gold spans against predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub mode: MatchMode,
    /// (gold index, pred index) pairs; each index appears at most once.
    pub pairs: Vec<(usize, usize)>,
    pub false_negatives: Vec<usize>,
    pub false_positives: Vec<usize>,
}

/// Match spans requiring identical (start, end, label).
pub fn match_exact(gold: &[Span], pred: &[Span]) -> MatchResult {
    let mut by_triple: HashMap<(usize, usize, Label), usize> = HashMap::new();
    for (gi, g) in gold.iter().enumerate() {
        by_triple.insert((g.start, g.end, g.label), gi);
    }
    let mut pairs = Vec::new();
    let mut matched_gold: HashSet<usize> = HashSet::new();
    let mut false_positives = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        match by_triple.get(&(p.start, p.end, p.label)) {
            Some(&gi) if !matched_gold.contains(&gi) => {
                matched_gold.insert(gi);
                pairs.push((gi, pi));
            }
            _ => false_positives.push(pi),
        }
    }
    let false_negatives = (0..gold.len()).filter(|gi| !matched_gold.contains(gi)).collect();
    MatchResult {
        mode: MatchMode::Exact,
        pairs,
        false_negatives,
        false_positives,
    }
}

/// Greedy one-to-one matching by maximum span intersection.
///
/// Candidates are label-consistent pairs intersecting in at least one
/// character (any overlapping pair when `label_consistent` is false).
/// Candidates are taken in order of (intersection length desc, gold
/// start asc, pred start asc), with remaining ties broken by span ends
/// and labels so the order is total over span values; a pair is
/// accepted when both sides are still unmatched. The ordering is fixed
/// so independent implementations produce identical matchings and the
/// result does not depend on input span order.
fn match_overlap_with(gold: &[Span], pred: &[Span], label_consistent: bool) -> MatchResult {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (gi, g) in gold.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            if label_consistent && g.label != p.label {
                continue;
            }
            let overlap = g.intersection_len(p);
            if overlap >= 1 {
                candidates.push((overlap, gi, pi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        let (ga, pa) = (&gold[a.1], &pred[a.2]);
        let (gb, pb) = (&gold[b.1], &pred[b.2]);
        b.0.cmp(&a.0)
            .then(ga.start.cmp(&gb.start))
            .then(pa.start.cmp(&pb.start))
            .then(ga.end.cmp(&gb.end))
            .then(pa.end.cmp(&pb.end))
            .then(ga.label.cmp(&gb.label))
            .then(pa.label.cmp(&pb.label))
    });
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for (_, gi, pi) in candidates {
        if !gold_used[gi] && !pred_used[pi] {
            gold_used[gi] = true;
            pred_used[pi] = true;
            pairs.push((gi, pi));
        }
    }
    MatchResult {
        mode: MatchMode::Overlap,
        pairs,
        false_negatives: (0..gold.len()).filter(|&gi| !gold_used[gi]).collect(),
        false_positives: (0..pred.len()).filter(|&pi| !pred_used[pi]).collect(),
    }
}

/// Label-consistent greedy overlap matching (the leakage-bearing mode).
pub fn match_overlap(gold: &[Span], pred: &[Span]) -> MatchResult {
    match_overlap_with(gold, pred, true)
}

/// One token with its code-point extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Split text into tokens: maximal non-whitespace runs, with leading
/// and trailing punctuation peeled off as one token per character.
/// Interior punctuation (dates, emails, hyphens) stays attached.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let run_end = i;
        // Peel leading punctuation.
        let mut core_start = run_start;
        while core_start < run_end && is_punct(chars[core_start]) {
            tokens.push(Token {
                text: chars[core_start].to_string(),
                start: core_start,
                end: core_start + 1,
            });
            core_start += 1;
        }
        // Find the core's end, peeling trailing punctuation after.
        let mut core_end = run_end;
        while core_end > core_start && is_punct(chars[core_end - 1]) {
            core_end -= 1;
        }
        if core_start < core_end {
            tokens.push(Token {
                text: chars[core_start..core_end].iter().collect(),
                start: core_start,
                end: core_end,
            });
        }
        for j in core_end..run_end {
            tokens.push(Token {
                text: chars[j].to_string(),
                start: j,
                end: j + 1,
            });
        }
    }
    tokens
}

/// Project spans onto tokens as BIO tags.
///
/// A token is tagged for the earliest-starting span it intersects: B-X
/// on that span's first intersecting token, I-X on later ones, O when
/// it intersects none.
pub fn spans_to_bio(text: &str, spans: &[Span]) -> Vec<(Token, String)> {
    let mut sorted: Vec<&Span> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut began: Vec<bool> = vec![false; sorted.len()];
    tokenize(text)
        .into_iter()
        .map(|token| {
            let hit = sorted
                .iter()
                .position(|s| s.start < token.end && token.start < s.end);
            let tag = match hit {
                Some(si) => {
                    let prefix = if began[si] { "I" } else { "B" };
                    began[si] = true;
                    format!("{prefix}-{}", sorted[si].label)
                }
                None => "O".to_string(),
            };
            (token, tag)
        })
        .collect()
}

/// Entities decoded from a BIO tag sequence as (label, start token,
/// end token). Decoding is lenient: an I-X with no live X run opens a
/// new entity instead of being an error.
fn decode_bio(tags: &[String]) -> Vec<(String, usize, usize)> {
    let mut entities = Vec::new();
    let mut current: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        if tag == "O" {
            if let Some((label, start)) = current.take() {
                entities.push((label, start, i));
            }
        } else if let Some(label) = tag.strip_prefix("B-") {
            if let Some((prev, start)) = current.take() {
                entities.push((prev, start, i));
            }
            current = Some((label.to_string(), i));
        } else if let Some(label) = tag.strip_prefix("I-") {
            match &current {
                Some((prev, _)) if prev == label => {}
                _ => {
                    if let Some((prev, start)) = current.take() {
                        entities.push((prev, start, i));
                    }
                    current = Some((label.to_string(), i));
                }
            }
        } else {
            // Unknown tag text: treat as O, closing any run.
            if let Some((prev, start)) = current.take() {
                entities.push((prev, start, i));
            }
        }
    }
    if let Some((label, start)) = current {
        entities.push((label, start, tags.len()));
    }
    entities
}

/// Raw match counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
    }

    fn from_match(result: &MatchResult) -> Counts {
        Counts {
            true_pos: result.pairs.len(),
            false_pos: result.false_positives.len(),
            false_neg: result.false_negatives.len(),
        }
    }
}

/// Precision/recall/F1 under the zero-denominator convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Convert counts to P/R/F1.
///
/// Zero-denominator convention: precision is 1 when TP+FP = 0 and
/// FN = 0 (nothing to find, nothing claimed), 0 when TP+FP = 0 but
/// FN > 0; recall symmetrically with FP; F1 of (0, 0) is 0.
pub fn prf_from_counts(c: &Counts) -> Prf {
    let precision = if c.true_pos + c.false_pos == 0 {
        if c.false_neg == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        c.true_pos as f64 / (c.true_pos + c.false_pos) as f64
    };
    let recall = if c.true_pos + c.false_neg == 0 {
        if c.false_pos == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        c.true_pos as f64 / (c.true_pos + c.false_neg) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// One document's gold and predicted tag sequences.
#[derive(Debug, Clone)]
pub struct TokenDoc {
    pub id: String,
    pub gold: Vec<String>,
    pub pred: Vec<String>,
}

/// Micro-averaged BIO entity metrics over a set of documents.
///
/// Entities are decoded per document and matched on exact (label,
/// token range); counts are summed over documents before computing
/// P/R/F1 (micro averaging).
pub fn token_metrics(docs: &[TokenDoc]) -> Result<(Prf, Counts), MetricsError> {
    let mut counts = Counts::default();
    for doc in docs {
        if doc.gold.len() != doc.pred.len() {
            return Err(MetricsError::LengthMismatch(doc.id.clone()));
        }
        let gold: HashSet<(String, usize, usize)> = decode_bio(&doc.gold).into_iter().collect();
        let pred: HashSet<(String, usize, usize)> = decode_bio(&doc.pred).into_iter().collect();
        let tp = gold.intersection(&pred).count();
        counts.add(Counts {
            true_pos: tp,
            false_pos: pred.len() - tp,
            false_neg: gold.len() - tp,
        });
    }
    Ok((prf_from_counts(&counts), counts))
}

/// All raw counts carried by a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub token: Counts,
    pub span_exact: Counts,
    pub span_overlap: Counts,
    pub per_label_exact: BTreeMap<Label, Counts>,
    pub per_label_overlap: BTreeMap<Label, Counts>,
}

/// Full evaluation of one prediction set against one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub token: Prf,
    pub span_exact: Prf,
    pub span_overlap: Prf,
    /// Overlap-mode P/R/F1 per label.
    pub per_label: BTreeMap<Label, Prf>,
    /// Fraction of all documents with at least one overlap-mode false
    /// negative. The headline safety number.
    pub leakage: f64,
    /// Same numerator, denominator restricted to documents that have
    /// gold spans.
    pub leakage_pii_only: f64,
    /// Leakage under label-agnostic overlap matching: a span covered by
    /// an overlapping prediction of any label does not count as leaked.
    pub leakage_label_agnostic: f64,
    pub counts: ReportCounts,
    pub n_docs: usize,
    pub n_docs_with_gold: usize,
}

fn resolve_pred_spans(note: &Note, pred: &Prediction) -> Result<Vec<Span>, MetricsError> {
    let text_chars: Vec<char> = note.sentence.chars().collect();
    let mut spans = Vec::with_capacity(pred.spans.len());
    for (i, p) in pred.spans.iter().enumerate() {
        let err = |message: &str| MetricsError::InvalidPrediction {
            id: pred.id.clone(),
            span_index: i,
            message: message.to_string(),
        };
        if p.start >= p.end || p.end > text_chars.len() {
            return Err(err(&format!(
                "offsets ({}, {}) out of bounds for a {}-character text",
                p.start,
                p.end,
                text_chars.len()
            )));
        }
        let surface: String = text_chars[p.start..p.end].iter().collect();
        if let Some(entity) = &p.entity {
            if *entity != surface {
                return Err(err(&format!(
                    "entity {entity:?} does not match text {surface:?}"
                )));
            }
        }
        spans.push(Span::new(p.start, p.end, p.label, surface));
    }
    spans.sort_by_key(|s| (s.start, s.end));
    for pair in spans.windows(2) {
        if pair[0].overlaps(&pair[1]) {
            return Err(MetricsError::InvalidPrediction {
                id: pred.id.clone(),
                span_index: 0,
                message: format!(
                    "predicted spans ({}, {}) and ({}, {}) overlap",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                ),
            });
        }
    }
    Ok(spans)
}

/// Evaluate predictions against a corpus.
///
/// Every prediction id must name a corpus document; documents without
/// a prediction entry are scored against empty predictions (a skipped
/// document has missed everything in it). The leakage denominator is
/// all documents; a document with no gold spans cannot leak.
pub fn evaluate(corpus: &Corpus, predictions: &[Prediction]) -> Result<EvalReport, MetricsError> {
    let known: HashSet<&str> = corpus.notes.iter().map(|n| n.id.as_str()).collect();
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for pred in predictions {
        if !known.contains(pred.id.as_str()) {
            return Err(MetricsError::UnknownDocId(pred.id.clone()));
        }
        by_id.insert(pred.id.as_str(), pred);
    }

    let empty = Prediction {
        id: String::new(),
        spans: Vec::new(),
    };
    let mut token_counts = Counts::default();
    let mut exact_counts = Counts::default();
    let mut overlap_counts = Counts::default();
    let mut per_label_exact: BTreeMap<Label, Counts> =
        Label::ALL.iter().map(|&l| (l, Counts::default())).collect();
    let mut per_label_overlap: BTreeMap<Label, Counts> =
        Label::ALL.iter().map(|&l| (l, Counts::default())).collect();
    let mut n_docs_with_gold = 0usize;
    let mut n_leaked = 0usize;
    let mut n_leaked_agnostic = 0usize;

    for note in &corpus.notes {
        let pred = by_id.get(note.id.as_str()).copied().unwrap_or(&empty);
        let pred_spans = resolve_pred_spans(note, pred)?;
        let mut gold = note.spans.clone();
        gold.sort_by_key(|s| (s.start, s.end));

        if !gold.is_empty() {
            n_docs_with_gold += 1;
        }

        let exact = match_exact(&gold, &pred_spans);
        exact_counts.add(Counts::from_match(&exact));
        let overlap = match_overlap(&gold, &pred_spans);
        overlap_counts.add(Counts::from_match(&overlap));
        if !overlap.false_negatives.is_empty() {
            n_leaked += 1;
        }
        let agnostic = match_overlap_with(&gold, &pred_spans, false);
        if !agnostic.false_negatives.is_empty() {
            n_leaked_agnostic += 1;
        }

        for label in Label::ALL {
            let gold_l: Vec<Span> = gold.iter().filter(|s| s.label == label).cloned().collect();
            let pred_l: Vec<Span> = pred_spans
                .iter()
                .filter(|s| s.label == label)
                .cloned()
                .collect();
            per_label_exact
                .get_mut(&label)
                .unwrap()
                .add(Counts::from_match(&match_exact(&gold_l, &pred_l)));
            per_label_overlap
                .get_mut(&label)
                .unwrap()
                .add(Counts::from_match(&match_overlap(&gold_l, &pred_l)));
        }

        let gold_tags: Vec<String> = spans_to_bio(&note.sentence, &gold)
            .into_iter()
            .map(|(_, tag)| tag)
            .collect();
        let pred_tags: Vec<String> = spans_to_bio(&note.sentence, &pred_spans)
            .into_iter()
            .map(|(_, tag)| tag)
            .collect();
        let gold_entities: HashSet<(String, usize, usize)> =
            decode_bio(&gold_tags).into_iter().collect();
        let pred_entities: HashSet<(String, usize, usize)> =
            decode_bio(&pred_tags).into_iter().collect();
        let tp = gold_entities.intersection(&pred_entities).count();
        token_counts.add(Counts {
            true_pos: tp,
            false_pos: pred_entities.len() - tp,
            false_neg: gold_entities.len() - tp,
        });
    }

    let n_docs = corpus.len();
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(EvalReport {
        token: prf_from_counts(&token_counts),
        span_exact: prf_from_counts(&exact_counts),
        span_overlap: prf_from_counts(&overlap_counts),
        per_label: per_label_overlap
            .iter()
            .map(|(&label, counts)| (label, prf_from_counts(counts)))
            .collect(),
        leakage: frac(n_leaked, n_docs),
        leakage_pii_only: frac(n_leaked, n_docs_with_gold),
        leakage_label_agnostic: frac(n_leaked_agnostic, n_docs),
        counts: ReportCounts {
            token: token_counts,
            span_exact: exact_counts,
            span_overlap: overlap_counts,
            per_label_exact,
            per_label_overlap,
        },
        n_docs,
        n_docs_with_gold,
    })
}

/// Flatten a report into (metric name, value) pairs in a fixed order.
pub fn flatten_metrics(report: &EvalReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let push_prf = |name: &str, prf: &Prf, out: &mut Vec<(String, f64)>| {
        out.push((format!("{name}_precision"), prf.precision));
        out.push((format!("{name}_recall"), prf.recall));
        out.push((format!("{name}_f1"), prf.f1));
    };
    push_prf("token", &report.token, &mut out);
    push_prf("span_exact", &report.span_exact, &mut out);
    push_prf("span_overlap", &report.span_overlap, &mut out);
    for (label, prf) in &report.per_label {
        push_prf(
            &format!("overlap_{}", label.as_str().to_lowercase()),
            prf,
            &mut out,
        );
    }
    out.push(("leakage".to_string(), report.leakage));
    out.push(("leakage_pii_only".to_string(), report.leakage_pii_only));
    out.push((
        "leakage_label_agnostic".to_string(),
        report.leakage_label_agnostic,
    ));
    out
}

impl EvalReport {
    /// One row per metric: `metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in flatten_metrics(self) {
            out.push_str(&format!("{name},{value}\n"));
        }
        out
    }
}

/// Mean, spread, and interval for one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    /// 1.96·SD/√n; absent when n = 1 (no spread to estimate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_half_width: Option<f64>,
    pub n: usize,
}

/// Per-metric summaries across a set of evaluation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_reports: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

/// Aggregate reports metric-by-metric: mean, sample SD (n−1
/// denominator), and CI half-width 1.96·SD/√n.
pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let keys: Vec<String> = flatten_metrics(&reports[0])
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let mut series: BTreeMap<String, Vec<f64>> =
        keys.iter().map(|k| (k.clone(), Vec::new())).collect();
    for report in reports {
        let flat = flatten_metrics(report);
        if flat.len() != keys.len() {
            return Err(MetricsError::HeterogeneousReports);
        }
        for (key, value) in flat {
            series
                .get_mut(&key)
                .ok_or(MetricsError::HeterogeneousReports)?
                .push(value);
        }
    }
    let n = reports.len();
    let metrics = series
        .into_iter()
        .map(|(key, values)| {
            let mean = values.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let ci_half_width = (n > 1).then(|| 1.96 * sd / (n as f64).sqrt());
            (
                key,
                MetricSummary {
                    mean,
                    sd,
                    ci_half_width,
                    n,
                },
            )
        })
        .collect();
    Ok(AggregateReport {
        n_reports: n,
        metrics,
    })
}

impl AggregateReport {
    /// One row per metric: `metric,mean,sd,ci_half_width,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,sd,ci_half_width,n\n");
        for (name, s) in &self.metrics {
            let ci = s
                .ci_half_width
                .map(|v| v.to_string())
                .unwrap_or_default();
            out.push_str(&format!("{name},{},{},{ci},{}\n", s.mean, s.sd, s.n));
        }
        out
    }
}

/// Read predictions from JSONL: one `{id, spans:[...]}` object per
/// line; blank lines are skipped.
pub fn parse_predictions(path: &Path) -> Result<Vec<Prediction>, MetricsError> {
    let file = std::fs::File::open(path).map_err(|e| MetricsError::Io(e.to_string()))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let pred: Prediction =
            serde_json::from_str(&line).map_err(|e| MetricsError::MalformedLine {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        out.push(pred);
    }
    Ok(out)
}

/// Write predictions as JSONL in input order.
pub fn write_predictions(preds: &[Prediction], path: &Path) -> Result<(), MetricsError> {
    let mut out = String::new();
    for pred in preds {
        out.push_str(&serde_json::to_string(pred).map_err(|e| MetricsError::Io(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| MetricsError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;

    fn span(start: usize, end: usize, label: Label) -> Span {
        Span::new(start, end, label, "x".repeat(end - start))
    }

    fn note(id: &str, sentence: &str, spans: Vec<Span>) -> Note {
        // Fix up entities so the note is internally consistent.
        let chars: Vec<char> = sentence.chars().collect();
        let spans = spans
            .into_iter()
            .map(|s| {
                let entity: String = chars[s.start..s.end].iter().collect();
                Span::new(s.start, s.end, s.label, entity)
            })
            .collect();
        Note {
            id: id.to_string(),
            sentence: sentence.to_string(),
            spans,
            provenance: Provenance::Real,
            seed_id: None,
        }
    }

    fn pred_of(note: &Note) -> Prediction {
        Prediction {
            id: note.id.clone(),
            spans: note
                .spans
                .iter()
                .map(|s| PredSpan {
                    start: s.start,
                    end: s.end,
                    label: s.label,
                    entity: None,
                })
                .collect(),
        }
    }

    #[test]
    fn zero_denominator_convention_is_exact() {
        let vacuous = prf_from_counts(&Counts::default());
        assert_eq!((vacuous.precision, vacuous.recall, vacuous.f1), (1.0, 1.0, 1.0));

        let all_missed = prf_from_counts(&Counts {
            true_pos: 0,
            false_pos: 0,
            false_neg: 3,
        });
        assert_eq!((all_missed.precision, all_missed.recall, all_missed.f1), (0.0, 0.0, 0.0));

        let all_spurious = prf_from_counts(&Counts {
            true_pos: 0,
            false_pos: 2,
            false_neg: 0,
        });
        assert_eq!((all_spurious.precision, all_spurious.recall, all_spurious.f1), (0.0, 0.0, 0.0));

        let mixed = prf_from_counts(&Counts {
            true_pos: 2,
            false_pos: 1,
            false_neg: 2,
        });
        assert!((mixed.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((mixed.recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_matching_requires_identity() {
        let tp = match_exact(&[span(0, 5, Label::PER)], &[span(0, 5, Label::PER)]);
        assert_eq!(tp.pairs, vec![(0, 0)]);

        let label_miss = match_exact(&[span(0, 5, Label::PER)], &[span(0, 5, Label::ORG)]);
        assert_eq!(label_miss.false_negatives, vec![0]);
        assert_eq!(label_miss.false_positives, vec![0]);

        let boundary_miss = match_exact(&[span(0, 10, Label::PER)], &[span(3, 7, Label::PER)]);
        assert!(boundary_miss.pairs.is_empty());
        assert_eq!(boundary_miss.false_negatives.len(), 1);
        assert_eq!(boundary_miss.false_positives.len(), 1);
    }

    #[test]
    fn overlap_matching_accepts_containment() {
        let result = match_overlap(&[span(0, 10, Label::PER)], &[span(3, 7, Label::PER)]);
        assert_eq!(result.pairs, vec![(0, 0)]);
    }

    #[test]
    fn overlap_matching_is_label_consistent() {
        let gold = vec![span(0, 10, Label::PER), span(12, 20, Label::TIME)];
        let pred = vec![span(2, 6, Label::TIME)];
        let result = match_overlap(&gold, &pred);
        assert!(result.pairs.is_empty());
        assert_eq!(result.false_negatives, vec![0, 1]);
        assert_eq!(result.false_positives, vec![0]);
    }

    #[test]
    fn overlap_greedy_prefers_larger_intersection() {
        let gold = vec![span(0, 10, Label::PER)];
        let pred = vec![span(0, 4, Label::PER), span(5, 10, Label::PER)];
        let result = match_overlap(&gold, &pred);
        // Intersections are 4 and 5; the 5-char pred wins the gold.
        assert_eq!(result.pairs, vec![(0, 1)]);
        assert_eq!(result.false_positives, vec![0]);
    }

    /// Brute-force maximum label-consistent matching size.
    fn optimal_matching(gold: &[Span], pred: &[Span]) -> usize {
        fn recurse(adj: &[Vec<usize>], g: usize, used: &mut u32) -> usize {
            if g == adj.len() {
                return 0;
            }
            let mut best = recurse(adj, g + 1, used);
            for &p in &adj[g] {
                if *used & (1 << p) == 0 {
                    *used |= 1 << p;
                    best = best.max(1 + recurse(adj, g + 1, used));
                    *used &= !(1 << p);
                }
            }
            best
        }
        let adj: Vec<Vec<usize>> = gold
            .iter()
            .map(|g| {
                pred.iter()
                    .enumerate()
                    .filter(|(_, p)| p.label == g.label && g.intersection_len(p) >= 1)
                    .map(|(pi, _)| pi)
                    .collect()
            })
            .collect();
        recurse(&adj, 0, &mut 0)
    }

    #[test]
    fn greedy_matching_is_maximal_and_bounded_by_optimum() {
        let cases: Vec<(Vec<Span>, Vec<Span>)> = vec![
            (
                vec![span(0, 10, Label::PER), span(8, 14, Label::PER)],
                vec![span(5, 12, Label::PER), span(0, 3, Label::PER)],
            ),
            (
                vec![span(0, 6, Label::LOC), span(6, 12, Label::LOC), span(12, 18, Label::LOC)],
                vec![span(3, 9, Label::LOC), span(9, 15, Label::LOC)],
            ),
        ];
        for (gold, pred) in cases {
            let result = match_overlap(&gold, &pred);
            assert!(result.pairs.len() <= optimal_matching(&gold, &pred));
            // Maximality: no leftover same-label overlapping pair.
            for &gi in &result.false_negatives {
                for &pi in &result.false_positives {
                    assert!(
                        gold[gi].label != pred[pi].label
                            || gold[gi].intersection_len(&pred[pi]) == 0,
                        "extendable pair ({gi}, {pi}) left unmatched"
                    );
                }
            }
        }
    }

    #[test]
    fn tokenizer_peels_edge_punctuation_only() {
        let texts: Vec<String> = tokenize("(Rex), seen 01/02/2021!")
            .into_iter()
            .map(|t| t.text)
            .collect();
        assert_eq!(texts, vec!["(", "Rex", ")", ",", "seen", "01/02/2021", "!"]);
        // Interior apostrophe survives; offsets count code points.
        let tokens = tokenize("Zoë's crate");
        assert_eq!(tokens[0].text, "Zoë's");
        assert_eq!((tokens[1].start, tokens[1].end), (6, 11));
    }

    #[test]
    fn bio_projection_matches_examples() {
        let tags: Vec<String> = spans_to_bio("Dr Pole came", &[span(0, 7, Label::PER)])
            .into_iter()
            .map(|(_, tag)| tag)
            .collect();
        assert_eq!(tags, vec!["B-PER", "I-PER", "O"]);

        let no_spans: Vec<String> = spans_to_bio("plain text here", &[])
            .into_iter()
            .map(|(_, tag)| tag)
            .collect();
        assert_eq!(no_spans, vec!["O"; 3]);

        let with_punct: Vec<String> = spans_to_bio("Pole, owner", &[span(0, 4, Label::PER)])
            .into_iter()
            .map(|(_, tag)| tag)
            .collect();
        assert_eq!(with_punct, vec!["B-PER", "O", "O"]);
    }

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn token_metrics_match_manual_entity_enumeration() {
        let docs = vec![
            TokenDoc {
                id: "d1".into(),
                gold: tags(&["B-PER", "I-PER", "O"]),
                pred: tags(&["B-PER", "I-PER", "O"]),
            },
            TokenDoc {
                id: "d2".into(),
                gold: tags(&["B-ORG", "O", "B-LOC"]),
                pred: tags(&["B-ORG", "I-ORG", "O"]),
            },
            TokenDoc {
                id: "d3".into(),
                // Lenient decoding: a bare I-TIME opens an entity.
                gold: tags(&["O", "I-TIME"]),
                pred: tags(&["O", "B-TIME"]),
            },
        ];
        // Manual enumeration: gold entities 4 (PER, ORG, LOC, TIME),
        // pred entities 3; exact-range matches: PER and TIME.
        let (prf, counts) = token_metrics(&docs).unwrap();
        assert_eq!(
            (counts.true_pos, counts.false_pos, counts.false_neg),
            (2, 1, 2)
        );
        assert!((prf.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((prf.recall - 0.5).abs() < 1e-15);
        assert!((prf.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn token_metrics_edge_cases() {
        let perfect = vec![TokenDoc {
            id: "d".into(),
            gold: tags(&["B-PER", "O"]),
            pred: tags(&["B-PER", "O"]),
        }];
        let (prf, _) = token_metrics(&perfect).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));

        let silent = vec![TokenDoc {
            id: "d".into(),
            gold: tags(&["B-PER", "O"]),
            pred: tags(&["O", "O"]),
        }];
        let (prf, _) = token_metrics(&silent).unwrap();
        assert_eq!((prf.precision, prf.recall), (0.0, 0.0));

        let ragged = vec![TokenDoc {
            id: "bad".into(),
            gold: tags(&["O"]),
            pred: tags(&["O", "O"]),
        }];
        assert!(matches!(
            token_metrics(&ragged).unwrap_err(),
            MetricsError::LengthMismatch(id) if id == "bad"
        ));
    }

    fn three_doc_corpus() -> Corpus {
        Corpus {
            notes: vec![
                note("d1", "Dr Pole saw Rex", vec![span(0, 7, Label::PER)]),
                note("d2", "Oakvale clinic visited", vec![span(0, 7, Label::ORG)]),
                note("d3", "no identifiers here", vec![]),
            ],
            subset_name: "test".into(),
        }
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let corpus = three_doc_corpus();
        let preds: Vec<Prediction> = corpus.notes.iter().map(pred_of).collect();
        let report = evaluate(&corpus, &preds).unwrap();
        assert_eq!(report.leakage, 0.0);
        assert_eq!(report.span_exact.f1, 1.0);
        assert_eq!(report.span_overlap.f1, 1.0);
        assert_eq!(report.token.f1, 1.0);
        assert_eq!(report.n_docs, 3);
        assert_eq!(report.n_docs_with_gold, 2);
    }

    #[test]
    fn empty_predictions_leak_exactly_the_gold_bearing_fraction() {
        let corpus = three_doc_corpus();
        let report = evaluate(&corpus, &[]).unwrap();
        assert!((report.leakage - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.leakage_pii_only, 1.0);
        assert_eq!(
            report.leakage,
            report.n_docs_with_gold as f64 / report.n_docs as f64
        );
    }

    #[test]
    fn one_missed_doc_of_three_leaks_a_third() {
        let corpus = three_doc_corpus();
        // Match d2 fully, miss d1, nothing to find in d3.
        let preds = vec![pred_of(&corpus.notes[1])];
        let report = evaluate(&corpus, &preds).unwrap();
        assert!((report.leakage - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn label_agnostic_leakage_forgives_label_confusion() {
        let corpus = Corpus {
            notes: vec![note("d1", "Dr Pole", vec![span(0, 7, Label::PER)])],
            subset_name: "t".into(),
        };
        let preds = vec![Prediction {
            id: "d1".into(),
            spans: vec![PredSpan {
                start: 0,
                end: 7,
                label: Label::ORG,
                entity: None,
            }],
        }];
        let report = evaluate(&corpus, &preds).unwrap();
        assert_eq!(report.leakage, 1.0);
        assert_eq!(report.leakage_label_agnostic, 0.0);
    }

    #[test]
    fn exact_counts_never_exceed_overlap_counts() {
        let corpus = three_doc_corpus();
        let preds = vec![Prediction {
            id: "d1".into(),
            spans: vec![PredSpan {
                start: 3,
                end: 7,
                label: Label::PER,
                entity: None,
            }],
        }];
        let report = evaluate(&corpus, &preds).unwrap();
        assert!(report.counts.span_exact.true_pos <= report.counts.span_overlap.true_pos);
        assert!(report.span_exact.f1 <= report.span_overlap.f1);
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let mut corpus = three_doc_corpus();
        let preds: Vec<Prediction> = corpus.notes.iter().map(pred_of).collect();
        let forward = evaluate(&corpus, &preds).unwrap();
        corpus.notes.reverse();
        let mut shuffled_preds = preds.clone();
        shuffled_preds.reverse();
        let backward = evaluate(&corpus, &shuffled_preds).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn evaluate_rejects_bad_predictions() {
        let corpus = three_doc_corpus();
        let unknown = vec![Prediction {
            id: "ghost".into(),
            spans: vec![],
        }];
        assert!(matches!(
            evaluate(&corpus, &unknown).unwrap_err(),
            MetricsError::UnknownDocId(id) if id == "ghost"
        ));

        let out_of_bounds = vec![Prediction {
            id: "d3".into(),
            spans: vec![PredSpan {
                start: 0,
                end: 999,
                label: Label::PER,
                entity: None,
            }],
        }];
        assert!(matches!(
            evaluate(&corpus, &out_of_bounds).unwrap_err(),
            MetricsError::InvalidPrediction { .. }
        ));

        let wrong_entity = vec![Prediction {
            id: "d1".into(),
            spans: vec![PredSpan {
                start: 0,
                end: 7,
                label: Label::PER,
                entity: Some("Dr Wrong".into()),
            }],
        }];
        assert!(matches!(
            evaluate(&corpus, &wrong_entity).unwrap_err(),
            MetricsError::InvalidPrediction { .. }
        ));
    }

    fn report_with_leakage(leakage: f64) -> EvalReport {
        let corpus = three_doc_corpus();
        let preds: Vec<Prediction> = corpus.notes.iter().map(pred_of).collect();
        let mut report = evaluate(&corpus, &preds).unwrap();
        report.leakage = leakage;
        report
    }

    #[test]
    fn aggregation_matches_hand_computed_statistics() {
        let reports: Vec<EvalReport> =
            [1.0, 2.0, 3.0, 4.0, 5.0].map(report_with_leakage).to_vec();
        let agg = aggregate(&reports).unwrap();
        let leakage = &agg.metrics["leakage"];
        assert!((leakage.mean - 3.0).abs() < 1e-12);
        assert!((leakage.sd - 2.5f64.sqrt()).abs() < 1e-12);
        let expected_ci = 1.96 * 2.5f64.sqrt() / 5f64.sqrt();
        assert!((leakage.ci_half_width.unwrap() - expected_ci).abs() < 1e-15);

        // A spread with sample SD exactly 0.006 gives the interval the
        // published table rounds to ±0.0055.
        let near: Vec<EvalReport> = [0.106, 0.106, 0.112, 0.118, 0.118]
            .map(report_with_leakage)
            .to_vec();
        let agg = aggregate(&near).unwrap();
        let leakage = &agg.metrics["leakage"];
        assert!((leakage.sd - 0.006).abs() < 1e-12);
        assert!((leakage.ci_half_width.unwrap() - 0.00526).abs() < 1e-5);
    }

    #[test]
    fn aggregation_handles_degenerate_inputs() {
        let identical: Vec<EvalReport> = [0.5, 0.5, 0.5].map(report_with_leakage).to_vec();
        let agg = aggregate(&identical).unwrap();
        assert_eq!(agg.metrics["leakage"].sd, 0.0);
        assert_eq!(agg.metrics["leakage"].ci_half_width, Some(0.0));

        let single = vec![report_with_leakage(0.25)];
        let agg = aggregate(&single).unwrap();
        assert_eq!(agg.metrics["leakage"].sd, 0.0);
        assert_eq!(agg.metrics["leakage"].ci_half_width, None);

        assert!(matches!(
            aggregate(&[]).unwrap_err(),
            MetricsError::EmptyInput
        ));
    }

    #[test]
    fn csv_emits_one_row_per_metric() {
        let report = report_with_leakage(0.25);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "metric,value");
        assert_eq!(lines.len(), 1 + flatten_metrics(&report).len());
        assert!(lines.iter().any(|l| l.starts_with("leakage,0.25")));

        let agg = aggregate(&[report_with_leakage(0.2), report_with_leakage(0.3)]).unwrap();
        let agg_csv = agg.to_csv();
        assert!(agg_csv.starts_with("metric,mean,sd,ci_half_width,n\n"));
    }

    #[test]
    fn predictions_roundtrip_through_jsonl() {
        let preds = vec![
            Prediction {
                id: "d1".into(),
                spans: vec![PredSpan {
                    start: 0,
                    end: 7,
                    label: Label::PER,
                    entity: Some("Dr Pole".into()),
                }],
            },
            Prediction {
                id: "d2".into(),
                spans: vec![],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.jsonl");
        write_predictions(&preds, &path).unwrap();
        assert_eq!(parse_predictions(&path).unwrap(), preds);

        std::fs::write(&path, "{\"id\": \"d1\"}\n").unwrap();
        assert!(matches!(
            parse_predictions(&path).unwrap_err(),
            MetricsError::MalformedLine { line: 1, .. }
        ));
    }
}
