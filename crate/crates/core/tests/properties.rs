//! Property tests exercising module invariants on generated inputs.
//!
//! Each block mirrors an invariant stated in the module docs: these
//! are the guarantees downstream code is allowed to lean on, checked
//! here against randomized inputs rather than fixtures.

use proptest::prelude::*;

use deidkit_core::corpus::{parse_jsonl, write_jsonl, Corpus, Label, Note, Provenance, Span};
use deidkit_core::metrics::{evaluate, match_exact, match_overlap, prf_from_counts, Counts};
use deidkit_core::rng::SplitMix64;
use deidkit_core::screening::{dedup, normalize, similarity, ScreeningConfig};
use deidkit_core::templating::{fill_template, mask_note, EntityPool, Template};
use deidkit_core::text::{char_count, char_substring, char_to_byte_offsets};

const WORDS: &[&str] = &[
    "the", "dog", "was", "seen", "today", "for", "a", "routine", "checkup", "and", "vaccination",
    "with", "no", "concerns", "noted", "weight", "stable", "appetite", "good", "recheck",
];

const NAMES: &[&str] = &["Rex", "Bella", "Maximus", "Pip", "Willow"];

/// A sentence of known words with up to three single-word entity spans
/// at known character offsets.
fn arb_note(id: usize) -> impl Strategy<Value = Note> {
    (
        prop::collection::vec(0usize..WORDS.len(), 3..15),
        prop::collection::vec((0usize..NAMES.len(), 0usize..5usize), 0..3),
    )
        .prop_map(move |(word_idx, entities)| {
            let mut words: Vec<String> = word_idx.iter().map(|&i| WORDS[i].to_string()).collect();
            // Substitute entity words at distinct positions.
            let mut spans_at: Vec<(usize, usize)> = Vec::new(); // (word position, name index)
            for (name_i, pos_seed) in entities {
                let pos = pos_seed % words.len();
                if spans_at.iter().any(|&(p, _)| p == pos) {
                    continue;
                }
                words[pos] = NAMES[name_i].to_string();
                spans_at.push((pos, name_i));
            }
            let sentence = words.join(" ");
            let mut spans: Vec<Span> = spans_at
                .iter()
                .map(|&(pos, name_i)| {
                    let start: usize =
                        words[..pos].iter().map(|w| w.chars().count() + 1).sum();
                    let name = NAMES[name_i];
                    let label = Label::ALL[name_i % 5];
                    Span::new(start, start + name.chars().count(), label, name)
                })
                .collect();
            spans.sort_by_key(|s| (s.start, s.end));
            let provenance = if spans.is_empty() {
                Provenance::SyntheticNopii
            } else {
                Provenance::Real
            };
            Note {
                id: format!("n{id}"),
                sentence,
                spans,
                provenance,
                seed_id: None,
            }
        })
}

fn arb_corpus() -> impl Strategy<Value = Corpus> {
    prop::collection::vec(prop::num::u8::ANY, 1..8).prop_flat_map(|seeds| {
        let notes: Vec<_> = seeds
            .iter()
            .enumerate()
            .map(|(i, _)| arb_note(i))
            .collect();
        notes.prop_map(|notes| Corpus {
            notes,
            subset_name: "prop".into(),
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_roundtrips_through_jsonl(corpus in arb_corpus()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.jsonl");
        write_jsonl(&corpus, &path).unwrap();
        let back = parse_jsonl(&path).unwrap();
        prop_assert_eq!(corpus.notes, back.notes);
    }

    #[test]
    fn span_entities_equal_their_substrings(corpus in arb_corpus()) {
        for note in &corpus.notes {
            for span in &note.spans {
                let surface = char_substring(&note.sentence, span.start, span.end).unwrap();
                prop_assert_eq!(surface, span.entity.as_str());
            }
        }
    }

    #[test]
    fn char_offsets_are_strictly_monotone(s in "\\PC{0,60}") {
        let offsets = char_to_byte_offsets(&s);
        prop_assert_eq!(offsets.len(), char_count(&s) + 1);
        for pair in offsets.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
        prop_assert_eq!(*offsets.last().unwrap(), s.len());
    }

    #[test]
    fn rng_streams_are_deterministic_and_bounded(seed in any::<u64>(), n in 1u64..1000) {
        let mut a = SplitMix64::new(seed);
        let mut b = SplitMix64::new(seed);
        for _ in 0..20 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut s = SplitMix64::stream(seed, 3);
        for _ in 0..20 {
            let v = s.next_below(n);
            prop_assert!(v < n);
            let f = s.next_f64();
            prop_assert!((0.0..1.0).contains(&f));
        }
    }

    #[test]
    fn sampled_indices_are_unique_and_in_range(
        seed in any::<u64>(),
        n in 1usize..200,
        k_seed in any::<usize>(),
    ) {
        let k = k_seed % (n + 1);
        let picks = SplitMix64::new(seed).sample_indices(n, k);
        prop_assert_eq!(picks.len(), k);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert!(picks.iter().all(|&i| i < n));
    }

    #[test]
    fn shuffle_is_a_permutation(seed in any::<u64>(), n in 0usize..50) {
        let mut items: Vec<usize> = (0..n).collect();
        SplitMix64::new(seed).shuffle(&mut items);
        let mut sorted = items.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
        let cfg = ScreeningConfig::default();
        let ab = similarity(&a, &b, &cfg);
        let ba = similarity(&b, &a, &cfg);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((similarity(&a, &a, &cfg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,60}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn dedup_is_idempotent(texts in prop::collection::vec("[a-z ]{1,50}", 1..12)) {
        let cfg = ScreeningConfig::default();
        let notes: Vec<(String, String)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("n{i}"), t.clone()))
            .collect();
        let first = dedup(&notes, &[], &cfg);
        let survivors: Vec<(String, String)> = notes
            .iter()
            .filter(|(id, _)| first.retained.contains(id))
            .cloned()
            .collect();
        let second = dedup(&survivors, &[], &cfg);
        prop_assert!(second.dropped.is_empty());
        prop_assert_eq!(second.retained, first.retained);
    }

    #[test]
    fn exact_matches_are_a_subset_of_overlap_matches(
        gold_cuts in prop::collection::vec((0usize..40, 1usize..6, 0usize..5), 0..5),
        pred_cuts in prop::collection::vec((0usize..40, 1usize..6, 0usize..5), 0..5),
    ) {
        let build = |cuts: &[(usize, usize, usize)]| {
            let mut spans: Vec<Span> = Vec::new();
            let mut cursor = 0usize;
            for &(gap, len, label) in cuts {
                let start = cursor + gap % 7;
                let end = start + len;
                spans.push(Span::new(start, end, Label::ALL[label], "e".repeat(len)));
                cursor = end;
            }
            spans
        };
        let gold = build(&gold_cuts);
        let pred = build(&pred_cuts);
        let exact = match_exact(&gold, &pred);
        let overlap = match_overlap(&gold, &pred);
        prop_assert!(exact.pairs.len() <= overlap.pairs.len());
        // Both matchings are one-to-one.
        for result in [&exact, &overlap] {
            let mut golds: Vec<usize> = result.pairs.iter().map(|p| p.0).collect();
            let mut preds: Vec<usize> = result.pairs.iter().map(|p| p.1).collect();
            golds.sort_unstable();
            preds.sort_unstable();
            golds.dedup();
            preds.dedup();
            prop_assert_eq!(golds.len(), result.pairs.len());
            prop_assert_eq!(preds.len(), result.pairs.len());
            prop_assert_eq!(
                result.pairs.len() + result.false_negatives.len(),
                gold.len()
            );
            prop_assert_eq!(
                result.pairs.len() + result.false_positives.len(),
                pred.len()
            );
        }
    }

    #[test]
    fn prf_values_stay_in_unit_interval(tp in 0usize..50, fp in 0usize..50, f_n in 0usize..50) {
        let prf = prf_from_counts(&Counts { true_pos: tp, false_pos: fp, false_neg: f_n });
        for v in [prf.precision, prf.recall, prf.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn evaluate_against_own_gold_is_perfect(corpus in arb_corpus()) {
        let preds: Vec<deidkit_core::metrics::Prediction> = corpus
            .notes
            .iter()
            .map(|n| deidkit_core::metrics::Prediction {
                id: n.id.clone(),
                spans: n
                    .spans
                    .iter()
                    .map(|s| deidkit_core::metrics::PredSpan {
                        start: s.start,
                        end: s.end,
                        label: s.label,
                        entity: Some(s.entity.clone()),
                    })
                    .collect(),
            })
            .collect();
        let report = evaluate(&corpus, &preds).unwrap();
        prop_assert_eq!(report.leakage, 0.0);
        prop_assert_eq!(report.span_exact.f1, 1.0);
        prop_assert_eq!(report.token.f1, 1.0);
    }

    #[test]
    fn leakage_is_a_document_fraction(corpus in arb_corpus()) {
        let report = evaluate(&corpus, &[]).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.leakage));
        let expected = report.n_docs_with_gold as f64 / report.n_docs as f64;
        prop_assert!((report.leakage - expected).abs() < 1e-12);
    }
}

fn fill_pools() -> EntityPool {
    let mut pools = EntityPool::new();
    pools.insert_surfaces(
        "VET",
        vec!["Dr Pole".into(), "Dr Vale".into(), "Dr Finch".into(), "Dr Hart".into()],
    );
    pools.insert_surfaces(
        "OWNER",
        vec!["Ms Brook".into(), "Mr Stone".into(), "Mrs Hale".into()],
    );
    pools.insert_surfaces(
        "CLINIC",
        vec!["Oakvale Vets".into(), "Birch Street Clinic".into()],
    );
    pools.insert_surfaces("CITY", vec!["Shrewsbury".into(), "Ludlow".into()]);
    pools
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filled_notes_validate_and_mask_back_to_placeholders(seed in any::<u64>(), shape in 0usize..4) {
        let text = match shape {
            0 => "__VET1__ saw the dog at __CLINIC1__",
            1 => "__OWNER1__ of __CITY1__ called __VET1__ about the cat",
            2 => "referred by __VET1__ to __VET2__ at __CLINIC1__",
            _ => "__OWNER1__ collected the medication from __CLINIC1__ in __CITY1__",
        };
        let template = Template {
            text: text.to_string(),
            seed_id: Some("s1".into()),
            constraints: Default::default(),
            repeat_bearing: false,
        };
        let pools = fill_pools();
        let (note, records) = fill_template(&template, &pools, seed).unwrap();

        // Every span is exactly its substring, labels match roles.
        for (record, span) in records.iter().zip(&note.spans) {
            let surface = char_substring(&note.sentence, span.start, span.end).unwrap();
            prop_assert_eq!(surface, span.entity.as_str());
            prop_assert_eq!(record.surface.as_str(), span.entity.as_str());
        }
        // Distinct placeholders received distinct surfaces (case-folded).
        let mut folded: Vec<String> = records.iter().map(|r| r.surface.to_lowercase()).collect();
        folded.sort();
        let before = folded.len();
        folded.dedup();
        prop_assert_eq!(folded.len(), before);

        // Masking the filled note yields a template with the same
        // number of placeholders in the same order of labels.
        let masked = mask_note(&note);
        let bindings = masked.placeholders();
        prop_assert_eq!(bindings.len(), note.spans.len());
        for (binding, span) in bindings.iter().zip(&note.spans) {
            prop_assert_eq!(binding.label, span.label);
        }

        // Determinism: same seed, same note.
        let (again, _) = fill_template(&template, &pools, seed).unwrap();
        prop_assert_eq!(note, again);
    }
}
