//! Seeded construction of training-set mixtures from a real corpus and
//! a synthetic pool.
//!
//! Three regimes are supported: `augment` keeps every real note and
//! adds synthetic notes to hit a target synthetic fraction, `fixed_n`
//! holds the total constant and substitutes synthetic for real, and
//! `compute_matched` emits a with-replacement example sequence for a
//! fixed optimizer budget. Plans carry note ids, not note bodies, so
//! they stay small and auditable.
//!
//! All randomness comes from the documented generator in [`crate::rng`]
//! with one derived stream per sampling task (stream 0: real selection,
//! 1: synthetic PII, 2: synthetic no-PII, 3: the with-replacement
//! sequence), so a plan is a pure function of (corpora, spec, budget).

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Provenance};
use crate::rng::{SplitMix64, PRNG_NAME};
use crate::rounding::round_half_away_from_zero;

const STREAM_REAL: u64 = 0;
const STREAM_SYN_PII: u64 = 1;
const STREAM_SYN_NOPII: u64 = 2;
const STREAM_SEQUENCE: u64 = 3;

/// Which mixing regime a spec requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Augment,
    FixedN,
    ComputeMatched,
}

/// Declarative description of one mixture.
///
/// Only the fields relevant to the regime may be set: `f` for augment
/// and compute_matched, `r` and `n` for fixed_n. `nu` is the no-PII
/// fraction of the synthetic allotment and defaults to the pool's own
/// no-PII share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub rng_seed: u64,
}

/// Optimizer budget for compute-matched planning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingBudget {
    pub steps: usize,
    pub batch: usize,
}

/// Errors from spec validation and planning.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixtureError {
    #[error("invalid mixture spec: {0}")]
    BadSpec(String),
    #[error("{subset} pool has {available} notes but {needed} are needed")]
    InsufficientPool {
        subset: String,
        needed: usize,
        available: usize,
    },
    #[error("real corpus has {available} notes but {needed} are needed")]
    InsufficientReal { needed: usize, available: usize },
    #[error("source {0} is empty but the plan must draw from it")]
    EmptySource(String),
    #[error("note {id} in the {corpus} corpus has provenance {found}")]
    WrongProvenance {
        corpus: String,
        id: String,
        found: String,
    },
}

impl MixtureSpec {
    /// Enforce the exactly-the-relevant-fields rule and value ranges.
    pub fn validate(&self) -> Result<(), MixtureError> {
        let bad = |msg: &str| Err(MixtureError::BadSpec(msg.to_string()));
        match self.regime {
            Regime::Augment | Regime::ComputeMatched => {
                let Some(f) = self.f else {
                    return bad("f is required for this regime");
                };
                if !(0.0..1.0).contains(&f) {
                    return bad("f must lie in [0, 1)");
                }
                if self.r.is_some() || self.n.is_some() {
                    return bad("r and n apply only to the fixed_n regime");
                }
            }
            Regime::FixedN => {
                let Some(r) = self.r else {
                    return bad("r is required for the fixed_n regime");
                };
                if !(r > 0.0 && r <= 1.0) {
                    return bad("r must lie in (0, 1]");
                }
                if self.n.is_none() {
                    return bad("n is required for the fixed_n regime");
                }
                if self.f.is_some() {
                    return bad("f applies only to augment and compute_matched");
                }
            }
        }
        if let Some(nu) = self.nu {
            if !(0.0..=1.0).contains(&nu) {
                return bad("nu must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// One selected example: a note id and which source it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedId {
    pub id: String,
    pub source: Provenance,
}

/// Realized composition counts of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanCounts {
    pub n_real: usize,
    pub n_syn: usize,
    pub n_syn_nopii: usize,
    pub realized_synthetic_fraction: f64,
}

/// A materialized mixture: spec echo, counts, and the chosen ids.
///
/// For the without-replacement regimes `ids` is the full plan, listed
/// real first, then synthetic PII, then synthetic no-PII, each section
/// in source-corpus order. For compute_matched the payload is instead
/// `sequence`, the with-replacement example stream of length
/// steps×batch, and `ids` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub spec: MixtureSpec,
    pub counts: PlanCounts,
    pub ids: Vec<PlannedId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<Vec<PlannedId>>,
    pub rng_seed: u64,
    pub prng_name: String,
}

fn check_provenance(
    corpus: &Corpus,
    corpus_name: &str,
    accept: &[Provenance],
) -> Result<(), MixtureError> {
    for note in &corpus.notes {
        if !accept.contains(&note.provenance) {
            return Err(MixtureError::WrongProvenance {
                corpus: corpus_name.to_string(),
                id: note.id.clone(),
                found: format!("{:?}", note.provenance),
            });
        }
    }
    Ok(())
}

/// Ids of the pool's PII-bearing and no-PII notes, in corpus order.
fn pool_subsets(pool: &Corpus) -> (Vec<&str>, Vec<&str>) {
    let mut pii = Vec::new();
    let mut nopii = Vec::new();
    for note in &pool.notes {
        match note.provenance {
            Provenance::SyntheticPii => pii.push(note.id.as_str()),
            Provenance::SyntheticNopii => nopii.push(note.id.as_str()),
            Provenance::Real => {}
        }
    }
    (pii, nopii)
}

fn effective_nu(spec: &MixtureSpec, pii: usize, nopii: usize) -> f64 {
    match spec.nu {
        Some(nu) => nu,
        None if pii + nopii > 0 => nopii as f64 / (pii + nopii) as f64,
        None => 0.0,
    }
}

/// Sample `k` ids without replacement, returned in source order.
fn sample_ids(
    ids: &[&str],
    k: usize,
    source: Provenance,
    rng: &mut SplitMix64,
) -> Vec<PlannedId> {
    let mut picks = rng.sample_indices(ids.len(), k);
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| PlannedId {
            id: ids[i].to_string(),
            source,
        })
        .collect()
}

/// Split a synthetic allotment of `n_syn` notes into (PII, no-PII)
/// counts and check both subsets can cover their share.
fn split_synthetic(
    n_syn: usize,
    nu: f64,
    pii_available: usize,
    nopii_available: usize,
) -> Result<(usize, usize), MixtureError> {
    let n_nopii = round_half_away_from_zero(nu * n_syn as f64) as usize;
    let n_nopii = n_nopii.min(n_syn);
    let n_pii = n_syn - n_nopii;
    if n_nopii > nopii_available {
        return Err(MixtureError::InsufficientPool {
            subset: "synthetic_nopii".to_string(),
            needed: n_nopii,
            available: nopii_available,
        });
    }
    if n_pii > pii_available {
        return Err(MixtureError::InsufficientPool {
            subset: "synthetic_pii".to_string(),
            needed: n_pii,
            available: pii_available,
        });
    }
    Ok((n_pii, n_nopii))
}

/// Keep all real notes and add synthetic ones to approach the target
/// synthetic fraction `f`, capped by the pool size.
///
/// The synthetic count is S = min(round(f/(1−f)·R), |pool|); when the
/// cap does not bind, S is the integer that brings S/(R+S) closest
/// to `f`.
pub fn plan_augment(
    real: &Corpus,
    pool: &Corpus,
    spec: &MixtureSpec,
) -> Result<MixturePlan, MixtureError> {
    spec.validate()?;
    if spec.regime != Regime::Augment {
        return Err(MixtureError::BadSpec(format!(
            "plan_augment called with regime {:?}",
            spec.regime
        )));
    }
    check_provenance(real, "real", &[Provenance::Real])?;
    check_provenance(
        pool,
        "pool",
        &[Provenance::SyntheticPii, Provenance::SyntheticNopii],
    )?;

    let f = spec.f.expect("validated");
    let n_real = real.len();
    let uncapped = round_half_away_from_zero(f / (1.0 - f) * n_real as f64) as usize;
    let n_syn = uncapped.min(pool.len());

    let (pii, nopii) = pool_subsets(pool);
    let nu = effective_nu(spec, pii.len(), nopii.len());
    let (n_pii, n_nopii) = split_synthetic(n_syn, nu, pii.len(), nopii.len())?;

    let mut ids: Vec<PlannedId> = real
        .notes
        .iter()
        .map(|n| PlannedId {
            id: n.id.clone(),
            source: Provenance::Real,
        })
        .collect();
    let mut pii_rng = SplitMix64::stream(spec.rng_seed, STREAM_SYN_PII);
    ids.extend(sample_ids(&pii, n_pii, Provenance::SyntheticPii, &mut pii_rng));
    let mut nopii_rng = SplitMix64::stream(spec.rng_seed, STREAM_SYN_NOPII);
    ids.extend(sample_ids(
        &nopii,
        n_nopii,
        Provenance::SyntheticNopii,
        &mut nopii_rng,
    ));

    Ok(MixturePlan {
        spec: spec.clone(),
        counts: PlanCounts {
            n_real,
            n_syn,
            n_syn_nopii: n_nopii,
            realized_synthetic_fraction: if n_real + n_syn == 0 {
                0.0
            } else {
                n_syn as f64 / (n_real + n_syn) as f64
            },
        },
        ids,
        sequence: None,
        rng_seed: spec.rng_seed,
        prng_name: PRNG_NAME.to_string(),
    })
}

/// Hold the total at `n` and substitute synthetic for real: round(r·n)
/// real notes, the remainder synthetic, both without replacement.
pub fn plan_fixed_n(
    real: &Corpus,
    pool: &Corpus,
    spec: &MixtureSpec,
) -> Result<MixturePlan, MixtureError> {
    spec.validate()?;
    if spec.regime != Regime::FixedN {
        return Err(MixtureError::BadSpec(format!(
            "plan_fixed_n called with regime {:?}",
            spec.regime
        )));
    }
    check_provenance(real, "real", &[Provenance::Real])?;
    check_provenance(
        pool,
        "pool",
        &[Provenance::SyntheticPii, Provenance::SyntheticNopii],
    )?;

    let r = spec.r.expect("validated");
    let n = spec.n.expect("validated");
    let n_real = round_half_away_from_zero(r * n as f64) as usize;
    let n_real = n_real.min(n);
    let n_syn = n - n_real;
    if n_real > real.len() {
        return Err(MixtureError::InsufficientReal {
            needed: n_real,
            available: real.len(),
        });
    }
    if n_syn > pool.len() {
        return Err(MixtureError::InsufficientPool {
            subset: "synthetic".to_string(),
            needed: n_syn,
            available: pool.len(),
        });
    }

    let (pii, nopii) = pool_subsets(pool);
    let nu = effective_nu(spec, pii.len(), nopii.len());
    let (n_pii, n_nopii) = split_synthetic(n_syn, nu, pii.len(), nopii.len())?;

    let real_ids: Vec<&str> = real.notes.iter().map(|n| n.id.as_str()).collect();
    let mut real_rng = SplitMix64::stream(spec.rng_seed, STREAM_REAL);
    let mut ids = sample_ids(&real_ids, n_real, Provenance::Real, &mut real_rng);
    let mut pii_rng = SplitMix64::stream(spec.rng_seed, STREAM_SYN_PII);
    ids.extend(sample_ids(&pii, n_pii, Provenance::SyntheticPii, &mut pii_rng));
    let mut nopii_rng = SplitMix64::stream(spec.rng_seed, STREAM_SYN_NOPII);
    ids.extend(sample_ids(
        &nopii,
        n_nopii,
        Provenance::SyntheticNopii,
        &mut nopii_rng,
    ));

    Ok(MixturePlan {
        spec: spec.clone(),
        counts: PlanCounts {
            n_real,
            n_syn,
            n_syn_nopii: n_nopii,
            realized_synthetic_fraction: if n == 0 {
                0.0
            } else {
                n_syn as f64 / n as f64
            },
        },
        ids,
        sequence: None,
        rng_seed: spec.rng_seed,
        prng_name: PRNG_NAME.to_string(),
    })
}

/// Emit a with-replacement example sequence of length steps×batch.
///
/// Each slot independently draws synthetic with probability `f` (then
/// no-PII with probability `nu` inside the synthetic branch) and real
/// otherwise; `f = 0` reduces to oversampling the real corpus.
pub fn plan_compute_matched(
    real: &Corpus,
    pool: &Corpus,
    spec: &MixtureSpec,
    budget: &TrainingBudget,
) -> Result<MixturePlan, MixtureError> {
    spec.validate()?;
    if spec.regime != Regime::ComputeMatched {
        return Err(MixtureError::BadSpec(format!(
            "plan_compute_matched called with regime {:?}",
            spec.regime
        )));
    }
    if budget.steps < 1 || budget.batch < 1 {
        return Err(MixtureError::BadSpec(
            "steps and batch must both be at least 1".to_string(),
        ));
    }
    check_provenance(real, "real", &[Provenance::Real])?;
    check_provenance(
        pool,
        "pool",
        &[Provenance::SyntheticPii, Provenance::SyntheticNopii],
    )?;

    let f = spec.f.expect("validated");
    let (pii, nopii) = pool_subsets(pool);
    let nu = effective_nu(spec, pii.len(), nopii.len());
    if f < 1.0 && real.is_empty() {
        return Err(MixtureError::EmptySource("real".to_string()));
    }
    if f > 0.0 && nu < 1.0 && pii.is_empty() {
        return Err(MixtureError::EmptySource("synthetic_pii".to_string()));
    }
    if f > 0.0 && nu > 0.0 && nopii.is_empty() {
        return Err(MixtureError::EmptySource("synthetic_nopii".to_string()));
    }

    let real_ids: Vec<&str> = real.notes.iter().map(|n| n.id.as_str()).collect();
    let len = budget.steps * budget.batch;
    let mut rng = SplitMix64::stream(spec.rng_seed, STREAM_SEQUENCE);
    let mut sequence = Vec::with_capacity(len);
    let mut counts = PlanCounts {
        n_real: 0,
        n_syn: 0,
        n_syn_nopii: 0,
        realized_synthetic_fraction: 0.0,
    };
    for _ in 0..len {
        if rng.next_f64() < f {
            counts.n_syn += 1;
            if rng.next_f64() < nu {
                counts.n_syn_nopii += 1;
                let pick = nopii[rng.next_below(nopii.len() as u64) as usize];
                sequence.push(PlannedId {
                    id: pick.to_string(),
                    source: Provenance::SyntheticNopii,
                });
            } else {
                let pick = pii[rng.next_below(pii.len() as u64) as usize];
                sequence.push(PlannedId {
                    id: pick.to_string(),
                    source: Provenance::SyntheticPii,
                });
            }
        } else {
            counts.n_real += 1;
            let pick = real_ids[rng.next_below(real_ids.len() as u64) as usize];
            sequence.push(PlannedId {
                id: pick.to_string(),
                source: Provenance::Real,
            });
        }
    }
    counts.realized_synthetic_fraction = counts.n_syn as f64 / len as f64;

    Ok(MixturePlan {
        spec: spec.clone(),
        counts,
        ids: Vec::new(),
        sequence: Some(sequence),
        rng_seed: spec.rng_seed,
        prng_name: PRNG_NAME.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Note;
    use std::collections::HashSet;

    fn corpus(name: &str, prefix: &str, n: usize, provenance: Provenance) -> Corpus {
        let notes = (0..n)
            .map(|i| Note {
                id: format!("{prefix}{i:05}"),
                sentence: format!("note body {i}"),
                spans: vec![],
                provenance,
                seed_id: None,
            })
            .collect();
        Corpus {
            notes,
            subset_name: name.to_string(),
        }
    }

    /// A pool shaped like the full generated set: 2,978 PII-bearing and
    /// 7,404 no-PII notes (10,382 total).
    fn full_pool() -> Corpus {
        let mut pool = corpus("pool", "sp", 2978, Provenance::SyntheticPii);
        pool.notes
            .extend(corpus("x", "sn", 7404, Provenance::SyntheticNopii).notes);
        pool
    }

    fn augment_spec(f: f64, seed: u64) -> MixtureSpec {
        MixtureSpec {
            regime: Regime::Augment,
            f: Some(f),
            r: None,
            n: None,
            nu: None,
            rng_seed: seed,
        }
    }

    #[test]
    fn augment_sweep_reproduces_published_sizes() {
        let real = corpus("real", "r", 1249, Provenance::Real);
        let pool = full_pool();
        // (f, expected synthetic, expected total, realized % to 1 dp)
        let rows = [
            (0.0, 0usize, 1249usize, 0.0),
            (0.25, 416, 1665, 25.0),
            (0.50, 1249, 2498, 50.0),
            (0.75, 3747, 4996, 75.0),
            (0.90, 10382, 11631, 89.3),
        ];
        for (f, want_syn, want_total, want_pct) in rows {
            let plan = plan_augment(&real, &pool, &augment_spec(f, 7)).unwrap();
            assert_eq!(plan.counts.n_real, 1249, "f={f}");
            assert_eq!(plan.counts.n_syn, want_syn, "f={f}");
            assert_eq!(plan.ids.len(), want_total, "f={f}");
            let pct = (plan.counts.realized_synthetic_fraction * 1000.0).round() / 10.0;
            assert_eq!(pct, want_pct, "f={f}");
        }
    }

    #[test]
    fn augment_count_is_locally_optimal_when_uncapped() {
        let real = corpus("real", "r", 1249, Provenance::Real);
        let pool = full_pool();
        let n_real = 1249f64;
        for f in [0.25, 0.50, 0.75] {
            let plan = plan_augment(&real, &pool, &augment_spec(f, 7)).unwrap();
            let s = plan.counts.n_syn as i64;
            let err = |cand: i64| (cand as f64 / (n_real + cand as f64) - f).abs();
            for cand in s - 2..=s + 2 {
                if cand >= 0 {
                    assert!(
                        err(s) <= err(cand) + 1e-15,
                        "f={f}: S={s} beaten by {cand}"
                    );
                }
            }
        }
    }

    #[test]
    fn fixed_n_substitution_counts_follow_rounding() {
        let real = corpus("real", "r", 1249, Provenance::Real);
        let pool = full_pool();
        let rows = [
            (1.00, 1249usize),
            (0.50, 625),
            (0.25, 312),
            (0.10, 125),
            (0.05, 62),
        ];
        for (r, want_real) in rows {
            let spec = MixtureSpec {
                regime: Regime::FixedN,
                f: None,
                r: Some(r),
                n: Some(1249),
                nu: None,
                rng_seed: 11,
            };
            let plan = plan_fixed_n(&real, &pool, &spec).unwrap();
            assert_eq!(plan.counts.n_real, want_real, "r={r}");
            assert_eq!(plan.counts.n_real + plan.counts.n_syn, 1249, "r={r}");
            assert_eq!(plan.ids.len(), 1249, "r={r}");
        }
    }

    #[test]
    fn fixed_n_small_example_is_exact() {
        let real = corpus("real", "r", 400, Provenance::Real);
        let pool = full_pool();
        let spec = MixtureSpec {
            regime: Regime::FixedN,
            f: None,
            r: Some(0.25),
            n: Some(1000),
            nu: None,
            rng_seed: 3,
        };
        let plan = plan_fixed_n(&real, &pool, &spec).unwrap();
        assert_eq!(plan.counts.n_real, 250);
        assert_eq!(plan.counts.n_syn, 750);
    }

    #[test]
    fn nu_split_is_honoured_and_reported() {
        let real = corpus("real", "r", 100, Provenance::Real);
        let pool = full_pool();
        let mut spec = augment_spec(0.5, 9);
        spec.nu = Some(0.5);
        let plan = plan_augment(&real, &pool, &spec).unwrap();
        assert_eq!(plan.counts.n_syn, 100);
        assert_eq!(plan.counts.n_syn_nopii, 50);
        let tagged: usize = plan
            .ids
            .iter()
            .filter(|p| p.source == Provenance::SyntheticNopii)
            .count();
        assert_eq!(tagged, 50);
    }

    #[test]
    fn insufficient_subsets_are_reported_with_counts() {
        let real = corpus("real", "r", 100, Provenance::Real);
        let mut pool = corpus("pool", "sp", 200, Provenance::SyntheticPii);
        pool.notes
            .extend(corpus("x", "sn", 3, Provenance::SyntheticNopii).notes);
        let mut spec = augment_spec(0.5, 9);
        spec.nu = Some(1.0);
        assert_eq!(
            plan_augment(&real, &pool, &spec).unwrap_err(),
            MixtureError::InsufficientPool {
                subset: "synthetic_nopii".to_string(),
                needed: 100,
                available: 3,
            }
        );

        let fixed = MixtureSpec {
            regime: Regime::FixedN,
            f: None,
            r: Some(1.0),
            n: Some(500),
            nu: None,
            rng_seed: 1,
        };
        assert_eq!(
            plan_fixed_n(&real, &pool, &fixed).unwrap_err(),
            MixtureError::InsufficientReal {
                needed: 500,
                available: 100,
            }
        );
    }

    #[test]
    fn without_replacement_plans_have_unique_ids() {
        let real = corpus("real", "r", 300, Provenance::Real);
        let pool = full_pool();
        let plan = plan_augment(&real, &pool, &augment_spec(0.75, 13)).unwrap();
        let unique: HashSet<&str> = plan.ids.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(unique.len(), plan.ids.len());
    }

    #[test]
    fn compute_matched_emits_full_budget_and_oversamples() {
        let real = corpus("real", "r", 1249, Provenance::Real);
        let pool = full_pool();
        let budget = TrainingBudget {
            steps: 4000,
            batch: 16,
        };
        let spec = MixtureSpec {
            regime: Regime::ComputeMatched,
            f: Some(0.0),
            r: None,
            n: None,
            nu: None,
            rng_seed: 5,
        };
        let plan = plan_compute_matched(&real, &pool, &spec, &budget).unwrap();
        let sequence = plan.sequence.as_ref().unwrap();
        assert_eq!(sequence.len(), 64_000);
        assert_eq!(plan.counts.n_real, 64_000);
        assert_eq!(plan.counts.n_syn, 0);
        // 64,000 draws from 1,249 notes must repeat.
        let unique: HashSet<&str> = sequence.iter().map(|p| p.id.as_str()).collect();
        assert!(unique.len() < sequence.len());
    }

    #[test]
    fn compute_matched_share_tracks_f_and_is_reproducible() {
        let real = corpus("real", "r", 1249, Provenance::Real);
        let pool = full_pool();
        let budget = TrainingBudget {
            steps: 4000,
            batch: 16,
        };
        let spec = MixtureSpec {
            regime: Regime::ComputeMatched,
            f: Some(0.5),
            r: None,
            n: None,
            nu: None,
            rng_seed: 21,
        };
        let plan = plan_compute_matched(&real, &pool, &spec, &budget).unwrap();
        // Binomial(64000, 0.5): mean 32,000, sd ~126.5; allow 3 sd.
        let n_syn = plan.counts.n_syn as f64;
        assert!((n_syn - 32_000.0).abs() <= 3.0 * (64_000.0f64 * 0.25).sqrt());

        let again = plan_compute_matched(&real, &pool, &spec, &budget).unwrap();
        assert_eq!(
            serde_json::to_string(&plan).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn distinct_seeds_give_distinct_plans() {
        let real = corpus("real", "r", 200, Provenance::Real);
        let pool = full_pool();
        let plans: HashSet<String> = (0..100)
            .map(|seed| {
                let plan = plan_augment(&real, &pool, &augment_spec(0.5, seed)).unwrap();
                serde_json::to_string(&plan.ids).unwrap()
            })
            .collect();
        assert_eq!(plans.len(), 100);
    }

    #[test]
    fn spec_validation_rejects_irrelevant_and_out_of_range_fields() {
        let mut spec = augment_spec(0.5, 1);
        spec.r = Some(0.5);
        assert!(matches!(spec.validate(), Err(MixtureError::BadSpec(_))));

        let bad_f = augment_spec(1.0, 1);
        assert!(matches!(bad_f.validate(), Err(MixtureError::BadSpec(_))));

        let bad_nu = MixtureSpec {
            nu: Some(1.5),
            ..augment_spec(0.5, 1)
        };
        assert!(matches!(bad_nu.validate(), Err(MixtureError::BadSpec(_))));

        let no_n = MixtureSpec {
            regime: Regime::FixedN,
            f: None,
            r: Some(0.5),
            n: None,
            nu: None,
            rng_seed: 1,
        };
        assert!(matches!(no_n.validate(), Err(MixtureError::BadSpec(_))));
    }

    #[test]
    fn plans_serialize_with_generator_name_and_spec_echo() {
        let real = corpus("real", "r", 10, Provenance::Real);
        let pool = full_pool();
        let plan = plan_augment(&real, &pool, &augment_spec(0.25, 2)).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        let back: MixturePlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        assert_eq!(back.prng_name, "splitmix64");
        assert_eq!(back.spec.f, Some(0.25));
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(value.get("counts").is_some());
        assert!(value.get("ids").is_some());
        assert!(value.get("sequence").is_none());
    }

    #[test]
    fn provenance_mismatches_are_refused() {
        let real = corpus("real", "r", 10, Provenance::Real);
        let fake_pool = corpus("pool", "p", 10, Provenance::Real);
        assert!(matches!(
            plan_augment(&real, &fake_pool, &augment_spec(0.25, 2)).unwrap_err(),
            MixtureError::WrongProvenance { .. }
        ));
    }
}
