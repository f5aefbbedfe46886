//! Run configuration: a TOML file with sections for paths, screening,
//! mixture, budget, and reporting. Every key can be overridden by a
//! command-line flag; flags win over the file, which wins over
//! built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use deidkit_core::mixtures::{MixtureSpec, Regime, TrainingBudget};
use deidkit_core::screening::ScreeningConfig;
use deidkit_core::templating::{EntityPool, Template};

/// Input and output locations for the pipeline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub real: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub pools: Option<PathBuf>,
    /// Optional seed notes screened against during deduplication.
    pub seeds: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Serializable screening knobs (the detector set stays built in).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreeningSection {
    pub near_dup_threshold: Option<f64>,
    pub shingle_size: Option<usize>,
}

/// Mixture parameters; only the regime-relevant fields may be set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub regime: Option<Regime>,
    pub f: Option<f64>,
    pub r: Option<f64>,
    pub n: Option<usize>,
    pub nu: Option<f64>,
}

/// Compute-matched training budget.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub steps: Option<usize>,
    pub batch: Option<usize>,
}

/// Report output preferences.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub format: Option<String>,
}

/// The whole config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: Option<u64>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub screening: ScreeningSection,
    #[serde(default)]
    pub mixture: MixtureSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub report: ReportSection,
}

impl RunConfig {
    /// Load a config file, or produce the empty default when no path
    /// is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("cannot parse config {}", path.display()))
            }
        }
    }

    /// Resolve screening knobs: flags beat the file, which beats the
    /// module defaults.
    pub fn screening(
        &self,
        threshold_flag: Option<f64>,
        shingle_flag: Option<usize>,
    ) -> Result<ScreeningConfig> {
        let default = ScreeningConfig::default();
        let threshold = threshold_flag
            .or(self.screening.near_dup_threshold)
            .unwrap_or(default.near_dup_threshold);
        let shingle = shingle_flag
            .or(self.screening.shingle_size)
            .unwrap_or(default.shingle_size);
        Ok(ScreeningConfig::new(threshold, shingle)?)
    }

    /// Resolve a mixture spec from config plus flag overrides. The
    /// seed is mandatory: sampling without a recorded seed is not
    /// reproducible and therefore not allowed.
    #[allow(clippy::too_many_arguments)]
    pub fn mixture_spec(
        &self,
        regime: Option<Regime>,
        f: Option<f64>,
        r: Option<f64>,
        n: Option<usize>,
        nu: Option<f64>,
        seed: Option<u64>,
    ) -> Result<MixtureSpec> {
        let Some(regime) = regime.or(self.mixture.regime) else {
            bail!("no mixture regime given (flag --regime or config [mixture].regime)");
        };
        let Some(rng_seed) = seed.or(self.rng_seed) else {
            bail!("sampling requires a seed (flag --seed or config rng_seed)");
        };
        Ok(MixtureSpec {
            regime,
            f: f.or(self.mixture.f),
            r: r.or(self.mixture.r),
            n: n.or(self.mixture.n),
            nu: nu.or(self.mixture.nu),
            rng_seed,
        })
    }

    /// Resolve the training budget for compute-matched plans.
    pub fn budget(&self, steps: Option<usize>, batch: Option<usize>) -> Result<TrainingBudget> {
        let steps = steps
            .or(self.budget.steps)
            .context("compute-matched plans need --steps or config [budget].steps")?;
        let batch = batch
            .or(self.budget.batch)
            .context("compute-matched plans need --batch or config [budget].batch")?;
        Ok(TrainingBudget { steps, batch })
    }

    /// The effective configuration as a JSON value, echoed into output
    /// metadata so artifacts carry their own provenance.
    pub fn effective_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Load entity pools from a TOML file with `[sources.ROLE]` tables:
/// either `surfaces = [...]` or `generator = { patterns = [...] }`.
pub fn load_pools(path: &Path) -> Result<EntityPool> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read pools {}", path.display()))?;
    let pools: EntityPool =
        toml::from_str(&text).with_context(|| format!("cannot parse pools {}", path.display()))?;
    Ok(pools)
}

/// Load templates from JSONL, one template object per line.
pub fn load_templates(path: &Path) -> Result<Vec<Template>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read templates {}", path.display()))?;
    let mut templates = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let template: Template = serde_json::from_str(line).with_context(|| {
            format!("templates {} line {}: bad template", path.display(), lineno + 1)
        })?;
        templates.push(template);
    }
    Ok(templates)
}

/// Serialize templates as JSONL.
pub fn templates_to_jsonl(templates: &[Template]) -> String {
    let mut out = String::new();
    for template in templates {
        out.push_str(&serde_json::to_string(template).expect("template serializes"));
        out.push('\n');
    }
    out
}
