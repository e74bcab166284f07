//! Ablation grids: one varied axis, several seeds, mean and range per value.

use serde::{Deserialize, Serialize};

use super::pipeline::{calibrate, candidate_set, ArtifactCache};
use super::report::{evaluate, EvalConfig};
use super::run::{held_out_success, RunConfig};
use crate::error::{Error, Result};
use crate::grammar::Family;
use crate::paff::{run_paff, CandidateScope, PaffInputs};
use crate::relabeler::{evaluate_retrieval, transition_dataset, FusionMode};
use crate::util::derive_seed;

pub const ABLATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    NDemos,
    FusionMode,
    CandidateScope,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n-demos" => Ok(AblationAxis::NDemos),
            "fusion-mode" => Ok(AblationAxis::FusionMode),
            "candidate-scope" => Ok(AblationAxis::CandidateScope),
            other => Err(Error::Config(format!("unknown ablation axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
    /// Values of the `n-demos` axis.
    pub n_demos: Vec<usize>,
    /// Demos per placement family of held-out-theme transitions on which
    /// relabel accuracy is measured.
    pub shift_demos: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            axis: AblationAxis::NDemos,
            seeds: (0..5).collect(),
            n_demos: vec![10, 20, 40],
            shift_demos: 20,
        }
    }
}

/// One value on an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "value")]
pub enum AxisValue {
    NDemos(usize),
    FusionMode(FusionMode),
    CandidateScope(CandidateScope),
}

impl AxisValue {
    pub fn label(&self) -> String {
        match self {
            AxisValue::NDemos(n) => n.to_string(),
            AxisValue::FusionMode(m) => m.to_string(),
            AxisValue::CandidateScope(CandidateScope::Global) => "global".into(),
            AxisValue::CandidateScope(CandidateScope::SceneFiltered) => "scene-filtered".into(),
        }
    }

    /// `base` with this value applied.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match *self {
            AxisValue::NDemos(n) => c.paff.play.n_demos = n,
            AxisValue::FusionMode(m) => c.relabeler.model.fusion = m,
            AxisValue::CandidateScope(s) => c.paff.relabel.scope = s,
        }
        c
    }
}

impl AblationConfig {
    pub fn values(&self) -> Vec<AxisValue> {
        match self.axis {
            AblationAxis::NDemos => self.n_demos.iter().map(|&n| AxisValue::NDemos(n)).collect(),
            AblationAxis::FusionMode => [
                FusionMode::TemporalAdapter,
                FusionMode::ChannelConcat,
                FusionMode::FrameDifference,
            ]
            .into_iter()
            .map(AxisValue::FusionMode)
            .collect(),
            AblationAxis::CandidateScope => [CandidateScope::Global, CandidateScope::SceneFiltered]
                .into_iter()
                .map(AxisValue::CandidateScope)
                .collect(),
        }
    }
}

/// Metrics of one (value, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub value: AxisValue,
    pub seed: u64,
    /// Mean protocol-B success of the deployed policy over the play families.
    pub held_out_success: f64,
    /// False when the filter kept no relabeled samples and the stage-1
    /// policy was evaluated unchanged.
    pub adapted: bool,
    /// Relabel accuracy on held-out-theme expert transitions.
    pub shift_accuracy: f64,
    pub relabel_precision: Option<f64>,
    pub kept: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        Some(Stat {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub value: AxisValue,
    pub label: String,
    pub runs: usize,
    pub held_out_success: Option<Stat>,
    pub shift_accuracy: Option<Stat>,
    pub relabel_precision: Option<Stat>,
    /// Runs whose filter kept nothing, so the stage-1 policy stood in.
    pub unadapted: usize,
    /// Failed seeds and their errors.
    pub errors: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub schema_version: u32,
    pub axis: AblationAxis,
    pub base_fingerprint: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn cell(&self, label: &str) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.label == label)
    }

    pub fn failed(&self) -> bool {
        self.cells.iter().any(|c| !c.errors.is_empty())
    }
}

/// Runs play, relabel and fine-tune for one value and seed, starting from
/// cached stage-1 artifacts.
pub fn run_cell(
    base: &RunConfig,
    value: AxisValue,
    seed: u64,
    shift_demos: usize,
    cache: &ArtifactCache,
) -> Result<AblationRun> {
    let mut cfg = value.apply(base);
    cfg.seed = seed;
    let (splits, renderer) = (&cfg.splits, &cfg.renderer);
    let policy = cache.policy(&cfg.policy, splits, renderer, seed)?;
    let relabeler = cache.relabeler(&cfg.relabeler, splits, renderer, seed)?;
    let candidates = candidate_set(&relabeler, splits)?;
    let cal = calibrate(
        &relabeler,
        &candidates,
        &cfg.calibration,
        splits,
        renderer,
        seed,
    )?;
    let inputs = PaffInputs {
        policy: &policy,
        relabeler: &relabeler,
        candidates: &candidates,
        theta: cal.theta,
        stage1: &[],
    };
    if cfg.paff.finetune.mix_in > 0.0 {
        return Err(Error::Config("ablations run without stage-1 mix-in".into()));
    }
    let shift = transition_dataset(
        &Family::PLACEMENT,
        shift_demos,
        5,
        &[splits.unseen_theme],
        splits,
        derive_seed(seed, "ablation/shift"),
    )?;
    let shift_accuracy = evaluate_retrieval(&relabeler, &shift, &candidates, renderer)?.accuracy;
    let (deployed, relabel_precision, kept) =
        match run_paff(inputs, &cfg.paff, splits, renderer, seed) {
            Ok(out) => (
                Some(out.policy),
                out.report.relabel.kept_precision,
                out.report.relabel.kept,
            ),
            Err(e) if matches!(e.root(), Error::NoSamples) => {
                log::warn!(
                    "{} seed {seed}: filter kept nothing, deploying the stage-1 policy",
                    value.label()
                );
                (None, None, 0)
            }
            Err(e) => return Err(e),
        };
    let eval = EvalConfig {
        families: cfg.paff.play.families.clone(),
        chain_themes: vec![],
        ..cfg.eval.clone()
    };
    let report = evaluate(
        deployed.as_ref().unwrap_or(&policy),
        &eval,
        splits,
        renderer,
        cfg.eval_seed(),
    )?;
    Ok(AblationRun {
        value,
        seed,
        held_out_success: held_out_success(&report, &cfg)
            .ok_or_else(|| Error::Config("no play families".into()))?,
        adapted: deployed.is_some(),
        shift_accuracy,
        relabel_precision,
        kept,
    })
}

/// Runs every (value, seed) cell. A failing run is recorded in its cell
/// and the rest of the table is still filled in.
pub fn run_ablation(
    base: &RunConfig,
    config: &AblationConfig,
    cache: &ArtifactCache,
) -> Result<AblationTable> {
    if config.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let values = config.values();
    if values.is_empty() {
        return Err(Error::Config("ablation axis has no values".into()));
    }
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for value in values {
        let mut errors = Vec::new();
        let mut mine = Vec::new();
        for &seed in &config.seeds {
            match run_cell(base, value, seed, config.shift_demos, cache) {
                Ok(r) => mine.push(r),
                Err(e) => {
                    log::warn!("ablation {} seed {seed}: {e}", value.label());
                    errors.push((seed, e.to_string()));
                }
            }
        }
        let col = |f: fn(&AblationRun) -> Option<f64>| -> Vec<f64> {
            mine.iter().filter_map(f).collect()
        };
        cells.push(AblationCell {
            value,
            label: value.label(),
            runs: mine.len(),
            held_out_success: Stat::of(&col(|r| Some(r.held_out_success))),
            shift_accuracy: Stat::of(&col(|r| Some(r.shift_accuracy))),
            relabel_precision: Stat::of(&col(|r| r.relabel_precision)),
            unadapted: mine.iter().filter(|r| !r.adapted).count(),
            errors,
        });
        runs.extend(mine);
    }
    Ok(AblationTable {
        schema_version: ABLATION_SCHEMA_VERSION,
        axis: config.axis,
        base_fingerprint: base.fingerprint(),
        seeds: config.seeds.clone(),
        cells,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_is_mean_and_range() {
        let s = Stat::of(&[0.2, 0.6, 0.4]).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-12);
        assert!((s.range() - 0.4).abs() < 1e-12);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn axes_enumerate_their_values() {
        let mut c = AblationConfig::default();
        assert_eq!(c.values().len(), 3);
        c.axis = AblationAxis::FusionMode;
        assert_eq!(c.values()[2].label(), "frame-difference");
        c.axis = AblationAxis::CandidateScope;
        let base = RunConfig::default();
        assert_eq!(
            c.values()[1].apply(&base).paff.relabel.scope,
            CandidateScope::SceneFiltered
        );
    }
}
