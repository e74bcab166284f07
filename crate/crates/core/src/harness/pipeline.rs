//! Stage-1 training, calibration and an on-disk artifact cache keyed by
//! configuration fingerprints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{enumerate_all_shapes, Family, Instruction};
use crate::learn::Checkpoint;
use crate::policy::{generate_demos, train_policy, PolicyConfig, PolicyModel, PolicyTrainConfig};
use crate::relabeler::{
    calibrate_threshold, caption_dataset, evaluate_retrieval, train_relabeler, transition_dataset,
    Calibration, CandidateSet, RelabelerConfig, RelabelerModel, RelabelerTrainConfig,
};
use crate::util::{derive_seed, digest_json};
use crate::world::{derive_rng, Observation, PickPlaceAction, Renderer, ThemeId, WorldSplits};

pub type PolicySample = (Observation, Instruction, PickPlaceAction);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyStageConfig {
    pub families: Vec<Family>,
    /// Expert demos per family.
    pub demos: usize,
    pub steps: usize,
    pub model: PolicyConfig,
    pub train: PolicyTrainConfig,
}

impl Default for PolicyStageConfig {
    fn default() -> Self {
        PolicyStageConfig {
            families: vec![Family::PackShapes, Family::PutBlocksInBowls],
            demos: 100,
            steps: 5,
            model: PolicyConfig::default(),
            train: PolicyTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelabelerStageConfig {
    pub model: RelabelerConfig,
    pub train: RelabelerTrainConfig,
    /// Themes of the captioned pretraining frames.
    pub caption_themes: Vec<ThemeId>,
    pub captions_per_pair: usize,
    /// Families of the labeled transitions the adapter trains on.
    pub families: Vec<Family>,
    pub demos: usize,
    pub steps: usize,
}

impl Default for RelabelerStageConfig {
    fn default() -> Self {
        RelabelerStageConfig {
            model: RelabelerConfig::default(),
            train: RelabelerTrainConfig::default(),
            caption_themes: vec![0, 1, 2, 3],
            captions_per_pair: 8,
            families: vec![Family::PackShapes, Family::PutBlocksInBowls],
            demos: 100,
            steps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub target_precision: f64,
    /// Families of the validation transitions, played by the expert in the
    /// seen themes.
    pub families: Vec<Family>,
    pub demos: usize,
    pub steps: usize,
    /// A fixed threshold that skips calibration.
    pub theta: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            target_precision: 0.98,
            families: Family::PLACEMENT.to_vec(),
            demos: 40,
            steps: 5,
            theta: None,
        }
    }
}

/// Rendered expert examples for stage-1 imitation.
pub fn policy_samples(
    config: &PolicyStageConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> Result<Vec<PolicySample>> {
    generate_demos(
        &config.families,
        config.demos,
        config.steps,
        &splits.seen_themes,
        splits,
        derive_seed(seed, "stage1/demos"),
    )?
    .into_iter()
    .map(|d| Ok((d.render(renderer)?, d.instruction, d.action)))
    .collect()
}

pub fn train_stage1_policy(
    config: &PolicyStageConfig,
    samples: &[PolicySample],
    seed: u64,
) -> Result<(PolicyModel<f32>, Vec<f64>)> {
    let model = PolicyModel::new(
        config.model.clone(),
        &mut derive_rng(seed, "stage1/policy-init"),
    )?;
    let out = train_policy(
        model,
        samples,
        &config.train,
        derive_seed(seed, "stage1/policy-train"),
    )?;
    Ok((out.model, out.losses))
}

pub fn train_stage1_relabeler(
    config: &RelabelerStageConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> Result<(RelabelerModel<f32>, Vec<f64>, Vec<f64>)> {
    let data_seed = derive_seed(seed, "stage1/relabeler-data");
    let captions = caption_dataset(
        splits,
        &config.caption_themes,
        config.captions_per_pair,
        data_seed,
    )?;
    let transitions = transition_dataset(
        &config.families,
        config.demos,
        config.steps,
        &splits.seen_themes,
        splits,
        data_seed,
    )?;
    let model = RelabelerModel::new(
        config.model.clone(),
        &mut derive_rng(seed, "stage1/relabeler-init"),
    )?;
    let out = train_relabeler(
        model,
        &captions,
        &transitions,
        renderer,
        &config.train,
        derive_seed(seed, "stage1/relabeler-train"),
    )?;
    Ok((out.model, out.phase_a_losses, out.phase_b_losses))
}

/// The relabeling candidates: every placement production over all shapes.
pub fn candidate_set(model: &RelabelerModel<f32>, splits: &WorldSplits) -> Result<CandidateSet> {
    CandidateSet::new(model, enumerate_all_shapes(&Family::PLACEMENT, splits))
}

/// Calibrates the acceptance threshold on expert validation transitions,
/// or returns the fixed threshold when one is configured.
pub fn calibrate(
    model: &RelabelerModel<f32>,
    candidates: &CandidateSet,
    config: &CalibrationConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> Result<Calibration> {
    if let Some(theta) = config.theta {
        return Ok(Calibration {
            theta,
            precision: f64::NAN,
            kept: 0,
            total: 0,
            attainable: true,
            enough_correct: true,
        });
    }
    let validation = transition_dataset(
        &config.families,
        config.demos,
        config.steps,
        &splits.seen_themes,
        splits,
        derive_seed(seed, "stage1/calibration"),
    )?;
    let scored = evaluate_retrieval(model, &validation, candidates, renderer)?.scored;
    calibrate_threshold(&scored, config.target_precision)
}

/// Fingerprint of everything that determines a stage-1 policy.
pub fn policy_fingerprint(
    config: &PolicyStageConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> String {
    digest_json(&(config, splits, renderer, seed))
}

pub fn relabeler_fingerprint(
    config: &RelabelerStageConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> String {
    digest_json(&(config, splits, renderer, seed))
}

fn read_checkpoint(path: &Path, fingerprint: Option<&str>) -> Result<Checkpoint<f32>> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    match fingerprint {
        Some(fp) if ckpt.fingerprint != fp => Err(Error::Integrity(format!(
            "{} holds fingerprint {}, expected {fp}",
            path.display(),
            ckpt.fingerprint
        ))),
        _ => Ok(ckpt),
    }
}

/// Loads policy weights, checking them against the layout `config` builds.
pub fn load_policy(
    path: &Path,
    config: &PolicyConfig,
    fingerprint: Option<&str>,
) -> Result<PolicyModel<f32>> {
    let ckpt = read_checkpoint(path, fingerprint)?;
    let fresh = PolicyModel::<f32>::new(config.clone(), &mut derive_rng(0, "layout"))?;
    fresh.params.check_same_layout(&ckpt.params)?;
    Ok(PolicyModel {
        config: config.clone(),
        params: ckpt.params,
    })
}

pub fn load_relabeler(
    path: &Path,
    config: &RelabelerConfig,
    fingerprint: Option<&str>,
) -> Result<RelabelerModel<f32>> {
    let ckpt = read_checkpoint(path, fingerprint)?;
    let fresh = RelabelerModel::<f32>::new(config.clone(), &mut derive_rng(0, "layout"))?;
    fresh.params.check_same_layout(&ckpt.params)?;
    Ok(RelabelerModel {
        config: config.clone(),
        params: ckpt.params,
    })
}

/// Checkpoints of trained stage-1 models, named by the fingerprint of
/// everything that determines them. A hit skips training.
#[derive(Debug, Clone)]
pub struct ArtifactCache {
    pub dir: PathBuf,
}

impl ArtifactCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ArtifactCache { dir })
    }

    pub fn path(&self, kind: &str, fingerprint: &str) -> PathBuf {
        self.dir.join(format!("{kind}-{fingerprint}.ckpt"))
    }

    pub fn policy(
        &self,
        config: &PolicyStageConfig,
        splits: &WorldSplits,
        renderer: &Renderer,
        seed: u64,
    ) -> Result<PolicyModel<f32>> {
        let fp = policy_fingerprint(config, splits, renderer, seed);
        let path = self.path("policy", &fp);
        if path.exists() {
            return load_policy(&path, &config.model, Some(&fp));
        }
        let samples = policy_samples(config, splits, renderer, seed)?;
        let (model, losses) = train_stage1_policy(config, &samples, seed)?;
        Checkpoint::new(
            fp,
            serde_json::json!({ "losses": losses }),
            model.params.clone(),
        )
        .save(&path)?;
        Ok(model)
    }

    pub fn relabeler(
        &self,
        config: &RelabelerStageConfig,
        splits: &WorldSplits,
        renderer: &Renderer,
        seed: u64,
    ) -> Result<RelabelerModel<f32>> {
        let fp = relabeler_fingerprint(config, splits, renderer, seed);
        let path = self.path("relabeler", &fp);
        if path.exists() {
            return load_relabeler(&path, &config.model, Some(&fp));
        }
        let (model, a, b) = train_stage1_relabeler(config, splits, renderer, seed)?;
        Checkpoint::new(
            fp,
            serde_json::json!({ "phase_a": a, "phase_b": b }),
            model.params.clone(),
        )
        .save(&path)?;
        Ok(model)
    }
}
