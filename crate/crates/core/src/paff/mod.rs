//! The adaptation loop: play in the target setting, relabel what happened
//! with the relabeler (or the event log), keep confident labels, and
//! fine-tune the policy on them.

pub mod finetune;
pub mod play;
pub mod relabel;

pub use finetune::{finetune, FinetuneConfig, FinetuneStats};
pub use play::{
    load_jsonl, load_records, play, save_jsonl, save_records, PlayConfig, PlayOutcome, PlayStats,
    ResetMode, TransitionRecord, TRANSITION_SCHEMA_VERSION,
};
pub use relabel::{
    oracle_relabel, relabel_and_filter, CandidateScope, LabelSource, RelabelStats, RelabeledSample,
    SAMPLE_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grammar::Instruction;
use crate::policy::PolicyModel;
use crate::relabeler::{CandidateSet, RelabelerModel};
use crate::util::{canonical_json, derive_seed, digest_json, sha256_hex};
use crate::world::{Observation, PickPlaceAction, Renderer, WorldSplits};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelabelConfig {
    pub source: LabelSource,
    pub scope: CandidateScope,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaffConfig {
    pub play: PlayConfig,
    pub relabel: RelabelConfig,
    pub finetune: FinetuneConfig,
}

/// Stage-1 artifacts the loop starts from.
#[derive(Debug, Clone, Copy)]
pub struct PaffInputs<'a> {
    pub policy: &'a PolicyModel<f32>,
    pub relabeler: &'a RelabelerModel<f32>,
    pub candidates: &'a CandidateSet,
    /// Acceptance threshold on retrieval scores.
    pub theta: f64,
    /// Stage-1 examples for the optional mix-in.
    pub stage1: &'a [(Observation, Instruction, PickPlaceAction)],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaffReport {
    pub seed: u64,
    pub config_fingerprint: String,
    pub play: PlayStats,
    pub records_hash: String,
    pub relabel: RelabelStats,
    pub samples_hash: String,
    pub finetune: FinetuneStats,
    pub policy_before: String,
    pub policy_after: String,
    pub relabeler: String,
}

#[derive(Debug, Clone)]
pub struct PaffOutcome {
    pub policy: PolicyModel<f32>,
    pub report: PaffReport,
    pub records: Vec<TransitionRecord>,
    pub samples: Vec<RelabeledSample>,
}

/// SHA-256 over the JSON lines of `items`.
pub fn jsonl_hash<T: Serialize>(items: &[T]) -> String {
    let mut text = String::new();
    for item in items {
        text.push_str(&canonical_json(item));
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

/// Play, relabel and fine-tune. Every stage draws its randomness from
/// `seed`; failures name the stage that raised them.
pub fn run_paff(
    inputs: PaffInputs,
    config: &PaffConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> Result<PaffOutcome> {
    let played = play(
        inputs.policy,
        &config.play,
        splits,
        renderer,
        derive_seed(seed, "paff/play"),
    )
    .map_err(|e| e.in_stage("play"))?;
    log::info!(
        "play: {} records, {} container moves, {} no-ops",
        played.stats.records,
        played.stats.container_moves,
        played.stats.noops
    );
    let (samples, relabel_stats) = match config.relabel.source {
        LabelSource::Model => relabel_and_filter(
            &played.records,
            inputs.relabeler,
            inputs.candidates,
            inputs.theta,
            config.relabel.scope,
            splits,
        )
        .map_err(|e| e.in_stage("relabel"))?,
        LabelSource::Oracle => oracle_relabel(&played.records, splits),
    };
    log::info!(
        "relabel: kept {} of {} (precision {:?})",
        relabel_stats.kept,
        relabel_stats.total,
        relabel_stats.kept_precision
    );
    let (trained, finetune_stats) = finetune(
        inputs.policy.clone(),
        &samples,
        inputs.stage1,
        &config.finetune,
        derive_seed(seed, "paff/finetune"),
    )
    .map_err(|e| e.in_stage("finetune"))?;
    let report = PaffReport {
        seed,
        config_fingerprint: digest_json(config),
        play: played.stats.clone(),
        records_hash: jsonl_hash(&played.records),
        relabel: relabel_stats,
        samples_hash: jsonl_hash(&samples),
        finetune: finetune_stats,
        policy_before: inputs.policy.params.content_hash(),
        policy_after: trained.model.params.content_hash(),
        relabeler: inputs.relabeler.params.content_hash(),
    };
    Ok(PaffOutcome {
        policy: trained.model,
        report,
        records: played.records,
        samples,
    })
}
