//! Hindsight relabeling of play transitions and the acceptance filter.

use serde::{Deserialize, Serialize};

use super::TransitionRecord;
use crate::error::Result;
use crate::grammar::Instruction;
use crate::relabeler::{select, CandidateSet, RelabelerModel};
use crate::world::{oracle_instruction, Event, Observation, PickPlaceAction, WorldSplits};

pub const SAMPLE_SCHEMA_VERSION: u32 = 1;

/// Which candidates a transition is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateScope {
    /// The full candidate list.
    #[default]
    Global,
    /// Only candidates whose object and container appear in the pre-state.
    SceneFiltered,
}

impl std::str::FromStr for CandidateScope {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(CandidateScope::Global),
            "scene-filtered" => Ok(CandidateScope::SceneFiltered),
            other => Err(crate::Error::Config(format!(
                "unknown candidate scope `{other}`"
            ))),
        }
    }
}

/// Where relabeled instructions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Retrieval with the relabeler, filtered by the threshold.
    #[default]
    Model,
    /// The simulator's own event log; every labelable transition is kept.
    Oracle,
}

/// A new (observation, instruction, action) training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabeledSample {
    pub schema_version: u32,
    /// Index of the source record.
    pub record: usize,
    pub observation_t: Observation,
    pub observation_next: Observation,
    pub instruction: Instruction,
    pub action: PickPlaceAction,
    /// Retrieval score; oracle labels carry `inf`.
    #[serde(with = "crate::util::extended_f64")]
    pub score: f64,
    /// Whether the label equals the oracle's.
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelStats {
    pub source: LabelSource,
    pub scope: CandidateScope,
    #[serde(with = "crate::util::extended_f64")]
    pub theta: f64,
    pub total: usize,
    pub dropped_noop: usize,
    pub dropped_table: usize,
    /// Container moves that went through retrieval.
    pub retrieved: usize,
    pub kept: usize,
    /// Retrieved but below the threshold.
    pub dropped_threshold: usize,
    pub kept_fraction: f64,
    /// Label precision among kept samples, if any were kept.
    pub kept_precision: Option<f64>,
    /// Label precision among threshold-dropped retrievals, if any.
    pub dropped_precision: Option<f64>,
    /// Retrieval accuracy over every retrieved transition.
    pub retrieval_accuracy: Option<f64>,
    pub candidates_hash: Option<String>,
}

impl RelabelStats {
    fn new(source: LabelSource, scope: CandidateScope, theta: f64, total: usize) -> Self {
        RelabelStats {
            source,
            scope,
            theta,
            total,
            dropped_noop: 0,
            dropped_table: 0,
            retrieved: 0,
            kept: 0,
            dropped_threshold: 0,
            kept_fraction: 0.0,
            kept_precision: None,
            dropped_precision: None,
            retrieval_accuracy: None,
            candidates_hash: None,
        }
    }

    pub fn noop_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.dropped_noop as f64 / self.total as f64
        }
    }

    fn finish(&mut self, kept: &[bool], dropped: &[bool]) {
        let precision = |v: &[bool]| {
            (!v.is_empty()).then(|| v.iter().filter(|&&c| c).count() as f64 / v.len() as f64)
        };
        self.kept = kept.len();
        self.dropped_threshold = dropped.len();
        self.kept_fraction = if self.total == 0 {
            0.0
        } else {
            self.kept as f64 / self.total as f64
        };
        self.kept_precision = precision(kept);
        self.dropped_precision = precision(dropped);
        let all: Vec<bool> = kept.iter().chain(dropped).copied().collect();
        self.retrieval_accuracy = precision(&all);
    }
}

/// Splits off no-ops and table moves, which no production describes.
fn labelable(record: &TransitionRecord, stats: &mut RelabelStats) -> bool {
    match record.oracle_event {
        Event::NoOp => {
            stats.dropped_noop += 1;
            false
        }
        e if !e.is_container_move() => {
            stats.dropped_table += 1;
            false
        }
        _ => true,
    }
}

fn sample(
    index: usize,
    record: &TransitionRecord,
    instruction: Instruction,
    score: f64,
    correct: bool,
) -> RelabeledSample {
    RelabeledSample {
        schema_version: SAMPLE_SCHEMA_VERSION,
        record: index,
        observation_t: record.observation_t.clone(),
        observation_next: record.observation_next.clone(),
        instruction,
        action: record.action,
        score,
        correct,
    }
}

const CHUNK: usize = 256;

/// Retrieves an instruction for every container-destination transition and
/// keeps those scoring at least `theta`. Precision statistics compare each
/// retrieval with the oracle label of the recorded event.
pub fn relabel_and_filter(
    records: &[TransitionRecord],
    model: &RelabelerModel<f32>,
    candidates: &CandidateSet,
    theta: f64,
    scope: CandidateScope,
    splits: &WorldSplits,
) -> Result<(Vec<RelabeledSample>, RelabelStats)> {
    let mut stats = RelabelStats::new(LabelSource::Model, scope, theta, records.len());
    stats.candidates_hash = Some(candidates.hash());
    let todo: Vec<usize> = (0..records.len())
        .filter(|&i| labelable(&records[i], &mut stats))
        .collect();
    stats.retrieved = todo.len();
    let (mut samples, mut kept, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
    for chunk in todo.chunks(CHUNK) {
        let starts: Vec<&Observation> = chunk.iter().map(|&i| &records[i].observation_t).collect();
        let ends: Vec<&Observation> = chunk
            .iter()
            .map(|&i| &records[i].observation_next)
            .collect();
        let v = model.embed_transitions(&starts, &ends)?;
        for (row, &i) in v.rows().into_iter().zip(chunk) {
            let record = &records[i];
            let mask = match scope {
                CandidateScope::Global => None,
                CandidateScope::SceneFiltered => Some(candidates.scene_mask(&record.pre_state)),
            };
            let r = select(
                candidates.scores(row).view(),
                candidates,
                theta,
                mask.as_deref(),
            )?;
            let correct = oracle_instruction(&record.oracle_event, splits)
                .is_some_and(|o| o.surface == r.instruction.surface);
            if r.accepted {
                kept.push(correct);
                samples.push(sample(i, record, r.instruction, r.score, correct));
            } else {
                dropped.push(correct);
            }
        }
    }
    stats.finish(&kept, &dropped);
    Ok((samples, stats))
}

/// The upper-bound arm: labels come from the event log, no threshold.
pub fn oracle_relabel(
    records: &[TransitionRecord],
    splits: &WorldSplits,
) -> (Vec<RelabeledSample>, RelabelStats) {
    let mut stats = RelabelStats::new(
        LabelSource::Oracle,
        CandidateScope::Global,
        f64::NEG_INFINITY,
        records.len(),
    );
    let mut samples = Vec::new();
    let mut kept = Vec::new();
    for (i, record) in records.iter().enumerate() {
        if !labelable(record, &mut stats) {
            continue;
        }
        stats.retrieved += 1;
        if let Some(label) = oracle_instruction(&record.oracle_event, splits) {
            kept.push(true);
            samples.push(sample(i, record, label, f64::INFINITY, true));
        }
    }
    stats.finish(&kept, &[]);
    (samples, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{enumerate_all_shapes, Family};
    use crate::harness::{ExpertActor, RandomActor};
    use crate::paff::{play, PlayConfig};
    use crate::relabeler::RelabelerConfig;
    use crate::world::{derive_rng, is_satisfied, Renderer};

    fn records(seed: u64) -> Vec<TransitionRecord> {
        let cfg = PlayConfig {
            n_demos: 8,
            ..Default::default()
        };
        play(
            &RandomActor { seed },
            &cfg,
            &WorldSplits::default(),
            &Renderer::default(),
            seed,
        )
        .unwrap()
        .records
    }

    fn untrained() -> (RelabelerModel<f32>, CandidateSet) {
        let model =
            RelabelerModel::new(RelabelerConfig::default(), &mut derive_rng(0, "t")).unwrap();
        let c = CandidateSet::new(
            &model,
            enumerate_all_shapes(&Family::PLACEMENT, &WorldSplits::default()),
        )
        .unwrap();
        (model, c)
    }

    #[test]
    fn all_noop_records_give_no_samples() {
        let mut recs = records(1);
        recs.retain(|r| r.oracle_event.is_noop());
        assert!(!recs.is_empty());
        let (model, cands) = untrained();
        let (samples, stats) = relabel_and_filter(
            &recs,
            &model,
            &cands,
            f64::NEG_INFINITY,
            CandidateScope::Global,
            &WorldSplits::default(),
        )
        .unwrap();
        assert!(samples.is_empty());
        assert_eq!(stats.noop_fraction(), 1.0);
        assert_eq!(stats.kept_precision, None);
    }

    #[test]
    fn infinite_threshold_keeps_nothing() {
        let recs = records(2);
        let (model, cands) = untrained();
        let (samples, stats) = relabel_and_filter(
            &recs,
            &model,
            &cands,
            f64::INFINITY,
            CandidateScope::Global,
            &WorldSplits::default(),
        )
        .unwrap();
        assert!(samples.is_empty());
        assert_eq!(stats.dropped_threshold, stats.retrieved);
        assert_eq!(
            stats.dropped_noop + stats.dropped_table + stats.retrieved,
            stats.total
        );
    }

    #[test]
    fn scene_filter_restricts_labels_to_present_attributes() {
        let cfg = PlayConfig {
            n_demos: 4,
            ..Default::default()
        };
        let recs = play(
            &ExpertActor,
            &cfg,
            &WorldSplits::default(),
            &Renderer::default(),
            3,
        )
        .unwrap()
        .records;
        let (model, cands) = untrained();
        let (samples, _) = relabel_and_filter(
            &recs,
            &model,
            &cands,
            f64::NEG_INFINITY,
            CandidateScope::SceneFiltered,
            &WorldSplits::default(),
        )
        .unwrap();
        assert!(!samples.is_empty());
        for s in &samples {
            let pre = &recs[s.record].pre_state;
            let slot = s.instruction.container.unwrap();
            assert!(pre
                .objects
                .iter()
                .any(|o| s.instruction.matches_object(o.shape, o.color)));
            assert!(pre
                .containers
                .iter()
                .any(|c| c.kind == slot.kind && c.color == slot.color));
        }
    }

    #[test]
    fn oracle_labels_are_hindsight_valid() {
        let recs = play(
            &ExpertActor,
            &PlayConfig {
                n_demos: 4,
                ..Default::default()
            },
            &WorldSplits::default(),
            &Renderer::default(),
            0,
        )
        .unwrap()
        .records;
        let (samples, stats) = oracle_relabel(&recs, &WorldSplits::default());
        assert_eq!(samples.len(), 20);
        assert_eq!(stats.kept_precision, Some(1.0));
        for s in &samples {
            let post = recs[s.record].post_state().unwrap();
            assert!(is_satisfied(&post, &s.instruction).unwrap());
            assert_eq!(s.instruction, recs[s.record].instruction_given);
        }
    }
}
