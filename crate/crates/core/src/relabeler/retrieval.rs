//! Retrieval over a fixed candidate set and acceptance-threshold calibration.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{LabeledTransition, RelabelerModel};
use crate::error::{Error, Result};
use crate::grammar::Instruction;
use crate::learn::Real;
use crate::policy::argmax_first;
use crate::world::{Observation, Renderer, Scene};

/// The ordered instruction list retrieval chooses from, with its cached
/// text embeddings.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub instructions: Vec<Instruction>,
    pub embeddings: Array2<f32>,
    pub tau: f64,
}

impl CandidateSet {
    pub fn new(model: &RelabelerModel<f32>, instructions: Vec<Instruction>) -> Result<Self> {
        if instructions.is_empty() {
            return Err(Error::Contract("candidate set is empty".into()));
        }
        let tokens: Vec<&[u32]> = instructions.iter().map(|i| i.tokens.as_slice()).collect();
        let embeddings = model.embed_texts(&tokens)?;
        Ok(CandidateSet {
            instructions,
            embeddings,
            tau: model.config.tau,
        })
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// SHA-256 over the ordered surfaces.
    pub fn hash(&self) -> String {
        let surfaces: Vec<&str> = self
            .instructions
            .iter()
            .map(|i| i.surface.as_str())
            .collect();
        crate::util::sha256_hex(crate::util::canonical_json(&surfaces).as_bytes())
    }

    /// The auditable manifest stored beside relabeled data.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "count": self.len(),
            "hash": self.hash(),
            "instructions": self.instructions.iter().map(|i| &i.surface).collect::<Vec<_>>(),
        })
    }

    /// Candidates whose object and container both appear in `scene`.
    pub fn scene_mask(&self, scene: &Scene) -> Vec<bool> {
        self.instructions
            .iter()
            .map(|i| {
                let Some(slot) = i.container else {
                    return false;
                };
                let has_object = scene
                    .objects
                    .iter()
                    .any(|o| i.matches_object(o.shape, o.color));
                let has_container = scene
                    .containers
                    .iter()
                    .any(|c| c.kind == slot.kind && c.color == slot.color);
                has_object && has_container
            })
            .collect()
    }

    /// Candidate scores `(v . e_i) / tau`.
    pub fn scores(&self, embedding: ArrayView1<f32>) -> Array1<f32> {
        self.embeddings.dot(&embedding) / self.tau as f32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelResult {
    pub index: usize,
    pub instruction: Instruction,
    #[serde(with = "crate::util::extended_f64")]
    pub score: f64,
    pub accepted: bool,
}

/// Picks the highest-scoring candidate (lowest index on ties), optionally
/// among masked-in candidates only. Accepted iff `score >= theta`.
pub fn select<T: Real>(
    scores: ArrayView1<T>,
    candidates: &CandidateSet,
    theta: f64,
    mask: Option<&[bool]>,
) -> Result<RelabelResult> {
    let scores: Array1<T> = match mask {
        None => scores.to_owned(),
        Some(m) => {
            if !m.iter().any(|&b| b) {
                return Err(Error::EmptyCandidates(
                    "scene-filtered candidate set".into(),
                ));
            }
            Array1::from_iter(
                scores
                    .iter()
                    .zip(m)
                    .map(|(&s, &keep)| if keep { s } else { T::neg_infinity() }),
            )
        }
    };
    let index = argmax_first(scores.view());
    let score = scores[index].as_f64();
    Ok(RelabelResult {
        index,
        instruction: candidates.instructions[index].clone(),
        score,
        accepted: score >= theta,
    })
}

/// Retrieves the instruction that best describes the transition
/// `start -> end`.
pub fn retrieve(
    model: &RelabelerModel<f32>,
    start: &Observation,
    end: &Observation,
    candidates: &CandidateSet,
    theta: f64,
) -> Result<RelabelResult> {
    let v = model.embed_transition(start, end)?;
    select(candidates.scores(v.view()).view(), candidates, theta, None)
}

/// Retrieval accuracy against oracle labels, with the per-transition
/// `(score, correct)` pairs calibration consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEval {
    pub accuracy: f64,
    pub scored: Vec<(f64, bool)>,
}

const EVAL_CHUNK: usize = 256;

pub fn evaluate_retrieval(
    model: &RelabelerModel<f32>,
    transitions: &[LabeledTransition],
    candidates: &CandidateSet,
    renderer: &Renderer,
) -> Result<RetrievalEval> {
    if transitions.is_empty() {
        return Err(Error::Contract("no transitions to evaluate".into()));
    }
    let mut scored = Vec::with_capacity(transitions.len());
    for chunk in transitions.chunks(EVAL_CHUNK) {
        let starts: Vec<Observation> = chunk
            .iter()
            .map(|t| renderer.render(&t.before, t.theme))
            .collect::<Result<_>>()?;
        let ends: Vec<Observation> = chunk
            .iter()
            .map(|t| renderer.render(&t.after, t.theme))
            .collect::<Result<_>>()?;
        let v = model.embed_transitions(
            &starts.iter().collect::<Vec<_>>(),
            &ends.iter().collect::<Vec<_>>(),
        )?;
        for (row, t) in v.rows().into_iter().zip(chunk) {
            let r = select(
                candidates.scores(row).view(),
                candidates,
                f64::NEG_INFINITY,
                None,
            )?;
            scored.push((r.score, r.instruction.surface == t.label.surface));
        }
    }
    let correct = scored.iter().filter(|(_, c)| *c).count();
    Ok(RetrievalEval {
        accuracy: correct as f64 / scored.len() as f64,
        scored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(with = "crate::util::extended_f64")]
    pub theta: f64,
    /// Precision of the retrievals kept at `theta`.
    #[serde(with = "crate::util::extended_f64")]
    pub precision: f64,
    pub kept: usize,
    pub total: usize,
    /// False when no threshold reaches the target; `theta` is then the
    /// maximum observed score.
    pub attainable: bool,
    /// False when fewer than 50 validation retrievals were correct.
    pub enough_correct: bool,
}

pub const MIN_CORRECT_FOR_CALIBRATION: usize = 50;

fn kept_precision(scored: &[(f64, bool)], theta: f64) -> (f64, usize) {
    let kept: Vec<bool> = scored
        .iter()
        .filter(|(s, _)| *s >= theta)
        .map(|(_, c)| *c)
        .collect();
    if kept.is_empty() {
        return (1.0, 0);
    }
    let ok = kept.iter().filter(|&&c| c).count();
    (ok as f64 / kept.len() as f64, kept.len())
}

/// Smallest threshold whose kept set (`score >= theta`) reaches
/// `target_precision`. Input pairs are `(score, retrieval was correct)`.
/// If keeping everything already meets the target the threshold is `-inf`.
pub fn calibrate_threshold(scored: &[(f64, bool)], target_precision: f64) -> Result<Calibration> {
    if scored.is_empty() {
        return Err(Error::Contract(
            "calibration needs validation retrievals".into(),
        ));
    }
    let correct = scored.iter().filter(|(_, c)| *c).count();
    let enough_correct = correct >= MIN_CORRECT_FOR_CALIBRATION;
    if !enough_correct {
        log::warn!("calibrating on only {correct} correct retrievals");
    }
    let total = scored.len();
    let (all, _) = kept_precision(scored, f64::NEG_INFINITY);
    if all >= target_precision {
        return Ok(Calibration {
            theta: f64::NEG_INFINITY,
            precision: all,
            kept: total,
            total,
            attainable: true,
            enough_correct,
        });
    }
    let mut thresholds: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    for &theta in &thresholds {
        let (precision, kept) = kept_precision(scored, theta);
        if precision >= target_precision {
            return Ok(Calibration {
                theta,
                precision,
                kept,
                total,
                attainable: true,
                enough_correct,
            });
        }
    }
    let theta = *thresholds.last().expect("non-empty");
    log::warn!(
        "target precision {target_precision} is unattainable; using the maximum score {theta}"
    );
    let (precision, kept) = kept_precision(scored, theta);
    Ok(Calibration {
        theta,
        precision,
        kept,
        total,
        attainable: false,
        enough_correct,
    })
}
