//! Continued imitation training on relabeled play data.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::RelabeledSample;
use crate::error::{Error, Result};
use crate::grammar::Instruction;
use crate::learn::OptimizerKind;
use crate::policy::{train_policy, PolicyModel, PolicyTrainConfig, TrainOutcome};
use crate::world::{derive_rng, Observation, PickPlaceAction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Stage-1 examples mixed in, as a multiple of the relabeled count.
    pub mix_in: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-4,
            optimizer: OptimizerKind::adam(),
            mix_in: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneStats {
    pub relabeled: usize,
    pub mixed_in: usize,
    pub epochs: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

/// Continues training `policy` on the relabeled samples, plus
/// `round(mix_in * samples.len())` stage-1 examples drawn without
/// replacement from `stage1`.
pub fn finetune(
    policy: PolicyModel<f32>,
    samples: &[RelabeledSample],
    stage1: &[(Observation, Instruction, PickPlaceAction)],
    config: &FinetuneConfig,
    seed: u64,
) -> Result<(TrainOutcome, FinetuneStats)> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    if !(config.mix_in >= 0.0 && config.mix_in.is_finite()) {
        return Err(Error::Config(format!(
            "mix_in must be a non-negative number, got {}",
            config.mix_in
        )));
    }
    let mut data: Vec<(Observation, Instruction, PickPlaceAction)> = samples
        .iter()
        .map(|s| (s.observation_t.clone(), s.instruction.clone(), s.action))
        .collect();
    let wanted = (config.mix_in * samples.len() as f64).round() as usize;
    if wanted > 0 && stage1.is_empty() {
        return Err(Error::Config("mix_in > 0 needs stage-1 examples".into()));
    }
    let mut pool: Vec<usize> = (0..stage1.len()).collect();
    pool.shuffle(&mut derive_rng(seed, "finetune/mix-in"));
    let mixed: Vec<usize> = pool.into_iter().take(wanted).collect();
    data.extend(mixed.iter().map(|&i| stage1[i].clone()));

    let train = PolicyTrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        optimizer: config.optimizer,
    };
    let out = train_policy(
        policy,
        &data,
        &train,
        crate::util::derive_seed(seed, "finetune"),
    )?;
    let stats = FinetuneStats {
        relabeled: samples.len(),
        mixed_in: mixed.len(),
        epochs: config.epochs,
        first_loss: out.losses.first().copied(),
        last_loss: out.losses.last().copied(),
    };
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paff::SAMPLE_SCHEMA_VERSION;
    use crate::policy::PolicyConfig;
    use crate::world::{Renderer, WorldSplits};

    fn one_sample() -> RelabeledSample {
        let splits = WorldSplits::default();
        let demo = &crate::policy::generate_demos(
            &[crate::grammar::Family::PutShapesInBowls],
            1,
            1,
            &[0],
            &splits,
            4,
        )
        .unwrap()[0];
        let obs = demo.render(&Renderer::default()).unwrap();
        RelabeledSample {
            schema_version: SAMPLE_SCHEMA_VERSION,
            record: 0,
            observation_next: obs.clone(),
            observation_t: obs,
            instruction: demo.instruction.clone(),
            action: demo.action,
            score: 1.0,
            correct: true,
        }
    }

    fn policy() -> PolicyModel<f32> {
        PolicyModel::new(PolicyConfig::default(), &mut derive_rng(0, "p")).unwrap()
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let p = policy();
        let cfg = FinetuneConfig {
            epochs: 0,
            ..Default::default()
        };
        let (out, stats) = finetune(p.clone(), &[one_sample()], &[], &cfg, 0).unwrap();
        assert!(out.model.params.bit_equal(&p.params));
        assert_eq!(stats.last_loss, None);
    }

    #[test]
    fn empty_samples_are_an_adaptation_error() {
        let err = finetune(policy(), &[], &[], &FinetuneConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::NoSamples));
    }

    #[test]
    fn mix_in_draws_from_stage_one() {
        let s = one_sample();
        let stage1 = vec![(s.observation_t.clone(), s.instruction.clone(), s.action); 5];
        let cfg = FinetuneConfig {
            epochs: 1,
            mix_in: 3.0,
            ..Default::default()
        };
        let (_, stats) = finetune(policy(), std::slice::from_ref(&s), &stage1, &cfg, 0).unwrap();
        assert_eq!(stats.mixed_in, 3);
        let bad = FinetuneConfig { mix_in: 1.0, ..cfg };
        assert!(matches!(
            finetune(policy(), &[s], &[], &bad, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_sample_is_memorized() {
        let s = one_sample();
        let cfg = FinetuneConfig {
            epochs: 100,
            lr: 1e-3,
            ..Default::default()
        };
        let (out, _) = finetune(policy(), std::slice::from_ref(&s), &[], &cfg, 0).unwrap();
        assert_eq!(
            out.model
                .predict_action(&s.observation_t, &s.instruction)
                .unwrap(),
            s.action
        );
    }
}
