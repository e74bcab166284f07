//! Evaluation suites and their report documents.

use serde::{Deserialize, Serialize};

use super::eval::{eval_chains, eval_success, Actor, EvalContext, Protocol};
use crate::error::{Error, Result};
use crate::grammar::Family;
use crate::paff::RelabelStats;
use crate::world::{Renderer, ThemeId, WorldSplits};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub families: Vec<Family>,
    /// Themes of the success-rate evaluations.
    pub themes: Vec<ThemeId>,
    pub n_scenes: usize,
    pub instr_per_scene: usize,
    pub chain_families: Vec<Family>,
    pub chain_themes: Vec<ThemeId>,
    pub n_chains: usize,
    pub chain_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            families: Family::PLACEMENT.to_vec(),
            themes: vec![0, 1, 2],
            n_scenes: 10,
            instr_per_scene: 10,
            chain_families: vec![Family::PackShapes, Family::PutBlocksInBowls],
            chain_themes: vec![0, 3],
            n_chains: 100,
            chain_len: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub family: Family,
    pub theme: ThemeId,
    pub protocol_a: f64,
    pub protocol_b: f64,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub theme: ThemeId,
    pub position_rates: Vec<f64>,
    pub len: f64,
}

/// Relabel quality against the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelQuality {
    pub precision: Option<f64>,
    /// Correct kept labels over all container moves.
    pub recall: Option<f64>,
}

impl RelabelQuality {
    pub fn from_stats(stats: &RelabelStats) -> Self {
        let recall = match (stats.kept_precision, stats.retrieved) {
            (_, 0) => None,
            (Some(p), n) => Some(p * stats.kept as f64 / n as f64),
            (None, _) => Some(0.0),
        };
        RelabelQuality {
            precision: stats.kept_precision,
            recall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    pub chains: Vec<ChainResult>,
}

impl EvalReport {
    /// Mean success of `family` under `protocol` over the evaluated themes.
    pub fn success(&self, family: Family, protocol: Protocol) -> Option<f64> {
        let rates: Vec<f64> = self
            .tasks
            .iter()
            .filter(|t| t.family == family)
            .map(|t| match protocol {
                Protocol::A => t.protocol_a,
                Protocol::B => t.protocol_b,
            })
            .collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }

    pub fn chain_len(&self, theme: ThemeId) -> Option<f64> {
        self.chains.iter().find(|c| c.theme == theme).map(|c| c.len)
    }

    /// Checks the value ranges every report must satisfy.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        for t in &self.tasks {
            if !in_unit(t.protocol_a) || !in_unit(t.protocol_b) {
                return Err(Error::Contract(format!(
                    "success rate out of range for {}",
                    t.family
                )));
            }
        }
        for c in &self.chains {
            if !c.position_rates.windows(2).all(|w| w[0] >= w[1])
                || !c.position_rates.iter().all(|&r| in_unit(r))
            {
                return Err(Error::Contract(
                    "chain rates must be non-increasing and in [0, 1]".into(),
                ));
            }
            if !(0.0..=c.position_rates.len() as f64).contains(&c.len) {
                return Err(Error::Contract("chain Len out of range".into()));
            }
        }
        Ok(())
    }
}

/// Runs the configured success-rate and chain evaluations. Instances depend
/// only on `seed`, so two actors evaluated with one seed meet the same
/// scenes and instructions.
pub fn evaluate(
    actor: &dyn Actor,
    config: &EvalConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> Result<EvalReport> {
    let ctx = EvalContext {
        splits,
        renderer,
        seed,
    };
    let mut tasks = Vec::new();
    for &family in &config.families {
        for &theme in &config.themes {
            let a = eval_success(
                actor,
                &ctx,
                family,
                theme,
                Protocol::A,
                config.n_scenes,
                config.instr_per_scene,
            )?;
            let b = eval_success(
                actor,
                &ctx,
                family,
                theme,
                Protocol::B,
                config.n_scenes,
                config.instr_per_scene,
            )?;
            tasks.push(TaskResult {
                family,
                theme,
                protocol_a: a.rate(),
                protocol_b: b.rate(),
                instances: a.total,
            });
        }
    }
    let mut chains = Vec::new();
    for &theme in &config.chain_themes {
        let c = eval_chains(
            actor,
            &ctx,
            &config.chain_families,
            theme,
            config.n_chains,
            config.chain_len,
        )?;
        chains.push(ChainResult {
            theme,
            position_rates: c.position_rates,
            len: c.len,
        });
    }
    let report = EvalReport { tasks, chains };
    report.validate()?;
    Ok(report)
}
