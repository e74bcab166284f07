//! Declarative run configuration and the stages that read and write a run
//! directory. Every stage is a pure function of the configuration and the
//! artifacts earlier stages left in the directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::ablation::{run_ablation, AblationConfig, AblationTable};
use super::pipeline::{
    calibrate, candidate_set, load_policy, load_relabeler, policy_fingerprint,
    relabeler_fingerprint, train_stage1_policy, train_stage1_relabeler, CalibrationConfig,
    PolicySample, PolicyStageConfig, RelabelerStageConfig,
};
use super::report::{evaluate, EvalConfig, EvalReport, RelabelQuality, REPORT_SCHEMA_VERSION};
use super::Protocol;
use crate::error::{Error, Result};
use crate::learn::Checkpoint;
use crate::paff::{
    run_paff, save_jsonl, PaffConfig, PaffInputs, PaffReport, SAMPLE_SCHEMA_VERSION,
};
use crate::policy::{generate_demos, load_demos, save_demos, PolicyModel};
use crate::relabeler::Calibration;
use crate::util::{derive_seed, digest_json};
use crate::world::{Renderer, WorldSplits};

/// Environment variable that overrides the master seed.
pub const SEED_ENV: &str = "PAFF_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub splits: WorldSplits,
    pub renderer: Renderer,
    pub policy: PolicyStageConfig,
    pub relabeler: RelabelerStageConfig,
    pub calibration: CalibrationConfig,
    pub paff: PaffConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    /// Parses TOML; errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim_end().to_string();
            Error::Config(if path == "." {
                msg
            } else {
                format!("at `{path}`: {msg}")
            })
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config does not serialize: {e}")))
    }

    /// Checks the cross-field constraints the types alone cannot express.
    pub fn validate(&self) -> Result<()> {
        self.splits.validate()?;
        let t = self.calibration.target_precision;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!(
                "calibration.target_precision must be in (0, 1], got {t}"
            )));
        }
        if self.policy.demos == 0 || self.policy.families.is_empty() {
            return Err(Error::Config(
                "policy stage needs at least one family and one demo".into(),
            ));
        }
        if self
            .paff
            .play
            .themes
            .iter()
            .chain(&self.eval.themes)
            .chain(&self.eval.chain_themes)
            .any(|&t| !self.splits.all_themes().contains(&t))
        {
            return Err(Error::Config(
                "a configured theme is not in the world splits".into(),
            ));
        }
        if self.eval.n_scenes == 0 || self.eval.chain_len == 0 {
            return Err(Error::Config(
                "eval.n_scenes and eval.chain_len must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Stable hash of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        digest_json(self)
    }

    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, "eval")
    }
}

/// The master seed after overrides: the flag wins over the environment,
/// which wins over the file.
pub fn resolve_seed(file: u64, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        None => Ok(file),
    }
}

/// Evaluation summary of a run. Wall-clock times live in a separate file so
/// this document is a pure function of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_fingerprint: String,
    pub seed: u64,
    pub eval_seed: u64,
    /// Content hashes of the evaluated checkpoints.
    pub checkpoints: BTreeMap<String, String>,
    pub baseline: EvalReport,
    pub adapted: Option<EvalReport>,
    pub relabel: Option<RelabelQuality>,
}

/// One line of the metric event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvent {
    pub schema_version: u32,
    pub policy: String,
    pub metric: String,
    pub family: Option<String>,
    pub theme: Option<u8>,
    pub value: f64,
}

impl MetricEvent {
    fn from_report(policy: &str, report: &EvalReport) -> Vec<MetricEvent> {
        let event = |metric: &str, family: Option<String>, theme, value| MetricEvent {
            schema_version: REPORT_SCHEMA_VERSION,
            policy: policy.to_string(),
            metric: metric.to_string(),
            family,
            theme: Some(theme),
            value,
        };
        let mut out = Vec::new();
        for t in &report.tasks {
            out.push(event(
                "success-a",
                Some(t.family.to_string()),
                t.theme,
                t.protocol_a,
            ));
            out.push(event(
                "success-b",
                Some(t.family.to_string()),
                t.theme,
                t.protocol_b,
            ));
        }
        for c in &report.chains {
            for (i, r) in c.position_rates.iter().enumerate() {
                out.push(event(
                    &format!("chain-position-{}", i + 1),
                    None,
                    c.theme,
                    *r,
                ));
            }
            out.push(event("chain-len", None, c.theme, c.len));
        }
        out
    }
}

/// Artifacts of one run, under a directory named by the config fingerprint.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(out: impl AsRef<Path>, config: &RunConfig) -> Result<Self> {
        let root = out.as_ref().join(config.fingerprint());
        std::fs::create_dir_all(&root)?;
        let dir = RunDir { root };
        std::fs::write(dir.path("config.toml"), config.to_toml()?)?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Adaptation(format!(
                "{} is missing; run `{producer}` first",
                p.display()
            )))
        }
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, producer: &str) -> Result<T> {
        let text = std::fs::read_to_string(self.require(name, producer)?)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Merges one stage's wall-clock seconds into `timing.json`.
    pub fn record_timing(&self, stage: &str, seconds: f64) -> Result<()> {
        let path = self.path("timing.json");
        let mut timing: BTreeMap<String, f64> = match std::fs::read_to_string(&path) {
            Ok(t) => serde_json::from_str(&t)?,
            Err(_) => BTreeMap::new(),
        };
        timing.insert(stage.to_string(), seconds);
        self.write_json("timing.json", &timing)
    }

    pub fn policy(&self, config: &RunConfig) -> Result<PolicyModel<f32>> {
        let fp = policy_fingerprint(
            &config.policy,
            &config.splits,
            &config.renderer,
            config.seed,
        );
        load_policy(
            &self.require("policy.ckpt", "train-policy")?,
            &config.policy.model,
            Some(&fp),
        )
    }

    pub fn adapted(&self, config: &RunConfig) -> Result<Option<PolicyModel<f32>>> {
        let p = self.path("adapted.ckpt");
        if !p.exists() {
            return Ok(None);
        }
        load_policy(&p, &config.policy.model, Some(&config.fingerprint())).map(Some)
    }

    pub fn relabeler(&self, config: &RunConfig) -> Result<crate::relabeler::RelabelerModel<f32>> {
        let fp = relabeler_fingerprint(
            &config.relabeler,
            &config.splits,
            &config.renderer,
            config.seed,
        );
        load_relabeler(
            &self.require("relabeler.ckpt", "train-relabeler")?,
            &config.relabeler.model,
            Some(&fp),
        )
    }
}

fn stage1_demo_seed(config: &RunConfig) -> u64 {
    derive_seed(config.seed, "stage1/demos")
}

/// Writes the stage-1 expert demonstrations.
pub fn gen_data(config: &RunConfig, dir: &RunDir) -> Result<usize> {
    let p = &config.policy;
    let demos = generate_demos(
        &p.families,
        p.demos,
        p.steps,
        &config.splits.seen_themes,
        &config.splits,
        stage1_demo_seed(config),
    )?;
    save_demos(dir.path("demos.jsonl"), &demos)?;
    Ok(demos.len())
}

fn stage1_samples(config: &RunConfig, dir: &RunDir) -> Result<Vec<PolicySample>> {
    if !dir.path("demos.jsonl").exists() {
        gen_data(config, dir)?;
    }
    load_demos(dir.path("demos.jsonl"))?
        .into_iter()
        .map(|d| Ok((d.render(&config.renderer)?, d.instruction, d.action)))
        .collect()
}

/// Trains the stage-1 policy on the run's demonstrations.
pub fn train_policy_stage(config: &RunConfig, dir: &RunDir) -> Result<Vec<f64>> {
    let samples = stage1_samples(config, dir)?;
    let (model, losses) = train_stage1_policy(&config.policy, &samples, config.seed)?;
    let fp = policy_fingerprint(
        &config.policy,
        &config.splits,
        &config.renderer,
        config.seed,
    );
    Checkpoint::new(fp, serde_json::json!({ "losses": losses }), model.params)
        .save(dir.path("policy.ckpt"))?;
    Ok(losses)
}

pub fn train_relabeler_stage(config: &RunConfig, dir: &RunDir) -> Result<(Vec<f64>, Vec<f64>)> {
    let (model, a, b) = train_stage1_relabeler(
        &config.relabeler,
        &config.splits,
        &config.renderer,
        config.seed,
    )?;
    let fp = relabeler_fingerprint(
        &config.relabeler,
        &config.splits,
        &config.renderer,
        config.seed,
    );
    Checkpoint::new(
        fp,
        serde_json::json!({ "phase_a": a, "phase_b": b }),
        model.params,
    )
    .save(dir.path("relabeler.ckpt"))?;
    Ok((a, b))
}

pub fn calibrate_stage(config: &RunConfig, dir: &RunDir) -> Result<Calibration> {
    let relabeler = dir.relabeler(config)?;
    let candidates = candidate_set(&relabeler, &config.splits)?;
    let cal = calibrate(
        &relabeler,
        &candidates,
        &config.calibration,
        &config.splits,
        &config.renderer,
        config.seed,
    )?;
    dir.write_json("calibration.json", &cal)?;
    Ok(cal)
}

/// Runs the adaptation loop from the run's stage-1 artifacts.
pub fn paff_stage(config: &RunConfig, dir: &RunDir) -> Result<PaffReport> {
    let policy = dir.policy(config)?;
    let relabeler = dir.relabeler(config)?;
    let cal: Calibration = dir.read_json("calibration.json", "calibrate")?;
    let candidates = candidate_set(&relabeler, &config.splits)?;
    let stage1 = if config.paff.finetune.mix_in > 0.0 {
        stage1_samples(config, dir)?
    } else {
        Vec::new()
    };
    let inputs = PaffInputs {
        policy: &policy,
        relabeler: &relabeler,
        candidates: &candidates,
        theta: cal.theta,
        stage1: &stage1,
    };
    let out = run_paff(
        inputs,
        &config.paff,
        &config.splits,
        &config.renderer,
        config.seed,
    )?;
    save_jsonl(dir.path("records.jsonl"), &out.records)?;
    save_jsonl(dir.path("samples.jsonl"), &out.samples)?;
    debug_assert!(out
        .samples
        .iter()
        .all(|s| s.schema_version == SAMPLE_SCHEMA_VERSION));
    Checkpoint::new(
        config.fingerprint(),
        serde_json::json!({ "seed": config.seed }),
        out.policy.params,
    )
    .save(dir.path("adapted.ckpt"))?;
    dir.write_json("paff.json", &out.report)?;
    Ok(out.report)
}

/// Evaluates the stage-1 policy and, when present, the adapted one on the
/// same instances. Writes `report.json` and `events.jsonl`.
pub fn evaluate_stage(config: &RunConfig, dir: &RunDir) -> Result<RunSummary> {
    let policy = dir.policy(config)?;
    let seed = config.eval_seed();
    let baseline = evaluate(
        &policy,
        &config.eval,
        &config.splits,
        &config.renderer,
        seed,
    )?;
    let mut checkpoints = BTreeMap::from([("policy".to_string(), policy.params.content_hash())]);
    let adapted = match dir.adapted(config)? {
        Some(model) => {
            checkpoints.insert("adapted".into(), model.params.content_hash());
            Some(evaluate(
                &model,
                &config.eval,
                &config.splits,
                &config.renderer,
                seed,
            )?)
        }
        None => None,
    };
    let relabel = if dir.path("paff.json").exists() {
        let report: PaffReport = dir.read_json("paff.json", "paff-adapt")?;
        checkpoints.insert("relabeler".into(), report.relabeler.clone());
        Some(RelabelQuality::from_stats(&report.relabel))
    } else {
        None
    };
    let summary = RunSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        config_fingerprint: config.fingerprint(),
        seed: config.seed,
        eval_seed: seed,
        checkpoints,
        baseline,
        adapted,
        relabel,
    };
    let mut events = MetricEvent::from_report("baseline", &summary.baseline);
    if let Some(a) = &summary.adapted {
        events.extend(MetricEvent::from_report("adapted", a));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.path("events.jsonl"))?);
    for e in &events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    dir.write_json("report.json", &summary)?;
    Ok(summary)
}

/// Runs the configured ablation with stage-1 artifacts cached under the
/// output root, so cells sharing a seed train once.
pub fn ablate_stage(config: &RunConfig, dir: &RunDir, cache_dir: &Path) -> Result<AblationTable> {
    let cache = super::ArtifactCache::new(cache_dir)?;
    let table = run_ablation(config, &config.ablation, &cache)?;
    dir.write_json("ablation.json", &table)?;
    Ok(table)
}

/// Renders the figures of whatever summaries the run holds and returns a
/// plain-text digest of them.
pub fn report_stage(config: &RunConfig, dir: &RunDir) -> Result<String> {
    let has_report = dir.path("report.json").exists();
    let has_ablation = dir.path("ablation.json").exists();
    if !has_report && !has_ablation {
        return Err(Error::Adaptation(format!(
            "{} holds no report.json or ablation.json; run `evaluate` or `ablate` first",
            dir.root.display()
        )));
    }
    std::fs::create_dir_all(dir.path("plots"))?;
    let mut digest = String::new();
    if has_report {
        let summary: RunSummary = dir.read_json("report.json", "evaluate")?;
        if summary.config_fingerprint != config.fingerprint() {
            return Err(Error::Integrity(
                "report.json belongs to another configuration".into(),
            ));
        }
        let mut reports = vec![("BASELINE", &summary.baseline)];
        if let Some(a) = &summary.adapted {
            reports.push(("ADAPTED", a));
        }
        let series: Vec<String> = reports.iter().map(|(n, _)| n.to_string()).collect();
        let families: Vec<_> =
            summary
                .baseline
                .tasks
                .iter()
                .map(|t| t.family)
                .fold(Vec::new(), |mut v, f| {
                    if !v.contains(&f) {
                        v.push(f);
                    }
                    v
                });
        digest.push_str(&format!(
            "run {} (seed {})\n",
            summary.config_fingerprint, summary.seed
        ));
        digest.push_str(&format!(
            "{:<24}{}\n",
            "family / protocol B",
            series.join("  ")
        ));
        let mut groups = Vec::new();
        for f in families {
            let values: Vec<f64> = reports
                .iter()
                .map(|(_, r)| r.success(f, Protocol::B).unwrap_or(f64::NAN))
                .collect();
            let cells: Vec<String> = values.iter().map(|v| format!("{v:>8.3}")).collect();
            digest.push_str(&format!("{:<24}{}\n", f.to_string(), cells.join("  ")));
            groups.push(super::plot::Group {
                label: f.to_string(),
                ranges: vec![None; values.len()],
                values,
            });
        }
        super::plot::BarChart {
            title: "SUCCESS RATE - PROTOCOL B".into(),
            y_max: 1.0,
            series: series.clone(),
            groups,
        }
        .save(dir.path("plots/success.png"))?;
        let mut chain_groups = Vec::new();
        for c in &summary.baseline.chains {
            let values: Vec<f64> = reports
                .iter()
                .map(|(_, r)| r.chain_len(c.theme).unwrap_or(f64::NAN))
                .collect();
            let cells: Vec<String> = values.iter().map(|v| format!("{v:>8.2}")).collect();
            digest.push_str(&format!(
                "{:<24}{}\n",
                format!("chain Len, theme {}", c.theme),
                cells.join("  ")
            ));
            chain_groups.push(super::plot::Group {
                label: format!("THEME {}", c.theme),
                ranges: vec![None; values.len()],
                values,
            });
        }
        if !chain_groups.is_empty() {
            super::plot::BarChart {
                title: "CHAIN LEN".into(),
                y_max: config.eval.chain_len as f64,
                series,
                groups: chain_groups,
            }
            .save(dir.path("plots/chains.png"))?;
        }
        if let Some(q) = &summary.relabel {
            digest.push_str(&format!(
                "relabel precision {:?}, recall {:?}\n",
                q.precision, q.recall
            ));
        }
    }
    if has_ablation {
        let table: AblationTable = dir.read_json("ablation.json", "ablate")?;
        digest.push_str(&format!(
            "ablation over {:?}, seeds {:?}\n",
            table.axis, table.seeds
        ));
        let mut groups = Vec::new();
        for c in &table.cells {
            let line = match (&c.held_out_success, &c.shift_accuracy) {
                (Some(h), Some(a)) => format!(
                    "{:<18} held-out {:.3} [{:.3}, {:.3}]  shift accuracy {:.3} [{:.3}, {:.3}]",
                    c.label, h.mean, h.min, h.max, a.mean, a.min, a.max
                ),
                _ => format!("{:<18} no successful runs", c.label),
            };
            digest.push_str(&line);
            if c.unadapted > 0 {
                digest.push_str(&format!("  ({} unadapted)", c.unadapted));
            }
            if !c.errors.is_empty() {
                digest.push_str(&format!("  ({} failed)", c.errors.len()));
            }
            digest.push('\n');
            let h = c.held_out_success;
            groups.push(super::plot::Group {
                label: c.label.clone(),
                values: vec![h.map_or(f64::NAN, |s| s.mean)],
                ranges: vec![h.map(|s| (s.min, s.max))],
            });
        }
        super::plot::BarChart {
            title: format!("ABLATION: {:?}", table.axis),
            y_max: 1.0,
            series: vec!["HELD-OUT SUCCESS".into()],
            groups,
        }
        .save(dir.path("plots/ablation.png"))?;
    }
    Ok(digest)
}

/// Mean protocol-B success over the families the adaptation targeted.
pub fn held_out_success(report: &EvalReport, config: &RunConfig) -> Option<f64> {
    let rates: Option<Vec<f64>> = config
        .paff
        .play
        .families
        .iter()
        .map(|&f| report.success(f, Protocol::B))
        .collect();
    let rates = rates?;
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}
