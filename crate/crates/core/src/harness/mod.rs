//! Evaluation protocols, experiment configuration, ablations, reports and
//! the CLI.

pub mod ablation;
pub mod cli;
pub mod eval;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod run;

pub use ablation::{
    run_ablation, run_cell, AblationAxis, AblationCell, AblationConfig, AblationRun, AblationTable,
    AxisValue, Stat,
};
pub use cli::{cli_main, exit_code};
pub use eval::{
    eval_chains, eval_success, fulfils, Actor, ChainOutcome, EvalContext, ExpertActor, Protocol,
    RandomActor, SuccessOutcome,
};
pub use pipeline::{
    calibrate, candidate_set, load_policy, load_relabeler, policy_fingerprint, policy_samples,
    relabeler_fingerprint, train_stage1_policy, train_stage1_relabeler, ArtifactCache,
    CalibrationConfig, PolicySample, PolicyStageConfig, RelabelerStageConfig,
};
pub use report::{
    evaluate, ChainResult, EvalConfig, EvalReport, RelabelQuality, TaskResult,
    REPORT_SCHEMA_VERSION,
};
pub use run::{
    ablate_stage, calibrate_stage, evaluate_stage, gen_data, held_out_success, paff_stage,
    report_stage, resolve_seed, train_policy_stage, train_relabeler_stage, MetricEvent, RunConfig,
    RunDir, RunSummary, SEED_ENV,
};
