//! The acceptance suite. Each criterion prints one PASS/FAIL line with its
//! measured values; the test fails if any criterion does.

mod common;

use std::fs;
use std::io::Write;

use ndarray::{array, Array2};

use paff::grammar::Family;
use paff::harness::{
    evaluate, run_ablation, AblationConfig, EvalConfig, EvalReport, Protocol, RunConfig,
};
use paff::learn::nce_loss;
use paff::paff::{run_paff, LabelSource, PaffConfig, PaffInputs, PaffOutcome};
use paff::relabeler::{evaluate_retrieval, transition_dataset};
use paff::util::derive_seed;
use paff::world::{Renderer, WorldSplits};

use common::{
    grad_cases, run_cli, stage1, stage1_cache, sweep_small_world, worst_error, Stage1, PIPELINE,
    SEEDS, SWEEP_OBJECTS, TINY_CONFIG, TOL,
};

const SEEN: [Family; 2] = [Family::PackShapes, Family::PutBlocksInBowls];
const COMP: Family = Family::PutShapesInBowls;
const THEME_SHIFT: u8 = 3;

struct Verdicts(Vec<(usize, bool)>);

impl Verdicts {
    /// Prints past the test harness's output capture, so the lines show up
    /// on a plain `cargo test`.
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        let _ = writeln!(std::io::stderr(), "criterion {id:>2}: {verdict} {detail}");
        self.0.push((id, pass));
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn c1_gradients(v: &mut Verdicts) {
    let mut failing = Vec::new();
    let mut worst = 0.0f64;
    for (name, case) in grad_cases() {
        let e = worst_error(name, case).expect(name);
        worst = worst.max(e);
        if !(e < TOL) {
            failing.push(format!("{name}={e:.2e}"));
        }
    }
    v.record(
        1,
        failing.is_empty(),
        format!(
            "worst rel err {worst:.2e} over {} cases {failing:?}",
            grad_cases().len()
        ),
    );
}

fn c2_nce(v: &mut Verdicts) {
    let one: f64 = nce_loss(
        array![[0.6, 0.8]].view(),
        array![[1.0, 0.0]].view(),
        0.05,
        false,
    )
    .unwrap()
    .loss;
    let row = [0.3, -0.4, 0.5, 0.1];
    let same = Array2::from_shape_fn((4, 4), |(_, j)| row[j]);
    let identical = nce_loss(same.view(), same.view(), 0.05, false)
        .unwrap()
        .loss;
    let eye = Array2::<f64>::eye(4);
    let ortho = nce_loss(eye.view(), eye.view(), 1.0, false).unwrap().loss;
    let e = std::f64::consts::E;
    let want = -(e / (e + 3.0)).ln();
    let pass =
        one.abs() <= 1e-12 && (identical - 4f64.ln()).abs() <= 1e-9 && (ortho - want).abs() <= 1e-9;
    v.record(
        2,
        pass,
        format!("N=1 {one:e}, identical {identical:.12} (ln 4 {:.12}), orthonormal {ortho:.12} (want {want:.12})", 4f64.ln()),
    );
}

fn c3_small_world(v: &mut Verdicts) {
    let mut pairs = 0;
    let mut moves = 0;
    let mut failures = Vec::new();
    for objects in SWEEP_OBJECTS {
        for bowl in WorldSplits::default().bowl_colors {
            match sweep_small_world(objects, bowl) {
                Ok(c) => {
                    pairs += c.pairs;
                    moves += c.container_moves;
                }
                Err(e) => failures.push(e),
            }
        }
    }
    v.record(
        3,
        failures.is_empty(),
        format!("{pairs} (scene, action) pairs, {moves} container moves, failures {failures:?}"),
    );
}

struct SeedRun {
    baseline: EvalReport,
    held_out: f64,
    /// Retrieval accuracy on seen-domain, then compositional, transitions.
    retrieval: [f64; 2],
    model: PaffOutcome,
    model_eval: EvalReport,
    oracle_eval: EvalReport,
    shift_eval: EvalReport,
}

fn paff_with(s: &Stage1, config: &PaffConfig, seed: u64) -> PaffOutcome {
    let inputs = PaffInputs {
        policy: &s.policy,
        relabeler: &s.relabeler,
        candidates: &s.candidates,
        theta: s.theta,
        stage1: &[],
    };
    run_paff(
        inputs,
        config,
        &WorldSplits::default(),
        &Renderer::default(),
        seed,
    )
    .expect("run_paff")
}

fn run_seed(seed: u64) -> SeedRun {
    let (splits, renderer) = (WorldSplits::default(), Renderer::default());
    let s = stage1(seed).expect("stage 1");
    let eval_seed = derive_seed(seed, "eval");
    let base_eval = EvalConfig {
        chain_themes: vec![THEME_SHIFT],
        ..EvalConfig::default()
    };
    let baseline = evaluate(&s.policy, &base_eval, &splits, &renderer, eval_seed).unwrap();

    let held_out_seed = derive_seed(seed, "acceptance/held-out");
    let seen =
        transition_dataset(&SEEN, 40, 5, &splits.seen_themes, &splits, held_out_seed).unwrap();
    let comp =
        transition_dataset(&[COMP], 40, 5, &splits.seen_themes, &splits, held_out_seed).unwrap();
    let retrieval = [
        evaluate_retrieval(&s.relabeler, &seen, &s.candidates, &renderer)
            .unwrap()
            .accuracy,
        evaluate_retrieval(&s.relabeler, &comp, &s.candidates, &renderer)
            .unwrap()
            .accuracy,
    ];

    let comp_eval = EvalConfig {
        families: vec![COMP],
        chain_themes: vec![],
        ..EvalConfig::default()
    };
    let model = paff_with(&s, &PaffConfig::default(), seed);
    let model_eval = evaluate(&model.policy, &comp_eval, &splits, &renderer, eval_seed).unwrap();
    let mut oracle_cfg = PaffConfig::default();
    oracle_cfg.relabel.source = LabelSource::Oracle;
    let oracle = paff_with(&s, &oracle_cfg, seed);
    let oracle_eval = evaluate(&oracle.policy, &comp_eval, &splits, &renderer, eval_seed).unwrap();

    let mut shift_cfg = PaffConfig::default();
    shift_cfg.play.themes = vec![THEME_SHIFT];
    shift_cfg.play.families = SEEN.to_vec();
    let shifted = paff_with(&s, &shift_cfg, seed);
    let chain_eval = EvalConfig {
        families: vec![],
        chain_themes: vec![THEME_SHIFT],
        ..EvalConfig::default()
    };
    let shift_eval = evaluate(&shifted.policy, &chain_eval, &splits, &renderer, eval_seed).unwrap();

    SeedRun {
        held_out: baseline.success(COMP, Protocol::B).unwrap(),
        baseline,
        retrieval,
        model,
        model_eval,
        oracle_eval,
        shift_eval,
    }
}

fn c4_to_c10(v: &mut Verdicts) {
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();

    let seen_a: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            SEEN.iter()
                .map(|&f| r.baseline.success(f, Protocol::A).unwrap())
                .collect()
        })
        .collect();
    let worst_a = seen_a
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    v.record(
        4,
        worst_a >= 0.90,
        format!("seen protocol A per seed {seen_a:.3?}, min {worst_a:.3}"),
    );

    let gaps: Vec<f64> = runs
        .iter()
        .map(|r| mean(&SEEN.map(|f| r.baseline.success(f, Protocol::B).unwrap())) - r.held_out)
        .collect();
    let gap = mean(&gaps);
    v.record(
        5,
        gap >= 0.20,
        format!(
            "seen B minus compositional B per seed [{}], mean {gap:.3}",
            fmt(&gaps)
        ),
    );

    let seen_acc: Vec<f64> = runs.iter().map(|r| r.retrieval[0]).collect();
    let comp_acc: Vec<f64> = runs.iter().map(|r| r.retrieval[1]).collect();
    let pass = seen_acc.iter().all(|&a| a >= 0.99) && comp_acc.iter().all(|&a| a >= 0.95);
    v.record(
        6,
        pass,
        format!(
            "retrieval seen [{}] compositional [{}]",
            fmt(&seen_acc),
            fmt(&comp_acc)
        ),
    );

    let base: Vec<f64> = runs.iter().map(|r| r.held_out).collect();
    let adapted: Vec<f64> = runs
        .iter()
        .map(|r| r.model_eval.success(COMP, Protocol::B).unwrap())
        .collect();
    let oracle: Vec<f64> = runs
        .iter()
        .map(|r| r.oracle_eval.success(COMP, Protocol::B).unwrap())
        .collect();
    let gain = mean(&adapted) - mean(&base);
    v.record(
        7,
        gain >= 0.10,
        format!(
            "compositional B baseline [{}] adapted [{}], mean gain {gain:+.3}",
            fmt(&base),
            fmt(&adapted)
        ),
    );

    let base_len: Vec<f64> = runs
        .iter()
        .map(|r| r.baseline.chain_len(THEME_SHIFT).unwrap())
        .collect();
    let shift_len: Vec<f64> = runs
        .iter()
        .map(|r| r.shift_eval.chain_len(THEME_SHIFT).unwrap())
        .collect();
    v.record(
        8,
        mean(&shift_len) > mean(&base_len),
        format!(
            "theme-{THEME_SHIFT} Len baseline [{}] mean {:.3}, adapted [{}] mean {:.3}",
            fmt(&base_len),
            mean(&base_len),
            fmt(&shift_len),
            mean(&shift_len)
        ),
    );

    let (o, m, b) = (mean(&oracle), mean(&adapted), mean(&base));
    // The 1e-9 absorbs rounding of the means, nothing more.
    let pass = o >= m - 0.03 - 1e-9 && m - 0.03 >= b + 0.07 - 1e-9;
    v.record(
        9,
        pass,
        format!("oracle {o:.3} >= model {m:.3} - 0.03 >= baseline {b:.3} + 0.07"),
    );

    let mut details = Vec::new();
    let mut pass = true;
    for r in &runs {
        let s = &r.model.report.relabel;
        let ok = match (s.kept_precision, s.dropped_precision) {
            (Some(k), Some(d)) => k >= 0.98 && k >= d,
            (Some(k), None) => k >= 0.98,
            (None, _) => false,
        };
        pass &= ok;
        details.push(format!(
            "theta {} kept {}/{} precision {:?} dropped {:?}",
            s.theta, s.kept, s.retrieved, s.kept_precision, s.dropped_precision
        ));
    }
    v.record(
        10,
        pass,
        format!("{details:?} (empty dropped set counts as satisfied)"),
    );
}

fn c11_n_demos(v: &mut Verdicts) {
    let config = AblationConfig {
        seeds: SEEDS.to_vec(),
        ..AblationConfig::default()
    };
    let table = run_ablation(&RunConfig::default(), &config, &stage1_cache()).expect("ablation");
    let means: Vec<f64> = table
        .cells
        .iter()
        .map(|c| c.held_out_success.map_or(f64::NAN, |s| s.mean))
        .collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0] - 0.02);
    let pass = !table.failed() && table.cells.len() == 3 && table.runs.len() == 15 && monotone;
    let labels: Vec<&str> = table.cells.iter().map(|c| c.label.as_str()).collect();
    v.record(
        11,
        pass,
        format!(
            "n_demos {labels:?} mean held-out [{}], {} runs",
            fmt(&means),
            table.runs.len()
        ),
    );
}

fn c12_reproducible_cli(v: &mut Verdicts) {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY_CONFIG).unwrap();
    let fingerprint = RunConfig::from_toml(TINY_CONFIG).unwrap().fingerprint();
    let files = [
        "report.json",
        "events.jsonl",
        "paff.json",
        "calibration.json",
    ];
    let mut snapshots = Vec::new();
    for name in ["first", "second"] {
        let out = tmp.path().join(name);
        for stage in PIPELINE {
            let (code, text) = run_cli(&config, &out, &[stage]);
            assert_eq!(code, 0, "{stage}: {text}");
        }
        let dir = out.join(&fingerprint);
        snapshots.push(files.map(|f| fs::read(dir.join(f)).unwrap()));
    }
    let out = tmp.path().join("first");
    let (code, text) = run_cli(&config, &out, &["evaluate"]);
    assert_eq!(code, 0, "{text}");
    let again = fs::read(out.join(&fingerprint).join("report.json")).unwrap();
    let differing: Vec<&str> = files
        .iter()
        .zip(0..)
        .filter(|(_, i)| snapshots[0][*i] != snapshots[1][*i])
        .map(|(f, _)| *f)
        .collect();
    let pass = differing.is_empty() && again == snapshots[0][0];
    v.record(
        12,
        pass,
        format!(
            "run {fingerprint} twice, differing files {differing:?}, re-evaluate identical {}",
            again == snapshots[0][0]
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut v = Verdicts(Vec::new());
    c1_gradients(&mut v);
    c2_nce(&mut v);
    c3_small_world(&mut v);
    c4_to_c10(&mut v);
    c11_n_demos(&mut v);
    c12_reproducible_cli(&mut v);
    let failed: Vec<usize> = v.0.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
