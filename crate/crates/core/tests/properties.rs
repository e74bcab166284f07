//! Property tests over random scenes, actions and play logs.

use ndarray::Array1;
use proptest::prelude::*;

use paff::grammar::{enumerate_all_shapes, sample_instruction, Family};
use paff::harness::{fulfils, RandomActor};
use paff::learn::nce_loss;
use paff::paff::{oracle_relabel, play, PlayConfig};
use paff::policy::{argmax_first, scripted_expert};
use paff::world::{
    derive_rng, is_satisfied, new_scene, oracle_instruction, render, reset_containers, step, Cell,
    PickPlaceAction, Renderer, SceneSpec, WorldSplits,
};

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::PLACEMENT.to_vec())
}

fn actions(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..36usize, 0..36usize), 1..n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenes_and_renders_are_pure(seed in any::<u64>(), f in family(), theme in 0u8..4) {
        let spec = SceneSpec::for_family(f);
        let splits = WorldSplits::default();
        let a = new_scene(seed, &spec, &splits).unwrap();
        let b = new_scene(seed, &spec, &splits).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(render(&a, theme).unwrap(), render(&b, theme).unwrap());
        prop_assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn steps_conserve_objects_and_report_soundly(seed in any::<u64>(), f in family(), acts in actions(20)) {
        let splits = WorldSplits::default();
        let mut scene = new_scene(seed, &SceneSpec::for_family(f), &splits).unwrap();
        let multiset = scene.object_multiset();
        let candidates = enumerate_all_shapes(&Family::PLACEMENT, &splits);
        for (i, (p, q)) in acts.into_iter().enumerate() {
            let action = PickPlaceAction::new(Cell::from_index(p, 6), Cell::from_index(q, 6));
            let (next, event) = step(&scene, action).unwrap();
            prop_assert_eq!(step(&scene, action).unwrap(), (next.clone(), event));
            prop_assert_eq!(event.is_noop(), next == scene);
            prop_assert_eq!(next.object_multiset(), multiset.clone());
            prop_assert!(next.validate().is_ok());
            if let Some(instr) = oracle_instruction(&event, &splits) {
                prop_assert!(candidates.contains(&instr), "{} outside the grammar", instr);
                prop_assert!(is_satisfied(&next, &instr).unwrap());
                prop_assert!(fulfils(&instr, &event));
            }
            scene = if i % 7 == 6 {
                reset_containers(&next, &mut derive_rng(seed, &format!("reset/{i}"))).unwrap()
            } else {
                next
            };
            prop_assert_eq!(scene.object_multiset(), multiset.clone());
        }
    }

    #[test]
    fn the_expert_fulfils_every_feasible_instruction(seed in any::<u64>(), f in family()) {
        let splits = WorldSplits::default();
        let scene = new_scene(seed, &SceneSpec::for_family(f), &splits).unwrap();
        let mut rng = derive_rng(seed, "instruction");
        let instr = sample_instruction(&mut rng, f, &splits, Some(&scene), true).unwrap();
        let action = scripted_expert(&scene, &instr).expect("feasible instruction");
        let (next, event) = step(&scene, action).unwrap();
        prop_assert!(fulfils(&instr, &event));
        prop_assert!(is_satisfied(&next, &instr).unwrap());
    }

    #[test]
    fn argmax_ignores_shifts_and_positive_scales(
        v in prop::collection::vec(-10.0f64..10.0, 1..40),
        shift in -100.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        let a = Array1::from(v);
        let i = argmax_first(a.view());
        prop_assert_eq!(argmax_first(a.mapv(|x| x + shift).view()), i);
        prop_assert_eq!(argmax_first(a.mapv(|x| x * scale).view()), i);
    }

    #[test]
    fn nce_is_nonnegative_and_ln_n_on_identical_rows(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6),
        tau in 0.05f64..2.0,
    ) {
        let n = rows.len();
        let q = ndarray::Array2::from_shape_vec((n, 3), rows.concat()).unwrap();
        let out = nce_loss(q.view(), q.view(), tau, false).unwrap();
        prop_assert!(out.loss >= -1e-12);
        let same = ndarray::Array2::from_shape_fn((n, 3), |(_, j)| q[[0, j]]);
        let flat = nce_loss(same.view(), same.view(), tau, false).unwrap();
        prop_assert!((flat.loss - (n as f64).ln()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn hindsight_labels_describe_what_happened(seed in any::<u64>()) {
        let splits = WorldSplits::default();
        let config = PlayConfig { n_demos: 8, ..Default::default() };
        let records = play(&RandomActor { seed }, &config, &splits, &Renderer::default(), seed).unwrap().records;
        let (samples, stats) = oracle_relabel(&records, &splits);
        prop_assert_eq!(stats.kept, samples.len());
        for s in &samples {
            let r = &records[s.record];
            prop_assert_eq!(s.action, r.action);
            prop_assert!(fulfils(&s.instruction, &r.oracle_event));
            prop_assert!(is_satisfied(&r.post_state().unwrap(), &s.instruction).unwrap());
        }
    }
}
