mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use splatbench::bench::{synth_scene, SynthConfig};
use splatbench::densify::{
    growth_budget, mcmc_add, relocation_params, weighted_sample_without_replacement, DensifySchedule, StrategyConfig,
    StrategyKind,
};
use splatbench::init::{build_init, InitInputs, InitSize, InitSource, InitSpec};
use splatbench::optim::{read_ndjson, train, write_ndjson, Adam, TrainConfig};
use splatbench::scalar::logit;
use splatbench::{GaussianCloud, Vec3};

#[test]
fn weighted_draws_follow_weights() {
    let items = [0usize, 1, 2, 3, 4];
    let weights = [1.0f64, 2.0, 3.0, 4.0, 0.0];
    let trials = 100_000u64;
    let mut counts = [0u64; 5];
    for seed in 0..trials {
        let got = weighted_sample_without_replacement(&items, &weights, 1, &mut rng(seed));
        counts[got[0]] += 1;
    }
    assert_eq!(counts[4], 0);
    let chi2: f64 = (0..4)
        .map(|i| {
            let e = trials as f64 * weights[i] / 10.0;
            (counts[i] as f64 - e).powi(2) / e
        })
        .sum();
    // upper 0.001 quantile of chi-square with 3 degrees of freedom
    assert!(chi2 < 16.266, "chi-square {chi2}");
}

#[test]
fn weighted_draws_are_distinct_and_skip_zero_weights() {
    let items: Vec<usize> = (10..30).collect();
    let weights: Vec<f64> = (0..20).map(|i| if i % 4 == 0 { 0.0 } else { i as f64 }).collect();
    for seed in 0..200 {
        let got = weighted_sample_without_replacement(&items, &weights, 100, &mut rng(seed));
        assert_eq!(got.len(), 15);
        assert!(got.windows(2).all(|w| w[0] < w[1]));
        assert!(got.iter().all(|i| (i - 10) % 4 != 0));
    }
}

fn random_cloud(n: usize, seed: u64) -> GaussianCloud<f64> {
    let mut r = rng(seed);
    let mut c = GaussianCloud::empty(0).unwrap();
    for _ in 0..n {
        let m = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        c.push_isotropic(m, 0.05, logit(r.random_range(0.05..0.9)), [0.3; 3]);
    }
    c
}

#[test]
fn mcmc_growth_is_limited_by_the_cap() {
    let cfg = StrategyConfig::of_kind(StrategyKind::Mcmc);
    for (n, cap, want) in [(1000, 2000, 50), (1000, 1030, 30), (1000, 1000, 0), (10, 100, 1), (39, 100, 2)] {
        let mut c = random_cloud(n, n as u64);
        let mut adam = Adam::new(&c);
        assert_eq!(mcmc_add(&mut c, &mut adam, &cfg, cap, &mut rng(1)).unwrap(), want);
        assert_eq!((c.len(), adam.len()), (n + want, n + want));
    }
}

proptest! {
    #[test]
    fn single_copy_relocation_is_identity(o in 0.01f64..0.99, s in 0.01f64..2.0) {
        let (no, ns) = relocation_params(o, Vec3::new(s, 2.0 * s, 0.5 * s), 1);
        prop_assert!((no - o).abs() < 1e-12);
        prop_assert!((ns.x - s).abs() < 1e-9 * s && (ns.y - 2.0 * s).abs() < 1e-9 * s);
    }

    #[test]
    fn relocated_copies_composite_to_the_original_opacity(o in 0.01f64..0.99, k in 1usize..20) {
        let (no, _) = relocation_params(o, Vec3::new(1.0, 1.0, 1.0), k);
        let stacked = 1.0 - (1.0 - no).powi(k as i32);
        prop_assert!((stacked - o).abs() < 1e-9);
    }

    #[test]
    fn growth_budget_is_monotone_and_ends_at_cap(initial in 0usize..5000, cap in 1usize..5000, events in 1usize..40, f in 0.0f64..1.0) {
        let mut prev = 0;
        for e in 1..=events {
            let b = growth_budget(initial, cap, f, e, events);
            prop_assert!(b >= prev && b <= cap);
            prev = b;
        }
        prop_assert_eq!(prev, cap);
    }

    #[test]
    fn schedule_events_match_enumeration(interval in 1usize..60, start in 0usize..300, stop in 0usize..600) {
        let s = DensifySchedule { interval, start, stop, total_steps: 1000 };
        let steps: Vec<usize> = (1..=1000).filter(|&t| s.is_boundary(t)).collect();
        prop_assert_eq!(steps.len(), s.event_count());
        for (k, t) in steps.iter().enumerate() {
            prop_assert_eq!(s.event_index(*t), k + 1);
            prop_assert!(*t > start && *t <= stop && t % interval == 0);
        }
    }
}

fn short_config(parallel: bool) -> TrainConfig {
    TrainConfig {
        total_steps: 200,
        densify_interval: 40,
        densify_start: 40,
        densify_stop: Some(160),
        cap: Some(300),
        parallel,
        ..TrainConfig::desk()
    }
}

#[test]
fn thread_pool_does_not_change_training() {
    let s = synth_scene::<f64>(&SynthConfig::default()).unwrap();
    let inputs = InitInputs { cameras: &s.scene.cameras, sfm: &s.sfm, cap: Some(300), compare_sizes: vec![] };
    let spec = InitSpec::new(InitSource::Sfm, InitSize::Count(30));
    for kind in [StrategyKind::Absgs, StrategyKind::Idhfr] {
        let run = |parallel| {
            let init = build_init(&spec, &inputs).unwrap();
            train(&s.scene, init, &StrategyConfig::of_kind(kind), &short_config(parallel)).unwrap()
        };
        let (a, b) = (run(false), run(true));
        assert_eq!(a.log, b.log, "{kind}");
        assert_eq!(a.cloud.means, b.cloud.means, "{kind}");
    }
}

#[test]
fn training_log_covers_every_step_and_round_trips() {
    let s = synth_scene::<f64>(&SynthConfig::default()).unwrap();
    let inputs = InitInputs { cameras: &s.scene.cameras, sfm: &s.sfm, cap: Some(300), compare_sizes: vec![] };
    let init = build_init(&InitSpec::new(InitSource::Sfm, InitSize::All), &inputs).unwrap();
    let cfg = short_config(true);
    let out = train(&s.scene, init, &StrategyConfig::of_kind(StrategyKind::Absgs), &cfg).unwrap();
    assert_eq!(out.log.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=200).collect::<Vec<_>>());
    assert!(out.log.iter().all(|r| r.n <= 300 && s.scene.train.iter().any(|&v| s.scene.cameras[v].id == r.view)));
    let first: f64 = out.log[..20].iter().map(|r| r.loss).sum();
    let last: f64 = out.log[180..].iter().map(|r| r.loss).sum();
    assert!(last < first, "loss {first} -> {last}");
    let mut buf = Vec::new();
    write_ndjson(&out.log, &mut buf).unwrap();
    assert_eq!(read_ndjson(std::str::from_utf8(&buf).unwrap()).unwrap(), out.log);
}

#[test]
fn initial_cloud_above_cap_is_rejected() {
    let s = synth_scene::<f64>(&SynthConfig::default()).unwrap();
    let inputs = InitInputs { cameras: &s.scene.cameras, sfm: &s.sfm, cap: None, compare_sizes: vec![] };
    let init = build_init(&InitSpec::new(InitSource::Sfm, InitSize::All), &inputs).unwrap();
    let cfg = TrainConfig { cap: Some(init.len() - 1), ..short_config(false) };
    assert!(train(&s.scene, init, &StrategyConfig::default(), &cfg).is_err());
}
