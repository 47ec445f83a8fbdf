mod common;

use auxabc::{
    generate_dataset, run_abc_smc, AuxiliaryDiscrepancy, ErythroblastModel, ErythroblastParams,
    NaiveDiscrepancy, NaiveMode, Prior, SmcConfig, StopReason,
};
use common::{assert_run_invariants, same_population, Counting, MeanStdDistance, NormalMean};

fn config(particles: usize, replications: usize, min_acceptance: f64, seed: u64) -> SmcConfig {
    SmcConfig {
        particles,
        alpha: 0.5,
        replications,
        min_acceptance,
        max_generations: 60,
        seed,
        workers: None,
    }
}

#[test]
fn toy_run_satisfies_invariants_and_counts_calls() {
    let prior = common::normal_mean_prior(10.0);
    let obs = generate_dataset(&NormalMean, &common::theta(1.3), 20, 1, 5).unwrap();
    let disc = MeanStdDistance::new(&obs);
    let sim = Counting::new(NormalMean);
    let cfg = config(200, 1, 0.15, 11);
    let post = run_abc_smc(&prior, &sim, &disc, obs.len(), &cfg).unwrap();
    assert_run_invariants(&post, &cfg, obs.len());
    assert_eq!(sim.count(), post.simulator_calls);
    assert!(post.refinements() >= 1);
    assert_eq!(post.stop_reason, StopReason::AcceptanceRate);
    assert!(*post.acceptance_rates().last().unwrap() <= cfg.min_acceptance);
}

#[test]
fn erythroblast_run_is_identical_across_worker_counts() {
    let model = ErythroblastModel::case_study();
    let theta = ErythroblastParams::reference(0.1).to_vector();
    let obs = generate_dataset(&model, &theta, 6, 1, 3).unwrap();
    let prior = Prior::erythroblast();
    let disc = AuxiliaryDiscrepancy::new(&obs, false).unwrap();
    let mut cfg = config(100, 5, 0.3, 21);

    cfg.workers = Some(1);
    let one = run_abc_smc(&prior, &model, &disc, obs.len(), &cfg).unwrap();
    cfg.workers = Some(8);
    let eight = run_abc_smc(&prior, &model, &disc, obs.len(), &cfg).unwrap();
    assert_run_invariants(&one, &cfg, obs.len());
    assert!(same_population(&one, &eight));

    let naive = NaiveDiscrepancy::new(&obs, NaiveMode::MeanCurve);
    cfg.workers = Some(1);
    let one = run_abc_smc(&prior, &model, &naive, obs.len(), &cfg).unwrap();
    cfg.workers = Some(8);
    let eight = run_abc_smc(&prior, &model, &naive, obs.len(), &cfg).unwrap();
    assert_run_invariants(&one, &cfg, obs.len());
    assert!(same_population(&one, &eight));
}

#[test]
fn full_acceptance_threshold_returns_first_generation() {
    let prior = common::normal_mean_prior(10.0);
    let obs = generate_dataset(&NormalMean, &common::theta(0.0), 20, 1, 1).unwrap();
    let disc = MeanStdDistance::new(&obs);
    let cfg = config(100, 1, 1.0, 2);
    let post = run_abc_smc(&prior, &NormalMean, &disc, obs.len(), &cfg).unwrap();
    assert_eq!(post.history.len(), 1);
    assert_eq!(post.population.generation, 1);
    assert_eq!(post.population.len(), 50);
    assert_eq!(post.simulator_calls, 100 * 20);
    assert!(post.population.particles.iter().all(|p| p.weight == 1.0));
}

#[test]
fn generation_cap_stops_the_loop() {
    let prior = common::normal_mean_prior(10.0);
    let obs = generate_dataset(&NormalMean, &common::theta(0.0), 20, 1, 1).unwrap();
    let disc = MeanStdDistance::new(&obs);
    let mut cfg = config(100, 1, 0.01, 2);
    cfg.max_generations = 2;
    let post = run_abc_smc(&prior, &NormalMean, &disc, obs.len(), &cfg).unwrap();
    assert_eq!(post.stop_reason, StopReason::GenerationCap);
    assert_eq!(post.refinements(), 2);
    assert_run_invariants(&post, &cfg, obs.len());
}

#[test]
fn same_seed_same_output_different_seed_different_output() {
    let prior = common::normal_mean_prior(10.0);
    let obs = generate_dataset(&NormalMean, &common::theta(2.0), 20, 1, 8).unwrap();
    let disc = MeanStdDistance::new(&obs);
    let a = run_abc_smc(&prior, &NormalMean, &disc, 20, &config(100, 1, 0.2, 4)).unwrap();
    let b = run_abc_smc(&prior, &NormalMean, &disc, 20, &config(100, 1, 0.2, 4)).unwrap();
    let c = run_abc_smc(&prior, &NormalMean, &disc, 20, &config(100, 1, 0.2, 5)).unwrap();
    assert!(same_population(&a, &b));
    assert!(!same_population(&a, &c));
}

#[test]
fn toy_posterior_mean_converges_across_seeds() {
    let prior = common::normal_mean_prior(10.0);
    let mut errors = Vec::new();
    for seed in 0..20u64 {
        let obs = generate_dataset(&NormalMean, &common::theta(-2.5), 20, 1, 100 + seed).unwrap();
        let disc = MeanStdDistance::new(&obs);
        let post = run_abc_smc(&prior, &NormalMean, &disc, 20, &config(400, 1, 0.1, seed)).unwrap();
        let mean = post.population.weighted_mean().unwrap()[0];
        errors.push((mean - disc.observed.0).abs());
    }
    errors.sort_by(f64::total_cmp);
    let analytic_std = (1.0f64 / 20.0).sqrt();
    assert!(errors[10] < 0.3 * analytic_std, "median error {}", errors[10]);
}

#[test]
fn erythroblast_posterior_concentrates_at_full_budget() {
    let model = ErythroblastModel::case_study();
    let theta = ErythroblastParams::reference(0.1).to_vector();
    let obs = generate_dataset(&model, &theta, 20, 1, 2024).unwrap();
    let prior = Prior::erythroblast();
    let disc = AuxiliaryDiscrepancy::new(&obs, false).unwrap();
    let cfg = config(400, 60, 0.15, 7);
    let post = run_abc_smc(&prior, &model, &disc, obs.len(), &cfg).unwrap();
    assert_run_invariants(&post, &cfg, obs.len());

    let mean = post.population.weighted_mean().unwrap()[0];
    let std = post.population.weighted_std("r_g").unwrap();
    let prior_std = 0.5 / 12f64.sqrt();
    assert!(mean > 0.03 && mean < 0.09, "r_g mean {mean}");
    assert!(std < 0.5 * prior_std, "r_g std {std}");
}
