use proptest::prelude::*;

use dempref::belief::{
    pick_best_probability, posterior_log_density, preference_probability, ranking_probability, sample_posterior,
    Evidence, PreferenceMode, Ranking, Response, SamplerSettings, UpdateRule, WeightVector,
};
use dempref::dynamics::{features, rollout, Driver, System};
use dempref::engine::{self, DemPrefConfig};
use dempref::oracle::SimulatedHuman;
use dempref::querygen::{
    evaluate_query, generate_query, permutations, ranking_volume_objective, McSample, ObjectiveKind, OptBudget,
    QueryRequest,
};
use dempref::Belief;

fn weights(k: usize) -> impl Strategy<Value = WeightVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, k).prop_filter_map("inside the unit ball", |v| {
        (v.iter().map(|x| x * x).sum::<f64>() <= 1.0).then_some(WeightVector(v))
    })
}

fn phis(n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, k), n)
}

fn controls(horizon: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 2), horizon)
}

fn tiny_sampler() -> SamplerSettings {
    SamplerSettings {
        samples: 60,
        burn_in: 100,
        thin: 2,
        ..SamplerSettings::default()
    }
}

fn tiny_budget(restarts: usize, seed: u64) -> OptBudget {
    OptBudget {
        restarts,
        iterations: 1,
        mc_samples: 40,
        seed,
    }
}

fn ball_belief(seed: u64, k: usize) -> Belief<f64> {
    let evidence = Evidence::new(0.1, 5.0, UpdateRule::Rank);
    sample_posterior(&evidence, k, &tiny_sampler(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_replay_and_features_add_up(c in controls(5)) {
        let driver = Driver::<f64>::new();
        let t = rollout(&driver, &c).unwrap();
        prop_assert!(t.verify(&driver).unwrap());
        prop_assert_eq!(&rollout(&driver, &t.controls).unwrap().states, &t.states);
        let mut sum = vec![0.0; 4];
        let steps = driver.spec().steps_per_control;
        for (i, state) in t.states.iter().skip(1).enumerate() {
            let f = features(&driver, state, &c[i / steps]).unwrap();
            for (a, b) in sum.iter_mut().zip(f) {
                *a += b;
            }
        }
        for (a, b) in sum.iter().zip(&t.phi) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn driver_features_stay_in_documented_ranges(c in controls(5)) {
        let driver = Driver::<f64>::new();
        let t = rollout(&driver, &c).unwrap();
        let n = driver.spec().substeps() as f64;
        for &p in &t.phi {
            prop_assert!(p.abs() <= n * (1.0 + 1e-6));
        }
        for s in &t.states {
            let f = driver.unscaled_features(s);
            prop_assert!((0.0..=1.0).contains(&f[0]));
            prop_assert!((0.0..=25.0).contains(&f[1]));
            prop_assert!((-1.0..=1.0).contains(&f[2]));
            prop_assert!((0.0..=1.0).contains(&f[3]));
        }
    }

    #[test]
    fn every_horizon_rolls_out(t in prop::sample::select(vec![1usize, 5, 20]), seed in any::<u64>()) {
        let driver = Driver::<f64>::with_horizon(t);
        let mut rng = dempref::seed::rng(seed);
        let c = dempref::dynamics::random_controls(driver.spec(), &mut rng);
        let traj = rollout(&driver, &c).unwrap();
        prop_assert_eq!(traj.states.len(), t * driver.spec().steps_per_control + 1);
    }

    #[test]
    fn response_probabilities_normalize(w in weights(3), n in 2usize..=5, beta in 0.0f64..10.0, seed in any::<u64>()) {
        let mut rng = dempref::seed::rng(seed);
        let p: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect()).collect();
        let pick: f64 = (0..n).map(|i| pick_best_probability(&w, &p, i, beta).unwrap()).sum();
        prop_assert!((pick - 1.0).abs() <= 1e-12);
        let rank: f64 = permutations(n)
            .iter()
            .map(|o| {
                let ranked: Vec<&Vec<f64>> = o.iter().map(|&i| &p[i]).collect();
                ranking_probability(&w, &ranked, beta).unwrap()
            })
            .sum();
        prop_assert!((rank - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn higher_rationality_favors_the_reward_sort(w in weights(3), p in phis(3, 3), beta in 0.1f64..5.0) {
        let rewards: Vec<f64> = p.iter().map(|x| x.iter().zip(&w.0).map(|(a, b)| a * b).sum()).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]));
        prop_assume!(order.windows(2).all(|o| rewards[o[0]] - rewards[o[1]] > 1e-3));
        let ranked: Vec<&Vec<f64>> = order.iter().map(|&i| &p[i]).collect();
        let lo = ranking_probability(&w, &ranked, beta).unwrap();
        let hi = ranking_probability(&w, &ranked, beta * 1.5).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn two_option_models_coincide(w in weights(4), p in phis(2, 4), beta in 0.0f64..10.0) {
        let rank = ranking_probability(&w, &p, beta).unwrap();
        let pick = pick_best_probability(&w, &p, 0, beta).unwrap();
        let pair = preference_probability(&w, &p[0], &p[1], beta, PreferenceMode::Exact).unwrap();
        prop_assert!((rank - pick).abs() <= 1e-12);
        prop_assert!((rank - pair).abs() <= 1e-12);
    }

    #[test]
    fn probabilities_ignore_common_shifts(w in weights(4), p in phis(4, 4), shift in prop::collection::vec(-3.0f64..3.0, 4), beta in 0.0f64..10.0) {
        let moved: Vec<Vec<f64>> = p.iter().map(|x| x.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        prop_assert!((ranking_probability(&w, &p, beta).unwrap() - ranking_probability(&w, &moved, beta).unwrap()).abs() <= 1e-12);
        for i in 0..4 {
            let a = pick_best_probability(&w, &p, i, beta).unwrap();
            let b = pick_best_probability(&w, &moved, i, beta).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for mode in [PreferenceMode::Exact, PreferenceMode::Approx] {
            let a = preference_probability(&w, &p[0], &p[1], beta, mode).unwrap();
            let b = preference_probability(&w, &moved[0], &moved[1], beta, mode).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_option_update_rules_share_a_posterior(w in weights(3), p in phis(2, 3), top in 0usize..2) {
        let ranking = Ranking::new(vec![top, 1 - top]).unwrap();
        let density = |rule| {
            let mut e = Evidence::new(0.1, 5.0, rule);
            e.responses.push(Response::new(p.clone(), ranking.clone()).unwrap());
            posterior_log_density(&w, &e).unwrap()
        };
        let rank = density(UpdateRule::Rank);
        prop_assert!((rank - density(UpdateRule::PickBest)).abs() <= 1e-12);
        prop_assert!((rank - density(UpdateRule::Pairwise)).abs() <= 1e-12);
    }

    #[test]
    fn volume_objective_is_bounded(p in phis(4, 3), beta in 0.0f64..10.0, seed in any::<u64>()) {
        let mc = McSample::all(&ball_belief(seed, 3)).unwrap();
        for n in 2..=4 {
            let bound = 1.0 - 1.0 / (1..=n).product::<usize>() as f64;
            prop_assert!(ranking_volume_objective(&p[..n], &mc, beta).unwrap() <= bound + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn posterior_samples_stay_in_the_ball_and_repeat(p in phis(3, 3), seed in any::<u64>()) {
        let mut e = Evidence::new(0.1, 5.0, UpdateRule::Rank);
        e.responses.push(Response::new(p, Ranking::new(vec![1, 2, 0]).unwrap()).unwrap());
        let a = sample_posterior(&e, 3, &tiny_sampler(), seed).unwrap();
        for w in &a.samples {
            prop_assert!(w.norm() <= 1.0);
        }
        prop_assert_eq!(a, sample_posterior(&e, 3, &tiny_sampler(), seed).unwrap());
    }

    #[test]
    fn queries_keep_the_stored_trajectory_and_their_score(c in controls(5), seed in any::<u64>()) {
        let driver = Driver::<f64>::new();
        let stored = rollout(&driver, &c).unwrap();
        let belief = ball_belief(seed, 4);
        let budget = tiny_budget(1, seed);
        let req = QueryRequest {
            n_opt: 3,
            stored: Some(&stored),
            beta_response: 5.0,
            objective: ObjectiveKind::Ranking,
            budget: &budget,
        };
        let q = generate_query(&driver, &belief, &req).unwrap();
        prop_assert_eq!(q.len(), 3);
        prop_assert_eq!(&q.trajectories[q.stored_index.unwrap()], &stored);
        prop_assert_eq!(q.objective_value, evaluate_query(&q, &belief, &req).unwrap());
    }

    #[test]
    fn more_restarts_never_hurt(seed in any::<u64>()) {
        let driver = Driver::<f64>::new();
        let belief = ball_belief(seed, 4);
        let value = |restarts| {
            let budget = tiny_budget(restarts, seed);
            let req = QueryRequest {
                n_opt: 2,
                stored: None,
                beta_response: 5.0,
                objective: ObjectiveKind::Ranking,
                budget: &budget,
            };
            generate_query(&driver, &belief, &req).unwrap().objective_value
        };
        prop_assert!(value(2) >= value(1));
    }

    #[test]
    fn steps_add_one_response_and_keep_the_buffer_size(c in controls(5), seed in any::<u64>()) {
        let driver = Driver::<f64>::new();
        let demo = rollout(&driver, &c).unwrap();
        let config = DemPrefConfig {
            n_dem: 1,
            n_queries: 2,
            n_opt: 3,
            use_ic: true,
            sampler: tiny_sampler(),
            budget: tiny_budget(1, 0),
            seed,
            ..DemPrefConfig::default()
        };
        let mut human = SimulatedHuman::new(WeightVector(Driver::<f64>::true_weights()), 0.1, 5.0, seed, true).unwrap();
        let mut state = engine::initial_state(&config, &driver as &dyn System<f64>, &[demo], None).unwrap();
        for i in 0..config.n_queries {
            let next = engine::dempref_step(&state, &config, &driver, &mut human).unwrap();
            prop_assert_eq!(next.evidence.responses.len(), i + 1);
            prop_assert_eq!(next.buffer.len(), config.n_dem);
            prop_assert_eq!(next.iteration, i + 1);
            state = next;
        }
    }
}
