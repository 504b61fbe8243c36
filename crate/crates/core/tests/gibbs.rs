mod common;

use common::{ks_one_sample, ks_two_sample};
use proptest::prelude::*;
use rand::Rng;
use screening_aft::data::{Dataset, Event, Observation};
use screening_aft::dist::{self, Family, LinearPredictor};
use screening_aft::gibbs::{
    is_feasible, run, tune_proposal, GibbsConfig, Priors, Sampler, SensitivitySpec, StoppingRule, TuningConfig,
};
use screening_aft::model::{AftParams, ModelSpec};
use screening_aft::rng::{stream, Domain};
use screening_aft::simulate::{simulate_dataset, study_screening, Censoring, GenModel};
use screening_aft::{Error, Execution};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn three_observations() -> Dataset {
    let obs = vec![
        Observation::new(vec![], Event::RightCensored, 2.0, f64::INFINITY),
        Observation::new(vec![], Event::Intermediate, 1.0, 3.0),
        Observation::new(vec![], Event::Advanced, 0.5, 4.0),
    ];
    Dataset::new(obs, vec![]).unwrap()
}

fn small_config(proposal_sd: f64, draws: usize, execution: Execution) -> GibbsConfig {
    GibbsConfig {
        proposal_sd: Some(proposal_sd),
        stopping: StoppingRule {
            block: draws / 2,
            min_draws: draws,
            max_draws: draws,
            ..StoppingRule::default()
        },
        execution,
        ..GibbsConfig::default()
    }
}

fn study_data(n: usize, seed: u64) -> Dataset {
    simulate_dataset(n, &GenModel::study(2), &study_screening(Censoring::Medium, 2), seed, Execution::Sequential)
        .unwrap()
        .dataset
}

// With the parameters frozen, alternating x | t and t | x draws must reproduce
// the joint law of (x, t) restricted to the observed event region.
#[test]
fn augmentation_matches_rejection_oracle() {
    let data = three_observations();
    let spec = ModelSpec::new(Family::Lognormal, Family::Weibull);
    let sampler = Sampler::new(&data, spec, Priors::default(), None).unwrap();
    let params = AftParams::new(vec![2f64.ln()], 0.8, vec![0.5], 0.7);
    let mut rng = stream(11, Domain::Chain, 0);
    let mut state = sampler.initial_state(0.1, &mut rng);
    state.params = params.clone();

    let (burn, thin, keep) = (1_000, 20, 20_000);
    let mut gibbs = vec![(Vec::new(), Vec::new()); 3];
    for it in 0..burn + thin * keep {
        sampler.augment(&mut state, &mut rng).unwrap();
        if it >= burn && (it - burn) % thin == 0 {
            for i in 0..3 {
                gibbs[i].0.push(state.x_aug[i]);
                gibbs[i].1.push(state.t_aug[i]);
            }
        }
    }

    let lx = LinearPredictor::new(params.x.beta[0], params.x.sigma);
    let lt = LinearPredictor::new(params.t.beta[0], params.t.sigma);
    let mut oracle_rng = stream(12, Domain::Chain, 0);
    for (i, obs) in data.observations.iter().enumerate() {
        let (mut xs, mut ts) = (Vec::new(), Vec::new());
        while xs.len() < keep {
            let x = dist::quantile(spec.x, lx, oracle_rng.random_range(1e-12..1.0)).unwrap();
            let t = dist::quantile(spec.t, lt, oracle_rng.random_range(1e-12..1.0)).unwrap();
            if is_feasible(obs, x, t) {
                xs.push(x);
                ts.push(t);
            }
        }
        let dx = ks_two_sample(&gibbs[i].0, &xs);
        let dt = ks_two_sample(&gibbs[i].1, &ts);
        assert!(dx < 0.02, "observation {i}: KS(x) = {dx}");
        assert!(dt < 0.02, "observation {i}: KS(t) = {dt}");
    }
}

// Without observations the posterior is the prior.
#[test]
fn prior_only_chain_recovers_the_priors() {
    let data = Dataset::new(vec![], vec![]).unwrap();
    let spec = ModelSpec::new(Family::Weibull, Family::Loglogistic);
    let priors = Priors::default();
    let sampler = Sampler::new(&data, spec, priors, None).unwrap();
    let mut rng = stream(5, Domain::Chain, 0);
    let mut state = sampler.initial_state(1.5, &mut rng);
    let (thin, keep) = (50, 20_000);
    let mut draws = vec![Vec::with_capacity(keep); 4];
    for it in 0..thin * keep {
        sampler.sweep(&mut state, &mut rng).unwrap();
        if it % thin == 0 {
            let v = state.params.to_vec();
            for j in 0..4 {
                draws[j].push(v[j]);
            }
        }
    }
    let t4 = StudentsT::new(0.0, 1.0, 4.0).unwrap();
    let lambda = priors.lambda_x;
    let half_normal = |s: f64| libm::erf(s / (lambda * 2f64.sqrt()));
    for (j, sample) in draws.iter().enumerate() {
        let d = if j % 2 == 0 {
            ks_one_sample(sample, |b| t4.cdf(b))
        } else {
            ks_one_sample(sample, half_normal)
        };
        assert!(d < 0.02, "parameter {j}: KS = {d}");
    }
}

#[test]
fn latent_times_stay_feasible_after_every_sweep() {
    let data = study_data(150, 3);
    for spec in [
        ModelSpec::new(Family::Lognormal, Family::Lognormal),
        ModelSpec::new(Family::Weibull, Family::Loglogistic),
        ModelSpec::new(Family::Exponential, Family::Weibull),
    ] {
        let sampler = Sampler::new(&data, spec, Priors::default(), None).unwrap();
        let mut rng = stream(9, Domain::Chain, 1);
        let mut state = sampler.initialize(0.05, None, 20, &mut rng).unwrap();
        sampler.check_feasible(&state).unwrap();
        for _ in 0..300 {
            sampler.sweep(&mut state, &mut rng).unwrap();
            sampler.check_feasible(&state).unwrap();
        }
    }
}

#[test]
fn runs_are_reproducible_across_execution_modes() {
    let data = study_data(80, 4);
    let spec = ModelSpec::new(Family::Lognormal, Family::Lognormal);
    let a = run(&data, spec, Priors::default(), &small_config(0.05, 400, Execution::Sequential), 21, None).unwrap();
    let b = run(&data, spec, Priors::default(), &small_config(0.05, 400, Execution::Parallel), 21, None).unwrap();
    let c = run(&data, spec, Priors::default(), &small_config(0.05, 400, Execution::Sequential), 22, None).unwrap();
    assert_eq!(a.chains, b.chains);
    assert_ne!(a.chains[0].values, c.chains[0].values);
    assert_eq!(a.total_draws, 400);
    assert_eq!(a.n_retained(), 200);
    assert_eq!(a.chains[0].first_iteration, 201);
    assert_eq!(a.history.len(), 1);
}

#[test]
fn zero_confounder_effects_reproduce_the_base_model() {
    let data = study_data(60, 5);
    let spec = ModelSpec::new(Family::Lognormal, Family::Weibull);
    let cfg = small_config(0.05, 200, Execution::Sequential);
    let base = run(&data, spec, Priors::default(), &cfg, 8, None).unwrap();
    let zero = SensitivitySpec { beta_xw: 0.0, beta_tw: 0.0 };
    let sens = run(&data, spec, Priors::default(), &cfg, 8, Some(zero)).unwrap();
    for (a, b) in base.chains.iter().zip(&sens.chains) {
        assert_eq!(a.values, b.values);
    }
    let shifted = SensitivitySpec { beta_xw: 0.5, beta_tw: -0.5 };
    let moved = run(&data, spec, Priors::default(), &cfg, 8, Some(shifted)).unwrap();
    assert_ne!(base.chains[0].values, moved.chains[0].values);
    // every chain sees the same confounder draw
    let w = &moved.chains[0].final_state.w;
    assert_eq!(w.len(), data.len());
    assert!(moved.chains.iter().all(|c| &c.final_state.w == w));
}

#[test]
fn acceptance_falls_as_the_step_grows() {
    let data = study_data(100, 6);
    let spec = ModelSpec::new(Family::Lognormal, Family::Lognormal);
    let rates: Vec<f64> = [0.005, 0.03, 0.2]
        .iter()
        .map(|&s| {
            run(&data, spec, Priors::default(), &small_config(s, 1_000, Execution::Sequential), 1, None)
                .unwrap()
                .acceptance_rate
        })
        .collect();
    assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
}

#[test]
fn exponential_scales_stay_fixed() {
    let data = study_data(60, 7);
    let spec = ModelSpec::new(Family::Exponential, Family::Exponential);
    let d = run(&data, spec, Priors::default(), &small_config(0.05, 200, Execution::Sequential), 3, None).unwrap();
    let n = d.n_params();
    assert!(d.pooled(d.px).iter().all(|&s| s == 1.0));
    assert!(d.pooled(n - 1).iter().all(|&s| s == 1.0));
    assert!(!d.free_params().contains(&d.px));
    assert!(!d.free_params().contains(&(n - 1)));
    assert_eq!(Sampler::new(&data, spec, Priors::default(), None).unwrap().proposal_dim(), n - 2);
}

#[test]
fn tuning_keeps_a_step_already_on_target() {
    let data = study_data(60, 8);
    let sampler = Sampler::new(&data, ModelSpec::new(Family::Lognormal, Family::Lognormal), Priors::default(), None)
        .unwrap();
    let cfg = TuningConfig {
        target: (0.001, 0.999),
        initial_draws: 200,
        stages: vec![100, 100],
        ..TuningConfig::default()
    };
    let out = tune_proposal(&sampler, &cfg, 1, Execution::Sequential).unwrap();
    assert_eq!(out.proposal_sd, cfg.initial_sd);
    assert_eq!(out.history.len(), 3);
    assert!(out.history.iter().all(|h| h.proposal_sd == cfg.initial_sd));
}

#[test]
fn tuning_reports_an_unreachable_target() {
    let data = study_data(60, 8);
    let sampler = Sampler::new(&data, ModelSpec::new(Family::Lognormal, Family::Lognormal), Priors::default(), None)
        .unwrap();
    let cfg = TuningConfig {
        target: (0.9999, 0.99999),
        initial_draws: 100,
        stages: vec![50],
        max_rescales: 2,
        ..TuningConfig::default()
    };
    let err = tune_proposal(&sampler, &cfg, 1, Execution::Sequential).unwrap_err();
    assert!(matches!(err, Error::Tuning { .. }), "{err}");
}

#[test]
fn tuned_run_lands_in_the_target_interval() {
    let data = study_data(100, 9);
    let spec = ModelSpec::new(Family::Lognormal, Family::Lognormal);
    let mut cfg = small_config(0.1, 400, Execution::Sequential);
    cfg.proposal_sd = None;
    cfg.tuning.initial_draws = 1_000;
    cfg.tuning.stages = vec![1_000];
    cfg.tuning.target = (0.15, 0.35);
    let d = run(&data, spec, Priors::default(), &cfg, 2, None).unwrap();
    let t = d.tuning.as_ref().unwrap();
    assert!((0.15..=0.35).contains(&t.acceptance), "{t:?}");
    assert_eq!(d.proposal_sd, t.proposal_sd);
}

#[test]
fn fit_rejects_unidentified_data() {
    let obs = vec![Observation::new(vec![], Event::RightCensored, 1.0, f64::INFINITY); 5];
    let data = Dataset::new(obs, vec![]).unwrap();
    let spec = ModelSpec::new(Family::Lognormal, Family::Lognormal);
    let err = run(&data, spec, Priors::default(), &small_config(0.1, 100, Execution::Sequential), 1, None);
    assert!(matches!(err, Err(Error::Identifiability(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_respects_arbitrary_intervals(
        l in 0.0f64..5.0,
        width in 0.01f64..5.0,
        code in 1u8..=3,
        mx in -1.0f64..3.0,
        mt in -1.0f64..3.0,
        sx in 0.1f64..2.0,
        st in 0.1f64..2.0,
        fam in 0usize..4,
        seed in 0u64..1000,
    ) {
        let delta = Event::from_code(code).unwrap();
        let r = if delta == Event::RightCensored { f64::INFINITY } else { l + width };
        let data = Dataset::new(vec![Observation::new(vec![], delta, l, r)], vec![]).unwrap();
        let family = Family::ALL[fam];
        let spec = ModelSpec::new(family, Family::Lognormal);
        let sampler = Sampler::new(&data, spec, Priors::default(), None).unwrap();
        let mut rng = stream(seed, Domain::Chain, 0);
        let mut state = sampler.initial_state(0.1, &mut rng);
        let sx = if family.has_fixed_scale() { 1.0 } else { sx };
        state.params = AftParams::new(vec![mx], sx, vec![mt], st);
        for _ in 0..20 {
            match sampler.augment(&mut state, &mut rng) {
                Ok(()) => prop_assert!(is_feasible(&data.observations[0], state.x_aug[0], state.t_aug[0])),
                Err(Error::DegenerateInterval { .. }) => break,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
