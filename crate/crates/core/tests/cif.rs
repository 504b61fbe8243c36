mod common;

use proptest::prelude::*;
use screening_aft::cif::{
    all_targets, conditional_cif, linspace, marginal_cif, predictive_sample, total_cif, CifConfig, CifCurve, Covariates,
    Predictive, Target,
};
use screening_aft::data::Dataset;
use screening_aft::dist::{self, Family, LinearPredictor};
use screening_aft::model::{AftParams, ModelSpec};
use screening_aft::simulate::{simulate_dataset, study_screening, Censoring, GenModel};
use screening_aft::Execution;

const LL: ModelSpec = ModelSpec { x: Family::Lognormal, t: Family::Lognormal };

fn study_data(p: usize, n: usize, seed: u64) -> Dataset {
    simulate_dataset(n, &GenModel::study(p), &study_screening(Censoring::Medium, p), seed, Execution::Sequential)
        .unwrap()
        .dataset
}

fn truth(p: usize) -> AftParams {
    let b = |b0: f64| std::iter::once(b0).chain(std::iter::repeat_n(0.5, p)).collect::<Vec<_>>();
    AftParams::new(b(3.0), 0.2, b(1.2), 0.3)
}

fn config(j: usize) -> CifConfig {
    CifConfig { mc_samples: j, ..CifConfig::default() }
}

/// Average of the closed-form CDF over every dataset row.
fn mixture_cdf(data: &Dataset, params: &AftParams, g: f64) -> f64 {
    data.observations
        .iter()
        .map(|o| {
            let loc = params.x.beta[0] + o.z.iter().zip(&params.x.beta[1..]).map(|(z, b)| z * b).sum::<f64>();
            dist::cdf(Family::Lognormal, LinearPredictor::new(loc, params.x.sigma), g).unwrap()
        })
        .sum::<f64>()
        / data.len() as f64
}

/// F_y(g) = ∫ f_x(x) F_t(g − x) dx by the midpoint rule.
fn convolution_cdf(lx: LinearPredictor, lt: LinearPredictor, g: f64) -> f64 {
    let n = 20_000;
    let h = g / n as f64;
    (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            dist::density(Family::Lognormal, lx, x).unwrap() * dist::cdf(Family::Lognormal, lt, g - x).unwrap() * h
        })
        .sum()
}

fn assert_valid(c: &CifCurve) {
    assert_eq!(c.grid.len(), c.median.len());
    for i in 0..c.len() {
        assert!(0.0 <= c.lower[i] && c.lower[i] <= c.median[i] && c.median[i] <= c.upper[i] && c.upper[i] <= 1.0);
        if i > 0 {
            assert!(c.lower[i] >= c.lower[i - 1] && c.median[i] >= c.median[i - 1] && c.upper[i] >= c.upper[i - 1]);
        }
    }
    if c.grid[0] == 0.0 {
        assert_eq!(c.upper[0], 0.0);
    }
}

#[test]
fn intercept_only_marginal_matches_conditional() {
    let data = study_data(0, 300, 1);
    let draws = vec![truth(0), AftParams::new(vec![2.9], 0.25, vec![1.1], 0.35)];
    let p = Predictive::new(LL, &data, draws).unwrap();
    let grid = linspace(0.0, 40.0, 81);
    let cfg = config(10_000);
    for target in [Target::X, Target::T] {
        let m = marginal_cif(&p, target, &grid, &cfg, 3, Execution::Parallel).unwrap();
        let c = conditional_cif(&p, target, &[], &grid, &cfg, Execution::Parallel).unwrap();
        let tol = 2.0 / (cfg.mc_samples as f64).sqrt();
        for i in 0..grid.len() {
            assert!((m.median[i] - c.median[i]).abs() < tol, "{target} at {}: {} vs {}", grid[i], m.median[i], c.median[i]);
        }
    }
}

#[test]
fn marginal_x_under_the_truth_overlays_the_mixture_cdf() {
    let data = study_data(2, 2_000, 2);
    let params = truth(2);
    let p = Predictive::new(LL, &data, vec![params.clone()]).unwrap();
    let grid = CifConfig::default().grid(&data).unwrap();
    let m = marginal_cif(&p, Target::X, &grid, &config(10_000), 4, Execution::Parallel).unwrap();
    for (i, &g) in grid.iter().enumerate() {
        let oracle = mixture_cdf(&data, &params, g);
        assert!((m.median[i] - oracle).abs() < 0.02, "at {g}: {} vs {oracle}", m.median[i]);
    }
}

#[test]
fn total_time_matches_the_convolution_oracle() {
    let data = study_data(0, 200, 3);
    let params = truth(0);
    let p = Predictive::new(LL, &data, vec![params]).unwrap();
    let grid = linspace(0.0, 40.0, 41);
    let y = total_cif(&p, Covariates::Empirical, &grid, &config(40_000), 5, Execution::Parallel).unwrap();
    let (lx, lt) = (LinearPredictor::new(3.0, 0.2), LinearPredictor::new(1.2, 0.3));
    for (i, &g) in grid.iter().enumerate().skip(1) {
        let oracle = convolution_cdf(lx, lt, g);
        assert!((y.median[i] - oracle).abs() < 0.01, "at {g}: {} vs {oracle}", y.median[i]);
    }
}

#[test]
fn doubling_j_shrinks_the_jitter_by_root_two() {
    let data = study_data(2, 500, 4);
    let p = Predictive::new(LL, &data, vec![truth(2)]).unwrap();
    let grid = vec![15.0, 20.0, 25.0];
    let spread = |j: usize, offset: u64| {
        let runs: Vec<CifCurve> = (0..300)
            .map(|s| marginal_cif(&p, Target::X, &grid, &config(j), offset + s, Execution::Sequential).unwrap())
            .collect();
        (0..grid.len())
            .map(|g| {
                let v: Vec<f64> = runs.iter().map(|c| c.median[g]).collect();
                common::sd(&v).powi(2)
            })
            .sum::<f64>()
    };
    let ratio = spread(1_000, 0) / spread(2_000, 10_000);
    assert!((1.5..2.7).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn total_time_is_dominated_by_onset() {
    let data = study_data(2, 400, 5);
    let draws = vec![truth(2), AftParams::new(vec![2.8, 0.4, 0.6], 0.3, vec![1.0, 0.6, 0.3], 0.5)];
    let p = Predictive::new(LL, &data, draws).unwrap();
    let grid = CifConfig::default().grid(&data).unwrap();
    let cfg = config(2_000);
    let x = marginal_cif(&p, Target::X, &grid, &cfg, 6, Execution::Parallel).unwrap();
    let y = marginal_cif(&p, Target::Y, &grid, &cfg, 6, Execution::Parallel).unwrap();
    for i in 0..grid.len() {
        assert!(y.lower[i] <= x.lower[i] && y.median[i] <= x.median[i] && y.upper[i] <= x.upper[i]);
    }
}

#[test]
fn vanishing_progression_time_leaves_onset_unchanged() {
    let data = study_data(0, 200, 6);
    let p = Predictive::new(LL, &data, vec![AftParams::new(vec![3.0], 0.2, vec![-40.0], 0.01)]).unwrap();
    let grid = linspace(0.0, 40.0, 161);
    let cfg = config(5_000);
    let x = marginal_cif(&p, Target::X, &grid, &cfg, 7, Execution::Sequential).unwrap();
    let y = total_cif(&p, Covariates::Empirical, &grid, &cfg, 7, Execution::Sequential).unwrap();
    for i in 0..grid.len() {
        assert!((x.median[i] - y.median[i]).abs() <= 1.0 / 5_000.0);
    }
}

#[test]
fn shared_covariate_rows_reproduce_the_generative_correlation() {
    let data = study_data(2, 20_000, 7);
    let p = Predictive::new(LL, &data, vec![truth(2)]).unwrap();
    let pairs = predictive_sample(&p, 0, Covariates::Empirical, 200_000, 8).unwrap();
    let (x, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (mx, mt) = (common::mean(&x), common::mean(&t));
    let cov = x.iter().zip(&t).map(|(a, b)| (a - mx) * (b - mt)).sum::<f64>() / (x.len() - 1) as f64;
    let r = cov / (common::sd(&x) * common::sd(&t));
    assert!((r - 0.799).abs() < 0.05, "Pearson r = {r}");
}

#[test]
fn fixed_covariates_give_independent_coordinates() {
    let data = study_data(2, 500, 8);
    let p = Predictive::new(LL, &data, vec![truth(2)]).unwrap();
    let pairs = predictive_sample(&p, 0, Covariates::Fixed(&[0.3, 1.0]), 100_000, 9).unwrap();
    let (x, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (mx, mt) = (common::mean(&x), common::mean(&t));
    let cov = x.iter().zip(&t).map(|(a, b)| (a - mx) * (b - mt)).sum::<f64>() / (x.len() - 1) as f64;
    assert!((cov / (common::sd(&x) * common::sd(&t))).abs() < 0.02);
}

#[test]
fn execution_modes_agree_and_outputs_round_trip() {
    let data = study_data(2, 300, 9);
    let draws = vec![truth(2), AftParams::new(vec![2.8, 0.4, 0.6], 0.3, vec![1.0, 0.6, 0.3], 0.5)];
    let p = Predictive::new(LL, &data, draws).unwrap();
    let grid = CifConfig::default().grid(&data).unwrap();
    let cfg = config(1_000);
    let a = all_targets(&p, Covariates::Empirical, &grid, &cfg, 1, Execution::Sequential).unwrap();
    let b = all_targets(&p, Covariates::Empirical, &grid, &cfg, 1, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let c = &a[2];
    c.write_csv(dir.path().join("y.csv")).unwrap();
    c.write_json(dir.path().join("y.json")).unwrap();
    let back: CifCurve = serde_json::from_str(&std::fs::read_to_string(dir.path().join("y.json")).unwrap()).unwrap();
    assert_eq!(&back, c);
    let mut rdr = csv::Reader::from_path(dir.path().join("y.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["grid", "lower", "median", "upper"]);
    let rows: Vec<Vec<f64>> = rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), grid.len());
    assert_eq!(rows[17], vec![c.grid[17], c.lower[17], c.median[17], c.upper[17]]);
}

#[test]
fn confounder_flattens_the_conditional_curve() {
    use screening_aft::gibbs::SensitivitySpec;
    let data = study_data(0, 100, 10);
    let p = Predictive::new(LL, &data, vec![truth(0)]).unwrap();
    let grid = linspace(0.0, 10.0, 101);
    let cfg = CifConfig::default();
    let plain = conditional_cif(&p, Target::T, &[], &grid, &cfg, Execution::Sequential).unwrap();
    let wide = p.clone().with_sensitivity(Some(SensitivitySpec { beta_xw: 1.0, beta_tw: 1.0 }));
    let mixed = conditional_cif(&wide, Target::T, &[], &grid, &cfg, Execution::Sequential).unwrap();
    assert_valid(&mixed);
    // the median is unchanged; the tails are heavier on both sides
    assert!((mixed.median_at(1.2f64.exp()) - 0.5).abs() < 1e-3);
    assert!(mixed.median_at(1.0) > plain.median_at(1.0));
    assert!(mixed.median_at(8.0) < plain.median_at(8.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn curves_are_monotone_bounded_and_ordered(
        fams in (0usize..4, 0usize..4),
        draws in prop::collection::vec((1.0f64..3.5, 0.2f64..1.5, -0.5f64..0.5, -0.5f64..2.0, 0.2f64..1.5, -0.5f64..0.5), 1..6),
        seed in any::<u64>(),
        z in -2.0f64..2.0,
    ) {
        let spec = ModelSpec::new(Family::ALL[fams.0], Family::ALL[fams.1]);
        let data = study_data(2, 60, seed % 1000);
        let sx = |s: f64| if spec.x.has_fixed_scale() { 1.0 } else { s };
        let st = |s: f64| if spec.t.has_fixed_scale() { 1.0 } else { s };
        let params: Vec<AftParams> = draws
            .iter()
            .map(|&(bx, sgx, cx, bt, sgt, ct)| AftParams::new(vec![bx, cx, cx], sx(sgx), vec![bt, ct, -ct], st(sgt)))
            .collect();
        let p = Predictive::new(spec, &data, params).unwrap();
        let grid = CifConfig::default().grid(&data).unwrap();
        let cfg = config(300);
        for c in all_targets(&p, Covariates::Empirical, &grid, &cfg, seed, Execution::Sequential).unwrap() {
            assert_valid(&c);
        }
        for c in all_targets(&p, Covariates::Fixed(&[z, 1.0]), &grid, &cfg, seed, Execution::Sequential).unwrap() {
            assert_valid(&c);
        }
    }
}
