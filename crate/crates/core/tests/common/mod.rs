//! Generators, reference implementations and properties shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use actdist::datagen::{
    draw_sample, simulate_population, DesignSpec, IntensityLaw, Population, PopulationSpec, SampleDraw, StratumSpec,
};
use actdist::{build_mixed, tac_per_day, CensorSpec};
use actdist::geometry::{frechet_summary, QuantileGrid};
use actdist::regression::{krr_fit, nw_loo, nw_predict, NwConfig, NwKernel, Predictor, SurveySample};
use actdist::survey::weighted_r2;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseError, TestRunner};

pub fn runner(cases: u32, seed: u64) -> TestRunner {
    TestRunner::new(Config { cases, rng_seed: RngSeed::Fixed(seed), failure_persistence: None, ..Config::default() })
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn grid(m: usize) -> impl Strategy<Value = QuantileGrid> {
    (0.0..5.0f64, prop::collection::vec(0.0..3.0f64, m)).prop_map(|(start, steps)| {
        let values = steps
            .iter()
            .scan(start, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        QuantileGrid::new(values).unwrap()
    })
}

pub fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1..10.0f64, n)
}

pub fn predictor(grids: bool) -> BoxedStrategy<Predictor> {
    if grids {
        grid(8).prop_map(Predictor::Grid).boxed()
    } else {
        (-10.0..10.0f64).prop_map(Predictor::Scalar).boxed()
    }
}

/// A sample with its kind fixed per case: grid or scalar predictors,
/// continuous or binary responses.
pub fn sample(n: std::ops::Range<usize>) -> impl Strategy<Value = SurveySample> {
    (n, any::<bool>(), any::<bool>()).prop_flat_map(|(n, grids, binary)| {
        let y = if binary {
            prop::collection::vec(prop_oneof![Just(0.0), Just(1.0)], n).boxed()
        } else {
            prop::collection::vec(-5.0..5.0f64, n).boxed()
        };
        (prop::collection::vec(predictor(grids), n), y, weights(n))
            .prop_map(|(p, y, w)| SurveySample::new(p, y, w).unwrap())
    })
}

/// A sample plus a query point of the same kind.
pub fn sample_and_query() -> impl Strategy<Value = (SurveySample, Predictor)> {
    sample(2..12).prop_flat_map(|s| {
        let grids = matches!(s.predictors[0], Predictor::Grid(_));
        (Just(s), predictor(grids))
    })
}

pub fn scaled_weights(s: &SurveySample, c: f64) -> SurveySample {
    SurveySample { weights: s.weights.iter().map(|w| w * c).collect(), ..s.clone() }
}

/// Replaces observation `i` by two copies carrying half its weight; the copy
/// is appended at the end.
pub fn split(s: &SurveySample, i: usize) -> SurveySample {
    let mut t = s.clone();
    t.weights[i] /= 2.0;
    t.predictors.push(s.predictors[i].clone());
    t.responses.push(s.responses[i]);
    t.weights.push(t.weights[i]);
    t
}

fn nw_cfg(s: &SurveySample, h: f64) -> NwConfig {
    NwConfig { bandwidth: h, kernel: NwKernel::Gaussian, metric: s.default_metric() }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn nw_convexity((s, x, h): (SurveySample, Predictor, f64)) -> Result<(), TestCaseError> {
    let yhat = nw_predict(&s, &nw_cfg(&s, h), &x).unwrap();
    let lo = s.responses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.responses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ensure(yhat >= lo - 1e-12 && yhat <= hi + 1e-12, || format!("{yhat} outside [{lo}, {hi}]"))?;
    if s.is_binary() {
        ensure((0.0..=1.0).contains(&yhat), || format!("binary prediction {yhat}"))?;
    }
    Ok(())
}

pub fn nw_rescaling((s, x, h, c): (SurveySample, Predictor, f64, f64)) -> Result<(), TestCaseError> {
    let cfg = nw_cfg(&s, h);
    let t = scaled_weights(&s, c);
    let (a, b) = (nw_predict(&s, &cfg, &x).unwrap(), nw_predict(&t, &cfg, &x).unwrap());
    ensure((a - b).abs() <= 1e-12, || format!("prediction {a} vs {b}"))?;
    for (a, b) in nw_loo(&s, &cfg).unwrap().iter().zip(nw_loo(&t, &cfg).unwrap()) {
        if let (Some(a), Some(b)) = (a, b) {
            ensure((a - b).abs() <= 1e-12, || format!("loo {a} vs {b}"))?;
        }
    }
    Ok(())
}

pub fn r2_rescaling((y, yhat, w, c): (Vec<f64>, Vec<f64>, Vec<f64>, f64)) -> Result<(), TestCaseError> {
    let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
    let (a, b) = (weighted_r2(&y, &yhat, &w), weighted_r2(&y, &yhat, &ws));
    match (a, b) {
        (Ok(a), Ok(b)) => ensure(close(a, b, 1e-12), || format!("r2 {a} vs {b}")),
        (Err(_), Err(_)) => Ok(()),
        (a, b) => Err(TestCaseError::fail(format!("{a:?} vs {b:?}"))),
    }
}

pub fn frechet_rescaling((grids, w, c): (Vec<QuantileGrid>, Vec<f64>, f64)) -> Result<(), TestCaseError> {
    let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
    let a = frechet_summary(&grids, Some(&w)).unwrap();
    let b = frechet_summary(&grids, Some(&ws)).unwrap();
    for (x, y) in a.mean.values().iter().zip(b.mean.values()) {
        ensure(close(*x, *y, 1e-12), || format!("mean {x} vs {y}"))?;
    }
    ensure(close(a.variance, b.variance, 1e-12), || format!("variance {} vs {}", a.variance, b.variance))?;
    for (x, y) in a.pointwise_sd.iter().zip(&b.pointwise_sd) {
        ensure(close(*x, *y, 1e-12), || format!("sd {x} vs {y}"))?;
    }
    Ok(())
}

fn krr_predictions(s: &SurveySample, lambda: f64, sigma: f64, points: &[Predictor]) -> Vec<f64> {
    let model = krr_fit(s, lambda, Some(sigma)).unwrap();
    points.iter().map(|x| model.predict(x).unwrap()).collect()
}

pub fn krr_scaled((s, x, lambda, sigma, c): (SurveySample, Predictor, f64, f64, f64)) -> Result<(), TestCaseError> {
    let mut points = s.predictors.clone();
    points.push(x);
    let a = krr_predictions(&s, lambda, sigma, &points);
    let b = krr_predictions(&scaled_weights(&s, c), c * lambda, sigma, &points);
    for (u, v) in a.iter().zip(&b) {
        ensure(close(*u, *v, 1e-8), || format!("{u} vs {v}"))?;
    }
    Ok(())
}

pub fn nw_duplicate_split((s, x, h, i): (SurveySample, Predictor, f64, prop::sample::Index)) -> Result<(), TestCaseError> {
    let i = i.index(s.len());
    let t = split(&s, i);
    let cfg = nw_cfg(&s, h);
    let (a, b) = (nw_predict(&s, &cfg, &x).unwrap(), nw_predict(&t, &cfg, &x).unwrap());
    ensure((a - b).abs() <= 1e-12, || format!("prediction {a} vs {b}"))?;
    let (la, lb) = (nw_loo(&s, &cfg).unwrap(), nw_loo(&t, &cfg).unwrap());
    for j in (0..s.len()).filter(|j| *j != i) {
        if let (Some(a), Some(b)) = (la[j], lb[j]) {
            ensure((a - b).abs() <= 1e-12, || format!("loo {j}: {a} vs {b}"))?;
        }
    }
    Ok(())
}

pub fn krr_duplicate_split(
    (s, x, lambda, sigma, i): (SurveySample, Predictor, f64, f64, prop::sample::Index),
) -> Result<(), TestCaseError> {
    let i = i.index(s.len());
    let mut points = s.predictors.clone();
    points.push(x);
    let a = krr_predictions(&s, lambda, sigma, &points);
    let b = krr_predictions(&split(&s, i), lambda, sigma, &points);
    for (u, v) in a.iter().zip(&b) {
        ensure(close(*u, *v, 1e-8), || format!("{u} vs {v}"))?;
    }
    Ok(())
}

pub fn bandwidth() -> impl Strategy<Value = f64> {
    0.05..20.0f64
}

pub fn scale() -> impl Strategy<Value = f64> {
    prop_oneof![1e-3..1.0f64, 1.0..1e3f64]
}

pub fn r2_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (2usize..30).prop_flat_map(|n| {
        (prop::collection::vec(-5.0..5.0f64, n), prop::collection::vec(-5.0..5.0f64, n), weights(n), scale())
    })
}

pub fn frechet_inputs() -> impl Strategy<Value = (Vec<QuantileGrid>, Vec<f64>, f64)> {
    (1usize..15).prop_flat_map(|n| (prop::collection::vec(grid(12), n), weights(n), scale()))
}

/// The invariance properties as `(name, cases, runner)`; `cases` sum to 1200.
pub fn invariance_suite() -> Vec<(&'static str, u32, fn(&mut TestRunner) -> Result<(), String>)> {
    fn run<S: Strategy>(
        r: &mut TestRunner,
        strategy: S,
        test: impl Fn(S::Value) -> Result<(), TestCaseError>,
    ) -> Result<(), String>
    where
        S::Value: std::fmt::Debug,
    {
        r.run(&strategy, test).map_err(|e| e.to_string())
    }
    vec![
        ("nw convexity", 300, |r| {
            run(r, sample_and_query().prop_flat_map(|(s, x)| (Just(s), Just(x), bandwidth())), nw_convexity)
        }),
        ("nw weight rescaling", 200, |r| {
            run(r, sample_and_query().prop_flat_map(|(s, x)| (Just(s), Just(x), bandwidth(), scale())), nw_rescaling)
        }),
        ("weighted r2 rescaling", 100, |r| run(r, r2_inputs(), r2_rescaling)),
        ("frechet summary rescaling", 100, |r| run(r, frechet_inputs(), frechet_rescaling)),
        ("krr (cW, c lambda)", 150, |r| {
            run(
                r,
                sample_and_query().prop_flat_map(|(s, x)| (Just(s), Just(x), 0.01..10.0f64, 0.5..20.0f64, scale())),
                krr_scaled,
            )
        }),
        ("nw duplicate split", 175, |r| {
            run(
                r,
                sample_and_query().prop_flat_map(|(s, x)| (Just(s), Just(x), bandwidth(), any::<prop::sample::Index>())),
                nw_duplicate_split,
            )
        }),
        ("krr duplicate split", 175, |r| {
            run(
                r,
                sample_and_query()
                    .prop_flat_map(|(s, x)| (Just(s), Just(x), 0.01..10.0f64, 0.5..20.0f64, any::<prop::sample::Index>())),
                krr_duplicate_split,
            )
        }),
    ]
}

/// Independent Gram matrix: Laplacian kernel over Wasserstein or absolute
/// distances computed directly from the raw values.
pub fn reference_gram(predictors: &[Predictor], sigma: f64) -> nalgebra::DMatrix<f64> {
    let n = predictors.len();
    nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let d = match (&predictors[i], &predictors[j]) {
            (Predictor::Grid(a), Predictor::Grid(b)) => {
                let m = a.values().len() as f64;
                (a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / m).sqrt()
            }
            (Predictor::Scalar(a), Predictor::Scalar(b)) => (a - b).abs(),
            _ => unreachable!(),
        };
        (-d / sigma).exp()
    })
}

/// `(W K + lambda I)^{-1} W y` by nalgebra's LU.
pub fn reference_alpha(s: &SurveySample, lambda: f64, sigma: f64) -> Vec<f64> {
    let n = s.len();
    let k = reference_gram(&s.predictors, sigma);
    let w = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&s.weights));
    let a = &w * k + nalgebra::DMatrix::identity(n, n) * lambda;
    let b = nalgebra::DVector::from_iterator(n, s.weights.iter().zip(&s.responses).map(|(w, y)| w * y));
    a.lu().solve(&b).expect("reference solve").iter().copied().collect()
}

/// Classical unweighted Nadaraya–Watson with a Gaussian kernel.
pub fn reference_nw(x: &[f64], y: &[f64], h: f64, at: f64) -> f64 {
    let k: Vec<f64> = x.iter().map(|xi| (-0.5 * ((xi - at) / h).powi(2)).exp()).collect();
    k.iter().zip(y).map(|(k, y)| k * y).sum::<f64>() / k.iter().sum::<f64>()
}

pub fn gen_grids<R: rand::Rng>(rng: &mut R, n: usize, m: usize) -> Vec<QuantileGrid> {
    (0..n)
        .map(|_| {
            let mut acc = rng.random_range(0.0..3.0);
            let scale = rng.random_range(0.1..2.0);
            let values = (0..m)
                .map(|_| {
                    acc += scale * rng.random::<f64>();
                    acc
                })
                .collect();
            QuantileGrid::new(values).unwrap()
        })
        .collect()
}

pub fn lognormal_stratum(proportion: f64, inactivity: [f64; 2], mean: [f64; 2], log_sd: [f64; 2]) -> StratumSpec {
    StratumSpec {
        proportion,
        inactivity,
        intensity: IntensityLaw::LogNormalMean { mean, log_sd },
        age: [68, 85],
        mortality: 0.0,
        response_shift: 0.0,
    }
}

/// Three strata of unequal size whose ages differ, for design checks.
pub fn three_strata_population(seed: u64) -> PopulationSpec {
    let mut strata = vec![
        lognormal_stratum(0.5, [0.6, 0.8], [200.0, 400.0], [0.5, 1.0]),
        lognormal_stratum(0.3, [0.5, 0.7], [300.0, 500.0], [0.5, 1.0]),
        lognormal_stratum(0.2, [0.4, 0.6], [400.0, 600.0], [0.5, 1.0]),
    ];
    strata[0].age = [68, 72];
    strata[1].age = [73, 78];
    strata[2].age = [79, 85];
    PopulationSpec { size: 5000, seed, minutes: 2, strata, responses: vec![] }
}

/// Same inactivity and active mean for everyone, so expected TAC is
/// constant while the log-scale spread varies across subjects.
pub fn constant_tac_population(seed: u64, size: usize) -> PopulationSpec {
    PopulationSpec {
        size,
        seed,
        minutes: 1440,
        strata: vec![
            lognormal_stratum(0.5, [0.6, 0.6], [300.0, 300.0], [0.2, 1.4]),
            lognormal_stratum(0.5, [0.6, 0.6], [300.0, 300.0], [0.2, 1.4]),
        ],
        responses: vec![],
    }
}

/// Two well-separated activity profiles, the inactive one all deceased.
pub fn separable_population(seed: u64, size: usize) -> PopulationSpec {
    let mut alive = lognormal_stratum(0.5, [0.2, 0.3], [800.0, 900.0], [0.4, 0.6]);
    let mut dead = lognormal_stratum(0.5, [0.85, 0.9], [50.0, 60.0], [0.4, 0.6]);
    alive.mortality = 0.0;
    dead.mortality = 1.0;
    PopulationSpec { size, seed, minutes: 600, strata: vec![alive, dead], responses: vec![] }
}

pub fn grid_sample(grids: &[QuantileGrid], y: Vec<f64>, w: Vec<f64>) -> SurveySample {
    SurveySample::new(grids.iter().cloned().map(Predictor::Grid).collect(), y, w).unwrap()
}

pub fn scalar_sample(x: &[f64], y: Vec<f64>, w: Vec<f64>) -> SurveySample {
    SurveySample::new(x.iter().map(|v| Predictor::Scalar(*v)).collect(), y, w).unwrap()
}

/// A drawn sample reduced to what the analyses need.
pub struct Cohort {
    pub grids: Vec<QuantileGrid>,
    pub tac: Vec<f64>,
    pub weights: Vec<f64>,
    pub draw: SampleDraw,
    pub population: Population,
}

impl Cohort {
    pub fn covariate(&self, name: &str) -> Vec<f64> {
        self.draw.covariate(&self.population, name).unwrap()
    }
}

pub fn cohort(spec: &PopulationSpec, design: &DesignSpec, seed: u64, m: usize) -> Cohort {
    let population = simulate_population(spec).unwrap();
    let draw = draw_sample(&population, design, seed).unwrap();
    let series = draw.series(&population).unwrap();
    let (grids, tac) = series
        .iter()
        .map(|s| (build_mixed(s, &CensorSpec::NONE, m, false).unwrap().quantiles, tac_per_day(s).unwrap()))
        .unzip();
    Cohort { grids, tac, weights: draw.weights(), draw, population }
}

/// Monte-Carlo summary of an estimator over replicate samples.
#[derive(Debug, Clone, Copy)]
pub struct Replicates {
    pub mean: f64,
    /// Standard error of `mean`: replicate standard deviation over sqrt(R).
    pub se: f64,
}

impl Replicates {
    pub fn of(values: &[f64]) -> Self {
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
        Self { mean, se: (var / r).sqrt() }
    }

    /// Bias relative to `truth`, in standard errors.
    pub fn z(&self, truth: f64) -> f64 {
        (self.mean - truth) / self.se
    }
}

/// Weighted and unweighted sample means of `covariate` over `reps` draws.
pub fn design_replicates(population: &Population, design: &DesignSpec, covariate: &str, reps: u64) -> (Replicates, Replicates) {
    let (mut ht, mut naive) = (Vec::new(), Vec::new());
    for seed in 0..reps {
        let draw = draw_sample(population, design, 1000 + seed).unwrap();
        let x = draw.covariate(population, covariate).unwrap();
        let w = draw.weights();
        ht.push(actdist::ht_mean(&actdist::WeightedScalarSample::new(x.clone(), w).unwrap()).unwrap());
        naive.push(x.iter().sum::<f64>() / x.len() as f64);
    }
    (Replicates::of(&ht), Replicates::of(&naive))
}

pub fn centered(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mean = actdist::ht_mean(&actdist::WeightedScalarSample::new(y.to_vec(), w.to_vec()).unwrap()).unwrap();
    y.iter().map(|v| v - mean).collect()
}

/// Cohort whose expected TAC is constant while activity spread varies.
pub fn constant_tac_cohort(seed: u64) -> Cohort {
    let design = DesignSpec::Stratified { fractions: vec![0.3, 0.6] };
    cohort(&constant_tac_population(seed, 300), &design, seed, 100)
}

/// `(r2_distribution, r2_tac)` for a centered response on a cohort.
pub fn r2_pair(c: &Cohort, y: &[f64]) -> (f64, f64) {
    let y = centered(y, &c.weights);
    let ds = grid_sample(&c.grids, y.clone(), c.weights.clone());
    let ts = scalar_sample(&c.tac, y, c.weights.clone());
    let r = actdist::evaluation::compare_r2(&ds, &ts, "y", &actdist::evaluation::default_lambda_grid()).unwrap();
    (r.r2_distribution(), r.r2_tac())
}

/// Cohort with widely varying inactivity and intensity, hence TAC.
pub fn varied_tac_cohort(seed: u64) -> Cohort {
    let spec = PopulationSpec {
        size: 300,
        seed,
        minutes: 1440,
        strata: vec![
            lognormal_stratum(0.5, [0.3, 0.9], [100.0, 600.0], [0.3, 1.2]),
            lognormal_stratum(0.5, [0.3, 0.9], [100.0, 600.0], [0.3, 1.2]),
        ],
        responses: vec![],
    };
    cohort(&spec, &DesignSpec::Stratified { fractions: vec![0.3, 0.6] }, seed, 100)
}

/// 200 subjects drawn with unequal probabilities from two separated clusters.
pub fn separable_cohort(seed: u64) -> Cohort {
    let design = DesignSpec::Stratified { fractions: vec![0.4, 0.6] };
    cohort(&separable_population(seed, 400), &design, seed, 100)
}
