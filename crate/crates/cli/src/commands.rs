use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use actdist::datagen::{draw_sample, simulate_population, DesignSpec};
use actdist::evaluation::{
    assign_risk_groups, classify_mortality, classify_with_selected_bandwidth, compare_r2, group_profiles,
    AgeStratification, ClassificationOutcome,
};
use actdist::io::{self, ModelFile, ReadingsWriter, SubjectRow, SummaryRow};
use actdist::regression::krr_fit;
use actdist::{
    build_mixed, ht_mean, tac_per_day, CensorSpec, Covariate, FrechetSummary, Metric, NwConfig, Predictor, QuantileGrid,
    SurveySample, WeightedScalarSample,
};
use anyhow::{Context, Result};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::output::RunOutputs;
use crate::Invalid;

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    let p = path.as_deref().ok_or_else(|| Invalid(format!("{flag} is required")))?;
    if !p.exists() {
        return Err(anyhow::Error::new(std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"))
            .context(format!("{}", p.display())));
    }
    Ok(p)
}

fn out_dir(cfg: &RunConfig) -> Result<RunOutputs> {
    let dir = cfg.out.as_deref().ok_or_else(|| Invalid("--out is required".into()))?;
    RunOutputs::create(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(f))
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

pub fn build_dist(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let input = required(&cfg.input, "--input")?;
    let subjects = required(&cfg.subjects, "--subjects")?;
    let censor = CensorSpec::new(cfg.censor_lower, cfg.censor_upper)?;
    let readings = io::read_readings(input)?;
    let rows = io::read_subjects(subjects)?;
    let series = io::assemble_series(&readings, &rows, subjects)?;

    let built: Vec<(QuantileGrid, SummaryRow)> = series
        .par_iter()
        .map(|s| {
            let mixed = build_mixed(s, &censor, cfg.m, false).with_context(|| format!("subject {}", s.subject_id))?;
            let censored = actdist::censor_series(s, &censor)?;
            let tac = tac_per_day(&censored).with_context(|| format!("subject {}", s.subject_id))?;
            let row = SummaryRow { subject_id: s.subject_id.clone(), p_inactive: mixed.p_inactive, tac_per_day: tac };
            Ok((mixed.quantiles, row))
        })
        .collect::<Result<_>>()?;

    let mut out = out_dir(cfg)?;
    let q: Vec<(String, QuantileGrid)> = built.iter().map(|(g, r)| (r.subject_id.clone(), g.clone())).collect();
    io::write_quantiles(&out.file("quantiles.csv"), &q)?;
    let summary: Vec<SummaryRow> = built.into_iter().map(|b| b.1).collect();
    io::write_summary(&out.file("summary.csv"), &summary)?;
    Ok(out.commit())
}

/// Subjects of a quantiles file joined with their subjects-file rows.
struct Cohort {
    ids: Vec<String>,
    grids: Vec<QuantileGrid>,
    rows: Vec<SubjectRow>,
    subjects_path: PathBuf,
}

impl Cohort {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let input = required(&cfg.input, "--input")?;
        let subjects_path = required(&cfg.subjects, "--subjects")?;
        let quantiles = io::read_quantiles(input)?;
        let mut by_id: HashMap<String, SubjectRow> =
            io::read_subjects(subjects_path)?.into_iter().map(|r| (r.subject_id.clone(), r)).collect();
        if let Some(m) = quantiles.first().map(|q| q.1.m()) {
            if quantiles.iter().any(|q| q.1.m() != m) {
                return Err(Invalid(format!("{}: rows differ in length", input.display())).into());
            }
        }
        let mut ids = Vec::with_capacity(quantiles.len());
        let mut grids = Vec::with_capacity(quantiles.len());
        let mut rows = Vec::with_capacity(quantiles.len());
        for (id, g) in quantiles {
            let row = by_id
                .remove(&id)
                .ok_or_else(|| Invalid(format!("subject {id} is missing from {}", subjects_path.display())))?;
            ids.push(id);
            grids.push(g);
            rows.push(row);
        }
        if ids.is_empty() {
            return Err(Invalid(format!("{} has no subjects", input.display())).into());
        }
        Ok(Self { ids, grids, rows, subjects_path: subjects_path.to_path_buf() })
    }

    fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.survey_weight).collect()
    }

    fn column(&self, name: &str) -> Result<Vec<f64>> {
        if self.rows.iter().all(|r| !r.covariates.contains_key(name)) {
            return Err(Invalid(format!("missing response column `{name}` in {}", self.subjects_path.display())).into());
        }
        self.rows
            .iter()
            .map(|r| match r.covariates.get(name) {
                Some(Covariate::Number(x)) => Ok(*x),
                Some(Covariate::Label(s)) => Err(Invalid(format!("subject {}: `{name}` = `{s}` is not numeric", r.subject_id)).into()),
                None => Err(Invalid(format!("subject {} has no `{name}` value", r.subject_id)).into()),
            })
            .collect()
    }

    fn grid_predictors(&self) -> Vec<Predictor> {
        self.grids.iter().cloned().map(Predictor::Grid).collect()
    }
}

fn summary_path(cfg: &RunConfig, input: &Path) -> PathBuf {
    cfg.summary.clone().unwrap_or_else(|| input.with_file_name("summary.csv"))
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn regress(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if cfg.responses.is_empty() {
        return Err(Invalid("no response columns given".into()).into());
    }
    if cfg.lambda_grid.is_empty() {
        return Err(Invalid("lambda grid is empty".into()).into());
    }
    let cohort = Cohort::load(cfg)?;
    let spath = Some(summary_path(cfg, cfg.input.as_deref().expect("checked")));
    let spath = required(&spath, "--summary")?;
    let tac_by_id: HashMap<String, f64> =
        io::read_summary(spath)?.into_iter().map(|r| (r.subject_id, r.tac_per_day)).collect();
    let tac: Vec<f64> = cohort
        .ids
        .iter()
        .map(|id| tac_by_id.get(id).copied().ok_or_else(|| Invalid(format!("subject {id} is missing from {}", spath.display()))))
        .collect::<Result<_, _>>()?;
    let weights = cohort.weights();

    let mut results = Vec::new();
    for name in &cfg.responses {
        let raw = cohort.column(name)?;
        let offset = if cfg.center { ht_mean(&WeightedScalarSample::new(raw.clone(), weights.clone())?)? } else { 0.0 };
        let y: Vec<f64> = raw.iter().map(|v| v - offset).collect();
        let ds = SurveySample::new(cohort.grid_predictors(), y.clone(), weights.clone())?;
        let ts = SurveySample::new(tac.iter().map(|t| Predictor::Scalar(*t)).collect(), y.clone(), weights.clone())?;
        let cmp = compare_r2(&ds, &ts, name, &cfg.lambda_grid).with_context(|| format!("response {name}"))?;
        let model = krr_fit(&ds, cmp.distribution.lambda, Some(cmp.distribution.sigma))?;
        results.push((cmp, raw, model, offset));
    }

    let mut out = out_dir(cfg)?;
    let report = out.file("report.csv");
    let mut w = csv_writer(&report)?;
    w.write_record([
        "response",
        "n",
        "r2_distribution",
        "r2_tac",
        "lambda_distribution",
        "sigma_distribution",
        "lambda_tac",
        "sigma_tac",
    ])?;
    for (c, y, _, _) in &results {
        w.write_record([
            c.response.clone(),
            y.len().to_string(),
            fmt(c.r2_distribution()),
            fmt(c.r2_tac()),
            fmt(c.distribution.lambda),
            fmt(c.distribution.sigma),
            fmt(c.tac.lambda),
            fmt(c.tac.sigma),
        ])?;
    }
    w.flush()?;

    let loo = out.file("loo_predictions.csv");
    let mut w = csv_writer(&loo)?;
    w.write_record(["subject_id", "response", "observed", "loo_distribution", "loo_tac"])?;
    for (c, y, _, offset) in &results {
        for (i, id) in cohort.ids.iter().enumerate() {
            let (d, t) = (offset + c.distribution.loo[i], offset + c.tac.loo[i]);
            w.write_record([id.clone(), c.response.clone(), fmt(y[i]), fmt(d), fmt(t)])?;
        }
    }
    w.flush()?;

    for (c, _, model, offset) in results {
        let file = ModelFile::new(c.response.clone(), cohort.ids.clone(), model).with_offset(offset);
        io::save_model(&out.file(&format!("model_{}.json", file_stem(&c.response))), &file)?;
    }
    Ok(out.commit())
}

fn age_bands(cohort: &Cohort) -> Vec<Option<String>> {
    let strata = AgeStratification::default();
    cohort
        .rows
        .iter()
        .map(|r| {
            let age = r.covariates.get("age")?.as_number()?;
            match strata.assign(age) {
                Ok(b) => Some(strata.label(b)),
                Err(e) => {
                    log::warn!("subject {}: {e}", r.subject_id);
                    None
                }
            }
        })
        .collect()
}

pub fn classify(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let cohort = Cohort::load(cfg)?;
    let y = cohort.column(&cfg.outcome)?;
    let weights = cohort.weights();
    let sample = SurveySample::new(cohort.grid_predictors(), y, weights.clone())?;
    let outcome: ClassificationOutcome = match cfg.bandwidth {
        Some(h) => {
            let nw = NwConfig { bandwidth: h, kernel: cfg.kernel.into(), metric: Metric::Wasserstein };
            classify_mortality(&sample, &nw, cfg.threshold)?
        }
        None => classify_with_selected_bandwidth(&sample, cfg.kernel.into(), cfg.threshold, cfg.bandwidth_grid.as_deref())?,
    };
    let risk = assign_risk_groups(&outcome);
    let bands = age_bands(&cohort);

    let mut out = out_dir(cfg)?;
    let path = out.file("predictions.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["subject_id", "survey_weight", "probability", "predicted", "actual"])?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for (id, s) in cohort.ids.iter().zip(&outcome.subjects) {
        w.write_record([id.clone(), fmt(s.weight), fmt_opt(s.probability), s.predicted.map(flag).unwrap_or_default(), flag(s.actual)])?;
    }
    w.flush()?;

    let path = out.file("confusion.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["threshold", "bandwidth", "tp", "fp", "tn", "fn", "total", "accuracy", "auc"])?;
    let c = &outcome.confusion;
    w.write_record([
        fmt(outcome.threshold),
        fmt(outcome.bandwidth),
        fmt(c.tp),
        fmt(c.fp),
        fmt(c.tn),
        fmt(c.fn_),
        fmt(c.total()),
        fmt(c.accuracy()),
        fmt_opt(outcome.auc()),
    ])?;
    w.flush()?;

    let path = out.file("risk_groups.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["subject_id", "risk_group", "age_band"])?;
    for ((id, g), b) in cohort.ids.iter().zip(&risk).zip(&bands) {
        w.write_record([id.as_str(), g.label(), b.as_deref().unwrap_or("")])?;
    }
    w.flush()?;

    let mut profiles: Vec<(String, FrechetSummary)> = Vec::new();
    let risk_labels: Vec<String> = risk.iter().map(|g| g.label().to_string()).collect();
    profiles.extend(group_profiles(&cohort.grids, &weights, &risk_labels, &["A".to_string(), "B".to_string()])?);
    let band_labels: Vec<String> = bands.iter().map(|b| b.clone().unwrap_or_default()).collect();
    let strata = AgeStratification::default();
    let band_names: Vec<String> = (0..strata.bands.len()).map(|b| strata.label(b)).collect();
    if bands.iter().any(Option::is_some) {
        profiles.extend(group_profiles(&cohort.grids, &weights, &band_labels, &band_names)?);
        let joint: Vec<String> = risk_labels.iter().zip(&band_labels).map(|(r, b)| format!("{r} {b}")).collect();
        let joint_names: Vec<String> =
            ["A", "B"].iter().flat_map(|r| band_names.iter().map(move |b| format!("{r} {b}"))).collect();
        profiles.extend(group_profiles(&cohort.grids, &weights, &joint, &joint_names)?);
    }
    io::write_frechet_profiles(&out.file("profiles.csv"), &profiles)?;
    Ok(out.commit())
}

const CHUNK: usize = 64;

pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.population.to_spec(cfg.seed);
    let population = simulate_population(&spec)?;
    let design = cfg.design.clone().unwrap_or_else(|| DesignSpec::census(spec.strata.len()));
    let pis = design.inclusion_probabilities(&population)?;
    let draw = draw_sample(&population, &design, cfg.seed)?;

    let mut out = out_dir(cfg)?;
    let subject_row = |i: usize, weight: f64| {
        let s = &population.subjects[i];
        let mut covariates: BTreeMap<String, Covariate> =
            s.covariates.iter().map(|(k, v)| (k.clone(), Covariate::Number(*v))).collect();
        covariates.insert("stratum".into(), Covariate::Number((s.stratum + 1) as f64));
        SubjectRow { subject_id: s.id.clone(), survey_weight: weight, covariates }
    };
    let write_readings = |path: &Path, units: &[(usize, f64)]| -> Result<()> {
        let mut w = ReadingsWriter::create(path)?;
        for chunk in units.chunks(CHUNK) {
            let series = chunk
                .par_iter()
                .map(|(i, wt)| population.series(*i, *wt))
                .collect::<actdist::Result<Vec<_>>>()?;
            for s in &series {
                w.write(s)?;
            }
        }
        w.finish()?;
        Ok(())
    };

    let everyone: Vec<(usize, f64)> = (0..population.len()).map(|i| (i, 1.0)).collect();
    if cfg.population.write_readings {
        write_readings(&out.file("population_readings.csv"), &everyone)?;
    }
    let rows: Vec<SubjectRow> = everyone.iter().map(|(i, w)| subject_row(*i, *w)).collect();
    io::write_subject_rows(&out.file("population_subjects.csv"), &rows)?;

    let units: Vec<(usize, f64)> = draw.units.iter().map(|u| (u.index, u.weight)).collect();
    write_readings(&out.file("sample_readings.csv"), &units)?;
    let rows: Vec<SubjectRow> = units.iter().map(|(i, w)| subject_row(*i, *w)).collect();
    io::write_subject_rows(&out.file("sample_subjects.csv"), &rows)?;

    let path = out.file("ground_truth.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["subject_id", "stratum", "pi", "sampled"])?;
    let mut sampled = vec![false; population.len()];
    for u in &draw.units {
        sampled[u.index] = true;
    }
    for (i, s) in population.subjects.iter().enumerate() {
        w.write_record([s.id.clone(), (s.stratum + 1).to_string(), fmt(pis[i]), (sampled[i] as u8).to_string()])?;
    }
    w.flush()?;

    let path = out.file("population_means.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["covariate", "mean"])?;
    for (k, v) in &population.means {
        w.write_record([k.clone(), fmt(*v)])?;
    }
    w.flush()?;
    Ok(out.commit())
}

pub fn predict(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let model_path = required(&cfg.model, "--model")?;
    let input = required(&cfg.input, "--input")?;
    let model = io::load_model(model_path)?;
    let quantiles = io::read_quantiles(input)?;
    let predictions: Vec<(String, f64)> = quantiles
        .into_iter()
        .map(|(id, g)| {
            let p = model.predict(&Predictor::Grid(g)).with_context(|| format!("subject {id}"))?;
            Ok((id, p))
        })
        .collect::<Result<_>>()?;
    let mut out = out_dir(cfg)?;
    let path = out.file("predictions.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["subject_id", &model.response])?;
    for (id, p) in predictions {
        w.write_record([id, fmt(p)])?;
    }
    w.flush()?;
    Ok(out.commit())
}
