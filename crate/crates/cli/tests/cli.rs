use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn actdist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actdist")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "failed: {}", stderr(o));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let k = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[k].clone()).collect()
}

fn toy_inputs(dir: &Path, readings: &str) -> (PathBuf, PathBuf) {
    let r = dir.join("readings.csv");
    let s = dir.join("subjects.csv");
    fs::write(&r, readings).unwrap();
    fs::write(&s, "subject_id,survey_weight,age\na,1.5,70\nb,2,80\n").unwrap();
    (r, s)
}

const TOY: &str = "subject_id,timestamp_min,count\na,0,0\na,1,5\na,2,10\na,3,0\nb,0,0\nb,1,0\nb,2,0\n";

#[test]
fn build_dist_writes_one_row_per_subject() {
    let dir = TempDir::new().unwrap();
    let (r, s) = toy_inputs(dir.path(), TOY);
    let out = dir.path().join("out");
    assert_ok(&actdist(&["build-dist", "--input", p(&r), "--subjects", p(&s), "--out", p(&out), "--m", "4"]));

    let q = read_csv(&out.join("quantiles.csv"));
    assert_eq!(q[0], ["subject_id", "t_1", "t_2", "t_3", "t_4"]);
    assert_eq!(q.len(), 3);
    assert_eq!(q[1], ["a", "0", "0", "5", "10"]);
    assert_eq!(q[2], ["b", "0", "0", "0", "0"]);

    let summary = read_csv(&out.join("summary.csv"));
    assert_eq!(column(&summary, "p_inactive"), ["0.5", "1"]);
    // 15 counts over 4 minutes
    assert_eq!(column(&summary, "tac_per_day")[0], "5400");
}

#[test]
fn negative_count_is_a_validation_error_with_line_number() {
    let dir = TempDir::new().unwrap();
    let (r, s) = toy_inputs(dir.path(), "subject_id,timestamp_min,count\na,0,1\na,1,-3\nb,0,0\nb,1,0\n");
    let out = dir.path().join("out");
    let o = actdist(&["build-dist", "--input", p(&r), "--subjects", p(&s), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("readings.csv:3:"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unreadable_input_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let (_, s) = toy_inputs(dir.path(), TOY);
    let missing = dir.path().join("nope.csv");
    let o = actdist(&["build-dist", "--input", p(&missing), "--subjects", p(&s), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn censor_bounds_are_checked() {
    let dir = TempDir::new().unwrap();
    let (r, s) = toy_inputs(dir.path(), TOY);
    let out = dir.path().join("out");
    let o = actdist(&[
        "build-dist", "--input", p(&r), "--subjects", p(&s), "--out", p(&out), "--censor-lower", "5", "--censor-upper", "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_ok(&actdist(&[
        "build-dist", "--input", p(&r), "--subjects", p(&s), "--out", p(&out), "--m", "4", "--censor-upper", "6",
    ]));
    assert_eq!(read_csv(&out.join("quantiles.csv"))[1], ["a", "0", "0", "5", "6"]);
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let c = dir.join("run.toml");
    fs::write(&c, body).unwrap();
    c
}

const SPREAD_COHORT: &str = r#"
seed = 11
m = 100

[population]
size = 150
minutes = 400

[[population.strata]]
proportion = 1.0
inactivity = [0.5, 0.5]
intensity = { law = "log_normal_mean", mean = [300.0, 300.0], log_sd = [0.2, 1.5] }

[[population.responses]]
name = "score"
spread = 10.0
"#;

/// Simulates a cohort from `config` and builds its distributions.
fn simulated(dir: &Path, config: &str) -> (PathBuf, PathBuf) {
    let c = write_config(dir, config);
    let sim = dir.join("sim");
    assert_ok(&actdist(&["simulate", "--config", p(&c), "--out", p(&sim)]));
    let dist = dir.join("dist");
    assert_ok(&actdist(&[
        "build-dist",
        "--config",
        p(&c),
        "--input",
        p(&sim.join("sample_readings.csv")),
        "--subjects",
        p(&sim.join("sample_subjects.csv")),
        "--out",
        p(&dist),
    ]));
    (dist.join("quantiles.csv"), sim.join("sample_subjects.csv"))
}

#[test]
fn regress_prefers_distributions_for_spread_responses() {
    let dir = TempDir::new().unwrap();
    let (q, s) = simulated(dir.path(), SPREAD_COHORT);
    let out = dir.path().join("reg");
    assert_ok(&actdist(&["regress", "--input", p(&q), "--subjects", p(&s), "--out", p(&out), "--response", "score"]));
    let report = read_csv(&out.join("report.csv"));
    let rd: f64 = column(&report, "r2_distribution")[0].parse().unwrap();
    let rt: f64 = column(&report, "r2_tac")[0].parse().unwrap();
    assert!(rd > rt + 0.3, "distribution {rd} vs tac {rt}");

    let again = dir.path().join("reg2");
    assert_ok(&actdist(&["regress", "--input", p(&q), "--subjects", p(&s), "--out", p(&again), "--response", "score"]));
    for f in ["report.csv", "loo_predictions.csv", "model_score.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let pred = dir.path().join("pred");
    let model = out.join("model_score.json");
    assert_ok(&actdist(&["predict", "--model", p(&model), "--input", p(&q), "--out", p(&pred)]));
    assert_eq!(read_csv(&pred.join("predictions.csv")).len(), 151);
}

#[test]
fn regress_reports_one_row_per_response_and_validates() {
    let dir = TempDir::new().unwrap();
    let (q, s) = simulated(dir.path(), SPREAD_COHORT);
    let out = dir.path().join("reg");
    assert_ok(&actdist(&["regress", "--input", p(&q), "--subjects", p(&s), "--out", p(&out), "--response", "age"]));
    let report = read_csv(&out.join("report.csv"));
    assert_eq!(report.len(), 2);
    assert_eq!(report[1][0], "age");

    let o = actdist(&["regress", "--input", p(&q), "--subjects", p(&s), "--out", p(&out), "--response", "height"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("height"));

    let c = write_config(dir.path(), "lambda_grid = []\nresponses = [\"age\"]\n");
    let empty = dir.path().join("empty");
    let o = actdist(&["regress", "--config", p(&c), "--input", p(&q), "--subjects", p(&s), "--out", p(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!empty.exists());
}

const SEPARABLE: &str = r#"
seed = 5
m = 50

[population]
size = 80
minutes = 300

[[population.strata]]
proportion = 0.5
inactivity = [0.2, 0.3]
intensity = { law = "log_normal_mean", mean = [800.0, 900.0], log_sd = [0.5, 0.6] }
mortality = 0.0

[[population.strata]]
proportion = 0.5
inactivity = [0.85, 0.9]
intensity = { law = "log_normal_mean", mean = [50.0, 60.0], log_sd = [0.5, 0.6] }
mortality = 1.0

[design]
kind = "stratified"
fractions = [0.5, 1.0]
"#;

#[test]
fn classify_separable_cohort() {
    let dir = TempDir::new().unwrap();
    let (q, s) = simulated(dir.path(), SEPARABLE);
    let out = dir.path().join("cls");
    assert_ok(&actdist(&["classify", "--input", p(&q), "--subjects", p(&s), "--out", p(&out)]));
    let conf = read_csv(&out.join("confusion.csv"));
    assert_eq!(column(&conf, "fp"), ["0"]);
    assert_eq!(column(&conf, "fn"), ["0"]);
    assert_eq!(column(&conf, "accuracy"), ["1"]);
    // 20 survivors weighted 2, 40 deaths weighted 1
    assert_eq!(column(&conf, "tn"), ["40"]);
    assert_eq!(column(&conf, "tp"), ["40"]);

    let groups = column(&read_csv(&out.join("risk_groups.csv")), "risk_group");
    assert!(groups.iter().all(|g| g == "B" || g == "unassigned"));
    let profiles = read_csv(&out.join("profiles.csv"));
    assert_eq!(profiles[0], ["group", "t", "mean", "sd"]);
    assert!(column(&profiles, "group").iter().any(|g| g == "B"));

    let zero = dir.path().join("zero");
    assert_ok(&actdist(&["classify", "--input", p(&q), "--subjects", p(&s), "--out", p(&zero), "--threshold", "0"]));
    let conf = read_csv(&zero.join("confusion.csv"));
    assert_eq!(column(&conf, "fn"), ["0"]);
    assert_eq!(column(&conf, "tn"), ["0"]);
}

#[test]
fn classify_all_survivors_and_non_binary() {
    let dir = TempDir::new().unwrap();
    let (q, s) = simulated(dir.path(), &SEPARABLE.replace("mortality = 1.0", "mortality = 0.0"));
    let out = dir.path().join("cls");
    assert_ok(&actdist(&["classify", "--input", p(&q), "--subjects", p(&s), "--out", p(&out)]));
    let groups = column(&read_csv(&out.join("risk_groups.csv")), "risk_group");
    assert!(groups.iter().all(|g| g == "B" || g == "unassigned"));

    let bad = dir.path().join("bad");
    let o = actdist(&["classify", "--input", p(&q), "--subjects", p(&s), "--out", p(&bad), "--outcome", "age"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!bad.exists());
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), SEPARABLE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&actdist(&["simulate", "--config", p(&c), "--out", p(&a)]));
    assert_ok(&actdist(&["simulate", "--config", p(&c), "--out", p(&b)]));
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
    let other = dir.path().join("other");
    assert_ok(&actdist(&["simulate", "--config", p(&c), "--out", p(&other), "--seed", "6"]));
    assert_ne!(fs::read(a.join("sample_readings.csv")).unwrap(), fs::read(other.join("sample_readings.csv")).unwrap());
}

#[test]
fn census_and_even_allocation() {
    let dir = TempDir::new().unwrap();
    let c = write_config(
        dir.path(),
        r#"
[population]
size = 1000
minutes = 2
write_readings = false

[[population.strata]]
proportion = 0.5
inactivity = [0.5, 0.5]
intensity = { law = "gamma", shape = [2.0, 2.0], scale = [10.0, 10.0] }

[[population.strata]]
proportion = 0.5
inactivity = [0.5, 0.5]
intensity = { law = "gamma", shape = [2.0, 2.0], scale = [10.0, 10.0] }
"#,
    );
    let out = dir.path().join("sim");
    assert_ok(&actdist(&["simulate", "--config", p(&c), "--out", p(&out)]));
    assert!(!out.join("population_readings.csv").exists());
    let subjects = read_csv(&out.join("sample_subjects.csv"));
    assert_eq!(subjects.len(), 1001);
    assert!(column(&subjects, "survey_weight").iter().all(|w| w == "1"));
    let strata = column(&read_csv(&out.join("ground_truth.csv")), "stratum");
    assert_eq!(strata.iter().filter(|s| *s == "1").count(), 500);
    assert_eq!(strata.iter().filter(|s| *s == "2").count(), 500);
}

#[test]
fn invalid_spec_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), &SEPARABLE.replace("proportion = 0.5\ninactivity = [0.85", "proportion = 0.7\ninactivity = [0.85"));
    let out = dir.path().join("sim");
    let o = actdist(&["simulate", "--config", p(&c), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());

    let c = write_config(dir.path(), "m = 1\n");
    assert_eq!(actdist(&["simulate", "--config", p(&c), "--out", p(&out)]).status.code(), Some(2));
    let c = write_config(dir.path(), "no_such_key = 3\n");
    assert_eq!(actdist(&["simulate", "--config", p(&c), "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn failed_run_removes_its_outputs() {
    let dir = TempDir::new().unwrap();
    let (q, s) = simulated(dir.path(), SPREAD_COHORT);
    let out = dir.path().join("reg");
    fs::create_dir_all(out.join("loo_predictions.csv")).unwrap();
    let o = actdist(&["regress", "--input", p(&q), "--subjects", p(&s), "--out", p(&out), "--response", "score"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!out.join("report.csv").exists());
    assert!(out.join("loo_predictions.csv").is_dir());
}

#[test]
fn print_config_round_trips() {
    let dir = TempDir::new().unwrap();
    let o = actdist(&["regress", "--print-config", "--m", "64", "--response", "a,b"]);
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("m = 64"));
    assert!(text.contains("# design:"));
    let c = write_config(dir.path(), &text);
    let again = actdist(&["regress", "--print-config", "--config", p(&c)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}
