//! CSV and model file formats.
//!
//! All CSV files are comma separated, UTF-8, with a mandatory header row and
//! `.` as decimal separator. Floating-point values are written in Rust's
//! shortest round-trip form, so rereading a file reproduces the values
//! exactly.
//!
//! | file | columns |
//! |------|---------|
//! | readings (long format) | `subject_id,timestamp_min,count` |
//! | subjects | `subject_id,survey_weight,<covariate>...` |
//! | quantiles | `subject_id,t_1,...,t_m` |
//! | summary | `subject_id,p_inactive,tac_per_day` |
//! | distances | `subject_id,<subject ids>...` |
//! | Fréchet profiles | `group,t,mean,sd` |

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distribution::{ActivitySeries, Covariate};
use crate::geometry::{FrechetSummary, QuantileGrid};
use crate::regression::KrrModel;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{}: {message}", path.display(), line.map_or("?".to_string(), |l| l.to_string()))]
    Format { path: PathBuf, line: Option<u64>, message: String },
}

impl IoError {
    /// True for malformed content, false for failures to read or write.
    pub fn is_validation(&self) -> bool {
        matches!(self, IoError::Format { .. })
    }

    fn format(path: &Path, line: Option<u64>, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), line, message: message.into() }
    }

    fn from_csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line());
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(source) => IoError::Io { path: path.to_path_buf(), source },
                _ => unreachable!(),
            }
        } else {
            IoError::format(path, line, e.to_string())
        }
    }
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn open_reader(path: &Path) -> IoResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn open_writer(path: &Path) -> IoResult<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::Writer::from_writer(file))
}

fn headers(path: &Path, rdr: &mut csv::Reader<File>) -> IoResult<Vec<String>> {
    let h = rdr.headers().map_err(|e| IoError::from_csv(path, e))?;
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(IoError::format(path, Some(1), "missing header row"));
    }
    Ok(h.iter().map(str::to_string).collect())
}

fn column(path: &Path, headers: &[String], name: &str) -> IoResult<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| IoError::format(path, Some(1), format!("missing column `{name}`")))
}

fn parse_f64(path: &Path, line: u64, what: &str, s: &str) -> IoResult<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IoError::format(path, Some(line), format!("{what} `{s}` is not a finite number")))
}

fn records<'a>(path: &Path, rdr: &'a mut csv::Reader<File>) -> impl Iterator<Item = IoResult<(u64, csv::StringRecord)>> + 'a {
    let path = path.to_path_buf();
    rdr.records().map(move |r| {
        let rec = r.map_err(|e| IoError::from_csv(&path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        Ok((line, rec))
    })
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::from_csv(path, e)
}

/// Readings grouped by subject, sorted by timestamp.
pub type ReadingsBySubject = BTreeMap<String, Vec<(f64, f64)>>;

/// Reads `subject_id,timestamp_min,count` rows. Counts must be finite and
/// nonnegative, and timestamps must not repeat within a subject.
pub fn read_readings(path: &Path) -> IoResult<ReadingsBySubject> {
    let mut rdr = open_reader(path)?;
    let h = headers(path, &mut rdr)?;
    let (ci, ct, cc) = (column(path, &h, "subject_id")?, column(path, &h, "timestamp_min")?, column(path, &h, "count")?);
    let mut out: ReadingsBySubject = BTreeMap::new();
    let mut seen: HashMap<(String, u64), u64> = HashMap::new();
    for r in records(path, &mut rdr) {
        let (line, rec) = r?;
        let id = rec.get(ci).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(IoError::format(path, Some(line), "empty subject_id"));
        }
        let t = parse_f64(path, line, "timestamp", rec.get(ct).unwrap_or(""))?;
        let c = parse_f64(path, line, "count", rec.get(cc).unwrap_or(""))?;
        if c < 0.0 {
            return Err(IoError::format(path, Some(line), format!("negative count {c}")));
        }
        if let Some(prev) = seen.insert((id.clone(), t.to_bits()), line) {
            return Err(IoError::format(path, Some(line), format!("timestamp {t} of subject {id} repeats line {prev}")));
        }
        out.entry(id).or_default().push((t, c));
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

/// A row of the subjects file.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRow {
    pub subject_id: String,
    pub survey_weight: f64,
    /// Covariates by column name; blank cells are omitted.
    pub covariates: BTreeMap<String, Covariate>,
}

/// Reads `subject_id,survey_weight,...`; other columns become covariates,
/// numeric where they parse as numbers.
pub fn read_subjects(path: &Path) -> IoResult<Vec<SubjectRow>> {
    let mut rdr = open_reader(path)?;
    let h = headers(path, &mut rdr)?;
    let (ci, cw) = (column(path, &h, "subject_id")?, column(path, &h, "survey_weight")?);
    let mut out = Vec::new();
    let mut ids = HashMap::new();
    for r in records(path, &mut rdr) {
        let (line, rec) = r?;
        let id = rec.get(ci).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(IoError::format(path, Some(line), "empty subject_id"));
        }
        if let Some(prev) = ids.insert(id.clone(), line) {
            return Err(IoError::format(path, Some(line), format!("subject {id} already listed on line {prev}")));
        }
        let w = parse_f64(path, line, "survey_weight", rec.get(cw).unwrap_or(""))?;
        if !(w > 0.0) {
            return Err(IoError::format(path, Some(line), format!("survey weight {w} must be positive")));
        }
        let mut covariates = BTreeMap::new();
        for (k, name) in h.iter().enumerate() {
            if k == ci || k == cw {
                continue;
            }
            let cell = rec.get(k).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            let value = match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => Covariate::Number(x),
                _ => Covariate::Label(cell.to_string()),
            };
            covariates.insert(name.clone(), value);
        }
        out.push(SubjectRow { subject_id: id, survey_weight: w, covariates });
    }
    Ok(out)
}

/// Joins readings and subject rows into validated series, in subjects-file order.
pub fn assemble_series(readings: &ReadingsBySubject, subjects: &[SubjectRow], subjects_path: &Path) -> IoResult<Vec<ActivitySeries>> {
    let known: std::collections::HashSet<&str> = subjects.iter().map(|s| s.subject_id.as_str()).collect();
    if let Some(id) = readings.keys().find(|id| !known.contains(id.as_str())) {
        return Err(IoError::format(subjects_path, None, format!("subject {id} has readings but no subjects row")));
    }
    subjects
        .iter()
        .map(|row| {
            let rs = readings
                .get(&row.subject_id)
                .ok_or_else(|| IoError::format(subjects_path, None, format!("subject {} has no readings", row.subject_id)))?;
            let mut s = ActivitySeries::new(
                row.subject_id.clone(),
                rs.iter().map(|r| r.0).collect(),
                rs.iter().map(|r| r.1).collect(),
                row.survey_weight,
            )
            .map_err(|e| IoError::format(subjects_path, None, format!("subject {}: {e}", row.subject_id)))?;
            s.covariates = row.covariates.clone();
            Ok(s)
        })
        .collect()
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Streams long-format readings one subject at a time.
pub struct ReadingsWriter {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl ReadingsWriter {
    pub fn create(path: &Path) -> IoResult<Self> {
        let mut w = open_writer(path)?;
        w.write_record(["subject_id", "timestamp_min", "count"]).map_err(write_err(path))?;
        Ok(Self { path: path.to_path_buf(), w })
    }

    pub fn write(&mut self, s: &ActivitySeries) -> IoResult<()> {
        let e = write_err(&self.path);
        for (t, r) in s.timestamps.iter().zip(&s.readings) {
            self.w.write_record([s.subject_id.as_str(), &fmt(*t), &fmt(*r)]).map_err(&e)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> IoResult<()> {
        self.w.flush().map_err(|source| IoError::Io { path: self.path.clone(), source })
    }
}

pub fn write_readings(path: &Path, series: &[ActivitySeries]) -> IoResult<()> {
    let mut w = ReadingsWriter::create(path)?;
    for s in series {
        w.write(s)?;
    }
    w.finish()
}

/// Writes the subjects file with the union of all covariate names as columns.
pub fn write_subjects(path: &Path, series: &[ActivitySeries]) -> IoResult<()> {
    let rows: Vec<SubjectRow> = series
        .iter()
        .map(|s| SubjectRow { subject_id: s.subject_id.clone(), survey_weight: s.survey_weight, covariates: s.covariates.clone() })
        .collect();
    write_subject_rows(path, &rows)
}

pub fn write_subject_rows(path: &Path, rows: &[SubjectRow]) -> IoResult<()> {
    let mut names: Vec<&String> = rows.iter().flat_map(|s| s.covariates.keys()).collect();
    names.sort();
    names.dedup();
    let mut w = open_writer(path)?;
    let e = write_err(path);
    let mut header = vec!["subject_id".to_string(), "survey_weight".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header).map_err(&e)?;
    for s in rows {
        let mut rec = vec![s.subject_id.clone(), fmt(s.survey_weight)];
        rec.extend(names.iter().map(|n| s.covariates.get(*n).map(|c| c.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(&e)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn write_quantiles(path: &Path, rows: &[(String, QuantileGrid)]) -> IoResult<()> {
    let m = rows.first().map_or(0, |r| r.1.m());
    let mut w = open_writer(path)?;
    let e = write_err(path);
    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=m).map(|k| format!("t_{k}")));
    w.write_record(&header).map_err(&e)?;
    for (id, g) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(g.values().iter().map(|v| fmt(*v)));
        w.write_record(&rec).map_err(&e)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn read_quantiles(path: &Path) -> IoResult<Vec<(String, QuantileGrid)>> {
    let mut rdr = open_reader(path)?;
    let h = headers(path, &mut rdr)?;
    if h[0] != "subject_id" || h.len() < 3 {
        return Err(IoError::format(path, Some(1), "expected header subject_id,t_1,...,t_m with m >= 2"));
    }
    let mut out = Vec::new();
    for r in records(path, &mut rdr) {
        let (line, rec) = r?;
        let values = rec.iter().skip(1).map(|s| parse_f64(path, line, "quantile", s)).collect::<IoResult<Vec<_>>>()?;
        let grid = QuantileGrid::new(values).map_err(|e| IoError::format(path, Some(line), e.to_string()))?;
        out.push((rec[0].to_string(), grid));
    }
    Ok(out)
}

/// One row of the distributions summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub subject_id: String,
    pub p_inactive: f64,
    pub tac_per_day: f64,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> IoResult<()> {
    let mut w = open_writer(path)?;
    let e = write_err(path);
    w.write_record(["subject_id", "p_inactive", "tac_per_day"]).map_err(&e)?;
    for r in rows {
        w.write_record([r.subject_id.as_str(), &fmt(r.p_inactive), &fmt(r.tac_per_day)]).map_err(&e)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn read_summary(path: &Path) -> IoResult<Vec<SummaryRow>> {
    let mut rdr = open_reader(path)?;
    let h = headers(path, &mut rdr)?;
    let (ci, cp, ct) = (column(path, &h, "subject_id")?, column(path, &h, "p_inactive")?, column(path, &h, "tac_per_day")?);
    let mut out = Vec::new();
    for r in records(path, &mut rdr) {
        let (line, rec) = r?;
        out.push(SummaryRow {
            subject_id: rec.get(ci).unwrap_or("").to_string(),
            p_inactive: parse_f64(path, line, "p_inactive", rec.get(cp).unwrap_or(""))?,
            tac_per_day: parse_f64(path, line, "tac_per_day", rec.get(ct).unwrap_or(""))?,
        });
    }
    Ok(out)
}

pub fn write_distance_matrix(path: &Path, ids: &[String], d: &[Vec<f64>]) -> IoResult<()> {
    let mut w = open_writer(path)?;
    let e = write_err(path);
    let mut header = vec!["subject_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(&e)?;
    for (id, row) in ids.iter().zip(d) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| fmt(*v)));
        w.write_record(&rec).map_err(&e)?;
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// One row per group and probability level: `group,t,mean,sd`.
pub fn write_frechet_profiles(path: &Path, groups: &[(String, FrechetSummary)]) -> IoResult<()> {
    let mut w = open_writer(path)?;
    let e = write_err(path);
    w.write_record(["group", "t", "mean", "sd"]).map_err(&e)?;
    for (name, s) in groups {
        let levels = QuantileGrid::levels(s.mean.m());
        for ((t, m), sd) in levels.iter().zip(s.mean.values()).zip(&s.pointwise_sd) {
            w.write_record([name.as_str(), &fmt(*t), &fmt(*m), &fmt(*sd)]).map_err(&e)?;
        }
    }
    w.flush().map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// Identifier stored in every model file.
pub const MODEL_FORMAT: &str = "actdist-krr-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Self-describing JSON wrapper around a fitted kernel ridge model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub response: String,
    /// Added to the model's predictions; the mean the responses were centered by.
    #[serde(default)]
    pub offset: f64,
    /// Identifiers of the training subjects, aligned with the model's predictors.
    pub subject_ids: Vec<String>,
    pub model: KrrModel,
}

impl ModelFile {
    pub fn new(response: impl Into<String>, subject_ids: Vec<String>, model: KrrModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            response: response.into(),
            offset: 0.0,
            subject_ids,
            model,
        }
    }

    pub fn with_offset(self, offset: f64) -> Self {
        Self { offset, ..self }
    }

    pub fn predict(&self, x: &crate::Predictor) -> crate::Result<f64> {
        Ok(self.offset + self.model.predict(x)?)
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> IoResult<()> {
    let file = File::create(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), model)
        .map_err(|e| IoError::format(path, None, e.to_string()))
}

pub fn load_model(path: &Path) -> IoResult<ModelFile> {
    let file = File::open(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    let m: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| IoError::format(path, Some(e.line() as u64), e.to_string()))?;
    if m.format != MODEL_FORMAT {
        return Err(IoError::format(path, None, format!("not a model file (format `{}`)", m.format)));
    }
    if m.version != MODEL_FORMAT_VERSION {
        return Err(IoError::format(path, None, format!("unsupported model version {}", m.version)));
    }
    if m.model.alpha.len() != m.model.predictors.len() || !(m.model.sigma > 0.0) {
        return Err(IoError::format(path, None, "inconsistent model contents"));
    }
    Ok(m)
}
