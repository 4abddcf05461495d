//! Survival records, datasets, CSV I/O and the proportional-hazards simulator.
//!
//! A [`SurvivalRecord`] carries two feature groups. Group `a` plays the role
//! of the tabular (non-image) inputs and group `b` the role of the second
//! modality; the model fuses one risk head per group.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub id: u64,
    pub features_a: Vec<f64>,
    pub features_b: Vec<f64>,
    /// Observed time in months: event time or censoring time.
    pub time: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
}

/// Times and event flags of a set of samples, without features.
///
/// Losses and pair construction only need these two columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub times: Vec<f64>,
    pub events: Vec<bool>,
}

impl Batch {
    pub fn new(times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::LengthMismatch {
                expected: times.len(),
                got: events.len(),
            });
        }
        Ok(Batch { times, events })
    }

    /// Builds a batch from `(time, event)` tuples, mostly for tests.
    pub fn from_pairs(pairs: &[(f64, bool)]) -> Self {
        Batch {
            times: pairs.iter().map(|p| p.0).collect(),
            events: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    records: Vec<SurvivalRecord>,
    feature_dims: (usize, usize),
}

impl Dataset {
    /// Validates ids, times and feature widths. An empty record list is
    /// allowed (an empty split); metrics and losses reject it later.
    pub fn new(
        name: impl Into<String>,
        feature_dims: (usize, usize),
        records: Vec<SurvivalRecord>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id) {
                return Err(Error::config(format!("duplicate record id {}", r.id)));
            }
            if !(r.time > 0.0 && r.time.is_finite()) {
                return Err(Error::config(format!(
                    "record {}: time must be positive and finite, got {}",
                    r.id, r.time
                )));
            }
            if r.features_a.len() != feature_dims.0 || r.features_b.len() != feature_dims.1 {
                return Err(Error::DimensionMismatch {
                    expected: format!("{:?}", feature_dims),
                    got: format!("({}, {})", r.features_a.len(), r.features_b.len()),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            records,
            feature_dims,
        })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        self.feature_dims
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn censoring_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        1.0 - self.n_events() as f64 / self.records.len() as f64
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            times: self.times(),
            events: self.events(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            times: indices.iter().map(|&i| self.records[i].time).collect(),
            events: indices.iter().map(|&i| self.records[i].event).collect(),
        }
    }

    /// New dataset holding the records at `indices`, in that order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_dims: self.feature_dims,
        }
    }
}

/// Parameters of the exponential proportional-hazards simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub beta_a: Vec<f64>,
    pub beta_b: Vec<f64>,
    pub baseline_rate: f64,
    pub censor_rate: f64,
    pub time_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::with_unit_betas(2000, 8, 4, 7)
    }
}

impl SynthConfig {
    /// Coefficient vectors of unit norm with equal entries, baseline rate
    /// 0.02/month and censoring rate 0.01/month (roughly 35% censored).
    pub fn with_unit_betas(n: usize, dim_a: usize, dim_b: usize, seed: u64) -> Self {
        SynthConfig {
            n,
            dim_a,
            dim_b,
            beta_a: unit_vector(dim_a),
            beta_b: unit_vector(dim_b),
            baseline_rate: 0.02,
            censor_rate: 0.01,
            time_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if self.dim_a < 1 || self.dim_b < 1 {
            return Err(Error::config("feature dimensions must be at least 1"));
        }
        if self.beta_a.len() != self.dim_a || self.beta_b.len() != self.dim_b {
            return Err(Error::config(format!(
                "coefficient lengths ({}, {}) do not match dims ({}, {})",
                self.beta_a.len(),
                self.beta_b.len(),
                self.dim_a,
                self.dim_b
            )));
        }
        for (name, v) in [
            ("baseline_rate", self.baseline_rate),
            ("censor_rate", self.censor_rate),
            ("time_scale", self.time_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn unit_vector(dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    vec![1.0 / (dim as f64).sqrt(); dim]
}

/// A simulated cohort together with the latent times it was censored from.
#[derive(Debug, Clone)]
pub struct SyntheticDraw {
    pub dataset: Dataset,
    pub latent_event_times: Vec<f64>,
    pub censor_times: Vec<f64>,
}

impl SyntheticDraw {
    pub fn censoring_fraction(&self) -> f64 {
        self.dataset.censoring_fraction()
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    generate_with_latent(cfg).map(|d| d.dataset)
}

/// Draws `cfg.n` subjects. Features are standard normal, the event time is
/// exponential with rate `baseline_rate * exp(beta . x)` and the censoring
/// time exponential with rate `censor_rate`, both multiplied by `time_scale`.
pub fn generate_with_latent(cfg: &SynthConfig) -> Result<SyntheticDraw> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit_exp = Exp::new(1.0).expect("unit rate is valid");

    let mut records = Vec::with_capacity(cfg.n);
    let mut latent = Vec::with_capacity(cfg.n);
    let mut censor = Vec::with_capacity(cfg.n);
    for id in 0..cfg.n {
        let features_a: Vec<f64> = (0..cfg.dim_a)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let features_b: Vec<f64> = (0..cfg.dim_b)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let log_risk = dot(&cfg.beta_a, &features_a) + dot(&cfg.beta_b, &features_b);
        let rate = cfg.baseline_rate * log_risk.exp();

        // Exp(rate) = Exp(1) / rate
        let t_event = (unit_exp.sample(&mut rng) / rate * cfg.time_scale).max(f64::MIN_POSITIVE);
        let t_censor =
            (unit_exp.sample(&mut rng) / cfg.censor_rate * cfg.time_scale).max(f64::MIN_POSITIVE);

        let event = t_event <= t_censor;
        records.push(SurvivalRecord {
            id: id as u64,
            features_a,
            features_b,
            time: if event { t_event } else { t_censor },
            event,
        });
        latent.push(t_event);
        censor.push(t_censor);
    }

    let dataset = Dataset::new(
        format!("synthetic-seed{}", cfg.seed),
        (cfg.dim_a, cfg.dim_b),
        records,
    )?;
    Ok(SyntheticDraw {
        dataset,
        latent_event_times: latent,
        censor_times: censor,
    })
}

/// Ground-truth log-hazard `beta_a . x_a + beta_b . x_b` of a record.
pub fn oracle_risk(cfg: &SynthConfig, record: &SurvivalRecord) -> Result<f64> {
    if record.features_a.len() != cfg.beta_a.len() || record.features_b.len() != cfg.beta_b.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("({}, {})", cfg.beta_a.len(), cfg.beta_b.len()),
            got: format!("({}, {})", record.features_a.len(), record.features_b.len()),
        });
    }
    Ok(dot(&cfg.beta_a, &record.features_a) + dot(&cfg.beta_b, &record.features_b))
}

pub fn oracle_risks(cfg: &SynthConfig, dataset: &Dataset) -> Result<Vec<f64>> {
    dataset
        .records()
        .iter()
        .map(|r| oracle_risk(cfg, r))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// CSV

/// Reads a dataset written by [`write_csv`]. Lines starting with `#` are
/// skipped. Columns are located by name, so their order is free.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let file = File::open(path)?;
    read_csv_from(file, name)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, name: impl Into<String>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::NoRecords);
    }
    let header_line = rdr.position().line();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |name: &str| Error::Parse {
        line: header_line.max(1),
        message: format!("missing column '{name}'"),
    };
    let id_col = column("id").ok_or_else(|| missing("id"))?;
    let time_col = column("time").ok_or_else(|| missing("time"))?;
    let event_col = column("event").ok_or_else(|| missing("event"))?;
    let a_cols = feature_columns(&headers, "a_");
    let b_cols = feature_columns(&headers, "b_");

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let err = |message: String| Error::Parse { line, message };
        let field = |col: usize| row.get(col).map(str::trim).unwrap_or("");

        let id: u64 = field(id_col)
            .parse()
            .map_err(|_| err(format!("invalid id '{}'", field(id_col))))?;
        if !ids.insert(id) {
            return Err(err(format!("duplicate id {id}")));
        }
        let time: f64 = field(time_col)
            .parse()
            .map_err(|_| err(format!("invalid time '{}'", field(time_col))))?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(err(format!("time must be positive, got {time}")));
        }
        let event = match field(event_col) {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("event must be 0 or 1, got '{other}'"))),
        };
        let parse_group = |cols: &[usize]| -> Result<Vec<f64>> {
            cols.iter()
                .map(|&c| {
                    field(c).parse::<f64>().map_err(|_| {
                        err(format!(
                            "invalid feature '{}' in column {}",
                            field(c),
                            &headers[c]
                        ))
                    })
                })
                .collect()
        };
        records.push(SurvivalRecord {
            id,
            features_a: parse_group(&a_cols)?,
            features_b: parse_group(&b_cols)?,
            time,
            event,
        });
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Dataset::new(name, (a_cols.len(), b_cols.len()), records)
}

/// Column positions of `prefix0, prefix1, ...` in index order.
fn feature_columns(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut cols = Vec::new();
    while let Some(pos) = headers
        .iter()
        .position(|h| h.trim() == format!("{prefix}{}", cols.len()))
    {
        cols.push(pos);
    }
    cols
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_with_comment(dataset, path, None)
}

/// Writes the dataset, optionally preceded by one `# ...` comment line.
/// Reals use the shortest representation that parses back to the same bits.
pub fn write_csv_with_comment(
    dataset: &Dataset,
    path: impl AsRef<Path>,
    comment: Option<&str>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv_to(dataset, &mut out, comment)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(dataset: &Dataset, mut out: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let (da, db) = dataset.feature_dims();
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);

    let mut header = vec!["id".to_string(), "time".to_string(), "event".to_string()];
    header.extend((0..da).map(|k| format!("a_{k}")));
    header.extend((0..db).map(|k| format!("b_{k}")));
    wtr.write_record(&header)?;

    for r in dataset.records() {
        let mut row = Vec::with_capacity(3 + da + db);
        row.push(r.id.to_string());
        row.push(r.time.to_string());
        row.push(if r.event { "1" } else { "0" }.to_string());
        row.extend(r.features_a.iter().map(f64::to_string));
        row.extend(r.features_b.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u64, time: f64, event: bool) -> SurvivalRecord {
        SurvivalRecord {
            id,
            features_a: vec![0.0],
            features_b: vec![0.0],
            time,
            event,
        }
    }

    #[test]
    fn vanishing_censoring_gives_all_events() {
        let mut cfg = SynthConfig::with_unit_betas(500, 3, 2, 1);
        cfg.censor_rate = 1e-12;
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.n_events(), 500);
        assert_eq!(ds.censoring_fraction(), 0.0);
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig::with_unit_betas(2000, 8, 4, 7);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SynthConfig::default();
        let bad = [
            SynthConfig {
                n: 1,
                ..base.clone()
            },
            SynthConfig {
                censor_rate: 0.0,
                ..base.clone()
            },
            SynthConfig {
                baseline_rate: -1.0,
                ..base.clone()
            },
            SynthConfig {
                dim_b: 0,
                beta_b: vec![],
                ..base.clone()
            },
            SynthConfig {
                beta_a: vec![1.0],
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(generate_synthetic(&cfg), Err(Error::Config(_))),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn oracle_risk_is_a_dot_product() {
        let cfg = SynthConfig {
            dim_a: 2,
            dim_b: 0,
            beta_a: vec![1.0, 0.0],
            beta_b: vec![],
            ..SynthConfig::default()
        };
        let r = SurvivalRecord {
            id: 0,
            features_a: vec![2.0, 5.0],
            features_b: vec![],
            time: 1.0,
            event: true,
        };
        assert_eq!(oracle_risk(&cfg, &r).unwrap(), 2.0);

        let zero = SurvivalRecord {
            features_a: vec![0.0; 8],
            features_b: vec![0.0; 4],
            ..r.clone()
        };
        assert_eq!(oracle_risk(&SynthConfig::default(), &zero).unwrap(), 0.0);
        assert!(matches!(
            oracle_risk(&SynthConfig::default(), &r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dataset_rejects_bad_records() {
        assert!(Dataset::new(
            "d",
            (1, 1),
            vec![record(0, 1.0, true), record(0, 2.0, false)]
        )
        .is_err());
        assert!(Dataset::new("d", (1, 1), vec![record(0, 0.0, true)]).is_err());
        assert!(Dataset::new("d", (2, 1), vec![record(0, 1.0, true)]).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let ds = generate_synthetic(&SynthConfig::with_unit_betas(50, 3, 2, 11)).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf, Some("hash=abc")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# hash=abc\nid,time,event,a_0,a_1,a_2,b_0,b_1\n"));
        assert!(!text.contains('\r'));
        let back = read_csv_from(buf.as_slice(), ds.name.clone()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "id,time,event,a_0,b_0\n0,1.5,1,0.1,0.2\n1,2.5,2,0.1,0.2\n";
        let err = read_csv_from(text.as_bytes(), "x").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("event"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }

        let text = "id,time,event,a_0\n0,-1,1,0.1\n";
        assert!(matches!(
            read_csv_from(text.as_bytes(), "x"),
            Err(Error::Parse { line: 2, .. })
        ));

        let text = "id,event,a_0\n0,1,0.1\n";
        match read_csv_from(text.as_bytes(), "x").unwrap_err() {
            Error::Parse { message, .. } => assert!(message.contains("time")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_has_no_records() {
        assert!(matches!(
            read_csv_from("".as_bytes(), "x"),
            Err(Error::NoRecords)
        ));
        assert!(matches!(
            read_csv_from("id,time,event\n".as_bytes(), "x"),
            Err(Error::NoRecords)
        ));
    }
}
