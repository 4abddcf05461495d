//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, sections are key prefixes
//! (`data.`, `split.`, `seed.`, `model.`, `loss.`, `fusion.`, `optim.`,
//! `sampler.`, `eval.`, `sweep.`, `stability.`, `output.`). Every key is
//! optional; omitted keys take the default benchmark values. Unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{BciSurrogate, LossConfig, LossKind};
use crate::model::FusionWeights;
use crate::survdata::SynthConfig;
use crate::trainer::{OptimConfig, SamplerKind, SamplerPolicy};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Csv(PathBuf),
}

/// The three independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub sampler: u64,
}

impl Seeds {
    /// Seeds of the `k`-th replicate in a sweep; replicate 0 is the base.
    pub fn replicate(&self, k: u64) -> Seeds {
        Seeds {
            data: self.data + k,
            model: self.model + k,
            sampler: self.sampler + k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMode {
    /// Fixed random risks; only the batch composition varies.
    Fixed,
    /// Per-batch losses recorded while training.
    Train,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityConfig {
    pub mode: StabilityMode,
    pub seeds: usize,
    /// Batches per seed in fixed mode.
    pub batches: usize,
    /// Temperature of the WCI side of the comparison.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split_fractions: [f64; 3],
    pub seeds: Seeds,
    /// Hidden widths; input and output sizes are implied.
    pub hidden_a: Vec<usize>,
    pub hidden_b: Vec<usize>,
    pub loss: LossConfig,
    pub fusion: FusionWeights,
    pub optim: OptimConfig,
    pub sampler_kind: SamplerKind,
    pub skew_range: (usize, usize),
    pub horizon: f64,
    pub taus: Vec<f64>,
    pub fusion_grid: Vec<FusionWeights>,
    pub sweep_losses: Vec<LossKind>,
    pub sweep_seeds: usize,
    pub stability: StabilityConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// The default benchmark: 3000 synthetic subjects split 2000/500/500,
    /// WCI with tau 0.1, 60 epochs of batch 64.
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SynthConfig::with_unit_betas(3000, 8, 4, 7)),
            split_fractions: [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
            seeds: Seeds {
                data: 7,
                model: 11,
                sampler: 13,
            },
            hidden_a: vec![32, 16],
            hidden_b: vec![16, 8],
            loss: LossConfig::wci(0.1),
            fusion: FusionWeights::even(),
            optim: OptimConfig {
                lr_init: 2e-3,
                lr_peak: 1e-2,
                batch_size: 64,
                ..OptimConfig::default()
            },
            sampler_kind: SamplerKind::Uniform,
            skew_range: (1, 16),
            horizon: 36.0,
            taus: vec![10.0, 1.0, 0.1, 0.05, 0.02],
            fusion_grid: [(0.1, 0.9), (0.3, 0.7), (0.5, 0.5), (0.7, 0.3), (0.9, 0.1)]
                .iter()
                .map(|&(w_nv, w_v)| FusionWeights { w_nv, w_v })
                .collect(),
            sweep_losses: vec![
                LossKind::Ce,
                LossKind::Cox,
                LossKind::Bci,
                LossKind::Cce,
                LossKind::WciNoTau,
                LossKind::Wci,
            ],
            sweep_seeds: 5,
            stability: StabilityConfig {
                mode: StabilityMode::Fixed,
                seeds: 10,
                batches: 300,
                tau: 1.0,
            },
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// `a:b` weight pair.
fn parse_ratio(key: &str, value: &str) -> Result<FusionWeights> {
    let (a, b) = value
        .split_once(':')
        .ok_or_else(|| Error::config(format!("{key}: expected w_nv:w_v, got '{value}'")))?;
    FusionWeights::new(parse_value(key, a)?, parse_value(key, b)?)
        .map_err(|e| Error::config(format!("{key}: {e}")))
}

/// Either three comma-separated fractions or an `a:b:c` ratio.
fn parse_fractions(key: &str, value: &str) -> Result<[f64; 3]> {
    let ratio = value.contains(':');
    let parts: Vec<f64> = if ratio {
        value
            .split(':')
            .map(|s| parse_value(key, s))
            .collect::<Result<_>>()?
    } else {
        parse_list(key, value)?
    };
    if parts.len() != 3 {
        return Err(Error::config(format!(
            "{key}: expected three values, got '{value}'"
        )));
    }
    let total: f64 = if ratio { parts.iter().sum() } else { 1.0 };
    if !(total > 0.0) {
        return Err(Error::config(format!(
            "{key}: ratio must have a positive total"
        )));
    }
    Ok([parts[0] / total, parts[1] / total, parts[2] / total])
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let DataSource::Csv(p) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            if entries
                .insert(key.trim().to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::config(format!(
                    "line {}: duplicate key '{}'",
                    lineno + 1,
                    key.trim()
                )));
            }
        }
        Self::from_entries(&entries)
    }

    fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut synth = match &cfg.data {
            DataSource::Synthetic(s) => s.clone(),
            DataSource::Csv(_) => unreachable!("default is synthetic"),
        };
        let mut source = "synthetic".to_string();
        let mut csv_path: Option<PathBuf> = None;
        let (mut beta_a, mut beta_b): (Option<Vec<f64>>, Option<Vec<f64>>) = (None, None);
        let mut w_nv: Option<f64> = None;
        let mut w_v: Option<f64> = None;

        for (key, value) in entries {
            let k = key.as_str();
            let v = value.as_str();
            match k {
                "data.source" => source = v.to_ascii_lowercase(),
                "data.path" => csv_path = Some(PathBuf::from(v)),
                "data.n" => synth.n = parse_value(k, v)?,
                "data.dim_a" => synth.dim_a = parse_value(k, v)?,
                "data.dim_b" => synth.dim_b = parse_value(k, v)?,
                "data.beta_a" => beta_a = Some(parse_list(k, v)?),
                "data.beta_b" => beta_b = Some(parse_list(k, v)?),
                "data.baseline_rate" => synth.baseline_rate = parse_value(k, v)?,
                "data.censor_rate" => synth.censor_rate = parse_value(k, v)?,
                "data.time_scale" => synth.time_scale = parse_value(k, v)?,
                "split.fractions" => cfg.split_fractions = parse_fractions(k, v)?,
                "seed.data" => cfg.seeds.data = parse_value(k, v)?,
                "seed.model" => cfg.seeds.model = parse_value(k, v)?,
                "seed.sampler" => cfg.seeds.sampler = parse_value(k, v)?,
                "model.hidden_a" => cfg.hidden_a = parse_list(k, v)?,
                "model.hidden_b" => cfg.hidden_b = parse_list(k, v)?,
                "loss.id" => cfg.loss.kind = parse_value(k, v)?,
                "loss.tau" => cfg.loss.tau = parse_value(k, v)?,
                "loss.cut" => cfg.loss.cut = parse_value(k, v)?,
                "loss.bci_surrogate" => {
                    cfg.loss.bci_surrogate = match v {
                        "exp" | "exponential" => BciSurrogate::Exponential,
                        "logsigmoid" | "log_sigmoid" => BciSurrogate::LogSigmoid,
                        other => {
                            return Err(Error::config(format!("{k}: unknown surrogate '{other}'")))
                        }
                    }
                }
                "fusion.w_nv" => w_nv = Some(parse_value(k, v)?),
                "fusion.w_v" => w_v = Some(parse_value(k, v)?),
                "optim.lr_init" => cfg.optim.lr_init = parse_value(k, v)?,
                "optim.lr_peak" => cfg.optim.lr_peak = parse_value(k, v)?,
                "optim.warmup_epochs" => cfg.optim.warmup_epochs = parse_value(k, v)?,
                "optim.epochs" => cfg.optim.epochs = parse_value(k, v)?,
                "optim.momentum" => cfg.optim.momentum = parse_value(k, v)?,
                "optim.weight_decay" => cfg.optim.weight_decay = parse_value(k, v)?,
                "optim.batch_size" => cfg.optim.batch_size = parse_value(k, v)?,
                "sampler.kind" => cfg.sampler_kind = parse_value(k, v)?,
                "sampler.skew_min" => cfg.skew_range.0 = parse_value(k, v)?,
                "sampler.skew_max" => cfg.skew_range.1 = parse_value(k, v)?,
                "eval.horizon" => cfg.horizon = parse_value(k, v)?,
                "sweep.taus" => cfg.taus = parse_list(k, v)?,
                "sweep.fusion_grid" => {
                    cfg.fusion_grid = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_ratio(k, s))
                        .collect::<Result<_>>()?
                }
                "sweep.losses" => cfg.sweep_losses = parse_list(k, v)?,
                "sweep.seeds" => cfg.sweep_seeds = parse_value(k, v)?,
                "stability.mode" => {
                    cfg.stability.mode = match v {
                        "fixed" => StabilityMode::Fixed,
                        "train" => StabilityMode::Train,
                        other => {
                            return Err(Error::config(format!(
                                "{k}: expected fixed or train, got '{other}'"
                            )))
                        }
                    }
                }
                "stability.seeds" => cfg.stability.seeds = parse_value(k, v)?,
                "stability.batches" => cfg.stability.batches = parse_value(k, v)?,
                "stability.tau" => cfg.stability.tau = parse_value(k, v)?,
                "output.dir" => cfg.out_dir = PathBuf::from(v),
                other => return Err(Error::config(format!("unknown key '{other}'"))),
            }
        }

        synth.beta_a =
            beta_a.unwrap_or_else(|| vec![1.0 / (synth.dim_a.max(1) as f64).sqrt(); synth.dim_a]);
        synth.beta_b =
            beta_b.unwrap_or_else(|| vec![1.0 / (synth.dim_b.max(1) as f64).sqrt(); synth.dim_b]);
        cfg.data = match source.as_str() {
            "synthetic" => DataSource::Synthetic(synth),
            "csv" => DataSource::Csv(
                csv_path.ok_or_else(|| Error::config("data.source = csv needs data.path"))?,
            ),
            other => {
                return Err(Error::config(format!(
                    "data.source: expected synthetic or csv, got '{other}'"
                )))
            }
        };
        cfg.fusion = match (w_nv, w_v) {
            (None, None) => cfg.fusion,
            (Some(a), None) => FusionWeights::new(a, 1.0 - a)?,
            (None, Some(b)) => FusionWeights::new(1.0 - b, b)?,
            (Some(a), Some(b)) => FusionWeights::new(a, b)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.loss.validate()?;
        self.optim.validate()?;
        self.sampler_policy(0).validate(self.optim.batch_size)?;
        if self.hidden_a.contains(&0) || self.hidden_b.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::config("eval.horizon must be positive"));
        }
        if self.taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::config("sweep.taus must all be positive"));
        }
        if self.sweep_seeds == 0 || self.stability.seeds == 0 {
            return Err(Error::config("seed counts must be at least 1"));
        }
        if self.stability.batches < 2 {
            return Err(Error::config("stability.batches must be at least 2"));
        }
        if !(self.stability.tau > 0.0) {
            return Err(Error::config("stability.tau must be positive"));
        }
        Ok(())
    }

    pub fn synth(&self) -> Option<&SynthConfig> {
        match &self.data {
            DataSource::Synthetic(s) => Some(s),
            DataSource::Csv(_) => None,
        }
    }

    pub fn sampler_policy(&self, seed: u64) -> SamplerPolicy {
        SamplerPolicy {
            kind: self.sampler_kind,
            skew_events_per_batch: self.skew_range,
            seed,
        }
    }

    /// Every setting that affects results, one `key=value` per line in key
    /// order. The output directory is left out.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let join = |xs: &[f64]| xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let join_us = |xs: &[usize]| {
            xs.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        match &self.data {
            DataSource::Synthetic(s) => {
                m.insert("data.source", "synthetic".into());
                m.insert("data.n", s.n.to_string());
                m.insert("data.dim_a", s.dim_a.to_string());
                m.insert("data.dim_b", s.dim_b.to_string());
                m.insert("data.beta_a", join(&s.beta_a));
                m.insert("data.beta_b", join(&s.beta_b));
                m.insert("data.baseline_rate", s.baseline_rate.to_string());
                m.insert("data.censor_rate", s.censor_rate.to_string());
                m.insert("data.time_scale", s.time_scale.to_string());
            }
            DataSource::Csv(p) => {
                m.insert("data.source", "csv".into());
                m.insert("data.path", p.display().to_string());
            }
        }
        m.insert("split.fractions", join(&self.split_fractions));
        m.insert("seed.data", self.seeds.data.to_string());
        m.insert("seed.model", self.seeds.model.to_string());
        m.insert("seed.sampler", self.seeds.sampler.to_string());
        m.insert("model.hidden_a", join_us(&self.hidden_a));
        m.insert("model.hidden_b", join_us(&self.hidden_b));
        m.insert("loss.id", self.loss.kind.to_string());
        m.insert("loss.tau", self.loss.tau.to_string());
        m.insert("loss.cut", self.loss.cut.to_string());
        m.insert(
            "loss.bci_surrogate",
            format!("{:?}", self.loss.bci_surrogate),
        );
        m.insert("fusion.w_nv", self.fusion.w_nv.to_string());
        m.insert("fusion.w_v", self.fusion.w_v.to_string());
        let o = &self.optim;
        m.insert("optim.lr_init", o.lr_init.to_string());
        m.insert("optim.lr_peak", o.lr_peak.to_string());
        m.insert("optim.warmup_epochs", o.warmup_epochs.to_string());
        m.insert("optim.epochs", o.epochs.to_string());
        m.insert("optim.momentum", o.momentum.to_string());
        m.insert("optim.weight_decay", o.weight_decay.to_string());
        m.insert("optim.batch_size", o.batch_size.to_string());
        m.insert("sampler.kind", self.sampler_kind.to_string());
        m.insert("sampler.skew_min", self.skew_range.0.to_string());
        m.insert("sampler.skew_max", self.skew_range.1.to_string());
        m.insert("eval.horizon", self.horizon.to_string());
        m.insert("sweep.taus", join(&self.taus));
        m.insert(
            "sweep.fusion_grid",
            self.fusion_grid
                .iter()
                .map(|w| format!("{}:{}", w.w_nv, w.w_v))
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert(
            "sweep.losses",
            self.sweep_losses
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("sweep.seeds", self.sweep_seeds.to_string());
        m.insert(
            "stability.mode",
            format!("{:?}", self.stability.mode).to_ascii_lowercase(),
        );
        m.insert("stability.seeds", self.stability.seeds.to_string());
        m.insert("stability.batches", self.stability.batches.to_string());
        m.insert("stability.tau", self.stability.tau.to_string());
        m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
