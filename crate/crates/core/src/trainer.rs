//! Mini-batch SGD with momentum, decoupled weight decay and a warmup +
//! cosine learning-rate schedule.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{evaluate, LossConfig, LossKind};
use crate::model::{ModelOutput, RiskModel};
use crate::pairing::concordance_index;
use crate::survdata::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr_init: f64,
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_init: 2e-4,
            lr_peak: 1e-3,
            warmup_epochs: 5,
            epochs: 60,
            momentum: 0.8,
            weight_decay: 3e-5,
            batch_size: 128,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0 && self.lr_peak > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be non-negative"));
        }
        if self.batch_size < 8 || !self.batch_size.is_multiple_of(8) {
            return Err(Error::config(format!(
                "batch size must be a positive multiple of 8, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` of `epoch`.
///
/// Linear from `lr_init` to `lr_peak` over the warmup epochs, then a half
/// cosine from `lr_peak` down to zero at the end of the last epoch.
pub fn lr_at(cfg: &OptimConfig, epoch: usize, step: usize, steps_per_epoch: usize) -> f64 {
    let t = epoch as f64 + step as f64 / steps_per_epoch.max(1) as f64;
    let warmup = cfg.warmup_epochs as f64;
    if t < warmup {
        return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * t / warmup;
    }
    let decay_span = cfg.epochs.saturating_sub(cfg.warmup_epochs) as f64;
    if decay_span <= 0.0 {
        return cfg.lr_peak;
    }
    let progress = ((t - warmup) / decay_span).min(1.0);
    0.5 * cfg.lr_peak * (1.0 + (PI * progress).cos())
}

/// Heavy-ball momentum with weight decay applied to the parameters directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(n_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            velocity: vec![0.0; n_params],
            momentum,
            weight_decay,
        }
    }

    /// `v <- m v + g`, `p <- p - lr v - lr wd p`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= lr * (*v + self.weight_decay * *p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// A fresh permutation per epoch, cut into consecutive batches.
    Uniform,
    /// Every batch gets the global event share, still one pass per epoch.
    EventBalanced,
    /// Each batch draws its event count uniformly from a range.
    Skewed,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::EventBalanced => "balanced",
            SamplerKind::Skewed => "skewed",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(SamplerKind::Uniform),
            "balanced" | "event_balanced" => Ok(SamplerKind::EventBalanced),
            "skewed" => Ok(SamplerKind::Skewed),
            other => Err(Error::config(format!(
                "unknown sampler '{other}' (expected uniform, balanced, skewed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerPolicy {
    pub kind: SamplerKind,
    /// Inclusive `(min, max)` events per batch for `Skewed`.
    pub skew_events_per_batch: (usize, usize),
    pub seed: u64,
}

impl SamplerPolicy {
    pub fn uniform(seed: u64) -> Self {
        SamplerPolicy {
            kind: SamplerKind::Uniform,
            skew_events_per_batch: (1, 16),
            seed,
        }
    }

    pub fn skewed(seed: u64, min: usize, max: usize) -> Self {
        SamplerPolicy {
            kind: SamplerKind::Skewed,
            skew_events_per_batch: (min, max),
            seed,
        }
    }

    pub fn validate(&self, batch_size: usize) -> Result<()> {
        let (lo, hi) = self.skew_events_per_batch;
        if self.kind == SamplerKind::Skewed && (lo > hi || hi > batch_size) {
            return Err(Error::config(format!(
                "skew range ({lo}, {hi}) must satisfy min <= max <= batch size {batch_size}"
            )));
        }
        Ok(())
    }
}

/// Stateful batch generator; the stream is seeded once and advances across
/// epochs.
#[derive(Debug, Clone)]
pub struct Sampler {
    policy: SamplerPolicy,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(policy: SamplerPolicy) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(policy.seed);
        Sampler { policy, rng }
    }

    pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
        n.div_ceil(batch_size)
    }

    /// Index lists for one epoch.
    pub fn epoch_batches(&mut self, dataset: &Dataset, batch_size: usize) -> Vec<Vec<usize>> {
        let n = dataset.len();
        if n == 0 {
            return Vec::new();
        }
        let n_batches = Self::steps_per_epoch(n, batch_size);
        let records = dataset.records();
        let (mut events, mut censored): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| records[i].event);

        match self.policy.kind {
            SamplerKind::Uniform => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut self.rng);
                order.chunks(batch_size).map(<[usize]>::to_vec).collect()
            }
            SamplerKind::EventBalanced => {
                events.shuffle(&mut self.rng);
                censored.shuffle(&mut self.rng);
                (0..n_batches)
                    .map(|k| {
                        let mut batch = even_slice(&events, k, n_batches).to_vec();
                        batch.extend_from_slice(even_slice(&censored, k, n_batches));
                        batch.shuffle(&mut self.rng);
                        batch
                    })
                    .collect()
            }
            SamplerKind::Skewed => {
                let (lo, hi) = self.policy.skew_events_per_batch;
                (0..n_batches)
                    .map(|_| {
                        let want = self.rng.random_range(lo..=hi).min(events.len());
                        let fill = (batch_size - want).min(censored.len());
                        let mut batch: Vec<usize> =
                            index::sample(&mut self.rng, events.len(), want)
                                .into_iter()
                                .map(|k| events[k])
                                .collect();
                        batch.extend(
                            index::sample(&mut self.rng, censored.len(), fill)
                                .into_iter()
                                .map(|k| censored[k]),
                        );
                        batch
                    })
                    .collect()
            }
        }
    }
}

/// `k`-th of `parts` nearly equal contiguous slices.
fn even_slice<T>(items: &[T], k: usize, parts: usize) -> &[T] {
    let start = k * items.len() / parts;
    let end = (k + 1) * items.len() / parts;
    &items[start..end]
}

/// Largest-remainder apportionment of `n` items by `fractions`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = raw[k].floor() as usize;
    }
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[k] > 0.0 {
            counts[k] += 1;
            left -= 1;
        }
    }
    counts
}

/// Event-stratified train/validation/test split.
///
/// Split sizes are `floor(f * n)` with the remainder handed out by largest
/// fractional part. Events are apportioned the same way and the rest of each
/// split is filled with censored records. Records keep their dataset order.
pub fn split(
    dataset: &Dataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let n = dataset.len();
    let totals = apportion(n, &fractions);
    let records = dataset.records();
    let (mut events, mut censored): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| records[i].event);
    let mut ev_counts = apportion(events.len(), &fractions);
    // a split cannot hold more events than records
    for k in 0..3 {
        while ev_counts[k] > totals[k] {
            ev_counts[k] -= 1;
            let to = (0..3)
                .filter(|&j| j != k && ev_counts[j] < totals[j])
                .max_by(|&a, &b| fractions[a].total_cmp(&fractions[b]))
                .expect("event total never exceeds record total");
            ev_counts[to] += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    events.shuffle(&mut rng);
    censored.shuffle(&mut rng);

    let names = ["train", "val", "test"];
    let mut parts = Vec::with_capacity(3);
    let (mut ev_pos, mut ce_pos) = (0, 0);
    for k in 0..3 {
        let n_ev = ev_counts[k];
        let n_ce = totals[k] - n_ev;
        let mut idx: Vec<usize> = events[ev_pos..ev_pos + n_ev].to_vec();
        idx.extend_from_slice(&censored[ce_pos..ce_pos + n_ce]);
        ev_pos += n_ev;
        ce_pos += n_ce;
        idx.sort_unstable();
        if fractions[k] > 0.0 && n_ev == 0 {
            return Err(Error::EmptySplit { split: names[k] });
        }
        parts.push(dataset.subset(format!("{}-{}", dataset.name, names[k]), &idx));
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((train, val, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    /// Mean loss over the batches that were not skipped.
    pub train_loss: f64,
    pub batches: usize,
    pub skipped: usize,
    pub val_ci: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Loss of every evaluated batch, in training order.
    pub batch_losses: Vec<f64>,
    pub skipped_batches: usize,
    pub best_epoch: Option<usize>,
    pub best_val_ci: Option<f64>,
    /// Parameters at the end of `best_epoch`.
    pub best_params: Option<Vec<f64>>,
}

impl TrainReport {
    pub fn final_val_ci(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_ci)
    }

    /// One row per epoch. Reals use their shortest exact representation;
    /// a missing validation CI is written as an empty field.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "epoch,lr,train_loss,batches,skipped,val_ci")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.lr,
                e.train_loss,
                e.batches,
                e.skipped,
                e.val_ci.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn check_model_matches_loss(model: &RiskModel, loss: &LossConfig) -> Result<()> {
    let want = match loss.kind {
        LossKind::Cce => ModelOutput::CceLogits,
        _ => ModelOutput::Risk,
    };
    if model.output() != want {
        return Err(Error::config(format!(
            "loss {} needs a {:?} model, got {:?}",
            loss.kind,
            want,
            model.output()
        )));
    }
    Ok(())
}

/// Trains `model` in place.
///
/// Batches on which the loss has nothing to compare or label are skipped and
/// counted; an epoch in which every batch is skipped is an error. Validation
/// CI is computed after each epoch when `val` has comparable pairs.
pub fn train(
    model: &mut RiskModel,
    dataset: &Dataset,
    val: Option<&Dataset>,
    loss: &LossConfig,
    optim: &OptimConfig,
    sampler: &SamplerPolicy,
) -> Result<TrainReport> {
    loss.validate()?;
    optim.validate()?;
    sampler.validate(optim.batch_size)?;
    check_model_matches_loss(model, loss)?;
    model.check_dims(dataset.feature_dims())?;
    if let Some(v) = val {
        model.check_dims(v.feature_dims())?;
    }
    if dataset.n_events() == 0 {
        return Err(Error::NoEvents);
    }

    let mut report = TrainReport::default();
    let mut sgd = Sgd::new(model.n_params(), optim.momentum, optim.weight_decay);
    let mut batcher = Sampler::new(sampler.clone());
    let mut params = model.params();

    for epoch in 0..optim.epochs {
        let batches = batcher.epoch_batches(dataset, optim.batch_size);
        let steps = batches.len();
        let mut loss_sum = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for (step, idx) in batches.iter().enumerate() {
            let pass = model.forward_batch(dataset, idx)?;
            let out = match evaluate(loss, &dataset.batch(idx), &pass.outputs) {
                Ok(out) => out,
                Err(e) if e.is_empty_batch() => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grad = model.backward(&pass, &out.grad)?;
            sgd.step(&mut params, &grad.0, lr_at(optim, epoch, step, steps));
            model.set_params(&params)?;
            loss_sum += out.value;
            used += 1;
            report.batch_losses.push(out.value);
        }
        report.skipped_batches += skipped;
        if used == 0 {
            return Err(Error::DegenerateSampler { epoch });
        }

        let val_ci = match val {
            Some(v) if !v.is_empty() => match concordance_index(v, &model.predict_risks(v)?) {
                Ok(ci) => Some(ci),
                Err(Error::UndefinedCi) => None,
                Err(e) => return Err(e),
            },
            _ => None,
        };
        if let Some(ci) = val_ci {
            if report.best_val_ci.is_none_or(|best| ci > best) {
                report.best_val_ci = Some(ci);
                report.best_epoch = Some(epoch);
                report.best_params = Some(params.clone());
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            lr: lr_at(optim, epoch, 0, steps),
            train_loss: loss_sum / used as f64,
            batches: used,
            skipped,
            val_ci,
        });
    }
    Ok(report)
}
