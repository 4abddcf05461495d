//! Training runs and sweeps, returning plain rows. File output lives in
//! `commands`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, Seeds};
use crate::error::{Error, Result};
use crate::losses::{bci_loss, wci_loss, LossConfig, LossKind, WciConfig};
use crate::metrics::{batch_stability, time_dependent_auc};
use crate::model::{FusionWeights, ModelOutput, RiskModel};
use crate::pairing::concordance_index;
use crate::survdata::{generate_synthetic, oracle_risks, read_csv, Dataset, SynthConfig};
use crate::trainer::{split, train, SamplerKind, SamplerPolicy, TrainReport};

/// Synthetic settings with the data seed applied.
pub fn synth_config(cfg: &ExperimentConfig, seeds: Seeds) -> Option<SynthConfig> {
    cfg.synth().map(|s| SynthConfig {
        seed: seeds.data,
        ..s.clone()
    })
}

pub fn load_dataset(cfg: &ExperimentConfig, seeds: Seeds) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic(_) => {
            generate_synthetic(&synth_config(cfg, seeds).expect("synthetic"))
        }
        DataSource::Csv(path) => read_csv(path),
    }
}

pub fn build_model(
    cfg: &ExperimentConfig,
    loss: &LossConfig,
    fusion: FusionWeights,
    dims: (usize, usize),
    seed: u64,
) -> Result<RiskModel> {
    let output = match loss.kind {
        LossKind::Cce => ModelOutput::CceLogits,
        _ => ModelOutput::Risk,
    };
    let sizes = |input: usize, hidden: &[usize]| {
        let mut s = vec![input];
        s.extend_from_slice(hidden);
        s.push(output.width());
        s
    };
    RiskModel::init_with_output(
        seed,
        &sizes(dims.0, &cfg.hidden_a),
        &sizes(dims.1, &cfg.hidden_b),
        fusion,
        output,
    )
}

/// CI and AUC of `risks` on `dataset`; an undefined AUC becomes `None`.
pub fn score(dataset: &Dataset, risks: &[f64], horizon: f64) -> Result<(f64, Option<f64>)> {
    let ci = concordance_index(dataset, risks)?;
    let auc = match time_dependent_auc(dataset, risks, horizon) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((ci, auc))
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: RiskModel,
    pub report: TrainReport,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub test_ci: f64,
    pub test_auc: Option<f64>,
    /// CI of the generating risks on the test split (synthetic data only).
    pub oracle_test_ci: Option<f64>,
}

/// Loads, splits, trains and scores the final model on the test split.
pub fn run_training(
    cfg: &ExperimentConfig,
    loss: &LossConfig,
    fusion: FusionWeights,
    seeds: Seeds,
) -> Result<TrainedRun> {
    let data = load_dataset(cfg, seeds)?;
    let (train_set, val, test) = split(&data, cfg.split_fractions, seeds.data)?;
    let mut model = build_model(cfg, loss, fusion, data.feature_dims(), seeds.model)?;
    let val_opt = (!val.is_empty()).then_some(&val);
    let report = train(
        &mut model,
        &train_set,
        val_opt,
        loss,
        &cfg.optim,
        &cfg.sampler_policy(seeds.sampler),
    )?;
    let (test_ci, test_auc) = score(&test, &model.predict_risks(&test)?, cfg.horizon)?;
    let oracle_test_ci = match synth_config(cfg, seeds) {
        Some(s) => Some(concordance_index(&test, &oracle_risks(&s, &test)?)?),
        None => None,
    };
    Ok(TrainedRun {
        model,
        report,
        train: train_set,
        val,
        test,
        test_ci,
        test_auc,
        oracle_test_ci,
    })
}

/// One trained replicate inside a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub loss: LossKind,
    pub tau: f64,
    pub fusion: FusionWeights,
    pub replicate: u64,
    pub seeds: Seeds,
    pub ci: f64,
    pub auc: Option<f64>,
    pub oracle_ci: Option<f64>,
}

fn run_grid(
    cfg: &ExperimentConfig,
    points: Vec<(LossConfig, FusionWeights)>,
) -> Result<Vec<SweepRun>> {
    let jobs: Vec<(LossConfig, FusionWeights, u64)> = points
        .into_iter()
        .flat_map(|(l, f)| (0..cfg.sweep_seeds as u64).map(move |k| (l, f, k)))
        .collect();
    // Collected in job order, so the result does not depend on scheduling.
    jobs.into_par_iter()
        .map(|(loss, fusion, k)| {
            let seeds = cfg.seeds.replicate(k);
            let run = run_training(cfg, &loss, fusion, seeds)?;
            Ok(SweepRun {
                loss: loss.kind,
                tau: loss.effective_tau(),
                fusion,
                replicate: k,
                seeds,
                ci: run.test_ci,
                auc: run.test_auc,
                oracle_ci: run.oracle_test_ci,
            })
        })
        .collect()
}

/// WCI at every configured temperature, `sweep_seeds` replicates each.
pub fn sweep_tau(cfg: &ExperimentConfig) -> Result<Vec<SweepRun>> {
    let points = cfg
        .taus
        .iter()
        .map(|&tau| {
            let loss = LossConfig { tau, ..cfg.loss };
            (
                LossConfig {
                    kind: LossKind::Wci,
                    ..loss
                },
                cfg.fusion,
            )
        })
        .collect();
    run_grid(cfg, points)
}

/// Every configured loss at every fusion grid point.
pub fn sweep_fusion(cfg: &ExperimentConfig) -> Result<Vec<SweepRun>> {
    let mut points = Vec::new();
    for &kind in &cfg.sweep_losses {
        for &w in &cfg.fusion_grid {
            points.push((LossConfig { kind, ..cfg.loss }, w));
        }
    }
    run_grid(cfg, points)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median CI and AUC over replicates, one row per grid point in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub loss: LossKind,
    pub tau: f64,
    pub fusion: FusionWeights,
    pub runs: usize,
    pub median_ci: f64,
    pub median_auc: Option<f64>,
}

pub fn summarize(runs: &[SweepRun]) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    let mut start = 0;
    while start < runs.len() {
        let head = &runs[start];
        let end = start
            + runs[start..]
                .iter()
                .take_while(|r| r.loss == head.loss && r.tau == head.tau && r.fusion == head.fusion)
                .count();
        let group = &runs[start..end];
        let cis: Vec<f64> = group.iter().map(|r| r.ci).collect();
        let aucs: Vec<f64> = group.iter().filter_map(|r| r.auc).collect();
        out.push(SweepSummary {
            loss: head.loss,
            tau: head.tau,
            fusion: head.fusion,
            runs: group.len(),
            median_ci: median(&cis),
            median_auc: (aucs.len() == group.len()).then(|| median(&aucs)),
        });
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub policy: SamplerKind,
    pub loss: LossKind,
    pub seed: u64,
    pub batches: usize,
    pub mean: f64,
    pub std: f64,
    pub cv: Option<f64>,
}

/// Per-batch WCI and BCI losses on one dataset with fixed U(0,1) risks.
///
/// Both losses see exactly the same batches. Batches with no comparable
/// pair are skipped; sampling continues over epochs until `batches` losses
/// are collected.
pub fn fixed_risk_losses(
    dataset: &Dataset,
    risks: &[f64],
    policy: &SamplerPolicy,
    batch_size: usize,
    batches: usize,
    tau: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    policy.validate(batch_size)?;
    let mut sampler = crate::trainer::Sampler::new(policy.clone());
    let (mut wci, mut bci) = (Vec::with_capacity(batches), Vec::with_capacity(batches));
    let mut idle_epochs = 0;
    while wci.len() < batches {
        let before = wci.len();
        for idx in sampler.epoch_batches(dataset, batch_size) {
            if wci.len() == batches {
                break;
            }
            let b = dataset.batch(&idx);
            let r: Vec<f64> = idx.iter().map(|&i| risks[i]).collect();
            match (wci_loss(&b, &r, &WciConfig { tau }), bci_loss(&b, &r)) {
                (Ok(w), Ok(c)) => {
                    wci.push(w.value);
                    bci.push(c.value);
                }
                (Err(e), _) | (_, Err(e)) if e.is_empty_batch() => {}
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        if wci.len() == before {
            idle_epochs += 1;
            if idle_epochs > 3 {
                return Err(Error::DegenerateSampler { epoch: idle_epochs });
            }
        }
    }
    Ok((wci, bci))
}

/// Stability rows for the Skewed policy and a Uniform control, for every
/// stability seed, in (policy, seed, loss) order.
pub fn stability(cfg: &ExperimentConfig) -> Result<Vec<StabilityRow>> {
    use super::config::StabilityMode;
    let seeds: Vec<u64> = (0..cfg.stability.seeds as u64).collect();
    let policies = [SamplerKind::Skewed, SamplerKind::Uniform];
    let jobs: Vec<(SamplerKind, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&k| (p, k)))
        .collect();
    let per_job: Vec<Vec<StabilityRow>> = jobs
        .into_par_iter()
        .map(|(kind, k)| {
            let seeds = cfg.seeds.replicate(k);
            let policy = SamplerPolicy {
                kind,
                skew_events_per_batch: cfg.skew_range,
                seed: seeds.sampler,
            };
            let (wci, bci) = match cfg.stability.mode {
                StabilityMode::Fixed => {
                    let data = load_dataset(cfg, seeds)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds.model);
                    let risks: Vec<f64> = (0..data.len()).map(|_| rng.random::<f64>()).collect();
                    fixed_risk_losses(
                        &data,
                        &risks,
                        &policy,
                        cfg.optim.batch_size,
                        cfg.stability.batches,
                        cfg.stability.tau,
                    )?
                }
                StabilityMode::Train => {
                    let cfg_p = ExperimentConfig {
                        sampler_kind: kind,
                        ..cfg.clone()
                    };
                    let wci_loss_cfg = LossConfig::wci(cfg.stability.tau);
                    let bci_loss_cfg = LossConfig::new(LossKind::Bci);
                    let w = run_training(&cfg_p, &wci_loss_cfg, cfg.fusion, seeds)?;
                    let b = run_training(&cfg_p, &bci_loss_cfg, cfg.fusion, seeds)?;
                    (w.report.batch_losses, b.report.batch_losses)
                }
            };
            let mut rows = Vec::with_capacity(2);
            for (loss, series) in [(LossKind::Wci, wci), (LossKind::Bci, bci)] {
                let s = batch_stability(&series)?;
                rows.push(StabilityRow {
                    policy: kind,
                    loss,
                    seed: k,
                    batches: series.len(),
                    mean: s.mean,
                    std: s.std,
                    cv: s.cv,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_job.into_iter().flatten().collect())
}
