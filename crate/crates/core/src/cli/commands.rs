//! Subcommands: each one computes, then writes its files atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::experiments::{
    load_dataset, run_training, score, stability, summarize, sweep_fusion, sweep_tau, synth_config,
    SweepRun,
};
use crate::error::{Error, Result};
use crate::metrics::{mcnemar_ci_with, McNemarMethod};
use crate::model::RiskModel;
use crate::survdata::{oracle_risks, read_csv, write_csv_to, Dataset};
use crate::trainer::split;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Comment placed at the top of every CSV.
pub fn header_comment(cfg: &ExperimentConfig) -> String {
    format!("survrank {VERSION} config={}", cfg.hash())
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_start(cfg: &ExperimentConfig, header: &str) -> String {
    format!("# {}\n{header}\n", header_comment(cfg))
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let dataset = load_dataset(cfg, cfg.seeds)?;
    let mut csv = Vec::new();
    write_csv_to(&dataset, &mut csv, Some(&header_comment(cfg)))?;
    let (dim_a, dim_b) = dataset.feature_dims();
    let manifest = format!(
        "# {}\ntoolkit=survrank {VERSION}\nconfig_hash={}\nrecords={}\nevents={}\ncensoring_fraction={}\ndim_a={dim_a}\ndim_b={dim_b}\nseed_data={}\n",
        header_comment(cfg),
        cfg.hash(),
        dataset.len(),
        dataset.n_events(),
        dataset.censoring_fraction(),
        cfg.seeds.data,
    );
    let paths = [out.join("dataset.csv"), out.join("manifest.txt")];
    write_atomic(&paths[0], &csv)?;
    write_atomic(&paths[1], manifest.as_bytes())?;
    Ok(paths.to_vec())
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let run = run_training(cfg, &cfg.loss, cfg.fusion, cfg.seeds)?;
    let mut report = Vec::new();
    run.report
        .write_csv(&mut report, Some(&header_comment(cfg)))?;

    let mut losses = csv_start(cfg, "step,loss");
    for (i, l) in run.report.batch_losses.iter().enumerate() {
        writeln!(losses, "{i},{l}").unwrap();
    }

    let mut metrics = csv_start(cfg, "split,n,ci,auc,horizon,oracle_ci");
    writeln!(
        metrics,
        "test,{},{},{},{},{}",
        run.test.len(),
        run.test_ci,
        opt(run.test_auc),
        cfg.horizon,
        opt(run.oracle_test_ci)
    )
    .unwrap();

    let mut model_bytes = Vec::new();
    run.model.write_checkpoint(&mut model_bytes)?;

    let mut paths = vec![
        out.join("train_report.csv"),
        out.join("batch_losses.csv"),
        out.join("test_metrics.csv"),
        out.join("model.ckpt"),
    ];
    write_atomic(&paths[0], &report)?;
    write_atomic(&paths[1], losses.as_bytes())?;
    write_atomic(&paths[2], metrics.as_bytes())?;
    write_atomic(&paths[3], &model_bytes)?;
    if let Some(best) = &run.report.best_params {
        let mut m = run.model.clone();
        m.set_params(best)?;
        let mut bytes = Vec::new();
        m.write_checkpoint(&mut bytes)?;
        let p = out.join("best.ckpt");
        write_atomic(&p, &bytes)?;
        paths.push(p);
    }
    Ok(paths)
}

/// The dataset to evaluate on: an explicit CSV, or the test split of the
/// configured data.
fn eval_dataset(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(p) => read_csv(p),
        None => {
            let all = load_dataset(cfg, cfg.seeds)?;
            Ok(split(&all, cfg.split_fractions, cfg.seeds.data)?.2)
        }
    }
}

pub struct EvalArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub data: Option<&'a Path>,
    pub horizon: Option<f64>,
    /// Score with the generating risks instead of a model.
    pub oracle: bool,
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let horizon = args.horizon.unwrap_or(cfg.horizon);
    if !(horizon > 0.0) {
        return Err(Error::config("horizon must be positive"));
    }
    let dataset = eval_dataset(cfg, args.data)?;
    let (scorer, risks) = if args.oracle {
        let s = synth_config(cfg, cfg.seeds)
            .ok_or_else(|| Error::config("--oracle needs a synthetic data source"))?;
        ("oracle".to_string(), oracle_risks(&s, &dataset)?)
    } else {
        let path = args
            .checkpoint
            .ok_or_else(|| Error::config("eval needs --checkpoint or --oracle"))?;
        let model = RiskModel::load_for(path, dataset.feature_dims())?;
        (path.display().to_string(), model.predict_risks(&dataset)?)
    };
    let (ci, auc) = score(&dataset, &risks, horizon)?;
    let mut text = csv_start(cfg, "scorer,dataset,n,events,ci,auc,horizon");
    writeln!(
        text,
        "{},{},{},{},{ci},{},{horizon}",
        csv_field(&scorer),
        csv_field(&dataset.name),
        dataset.len(),
        dataset.n_events(),
        opt(auc)
    )
    .unwrap();
    let p = out.join("metrics.csv");
    write_atomic(&p, text.as_bytes())?;
    Ok(vec![p])
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn runs_csv(cfg: &ExperimentConfig, runs: &[SweepRun]) -> String {
    let mut text = csv_start(
        cfg,
        "loss,tau,w_nv,w_v,replicate,seed_data,seed_model,seed_sampler,ci,auc,oracle_ci",
    );
    for r in runs {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.loss,
            r.tau,
            r.fusion.w_nv,
            r.fusion.w_v,
            r.replicate,
            r.seeds.data,
            r.seeds.model,
            r.seeds.sampler,
            r.ci,
            opt(r.auc),
            opt(r.oracle_ci)
        )
        .unwrap();
    }
    text
}

pub fn cmd_sweep_tau(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let runs = sweep_tau(cfg)?;
    let mut text = csv_start(cfg, "tau,runs,ci,auc");
    for s in summarize(&runs) {
        writeln!(
            text,
            "{},{},{},{}",
            s.tau,
            s.runs,
            s.median_ci,
            opt(s.median_auc)
        )
        .unwrap();
    }
    let paths = [out.join("sweep_tau.csv"), out.join("sweep_tau_runs.csv")];
    write_atomic(&paths[0], text.as_bytes())?;
    write_atomic(&paths[1], runs_csv(cfg, &runs).as_bytes())?;
    Ok(paths.to_vec())
}

pub fn cmd_sweep_fusion(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let runs = sweep_fusion(cfg)?;
    let mut text = csv_start(cfg, "loss,w_nv,w_v,runs,ci,auc");
    for s in summarize(&runs) {
        writeln!(
            text,
            "{},{},{},{},{},{}",
            s.loss,
            s.fusion.w_nv,
            s.fusion.w_v,
            s.runs,
            s.median_ci,
            opt(s.median_auc)
        )
        .unwrap();
    }
    let paths = [
        out.join("sweep_fusion.csv"),
        out.join("sweep_fusion_runs.csv"),
    ];
    write_atomic(&paths[0], text.as_bytes())?;
    write_atomic(&paths[1], runs_csv(cfg, &runs).as_bytes())?;
    Ok(paths.to_vec())
}

pub fn cmd_stability(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let rows = stability(cfg)?;
    let mut text = csv_start(cfg, "policy,loss,seed,batches,mean,std,cv");
    for r in &rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            r.policy,
            r.loss,
            r.seed,
            r.batches,
            r.mean,
            r.std,
            opt(r.cv)
        )
        .unwrap();
    }
    let p = out.join("stability.csv");
    write_atomic(&p, text.as_bytes())?;
    Ok(vec![p])
}

pub struct CompareArgs<'a> {
    pub checkpoint_a: &'a Path,
    pub checkpoint_b: &'a Path,
    pub data: Option<&'a Path>,
    pub method: McNemarMethod,
}

pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path, args: &CompareArgs) -> Result<Vec<PathBuf>> {
    let dataset = eval_dataset(cfg, args.data)?;
    let dims = dataset.feature_dims();
    let a = RiskModel::load_for(args.checkpoint_a, dims)?;
    let b = RiskModel::load_for(args.checkpoint_b, dims)?;
    let (ra, rb) = (a.predict_risks(&dataset)?, b.predict_risks(&dataset)?);
    let res = mcnemar_ci_with(&dataset.as_batch(), &ra, &rb, args.method)?;
    let (ci_a, _) = score(&dataset, &ra, cfg.horizon)?;
    let (ci_b, _) = score(&dataset, &rb, cfg.horizon)?;
    let mut text = csv_start(cfg, "dataset,trials,ci_a,ci_b,b,c,statistic,p_value,method");
    writeln!(
        text,
        "{},{},{ci_a},{ci_b},{},{},{},{},{:?}",
        csv_field(&dataset.name),
        res.trials,
        res.b,
        res.c,
        res.statistic,
        res.p_value,
        args.method
    )
    .unwrap();
    let p = out.join("compare.csv");
    write_atomic(&p, text.as_bytes())?;
    Ok(vec![p])
}
