//! Evaluation beyond the concordance index.

use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::pairing::{build_pairs, PairMode};
use crate::survdata::{Batch, Dataset};

/// Cumulative/dynamic AUC at `horizon`.
///
/// Cases are events at or before the horizon, controls are everyone still
/// under observation after it. Samples censored at or before the horizon are
/// ignored. Ties in risk count one half.
pub fn time_dependent_auc(dataset: &Dataset, risks: &[f64], horizon: f64) -> Result<f64> {
    time_dependent_auc_batch(&dataset.as_batch(), risks, horizon)
}

pub fn time_dependent_auc_batch(batch: &Batch, risks: &[f64], horizon: f64) -> Result<f64> {
    if risks.len() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: risks.len(),
        });
    }
    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for ((&t, &e), &r) in batch.times.iter().zip(&batch.events).zip(risks) {
        if t > horizon {
            controls.push(r);
        } else if e {
            cases.push(r);
        }
    }
    if cases.is_empty() {
        return Err(Error::UndefinedAuc("no cases before the horizon"));
    }
    if controls.is_empty() {
        return Err(Error::UndefinedAuc("no controls beyond the horizon"));
    }
    Ok(pairwise_auc(&cases, &controls))
}

/// ROC-AUC of binary labels.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let pos: Vec<f64> = labels
        .iter()
        .zip(scores)
        .filter(|p| *p.0)
        .map(|p| *p.1)
        .collect();
    let neg: Vec<f64> = labels
        .iter()
        .zip(scores)
        .filter(|p| !*p.0)
        .map(|p| *p.1)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedAuc("need both classes"));
    }
    Ok(pairwise_auc(&pos, &neg))
}

/// Mann-Whitney estimate of `P(case > control)` by sorting the controls.
fn pairwise_auc(cases: &[f64], controls: &[f64]) -> f64 {
    let mut sorted = controls.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut score = 0.0;
    for &c in cases {
        let below = sorted.partition_point(|&x| x < c);
        let not_above = sorted.partition_point(|&x| x <= c);
        score += below as f64 + 0.5 * (not_above - below) as f64;
    }
    score / (cases.len() as f64 * controls.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum McNemarMethod {
    /// Chi-squared with continuity correction.
    #[default]
    Corrected,
    /// Two-sided exact binomial test on the discordant counts.
    Exact,
    /// `Exact` when `b + c < 25`, `Corrected` otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McNemarResult {
    /// Pairs ordered correctly by model 1 only.
    pub b: u64,
    /// Pairs ordered correctly by model 2 only.
    pub c: u64,
    /// `(|b - c| - 1)^2 / (b + c)`, zero when `b + c = 0`.
    pub statistic: f64,
    pub p_value: f64,
    /// Comparable pairs examined.
    pub trials: u64,
}

pub fn mcnemar_statistic(b: u64, c: u64) -> f64 {
    if b + c == 0 {
        return 0.0;
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    diff * diff / (b + c) as f64
}

/// Upper tail of chi-squared with one degree of freedom.
pub fn chi2_1_sf(statistic: f64) -> f64 {
    erfc((statistic / 2.0).sqrt())
}

fn exact_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let binom = Binomial::new(0.5, n).expect("p = 0.5 is valid");
    (2.0 * binom.cdf(b.min(c))).min(1.0)
}

/// McNemar test on the comparable pairs of `dataset`: each pair is a trial,
/// and a model is correct on it when it ranks the earlier event strictly
/// higher.
pub fn mcnemar_ci(dataset: &Dataset, risks_1: &[f64], risks_2: &[f64]) -> Result<McNemarResult> {
    mcnemar_ci_with(
        &dataset.as_batch(),
        risks_1,
        risks_2,
        McNemarMethod::Corrected,
    )
}

pub fn mcnemar_ci_with(
    batch: &Batch,
    risks_1: &[f64],
    risks_2: &[f64],
    method: McNemarMethod,
) -> Result<McNemarResult> {
    for r in [risks_1, risks_2] {
        if r.len() != batch.len() {
            return Err(Error::LengthMismatch {
                expected: batch.len(),
                got: r.len(),
            });
        }
    }
    let index = build_pairs(batch, PairMode::Metric);
    let trials = index.total_pairs() as u64;
    if trials == 0 {
        return Err(Error::NoComparablePairs);
    }
    let (mut b, mut c) = (0u64, 0u64);
    for (i, partners) in index.iter() {
        for &j in partners {
            match (risks_1[i] > risks_1[j], risks_2[i] > risks_2[j]) {
                (true, false) => b += 1,
                (false, true) => c += 1,
                _ => {}
            }
        }
    }
    Ok(mcnemar_from_counts(b, c, trials, method))
}

pub fn mcnemar_from_counts(b: u64, c: u64, trials: u64, method: McNemarMethod) -> McNemarResult {
    let statistic = mcnemar_statistic(b, c);
    let exact = match method {
        McNemarMethod::Corrected => false,
        McNemarMethod::Exact => true,
        McNemarMethod::Auto => b + c < 25,
    };
    let p = if exact {
        exact_p(b, c)
    } else {
        chi2_1_sf(statistic)
    };
    McNemarResult {
        b,
        c,
        statistic,
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        trials,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub per_batch_losses: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// `std / mean`, only for a positive mean.
    pub cv: Option<f64>,
}

pub fn batch_stability(per_batch_losses: &[f64]) -> Result<StabilityReport> {
    let n = per_batch_losses.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: n });
    }
    let mean = per_batch_losses.iter().sum::<f64>() / n as f64;
    let ss: f64 = per_batch_losses.iter().map(|x| (x - mean).powi(2)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    Ok(StabilityReport {
        per_batch_losses: per_batch_losses.to_vec(),
        mean,
        std,
        cv: (mean > 0.0).then(|| std / mean),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_small_example() {
        let b = Batch::from_pairs(&[(12.0, true), (40.0, false), (50.0, true)]);
        assert_eq!(
            time_dependent_auc_batch(&b, &[0.9, 0.2, 0.4], 36.0).unwrap(),
            1.0
        );
        assert_eq!(
            time_dependent_auc_batch(&b, &[0.3, 0.3, 0.3], 36.0).unwrap(),
            0.5
        );
        assert_eq!(
            time_dependent_auc_batch(&b, &[0.3, 0.2, 0.4], 36.0).unwrap(),
            0.5
        );
    }

    #[test]
    fn auc_ignores_early_censoring() {
        let b = Batch::from_pairs(&[(12.0, true), (20.0, false), (50.0, false)]);
        // the early-censored sample has the top score but is not a control
        assert_eq!(
            time_dependent_auc_batch(&b, &[0.5, 0.9, 0.1], 36.0).unwrap(),
            1.0
        );
    }

    #[test]
    fn auc_undefined_cases() {
        let no_cases = Batch::from_pairs(&[(12.0, false), (50.0, true)]);
        assert!(matches!(
            time_dependent_auc_batch(&no_cases, &[0.0, 1.0], 36.0),
            Err(Error::UndefinedAuc(_))
        ));
        let no_controls = Batch::from_pairs(&[(12.0, true), (20.0, true)]);
        assert!(matches!(
            time_dependent_auc_batch(&no_controls, &[0.0, 1.0], 36.0),
            Err(Error::UndefinedAuc(_))
        ));
    }

    #[test]
    fn mcnemar_known_counts() {
        let r = mcnemar_from_counts(10, 2, 100, McNemarMethod::Corrected);
        assert!((r.statistic - 49.0 / 12.0).abs() < 1e-12);
        assert!((r.p_value - 0.0433).abs() < 5e-5);
        let swapped = mcnemar_from_counts(2, 10, 100, McNemarMethod::Corrected);
        assert_eq!(swapped.statistic, r.statistic);
        assert_eq!(swapped.p_value, r.p_value);
    }

    #[test]
    fn mcnemar_self_comparison() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, true), (3.0, false), (4.0, true)]);
        let r = [0.2, 0.9, 0.1, 0.4];
        let res = mcnemar_ci_with(&b, &r, &r, McNemarMethod::Corrected).unwrap();
        assert_eq!((res.b, res.c, res.statistic, res.p_value), (0, 0, 0.0, 1.0));
        assert_eq!(res.trials, 5);
        let res = mcnemar_ci_with(&b, &r, &r, McNemarMethod::Exact).unwrap();
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn mcnemar_counts_disagreements() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, true), (3.0, false)]);
        // pairs (0,1) (0,2) (1,2)
        let r1 = [0.9, 0.5, 0.7]; // correct: (0,1) (0,2)
        let r2 = [0.1, 0.5, 0.2]; // correct: (1,2)
        let res = mcnemar_ci_with(&b, &r1, &r2, McNemarMethod::Corrected).unwrap();
        assert_eq!((res.b, res.c), (2, 1));
        let none = Batch::from_pairs(&[(1.0, false), (2.0, false)]);
        assert!(mcnemar_ci_with(&none, &[0.0; 2], &[0.0; 2], McNemarMethod::Corrected).is_err());
    }

    #[test]
    fn exact_binomial_p() {
        // b = 10, c = 2: 2 * P(X <= 2), X ~ Bin(12, 1/2) = 2 * 79 / 4096
        let r = mcnemar_from_counts(10, 2, 12, McNemarMethod::Exact);
        assert!((r.p_value - 2.0 * 79.0 / 4096.0).abs() < 1e-12);
        let auto = mcnemar_from_counts(10, 2, 12, McNemarMethod::Auto);
        assert_eq!(auto.p_value, r.p_value);
        let auto_large = mcnemar_from_counts(20, 10, 30, McNemarMethod::Auto);
        assert_eq!(auto_large.p_value, chi2_1_sf(mcnemar_statistic(20, 10)));
    }

    #[test]
    fn mcnemar_p_monotone_in_imbalance() {
        for n in [10u64, 25, 101] {
            let mut prev = 1.0;
            for b in (n / 2..=n).rev().collect::<Vec<_>>().into_iter().rev() {
                let p = mcnemar_from_counts(b, n - b, n, McNemarMethod::Corrected).p_value;
                assert!(p <= prev + 1e-15, "n {n} b {b}");
                prev = p;
            }
        }
    }

    #[test]
    fn stability_values() {
        let r = batch_stability(&[1.0, 3.0]).unwrap();
        assert_eq!(r.mean, 2.0);
        assert!((r.std - 2f64.sqrt()).abs() < 1e-15);
        assert!((r.cv.unwrap() - 2f64.sqrt() / 2.0).abs() < 1e-15);

        let c = batch_stability(&[0.7; 5]).unwrap();
        assert_eq!(c.std, 0.0);

        let xs = [0.3, 1.2, 0.8, 2.5];
        let k = 3.5;
        let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
        let (a, s) = (
            batch_stability(&xs).unwrap(),
            batch_stability(&scaled).unwrap(),
        );
        assert!((s.std - k * a.std).abs() < 1e-12);
        assert!((s.cv.unwrap() - a.cv.unwrap()).abs() < 1e-12);

        assert!(batch_stability(&[-1.0, 1.0]).unwrap().cv.is_none());
        assert!(matches!(
            batch_stability(&[1.0]),
            Err(Error::SeriesTooShort { .. })
        ));
    }
}
