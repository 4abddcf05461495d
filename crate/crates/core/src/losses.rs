//! Survival losses over a batch of risk scores, each returning its value and
//! the exact gradient with respect to the scores.
//!
//! The pairwise losses (WCI, BCI) and Cox only look at comparisons inside the
//! batch they are given. CE and CCE ignore pairs and label samples against a
//! fixed horizon (`cut`, in months).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pairing::{build_pairs, PairMode};
use crate::survdata::Batch;

/// Exponents of the pairwise surrogates are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ce,
    Cce,
    Cox,
    Bci,
    Wci,
    /// WCI with the temperature fixed at 1.
    WciNoTau,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Ce,
        LossKind::Cce,
        LossKind::Cox,
        LossKind::Bci,
        LossKind::Wci,
        LossKind::WciNoTau,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Cce => "cce",
            LossKind::Cox => "cox",
            LossKind::Bci => "bci",
            LossKind::Wci => "wci",
            LossKind::WciNoTau => "wci_no_tau",
        }
    }

    /// Scores consumed per sample: two logits for CCE, one risk otherwise.
    pub fn input_width(self) -> usize {
        match self {
            LossKind::Cce => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown loss '{s}' (expected ce, cce, cox, bci, wci, wci_no_tau)"
                ))
            })
    }
}

/// Per-pair surrogate used by BCI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BciSurrogate {
    /// `exp(-(R_i - R_j))`, the WCI term at temperature 1.
    #[default]
    Exponential,
    /// `log(1 + exp(-(R_i - R_j)))`.
    LogSigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WciConfig {
    pub tau: f64,
}

impl Default for WciConfig {
    fn default() -> Self {
        WciConfig { tau: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CceConfig {
    pub cut: f64,
}

impl Default for CceConfig {
    fn default() -> Self {
        CceConfig { cut: 36.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Temperature for `Wci`; ignored by the other losses.
    pub tau: f64,
    /// Horizon in months for `Ce` and `Cce`.
    pub cut: f64,
    pub bci_surrogate: BciSurrogate,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            tau: WciConfig::default().tau,
            cut: CceConfig::default().cut,
            bci_surrogate: BciSurrogate::default(),
        }
    }

    pub fn wci(tau: f64) -> Self {
        LossConfig {
            tau,
            ..LossConfig::new(LossKind::Wci)
        }
    }

    pub fn effective_tau(&self) -> f64 {
        match self.kind {
            LossKind::WciNoTau => 1.0,
            _ => self.tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::Wci && !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if matches!(self.kind, LossKind::Ce | LossKind::Cce)
            && !(self.cut > 0.0 && self.cut.is_finite())
        {
            return Err(Error::config(format!(
                "cut must be positive, got {}",
                self.cut
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossDiagnostics {
    pub pairs_used: usize,
    pub events_used: usize,
    /// Events with no partner in the batch (pairwise losses).
    pub events_dropped: usize,
    pub samples_used: usize,
    /// Samples without a label under the horizon rule (CE/CCE).
    pub samples_excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// d(value)/d(input), laid out like the input: one entry per sample, or
    /// two per sample for CCE.
    pub grad: Vec<f64>,
    pub diagnostics: LossDiagnostics,
}

/// Evaluates the configured loss. `inputs` holds one risk per sample, or two
/// interleaved logits per sample for CCE.
pub fn evaluate(cfg: &LossConfig, batch: &Batch, inputs: &[f64]) -> Result<LossOutput> {
    cfg.validate()?;
    let width = cfg.kind.input_width();
    if inputs.len() != width * batch.len() {
        return Err(Error::LengthMismatch {
            expected: width * batch.len(),
            got: inputs.len(),
        });
    }
    match cfg.kind {
        LossKind::Wci | LossKind::WciNoTau => wci_loss(
            batch,
            inputs,
            &WciConfig {
                tau: cfg.effective_tau(),
            },
        ),
        LossKind::Bci => bci_loss_with(batch, inputs, cfg.bci_surrogate),
        LossKind::Cox => cox_loss(batch, inputs),
        LossKind::Ce => ce_loss(batch, inputs, cfg.cut),
        LossKind::Cce => {
            let logits: Vec<[f64; 2]> = inputs.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            cce_loss(batch, &logits, &CceConfig { cut: cfg.cut })
        }
    }
}

fn check_len(batch: &Batch, scores: usize) -> Result<()> {
    if scores != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: scores,
        });
    }
    Ok(())
}

/// `exp(z)` and its derivative, with `z` clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
fn clamped_exp(z: f64) -> (f64, f64) {
    if z > EXP_CLAMP {
        (EXP_CLAMP.exp(), 0.0)
    } else if z < -EXP_CLAMP {
        ((-EXP_CLAMP).exp(), 0.0)
    } else {
        let e = z.exp();
        (e, e)
    }
}

/// `log(1 + exp(z))` and its derivative `sigmoid(z)`.
fn softplus(z: f64) -> (f64, f64) {
    let value = z.max(0.0) + (-z.abs()).exp().ln_1p();
    (value, sigmoid(z))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weighted concordance loss:
///
/// `L = 1/N_ev * sum_i [ 1/n_i * sum_{j: T_j >= T_i} exp(-(R_i - R_j) / tau) ]`
///
/// Each event `i` first averages over its own `n_i` partners, then the events
/// are averaged with equal weight. Events without partners are left out of
/// `N_ev` and reported in `diagnostics.events_dropped`.
pub fn wci_loss(batch: &Batch, risks: &[f64], cfg: &WciConfig) -> Result<LossOutput> {
    check_len(batch, risks.len())?;
    if !(cfg.tau > 0.0 && cfg.tau.is_finite()) {
        return Err(Error::config(format!(
            "tau must be positive, got {}",
            cfg.tau
        )));
    }
    let index = build_pairs(batch, PairMode::Loss);
    if index.n_events() == 0 {
        return Err(Error::NoComparablePairs);
    }
    let tau = cfg.tau;
    let n_events = index.n_events() as f64;
    let mut grad = vec![0.0; risks.len()];
    let mut total = 0.0;
    for (i, partners) in index.iter() {
        let n_i = partners.len() as f64;
        let weight = 1.0 / (n_events * n_i);
        let mut inner = 0.0;
        for &j in partners {
            let (e, de) = clamped_exp(-(risks[i] - risks[j]) / tau);
            inner += e;
            let g = weight * de / tau;
            grad[i] -= g;
            grad[j] += g;
        }
        total += inner / n_i;
    }
    Ok(LossOutput {
        value: total / n_events,
        grad,
        diagnostics: LossDiagnostics {
            pairs_used: index.total_pairs(),
            events_used: index.n_events(),
            events_dropped: index.dropped_events,
            samples_used: batch.len(),
            samples_excluded: 0,
        },
    })
}

pub fn bci_loss(batch: &Batch, risks: &[f64]) -> Result<LossOutput> {
    bci_loss_with(batch, risks, BciSurrogate::Exponential)
}

/// Balanced concordance loss: one global mean of the per-pair surrogate over
/// every comparable pair in the batch, so events with many partners weigh
/// more.
pub fn bci_loss_with(batch: &Batch, risks: &[f64], surrogate: BciSurrogate) -> Result<LossOutput> {
    check_len(batch, risks.len())?;
    let index = build_pairs(batch, PairMode::Loss);
    let n_pairs = index.total_pairs();
    if n_pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    let inv = 1.0 / n_pairs as f64;
    let mut grad = vec![0.0; risks.len()];
    let mut total = 0.0;
    for (i, partners) in index.iter() {
        for &j in partners {
            let z = -(risks[i] - risks[j]);
            let (v, dv) = match surrogate {
                BciSurrogate::Exponential => clamped_exp(z),
                BciSurrogate::LogSigmoid => softplus(z),
            };
            total += v;
            grad[i] -= inv * dv;
            grad[j] += inv * dv;
        }
    }
    Ok(LossOutput {
        value: total / n_pairs as f64,
        grad,
        diagnostics: LossDiagnostics {
            pairs_used: n_pairs,
            events_used: index.n_events(),
            events_dropped: index.dropped_events,
            samples_used: batch.len(),
            samples_excluded: 0,
        },
    })
}

/// Running log-sum-exp that never forms an overflowing exponential.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// Groups of indices sharing the same time, in ascending time order.
fn tie_groups(times: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for k in order {
        match groups.last_mut() {
            Some(g) if times[g[0]] == times[k] => g.push(k),
            _ => groups.push(vec![k]),
        }
    }
    groups
}

/// Negative mean Cox partial log-likelihood with Breslow ties:
///
/// `L = -1/N_ev * sum_i [ R_i - log sum_{j: T_j >= T_i} exp(R_j) ]`
///
/// The risk set of `i` contains `i` and every tied sample.
pub fn cox_loss(batch: &Batch, risks: &[f64]) -> Result<LossOutput> {
    check_len(batch, risks.len())?;
    let n_events = batch.n_events();
    if n_events == 0 {
        return Err(Error::NoEvents);
    }
    let groups = tie_groups(&batch.times);

    // log of each group's risk-set sum, walking from the latest time down
    let mut risk_set_lse = vec![0.0; groups.len()];
    let mut acc = LogSumExp::new();
    for (g, members) in groups.iter().enumerate().rev() {
        for &k in members {
            acc.push(risks[k]);
        }
        risk_set_lse[g] = acc.value();
    }

    let inv = 1.0 / n_events as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; risks.len()];
    // sum over events i with T_i <= T_k of exp(-lse_i), kept in log space
    let mut inv_acc = LogSumExp::new();
    for (g, members) in groups.iter().enumerate() {
        let lse = risk_set_lse[g];
        for &k in members {
            if batch.events[k] {
                total += risks[k] - lse;
                inv_acc.push(-lse);
                grad[k] -= inv;
            }
        }
        if inv_acc.sum > 0.0 {
            let log_c = inv_acc.value();
            for &k in members {
                grad[k] += inv * (risks[k] + log_c).exp();
            }
        }
    }
    Ok(LossOutput {
        value: -total * inv,
        grad,
        diagnostics: LossDiagnostics {
            pairs_used: 0,
            events_used: n_events,
            events_dropped: 0,
            samples_used: batch.len(),
            samples_excluded: 0,
        },
    })
}

/// Binary cross-entropy of `sigmoid(R)`: events are positives, samples
/// censored after `cut` are negatives, samples censored at or before `cut`
/// carry no label and are skipped.
pub fn ce_loss(batch: &Batch, risks: &[f64], cut: f64) -> Result<LossOutput> {
    check_len(batch, risks.len())?;
    let mut used = 0usize;
    let mut total = 0.0;
    let mut grad = vec![0.0; risks.len()];
    for k in 0..batch.len() {
        let label = if batch.events[k] {
            1.0
        } else if batch.times[k] > cut {
            0.0
        } else {
            continue;
        };
        let (sp, sig) = softplus(risks[k]);
        total += sp - label * risks[k];
        grad[k] = sig - label;
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoLabelableSamples);
    }
    let inv = 1.0 / used as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(LossOutput {
        value: total * inv,
        grad,
        diagnostics: LossDiagnostics {
            pairs_used: 0,
            events_used: batch.n_events(),
            events_dropped: 0,
            samples_used: used,
            samples_excluded: batch.len() - used,
        },
    })
}

/// Two-bin discrete-time likelihood with bins `(0, cut]` and `(cut, inf)`.
///
/// Events at or before `cut` score `-log p_1`; anyone observed past `cut`
/// scores `-log p_2`; samples censored at or before `cut` have likelihood
/// `p_1 + p_2 = 1` and are skipped.
pub fn cce_loss(batch: &Batch, logits: &[[f64; 2]], cfg: &CceConfig) -> Result<LossOutput> {
    check_len(batch, logits.len())?;
    let mut used = 0usize;
    let mut total = 0.0;
    let mut grad = vec![0.0; 2 * logits.len()];
    for (k, z) in logits.iter().enumerate() {
        let bin = if batch.times[k] > cfg.cut {
            1
        } else if batch.events[k] {
            0
        } else {
            continue;
        };
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        total += lse - z[bin];
        for c in 0..2 {
            let p = (z[c] - lse).exp();
            grad[2 * k + c] = p - if c == bin { 1.0 } else { 0.0 };
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoLabelableSamples);
    }
    let inv = 1.0 / used as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(LossOutput {
        value: total * inv,
        grad,
        diagnostics: LossDiagnostics {
            pairs_used: 0,
            events_used: batch.n_events(),
            events_dropped: 0,
            samples_used: used,
            samples_excluded: batch.len() - used,
        },
    })
}

/// Probability of the first bin, used as the CCE risk score.
pub fn cce_risk(logits: [f64; 2]) -> f64 {
    sigmoid(logits[0] - logits[1])
}

/// Largest relative error between the analytic gradient and a central finite
/// difference with step `h`.
///
/// Coordinates whose gradient is below `1e-6` of the largest analytic entry
/// are compared against that floor instead of their own magnitude.
pub fn loss_gradient_check(cfg: &LossConfig, batch: &Batch, inputs: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let analytic = evaluate(cfg, batch, inputs)?.grad;
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-6 * scale).max(f64::MIN_POSITIVE);

    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        probe[k] = inputs[k] + h;
        let up = evaluate(cfg, batch, &probe)?.value;
        probe[k] = inputs[k] - h;
        let down = evaluate(cfg, batch, &probe)?.value;
        probe[k] = inputs[k];

        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[k].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    /// Event A (t=1) pairs with B and C, event B (t=2) pairs with C only.
    /// At tau = 0.1 the terms of A average to 1 and B's single term is e^-1.
    fn dual_batch() -> (Batch, Vec<f64>) {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, true), (3.0, false)]);
        let e = std::f64::consts::E;
        let r_a = 0.1 * ((1.0 + e) / 2.0).ln();
        (b, vec![r_a, 0.1, 0.0])
    }

    #[test]
    fn wci_single_pair() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, false)]);
        let out = wci_loss(&b, &[0.5, 0.0], &WciConfig { tau: 0.1 }).unwrap();
        assert!((out.value - (-5.0f64).exp()).abs() < 1e-12);
        assert!((out.value - 6.7379e-3).abs() < 1e-7);
    }

    #[test]
    fn wci_equal_risks_is_one() {
        let b = Batch::from_pairs(&[
            (1.0, true),
            (2.0, true),
            (2.0, false),
            (5.0, false),
            (0.5, true),
        ]);
        for tau in [0.02, 0.1, 1.0, 10.0] {
            assert_eq!(
                wci_loss(&b, &[0.3; 5], &WciConfig { tau }).unwrap().value,
                1.0
            );
        }
    }

    #[test]
    fn wci_dual_average_vs_bci_global_average() {
        let (b, r) = dual_batch();
        let wci = wci_loss(&b, &r, &WciConfig { tau: 0.1 }).unwrap();
        let expected = (1.0 + (-1.0f64).exp()) / 2.0;
        assert!((wci.value - expected).abs() < 1e-12);
        assert!((wci.value - 0.68394).abs() < 1e-5);
        assert_eq!(wci.diagnostics.events_used, 2);
        assert_eq!(wci.diagnostics.pairs_used, 3);

        // BCI at tau = 1 on the scaled batch sees the same exponents
        let scaled: Vec<f64> = r.iter().map(|x| x / 0.1).collect();
        let bci = bci_loss(&b, &scaled).unwrap();
        let expected = (2.0 + (-1.0f64).exp()) / 3.0;
        assert!((bci.value - expected).abs() < 1e-12);
        assert!((bci.value - 0.78929).abs() < 1e-5);
    }

    #[test]
    fn wci_drops_events_without_partners() {
        // last event has the largest time and nobody to compare against
        let b = Batch::from_pairs(&[(1.0, true), (2.0, false), (9.0, true)]);
        let out = wci_loss(&b, &[0.0, 0.0, 0.0], &WciConfig { tau: 1.0 }).unwrap();
        assert_eq!(out.diagnostics.events_used, 1);
        assert_eq!(out.diagnostics.events_dropped, 1);
        let b = Batch::from_pairs(&[(1.0, false), (9.0, true)]);
        assert!(matches!(
            wci_loss(&b, &[0.0, 0.0], &WciConfig { tau: 1.0 }),
            Err(Error::NoComparablePairs)
        ));
        assert!(matches!(
            bci_loss(&b, &[0.0, 0.0]),
            Err(Error::NoComparablePairs)
        ));
    }

    #[test]
    fn wci_rejects_bad_tau() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, false)]);
        assert!(wci_loss(&b, &[0.0, 0.0], &WciConfig { tau: 0.0 }).is_err());
        assert!(evaluate(&LossConfig::wci(-1.0), &b, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn bci_equals_wci_at_unit_tau_with_equal_pair_counts() {
        // two tied events, each pairing with the other and with the censored sample
        let b2 = Batch::from_pairs(&[(1.0, true), (1.0, true), (5.0, false)]);
        let r2 = [0.3, -0.2, 0.9];
        let w = wci_loss(&b2, &r2, &WciConfig { tau: 1.0 }).unwrap();
        let c = bci_loss(&b2, &r2).unwrap();
        assert_eq!(w.diagnostics.pairs_used, 4);
        assert!((w.value - c.value).abs() < 1e-14);
        let b = Batch::from_pairs(&[(1.0, true), (1.5, true), (4.0, false), (5.0, false)]);
        let r = [0.3, -0.2, 0.9, 0.1];
        // unequal pair counts: the averages differ
        let w = wci_loss(&b, &r, &WciConfig { tau: 1.0 }).unwrap();
        let c = bci_loss(&b, &r).unwrap();
        assert!((w.value - c.value).abs() > 1e-6);
    }

    #[test]
    fn bci_single_pair_equal_risk() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, false)]);
        assert_eq!(bci_loss(&b, &[0.2, 0.2]).unwrap().value, 1.0);
        let ls = bci_loss_with(&b, &[0.2, 0.2], BciSurrogate::LogSigmoid).unwrap();
        assert!((ls.value - LN2).abs() < 1e-15);
    }

    #[test]
    fn cox_closed_forms() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, false)]);
        let out = cox_loss(&b, &[0.0, 0.0]).unwrap();
        assert!((out.value - LN2).abs() < 1e-12);
        assert!((out.grad[0] + 0.5).abs() < 1e-15);
        assert!((out.grad[1] - 0.5).abs() < 1e-15);

        let single = Batch::from_pairs(&[(3.0, true)]);
        let out = cox_loss(&single, &[1.7]).unwrap();
        assert_eq!(out.value, 0.0);

        let censored = Batch::from_pairs(&[(3.0, false)]);
        assert!(matches!(cox_loss(&censored, &[0.0]), Err(Error::NoEvents)));
    }

    #[test]
    fn cox_matches_direct_breslow_sum() {
        let b = Batch::from_pairs(&[
            (2.0, true),
            (1.0, true),
            (2.0, true),
            (3.0, false),
            (2.0, false),
            (0.5, false),
        ]);
        let r: [f64; 6] = [0.4, -1.2, 2.0, 0.3, -0.7, 5.0];
        let mut direct = 0.0;
        let mut n_ev = 0.0;
        for i in 0..6 {
            if b.events[i] {
                let s: f64 = (0..6)
                    .filter(|&j| b.times[j] >= b.times[i])
                    .map(|j| r[j].exp())
                    .sum();
                direct -= r[i] - s.ln();
                n_ev += 1.0;
            }
        }
        let out = cox_loss(&b, &r).unwrap();
        assert!((out.value - direct / n_ev).abs() < 1e-13);
        assert!(loss_gradient_check(&LossConfig::new(LossKind::Cox), &b, &r, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn cox_survives_extreme_risks() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, true), (3.0, false)]);
        let out = cox_loss(&b, &[-900.0, 800.0, 1000.0]).unwrap();
        assert!(out.value.is_finite());
        assert!(out.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn ce_values() {
        let b = Batch::from_pairs(&[(10.0, true)]);
        assert!((ce_loss(&b, &[0.0], 36.0).unwrap().value - LN2).abs() < 1e-15);
        assert!(ce_loss(&b, &[60.0], 36.0).unwrap().value < 1e-20);

        let b = Batch::from_pairs(&[(10.0, true), (50.0, false), (12.0, false)]);
        let out = ce_loss(&b, &[0.0, 0.0, 3.0], 36.0).unwrap();
        assert!((out.value - LN2).abs() < 1e-15);
        assert_eq!(out.diagnostics.samples_used, 2);
        assert_eq!(out.diagnostics.samples_excluded, 1);
        assert_eq!(out.grad[2], 0.0);

        let b = Batch::from_pairs(&[(12.0, false)]);
        assert!(matches!(
            ce_loss(&b, &[0.0], 36.0),
            Err(Error::NoLabelableSamples)
        ));
    }

    #[test]
    fn cce_values() {
        let cfg = CceConfig::default();
        let early = Batch::from_pairs(&[(12.0, true)]);
        assert!((cce_loss(&early, &[[0.0, 0.0]], &cfg).unwrap().value - LN2).abs() < 1e-15);
        let late = Batch::from_pairs(&[(40.0, true)]);
        let out = cce_loss(&late, &[[0.0, 0.0]], &cfg).unwrap();
        assert!((out.value - LN2).abs() < 1e-15);
        assert_eq!(out.grad, vec![0.5, -0.5]);

        let early_censored = Batch::from_pairs(&[(10.0, false), (12.0, true)]);
        let out = cce_loss(&early_censored, &[[5.0, -3.0], [0.0, 0.0]], &cfg).unwrap();
        assert_eq!(out.diagnostics.samples_excluded, 1);
        assert_eq!(&out.grad[..2], &[0.0, 0.0]);
        assert!((out.value - LN2).abs() < 1e-15);

        let only = Batch::from_pairs(&[(10.0, false)]);
        assert!(matches!(
            cce_loss(&only, &[[0.0, 0.0]], &cfg),
            Err(Error::NoLabelableSamples)
        ));
        assert_eq!(cce_risk([0.0, 0.0]), 0.5);
    }

    #[test]
    fn evaluate_checks_input_width() {
        let b = Batch::from_pairs(&[(1.0, true), (40.0, false)]);
        let cce = LossConfig::new(LossKind::Cce);
        assert!(matches!(
            evaluate(&cce, &b, &[0.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(evaluate(&cce, &b, &[0.0; 4]).is_ok());
        let no_tau = LossConfig {
            tau: 123.0,
            ..LossConfig::new(LossKind::WciNoTau)
        };
        let a = evaluate(&no_tau, &b, &[0.2, 0.9]).unwrap();
        let w = evaluate(&LossConfig::wci(1.0), &b, &[0.2, 0.9]).unwrap();
        assert_eq!(a, w);
    }

    #[test]
    fn clamp_keeps_values_finite() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, false)]);
        let out = wci_loss(&b, &[-1.0, 1.0], &WciConfig { tau: 1e-4 }).unwrap();
        assert_eq!(out.value, EXP_CLAMP.exp());
        assert_eq!(out.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn loss_kind_parses() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!("hinge".parse::<LossKind>().is_err());
    }
}
