//! Comparable-pair construction and the concordance index.

use crate::error::{Error, Result};
use crate::survdata::{Batch, Dataset};

/// Which inequality defines a comparable pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// `O_i = 1`, `T_j >= T_i`, `j != i`. Used by the pairwise losses.
    Loss,
    /// `O_i = 1`, `T_j > T_i`. Used by CI and McNemar.
    Metric,
}

/// For every event `i`, the indices `j` it is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndex {
    pub mode: PairMode,
    pub event_indices: Vec<usize>,
    pub pairs_per_event: Vec<Vec<usize>>,
    /// Events removed because their risk set was empty (loss mode only).
    pub dropped_events: usize,
}

impl PairIndex {
    pub fn n_events(&self) -> usize {
        self.event_indices.len()
    }

    pub fn n_pairs_of(&self, slot: usize) -> usize {
        self.pairs_per_event[slot].len()
    }

    pub fn total_pairs(&self) -> usize {
        self.pairs_per_event.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_pairs() == 0
    }

    /// `(i, partners)` in event order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.event_indices
            .iter()
            .copied()
            .zip(self.pairs_per_event.iter().map(Vec::as_slice))
    }

    /// Partners of event `i`, if `i` is a retained event.
    pub fn partners(&self, i: usize) -> Option<&[usize]> {
        self.event_indices
            .iter()
            .position(|&e| e == i)
            .map(|slot| self.pairs_per_event[slot].as_slice())
    }
}

pub fn build_pairs(batch: &Batch, mode: PairMode) -> PairIndex {
    let n = batch.len();
    let mut event_indices = Vec::new();
    let mut pairs_per_event = Vec::new();
    let mut dropped_events = 0;

    for i in (0..n).filter(|&i| batch.events[i]) {
        let ti = batch.times[i];
        let partners: Vec<usize> = match mode {
            PairMode::Loss => (0..n).filter(|&j| j != i && batch.times[j] >= ti).collect(),
            PairMode::Metric => (0..n).filter(|&j| batch.times[j] > ti).collect(),
        };
        if mode == PairMode::Loss && partners.is_empty() {
            dropped_events += 1;
            continue;
        }
        event_indices.push(i);
        pairs_per_event.push(partners);
    }

    PairIndex {
        mode,
        event_indices,
        pairs_per_event,
        dropped_events,
    }
}

pub fn build_pairs_for(dataset: &Dataset, mode: PairMode) -> PairIndex {
    build_pairs(&dataset.as_batch(), mode)
}

/// Raw counts behind a concordance index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub tied_risk: u64,
}

impl ConcordanceCounts {
    pub fn comparable(&self) -> u64 {
        self.concordant + self.discordant + self.tied_risk
    }

    /// Ties in risk count one half.
    pub fn index(&self) -> Result<f64> {
        let total = self.comparable();
        if total == 0 {
            return Err(Error::UndefinedCi);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied_risk as f64) / total as f64)
    }
}

pub fn concordance_counts(batch: &Batch, risks: &[f64]) -> Result<ConcordanceCounts> {
    if risks.len() != batch.len() {
        return Err(Error::LengthMismatch {
            expected: batch.len(),
            got: risks.len(),
        });
    }
    let index = build_pairs(batch, PairMode::Metric);
    let mut counts = ConcordanceCounts::default();
    for (i, partners) in index.iter() {
        for &j in partners {
            if risks[i] > risks[j] {
                counts.concordant += 1;
            } else if risks[i] < risks[j] {
                counts.discordant += 1;
            } else {
                counts.tied_risk += 1;
            }
        }
    }
    Ok(counts)
}

/// Harrell's C over strictly ordered comparable pairs.
pub fn concordance_index(dataset: &Dataset, risks: &[f64]) -> Result<f64> {
    concordance_index_batch(&dataset.as_batch(), risks)
}

pub fn concordance_index_batch(batch: &Batch, risks: &[f64]) -> Result<f64> {
    concordance_counts(batch, risks)?.index()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Batch {
        Batch::from_pairs(&[(2.0, true), (3.0, false), (3.0, true)])
    }

    #[test]
    fn loss_mode_keeps_ties() {
        let idx = build_pairs(&small(), PairMode::Loss);
        assert_eq!(idx.event_indices, vec![0, 2]);
        assert_eq!(idx.pairs_per_event, vec![vec![1, 2], vec![1]]);
        assert_eq!(idx.dropped_events, 0);
        assert_eq!(idx.total_pairs(), 3);
    }

    #[test]
    fn metric_mode_is_strict() {
        let idx = build_pairs(&small(), PairMode::Metric);
        assert_eq!(idx.event_indices, vec![0, 2]);
        assert_eq!(idx.pairs_per_event, vec![vec![1, 2], vec![]]);
        assert_eq!(idx.partners(2), Some(&[][..]));
    }

    #[test]
    fn loss_mode_drops_events_without_partners() {
        let b = Batch::from_pairs(&[(1.0, false), (5.0, true)]);
        let idx = build_pairs(&b, PairMode::Loss);
        assert!(idx.event_indices.is_empty());
        assert_eq!(idx.dropped_events, 1);
    }

    #[test]
    fn all_censored_gives_empty_index() {
        let b = Batch::from_pairs(&[(1.0, false), (2.0, false)]);
        for mode in [PairMode::Loss, PairMode::Metric] {
            let idx = build_pairs(&b, mode);
            assert!(idx.is_empty());
            assert_eq!(idx.n_events(), 0);
        }
    }

    #[test]
    fn ci_small_example() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, true), (3.0, false)]);
        let ci = concordance_index_batch(&b, &[0.9, 0.5, 0.7]).unwrap();
        assert!((ci - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ci_perfect_and_tied() {
        let b = Batch::from_pairs(&[(1.0, true), (2.0, true), (3.0, true), (4.0, true)]);
        assert_eq!(
            concordance_index_batch(&b, &[4.0, 3.0, 2.0, 1.0]).unwrap(),
            1.0
        );
        assert_eq!(concordance_index_batch(&b, &[1.0; 4]).unwrap(), 0.5);
        assert_eq!(
            concordance_index_batch(&b, &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn ci_undefined_without_pairs() {
        let b = Batch::from_pairs(&[(1.0, false), (2.0, true), (2.0, true)]);
        assert!(matches!(
            concordance_index_batch(&b, &[0.0, 1.0, 2.0]),
            Err(Error::UndefinedCi)
        ));
        assert!(matches!(
            concordance_index_batch(&b, &[0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
