//! Supervision-signal counting for masked-digit training.
//!
//! A learnable supervision signal is a pair (target digit k, masked set S)
//! with k in S: the decoder predicts digit k while exactly the digits in S are
//! masked. An autoregressive decoder sees each digit under its prefix only,
//! so one teacher-forced sample covers all n of its signals. Masked-digit
//! training admits every non-empty S, giving n * 2^(n-1) distinct signals and
//! requiring 2^n - 1 masking configurations for full coverage (one per
//! non-empty subset, since a sample realizes exactly one masked set).

use crate::error::{Error, Result};

/// Closed-form signal counts for an n-digit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalCensus {
    pub n: u32,
    /// Signals available to an autoregressive decoder: one per digit.
    pub arm_signals: u64,
    /// Distinct (target digit, masked set) pairs under masked-digit training.
    pub mdm_signals: u64,
    /// Minimum number of masking configurations covering every signal.
    pub min_samples_mdm: u64,
}

/// Closed-form census; `n` must be in 1..=30 so the counts fit comfortably.
pub fn count_signals(n: u32) -> Result<SignalCensus> {
    if !(1..=30).contains(&n) {
        return Err(Error::Config(format!(
            "digit count n={n} out of supported range 1..=30"
        )));
    }
    Ok(SignalCensus {
        n,
        arm_signals: n as u64,
        mdm_signals: (n as u64) << (n - 1),
        min_samples_mdm: (1u64 << n) - 1,
    })
}

/// Explicit enumeration of all (target digit, masked set) pairs. The masked
/// set is returned as a bitmask over digits. Guarded to n <= 12.
pub fn enumerate_signals(n: u32) -> Result<Vec<(u32, u32)>> {
    if !(1..=12).contains(&n) {
        return Err(Error::Config(format!(
            "enumeration supports n in 1..=12, got {n}"
        )));
    }
    let mut out = Vec::new();
    for mask in 1u32..(1 << n) {
        for k in 0..n {
            if mask & (1 << k) != 0 {
                out.push((k, mask));
            }
        }
    }
    Ok(out)
}

/// The signals an autoregressive decoder covers: digit k is predicted while
/// the masked set is the suffix {k, ..., n-1}.
pub fn arm_signals(n: u32) -> Vec<(u32, u32)> {
    (0..n)
        .map(|k| {
            let suffix = ((1u32 << n) - 1) & !((1 << k) - 1);
            (k, suffix)
        })
        .collect()
}

impl std::fmt::Display for SignalCensus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n={} arm_signals={} signals={} min_samples={}",
            self.n, self.arm_signals, self.mdm_signals, self.min_samples_mdm
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn census_matches_published_values() {
        let c = count_signals(4).unwrap();
        assert_eq!(c.mdm_signals, 32);
        assert_eq!(c.min_samples_mdm, 15);
        assert_eq!(c.arm_signals, 4);

        let c = count_signals(3).unwrap();
        assert_eq!(c.mdm_signals, 12);

        let c = count_signals(1).unwrap();
        assert_eq!(c.arm_signals, 1);
        assert_eq!(c.mdm_signals, 1);
        assert_eq!(c.min_samples_mdm, 1);
    }

    #[test]
    fn enumeration_cross_checks_closed_form() {
        for n in 1..=12 {
            let pairs = enumerate_signals(n).unwrap();
            let census = count_signals(n).unwrap();
            assert_eq!(pairs.len() as u64, census.mdm_signals, "n={n}");
            // Pairs are distinct.
            let set: BTreeSet<_> = pairs.iter().collect();
            assert_eq!(set.len(), pairs.len());
        }
    }

    #[test]
    fn hand_enumeration_n2() {
        let pairs = enumerate_signals(2).unwrap();
        let expected: BTreeSet<(u32, u32)> = [(0, 0b01), (1, 0b10), (0, 0b11), (1, 0b11)]
            .into_iter()
            .collect();
        assert_eq!(pairs.iter().copied().collect::<BTreeSet<_>>(), expected);
    }

    #[test]
    fn n1_single_signal() {
        assert_eq!(enumerate_signals(1).unwrap(), vec![(0, 1)]);
    }

    #[test]
    fn arm_sublist_has_length_n() {
        for n in 1..=8 {
            let arm = arm_signals(n);
            assert_eq!(arm.len() as u32, n);
            let all: BTreeSet<_> = enumerate_signals(n).unwrap().into_iter().collect();
            for pair in arm {
                assert!(all.contains(&pair));
            }
        }
    }

    /// Each signal (k, S) is realized only by the masking configuration S, so
    /// covering all signals needs every non-empty subset: 2^n - 1 patterns.
    #[test]
    fn minimum_cover_is_every_nonempty_subset() {
        for n in 1..=5u32 {
            let pairs = enumerate_signals(n).unwrap();
            let masks_needed: BTreeSet<u32> = pairs.iter().map(|&(_, s)| s).collect();
            assert_eq!(masks_needed.len() as u64, (1u64 << n) - 1);
            // And dropping any single mask loses at least one signal.
            for dropped in masks_needed.iter() {
                let covered: BTreeSet<_> = pairs
                    .iter()
                    .filter(|&&(_, s)| s != *dropped)
                    .map(|&(k, s)| (k, s))
                    .collect();
                assert!(covered.len() < pairs.len());
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(count_signals(0).is_err());
        assert!(count_signals(31).is_err());
        assert!(enumerate_signals(13).is_err());
    }

    #[test]
    fn display_format() {
        let c = count_signals(4).unwrap();
        assert_eq!(c.to_string(), "n=4 arm_signals=4 signals=32 min_samples=15");
    }
}
