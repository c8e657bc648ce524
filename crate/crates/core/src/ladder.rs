//! Scale ladders: the set of segment lengths used to fragment a look-back
//! window before the per-segment cosine transform.

use serde::{Deserialize, Serialize};

use crate::error::{MmfError, Result};

/// Segment lengths ordered fine to coarse.
///
/// A single entry equal to the look-back length is the unfragmented
/// whole-window transform; a single shorter entry is one-scale
/// fragmentation; several entries give the multi-scale model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleLadder {
    segment_lengths: Vec<usize>,
}

impl ScaleLadder {
    pub fn new(segment_lengths: Vec<usize>) -> Self {
        Self { segment_lengths }
    }

    pub fn segment_lengths(&self) -> &[usize] {
        &self.segment_lengths
    }

    pub fn len(&self) -> usize {
        self.segment_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_lengths.is_empty()
    }
}

impl From<Vec<usize>> for ScaleLadder {
    fn from(v: Vec<usize>) -> Self {
        ScaleLadder::new(v)
    }
}

/// One rung of a validated ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub segment_length: usize,
    pub segment_count: usize,
}

/// A ladder checked against a look-back length, with segment counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedLadder {
    lookback: usize,
    scales: Vec<Scale>,
}

impl ValidatedLadder {
    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn scales(&self) -> &[Scale] {
        &self.scales
    }

    pub fn counts(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.segment_count).collect()
    }

    pub fn ladder(&self) -> ScaleLadder {
        ScaleLadder::new(self.scales.iter().map(|s| s.segment_length).collect())
    }
}

pub fn validate_ladder(lookback: usize, ladder: &ScaleLadder) -> Result<ValidatedLadder> {
    if lookback == 0 {
        return Err(MmfError::InvalidLadder("look-back length must be positive".into()));
    }
    if ladder.is_empty() {
        return Err(MmfError::EmptyLadder);
    }
    let mut scales = Vec::with_capacity(ladder.len());
    let mut prev = 0;
    for &s in ladder.segment_lengths() {
        if s == 0 {
            return Err(MmfError::InvalidLadder("segment length 0".into()));
        }
        if s <= prev {
            return Err(MmfError::InvalidLadder(format!(
                "segment lengths must be strictly increasing, got {:?}",
                ladder.segment_lengths()
            )));
        }
        if !lookback.is_multiple_of(s) {
            return Err(MmfError::Divisibility {
                segment_length: s,
                lookback,
            });
        }
        scales.push(Scale {
            segment_length: s,
            segment_count: lookback / s,
        });
        prev = s;
    }
    Ok(ValidatedLadder { lookback, scales })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_for_default_ladder() {
        let v = validate_ladder(720, &vec![2, 24, 720].into()).unwrap();
        assert_eq!(v.counts(), vec![360, 30, 1]);
    }

    #[test]
    fn whole_window_ladder() {
        let v = validate_ladder(720, &vec![720].into()).unwrap();
        assert_eq!(v.counts(), vec![1]);
    }

    #[test]
    fn non_divisor_is_rejected() {
        match validate_ladder(7, &vec![2].into()) {
            Err(MmfError::Divisibility {
                segment_length,
                lookback,
            }) => {
                assert_eq!((segment_length, lookback), (2, 7));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_unordered_ladders() {
        assert!(matches!(
            validate_ladder(8, &ScaleLadder::new(vec![])),
            Err(MmfError::EmptyLadder)
        ));
        assert!(matches!(
            validate_ladder(8, &vec![4, 2].into()),
            Err(MmfError::InvalidLadder(_))
        ));
        assert!(matches!(
            validate_ladder(8, &vec![2, 2].into()),
            Err(MmfError::InvalidLadder(_))
        ));
    }
}
