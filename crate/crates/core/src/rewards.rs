//! Incremental METEOR traces and the hierarchical Worker/Manager rewards.
//!
//! The Worker is rewarded per token with discounted suffix sums of ΔMETEOR.
//! The Manager is rewarded per clause segment: the undiscounted ΔMETEOR sum
//! over its own segment plus the discounted reward of the following segment.
//! Segment boundaries come from a [`CriticRule`].

use std::collections::HashSet;

use thiserror::Error;

use crate::metrics::{meteor_score, MeteorParams};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("prediction is empty")]
    EmptyPrediction,
    #[error("discount factor {0} outside [0, 1]")]
    Discount(f64),
    #[error("invalid segment boundaries {starts:?} for length {len}")]
    Boundaries { starts: Vec<usize>, len: usize },
}

/// Per-timestep change in prefix METEOR.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTrace {
    pub deltas: Vec<f64>,
    pub full_score: f64,
}

impl DeltaTrace {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// Segment start indices; each segment runs to the next start or the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentBoundaries {
    starts: Vec<usize>,
}

impl SegmentBoundaries {
    /// Validates: non-empty, first start 0, strictly increasing, all below `len`.
    pub fn new(starts: Vec<usize>, len: usize) -> Result<Self, RewardError> {
        let b = SegmentBoundaries { starts };
        b.check(len)?;
        Ok(b)
    }

    /// One segment covering everything.
    pub fn single() -> Self {
        SegmentBoundaries { starts: vec![0] }
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn check(&self, len: usize) -> Result<(), RewardError> {
        let valid = self.starts.first() == Some(&0)
            && self.starts.windows(2).all(|w| w[0] < w[1])
            && self.starts.iter().all(|&s| s < len);
        if valid {
            Ok(())
        } else {
            Err(RewardError::Boundaries { starts: self.starts.clone(), len })
        }
    }

    /// Boundaries truncated to the first `len` positions.
    pub fn truncated(&self, len: usize) -> Self {
        SegmentBoundaries { starts: self.starts.iter().copied().filter(|&s| s < len).collect() }
    }

    /// `(start, end)` half-open ranges for a sequence of length `len`.
    pub fn segments(&self, len: usize) -> Vec<(usize, usize)> {
        self.starts
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, self.starts.get(i + 1).copied().unwrap_or(len)))
            .collect()
    }

    /// For every position, the start index of the segment containing it.
    pub fn segment_start_of(&self, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        for (s, e) in self.segments(len) {
            out.extend(std::iter::repeat_n(s, e - s));
        }
        out
    }

    pub fn is_start(&self, t: usize) -> bool {
        self.starts.binary_search(&t).is_ok()
    }
}

/// Rule-based stand-in for a trained clause critic: a new segment begins
/// right after every delimiter token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticRule {
    delimiters: HashSet<String>,
}

impl CriticRule {
    pub fn new<I, S>(delimiters: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CriticRule { delimiters: delimiters.into_iter().map(Into::into).collect() }
    }

    pub fn is_delimiter(&self, token: &str) -> bool {
        self.delimiters.contains(token)
    }

    pub fn delimiters(&self) -> impl Iterator<Item = &str> {
        self.delimiters.iter().map(String::as_str)
    }
}

impl Default for CriticRule {
    /// Conjunctions and clause punctuation.
    fn default() -> Self {
        CriticRule::new(["and", "but", "or", "while", ",", ";"])
    }
}

pub fn critic_boundaries<S: AsRef<str>>(tokens: &[S], critic: &CriticRule) -> Result<SegmentBoundaries, RewardError> {
    if tokens.is_empty() {
        return Err(RewardError::EmptyPrediction);
    }
    let mut starts = vec![0];
    for (i, tok) in tokens.iter().enumerate() {
        if critic.is_delimiter(tok.as_ref()) && i + 1 < tokens.len() {
            starts.push(i + 1);
        }
    }
    Ok(SegmentBoundaries { starts })
}

/// ΔMETEOR for every prediction prefix against `reference`.
pub fn delta_meteor_trace<S: AsRef<str>, R: AsRef<str>>(
    pred: &[S],
    reference: &[R],
    params: &MeteorParams,
) -> Result<DeltaTrace, RewardError> {
    if pred.is_empty() {
        return Err(RewardError::EmptyPrediction);
    }
    let mut deltas = Vec::with_capacity(pred.len());
    let mut prev = 0.0;
    for t in 1..=pred.len() {
        let score = meteor_score(&pred[..t], reference, params).value;
        deltas.push(score - prev);
        prev = score;
    }
    Ok(DeltaTrace { deltas, full_score: prev })
}

fn check_discount(gamma: f64) -> Result<(), RewardError> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(RewardError::Discount(gamma))
    }
}

/// `R_W(t) = Σ_{j≥t} deltas[j] · γ^(j−t)` over the prediction's own timesteps.
pub fn worker_rewards(trace: &DeltaTrace, gamma: f64) -> Result<Vec<f64>, RewardError> {
    check_discount(gamma)?;
    let mut out = vec![0.0; trace.deltas.len()];
    let mut acc = 0.0;
    for (t, &d) in trace.deltas.iter().enumerate().rev() {
        acc = d + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Segment-recursive Manager reward; zero at every non-start position.
pub fn manager_rewards(trace: &DeltaTrace, bounds: &SegmentBoundaries, gamma: f64) -> Result<Vec<f64>, RewardError> {
    check_discount(gamma)?;
    let len = trace.deltas.len();
    bounds.check(len)?;
    let mut out = vec![0.0; len];
    let mut next = 0.0;
    for (start, end) in bounds.segments(len).into_iter().rev() {
        let own: f64 = trace.deltas[start..end].iter().sum();
        next = own + gamma * next;
        out[start] = next;
    }
    Ok(out)
}

/// Worker and Manager rewards for one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrace {
    pub worker: Vec<f64>,
    pub manager: Vec<f64>,
    pub gamma_worker: f64,
    pub gamma_manager: f64,
}

impl RewardTrace {
    pub fn compute(
        trace: &DeltaTrace,
        bounds: &SegmentBoundaries,
        gamma_worker: f64,
        gamma_manager: f64,
    ) -> Result<Self, RewardError> {
        Ok(RewardTrace {
            worker: worker_rewards(trace, gamma_worker)?,
            manager: manager_rewards(trace, bounds, gamma_manager)?,
            gamma_worker,
            gamma_manager,
        })
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn words() -> impl Strategy<Value = Vec<&'static str>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "runs", "running"]), 1..12)
    }

    fn bounds_for(len: usize) -> impl Strategy<Value = SegmentBoundaries> {
        prop::collection::vec(any::<bool>(), len).prop_map(move |flags| {
            let mut starts = vec![0];
            starts.extend((1..len).filter(|&i| flags[i]));
            SegmentBoundaries::new(starts, len).unwrap()
        })
    }

    proptest! {
        #[test]
        fn prefix_sums_telescope(pred in words(), reference in words()) {
            let p = MeteorParams::default();
            let t = delta_meteor_trace(&pred, &reference, &p).unwrap();
            let mut acc = 0.0;
            for (i, d) in t.deltas.iter().enumerate() {
                acc += d;
                prop_assert!((acc - meteor_score(&pred[..=i], &reference, &p).value).abs() < 1e-12);
            }
            prop_assert!((acc - t.full_score).abs() < 1e-12);
        }

        #[test]
        fn manager_zero_off_starts_and_total((deltas, b) in prop::collection::vec(-1.0f64..1.0, 1..12)
            .prop_flat_map(|d| { let n = d.len(); (Just(d), bounds_for(n)) }))
        {
            let t = DeltaTrace { full_score: deltas.iter().sum(), deltas };
            let m = manager_rewards(&t, &b, 1.0).unwrap();
            for (i, v) in m.iter().enumerate() {
                if !b.is_start(i) {
                    prop_assert_eq!(*v, 0.0);
                }
            }
            prop_assert!((m[0] - t.full_score).abs() < 1e-12);
            let w1 = worker_rewards(&t, 1.0).unwrap();
            prop_assert!((w1[0] - t.full_score).abs() < 1e-12);
        }
    }
}
