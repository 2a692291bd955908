//! Similarity of two component sequences, plus the function-level baselines.
//!
//! Matched components are found by a longest common subsequence over
//! component names. Each match contributes `exp(-m * pos) * exp(-n * dist)`
//! where `pos` is the larger of its two positions and `dist` the normalized
//! edit distance of the two function runs. The sum is normalized by
//! `sum_{i=0}^{max} exp(-m * i)`, `max` being the last position of the longer
//! sequence, which keeps the score in `[0, 1]`.

use serde::Serialize;

use crate::edit::levenshtein;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::sequence::{component_distance, ComponentSequence};

/// One component aligned between two sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub component: String,
    pub pos_a: usize,
    pub pos_b: usize,
    /// `max(pos_a, pos_b)`.
    pub pos: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub matched: Vec<MatchedPair>,
    pub max_position: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Cell {
    len: u32,
    cost: u64,
}

impl Cell {
    fn beats(self, other: Cell) -> bool {
        self.len > other.len || (self.len == other.len && self.cost < other.cost)
    }
}

/// Longest common subsequence of component names. Among alignments of
/// maximal length the one with the smallest total `pos_a + pos_b` is chosen,
/// preferring matches near the top of both stacks. Remaining ties are
/// resolved identically for `(a, b)` and `(b, a)`.
pub fn lcs_match(a: &ComponentSequence, b: &ComponentSequence) -> Vec<MatchedPair> {
    if b.occurrences < a.occurrences {
        return align(b, a)
            .into_iter()
            .map(|p| MatchedPair {
                pos_a: p.pos_b,
                pos_b: p.pos_a,
                ..p
            })
            .collect();
    }
    align(a, b)
}

fn align(a: &ComponentSequence, b: &ComponentSequence) -> Vec<MatchedPair> {
    let (la, lb) = (a.len(), b.len());
    let width = lb + 1;
    // best[i * width + j] describes the optimal alignment of a[i..] with b[j..].
    let mut best = vec![Cell { len: 0, cost: 0 }; (la + 1) * width];
    let same = |i: usize, j: usize| a.occurrences[i].component == b.occurrences[j].component;

    for i in (0..la).rev() {
        for j in (0..lb).rev() {
            let mut cell = best[(i + 1) * width + j];
            let skip_b = best[i * width + j + 1];
            if skip_b.beats(cell) {
                cell = skip_b;
            }
            if same(i, j) {
                let rest = best[(i + 1) * width + j + 1];
                let matched = Cell {
                    len: rest.len + 1,
                    cost: rest.cost + (i + j) as u64,
                };
                if !cell.beats(matched) {
                    cell = matched;
                }
            }
            best[i * width + j] = cell;
        }
    }

    let mut pairs = Vec::with_capacity(best[0].len as usize);
    let (mut i, mut j) = (0, 0);
    while i < la && j < lb {
        let here = best[i * width + j];
        if here.len == 0 {
            break;
        }
        if same(i, j) {
            let rest = best[(i + 1) * width + j + 1];
            if rest.len + 1 == here.len && rest.cost + (i + j) as u64 == here.cost {
                let (oa, ob) = (&a.occurrences[i], &b.occurrences[j]);
                pairs.push(MatchedPair {
                    component: oa.component.clone(),
                    pos_a: i,
                    pos_b: j,
                    pos: i.max(j),
                    dist: component_distance(oa, ob).expect("aligned occurrences share a component"),
                });
                i += 1;
                j += 1;
                continue;
            }
        }
        if best[(i + 1) * width + j] == here {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}

/// The parts of a pair's score that do not depend on `m` and `n`.
///
/// Tuning evaluates hundreds of `(m, n)` points over the same pairs, so the
/// alignment is computed once and only the exponentials are re-evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    /// `(pos, dist)` of every matched component.
    pub terms: Vec<(usize, f64)>,
    pub max_position: usize,
}

impl PairFeatures {
    pub fn from_matches(matched: &[MatchedPair], max_position: usize) -> Self {
        PairFeatures {
            terms: matched.iter().map(|p| (p.pos, p.dist)).collect(),
            max_position,
        }
    }

    pub fn compute(a: &ComponentSequence, b: &ComponentSequence) -> Result<Self> {
        let max_position = max_position(a, b)?;
        Ok(Self::from_matches(&lcs_match(a, b), max_position))
    }

    pub fn score(&self, m: f64, n: f64) -> f64 {
        let numerator: f64 = self
            .terms
            .iter()
            .map(|&(pos, dist)| (-m * pos as f64).exp() * (-n * dist).exp())
            .sum();
        let denominator: f64 = (0..=self.max_position).map(|i| (-m * i as f64).exp()).sum();
        numerator / denominator
    }
}

fn max_position(a: &ComponentSequence, b: &ComponentSequence) -> Result<usize> {
    for seq in [a, b] {
        if seq.is_empty() {
            return Err(Error::EmptyStack(Some(seq.dump_id.clone())));
        }
    }
    Ok(a.len().max(b.len()) - 1)
}

/// Scores a sequence pair under `params`.
pub fn similarity(
    a: &ComponentSequence,
    b: &ComponentSequence,
    params: &ModelParams,
) -> Result<SimilarityScore> {
    params.validate()?;
    let max_position = max_position(a, b)?;
    let matched = lcs_match(a, b);
    let value = PairFeatures::from_matches(&matched, max_position).score(params.m, params.n);
    Ok(SimilarityScore {
        value,
        matched,
        max_position,
    })
}

/// Character-level edit similarity of two newline-joined stacks:
/// `1 - levenshtein(a, b) / max(|a|, |b|)`.
pub fn baseline_edit_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

/// Length of the common leading run of function names over the longer stack.
pub fn baseline_prefix_match<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    let common = a
        .iter()
        .zip(b)
        .take_while(|(x, y)| x.as_ref() == y.as_ref())
        .count();
    common as f64 / longest as f64
}
