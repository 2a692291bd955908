//! Labeled pairs from bug history, AUC, and `(m, n)` grid tuning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dump::CrashDump;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::pipeline::Preprocessor;
use crate::sequence::ComponentSequence;
use crate::similarity::{baseline_edit_distance, baseline_prefix_match, PairFeatures};
use crate::union_find::DisjointSet;

pub type BugId = u64;

/// One tracked crash failure, as kept by the bug store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub bug_id: BugId,
    pub dump_id: String,
    pub resolution: String,
    pub creation_time: DateTime<Utc>,
    pub dupe_of: Option<BugId>,
    pub dump_path: String,
    /// Component at position 0 of the dump's sequence; empty until computed.
    #[serde(default)]
    pub top_component: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Duplicate,
    NonDuplicate,
}

impl Label {
    pub fn is_duplicate(self) -> bool {
        self == Label::Duplicate
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Duplicate => "duplicate",
            Label::NonDuplicate => "non-duplicate",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "duplicate" | "1" => Ok(Label::Duplicate),
            "non-duplicate" | "0" => Ok(Label::NonDuplicate),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// An unordered dump pair; `dump_a < dump_b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledPair {
    pub dump_a: String,
    pub dump_b: String,
    pub label: Label,
}

impl LabeledPair {
    pub fn new(x: impl Into<String>, y: impl Into<String>, label: Label) -> Result<Self> {
        let (x, y) = (x.into(), y.into());
        if x == y {
            return Err(Error::InvalidParameter(format!("pair of {x} with itself")));
        }
        let (dump_a, dump_b) = if x < y { (x, y) } else { (y, x) };
        Ok(LabeledPair { dump_a, dump_b, label })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingSet {
    pub pairs: Vec<LabeledPair>,
}

impl TrainingSet {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label.is_duplicate()).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    /// `dump_id_a<TAB>dump_id_b<TAB>label` lines.
    pub fn to_file_text(&self) -> String {
        self.pairs
            .iter()
            .map(|p| format!("{}\t{}\t{}\n", p.dump_a, p.dump_b, p.label))
            .collect()
    }

    pub fn from_file_text(path: &Path, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [a, b, label] = fields[..] else {
                return Err(Error::format(path, n + 1, "expected dump_id_a<TAB>dump_id_b<TAB>label"));
            };
            let label = label.trim().parse().map_err(|e: String| Error::format(path, n + 1, e))?;
            let pair = LabeledPair::new(a, b, label).map_err(|e| Error::format(path, n + 1, e.to_string()))?;
            pairs.push(pair);
        }
        Ok(TrainingSet { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_text(path, &text)
    }
}

/// Bugs partitioned by transitive `dupe_of` links.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grouping {
    /// Each group sorted ascending; groups ordered by their smallest bug id.
    pub groups: Vec<Vec<BugId>>,
    /// `(bug_id, dupe_of)` edges whose target is not a known bug.
    pub dangling: Vec<(BugId, BugId)>,
}

impl Grouping {
    /// Smallest bug id of each bug's group.
    pub fn canonical(&self) -> HashMap<BugId, BugId> {
        self.groups
            .iter()
            .flat_map(|g| g.iter().map(move |&b| (b, g[0])))
            .collect()
    }
}

/// Union-find over `(bug_id, dupe_of)` edges.
pub fn build_groups(records: &[FailureRecord]) -> Grouping {
    let ids: BTreeSet<BugId> = records.iter().map(|r| r.bug_id).collect();
    let ids: Vec<BugId> = ids.into_iter().collect();
    let slot: HashMap<BugId, usize> = ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut sets = DisjointSet::new(ids.len());
    let mut dangling = Vec::new();

    for record in records {
        let Some(target) = record.dupe_of else { continue };
        match slot.get(&target) {
            Some(&t) => {
                sets.union(slot[&record.bug_id], t);
            }
            None => dangling.push((record.bug_id, target)),
        }
    }
    let groups = sets
        .sets()
        .into_iter()
        .map(|set| set.into_iter().map(|i| ids[i]).collect())
        .collect();
    Grouping { groups, dangling }
}

/// How negatives are required to resemble each other.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NegativeMatch {
    /// Same component at the top of the stack.
    #[default]
    TopComponent,
    /// At least one component in common anywhere in the stacks.
    AnyComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingOptions {
    pub negative_match: NegativeMatch,
    /// Negatives to draw; `None` balances against the positive count.
    pub negatives: Option<usize>,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        SamplingOptions {
            negative_match: NegativeMatch::TopComponent,
            negatives: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamplingReport {
    pub negative_candidates: usize,
    /// Set when fewer candidates exist than negatives requested: `(available, wanted)`.
    pub insufficient_negatives: Option<(usize, usize)>,
}

/// Positives are all within-group pairs; negatives are cross-group pairs that
/// match per `options.negative_match`, drawn uniformly without replacement.
///
/// `sequences` is only consulted for [`NegativeMatch::AnyComponent`].
pub fn sample_pairs(
    grouping: &Grouping,
    records: &[FailureRecord],
    sequences: Option<&HashMap<String, ComponentSequence>>,
    options: &SamplingOptions,
) -> Result<(TrainingSet, SamplingReport)> {
    let by_bug: HashMap<BugId, &FailureRecord> = records.iter().map(|r| (r.bug_id, r)).collect();
    let mut group_of: HashMap<BugId, usize> = HashMap::new();
    for (g, members) in grouping.groups.iter().enumerate() {
        for &bug in members {
            group_of.insert(bug, g);
        }
    }

    let mut positives = BTreeSet::new();
    for members in &grouping.groups {
        let dumps: Vec<&str> = members
            .iter()
            .filter_map(|b| by_bug.get(b).map(|r| r.dump_id.as_str()))
            .collect();
        for (i, a) in dumps.iter().enumerate() {
            for b in &dumps[i + 1..] {
                positives.insert(LabeledPair::new(*a, *b, Label::Duplicate)?);
            }
        }
    }

    let mut ordered: Vec<&FailureRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.bug_id);
    let mut candidates = BTreeSet::new();
    match options.negative_match {
        NegativeMatch::TopComponent => {
            let mut buckets: BTreeMap<&str, Vec<&FailureRecord>> = BTreeMap::new();
            for r in &ordered {
                buckets.entry(r.top_component.as_str()).or_default().push(r);
            }
            for bucket in buckets.values() {
                for (i, x) in bucket.iter().enumerate() {
                    for y in &bucket[i + 1..] {
                        if group_of.get(&x.bug_id) != group_of.get(&y.bug_id) {
                            candidates.insert(LabeledPair::new(&x.dump_id, &y.dump_id, Label::NonDuplicate)?);
                        }
                    }
                }
            }
        }
        NegativeMatch::AnyComponent => {
            let sequences = sequences.ok_or_else(|| {
                Error::InvalidParameter("component sets are needed to match negatives on any component".into())
            })?;
            let components: Vec<BTreeSet<&str>> = ordered
                .iter()
                .map(|r| {
                    sequences
                        .get(&r.dump_id)
                        .map(|s| s.components().collect())
                        .ok_or_else(|| Error::UnknownDump(r.dump_id.clone()))
                })
                .collect::<Result<_>>()?;
            for (i, x) in ordered.iter().enumerate() {
                for (j, y) in ordered.iter().enumerate().skip(i + 1) {
                    if group_of.get(&x.bug_id) != group_of.get(&y.bug_id)
                        && !components[i].is_disjoint(&components[j])
                    {
                        candidates.insert(LabeledPair::new(&x.dump_id, &y.dump_id, Label::NonDuplicate)?);
                    }
                }
            }
        }
    }

    let wanted = options.negatives.unwrap_or(positives.len());
    let mut candidates: Vec<LabeledPair> = candidates.into_iter().collect();
    let mut report = SamplingReport {
        negative_candidates: candidates.len(),
        insufficient_negatives: None,
    };
    if candidates.len() < wanted {
        report.insufficient_negatives = Some((candidates.len(), wanted));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        candidates.partial_shuffle(&mut rng, wanted);
        candidates.truncate(wanted);
        candidates.sort();
    }

    let mut pairs: Vec<LabeledPair> = positives.into_iter().collect();
    pairs.extend(candidates);
    Ok((TrainingSet { pairs }, report))
}

/// Fills each record's `top_component` from its dump's sequence.
pub fn assign_top_components(
    records: &mut [FailureRecord],
    sequences: &HashMap<String, ComponentSequence>,
) -> Result<()> {
    for record in records {
        let sequence = sequences
            .get(&record.dump_id)
            .ok_or_else(|| Error::UnknownDump(record.dump_id.clone()))?;
        record.top_component = sequence.top_component().unwrap_or_default().to_string();
    }
    Ok(())
}

/// Splits records so that no group spans both halves. Roughly
/// `train_fraction` of the groups go to the first half.
pub fn split_by_group(
    grouping: &Grouping,
    records: &[FailureRecord],
    train_fraction: f64,
    seed: u64,
) -> (Vec<FailureRecord>, Vec<FailureRecord>) {
    let mut order: Vec<usize> = (0..grouping.groups.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_groups = ((grouping.groups.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
    let train_bugs: BTreeSet<BugId> = order[..train_groups]
        .iter()
        .flat_map(|&g| grouping.groups[g].iter().copied())
        .collect();
    records
        .iter()
        .cloned()
        .partition(|r| train_bugs.contains(&r.bug_id))
}

fn check_classes(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    let positives = scores.iter().filter(|(_, label)| *label).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateSet(format!(
            "{positives} positives and {negatives} negatives"
        )));
    }
    Ok((positives, negatives))
}

/// ROC AUC by the rank-sum statistic; tied scores share their average rank.
pub fn compute_auc(scores: &[(f64, bool)]) -> Result<f64> {
    let (positives, negatives) = check_classes(scores)?;
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the positive rank sum, so tied averages stay integral.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // Ranks i+1..=j average to (i+1+j)/2.
        let doubled_rank = (i + 1 + j) as u64;
        let tied_positives = sorted[i..j].iter().filter(|(_, l)| *l).count() as u64;
        doubled_rank_sum += doubled_rank * tied_positives;
        i = j;
    }
    let p = positives as u64;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * positives * negatives) as f64)
}

/// Coefficient values visited by the tuner: `0.0, 0.1, ..., 2.0`.
pub fn grid_values() -> impl Iterator<Item = f64> + Clone {
    (0..=20).map(|i| i as f64 / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub m: f64,
    pub n: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub m: f64,
    pub n: f64,
    pub auc: f64,
    /// All grid points in visiting order (`m` outer, `n` inner).
    pub grid: Vec<GridPoint>,
}

impl Tuning {
    /// `m<TAB>n<TAB>auc` per grid point, then a `#best` summary line.
    pub fn report(&self) -> String {
        let mut out = String::from("m\tn\tauc\n");
        for p in &self.grid {
            out.push_str(&format!("{:.1}\t{:.1}\t{:.6}\n", p.m, p.n, p.auc));
        }
        out.push_str(&format!("#best m={:.1} n={:.1} auc={:.6}\n", self.m, self.n, self.auc));
        out
    }
}

/// Labeled scoring features for a pair set.
pub fn pair_features(
    set: &TrainingSet,
    sequences: &HashMap<String, ComponentSequence>,
) -> Result<Vec<(PairFeatures, bool)>> {
    set.pairs
        .par_iter()
        .map(|pair| {
            let lookup = |id: &String| sequences.get(id).ok_or_else(|| Error::UnknownDump(id.clone()));
            let features = PairFeatures::compute(lookup(&pair.dump_a)?, lookup(&pair.dump_b)?)?;
            Ok((features, pair.label.is_duplicate()))
        })
        .collect()
}

pub fn score_all(features: &[(PairFeatures, bool)], m: f64, n: f64) -> Vec<(f64, bool)> {
    features.iter().map(|(f, label)| (f.score(m, n), *label)).collect()
}

/// Exhaustive search of the 21 x 21 grid. The first point (in `m`-outer
/// order) that strictly improves on the running best wins, starting from
/// `(0, 0)` with best AUC 0.
pub fn tune_parameters(features: &[(PairFeatures, bool)]) -> Result<Tuning> {
    let labels: Vec<(f64, bool)> = features.iter().map(|(_, l)| (0.0, *l)).collect();
    check_classes(&labels)?;

    let points: Vec<(f64, f64)> = grid_values()
        .flat_map(|m| grid_values().map(move |n| (m, n)))
        .collect();
    let grid: Vec<GridPoint> = points
        .par_iter()
        .map(|&(m, n)| {
            let auc = compute_auc(&score_all(features, m, n))?;
            Ok(GridPoint { m, n, auc })
        })
        .collect::<Result<_>>()?;

    let (mut best_auc, mut best_m, mut best_n) = (0.0, 0.0, 0.0);
    for point in &grid {
        if point.auc > best_auc {
            best_auc = point.auc;
            best_m = point.m;
            best_n = point.n;
        }
    }
    Ok(Tuning {
        m: best_m,
        n: best_n,
        auc: best_auc,
        grid,
    })
}

fn f1(true_pos: usize, false_pos: usize, false_neg: usize) -> f64 {
    let denominator = 2 * true_pos + false_pos + false_neg;
    if denominator == 0 {
        0.0
    } else {
        2.0 * true_pos as f64 / denominator as f64
    }
}

/// Threshold maximizing F1 for the rule `score >= threshold => duplicate`.
///
/// Every distinct observed score `s_k` defines a candidate cut; the returned
/// threshold is the midpoint between `s_k` and the next lower observed score
/// (or `s_k` itself for the lowest). Ties go to the smaller threshold.
pub fn select_threshold(scores: &[(f64, bool)]) -> Result<f64> {
    let (positives, _) = check_classes(scores)?;
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<(f64, f64)> = None;
    let (mut true_pos, mut false_pos) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                true_pos += 1;
            } else {
                false_pos += 1;
            }
            i += 1;
        }
        let threshold = match sorted.get(i) {
            Some(&(lower, _)) => (score + lower) / 2.0,
            None => score,
        };
        let value = f1(true_pos, false_pos, positives - true_pos);
        // Candidates arrive from high to low threshold, so `>=` keeps the smaller on ties.
        if best.is_none_or(|(best_f1, _)| value >= best_f1) {
            best = Some((value, threshold));
        }
    }
    Ok(best.expect("non-empty scores").1)
}

/// Tuned coefficients plus the F1-optimal threshold at those coefficients.
pub fn train(features: &[(PairFeatures, bool)]) -> Result<(ModelParams, Tuning)> {
    let tuning = tune_parameters(features)?;
    let threshold = select_threshold(&score_all(features, tuning.m, tuning.n))?;
    Ok((
        ModelParams {
            m: tuning.m,
            n: tuning.n,
            threshold,
        },
        tuning,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodAuc {
    pub component_model: f64,
    pub edit_distance: f64,
    pub prefix_match: f64,
}

impl MethodAuc {
    /// Method names as printed in evaluation tables.
    pub fn rows(&self) -> [(&'static str, f64); 3] {
        [
            ("kdetector", self.component_model),
            ("edit-distance", self.edit_distance),
            ("prefix-match", self.prefix_match),
        ]
    }

    pub fn table(&self) -> String {
        let mut out = String::from("method\tauc\n");
        for (name, auc) in self.rows() {
            out.push_str(&format!("{name}\t{auc:.6}\n"));
        }
        out
    }
}

/// AUC of the component model and of both function-level baselines, all
/// computed on the same stop-word-filtered frames.
pub fn evaluate_methods(
    set: &TrainingSet,
    dumps: &HashMap<String, CrashDump>,
    prep: &Preprocessor<'_>,
    params: &ModelParams,
) -> Result<MethodAuc> {
    params.validate()?;
    let needed: BTreeSet<&String> = set.pairs.iter().flat_map(|p| [&p.dump_a, &p.dump_b]).collect();
    let selected: Vec<(&String, &CrashDump)> = needed
        .into_iter()
        .map(|id| dumps.get_key_value(id).ok_or_else(|| Error::UnknownDump(id.clone())))
        .collect::<Result<_>>()?;
    let sequences = prep.sequences(selected.clone())?;
    let names: HashMap<&String, Vec<String>> = selected
        .iter()
        .map(|(id, dump)| (*id, prep.function_names(dump)))
        .collect();

    let features = pair_features(set, &sequences)?;
    let component_model = compute_auc(&score_all(&features, params.m, params.n))?;

    let baseline_scores: Vec<(f64, f64, bool)> = set
        .pairs
        .par_iter()
        .map(|pair| {
            let (a, b) = (&names[&pair.dump_a], &names[&pair.dump_b]);
            let edit = baseline_edit_distance(&a.join("\n"), &b.join("\n"));
            let prefix = baseline_prefix_match(a, b);
            (edit, prefix, pair.label.is_duplicate())
        })
        .collect();
    let edit: Vec<(f64, bool)> = baseline_scores.iter().map(|&(e, _, l)| (e, l)).collect();
    let prefix: Vec<(f64, bool)> = baseline_scores.iter().map(|&(_, p, l)| (p, l)).collect();

    Ok(MethodAuc {
        component_model,
        edit_distance: compute_auc(&edit)?,
        prefix_match: compute_auc(&prefix)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(bug_id: BugId, dupe_of: Option<BugId>, top: &str) -> FailureRecord {
        FailureRecord {
            bug_id,
            dump_id: format!("d{bug_id}"),
            resolution: String::new(),
            creation_time: DateTime::from_timestamp(1_560_000_000 + bug_id as i64, 0).unwrap(),
            dupe_of,
            dump_path: String::new(),
            top_component: top.into(),
        }
    }

    /// Pairwise Mann-Whitney count.
    fn auc_oracle(scores: &[(f64, bool)]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for &(p, lp) in scores {
            for &(n, ln) in scores {
                if lp && !ln {
                    total += 1.0;
                    if p > n {
                        wins += 1.0;
                    } else if p == n {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    #[test]
    fn groups() {
        let g = build_groups(&[record(1, Some(2), "A"), record(2, None, "A"), record(3, Some(2), "A")]);
        assert_eq!(g.groups, vec![vec![1, 2, 3]]);

        let g = build_groups(&[record(1, None, "A"), record(2, None, "A")]);
        assert_eq!(g.groups, vec![vec![1], vec![2]]);

        let g = build_groups(&[record(1, Some(2), "A"), record(2, Some(1), "A")]);
        assert_eq!(g.groups, vec![vec![1, 2]]);

        let g = build_groups(&[record(1, Some(9), "A")]);
        assert_eq!(g.groups, vec![vec![1]]);
        assert_eq!(g.dangling, vec![(1, 9)]);
        assert_eq!(build_groups(&[record(5, Some(7), "A"), record(7, None, "A")]).canonical()[&5], 5);
    }

    #[test]
    fn sampling() {
        let records = [
            record(1, None, "A"),
            record(2, Some(1), "A"),
            record(3, Some(1), "A"),
            record(4, None, "A"),
            record(5, None, "B"),
            record(6, None, "A"),
        ];
        let grouping = build_groups(&records);
        let (set, report) = sample_pairs(&grouping, &records, None, &SamplingOptions::default()).unwrap();
        assert_eq!(set.positives(), 3);
        assert_eq!(set.negatives(), 3);
        // {1,2,3} x {4} x {6} on component A, minus nothing: 3 + 3 + 1.
        assert_eq!(report.negative_candidates, 7);
        assert!(report.insufficient_negatives.is_none());
        for p in set.pairs.iter().filter(|p| !p.label.is_duplicate()) {
            assert!(p.dump_a != "d5" && p.dump_b != "d5");
        }

        let again = sample_pairs(&grouping, &records, None, &SamplingOptions::default()).unwrap();
        assert_eq!(again.0, set);
    }

    #[test]
    fn insufficient_negatives() {
        let records = [record(1, None, "A"), record(2, Some(1), "A"), record(3, None, "B")];
        let (set, report) = sample_pairs(&build_groups(&records), &records, None, &SamplingOptions::default()).unwrap();
        assert_eq!(set.positives(), 1);
        assert_eq!(set.negatives(), 0);
        assert_eq!(report.insufficient_negatives, Some((0, 1)));
    }

    #[test]
    fn any_component_negatives() {
        let records = [record(1, None, "A"), record(2, None, "B")];
        let mut sequences = HashMap::new();
        sequences.insert("d1".to_string(), ComponentSequence::from_steps("d1", [("A", "f"), ("C", "g")]));
        sequences.insert("d2".to_string(), ComponentSequence::from_steps("d2", [("B", "h"), ("C", "k")]));
        let options = SamplingOptions { negative_match: NegativeMatch::AnyComponent, negatives: Some(1), seed: 1 };
        let (set, _) = sample_pairs(&build_groups(&records), &records, Some(&sequences), &options).unwrap();
        assert_eq!(set.negatives(), 1);
        assert!(sample_pairs(&build_groups(&records), &records, None, &options).is_err());
    }

    #[test]
    fn split_keeps_groups_whole() {
        let records: Vec<_> = (1..=20).map(|b| record(b, if b % 4 == 0 { None } else { Some(b + 1) }, "A")).collect();
        let grouping = build_groups(&records);
        let (train, test) = split_by_group(&grouping, &records, 0.5, 3);
        assert_eq!(train.len() + test.len(), records.len());
        let canonical = grouping.canonical();
        let train_groups: BTreeSet<_> = train.iter().map(|r| canonical[&r.bug_id]).collect();
        assert!(test.iter().all(|r| !train_groups.contains(&canonical[&r.bug_id])));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(compute_auc(&[(0.9, true), (0.8, true), (0.1, false)]).unwrap(), 1.0);
        assert_eq!(compute_auc(&[(0.3, true), (0.3, false), (0.3, true)]).unwrap(), 0.5);
        let mixed = [(0.9, true), (0.4, true), (0.6, false), (0.1, false)];
        assert_eq!(auc_oracle(&mixed), 0.75);
        assert_eq!(compute_auc(&mixed).unwrap(), 0.75);
        assert!(matches!(compute_auc(&[(0.1, true)]), Err(Error::DegenerateSet(_))));
    }

    #[test]
    fn threshold_examples() {
        let separated = [(0.9, true), (0.7, true), (0.4, false), (0.2, false)];
        assert!((select_threshold(&separated).unwrap() - 0.55).abs() < 1e-12);
        assert_eq!(select_threshold(&[(1.0, true), (1.0, true), (0.0, false)]).unwrap(), 0.5);
        assert!(select_threshold(&[(0.2, false)]).is_err());
    }

    #[test]
    fn constant_auc_keeps_origin() {
        // Disjoint pairs score 0 everywhere, so every grid point has AUC 0.5.
        let features = vec![
            (PairFeatures { terms: vec![], max_position: 3 }, true),
            (PairFeatures { terms: vec![], max_position: 2 }, false),
        ];
        let tuning = tune_parameters(&features).unwrap();
        assert_eq!((tuning.m, tuning.n, tuning.auc), (0.0, 0.0, 0.5));
        assert_eq!(tuning.grid.len(), 441);
        assert_eq!(tuning.report().lines().count(), 443);
        assert_eq!(tuning.grid[21].m, 0.1);
        assert_eq!(tuning.grid[440].m, 2.0);
    }

    #[test]
    fn pairs_file() {
        let set = TrainingSet {
            pairs: vec![
                LabeledPair::new("b", "a", Label::Duplicate).unwrap(),
                LabeledPair::new("a", "c", Label::NonDuplicate).unwrap(),
            ],
        };
        let text = set.to_file_text();
        assert_eq!(text, "a\tb\tduplicate\na\tc\tnon-duplicate\n");
        assert_eq!(TrainingSet::from_file_text(Path::new("p"), &text).unwrap(), set);
        assert!(TrainingSet::from_file_text(Path::new("p"), "a\ta\tduplicate\n").is_err());
        assert!(TrainingSet::from_file_text(Path::new("p"), "a\tb\n").is_err());
    }

    fn scores_strategy() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec(((0u8..8).prop_map(|s| s as f64 / 7.0), any::<bool>()), 2..30)
            .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(scores in scores_strategy()) {
            prop_assert_eq!(compute_auc(&scores).unwrap(), auc_oracle(&scores));
        }

        #[test]
        fn auc_invariant_under_monotone_maps(scores in scores_strategy()) {
            let mapped: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| ((3.0 * s).exp() - 7.0, l)).collect();
            prop_assert_eq!(compute_auc(&scores).unwrap(), compute_auc(&mapped).unwrap());
        }

        #[test]
        fn threshold_is_f1_optimal(scores in scores_strategy()) {
            let threshold = select_threshold(&scores).unwrap();
            let f1_at = |t: f64| {
                let tp = scores.iter().filter(|&&(s, l)| l && s >= t).count();
                let fp = scores.iter().filter(|&&(s, l)| !l && s >= t).count();
                let positives = scores.iter().filter(|x| x.1).count();
                f1(tp, fp, positives - tp)
            };
            let best = (0..=1000).map(|i| f1_at(i as f64 / 1000.0)).fold(0.0, f64::max);
            prop_assert!((f1_at(threshold) - best).abs() < 1e-12);
        }
    }
}
