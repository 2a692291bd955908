//! Stop words: function names that show up in nearly every backtrace but
//! carry no signal about the root cause.
//!
//! A function scores `bt(f) * (1 - ex(f))` where `bt(f)` is the fraction of
//! dumps whose backtrace contains it and `ex(f)` the fraction whose exception
//! block does. Scaffolding such as signal handlers and dump writers sits in
//! every backtrace and never in the exception, so it scores close to 1.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dump::{CrashDump, StackFrame};
use crate::error::{Error, Result};
use crate::knowledge::ComponentMap;
use crate::params::ModelParams;
use crate::pipeline::Preprocessor;
use crate::similarity::PairFeatures;
use crate::trainer::{Label, TrainingSet};

/// Ranked stop-word candidates and the number of them in force.
#[derive(Debug, Clone, PartialEq)]
pub struct StopWordList {
    entries: Vec<(String, f64)>,
    cutoff: usize,
    active: HashSet<String>,
}

impl Default for StopWordList {
    fn default() -> Self {
        StopWordList::new(Vec::new(), 0)
    }
}

impl StopWordList {
    /// Sorts `entries` by score descending then name, and clamps `cutoff`.
    pub fn new(mut entries: Vec<(String, f64)>, cutoff: usize) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut list = StopWordList {
            entries,
            cutoff: 0,
            active: HashSet::new(),
        };
        list.set_cutoff(cutoff);
        list
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_cutoff(&mut self, cutoff: usize) {
        self.cutoff = cutoff.min(self.entries.len());
        self.active = self.entries[..self.cutoff]
            .iter()
            .map(|(name, _)| name.clone())
            .collect();
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.set_cutoff(cutoff);
        self
    }

    /// Number of entries scoring at least `min_score`.
    pub fn count_at_least(&self, min_score: f64) -> usize {
        self.entries.iter().take_while(|(_, s)| *s >= min_score).count()
    }

    pub fn is_stop_word(&self, function: &str) -> bool {
        self.active.contains(function)
    }

    /// `#cutoff: L` followed by `function_name<TAB>score` lines in rank order.
    pub fn to_file_text(&self) -> String {
        let mut out = format!("#cutoff: {}\n", self.cutoff);
        for (name, score) in &self.entries {
            out.push_str(&format!("{name}\t{score}\n"));
        }
        out
    }

    pub fn from_file_text(path: &Path, text: &str) -> Result<Self> {
        let mut cutoff = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(value) = line.strip_prefix("#cutoff:") {
                let value = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(path, n + 1, "bad cutoff"))?;
                cutoff = Some(value);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let (name, score) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, n + 1, "expected function_name<TAB>score"))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| Error::format(path, n + 1, "bad score"))?;
            entries.push((name.to_string(), score));
        }
        let cutoff = cutoff.ok_or_else(|| Error::format(path, 1, "missing `#cutoff:` header"))?;
        if cutoff > entries.len() {
            return Err(Error::format(
                path,
                1,
                format!("cutoff {cutoff} exceeds {} entries", entries.len()),
            ));
        }
        Ok(StopWordList::new(entries, cutoff))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_text(path, &text)
    }
}

/// Scores every function seen in the corpus by dump-level frequency. The
/// returned list has cutoff 0.
pub fn derive_stop_words(corpus: &[CrashDump]) -> Result<StopWordList> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut backtrace_df: BTreeMap<&str, usize> = BTreeMap::new();
    let mut exception_df: BTreeMap<&str, usize> = BTreeMap::new();
    for dump in corpus {
        let in_backtrace: BTreeSet<&str> =
            dump.backtrace_frames.iter().map(|f| f.function_name.as_str()).collect();
        let in_exception: BTreeSet<&str> =
            dump.exception_frames.iter().map(|f| f.function_name.as_str()).collect();
        for name in in_backtrace {
            *backtrace_df.entry(name).or_default() += 1;
        }
        for name in in_exception {
            *exception_df.entry(name).or_default() += 1;
        }
    }
    let total = corpus.len() as f64;
    let names: BTreeSet<&str> = backtrace_df.keys().chain(exception_df.keys()).copied().collect();
    let entries = names
        .into_iter()
        .map(|name| {
            let bt = *backtrace_df.get(name).unwrap_or(&0) as f64 / total;
            let ex = *exception_df.get(name).unwrap_or(&0) as f64 / total;
            (name.to_string(), bt * (1.0 - ex))
        })
        .collect();
    Ok(StopWordList::new(entries, 0))
}

/// Drops frames whose function is an active stop word. Survivors keep their
/// order and original indices.
pub fn filter_stop_words(frames: &[StackFrame], list: &StopWordList) -> Vec<StackFrame> {
    frames
        .iter()
        .filter(|f| !list.is_stop_word(&f.function_name))
        .cloned()
        .collect()
}

/// Precision of the duplicate decision at every cutoff `0..=max_cutoff`.
///
/// Pairs where filtering removes every frame of either stack score 0.
pub fn precision_curve(
    pairs: &TrainingSet,
    dumps: &HashMap<String, CrashDump>,
    map: &ComponentMap,
    list: &StopWordList,
    params: &ModelParams,
    max_cutoff: usize,
) -> Result<Vec<(usize, f64)>> {
    params.validate()?;
    for pair in &pairs.pairs {
        for id in [&pair.dump_a, &pair.dump_b] {
            if !dumps.contains_key(id) {
                return Err(Error::UnknownDump(id.clone()));
            }
        }
    }
    let max_cutoff = max_cutoff.min(list.len());
    (0..=max_cutoff)
        .into_par_iter()
        .map(|cutoff| {
            let list = list.clone().with_cutoff(cutoff);
            let prep = Preprocessor::new(map, &list);
            let mut sequences = HashMap::new();
            for (id, dump) in dumps {
                if let Ok(seq) = prep.sequence(dump) {
                    sequences.insert(id.as_str(), seq);
                }
            }
            let (mut true_pos, mut false_pos) = (0usize, 0usize);
            for pair in &pairs.pairs {
                let score = match (sequences.get(pair.dump_a.as_str()), sequences.get(pair.dump_b.as_str())) {
                    (Some(a), Some(b)) => PairFeatures::compute(a, b)?.score(params.m, params.n),
                    _ => 0.0,
                };
                if score >= params.threshold {
                    match pair.label {
                        Label::Duplicate => true_pos += 1,
                        Label::NonDuplicate => false_pos += 1,
                    }
                }
            }
            let predicted = true_pos + false_pos;
            let precision = if predicted == 0 {
                0.0
            } else {
                true_pos as f64 / predicted as f64
            };
            Ok((cutoff, precision))
        })
        .collect()
}

/// First cutoff after which precision gains less than `0.001` over the next
/// three cutoffs.
pub fn plateau_cutoff(curve: &[(usize, f64)]) -> usize {
    const WINDOW: usize = 3;
    const MIN_GAIN: f64 = 0.001;
    for (i, &(cutoff, precision)) in curve.iter().enumerate() {
        let ahead = &curve[i + 1..(i + 1 + WINDOW).min(curve.len())];
        let best_ahead = ahead.iter().map(|&(_, p)| p).fold(f64::NEG_INFINITY, f64::max);
        if ahead.is_empty() || best_ahead - precision < MIN_GAIN {
            return cutoff;
        }
    }
    0
}
