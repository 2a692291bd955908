//! Online triage: score a new crash against recent failures, then either
//! bind it to the matching bug or file a new one.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::Serialize;

use crate::dump::{parse_dump, CrashDump};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::pipeline::Preprocessor;
use crate::sequence::ComponentSequence;
use crate::similarity::PairFeatures;
use crate::store::{FailureStore, Window};
use crate::trainer::{BugId, FailureRecord};

pub const DUPLICATE_RESOLUTION: &str = "DUPLICATE";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    /// Bound to the canonical bug of the best-matching failure's group.
    Duplicate {
        bug_id: BugId,
        score: f64,
        matched_dump: String,
    },
    /// No recent failure is similar enough; `bug_id` is the id a filing
    /// would receive from the store snapshot that was scored.
    New { bug_id: BugId },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub dump_id: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub candidates_considered: usize,
    pub params_used: ModelParams,
}

impl DetectionResult {
    pub fn is_duplicate(&self) -> bool {
        matches!(self.verdict, Verdict::Duplicate { .. })
    }

    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("detection results serialize")
    }
}

/// What an ingestion produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Triage {
    pub record: FailureRecord,
    pub sequence: ComponentSequence,
    pub result: DetectionResult,
}

#[derive(Debug, Clone, Copy)]
pub struct Detector<'a> {
    pub prep: Preprocessor<'a>,
    pub params: ModelParams,
    pub window: Window,
}

impl<'a> Detector<'a> {
    pub fn new(prep: Preprocessor<'a>, params: ModelParams, window: Window) -> Result<Self> {
        params.validate()?;
        Ok(Detector { prep, params, window })
    }

    /// Parse, clean, filter and sequence one dump.
    pub fn prepare(&self, dump_text: &str) -> Result<(CrashDump, ComponentSequence)> {
        let dump = parse_dump(dump_text)?;
        let sequence = self.prep.sequence(&dump)?;
        Ok((dump, sequence))
    }

    /// Scores `sequence` against every failure in the window. Ties on score
    /// go to the most recently created failure, then to the smallest bug id.
    pub fn detect(
        &self,
        store: &FailureStore,
        sequence: &ComponentSequence,
        now: DateTime<Utc>,
    ) -> Result<DetectionResult> {
        let candidates = store.recent(self.window, now);
        let scored: Vec<(f64, &FailureRecord)> = candidates
            .par_iter()
            .map(|c| {
                let score = PairFeatures::compute(sequence, &c.sequence)?.score(self.params.m, self.params.n);
                Ok((score, &c.record))
            })
            .collect::<Result<_>>()?;

        let best = scored.iter().copied().max_by(|(sa, ra), (sb, rb)| {
            sa.total_cmp(sb)
                .then(ra.creation_time.cmp(&rb.creation_time))
                .then(rb.bug_id.cmp(&ra.bug_id))
        });

        let verdict = match best {
            Some((score, record)) if score >= self.params.threshold => {
                let canonical: HashMap<BugId, BugId> = store.grouping().canonical();
                Verdict::Duplicate {
                    bug_id: canonical.get(&record.bug_id).copied().unwrap_or(record.bug_id),
                    score,
                    matched_dump: record.dump_id.clone(),
                }
            }
            _ => Verdict::New {
                bug_id: store.next_bug_id(),
            },
        };
        Ok(DetectionResult {
            dump_id: sequence.dump_id.clone(),
            verdict,
            candidates_considered: scored.len(),
            params_used: self.params,
        })
    }

    /// Records the failure: a duplicate gets `dupe_of` set to the bound bug,
    /// anything else is filed as a new bug. The bug id is allocated at write
    /// time, so the returned record is authoritative.
    pub fn bind_or_file(
        &self,
        store: &mut FailureStore,
        result: &DetectionResult,
        sequence: ComponentSequence,
        dump_path: &str,
        now: DateTime<Utc>,
    ) -> Result<FailureRecord> {
        let (dupe_of, resolution) = match &result.verdict {
            Verdict::Duplicate { bug_id, .. } => (Some(*bug_id), DUPLICATE_RESOLUTION.to_string()),
            Verdict::New { .. } => (None, String::new()),
        };
        let record = FailureRecord {
            bug_id: store.next_bug_id(),
            dump_id: sequence.dump_id.clone(),
            resolution,
            creation_time: now,
            dupe_of,
            dump_path: dump_path.to_string(),
            top_component: sequence.top_component().unwrap_or_default().to_string(),
        };
        store.append(record.clone(), sequence)?;
        Ok(record)
    }

    /// Full triage of one dump: prepare, detect against the store, then bind
    /// or file.
    pub fn ingest(
        &self,
        store: &mut FailureStore,
        dump_text: &str,
        dump_path: &str,
        now: DateTime<Utc>,
    ) -> Result<Triage> {
        let (dump, sequence) = self.prepare(dump_text)?;
        if store.contains_dump(&dump.dump_id) {
            return Err(Error::DuplicateDumpId(dump.dump_id));
        }
        let result = self.detect(store, &sequence, now)?;
        let record = self.bind_or_file(store, &result, sequence.clone(), dump_path, now)?;
        Ok(Triage {
            record,
            sequence,
            result,
        })
    }
}
