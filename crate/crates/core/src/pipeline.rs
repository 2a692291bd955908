//! Dump -> filtered frames -> component sequence, shared by training,
//! evaluation and online detection.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dump::{parse_dump, CrashDump, StackFrame};
use crate::error::{Error, Result};
use crate::knowledge::ComponentMap;
use crate::sequence::{to_component_sequence, ComponentSequence};
use crate::stopwords::{filter_stop_words, StopWordList};

/// File extension of dump files picked up from corpus directories.
pub const DUMP_EXTENSION: &str = "dump";

#[derive(Debug, Clone, Copy)]
pub struct Preprocessor<'a> {
    pub map: &'a ComponentMap,
    pub stopwords: &'a StopWordList,
}

impl<'a> Preprocessor<'a> {
    pub fn new(map: &'a ComponentMap, stopwords: &'a StopWordList) -> Self {
        Preprocessor { map, stopwords }
    }

    /// Backtrace frames with active stop words removed.
    pub fn frames(&self, dump: &CrashDump) -> Vec<StackFrame> {
        filter_stop_words(&dump.backtrace_frames, self.stopwords)
    }

    pub fn function_names(&self, dump: &CrashDump) -> Vec<String> {
        self.frames(dump).into_iter().map(|f| f.function_name).collect()
    }

    pub fn sequence(&self, dump: &CrashDump) -> Result<ComponentSequence> {
        to_component_sequence(&dump.dump_id, &self.frames(dump), self.map)
    }

    pub fn sequences<'d>(
        &self,
        dumps: impl IntoParallelIterator<Item = (&'d String, &'d CrashDump)>,
    ) -> Result<HashMap<String, ComponentSequence>> {
        dumps
            .into_par_iter()
            .map(|(id, dump)| Ok((id.clone(), self.sequence(dump)?)))
            .collect()
    }
}

/// Parses every `*.dump` file under `dir` (non-recursive), sorted by file name.
pub fn load_dump_dir(dir: &Path) -> Result<Vec<(PathBuf, CrashDump)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == DUMP_EXTENSION))
        .collect();
    paths.sort();
    paths
        .into_par_iter()
        .map(|path| {
            let dump = load_dump(&path)?;
            Ok((path, dump))
        })
        .collect()
}

pub fn load_dump(path: &Path) -> Result<CrashDump> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dump(&text).map_err(|e| match e {
        Error::EmptyStack(_) => Error::EmptyStack(Some(path.display().to_string())),
        other => other,
    })
}

/// Indexes dumps by id; a repeated id is an error.
pub fn index_dumps(dumps: Vec<(PathBuf, CrashDump)>) -> Result<HashMap<String, CrashDump>> {
    let mut by_id = HashMap::with_capacity(dumps.len());
    for (_, dump) in dumps {
        let id = dump.dump_id.clone();
        if by_id.insert(id.clone(), dump).is_some() {
            return Err(Error::DuplicateDumpId(id));
        }
    }
    Ok(by_id)
}
