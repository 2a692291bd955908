//! Component sequences: call stacks lifted to component granularity.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dump::StackFrame;
use crate::edit::normalized_levenshtein;
use crate::error::{Error, Result};
use crate::knowledge::ComponentMap;

/// Prefix of the pseudo-component given to functions missing from the map.
pub const UNKNOWN_PREFIX: &str = "UNKNOWN:";

/// A run of consecutive frames belonging to one component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentOccurrence {
    pub component: String,
    pub position: usize,
    /// Function names of the collapsed run, top first. Never empty.
    pub functions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSequence {
    pub dump_id: String,
    pub occurrences: Vec<ComponentOccurrence>,
}

impl ComponentSequence {
    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn top_component(&self) -> Option<&str> {
        self.occurrences.first().map(|o| o.component.as_str())
    }

    pub fn components(&self) -> impl Iterator<Item = &str> {
        self.occurrences.iter().map(|o| o.component.as_str())
    }

    /// Builds a sequence from `(component, function)` steps, collapsing runs.
    pub fn from_steps<C, F>(dump_id: impl Into<String>, steps: impl IntoIterator<Item = (C, F)>) -> Self
    where
        C: Into<String>,
        F: Into<String>,
    {
        let mut occurrences: Vec<ComponentOccurrence> = Vec::new();
        for (component, function) in steps {
            let component = component.into();
            match occurrences.last_mut() {
                Some(last) if last.component == component => last.functions.push(function.into()),
                _ => occurrences.push(ComponentOccurrence {
                    position: occurrences.len(),
                    component,
                    functions: vec![function.into()],
                }),
            }
        }
        ComponentSequence {
            dump_id: dump_id.into(),
            occurrences,
        }
    }
}

/// Debug rendering: one `position<TAB>component<TAB>fn1,fn2,...` line per occurrence.
impl fmt::Display for ComponentSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.occurrences {
            writeln!(f, "{}\t{}\t{}", o.position, o.component, o.functions.join(","))?;
        }
        Ok(())
    }
}

/// Maps every frame to its component (or `UNKNOWN:<function>`) and collapses
/// consecutive frames of the same component into one occurrence.
pub fn to_component_sequence(
    dump_id: &str,
    frames: &[StackFrame],
    map: &ComponentMap,
) -> Result<ComponentSequence> {
    if frames.is_empty() {
        return Err(Error::EmptyStack(Some(dump_id.to_string())));
    }
    let steps = frames.iter().map(|frame| {
        let name = frame.function_name.as_str();
        let component = match map.component_of(name) {
            Some(c) => c.to_string(),
            None => format!("{UNKNOWN_PREFIX}{name}"),
        };
        (component, name)
    });
    Ok(ComponentSequence::from_steps(dump_id, steps))
}

/// Token-level Levenshtein distance between the two runs' function lists,
/// normalized by the longer run.
pub fn component_distance(a: &ComponentOccurrence, b: &ComponentOccurrence) -> Result<f64> {
    if a.component != b.component {
        return Err(Error::ComponentMismatch(a.component.clone(), b.component.clone()));
    }
    Ok(normalized_levenshtein(&a.functions, &b.functions))
}
