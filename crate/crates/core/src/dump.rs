//! Crash dump text parsing.
//!
//! A dump is a sequence of bracketed sections. `[HEADER]` holds `key: value`
//! lines and `[CRASH_STACK]` holds an optional `exception:` block followed by
//! a `backtrace:` block of numbered frame lines:
//!
//! ```text
//! [HEADER]
//! pid: 4242
//! time: 2019-06-01T10:00:00Z
//! [CRASH_STACK]
//! exception:
//! 0: void ns::Foo::bar(int, char*) + 0x42 at foo.cpp:10
//! backtrace:
//! 0: rt::signal_handler(int) + 0x10 at rt.cpp:5
//!  SFrame: 0x7ffd1000
//! 1: void ns::Foo::bar(int, char*) + 0x42 at foo.cpp:10
//! ```
//!
//! Frames are reduced to their bare qualified function name. Lines that carry
//! no symbol, or only auxiliary detail (`SFrame`, `Params`, `Regs`), are
//! skipped and counted in [`ParseReport`].

use std::sync::LazyLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HEADER: &str = "HEADER";
pub const CRASH_STACK: &str = "CRASH_STACK";

static SECTION_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\[([A-Za-z0-9_]+)\]\s*$").unwrap());
static FRAME_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(\d+):(.*)$").unwrap());
static LOCATION_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s+at\s+\S+:\d+\s*$").unwrap());
static OFFSET_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s*\+\s*0[xX][0-9a-fA-F]+\s*$").unwrap());
static ADDRESS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^0[xX][0-9a-fA-F]+$").unwrap());

/// One cleaned call stack frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StackFrame {
    /// Frame number as printed in the dump; 0 is the top of the stack.
    pub index: usize,
    /// The frame line as it appeared in `[CRASH_STACK]`, without its line terminator.
    pub raw_text: String,
    /// Fully qualified function name with return type, parameters and offsets removed.
    pub function_name: String,
}

/// Bookkeeping for the frame-candidate lines of `[CRASH_STACK]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub candidate_lines: usize,
    pub valid_frames: usize,
    pub skipped_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashDump {
    pub dump_id: String,
    pub header: IndexMap<String, String>,
    /// Raw text of every section keyed by its bare name (`CRASH_STACK`, `BUILD`, ...).
    pub sections: IndexMap<String, String>,
    pub exception_frames: Vec<StackFrame>,
    pub backtrace_frames: Vec<StackFrame>,
    pub report: ParseReport,
}

impl CrashDump {
    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections.get(name).map(String::as_str)
    }

    pub fn pid(&self) -> Option<&str> {
        self.header.get("pid").map(String::as_str)
    }

    pub fn time(&self) -> Option<&str> {
        self.header.get("time").map(String::as_str)
    }

    /// Function names of the backtrace, top first.
    pub fn backtrace_names(&self) -> Vec<&str> {
        self.backtrace_frames
            .iter()
            .map(|f| f.function_name.as_str())
            .collect()
    }
}

/// Parses a complete dump file.
///
/// The dump id is the header's `dump_id` value when present, otherwise a
/// digest of the whole text.
pub fn parse_dump(text: &str) -> Result<CrashDump> {
    let sections = split_sections(text)?;

    let header_text = sections
        .get(HEADER)
        .ok_or_else(|| Error::MalformedHeader("no [HEADER] block".into()))?;
    let header = parse_header(header_text)?;

    let stack = sections
        .get(CRASH_STACK)
        .ok_or_else(|| Error::MissingSection(CRASH_STACK.into()))?;

    let dump_id = header
        .get("dump_id")
        .cloned()
        .unwrap_or_else(|| content_id(text));

    let (exception_frames, backtrace_frames, report) = parse_crash_stack(stack);
    if backtrace_frames.is_empty() {
        return Err(Error::EmptyStack(Some(dump_id)));
    }

    Ok(CrashDump {
        dump_id,
        header,
        sections,
        exception_frames,
        backtrace_frames,
        report,
    })
}

fn content_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("sha-{hex}")
}

fn split_sections(text: &str) -> Result<IndexMap<String, String>> {
    let mut sections: IndexMap<String, String> = IndexMap::new();
    let mut current: Option<String> = None;

    for line in text.lines() {
        if let Some(caps) = SECTION_LINE.captures(line) {
            let name = caps[1].to_string();
            // A repeated section name keeps appending to the first block.
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        match &current {
            Some(name) => {
                let block = sections.get_mut(name).expect("section inserted above");
                block.push_str(line);
                block.push('\n');
            }
            None if line.trim().is_empty() => {}
            None => {
                return Err(Error::MalformedHeader(format!(
                    "content before the first section: {line:?}"
                )))
            }
        }
    }
    Ok(sections)
}

fn parse_header(block: &str) -> Result<IndexMap<String, String>> {
    let mut header = IndexMap::new();
    for line in block.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::MalformedHeader(format!("expected `key: value`, got {line:?}")))?;
        header.insert(key.trim().to_string(), value.trim().to_string());
    }
    for required in ["pid", "time"] {
        if !header.contains_key(required) {
            return Err(Error::MalformedHeader(format!("missing `{required}`")));
        }
    }
    Ok(header)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Exception,
    Backtrace,
}

fn parse_crash_stack(block: &str) -> (Vec<StackFrame>, Vec<StackFrame>, ParseReport) {
    let mut exception = Vec::new();
    let mut backtrace = Vec::new();
    let mut report = ParseReport::default();
    // Frames before any marker belong to a backtrace-only stack.
    let mut target = Block::Backtrace;

    for line in block.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "exception:" => {
                target = Block::Exception;
                continue;
            }
            "backtrace:" => {
                target = Block::Backtrace;
                continue;
            }
            _ => {}
        }
        report.candidate_lines += 1;
        match clean_frame(line) {
            Some(frame) => {
                report.valid_frames += 1;
                match target {
                    Block::Exception => exception.push(frame),
                    Block::Backtrace => backtrace.push(frame),
                }
            }
            None => report.skipped_lines += 1,
        }
    }
    (exception, backtrace, report)
}

/// Reduces one `[CRASH_STACK]` line to a frame, or `None` when the line has
/// no usable symbol.
pub fn clean_frame(raw_line: &str) -> Option<StackFrame> {
    let raw_text = raw_line.trim_end_matches(['\r', '\n']);
    let caps = FRAME_PREFIX.captures(raw_text)?;
    let index: usize = caps[1].parse().ok()?;
    let mut rest = caps[2].trim();

    // Leading addresses.
    while let Some((first, tail)) = split_first_token(rest) {
        if ADDRESS.is_match(first) {
            rest = tail;
        } else {
            break;
        }
    }
    if rest.is_empty() || rest.starts_with('<') {
        return None;
    }
    // `SFrame:`, `Params:`, `Regs:` and similar detail lines.
    if let Some((first, _)) = split_first_token(rest) {
        if first.ends_with(':') && !first.ends_with("::") {
            return None;
        }
    }

    let mut text = rest.to_string();
    if let Some(m) = LOCATION_SUFFIX.find(&text) {
        text.truncate(m.start());
    }
    if let Some(m) = OFFSET_SUFFIX.find(&text) {
        text.truncate(m.start());
    }
    let without_params = strip_parameters(&text);
    let name = strip_return_type(without_params.trim());

    let name: String = name
        .trim_start_matches(['*', '&'])
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    if name.is_empty() || name == "??" || ADDRESS.is_match(&name) || name.starts_with('<') {
        return None;
    }

    Some(StackFrame {
        index,
        raw_text: raw_text.to_string(),
        function_name: name,
    })
}

fn split_first_token(text: &str) -> Option<(&str, &str)> {
    let text = text.trim_start();
    if text.is_empty() {
        return None;
    }
    match text.find(char::is_whitespace) {
        Some(at) => Some((&text[..at], text[at..].trim_start())),
        None => Some((text, "")),
    }
}

/// Removes the first parameter list (outside template brackets) and
/// everything after it, such as trailing `const` qualifiers.
fn strip_parameters(text: &str) -> &str {
    let mut depth = 0usize;
    for (at, c) in text.char_indices() {
        match c {
            '<' => depth += 1,
            '>' => depth = depth.saturating_sub(1),
            '(' if depth == 0 && at > 0 => return &text[..at],
            _ => {}
        }
    }
    text
}

/// Drops the return type: everything up to the last whitespace that sits
/// outside template brackets.
fn strip_return_type(text: &str) -> &str {
    let mut depth = 0usize;
    let mut split = None;
    for (at, c) in text.char_indices() {
        match c {
            '<' => depth += 1,
            '>' => depth = depth.saturating_sub(1),
            c if c.is_whitespace() && depth == 0 => split = Some(at + c.len_utf8()),
            _ => {}
        }
    }
    match split {
        Some(at) => &text[at..],
        None => text,
    }
}
