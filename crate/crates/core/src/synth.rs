//! Seeded synthetic corpora: a source tree with component manifests, crash
//! dumps grouped by root cause, and the bug history linking them.
//!
//! Every group has a base stack: a root-cause run in one of a few "top"
//! components, a few middle runs, and a deep tail shared by all groups with
//! the same top component. Each dump of a group is a noisy copy of the base
//! (same-component substitutions, deletions and insertions at rate `noise`),
//! prefixed by scaffold frames that appear in every backtrace and in no
//! exception block.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::knowledge::MANIFEST_FILE;
use crate::store::record_line;
use crate::trainer::FailureRecord;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const DUMP_DIR: &str = "dumps";
pub const SOURCE_DIR: &str = "src";

/// Scaffolding frames pushed on top of every backtrace.
pub const SCAFFOLD_FUNCTIONS: [&str; 2] = ["rt::CrashHandler::onSignal", "rt::DumpWriter::writeStack"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub groups: usize,
    pub per_group: usize,
    /// Per-frame mutation probability.
    pub noise: f64,
    pub seed: u64,
    pub components: usize,
    pub functions_per_component: usize,
    /// Number of components that root causes are drawn from.
    pub top_components: usize,
    /// Probability that a dump carries an exception block.
    pub exception_rate: f64,
    /// Probability of a symbol-less frame after each frame.
    pub unsymbolized_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            groups: 50,
            per_group: 4,
            noise: 0.2,
            seed: 7,
            components: 24,
            functions_per_component: 40,
            top_components: 6,
            exception_rate: 0.7,
            unsymbolized_rate: 0.05,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.groups == 0 || self.per_group == 0 {
            return bad("groups and per-group must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must be in [0, 1]");
        }
        if self.components < self.top_components + 4 || self.top_components == 0 {
            return bad("need at least top-components + 4 components");
        }
        if self.functions_per_component < 4 {
            return bad("need at least 4 functions per component");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Frame {
    component: usize,
    function: usize,
}

/// One generated dump.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDump {
    pub dump_id: String,
    pub group: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Relative path -> file contents of the source tree.
    pub sources: Vec<(String, String)>,
    pub dumps: Vec<SynthDump>,
    pub history: Vec<FailureRecord>,
}

fn component_name(c: usize) -> String {
    format!("Comp{c:02}")
}

fn function_name(c: usize, f: usize) -> String {
    format!("ns{c:02}::Unit{}::op{f:02}", f % 4)
}

/// Source files hosting component `c`'s functions; `f % 4` picks the file.
fn source_file(c: usize, f: usize) -> String {
    let dir = format!("{SOURCE_DIR}/area{}/comp{c:02}", c % 4);
    match f % 4 {
        3 => format!("{dir}/impl/unit3.cpp"),
        u => format!("{dir}/unit{u}.cpp"),
    }
}

const RETURN_TYPES: [&str; 6] = ["void", "int", "bool", "std::string", "char*", "ptime::Timestamp"];
const PARAMETERS: [&str; 5] = ["", "int", "char*, unsigned long", "const Context&", "std::vector<int, std::allocator<int>>&"];

pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (components, per) = (config.components, config.functions_per_component);
    // The last three components form the deep tails.
    let deep: Vec<usize> = (components - 3..components).collect();
    let middle_pool: Vec<usize> = (config.top_components..components - 3).collect();

    let tails: Vec<Vec<Frame>> = (0..config.top_components)
        .map(|_| {
            deep.iter()
                .flat_map(|&c| {
                    let run = rng.gen_range(2..=3);
                    (0..run).map(|_| Frame { component: c, function: rng.gen_range(0..per) }).collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();

    let bases: Vec<(Vec<Frame>, usize)> = (0..config.groups)
        .map(|_| {
            let top = rng.gen_range(0..config.top_components);
            let mut stack = Vec::new();
            let mut root: Vec<usize> = (0..per).collect();
            root.shuffle(&mut rng);
            let root_len = rng.gen_range(2..=4);
            stack.extend(root[..root_len].iter().map(|&f| Frame { component: top, function: f }));
            for _ in 0..rng.gen_range(2..=3) {
                let c = *middle_pool.choose(&mut rng).expect("middle pool is non-empty");
                for _ in 0..rng.gen_range(1..=3) {
                    stack.push(Frame { component: c, function: rng.gen_range(0..per) });
                }
            }
            stack.extend(tails[top].iter().cloned());
            (stack, root_len)
        })
        .collect();

    let total = config.groups * config.per_group;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let mut creation_rank = vec![0; total];
    for (rank, &slot) in order.iter().enumerate() {
        creation_rank[slot] = rank;
    }
    let epoch: DateTime<Utc> = DateTime::from_timestamp(1_546_300_800, 0).expect("valid epoch");

    let mut dumps = Vec::with_capacity(total);
    for (group, (base, root_len)) in bases.iter().enumerate() {
        for k in 0..config.per_group {
            let (stack, root_len) = mutate(base, *root_len, config, &mut rng);
            let dump_id = format!("g{group:03}-{k:02}");
            let time = epoch + Duration::hours(creation_rank[group * config.per_group + k] as i64);
            let with_exception = rng.gen_bool(config.exception_rate);
            let text = render_dump(&dump_id, time, &stack, root_len, with_exception, config, &mut rng);
            dumps.push(SynthDump { dump_id, group, text });
        }
    }

    // Bug ids follow creation order; later members of a group point at a
    // random earlier member, which yields chains as well as stars.
    let mut history: Vec<FailureRecord> = Vec::with_capacity(total);
    let mut earlier: Vec<Vec<u64>> = vec![Vec::new(); config.groups];
    for (rank, &slot) in order.iter().enumerate() {
        let dump = &dumps[slot];
        let bug_id = rank as u64 + 1;
        let dupe_of = earlier[dump.group].choose(&mut rng).copied();
        earlier[dump.group].push(bug_id);
        history.push(FailureRecord {
            bug_id,
            dump_id: dump.dump_id.clone(),
            resolution: if dupe_of.is_some() { "DUPLICATE".into() } else { "FIXED".into() },
            creation_time: epoch + Duration::hours(rank as i64),
            dupe_of,
            dump_path: format!("{DUMP_DIR}/{}.dump", dump.dump_id),
            top_component: String::new(),
        });
    }

    Ok(Corpus {
        sources: render_sources(config),
        dumps,
        history,
    })
}

fn mutate(base: &[Frame], root_len: usize, config: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<Frame>, usize) {
    let per = config.functions_per_component;
    let mut out = Vec::with_capacity(base.len() + 4);
    let mut new_root_len = 0;
    for (i, frame) in base.iter().enumerate() {
        let mut kept = true;
        if rng.gen_bool(config.noise) {
            match rng.gen_range(0..4) {
                0 | 1 => {
                    let mut function = rng.gen_range(0..per - 1);
                    if function >= frame.function {
                        function += 1;
                    }
                    out.push(Frame { component: frame.component, function });
                    kept = false;
                }
                2 => kept = false,
                _ => out.push(Frame {
                    component: rng.gen_range(0..config.components),
                    function: rng.gen_range(0..per),
                }),
            }
        }
        if kept {
            out.push(frame.clone());
        }
        if i + 1 == root_len {
            new_root_len = out.len();
        }
    }
    if out.is_empty() {
        out.push(base[0].clone());
        new_root_len = 1;
    }
    (out, new_root_len.max(1))
}

fn frame_line(index: usize, frame: &Frame, rng: &mut ChaCha8Rng) -> String {
    let ret = RETURN_TYPES.choose(rng).expect("non-empty");
    let params = PARAMETERS.choose(rng).expect("non-empty");
    let file = source_file(frame.component, frame.function);
    let file = file.rsplit('/').next().unwrap_or(&file);
    format!(
        "{index}: {ret} {}({params}) + 0x{:x} at {file}:{}",
        function_name(frame.component, frame.function),
        rng.gen_range(0x10..0x4000u32),
        rng.gen_range(10..2000u32)
    )
}

fn render_dump(
    dump_id: &str,
    time: DateTime<Utc>,
    stack: &[Frame],
    root_len: usize,
    with_exception: bool,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "[HEADER]");
    let _ = writeln!(text, "pid: {}", rng.gen_range(1000..60000u32));
    let _ = writeln!(text, "time: {}", time.to_rfc3339_opts(SecondsFormat::Secs, true));
    let _ = writeln!(text, "dump_id: {dump_id}");
    let _ = writeln!(text, "[BUILD]");
    let _ = writeln!(text, "version: 2.00.{:03}", rng.gen_range(0..100u32));
    let _ = writeln!(text, "[CRASH_STACK]");

    if with_exception {
        let _ = writeln!(text, "exception:");
        let depth = rng.gen_range(1..=root_len.min(stack.len()));
        for (i, frame) in stack[..depth].iter().enumerate() {
            let _ = writeln!(text, "{}", frame_line(i, frame, rng));
        }
    }

    let _ = writeln!(text, "backtrace:");
    let mut index = 0;
    for name in SCAFFOLD_FUNCTIONS {
        let _ = writeln!(text, "{index}: void {name}(int) + 0x{:x} at crash.cpp:{}", rng.gen_range(0x10..0x400u32), rng.gen_range(10..500u32));
        index += 1;
    }
    for frame in stack {
        let _ = writeln!(text, "{}", frame_line(index, frame, rng));
        index += 1;
        if rng.gen_bool(0.15) {
            let _ = writeln!(text, " SFrame: 0x{:012x}", rng.gen::<u32>());
            let _ = writeln!(text, " Params: 0x{:x}", rng.gen::<u16>());
            let _ = writeln!(text, " Regs: rip=0x{:x}", rng.gen::<u32>());
        }
        if rng.gen_bool(config.unsymbolized_rate) {
            let _ = writeln!(text, "{index}: 0x{:012x} <no symbol>", rng.gen::<u32>());
            index += 1;
        }
    }
    let _ = writeln!(text, "[CPUINFO]");
    let _ = writeln!(text, "cores: 64");
    let _ = writeln!(text, "[MEMMAP]");
    let _ = writeln!(text, "0x00400000-0x00800000 r-xp hdbindexserver");
    text
}

fn render_sources(config: &SynthConfig) -> Vec<(String, String)> {
    let mut files: std::collections::BTreeMap<String, String> = Default::default();
    files.insert(format!("{SOURCE_DIR}/{MANIFEST_FILE}"), "SET_COMPONENT(\"Misc\")\n".into());
    for area in 0..4 {
        files.insert(format!("{SOURCE_DIR}/area{area}/README"), "area notes\n".into());
    }
    for c in 0..config.components {
        let dir = format!("{SOURCE_DIR}/area{}/comp{c:02}", c % 4);
        files.insert(
            format!("{dir}/{MANIFEST_FILE}"),
            format!("# Component manifest\nSET_COMPONENT(\"{}\")\n", component_name(c)),
        );
        for f in 0..config.functions_per_component {
            let body = files.entry(source_file(c, f)).or_default();
            let _ = writeln!(body, "fn {}", function_name(c, f));
        }
    }
    // Scaffolding lives in a runtime directory whose crash file belongs to a
    // separate component via a file override.
    files.insert(
        format!("{SOURCE_DIR}/runtime/{MANIFEST_FILE}"),
        "SET_COMPONENT(\"Runtime\")\nSET_COMPONENT(\"CrashSupport\"\n    crash.cpp\n)\n".into(),
    );
    files.insert(
        format!("{SOURCE_DIR}/runtime/crash.cpp"),
        SCAFFOLD_FUNCTIONS.iter().map(|f| format!("fn {f}\n")).collect(),
    );
    files.insert(format!("{SOURCE_DIR}/runtime/main.cpp"), "fn rt::main\n".into());
    files.into_iter().collect()
}

impl Corpus {
    /// Writes `src/`, `dumps/` and `history.jsonl` under `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        let write = |path: &Path, text: &str| -> Result<()> {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        };
        for (relative, text) in &self.sources {
            write(&out.join(relative), text)?;
        }
        for dump in &self.dumps {
            write(&out.join(DUMP_DIR).join(format!("{}.dump", dump.dump_id)), &dump.text)?;
        }
        let history: String = self.history.iter().map(|r| record_line(r) + "\n").collect();
        write(&out.join(HISTORY_FILE), &history)
    }
}
