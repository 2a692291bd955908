//! Mining Function -> Component knowledge from a source tree.
//!
//! Components are assigned to files by `SET_COMPONENT` directives in
//! `CMakeLists.txt` manifests. `SET_COMPONENT("A")` assigns every file of the
//! manifest's directory and its subdirectories to `A`; `SET_COMPONENT("B" f1 f2)`
//! assigns just the listed files of that directory to `B`. Functions are read
//! from source files (`fn qualified::name` declaration lines) or from a
//! precomputed index, and composed with the file mapping.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::SystemTime;

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use regex::Regex;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "CMakeLists.txt";
pub const SNAPSHOT_VERSION: u32 = 1;

static DIRECTIVE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bSET_COMPONENT\b").unwrap());
static DIRECTIVE_ARGS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*\(\s*"([^"\n]*)"([^()"]*)\)"#).unwrap());
static DECLARATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*fn\s+([A-Za-z_~][^\s(]*)").unwrap());

/// The `SET_COMPONENT` content of one manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComponentManifest {
    /// Directory relative to the mining root, `/`-separated; empty for the root.
    pub directory: String,
    pub default_component: Option<String>,
    /// File name (relative to `directory`) -> component.
    pub file_overrides: BTreeMap<String, String>,
}

/// Parses the text of one manifest. Later directives win over earlier ones;
/// each override is reported as a warning.
pub fn parse_manifest(
    directory: &str,
    path: &Path,
    text: &str,
) -> Result<(ComponentManifest, Vec<String>)> {
    let text = strip_comments(text);
    let mut manifest = ComponentManifest {
        directory: directory.to_string(),
        ..Default::default()
    };
    let mut warnings = Vec::new();

    for found in DIRECTIVE.find_iter(&text) {
        let line = text[..found.start()].matches('\n').count() + 1;
        let syntax_error = |message: &str| Error::ManifestSyntax {
            file: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let caps = DIRECTIVE_ARGS
            .captures(&text[found.end()..])
            .ok_or_else(|| syntax_error("expected (\"Component\" [files...])"))?;
        let component = caps[1].trim();
        if component.is_empty() {
            return Err(syntax_error("empty component name"));
        }
        let files: Vec<&str> = caps[2].split_whitespace().collect();

        if files.is_empty() {
            if let Some(previous) = manifest.default_component.replace(component.to_string()) {
                warnings.push(format!(
                    "{}:{line}: default component {previous:?} replaced by {component:?}",
                    path.display()
                ));
            }
            continue;
        }
        for file in files {
            if file.contains('/') {
                warnings.push(format!(
                    "{}:{line}: override {file:?} is outside the manifest directory, ignored",
                    path.display()
                ));
                continue;
            }
            if let Some(previous) = manifest
                .file_overrides
                .insert(file.to_string(), component.to_string())
            {
                if previous != component {
                    warnings.push(format!(
                        "{}:{line}: {file} reassigned from {previous:?} to {component:?}",
                        path.display()
                    ));
                }
            }
        }
    }
    Ok((manifest, warnings))
}

/// Blanks out `#` comments while keeping line structure.
fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|line| {
            let mut in_quotes = false;
            for (at, c) in line.char_indices() {
                match c {
                    '"' => in_quotes = !in_quotes,
                    '#' if !in_quotes => return &line[..at],
                    _ => {}
                }
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Result of walking a tree for manifests.
#[derive(Debug, Clone, Default)]
pub struct ManifestScan {
    pub manifests: Vec<ComponentManifest>,
    /// Every regular non-manifest file found, relative to the root.
    pub files: Vec<String>,
    pub file_to_component: BTreeMap<String, String>,
    pub unmapped_files: Vec<String>,
    pub warnings: Vec<String>,
    /// Newest modification time among visited files.
    pub newest_mtime: Option<SystemTime>,
}

/// Breadth-first walk from `root`, collecting manifests and files and
/// resolving each file's component.
pub fn parse_component_manifests(root: &Path) -> Result<ManifestScan> {
    let mut scan = ManifestScan::default();
    let mut queue = VecDeque::from([(root.to_path_buf(), String::new())]);

    while let Some((dir, relative)) = queue.pop_front() {
        let mut entries: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&dir, e))?;
        entries.sort_by_key(|e| e.file_name());

        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            let path = entry.path();
            let file_type = entry.file_type().map_err(|e| Error::io(&path, e))?;
            let child = join(&relative, &name);
            if file_type.is_dir() {
                queue.push_back((path, child));
                continue;
            }
            if !file_type.is_file() {
                continue;
            }
            if let Ok(modified) = entry.metadata().and_then(|m| m.modified()) {
                scan.newest_mtime = Some(scan.newest_mtime.map_or(modified, |t| t.max(modified)));
            }
            if name == MANIFEST_FILE {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let (manifest, warnings) = parse_manifest(&relative, &path, &text)?;
                scan.warnings.extend(warnings);
                scan.manifests.push(manifest);
            } else {
                scan.files.push(child);
            }
        }
    }

    let (mapping, unmapped) = resolve_components(&scan.manifests, &scan.files);
    for manifest in &scan.manifests {
        for file in manifest.file_overrides.keys() {
            let full = join(&manifest.directory, file);
            if !mapping.contains_key(&full) {
                scan.warnings.push(format!("override names missing file {full}"));
            }
        }
    }
    scan.file_to_component = mapping;
    scan.unmapped_files = unmapped;
    Ok(scan)
}

/// Assigns each file its own directory's override, else the default of the
/// nearest ancestor directory (itself included) that declares one.
///
/// Only ancestor relations matter, so the result does not depend on the
/// order of `manifests` or `files`.
pub fn resolve_components(
    manifests: &[ComponentManifest],
    files: &[String],
) -> (BTreeMap<String, String>, Vec<String>) {
    let by_dir: HashMap<&str, &ComponentManifest> =
        manifests.iter().map(|m| (m.directory.as_str(), m)).collect();
    let mut mapping = BTreeMap::new();
    let mut unmapped = BTreeSet::new();

    for file in files {
        let (dir, name) = match file.rsplit_once('/') {
            Some((dir, name)) => (dir, name),
            None => ("", file.as_str()),
        };
        let overridden = by_dir
            .get(dir)
            .and_then(|m| m.file_overrides.get(name))
            .cloned();
        let component = overridden.or_else(|| {
            ancestors(dir).find_map(|d| by_dir.get(d).and_then(|m| m.default_component.clone()))
        });
        match component {
            Some(c) => {
                mapping.insert(file.clone(), c);
            }
            None => {
                unmapped.insert(file.clone());
            }
        }
    }
    (mapping, unmapped.into_iter().collect())
}

/// `a/b/c`, `a/b`, `a`, `` in that order.
fn ancestors(dir: &str) -> impl Iterator<Item = &str> {
    let mut next = Some(dir);
    std::iter::from_fn(move || {
        let current = next?;
        next = if current.is_empty() {
            None
        } else {
            Some(current.rsplit_once('/').map_or("", |(parent, _)| parent))
        };
        Some(current)
    })
}

fn join(dir: &str, name: &str) -> String {
    if dir.is_empty() {
        name.to_string()
    } else {
        format!("{dir}/{name}")
    }
}

/// Declared names of one source file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub names: Vec<String>,
    pub skipped_lines: usize,
}

/// Reads `fn qualified::name` declaration lines; other non-blank lines are
/// counted as skipped. Duplicates are dropped, first occurrence kept.
pub fn extract_function_names(source: &str) -> Extraction {
    let mut seen = BTreeSet::new();
    let mut out = Extraction::default();
    for line in source.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match DECLARATION.captures(line) {
            Some(caps) => {
                let name = &caps[1];
                if seen.insert(name.to_string()) {
                    out.names.push(name.to_string());
                }
            }
            None => out.skipped_lines += 1,
        }
    }
    out
}

/// Loads a `file-path<TAB>qualified-name` index into per-file name lists.
pub fn load_function_index(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut per_file: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, n + 1, "expected file-path<TAB>qualified-name"))?;
        let names = per_file.entry(file.trim().to_string()).or_default();
        let name = name.trim().to_string();
        if !names.contains(&name) {
            names.push(name);
        }
    }
    Ok(per_file)
}

/// Function -> component knowledge for one tree snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComponentMap {
    pub function_to_component: BTreeMap<String, String>,
    pub file_to_component: BTreeMap<String, String>,
    /// When the mined sources were last modified.
    pub source_time: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapStats {
    pub functions: usize,
    pub components: usize,
}

impl ComponentMap {
    pub fn component_of(&self, function: &str) -> Option<&str> {
        self.function_to_component.get(function).map(String::as_str)
    }

    pub fn stats(&self) -> MapStats {
        let components: BTreeSet<&String> = self
            .function_to_component
            .values()
            .chain(self.file_to_component.values())
            .collect();
        MapStats {
            functions: self.function_to_component.len(),
            components: components.len(),
        }
    }

    /// Snapshot text: a version line, an optional source-time line, then
    /// `qualified-name<TAB>component` records sorted by name.
    pub fn to_snapshot(&self) -> String {
        let mut out = format!("#version {SNAPSHOT_VERSION}\n");
        if let Some(time) = self.source_time {
            out.push_str(&format!(
                "#mined-from {}\n",
                time.to_rfc3339_opts(SecondsFormat::Secs, true)
            ));
        }
        for (function, component) in &self.function_to_component {
            out.push_str(function);
            out.push('\t');
            out.push_str(component);
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == format!("#version {SNAPSHOT_VERSION}") => {}
            _ => {
                return Err(Error::format(
                    path,
                    1,
                    format!("expected `#version {SNAPSHOT_VERSION}` header"),
                ))
            }
        }
        let mut map = ComponentMap::default();
        for (n, line) in lines {
            if let Some(time) = line.strip_prefix("#mined-from ") {
                let parsed = DateTime::parse_from_rfc3339(time.trim())
                    .map_err(|e| Error::format(path, n + 1, e.to_string()))?;
                map.source_time = Some(parsed.with_timezone(&Utc));
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (function, component) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, n + 1, "expected qualified-name<TAB>component"))?;
            map.function_to_component
                .insert(function.to_string(), component.to_string());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot(path, &text)
    }
}

/// Composes file -> component with file -> functions. A function declared in
/// several files takes the component of the smallest file path; a conflicting
/// assignment is reported as a warning. Files without a component are skipped
/// with a warning.
pub fn build_function_component_map(
    file_to_component: &BTreeMap<String, String>,
    per_file_functions: &BTreeMap<String, Vec<String>>,
) -> (ComponentMap, Vec<String>) {
    let mut warnings = Vec::new();
    let mut assigned: BTreeMap<String, (String, String)> = BTreeMap::new();

    // BTreeMap iteration is path-ordered, so the first assignment is the smallest path.
    for (file, functions) in per_file_functions {
        let Some(component) = file_to_component.get(file) else {
            if !functions.is_empty() {
                warnings.push(format!("{file}: no component, {} functions skipped", functions.len()));
            }
            continue;
        };
        for function in functions {
            match assigned.get(function) {
                None => {
                    assigned.insert(function.clone(), (file.clone(), component.clone()));
                }
                Some((first_file, first_component)) if first_component != component => {
                    warnings.push(format!(
                        "{function}: declared in {first_file} ({first_component}) and {file} ({component}); keeping {first_component}"
                    ));
                }
                Some(_) => {}
            }
        }
    }

    let map = ComponentMap {
        function_to_component: assigned
            .into_iter()
            .map(|(function, (_, component))| (function, component))
            .collect(),
        file_to_component: file_to_component.clone(),
        source_time: None,
    };
    (map, warnings)
}

/// Everything produced by a mining run.
#[derive(Debug, Clone)]
pub struct Mining {
    pub map: ComponentMap,
    pub manifests: Vec<ComponentManifest>,
    pub unmapped_files: Vec<String>,
    pub skipped_source_lines: usize,
    pub warnings: Vec<String>,
}

/// Mines `root`. Functions come from `index` when given, otherwise from the
/// declaration lines of every file that has a component.
pub fn mine(root: &Path, index: Option<&Path>) -> Result<Mining> {
    let scan = parse_component_manifests(root)?;
    let mut skipped_source_lines = 0;

    let per_file = match index {
        Some(index) => load_function_index(index)?,
        None => {
            let extracted: Vec<(String, Extraction)> = scan
                .file_to_component
                .par_iter()
                .map(|(file, _)| {
                    let path: PathBuf = root.join(file);
                    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    Ok((file.clone(), extract_function_names(&String::from_utf8_lossy(&bytes))))
                })
                .collect::<Result<_>>()?;
            extracted
                .into_iter()
                .map(|(file, extraction)| {
                    skipped_source_lines += extraction.skipped_lines;
                    (file, extraction.names)
                })
                .collect()
        }
    };

    let (mut map, composition_warnings) =
        build_function_component_map(&scan.file_to_component, &per_file);
    map.source_time = scan.newest_mtime.map(|t| {
        let time: DateTime<Utc> = t.into();
        // Second resolution keeps snapshots stable across filesystems.
        DateTime::from_timestamp(time.timestamp(), 0).unwrap_or(time)
    });

    let mut warnings = scan.warnings;
    warnings.extend(composition_warnings);
    Ok(Mining {
        map,
        manifests: scan.manifests,
        unmapped_files: scan.unmapped_files,
        skipped_source_lines,
        warnings,
    })
}
