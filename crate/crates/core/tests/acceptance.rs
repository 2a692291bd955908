//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic;
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stackdedup::knowledge::mine;
use stackdedup::pipeline::{index_dumps, load_dump_dir};
use stackdedup::sequence::ComponentOccurrence;
use stackdedup::stopwords::precision_curve;
use stackdedup::store::{BUGS_FILE, SEQUENCES_FILE};
use stackdedup::synth::{generate, Corpus, SynthConfig, DUMP_DIR, SCAFFOLD_FUNCTIONS, SOURCE_DIR};
use stackdedup::trainer::{
    assign_top_components, build_groups, evaluate_methods, pair_features, sample_pairs, score_all,
    split_by_group, train, tune_parameters, SamplingOptions,
};
use stackdedup::{
    compute_auc, derive_stop_words, lcs_match, similarity, to_component_sequence, BugId, ComponentMap,
    ComponentSequence, CrashDump, Detector, FailureRecord, FailureStore, ModelParams, PairFeatures,
    Preprocessor, StackFrame, StopWordList, Verdict, Window,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("worked example", worked_example),
        ("similarity properties", similarity_properties),
        ("lcs oracle", lcs_oracle),
        ("auc oracle", auc_oracle),
        ("grid tuning at desk scale", grid_tuning),
        ("stop-word curve", stop_word_curve),
        ("union-find grouping", union_find_grouping),
        ("triage determinism", triage_determinism),
        ("manifest mining", manifest_mining),
    ];
    let mut failures = 0;
    for (number, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", number + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {} {name}: {detail}", number + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn frames(names: &[String]) -> Vec<StackFrame> {
    names
        .iter()
        .enumerate()
        .map(|(index, name)| StackFrame {
            index,
            raw_text: format!("{index}: {name}()"),
            function_name: name.clone(),
        })
        .collect()
}

/// Eight components against three; C0, C2 and C5 match with function runs
/// differing in 0, 1 and 2 of 5 names.
fn worked_example() -> Check {
    let run = |c: usize, changed: usize| -> Vec<String> {
        (0..5)
            .map(|k| if k >= 5 - changed { format!("c{c}::alt{k}") } else { format!("c{c}::f{k}") })
            .collect()
    };
    let mut map = ComponentMap::default();
    let long: Vec<String> = (0..8).flat_map(|c| run(c, 0)).collect();
    let short: Vec<String> = [(0, 0), (2, 1), (5, 2)].iter().flat_map(|&(c, k)| run(c, k)).collect();
    for name in long.iter().chain(&short) {
        let component = name.split("::").next().unwrap().to_uppercase();
        map.function_to_component.insert(name.clone(), component);
    }
    let a = to_component_sequence("long", &frames(&long), &map).map_err(err)?;
    let b = to_component_sequence("short", &frames(&short), &map).map_err(err)?;
    let params = ModelParams { m: 1.0, n: 1.0, threshold: 0.5 };

    let started = Instant::now();
    let score = similarity(&a, &b, &params).map_err(err)?;
    let elapsed = started.elapsed();

    let terms: Vec<(usize, f64)> = score.matched.iter().map(|p| (p.pos, p.dist)).collect();
    ensure(
        terms.len() == 3
            && terms.iter().zip([(0, 0.0), (2, 0.2), (5, 0.4)]).all(|(&(p, d), (ep, ed))| p == ep && (d - ed).abs() < 1e-12),
        || format!("matched terms {terms:?}"),
    )?;
    ensure((score.value - 0.705).abs() <= 0.001, || format!("score {:.6}", score.value))?;
    ensure(elapsed < Duration::from_millis(1), || format!("took {elapsed:?}"))?;
    Ok(format!("score {:.5} in {elapsed:?}", score.value))
}

fn random_sequence(rng: &mut ChaCha8Rng, id: &str, max_len: usize, alphabet: usize) -> ComponentSequence {
    let len = rng.gen_range(1..=max_len);
    let mut occurrences: Vec<ComponentOccurrence> = Vec::with_capacity(len);
    while occurrences.len() < len {
        let component = format!("K{}", rng.gen_range(0..alphabet));
        if occurrences.last().is_some_and(|o| o.component == component) {
            continue;
        }
        let functions = (0..rng.gen_range(1..=4)).map(|_| format!("f{}", rng.gen_range(0..5))).collect();
        occurrences.push(ComponentOccurrence {
            component,
            position: occurrences.len(),
            functions,
        });
    }
    ComponentSequence {
        dump_id: id.to_string(),
        occurrences,
    }
}

fn similarity_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut strict, mut flat) = (0, 0);
    for case in 0..10_000 {
        let a = random_sequence(&mut rng, "a", 20, 8);
        let b = random_sequence(&mut rng, "b", 20, 8);
        let m = rng.gen_range(0.0..=2.0);
        let n = rng.gen_range(0.05..=2.0);
        let params = ModelParams { m, n, threshold: 0.5 };
        let ab = similarity(&a, &b, &params).map_err(err)?.value;
        let ba = similarity(&b, &a, &params).map_err(err)?.value;
        ensure(ab == ba, || format!("case {case}: asymmetric {ab} vs {ba}"))?;
        ensure((0.0..=1.0).contains(&ab), || format!("case {case}: out of bounds {ab}"))?;
        let own = similarity(&a, &a, &params).map_err(err)?.value;
        ensure((own - 1.0).abs() <= 1e-9, || format!("case {case}: self-similarity {own}"))?;

        // Raise one matched dist and rescore with everything else fixed.
        let features = PairFeatures::compute(&a, &b).map_err(err)?;
        if features.terms.is_empty() {
            continue;
        }
        let k = rng.gen_range(0..features.terms.len());
        let (pos, dist) = features.terms[k];
        if dist >= 1.0 {
            continue;
        }
        let raised = rng.gen_range(dist..=1.0).max(dist + 1e-3).min(1.0);
        let mut worse = features.clone();
        worse.terms[k].1 = raised;
        let (before, after) = (features.score(m, n), worse.score(m, n));
        ensure(before == ab, || format!("case {case}: feature score {before} differs from {ab}"))?;
        // The exact decrease can be smaller than the spacing of doubles near
        // `before`; it must then at least not increase.
        let denominator: f64 = (0..=features.max_position).map(|i| (-m * i as f64).exp()).sum();
        let exact_drop = (-m * pos as f64).exp() * ((-n * dist).exp() - (-n * raised).exp()) / denominator;
        if exact_drop > 8.0 * f64::EPSILON * before.max(f64::MIN_POSITIVE) {
            strict += 1;
            ensure(after < before, || format!("case {case}: {after} not below {before}"))?;
        } else {
            flat += 1;
            ensure(after <= before, || format!("case {case}: {after} above {before}"))?;
        }
    }
    Ok(format!("10000 pairs; {strict} strict decreases, {flat} below double resolution"))
}

fn brute_force_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let picked: Vec<&str> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        if picked.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if picked.iter().all(|x| it.any(|y| y == x)) {
            best = picked.len();
        }
    }
    best
}

fn lcs_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 2_000;
    for case in 0..cases {
        let a = random_sequence(&mut rng, "a", 8, 4);
        let b = random_sequence(&mut rng, "b", 8, 4);
        let names = |s: &ComponentSequence| s.components().map(str::to_string).collect::<Vec<_>>();
        let (na, nb) = (names(&a), names(&b));
        let (ra, rb): (Vec<&str>, Vec<&str>) = (na.iter().map(String::as_str).collect(), nb.iter().map(String::as_str).collect());
        let matched = lcs_match(&a, &b);
        let expected = brute_force_lcs(&ra, &rb);
        ensure(matched.len() == expected, || format!("case {case}: {} vs oracle {expected}", matched.len()))?;
        let valid = matched.windows(2).all(|w| w[0].pos_a < w[1].pos_a && w[0].pos_b < w[1].pos_b)
            && matched.iter().all(|p| ra[p.pos_a] == rb[p.pos_b] && p.pos == p.pos_a.max(p.pos_b));
        ensure(valid, || format!("case {case}: invalid alignment {matched:?}"))?;
    }
    Ok(format!("{cases} pairs agree with enumeration"))
}

fn auc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sets = 0;
    while sets < 1_000 {
        let len = rng.gen_range(2..=30);
        let levels = rng.gen_range(1..=10);
        let scores: Vec<(f64, bool)> =
            (0..len).map(|_| (rng.gen_range(0..levels) as f64 / levels as f64, rng.gen_bool(0.5))).collect();
        let positives: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
        let negatives: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let mut doubled_wins = 0u64;
        for p in &positives {
            for q in &negatives {
                doubled_wins += if p > q { 2 } else if p == q { 1 } else { 0 };
            }
        }
        let expected = doubled_wins as f64 / (2 * positives.len() * negatives.len()) as f64;
        let auc = compute_auc(&scores).map_err(err)?;
        ensure(auc == expected, || format!("set {sets}: {auc} vs {expected} for {scores:?}"))?;
        sets += 1;
    }
    Ok(format!("{sets} score sets match the pairwise count exactly"))
}

/// A synthetic corpus written to disk and loaded back through the pipeline.
struct Workspace {
    _dir: tempfile::TempDir,
    corpus: Corpus,
    map: ComponentMap,
    dumps: HashMap<String, CrashDump>,
}

fn workspace(config: &SynthConfig) -> Result<Workspace, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let corpus = generate(config).map_err(err)?;
    corpus.write(dir.path()).map_err(err)?;
    let map = mine(&dir.path().join(SOURCE_DIR), None).map_err(err)?.map;
    let dumps = index_dumps(load_dump_dir(&dir.path().join(DUMP_DIR)).map_err(err)?).map_err(err)?;
    Ok(Workspace { _dir: dir, corpus, map, dumps })
}

fn all_dumps(ws: &Workspace) -> Vec<CrashDump> {
    let mut dumps: Vec<CrashDump> = ws.dumps.values().cloned().collect();
    dumps.sort_by(|a, b| a.dump_id.cmp(&b.dump_id));
    dumps
}

fn grid_tuning() -> Check {
    let ws = workspace(&SynthConfig::default())?;
    let mut stopwords = derive_stop_words(&all_dumps(&ws)).map_err(err)?;
    stopwords.set_cutoff(stopwords.count_at_least(0.9));
    let prep = Preprocessor::new(&ws.map, &stopwords);
    let sequences = prep.sequences(&ws.dumps).map_err(err)?;
    let mut records = ws.corpus.history.clone();
    assign_top_components(&mut records, &sequences).map_err(err)?;
    let grouping = build_groups(&records);

    // Timing run: every within-group pair plus enough negatives for 1,000 pairs.
    let (all_pairs, _) = sample_pairs(&grouping, &records, None, &SamplingOptions::default()).map_err(err)?;
    let wanted = 1_000 - all_pairs.positives();
    let options = SamplingOptions { negatives: Some(wanted), seed: 5, ..Default::default() };
    let (timed, report) = sample_pairs(&grouping, &records, None, &options).map_err(err)?;
    ensure(report.insufficient_negatives.is_none() && timed.pairs.len() == 1_000, || {
        format!("sampled {} pairs, {report:?}", timed.pairs.len())
    })?;
    let started = Instant::now();
    let features = pair_features(&timed, &sequences).map_err(err)?;
    let tuning = tune_parameters(&features).map_err(err)?;
    let elapsed = started.elapsed();
    ensure(tuning.grid.len() == 441, || format!("{} grid points", tuning.grid.len()))?;
    ensure(elapsed < Duration::from_secs(60), || format!("grid took {elapsed:?}"))?;

    // Directional check: tune on half the groups, evaluate on the rest.
    let (train_records, test_records) = split_by_group(&grouping, &records, 0.5, 5);
    let balanced = SamplingOptions { seed: 5, ..Default::default() };
    let (train_set, _) = sample_pairs(&build_groups(&train_records), &train_records, None, &balanced).map_err(err)?;
    let (test_set, _) = sample_pairs(&build_groups(&test_records), &test_records, None, &balanced).map_err(err)?;
    let (params, _) = train(&pair_features(&train_set, &sequences).map_err(err)?).map_err(err)?;
    let methods = evaluate_methods(&test_set, &ws.dumps, &prep, &params).map_err(err)?;
    let test_features = pair_features(&test_set, &sequences).map_err(err)?;
    let untuned = compute_auc(&score_all(&test_features, 0.0, 0.0)).map_err(err)?;
    let tuned = methods.component_model;
    let summary = format!(
        "grid {elapsed:?} over {} pairs; held-out {} pairs: tuned (m={:.1}, n={:.1}) {tuned:.4}, (0,0) {untuned:.4}, prefix {:.4}, edit {:.4}",
        timed.pairs.len(),
        test_set.pairs.len(),
        params.m,
        params.n,
        methods.prefix_match,
        methods.edit_distance,
    ) + if methods.prefix_match > methods.edit_distance { "" } else { " (edit baseline outranks prefix here)" };
    ensure(tuned >= untuned && tuned >= methods.prefix_match && tuned >= methods.edit_distance, || summary.clone())?;
    Ok(summary)
}

fn stop_word_curve() -> Check {
    let ws = workspace(&SynthConfig::default())?;
    let list = derive_stop_words(&all_dumps(&ws)).map_err(err)?;
    let top: Vec<&str> = list.entries().iter().take(2).map(|(name, _)| name.as_str()).collect();
    let scaffold: BTreeSet<&str> = SCAFFOLD_FUNCTIONS.into_iter().collect();
    ensure(top.iter().copied().collect::<BTreeSet<_>>() == scaffold, || format!("top entries {top:?}"))?;

    let sequences = Preprocessor::new(&ws.map, &StopWordList::default()).sequences(&ws.dumps).map_err(err)?;
    let mut records = ws.corpus.history.clone();
    assign_top_components(&mut records, &sequences).map_err(err)?;
    let options = SamplingOptions { seed: 6, ..Default::default() };
    let (pairs, _) = sample_pairs(&build_groups(&records), &records, None, &options).map_err(err)?;
    let curve = precision_curve(&pairs, &ws.dumps, &ws.map, &list, &ModelParams::default(), 2).map_err(err)?;
    let at = |l: usize| curve.iter().find(|(c, _)| *c == l).map(|&(_, p)| p).unwrap_or(f64::NAN);
    let (p0, p2) = (at(0), at(2));
    ensure(p2 >= p0, || format!("precision {p0:.4} at cutoff 0, {p2:.4} at cutoff 2"))?;
    Ok(format!("scaffold ranks 1-2; precision {p0:.4} -> {p2:.4} over {} pairs", pairs.pairs.len()))
}

fn record(bug_id: BugId, dupe_of: Option<BugId>) -> FailureRecord {
    FailureRecord {
        bug_id,
        dump_id: format!("d{bug_id}"),
        resolution: String::new(),
        creation_time: DateTime::from_timestamp(1_600_000_000 + bug_id as i64, 0).unwrap(),
        dupe_of,
        dump_path: String::new(),
        top_component: String::new(),
    }
}

/// Connected components of the undirected `dupe_of` graph by repeated search.
fn closure_groups(records: &[FailureRecord]) -> Vec<Vec<BugId>> {
    let known: BTreeSet<BugId> = records.iter().map(|r| r.bug_id).collect();
    let mut adjacent: BTreeMap<BugId, Vec<BugId>> = known.iter().map(|&b| (b, Vec::new())).collect();
    for r in records {
        if let Some(target) = r.dupe_of.filter(|t| known.contains(t)) {
            adjacent.get_mut(&r.bug_id).unwrap().push(target);
            adjacent.get_mut(&target).unwrap().push(r.bug_id);
        }
    }
    let mut seen = BTreeSet::new();
    let mut groups = Vec::new();
    for &start in &known {
        if !seen.insert(start) {
            continue;
        }
        let mut group = vec![start];
        let mut frontier = vec![start];
        while let Some(bug) = frontier.pop() {
            for &next in &adjacent[&bug] {
                if seen.insert(next) {
                    group.push(next);
                    frontier.push(next);
                }
            }
        }
        group.sort();
        groups.push(group);
    }
    groups.sort();
    groups
}

fn union_find_grouping() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut chains, mut cycles) = (0, 0);
    for graph in 0..200 {
        let n = rng.gen_range(1..=50) as BugId;
        let mut records: Vec<FailureRecord> = match graph % 4 {
            // A single chain, each bug pointing at its predecessor.
            0 => {
                chains += 1;
                (1..=n).map(|b| record(b, (b > 1).then(|| b - 1))).collect()
            }
            // A cycle through every bug.
            1 => {
                cycles += 1;
                (1..=n).map(|b| record(b, Some(b % n + 1))).collect()
            }
            // Random links, some pointing at bugs that do not exist.
            _ => (1..=n)
                .map(|b| {
                    let link = match rng.gen_range(0..10) {
                        0..=4 => None,
                        5 => Some(n + rng.gen_range(1..=5)),
                        _ => Some(rng.gen_range(1..=n)),
                    };
                    record(b, link)
                })
                .collect(),
        };
        use rand::seq::SliceRandom;
        records.shuffle(&mut rng);
        let grouping = build_groups(&records);
        let expected = closure_groups(&records);
        ensure(grouping.groups == expected, || format!("graph {graph}: {:?} vs {expected:?}", grouping.groups))?;
        let canonical = grouping.canonical();
        ensure(
            expected.iter().all(|g| g.iter().all(|b| canonical[b] == g[0])),
            || format!("graph {graph}: canonical ids differ"),
        )?;
    }
    Ok(format!("200 graphs ({chains} chains, {cycles} cycles) match the closure"))
}

/// Ingests every dump of a small corpus in creation order, then re-detects
/// each one. Returns the concatenated reports and store files.
fn triage_scenario() -> Result<(String, usize), String> {
    let config = SynthConfig { groups: 12, per_group: 3, seed: 11, ..Default::default() };
    let ws = workspace(&config)?;
    let mut stopwords = derive_stop_words(&all_dumps(&ws)).map_err(err)?;
    stopwords.set_cutoff(stopwords.count_at_least(0.9));
    let prep = Preprocessor::new(&ws.map, &stopwords);
    let detector = Detector::new(prep, ModelParams::default(), Window::Days(30)).map_err(err)?;
    let texts: HashMap<&str, &str> = ws.corpus.dumps.iter().map(|d| (d.dump_id.as_str(), d.text.as_str())).collect();
    let mut history = ws.corpus.history.clone();
    history.sort_by_key(|r| (r.creation_time, r.bug_id));

    let store_dir = tempfile::tempdir().map_err(err)?;
    let mut store = FailureStore::open(store_dir.path()).map_err(err)?;
    let mut report = String::new();
    for r in &history {
        let path = format!("{DUMP_DIR}/{}.dump", r.dump_id);
        let triage = detector.ingest(&mut store, texts[r.dump_id.as_str()], &path, r.creation_time).map_err(err)?;
        report.push_str(&triage.result.to_json_line());
        report.push('\n');
    }

    let now: DateTime<Utc> = history.last().unwrap().creation_time;
    let canonical = store.grouping().canonical();
    for r in &history {
        let stored = store.get_by_dump(&r.dump_id).ok_or_else(|| format!("{} not stored", r.dump_id))?;
        let (_, sequence) = detector.prepare(texts[r.dump_id.as_str()]).map_err(err)?;
        let result = detector.detect(&store, &sequence, now).map_err(err)?;
        let want = canonical[&stored.record.bug_id];
        match result.verdict {
            Verdict::Duplicate { bug_id, score, .. } if bug_id == want && score == 1.0 => {}
            ref other => return Err(format!("{}: {other:?}, expected duplicate of {want}", r.dump_id)),
        }
        report.push_str(&result.to_json_line());
        report.push('\n');
    }
    for file in [BUGS_FILE, SEQUENCES_FILE] {
        report.push_str(&fs::read_to_string(store_dir.path().join(file)).map_err(err)?);
    }
    Ok((report, history.len()))
}

fn triage_determinism() -> Check {
    let (first, count) = triage_scenario()?;
    let (second, _) = triage_scenario()?;
    ensure(first == second, || "reruns differ".into())?;
    Ok(format!("{count} dumps re-detected as duplicates; rerun byte-identical ({} bytes)", first.len()))
}

fn write(root: &Path, relative: &str, text: &str) -> Result<(), String> {
    let path = root.join(relative);
    fs::create_dir_all(path.parent().unwrap()).map_err(err)?;
    fs::write(path, text).map_err(err)
}

const LISTING: &str = r#"# All files in this directory and its sub-
# directories belong to ComponentA
SET_COMPONENT("ComponentA")
# Except for File1 and File2 which belong to
# ComponentB
SET_COMPONENT("ComponentB"
    File1
    File2
)
"#;

fn manifest_mining() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let root = dir.path();
    write(root, "CMakeLists.txt", LISTING)?;
    let files = [
        ("File1", "fn one::first\n", "ComponentB"),
        ("File2", "fn two::second\n", "ComponentB"),
        ("File3", "fn three::third\n", "ComponentA"),
        ("main.cpp", "fn app::main\n", "ComponentA"),
        ("nested/File1", "fn nested::first\n", "ComponentA"),
        ("nested/deeper/leaf.cpp", "fn leaf::work\n", "ComponentA"),
        ("other/CMakeLists.txt", "SET_COMPONENT(\"ComponentC\")\n", ""),
        ("other/inner/util.cpp", "fn util::help\n", "ComponentC"),
    ];
    for (path, text, _) in files {
        write(root, path, text)?;
    }

    let mining = mine(root, None).map_err(err)?;
    for (path, text, component) in files {
        if component.is_empty() {
            continue;
        }
        let got = mining.map.file_to_component.get(path).map(String::as_str);
        ensure(got == Some(component), || format!("{path} -> {got:?}, expected {component}"))?;
        let function = text.trim().trim_start_matches("fn ");
        let got = mining.map.component_of(function);
        ensure(got == Some(component), || format!("{function} -> {got:?}, expected {component}"))?;
    }
    ensure(mining.warnings.is_empty(), || format!("warnings {:?}", mining.warnings))?;

    let snapshot = mining.map.to_snapshot();
    let again = mine(root, None).map_err(err)?.map.to_snapshot();
    ensure(snapshot == again, || "re-mined snapshot differs".into())?;
    Ok(format!("{} files mapped; re-mine byte-identical", mining.map.file_to_component.len()))
}
