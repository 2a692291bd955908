//! Command-line front end.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for data errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::detector::Detector;
use crate::error::Error;
use crate::knowledge::{mine, ComponentMap};
use crate::params::ModelParams;
use crate::pipeline::{index_dumps, load_dump_dir, Preprocessor};
use crate::stopwords::{derive_stop_words, plateau_cutoff, precision_curve, StopWordList};
use crate::store::{load_records, FailureStore, Window};
use crate::synth::{generate, SynthConfig};
use crate::trainer::{
    assign_top_components, build_groups, evaluate_methods, pair_features, sample_pairs, split_by_group, train, NegativeMatch,
    SamplingOptions, TrainingSet,
};

#[derive(Debug, Parser)]
#[command(name = "stackdedup", version, about = "Duplicate crash detection from call stacks")]
struct Cli {
    /// TOML file supplying defaults for the shared options.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mine a Function -> Component map from a source tree.
    Mine {
        src_root: PathBuf,
        /// Precomputed `file<TAB>function` index used instead of scanning sources.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Derive a stop-word list from a directory of dumps.
    Stopwords {
        corpus_dir: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Fixed cutoff; otherwise chosen from the precision curve or `--min-score`.
        #[arg(long)]
        cutoff: Option<usize>,
        /// Without `--pairs`, every entry scoring at least this is a stop word.
        #[arg(long, default_value_t = 0.9)]
        min_score: f64,
        /// Labeled pairs for the precision curve (needs `--map`).
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        max_cutoff: usize,
        #[command(flatten)]
        shared: Shared,
    },
    /// Build labeled pairs from bug history.
    Sample {
        history: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Split groups into a second, held-out pair file.
        #[arg(long)]
        test_output: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
        /// Negative count; defaults to the positive count.
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long, value_enum, default_value_t = NegativeMatchArg::Top)]
        negative_match: NegativeMatchArg,
        #[command(flatten)]
        shared: Shared,
    },
    /// Tune (m, n) and the decision threshold on labeled pairs.
    Train {
        pairs_file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Write the full grid report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
    },
    /// AUC of the component model and both baselines on labeled pairs.
    Evaluate {
        pairs_file: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Triage a dump and record it in the store.
    Ingest {
        dump: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Triage a dump without modifying the store.
    Detect {
        dump: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Generate a seeded synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 50)]
        groups: usize,
        #[arg(long, default_value_t = 4)]
        per_group: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 24)]
        components: usize,
        #[arg(long, default_value_t = 40)]
        functions_per_component: usize,
        #[arg(long, default_value = "corpus")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NegativeMatchArg {
    Top,
    Any,
}

#[derive(Debug, Args, Default)]
struct Shared {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Directory of `*.dump` files.
    #[arg(long)]
    dumps: Option<PathBuf>,
    #[arg(long, conflicts_with = "window_last")]
    window_days: Option<u32>,
    #[arg(long)]
    window_last: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the threshold from the parameter file.
    #[arg(long)]
    threshold: Option<f64>,
    /// Detection time (RFC 3339); defaults to the current time.
    #[arg(long)]
    now: Option<String>,
}

/// Optional file-based defaults; flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    map: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    params: Option<PathBuf>,
    store: Option<PathBuf>,
    dumps: Option<PathBuf>,
    window_days: Option<u32>,
    window_last: Option<usize>,
    seed: Option<u64>,
    threshold: Option<f64>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

struct Resolved {
    shared: Shared,
}

impl Resolved {
    fn new(mut shared: Shared, config: &Config) -> Self {
        shared.map = shared.map.or_else(|| config.map.clone());
        shared.stopwords = shared.stopwords.or_else(|| config.stopwords.clone());
        shared.params = shared.params.or_else(|| config.params.clone());
        shared.store = shared.store.or_else(|| config.store.clone());
        shared.dumps = shared.dumps.or_else(|| config.dumps.clone());
        if shared.window_days.is_none() && shared.window_last.is_none() {
            shared.window_days = config.window_days;
            shared.window_last = config.window_last;
        }
        shared.seed = shared.seed.or(config.seed);
        shared.threshold = shared.threshold.or(config.threshold);
        Resolved { shared }
    }

    fn path(&self, value: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
        value
            .clone()
            .ok_or_else(|| Failure::Usage(format!("--{flag} is required (or set `{flag}` in --config)")))
    }

    fn map(&self) -> Result<ComponentMap, Failure> {
        Ok(ComponentMap::load(&self.path(&self.shared.map, "map")?)?)
    }

    fn stopwords(&self) -> Result<StopWordList, Failure> {
        match &self.shared.stopwords {
            Some(path) => Ok(StopWordList::load(path)?),
            None => Ok(StopWordList::default()),
        }
    }

    fn params(&self) -> Result<ModelParams, Failure> {
        let mut params = ModelParams::load(&self.path(&self.shared.params, "params")?)?;
        if let Some(threshold) = self.shared.threshold {
            params.threshold = threshold;
            params.validate()?;
        }
        Ok(params)
    }

    fn window(&self) -> Window {
        match (self.shared.window_days, self.shared.window_last) {
            (_, Some(last)) => Window::LastRecords(last),
            (Some(days), None) => Window::Days(days),
            (None, None) => Window::default(),
        }
    }

    fn now(&self) -> Result<DateTime<Utc>, Failure> {
        match &self.shared.now {
            Some(text) => DateTime::parse_from_rfc3339(text)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| Failure::Usage(format!("--now: {e}"))),
            None => Ok(Utc::now()),
        }
    }

    fn seed(&self) -> u64 {
        self.shared.seed.unwrap_or(0)
    }

    fn dumps(&self) -> Result<std::collections::HashMap<String, crate::dump::CrashDump>, Failure> {
        let dir = self.path(&self.shared.dumps, "dumps")?;
        Ok(index_dumps(load_dump_dir(&dir)?)?)
    }
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Outcome {
    match path {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        None => out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}

fn say(err: &mut dyn Write, line: impl AsRef<str>) {
    let _ = writeln!(err, "{}", line.as_ref());
}

/// Runs the command line `args` (program name first), writing reports to
/// `out` and diagnostics to `err`. Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let config = match &cli.config {
        Some(path) => match fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| toml::from_str::<Config>(&t).map_err(|e| e.to_string()))
        {
            Ok(c) => c,
            Err(e) => {
                say(err, format!("error: --config {}: {e}", path.display()));
                return 1;
            }
        },
        None => Config::default(),
    };
    match dispatch(cli.command, &config, out, err) {
        Ok(()) => 0,
        Err(Failure::Usage(message)) => {
            say(err, format!("error: {message}"));
            1
        }
        Err(Failure::Data(e)) => {
            say(err, format!("error: {e}"));
            2
        }
    }
}

fn dispatch(command: Command, config: &Config, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    match command {
        Command::Mine { src_root, index, output } => {
            let mining = mine(&src_root, index.as_deref())?;
            for warning in &mining.warnings {
                say(err, format!("warning: {warning}"));
            }
            let stats = mining.map.stats();
            say(
                err,
                format!(
                    "functions={} components={} unmapped_files={} skipped_lines={}",
                    stats.functions,
                    stats.components,
                    mining.unmapped_files.len(),
                    mining.skipped_source_lines
                ),
            );
            write_output(output.as_deref(), &mining.map.to_snapshot(), out)
        }

        Command::Stopwords { corpus_dir, output, cutoff, min_score, pairs, max_cutoff, shared } => {
            let ctx = Resolved::new(shared, config);
            let corpus: Vec<_> = load_dump_dir(&corpus_dir)?.into_iter().map(|(_, d)| d).collect();
            log::info!("loaded {} dumps from {}", corpus.len(), corpus_dir.display());
            let mut list = derive_stop_words(&corpus)?;
            let chosen = match (cutoff, &pairs) {
                (Some(fixed), _) => fixed,
                (None, Some(pairs_path)) => {
                    let map = ctx.map()?;
                    let params = match ctx.shared.params {
                        Some(_) => ctx.params()?,
                        None => ModelParams::default(),
                    };
                    let set = TrainingSet::load(pairs_path)?;
                    let dumps = index_dumps(corpus.iter().map(|d| (PathBuf::new(), d.clone())).collect())?;
                    let curve = precision_curve(&set, &dumps, &map, &list, &params, max_cutoff)?;
                    let mut table = String::from("cutoff\tprecision\n");
                    for (l, p) in &curve {
                        table.push_str(&format!("{l}\t{p:.6}\n"));
                    }
                    if output.is_some() {
                        write_output(None, &table, out)?;
                    } else {
                        let _ = err.write_all(table.as_bytes());
                    }
                    plateau_cutoff(&curve)
                }
                (None, None) => list.count_at_least(min_score),
            };
            list.set_cutoff(chosen);
            say(err, format!("dumps={} entries={} cutoff={}", corpus.len(), list.len(), list.cutoff()));
            write_output(output.as_deref(), &list.to_file_text(), out)
        }

        Command::Sample {
            history,
            output,
            test_output,
            train_fraction,
            negatives,
            negative_match,
            shared,
        } => {
            let ctx = Resolved::new(shared, config);
            let (map, stopwords, dumps) = (ctx.map()?, ctx.stopwords()?, ctx.dumps()?);
            let prep = Preprocessor::new(&map, &stopwords);
            let mut records = load_records(&history)?;
            let sequences = prep.sequences(&dumps)?;
            assign_top_components(&mut records, &sequences)?;
            let grouping = build_groups(&records);
            for (bug, target) in &grouping.dangling {
                say(err, format!("warning: bug {bug} is a duplicate of unknown bug {target}"));
            }
            let options = SamplingOptions {
                negative_match: match negative_match {
                    NegativeMatchArg::Top => NegativeMatch::TopComponent,
                    NegativeMatchArg::Any => NegativeMatch::AnyComponent,
                },
                negatives,
                seed: ctx.seed(),
            };
            let mut emit = |records: &[crate::trainer::FailureRecord], path: &Path, name: &str| -> Outcome {
                let grouping = build_groups(records);
                let (set, report) = sample_pairs(&grouping, records, Some(&sequences), &options)?;
                if let Some((available, wanted)) = report.insufficient_negatives {
                    say(err, format!("warning: {name}: only {available} negative candidates for {wanted} wanted"));
                }
                say(
                    err,
                    format!("{name}: groups={} positives={} negatives={}", grouping.groups.len(), set.positives(), set.negatives()),
                );
                write_output(Some(path), &set.to_file_text(), &mut std::io::sink())
            };
            match test_output {
                Some(test_path) => {
                    let (train_records, test_records) = split_by_group(&grouping, &records, train_fraction, ctx.seed());
                    emit(&train_records, &output, "train")?;
                    emit(&test_records, &test_path, "test")
                }
                None => emit(&records, &output, "all"),
            }
        }

        Command::Train { pairs_file, output, report, shared } => {
            let ctx = Resolved::new(shared, config);
            let (map, stopwords, dumps) = (ctx.map()?, ctx.stopwords()?, ctx.dumps()?);
            let set = TrainingSet::load(&pairs_file)?;
            let prep = Preprocessor::new(&map, &stopwords);
            let sequences = prep.sequences(&dumps)?;
            let features = pair_features(&set, &sequences)?;
            let started = std::time::Instant::now();
            let (mut params, tuning) = train(&features)?;
            log::info!("grid search over {} pairs took {:?}", features.len(), started.elapsed());
            if let Some(threshold) = ctx.shared.threshold {
                params.threshold = threshold;
                params.validate()?;
            }
            if let Some(path) = report {
                write_output(Some(&path), &tuning.report(), out)?;
            }
            say(
                err,
                format!(
                    "pairs={} m={:.1} n={:.1} auc={:.6} threshold={}",
                    set.pairs.len(),
                    params.m,
                    params.n,
                    tuning.auc,
                    params.threshold
                ),
            );
            write_output(output.as_deref(), &params.to_file_text(), out)
        }

        Command::Evaluate { pairs_file, shared } => {
            let ctx = Resolved::new(shared, config);
            let (map, stopwords, dumps, params) = (ctx.map()?, ctx.stopwords()?, ctx.dumps()?, ctx.params()?);
            let set = TrainingSet::load(&pairs_file)?;
            let aucs = evaluate_methods(&set, &dumps, &Preprocessor::new(&map, &stopwords), &params)?;
            write_output(None, &aucs.table(), out)
        }

        Command::Ingest { dump, shared } => {
            let ctx = Resolved::new(shared, config);
            let (map, stopwords, params, now) = (ctx.map()?, ctx.stopwords()?, ctx.params()?, ctx.now()?);
            let mut store = FailureStore::open(&ctx.path(&ctx.shared.store, "store")?)?;
            let detector = Detector::new(Preprocessor::new(&map, &stopwords), params, ctx.window())?;
            let text = fs::read_to_string(&dump).map_err(|e| Error::io(&dump, e))?;
            let triage = detector.ingest(&mut store, &text, &dump.display().to_string(), now)?;
            say(err, format!("recorded bug {} for dump {}", triage.record.bug_id, triage.record.dump_id));
            write_output(None, &(triage.result.to_json_line() + "\n"), out)
        }

        Command::Detect { dump, shared } => {
            let ctx = Resolved::new(shared, config);
            let (map, stopwords, params, now) = (ctx.map()?, ctx.stopwords()?, ctx.params()?, ctx.now()?);
            let store = FailureStore::open(&ctx.path(&ctx.shared.store, "store")?)?;
            let detector = Detector::new(Preprocessor::new(&map, &stopwords), params, ctx.window())?;
            let text = fs::read_to_string(&dump).map_err(|e| Error::io(&dump, e))?;
            let (_, sequence) = detector.prepare(&text)?;
            let result = detector.detect(&store, &sequence, now)?;
            write_output(None, &(result.to_json_line() + "\n"), out)
        }

        Command::Synth { groups, per_group, noise, seed, components, functions_per_component, out: dir } => {
            let synth = SynthConfig {
                groups,
                per_group,
                noise,
                seed: seed.or(config.seed).unwrap_or(SynthConfig::default().seed),
                components,
                functions_per_component,
                ..SynthConfig::default()
            };
            let corpus = generate(&synth).map_err(|e| match e {
                Error::InvalidParameter(m) => Failure::Usage(m),
                other => Failure::Data(other),
            })?;
            corpus.write(&dir)?;
            say(err, format!("wrote {} dumps to {}", corpus.dumps.len(), dir.display()));
            Ok(())
        }
    }
}
