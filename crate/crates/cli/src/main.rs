//! `wordharvest`: operator commands over a collection directory, plus the
//! corpus, simulation and experiment harnesses.
//!
//! Exit status is 0 on success, 1 when the operation fails, 2 on a usage
//! error. With `--json` every verb prints one JSON document.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use wordharvest::ballpark::{capacity_estimate, CapacityQuery};
use wordharvest::corpus::{Corpus, CorpusSpec};
use wordharvest::experiments::{perf_density, split_class, PerfDensityConfig, SplitClassConfig};
use wordharvest::harvest::{simulate_user, Action, Engine, EngineConfig, LabelBatch, LabelInput, Policy, SimulationConfig};
use wordharvest::imaging::io::read_gray;
use wordharvest::imaging::{binarize, BinaryImage};
use wordharvest::segmentation::segment_page;
use wordharvest::store::{self, ExportKind, Exports, WordlistFilter};
use wordharvest::Timestamp;

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "wordharvest", version, about = "Word-spotting label harvester for handwritten collections")]
struct Cli {
    /// Print one JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct CollectionArg {
    /// Collection directory.
    #[arg(long, short = 'c', default_value = "collection")]
    collection: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Scanned pages: dense descriptors, k = 256.
    Pages,
    /// Generated corpora: small glyphs, k = 32.
    Synthetic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportArg {
    Wordlist,
    Pagexml,
    Transcription,
}

#[derive(Subcommand)]
enum Cmd {
    /// Add page images (PNG/PGM) or a generated corpus to a collection,
    /// creating it if needed.
    Ingest {
        dir: PathBuf,
        #[command(flatten)]
        c: CollectionArg,
        /// Book id for plain image directories; defaults to the directory name.
        #[arg(long)]
        book: Option<String>,
        /// Treat each image as one pre-cut word instead of a page.
        #[arg(long)]
        words: bool,
        /// For a generated corpus: label the first N instances of each class.
        #[arg(long, default_value_t = 0)]
        seed_labels: usize,
        /// Engine settings of a new collection.
        #[arg(long, value_enum, default_value = "pages")]
        profile: Profile,
    },
    /// Segment one page image into line bands and word zones.
    Segment {
        image: PathBuf,
        #[arg(long, default_value = "page")]
        page_id: String,
    },
    /// Submit labels from a TSV file of `zone_id<TAB>label[<TAB>action]`.
    Label {
        file: PathBuf,
        #[command(flatten)]
        c: CollectionArg,
        #[arg(long, default_value = "cli")]
        user: String,
        /// Resubmitting a batch id is a no-op.
        #[arg(long)]
        batch_id: Option<String>,
    },
    /// Build features and retrain every labeled class (or the given ones).
    Train {
        #[command(flatten)]
        c: CollectionArg,
        #[arg(long = "class")]
        classes: Vec<String>,
    },
    /// Print the hit list of a class.
    Mine {
        class: String,
        #[command(flatten)]
        c: CollectionArg,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Render an export to a file or stdout.
    Export {
        #[arg(value_enum)]
        kind: ExportArg,
        #[command(flatten)]
        c: CollectionArg,
        /// Page of a transcription or PAGE-XML export.
        #[arg(long)]
        page: Option<String>,
        /// Word list: only zones of this book.
        #[arg(long)]
        book: Option<String>,
        /// Word list: only these classes.
        #[arg(long = "class")]
        classes: Vec<String>,
        /// Hypotheses must score this far above their class's EUR threshold.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        floor_offset: f64,
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Cumulative human labels per time bucket, as CSV.
    Metrics {
        #[command(flatten)]
        c: CollectionArg,
        /// Bucket width in seconds.
        #[arg(long, default_value_t = 60)]
        bucket: u64,
        #[arg(long)]
        book: Option<String>,
    },
    /// Generate a synthetic word corpus and print its hash.
    CorpusGen {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        books: usize,
        /// Write images and a manifest here.
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Run a simulated labeling session on a generated corpus.
    SimulateUser {
        #[arg(long, default_value = "prospects")]
        policy: Policy,
        #[arg(long, default_value_t = 60)]
        interactions: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        /// Save the resulting collection here.
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Experiment harnesses on generated corpora.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Training samples needed for a network with W weights.
    Capacity {
        #[arg(long)]
        weights: u64,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 5)]
        samples_per_coeff: u64,
    },
    /// Serve the HTTP API.
    Serve {
        /// TOML configuration; WORDHARVEST_* variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of collections.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Subcommand)]
enum Experiment {
    /// Held-out accuracy against labels per class; CSV rows
    /// `class_key,n_labels,test_n,accuracy,book_id`.
    PerfDensity {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Label counts to evaluate, comma separated.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<usize>,
        #[arg(long)]
        test_per_class: Option<usize>,
    },
    /// One model per class against two k-means subclass models.
    SplitClass {
        /// Corpus with two writing styles per class.
        #[arg(long)]
        planted: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// What a verb prints: text for people, a value for `--json`.
struct Out {
    text: String,
    json: Value,
}

impl Out {
    fn new(text: impl Into<String>, json: Value) -> Self {
        Self { text: text.into(), json }
    }
}

fn now() -> Timestamp {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as Timestamp)
}

fn open(path: &Path) -> Result<Engine> {
    let (engine, report) = store::load(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(t) = report.torn_events {
        log::warn!("dropped a torn event record at line {}", t.line);
    }
    Ok(engine)
}

fn open_or_create(path: &Path, profile: Profile) -> Result<Engine> {
    if store::manifest_path(path).exists() {
        return open(path);
    }
    let config = match profile {
        Profile::Pages => EngineConfig::default(),
        Profile::Synthetic => EngineConfig::synthetic(),
    };
    Ok(store::create(path, config)?)
}

fn ingest(dir: &Path, collection: &Path, book: Option<String>, words: bool, seed_labels: usize, profile: Profile) -> Result<Out> {
    let mut e = open_or_create(collection, profile)?;
    let (mut added, mut skipped) = (0, 0);
    let mut seeds = Vec::new();
    if dir.join("images").is_dir() && dir.join("manifest.json").is_file() {
        let corpus = Corpus::read(dir)?;
        for inst in &corpus.instances {
            if e.page(&inst.id).is_some() {
                skipped += 1;
                continue;
            }
            let zone = e.add_word_page(&inst.book_id, &inst.id, inst.image.clone())?;
            added += 1;
            if inst.index < seed_labels {
                seeds.push(LabelInput {
                    zone_id: zone,
                    label: inst.label.clone(),
                    action: Action::New,
                    mode: None,
                });
            }
        }
    } else {
        let book = book.unwrap_or_else(|| dir.file_name().map_or("default".into(), |n| n.to_string_lossy().into_owned()));
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png" || x == "pgm"))
            .collect();
        files.sort();
        for f in files {
            let page_id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            if e.page(&page_id).is_some() {
                skipped += 1;
                continue;
            }
            let gray = read_gray(&f)?;
            if words {
                let mask = BinaryImage::from_fn(gray.width(), gray.height(), |x, y| gray.get(x, y) < 128);
                e.add_word_page(&book, &page_id, mask)?;
            } else {
                e.ingest_page(&book, &page_id, gray)?;
            }
            added += 1;
        }
    }
    let labeled = if seeds.is_empty() {
        0
    } else {
        let batch = LabelBatch {
            batch_id: None,
            user: "ingest".into(),
            labels: seeds,
        };
        e.submit_labels(batch, now())?.accepted.len()
    };
    let zones = e.zones().count();
    Ok(Out::new(
        format!("added {added} pages, skipped {skipped}, {zones} zones, {labeled} labels"),
        json!({"added": added, "skipped": skipped, "zones": zones, "labels": labeled}),
    ))
}

fn segment(image: &Path, page_id: &str) -> Result<Out> {
    let gray = read_gray(image)?;
    let mask = binarize(&gray)?;
    let config = EngineConfig::default();
    let (bands, zones) = segment_page(page_id, &mask, &config.lines, &config.words);
    let mut text = format!("{} lines, {} zones\n", bands.len(), zones.len());
    for z in &zones {
        text.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", z.zone_id, z.line, z.x, z.y, z.w, z.h));
    }
    Ok(Out::new(text.trim_end(), json!({"bands": bands, "zones": zones})))
}

fn label(file: &Path, collection: &Path, user: String, batch_id: Option<String>) -> Result<Out> {
    let mut e = open(collection)?;
    let mut labels = Vec::new();
    for (i, line) in std::fs::read_to_string(file)?.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let action = match cols.get(2).map(|s| s.trim()) {
            None | Some("") | Some("new") => Action::New,
            Some("confirm") => Action::Confirm,
            Some("reject") => Action::Reject,
            Some(a) => return Err(format!("{}:{}: unknown action {a:?}", file.display(), i + 1).into()),
        };
        if cols.len() < 2 {
            return Err(format!("{}:{}: expected zone_id and label", file.display(), i + 1).into());
        }
        labels.push(LabelInput {
            zone_id: cols[0].to_string(),
            label: cols[1].to_string(),
            action,
            mode: None,
        });
    }
    let r = e.submit_labels(LabelBatch { batch_id, user, labels }, now())?;
    let mut text = format!("batch {}: accepted {}, rejected {}", r.batch_id, r.accepted.len(), r.rejected.len());
    for x in &r.rejected {
        text.push_str(&format!("\n  line {}: {} ({})", x.index + 1, x.zone_id, x.reason));
    }
    Ok(Out::new(text, serde_json::to_value(&r)?))
}

fn train(collection: &Path, classes: Vec<String>) -> Result<Out> {
    let mut e = open(collection)?;
    e.prepare()?;
    let keys: Vec<String> = if classes.is_empty() {
        let mut k: Vec<String> = e.label_state().positives.values().map(|p| p.class_key.clone()).collect();
        k.sort();
        k.dedup();
        k
    } else {
        classes
    };
    let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    let report = e.retrain(&refs, now())?;
    let mut text = format!("retrained {} classes", report.classes_retrained.len());
    for f in &report.failures {
        text.push_str(&format!("\n  {} failed: {}", f.class_key, f.error));
    }
    Ok(Out::new(text, serde_json::to_value(&report)?))
}

fn mine(class: &str, collection: &Path, limit: Option<usize>) -> Result<Out> {
    let e = open(collection)?;
    let h = e.hitlist(class)?;
    let entries: Vec<_> = h.entries.iter().take(limit.unwrap_or(usize::MAX)).collect();
    let mut text = format!("{} (model v{})", h.class_key, h.model_version);
    for (i, x) in entries.iter().enumerate() {
        let mark = if x.already_labeled { "*" } else { "" };
        text.push_str(&format!("\n{:>4}  {:+.4}  {}{mark}", i + 1, x.score, x.zone_id));
    }
    Ok(Out::new(
        text,
        json!({"class_key": h.class_key, "model_version": h.model_version, "entries": entries}),
    ))
}

#[allow(clippy::too_many_arguments)]
fn export(
    kind: ExportArg,
    collection: &Path,
    page: Option<String>,
    book: Option<String>,
    classes: Vec<String>,
    floor_offset: f64,
    out: Option<PathBuf>,
    json_mode: bool,
) -> Result<Option<Out>> {
    let e = open(collection)?;
    let kind = match kind {
        ExportArg::Wordlist => ExportKind::Wordlist,
        ExportArg::Pagexml => ExportKind::Pagexml,
        ExportArg::Transcription => ExportKind::Transcription,
    };
    let filter = WordlistFilter {
        book_id: book,
        classes: (!classes.is_empty()).then(|| classes.into_iter().collect()),
    };
    let mut exports = Exports::open(Some(collection))?;
    let record = exports.create(&e, kind, page.as_deref(), &filter, floor_offset, now())?.clone();
    match out {
        Some(path) => {
            std::fs::write(&path, &record.bytes)?;
            Ok(Some(Out::new(
                format!("wrote {} ({} bytes, sha256 {})", path.display(), record.bytes.len(), record.sha256),
                json!({"export": record, "path": path}),
            )))
        }
        None if json_mode => Ok(Some(Out::new("", json!({"export": record, "content": String::from_utf8_lossy(&record.bytes)})))),
        None => {
            std::io::stdout().write_all(&record.bytes)?;
            Ok(None)
        }
    }
}

fn metrics(collection: &Path, bucket: u64, book: Option<String>) -> Result<Out> {
    let e = open(collection)?;
    let curve = e.harvest(book.as_deref(), bucket)?;
    Ok(Out::new(curve.to_csv().trim_end(), serde_json::to_value(&curve)?))
}

fn corpus_gen(classes: usize, per_class: usize, seed: u64, books: usize, out: Option<PathBuf>) -> Result<Out> {
    let spec = CorpusSpec {
        classes,
        per_class,
        seed,
        books,
        ..CorpusSpec::default()
    };
    let corpus = Corpus::generate(&spec)?;
    let hash = match &out {
        Some(dir) => corpus.write(dir)?,
        None => corpus.hash(),
    };
    Ok(Out::new(
        hash.clone(),
        json!({"hash": hash, "instances": corpus.instances.len(), "vocabulary": corpus.vocabulary}),
    ))
}

fn simulate(
    policy: Policy,
    interactions: usize,
    seed: u64,
    classes: Option<usize>,
    per_class: Option<usize>,
    out: Option<PathBuf>,
) -> Result<Out> {
    let mut cfg = SimulationConfig {
        policy,
        interactions,
        seed,
        ..SimulationConfig::default()
    };
    cfg.corpus.seed = seed;
    if let Some(c) = classes {
        cfg.corpus.classes = c;
    }
    if let Some(p) = per_class {
        cfg.corpus.per_class = p;
    }
    let (report, mut engine) = simulate_user(cfg)?;
    if let Some(dir) = out {
        store::persist(&mut engine, &dir)?;
    }
    Ok(Out::new(
        format!(
            "{:?}: {} labels in {} interactions, {:.2} labels/interaction, peak {}/min",
            report.policy,
            report.labels,
            report.interactions.len(),
            report.labels_per_interaction,
            report.peak_per_minute
        ),
        serde_json::to_value(&report)?,
    ))
}

fn experiment(which: Experiment) -> Result<Out> {
    match which {
        Experiment::PerfDensity {
            classes,
            per_class,
            seed,
            labels,
            test_per_class,
        } => {
            let mut cfg = PerfDensityConfig::default();
            if let Some(c) = classes {
                cfg.corpus.classes = c;
            }
            if let Some(p) = per_class {
                cfg.corpus.per_class = p;
            }
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            if !labels.is_empty() {
                cfg.label_counts = labels;
            }
            if let Some(t) = test_per_class {
                cfg.test_per_class = t;
            }
            let report = perf_density(&cfg)?;
            Ok(Out::new(report.to_csv().trim_end(), serde_json::to_value(&report)?))
        }
        Experiment::SplitClass { planted, seed } => {
            let mut cfg = if planted { SplitClassConfig::planted() } else { SplitClassConfig::reference() };
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.corpus.seed = s;
            }
            let r = split_class(&cfg)?;
            Ok(Out::new(
                format!(
                    "class {}: lumped {:.4} (n={}), split {:.4} (subclasses {}+{}), {} test samples",
                    r.class_key, r.lumped_accuracy, r.n, r.split_accuracy, r.sub_sizes[0], r.sub_sizes[1], r.eval_n
                ),
                serde_json::to_value(&r)?,
            ))
        }
    }
}

fn capacity(weights: u64, dropout: f64, samples_per_coeff: u64) -> Result<Out> {
    let q = CapacityQuery {
        weights,
        dropout_p: dropout,
        samples_per_coeff,
    };
    q.validate()?;
    let n = capacity_estimate(&q);
    Ok(Out::new(n.to_string(), json!({"samples": n, "query": q})))
}

fn serve(config: Option<PathBuf>, root: Option<PathBuf>, bind: Option<String>, port: Option<u16>) -> Result<()> {
    let mut cfg = wordharvest_service::load_config(config.as_deref())?;
    if let Some(r) = root {
        cfg.root = r;
    }
    if let Some(b) = bind {
        cfg.bind = b;
    }
    if let Some(p) = port {
        cfg.port = p;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(wordharvest_service::serve(cfg))?;
    Ok(())
}

fn run(cli: Cli) -> Result<Option<Out>> {
    let out = match cli.cmd {
        Cmd::Ingest {
            dir,
            c,
            book,
            words,
            seed_labels,
            profile,
        } => ingest(&dir, &c.collection, book, words, seed_labels, profile)?,
        Cmd::Segment { image, page_id } => segment(&image, &page_id)?,
        Cmd::Label { file, c, user, batch_id } => label(&file, &c.collection, user, batch_id)?,
        Cmd::Train { c, classes } => train(&c.collection, classes)?,
        Cmd::Mine { class, c, limit } => mine(&class, &c.collection, limit)?,
        Cmd::Export {
            kind,
            c,
            page,
            book,
            classes,
            floor_offset,
            out,
        } => return export(kind, &c.collection, page, book, classes, floor_offset, out, cli.json),
        Cmd::Metrics { c, bucket, book } => metrics(&c.collection, bucket, book)?,
        Cmd::CorpusGen {
            classes,
            per_class,
            seed,
            books,
            out,
        } => corpus_gen(classes, per_class, seed, books, out)?,
        Cmd::SimulateUser {
            policy,
            interactions,
            seed,
            classes,
            per_class,
            out,
        } => simulate(policy, interactions, seed, classes, per_class, out)?,
        Cmd::Experiment { which } => experiment(which)?,
        Cmd::Capacity {
            weights,
            dropout,
            samples_per_coeff,
        } => capacity(weights, dropout, samples_per_coeff)?,
        Cmd::Serve { config, root, bind, port } => {
            serve(config, root, bind, port)?;
            return Ok(None);
        }
    };
    Ok(Some(out))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = if matches!(cli.cmd, Cmd::Serve { .. }) { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let json_mode = cli.json;
    match run(cli) {
        Ok(Some(out)) => {
            if json_mode {
                println!("{}", out.json);
            } else if !out.text.is_empty() {
                println!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            if json_mode {
                println!("{}", json!({"error": e.to_string()}));
            }
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
