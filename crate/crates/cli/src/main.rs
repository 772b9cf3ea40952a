use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bookrec::analytics::{
    compute_profile_with, format_profile, jaccard_affinity, LanguageThresholds,
};
use bookrec::config::{fit_model, review_texts, RunConfig};
use bookrec::dataset::{self, load_graph, read_interactions, split_paths, write_interactions};
use bookrec::eval::{
    evaluate_model, format_ablation, format_table, run_ablation, summarize_seeds, EvalProtocol,
};
use bookrec::features::{load_embeddings, write_embeddings, FeatureStore};
use bookrec::graph::{validate_graph, BookGraph, EntityKind, Interaction};
use bookrec::ingest::{run_ingest, split_interactions};
use bookrec::neural::{AblationFlags, Removal};
use bookrec::persist::Checkpoint;
use bookrec::recommend::{load_recommender, FactorModel, FitContext, ModelKind, Recommender};
use bookrec::sparse::TrainSet;
use bookrec::Error;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_LEAKAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "bookrec",
    version,
    about = "Top-N book recommendation benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw JSON-lines crawl files into a dataset directory.
    Ingest {
        raw: PathBuf,
        out: PathBuf,
        /// Fail when the cleaned graph has more integrity violations than this.
        #[arg(long, default_value_t = 0)]
        max_violations: usize,
    },
    /// Check a dataset directory for integrity violations.
    Validate { data: PathBuf },
    /// Dataset profile as JSON plus text tables.
    Stats {
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_publishers: usize,
        #[arg(long, default_value_t = 0.9)]
        dominant: f64,
        #[arg(long, default_value_t = 0.1)]
        minor: f64,
    },
    /// Split the interaction table into train/valid/test files.
    Split {
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit one model and save its checkpoint.
    Train {
        #[command(flatten)]
        io: RunIo,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and evaluate once per seed, or evaluate a saved checkpoint.
    Evaluate {
        #[command(flatten)]
        io: RunIo,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated seeds; overrides eval.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Evaluate this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Warm and cold-start ablation of a neural model.
    Ablate {
        #[command(flatten)]
        io: RunIo,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Signals to remove one at a time (side, relations, interaction).
        #[arg(long, value_delimiter = ',')]
        remove: Option<Vec<String>>,
    },
    /// Top-N books for one user from a checkpoint.
    Recommend {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
    },
    /// Write a factor model's item vectors in the embedding file format.
    ExportEmbeddings {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunIo {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file with flat model.*, features.*, split.* and eval.* keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name when no config file is given.
    #[arg(long)]
    model: Option<String>,
    /// key=value override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shortcut for model.min_df.
    #[arg(long)]
    min_df: Option<f64>,
    /// Shortcut for model.max_df.
    #[arg(long)]
    max_df: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> bookrec::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::new(self.model.as_deref().unwrap_or("popularity").parse()?),
        };
        if let (Some(_), Some(m)) = (&self.config, &self.model) {
            cfg.set("model.name", json!(m))?;
        }
        cfg.apply_overrides(&self.overrides)?;
        if let Some(v) = self.min_df {
            cfg.set("model.min_df", json!(v))?;
        }
        if let Some(v) = self.max_df {
            cfg.set("model.max_df", json!(v))?;
        }
        Ok(cfg)
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Leakage { .. } => EXIT_LEAKAGE,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: msg.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Ingest {
            raw,
            out,
            max_violations,
        } => cmd_ingest(&raw, &out, max_violations),
        Command::Validate { data } => cmd_validate(&data),
        Command::Stats {
            data,
            out,
            top_publishers,
            dominant,
            minor,
        } => cmd_stats(
            &data,
            out.as_deref(),
            top_publishers,
            LanguageThresholds { dominant, minor },
        ),
        Command::Split { data, out, cfg } => cmd_split(&data, &out, &cfg.resolve()?),
        Command::Train { io, cfg } => cmd_train(&io, &cfg.resolve()?),
        Command::Evaluate {
            io,
            cfg,
            seeds,
            checkpoint,
        } => {
            let mut cfg = cfg.resolve()?;
            if let Some(s) = seeds {
                cfg.set("eval.seeds", json!(s))?;
            }
            cmd_evaluate(&io, &cfg, checkpoint.as_deref())
        }
        Command::Ablate { io, cfg, remove } => {
            let removals = match remove {
                None => Removal::ALL.to_vec(),
                Some(list) => list
                    .iter()
                    .map(|s| {
                        Removal::parse(s.trim())
                            .ok_or_else(|| usage(format!("unknown signal {s:?}")))
                    })
                    .collect::<std::result::Result<_, _>>()?,
            };
            cmd_ablate(&io, &cfg.resolve()?, &removals)
        }
        Command::Recommend {
            data,
            split,
            checkpoint,
            user,
            n,
        } => cmd_recommend(&data, &split, &checkpoint, &user, n),
        Command::ExportEmbeddings {
            data,
            checkpoint,
            out,
        } => cmd_export(&data, &checkpoint, &out),
    }
}

fn create_dir(dir: &Path) -> bookrec::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> bookrec::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> bookrec::Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    write_text(path, &s)
}

fn file_digest(path: &Path) -> bookrec::Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Run manifest: command, effective config and its digest, seeds, tool
/// version, and digests of every input and output file.
fn write_manifest(
    out_dir: &Path,
    command: &str,
    cfg: Option<&RunConfig>,
    seeds: &[u64],
    inputs: &[PathBuf],
    outputs: &[&str],
) -> bookrec::Result<()> {
    let digests = |paths: &mut dyn Iterator<Item = PathBuf>| -> bookrec::Result<Value> {
        let mut m = serde_json::Map::new();
        for p in paths {
            m.insert(p.display().to_string(), json!(file_digest(&p)?));
        }
        Ok(Value::Object(m))
    };
    let manifest = json!({
        "command": command,
        "config_digest": cfg.map(RunConfig::digest),
        "config": cfg.map(|c| &c.values),
        "seeds": seeds,
        "versions": {
            "bookrec": env!("CARGO_PKG_VERSION"),
            "checkpoint_format": String::from_utf8_lossy(bookrec::persist::MAGIC),
        },
        "inputs": digests(&mut inputs.iter().cloned())?,
        "outputs": digests(&mut outputs.iter().map(|f| out_dir.join(f)))?,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)
}

fn cmd_ingest(raw: &Path, out: &Path, max_violations: usize) -> CmdResult {
    create_dir(out)?;
    let res = run_ingest(raw, out)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&res.report).expect("report serializes")
    );
    write_manifest(
        out,
        "ingest",
        None,
        &[],
        &[],
        &["ingest_report.json", dataset::INTERACTIONS_FILE],
    )?;
    if res.report.violations > max_violations {
        return Err(Failure {
            code: EXIT_INVALID,
            msg: format!(
                "{} integrity violations exceed the threshold of {max_violations}",
                res.report.violations
            ),
        });
    }
    Ok(())
}

fn cmd_validate(data: &Path) -> CmdResult {
    let graph = load_graph(data)?;
    let report = validate_graph(&graph);
    let counts: serde_json::Map<String, Value> = EntityKind::ALL
        .iter()
        .map(|k| (k.name().to_string(), json!(graph.count(*k))))
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "entities": counts,
            "violations": report.violations,
        }))
        .expect("report serializes")
    );
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_INVALID,
            msg: format!("{} integrity violations", report.violations.len()),
        })
    }
}

fn cmd_stats(
    data: &Path,
    out: Option<&Path>,
    top: usize,
    thresholds: LanguageThresholds,
) -> CmdResult {
    if !(0.0..=1.0).contains(&thresholds.minor)
        || thresholds.minor >= thresholds.dominant
        || thresholds.dominant > 1.0
    {
        return Err(usage("language thresholds need 0 <= minor < dominant <= 1"));
    }
    let graph = load_graph(data)?;
    let profile = compute_profile_with(&graph, thresholds);
    let affinity = jaccard_affinity(&graph, top);
    let text = format_profile(&profile, &affinity, &graph);
    print!("{text}");
    if let Some(out) = out {
        create_dir(out)?;
        write_json(
            &out.join("profile.json"),
            &json!({ "profile": profile, "publisher_affinity": affinity }),
        )?;
        write_text(&out.join("profile.txt"), &text)?;
        write_manifest(
            out,
            "stats",
            None,
            &[],
            &[],
            &["profile.json", "profile.txt"],
        )?;
    }
    Ok(())
}

fn cmd_split(data: &Path, out: &Path, cfg: &RunConfig) -> CmdResult {
    let graph = load_graph(data)?;
    let input = data.join(dataset::INTERACTIONS_FILE);
    let rows = read_interactions(&input, &graph)?;
    let spec = cfg.split()?;
    let parts = split_interactions(&rows, &spec)?;
    create_dir(out)?;
    let paths = split_paths(out);
    for (path, rows) in paths.iter().zip([&parts.train, &parts.valid, &parts.test]) {
        write_interactions(path, &graph, rows)?;
    }
    write_json(&out.join("config.json"), &cfg.values)?;
    write_manifest(
        out,
        "split",
        Some(cfg),
        &[spec.seed],
        &[input],
        &["train.tsv", "valid.tsv", "test.tsv", "config.json"],
    )?;
    println!(
        "train {} / valid {} / test {}",
        parts.train.len(),
        parts.valid.len(),
        parts.test.len()
    );
    Ok(())
}

/// Dataset, split and features loaded for a training run.
struct Workspace {
    graph: BookGraph,
    train: TrainSet,
    valid: Vec<Interaction>,
    test: Vec<Interaction>,
    features: FeatureStore,
    texts: Vec<Option<String>>,
    inputs: Vec<PathBuf>,
}

impl Workspace {
    fn load(data: &Path, split: &Path, cfg: &RunConfig) -> bookrec::Result<Self> {
        let graph = load_graph(data)?;
        let paths = split_paths(split);
        let train_rows = read_interactions(&paths[0], &graph)?;
        let valid = read_interactions(&paths[1], &graph)?;
        let test = read_interactions(&paths[2], &graph)?;
        let train = TrainSet::new(graph.num_users(), graph.num_books(), train_rows);
        let mut inputs = paths.to_vec();
        let emb = cfg.str("features.embeddings")?;
        let features = if emb.is_empty() {
            FeatureStore::with_hashing(&graph, cfg.usize("features.text_dim")?)
        } else {
            let p = PathBuf::from(emb);
            let table = load_embeddings(&p, &graph)?;
            inputs.push(p);
            FeatureStore::build(&graph, &table)
        };
        let texts = review_texts(&graph, &train);
        Ok(Self {
            graph,
            train,
            valid,
            test,
            features,
            texts,
            inputs,
        })
    }

    fn ctx(&self, seed: u64) -> FitContext<'_> {
        FitContext {
            train: &self.train,
            valid: &self.valid,
            graph: &self.graph,
            features: Some(&self.features),
            review_texts: Some(&self.texts),
            seed,
        }
    }
}

fn cmd_train(io: &RunIo, cfg: &RunConfig) -> CmdResult {
    let ws = Workspace::load(&io.data, &io.split, cfg)?;
    let seed = cfg.u64("model.seed")?;
    let model = fit_model(cfg, &ws.ctx(seed), cfg.flags()?)?;
    create_dir(&io.out)?;
    model.checkpoint().save(&io.out.join("model.ckpt"))?;
    write_json(&io.out.join("config.json"), &cfg.values)?;
    write_manifest(
        &io.out,
        "train",
        Some(cfg),
        &[seed],
        &ws.inputs,
        &["model.ckpt", "config.json"],
    )?;
    println!(
        "trained {} -> {}",
        model.kind(),
        io.out.join("model.ckpt").display()
    );
    Ok(())
}

fn check_model_fits(model: &dyn Recommender, graph: &BookGraph) -> bookrec::Result<()> {
    if model.num_books() != graph.num_books() {
        return Err(Error::Checkpoint(format!(
            "checkpoint scores {} books but the dataset has {}",
            model.num_books(),
            graph.num_books()
        )));
    }
    Ok(())
}

fn cmd_evaluate(io: &RunIo, cfg: &RunConfig, checkpoint: Option<&Path>) -> CmdResult {
    let ws = Workspace::load(&io.data, &io.split, cfg)?;
    let protocol = EvalProtocol::new(cfg.cutoffs()?)?;
    let digest = cfg.digest();
    let mut inputs = ws.inputs.clone();
    let (seeds, runs) = match checkpoint {
        Some(path) => {
            let model = load_recommender(&Checkpoint::load(path)?)?;
            check_model_fits(model.as_ref(), &ws.graph)?;
            let seed = cfg.u64("model.seed")?;
            let mut report = evaluate_model(model.as_ref(), &ws.train, &ws.test, &protocol, None)?;
            report.seed = seed;
            report.config_digest = digest.clone();
            inputs.push(path.to_path_buf());
            (vec![seed], vec![report])
        }
        None => {
            let seeds = cfg.seeds()?;
            let mut runs = Vec::new();
            for &seed in &seeds {
                let model = fit_model(cfg, &ws.ctx(seed), cfg.flags()?)?;
                let mut report =
                    evaluate_model(model.as_ref(), &ws.train, &ws.test, &protocol, None)?;
                report.seed = seed;
                report.config_digest = digest.clone();
                runs.push(report);
            }
            (seeds, runs)
        }
    };
    let summary = summarize_seeds(runs)?;
    let label = cfg.kind()?.label().to_string();
    let std = (summary.runs.len() > 1).then(|| summary.std.clone());
    let table = format_table(&[(label, summary.mean.clone(), std)]);
    create_dir(&io.out)?;
    write_json(&io.out.join("report.json"), &summary)?;
    write_text(&io.out.join("report.txt"), &table)?;
    write_json(&io.out.join("config.json"), &cfg.values)?;
    write_manifest(
        &io.out,
        "evaluate",
        Some(cfg),
        &seeds,
        &inputs,
        &["report.json", "report.txt", "config.json"],
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate(io: &RunIo, cfg: &RunConfig, removals: &[Removal]) -> CmdResult {
    let kind = cfg.kind()?;
    if !matches!(kind, ModelKind::TwoTower | ModelKind::Hgnn) {
        return Err(usage(format!(
            "ablation needs two_tower or hgnn, not {kind}"
        )));
    }
    let ws = Workspace::load(&io.data, &io.split, cfg)?;
    let protocol = EvalProtocol::new(cfg.cutoffs()?)?;
    let seed = cfg.u64("model.seed")?;
    let digest = cfg.digest();
    let mut rows = run_ablation(
        removals,
        &ws.train,
        &ws.test,
        &protocol,
        |flags: AblationFlags| fit_model(cfg, &ws.ctx(seed), flags),
    )?;
    for r in &mut rows {
        r.report.seed = seed;
        r.report.config_digest = digest.clone();
    }
    let table = format_ablation(&rows);
    create_dir(&io.out)?;
    write_json(&io.out.join("ablation.json"), &rows)?;
    write_text(&io.out.join("ablation.txt"), &table)?;
    write_json(&io.out.join("config.json"), &cfg.values)?;
    write_manifest(
        &io.out,
        "ablate",
        Some(cfg),
        &[seed],
        &ws.inputs,
        &["ablation.json", "ablation.txt", "config.json"],
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_recommend(
    data: &Path,
    split: &Path,
    checkpoint: &Path,
    user_id: &str,
    n: usize,
) -> CmdResult {
    let graph = load_graph(data)?;
    let user = graph.require(EntityKind::User, user_id)?;
    let train_rows = read_interactions(&split_paths(split)[0], &graph)?;
    let train = TrainSet::new(graph.num_users(), graph.num_books(), train_rows);
    let model = load_recommender(&Checkpoint::load(checkpoint)?)?;
    check_model_fits(model.as_ref(), &graph)?;
    let seen = train.seen(user);
    let ranked = model.rank(user, &seen, n);
    let items: Vec<Value> = ranked
        .iter()
        .enumerate()
        .map(|(i, (b, s))| {
            json!({
                "rank": i + 1,
                "book": graph.books[*b].id,
                "title": graph.books[*b].title,
                "score": s,
            })
        })
        .collect();
    let mut out = json!({
        "user": user_id,
        "model": model.kind().name(),
        "history": seen.len(),
        "recommendations": items,
    });
    if ranked.is_empty() && n > 0 {
        out["note"] = json!("every catalog book is already in this user's training history");
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("json serializes")
    );
    Ok(())
}

fn cmd_export(data: &Path, checkpoint: &Path, out: &Path) -> CmdResult {
    let graph = load_graph(data)?;
    let c = Checkpoint::load(checkpoint)?;
    let kind: ModelKind = c.kind.parse()?;
    let model = FactorModel::from_checkpoint(kind, &c)
        .map_err(|_| usage(format!("model {kind} has no item embeddings to export")))?;
    check_model_fits(&model, &graph)?;
    let m = &model.item_factors;
    write_embeddings(
        out,
        m.cols,
        graph
            .books
            .iter()
            .enumerate()
            .map(|(b, book)| (book.id.as_str(), m.row(b))),
    )?;
    println!(
        "wrote {} vectors of dim {} to {}",
        m.rows,
        m.cols,
        out.display()
    );
    Ok(())
}
