use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use proxymet::eval::{run_retrieval_eval, write_csv, RelevanceMode};
use proxymet::inference::{retrieve, IndexRow, RetrievalIndex};
use proxymet::labels::{LabelState, LabelVector};
use proxymet::model::ModelFile;
use proxymet::synth::{generate, Dataset, SynthConfig};
use proxymet::trainer::{train_with_progress, TrainConfig, TrainedModel};
use proxymet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "proxymet",
    version,
    about = "Proxy-based metric learning for multi-label data: synthetic data \
             generation, embedding training, retrieval, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-label dataset file.
    GenData {
        /// Generator config JSON; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Split off the last N samples into a separate query file.
        #[arg(long, default_value_t = 0, requires = "holdout_out")]
        holdout: usize,
        #[arg(long, requires = "holdout")]
        holdout_out: Option<PathBuf>,
    },
    /// Train a model and write it as a JSON document.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate retrieval and classification of a model over a query set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset embedded into the retrieval database.
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Relevance mode; defaults to augmented when the data has
        /// all-negative samples and raw otherwise.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        report: PathBuf,
        /// Also write per-query rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Rank the database against one query sample.
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        db: PathBuf,
        /// JSON file with a "features" array; a dataset row works as-is.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Write embeddings of a dataset as CSV for external analysis.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    Augmented,
}

impl From<ModeArg> for RelevanceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => RelevanceMode::Raw,
            ModeArg::Augmented => RelevanceMode::Augmented,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::EmptyClass { .. } | Error::EmptyDataset | Error::EmptyIndex => {
                    ExitCode::from(3)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        }
    }
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    ModelFile::load_path(path)?.into_model()
}

fn check_compatible(model: &TrainedModel, data: &Dataset) -> Result<()> {
    if data.input_dim != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: data.input_dim,
        });
    }
    if data.n_classes != model.n_classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes, model was trained on {}",
            data.n_classes, model.n_classes
        )));
    }
    Ok(())
}

fn build_index(model: &TrainedModel, db: &Dataset) -> Result<RetrievalIndex> {
    check_compatible(model, db)?;
    let mut index = RetrievalIndex::default();
    for s in &db.samples {
        index.push(IndexRow {
            id: s.id.clone(),
            embedding: model.embed(&s.features)?,
            labels: s.labels.clone(),
        });
    }
    Ok(index)
}

fn format_labels(labels: &LabelVector) -> String {
    labels
        .states()
        .iter()
        .map(|s| match s {
            LabelState::Positive => "pos",
            LabelState::Negative => "neg",
            LabelState::Uncertain => "unc",
        })
        .collect::<Vec<_>>()
        .join("|")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            config,
            out,
            holdout,
            holdout_out,
        } => cmd_gen_data(&config, &out, holdout, holdout_out.as_deref()),
        Command::Train { data, config, out } => cmd_train(&data, &config, &out),
        Command::Eval {
            model,
            db,
            queries,
            k,
            mode,
            report,
            csv,
            threads,
        } => cmd_eval(
            &model,
            &db,
            &queries,
            k,
            mode.map(Into::into),
            &report,
            csv.as_deref(),
            threads,
        ),
        Command::Query {
            model,
            db,
            input,
            k,
        } => cmd_query(&model, &db, &input, k),
        Command::ExportEmbeddings { model, data, out } => {
            cmd_export_embeddings(&model, &data, &out)
        }
    }
}

fn cmd_gen_data(
    config: &Option<PathBuf>,
    out: &Path,
    holdout: usize,
    holdout_out: Option<&Path>,
) -> Result<()> {
    let config: SynthConfig = read_config(config)?;
    let mut data = generate(&config)?;
    if holdout > 0 {
        if holdout >= data.len() {
            return Err(Error::InvalidConfig(format!(
                "holdout {} must be smaller than n_samples {}",
                holdout,
                data.len()
            )));
        }
        let tail = data.samples.split_off(data.len() - holdout);
        let held = Dataset {
            n_classes: data.n_classes,
            input_dim: data.input_dim,
            samples: tail,
        };
        held.save_path(holdout_out.expect("clap ties holdout to holdout_out"))?;
    }
    data.save_path(out)
}

fn cmd_train(data: &Path, config: &Option<PathBuf>, out: &Path) -> Result<()> {
    let config: TrainConfig = read_config(config)?;
    let data = Dataset::load_path(data)?;
    let model = train_with_progress(&data, &config, |epoch, loss| {
        println!("epoch {} loss {loss:.6}", epoch + 1);
    })?;
    ModelFile::from(model).save_path(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model_path: &Path,
    db_path: &Path,
    queries_path: &Path,
    k: usize,
    mode: Option<RelevanceMode>,
    report_path: &Path,
    csv_path: Option<&Path>,
    threads: usize,
) -> Result<()> {
    let model = load_model(model_path)?;
    let db = Dataset::load_path(db_path)?;
    let queries = Dataset::load_path(queries_path)?;
    check_compatible(&model, &queries)?;

    let db_ids: HashSet<&str> = db.samples.iter().map(|s| s.id.as_str()).collect();
    let overlap = queries
        .samples
        .iter()
        .filter(|s| db_ids.contains(s.id.as_str()))
        .count();
    if overlap > 0 {
        eprintln!(
            "warning: {overlap} query ids also appear in the database; \
             self-retrieval will inflate the metrics"
        );
    }

    let mode = mode.unwrap_or_else(|| {
        let has_negative = db
            .samples
            .iter()
            .chain(queries.samples.iter())
            .any(|s| s.labels.is_all_negative());
        if has_negative {
            RelevanceMode::Augmented
        } else {
            RelevanceMode::Raw
        }
    });

    let index = build_index(&model, &db)?;
    let mut report = run_retrieval_eval(&model, &index, &queries, k, mode, threads)?;
    report.meta.model = model_path.display().to_string();
    report.meta.db = db_path.display().to_string();
    report.meta.queries = queries_path.display().to_string();

    let mut w = BufWriter::new(File::create(report_path)?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;

    if let Some(csv) = csv_path {
        let mut w = BufWriter::new(File::create(csv)?);
        write_csv(&report, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct QueryInput {
    features: Vec<f64>,
}

fn cmd_query(model_path: &Path, db_path: &Path, input: &Path, k: usize) -> Result<()> {
    let model = load_model(model_path)?;
    let db = Dataset::load_path(db_path)?;
    let text = std::fs::read_to_string(input)?;
    let query: QueryInput = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", input.display())))?;

    let index = build_index(&model, &db)?;
    let embedding = model.embed(&query.features)?;
    let hits = retrieve(&embedding, &index, k)?;
    let mut out = std::io::stdout().lock();
    for (rank, hit) in hits.iter().enumerate() {
        writeln!(
            out,
            "{},{},{:.6},{}",
            rank + 1,
            hit.id,
            hit.distance,
            format_labels(&hit.labels)
        )?;
    }
    let scores = model.class_scores(&query.features)?;
    let joined = scores
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",");
    writeln!(out, "scores,{joined}")?;
    Ok(())
}

fn cmd_export_embeddings(model_path: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let data = Dataset::load_path(data_path)?;
    check_compatible(&model, &data)?;

    let mut w = BufWriter::new(File::create(out)?);
    let mut header = vec!["id".to_string()];
    header.extend((0..data.n_classes).map(|j| format!("label_{j}")));
    header.extend((0..model.embedding_dim()).map(|i| format!("emb_{i}")));
    writeln!(w, "{}", header.join(","))?;

    for s in &data.samples {
        let embedding = model.embed(&s.features)?;
        let mut row = vec![s.id.clone()];
        row.extend(s.labels.states().iter().map(|state| {
            match state {
                LabelState::Positive => "pos",
                LabelState::Negative => "neg",
                LabelState::Uncertain => "unc",
            }
            .to_string()
        }));
        row.extend(embedding.iter().map(|x| x.to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
