//! Command-line front end. [`dispatch`] parses arguments, runs one
//! subcommand and maps failures to exit codes:
//! 0 success, 1 usage or configuration, 2 data or format, 3 numeric.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use qsearch::embedding::{train, TrainConfig};
use qsearch::evaluation::{brute_force_knn, run_benchmark, BenchConfig, MetricsReport, Method};
use qsearch::formats::{self, MatrixFile};
use qsearch::projection::project;
use qsearch::{
    build_index, load_index, save_index, Dataset, DissimilarityKind, DistanceMatrix, Error, IndexConfig, ProjectedMatrix,
    ProjectionConfig, QExponent,
};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qsearch", version, about = "Nearest-neighbor search in q-metric spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Approx,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BenchMethod {
    Brute,
    OneStage,
    TwoStage,
    ProjectedExact,
}

#[derive(Debug, clap::Args)]
struct ProjectionArgs {
    /// Projection algorithm.
    #[arg(long, value_enum, default_value = "exact")]
    mode: Mode,
    /// Neighbors per node for the approximate projection.
    #[arg(long)]
    knn: Option<usize>,
    /// Relaxation sweeps for the approximate projection.
    #[arg(long)]
    iters: Option<usize>,
}

impl ProjectionArgs {
    fn config(&self, q: QExponent) -> Result<ProjectionConfig, Error> {
        match self.mode {
            Mode::Exact => Ok(ProjectionConfig::exact(q)),
            Mode::Approx => {
                let knn = self
                    .knn
                    .ok_or_else(|| Error::InvalidConfig("--mode approx needs --knn".into()))?;
                let iters = self
                    .iters
                    .ok_or_else(|| Error::InvalidConfig("--mode approx needs --iters".into()))?;
                Ok(ProjectionConfig::approximate(q, knn, iters))
            }
        }
    }
}

#[derive(Debug, clap::Args)]
struct TrainingArgs {
    /// Architecture preset.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Embedding dimension; defaults to min(input dimension, 64).
    #[arg(long)]
    dim_out: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl TrainingArgs {
    fn config(&self, q: QExponent, seed: u64) -> TrainConfig {
        let mut c = match self.preset {
            Preset::Desk => TrainConfig::desk(q),
            Preset::Full => TrainConfig::full(q),
        };
        c.seed = seed;
        if let Some(s) = self.dim_out {
            c.output_dim = Some(s);
        }
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        c
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project a dataset or dissimilarity matrix onto a q-metric (QMAT out).
    Project {
        /// QVEC, QSET or QMAT file.
        #[arg(long)]
        input: PathBuf,
        /// Defaults to euclidean for vectors and jaccard for sets.
        #[arg(long)]
        dissimilarity: Option<DissimilarityKind>,
        #[arg(long)]
        q: QExponent,
        #[command(flatten)]
        projection: ProjectionArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit an embedding network to projected targets (QMLP out).
    Train {
        #[arg(long)]
        input: PathBuf,
        /// QMAT of projected distances between the input points.
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        q: QExponent,
        #[command(flatten)]
        training: TrainingArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Project a subset, train, embed everything and build the tree (QIDX out).
    BuildIndex {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dissimilarity: Option<DissimilarityKind>,
        #[arg(long)]
        q: QExponent,
        /// Points sampled for projection and training; defaults to min(n, 1000).
        #[arg(long)]
        subset_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pruning exponent for the tree when it should differ from --q.
        #[arg(long)]
        prune_q: Option<QExponent>,
        #[command(flatten)]
        projection: ProjectionArgs,
        #[command(flatten)]
        training: TrainingArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Answer queries against an index; one JSON line per query.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        k: usize,
        /// Candidates retrieved before exact reranking.
        #[arg(long = "two-stage-K", alias = "two-stage-k")]
        two_stage_k: Option<usize>,
        /// Report path; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact k nearest neighbors by exhaustive scan; one JSON line per query.
    GroundTruth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        dissimilarity: Option<DissimilarityKind>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sweep q for one search method; one JSON metrics line per exponent.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,inf")]
        q_sweep: Vec<QExponent>,
        #[arg(long, value_enum)]
        method: BenchMethod,
        #[arg(long)]
        dissimilarity: Option<DissimilarityKind>,
        /// Candidate count for --method two-stage.
        #[arg(long = "two-stage-K", alias = "two-stage-k")]
        two_stage_k: Option<usize>,
        #[arg(long)]
        subset_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Timed passes over the queries after the metrics pass.
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        /// Treat exact distance ties in the truth as interchangeable.
        #[arg(long)]
        tie_aware: bool,
        #[command(flatten)]
        projection: ProjectionArgs,
        #[command(flatten)]
        training: TrainingArgs,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write a tab-separated table for plotting.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

/// One line of a `query` or `ground-truth` report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub query: usize,
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparisons: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_seconds: Option<f64>,
}

/// Reads a report written by `query` or `ground-truth`.
pub fn read_neighbor_report(path: impl AsRef<Path>) -> Result<Vec<NeighborRecord>, Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("report line: {e}"))))
        .collect()
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidExponent(_) | Error::DuplicateIndex(_) => EXIT_USAGE,
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::DimensionMismatch { .. }
        | Error::ZeroNorm
        | Error::ConstantVector
        | Error::RepresentationMismatch { .. }
        | Error::EmptyPath
        | Error::InvalidMatrix(_)
        | Error::Format(_)
        | Error::Io(_) => EXIT_DATA,
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Diagnostics go to standard error as a single line.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("qsearch: {}", first.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("qsearch: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("qsearch: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

fn default_kind(data: &Dataset, given: Option<DissimilarityKind>) -> DissimilarityKind {
    given.unwrap_or(if data.is_sparse() {
        DissimilarityKind::Jaccard
    } else {
        DissimilarityKind::Euclidean
    })
}

fn load(path: &Path) -> Result<Dataset, Error> {
    formats::load_dataset(path).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| with_path(e.into(), p))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn index_config(
    kind: DissimilarityKind,
    q: QExponent,
    n: usize,
    subset_size: Option<usize>,
    seed: u64,
    projection: &ProjectionArgs,
    training: &TrainingArgs,
) -> Result<IndexConfig, Error> {
    let mut c = IndexConfig::new(kind, q, subset_size.unwrap_or(n.min(1000)), seed);
    c.projection = projection.config(q)?;
    c.training = training.config(q, seed);
    Ok(c)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Project {
            input,
            dissimilarity,
            q,
            projection,
            output,
        } => {
            let bytes = std::fs::read(&input).map_err(|e| with_path(e.into(), &input))?;
            let d = if bytes.starts_with(formats::QMAT_MAGIC) {
                formats::decode_matrix(&bytes).map_err(|e| with_path(e, &input))?.matrix
            } else {
                let data = formats::decode_dataset(&bytes).map_err(|e| with_path(e, &input))?;
                DistanceMatrix::from_dataset(&data, default_kind(&data, dissimilarity))?
            };
            let projected = project(&d, &projection.config(q)?)?;
            formats::save_matrix(projected.matrix(), Some(q), &output).map_err(|e| with_path(e, &output))?;
        }
        Command::Train {
            input,
            targets,
            q,
            training,
            seed,
            output,
        } => {
            let data = load(&input)?;
            let MatrixFile { matrix, q: tag } = formats::load_matrix(&targets).map_err(|e| with_path(e, &targets))?;
            if let Some(t) = tag {
                if t != q {
                    return Err(Failure::Usage(format!("targets are projected at q = {t}, --q is {q}")));
                }
            }
            let points = qsearch::data::feature_matrix(&data, data.feature_dim())?;
            let config = training.config(q, seed);
            let (params, report) = train(&points, &ProjectedMatrix::from_tagged(matrix, q), &config)?;
            formats::save_model(&params, &output).map_err(|e| with_path(e, &output))?;
            println!(
                "{}",
                serde_json::json!({
                    "epochs": config.epochs,
                    "steps": report.steps,
                    "final_stress": report.final_stress,
                    "normalized_stress": report.normalized_stress,
                })
            );
        }
        Command::BuildIndex {
            input,
            dissimilarity,
            q,
            subset_size,
            seed,
            prune_q,
            projection,
            training,
            output,
        } => {
            let data = load(&input)?;
            let kind = default_kind(&data, dissimilarity);
            let mut config = index_config(kind, q, data.len(), subset_size, seed, &projection, &training)?;
            config.prune_q = prune_q;
            let index = build_index(&data, &config)?;
            save_index(&index, &output).map_err(|e| with_path(e, &output))?;
        }
        Command::Query {
            index,
            queries,
            k,
            two_stage_k,
            output,
        } => {
            let index = load_index(&index).map_err(|e| with_path(e, &index))?;
            let queries = load(&queries)?;
            let mut out = writer(output.as_deref())?;
            for qi in 0..queries.len() {
                let r = match two_stage_k {
                    Some(big_k) => index.two_stage_query(queries.point(qi), k, big_k)?,
                    None => index.query(queries.point(qi), k)?,
                };
                let record = NeighborRecord {
                    query: qi,
                    ids: r.ids,
                    distances: r.distances,
                    comparisons: Some(r.comparisons),
                    preprocess_seconds: Some(r.preprocess_time.as_secs_f64()),
                    search_seconds: Some(r.search_time.as_secs_f64()),
                };
                write_json_line(&mut out, &record)?;
            }
            out.flush()?;
        }
        Command::GroundTruth {
            data,
            queries,
            k,
            dissimilarity,
            output,
        } => {
            let data = load(&data)?;
            let queries = load(&queries)?;
            let truth = brute_force_knn(&data, &queries, k, default_kind(&data, dissimilarity))?;
            let mut out = writer(output.as_deref())?;
            for (qi, (ids, distances)) in truth.ids.into_iter().zip(truth.distances).enumerate() {
                let record = NeighborRecord {
                    query: qi,
                    ids,
                    distances,
                    comparisons: None,
                    preprocess_seconds: None,
                    search_seconds: None,
                };
                write_json_line(&mut out, &record)?;
            }
            out.flush()?;
        }
        Command::Bench {
            data,
            queries,
            k,
            q_sweep,
            method,
            dissimilarity,
            two_stage_k,
            subset_size,
            seed,
            repetitions,
            tie_aware,
            projection,
            training,
            output,
            table,
        } => {
            let data = load(&data)?;
            let queries = load(&queries)?;
            let kind = default_kind(&data, dissimilarity);
            let method = match method {
                BenchMethod::Brute => Method::Brute,
                BenchMethod::OneStage => Method::OneStage,
                BenchMethod::ProjectedExact => Method::ProjectedExact,
                BenchMethod::TwoStage => Method::TwoStage {
                    big_k: two_stage_k
                        .ok_or_else(|| Failure::Usage("--method two-stage needs --two-stage-K".into()))?,
                },
            };
            let learned = matches!(method, Method::OneStage | Method::TwoStage { .. });
            let first_q = q_sweep.first().copied().unwrap_or(QExponent::ONE);
            let config = BenchConfig {
                method,
                kind,
                k,
                q_sweep,
                repetitions,
                index: if learned {
                    Some(index_config(kind, first_q, data.len(), subset_size, seed, &projection, &training)?)
                } else {
                    None
                },
                seed,
                tie_aware,
            };
            let reports = run_benchmark(&data, &queries, &config)?;
            let mut out = writer(output.as_deref())?;
            for r in &reports {
                writeln!(out, "{}", r.json_line())?;
            }
            out.flush()?;
            if let Some(path) = table {
                let mut t = writer(Some(&path))?;
                writeln!(t, "{}", MetricsReport::table_header())?;
                for r in &reports {
                    writeln!(t, "{}", r.table_row())?;
                }
                t.flush()?;
            }
        }
    }
    Ok(())
}

fn write_json_line(out: &mut dyn Write, record: &NeighborRecord) -> Result<(), Failure> {
    let line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{line}")?;
    Ok(())
}
