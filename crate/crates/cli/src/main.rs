use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unionsearch::eval::{load_ground_truth, run_benchmark, BenchmarkConfig, MapVariant};
use unionsearch::index::{build_index_timed, load_index, save_index, BuildOptions, SearchIndex};
use unionsearch::kb::{load_kb, KbStore};
use unionsearch::lake::ingest_table;
use unionsearch::query::{build_query_tree, results_tsv, search_top_k, Mode, QueryError};

const USAGE: u8 = 2;
const NO_SEMANTICS: u8 = 3;

/// Semantic table union search over a directory of CSV tables.
#[derive(Parser)]
#[command(name = "unionsearch", version)]
struct Cli {
    /// error, warn, info, debug or trace; overrides SANTOS_LOG
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate a lake and write its index directory
    Index(IndexArgs),
    /// Rank lake tables by unionability with a query table
    Query(QueryArgs),
    /// Score rankings for a directory of queries against ground truth
    Eval(EvalArgs),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    lake: PathBuf,
    #[arg(long, required_unless_present = "no_kb")]
    kb: Option<PathBuf>,
    /// Index directory to create or overwrite
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_kb: bool,
    #[arg(long)]
    no_synth: bool,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// KB directory; defaults to the one recorded at index time
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Query table CSV
    #[arg(long)]
    table: PathBuf,
    /// Intent column header, or a 0-based column index
    #[arg(long)]
    intent: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// Directory of query CSVs plus intents.csv
    #[arg(long)]
    queries: PathBuf,
    /// CSV of query_table_id,data_lake_table_id
    #[arg(long)]
    truth: PathBuf,
    /// Where report.json and report.tsv go
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = MapArg::AllRanks)]
    map_variant: MapArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Kb,
    Synth,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Kb => Mode::KbOnly,
            ModeArg::Synth => Mode::SynthOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MapArg {
    AllRanks,
    Standard,
}

impl From<MapArg> for MapVariant {
    fn from(m: MapArg) -> Self {
        match m {
            MapArg::AllRanks => MapVariant::AllRanks,
            MapArg::Standard => MapVariant::Standard,
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: USAGE,
        message: message.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SANTOS_LOG", "warn"));
    if let Some(level) = &cli.log_level {
        logger.parse_filters(level);
    }
    logger.init();

    let outcome = match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_index(a: IndexArgs) -> Result<(), Failure> {
    let options = BuildOptions {
        use_kb: !a.no_kb,
        use_synth: !a.no_synth,
    };
    let kb_dir = match a.kb.as_deref().filter(|_| options.use_kb) {
        Some(dir) => Some(dir.canonicalize().map_err(|e| usage(format!("KB directory {}: {e}", dir.display())))?),
        None => None,
    };
    let (idx, t) = build_index_timed(&a.lake, kb_dir.as_deref(), options).map_err(usage)?;
    let clock = Instant::now();
    save_index(&idx, &a.out).map_err(usage)?;
    let write = clock.elapsed();
    eprintln!("column semantics\t{:.3}s", t.column_semantics.as_secs_f64());
    eprintln!("relationship semantics\t{:.3}s", t.relationship_semantics.as_secs_f64());
    eprintln!("functional dependencies\t{:.3}s", t.fds.as_secs_f64());
    eprintln!("synthesized KB\t{:.3}s", t.synth.as_secs_f64());
    eprintln!("postings\t{:.3}s", t.postings.as_secs_f64());
    eprintln!("index write\t{:.3}s", write.as_secs_f64());
    eprintln!(
        "indexed {} tables ({} skipped) into {}",
        idx.meta.tables.len(),
        idx.meta.skipped.len(),
        a.out.display()
    );
    Ok(())
}

fn open_index(s: &SearchArgs) -> Result<(SearchIndex, Option<KbStore>), Failure> {
    let idx = load_index(&s.index).map_err(usage)?;
    let kb_dir: Option<PathBuf> = match &s.kb {
        Some(dir) => Some(dir.clone()),
        None if idx.meta.options.use_kb => idx.meta.kb_dir.as_ref().map(PathBuf::from),
        None => None,
    };
    let kb = kb_dir.as_deref().map(load_kb).transpose().map_err(usage)?;
    Ok((idx, kb))
}

fn cmd_query(a: QueryArgs) -> Result<(), Failure> {
    let (idx, kb) = open_index(&a.search)?;
    let q = ingest_table(&a.table).map_err(usage)?;
    let intent = q
        .resolve_column(&a.intent)
        .ok_or_else(|| usage(format!("{} has no column {:?}", a.table.display(), a.intent)))?;
    let tree = build_query_tree(&q, intent, kb.as_ref(), &idx.synth).map_err(|e| match e {
        QueryError::EmptyIntentSemantics(_) => Failure {
            code: NO_SEMANTICS,
            message: format!("{e}; no lake table can be ranked against it"),
        },
        other => usage(other),
    })?;
    let results = search_top_k(&idx, &tree, a.search.k as usize, a.search.mode.into());
    print!("{}", results_tsv(&results));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let (idx, kb) = open_index(&a.search)?;
    let truth = load_ground_truth(&a.truth).map_err(usage)?;
    if truth.is_empty() {
        log::warn!("ground truth {} is empty", a.truth.display());
    }
    let cfg = BenchmarkConfig {
        k: a.search.k as usize,
        mode: a.search.mode.into(),
        map_variant: a.map_variant.into(),
    };
    let report = run_benchmark(&idx, kb.as_ref(), &a.queries, &truth, cfg).map_err(usage)?;
    report.write(&a.out).map_err(usage)?;
    print!("{}", report.to_tsv());
    Ok(())
}
