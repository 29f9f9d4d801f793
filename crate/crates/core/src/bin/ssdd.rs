//! `ssdd`: ingest corpora, run Bob as a daemon, run Alice, compute the
//! plaintext oracle and sweep benchmark grids.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime or protocol
//! errors. Document ids in CSV output are 1-based, as in the UCI files.

use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use ssdd::bench::{
    dims_from_pct, prepare_parties, run_grid, write_report_csv, write_report_csv_to,
};
use ssdd::bench::{BenchGrid, BenchReport, BenchRow};
use ssdd::corpus::{load_corpus_file, load_vocabulary, parse_bag_of_words, write_cache, Corpus};
use ssdd::protocol::{
    run_local, AliceSession, BobSession, DetectionReport, LocalRunOptions, MatrixCache, QueryDoc,
    SessionConfig, TcpTransport,
};
use ssdd::synthetic::{generate, SyntheticSpec};
use ssdd::{oracle_detect, DocumentVector, Error, ExecMode, SelectionMethod};

#[derive(Parser, Debug)]
#[command(name = "ssdd", version, about = "Secure similar document detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a docword file (and optional vocabulary) into a binary corpus cache.
    Ingest(IngestArgs),
    /// Run Bob on a TCP listener.
    Serve(ServeArgs),
    /// Run Alice against a remote or in-process Bob.
    Detect(DetectArgs),
    /// Compute plaintext ground truth.
    Oracle(OracleArgs),
    /// Sweep (method, f, ε) cells and write a CSV report.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// UCI docword file.
    #[arg(long)]
    docword: PathBuf,
    /// UCI vocab file; its length must match W.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output cache path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    listen: String,
    /// Bob's collection (cache or docword).
    #[arg(long)]
    corpus: PathBuf,
    /// Exit after the first session.
    #[arg(long)]
    once: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Number of query documents sampled for Alice.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    queries: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Keep query documents in the target set.
    #[arg(long)]
    overlap: bool,
    /// Use only the first N documents.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    subset: Option<u32>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("bob").required(true).args(["connect", "local_bob"])))]
struct DetectArgs {
    #[arg(long, default_value = "hf")]
    method: SelectionMethod,
    #[arg(long, default_value_t = 0.8)]
    tolerance: f64,
    /// Number of filtering dimensions.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..), conflicts_with = "dims_pct")]
    dims: Option<u32>,
    /// Filtering dimensions as a percentage of the vocabulary.
    #[arg(long)]
    dims_pct: Option<f64>,
    #[command(flatten)]
    query: QueryArgs,
    /// Bob's address.
    #[arg(long)]
    connect: Option<String>,
    /// Run Bob in-process over this collection.
    #[arg(long)]
    local_bob: Option<PathBuf>,
    /// Alice's collection. Defaults to the --local-bob file, split into
    /// queries and targets.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// One-row CSV report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Similar pairs as CSV.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    tolerance: f64,
    #[command(flatten)]
    query: QueryArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["corpus", "synthetic"])))]
struct BenchArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Generate a KOS-shaped corpus with this many documents instead.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    synthetic: Option<u32>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..))]
    dims: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    dims_pct: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.75,0.80,0.85,0.90,0.95"
    )]
    tolerances: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "base,rp,lf,gf,hf")]
    methods: Vec<SelectionMethod>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    queries: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    overlap: bool,
    /// First N documents of the collection.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    subset: u32,
    /// Use the whole collection, ignoring --subset.
    #[arg(long)]
    full: bool,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult = Result<(), Failure>;

fn exec_mode(sequential: bool) -> ExecMode {
    if sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

fn usage_check(config: &SessionConfig) -> CliResult {
    config.validate().map_err(|e| Failure::Usage(e.to_string()))
}

fn load(path: &Path, subset: Option<u32>) -> Result<Corpus, Failure> {
    let corpus = load_corpus_file(path)?;
    Ok(match subset {
        Some(n) => corpus.truncated(n as usize),
        None => corpus,
    })
}

fn ingest(args: IngestArgs) -> CliResult {
    let file = std::fs::File::open(&args.docword)?;
    let corpus = parse_bag_of_words(std::io::BufReader::new(file))?;
    if let Some(path) = &args.vocab {
        let vocab = load_vocabulary(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if vocab.len() != corpus.vocabulary_size() {
            return Err(Error::Dimension {
                expected: corpus.vocabulary_size(),
                found: vocab.len(),
            }
            .into());
        }
    }
    let out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    write_cache(&corpus, out)?;
    let stats = corpus.stats();
    println!(
        "documents={} terms={} entries={} tokens={}",
        stats.documents,
        stats.terms,
        stats.entries,
        stats.total_tokens.unwrap_or(0)
    );
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult {
    let corpus = load(&args.corpus, None)?;
    let n = corpus.vocabulary_size();
    let docs = Arc::new(corpus.vectors().to_vec());
    let cache = MatrixCache::new();
    let listener = TcpListener::bind(&args.listen)?;
    eprintln!(
        "serving {} documents over {} terms on {}",
        docs.len(),
        n,
        listener.local_addr()?
    );
    for stream in listener.incoming() {
        let result = stream.map_err(Error::from).and_then(|s| {
            let peer = s.peer_addr().ok();
            let mut transport = TcpTransport::from_stream(s)?;
            let mut bob = BobSession::from_shared(n, Arc::clone(&docs))?
                .with_exec(exec_mode(args.sequential))
                .with_matrix_cache(cache.clone());
            let summary = bob.serve(&mut transport)?;
            eprintln!(
                "session {:?}: {} filter queries, {} full queries, {} scalar multiplications",
                peer, summary.filter_queries, summary.full_queries, summary.scalar_mult_count
            );
            Ok(())
        });
        if let Err(e) = result {
            eprintln!("session failed: {e}");
            if args.once {
                return Err(e.into());
            }
        }
        if args.once {
            break;
        }
    }
    Ok(())
}

fn write_pairs_csv<W: Write>(
    out: W,
    report: &DetectionReport,
    query_ids: &[usize],
    target_ids: &[usize],
) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Failure::Runtime(std::io::Error::other(e).into());
    w.write_record(["query_doc", "target_doc", "cosine"])
        .map_err(err)?;
    for d in report.decisions.iter().filter(|d| d.similar) {
        w.write_record([
            (query_ids[d.query as usize] + 1).to_string(),
            (target_ids[d.target as usize] + 1).to_string(),
            format!("{:.12}", d.cosine.unwrap_or(0.0)),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

fn detect(args: DetectArgs) -> CliResult {
    let q = &args.query;
    let exec = exec_mode(args.sequential);
    let alice_path = args
        .corpus
        .as_ref()
        .or(args.local_bob.as_ref())
        .ok_or_else(|| Failure::Usage("--corpus is required with --connect".into()))?;
    let alice_corpus = load(alice_path, q.subset)?;
    let n = alice_corpus.vocabulary_size();

    let f = match (args.dims, args.dims_pct) {
        (Some(d), _) => d as usize,
        (None, Some(p)) => dims_from_pct(p, n).map_err(|e| Failure::Usage(e.to_string()))?,
        (None, None) if args.method.filters() => {
            return Err(Failure::Usage(format!(
                "--dims or --dims-pct is required for {}",
                args.method
            )))
        }
        (None, None) => n,
    };
    let config = SessionConfig::new(n, f, args.method, args.tolerance).with_seed(q.seed);
    usage_check(&config)?;
    if let Some(w) = args.method.disclosure_warning() {
        eprintln!("warning: {w}");
    }
    let mask_seed = q.seed ^ 0xa11ce;

    let (report, query_ids, target_ids) = match (&args.local_bob, &args.connect) {
        (Some(bob_path), _) => {
            let (queries, targets, query_ids, target_ids) = if args.corpus.is_some() {
                let bob_corpus = load(bob_path, q.subset)?;
                let split = ssdd::corpus::split_queries(
                    alice_corpus.len(),
                    q.queries as usize,
                    q.seed,
                    true,
                )?;
                let queries: Vec<QueryDoc> = split
                    .queries
                    .iter()
                    .map(|&i| QueryDoc::from_corpus(&alice_corpus, i))
                    .collect();
                let ids: Vec<usize> = (0..bob_corpus.len()).collect();
                (
                    queries,
                    Arc::new(bob_corpus.vectors().to_vec()),
                    split.queries,
                    ids,
                )
            } else {
                let split = ssdd::corpus::split_queries(
                    alice_corpus.len(),
                    q.queries as usize,
                    q.seed,
                    q.overlap,
                )?;
                let (queries, targets) =
                    prepare_parties(&alice_corpus, q.queries as usize, q.seed, q.overlap)?;
                (queries, targets, split.queries, split.targets)
            };
            let opts = LocalRunOptions {
                mask_seed,
                exec,
                cache: None,
            };
            (
                run_local(&config, &queries, targets, &opts)?,
                query_ids,
                target_ids,
            )
        }
        (None, Some(addr)) => {
            let split =
                ssdd::corpus::split_queries(alice_corpus.len(), q.queries as usize, q.seed, true)?;
            let queries: Vec<QueryDoc> = split
                .queries
                .iter()
                .map(|&i| QueryDoc::from_corpus(&alice_corpus, i))
                .collect();
            let mut transport = TcpTransport::connect(addr.as_str())?;
            let alice = AliceSession::new(config.clone(), &queries, mask_seed)?.with_exec(exec);
            let report = alice.run_detection(&mut transport);
            let targets = report
                .decisions
                .iter()
                .map(|d| d.target as usize + 1)
                .max()
                .unwrap_or(0);
            (report, split.queries, (0..targets).collect())
        }
        (None, None) => unreachable!("clap requires one of --connect/--local-bob"),
    };
    if report.aborted {
        return Err(
            Error::Session(report.error.unwrap_or_else(|| "session aborted".into())).into(),
        );
    }

    let m = &report.metrics;
    println!(
        "method={} f={} epsilon={} queries={} pairs={} filtered={} full_products={} similar={} bytes_alice={} bytes_bob={} mean_query_ms={:.3}",
        report.method,
        report.f,
        report.epsilon,
        m.queries,
        m.pairs_total,
        m.pairs_filtered,
        m.full_products,
        report.similar_pairs().len(),
        m.bytes_sent_alice,
        m.bytes_sent_bob,
        report.mean_query_time().as_secs_f64() * 1e3
    );
    if let Some(path) = &args.report {
        let bench = BenchReport {
            rows: vec![BenchRow::from_report(&report)],
        };
        write_report_csv(&bench, path)?;
    }
    match &args.pairs {
        Some(path) => write_pairs_csv(
            std::io::BufWriter::new(std::fs::File::create(path)?),
            &report,
            &query_ids,
            &target_ids,
        )?,
        None => write_pairs_csv(std::io::stdout().lock(), &report, &query_ids, &target_ids)?,
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> CliResult {
    let q = &args.query;
    if !(0.0..=1.0).contains(&args.tolerance) {
        return Err(Failure::Usage(format!(
            "tolerance {} outside [0, 1]",
            args.tolerance
        )));
    }
    let corpus = load(&args.corpus, q.subset)?;
    let split = ssdd::corpus::split_queries(corpus.len(), q.queries as usize, q.seed, q.overlap)?;
    let pick = |ids: &[usize]| -> Vec<DocumentVector> {
        ids.iter().map(|&i| corpus.vectors()[i].clone()).collect()
    };
    let result = oracle_detect(
        &pick(&split.queries),
        &pick(&split.targets),
        args.tolerance,
        ExecMode::Parallel,
    )?;

    let write = |out: &mut dyn Write| -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Failure::Runtime(std::io::Error::other(e).into());
        w.write_record(["query_doc", "target_doc", "cosine"])
            .map_err(err)?;
        for &(qi, ti) in &result.pairs {
            w.write_record([
                (split.queries[qi as usize] + 1).to_string(),
                (split.targets[ti as usize] + 1).to_string(),
                format!("{:.12}", result.cosines[&(qi, ti)]),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    };
    match &args.out {
        Some(path) => write(&mut std::io::BufWriter::new(std::fs::File::create(path)?)),
        None => write(&mut std::io::stdout().lock()),
    }
}

fn bench(args: BenchArgs) -> CliResult {
    let corpus = match (&args.corpus, args.synthetic) {
        (Some(path), _) => load_corpus_file(path)?,
        (None, Some(docs)) => generate(&SyntheticSpec::kos_like(docs as usize, args.seed))?,
        (None, None) => unreachable!("clap requires one of --corpus/--synthetic"),
    };
    let corpus = if args.full {
        corpus
    } else {
        corpus.truncated(args.subset as usize)
    };
    let n = corpus.vocabulary_size();

    let mut dims: Vec<usize> = args.dims.iter().map(|&d| d as usize).collect();
    for &p in &args.dims_pct {
        dims.push(dims_from_pct(p, n).map_err(|e| Failure::Usage(e.to_string()))?);
    }
    if dims.is_empty() {
        dims.push(dims_from_pct(1.0, n)?);
    }
    dims.sort_unstable();
    dims.dedup();
    let mut methods = args.methods.clone();
    methods.sort();
    methods.dedup();
    let mut tolerances = args.tolerances.clone();
    tolerances.sort_by(f64::total_cmp);
    tolerances.dedup();
    for &eps in &tolerances {
        for &m in &methods {
            for &f in &dims {
                usage_check(&SessionConfig::new(n, f, m, eps))?;
            }
        }
    }
    for m in &methods {
        if let Some(w) = m.disclosure_warning() {
            eprintln!("warning: {w}");
        }
    }

    let grid = BenchGrid {
        methods,
        dims,
        tolerances,
        queries: args.queries as usize,
        seed: args.seed,
        overlap: args.overlap,
    };
    let outcome = run_grid(&corpus, &grid, exec_mode(args.sequential))?;
    match &args.report {
        Some(path) => write_report_csv(&outcome.report, path)?,
        None => write_report_csv_to(&outcome.report, std::io::stdout().lock())?,
    }

    print_speedups(&outcome.runs);
    if !outcome.mismatches.is_empty() {
        for m in &outcome.mismatches {
            eprintln!(
                "oracle mismatch: {} f={} ε={}: {} missing, {} extra",
                m.method,
                m.f,
                m.epsilon,
                m.diff.missing.len(),
                m.diff.extra.len()
            );
        }
        return Err(
            Error::Protocol("detection result differs from the plaintext oracle".into()).into(),
        );
    }
    Ok(())
}

/// Wall-clock speedup of each cell over BASE at the same ε. Informational.
fn print_speedups(runs: &[DetectionReport]) {
    let total = |r: &DetectionReport| r.query_times.iter().sum::<Duration>().as_secs_f64();
    let mut lines = Vec::new();
    for r in runs.iter().filter(|r| r.method.filters()) {
        if let Some(base) = runs
            .iter()
            .find(|b| b.method == SelectionMethod::Base && b.epsilon == r.epsilon)
        {
            let t = total(r);
            let speedup = if t > 0.0 {
                total(base) / t
            } else {
                f64::INFINITY
            };
            lines.push(format!(
                "{:>4} f={:<6} ε={:<5} mean_query_ms={:>10.3} speedup_vs_base={:>8.2}",
                r.method.name(),
                r.f,
                r.epsilon,
                r.mean_query_time().as_secs_f64() * 1e3,
                speedup
            ));
        }
    }
    if !lines.is_empty() {
        eprintln!("wall-clock speedup over BASE (not asserted):");
        for l in lines {
            eprintln!("  {l}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Serve(a) => serve(a),
        Command::Detect(a) => detect(a),
        Command::Oracle(a) => oracle(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
