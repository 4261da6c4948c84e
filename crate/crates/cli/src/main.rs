//! Command-line front end: solve instances, verify solution files,
//! benchmark a directory of instances against reference values, tune
//! configurations over a training set, and generate benchmark-style
//! instances or configuration enumerations.
//!
//! Primary (machine-readable) output goes to stdout and is a pure function
//! of arguments, input files, and the seed; timing lines go to stderr.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! mismatch.

use std::fmt::Write as FmtWrite;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use splp::cmcs::{parse_config, preset, run_cmcs, write_config, Configuration, RunParams};
use splp::generator::{
    config_id, count_feasible, enumerate_meaningful, tune, ComponentPool, GeneratorError,
    RecordStore, TrainingParams, TuneParams,
};
use splp::instance::{generate_kg_instance, parse_instance, write_instance, Instance, KgClass};
use splp::solution::{set_objective, RankMatrix};
use splp::Money;

#[derive(Parser)]
#[command(name = "cmcs-splp", version, about = "Simple plant location solver toolkit")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for parallel commands (0 = one per core).
    /// The CMCS_SPLP_THREADS environment variable overrides this flag.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Time budget in milliseconds (per run, or per training test for tune).
    #[arg(long = "budget-ms", global = true)]
    budget_ms: Option<u64>,

    /// Report rendering.
    #[arg(long, global = true, value_enum, default_value_t = Format::Tsv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tsv,
    Pretty,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration on one instance and write the best solution.
    Solve(SolveArgs),
    /// Recompute a solution file's objective against its instance.
    Verify(VerifyArgs),
    /// Solve every instance in a directory and tabulate the results.
    Bench(BenchArgs),
    /// Enumerate configurations, race them on a training set, keep the best.
    Tune(TuneArgs),
    /// Generate a benchmark-style instance file.
    Generate(GenerateArgs),
    /// Enumerate meaningful configurations or just count them.
    Enumerate(EnumerateArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file.
    instance: PathBuf,

    /// Configuration file (mutually exclusive with --preset).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in configuration name.
    #[arg(long, default_value = "paper-3")]
    preset: String,

    /// Independent restarts; the best result across restarts is kept.
    #[arg(long, default_value_t = 1)]
    restarts: u32,

    /// Stop each restart after this many component applications instead of
    /// on the clock alone (useful for exactly reproducible runs).
    #[arg(long)]
    iterations: Option<u64>,

    /// Solution file path; written to stdout when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Instance file.
    instance: PathBuf,
    /// Solution file ("value <v>" plus a line of 1-based site ids).
    solution: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory containing instance files.
    dir: PathBuf,

    /// Configuration file (mutually exclusive with --preset).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in configuration name.
    #[arg(long, default_value = "paper-3")]
    preset: String,

    /// Runs per instance, using seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    seeds: u64,

    /// Reference values: lines of "name<TAB>value" (extra columns ignored).
    #[arg(long)]
    references: Option<PathBuf>,

    /// Stop each run after this many component applications.
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Args)]
struct TuneArgs {
    /// Components per configuration.
    #[arg(long, default_value_t = 2)]
    lambda: usize,

    /// Component pool name.
    #[arg(long, default_value = "paper")]
    pool: String,

    /// Training tests to draw.
    #[arg(long, default_value_t = 200)]
    tests: usize,

    /// Smallest training instance size (sites = clients).
    #[arg(long, default_value_t = 300)]
    size_min: usize,

    /// Largest training instance size.
    #[arg(long, default_value_t = 400)]
    size_max: usize,

    /// Where to write the winning configuration.
    #[arg(long, short = 'o', default_value = "tuned.cmcs")]
    output: PathBuf,

    /// Evaluation record file; defaults to the output path with a
    /// ".records.tsv" extension. Reusing it resumes interrupted runs and
    /// makes reruns reproduce the identical winner.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Instance class: a, b, or c.
    #[arg(long)]
    class: String,

    /// Sites.
    #[arg(long)]
    m: usize,

    /// Clients.
    #[arg(long)]
    n: usize,

    /// Draw a symmetric cost matrix (requires m == n).
    #[arg(long)]
    symmetric: bool,

    /// Output path; defaults to "<instance name>.splp".
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Component pool name.
    #[arg(long, default_value = "paper")]
    pool: String,

    /// Components per configuration.
    #[arg(long)]
    lambda: usize,

    /// Print "feasible N, meaningful M" instead of the configurations.
    #[arg(long)]
    count_only: bool,
}

/// A failed command, carrying the process exit code.
enum Failure {
    Usage(String),
    Data(String),
    Mismatch(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Mismatch(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Mismatch(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn data(msg: impl Into<String>) -> Failure {
    Failure::Data(msg.into())
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let global = Global {
        seed: cli.seed,
        threads: resolve_threads(cli.threads),
        budget_ms: cli.budget_ms,
        format: cli.format,
    };
    match cli.command {
        Command::Solve(args) => cmd_solve(&global, args),
        Command::Verify(args) => cmd_verify(&global, args),
        Command::Bench(args) => cmd_bench(&global, args),
        Command::Tune(args) => cmd_tune(&global, args),
        Command::Generate(args) => cmd_generate(&global, args),
        Command::Enumerate(args) => cmd_enumerate(&global, args),
    }
}

struct Global {
    seed: u64,
    threads: usize,
    budget_ms: Option<u64>,
    format: Format,
}

fn resolve_threads(flag: Option<usize>) -> usize {
    match std::env::var("CMCS_SPLP_THREADS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(t) => t,
            Err(_) => {
                eprintln!("warning: ignoring malformed CMCS_SPLP_THREADS={:?}", raw);
                flag.unwrap_or(0)
            }
        },
        Err(_) => flag.unwrap_or(0),
    }
}

fn budget_from(budget_ms: Option<u64>, default_ms: u64) -> CliResult<Duration> {
    let ms = budget_ms.unwrap_or(default_ms);
    if ms == 0 {
        return Err(usage("budget must be positive"));
    }
    Ok(Duration::from_millis(ms))
}

fn worker_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| data(format!("could not start worker pool: {}", e)))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| data(format!("{}: {}", path.display(), e)))
}

fn load_instance(path: &Path) -> CliResult<Instance> {
    let text = read_file(path)?;
    parse_instance(&text).map_err(|e| data(format!("{}: {}", path.display(), e)))
}

fn load_configuration(config: &Option<PathBuf>, preset_name: &str) -> CliResult<Configuration> {
    match config {
        Some(path) => {
            let text = read_file(path)?;
            parse_config(&text).map_err(|e| data(format!("{}: {}", path.display(), e)))
        }
        None => preset(preset_name).map_err(|e| usage(e.to_string())),
    }
}

fn pool_by_name(name: &str) -> CliResult<ComponentPool> {
    match name {
        "paper" => Ok(ComponentPool::paper()),
        other => Err(usage(format!("unknown pool \"{}\" (available: paper)", other))),
    }
}

fn display_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| {
        path.to_string_lossy().into_owned()
    })
}

/// The shared starting-set protocol: r sites drawn without replacement,
/// r uniform in [2, max(2, m/10)].
fn draw_initial_set(rng: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    let r_max = (m / 10).max(2);
    let r = rng.random_range(2..=r_max);
    let mut s0 = rand::seq::index::sample(rng, m, r).into_vec();
    s0.sort_unstable();
    s0
}

fn write_solution_text(value: Money, sites: &[usize]) -> String {
    let ids: Vec<String> = sites.iter().map(|&i| (i + 1).to_string()).collect();
    format!("value {}\n{}\n", value, ids.join(" "))
}

/// Parses "value <v>" plus one line of 1-based site ids. Returns the stated
/// value and the 0-based site list (order preserved, duplicates rejected).
fn parse_solution_text(text: &str) -> Result<(Money, Vec<usize>), String> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or("empty solution file")?;
    let value: Money = header
        .strip_prefix("value")
        .ok_or_else(|| format!("expected \"value <v>\", found \"{}\"", header))?
        .trim()
        .parse()
        .map_err(|_| format!("unparsable objective in \"{}\"", header))?;
    let site_line = lines.next().ok_or("missing site list line")?;
    let mut sites = Vec::new();
    for token in site_line.split_whitespace() {
        let id: usize = token
            .parse()
            .map_err(|_| format!("\"{}\" is not a site index", token))?;
        if id == 0 {
            return Err("site indices are 1-based; found 0".to_string());
        }
        if sites.contains(&(id - 1)) {
            return Err(format!("duplicate site {}", id));
        }
        sites.push(id - 1);
    }
    if let Some(extra) = lines.next() {
        return Err(format!("unexpected trailing content \"{}\"", extra));
    }
    Ok((value, sites))
}

struct SolveOutcome {
    value: Money,
    sites: Vec<usize>,
    iterations: u64,
}

/// One full solve: `restarts` independent starts from protocol-drawn sets,
/// keeping the best (earliest on ties, since only strict improvements
/// replace the incumbent).
fn solve_instance(
    inst: &Arc<Instance>,
    rank: &RankMatrix,
    config: &Configuration,
    budget: Duration,
    iterations: Option<u64>,
    restarts: u32,
    seed: u64,
) -> CliResult<SolveOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = RunParams { budget, record_trace: false, max_iterations: iterations };
    let mut best: Option<SolveOutcome> = None;
    for _ in 0..restarts {
        let s0 = draw_initial_set(&mut rng, inst.m());
        let result = run_cmcs(config, inst, rank, &s0, &params, &mut rng)
            .map_err(|e| data(e.to_string()))?;
        if best.as_ref().is_none_or(|b| result.best_value < b.value) {
            best = Some(SolveOutcome {
                value: result.best_value,
                sites: result.best.open_sites().to_vec(),
                iterations: result.iterations,
            });
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn cmd_solve(global: &Global, args: SolveArgs) -> CliResult<()> {
    if args.restarts == 0 {
        return Err(usage("restarts must be positive"));
    }
    let budget = budget_from(global.budget_ms, 1_000)?;
    let config = load_configuration(&args.config, &args.preset)?;
    let inst = Arc::new(load_instance(&args.instance)?);
    let rank = RankMatrix::build(&inst);
    let name = display_name(&args.instance);

    let started = Instant::now();
    let outcome = solve_instance(
        &inst,
        &rank,
        &config,
        budget,
        args.iterations,
        args.restarts,
        global.seed,
    )?;
    eprintln!(
        "{} elapsed_ms {} applications {}",
        name,
        started.elapsed().as_millis(),
        outcome.iterations
    );

    let text = write_solution_text(outcome.value, &outcome.sites);
    let summary = match global.format {
        Format::Tsv => format!(
            "solve\t{}\t{}\t{}\t{}",
            name, outcome.value, args.restarts, global.seed
        ),
        Format::Pretty => format!(
            "instance {}: value {} ({} restart(s), seed {})",
            name, outcome.value, args.restarts, global.seed
        ),
    };
    match &args.output {
        Some(path) => {
            fs::write(path, &text).map_err(|e| data(format!("{}: {}", path.display(), e)))?;
            println!("{}", summary);
        }
        None => {
            // The solution itself is the primary stdout payload; keep the
            // summary out of its way.
            print!("{}", text);
            eprintln!("{}", summary);
        }
    }
    Ok(())
}

fn cmd_verify(global: &Global, args: VerifyArgs) -> CliResult<()> {
    let inst = load_instance(&args.instance)?;
    let text = read_file(&args.solution)?;
    let (stated, sites) = parse_solution_text(&text)
        .map_err(|e| data(format!("{}: {}", args.solution.display(), e)))?;
    if sites.is_empty() {
        return Err(data(format!("{}: no opened sites listed", args.solution.display())));
    }
    if let Some(&site) = sites.iter().find(|&&s| s >= inst.m()) {
        return Err(data(format!(
            "{}: site {} out of range (instance has {} sites)",
            args.solution.display(),
            site + 1,
            inst.m()
        )));
    }
    let computed = set_objective(&inst, &sites).map_err(|e| data(e.to_string()))?;
    let verdict = if computed == stated { "match" } else { "mismatch" };
    match global.format {
        Format::Tsv => println!(
            "verify\t{}\t{}\t{}\t{}",
            display_name(&args.instance),
            computed,
            stated,
            verdict
        ),
        Format::Pretty => println!(
            "instance {}: computed {}, stated {}: {}",
            display_name(&args.instance),
            computed,
            stated,
            verdict
        ),
    }
    if computed != stated {
        return Err(Failure::Mismatch(format!(
            "computed value {} does not match stated value {}",
            computed, stated
        )));
    }
    Ok(())
}

fn load_references(path: &Path) -> CliResult<std::collections::HashMap<String, Money>> {
    let mut refs = std::collections::HashMap::new();
    for (line_no, line) in read_file(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(name), Some(raw)) = (cols.next(), cols.next()) else {
            return Err(data(format!(
                "{}:{}: expected \"name<TAB>value\"",
                path.display(),
                line_no + 1
            )));
        };
        let value: Money = raw.trim().parse().map_err(|_| {
            data(format!("{}:{}: \"{}\" is not a value", path.display(), line_no + 1, raw))
        })?;
        refs.insert(name.trim().to_string(), value);
    }
    Ok(refs)
}

struct BenchRow {
    name: String,
    seed: u64,
    value: Money,
    reference: Option<Money>,
}

fn cmd_bench(global: &Global, args: BenchArgs) -> CliResult<()> {
    if args.seeds == 0 {
        return Err(usage("seeds must be positive"));
    }
    let budget = budget_from(global.budget_ms, 1_000)?;
    let config = load_configuration(&args.config, &args.preset)?;
    let references = match &args.references {
        Some(path) => load_references(path)?,
        None => Default::default(),
    };

    let mut paths: Vec<PathBuf> = fs::read_dir(&args.dir)
        .map_err(|e| data(format!("{}: {}", args.dir.display(), e)))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(data(format!("{}: no instance files", args.dir.display())));
    }
    let instances: Vec<(String, Arc<Instance>, Arc<RankMatrix>)> = paths
        .iter()
        .map(|path| {
            let inst = Arc::new(load_instance(path)?);
            let rank = Arc::new(RankMatrix::build(&inst));
            Ok((display_name(path), inst, rank))
        })
        .collect::<CliResult<_>>()?;

    let jobs: Vec<(usize, u64)> = (0..instances.len())
        .flat_map(|i| (0..args.seeds).map(move |s| (i, global.seed.wrapping_add(s))))
        .collect();
    let pool = worker_pool(global.threads)?;
    let mut rows: Vec<BenchRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(idx, seed)| {
                let (name, inst, rank) = &instances[idx];
                let started = Instant::now();
                let outcome =
                    solve_instance(inst, rank, &config, budget, args.iterations, 1, seed)?;
                eprintln!("{} seed {} elapsed_ms {}", name, seed, started.elapsed().as_millis());
                Ok(BenchRow {
                    name: name.clone(),
                    seed,
                    value: outcome.value,
                    reference: references.get(name).copied(),
                })
            })
            .collect::<CliResult<_>>()
    })?;
    rows.sort_by(|a, b| a.name.cmp(&b.name).then(a.seed.cmp(&b.seed)));

    let (mut improved, mut same, mut worse) = (0usize, 0usize, 0usize);
    for row in &rows {
        if let Some(reference) = row.reference {
            match row.value.cmp(&reference) {
                std::cmp::Ordering::Less => improved += 1,
                std::cmp::Ordering::Equal => same += 1,
                std::cmp::Ordering::Greater => worse += 1,
            }
        }
    }

    match global.format {
        Format::Tsv => {
            println!("instance\tseed\tvalue\treference\tdiff");
            for row in &rows {
                let (reference, diff) = match row.reference {
                    Some(r) => (r.to_string(), (row.value - r).to_string()),
                    None => ("n/a".to_string(), "n/a".to_string()),
                };
                println!("{}\t{}\t{}\t{}\t{}", row.name, row.seed, row.value, reference, diff);
            }
            println!("summary\timproved\t{}\tsame\t{}\tworse\t{}", improved, same, worse);
        }
        Format::Pretty => {
            let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
            println!("{:width$}  {:>6}  {:>12}  {:>12}  {:>8}", "instance", "seed", "value", "reference", "diff");
            for row in &rows {
                let (reference, diff) = match row.reference {
                    Some(r) => (r.to_string(), (row.value - r).to_string()),
                    None => ("n/a".to_string(), "n/a".to_string()),
                };
                println!(
                    "{:width$}  {:>6}  {:>12}  {:>12}  {:>8}",
                    row.name, row.seed, row.value, reference, diff
                );
            }
            println!("improved {}, same {}, worse {}", improved, same, worse);
        }
    }
    Ok(())
}

fn cmd_tune(global: &Global, args: TuneArgs) -> CliResult<()> {
    let budget = budget_from(global.budget_ms, 500)?;
    let pool = pool_by_name(&args.pool)?;
    let params = TuneParams {
        lambda: args.lambda,
        training: TrainingParams {
            count: args.tests,
            size_range: args.size_min..=args.size_max,
            classes: vec![KgClass::A, KgClass::B, KgClass::C],
            budget,
        },
        master_seed: global.seed,
        threads: global.threads,
    };
    let records_path = args
        .records
        .clone()
        .unwrap_or_else(|| args.output.with_extension("records.tsv"));
    let store = RecordStore::open(&records_path).map_err(|e| data(e.to_string()))?;

    let started = Instant::now();
    let report = tune(&pool, &params, &store).map_err(|e| match e {
        GeneratorError::NoMeaningfulConfigurations(_)
        | GeneratorError::LambdaOutOfRange { .. }
        | GeneratorError::BadTrainingParams(_)
        | GeneratorError::TooFewTests(_) => usage(e.to_string()),
        other => data(other.to_string()),
    })?;
    eprintln!("tune elapsed_ms {}", started.elapsed().as_millis());

    let mut winner = report.winner.clone();
    winner.set_label(format!("tuned lambda={} seed={}", args.lambda, global.seed));
    // The label survives as a comment header; parse_config skips it.
    let text = format!("# {}\n{}", winner.label(), write_config(&winner));
    fs::write(&args.output, text)
        .map_err(|e| data(format!("{}: {}", args.output.display(), e)))?;

    match global.format {
        Format::Tsv => {
            println!("enumerated\t{}", report.enumerated);
            println!("stage1_survivors\t{}", report.stage1_survivors);
            println!("tests\t{}", report.tests);
            println!("winner\t{}", report.winner_id);
            println!("normalized_sum\t{:.6}", report.winner_sum);
            println!("new_evaluations\t{}", report.new_evaluations);
        }
        Format::Pretty => {
            println!("enumerated {} meaningful configurations", report.enumerated);
            println!("{} survived the screening stage", report.stage1_survivors);
            println!("evaluated survivors on {} tests", report.tests);
            println!(
                "winner {} with normalized sum {:.6} ({} new evaluations)",
                report.winner_id, report.winner_sum, report.new_evaluations
            );
        }
    }
    eprintln!("wrote {} (records in {})", args.output.display(), records_path.display());
    Ok(())
}

fn cmd_generate(global: &Global, args: GenerateArgs) -> CliResult<()> {
    let class = KgClass::parse(&args.class)
        .ok_or_else(|| usage(format!("unknown class \"{}\" (use a, b, or c)", args.class)))?;
    let inst = generate_kg_instance(class, args.m, args.n, args.symmetric, global.seed)
        .map_err(|e| usage(e.to_string()))?;
    let path = args
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.splp", inst.name())));
    fs::write(&path, write_instance(&inst))
        .map_err(|e| data(format!("{}: {}", path.display(), e)))?;
    match global.format {
        Format::Tsv => println!("generate\t{}\t{}", inst.name(), path.display()),
        Format::Pretty => println!("wrote instance {} to {}", inst.name(), path.display()),
    }
    Ok(())
}

fn cmd_enumerate(global: &Global, args: EnumerateArgs) -> CliResult<()> {
    let pool = pool_by_name(&args.pool)?;
    let feasible =
        count_feasible(pool.len(), args.lambda).map_err(|e| usage(e.to_string()))?;
    if args.count_only {
        let meaningful = enumerate_meaningful(&pool, args.lambda).count();
        println!("feasible {}, meaningful {}", feasible, meaningful);
        return Ok(());
    }
    let mut count = 0usize;
    let mut out = String::new();
    for config in enumerate_meaningful(&pool, args.lambda) {
        if count > 0 {
            out.push('\n');
        }
        write!(out, "# {}\n{}", config_id(&config), write_config(&config)).expect("string write");
        count += 1;
        if count % 256 == 0 {
            print!("{}", out);
            out.clear();
        }
    }
    print!("{}", out);
    match global.format {
        Format::Tsv => eprintln!("meaningful\t{}", count),
        Format::Pretty => eprintln!("{} meaningful configurations", count),
    }
    Ok(())
}
