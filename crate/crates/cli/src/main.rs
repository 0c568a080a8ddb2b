use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stepgraph::bench::{run_campaign, CampaignSpec};
use stepgraph::classify::{run_lda_study, summarize_lda, two_class_fixture, FixtureSpec, LdaConfig};
use stepgraph::cv::{select_thresholds, CvGrid, SearchLimits};
use stepgraph::io::{
    count_matrix_csv, default_header, edge_tsv, read_grid_csv, read_json, read_labeled_csv,
    read_matrix_csv, records_csv, write_json, write_labeled_csv, write_matrix_csv, write_model,
    write_text, FitFile, LabelColumn,
};
use stepgraph::metrics::zero_frequency_matrix;
use stepgraph::model::{example16, gen_ar1, gen_bg, gen_nn2, sample_mvn};
use stepgraph::{run_gsa, Error, SampleSet, Thresholds};

#[derive(Debug, Parser)]
#[command(name = "stepgraph", version, about = "Stepwise Gaussian graphical model selection")]
struct Cli {
    /// Base seed for sampling, fold assignment and splits.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Log more detail (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a sample from a synthetic model and write it with its truth.
    Simulate(SimulateArgs),
    /// Estimate a graph and precision matrix from a data CSV.
    Fit(FitArgs),
    /// Cross-validate the threshold grid and write the score surface.
    Cv(CvArgs),
    /// Run a Monte Carlo campaign described by a TOML or JSON file.
    Bench(BenchArgs),
    /// Repeated train/test discriminant analysis on a labelled CSV.
    Lda(LdaArgs),
    /// Count, per pair, the fits in which the edge is absent.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SimModel {
    Ar1,
    Nn2,
    Bg,
    Example16,
    TwoClass,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    model: SimModel,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    #[arg(long, default_value_t = 5)]
    block_size: usize,
    /// Write a header row of column names.
    #[arg(long)]
    header: bool,
    /// Group 1 size for `two-class`.
    #[arg(long, default_value_t = 34)]
    n_positive: usize,
    /// Group 2 size for `two-class`.
    #[arg(long, default_value_t = 99)]
    n_negative: usize,
    /// Mean shift of group 1 for `two-class`.
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    /// Number of shifted features for `two-class`.
    #[arg(long, default_value_t = 5)]
    shifted: usize,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Two-column CSV of (alpha_f, alpha_b) pairs; default is a 20 x 20 grid.
    #[arg(long)]
    grid: Option<PathBuf>,
}

impl GridArgs {
    fn grid(&self) -> Result<CvGrid, Failure> {
        match &self.grid {
            Some(path) => Ok(read_grid_csv(path)?),
            None => Ok(CvGrid::default_grid()),
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    data: PathBuf,
    #[arg(long, requires = "alpha_b", conflicts_with = "cv")]
    alpha_f: Option<f64>,
    #[arg(long, requires = "alpha_f")]
    alpha_b: Option<f64>,
    /// Choose thresholds by cross-validation.
    #[arg(long, required_unless_present = "alpha_f")]
    cv: bool,
    #[command(flatten)]
    grid: GridArgs,
    /// Include the step trace in the fit JSON.
    #[arg(long)]
    trace: bool,
    /// Largest neighbourhood size.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct CvArgs {
    data: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    spec: PathBuf,
    /// Directory with one subdirectory of `<label>_p<p>_r<r>.csv` estimates
    /// per external method.
    #[arg(long)]
    import_estimates: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LdaArgs {
    data: PathBuf,
    /// Name of the label column, or its zero-based index.
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long, default_value_t = 50)]
    screen: usize,
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    #[arg(long, default_value_t = 5)]
    test_positive: usize,
    #[arg(long, default_value_t = 16)]
    test_negative: usize,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// Fit JSON files.
    #[arg(required = true)]
    fits: Vec<PathBuf>,
}

/// An error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

impl Failure {
    fn usage(message: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA };
        let mut message = e.to_string();
        let recent = e.recent_steps();
        if !recent.is_empty() {
            message.push_str("\nlast steps:");
            for s in recent {
                message.push_str(&format!(
                    "\n  {} {:?} ({}, {}) score {:.6}",
                    s.iteration, s.kind, s.edge.0, s.edge.1, s.score
                ));
            }
        }
        Failure { code, message }
    }
}

/// Parameter errors from library constructors are usage errors.
fn usage<T>(r: stepgraph::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::usage)
}

fn thread_count(cli: &Cli) -> usize {
    cli.threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn note(path: &Path) {
    println!("wrote {}", path.display());
}

fn load_sample(path: &Path) -> Result<SampleSet, Failure> {
    let (data, _) = read_matrix_csv(path)?;
    Ok(SampleSet::from_matrix(data)?)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), Failure> {
    let out = &cli.out;
    if let SimModel::TwoClass = a.model {
        let spec = FixtureSpec {
            p: a.p,
            n_positive: a.n_positive,
            n_negative: a.n_negative,
            block_size: a.block_size,
            shifted: a.shifted,
            shift: a.shift,
        };
        let ds = usage(two_class_fixture(&spec, cli.seed))?;
        let path = out.join("labeled.csv");
        write_labeled_csv(&path, &ds)?;
        note(&path);
        return Ok(());
    }
    let model = usage(match a.model {
        SimModel::Ar1 => gen_ar1(a.p, a.rho),
        SimModel::Nn2 => gen_nn2(a.p, cli.seed),
        SimModel::Bg => gen_bg(a.p, a.block_size),
        SimModel::Example16 => Ok(example16()),
        SimModel::TwoClass => unreachable!(),
    })?;
    let sample = usage(sample_mvn(&model, a.n, cli.seed))?;
    let header = a.header.then(|| default_header(model.p()));
    let data = out.join("data.csv");
    write_matrix_csv(&data, &sample.data, header.as_deref())?;
    let truth = out.join("truth.json");
    write_model(&truth, &model)?;
    note(&data);
    note(&truth);
    Ok(())
}

fn limits(a: &FitArgs) -> SearchLimits {
    SearchLimits {
        cap: a.cap,
        max_iter: a.max_iter,
    }
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<(), Failure> {
    let sample = load_sample(&a.data)?;
    let thresholds = match (a.alpha_f, a.alpha_b) {
        (Some(f), Some(b)) => usage(Thresholds::new(f, b))?,
        _ => {
            let grid = a.grid.grid()?;
            let cv = select_thresholds(&sample, a.grid.folds, &grid, cli.seed, limits(a))?;
            let path = cli.out.join("cv.json");
            write_json(&path, &cv)?;
            note(&path);
            cv.best
        }
    };
    let fit = run_gsa(&sample, thresholds, a.cap, a.max_iter)?;
    let fit_path = cli.out.join("fit.json");
    write_json(&fit_path, &FitFile::from_fit(&fit, a.trace))?;
    let edges_path = cli.out.join("edges.tsv");
    write_text(&edges_path, &edge_tsv(&fit))?;
    let th_path = cli.out.join("thresholds.json");
    write_json(&th_path, &thresholds)?;
    for p in [&fit_path, &edges_path, &th_path] {
        note(p);
    }
    println!(
        "alpha_f = {} alpha_b = {} edges = {} iterations = {}",
        thresholds.alpha_f(),
        thresholds.alpha_b(),
        fit.edges.len(),
        fit.iterations
    );
    Ok(())
}

fn cv(cli: &Cli, a: &CvArgs) -> Result<(), Failure> {
    let sample = load_sample(&a.data)?;
    let grid = a.grid.grid()?;
    let cv = select_thresholds(&sample, a.grid.folds, &grid, cli.seed, SearchLimits::default())?;
    let path = cli.out.join("cv.json");
    write_json(&path, &cv)?;
    note(&path);
    println!(
        "best alpha_f = {} alpha_b = {} score = {} ({} of {} pairs failed)",
        cv.best.alpha_f(),
        cv.best.alpha_b(),
        cv.best_score,
        cv.failures.len(),
        grid.pairs().len()
    );
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<(), Failure> {
    let spec = match CampaignSpec::load(&a.spec) {
        Err(Error::Contract(m)) => return Err(Failure::usage(m)),
        other => other?,
    };
    let spec = CampaignSpec {
        seed: if cli.seed != 0 { cli.seed } else { spec.seed },
        ..spec
    };
    let report = run_campaign(&spec, thread_count(cli), a.import_estimates.as_deref())?;
    for p in report.write(&cli.out)? {
        note(&p);
    }
    if report.failures.is_empty() {
        return Ok(());
    }
    let numerical = report.failures.iter().any(|f| f.numerical);
    Err(Failure {
        code: if numerical { EXIT_NUMERICAL } else { EXIT_DATA },
        message: format!("{} replicate fits failed; see failures.csv", report.failures.len()),
    })
}

fn lda(cli: &Cli, a: &LdaArgs) -> Result<(), Failure> {
    let column = match a.label_column.parse::<usize>() {
        Ok(i) => LabelColumn::Index(i),
        Err(_) => LabelColumn::Name(a.label_column.clone()),
    };
    let ds = read_labeled_csv(&a.data, &column)?;
    let cfg = LdaConfig {
        screen: a.screen,
        test_positive: a.test_positive,
        test_negative: a.test_negative,
        repetitions: a.repetitions,
        folds: a.grid.folds,
        grid: a.grid.grid()?,
        seed: cli.seed,
        limits: SearchLimits::default(),
    };
    let pool = rayon_pool(thread_count(cli))?;
    let study = pool.install(|| run_lda_study(&ds, &cfg))?;
    let rows = out_path(cli, "repetitions.csv");
    write_text(&rows, &records_csv(&study.results)?)?;
    note(&rows);
    for (r, e) in &study.failures {
        log::error!("repetition {r} failed: {e}");
    }
    if study.results.is_empty() {
        let numerical = study.failures.iter().any(|(_, e)| e.is_numerical());
        return Err(Failure {
            code: if numerical { EXIT_NUMERICAL } else { EXIT_DATA },
            message: "every repetition failed".into(),
        });
    }
    let summary = summarize_lda(&study)?;
    let path = out_path(cli, "summary.json");
    write_json(&path, &summary)?;
    note(&path);
    for (name, v) in &summary.rows {
        println!("{name}: {:.3} ({:.3})", v.mean, v.sd);
    }
    if !study.failures.is_empty() {
        let numerical = study.failures.iter().any(|(_, e)| e.is_numerical());
        return Err(Failure {
            code: if numerical { EXIT_NUMERICAL } else { EXIT_DATA },
            message: format!("{} repetitions failed", study.failures.len()),
        });
    }
    Ok(())
}

fn out_path(cli: &Cli, name: &str) -> PathBuf {
    cli.out.join(name)
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))
}

fn heatmap(cli: &Cli, a: &HeatmapArgs) -> Result<(), Failure> {
    let mut edges = Vec::with_capacity(a.fits.len());
    for path in &a.fits {
        let f: FitFile = read_json(path)?;
        edges.push(f.edge_set()?);
    }
    let p = edges[0].p();
    let z = zero_frequency_matrix(&edges, p)?;
    let path = out_path(cli, "zero_freq.csv");
    write_text(&path, &count_matrix_csv(&z))?;
    note(&path);
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Fit(a) => {
            let pool = rayon_pool(thread_count(cli))?;
            pool.install(|| fit(cli, a))
        }
        Command::Cv(a) => {
            let pool = rayon_pool(thread_count(cli))?;
            pool.install(|| cv(cli, a))
        }
        Command::Bench(a) => bench(cli, a),
        Command::Lda(a) => lda(cli, a),
        Command::Heatmap(a) => heatmap(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
