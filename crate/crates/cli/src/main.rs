// SPDX-License-Identifier: MIT OR Apache-2.0

//! `rca-cusum`: simulate RCA(1) paths, test and segment series, tabulate
//! critical values and run Monte Carlo experiments.
//!
//! Exit codes: 0 ran, 1 usage error, 2 data error, 3 null rejected with
//! `--fail-on-reject`.

#![forbid(unsafe_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rca_cusum::critical::{CvKey, CvTable, DEFAULT_GRID, DEFAULT_L, DEFAULT_REPS};
use rca_cusum::detector::{
    binary_segmentation_with, run_test_detailed, CvMemo, DEFAULT_MIN_SEGMENT,
};
use rca_cusum::harness::{default_deltas, power_curve, size_experiment};
use rca_cusum::{
    emit_report, load_series, simulate_rca, BreakAt, BreakKind, ColumnSel, CustomWeight, CvFamily,
    CvRequest, CvSource, Error, ExperimentSpec, HeteroCase, IngestSpec, RcaParams, RcaSimSpec,
    RegimeBreak, RegimeSpec, ReportDocument, ReportFormat, Statistic, TestConfig, TestPolicy,
    Transform, TrimSpec, VarianceMode, WeightSpec,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_REJECT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "rca-cusum",
    version,
    about = "Weighted CUSUM changepoint tests for RCA(1) series"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an RCA(1) path and write it as CSV.
    Simulate(SimulateArgs),
    /// Test a series for a change in the AR coefficient.
    Test(TestArgs),
    /// Locate several changes by binary segmentation.
    Segment(SegmentArgs),
    /// Compute a critical value.
    Cv(CvArgs),
    /// Run a Monte Carlo size or power experiment.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// json, csv or plot.
    #[arg(long, default_value = "json")]
    format: String,
    /// Write here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.5)]
    beta0: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma1_sq: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma2_sq: f64,
    #[arg(short, long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    #[arg(long, default_value_t = 0.0)]
    y0: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fraction tau: the coefficient changes from index floor(N tau) + 1.
    #[arg(long, requires = "beta_after")]
    break_at: Option<f64>,
    #[arg(long)]
    beta_after: Option<f64>,
    /// homo-homo, homo-het2, het1-homo or het1-het2: variances x1.5 after N/2.
    #[arg(long, default_value = "homo-homo")]
    hetero: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// CSV file (comma, semicolon or tab separated).
    input: PathBuf,
    /// Column name or zero-based index.
    #[arg(long, default_value = "0")]
    column: String,
    #[arg(long)]
    date_column: Option<String>,
    /// none, log, log-diff or log-plus-one.
    #[arg(long, default_value = "none")]
    transform: String,
}

#[derive(Args, Debug)]
struct MethodArgs {
    /// Weight exponent: < 1/2 weighted sup, 1/2 Darling-Erdős, > 1/2 Rényi.
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    /// Named weight function instead of a power (e.g. loglog).
    #[arg(long, conflicts_with = "kappa")]
    weight: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Rényi trimming as r1,r2 (default ceil((ln N)^2) on both sides).
    #[arg(long)]
    trim: Option<String>,
    /// Use the heteroskedasticity-robust statistic.
    #[arg(long)]
    hetero: bool,
    /// analytic, simulated, fnl or cached:PATH (default depends on the statistic).
    #[arg(long)]
    cv_source: Option<String>,
    /// Number of simulated sups for the F_{N,L} method.
    #[arg(long = "L", default_value_t = DEFAULT_L)]
    l: usize,
    /// Replications for simulated critical values.
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    /// Exit with status 3 when the null is rejected.
    #[arg(long)]
    fail_on_reject: bool,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, default_value_t = DEFAULT_MIN_SEGMENT)]
    min_segment: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct CvArgs {
    /// sup, de, de-finite or renyi.
    #[arg(long, default_value = "sup")]
    family: String,
    #[arg(long, default_value_t = 0.0)]
    kappa: f64,
    #[arg(long)]
    weight: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Sample size for de-finite; with renyi, the default trimming uses it.
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    trim: Option<String>,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    /// Critical-value file to read from and extend.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// paper-2021 (robust tests) or homoskedastic (asymptotic values).
    #[arg(long, default_value = "paper-2021")]
    preset: String,
    /// Comma-separated list.
    #[arg(long)]
    beta0: Option<String>,
    #[arg(short, long)]
    n: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    /// none, mid or end.
    #[arg(long, default_value = "none")]
    r#break: String,
    /// Break sizes for mid or end (default 0.05,...,0.5).
    #[arg(long)]
    deltas: Option<String>,
    #[arg(long, default_value = "homo-het2")]
    hetero: String,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    #[arg(long = "L", default_value_t = DEFAULT_L)]
    l: usize,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    cv_reps: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// json or csv.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Error type of the front end: usage problems versus library errors.
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type Outcome = Result<bool, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("bad {what} value '{x}'")))
        })
        .collect()
}

fn parse_trim(s: &str) -> Result<TrimSpec, Failure> {
    let v: Vec<usize> = parse_list(s, "trim")?;
    match v.as_slice() {
        [r] => Ok(TrimSpec::new(*r, *r)?),
        [r1, r2] => Ok(TrimSpec::new(*r1, *r2)?),
        _ => Err(usage("--trim takes r or r1,r2")),
    }
}

fn parse_hetero_case(s: &str) -> Result<HeteroCase, Failure> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "homo-homo" | "none" => Ok(HeteroCase::HomoHomo),
        "homo-het2" => Ok(HeteroCase::HomoHet2),
        "het1-homo" => Ok(HeteroCase::Het1Homo),
        "het1-het2" => Ok(HeteroCase::Het1Het2),
        _ => Err(usage(format!("unknown heteroskedasticity case '{s}'"))),
    }
}

fn custom_weight(name: &str) -> Result<WeightSpec, Failure> {
    CustomWeight::by_name(name)
        .map(WeightSpec::custom)
        .ok_or_else(|| usage(format!("unknown weight '{name}' (available: loglog)")))
}

fn write_out(path: Option<&PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn ingest(a: &InputArgs) -> Result<IngestSpec, Failure> {
    let transform: Transform = a
        .transform
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let column: ColumnSel = a.column.parse().expect("infallible");
    let mut spec = IngestSpec::new(&a.input, column).with_transform(transform);
    if let Some(d) = &a.date_column {
        spec = spec.with_dates(d.parse().expect("infallible"));
    }
    Ok(spec)
}

fn test_config(m: &MethodArgs) -> Result<TestConfig, Failure> {
    let statistic = match &m.weight {
        Some(name) => Statistic::WeightedSup(custom_weight(name)?),
        None => match Statistic::for_kappa(m.kappa)? {
            Statistic::Renyi { kappa, .. } => Statistic::Renyi {
                kappa,
                trim: m.trim.as_deref().map(parse_trim).transpose()?,
            },
            s => {
                if m.trim.is_some() {
                    return Err(usage(
                        "--trim applies only to Rényi statistics (kappa > 1/2)",
                    ));
                }
                s
            }
        },
    };
    let mode = if m.hetero {
        VarianceMode::HeteroRobust
    } else {
        VarianceMode::Homoskedastic
    };
    let simulated = CvSource::Simulated {
        reps: m.reps,
        grid: m.grid,
        seed: m.seed,
    };
    let source = match m.cv_source.as_deref() {
        None => {
            let robust_sup = m.hetero && matches!(statistic, Statistic::WeightedSup(_));
            let closed = m.weight.is_none() && (m.kappa == 0.0 || m.kappa == 0.5 || m.kappa == 1.0);
            if robust_sup {
                CvSource::Fnl {
                    l: m.l,
                    seed: m.seed,
                }
            } else if closed && !m.hetero {
                CvSource::Analytic
            } else {
                simulated
            }
        }
        Some("analytic") => CvSource::Analytic,
        Some("simulated") => simulated,
        Some("fnl") => CvSource::Fnl {
            l: m.l,
            seed: m.seed,
        },
        Some(s) if s.starts_with("cached:") => CvSource::Cached {
            path: PathBuf::from(&s["cached:".len()..]),
            reps: m.reps,
            grid: m.grid,
            seed: m.seed,
        },
        Some(s) => return Err(usage(format!("unknown --cv-source '{s}'"))),
    };
    let config = TestConfig::new(statistic, mode, m.alpha, source);
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn seeds(config: &TestConfig) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    match &config.cv_source {
        CvSource::Simulated { seed, .. } | CvSource::Cached { seed, .. } => {
            out.insert("critical_value".into(), *seed);
        }
        CvSource::Fnl { seed, .. } => {
            out.insert("fnl".into(), *seed);
        }
        CvSource::Analytic => {}
    }
    out
}

fn report_format(s: &str) -> Result<ReportFormat, Failure> {
    s.parse().map_err(|e: Error| usage(e.to_string()))
}

fn input_info(spec: &IngestSpec, loaded: &rca_cusum::io::LoadedSeries) -> rca_cusum::io::InputInfo {
    rca_cusum::io::InputInfo {
        label: loaded.series.label.clone(),
        n: loaded.series.n(),
        path: Some(spec.path.clone()),
        transform: Some(spec.transform),
        date_range: loaded
            .dates
            .as_ref()
            .and_then(|d| Some((d.first()?.clone(), d.last()?.clone()))),
    }
}

fn cmd_test(a: &TestArgs) -> Outcome {
    let started = Instant::now();
    let format = report_format(&a.out.format)?;
    let config = test_config(&a.method)?;
    let spec = ingest(&a.input)?;
    let loaded = load_series(&spec)?;
    let memo = CvMemo::new();
    let (report, plot) = run_test_detailed(&loaded.series, &config, &memo)?;
    let reject = report.reject;
    let mut doc = ReportDocument::new(
        "test",
        json!({ "test": config, "input": spec, "fail_on_reject": a.method.fail_on_reject }),
    );
    doc.seeds = seeds(&config);
    doc.input = Some(input_info(&spec, &loaded));
    doc.tests.push(report);
    doc.plot = Some(plot);
    doc.elapsed_seconds = started.elapsed().as_secs_f64();
    write_out(a.out.output.as_ref(), &emit_report(&doc, format)?)?;
    Ok(reject && a.method.fail_on_reject)
}

fn cmd_segment(a: &SegmentArgs) -> Outcome {
    let started = Instant::now();
    let format = report_format(&a.out.format)?;
    if format == ReportFormat::PlotData {
        return Err(usage("segment has no plot output; use test on a segment"));
    }
    let config = test_config(&a.method)?;
    let spec = ingest(&a.input)?;
    let loaded = load_series(&spec)?;
    let set = binary_segmentation_with(&loaded.series, &config, a.min_segment, &CvMemo::new())?;
    let reject = !set.is_empty();
    let mut doc = ReportDocument::new(
        "segment",
        json!({
            "test": config,
            "input": spec,
            "min_segment": a.min_segment,
            "fail_on_reject": a.method.fail_on_reject,
        }),
    );
    doc.seeds = seeds(&config);
    doc.input = Some(input_info(&spec, &loaded));
    doc.segmentations.push(set);
    doc.elapsed_seconds = started.elapsed().as_secs_f64();
    write_out(a.out.output.as_ref(), &emit_report(&doc, format)?)?;
    Ok(reject && a.method.fail_on_reject)
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome {
    let params =
        RcaParams::new(a.beta0, a.sigma1_sq, a.sigma2_sq).map_err(|e| usage(e.to_string()))?;
    let mut breaks = Vec::new();
    let case = parse_hetero_case(&a.hetero)?;
    if case != HeteroCase::HomoHomo {
        let (s1, s2) = match case {
            HeteroCase::HomoHet2 => (None, Some(1.5)),
            HeteroCase::Het1Homo => (Some(1.5), None),
            _ => (Some(1.5), Some(1.5)),
        };
        breaks.push(RegimeBreak::variance(BreakAt::Index(a.n / 2), s1, s2));
    }
    if let (Some(tau), Some(b)) = (a.break_at, a.beta_after) {
        let at = BreakAt::Fraction(tau);
        let m = at.resolve(a.n).map_err(|e| usage(e.to_string()))?;
        match breaks.iter_mut().find(|x| x.at == BreakAt::Index(m)) {
            Some(x) => x.beta = Some(b),
            None => breaks.push(RegimeBreak::beta(BreakAt::Index(m), b)),
        }
        breaks.sort_by_key(|x| match x.at {
            BreakAt::Index(i) => i,
            BreakAt::Fraction(_) => 0,
        });
    }
    let spec = RcaSimSpec::new(params, a.n, a.seed)
        .with_burn_in(a.burn_in)
        .with_y0(a.y0)
        .with_regimes(RegimeSpec { breaks });
    let series = simulate_rca(&spec)?;
    let mut w = csv_writer();
    w.write_record(["i", "y"]).map_err(Error::from)?;
    for (i, y) in series.values().iter().enumerate() {
        w.write_record([i.to_string(), format!("{y:e}")])
            .map_err(Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_out(a.output.as_ref(), &bytes)?;
    Ok(false)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn cmd_cv(a: &CvArgs) -> Outcome {
    let weight = match &a.weight {
        Some(name) => custom_weight(name)?,
        None => WeightSpec::kappa(a.kappa).map_err(|e| usage(e.to_string()))?,
    };
    let family = match a.family.as_str() {
        "sup" | "bridge" => CvFamily::WeightedSup(weight),
        "de" => CvFamily::DarlingErdos {
            finite_sample: false,
            n: a.n.unwrap_or(0),
        },
        "de-finite" => CvFamily::DarlingErdos {
            finite_sample: true,
            n: a.n.ok_or_else(|| usage("de-finite needs --n"))?,
        },
        "renyi" => {
            let trim = match (&a.trim, a.n) {
                (Some(t), _) => parse_trim(t)?,
                (None, Some(n)) => TrimSpec::default_for(n),
                (None, None) => TrimSpec::new(1, 1)?,
            };
            CvFamily::Renyi {
                kappa: a.kappa,
                trim,
            }
        }
        f => {
            return Err(usage(format!(
                "unknown family '{f}' (sup, de, de-finite, renyi)"
            )))
        }
    };
    let req = CvRequest {
        family,
        alpha: a.alpha,
        reps: a.reps,
        grid_points: a.grid,
        seed: a.seed,
    };
    req.validate().map_err(|e| usage(e.to_string()))?;
    let (value, provenance) = match &a.cache {
        Some(path) => {
            let mut table = CvTable::load(path)?;
            let key = req
                .cache_key()
                .ok_or_else(|| usage("data-driven critical values are not cached"))?;
            match table.get(&key) {
                Some(v) => (v, json!("cache")),
                None => {
                    let (v, p) = req.compute(None)?;
                    table.insert(key, v);
                    table.save(path)?;
                    (v, serde_json::to_value(p).map_err(Error::from)?)
                }
            }
        }
        None => {
            let (v, p) = req.compute(None)?;
            (v, serde_json::to_value(p).map_err(Error::from)?)
        }
    };
    let key: Option<CvKey> = req.cache_key();
    let out = json!({ "request": req, "key": key, "value": value, "provenance": provenance });
    let mut bytes = serde_json::to_vec_pretty(&out).map_err(Error::from)?;
    bytes.push(b'\n');
    write_out(None, &bytes)?;
    Ok(false)
}

fn cmd_bench(a: &BenchArgs) -> Outcome {
    let kind = match a.r#break.as_str() {
        "none" => BreakKind::None,
        "mid" => BreakKind::Mid(0.0),
        "end" => BreakKind::End(0.0),
        b => return Err(usage(format!("unknown break kind '{b}' (none, mid, end)"))),
    };
    let mut spec = ExperimentSpec::paper_2021(parse_hetero_case(&a.hetero)?, kind);
    spec.policy = match a.preset.as_str() {
        "paper-2021" => TestPolicy::HeteroRobust {
            l: a.l,
            cv_reps: a.cv_reps,
            cv_grid: a.grid,
        },
        "homoskedastic" => TestPolicy::Homoskedastic {
            asymptotic: true,
            cv_reps: a.cv_reps,
            cv_grid: a.grid,
        },
        p => return Err(usage(format!("unknown preset '{p}'"))),
    };
    if let Some(b) = &a.beta0 {
        spec.beta0s = parse_list(b, "beta0")?;
    }
    if let Some(n) = &a.n {
        spec.n_list = parse_list(n, "n")?;
    }
    if let Some(k) = &a.kappa {
        spec.kappas = parse_list(k, "kappa")?;
    }
    spec.reps = a.reps;
    spec.alpha = a.alpha;
    spec.seed = a.seed;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let table = if kind == BreakKind::None {
        if a.deltas.is_some() {
            return Err(usage("--deltas needs --break mid or end"));
        }
        size_experiment(&spec)?
    } else {
        let deltas = match &a.deltas {
            Some(d) => parse_list(d, "delta")?,
            None => default_deltas(),
        };
        power_curve(&spec, &deltas)?
    };
    let bytes = match a.format.as_str() {
        "csv" => table.to_delimited().into_bytes(),
        "json" => {
            let doc = json!({ "experiment": spec, "table": table });
            let mut b = serde_json::to_vec_pretty(&doc).map_err(Error::from)?;
            b.push(b'\n');
            b
        }
        f => return Err(usage(format!("unknown format '{f}' (csv, json)"))),
    };
    write_out(a.output.as_ref(), &bytes)?;
    Ok(false)
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Test(a) => cmd_test(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_REJECT),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                ExitCode::from(EXIT_DATA)
            } else {
                ExitCode::from(EXIT_USAGE)
            }
        }
    }
}
