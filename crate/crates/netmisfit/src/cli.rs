//! Command-line front end: test a supplied graph, sample graphs, and run
//! Monte Carlo studies.
//!
//! JSON goes to stdout, human-readable logging to stderr, and the exit
//! code encodes the outcome so shell pipelines can branch without
//! parsing: 0 well-specified, 1 misspecified, 2 degenerate, 64 usage,
//! 65 data format, 70 internal.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::erg::{erg_mle, erg_observations, erg_test_with_fit, ErgSizeFactor, ErgTestMode};
use crate::error::Error;
use crate::graph::{read_graph, write_graph, Graph};
use crate::montecarlo::{
    run_scenario, McSummary, ModelKind, SbmMcFit, Scenario, ScenarioSpec, TestConfig,
};
use crate::report::{
    erg_fit_block, erg_test_block, sbm_fit_block, sbm_test_block, JsonReport,
};
use crate::samplers::{
    sample_er, sample_sbm, sample_erg_scenario2, sample_sbm_scenario2, SbmParams, ScenarioMeta,
    Seed,
};
use crate::sbm::{
    fit_with, sbm_test_with_fit, BoundaryPolicy, IsolatedPolicy, SbmFitSpec, SbmSizeFactor,
    SbmTestMode, SbmTestOptions,
};
use crate::Decision;

pub const EXIT_WELL_SPECIFIED: i32 = 0;
pub const EXIT_MISSPECIFIED: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_INTERNAL: i32 = 70;

/// Seed resolution: flag, then NETMISFIT_SEED, then 0.
fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("NETMISFIT_SEED").ok().and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

#[derive(Debug, Parser)]
#[command(
    name = "netmisfit",
    version,
    about = "Information-matrix misspecification tests for random-graph models"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test a graph file for misspecification under the chosen model.
    Test(TestArgs),
    /// Sample a graph from a model scenario and write it to disk.
    Sample(SampleArgs),
    /// Run Monte Carlo replications and write CSV/JSON summaries.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Erg,
    Sbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Gradient-projected variance bracket (ERG only).
    General,
    /// Literal forms: D_n in the ERG variance bracket, full 6x6 SBM inverse.
    Paper,
    /// Rank-reduced SBM decision path (SBM only).
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SizeFactorArg {
    /// F = C(n,2), the number of observations.
    Pairs,
    /// F = 1, the bare ERG statistic (ERG only).
    Paper,
    /// F = n, the vertex count (SBM only).
    Vertices,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Null,
    Perturbed,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    graph: PathBuf,
    /// Labels file (SBM; enables the observed-label estimator).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Block count for the variational estimator (SBM without labels).
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Defaults to `paper` for erg and `reduced` for sbm.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Defaults to `pairs` for erg and `vertices` for sbm.
    #[arg(long, value_enum)]
    size_factor: Option<SizeFactorArg>,
    /// Clamp boundary eta estimates to [eps, 1-eps] instead of erroring.
    #[arg(long, value_name = "EPS")]
    clamp: Option<f64>,
    /// Exclude observations touching isolated vertices instead of erroring.
    #[arg(long)]
    drop_isolated: bool,
    /// Master seed (variational restarts); NETMISFIT_SEED is the fallback.
    #[arg(long)]
    seed: Option<u64>,
    /// Variational restarts when fitting with --blocks.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: Option<usize>,
    /// Edge probability (erg); drawn uniformly from the seed when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    /// File with an m x m eta matrix (sbm); drawn from the seed when omitted.
    #[arg(long)]
    eta_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    size_factor: Option<SizeFactorArg>,
    #[arg(long, value_name = "EPS")]
    clamp: Option<f64>,
    /// Fit with variational EM (this many restarts) instead of observed labels.
    #[arg(long)]
    vem_restarts: Option<usize>,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_json: PathBuf,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    0
                }
                _ => {
                    eprint!("{err}");
                    EXIT_USAGE
                }
            };
        }
    };
    match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Parse { .. }
        | Error::Io { .. }
        | Error::SelfLoop { .. }
        | Error::InvalidVertex { .. }
        | Error::InvalidLabel { .. }
        | Error::MissingLabels
        | Error::CapacityExceeded { .. } => EXIT_DATA,
        Error::InvalidArgument { .. }
        | Error::InvalidProbability { .. }
        | Error::IndivisibleN { .. }
        | Error::MismatchedSpecs { .. } => EXIT_USAGE,
        // estimation-level failures on valid input
        Error::DegenerateEstimate { .. }
        | Error::IsolatedVertex { .. }
        | Error::EmptyBlock { .. }
        | Error::SingularAn { .. }
        | Error::InvalidIndex { .. }
        | Error::NonFiniteEvaluation { .. } => EXIT_INTERNAL,
    }
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    exit_code_for(err)
}

fn usage(message: &str) -> i32 {
    eprintln!("error: {message}");
    EXIT_USAGE
}

fn boundary_policy(clamp: Option<f64>) -> BoundaryPolicy {
    match clamp {
        Some(eps) => BoundaryPolicy::Clamp(eps),
        None => BoundaryPolicy::Strict,
    }
}

fn cmd_test(args: TestArgs) -> i32 {
    let seed = resolve_seed(args.seed);
    match args.model {
        ModelArg::Erg => {
            if args.labels.is_some() || args.blocks.is_some() {
                return usage("--labels/--blocks apply to --model sbm only");
            }
            if args.clamp.is_some() || args.drop_isolated {
                return usage("--clamp/--drop-isolated apply to --model sbm only");
            }
            let mode = match args.mode {
                None | Some(ModeArg::Paper) => ErgTestMode::PaperLiteral,
                Some(ModeArg::General) => ErgTestMode::General,
                Some(ModeArg::Reduced) => {
                    return usage("--mode reduced applies to --model sbm only");
                }
            };
            let size_factor = match args.size_factor {
                None | Some(SizeFactorArg::Pairs) => ErgSizeFactor::PairCount,
                Some(SizeFactorArg::Paper) => ErgSizeFactor::PaperLiteralNone,
                Some(SizeFactorArg::Vertices) => {
                    return usage("--size-factor vertices applies to --model sbm only");
                }
            };
            let graph = match read_graph(&args.graph, None) {
                Ok(g) => g,
                Err(e) => return fail(&e),
            };
            let obs = match erg_observations(&graph) {
                Ok(o) => o,
                Err(e) => return fail(&e),
            };
            let fit = match erg_mle(&obs) {
                Ok(f) => f,
                Err(e) => return fail(&e),
            };
            let test = match erg_test_with_fit(&obs, &fit, args.alpha, mode, size_factor) {
                Ok(t) => t,
                Err(e) => return fail(&e),
            };
            let mut report = JsonReport::new("test", "erg", Some(seed));
            report.fit = Some(erg_fit_block(&fit));
            report.test = Some(erg_test_block(&test));
            println!("{}", report.to_stdout());
            eprintln!("erg test: {}", test.decision);
            decision_exit(test.decision)
        }
        ModelArg::Sbm => {
            let mode = match args.mode {
                None | Some(ModeArg::Reduced) => SbmTestMode::Reduced,
                Some(ModeArg::Paper) => SbmTestMode::Paper,
                Some(ModeArg::General) => {
                    return usage("--mode general applies to --model erg only");
                }
            };
            let size_factor = match args.size_factor {
                None | Some(SizeFactorArg::Vertices) => SbmSizeFactor::VertexCount,
                Some(SizeFactorArg::Pairs) => SbmSizeFactor::PairCount,
                Some(SizeFactorArg::Paper) => {
                    return usage("--size-factor paper applies to --model erg only");
                }
            };
            let boundary = boundary_policy(args.clamp);
            let fit_spec = match (&args.labels, args.blocks) {
                (Some(_), _) => SbmFitSpec::ObservedLabels { boundary },
                (None, Some(m)) => SbmFitSpec::VariationalEm {
                    m,
                    restarts: args.restarts,
                    seed: Seed::new(seed, 0),
                    boundary,
                },
                (None, None) => {
                    return usage("--model sbm needs --labels PATH or --blocks M");
                }
            };
            let graph = match read_graph(&args.graph, args.labels.as_ref()) {
                Ok(g) => g,
                Err(e) => return fail(&e),
            };
            let fit = match fit_with(&graph, fit_spec) {
                Ok(f) => f,
                Err(e) => return fail(&e),
            };
            let opts = SbmTestOptions {
                alpha: args.alpha,
                mode,
                size_factor,
                isolated: if args.drop_isolated {
                    IsolatedPolicy::DropIncident
                } else {
                    IsolatedPolicy::Reject
                },
            };
            let test = match sbm_test_with_fit(&graph, &fit, &opts) {
                Ok(t) => t,
                Err(e) => return fail(&e),
            };
            let mut report = JsonReport::new("test", "sbm", Some(seed));
            report.fit = Some(sbm_fit_block(&fit));
            report.test = Some(sbm_test_block(&test));
            println!("{}", report.to_stdout());
            eprintln!("sbm test: {}", test.decision);
            decision_exit(test.decision)
        }
    }
}

fn decision_exit(decision: Decision) -> i32 {
    match decision {
        Decision::WellSpecified => EXIT_WELL_SPECIFIED,
        Decision::Misspecified => EXIT_MISSPECIFIED,
        Decision::Degenerate => EXIT_DEGENERATE,
    }
}

fn read_eta_file(path: &Path, m: usize) -> Result<Vec<Vec<f64>>, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, Error> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("expected a probability, got `{tok}`"),
                })
            })
            .collect();
        rows.push(row?);
    }
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Parse {
            line: 1,
            message: format!("eta file must hold an {m} x {m} matrix"),
        });
    }
    Ok(rows)
}

fn labels_path_for(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_os_string();
    os.push(".labels");
    PathBuf::from(os)
}

fn meta_path_for(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_os_string();
    os.push(".meta.json");
    PathBuf::from(os)
}

fn cmd_sample(args: SampleArgs) -> i32 {
    let seed_value = resolve_seed(args.seed);
    let seed = Seed::new(seed_value, 0);
    if args.scenario == ScenarioArg::Perturbed && args.n % 10 != 0 {
        return usage(&format!("perturbed scenario needs n divisible by 10, got {}", args.n));
    }
    let mut meta = serde_json::json!({
        "schema_version": crate::report::SCHEMA_VERSION,
        "command": "sample",
        "model": match args.model { ModelArg::Erg => "erg", ModelArg::Sbm => "sbm" },
        "scenario": match args.scenario { ScenarioArg::Null => "null", ScenarioArg::Perturbed => "perturbed" },
        "n": args.n,
        "seed": { "master": seed.master, "stream": seed.stream },
        "library_version": env!("CARGO_PKG_VERSION"),
    });

    let result: Result<(Graph, Option<ScenarioMeta>), Error> = match args.model {
        ModelArg::Erg => {
            if args.m.is_some() || args.eta_file.is_some() {
                return usage("--m/--eta-file apply to --model sbm only");
            }
            // a fixed alpha comes from the flag; otherwise it is the
            // scenario's own uniform draw, taken from a dedicated stream
            let alpha = match args.alpha {
                Some(a) => a,
                None => {
                    use rand::Rng;
                    Seed::new(seed_value, u64::MAX).rng().gen()
                }
            };
            meta["alpha"] = serde_json::json!(alpha);
            match args.scenario {
                ScenarioArg::Null => sample_er(args.n, alpha, seed).map(|g| (g, None)),
                ScenarioArg::Perturbed => {
                    sample_erg_scenario2(args.n, alpha, seed).map(|(g, m)| (g, Some(m)))
                }
            }
        }
        ModelArg::Sbm => {
            let Some(m) = args.m else {
                return usage("--model sbm needs --m BLOCKS");
            };
            if args.alpha.is_some() {
                return usage("--alpha applies to --model erg only");
            }
            let eta = match &args.eta_file {
                Some(path) => match read_eta_file(path, m) {
                    Ok(e) => e,
                    Err(e) => return fail(&e),
                },
                None => {
                    use rand::Rng;
                    let mut rng = Seed::new(seed_value, u64::MAX).rng();
                    let mut eta = vec![vec![0.0; m]; m];
                    for k in 0..m {
                        for l in k..m {
                            let v: f64 = rng.gen();
                            eta[k][l] = v;
                            eta[l][k] = v;
                        }
                    }
                    eta
                }
            };
            let theta = vec![1.0 / m as f64; m];
            meta["m"] = serde_json::json!(m);
            meta["theta"] = serde_json::json!(theta);
            meta["eta"] = serde_json::json!(eta);
            match SbmParams::new(theta, eta) {
                Ok(params) => match args.scenario {
                    ScenarioArg::Null => {
                        sample_sbm(args.n, &params, seed, None).map(|g| (g, None))
                    }
                    ScenarioArg::Perturbed => {
                        sample_sbm_scenario2(args.n, &params, seed).map(|(g, m)| (g, Some(m)))
                    }
                },
                Err(e) => Err(e),
            }
        }
    };

    let (graph, scenario_meta) = match result {
        Ok(pair) => pair,
        Err(e) => return fail(&e),
    };
    if let Some(sm) = &scenario_meta {
        meta["multipliers"] = serde_json::json!(sm.multipliers);
        meta["multiplier_rule"] = serde_json::json!(sm.rule);
    }
    meta["edges"] = serde_json::json!(graph.edge_count());

    let labels_path = graph.labels().map(|_| labels_path_for(&args.out));
    if let Some(labels) = graph.labels() {
        meta["labels"] = serde_json::json!(labels);
    }
    if let Err(e) = write_graph(&graph, &args.out, labels_path.as_ref()) {
        return fail(&e);
    }
    let meta_path = meta_path_for(&args.out);
    let meta_text = serde_json::to_string_pretty(&meta).expect("meta serialises");
    if let Err(e) = fs::write(&meta_path, meta_text.as_bytes()) {
        return fail(&Error::Io { path: meta_path.display().to_string(), message: e.to_string() });
    }
    eprintln!(
        "wrote {} ({} vertices, {} edges){}",
        args.out.display(),
        graph.vertex_count(),
        graph.edge_count(),
        labels_path
            .as_ref()
            .map(|p| format!(" and {}", p.display()))
            .unwrap_or_default()
    );
    println!("{meta_text}");
    0
}

/// CSV layout mirroring the study tables plus failure accounting.
pub fn summary_csv(summary: &McSummary) -> String {
    let spec = &summary.spec;
    let mut out = String::from(
        "model,scenario,reps,n,m,proportion_well_specified,n_degenerate,n_failed\n",
    );
    let proportion = summary
        .proportion_well_specified
        .map(|p| format!("{p:.6}"))
        .unwrap_or_default();
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        spec.model,
        spec.scenario,
        spec.replications,
        spec.n,
        spec.m.map(|m| m.to_string()).unwrap_or_default(),
        proportion,
        summary.n_degenerate,
        summary.n_estimation_failed,
    ));
    out
}

fn cmd_simulate(args: SimulateArgs) -> i32 {
    let seed = resolve_seed(args.seed);
    let config = match args.model {
        ModelArg::Erg => {
            let mode = match args.mode {
                None | Some(ModeArg::Paper) => ErgTestMode::PaperLiteral,
                Some(ModeArg::General) => ErgTestMode::General,
                Some(ModeArg::Reduced) => {
                    return usage("--mode reduced applies to --model sbm only");
                }
            };
            let size_factor = match args.size_factor {
                None | Some(SizeFactorArg::Pairs) => ErgSizeFactor::PairCount,
                Some(SizeFactorArg::Paper) => ErgSizeFactor::PaperLiteralNone,
                Some(SizeFactorArg::Vertices) => {
                    return usage("--size-factor vertices applies to --model sbm only");
                }
            };
            if args.vem_restarts.is_some() || args.clamp.is_some() {
                return usage("--vem-restarts/--clamp apply to --model sbm only");
            }
            TestConfig::Erg { mode, size_factor }
        }
        ModelArg::Sbm => {
            let mode = match args.mode {
                None | Some(ModeArg::Reduced) => SbmTestMode::Reduced,
                Some(ModeArg::Paper) => SbmTestMode::Paper,
                Some(ModeArg::General) => {
                    return usage("--mode general applies to --model erg only");
                }
            };
            let size_factor = match args.size_factor {
                None | Some(SizeFactorArg::Vertices) => SbmSizeFactor::VertexCount,
                Some(SizeFactorArg::Pairs) => SbmSizeFactor::PairCount,
                Some(SizeFactorArg::Paper) => {
                    return usage("--size-factor paper applies to --model erg only");
                }
            };
            TestConfig::Sbm {
                mode,
                size_factor,
                boundary: boundary_policy(args.clamp),
                fit: match args.vem_restarts {
                    Some(restarts) => SbmMcFit::VariationalEm { restarts },
                    None => SbmMcFit::ObservedLabels,
                },
            }
        }
    };
    let spec = ScenarioSpec {
        model: match args.model {
            ModelArg::Erg => ModelKind::Erg,
            ModelArg::Sbm => ModelKind::Sbm,
        },
        scenario: match args.scenario {
            ScenarioArg::Null => Scenario::Null,
            ScenarioArg::Perturbed => Scenario::Perturbed,
        },
        n: args.n,
        m: args.m,
        replications: args.reps,
        alpha: args.alpha,
        config,
        master_seed: seed,
        workers: args.workers,
        keep_records: false,
    };
    if let Err(e) = spec.validate() {
        return fail(&e);
    }
    let summary = match run_scenario(&spec) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let csv = summary_csv(&summary);
    if let Err(e) = fs::File::create(&args.out_csv)
        .and_then(|mut f| f.write_all(csv.as_bytes()))
    {
        return fail(&Error::Io {
            path: args.out_csv.display().to_string(),
            message: e.to_string(),
        });
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    if let Err(e) = fs::write(&args.out_json, json.as_bytes()) {
        return fail(&Error::Io {
            path: args.out_json.display().to_string(),
            message: e.to_string(),
        });
    }
    eprintln!(
        "{} {} n={} reps={}: ws={} mis={} deg={} failed={} ({} ms)",
        spec.model,
        spec.scenario,
        spec.n,
        spec.replications,
        summary.n_well_specified,
        summary.n_misspecified,
        summary.n_degenerate,
        summary.n_estimation_failed,
        summary.wall_ms
    );
    println!("{json}");
    0
}
