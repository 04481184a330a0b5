//! `cherrypick`: simultaneous confidence bounds for the number of false
//! rejections in any set of hypotheses, chosen before or after looking.

mod input;

use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use cherrypick::bounds::Analysis;
use cherrypick::permutation::calibrate_critvals;
use cherrypick::report::{
    render_bound, render_curve, render_defining, render_estimate, ConfidenceReport, CurveReport,
    DefiningReport, EstimateReport, Format, SetSpec,
};
use cherrypick::shortcuts::{MethodChoice, MethodPolicy};
use cherrypick::{Error, ErrorCategory};
use cherrypick_service::ServiceConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use input::Sources;

#[derive(Debug, Parser)]
#[command(name = "cherrypick", version, about = "Confidence bounds for the number of false rejections in any selected set")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Confidence set for the number of false rejections in one set.
    Bound {
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Comma-separated names, `top:K`, `pmax:Q` or `all`.
        #[arg(long)]
        set: String,
    },
    /// Lower bound on correct rejections for each top-r set.
    Curve {
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Inclusion-minimal rejected intersections.
    Defining {
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Median-unbiased estimate of the false rejections, with its interval.
    Estimate {
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long)]
        set: String,
        /// Print only the estimate.
        #[arg(long)]
        bare: bool,
    },
    /// Calibrate constant critical values from a permutation matrix.
    Calibrate {
        #[arg(long, value_name = "FILE")]
        perm_matrix: PathBuf,
        #[arg(long, value_name = "FILE")]
        perm_names: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080, value_parser = clap::value_parser!(u16).range(1..))]
        port: u16,
        /// Directory for session snapshots; snapshots are disabled without it.
        #[arg(long, value_name = "DIR")]
        snapshot_dir: Option<PathBuf>,
        /// Allowed browser origin, repeatable; `*` allows any.
        #[arg(long = "cors-origin", value_name = "ORIGIN", default_value = "http://localhost:5173")]
        cors_origins: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestChoice {
    Fisher,
    Simes,
    Hommel,
    Permutation,
    NormalIndependent,
    NormalGeneral,
    Table,
    Ftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Tsv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Tsv => Format::Tsv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Auto,
    Closure,
    Shortcut,
}

#[derive(Debug, Args)]
struct AnalysisArgs {
    /// Hypotheses CSV with header `name,p` or `name,z`.
    #[arg(value_name = "INPUT")]
    input: Option<PathBuf>,
    #[arg(long = "input", value_name = "INPUT", conflicts_with = "input")]
    input_flag: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TestChoice::Fisher)]
    test: TestChoice,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    /// Rejected intersections for `--test table`, one comma-separated set per line.
    #[arg(long, value_name = "FILE")]
    table: Option<PathBuf>,
    /// Regression data for `--test ftest`: header `y,x1,...`.
    #[arg(long, value_name = "FILE")]
    design: Option<PathBuf>,
    /// Headerless B × n permutation p-values for `--test permutation`.
    #[arg(long, value_name = "FILE")]
    perm_matrix: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    perm_names: Option<PathBuf>,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must be in (0, 1), got {a}"))
    }
}

fn policy(method: MethodArg) -> MethodPolicy {
    let choice = match method {
        MethodArg::Auto => MethodChoice::Auto,
        MethodArg::Closure => MethodChoice::Closure,
        MethodArg::Shortcut => MethodChoice::Shortcut,
    };
    MethodPolicy {
        choice,
        ..Default::default()
    }
}

impl AnalysisArgs {
    fn analysis(&self) -> Result<Analysis, Error> {
        let sources = Sources {
            input: self.input.clone().or_else(|| self.input_flag.clone()),
            table: self.table.clone(),
            design: self.design.clone(),
            perm_matrix: self.perm_matrix.clone(),
            perm_names: self.perm_names.clone(),
        };
        let test = sources.local_test(self.test, self.alpha)?;
        Ok(Analysis::new(test, policy(self.method)))
    }
}

#[derive(Debug, Serialize)]
struct CriticalValue {
    name: String,
    k: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    alpha: f64,
    permutations: usize,
    gamma: f64,
    exceedance: f64,
    critical_values: Vec<CriticalValue>,
}

fn calibrate(sources: &Sources, alpha: f64, format: Format) -> Result<String, Error> {
    let perms = sources.permutations()?;
    let names = sources.permutation_names(perms.num_hypotheses())?;
    let cal = calibrate_critvals(&perms, alpha)?;
    let ks = input::critical_values(&cal);
    match format {
        Format::Json => {
            let report = CalibrationReport {
                alpha,
                permutations: perms.num_rows(),
                gamma: cal.gamma,
                exceedance: cal.exceedance,
                critical_values: names
                    .into_iter()
                    .zip(ks)
                    .map(|(name, k)| CriticalValue {
                        name,
                        k: k.is_finite().then_some(k),
                    })
                    .collect(),
            };
            Ok(serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
        }
        Format::Tsv => {
            let mut s = String::from("i\tk\n");
            for (i, k) in ks.iter().enumerate() {
                let _ = writeln!(s, "{}\t{k}", i + 1);
            }
            Ok(s)
        }
    }
}

fn run_analysis(command: &Command) -> Result<String, Error> {
    match command {
        Command::Bound { analysis, set } => {
            let a = analysis.analysis()?;
            let set = set.parse::<SetSpec>()?.resolve(a.test())?;
            let cs = a.bound(&set)?;
            let report = ConfidenceReport::new(a.test().hypotheses(), &a.test().spec().label(), &cs);
            Ok(render_bound(&report, analysis.format.into()))
        }
        Command::Curve { analysis } => {
            let a = analysis.analysis()?;
            let curve = a.curve()?;
            Ok(render_curve(&CurveReport::new(a.test(), &curve), analysis.format.into()))
        }
        Command::Defining { analysis } => {
            let a = analysis.analysis()?;
            let sets = a.defining()?;
            Ok(render_defining(&DefiningReport::new(a.test(), &sets), analysis.format.into()))
        }
        Command::Estimate { analysis, set, bare } => {
            let a = analysis.analysis()?;
            let set = set.parse::<SetSpec>()?.resolve(a.test())?;
            let e = a.estimate(&set)?;
            if *bare {
                eprintln!(
                    "note: the estimate alone carries no error guarantee; its {:.0}% interval is 0..={}",
                    100.0 * (1.0 - a.alpha()),
                    e.interval.t_upper
                );
                return Ok(format!("{}\n", e.estimate));
            }
            let report = EstimateReport::new(a.test().hypotheses(), &a.test().spec().label(), &e);
            Ok(render_estimate(&report, analysis.format.into()))
        }
        Command::Calibrate {
            perm_matrix,
            perm_names,
            alpha,
            format,
        } => {
            let sources = Sources {
                perm_matrix: Some(perm_matrix.clone()),
                perm_names: perm_names.clone(),
                ..Default::default()
            };
            calibrate(&sources, *alpha, (*format).into())
        }
        Command::Serve { .. } => unreachable!("serve does not produce a report"),
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
    eprintln!("shutting down");
}

fn serve(host: &str, port: u16, config: ServiceConfig) -> Result<(), String> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| format!("cannot start the runtime: {e}"))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| format!("cannot bind {host}:{port}: {e}"))?;
        let addr: SocketAddr = listener.local_addr().map_err(|e| e.to_string())?;
        eprintln!("listening on http://{addr}");
        cherrypick_service::serve(listener, config, shutdown_signal())
            .await
            .map_err(|e| format!("server error: {e}"))
    })
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Input => 2,
        ErrorCategory::MethodUnavailable => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("CHERRYPICK_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("CHERRYPICK_THREADS must be a positive integer, got `{value}`"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    if let Command::Serve {
        host,
        port,
        snapshot_dir,
        cors_origins,
    } = &cli.command
    {
        let config = ServiceConfig {
            snapshot_dir: snapshot_dir.clone(),
            cors_origins: cors_origins.clone(),
            policy: MethodPolicy::default(),
        };
        return match serve(host, *port, config) {
            Ok(()) => ExitCode::SUCCESS,
            Err(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
        };
    }
    match run_analysis(&cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|()| stdout.flush()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
