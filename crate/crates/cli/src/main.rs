//! `ehm-fdi` command-line driver.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration error, 4 runtime
//! error. Reports go to `./reports` unless `EHM_FDI_REPORT_DIR` is set.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ehm_fdi::harness::physics::worst_fault_cases;
use ehm_fdi::harness::{Config, FaultSpec};
use ehm_fdi::{FdiError, Param};

pub const REPORT_DIR_ENV: &str = "EHM_FDI_REPORT_DIR";
const DEFAULT_REPORT_DIR: &str = "reports";

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "ehm-fdi", version, about = "EHM cell simulation and UKF-based local fault detection and isolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the plant under a fault and dump the state/voltage trace.
    Simulate(Common),
    /// Output sensitivities and identifiability (D, C) along the drive cycle.
    Sensitivity(Common),
    /// One noisy replicate through the UKF and the global χ² test.
    Detect(Common),
    /// One noisy replicate through the UKF and the min-max isolation tests.
    Isolate(Common),
    /// Replicate over noise realizations and tabulate averaged statistics.
    Montecarlo(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FaultKind {
    None,
    #[value(name = "eps_s_neg")]
    EpsSNeg,
    #[value(name = "R_f")]
    RF,
    #[value(name = "g_s")]
    GS,
    #[value(name = "n_Li")]
    NLi,
    #[value(name = "side_reaction")]
    SideReaction,
    /// The healthy case and every standard fault (montecarlo only).
    Table,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Two-column CSV drive cycle (`time_s,current_a`) replacing the configured one.
    #[arg(long)]
    cycle: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum)]
    fault: Option<FaultKind>,
    /// Relative parameter change of a parameter fault.
    #[arg(long, allow_negative_numbers = true)]
    delta_rel: Option<f64>,
    /// Side-reaction exchange current density [A/m²].
    #[arg(long)]
    jsr0: Option<f64>,
    /// Lag count of the Σ estimator.
    #[arg(long)]
    ni: Option<usize>,
    /// False-alarm probability setting both thresholds.
    #[arg(long)]
    alpha_fa: Option<f64>,
    /// Replicate index used by detect and isolate.
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(FdiError),
    #[error("{0}")]
    Runtime(FdiError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) | CliError::Write { .. } => EXIT_RUNTIME,
        }
    }
}

/// Everything a subcommand needs once the flags are applied.
pub struct Job {
    pub config: Config,
    pub faults: Vec<FaultSpec>,
    pub run: usize,
    pub report_dir: PathBuf,
}

fn standard_delta(target: Param) -> f64 {
    worst_fault_cases()
        .into_iter()
        .find_map(|f| match f {
            FaultSpec::ParamRelative { target: t, delta_rel } if t == target => Some(delta_rel),
            _ => None,
        })
        .expect("every parameter has a standard fault")
}

fn standard_jsr0() -> f64 {
    worst_fault_cases()
        .into_iter()
        .find_map(|f| match f {
            FaultSpec::SideReaction { j_sr0 } => Some(j_sr0),
            _ => None,
        })
        .expect("side-reaction standard fault")
}

/// Fault selected by `--fault`, `--delta-rel` and `--jsr0` on top of the
/// configured fault.
fn select_faults(args: &Common, configured: FaultSpec) -> Result<Vec<FaultSpec>, CliError> {
    let param = |p: Param| FaultSpec::ParamRelative {
        target: p,
        delta_rel: args.delta_rel.unwrap_or_else(|| match configured {
            FaultSpec::ParamRelative { target, delta_rel } if target == p => delta_rel,
            _ => standard_delta(p),
        }),
    };
    let side = || FaultSpec::SideReaction {
        j_sr0: args.jsr0.unwrap_or(match configured {
            FaultSpec::SideReaction { j_sr0 } => j_sr0,
            _ => standard_jsr0(),
        }),
    };
    let kind = match args.fault {
        Some(k) => k,
        None => match configured {
            FaultSpec::None => FaultKind::None,
            FaultSpec::ParamRelative { target, .. } => match target {
                Param::EpsSNeg => FaultKind::EpsSNeg,
                Param::RF => FaultKind::RF,
                Param::GS => FaultKind::GS,
                Param::NLi => FaultKind::NLi,
            },
            FaultSpec::SideReaction { .. } => FaultKind::SideReaction,
        },
    };
    let param_kind = matches!(kind, FaultKind::EpsSNeg | FaultKind::RF | FaultKind::GS | FaultKind::NLi);
    if args.delta_rel.is_some() && !param_kind {
        return Err(CliError::Usage("--delta-rel needs a parameter fault (--fault eps_s_neg|R_f|g_s|n_Li)".into()));
    }
    if args.jsr0.is_some() && kind != FaultKind::SideReaction {
        return Err(CliError::Usage("--jsr0 needs --fault side_reaction".into()));
    }
    Ok(match kind {
        FaultKind::None => vec![FaultSpec::None],
        FaultKind::EpsSNeg => vec![param(Param::EpsSNeg)],
        FaultKind::RF => vec![param(Param::RF)],
        FaultKind::GS => vec![param(Param::GS)],
        FaultKind::NLi => vec![param(Param::NLi)],
        FaultKind::SideReaction => vec![side()],
        FaultKind::Table => std::iter::once(FaultSpec::None).chain(worst_fault_cases()).collect(),
    })
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn build_job(args: &Common, allow_table: bool) -> Result<Job, CliError> {
    let mut config = match &args.config {
        Some(path) => Config::load(path).map_err(CliError::Config)?,
        None => Config::default(),
    };
    if let Some(cycle) = &args.cycle {
        config.cycle.path = Some(absolute(cycle));
    }
    let exp = &mut config.experiment;
    if let Some(seed) = args.seed {
        exp.seed = seed;
    }
    if let Some(runs) = args.runs {
        exp.n_runs = runs;
    }
    if let Some(ni) = args.ni {
        exp.n_i = ni;
    }
    if let Some(alpha) = args.alpha_fa {
        exp.alpha_fa = alpha;
        exp.thresholds = None;
    }
    let faults = select_faults(args, config.fault)?;
    if faults.len() > 1 && !allow_table {
        return Err(CliError::Usage("--fault table is only available for montecarlo".into()));
    }
    if let [single] = faults.as_slice() {
        config.fault = *single;
    }
    for f in &faults {
        f.validate().map_err(CliError::Config)?;
    }
    config.validate().map_err(CliError::Config)?;
    let report_dir = std::env::var_os(REPORT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_REPORT_DIR));
    Ok(Job {
        config,
        faults,
        run: args.run,
        report_dir,
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => output::simulate(&build_job(&a, false)?),
        Command::Sensitivity(a) => output::sensitivity(&build_job(&a, false)?),
        Command::Detect(a) => output::detect(&build_job(&a, false)?, false),
        Command::Isolate(a) => output::detect(&build_job(&a, false)?, true),
        Command::Montecarlo(a) => output::montecarlo(&build_job(&a, true)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(_) => eprintln!("ehm-fdi: usage error: {e}"),
                CliError::Config(inner) if matches!(inner.root(), FdiError::Config(_)) => eprintln!("ehm-fdi: {e}"),
                CliError::Config(_) => eprintln!("ehm-fdi: configuration error: {e}"),
                _ => eprintln!("ehm-fdi: runtime error: {e}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
