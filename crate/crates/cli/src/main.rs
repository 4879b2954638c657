use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fanonet_core::chain::{sample_dataset, ChainParams};
use fanonet_core::experiment::{render_report, run_excess_risk_experiment, run_recovery_experiment};
use fanonet_core::fano::bound_report;
use fanonet_core::hypothesis::{check_budget, enumerate_class, hypothesis_at};
use fanonet_core::info::{kl_pair_in_class, kl_pair_with_mc};
use fanonet_core::risk::{excess_risk_table, excess_rows_csv, risk_gap_constants, ExcessRow, RiskGapConstants};
use fanonet_core::{BoundKind, ClassParams, Error, ExperimentConfig, Hypothesis, ReportFormat, DEFAULT_BUDGET};

#[derive(Parser, Debug)]
#[command(
    name = "fanonet",
    version,
    about = "Sample-complexity bounds and MAP experiments for backwards Gaussian networks"
)]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON file with experiment configuration fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Maximum number of hypotheses that may be enumerated.
    #[arg(long, global = true)]
    budget: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
struct ClassArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    /// Noise variance.
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List hypotheses of the class in canonical order.
    Enumerate {
        #[command(flatten)]
        class: ClassArgs,
        #[arg(long, default_value_t = 0)]
        start: u128,
        #[arg(long)]
        limit: Option<u128>,
    },
    /// Draw a dataset from one hypothesis.
    Sample {
        #[command(flatten)]
        class: ClassArgs,
        /// Canonical index of the generating hypothesis.
        #[arg(long, conflicts_with = "hypothesis")]
        index: Option<u128>,
        /// Hypothesis JSON file.
        #[arg(long)]
        hypothesis: Option<PathBuf>,
        #[arg(long)]
        n: usize,
    },
    /// KL divergence between two hypotheses of the class.
    Kl {
        #[command(flatten)]
        class: ClassArgs,
        #[arg(long)]
        a: u128,
        #[arg(long)]
        b: u128,
        /// Monte Carlo samples for the estimate; 0 skips it.
        #[arg(long, default_value_t = 0)]
        mc_samples: u64,
    },
    /// Fano lower bound on decoder failure at sample size n.
    Fano {
        #[command(flatten)]
        class: ClassArgs,
        #[arg(long)]
        n: u64,
        #[arg(long, value_enum, default_value_t = Kind::ExactRecovery)]
        kind: Kind,
    },
    /// Gap constants and the excess risk of every hypothesis against a truth.
    Risk {
        #[command(flatten)]
        class: ClassArgs,
        /// Canonical index of the true hypothesis.
        #[arg(long, default_value_t = 0)]
        truth: u128,
    },
    /// Empirical failure rates of the MAP decoder over an n grid.
    Simulate {
        #[command(flatten)]
        class: ClassArgs,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<u64>>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, value_enum, default_value_t = Kind::ExactRecovery)]
        kind: Kind,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    ExactRecovery,
    ExcessRisk,
}

impl From<Kind> for BoundKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::ExactRecovery => BoundKind::ExactRecovery,
            Kind::ExcessRisk => BoundKind::ExcessRisk,
        }
    }
}

/// Every field is optional so the same file can feed any subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    p: Option<usize>,
    d: Option<usize>,
    r: Option<usize>,
    sigma2: Option<f64>,
    n_grid: Option<Vec<u64>>,
    trials: Option<u64>,
    seed: Option<u64>,
    output_path: Option<String>,
    budget: Option<u64>,
}

struct Context {
    file: ConfigFile,
    seed: u64,
    out: Option<PathBuf>,
    format: Format,
    budget: u128,
}

impl Context {
    fn class(&self, args: &ClassArgs) -> Result<ClassParams, Error> {
        let pick = |flag: Option<usize>, file: Option<usize>, name: &str| {
            flag.or(file).ok_or_else(|| Error::InvalidConfig(format!("missing --{name}")))
        };
        let p = pick(args.p, self.file.p, "p")?;
        let d = pick(args.d, self.file.d, "d")?;
        let r = pick(args.r, self.file.r, "r")?;
        ClassParams::new(p, d, r).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    fn sigma2(&self, args: &ClassArgs) -> Result<f64, Error> {
        let s2 = args.sigma2.or(self.file.sigma2).ok_or_else(|| Error::InvalidConfig("missing --sigma2".into()))?;
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma2 must be positive, got {s2}")));
        }
        Ok(s2)
    }

    fn emit(&self, text: &str) -> Result<(), Error> {
        match &self.out {
            Some(path) => fs::write(path, text)?,
            None => std::io::stdout().lock().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::BudgetExceeded { .. } => 3,
        Error::InvalidConfig(_)
        | Error::InvalidParams(_)
        | Error::IndexOutOfRange { .. }
        | Error::ClassMismatch(_)
        | Error::DimensionMismatch(_)
        | Error::Parse(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let file = match &cli.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
        None => ConfigFile::default(),
    };
    let out = cli.out.clone().or_else(|| file.output_path.clone().filter(|p| !p.is_empty()).map(PathBuf::from));
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        budget: cli.budget.or(file.budget).map_or(DEFAULT_BUDGET, u128::from),
        file,
        out,
        format: cli.format,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| dispatch(&ctx, cli.command))
}

fn dispatch(ctx: &Context, command: Command) -> Result<(), Error> {
    match command {
        Command::Enumerate { class, start, limit } => enumerate(ctx, &class, start, limit),
        Command::Sample { class, index, hypothesis, n } => sample(ctx, &class, index, hypothesis.as_deref(), n),
        Command::Kl { class, a, b, mc_samples } => kl(ctx, &class, a, b, mc_samples),
        Command::Fano { class, n, kind } => fano(ctx, &class, n, kind),
        Command::Risk { class, truth } => risk(ctx, &class, truth),
        Command::Simulate { class, n_grid, trials, kind } => simulate(ctx, &class, n_grid, trials, kind),
    }
}

#[derive(Serialize)]
struct IndexedHypothesis {
    index: u128,
    hypothesis: Hypothesis,
}

fn enumerate(ctx: &Context, args: &ClassArgs, start: u128, limit: Option<u128>) -> Result<(), Error> {
    let class = ctx.class(args)?;
    let card = check_budget(class, ctx.budget)?;
    let end = limit.map_or(card, |l| start.saturating_add(l).min(card));
    let listed = enumerate_class(class, ctx.budget)?
        .enumerate()
        .skip(usize::try_from(start).unwrap_or(usize::MAX))
        .take(usize::try_from(end.saturating_sub(start)).unwrap_or(usize::MAX))
        .map(|(k, h)| IndexedHypothesis { index: k as u128, hypothesis: h });
    let text = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&listed.collect::<Vec<_>>())? + "\n",
        Format::Csv => {
            let mut text = String::from("idx,signs,perms\n");
            for item in listed {
                let h = &item.hypothesis;
                let signs: Vec<String> = h.w0().signs().iter().map(i8::to_string).collect();
                let perms: Vec<String> = h
                    .layers()
                    .iter()
                    .map(|l| l.perm.images().iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" "))
                    .collect();
                text.push_str(&format!("{},{},{}\n", item.index, signs.join(" "), perms.join("/")));
            }
            text
        }
    };
    ctx.emit(&text)
}

fn sample(ctx: &Context, args: &ClassArgs, index: Option<u128>, file: Option<&Path>, n: usize) -> Result<(), Error> {
    if n == 0 {
        return Err(Error::InvalidConfig("--n must be at least 1".into()));
    }
    let sigma2 = ctx.sigma2(args)?;
    let h: Hypothesis = match (index, file) {
        (_, Some(path)) => serde_json::from_str(&fs::read_to_string(path)?)?,
        (Some(k), None) => hypothesis_at(ctx.class(args)?, k)?,
        (None, None) => return Err(Error::InvalidConfig("sample needs --index or --hypothesis".into())),
    };
    let data = sample_dataset(&ChainParams::from_hypothesis(&h, sigma2)?, n, ctx.seed)?;
    match &ctx.out {
        Some(path) => data.save(path),
        None => data.write_csv(std::io::stdout().lock()),
    }
}

fn kl(ctx: &Context, args: &ClassArgs, a: u128, b: u128, mc_samples: u64) -> Result<(), Error> {
    let class = ctx.class(args)?;
    let sigma2 = ctx.sigma2(args)?;
    let (h, g) = (hypothesis_at(class, a)?, hypothesis_at(class, b)?);
    let report = if mc_samples == 0 {
        kl_pair_in_class(&h, &g, sigma2)?
    } else {
        kl_pair_with_mc(&h, &g, sigma2, mc_samples, ctx.seed)?
    };
    let text = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let opt = |v: Option<String>| v.unwrap_or_default();
            use fanonet_core::format::fmt17;
            format!(
                "exact,bound,mc_estimate,mc_stderr,n_samples,seed\n{},{},{},{},{},{}\n",
                fmt17(report.exact),
                fmt17(report.bound),
                opt(report.mc_estimate.map(fmt17)),
                opt(report.mc_stderr.map(fmt17)),
                opt(report.n_samples.map(|v| v.to_string())),
                opt(report.seed.map(|v| v.to_string()))
            )
        }
    };
    ctx.emit(&text)
}

fn fano(ctx: &Context, args: &ClassArgs, n: u64, kind: Kind) -> Result<(), Error> {
    let report = bound_report(ctx.class(args)?, ctx.sigma2(args)?, n, kind.into())?;
    let text = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => format!("{}\n{}\n", fanonet_core::BoundReport::ROW_HEADER, report.row()),
    };
    ctx.emit(&text)
}

#[derive(Serialize)]
struct RiskOutput<'a> {
    constants: RiskGapConstants,
    truth: u128,
    rows: &'a [ExcessRow],
}

fn risk(ctx: &Context, args: &ClassArgs, truth: u128) -> Result<(), Error> {
    let class = ctx.class(args)?;
    let sigma2 = ctx.sigma2(args)?;
    let constants = risk_gap_constants(class, sigma2)?;
    let h_star = hypothesis_at(class, truth)?;
    let rows = excess_risk_table(&h_star, sigma2, ctx.budget)?;
    match ctx.format {
        Format::Json => {
            let out = RiskOutput { constants, truth, rows: &rows };
            ctx.emit(&(serde_json::to_string_pretty(&out)? + "\n"))
        }
        Format::Csv => {
            // The constants go to a JSON sidecar next to the table, or to
            // stderr when the table goes to stdout.
            let constants = serde_json::to_string_pretty(&constants)? + "\n";
            match &ctx.out {
                Some(path) => fs::write(path.with_extension("json"), constants)?,
                None => eprint!("{constants}"),
            }
            ctx.emit(&excess_rows_csv(&rows))
        }
    }
}

fn simulate(
    ctx: &Context,
    args: &ClassArgs,
    n_grid: Option<Vec<u64>>,
    trials: Option<u64>,
    kind: Kind,
) -> Result<(), Error> {
    let class = ctx.class(args)?;
    let cfg = ExperimentConfig {
        p: class.p,
        d: class.d,
        r: class.r,
        sigma2: ctx.sigma2(args)?,
        n_grid: n_grid
            .or_else(|| ctx.file.n_grid.clone())
            .ok_or_else(|| Error::InvalidConfig("missing --n-grid".into()))?,
        trials: trials.or(ctx.file.trials).ok_or_else(|| Error::InvalidConfig("missing --trials".into()))?,
        seed: ctx.seed,
        output_path: ctx.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        budget: u64::try_from(ctx.budget).ok(),
    };
    cfg.validate()?;
    let rows = match kind {
        Kind::ExactRecovery => run_recovery_experiment(&cfg)?,
        Kind::ExcessRisk => run_excess_risk_experiment(&cfg)?,
    };
    ctx.emit(&render_report(&rows, ctx.format.into())?)
}
