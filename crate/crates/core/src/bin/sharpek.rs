use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sharpek::report::{cmd_run, cmd_scatter_delta, StudyConfig};
use sharpek::Error;

#[derive(Parser)]
#[command(
    name = "sharpek",
    version,
    about = "Sharpe-ratio quantile curves over random k-stock portfolios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the annual or rolling study.
    Run(Box<RunArgs>),
    /// Extract (Sharpe at k0, delta) pairs for q = 0.1 from annual records.
    ScatterDelta {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Plain-text key = value settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["annual", "rolling"])]
    study: Option<String>,
    /// Price CSV (wide `date,<tickers..>` or long `date,ticker,price`).
    #[arg(long, conflicts_with = "gbm")]
    input: Option<PathBuf>,
    #[arg(long, value_parser = ["wide", "long"])]
    layout: Option<String>,
    #[arg(long, value_parser = ["strict", "intersect"])]
    align: Option<String>,
    /// Synthetic panel, e.g. `n_assets=100,n_days=2017,drift=-0.002:0.003,vol=0.015:0.02,rho=0.5`.
    #[arg(long)]
    gbm: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Comma-separated quantiles.
    #[arg(long)]
    quantiles: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Bonferroni hypothesis count.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = ["per-window", "fixed-across-windows"])]
    resample: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<StudyConfig, Error> {
        let mut config = match &self.config {
            Some(path) => StudyConfig::from_file(path)?,
            None => StudyConfig::default(),
        };
        let path_str = |p: &PathBuf| p.display().to_string();
        let overrides: Vec<(&str, Option<String>)> = vec![
            ("input", self.input.as_ref().map(path_str)),
            ("gbm", self.gbm),
            ("layout", self.layout),
            ("align", self.align),
            ("study", self.study),
            ("seed", self.seed.map(|v| v.to_string())),
            ("samples", self.samples.map(|v| v.to_string())),
            ("kmin", self.kmin.map(|v| v.to_string())),
            ("kmax", self.kmax.map(|v| v.to_string())),
            ("period", self.period.map(|v| v.to_string())),
            ("stride", self.stride.map(|v| v.to_string())),
            ("quantiles", self.quantiles),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("resample", self.resample),
            ("threads", self.threads.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(path_str)),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                config.set(key, &value)?;
            }
        }
        Ok(config)
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_io() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match cli.command {
        Command::Run(args) => {
            let config = match args.into_config() {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(threads) = config.threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global()
                {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
            match cmd_run(&config) {
                Ok(summary) => {
                    println!(
                        "wrote {} files for {} windows to {}",
                        summary.files.len(),
                        summary.n_windows,
                        summary.output_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::ScatterDelta { records, out } => match cmd_scatter_delta(&records, &out) {
            Ok(rows) => {
                println!("wrote {rows} rows to {}", out.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
