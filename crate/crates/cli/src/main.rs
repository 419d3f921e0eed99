use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rmtsim::experiment::{
    cmd_campaign, cmd_run, cmd_sweep, Execution, ExperimentError, Format, Options, Scenario,
};

#[derive(Parser)]
#[command(name = "rmtsim", version, about = "Replicated-execution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Native baseline plus one replicated run.
    Run(Common),
    /// Seeded fault-injection campaign with an outcome histogram.
    Campaign(Common),
    /// Compare placements, mechanisms or replica counts.
    Sweep(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Report file. Standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Overrides the campaign seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run independent simulations one after another.
    #[arg(long)]
    serial: bool,
}

fn execute(command: Command) -> Result<(), ExperimentError> {
    let (common, verb): (Common, fn(&Scenario, &Options) -> _) = match command {
        Command::Run(c) => (c, cmd_run),
        Command::Campaign(c) => (c, cmd_campaign),
        Command::Sweep(c) => (c, cmd_sweep),
    };
    let scenario = Scenario::load(&common.scenario)?;
    let options = Options {
        seed: common.seed,
        execution: if common.serial {
            Execution::Serial
        } else {
            Execution::Parallel
        },
    };
    let report = verb(&scenario, &options)?;
    let format = match common.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    match &common.out {
        Some(path) => report.write(path, format),
        None => {
            print!("{}", report.render(format));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
