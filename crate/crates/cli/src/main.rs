use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lbt_cli::commands::{self, Context, SweepParam};
use lbt_cli::config::resolve;
use lbt_cli::CliError;

#[derive(Parser, Debug)]
#[command(name = "lbt", version, about = "Learning-by-teaching architecture search")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

// Accepted both before and after the subcommand. Clap's global args keep
// only the later occurrences of a repeated flag, so the two sets are merged
// by hand instead.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat JSON config (dotted keys) or a run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $LBT_OUT_DIR, else ./runs].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent runs for ablate and sweep [default: 1].
    #[arg(long)]
    jobs: Option<usize>,
    /// KEY=VALUE override; repeatable. VALUE is JSON or a bare string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn merge(self, later: Common) -> Common {
        let mut sets = self.sets;
        sets.extend(later.sets);
        Common {
            config: later.config.or(self.config),
            out: later.out.or(self.out),
            seed: later.seed.or(self.seed),
            jobs: later.jobs.or(self.jobs),
            sets,
            quiet: self.quiet || later.quiet,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One search run.
    Search {
        #[command(flatten)]
        common: Common,
    },
    /// Full objective vs an ablated one under matched seeds.
    Ablate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        setting: u8,
        #[command(flatten)]
        common: Common,
    },
    /// One setting per value of lambda or gamma, `num_seeds` runs each.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compares engine hypergradients against the oracles.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Retrains a derived genotype from scratch and reports test error.
    Eval {
        #[arg(long)]
        genotype: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn take_common(&mut self) -> Common {
        let (Command::Search { common }
        | Command::Ablate { common, .. }
        | Command::Sweep { common, .. }
        | Command::Gradcheck { common }
        | Command::Eval { common, .. }) = self;
        std::mem::take(common)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut command = cli.command;
    let g = cli.common.merge(command.take_common());
    let (cfg, _) = resolve(g.config.as_deref(), &g.sets, g.seed)?;
    let out = g
        .out
        .or_else(|| std::env::var_os("LBT_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let ctx = Context {
        out,
        jobs: g.jobs.unwrap_or(1),
        quiet: g.quiet,
    };
    match command {
        Command::Search { .. } => commands::search(&cfg, &ctx).map(drop),
        Command::Ablate { setting, .. } => commands::ablate(&cfg, setting, &ctx).map(drop),
        Command::Sweep { param, values, .. } => commands::sweep(&cfg, param, &values, &ctx).map(drop),
        Command::Gradcheck { .. } => commands::gradcheck(&cfg, &ctx).map(drop),
        Command::Eval { genotype, .. } => commands::eval(&cfg, &genotype, &ctx).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lbt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
