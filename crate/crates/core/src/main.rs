use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfxl::baselines::BaselineKind;
use cfxl::harness::{self, ExperimentSpec, Mode, Scheme, SweepVar};
use cfxl::Error;

#[derive(Parser)]
#[command(
    name = "cfxl",
    version,
    about = "Fronthaul-constrained cell-free XL-MIMO uplink simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `experiment.out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo trials per sweep value.
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial t uses a seed derived from (seed, t).
    #[arg(long)]
    seed: Option<u64>,
    /// centralized or decentralized.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one scenario variable over a list of values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of cf, m, n, l, k.
        #[arg(long)]
        var: String,
        /// Comma-separated values, e.g. 1,2,4,8,16.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Record the mean convergence trace of one scheme.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "afp")]
        scheme: String,
        /// evd or random.
        #[arg(long, default_value = "evd")]
        init: String,
    },
}

fn apply_common(spec: &mut ExperimentSpec, c: &Common) -> cfxl::Result<()> {
    if let Some(out) = &c.out {
        spec.out_dir = out.clone();
    }
    if let Some(t) = c.trials {
        spec.trials = t;
    }
    if let Some(s) = c.seed {
        spec.base_seed = s;
    }
    if let Some(m) = &c.mode {
        spec.mode = m.parse::<Mode>()?;
    }
    Ok(())
}

type SpecEdit<'a> = Box<dyn Fn(&mut ExperimentSpec) -> cfxl::Result<()> + 'a>;

fn resolve(cli: &Cli) -> cfxl::Result<ExperimentSpec> {
    let (common, spec_edit): (&Common, SpecEdit) = match &cli.command {
        Command::Run { common } => (common, Box::new(|_| Ok(()))),
        Command::Sweep { common, var, values } => (
            common,
            Box::new(move |spec| {
                spec.sweep_var = var.parse::<SweepVar>()?;
                spec.sweep_values = values.clone();
                Ok(())
            }),
        ),
        Command::Trace { common, scheme, init } => (
            common,
            Box::new(move |spec| {
                let init: BaselineKind = init.parse()?;
                spec.schemes = vec![Scheme::parse_with_init(scheme, init)?];
                if !spec.schemes[0].is_afp() {
                    return Err(Error::Config("trace needs an A-FP scheme".into()));
                }
                Ok(())
            }),
        ),
    };
    let mut spec = ExperimentSpec::load(&common.config)?;
    apply_common(&mut spec, common)?;
    spec_edit(&mut spec)?;
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let spec = match resolve(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match harness::run_experiment(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(harness::exit_code(&e) as u8);
        }
    };
    match harness::emit_outputs(&result, &spec) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    for c in &result.cells {
        println!(
            "{:<11} {}={:<8} mean={:.4} se={:.4} n={}",
            c.scheme.to_string(),
            spec.sweep_var,
            c.sweep_value,
            c.mean_sum_rate,
            c.stderr,
            c.trials
        );
    }
    let failed = result.failed_trials();
    if failed > 0 {
        eprintln!("{failed} trial(s) failed; see trials.csv");
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
