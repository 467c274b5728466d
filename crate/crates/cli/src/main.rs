mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "remixit", version, about = "Bootstrapped-remixing speech enhancement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset manifest (and optionally WAV files).
    GenData {
        /// Domain spec file, or a built-in domain `A` / `B`.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        count: usize,
        /// `mixtures/noise`, `paired/mixtures/noise`, or `role=fraction,...`.
        #[arg(long, default_value = "paired=1")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Write 16-bit WAV files and reference them from the manifest.
        #[arg(long)]
        wav: bool,
        /// Draw a paired held-out set from the reserved test index range.
        #[arg(long)]
        heldout: bool,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Run directory; defaults to `runs/<run id>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint, `identity` or `bandpass` on a paired manifest.
    Eval {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// Also write the CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error decomposition of a teacher-driven run from its probe tensors.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// Also write a whitespace-separated .dat file for gnuplot.
        #[arg(long)]
        dat: bool,
    },
    /// Train one run per seed, `--jobs` at a time in child processes.
    Sweep {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { spec, count, split, out, wav, heldout } => {
            commands::gen_data(&spec, count, &split, &out, wav, heldout)
        }
        Command::Train { mode, config, teacher, out, quiet } => {
            commands::train(mode.as_deref(), &config, teacher.as_deref(), out.as_deref(), quiet)
        }
        Command::Eval { model, data, out } => commands::eval(&model, &data, out.as_deref()),
        Command::Analyze { run, dat } => commands::analyze(&run, dat),
        Command::Sweep { mode, config, teacher, seeds, jobs, out } => {
            commands::sweep(mode.as_deref(), &config, teacher.as_deref(), &seeds, jobs, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
