use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use archfuzz::campaign::runner::{exit_code, EXIT_USAGE};
use archfuzz::campaign::{self, CampaignConfig};
use archfuzz::detect::DetectorConfig;
use archfuzz::engine::{list_backends, run_training_step, Backend, Fault};
use archfuzz::fuzz::{generate_models, GenerationConfig};
use archfuzz::ir::{LayerKind, ModelSpec, TensorShape};
use archfuzz::trace::write_trace;

#[derive(Parser)]
#[command(
    name = "archfuzz",
    version,
    about = "Architecture fuzzing and differential testing of training-step backends"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Manifest,
}

fn parse_shape(s: &str) -> Result<TensorShape, String> {
    let dims = s
        .split([',', 'x'])
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("bad dimension `{d}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    TensorShape::new(dims).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate model directories and a generation manifest.
    Generate {
        #[arg(long, default_value_t = 50)]
        n_models: usize,
        #[arg(long, default_value_t = 5)]
        max_cells: usize,
        #[arg(long, default_value_t = 30)]
        max_vertices: usize,
        /// Per-example input shape, e.g. `8,8,3`.
        #[arg(long, value_parser = parse_shape, default_value = "8,8,3")]
        input_shape: TensorShape,
        #[arg(long, value_parser = parse_shape, default_value = "10")]
        output_shape: TensorShape,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Layer kinds to exclude, comma separated.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<LayerKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training step and write its trace.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        backend: Backend,
        #[arg(long)]
        trace_out: PathBuf,
    },
    /// Detect inconsistencies among the traces below a directory.
    Compare {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        t: f64,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
        /// Where to write the JSON manifest of the report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a full campaign described by a TOML file.
    Campaign {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the report of a finished campaign.
    Report {
        #[arg(long)]
        workdir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// List available backends and mutant faults.
    ListBackends,
}

fn failures(has: bool) -> ExitCode {
    ExitCode::from(u8::from(has))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}

fn execute(cmd: Cmd) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cmd {
        Cmd::Generate { n_models, max_cells, max_vertices, input_shape, output_shape, seed, exclude, out } => {
            let mut cfg = GenerationConfig {
                n_models,
                max_cells,
                max_vertices,
                input_shape,
                output_shape,
                seed,
                ..Default::default()
            };
            cfg.excluded_kinds.extend(exclude);
            let generation = generate_models(&cfg)?;
            campaign::write_generation(&out, &cfg, &generation)?;
            println!("wrote {} models to {}", generation.specs.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { model, backend, trace_out } => {
            let spec = ModelSpec::read_dir(&model)?;
            let trace = run_training_step(&spec, backend).into_trace(&spec);
            write_trace(&trace, &trace_out)?;
            Ok(ExitCode::from(exit_code(&trace.outcome) as u8))
        }
        Cmd::Compare { traces, t, epsilon, report } => {
            let cfg = DetectorConfig { t, epsilon, ..Default::default() };
            let r = campaign::compare_traces(&traces, &cfg)?;
            if let Some(path) = report {
                std::fs::write(&path, r.to_json())?;
            }
            print!("{}", r.to_table());
            Ok(failures(r.has_failures()))
        }
        Cmd::Campaign { config } => {
            let cfg = CampaignConfig::load(&config)?;
            let summary = campaign::run_campaign(&cfg)?;
            print!("{}", summary.report.to_table());
            print!("{}", summary.coverage.to_table());
            println!("total time: {:.1}s", summary.timing.total_secs);
            Ok(failures(summary.has_failures()))
        }
        Cmd::Report { workdir, format } => {
            let workdir = workdir
                .or_else(|| std::env::var_os(campaign::WORKDIR_ENV).map(PathBuf::from))
                .ok_or("no --workdir given and ARCHFUZZ_WORKDIR is unset")?;
            let r = campaign::load_report(&workdir)?;
            match format {
                Format::Table => print!("{}", r.to_table()),
                Format::Manifest => println!("{}", r.to_json()),
            }
            Ok(failures(r.has_failures()))
        }
        Cmd::ListBackends => {
            for d in list_backends(&[]) {
                println!("{}", d.id);
            }
            println!("faults (use <base>+<fault>):");
            for f in Fault::ALL {
                println!("  {f}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
