use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tefas_core::estimation::MapTable;
use tefas_core::experiment::{
    format_summary, resolve_config, run_sweep_with_workers, summarize, write_csv, write_json, ResultRow,
    KEYS, PRESETS,
};
use tefas_core::{Error, ExperimentConfig, OutputFormat};

const WORKERS_ENV: &str = "TEFAS_WORKERS";

#[derive(Parser)]
#[command(name = "tefas", version, about = "Time-efficient RFID anti-collision experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point and write one result row per point.
    Run(SweepArgs),
    /// Like `run`, for two or more strategies, plus a per-strategy summary.
    SweepCompare(SweepArgs),
    /// Build or verify MAP lookup tables.
    #[command(subcommand)]
    Tables(TablesCommand),
    /// Shipped sweep presets.
    #[command(subcommand)]
    Presets(PresetsCommand),
}

#[derive(Args)]
#[command(after_help = keys_help())]
struct SweepArgs {
    /// TOML config file; `--key value` pairs given after it win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides (or `--key=value`).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum TablesCommand {
    /// Precompute a table and write it to a file.
    Build {
        #[arg(long)]
        frame: u32,
        #[arg(long)]
        subframe: u32,
        #[arg(long)]
        nmax: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute every cell of a table file and compare.
    Verify { path: PathBuf },
}

#[derive(Subcommand)]
enum PresetsCommand {
    List,
}

fn keys_help() -> String {
    format!("Config keys: {}", KEYS.join(", "))
}

/// Failure classes, mapped to exit codes 1 and 2.
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => sweep(&args, false),
        Command::SweepCompare(args) => sweep(&args, true),
        Command::Tables(TablesCommand::Build {
            frame,
            subframe,
            nmax,
            out,
        }) => tables_build(frame, subframe, nmax, &out),
        Command::Tables(TablesCommand::Verify { path }) => tables_verify(&path),
        Command::Presets(PresetsCommand::List) => {
            presets_list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Failure::Config(format!("expected --key, got '{arg}'")));
        };
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Failure::Config(format!("config key '{key}': missing value")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn workers() -> Result<Option<usize>, Failure> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Failure::Config(format!(
                "config key '{WORKERS_ENV}': expected a positive integer, got '{v}'"
            ))),
        },
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn io_failure(e: io::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn sweep(args: &SweepArgs, compare: bool) -> Result<(), Failure> {
    let text = args.config.as_deref().map(read_file).transpose()?;
    let overrides = parse_overrides(&args.overrides)?;
    let config: ExperimentConfig = resolve_config(text.as_deref(), &overrides)?;
    if compare && config.strategies.len() < 2 {
        return Err(Failure::Config(
            "config key 'strategy': sweep-compare needs at least two strategies".into(),
        ));
    }
    let workers = workers()?;

    let rows: Vec<ResultRow> = match &config.trace {
        Some(path) => {
            let mut trace = create(path)?;
            let rows = run_sweep_with_workers(&config, workers, Some(&mut trace))?;
            trace.flush().map_err(io_failure)?;
            rows
        }
        None => run_sweep_with_workers(&config, workers, None)?,
    };

    let fingerprint = config.fingerprint();
    let emit = |out: &mut dyn Write| -> Result<(), Failure> {
        match config.format {
            OutputFormat::Csv => write_csv(out, &fingerprint, &rows)?,
            OutputFormat::Json => write_json(out, &fingerprint, &rows)?,
        }
        out.flush().map_err(io_failure)
    };
    match &config.output {
        Some(path) => emit(&mut create(path)?)?,
        None => emit(&mut io::stdout().lock())?,
    }

    if compare {
        let table = format_summary(&summarize(&rows));
        if config.output.is_some() {
            print!("{table}");
        } else {
            eprint!("{table}");
        }
    }
    Ok(())
}

fn tables_build(frame: u32, subframe: u32, nmax: u32, out: &Path) -> Result<(), Failure> {
    let table = MapTable::build(frame, subframe, nmax)?;
    let mut w = create(out)?;
    w.write_all(table.to_text().as_bytes()).map_err(io_failure)?;
    w.flush().map_err(io_failure)?;
    eprintln!(
        "wrote {} cells (frame={frame} subframe={subframe} nmax={nmax}) to {}",
        table.len(),
        out.display()
    );
    Ok(())
}

fn tables_verify(path: &Path) -> Result<(), Failure> {
    let table = MapTable::parse(&read_file(path)?)?;
    match table.verify() {
        None => {
            println!("ok: {} cells match", table.len());
            Ok(())
        }
        Some(m) => Err(Failure::Runtime(format!(
            "mismatch at e={} c={}: stored {} but recomputed {}",
            m.e, m.c, m.stored, m.expected
        ))),
    }
}

fn presets_list() {
    for p in PRESETS {
        println!("{:<6} {}", p.name, p.description);
        for (k, v) in p.settings {
            println!("       {k} = {v}");
        }
    }
}
