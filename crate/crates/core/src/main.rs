use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use presim::analytics;
use presim::cost::{tiered_price, Tier};
use presim::engine::{derive_seed, TraceMode};
use presim::error::{Error, Result};
use presim::output::{to_csv, to_json, Format};
use presim::runner::{
    parse_grid, policy_search, run_replications, sweep, LossMeasure, SearchMode, Table, DEFAULT_RUNS, WORKERS_ENV,
};
use presim::scenario::{self, normalize, parse_scenario, Scenario};
use presim::sim::run_traced;
use presim::units::parse_duration;

#[derive(Parser)]
#[command(name = "presim", version, about = "Loss and cost simulator for replicated digital collections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct BatchArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Replications per cell.
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    runs: u64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    MinLoss,
    MinCost,
}

#[derive(Subcommand)]
enum Command {
    /// Replicate one scenario and summarise the runs.
    Run(BatchArgs),
    /// Run every cell of a parameter grid.
    Sweep {
        #[command(flatten)]
        batch: BatchArgs,
        /// Grid as a JSON object of path -> values, inline or as a file.
        #[arg(long)]
        grid: String,
    },
    /// Pick the best policy among candidates under a budget or loss target.
    Search {
        #[command(flatten)]
        batch: BatchArgs,
        /// Candidate grid over policy fields, inline JSON or a file.
        #[arg(long)]
        candidates: String,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Mean total cost allowed per run (min-loss).
        #[arg(long)]
        budget: Option<f64>,
        /// Largest acceptable lost fraction (min-cost).
        #[arg(long)]
        loss_target: Option<f64>,
        /// Judge loss by this quantile of the lost fraction instead of the mean.
        #[arg(long)]
        quantile: Option<f64>,
    },
    /// Dump the event trace of a single run as JSON lines.
    Trace {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run index whose derived seed to use.
        #[arg(long, default_value_t = 0)]
        run: u64,
        /// Keep at most this many events.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Print a scenario with every default filled in.
    Normalize {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print a built-in scenario.
    Preset {
        #[command(subcommand)]
        which: Preset,
    },
    /// Closed-form calculations.
    Calc {
        #[command(subcommand)]
        op: Calc,
    },
}

#[derive(Subcommand)]
enum Preset {
    /// Small key collection in its own administrative domain.
    EncryptionKeys,
    /// Format readers modelled as servers.
    FormatObsolescence {
        #[arg(long, default_value_t = 3)]
        readers: usize,
        #[arg(long, default_value = "12 my")]
        reader_half_life: String,
    },
}

#[derive(Subcommand)]
enum Calc {
    /// Loss probability of one unaudited copy.
    PSingle {
        #[arg(long, default_value_t = 1.0)]
        blocks: f64,
        #[arg(long)]
        half_life: String,
        #[arg(long)]
        t: String,
    },
    /// Loss probability of a document with several unaudited copies.
    PUnaudited {
        #[arg(long)]
        copies: u32,
        #[arg(long, default_value_t = 1.0)]
        blocks: f64,
        #[arg(long)]
        half_life: String,
        #[arg(long)]
        t: String,
    },
    /// Expected fraction missed by random sampling with replacement.
    UnauditedFraction {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        draws: u64,
    },
    /// Fully fragile equivalent of a collection.
    Fragility {
        #[arg(long)]
        n: f64,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        f: f64,
    },
    /// Whether compression lowers expected loss.
    Compression {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        f: f64,
        #[arg(long)]
        f_after: f64,
    },
    /// Replicas needed against subverted auditors and a span shock.
    Byzantine {
        #[arg(long)]
        s: u64,
        #[arg(long, default_value_t = 0)]
        span: u64,
    },
    /// Graduated price; tiers as "upper:price,...,inf:price".
    TieredPrice {
        #[arg(long)]
        amount_gb: f64,
        #[arg(long)]
        tiers: String,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load(path: &Path) -> Result<Scenario> {
    parse_scenario(&read(path)?)
}

fn inline_or_file(arg: &str) -> Result<String> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        read(Path::new(arg))
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

fn emit_table(table: &Table, batch: &BatchArgs) -> Result<()> {
    let format = match batch.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    let text = match format {
        Format::Csv => to_csv(table)?,
        Format::Json => to_json(table)?,
    };
    emit(&text, batch.out.as_deref())
}

fn workers(batch: &BatchArgs) -> usize {
    batch.workers.unwrap_or_else(presim::runner::default_workers)
}

fn duration(arg: &str, name: &str) -> Result<f64> {
    parse_duration(arg).map_err(|e| Error::validation(name, e.to_string()))
}

fn parse_tiers(text: &str) -> Result<Vec<Tier>> {
    text.split(',')
        .map(|part| {
            let (upper, price) = part
                .split_once(':')
                .ok_or_else(|| Error::validation("tiers", format!("`{part}` is not upper:price")))?;
            let upper_gb = match upper.trim() {
                "inf" | "" => f64::INFINITY,
                u => u.parse().map_err(|_| Error::validation("tiers", format!("bad bound `{u}`")))?,
            };
            let price = price
                .trim()
                .parse()
                .map_err(|_| Error::validation("tiers", format!("bad price `{price}`")))?;
            Ok(Tier { upper_gb, price })
        })
        .collect()
}

fn calc(op: Calc) -> Result<String> {
    let value = match op {
        Calc::PSingle { blocks, half_life, t } => json!(analytics::p_doc_loss_single_copy(
            blocks,
            duration(&half_life, "half_life")?,
            duration(&t, "t")?
        )?),
        Calc::PUnaudited {
            copies,
            blocks,
            half_life,
            t,
        } => json!(analytics::p_doc_loss_unaudited(
            copies,
            blocks,
            duration(&half_life, "half_life")?,
            duration(&t, "t")?
        )?),
        Calc::UnauditedFraction { n, draws } => json!(analytics::expected_unaudited_fraction(n, draws)?),
        Calc::Fragility { n, s, f } => {
            let e = analytics::fragility_equivalent(n, s, f)?;
            for w in e.warnings() {
                eprintln!("warning: {w}");
            }
            serde_json::to_value(e).map_err(|e| Error::Serde(e.to_string()))?
        }
        Calc::Compression { c, f, f_after } => json!(analytics::compression_reduces_loss(c, f, f_after)?),
        Calc::Byzantine { s, span } => json!(analytics::byzantine_min_replicas(s, span)),
        Calc::TieredPrice { amount_gb, tiers } => json!(tiered_price(amount_gb, &parse_tiers(&tiers)?)?),
    };
    Ok(format!("{value}\n"))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(batch) => {
            let s = load(&batch.scenario)?;
            let agg = run_replications(&s, batch.runs, batch.seed, workers(&batch))?;
            emit_table(&Table::single(agg.summary()), &batch)
        }
        Command::Sweep { batch, grid } => {
            let s = load(&batch.scenario)?;
            let grid = parse_grid(&inline_or_file(&grid)?)?;
            let table = sweep(&s, &grid, batch.runs, batch.seed, workers(&batch))?;
            emit_table(&table, &batch)
        }
        Command::Search {
            batch,
            candidates,
            mode,
            budget,
            loss_target,
            quantile,
        } => {
            let s = load(&batch.scenario)?;
            let grid = parse_grid(&inline_or_file(&candidates)?)?;
            let mode = match mode {
                Mode::MinLoss => SearchMode::MinLoss {
                    budget: budget.ok_or_else(|| Error::validation("budget", "required with --mode min-loss"))?,
                },
                Mode::MinCost => SearchMode::MinCost {
                    loss_target: loss_target
                        .ok_or_else(|| Error::validation("loss_target", "required with --mode min-cost"))?,
                },
            };
            let measure = quantile.map_or(LossMeasure::Mean, LossMeasure::Quantile);
            let out = policy_search(&s, &grid, mode, measure, batch.runs, batch.seed, workers(&batch))?;
            match (out.selected, out.best_effort) {
                (Some(i), _) => eprintln!("selected: {}", describe(&out.columns, &out.frontier[i].params)),
                (None, Some(i)) => eprintln!(
                    "infeasible; best effort: {}",
                    describe(&out.columns, &out.frontier[i].params)
                ),
                (None, None) => eprintln!("infeasible"),
            }
            match batch.format {
                OutFormat::Csv => emit_table(&out.table(), &batch),
                OutFormat::Json => {
                    let mut text = serde_json::to_string_pretty(&out).map_err(|e| Error::Serde(e.to_string()))?;
                    text.push('\n');
                    emit(&text, batch.out.as_deref())
                }
            }
        }
        Command::Trace {
            scenario,
            seed,
            run,
            limit,
        } => {
            let s = load(&scenario)?;
            let mode = limit.map_or(TraceMode::Full, TraceMode::Limit);
            let (_, trace) = run_traced(&s, derive_seed(seed, run), mode)?;
            let mut text = String::new();
            for e in &trace.entries {
                text.push_str(&serde_json::to_string(e).map_err(|e| Error::Serde(e.to_string()))?);
                text.push('\n');
            }
            emit(&text, None)
        }
        Command::Normalize { scenario } => emit(&normalize(&load(&scenario)?), None),
        Command::Preset { which } => {
            let s = match which {
                Preset::EncryptionKeys => scenario::preset_encryption_keys(),
                Preset::FormatObsolescence {
                    readers,
                    reader_half_life,
                } => scenario::preset_format_obsolescence(
                    readers,
                    duration(&reader_half_life, "reader_half_life")?,
                    None,
                )?,
            };
            emit(&normalize(&s), None)
        }
        Command::Calc { op } => emit(&calc(op)?, None),
    }
}

fn describe(columns: &[String], params: &[serde_json::Value]) -> String {
    columns
        .iter()
        .zip(params)
        .map(|(c, v)| format!("{c}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
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
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
