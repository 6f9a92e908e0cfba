mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iterquant::prune::PruneScope;
use iterquant::quant::AlphaDtype;
use iterquant::Method;

#[derive(Parser)]
#[command(name = "iterquant", version, about = "Iterative binary-code quantization with retraining and pruning")]
struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads for row-parallel quantization (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize the tensors of an IQWT model into IQQT files.
    Quantize(QuantizeArgs),
    /// Build a magnitude-pruning mask for an IQWT model.
    Prune(PruneArgs),
    /// Train the character LSTM described by a pipeline config.
    Train(TrainArgs),
    /// Run the iterative quantize/retrain pipeline.
    Iterate(IterateArgs),
    /// Storage accounting, artifact summaries and histograms.
    Report(ReportArgs),
    /// Run the brute-force oracle suites.
    Selftest,
}

#[derive(Args)]
pub struct QuantizeArgs {
    pub model: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub bits: usize,
    #[arg(long, default_value_t = 1)]
    pub tables: usize,
    #[arg(long, default_value_t = Method::Alternating)]
    pub method: Method,
    /// IQMK mask; masked weights are excluded and dequantize to zero.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Regex selecting tensor names.
    #[arg(long, default_value = ".*")]
    pub filter: String,
    #[arg(long, default_value = "f32")]
    pub alpha_dtype: AlphaDtype,
    /// Output directory; one `<tensor>.iqqt` per quantized tensor.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PruneArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub rate: f64,
    #[arg(long, default_value = "per-tensor")]
    pub scope: PruneScope,
    #[arg(long, default_value = ".*")]
    pub filter: String,
    #[arg(long)]
    pub out_mask: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Where to write the trained IQWT model.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct IterateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub prune_rate: Option<f64>,
    #[arg(long)]
    pub save_quantized: bool,
    #[arg(long)]
    pub histogram_bins: Option<usize>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// IQQT, IQWT or IQMK file to summarize.
    #[arg(long)]
    pub artifact: Option<PathBuf>,
    /// Pipeline run directory to summarize.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Dry-run layout: rows of the matrix.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Comma-separated bit counts for the dry run.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub bits: Vec<usize>,
    /// Comma-separated tables-per-row counts for the dry run.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub tables: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub alpha_bits: usize,
    #[arg(long, default_value_t = 0.0)]
    pub prune_rate: f64,
    /// Mask cost in bits per weight after index compression.
    #[arg(long, default_value_t = 0.0)]
    pub mask_bits: f64,
    /// Directory for histogram CSVs.
    #[arg(long)]
    pub histograms: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Quantize(a) => commands::quantize(&a, cli.json),
        Command::Prune(a) => commands::prune(&a, cli.json),
        Command::Train(a) => commands::train(&a, cli.json),
        Command::Iterate(a) => commands::iterate(&a, cli.json),
        Command::Report(a) => commands::report(&a, cli.json),
        Command::Selftest => commands::selftest(cli.json),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
