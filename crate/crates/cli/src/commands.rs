//! Command-line interface: argument definitions and command bodies.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sparseconv::autotune::{SearchSpace, StrategyFile};
use sparseconv::dense::DEFAULT_DENSE_CAP;
use sparseconv::execution::ExecOptions;
use sparseconv::io::{load_points, save_points, write_tensor};
use sparseconv::mapping::EvenKernelConvention;
use sparseconv::oracle::Tolerance;
use sparseconv::voxel::{voxelize, Reduce};
use sparseconv::{Precision, SparseTensor};

use crate::bench::{run_bench, BenchOptions};
use crate::config::NetworkConfig;
use crate::error::{CliError, CliResult, FailureKind, Tag};
use crate::network::{Network, RunOptions};
use crate::synth::{synth_generate, SynthKind, SynthParams};
use crate::tune::{tune_network, CostModel, TuneOptions};

#[derive(Debug, Parser)]
#[command(name = "sparseconv", version, about = "Sparse 3D convolution engine: validate, tune, benchmark and run")]
pub struct Cli {
    /// Worker threads for the engine (default: all cores).
    #[arg(long, global = true, env = "SPARSECONV_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the engine against the dense oracle, layer by layer.
    Validate(ValidateArgs),
    /// Search grouping and index strategies and write a strategy file.
    Tune(TuneArgs),
    /// Time repeated forward passes and report per-stage latency and traffic.
    Bench(BenchArgs),
    /// Run one forward pass and dump the output tensor.
    Run(RunArgs),
    /// Generate a synthetic point cloud.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Weight,
    Locality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Fp32,
    Fp16,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Fp32 => Precision::Fp32,
            PrecisionArg::Fp16 => Precision::Fp16,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Network config file, or `toy` for the bundled network.
    #[arg(long, default_value = "toy")]
    pub network: String,
    /// Override the config's storage precision.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
}

#[derive(Debug, Clone, Args)]
pub struct ExecArgs {
    #[arg(long, value_enum, default_value = "weight")]
    pub order: OrderArg,
    #[arg(long, value_enum, default_value = "on")]
    pub fused: Switch,
    /// Strategy file from `tune`.
    #[arg(long)]
    pub strategy: Option<PathBuf>,
    /// Offset convention fault injection for negative controls.
    #[arg(long, hide = true)]
    pub inject_even_k_fault: bool,
}

impl ExecArgs {
    pub fn options(&self) -> CliResult<ExecOptions> {
        let base = match self.order {
            OrderArg::Weight => ExecOptions::default(),
            OrderArg::Locality => ExecOptions::locality(),
        };
        let opts = ExecOptions {
            fused: self.fused == Switch::On,
            even_kernel: if self.inject_even_k_fault { EvenKernelConvention::Centered } else { EvenKernelConvention::Anchored },
            ..base
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Point files (binary SPCL, or `.txt`/`.xyz` text), or directories of them.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Generate inputs instead of reading files.
    #[arg(long, value_enum)]
    pub synth: Option<SynthKind>,
    /// Number of synthetic inputs (seeds `seed`, `seed + 1`, ...).
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[arg(long, default_value_t = 2000)]
    pub points: usize,
    #[arg(long, default_value_t = 16.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub voxel_size: f64,
    /// Feature merge for points sharing a voxel: mean or first.
    #[arg(long, default_value = "mean")]
    pub reduce: String,
}

impl InputArgs {
    fn files(&self) -> CliResult<Vec<PathBuf>> {
        let mut files = Vec::new();
        for p in &self.input {
            if p.is_dir() {
                let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                    .with_context(|| format!("listing {}", p.display()))
                    .tag(FailureKind::Io)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file())
                    .collect();
                entries.sort();
                files.extend(entries);
            } else {
                files.push(p.clone());
            }
        }
        Ok(files)
    }

    /// Voxelized inputs with `channels` features each.
    pub fn load(&self, channels: usize) -> CliResult<Vec<SparseTensor>> {
        let reduce: Reduce = self.reduce.parse().map_err(|e: String| CliError::new(FailureKind::Config, anyhow::anyhow!(e)))?;
        let mut clouds = Vec::new();
        match (self.synth, self.input.is_empty()) {
            (Some(_), false) => return Err(CliError::new(FailureKind::Config, anyhow::anyhow!("use either --input or --synth"))),
            (None, true) => return Err(CliError::new(FailureKind::Config, anyhow::anyhow!("no input: pass --input or --synth"))),
            (Some(kind), true) => {
                for i in 0..self.samples {
                    let p = SynthParams {
                        channels,
                        ..SynthParams::new(kind, self.points, self.extent, self.seed + i as u64)
                    };
                    clouds.push(("synthetic".to_string(), synth_generate(&p).tag(FailureKind::Config)?));
                }
            }
            (None, false) => {
                for f in self.files()? {
                    let pc = load_points(&f).map_err(|e| CliError::new(FailureKind::Io, anyhow::anyhow!("{}: {e}", f.display())))?;
                    clouds.push((f.display().to_string(), pc));
                }
                if clouds.is_empty() {
                    return Err(CliError::new(FailureKind::Io, anyhow::anyhow!("no point files found")));
                }
            }
        }
        clouds
            .into_iter()
            .map(|(name, pc)| {
                voxelize(&pc, self.voxel_size, reduce).map_err(|e| {
                    let e = CliError::from(e);
                    CliError { error: e.error.context(name), ..e }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Max abs difference for fp32 networks, max relative error for fp16.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Largest dense grid the oracle may allocate, in cells.
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    pub dense_cap: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostArg {
    Measured,
    Analytic,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Search space, e.g. `eps=0,0.1,0.2;S=0,4096,inf`. Omitted keys use defaults.
    #[arg(long)]
    pub space: Option<String>,
    /// Maximum number of samples per layer.
    #[arg(long, default_value_t = sparseconv::autotune::DEFAULT_SAMPLE_BUDGET)]
    pub budget: usize,
    #[arg(long, value_enum, default_value = "measured")]
    pub cost: CostArg,
    /// Timed repeats per configuration and sample.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    /// Strategy file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Simulate an LRU cache of footprint/N bytes per layer.
    #[arg(long)]
    pub cache_fraction: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Output tensor dump (SPCL: integer coordinates then features).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub points: usize,
    #[arg(long, default_value_t = 16.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 16)]
    pub rings: usize,
    #[arg(long)]
    pub output: PathBuf,
}

fn load_network(args: &NetArgs) -> CliResult<Network> {
    let mut cfg = NetworkConfig::load(&args.network).map_err(|e| {
        let io = e.chain().any(|c| c.is::<std::io::Error>());
        CliError::new(if io { FailureKind::Io } else { FailureKind::Config }, e)
    })?;
    if let Some(p) = args.precision {
        cfg.precision = p.into();
    }
    Network::new(cfg).tag(FailureKind::Config)
}

fn apply_strategy(net: &mut Network, path: Option<&Path>) -> CliResult<()> {
    let Some(path) = path else { return Ok(()) };
    let file = StrategyFile::load(path).map_err(|e| {
        let kind = if matches!(e, sparseconv::Error::Io(_)) { FailureKind::Io } else { FailureKind::Config };
        CliError::new(kind, anyhow::anyhow!("{}: {e}", path.display()))
    })?;
    for name in net.apply_strategies(&file) {
        log::warn!("no strategy for layer `{name}`; running it with separate execution");
    }
    Ok(())
}

fn open_out(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display())).tag(FailureKind::Io)?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn cmd_validate(args: &ValidateArgs) -> CliResult<()> {
    let mut net = load_network(&args.net)?;
    apply_strategy(&mut net, args.exec.strategy.as_deref())?;
    let opts = args.exec.options()?;
    let tolerance = match net.precision() {
        Precision::Fp32 => Tolerance::Absolute(args.tolerance.unwrap_or(1e-5)),
        Precision::Fp16 => Tolerance::Relative(args.tolerance.unwrap_or(1e-2)),
    };
    let inputs = args.input.load(net.config.in_channels)?;
    let mut failed = 0;
    for (i, input) in inputs.iter().enumerate() {
        let rep = net.validate(input, tolerance, &opts, args.dense_cap)?;
        println!("input {i} ({} points):\n{rep}", input.len());
        if !rep.pass() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::validation(format!("{failed} of {} inputs failed validation", inputs.len())));
    }
    Ok(())
}

pub fn cmd_tune(args: &TuneArgs) -> CliResult<StrategyFile> {
    let net = load_network(&args.net)?;
    let mut space = match &args.space {
        Some(s) => SearchSpace::parse(s)?,
        None => SearchSpace::default(),
    };
    space.sample_budget = args.budget;
    if args.budget == 0 {
        return Err(CliError::new(FailureKind::Config, anyhow::anyhow!("--budget must be positive")));
    }
    let inputs = args.input.load(net.config.in_channels)?;
    let opts = TuneOptions {
        space,
        cost: match args.cost {
            CostArg::Measured => CostModel::Measured { repeats: args.repeats.max(1), warmup: args.warmup },
            CostArg::Analytic => CostModel::Analytic,
        },
        index_repeats: args.repeats.max(1),
        seed: args.input.seed,
        dataset: args.dataset.clone(),
        exec: ExecOptions::default(),
    };
    let report = tune_network(&net, &inputs, &opts)?;
    println!("{report}");
    report.file.save(&args.out).map_err(|e| CliError::new(FailureKind::Io, anyhow::anyhow!("{}: {e}", args.out.display())))?;
    Ok(report.file)
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let mut net = load_network(&args.net)?;
    apply_strategy(&mut net, args.exec.strategy.as_deref())?;
    let exec = args.exec.options()?;
    if args.repeat == 0 {
        return Err(CliError::new(FailureKind::Config, anyhow::anyhow!("--repeat must be at least 1")));
    }
    let inputs = args.input.load(net.config.in_channels)?;
    let opts = BenchOptions {
        repeat: args.repeat,
        warmup: args.warmup,
        run: RunOptions { exec, ..RunOptions::default() },
        cache_fraction: args.cache_fraction,
    };
    let (report, _) = run_bench(&net, &inputs, &opts)?;
    if args.format != FormatArg::Table || args.out.is_some() {
        eprint!("{}", report.table());
    }
    let mut out = open_out(args.out.as_deref())?;
    match args.format {
        FormatArg::Csv => report.write_csv(&mut out).tag(FailureKind::Io)?,
        FormatArg::Json => {
            serde_json::to_writer_pretty(&mut out, &report).tag(FailureKind::Io)?;
            writeln!(out).tag(FailureKind::Io)?;
        }
        FormatArg::Table => write!(out, "{}", report.table()).tag(FailureKind::Io)?,
    }
    out.flush().tag(FailureKind::Io)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub input_rows: usize,
    pub output_rows: usize,
    pub channels: usize,
}

pub fn cmd_run(args: &RunArgs) -> CliResult<RunSummary> {
    let mut net = load_network(&args.net)?;
    apply_strategy(&mut net, args.exec.strategy.as_deref())?;
    let exec = args.exec.options()?;
    let inputs = args.input.load(net.config.in_channels)?;
    if inputs.len() != 1 {
        return Err(CliError::new(FailureKind::Config, anyhow::anyhow!("run takes exactly one input, got {}", inputs.len())));
    }
    let fwd = net.forward(&inputs[0], &RunOptions { exec, ..RunOptions::default() })?;
    let f = File::create(&args.output).with_context(|| format!("creating {}", args.output.display())).tag(FailureKind::Io)?;
    write_tensor(BufWriter::new(f), &fwd.output)?;
    let summary = RunSummary { input_rows: inputs[0].len(), output_rows: fwd.output.len(), channels: fwd.output.channels() };
    println!("{} rows in, {} rows x {} channels out -> {}", summary.input_rows, summary.output_rows, summary.channels, args.output.display());
    Ok(summary)
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let p = SynthParams {
        channels: args.channels,
        clusters: args.clusters,
        rings: args.rings,
        ..SynthParams::new(args.kind, args.points, args.extent, args.seed)
    };
    let pc = synth_generate(&p).tag(FailureKind::Config)?;
    save_points(&args.output, &pc).map_err(|e| CliError::new(FailureKind::Io, anyhow::anyhow!("{}: {e}", args.output.display())))?;
    println!("{} points -> {}", pc.len(), args.output.display());
    Ok(())
}

/// Configure threads, dispatch, and map the outcome to an exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: configuring {n} threads: {e}");
            return FailureKind::Config.exit_code();
        }
    }
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Tune(a) => cmd_tune(a).map(|_| ()),
        Command::Bench(a) => cmd_bench(a),
        Command::Run(a) => cmd_run(a).map(|_| ()),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
