use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use haste_runtime::container::{Container, ContainerKind};
use haste_runtime::fixture::{self, FixtureConfig};
use haste_runtime::io::write_atomic;
use haste_runtime::report::{deltas_csv, to_csv, SweepRow};
use haste_runtime::runner::{compare, evaluate, HasteSettings, Mode};
use haste_runtime::{Dataset, Model, Result, RuntimeError};

/// Hashing-based channel merging for CNN inference.
#[derive(Debug, Parser)]
#[command(name = "haste", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a model or dataset container.
    Info {
        /// Container file.
        path: PathBuf,
    },
    /// Evaluate accuracy and FLOPs over the dataset.
    Run {
        #[command(flatten)]
        common: Common,
        /// Hyperplanes per layer.
        #[arg(short = 'L', default_value_t = 16)]
        planes: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Evaluate a range of hyperplane counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Ascending comma-separated list of hyperplane counts.
        #[arg(short = 'L', value_delimiter = ',', required = true)]
        planes: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Per-layer output deltas between the regular and compressed network.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'L', default_value_t = 16)]
        planes: usize,
        /// Comma-separated image indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        samples: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write the synthetic reference model and test set.
    MakeFixture {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "fixtures")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Haste)]
    mode: ModeArg,
    /// Fraction of zero entries in each hyperplane.
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    /// Patch halo in pixels.
    #[arg(long, default_value_t = 1)]
    halo: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// First convolution (0-based among convolutions) to compress.
    #[arg(long, default_value_t = 0)]
    start_layer: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Haste,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl Common {
    fn settings(&self, planes: usize) -> Result<HasteSettings> {
        let mode = match self.mode {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Haste => Mode::Haste,
            ModeArg::Random => Mode::Random,
        };
        if mode != Mode::Baseline {
            if !(1..=haste_core::lsh::MAX_PLANES).contains(&planes) {
                return Err(RuntimeError::Usage(format!(
                    "-L must be in 1..={}, got {planes}",
                    haste_core::lsh::MAX_PLANES
                )));
            }
            if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
                return Err(RuntimeError::Usage(format!(
                    "--sparsity must lie strictly between 0 and 1, got {}",
                    self.sparsity
                )));
            }
            if !(1..=3).contains(&self.halo) {
                return Err(RuntimeError::Usage(format!(
                    "--halo must be 1, 2 or 3, got {}",
                    self.halo
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(RuntimeError::Usage("--seeds must not be empty".into()));
        }
        Ok(HasteSettings {
            mode,
            planes,
            sparsity: self.sparsity,
            halo: self.halo,
            ..HasteSettings::default()
        })
    }

    fn load(&self) -> Result<(Model, Dataset)> {
        let model = Model::from_container(&Container::read(&self.model)?)?;
        let data = Dataset::read(&self.data)?;
        Ok((model, data))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn info(path: &Path) -> Result<String> {
    let container = Container::read(path)?;
    let m = &container.manifest;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} container, {} tensors, {} blob bytes",
        path.display(),
        match m.kind {
            ContainerKind::Model => "model",
            ContainerKind::Dataset => "dataset",
        },
        m.tensors.len(),
        m.blob_length
    );
    match m.kind {
        ContainerKind::Dataset => {
            let data = Dataset::from_container(&container)?;
            let _ = writeln!(
                s,
                "images: {} of {}x{}x{}",
                data.len(),
                data.channels,
                data.height,
                data.width
            );
        }
        ContainerKind::Model => {
            let model = Model::from_container(&container)?;
            let costs = model.costs();
            let _ = writeln!(s, "input: {}", model.input_shape);
            let _ = writeln!(
                s,
                "{:>5}  {:<15} {:>5}  {:<12} {:>12} {:>10}",
                "index", "kind", "conv", "output", "flops", "params"
            );
            for (i, (spec, shape)) in model.specs.iter().zip(&model.shapes).enumerate() {
                let cost = costs.iter().find(|c| c.index == i);
                let _ = writeln!(
                    s,
                    "{:>5}  {:<15} {:>5}  {:<12} {:>12} {:>10}",
                    i,
                    spec.kind(),
                    cost.and_then(|c| c.conv_ordinal)
                        .map_or("-".into(), |k| k.to_string()),
                    shape.to_string(),
                    cost.map_or("-".into(), |c| c.flops.to_string()),
                    cost.map_or("-".into(), |c| c.params.to_string()),
                );
            }
            let _ = writeln!(
                s,
                "convolutions: {}, parameters: {}, baseline flops per image: {}",
                model.conv_count(),
                model.parameter_count(),
                costs.iter().map(|c| c.flops).sum::<u64>()
            );
        }
    }
    let _ = writeln!(s, "tensors:");
    for t in &m.tensors {
        let _ = writeln!(s, "  {:<24} {:?} {:?}", t.name, t.dtype, t.shape);
    }
    Ok(s)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Info { path } => {
            print!("{}", info(&path)?);
            Ok(())
        }
        Command::Run {
            common,
            planes,
            format,
        } => {
            let settings = common.settings(planes)?;
            let (model, data) = common.load()?;
            let report = evaluate(&model, &data, &settings, &common.seeds, common.start_layer)?;
            let text = match format {
                Format::Json => report.to_json(),
                Format::Csv => report.layers_csv(),
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Sweep {
            common,
            planes,
            format,
        } => {
            if planes.is_empty() || planes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(RuntimeError::Usage(
                    "-L must be a non-empty ascending list".into(),
                ));
            }
            for &l in &planes {
                common.settings(l)?;
            }
            let (model, data) = common.load()?;
            let mut rows = Vec::with_capacity(planes.len());
            for &l in &planes {
                let report = evaluate(
                    &model,
                    &data,
                    &common.settings(l)?,
                    &common.seeds,
                    common.start_layer,
                )?;
                rows.push(SweepRow::from_report(&report));
            }
            let text = match format {
                Format::Csv => to_csv(&rows),
                Format::Json => serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
            };
            emit(common.out.as_deref(), &text)
        }
        Command::Compare {
            common,
            planes,
            samples,
            format,
        } => {
            let settings = common.settings(planes)?;
            let (model, data) = common.load()?;
            let subset = data.select(&samples)?;
            let seed = common.seeds[0];
            let deltas = compare(&model, &subset, &settings, seed, common.start_layer)?;
            let text = match format {
                Format::Csv => deltas_csv(&deltas),
                Format::Json => {
                    serde_json::to_string_pretty(&deltas).expect("deltas serialize") + "\n"
                }
            };
            emit(common.out.as_deref(), &text)
        }
        Command::MakeFixture { seed, out_dir } => {
            std::fs::create_dir_all(&out_dir).map_err(|e| RuntimeError::io(&out_dir, e))?;
            let built = fixture::build(&FixtureConfig::new(seed))?;
            built.model.write(out_dir.join("model.hste"))?;
            built.test.write(out_dir.join("test.hste"))?;
            println!(
                "wrote {} and {} (baseline accuracy {:.2}%)",
                out_dir.join("model.hste").display(),
                out_dir.join("test.hste").display(),
                built.baseline_accuracy
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("haste: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
