use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use a2a_core::io::tables::{export_embeddings, write_trace_csv};
use a2a_core::io::{read_checkpoint, read_stack, write_bmode_png, write_checkpoint, write_stack, RunConfig};
use a2a_core::metrics::{bmode, envelope_bmode, evaluate_envelope_with_bins};
use a2a_core::phantom::generate_dataset;
use a2a_core::sweep::{run_method, run_sweep, Method};
use a2a_core::ttt::{embedding_snapshot, TttSession};
use a2a_core::{ApertureStack, ComplexField, Error, Result};

#[derive(Parser)]
#[command(name = "a2a", version, about = "Test-time aperture-to-aperture denoising of synthetic-aperture IQ stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config leaf, e.g. `--set ttt.lr=0.002`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom and write its noisy and clean stacks.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: `output.dir` from the config).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit the model on one stack and decode the clean stack.
    Denoise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Apply a classical method (or `raw` compounding) to a stack.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        input: PathBuf,
        /// One of raw, cf, pcf, srad.
        #[arg(long, short)]
        method: Method,
        /// Output SAIQ file holding the single compounded frame.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print the metrics of a stack (compounded) against a reference, as JSON.
    Metrics {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        reference: PathBuf,
    },
    /// Run the configured sweep, appending rows to a CSV and skipping cells
    /// already recorded there.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write the four embedding pyramids of a fresh shuffle pair as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        input: PathBuf,
        /// Trained model; when omitted the model is fitted first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Render the compounded B-mode image of a stack as an 8-bit PNG.
    Render {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = a2a_core::metrics::DEFAULT_DYNAMIC_RANGE)]
        dynamic_range: f64,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("A2A_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("A2A_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag.clone().unwrap_or_else(|| cfg.output.dir.clone());
    ensure_dir(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Argument(e.to_string()))?;
    text.push('\n');
    a2a_core::io::atomic_write(path, text.as_bytes())
}

fn frame_stack(y: &ComplexField) -> Result<ApertureStack> {
    ApertureStack::new(a2a_core::cvnn::ComplexTensor::from_complex(&[1, y.h, y.w], &y.data)?)
}

fn simulate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let b = generate_dataset(&cfg.phantom)?;
    let dr = cfg.metrics.dynamic_range;
    write_stack(dir.join("noisy.saiq"), &b.noisy_stack)?;
    write_stack(dir.join("clean.saiq"), &b.clean_stack)?;
    write_bmode_png(&bmode(&b.noisy_stack.compound(), dr)?, dir.join("noisy.png"))?;
    write_bmode_png(&bmode(&b.clean_compound, dr)?, dir.join("clean.png"))?;
    write_json(&dir.join("config.json"), cfg)?;
    log::info!("wrote phantom to {}", dir.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct DenoiseSummary {
    steps: usize,
    stop_reason: Option<&'static str>,
    final_swap: Option<f64>,
    final_con: Option<f64>,
}

fn denoise(cfg: &RunConfig, input: &Path, dir: &Path) -> Result<()> {
    let x = read_stack(input)?;
    let mut session = TttSession::new(&x, &cfg.ttt)?;
    while !session.is_done() {
        let step = session.step().map(|l| (l.swap, l.con));
        match step {
            Ok((swap, con)) => {
                let k = session.trace().steps_run();
                if k % 50 == 0 {
                    log::info!("step {k}: swap {swap:.5} con {con:.5}");
                }
            }
            Err(e) => {
                write_trace_csv(dir.join("trace.csv"), session.trace())?;
                return Err(e);
            }
        }
    }
    let (params, trace) = session.into_parts();
    let (clean, y) = a2a_core::model::infer_clean(&params, &x)?;
    write_stack(dir.join("denoised.saiq"), &clean)?;
    write_trace_csv(dir.join("trace.csv"), &trace)?;
    write_checkpoint(dir.join("model.a2ck"), &params)?;
    write_bmode_png(&bmode(&y, cfg.metrics.dynamic_range)?, dir.join("denoised.png"))?;
    let last = trace.steps.last();
    write_json(
        &dir.join("summary.json"),
        &DenoiseSummary {
            steps: trace.steps_run(),
            stop_reason: trace.stop_reason.map(|r| r.as_str()),
            final_swap: last.map(|l| l.swap),
            final_con: last.map(|l| l.con),
        },
    )?;
    log::info!("stopped after {} steps", trace.steps_run());
    Ok(())
}

fn baseline(cfg: &RunConfig, input: &Path, method: Method, out: &Path) -> Result<()> {
    if method == Method::A2a {
        return Err(Error::Config("use the denoise command for a2a".into()));
    }
    let x = read_stack(input)?;
    let y = run_method(method, &x, cfg)?.into_field();
    write_stack(out, &frame_stack(&y)?)
}

fn metrics(cfg: &RunConfig, input: &Path, reference: &Path) -> Result<()> {
    let y = read_stack(input)?.compound();
    let r = read_stack(reference)?.compound();
    if (y.h, y.w) != (r.h, r.w) {
        return Err(Error::Argument(format!(
            "input is {}x{}, reference is {}x{}",
            y.h, y.w, r.h, r.w
        )));
    }
    if cfg.metrics.roi.is_none() && (cfg.phantom.height, cfg.phantom.width) != (y.h, y.w) {
        return Err(Error::Config(format!(
            "regions come from a {}x{} phantom but the image is {}x{}; set phantom extents or metrics.roi",
            cfg.phantom.height, cfg.phantom.width, y.h, y.w
        )));
    }
    let report = evaluate_envelope_with_bins(
        &y.envelope(),
        &r.envelope(),
        &cfg.roi()?,
        cfg.metrics.dynamic_range,
        cfg.metrics.gcnr_bins,
    )?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Argument(e.to_string()))?);
    Ok(())
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let outcome = run_sweep(cfg, out)?;
    eprintln!(
        "sweep: {} written, {} already present, {} failed",
        outcome.written,
        outcome.skipped,
        outcome.failed.len()
    );
    match outcome.failed.into_iter().next() {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}

fn export(cfg: &RunConfig, input: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let x = read_stack(input)?;
    let params = match checkpoint {
        Some(p) => read_checkpoint(p)?,
        None => a2a_core::ttt::fit(&x, &cfg.ttt)?.0,
    };
    let [a1, a2, n1, n2] = embedding_snapshot(&params, &x, cfg.ttt.seed)?;
    export_embeddings(out, [&a1, &a2, &n1, &n2])
}

fn render(input: &Path, out: &Path, dynamic_range: f64) -> Result<()> {
    let x = read_stack(input)?;
    let img = envelope_bmode(&x.compound().envelope(), dynamic_range)?;
    write_bmode_png(&img, out)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { cfg, out_dir: dir } => {
            let cfg = cfg.load()?;
            simulate(&cfg, &out_dir(&dir, &cfg)?)
        }
        Command::Denoise { cfg, input, out_dir: dir } => {
            let cfg = cfg.load()?;
            denoise(&cfg, &input, &out_dir(&dir, &cfg)?)
        }
        Command::Baseline { cfg, input, method, out } => baseline(&cfg.load()?, &input, method, &out),
        Command::Metrics { cfg, input, reference } => metrics(&cfg.load()?, &input, &reference),
        Command::Sweep { cfg, out } => sweep(&cfg.load()?, &out),
        Command::ExportEmbeddings {
            cfg,
            input,
            checkpoint,
            out,
        } => export(&cfg.load()?, &input, checkpoint.as_deref(), &out),
        Command::Render {
            input,
            out,
            dynamic_range,
        } => render(&input, &out, dynamic_range),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
