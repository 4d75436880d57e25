//! The `anytsr` command line: argument parsing, run configuration and the
//! subcommand bodies. `main.rs` only forwards to [`run`].

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anytsr::checkpoint::Checkpoint;
use anytsr::config::{parse_kv, Preset};
use anytsr::evaluation::{multi_step_report, sweep, EvalOptions};
use anytsr::gradcheck::{run_suite, SUITES};
use anytsr::imaging::{load_dir, load_image, save_image, synth_dataset, write_dataset, ImageGray};
use anytsr::training::{model_checkpoint, model_from_checkpoint, sub_seed, Trainer};
use anytsr::{AnyTsr, BACKWARD_OPS};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod run_config;

pub use run_config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;
pub const EXIT_GRADCHECK: i32 = 6;

/// A failed command: exit code, a short kind tag and the message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, "config", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace('\n', " ");
        write!(f, "error: code={} kind={}: {msg}", self.code, self.kind)
    }
}

impl From<anytsr::Error> for CliError {
    fn from(e: anytsr::Error) -> Self {
        use anytsr::Error as E;
        let (code, kind) = match &e {
            E::InvalidConfig(_) => (EXIT_CONFIG, "config"),
            E::ImageRead { .. }
            | E::NotGrayscale { .. }
            | E::ImageWrite { .. }
            | E::InvalidImage(_)
            | E::ImageTooSmall { .. }
            | E::Dataset(_) => (EXIT_DATA, "data"),
            E::NonFinite(_) => (EXIT_DIVERGED, "diverged"),
            E::Checkpoint(_) | E::ShapeMismatch(_) => (EXIT_CHECKPOINT, "checkpoint"),
            E::Io(_) => (EXIT_OTHER, "io"),
        };
        Self::new(code, kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_OTHER, "io", e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "anytsr", version, about = "Any-scale thermal image super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on `<data>/train`.
    Train(TrainArgs),
    /// Super-resolve one image.
    Infer(InferArgs),
    /// PSNR of a checkpoint against bicubic over a set of scales.
    Eval(EvalArgs),
    /// Compare one-step and chained upscaling.
    Multistep(MultistepArgs),
    /// Write a synthetic thermal-like dataset.
    SynthData(SynthArgs),
    /// Finite-difference check of every block's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ComputeArgs {
    /// Compute threads (defaults to all cores).
    #[arg(long, env = "ANYTSR_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root holding `train/` (overrides `data`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the log and checkpoints (overrides `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many steps (overrides `max_steps`).
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Extra `key=value` override; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from a training checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Patch-sampling worker threads.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Single worker and single compute thread.
    #[arg(long)]
    pub deterministic: bool,
    #[command(flatten)]
    pub compute: ComputeArgs,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Model or training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input image (PNG or PGM, single channel).
    #[arg(long)]
    pub input: PathBuf,
    /// Upscaling factor, at least 1; fractional values allowed.
    #[arg(long)]
    pub scale: f64,
    /// Output image path; the extension picks the format.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub compute: ComputeArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model or training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root; `test/` is used when present, else `train/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated scales.
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 3.0, 4.0, 6.0, 8.0])]
    pub scales: Vec<f64>,
    /// Pixels shaved from each border before scoring.
    #[arg(long, default_value_t = 0)]
    pub crop_border: usize,
    /// Write the per-image CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Model name in the report.
    #[arg(long, default_value = "anytsr")]
    pub name: String,
    #[command(flatten)]
    pub compute: ComputeArgs,
}

#[derive(Args, Debug)]
pub struct MultistepArgs {
    /// Model or training checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root; `test/` is used when present, else `train/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Chains separated by `;`, steps by `,` (e.g. `6;2,3;2,2,1.5`).
    #[arg(long, default_value = "6;2,3;2,2,1.5")]
    pub chains: String,
    /// Write the chain CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub compute: ComputeArgs,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Training images.
    #[arg(long, default_value_t = 8)]
    pub train: usize,
    /// Test images.
    #[arg(long, default_value_t = 4)]
    pub test: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Model size for the suites.
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    /// Run only this suite; repeatable.
    #[arg(long = "suite")]
    pub suites: Vec<String>,
    /// Corrupt the backward rule of this op (negative control).
    #[arg(long, value_name = "OP")]
    pub corrupt_backward: Option<String>,
    #[command(flatten)]
    pub compute: ComputeArgs,
}

/// Parses `args` (including the program name) and runs the command.
/// Output goes to stdout; errors are printed to stderr as one line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.code
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Multistep(a) => cmd_multistep(a),
        Command::SynthData(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn init_threads(threads: Option<usize>) -> CliResult {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::config("threads must be >= 1"));
    }
    // A second call in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_model(path: &Path) -> CliResult<AnyTsr> {
    let ckpt = Checkpoint::load(path).map_err(|e| match e {
        anytsr::Error::Io(io) => CliError::new(EXIT_CHECKPOINT, "checkpoint", format!("{}: {io}", path.display())),
        other => CliError::from(other),
    })?;
    Ok(model_from_checkpoint(&ckpt)?)
}

fn eval_images(data: &Path) -> CliResult<Vec<(String, ImageGray)>> {
    let ds = load_dir(data)?;
    Ok(if ds.test.is_empty() { ds.train } else { ds.test })
}

pub fn cmd_train(a: TrainArgs) -> CliResult {
    let mut pairs = Vec::new();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        pairs.extend(parse_kv(&text)?);
    }
    let flag = |k: &str, v: String| (k.to_string(), v);
    pairs.extend(a.data.as_ref().map(|p| flag("data", p.display().to_string())));
    pairs.extend(a.out.as_ref().map(|p| flag("out", p.display().to_string())));
    pairs.extend(a.seed.map(|s| flag("seed", s.to_string())));
    pairs.extend(a.max_steps.map(|s| flag("max_steps", s.to_string())));
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("override {o:?} is not KEY=VALUE")))?;
        pairs.push(flag(k.trim(), v.trim().to_string()));
    }
    let rc = RunConfig::from_pairs(&pairs)?;
    let data = rc.data.clone().ok_or_else(|| CliError::config("no dataset: set `data` or --data"))?;
    let out = rc.out.clone().ok_or_else(|| CliError::config("no output directory: set `out` or --out"))?;
    let (workers, threads) = if a.deterministic {
        (1, Some(1))
    } else {
        (a.workers.max(1), a.compute.threads)
    };
    init_threads(threads)?;

    let ds = load_dir(&data)?;
    let images: Vec<ImageGray> = ds.train.into_iter().map(|(_, img)| img).collect();
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            Trainer::resume(&ckpt, images)?
        }
        None => {
            let model = AnyTsr::new(rc.model.clone(), sub_seed(rc.train.seed, "init", 0, 0))?;
            Trainer::new(model, rc.train.clone(), images)?
        }
    };
    trainer.set_workers(workers)?;

    fs::create_dir_all(&out)?;
    fs::write(out.join("run.cfg"), rc.to_text())?;
    let log_path = out.join("loss.log");
    let fresh = a.resume.is_none() || !log_path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)?;
    if fresh {
        writeln!(file, "step\tepoch\tscale\tlr\tloss")?;
    }
    let mut log = BufWriter::new(file);
    let every = trainer.cfg.checkpoint_every;
    let records = trainer.run(&mut log, |t| {
        let ckpt = t.checkpoint();
        if every > 0 && t.step % every == 0 && !t.is_done() {
            ckpt.save(out.join(format!("step_{:06}.atsr", t.step)))?;
        }
        ckpt.save(out.join("checkpoint.atsr"))
    })?;
    model_checkpoint(&trainer.model).save(out.join("model.atsr"))?;
    let last = records.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} steps (total {}), last loss {last:.6}, model at {}",
        records.len(),
        trainer.step,
        out.join("model.atsr").display()
    );
    Ok(())
}

pub fn cmd_infer(a: InferArgs) -> CliResult {
    init_threads(a.compute.threads)?;
    if !(a.scale.is_finite() && a.scale >= 1.0) {
        return Err(CliError::config(format!("scale must be >= 1, got {}", a.scale)));
    }
    let model = load_model(&a.checkpoint)?;
    let lr = load_image(&a.input)?;
    let sr = model.infer(&lr, a.scale)?;
    save_image(&a.output, &sr)?;
    println!(
        "{}x{} -> {}x{} at x{} written to {}",
        lr.height(),
        lr.width(),
        sr.height(),
        sr.width(),
        a.scale,
        a.output.display()
    );
    Ok(())
}

pub fn cmd_eval(a: EvalArgs) -> CliResult {
    init_threads(a.compute.threads)?;
    if a.scales.is_empty() || a.scales.iter().any(|s| !(s.is_finite() && *s >= 1.0)) {
        return Err(CliError::config("scales must be >= 1"));
    }
    let model = load_model(&a.checkpoint)?;
    let images = eval_images(&a.data)?;
    let opts = EvalOptions {
        crop_border: a.crop_border,
    };
    let report = sweep(&model, &a.name, &images, &a.scales, &opts)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.csv {
        fs::write(p, report.to_csv())?;
    }
    Ok(())
}

/// `6;2,3;2,2,1.5` → `[[6], [2, 3], [2, 2, 1.5]]`.
pub fn parse_chains(text: &str) -> CliResult<Vec<Vec<f64>>> {
    let chains: Vec<Vec<f64>> = text
        .split(';')
        .map(|c| {
            c.split(',')
                .map(|s| {
                    let v: f64 = s
                        .trim()
                        .parse()
                        .map_err(|_| CliError::config(format!("bad chain step {s:?}")))?;
                    if v.is_finite() && v >= 1.0 {
                        Ok(v)
                    } else {
                        Err(CliError::config(format!("chain step {v} must be >= 1")))
                    }
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    Ok(chains)
}

pub fn cmd_multistep(a: MultistepArgs) -> CliResult {
    init_threads(a.compute.threads)?;
    let chains = parse_chains(&a.chains)?;
    let model = load_model(&a.checkpoint)?;
    let images = eval_images(&a.data)?;
    let report = multi_step_report(&model, &images, &chains)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.csv {
        fs::write(p, report.to_csv())?;
    }
    Ok(())
}

pub fn cmd_synth(a: SynthArgs) -> CliResult {
    if a.train == 0 || a.size < 8 {
        return Err(CliError::config("need at least one training image of size >= 8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut imgs = synth_dataset(a.train + a.test, a.size, &mut rng);
    let test = imgs.split_off(a.train);
    write_dataset(&a.out, &imgs, &test)?;
    println!("wrote {} train and {} test images to {}", a.train, a.test, a.out.display());
    Ok(())
}

pub fn cmd_gradcheck(a: GradcheckArgs) -> CliResult {
    init_threads(a.compute.threads)?;
    let preset: Preset = a.preset.parse()?;
    let fault = match &a.corrupt_backward {
        None => None,
        Some(op) => Some(
            *BACKWARD_OPS
                .iter()
                .find(|o| *o == op)
                .ok_or_else(|| CliError::config(format!("unknown op {op:?}; known: {}", BACKWARD_OPS.join(", "))))?,
        ),
    };
    let names: Vec<&str> = if a.suites.is_empty() {
        SUITES.to_vec()
    } else {
        for s in &a.suites {
            if !SUITES.contains(&s.as_str()) {
                return Err(CliError::config(format!("unknown suite {s:?}")));
            }
        }
        a.suites.iter().map(String::as_str).collect()
    };
    let mut failed = Vec::new();
    for name in names {
        let check = run_suite(name, preset, fault)?;
        for t in &check.tensors {
            println!(
                "  {name} {} elements={} max_rel_err={:.3e} max_abs_err={:.3e}",
                t.name, t.elements, t.max_rel_err, t.max_abs_err
            );
        }
        let verdict = if check.passed() { "ok" } else { "FAIL" };
        println!(
            "{name}: {verdict} tensors={} max_rel_err={:.3e}",
            check.tensors.len(),
            check.max_rel_err()
        );
        if !check.passed() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_GRADCHECK,
            "gradcheck",
            format!("gradient check failed in {}", failed.join(", ")),
        ))
    }
}
