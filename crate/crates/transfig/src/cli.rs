//! `transfig train | eval | ablate | gen-synth`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! `TRANSFIG_DEVICE` selects the compute device; only `cpu` exists.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use transfig_core::metrics::EvalConfig;
use transfig_core::synth::Split;
use transfig_core::{make_variant, AblationVariant, SyntheticSpec, TrainConfig};

use crate::ablation::{self, SuiteData, SuiteOptions};
use crate::error::{AppError, Result};
use crate::evaluate::{self, TestSets};
use crate::manifest::RunManifest;
use crate::run::{self, FitOptions, RunPaths};
use crate::{checkpoint, config, data};

pub const DEVICE_ENV: &str = "TRANSFIG_DEVICE";

#[derive(Debug, Parser)]
#[command(name = "transfig", version, about = "Shared-discriminator unpaired image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both generators and the shared discriminator.
    Train(TrainArgs),
    /// Score a checkpoint on testA/testB with FID and KID.
    Eval(EvalArgs),
    /// Run every ablation variant (or both architectures) over several seeds.
    Ablate(AblateArgs),
    /// Write the synthetic color-swap dataset.
    GenSynth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config with flat dotted keys, applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Starting point: `desk` (32px miniature nets) or `full` (128px).
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Override one key, e.g. `--set optimizer.lr=0.0002`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Stop after this many steps regardless of epochs.
    #[arg(long)]
    pub steps: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut sets = self.sets.clone();
        if let Some(s) = self.steps {
            sets.push(format!("max_steps={s}"));
        }
        config::resolve(&self.preset, self.config.as_deref(), &sets)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root containing trainA/ and trainB/.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// baseline, d_shared1, no_pool, no_stage1 or no_stage2.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint; `latest` picks the newest in the run directory.
    #[arg(long)]
    pub resume: Option<String>,
    #[arg(long)]
    pub no_samples: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root containing testA/ and testB/.
    #[arg(long)]
    pub data: PathBuf,
    /// Where report.csv, report.txt and manifest.json go.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation edge length; defaults to the training size.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Embedder weight file; the built-in hermetic embedder otherwise.
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    #[arg(long, default_value_t = transfig_core::metrics::FID_ITERATIONS)]
    pub fid_iterations: usize,
    #[arg(long, default_value_t = transfig_core::metrics::KID_ITERATIONS)]
    pub kid_iterations: usize,
    #[arg(long)]
    pub kid_subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset root with trainA/, trainB/, testA/, testB/.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Compare ResNet and UNet generators instead of the variants.
    #[arg(long)]
    pub arch: bool,
    #[arg(long)]
    pub eval_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training images per domain.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Test images per domain.
    #[arg(long, default_value_t = 50)]
    pub n_test: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [220u8, 40, 40])]
    pub color_a: Vec<u8>,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [40u8, 60, 220])]
    pub color_b: Vec<u8>,
}

/// Reads `TRANSFIG_DEVICE`; unset means cpu.
pub fn device() -> Result<String> {
    match std::env::var(DEVICE_ENV) {
        Err(_) => Ok("cpu".into()),
        Ok(v) if v.eq_ignore_ascii_case("cpu") || v.is_empty() => Ok("cpu".into()),
        Ok(v) => Err(AppError::Usage(format!("{DEVICE_ENV}={v}: only `cpu` is available in this build"))),
    }
}

fn train(args: &TrainArgs, manifest: &mut RunManifest) -> Result<()> {
    let mut cfg = args.cfg.resolve()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &args.variant {
        cfg = make_variant(v.parse::<AblationVariant>()?, &cfg);
    }
    cfg.validate()?;
    *manifest = manifest.clone().with_config(&cfg)?;
    let (a, b) = data::load_split(&args.data, Split::Train)?;
    let run = RunPaths::new(&args.out);
    let resume = match args.resume.as_deref() {
        None => None,
        Some("latest") => Some(
            run.latest_checkpoint()?
                .ok_or_else(|| AppError::Usage(format!("no checkpoint in {}", run.checkpoints().display())))?,
        ),
        Some(p) => Some(PathBuf::from(p)),
    };
    let opts = FitOptions {
        resume,
        write_samples: !args.no_samples,
        stop_after: None,
    };
    let outcome = run::fit(&cfg, a.to_image_set(cfg.image_size)?, b.to_image_set(cfg.image_size)?, &run, &opts)?;
    println!("trained to step {}; checkpoint {}", outcome.steps, outcome.final_checkpoint.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let snap = checkpoint::load(&args.checkpoint)?;
    let size = args.image_size.unwrap_or(snap.config.image_size);
    let embedder = evaluate::load_embedder(args.embedder.as_deref())?;
    let tests = TestSets::load(&args.data, size)?;
    let cfg = EvalConfig {
        eval_size: size,
        fid_iterations: args.fid_iterations,
        kid_iterations: args.kid_iterations,
        kid_subset: args.kid_subset,
        seed: args.seed,
    };
    let report = evaluate::evaluate_snapshot(&snap, &tests, &embedder, &cfg, &args.checkpoint.display().to_string())?;
    evaluate::write_report(&report, &args.out)?;
    print!("{}", evaluate::format_report(&report));
    Ok(())
}

fn ablate(args: &AblateArgs, manifest: &mut RunManifest) -> Result<()> {
    let base = args.cfg.resolve()?;
    *manifest = manifest.clone().with_config(&base)?;
    let (a, b) = data::load_split(&args.data, Split::Train)?;
    let eval_size = args.eval_size.unwrap_or(base.image_size);
    let suite = SuiteData {
        train_a: a.to_image_set(base.image_size)?,
        train_b: b.to_image_set(base.image_size)?,
        tests: Arc::new(TestSets::load(&args.data, eval_size)?),
    };
    let opts = SuiteOptions {
        seeds: args.seeds.clone(),
        jobs: args.jobs.max(1),
        eval: EvalConfig {
            eval_size,
            ..EvalConfig::default()
        },
        out_dir: args.out.clone(),
    };
    let outcome = if args.arch {
        ablation::run_arch_comparison(&base, &suite, &opts)?
    } else {
        ablation::run_ablation_suite(&base, &suite, &opts)?
    };
    print!("{}", outcome.report.format_table());
    let failed = outcome.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} run(s) failed; see runs.json");
    }
    Ok(())
}

fn gen_synth(args: &SynthArgs) -> Result<()> {
    let color = |v: &[u8], flag: &str| -> Result<[u8; 3]> {
        v.try_into().map_err(|_| AppError::Usage(format!("--{flag} takes R,G,B")))
    };
    let spec = SyntheticSpec {
        n_per_domain: args.n,
        n_test: args.n_test,
        image_size: args.size,
        fg_color_a: color(&args.color_a, "color-a")?,
        fg_color_b: color(&args.color_b, "color-b")?,
        bg_texture_seed: args.seed,
        ..SyntheticSpec::default()
    };
    data::make_synthetic(&spec, &args.out)?;
    println!(
        "wrote {} train and {} test images per domain to {}",
        spec.n_per_domain,
        spec.n_test,
        args.out.display()
    );
    Ok(())
}

fn out_dir(cmd: &Command) -> &Path {
    match cmd {
        Command::Train(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::Ablate(a) => &a.out,
        Command::GenSynth(a) => &a.out,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::GenSynth(_) => "gen-synth",
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let device = match device() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let mut manifest = RunManifest::start(
        name(&cli.command),
        args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        &device,
    );
    let result = match &cli.command {
        Command::Train(a) => train(a, &mut manifest),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a, &mut manifest),
        Command::GenSynth(a) => gen_synth(a),
    };
    let (code, message) = match &result {
        Ok(()) => (0, None),
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), Some(e.to_string()))
        }
    };
    manifest.finish(code, message);
    let dir = out_dir(&cli.command);
    if dir.is_dir() {
        if let Err(e) = manifest.write(dir) {
            eprintln!("error: could not write manifest: {e}");
            return if code == 0 { 1 } else { code };
        }
    }
    code
}
