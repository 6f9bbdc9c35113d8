use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rcguide::lisa::DEFAULT_LAMBDA;
use rcguide::pipeline::{summarize, write_lisa_plan, BackendKind, Manifest, Pipeline, PipelineConfig};

/// Exit code for bad input, configuration or missing artifacts.
const EXIT_INPUT: u8 = 1;
/// Exit code for backend failures, including per-instance failures recorded in manifests.
const EXIT_BACKEND: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "rcguide", version, about = "Error-guided data remediation and curriculum planning for relation classification")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the backend kind for both teacher and student.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Fixed loss threshold instead of mean + one standard deviation.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    no_guidance: bool,
    #[arg(long, global = true)]
    no_remediation: bool,
    #[arg(long, global = true)]
    no_kg: bool,
    /// Log verbosity; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split the training corpus into D_error and D_correct by loss.
    Select,
    /// Classify the error types of D_error.
    Analyze,
    /// Remediate, assemble and verify D_error into D_rem.
    Remediate,
    /// Build D_mimic, the few-shot block and the instruction-tuning file.
    Mimic,
    /// Annotate the full corpus with the student backend into D_aug.
    Annotate,
    /// Bucket D_aug and emit the curriculum training plan.
    Curriculum,
    /// Run every phase in order.
    RunAll,
    /// Summarise an output directory.
    Report,
    /// Select layers from an importance file and write the regulariser plan.
    LisaPlan(LisaArgs),
}

#[derive(Args, Debug)]
struct LisaArgs {
    /// `layer_index<TAB>score` file; defaults to the config's LISA settings.
    #[arg(long)]
    importance: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Output path; defaults to `<output_dir>/lisa_plan.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<PipelineConfig> {
    let Some(path) = &global.config else {
        bail!("--config is required for this command");
    };
    let mut config = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(tau) = global.tau {
        config.tau = Some(tau);
    }
    if let Some(dir) = &global.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(kind) = global.backend {
        let kind = match kind {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Remote => BackendKind::Remote,
        };
        config.backend.kind = kind;
        if let Some(student) = &mut config.student_backend {
            student.kind = kind;
        }
    }
    config.ablation.enable_guidance &= !global.no_guidance;
    config.ablation.enable_remediation &= !global.no_remediation;
    config.ablation.enable_kg &= !global.no_kg;
    Ok(config)
}

fn print_manifest(m: &Manifest) {
    let counts: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{:<11} {}", m.phase, counts.join(" "));
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let manifests = match cli.command {
        Command::Report => {
            let dir = match &cli.global.output_dir {
                Some(dir) => dir.clone(),
                None => load_config(&cli.global)?.output_dir,
            };
            print!("{}", summarize(&dir)?);
            return Ok(0);
        }
        Command::LisaPlan(args) => {
            let config = match &cli.global.config {
                Some(_) => Some(load_config(&cli.global)?),
                None => None,
            };
            let settings = config.as_ref().and_then(|c| c.lisa.clone());
            let importance = args
                .importance
                .or_else(|| settings.as_ref().map(|s| s.importance.clone()))
                .context("--importance is required without a config that sets `lisa`")?;
            let k = args.k.or(settings.as_ref().map(|s| s.k)).unwrap_or(8);
            let lambda = args.lambda.or(settings.as_ref().map(|s| s.lambda)).unwrap_or(DEFAULT_LAMBDA);
            let out = match (args.out, &cli.global.output_dir, &config) {
                (Some(out), _, _) => out,
                (None, Some(dir), _) => dir.join("lisa_plan.json"),
                (None, None, Some(c)) => c.output_dir.join("lisa_plan.json"),
                (None, None, None) => PathBuf::from("lisa_plan.json"),
            };
            let plan = write_lisa_plan(&importance, k, lambda, &out)?;
            println!("selected layers {:?} -> {}", plan.selected, out.display());
            return Ok(0);
        }
        Command::RunAll => Pipeline::new(load_config(&cli.global)?)?.run_all()?,
        ref phase => {
            let name = match phase {
                Command::Select => "select",
                Command::Analyze => "analyze",
                Command::Remediate => "remediate",
                Command::Mimic => "mimic",
                Command::Annotate => "annotate",
                _ => "curriculum",
            };
            vec![Pipeline::new(load_config(&cli.global)?)?.run_phase(name)?]
        }
    };
    for m in &manifests {
        print_manifest(m);
    }
    let hard: usize = manifests.iter().map(|m| m.hard_failures).sum();
    if hard > 0 {
        log::error!("{hard} instances failed at the backend; artifacts were written without them");
        return Ok(EXIT_BACKEND);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let backend = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<rcguide::Error>(), Some(rcguide::Error::Backend(_))));
            ExitCode::from(if backend { EXIT_BACKEND } else { EXIT_INPUT })
        }
    }
}
