use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hoisynth::corpus::Split;
use hoisynth::neural::Profile;
use hoisynth::pipeline::SynthMode;
use hoisynth::SceneType;
use hoisynth_cli::*;

#[derive(Parser)]
#[command(name = "hoisynth", version, about = "Text-driven indoor scene synthesis with human-aware refinement")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for values of the JSON run configuration.
#[derive(Args)]
struct Common {
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long, global = true, value_parser = parse_scene_type)]
    scene_type: Option<SceneType>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest) a training corpus.
    Datagen {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        data_seed: Option<u64>,
        #[arg(long)]
        test_fraction: Option<f64>,
        /// Ingest rooms from a 3D-FRONT directory instead of generating.
        #[arg(long)]
        front_dir: Option<PathBuf>,
    },
    /// Train the graph and layout denoisers.
    Train {
        #[arg(long)]
        graph_epochs: Option<usize>,
        #[arg(long)]
        layout_epochs: Option<usize>,
    },
    /// Synthesize one scene.
    Synth {
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<SynthMode>,
        /// Input scene for stylize, rearrange and complete.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        skip_optimize: bool,
        /// Output file stem inside the run directory.
        #[arg(long, default_value = "scene")]
        name: String,
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        obj: bool,
    },
    /// Score a corpus split.
    Eval {
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        limit: Option<usize>,
        /// Score the stored scenes instead of synthesizing from captions.
        #[arg(long)]
        ground_truth: bool,
        #[arg(long)]
        skip_optimize: bool,
    },
    /// Render a scene JSON file.
    Export {
        scene: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        obj: Option<PathBuf>,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: hoisynth::Error| e.to_string())
}

fn parse_scene_type(s: &str) -> Result<SceneType, String> {
    s.parse().map_err(|e: hoisynth::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<SynthMode, String> {
    s.parse().map_err(|e: hoisynth::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split '{s}'")),
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &common.corpus {
        cfg.corpus = v.clone();
    }
    if let Some(v) = &common.checkpoints {
        cfg.checkpoints = v.clone();
    }
    if let Some(v) = &common.catalog {
        cfg.catalog = Some(v.clone());
    }
    if let Some(v) = &common.output {
        cfg.output = v.clone();
    }
    if let Some(v) = common.profile {
        cfg.profile = v;
    }
    if let Some(v) = &common.scene_type {
        cfg.scene_type = v.clone();
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.beta {
        cfg.beta = v;
    }
    if common.sequential {
        cfg.parallel = false;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.common)?;
    match &cli.command {
        Command::Datagen { count, data_seed, test_fraction, .. } => {
            cfg.corpus_size = count.unwrap_or(cfg.corpus_size);
            cfg.data_seed = data_seed.unwrap_or(cfg.data_seed);
            cfg.test_fraction = test_fraction.unwrap_or(cfg.test_fraction);
        }
        Command::Train { graph_epochs, layout_epochs } => {
            cfg.graph_epochs = graph_epochs.or(cfg.graph_epochs);
            cfg.layout_epochs = layout_epochs.or(cfg.layout_epochs);
        }
        Command::Synth { mode, skip_optimize, .. } => {
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.skip_optimize |= skip_optimize;
        }
        Command::Eval { skip_optimize, .. } => cfg.skip_optimize |= skip_optimize,
        Command::Export { .. } => {}
    }
    cfg.validate()?;
    if !cfg.parallel {
        log::debug!("running sequentially");
    }
    match cli.command {
        Command::Datagen { front_dir, .. } => {
            let path = cmd_datagen(&cfg, front_dir.as_deref())?;
            println!("{}", path.display());
        }
        Command::Train { .. } => {
            let (g, l) = cmd_train(&cfg)?;
            println!("{}\n{}", g.display(), l.display());
        }
        Command::Synth { prompt, input, name, svg, obj, .. } => {
            let out = cmd_synth(&cfg, &SynthArgs { prompt, input, name, svg, obj })?;
            println!("{}", out.scene.display());
            for p in out.svg.iter().chain(&out.obj) {
                println!("{}", p.display());
            }
        }
        Command::Eval { split, limit, ground_truth, .. } => {
            let report = cmd_eval(&cfg, &EvalArgs { split, limit, ground_truth })?;
            print!("{}", report.to_table());
        }
        Command::Export { scene, svg, obj } => cmd_export(&cfg, &scene, svg.as_deref(), obj.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
