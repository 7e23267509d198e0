//! `ttfsnas` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ttfsnas::data::Split;
use ttfsnas::pipeline::{self, BaselineKind, Context, EvalReport, PipelineConfig, Preset, RunDir};
use ttfsnas::search::Domain;
use ttfsnas::space::Genome;
use ttfsnas::Error;

#[derive(Parser, Debug)]
#[command(name = "ttfsnas", version, about = "Architecture search and conversion for time-to-first-spike networks")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config overlaid on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,

    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Ann,
    Snn,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Ann => Domain::Ann,
            DomainArg::Snn => Domain::Snn,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
    Calib,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
            SplitArg::Calib => Split::Calib,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    RandomSearch,
    RandomSampling,
    Fixed3,
    Fixed5,
}

impl From<BaselineArg> for BaselineKind {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::RandomSearch => BaselineKind::RandomSearch,
            BaselineArg::RandomSampling => BaselineKind::RandomSampling,
            BaselineArg::Fixed3 => BaselineKind::Fixed3,
            BaselineArg::Fixed5 => BaselineKind::Fixed5,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the weight-sharing supernet by single-path uniform sampling.
    TrainSupernet,
    /// Evolutionary search over the trained supernet.
    Search {
        #[arg(long, value_enum, default_value_t = DomainArg::Ann)]
        domain: DomainArg,
    },
    /// Retrain a genome from scratch (default: the searched one).
    Retrain {
        #[arg(long)]
        genome: Option<String>,
        /// BN-free training mapped straight to an SNN.
        #[arg(long)]
        direct: bool,
    },
    /// Map an ANN checkpoint onto a TTFS network (BN is fused first).
    Transfer {
        #[arg(long, default_value = "ann")]
        checkpoint: String,
    },
    /// Fine-tune an SNN checkpoint.
    FinetuneSnn {
        #[arg(long, default_value = "snn")]
        checkpoint: String,
    },
    /// Quantize weights and spike times of an SNN checkpoint.
    Quantize {
        #[arg(long, default_value = "snn")]
        checkpoint: String,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
    },
    /// Comparison baselines.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineArg,
    },
    /// Aggregate search curves and evaluations into CSV tables.
    Report,
    /// Supernet, search, retrain, transfer, fine-tune and the quantized branch.
    Run {
        #[arg(long, value_enum, default_value_t = DomainArg::Ann)]
        domain: DomainArg,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Genome(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn load_config(g: &Global) -> ttfsnas::Result<PipelineConfig> {
    let preset = match g.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    };
    let mut cfg = PipelineConfig::load(preset, g.config.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_eval(r: &EvalReport) {
    println!(
        "{} [{}] on {} ({} samples): WAR {:.4}  UAR {:.4}  fitness {:.4}",
        r.name, r.kind, r.split, r.samples, r.war, r.uar, r.fitness
    );
    println!("  params {}  FLOPs {}", r.params, r.flops);
    if let (Some(mean), Some(max), Some(syn)) = (r.synops_mean, r.synops_max, r.synapses) {
        println!("  SynOps mean {mean:.0}  max {max}  synapses {syn}");
    }
    if let Some(early) = r.early_firings.filter(|&e| e > 0) {
        println!("  early firings {early}");
    }
}

fn existing(ctx: &Context, name: &str) -> ttfsnas::Result<PathBuf> {
    let p = ctx.resolve(name);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingArtifact(p))
    }
}

fn run(cli: Cli) -> ttfsnas::Result<()> {
    if let Command::Report = cli.command {
        let run = RunDir::open(&cli.global.out)?;
        for p in pipeline::report(&run)? {
            println!("wrote {}", p.display());
        }
        return Ok(());
    }
    let cfg = load_config(&cli.global)?;
    let ctx = Context::open(cfg, &cli.global.out)?;
    match cli.command {
        Command::TrainSupernet => {
            pipeline::train_supernet(&ctx)?;
            println!("wrote {}", ctx.run.checkpoint("supernet").display());
        }
        Command::Search { domain } => {
            let r = pipeline::search(&ctx, domain.into())?;
            println!(
                "best genome {} (WAR {:.4}, UAR {:.4}, fitness {:.4}) after {} evaluations",
                r.best.genome,
                r.best.scores.war,
                r.best.scores.uar,
                r.best.fitness(),
                r.evaluations
            );
        }
        Command::Retrain { genome, direct } => {
            let genome: Genome = match genome {
                Some(g) => g.parse()?,
                None => pipeline::searched_genome(&ctx)?,
            };
            if direct {
                pipeline::train_direct(&ctx, &genome)?;
                println!("wrote {}", ctx.run.checkpoint("snn_direct").display());
            } else {
                pipeline::retrain(&ctx, &genome)?;
                println!("wrote {}", ctx.run.checkpoint("ann").display());
            }
        }
        Command::Transfer { checkpoint } => {
            pipeline::transfer(&ctx, &existing(&ctx, &checkpoint)?)?;
            println!("wrote {}", ctx.run.checkpoint("snn").display());
        }
        Command::FinetuneSnn { checkpoint } => {
            let (_, name) = pipeline::finetune_snn(&ctx, &existing(&ctx, &checkpoint)?)?;
            println!("wrote {}", ctx.run.checkpoint(&name).display());
        }
        Command::Quantize { checkpoint } => {
            let path = existing(&ctx, &checkpoint)?;
            pipeline::quantize(&ctx, &path)?;
            println!("wrote {}", ctx.run.checkpoint(&format!("{}_quant", stem(&path))).display());
        }
        Command::Eval { checkpoint, split } => {
            print_eval(&pipeline::eval(&ctx, &existing(&ctx, &checkpoint)?, split.into())?);
        }
        Command::Baseline { kind } => {
            let r = pipeline::baseline(&ctx, kind.into())?;
            println!(
                "{} run(s): mean WAR {:.4}, mean UAR {:.4}; best {} (fitness {:.4})",
                r.runs.len(),
                r.mean_war,
                r.mean_uar,
                r.best.genome,
                r.best.fitness()
            );
        }
        Command::Run { domain } => {
            let r = pipeline::run_all(&ctx, domain.into())?;
            println!("searched genome {} (supernet fitness {:.4})", r.genome, r.search_fitness);
            for s in &r.stages {
                print_eval(s);
            }
        }
        Command::Report => unreachable!("handled above"),
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
