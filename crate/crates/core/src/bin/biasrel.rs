use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use biasrel::config::{Analyses, RunConfig};
use biasrel::pipeline::run;
use biasrel::scoring::RuleKind;
use biasrel::synth::{synth_ensemble, write_ensemble, SynthSpec};

#[derive(Parser)]
#[command(name = "biasrel", version, about = "Reliability analysis of embedding-based gender-bias scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every (rule, pair, target, model) cell.
    Score(RunArgs),
    /// Test-retest reliability across seed models.
    Retest(RunArgs),
    /// Inter-rater consistency across scoring rules.
    Interrater(RunArgs),
    /// Internal consistency of queries and of the base-pair ensemble.
    Internal(RunArgs),
    /// Embedding stability after Procrustes alignment.
    Stability(RunArgs),
    /// Word-level feature table.
    Features(RunArgs),
    /// Mixed-model regression of reliability on word features.
    Regress(RunArgs),
    /// Write a synthetic seed ensemble as word2vec text files.
    Synth(SynthArgs),
    /// Every analysis enabled in the config.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated scoring rules, e.g. `dbwa,ripa`.
    #[arg(long, value_delimiter = ',')]
    rules: Option<Vec<RuleKind>>,
    #[arg(long)]
    nbm_k: Option<usize>,
    #[arg(long)]
    pair_budget: Option<usize>,
    /// Z-score rule columns before inter-rater ICC.
    #[arg(long)]
    zscore: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    #[arg(long)]
    rotate: bool,
    #[arg(long, default_value_t = 1.0)]
    gender_strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn only(f: impl FnOnce(&mut Analyses)) -> Analyses {
    let mut a = Analyses::none();
    f(&mut a);
    a
}

fn execute(args: RunArgs, analyses: Option<Analyses>) -> biasrel::Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = args.out {
        cfg.output_dir = std::env::current_dir().map(|d| d.join(&out)).unwrap_or(out);
    }
    if let Some(rules) = args.rules {
        cfg.rules.enabled = rules;
    }
    if let Some(k) = args.nbm_k {
        cfg.rules.nbm.k = k;
    }
    if let Some(b) = args.pair_budget {
        cfg.stability.pair_budget = Some(b);
    }
    if args.zscore {
        cfg.interrater.zscore = true;
    }
    if let Some(a) = analyses {
        cfg.analyses = a;
    }
    let outcome = run(&cfg)?;
    for w in &outcome.manifest.warnings {
        log::warn!("{w}");
    }
    for p in &outcome.written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => execute(a, Some(only(|x| x.scores = true))),
        Command::Retest(a) => execute(a, Some(only(|x| x.retest = true))),
        Command::Interrater(a) => execute(a, Some(only(|x| x.interrater = true))),
        Command::Internal(a) => execute(a, Some(only(|x| x.internal = true))),
        Command::Stability(a) => execute(a, Some(only(|x| x.stability = true))),
        Command::Features(a) => execute(a, Some(only(|x| x.features = true))),
        Command::Regress(a) => execute(a, Some(only(|x| x.regress = true))),
        Command::Run(a) => execute(a, None),
        Command::Synth(s) => {
            let spec = SynthSpec::new(s.vocab_size, s.dim, s.k, s.noise_sigma, s.rotate, s.gender_strength, s.seed);
            synth_ensemble(&spec, "synthetic", "synthetic")
                .and_then(|e| write_ensemble(&e, &s.out))
                .map(|paths| paths.iter().for_each(|p| println!("{}", p.display())))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
