//! `hago`: batch pipelines over multi-domain interaction data.

mod analyze;
mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use hago::config::RunConfig;
use hago::coordinator::CoordinatorMode;
use hago::pipeline::Variant;
use hago::transfer::TransferScope;

use rundir::{CliError, CliResult, RunDir};

#[derive(Parser, Debug)]
#[command(
    name = "hago",
    version,
    about = "Multi-domain graph recommendation with adaptive graph coordinators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse per-domain interaction files into a dataset directory.
    Ingest(IngestArgs),
    /// Contrastive pre-training over the unified graph.
    Pretrain(StageArgs),
    /// Prompt transfer to the target domain.
    Transfer(StageArgs),
    /// Full-ranking evaluation of the transferred model.
    Evaluate(StageArgs),
    /// Pipeline runs per (variant, coordinator count, seed) with a summary table.
    Ablate(AblateArgs),
    /// Generate a synthetic multi-domain dataset as TSV files.
    Synth(SynthArgs),
    /// Embedding analyses on a checkpoint.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Domain name; pair each with an --input, in order.
    #[arg(long = "domain")]
    domains: Vec<String>,
    /// Interaction file (TSV, or CSV by extension).
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Mark the target domain: `--target NAME`, or bare after the domain it applies to.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    target: Option<String>,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Run directory (falls back to `out` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run config; defaults to <out>/config.json when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<CoordinatorMode>,
    /// Coordinators per type per domain.
    #[arg(short = 'n', long)]
    pub coordinators: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Layer weights, comma separated (L + 1 values).
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ranking cutoff.
    #[arg(short = 'k', long = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_lr: Option<f64>,
    #[arg(long)]
    pub pretrain_batch: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub transfer_epochs: Option<usize>,
    #[arg(long)]
    pub transfer_lr: Option<f64>,
    #[arg(long)]
    pub transfer_batch: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Fine-tune the pre-trained tables along with the prompts.
    #[arg(long)]
    pub no_freeze: bool,
    #[arg(long, value_parser = parse_scope)]
    pub scope: Option<TransferScope>,
}

#[derive(Args, Debug)]
struct StageArgs {
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Variants: backbone, none, homogo, hetergo, hago.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant,
          default_value = "backbone,none,homogo,hetergo,hago")]
    modes: Vec<Variant>,
    /// Seeds; defaults to the config seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Coordinator counts to sweep; defaults to the config value.
    #[arg(long, value_delimiter = ',')]
    ns: Vec<usize>,
    /// Run the grid in parallel.
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for `<domain>.tsv` files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    users: usize,
    /// Items per domain.
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 2)]
    sources: usize,
    #[arg(long, default_value_t = 0.1)]
    source_density: f64,
    #[arg(long, default_value_t = 0.03)]
    target_density: f64,
    #[arg(long, default_value_t = 5.0)]
    signal: f64,
    /// Pair noise scale; `inf` makes interactions independent of the factors.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(subcommand)]
    kind: AnalyzeKind,
}

#[derive(Subcommand, Debug)]
enum AnalyzeKind {
    /// Nearest items of another domain by cosine similarity.
    Neighbors(analyze::NeighborArgs),
    /// Per-domain angle histograms on the principal plane.
    Angles(analyze::AngleArgs),
}

fn parse_mode(s: &str) -> Result<CoordinatorMode, String> {
    CoordinatorMode::parse(s).ok_or_else(|| format!("unknown mode `{s}` (none, homogo, hetergo, hago)"))
}

fn parse_scope(s: &str) -> Result<TransferScope, String> {
    match s {
        "target_only" | "target" => Ok(TransferScope::TargetOnly),
        "unified" => Ok(TransferScope::Unified),
        _ => Err(format!("unknown scope `{s}` (target_only, unified)")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant `{s}` (backbone, none, homogo, hetergo, hago)"))
}

impl Overrides {
    /// Base config (explicit file, else the run directory's, else defaults)
    /// with flags applied.
    pub fn resolve(&self) -> CliResult<(RunConfig, RunDir)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => match &self.out {
                Some(out) if RunDir::new(out).config().exists() => RunConfig::load(&RunDir::new(out).config())?,
                _ => RunConfig::default(),
            },
        };
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.coordinators {
            cfg.coordinators = v;
        }
        if let Some(v) = self.dim {
            cfg.model.dim = v;
        }
        if let Some(v) = self.layers {
            cfg.model.layers = v;
            if self.alpha.is_none() {
                // keep the last-layer-only readout at the new depth
                cfg.model.alpha = (0..=v).map(|l| if l == v { 1.0 } else { 0.0 }).collect();
            }
        }
        if let Some(v) = &self.alpha {
            cfg.model.alpha = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.pretrain_epochs {
            cfg.pretrain.epochs = v;
        }
        if let Some(v) = self.pretrain_lr {
            cfg.pretrain.lr = v;
        }
        if let Some(v) = self.pretrain_batch {
            cfg.pretrain.batch_size = v;
        }
        if let Some(v) = self.tau {
            cfg.pretrain.tau = v;
        }
        if let Some(v) = self.transfer_epochs {
            cfg.transfer.epochs = v;
        }
        if let Some(v) = self.transfer_lr {
            cfg.transfer.lr = v;
        }
        if let Some(v) = self.transfer_batch {
            cfg.transfer.batch_size = v;
        }
        if let Some(v) = self.l2 {
            cfg.transfer.l2 = v;
        }
        if self.no_freeze {
            cfg.transfer.freeze = false;
        }
        if let Some(v) = self.scope {
            cfg.transfer.scope = v;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        let out = cfg
            .out
            .clone()
            .ok_or_else(|| CliError::input("no run directory: pass --out or set `out` in the config"))?;
        cfg.validate()?;
        Ok((cfg, RunDir::new(&out)))
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HAGO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("HAGO_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("cannot size the thread pool: {e}")))
}

/// The domain named by a bare `--target`: the last `--domain` before it.
fn bare_target(matches: &ArgMatches, domains: &[String]) -> Option<String> {
    let sub = matches.subcommand_matches("ingest")?;
    let at = sub.indices_of("target")?.next()?;
    let idx: Vec<usize> = sub.indices_of("domains")?.collect();
    idx.iter().rposition(|&i| i < at).map(|k| domains[k].clone())
}

fn run(matches: &ArgMatches, cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Ingest(a) => {
            let target = match a.target.as_deref() {
                Some("") => Some(
                    bare_target(matches, &a.domains)
                        .ok_or_else(|| CliError::input("bare --target must follow the --domain it marks"))?,
                ),
                other => other.map(str::to_string),
            };
            commands::ingest(&a.domains, &a.inputs, target, &a.common)
        }
        Command::Pretrain(a) => commands::pretrain(&a.common),
        Command::Transfer(a) => commands::transfer(&a.common),
        Command::Evaluate(a) => commands::evaluate(&a.common),
        Command::Ablate(a) => commands::ablate(&a.modes, &a.seeds, &a.ns, a.parallel, &a.common),
        Command::Synth(a) => commands::synth(
            &hago::synth::SynthParams {
                users: a.users,
                items: a.items,
                rank: a.rank,
                sources: a.sources,
                source_density: a.source_density,
                target_density: a.target_density,
                signal: a.signal,
                noise: a.noise,
                seed: a.seed,
            },
            &a.out,
        ),
        Command::Analyze(a) => match a.kind {
            AnalyzeKind::Neighbors(n) => analyze::neighbors(&n),
            AnalyzeKind::Angles(g) => analyze::angles(&g),
        },
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&matches, cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_parsers() {
        assert_eq!(parse_mode("HAGO"), Ok(CoordinatorMode::Hago));
        assert!(parse_mode("hag").is_err());
        assert_eq!(parse_scope("unified"), Ok(TransferScope::Unified));
        assert_eq!(parse_variant("backbone"), Ok(Variant::Backbone));
    }

    #[test]
    fn layer_override_moves_readout_to_last_layer() {
        let ov = Overrides {
            out: Some("run".into()),
            layers: Some(3),
            ..Overrides::default()
        };
        let (cfg, _) = ov.resolve().unwrap();
        assert_eq!(cfg.model.alpha, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn run_directory_is_required() {
        assert_eq!(
            Overrides::default().resolve().err().map(|e| e.code),
            Some(rundir::EXIT_INPUT)
        );
    }
}
