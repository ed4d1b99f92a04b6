use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hetrel::episodic::OptimizerKind;
use hetrel::model::Variant;
use hetrel::scenarios::{Preset, Scenario};

#[derive(Debug, Parser)]
#[command(name = "hetrel", version, about = "Few-shot semantic relation prediction across heterogeneous graphs")]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Pretrain object embeddings into a cache directory.
    Embed(EmbedArgs),
    /// Extract subgraph samples of every labeled pair into a cache file.
    Extract(ExtractArgs),
    /// Meta-train and meta-test one or more seeds.
    Train(TrainArgs),
    /// Re-evaluate saved checkpoints.
    Eval(EvalArgs),
    /// Train every model variant over the given seeds.
    Ablate(AblateArgs),
    /// Aggregate run reports into summary tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator config (JSON); flags override it.
    #[arg(long)]
    pub gen_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub graphs: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub object_types: Option<usize>,
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub shared_types: bool,
    /// Prefix of graph ids; corpora used together need distinct ones.
    #[arg(long)]
    pub id_prefix: Option<String>,
    #[arg(long)]
    pub print_config: bool,
}

/// Run configuration layers: preset, then `--config`, then `--set`, then
/// the named flags.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = PresetArg::Standard)]
    pub preset: PresetArg,
    /// JSON file merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value` override (value parsed as JSON, else string).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub sets: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,

    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub val_episodes: Option<usize>,
    #[arg(long)]
    pub test_episodes: Option<usize>,
    #[arg(long)]
    pub val_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub n_rel: Option<usize>,
    #[arg(long)]
    pub k_spt: Option<usize>,
    #[arg(long)]
    pub k_qry: Option<usize>,

    #[arg(long)]
    pub k_path: Option<usize>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long)]
    pub n_type_min: Option<usize>,
    /// Also sets the model's rank slots.
    #[arg(long)]
    pub n_type_max: Option<usize>,
    /// Subgraphs per type count.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub extract_seed: Option<u64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub walks: Option<usize>,
    #[arg(long)]
    pub embed_seed: Option<u64>,

    /// Width of every hidden layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub theta_ho: Option<f64>,
    #[arg(long)]
    pub theta_he: Option<f64>,
    #[arg(long)]
    pub hyper_layers: Option<usize>,
    #[arg(long)]
    pub rank_episodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum PresetArg {
    #[default]
    Standard,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Standard => Preset::Standard,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub cache_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding cache directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant, default_value = "full")]
    pub variant: Variant,
    /// Extraction seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Where the graphs and splits of a run come from.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, required_unless_present = "spec")]
    pub corpus: Option<PathBuf>,
    /// Corpus whose graphs replace the test split.
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    /// Scenario file naming corpus, scenario, seeds and variants.
    #[arg(long, conflicts_with_all = ["corpus", "test_corpus"])]
    pub spec: Option<PathBuf>,
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<Scenario>,
    /// Seeds as `0-9`, `1,4,7` or a mix.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Seeds>,
    /// Seed of the relation shuffle of the single-graph scenario.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Embedding cache directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Pair cache written by `extract`.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub runs: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub runs: PathBuf,
    /// Output directory; defaults to the runs directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

pub fn parse_seeds(text: &str) -> Result<Seeds, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|e| format!("bad seed `{a}`: {e}"))?;
                let b: u64 = b.trim().parse().map_err(|e| format!("bad seed `{b}`: {e}"))?;
                if b < a {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|e| format!("bad seed `{part}`: {e}"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    out.retain(|s| seen.insert(*s));
    Ok(Seeds(out))
}

fn parse_variant(text: &str) -> Result<Variant, String> {
    text.parse()
}

fn parse_scenario(text: &str) -> Result<Scenario, String> {
    text.parse()
}
