//! Command-line driver. Each subcommand reads an optional `key =
//! value` settings file, overlays its flags, and writes artifacts plus
//! a `summary.json` stamped with the resolved config hash and seed so
//! runs can be compared and reproduced.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::Serialize;
use serde_json::json;

use crate::agent::{
    PolicyConfig, PolicyModel, ReinforceOptions, RewardKind,
};
use crate::config::{parse_strategy, parse_variant, predictor_from_map, ConfigMap};
use crate::error::{Error, Result};
use crate::eval::{evaluate_minerva, evaluate_predictor, ContextSource, EvalOptions, Strategy};
use crate::kg::{load_dataset, Dataset, Split};
use crate::predictor::{PredictorModel, PretrainOptions, Variant};
use crate::sampler::{dump_chains, sample_pretraining_set, ChainFormat, KPolicy};
use crate::synth::{generate_synthetic_kg, SynthOptions};
use crate::TrainRng;

#[derive(Parser)]
#[command(
    name = "pathlp",
    version,
    about = "Path-contextualized knowledge-graph completion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a triple dataset, add inverses, and write the vocabulary manifest
    Prepare(PrepareArgs),
    /// Train the masked-entity predictor on sampled walks
    Pretrain(PretrainArgs),
    /// Train the path-search policy with REINFORCE
    TrainRl(TrainRlArgs),
    /// Filtered ranking over the test split
    Evaluate(EvaluateArgs),
    /// Generate a synthetic two-hop composition KG
    Synth(SynthArgs),
    /// Dump sampled context chains as token-id lines
    SamplePaths(SamplePathsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Settings file of key=value lines; flags override file entries
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory receiving artifacts and metrics
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Seed for every stochastic stage
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory with train.txt / valid.txt / test.txt
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Predictor flavor: coke (relations only) or interent
    #[arg(long)]
    variant: Option<String>,
    /// Training passes over the resampled chain set
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fresh chains drawn per train triple each epoch
    #[arg(long)]
    chains_per_triple: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Context walk length for interent chains
    #[arg(long = "N")]
    steps: Option<usize>,
}

#[derive(Args)]
struct TrainRlArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Episode payoff: answer (reach the head) or predictor (its
    /// probability of the head given the walked path)
    #[arg(long)]
    reward: Option<String>,
    /// Frozen predictor checkpoint; required for the predictor reward
    #[arg(long, value_name = "FILE")]
    predictor: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sampled episodes per query per update
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Walk length of every episode
    #[arg(long = "N")]
    steps: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Context source: sampling, minerva, rl, or answer-search
    #[arg(long)]
    strategy: Option<String>,
    /// Predictor checkpoint (all strategies except answer-search)
    #[arg(long, value_name = "FILE")]
    predictor: Option<PathBuf>,
    /// Policy checkpoint (minerva, rl and answer-search)
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    /// Context walk length
    #[arg(long = "N")]
    steps: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Hits@k cutoffs, comma-separated
    #[arg(long = "k")]
    hits_at: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    entities: Option<usize>,
    /// Facts of the composed query relation
    #[arg(long)]
    rule_facts: Option<usize>,
    #[arg(long)]
    noise_relations: Option<usize>,
    #[arg(long)]
    noise_facts: Option<usize>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args)]
struct SamplePathsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Chain layout: interent (fixed length) or relonly (mixed 1..N)
    #[arg(long)]
    format: Option<String>,
    /// Walk length; relonly mixes lengths 1..=N
    #[arg(long = "N")]
    steps: Option<usize>,
    /// Chains per train triple
    #[arg(long)]
    count: Option<usize>,
}

pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            1
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(args) => prepare(args),
        Command::Pretrain(args) => pretrain(args),
        Command::TrainRl(args) => train_rl(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Synth(args) => synth(args),
        Command::SamplePaths(args) => sample_paths(args),
    }
}

/// File settings first, then flags; `overrides` carries each flag that
/// was actually given.
fn resolve(common: &CommonArgs, overrides: &[(&str, Option<String>)]) -> Result<ConfigMap> {
    let mut map = match &common.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::new(),
    };
    if let Some(seed) = common.seed {
        map.set("seed", seed);
    }
    for (key, value) in overrides {
        if let Some(value) = value {
            map.set(key, value);
        }
    }
    Ok(map)
}

fn opt_string<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn opt_path(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn out_dir(common: &CommonArgs) -> Result<&Path> {
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok(&common.out)
}

fn data_dir(map: &ConfigMap) -> Result<PathBuf> {
    Ok(PathBuf::from(map.require("data_dir")?))
}

fn load_data(map: &ConfigMap) -> Result<Dataset> {
    load_dataset(&data_dir(map)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    write_text(path, &format!("{body}\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut body = String::new();
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
        body.push_str(&line);
        body.push('\n');
    }
    write_text(path, &body)
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let map = resolve(&args.common, &[("data_dir", opt_path(&args.data))])?;
    let out = out_dir(&args.common)?;
    let data = load_data(&map)?;

    write_text(&out.join("vocab.tsv"), &data.vocab.manifest())?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "entities": data.vocab.entity_count(),
            "relations": data.vocab.relation_count(),
            "tokens": data.vocab.total_size(),
            "vocab_hash": data.vocab.hash(),
            "train": data.store.split(Split::Train).len(),
            "valid": data.store.split(Split::Valid).len(),
            "test": data.store.split(Split::Test).len(),
            "config_hash": map.hash(),
        }),
    )?;
    println!(
        "prepared {} entities, {} relations, {} augmented train triples",
        data.vocab.entity_count(),
        data.vocab.relation_count(),
        data.store.split(Split::Train).len()
    );
    Ok(())
}

fn pretrain(args: PretrainArgs) -> Result<()> {
    let map = resolve(
        &args.common,
        &[
            ("data_dir", opt_path(&args.data)),
            ("variant", args.variant.clone()),
            ("epochs", opt_string(&args.epochs)),
            ("batch_size", opt_string(&args.batch_size)),
            ("chains_per_triple", opt_string(&args.chains_per_triple)),
            ("lr", opt_string(&args.lr)),
            ("steps", opt_string(&args.steps)),
        ],
    )?;
    let out = out_dir(&args.common)?;
    let data = load_data(&map)?;
    let config = predictor_from_map(&map)?;

    let k_policy = match config.variant {
        Variant::InterEnt => KPolicy::Fixed(config.context_length),
        Variant::CoKE => KPolicy::UniformMix {
            min: map.usize_or("k_min", 1)?,
            max: map.usize_or("k_max", 5)?,
        },
    };
    let opts = PretrainOptions {
        epochs: map.usize_or("epochs", 20)?,
        batch_size: map.usize_or("batch_size", 32)?,
        chains_per_triple: map.usize_or("chains_per_triple", 2)?,
        k_policy,
        optimizer: crate::diff::Optimizer::adam(map.f64_or("lr", 1e-3)?),
        seed: map.u64_or("seed", 17)?,
    };

    let mut rng = TrainRng::seed_from_u64(opts.seed);
    let mut model = PredictorModel::new(config, &data.vocab, &mut rng)?;
    let curve = model.pretrain(
        &data.vocab,
        &data.adjacency,
        data.store.split(Split::Train),
        &opts,
        |_, _| Ok(()),
    )?;

    let ckpt = out.join("predictor.ckpt");
    model.save(&ckpt)?;
    write_jsonl(&out.join("pretrain_curve.jsonl"), &curve)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "epochs": opts.epochs,
            "updates": curve.len(),
            "final_loss": curve.last().map(|p| p.loss),
            "vocab_hash": model.vocab_hash,
            "config_hash": map.hash(),
            "seed": opts.seed,
        }),
    )?;
    println!(
        "pretrained {:?} predictor for {} updates, checkpoint at {}",
        model.config.variant,
        curve.len(),
        ckpt.display()
    );
    Ok(())
}

fn train_rl(args: TrainRlArgs) -> Result<()> {
    let map = resolve(
        &args.common,
        &[
            ("data_dir", opt_path(&args.data)),
            ("reward", args.reward.clone()),
            ("predictor", opt_path(&args.predictor)),
            ("rl_epochs", opt_string(&args.epochs)),
            ("rl_batch_size", opt_string(&args.batch_size)),
            ("rollouts", opt_string(&args.rollouts)),
            ("rl_lr", opt_string(&args.lr)),
            ("steps", opt_string(&args.steps)),
        ],
    )?;
    let out = out_dir(&args.common)?;
    let data = load_data(&map)?;
    let vocab_hash = data.vocab.hash();

    let predictor = match map.get("predictor") {
        Some(path) => Some(PredictorModel::load(
            Path::new(path),
            Some(&vocab_hash),
        )?),
        None => None,
    };
    let reward_name = map.str_or("reward", "answer");
    let reward = match (reward_name, &predictor) {
        ("answer", _) => RewardKind::AnswerSearch,
        ("predictor", Some(model)) => RewardKind::Predictor(model),
        ("predictor", None) => {
            return Err(Error::Argument(
                "the predictor reward needs --predictor <checkpoint>".into(),
            ))
        }
        (other, _) => {
            return Err(Error::Config(format!(
                "reward must be answer or predictor, got {other:?}"
            )))
        }
    };

    let steps = map.usize_or("steps", 2)?;
    let config = PolicyConfig {
        d: map.usize_or("policy_d", 16)?,
        hidden: map.usize_or("policy_hidden", 32)?,
        mlp_hidden: map.usize_or("policy_mlp_hidden", 32)?,
        max_actions: map.usize_or("max_actions", 200)?,
    };
    let base = ReinforceOptions::desk(steps);
    let opts = ReinforceOptions {
        epochs: map.usize_or("rl_epochs", base.epochs)?,
        batch_size: map.usize_or("rl_batch_size", base.batch_size)?,
        rollouts: map.usize_or("rollouts", base.rollouts)?,
        steps,
        optimizer: crate::diff::Optimizer::adam(map.f64_or("rl_lr", 1e-2)?),
        baseline_decay: map.f64_or("baseline_decay", base.baseline_decay)?,
        entropy_weight: map.f64_or("entropy_weight", base.entropy_weight)?,
        entropy_decay: map.f64_or("entropy_decay", base.entropy_decay)?,
        seed: map.u64_or("seed", base.seed)?,
    };

    let mut rng = TrainRng::seed_from_u64(opts.seed);
    let mut policy = PolicyModel::new(config, &data.vocab, &mut rng)?;
    let queries = data.store.split(Split::Train);
    let curve = policy.train_reinforce(&data.vocab, &data.adjacency, queries, &reward, &opts)?;

    let ckpt = out.join("policy.ckpt");
    policy.save(&ckpt)?;
    write_jsonl(&out.join("rl_curve.jsonl"), &curve)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "reward": reward_name,
            "epochs": opts.epochs,
            "queries": queries.len(),
            "final_mean_reward": curve.last().map(|p| p.mean_reward),
            "vocab_hash": vocab_hash,
            "config_hash": map.hash(),
            "seed": opts.seed,
        }),
    )?;
    println!(
        "trained policy on {} queries with the {} reward, checkpoint at {}",
        queries.len(),
        reward_name,
        ckpt.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let map = resolve(
        &args.common,
        &[
            ("data_dir", opt_path(&args.data)),
            ("strategy", args.strategy.clone()),
            ("predictor", opt_path(&args.predictor)),
            ("policy", opt_path(&args.policy)),
            ("steps", opt_string(&args.steps)),
            ("beam_width", opt_string(&args.beam_width)),
            ("hits_at", args.hits_at.clone()),
        ],
    )?;
    let out = out_dir(&args.common)?;
    let data = load_data(&map)?;
    let vocab_hash = data.vocab.hash();
    let strategy = parse_strategy(map.str_or("strategy", "sampling"))?;

    let base = EvalOptions::desk(map.usize_or("steps", 2)?);
    let opts = EvalOptions {
        steps: base.steps,
        beam_width: map.usize_or("beam_width", base.beam_width)?,
        hits_at: map.usize_list_or("hits_at", &base.hits_at)?,
        seed: map.u64_or("seed", base.seed)?,
    };

    let load_policy = || -> Result<PolicyModel> {
        let path = map.require("policy").map_err(|_| {
            Error::Argument(format!(
                "strategy {} needs --policy <checkpoint>",
                strategy.as_str()
            ))
        })?;
        PolicyModel::load(Path::new(path), Some(&vocab_hash))
    };
    let load_predictor = || -> Result<PredictorModel> {
        let path = map.require("predictor").map_err(|_| {
            Error::Argument(format!(
                "strategy {} needs --predictor <checkpoint>",
                strategy.as_str()
            ))
        })?;
        PredictorModel::load(Path::new(path), Some(&vocab_hash))
    };

    let (metrics, results) = match strategy {
        Strategy::Sampling => {
            let predictor = load_predictor()?;
            evaluate_predictor(&predictor, &ContextSource::Sampling, &data, &opts)?
        }
        Strategy::Minerva => {
            let predictor = load_predictor()?;
            let policy = load_policy()?;
            evaluate_predictor(&predictor, &ContextSource::Minerva(&policy), &data, &opts)?
        }
        Strategy::Rl => {
            let predictor = load_predictor()?;
            let policy = load_policy()?;
            evaluate_predictor(&predictor, &ContextSource::Rl(&policy), &data, &opts)?
        }
        Strategy::AnswerSearch => {
            let policy = load_policy()?;
            evaluate_minerva(&policy, &data, &opts)?
        }
    };

    let records: Vec<_> = results.iter().map(|r| r.to_line(&data.vocab)).collect();
    write_jsonl(&out.join("records.jsonl"), &records)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "strategy": strategy.as_str(),
            "queries": metrics.queries,
            "mrr": metrics.mrr,
            "hits": metrics.hits,
            "vocab_hash": vocab_hash,
            "config_hash": map.hash(),
            "seed": opts.seed,
        }),
    )?;
    println!(
        "{}: {} queries, MRR {:.4}",
        strategy.as_str(),
        metrics.queries,
        metrics.mrr
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let map = resolve(
        &args.common,
        &[
            ("entities", opt_string(&args.entities)),
            ("rule_facts", opt_string(&args.rule_facts)),
            ("noise_relations", opt_string(&args.noise_relations)),
            ("noise_facts", opt_string(&args.noise_facts)),
            ("valid_fraction", opt_string(&args.valid_fraction)),
            ("test_fraction", opt_string(&args.test_fraction)),
        ],
    )?;
    let out = out_dir(&args.common)?;

    let entities = map.usize_or("entities", 200)?;
    let rule_facts = map.usize_or("rule_facts", entities)?;
    let seed = map.u64_or("seed", 17)?;
    let base = SynthOptions::desk(entities, rule_facts, seed);
    let opts = SynthOptions {
        entities,
        rule_facts,
        noise_relations: map.usize_or("noise_relations", base.noise_relations)?,
        noise_facts: map.usize_or("noise_facts", base.noise_facts)?,
        valid_fraction: map.f64_or("valid_fraction", base.valid_fraction)?,
        test_fraction: map.f64_or("test_fraction", base.test_fraction)?,
        seed,
    };
    let summary = generate_synthetic_kg(out, &opts)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "entities": summary.entities,
            "train": summary.train,
            "valid": summary.valid,
            "test": summary.test,
            "config_hash": map.hash(),
            "seed": seed,
        }),
    )?;
    println!(
        "synthesized KG: {} entities, {}/{}/{} train/valid/test facts",
        summary.entities, summary.train, summary.valid, summary.test
    );
    Ok(())
}

fn sample_paths(args: SamplePathsArgs) -> Result<()> {
    let map = resolve(
        &args.common,
        &[
            ("data_dir", opt_path(&args.data)),
            ("format", args.format.clone()),
            ("steps", opt_string(&args.steps)),
            ("count", opt_string(&args.count)),
        ],
    )?;
    let out = out_dir(&args.common)?;
    let data = load_data(&map)?;

    let steps = map.usize_or("steps", 2)?;
    let count = map.usize_or("count", 1)?;
    let seed = map.u64_or("seed", 17)?;
    let variant = parse_variant(map.str_or("format", "interent"))?;
    let (format, policy) = match variant {
        Variant::InterEnt => (ChainFormat::InterEnt, KPolicy::Fixed(steps)),
        Variant::CoKE => (
            ChainFormat::RelOnly,
            KPolicy::UniformMix { min: 1, max: steps },
        ),
    };

    let mut rng = TrainRng::seed_from_u64(seed);
    let chains = sample_pretraining_set(
        &data.adjacency,
        data.store.split(Split::Train),
        format,
        count,
        policy,
        &mut rng,
    )?;

    let path = out.join("chains.txt");
    let mut buf = Vec::new();
    dump_chains(&chains, &data.vocab, &mut buf).map_err(|e| Error::io(&path, e))?;
    std::fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "chains": chains.len(),
            "format": map.str_or("format", "interent"),
            "steps": steps,
            "config_hash": map.hash(),
            "seed": seed,
        }),
    )?;
    println!("dumped {} chains to {}", chains.len(), path.display());
    Ok(())
}
