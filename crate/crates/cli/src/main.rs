use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use nlgadapt::corpus::{generate_synthetic, load_corpus, save_corpus, SynthSpec};
use nlgadapt::counterfeit::{counterfeit_corpus, CounterfeitPlan};
use nlgadapt::da::{lexicalise, DaFeatureSpace, DialogueAct, Instance, Ontology};
use nlgadapt::decoder::{rerank, RerankConfig};
use nlgadapt::dt::{train_dt, DtConfig};
use nlgadapt::eval::{evaluate, split_3_1_1};
use nlgadapt::nn::{five_point_grad, max_relative_error, seeded_rng, FIVE_POINT_STEP};
use nlgadapt::recipes::{sweep, RecipeConfig};
use nlgadapt::sclstm::{backward, cost_terms, forward, train_ml, CostSpec, Generator, ModelParams, TrainConfig, Vocab};

#[derive(Parser)]
#[command(name = "nlgadapt", version, about = "SC-LSTM generation with cross-domain adaptation")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Configuration file (TOML or JSON) for the subcommand's stage.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic source/target domain pair.
    Synth(SynthArgs),
    /// Train a generator by maximum likelihood.
    Train(TrainArgs),
    /// Rewrite a source corpus into pseudo target-domain data.
    Counterfeit(CounterfeitArgs),
    /// Continue training a checkpoint on new data at a reduced learning rate.
    Adapt(AdaptArgs),
    /// Discriminative fine-tuning of a checkpoint.
    DtFinetune(DtArgs),
    /// Over-generate, rerank and print the top realisations of one act.
    Generate(GenerateArgs),
    /// Score a checkpoint on a test corpus.
    Evaluate(EvaluateArgs),
    /// Run the adaptation sweep described by `--config`.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients on random tiny models.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in grammar pair: `similar` or `disjoint`.
    #[arg(long, default_value = "similar", conflicts_with = "grammar")]
    preset: String,
    /// Grammar file (TOML or JSON).
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Ontology of the corpus.
    #[arg(long)]
    ontology: PathBuf,
    /// Validation corpus; defaults to a 3:1:1 split of `--corpus`.
    #[arg(long)]
    valid: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Further ontologies whose slots the model should be able to encode.
    #[arg(long = "extra-ontology")]
    extra: Vec<PathBuf>,
    /// Further corpora contributing vocabulary only.
    #[arg(long = "vocab-corpus")]
    vocab_corpora: Vec<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CounterfeitArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long = "source-ont")]
    source_ont: PathBuf,
    #[arg(long = "target-ont")]
    target_ont: PathBuf,
    /// Map distinct source slots to distinct target slots.
    #[arg(long = "distinct-slots")]
    distinct_slots: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Multiplier on the configured learning rate.
    #[arg(long = "lr-scale", default_value_t = 1.0)]
    lr_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DtArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    gamma: Option<f64>,
    /// Metric weight as `name=value`; repeatable. Replaces the default weights.
    #[arg(long = "beta", value_parser = parse_beta)]
    betas: Vec<(String, f64)>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dialogue act, e.g. `inform(family=tecra;battery=6 hours)`.
    #[arg(long)]
    da: String,
    /// Validate the act against this ontology first.
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    ontology: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Results directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    configs: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    #[arg(long = "da-dim", default_value_t = 6)]
    da_dim: usize,
    #[arg(long = "max-len", default_value_t = 5)]
    max_len: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn parse_beta(s: &str) -> std::result::Result<(String, f64), String> {
    DtConfig::parse_beta(s).map_err(|e| e.to_string())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(anyhow::Error::from)
    } else {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Training and validation data; without `--valid` the corpus is split 3:1:1
/// and the test part is left unused.
fn load_data(args: &DataArgs, seed: u64) -> Result<(Ontology, Vec<Instance>, Vec<Instance>)> {
    let ont = Ontology::load(&args.ontology)?;
    let data = load_corpus(&args.corpus, &ont)?;
    match &args.valid {
        Some(v) => Ok((ont.clone(), data, load_corpus(v, &ont)?)),
        None => {
            let (train, valid, _) = split_3_1_1(&data, seed);
            Ok((ont, train, valid))
        }
    }
}

fn train_config(path: Option<&Path>, seed: u64) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        seed,
        ..load_config(path)?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn fit(gen: &Generator, train: &[Instance], valid: &[Instance], cfg: &TrainConfig) -> Result<Generator> {
    let outcome = train_ml(&gen.examples(train)?, &gen.examples(valid)?, gen.params.clone(), cfg)?;
    if let Some(last) = outcome.history.last() {
        let best = outcome.history.iter().find(|e| e.epoch == outcome.best_epoch).unwrap_or(last);
        eprintln!("epochs {}, best {}, valid cost {:.4}", last.epoch, best.epoch, best.valid_cost);
    }
    Ok(Generator {
        params: outcome.params,
        ..gen.clone()
    })
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => {
            let spec = match &a.grammar {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::preset(&a.preset)?,
            };
            let c = generate_synthetic(&spec, seed)?;
            std::fs::create_dir_all(&a.out)?;
            c.source_ontology.save(a.out.join("source_ontology.json"))?;
            c.target_ontology.save(a.out.join("target_ontology.json"))?;
            save_corpus(a.out.join("source.jsonl"), &c.source)?;
            save_corpus(a.out.join("target.jsonl"), &c.target)?;
            eprintln!("{} source and {} target instances", c.source.len(), c.target.len());
        }
        Command::Train(a) => {
            let mut cfg = train_config(config, seed)?;
            if let Some(h) = a.hidden {
                cfg.hidden = h;
            }
            cfg.validate()?;
            let (ont, train, valid) = load_data(&a.data, seed)?;
            let extra: Vec<Ontology> = a.extra.iter().map(Ontology::load).collect::<nlgadapt::Result<_>>()?;
            let space = DaFeatureSpace::from_ontologies(std::iter::once(&ont).chain(&extra))?;
            let mut words: Vec<String> = ont.slot_tokens();
            for o in &extra {
                words.extend(o.slot_tokens());
            }
            words.extend(train.iter().flat_map(|i| i.delex_tokens.iter().cloned()));
            for (path, o) in a.vocab_corpora.iter().zip(extra.iter().chain(std::iter::repeat(&ont))) {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    words.extend(nlgadapt::corpus::parse_line(line, o)?.delex_tokens);
                }
            }
            let gen = Generator::new(Vocab::build(words), space, cfg.hidden, cfg.init_scale, &mut seeded_rng(seed));
            let trained = fit(&gen, &train, &valid, &cfg)?;
            trained.save(&a.out, &cfg.hash())?;
        }
        Command::Counterfeit(a) => {
            let source_ont = Ontology::load(&a.source_ont)?;
            let target_ont = Ontology::load(&a.target_ont)?;
            let source = load_corpus(&a.source, &source_ont)?;
            let plan = CounterfeitPlan::new(source_ont, target_ont, a.distinct_slots);
            let out = counterfeit_corpus(&source, &plan, seed)?;
            save_corpus(&a.out, &out)?;
            eprintln!("{} instances written", out.len());
        }
        Command::Adapt(a) => {
            let (gen, _) = Generator::load(&a.model)?;
            let base = train_config(config, seed)?;
            if !(a.lr_scale > 0.0) {
                bail!("--lr-scale must be positive");
            }
            let cfg = TrainConfig {
                lr: base.lr * a.lr_scale,
                hidden: gen.params.hidden(),
                ..base
            };
            let (_, train, valid) = load_data(&a.data, seed)?;
            fit(&gen, &train, &valid, &cfg)?.save(&a.out, &cfg.hash())?;
        }
        Command::DtFinetune(a) => {
            let (gen, hash) = Generator::load(&a.model)?;
            let mut cfg: DtConfig = load_config(config)?;
            cfg.seed = seed;
            if let Some(g) = a.gamma {
                cfg.gamma = g;
            }
            if !a.betas.is_empty() {
                cfg.betas = a.betas.into_iter().collect();
            }
            if let Some(n) = a.samples {
                cfg.n_samples = n;
            }
            if let Some(lr) = a.lr {
                cfg.lr = lr;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let (_, train, valid) = load_data(&a.data, seed)?;
            let outcome = train_dt(&gen, &train, &valid, &cfg)?;
            for e in &outcome.history {
                eprintln!("epoch {}: train cost {:.4}, valid cost {:.4}", e.epoch, e.train_cost, e.valid_cost);
            }
            eprintln!("kept epoch {} (gamma {}, betas {:?})", outcome.best_epoch, cfg.gamma, cfg.betas);
            outcome.generator.save(&a.out, &hash)?;
        }
        Command::Generate(a) => {
            let (gen, _) = Generator::load(&a.model)?;
            let da = DialogueAct::parse(&a.da)?;
            if let Some(p) = &a.ontology {
                da.validate(&Ontology::load(p)?)?;
            }
            let cfg = rerank_config(config, a.k)?;
            let top = rerank(&da, &gen, &cfg, &mut seeded_rng(seed))?;
            let out: Vec<serde_json::Value> = top
                .iter()
                .map(|r| {
                    Ok(serde_json::json!({
                        "text": lexicalise(&r.tokens, &da).unwrap_or_else(|_| r.tokens.join(" ")),
                        "delex": r.tokens.join(" "),
                        "R": r.score,
                        "err": r.err,
                    }))
                })
                .collect::<nlgadapt::Result<_>>()?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Evaluate(a) => {
            let (gen, _) = Generator::load(&a.model)?;
            let ont = Ontology::load(&a.ontology)?;
            let test = load_corpus(&a.test, &ont)?;
            let cfg = rerank_config(config, a.k)?;
            let report = evaluate(&gen, &test, &cfg, &mut seeded_rng(seed))?;
            println!("bleu4 {:.4} err {:.4} ({} acts)", report.bleu4, report.err, report.n_acts);
            if let Some(out) = &a.out {
                write_json(out, &report)?;
            }
        }
        Command::Sweep(a) => {
            let cfg: RecipeConfig = load_config(config)?;
            cfg.validate()?;
            let domains = cfg.data.load()?;
            let result = sweep(&domains, &cfg)?;
            result.write(&a.out, &cfg)?;
            print!("{}", result.summary_csv());
        }
        Command::Gradcheck(a) => gradcheck(&a, seed)?,
    }
    Ok(())
}

fn rerank_config(path: Option<&Path>, k: Option<usize>) -> Result<RerankConfig> {
    let mut cfg: RerankConfig = load_config(path)?;
    if let Some(k) = k {
        cfg.top_k = k;
        cfg.n_over = cfg.n_over.max(k);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gradcheck(a: &GradcheckArgs, seed: u64) -> Result<()> {
    let mut worst = 0.0f64;
    for i in 0..a.configs {
        let mut rng = seeded_rng(nlgadapt::nn::derive_seed(seed, i as u64));
        let theta = ModelParams::random(a.hidden, a.vocab, a.da_dim, 0.3, &mut rng);
        let len = rng.random_range(1..=a.max_len.max(1));
        let inputs: Vec<usize> = (0..len).map(|_| rng.random_range(0..a.vocab)).collect();
        let targets: Vec<usize> = (0..len).map(|_| rng.random_range(0..a.vocab)).collect();
        let d0: Vec<f64> = (0..a.da_dim).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let trace = forward(&inputs, &d0, &theta)?;
        let analytic = backward(&trace, &targets, &theta)?;
        let numeric = five_point_grad(
            |set| {
                let th = theta.with_set(set.clone()).expect("same shapes");
                let tr = forward(&inputs, &d0, &th).expect("valid inputs");
                cost_terms(&tr, &targets, &CostSpec::default()).expect("valid targets").total()
            },
            theta.set(),
            FIVE_POINT_STEP,
        );
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        println!("config {i}: T={len} relative error {err:.3e}");
        worst = worst.max(err);
    }
    println!("max relative error {worst:.3e}");
    if worst >= a.tolerance {
        bail!("gradient check failed: {worst:.3e} >= {}", a.tolerance);
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
