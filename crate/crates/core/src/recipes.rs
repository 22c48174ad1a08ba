//! End-to-end adaptation recipes and adaptation-curve sweeps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{generate_synthetic, load_corpus, SynthSpec};
use crate::counterfeit::{counterfeit_corpus, CounterfeitPlan};
use crate::da::{DaFeatureSpace, Instance, Ontology};
use crate::decoder::RerankConfig;
use crate::dt::{train_dt, DtConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, split_3_1_1, EvalReport};
use crate::nn::{derive_seed, seeded_rng};
use crate::sclstm::{train_ml, Generator, ModelParams, TrainConfig, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Scratch,
    Tune,
    Counterfeit,
    CounterfeitDt,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Scratch, Regime::Tune, Regime::Counterfeit, Regime::CounterfeitDt];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Scratch => "scratch",
            Regime::Tune => "tune",
            Regime::Counterfeit => "counterfeit",
            Regime::CounterfeitDt => "counterfeit_dt",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }
}

/// Where the two domains come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Preset { name: String, seed: u64 },
    Spec { path: PathBuf, seed: u64 },
    Files {
        source_ontology: PathBuf,
        source_corpus: PathBuf,
        target_ontology: PathBuf,
        target_corpus: PathBuf,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Preset {
            name: "similar".into(),
            seed: 1,
        }
    }
}

/// Source and target corpora with their ontologies.
#[derive(Clone, Debug)]
pub struct Domains {
    pub source_ontology: Ontology,
    pub source: Vec<Instance>,
    pub target_ontology: Ontology,
    pub target: Vec<Instance>,
}

impl DataConfig {
    pub fn load(&self) -> Result<Domains> {
        let synth = |spec: SynthSpec, seed| {
            let c = generate_synthetic(&spec, seed)?;
            Ok(Domains {
                source_ontology: c.source_ontology,
                source: c.source,
                target_ontology: c.target_ontology,
                target: c.target,
            })
        };
        match self {
            DataConfig::Preset { name, seed } => synth(SynthSpec::preset(name)?, *seed),
            DataConfig::Spec { path, seed } => synth(SynthSpec::load(path)?, *seed),
            DataConfig::Files {
                source_ontology,
                source_corpus,
                target_ontology,
                target_corpus,
            } => {
                let so = Ontology::load(source_ontology)?;
                let to = Ontology::load(target_ontology)?;
                Ok(Domains {
                    source: load_corpus(source_corpus, &so)?,
                    target: load_corpus(target_corpus, &to)?,
                    source_ontology: so,
                    target_ontology: to,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecipeConfig {
    pub data: DataConfig,
    pub regimes: Vec<Regime>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    /// Starting learning rate for refinement, relative to `train.lr`.
    pub finetune_lr_scale: f64,
    pub rerank: RerankConfig,
    pub dt: DtConfig,
    pub distinct_slots: bool,
    /// Also score the adaptation data itself (needed for DT comparisons).
    pub eval_train: bool,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        RecipeConfig {
            data: DataConfig::default(),
            regimes: Regime::ALL.to_vec(),
            fractions: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            seeds: vec![1, 2, 3, 4, 5],
            train: TrainConfig::default(),
            finetune_lr_scale: 1.0,
            rerank: RerankConfig::default(),
            dt: DtConfig::default(),
            distinct_slots: false,
            eval_train: true,
        }
    }
}

impl RecipeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("at least one regime is required".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!("fraction {f} is outside (0, 1]")));
        }
        if self.fractions.is_empty() {
            return Err(Error::Config("at least one fraction is required".into()));
        }
        if !(self.finetune_lr_scale > 0.0) {
            return Err(Error::Config("finetune_lr_scale must be positive".into()));
        }
        self.train.validate()?;
        self.rerank.validate()?;
        self.dt.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RecipeConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&s)?
        } else {
            serde_json::from_str(&s)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// One (regime, fraction, seed) result. Fraction 0 marks the unadapted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub regime: Regime,
    pub fraction: f64,
    pub seed: u64,
    pub n_adapt: usize,
    pub bleu: f64,
    pub err: f64,
    pub train_bleu: Option<f64>,
    pub train_err: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: Regime,
    pub fraction: f64,
    pub n_seeds: usize,
    pub bleu: f64,
    pub err: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub gamma: f64,
    pub betas: std::collections::BTreeMap<String, f64>,
    pub rows: Vec<Row>,
    pub summary: Vec<SummaryRow>,
}

/// Everything shared by the cells of one seed.
pub struct SeedContext {
    pub seed: u64,
    pub vocab: Vocab,
    pub space: DaFeatureSpace,
    pub source_train: Vec<Instance>,
    pub source_valid: Vec<Instance>,
    pub target_train: Vec<Instance>,
    pub target_valid: Vec<Instance>,
    pub target_test: Vec<Instance>,
    pub plan: CounterfeitPlan,
}

const STREAM_SOURCE_SPLIT: u64 = 10;
const STREAM_TARGET_SPLIT: u64 = 11;
const STREAM_SUBSAMPLE: u64 = 12;
const STREAM_COUNTERFEIT: u64 = 13;
const STREAM_INIT: u64 = 20;
const STREAM_TRAIN: u64 = 30;
const STREAM_EVAL: u64 = 40;
const STREAM_DT: u64 = 50;

impl SeedContext {
    pub fn new(domains: &Domains, cfg: &RecipeConfig, seed: u64) -> Result<Self> {
        let (source_train, source_valid, _) = split_3_1_1(&domains.source, derive_seed(seed, STREAM_SOURCE_SPLIT));
        let (mut target_train, mut target_valid, target_test) =
            split_3_1_1(&domains.target, derive_seed(seed, STREAM_TARGET_SPLIT));
        let mut rng = seeded_rng(derive_seed(seed, STREAM_SUBSAMPLE));
        target_train.shuffle(&mut rng);
        target_valid.shuffle(&mut rng);
        let mut tokens: Vec<String> = domains.source_ontology.slot_tokens();
        tokens.extend(domains.target_ontology.slot_tokens());
        for inst in domains.source.iter().chain(&target_train) {
            tokens.extend(inst.delex_tokens.iter().cloned());
        }
        Ok(SeedContext {
            seed,
            vocab: Vocab::build(tokens),
            space: DaFeatureSpace::from_ontologies([&domains.source_ontology, &domains.target_ontology])?,
            plan: CounterfeitPlan::new(
                domains.source_ontology.clone(),
                domains.target_ontology.clone(),
                cfg.distinct_slots,
            ),
            source_train,
            source_valid,
            target_train,
            target_valid,
            target_test,
        })
    }

    /// Nested prefix of the shuffled target training split.
    pub fn adaptation_set(&self, fraction: f64) -> Result<(&[Instance], &[Instance])> {
        let n = (fraction * self.target_train.len() as f64).floor() as usize;
        if n == 0 {
            return Err(Error::Config(format!(
                "fraction {fraction} of {} training instances is empty",
                self.target_train.len()
            )));
        }
        let nv = ((fraction * self.target_valid.len() as f64).floor() as usize).max(1);
        let nv = nv.min(self.target_valid.len());
        Ok((&self.target_train[..n], &self.target_valid[..nv]))
    }

    fn generator(&self, params: ModelParams) -> Generator {
        Generator {
            params,
            vocab: self.vocab.clone(),
            space: self.space.clone(),
        }
    }

    fn fresh(&self, cfg: &TrainConfig, stream: u64) -> ModelParams {
        let mut rng = seeded_rng(derive_seed(self.seed, stream));
        ModelParams::random(cfg.hidden, self.vocab.len(), self.space.dim(), cfg.init_scale, &mut rng)
    }

    fn train(&self, train: &[Instance], valid: &[Instance], init: ModelParams, cfg: &TrainConfig) -> Result<Generator> {
        let g = self.generator(init);
        let outcome = train_ml(&g.examples(train)?, &g.examples(valid)?, g.params.clone(), cfg)?;
        Ok(self.generator(outcome.params))
    }

    fn train_config(&self, cfg: &RecipeConfig, stream: u64, lr_scale: f64) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, STREAM_TRAIN + stream),
            lr: cfg.train.lr * lr_scale,
            ..cfg.train.clone()
        }
    }

    /// Source-domain model (the starting point for fine-tuning).
    pub fn source_model(&self, cfg: &RecipeConfig) -> Result<Generator> {
        let tc = self.train_config(cfg, 0, 1.0);
        self.train(&self.source_train, &self.source_valid, self.fresh(&tc, STREAM_INIT), &tc)
    }

    /// Model trained on counterfeited source data.
    pub fn counterfeit_model(&self, cfg: &RecipeConfig) -> Result<Generator> {
        let s = derive_seed(self.seed, STREAM_COUNTERFEIT);
        let train = counterfeit_corpus(&self.source_train, &self.plan, s)?;
        let valid = counterfeit_corpus(&self.source_valid, &self.plan, derive_seed(s, 1))?;
        let tc = self.train_config(cfg, 1, 1.0);
        self.train(&train, &valid, self.fresh(&tc, STREAM_INIT + 1), &tc)
    }

    pub fn scratch(&self, cfg: &RecipeConfig, fraction: f64) -> Result<Generator> {
        let (train, valid) = self.adaptation_set(fraction)?;
        let tc = self.train_config(cfg, 2, 1.0);
        self.train(train, valid, self.fresh(&tc, STREAM_INIT + 2), &tc)
    }

    /// Continue training `base` on the adaptation data with a reduced rate.
    pub fn refine(&self, cfg: &RecipeConfig, base: &Generator, fraction: f64) -> Result<Generator> {
        let (train, valid) = self.adaptation_set(fraction)?;
        let tc = self.train_config(cfg, 3, cfg.finetune_lr_scale);
        self.train(train, valid, base.params.clone(), &tc)
    }

    pub fn discriminative(&self, cfg: &RecipeConfig, base: &Generator, fraction: f64) -> Result<Generator> {
        let (train, valid) = self.adaptation_set(fraction)?;
        let dc = DtConfig {
            seed: derive_seed(self.seed, STREAM_DT),
            ..cfg.dt.clone()
        };
        Ok(train_dt(base, train, valid, &dc)?.generator)
    }

    /// Test-set evaluation; every model of a seed sees the same random stream.
    pub fn evaluate(&self, cfg: &RecipeConfig, gen: &Generator, data: &[Instance]) -> Result<EvalReport> {
        evaluate(gen, data, &cfg.rerank, &mut seeded_rng(derive_seed(self.seed, STREAM_EVAL)))
    }

    fn row(&self, cfg: &RecipeConfig, regime: Regime, fraction: f64, gen: &Generator) -> Result<Row> {
        let test = self.evaluate(cfg, gen, &self.target_test)?;
        let (n_adapt, train) = if fraction > 0.0 && cfg.eval_train {
            let (t, _) = self.adaptation_set(fraction)?;
            (t.len(), Some(self.evaluate(cfg, gen, t)?))
        } else if fraction > 0.0 {
            (self.adaptation_set(fraction)?.0.len(), None)
        } else {
            (0, None)
        };
        Ok(Row {
            regime,
            fraction,
            seed: self.seed,
            n_adapt,
            bleu: test.bleu4,
            err: test.err,
            train_bleu: train.as_ref().map(|r| r.bleu4),
            train_err: train.as_ref().map(|r| r.err),
        })
    }
}

/// Run all cells of one seed. Rows are ordered by fraction, then regime;
/// unadapted models appear first with fraction 0.
pub fn run_seed(domains: &Domains, cfg: &RecipeConfig, seed: u64) -> Result<Vec<Row>> {
    let ctx = SeedContext::new(domains, cfg, seed)?;
    let wants = |r: Regime| cfg.regimes.contains(&r);
    let needs_cf = wants(Regime::Counterfeit) || wants(Regime::CounterfeitDt);
    let (source, cf) = rayon::join(
        || wants(Regime::Tune).then(|| ctx.source_model(cfg)).transpose(),
        || needs_cf.then(|| ctx.counterfeit_model(cfg)).transpose(),
    );
    let (source, cf) = (source?, cf?);

    let mut rows = Vec::new();
    if let Some(g) = &source {
        rows.push(ctx.row(cfg, Regime::Tune, 0.0, g)?);
    }
    if let Some(g) = &cf {
        rows.push(ctx.row(cfg, Regime::Counterfeit, 0.0, g)?);
    }
    let cells: Vec<(f64, Regime)> = cfg
        .fractions
        .iter()
        .flat_map(|&f| [Regime::Scratch, Regime::Tune, Regime::Counterfeit].map(|r| (f, r)))
        .filter(|&(_, r)| wants(r) || (r == Regime::Counterfeit && wants(Regime::CounterfeitDt)))
        .collect();
    let cell_rows: Vec<Vec<Row>> = cells
        .par_iter()
        .map(|&(f, r)| -> Result<Vec<Row>> {
            let gen = match r {
                Regime::Scratch => ctx.scratch(cfg, f)?,
                Regime::Tune => ctx.refine(cfg, source.as_ref().expect("trained"), f)?,
                _ => ctx.refine(cfg, cf.as_ref().expect("trained"), f)?,
            };
            let mut out = Vec::new();
            if wants(r) {
                out.push(ctx.row(cfg, r, f, &gen)?);
            }
            if r == Regime::Counterfeit && wants(Regime::CounterfeitDt) {
                let dt = ctx.discriminative(cfg, &gen, f)?;
                out.push(ctx.row(cfg, Regime::CounterfeitDt, f, &dt)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    rows.extend(cell_rows.into_iter().flatten());
    Ok(rows)
}

/// Means over seeds for every (regime, fraction), in first-seen order.
pub fn summarise(rows: &[Row]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Regime, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(g, f)| g == r.regime && f == r.fraction) {
            keys.push((r.regime, r.fraction));
        }
    }
    keys.into_iter()
        .map(|(regime, fraction)| {
            let sel: Vec<&Row> = rows.iter().filter(|r| r.regime == regime && r.fraction == fraction).collect();
            let n = sel.len() as f64;
            SummaryRow {
                regime,
                fraction,
                n_seeds: sel.len(),
                bleu: sel.iter().map(|r| r.bleu).sum::<f64>() / n,
                err: sel.iter().map(|r| r.err).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Run the configured regimes over fractions × seeds. Seeds run in parallel.
pub fn sweep(domains: &Domains, cfg: &RecipeConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let per_seed: Vec<Vec<Row>> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(domains, cfg, s))
        .collect::<Result<_>>()?;
    let rows: Vec<Row> = per_seed.into_iter().flatten().collect();
    Ok(SweepResult {
        config_hash: cfg.hash(),
        gamma: cfg.dt.gamma,
        betas: cfg.dt.betas.clone(),
        summary: summarise(&rows),
        rows,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

impl SweepResult {
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("regime,fraction,seed,n_adapt,bleu4,err,train_bleu4,train_err\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.regime,
                r.fraction,
                r.seed,
                r.n_adapt,
                r.bleu,
                r.err,
                opt(r.train_bleu),
                opt(r.train_err)
            ));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("regime,fraction,n_seeds,bleu4,err\n");
        for r in &self.summary {
            s.push_str(&format!("{},{},{},{},{}\n", r.regime, r.fraction, r.n_seeds, r.bleu, r.err));
        }
        s
    }

    /// Write `rows.csv`, `summary.csv`, `results.json` and `manifest.json`.
    pub fn write(&self, dir: impl AsRef<Path>, cfg: &RecipeConfig) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("rows.csv", self.rows_csv())?;
        write("summary.csv", self.summary_csv())?;
        write("results.json", serde_json::to_string_pretty(self)?)?;
        let manifest = serde_json::json!({
            "config_hash": self.config_hash,
            "config": cfg,
            "files": ["rows.csv", "summary.csv", "results.json"],
            "n_rows": self.rows.len(),
            "crate_version": env!("CARGO_PKG_VERSION"),
        });
        write("manifest.json", serde_json::to_string_pretty(&manifest)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_domain;

    fn tiny_domains() -> Domains {
        let mut spec = SynthSpec::preset("similar").unwrap();
        spec.source.max_instances = Some(60);
        spec.target.max_instances = Some(40);
        let c = generate_synthetic(&spec, 9).unwrap();
        Domains {
            source_ontology: c.source_ontology,
            source: c.source,
            target_ontology: c.target_ontology,
            target: c.target,
        }
    }

    fn tiny_config() -> RecipeConfig {
        RecipeConfig {
            fractions: vec![0.1, 1.0],
            seeds: vec![1, 2],
            train: TrainConfig {
                hidden: 6,
                max_epochs: 2,
                ..Default::default()
            },
            rerank: RerankConfig {
                n_over: 4,
                top_k: 2,
                max_len: 12,
                ..Default::default()
            },
            dt: DtConfig {
                n_samples: 4,
                epochs: 1,
                max_len: 12,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(RecipeConfig::default().validate().is_ok());
        let bad = |f: fn(&mut RecipeConfig)| {
            let mut c = RecipeConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.fractions = vec![0.0]));
        assert!(bad(|c| c.fractions = vec![1.5]));
        assert!(bad(|c| c.seeds.clear()));
        assert!(bad(|c| c.regimes.clear()));
        let text = toml::to_string(&RecipeConfig::default()).unwrap();
        assert_eq!(toml::from_str::<RecipeConfig>(&text).unwrap(), RecipeConfig::default());
        assert_eq!("counterfeit_dt".parse::<Regime>().unwrap(), Regime::CounterfeitDt);
    }

    #[test]
    fn adaptation_sets_are_nested_and_splits_shared() {
        let d = tiny_domains();
        let cfg = tiny_config();
        let ctx = SeedContext::new(&d, &cfg, 3).unwrap();
        let (a, _) = ctx.adaptation_set(0.25).unwrap();
        let (b, _) = ctx.adaptation_set(0.5).unwrap();
        assert_eq!(a, &b[..a.len()]);
        assert!(ctx.adaptation_set(0.01).is_err());
        let again = SeedContext::new(&d, &cfg, 3).unwrap();
        assert_eq!(again.target_test, ctx.target_test);
    }

    #[test]
    fn sweep_shape_means_and_determinism() {
        let d = tiny_domains();
        let cfg = tiny_config();
        let a = sweep(&d, &cfg).unwrap();
        // 2 unadapted rows per seed plus 4 regimes x 2 fractions
        assert_eq!(a.rows.len(), 2 * (2 + 4 * 2));
        let adapted = a.rows.iter().filter(|r| r.fraction > 0.0).count();
        assert_eq!(adapted, cfg.regimes.len() * cfg.fractions.len() * cfg.seeds.len());
        for s in &a.summary {
            let sel: Vec<&Row> = a.rows.iter().filter(|r| r.regime == s.regime && r.fraction == s.fraction).collect();
            assert_eq!(sel.len(), 2);
            assert!((s.bleu - (sel[0].bleu + sel[1].bleu) / 2.0).abs() < 1e-12);
        }
        let b = sweep(&d, &cfg).unwrap();
        assert_eq!(a.rows_csv(), b.rows_csv());
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path(), &cfg).unwrap();
        let results = std::fs::read_to_string(dir.path().join("results.json")).unwrap();
        assert!(results.contains("\"gamma\""));
    }

    #[test]
    fn single_instance_adaptation_completes() {
        let d = tiny_domains();
        let mut cfg = tiny_config();
        cfg.regimes = vec![Regime::Scratch];
        cfg.seeds = vec![1];
        let ctx = SeedContext::new(&d, &cfg, 1).unwrap();
        let one = 1.0 / ctx.target_train.len() as f64 + 1e-9;
        cfg.fractions = vec![one];
        let r = sweep(&d, &cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].n_adapt, 1);
        let _ = generate_domain;
    }
}
