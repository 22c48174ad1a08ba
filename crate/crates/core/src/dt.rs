//! Discriminative fine-tuning: minimise the negative expected score of
//! sampled candidates under a sharpened model distribution.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::da::{DialogueAct, Instance};
use crate::decoder::{error_rate, sample_from_vector, slot_count, slot_errors};
use crate::error::{Error, Result};
use crate::eval::{group_by_act, sentence_bleu};
use crate::nn::{self, derive_seed, seeded_rng, ParamSet, SeededRng};
use crate::sclstm::{accumulate_gradient, cost_terms, forward, CostSpec, Example, Generator, ModelParams};

pub const METRICS: [&str; 2] = ["bleu", "err"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtConfig {
    /// Sharpening exponent applied to model probabilities.
    pub gamma: f64,
    /// Weight of each metric in the candidate score.
    pub betas: BTreeMap<String, f64>,
    pub n_samples: usize,
    pub lr: f64,
    pub epochs: usize,
    pub max_len: usize,
    pub clip: f64,
    pub seed: u64,
}

impl Default for DtConfig {
    fn default() -> Self {
        DtConfig {
            gamma: 5.0,
            betas: BTreeMap::from([("bleu".to_string(), 1.0), ("err".to_string(), -1.0)]),
            n_samples: 50,
            lr: 0.01,
            epochs: 5,
            max_len: 80,
            clip: 5.0,
            seed: 1,
        }
    }
}

impl DtConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.betas.keys().find(|k| !METRICS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown metric `{k}` (expected one of {METRICS:?})")));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.n_samples == 0 || self.max_len == 0 || !(self.lr > 0.0) || self.clip <= 0.0 {
            return Err(Error::Config("n_samples, max_len, lr and clip must be positive".into()));
        }
        Ok(())
    }

    /// Parse `name=value` pairs such as `bleu=1.0`.
    pub fn parse_beta(s: &str) -> Result<(String, f64)> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected metric=weight, got `{s}`")))?;
        let w: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad weight in `{s}`")))?;
        Ok((k.trim().to_string(), w))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub ids: Vec<usize>,
    pub terminated: bool,
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub scores: BTreeMap<String, f64>,
    /// Weighted sum of `scores`.
    pub score: f64,
    /// Sharpened, renormalised probability within the candidate set.
    pub prob: f64,
}

/// Sample `n` sequences and keep the distinct ones, in order of first draw.
pub fn generate_candidates(gen: &Generator, d0: &[f64], n: usize, max_len: usize, rng: &mut SeededRng) -> Result<Vec<Candidate>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..n {
        let s = sample_from_vector(gen, d0, rng, max_len)?;
        if seen.insert((s.ids.clone(), s.terminated)) {
            out.push(Candidate {
                tokens: gen.vocab.decode(&s.ids),
                ids: s.ids,
                terminated: s.terminated,
                log_prob: s.log_prob,
                scores: BTreeMap::new(),
                score: 0.0,
                prob: 0.0,
            });
        }
    }
    Ok(out)
}

pub fn metric_scores(tokens: &[String], refs: &[Vec<String>], da: &DialogueAct) -> BTreeMap<String, f64> {
    let (missing, redundant) = slot_errors(tokens, da);
    BTreeMap::from([
        ("bleu".to_string(), sentence_bleu(tokens, refs)),
        ("err".to_string(), error_rate(missing, redundant, slot_count(da))),
    ])
}

pub fn combine(scores: &BTreeMap<String, f64>, betas: &BTreeMap<String, f64>) -> f64 {
    betas
        .iter()
        .map(|(k, b)| b * scores.get(k).copied().unwrap_or(0.0))
        .sum()
}

pub fn score_candidates(cands: &mut [Candidate], refs: &[Vec<String>], da: &DialogueAct, betas: &BTreeMap<String, f64>) {
    for c in cands {
        c.scores = metric_scores(&c.tokens, refs, da);
        c.score = combine(&c.scores, betas);
    }
}

/// `p_i ∝ exp(γ·log p_i)`, computed stably.
pub fn sharpened(log_probs: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let z: Vec<f64> = log_probs.iter().map(|l| gamma * l).collect();
    nn::softmax(&z)
}

pub fn normalize(cands: &mut [Candidate], gamma: f64) -> Result<()> {
    let lp: Vec<f64> = cands.iter().map(|c| c.log_prob).collect();
    for (c, p) in cands.iter_mut().zip(sharpened(&lp, gamma)?) {
        c.prob = p;
    }
    Ok(())
}

/// Negative expected score over a normalised candidate set.
pub fn dt_cost(cands: &[Candidate]) -> f64 {
    -cands.iter().map(|c| c.prob * c.score).sum::<f64>()
}

fn candidate_example(c: &Candidate, d0: &[f64], gen: &Generator) -> Example {
    Example::from_ids(&c.ids, c.terminated, d0.to_vec(), &gen.vocab)
}

/// Recompute the candidates' log-probabilities under `theta` and return the
/// resulting expected-score cost. The candidate set is held fixed.
pub fn frozen_cost(cands: &[Candidate], d0: &[f64], gen: &Generator, theta: &ModelParams, gamma: f64) -> Result<f64> {
    let mut lp = Vec::with_capacity(cands.len());
    for c in cands {
        let ex = candidate_example(c, d0, gen);
        let tr = forward(&ex.inputs, &ex.d0, theta)?;
        lp.push(-cost_terms(&tr, &ex.targets, &CostSpec::nll_only())?.nll);
    }
    let p = sharpened(&lp, gamma)?;
    Ok(-p.iter().zip(cands).map(|(p, c)| p * c.score).sum::<f64>())
}

/// Gradient of [`dt_cost`] for a fixed, normalised candidate set:
/// `Σ γ p_i (L_i − E[L]) ∂NLL_i/∂θ`.
pub fn dt_gradient(cands: &[Candidate], d0: &[f64], gen: &Generator, gamma: f64) -> Result<ParamSet> {
    let theta = &gen.params;
    let mut grads = theta.set().zeros_like();
    // offsets from the first score cancel exactly when all scores agree
    let base = cands.first().map_or(0.0, |c| c.score);
    let mean: f64 = cands.iter().map(|c| c.prob * (c.score - base)).sum();
    for c in cands {
        let w = gamma * c.prob * ((c.score - base) - mean);
        if w == 0.0 {
            continue;
        }
        let ex = candidate_example(c, d0, gen);
        let tr = forward(&ex.inputs, &ex.d0, theta)?;
        accumulate_gradient(&tr, &ex.targets, theta, &CostSpec::nll_only(), w, &mut grads)?;
    }
    Ok(grads)
}

/// Sample, score and normalise the candidates of one act.
pub fn prepare(gen: &Generator, da: &DialogueAct, refs: &[Vec<String>], cfg: &DtConfig, rng: &mut SeededRng) -> Result<(Vec<f64>, Vec<Candidate>)> {
    let d0 = gen.space.encode(da)?;
    let mut cands = generate_candidates(gen, &d0, cfg.n_samples, cfg.max_len, rng)?;
    if cands.is_empty() {
        return Err(Error::NoCandidates);
    }
    score_candidates(&mut cands, refs, da, &cfg.betas);
    normalize(&mut cands, cfg.gamma)?;
    Ok((d0, cands))
}

/// One update on one act; returns the cost before the update.
pub fn dt_step(gen: &mut Generator, da: &DialogueAct, refs: &[Vec<String>], cfg: &DtConfig, rng: &mut SeededRng) -> Result<f64> {
    let (d0, cands) = prepare(gen, da, refs, cfg, rng)?;
    let mut grads = dt_gradient(&cands, &d0, gen, cfg.gamma)?;
    grads.clip_norm(cfg.clip);
    nn::sgd_step(gen.params.set_mut(), &grads, cfg.lr, 0.0)?;
    Ok(dt_cost(&cands))
}

type ActGroup = (DialogueAct, Vec<Vec<String>>);

fn act_groups(data: &[Instance]) -> Vec<ActGroup> {
    group_by_act(data)
        .into_iter()
        .map(|(head, members)| (head.da.clone(), members.iter().map(|m| m.delex_tokens.clone()).collect()))
        .collect()
}

/// Mean expected-score cost over a set of acts, with a fixed random stream
/// so successive evaluations are comparable.
fn expected_cost(gen: &Generator, groups: &[ActGroup], cfg: &DtConfig, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut total = 0.0;
    for (da, refs) in groups {
        total += dt_cost(&prepare(gen, da, refs, cfg, &mut rng)?.1);
    }
    Ok(total / groups.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtEpoch {
    pub epoch: usize,
    pub train_cost: f64,
    pub valid_cost: f64,
}

#[derive(Clone, Debug)]
pub struct DtOutcome {
    pub generator: Generator,
    pub best_epoch: usize,
    pub history: Vec<DtEpoch>,
}

/// Run up to `cfg.epochs` passes, one update per distinct act, keeping the
/// parameters with the lowest validation cost (the starting point included).
pub fn train_dt(gen: &Generator, train: &[Instance], valid: &[Instance], cfg: &DtConfig) -> Result<DtOutcome> {
    cfg.validate()?;
    let train_groups = act_groups(train);
    if train_groups.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let valid_groups = if valid.is_empty() { train_groups.clone() } else { act_groups(valid) };
    let valid_seed = derive_seed(cfg.seed, u64::MAX);
    let mut current = gen.clone();
    let mut best = gen.clone();
    let mut best_cost = expected_cost(gen, &valid_groups, cfg, valid_seed)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut rng = seeded_rng(cfg.seed);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_groups.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let (da, refs) = &train_groups[i];
            sum += dt_step(&mut current, da, refs, cfg, &mut rng)?;
        }
        if !current.params.set().is_finite() {
            return Err(Error::Config(format!("discriminative training diverged at epoch {epoch}")));
        }
        let valid_cost = expected_cost(&current, &valid_groups, cfg, valid_seed)?;
        history.push(DtEpoch {
            epoch,
            train_cost: sum / train_groups.len() as f64,
            valid_cost,
        });
        if valid_cost < best_cost {
            best_cost = valid_cost;
            best = current.clone();
            best_epoch = epoch;
        }
    }
    Ok(DtOutcome {
        generator: best,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::da::{DaFeatureSpace, Ontology, SlotClass, SlotDef, Value};
    use crate::nn::{finite_diff_grad, max_relative_error, DEFAULT_FD_EPS};
    use crate::sclstm::Vocab;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn toy() -> (Generator, DialogueAct) {
        let ont = Ontology::new(
            "toy",
            vec!["inform".into()],
            vec![
                SlotDef { name: "a".into(), class: SlotClass::Informable },
                SlotDef { name: "b".into(), class: SlotClass::Binary },
            ],
        )
        .unwrap();
        let space = DaFeatureSpace::from_ontologies([&ont]).unwrap();
        let mut toks = ont.slot_tokens();
        toks.extend(["x", "y", "z", "."].map(String::from));
        let gen = Generator::new(Vocab::build(toks), space, 5, 0.6, &mut seeded_rng(11));
        let da = DialogueAct::new("inform")
            .with("a", Value::Literal("q".into()))
            .with("b", Value::Yes);
        (gen, da)
    }

    #[test]
    fn normalisation_is_stable() {
        let p = sharpened(&[-1000.0, -1001.0, -2000.0], 5.0).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] / p[1] - 5f64.exp()).abs() < 1e-6);
        let p = sharpened(&[-3.0, -3.0], 5.0).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn cost_of_known_set() {
        let mut c = vec![fixed(-1.0, 1.0), fixed(-1.0, 0.0)];
        normalize(&mut c, 2.0).unwrap();
        assert!((dt_cost(&c) + 0.5).abs() < 1e-12);
    }

    fn fixed(lp: f64, score: f64) -> Candidate {
        Candidate {
            ids: vec![],
            terminated: true,
            tokens: vec![],
            log_prob: lp,
            scores: BTreeMap::new(),
            score,
            prob: 0.0,
        }
    }

    #[test]
    fn closed_form_normalisation() {
        assert_eq!(sharpened(&[-4.2], 5.0).unwrap(), vec![1.0]);
        for gamma in [0.1, 1.0, 5.0, 50.0] {
            assert_eq!(sharpened(&[-2.0, -2.0], gamma).unwrap(), vec![0.5, 0.5]);
        }
        let p = sharpened(&[0.0, -1.0], 5.0).unwrap();
        let e = (-5f64).exp();
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-15);
        let p = sharpened(&[-3.0, -3.01, -7.5], 1e3).unwrap();
        assert!((p[0] - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-12);
        let p = sharpened(&[-3.0, -3.02, -3.5, -9.0], 1e3).unwrap();
        assert!(p[0] >= 1.0 - 1e-6);
    }

    #[test]
    fn constant_scores() {
        let mut one = vec![fixed(-2.0, 0.7)];
        normalize(&mut one, 5.0).unwrap();
        assert!((dt_cost(&one) + 0.7).abs() < 1e-15);

        let (gen, da) = toy();
        let d0 = gen.space.encode(&da).unwrap();
        let mut cands = generate_candidates(&gen, &d0, 20, 4, &mut seeded_rng(8)).unwrap();
        assert!(cands.len() > 1);
        for c in &mut cands {
            c.score = 0.3;
        }
        normalize(&mut cands, 5.0).unwrap();
        assert!((dt_cost(&cands) + 0.3).abs() < 1e-12);
        let g = dt_gradient(&cands, &d0, &gen, 5.0).unwrap();
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn update_raises_the_better_candidate() {
        let (mut gen, da) = toy();
        let d0 = gen.space.encode(&da).unwrap();
        let seqs = [["x", "<I.a>"], ["y", "z"]];
        let log_prob = |gen: &Generator, t: &[&str; 2]| {
            let ids: Vec<usize> = t.iter().map(|w| gen.vocab.id(w)).collect();
            let ex = Example::from_ids(&ids, true, d0.clone(), &gen.vocab);
            let tr = forward(&ex.inputs, &ex.d0, &gen.params).unwrap();
            (ids, -cost_terms(&tr, &ex.targets, &CostSpec::nll_only()).unwrap().nll)
        };
        let (lo, hi) = {
            let a = log_prob(&gen, &seqs[0]).1;
            let b = log_prob(&gen, &seqs[1]).1;
            if a < b { (0, 1) } else { (1, 0) }
        };
        let mut cands: Vec<Candidate> = seqs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let (ids, lp) = log_prob(&gen, t);
                Candidate { ids, log_prob: lp, ..fixed(lp, if i == lo { 1.0 } else { 0.0 }) }
            })
            .collect();
        normalize(&mut cands, 1.0).unwrap();
        let before = cands[lo].log_prob;
        assert!(before < cands[hi].log_prob);
        let g = dt_gradient(&cands, &d0, &gen, 1.0).unwrap();
        nn::sgd_step(gen.params.set_mut(), &g, 0.01, 0.0).unwrap();
        assert!(log_prob(&gen, &seqs[lo]).1 > before);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (gen, da) = toy();
        let refs = vec![vec!["x".to_string(), "<I.a>".to_string(), ".".to_string()]];
        let check = |cands: &[Candidate], d0: &[f64], gamma: f64| {
            let analytic = dt_gradient(cands, d0, &gen, gamma).unwrap();
            let numeric = finite_diff_grad(
                |set| {
                    let theta = gen.params.with_set(set.clone()).unwrap();
                    frozen_cost(cands, d0, &gen, &theta, gamma).unwrap()
                },
                gen.params.set(),
                DEFAULT_FD_EPS,
            );
            assert!(numeric.l2_norm() > 1e-4, "gamma {gamma}: degenerate check");
            let err = max_relative_error(&analytic, &numeric, 1e-8);
            assert!(err < 1e-4, "gamma {gamma}: relative error {err}");
            let at_theta = frozen_cost(cands, d0, &gen, &gen.params, gamma).unwrap();
            assert!((at_theta - dt_cost(cands)).abs() < 1e-10);
        };

        // sampled set, mixed lengths, some cut by the length cap
        let cfg = DtConfig { gamma: 1.0, n_samples: 12, max_len: 3, ..Default::default() };
        let (d0, cands) = prepare(&gen, &da, &refs, &cfg, &mut seeded_rng(5)).unwrap();
        assert!(cands.len() > 2);
        check(&cands, &d0, 1.0);

        // equal-length set so the sharpened weights stay balanced at gamma 5
        let mut cands: Vec<Candidate> = [["x", "<I.a>"], ["y", "<I.a>"], ["x", "z"], ["<I.a>", "."]]
            .iter()
            .map(|t| {
                let ids: Vec<usize> = t.iter().map(|w| gen.vocab.id(w)).collect();
                let ex = Example::from_ids(&ids, true, d0.clone(), &gen.vocab);
                let tr = forward(&ex.inputs, &ex.d0, &gen.params).unwrap();
                Candidate {
                    log_prob: -cost_terms(&tr, &ex.targets, &CostSpec::nll_only()).unwrap().nll,
                    tokens: t.iter().map(|w| w.to_string()).collect(),
                    ids,
                    terminated: true,
                    scores: BTreeMap::new(),
                    score: 0.0,
                    prob: 0.0,
                }
            })
            .collect();
        score_candidates(&mut cands, &refs, &da, &DtConfig::default().betas);
        normalize(&mut cands, 5.0).unwrap();
        check(&cands, &d0, 5.0);
    }

    #[test]
    fn steps_lower_the_frozen_cost() {
        let (mut gen, da) = toy();
        let refs = vec![vec!["x".to_string(), "<I.a>".to_string()]];
        let cfg = DtConfig { n_samples: 20, max_len: 5, lr: 0.05, ..Default::default() };
        let (d0, cands) = prepare(&gen, &da, &refs, &cfg, &mut seeded_rng(2)).unwrap();
        let before = dt_cost(&cands);
        let g = dt_gradient(&cands, &d0, &gen, cfg.gamma).unwrap();
        nn::sgd_step(gen.params.set_mut(), &g, 0.01, 0.0).unwrap();
        let after = frozen_cost(&cands, &d0, &gen, &gen.params, cfg.gamma).unwrap();
        assert!(after <= before);
    }

    #[test]
    fn candidates_are_distinct() {
        let (gen, da) = toy();
        let d0 = gen.space.encode(&da).unwrap();
        let c = generate_candidates(&gen, &d0, 50, 3, &mut seeded_rng(0)).unwrap();
        let set: HashSet<_> = c.iter().map(|c| (c.ids.clone(), c.terminated)).collect();
        assert_eq!(set.len(), c.len());
    }

    #[test]
    fn config_checks() {
        assert!(DtConfig::default().validate().is_ok());
        let mut c = DtConfig::default();
        c.betas.insert("meteor".into(), 1.0);
        assert!(c.validate().is_err());
        assert_eq!(DtConfig::parse_beta("bleu=1.5").unwrap(), ("bleu".into(), 1.5));
        assert!(DtConfig::parse_beta("bleu").is_err());
    }

    #[test]
    fn training_keeps_best_and_is_deterministic() {
        let (gen, da) = toy();
        let inst = Instance {
            da: da.clone(),
            raw_text: "x q .".into(),
            delex_tokens: vec!["x".into(), "<I.a>".into(), ".".into()],
            slot_bindings: BTreeMap::new(),
        };
        let cfg = DtConfig { n_samples: 10, max_len: 6, lr: 0.01, epochs: 2, ..Default::default() };
        let a = train_dt(&gen, std::slice::from_ref(&inst), &[], &cfg).unwrap();
        let b = train_dt(&gen, &[inst], &[], &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.history.len(), 2);
    }

    proptest! {
        #[test]
        fn sharpened_is_a_distribution(lp in prop::collection::vec(-200.0f64..0.0, 1..20), gamma in 0.1f64..10.0) {
            let p = sharpened(&lp, gamma).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn shift_invariance(lp in prop::collection::vec(-50.0f64..0.0, 1..10), shift in -100.0f64..100.0, gamma in 0.1f64..10.0) {
            let p = sharpened(&lp, gamma).unwrap();
            let moved: Vec<f64> = lp.iter().map(|l| l + shift).collect();
            let q = sharpened(&moved, gamma).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
