//! Sampling-based generation and over-generate-then-rerank decoding.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::da::{parse_slot_token, DialogueAct, Value};
use crate::error::{Error, Result};
use crate::nn::{self, SeededRng};
use crate::sclstm::{cell_step, output_log_probs, CostSpec, CostTerms, Generator, StepState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub n_over: usize,
    pub top_k: usize,
    pub lambda: f64,
    pub max_len: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            n_over: 20,
            top_k: 5,
            lambda: 10.0,
            max_len: 80,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > self.n_over {
            return Err(Error::Config(format!(
                "top_k = {} must be in 1..=n_over ({})",
                self.top_k, self.n_over
            )));
        }
        if self.max_len == 0 || self.lambda < 0.0 {
            return Err(Error::Config("max_len must be positive and lambda nonnegative".into()));
        }
        Ok(())
    }
}

/// One sampled token sequence (no `<s>`/`</s>`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub ids: Vec<usize>,
    /// `false` when the length cap stopped generation before `</s>`.
    pub terminated: bool,
    /// Sum of the log-probabilities of every sampled token, `</s>` included.
    pub log_prob: f64,
    /// Full regularised cost of the sequence under the model.
    pub cost: CostTerms,
}

/// Sample tokens from the model until `</s>` or `max_len` tokens.
pub fn sample_utterance(gen: &Generator, da: &DialogueAct, rng: &mut SeededRng, max_len: usize) -> Result<Sample> {
    let d0 = gen.space.encode(da)?;
    sample_from_vector(gen, &d0, rng, max_len)
}

pub fn sample_from_vector(gen: &Generator, d0: &[f64], rng: &mut SeededRng, max_len: usize) -> Result<Sample> {
    let theta = &gen.params;
    let spec = CostSpec::default();
    let eos = gen.vocab.eos();
    let mut state = StepState::initial(theta.hidden(), d0);
    let mut input = gen.vocab.bos();
    let mut ids = Vec::new();
    let mut log_prob = 0.0;
    let mut transition = 0.0;
    let mut terminated = false;
    loop {
        let (next, _) = cell_step(input, &state, theta)?;
        let step_change: f64 = next.d.iter().zip(&state.d).map(|(a, b)| (a - b).abs()).sum();
        transition += spec.eta * spec.xi.powf(step_change);
        let lp = output_log_probs(&next.h, theta);
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let w = nn::sample_categorical(&probs, rng)?;
        log_prob += lp[w];
        state = next;
        if w == eos {
            terminated = true;
            break;
        }
        ids.push(w);
        if ids.len() >= max_len {
            break;
        }
        input = w;
    }
    let final_d = state.d.iter().map(|v| v.abs()).sum();
    Ok(Sample {
        ids,
        terminated,
        log_prob,
        cost: CostTerms {
            nll: -log_prob,
            final_d,
            transition,
        },
    })
}

/// Missing and redundant slot tokens of a delexicalised candidate.
///
/// Required slots are those carrying a literal value. A required slot that
/// appears twice contributes one redundant token.
pub fn slot_errors<S: AsRef<str>>(tokens: &[S], da: &DialogueAct) -> (usize, usize) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        if let Some((_, slot)) = parse_slot_token(t.as_ref()) {
            *counts.entry(slot).or_default() += 1;
        }
    }
    let mut missing = 0;
    let mut redundant = 0;
    let required: HashSet<&str> = da
        .slots
        .iter()
        .filter(|(_, v)| matches!(v, Value::Literal(_)))
        .map(|(n, _)| n.as_str())
        .collect();
    for slot in &required {
        match counts.get(slot) {
            None => missing += 1,
            Some(&c) => redundant += c - 1,
        }
    }
    for (slot, c) in counts {
        if !required.contains(slot) {
            redundant += c;
        }
    }
    (missing, redundant)
}

/// Number of slots that must be realised by a slot token.
pub fn slot_count(da: &DialogueAct) -> usize {
    da.slots.iter().filter(|(_, v)| matches!(v, Value::Literal(_))).count()
}

/// Per-candidate slot error rate: `(missing + redundant) / N`, or the raw
/// redundant count when the act has nothing to realise.
pub fn error_rate(missing: usize, redundant: usize, n_slots: usize) -> f64 {
    if n_slots == 0 {
        redundant as f64
    } else {
        (missing + redundant) as f64 / n_slots as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub tokens: Vec<String>,
    /// Model cost of the sequence (NLL plus DA regularisers).
    pub cost: f64,
    pub missing: usize,
    pub redundant: usize,
    pub err: f64,
    /// `R = -(cost + λ·err)`
    pub score: f64,
}

impl Ranked {
    pub fn new(tokens: Vec<String>, cost: f64, da: &DialogueAct, lambda: f64) -> Self {
        let (missing, redundant) = slot_errors(&tokens, da);
        let n = slot_count(da).max(1);
        let err = (missing + redundant) as f64 / n as f64;
        Ranked {
            tokens,
            cost,
            missing,
            redundant,
            err,
            score: -(cost + lambda * err),
        }
    }
}

/// Dedupe (first occurrence wins), sort by descending `R` with ties broken by
/// shorter length then token order, keep `top_k`.
pub fn rank_candidates(cands: Vec<Ranked>, top_k: usize) -> Vec<Ranked> {
    let mut seen = HashSet::new();
    let mut uniq: Vec<Ranked> = cands
        .into_iter()
        .filter(|c| seen.insert(c.tokens.clone()))
        .collect();
    uniq.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    uniq.truncate(top_k);
    uniq
}

pub fn rerank(da: &DialogueAct, gen: &Generator, cfg: &RerankConfig, rng: &mut SeededRng) -> Result<Vec<Ranked>> {
    cfg.validate()?;
    let d0 = gen.space.encode(da)?;
    let mut cands = Vec::with_capacity(cfg.n_over);
    for _ in 0..cfg.n_over {
        let s = sample_from_vector(gen, &d0, rng, cfg.max_len)?;
        cands.push(Ranked::new(gen.vocab.decode(&s.ids), s.cost.total(), da, cfg.lambda));
    }
    Ok(rank_candidates(cands, cfg.top_k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::da::{DaFeatureSpace, Ontology, SlotClass, SlotDef};
    use crate::nn::seeded_rng;
    use crate::sclstm::{cost_terms, forward, Example, ModelParams, Vocab};

    fn da(slots: &[&str]) -> DialogueAct {
        let mut d = DialogueAct::new("inform");
        for s in slots {
            d.slots.push((s.to_string(), Value::Literal("v".into())));
        }
        d
    }

    fn toy_generator(seed: u64) -> Generator {
        let ont = Ontology::new(
            "toy",
            vec!["inform".into()],
            vec![
                SlotDef { name: "a".into(), class: SlotClass::Informable },
                SlotDef { name: "b".into(), class: SlotClass::Requestable },
            ],
        )
        .unwrap();
        let space = DaFeatureSpace::from_ontologies([&ont]).unwrap();
        let mut toks = ont.slot_tokens();
        toks.extend(["x", "y", "z"].map(String::from));
        Generator::new(Vocab::build(toks), space, 6, 0.5, &mut seeded_rng(seed))
    }

    #[test]
    fn slot_error_examples() {
        let toks = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        assert_eq!(slot_errors(&toks("<I.a> and <I.b> x <R.c>"), &da(&["a", "b", "c"])), (0, 0));
        assert_eq!(slot_errors(&toks("<I.a> x <I.d>"), &da(&["a", "b", "c"])), (2, 1));
        assert_eq!(slot_errors(&toks("hello there"), &DialogueAct::new("goodbye")), (0, 0));
        assert_eq!(slot_errors(&toks("<I.a> <I.a>"), &da(&["a"])), (0, 1));
        // dontcare / binary slots are not realised as slot tokens
        let d = DialogueAct::new("inform")
            .with("a", Value::DontCare)
            .with("h", Value::Yes);
        assert_eq!(slot_errors(&toks("any a"), &d), (0, 0));
    }

    #[test]
    fn error_rate_convention() {
        assert_eq!(error_rate(1, 0, 2), 0.5);
        assert_eq!(error_rate(0, 2, 0), 2.0);
    }

    #[test]
    fn sampled_log_prob_matches_forward_recomputation() {
        let gen = toy_generator(3);
        let d = DialogueAct::new("inform").with("a", Value::Literal("q".into()));
        let mut rng = seeded_rng(8);
        for _ in 0..50 {
            let s = sample_utterance(&gen, &d, &mut rng, 6).unwrap();
            assert!(s.ids.len() <= 6);
            let ex = Example::from_ids(&s.ids, s.terminated, gen.space.encode(&d).unwrap(), &gen.vocab);
            let tr = forward(&ex.inputs, &ex.d0, &gen.params).unwrap();
            let terms = cost_terms(&tr, &ex.targets, &CostSpec::default()).unwrap();
            assert!((terms.nll + s.log_prob).abs() < 1e-10);
            assert!((terms.total() - s.cost.total()).abs() < 1e-10);
        }
    }

    #[test]
    fn certain_eos_gives_empty_utterance() {
        let mut gen = toy_generator(1);
        let mut p = ModelParams::zeros(6, gen.vocab.len(), gen.space.dim());
        // bias-free model: make h positive and only the EOS row respond
        let n = 6;
        let m = gen.space.dim();
        let set = p.set_mut();
        for k in 0..n {
            set.tensor_mut(3).set(k, gen.vocab.bos(), 1.0); // embedding of <s>
            set.tensor_mut(0).set(2 * n + k, k, 30.0); // output gate
            set.tensor_mut(0).set(3 * n + m + k, k, 30.0); // c_hat
            set.tensor_mut(0).set(k, k, 30.0); // input gate
            set.tensor_mut(2).set(gen.vocab.eos(), k, 200.0);
        }
        gen.params = p;
        let s = sample_utterance(&gen, &DialogueAct::new("inform"), &mut seeded_rng(0), 10).unwrap();
        assert!(s.ids.is_empty());
        assert!(s.terminated);
    }

    fn ranked(tokens: &str, cost: f64, err_slots: &[&str], d: &DialogueAct) -> Ranked {
        let mut t: Vec<String> = tokens.split_whitespace().map(String::from).collect();
        t.extend(err_slots.iter().map(|s| format!("<I.{s}>")));
        Ranked::new(t, cost, d, 10.0)
    }

    #[test]
    fn rerank_arithmetic_and_ordering() {
        let d = da(&["a", "b"]);
        // equal cost, (0,0) vs (1,0): error-free first
        let good = ranked("x", 3.0, &["a", "b"], &d);
        let bad = ranked("y", 3.0, &["a"], &d);
        let out = rank_candidates(vec![bad.clone(), good.clone()], 2);
        assert_eq!(out[0], good);
        // A: cost 4, ERR 0 ; B: cost 1, ERR 0.5 -> R_A = -4 > R_B = -6
        let a = ranked("p", 4.0, &["a", "b"], &d);
        let b = ranked("q", 1.0, &["a"], &d);
        assert_eq!(a.score, -4.0);
        assert_eq!(b.score, -6.0);
        let out = rank_candidates(vec![b, a.clone()], 2);
        assert_eq!(out[0], a);
    }

    #[test]
    fn dedupe_and_tie_breaks() {
        let d = DialogueAct::new("goodbye");
        let c = |t: &str| ranked(t, 1.0, &[], &d);
        let out = rank_candidates(vec![c("b a"), c("a"), c("b a"), c("a b"), c("c")], 5);
        let texts: Vec<String> = out.iter().map(|r| r.tokens.join(" ")).collect();
        assert_eq!(texts, ["a", "c", "a b", "b a"]);
        assert_eq!(rank_candidates(vec![c("a"), c("b")], 1).len(), 1);
    }

    #[test]
    fn rerank_is_deterministic_and_sorted() {
        let gen = toy_generator(5);
        let d = DialogueAct::new("inform").with("b", Value::Literal("q".into()));
        let cfg = RerankConfig { max_len: 8, ..Default::default() };
        let a = rerank(&d, &gen, &cfg, &mut seeded_rng(2)).unwrap();
        let b = rerank(&d, &gen, &cfg, &mut seeded_rng(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 5);
        assert!(a.windows(2).all(|w| w[0].score >= w[1].score));
        let uniq: HashSet<_> = a.iter().map(|r| r.tokens.clone()).collect();
        assert_eq!(uniq.len(), a.len());
        assert!(RerankConfig { top_k: 30, ..Default::default() }.validate().is_err());
    }
}
