//! Corpus BLEU-4, slot error rate and data splits.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::da::{lexicalise, Instance};
use crate::decoder::{rerank, slot_count, RerankConfig};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::nn::SeededRng;
use crate::sclstm::Generator;

const MAX_N: usize = 4;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram matches against the references and the hypothesis n-gram
/// total.
pub fn modified_precision<S: AsRef<str>>(hyp: &[S], refs: &[Vec<S>], n: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, n);
    let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = hyp_counts
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

/// Reference length closest to `len`, ties going to the shorter one.
fn closest_ref_len<S>(len: usize, refs: &[Vec<S>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus-level BLEU-4 with uniform weights, clipped counts against multiple
/// references and a corpus brevity penalty. No smoothing.
pub fn corpus_bleu4<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<Vec<S>>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} hypotheses for {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("hypotheses"));
    }
    if refs.iter().any(|r| r.is_empty()) {
        return Err(Error::Empty("reference set"));
    }
    let mut matched = [0usize; MAX_N];
    let mut total = [0usize; MAX_N];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (h, rs) in hyps.iter().zip(refs) {
        for n in 1..=MAX_N {
            let (m, t) = modified_precision(h, rs, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
        hyp_len += h.len();
        ref_len += closest_ref_len(h.len(), rs);
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..MAX_N)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / MAX_N as f64;
    Ok(brevity_penalty(hyp_len, ref_len) * log_p.exp())
}

/// Sentence BLEU-4 with add-one smoothing on orders that have no match.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], refs: &[Vec<S>]) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 1..=MAX_N {
        let (m, t) = modified_precision(hyp, refs, n);
        let p = if m > 0 {
            m as f64 / t as f64
        } else {
            1.0 / (t as f64 + 1.0)
        };
        log_p += p.ln() / MAX_N as f64;
    }
    brevity_penalty(hyp.len(), closest_ref_len(hyp.len(), refs)) * log_p.exp()
}

/// Pooled slot error rate: mean over `(act, candidate)` pairs of
/// `(missing + redundant) / N`.
pub fn slot_error_rate(pairs: &[(usize, usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    Ok(pairs
        .iter()
        .map(|&(m, r, n)| crate::decoder::error_rate(m, r, n))
        .sum::<f64>()
        / pairs.len() as f64)
}

/// Seeded shuffle then a 3:1:1 train/valid/test split (floor, floor, rest).
pub fn split_3_1_1<T: Clone>(data: &[T], seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let n_train = data.len() * 3 / 5;
    let n_valid = data.len() / 5;
    let pick = |r: &[usize]| r.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    (
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_valid]),
        pick(&idx[n_train + n_valid..]),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateReport {
    pub delex: String,
    pub text: String,
    pub score: f64,
    pub missing: usize,
    pub redundant: usize,
    pub err: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActReport {
    pub da: String,
    pub references: Vec<String>,
    pub candidates: Vec<CandidateReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub err: f64,
    pub n_acts: usize,
    pub n_candidates: usize,
    pub acts: Vec<ActReport>,
}

/// Group test instances by act; all references of an act form its
/// reference set. Order of first appearance is kept.
pub fn group_by_act(test: &[Instance]) -> Vec<(&Instance, Vec<&Instance>)> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(&Instance, Vec<&Instance>)> = Vec::new();
    for inst in test {
        let key = inst.da.to_string();
        match index.get(&key) {
            Some(&g) => groups[g].1.push(inst),
            None => {
                index.insert(key, groups.len());
                groups.push((inst, vec![inst]));
            }
        }
    }
    groups
}

/// Rerank-decode every distinct act of the test set and score all top-k
/// candidates against that act's delexicalised references.
pub fn evaluate(gen: &Generator, test: &[Instance], cfg: &RerankConfig, rng: &mut SeededRng) -> Result<EvalReport> {
    let groups = group_by_act(test);
    if groups.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut pairs = Vec::new();
    let mut acts = Vec::new();
    for (head, members) in groups {
        let da = &head.da;
        let ref_set: Vec<Vec<String>> = members.iter().map(|m| m.delex_tokens.clone()).collect();
        let ranked = rerank(da, gen, cfg, rng)?;
        let n = slot_count(da);
        let mut candidates = Vec::new();
        for r in ranked {
            pairs.push((r.missing, r.redundant, n));
            candidates.push(CandidateReport {
                delex: r.tokens.join(" "),
                text: lexicalise(&r.tokens, da).unwrap_or_else(|_| r.tokens.join(" ")),
                score: r.score,
                missing: r.missing,
                redundant: r.redundant,
                err: crate::decoder::error_rate(r.missing, r.redundant, n),
            });
            hyps.push(r.tokens);
            refs.push(ref_set.clone());
        }
        acts.push(ActReport {
            da: da.to_string(),
            references: members.iter().map(|m| m.raw_text.clone()).collect(),
            candidates,
        });
    }
    Ok(EvalReport {
        bleu4: corpus_bleu4(&hyps, &refs)?,
        err: slot_error_rate(&pairs)?,
        n_acts: acts.len(),
        n_candidates: pairs.len(),
        acts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn clipped_unigram_precision() {
        let h = t("the the the the the the the");
        let r = vec![t("the cat is on the mat")];
        assert_eq!(modified_precision(&h, &r, 1), (2, 7));
    }

    #[test]
    fn identical_sentence_is_one() {
        let h = vec![t("a b c d e f")];
        let r = vec![vec![t("a b c d e f")]];
        assert!((corpus_bleu4(&h, &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_fourgram_match_is_zero() {
        let h = vec![t("a b c x e f")];
        let r = vec![vec![t("a b c d e f")]];
        assert_eq!(corpus_bleu4(&h, &r).unwrap(), 0.0);
        // too short for any 4-gram
        assert_eq!(corpus_bleu4(&[t("a b c")], &[vec![t("a b c")]]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_with_brevity_penalty() {
        // hyp 5 tokens, ref 6: p1=5/5 p2=4/4 p3=3/3 p4=2/2, BP = e^{1-6/5}
        let h = vec![t("a b c d e")];
        let r = vec![vec![t("a b c d e f")]];
        let want = (1.0f64 - 6.0 / 5.0).exp();
        assert!((corpus_bleu4(&h, &r).unwrap() - want).abs() < 1e-12);
        // two references: p1=6/6 p2=5/5 p3=3/4 p4=1/3, no penalty
        let h = vec![t("a b c x e f")];
        let r = vec![vec![t("a b c d e f"), t("b c x e g")]];
        let want = (3.0f64 / 4.0 * 1.0 / 3.0).powf(0.25);
        let p = |n| modified_precision(&h[0], &r[0], n);
        assert_eq!((p(1), p(2), p(3), p(4)), ((6, 6), (5, 5), (3, 4), (1, 3)));
        assert!((corpus_bleu4(&h, &r).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn closest_reference_length_ties_shorter() {
        let refs = vec![t("a b c d"), t("a b c d e f")];
        assert_eq!(closest_ref_len(5, &refs), 4);
        assert_eq!(closest_ref_len(6, &refs), 6);
    }

    #[test]
    fn corpus_pools_counts() {
        let h = vec![t("a b c d"), t("w x y z q")];
        let r = vec![vec![t("a b c d")], vec![t("w x y z")]];
        // p1 = 8/9, p2 = 6/7, p3 = 4/5, p4 = 2/3; lengths 9 vs 8
        let want = (8.0f64 / 9.0 * 6.0 / 7.0 * 4.0 / 5.0 * 2.0 / 3.0).powf(0.25);
        assert!((corpus_bleu4(&h, &r).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bleu_errors() {
        assert!(corpus_bleu4::<&str>(&[], &[]).is_err());
        assert!(corpus_bleu4(&[t("a")], &[vec![]]).is_err());
        assert!(corpus_bleu4(&[t("a")], &[]).is_err());
    }

    #[test]
    fn sentence_bleu_smoothing() {
        assert!((sentence_bleu(&t("a b c d"), &[t("a b c d")]) - 1.0).abs() < 1e-12);
        // p1=3/3, p2=2/2, p3=1/1, p4: 0 of 0 -> 1/1
        assert!((sentence_bleu(&t("a b c"), &[t("a b c")]) - 1.0).abs() < 1e-12);
        let s = sentence_bleu(&t("a b x d"), &[t("a b c d")]);
        let want = (3.0f64 / 4.0 * 1.0 / 3.0 * 1.0 / 3.0 * 0.5).powf(0.25);
        assert!((s - want).abs() < 1e-12);
        assert_eq!(sentence_bleu::<&str>(&[], &[t("a")]), 0.0);
    }

    #[test]
    fn err_pooling() {
        assert_eq!(slot_error_rate(&[(0, 0, 3), (2, 1, 3)]).unwrap(), 0.5);
        assert_eq!(slot_error_rate(&[(0, 1, 0)]).unwrap(), 1.0);
        assert!(slot_error_rate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn bleu_in_unit_interval(
            hyps in prop::collection::vec(prop::collection::vec(0u8..5, 0..10), 1..5),
            refs in prop::collection::vec(prop::collection::vec(0u8..5, 1..10), 1..5),
        ) {
            let h: Vec<Vec<String>> = hyps.iter().map(|v| v.iter().map(|x| x.to_string()).collect()).collect();
            let r: Vec<Vec<Vec<String>>> = h.iter().map(|_| refs.iter().map(|v| v.iter().map(|x| x.to_string()).collect()).collect()).collect();
            let b = corpus_bleu4(&h, &r).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
            let copy: Vec<Vec<Vec<String>>> = h.iter().map(|x| vec![x.clone()]).collect();
            let total: usize = h.iter().map(|x| x.len()).sum();
            if h.iter().all(|x| x.len() >= 4) && total > 0 {
                prop_assert!((corpus_bleu4(&h, &copy).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn split_partitions(n in 0usize..200, seed in 0u64..1000) {
            let data: Vec<usize> = (0..n).collect();
            let (a, b, c) = split_3_1_1(&data, seed);
            prop_assert_eq!(a.len(), n * 3 / 5);
            prop_assert_eq!(b.len(), n / 5);
            prop_assert_eq!(a.len() + b.len() + c.len(), n);
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort();
            prop_assert_eq!(all, data.clone());
            prop_assert_eq!(split_3_1_1(&data, seed), (a, b, c));
        }
    }

    #[test]
    fn split_sizes_for_small_corpora() {
        let (a, b, c) = split_3_1_1(&[0u8; 7], 1);
        assert_eq!((a.len(), b.len(), c.len()), (4, 1, 2));
        let (a, b, c) = split_3_1_1(&[0u8; 1], 1);
        assert_eq!((a.len(), b.len(), c.len()), (0, 0, 1));
    }
}
