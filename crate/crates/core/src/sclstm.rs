//! The semantically conditioned LSTM: cell, forward pass, regularised
//! cross-entropy cost, hand-written BPTT and the maximum-likelihood trainer.
//!
//! One step consumes token `w` and the previous state `(h, c, d)`:
//!
//! ```text
//! [i; f; o; r; ĉ] = [σ; σ; σ; σ; tanh](W_gates · [E w; h])
//! d' = r ⊙ d
//! c' = f ⊙ c + i ⊙ ĉ + tanh(W_dc · d')
//! h' = o ⊙ tanh(c')
//! p  = softmax(W_ho · h')
//! ```
//!
//! The reading gate `r` has one row per DA feature, so `W_gates` is
//! `(4n + |d|) x 2n`.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::da::{DaFeatureSpace, Instance};
use crate::error::{Error, Result};
use crate::nn::{self, seeded_rng, Matrix, ParamSet, SeededRng};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// `<s>`, `</s>` and `<unk>` come first, then the remaining tokens in
    /// sorted order.
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: std::collections::BTreeSet<String> =
            tokens.into_iter().map(|s| s.as_ref().to_string()).collect();
        for special in [BOS, EOS, UNK] {
            set.remove(special);
        }
        let mut all = vec![BOS.to_string(), EOS.to_string(), UNK.to_string()];
        all.extend(set);
        Vocab::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> usize {
        self.index[BOS]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn unk(&self) -> usize {
        self.index[UNK]
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or_else(|| self.unk())
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

/// All learned weights. Stored as a [`ParamSet`] so the optimiser and the
/// finite-difference oracle see one flat container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    hidden: usize,
    vocab_size: usize,
    da_dim: usize,
    set: ParamSet,
}

const W_GATES: usize = 0;
const W_DC: usize = 1;
const W_HO: usize = 2;
const EMBED: usize = 3;

impl ModelParams {
    pub fn zeros(hidden: usize, vocab_size: usize, da_dim: usize) -> Self {
        let n = hidden;
        let mut set = ParamSet::new();
        set.push("w_gates", Matrix::zeros(4 * n + da_dim, 2 * n));
        set.push("w_dc", Matrix::zeros(n, da_dim));
        set.push("w_ho", Matrix::zeros(vocab_size, n));
        set.push("embed", Matrix::zeros(n, vocab_size));
        ModelParams {
            hidden,
            vocab_size,
            da_dim,
            set,
        }
    }

    /// Every entry uniform on `[-scale, scale]`.
    pub fn random(hidden: usize, vocab_size: usize, da_dim: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(hidden, vocab_size, da_dim);
        for i in 0..p.set.len() {
            let (r, c) = p.set.tensor(i).shape();
            *p.set.tensor_mut(i) = Matrix::uniform(r, c, scale, rng);
        }
        p
    }

    pub fn from_set(set: ParamSet) -> Result<Self> {
        let names: Vec<&str> = set.names().collect();
        if names != ["w_gates", "w_dc", "w_ho", "embed"] {
            return Err(Error::ShapeMismatch(format!("unexpected tensors {names:?}")));
        }
        let (vocab_size, hidden) = set.tensor(W_HO).shape();
        let (_, da_dim) = set.tensor(W_DC).shape();
        let expected = Self::zeros(hidden, vocab_size, da_dim);
        if !expected.set.same_shape(&set) {
            return Err(Error::ShapeMismatch(format!("inconsistent shapes {:?}", set.shapes())));
        }
        Ok(ModelParams {
            hidden,
            vocab_size,
            da_dim,
            set,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn da_dim(&self) -> usize {
        self.da_dim
    }

    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    pub fn into_set(self) -> ParamSet {
        self.set
    }

    pub fn w_gates(&self) -> &Matrix {
        self.set.tensor(W_GATES)
    }

    pub fn w_dc(&self) -> &Matrix {
        self.set.tensor(W_DC)
    }

    pub fn w_ho(&self) -> &Matrix {
        self.set.tensor(W_HO)
    }

    pub fn embed(&self) -> &Matrix {
        self.set.tensor(EMBED)
    }

    /// Copy of these parameters with the values of `set` (same layout).
    pub fn with_set(&self, set: ParamSet) -> Result<Self> {
        if !self.set.same_shape(&set) {
            return Err(Error::ShapeMismatch("parameter layout differs".into()));
        }
        Ok(ModelParams { set, ..self.clone() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl StepState {
    pub fn initial(hidden: usize, d0: &[f64]) -> Self {
        StepState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
            d: d0.to_vec(),
        }
    }
}

/// Everything one step computed; the BPTT cache.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub token: usize,
    pub input: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub r: Vec<f64>,
    pub c_hat: Vec<f64>,
    /// `tanh(W_dc d_t)`
    pub g: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub fn cell_step(token: usize, prev: &StepState, theta: &ModelParams) -> Result<(StepState, StepRecord)> {
    let n = theta.hidden;
    let m = theta.da_dim;
    if token >= theta.vocab_size {
        return Err(Error::OutOfVocabulary {
            index: token,
            size: theta.vocab_size,
        });
    }
    if prev.h.len() != n || prev.c.len() != n || prev.d.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "state (h={}, c={}, d={}) for a model with n={n}, |d|={m}",
            prev.h.len(),
            prev.c.len(),
            prev.d.len()
        )));
    }
    let mut input = theta.embed().column(token);
    input.extend_from_slice(&prev.h);
    let a = theta.w_gates().matvec(&input);
    let i = nn::sigmoid(&a[..n]);
    let f = nn::sigmoid(&a[n..2 * n]);
    let o = nn::sigmoid(&a[2 * n..3 * n]);
    let r = nn::sigmoid(&a[3 * n..3 * n + m]);
    let c_hat = nn::tanh(&a[3 * n + m..]);
    let d: Vec<f64> = r.iter().zip(&prev.d).map(|(r, d)| r * d).collect();
    let g = nn::tanh(&theta.w_dc().matvec(&d));
    let c: Vec<f64> = (0..n)
        .map(|k| f[k] * prev.c[k] + i[k] * c_hat[k] + g[k])
        .collect();
    let tanh_c = nn::tanh(&c);
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    Ok((
        StepState { h, c, d },
        StepRecord {
            token,
            input,
            i,
            f,
            o,
            r,
            c_hat,
            g,
            tanh_c,
        },
    ))
}

/// Output-layer log-probabilities for a hidden state.
pub fn output_log_probs(h: &[f64], theta: &ModelParams) -> Vec<f64> {
    nn::log_softmax(&theta.w_ho().matvec(h)).expect("vocabulary is nonempty")
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `states[0]` is the initial state; `states[t]` follows step `t`.
    pub states: Vec<StepState>,
    pub steps: Vec<StepRecord>,
    /// Log next-token distribution emitted after each step.
    pub log_probs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn probs(&self, t: usize) -> Vec<f64> {
        self.log_probs[t].iter().map(|l| l.exp()).collect()
    }
}

pub fn forward(tokens: &[usize], d0: &[f64], theta: &ModelParams) -> Result<ForwardTrace> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    let mut states = Vec::with_capacity(tokens.len() + 1);
    let mut steps = Vec::with_capacity(tokens.len());
    let mut log_probs = Vec::with_capacity(tokens.len());
    states.push(StepState::initial(theta.hidden, d0));
    for &w in tokens {
        let (next, rec) = cell_step(w, states.last().expect("nonempty"), theta)?;
        log_probs.push(output_log_probs(&next.h, theta));
        states.push(next);
        steps.push(rec);
    }
    Ok(ForwardTrace {
        states,
        steps,
        log_probs,
    })
}

/// Weights of the three cost terms plus the transition constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostSpec {
    pub nll_weight: f64,
    pub final_d_weight: f64,
    pub eta: f64,
    pub xi: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            nll_weight: 1.0,
            final_d_weight: 1.0,
            eta: 1e-4,
            xi: 100.0,
        }
    }
}

impl CostSpec {
    /// Plain negative log-likelihood, no DA regularisers.
    pub fn nll_only() -> Self {
        CostSpec {
            nll_weight: 1.0,
            final_d_weight: 0.0,
            eta: 0.0,
            xi: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostTerms {
    pub nll: f64,
    /// `‖d_T‖₁`
    pub final_d: f64,
    /// `Σ η ξ^‖d_{t+1} − d_t‖₁`
    pub transition: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.nll + self.final_d + self.transition
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn check_targets(trace: &ForwardTrace, targets: &[usize]) -> Result<()> {
    if targets.len() != trace.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for a trace of length {}",
            targets.len(),
            trace.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= trace.log_probs[0].len()) {
        return Err(Error::OutOfVocabulary {
            index: bad,
            size: trace.log_probs[0].len(),
        });
    }
    Ok(())
}

pub fn cost_terms(trace: &ForwardTrace, targets: &[usize], spec: &CostSpec) -> Result<CostTerms> {
    check_targets(trace, targets)?;
    let nll = -targets
        .iter()
        .zip(&trace.log_probs)
        .map(|(&y, lp)| lp[y])
        .sum::<f64>();
    let final_d = l1(&trace.states.last().expect("nonempty").d);
    let transition = trace
        .states
        .windows(2)
        .map(|w| spec.eta * spec.xi.powf(l1_diff(&w[1].d, &w[0].d)))
        .sum();
    Ok(CostTerms {
        nll: spec.nll_weight * nll,
        final_d: spec.final_d_weight * final_d,
        transition,
    })
}

/// Regularised cross-entropy cost of one sentence (default constants).
pub fn ml_cost(trace: &ForwardTrace, targets: &[usize]) -> Result<f64> {
    Ok(cost_terms(trace, targets, &CostSpec::default())?.total())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Analytic gradient of the default cost.
pub fn backward(trace: &ForwardTrace, targets: &[usize], theta: &ModelParams) -> Result<ParamSet> {
    backward_with(trace, targets, theta, &CostSpec::default())
}

pub fn backward_with(trace: &ForwardTrace, targets: &[usize], theta: &ModelParams, spec: &CostSpec) -> Result<ParamSet> {
    let mut grads = theta.set.zeros_like();
    accumulate_gradient(trace, targets, theta, spec, 1.0, &mut grads)?;
    Ok(grads)
}

/// `grads += scale · ∂cost/∂θ` for one traced sentence.
pub fn accumulate_gradient(
    trace: &ForwardTrace,
    targets: &[usize],
    theta: &ModelParams,
    spec: &CostSpec,
    scale: f64,
    grads: &mut ParamSet,
) -> Result<()> {
    check_targets(trace, targets)?;
    let n = theta.hidden;
    let m = theta.da_dim;
    let big_t = trace.len();
    let stale = trace.states.iter().any(|s| s.h.len() != n || s.d.len() != m)
        || trace.log_probs[0].len() != theta.vocab_size
        || !theta.set.same_shape(grads);
    if stale {
        return Err(Error::ShapeMismatch("trace does not match the model".into()));
    }

    // dL/dd_t for t = 0..=T from the regularisers; the recurrent and W_dc
    // paths are added during the sweep.
    let mut dd: Vec<Vec<f64>> = vec![vec![0.0; m]; big_t + 1];
    for (k, v) in trace.states[big_t].d.iter().enumerate() {
        dd[big_t][k] += spec.final_d_weight * sign(*v);
    }
    if spec.eta != 0.0 {
        for t in 1..=big_t {
            let (cur, prev) = (&trace.states[t].d, &trace.states[t - 1].d);
            let s = l1_diff(cur, prev);
            let coef = spec.eta * spec.xi.powf(s) * spec.xi.ln();
            for k in 0..m {
                let sg = coef * sign(cur[k] - prev[k]);
                dd[t][k] += sg;
                dd[t - 1][k] -= sg;
            }
        }
    }

    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    for t in (1..=big_t).rev() {
        let rec = &trace.steps[t - 1];
        let state = &trace.states[t];
        let prev = &trace.states[t - 1];

        let mut dz: Vec<f64> = trace.log_probs[t - 1]
            .iter()
            .map(|l| spec.nll_weight * l.exp())
            .collect();
        dz[targets[t - 1]] -= spec.nll_weight;
        let mut dh = theta.w_ho().matvec_t(&dz);
        grads.tensor_mut(W_HO).add_outer(scale, &dz, &state.h);
        nn::axpy(1.0, &dh_next, &mut dh);

        let mut da = vec![0.0; 4 * n + m];
        let mut dc = dc_next.clone();
        for k in 0..n {
            let tc = rec.tanh_c[k];
            dc[k] += dh[k] * rec.o[k] * (1.0 - tc * tc);
            let d_o = dh[k] * tc;
            da[2 * n + k] = d_o * rec.o[k] * (1.0 - rec.o[k]);
        }
        let mut dg_pre = vec![0.0; n];
        for k in 0..n {
            let di = dc[k] * rec.c_hat[k];
            let df = dc[k] * prev.c[k];
            let dc_hat = dc[k] * rec.i[k];
            da[k] = di * rec.i[k] * (1.0 - rec.i[k]);
            da[n + k] = df * rec.f[k] * (1.0 - rec.f[k]);
            da[3 * n + m + k] = dc_hat * (1.0 - rec.c_hat[k] * rec.c_hat[k]);
            dg_pre[k] = dc[k] * (1.0 - rec.g[k] * rec.g[k]);
            dc_next[k] = dc[k] * rec.f[k];
        }
        grads.tensor_mut(W_DC).add_outer(scale, &dg_pre, &state.d);
        let from_dc = theta.w_dc().matvec_t(&dg_pre);
        let (before, after) = dd.split_at_mut(t);
        let dd_t = &mut after[0];
        nn::axpy(1.0, &from_dc, dd_t);
        for k in 0..m {
            let dr = dd_t[k] * prev.d[k];
            da[3 * n + k] = dr * rec.r[k] * (1.0 - rec.r[k]);
            before[t - 1][k] += dd_t[k] * rec.r[k];
        }

        grads.tensor_mut(W_GATES).add_outer(scale, &da, &rec.input);
        let dx = theta.w_gates().matvec_t(&da);
        grads.tensor_mut(EMBED).add_to_column(rec.token, scale, &dx[..n]);
        dh_next.copy_from_slice(&dx[n..]);
    }
    Ok(())
}

/// A sentence ready for training: `inputs = <s> w1 .. wk`,
/// `targets = w1 .. wk </s>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub d0: Vec<f64>,
}

impl Example {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S], d0: Vec<f64>, vocab: &Vocab) -> Self {
        let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t.as_ref())).collect();
        Self::from_ids(&ids, true, d0, vocab)
    }

    /// `terminated = false` drops the final `</s>` target (sequences cut by
    /// the length cap).
    pub fn from_ids(ids: &[usize], terminated: bool, d0: Vec<f64>, vocab: &Vocab) -> Self {
        let mut inputs = Vec::with_capacity(ids.len() + 1);
        inputs.push(vocab.bos());
        let mut targets = ids.to_vec();
        if terminated {
            inputs.extend_from_slice(ids);
            targets.push(vocab.eos());
        } else {
            inputs.extend_from_slice(&ids[..ids.len().saturating_sub(1)]);
        }
        Example { inputs, targets, d0 }
    }

    pub fn from_instance(inst: &Instance, vocab: &Vocab, space: &DaFeatureSpace) -> Result<Self> {
        Ok(Self::from_tokens(&inst.delex_tokens, space.encode(&inst.da)?, vocab))
    }

    pub fn cost(&self, theta: &ModelParams) -> Result<CostTerms> {
        cost_terms(&forward(&self.inputs, &self.d0, theta)?, &self.targets, &CostSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate after an epoch without
    /// validation improvement.
    pub lr_decay: f64,
    pub l2: f64,
    /// The l2 term is applied once per this many training examples.
    pub l2_every: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip: f64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 100,
            lr: 0.1,
            lr_decay: 0.5,
            l2: 1e-5,
            l2_every: 10,
            patience: 5,
            max_epochs: 100,
            seed: 1,
            clip: 5.0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 {
            return bad("hidden size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.l2 < 0.0 || self.l2_every == 0 {
            return bad("l2 must be nonnegative and l2_every positive");
        }
        if self.clip <= 0.0 || self.init_scale < 0.0 {
            return bad("clip must be positive and init_scale nonnegative");
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&s)?
        } else {
            serde_json::from_str(&s)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short stable digest of the configuration, stored in checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sentence cost accumulated during the epoch.
    pub train_cost: f64,
    pub train_nll_per_token: f64,
    pub valid_cost: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub fn mean_cost(data: &[Example], theta: &ModelParams) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for ex in data {
        let c = ex.cost(theta)?;
        total += c.total();
        nll += c.nll;
        tokens += ex.targets.len();
    }
    Ok((total / data.len().max(1) as f64, nll / tokens.max(1) as f64))
}

/// One SGD update on one sentence; returns its cost before the update.
pub fn sgd_sentence(ex: &Example, theta: &mut ModelParams, lr: f64, l2: f64, clip: f64) -> Result<CostTerms> {
    let trace = forward(&ex.inputs, &ex.d0, theta)?;
    let spec = CostSpec::default();
    let cost = cost_terms(&trace, &ex.targets, &spec)?;
    let mut grads = backward_with(&trace, &ex.targets, theta, &spec)?;
    grads.clip_norm(clip);
    nn::sgd_step(&mut theta.set, &grads, lr, l2)?;
    Ok(cost)
}

/// Maximum-likelihood training, one sentence per update, with early
/// stopping on the validation cost. Returns the best-validation parameters.
pub fn train_ml(train: &[Example], valid: &[Example], theta0: ModelParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let valid = if valid.is_empty() { train } else { valid };
    let mut rng = seeded_rng(cfg.seed);
    let mut theta = theta0;
    let mut best = theta.clone();
    let mut best_cost = mean_cost(valid, &theta)?.0;
    let mut best_epoch = 0;
    let mut lr = cfg.lr;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut seen = 0usize;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut cost_sum = 0.0;
        let mut nll_sum = 0.0;
        let mut tokens = 0usize;
        for &i in &order {
            seen += 1;
            let l2 = if seen.is_multiple_of(cfg.l2_every) { cfg.l2 } else { 0.0 };
            let c = sgd_sentence(&train[i], &mut theta, lr, l2, cfg.clip)?;
            cost_sum += c.total();
            nll_sum += c.nll;
            tokens += train[i].targets.len();
        }
        if !theta.set.is_finite() {
            return Err(Error::Config(format!("training diverged at epoch {epoch}")));
        }
        let valid_cost = mean_cost(valid, &theta)?.0;
        history.push(EpochRecord {
            epoch,
            lr,
            train_cost: cost_sum / train.len() as f64,
            train_nll_per_token: nll_sum / tokens as f64,
            valid_cost,
        });
        if valid_cost < best_cost {
            best_cost = valid_cost;
            best = theta.clone();
            best_epoch = epoch;
        } else {
            lr *= cfg.lr_decay;
            if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch,
        history,
    })
}

/// A trained generator: parameters plus the coordinate systems they were
/// trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub space: DaFeatureSpace,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config_hash: String,
    hidden: usize,
    vocab: Vocab,
    features: DaFeatureSpace,
    params: nn::ParamSetFile,
}

impl Generator {
    pub fn new(vocab: Vocab, space: DaFeatureSpace, hidden: usize, init_scale: f64, rng: &mut SeededRng) -> Self {
        let params = ModelParams::random(hidden, vocab.len(), space.dim(), init_scale, rng);
        Generator { params, vocab, space }
    }

    pub fn example(&self, inst: &Instance) -> Result<Example> {
        Example::from_instance(inst, &self.vocab, &self.space)
    }

    pub fn examples(&self, insts: &[Instance]) -> Result<Vec<Example>> {
        insts.iter().map(|i| self.example(i)).collect()
    }

    pub fn to_json(&self, config_hash: &str) -> Result<String> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            hidden: self.params.hidden,
            vocab: self.vocab.clone(),
            features: self.space.clone(),
            params: self.params.set.to_file(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Returns the generator and the stored configuration hash.
    pub fn from_json(s: &str) -> Result<(Self, String)> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", file.version)));
        }
        let mut space = file.features;
        space.rebuild_index();
        let vocab = file.vocab;
        for special in [BOS, EOS, UNK] {
            if !vocab.tokens.iter().any(|t| t == special) {
                return Err(Error::Config(format!("vocabulary lacks `{special}`")));
            }
        }
        if vocab.index.len() != vocab.len() {
            return Err(Error::Config("vocabulary has duplicate tokens".into()));
        }
        let params = ModelParams::from_set(ParamSet::from_file(file.params)?)?;
        if params.hidden != file.hidden || params.vocab_size != vocab.len() || params.da_dim != space.dim() {
            return Err(Error::ShapeMismatch("checkpoint tensors disagree with vocabulary or features".into()));
        }
        Ok((Generator { params, vocab, space }, file.config_hash))
    }

    pub fn save(&self, path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json(config_hash)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
