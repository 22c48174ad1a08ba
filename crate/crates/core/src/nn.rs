//! Dense numeric kernels and parameter containers.
//!
//! Everything is `f64`, row-major and allocation-light. The SC-LSTM only needs
//! matrix-vector products and rank-one updates, so there is no general tensor
//! type here.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and a stream label.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `y = Aᵀ x`
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (row, &xr) in self.data.chunks_exact(self.cols).zip(x) {
            if xr != 0.0 {
                axpy(xr, row, &mut y);
            }
        }
        y
    }

    /// `A += alpha · u vᵀ`
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &ur) in self.data.chunks_exact_mut(self.cols).zip(u) {
            let a = alpha * ur;
            if a != 0.0 {
                axpy(a, v, row);
            }
        }
    }

    /// `A[:, c] += alpha · v`
    pub fn add_to_column(&mut self, c: usize, alpha: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self.data[r * self.cols + c] += alpha * x;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

fn max_of(z: &[f64]) -> f64 {
    z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn log_sum_exp(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Empty("log-sum-exp of an empty vector"));
    }
    let m = max_of(z);
    Ok(m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
}

pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Empty("softmax of an empty vector"));
    }
    let m = max_of(z);
    let mut p: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    Ok(p)
}

pub fn log_softmax(z: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(z)?;
    Ok(z.iter().map(|v| v - lse).collect())
}

/// Draw an index from a categorical distribution.
pub fn sample_categorical(p: &[f64], rng: &mut SeededRng) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::Empty("categorical distribution"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::NotNormalized(sum));
    }
    let u: f64 = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last_positive = i;
            acc += pi;
            if u < acc {
                return Ok(i);
            }
        }
    }
    // u landed in the rounding slack above the accumulated mass
    Ok(last_positive)
}

/// Named collection of matrices (vectors are `n x 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.names.push(name.into());
        self.tensors.push(m);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn tensor(&self, i: usize) -> &Matrix {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|m| m.data.len()).sum()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    fn check_shape(&self, other: &ParamSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "parameter sets {:?} and {:?} differ",
                self.shapes(),
                other.shapes()
            )))
        }
    }

    pub fn shapes(&self) -> Vec<(String, (usize, usize))> {
        self.iter().map(|(n, m)| (n.to_string(), m.shape())).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for m in &self.tensors {
            out.extend_from_slice(&m.data);
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`], using `self` as the shape template.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_values() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a parameter set of {}",
                flat.len(),
                self.num_values()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for m in &mut out.tensors {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            axpy(alpha, &b.data, &mut a.data);
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for m in &mut self.tensors {
            m.data.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|m| m.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the flattened l2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// One SGD update, `θ ← θ − lr·(g + l2·θ)`.
///
/// Callers pass `l2 = 0` except on the example that closes a regularisation
/// window.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64, l2: f64) -> Result<()> {
    params.check_shape(grads)?;
    for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (pv, gv) in p.data.iter_mut().zip(&g.data) {
            *pv -= lr * (gv + l2 * *pv);
        }
    }
    Ok(())
}

pub const DEFAULT_FD_EPS: f64 = 1e-5;
pub const FIVE_POINT_STEP: f64 = 1e-3;

/// Central-difference gradient of `cost` at `params`.
pub fn finite_diff_grad<F>(cost: F, params: &ParamSet, eps: f64) -> ParamSet
where
    F: Fn(&ParamSet) -> f64,
{
    stencil_grad(&cost, params, |at| (at(eps) - at(-eps)) / (2.0 * eps))
}

/// Fourth-order central difference `(8(f(+h)-f(-h)) - (f(+2h)-f(-2h))) / 12h`.
pub fn five_point_grad<F>(cost: F, params: &ParamSet, h: f64) -> ParamSet
where
    F: Fn(&ParamSet) -> f64,
{
    stencil_grad(&cost, params, |at| {
        (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
    })
}

fn stencil_grad<F, S>(cost: &F, params: &ParamSet, stencil: S) -> ParamSet
where
    F: Fn(&ParamSet) -> f64,
    S: Fn(&mut dyn FnMut(f64) -> f64) -> f64,
{
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    for t in 0..params.tensors.len() {
        for k in 0..params.tensors[t].data.len() {
            let orig = params.tensors[t].data[k];
            let mut at = |x: f64| {
                probe.tensors[t].data[k] = orig + x;
                cost(&probe)
            };
            grad.tensors[t].data[k] = stencil(&mut at);
            probe.tensors[t].data[k] = orig;
        }
    }
    grad
}

/// Largest elementwise relative error `|a-b| / max(|a|+|b|, floor)`.
pub fn max_relative_error(a: &ParamSet, b: &ParamSet, floor: f64) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const PARAMSET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ParamSetFile {
    version: u32,
    tensors: Vec<TensorRecord>,
}

impl ParamSet {
    pub(crate) fn to_file(&self) -> ParamSetFile {
        ParamSetFile {
            version: PARAMSET_FORMAT_VERSION,
            tensors: self
                .iter()
                .map(|(name, m)| TensorRecord {
                    name: name.to_string(),
                    rows: m.rows,
                    cols: m.cols,
                    data: m.data.clone(),
                })
                .collect(),
        }
    }

    pub(crate) fn from_file(file: ParamSetFile) -> Result<Self> {
        if file.version != PARAMSET_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported parameter format version {}",
                file.version
            )));
        }
        let mut set = ParamSet::new();
        for t in file.tensors {
            let m = Matrix::from_vec(t.rows, t.cols, t.data)?;
            if !m.is_finite() {
                return Err(Error::Config(format!("tensor `{}` has non-finite values", t.name)));
            }
            set.push(t.name, m);
        }
        Ok(set)
    }

    /// Versioned JSON container with named shapes and row-major data.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }
}
