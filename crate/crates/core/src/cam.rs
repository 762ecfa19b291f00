//! Per-operator-kind cost adjustment multiplier (CAM) predictors.
//!
//! Each operator kind owns a small classifier over the quantized multiplier
//! set Ω, trained online from execution labels. Predictive uncertainty mixes
//! softmax entropy (data noise) with Monte Carlo dropout variance (model
//! ignorance).

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::correction::{self, CorrectionLedger, LeafAssessor};
use crate::plan::{self, NodePath, OpKind, PlanNode};
use crate::seed;
use crate::{Error, Result};

/// The quantized multiplier set, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSet {
    values: Vec<f64>,
}

impl OmegaSet {
    /// `{0.01..0.09} ∪ {0.1..0.9} ∪ {1..9} ∪ {10..100}`.
    pub fn standard() -> Self {
        let mut values = Vec::with_capacity(37);
        values.extend((1..=9).map(|k| k as f64 / 100.0));
        values.extend((1..=9).map(|k| k as f64 / 10.0));
        values.extend((1..=9).map(|k| k as f64));
        values.extend((1..=10).map(|k| (10 * k) as f64));
        OmegaSet { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn one_index(&self) -> usize {
        self.index_of(1.0).expect("Ω contains 1")
    }

    pub fn index_of(&self, w: f64) -> Option<usize> {
        self.values.iter().position(|v| *v == w)
    }

    /// Bucket nearest to `g` in log space; ties go to the smaller bucket.
    pub fn nearest(&self, g: f64) -> usize {
        let lg = g.ln();
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if (v.ln() - lg).abs() < (self.values[best].ln() - lg).abs() {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub buffer_capacity: usize,
    pub mcd_passes: usize,
    pub alpha: f64,
}

impl Default for CamConfig {
    fn default() -> Self {
        CamConfig {
            hidden: 64,
            dropout: 0.1,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 5,
            buffer_capacity: 512,
            mcd_passes: 20,
            alpha: 0.5,
        }
    }
}

impl CamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::config("hidden, batch_size and buffer_capacity must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if self.mcd_passes < 2 {
            return Err(Error::config(format!("mcd_passes {} must be >= 2", self.mcd_passes)));
        }
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("alpha {alpha} must be in (0, 1)")))
    }
}

/// Fully connected ReLU network with dropout after each hidden layer.
///
/// Parameters are stored flat, layer by layer, weights (row per output unit)
/// followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub dropout: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer (after activation and dropout for hidden layers).
    pub inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pub pre: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit: 0 or 1/(1 − p); 1 when dropout is off.
    pub masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// He-uniform hidden layers; output layer zero when `zero_output`.
    pub fn new(sizes: &[usize], dropout: f64, zero_output: bool, rng: &mut seed::Rng) -> Self {
        let mut params = Vec::new();
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                params.push(if zero_output && l + 1 == n_layers { 0.0 } else { rng.random_range(-bound..bound) });
            }
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Mlp { sizes: sizes.to_vec(), params, dropout }
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::Shape { expected: self.n_inputs(), actual: x.len() });
        }
        Ok(())
    }

    /// Forward pass; dropout is active only when `rng` is given.
    pub fn forward(&self, x: &[f64], mut rng: Option<&mut seed::Rng>) -> Trace {
        let n_layers = self.sizes.len() - 1;
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::new();
        let mut masks = Vec::new();
        let keep = 1.0 - self.dropout;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let a = &inputs[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                    self.params[b + o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            if l + 1 == n_layers {
                return Trace { inputs, pre, masks, output: z };
            }
            let mask: Vec<f64> = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    (0..n_out).map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
                }
                _ => vec![1.0; n_out],
            };
            let h = z.iter().zip(&mask).map(|(zi, m)| zi.max(0.0) * m).collect();
            pre.push(z);
            masks.push(mask);
            inputs.push(h);
        }
        unreachable!("network has at least one layer")
    }

    /// Accumulates parameter gradients of a loss whose gradient with respect
    /// to the network output is `d_out`.
    pub fn backward(&self, t: &Trace, d_out: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut d = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let a = &t.inputs[l];
            for o in 0..n_out {
                if d[o] == 0.0 {
                    continue;
                }
                let g = &mut grad[w + o * n_in..w + (o + 1) * n_in];
                for (gi, ai) in g.iter_mut().zip(a) {
                    *gi += d[o] * ai;
                }
                grad[b + o] += d[o];
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                if d[o] == 0.0 {
                    continue;
                }
                let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += wi * d[o];
                }
            }
            for i in 0..n_in {
                let active = t.pre[l - 1][i] > 0.0;
                prev[i] = if active { prev[i] * t.masks[l - 1][i] } else { 0.0 };
            }
            d = prev;
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean cross-entropy of `batch` and its parameter gradient, dropout off.
pub fn cross_entropy_and_grad(net: &Mlp, batch: &[(Vec<f64>, usize)]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    let n = batch.len() as f64;
    for (x, y) in batch {
        let t = net.forward(x, None);
        let p = softmax(&t.output);
        loss -= p[*y].max(f64::MIN_POSITIVE).ln() / n;
        let d: Vec<f64> = p.iter().enumerate().map(|(j, pj)| (pj - f64::from(j == *y)) / n).collect();
        net.backward(&t, &d, &mut grad);
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t as i32);
        let c2 = 1.0 - Self::B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains `net` on uniformly shuffled minibatches of `data` for `epochs`.
/// `loss_grad` maps an output vector and target to the output gradient.
fn train_epochs<T>(
    net: &mut Mlp,
    adam: &mut Adam,
    data: &[(Vec<f64>, T)],
    cfg: &CamConfig,
    rng: &mut seed::Rng,
    loss_grad: impl Fn(&[f64], &T) -> Vec<f64>,
) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; net.params.len()];
            let n = chunk.len() as f64;
            for &i in chunk {
                let (x, y) = &data[i];
                let t = net.forward(x, Some(rng));
                let d: Vec<f64> = loss_grad(&t.output, y).into_iter().map(|g| g / n).collect();
                net.backward(&t, &d, &mut grad);
            }
            adam.step(&mut net.params, &grad, cfg.learning_rate);
        }
    }
}

/// Classifier over Ω for one operator kind, with its replay buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamModel {
    pub kind: OpKind,
    pub config: CamConfig,
    pub net: Mlp,
    adam: Adam,
    pub seed: u64,
    pub updates: u64,
    pub buffer: VecDeque<(Vec<f64>, usize)>,
}

impl CamModel {
    pub fn new(kind: OpKind, n_inputs: usize, n_classes: usize, config: CamConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive_str(seed, "cam-init"));
        let net = Mlp::new(&[n_inputs, config.hidden, config.hidden, n_classes], config.dropout, true, &mut rng);
        let adam = Adam::new(net.params.len());
        CamModel { kind, config, net, adam, seed, updates: 0, buffer: VecDeque::new() }
    }

    /// Softmax over Ω with dropout off.
    pub fn predict(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.net.check_input(e)?;
        Ok(softmax(&self.net.forward(e, None).output))
    }

    /// Softmax over Ω with a fresh dropout mask drawn from `rng`.
    pub fn predict_dropout(&self, e: &[f64], rng: &mut seed::Rng) -> Result<Vec<f64>> {
        self.net.check_input(e)?;
        Ok(softmax(&self.net.forward(e, Some(rng)).output))
    }

    /// Mean cross-entropy over `labels`, dropout off.
    pub fn loss(&self, labels: &[(Vec<f64>, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in labels {
            total -= self.predict(x)?[*y].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / labels.len().max(1) as f64)
    }

    /// Appends `labels` to the replay buffer and trains over the buffer.
    pub fn update(&mut self, labels: &[(Vec<f64>, usize)]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::precondition("update needs at least one label"));
        }
        for (x, y) in labels {
            self.net.check_input(x)?;
            if *y >= self.net.n_outputs() {
                return Err(Error::Label(format!("multiplier index {y} outside [0, {})", self.net.n_outputs())));
            }
        }
        for l in labels {
            if self.buffer.len() == self.config.buffer_capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(l.clone());
        }
        let mut rng = seed::rng(seed::derive(seed::derive_str(self.seed, "cam-train"), self.updates));
        let data: Vec<(Vec<f64>, usize)> = self.buffer.iter().cloned().collect();
        train_epochs(&mut self.net, &mut self.adam, &data, &self.config, &mut rng, |out, y| {
            let mut p = softmax(out);
            p[*y] -= 1.0;
            p
        });
        self.updates += 1;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `−Σ p ln p`, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::contract(format!("not a probability vector (sum {s})")));
    }
    Ok(p.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum::<f64>().max(0.0))
}

/// Largest per-class population variance across dropout passes.
///
/// Deviations are taken from the first pass, so identical passes give
/// exactly zero.
pub fn pass_variance(passes: &[Vec<f64>]) -> f64 {
    let m = passes.len() as f64;
    let k = passes.first().map_or(0, Vec::len);
    (0..k)
        .map(|j| {
            let shift = passes[0][j];
            let mean = passes.iter().map(|p| p[j] - shift).sum::<f64>() / m;
            let sq = passes.iter().map(|p| (p[j] - shift).powi(2)).sum::<f64>() / m;
            (sq - mean * mean).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Monte Carlo dropout uncertainty over `passes` stochastic predictions.
pub fn mcd(m: &CamModel, e: &[f64], passes: usize, seed: u64) -> Result<f64> {
    if passes < 2 {
        return Err(Error::precondition(format!("mcd needs at least 2 passes, got {passes}")));
    }
    let mut rng = seed::rng(seed);
    let ps: Vec<Vec<f64>> = (0..passes).map(|_| m.predict_dropout(e, &mut rng)).collect::<Result<_>>()?;
    Ok(pass_variance(&ps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub entropy: f64,
    pub mcd: f64,
    pub combined: f64,
    pub alpha: f64,
}

impl UncertaintyScore {
    pub fn from_parts(alpha: f64, mcd: f64, entropy: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(UncertaintyScore { entropy, mcd, combined: alpha * mcd + (1.0 - alpha) * entropy, alpha })
    }
}

/// `U = α·mcd + (1 − α)·entropy`, entropy from a dropout-off prediction.
pub fn combined_uncertainty(m: &CamModel, e: &[f64], alpha: f64, passes: usize, seed: u64) -> Result<UncertaintyScore> {
    check_alpha(alpha)?;
    let h = entropy(&m.predict(e)?)?;
    let v = mcd(m, e, passes, seed)?;
    UncertaintyScore::from_parts(alpha, v, h)
}

/// One CAM model per operator kind, created on first use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamSet {
    pub config: CamConfig,
    pub omega: OmegaSet,
    pub n_inputs: usize,
    pub seed: u64,
    pub models: BTreeMap<OpKind, CamModel>,
}

impl CamSet {
    pub fn new(c: &Catalog, config: CamConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(CamSet { config, omega: OmegaSet::standard(), n_inputs: plan::encoding_len(c), seed, models: BTreeMap::new() })
    }

    pub fn model(&self, kind: OpKind) -> Option<&CamModel> {
        self.models.get(&kind)
    }

    fn model_mut(&mut self, kind: OpKind) -> &mut CamModel {
        let (n_in, n_out, cfg) = (self.n_inputs, self.omega.len(), self.config);
        let seed = seed::derive(self.seed, kind.ordinal() as u64);
        self.models.entry(kind).or_insert_with(|| CamModel::new(kind, n_in, n_out, cfg, seed))
    }

    /// Trains each kind's model on its labels; kinds without labels are left
    /// untouched.
    pub fn update(&mut self, labels: &[(OpKind, Vec<f64>, usize)]) -> Result<()> {
        let mut by_kind: BTreeMap<OpKind, Vec<(Vec<f64>, usize)>> = BTreeMap::new();
        for (k, e, y) in labels {
            by_kind.entry(*k).or_default().push((e.clone(), *y));
        }
        for (k, ls) in by_kind {
            self.model_mut(k).update(&ls)?;
        }
        Ok(())
    }

    /// A model that has never been trained predicts uniformly.
    fn predict_or_uniform(&self, kind: OpKind, e: &[f64]) -> Result<Vec<f64>> {
        match self.models.get(&kind) {
            Some(m) => m.predict(e),
            None => Ok(vec![1.0 / self.omega.len() as f64; self.omega.len()]),
        }
    }

    /// Argmax multiplier and its uncertainty for one encoded operator.
    pub fn assess_encoding(&self, kind: OpKind, e: &[f64], seed: u64) -> Result<(usize, UncertaintyScore)> {
        let p = self.predict_or_uniform(kind, e)?;
        let argmax = p
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if *v > p[best] { j } else { best });
        let score = match self.models.get(&kind) {
            Some(m) => combined_uncertainty(m, e, self.config.alpha, self.config.mcd_passes, seed)?,
            None => UncertaintyScore::from_parts(self.config.alpha, 0.0, entropy(&p)?)?,
        };
        Ok((argmax, score))
    }
}

/// Leaf assessor over a [`CamSet`] that memoizes by operator encoding.
///
/// The dropout seed of each assessment is derived from the encoding itself,
/// so results do not depend on evaluation order or thread interleaving.
pub struct Assessor<'a> {
    cams: &'a CamSet,
    catalog: &'a Catalog,
    seed: u64,
    cache: Mutex<HashMap<Vec<u64>, (usize, UncertaintyScore)>>,
}

impl<'a> Assessor<'a> {
    pub fn new(cams: &'a CamSet, catalog: &'a Catalog, seed: u64) -> Self {
        Assessor { cams, catalog, seed, cache: Mutex::new(HashMap::new()) }
    }

    pub fn assess_node(&self, n: &PlanNode) -> Result<(usize, UncertaintyScore)> {
        let e = plan::encode_operator(n, self.catalog)?;
        let key = e.key();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*hit);
        }
        let bytes: Vec<u8> = key.iter().flat_map(|k| k.to_le_bytes()).collect();
        let s = seed::derive(self.seed, seed::fnv1a(&bytes));
        let out = self.cams.assess_encoding(n.kind, &e.vector, s)?;
        self.cache.lock().expect("cache lock").insert(key, out);
        Ok(out)
    }
}

impl LeafAssessor for Assessor<'_> {
    fn assess(&self, leaf: &PlanNode) -> Result<(f64, f64)> {
        let (k, u) = self.assess_node(leaf)?;
        Ok((self.cams.omega.values()[k], u.combined))
    }
}

/// Continuous multiplier for `leaf` whose corrected benefit best matches
/// `b_t`, searched over `[0.1, 100]` in log space.
///
/// Bisection on the signed benefit gap; if the gap is not monotone over the
/// bracket, a 64-point log-spaced grid scan is used instead.
pub fn regression_label(p: &PlanNode, leaf: &NodePath, b_t: f64, c_noindex: f64, tolerance: f64) -> Result<f64> {
    if !(tolerance > 0.0) {
        return Err(Error::precondition(format!("tolerance {tolerance} must be > 0")));
    }
    let gap = |w: f64| -> Result<f64> {
        let mut trial = p.clone();
        correction::update_cost(&mut trial, leaf, w, &mut CorrectionLedger::default())?;
        Ok(correction::estimated_benefit(c_noindex, trial.total_cost())? - b_t)
    };
    let (mut lo, mut hi) = (0.1f64, 100.0f64);
    let (mut g_lo, mut g_hi) = (gap(lo)?, gap(hi)?);
    if g_lo == g_hi {
        // Leaf cost does not move the benefit: ω = 1 fits as well as any.
        return Ok(1.0);
    }
    if g_lo.signum() == g_hi.signum() {
        return Ok(if g_lo.abs() <= g_hi.abs() { lo } else { hi });
    }
    let mut monotone = true;
    while hi - lo > tolerance {
        let mid = ((lo.ln() + hi.ln()) / 2.0).exp();
        let g_mid = gap(mid)?;
        if (g_mid - g_lo) * (g_hi - g_mid) < 0.0 {
            monotone = false;
            break;
        }
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    if monotone {
        return Ok(if g_lo.abs() <= g_hi.abs() { lo } else { hi });
    }
    let (a, b) = (0.1f64.ln(), 100f64.ln());
    let mut best = (f64::INFINITY, 1.0);
    for i in 0..64 {
        let w = (a + (b - a) * i as f64 / 63.0).exp();
        let g = gap(w)?.abs();
        if g < best.0 {
            best = (g, w);
        }
    }
    Ok(best.1)
}

/// Regression variant: predicts `ln ω` directly with the same network shape
/// and a squared-error loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCam {
    pub kind: OpKind,
    pub config: CamConfig,
    pub net: Mlp,
    adam: Adam,
    pub seed: u64,
    pub updates: u64,
    pub buffer: VecDeque<(Vec<f64>, f64)>,
}

impl RegressionCam {
    pub fn new(kind: OpKind, n_inputs: usize, config: CamConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive_str(seed, "cam-init"));
        let net = Mlp::new(&[n_inputs, config.hidden, config.hidden, 1], config.dropout, true, &mut rng);
        let adam = Adam::new(net.params.len());
        RegressionCam { kind, config, net, adam, seed, updates: 0, buffer: VecDeque::new() }
    }

    /// Predicted multiplier, clamped to the search bracket `[0.1, 100]`.
    pub fn predict(&self, e: &[f64]) -> Result<f64> {
        self.net.check_input(e)?;
        Ok(self.net.forward(e, None).output[0].exp().clamp(0.1, 100.0))
    }

    pub fn update(&mut self, labels: &[(Vec<f64>, f64)]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::precondition("update needs at least one label"));
        }
        for (x, w) in labels {
            self.net.check_input(x)?;
            if !(*w > 0.0) {
                return Err(Error::Label(format!("multiplier {w} must be > 0")));
            }
        }
        for (x, w) in labels {
            if self.buffer.len() == self.config.buffer_capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back((x.clone(), w.ln()));
        }
        let mut rng = seed::rng(seed::derive(seed::derive_str(self.seed, "cam-train"), self.updates));
        let data: Vec<(Vec<f64>, f64)> = self.buffer.iter().cloned().collect();
        train_epochs(&mut self.net, &mut self.adam, &data, &self.config, &mut rng, |out, y| vec![2.0 * (out[0] - y)]);
        self.updates += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n_in: usize, seed: u64) -> CamModel {
        CamModel::new(OpKind::IndexScan, n_in, 37, CamConfig::default(), seed)
    }

    fn input(seed: u64, n: usize) -> Vec<f64> {
        let mut r = seed::rng(seed);
        (0..n).map(|_| r.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn omega_structure() {
        let o = OmegaSet::standard();
        assert_eq!(o.len(), 37);
        assert!(o.values().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(o.values()[o.one_index()], 1.0);
        assert_eq!(o.values()[0], 0.01);
        assert_eq!(o.values()[36], 100.0);
        assert_eq!(o.values()[o.nearest(2.0)], 2.0);
        assert_eq!(o.values()[o.nearest(0.052)], 0.05);
        assert_eq!(o.values()[o.nearest(17.0)], 20.0);
    }

    #[test]
    fn untrained_model_is_uniform_and_deterministic() {
        let m = model(10, 1);
        let x = input(2, 10);
        let p = m.predict(&x).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 37.0).abs() < 1e-15));
        assert_eq!(p, m.predict(&x).unwrap());
        assert!(matches!(m.predict(&[0.0; 3]), Err(Error::Shape { expected: 10, actual: 3 })));
        let h = entropy(&p).unwrap();
        assert!((h - 37f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_examples() {
        let mut one_hot = vec![0.0; 37];
        one_hot[4] = 1.0;
        assert_eq!(entropy(&one_hot).unwrap(), 0.0);
        let mut half = vec![0.0; 37];
        half[0] = 0.5;
        half[1] = 0.5;
        assert!((entropy(&half).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(entropy(&[0.5, 0.4]), Err(Error::Contract(_))));
    }

    #[test]
    fn mcd_examples() {
        let mut a = vec![0.0; 37];
        let mut b = vec![0.0; 37];
        a[3] = 0.2;
        b[3] = 0.4;
        a[0] = 0.8;
        b[0] = 0.6;
        // Class 0 moves by the same amount, so both classes give 0.01.
        assert!((pass_variance(&[a.clone(), b.clone()]) - 0.01).abs() < 1e-15);
        assert_eq!(pass_variance(&[a.clone(), b.clone()]), pass_variance(&[b, a]));
        let mut m = model(6, 3);
        assert!(matches!(mcd(&m, &input(1, 6), 1, 0), Err(Error::Precondition(_))));
        m.net.dropout = 0.0;
        // Random output layer so predictions are not trivially uniform.
        let mut r = seed::rng(5);
        m.net = Mlp::new(&[6, 64, 64, 37], 0.0, false, &mut r);
        assert_eq!(mcd(&m, &input(1, 6), 20, 9).unwrap(), 0.0);
    }

    #[test]
    fn combined_weighting() {
        let u = UncertaintyScore::from_parts(0.5, 0.01, 0.5).unwrap();
        assert!((u.combined - 0.255).abs() < 1e-15);
        assert!(matches!(UncertaintyScore::from_parts(1.0, 0.0, 0.0), Err(Error::Config(_))));
        let m = model(4, 1);
        assert!(matches!(combined_uncertainty(&m, &input(1, 4), 0.0, 20, 1), Err(Error::Config(_))));
    }

    #[test]
    fn update_validates_and_evicts() {
        let mut m = model(4, 1);
        assert!(matches!(m.update(&[]), Err(Error::Precondition(_))));
        assert!(matches!(m.update(&[(input(1, 4), 37)]), Err(Error::Label(_))));
        m.config.epochs = 0;
        let labels: Vec<(Vec<f64>, usize)> = (0..512).map(|i| (vec![i as f64, 0.0, 0.0, 0.0], 3)).collect();
        m.update(&labels).unwrap();
        let extra: Vec<(Vec<f64>, usize)> = (0..10).map(|i| (vec![1000.0 + i as f64, 0.0, 0.0, 0.0], 4)).collect();
        m.update(&extra).unwrap();
        assert_eq!(m.buffer.len(), 512);
        assert_eq!(m.buffer.front().unwrap().0[0], 10.0);
        assert_eq!(m.buffer.back().unwrap().0[0], 1009.0);
    }

    #[test]
    fn training_reduces_loss_and_overfits_one_label() {
        let mut m = model(8, 2);
        let labels: Vec<(Vec<f64>, usize)> = (0..16).map(|i| (input(i, 8), 22)).collect();
        let before = m.loss(&labels).unwrap();
        m.update(&labels).unwrap();
        let after = m.loss(&labels).unwrap();
        assert!(after < before, "{after} >= {before}");
        m.config.epochs = 1;
        // Single-sample batches, 500 steps total.
        m.config.batch_size = 1;
        for _ in 0..(500 / 16) {
            m.update(&labels[..1]).unwrap();
        }
        let p = m.predict(&labels[0].0).unwrap();
        let argmax = (0..37).fold(0, |b, j| if p[j] > p[b] { j } else { b });
        assert_eq!(argmax, 22);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = seed::rng(11);
        let mut net = Mlp::new(&[7, 64, 64, 37], 0.1, false, &mut r);
        let batch: Vec<(Vec<f64>, usize)> = (0..5).map(|i| (input(i, 7), (i as usize * 7) % 37)).collect();
        let (_, g) = cross_entropy_and_grad(&net, &batch);
        let h = 1e-5;
        for i in (0..net.params.len()).step_by(97) {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let lp = cross_entropy_and_grad(&net, &batch).0;
            net.params[i] = orig - h;
            let lm = cross_entropy_and_grad(&net, &batch).0;
            net.params[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let rel = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = model(5, 4);
        m.update(&[(input(1, 5), 3), (input(2, 5), 9)]).unwrap();
        let back = CamModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let x = input(3, 5);
        assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
    }

    fn two_node() -> PlanNode {
        PlanNode::inner(
            OpKind::Hash,
            150.0,
            0.0,
            10.0,
            vec![PlanNode::leaf(OpKind::IndexScan, "a", 0.0, 100.0, 10.0)],
        )
    }

    #[test]
    fn regression_label_inverts_benefit() {
        let p = two_node();
        let leaf = NodePath(vec![0]);
        let c0 = 1000.0;
        // Truth: leaf twice as expensive, which the Hash startup absorbs.
        let b_t = 1.0 - 250.0 / c0;
        let w = regression_label(&p, &leaf, b_t, c0, 1e-6).unwrap();
        assert!((w - 2.0).abs() <= 1e-6, "{w}");
        let b_c = 1.0 - p.total_cost() / c0;
        let w = regression_label(&p, &leaf, b_c, c0, 1e-6).unwrap();
        assert!((w - 1.0).abs() <= 1e-6, "{w}");
        assert!(matches!(regression_label(&p, &leaf, b_c, c0, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn regression_cam_learns_constant() {
        let cfg = CamConfig { learning_rate: 1e-2, ..Default::default() };
        let mut m = RegressionCam::new(OpKind::SeqScan, 4, cfg, 1);
        let labels: Vec<(Vec<f64>, f64)> = (0..32).map(|i| (input(i, 4), 5.0)).collect();
        for _ in 0..10 {
            m.update(&labels).unwrap();
        }
        let w = m.predict(&labels[0].0).unwrap();
        assert!((w.ln() - 5f64.ln()).abs() < 0.2, "{w}");
    }
}
