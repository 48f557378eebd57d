//! Conditional GAN over shape-parameter vectors.
//!
//! The generator maps (affect, z) to a standardized shape vector; the
//! discriminator scores (affect, shape) pairs. Each training step makes one
//! discriminator update followed by two generator updates.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::clstm::{read_matrix, write_matrix};
use crate::corpus::{AffectVector, Corpus, NUM_AFFECT};
use crate::dictionary::AffectShapeDictionary;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::standardize::Standardizer;
use crate::textio::Records;

const LEAK: f64 = 0.2;
/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Fully connected net with leaky-ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub output: OutputActivation,
}

struct MlpCache {
    /// Input to each layer.
    acts: Vec<DMatrix<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<DMatrix<f64>>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAK * x
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MlpNet {
    /// `sizes` lists input, hidden and output widths; weights are uniform in
    /// ±1/√fan_in, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 3 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(
                "an MLP needs at least one hidden layer and non-zero widths".into(),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let r = 1.0 / (pair[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(pair[1], pair[0], |_, _| rng.gen_range(-r..r)));
            biases.push(DVector::zeros(pair[1]));
        }
        Ok(Self {
            weights,
            biases,
            output,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: self.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            output: self.output,
        }
    }

    fn forward_cache(&self, x: &DMatrix<f64>) -> MlpCache {
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.weights.len());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &acts[l];
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                acts.push(z.map(leaky));
            }
            pre.push(z);
        }
        MlpCache { acts, pre }
    }

    /// Output before the final activation (the logit for a sigmoid net).
    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cache(x).pre.pop().expect("at least one layer")
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.logits(x);
        match self.output {
            OutputActivation::Identity => z,
            OutputActivation::Sigmoid => z.map(|v| sigmoid(v).clamp(CLAMP, 1.0 - CLAMP)),
        }
    }

    /// Gradients given `delta` = dL/d(final pre-activation); also returns dL/d(input).
    fn backward(&self, cache: &MlpCache, mut delta: DMatrix<f64>) -> (MlpNet, DMatrix<f64>) {
        let mut grads = self.zeros_like();
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] = &delta * cache.acts[l].transpose();
            grads.biases[l] = delta.column_sum();
            let d_act = self.weights[l].tr_mul(&delta);
            if l == 0 {
                return (grads, d_act);
            }
            delta = d_act.zip_map(&cache.pre[l - 1], |g, z| if z > 0.0 { g } else { LEAK * g });
        }
        unreachable!("loop returns at the first layer")
    }

    fn write_text(&self, out: &mut String, name: &str) {
        out.push_str(&format!("net {name} {}\n", self.weights.len()));
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            write_matrix(out, &format!("w{l}"), w);
            write_matrix(out, &format!("b{l}"), &DMatrix::from_row_slice(1, b.len(), b.as_slice()));
        }
    }

    fn read_text(rec: &mut Records<'_>, name: &str, sizes: &[usize], output: OutputActivation) -> Result<Self> {
        let (line, rest) = rec.keyed("net")?;
        let expected = format!("{name} {}", sizes.len() - 1);
        if rest != expected {
            return Err(rec.error(line, format!("expected `net {expected}`, found `net {rest}`")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in sizes.windows(2).enumerate() {
            weights.push(read_matrix(rec, &format!("w{l}"), pair[1], pair[0])?);
            let b = read_matrix(rec, &format!("b{l}"), 1, pair[1])?;
            biases.push(DVector::from_column_slice(b.as_slice()));
        }
        Ok(Self {
            weights,
            biases,
            output,
        })
    }
}

/// Where generator noise comes from.
pub trait ZSource {
    fn dim(&self) -> usize;
    fn sample(&mut self, affect: &AffectVector, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// Standard normal noise.
#[derive(Debug, Clone)]
pub struct GaussianZ {
    pub dim: usize,
}

impl ZSource for GaussianZ {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&mut self, _affect: &AffectVector, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok((0..self.dim).map(|_| rng.sample(StandardNormal)).collect())
    }
}

/// Draws z from the affect-shape dictionary (standardized), so the noise
/// already carries class-appropriate shape structure.
#[derive(Debug, Clone)]
pub struct DictionaryZ<'a> {
    pub dict: &'a AffectShapeDictionary,
}

impl ZSource for DictionaryZ<'_> {
    fn dim(&self) -> usize {
        self.dict.dim()
    }

    fn sample(&mut self, affect: &AffectVector, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let s = self.dict.sample_z(affect, None, rng, 1)?;
        Ok(self.dict.standardizer().transform(&s.z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZSourceKind {
    Gaussian,
    Dictionary,
}

impl fmt::Display for ZSourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZSourceKind::Gaussian => "gaussian",
            ZSourceKind::Dictionary => "dictionary",
        })
    }
}

impl FromStr for ZSourceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "dictionary" | "dict" => Ok(Self::Dictionary),
            _ => Err(format!("unknown z source `{s}` (gaussian|dictionary)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CGanConfig {
    /// Shape dimension d.
    pub shape_dim: usize,
    pub z_dim: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    /// Number of train steps (each one D and two G updates).
    pub steps: usize,
    pub seed: u64,
    /// Trailing frames averaged into the conditioning affect.
    pub affect_window: usize,
    pub z_source: ZSourceKind,
    /// Decay of the exponential moving average of generator weights used
    /// for inference; 0 uses the raw generator.
    pub ema_decay: f64,
}

impl CGanConfig {
    pub fn for_dim(d: usize) -> Self {
        Self {
            shape_dim: d,
            z_dim: d,
            hidden_units: 64,
            hidden_layers: 2,
            batch_size: 64,
            learning_rate: 2e-4,
            beta1: 0.0,
            steps: 2000,
            seed: 0,
            affect_window: 10,
            z_source: ZSourceKind::Gaussian,
            ema_decay: 0.998,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape_dim < 1 || self.z_dim < 1 || self.hidden_units < 1 || self.hidden_layers < 1 {
            return Err(Error::InvalidConfig(
                "shape_dim, z_dim, hidden_units and hidden_layers must be >= 1".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() || !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::InvalidConfig("learning_rate must be >= 0 and beta1 in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidConfig("ema_decay must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_units; self.hidden_layers]
    }

    pub fn echo(&self) -> String {
        format!(
            "shape_dim={} z_dim={} hidden_units={} hidden_layers={} batch_size={} learning_rate={} beta1={} steps={} seed={} affect_window={} z_source={} ema_decay={}",
            self.shape_dim,
            self.z_dim,
            self.hidden_units,
            self.hidden_layers,
            self.batch_size,
            self.learning_rate,
            self.beta1,
            self.steps,
            self.seed,
            self.affect_window,
            self.z_source,
            self.ema_decay
        )
    }

    pub fn parse_echo(s: &str) -> std::result::Result<Self, String> {
        let mut cfg = Self::for_dim(1);
        let mut z_given = false;
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("bad config token `{tok}`"))?;
            let bad = || format!("bad value for `{k}`");
            match k {
                "shape_dim" => cfg.shape_dim = v.parse().map_err(|_| bad())?,
                "z_dim" => {
                    cfg.z_dim = v.parse().map_err(|_| bad())?;
                    z_given = true;
                }
                "hidden_units" => cfg.hidden_units = v.parse().map_err(|_| bad())?,
                "hidden_layers" => cfg.hidden_layers = v.parse().map_err(|_| bad())?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| bad())?,
                "learning_rate" => cfg.learning_rate = v.parse().map_err(|_| bad())?,
                "beta1" => cfg.beta1 = v.parse().map_err(|_| bad())?,
                "steps" => cfg.steps = v.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                "affect_window" => cfg.affect_window = v.parse().map_err(|_| bad())?,
                "z_source" => cfg.z_source = v.parse()?,
                "ema_decay" => cfg.ema_decay = v.parse().map_err(|_| bad())?,
                _ => return Err(format!("unknown config key `{k}`")),
            }
        }
        if !z_given {
            cfg.z_dim = cfg.shape_dim;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanReport {
    pub d_losses: Vec<f64>,
    pub g_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CGanModel {
    config: CGanConfig,
    pub g: MlpNet,
    pub d: MlpNet,
    /// Moving average of `g`, used by [`CGanModel::generate`].
    pub g_avg: MlpNet,
    standardizer: Standardizer,
    g_adam: Adam,
    d_adam: Adam,
    g_updates: u64,
    d_updates: u64,
}

impl PartialEq for CGanModel {
    /// Compares configuration, weights and counters (optimizer moments are
    /// transient and not persisted).
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.g == other.g
            && self.d == other.d
            && self.g_avg == other.g_avg
            && self.standardizer == other.standardizer
            && self.g_updates == other.g_updates
            && self.d_updates == other.d_updates
    }
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    m
}

fn check_batch(cond: &DMatrix<f64>, other: &DMatrix<f64>, what: &'static str, rows: usize) -> Result<()> {
    if cond.ncols() == 0 {
        return Err(Error::Empty("GAN batch"));
    }
    if cond.nrows() != NUM_AFFECT {
        return Err(Error::DimensionMismatch {
            what: "GAN condition",
            expected: NUM_AFFECT,
            got: cond.nrows(),
        });
    }
    if other.nrows() != rows || other.ncols() != cond.ncols() {
        return Err(Error::DimensionMismatch {
            what,
            expected: rows,
            got: other.nrows(),
        });
    }
    Ok(())
}

/// dL/d(logit) of `-ln clamp(sigmoid(s))` (`positive`) or
/// `-ln(1 - clamp(sigmoid(s)))`, scaled by `1/n`. Zero where the clamp binds.
fn log_loss_grad(logits: &DMatrix<f64>, positive: bool, n: f64) -> (f64, DMatrix<f64>) {
    let mut loss = 0.0;
    let grad = logits.map(|s| {
        let p = sigmoid(s);
        let pc = p.clamp(CLAMP, 1.0 - CLAMP);
        let active = p == pc;
        if positive {
            loss -= pc.ln();
            if active {
                -(1.0 - p) / n
            } else {
                0.0
            }
        } else {
            loss -= (1.0 - pc).ln();
            if active {
                p / n
            } else {
                0.0
            }
        }
    });
    (loss / n, grad)
}

impl CGanModel {
    /// Nets initialized from `ChaCha8(seed)` (generator first).
    pub fn new(config: CGanConfig, standardizer: Standardizer) -> Result<Self> {
        config.validate()?;
        if standardizer.dim() != config.shape_dim {
            return Err(Error::DimensionMismatch {
                what: "GAN standardizer",
                expected: config.shape_dim,
                got: standardizer.dim(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut gs = vec![NUM_AFFECT + config.z_dim];
        gs.extend(config.hidden());
        gs.push(config.shape_dim);
        let mut ds = vec![NUM_AFFECT + config.shape_dim];
        ds.extend(config.hidden());
        ds.push(1);
        let g = MlpNet::new(&gs, OutputActivation::Identity, &mut rng)?;
        let d = MlpNet::new(&ds, OutputActivation::Sigmoid, &mut rng)?;
        let g_avg = g.clone();
        Ok(Self::assemble(config, g, d, g_avg, standardizer, 0, 0))
    }

    fn assemble(
        config: CGanConfig,
        g: MlpNet,
        d: MlpNet,
        g_avg: MlpNet,
        standardizer: Standardizer,
        g_updates: u64,
        d_updates: u64,
    ) -> Self {
        let adam = |lr: f64| {
            let mut a = Adam::new(lr);
            a.beta1 = config.beta1;
            a
        };
        Self {
            g_adam: adam(config.learning_rate),
            d_adam: adam(config.learning_rate),
            config,
            g,
            d,
            g_avg,
            standardizer,
            g_updates,
            d_updates,
        }
    }

    pub fn config(&self) -> &CGanConfig {
        &self.config
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn g_updates(&self) -> u64 {
        self.g_updates
    }

    pub fn d_updates(&self) -> u64 {
        self.d_updates
    }

    /// Discriminator probabilities, strictly inside (0, 1).
    pub fn discriminate(&self, cond: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.d.forward(&stack(cond, y))
    }

    /// Generator output in standardized shape space.
    pub fn generate_std(&self, cond: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.g.forward(&stack(cond, z))
    }

    /// `-mean[ln D(x, y) + ln(1 - D(x, G(x, z)))]` and its gradient with
    /// respect to the discriminator weights.
    pub fn d_loss_and_grad(&self, cond: &DMatrix<f64>, real: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<(f64, MlpNet)> {
        check_batch(cond, real, "GAN real batch", self.config.shape_dim)?;
        check_batch(cond, z, "GAN noise batch", self.config.z_dim)?;
        let n = cond.ncols() as f64;
        let fake = self.generate_std(cond, z);
        let real_cache = self.d.forward_cache(&stack(cond, real));
        let fake_cache = self.d.forward_cache(&stack(cond, &fake));
        let (lr, gr) = log_loss_grad(real_cache.pre.last().unwrap(), true, n);
        let (lf, gf) = log_loss_grad(fake_cache.pre.last().unwrap(), false, n);
        let (mut grads, _) = self.d.backward(&real_cache, gr);
        let (gfake, _) = self.d.backward(&fake_cache, gf);
        for (a, b) in grads.tensors_mut().into_iter().zip(gfake.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let loss = lr + lf;
        if !loss.is_finite() {
            return Err(Error::Numerical("discriminator loss is not finite".into()));
        }
        Ok((loss, grads))
    }

    pub fn d_loss(&self, cond: &DMatrix<f64>, real: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<f64> {
        check_batch(cond, real, "GAN real batch", self.config.shape_dim)?;
        check_batch(cond, z, "GAN noise batch", self.config.z_dim)?;
        let n = cond.ncols() as f64;
        let fake = self.generate_std(cond, z);
        let pr = self.discriminate(cond, real);
        let pf = self.discriminate(cond, &fake);
        let loss = -(pr.iter().map(|p| p.ln()).sum::<f64>() + pf.iter().map(|p| (1.0 - p).ln()).sum::<f64>()) / n;
        if !loss.is_finite() {
            return Err(Error::Numerical("discriminator loss is not finite".into()));
        }
        Ok(loss)
    }

    /// Non-saturating generator loss `-mean ln D(x, G(x, z))` and its
    /// gradient with respect to the generator weights.
    pub fn g_loss_and_grad(&self, cond: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<(f64, MlpNet)> {
        check_batch(cond, z, "GAN noise batch", self.config.z_dim)?;
        let n = cond.ncols() as f64;
        let g_cache = self.g.forward_cache(&stack(cond, z));
        let fake = g_cache.pre.last().unwrap().clone();
        let d_cache = self.d.forward_cache(&stack(cond, &fake));
        let (loss, delta) = log_loss_grad(d_cache.pre.last().unwrap(), true, n);
        let (_, d_in) = self.d.backward(&d_cache, delta);
        let d_fake = d_in.rows(NUM_AFFECT, self.config.shape_dim).into_owned();
        let (grads, _) = self.g.backward(&g_cache, d_fake);
        if !loss.is_finite() {
            return Err(Error::Numerical("generator loss is not finite".into()));
        }
        Ok((loss, grads))
    }

    pub fn g_loss(&self, cond: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<f64> {
        check_batch(cond, z, "GAN noise batch", self.config.z_dim)?;
        let n = cond.ncols() as f64;
        let pf = self.discriminate(cond, &self.generate_std(cond, z));
        let loss = -pf.iter().map(|p| p.ln()).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::Numerical("generator loss is not finite".into()));
        }
        Ok(loss)
    }

    fn draw_z(&self, cond: &DMatrix<f64>, zs: &mut dyn ZSource, rng: &mut dyn RngCore) -> Result<DMatrix<f64>> {
        if zs.dim() != self.config.z_dim {
            return Err(Error::DimensionMismatch {
                what: "z source",
                expected: self.config.z_dim,
                got: zs.dim(),
            });
        }
        let mut z = DMatrix::zeros(self.config.z_dim, cond.ncols());
        for k in 0..cond.ncols() {
            let a = AffectVector::from_slice(cond.column(k).as_slice())?;
            z.column_mut(k).copy_from_slice(&zs.sample(&a, rng)?);
        }
        Ok(z)
    }

    /// One discriminator update, then two generator updates with fresh z.
    /// Returns both losses re-evaluated after the updates on a fresh z draw.
    pub fn train_step(
        &mut self,
        cond: &DMatrix<f64>,
        real: &DMatrix<f64>,
        zs: &mut dyn ZSource,
        rng: &mut dyn RngCore,
    ) -> Result<StepLosses> {
        if cond.ncols() < 2 {
            return Err(Error::InvalidConfig("GAN training batch needs at least 2 samples".into()));
        }
        let step = self.d_updates;
        let tag = |e: Error| match e {
            Error::Numerical(m) => Error::Numerical(format!("step {step}: {m}")),
            other => other,
        };
        let z = self.draw_z(cond, zs, rng)?;
        let (_, gd) = self.d_loss_and_grad(cond, real, &z).map_err(tag)?;
        self.d_adam.step(&mut self.d.tensors_mut(), &gd.tensors());
        self.d_updates += 1;
        for _ in 0..2 {
            let z = self.draw_z(cond, zs, rng)?;
            let (_, gg) = self.g_loss_and_grad(cond, &z).map_err(tag)?;
            self.g_adam.step(&mut self.g.tensors_mut(), &gg.tensors());
            self.g_updates += 1;
        }
        let decay = self.config.ema_decay;
        for (a, w) in self.g_avg.tensors_mut().into_iter().zip(self.g.tensors()) {
            a.iter_mut().zip(w).for_each(|(a, w)| *a = decay * *a + (1.0 - decay) * w);
        }
        let z = self.draw_z(cond, zs, rng)?;
        let d_loss = self.d_loss(cond, real, &z).map_err(tag)?;
        let g_loss = self.g_loss(cond, &z).map_err(tag)?;
        Ok(StepLosses { d_loss, g_loss })
    }

    /// `count` shape vectors (raw units) for `affect` from the averaged
    /// generator. Uses the supplied z
    /// columns when given, otherwise draws from `zs`.
    pub fn generate(
        &self,
        affect: &AffectVector,
        z: Option<&[Vec<f64>]>,
        count: usize,
        zs: &mut dyn ZSource,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let cond = DMatrix::from_fn(NUM_AFFECT, count, |r, _| affect.values()[r]);
        let z = match z {
            Some(cols) => {
                if cols.len() != count {
                    return Err(Error::DimensionMismatch {
                        what: "supplied z count",
                        expected: count,
                        got: cols.len(),
                    });
                }
                let mut m = DMatrix::zeros(self.config.z_dim, count);
                for (k, c) in cols.iter().enumerate() {
                    if c.len() != self.config.z_dim {
                        return Err(Error::DimensionMismatch {
                            what: "supplied z",
                            expected: self.config.z_dim,
                            got: c.len(),
                        });
                    }
                    m.column_mut(k).copy_from_slice(c);
                }
                m
            }
            None => self.draw_z(&cond, zs, rng)?,
        };
        let y = self.g_avg.forward(&stack(&cond, &z));
        Ok((0..count)
            .map(|k| self.standardizer.inverse(y.column(k).as_slice()))
            .collect())
    }

    /// Trains on every corpus frame, conditioning on the trailing-window mean
    /// of partner affect. Mini-batches are drawn uniformly with replacement
    /// from `ChaCha8(seed)` stream 1.
    pub fn train_corpus(&mut self, corpus: &Corpus, zs: &mut dyn ZSource) -> Result<GanReport> {
        if corpus.dim() != self.config.shape_dim {
            return Err(Error::DimensionMismatch {
                what: "corpus shape dimension",
                expected: self.config.shape_dim,
                got: corpus.dim(),
            });
        }
        let mut conds = Vec::new();
        let mut shapes = Vec::new();
        for seq in &corpus.sequences {
            let affects = seq.affects();
            for (t, f) in seq.frames.iter().enumerate() {
                let lo = (t + 1).saturating_sub(self.config.affect_window.max(1));
                conds.push(*crate::corpus::aggregate_affect(&affects[lo..=t])?.values());
                shapes.push(self.standardizer.transform(&f.agent_shape.flatten()));
            }
        }
        if shapes.len() < 2 {
            return Err(Error::Empty("GAN training frames"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let b = self.config.batch_size;
        let d = self.config.shape_dim;
        let mut report = GanReport {
            d_losses: Vec::with_capacity(self.config.steps),
            g_losses: Vec::with_capacity(self.config.steps),
        };
        for _ in 0..self.config.steps {
            let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..shapes.len())).collect();
            let cond = DMatrix::from_fn(NUM_AFFECT, b, |r, k| conds[idx[k]][r]);
            let real = DMatrix::from_fn(d, b, |r, k| shapes[idx[k]][r]);
            let l = self.train_step(&cond, &real, zs, &mut rng)?;
            report.d_losses.push(l.d_loss);
            report.g_losses.push(l.g_loss);
        }
        Ok(report)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("CGAN v1\n");
        out.push_str(&format!("config {}\n", self.config.echo()));
        out.push_str(&format!("updates {} {}\n", self.d_updates, self.g_updates));
        self.standardizer.write_text(&mut out);
        self.g.write_text(&mut out, "generator");
        self.d.write_text(&mut out, "discriminator");
        self.g_avg.write_text(&mut out, "generator_avg");
        out
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rec = Records::new(name, text);
        rec.expect_header("CGAN v1")?;
        let (line, echo) = rec.keyed("config")?;
        let config = CGanConfig::parse_echo(echo).map_err(|e| rec.error(line, e))?;
        config.validate().map_err(|e| rec.error(line, e.to_string()))?;
        let (line, upd) = rec.keyed("updates")?;
        let counts: Vec<u64> = upd.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        if counts.len() != 2 {
            return Err(rec.error(line, "expected `updates <d> <g>`"));
        }
        let standardizer = Standardizer::read_text(&mut rec, config.shape_dim)?;
        let mut gs = vec![NUM_AFFECT + config.z_dim];
        gs.extend(config.hidden());
        gs.push(config.shape_dim);
        let mut ds = vec![NUM_AFFECT + config.shape_dim];
        ds.extend(config.hidden());
        ds.push(1);
        let g = MlpNet::read_text(&mut rec, "generator", &gs, OutputActivation::Identity)?;
        let d = MlpNet::read_text(&mut rec, "discriminator", &ds, OutputActivation::Sigmoid)?;
        let g_avg = MlpNet::read_text(&mut rec, "generator_avg", &gs, OutputActivation::Identity)?;
        if let Some((line, _)) = rec.try_next() {
            return Err(rec.error(line, "trailing data after weights"));
        }
        Ok(Self::assemble(config, g, d, g_avg, standardizer, counts[1], counts[0]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&path.display().to_string(), &text)
    }
}

/// Two-class conditional gaussian toy problem in d = 4: class 0 and class 1
/// (as one-hot affect) with distinct means and diagonal covariances.
pub mod toy {
    use super::*;
    use crate::corpus::AffectClass;

    pub const DIM: usize = 4;
    pub const MEANS: [[f64; DIM]; 2] = [[1.0, -1.0, 0.5, 0.0], [-1.0, 1.0, 0.0, -0.5]];
    pub const STDS: [[f64; DIM]; 2] = [[0.5, 0.3, 0.4, 0.5], [0.3, 0.5, 0.5, 0.4]];
    pub const CLASSES: [AffectClass; 2] = [AffectClass::Joy, AffectClass::Anger];

    /// Balanced batch: columns alternate between the two conditions.
    pub fn batch<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
        let cond = DMatrix::from_fn(NUM_AFFECT, n, |r, k| f64::from(u8::from(r == CLASSES[k % 2].index())));
        let y = DMatrix::from_fn(DIM, n, |r, k| {
            let c = k % 2;
            MEANS[c][r] + STDS[c][r] * rng.sample::<f64, _>(StandardNormal)
        });
        (cond, y)
    }
}
