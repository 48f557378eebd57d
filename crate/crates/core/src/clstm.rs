//! Conditional LSTM over shape-parameter sequences.
//!
//! Each step sees the partner's affect concatenated with the agent's current
//! (standardized) shape vector and predicts the agent's next shape vector.
//! Gate blocks are stacked in the order input, forget, output, candidate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{aggregate_affect, AffectVector, Corpus, DyadFrame, DyadSequence, NUM_AFFECT};
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam};
use crate::pdm::ShapeParams;
use crate::standardize::Standardizer;
use crate::textio::{push_row, Records};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationMode {
    /// One frame per step from a sliding FIFO window.
    Overlap,
    /// Consume the window once, then free-run a block of `n` frames.
    NonOverlap,
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenerationMode::Overlap => "overlap",
            GenerationMode::NonOverlap => "nonoverlap",
        })
    }
}

impl FromStr for GenerationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "overlap" => Ok(Self::Overlap),
            "nonoverlap" | "non-overlap" | "no-overlap" => Ok(Self::NonOverlap),
            _ => Err(format!("unknown generation mode `{s}` (overlap|nonoverlap)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CLstmConfig {
    pub hidden_dim: usize,
    /// Shape-parameter dimension d; the input is `8 + d` wide.
    pub output_dim: usize,
    /// History length n.
    pub window: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Condition on the trailing-window mean affect instead of per-frame affect.
    pub aggregate_affect: bool,
}

impl Default for CLstmConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            output_dim: 16,
            window: 100,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            epochs: 20,
            seed: 0,
            batch_size: 16,
            aggregate_affect: false,
        }
    }
}

impl CLstmConfig {
    pub fn input_dim(&self) -> usize {
        NUM_AFFECT + self.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < 1 || self.output_dim < 1 || self.window < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "hidden_dim, output_dim, window and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::InvalidConfig("grad_clip must be > 0".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> String {
        format!(
            "hidden_dim={} output_dim={} window={} learning_rate={} grad_clip={} epochs={} seed={} batch_size={} aggregate_affect={}",
            self.hidden_dim,
            self.output_dim,
            self.window,
            self.learning_rate,
            self.grad_clip,
            self.epochs,
            self.seed,
            self.batch_size,
            u8::from(self.aggregate_affect)
        )
    }

    pub fn parse_echo(s: &str) -> std::result::Result<Self, String> {
        let mut cfg = Self::default();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("bad config token `{tok}`"))?;
            let bad = |_| format!("bad value for `{k}`");
            match k {
                "hidden_dim" => cfg.hidden_dim = v.parse().map_err(bad)?,
                "output_dim" => cfg.output_dim = v.parse().map_err(bad)?,
                "window" => cfg.window = v.parse().map_err(bad)?,
                "learning_rate" => cfg.learning_rate = v.parse().map_err(|_| format!("bad value for `{k}`"))?,
                "grad_clip" => cfg.grad_clip = v.parse().map_err(|_| format!("bad value for `{k}`"))?,
                "epochs" => cfg.epochs = v.parse().map_err(bad)?,
                "seed" => cfg.seed = v.parse().map_err(bad)?,
                "batch_size" => cfg.batch_size = v.parse().map_err(bad)?,
                "aggregate_affect" => cfg.aggregate_affect = v == "1" || v == "true",
                _ => return Err(format!("unknown config key `{k}`")),
            }
        }
        Ok(cfg)
    }
}

/// Weight set (also used for gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// Input weights, 4H × I.
    pub w: DMatrix<f64>,
    /// Recurrent weights, 4H × H.
    pub u: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Output projection, D × H.
    pub v: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w: DMatrix::zeros(4 * hidden, input),
            u: DMatrix::zeros(4 * hidden, hidden),
            b: DVector::zeros(4 * hidden),
            v: DMatrix::zeros(output, hidden),
            c: DVector::zeros(output),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.w.as_slice(),
            self.u.as_slice(),
            self.b.as_slice(),
            self.v.as_slice(),
            self.c.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w.as_mut_slice(),
            self.u.as_mut_slice(),
            self.b.as_mut_slice(),
            self.v.as_mut_slice(),
            self.c.as_mut_slice(),
        ]
    }

    pub fn norm(&self) -> f64 {
        crate::optim::global_norm(&self.tensors())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Hidden and cell state, one column per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize, batch: usize) -> Self {
        Self {
            h: DMatrix::zeros(hidden, batch),
            c: DMatrix::zeros(hidden, batch),
        }
    }
}

struct StepCache {
    x: DMatrix<f64>,
    h_prev: DMatrix<f64>,
    c_prev: DMatrix<f64>,
    i: DMatrix<f64>,
    f: DMatrix<f64>,
    o: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    tc: DMatrix<f64>,
    h: DMatrix<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-window training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub windows: usize,
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CLstmModel {
    config: CLstmConfig,
    params: LstmParams,
    standardizer: Standardizer,
}

/// Per-step affect conditioning for a run of frames.
fn conditioning(affects: &[AffectVector], aggregate: bool, window: usize) -> Vec<[f64; NUM_AFFECT]> {
    (0..affects.len())
        .map(|t| {
            if aggregate {
                let lo = (t + 1).saturating_sub(window.max(1));
                *aggregate_affect(&affects[lo..=t]).expect("non-empty").values()
            } else {
                *affects[t].values()
            }
        })
        .collect()
}

fn concat(affect: &[f64; NUM_AFFECT], shape: &[f64]) -> DVector<f64> {
    DVector::from_iterator(NUM_AFFECT + shape.len(), affect.iter().copied().chain(shape.iter().copied()))
}

/// Packs equal-length vector sequences into per-step column batches.
fn pack(seqs: &[&[DVector<f64>]]) -> Vec<DMatrix<f64>> {
    let len = seqs.first().map_or(0, |s| s.len());
    (0..len)
        .map(|t| {
            let cols: Vec<DVector<f64>> = seqs.iter().map(|s| s[t].clone()).collect();
            DMatrix::from_columns(&cols)
        })
        .collect()
}

impl CLstmModel {
    /// Fresh model: weights uniform in ±1/√H from `ChaCha8(seed)`, forget
    /// bias 1, other biases 0.
    pub fn new(config: CLstmConfig, standardizer: Standardizer) -> Result<Self> {
        config.validate()?;
        if standardizer.dim() != config.output_dim {
            return Err(Error::DimensionMismatch {
                what: "C-LSTM standardizer",
                expected: config.output_dim,
                got: standardizer.dim(),
            });
        }
        let (i, h, d) = (config.input_dim(), config.hidden_dim, config.output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let r = 1.0 / (h as f64).sqrt();
        let mut p = LstmParams::zeros(i, h, d);
        for t in [p.w.as_mut_slice(), p.u.as_mut_slice(), p.v.as_mut_slice()] {
            t.iter_mut().for_each(|x| *x = rng.gen_range(-r..r));
        }
        p.b.rows_mut(h, h).fill(1.0);
        Ok(Self {
            config,
            params: p,
            standardizer,
        })
    }

    pub fn from_parts(config: CLstmConfig, params: LstmParams, standardizer: Standardizer) -> Result<Self> {
        config.validate()?;
        let z = LstmParams::zeros(config.input_dim(), config.hidden_dim, config.output_dim);
        for (a, b) in z.tensors().iter().zip(params.tensors()) {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    what: "C-LSTM weights",
                    expected: a.len(),
                    got: b.len(),
                });
            }
        }
        if params.w.nrows() != z.w.nrows() || params.v.nrows() != z.v.nrows() {
            return Err(Error::InvalidConfig("C-LSTM weight shapes do not match config".into()));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("C-LSTM weights"));
        }
        Ok(Self {
            config,
            params,
            standardizer,
        })
    }

    pub fn config(&self) -> &CLstmConfig {
        &self.config
    }

    pub fn params(&self) -> &LstmParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LstmParams {
        &mut self.params
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn cell(&self, x: DMatrix<f64>, h_prev: DMatrix<f64>, c_prev: DMatrix<f64>) -> StepCache {
        let hd = self.config.hidden_dim;
        let mut a = &self.params.w * &x + &self.params.u * &h_prev;
        for mut col in a.column_iter_mut() {
            col += &self.params.b;
        }
        let i = a.rows(0, hd).map(sigmoid);
        let f = a.rows(hd, hd).map(sigmoid);
        let o = a.rows(2 * hd, hd).map(sigmoid);
        let g = a.rows(3 * hd, hd).map(f64::tanh);
        let c = f.component_mul(&c_prev) + i.component_mul(&g);
        let tc = c.map(f64::tanh);
        let h = o.component_mul(&tc);
        StepCache {
            x,
            h_prev,
            c_prev,
            i,
            f,
            o,
            g,
            c,
            tc,
            h,
        }
    }

    fn output(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.params.v * h;
        for mut col in y.column_iter_mut() {
            col += &self.params.c;
        }
        y
    }

    fn check_inputs(&self, inputs: &[DMatrix<f64>]) -> Result<()> {
        let i = self.config.input_dim();
        if let Some(x) = inputs.iter().find(|x| x.nrows() != i) {
            return Err(Error::DimensionMismatch {
                what: "C-LSTM input",
                expected: i,
                got: x.nrows(),
            });
        }
        Ok(())
    }

    /// Runs the recurrence over column-batched inputs.
    pub fn forward_batch(
        &self,
        inputs: &[DMatrix<f64>],
        state: Option<LstmState>,
    ) -> Result<(Vec<DMatrix<f64>>, LstmState)> {
        self.check_inputs(inputs)?;
        let bsz = inputs.first().map_or(1, |x| x.ncols());
        let mut st = state.unwrap_or_else(|| LstmState::zeros(self.config.hidden_dim, bsz));
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let s = self.cell(x.clone(), st.h, st.c);
            outputs.push(self.output(&s.h));
            st = LstmState { h: s.h, c: s.c };
        }
        Ok((outputs, st))
    }

    /// Single-sequence forward pass; `output_t = V h_t + c`.
    pub fn forward(
        &self,
        inputs: &[DVector<f64>],
        state: Option<LstmState>,
    ) -> Result<(Vec<DVector<f64>>, LstmState)> {
        let packed: Vec<DMatrix<f64>> = inputs.iter().map(|x| DMatrix::from_column_slice(x.len(), 1, x.as_slice())).collect();
        let (ys, st) = self.forward_batch(&packed, state)?;
        Ok((ys.into_iter().map(|y| y.column(0).into_owned()).collect(), st))
    }

    /// Loss and exact BPTT gradients for a column batch. The loss is the sum
    /// over sequences of each sequence's mean squared error over (T · D).
    pub fn batch_gradients(&self, inputs: &[DMatrix<f64>], targets: &[DMatrix<f64>]) -> Result<(f64, LstmParams)> {
        let cfg = &self.config;
        let mut grads = LstmParams::zeros(cfg.input_dim(), cfg.hidden_dim, cfg.output_dim);
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                what: "C-LSTM targets",
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if inputs.is_empty() {
            return Ok((0.0, grads));
        }
        self.check_inputs(inputs)?;
        let bsz = inputs[0].ncols();
        let (hd, d) = (cfg.hidden_dim, cfg.output_dim);
        if let Some(t) = targets.iter().find(|t| t.nrows() != d || t.ncols() != bsz) {
            return Err(Error::DimensionMismatch {
                what: "C-LSTM target",
                expected: d,
                got: t.nrows(),
            });
        }
        let norm = 1.0 / (inputs.len() * d) as f64;

        let mut steps = Vec::with_capacity(inputs.len());
        let mut h = DMatrix::zeros(hd, bsz);
        let mut c = DMatrix::zeros(hd, bsz);
        let mut loss = 0.0;
        let mut dys = Vec::with_capacity(inputs.len());
        for (x, target) in inputs.iter().zip(targets) {
            let s = self.cell(x.clone(), h, c);
            let r = self.output(&s.h) - target;
            loss += r.norm_squared() * norm;
            dys.push(r * (2.0 * norm));
            h = s.h.clone();
            c = s.c.clone();
            steps.push(s);
        }
        if !loss.is_finite() {
            return Err(Error::Numerical("C-LSTM loss is not finite".into()));
        }

        let mut dh_next = DMatrix::zeros(hd, bsz);
        let mut dc_next = DMatrix::zeros(hd, bsz);
        let mut da = DMatrix::zeros(4 * hd, bsz);
        for (s, dy) in steps.iter().zip(&dys).rev() {
            grads.v += dy * s.h.transpose();
            grads.c += dy.column_sum();
            let dh = self.params.v.tr_mul(dy) + &dh_next;
            let d_o = dh.component_mul(&s.tc);
            let dc = dh.component_mul(&s.o).component_mul(&s.tc.map(|t| 1.0 - t * t)) + &dc_next;
            let di = dc.component_mul(&s.g);
            let dg = dc.component_mul(&s.i);
            let df = dc.component_mul(&s.c_prev);
            dc_next = dc.component_mul(&s.f);
            da.rows_mut(0, hd).copy_from(&di.component_mul(&s.i.map(|v| v * (1.0 - v))));
            da.rows_mut(hd, hd).copy_from(&df.component_mul(&s.f.map(|v| v * (1.0 - v))));
            da.rows_mut(2 * hd, hd).copy_from(&d_o.component_mul(&s.o.map(|v| v * (1.0 - v))));
            da.rows_mut(3 * hd, hd).copy_from(&dg.component_mul(&s.g.map(|v| 1.0 - v * v)));
            grads.w += &da * s.x.transpose();
            grads.u += &da * s.h_prev.transpose();
            grads.b += da.column_sum();
            dh_next = self.params.u.tr_mul(&da);
        }
        Ok((loss, grads))
    }

    /// Mean squared error over the sequence and its exact gradient with
    /// respect to every weight (backpropagation through the full window).
    pub fn bptt_gradients(&self, inputs: &[DVector<f64>], targets: &[DVector<f64>]) -> Result<(f64, LstmParams)> {
        let x: Vec<DMatrix<f64>> = inputs.iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice())).collect();
        let y: Vec<DMatrix<f64>> = targets.iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice())).collect();
        self.batch_gradients(&x, &y)
    }

    /// Standardized input vectors for a run of frames.
    fn frame_inputs(&self, affects: &[AffectVector], shapes: &[Vec<f64>]) -> Vec<DVector<f64>> {
        let cond = conditioning(affects, self.config.aggregate_affect, self.config.window);
        cond.iter().zip(shapes).map(|(a, s)| concat(a, s)).collect()
    }

    /// Teacher-forced training windows: `n` consecutive frames give `n - 1`
    /// (input, next-frame target) pairs. Windows tile each sequence from the start.
    fn training_windows(&self, corpus: &Corpus) -> Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let n = self.config.window;
        let mut out = Vec::new();
        for seq in &corpus.sequences {
            let affects = seq.affects();
            let shapes: Vec<Vec<f64>> = seq.flat_shapes().iter().map(|s| self.standardizer.transform(s)).collect();
            let mut start = 0;
            while start + n <= seq.len() {
                let inputs = self.frame_inputs(&affects[start..start + n], &shapes[start..start + n]);
                let targets = shapes[start + 1..start + n].iter().map(|s| DVector::from_column_slice(s)).collect();
                out.push((inputs[..n - 1].to_vec(), targets));
                start += n;
            }
        }
        out
    }

    /// Adam training with global-norm clipping for `config.epochs` epochs.
    /// Window order is reshuffled every epoch from `ChaCha8(seed)` stream 1.
    pub fn train(&mut self, corpus: &Corpus) -> Result<TrainReport> {
        if corpus.dim() != self.config.output_dim {
            return Err(Error::DimensionMismatch {
                what: "corpus shape dimension",
                expected: self.config.output_dim,
                got: corpus.dim(),
            });
        }
        if self.config.window < 2 {
            return Err(Error::InvalidConfig("training needs window >= 2".into()));
        }
        let windows = self.training_windows(corpus);
        if windows.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "no sequence is long enough for one window of {} frames",
                self.config.window
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1);
        let mut adam = Adam::new(self.config.learning_rate);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut epoch_losses = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let xs: Vec<&[DVector<f64>]> = chunk.iter().map(|&k| windows[k].0.as_slice()).collect();
                let ys: Vec<&[DVector<f64>]> = chunk.iter().map(|&k| windows[k].1.as_slice()).collect();
                let (loss, mut grads) = self
                    .batch_gradients(&pack(&xs), &pack(&ys))
                    .map_err(|e| match e {
                        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}: {m}")),
                        other => other,
                    })?;
                total += loss;
                clip_global_norm(&mut grads.tensors_mut(), self.config.grad_clip);
                let g = grads.tensors();
                adam.step(&mut self.params.tensors_mut(), &g);
            }
            let mean = total / windows.len() as f64;
            if !mean.is_finite() || !self.params.is_finite() {
                return Err(Error::Numerical(format!("training diverged at epoch {epoch}")));
            }
            epoch_losses.push(mean);
        }
        Ok(TrainReport {
            epoch_losses,
            windows: windows.len(),
            updates: adam.steps(),
        })
    }

    fn check_history(&self, history: &[DyadFrame]) -> Result<()> {
        if history.len() != self.config.window {
            return Err(Error::DimensionMismatch {
                what: "generation history length",
                expected: self.config.window,
                got: history.len(),
            });
        }
        if let Some(f) = history.iter().find(|f| f.agent_shape.dim() != self.config.output_dim) {
            return Err(Error::DimensionMismatch {
                what: "history shape dimension",
                expected: self.config.output_dim,
                got: f.agent_shape.dim(),
            });
        }
        Ok(())
    }

    fn to_params(&self, y: &DMatrix<f64>, col: usize) -> Result<ShapeParams> {
        let z: Vec<f64> = y.column(col).iter().copied().collect();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("generated frame is not finite".into()));
        }
        ShapeParams::from_flat(&self.standardizer.inverse(&z))
    }

    /// Generates `steps` frames after `history` (exactly `n` frames), driven
    /// by `affect_stream` (one affect per generated frame).
    pub fn generate(
        &self,
        history: &[DyadFrame],
        affect_stream: &[AffectVector],
        steps: usize,
        mode: GenerationMode,
    ) -> Result<Vec<ShapeParams>> {
        self.check_history(history)?;
        if affect_stream.len() < steps {
            return Err(Error::DimensionMismatch {
                what: "affect stream length",
                expected: steps,
                got: affect_stream.len(),
            });
        }
        let n = self.config.window;
        // Running record of (affect, standardized shape) for every frame so far.
        let mut affects: Vec<AffectVector> = history.iter().map(|f| f.partner_affect).collect();
        let mut shapes: Vec<Vec<f64>> = history
            .iter()
            .map(|f| self.standardizer.transform(&f.agent_shape.flatten()))
            .collect();
        let mut out = Vec::with_capacity(steps);
        let as_cols = |v: &[DVector<f64>]| -> Vec<DMatrix<f64>> {
            v.iter().map(|x| DMatrix::from_column_slice(x.len(), 1, x.as_slice())).collect()
        };
        while out.len() < steps {
            let lo = shapes.len() - n;
            let inputs = self.frame_inputs(&affects[lo..], &shapes[lo..]);
            let (ys, mut st) = self.forward_batch(&as_cols(&inputs), None)?;
            let mut y = ys.last().expect("window is non-empty").clone();
            let block = match mode {
                GenerationMode::Overlap => 1,
                GenerationMode::NonOverlap => n,
            };
            for k in 0..block.min(steps - out.len()) {
                if k > 0 {
                    // Free-run: feed the previous prediction back with its affect.
                    let j = affects.len() - 1;
                    let lo = (j + 1).saturating_sub(n);
                    let cond = conditioning(&affects[lo..=j], self.config.aggregate_affect, n);
                    let x = concat(cond.last().expect("non-empty"), shapes.last().expect("non-empty"));
                    let (ys, next) = self.forward_batch(&as_cols(&[x]), Some(st))?;
                    st = next;
                    y = ys[0].clone();
                }
                out.push(self.to_params(&y, 0)?);
                affects.push(affect_stream[out.len() - 1]);
                shapes.push(y.column(0).iter().copied().collect());
            }
        }
        Ok(out)
    }

    /// One-step-ahead prediction after each of several true windows (each of
    /// exactly `n` frames), computed as a single batch.
    pub fn predict_next(&self, windows: &[&[DyadFrame]]) -> Result<Vec<ShapeParams>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let mut seqs = Vec::with_capacity(windows.len());
        for w in windows {
            self.check_history(w)?;
            let affects: Vec<AffectVector> = w.iter().map(|f| f.partner_affect).collect();
            let shapes: Vec<Vec<f64>> = w
                .iter()
                .map(|f| self.standardizer.transform(&f.agent_shape.flatten()))
                .collect();
            seqs.push(self.frame_inputs(&affects, &shapes));
        }
        let refs: Vec<&[DVector<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
        let (ys, _) = self.forward_batch(&pack(&refs), None)?;
        let last = ys.last().expect("window is non-empty");
        (0..windows.len()).map(|k| self.to_params(last, k)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("CLSTM v1\n");
        out.push_str(&format!("config {}\n", self.config.echo()));
        self.standardizer.write_text(&mut out);
        write_matrix(&mut out, "w", &self.params.w);
        write_matrix(&mut out, "u", &self.params.u);
        write_matrix(&mut out, "b", &DMatrix::from_row_slice(1, self.params.b.len(), self.params.b.as_slice()));
        write_matrix(&mut out, "v", &self.params.v);
        write_matrix(&mut out, "c", &DMatrix::from_row_slice(1, self.params.c.len(), self.params.c.as_slice()));
        out
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rec = Records::new(name, text);
        rec.expect_header("CLSTM v1")?;
        let (line, echo) = rec.keyed("config")?;
        let config = CLstmConfig::parse_echo(echo).map_err(|e| rec.error(line, e))?;
        config.validate().map_err(|e| rec.error(line, e.to_string()))?;
        let (i, h, d) = (config.input_dim(), config.hidden_dim, config.output_dim);
        let standardizer = Standardizer::read_text(&mut rec, d)?;
        let w = read_matrix(&mut rec, "w", 4 * h, i)?;
        let u = read_matrix(&mut rec, "u", 4 * h, h)?;
        let b = DVector::from_column_slice(read_matrix(&mut rec, "b", 1, 4 * h)?.as_slice());
        let v = read_matrix(&mut rec, "v", d, h)?;
        let c = DVector::from_column_slice(read_matrix(&mut rec, "c", 1, d)?.as_slice());
        if let Some((line, _)) = rec.try_next() {
            return Err(rec.error(line, "trailing data after weights"));
        }
        Self::from_parts(config, LstmParams { w, u, b, v, c }, standardizer)
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

/// Fits the shape standardizer on `corpus`, initializes and trains a model.
pub fn train(corpus: &Corpus, config: &CLstmConfig) -> Result<(CLstmModel, TrainReport)> {
    let standardizer = Standardizer::fit(&corpus.flat_shapes())?;
    let mut model = CLstmModel::new(config.clone(), standardizer)?;
    let report = model.train(corpus)?;
    Ok((model, report))
}

/// Convenience: the first `n` frames of a sequence as generation history.
pub fn history_of(seq: &DyadSequence, n: usize) -> Result<&[DyadFrame]> {
    seq.frames.get(..n).ok_or(Error::DimensionMismatch {
        what: "sequence length for history",
        expected: n,
        got: seq.len(),
    })
}

pub(crate) fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("{name} {} {}\n", m.nrows(), m.ncols()));
    let mut row = vec![0.0; m.ncols()];
    for r in 0..m.nrows() {
        for (k, x) in row.iter_mut().enumerate() {
            *x = m[(r, k)];
        }
        push_row(out, &row);
    }
}

pub(crate) fn read_matrix(rec: &mut Records<'_>, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let (line, dims) = rec.keyed(name)?;
    let expected = format!("{rows} {cols}");
    if dims.split_whitespace().collect::<Vec<_>>().join(" ") != expected {
        return Err(rec.error(line, format!("expected `{name}` to be {rows}x{cols}, found `{dims}`")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        data.extend(rec.floats(cols)?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{AffectClass, DyadSequence};

    pub(crate) fn tiny_model(seed: u64, d: usize, hidden: usize) -> CLstmModel {
        let cfg = CLstmConfig {
            hidden_dim: hidden,
            output_dim: d,
            window: 5,
            seed,
            ..CLstmConfig::default()
        };
        let mut m = CLstmModel::new(cfg, Standardizer::identity(d)).unwrap();
        // Non-trivial biases so every gradient path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for x in m.params.b.iter_mut().chain(m.params.c.iter_mut()) {
            *x += rng.gen_range(-0.5..0.5);
        }
        m
    }

    pub(crate) fn random_io(seed: u64, t: usize, i: usize, d: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..t).map(|_| DVector::from_fn(i, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let y = (0..t).map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0))).collect();
        (x, y)
    }

    /// Largest relative error between analytic and central-difference
    /// gradients, with values below 1e-6 compared absolutely.
    pub(crate) fn max_fd_error(model: &CLstmModel, x: &[DVector<f64>], y: &[DVector<f64>]) -> f64 {
        let (_, grads) = model.bptt_gradients(x, y).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = model.clone();
        for k in 0..5 {
            let len = grads.tensors()[k].len();
            for j in 0..len {
                let orig = probe.params.tensors()[k][j];
                probe.params.tensors_mut()[k][j] = orig + eps;
                let lp = probe.bptt_gradients(x, y).unwrap().0;
                probe.params.tensors_mut()[k][j] = orig - eps;
                let lm = probe.bptt_gradients(x, y).unwrap().0;
                probe.params.tensors_mut()[k][j] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let an = grads.tensors()[k][j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = tiny_model(3, 2, 8);
        let (x, y) = random_io(4, 5, m.config.input_dim(), 2);
        let err = max_fd_error(&m, &x, &y);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_weights_output_bias() {
        let cfg = CLstmConfig {
            hidden_dim: 4,
            output_dim: 3,
            ..CLstmConfig::default()
        };
        let m = CLstmModel::from_parts(cfg, LstmParams::zeros(11, 4, 3), Standardizer::identity(3)).unwrap();
        let (x, _) = random_io(1, 7, 11, 3);
        let (ys, _) = m.forward(&x, None).unwrap();
        assert_eq!(ys.len(), 7);
        assert!(ys.iter().all(|y| y.iter().all(|v| *v == 0.0)));
        let (one, _) = m.forward(&x[..1], None).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn empty_sequence_has_zero_gradient() {
        let m = tiny_model(1, 2, 4);
        let (loss, g) = m.bptt_gradients(&[], &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn duplicated_batch_doubles_gradient() {
        let m = tiny_model(5, 3, 6);
        let (x, y) = random_io(6, 6, m.config.input_dim(), 3);
        let (l1, g1) = m.bptt_gradients(&x, &y).unwrap();
        let xs = pack(&[&x, &x]);
        let ys = pack(&[&y, &y]);
        let (l2, g2) = m.batch_gradients(&xs, &ys).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        assert!((g2.norm() - 2.0 * g1.norm()).abs() < 1e-9);
    }

    #[test]
    fn forward_is_deterministic_and_checks_dims() {
        let m = tiny_model(2, 2, 5);
        let (x, _) = random_io(3, 4, m.config.input_dim(), 2);
        assert_eq!(m.forward(&x, None).unwrap(), m.forward(&x, None).unwrap());
        let bad = vec![DVector::zeros(3)];
        assert!(matches!(m.forward(&bad, None), Err(Error::DimensionMismatch { .. })));
    }

    fn constant_corpus(value: f64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sequences = (0..20)
            .map(|s| {
                let frames = (0..40)
                    .map(|t| {
                        let class = AffectClass::ALL[rng.gen_range(0..8)];
                        let mut flat = vec![value; 8];
                        flat[0] = 1.0;
                        DyadFrame {
                            t,
                            partner_affect: AffectVector::one_hot(class),
                            agent_shape: ShapeParams::from_flat(&flat).unwrap(),
                        }
                    })
                    .collect();
                DyadSequence::new(format!("c{s}"), frames, None).unwrap()
            })
            .collect();
        Corpus {
            sequences,
            synth: None,
            pdm_shapes: None,
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let corpus = constant_corpus(0.3);
        let cfg = CLstmConfig {
            output_dim: 8,
            window: 10,
            epochs: 50,
            ..CLstmConfig::default()
        };
        let (_, report) = train(&corpus, &cfg).unwrap();
        let last = *report.epoch_losses.last().unwrap();
        assert!(last < 1e-3, "final loss {last}");
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let corpus = constant_corpus(0.1);
        let cfg = CLstmConfig {
            output_dim: 8,
            hidden_dim: 8,
            window: 10,
            epochs: 2,
            learning_rate: 0.0,
            ..CLstmConfig::default()
        };
        let init = CLstmModel::new(cfg.clone(), Standardizer::fit(&corpus.flat_shapes()).unwrap()).unwrap();
        let (trained, report) = train(&corpus, &cfg).unwrap();
        assert!(report.updates > 0);
        for (a, b) in init.params.tensors().iter().zip(trained.params.tensors()) {
            let same = a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same);
        }
    }

    #[test]
    fn too_short_corpus_rejected() {
        let corpus = constant_corpus(0.0);
        let cfg = CLstmConfig {
            output_dim: 8,
            window: 41,
            epochs: 1,
            ..CLstmConfig::default()
        };
        assert!(matches!(train(&corpus, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn generation_shapes_and_modes_agree_on_first_frame() {
        let m = tiny_model(7, 8, 6);
        let corpus = constant_corpus(0.2);
        let hist = history_of(&corpus.sequences[0], 5).unwrap();
        let stream = vec![AffectVector::one_hot(AffectClass::Joy); 12];
        assert!(m.generate(hist, &stream, 0, GenerationMode::Overlap).unwrap().is_empty());
        let a = m.generate(hist, &stream, 1, GenerationMode::Overlap).unwrap();
        let b = m.generate(hist, &stream, 12, GenerationMode::NonOverlap).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(b.len(), 12);
        assert!(b.iter().all(|p| p.dim() == 8));
        let c = m.generate(hist, &stream, 12, GenerationMode::Overlap).unwrap();
        assert_eq!(c.len(), 12);
        assert!(m.generate(&hist[..4], &stream, 1, GenerationMode::Overlap).is_err());
        let batch = m.predict_next(&[hist, hist]).unwrap();
        for p in &batch {
            for (x, y) in p.flatten().iter().zip(a[0].flatten()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny_model(11, 3, 4);
        let text = m.to_text();
        let back = CLstmModel::from_text("mem", &text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("overlap".parse::<GenerationMode>().unwrap(), GenerationMode::Overlap);
        assert_eq!("non-overlap".parse::<GenerationMode>().unwrap(), GenerationMode::NonOverlap);
        assert!("both".parse::<GenerationMode>().is_err());
    }
}
