//! Evaluation: reconstruction error, temporal smoothness, cluster recovery
//! and the two-mode C-LSTM comparison, collected into an [`EvalReport`].
//!
//! MSE is the mean over frames and dimensions of squared differences of
//! standardized shape vectors.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clstm::{CLstmModel, GenerationMode};
use crate::corpus::{Corpus, NUM_AFFECT};
use crate::dictionary::AffectShapeDictionary;
use crate::error::{Error, Result};
use crate::pdm::{PdmModel, ShapeParams};
use crate::standardize::Standardizer;
use crate::textio::fmt_f64;

pub const MSE_CONVENTION: &str = "per-frame per-dimension mean of squared differences, standardized shape space";

pub fn mse(generated: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if generated.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "mse sequence length",
            expected: truth.len(),
            got: generated.len(),
        });
    }
    if generated.is_empty() {
        return Err(Error::Empty("mse sequences"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (g, t) in generated.iter().zip(truth) {
        if g.len() != t.len() {
            return Err(Error::DimensionMismatch {
                what: "mse frame dimension",
                expected: t.len(),
                got: g.len(),
            });
        }
        sum += g.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += g.len();
    }
    if count == 0 {
        return Err(Error::Empty("mse frame dimension"));
    }
    Ok(sum / count as f64)
}

/// Euclidean distances between consecutive vectors.
pub fn step_sizes(seq: &[Vec<f64>]) -> Vec<f64> {
    seq.windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect()
}

/// Largest consecutive distance (0 for fewer than two vectors).
pub fn max_step(seq: &[Vec<f64>]) -> f64 {
    step_sizes(seq).into_iter().fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub frames: usize,
    /// Inter-frame displacement in standardized shape space.
    pub mean_disp: f64,
    pub max_disp: f64,
    /// Displacement of the projected landmark centroid, in pixels.
    pub pixel_mean: f64,
    pub pixel_max: f64,
}

pub fn smoothness(seq: &[ShapeParams], pdm: &PdmModel, standardizer: &Standardizer) -> Result<Smoothness> {
    if seq.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "smoothness needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    let z: Vec<Vec<f64>> = seq.iter().map(|p| standardizer.transform(&p.flatten())).collect();
    let centroids = seq
        .iter()
        .map(|p| pdm.project(p).map(|lm| lm.centroid().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let (d, px) = (step_sizes(&z), step_sizes(&centroids));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let s = Smoothness {
        frames: seq.len(),
        mean_disp: mean(&d),
        max_disp: max(&d),
        pixel_mean: mean(&px),
        pixel_max: max(&px),
    };
    if ![s.mean_disp, s.max_disp, s.pixel_mean, s.pixel_max].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("smoothness"));
    }
    Ok(s)
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "labeling length",
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidConfig("ARI needs at least 2 points".into()));
    }
    let (ka, kb) = (a.iter().max().unwrap() + 1, b.iter().max().unwrap() + 1);
    let mut table = vec![0u64; ka * kb];
    for (&i, &j) in a.iter().zip(b) {
        table[i * kb + j] += 1;
    }
    let pairs = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&x| pairs(x)).sum();
    let rows: f64 = (0..ka).map(|i| pairs(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let expected = rows * cols / pairs(n as u64);
    let max = 0.5 * (rows + cols);
    if max == expected {
        // Both labelings trivial (single cluster or all singletons).
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecovery {
    pub frames: usize,
    pub ari: f64,
    /// Per class: fraction of frames classified as that class whose planted
    /// class agrees (0 when nothing is classified there).
    pub purity: Vec<f64>,
    /// Subclusters per class.
    pub subcluster_counts: Vec<usize>,
    pub min_subcluster_size: usize,
    /// Every class has between 3 and 9 subclusters.
    pub counts_in_range: bool,
}

/// Classifies every frame of a labeled corpus with the dictionary and scores
/// it against the planted classes.
pub fn cluster_recovery(dict: &AffectShapeDictionary, corpus: &Corpus) -> Result<ClusterRecovery> {
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for seq in &corpus.sequences {
        let labels = seq
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("sequence `{}` has no planted labels", seq.id)))?;
        for (f, l) in seq.frames.iter().zip(labels) {
            pred.push(dict.classify(&f.agent_shape.flatten()).index());
            truth.push(l.class.index());
        }
    }
    let ari = adjusted_rand_index(&pred, &truth)?;
    let purity = (0..NUM_AFFECT)
        .map(|c| {
            let mine: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] == c).collect();
            if mine.is_empty() {
                0.0
            } else {
                mine.iter().filter(|&&i| truth[i] == c).count() as f64 / mine.len() as f64
            }
        })
        .collect();
    let subcluster_counts: Vec<usize> = dict.clusters().iter().map(|c| c.subclusters.len()).collect();
    let min_subcluster_size = dict
        .clusters()
        .iter()
        .flat_map(|c| c.subclusters.iter().map(|s| s.size()))
        .min()
        .unwrap_or(0);
    Ok(ClusterRecovery {
        frames: pred.len(),
        ari,
        purity,
        counts_in_range: subcluster_counts.iter().all(|&k| (3..=9).contains(&k)),
        subcluster_counts,
        min_subcluster_size,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    /// Frames of history the method needs before it can generate.
    pub history_frames: usize,
    pub frames: usize,
    pub mse: Option<f64>,
    pub secs_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse_convention: String,
    pub methods: Vec<MethodReport>,
    pub smoothness: Option<Smoothness>,
    pub cluster: Option<ClusterRecovery>,
    /// MSE(overlap) < MSE(non-overlap), when both modes were run.
    pub overlap_better: Option<bool>,
    pub config: Vec<(String, String)>,
}

impl Default for EvalReport {
    fn default() -> Self {
        Self {
            mse_convention: MSE_CONVENTION.into(),
            methods: Vec::new(),
            smoothness: None,
            cluster: None,
            overlap_better: None,
            config: Vec::new(),
        }
    }
}

/// Generates `horizon` frames after each history of `n` true frames with both
/// generation modes and scores them against the true continuation.
/// Histories start every `n + horizon` frames; sequences too short for one
/// are skipped.
pub fn compare_modes(model: &CLstmModel, test: &Corpus, horizon: usize) -> Result<EvalReport> {
    let n = model.config().window;
    if horizon == 0 {
        return Err(Error::InvalidConfig("comparison horizon must be >= 1".into()));
    }
    let std = model.standardizer();
    let mut truth = Vec::new();
    let mut runs = Vec::new();
    for seq in &test.sequences {
        let mut start = 0;
        while start + n + horizon <= seq.len() {
            let history = &seq.frames[start..start + n];
            let future = &seq.frames[start + n..start + n + horizon];
            truth.extend(future.iter().map(|f| std.transform(&f.agent_shape.flatten())));
            runs.push((history, future.iter().map(|f| f.partner_affect).collect::<Vec<_>>()));
            start += n + horizon;
        }
    }
    if runs.is_empty() {
        return Err(Error::Empty("test sequences long enough for history plus horizon"));
    }
    let mut report = EvalReport::default();
    for mode in [GenerationMode::Overlap, GenerationMode::NonOverlap] {
        let t0 = Instant::now();
        let mut gen = Vec::with_capacity(truth.len());
        for (history, affects) in &runs {
            for p in model.generate(history, affects, horizon, mode)? {
                gen.push(std.transform(&p.flatten()));
            }
        }
        let secs = t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        report.methods.push(MethodReport {
            name: format!("lstm-{mode}"),
            history_frames: n,
            frames: gen.len(),
            mse: Some(mse(&gen, &truth)?),
            secs_per_frame: secs / gen.len() as f64,
        });
    }
    let (o, no) = (report.methods[0].mse.unwrap(), report.methods[1].mse.unwrap());
    if !(o.is_finite() && no.is_finite()) {
        return Err(Error::Numerical("comparison MSE is not finite".into()));
    }
    report.overlap_better = Some(o < no);
    report.config = vec![
        ("lstm.window".into(), n.to_string()),
        ("compare.horizon".into(), horizon.to_string()),
        ("compare.runs".into(), runs.len().to_string()),
    ];
    Ok(report)
}

impl EvalReport {
    /// Appends the other report's entries; scalar sections are taken from
    /// `other` when present.
    pub fn merge(&mut self, other: EvalReport) {
        self.methods.extend(other.methods);
        self.smoothness = other.smoothness.or(self.smoothness);
        self.cluster = other.cluster.or(self.cluster.take());
        self.overlap_better = other.overlap_better.or(self.overlap_better);
        self.config.extend(other.config);
    }

    pub fn is_finite(&self) -> bool {
        let m = self
            .methods
            .iter()
            .all(|m| m.secs_per_frame.is_finite() && m.mse.map_or(true, f64::is_finite));
        let s = self.smoothness.map_or(true, |s| {
            [s.mean_disp, s.max_disp, s.pixel_mean, s.pixel_max].iter().all(|v| v.is_finite())
        });
        let c = self
            .cluster
            .as_ref()
            .map_or(true, |c| c.ari.is_finite() && c.purity.iter().all(|p| p.is_finite()));
        m && s && c
    }

    /// Line-oriented `key=value` form. Keys:
    /// `mse_convention`, `methods`, `method.<name>.{history_frames,frames,mse,secs_per_frame}`,
    /// `smoothness.{frames,mean_disp,max_disp,pixel_mean,pixel_max}`,
    /// `cluster.{frames,ari,purity,subcluster_counts,min_subcluster_size,counts_in_range}`,
    /// `ordering.overlap_better`, `config.<key>`.
    pub fn to_kv(&self) -> String {
        let mut out = String::from("# eval report v1\n");
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("mse_convention", self.mse_convention.clone());
        kv("methods", self.methods.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join(","));
        for m in &self.methods {
            let p = format!("method.{}", m.name);
            kv(&format!("{p}.history_frames"), m.history_frames.to_string());
            kv(&format!("{p}.frames"), m.frames.to_string());
            kv(&format!("{p}.mse"), m.mse.map_or("none".into(), fmt_f64));
            kv(&format!("{p}.secs_per_frame"), fmt_f64(m.secs_per_frame));
        }
        if let Some(s) = &self.smoothness {
            kv("smoothness.frames", s.frames.to_string());
            kv("smoothness.mean_disp", fmt_f64(s.mean_disp));
            kv("smoothness.max_disp", fmt_f64(s.max_disp));
            kv("smoothness.pixel_mean", fmt_f64(s.pixel_mean));
            kv("smoothness.pixel_max", fmt_f64(s.pixel_max));
        }
        if let Some(c) = &self.cluster {
            kv("cluster.frames", c.frames.to_string());
            kv("cluster.ari", fmt_f64(c.ari));
            kv("cluster.purity", c.purity.iter().map(|&p| fmt_f64(p)).collect::<Vec<_>>().join(","));
            kv(
                "cluster.subcluster_counts",
                c.subcluster_counts.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            );
            kv("cluster.min_subcluster_size", c.min_subcluster_size.to_string());
            kv("cluster.counts_in_range", c.counts_in_range.to_string());
        }
        if let Some(b) = self.overlap_better {
            kv("ordering.overlap_better", b.to_string());
        }
        for (k, v) in &self.config {
            kv(&format!("config.{k}"), v.clone());
        }
        out
    }

    pub fn from_kv(name: &str, text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        let mut config = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                source_name: name.into(),
                line: i + 1,
                msg: format!("expected key=value, found `{line}`"),
            })?;
            match k.strip_prefix("config.") {
                Some(ck) => config.push((ck.to_string(), v.to_string())),
                None => {
                    map.insert(k.to_string(), (i + 1, v.to_string()));
                }
            }
        }
        let bad = |line: usize, msg: String| Error::Parse {
            source_name: name.into(),
            line,
            msg,
        };
        let get = |k: &str| -> Result<Option<(usize, &str)>> { Ok(map.get(k).map(|(l, v)| (*l, v.as_str()))) };
        let req = |k: &str| -> Result<(usize, &str)> {
            get(k)?.ok_or_else(|| bad(0, format!("missing key `{k}`")))
        };
        fn num<T: std::str::FromStr>(name: &str, (line, v): (usize, &str)) -> Result<T> {
            v.parse().map_err(|_| Error::Parse {
                source_name: name.into(),
                line,
                msg: format!("bad value `{v}`"),
            })
        }
        let list = |k: &str| -> Result<Vec<(usize, String)>> {
            let (line, v) = req(k)?;
            Ok(v.split(',').filter(|s| !s.is_empty()).map(|s| (line, s.to_string())).collect())
        };

        let mut report = EvalReport {
            mse_convention: req("mse_convention")?.1.to_string(),
            config,
            ..Default::default()
        };
        for (_, m) in list("methods")? {
            let p = format!("method.{m}");
            let mse_entry = req(&format!("{p}.mse"))?;
            report.methods.push(MethodReport {
                history_frames: num(name, req(&format!("{p}.history_frames"))?)?,
                frames: num(name, req(&format!("{p}.frames"))?)?,
                mse: if mse_entry.1 == "none" { None } else { Some(num(name, mse_entry)?) },
                secs_per_frame: num(name, req(&format!("{p}.secs_per_frame"))?)?,
                name: m,
            });
        }
        if get("smoothness.frames")?.is_some() {
            report.smoothness = Some(Smoothness {
                frames: num(name, req("smoothness.frames")?)?,
                mean_disp: num(name, req("smoothness.mean_disp")?)?,
                max_disp: num(name, req("smoothness.max_disp")?)?,
                pixel_mean: num(name, req("smoothness.pixel_mean")?)?,
                pixel_max: num(name, req("smoothness.pixel_max")?)?,
            });
        }
        if get("cluster.frames")?.is_some() {
            report.cluster = Some(ClusterRecovery {
                frames: num(name, req("cluster.frames")?)?,
                ari: num(name, req("cluster.ari")?)?,
                purity: list("cluster.purity")?
                    .iter()
                    .map(|(l, v)| num(name, (*l, v.as_str())))
                    .collect::<Result<_>>()?,
                subcluster_counts: list("cluster.subcluster_counts")?
                    .iter()
                    .map(|(l, v)| num(name, (*l, v.as_str())))
                    .collect::<Result<_>>()?,
                min_subcluster_size: num(name, req("cluster.min_subcluster_size")?)?,
                counts_in_range: num(name, req("cluster.counts_in_range")?)?,
            });
        }
        if let Some(e) = get("ordering.overlap_better")? {
            report.overlap_better = Some(num(name, e)?);
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: "json report".into(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn mse_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_seq(&mut rng, 10, 4), random_seq(&mut rng, 10, 4));
        let mut acc = 0.0;
        for i in 0..10 {
            for j in 0..4 {
                acc += (a[i][j] - b[i][j]).powi(2);
            }
        }
        assert!((mse(&a, &b).unwrap() - acc / 40.0).abs() < 1e-12);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mse_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_seq(&mut rng, 7, 5);
        let b: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x + 0.3).collect()).collect();
        assert!((mse(&a, &b).unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_mismatch() {
        let a = vec![vec![0.0; 3]; 4];
        assert!(matches!(mse(&a, &a[..3]), Err(Error::DimensionMismatch { .. })));
        assert!(mse(&[vec![0.0; 2]], &[vec![0.0; 3]]).is_err());
        assert!(matches!(mse(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn ari_perfect_and_relabelled() {
        let a = [0, 0, 1, 1, 2, 2, 2];
        let b = [5, 5, 3, 3, 0, 0, 0];
        assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_matches_pair_counting() {
        // Brute force over all pairs for a small random labeling.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<usize> = (0..40).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<usize> = a.iter().map(|&x| if rng.gen_bool(0.7) { x } else { rng.gen_range(0..3) }).collect();
        let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..40 {
            for j in i + 1..40 {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => ss += 1.0,
                    (true, false) => sd += 1.0,
                    (false, true) => ds += 1.0,
                    (false, false) => dd += 1.0,
                }
            }
        }
        // Pair-confusion form of the adjusted index.
        let expect = 2.0 * (ss * dd - sd * ds) / ((ss + sd) * (sd + dd) + (ss + ds) * (ds + dd));
        assert!((adjusted_rand_index(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ari_random_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..8)).collect();
        let b: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..8)).collect();
        assert!(adjusted_rand_index(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn smoothness_unit_step() {
        let pdm = crate::corpus::synth::synthetic_pdm(1, 4).unwrap();
        let id = Standardizer::identity(10);
        let p0 = pdm.neutral_params();
        let mut p1 = p0.clone();
        p1.nonrigid[0] += 1.0;
        let s = smoothness(&[p0.clone(), p1], &pdm, &id).unwrap();
        assert!((s.mean_disp - 1.0).abs() < 1e-12 && (s.max_disp - 1.0).abs() < 1e-12);
        let c = smoothness(&[p0.clone(), p0.clone(), p0.clone()], &pdm, &id).unwrap();
        assert_eq!((c.mean_disp, c.max_disp, c.pixel_mean, c.pixel_max), (0.0, 0.0, 0.0, 0.0));
        assert!(smoothness(&[p0], &pdm, &id).is_err());
    }

    #[test]
    fn smoothness_pixel_is_translation() {
        let pdm = crate::corpus::synth::synthetic_pdm(1, 4).unwrap();
        let p0 = pdm.neutral_params();
        let mut p1 = p0.clone();
        p1.rigid.tx += 3.0;
        p1.rigid.ty += 4.0;
        let s = smoothness(&[p0, p1], &pdm, &Standardizer::identity(10)).unwrap();
        assert!((s.pixel_max - 5.0).abs() < 1e-9);
    }

    #[test]
    fn compare_modes_repeatable() {
        use crate::corpus::synth::{synth_corpus, SynthConfig};
        let (_, corpus) = synth_corpus(&SynthConfig {
            n_sequences: 6,
            seq_len: 40,
            m: 3,
            ..Default::default()
        })
        .unwrap();
        let cfg = crate::clstm::CLstmConfig {
            hidden_dim: 6,
            output_dim: corpus.dim(),
            window: 10,
            epochs: 2,
            ..Default::default()
        };
        let (model, _) = crate::clstm::train(&corpus, &cfg).unwrap();
        let a = compare_modes(&model, &corpus, 15).unwrap();
        let b = compare_modes(&model, &corpus, 15).unwrap();
        let mses = |r: &EvalReport| r.methods.iter().map(|m| m.mse).collect::<Vec<_>>();
        assert_eq!(mses(&a), mses(&b));
        assert_eq!(a.overlap_better, b.overlap_better);
        // Each 40-frame sequence holds one 25-frame history+horizon run.
        assert!(a.methods.iter().all(|m| m.secs_per_frame > 0.0 && m.frames == 6 * 15));
        assert!(matches!(compare_modes(&model, &corpus, 31), Err(Error::Empty(_))));
    }

    fn sample_report() -> EvalReport {
        EvalReport {
            methods: vec![
                MethodReport {
                    name: "dict".into(),
                    history_frames: 0,
                    frames: 400,
                    mse: None,
                    secs_per_frame: 1.25e-5,
                },
                MethodReport {
                    name: "lstm-overlap".into(),
                    history_frames: 100,
                    frames: 300,
                    mse: Some(0.1 + 1e-17),
                    secs_per_frame: 3.0e-3,
                },
            ],
            smoothness: Some(Smoothness {
                frames: 400,
                mean_disp: 0.123456789,
                max_disp: 1.0 / 3.0,
                pixel_mean: 0.2,
                pixel_max: 2.5,
            }),
            cluster: Some(ClusterRecovery {
                frames: 20000,
                ari: 0.97,
                purity: vec![0.9, 1.0, 0.95, 0.99, 0.0, 1.0, 0.5, 0.25],
                subcluster_counts: vec![3, 4, 9, 3, 3, 5, 6, 7],
                min_subcluster_size: 101,
                counts_in_range: true,
            }),
            overlap_better: Some(true),
            config: vec![("dict.min_size".into(), "100".into()), ("echo".into(), "a=b c=d".into())],
            ..Default::default()
        }
    }

    #[test]
    fn report_round_trips() {
        let r = sample_report();
        assert!(r.is_finite());
        assert_eq!(EvalReport::from_kv("r", &r.to_kv()).unwrap(), r);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        let empty = EvalReport::default();
        assert_eq!(EvalReport::from_kv("e", &empty.to_kv()).unwrap(), empty);
    }

    #[test]
    fn report_parse_errors() {
        assert!(EvalReport::from_kv("r", "methods=\n").is_err());
        assert!(EvalReport::from_kv("r", "garbage\n").is_err());
        let bad = sample_report().to_kv().replace("cluster.ari=", "cluster.ari=x");
        assert!(matches!(EvalReport::from_kv("r", &bad), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn mse_symmetric_and_permutation_equivariant(seed in 0u64..500, n in 1usize..20, d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_seq(&mut rng, n, d), random_seq(&mut rng, n, d));
            let m = mse(&a, &b).unwrap();
            prop_assert_eq!(m, mse(&b, &a).unwrap());
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let pa: Vec<Vec<f64>> = perm.iter().map(|&i| a[i].clone()).collect();
            let pb: Vec<Vec<f64>> = perm.iter().map(|&i| b[i].clone()).collect();
            prop_assert!((mse(&pa, &pb).unwrap() - m).abs() <= 1e-12 * m.max(1.0));
        }
    }
}
