//! Synthetic dyad corpus with planted affect classes and intensity levels.
//!
//! Generation, all driven by one seed:
//! 1. A PDM is built from randomly posed, randomly deformed copies of a
//!    fixed mean face.
//! 2. Eight class offsets are drawn in a unit-free shape space (norm 6,
//!    pairwise distance at least 4.5). Intensity level `l` of `L` scales the
//!    class offset by `0.6 + 0.8 (l - 1) / (L - 1)`.
//! 3. Each sequence follows a piecewise-constant schedule of (class, level)
//!    segments of 60 to 200 frames. The agent shape relaxes towards the
//!    segment target with rate `0.6 l / L` plus gaussian noise of
//!    `0.02 * 6` per step; the partner affect is the one-hot class plus
//!    `N(0, 0.05)` noise clipped at zero.
//!
//! Sequence `i` draws from `ChaCha8(seed + i)` on stream 1; shared state
//! (PDM, class offsets) draws from `ChaCha8(seed)` on stream 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{AffectClass, AffectVector, Corpus, DyadFrame, DyadSequence, FrameLabel, NUM_AFFECT};
use crate::error::{Error, Result};
use crate::face_template::MEAN_FACE_TEMPLATE;
use crate::pdm::{build_pdm, rotation_matrix, Landmarks3D, PdmModel, ShapeParams, NUM_LANDMARKS};

const PDM_TRAINING_SHAPES: usize = 300;
const OFFSET_NORM: f64 = 6.0;
const MIN_CLASS_SEPARATION: f64 = 4.5;
const NOISE_FRACTION: f64 = 0.02;
const AFFECT_NOISE: f64 = 0.05;
const MAX_RATE: f64 = 0.6;
const SEGMENT_LEN: (usize, usize) = (60, 200);
/// Canvas centre used as the base head position.
pub const BASE_TRANSLATION: [f64; 2] = [128.0, 128.0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub seq_len: usize,
    /// PDM rank.
    pub m: usize,
    pub n_intensity_levels: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sequences: 200,
            seq_len: 100,
            m: 10,
            n_intensity_levels: 3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences < 1 {
            return Err(Error::InvalidConfig("n_sequences must be >= 1".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig("seq_len must be >= 2".into()));
        }
        if !(3..=9).contains(&self.n_intensity_levels) {
            return Err(Error::InvalidConfig(
                "n_intensity_levels must be in [3, 9]".into(),
            ));
        }
        if self.m < 1 || self.m >= PDM_TRAINING_SHAPES {
            return Err(Error::InvalidConfig(format!(
                "m must be in [1, {}]",
                PDM_TRAINING_SHAPES - 1
            )));
        }
        Ok(())
    }

    pub fn echo(&self) -> String {
        format!(
            "n_sequences={} seq_len={} m={} n_intensity_levels={} seed={}",
            self.n_sequences, self.seq_len, self.m, self.n_intensity_levels, self.seed
        )
    }

    pub fn parse_echo(s: &str) -> std::result::Result<Self, String> {
        let mut cfg = SynthConfig::default();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("bad config token `{tok}`"))?;
            let bad = |_| format!("bad value for `{k}`");
            match k {
                "n_sequences" => cfg.n_sequences = v.parse().map_err(bad)?,
                "seq_len" => cfg.seq_len = v.parse().map_err(bad)?,
                "m" => cfg.m = v.parse().map_err(bad)?,
                "n_intensity_levels" => cfg.n_intensity_levels = v.parse().map_err(bad)?,
                "seed" => cfg.seed = v.parse().map_err(bad)?,
                _ => return Err(format!("unknown config key `{k}`")),
            }
        }
        Ok(cfg)
    }
}

fn mode_displacements() -> Vec<(f64, Vec<[f64; 3]>)> {
    let mut modes = Vec::new();
    let mut mode = |amp: f64, f: &dyn Fn(usize, [f64; 3]) -> [f64; 3]| {
        let d = (0..NUM_LANDMARKS)
            .map(|i| f(i, MEAN_FACE_TEMPLATE[i]))
            .collect();
        modes.push((amp, d));
    };
    let lower_lip = |i: usize| matches!(i, 55..=59 | 64..=67);
    // Mouth opening: lower lip and chin drop.
    mode(6.0, &|i, _| match i {
        _ if lower_lip(i) => [0.0, 1.0, 0.0],
        6..=10 => [0.0, 0.7, -0.1],
        _ => [0.0; 3],
    });
    // Smile: corners up and out.
    mode(5.0, &|i, p| match i {
        48 | 54 | 60 | 64 => [p[0].signum() * 0.8, -0.6, -0.2],
        49 | 53 | 59 | 55 => [p[0].signum() * 0.4, -0.3, 0.0],
        _ => [0.0; 3],
    });
    // Brow raise.
    mode(4.0, &|i, _| if (17..=26).contains(&i) { [0.0, -1.0, 0.0] } else { [0.0; 3] });
    // Brow furrow.
    mode(3.5, &|i, p| match i {
        19..=24 => [-p[0].signum() * 0.6, 0.5, 0.1],
        _ => [0.0; 3],
    });
    // Eye closing.
    mode(3.0, &|i, _| match i {
        37 | 38 | 43 | 44 => [0.0, 0.7, 0.0],
        40 | 41 | 46 | 47 => [0.0, -0.3, 0.0],
        _ => [0.0; 3],
    });
    // Lip pucker.
    mode(2.5, &|i, p| if (48..=67).contains(&i) { [-p[0] * 0.05, 0.0, 0.4] } else { [0.0; 3] });
    // Lateral jaw shift.
    mode(2.0, &|i, _| match i {
        4..=12 => [1.0, 0.0, 0.0],
        _ if lower_lip(i) => [0.6, 0.0, 0.0],
        _ => [0.0; 3],
    });
    // One-sided smirk.
    mode(1.8, &|i, _| match i {
        54 | 64 | 53 | 55 => [0.5, -0.7, 0.0],
        _ => [0.0; 3],
    });
    // Face width.
    mode(1.5, &|i, p| if i <= 16 { [p[0] * 0.02, 0.0, 0.0] } else { [0.0; 3] });
    // Nose length.
    mode(1.2, &|i, _| if (30..=35).contains(&i) { [0.0, 1.0, 0.3] } else { [0.0; 3] });
    // Eye size.
    mode(1.0, &|i, p| match i {
        36..=41 => [(p[0] + 33.0) * 0.05, (p[1] + 26.0) * 0.1, 0.0],
        42..=47 => [(p[0] - 33.0) * 0.05, (p[1] + 26.0) * 0.1, 0.0],
        _ => [0.0; 3],
    });
    modes
}

/// Randomly posed, randomly deformed copies of the mean face template.
pub fn synthetic_training_shapes(seed: u64, n: usize) -> Vec<Landmarks3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = mode_displacements();
    let noise = Normal::new(0.0, 0.3).unwrap();
    (0..n)
        .map(|_| {
            let mut pts: Vec<[f64; 3]> = MEAN_FACE_TEMPLATE.to_vec();
            for (amp, disp) in &modes {
                let a: f64 = amp * rng.sample::<f64, _>(StandardNormal);
                for (p, dp) in pts.iter_mut().zip(disp) {
                    for k in 0..3 {
                        p[k] += a * dp[k];
                    }
                }
            }
            let rot = rotation_matrix(
                rng.gen_range(-0.25..0.25),
                rng.gen_range(-0.25..0.25),
                rng.gen_range(-0.25..0.25),
            );
            let scale = rng.gen_range(0.8..1.2);
            let shift = [
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
            ];
            let posed = pts
                .iter()
                .map(|p| {
                    let v = rot * nalgebra::Vector3::new(p[0], p[1], p[2]);
                    let mut out = [0.0; 3];
                    for k in 0..3 {
                        out[k] = scale * v[k] + shift[k] + noise.sample(&mut rng);
                    }
                    out
                })
                .collect();
            Landmarks3D::new(posed).expect("finite synthetic shape")
        })
        .collect()
}

/// The PDM used by [`synth_corpus`] for a given seed and rank.
pub fn synthetic_pdm(seed: u64, m: usize) -> Result<PdmModel> {
    build_pdm(&synthetic_training_shapes(seed, PDM_TRAINING_SHAPES), m)
}

/// Per-dimension scale mapping the unit-free generator space to parameters.
fn dimension_scales(pdm: &PdmModel) -> Vec<f64> {
    let mut s = vec![0.04, 0.06, 0.06, 0.06, 6.0, 6.0];
    s.extend(pdm.variances().iter().map(|v| 0.5 * v.sqrt()));
    s
}

fn class_offsets(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    loop {
        let offsets: Vec<Vec<f64>> = (0..NUM_AFFECT)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x * OFFSET_NORM / n).collect()
            })
            .collect();
        let min_sep = (0..NUM_AFFECT)
            .flat_map(|a| (a + 1..NUM_AFFECT).map(move |b| (a, b)))
            .map(|(a, b)| euclid(&offsets[a], &offsets[b]))
            .fold(f64::INFINITY, f64::min);
        if min_sep >= MIN_CLASS_SEPARATION {
            return offsets;
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn intensity_factor(level: usize, levels: usize) -> f64 {
    0.6 + 0.8 * (level - 1) as f64 / (levels - 1) as f64
}

/// Generates the PDM and `n_sequences` labelled dyad sequences.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<(PdmModel, Corpus)> {
    cfg.validate()?;
    let shapes = synthetic_training_shapes(cfg.seed, PDM_TRAINING_SHAPES);
    let pdm = build_pdm(&shapes, cfg.m)?;
    let d = pdm.param_dim();
    let scales = dimension_scales(&pdm);
    let mut base = vec![0.0; d];
    base[0] = 1.0;
    base[4] = BASE_TRANSLATION[0];
    base[5] = BASE_TRANSLATION[1];

    let mut shared = ChaCha8Rng::seed_from_u64(cfg.seed);
    shared.set_stream(0);
    let offsets = class_offsets(&mut shared, d);
    let levels = cfg.n_intensity_levels;
    let step_noise = Normal::new(0.0, NOISE_FRACTION * OFFSET_NORM).unwrap();
    let affect_noise = Normal::new(0.0, AFFECT_NOISE).unwrap();

    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    for i in 0..cfg.n_sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        rng.set_stream(1);

        let mut schedule = Vec::with_capacity(cfg.seq_len);
        while schedule.len() < cfg.seq_len {
            let len = rng.gen_range(SEGMENT_LEN.0..=SEGMENT_LEN.1);
            let class = AffectClass::ALL[rng.gen_range(0..NUM_AFFECT)];
            let level = rng.gen_range(1..=levels);
            schedule.extend(std::iter::repeat((class, level)).take(len));
        }
        schedule.truncate(cfg.seq_len);

        let target = |class: AffectClass, level: usize| -> Vec<f64> {
            let k = intensity_factor(level, levels);
            offsets[class.index()].iter().map(|u| u * k).collect()
        };
        let (c0, l0) = schedule[0];
        let rate0 = MAX_RATE * l0 as f64 / levels as f64;
        let stationary = NOISE_FRACTION * OFFSET_NORM / (2.0 * rate0 - rate0 * rate0).sqrt();
        let mut state: Vec<f64> = target(c0, l0)
            .into_iter()
            .map(|u| u + stationary * rng.sample::<f64, _>(StandardNormal))
            .collect();

        let mut frames = Vec::with_capacity(cfg.seq_len);
        let mut labels = Vec::with_capacity(cfg.seq_len);
        for (t, &(class, level)) in schedule.iter().enumerate() {
            if t > 0 {
                let rate = MAX_RATE * level as f64 / levels as f64;
                let tgt = target(class, level);
                for (s, g) in state.iter_mut().zip(&tgt) {
                    *s += rate * (g - *s) + step_noise.sample(&mut rng);
                }
            }
            let mut affect = [0.0; NUM_AFFECT];
            for (k, a) in affect.iter_mut().enumerate() {
                let hot = if k == class.index() { 1.0 } else { 0.0 };
                *a = (hot + affect_noise.sample(&mut rng)).max(0.0);
            }
            let flat: Vec<f64> = state
                .iter()
                .zip(&scales)
                .zip(&base)
                .map(|((u, s), b)| b + s * u)
                .collect();
            frames.push(DyadFrame {
                t,
                partner_affect: AffectVector::new(affect)?,
                agent_shape: ShapeParams::from_flat(&flat)?,
            });
            labels.push(FrameLabel {
                class,
                intensity: level as u8,
            });
        }
        sequences.push(DyadSequence::new(format!("seq{i:05}"), frames, Some(labels))?);
    }
    Ok((
        pdm,
        Corpus {
            sequences,
            synth: Some(cfg.clone()),
            pdm_shapes: Some(shapes),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{aggregate_affect, affect_argmax, save_corpus};
    use std::collections::{BTreeMap, BTreeSet};

    fn small() -> SynthConfig {
        SynthConfig {
            n_sequences: 40,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SynthConfig { n_sequences: 0, ..small() },
            SynthConfig { seq_len: 1, ..small() },
            SynthConfig { n_intensity_levels: 2, ..small() },
            SynthConfig { n_intensity_levels: 10, ..small() },
        ] {
            assert!(matches!(synth_corpus(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let cfg = SynthConfig { n_sequences: 4, seq_len: 30, ..small() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_corpus(&synth_corpus(&cfg).unwrap().1, a.path()).unwrap();
        save_corpus(&synth_corpus(&cfg).unwrap().1, b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() > 2);
        for n in names {
            assert_eq!(
                std::fs::read(a.path().join(&n)).unwrap(),
                std::fs::read(b.path().join(&n)).unwrap()
            );
        }
    }

    #[test]
    fn three_levels_per_class() {
        let (_, corpus) = synth_corpus(&SynthConfig::default()).unwrap();
        let mut seen: BTreeMap<AffectClass, BTreeSet<u8>> = BTreeMap::new();
        for s in &corpus.sequences {
            for l in s.labels.as_ref().unwrap() {
                seen.entry(l.class).or_default().insert(l.intensity);
            }
        }
        assert_eq!(seen.len(), 8);
        for levels in seen.values() {
            assert_eq!(levels.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
        }
    }

    #[test]
    fn within_class_closer_than_between() {
        let (_, corpus) = synth_corpus(&small()).unwrap();
        // Subsample every 5th frame and compare mean pairwise distances.
        let mut pts = Vec::new();
        for s in &corpus.sequences {
            let labels = s.labels.as_ref().unwrap();
            for (k, f) in s.frames.iter().enumerate().step_by(5) {
                pts.push((labels[k].class, f.agent_shape.flatten()));
            }
        }
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = euclid(&pts[i].1, &pts[j].1);
                if pts[i].0 == pts[j].0 {
                    within += d;
                    nw += 1;
                } else {
                    between += d;
                    nb += 1;
                }
            }
        }
        assert!(within / (nw as f64) < between / (nb as f64));
    }

    #[test]
    fn aggregated_windows_recover_schedule() {
        let (_, corpus) = synth_corpus(&small()).unwrap();
        let (mut hits, mut total) = (0, 0);
        for s in &corpus.sequences {
            let labels = s.labels.as_ref().unwrap();
            let affects = s.affects();
            for start in (0..=s.len().saturating_sub(100)).step_by(10) {
                let win = &labels[start..start + 100];
                if win.iter().any(|l| l.class != win[0].class) {
                    continue;
                }
                total += 1;
                let agg = aggregate_affect(&affects[start..start + 100]).unwrap();
                hits += usize::from(affect_argmax(&agg) == win[0].class);
            }
        }
        assert!(total > 20);
        assert!(hits as f64 >= 0.99 * total as f64, "{hits}/{total}");
    }

    #[test]
    fn class_offsets_well_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let off = class_offsets(&mut rng, 16);
        let within_sd = NOISE_FRACTION * OFFSET_NORM;
        for a in 0..8 {
            for b in a + 1..8 {
                assert!(euclid(&off[a], &off[b]) >= 6.0 * within_sd);
            }
        }
    }
}
