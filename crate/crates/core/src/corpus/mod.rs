//! Affect vectors, dyad sequences and the on-disk corpus layout.
//!
//! A corpus directory holds a `manifest` (format tag, optional generator
//! config echo, dimension, sequence file list) and one text file per
//! sequence. Each frame line is `t a_1..a_8 p_1..p_d [class intensity]`.

pub mod synth;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pdm::{Landmarks3D, ShapeParams, NUM_LANDMARKS};
use crate::textio::{push_row, Records};

pub use synth::{synth_corpus, SynthConfig};

pub const NUM_AFFECT: usize = 8;
/// Nominal capture rate; 100 frames is about 3.3 s.
pub const FRAME_RATE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AffectClass {
    Joy = 0,
    Anger = 1,
    Surprise = 2,
    Fear = 3,
    Contempt = 4,
    Disgust = 5,
    Sadness = 6,
    Neutral = 7,
}

impl AffectClass {
    pub const ALL: [AffectClass; NUM_AFFECT] = [
        AffectClass::Joy,
        AffectClass::Anger,
        AffectClass::Surprise,
        AffectClass::Fear,
        AffectClass::Contempt,
        AffectClass::Disgust,
        AffectClass::Sadness,
        AffectClass::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AffectClass::Joy => "joy",
            AffectClass::Anger => "anger",
            AffectClass::Surprise => "surprise",
            AffectClass::Fear => "fear",
            AffectClass::Contempt => "contempt",
            AffectClass::Disgust => "disgust",
            AffectClass::Sadness => "sadness",
            AffectClass::Neutral => "neutral",
        }
    }
}

impl fmt::Display for AffectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AffectClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == lower)
            .or_else(|| s.parse::<usize>().ok().and_then(Self::from_index))
            .ok_or_else(|| format!("unknown affect class `{s}`"))
    }
}

/// Per-class likelihoods, index-aligned with [`AffectClass`]. Components are
/// non-negative but need not sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffectVector([f64; NUM_AFFECT]);

impl AffectVector {
    pub fn new(values: [f64; NUM_AFFECT]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affect vector"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig(
                "affect likelihoods must be non-negative".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_AFFECT] = values.try_into().map_err(|_| Error::DimensionMismatch {
            what: "affect vector",
            expected: NUM_AFFECT,
            got: values.len(),
        })?;
        Self::new(arr)
    }

    pub fn one_hot(class: AffectClass) -> Self {
        let mut v = [0.0; NUM_AFFECT];
        v[class.index()] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64; NUM_AFFECT] {
        &self.0
    }
}

/// Combines a window of per-frame affect vectors into one descriptor
/// (component-wise temporal mean).
pub fn aggregate_affect(window: &[AffectVector]) -> Result<AffectVector> {
    if window.is_empty() {
        return Err(Error::Empty("affect window"));
    }
    // Mean of deviations from the first frame: exact on constant windows.
    let first = window[0].0;
    let mut dev = [0.0; NUM_AFFECT];
    for v in &window[1..] {
        for ((d, x), f) in dev.iter_mut().zip(v.values()).zip(&first) {
            *d += x - f;
        }
    }
    let n = window.len() as f64;
    let mut acc = first;
    for (a, d) in acc.iter_mut().zip(dev) {
        *a = (*a + d / n).max(0.0);
    }
    Ok(AffectVector(acc))
}

/// Index of the largest likelihood; ties go to the lowest index.
pub fn affect_argmax(v: &AffectVector) -> AffectClass {
    let mut best = 0;
    for (i, &x) in v.values().iter().enumerate().skip(1) {
        if x > v.values()[best] {
            best = i;
        }
    }
    AffectClass::ALL[best]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLabel {
    pub class: AffectClass,
    /// 1-based intensity level.
    pub intensity: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadFrame {
    pub t: usize,
    pub partner_affect: AffectVector,
    pub agent_shape: ShapeParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadSequence {
    pub id: String,
    pub frames: Vec<DyadFrame>,
    pub labels: Option<Vec<FrameLabel>>,
}

impl DyadSequence {
    pub fn new(id: String, frames: Vec<DyadFrame>, labels: Option<Vec<FrameLabel>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("dyad sequence"));
        }
        let t0 = frames[0].t;
        if frames.iter().enumerate().any(|(k, f)| f.t != t0 + k) {
            return Err(Error::InvalidConfig(format!(
                "sequence `{id}` frame indices are not contiguous"
            )));
        }
        let d = frames[0].agent_shape.dim();
        if let Some(f) = frames.iter().find(|f| f.agent_shape.dim() != d) {
            return Err(Error::DimensionMismatch {
                what: "sequence shape parameters",
                expected: d,
                got: f.agent_shape.dim(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != frames.len() {
                return Err(Error::DimensionMismatch {
                    what: "sequence labels",
                    expected: frames.len(),
                    got: l.len(),
                });
            }
        }
        Ok(Self { id, frames, labels })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].agent_shape.dim()
    }

    pub fn affects(&self) -> Vec<AffectVector> {
        self.frames.iter().map(|f| f.partner_affect).collect()
    }

    pub fn flat_shapes(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.agent_shape.flatten()).collect()
    }

    /// Class of the aggregated affect over the trailing `window` frames
    /// ending at each frame (shorter at the start of the sequence).
    pub fn windowed_classes(&self, window: usize) -> Vec<AffectClass> {
        let window = window.max(1);
        let affects = self.affects();
        (0..affects.len())
            .map(|t| {
                let lo = (t + 1).saturating_sub(window);
                affect_argmax(&aggregate_affect(&affects[lo..=t]).expect("non-empty"))
            })
            .collect()
    }

    fn to_text(&self) -> String {
        let mut out = String::from("SEQ v1\n");
        out.push_str(&format!("id {}\n", self.id));
        out.push_str(&format!("frames {}\n", self.frames.len()));
        out.push_str(&format!("d {}\n", self.dim()));
        out.push_str(&format!("labels {}\n", u8::from(self.labels.is_some())));
        for (k, f) in self.frames.iter().enumerate() {
            let mut row: Vec<f64> = f.partner_affect.values().to_vec();
            row.extend(f.agent_shape.flatten());
            out.push_str(&format!("{} ", f.t));
            let mut line = String::new();
            push_row(&mut line, &row);
            if let Some(labels) = &self.labels {
                line.pop();
                line.push_str(&format!(" {} {}\n", labels[k].class.index(), labels[k].intensity));
            }
            out.push_str(&line);
        }
        out
    }

    fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rec = Records::new(name, text);
        rec.expect_header("SEQ v1")?;
        let (_, id) = rec.keyed("id")?;
        let id = id.to_string();
        let n: usize = rec.keyed_value("frames")?;
        let d: usize = rec.keyed_value("d")?;
        let has_labels: u8 = rec.keyed_value("labels")?;
        let mut frames = Vec::with_capacity(n);
        let mut labels = Vec::new();
        for _ in 0..n {
            let (line, text) = rec.next_record()?;
            let mut toks = text.split_whitespace();
            let t: usize = toks
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| rec.error(line, "invalid frame index"))?;
            let rest: Vec<&str> = toks.collect();
            let n_vals = NUM_AFFECT + d;
            let expected = n_vals + if has_labels == 1 { 2 } else { 0 };
            if rest.len() != expected {
                return Err(rec.error(
                    line,
                    format!("expected {} fields, found {}", expected + 1, rest.len() + 1),
                ));
            }
            let vals = rec.parse_floats_at(line, &rest[..n_vals].join(" "), n_vals)?;
            let affect = AffectVector::from_slice(&vals[..NUM_AFFECT])
                .map_err(|e| rec.error(line, e.to_string()))?;
            let shape = ShapeParams::from_flat(&vals[NUM_AFFECT..])
                .map_err(|e| rec.error(line, e.to_string()))?;
            if has_labels == 1 {
                let class = rest[n_vals]
                    .parse::<usize>()
                    .ok()
                    .and_then(AffectClass::from_index)
                    .ok_or_else(|| rec.error(line, "invalid class label"))?;
                let intensity = rest[n_vals + 1]
                    .parse::<u8>()
                    .map_err(|_| rec.error(line, "invalid intensity label"))?;
                labels.push(FrameLabel { class, intensity });
            }
            frames.push(DyadFrame {
                t,
                partner_affect: affect,
                agent_shape: shape,
            });
        }
        if let Some((line, _)) = rec.try_next() {
            return Err(rec.error(line, "trailing data after last frame"));
        }
        DyadSequence::new(id, frames, (has_labels == 1).then_some(labels))
            .map_err(|e| rec.error(1, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<DyadSequence>,
    /// Generator settings when the corpus is synthetic.
    pub synth: Option<SynthConfig>,
    /// 3D shapes the corpus PDM was trained on, if shipped with the corpus.
    pub pdm_shapes: Option<Vec<Landmarks3D>>,
}

impl Corpus {
    pub fn dim(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.dim())
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// Every agent shape in the corpus, flattened, in sequence order.
    pub fn flat_shapes(&self) -> Vec<Vec<f64>> {
        self.sequences.iter().flat_map(|s| s.flat_shapes()).collect()
    }
}

const MANIFEST: &str = "manifest";
const PDM_SHAPES: &str = "pdm_shapes.txt";

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("CORPUS v1\n");
    match &corpus.synth {
        Some(cfg) => manifest.push_str(&format!("config {}\n", cfg.echo())),
        None => manifest.push_str("config none\n"),
    }
    manifest.push_str(&format!("d {}\n", corpus.dim()));
    match &corpus.pdm_shapes {
        Some(shapes) => {
            manifest.push_str(&format!("pdm_shapes {PDM_SHAPES}\n"));
            let mut text = format!("SHAPES3D v1\n{}\n", shapes.len());
            for s in shapes {
                for p in s.points() {
                    push_row(&mut text, p);
                }
            }
            std::fs::write(dir.join(PDM_SHAPES), text)?;
        }
        None => manifest.push_str("pdm_shapes none\n"),
    }
    manifest.push_str(&format!("sequences {}\n", corpus.sequences.len()));
    for (i, seq) in corpus.sequences.iter().enumerate() {
        let file = format!("seq_{i:05}.txt");
        std::fs::write(dir.join(&file), seq.to_text())?;
        manifest.push_str(&file);
        manifest.push('\n');
    }
    std::fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)?;
    let name = path.display().to_string();
    let mut rec = Records::new(name, &text);
    rec.expect_header("CORPUS v1")?;
    let (line, cfg) = rec.keyed("config")?;
    let synth = match cfg {
        "none" => None,
        echo => Some(SynthConfig::parse_echo(echo).map_err(|msg| rec.error(line, msg))?),
    };
    let d: usize = rec.keyed_value("d")?;
    let (_, shapes_file) = rec.keyed("pdm_shapes")?;
    let pdm_shapes = match shapes_file {
        "none" => None,
        file => Some(load_shapes(&dir.join(file))?),
    };
    let n: usize = rec.keyed_value("sequences")?;
    let mut sequences = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, file) = rec.next_record()?;
        let seq_path = dir.join(file);
        let seq_text = std::fs::read_to_string(&seq_path)
            .map_err(|e| rec.error(line, format!("cannot read `{file}`: {e}")))?;
        let seq = DyadSequence::from_text(&seq_path.display().to_string(), &seq_text)?;
        if seq.dim() != d {
            return Err(rec.error(line, format!("`{file}` has dimension {}, manifest says {d}", seq.dim())));
        }
        sequences.push(seq);
    }
    if sequences.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    Ok(Corpus {
        sequences,
        synth,
        pdm_shapes,
    })
}

fn load_shapes(path: &Path) -> Result<Vec<Landmarks3D>> {
    let text = std::fs::read_to_string(path)?;
    let mut rec = Records::new(path.display().to_string(), &text);
    rec.expect_header("SHAPES3D v1")?;
    let n: usize = rec.value()?;
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pts = Vec::with_capacity(NUM_LANDMARKS);
        for _ in 0..NUM_LANDMARKS {
            let v = rec.floats(3)?;
            pts.push([v[0], v[1], v[2]]);
        }
        shapes.push(Landmarks3D::new(pts)?);
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn av(v: [f64; 8]) -> AffectVector {
        AffectVector::new(v).unwrap()
    }

    #[test]
    fn aggregate_of_identical_is_identity() {
        let v = av([0.1, 0.2, 0.0, 0.5, 0.3, 0.0, 0.9, 0.4]);
        assert_eq!(aggregate_affect(&[v; 7]).unwrap(), v);
    }

    #[test]
    fn aggregate_of_two_one_hots() {
        let a = AffectVector::one_hot(AffectClass::Joy);
        let b = AffectVector::one_hot(AffectClass::Anger);
        assert_eq!(
            aggregate_affect(&[a, b]).unwrap(),
            av([0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        );
    }

    #[test]
    fn aggregate_empty_errors() {
        assert!(matches!(aggregate_affect(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(affect_argmax(&AffectVector::one_hot(AffectClass::Joy)), AffectClass::Joy);
        assert_eq!(affect_argmax(&av([0.0; 8])), AffectClass::Joy);
        assert_eq!(
            affect_argmax(&av([0.1, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])),
            AffectClass::Anger
        );
    }

    #[test]
    fn negative_affect_rejected() {
        assert!(AffectVector::new([-0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(AffectVector::new([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn class_parse() {
        assert_eq!("Sadness".parse::<AffectClass>().unwrap(), AffectClass::Sadness);
        assert_eq!("3".parse::<AffectClass>().unwrap(), AffectClass::Fear);
        assert!("bored".parse::<AffectClass>().is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            rows in prop::collection::vec(prop::array::uniform8(0.0f64..1.0), 1..20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let window: Vec<AffectVector> = rows.iter().map(|r| av(*r)).collect();
            let mut shuffled = window.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_affect(&window).unwrap();
            let b = aggregate_affect(&shuffled).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corpus_round_trip_and_bad_line() {
        let cfg = SynthConfig {
            n_sequences: 3,
            seq_len: 12,
            ..SynthConfig::default()
        };
        let (_, corpus) = synth_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, corpus);

        let file = dir.path().join("seq_00001.txt");
        let text = std::fs::read_to_string(&file).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[8] = "3 not numbers";
        std::fs::write(&file, lines.join("\n")).unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("seq_00001.txt:9:"), "{err}");
    }
}
