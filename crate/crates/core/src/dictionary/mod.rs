//! Affect-shape dictionary: a two-level clustering of per-frame shape
//! parameters and a temporally constrained z sampler.
//!
//! Level one runs k-means (k = 8) on standardized shape vectors and maps each
//! cluster to an affect class; level two splits every class with Ward
//! agglomeration into intensity subclusters. Sampling routes on the partner's
//! affect and draws among the nearest neighbours of the previous z, which
//! keeps consecutive frames close while leaving room for variety.

pub mod kmeans;
pub mod ward;

use std::path::Path;

use rand::Rng;

use crate::corpus::{affect_argmax, AffectClass, AffectVector, Corpus, NUM_AFFECT};
use crate::error::{Error, Result};
use crate::standardize::Standardizer;
use crate::textio::{push_row, Records};
use kmeans::{kmeans_best_of, nearest, sq_dist};
pub use ward::SubCluster;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictionaryConfig {
    /// Minimum subcluster size.
    pub min_size: usize,
    pub seed: u64,
    /// Trailing window (frames) over which partner affect is aggregated to
    /// label each frame.
    pub affect_window: usize,
    /// Independent k-means restarts; the lowest-WCSS run is kept.
    pub n_init: usize,
    pub max_subclusters: usize,
    pub min_subclusters: usize,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self {
            min_size: 100,
            seed: 0,
            affect_window: 10,
            n_init: 10,
            max_subclusters: 9,
            min_subclusters: 3,
        }
    }
}

impl DictionaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_size < 1 || self.affect_window < 1 || self.n_init < 1 {
            return Err(Error::InvalidConfig(
                "min_size, affect_window and n_init must be >= 1".into(),
            ));
        }
        if self.min_subclusters < 1 || self.min_subclusters > self.max_subclusters {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_subclusters ({}) <= max_subclusters ({})",
                self.min_subclusters, self.max_subclusters
            )));
        }
        Ok(())
    }

    pub fn echo(&self) -> String {
        format!(
            "min_size={} seed={} affect_window={} n_init={} max_subclusters={} min_subclusters={}",
            self.min_size,
            self.seed,
            self.affect_window,
            self.n_init,
            self.max_subclusters,
            self.min_subclusters
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
                "min_size" => cfg.min_size = v.parse().map_err(bad)?,
                "seed" => cfg.seed = v.parse().map_err(bad)?,
                "affect_window" => cfg.affect_window = v.parse().map_err(bad)?,
                "n_init" => cfg.n_init = v.parse().map_err(bad)?,
                "max_subclusters" => cfg.max_subclusters = v.parse().map_err(bad)?,
                "min_subclusters" => cfg.min_subclusters = v.parse().map_err(bad)?,
                _ => return Err(format!("unknown config key `{k}`")),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffectCluster {
    pub class: AffectClass,
    pub subclusters: Vec<SubCluster>,
    /// Mean of all members (raw units).
    pub centroid: Vec<f64>,
}

impl AffectCluster {
    fn new(class: AffectClass, subclusters: Vec<SubCluster>, d: usize) -> Self {
        let n: usize = subclusters.iter().map(|s| s.size()).sum();
        let mut centroid = vec![0.0; d];
        for m in subclusters.iter().flat_map(|s| &s.members) {
            for (c, x) in centroid.iter_mut().zip(m) {
                *c += x;
            }
        }
        if n > 0 {
            centroid.iter_mut().for_each(|c| *c /= n as f64);
        }
        Self {
            class,
            subclusters,
            centroid,
        }
    }

    pub fn size(&self) -> usize {
        self.subclusters.iter().map(|s| s.size()).sum()
    }
}

/// Standardized copy of one class's members, kept for fast sampling.
#[derive(Debug, Clone, PartialEq)]
struct ClassIndex {
    /// (subcluster, member) for each entry of `points`.
    origin: Vec<(usize, usize)>,
    points: Vec<Vec<f64>>,
    centroid: Vec<f64>,
    sub_centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffectShapeDictionary {
    clusters: Vec<AffectCluster>,
    standardizer: Standardizer,
    config: DictionaryConfig,
    index: Vec<ClassIndex>,
}

/// One draw from [`AffectShapeDictionary::sample_z`], with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSample {
    pub z: Vec<f64>,
    pub class: AffectClass,
    pub subcluster: usize,
    pub member: usize,
}

/// Maps k-means clusters to affect classes by greedy bijection on member
/// label counts: (cluster, class) pairs are taken by descending count, ties
/// by lowest class then lowest cluster, each cluster and class used once.
/// Clusters beyond the eighth stay unmapped (`None`).
pub fn assign_affect_labels(
    assignments: &[usize],
    labels: &[AffectClass],
    k: usize,
) -> Result<Vec<Option<AffectClass>>> {
    if assignments.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "cluster labels",
            expected: assignments.len(),
            got: labels.len(),
        });
    }
    let mut counts = vec![[0usize; NUM_AFFECT]; k];
    for (&a, l) in assignments.iter().zip(labels) {
        if a >= k {
            return Err(Error::InvalidConfig(format!("cluster index {a} out of range for k = {k}")));
        }
        counts[a][l.index()] += 1;
    }
    let mut entries: Vec<(usize, usize, usize)> = (0..k)
        .flat_map(|cl| (0..NUM_AFFECT).map(move |c| (cl, c)))
        .map(|(cl, c)| (counts[cl][c], c, cl))
        .collect();
    entries.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut mapping = vec![None; k];
    let mut used = [false; NUM_AFFECT];
    for (_, c, cl) in entries {
        if mapping[cl].is_none() && !used[c] {
            mapping[cl] = Some(AffectClass::ALL[c]);
            used[c] = true;
        }
    }
    Ok(mapping)
}

/// Corpus frames as (shape, windowed affect class), in a canonical order that
/// does not depend on how the corpus happens to be arranged.
fn canonical_frames(corpus: &Corpus, window: usize) -> Vec<(Vec<f64>, AffectClass)> {
    let mut frames: Vec<(Vec<f64>, AffectClass)> = corpus
        .sequences
        .iter()
        .flat_map(|s| s.flat_shapes().into_iter().zip(s.windowed_classes(window)))
        .collect();
    frames.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.index().cmp(&b.1.index()))
    });
    frames
}

impl AffectShapeDictionary {
    /// Builds the dictionary from every frame of `corpus`.
    pub fn build(corpus: &Corpus, cfg: &DictionaryConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.frame_count() == 0 {
            return Err(Error::Empty("corpus"));
        }
        let frames = canonical_frames(corpus, cfg.affect_window);
        let mut class_counts = [0usize; NUM_AFFECT];
        for (_, c) in &frames {
            class_counts[c.index()] += 1;
        }
        let deficient: Vec<String> = AffectClass::ALL
            .iter()
            .filter(|c| class_counts[c.index()] < cfg.min_size)
            .map(|c| format!("{c} ({})", class_counts[c.index()]))
            .collect();
        if !deficient.is_empty() {
            return Err(Error::DeficientClasses {
                min_size: cfg.min_size,
                classes: deficient.join(", "),
            });
        }

        let raw: Vec<Vec<f64>> = frames.iter().map(|f| f.0.clone()).collect();
        let labels: Vec<AffectClass> = frames.iter().map(|f| f.1).collect();
        let standardizer = Standardizer::fit(&raw)?;
        let z: Vec<Vec<f64>> = raw.iter().map(|p| standardizer.transform(p)).collect();
        let km = kmeans_best_of(&z, NUM_AFFECT, cfg.seed, cfg.n_init)?;
        let mapping = assign_affect_labels(&km.assignments, &labels, NUM_AFFECT)?;

        let d = corpus.dim();
        let mut clusters = Vec::with_capacity(NUM_AFFECT);
        for class in AffectClass::ALL {
            let cl = mapping
                .iter()
                .position(|m| *m == Some(class))
                .expect("bijective mapping for k = 8");
            let idx: Vec<usize> = (0..raw.len()).filter(|&i| km.assignments[i] == cl).collect();
            let std_members: Vec<Vec<f64>> = idx.iter().map(|&i| z[i].clone()).collect();
            let part = ward::ward_partition(&std_members, cfg.min_size, cfg.max_subclusters)?;
            let subclusters = part
                .groups
                .iter()
                .map(|g| {
                    SubCluster::from_members(g.iter().map(|&j| raw[idx[j]].clone()).collect(), part.undersized)
                })
                .collect::<Result<Vec<_>>>()?;
            clusters.push(AffectCluster::new(class, subclusters, d));
        }
        Ok(Self::assemble(clusters, standardizer, cfg.clone()))
    }

    fn assemble(clusters: Vec<AffectCluster>, standardizer: Standardizer, config: DictionaryConfig) -> Self {
        let index = clusters
            .iter()
            .map(|c| {
                let mut origin = Vec::new();
                let mut points = Vec::new();
                for (s, sub) in c.subclusters.iter().enumerate() {
                    for (m, p) in sub.members.iter().enumerate() {
                        origin.push((s, m));
                        points.push(standardizer.transform(p));
                    }
                }
                ClassIndex {
                    origin,
                    points,
                    centroid: standardizer.transform(&c.centroid),
                    sub_centroids: c
                        .subclusters
                        .iter()
                        .map(|s| standardizer.transform(&s.centroid))
                        .collect(),
                }
            })
            .collect();
        Self {
            clusters,
            standardizer,
            config,
            index,
        }
    }

    pub fn clusters(&self) -> &[AffectCluster] {
        &self.clusters
    }

    pub fn cluster(&self, class: AffectClass) -> &AffectCluster {
        &self.clusters[class.index()]
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn config(&self) -> &DictionaryConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn member_count(&self) -> usize {
        self.clusters.iter().map(|c| c.size()).sum()
    }

    /// Class whose centroid is nearest `z` in standardized space.
    pub fn classify(&self, z: &[f64]) -> AffectClass {
        let zs = self.standardizer.transform(z);
        let centroids: Vec<Vec<f64>> = self.index.iter().map(|c| c.centroid.clone()).collect();
        AffectClass::ALL[nearest(&zs, &centroids).0]
    }

    /// Subcluster indices of `class` ordered by increasing standardized
    /// distance of their centroid from the neutral class centroid.
    pub fn intensity_order(&self, class: AffectClass) -> Vec<usize> {
        let neutral = &self.index[AffectClass::Neutral.index()].centroid;
        let subs = &self.index[class.index()].sub_centroids;
        let mut order: Vec<usize> = (0..subs.len()).collect();
        order.sort_by(|&a, &b| sq_dist(&subs[a], neutral).total_cmp(&sq_dist(&subs[b], neutral)));
        order
    }

    /// Draws a z for the class `affect` routes to. Without `prev_z`, a uniform
    /// member of the subcluster nearest the class centroid; otherwise one of
    /// the `top_k` class members nearest `prev_z` (standardized distance,
    /// ties by storage order), uniformly.
    pub fn sample_z<R: Rng + ?Sized>(
        &self,
        affect: &AffectVector,
        prev_z: Option<&[f64]>,
        rng: &mut R,
        top_k: usize,
    ) -> Result<ZSample> {
        let class = affect_argmax(affect);
        let idx = &self.index[class.index()];
        let cluster = &self.clusters[class.index()];
        let (subcluster, member) = match prev_z {
            None => {
                let (s, _) = nearest(&idx.centroid, &idx.sub_centroids);
                (s, rng.gen_range(0..cluster.subclusters[s].size()))
            }
            Some(prev) => {
                if prev.len() != self.dim() {
                    return Err(Error::DimensionMismatch {
                        what: "previous z",
                        expected: self.dim(),
                        got: prev.len(),
                    });
                }
                let ps = self.standardizer.transform(prev);
                let nn = top_k_nearest(&idx.points, &ps, top_k.max(1));
                idx.origin[nn[rng.gen_range(0..nn.len())]]
            }
        };
        Ok(ZSample {
            z: cluster.subclusters[subcluster].members[member].clone(),
            class,
            subcluster,
            member,
        })
    }

    /// Generates one z per affect vector, each conditioned on the previous.
    pub fn sample_sequence<R: Rng + ?Sized>(
        &self,
        affects: &[AffectVector],
        rng: &mut R,
        top_k: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(affects.len());
        for a in affects {
            let s = self.sample_z(a, out.last().map(|v| v.as_slice()), rng, top_k)?;
            out.push(s.z);
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = String::from("DICT v1\n");
        out.push_str(&format!("d {d}\n"));
        out.push_str(&format!("config {}\n", self.config.echo()));
        self.standardizer.write_text(&mut out);
        for c in &self.clusters {
            out.push_str(&format!("class {}\n", c.class.index()));
            out.push_str(&format!("subclusters {}\n", c.subclusters.len()));
            for s in &c.subclusters {
                out.push_str(&format!("size {}\n", s.size()));
                out.push_str(&format!("undersized {}\n", u8::from(s.undersized)));
                for m in &s.members {
                    push_row(&mut out, m);
                }
            }
        }
        out
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rec = Records::new(name, text);
        rec.expect_header("DICT v1")?;
        let d: usize = rec.keyed_value("d")?;
        let (line, echo) = rec.keyed("config")?;
        let config = DictionaryConfig::parse_echo(echo).map_err(|e| rec.error(line, e))?;
        let standardizer = Standardizer::read_text(&mut rec, d)?;
        let mut clusters = Vec::with_capacity(NUM_AFFECT);
        for class in AffectClass::ALL {
            let (line, id) = rec.keyed("class")?;
            if id != class.index().to_string() {
                return Err(rec.error(line, format!("expected class {}, found `{id}`", class.index())));
            }
            let n_sub: usize = rec.keyed_value("subclusters")?;
            let mut subs = Vec::with_capacity(n_sub);
            for _ in 0..n_sub {
                let (line, rest) = rec.keyed("size")?;
                let size: usize = rest
                    .parse()
                    .map_err(|_| rec.error(line, "invalid subcluster size"))?;
                let undersized: u8 = rec.keyed_value("undersized")?;
                let members = (0..size).map(|_| rec.floats(d)).collect::<Result<Vec<_>>>()?;
                subs.push(SubCluster::from_members(members, undersized == 1).map_err(|e| rec.error(line, e.to_string()))?);
            }
            clusters.push(AffectCluster::new(class, subs, d));
        }
        if let Some((line, _)) = rec.try_next() {
            return Err(rec.error(line, "trailing data after last class"));
        }
        Ok(Self::assemble(clusters, standardizer, config))
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

/// Indices of the `k` points nearest `q`; ties go to the lower index.
fn top_k_nearest(points: &[Vec<f64>], q: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (sq_dist(p, q), i)).collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, i)| i).collect()
}

/// Convenience wrapper for [`AffectShapeDictionary::build`].
pub fn build_dictionary(corpus: &Corpus, cfg: &DictionaryConfig) -> Result<AffectShapeDictionary> {
    AffectShapeDictionary::build(corpus, cfg)
}
