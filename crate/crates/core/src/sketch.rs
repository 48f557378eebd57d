//! One-pixel line sketches of 68-point faces.
//!
//! Edges are rasterized with integer Bresenham after clipping each segment
//! to a small margin around the canvas. Internally a set pixel is 1; PGM
//! export inverts to dark lines (0) on white (255).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::face_template::MEAN_FACE_TEMPLATE;
use crate::pdm::{Landmarks2D, PdmModel, ShapeParams, NUM_LANDMARKS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn new(edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &edges {
            if i >= NUM_LANDMARKS || j >= NUM_LANDMARKS || i == j {
                return Err(Error::InvalidConfig(format!("bad topology edge ({i}, {j})")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidConfig(format!("duplicate topology edge ({i}, {j})")));
            }
        }
        Ok(Self { edges })
    }

    /// iBUG-68 connectivity: open jaw, brows, nose bridge and base; closed
    /// eyes and lips.
    pub fn ibug68() -> Self {
        let mut edges = Vec::with_capacity(63);
        let mut open = |a: usize, b: usize| edges.extend((a..b).map(|i| (i, i + 1)));
        open(0, 16);
        open(17, 21);
        open(22, 26);
        open(27, 30);
        open(31, 35);
        for (a, b) in [(36, 41), (42, 47), (48, 59), (60, 67)] {
            edges.extend((a..b).map(|i| (i, i + 1)));
            edges.push((b, a));
        }
        Self { edges }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self::ibug68()
    }
}

/// Binary raster, row-major, 1 = line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterFrame {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig("canvas dimensions must be >= 1".into()));
        }
        Ok(Self {
            width,
            height,
            pixels: vec![0; width * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        self.in_bounds(x, y) && self.pixels[y as usize * self.width + x as usize] == 1
    }

    fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    fn set(&mut self, x: i64, y: i64) {
        if self.in_bounds(x, y) {
            self.pixels[y as usize * self.width + x as usize] = 1;
        }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    /// Binary PGM (P5, maxval 255): line 0, background 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&p| if p == 1 { 0 } else { 255 }));
        out
    }

    /// Hex SHA-256 of the PGM encoding.
    pub fn sha256_hex(&self) -> String {
        Sha256::digest(self.to_pgm())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Draws the segment `a`–`b` (real coordinates).
    pub fn draw_segment(&mut self, a: [f64; 2], b: [f64; 2]) {
        // Clip to a margin box so rounding never overflows, then rasterize.
        let lo = [-2.0, -2.0];
        let hi = [self.width as f64 + 1.0, self.height as f64 + 1.0];
        let Some((a, b)) = clip_segment(a, b, lo, hi) else {
            return;
        };
        let (p, q) = ([a[0].round() as i64, a[1].round() as i64], [b[0].round() as i64, b[1].round() as i64]);
        // Start from the endpoint with the smaller y so that a horizontally
        // mirrored segment produces the mirrored pixel set.
        let (p, q) = if (q[1], q[0]) < (p[1], p[0]) { (q, p) } else { (p, q) };
        bresenham(p, q, |x, y| self.set(x, y));
    }
}

/// Liang–Barsky clipping against the box `[lo, hi]`.
fn clip_segment(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for k in 0..2 {
        for (p, q) in [(-d[k], a[k] - lo[k]), (d[k], hi[k] - a[k])] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| [a[0] + t * d[0], a[1] + t * d[1]];
    Some((if t0 > 0.0 { at(t0) } else { a }, if t1 < 1.0 { at(t1) } else { b }))
}

/// All-octant integer Bresenham; one pixel per major-axis step.
fn bresenham(p: [i64; 2], q: [i64; 2], mut plot: impl FnMut(i64, i64)) {
    let (mut x, mut y) = (p[0], p[1]);
    let dx = (q[0] - x).abs();
    let dy = -(q[1] - y).abs();
    let sx = if x < q[0] { 1 } else { -1 };
    let sy = if y < q[1] { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x, y);
        if x == q[0] && y == q[1] {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Renders every topology edge of `landmarks` onto a `w` × `h` canvas.
pub fn render(landmarks: &Landmarks2D, topo: &Topology, w: usize, h: usize) -> Result<RasterFrame> {
    let mut frame = RasterFrame::new(w, h)?;
    let pts = landmarks.points();
    for &(i, j) in topo.edges() {
        frame.draw_segment(pts[i], pts[j]);
    }
    Ok(frame)
}

/// Projects and renders each frame independently.
pub fn render_sequence(
    params: &[ShapeParams],
    pdm: &PdmModel,
    topo: &Topology,
    w: usize,
    h: usize,
) -> Result<Vec<RasterFrame>> {
    params
        .iter()
        .map(|p| render(&pdm.project(p)?, topo, w, h))
        .collect()
}

/// The built-in reference face (x, y of the template) translated by `t`.
pub fn reference_face(t: [f64; 2]) -> Landmarks2D {
    Landmarks2D::new(MEAN_FACE_TEMPLATE.iter().map(|p| [p[0] + t[0], p[1] + t[1]]).collect())
        .expect("template is a valid 68-point face")
}

/// Writes `frame_%06d.pgm` files into `dir` (created if missing).
pub fn export_pgm(frames: &[RasterFrame], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let path = dir.join(format!("frame_{k:06}.pgm"));
            std::fs::write(&path, f.to_pgm())?;
            Ok(path)
        })
        .collect()
}

/// SVG 1.1 document with one group of edge lines per frame.
pub fn to_svg(frames: &[Landmarks2D], topo: &Topology, w: usize, h: usize) -> String {
    let mut s = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    for (k, lm) in frames.iter().enumerate() {
        let _ = writeln!(s, "<g id=\"frame_{k:06}\" stroke=\"black\" stroke-width=\"1\" fill=\"none\">");
        let p = lm.points();
        for &(i, j) in topo.edges() {
            let _ = writeln!(
                s,
                "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\"/>",
                p[i][0], p[i][1], p[j][0], p[j][1]
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_svg(frames: &[Landmarks2D], topo: &Topology, w: usize, h: usize, path: &Path) -> Result<()> {
    std::fs::write(path, to_svg(frames, topo, w, h))?;
    Ok(())
}

/// Hash of the reference face at the canvas centre, 256 × 256.
pub const REFERENCE_RENDER_SHA256: &str =
    "ad6b493e03cd0b60164e6ad535898461480f0be61a879f657afa0d21355fd81a";

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(a: [f64; 2], b: [f64; 2], w: usize, h: usize) -> RasterFrame {
        let mut f = RasterFrame::new(w, h).unwrap();
        f.draw_segment(a, b);
        f
    }

    /// Every set pixel has at most two set 8-neighbours (endpoints at most one).
    pub(crate) fn one_pixel_wide(f: &RasterFrame) -> bool {
        let mut ends = 0;
        for y in 0..f.height() as i64 {
            for x in 0..f.width() as i64 {
                if !f.get(x, y) {
                    continue;
                }
                let n = (-1..=1)
                    .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
                    .filter(|&(dx, dy)| (dx, dy) != (0, 0) && f.get(x + dx, y + dy))
                    .count();
                if n > 2 {
                    return false;
                }
                if n <= 1 {
                    ends += 1;
                }
            }
        }
        ends <= 2
    }

    #[test]
    fn topology_has_63_unique_edges() {
        let t = Topology::ibug68();
        assert_eq!(t.edges().len(), 63);
        assert!(Topology::new(t.edges().to_vec()).is_ok());
        assert!(Topology::new(vec![(1, 2), (2, 1)]).is_err());
        assert!(Topology::new(vec![(0, 68)]).is_err());
    }

    #[test]
    fn horizontal_edge_ten_pixels() {
        let f = single([0.0, 0.0], [9.0, 0.0], 16, 4);
        assert_eq!(f.count(), 10);
        assert!((0..10).all(|x| f.get(x, 0)));
    }

    #[test]
    fn fully_outside_is_blank() {
        let lm = reference_face([1000.0, -500.0]);
        assert_eq!(render(&lm, &Topology::ibug68(), 64, 64).unwrap().count(), 0);
    }

    #[test]
    fn partially_outside_is_clipped() {
        let f = single([-50.0, 5.0], [50.0, 5.0], 20, 10);
        assert_eq!(f.count(), 20);
    }

    #[test]
    fn reference_hash_is_frozen() {
        let f = render(&reference_face([128.0, 128.0]), &Topology::ibug68(), 256, 256).unwrap();
        assert_eq!(f.sha256_hex(), REFERENCE_RENDER_SHA256);
    }

    #[test]
    fn pgm_layout() {
        let f = single([0.0, 0.0], [1.0, 0.0], 3, 2);
        let pgm = f.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 6..], &[0, 0, 255, 255, 255, 255]);
    }

    #[test]
    fn export_names_frames() {
        let dir = tempfile::tempdir().unwrap();
        let f = single([0.0, 0.0], [3.0, 3.0], 4, 4);
        let paths = export_pgm(&[f.clone(), f], dir.path()).unwrap();
        assert!(paths[1].ends_with("frame_000001.pgm"));
        let svg = to_svg(&[reference_face([32.0, 32.0])], &Topology::ibug68(), 64, 64);
        assert_eq!(svg.matches("<line").count(), 63);
    }

    proptest! {
        #[test]
        fn segment_is_one_pixel_wide(ax in 0.0..63.0f64, ay in 0.0..63.0f64, bx in 0.0..63.0f64, by in 0.0..63.0f64) {
            let f = single([ax, ay], [bx, by], 64, 64);
            let (dx, dy) = ((bx.round() - ax.round()).abs(), (by.round() - ay.round()).abs());
            prop_assert_eq!(f.count(), dx.max(dy) as usize + 1);
            prop_assert!(one_pixel_wide(&f));
        }

        #[test]
        fn mirroring_mirrors_raster(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = 96usize;
            // Integer-valued on-canvas landmarks, so no clipping or rounding.
            let pts: Vec<[f64; 2]> = (0..NUM_LANDMARKS)
                .map(|_| [rng.gen_range(0..w) as f64, rng.gen_range(0..w) as f64])
                .collect();
            let mirrored: Vec<[f64; 2]> = pts.iter().map(|p| [(w - 1) as f64 - p[0], p[1]]).collect();
            let t = Topology::ibug68();
            let a = render(&Landmarks2D::new(pts).unwrap(), &t, w, w).unwrap();
            let b = render(&Landmarks2D::new(mirrored).unwrap(), &t, w, w).unwrap();
            for y in 0..w as i64 {
                for x in 0..w as i64 {
                    prop_assert_eq!(a.get(x, y), b.get(w as i64 - 1 - x, y));
                }
            }
        }
    }
}
