//! Point distribution model over the 68-point face.
//!
//! A landmark is placed in the image as `s * R2 * (mean_i + basis_i * q) + t`,
//! where `R2` is the top two rows of the head rotation (weak perspective),
//! `basis_i` the 3 x m block of principal directions belonging to landmark
//! `i`, and `q` the non-rigid coefficients.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::textio::{push_row, Records};

pub const NUM_LANDMARKS: usize = 68;
/// Length of the flattened landmark vector (x0, y0, z0, x1, ...).
pub const SHAPE_VEC_LEN: usize = 3 * NUM_LANDMARKS;
/// Number of rigid parameters at the front of a flattened [`ShapeParams`].
pub const RIGID_DIM: usize = 6;

const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks2D {
    points: Vec<[f64; 2]>,
}

impl Landmarks2D {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::DimensionMismatch {
                what: "2d landmarks",
                expected: NUM_LANDMARKS,
                got: points.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("2d landmarks"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
        [sx / n, sy / n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks3D {
    points: Vec<[f64; 3]>,
}

impl Landmarks3D {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::DimensionMismatch {
                what: "3d landmarks",
                expected: NUM_LANDMARKS,
                got: points.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("3d landmarks"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(SHAPE_VEC_LEN, self.points.iter().flatten().copied())
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() != SHAPE_VEC_LEN {
            return Err(Error::DimensionMismatch {
                what: "shape vector",
                expected: SHAPE_VEC_LEN,
                got: v.len(),
            });
        }
        Self::new(
            v.as_slice()
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
        )
    }

    /// The (x, y) components, i.e. the orthographic view of the shape.
    pub fn xy(&self) -> Landmarks2D {
        Landmarks2D {
            points: self.points.iter().map(|p| [p[0], p[1]]).collect(),
        }
    }
}

/// Head pose: scale, intrinsic Euler angles (pitch, yaw, roll) and image translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidParams {
    pub scale: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            pitch: 0.0,
            yaw: 0.0,
            roll: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.pitch, self.yaw, self.roll)
    }
}

/// Rigid pose plus non-rigid coefficients. Flattened order is
/// `(s, pitch, yaw, roll, tx, ty, q_1 .. q_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub rigid: RigidParams,
    pub nonrigid: Vec<f64>,
}

impl ShapeParams {
    pub fn dim(&self) -> usize {
        RIGID_DIM + self.nonrigid.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let r = &self.rigid;
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&[r.scale, r.pitch, r.yaw, r.roll, r.tx, r.ty]);
        out.extend_from_slice(&self.nonrigid);
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() <= RIGID_DIM {
            return Err(Error::DimensionMismatch {
                what: "flattened shape parameters",
                expected: RIGID_DIM + 1,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("shape parameters"));
        }
        Ok(Self {
            rigid: RigidParams {
                scale: v[0],
                pitch: v[1],
                yaw: v[2],
                roll: v[3],
                tx: v[4],
                ty: v[5],
            },
            nonrigid: v[RIGID_DIM..].to_vec(),
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// `Rx(pitch) * Ry(yaw) * Rz(roll)`.
pub fn rotation_matrix(pitch: f64, yaw: f64, roll: f64) -> Matrix3<f64> {
    rot_x(pitch) * rot_y(yaw) * rot_z(roll)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdmModel {
    mean: Landmarks3D,
    /// 204 x m, column j is the j-th principal direction.
    basis: DMatrix<f64>,
    variances: Vec<f64>,
}

impl PdmModel {
    pub fn new(mean: Landmarks3D, basis: DMatrix<f64>, variances: Vec<f64>) -> Result<Self> {
        let m = basis.ncols();
        if m == 0 {
            return Err(Error::InvalidConfig("PDM rank must be at least 1".into()));
        }
        if basis.nrows() != SHAPE_VEC_LEN {
            return Err(Error::DimensionMismatch {
                what: "PDM basis rows",
                expected: SHAPE_VEC_LEN,
                got: basis.nrows(),
            });
        }
        if variances.len() != m {
            return Err(Error::DimensionMismatch {
                what: "PDM variances",
                expected: m,
                got: variances.len(),
            });
        }
        if basis.iter().any(|v| !v.is_finite()) || variances.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PDM"));
        }
        if variances.iter().any(|&v| v <= 0.0) || variances.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Degenerate(
                "PDM variances must be positive and sorted descending".into(),
            ));
        }
        let gram = basis.transpose() * &basis;
        let off = (&gram - DMatrix::<f64>::identity(m, m)).amax();
        if off > ORTHONORMAL_TOL {
            return Err(Error::Degenerate(format!(
                "PDM basis is not orthonormal (max deviation {off:e})"
            )));
        }
        Ok(Self {
            mean,
            basis,
            variances,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Flattened parameter dimension `6 + m`.
    pub fn param_dim(&self) -> usize {
        RIGID_DIM + self.rank()
    }

    pub fn mean_shape(&self) -> &Landmarks3D {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Scale 1, no rotation, no translation, zero deformation.
    pub fn neutral_params(&self) -> ShapeParams {
        ShapeParams {
            rigid: RigidParams::identity(),
            nonrigid: vec![0.0; self.rank()],
        }
    }

    /// Non-rigidly deformed 3D shape `mean + basis * q` (before pose).
    pub fn deform(&self, q: &[f64]) -> Result<Vec<Vector3<f64>>> {
        self.check_q(q)?;
        let qv = DVector::from_column_slice(q);
        let offset = &self.basis * qv;
        Ok(self
            .mean
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Vector3::new(
                    p[0] + offset[3 * i],
                    p[1] + offset[3 * i + 1],
                    p[2] + offset[3 * i + 2],
                )
            })
            .collect())
    }

    pub fn project(&self, params: &ShapeParams) -> Result<Landmarks2D> {
        let shape = self.deform(&params.nonrigid)?;
        let r = &params.rigid;
        let rot = r.rotation();
        let points = shape
            .iter()
            .map(|y| {
                let v = rot * y;
                [r.scale * v.x + r.tx, r.scale * v.y + r.ty]
            })
            .collect();
        Landmarks2D::new(points)
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                what: "non-rigid parameters",
                expected: self.rank(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Residuals and Jacobian of the fitting problem at `flat`.
    ///
    /// The objective is `RSS * (1 + lambda * P(q))` with `P(q) = sum_j q_j^2 / var_j`,
    /// written as the least-squares problem `|sqrt(w) r|^2`, `w = 1 + lambda P`.
    /// Returns the weighted residuals, their Jacobian and the raw RSS.
    fn residuals_and_jacobian(
        &self,
        flat: &[f64],
        observed: &Landmarks2D,
        lambda: f64,
    ) -> (DVector<f64>, DMatrix<f64>, f64) {
        let m = self.rank();
        let d = RIGID_DIM + m;
        let rows = 2 * NUM_LANDMARKS;
        let (s, pitch, yaw, roll) = (flat[0], flat[1], flat[2], flat[3]);
        let q = &flat[RIGID_DIM..];
        let shape = self.deform(q).expect("dimension checked by caller");

        let (rx, ry, rz) = (rot_x(pitch), rot_y(yaw), rot_z(roll));
        let rot = rx * ry * rz;
        let d_pitch = d_rot_x(pitch) * ry * rz;
        let d_yaw = rx * d_rot_y(yaw) * rz;
        let d_roll = rx * ry * d_rot_z(roll);

        let mut res = DVector::zeros(rows);
        let mut jac = DMatrix::zeros(rows, d);
        let s_rot_top = rot.fixed_rows::<2>(0) * s;
        for (i, y) in shape.iter().enumerate() {
            let ry_v = rot * y;
            let (dp, dy, dr) = (d_pitch * y, d_yaw * y, d_roll * y);
            let obs = observed.points()[i];
            for k in 0..2 {
                let row = 2 * i + k;
                res[row] = s * ry_v[k] + flat[4 + k] - obs[k];
                jac[(row, 0)] = ry_v[k];
                jac[(row, 1)] = s * dp[k];
                jac[(row, 2)] = s * dy[k];
                jac[(row, 3)] = s * dr[k];
                jac[(row, 4 + k)] = 1.0;
            }
            let proj = &s_rot_top * self.basis.rows(3 * i, 3);
            for j in 0..m {
                jac[(2 * i, RIGID_DIM + j)] = proj[(0, j)];
                jac[(2 * i + 1, RIGID_DIM + j)] = proj[(1, j)];
            }
        }
        let rss = res.norm_squared();
        let prior: f64 = q.iter().zip(&self.variances).map(|(x, v)| x * x / v).sum();
        let sw = (1.0 + lambda * prior).sqrt();
        // d sqrt(w) / d q_j = lambda q_j / (var_j sqrt(w))
        let dsw: Vec<f64> = q
            .iter()
            .zip(&self.variances)
            .map(|(x, v)| lambda * x / (v * sw))
            .collect();
        for row in 0..rows {
            for col in 0..d {
                jac[(row, col)] *= sw;
            }
            for (j, g) in dsw.iter().enumerate() {
                jac[(row, RIGID_DIM + j)] += res[row] * g;
            }
            res[row] *= sw;
        }
        (res, jac, rss)
    }

    /// Fits shape parameters to observed landmarks by damped Gauss-Newton
    /// (Levenberg-Marquardt) on
    /// `RSS(p) * (1 + lambda * sum_j q_j^2 / var_j)`, where
    /// `RSS = sum_i |project_i(p) - obs_i|^2`.
    ///
    /// The shape prior is weighted by the current misfit, so it keeps `q`
    /// small on noisy landmarks but leaves exact observations exactly
    /// recoverable.
    pub fn fit(
        &self,
        observed: &Landmarks2D,
        init: Option<&ShapeParams>,
        opts: &FitOptions,
    ) -> Result<FitResult> {
        let init = init.cloned().unwrap_or_else(|| self.neutral_params());
        self.check_q(&init.nonrigid)?;
        let mut flat = init.flatten();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fit initialisation"));
        }
        if flat[0] <= 0.0 {
            return Err(Error::InvalidConfig("initial scale must be positive".into()));
        }
        if !(opts.lambda >= 0.0) {
            return Err(Error::InvalidConfig("fit lambda must be non-negative".into()));
        }
        let d = flat.len();

        let (mut res, mut jac, mut rss) = self.residuals_and_jacobian(&flat, observed, opts.lambda);
        let mut objective = res.norm_squared();
        let mut trace = vec![objective];
        let mut mu = 1e-3;
        let mut converged = false;
        let mut iterations = 0;

        'outer: while iterations < opts.max_iterations {
            iterations += 1;
            let jt = jac.transpose();
            let normal = &jt * &jac;
            let grad = &jt * &res;
            loop {
                let mut damped = normal.clone();
                for k in 0..d {
                    damped[(k, k)] += mu * normal[(k, k)].max(1e-12);
                }
                let step = match damped.cholesky() {
                    Some(ch) => -ch.solve(&grad),
                    None => {
                        mu *= 4.0;
                        if mu > 1e16 {
                            break 'outer;
                        }
                        continue;
                    }
                };
                let step_norm = step.norm();
                if step_norm < opts.step_tolerance {
                    converged = true;
                    break 'outer;
                }
                let candidate: Vec<f64> = flat.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                if candidate[0] > 0.0 && candidate.iter().all(|v| v.is_finite()) {
                    let (c_res, c_jac, c_rss) =
                        self.residuals_and_jacobian(&candidate, observed, opts.lambda);
                    let c_obj = c_res.norm_squared();
                    if c_obj <= objective {
                        flat = candidate;
                        res = c_res;
                        jac = c_jac;
                        rss = c_rss;
                        objective = c_obj;
                        trace.push(objective);
                        mu = (mu / 3.0).max(1e-15);
                        break;
                    }
                }
                mu *= 4.0;
                if mu > 1e16 {
                    break 'outer;
                }
            }
        }

        for a in &mut flat[1..4] {
            *a = wrap_angle(*a);
        }
        Ok(FitResult {
            params: ShapeParams::from_flat(&flat)?,
            residual: rss,
            objective,
            iterations,
            converged,
            objective_trace: trace,
        })
    }

    /// Mean squared reconstruction error (per shape, summed over coordinates)
    /// of the given shapes after aligning them to the model mean and
    /// projecting onto the basis.
    pub fn reconstruction_error(&self, shapes: &[Landmarks3D]) -> f64 {
        let mean = self.mean.to_vector();
        let size = mean.norm();
        let total: f64 = shapes
            .iter()
            .map(|s| {
                let x = align_to(&normalize(&s.to_vector(), size), &mean);
                let dev = x - &mean;
                let coeffs = self.basis.transpose() * &dev;
                (&dev - &self.basis * coeffs).norm_squared()
            })
            .sum();
        total / shapes.len().max(1) as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&path.display().to_string(), &text)
    }

    pub fn to_text(&self) -> String {
        let m = self.rank();
        let mut out = String::from("PDM v1\n");
        out.push_str(&format!("{m}\n"));
        for p in self.mean.points() {
            push_row(&mut out, p);
        }
        let mut row = vec![0.0; m];
        for r in 0..SHAPE_VEC_LEN {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.basis[(r, j)];
            }
            push_row(&mut out, &row);
        }
        push_row(&mut out, &self.variances);
        out
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rec = Records::new(name, text);
        rec.expect_header("PDM v1")?;
        let m: usize = rec.value()?;
        if m == 0 || m > SHAPE_VEC_LEN {
            return Err(rec.error(2, format!("invalid rank {m}")));
        }
        let mut mean = Vec::with_capacity(NUM_LANDMARKS);
        for _ in 0..NUM_LANDMARKS {
            let v = rec.floats(3)?;
            mean.push([v[0], v[1], v[2]]);
        }
        let mut basis = DMatrix::zeros(SHAPE_VEC_LEN, m);
        for r in 0..SHAPE_VEC_LEN {
            let v = rec.floats(m)?;
            for (j, x) in v.into_iter().enumerate() {
                basis[(r, j)] = x;
            }
        }
        let variances = rec.floats(m)?;
        Self::new(Landmarks3D::new(mean)?, basis, variances)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Weight of the shape prior `sum_j q_j^2 / var_j`, relative to the landmark misfit.
    pub lambda: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            max_iterations: 100,
            step_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ShapeParams,
    /// Landmark sum of squared errors at the returned parameters.
    pub residual: f64,
    /// Full objective including the prior term.
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit or damping could not make progress;
    /// `params` is then the best point found.
    pub converged: bool,
    /// Objective value after each accepted step (first entry is the initial value).
    pub objective_trace: Vec<f64>,
}

fn centered(v: &DVector<f64>) -> DVector<f64> {
    let mut c = [0.0; 3];
    for p in v.as_slice().chunks_exact(3) {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = NUM_LANDMARKS as f64;
    let mut out = v.clone();
    for p in out.as_mut_slice().chunks_exact_mut(3) {
        for k in 0..3 {
            p[k] -= c[k] / n;
        }
    }
    out
}

/// Centers a flattened shape and rescales it to centroid size `size`.
fn normalize(v: &DVector<f64>, size: f64) -> DVector<f64> {
    let c = centered(v);
    let norm = c.norm();
    if norm > 0.0 {
        c * (size / norm)
    } else {
        c
    }
}

/// Optimal proper rotation of centered shape `shape` onto centered `target`.
fn align_to(shape: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    let mut h = Matrix3::zeros();
    for (a, b) in shape
        .as_slice()
        .chunks_exact(3)
        .zip(target.as_slice().chunks_exact(3))
    {
        h += Vector3::new(a[0], a[1], a[2]) * Vector3::new(b[0], b[1], b[2]).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let rot = v * fix * u.transpose();
    let mut out = shape.clone();
    for p in out.as_mut_slice().chunks_exact_mut(3) {
        let r = rot * Vector3::new(p[0], p[1], p[2]);
        p.copy_from_slice(r.as_slice());
    }
    out
}

/// Generalised Procrustes alignment with centroid-size normalisation.
///
/// Every shape is centered and scaled to the average input centroid size,
/// then rotated onto the running mean until the mean moves less than
/// `1e-8` (relative to its size). Returns the mean and the aligned shapes.
pub(crate) fn generalized_procrustes(
    shapes: &[Landmarks3D],
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let vecs: Vec<DVector<f64>> = shapes.iter().map(|s| centered(&s.to_vector())).collect();
    let size = vecs.iter().map(|v| v.norm()).sum::<f64>() / vecs.len() as f64;
    if !(size > 0.0) {
        return Err(Error::Degenerate("all shapes collapse to a point".into()));
    }
    let normalized: Vec<DVector<f64>> = vecs.iter().map(|v| normalize(v, size)).collect();
    let mut mean = normalized[0].clone();
    let mut aligned = normalized.clone();
    for _ in 0..200 {
        for (dst, src) in aligned.iter_mut().zip(&normalized) {
            *dst = align_to(src, &mean);
        }
        let mut next = aligned
            .iter()
            .fold(DVector::zeros(SHAPE_VEC_LEN), |acc, v| acc + v)
            / aligned.len() as f64;
        next = normalize(&next, size);
        let delta = (&next - &mean).norm();
        mean = next;
        if delta <= 1e-8 * size.max(1.0) {
            break;
        }
    }
    for (dst, src) in aligned.iter_mut().zip(&normalized) {
        *dst = align_to(src, &mean);
    }
    Ok((mean, aligned))
}

/// Builds a PDM of rank `m` from 3D training shapes: generalised Procrustes
/// alignment followed by PCA with population (divide-by-N) variances.
pub fn build_pdm(shapes: &[Landmarks3D], m: usize) -> Result<PdmModel> {
    if m == 0 || m >= SHAPE_VEC_LEN {
        return Err(Error::InvalidConfig(format!(
            "PDM rank must be in 1..{SHAPE_VEC_LEN}, got {m}"
        )));
    }
    if shapes.len() < m + 1 {
        return Err(Error::TooFewShapes {
            needed: m + 1,
            got: shapes.len(),
        });
    }
    let (mean, aligned) = generalized_procrustes(shapes)?;
    let n = aligned.len() as f64;
    let mut cov = DMatrix::<f64>::zeros(SHAPE_VEC_LEN, SHAPE_VEC_LEN);
    for v in &aligned {
        let dev = v - &mean;
        cov.ger(1.0 / n, &dev, &dev, 1.0);
    }
    let total = cov.trace();
    let scale = mean.norm_squared().max(1.0);
    if !(total > 1e-20 * scale) {
        return Err(Error::Degenerate("zero total shape variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..SHAPE_VEC_LEN).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = DMatrix::zeros(SHAPE_VEC_LEN, m);
    let mut variances = Vec::with_capacity(m);
    for (j, &idx) in order.iter().take(m).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > 1e-12 * total) {
            return Err(Error::Degenerate(format!(
                "shape data has rank {j}, fewer than the requested {m} components"
            )));
        }
        let mut col = eig.eigenvectors.column(idx).into_owned();
        // Sign convention: largest-magnitude entry positive.
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
        variances.push(lambda);
    }
    PdmModel::new(Landmarks3D::from_vector(&mean)?, basis, variances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{synthetic_pdm, synthetic_training_shapes};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn test_pdm() -> PdmModel {
        synthetic_pdm(11, 10).unwrap()
    }

    /// Mean with diagonal second moments (mirror symmetric in x and y) and a
    /// deformation `v_i = D m_i` orthogonal to it; Procrustes leaves `mean +- v`
    /// untouched so the PCA answer can be written down by hand.
    fn symmetric_mean_and_direction() -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mean = Vec::new();
        for _ in 0..17 {
            let (x, y, z): (f64, f64, f64) = (
                rng.gen_range(1.0..50.0),
                rng.gen_range(1.0..50.0),
                rng.gen_range(-10.0..10.0),
            );
            for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                mean.push([sx * x, sy * y, z]);
            }
        }
        // centre z
        let cz = mean.iter().map(|p| p[2]).sum::<f64>() / 68.0;
        for p in &mut mean {
            p[2] -= cz;
        }
        let sxx: f64 = mean.iter().map(|p| p[0] * p[0]).sum();
        let syy: f64 = mean.iter().map(|p| p[1] * p[1]).sum();
        // D = diag(1/sxx, -1/syy, 0) gives tr(D M M^T) = 0.
        let dir: Vec<[f64; 3]> = mean.iter().map(|p| [p[0] / sxx, -p[1] / syy, 0.0]).collect();
        let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let dir = dir
            .into_iter()
            .map(|p| [p[0] / norm, p[1] / norm, p[2] / norm])
            .collect();
        (mean, dir)
    }

    #[test]
    fn single_direction_recovered_with_population_variance() {
        let (mean, dir) = symmetric_mean_and_direction();
        let delta = 0.5;
        let make = |sign: f64| {
            Landmarks3D::new(
                mean.iter()
                    .zip(&dir)
                    .map(|(m, v)| {
                        [
                            m[0] + sign * delta * v[0],
                            m[1] + sign * delta * v[1],
                            m[2] + sign * delta * v[2],
                        ]
                    })
                    .collect(),
            )
            .unwrap()
        };
        let pdm = build_pdm(&[make(1.0), make(-1.0)], 1).unwrap();
        let v = DVector::from_iterator(SHAPE_VEC_LEN, dir.iter().flatten().copied());
        let cos = pdm.basis().column(0).dot(&v).abs();
        assert!((cos - 1.0).abs() < 1e-9, "cos = {cos}");
        assert!((pdm.variances()[0] - delta * delta).abs() < 1e-9, "{:?}", pdm.variances());
    }

    #[test]
    fn identical_shapes_are_degenerate() {
        let shape = test_pdm().mean_shape().clone();
        let err = build_pdm(&vec![shape; 5], 2).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn too_few_shapes_rejected() {
        let shapes = synthetic_training_shapes(1, 3);
        assert!(matches!(
            build_pdm(&shapes, 3),
            Err(Error::TooFewShapes { needed: 4, got: 3 })
        ));
        assert!(matches!(build_pdm(&shapes, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn reconstruction_error_non_increasing_in_rank() {
        let shapes = synthetic_training_shapes(5, 50);
        let errs: Vec<f64> = [1, 3, 5, 10, 20]
            .iter()
            .map(|&m| build_pdm(&shapes, m).unwrap().reconstruction_error(&shapes))
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{errs:?}");
        }
        assert!(errs[3] < errs[1]);
    }

    #[test]
    fn built_basis_is_orthonormal_and_sorted() {
        let pdm = test_pdm();
        let g = pdm.basis().transpose() * pdm.basis();
        assert!((g - DMatrix::<f64>::identity(10, 10)).amax() < 1e-10);
        assert!(pdm.variances().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identity_projection_is_mean_xy() {
        let pdm = test_pdm();
        let out = pdm.project(&pdm.neutral_params()).unwrap();
        assert_eq!(out, pdm.mean_shape().xy());
        assert_eq!(
            pdm.neutral_params().flatten(),
            [vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0; 10]].concat()
        );
    }

    #[test]
    fn translation_shifts_every_point() {
        let pdm = test_pdm();
        let mut p = pdm.neutral_params();
        p.rigid.tx = 10.0;
        p.rigid.ty = -3.0;
        let base = pdm.mean_shape().xy();
        let out = pdm.project(&p).unwrap();
        for (a, b) in out.points().iter().zip(base.points()) {
            assert!((a[0] - b[0] - 10.0).abs() < 1e-12);
            assert!((a[1] - b[1] + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_two_doubles_centered_mean() {
        let pdm = test_pdm();
        let mut p = pdm.neutral_params();
        p.rigid.scale = 2.0;
        let out = pdm.project(&p).unwrap();
        for (a, b) in out.points().iter().zip(pdm.mean_shape().points()) {
            assert!((a[0] - 2.0 * b[0]).abs() < 1e-12);
            assert!((a[1] - 2.0 * b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn roll_pi_rotates_in_plane() {
        let pdm = test_pdm();
        let mut p = pdm.neutral_params();
        p.rigid.roll = PI;
        let out = pdm.project(&p).unwrap();
        let (s, c) = PI.sin_cos();
        for (a, b) in out.points().iter().zip(pdm.mean_shape().points()) {
            let expect = [c * b[0] - s * b[1], s * b[0] + c * b[1]];
            assert!((a[0] - expect[0]).abs() < 1e-10);
            assert!((a[1] - expect[1]).abs() < 1e-10);
            assert!((a[0] + b[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_is_linear_in_q() {
        let pdm = test_pdm();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = pdm.neutral_params();
        p.rigid = RigidParams {
            scale: 1.3,
            pitch: 0.2,
            yaw: -0.1,
            roll: 0.3,
            tx: 5.0,
            ty: 7.0,
        };
        let q1: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q2: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let proj = |q: Vec<f64>| {
            let mut pp = p.clone();
            pp.nonrigid = q;
            pdm.project(&pp).unwrap()
        };
        let base = proj(vec![0.0; 10]);
        let a = proj(q1.clone());
        let b = proj(q2.clone());
        let ab = proj(q1.iter().zip(&q2).map(|(x, y)| x + y).collect());
        for i in 0..NUM_LANDMARKS {
            for k in 0..2 {
                let lhs = ab.points()[i][k] - base.points()[i][k];
                let rhs = a.points()[i][k] - base.points()[i][k] + b.points()[i][k] - base.points()[i][k];
                assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let pdm = test_pdm();
        let p = ShapeParams {
            rigid: RigidParams::identity(),
            nonrigid: vec![0.0; 3],
        };
        assert!(matches!(pdm.project(&p), Err(Error::DimensionMismatch { .. })));
    }

    pub(crate) fn random_params(pdm: &PdmModel, rng: &mut impl Rng) -> ShapeParams {
        ShapeParams {
            rigid: RigidParams {
                scale: rng.gen_range(0.8..1.25),
                pitch: rng.gen_range(-0.5..0.5),
                yaw: rng.gen_range(-0.5..0.5),
                roll: rng.gen_range(-0.5..0.5),
                tx: rng.gen_range(64.0..192.0),
                ty: rng.gen_range(64.0..192.0),
            },
            nonrigid: pdm
                .variances()
                .iter()
                .map(|v| rng.gen_range(-2.0..2.0) * v.sqrt())
                .collect(),
        }
    }

    #[test]
    fn fit_recovers_projected_params() {
        let pdm = test_pdm();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let p = random_params(&pdm, &mut rng);
            let obs = pdm.project(&p).unwrap();
            let fit = pdm.fit(&obs, None, &FitOptions::default()).unwrap();
            let err = fit
                .params
                .flatten()
                .iter()
                .zip(p.flatten())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-6, "err {err}");
            assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn fit_of_mean_is_neutral() {
        let pdm = test_pdm();
        let fit = pdm
            .fit(&pdm.mean_shape().xy(), None, &FitOptions::default())
            .unwrap();
        assert!(fit.converged);
        for (a, b) in fit.params.flatten().iter().zip(pdm.neutral_params().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_fit_residual_bounded() {
        let pdm = test_pdm();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = 0.5;
        let noise = Normal::new(0.0, sigma).unwrap();
        let bound = 68.0 * 2.0 * sigma * sigma * 1.5;
        for _ in 0..100 {
            let p = random_params(&pdm, &mut rng);
            let clean = pdm.project(&p).unwrap();
            let noisy = Landmarks2D::new(
                clean
                    .points()
                    .iter()
                    .map(|q| [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng)])
                    .collect(),
            )
            .unwrap();
            let fit = pdm.fit(&noisy, None, &FitOptions::default()).unwrap();
            assert!(fit.residual <= bound, "residual {} > {bound}", fit.residual);
        }
    }

    #[test]
    fn save_load_is_bit_exact() {
        let pdm = test_pdm();
        let back = PdmModel::from_text("mem", &pdm.to_text()).unwrap();
        assert_eq!(back, pdm);
        assert!(back
            .basis()
            .iter()
            .zip(pdm.basis().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn malformed_file_reports_line() {
        let pdm = test_pdm();
        let text = pdm.to_text().replacen("PDM v1\n10\n", "PDM v1\n10\n1 2\n", 1);
        let err = PdmModel::from_text("f.pdm", &text).unwrap_err().to_string();
        assert!(err.starts_with("f.pdm:3:"), "{err}");
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
