//! Per-dimension standardization of flattened shape parameters.
//!
//! Rigid and non-rigid parameters live on unrelated scales (radians, pixels,
//! PCA units), so clustering, sequence models and error metrics all work on
//! `(x - mean) / std`. Dimensions with no spread keep `std = 1`.

use crate::error::{Error, Result};
use crate::textio::{push_row, Records};

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of `points`.
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("standardization points"))?;
        let d = first.len();
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "standardization point",
                    expected: d,
                    got: p.len(),
                });
            }
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for p in points {
            for ((v, x), m) in var.iter_mut().zip(p).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = (v / n).sqrt();
                if s > 1e-12 * m.abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("standardization points"));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch {
                what: "standardization std",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Degenerate("standardization std must be positive".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    pub(crate) fn write_text(&self, out: &mut String) {
        out.push_str("mean ");
        push_row(out, &self.mean);
        out.push_str("std ");
        push_row(out, &self.std);
    }

    pub(crate) fn read_text(rec: &mut Records<'_>, d: usize) -> Result<Self> {
        let mean = rec.keyed_floats("mean", d)?;
        let std = rec.keyed_floats("std", d)?;
        Self::from_parts(mean, std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_constant_dimension() {
        let pts = vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let s = Standardizer::fit(&pts).unwrap();
        assert_eq!(s.std()[1], 1.0);
        let z = s.transform(&pts[2]);
        assert!((z[0] - 1.224744871391589).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        let back = s.inverse(&z);
        assert!((back[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(Standardizer::fit(&[]).is_err());
    }
}
