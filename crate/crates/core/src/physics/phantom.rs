use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    /// Position, m.
    pub position: [f64; 3],
    /// Concentration weight, arbitrary units.
    pub weight: f64,
}

/// Receive coil sensitivity `b1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Sensitivity {
    Uniform([f64; 3]),
    /// Per-component maps on a mesh, sampled by trilinear interpolation and
    /// clamped at the mesh border.
    Maps { mesh: Mesh, maps: [Array3<f64>; 3] },
}

impl Default for Sensitivity {
    fn default() -> Self {
        Sensitivity::Uniform([0.0, 0.0, 1.0])
    }
}

impl Sensitivity {
    pub fn at(&self, p: &[f64; 3]) -> [f64; 3] {
        match self {
            Sensitivity::Uniform(b) => *b,
            Sensitivity::Maps { mesh, maps } => {
                let mut out = [0.0; 3];
                for (c, o) in out.iter_mut().enumerate() {
                    *o = trilinear(&maps[c], mesh, p);
                }
                out
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Sensitivity::Uniform(b) => {
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("sensitivity".into()));
                }
            }
            Sensitivity::Maps { mesh, maps } => {
                for m in maps {
                    if m.dim() != mesh.dim() {
                        let (a, b, c) = m.dim();
                        let (x, y, z) = mesh.dim();
                        return Err(Error::Shape {
                            expected: vec![x, y, z],
                            got: vec![a, b, c],
                        });
                    }
                    if m.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("sensitivity map".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn trilinear(a: &Array3<f64>, mesh: &Mesh, p: &[f64; 3]) -> f64 {
    let mut idx = [0usize; 3];
    let mut frac = [0.0; 3];
    for ax in 0..3 {
        let n = mesh.shape[ax];
        let f = mesh.fractional_index(ax, p[ax]).clamp(0.0, (n - 1) as f64);
        let i = (f.floor() as usize).min(n.saturating_sub(2));
        idx[ax] = i;
        frac[ax] = if n > 1 { f - i as f64 } else { 0.0 };
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                    * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                    * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                if w == 0.0 {
                    continue;
                }
                let ix = (idx[0] + dx).min(mesh.shape[0] - 1);
                let iy = (idx[1] + dy).min(mesh.shape[1] - 1);
                let iz = (idx[2] + dz).min(mesh.shape[2] - 1);
                acc += w * a[[iz, iy, ix]];
            }
        }
    }
    acc
}

/// SPION density.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Points(Vec<PointSource>),
    Voxels { mesh: Mesh, values: Array3<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub density: Density,
    pub sensitivity: Sensitivity,
}

impl Phantom {
    pub fn points(points: Vec<PointSource>) -> Phantom {
        Phantom {
            density: Density::Points(points),
            sensitivity: Sensitivity::default(),
        }
    }

    pub fn voxels(mesh: Mesh, values: Array3<f64>) -> Phantom {
        Phantom {
            density: Density::Voxels { mesh, values },
            sensitivity: Sensitivity::default(),
        }
    }

    pub fn with_sensitivity(mut self, s: Sensitivity) -> Phantom {
        self.sensitivity = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.density {
            Density::Points(p) => {
                for s in p {
                    if !(s.weight >= 0.0) || s.position.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Config(format!("invalid point source {s:?}")));
                    }
                }
            }
            Density::Voxels { mesh, values } => {
                mesh.validate()?;
                if values.dim() != mesh.dim() {
                    let (a, b, c) = values.dim();
                    let (x, y, z) = mesh.dim();
                    return Err(Error::Shape {
                        expected: vec![x, y, z],
                        got: vec![a, b, c],
                    });
                }
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::Config("voxel densities must be non-negative".into()));
                }
            }
        }
        self.sensitivity.validate()
    }

    /// Weighted point list with quadrature weights for voxel phantoms.
    /// Zero-weight voxels are skipped.
    pub fn quadrature_points(&self) -> Vec<PointSource> {
        match &self.density {
            Density::Points(p) => p.clone(),
            Density::Voxels { mesh, values } => {
                let dv = mesh.voxel_volume();
                values
                    .indexed_iter()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|((iz, iy, ix), v)| PointSource {
                        position: mesh.position(ix, iy, iz),
                        weight: v * dv,
                    })
                    .collect()
            }
        }
    }

    /// Phantom with all weights multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Phantom {
        let density = match &self.density {
            Density::Points(p) => Density::Points(
                p.iter()
                    .map(|q| PointSource {
                        weight: q.weight * s,
                        ..*q
                    })
                    .collect(),
            ),
            Density::Voxels { mesh, values } => Density::Voxels {
                mesh: *mesh,
                values: values * s,
            },
        };
        Phantom {
            density,
            sensitivity: self.sensitivity.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trilinear_reproduces_linear_field() {
        let mesh = Mesh::new([4, 3, 5], [1.0, 2.0, 0.5], [-1.0, 0.0, 1.0]).unwrap();
        let f = |p: [f64; 3]| 2.0 * p[0] - p[1] + 3.0 * p[2];
        let a = Array3::from_shape_fn(mesh.dim(), |(iz, iy, ix)| f(mesh.position(ix, iy, iz)));
        let p = [0.3, 1.7, 2.2];
        assert!((trilinear(&a, &mesh, &p) - f(p)).abs() < 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        let p = Phantom::points(vec![PointSource {
            position: [0.0; 3],
            weight: -1.0,
        }]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn voxel_quadrature_weights() {
        let mesh = Mesh::new([2, 2, 2], [0.5, 0.5, 0.5], [0.0; 3]).unwrap();
        let mut v = Array3::zeros(mesh.dim());
        v[[1, 0, 1]] = 4.0;
        let pts = Phantom::voxels(mesh, v).quadrature_points();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].position, [0.5, 0.0, 0.5]);
        assert_eq!(pts[0].weight, 0.5);
    }
}
