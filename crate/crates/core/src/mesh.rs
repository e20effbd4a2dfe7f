//! Regular 3D meshes.
//!
//! Arrays on a mesh are stored as `Array3<f64>` with shape `(nz, ny, nx)`,
//! so `x` is the fastest-varying index. This matches the on-disk ordering
//! (slab, y, x) used by portrait stacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    /// Voxel counts `(nx, ny, nz)`.
    pub shape: [usize; 3],
    /// Voxel spacing `(dx, dy, dz)` in meters.
    pub spacing: [f64; 3],
    /// Position of voxel `(0, 0, 0)` in meters.
    pub origin: [f64; 3],
}

impl Mesh {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let mesh = Mesh {
            shape,
            spacing,
            origin,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Mesh with `shape` voxels whose center voxel sits at the origin.
    ///
    /// For even counts the origin falls on voxel `n / 2`.
    pub fn centered(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = [
            -((shape[0] / 2) as f64) * spacing[0],
            -((shape[1] / 2) as f64) * spacing[1],
            -((shape[2] / 2) as f64) * spacing[2],
        ];
        Self::new(shape, spacing, origin)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.shape[a] == 0 {
                return Err(Error::Config(format!("mesh axis {a} has zero voxels")));
            }
            if !(self.spacing[a] > 0.0) || !self.spacing[a].is_finite() {
                return Err(Error::Config(format!(
                    "mesh spacing along axis {a} must be positive, got {}",
                    self.spacing[a]
                )));
            }
            if !self.origin[a].is_finite() {
                return Err(Error::Config(format!("mesh origin along axis {a} not finite")));
            }
        }
        Ok(())
    }

    /// Array dimensions in storage order `(nz, ny, nx)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        (self.shape[2], self.shape[1], self.shape[0])
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.spacing[axis]
    }

    /// Physical position of voxel `(ix, iy, iz)`.
    pub fn position(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [self.coord(0, ix), self.coord(1, iy), self.coord(2, iz)]
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        (0..self.shape[axis]).map(|i| self.coord(axis, i)).collect()
    }

    /// Fractional voxel index of a physical coordinate along `axis`.
    pub fn fractional_index(&self, axis: usize, x: f64) -> f64 {
        (x - self.origin[axis]) / self.spacing[axis]
    }

    /// Index of the voxel holding the physical origin, if it lies on a grid point.
    pub fn center_index(&self) -> [usize; 3] {
        let mut c = [0usize; 3];
        for (a, ci) in c.iter_mut().enumerate() {
            *ci = self.fractional_index(a, 0.0).round().max(0.0) as usize;
        }
        c
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// The mesh grown by `lo` voxels before and `hi` voxels after along each axis.
    pub fn padded(&self, lo: [usize; 3], hi: [usize; 3]) -> Mesh {
        let mut m = *self;
        for a in 0..3 {
            m.shape[a] += lo[a] + hi[a];
            m.origin[a] -= lo[a] as f64 * self.spacing[a];
        }
        m
    }

    pub fn same_grid(&self, other: &Mesh) -> bool {
        self.shape == other.shape
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= 1e-9 * self.spacing[a]
                    && (self.origin[a] - other.origin[a]).abs() <= 1e-6 * self.spacing[a]
            })
    }
}
