//! Voxel grids and far-field direction sets.
//!
//! Lengths are measured in wavelengths, so the wavenumber is always `2π`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Result, ScatterError};

pub type Point3 = [f64; 3];

/// Wavenumber for unit wavelength.
pub const WAVENUMBER: f64 = 2.0 * PI;

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    libm::sqrt(dx * dx + dy * dy + dz * dz)
}

/// Regular cubic lattice of voxel centers filling `[0, side_length]^3`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    side_length: f64,
    n_per_side: usize,
    spacing: f64,
    centers: Vec<Point3>,
}

impl VoxelGrid {
    /// Centers sit at cell midpoints and are ordered with x varying fastest.
    pub fn new(side_length: f64, n_per_side: usize) -> Result<Self> {
        if !(side_length > 0.0) || !side_length.is_finite() {
            return Err(ScatterError::invalid(format!(
                "side length must be positive, got {side_length}"
            )));
        }
        if n_per_side == 0 {
            return Err(ScatterError::invalid("grid needs at least one voxel per side"));
        }
        let spacing = side_length / n_per_side as f64;
        let n = n_per_side;
        let mut centers = Vec::with_capacity(n * n * n);
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    centers.push([
                        (ix as f64 + 0.5) * spacing,
                        (iy as f64 + 0.5) * spacing,
                        (iz as f64 + 0.5) * spacing,
                    ]);
                }
            }
        }
        Ok(Self {
            side_length,
            n_per_side,
            spacing,
            centers,
        })
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn n_per_side(&self) -> usize {
        self.n_per_side
    }

    /// Voxel spacing `h`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn wavenumber(&self) -> f64 {
        WAVENUMBER
    }

    /// Dimensionless `k h`.
    pub fn kh(&self) -> f64 {
        WAVENUMBER * self.spacing
    }

    /// Voxel volume `h^3`.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing * self.spacing * self.spacing
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Point3] {
        &self.centers
    }

    pub fn center(&self, index: usize) -> Point3 {
        self.centers[index]
    }

    pub fn domain_center(&self) -> Point3 {
        let c = 0.5 * self.side_length;
        [c, c, c]
    }

    pub fn linear_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let n = self.n_per_side;
        (iz * n + iy) * n + ix
    }

    pub fn lattice_coords(&self, index: usize) -> (usize, usize, usize) {
        let n = self.n_per_side;
        (index % n, (index / n) % n, index / (n * n))
    }

    /// Indices of the central `z` slice (the middle layer, or the lower of
    /// the two middle layers for even `n`).
    pub fn central_slice(&self) -> Vec<usize> {
        let n = self.n_per_side;
        let iz = (n - 1) / 2;
        (0..n * n).map(|k| iz * n * n + k).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    FullSphere,
    Hemisphere,
}

/// Ordered set of unit vectors used as incident or measurement directions.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet {
    directions: Vec<Point3>,
    coverage: Coverage,
}

impl DirectionSet {
    /// Wraps caller-supplied directions, normalizing each one.
    pub fn from_vectors(directions: Vec<Point3>, coverage: Coverage) -> Result<Self> {
        if directions.is_empty() {
            return Err(ScatterError::invalid("direction set is empty"));
        }
        let mut out = Vec::with_capacity(directions.len());
        for d in directions {
            let n = libm::sqrt(dot(&d, &d));
            if !(n > 0.0) || !n.is_finite() {
                return Err(ScatterError::invalid("zero or non-finite direction"));
            }
            let u = [d[0] / n, d[1] / n, d[2] / n];
            if coverage == Coverage::Hemisphere && u[2] < 0.0 {
                return Err(ScatterError::invalid(
                    "hemisphere directions need a non-negative z component",
                ));
            }
            out.push(u);
        }
        Ok(Self {
            directions: out,
            coverage,
        })
    }

    pub fn directions(&self) -> &[Point3] {
        &self.directions
    }

    pub fn coverage(&self) -> Coverage {
        self.coverage
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Quasi-uniform Fibonacci spiral on the sphere. Hemisphere coverage reflects
/// the lower half of the same spiral through the equatorial plane.
pub fn sphere_directions(count: usize, coverage: Coverage) -> Result<DirectionSet> {
    if count == 0 {
        return Err(ScatterError::invalid("need at least one direction"));
    }
    let golden_angle = PI * (3.0 - libm::sqrt(5.0));
    let n = count as f64;
    let directions = (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n;
            let r = libm::sqrt((1.0 - z * z).max(0.0));
            let phi = golden_angle * i as f64;
            let z = match coverage {
                Coverage::FullSphere => z,
                Coverage::Hemisphere => z.abs(),
            };
            [r * libm::cos(phi), r * libm::sin(phi), z]
        })
        .collect();
    Ok(DirectionSet {
        directions,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_of_one_voxel_sits_at_cube_center() {
        let g = VoxelGrid::new(2.5, 1).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.spacing(), 2.5);
        assert_eq!(g.center(0), [1.25, 1.25, 1.25]);
    }

    #[test]
    fn paper_grid_parameters() {
        let g = VoxelGrid::new(1.0, 10).unwrap();
        assert_eq!(g.len(), 1000);
        assert!((g.spacing() - 0.1).abs() < 1e-15);
        assert!((g.kh() - 0.6283185307179586).abs() < 1e-12);
        let g = VoxelGrid::new(3.0, 10).unwrap();
        assert!((g.kh() - 1.885).abs() < 1e-3);
    }

    #[test]
    fn two_per_side_grid_pairwise_distances() {
        let g = VoxelGrid::new(2.0, 2).unwrap();
        assert_eq!(g.len(), 8);
        let mut dists = Vec::new();
        for i in 0..8 {
            for j in (i + 1)..8 {
                dists.push(distance(&g.center(i), &g.center(j)));
            }
        }
        assert_eq!(dists.len(), 28);
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = dists.iter().cloned().fold(0.0, f64::max);
        assert!((min - 1.0).abs() < 1e-15);
        assert!((max - libm::sqrt(3.0)).abs() < 1e-15);
        // 12 edges, 12 face diagonals, 4 body diagonals
        assert_eq!(dists.iter().filter(|d| (**d - 1.0).abs() < 1e-12).count(), 12);
    }

    #[test]
    fn ordering_is_x_fastest() {
        let g = VoxelGrid::new(3.0, 3).unwrap();
        assert_eq!(g.center(1), [1.5, 0.5, 0.5]);
        assert_eq!(g.center(3), [0.5, 1.5, 0.5]);
        assert_eq!(g.center(9), [0.5, 0.5, 1.5]);
        assert_eq!(g.lattice_coords(g.linear_index(2, 1, 2)), (2, 1, 2));
    }

    #[test]
    fn invalid_grid_inputs() {
        assert!(VoxelGrid::new(0.0, 3).is_err());
        assert!(VoxelGrid::new(-1.0, 3).is_err());
        assert!(VoxelGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn fibonacci_directions_are_balanced_unit_vectors() {
        let d = sphere_directions(500, Coverage::FullSphere).unwrap();
        let mut mean = [0.0; 3];
        for u in d.directions() {
            assert!((dot(u, u).sqrt() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                mean[k] += u[k] / 500.0;
            }
        }
        assert!(dot(&mean, &mean).sqrt() < 0.05);
    }

    #[test]
    fn single_direction_and_hemisphere() {
        let d = sphere_directions(1, Coverage::FullSphere).unwrap();
        assert_eq!(d.len(), 1);
        let h = sphere_directions(225, Coverage::Hemisphere).unwrap();
        assert_eq!(h.len(), 225);
        assert!(h.directions().iter().all(|u| u[2] >= 0.0));
        assert!(sphere_directions(0, Coverage::FullSphere).is_err());
    }
}
