//! Scatterer models evaluated on voxel grids.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, ScatterError};
use crate::forward::PotentialField;
use crate::geometry::{distance, Point3, VoxelGrid};
use crate::linalg::C64;

#[derive(Clone, Debug, PartialEq)]
pub enum ScattererModel {
    /// Two homogeneous spheres centred on the x axis through the domain
    /// centre, `separation` apart.
    TwoSpheres { radius: f64, separation: f64, eta0: f64 },
    /// One sphere at the domain centre with `η = η₀ ρ / R`, zero at the
    /// centre and `η₀` at the surface.
    RadialSphere { radius: f64, eta0: f64 },
    /// `count` voxels drawn uniformly without replacement, each with `η₀`.
    RandomVoxels { count: usize, eta0: f64, seed: u64 },
}

impl ScattererModel {
    /// Paper model 1 for a given contrast.
    pub fn model_one(eta0: f64) -> Self {
        ScattererModel::TwoSpheres {
            radius: 0.5,
            separation: 1.5,
            eta0,
        }
    }

    /// Paper model 2 for a given contrast.
    pub fn model_two(eta0: f64) -> Self {
        ScattererModel::RadialSphere { radius: 1.25, eta0 }
    }

    /// Volume of the scatterer divided by the domain volume, ignoring
    /// voxelization.
    pub fn continuum_fraction(&self, side_length: f64) -> f64 {
        let ball = |r: f64| 4.0 / 3.0 * PI * r * r * r;
        let domain = side_length * side_length * side_length;
        match *self {
            ScattererModel::TwoSpheres { radius, .. } => 2.0 * ball(radius) / domain,
            ScattererModel::RadialSphere { radius, .. } => ball(radius) / domain,
            ScattererModel::RandomVoxels { .. } => f64::NAN,
        }
    }
}

fn inside_domain(c: &Point3, radius: f64, side: f64) -> bool {
    c.iter().all(|&x| x - radius >= 0.0 && x + radius <= side)
}

/// Voxels whose centres lie within a closed ball.
fn ball_voxels(grid: &VoxelGrid, centre: &Point3, radius: f64) -> Vec<usize> {
    grid.centers()
        .iter()
        .enumerate()
        .filter(|(_, p)| distance(p, centre) <= radius)
        .map(|(i, _)| i)
        .collect()
}

pub fn build_model(model: &ScattererModel, grid: &VoxelGrid) -> Result<PotentialField> {
    let side = grid.side_length();
    let mid = grid.domain_center();
    match *model {
        ScattererModel::TwoSpheres {
            radius,
            separation,
            eta0,
        } => {
            if !(radius >= 0.0) || !(separation >= 0.0) {
                return Err(ScatterError::invalid("radius and separation must be non-negative"));
            }
            let centres = [
                [mid[0] - 0.5 * separation, mid[1], mid[2]],
                [mid[0] + 0.5 * separation, mid[1], mid[2]],
            ];
            if centres.iter().any(|c| !inside_domain(c, radius, side)) {
                return Err(ScatterError::invalid(format!(
                    "spheres of radius {radius} separated by {separation} do not fit in a domain of side {side}"
                )));
            }
            let mut support: Vec<usize> = centres.iter().flat_map(|c| ball_voxels(grid, c, radius)).collect();
            support.sort_unstable();
            support.dedup();
            let values = support.iter().map(|_| C64::new(eta0, 0.0)).collect();
            PotentialField::new(grid, support, values)
        }
        ScattererModel::RadialSphere { radius, eta0 } => {
            if !(radius >= 0.0) {
                return Err(ScatterError::invalid("radius must be non-negative"));
            }
            if !inside_domain(&mid, radius, side) {
                return Err(ScatterError::invalid(format!(
                    "sphere of radius {radius} does not fit in a domain of side {side}"
                )));
            }
            if radius == 0.0 {
                return Ok(PotentialField::empty(grid));
            }
            let support = ball_voxels(grid, &mid, radius);
            let values = support
                .iter()
                .map(|&i| C64::new(eta0 * distance(&grid.center(i), &mid) / radius, 0.0))
                .collect();
            PotentialField::new(grid, support, values)
        }
        ScattererModel::RandomVoxels { count, eta0, seed } => {
            let n = grid.len();
            if count > n {
                return Err(ScatterError::invalid(format!("cannot place {count} scatterers in {n} voxels")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut support = rand::seq::index::sample(&mut rng, n, count).into_vec();
            support.sort_unstable();
            let values = support.iter().map(|_| C64::new(eta0, 0.0)).collect();
            PotentialField::new(grid, support, values)
        }
    }
}
