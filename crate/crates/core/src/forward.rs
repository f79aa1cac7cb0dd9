//! Discrete far-field scattering operators and the forward map at any Born
//! order.
//!
//! The forward model is `Y = A (I - VΓ)^{-1} V B` with
//!
//! * `A[m, j] = exp(-i k x̂_m · r_j)` (measurement directions × voxels),
//! * `B[j, n] = exp(i k d̂_n · r_j)` (voxels × incident directions),
//! * `Γ[m, n] = G(r_m, r_n)` off the diagonal and zero on it,
//! * `V = diag(k² h³ η(r_j))`.
//!
//! `V` is sparse, so `VΓ` has only `s` nonzero rows and every product in the
//! Born series stays inside the support block. Nothing here forms an `N × N`
//! inverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, ScatterError};
use crate::geometry::{distance, dot, DirectionSet, Point3, VoxelGrid};
use crate::linalg::{checked_inverse, ComplexMatrix, C64, ONE, ZERO};

/// Outgoing free-space Green's function `exp(ik|x-y|) / (4π|x-y|)`.
pub fn green(x: &Point3, y: &Point3, k: f64) -> Result<C64> {
    let r = distance(x, y);
    if r == 0.0 {
        return Err(ScatterError::Singularity);
    }
    Ok(green_at_distance(r, k))
}

#[inline]
pub(crate) fn green_at_distance(r: f64, k: f64) -> C64 {
    let (s, c) = libm::sincos(k * r);
    C64::new(c, s) / (4.0 * PI * r)
}

/// How a potential value maps to coupling strength.
///
/// `Helmholtz` uses the potential as given: `V = k²h³η` against the `1/(4π r)`
/// Green's function. `PointScatterer` treats `η` as the strength of a point
/// scatterer radiating `exp(ikr)/r`, i.e. the voxel-to-voxel coupling is
/// `k²h³η exp(ikr)/r`. It is implemented by scaling `η` by `4π`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CouplingConvention {
    #[default]
    Helmholtz,
    PointScatterer,
}

impl CouplingConvention {
    pub fn potential_scale(self) -> f64 {
        match self {
            CouplingConvention::Helmholtz => 1.0,
            CouplingConvention::PointScatterer => 4.0 * PI,
        }
    }
}

/// Square voxel-to-voxel coupling `Γ`.
///
/// Implemented by dense matrices and by [`GreenCoupling`], which evaluates
/// entries on demand so large grids never need the `N × N` matrix.
pub trait Coupling {
    fn dim(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> C64;

    fn fill_row(&self, i: usize, out: &mut [C64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.entry(i, j);
        }
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows.len(), cols.len(), |a, b| self.entry(rows[a], cols[b]))
    }
}

impl Coupling for ComplexMatrix {
    fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows()
    }

    fn entry(&self, i: usize, j: usize) -> C64 {
        self[(i, j)]
    }

    fn fill_row(&self, i: usize, out: &mut [C64]) {
        out.copy_from_slice(self.row(i));
    }
}

/// `Γ` evaluated lazily from voxel centers.
#[derive(Clone, Copy, Debug)]
pub struct GreenCoupling<'a> {
    centers: &'a [Point3],
    k: f64,
}

impl<'a> GreenCoupling<'a> {
    pub fn new(grid: &'a VoxelGrid) -> Self {
        Self {
            centers: grid.centers(),
            k: grid.wavenumber(),
        }
    }
}

impl Coupling for GreenCoupling<'_> {
    fn dim(&self) -> usize {
        self.centers.len()
    }

    fn entry(&self, i: usize, j: usize) -> C64 {
        if i == j {
            ZERO
        } else {
            green_at_distance(distance(&self.centers[i], &self.centers[j]), self.k)
        }
    }
}

/// Dense operators for one grid and pair of direction sets.
#[derive(Clone, Debug)]
pub struct ScatteringOperators {
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    pub gamma: ComplexMatrix,
}

/// Measurement matrix `A` (`N_d × N`).
pub fn measurement_operator(grid: &VoxelGrid, meas_dirs: &DirectionSet) -> Result<ComplexMatrix> {
    if meas_dirs.is_empty() {
        return Err(ScatterError::invalid("empty measurement direction set"));
    }
    let k = grid.wavenumber();
    let centers = grid.centers();
    let dirs = meas_dirs.directions();
    Ok(ComplexMatrix::from_fn(dirs.len(), centers.len(), |m, j| {
        let (s, c) = libm::sincos(-k * dot(&dirs[m], &centers[j]));
        C64::new(c, s)
    }))
}

/// Incident-field matrix `B` (`N × N_s`).
pub fn incident_operator(grid: &VoxelGrid, src_dirs: &DirectionSet) -> Result<ComplexMatrix> {
    if src_dirs.is_empty() {
        return Err(ScatterError::invalid("empty source direction set"));
    }
    let k = grid.wavenumber();
    let centers = grid.centers();
    let dirs = src_dirs.directions();
    Ok(ComplexMatrix::from_fn(centers.len(), dirs.len(), |j, n| {
        let (s, c) = libm::sincos(k * dot(&dirs[n], &centers[j]));
        C64::new(c, s)
    }))
}

/// Dense `Γ` with zero diagonal.
pub fn coupling_matrix(grid: &VoxelGrid) -> ComplexMatrix {
    let n = grid.len();
    let lazy = GreenCoupling::new(grid);
    let mut g = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = lazy.entry(i, j);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

pub fn assemble_operators(
    grid: &VoxelGrid,
    meas_dirs: &DirectionSet,
    src_dirs: &DirectionSet,
) -> Result<ScatteringOperators> {
    Ok(ScatteringOperators {
        a: measurement_operator(grid, meas_dirs)?,
        b: incident_operator(grid, src_dirs)?,
        gamma: coupling_matrix(grid),
    })
}

/// Diagonal matrix stored as its nonzero entries.
///
/// Support indices are strictly increasing; entries that are exactly zero are
/// never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDiagonal {
    dim: usize,
    support: Vec<usize>,
    values: Vec<C64>,
}

impl SparseDiagonal {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            support: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn new(dim: usize, support: Vec<usize>, values: Vec<C64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(ScatterError::shape("support and values differ in length"));
        }
        for w in support.windows(2) {
            if w[0] >= w[1] {
                return Err(ScatterError::invalid(
                    "support indices must be unique and strictly increasing",
                ));
            }
        }
        if let Some(&last) = support.last() {
            if last >= dim {
                return Err(ScatterError::invalid(format!(
                    "support index {last} outside [0, {dim})"
                )));
            }
        }
        let (support, values) = support
            .into_iter()
            .zip(values)
            .filter(|(_, v)| *v != ZERO)
            .unzip();
        Ok(Self {
            dim,
            support,
            values,
        })
    }

    pub fn from_dense(diag: &[C64]) -> Self {
        let (support, values) = diag
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != ZERO)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self {
            dim: diag.len(),
            support,
            values,
        }
    }

    /// Reads a diagonal matrix, rejecting nonzero off-diagonal entries.
    pub fn from_matrix(m: &ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(ScatterError::shape("diagonal matrix must be square"));
        }
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                if i != j && m[(i, j)] != ZERO {
                    return Err(ScatterError::invalid(format!(
                        "entry ({i}, {j}) off the diagonal is nonzero"
                    )));
                }
            }
        }
        Ok(Self::from_dense(&m.diagonal()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Number of nonzero entries.
    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    pub fn to_dense(&self) -> Vec<C64> {
        let mut d = vec![ZERO; self.dim];
        for (i, v) in self.support.iter().zip(&self.values) {
            d[*i] = *v;
        }
        d
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&self.to_dense())
    }

    pub fn get(&self, index: usize) -> C64 {
        match self.support.binary_search(&index) {
            Ok(p) => self.values[p],
            Err(_) => ZERO,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            support: self.support.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `‖self − other‖₁`.
    pub fn l1_distance(&self, other: &SparseDiagonal) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut total = 0.0;
        while i < self.support.len() || j < other.support.len() {
            let a = self.support.get(i).copied().unwrap_or(usize::MAX);
            let b = other.support.get(j).copied().unwrap_or(usize::MAX);
            if a == b {
                total += (self.values[i] - other.values[j]).norm();
                i += 1;
                j += 1;
            } else if a < b {
                total += self.values[i].norm();
                i += 1;
            } else {
                total += other.values[j].norm();
                j += 1;
            }
        }
        total
    }
}

/// Scattering potential `η` sampled on the voxels of one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    side_length: f64,
    n_per_side: usize,
    eta: SparseDiagonal,
}

impl PotentialField {
    pub fn new(grid: &VoxelGrid, support: Vec<usize>, values: Vec<C64>) -> Result<Self> {
        Ok(Self {
            side_length: grid.side_length(),
            n_per_side: grid.n_per_side(),
            eta: SparseDiagonal::new(grid.len(), support, values)?,
        })
    }

    pub fn empty(grid: &VoxelGrid) -> Self {
        Self {
            side_length: grid.side_length(),
            n_per_side: grid.n_per_side(),
            eta: SparseDiagonal::zeros(grid.len()),
        }
    }

    pub fn belongs_to(&self, grid: &VoxelGrid) -> bool {
        self.side_length == grid.side_length() && self.n_per_side == grid.n_per_side()
    }

    pub fn eta(&self) -> &SparseDiagonal {
        &self.eta
    }

    pub fn support(&self) -> &[usize] {
        self.eta.support()
    }

    pub fn values(&self) -> &[C64] {
        self.eta.values()
    }

    pub fn sparsity(&self) -> usize {
        self.eta.sparsity()
    }

    /// Diagonal of `V`: `k² h³ η` on the support.
    pub fn strengths(&self, grid: &VoxelGrid) -> Result<SparseDiagonal> {
        self.strengths_with(grid, CouplingConvention::Helmholtz)
    }

    pub fn strengths_with(
        &self,
        grid: &VoxelGrid,
        convention: CouplingConvention,
    ) -> Result<SparseDiagonal> {
        if !self.belongs_to(grid) {
            return Err(ScatterError::invalid("potential was built for a different grid"));
        }
        let k = grid.wavenumber();
        Ok(self
            .eta
            .scaled(k * k * grid.voxel_volume() * convention.potential_scale()))
    }
}

/// Dense diagonal `V` for a potential.
pub fn assemble_v(grid: &VoxelGrid, pot: &PotentialField) -> Result<ComplexMatrix> {
    Ok(pot.strengths(grid)?.to_matrix())
}

/// Number of Born-series terms kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BornOrder {
    Finite(usize),
    Infinite,
}

impl BornOrder {
    pub fn is_linear(self) -> bool {
        self == BornOrder::Finite(1)
    }

    pub fn validate(self) -> Result<Self> {
        match self {
            BornOrder::Finite(0) => Err(ScatterError::invalid("Born order must be at least 1")),
            _ => Ok(self),
        }
    }
}

impl core::fmt::Display for BornOrder {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BornOrder::Finite(m) => write!(f, "{m}"),
            BornOrder::Infinite => f.write_str("inf"),
        }
    }
}

/// `V_S Γ_SS` for the support of `v`.
pub(crate) fn support_coupling<G: Coupling + ?Sized>(v: &SparseDiagonal, gamma: &G) -> ComplexMatrix {
    let s = v.support();
    let mut block = gamma.block(s, s);
    for (r, val) in v.values().iter().enumerate() {
        for x in block.row_mut(r) {
            *x *= val;
        }
    }
    block
}

/// `Σ_{m<terms} X^m` for a small square `X`.
pub(crate) fn truncated_neumann(x: &ComplexMatrix, terms: usize) -> Result<ComplexMatrix> {
    let n = x.rows();
    let mut sum = ComplexMatrix::identity(n);
    let mut power = ComplexMatrix::identity(n);
    for _ in 1..terms {
        power = x.matmul(&power)?;
        if !power.is_finite() {
            return Err(ScatterError::Divergence { iteration: 0 });
        }
        sum.add_assign(&power)?;
    }
    Ok(sum)
}

/// `(I − X)^{-1}`, reporting the support on failure.
pub(crate) fn resolvent(x: &ComplexMatrix, support: &[usize]) -> Result<ComplexMatrix> {
    let mut m = ComplexMatrix::identity(x.rows());
    for (d, e) in m.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *d -= *e;
    }
    checked_inverse(&m).map_err(|e| match e {
        ScatterError::SingularOperator { condition, .. } => ScatterError::SingularOperator {
            support: support.to_vec(),
            condition,
        },
        other => other,
    })
}

/// Support block of `Σ_{m<M} (VΓ)^m` (or `(I − VΓ)^{-1}` for infinite order).
///
/// Off the support the full operator is the identity.
pub fn support_propagator<G: Coupling + ?Sized>(
    v: &SparseDiagonal,
    gamma: &G,
    order: BornOrder,
) -> Result<ComplexMatrix> {
    let vg = support_coupling(v, gamma);
    match order.validate()? {
        BornOrder::Finite(m) => truncated_neumann(&vg, m),
        BornOrder::Infinite => resolvent(&vg, v.support()),
    }
}

/// Support block `T_SS` of the T-matrix `(I − VΓ)^{-1} V`. The T-matrix is
/// zero outside `S × S`.
pub fn t_matrix_block<G: Coupling + ?Sized>(v: &SparseDiagonal, gamma: &G) -> Result<ComplexMatrix> {
    let mut t = support_propagator(v, gamma, BornOrder::Infinite)?;
    scale_columns(&mut t, v.values());
    Ok(t)
}

/// Dense `N × N` T-matrix.
pub fn t_matrix<G: Coupling + ?Sized>(v: &SparseDiagonal, gamma: &G) -> Result<ComplexMatrix> {
    check_coupling(v, gamma)?;
    let block = t_matrix_block(v, gamma)?;
    let n = v.dim();
    let s = v.support();
    let mut t = ComplexMatrix::zeros(n, n);
    for (a, &i) in s.iter().enumerate() {
        for (b, &j) in s.iter().enumerate() {
            t[(i, j)] = block[(a, b)];
        }
    }
    Ok(t)
}

fn scale_columns(m: &mut ComplexMatrix, factors: &[C64]) {
    for i in 0..m.rows() {
        for (x, f) in m.row_mut(i).iter_mut().zip(factors) {
            *x *= f;
        }
    }
}

fn check_coupling<G: Coupling + ?Sized>(v: &SparseDiagonal, gamma: &G) -> Result<()> {
    if gamma.dim() != v.dim() {
        return Err(ScatterError::shape(format!(
            "coupling is {0}x{0} but V has dimension {1}",
            gamma.dim(),
            v.dim()
        )));
    }
    Ok(())
}

fn check_forward_shapes<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    v: &SparseDiagonal,
    gamma: &G,
    b: &ComplexMatrix,
) -> Result<()> {
    check_coupling(v, gamma)?;
    if a.cols() != v.dim() || b.rows() != v.dim() {
        return Err(ScatterError::shape(format!(
            "A is {}x{}, B is {}x{}, V has dimension {}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols(),
            v.dim()
        )));
    }
    Ok(())
}

/// `A_S · block · B_S` for an `s × s` block living on the support.
pub(crate) fn sandwich(
    a: &ComplexMatrix,
    support: &[usize],
    block: &ComplexMatrix,
    b: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    if support.is_empty() {
        return Ok(ComplexMatrix::zeros(a.rows(), b.cols()));
    }
    let inner = block.matmul(&b.select_rows(support))?;
    a.select_columns(support).matmul(&inner)
}

/// `M`th Born approximation `A (Σ_{m<M} (VΓ)^m) V B`.
pub fn forward_born<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    v: &SparseDiagonal,
    gamma: &G,
    b: &ComplexMatrix,
    order: usize,
) -> Result<ComplexMatrix> {
    check_forward_shapes(a, v, gamma, b)?;
    let mut block = support_propagator(v, gamma, BornOrder::Finite(order))?;
    scale_columns(&mut block, v.values());
    sandwich(a, v.support(), &block, b)
}

/// Exact forward data `A (I − VΓ)^{-1} V B` via the support-restricted solve.
pub fn forward_full<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    v: &SparseDiagonal,
    gamma: &G,
    b: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    check_forward_shapes(a, v, gamma, b)?;
    let t = t_matrix_block(v, gamma)?;
    sandwich(a, v.support(), &t, b)
}

pub fn forward_model<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    v: &SparseDiagonal,
    gamma: &G,
    b: &ComplexMatrix,
    order: BornOrder,
) -> Result<ComplexMatrix> {
    match order.validate()? {
        BornOrder::Finite(m) => forward_born(a, v, gamma, b, m),
        BornOrder::Infinite => forward_full(a, v, gamma, b),
    }
}

/// Data matrix `Y` with the noise that was added to it.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    pub data: ComplexMatrix,
    pub noise_level: f64,
    pub seed: Option<u64>,
}

impl MeasurementMatrix {
    pub fn noiseless(data: ComplexMatrix) -> Self {
        Self {
            data,
            noise_level: 0.0,
            seed: None,
        }
    }
}

/// Adds iid circular complex Gaussian noise with per-entry standard deviation
/// `level · ‖Y‖_F / sqrt(N_d N_s)`, so `‖E‖_F ≈ level · ‖Y‖_F`.
pub fn add_noise(y: &ComplexMatrix, level: f64, seed: u64) -> Result<MeasurementMatrix> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(ScatterError::invalid(format!(
            "noise level must be non-negative, got {level}"
        )));
    }
    if level == 0.0 {
        return Ok(MeasurementMatrix {
            data: y.clone(),
            noise_level: 0.0,
            seed: Some(seed),
        });
    }
    let count = (y.rows() * y.cols()).max(1) as f64;
    let sigma = level * y.frobenius_norm() / libm::sqrt(count);
    let per_component = sigma / core::f64::consts::SQRT_2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = y.clone();
    for x in data.as_mut_slice() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *x += C64::new(re * per_component, im * per_component);
    }
    Ok(MeasurementMatrix {
        data,
        noise_level: level,
        seed: Some(seed),
    })
}

/// `‖ΓV‖_max` and `‖ΓV‖₁` (largest column sum) without forming `ΓV`.
pub fn coupling_norms<G: Coupling + ?Sized>(v: &SparseDiagonal, gamma: &G) -> (f64, f64) {
    let n = gamma.dim();
    let mut col = vec![ZERO; n];
    let (mut max, mut one) = (0.0f64, 0.0f64);
    for (&j, val) in v.support().iter().zip(v.values()) {
        // Γ is symmetric, so column j equals row j
        gamma.fill_row(j, &mut col);
        let mag = val.norm();
        let mut sum = 0.0;
        for x in &col {
            let e = x.norm() * mag;
            max = max.max(e);
            sum += e;
        }
        one = one.max(sum);
    }
    (max, one)
}

/// `‖VΓ‖_max` and `‖VΓ‖₁` (largest column sum). `VΓ` has nonzero rows only on
/// the support.
pub fn left_coupling_norms<G: Coupling + ?Sized>(v: &SparseDiagonal, gamma: &G) -> (f64, f64) {
    let n = gamma.dim();
    let mut row = vec![ZERO; n];
    let mut sums = vec![0.0; n];
    let mut max = 0.0f64;
    for (&i, val) in v.support().iter().zip(v.values()) {
        gamma.fill_row(i, &mut row);
        let mag = val.norm();
        for (s, x) in sums.iter_mut().zip(&row) {
            let e = x.norm() * mag;
            max = max.max(e);
            *s += e;
        }
    }
    (max, sums.into_iter().fold(0.0, f64::max))
}

/// Identity extended by a support block: the full `N × N` matrix equal to the
/// identity except for rows `S`, which carry `rows_s` (an `s × N` matrix).
pub fn identity_with_rows(n: usize, support: &[usize], rows_s: &ComplexMatrix) -> ComplexMatrix {
    let mut m = ComplexMatrix::identity(n);
    for (r, &i) in support.iter().enumerate() {
        m.row_mut(i).copy_from_slice(rows_s.row(r));
    }
    m
}

/// Dense `Σ_{m<M} (VΓ)^m` (or `(I − VΓ)^{-1}`), an `N × N` matrix that differs
/// from the identity only in the support rows.
pub fn born_propagator<G: Coupling + ?Sized>(
    v: &SparseDiagonal,
    gamma: &G,
    order: BornOrder,
) -> Result<ComplexMatrix> {
    check_coupling(v, gamma)?;
    let n = v.dim();
    let s = v.support();
    if s.is_empty() || order.validate()?.is_linear() {
        return Ok(ComplexMatrix::identity(n));
    }
    // rows S of P:  e_S + K V_S Γ_{S,:}  with K the support propagator of
    // one order lower
    let k = match order {
        BornOrder::Finite(m) => truncated_neumann(&support_coupling(v, gamma), m - 1)?,
        BornOrder::Infinite => support_propagator(v, gamma, BornOrder::Infinite)?,
    };
    let mut vg_rows = ComplexMatrix::zeros(s.len(), n);
    for (r, (&i, val)) in s.iter().zip(v.values()).enumerate() {
        let row = vg_rows.row_mut(r);
        gamma.fill_row(i, row);
        for x in row.iter_mut() {
            *x *= val;
        }
    }
    let mut rows = k.matmul(&vg_rows)?;
    for (r, &i) in s.iter().enumerate() {
        rows[(r, i)] += ONE;
    }
    Ok(identity_with_rows(n, s, &rows))
}
