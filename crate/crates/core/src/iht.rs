//! Linear and nonlinear iterative hard thresholding in the diagonal (Hadamard)
//! formulation.
//!
//! The update is
//!
//! ```text
//! V_{n+1} = H_s( D( V_n + Ã_n^* (Y − Ã_n V_n B) B^* ) ),   Ã_n = A Σ_{m<M} (V_n Γ)^m
//! ```
//!
//! run on column-normalized `Â`, `B̂`. Physical potentials are recovered by
//! dividing by the column scales.
//!
//! `Ã_n = Â (I + W̃)` where `W̃` is nonzero only on the `s` support rows, so the
//! diagonal of the update can be assembled from the Gram matrices `Â^*Â` and
//! `B̂B̂^*` in `O(N s²)` per iteration. The Gram columns are cached and reused
//! across data sets that share the operators.

use alloc::boxed::Box;
use alloc::collections::btree_map::Entry;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Result, ScatterError};
use crate::forward::{
    born_propagator, resolvent, sandwich, support_coupling, t_matrix_block, truncated_neumann,
    BornOrder, Coupling, SparseDiagonal,
};
use crate::linalg::{dot_conj, vec_norm, ComplexMatrix, C64, ONE, ZERO};

/// Settings for one reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct IhtConfig {
    /// Number of entries kept by `H_s`.
    pub s_threshold: usize,
    pub born_order: BornOrder,
    pub max_iter: usize,
    /// Stop once `|ΔY_err| ≤ tol · Y_err`.
    pub tol: Option<f64>,
    /// Physical starting potential (zero when absent).
    pub init: Option<SparseDiagonal>,
}

impl IhtConfig {
    pub fn new(s_threshold: usize, born_order: BornOrder) -> Self {
        Self {
            s_threshold,
            born_order,
            max_iter: 100,
            tol: None,
            init: None,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_threshold == 0 {
            return Err(ScatterError::invalid("threshold level must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(ScatterError::invalid("max_iter must be at least 1"));
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0) {
                return Err(ScatterError::invalid(format!("tolerance must be non-negative, got {t}")));
            }
        }
        self.born_order.validate()?;
        Ok(())
    }
}

/// Diagonal of a square matrix.
pub fn diag_extract(x: &ComplexMatrix) -> Result<Vec<C64>> {
    if !x.is_square() {
        return Err(ScatterError::invalid(format!(
            "diagonal extraction needs a square matrix, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    Ok(x.diagonal())
}

/// Magnitude descending, then index ascending.
fn rank(v: &[C64], i: usize, j: usize) -> Ordering {
    v[j].norm().total_cmp(&v[i].norm()).then(i.cmp(&j))
}

/// Indices of the `s` largest-magnitude entries in increasing order.
pub fn largest_indices(v: &[C64], s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if s < idx.len() {
        if s > 0 {
            idx.select_nth_unstable_by(s - 1, |&i, &j| rank(v, i, j));
        }
        idx.truncate(s);
    }
    idx.sort_unstable();
    idx
}

/// `H_s`: keeps the `s` largest-magnitude entries. Ties go to the lower index.
pub fn hard_threshold(v: &[C64], s: usize) -> Vec<C64> {
    let mut out = vec![ZERO; v.len()];
    for i in largest_indices(v, s) {
        out[i] = v[i];
    }
    out
}

fn threshold_sparse(z: &[C64], s: usize) -> SparseDiagonal {
    let support = largest_indices(z, s);
    let values = support.iter().map(|&i| z[i]).collect();
    SparseDiagonal::new(z.len(), support, values).expect("indices are sorted and in range")
}

/// Column-normalized operators and the scales that map back to physical units.
#[derive(Clone, Debug)]
pub struct NormalizedOperators {
    pub a_hat: ComplexMatrix,
    pub b_hat: ComplexMatrix,
    /// `‖A_j‖₂`
    pub a_norms: Vec<f64>,
    /// `‖(B^*)_j‖₂`, the norm of row `j` of `B`.
    pub b_norms: Vec<f64>,
    /// `‖A_j‖₂ ‖(B^*)_j‖₂`
    pub scales: Vec<f64>,
}

impl NormalizedOperators {
    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    /// `v̂ = scales ∘ v`.
    pub fn to_normalized(&self, v: &SparseDiagonal) -> SparseDiagonal {
        rescale(v, |j| self.scales[j])
    }

    /// `v = v̂ / scales`.
    pub fn to_physical(&self, v_hat: &SparseDiagonal) -> SparseDiagonal {
        rescale(v_hat, |j| 1.0 / self.scales[j])
    }
}

fn rescale(v: &SparseDiagonal, f: impl Fn(usize) -> f64) -> SparseDiagonal {
    let values = v.support().iter().zip(v.values()).map(|(&j, x)| x * f(j)).collect();
    SparseDiagonal::new(v.dim(), v.support().to_vec(), values).expect("support unchanged")
}

/// Scales the columns of `A` and the rows of `B` to unit norm.
pub fn column_normalize(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<NormalizedOperators> {
    if a.cols() != b.rows() {
        return Err(ScatterError::shape(format!(
            "A has {} columns but B has {} rows",
            a.cols(),
            b.rows()
        )));
    }
    let n = a.cols();
    let mut a_norms = vec![0.0; n];
    for i in 0..a.rows() {
        for (acc, x) in a_norms.iter_mut().zip(a.row(i)) {
            *acc += x.norm_sqr();
        }
    }
    for (j, x) in a_norms.iter_mut().enumerate() {
        *x = libm::sqrt(*x);
        if !(*x > 0.0) {
            return Err(ScatterError::invalid(format!("column {j} of A is zero")));
        }
    }
    let mut b_norms = Vec::with_capacity(n);
    for j in 0..n {
        let nrm = vec_norm(b.row(j));
        if !(nrm > 0.0) {
            return Err(ScatterError::invalid(format!("row {j} of B is zero")));
        }
        b_norms.push(nrm);
    }
    let mut a_hat = a.clone();
    for i in 0..a_hat.rows() {
        for (x, s) in a_hat.row_mut(i).iter_mut().zip(&a_norms) {
            *x /= s;
        }
    }
    let mut b_hat = b.clone();
    for (j, s) in b_norms.iter().enumerate() {
        for x in b_hat.row_mut(j) {
            *x /= s;
        }
    }
    let scales = a_norms.iter().zip(&b_norms).map(|(x, y)| x * y).collect();
    Ok(NormalizedOperators {
        a_hat,
        b_hat,
        a_norms,
        b_norms,
        scales,
    })
}

/// State after one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Physical potential strengths (the diagonal of `V_n`).
    pub v: SparseDiagonal,
    pub y_err: f64,
    pub l1_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionTrace {
    /// Entry 0 is the starting point; entry `n` follows the `n`th update.
    pub records: Vec<IterationRecord>,
    /// Set when the tolerance test passed or an exact fixed point was reached.
    pub converged: bool,
    pub iterations: usize,
}

impl ReconstructionTrace {
    pub fn final_estimate(&self) -> &SparseDiagonal {
        &self.records.last().expect("trace is never empty").v
    }

    pub fn final_y_err(&self) -> f64 {
        self.records.last().expect("trace is never empty").y_err
    }

    pub fn l1_errors(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.l1_error).collect()
    }
}

/// Lazily computed vectors keyed by index, dropped wholesale when the stored
/// entry count passes a budget.
#[derive(Clone, Debug)]
struct VectorCache {
    entries: BTreeMap<usize, Box<[C64]>>,
    stored: usize,
    budget: usize,
}

impl VectorCache {
    fn new(budget: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            stored: 0,
            budget,
        }
    }

    fn ensure(&mut self, keys: &[usize], len: usize, mut f: impl FnMut(usize) -> Box<[C64]>) {
        let missing = keys.iter().filter(|k| !self.entries.contains_key(k)).count();
        if missing == 0 {
            return;
        }
        if self.stored + missing * len > self.budget {
            self.entries.clear();
            self.stored = 0;
        }
        for &k in keys {
            if let Entry::Vacant(slot) = self.entries.entry(k) {
                slot.insert(f(k));
                self.stored += len;
            }
        }
    }

    fn get(&self, key: usize) -> &[C64] {
        &self.entries[&key]
    }
}

/// Default cache budget in complex entries (1 GiB per cache).
const CACHE_BUDGET: usize = 1 << 26;

/// Data-dependent precomputation for one measurement matrix.
#[derive(Clone, Debug)]
pub struct PreparedData {
    y: ComplexMatrix,
    y_norm: f64,
    /// `Â^* Y` (`N × N_s`)
    ay: ComplexMatrix,
    /// diagonal of `Â^* Y B̂^*`
    diag_p: Vec<C64>,
    /// rows of `Â^* Y B̂^*`
    p_rows: VectorCache,
}

impl PreparedData {
    pub fn y(&self) -> &ComplexMatrix {
        &self.y
    }
}

/// Reconstruction engine bound to one set of operators.
pub struct IhtSolver<'g, G: Coupling + ?Sized> {
    ops: NormalizedOperators,
    gamma: Option<&'g G>,
    /// columns of `Â^*Â`
    gram_a: VectorCache,
    /// columns of `B̂B̂^*`
    gram_b: VectorCache,
}

impl<'g, G: Coupling + ?Sized> IhtSolver<'g, G> {
    /// Without a coupling only `M = 1` is available and `Y_err` uses the
    /// first-Born model.
    pub fn new(a: &ComplexMatrix, b: &ComplexMatrix, gamma: Option<&'g G>) -> Result<Self> {
        let ops = column_normalize(a, b)?;
        if let Some(g) = gamma {
            if g.dim() != ops.dim() {
                return Err(ScatterError::shape(format!(
                    "coupling has dimension {} but there are {} voxels",
                    g.dim(),
                    ops.dim()
                )));
            }
        }
        Ok(Self {
            ops,
            gamma,
            gram_a: VectorCache::new(CACHE_BUDGET),
            gram_b: VectorCache::new(CACHE_BUDGET),
        })
    }

    pub fn operators(&self) -> &NormalizedOperators {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.ops.dim()
    }

    pub fn prepare(&self, y: &ComplexMatrix) -> Result<PreparedData> {
        let (a, b) = (&self.ops.a_hat, &self.ops.b_hat);
        if y.rows() != a.rows() || y.cols() != b.cols() {
            return Err(ScatterError::shape(format!(
                "data is {}x{} but operators expect {}x{}",
                y.rows(),
                y.cols(),
                a.rows(),
                b.cols()
            )));
        }
        let ay = a.adjoint_matmul(y)?;
        let diag_p = (0..self.dim())
            .map(|j| dot_conj(b.row(j), ay.row(j)))
            .collect();
        Ok(PreparedData {
            y: y.clone(),
            y_norm: y.frobenius_norm(),
            ay,
            diag_p,
            p_rows: VectorCache::new(CACHE_BUDGET),
        })
    }

    /// `W̃` on the support rows (`s × N`), or `None` when `Ã = Â`.
    fn correction(&self, v_hat: &SparseDiagonal, order: BornOrder) -> Result<Option<ComplexMatrix>> {
        let order = order.validate()?;
        if v_hat.is_zero() || order.is_linear() {
            return Ok(None);
        }
        let gamma = self.gamma.ok_or_else(|| {
            ScatterError::invalid(format!("Born order {order} needs the coupling matrix"))
        })?;
        let v = self.ops.to_physical(v_hat);
        let s = v.support();
        let vg = support_coupling(&v, gamma);
        let k = match order {
            BornOrder::Finite(m) => truncated_neumann(&vg, m - 1)?,
            BornOrder::Infinite => resolvent(&vg, s)?,
        };
        let n = self.dim();
        let mut rows = ComplexMatrix::zeros(s.len(), n);
        for (r, (&i, val)) in s.iter().zip(v.values()).enumerate() {
            let row = rows.row_mut(r);
            gamma.fill_row(i, row);
            for x in row.iter_mut() {
                *x *= val;
            }
        }
        let mut w = k.matmul(&rows)?;
        let a = &self.ops.a_norms;
        for (r, &t) in s.iter().enumerate() {
            for (j, x) in w.row_mut(r).iter_mut().enumerate() {
                *x *= a[t] / a[j];
            }
        }
        Ok(Some(w))
    }

    fn load_gram(&mut self, support: &[usize]) {
        let a = &self.ops.a_hat;
        let n = a.cols();
        self.gram_a.ensure(support, n, |t| {
            let mut col = vec![ZERO; n];
            for m in 0..a.rows() {
                let row = a.row(m);
                let at = row[t];
                for (c, x) in col.iter_mut().zip(row) {
                    *c += x.conj() * at;
                }
            }
            col.into_boxed_slice()
        });
        let b = &self.ops.b_hat;
        self.gram_b.ensure(support, n, |t| {
            let bt = b.row(t);
            (0..n).map(|j| dot_conj(bt, b.row(j))).collect()
        });
    }

    fn load_p_rows(&self, data: &mut PreparedData, support: &[usize]) {
        let b = &self.ops.b_hat;
        let ay = &data.ay;
        let n = b.rows();
        data.p_rows.ensure(support, n, |t| {
            let row = ay.row(t);
            (0..n).map(|j| dot_conj(b.row(j), row)).collect()
        });
    }

    /// `D(Ã_n^* Y B̂^*)` for the data held in `data`.
    fn backprojection_with(
        &self,
        data: &mut PreparedData,
        support: &[usize],
        w: Option<&ComplexMatrix>,
    ) -> Vec<C64> {
        let mut out = data.diag_p.clone();
        if let Some(w) = w {
            self.load_p_rows(data, support);
            for (r, &t) in support.iter().enumerate() {
                let p = data.p_rows.get(t);
                for ((o, wt), pt) in out.iter_mut().zip(w.row(r)).zip(p) {
                    *o += wt.conj() * pt;
                }
            }
        }
        out
    }

    /// `D(Ã_n^* Y B̂^*)` with `Ã_n` built from the normalized iterate `v_hat`.
    pub fn backprojection(
        &mut self,
        data: &mut PreparedData,
        v_hat: &SparseDiagonal,
        order: BornOrder,
    ) -> Result<Vec<C64>> {
        let w = self.correction(v_hat, order)?;
        Ok(self.backprojection_with(data, v_hat.support(), w.as_ref()))
    }

    /// Pre-threshold update `D(V̂_n + Ã_n^*(Y − Ã_n V̂_n B̂) B̂^*)` in normalized
    /// units.
    pub fn gradient_step(
        &mut self,
        data: &mut PreparedData,
        v_hat: &SparseDiagonal,
        order: BornOrder,
    ) -> Result<Vec<C64>> {
        let w = self.correction(v_hat, order)?;
        let support = v_hat.support();
        let mut z = self.backprojection_with(data, support, w.as_ref());
        if support.is_empty() {
            return Ok(z);
        }
        self.load_gram(support);
        let n = self.dim();
        let s = support.len();

        // X = G_A[:, S] (I + W̃_SS)
        let mut x = ComplexMatrix::zeros(n, s);
        for (u, &tu) in support.iter().enumerate() {
            let col = self.gram_a.get(tu);
            for (t, _) in support.iter().enumerate() {
                let e = match &w {
                    Some(w) => w[(u, support[t])] + if u == t { ONE } else { ZERO },
                    None if u == t => ONE,
                    None => continue,
                };
                if e == ZERO {
                    continue;
                }
                for j in 0..n {
                    x[(j, t)] += col[j] * e;
                }
            }
        }
        // Z = (I + W̃)^* X
        let mut zmat = x.clone();
        if let Some(w) = &w {
            for j in 0..n {
                for u in 0..s {
                    let c = w[(u, j)].conj();
                    if c == ZERO {
                        continue;
                    }
                    let xu = x.row(support[u]);
                    for (zt, xt) in zmat.row_mut(j).iter_mut().zip(xu) {
                        *zt += c * xt;
                    }
                }
            }
        }
        // z_j += v̂_j − Σ_t Z_jt v̂_t conj(G_B[j, t])
        for (t, (&tt, vt)) in support.iter().zip(v_hat.values()).enumerate() {
            let gb = self.gram_b.get(tt);
            for j in 0..n {
                z[j] -= zmat[(j, t)] * vt * gb[j].conj();
            }
        }
        for (&j, vj) in support.iter().zip(v_hat.values()) {
            z[j] += vj;
        }
        Ok(z)
    }

    /// Relative misfit `‖Y − A T(v) B‖_F / ‖Y‖_F` with the full model (or the
    /// first-Born model when no coupling was given). Zero data gives 0.
    pub fn y_err(&self, data: &PreparedData, v: &SparseDiagonal) -> Result<f64> {
        if data.y_norm == 0.0 {
            return Ok(0.0);
        }
        let s = v.support();
        if s.is_empty() {
            return Ok(1.0);
        }
        let block = match self.gamma {
            Some(g) => t_matrix_block(v, g)?,
            None => ComplexMatrix::from_diagonal(v.values()),
        };
        let a_s = ComplexMatrix::from_fn(self.ops.a_hat.rows(), s.len(), |m, r| {
            self.ops.a_hat[(m, s[r])] * self.ops.a_norms[s[r]]
        });
        let b_s = ComplexMatrix::from_fn(s.len(), self.ops.b_hat.cols(), |r, n| {
            self.ops.b_hat[(s[r], n)] * self.ops.b_norms[s[r]]
        });
        let model = a_s.matmul(&block.matmul(&b_s)?)?;
        Ok(data.y.sub(&model)?.frobenius_norm() / data.y_norm)
    }

    /// Runs the iteration from `cfg.init`, comparing against `truth` (physical)
    /// when supplied.
    pub fn run(
        &mut self,
        data: &mut PreparedData,
        cfg: &IhtConfig,
        truth: Option<&SparseDiagonal>,
    ) -> Result<ReconstructionTrace> {
        cfg.validate()?;
        let n = self.dim();
        if let Some(t) = truth {
            if t.dim() != n {
                return Err(ScatterError::shape("ground truth has the wrong dimension"));
            }
        }
        let mut v_hat = match &cfg.init {
            Some(v0) if v0.dim() != n => {
                return Err(ScatterError::shape("initial potential has the wrong dimension"))
            }
            Some(v0) => self.ops.to_normalized(v0),
            None => SparseDiagonal::zeros(n),
        };
        let record = |solver: &Self, data: &PreparedData, iter: usize, v_hat: &SparseDiagonal| {
            let v = solver.ops.to_physical(v_hat);
            let y_err = solver.y_err(data, &v).map_err(|e| e.at_iteration(iter))?;
            if !y_err.is_finite() {
                return Err(ScatterError::Divergence { iteration: iter });
            }
            let l1_error = truth.map(|t| v.l1_distance(t));
            Ok(IterationRecord {
                iter,
                v,
                y_err,
                l1_error,
            })
        };
        let mut records = vec![record(self, data, 0, &v_hat)?];
        let mut converged = false;
        let mut iterations = 0;
        for iter in 1..=cfg.max_iter {
            let z = self
                .gradient_step(data, &v_hat, cfg.born_order)
                .map_err(|e| e.at_iteration(iter))?;
            if z.iter().any(|x| !x.is_finite()) {
                return Err(ScatterError::Divergence { iteration: iter });
            }
            let next = threshold_sparse(&z, cfg.s_threshold);
            let fixed = next == v_hat;
            v_hat = next;
            let rec = record(self, data, iter, &v_hat)?;
            let prev = records.last().expect("nonempty").y_err;
            let dy = (rec.y_err - prev).abs();
            records.push(rec);
            iterations = iter;
            if fixed {
                converged = true;
            }
            if let Some(tol) = cfg.tol {
                if dy <= tol * prev {
                    converged = true;
                    break;
                }
            }
        }
        Ok(ReconstructionTrace {
            records,
            converged,
            iterations,
        })
    }
}

/// Linear IHT (`M = 1`); `Y_err` is measured against the first-Born model.
pub fn linear_iht(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    y: &ComplexMatrix,
    cfg: &IhtConfig,
) -> Result<ReconstructionTrace> {
    let mut solver = IhtSolver::<ComplexMatrix>::new(a, b, None)?;
    let mut data = solver.prepare(y)?;
    let cfg = IhtConfig {
        born_order: BornOrder::Finite(1),
        ..cfg.clone()
    };
    solver.run(&mut data, &cfg, None)
}

/// IHT at a finite Born order with `Y_err` measured against the full model.
pub fn nonlinear_iht<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    gamma: &G,
    y: &ComplexMatrix,
    cfg: &IhtConfig,
) -> Result<ReconstructionTrace> {
    if cfg.born_order == BornOrder::Infinite {
        return Err(ScatterError::invalid("nonlinear_iht needs a finite Born order"));
    }
    let mut solver = IhtSolver::new(a, b, Some(gamma))?;
    let mut data = solver.prepare(y)?;
    solver.run(&mut data, cfg, None)
}

/// Fully nonlinear IHT, `Ã_n = A (I − V_n Γ)^{-1}`.
pub fn tmatrix_iht<G: Coupling + ?Sized>(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    gamma: &G,
    y: &ComplexMatrix,
    cfg: &IhtConfig,
) -> Result<ReconstructionTrace> {
    let cfg = IhtConfig {
        born_order: BornOrder::Infinite,
        ..cfg.clone()
    };
    let mut solver = IhtSolver::new(a, b, Some(gamma))?;
    let mut data = solver.prepare(y)?;
    solver.run(&mut data, &cfg, None)
}

/// Relative Frobenius misfit of `v` under the full forward model. Zero data
/// gives 0.
pub fn y_err<G: Coupling + ?Sized>(
    y: &ComplexMatrix,
    v: &SparseDiagonal,
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    gamma: &G,
) -> Result<f64> {
    let norm = y.frobenius_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let model = crate::forward::forward_full(a, v, gamma, b)?;
    Ok(y.sub(&model)?.frobenius_norm() / norm)
}

/// Dense reference for one linear update: `D(V + A^*(Y − A V B) B^*)`.
pub fn matrix_form_update(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    y: &ComplexMatrix,
    v: &[C64],
) -> Result<Vec<C64>> {
    let vm = ComplexMatrix::from_diagonal(v);
    let residual = y.sub(&a.matmul(&vm)?.matmul(b)?)?;
    let mut x = a.adjoint_matmul(&residual)?.matmul_adjoint(b)?;
    x.add_assign(&vm)?;
    diag_extract(&x)
}

/// Dense reference for one nonlinear update in normalized units, forming
/// `Ã_n = Â D_a P_n D_a^{-1}` with `P_n` the `N × N` Born propagator.
pub fn literal_nonlinear_update<G: Coupling + ?Sized>(
    ops: &NormalizedOperators,
    gamma: &G,
    y: &ComplexMatrix,
    v_hat: &SparseDiagonal,
    order: BornOrder,
) -> Result<Vec<C64>> {
    let v = ops.to_physical(v_hat);
    let p = born_propagator(&v, gamma, order)?;
    let a = &ops.a_norms;
    let p_tilde = ComplexMatrix::from_fn(p.rows(), p.cols(), |i, j| p[(i, j)] * a[i] / a[j]);
    let a_tilde = ops.a_hat.matmul(&p_tilde)?;
    let vm = v_hat.to_matrix();
    let residual = y.sub(&a_tilde.matmul(&vm)?.matmul(&ops.b_hat)?)?;
    let mut x = a_tilde.adjoint_matmul(&residual)?.matmul_adjoint(&ops.b_hat)?;
    x.add_assign(&vm)?;
    diag_extract(&x)
}

/// `A_S · block · B_S` in physical units; exposed for diagnostics.
pub fn support_model(
    a: &ComplexMatrix,
    support: &[usize],
    block: &ComplexMatrix,
    b: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    sandwich(a, support, block, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_operators, forward_full, forward_model, PotentialField};
    use crate::geometry::{sphere_directions, Coverage, VoxelGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(r, cols, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn diag_extract_cases() {
        assert_eq!(diag_extract(&ComplexMatrix::identity(3)).unwrap(), vec![ONE; 3]);
        assert!(diag_extract(&ComplexMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn hadamard_identity_for_diagonal_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 3, 3);
        let b = random_matrix(&mut rng, 3, 3);
        let x: Vec<C64> = (0..3).map(|_| c(rng.gen(), rng.gen())).collect();
        let lhs = diag_extract(&a.matmul(&ComplexMatrix::from_diagonal(&x)).unwrap().matmul(&b).unwrap())
            .unwrap();
        for i in 0..3 {
            let rhs: C64 = (0..3).map(|j| a[(i, j)] * b[(j, i)] * x[j]).sum();
            assert!((lhs[i] - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn hard_threshold_examples() {
        let v = [c(3.0, 0.0), c(-1.0, 0.0), c(0.0, 2.0), ZERO];
        assert_eq!(hard_threshold(&v, 2), vec![c(3.0, 0.0), ZERO, c(0.0, 2.0), ZERO]);
        let tie = [ONE, -ONE, ONE];
        assert_eq!(hard_threshold(&tie, 2), vec![ONE, -ONE, ZERO]);
        assert_eq!(hard_threshold(&v, 10), v.to_vec());
        assert_eq!(hard_threshold(&v, 0), vec![ZERO; 4]);
    }

    #[test]
    fn column_normalize_plane_waves_is_uniform() {
        let grid = VoxelGrid::new(1.0, 3).unwrap();
        let d = sphere_directions(7, Coverage::FullSphere).unwrap();
        let s = sphere_directions(5, Coverage::Hemisphere).unwrap();
        let ops = assemble_operators(&grid, &d, &s).unwrap();
        let n = column_normalize(&ops.a, &ops.b).unwrap();
        for j in 0..grid.len() {
            assert!((n.a_norms[j] - 7f64.sqrt()).abs() < 1e-12);
            assert!((n.scales[j] - 35f64.sqrt()).abs() < 1e-12);
        }
        let g = n.a_hat.adjoint_matmul(&n.a_hat).unwrap();
        assert!(g.diagonal().iter().all(|x| (x.re - 1.0).abs() < 1e-14));

        let mut zero = ops.a.clone();
        for i in 0..zero.rows() {
            zero[(i, 4)] = ZERO;
        }
        let err = column_normalize(&zero, &ops.b).unwrap_err();
        assert_eq!(err, ScatterError::invalid("column 4 of A is zero"));
    }

    #[test]
    fn orthonormal_operators_recover_in_one_step() {
        let n = 4;
        let a = ComplexMatrix::identity(n);
        let b = ComplexMatrix::identity(n);
        let v = SparseDiagonal::new(n, vec![1, 3], vec![c(2.0, 1.0), c(-0.5, 0.0)]).unwrap();
        let y = a.matmul(&v.to_matrix()).unwrap().matmul(&b).unwrap();
        let cfg = IhtConfig::new(2, BornOrder::Finite(1)).with_max_iter(3);
        let trace = linear_iht(&a, &b, &y, &cfg).unwrap();
        assert_eq!(trace.records[1].v, v);
        assert!(trace.records[1].y_err < 1e-15);
        assert!(trace.converged);
    }

    #[test]
    fn zero_data_stays_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 5, 6);
        let b = random_matrix(&mut rng, 6, 4);
        let cfg = IhtConfig::new(2, BornOrder::Finite(1)).with_max_iter(5);
        let trace = linear_iht(&a, &b, &ComplexMatrix::zeros(5, 4), &cfg).unwrap();
        for r in &trace.records {
            assert!(r.v.is_zero());
            assert_eq!(r.y_err, 0.0);
        }
    }

    #[test]
    fn engine_matches_dense_reference() {
        let grid = VoxelGrid::new(1.2, 3).unwrap();
        let d = sphere_directions(9, Coverage::FullSphere).unwrap();
        let s = sphere_directions(6, Coverage::FullSphere).unwrap();
        let ops = assemble_operators(&grid, &d, &s).unwrap();
        let pot = PotentialField::new(&grid, vec![2, 13, 20], vec![c(0.3, 0.05), c(0.5, 0.0), c(0.2, -0.1)])
            .unwrap();
        let v = pot.strengths(&grid).unwrap();
        let y = forward_full(&ops.a, &v, &ops.gamma, &ops.b).unwrap();
        let mut solver = IhtSolver::new(&ops.a, &ops.b, Some(&ops.gamma)).unwrap();
        let mut data = solver.prepare(&y).unwrap();
        let iterate = solver.operators().to_normalized(
            &SparseDiagonal::new(27, vec![2, 5, 13], vec![c(0.2, 0.0), c(0.1, 0.1), c(0.4, 0.0)]).unwrap(),
        );
        for order in [BornOrder::Finite(1), BornOrder::Finite(2), BornOrder::Finite(4), BornOrder::Infinite] {
            let fast = solver.gradient_step(&mut data, &iterate, order).unwrap();
            let slow = literal_nonlinear_update(solver.operators(), &ops.gamma, &y, &iterate, order).unwrap();
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).norm() < 1e-12 * (1.0 + y.norm()), "{order}: {x} vs {y}");
            }
        }
        let lin = matrix_form_update(&solver.operators().a_hat, &solver.operators().b_hat, &y, &iterate.to_dense())
            .unwrap();
        let fast = solver.gradient_step(&mut data, &iterate, BornOrder::Finite(1)).unwrap();
        for (x, y) in fast.iter().zip(&lin) {
            assert!((x - y).norm() < 1e-12 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn true_potential_leaves_born_remainder() {
        let grid = VoxelGrid::new(1.0, 3).unwrap();
        let d = sphere_directions(8, Coverage::FullSphere).unwrap();
        let ops = assemble_operators(&grid, &d, &d).unwrap();
        let pot = PotentialField::new(&grid, vec![4, 22], vec![c(1.0, 0.0), c(1.5, 0.0)]).unwrap();
        let v = pot.strengths(&grid).unwrap();
        let y = forward_full(&ops.a, &v, &ops.gamma, &ops.b).unwrap();
        let mut last = f64::INFINITY;
        for m in 1..8 {
            let ym = forward_model(&ops.a, &v, &ops.gamma, &ops.b, BornOrder::Finite(m)).unwrap();
            let rem = y.sub(&ym).unwrap().frobenius_norm();
            assert!(rem < last);
            last = rem;
        }
        assert!(y_err(&y, &v, &ops.a, &ops.b, &ops.gamma).unwrap() < 1e-12);
        assert_eq!(y_err(&y, &SparseDiagonal::zeros(27), &ops.a, &ops.b, &ops.gamma).unwrap(), 1.0);
    }

    #[test]
    fn born_order_one_reduces_to_linear() {
        let grid = VoxelGrid::new(1.5, 3).unwrap();
        let d = sphere_directions(12, Coverage::FullSphere).unwrap();
        let ops = assemble_operators(&grid, &d, &d).unwrap();
        let pot = PotentialField::new(&grid, vec![0, 26], vec![c(0.4, 0.0), c(0.4, 0.0)]).unwrap();
        let v = pot.strengths(&grid).unwrap();
        let y = forward_full(&ops.a, &v, &ops.gamma, &ops.b).unwrap();
        let cfg = IhtConfig::new(2, BornOrder::Finite(1)).with_max_iter(10);
        let lin = linear_iht(&ops.a, &ops.b, &y, &cfg).unwrap();
        let nl = nonlinear_iht(&ops.a, &ops.b, &ops.gamma, &y, &cfg).unwrap();
        for (p, q) in lin.records.iter().zip(&nl.records) {
            assert_eq!(p.v, q.v);
        }
        let full = tmatrix_iht(&ops.a, &ops.b, &ops.gamma, &y, &cfg).unwrap();
        assert_eq!(full.records[1].v, lin.records[1].v);
    }

    #[test]
    fn single_scatterer_full_equals_second_born() {
        let grid = VoxelGrid::new(1.5, 3).unwrap();
        let d = sphere_directions(12, Coverage::FullSphere).unwrap();
        let ops = assemble_operators(&grid, &d, &d).unwrap();
        let pot = PotentialField::new(&grid, vec![13], vec![c(0.6, 0.0)]).unwrap();
        let v = pot.strengths(&grid).unwrap();
        let y = forward_full(&ops.a, &v, &ops.gamma, &ops.b).unwrap();
        let cfg = IhtConfig::new(1, BornOrder::Finite(2)).with_max_iter(8);
        let two = nonlinear_iht(&ops.a, &ops.b, &ops.gamma, &y, &cfg).unwrap();
        let full = tmatrix_iht(&ops.a, &ops.b, &ops.gamma, &y, &cfg).unwrap();
        for (p, q) in two.records.iter().zip(&full.records) {
            assert_eq!(p.v.support(), q.v.support());
            assert!(p.v.l1_distance(&q.v) < 1e-12);
        }
    }

    #[test]
    fn tolerance_stops_early_and_config_is_validated() {
        let a = ComplexMatrix::identity(3);
        let y = ComplexMatrix::from_diagonal(&[ONE, ZERO, ZERO]);
        let mut cfg = IhtConfig::new(1, BornOrder::Finite(1));
        cfg.tol = Some(0.0);
        let t = linear_iht(&a, &a, &y, &cfg).unwrap();
        assert!(t.iterations < 100);
        assert!(linear_iht(&a, &a, &y, &IhtConfig::new(0, BornOrder::Finite(1))).is_err());
        let mut bad = IhtConfig::new(1, BornOrder::Finite(1));
        bad.max_iter = 0;
        assert!(linear_iht(&a, &a, &y, &bad).is_err());
        let g = ComplexMatrix::zeros(3, 3);
        assert!(nonlinear_iht(&a, &a, &g, &y, &IhtConfig::new(1, BornOrder::Infinite)).is_err());
    }
}
