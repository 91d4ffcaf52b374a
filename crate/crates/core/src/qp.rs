//! Convex QP solver with a dense Hessian and sparse constraint rows.
//!
//! Equalities are eliminated by Gauss-Jordan reduction with pivoting, which
//! leaves a strictly convex problem in the free variables only. That problem
//! is solved with the Goldfarb-Idnani dual active-set method, starting from
//! the unconstrained minimizer and adding the most violated constraint first
//! (lowest index on ties). The reduced Hessian is factored within its
//! envelope, so a diagonal trailing block adds only linear cost.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::QpError;

/// Default optimality threshold on [`kkt_residual`].
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

const REGULARIZATION: f64 = 1e-10;
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Row-wise sparse matrix; each row lists its nonzero `(column, value)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, rows: Vec::new() }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut rows = vec![Vec::new(); m.nrows()];
        if m.nrows() > 0 {
            for (c, col) in m.as_slice().chunks_exact(m.nrows()).enumerate() {
                for (r, &v) in col.iter().enumerate() {
                    if v != 0.0 {
                        rows[r].push((c, v));
                    }
                }
            }
        }
        Self { ncols: m.ncols(), rows }
    }

    /// Appends a row from `(column, value)` pairs in any order; zeros are dropped
    /// and repeated columns are summed.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<(), QpError> {
        let mut row: Vec<(usize, f64)> = entries.into_iter().collect();
        if let Some(&(c, _)) = row.iter().find(|e| e.0 >= self.ncols) {
            return Err(QpError::Dimension(format!("column {c} outside {} columns", self.ncols)));
        }
        row.sort_by_key(|e| e.0);
        row.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        row.retain(|e| e.1 != 0.0);
        self.rows.push(row);
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn mul(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.nrows(), self.rows.iter().map(|r| r.iter().map(|&(c, v)| v * z[c]).sum()))
    }

    /// `Mᵀ y`.
    pub fn tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                out[c] += v * y[r];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] = v;
            }
        }
        m
    }
}

/// `min ½ zᵀHz + gᵀz  s.t.  A_eq z = b_eq,  C_in z ≤ d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: SparseRows,
    pub b_eq: DVector<f64>,
    pub c_in: SparseRows,
    pub d_in: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        c_in: DMatrix<f64>,
        d_in: DVector<f64>,
    ) -> Result<Self, QpError> {
        Self::from_sparse(h, g, SparseRows::from_dense(&a_eq), b_eq, SparseRows::from_dense(&c_in), d_in)
    }

    pub fn from_sparse(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_eq: SparseRows,
        b_eq: DVector<f64>,
        c_in: SparseRows,
        d_in: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(QpError::Dimension(format!("hessian is {}x{}, expected {n}x{n}", h.nrows(), h.ncols())));
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(QpError::Dimension("equality system".into()));
        }
        if c_in.ncols() != n || c_in.nrows() != d_in.len() {
            return Err(QpError::Dimension("inequality system".into()));
        }
        let hs = h.as_slice();
        let scale = hs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                if (hs[j * n + i] - hs[i * n + j]).abs() > 1e-12 * scale {
                    return Err(QpError::Dimension("hessian is not symmetric".into()));
                }
            }
        }
        Ok(Self { h, g, a_eq, b_eq, c_in, d_in })
    }

    /// Problem without equality or inequality rows.
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self, QpError> {
        let n = g.len();
        Self::new(h, g, DMatrix::zeros(0, n), DVector::zeros(0), DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub mu_eq: DVector<f64>,
    pub mu_in: DVector<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Components of the scaled KKT residual.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktComponents {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

impl KktComponents {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual_sign)
    }
}

/// Relative KKT violations of `sol` for `qp`.
///
/// Every term is divided by one plus the magnitude of the quantities it
/// combines, so the measure is insensitive to the overall scaling of a row:
///
/// * stationarity `‖Hz + g + A_eqᵀμ_eq + C_inᵀμ_in‖∞ / (1 + max of the four terms' ∞-norms)`;
/// * primal feasibility `|a_iᵀz − b_i| / (1 + |b_i| + Σ|a_ij z_j|)` and the positive part
///   of the analogous inequality ratio;
/// * complementarity `|μ_j (c_jᵀz − d_j)| / (1 + μ_j (|d_j| + Σ|c_jk z_k|))`;
/// * dual sign `max(−μ_j, 0)`.
pub fn kkt_components(qp: &QuadraticProgram, sol: &QpSolution) -> KktComponents {
    let z = &sol.z;
    let n = z.len();
    let hz = &qp.h * z;
    let mut at = DVector::zeros(n);
    let mut ct = DVector::zeros(n);
    let mut primal: f64 = 0.0;
    for (i, row) in qp.a_eq.iter().enumerate() {
        let (mut v, mut s) = (-qp.b_eq[i], 1.0 + qp.b_eq[i].abs());
        for &(c, a) in row {
            v += a * z[c];
            s += (a * z[c]).abs();
            at[c] += a * sol.mu_eq[i];
        }
        primal = primal.max(v.abs() / s);
    }
    let mut complementarity: f64 = 0.0;
    let mut dual_sign: f64 = 0.0;
    for (j, row) in qp.c_in.iter().enumerate() {
        let mu = sol.mu_in[j];
        let (mut v, mut s) = (-qp.d_in[j], qp.d_in[j].abs());
        for &(c, a) in row {
            v += a * z[c];
            s += (a * z[c]).abs();
            ct[c] += a * mu;
        }
        primal = primal.max(v.max(0.0) / (1.0 + s));
        complementarity = complementarity.max((mu * v).abs() / (1.0 + mu.abs() * s));
        dual_sign = dual_sign.max(-mu);
    }
    let r = &hz + &qp.g + &at + &ct;
    let mag = 1.0 + hz.amax().max(qp.g.amax()).max(at.amax()).max(ct.amax());
    KktComponents { stationarity: r.amax() / mag, primal, complementarity, dual_sign }
}

/// Largest component of [`kkt_components`].
pub fn kkt_residual(qp: &QuadraticProgram, sol: &QpSolution) -> f64 {
    kkt_components(qp, sol).max()
}

/// `z = z0 + Z y`, where basis variables are expressed through free ones.
struct Reduction {
    /// Original indices of eliminated variables, one per independent equality row.
    basis: Vec<usize>,
    /// Original indices of free variables.
    free: Vec<usize>,
    /// Independent equality rows, aligned with `basis`.
    rows: Vec<usize>,
    /// `z_basis = beta − N y`.
    n_mat: DMatrix<f64>,
    beta: DVector<f64>,
    /// Position of each original variable: `Ok(basis index)` or `Err(free index)`.
    slot: Vec<Result<usize, usize>>,
}

impl Reduction {
    /// Gauss-Jordan reduction of `A z = b`; `None` if the system is inconsistent.
    fn new(a: &SparseRows, b: &DVector<f64>) -> Option<Self> {
        let (m, n) = (a.nrows(), a.ncols());
        // dense row-major working copy with the right-hand side in the last column
        let mut w: Vec<Vec<f64>> = a
            .iter()
            .zip(b.iter())
            .map(|(row, &bi)| {
                let mut r = vec![0.0; n + 1];
                for &(c, v) in row {
                    r[c] = v;
                }
                r[n] = bi;
                r
            })
            .collect();
        let mut pivot_of_row: Vec<Option<usize>> = vec![None; m];
        let mut is_pivot = vec![false; n];
        for i in 0..m {
            let scale = w[i][..n].iter().fold(0.0f64, |s, v| s.max(v.abs()));
            let mut best = None;
            let mut best_val = 0.0;
            for (c, &v) in w[i][..n].iter().enumerate() {
                if !is_pivot[c] && v.abs() > best_val {
                    best_val = v.abs();
                    best = Some(c);
                }
            }
            let Some(pc) = best.filter(|_| best_val > PIVOT_TOLERANCE * scale.max(1.0) && best_val > 0.0) else {
                if w[i][n].abs() > 1e-9 * (1.0 + b[i].abs()) {
                    return None;
                }
                continue;
            };
            let inv = 1.0 / w[i][pc];
            for v in w[i].iter_mut() {
                *v *= inv;
            }
            w[i][pc] = 1.0;
            let pivot_row = std::mem::take(&mut w[i]);
            let nz: Vec<usize> = (0..=n).filter(|&c| pivot_row[c] != 0.0 && c != pc).collect();
            for (r, row) in w.iter_mut().enumerate() {
                if r == i || row.is_empty() {
                    continue;
                }
                let f = row[pc];
                if f == 0.0 {
                    continue;
                }
                for &c in &nz {
                    row[c] -= f * pivot_row[c];
                }
                row[pc] = 0.0;
            }
            w[i] = pivot_row;
            pivot_of_row[i] = Some(pc);
            is_pivot[pc] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let mut basis = Vec::new();
        let mut rows = Vec::new();
        for (i, p) in pivot_of_row.iter().enumerate() {
            if let Some(c) = p {
                basis.push(*c);
                rows.push(i);
            }
        }
        let mut slot = vec![Err(0); n];
        for (f, &c) in free.iter().enumerate() {
            slot[c] = Err(f);
        }
        for (r, &c) in basis.iter().enumerate() {
            slot[c] = Ok(r);
        }
        let n_mat = DMatrix::from_fn(basis.len(), free.len(), |r, f| w[rows[r]][free[f]]);
        let beta = DVector::from_iterator(basis.len(), rows.iter().map(|&i| w[i][n]));
        Some(Self { basis, free, rows, n_mat, beta, slot })
    }

    fn expand(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.basis.len() + self.free.len();
        let mut z = DVector::zeros(n);
        let zb = &self.beta - &self.n_mat * y;
        for (r, &c) in self.basis.iter().enumerate() {
            z[c] = zb[r];
        }
        for (f, &c) in self.free.iter().enumerate() {
            z[c] = y[f];
        }
        z
    }

    /// Column `c` of `Zᵀ` as a sparse vector over the free variables.
    fn sparse_columns(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.basis.len() + self.free.len();
        (0..n)
            .map(|c| match self.slot[c] {
                Err(f) => vec![(f, 1.0)],
                Ok(r) => (0..self.free.len())
                    .filter_map(|f| {
                        let v = self.n_mat[(r, f)];
                        (v != 0.0).then_some((f, -v))
                    })
                    .collect(),
            })
            .collect()
    }

}

/// Goldfarb-Idnani working state for `min ½yᵀGy + g0ᵀy  s.t.  nᵀ_j y + b_j ≥ 0`.
struct DualActiveSet {
    n: usize,
    /// `L⁻ᵀ Q`, columns `0..q` span the active normals.
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    active: Vec<usize>,
    u: Vec<f64>,
}

impl DualActiveSet {
    fn q(&self) -> usize {
        self.active.len()
    }

    fn add(&mut self, d: &mut [f64]) -> bool {
        let n = self.n;
        let q = self.q();
        for jj in (q + 1..n).rev() {
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            let (left, right) = self.j.as_mut_slice().split_at_mut(jj * n);
            let c0 = &mut left[(jj - 1) * n..];
            let c1 = &mut right[..n];
            for k in 0..n {
                let t1 = c0[k];
                let t2 = c1[k];
                c0[k] = t1 * cc + t2 * ss;
                c1[k] = xny * (t1 + c0[k]) - t2;
            }
        }
        for k in 0..=q {
            self.r[(k, q)] = d[k];
        }
        if d[q].abs() <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[q].abs());
        true
    }

    fn drop(&mut self, l: usize) {
        let n = self.n;
        let q = self.q();
        for c in l..q - 1 {
            for k in 0..q {
                self.r[(k, c)] = self.r[(k, c + 1)];
            }
        }
        for k in 0..q {
            self.r[(k, q - 1)] = 0.0;
        }
        self.active.remove(l);
        self.u.remove(l);
        let q = q - 1;
        for jj in l..q {
            let (mut cc, mut ss) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in jj + 1..q {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = t1 * cc + t2 * ss;
                self.r[(jj + 1, k)] = xny * (t1 + self.r[(jj, k)]) - t2;
            }
            let (left, right) = self.j.as_mut_slice().split_at_mut((jj + 1) * n);
            let c0 = &mut left[jj * n..];
            let c1 = &mut right[..n];
            for k in 0..n {
                let t1 = c0[k];
                let t2 = c1[k];
                c0[k] = t1 * cc + t2 * ss;
                c1[k] = xny * (c0[k] + t1) - t2;
            }
        }
    }
}

/// Lower Cholesky factor of a symmetric `g`, stored row-major, computed within
/// the envelope of `g`: row `i` of `L` starts at the first nonzero of row `i`
/// of `g`. Each diagonal pivot is raised by `shift·(1 + |g_ii|)`.
struct EnvelopeCholesky {
    n: usize,
    l: Vec<f64>,
    first: Vec<usize>,
}

impl EnvelopeCholesky {
    fn new(g: &DMatrix<f64>, shift: f64) -> Option<Self> {
        let n = g.nrows();
        let gs = g.as_slice();
        let first: Vec<usize> = (0..n).map(|i| (0..i).find(|&j| gs[j * n + i] != 0.0).unwrap_or(i)).collect();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in first[i]..=i {
                let lo = first[i].max(first[j]);
                let dot: f64 = (lo..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
                let s = gs[j * n + i] - dot;
                if j == i {
                    let d = s + shift * (1.0 + gs[i * n + i].abs());
                    if !(d > 0.0) {
                        return None;
                    }
                    l[i * n + i] = d.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, l, first })
    }

    /// `L⁻ᵀ`, skipping the structural zeros of `L`.
    fn inverse_transpose(&self) -> DMatrix<f64> {
        let (n, rows) = (self.n, &self.l);
        let mut j = DMatrix::zeros(n, n);
        let out = j.as_mut_slice();
        let mut x = vec![0.0; n];
        for c in 0..n {
            x[c] = 1.0 / rows[c * n + c];
            out[c * n + c] = x[c];
            for i in c + 1..n {
                let lo = c.max(self.first[i]);
                let s: f64 = (lo..i).map(|k| rows[i * n + k] * x[k]).sum();
                x[i] = -s / rows[i * n + i];
                out[i * n + c] = x[i];
            }
        }
        j
    }
}

enum DualOutcome {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Inequalities in `≥` form: column `j` of `normals` is `n_j`, constraint `n_jᵀy + b_j ≥ 0`.
fn solve_dual(
    g: &DMatrix<f64>,
    g0: &DVector<f64>,
    normals: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &mut DVector<f64>,
    mult: &mut DVector<f64>,
    iterations: &mut usize,
) -> Result<DualOutcome, QpError> {
    let n = g0.len();
    let m = b.len();
    let chol = EnvelopeCholesky::new(g, 0.0)
        .or_else(|| EnvelopeCholesky::new(g, REGULARIZATION))
        .ok_or(QpError::NotConvex)?;
    let j0 = chol.inverse_transpose();
    *y = -(&j0 * j0.tr_mul(g0));
    let mut st = DualActiveSet {
        n,
        j: j0,
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
        active: Vec::new(),
        u: Vec::new(),
    };
    let norm_scale: Vec<f64> = if n == 0 {
        vec![0.0; m]
    } else {
        normals.as_slice().chunks_exact(n).map(|c| c.iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect()
    };
    let max_iter = 10 * (n + m) + 100;
    let mut dvec = vec![0.0; n];
    let mut z = DVector::zeros(n);
    let mut is_active = vec![false; m];
    let slack = |y: &DVector<f64>, j: usize| normals.column(j).dot(y) + b[j];
    let tol = |y_max: f64, j: usize| 1e-12 * (1.0 + b[j].abs() + norm_scale[j] * y_max);

    loop {
        // most violated, lowest index on ties
        let mut p = None;
        let mut worst = 0.0;
        let y_max = y.amax();
        for jc in 0..m {
            if is_active[jc] {
                continue;
            }
            let s = slack(y, jc);
            if s < -tol(y_max, jc) && s < worst {
                worst = s;
                p = Some(jc);
            }
        }
        let Some(p) = p else {
            break;
        };
        let np = normals.column(p);
        let mut u_plus = 0.0;
        loop {
            *iterations += 1;
            if *iterations > max_iter {
                finish_multipliers(&st, mult);
                return Ok(DualOutcome::IterationLimit);
            }
            let q = st.q();
            for (k, dk) in dvec.iter_mut().enumerate() {
                *dk = st.j.column(k).dot(&np);
            }
            z.fill(0.0);
            for k in q..n {
                z.axpy(dvec[k], &st.j.column(k), 1.0);
            }
            // r = R⁻¹ d[0..q]
            let mut rr = vec![0.0; q];
            for i in (0..q).rev() {
                let mut s = dvec[i];
                for k in i + 1..q {
                    s -= st.r[(i, k)] * rr[k];
                }
                rr[i] = s / st.r[(i, i)];
            }
            let mut t1 = f64::INFINITY;
            let mut l = None;
            for k in 0..q {
                if rr[k] > 0.0 {
                    let t = st.u[k] / rr[k];
                    if t < t1 {
                        t1 = t;
                        l = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.amax() > f64::EPSILON * (1.0 + np.amax()) && zn > 0.0 {
                -slack(y, p) / zn
            } else {
                f64::INFINITY
            };
            if t1.is_infinite() && t2.is_infinite() {
                finish_multipliers(&st, mult);
                return Ok(DualOutcome::Infeasible);
            }
            if t2.is_infinite() {
                for k in 0..q {
                    st.u[k] -= t1 * rr[k];
                }
                u_plus += t1;
                let l = l.expect("partial step has a blocking constraint");
                is_active[st.active[l]] = false;
                st.drop(l);
                continue;
            }
            let t = t1.min(t2);
            y.axpy(t, &z, 1.0);
            for k in 0..q {
                st.u[k] -= t * rr[k];
            }
            u_plus += t;
            if t2 <= t1 {
                if !st.add(&mut dvec) {
                    finish_multipliers(&st, mult);
                    return Ok(DualOutcome::Infeasible);
                }
                st.active.push(p);
                st.u.push(u_plus);
                is_active[p] = true;
                break;
            }
            let l = l.expect("partial step has a blocking constraint");
            is_active[st.active[l]] = false;
            st.drop(l);
        }
    }
    finish_multipliers(&st, mult);
    Ok(DualOutcome::Optimal)
}

fn finish_multipliers(st: &DualActiveSet, mult: &mut DVector<f64>) {
    mult.fill(0.0);
    for (k, &a) in st.active.iter().enumerate() {
        mult[a] = st.u[k].max(0.0);
    }
}

/// Solves `qp`; see the module documentation for the method.
pub fn solve_qp(qp: &QuadraticProgram) -> Result<QpSolution, QpError> {
    solve_qp_with_tolerance(qp, DEFAULT_TOLERANCE)
}

/// As [`solve_qp`], declaring optimality only when [`kkt_residual`] `≤ tolerance`.
pub fn solve_qp_with_tolerance(qp: &QuadraticProgram, tolerance: f64) -> Result<QpSolution, QpError> {
    let n = qp.num_vars();
    let m_in = qp.d_in.len();
    let Some(red) = Reduction::new(&qp.a_eq, &qp.b_eq) else {
        return Ok(QpSolution {
            z: DVector::zeros(n),
            mu_eq: DVector::zeros(qp.b_eq.len()),
            mu_in: DVector::zeros(m_in),
            status: QpStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            iterations: 0,
            objective: f64::NAN,
        });
    };
    let nf = red.free.len();
    let mut z0 = DVector::zeros(n);
    for (r, &c) in red.basis.iter().enumerate() {
        z0[c] = red.beta[r];
    }

    // ZᵀHZ and Zᵀ(Hz0 + g) accumulated from the nonzeros of H
    let zt = red.sparse_columns();
    let mut h_red = DMatrix::zeros(nf, nf);
    let mut g_full = qp.g.clone();
    for (c2, h_col) in qp.h.as_slice().chunks_exact(n.max(1)).enumerate() {
        for (c1, &v) in h_col.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            g_full[c1] += v * z0[c2];
            for &(f2, b) in &zt[c2] {
                let col = &mut h_red.as_mut_slice()[f2 * nf..(f2 + 1) * nf];
                for &(f1, a) in &zt[c1] {
                    col[f1] += v * a * b;
                }
            }
        }
    }
    let h_red = (&h_red + h_red.transpose()) * 0.5;
    let mut g_red = DVector::zeros(nf);
    for (c, col) in zt.iter().enumerate() {
        for &(f, a) in col {
            g_red[f] += a * g_full[c];
        }
    }

    let mut normals = DMatrix::zeros(nf, m_in);
    let mut b = DVector::zeros(m_in);
    for (j, row) in qp.c_in.iter().enumerate() {
        let col = &mut normals.as_mut_slice()[j * nf..(j + 1) * nf];
        let mut off = 0.0;
        for &(c, v) in row {
            off += v * z0[c];
            for &(f, a) in &zt[c] {
                col[f] -= v * a;
            }
        }
        b[j] = qp.d_in[j] - off;
    }

    let mut y = DVector::zeros(nf);
    let mut mu_in = DVector::zeros(m_in);
    let mut iterations = 0;
    let outcome = solve_dual(&h_red, &g_red, &normals, &b, &mut y, &mut mu_in, &mut iterations)?;
    let z = red.expand(&y);

    // equality multipliers from the basis columns of the full stationarity system
    let resid = &qp.h * &z + &qp.g + qp.c_in.tr_mul(&mu_in);
    let mut mu_eq = DVector::zeros(qp.b_eq.len());
    if !red.basis.is_empty() {
        let k = red.basis.len();
        let mut ab_t = DMatrix::zeros(k, k);
        for (c, &row) in red.rows.iter().enumerate() {
            for &(col, v) in qp.a_eq.row(row) {
                if let Ok(r) = red.slot[col] {
                    ab_t[(r, c)] = v;
                }
            }
        }
        let rhs = DVector::from_iterator(k, red.basis.iter().map(|&c| -resid[c]));
        let sol = ab_t.lu().solve(&rhs).ok_or(QpError::NotConvex)?;
        for (c, &row) in red.rows.iter().enumerate() {
            mu_eq[row] = sol[c];
        }
    }

    let objective = qp.objective(&z);
    let mut out = QpSolution {
        z,
        mu_eq,
        mu_in,
        status: QpStatus::Optimal,
        kkt_residual: 0.0,
        iterations,
        objective,
    };
    out.kkt_residual = kkt_residual(qp, &out);
    out.status = match outcome {
        DualOutcome::Optimal if out.kkt_residual <= tolerance => QpStatus::Optimal,
        DualOutcome::Optimal => QpStatus::IterationLimit,
        DualOutcome::Infeasible => QpStatus::Infeasible,
        DualOutcome::IterationLimit => QpStatus::IterationLimit,
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(h: f64, g: f64) -> QuadraticProgram {
        QuadraticProgram::unconstrained(DMatrix::from_element(1, 1, h), DVector::from_element(1, g)).unwrap()
    }

    #[test]
    fn unconstrained_scalar() {
        let sol = solve_qp(&scalar(1.0, -1.0)).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-14);
        assert!(sol.mu_in.is_empty() && sol.mu_eq.is_empty());
    }

    #[test]
    fn lower_bound_scalar() {
        let mut qp = scalar(1.0, 0.0);
        qp.c_in = SparseRows::from_dense(&DMatrix::from_element(1, 1, -1.0));
        qp.d_in = DVector::from_element(1, -1.0);
        let sol = solve_qp(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.mu_in[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn infeasible_inequalities() {
        let mut qp = scalar(1.0, 0.0);
        qp.c_in = SparseRows::from_dense(&DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
        qp.d_in = DVector::from_row_slice(&[-1.0, -1.0]);
        assert_eq!(solve_qp(&qp).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities() {
        let h = DMatrix::identity(2, 2);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let qp = QuadraticProgram::new(
            h,
            DVector::zeros(2),
            a,
            DVector::from_row_slice(&[1.0, 3.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        assert_eq!(solve_qp(&qp).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn dependent_equalities_are_tolerated() {
        let h = DMatrix::identity(3, 3);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let qp = QuadraticProgram::new(
            h,
            DVector::zeros(3),
            a,
            DVector::from_row_slice(&[2.0, 4.0]),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp(&qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.z[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let r = QuadraticProgram::unconstrained(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(matches!(r, Err(QpError::Dimension(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticProgram::unconstrained(asym, DVector::zeros(2)).is_err());
    }

    #[test]
    fn sparse_rows_match_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dense = DMatrix::from_fn(4, 6, |_, _| if rng.gen_bool(0.5) { rng.gen_range(-1.0..1.0) } else { 0.0 });
        let sparse = SparseRows::from_dense(&dense);
        assert_eq!(sparse.to_dense(), dense);
        let z = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let y = DVector::from_fn(4, |i, _| 1.0 + i as f64);
        assert_abs_diff_eq!(sparse.mul(&z), &dense * &z, epsilon = 1e-14);
        assert_abs_diff_eq!(sparse.tr_mul(&y), dense.tr_mul(&y), epsilon = 1e-14);

        let mut built = SparseRows::new(3);
        built.push_row([(2, 1.0), (0, 2.0), (2, 0.5), (1, 0.0)]).unwrap();
        assert_eq!(built.row(0), &[(0, 2.0), (2, 1.5)]);
        assert!(built.push_row([(3, 1.0)]).is_err());
    }

    #[test]
    fn envelope_cholesky_factors_block_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let mut g = DMatrix::zeros(8, 8);
        g.view_mut((0, 0), (5, 5)).copy_from(&(m.tr_mul(&m) + DMatrix::identity(5, 5)));
        for i in 5..8 {
            g[(i, i)] = 2.0 + i as f64;
        }
        let chol = EnvelopeCholesky::new(&g, 0.0).unwrap();
        assert_eq!(&chol.first[5..], &[5, 6, 7]);
        let l = DMatrix::from_row_slice(8, 8, &chol.l);
        assert_abs_diff_eq!(&l * l.transpose(), g, epsilon = 1e-12);
        let j = chol.inverse_transpose();
        assert_abs_diff_eq!(&j * j.transpose() * &g, DMatrix::identity(8, 8), epsilon = 1e-10);
        assert!(EnvelopeCholesky::new(&(-g), 0.0).is_none());
    }

    /// Random strictly convex QP with a feasible point built in.
    pub(crate) fn random_qp(rng: &mut ChaCha8Rng, n: usize, m_eq: usize, m_in: usize) -> QuadraticProgram {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = m.tr_mul(&m) + DMatrix::identity(n, n) * 0.1;
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let x_feas = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a = DMatrix::from_fn(m_eq, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * &x_feas;
        let c = DMatrix::from_fn(m_in, n, |_, _| rng.gen_range(-1.0..1.0));
        let d = &c * &x_feas + DVector::from_fn(m_in, |_, _| rng.gen_range(0.0..0.5));
        QuadraticProgram::new(h, g, a, b, c, d).unwrap()
    }

    /// Enumerates every subset of inequalities as active, solves the resulting
    /// equality-constrained KKT system and keeps the feasible one with
    /// nonnegative multipliers and the smallest objective.
    pub(crate) fn enumerate_active_sets(qp: &QuadraticProgram) -> Option<(DVector<f64>, f64)> {
        let n = qp.num_vars();
        let m_eq = qp.b_eq.len();
        let m_in = qp.d_in.len();
        let (a_eq, c_in) = (qp.a_eq.to_dense(), qp.c_in.to_dense());
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << m_in) {
            let act: Vec<usize> = (0..m_in).filter(|j| mask & (1 << j) != 0).collect();
            let k = m_eq + act.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
            for i in 0..n {
                rhs[i] = -qp.g[i];
            }
            for r in 0..m_eq {
                for c in 0..n {
                    kkt[(n + r, c)] = a_eq[(r, c)];
                    kkt[(c, n + r)] = a_eq[(r, c)];
                }
                rhs[n + r] = qp.b_eq[r];
            }
            for (t, &j) in act.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + m_eq + t, c)] = c_in[(j, c)];
                    kkt[(c, n + m_eq + t)] = c_in[(j, c)];
                }
                rhs[n + m_eq + t] = qp.d_in[j];
            }
            let svd = kkt.clone().svd(true, true);
            if svd.singular_values.min() < 1e-10 * svd.singular_values.max() {
                continue;
            }
            let Ok(sol) = svd.solve(&rhs, 1e-14) else { continue };
            let z = sol.rows(0, n).into_owned();
            let mus = sol.rows(n + m_eq, act.len());
            if mus.iter().any(|&mu| mu < -1e-9) {
                continue;
            }
            let cz = &c_in * &z - &qp.d_in;
            if cz.iter().any(|&v| v > 1e-9) {
                continue;
            }
            let f = qp.objective(&z);
            if best.as_ref().map_or(true, |(_, bf)| f < *bf) {
                best = Some((z, f));
            }
        }
        best
    }

    #[test]
    fn matches_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..500 {
            let n = rng.gen_range(1..=10);
            let m_eq = rng.gen_range(0..=(n - 1).min(2));
            let m_in = rng.gen_range(0..=(8 - m_eq));
            let qp = random_qp(&mut rng, n, m_eq, m_in);
            let sol = solve_qp(&qp).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
            let (z_ref, f_ref) = enumerate_active_sets(&qp).expect("oracle finds a solution");
            assert!((&sol.z - &z_ref).amax() < 1e-6, "trial {trial}: {} vs {}", sol.z, z_ref);
            assert!((sol.objective - f_ref).abs() < 1e-8 * (1.0 + f_ref.abs()), "trial {trial}");
            assert!(sol.mu_in.iter().all(|&mu| mu >= 0.0));
            assert!(sol.kkt_residual <= DEFAULT_TOLERANCE);
        }
    }

    /// Unscaled residual recomputed term by term.
    fn absolute_kkt(qp: &QuadraticProgram, sol: &QpSolution) -> f64 {
        let n = qp.num_vars();
        let (a_eq, c_in) = (qp.a_eq.to_dense(), qp.c_in.to_dense());
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut s = qp.g[i];
            for j in 0..n {
                s += qp.h[(i, j)] * sol.z[j];
            }
            for r in 0..qp.b_eq.len() {
                s += a_eq[(r, i)] * sol.mu_eq[r];
            }
            for r in 0..qp.d_in.len() {
                s += c_in[(r, i)] * sol.mu_in[r];
            }
            worst = worst.max(s.abs());
        }
        for r in 0..qp.b_eq.len() {
            let v: f64 = (0..n).map(|j| a_eq[(r, j)] * sol.z[j]).sum::<f64>() - qp.b_eq[r];
            worst = worst.max(v.abs());
        }
        for r in 0..qp.d_in.len() {
            let v: f64 = (0..n).map(|j| c_in[(r, j)] * sol.z[j]).sum::<f64>() - qp.d_in[r];
            worst = worst.max(v).max((v * sol.mu_in[r]).abs()).max(-sol.mu_in[r]);
        }
        worst
    }

    #[test]
    fn residual_agrees_with_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let qp = random_qp(&mut rng, 6, 1, 4);
            let sol = solve_qp(&qp).unwrap();
            let scaled = kkt_residual(&qp, &sol);
            let abs = absolute_kkt(&qp, &sol);
            // scaled never exceeds the absolute measure, and both vanish at the optimum
            assert!(scaled <= abs + 1e-15);
            assert!(abs < 1e-9);

            let mut bad = sol.clone();
            let grad = &qp.h * &sol.z + &qp.g;
            let dir = if grad.norm() > 0.0 { grad.normalize() } else { DVector::from_element(6, 1.0) };
            bad.z += dir * 1e-2;
            assert!(kkt_residual(&qp, &bad) > DEFAULT_TOLERANCE);
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let qp = random_qp(&mut rng, 10, 2, 6);
        assert_eq!(solve_qp(&qp).unwrap(), solve_qp(&qp).unwrap());
    }
}
