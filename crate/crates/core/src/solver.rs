//! Sparse primal-dual interior point method (Mehrotra predictor-corrector) for
//!
//! ```text
//! min  ½ xᵀQx + qᵀx + c0
//! s.t. A_eq x = b_eq,  A_in x <= b_in,  lo <= x <= hi
//! ```
//!
//! Variables whose Hessian block is diagonal and which appear only in bounds
//! and equality rows are eliminated by a Schur complement, so an LP over tens
//! of thousands of convex multipliers with a handful of equality rows costs a
//! few dense factorizations of size `|dense vars| + |eq rows|` per iteration.
//!
//! No automatic scaling is applied: callers build programs in SI units where
//! coefficients stay within roughly 1e-3..1e4. Termination tests are relative
//! to the norms of the data.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

pub const MAX_ITER: usize = 500;
const TOL_FEAS: f64 = 1e-9;
const TOL_GAP: f64 = 1e-10;
// accepted when progress stalls
const LOOSE_FEAS: f64 = 1e-7;
const LOOSE_GAP: f64 = 1e-7;
const REG_PRIMAL: f64 = 1e-10;
const REG_DUAL: f64 = 1e-11;
const STEP_FRAC: f64 = 0.995;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("malformed program: {0}")]
    MalformedProgram(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ConvexProgram {
    pub n: usize,
    /// Entries of Q; an off-diagonal `(i, j, v)` contributes to both Q_ij and Q_ji.
    pub quad: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub in_rows: Vec<SparseRow>,
    pub in_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConvexProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            linear: vec![0.0; n],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            ..Default::default()
        }
    }

    pub fn add_var(&mut self, lo: f64, hi: f64, cost: f64) -> usize {
        self.n += 1;
        self.linear.push(cost);
        self.lower.push(lo);
        self.upper.push(hi);
        self.n - 1
    }

    /// Adds `v` to Q_ij (and Q_ji when i != j).
    pub fn add_quad(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.quad.push((a, b, v));
        }
    }

    pub fn add_eq(&mut self, row: SparseRow, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_le(&mut self, row: SparseRow, rhs: f64) {
        self.in_rows.push(row);
        self.in_rhs.push(rhs);
    }

    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.lower[i] = lo;
        self.upper[i] = hi;
    }

    /// Dense constructor used by tests and small callers.
    pub fn from_dense(
        q: &DMatrix<f64>,
        c: &DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: &DVector<f64>,
        a_in: &DMatrix<f64>,
        b_in: &DVector<f64>,
    ) -> Self {
        let n = c.len();
        let mut p = ConvexProgram::new(n);
        for i in 0..n {
            p.linear[i] = c[i];
            for j in i..n.min(q.ncols()) {
                if i < q.nrows() {
                    p.add_quad(i, j, q[(i, j)]);
                }
            }
        }
        let dense_row = |m: &DMatrix<f64>, r: usize| -> SparseRow {
            (0..m.ncols()).filter(|&j| m[(r, j)] != 0.0).map(|j| (j, m[(r, j)])).collect()
        };
        for r in 0..a_eq.nrows() {
            p.add_eq(dense_row(a_eq, r), b_eq[r]);
        }
        for r in 0..a_in.nrows() {
            p.add_le(dense_row(a_in, r), b_in[r]);
        }
        p
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut f = self.constant;
        for (i, xi) in x.iter().enumerate() {
            f += self.linear[i] * xi;
        }
        for &(i, j, v) in &self.quad {
            if i == j {
                f += 0.5 * v * x[i] * x[i];
            } else {
                f += v * x[i] * x[j];
            }
        }
        f
    }

    /// Largest violation of equalities, inequalities and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot_row(row, x) - b).abs());
        }
        for (row, b) in self.in_rows.iter().zip(&self.in_rhs) {
            worst = worst.max(dot_row(row, x) - b);
        }
        for i in 0..self.n {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::MalformedProgram(m));
        if self.linear.len() != self.n || self.lower.len() != self.n || self.upper.len() != self.n {
            return bad("vector lengths differ from n".into());
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.in_rows.len() != self.in_rhs.len() {
            return bad("row/rhs count mismatch".into());
        }
        for row in self.eq_rows.iter().chain(&self.in_rows) {
            for &(j, v) in row {
                if j >= self.n {
                    return bad(format!("column {j} out of range"));
                }
                if !v.is_finite() {
                    return bad("non-finite coefficient".into());
                }
            }
        }
        for &(i, j, v) in &self.quad {
            if i >= self.n || j >= self.n || !v.is_finite() {
                return bad("bad quadratic entry".into());
            }
        }
        if self.linear.iter().chain(&self.eq_rhs).chain(&self.in_rhs).any(|v| !v.is_finite()) {
            return bad("non-finite vector entry".into());
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return bad("NaN bound".into());
        }
        // PSD check on the variables touched by Q
        let mut touched: Vec<usize> = self.quad.iter().flat_map(|&(i, j, _)| [i, j]).collect();
        touched.sort_unstable();
        touched.dedup();
        if !touched.is_empty() {
            let pos = |k: usize| touched.binary_search(&k).unwrap();
            let m = touched.len();
            let mut qd = DMatrix::<f64>::zeros(m, m);
            for &(i, j, v) in &self.quad {
                let (a, b) = (pos(i), pos(j));
                qd[(a, b)] += v;
                if a != b {
                    qd[(b, a)] += v;
                }
            }
            let min_eig = SymmetricEigen::new(qd).eigenvalues.min();
            if min_eig < -1e-8 {
                return bad(format!("Q not PSD (min eigenvalue {min_eig:e})"));
            }
        }
        Ok(())
    }
}

#[inline]
fn dot_row(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * x[j]).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Standard-form data shared by the main solve and phase 1.
struct Kkt<'a> {
    p: &'a ConvexProgram,
    n: usize,
    // equality rows: program rows followed by fixed-variable rows
    a_rows: Vec<SparseRow>,
    b: Vec<f64>,
    // dense/eliminated split
    dense: Vec<usize>,
    dense_pos: Vec<usize>,
    // for eliminated vars: (eq row, coefficient) lists
    elim_cols: Vec<Vec<(usize, f64)>>,
    q_diag: Vec<f64>,
    q_full: Vec<Vec<(usize, f64)>>,
    lo_idx: Vec<usize>,
    up_idx: Vec<usize>,
}

impl<'a> Kkt<'a> {
    fn new(p: &'a ConvexProgram) -> Self {
        let n = p.n;
        let mut a_rows = p.eq_rows.clone();
        let mut b = p.eq_rhs.clone();
        let mut lo_idx = vec![];
        let mut up_idx = vec![];
        for i in 0..n {
            let (l, u) = (p.lower[i], p.upper[i]);
            if l == u {
                a_rows.push(vec![(i, 1.0)]);
                b.push(l);
                continue;
            }
            if l.is_finite() {
                lo_idx.push(i);
            }
            if u.is_finite() {
                up_idx.push(i);
            }
        }
        let mut q_diag = vec![0.0; n];
        let mut q_full: Vec<Vec<(usize, f64)>> = vec![vec![]; n];
        let mut is_dense = vec![false; n];
        for &(i, j, v) in &p.quad {
            if i == j {
                q_diag[i] += v;
                q_full[i].push((i, v));
            } else {
                q_full[i].push((j, v));
                q_full[j].push((i, v));
                is_dense[i] = true;
                is_dense[j] = true;
            }
        }
        for row in &p.in_rows {
            for &(j, _) in row {
                is_dense[j] = true;
            }
        }
        let mut has_bound = vec![false; n];
        for &i in lo_idx.iter().chain(&up_idx) {
            has_bound[i] = true;
        }
        for i in 0..n {
            if !has_bound[i] && q_diag[i] <= 0.0 {
                is_dense[i] = true;
            }
        }
        let dense: Vec<usize> = (0..n).filter(|&i| is_dense[i]).collect();
        let mut dense_pos = vec![usize::MAX; n];
        for (k, &i) in dense.iter().enumerate() {
            dense_pos[i] = k;
        }
        let mut elim_cols: Vec<Vec<(usize, f64)>> = vec![vec![]; n];
        for (r, row) in a_rows.iter().enumerate() {
            for &(j, v) in row {
                if !is_dense[j] {
                    elim_cols[j].push((r, v));
                }
            }
        }
        Self {
            p,
            n,
            a_rows,
            b,
            dense,
            dense_pos,
            elim_cols,
            q_diag,
            q_full,
            lo_idx,
            up_idx,
        }
    }

    fn n_ineq(&self) -> usize {
        self.p.in_rows.len() + self.lo_idx.len() + self.up_idx.len()
    }

    /// g = G x (general rows, then lower rows as -x, then upper rows as x).
    fn g_times(&self, x: &[f64], out: &mut [f64]) {
        let mg = self.p.in_rows.len();
        for (r, row) in self.p.in_rows.iter().enumerate() {
            out[r] = dot_row(row, x);
        }
        for (k, &i) in self.lo_idx.iter().enumerate() {
            out[mg + k] = -x[i];
        }
        let ml = mg + self.lo_idx.len();
        for (k, &i) in self.up_idx.iter().enumerate() {
            out[ml + k] = x[i];
        }
    }

    fn h_vec(&self) -> Vec<f64> {
        let mut h = self.p.in_rhs.clone();
        h.extend(self.lo_idx.iter().map(|&i| -self.p.lower[i]));
        h.extend(self.up_idx.iter().map(|&i| self.p.upper[i]));
        h
    }

    /// out += Gᵀ z
    fn gt_times_add(&self, z: &[f64], out: &mut [f64]) {
        let mg = self.p.in_rows.len();
        for (r, row) in self.p.in_rows.iter().enumerate() {
            for &(j, v) in row {
                out[j] += v * z[r];
            }
        }
        for (k, &i) in self.lo_idx.iter().enumerate() {
            out[i] -= z[mg + k];
        }
        let ml = mg + self.lo_idx.len();
        for (k, &i) in self.up_idx.iter().enumerate() {
            out[i] += z[ml + k];
        }
    }

    fn q_times(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = self.q_full[i].iter().map(|&(j, v)| v * x[j]).sum();
        }
    }

    fn a_times(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.a_rows.iter().enumerate() {
            out[r] = dot_row(row, x);
        }
    }

    fn at_times_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, row) in self.a_rows.iter().enumerate() {
            for &(j, v) in row {
                out[j] += v * y[r];
            }
        }
    }
}

struct Factor {
    // None when the reduced system is empty
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    h_elim: Vec<f64>,
}

impl Kkt<'_> {
    /// Factor the reduced system for barrier weights `w = z / s`.
    fn factor(&self, w: &[f64]) -> Option<Factor> {
        // exact cancellation in the Schur block can leave a zero pivot;
        // retry with a dual regularization scaled to the block
        [0.0, 1e-14, 1e-11].iter().find_map(|&rel| self.factor_reg(w, rel))
    }

    fn factor_reg(&self, w: &[f64], rel: f64) -> Option<Factor> {
        let n = self.n;
        let nf = self.dense.len();
        let m = self.a_rows.len();
        let mg = self.p.in_rows.len();
        let mut hd = self.q_diag.clone();
        for (k, &i) in self.lo_idx.iter().enumerate() {
            hd[i] += w[mg + k];
        }
        let ml = mg + self.lo_idx.len();
        for (k, &i) in self.up_idx.iter().enumerate() {
            hd[i] += w[ml + k];
        }
        let mut k = DMatrix::<f64>::zeros(nf + m, nf + m);
        for (a, &i) in self.dense.iter().enumerate() {
            k[(a, a)] += hd[i] + REG_PRIMAL;
            for &(j, v) in &self.q_full[i] {
                if j != i {
                    k[(a, self.dense_pos[j])] += v;
                }
            }
        }
        for (r, row) in self.p.in_rows.iter().enumerate() {
            let wr = w[r];
            for &(i, vi) in row {
                let a = self.dense_pos[i];
                for &(j, vj) in row {
                    k[(a, self.dense_pos[j])] += wr * vi * vj;
                }
            }
        }
        for (r, row) in self.a_rows.iter().enumerate() {
            for &(j, v) in row {
                let a = self.dense_pos[j];
                if a != usize::MAX {
                    k[(a, nf + r)] += v;
                    k[(nf + r, a)] += v;
                }
            }
        }
        let mut h_elim = vec![0.0; n];
        for i in 0..n {
            if self.dense_pos[i] == usize::MAX {
                let h = hd[i] + REG_PRIMAL;
                h_elim[i] = h;
                let col = &self.elim_cols[i];
                for &(r1, v1) in col {
                    for &(r2, v2) in col {
                        k[(nf + r1, nf + r2)] -= v1 * v2 / h;
                    }
                }
            }
        }
        let dmax = (0..m).map(|r| k[(nf + r, nf + r)].abs()).fold(0.0, f64::max);
        for r in 0..m {
            k[(nf + r, nf + r)] -= REG_DUAL + rel * dmax;
        }
        if nf + m == 0 {
            return Some(Factor { lu: None, h_elim });
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Factor { lu: Some(lu), h_elim })
    }

    /// Solves H dx + Aᵀ dy = r1, A dx = r2.
    fn solve(&self, f: &Factor, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let nf = self.dense.len();
        let m = self.a_rows.len();
        let mut rhs = DVector::<f64>::zeros(nf + m);
        for (a, &i) in self.dense.iter().enumerate() {
            rhs[a] = r1[i];
        }
        for r in 0..m {
            rhs[nf + r] = r2[r];
        }
        for i in 0..self.n {
            if self.dense_pos[i] == usize::MAX {
                for &(r, v) in &self.elim_cols[i] {
                    rhs[nf + r] -= v * r1[i] / f.h_elim[i];
                }
            }
        }
        let sol = match &f.lu {
            Some(lu) => lu.solve(&rhs)?,
            None => rhs,
        };
        let dy: Vec<f64> = (0..m).map(|r| sol[nf + r]).collect();
        let mut dx = vec![0.0; self.n];
        for (a, &i) in self.dense.iter().enumerate() {
            dx[i] = sol[a];
        }
        for i in 0..self.n {
            if self.dense_pos[i] == usize::MAX {
                let aty: f64 = self.elim_cols[i].iter().map(|&(r, v)| v * dy[r]).sum();
                dx[i] = (r1[i] - aty) / f.h_elim[i];
            }
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx, dy))
    }
}

enum Outcome {
    Converged { x: Vec<f64>, kkt: f64, iters: usize },
    Diverged { x: Vec<f64>, iters: usize },
    Stalled { x: Vec<f64>, kkt: f64, iters: usize },
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a: f64 = 1.0;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

/// Starting point from the KKT system with unit scaling, `z = Gx - h`,
/// `s = -z`, each shifted to be strictly positive.
fn least_squares_start(kkt: &Kkt, h: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mi = kkt.n_ineq();
    let fac = kkt.factor(&vec![1.0; mi])?;
    let mut r1: Vec<f64> = kkt.p.linear.iter().map(|c| -c).collect();
    kkt.gt_times_add(h, &mut r1);
    let (x, y) = kkt.solve(&fac, &r1, &kkt.b)?;
    let mut gx = vec![0.0; mi];
    kkt.g_times(&x, &mut gx);
    let z: Vec<f64> = (0..mi).map(|r| gx[r] - h[r]).collect();
    if !x.iter().chain(&y).chain(&z).all(|v| v.is_finite()) {
        return None;
    }
    let shift = |v: Vec<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let a = if lo < 0.0 { 1.0 - lo } else { 1.0 };
        v.into_iter().map(|e| e + a).collect::<Vec<f64>>()
    };
    let s = shift(z.iter().map(|v| -v).collect());
    Some((x, y, s, shift(z)))
}

fn interior_point(kkt: &Kkt) -> Outcome {
    let p = kkt.p;
    let n = kkt.n;
    let m = kkt.a_rows.len();
    let mi = kkt.n_ineq();
    let h = kkt.h_vec();

    let mut x = vec![0.0; n];
    for i in 0..n {
        let (l, u) = (p.lower[i], p.upper[i]);
        x[i] = match (l.is_finite(), u.is_finite()) {
            (true, true) => 0.5 * (l + u),
            (true, false) => l + 1.0,
            (false, true) => u - 1.0,
            _ => 0.0,
        };
    }
    let mut gx = vec![0.0; mi];
    kkt.g_times(&x, &mut gx);
    let mut s: Vec<f64> = (0..mi).map(|r| (h[r] - gx[r]).max(1.0)).collect();
    let mut z = vec![1.0; mi];
    let mut y = vec![0.0; m];
    if let Some((x0, y0, s0, z0)) = least_squares_start(kkt, &h) {
        x = x0;
        y = y0;
        s = s0;
        z = z0;
    }

    let scale_p = 1.0 + norm_inf(&kkt.b).max(norm_inf(&h).min(1e8));
    let scale_d = 1.0 + norm_inf(&p.linear);

    let mut best_kkt = f64::INFINITY;
    let mut best_x = x.clone();
    let mut since_best = 0usize;

    let mut qx = vec![0.0; n];
    let mut ax = vec![0.0; m];
    for it in 0..MAX_ITER {
        kkt.q_times(&x, &mut qx);
        kkt.g_times(&x, &mut gx);
        kkt.a_times(&x, &mut ax);
        let mut rd: Vec<f64> = (0..n).map(|i| qx[i] + p.linear[i]).collect();
        kkt.at_times_add(&y, &mut rd);
        kkt.gt_times_add(&z, &mut rd);
        let rp: Vec<f64> = (0..m).map(|r| ax[r] - kkt.b[r]).collect();
        let rg: Vec<f64> = (0..mi).map(|r| gx[r] + s[r] - h[r]).collect();
        let mu = if mi > 0 { s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / mi as f64 } else { 0.0 };

        let pres = norm_inf(&rp).max(norm_inf(&rg)) / scale_p;
        let dres = norm_inf(&rd) / scale_d;
        let obj = p.objective(&x);
        let gap = mu * mi as f64 / (1.0 + obj.abs());
        let kres = pres.max(dres).max(gap);

        if pres <= TOL_FEAS && dres <= TOL_FEAS && gap <= TOL_GAP {
            return Outcome::Converged { x, kkt: kres, iters: it };
        }
        if kres < best_kkt * 0.9 {
            best_kkt = kres;
            best_x.clone_from(&x);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= 25 {
            if pres <= LOOSE_FEAS && dres <= LOOSE_FEAS && gap <= LOOSE_GAP {
                return Outcome::Stalled { x, kkt: kres, iters: it };
            }
            return Outcome::Diverged { x: best_x, iters: it };
        }

        let w: Vec<f64> = (0..mi).map(|r| z[r] / s[r]).collect();
        let loose = pres <= LOOSE_FEAS && dres <= LOOSE_FEAS && gap <= LOOSE_GAP;
        let Some(fac) = kkt.factor(&w) else {
            if loose {
                return Outcome::Stalled { x, kkt: kres, iters: it };
            }
            return Outcome::Diverged { x: best_x, iters: it };
        };

        // returns (dx, dy, ds, dz) for a complementarity target rc
        let direction = |rc: &[f64]| -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let t: Vec<f64> = (0..mi).map(|r| (-rc[r] + z[r] * rg[r]) / s[r]).collect();
            let mut r1: Vec<f64> = rd.iter().map(|v| -v).collect();
            let neg_t: Vec<f64> = t.iter().map(|v| -v).collect();
            kkt.gt_times_add(&neg_t, &mut r1);
            let r2: Vec<f64> = rp.iter().map(|v| -v).collect();
            let (dx, dy) = kkt.solve(&fac, &r1, &r2)?;
            let mut gdx = vec![0.0; mi];
            kkt.g_times(&dx, &mut gdx);
            let ds: Vec<f64> = (0..mi).map(|r| -rg[r] - gdx[r]).collect();
            let dz: Vec<f64> = (0..mi).map(|r| (-rc[r] - z[r] * ds[r]) / s[r]).collect();
            Some((dx, dy, ds, dz))
        };

        let rc_aff: Vec<f64> = (0..mi).map(|r| s[r] * z[r]).collect();
        let Some((_, _, ds_a, dz_a)) = direction(&rc_aff) else {
            if loose {
                return Outcome::Stalled { x, kkt: kres, iters: it };
            }
            return Outcome::Diverged { x: best_x, iters: it };
        };
        let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if mi > 0 {
            (0..mi).map(|r| (s[r] + alpha_a * ds_a[r]) * (z[r] + alpha_a * dz_a[r])).sum::<f64>() / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };
        let rc: Vec<f64> = (0..mi).map(|r| s[r] * z[r] + ds_a[r] * dz_a[r] - sigma * mu).collect();
        let Some((dx, dy, ds, dz)) = direction(&rc) else {
            return Outcome::Diverged { x: best_x, iters: it };
        };
        let alpha = (STEP_FRAC * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        for r in 0..m {
            y[r] += alpha * dy[r];
        }
        for r in 0..mi {
            s[r] = (s[r] + alpha * ds[r]).max(1e-300);
            z[r] = (z[r] + alpha * dz[r]).max(1e-300);
        }
    }
    Outcome::Diverged { x: best_x, iters: MAX_ITER }
}

/// Minimum total violation; positive optimum certifies primal infeasibility.
fn phase_one_violation(p: &ConvexProgram) -> Option<f64> {
    let mut f = ConvexProgram::new(p.n);
    f.lower.clone_from(&p.lower);
    f.upper.clone_from(&p.upper);
    let t = f.add_var(0.0, f64::INFINITY, 1.0);
    for (row, b) in p.in_rows.iter().zip(&p.in_rhs) {
        let mut r = row.clone();
        r.push((t, -1.0));
        f.add_le(r, *b);
    }
    for (row, b) in p.eq_rows.iter().zip(&p.eq_rhs) {
        let ep = f.add_var(0.0, f64::INFINITY, 1.0);
        let en = f.add_var(0.0, f64::INFINITY, 1.0);
        let mut r = row.clone();
        r.push((ep, 1.0));
        r.push((en, -1.0));
        f.add_eq(r, *b);
    }
    let kkt = Kkt::new(&f);
    match interior_point(&kkt) {
        Outcome::Converged { x, .. } | Outcome::Stalled { x, .. } => Some(f.objective(&x)),
        _ => None,
    }
}

/// Re-solves inside a large artificial box. An optimum strictly inside the
/// box is an optimum of the original program; one pushed onto the box means
/// the objective decreases without bound.
fn boxed_probe(p: &ConvexProgram) -> Option<(Vec<f64>, f64, usize, bool)> {
    const BOX: f64 = 1e7;
    let mut b = p.clone();
    for i in 0..b.n {
        b.lower[i] = b.lower[i].max(-BOX);
        b.upper[i] = b.upper[i].min(BOX);
    }
    match interior_point(&Kkt::new(&b)) {
        Outcome::Converged { x, kkt, iters } | Outcome::Stalled { x, kkt, iters } => {
            let on_box = norm_inf(&x) > 0.5 * BOX;
            Some((x, kkt, iters, on_box))
        }
        _ => None,
    }
}

pub fn solve(p: &ConvexProgram) -> Result<Solution, SolverError> {
    p.validate()?;
    let n = p.n;
    if (0..n).any(|i| p.lower[i] > p.upper[i]) {
        return Ok(Solution {
            status: Status::Infeasible,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            kkt_residual: f64::INFINITY,
            iterations: 0,
        });
    }
    let kkt = Kkt::new(p);
    let out = interior_point(&kkt);
    let sol = |status, x: Vec<f64>, kkt_residual, iterations| {
        let objective = p.objective(&x);
        Solution {
            status,
            x,
            objective,
            kkt_residual,
            iterations,
        }
    };
    Ok(match out {
        Outcome::Converged { x, kkt, iters } | Outcome::Stalled { x, kkt, iters } => {
            sol(Status::Optimal, x, kkt, iters)
        }
        Outcome::Diverged { x, iters } => match boxed_probe(p) {
            Some((bx, kkt, more, false)) => sol(Status::Optimal, bx, kkt, iters + more),
            Some((_, _, more, true)) => sol(Status::Unbounded, x, f64::INFINITY, iters + more),
            None => {
                let scale = 1.0 + norm_inf(&p.eq_rhs).max(norm_inf(&p.in_rhs));
                match phase_one_violation(p) {
                    Some(v) if v > 1e-6 * scale => sol(Status::Infeasible, x, f64::INFINITY, iters),
                    _ => sol(Status::MaxIter, x, f64::INFINITY, iters),
                }
            }
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_qp_lower_bound() {
        let mut p = ConvexProgram::new(1);
        p.add_quad(0, 0, 2.0);
        p.add_le(vec![(0, -1.0)], -1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-7);
        assert!((s.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = ConvexProgram::new(1);
        p.add_le(vec![(0, 1.0)], 0.0);
        p.add_le(vec![(0, -1.0)], -1.0);
        assert_eq!(solve(&p).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = ConvexProgram::new(1);
        p.set_bounds(0, 1.0, 0.0);
        assert_eq!(solve(&p).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn unbounded_lp() {
        let mut p = ConvexProgram::new(1);
        p.linear[0] = -1.0;
        p.set_bounds(0, 0.0, f64::INFINITY);
        assert_eq!(solve(&p).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn malformed_inputs() {
        let mut p = ConvexProgram::new(2);
        p.add_quad(0, 1, 1.0);
        assert!(matches!(solve(&p), Err(SolverError::MalformedProgram(_))));
        let mut p = ConvexProgram::new(1);
        p.add_eq(vec![(3, 1.0)], 0.0);
        assert!(matches!(solve(&p), Err(SolverError::MalformedProgram(_))));
    }

    #[test]
    fn simplex_lp_with_many_eliminated_vars() {
        // min Σ c_i λ_i  s.t. Σ λ_i = 1, Σ i λ_i = 2.5, λ >= 0
        let k = 2000;
        let mut p = ConvexProgram::new(0);
        let mut r1 = vec![];
        let mut r2 = vec![];
        for i in 0..k {
            let x = i as f64 / 100.0;
            let j = p.add_var(0.0, f64::INFINITY, (x - 2.5).powi(2) + 1.0);
            r1.push((j, 1.0));
            r2.push((j, x));
        }
        p.add_eq(r1, 1.0);
        p.add_eq(r2, 2.5);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-8, "{}", s.objective);
    }

    #[test]
    fn expensive_slack_small_qp() {
        let mut p = ConvexProgram::new(2);
        p.add_quad(0, 0, 2.0);
        p.linear = vec![3.7572432670659883, 10000.0];
        p.constant = 6.189209780715007;
        p.set_bounds(0, -3.0, 2.5);
        p.set_bounds(1, 0.0, f64::INFINITY);
        p.add_le(vec![(0, 1.0)], 9.475855776446705);
        p.add_le(vec![(0, -1.0)], 10.524144223553295);
        p.add_le(vec![(0, -0.5), (1, -1.0)], 1.0685952534298622);
        p.add_le(vec![(0, -1.0), (1, -1.0)], 10.524144223553295);
        p.add_le(vec![(0, 1.0), (1, -1.0)], 9.475855776446705);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, Status::Optimal);
        // unconstrained minimizer of x² + c x is interior
        assert!((s.x[0] + 3.7572432670659883 / 2.0).abs() < 1e-6);
        assert!(s.x[1].abs() < 1e-6);
    }

    #[test]
    fn deterministic_bytes() {
        let mut p = ConvexProgram::new(3);
        p.add_quad(0, 0, 1.0);
        p.add_quad(1, 1, 2.0);
        p.add_quad(0, 1, 0.5);
        p.linear = vec![1.0, -1.0, 0.5];
        p.set_bounds(2, -1.0, 1.0);
        p.add_le(vec![(0, 1.0), (1, 1.0)], 0.3);
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
