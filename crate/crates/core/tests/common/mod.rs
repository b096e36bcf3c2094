//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecodrive::geometry::Point;
use ecodrive::learning::{DataRow, Target};

pub struct DenseQp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

/// Strictly convex QP with a known interior point, so it is always feasible.
pub fn random_qp(seed: u64) -> DenseQp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=12);
    let m_eq = rng.random_range(0..=2.min(n - 1));
    let m_in = rng.random_range(1..=8);
    let mut u = || rng.random_range(-1.0..1.0);
    let m = DMatrix::from_fn(n, n, |_, _| u());
    let q = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| 3.0 * u());
    let x0 = DVector::from_fn(n, |_, _| u());
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| u());
    let b_eq = &a_eq * &x0;
    let a_in = DMatrix::from_fn(m_in, n, |_, _| u());
    let slack = DVector::from_fn(m_in, |_, _| 0.5 * (u() + 1.0));
    let b_in = &a_in * &x0 + slack;
    DenseQp { q, c, a_eq, b_eq, a_in, b_in }
}

pub fn qp_objective(p: &DenseQp, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(&p.q * x)) + p.c.dot(x)
}

/// Enumerates every active set of inequality rows and keeps the KKT points.
pub fn active_set_oracle(p: &DenseQp) -> (DVector<f64>, f64) {
    let n = p.c.len();
    let m_eq = p.a_eq.nrows();
    let m_in = p.a_in.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m_in) {
        let act: Vec<usize> = (0..m_in).filter(|i| mask & (1 << i) != 0).collect();
        let k = m_eq + act.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.q);
        for i in 0..n {
            rhs[i] = -p.c[i];
        }
        for (r, row) in (0..m_eq).map(|r| (r, p.a_eq.row(r).clone_owned()))
            .chain(act.iter().enumerate().map(|(t, &i)| (m_eq + t, p.a_in.row(i).clone_owned())))
        {
            for j in 0..n {
                kkt[(n + r, j)] = row[j];
                kkt[(j, n + r)] = row[j];
            }
            rhs[n + r] = if r < m_eq { p.b_eq[r] } else { p.b_in[act[r - m_eq]] };
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let x = sol.rows(0, n).clone_owned();
        let primal_ok = (0..m_in).all(|i| (p.a_in.row(i) * &x)[0] <= p.b_in[i] + 1e-9);
        let dual_ok = (0..act.len()).all(|t| sol[n + m_eq + t] >= -1e-9);
        if primal_ok && dual_ok {
            let f = qp_objective(p, &x);
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((x, f));
            }
        }
    }
    best.expect("feasible strictly convex QP has a KKT point")
}

/// Minimises c·x over {G x <= h} in 2-D by enumerating constraint-pair vertices.
pub fn lp2_vertex_oracle(c: [f64; 2], g: &[[f64; 2]], h: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            let det = g[i][0] * g[j][1] - g[i][1] * g[j][0];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (h[i] * g[j][1] - g[i][1] * h[j]) / det;
            let y = (g[i][0] * h[j] - h[i] * g[j][0]) / det;
            if (0..g.len()).all(|k| g[k][0] * x + g[k][1] * y <= h[k] + 1e-9) {
                let f = c[0] * x + c[1] * y;
                best = Some(best.map_or(f, |b: f64| b.min(f)));
            }
        }
    }
    best
}

/// Horizontal slice `[a, b]` of conv(`pts`) at height `y`, from every pair
/// segment crossing that height. `None` when the slice is empty.
pub fn hull_slice(pts: &[[f64; 2]], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, p) in pts.iter().enumerate() {
        if p[1] == y {
            lo = lo.min(p[0]);
            hi = hi.max(p[0]);
        }
        for q in &pts[i + 1..] {
            let (a, b) = (p[1] - y, q[1] - y);
            if a * b < 0.0 {
                let t = a / (a - b);
                let x = p[0] + t * (q[0] - p[0]);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Feasibility of `{x >= 0 : A x = b}` by phase-one simplex with Bland's rule.
pub fn simplex_feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    let (m, n) = a.shape();
    // tableau: [A | I | b], objective row = sum of artificials
    let mut t = DMatrix::zeros(m + 1, n + m + 1);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = sign * b[i];
    }
    for j in 0..=n + m {
        if j < n || j == n + m {
            t[(m, j)] = -(0..m).map(|i| t[(i, j)]).sum::<f64>();
        }
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let tol = 1e-10;
    for _ in 0..50_000 {
        let Some(col) = (0..n + m).find(|&j| t[(m, j)] < -tol) else { break };
        let mut row = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if t[(i, col)] > tol {
                let r = t[(i, n + m)] / t[(i, col)];
                if r < best - 1e-12 || (r <= best + 1e-12 && row.is_some_and(|k: usize| basis[i] < basis[k])) {
                    best = r;
                    row = Some(i);
                }
            }
        }
        let Some(r) = row else { break };
        let p = t[(r, col)];
        for j in 0..=n + m {
            t[(r, j)] /= p;
        }
        for i in 0..=m {
            if i != r {
                let f = t[(i, col)];
                if f != 0.0 {
                    for j in 0..=n + m {
                        t[(i, j)] -= f * t[(r, j)];
                    }
                }
            }
        }
        basis[r] = col;
    }
    -t[(m, n + m)] <= 1e-7 * (1.0 + b.amax())
}

/// At most 50 rows from short random-input runs, some driving through the
/// line and some braking before it.
pub fn toy_rows(seed: u64) -> Vec<DataRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    while rows.len() < 48 {
        let braking = rng.random_bool(0.4);
        let (mut s, mut v): (f64, f64) = if braking {
            (rng.random_range(-30.0..-12.0), rng.random_range(0.0..7.0))
        } else {
            (rng.random_range(-40.0..-10.0), rng.random_range(5.0..12.0))
        };
        for _ in 0..4 {
            let u: f64 = if braking { rng.random_range(-3.0..0.0) } else { rng.random_range(-1.0..1.5) };
            let u = u.max(-v);
            rows.push(DataRow { s_shift: s, v, u, cost: 1.0, iteration: 0 });
            s += v + 0.5 * u;
            v += u;
        }
    }
    rows
}

/// Target as `a·x <= b` rows: pass `s >= 3`, stop `s <= -3`, both with `0 <= v <= 20`.
pub fn target_rows(t: Target) -> Vec<([f64; 2], f64)> {
    let pos = match t {
        Target::Pass => ([-1.0, 0.0], -3.0),
        Target::Stop => ([1.0, 0.0], -3.0),
    };
    vec![pos, ([0.0, -1.0], 0.0), ([0.0, 1.0], 20.0)]
}

/// Worst-case certificate: a tree of convex combinations of recorded
/// (state, successor) pairs, one node per noise history with the noise at
/// either extreme each step, whose leaves all land in the target.
pub fn certificate(x: Point, rows: &[DataRow], t: usize, target: Target, noise: [f64; 2]) -> bool {
    let n = rows.len();
    let xs: Vec<[f64; 2]> = rows.iter().map(|r| [r.s_shift, r.v]).collect();
    let succ: Vec<[f64; 2]> = rows.iter().map(|r| [r.s_shift + r.v + 0.5 * r.u, r.v + r.u]).collect();
    let tgt = target_rows(target);
    let nodes = (1 << t) - 1;
    let leaves = 1 << t;
    let nvar = nodes * n + leaves * tgt.len();
    let nrow = nodes * 3 + leaves * tgt.len();
    let mut a = DMatrix::zeros(nrow, nvar);
    let mut b = DVector::zeros(nrow);
    let node = |d: usize, path: usize| (1 << d) - 1 + path;
    let mut r = 0;
    for d in 0..t {
        for path in 0..1 << d {
            let me = node(d, path) * n;
            for q in 0..n {
                a[(r, me + q)] = xs[q][0];
                a[(r + 1, me + q)] = xs[q][1];
                a[(r + 2, me + q)] = 1.0;
            }
            if d == 0 {
                b[r] = x.x;
                b[r + 1] = x.y;
            } else {
                let parent = node(d - 1, path >> 1) * n;
                for q in 0..n {
                    a[(r, parent + q)] -= succ[q][0];
                    a[(r + 1, parent + q)] -= succ[q][1];
                }
                b[r] = noise[path & 1];
            }
            b[r + 2] = 1.0;
            r += 3;
        }
    }
    let mut slack = nodes * n;
    for path in 0..leaves {
        let parent = node(t - 1, path >> 1) * n;
        for (g, h) in &tgt {
            for q in 0..n {
                a[(r, parent + q)] = g[0] * succ[q][0] + g[1] * succ[q][1];
            }
            a[(r, slack)] = 1.0;
            b[r] = h - g[0] * noise[path & 1];
            slack += 1;
            r += 1;
        }
    }
    simplex_feasible(&a, &b)
}
