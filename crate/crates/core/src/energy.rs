//! Quadratic per-step energy model `ℓ(v, u) = [v u 1] P [v u 1]ᵀ`, its
//! PSD-constrained regression and trajectory accounting.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("parameter matrix is not symmetric PSD: {0}")]
    NotPsd(String),
    #[error("need at least 6 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("non-finite sample at row {0}")]
    NonFinite(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct EnergyModel {
    p: Matrix3<f64>,
}

impl TryFrom<[[f64; 3]; 3]> for EnergyModel {
    type Error = EnergyError;
    fn try_from(a: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        EnergyModel::new(Matrix3::from_fn(|i, j| a[i][j]))
    }
}

impl From<EnergyModel> for [[f64; 3]; 3] {
    fn from(m: EnergyModel) -> Self {
        let p = m.p;
        [
            [p[(0, 0)], p[(0, 1)], p[(0, 2)]],
            [p[(1, 0)], p[(1, 1)], p[(1, 2)]],
            [p[(2, 0)], p[(2, 1)], p[(2, 2)]],
        ]
    }
}

impl EnergyModel {
    pub fn new(p: Matrix3<f64>) -> Result<Self, EnergyError> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(EnergyError::NotPsd("non-finite entry".into()));
        }
        let asym = (p - p.transpose()).amax();
        if asym > 1e-9 * (1.0 + p.amax()) {
            return Err(EnergyError::NotPsd(format!("asymmetry {asym:e}")));
        }
        let p = 0.5 * (p + p.transpose());
        let min_eig = p.symmetric_eigenvalues().min();
        if min_eig < -1e-9 {
            return Err(EnergyError::NotPsd(format!("min eigenvalue {min_eig:e}")));
        }
        Ok(Self { p })
    }

    /// Synthetic ground truth used in place of measured vehicle data:
    /// `ℓ = (u + 0.15v + 0.3)² + (0.1v + 0.5)² + 0.25` kJ per 1 s step.
    pub fn synthetic() -> Self {
        let r = Matrix3::new(0.15, 1.0, 0.3, 0.1, 0.0, 0.5, 0.0, 0.0, 0.5);
        Self::new(r.transpose() * r).expect("RᵀR is PSD")
    }

    pub fn zero() -> Self {
        Self { p: Matrix3::zeros() }
    }

    pub fn p(&self) -> &Matrix3<f64> {
        &self.p
    }

    #[inline]
    pub fn stage_cost(&self, v: f64, u: f64) -> f64 {
        let f = Vector3::new(v, u, 1.0);
        f.dot(&(self.p * f))
    }
}

pub fn stage_cost(m: &EnergyModel, v: f64, u: f64) -> f64 {
    m.stage_cost(v, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub v: f64,
    pub u: f64,
    #[serde(rename = "dE")]
    pub de: f64,
}

#[derive(Debug, Clone)]
pub struct EnergyFit {
    pub model: EnergyModel,
    /// Sum of squared residuals of the returned model.
    pub residual: f64,
    /// Design matrix was rank deficient; the pseudo-inverse start was used.
    pub degenerate: bool,
    pub iterations: usize,
}

fn features(v: f64, u: f64) -> [f64; 6] {
    [v * v, u * u, 1.0, 2.0 * v * u, 2.0 * v, 2.0 * u]
}

fn unpack(p: &DVector<f64>) -> Matrix3<f64> {
    Matrix3::new(p[0], p[3], p[4], p[3], p[1], p[5], p[4], p[5], p[2])
}

const GN_ITERS: usize = 200;
const GN_GRAD_TOL: f64 = 1e-10;

// upper-triangular entries of R, row-major
const TRI: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn r_from(theta: &[f64; 6]) -> Matrix3<f64> {
    let mut r = Matrix3::zeros();
    for (k, &(a, b)) in TRI.iter().enumerate() {
        r[(a, b)] = theta[k];
    }
    r
}

fn sse(theta: &[f64; 6], samples: &[EnergySample]) -> f64 {
    let r = r_from(theta);
    samples
        .iter()
        .map(|s| {
            let e = (r * Vector3::new(s.v, s.u, 1.0)).norm_squared() - s.de;
            e * e
        })
        .sum()
}

/// Least-squares fit of `P ⪰ 0` through the factorisation `P = RᵀR`.
pub fn fit_energy_model(samples: &[EnergySample]) -> Result<EnergyFit, EnergyError> {
    if samples.len() < 6 {
        return Err(EnergyError::InsufficientSamples(samples.len()));
    }
    if let Some(i) = samples.iter().position(|s| !(s.v.is_finite() && s.u.is_finite() && s.de.is_finite())) {
        return Err(EnergyError::NonFinite(i));
    }
    let m = samples.len();
    let phi = DMatrix::from_fn(m, 6, |i, j| features(samples[i].v, samples[i].u)[j]);
    let y = DVector::from_iterator(m, samples.iter().map(|s| s.de));
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax.max(1e-300)).count();
    let degenerate = rank < 6;
    if degenerate {
        log::warn!("energy regression design has rank {rank} < 6; using pseudo-inverse start");
    }
    let p_ls = svd
        .solve(&y, 1e-10 * smax.max(1e-300))
        .unwrap_or_else(|_| DVector::zeros(6));

    // PSD projection, then R from the QR of sqrt(Λ) Vᵀ
    let eig = SymmetricEigen::new(unpack(&p_ls));
    let lam = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let m0 = Matrix3::from_diagonal(&lam) * eig.eigenvectors.transpose();
    let r0 = m0.qr().r();
    let mut theta = [0.0; 6];
    for (k, &(a, b)) in TRI.iter().enumerate() {
        theta[k] = r0[(a, b)];
    }

    let scale = 1.0 + y.amax();
    let mut cost = sse(&theta, samples);
    let mut damping = 0.0;
    let mut iterations = 0;
    for it in 0..GN_ITERS {
        iterations = it + 1;
        let r = r_from(&theta);
        let mut jtj = DMatrix::<f64>::zeros(6, 6);
        let mut jtr = DVector::<f64>::zeros(6);
        for s in samples {
            let f = Vector3::new(s.v, s.u, 1.0);
            let rf = r * f;
            let res = rf.norm_squared() - s.de;
            let jrow: Vec<f64> = TRI.iter().map(|&(a, b)| 2.0 * rf[a] * f[b]).collect();
            for a in 0..6 {
                jtr[a] += jrow[a] * res;
                for b in 0..6 {
                    jtj[(a, b)] += jrow[a] * jrow[b];
                }
            }
        }
        if jtr.amax() <= GN_GRAD_TOL * scale * scale {
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut h = jtj.clone();
            for a in 0..6 {
                h[(a, a)] += damping * (1.0 + jtj[(a, a)]);
            }
            let Some(step) = h.lu().solve(&(-&jtr)) else {
                damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
                continue;
            };
            let mut cand = theta;
            for a in 0..6 {
                cand[a] += step[a];
            }
            let c = sse(&cand, samples);
            if c <= cost {
                theta = cand;
                cost = c;
                damping *= 0.1;
                improved = true;
                break;
            }
            damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
        }
        if !improved {
            break;
        }
    }
    let r = r_from(&theta);
    let model = EnergyModel::new(r.transpose() * r)?;
    Ok(EnergyFit {
        model,
        residual: cost,
        degenerate,
        iterations,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    pub per_step: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl EnergyTrace {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Per-step consumption along `(v_k, u_k)` pairs and its running sum.
pub fn accumulate(m: &EnergyModel, traj: &[(f64, f64)]) -> EnergyTrace {
    let per_step: Vec<f64> = traj.iter().map(|&(v, u)| m.stage_cost(v, u)).collect();
    let mut acc = 0.0;
    let cumulative = per_step
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect();
    EnergyTrace { per_step, cumulative }
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    #[allow(dead_code)]
    t: f64,
    v: f64,
    u: f64,
    #[serde(rename = "dE")]
    de: f64,
}

/// Reads `t,v,u,dE` rows.
/// Samples of `ℓ` at uniform `(v, u)` in the given ranges, each scaled by
/// `1 + rel_sigma·ε` with standard normal `ε`.
pub fn simulate_samples(
    m: &EnergyModel,
    v_range: (f64, f64),
    u_range: (f64, f64),
    count: usize,
    rel_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<EnergySample> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..count)
        .map(|_| {
            let v = rng.random_range(v_range.0..=v_range.1);
            let u = rng.random_range(u_range.0..=u_range.1);
            let de = m.stage_cost(v, u) * (1.0 + rel_sigma * normal.sample(rng));
            EnergySample { v, u, de }
        })
        .collect()
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<EnergySample>, EnergyError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = vec![];
    for row in rd.deserialize() {
        let row: SampleRow = row?;
        out.push(EnergySample {
            v: row.v,
            u: row.u,
            de: row.de,
        });
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(w: W, traj: &[(f64, f64)], trace: &EnergyTrace) -> Result<(), EnergyError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["k", "v", "u", "dE", "E"])?;
    for (k, ((v, u), (d, c))) in traj.iter().zip(trace.per_step.iter().zip(&trace.cumulative)).enumerate() {
        wr.write_record([k.to_string(), v.to_string(), u.to_string(), d.to_string(), c.to_string()])?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}
