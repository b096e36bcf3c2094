//! Truth model, localization measurement and the position observer.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::AxisSegment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("noise sample {w} outside support [{lo}, {hi}]")]
    NoiseOutOfSupport { w: f64, lo: f64, hi: f64 },
    #[error("observer gain {0} not in (0, 1)")]
    BadGain(f64),
    #[error("invalid noise model: {0}")]
    BadNoiseModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct State {
    pub s: f64,
    pub v: f64,
}

impl State {
    pub fn new(s: f64, v: f64) -> Self {
        Self { s, v }
    }

    pub fn vec(&self) -> Vector2<f64> {
        Vector2::new(self.s, self.v)
    }

    pub fn from_vec(x: Vector2<f64>) -> Self {
        Self { s: x.x, v: x.y }
    }

    /// Same state expressed relative to a light at `s_tl`.
    pub fn shifted(&self, s_tl: f64) -> Vector2<f64> {
        Vector2::new(self.s - s_tl, self.v)
    }
}

/// Measured position and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    #[default]
    Zoh,
    ForwardEuler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: Matrix2<f64>,
    pub d: Vector2<f64>,
    pub ts: f64,
}

impl SystemMatrices {
    pub fn new(ts: f64, disc: Discretization) -> Self {
        let b = match disc {
            Discretization::Zoh => Vector2::new(0.5 * ts * ts, ts),
            Discretization::ForwardEuler => Vector2::new(0.0, ts),
        };
        Self {
            a: Matrix2::new(1.0, ts, 0.0, 1.0),
            b,
            c: Matrix2::identity(),
            d: Vector2::new(1.0, 0.0),
            ts,
        }
    }

    pub fn zoh(ts: f64) -> Self {
        Self::new(ts, Discretization::Zoh)
    }

    #[inline]
    pub fn propagate(&self, x: Vector2<f64>, u: f64) -> Vector2<f64> {
        self.a * x + self.b * u
    }
}

impl Default for SystemMatrices {
    fn default() -> Self {
        Self::zoh(1.0)
    }
}

pub fn step_true(x: State, u: f64, sys: &SystemMatrices) -> State {
    State::from_vec(sys.propagate(x.vec(), u))
}

pub fn measure(x: State, w: f64, support: &AxisSegment) -> Result<Measurement, PlantError> {
    if !support.contains(w, 0.0) {
        return Err(PlantError::NoiseOutOfSupport {
            w,
            lo: support.lo,
            hi: support.hi,
        });
    }
    Ok(Measurement { s: x.s + w, v: x.v })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    /// Zero-mean normal with standard deviation `sigma`, resampled until inside the support.
    TruncatedGaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub lo: f64,
    pub hi: f64,
}

impl NoiseModel {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            kind: NoiseKind::Uniform,
            lo,
            hi,
        }
    }

    pub fn support(&self) -> AxisSegment {
        AxisSegment { lo: self.lo, hi: self.hi }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(PlantError::BadNoiseModel(format!("support [{}, {}]", self.lo, self.hi)));
        }
        if let NoiseKind::TruncatedGaussian { sigma } = self.kind {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(PlantError::BadNoiseModel(format!("sigma {sigma}")));
            }
            if self.lo > 0.0 || self.hi < 0.0 {
                return Err(PlantError::BadNoiseModel("support must contain 0".into()));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        match self.kind {
            NoiseKind::Uniform => rng.random_range(self.lo..=self.hi),
            NoiseKind::TruncatedGaussian { sigma } => {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                loop {
                    let w = normal.sample(rng);
                    if w >= self.lo && w <= self.hi {
                        return w;
                    }
                }
            }
        }
    }
}

/// Luenberger-type observer that corrects position with gain `L` and takes
/// the measured speed as is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observer {
    pub gain: f64,
    pub estimate: State,
}

impl Observer {
    pub fn new(gain: f64, y0: Measurement) -> Result<Self, PlantError> {
        if !(gain > 0.0 && gain < 1.0) {
            return Err(PlantError::BadGain(gain));
        }
        Ok(Self {
            gain,
            estimate: State::new(y0.s, y0.v),
        })
    }

    pub fn update(&mut self, u: f64, y_next: Measurement, sys: &SystemMatrices) {
        let pred = sys.propagate(self.estimate.vec(), u);
        let innov = Vector2::new(y_next.s, y_next.v) - sys.c * pred;
        self.estimate = State {
            s: pred.x + self.gain * innov.x,
            v: y_next.v,
        };
    }

    pub fn updated(&self, u: f64, y_next: Measurement, sys: &SystemMatrices) -> Observer {
        let mut o = *self;
        o.update(u, y_next, sys);
        o
    }
}

/// Nominal states as affine functions of the input sequence:
/// `x̄_i = free[i] + Σ_{j<i} gain[i][j]·u_j`.
#[derive(Debug, Clone)]
pub struct AffineRollout {
    pub free: Vec<Vector2<f64>>,
    pub gain: Vec<Vec<Vector2<f64>>>,
}

impl AffineRollout {
    pub fn new(sys: &SystemMatrices, x0: Vector2<f64>, horizon: usize) -> Self {
        let mut free = Vec::with_capacity(horizon + 1);
        let mut gain: Vec<Vec<Vector2<f64>>> = Vec::with_capacity(horizon + 1);
        let mut x = x0;
        // a_pow_b[m] = A^m B
        let mut a_pow_b = Vec::with_capacity(horizon);
        let mut ab = sys.b;
        for _ in 0..horizon {
            a_pow_b.push(ab);
            ab = sys.a * ab;
        }
        for i in 0..=horizon {
            free.push(x);
            gain.push((0..i).map(|j| a_pow_b[i - 1 - j]).collect());
            x = sys.a * x;
        }
        Self { free, gain }
    }

    pub fn horizon(&self) -> usize {
        self.free.len() - 1
    }

    pub fn state(&self, i: usize, u: &[f64]) -> Vector2<f64> {
        let mut x = self.free[i];
        for (j, g) in self.gain[i].iter().enumerate() {
            x += g * u[j];
        }
        x
    }
}

/// Position-error bound after `i` propagated steps: `2·L·i·W`.
pub fn noise_bounds(gain: f64, w: &AxisSegment, i: usize) -> AxisSegment {
    w.scaled(2.0 * gain * i as f64)
}

/// Per-step estimation error `Δs_k = s_k - ŝ_k` and the lumped noise
/// `n_k = ŝ_{k+1} - [A x̂_k + B u_k]_s` (absent on the final step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSample {
    pub ds: f64,
    pub n: Option<f64>,
}

pub fn estimation_error_trace(
    truth: &[State],
    estimates: &[State],
    inputs: &[f64],
    sys: &SystemMatrices,
) -> Vec<ErrorSample> {
    let k = truth.len().min(estimates.len());
    (0..k)
        .map(|i| {
            let n = (i + 1 < k && i < inputs.len()).then(|| {
                estimates[i + 1].s - sys.propagate(estimates[i].vec(), inputs[i]).x
            });
            ErrorSample {
                ds: truth[i].s - estimates[i].s,
                n,
            }
        })
        .collect()
}
