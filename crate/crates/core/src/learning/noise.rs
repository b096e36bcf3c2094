use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearningError;
use crate::geometry::AxisSegment;
use crate::plant::NoiseModel;

/// Weighted points on the terminal-noise segment used to approximate the
/// expected terminal cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDiscretization {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Seed of the sampling run that produced the recorded noises, if any.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_samples: usize,
}

impl NoiseDiscretization {
    /// Single point at zero.
    pub fn nominal() -> Self {
        Self {
            points: vec![0.0],
            weights: vec![1.0],
            seed: None,
            n_samples: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Support extremes plus `m - 2` empirical quantiles. Interior points carry
/// the sample mass of their nearest-point cell; the two extreme cells pool
/// their mass and split it equally.
pub fn discretize_terminal_noise(samples: &[f64], support: AxisSegment, m: usize) -> Result<NoiseDiscretization, LearningError> {
    if m < 2 {
        return Err(LearningError::BadDiscretization(format!("need at least 2 points, got {m}")));
    }
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let interior = m - 2;
    let mut points = Vec::with_capacity(m);
    points.push(support.lo);
    for j in 1..=interior {
        let p = j as f64 / (m - 1) as f64;
        let q = if sorted.is_empty() {
            support.lo + p * support.width()
        } else {
            quantile(&sorted, p)
        };
        points.push(q.clamp(support.lo, support.hi));
    }
    points.push(support.hi);

    if sorted.is_empty() {
        return Ok(NoiseDiscretization {
            weights: vec![1.0 / m as f64; m],
            points,
            seed: None,
            n_samples: 0,
        });
    }
    let bounds: Vec<f64> = points.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut mass = vec![0.0; m];
    for &x in &sorted {
        let c = bounds.partition_point(|&b| b < x);
        if c < bounds.len() && bounds[c] == x {
            // tie on a cell boundary
            mass[c] += 0.5;
            mass[c + 1] += 0.5;
        } else {
            mass[c] += 1.0;
        }
    }
    let total = sorted.len() as f64;
    let tail = 0.5 * (mass[0] + mass[m - 1]) / total;
    let mut weights: Vec<f64> = mass.iter().map(|w| w / total).collect();
    weights[0] = tail;
    weights[m - 1] = tail;
    Ok(NoiseDiscretization {
        points,
        weights,
        seed: None,
        n_samples: sorted.len(),
    })
}

/// Samples of the accumulated lumped noise over `horizon` steps,
/// `Σ_{i<N} n_{k+i} = Δs_k − Δs_{k+N}`, from the observer error recursion.
pub fn sample_terminal_noise(
    noise: &NoiseModel,
    gain: f64,
    horizon: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    const BURN_IN: usize = 50;
    let mut ds = -noise.sample(rng);
    let mut hist = Vec::with_capacity(BURN_IN + horizon * (count + 1));
    hist.push(ds);
    let needed = BURN_IN + horizon * count + 1;
    while hist.len() < needed {
        ds = (1.0 - gain) * ds - gain * noise.sample(rng);
        hist.push(ds);
    }
    (0..count)
        .map(|c| {
            let k = BURN_IN + c * horizon;
            hist[k - horizon] - hist[k]
        })
        .collect()
}
