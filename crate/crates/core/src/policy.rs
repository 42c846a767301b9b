//! The uniform policy interface and the four compared controllers:
//! mean-field optimal (interpolated from a converged solve), popularity-
//! proportional, uniform-random, and the constant level picked by
//! exhaustive search.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::solver::{Grid, MfeSolution};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("{0}")]
    Invalid(String),
    #[error("cannot build a mean-field policy from an unconverged solution")]
    Unconverged,
}

/// Trilinear interpolator over the solved control field.
#[derive(Debug, Clone)]
pub struct MfPolicy {
    ts: Arc<Vec<f64>>,
    xs: Arc<Vec<f64>>,
    qs: Arc<Vec<f64>>,
    data: Arc<ndarray::Array3<f64>>,
    p_max: f64,
    clamp_events: Arc<AtomicU64>,
}

impl MfPolicy {
    /// Queries that fell outside the solved grid and were clamped to the
    /// nearest face.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    fn interpolate(&self, t: f64, x: f64, q: f64) -> f64 {
        let (it, ft) = locate(&self.ts, t, &self.clamp_events);
        let (ix, fx) = locate(&self.xs, x, &self.clamp_events);
        let (iq, fq) = locate(&self.qs, q, &self.clamp_events);
        let d = &self.data;
        let mut acc = 0.0;
        for (dt, wt) in [(0usize, 1.0 - ft), (1, ft)] {
            for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                for (dq, wq) in [(0usize, 1.0 - fq), (1, fq)] {
                    let w = wt * wx * wq;
                    if w > 0.0 {
                        acc += w * d[[it + dt, ix + dx, iq + dq]];
                    }
                }
            }
        }
        acc
    }
}

// (lower index, fraction) of a coordinate on a uniform ascending axis,
// clamped to the axis range and counting out-of-range queries.
fn locate(axis: &[f64], v: f64, clamps: &AtomicU64) -> (usize, f64) {
    let n = axis.len();
    let lo = axis[0];
    let hi = axis[n - 1];
    let tol = 1e-12 * (hi - lo).abs().max(1.0);
    if v < lo - tol || v > hi + tol {
        clamps.fetch_add(1, Ordering::Relaxed);
    }
    let v = v.clamp(lo, hi);
    if n == 1 {
        return (0, 0.0);
    }
    let step = (hi - lo) / (n - 1) as f64;
    let raw = (v - lo) / step;
    let idx = (raw.floor() as usize).min(n - 2);
    (idx, (raw - idx as f64).clamp(0.0, 1.0))
}

/// A caching controller: maps (t, x, Q) to a download probability in
/// [0, p_max]. Only the random kind consumes the random source.
#[derive(Debug, Clone)]
pub enum Policy {
    MeanField(MfPolicy),
    Popularity { scale: f64, p_max: f64 },
    Random { p_max: f64 },
    Constant { level: f64, p_max: f64 },
}

impl Policy {
    pub fn decide<R: Rng + ?Sized>(&self, t: f64, x: f64, q: f64, rng: &mut R) -> f64 {
        match self {
            Policy::MeanField(mf) => mf.interpolate(t, x, q).clamp(0.0, mf.p_max),
            Policy::Popularity { scale, p_max } => (scale * x).clamp(0.0, *p_max),
            Policy::Random { p_max } => {
                if *p_max <= 0.0 {
                    0.0
                } else {
                    rng.gen::<f64>() * p_max
                }
            }
            Policy::Constant { level, p_max } => level.clamp(0.0, *p_max),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Policy::MeanField(_) => "mf",
            Policy::Popularity { .. } => "popularity",
            Policy::Random { .. } => "random",
            Policy::Constant { .. } => "constant",
        }
    }
}

/// Wrap a converged solve as an interpolating policy.
pub fn mf_policy(sol: &MfeSolution, grid: &Grid, p_max: f64) -> Result<Policy, PolicyError> {
    if !sol.converged {
        return Err(PolicyError::Unconverged);
    }
    Ok(Policy::MeanField(MfPolicy {
        ts: Arc::new(grid.ts.clone()),
        xs: Arc::new(grid.xs.clone()),
        qs: Arc::new(grid.qs.clone()),
        data: Arc::new(sol.policy.data.clone()),
        p_max,
        clamp_events: Arc::new(AtomicU64::new(0)),
    }))
}

/// Rebuild an interpolating policy from a previously exported control
/// field (axes plus node values).
pub fn mf_policy_from_field(
    ts: Vec<f64>,
    xs: Vec<f64>,
    qs: Vec<f64>,
    data: ndarray::Array3<f64>,
    p_max: f64,
) -> Result<Policy, PolicyError> {
    if data.dim() != (ts.len(), xs.len(), qs.len()) {
        return Err(PolicyError::Invalid(format!(
            "field shape {:?} does not match axes ({}, {}, {})",
            data.dim(),
            ts.len(),
            xs.len(),
            qs.len()
        )));
    }
    if ts.is_empty() || xs.is_empty() || qs.is_empty() {
        return Err(PolicyError::Invalid("empty field axes".into()));
    }
    Ok(Policy::MeanField(MfPolicy {
        ts: Arc::new(ts),
        xs: Arc::new(xs),
        qs: Arc::new(qs),
        data: Arc::new(data),
        p_max,
        clamp_events: Arc::new(AtomicU64::new(0)),
    }))
}

/// Uniform-random controller on [0, p_max].
pub fn random_policy(p_max: f64) -> Policy {
    Policy::Random { p_max }
}

/// Evaluate every constant level {0, Δ, 2Δ, ...} ∩ [0, p_max] with the
/// supplied estimator and return the argmin plus the full table. The
/// estimator must apply common random numbers itself so the comparison is
/// paired; ties resolve toward the smaller level.
pub fn exhaustive_search<F>(
    delta: f64,
    p_max: f64,
    evaluate: F,
) -> Result<(f64, Vec<(f64, f64)>), PolicyError>
where
    F: Fn(f64) -> f64 + Sync,
{
    if !(delta > 0.0) {
        return Err(PolicyError::Invalid(format!(
            "candidate spacing must be positive, got {delta}"
        )));
    }
    if p_max < 0.0 {
        return Err(PolicyError::Invalid(format!(
            "p_max must be non-negative, got {p_max}"
        )));
    }
    let mut candidates = Vec::new();
    let mut k = 0usize;
    loop {
        let level = delta * k as f64;
        if level > p_max {
            break;
        }
        candidates.push(level);
        k += 1;
    }
    if candidates.is_empty() {
        return Err(PolicyError::Invalid("empty candidate set".into()));
    }
    use rayon::prelude::*;
    let table: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&level| (level, evaluate(level)))
        .collect();
    let mut best = table[0];
    for &(level, cost) in &table[1..] {
        if cost < best.1 {
            best = (level, cost);
        }
    }
    Ok((best.0, table))
}
