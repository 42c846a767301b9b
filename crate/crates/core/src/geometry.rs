//! Stochastic-geometry layer: Poisson point-process sampling over the
//! reception ball, the clamped path-loss channel, active-SBS probability,
//! the densification-normalized mean-field interference, and the average
//! downlink spectral efficiency.
//!
//! All operations are pure given an explicit random source; none of them
//! touches ambient state.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::seeds;
use crate::special::{exp_e1_scaled, gauss_laguerre};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Densities, reception-ball radius, channel and radio constants for the
/// ultra-dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// SBS density per unit area.
    pub lambda_b: f64,
    /// User density per unit area.
    pub lambda_u: f64,
    /// Reception-ball radius.
    pub radius_r: f64,
    /// Path-loss exponent; must exceed 2 or the normalized interference
    /// integral diverges.
    pub alpha: f64,
    /// Transmit antenna count N_a. The sectored beam has main-lobe gain
    /// N_a and width 2π/√N_a.
    pub n_antennas: u32,
    /// Per-SBS transmit power.
    pub tx_power: f64,
    /// Noise power at the receiver.
    pub noise_power: f64,
}

impl NetworkParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let err = |m: String| Err(GeometryError::InvalidParameter(m));
        if !(self.lambda_b.is_finite() && self.lambda_b > 0.0) {
            return err(format!("lambda_b must be positive, got {}", self.lambda_b));
        }
        if !(self.lambda_u.is_finite() && self.lambda_u > 0.0) {
            return err(format!("lambda_u must be positive, got {}", self.lambda_u));
        }
        if !(self.radius_r.is_finite() && self.radius_r > 0.0) {
            return err(format!("radius must be positive, got {}", self.radius_r));
        }
        if !(self.alpha.is_finite() && self.alpha > 2.0) {
            return err(format!("alpha must exceed 2, got {}", self.alpha));
        }
        if self.n_antennas < 1 {
            return err("n_antennas must be at least 1".into());
        }
        if !(self.tx_power.is_finite() && self.tx_power > 0.0) {
            return err(format!("tx_power must be positive, got {}", self.tx_power));
        }
        if !(self.noise_power.is_finite() && self.noise_power >= 0.0) {
            return err(format!(
                "noise_power must be non-negative, got {}",
                self.noise_power
            ));
        }
        Ok(())
    }

    /// Non-fatal advisories, e.g. leaving the ultra-dense regime.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lambda_b < self.lambda_u {
            out.push(format!(
                "lambda_b = {} below lambda_u = {}: outside the ultra-dense regime",
                self.lambda_b, self.lambda_u
            ));
        }
        out
    }
}

/// Points of one point-process draw inside an origin-centered disk.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub points: Vec<[f64; 2]>,
    pub radius: f64,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One fading power sample |g|^2, unit mean under the Rayleigh default.
#[derive(Debug, Clone, Copy)]
pub struct FadingDraw {
    pub gain: f64,
}

/// Draw |g|^2 ~ Exp(1) (Rayleigh amplitude with unit mean power).
pub fn rayleigh_gain<R: Rng + ?Sized>(rng: &mut R) -> FadingDraw {
    FadingDraw {
        gain: Exp1.sample(rng),
    }
}

/// Sample a homogeneous PPP of the given density on the origin-centered
/// disk of the given radius: Poisson count, i.i.d. uniform positions.
pub fn sample_ppp<R: Rng + ?Sized>(
    density: f64,
    radius: f64,
    rng: &mut R,
) -> Result<PointSet, GeometryError> {
    if !density.is_finite() || density < 0.0 {
        return Err(GeometryError::InvalidParameter(format!(
            "ppp density must be finite and non-negative, got {density}"
        )));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(GeometryError::InvalidParameter(format!(
            "ppp radius must be finite and positive, got {radius}"
        )));
    }
    let mean = density * PI * radius * radius;
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| GeometryError::InvalidParameter(format!("poisson mean {mean}: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let r = radius * rng.gen::<f64>().sqrt();
        let th = TAU * rng.gen::<f64>();
        points.push([r * th.cos(), r * th.sin()]);
    }
    Ok(PointSet { points, radius })
}

/// Clamped power-law attenuation min(1, d^{-alpha}).
pub fn path_loss(distance: f64, alpha: f64) -> f64 {
    debug_assert!(distance >= 0.0 && alpha > 2.0);
    distance.powf(-alpha).min(1.0)
}

/// Probability that an SBS has at least one associated user and transmits:
/// p_a ≈ 1 - [1 + λ_u/(3.5 λ_b)]^{-3.5}.
pub fn active_probability(net: &NetworkParams) -> f64 {
    1.0 - (1.0 + net.lambda_u / (3.5 * net.lambda_b)).powf(-3.5)
}

/// Deterministic densification limit of the aggregate interference,
/// normalized by SBS density and antenna count:
///
/// (λ_u π R)^2 N_a^{-1/2} λ_b^{-α/2} (1 + (1 - R^{2-α})/(α-2)) P E|g|^2
pub fn mean_field_interference(net: &NetworkParams) -> Result<f64, GeometryError> {
    if net.alpha <= 2.0 {
        return Err(GeometryError::InvalidParameter(format!(
            "alpha must exceed 2 for a convergent interference integral, got {}",
            net.alpha
        )));
    }
    let lu_pi_r = net.lambda_u * PI * net.radius_r;
    let tail = (1.0 - net.radius_r.powf(2.0 - net.alpha)) / (net.alpha - 2.0);
    Ok(lu_pi_r * lu_pi_r
        * f64::from(net.n_antennas).powf(-0.5)
        * net.lambda_b.powf(-net.alpha / 2.0)
        * (1.0 + tail)
        * net.tx_power)
}

/// Aggregate interference at the origin from one realized set of active
/// SBSs, with fresh unit-mean fading per interferer.
pub fn empirical_interference<R: Rng + ?Sized>(
    points: &PointSet,
    net: &NetworkParams,
    rng: &mut R,
) -> f64 {
    points
        .points
        .iter()
        .map(|p| {
            let d = (p[0] * p[0] + p[1] * p[1]).sqrt();
            net.tx_power * path_loss(d, net.alpha) * rayleigh_gain(rng).gain
        })
        .sum()
}

/// Normalization constant that maps the raw ball-process interference mean
/// onto the density-normalized scale of [`mean_field_interference`].
///
/// The raw mean over the reception ball is p_a λ_b π (1 + 2 S) P with
/// S = (1 - R^{2-α})/(α-2); dividing by N_a^{1/2} λ_b^{α/2} and the
/// ball constant λ_u π R^2 (1+2S)/(1+S) leaves exactly p_a λ_b / λ_u times
/// the closed form, which tends to 1 as the network densifies.
pub fn interference_normalization(net: &NetworkParams) -> f64 {
    let s = (1.0 - net.radius_r.powf(2.0 - net.alpha)) / (net.alpha - 2.0);
    let ball = net.lambda_u * PI * net.radius_r * net.radius_r;
    ball * (1.0 + s) / (1.0 + 2.0 * s)
        * f64::from(net.n_antennas).powf(-0.5)
        * net.lambda_b.powf(-net.alpha / 2.0)
}

/// Monte Carlo mean of the normalized empirical interference over draws of
/// the active-SBS process at density p_a λ_b. Deterministic given the seed;
/// draws are distributed over worker threads in fixed chunks.
pub fn normalized_empirical_interference_mean(
    net: &NetworkParams,
    n_draws: u64,
    seed: u64,
) -> Result<f64, GeometryError> {
    net.validate()?;
    let density = active_probability(net) * net.lambda_b;
    let norm = interference_normalization(net);
    const CHUNK: u64 = 1 << 16;
    let n_chunks = n_draws.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeds::stream2(seed, 0x9e0, c);
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_draws);
            let mut acc = 0.0;
            for _ in lo..hi {
                let pts = sample_ppp(density, net.radius_r, &mut rng)
                    .expect("validated parameters cannot fail");
                acc += empirical_interference(&pts, net, &mut rng);
            }
            acc
        })
        .collect();
    let total: f64 = partials.iter().sum();
    Ok(total / n_draws as f64 * norm)
}

/// Instantaneous SINR under the sectored beam model:
/// N_a S / (σ² + (θ_{N_a}/2π) N_a I) with θ_{N_a} = 2π/√N_a.
///
/// Returns an infinite sentinel when both noise and interference vanish.
pub fn sinr(signal: f64, interference: f64, net: &NetworkParams) -> f64 {
    debug_assert!(signal >= 0.0 && interference >= 0.0);
    let na = f64::from(net.n_antennas);
    let denom = net.noise_power + na.sqrt() * interference;
    if denom == 0.0 {
        return f64::INFINITY;
    }
    na * signal / denom
}

/// Average downlink spectral efficiency (nats per channel use):
/// E[log(1 + S/(σ²/(N_a λ_b^{α/2}) + Î))] with S = P|g|², |g|² ~ Exp(1).
/// Closed form e^{1/a} E1(1/a), a = P / (σ²/(N_a λ_b^{α/2}) + Î).
pub fn spectral_efficiency(net: &NetworkParams, mf_interference: f64) -> Result<f64, GeometryError> {
    if !(mf_interference >= 0.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "mean-field interference must be non-negative, got {mf_interference}"
        )));
    }
    let na = f64::from(net.n_antennas);
    let noise_norm = net.noise_power / (na * net.lambda_b.powf(net.alpha / 2.0));
    let a = net.tx_power / (noise_norm + mf_interference);
    if !(a > 0.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "spectral-efficiency scale must be positive, got {a}"
        )));
    }
    Ok(exp_e1_scaled(1.0 / a))
}

/// Same average rate through the 64-point Gauss-Laguerre rule; used as an
/// independent route to cross-check the E1 closed form.
pub fn spectral_efficiency_quadrature(
    net: &NetworkParams,
    mf_interference: f64,
) -> Result<f64, GeometryError> {
    let na = f64::from(net.n_antennas);
    let noise_norm = net.noise_power / (na * net.lambda_b.powf(net.alpha / 2.0));
    let a = net.tx_power / (noise_norm + mf_interference);
    if !(a > 0.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "spectral-efficiency scale must be positive, got {a}"
        )));
    }
    let (xs, ws) = gauss_laguerre(64);
    Ok(ws.iter().zip(&xs).map(|(w, x)| w * (a * x).ln_1p()).sum())
}
