//! Uniform (t, x, Q) lattice with the explicit-scheme stability check and
//! the cell weights used for conservative integration.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error(
        "CFL violation: dt = {dt:.6e} exceeds the stable limit {limit:.6e} \
         (dx = {dx:.6e}, dq = {dq:.6e}); refine n_t or coarsen the state grid"
    )]
    Cfl {
        dt: f64,
        limit: f64,
        dx: f64,
        dq: f64,
    },
}

/// Requested discretization of the (t, x, Q) box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub horizon_t: f64,
    pub n_t: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    /// Upper storage bound; the lower bound is 0.
    pub q_max: f64,
    pub n_q: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.n_t < 2 || self.n_x < 2 || self.n_q < 2 {
            return Err(GridError::Invalid(
                "n_t, n_x and n_q must all be at least 2".into(),
            ));
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            return Err(GridError::Invalid(format!(
                "horizon must be positive, got {}",
                self.horizon_t
            )));
        }
        if !(self.x_min > 0.0 && self.x_max > self.x_min) {
            return Err(GridError::Invalid(format!(
                "x bounds must satisfy 0 < x_min < x_max, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        if !(self.q_max > 0.0) {
            return Err(GridError::Invalid(format!(
                "q_max must be positive, got {}",
                self.q_max
            )));
        }
        Ok(())
    }
}

/// Realized lattice: axes, spacings, and node cell-widths (half cells at
/// the state-space boundaries so that flux-form updates conserve mass).
#[derive(Debug, Clone)]
pub struct Grid {
    pub spec: GridSpec,
    pub dt: f64,
    pub dx: f64,
    pub dq: f64,
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    pub qs: Vec<f64>,
    /// Integration weight per x node (dx, halved at the ends).
    pub wx: Vec<f64>,
    /// Integration weight per Q node.
    pub wq: Vec<f64>,
}

impl Grid {
    pub fn n_t(&self) -> usize {
        self.spec.n_t
    }
    pub fn n_x(&self) -> usize {
        self.spec.n_x
    }
    pub fn n_q(&self) -> usize {
        self.spec.n_q
    }

    /// Index of the x node nearest to `x`.
    pub fn nearest_x(&self, x: f64) -> usize {
        let i = ((x - self.spec.x_min) / self.dx).round();
        (i.max(0.0) as usize).min(self.spec.n_x - 1)
    }

    /// Index of the Q node nearest to `q`.
    pub fn nearest_q(&self, q: f64) -> usize {
        let j = (q / self.dq).round();
        (j.max(0.0) as usize).min(self.spec.n_q - 1)
    }

    /// Mass of a distribution slice under the cell weights.
    pub fn mass(&self, slice: ndarray::ArrayView2<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.spec.n_x {
            for j in 0..self.spec.n_q {
                acc += self.wx[i] * self.wq[j] * slice[[i, j]];
            }
        }
        acc
    }
}

/// Build the lattice and enforce the explicit-scheme stability bound
///
///   dt ( 2 |b_x|/dx + 2 |b_Q|/dq + η²/dx² ) ≤ 0.9,
///
/// where the factors of two account for the half-width boundary cells of
/// the conservative transport update.
pub fn build_grid(
    spec: &GridSpec,
    max_drift_x: f64,
    max_drift_q: f64,
    eta: f64,
) -> Result<Grid, GridError> {
    spec.validate()?;
    let dt = spec.horizon_t / (spec.n_t - 1) as f64;
    let dx = (spec.x_max - spec.x_min) / (spec.n_x - 1) as f64;
    let dq = spec.q_max / (spec.n_q - 1) as f64;
    let rate = 2.0 * max_drift_x.abs() / dx + 2.0 * max_drift_q.abs() / dq + eta * eta / (dx * dx);
    if rate > 0.0 {
        let limit = 0.9 / rate;
        if dt > limit {
            return Err(GridError::Cfl { dt, limit, dx, dq });
        }
    }
    let ts = (0..spec.n_t).map(|n| n as f64 * dt).collect();
    let xs = (0..spec.n_x).map(|i| spec.x_min + i as f64 * dx).collect();
    let qs = (0..spec.n_q).map(|j| j as f64 * dq).collect();
    let mut wx = vec![dx; spec.n_x];
    wx[0] = dx / 2.0;
    wx[spec.n_x - 1] = dx / 2.0;
    let mut wq = vec![dq; spec.n_q];
    wq[0] = dq / 2.0;
    wq[spec.n_q - 1] = dq / 2.0;
    Ok(Grid {
        spec: spec.clone(),
        dt,
        dx,
        dq,
        ts,
        xs,
        qs,
        wx,
        wq,
    })
}

/// Smallest n_t for which the stability bound holds with some slack.
pub fn stable_n_t(spec: &GridSpec, max_drift_x: f64, max_drift_q: f64, eta: f64) -> usize {
    let dx = (spec.x_max - spec.x_min) / (spec.n_x - 1) as f64;
    let dq = spec.q_max / (spec.n_q - 1) as f64;
    let rate = 2.0 * max_drift_x.abs() / dx + 2.0 * max_drift_q.abs() / dq + eta * eta / (dx * dx);
    if rate <= 0.0 {
        return spec.n_t.max(2);
    }
    let dt_target = 0.75 / rate;
    let needed = (spec.horizon_t / dt_target).ceil() as usize + 1;
    needed.max(spec.n_t).max(2)
}
