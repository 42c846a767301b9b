//! The coupled backward-value / forward-density fixed point.
//!
//! One solve handles one content: given the shared spectral efficiency and
//! the cache-unit parameters, it discretizes (t, x, Q), sweeps the value
//! equation backward with the closed-form optimal control substituted at
//! every node, transports the state density forward under that control,
//! couples the two through the replication functional, and Picard-iterates
//! with damping until the density map stabilizes.

mod grid;
mod sweeps;

pub use grid::{build_grid, stable_n_t, Grid, GridError, GridSpec};
pub use sweeps::{fpk_forward, hjb_backward, one_sided_q};

use ndarray::{Array2, Array3, Axis};
use thiserror::Error;

use crate::cost::TerminalCost;
use crate::dynamics::{CacheSpec, ContentSpec};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("{what} field diverged at time step {step}")]
    Divergence { step: usize, what: &'static str },
    #[error("density went negative ({value:.3e}) at time step {step}")]
    NegativeDensity { step: usize, value: f64 },
    #[error("mass error {error:.3e} at time step {step} exceeds 1e-9")]
    MassLoss { step: usize, error: f64 },
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

/// Dense scalar field over the (t, x, Q) lattice.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub data: Array3<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            data: Array3::zeros((grid.n_t(), grid.n_x(), grid.n_q())),
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        ScalarField {
            data: Array3::from_elem((grid.n_t(), grid.n_x(), grid.n_q()), value),
        }
    }
}

/// Converged equilibrium bundle.
#[derive(Debug, Clone)]
pub struct MfeSolution {
    pub value: ScalarField,
    pub distribution: ScalarField,
    pub policy: ScalarField,
    /// Replication level per time node, recomputed from the returned
    /// (distribution, policy) pair.
    pub i_r_path: Vec<f64>,
    /// Sup-over-t L1 distance between successive density sweeps.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: Vec<String>,
    pub grid: Grid,
}

/// Fixed-point controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub tolerance: f64,
    pub max_iters: usize,
    /// Damping weight on the density input iterate.
    pub damping: f64,
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tolerance > 0.0) {
            return Err(SolverError::BadInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolverError::BadInput(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_iters == 0 {
            return Err(SolverError::BadInput("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// What the Picard loop starts from. The density input always satisfies
/// the initial condition at t = 0 once the first forward sweep runs; these
/// only differ in the replication path seen by the first value sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialIterate {
    /// Propagate the initial density with the control frozen at zero.
    PropagateZero,
    /// Propagate with a constant control level.
    PropagateConstant(f64),
    /// Uniform density over the state box at every time.
    Uniform,
}

/// One content's solve inputs.
#[derive(Debug, Clone)]
pub struct MfeProblem<'a> {
    pub content: &'a ContentSpec,
    pub cache: &'a CacheSpec,
    /// Shared average spectral efficiency (the cost divisor).
    pub se: f64,
    pub kappa: TerminalCost,
    /// Mean of the initial remaining-storage density.
    pub m0_q_mean: f64,
    /// Standard deviation of the initial remaining-storage density.
    pub m0_q_std: f64,
}

/// Guard below which the storage derivative is treated as non-positive:
/// there the infimum's integrand increases in p, so the control is zero.
pub const DVDQ_GUARD: f64 = 1e-8;

/// Barrier margin: controls stay this fraction of B/L below the cap.
pub const BARRIER_MARGIN: f64 = 1e-3;

/// Largest admissible caching probability min(1, B/L - eps_B).
pub fn p_max(content: &ContentSpec, cache: &CacheSpec) -> f64 {
    let cap = cache.backhaul_b / content.size_l;
    (cap * (1.0 - BARRIER_MARGIN)).min(1.0)
}

/// Water-filling control: p* = (1/L) [B - (1+I^r)/(R x ∂_Q v)]^+ clamped
/// to [0, p_max], with the non-positive-derivative guard.
pub fn optimal_control(
    dv_dq: f64,
    i_r: f64,
    se: f64,
    x: f64,
    content: &ContentSpec,
    cache: &CacheSpec,
) -> f64 {
    if dv_dq <= DVDQ_GUARD {
        return 0.0;
    }
    let bracket = cache.backhaul_b - (1.0 + i_r) / (se * x * dv_dq);
    (bracket.max(0.0) / content.size_l).clamp(0.0, p_max(content, cache))
}

/// High-storage-limit control: the same water-filling formula with a
/// constant surrogate for the storage derivative.
pub fn optimal_control_high_storage(
    i_r: f64,
    se: f64,
    x: f64,
    gamma_hat: f64,
    content: &ContentSpec,
    cache: &CacheSpec,
) -> f64 {
    optimal_control(gamma_hat, i_r, se, x, content, cache)
}

/// Replication level I^r(t) = ∫∫ m p / (C N_r) dx dQ for one time slice.
pub fn replication_functional(
    m_slice: ndarray::ArrayView2<f64>,
    p_slice: ndarray::ArrayView2<f64>,
    grid: &Grid,
    content: &ContentSpec,
    cache: &CacheSpec,
) -> f64 {
    let scale = 1.0 / (cache.capacity_c * f64::from(content.n_similar));
    let mut acc = 0.0;
    for i in 0..grid.n_x() {
        for j in 0..grid.n_q() {
            acc += grid.wx[i] * grid.wq[j] * m_slice[[i, j]] * p_slice[[i, j]];
        }
    }
    acc * scale
}

/// Initial density: all popularity mass in the column nearest x0, shaped
/// over Q as a truncated normal, normalized against the cell weights.
pub fn initial_density(grid: &Grid, x0: f64, q_mean: f64, q_std: f64) -> Array2<f64> {
    let (nx, nq) = (grid.n_x(), grid.n_q());
    let mut m0 = Array2::<f64>::zeros((nx, nq));
    let i0 = grid.nearest_x(x0);
    if q_std > 0.0 {
        let mut norm = 0.0;
        let mut shape = vec![0.0; nq];
        for (j, s) in shape.iter_mut().enumerate() {
            let z = (grid.qs[j] - q_mean) / q_std;
            *s = (-0.5 * z * z).exp();
            norm += grid.wq[j] * *s;
        }
        for j in 0..nq {
            m0[[i0, j]] = shape[j] / (norm * grid.wx[i0]);
        }
    } else {
        let j0 = grid.nearest_q(q_mean);
        m0[[i0, j0]] = 1.0 / (grid.wx[i0] * grid.wq[j0]);
    }
    m0
}

/// Solve to the mean-field equilibrium starting from the zero-control
/// propagation of the initial density.
pub fn solve_mfe(
    problem: &MfeProblem,
    grid_spec: &GridSpec,
    params: &SolverParams,
) -> Result<MfeSolution, SolverError> {
    solve_mfe_from(problem, grid_spec, params, InitialIterate::PropagateZero)
}

/// Solve with an explicit starting iterate (used by the uniqueness probe).
pub fn solve_mfe_from(
    problem: &MfeProblem,
    grid_spec: &GridSpec,
    params: &SolverParams,
    init: InitialIterate,
) -> Result<MfeSolution, SolverError> {
    solve_impl(problem, grid_spec, params, init, false)
}

/// Static-popularity fast path: requires eta = 0 and u = a, drops the
/// popularity derivatives, and otherwise runs the identical loop.
pub fn static_popularity_solve(
    problem: &MfeProblem,
    grid_spec: &GridSpec,
    params: &SolverParams,
) -> Result<MfeSolution, SolverError> {
    if problem.content.eta != 0.0 || problem.content.drift() != 0.0 {
        return Err(SolverError::ContractViolation(format!(
            "static solve requires eta = 0 and u = a, got eta = {}, u - a = {}",
            problem.content.eta,
            problem.content.drift()
        )));
    }
    solve_impl(
        problem,
        grid_spec,
        params,
        InitialIterate::PropagateZero,
        true,
    )
}

fn solve_impl(
    problem: &MfeProblem,
    grid_spec: &GridSpec,
    params: &SolverParams,
    init: InitialIterate,
    static_x: bool,
) -> Result<MfeSolution, SolverError> {
    params.validate()?;
    problem
        .content
        .validate()
        .map_err(|e| SolverError::BadInput(e.to_string()))?;
    problem
        .cache
        .validate()
        .map_err(|e| SolverError::BadInput(e.to_string()))?;
    if !(problem.se > 0.0) {
        return Err(SolverError::BadInput(format!(
            "spectral efficiency must be positive, got {}",
            problem.se
        )));
    }
    if (grid_spec.q_max - problem.cache.capacity_c).abs() > 1e-12 {
        return Err(SolverError::BadInput(format!(
            "grid q_max = {} must equal the storage capacity {}",
            grid_spec.q_max, problem.cache.capacity_c
        )));
    }

    let content = problem.content;
    let cache = problem.cache;
    let grid = build_grid(
        grid_spec,
        content.drift().abs(),
        cache.discard_mu + content.size_l * p_max(content, cache),
        content.eta,
    )?;
    let nt = grid.n_t();
    let m0 = initial_density(&grid, content.x0, problem.m0_q_mean, problem.m0_q_std);

    // starting density iterate
    let mut m_in = match init {
        InitialIterate::PropagateZero => {
            fpk_forward(&grid, &ScalarField::zeros(&grid), content, cache, &m0, static_x)?
        }
        InitialIterate::PropagateConstant(level) => {
            let level = level.clamp(0.0, p_max(content, cache));
            fpk_forward(
                &grid,
                &ScalarField::constant(&grid, level),
                content,
                cache,
                &m0,
                static_x,
            )?
        }
        InitialIterate::Uniform => {
            let box_mass: f64 = {
                let wx: f64 = grid.wx.iter().sum();
                let wq: f64 = grid.wq.iter().sum();
                wx * wq
            };
            ScalarField::constant(&grid, 1.0 / box_mass)
        }
    };

    let mut p_prev = ScalarField::zeros(&grid);
    let mut m_ref = m_in.clone(); // compared against the next raw output
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut out: Option<(ScalarField, ScalarField, ScalarField)> = None;

    for iter in 1..=params.max_iters {
        iterations = iter;
        let i_r: Vec<f64> = (0..nt)
            .map(|n| {
                replication_functional(
                    m_in.data.index_axis(Axis(0), n),
                    p_prev.data.index_axis(Axis(0), n),
                    &grid,
                    content,
                    cache,
                )
            })
            .collect();
        let (v, p) = hjb_backward(&grid, &i_r, problem.se, content, cache, &problem.kappa, static_x)?;
        let m_out = fpk_forward(&grid, &p, content, cache, &m0, static_x)?;

        let residual = sup_l1_distance(&m_out, &m_ref, &grid);
        history.push(residual);
        if history.len() > 3 {
            let k = history.len();
            if history[k - 1] > history[k - 2] {
                diagnostics.push(format!(
                    "residual rose from {:.3e} to {:.3e} at iteration {k}",
                    history[k - 2],
                    history[k - 1]
                ));
            }
        }

        let done = residual <= params.tolerance;
        if done {
            converged = true;
        }
        if done || iter == params.max_iters {
            out = Some((v, p, m_out));
            break;
        }

        // damped Picard update of the input iterate
        let omega = params.damping;
        ndarray::Zip::from(&mut m_in.data)
            .and(&m_out.data)
            .for_each(|a, &b| *a = (1.0 - omega) * *a + omega * b);
        m_ref = m_out;
        p_prev = p;
    }

    let (value, policy, distribution) = out.expect("loop always sets the output");
    let i_r_path: Vec<f64> = (0..nt)
        .map(|n| {
            replication_functional(
                distribution.data.index_axis(Axis(0), n),
                policy.data.index_axis(Axis(0), n),
                &grid,
                content,
                cache,
            )
        })
        .collect();

    Ok(MfeSolution {
        value,
        distribution,
        policy,
        i_r_path,
        residual_history: history,
        converged,
        iterations,
        diagnostics,
        grid,
    })
}

fn sup_l1_distance(a: &ScalarField, b: &ScalarField, grid: &Grid) -> f64 {
    let nt = grid.n_t();
    let mut worst = 0.0f64;
    for n in 0..nt {
        let mut acc = 0.0;
        for i in 0..grid.n_x() {
            for j in 0..grid.n_q() {
                acc += grid.wx[i] * grid.wq[j] * (a.data[[n, i, j]] - b.data[[n, i, j]]).abs();
            }
        }
        worst = worst.max(acc);
    }
    worst
}

/// Storage derivative of the value field at a node, using the same
/// one-sided stencil and source slice as the sweep that extracted the
/// stored control there.
pub fn control_stencil_dvdq(sol: &MfeSolution, n: usize, i: usize, j: usize) -> f64 {
    let nt = sol.grid.n_t();
    let src = if n + 1 < nt { n + 1 } else { nt - 1 };
    one_sided_q(&sol.value.data, src, i, j, sol.grid.dq)
}

/// Largest relative violation of the interior first-order condition
/// L (1 + I^r) / ((B - L p) R x) = L ∂_Q v over non-clamped nodes, plus
/// the count of nodes checked.
pub fn foc_max_relative_residual(
    sol: &MfeSolution,
    se: f64,
    content: &ContentSpec,
    cache: &CacheSpec,
) -> (f64, usize) {
    let pm = p_max(content, cache);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for n in 0..sol.grid.n_t() {
        for i in 0..sol.grid.n_x() {
            for j in 0..sol.grid.n_q() {
                let p = sol.policy.data[[n, i, j]];
                if p <= 1e-9 || p >= pm - 1e-9 {
                    continue;
                }
                let dvdq = control_stencil_dvdq(sol, n, i, j);
                let lhs = content.size_l * (1.0 + sol.i_r_path[n])
                    / ((cache.backhaul_b - content.size_l * p) * se * sol.grid.xs[i]);
                let rhs = content.size_l * dvdq;
                worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
                count += 1;
            }
        }
    }
    (worst, count)
}

/// Median of the control-stencil storage derivative over all nodes.
pub fn median_dvdq(sol: &MfeSolution) -> f64 {
    let mut all = Vec::with_capacity(sol.grid.n_t() * sol.grid.n_x() * sol.grid.n_q());
    for n in 0..sol.grid.n_t() {
        for i in 0..sol.grid.n_x() {
            for j in 0..sol.grid.n_q() {
                all.push(control_stencil_dvdq(sol, n, i, j));
            }
        }
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all[all.len() / 2]
}

/// Policy-field bounds (min, max) over every node.
pub fn policy_bounds(sol: &MfeSolution) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in sol.policy.data.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}
