//! Finite-difference sweeps: the modified backward value equation with the
//! closed-form infimum substituted node-by-node, and the forward transport
//! of the state density in conservative flux form.
//!
//! Both use first-order upwinding for advection and centered second
//! differences for the popularity diffusion. The value sweep is
//! non-conservative; the density sweep conserves mass to round-off by
//! construction (no-flux outer faces, telescoping interior fluxes).

use ndarray::{Array2, Array3};

use crate::cost::{instantaneous_cost, TerminalCost};
use crate::dynamics::{CacheSpec, ContentSpec};

use super::grid::Grid;
use super::{optimal_control, ScalarField, SolverError};

/// Backward sweep of the value equation. Returns the value field and the
/// control field extracted through the optimal-control formula at every
/// node. The control stored at time index n is derived from the value
/// slice at n+1 (the slice the explicit step differences), except at the
/// terminal slice which differences itself.
pub fn hjb_backward(
    grid: &Grid,
    i_r_path: &[f64],
    se: f64,
    content: &ContentSpec,
    cache: &CacheSpec,
    kappa: &TerminalCost,
    static_x: bool,
) -> Result<(ScalarField, ScalarField), SolverError> {
    let (nt, nx, nq) = (grid.n_t(), grid.n_x(), grid.n_q());
    assert_eq!(i_r_path.len(), nt, "replication path must cover every time node");
    let (dt, dx, dq) = (grid.dt, grid.dx, grid.dq);
    let mut v = Array3::<f64>::zeros((nt, nx, nq));
    let mut p = Array3::<f64>::zeros((nt, nx, nq));
    let eta2_half = 0.5 * content.eta * content.eta;
    let bx = content.drift();

    // terminal condition and terminal-slice control
    for i in 0..nx {
        for j in 0..nq {
            v[[nt - 1, i, j]] = kappa.eval(grid.qs[j], cache);
        }
    }
    for i in 0..nx {
        for j in 0..nq {
            let dvdq = one_sided_q(&v, nt - 1, i, j, dq);
            p[[nt - 1, i, j]] =
                optimal_control(dvdq, i_r_path[nt - 1], se, grid.xs[i], content, cache);
        }
    }

    for n in (0..nt - 1).rev() {
        let i_r = i_r_path[n];
        for i in 0..nx {
            let x = grid.xs[i];
            for j in 0..nq {
                let dvdq_minus = one_sided_q(&v, n + 1, i, j, dq);
                let dvdq_plus = if j + 1 < nq {
                    (v[[n + 1, i, j + 1]] - v[[n + 1, i, j]]) / dq
                } else {
                    (v[[n + 1, i, nq - 1]] - v[[n + 1, i, nq - 2]]) / dq
                };
                let pstar = optimal_control(dvdq_minus, i_r, se, x, content, cache);

                // split upwinding: the discard drift +mu looks forward, the
                // download drift -L p* looks backward
                let adv_q =
                    cache.discard_mu * dvdq_plus - content.size_l * pstar * dvdq_minus;

                let mut rhs = adv_q
                    + instantaneous_cost(pstar, i_r, se, x, grid.qs[j], content, cache).total;

                if !static_x {
                    if bx > 0.0 {
                        let dvdx = if i + 1 < nx {
                            (v[[n + 1, i + 1, j]] - v[[n + 1, i, j]]) / dx
                        } else {
                            (v[[n + 1, i, j]] - v[[n + 1, i - 1, j]]) / dx
                        };
                        rhs += bx * dvdx;
                    } else if bx < 0.0 {
                        let dvdx = if i > 0 {
                            (v[[n + 1, i, j]] - v[[n + 1, i - 1, j]]) / dx
                        } else {
                            (v[[n + 1, i + 1, j]] - v[[n + 1, i, j]]) / dx
                        };
                        rhs += bx * dvdx;
                    }
                    if eta2_half > 0.0 {
                        // centered diffusion; reflected neighbor at the edges
                        let d2 = if i == 0 {
                            2.0 * (v[[n + 1, 1, j]] - v[[n + 1, 0, j]]) / (dx * dx)
                        } else if i == nx - 1 {
                            2.0 * (v[[n + 1, nx - 2, j]] - v[[n + 1, nx - 1, j]]) / (dx * dx)
                        } else {
                            (v[[n + 1, i + 1, j]] - 2.0 * v[[n + 1, i, j]] + v[[n + 1, i - 1, j]])
                                / (dx * dx)
                        };
                        rhs += eta2_half * d2;
                    }
                }

                let val = v[[n + 1, i, j]] + dt * rhs;
                if !val.is_finite() {
                    return Err(SolverError::Divergence {
                        step: n,
                        what: "value",
                    });
                }
                v[[n, i, j]] = val;
                p[[n, i, j]] = pstar;
            }
        }
    }
    Ok((ScalarField { data: v }, ScalarField { data: p }))
}

/// One-sided storage derivative of the value slice toward smaller Q, with
/// the interior stencil reused at the Q = 0 boundary.
pub fn one_sided_q(v: &Array3<f64>, n: usize, i: usize, j: usize, dq: f64) -> f64 {
    if j > 0 {
        (v[[n, i, j]] - v[[n, i, j - 1]]) / dq
    } else {
        (v[[n, i, 1]] - v[[n, i, 0]]) / dq
    }
}

/// Forward sweep of the state density in conservative flux form with
/// no-flux boundaries on all four edges.
pub fn fpk_forward(
    grid: &Grid,
    policy: &ScalarField,
    content: &ContentSpec,
    cache: &CacheSpec,
    m0: &Array2<f64>,
    static_x: bool,
) -> Result<ScalarField, SolverError> {
    let (nt, nx, nq) = (grid.n_t(), grid.n_x(), grid.n_q());
    let (dt, dx) = (grid.dt, grid.dx);
    let eta2_half = 0.5 * content.eta * content.eta;
    let bx = content.drift();

    if m0.dim() != (nx, nq) {
        return Err(SolverError::BadInput(format!(
            "initial density has shape {:?}, grid expects ({nx}, {nq})",
            m0.dim()
        )));
    }
    let mass0 = grid.mass(m0.view());
    if (mass0 - 1.0).abs() > 1e-8 {
        return Err(SolverError::BadInput(format!(
            "initial density mass {mass0} is not 1"
        )));
    }
    if m0.iter().any(|&v| v < 0.0) {
        return Err(SolverError::BadInput("initial density has negative entries".into()));
    }

    let mut m = Array3::<f64>::zeros((nt, nx, nq));
    for i in 0..nx {
        for j in 0..nq {
            m[[0, i, j]] = m0[[i, j]];
        }
    }

    // face fluxes, reused per step
    let mut fq = Array2::<f64>::zeros((nx, nq - 1));
    let mut fx = Array2::<f64>::zeros((nx.saturating_sub(1), nq));

    for n in 0..nt - 1 {
        for i in 0..nx {
            for j in 0..nq - 1 {
                let p_face = 0.5 * (policy.data[[n, i, j]] + policy.data[[n, i, j + 1]]);
                let b = cache.discard_mu - content.size_l * p_face;
                fq[[i, j]] = if b >= 0.0 {
                    b * m[[n, i, j]]
                } else {
                    b * m[[n, i, j + 1]]
                };
            }
        }
        if !static_x {
            for i in 0..nx - 1 {
                for j in 0..nq {
                    let adv = if bx >= 0.0 {
                        bx * m[[n, i, j]]
                    } else {
                        bx * m[[n, i + 1, j]]
                    };
                    let dif = -eta2_half * (m[[n, i + 1, j]] - m[[n, i, j]]) / dx;
                    fx[[i, j]] = adv + dif;
                }
            }
        }
        let mut mass = 0.0;
        for i in 0..nx {
            for j in 0..nq {
                let fq_r = if j < nq - 1 { fq[[i, j]] } else { 0.0 };
                let fq_l = if j > 0 { fq[[i, j - 1]] } else { 0.0 };
                let mut div = (fq_r - fq_l) / grid.wq[j];
                if !static_x {
                    let fx_r = if i < nx - 1 { fx[[i, j]] } else { 0.0 };
                    let fx_l = if i > 0 { fx[[i - 1, j]] } else { 0.0 };
                    div += (fx_r - fx_l) / grid.wx[i];
                }
                let val = m[[n, i, j]] - dt * div;
                if val < -1e-12 {
                    return Err(SolverError::NegativeDensity { step: n, value: val });
                }
                m[[n + 1, i, j]] = val;
                mass += grid.wx[i] * grid.wq[j] * val;
            }
        }
        if (mass - 1.0).abs() > 1e-9 {
            return Err(SolverError::MassLoss {
                step: n,
                error: (mass - 1.0).abs(),
            });
        }
    }
    Ok(ScalarField { data: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{build_grid, GridSpec};

    fn content() -> ContentSpec {
        ContentSpec {
            u_rate: 0.1,
            a_rate: 0.15,
            eta: 0.1,
            size_l: 1.0,
            n_similar: 20,
            x0: 0.3,
        }
    }

    fn cache() -> CacheSpec {
        CacheSpec {
            capacity_c: 1.0,
            discard_mu: 0.1,
            gamma: 0.01,
            backhaul_b: 1.0,
            q0: 0.7,
        }
    }

    fn grid(nt: usize, nx: usize, nq: usize, horizon: f64) -> Grid {
        build_grid(
            &GridSpec {
                horizon_t: horizon,
                n_t: nt,
                x_min: 0.01,
                x_max: 0.99,
                n_x: nx,
                q_max: 1.0,
                n_q: nq,
            },
            0.05,
            1.099,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn constant_terminal_with_zero_running_cost_stays_constant() {
        // gamma = 0 kills the storage cost; B = 1 and p* = 0 kill the
        // backhaul term; a constant terminal value must propagate as-is.
        let g = grid(60, 11, 13, 0.25);
        let ct = content();
        let ca = CacheSpec {
            gamma: 0.0,
            ..cache()
        };
        let kappa = TerminalCost::OccupiedLinear { weight: 0.0 };
        let i_r = vec![0.0; g.n_t()];
        let (v, p) = hjb_backward(&g, &i_r, 0.9, &ct, &ca, &kappa, false).unwrap();
        // kappa == 0 means terminal value 0 everywhere
        for val in v.data.iter() {
            assert!(val.abs() < 1e-14, "value drifted to {val}");
        }
        for val in p.data.iter() {
            assert_eq!(*val, 0.0);
        }
    }

    #[test]
    fn stationary_characteristics_integrate_running_cost() {
        // eta = 0, u = a, mu = 0 and p* = 0: the equation collapses to
        // dv/dt = -psi(Q), so v(t,Q) = psi(Q) (T - t).
        let g = grid(400, 5, 21, 1.0);
        let ct = ContentSpec {
            eta: 0.0,
            a_rate: 0.1,
            ..content()
        };
        let ca = CacheSpec {
            discard_mu: 0.0,
            ..cache()
        };
        let i_r = vec![0.0; g.n_t()];
        let (v, _) = hjb_backward(&g, &i_r, 0.9, &ct, &ca, &TerminalCost::Zero, false).unwrap();
        for j in 0..g.n_q() {
            let psi = crate::cost::storage_cost(g.qs[j], &ca);
            let want = psi * 1.0;
            let got = v.data[[0, 2, j]];
            assert!(
                (got - want).abs() < 5.0 * g.dt,
                "v(0, q_{j}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn fpk_static_density_without_forcing() {
        // zero drift and diffusion: the density must not move at all
        let g = grid(50, 9, 17, 0.25);
        let ct = ContentSpec {
            eta: 0.0,
            a_rate: 0.1,
            ..content()
        };
        let ca = CacheSpec {
            discard_mu: 0.0,
            ..cache()
        };
        let p = ScalarField::zeros(&g);
        let m0 = crate::solver::initial_density(&g, 0.3, 0.7, 0.05);
        let m = fpk_forward(&g, &p, &ct, &ca, &m0, false).unwrap();
        for n in 0..g.n_t() {
            for i in 0..g.n_x() {
                for j in 0..g.n_q() {
                    assert!((m.data[[n, i, j]] - m0[[i, j]]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn fpk_transports_pulse_at_constant_rate() {
        // eta = 0, u = a, constant p: a narrow pulse moves along Q at
        // rate mu - L p; its center of mass tracks it exactly until the
        // boundary is reached.
        let g = grid(600, 3, 201, 1.0);
        let ct = ContentSpec {
            eta: 0.0,
            a_rate: 0.1,
            ..content()
        };
        let ca = cache();
        let mut p = ScalarField::zeros(&g);
        p.data.fill(0.4); // drift mu - L p = -0.3
        let m0 = crate::solver::initial_density(&g, 0.3, 0.7, 0.02);
        let m = fpk_forward(&g, &p, &ct, &ca, &m0, false).unwrap();
        let com = |n: usize| {
            let mut s = 0.0;
            for i in 0..g.n_x() {
                for j in 0..g.n_q() {
                    s += g.wx[i] * g.wq[j] * m.data[[n, i, j]] * g.qs[j];
                }
            }
            s
        };
        let c0 = com(0);
        let half = g.n_t() / 2;
        let drift = ca.discard_mu - ct.size_l * 0.4;
        let want = c0 + drift * g.ts[half];
        let got = com(half);
        assert!((got - want).abs() < 1e-10, "center {got}, want {want}");
    }

    #[test]
    fn fpk_mass_is_conserved_every_step() {
        let g = grid(300, 21, 31, 1.0);
        let ct = content();
        let ca = cache();
        let mut p = ScalarField::zeros(&g);
        p.data.fill(0.35);
        let m0 = crate::solver::initial_density(&g, 0.3, 0.7, 0.05);
        let m = fpk_forward(&g, &p, &ct, &ca, &m0, false).unwrap();
        for n in 0..g.n_t() {
            let mass = g.mass(m.data.index_axis(ndarray::Axis(0), n));
            assert!((mass - 1.0).abs() < 1e-9, "step {n} mass {mass}");
        }
        // densities stay non-negative
        assert!(m.data.iter().all(|&v| v >= -1e-12));
    }
}
