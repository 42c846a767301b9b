//! Instantaneous and long-run-average cost functions shared by the solver
//! and the simulator: the logarithmic backhaul barrier, the linear storage
//! cost, their combination weighted by replication and spectral efficiency,
//! and the trapezoidal time integral with terminal cost.

use crate::dynamics::{CacheSpec, ContentSpec};

/// Terminal cost κ applied to the final remaining storage.
///
/// The occupied-space form is κ(Q) = w γ (C - Q)/C; a negative weight turns
/// it into a terminal charge on unspent storage, which is what makes
/// caching worthwhile before the end of the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalCost {
    Zero,
    OccupiedLinear { weight: f64 },
}

impl TerminalCost {
    pub fn eval(&self, q: f64, cache: &CacheSpec) -> f64 {
        match self {
            TerminalCost::Zero => 0.0,
            TerminalCost::OccupiedLinear { weight } => {
                weight * cache.gamma * (cache.capacity_c - q) / cache.capacity_c
            }
        }
    }

    pub fn from_weight(weight: f64) -> Self {
        if weight == 0.0 {
            TerminalCost::Zero
        } else {
            TerminalCost::OccupiedLinear { weight }
        }
    }
}

/// Logarithmic backhaul barrier φ(p) = -log(B - L p) for L p < B, +∞ past
/// the cap. The solver relies on the saturating sentinel, not an error.
pub fn backhaul_cost(p: f64, backhaul_b: f64, size_l: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p), "p = {p}");
    let headroom = backhaul_b - size_l * p;
    if headroom > 0.0 {
        -headroom.ln()
    } else {
        f64::INFINITY
    }
}

/// Linear storage cost ψ(Q) = γ (C - Q)/C of the occupied space.
pub fn storage_cost(q: f64, cache: &CacheSpec) -> f64 {
    debug_assert!(q >= 0.0 && q <= cache.capacity_c);
    cache.gamma * (cache.capacity_c - q) / cache.capacity_c
}

/// Decomposition of the instantaneous cost
/// J = φ(p) (1 + I^r) / (R x) + ψ(Q).
#[derive(Debug, Clone, Copy)]
pub struct CostBreakdown {
    /// φ(p), the raw backhaul barrier.
    pub backhaul_term: f64,
    /// 1 + I^r.
    pub replication_factor: f64,
    /// Spectral-efficiency divisor R.
    pub se_divisor: f64,
    /// Request probability the backhaul term is normalized by.
    pub x: f64,
    /// ψ(Q).
    pub storage_term: f64,
    /// The assembled cost.
    pub total: f64,
}

impl CostBreakdown {
    /// Reassemble the total from parts; equals `total` by construction.
    pub fn recompute(&self) -> f64 {
        self.backhaul_term * self.replication_factor / (self.se_divisor * self.x)
            + self.storage_term
    }
}

/// Instantaneous cost at one state/control point.
pub fn instantaneous_cost(
    p: f64,
    i_r: f64,
    se: f64,
    x: f64,
    q: f64,
    content: &ContentSpec,
    cache: &CacheSpec,
) -> CostBreakdown {
    debug_assert!(se > 0.0 && x > 0.0 && i_r >= 0.0);
    let backhaul_term = backhaul_cost(p, cache.backhaul_b, content.size_l);
    let replication_factor = 1.0 + i_r;
    let storage_term = storage_cost(q, cache);
    let total = backhaul_term * replication_factor / (se * x) + storage_term;
    CostBreakdown {
        backhaul_term,
        replication_factor,
        se_divisor: se,
        x,
        storage_term,
        total,
    }
}

/// Long-run-average cost over one trace: trapezoidal integral of the
/// per-step totals plus the terminal cost at the final storage state.
/// Any infinite step makes the result infinite.
pub fn lra_cost(
    times: &[f64],
    totals: &[f64],
    kappa: &TerminalCost,
    cache: &CacheSpec,
    q_final: f64,
) -> f64 {
    assert_eq!(times.len(), totals.len());
    assert!(!times.is_empty(), "lra_cost needs a non-empty trace");
    let mut acc = 0.0;
    for i in 1..times.len() {
        let dt = times[i] - times[i - 1];
        acc += 0.5 * dt * (totals[i] + totals[i - 1]);
    }
    acc + kappa.eval(q_final, cache)
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn backhaul_examples() {
        assert_eq!(backhaul_cost(0.0, 1.0, 1.0), 0.0);
        assert!((backhaul_cost(0.5, 1.0, 1.0) - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert!(backhaul_cost(1.0, 1.0, 1.0).is_infinite());
        assert!(backhaul_cost(0.999_999, 1.0, 1.0).is_finite());
    }

    #[test]
    fn backhaul_monotone_and_convex_on_grid() {
        let b = 1.0;
        let l = 1.0;
        let grid: Vec<f64> = (0..=90).map(|i| i as f64 / 100.0).collect();
        for w in grid.windows(2) {
            assert!(backhaul_cost(w[1], b, l) > backhaul_cost(w[0], b, l));
        }
        for &p1 in &grid {
            for &p2 in &grid {
                for &th in &[0.25, 0.5, 0.75] {
                    let mid = backhaul_cost(th * p1 + (1.0 - th) * p2, b, l);
                    let chord = th * backhaul_cost(p1, b, l) + (1.0 - th) * backhaul_cost(p2, b, l);
                    assert!(mid <= chord + 1e-12);
                }
            }
        }
    }

    #[test]
    fn storage_cost_line() {
        let c = cache();
        assert_eq!(storage_cost(1.0, &c), 0.0);
        assert!((storage_cost(0.0, &c) - 0.01).abs() < 1e-18);
        assert!((storage_cost(0.5, &c) - 0.005).abs() < 1e-18);
    }

    #[test]
    fn instantaneous_composition() {
        let ct = content();
        let c = cache();
        // p = 0, B = 1: only the storage term survives
        let b = instantaneous_cost(0.0, 0.3, 1.0, 0.5, 0.7, &ct, &c);
        assert!((b.total - storage_cost(0.7, &c)).abs() < 1e-18);
        // replication factor doubles the backhaul contribution
        let b0 = instantaneous_cost(0.5, 0.0, 1.0, 0.5, 1.0, &ct, &c);
        let b1 = instantaneous_cost(0.5, 1.0, 1.0, 0.5, 1.0, &ct, &c);
        assert!((b1.total / b0.total - 2.0).abs() < 1e-12);
        // frozen composition: -log(0.5)/0.5 with everything else neutral
        assert!((b0.total - 1.386_294_361_119_890_6).abs() < 1e-12);
        // breakdown reassembles
        assert!((b1.recompute() - b1.total).abs() < 1e-15);
    }

    #[test]
    fn instantaneous_decreasing_in_se_and_x() {
        let ct = content();
        let c = cache();
        for i in 1..10 {
            let se = 0.2 * i as f64;
            let a = instantaneous_cost(0.4, 0.1, se, 0.5, 0.5, &ct, &c).total;
            let b = instantaneous_cost(0.4, 0.1, se + 0.1, 0.5, 0.5, &ct, &c).total;
            assert!(b < a);
            let x = 0.08 * i as f64;
            let a = instantaneous_cost(0.4, 0.1, 1.0, x, 0.5, &ct, &c).total;
            let b = instantaneous_cost(0.4, 0.1, 1.0, x + 0.05, 0.5, &ct, &c).total;
            assert!(b < a);
        }
    }

    #[test]
    fn lra_constant_and_single_step() {
        let c = cache();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.3).collect();
        let totals = vec![2.5; 11];
        let v = lra_cost(&times, &totals, &TerminalCost::Zero, &c, 1.0);
        assert!((v - 2.5 * 3.0).abs() < 1e-12);
        let v = lra_cost(&[0.0, 0.5], &[1.0, 3.0], &TerminalCost::Zero, &c, 1.0);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lra_trapezoid_second_order() {
        // smooth integrand t^2 over [0,1]: halving dt divides the error by ~4
        let c = cache();
        let run = |n: usize| {
            let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let totals: Vec<f64> = times.iter().map(|t| t * t).collect();
            (lra_cost(&times, &totals, &TerminalCost::Zero, &c, 1.0) - 1.0 / 3.0).abs()
        };
        let e1 = run(50);
        let e2 = run(100);
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn lra_additive_over_concatenation() {
        let c = cache();
        let t1 = [0.0, 0.1, 0.2];
        let v1 = [1.0, 2.0, 3.0];
        let t2 = [0.2, 0.3, 0.4];
        let v2 = [3.0, 1.0, 5.0];
        let whole_t = [0.0, 0.1, 0.2, 0.3, 0.4];
        let whole_v = [1.0, 2.0, 3.0, 1.0, 5.0];
        let kappa = TerminalCost::from_weight(-3.0);
        let a = lra_cost(&t1, &v1, &TerminalCost::Zero, &c, 0.5)
            + lra_cost(&t2, &v2, &kappa, &c, 0.5);
        let b = lra_cost(&whole_t, &whole_v, &kappa, &c, 0.5);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn lra_infinite_step_is_infinite() {
        let c = cache();
        let v = lra_cost(
            &[0.0, 0.5, 1.0],
            &[1.0, f64::INFINITY, 1.0],
            &TerminalCost::Zero,
            &c,
            1.0,
        );
        assert!(v.is_infinite());
    }

    #[test]
    fn kappa_forms() {
        let c = cache();
        assert_eq!(TerminalCost::Zero.eval(0.2, &c), 0.0);
        let k = TerminalCost::from_weight(-350.0);
        // w γ (C - Q)/C with w = -350, γ = 0.01: slope +3.5 in Q
        assert!((k.eval(1.0, &c) - 0.0).abs() < 1e-15);
        assert!((k.eval(0.0, &c) - -3.5).abs() < 1e-12);
    }
}
