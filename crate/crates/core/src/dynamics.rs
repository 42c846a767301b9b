//! Temporal state evolution: the popularity SDE
//! dx = (u - a) dt + η dW with reflecting bounds, and the storage ODE
//! dQ = (μ - L p) dt clamped to [0, C], both advanced by Euler-Maruyama.

use thiserror::Error;

/// Popularity lower bound; keeps the 1/x cost factor finite and matches the
/// no-flux boundary of the distribution solver.
pub const X_MIN: f64 = 0.01;
/// Popularity upper bound.
pub const X_MAX: f64 = 0.99;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

/// Per-content demand and size parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentSpec {
    /// Popularity increment rate u.
    pub u_rate: f64,
    /// Popularity decrement rate a.
    pub a_rate: f64,
    /// Popularity volatility η.
    pub eta: f64,
    /// File size L.
    pub size_l: f64,
    /// Cardinality of the similarity class N_r: contents whose request
    /// probability is asymptotically equal to this one's.
    pub n_similar: u32,
    /// Initial request probability.
    pub x0: f64,
}

impl ContentSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let err = |m: String| Err(DynamicsError::InvalidParameter(m));
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return err(format!("eta must be non-negative, got {}", self.eta));
        }
        if !(self.size_l.is_finite() && self.size_l > 0.0) {
            return err(format!("size must be positive, got {}", self.size_l));
        }
        if self.n_similar < 1 {
            return err("n_similar must be at least 1".into());
        }
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return err(format!("x0 must lie in (0,1), got {}", self.x0));
        }
        if !(self.u_rate.is_finite() && self.a_rate.is_finite()) {
            return err("popularity rates must be finite".into());
        }
        Ok(())
    }

    pub fn drift(&self) -> f64 {
        self.u_rate - self.a_rate
    }
}

/// Per-content cache-unit parameters of the representative SBS.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheSpec {
    /// Storage unit size C.
    pub capacity_c: f64,
    /// Discard rate μ (storage per time).
    pub discard_mu: f64,
    /// Storage-cost weight γ.
    pub gamma: f64,
    /// Backhaul cap B (storage per time).
    pub backhaul_b: f64,
    /// Initial remaining storage.
    pub q0: f64,
}

impl CacheSpec {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let err = |m: String| Err(DynamicsError::InvalidParameter(m));
        if !(self.capacity_c.is_finite() && self.capacity_c > 0.0) {
            return err(format!("capacity must be positive, got {}", self.capacity_c));
        }
        if !(self.discard_mu.is_finite() && self.discard_mu >= 0.0) {
            return err(format!(
                "discard rate must be non-negative, got {}",
                self.discard_mu
            ));
        }
        if !(self.backhaul_b.is_finite() && self.backhaul_b > 0.0) {
            return err(format!("backhaul cap must be positive, got {}", self.backhaul_b));
        }
        if !(self.q0 >= 0.0 && self.q0 <= self.capacity_c) {
            return err(format!(
                "q0 must lie in [0, {}], got {}",
                self.capacity_c, self.q0
            ));
        }
        if !self.gamma.is_finite() {
            return err("gamma must be finite".into());
        }
        Ok(())
    }
}

/// Fold a value back into [lo, hi] by reflection at the bounds.
pub fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(hi > lo);
    let mut y = x;
    for _ in 0..64 {
        if y < lo {
            y = 2.0 * lo - y;
        } else if y > hi {
            y = 2.0 * hi - y;
        } else {
            return y;
        }
    }
    // Excursion many spans wide: fall back to clamping.
    y.clamp(lo, hi)
}

/// One Euler-Maruyama step of the popularity SDE with reflection into
/// [X_MIN, X_MAX]. `noise` is a standard normal draw.
pub fn popularity_step(
    x: f64,
    spec: &ContentSpec,
    dt: f64,
    noise: f64,
) -> Result<f64, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let next = x + spec.drift() * dt + spec.eta * dt.sqrt() * noise;
    Ok(reflect(next, X_MIN, X_MAX))
}

/// One Euler step of the storage ODE, clamped to [0, C].
pub fn storage_step(
    q: f64,
    p: f64,
    spec: &ContentSpec,
    cache: &CacheSpec,
    dt: f64,
) -> Result<f64, DynamicsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DynamicsError::ContractViolation(format!(
            "caching probability {p} outside [0,1]"
        )));
    }
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    Ok((q + (cache.discard_mu - spec.size_l * p) * dt).clamp(0.0, cache.capacity_c))
}

/// Joint trajectory of every content's (x, Q, p) over n_steps + 1 time
/// points including t = 0.
#[derive(Debug, Clone)]
pub struct StateTrace {
    pub times: Vec<f64>,
    /// Per content: request probability path, length n_steps + 1.
    pub xs: Vec<Vec<f64>>,
    /// Per content: remaining-storage path, length n_steps + 1.
    pub qs: Vec<Vec<f64>>,
    /// Per content: applied caching probability, length n_steps + 1
    /// (the terminal entry repeats the last decision for alignment).
    pub ps: Vec<Vec<f64>>,
}

/// Advance all contents jointly under a per-step decision rule.
///
/// `decide(content_index, t, x, q)` is queried once per content per step;
/// a decision outside [0,1] aborts with the offending step index.
pub fn simulate_trajectory<R, F>(
    contents: &[ContentSpec],
    cache: &CacheSpec,
    mut decide: F,
    horizon: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<StateTrace, DynamicsError>
where
    R: rand::Rng + ?Sized,
    F: FnMut(usize, f64, f64, f64) -> f64,
{
    if n_steps < 1 {
        return Err(DynamicsError::InvalidParameter(
            "n_steps must be at least 1".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let dt = horizon / n_steps as f64;
    let m = contents.len();
    let mut xs: Vec<Vec<f64>> = contents.iter().map(|c| vec![c.x0]).collect();
    let mut qs: Vec<Vec<f64>> = (0..m).map(|_| vec![cache.q0]).collect();
    let mut ps: Vec<Vec<f64>> = (0..m).map(|_| Vec::with_capacity(n_steps + 1)).collect();
    let mut times = Vec::with_capacity(n_steps + 1);
    times.push(0.0);

    for step in 0..n_steps {
        let t = step as f64 * dt;
        for (j, content) in contents.iter().enumerate() {
            let x = *xs[j].last().unwrap();
            let q = *qs[j].last().unwrap();
            let p = decide(j, t, x, q);
            if !(0.0..=1.0).contains(&p) {
                return Err(DynamicsError::ContractViolation(format!(
                    "policy returned p = {p} outside [0,1] at step {step}, content {j}"
                )));
            }
            let noise: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            xs[j].push(popularity_step(x, content, dt, noise)?);
            qs[j].push(storage_step(q, p, content, cache, dt)?);
            ps[j].push(p);
        }
        times.push((step + 1) as f64 * dt);
    }
    for p in &mut ps {
        let last = *p.last().unwrap_or(&0.0);
        p.push(last);
    }
    Ok(StateTrace { times, xs, qs, ps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

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
    fn deterministic_popularity_drift() {
        // eta = 0: x(1) = 0.3 + (0.1 - 0.15) = 0.25 after 100 substeps
        let mut spec = content();
        spec.eta = 0.0;
        let mut x = 0.3;
        let dt = 1.0 / 100.0;
        for _ in 0..100 {
            x = popularity_step(x, &spec, dt, 0.0).unwrap();
        }
        assert!((x - 0.25).abs() < 1e-12, "x(1) = {x}");
    }

    #[test]
    fn zero_drift_keeps_x() {
        let mut spec = content();
        spec.eta = 0.0;
        spec.a_rate = spec.u_rate;
        let x = popularity_step(0.4, &spec, 0.37, 0.0).unwrap();
        assert_eq!(x, 0.4);
    }

    #[test]
    fn popularity_mean_matches_gaussian_law() {
        // Mean of x(1) over 1e5 one-step paths stays within 3 standard
        // errors of the analytic mean 0.25 (reflection negligible there).
        let spec = content();
        let n = 100_000;
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut sum = 0.0;
        for _ in 0..n {
            let mut x = 0.3;
            let dt = 0.01;
            for _ in 0..100 {
                let z: f64 =
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                x = popularity_step(x, &spec, dt, z).unwrap();
            }
            sum += x;
        }
        let mean = sum / n as f64;
        let se = 0.1 / (n as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn reflection_never_escapes() {
        // strong downward drift pressing against the lower bound
        let spec = ContentSpec {
            u_rate: 0.0,
            a_rate: 2.0,
            eta: 0.3,
            ..content()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for path in 0..100_000u64 {
            let mut x = 0.05;
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            x = popularity_step(x, &spec, 0.01, z).unwrap();
            assert!((X_MIN..=X_MAX).contains(&x), "path {path} escaped: {x}");
        }
    }

    #[test]
    fn storage_step_examples() {
        let spec = content();
        let c = cache();
        // zero net drift: mu = L p
        let q = storage_step(0.5, 0.1, &spec, &c, 0.3).unwrap();
        assert!((q - 0.5).abs() < 1e-15);
        // upper clamp at capacity
        let q = storage_step(1.0, 0.0, &spec, &c, 0.5).unwrap();
        assert_eq!(q, 1.0);
        // plain Euler step
        let q = storage_step(0.7, 1.0, &spec, &c, 0.1).unwrap();
        assert!((q - 0.61).abs() < 1e-15);
        // contract violation
        assert!(storage_step(0.5, 1.5, &spec, &c, 0.1).is_err());
    }

    #[test]
    fn trajectory_constant_under_null_dynamics() {
        let spec = ContentSpec {
            u_rate: 0.1,
            a_rate: 0.1,
            eta: 0.0,
            ..content()
        };
        let c = CacheSpec {
            discard_mu: 0.0,
            ..cache()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let tr =
            simulate_trajectory(&[spec], &c, |_, _, _, _| 0.0, 1.0, 50, &mut rng).unwrap();
        assert_eq!(tr.times.len(), 51);
        assert!(tr.xs[0].iter().all(|&x| (x - 0.3).abs() < 1e-15));
        assert!(tr.qs[0].iter().all(|&q| (q - 0.7).abs() < 1e-15));
    }

    #[test]
    fn trajectory_drift_cancellation_keeps_q() {
        let spec = ContentSpec {
            eta: 0.0,
            ..content()
        };
        let c = cache();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let tr =
            simulate_trajectory(&[spec], &c, |_, _, _, _| 0.1, 2.0, 100, &mut rng).unwrap();
        assert!(tr.qs[0].iter().all(|&q| (q - 0.7).abs() < 1e-12));
    }

    #[test]
    fn trajectory_rejects_out_of_range_policy() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let err = simulate_trajectory(&[content()], &cache(), |_, _, _, _| 1.2, 1.0, 10, &mut rng)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step 0"), "message was: {msg}");
    }

    #[test]
    fn deterministic_trajectory_matches_linear_solution_first_order() {
        // eta = 0: exact solution x(t) = x0 + (u-a) t, Q(t) linear; the
        // Euler error must decay first-order under dt halving.
        let mut spec = content();
        spec.eta = 0.0;
        let c = cache();
        let exact_x = 0.3 - 0.05 * 1.0;
        let run = |steps: usize| {
            let mut rng = ChaCha12Rng::seed_from_u64(1);
            let tr = simulate_trajectory(&[spec.clone()], &c, |_, _, _, _| 0.3, 1.0, steps, &mut rng)
                .unwrap();
            (
                *tr.xs[0].last().unwrap(),
                *tr.qs[0].last().unwrap(),
            )
        };
        let (x_a, q_a) = run(100);
        let (x_b, q_b) = run(200);
        // linear dynamics: Euler is exact for both fields here
        assert!((x_a - exact_x).abs() < 1e-12 && (x_b - exact_x).abs() < 1e-12);
        let exact_q = 0.7 + (0.1 - 0.3) * 1.0;
        assert!((q_a - exact_q).abs() < 1e-12 && (q_b - exact_q).abs() < 1e-12);
    }
}
