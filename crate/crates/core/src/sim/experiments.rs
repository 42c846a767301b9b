//! The four named experiments and their tabular outputs.
//!
//! Each experiment derives its own variant of the base configuration
//! (static demand for the control-surface and density-evolution exports,
//! the caption parameter set for the cost and replication comparisons),
//! records every override in the table metadata, and is deterministic
//! given the root seed.

use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::dynamics::ContentSpec;
use crate::geometry::{mean_field_interference, spectral_efficiency};
use crate::policy::{exhaustive_search, mf_policy, random_policy, Policy, PolicyError};
use crate::sim::{estimate_lra, replication_ratio_mean, SimError};
use crate::solver::{
    p_max, solve_mfe, stable_n_t, static_popularity_solve, GridSpec, MfeProblem, MfeSolution,
    SolverError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown experiment `{0}`; valid names: fig3, fig4, fig5, fig6")]
    UnknownName(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("geometry: {0}")]
    Geometry(String),
}

/// The reproducible experiment set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

impl FromStr for ExperimentName {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig3" => Ok(ExperimentName::Fig3),
            "fig4" => Ok(ExperimentName::Fig4),
            "fig5" => Ok(ExperimentName::Fig5),
            "fig6" => Ok(ExperimentName::Fig6),
            other => Err(ExperimentError::UnknownName(other.to_string())),
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentName::Fig3 => "fig3",
            ExperimentName::Fig4 => "fig4",
            ExperimentName::Fig5 => "fig5",
            ExperimentName::Fig6 => "fig6",
        };
        write!(f, "{s}")
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

/// A result table plus its provenance metadata.
#[derive(Debug, Clone)]
pub struct Table {
    /// File stem the table is written under.
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: Vec<(String, String)>,
}

impl Table {
    fn new(name: &str, columns: Vec<&'static str>) -> Self {
        Table {
            name: name.to_string(),
            columns,
            rows: Vec::new(),
            metadata: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl fmt::Display) {
        self.metadata.push((key.to_string(), value.to_string()));
    }
}

/// Shared scalar reduction of the geometry: the densification limit of the
/// interference and the average spectral efficiency it implies.
pub fn shared_spectral_efficiency(cfg: &ExperimentConfig) -> Result<f64, ExperimentError> {
    let ihat = mean_field_interference(&cfg.net)
        .map_err(|e| ExperimentError::Geometry(e.to_string()))?;
    spectral_efficiency(&cfg.net, ihat).map_err(|e| ExperimentError::Geometry(e.to_string()))
}

fn base_content(cfg: &ExperimentConfig) -> &ContentSpec {
    // experiments track the first configured content
    &cfg.contents[0]
}

/// Static-demand variant: volatility off, balanced rates, pinned x0.
fn static_content(cfg: &ExperimentConfig, x0: f64) -> ContentSpec {
    ContentSpec {
        eta: 0.0,
        a_rate: base_content(cfg).u_rate,
        x0,
        ..base_content(cfg).clone()
    }
}

fn solve_static(
    cfg: &ExperimentConfig,
    content: &ContentSpec,
    se: f64,
) -> Result<MfeSolution, ExperimentError> {
    let problem = MfeProblem {
        content,
        cache: &cfg.cache,
        se,
        kappa: cfg.kappa(),
        m0_q_mean: cfg.m0_mean,
        m0_q_std: cfg.m0_std,
    };
    Ok(static_popularity_solve(&problem, &cfg.grid, &cfg.solver)?)
}

/// Grid used when the policy must cover the simulation horizon: same state
/// resolution, time axis stretched and refined to stay inside the
/// stability bound.
pub fn simulation_grid(cfg: &ExperimentConfig, content: &ContentSpec) -> GridSpec {
    let mut spec = cfg.grid.clone();
    spec.horizon_t = cfg.sim.horizon;
    spec.n_t = stable_n_t(
        &spec,
        content.drift().abs(),
        cfg.cache.discard_mu + content.size_l * p_max(content, &cfg.cache),
        content.eta,
    );
    spec
}

fn solve_dynamic(
    cfg: &ExperimentConfig,
    content: &ContentSpec,
    se: f64,
) -> Result<(MfeSolution, GridSpec), ExperimentError> {
    let spec = simulation_grid(cfg, content);
    let problem = MfeProblem {
        content,
        cache: &cfg.cache,
        se,
        kappa: cfg.kappa(),
        m0_q_mean: cfg.m0_mean,
        m0_q_std: cfg.m0_std,
    };
    let sol = solve_mfe(&problem, &spec, &cfg.solver)?;
    Ok((sol, spec))
}

fn push_common_meta(table: &mut Table, cfg: &ExperimentConfig, se: f64) {
    table.meta("seed", cfg.sim.root_seed);
    table.meta("spectral_efficiency", format!("{se:.9e}"));
    table.meta("kappa_weight", cfg.kappa_weight);
}

/// Run a named experiment and return its tables.
pub fn run_experiment(
    name: ExperimentName,
    cfg: &ExperimentConfig,
) -> Result<Vec<Table>, ExperimentError> {
    match name {
        ExperimentName::Fig3 => fig3(cfg),
        ExperimentName::Fig4 => fig4(cfg),
        ExperimentName::Fig5 => fig5(cfg),
        ExperimentName::Fig6 => fig6(cfg),
    }
}

/// Control surface p*(t, Q) of the static solve at x = 0.4.
fn fig3(cfg: &ExperimentConfig) -> Result<Vec<Table>, ExperimentError> {
    let se = shared_spectral_efficiency(cfg)?;
    let content = static_content(cfg, 0.4);
    let sol = solve_static(cfg, &content, se)?;
    let grid = &sol.grid;
    let i0 = grid.nearest_x(0.4);
    let mut t = Table::new("fig3", vec!["t", "q", "p_star"]);
    push_common_meta(&mut t, cfg, se);
    t.meta("override_eta", "0 (static demand)");
    t.meta("override_a_rate", format!("{} (= u_rate)", content.a_rate));
    t.meta("x_slice", grid.xs[i0]);
    t.meta("converged", sol.converged);
    for (n, &tn) in grid.ts.iter().enumerate() {
        for (j, &qj) in grid.qs.iter().enumerate() {
            t.rows.push(vec![
                Cell::Num(tn),
                Cell::Num(qj),
                Cell::Num(sol.policy.data[[n, i0, j]]),
            ]);
        }
    }
    Ok(vec![t])
}

/// Storage-density snapshots of static solves at x in {0.1, 0.5, 0.9}.
fn fig4(cfg: &ExperimentConfig) -> Result<Vec<Table>, ExperimentError> {
    let se = shared_spectral_efficiency(cfg)?;
    let mut t = Table::new("fig4", vec!["x", "t", "q", "density"]);
    push_common_meta(&mut t, cfg, se);
    t.meta("override_eta", "0 (static demand)");
    t.meta("snapshots", 9);
    for &x0 in &[0.1, 0.5, 0.9] {
        let content = static_content(cfg, x0);
        let sol = solve_static(cfg, &content, se)?;
        let grid = &sol.grid;
        let nt = grid.n_t();
        for s in 0..9usize {
            let n = (s * (nt - 1)) / 8;
            let slice = sol.distribution.data.index_axis(Axis(0), n);
            for j in 0..grid.n_q() {
                // Q-marginal as mass per unit dq so the column sums to 1/dq
                let mut mass = 0.0;
                for i in 0..grid.n_x() {
                    mass += grid.wx[i] * grid.wq[j] * slice[[i, j]];
                }
                t.rows.push(vec![
                    Cell::Num(x0),
                    Cell::Num(grid.ts[n]),
                    Cell::Num(grid.qs[j]),
                    Cell::Num(mass / grid.dq),
                ]);
            }
        }
    }
    Ok(vec![t])
}

/// The four policies and their estimated mean costs, plus the exhaustive-
/// search table over constant levels.
fn fig5(cfg: &ExperimentConfig) -> Result<Vec<Table>, ExperimentError> {
    fig5_with(cfg, None)
}

fn fig5_with(cfg: &ExperimentConfig, mf_override: Option<Policy>) -> Result<Vec<Table>, ExperimentError> {
    let se = shared_spectral_efficiency(cfg)?;
    let content = base_content(cfg).clone();
    let pm = p_max(&content, &cfg.cache);
    let (mf, solve_meta) = match mf_override {
        Some(p) => (p, None),
        None => {
            let (sol, solve_grid) = solve_dynamic(cfg, &content, se)?;
            let converged = sol.converged;
            let mf = mf_policy(&sol, &sol.grid, pm)?;
            (mf, Some((solve_grid.n_t, converged)))
        }
    };
    let contents = vec![content.clone()];
    let kappa = cfg.kappa();

    let evaluate = |level: f64| -> f64 {
        let pol = Policy::Constant { level, p_max: pm };
        match estimate_lra(&cfg.sim, &contents, &cfg.cache, se, &kappa, &pol) {
            Ok(rep) => rep.mean,
            Err(_) => f64::INFINITY,
        }
    };
    let (best_level, search_table) = exhaustive_search(cfg.exhaustive_delta, pm, evaluate)?;

    let policies: Vec<(String, Policy)> = vec![
        ("mf".into(), mf),
        (
            "popularity".into(),
            Policy::Popularity {
                scale: cfg.popularity_scale,
                p_max: pm,
            },
        ),
        ("random".into(), random_policy(pm)),
        (
            "exhaustive-best".into(),
            Policy::Constant {
                level: best_level,
                p_max: pm,
            },
        ),
    ];

    let mut lra = Table::new(
        "fig5_lra",
        vec![
            "policy",
            "mean_lra",
            "std_dev",
            "ci_lo",
            "ci_hi",
            "n_runs",
            "n_infinite",
        ],
    );
    push_common_meta(&mut lra, cfg, se);
    match solve_meta {
        Some((n_t, converged)) => {
            lra.meta("solve_n_t", n_t);
            lra.meta("solver_converged", converged);
        }
        None => lra.meta("mf_policy", "loaded from artifact"),
    }
    lra.meta("best_constant", best_level);
    lra.meta("exhaustive_delta", cfg.exhaustive_delta);
    for (label, pol) in &policies {
        let rep = estimate_lra(&cfg.sim, &contents, &cfg.cache, se, &kappa, pol)?;
        lra.rows.push(vec![
            Cell::Text(label.clone()),
            Cell::Num(rep.mean),
            Cell::Num(rep.std_dev),
            Cell::Num(rep.ci_lo),
            Cell::Num(rep.ci_hi),
            Cell::Int(rep.n_effective as i64),
            Cell::Int(rep.n_infinite as i64),
        ]);
    }

    let mut ex = Table::new("fig5_exhaustive", vec!["p", "mean_lra"]);
    push_common_meta(&mut ex, cfg, se);
    let mut sorted = search_table;
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (level, cost) in sorted {
        ex.rows.push(vec![Cell::Num(level), Cell::Num(cost)]);
    }
    Ok(vec![lra, ex])
}

/// Replication ratio against the initial request probability for the
/// mean-field, popularity and random policies.
fn fig6(cfg: &ExperimentConfig) -> Result<Vec<Table>, ExperimentError> {
    fig6_with(cfg, None)
}

fn fig6_with(cfg: &ExperimentConfig, mf_override: Option<Policy>) -> Result<Vec<Table>, ExperimentError> {
    let se = shared_spectral_efficiency(cfg)?;
    let mut t = Table::new("fig6", vec!["x0", "policy", "replication_ratio"]);
    push_common_meta(&mut t, cfg, se);
    let pm = p_max(base_content(cfg), &cfg.cache);
    for step in 1..=9usize {
        let x0 = step as f64 / 10.0;
        let content = ContentSpec {
            x0,
            ..base_content(cfg).clone()
        };
        let mf = match &mf_override {
            Some(p) => p.clone(),
            None => {
                let (sol, _) = solve_dynamic(cfg, &content, se)?;
                mf_policy(&sol, &sol.grid, pm)?
            }
        };
        let contents = vec![content];
        let policies: Vec<(String, Policy)> = vec![
            ("mf".into(), mf),
            (
                "popularity".into(),
                Policy::Popularity {
                    scale: cfg.popularity_scale,
                    p_max: pm,
                },
            ),
            ("random".into(), random_policy(pm)),
        ];
        for (label, pol) in &policies {
            let ratio = replication_ratio_mean(&cfg.sim, &contents, &cfg.cache, se, pol)?;
            t.rows.push(vec![
                Cell::Num(x0),
                Cell::Text(label.clone()),
                Cell::Num(ratio),
            ]);
        }
    }
    Ok(vec![t])
}

/// Long-format table view of a joint state trace, one row per
/// (time, content) pair.
pub fn trace_table(trace: &crate::dynamics::StateTrace) -> Table {
    let mut t = Table::new("trace", vec!["t", "content", "x", "q", "p"]);
    for (j, (xs, (qs, ps))) in trace
        .xs
        .iter()
        .zip(trace.qs.iter().zip(trace.ps.iter()))
        .enumerate()
    {
        for (n, &tn) in trace.times.iter().enumerate() {
            t.rows.push(vec![
                Cell::Num(tn),
                Cell::Int(j as i64),
                Cell::Num(xs[n]),
                Cell::Num(qs[n]),
                Cell::Num(ps[n]),
            ]);
        }
    }
    t
}

/// Convenience bundle for the comparison command: the cost tables plus the
/// replication sweep. A pre-built mean-field policy (for example one
/// loaded from a solve artifact) replaces the inline solves when given.
pub fn run_compare(
    cfg: &ExperimentConfig,
    mf_override: Option<Policy>,
) -> Result<Vec<Table>, ExperimentError> {
    let mut tables = fig5_with(cfg, mf_override.clone())?;
    tables[0].name = "lra".into();
    tables[1].name = "exhaustive".into();
    let mut repl = fig6_with(cfg, mf_override)?;
    repl[0].name = "replication".into();
    tables.append(&mut repl);
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small_cfg() -> ExperimentConfig {
        parse_config(
            r#"
[network]
lambda_b = 0.03
lambda_u = 0.001
radius = 5.641895835477563
alpha = 4

[content]
u_rate = 0.1
a_rate = 0.15
eta = 0.1
x0 = 0.3

[cache]
capacity = 1
discard_rate = 0.1
gamma = 0.01
backhaul = 1
q0 = 0.7

[grid]
horizon = 1
n_t = 120
n_x = 21
n_q = 26

[sim]
n_sbs = 4
n_runs = 12
horizon = 6
n_steps = 240
seed = 7
"#,
        )
        .unwrap()
    }

    #[test]
    fn name_parsing() {
        assert_eq!("fig3".parse::<ExperimentName>().unwrap(), ExperimentName::Fig3);
        assert!("fig9".parse::<ExperimentName>().is_err());
    }

    #[test]
    fn fig4_densities_normalize() {
        let cfg = small_cfg();
        let tables = run_experiment(ExperimentName::Fig4, &cfg).unwrap();
        let t = &tables[0];
        // group rows by (x, t) and check sum(density * dq) == 1
        let dq = 1.0 / 25.0;
        let mut sums: std::collections::BTreeMap<String, f64> = Default::default();
        for row in &t.rows {
            let (x, tt, d) = match (&row[0], &row[1], &row[3]) {
                (Cell::Num(x), Cell::Num(tt), Cell::Num(d)) => (x, tt, d),
                _ => panic!("unexpected cell types"),
            };
            *sums.entry(format!("{x}|{tt}")).or_default() += d * dq;
        }
        assert_eq!(sums.len(), 27); // 3 popularity levels x 9 snapshots
        for (k, s) in sums {
            assert!((s - 1.0).abs() < 1e-9, "group {k} sums to {s}");
        }
    }

    #[test]
    fn fig6_shape_contract() {
        let cfg = small_cfg();
        let tables = run_experiment(ExperimentName::Fig6, &cfg).unwrap();
        let t = &tables[0];
        assert_eq!(t.rows.len(), 27); // 9 sweep points x 3 policies
        for row in &t.rows {
            if let Cell::Num(r) = row[2] {
                assert!((0.0..=1.0).contains(&r), "ratio {r}");
            } else {
                panic!("ratio cell must be numeric");
            }
        }
    }

    #[test]
    fn trace_exports_every_step() {
        use crate::dynamics::{simulate_trajectory, CacheSpec, ContentSpec};
        use rand::SeedableRng;
        let contents = vec![ContentSpec {
            u_rate: 0.1,
            a_rate: 0.15,
            eta: 0.1,
            size_l: 1.0,
            n_similar: 20,
            x0: 0.3,
        }];
        let cache = CacheSpec {
            capacity_c: 1.0,
            discard_mu: 0.1,
            gamma: 0.01,
            backhaul_b: 1.0,
            q0: 0.7,
        };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let trace =
            simulate_trajectory(&contents, &cache, |_, _, x, _| x.min(0.9), 1.0, 16, &mut rng)
                .unwrap();
        let table = trace_table(&trace);
        assert_eq!(table.rows.len(), 17);
        assert_eq!(table.columns, vec!["t", "content", "x", "q", "p"]);
    }

    #[test]
    fn fig3_slice_schema() {
        let cfg = small_cfg();
        let tables = run_experiment(ExperimentName::Fig3, &cfg).unwrap();
        let t = &tables[0];
        assert_eq!(t.columns, vec!["t", "q", "p_star"]);
        assert_eq!(t.rows.len(), 120 * 26);
    }
}
