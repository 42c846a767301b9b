//! Experiment configuration: a flat sectioned `key = value` text format,
//! parsed fail-closed (unknown sections or keys are errors), re-validated
//! against every module-level invariant, and serializable back to a
//! canonical form that round-trips bit-exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::cost::TerminalCost;
use crate::dynamics::{CacheSpec, ContentSpec, X_MAX, X_MIN};
use crate::geometry::NetworkParams;
use crate::sim::{InitQ, SimConfig};
use crate::solver::{GridSpec, SolverParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {what}")]
    Syntax { line: usize, what: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("duplicate key `{key}` in section [{section}]")]
    DuplicateKey { section: String, key: String },
    #[error("missing required key `{key}` in section [{section}]")]
    MissingKey { section: String, key: String },
    #[error("missing required section [{0}]")]
    MissingSection(String),
    #[error("key `{key}`: {what}")]
    BadValue { key: String, what: String },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// Fully validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub net: NetworkParams,
    pub contents: Vec<ContentSpec>,
    pub cache: CacheSpec,
    pub grid: GridSpec,
    pub solver: SolverParams,
    /// Weight of the terminal cost κ(Q) = w γ (C - Q)/C; zero disables it.
    pub kappa_weight: f64,
    /// Initial storage density parameters.
    pub m0_mean: f64,
    pub m0_std: f64,
    pub sim: SimConfig,
    pub popularity_scale: f64,
    pub exhaustive_delta: f64,
}

impl ExperimentConfig {
    pub fn kappa(&self) -> TerminalCost {
        TerminalCost::from_weight(self.kappa_weight)
    }

    /// Non-fatal advisories accumulated across sections.
    pub fn warnings(&self) -> Vec<String> {
        self.net.warnings()
    }

    /// Re-check every module-level invariant plus referential constraints.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invariant(e);
        self.net.validate().map_err(|e| inv(e.to_string()))?;
        self.cache.validate().map_err(|e| inv(e.to_string()))?;
        if self.contents.is_empty() {
            return Err(inv("at least one [content] section is required".into()));
        }
        for (i, c) in self.contents.iter().enumerate() {
            c.validate()
                .map_err(|e| inv(format!("content {i}: {e}")))?;
            if c.x0 < self.grid.x_min || c.x0 > self.grid.x_max {
                return Err(inv(format!(
                    "content {i}: x0 = {} outside the popularity grid [{}, {}]",
                    c.x0, self.grid.x_min, self.grid.x_max
                )));
            }
        }
        self.grid.validate().map_err(|e| inv(e.to_string()))?;
        if (self.grid.q_max - self.cache.capacity_c).abs() > 1e-12 {
            return Err(inv(format!(
                "storage grid bound {} must equal the capacity {}",
                self.grid.q_max, self.cache.capacity_c
            )));
        }
        self.solver.validate().map_err(|e| inv(e.to_string()))?;
        self.sim.validate().map_err(|e| inv(e.to_string()))?;
        if !(self.m0_std >= 0.0) || !(0.0..=self.cache.capacity_c).contains(&self.m0_mean) {
            return Err(inv(format!(
                "initial density (mean {}, std {}) outside the storage box",
                self.m0_mean, self.m0_std
            )));
        }
        if !(self.popularity_scale.is_finite() && self.popularity_scale >= 0.0) {
            return Err(inv("popularity_scale must be non-negative".into()));
        }
        if !(self.exhaustive_delta > 0.0) {
            return Err(inv("exhaustive_delta must be positive".into()));
        }
        if !self.kappa_weight.is_finite() {
            return Err(inv("kappa_weight must be finite".into()));
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips through parse::<f64>
    format!("{v}")
}

/// Canonical serialization; `parse_config(serialize(cfg)) == cfg`.
pub fn serialize(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[network]");
    let _ = writeln!(s, "lambda_b = {}", fmt_f64(cfg.net.lambda_b));
    let _ = writeln!(s, "lambda_u = {}", fmt_f64(cfg.net.lambda_u));
    let _ = writeln!(s, "radius = {}", fmt_f64(cfg.net.radius_r));
    let _ = writeln!(s, "alpha = {}", fmt_f64(cfg.net.alpha));
    let _ = writeln!(s, "n_antennas = {}", cfg.net.n_antennas);
    let _ = writeln!(s, "tx_power = {}", fmt_f64(cfg.net.tx_power));
    let _ = writeln!(s, "noise_power = {}", fmt_f64(cfg.net.noise_power));
    for c in &cfg.contents {
        let _ = writeln!(s, "\n[content]");
        let _ = writeln!(s, "u_rate = {}", fmt_f64(c.u_rate));
        let _ = writeln!(s, "a_rate = {}", fmt_f64(c.a_rate));
        let _ = writeln!(s, "eta = {}", fmt_f64(c.eta));
        let _ = writeln!(s, "size = {}", fmt_f64(c.size_l));
        let _ = writeln!(s, "n_similar = {}", c.n_similar);
        let _ = writeln!(s, "x0 = {}", fmt_f64(c.x0));
    }
    let _ = writeln!(s, "\n[cache]");
    let _ = writeln!(s, "capacity = {}", fmt_f64(cfg.cache.capacity_c));
    let _ = writeln!(s, "discard_rate = {}", fmt_f64(cfg.cache.discard_mu));
    let _ = writeln!(s, "gamma = {}", fmt_f64(cfg.cache.gamma));
    let _ = writeln!(s, "backhaul = {}", fmt_f64(cfg.cache.backhaul_b));
    let _ = writeln!(s, "q0 = {}", fmt_f64(cfg.cache.q0));
    let _ = writeln!(s, "\n[grid]");
    let _ = writeln!(s, "horizon = {}", fmt_f64(cfg.grid.horizon_t));
    let _ = writeln!(s, "n_t = {}", cfg.grid.n_t);
    let _ = writeln!(s, "x_min = {}", fmt_f64(cfg.grid.x_min));
    let _ = writeln!(s, "x_max = {}", fmt_f64(cfg.grid.x_max));
    let _ = writeln!(s, "n_x = {}", cfg.grid.n_x);
    let _ = writeln!(s, "n_q = {}", cfg.grid.n_q);
    let _ = writeln!(s, "\n[solver]");
    let _ = writeln!(s, "tolerance = {}", fmt_f64(cfg.solver.tolerance));
    let _ = writeln!(s, "max_iters = {}", cfg.solver.max_iters);
    let _ = writeln!(s, "damping = {}", fmt_f64(cfg.solver.damping));
    let _ = writeln!(s, "kappa_weight = {}", fmt_f64(cfg.kappa_weight));
    let _ = writeln!(s, "\n[init]");
    let _ = writeln!(s, "m0_mean = {}", fmt_f64(cfg.m0_mean));
    let _ = writeln!(s, "m0_std = {}", fmt_f64(cfg.m0_std));
    let _ = writeln!(s, "\n[sim]");
    let _ = writeln!(s, "n_sbs = {}", cfg.sim.n_sbs);
    let _ = writeln!(s, "n_runs = {}", cfg.sim.n_runs);
    let _ = writeln!(s, "horizon = {}", fmt_f64(cfg.sim.horizon));
    let _ = writeln!(s, "n_steps = {}", cfg.sim.n_steps);
    let _ = writeln!(s, "seed = {}", cfg.sim.root_seed);
    let init_q = match cfg.sim.init_q {
        InitQ::Fixed => "fixed".to_string(),
        InitQ::FromM0 { .. } => "m0".to_string(),
    };
    let _ = writeln!(s, "init_q = {init_q}");
    let _ = writeln!(s, "\n[policies]");
    let _ = writeln!(s, "popularity_scale = {}", fmt_f64(cfg.popularity_scale));
    let _ = writeln!(s, "exhaustive_delta = {}", fmt_f64(cfg.exhaustive_delta));
    s
}

struct Section {
    name: String,
    entries: BTreeMap<String, String>,
}

fn tokenize(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ConfigError::Syntax {
                line: line_no,
                what: "unterminated section header".into(),
            })?;
            sections.push(Section {
                name: name.trim().to_string(),
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            line: line_no,
            what: format!("expected `key = value`, got `{line}`"),
        })?;
        let section = sections.last_mut().ok_or(ConfigError::Syntax {
            line: line_no,
            what: "key outside any [section]".into(),
        })?;
        let key = key.trim().to_string();
        if section
            .entries
            .insert(key.clone(), value.trim().to_string())
            .is_some()
        {
            return Err(ConfigError::DuplicateKey {
                section: section.name.clone(),
                key,
            });
        }
    }
    Ok(sections)
}

struct SectionReader {
    name: String,
    entries: BTreeMap<String, String>,
}

impl SectionReader {
    fn f64_req(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.take(key)?
            .ok_or_else(|| ConfigError::MissingKey {
                section: self.name.clone(),
                key: key.into(),
            })
            .and_then(|v| parse_f64(key, &v))
    }
    fn f64_opt(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key)? {
            Some(v) => parse_f64(key, &v),
            None => Ok(default),
        }
    }
    fn usize_req(&mut self, key: &str) -> Result<usize, ConfigError> {
        self.take(key)?
            .ok_or_else(|| ConfigError::MissingKey {
                section: self.name.clone(),
                key: key.into(),
            })
            .and_then(|v| parse_usize(key, &v))
    }
    fn usize_opt(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.take(key)? {
            Some(v) => parse_usize(key, &v),
            None => Ok(default),
        }
    }
    fn u64_opt(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key)? {
            Some(v) => v.parse::<u64>().map_err(|e| ConfigError::BadValue {
                key: key.into(),
                what: e.to_string(),
            }),
            None => Ok(default),
        }
    }
    fn str_opt(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        self.take(key)
    }
    fn take(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        Ok(self.entries.remove(key))
    }
    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, _)) = self.entries.into_iter().next() {
            return Err(ConfigError::UnknownKey {
                section: self.name,
                key,
            });
        }
        Ok(())
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        what: e.to_string(),
    })
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        what: e.to_string(),
    })
}

/// Parse and fully validate a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let sections = tokenize(text)?;
    let mut net = None;
    let mut contents = Vec::new();
    let mut cache = None;
    let mut grid_raw = None;
    let mut solver_raw = None;
    let mut init_raw = None;
    let mut sim_raw = None;
    let mut policies_raw = None;

    for sec in sections {
        let mut r = SectionReader {
            name: sec.name.clone(),
            entries: sec.entries,
        };
        match sec.name.as_str() {
            "network" => {
                if net.is_some() {
                    return Err(ConfigError::Invariant("duplicate [network] section".into()));
                }
                net = Some(NetworkParams {
                    lambda_b: r.f64_req("lambda_b")?,
                    lambda_u: r.f64_req("lambda_u")?,
                    radius_r: r.f64_req("radius")?,
                    alpha: r.f64_req("alpha")?,
                    n_antennas: r.usize_opt("n_antennas", 1)? as u32,
                    tx_power: r.f64_opt("tx_power", 1.0)?,
                    noise_power: r.f64_opt("noise_power", 1e-6)?,
                });
                r.finish()?;
            }
            "content" => {
                contents.push(ContentSpec {
                    u_rate: r.f64_req("u_rate")?,
                    a_rate: r.f64_req("a_rate")?,
                    eta: r.f64_req("eta")?,
                    size_l: r.f64_opt("size", 1.0)?,
                    n_similar: r.usize_opt("n_similar", 20)? as u32,
                    x0: r.f64_req("x0")?,
                });
                r.finish()?;
            }
            "cache" => {
                if cache.is_some() {
                    return Err(ConfigError::Invariant("duplicate [cache] section".into()));
                }
                cache = Some(CacheSpec {
                    capacity_c: r.f64_req("capacity")?,
                    discard_mu: r.f64_req("discard_rate")?,
                    gamma: r.f64_req("gamma")?,
                    backhaul_b: r.f64_req("backhaul")?,
                    q0: r.f64_req("q0")?,
                });
                r.finish()?;
            }
            "grid" => {
                grid_raw = Some((
                    r.f64_req("horizon")?,
                    r.usize_req("n_t")?,
                    r.f64_opt("x_min", X_MIN)?,
                    r.f64_opt("x_max", X_MAX)?,
                    r.usize_req("n_x")?,
                    r.usize_req("n_q")?,
                ));
                r.finish()?;
            }
            "solver" => {
                solver_raw = Some((
                    r.f64_opt("tolerance", 1e-4)?,
                    r.usize_opt("max_iters", 50)?,
                    r.f64_opt("damping", 0.5)?,
                    r.f64_opt("kappa_weight", 0.0)?,
                ));
                r.finish()?;
            }
            "init" => {
                init_raw = Some((r.f64_opt("m0_mean", 0.7)?, r.f64_opt("m0_std", 0.05)?));
                r.finish()?;
            }
            "sim" => {
                sim_raw = Some((
                    r.usize_opt("n_sbs", 10)?,
                    r.usize_opt("n_runs", 1000)?,
                    r.f64_req("horizon")?,
                    r.usize_opt("n_steps", 1000)?,
                    r.u64_opt("seed", 42)?,
                    r.str_opt("init_q")?,
                ));
                r.finish()?;
            }
            "policies" => {
                policies_raw = Some((
                    r.f64_opt("popularity_scale", 1.0)?,
                    r.f64_opt("exhaustive_delta", 0.05)?,
                ));
                r.finish()?;
            }
            other => return Err(ConfigError::UnknownSection(other.to_string())),
        }
    }

    let net = net.ok_or(ConfigError::MissingSection("network".into()))?;
    let cache = cache.ok_or(ConfigError::MissingSection("cache".into()))?;
    if contents.is_empty() {
        return Err(ConfigError::MissingSection("content".into()));
    }
    let (g_h, g_nt, g_xmin, g_xmax, g_nx, g_nq) =
        grid_raw.ok_or(ConfigError::MissingSection("grid".into()))?;
    let (tolerance, max_iters, damping, kappa_weight) =
        solver_raw.unwrap_or((1e-4, 50, 0.5, 0.0));
    let (m0_mean, m0_std) = init_raw.unwrap_or((0.7, 0.05));
    let (n_sbs, n_runs, s_h, n_steps, seed, init_q_str) =
        sim_raw.ok_or(ConfigError::MissingSection("sim".into()))?;
    let (popularity_scale, exhaustive_delta) = policies_raw.unwrap_or((1.0, 0.05));

    let init_q = match init_q_str.as_deref() {
        None | Some("m0") => InitQ::FromM0 {
            mean: m0_mean,
            std: m0_std,
        },
        Some("fixed") => InitQ::Fixed,
        Some(other) => {
            return Err(ConfigError::BadValue {
                key: "init_q".into(),
                what: format!("expected `m0` or `fixed`, got `{other}`"),
            })
        }
    };

    let cfg = ExperimentConfig {
        net,
        contents,
        grid: GridSpec {
            horizon_t: g_h,
            n_t: g_nt,
            x_min: g_xmin,
            x_max: g_xmax,
            n_x: g_nx,
            q_max: cache.capacity_c,
            n_q: g_nq,
        },
        cache,
        solver: SolverParams {
            tolerance,
            max_iters,
            damping,
        },
        kappa_weight,
        m0_mean,
        m0_std,
        sim: SimConfig {
            n_sbs,
            n_runs,
            horizon: s_h,
            n_steps,
            root_seed: seed,
            init_q,
        },
        popularity_scale,
        exhaustive_delta,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a configuration file from disk.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}
