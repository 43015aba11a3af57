//! Line-oriented `key = value` run configuration.
//!
//! ```text
//! # comments run to end of line
//! alpha = 1.25
//! epsilon = 0.01
//! cells = 256          # or 64x64, or 64, 64
//! t_end = 0.5
//! initial = gaussian_bump
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nutaxis_core::model::build_initial;
use nutaxis_core::{AvgMode, Field, GridSpec, InitialData, InitialKind, Params, State, StepControl};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::snapshot::load_snapshot_for;

const REQUIRED: &[&str] = &["alpha", "epsilon", "cells", "t_end"];

const OPTIONAL: &[&str] = &[
    "lengths",
    "chi",
    "ell",
    "cfl_safety",
    "avg_mode",
    "initial",
    "u0",
    "v0",
    "base",
    "amplitude",
    "width",
    "u_mean",
    "u_amp",
    "v_mean",
    "v_amp",
    "mode",
    "v_floor",
    "snapshot",
    "perturbation",
    "seed",
    "dt_max",
    "max_rejects",
    "fixed_dt",
    "monitor_every",
    "snapshot_every",
    "lp",
    "output",
    "vq_q",
    "upvq_p",
    "upvq_q",
    "track_struc2",
];

/// Where the initial state comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Analytic(InitialData),
    /// Resume from a saved state; u already carries the ε shift.
    Snapshot(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub initial: InitialSpec,
    pub params: Params,
    pub control: StepControl,
    /// Relative amplitude of the seeded multiplicative noise on u₀.
    pub perturbation: f64,
    pub seed: u64,
    pub output: PathBuf,
    /// Exponent of the ∫v^q residual.
    pub vq_q: f64,
    /// Exponents of the ∫u^p v^q residual.
    pub upvq_p: f64,
    pub upvq_q: f64,
    /// Record the per-step gradient balance (needs alpha > 1).
    pub track_struc2: bool,
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key).ok_or_else(|| CliError::MissingKey(key.into()))?;
        parse_scalar(key, raw)
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key).map(|raw| parse_scalar(key, raw)).transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.optional(key)?.unwrap_or(default))
    }
}

fn parse_scalar<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| CliError::invalid(key, format!("cannot parse {raw:?}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(|c: char| c == ',' || c == 'x' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::invalid(key, format!("must be positive, got {x}")))
    }
}

/// Parses and validates a run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(CliError::Syntax { line: n + 1 })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Syntax { line: n + 1 });
        }
        if !REQUIRED.contains(&key) && !OPTIONAL.contains(&key) {
            return Err(CliError::UnknownKey(key.into()));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(CliError::DuplicateKey(key.into()));
        }
    }
    let e = Entries { map };
    for key in REQUIRED {
        if e.raw(key).is_none() {
            return Err(CliError::MissingKey(key.to_string()));
        }
    }

    let cells: Vec<usize> = parse_list("cells", e.raw("cells").unwrap_or_default())?;
    let lengths: Vec<f64> = match e.raw("lengths") {
        Some(raw) => parse_list("lengths", raw)?,
        None => vec![1.0; cells.len()],
    };
    let grid = GridSpec::new(&cells, &lengths).map_err(|err| {
        let key = if lengths.len() == cells.len() { "cells" } else { "lengths" };
        CliError::invalid(key, err.to_string())
    })?;

    let avg_mode = match e.raw("avg_mode") {
        Some(raw) => raw
            .parse::<AvgMode>()
            .map_err(|err| CliError::invalid("avg_mode", err.to_string()))?,
        None => AvgMode::default(),
    };
    let params = Params {
        alpha: e.required("alpha")?,
        chi: e.or("chi", 1.0)?,
        ell: e.or("ell", 0.0)?,
        epsilon: e.required("epsilon")?,
        cfl_safety: e.or("cfl_safety", 0.9)?,
        avg_mode,
    };
    params.validate().map_err(|err| {
        let key = ["alpha", "chi", "ell", "epsilon", "cfl_safety"]
            .into_iter()
            .find(|k| err.to_string().contains(&format!("{k} ")))
            .unwrap_or("alpha");
        CliError::invalid(key, err.to_string())
    })?;

    let kind = e.raw("initial").unwrap_or("gaussian_bump");
    let v_floor = positive("v_floor", e.or("v_floor", 1e-6)?)?;
    let analytic = |kind: InitialKind| InitialSpec::Analytic(InitialData { kind, v_floor });
    let initial = match kind {
        "constant" => analytic(InitialKind::Constant {
            u0: e.or("u0", 1.0)?,
            v0: e.or("v0", 1.0)?,
        }),
        "gaussian_bump" => analytic(InitialKind::GaussianBump {
            base: e.or("base", 0.5)?,
            amplitude: e.or("amplitude", 1.0)?,
            width: positive("width", e.or("width", 0.1)?)?,
            v0: e.or("v0", 1.0)?,
        }),
        "cosine_mix" => analytic(InitialKind::CosineMix {
            u_mean: e.or("u_mean", 1.0)?,
            u_amp: e.or("u_amp", 0.5)?,
            v_mean: e.or("v_mean", 1.0)?,
            v_amp: e.or("v_amp", 0.5)?,
            mode: e.or("mode", 1)?,
        }),
        "from_snapshot" => InitialSpec::Snapshot(PathBuf::from(
            e.raw("snapshot").ok_or_else(|| CliError::MissingKey("snapshot".into()))?,
        )),
        other => return Err(CliError::invalid("initial", format!("unknown kind {other:?}"))),
    };

    let perturbation: f64 = e.or("perturbation", 0.0)?;
    if !(0.0..1.0).contains(&perturbation) {
        return Err(CliError::invalid("perturbation", "must lie in [0, 1)"));
    }

    let t_end: f64 = e.required("t_end")?;
    let mut control = StepControl::new(t_end);
    control.dt_max = e.or("dt_max", control.dt_max)?;
    control.max_rejects = e.or("max_rejects", control.max_rejects)?;
    control.fixed_dt = e.optional("fixed_dt")?;
    control.monitor_every = e.optional("monitor_every")?;
    control.snapshot_every = e.optional("snapshot_every")?;
    if let Some(raw) = e.raw("lp") {
        control.lp_exponents = parse_list("lp", raw)?;
        if control.lp_exponents.iter().any(|&p| !(p >= 1.0 && p.is_finite())) {
            return Err(CliError::invalid("lp", "exponents must be at least 1"));
        }
    }
    control.validate().map_err(|err| {
        let msg = err.to_string();
        let key = if msg.contains("t_end") {
            "t_end"
        } else if msg.contains("dt_max") {
            "dt_max"
        } else if msg.contains("max_rejects") {
            "max_rejects"
        } else {
            "monitor_every"
        };
        CliError::invalid(key, msg)
    })?;

    let vq_q: f64 = e.or("vq_q", 2.0)?;
    if !(vq_q > 1.0) {
        return Err(CliError::invalid("vq_q", "must exceed 1"));
    }
    let track_struc2 = e.or("track_struc2", false)?;
    if track_struc2 && !(params.alpha > 1.0) {
        return Err(CliError::invalid("track_struc2", "the gradient balance needs alpha > 1"));
    }

    Ok(RunConfig {
        grid,
        initial,
        params,
        control,
        perturbation,
        seed: e.or("seed", 0)?,
        output: PathBuf::from(e.raw("output").unwrap_or("out")),
        vq_q,
        upvq_p: e.or("upvq_p", 0.5)?,
        upvq_q: e.or("upvq_q", 1.0)?,
        track_struc2,
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

impl RunConfig {
    /// Builds the initial state, applying the seeded perturbation if any.
    pub fn initial_state(&self) -> Result<State> {
        let state = match &self.initial {
            InitialSpec::Analytic(data) => build_initial(&self.grid, data, &self.params)?,
            InitialSpec::Snapshot(path) => load_snapshot_for(path, &self.grid)?.state,
        };
        if self.perturbation == 0.0 {
            return Ok(state);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let eps = self.params.epsilon;
        let u: Vec<f64> = state
            .u
            .values()
            .iter()
            .map(|&u| {
                let base = (u - eps).max(0.0);
                eps + base * (1.0 + self.perturbation * rng.gen_range(-1.0..1.0))
            })
            .collect();
        Ok(State::new(state.t, Field::new(self.grid, u)?, state.v)?)
    }
}
