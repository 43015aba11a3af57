//! Explicit Euler time stepping with positivity by rejection.

use crate::diagnostics::{accumulator_rates, monitor_row, MonitorRow};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::model::{assemble_rhs, pow_nonneg, Params, State};

/// The individual bounds that make up [`stable_dt`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtBreakdown {
    /// `safety · min_a h_a² / (2·dim·D*)`, D* = max(uv + χ u^α v).
    pub diffusion: f64,
    /// `1 / (max u + ℓ max v)`.
    pub reaction: f64,
    /// `1 / (2 Σ_a h_a⁻² + max u)`: keeps every v-update a convex combination.
    pub v_max_principle: f64,
    pub dt_max: f64,
    pub dt: f64,
}

pub fn dt_breakdown(state: &State, params: &Params, dt_max: f64) -> Result<DtBreakdown> {
    let grid = state.grid();
    let u = state.u.values();
    let v = state.v.values();
    let mut d_star = 0.0f64;
    for i in 0..u.len() {
        d_star = d_star.max(u[i] * v[i] + params.chi * pow_nonneg(u[i], params.alpha) * v[i]);
    }
    if !d_star.is_finite() {
        return Err(Error::BlowUp { t: state.t });
    }
    let dim = grid.dim() as f64;
    let h2_min = (0..grid.dim())
        .map(|a| grid.spacing(a).powi(2))
        .fold(f64::INFINITY, f64::min);
    let diffusion = if d_star > 0.0 {
        params.cfl_safety * h2_min / (2.0 * dim * d_star)
    } else {
        f64::INFINITY
    };
    let max_u = state.u.max();
    let max_v = state.v.max();
    let reaction_rate = max_u + params.ell * max_v;
    let reaction = if reaction_rate > 0.0 {
        1.0 / reaction_rate
    } else {
        f64::INFINITY
    };
    let inv_h2_sum: f64 = (0..grid.dim()).map(|a| grid.spacing(a).powi(-2)).sum();
    let v_max_principle = 1.0 / (2.0 * inv_h2_sum + max_u);
    let dt = diffusion.min(reaction).min(v_max_principle).min(dt_max);
    Ok(DtBreakdown {
        diffusion,
        reaction,
        v_max_principle,
        dt_max,
        dt,
    })
}

pub fn stable_dt(state: &State, params: &Params, dt_max: f64) -> Result<f64> {
    Ok(dt_breakdown(state, params, dt_max)?.dt)
}

/// One explicit Euler step. Never mutates `state`; a negative component
/// yields [`Error::StepRejected`].
pub fn step(state: &State, params: &Params, dt: f64) -> Result<State> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (du, dv) = assemble_rhs(state, params).map_err(|e| match e {
        Error::RhsOverflow { .. } => Error::BlowUp { t: state.t },
        other => other,
    })?;
    let grid = *state.grid();
    let u = state.u.values();
    let v = state.v.values();
    let mut u_next = Vec::with_capacity(u.len());
    let mut v_next = Vec::with_capacity(v.len());
    for i in 0..u.len() {
        let un = u[i] + dt * du.values()[i];
        let vn = v[i] + dt * dv.values()[i];
        if !(un.is_finite() && vn.is_finite()) {
            return Err(Error::BlowUp { t: state.t });
        }
        if un < 0.0 {
            return Err(Error::StepRejected { field: "u", cell: i });
        }
        if vn <= 0.0 {
            return Err(Error::StepRejected { field: "v", cell: i });
        }
        u_next.push(un);
        v_next.push(vn);
    }
    let rates = accumulator_rates(state, params);
    Ok(State {
        t: state.t + dt,
        u: Field::new(grid, u_next)?,
        v: Field::new(grid, v_next)?,
        acc: state.acc.advanced(&rates, dt),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    pub t_end: f64,
    pub dt_max: f64,
    /// Halvings allowed per step before giving up.
    pub max_rejects: usize,
    /// Monitor cadence; `None` records only the initial and final rows.
    pub monitor_every: Option<f64>,
    pub snapshot_every: Option<f64>,
    /// Bypasses [`stable_dt`] and always proposes this step.
    pub fixed_dt: Option<f64>,
    /// Exponents of the L^p monitors.
    pub lp_exponents: Vec<f64>,
}

impl StepControl {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            dt_max: 1e-2,
            max_rejects: 20,
            monitor_every: None,
            snapshot_every: None,
            fixed_dt: None,
            lp_exponents: vec![2.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::InvalidArgument("dt_max must be positive".into()));
        }
        if self.max_rejects < 1 {
            return Err(Error::InvalidArgument("max_rejects must be at least 1".into()));
        }
        for c in [self.monitor_every, self.snapshot_every, self.fixed_dt].into_iter().flatten() {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("cadence and fixed dt must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Hooks called by [`run`] on every accepted step.
pub trait Observer {
    fn accepted(&mut self, prev: &State, next: &State, dt: f64) -> Result<()> {
        let _ = (prev, next, dt);
        Ok(())
    }
}

impl Observer for () {}

impl<F: FnMut(&State, &State, f64) -> Result<()>> Observer for F {
    fn accepted(&mut self, prev: &State, next: &State, dt: f64) -> Result<()> {
        self(prev, next, dt)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<MonitorRow>,
    pub snapshots: Vec<State>,
    pub final_state: State,
    pub steps: usize,
    pub rejections: usize,
}

/// Equally spaced event times `k·every ≤ t_end`.
struct Ticks {
    every: Option<f64>,
    next_k: u64,
    t_end: f64,
}

impl Ticks {
    fn new(every: Option<f64>, t_end: f64) -> Self {
        Self { every, next_k: 1, t_end }
    }

    fn next_time(&self) -> Option<f64> {
        let every = self.every?;
        let t = self.next_k as f64 * every;
        (t <= self.t_end * (1.0 + 1e-12)).then_some(t.min(self.t_end))
    }

    /// Consumes the tick if `t` reached it.
    fn hit(&mut self, t: f64) -> bool {
        match self.next_time() {
            Some(tick) if t >= tick - 1e-12 * tick.max(1.0) => {
                self.next_k += 1;
                true
            }
            _ => false,
        }
    }
}

/// Integrates from `state` to `control.t_end`.
pub fn run(
    state: State,
    params: &Params,
    control: &StepControl,
    observer: &mut dyn Observer,
) -> Result<Trajectory> {
    params.validate()?;
    control.validate()?;
    let t_end = control.t_end;
    let mut monitors = Ticks::new(control.monitor_every, t_end);
    let mut snaps = Ticks::new(control.snapshot_every, t_end);
    let mut rows = vec![monitor_row(&state, params, &control.lp_exponents)?];
    let mut snapshots = Vec::new();
    if control.snapshot_every.is_some() {
        snapshots.push(state.clone());
    }
    let mut state = state;
    let mut steps = 0;
    let mut rejections = 0;
    let near_end = |t: f64| t >= t_end - 1e-12 * t_end.max(1.0);

    while !near_end(state.t) {
        let target = [monitors.next_time(), snaps.next_time(), Some(t_end)]
            .into_iter()
            .flatten()
            .filter(|&x| x > state.t)
            .fold(t_end, f64::min);
        let proposed = match control.fixed_dt {
            Some(dt) => dt.min(control.dt_max),
            None => stable_dt(&state, params, control.dt_max)?,
        };
        let mut dt = proposed.min(target - state.t);
        let mut lands_on_target = dt == target - state.t;
        let mut attempts = 0;
        let mut next = loop {
            match step(&state, params, dt) {
                Ok(s) => break s,
                Err(Error::StepRejected { .. }) => {
                    attempts += 1;
                    rejections += 1;
                    if attempts > control.max_rejects {
                        return Err(Error::PositivityUnrecoverable { t: state.t });
                    }
                    dt *= 0.5;
                    lands_on_target = false;
                }
                Err(e) => return Err(e),
            }
        };
        if lands_on_target {
            next.t = target;
        }
        observer.accepted(&state, &next, dt)?;
        state = next;
        steps += 1;

        let at_end = near_end(state.t);
        if monitors.hit(state.t) || (at_end && rows.last().map_or(true, |r| r.t < state.t)) {
            rows.push(monitor_row(&state, params, &control.lp_exponents)?);
        }
        if snaps.hit(state.t) {
            snapshots.push(state.clone());
        }
    }

    Ok(Trajectory {
        rows,
        snapshots,
        final_state: state,
        steps,
        rejections,
    })
}
