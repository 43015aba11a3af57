//! The regularized nutrient taxis system in flux form:
//!
//! ```text
//! u_t = ∇·(u v ∇u) − χ ∇·(u^α v ∇v) + ℓ u v
//! v_t = Δv − u v
//! ```
//!
//! with no-flux boundaries and initial data `(u₀ + ε, v₀)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FaceData, Field, GridSpec};

/// How a cell quantity is carried onto the face between two cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgMode {
    Arithmetic,
    /// √(ab): zero whenever either side is zero.
    #[default]
    Geometric,
}

impl AvgMode {
    #[inline]
    pub fn average(self, a: f64, b: f64) -> f64 {
        match self {
            AvgMode::Arithmetic => 0.5 * (a + b),
            AvgMode::Geometric => (a * b).sqrt(),
        }
    }
}

impl std::str::FromStr for AvgMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arithmetic" => Ok(AvgMode::Arithmetic),
            "geometric" => Ok(AvgMode::Geometric),
            other => Err(Error::InvalidParams(format!("unknown averaging mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Chemotactic sensitivity exponent, 0 ≤ α < 2.
    pub alpha: f64,
    pub chi: f64,
    /// Growth-by-consumption rate.
    pub ell: f64,
    /// Shift added to u₀.
    pub epsilon: f64,
    pub cfl_safety: f64,
    pub avg_mode: AvgMode,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            chi: 1.0,
            ell: 0.0,
            epsilon: 0.01,
            cfl_safety: 0.9,
            avg_mode: AvgMode::Geometric,
        }
    }
}

impl Params {
    pub fn new(alpha: f64, ell: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            alpha,
            ell,
            epsilon,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha < 2.0) {
            return Err(Error::InvalidParams(format!(
                "alpha must satisfy 0 <= alpha < 2, got {}",
                self.alpha
            )));
        }
        if !(self.chi.is_finite() && self.chi >= 0.0) {
            return Err(Error::InvalidParams(format!("chi must be nonnegative, got {}", self.chi)));
        }
        if !(self.ell.is_finite() && self.ell >= 0.0) {
            return Err(Error::InvalidParams(format!("ell must be nonnegative, got {}", self.ell)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        Ok(())
    }
}

/// `x^e` for `x ≥ 0` via `exp(e·ln x)`, continuous at `x = 0`.
#[inline]
pub fn pow_nonneg(x: f64, e: f64) -> f64 {
    if x > 0.0 {
        (e * x.ln()).exp()
    } else if e == 0.0 {
        1.0
    } else if e > 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Running time integrals ∫₀ᵗ∫_Ω of the catalogued dissipation and
/// consumption densities, advanced with left-endpoint quadrature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulators {
    pub uv: f64,
    pub v_grad_u2: f64,
    pub u_grad_v2: f64,
    pub lap_v2: f64,
    pub u1ma_v_grad_u2: f64,
    pub v_over_u_grad_u2: f64,
    pub u_over_v_grad_v2: f64,
    pub u_grad_v4_over_v3: f64,
    pub grad_v6_over_v5: f64,
    pub u73_v: f64,
}

impl Accumulators {
    pub const NAMES: [&'static str; 10] = [
        "acc_uv",
        "acc_v_grad_u2",
        "acc_u_grad_v2",
        "acc_lap_v2",
        "acc_u1ma_v_grad_u2",
        "acc_v_over_u_grad_u2",
        "acc_u_over_v_grad_v2",
        "acc_u_grad_v4_over_v3",
        "acc_grad_v6_over_v5",
        "acc_u73_v",
    ];

    pub fn to_array(&self) -> [f64; 10] {
        [
            self.uv,
            self.v_grad_u2,
            self.u_grad_v2,
            self.lap_v2,
            self.u1ma_v_grad_u2,
            self.v_over_u_grad_u2,
            self.u_over_v_grad_v2,
            self.u_grad_v4_over_v3,
            self.grad_v6_over_v5,
            self.u73_v,
        ]
    }

    pub fn from_array(a: [f64; 10]) -> Self {
        Self {
            uv: a[0],
            v_grad_u2: a[1],
            u_grad_v2: a[2],
            lap_v2: a[3],
            u1ma_v_grad_u2: a[4],
            v_over_u_grad_u2: a[5],
            u_over_v_grad_v2: a[6],
            u_grad_v4_over_v3: a[7],
            grad_v6_over_v5: a[8],
            u73_v: a[9],
        }
    }

    /// self + dt · rates, componentwise.
    pub fn advanced(&self, rates: &Accumulators, dt: f64) -> Accumulators {
        let a = self.to_array();
        let r = rates.to_array();
        Self::from_array(std::array::from_fn(|k| a[k] + dt * r[k]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: Field,
    pub v: Field,
    pub acc: Accumulators,
}

impl State {
    /// Validates u ≥ 0, v > 0 on a common grid; accumulators start at zero.
    pub fn new(t: f64, u: Field, v: Field) -> Result<Self> {
        u.grid().ensure_same(v.grid())?;
        if u.values().iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument("u must be nonnegative".into()));
        }
        if v.values().iter().any(|&x| x <= 0.0) {
            return Err(Error::VPositivityLost);
        }
        Ok(Self {
            t,
            u,
            v,
            acc: Accumulators::default(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.grid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialKind {
    Constant {
        u0: f64,
        v0: f64,
    },
    /// `u₀ = base + amplitude·exp(−|x − c|²/(2 width²))` centered in the box, `v₀ ≡ v0`.
    GaussianBump {
        base: f64,
        amplitude: f64,
        width: f64,
        v0: f64,
    },
    /// `mean + amp·Π_a cos(mode·π·x_a/L_a)` for both components.
    CosineMix {
        u_mean: f64,
        u_amp: f64,
        v_mean: f64,
        v_amp: f64,
        mode: u32,
    },
    /// Raw cell values of u₀ and v₀ (ε is still added to u₀).
    Values { u0: Vec<f64>, v0: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub kind: InitialKind,
    /// Required lower bound for v₀.
    pub v_floor: f64,
}

impl InitialData {
    pub fn new(kind: InitialKind) -> Self {
        Self {
            kind,
            v_floor: 1e-6,
        }
    }

    fn sample(&self, grid: &GridSpec) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = grid.num_cells();
        let dim = grid.dim();
        let cosine = |x: &[f64; 3], mode: u32| -> f64 {
            (0..dim)
                .map(|a| (mode as f64 * PI * x[a] / grid.lengths()[a]).cos())
                .product()
        };
        Ok(match &self.kind {
            InitialKind::Constant { u0, v0 } => (vec![*u0; n], vec![*v0; n]),
            InitialKind::GaussianBump {
                base,
                amplitude,
                width,
                v0,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidInitialData("bump width must be positive".into()));
                }
                let u = (0..n)
                    .map(|i| {
                        let x = grid.cell_center(i);
                        let r2: f64 = (0..dim)
                            .map(|a| (x[a] - 0.5 * grid.lengths()[a]).powi(2))
                            .sum();
                        base + amplitude * (-r2 / (2.0 * width * width)).exp()
                    })
                    .collect();
                (u, vec![*v0; n])
            }
            InitialKind::CosineMix {
                u_mean,
                u_amp,
                v_mean,
                v_amp,
                mode,
            } => (0..n)
                .map(|i| {
                    let c = cosine(&grid.cell_center(i), *mode);
                    (u_mean + u_amp * c, v_mean + v_amp * c)
                })
                .unzip(),
            InitialKind::Values { u0, v0 } => {
                if u0.len() != n || v0.len() != n {
                    return Err(Error::InvalidInitialData(format!(
                        "expected {n} values per component, got {} and {}",
                        u0.len(),
                        v0.len()
                    )));
                }
                (u0.clone(), v0.clone())
            }
        })
    }
}

/// Initial state `(u₀ + ε, v₀)` at `t = 0` with zeroed accumulators.
pub fn build_initial(grid: &GridSpec, data: &InitialData, params: &Params) -> Result<State> {
    params.validate()?;
    if !(data.v_floor > 0.0) {
        return Err(Error::NonPositiveInitialV);
    }
    let (u0, v0) = data.sample(grid)?;
    if u0.iter().chain(&v0).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteField);
    }
    if u0.iter().any(|&x| x < 0.0) {
        return Err(Error::NegativeInitialU);
    }
    if u0.iter().all(|&x| x == 0.0) {
        return Err(Error::VanishingInitialU);
    }
    if v0.iter().any(|&x| x < data.v_floor) {
        return Err(Error::NonPositiveInitialV);
    }
    let u = Field::new(*grid, u0.iter().map(|x| x + params.epsilon).collect())?;
    let v = Field::new(*grid, v0)?;
    State::new(0.0, u, v)
}

/// Face average of a cell quantity.
pub fn face_average(grid: &GridSpec, values: &[f64], mode: AvgMode) -> FaceData {
    let mut out = FaceData::zeros(*grid);
    for axis in 0..grid.dim() {
        let faces = out.axis_mut(axis);
        grid.for_each_face(axis, |face, l, r| {
            faces[face] = mode.average(values[l], values[r]);
        });
    }
    out
}

/// Face values of the doubly degenerate diffusivity `uv`.
pub fn face_diffusivity(u: &Field, v: &Field, mode: AvgMode) -> FaceData {
    let uv: Vec<f64> = u.values().iter().zip(v.values()).map(|(a, b)| a * b).collect();
    face_average(u.grid(), &uv, mode)
}

/// Time derivatives `(du, dv)` of the regularized system at `state`.
pub fn assemble_rhs(state: &State, params: &Params) -> Result<(Field, Field)> {
    let grid = *state.grid();
    let u = state.u.values();
    let v = state.v.values();
    let n = grid.num_cells();
    let mode = params.avg_mode;
    let chi = params.chi;

    let mut uv = Vec::with_capacity(n);
    let mut ua_v = Vec::with_capacity(n);
    for i in 0..n {
        uv.push(u[i] * v[i]);
        ua_v.push(pow_nonneg(u[i], params.alpha) * v[i]);
    }

    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let inv_h2 = 1.0 / (h * h);
        grid.for_each_face(axis, |_, l, r| {
            let diff = mode.average(uv[l], uv[r]);
            let taxis = mode.average(ua_v[l], ua_v[r]);
            let gv = (v[r] - v[l]) * inv_h2;
            let flux = diff * (u[r] - u[l]) * inv_h2 - chi * taxis * gv;
            du[l] += flux;
            du[r] -= flux;
            dv[l] += gv;
            dv[r] -= gv;
        });
    }
    for i in 0..n {
        du[i] += params.ell * uv[i];
        dv[i] -= uv[i];
        if !(du[i].is_finite() && dv[i].is_finite()) {
            return Err(Error::RhsOverflow { cell: i });
        }
    }
    Ok((Field::from_raw(grid, du), Field::from_raw(grid, dv)))
}
