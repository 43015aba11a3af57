//! Monitored functionals, energy-identity residuals and functional-inequality
//! testers.
//!
//! Gradient products that enter an identity are integrated as face
//! quadratures with arithmetic face means of the cell coefficient, which is
//! the same pairing the flux discretization uses. Pointwise powers of |∇v|
//! use squared face gradients averaged onto cells.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    cell_grad_sq_from_faces, face_gradient_unchecked, face_quadrature,
    laplacian_unchecked, sum_cells, weighted_face_product, FaceData, Field, GridSpec,
};
use crate::model::{pow_nonneg, Accumulators, Params, State};

/// `x log x` with `0 log 0 = 0`.
#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Gradients and derived cell quantities of one state.
struct Local<'a> {
    grid: GridSpec,
    u: &'a [f64],
    v: &'a [f64],
    gu: FaceData,
    gv: FaceData,
    gu2: Vec<f64>,
    gv2: Vec<f64>,
}

impl<'a> Local<'a> {
    fn new(state: &'a State) -> Self {
        let grid = *state.grid();
        let u = state.u.values();
        let v = state.v.values();
        let gu = face_gradient_unchecked(&grid, u);
        let gv = face_gradient_unchecked(&grid, v);
        let gu2 = cell_grad_sq_from_faces(&gu);
        let gv2 = cell_grad_sq_from_faces(&gv);
        Self {
            grid,
            u,
            v,
            gu,
            gv,
            gu2,
            gv2,
        }
    }

    fn cells(&self, f: impl Fn(usize) -> f64) -> f64 {
        sum_cells(&self.grid, &(0..self.u.len()).map(f).collect::<Vec<_>>())
    }

    fn coef(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.u.iter().zip(self.v).map(|(&a, &b)| f(a, b)).collect()
    }
}

/// Densities of the time-integrated monitors at `state`.
pub fn accumulator_rates(state: &State, params: &Params) -> Accumulators {
    let l = Local::new(state);
    let lap = laplacian_unchecked(&l.grid, l.v);
    let lap = lap.values();
    let a = params.alpha;
    let mut r = [0.0f64; 10];
    for i in 0..l.u.len() {
        let (u, v, gu2, gv2) = (l.u[i], l.v[i], l.gu2[i], l.gv2[i]);
        r[0] += u * v;
        r[1] += v * gu2;
        r[2] += u * gv2;
        r[3] += lap[i] * lap[i];
        r[4] += pow_nonneg(u, 1.0 - a) * v * gu2;
        r[5] += if u > 0.0 { v / u * gu2 } else { 0.0 };
        r[6] += u / v * gv2;
        r[7] += u * gv2 * gv2 / (v * v * v);
        r[8] += gv2 * gv2 * gv2 / v.powi(5);
        r[9] += pow_nonneg(u, 7.0 / 3.0) * v;
    }
    let vol = l.grid.cell_volume();
    Accumulators::from_array(r.map(|x| x * vol))
}

/// One timestamped record of every monitored functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRow {
    pub t: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    /// ∫u + ℓ∫v.
    pub total_mass: f64,
    pub sup_u: f64,
    pub inf_u: f64,
    pub sup_v: f64,
    pub inf_v: f64,
    /// (p, ‖u‖_p) pairs.
    pub lp_norms: Vec<(f64, f64)>,
    /// ∫u log u.
    pub log_energy: f64,
    /// ∫|∇v|⁴/v³.
    pub grad4_energy: f64,
    /// ∫|∇v|²/v.
    pub grad2_over_v: f64,
    /// ∫(u^{3−α}/((2−α)(3−α)) − uv).
    pub combined_flux_energy: f64,
    pub acc: Accumulators,
}

impl MonitorRow {
    pub fn csv_header(lp_exponents: &[f64]) -> Vec<String> {
        let mut h: Vec<String> = [
            "t",
            "mass_u",
            "mass_v",
            "total_mass",
            "sup_u",
            "inf_u",
            "sup_v",
            "inf_v",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(lp_exponents.iter().map(|p| format!("lp_{p}")));
        h.extend(
            ["log_energy", "grad4_energy", "grad2_over_v", "combined_flux_energy"]
                .iter()
                .map(|s| s.to_string()),
        );
        h.extend(Accumulators::NAMES.iter().map(|s| s.to_string()));
        h
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![
            self.t,
            self.mass_u,
            self.mass_v,
            self.total_mass,
            self.sup_u,
            self.inf_u,
            self.sup_v,
            self.inf_v,
        ];
        out.extend(self.lp_norms.iter().map(|(_, n)| *n));
        out.extend([
            self.log_energy,
            self.grad4_energy,
            self.grad2_over_v,
            self.combined_flux_energy,
        ]);
        out.extend(self.acc.to_array());
        out
    }

    pub fn csv_record(&self) -> Vec<String> {
        self.values().iter().map(|x| format!("{x:e}")).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|x| x.is_finite())
    }
}

pub fn monitor_row(state: &State, params: &Params, lp_exponents: &[f64]) -> Result<MonitorRow> {
    let inf_v = state.v.min();
    if !(inf_v > 0.0) {
        return Err(Error::VPositivityLost);
    }
    let l = Local::new(state);
    let a = params.alpha;
    let mass_u = sum_cells(&l.grid, l.u);
    let mass_v = sum_cells(&l.grid, l.v);
    let lp_norms = lp_exponents
        .iter()
        .map(|&p| crate::grid::lp_norm(&state.u, p).map(|n| (p, n)))
        .collect::<Result<Vec<_>>>()?;
    let k = 1.0 / ((2.0 - a) * (3.0 - a));
    Ok(MonitorRow {
        t: state.t,
        mass_u,
        mass_v,
        total_mass: mass_u + params.ell * mass_v,
        sup_u: state.u.max(),
        inf_u: state.u.min(),
        sup_v: state.v.max(),
        inf_v,
        lp_norms,
        log_energy: l.cells(|i| xlogx(l.u[i])),
        grad4_energy: l.cells(|i| l.gv2[i] * l.gv2[i] / l.v[i].powi(3)),
        grad2_over_v: l.cells(|i| l.gv2[i] / l.v[i]),
        combined_flux_energy: l.cells(|i| k * pow_nonneg(l.u[i], 3.0 - a) - l.u[i] * l.v[i]),
        acc: state.acc,
    })
}

/// The mass bound `M = ∫(u₀ + 1) + ℓ∫v₀` computed from an initial state
/// (whose u already carries the ε shift).
pub fn mass_bound(initial: &State, params: &Params) -> f64 {
    let grid = initial.grid();
    sum_cells(grid, initial.u.values()) + (1.0 - params.epsilon) * grid.domain_volume()
        + params.ell * sum_cells(grid, initial.v.values())
}

/// Discrete time difference against the right side of an identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub name: &'static str,
    pub t0: f64,
    pub t1: f64,
    /// Discrete rate `(Q(next) − Q(prev))/dt`.
    pub lhs: f64,
    /// Sum of the right-side terms evaluated at `prev`.
    pub rhs: f64,
    pub residual: f64,
    /// max(|lhs|, |each term|, 1).
    pub normalizer: f64,
    pub terms: Vec<(&'static str, f64)>,
}

impl ResidualReport {
    fn new(name: &'static str, prev: &State, next: &State, lhs: f64, terms: Vec<(&'static str, f64)>) -> Self {
        let rhs: f64 = terms.iter().map(|(_, x)| x).sum();
        let normalizer = terms
            .iter()
            .map(|(_, x)| x.abs())
            .fold(lhs.abs().max(1.0), f64::max);
        Self {
            name,
            t0: prev.t,
            t1: next.t,
            lhs,
            rhs,
            residual: lhs - rhs,
            normalizer,
            terms,
        }
    }

    pub fn relative(&self) -> f64 {
        self.residual / self.normalizer
    }
}

fn window_dt(prev: &State, next: &State) -> Result<f64> {
    prev.grid().ensure_same(next.grid())?;
    let dt = next.t - prev.t;
    if dt > 0.0 {
        Ok(dt)
    } else {
        Err(Error::InvalidArgument(format!("window must move forward in time, got dt={dt}")))
    }
}

/// `½ d/dt ∫|∇v|² + ∫|Δv|² + ∫u|∇v|² = −∫v∇u·∇v`.
pub fn residual_v_energy(prev: &State, next: &State, _params: &Params) -> Result<ResidualReport> {
    let dt = window_dt(prev, next)?;
    let energy = |s: &State| {
        let g = face_gradient_unchecked(s.grid(), s.v.values());
        0.5 * face_quadrature(&g.zip_map(&g, |a, b| a * b))
    };
    let lhs = (energy(next) - energy(prev)) / dt;
    let l = Local::new(prev);
    let lap = laplacian_unchecked(&l.grid, l.v);
    let lap2 = sum_cells(&l.grid, &lap.values().iter().map(|x| x * x).collect::<Vec<_>>());
    let u_gv2 = weighted_face_product(l.u, &l.gv, &l.gv);
    let v_gu_gv = weighted_face_product(l.v, &l.gu, &l.gv);
    Ok(ResidualReport::new(
        "v_energy",
        prev,
        next,
        lhs,
        vec![
            ("-int|lap v|^2", -lap2),
            ("-int u|grad v|^2", -u_gv2),
            ("-int v grad u.grad v", -v_gu_gv),
        ],
    ))
}

/// `(1/q) d/dt ∫v^q = −(q−1)∫v^{q−2}|∇v|² − ∫u v^q`.
pub fn residual_vq_identity(prev: &State, next: &State, q: f64, _params: &Params) -> Result<ResidualReport> {
    if !(q > 1.0) {
        return Err(Error::InvalidArgument(format!("q must exceed 1, got {q}")));
    }
    let dt = window_dt(prev, next)?;
    let mass_q = |s: &State| sum_cells(s.grid(), &s.v.values().iter().map(|&x| x.powf(q)).collect::<Vec<_>>());
    let lhs = (mass_q(next) - mass_q(prev)) / (q * dt);
    let l = Local::new(prev);
    let coef = l.coef(|_, v| v.powf(q - 2.0));
    let grad = weighted_face_product(&coef, &l.gv, &l.gv);
    let cons = l.cells(|i| l.u[i] * l.v[i].powf(q));
    Ok(ResidualReport::new(
        "vq_identity",
        prev,
        next,
        lhs,
        vec![("-(q-1)int v^(q-2)|grad v|^2", -(q - 1.0) * grad), ("-int u v^q", -cons)],
    ))
}

/// Sign convention for the last two v-gradient terms of the ∫u^p v^q identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpvqForm {
    /// Signs obtained by integrating `q u^p v^{q−1} Δv` by parts.
    #[default]
    Derived,
    /// Both terms with a plus sign. Kept to show that this variant does not
    /// close: its residual tends to twice those terms.
    AsPrinted,
}

/// Eight-term expansion of `d/dt ∫u^p v^q` for the regularized system.
pub fn residual_upvq_identity(
    prev: &State,
    next: &State,
    p: f64,
    q: f64,
    params: &Params,
    form: UpvqForm,
) -> Result<ResidualReport> {
    let dt = window_dt(prev, next)?;
    let functional = |s: &State| {
        let vals: Vec<f64> = s
            .u
            .values()
            .iter()
            .zip(s.v.values())
            .map(|(&u, &v)| pow_nonneg(u, p) * v.powf(q))
            .collect();
        sum_cells(s.grid(), &vals)
    };
    let lhs = (functional(next) - functional(prev)) / dt;
    let l = Local::new(prev);
    let (a, chi, ell) = (params.alpha, params.chi, params.ell);

    let face_term = |factor: f64, cu: f64, cv: f64, ga: &FaceData, gb: &FaceData| {
        if factor == 0.0 {
            0.0
        } else {
            factor * weighted_face_product(&l.coef(|u, v| pow_nonneg(u, cu) * v.powf(cv)), ga, gb)
        }
    };
    let cell_term = |factor: f64, cu: f64, cv: f64| {
        if factor == 0.0 {
            0.0
        } else {
            factor * l.cells(|i| pow_nonneg(l.u[i], cu) * l.v[i].powf(cv))
        }
    };
    let sign = match form {
        UpvqForm::Derived => -1.0,
        UpvqForm::AsPrinted => 1.0,
    };
    let (gu, gv) = (&l.gu, &l.gv);
    let terms = vec![
        ("p(1-p) u^(p-1) v^(q+1)|grad u|^2", face_term(p * (1.0 - p), p - 1.0, q + 1.0, gu, gu)),
        ("pq chi u^(p-1+a) v^q |grad v|^2", face_term(p * q * chi, p - 1.0 + a, q, gv, gv)),
        ("p l u^p v^(q+1)", cell_term(p * ell, p, q + 1.0)),
        ("-p(1-p) chi u^(p-2+a) v^(q+1) grad u.grad v", face_term(-p * (1.0 - p) * chi, p - 2.0 + a, q + 1.0, gu, gv)),
        ("-pq u^p v^q grad u.grad v", face_term(-p * q, p, q, gu, gv)),
        ("pq u^(p-1) v^(q-1) grad u.grad v", face_term(sign * p * q, p - 1.0, q - 1.0, gu, gv)),
        ("q(q-1) u^p v^(q-2)|grad v|^2", face_term(sign * q * (q - 1.0), p, q - 2.0, gv, gv)),
        ("-q u^(p+1) v^q", cell_term(-q, p + 1.0, q)),
    ];
    Ok(ResidualReport::new("upvq_identity", prev, next, lhs, terms))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstEnergyReport {
    /// Discrete rate of ∫(u^{3−α}/((2−α)(3−α)) − uv).
    pub rate: f64,
    /// `ℓ/(2−α)∫u^{3−α}v + ∫∇u·∇v + ∫u²v`.
    pub inequality_rhs: f64,
    pub slack: f64,
    /// The equality before the dissipation and `−ℓ∫uv²` are dropped.
    pub identity: ResidualReport,
}

impl FirstEnergyReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.slack >= -tol
    }
}

pub fn check_first_energy(prev: &State, next: &State, params: &Params) -> Result<FirstEnergyReport> {
    let a = params.alpha;
    if !(a < 2.0) {
        return Err(Error::InvalidParams("first energy needs alpha < 2".into()));
    }
    let dt = window_dt(prev, next)?;
    let k = 1.0 / ((2.0 - a) * (3.0 - a));
    let energy = |s: &State| {
        let vals: Vec<f64> = s
            .u
            .values()
            .iter()
            .zip(s.v.values())
            .map(|(&u, &v)| k * pow_nonneg(u, 3.0 - a) - u * v)
            .collect();
        sum_cells(s.grid(), &vals)
    };
    let rate = (energy(next) - energy(prev)) / dt;
    let l = Local::new(prev);
    let (chi, ell) = (params.chi, params.ell);
    let ones = vec![1.0; l.u.len()];
    let cross = weighted_face_product(&ones, &l.gu, &l.gv);
    let growth = l.cells(|i| pow_nonneg(l.u[i], 3.0 - a) * l.v[i]) / (2.0 - a);
    let u2v = l.cells(|i| l.u[i] * l.u[i] * l.v[i]);
    let uv2 = l.cells(|i| l.u[i] * l.v[i] * l.v[i]);
    let inequality_rhs = ell * growth + cross + u2v;

    let d_uu = weighted_face_product(&l.coef(|u, v| pow_nonneg(u, 2.0 - a) * v), &l.gu, &l.gu);
    let d_uv = weighted_face_product(&l.coef(|u, v| u * v), &l.gu, &l.gv);
    let d_vv = weighted_face_product(&l.coef(|u, v| pow_nonneg(u, a) * v), &l.gv, &l.gv);
    let identity = ResidualReport::new(
        "first_energy",
        prev,
        next,
        rate,
        vec![
            ("-int u^(2-a) v|grad u|^2", -d_uu),
            ("(1+chi) int uv grad u.grad v", (1.0 + chi) * d_uv),
            ("-chi int u^a v|grad v|^2", -chi * d_vv),
            ("l/(2-a) int u^(3-a) v", ell * growth),
            ("-l int u v^2", -ell * uv2),
            ("int grad u.grad v", cross),
            ("int u^2 v", u2v),
        ],
    );
    Ok(FirstEnergyReport {
        rate,
        inequality_rhs,
        slack: inequality_rhs - rate,
        identity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevReport {
    /// ‖φ^{p+1}ψ‖_{L^μ}.
    pub lhs: f64,
    pub grad_phi_term: f64,
    pub grad_psi_term: f64,
    /// ∫φ^{p+1}ψ, the zero-order term of the amended right side.
    pub zero_order_term: f64,
    pub rhs_amended: f64,
    pub ratio: f64,
}

/// Compares `‖φ^{p+1}ψ‖_{L^μ}` with
/// `∫φ^{p−1}ψ|∇φ|² + ∫φ^{p+1}ψ⁻¹|∇ψ|² + ∫φ^{p+1}ψ`.
///
/// `ambient_dim` is the space dimension N bounding μ ≤ N/(N−2); it may exceed
/// the grid dimension when a field stands for its constant extension.
pub fn check_sobolev_product(phi: &Field, psi: &Field, p: f64, mu: f64, ambient_dim: usize) -> Result<SobolevReport> {
    phi.grid().ensure_same(psi.grid())?;
    let grid = *phi.grid();
    if ambient_dim < grid.dim() {
        return Err(Error::InvalidArgument("ambient dimension below grid dimension".into()));
    }
    let mu_max = if ambient_dim > 2 {
        ambient_dim as f64 / (ambient_dim as f64 - 2.0)
    } else {
        f64::INFINITY
    };
    if !(mu >= 1.0 && mu <= mu_max) {
        return Err(Error::InvalidArgument(format!("mu must lie in [1, {mu_max}], got {mu}")));
    }
    if phi.values().iter().chain(psi.values()).any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("fields must be strictly positive".into()));
    }
    let f = phi.values();
    let g = psi.values();
    let gf = face_gradient_unchecked(&grid, f);
    let gg = face_gradient_unchecked(&grid, g);
    let prod: Vec<f64> = f.iter().zip(g).map(|(&a, &b)| a.powf(p + 1.0) * b).collect();
    let lhs = sum_cells(&grid, &prod.iter().map(|x| x.powf(mu)).collect::<Vec<_>>()).powf(1.0 / mu);
    let c1: Vec<f64> = f.iter().zip(g).map(|(&a, &b)| a.powf(p - 1.0) * b).collect();
    let c2: Vec<f64> = f.iter().zip(g).map(|(&a, &b)| a.powf(p + 1.0) / b).collect();
    let grad_phi_term = weighted_face_product(&c1, &gf, &gf);
    let grad_psi_term = weighted_face_product(&c2, &gg, &gg);
    let zero_order_term = sum_cells(&grid, &prod);
    let rhs_amended = grad_phi_term + grad_psi_term + zero_order_term;
    Ok(SobolevReport {
        lhs,
        grad_phi_term,
        grad_psi_term,
        zero_order_term,
        rhs_amended,
        ratio: lhs / rhs_amended,
    })
}

/// Axes shorter than this get their boundary cells dropped from Hessian quadratures.
pub const HESSIAN_BOUNDARY_MIN_CELLS: usize = 16;

/// Symmetric cell Hessians, row-major `dim × dim`.
fn cell_hessian(grid: &GridSpec, f: &[f64]) -> Vec<[f64; 9]> {
    let dim = grid.dim();
    let n = f.len();
    let grad = face_gradient_unchecked(grid, f);
    // central first derivatives with mirrored ghosts
    let mut first = vec![vec![0.0; n]; dim];
    for (axis, d) in first.iter_mut().enumerate() {
        let g = grad.axis(axis);
        grid.for_each_face(axis, |face, l, r| {
            d[l] += 0.5 * g[face];
            d[r] += 0.5 * g[face];
        });
    }
    let mut out = vec![[0.0; 9]; n];
    for a in 0..dim {
        let inv_h2 = grid.spacing(a).powi(-2);
        grid.for_each_face(a, |_, l, r| {
            let d = (f[r] - f[l]) * inv_h2;
            out[l][a * 3 + a] += d;
            out[r][a * 3 + a] -= d;
        });
        for b in (a + 1)..dim {
            let gb = face_gradient_unchecked(grid, &first[b]);
            let g = gb.axis(a);
            let mut cross = vec![0.0; n];
            grid.for_each_face(a, |face, l, r| {
                cross[l] += 0.5 * g[face];
                cross[r] += 0.5 * g[face];
            });
            for i in 0..n {
                out[i][a * 3 + b] = cross[i];
                out[i][b * 3 + a] = cross[i];
            }
        }
    }
    out
}

fn frobenius2(h: &[f64; 9]) -> f64 {
    h.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogHessianReport {
    pub q: f64,
    /// ∫φ^{−q−1}|∇φ|^{q+2}.
    pub lhs1: f64,
    /// ∫φ^{3−q}|∇φ|^{q−2}|D² log φ|².
    pub rhs1: f64,
    /// (q + √N)².
    pub const1: f64,
    /// ∫φ^{1−q}|∇φ|^{q−2}|D²φ|².
    pub lhs2: f64,
    pub rhs2: f64,
    /// (q + √N + 1)².
    pub const2: f64,
}

impl LogHessianReport {
    pub const SLACK: f64 = 0.05;

    pub fn passes(&self) -> bool {
        self.lhs1 <= (1.0 + Self::SLACK) * self.const1 * self.rhs1
            && self.lhs2 <= (1.0 + Self::SLACK) * self.const2 * self.rhs2
    }

    pub fn ratio1(&self) -> f64 {
        if self.lhs1 == 0.0 {
            0.0
        } else {
            self.lhs1 / (self.const1 * self.rhs1)
        }
    }

    pub fn ratio2(&self) -> f64 {
        if self.lhs2 == 0.0 {
            0.0
        } else {
            self.lhs2 / (self.const2 * self.rhs2)
        }
    }
}

pub fn check_log_hessian(phi: &Field, q: f64) -> Result<LogHessianReport> {
    if !(q >= 2.0) {
        return Err(Error::InvalidArgument(format!("q must be at least 2, got {q}")));
    }
    if phi.values().iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("phi must be strictly positive".into()));
    }
    let grid = *phi.grid();
    let f = phi.values();
    let logf: Vec<f64> = f.iter().map(|x| x.ln()).collect();
    let grad2 = cell_grad_sq_from_faces(&face_gradient_unchecked(&grid, f));
    let h_log = cell_hessian(&grid, &logf);
    let h = cell_hessian(&grid, f);
    let skip_boundary = grid.cells().iter().any(|&n| n < HESSIAN_BOUNDARY_MIN_CELLS);
    let (mut lhs1, mut rhs1, mut lhs2) = (0.0, 0.0, 0.0);
    for i in 0..f.len() {
        if skip_boundary && grid.is_boundary_cell(i) {
            continue;
        }
        let g = grad2[i].sqrt();
        let gq2 = if q == 2.0 { 1.0 } else { g.powf(q - 2.0) };
        lhs1 += f[i].powf(-q - 1.0) * g.powf(q + 2.0);
        rhs1 += f[i].powf(3.0 - q) * gq2 * frobenius2(&h_log[i]);
        lhs2 += f[i].powf(1.0 - q) * gq2 * frobenius2(&h[i]);
    }
    let vol = grid.cell_volume();
    let sqrt_n = (grid.dim() as f64).sqrt();
    Ok(LogHessianReport {
        q,
        lhs1: lhs1 * vol,
        rhs1: rhs1 * vol,
        const1: (q + sqrt_n).powi(2),
        lhs2: lhs2 * vol,
        rhs2: rhs1 * vol,
        const2: (q + sqrt_n + 1.0).powi(2),
    })
}

/// A smooth positive Neumann-compatible field `exp(Σ c_k Π_a cos(k_a π x_a / L_a))`
/// with random coefficients `c_k ~ U(−amp, amp)/(1 + |k|²)` over modes `|k|_∞ ≤ max_mode`.
pub fn random_neumann_field<R: Rng + ?Sized>(grid: &GridSpec, rng: &mut R, max_mode: u32, amplitude: f64) -> Field {
    let dim = grid.dim();
    let mut modes = Vec::new();
    let per_axis = max_mode as usize + 1;
    for flat in 0..per_axis.pow(dim as u32) {
        let mut k = [0u32; 3];
        let mut rest = flat;
        for slot in k.iter_mut().take(dim) {
            *slot = (rest % per_axis) as u32;
            rest /= per_axis;
        }
        if k.iter().all(|&x| x == 0) {
            continue;
        }
        let k2: u32 = k.iter().map(|x| x * x).sum();
        let c = rng.gen_range(-amplitude..amplitude) / (1.0 + k2 as f64);
        modes.push((k, c));
    }
    let lengths = grid.lengths().to_vec();
    let values = (0..grid.num_cells())
        .map(|i| {
            let x = grid.cell_center(i);
            let s: f64 = modes
                .iter()
                .map(|(k, c)| {
                    c * (0..dim)
                        .map(|a| (k[a] as f64 * std::f64::consts::PI * x[a] / lengths[a]).cos())
                        .product::<f64>()
                })
                .sum();
            s.exp()
        })
        .collect();
    Field::from_raw(*grid, values)
}

/// Per-step ingredients of the combined `u log u` / `|∇v|⁴/v³` balance.
///
/// The balance reads `C₀·a + b ≤ C·rhs` with
/// `a = d/dt ∫4(u log u − u) + ∫v|∇u|²`,
/// `b = d/dt ∫|∇v|⁴/v³ + 2∫|∇v|²/v |D² log v|² + ∫u|∇v|⁴/v³`,
/// `rhs = ∫u^{2α−2}v|∇v|² + ∫uv log u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Struc2Sample {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub rhs: f64,
}

pub fn struc2_sample(prev: &State, next: &State, params: &Params) -> Result<Struc2Sample> {
    if !(params.alpha > 1.0) {
        return Err(Error::InvalidParams("the gradient balance needs alpha > 1".into()));
    }
    let dt = window_dt(prev, next)?;
    let log_part = |s: &State| {
        let vals: Vec<f64> = s.u.values().iter().map(|&u| 4.0 * (xlogx(u) - u)).collect();
        sum_cells(s.grid(), &vals)
    };
    let grad4 = |s: &State| {
        let l = Local::new(s);
        l.cells(|i| l.gv2[i] * l.gv2[i] / l.v[i].powi(3))
    };
    let l = Local::new(prev);
    let logv: Vec<f64> = l.v.iter().map(|x| x.ln()).collect();
    let h = cell_hessian(&l.grid, &logv);
    let a_val = (log_part(next) - log_part(prev)) / dt + l.cells(|i| l.v[i] * l.gu2[i]);
    let b_val = (grad4(next) - grad4(prev)) / dt
        + 2.0 * l.cells(|i| l.gv2[i] / l.v[i] * frobenius2(&h[i]))
        + l.cells(|i| l.u[i] * l.gv2[i] * l.gv2[i] / l.v[i].powi(3));
    let e = 2.0 * params.alpha - 2.0;
    let rhs = l.cells(|i| pow_nonneg(l.u[i], e) * l.v[i] * l.gv2[i]) + l.cells(|i| xlogx(l.u[i]) * l.v[i]);
    Ok(Struc2Sample {
        t: prev.t,
        a: a_val,
        b: b_val,
        rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Struc2Report {
    pub steps: usize,
    /// Smallest nonnegative C₀ for which some finite C works on the window.
    pub c0: f64,
    /// Smallest C for that C₀.
    pub c: f64,
    pub feasible: bool,
}

/// Empirical constants of the balance over a window of samples.
pub fn check_struc2_balance(samples: &[Struc2Sample]) -> Struc2Report {
    let mut lower = 0.0f64;
    let mut upper = f64::INFINITY;
    let mut feasible = true;
    for s in samples.iter().filter(|s| s.rhs <= 0.0) {
        // need C₀·a + b ≤ 0
        if s.a < 0.0 {
            lower = lower.max(-s.b / s.a);
        } else if s.a > 0.0 {
            upper = upper.min(-s.b / s.a);
        } else if s.b > 0.0 {
            feasible = false;
        }
    }
    if lower > upper {
        feasible = false;
    }
    let c0 = lower;
    let c = samples
        .iter()
        .filter(|s| s.rhs > 0.0)
        .map(|s| ((c0 * s.a + s.b) / s.rhs).max(0.0))
        .fold(0.0, f64::max);
    Struc2Report {
        steps: samples.len(),
        c0,
        c,
        feasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use crate::model::{build_initial, InitialData, InitialKind};
    use crate::stepper::step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn line(n: usize) -> GridSpec {
        GridSpec::uniform(1, n, 1.0).unwrap()
    }

    fn state(u: Field, v: Field) -> State {
        State::new(0.0, u, v).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, m: usize) -> f64 {
        let h = 1.0 / m as f64;
        let mut s = f(0.0) + f(1.0);
        for k in 1..m {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn constants_row() {
        let g = line(8);
        let s = state(Field::constant(g, 1.0).unwrap(), Field::constant(g, 1.0).unwrap());
        let p = Params::new(0.5, 0.0, 0.01).unwrap();
        let row = monitor_row(&s, &p, &[1.0, 2.0]).unwrap();
        assert!((row.combined_flux_energy + 11.0 / 15.0).abs() < 1e-14);
        assert_eq!(row.grad4_energy, 0.0);
        assert_eq!(row.log_energy, 0.0);
        assert_eq!(row.lp_norms, vec![(1.0, 1.0), (2.0, 1.0)]);
        assert!(row.is_finite());
        assert_eq!(MonitorRow::csv_header(&[1.0, 2.0]).len(), row.values().len());
    }

    #[test]
    fn total_mass_against_bound() {
        let g = line(8);
        let p = Params::new(1.0, 1.0, 0.01).unwrap();
        let data = InitialData::new(InitialKind::Constant {
            u0: 2.0 - p.epsilon,
            v0: 1.0,
        });
        let s = build_initial(&g, &data, &p).unwrap();
        let row = monitor_row(&s, &p, &[]).unwrap();
        assert!((row.total_mass - 3.0).abs() < 1e-14);
        assert!((mass_bound(&s, &p) - (4.0 - p.epsilon)).abs() < 1e-14);
    }

    #[test]
    fn grad4_energy_against_quadrature() {
        let n = 512;
        let g = line(n);
        let s = state(
            Field::constant(g, 1.0).unwrap(),
            Field::from_fn(g, |x| 1.0 + 0.3 * (PI * x[0]).cos()).unwrap(),
        );
        let row = monitor_row(&s, &Params::default(), &[]).unwrap();
        let reference = simpson(
            |x| (0.3 * PI * (PI * x).sin()).powi(4) / (1.0 + 0.3 * (PI * x).cos()).powi(3),
            20_000,
        );
        assert!((row.grad4_energy - reference).abs() < 1e-4, "{} vs {}", row.grad4_energy, reference);
    }

    #[test]
    fn monitor_rejects_nonpositive_v() {
        let g = line(2);
        let mut s = state(Field::constant(g, 1.0).unwrap(), Field::constant(g, 1.0).unwrap());
        s.v = Field::new(g, vec![1.0, 0.0]).unwrap();
        assert_eq!(monitor_row(&s, &Params::default(), &[]), Err(Error::VPositivityLost));
    }

    fn heat_pair(n: usize, dt: f64) -> (State, State, Params) {
        let g = line(n);
        let p = Params {
            chi: 0.0,
            ..Params::new(1.0, 0.0, 1e-8).unwrap()
        };
        let s = state(
            Field::constant(g, 1e-8).unwrap(),
            Field::from_fn(g, |x| 1.0 + 0.3 * (PI * x[0]).cos()).unwrap(),
        );
        let next = step(&s, &p, dt).unwrap();
        (s, next, p)
    }

    #[test]
    fn v_energy_constant_v_is_zero() {
        let g = line(16);
        let s = state(Field::constant(g, 0.4).unwrap(), Field::constant(g, 2.0).unwrap());
        let p = Params::default();
        let next = step(&s, &p, 1e-4).unwrap();
        let r = residual_v_energy(&s, &next, &p).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.normalizer, 1.0);
    }

    #[test]
    fn v_energy_heat_flow_refinement() {
        let mut last = None;
        for n in [32usize, 64, 128] {
            let dt = 0.2 / (n * n) as f64;
            let (s, next, p) = heat_pair(n, dt);
            let r = residual_v_energy(&s, &next, &p).unwrap().relative().abs();
            if let Some(prev) = last {
                assert!(prev / r >= 1.8, "{prev} -> {r}");
            }
            last = Some(r);
        }
    }

    #[test]
    fn vq_identity_cases() {
        let g = line(16);
        let s = state(Field::constant(g, 1e-9).unwrap(), Field::constant(g, 2.0).unwrap());
        let p = Params {
            ..Params::new(1.0, 0.0, 0.01).unwrap()
        };
        let next = step(&s, &p, 1e-4).unwrap();
        let r = residual_vq_identity(&s, &next, 2.0, &p).unwrap();
        assert!(r.residual.abs() < 1e-8);

        // heat flow
        let mut last = None;
        for n in [32usize, 64, 128] {
            let (s, next, p) = heat_pair(n, 0.2 / (n * n) as f64);
            let r = residual_vq_identity(&s, &next, 2.0, &p).unwrap().relative().abs();
            if let Some(prev) = last {
                assert!(prev / r >= 1.8, "{prev} -> {r}");
            }
            last = Some(r);
        }

        // spatially constant ODE, q = 3: first order in dt
        let s = state(Field::constant(g, 1.5).unwrap(), Field::constant(g, 0.7).unwrap());
        let r1 = residual_vq_identity(&s, &step(&s, &p, 1e-3).unwrap(), 3.0, &p).unwrap();
        let r2 = residual_vq_identity(&s, &step(&s, &p, 5e-4).unwrap(), 3.0, &p).unwrap();
        assert!(r1.residual.abs() < 1e-2);
        assert!((r1.residual / r2.residual - 2.0).abs() < 0.01);
        assert!(residual_vq_identity(&s, &step(&s, &p, 1e-3).unwrap(), 1.0, &p).is_err());
    }

    #[test]
    fn upvq_constants_reduce_to_ode() {
        let g = line(8);
        let (a, b) = (1.3, 0.6);
        let s = state(Field::constant(g, a).unwrap(), Field::constant(g, b).unwrap());
        let p = Params::new(1.75, 0.7, 0.01).unwrap();
        let (pp, qq) = (0.5, 2.0);
        let mut res = Vec::new();
        for dt in [1e-3, 5e-4] {
            let r = residual_upvq_identity(&s, &step(&s, &p, dt).unwrap(), pp, qq, &p, UpvqForm::Derived).unwrap();
            let expected = pp * p.ell * a.powf(pp) * b.powf(qq + 1.0) - qq * a.powf(pp + 1.0) * b.powf(qq);
            assert!((r.rhs - expected).abs() < 1e-13);
            res.push(r.residual);
        }
        assert!((res[0] / res[1] - 2.0).abs() < 0.01);
    }

    #[test]
    fn upvq_reduces_to_mass_law() {
        let g = line(64);
        let p = Params::new(1.25, 1.0, 0.01).unwrap();
        let data = InitialData::new(InitialKind::GaussianBump {
            base: 0.2,
            amplitude: 1.0,
            width: 0.1,
            v0: 1.0,
        });
        let s = build_initial(&g, &data, &p).unwrap();
        let next = step(&s, &p, 1e-5).unwrap();
        let r = residual_upvq_identity(&s, &next, 1.0, 0.0, &p, UpvqForm::Derived).unwrap();
        assert!(r.relative().abs() <= 1e-10, "{}", r.relative());
        let mass = integrate(&s.u.zip_map(&s.v, |a, b| a * b)).unwrap();
        assert!((r.rhs - mass).abs() < 1e-14);
    }

    #[test]
    fn first_energy_constant_state() {
        let g = line(8);
        let s = state(Field::constant(g, 1.0).unwrap(), Field::constant(g, 1.0).unwrap());
        let p = Params::new(1.0, 0.0, 0.01).unwrap();
        let rep = check_first_energy(&s, &step(&s, &p, 1e-3).unwrap(), &p).unwrap();
        // d/dt(u²/2 − uv) = −u v_t = u²v = 1 for the Euler step exactly
        assert!((rep.rate - 1.0).abs() < 1e-12);
        assert!((rep.inequality_rhs - 1.0).abs() < 1e-12);
        assert!(rep.passes(1e-8));
        assert!(rep.identity.residual.abs() < 1e-12);
    }

    #[test]
    fn sobolev_constants() {
        let g = GridSpec::new(&[8], &[2.0]).unwrap();
        let one = Field::constant(g, 1.0).unwrap();
        let r = check_sobolev_product(&one, &one, 1.0, 3.0, 3).unwrap();
        assert!((r.lhs - 2f64.powf(1.0 / 3.0)).abs() < 1e-14);
        assert_eq!(r.grad_phi_term, 0.0);
        assert!((r.zero_order_term - 2.0).abs() < 1e-14);
        assert!((r.ratio - 2f64.powf(1.0 / 3.0 - 1.0)).abs() < 1e-14);
        assert!(check_sobolev_product(&one, &one, 1.0, 3.5, 3).is_err());
        assert!(check_sobolev_product(&one, &one, 1.0, 0.5, 1).is_err());
        let bad = Field::new(g, vec![1.0; 7].into_iter().chain([0.0]).collect()).unwrap();
        assert!(check_sobolev_product(&bad, &one, 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn log_hessian_constant_is_zero() {
        let f = Field::constant(GridSpec::uniform(2, 8, 1.0).unwrap(), 3.0).unwrap();
        let r = check_log_hessian(&f, 2.0).unwrap();
        assert_eq!((r.lhs1, r.rhs1, r.lhs2, r.rhs2), (0.0, 0.0, 0.0, 0.0));
        assert!(r.passes());
        assert!(check_log_hessian(&f, 1.5).is_err());
    }

    #[test]
    fn log_hessian_exp_cos_against_quadrature() {
        let n = 512;
        let f = Field::from_fn(line(n), |x| (PI * x[0]).cos().exp()).unwrap();
        let r = check_log_hessian(&f, 2.0).unwrap();
        // φ = e^{cos πx}: φ' = −π sin(πx) φ, (log φ)'' = −π² cos πx
        let lhs1 = simpson(|x| (PI * (PI * x).sin()).powi(4) * (PI * x).cos().exp(), 20_000);
        let rhs1 = simpson(|x| (PI * x).cos().exp() * (PI * PI * (PI * x).cos()).powi(2), 20_000);
        assert!((r.lhs1 - lhs1).abs() / lhs1 < 1e-3, "{} vs {lhs1}", r.lhs1);
        assert!((r.rhs1 - rhs1).abs() / rhs1 < 1e-3, "{} vs {rhs1}", r.rhs1);
        assert!(r.passes());
        assert_eq!(r.const1, 9.0);
        assert_eq!(r.const2, 16.0);
    }

    #[test]
    fn log_hessian_radial_bump_2d() {
        let g = GridSpec::uniform(2, 96, 1.0).unwrap();
        let f = Field::from_fn(g, |x| {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            (0.8 * (-r2 / 0.02).exp()).exp()
        })
        .unwrap();
        let r = check_log_hessian(&f, 4.0).unwrap();
        assert!(r.ratio1() < 1.0 && r.ratio2() < 1.0, "{r:?}");
    }

    #[test]
    fn random_fields_are_positive_and_reproducible() {
        let g = GridSpec::uniform(2, 12, 1.0).unwrap();
        let a = random_neumann_field(&g, &mut ChaCha8Rng::seed_from_u64(3), 3, 1.0);
        let b = random_neumann_field(&g, &mut ChaCha8Rng::seed_from_u64(3), 3, 1.0);
        assert_eq!(a, b);
        assert!(a.min() > 0.0);
    }

    #[test]
    fn struc2_constants_trivial() {
        let g = line(16);
        let s = state(Field::constant(g, 1.0).unwrap(), Field::constant(g, 1.0).unwrap());
        let p = Params::new(1.5, 0.0, 0.01).unwrap();
        let smp = struc2_sample(&s, &step(&s, &p, 1e-4).unwrap(), &p).unwrap();
        assert_eq!((smp.a, smp.b, smp.rhs), (0.0, 0.0, 0.0));
        let rep = check_struc2_balance(&[smp]);
        assert!(rep.feasible);
        assert_eq!((rep.c0, rep.c), (0.0, 0.0));
        assert!(struc2_sample(&s, &s, &Params::new(0.5, 0.0, 0.01).unwrap()).is_err());
    }

    #[test]
    fn struc2_fit_logic() {
        let mk = |a, b, rhs| Struc2Sample { t: 0.0, a, b, rhs };
        let rep = check_struc2_balance(&[mk(-2.0, 4.0, -1.0), mk(-1.0, 1.0, 2.0)]);
        assert!(rep.feasible);
        assert_eq!(rep.c0, 2.0);
        assert_eq!(rep.c, 0.0);
        let rep = check_struc2_balance(&[mk(-2.0, 4.0, -1.0), mk(1.0, 1.0, 2.0)]);
        assert_eq!(rep.c, 1.5);
        let rep = check_struc2_balance(&[mk(0.0, 1.0, -1.0)]);
        assert!(!rep.feasible);
    }
}
