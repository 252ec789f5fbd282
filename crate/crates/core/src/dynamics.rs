//! Planar circular and elliptic restricted three-body problems in the
//! synodic (pulsating) frame, their variational equations, the
//! stroboscopic map, and the Levi-Civita regularization around m2.
//!
//! State ordering is `(x, y, px, py)` throughout. Time is nondimensional,
//! the primaries have unit mean separation and unit mean motion.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::integrator::{Dop853, OdeSystem};

pub type State4 = Vector4<f64>;
pub type Mat4 = Matrix4<f64>;

/// Model constants and integration tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    /// Eccentricity of the primaries' orbit; 0 gives the circular problem.
    pub eps: f64,
    /// Frequency of the perturbation; the mean anomaly is `omega_p * t`.
    pub omega_p: f64,
    /// Perturbation phase at which the stroboscopic section is taken.
    pub theta_p0: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Unregularized propagation refuses to go closer than this to either primary.
    pub singularity_floor: f64,
    /// Bound on |s| for regularized propagation before giving up on the event.
    pub max_s_span: f64,
}

/// Europa-to-Jupiter mass ratio from GM(Jupiter)=126686534 km^3/s^2 and
/// GM(Europa)=3202.739 km^3/s^2.
pub const MU_JUPITER_EUROPA: f64 = 3202.739 / (126686534.0 + 3202.739);

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            mu: MU_JUPITER_EUROPA,
            eps: 0.0,
            omega_p: 1.0,
            theta_p0: 0.0,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            singularity_floor: 1e-6,
            max_s_span: 1e6,
        }
    }
}

impl ModelParams {
    pub fn jupiter_europa(eps: f64) -> Self {
        ModelParams {
            eps,
            ..ModelParams::default()
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        ModelParams { eps, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidInput(format!("mu={} outside (0,1)", self.mu)));
        }
        if !(self.eps >= 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidInput(format!("eps={} outside [0,1)", self.eps)));
        }
        if !(self.omega_p > 0.0 && self.omega_p.is_finite()) {
            return Err(Error::InvalidInput(format!("omega_p={} must be positive", self.omega_p)));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("integrator tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Period of the perturbation, i.e. the stroboscopic time step.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_p
    }

    /// Time at which the stroboscopic section is taken.
    pub fn section_time(&self) -> f64 {
        self.theta_p0 / self.omega_p
    }

    /// True when the perturbation is even in time about the section,
    /// which gives the reversing symmetry `(x, y, px, py, t) -> (x, -y, -px, py, -t)`.
    pub fn is_reversible(&self) -> bool {
        self.eps == 0.0 || (self.theta_p0 / PI).fract() == 0.0
    }

    pub fn integrator(&self) -> Dop853 {
        Dop853::with_tolerances(self.abs_tol, self.rel_tol)
    }
}

/// Solves Kepler's equation `E - eps sin E = M`.
pub fn solve_kepler(mean_anomaly: f64, eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) || !mean_anomaly.is_finite() {
        return Err(Error::KeplerNonConvergence { mean_anomaly, eps });
    }
    if eps == 0.0 {
        return Ok(mean_anomaly);
    }
    let turns = (mean_anomaly / (2.0 * PI)).round();
    let m = mean_anomaly - 2.0 * PI * turns;
    // E - M is bounded by eps, which brackets the root.
    let (mut lo, mut hi) = (m - eps, m + eps);
    let mut e = if eps < 0.8 { m + eps * m.sin() } else { m.signum() * PI };
    e = e.clamp(lo, hi);
    for _ in 0..100 {
        let f = e - eps * e.sin() - m;
        if f.abs() <= 1e-15 {
            return Ok(e + 2.0 * PI * turns);
        }
        if f > 0.0 {
            hi = e;
        } else {
            lo = e;
        }
        let df = 1.0 - eps * e.cos();
        let mut next = e - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == e {
            return Ok(e + 2.0 * PI * turns);
        }
        e = next;
    }
    let f = e - eps * e.sin() - m;
    if f.abs() <= 1e-14 {
        Ok(e + 2.0 * PI * turns)
    } else {
        Err(Error::KeplerNonConvergence { mean_anomaly, eps })
    }
}

/// Orbit of the primaries at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    /// Relative change of the primaries' distance, `rho = 1 + chi`.
    pub chi: f64,
    pub dchi_dt: f64,
    pub d2chi_dt2: f64,
    /// Angular velocity of the synodic frame.
    pub n: f64,
    pub dn_dt: f64,
}

impl Kinematics {
    pub fn rho(&self) -> f64 {
        1.0 + self.chi
    }

    const CIRCULAR: Kinematics = Kinematics {
        chi: 0.0,
        dchi_dt: 0.0,
        d2chi_dt2: 0.0,
        n: 1.0,
        dn_dt: 0.0,
    };
}

pub fn perturbation_kinematics(t: f64, params: &ModelParams) -> Result<Kinematics> {
    let eps = params.eps;
    if eps == 0.0 {
        return Ok(Kinematics {
            n: params.omega_p,
            ..Kinematics::CIRCULAR
        });
    }
    let w = params.omega_p;
    let e_anom = solve_kepler(w * t, eps)?;
    let (sin_e, cos_e) = e_anom.sin_cos();
    let den = 1.0 - eps * cos_e;
    let root = (1.0 - eps * eps).sqrt();
    Ok(Kinematics {
        chi: -eps * cos_e,
        dchi_dt: w * eps * sin_e / den,
        d2chi_dt2: w * w * (eps * cos_e - eps * eps) / (den * den * den),
        n: w * root / (den * den),
        dn_dt: -2.0 * w * w * eps * root * sin_e / (den * den * den * den),
    })
}

/// Geometry shared by the field, its Jacobian and the Hamiltonian.
struct Geometry {
    dx1: f64,
    dx2: f64,
    y: f64,
    r1: f64,
    r2: f64,
}

impl Geometry {
    fn new(s: &State4, rho: f64, mu: f64) -> Self {
        let dx1 = s[0] + mu * rho;
        let dx2 = s[0] - (1.0 - mu) * rho;
        Geometry {
            dx1,
            dx2,
            y: s[1],
            r1: dx1.hypot(s[1]),
            r2: dx2.hypot(s[1]),
        }
    }

    fn check(&self, floor: f64, mu: f64) -> Result<()> {
        if mu != 0.0 && !(self.r2 >= floor) {
            return Err(Error::Singularity {
                body: "m2",
                distance: self.r2,
                floor,
            });
        }
        if !(self.r1 >= floor) {
            return Err(Error::Singularity {
                body: "m1",
                distance: self.r1,
                floor,
            });
        }
        Ok(())
    }
}

fn field_with(s: &State4, k: &Kinematics, params: &ModelParams) -> Result<State4> {
    let mu = params.mu;
    let g = Geometry::new(s, k.rho(), mu);
    g.check(params.singularity_floor, mu)?;
    let c1 = (1.0 - mu) / (g.r1 * g.r1 * g.r1);
    let c2 = if mu == 0.0 { 0.0 } else { mu / (g.r2 * g.r2 * g.r2) };
    let n = k.n;
    Ok(State4::new(
        s[2] + n * s[1],
        s[3] - n * s[0],
        n * s[3] - c1 * g.dx1 - c2 * g.dx2,
        -n * s[2] - c1 * g.y - c2 * g.y,
    ))
}

fn jacobian_with(s: &State4, k: &Kinematics, params: &ModelParams) -> Result<Mat4> {
    let mu = params.mu;
    let g = Geometry::new(s, k.rho(), mu);
    g.check(params.singularity_floor, mu)?;
    let r1_3 = g.r1 * g.r1 * g.r1;
    let r2_3 = g.r2 * g.r2 * g.r2;
    let r1_5 = r1_3 * g.r1 * g.r1;
    let r2_5 = r2_3 * g.r2 * g.r2;
    let a = 1.0 - mu;
    let vxx = a * (1.0 / r1_3 - 3.0 * g.dx1 * g.dx1 / r1_5)
        + mu * (1.0 / r2_3 - 3.0 * g.dx2 * g.dx2 / r2_5);
    let vyy = a * (1.0 / r1_3 - 3.0 * g.y * g.y / r1_5) + mu * (1.0 / r2_3 - 3.0 * g.y * g.y / r2_5);
    let vxy = -3.0 * a * g.dx1 * g.y / r1_5 - 3.0 * mu * g.dx2 * g.y / r2_5;
    let n = k.n;
    #[rustfmt::skip]
    let j = Mat4::new(
        0.0,  n,    1.0, 0.0,
        -n,   0.0,  0.0, 1.0,
        -vxx, -vxy, 0.0, n,
        -vxy, -vyy, -n,  0.0,
    );
    Ok(j)
}

/// Hamiltonian of the circular problem.
pub fn pcrtbp_hamiltonian(s: &State4, params: &ModelParams) -> f64 {
    hamiltonian_with(s, &Kinematics::CIRCULAR, params.mu)
}

/// Time-periodic Hamiltonian of the elliptic problem.
pub fn pertbp_hamiltonian(s: &State4, t: f64, params: &ModelParams) -> Result<f64> {
    let k = perturbation_kinematics(t, params)?;
    Ok(hamiltonian_with(s, &k, params.mu))
}

fn hamiltonian_with(s: &State4, k: &Kinematics, mu: f64) -> f64 {
    let g = Geometry::new(s, k.rho(), mu);
    0.5 * (s[2] * s[2] + s[3] * s[3]) + k.n * (s[2] * s[1] - s[3] * s[0])
        - (1.0 - mu) / g.r1
        - mu / g.r2
}

/// Jacobi constant `C = -2 H_0` of the circular problem.
pub fn jacobi_constant(s: &State4, params: &ModelParams) -> f64 {
    -2.0 * pcrtbp_hamiltonian(s, params)
}

pub fn pcrtbp_field(s: &State4, params: &ModelParams) -> Result<State4> {
    field_with(s, &Kinematics::CIRCULAR, params)
}

pub fn pertbp_field(s: &State4, t: f64, params: &ModelParams) -> Result<State4> {
    let k = perturbation_kinematics(t, params)?;
    field_with(s, &k, params)
}

/// Jacobian of [`pertbp_field`] with respect to the state.
pub fn field_jacobian(s: &State4, t: f64, params: &ModelParams) -> Result<Mat4> {
    let k = perturbation_kinematics(t, params)?;
    jacobian_with(s, &k, params)
}

pub fn variational_field(
    s: &State4,
    stm: &Mat4,
    t: f64,
    params: &ModelParams,
) -> Result<(State4, Mat4)> {
    let k = perturbation_kinematics(t, params)?;
    let f = field_with(s, &k, params)?;
    let j = jacobian_with(s, &k, params)?;
    Ok((f, j * stm))
}

/// The elliptic problem as a 4-dimensional ODE.
pub struct PertbpSystem<'a> {
    pub params: &'a ModelParams,
}

impl OdeSystem for PertbpSystem<'_> {
    fn dim(&self) -> usize {
        4
    }
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let f = pertbp_field(&State4::from_column_slice(y), t, self.params)?;
        dy.copy_from_slice(f.as_slice());
        Ok(())
    }
}

/// State plus column-major state-transition matrix (20 components).
pub struct VariationalSystem<'a> {
    pub params: &'a ModelParams,
}

impl OdeSystem for VariationalSystem<'_> {
    fn dim(&self) -> usize {
        20
    }
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let s = State4::from_column_slice(&y[..4]);
        let phi = Mat4::from_column_slice(&y[4..]);
        let (f, dphi) = variational_field(&s, &phi, t, self.params)?;
        dy[..4].copy_from_slice(f.as_slice());
        dy[4..].copy_from_slice(dphi.as_slice());
        Ok(())
    }
}

/// Flow of the elliptic problem from `t0` to `t1`.
pub fn propagate(s: &State4, t0: f64, t1: f64, params: &ModelParams) -> Result<State4> {
    let out = params
        .integrator()
        .integrate(&PertbpSystem { params }, t0, s.as_slice(), t1)?;
    Ok(State4::from_column_slice(&out.y))
}

/// Flow and its state-transition matrix from `t0` to `t1`.
pub fn propagate_with_stm(
    s: &State4,
    t0: f64,
    t1: f64,
    params: &ModelParams,
) -> Result<(State4, Mat4)> {
    let mut y0 = [0.0; 20];
    y0[..4].copy_from_slice(s.as_slice());
    y0[4..].copy_from_slice(Mat4::identity().as_slice());
    let out = params
        .integrator()
        .integrate(&VariationalSystem { params }, t0, &y0, t1)?;
    Ok((
        State4::from_column_slice(&out.y[..4]),
        Mat4::from_column_slice(&out.y[4..]),
    ))
}

/// Time-2π/Ω_p map from the section, with its Jacobian when requested.
pub fn stroboscopic_map(
    s: &State4,
    params: &ModelParams,
    with_jacobian: bool,
) -> Result<(State4, Option<Mat4>)> {
    let t0 = params.section_time();
    let t1 = t0 + params.period();
    if with_jacobian {
        let (f, df) = propagate_with_stm(s, t0, t1, params)?;
        Ok((f, Some(df)))
    } else {
        Ok((propagate(s, t0, t1, params)?, None))
    }
}

/// How a map iterate is propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Propagation {
    /// Unregularized, falling back to the regularized system if a
    /// singularity floor is hit.
    #[default]
    Auto,
    Direct,
    Regularized,
}

/// Applies the stroboscopic map `k` times (backwards when `k < 0`).
pub fn map_iterate(s: &State4, k: i32, params: &ModelParams, mode: Propagation) -> Result<State4> {
    let t0 = params.section_time();
    let t1 = t0 + k as f64 * params.period();
    if k == 0 {
        return Ok(*s);
    }
    match mode {
        Propagation::Direct => propagate(s, t0, t1, params),
        Propagation::Regularized => propagate_regularized(s, t0, t1, params),
        Propagation::Auto => match propagate(s, t0, t1, params) {
            Err(Error::Singularity { .. }) | Err(Error::Integration { .. }) => {
                propagate_regularized(s, t0, t1, params)
            }
            other => other,
        },
    }
}

/// Matrix of the standard symplectic form, `Ω(a, b) = aᵀ J b`.
pub fn symplectic_form() -> Mat4 {
    #[rustfmt::skip]
    let j = Mat4::new(
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0, 0.0,
        0.0, -1.0, 0.0, 0.0,
    );
    j
}

pub fn symplectic_product(a: &State4, b: &State4) -> f64 {
    a[0] * b[2] + a[1] * b[3] - a[2] * b[0] - a[3] * b[1]
}

/// Reversing involution `(x, y, px, py) -> (x, -y, -px, py)`.
pub fn reflect(s: &State4) -> State4 {
    State4::new(s[0], -s[1], -s[2], s[3])
}

/// Inverse stroboscopic map.
///
/// For reversible models this is `R F R` (a forward propagation);
/// otherwise it integrates backwards in time.
pub fn inverse_map(s: &State4, params: &ModelParams, mode: Propagation) -> Result<State4> {
    if params.is_reversible() && params.theta_p0 == 0.0 {
        Ok(reflect(&map_iterate(&reflect(s), 1, params, mode)?))
    } else {
        map_iterate(s, -1, params, mode)
    }
}

/// Levi-Civita regularized variables `(X, Y, T, PX, PY, PT)` centred on m2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegState {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pt: f64,
}

impl RegState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.t, self.px, self.py, self.pt]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        RegState {
            x: v[0],
            y: v[1],
            t: v[2],
            px: v[3],
            py: v[4],
            pt: v[5],
        }
    }

    /// `R = 4(X² + Y²) = 4 r2`.
    pub fn big_r(&self) -> f64 {
        4.0 * (self.x * self.x + self.y * self.y)
    }
}

pub fn to_regularized(s: &State4, t: f64, p_t: f64, params: &ModelParams) -> Result<RegState> {
    let k = perturbation_kinematics(t, params)?;
    let c = 1.0 - params.mu;
    let u = s[0] - c * k.rho();
    let v = s[1];
    // principal square root of u + i v
    let modulus = u.hypot(v);
    let mut xr = (0.5 * (modulus + u)).sqrt();
    let mut yr = (0.5 * (modulus - u)).sqrt();
    if v < 0.0 {
        yr = -yr;
    }
    if modulus == 0.0 {
        xr = 0.0;
        yr = 0.0;
    }
    let (px, py) = (s[2], s[3]);
    Ok(RegState {
        x: xr,
        y: yr,
        t,
        px: 2.0 * px * xr + 2.0 * py * yr,
        py: -2.0 * px * yr + 2.0 * py * xr,
        pt: c * px * k.dchi_dt + p_t,
    })
}

/// Returns the physical state, time and the momentum conjugate to time.
pub fn from_regularized(r: &RegState, params: &ModelParams) -> Result<(State4, f64, f64)> {
    let big_r = r.big_r();
    if !(big_r > 0.0) {
        return Err(Error::InvalidInput(
            "regularized state sits on the m2 singularity (R=0)".into(),
        ));
    }
    let k = perturbation_kinematics(r.t, params)?;
    let c = 1.0 - params.mu;
    let x = r.x * r.x - r.y * r.y + c * k.rho();
    let y = 2.0 * r.x * r.y;
    let px = 2.0 / big_r * (r.px * r.x - r.py * r.y);
    let py = 2.0 / big_r * (r.px * r.y + r.py * r.x);
    let p_t = r.pt - c * px * k.dchi_dt;
    Ok((State4::new(x, y, px, py), r.t, p_t))
}

/// `R` times the regularized Hamiltonian; smooth through `R = 0`.
pub fn scaled_regularized_hamiltonian(r: &RegState, params: &ModelParams) -> Result<f64> {
    let k = perturbation_kinematics(r.t, params)?;
    let c = 1.0 - params.mu;
    let mu = params.mu;
    let rho = k.rho();
    let sq = r.x * r.x + r.y * r.y;
    let a = r.px * r.x - r.py * r.y;
    let b = r.px * r.y + r.py * r.x;
    let cc = r.px * r.y - r.py * r.x;
    let q = (sq * sq + rho * rho + 2.0 * (r.x * r.x - r.y * r.y) * rho).sqrt();
    Ok(4.0 * sq * r.pt - 2.0 * c * k.dchi_dt * a + 0.5 * (r.px * r.px + r.py * r.py)
        + k.n * (2.0 * sq * cc - 2.0 * c * rho * b)
        - 4.0 * c * sq / q
        - 4.0 * mu)
}

/// The regularized Hamiltonian itself (undefined at `R = 0`).
pub fn regularized_hamiltonian(r: &RegState, params: &ModelParams) -> Result<f64> {
    let big_r = r.big_r();
    if !(big_r > 0.0) {
        return Err(Error::InvalidInput("regularized Hamiltonian undefined at R=0".into()));
    }
    Ok(scaled_regularized_hamiltonian(r, params)? / big_r)
}

/// Canonical equations of `R·ℋ` in the rescaled time `s` (`dt = R ds`).
pub fn regularized_field(r: &RegState, params: &ModelParams) -> Result<RegState> {
    let k = perturbation_kinematics(r.t, params)?;
    let c = 1.0 - params.mu;
    let rho = k.rho();
    let (x, y, px, py, pt) = (r.x, r.y, r.px, r.py, r.pt);
    let sq = x * x + y * y;
    let a = px * x - py * y;
    let b = px * y + py * x;
    let cc = px * y - py * x;
    let q2 = sq * sq + rho * rho + 2.0 * (x * x - y * y) * rho;
    let q = q2.sqrt();
    let q3 = q2 * q;
    let n = k.n;
    let dchi = k.dchi_dt;

    let g_px = px - 2.0 * c * dchi * x + 2.0 * n * y * (sq - c * rho);
    let g_py = py + 2.0 * c * dchi * y - 2.0 * n * x * (sq + c * rho);
    let g_pt = 4.0 * sq;
    // d(sq/q)/dx and d(sq/q)/dy
    let dsq_q_dx = 2.0 * x / q - sq * 2.0 * x * (sq + rho) / q3;
    let dsq_q_dy = 2.0 * y / q - sq * 2.0 * y * (sq - rho) / q3;
    let g_x = 8.0 * x * pt - 2.0 * c * dchi * px
        + n * (4.0 * x * cc - 2.0 * sq * py - 2.0 * c * rho * py)
        - 4.0 * c * dsq_q_dx;
    let g_y = 8.0 * y * pt + 2.0 * c * dchi * py + n * (4.0 * y * cc + 2.0 * sq * px - 2.0 * c * rho * px)
        - 4.0 * c * dsq_q_dy;
    let dq_dt = (rho + x * x - y * y) * dchi / q;
    let g_t = -2.0 * c * k.d2chi_dt2 * a + k.dn_dt * (2.0 * sq * cc - 2.0 * c * rho * b)
        - 2.0 * n * c * dchi * b
        + 4.0 * c * sq * dq_dt / q2;
    Ok(RegState {
        x: g_px,
        y: g_py,
        t: g_pt,
        px: -g_x,
        py: -g_y,
        pt: -g_t,
    })
}

/// The regularized system as a 6-dimensional ODE in `s`.
pub struct RegularizedSystem<'a> {
    pub params: &'a ModelParams,
}

impl OdeSystem for RegularizedSystem<'_> {
    fn dim(&self) -> usize {
        6
    }
    fn eval(&self, _s: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let d = regularized_field(&RegState::from_slice(y), self.params)?;
        dy.copy_from_slice(&d.to_array());
        Ok(())
    }
}

/// Propagates from `t_i` to `t_f` through the regularized system.
///
/// Sets `p_t = -H` so the regularized Hamiltonian vanishes, integrates in
/// the rescaled time until the physical time reaches `t_f`, and maps back.
pub fn propagate_regularized(
    s: &State4,
    t_i: f64,
    t_f: f64,
    params: &ModelParams,
) -> Result<State4> {
    Ok(propagate_regularized_state(s, t_i, t_f, params)?.0)
}

/// Like [`propagate_regularized`] but also returns the final regularized state.
pub fn propagate_regularized_state(
    s: &State4,
    t_i: f64,
    t_f: f64,
    params: &ModelParams,
) -> Result<(State4, RegState)> {
    if t_f == t_i {
        return Err(Error::InvalidInput(
            "regularized propagation needs t_f != t_i".into(),
        ));
    }
    let p_t = -pertbp_hamiltonian(s, t_i, params)?;
    let r0 = to_regularized(s, t_i, p_t, params)?;
    let span = params.max_s_span * (t_f - t_i).signum();
    let event = |_s: f64, y: &[f64]| y[2] - t_f;
    let out = params.integrator().integrate_until(
        &RegularizedSystem { params },
        0.0,
        &r0.to_array(),
        span,
        &event,
    )?;
    if !out.event {
        return Err(Error::EventNotBracketed {
            target: t_f,
            span: params.max_s_span,
        });
    }
    let r = RegState::from_slice(&out.y);
    let (state, _, _) = from_regularized(&r, params)?;
    Ok((state, r))
}

/// Minimum distance to m2 sampled along an arc (diagnostic).
pub fn min_distance_to_m2(
    s: &State4,
    t0: f64,
    t1: f64,
    samples: usize,
    params: &ModelParams,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    let mut cur = *s;
    let dt = (t1 - t0) / samples as f64;
    for i in 0..=samples {
        let t = t0 + dt * i as f64;
        let k = perturbation_kinematics(t, params)?;
        let g = Geometry::new(&cur, k.rho(), params.mu);
        best = best.min(g.r2);
        if i < samples {
            cur = propagate(&cur, t, t + dt, params)?;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eps: f64) -> ModelParams {
        ModelParams::jupiter_europa(eps)
    }

    fn fd_gradient<F: Fn(&State4) -> f64>(f: F, s: &State4, h: f64) -> State4 {
        let mut g = State4::zeros();
        for i in 0..4 {
            let mut a = *s;
            let mut b = *s;
            a[i] += h;
            b[i] -= h;
            g[i] = (f(&a) - f(&b)) / (2.0 * h);
        }
        g
    }

    fn canonical(grad: &State4) -> State4 {
        State4::new(grad[2], grad[3], -grad[0], -grad[1])
    }

    #[test]
    fn kepler_trivial_values() {
        assert_eq!(solve_kepler(0.0, 0.0094).unwrap(), 0.0);
        assert!((solve_kepler(PI, 0.5).unwrap() - PI).abs() < 1e-15);
    }

    #[test]
    fn kepler_matches_bisection_oracle() {
        let (m, e): (f64, f64) = (1.0, 0.0094);
        let (mut lo, mut hi) = (m - e, m + e);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - e * mid.sin() - m > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let ea = solve_kepler(m, e).unwrap();
        assert!((ea - 0.5 * (lo + hi)).abs() < 1e-14);
        assert!((ea - e * ea.sin() - m).abs() <= 1e-14);
    }

    #[test]
    fn kepler_offset_is_periodic() {
        for &e in &[0.1, 0.5, 0.9] {
            for i in 0..20 {
                let m = -7.0 + 0.77 * i as f64;
                let a = solve_kepler(m, e).unwrap();
                let b = solve_kepler(m + 2.0 * PI, e).unwrap();
                assert!(((b - (m + 2.0 * PI)) - (a - m)).abs() < 1e-13);
                assert!((a - e * a.sin() - m).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn kinematics_circular_and_periapsis() {
        let k = perturbation_kinematics(3.3, &params(0.0)).unwrap();
        assert_eq!(k, Kinematics::CIRCULAR);
        let e = 0.0094;
        let k = perturbation_kinematics(0.0, &params(e)).unwrap();
        assert!((k.chi + e).abs() < 1e-16);
        assert!((k.n - (1.0 - e * e).sqrt() / ((1.0 - e) * (1.0 - e))).abs() < 1e-15);
    }

    #[test]
    fn kinematics_derivatives_match_finite_differences() {
        let p = params(0.3);
        let t = 0.7;
        let h = 1e-5;
        let a = perturbation_kinematics(t + h, &p).unwrap();
        let b = perturbation_kinematics(t - h, &p).unwrap();
        let k = perturbation_kinematics(t, &p).unwrap();
        assert!(((a.chi - b.chi) / (2.0 * h) - k.dchi_dt).abs() < 1e-8);
        assert!(((a.dchi_dt - b.dchi_dt) / (2.0 * h) - k.d2chi_dt2).abs() < 1e-8);
        assert!(((a.n - b.n) / (2.0 * h) - k.dn_dt).abs() < 1e-8);
    }

    #[test]
    fn mean_motion_is_true_anomaly_rate() {
        // n = dν/dt where tan(ν/2) = sqrt((1+e)/(1-e)) tan(E/2)
        let p = params(0.2);
        let nu = |t: f64| {
            let e_anom = solve_kepler(t, 0.2).unwrap();
            2.0 * ((1.2f64 / 0.8).sqrt() * (e_anom / 2.0).tan()).atan()
        };
        let t = 1.1;
        let h = 1e-5;
        let fd = (nu(t + h) - nu(t - h)) / (2.0 * h);
        assert!((fd - perturbation_kinematics(t, &p).unwrap().n).abs() < 1e-8);
    }

    #[test]
    fn pcrtbp_field_is_canonical() {
        let p = params(0.0);
        let s = State4::new(0.71, -0.33, 0.12, 0.95);
        let f = pcrtbp_field(&s, &p).unwrap();
        assert_eq!(f[0], s[2] + s[1]);
        let fd = canonical(&fd_gradient(|z| pcrtbp_hamiltonian(z, &p), &s, 1e-6));
        assert!((f - fd).amax() < 1e-7);
    }

    #[test]
    fn circular_two_body_equilibrium() {
        let p = ModelParams { mu: 0.0, ..params(0.0) };
        let s = State4::new(1.0, 0.0, 0.0, 1.0);
        assert_eq!(pcrtbp_field(&s, &p).unwrap(), State4::zeros());
        let (f, _) = stroboscopic_map(&s, &p, false).unwrap();
        assert!((f - s).amax() < 1e-11);
    }

    #[test]
    fn pertbp_field_reduces_and_is_canonical() {
        let p0 = params(0.0);
        let s = State4::new(-0.4, 0.62, 0.5, -0.2);
        assert_eq!(pertbp_field(&s, 2.1, &p0).unwrap(), pcrtbp_field(&s, &p0).unwrap());
        let p = params(0.3);
        let t = 1.3;
        let f = pertbp_field(&s, t, &p).unwrap();
        let k = perturbation_kinematics(t, &p).unwrap();
        assert_eq!(f[0], s[2] + k.n * s[1]);
        let fd = canonical(&fd_gradient(|z| pertbp_hamiltonian(z, t, &p).unwrap(), &s, 1e-6));
        assert!((f - fd).amax() < 1e-7);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = params(0.2);
        let s = State4::new(0.93, 0.08, -0.3, 0.7);
        let t = 0.4;
        let j = field_jacobian(&s, t, &p).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut a = s;
            let mut b = s;
            a[i] += h;
            b[i] -= h;
            let col = (pertbp_field(&a, t, &p).unwrap() - pertbp_field(&b, t, &p).unwrap()) / (2.0 * h);
            assert!((col - j.column(i)).amax() < 1e-6, "column {i}");
        }
    }

    #[test]
    fn singularity_floor_trips() {
        let p = params(0.0);
        let s = State4::new(1.0 - p.mu + 1e-8, 0.0, 0.0, 0.0);
        assert!(matches!(pcrtbp_field(&s, &p), Err(Error::Singularity { body: "m2", .. })));
    }

    #[test]
    fn stm_zero_time_is_identity() {
        let p = params(0.0);
        let (s, phi) = propagate_with_stm(&State4::new(0.5, 0.1, 0.0, 0.6), 0.0, 0.0, &p).unwrap();
        assert_eq!(s, State4::new(0.5, 0.1, 0.0, 0.6));
        assert_eq!(phi, Mat4::identity());
    }

    #[test]
    fn stm_matches_map_differences() {
        let p = params(0.05);
        let s = State4::new(0.6, 0.05, 0.02, 1.25);
        let (_, df) = stroboscopic_map(&s, &p, true).unwrap();
        let df = df.unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut a = s;
            let mut b = s;
            a[i] += h;
            b[i] -= h;
            let fa = stroboscopic_map(&a, &p, false).unwrap().0;
            let fb = stroboscopic_map(&b, &p, false).unwrap().0;
            let col = (fa - fb) / (2.0 * h);
            assert!((col - df.column(i)).amax() < 1e-5, "column {i}: {}", (col - df.column(i)).amax());
        }
    }

    #[test]
    fn map_is_symplectic_and_reversible() {
        let p = params(0.0094);
        let s = State4::new(0.6, -0.1, 0.05, 1.3);
        let (f, df) = stroboscopic_map(&s, &p, true).unwrap();
        let df = df.unwrap();
        assert!((df.determinant() - 1.0).abs() < 1e-9);
        let j = symplectic_form();
        assert!((df.transpose() * j * df - j).amax() < 1e-8);
        let back = propagate(&f, p.period(), 0.0, &p).unwrap();
        assert!((back - s).amax() < 1e-10);
        let back2 = inverse_map(&f, &p, Propagation::Direct).unwrap();
        assert!((back2 - s).amax() < 1e-10);
    }

    #[test]
    fn time_reversal_symmetry() {
        let p = params(0.1);
        let s = State4::new(0.6, 0.15, 0.1, 0.7);
        let f = propagate(&s, 0.0, 2.0, &p).unwrap();
        // reflected endpoint run forward for the same time returns to the reflected start
        let g = propagate(&reflect(&f), -2.0, 0.0, &p).unwrap();
        assert!((reflect(&g) - s).amax() < 1e-10);
    }

    #[test]
    fn energy_conserved_for_circular_problem() {
        let p = params(0.0);
        let s = State4::new(0.62, 0.0, 0.0, 0.81);
        let f = propagate(&s, 0.0, 20.0, &p).unwrap();
        assert!((pcrtbp_hamiltonian(&f, &p) - pcrtbp_hamiltonian(&s, &p)).abs() < 1e-10);
    }

    #[test]
    fn regularized_transform_round_trip() {
        let p = params(0.2);
        let s = State4::new(0.3, -0.45, 0.21, 0.66);
        let t = 0.9;
        let r = to_regularized(&s, t, -1.7, &p).unwrap();
        let (back, tb, pb) = from_regularized(&r, &p).unwrap();
        assert!((back - s).amax() < 1e-13);
        assert_eq!(tb, t);
        assert!((pb + 1.7).abs() < 1e-13);
        let k = perturbation_kinematics(t, &p).unwrap();
        let r2 = (s[0] - (1.0 - p.mu) * k.rho()).hypot(s[1]);
        assert!((r.big_r() / 4.0 - r2).abs() < 1e-14);
    }

    #[test]
    fn regularized_on_axis_is_real_root() {
        let p = params(0.0);
        let x = 1.3;
        let r = to_regularized(&State4::new(x, 0.0, 0.0, 0.0), 0.0, 0.0, &p).unwrap();
        assert_eq!(r.y, 0.0);
        assert!((r.x - (x - (1.0 - p.mu)).sqrt()).abs() < 1e-15);
        assert_eq!((r.px, r.py), (0.0, 0.0));
    }

    #[test]
    fn regularized_hamiltonian_vanishes_under_protocol() {
        let p = params(0.3);
        let s = State4::new(0.8, 0.3, -0.2, 0.6);
        let t = 0.45;
        let pt = -pertbp_hamiltonian(&s, t, &p).unwrap();
        let r = to_regularized(&s, t, pt, &p).unwrap();
        assert!(regularized_hamiltonian(&r, &p).unwrap().abs() < 1e-13);
    }

    #[test]
    fn regularized_field_matches_finite_differences() {
        let p = params(0.25);
        let r = RegState {
            x: 0.31,
            y: -0.22,
            t: 0.8,
            px: 0.4,
            py: 0.13,
            pt: -1.1,
        };
        let f = regularized_field(&r, &p).unwrap();
        let h = 1e-6;
        let base = r.to_array();
        let mut grad = [0.0; 6];
        for i in 0..6 {
            let mut a = base;
            let mut b = base;
            a[i] += h;
            b[i] -= h;
            grad[i] = (scaled_regularized_hamiltonian(&RegState::from_slice(&a), &p).unwrap()
                - scaled_regularized_hamiltonian(&RegState::from_slice(&b), &p).unwrap())
                / (2.0 * h);
        }
        let expect = [grad[3], grad[4], grad[5], -grad[0], -grad[1], -grad[2]];
        let got = f.to_array();
        for i in 0..6 {
            assert!((got[i] - expect[i]).abs() < 1e-6, "component {i}: {} vs {}", got[i], expect[i]);
        }
    }

    #[test]
    fn regularized_time_rate_circular() {
        let p = params(0.0);
        let r = RegState {
            x: 0.2,
            y: 0.5,
            t: 0.0,
            px: 0.3,
            py: -0.1,
            pt: 0.4,
        };
        let f = regularized_field(&r, &p).unwrap();
        assert_eq!(f.t, r.big_r());
    }

    #[test]
    fn regularized_matches_direct_away_from_m2() {
        let p = params(0.0094);
        let s = State4::new(0.55, 0.1, -0.15, 0.8);
        let a = propagate(&s, 0.0, 2.0 * PI, &p).unwrap();
        let b = propagate_regularized(&s, 0.0, 2.0 * PI, &p).unwrap();
        assert!((a - b).amax() / a.amax() < 1e-8, "{:e}", (a - b).amax());
        let c = propagate_regularized(&a, 2.0 * PI, 0.0, &p).unwrap();
        assert!((c - s).amax() < 1e-9);
    }

    #[test]
    fn regularized_hamiltonian_drift_small() {
        let p = params(0.05);
        let s = State4::new(0.9, 0.12, -0.05, 0.92);
        let (_, r) = propagate_regularized_state(&s, 0.0, 3.0, &p).unwrap();
        assert!(regularized_hamiltonian(&r, &p).unwrap().abs() < 1e-10);
    }

    #[test]
    fn regularized_passes_close_to_m2() {
        // Shoot backwards from a point 5e-5 from m2 so the forward arc grazes it.
        let p = params(0.0094);
        let k = perturbation_kinematics(1.0, &p).unwrap();
        let close = State4::new((1.0 - p.mu) * k.rho() + 5e-5, 0.0, 0.0, 3.0);
        let start = propagate_regularized(&close, 1.0, 0.0, &p).unwrap();
        let end = propagate_regularized(&start, 0.0, 2.0, &p).unwrap();
        assert!(end.iter().all(|v| v.is_finite()));
        let back = propagate_regularized(&end, 2.0, 0.0, &p).unwrap();
        assert!((back - start).amax() < 1e-7, "{:e}", (back - start).amax());
    }

    #[test]
    fn zero_length_regularized_rejected() {
        let p = params(0.0);
        assert!(propagate_regularized(&State4::new(0.5, 0.0, 0.0, 0.5), 1.0, 1.0, &p).is_err());
    }
}
