//! Invariant circles of the stroboscopic map together with their tangent,
//! center, stable and unstable bundles.
//!
//! A solution `(K, P, Λ)` satisfies `F(K(θ)) = K(θ+ω)` and
//! `DF(K(θ)) P(θ) = P(θ+ω) Λ(θ)` with
//!
//! ```text
//!     | 1  T  0   0  |
//! Λ = | 0  1  0   0  |
//!     | 0  0  λs  0  |
//!     | 0  0  0   λu |
//! ```

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::dynamics::{stroboscopic_map, symplectic_form, symplectic_product, Mat4, ModelParams, State4};
use crate::error::{Error, Result};
use crate::grid::{
    cohomological_solve, contraction_solve, twisted_solve_auto, Coef, FixedPoint, Mode, PeriodicGrid,
};
use crate::seed::PeriodicOrbitSeed;

pub const TANGENT: usize = 0;
pub const CENTER: usize = 1;
pub const STABLE: usize = 2;
pub const UNSTABLE: usize = 3;

#[derive(Debug, Clone)]
pub struct TorusSolution {
    /// Parameterization of the circle (4 components).
    pub k: PeriodicGrid,
    /// Bundle matrix, column-major (16 components).
    pub p: PeriodicGrid,
    pub t_fn: PeriodicGrid,
    pub lam_s: PeriodicGrid,
    pub lam_u: PeriodicGrid,
    pub omega: f64,
    pub params: ModelParams,
}

/// `F` and `DF` at every grid point of a parameterization.
#[derive(Debug, Clone)]
pub struct MapData {
    pub f: Vec<State4>,
    pub df: Vec<Mat4>,
}

#[derive(Debug, Clone)]
pub struct Errors {
    pub e: PeriodicGrid,
    pub e_red: PeriodicGrid,
}

impl Errors {
    pub fn e_sup(&self) -> f64 {
        self.e.sup_norm()
    }

    pub fn e_red_sup(&self) -> f64 {
        self.e_red.max_abs()
    }

    /// Average of the (C, C) entry of the reduced error.
    pub fn ecc_mean(&self) -> f64 {
        entry(&self.e_red, CENTER, CENTER).average()[0]
    }
}

pub fn column(p: &PeriodicGrid, j: usize) -> PeriodicGrid {
    p.components(4 * j, 4)
}

pub fn set_column(p: &mut PeriodicGrid, j: usize, v: &PeriodicGrid) {
    for c in 0..4 {
        p.component_mut(4 * j + c).copy_from_slice(v.component(c));
    }
}

/// Scalar grid of matrix entry `(r, c)`.
pub fn entry(m: &PeriodicGrid, r: usize, c: usize) -> PeriodicGrid {
    m.components(4 * c + r, 1)
}

fn scalar_grid(n: usize, f: impl Fn(usize) -> f64) -> PeriodicGrid {
    PeriodicGrid::from_scalars((0..n).map(f).collect())
}

fn is_constant(g: &PeriodicGrid) -> bool {
    let v = g.scalar(0);
    g.as_slice().iter().all(|x| *x == v)
}

impl TorusSolution {
    pub fn n(&self) -> usize {
        self.k.n()
    }

    pub fn eps(&self) -> f64 {
        self.params.eps
    }

    pub fn lambda(&self, i: usize) -> Mat4 {
        let mut m = Mat4::identity();
        m[(0, 1)] = self.t_fn.scalar(i);
        m[(2, 2)] = self.lam_s.scalar(i);
        m[(3, 3)] = self.lam_u.scalar(i);
        m
    }

    pub fn bundle(&self, j: usize) -> PeriodicGrid {
        column(&self.p, j)
    }

    pub fn tangent(&self) -> PeriodicGrid {
        self.k.differentiate()
    }

    pub fn has_constant_lambda(&self) -> bool {
        is_constant(&self.t_fn) && is_constant(&self.lam_s) && is_constant(&self.lam_u)
    }

    pub fn t_mean(&self) -> f64 {
        self.t_fn.average()[0]
    }

    pub fn lam_s_mean(&self) -> f64 {
        self.lam_s.average()[0]
    }

    pub fn lam_u_mean(&self) -> f64 {
        self.lam_u.average()[0]
    }

    /// Resamples every grid to `n` points.
    pub fn resample(&self, n: usize) -> TorusSolution {
        TorusSolution {
            k: self.k.resample(n),
            p: self.p.resample(n),
            t_fn: self.t_fn.resample(n),
            lam_s: self.lam_s.resample(n),
            lam_u: self.lam_u.resample(n),
            omega: self.omega,
            params: self.params,
        }
    }

    /// Symplectic pairings `(max|Ω(DK,v_s)|, max|Ω(DK,v_u)|, max|Ω(DK,v_c)-1|)`.
    pub fn pairings(&self) -> (f64, f64, f64) {
        let dk = self.tangent();
        let (vc, vs, vu) = (self.bundle(CENTER), self.bundle(STABLE), self.bundle(UNSTABLE));
        let mut out = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..self.n() {
            let t = dk.state(i);
            out.0 = out.0.max(symplectic_product(&t, &vs.state(i)).abs());
            out.1 = out.1.max(symplectic_product(&t, &vu.state(i)).abs());
            out.2 = out.2.max((symplectic_product(&t, &vc.state(i)) - 1.0).abs());
        }
        out
    }

    /// Largest condition number of `P(θ_i)`.
    pub fn bundle_condition(&self) -> f64 {
        (0..self.n())
            .map(|i| {
                let sv = self.p.matrix(i).singular_values();
                sv.max() / sv.min()
            })
            .fold(0.0, f64::max)
    }
}

/// Evaluates `F` and `DF` at every point of `k` (one variational
/// integration per point, in parallel).
pub fn evaluate_map(k: &PeriodicGrid, params: &ModelParams) -> Result<MapData> {
    let states = k.states();
    let out = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            stroboscopic_map(s, params, true)
                .map(|(f, df)| (f, df.expect("jacobian requested")))
                .map_err(|e| Error::at_point(i, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let (f, df) = out.into_iter().unzip();
    Ok(MapData { f, df })
}

fn inverse_at(m: &Mat4, i: usize) -> Result<Mat4> {
    m.try_inverse().ok_or(Error::BundleDegeneracy { index: i })
}

/// `P⁻¹(θ+ω) DF(K(θ)) P(θ)` on the grid.
pub fn floquet_matrix(p: &PeriodicGrid, df: &[Mat4], omega: f64) -> Result<PeriodicGrid> {
    let shifted = p.translate(omega);
    let mut out = PeriodicGrid::zeros(p.n(), 16);
    for (i, d) in df.iter().enumerate() {
        let m = inverse_at(&shifted.matrix(i), i)? * d * p.matrix(i);
        out.set_matrix(i, &m);
    }
    Ok(out)
}

/// Invariance errors from precomputed map data.
pub fn errors_from(sol: &TorusSolution, data: &MapData) -> Result<Errors> {
    let e = PeriodicGrid::from_states(&data.f).sub(&sol.k.translate(sol.omega));
    let mut e_red = floquet_matrix(&sol.p, &data.df, sol.omega)?;
    for i in 0..sol.n() {
        let m = e_red.matrix(i) - sol.lambda(i);
        e_red.set_matrix(i, &m);
    }
    Ok(Errors { e, e_red })
}

/// `E = F∘K - K(·+ω)` and `E_red = P⁻¹(·+ω) DF P - Λ`.
pub fn compute_errors(sol: &TorusSolution) -> Result<(Errors, MapData)> {
    let data = evaluate_map(&sol.k, &sol.params)?;
    Ok((errors_from(sol, &data)?, data))
}

/// Result of the correction of `K`.
#[derive(Debug, Clone)]
pub struct KStep {
    pub k: PeriodicGrid,
    pub xi: PeriodicGrid,
    /// Average of `η₂`, which the cohomological solve ignores.
    pub eta2_mean: f64,
}

/// Drops modes above `3N/8` from a correction. Products of grids otherwise
/// fold modes near `N/2` back into the band and the iteration feeds on them.
fn dealias(g: &PeriodicGrid) -> PeriodicGrid {
    g.lowpass(3 * g.n() / 8)
}

/// Newton-like correction `K ← K + Pξ` from `Λξ - ξ(·+ω) = -P⁻¹(·+ω) E`.
pub fn k_step(sol: &TorusSolution, e: &PeriodicGrid, limits: &FixedPoint) -> Result<KStep> {
    let n = sol.n();
    let w = sol.omega;
    let shifted = sol.p.translate(w);
    let mut eta = PeriodicGrid::zeros(n, 4);
    for i in 0..n {
        let v = -(inverse_at(&shifted.matrix(i), i)? * e.state(i));
        eta.set_state(i, &v);
    }
    let xi3 = contraction_solve(&eta.components(2, 1), Coef::Grid(&sol.lam_s), w, Mode::Stable, limits)?;
    let xi4 = contraction_solve(&eta.components(3, 1), Coef::Grid(&sol.lam_u), w, Mode::Unstable, limits)?;
    let (xi2, ignored) = cohomological_solve(&eta.components(1, 1), w, &[0.0])?;
    let eta1 = eta.components(0, 1);
    let alpha = eta1.sub(&sol.t_fn.zip_with(&xi2, |t, x| t * x)).average()[0];
    let t0 = sol.t_mean();
    if t0 == 0.0 || !t0.is_finite() {
        return Err(Error::Continuation {
            parameter: "T",
            value: t0,
            reason: "average twist vanishes".into(),
        });
    }
    let xi2 = xi2.add(&PeriodicGrid::constant(n, &[alpha / t0]));
    let rhs1 = eta1.sub(&sol.t_fn.zip_with(&xi2, |t, x| t * x));
    let (xi1, _) = cohomological_solve(&rhs1, w, &[0.0])?;
    let mut xi = PeriodicGrid::zeros(n, 4);
    for (c, g) in [&xi1, &xi2, &xi3, &xi4].iter().enumerate() {
        xi.component_mut(c).copy_from_slice(g.component(0));
    }
    let xi = dealias(&xi);
    let mut k = sol.k.clone();
    for i in 0..n {
        let v = sol.k.state(i) + sol.p.matrix(i) * xi.state(i);
        k.set_state(i, &v);
    }
    Ok(KStep {
        k,
        xi,
        eta2_mean: ignored[0],
    })
}

/// Result of the correction of `P` and `Λ`.
#[derive(Debug, Clone)]
pub struct PStep {
    pub p: PeriodicGrid,
    pub t_fn: PeriodicGrid,
    pub lam_s: PeriodicGrid,
    pub lam_u: PeriodicGrid,
    /// Average of `E_CC`, which the cohomological solve ignores.
    pub ecc_mean: f64,
}

/// Correction `P ← P + PQ`, `Λ ← Λ + ΔΛ` from
/// `-E_red = ΛQ - Q(·+ω)Λ - ΔΛ`, with column 1 of `Q` and `Q_LC`, `Q_SS`,
/// `Q_UU` set to zero.
pub fn p_step(sol: &TorusSolution, e_red: &PeriodicGrid, limits: &FixedPoint) -> Result<PStep> {
    let n = sol.n();
    let w = sol.omega;
    let (l, c, s, u) = (TANGENT, CENTER, STABLE, UNSTABLE);
    let e_red = &dealias(e_red);
    let neg = |r: usize, col: usize| entry(e_red, r, col).scale(-1.0);
    let one = Coef::Const(1.0);
    let ls = Coef::Grid(&sol.lam_s);
    let lu = Coef::Grid(&sol.lam_u);

    let q_cs = twisted_solve_auto(one, ls, &neg(c, s), w, limits)?;
    let q_cu = twisted_solve_auto(one, lu, &neg(c, u), w, limits)?;
    let q_sc = twisted_solve_auto(ls, one, &neg(s, c), w, limits)?;
    let q_su = twisted_solve_auto(ls, lu, &neg(s, u), w, limits)?;
    let q_uc = twisted_solve_auto(lu, one, &neg(u, c), w, limits)?;
    let q_us = twisted_solve_auto(lu, ls, &neg(u, s), w, limits)?;
    let t = &sol.t_fn;
    let rhs_ls = neg(l, s).sub(&t.zip_with(&q_cs, |a, b| a * b));
    let q_ls = twisted_solve_auto(one, ls, &rhs_ls, w, limits)?;
    let rhs_lu = neg(l, u).sub(&t.zip_with(&q_cu, |a, b| a * b));
    let q_lu = twisted_solve_auto(one, lu, &rhs_lu, w, limits)?;
    let e_cc = entry(e_red, c, c);
    let (q_cc, _) = cohomological_solve(&e_cc.scale(-1.0), w, &[0.0])?;
    let ecc_mean = e_cc.average()[0];

    let d_t = entry(e_red, l, c).add(&t.zip_with(&q_cc, |a, b| a * b));
    let d_ls = entry(e_red, s, s);
    let d_lu = entry(e_red, u, u);

    let [q_ls, q_lu, q_cc, q_cs, q_cu, q_sc, q_su, q_uc, q_us] =
        [q_ls, q_lu, q_cc, q_cs, q_cu, q_sc, q_su, q_uc, q_us].map(|g| dealias(&g));
    let d_t = dealias(&d_t);

    let mut p = sol.p.clone();
    for i in 0..n {
        let mut q = Mat4::zeros();
        q[(l, s)] = q_ls.scalar(i);
        q[(l, u)] = q_lu.scalar(i);
        q[(c, c)] = q_cc.scalar(i);
        q[(c, s)] = q_cs.scalar(i);
        q[(c, u)] = q_cu.scalar(i);
        q[(s, c)] = q_sc.scalar(i);
        q[(s, u)] = q_su.scalar(i);
        q[(u, c)] = q_uc.scalar(i);
        q[(u, s)] = q_us.scalar(i);
        let pi = sol.p.matrix(i);
        p.set_matrix(i, &(pi + pi * q));
    }
    Ok(PStep {
        p,
        t_fn: sol.t_fn.add(&d_t),
        lam_s: sol.lam_s.add(&d_ls),
        lam_u: sol.lam_u.add(&d_lu),
        ecc_mean,
    })
}

/// Rescaling that makes a bundle multiplier constant: returns `a·v` and
/// `λ̄ = exp(mean log λ)` where `log λ - log λ̄ = log a(·+ω) - log a`.
fn constant_multiplier(lam: &PeriodicGrid, v: &PeriodicGrid, omega: f64) -> Result<(PeriodicGrid, f64)> {
    let mut logs = Vec::with_capacity(lam.n());
    for (i, x) in lam.as_slice().iter().enumerate() {
        if *x <= 0.0 || !x.is_finite() {
            return Err(Error::NonPositiveMultiplier { index: i, value: *x });
        }
        logs.push(x.ln());
    }
    let logs = PeriodicGrid::from_scalars(logs);
    let mean = logs.average()[0];
    // u(θ) - u(θ+ω) = mean - log λ
    let b = logs.scale(-1.0).add(&PeriodicGrid::constant(lam.n(), &[mean]));
    let (u, _) = cohomological_solve(&b, omega, &[0.0])?;
    let a = scalar_grid(lam.n(), |i| u.scalar(i).exp());
    Ok((v.mul_scalar_grid(&a), mean.exp()))
}

/// Shift `v_c ← v_c + a·DK` that makes the twist constant; returns the new
/// center bundle and `T̄`.
fn constant_twist(t: &PeriodicGrid, vc: &PeriodicGrid, dk: &PeriodicGrid, omega: f64) -> Result<(PeriodicGrid, f64)> {
    let t_bar = t.average()[0];
    let b = PeriodicGrid::constant(t.n(), &[t_bar]).sub(t);
    let (a, _) = cohomological_solve(&b, omega, &[0.0])?;
    Ok((vc.add(&dk.mul_scalar_grid(&a)), t_bar))
}

/// Rescales the bundles so that `T`, `λ_s`, `λ_u` become constant, using the
/// Floquet matrix recomputed from `DF`.
pub fn make_lambda_constant(sol: &TorusSolution, data: &MapData) -> Result<TorusSolution> {
    let w = sol.omega;
    let m = floquet_matrix(&sol.p, &data.df, w)?;
    let (vs, lam_s) = constant_multiplier(&entry(&m, STABLE, STABLE), &sol.bundle(STABLE), w)?;
    let (vu, lam_u) = constant_multiplier(&entry(&m, UNSTABLE, UNSTABLE), &sol.bundle(UNSTABLE), w)?;
    let dk = sol.bundle(TANGENT);
    let (vc, t_bar) = constant_twist(&entry(&m, TANGENT, CENTER), &sol.bundle(CENTER), &dk, w)?;
    let mut out = sol.clone();
    set_column(&mut out.p, CENTER, &vc);
    set_column(&mut out.p, STABLE, &vs);
    set_column(&mut out.p, UNSTABLE, &vu);
    let n = sol.n();
    out.t_fn = PeriodicGrid::constant(n, &[t_bar]);
    out.lam_s = PeriodicGrid::constant(n, &[lam_s]);
    out.lam_u = PeriodicGrid::constant(n, &[lam_u]);
    Ok(out)
}

/// Sup-variation of `T`, `λ_s`, `λ_u` in the Floquet matrix recomputed from
/// `DF`, measured against the solution's constants.
pub fn lambda_variation(sol: &TorusSolution, data: &MapData) -> Result<(f64, f64, f64)> {
    let m = floquet_matrix(&sol.p, &data.df, sol.omega)?;
    let var = |g: PeriodicGrid, v: &PeriodicGrid| g.sub(v).max_abs();
    Ok((
        var(entry(&m, TANGENT, CENTER), &sol.t_fn),
        var(entry(&m, STABLE, STABLE), &sol.lam_s),
        var(entry(&m, UNSTABLE, UNSTABLE), &sol.lam_u),
    ))
}

/// Output of [`symplectic_conjugate`].
#[derive(Debug, Clone)]
pub struct Conjugate {
    pub v_c: PeriodicGrid,
    pub t_fn: PeriodicGrid,
    /// `max |B(θ) - 1|`, zero in exact arithmetic.
    pub b_defect: f64,
    pub b_defect_index: usize,
}

fn normalized_conjugate(dk: &PeriodicGrid) -> PeriodicGrid {
    let jinv = -symplectic_form();
    let mut w = PeriodicGrid::zeros(dk.n(), 4);
    for i in 0..dk.n() {
        let t = dk.state(i);
        w.set_state(i, &(jinv * t / t.norm_squared()));
    }
    w
}

/// Center direction conjugate to `DK`:
/// `v_c = J⁻¹DK/|DK|² + f₁ v_s + f₂ v_u`, with twist `T = A` from the
/// decomposition of `DF·J⁻¹DK/|DK|²` in the shifted frame.
#[allow(clippy::too_many_arguments)]
pub fn symplectic_conjugate(
    dk: &PeriodicGrid,
    df: &[Mat4],
    v_s: &PeriodicGrid,
    v_u: &PeriodicGrid,
    lam_s: Coef,
    lam_u: Coef,
    omega: f64,
    limits: &FixedPoint,
) -> Result<Conjugate> {
    let n = dk.n();
    let w = normalized_conjugate(dk);
    let dk_s = dk.translate(omega);
    let w_s = normalized_conjugate(&dk_s);
    let vs_s = v_s.translate(omega);
    let vu_s = v_u.translate(omega);
    let (mut a, mut c, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut defect = (0.0f64, 0usize);
    for i in 0..n {
        let basis = Mat4::from_columns(&[dk_s.state(i), w_s.state(i), vs_s.state(i), vu_s.state(i)]);
        let rhs = df[i] * w.state(i);
        let coef = basis.lu().solve(&rhs).ok_or(Error::BundleDegeneracy { index: i })?;
        if !coef.iter().all(|x| x.is_finite()) {
            return Err(Error::BundleDegeneracy { index: i });
        }
        a[i] = coef[0];
        c[i] = coef[2];
        d[i] = coef[3];
        let dev = (coef[1] - 1.0).abs();
        if dev > defect.0 {
            defect = (dev, i);
        }
    }
    let c = PeriodicGrid::from_scalars(c);
    let d = PeriodicGrid::from_scalars(d);
    // C = f1(θ+ω) - λs f1  <=>  λs f1 - f1(θ+ω) = -C
    let f1 = contraction_solve(&c.scale(-1.0), lam_s, omega, Mode::Stable, limits)?;
    let f2 = contraction_solve(&d.scale(-1.0), lam_u, omega, Mode::Unstable, limits)?;
    let v_c = w.add(&v_s.mul_scalar_grid(&f1)).add(&v_u.mul_scalar_grid(&f2));
    Ok(Conjugate {
        v_c,
        t_fn: PeriodicGrid::from_scalars(a),
        b_defect: defect.0,
        b_defect_index: defect.1,
    })
}

/// Settings of the bundle power iteration.
#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Modes kept by the lowpass after each sweep (`None` keeps all).
    pub keep_modes: Option<usize>,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            tol: 1e-12,
            max_sweeps: 500,
            keep_modes: None,
        }
    }
}

fn normalize_points(v: &PeriodicGrid) -> PeriodicGrid {
    let mut out = v.clone();
    for i in 0..v.n() {
        let s = v.state(i);
        out.set_state(i, &(s / s.norm()));
    }
    out
}

/// Stable and unstable bundles by power iteration:
/// `v_s ← DF(K)⁻¹ v_s(·+ω)` and `v_u ← [DF(K) v_u](·-ω)`, normalized.
/// Returns the bundles and the number of sweeps.
pub fn power_method_bundles(
    df: &[Mat4],
    v_s0: &PeriodicGrid,
    v_u0: &PeriodicGrid,
    omega: f64,
    opts: &PowerOptions,
) -> Result<(PeriodicGrid, PeriodicGrid, usize)> {
    let n = v_s0.n();
    let inv: Vec<Mat4> = df
        .iter()
        .enumerate()
        .map(|(i, m)| inverse_at(m, i))
        .collect::<Result<_>>()?;
    let filter = |g: PeriodicGrid| match opts.keep_modes {
        Some(k) if k < n / 2 => normalize_points(&g.lowpass(k)),
        _ => g,
    };
    let mut vs = normalize_points(v_s0);
    let mut vu = normalize_points(v_u0);
    let mut change = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let shifted = vs.translate(omega);
        let mut next_s = PeriodicGrid::zeros(n, 4);
        let mut img_u = PeriodicGrid::zeros(n, 4);
        for i in 0..n {
            let a = inv[i] * shifted.state(i);
            next_s.set_state(i, &(a / a.norm()));
            let b = df[i] * vu.state(i);
            img_u.set_state(i, &(b / b.norm()));
        }
        let next_s = filter(next_s);
        let next_u = filter(normalize_points(&img_u.translate(-omega)));
        change = next_s.sub(&vs).sup_norm().max(next_u.sub(&vu).sup_norm());
        vs = next_s;
        vu = next_u;
        if change <= opts.tol {
            return Ok((vs, vu, sweep));
        }
    }
    if change <= 1e3 * opts.tol {
        // integration noise floor just above the target
        return Ok((vs, vu, opts.max_sweeps));
    }
    Err(Error::NotConverged {
        steps: opts.max_sweeps,
        last: change,
    })
}

/// Multiplier function `λ(θ)` with `DF v(θ) = λ(θ) v(θ+ω)` by projection.
pub fn bundle_multiplier(df: &[Mat4], v: &PeriodicGrid, omega: f64) -> PeriodicGrid {
    let shifted = v.translate(omega);
    scalar_grid(v.n(), |i| {
        let img = df[i] * v.state(i);
        let t = shifted.state(i);
        img.dot(&t) / t.norm_squared()
    })
}

/// Settings for the quasi-Newton solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_steps: usize,
    /// Number of initial steps whose output is lowpass filtered.
    pub filter_steps: usize,
    /// Fraction of `N` kept by the lowpass (`N/4` by default).
    pub keep_fraction: f64,
    /// Relative Fourier mass above `3N/8` that triggers doubling `N`.
    pub tail_threshold: f64,
    pub max_n: usize,
    /// Consecutive error increases that count as divergence.
    pub divergence_run: usize,
    /// Recompute the bundles from `K` once `E` converges before `E_red`.
    pub finalize: bool,
    pub fixed_point: FixedPoint,
    pub power: PowerOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-7,
            max_steps: 30,
            filter_steps: 3,
            keep_fraction: 0.25,
            tail_threshold: 1e-9,
            max_n: 32768,
            divergence_run: 3,
            finalize: true,
            fixed_point: FixedPoint::default(),
            power: PowerOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn keep_modes(&self, n: usize) -> usize {
        ((n as f64 * self.keep_fraction) as usize).clamp(1, n / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub e: f64,
    pub e_red: f64,
    pub ecc_mean: f64,
    pub eta2_mean: Option<f64>,
    pub filtered: bool,
}

impl StepRecord {
    pub fn combined(&self) -> f64 {
        self.e + self.e_red
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolverReport {
    /// Errors measured before each correction (the last entry is final).
    pub steps: Vec<StepRecord>,
    pub escalations: Vec<(usize, usize)>,
    pub finalized: bool,
}

impl SolverReport {
    pub fn final_errors(&self) -> (f64, f64) {
        self.steps.last().map(|r| (r.e, r.e_red)).unwrap_or((f64::NAN, f64::NAN))
    }

    /// Largest `e_{n+1}/e_n²` over consecutive records.
    pub fn quadratic_constant(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| w[1].combined() / w[0].combined().powi(2))
            .fold(0.0, f64::max)
    }
}

/// Fourier-mass fraction above `3N/8`: `Σ_{|k|>3N/8} |ĉ_k| / Σ |ĉ_k|`.
pub fn tail_mass(g: &PeriodicGrid) -> f64 {
    let n = g.n();
    let spec = g.spectrum();
    let cut = (3 * n / 8) as i64;
    let (mut tail, mut total) = (0.0, 0.0);
    for c in 0..g.dim() {
        for (i, v) in spec.component(c).iter().enumerate() {
            let m = v.norm();
            total += m;
            if crate::grid::frequency(i, n).abs() > cut {
                tail += m;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

/// Largest tail mass among `K` and the four bundles.
pub fn high_frequency_mass(sol: &TorusSolution) -> f64 {
    (0..4).map(|j| tail_mass(&sol.bundle(j))).fold(tail_mass(&sol.k), f64::max)
}

/// Moves a solution with constant `Λ` to the smallest grid, from `min_n`
/// up, where it still fits: the `K` tail stays below `tail_threshold/100`
/// and, with the bundles lowpassed to `N/4` and at most a few corrections
/// at that size, both errors stay within `tol`. Escalation only doubles
/// `N`, and noise near small divisors in the bundles can push it far past
/// what `K` needs. That noise can also spoil an intermediate size while a
/// smaller one works, hence the upward search.
pub fn shrink_grid(sol: &TorusSolution, opts: &SolverOptions, min_n: usize) -> Result<TorusSolution> {
    let polish = SolverOptions {
        max_steps: 4,
        filter_steps: 0,
        finalize: false,
        ..*opts
    };
    let mut n = min_n.max(8).next_power_of_two();
    while n < sol.n() {
        let mut trial = sol.resample(n);
        if tail_mass(&trial.k) <= 0.01 * opts.tail_threshold {
            trial.p = trial.p.lowpass(opts.keep_modes(n));
            let fitted = quasi_newton(&trial, &SolverOptions { max_n: n, ..polish }).and_then(|(t, _)| {
                let (_, data) = compute_errors(&t)?;
                let t = make_lambda_constant(&t, &data)?;
                let (errs, _) = compute_errors(&t)?;
                Ok((errs.e_sup() <= opts.tol && errs.e_red_sup() <= opts.tol).then_some(t))
            });
            if let Ok(Some(t)) = fitted {
                return Ok(t);
            }
        }
        n *= 2;
    }
    Ok(sol.clone())
}

/// Solves for `(K, P, Λ)` by alternating the `K` and `P` corrections
/// until `|E|, |E_red| ≤ tol`.
pub fn quasi_newton(start: &TorusSolution, opts: &SolverOptions) -> Result<(TorusSolution, SolverReport)> {
    let mut report = SolverReport::default();
    let sol = quasi_newton_into(start, opts, &mut report)?;
    Ok((sol, report))
}

/// [`quasi_newton`] that keeps the step history when the solve fails.
pub fn quasi_newton_traced(start: &TorusSolution, opts: &SolverOptions) -> (Result<TorusSolution>, SolverReport) {
    let mut report = SolverReport::default();
    let out = quasi_newton_into(start, opts, &mut report);
    (out, report)
}

fn quasi_newton_into(start: &TorusSolution, opts: &SolverOptions, report: &mut SolverReport) -> Result<TorusSolution> {
    let mut sol = start.clone();
    let mut data = evaluate_map(&sol.k, &sol.params)?;
    let mut increases = 0usize;
    let mut prev = f64::INFINITY;
    let mut eta2_mean = None;
    let mut corrections = 0usize;
    loop {
        let errs = errors_from(&sol, &data)?;
        let (e, er) = (errs.e_sup(), errs.e_red_sup());
        report.steps.push(StepRecord {
            n: sol.n(),
            e,
            e_red: er,
            ecc_mean: errs.ecc_mean(),
            eta2_mean: eta2_mean.take(),
            filtered: false,
        });
        if !(e.is_finite() && er.is_finite()) {
            return Err(divergence(report));
        }
        if e <= opts.tol && opts.finalize && !report.finalized {
            sol = finalize_bundles(&sol, &data, opts)?;
            report.finalized = true;
            prev = f64::INFINITY;
            continue;
        }
        if e <= opts.tol && er <= opts.tol {
            return Ok(sol);
        }
        let combined = e + er;
        let grew = combined > prev;
        increases = if grew { increases + 1 } else { 0 };
        prev = combined;
        if increases >= opts.divergence_run {
            return Err(divergence(report));
        }
        if corrections >= opts.max_steps {
            return Err(Error::NotConverged {
                steps: corrections,
                last: combined,
            });
        }
        let filter = corrections < opts.filter_steps || grew;
        report.steps.last_mut().expect("pushed above").filtered = filter;
        corrections += 1;

        let ks = k_step(&sol, &errs.e, &opts.fixed_point)?;
        eta2_mean = Some(ks.eta2_mean);
        let keep = opts.keep_modes(sol.n());
        sol.k = if filter { ks.k.lowpass(keep) } else { ks.k };
        if !filter && high_frequency_mass(&sol) > opts.tail_threshold && 2 * sol.n() <= opts.max_n {
            let from = sol.n();
            sol = sol.resample(2 * from);
            report.escalations.push((from, 2 * from));
        }
        let dk = sol.k.differentiate();
        set_column(&mut sol.p, TANGENT, &dk);
        data = evaluate_map(&sol.k, &sol.params)?;
        let errs = errors_from(&sol, &data)?;
        let ps = p_step(&sol, &errs.e_red, &opts.fixed_point)?;
        let keep = opts.keep_modes(sol.n());
        sol.p = if filter { ps.p.lowpass(keep) } else { ps.p };
        sol.t_fn = ps.t_fn;
        sol.lam_s = ps.lam_s;
        sol.lam_u = ps.lam_u;
    }
}

fn divergence(report: &SolverReport) -> Error {
    Error::Divergence {
        steps: report.steps.len(),
        history: report.steps.iter().map(StepRecord::combined).collect(),
    }
}

/// Rebuilds `P` and `Λ` from a converged `K`: tangent from `DK`, stable and
/// unstable bundles by power iteration with constant multipliers, center by
/// symplectic conjugation with constant twist.
pub fn finalize_bundles(sol: &TorusSolution, data: &MapData, opts: &SolverOptions) -> Result<TorusSolution> {
    let w = sol.omega;
    let n = sol.n();
    let dk = sol.k.differentiate();
    let mut power = opts.power;
    if power.keep_modes.is_none() {
        power.keep_modes = Some(3 * n / 8);
    }
    let (vs, vu, _) = power_method_bundles(&data.df, &sol.bundle(STABLE), &sol.bundle(UNSTABLE), w, &power)?;
    let (vs, lam_s) = constant_multiplier(&bundle_multiplier(&data.df, &vs, w), &vs, w)?;
    let (vu, lam_u) = constant_multiplier(&bundle_multiplier(&data.df, &vu, w), &vu, w)?;
    let conj = symplectic_conjugate(
        &dk,
        &data.df,
        &vs,
        &vu,
        Coef::Const(lam_s),
        Coef::Const(lam_u),
        w,
        &opts.fixed_point,
    )?;
    let (vc, t_bar) = constant_twist(&conj.t_fn, &conj.v_c, &dk, w)?;
    let mut out = sol.clone();
    set_column(&mut out.p, TANGENT, &dk);
    set_column(&mut out.p, CENTER, &vc);
    set_column(&mut out.p, STABLE, &vs);
    set_column(&mut out.p, UNSTABLE, &vu);
    out.t_fn = PeriodicGrid::constant(n, &[t_bar]);
    out.lam_s = PeriodicGrid::constant(n, &[lam_s]);
    out.lam_u = PeriodicGrid::constant(n, &[lam_u]);
    Ok(out)
}

/// Number of times `K` sweeps the orbit: 2 when the multipliers are negative.
pub fn covering(seed: &PeriodicOrbitSeed) -> usize {
    if seed.lam_u < 0.0 {
        2
    } else {
        1
    }
}

/// Tolerance on the sparsity and symplectic checks of the initial torus.
pub const INIT_TOLERANCE: f64 = 1e-8;

/// Circle, bundles and Floquet matrix of a periodic orbit of the circular
/// problem seen by the stroboscopic map.
pub fn init_from_periodic_orbit(
    seed: &PeriodicOrbitSeed,
    params: &ModelParams,
    n: usize,
    limits: &FixedPoint,
) -> Result<TorusSolution> {
    if !n.is_power_of_two() || n < 8 {
        return Err(Error::InvalidInput(format!("grid size {n} must be a power of two ≥ 8")));
    }
    let circ = params.with_eps(0.0);
    let cover = covering(seed) as f64;
    let omega = seed.rotation_number(&circ) / cover;
    let span = cover * seed.period;
    let points: Vec<(State4, Mat4)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = span * i as f64 / n as f64;
            if i == 0 {
                Ok((seed.x0, Mat4::identity()))
            } else {
                crate::dynamics::propagate_with_stm(&seed.x0, 0.0, t, &circ).map_err(|e| Error::at_point(i, e))
            }
        })
        .collect::<Result<_>>()?;
    let mut k = PeriodicGrid::zeros(n, 4);
    let mut vs = PeriodicGrid::zeros(n, 4);
    let mut vu = PeriodicGrid::zeros(n, 4);
    for (i, (x, phi)) in points.iter().enumerate() {
        k.set_state(i, x);
        let a = phi * seed.v_s;
        let b = phi * seed.v_u;
        vs.set_state(i, &(a / a.norm()));
        vu.set_state(i, &(b / b.norm()));
    }
    let data = evaluate_map(&k, &circ)?;
    let dk = k.differentiate();
    let lam_s = bundle_multiplier(&data.df, &vs, omega);
    let lam_u = bundle_multiplier(&data.df, &vu, omega);
    let conj = symplectic_conjugate(&dk, &data.df, &vs, &vu, Coef::Grid(&lam_s), Coef::Grid(&lam_u), omega, limits)?;
    if conj.b_defect > INIT_TOLERANCE {
        return Err(Error::SymplecticDefect {
            index: conj.b_defect_index,
            deviation: conj.b_defect,
        });
    }
    let mut p = PeriodicGrid::zeros(n, 16);
    set_column(&mut p, TANGENT, &dk);
    set_column(&mut p, CENTER, &conj.v_c);
    set_column(&mut p, STABLE, &vs);
    set_column(&mut p, UNSTABLE, &vu);
    let sol = TorusSolution {
        k,
        p,
        t_fn: conj.t_fn,
        lam_s,
        lam_u,
        omega,
        params: circ,
    };
    let errs = errors_from(&sol, &data)?;
    let dev = errs.e_red_sup();
    if !(dev <= INIT_TOLERANCE) {
        return Err(Error::Sparsity { deviation: dev });
    }
    Ok(sol)
}

/// Writes the torus file: header `N omega eps mu omega_p theta_p0 Tbar lam_s lam_u`
/// then one row per grid point with `θ_i`, `K` and `P` (column-major).
/// Only the averages of `Λ` are stored; normalize with
/// [`make_lambda_constant`] first if `Λ` varies.
pub fn write_torus<W: Write>(sol: &TorusSolution, mut out: W) -> Result<()> {
    let p = &sol.params;
    writeln!(
        out,
        "{} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
        sol.n(),
        sol.omega,
        p.eps,
        p.mu,
        p.omega_p,
        p.theta_p0,
        sol.t_mean(),
        sol.lam_s_mean(),
        sol.lam_u_mean()
    )?;
    for i in 0..sol.n() {
        let mut row = format!("{:.17e}", sol.k.theta(i));
        for v in sol.k.point(i).iter().chain(sol.p.point(i).iter()) {
            row.push_str(&format!(" {v:.17e}"));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn parse_fields(line: &str, expected: usize, context: &str) -> Result<Vec<f64>> {
    let vals = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| Error::parse(context, format!("{t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expected {
        return Err(Error::parse(
            context,
            format!("expected {expected} fields, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

/// Reads a torus file; `T`, `λ_s`, `λ_u` come back as constants and the
/// remaining model settings from `base`.
pub fn read_torus<R: BufRead>(input: R, base: &ModelParams) -> Result<TorusSolution> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("torus header", "empty file"))??;
    let h = parse_fields(&header, 9, "torus header")?;
    let n = h[0] as usize;
    if n == 0 || h[0].fract() != 0.0 {
        return Err(Error::parse("torus header", format!("bad grid size {}", h[0])));
    }
    let params = ModelParams {
        eps: h[2],
        mu: h[3],
        omega_p: h[4],
        theta_p0: h[5],
        ..*base
    };
    params.validate()?;
    let mut k = PeriodicGrid::zeros(n, 4);
    let mut p = PeriodicGrid::zeros(n, 16);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse("torus rows", format!("expected {n} rows, found {i}")))??;
        let v = parse_fields(&line, 21, &format!("torus row {i}"))?;
        k.set(i, &v[1..5]);
        p.set(i, &v[5..21]);
    }
    Ok(TorusSolution {
        k,
        p,
        t_fn: PeriodicGrid::constant(n, &[h[6]]),
        lam_s: PeriodicGrid::constant(n, &[h[7]]),
        lam_u: PeriodicGrid::constant(n, &[h[8]]),
        omega: h[1],
        params,
    })
}
