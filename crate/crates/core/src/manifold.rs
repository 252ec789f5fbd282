//! Stable and unstable manifolds of an invariant circle as Fourier-Taylor
//! series `W(θ, s) = Σ_k W_k(θ) s^k`, their fundamental domains, and their
//! globalization by iterating the map.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::dynamics::{
    inverse_map, map_iterate, reflect, stroboscopic_map, Mat4, ModelParams, Propagation, State4,
};
use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::jet::{jet_transport, StateJet};
use crate::torus::{evaluate_map, TorusSolution, STABLE, UNSTABLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

impl Stability {
    pub fn name(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifoldSeries {
    /// `W_0 = K`, `W_1 = α·v`, then the higher orders.
    pub coefs: Vec<PeriodicGrid>,
    pub lam: f64,
    pub stability: Stability,
    pub alpha: f64,
    /// Fundamental domain in the series parameter (0 until computed).
    pub domain: f64,
    pub omega: f64,
    pub params: ModelParams,
}

impl ManifoldSeries {
    pub fn degree(&self) -> usize {
        self.coefs.len() - 1
    }

    pub fn n(&self) -> usize {
        self.coefs[0].n()
    }

    /// Series value at grid angle `θ_i`.
    pub fn eval_at(&self, i: usize, s: f64) -> State4 {
        self.coefs
            .iter()
            .rev()
            .fold(State4::zeros(), |acc, c| acc * s + c.state(i))
    }

    /// Series value at an arbitrary angle (Fourier interpolation).
    pub fn eval(&self, theta: f64, s: f64) -> State4 {
        self.coefs.iter().rev().fold(State4::zeros(), |acc, c| {
            let v = c.spectrum().eval(theta);
            acc * s + State4::new(v[0], v[1], v[2], v[3])
        })
    }

    /// Coefficients at `θ_i` as a jet.
    pub fn jet_at(&self, i: usize) -> StateJet {
        StateJet::new(self.coefs.iter().map(|c| c.state(i)).collect())
    }

    /// Same manifold with every coefficient translated by `w`.
    pub fn translated(&self, w: f64) -> Vec<PeriodicGrid> {
        self.coefs.iter().map(|c| c.translate(w)).collect()
    }

    /// Rescales the parameter: `s ↦ f·s`.
    pub fn rescaled(&self, f: f64) -> ManifoldSeries {
        let mut out = self.clone();
        for (k, c) in out.coefs.iter_mut().enumerate() {
            *c = c.scale(f.powi(k as i32));
        }
        out.alpha *= f;
        out.domain /= f;
        out
    }

    pub fn truncated(&self, degree: usize) -> ManifoldSeries {
        let mut out = self.clone();
        out.coefs.truncate(degree.min(self.degree()) + 1);
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OrderOptions {
    /// Residual of each order equation, relative to its right-hand side.
    pub step_tol: f64,
    /// Refinement passes allowed per order.
    pub max_passes: usize,
    pub sub_order_tol: f64,
    /// Coefficient size that triggers halving `α`.
    pub blowup: f64,
    pub max_halvings: usize,
}

impl Default for OrderOptions {
    fn default() -> Self {
        OrderOptions {
            step_tol: 1e-12,
            max_passes: 50,
            sub_order_tol: 1e-9,
            blowup: 1e8,
            max_halvings: 60,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OrderReport {
    /// Largest residual coefficient below order `k`, for `k = 2..=d`.
    pub sub_order: Vec<(usize, f64)>,
    /// Refinement passes used at each order.
    pub passes: Vec<usize>,
    pub halvings: usize,
}

/// Invariance residual jets `F(W(θ_i, s)) - W(θ_i+ω, λs)` through the
/// degree of the series.
pub fn residual_jets(series: &ManifoldSeries) -> Result<Vec<StateJet>> {
    let shifted = series.translated(series.omega);
    let lam = series.lam;
    let d = series.degree();
    (0..series.n())
        .into_par_iter()
        .map(|i| {
            let out = jet_transport(&series.jet_at(i), &series.params).map_err(|e| Error::at_point(i, e))?;
            let coefs = (0..=d)
                .map(|k| out.coefs[k] - shifted[k].state(i) * lam.powi(k as i32))
                .collect();
            Ok(StateJet::new(coefs))
        })
        .collect()
}

fn bundle_column(stability: Stability) -> usize {
    match stability {
        Stability::Stable => STABLE,
        Stability::Unstable => UNSTABLE,
    }
}

/// First-order series: `K` plus the bundle scaled to unit sup-norm times `α`.
pub fn linear_series(sol: &TorusSolution, stability: Stability, alpha: f64) -> Result<ManifoldSeries> {
    if !sol.has_constant_lambda() {
        return Err(Error::InvalidInput("manifold series need constant multipliers".into()));
    }
    let lam = match stability {
        Stability::Stable => sol.lam_s_mean(),
        Stability::Unstable => sol.lam_u_mean(),
    };
    let hyperbolic = match stability {
        Stability::Stable => lam.abs() < 1.0,
        Stability::Unstable => lam.abs() > 1.0,
    };
    if !hyperbolic || (lam.abs() - 1.0).abs() < 1e-6 {
        return Err(Error::NotWhiskered {
            detail: format!("{} multiplier {lam} is not hyperbolic", stability.name()),
        });
    }
    let v = sol.bundle(bundle_column(stability));
    let norm = v.sup_norm();
    Ok(ManifoldSeries {
        coefs: vec![sol.k.clone(), v.scale(alpha / norm)],
        lam,
        stability,
        alpha,
        domain: 0.0,
        omega: sol.omega,
        params: sol.params,
    })
}

/// `a V(θ) - b V(θ+ω) = g(θ)` for constants with `|a| ≠ |b|`, mode by mode.
fn twisted_fourier(g: &PeriodicGrid, a: f64, b: f64, omega: f64) -> PeriodicGrid {
    let mut spec = g.spectrum();
    spec.map_modes(|m| Complex64::new(1.0, 0.0) / (a - b * Complex64::from_polar(1.0, m as f64 * omega)));
    spec.to_grid()
}

/// Frame of the circle used to reduce the order equations: `P`, `P⁻¹(θ+ω)`
/// and the constant `Λ`.
struct Frame {
    p: Vec<Mat4>,
    p_inv_next: Vec<Mat4>,
    lambda: Mat4,
}

impl Frame {
    fn new(sol: &TorusSolution) -> Result<Frame> {
        let shifted = sol.p.translate(sol.omega);
        let p_inv_next = (0..sol.n())
            .map(|i| shifted.matrix(i).try_inverse().ok_or(Error::BundleDegeneracy { index: i }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Frame {
            p: sol.p.matrices(),
            p_inv_next,
            lambda: sol.lambda(0),
        })
    }

    /// Solves `Λ V(θ) - μ V(θ+ω) = -P⁻¹(θ+ω) r(θ)` by back substitution
    /// (`Λ` is upper triangular) and returns `P V`.
    fn correction(&self, r: &PeriodicGrid, mu: f64, omega: f64) -> PeriodicGrid {
        let n = r.n();
        let g = PeriodicGrid::from_states(&(0..n).map(|i| -(self.p_inv_next[i] * r.state(i))).collect::<Vec<_>>());
        let mut v: Vec<PeriodicGrid> = vec![PeriodicGrid::zeros(n, 1); 4];
        for row in (0..4).rev() {
            let mut rhs = g.components(row, 1);
            for col in row + 1..4 {
                let l = self.lambda[(row, col)];
                if l != 0.0 {
                    rhs = rhs.sub(&v[col].scale(l));
                }
            }
            v[row] = twisted_fourier(&rhs, self.lambda[(row, row)], mu, omega);
        }
        PeriodicGrid::from_states(
            &(0..n)
                .map(|i| self.p[i] * State4::new(v[0].scalar(i), v[1].scalar(i), v[2].scalar(i), v[3].scalar(i)))
                .collect::<Vec<_>>(),
        )
    }
}

/// `DF(K(θ)) W(θ) + E(θ) - μ W(θ+ω)`.
fn order_residual(df: &[Mat4], w: &PeriodicGrid, e: &PeriodicGrid, mu: f64, omega: f64) -> PeriodicGrid {
    let ahead = w.translate(omega);
    PeriodicGrid::from_states(
        &(0..w.n())
            .map(|i| df[i] * w.state(i) + e.state(i) - ahead.state(i) * mu)
            .collect::<Vec<_>>(),
    )
}

/// Solves `DF(K(θ)) W(θ) + E(θ) = λ^k W(θ+ω)`. Each pass solves the
/// equation exactly in the frame `P` with the constant `Λ`, then measures
/// the residual with the true `DF`; the passes contract at the rate of the
/// reducibility error of the circle.
fn solve_order(
    df: &[Mat4],
    frame: &Frame,
    e: &PeriodicGrid,
    lam_k: f64,
    omega: f64,
    opts: &OrderOptions,
) -> Result<(PeriodicGrid, usize)> {
    let mut w = PeriodicGrid::zeros(e.n(), 4);
    let mut r = e.clone();
    let mut size = r.sup_norm();
    let target = opts.step_tol * size.max(1.0);
    for pass in 1..=opts.max_passes {
        let next = w.add(&frame.correction(&r, lam_k, omega));
        let r_next = order_residual(df, &next, e, lam_k, omega);
        let next_size = r_next.sup_norm();
        if !next_size.is_finite() {
            break;
        }
        if next_size >= size {
            // stalled at roundoff; keep the better iterate
            return Ok((w, pass - 1));
        }
        w = next;
        r = r_next;
        size = next_size;
        if size <= target {
            return Ok((w, pass));
        }
    }
    Err(Error::IterationCap {
        iterations: opts.max_passes,
        rate: f64::NAN,
        last_change: size,
    })
}

/// Computes the series to `degree` order by order, checking at every order
/// that the lower-order residual coefficients vanish. Coefficients above
/// `opts.blowup` halve `α`; since `W_k` scales as `α^k` this rescales the
/// orders already found.
pub fn order_by_order(
    sol: &TorusSolution,
    stability: Stability,
    degree: usize,
    alpha: f64,
    opts: &OrderOptions,
) -> Result<(ManifoldSeries, OrderReport)> {
    let mut series = linear_series(sol, stability, alpha)?;
    let mut report = OrderReport::default();
    if degree <= 1 {
        series.coefs.truncate(degree + 1);
        return Ok((series, report));
    }
    let data = evaluate_map(&sol.k, &sol.params)?;
    let frame = Frame::new(sol)?;
    let n = series.n();
    let mut k = 2;
    while k <= degree {
        series.coefs.push(PeriodicGrid::zeros(n, 4));
        let res = residual_jets(&series)?;
        series.coefs.pop();
        let sub = res
            .iter()
            .map(|j| j.coefs[..k].iter().map(|c| c.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if !(sub <= opts.sub_order_tol) {
            return Err(Error::SubOrderResidual {
                order: k,
                residual: sub,
                limit: opts.sub_order_tol,
            });
        }
        let e = PeriodicGrid::from_states(&res.iter().map(|j| j.coefs[k]).collect::<Vec<_>>());
        let lam_k = series.lam.powi(k as i32);
        let (w, passes) = solve_order(&data.df, &frame, &e, lam_k, series.omega, opts)?;
        if w.sup_norm() > opts.blowup {
            if report.halvings >= opts.max_halvings {
                return Err(Error::InvalidInput(format!(
                    "order {k} coefficients stay above {:e} after {} halvings of alpha",
                    opts.blowup, report.halvings
                )));
            }
            report.halvings += 1;
            series = series.rescaled(0.5);
            continue;
        }
        report.sub_order.push((k, sub));
        report.passes.push(passes);
        series.coefs.push(w);
        k += 1;
    }
    Ok((series, report))
}

/// Pointwise invariance error `|F(W(θ_i, s)) - W(θ_i+ω, λs)|`.
fn point_error(series: &ManifoldSeries, shifted: &[PeriodicGrid], i: usize, s: f64) -> Result<f64> {
    let x = series.eval_at(i, s);
    let (fx, _) = stroboscopic_map(&x, &series.params, false)?;
    let ls = series.lam * s;
    let target = shifted
        .iter()
        .rev()
        .fold(State4::zeros(), |acc, c| acc * ls + c.state(i));
    Ok((fx - target).norm())
}

/// Sup over the grid of the invariance error at parameter `s` (both signs).
pub fn invariance_residual(series: &ManifoldSeries, s: f64) -> Result<f64> {
    let shifted = series.translated(series.omega);
    (0..series.n())
        .into_par_iter()
        .map(|i| {
            Ok(point_error(series, &shifted, i, s)?.max(point_error(series, &shifted, i, -s)?))
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct DomainReport {
    pub domain: f64,
    pub per_point: Vec<f64>,
}

/// Largest `D` with invariance error below `e_tol` for `|s| < D` at every
/// grid angle; each `D_i` is bisected to 1% and capped at `s_max`.
pub fn fundamental_domain(series: &ManifoldSeries, e_tol: f64, s_max: f64) -> Result<DomainReport> {
    let shifted = series.translated(series.omega);
    let floor = 1e-12;
    let per_point = (0..series.n())
        .into_par_iter()
        .map(|i| {
            let err = |s: f64| -> Result<f64> {
                Ok(point_error(series, &shifted, i, s)?.max(point_error(series, &shifted, i, -s)?))
            };
            let ok = |s: f64| -> bool { matches!(err(s), Ok(e) if e < e_tol) };
            if ok(s_max) {
                return Ok(s_max);
            }
            let mut hi = s_max;
            let mut lo = s_max / 2.0;
            while !ok(lo) {
                hi = lo;
                lo /= 2.0;
                if lo < floor {
                    return Ok(0.0);
                }
            }
            while hi - lo > 0.01 * lo {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        })
        .collect::<Result<Vec<f64>>>()?;
    let domain = per_point.iter().copied().fold(f64::INFINITY, f64::min);
    if !(domain >= floor) {
        return Err(Error::DomainCollapse { radius: domain });
    }
    Ok(DomainReport { domain, per_point })
}

/// Slope of `log(residual)` against `log(s)`, fitted over the samples whose
/// residual clears `floor` by three orders of magnitude.
pub fn residual_slope(samples: &[(f64, f64)], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, r)| *r > 1e3 * floor)
        .map(|(s, r)| (s.ln(), r.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshPoint {
    pub k: usize,
    pub i: usize,
    pub j: usize,
    pub s: f64,
    pub x: State4,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct ManifoldMesh {
    pub n: usize,
    pub l: usize,
    pub k_max: usize,
    pub points: Vec<MeshPoint>,
}

impl ManifoldMesh {
    pub fn point(&self, k: usize, i: usize, j: usize) -> &MeshPoint {
        &self.points[(k * self.l + j) * self.n + i]
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.valid).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeshOptions {
    pub propagation: Propagation,
    /// Points farther than this from the origin are invalid.
    pub radius: f64,
    /// Neighbour-distance multiple of the layer median that marks a jump.
    pub jump_factor: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions {
            propagation: Propagation::Auto,
            radius: 5.0,
            jump_factor: 10.0,
        }
    }
}

fn step_map(x: &State4, stability: Stability, params: &ModelParams, mode: Propagation) -> Result<State4> {
    match stability {
        Stability::Unstable => map_iterate(x, 1, params, mode),
        Stability::Stable => inverse_map(x, params, mode),
    }
}

/// Mesh of `L` evenly spaced `s`-values in `[-D, D]` on every grid angle,
/// extended by `k_max` applications of `F` (unstable) or `F⁻¹` (stable).
/// Layer `k` is translated back onto the common grid, so point `(k, i, j)`
/// approximates `W(θ_i, λ^{±k} s_j)`. A propagation failure invalidates
/// the whole `θ`-column of its layer, since the translation needs every
/// sample.
pub fn globalize_mesh(
    series: &ManifoldSeries,
    domain: f64,
    l: usize,
    k_max: usize,
    opts: &MeshOptions,
) -> Result<ManifoldMesh> {
    if l == 0 || l % 2 == 0 {
        return Err(Error::InvalidInput(format!("mesh needs an odd number of s-values, got {l}")));
    }
    let n = series.n();
    let s_vals: Vec<f64> = (0..l)
        .map(|j| if l == 1 { 0.0 } else { -domain + 2.0 * domain * j as f64 / (l - 1) as f64 })
        .collect();
    let (factor, shift_sign) = match series.stability {
        Stability::Unstable => (series.lam, -1.0),
        Stability::Stable => (1.0 / series.lam, 1.0),
    };
    // raw[j][i]: current iterate of W(θ_i, s_j), None once propagation failed
    let mut raw: Vec<Vec<Option<State4>>> = s_vals
        .iter()
        .map(|&s| (0..n).map(|i| Some(series.eval_at(i, s))).collect())
        .collect();
    let mut points = Vec::with_capacity(n * l * (k_max + 1));
    for k in 0..=k_max {
        if k > 0 {
            raw = raw
                .into_par_iter()
                .map(|col| {
                    col.into_iter()
                        .map(|x| x.and_then(|x| step_map(&x, series.stability, &series.params, opts.propagation).ok()))
                        .collect()
                })
                .collect();
        }
        let mut layer = Vec::with_capacity(n * l);
        for (j, col) in raw.iter().enumerate() {
            let s = s_vals[j] * factor.powi(k as i32);
            if col.iter().all(Option::is_some) {
                let states: Vec<State4> = col.iter().map(|x| x.expect("checked")).collect();
                let aligned = PeriodicGrid::from_states(&states).translate(shift_sign * k as f64 * series.omega);
                for i in 0..n {
                    layer.push(MeshPoint {
                        k,
                        i,
                        j,
                        s,
                        x: aligned.state(i),
                        valid: true,
                    });
                }
            } else {
                for i in 0..n {
                    layer.push(MeshPoint {
                        k,
                        i,
                        j,
                        s,
                        x: State4::repeat(f64::NAN),
                        valid: false,
                    });
                }
            }
        }
        filter_layer(&mut layer, n, l, opts);
        points.extend(layer);
    }
    Ok(ManifoldMesh { n, l, k_max, points })
}

/// Marks jumps (either `θ`-neighbour farther than `jump_factor` times the
/// layer's median neighbour distance) and points outside the radius.
fn filter_layer(layer: &mut [MeshPoint], n: usize, l: usize, opts: &MeshOptions) {
    let dist = |a: &MeshPoint, b: &MeshPoint| (a.x - b.x).norm();
    let mut gaps: Vec<f64> = Vec::with_capacity(n * l);
    for j in 0..l {
        for i in 0..n {
            let (a, b) = (&layer[j * n + i], &layer[j * n + (i + 1) % n]);
            if a.valid && b.valid {
                gaps.push(dist(a, b));
            }
        }
    }
    if gaps.is_empty() {
        return;
    }
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    let limit = opts.jump_factor * median;
    let snapshot: Vec<MeshPoint> = layer.to_vec();
    for j in 0..l {
        for i in 0..n {
            let p = &snapshot[j * n + i];
            if !p.valid {
                continue;
            }
            let prev = &snapshot[j * n + (i + n - 1) % n];
            let next = &snapshot[j * n + (i + 1) % n];
            let jump = [prev, next].iter().any(|q| !q.valid || dist(p, q) > limit);
            let outside = p.x.fixed_rows::<2>(0).norm() > opts.radius;
            if jump || outside {
                layer[j * n + i].valid = false;
            }
        }
    }
}

/// `W(θ, s)` anywhere on the manifold: the series at the preimage
/// parameter inside the domain, carried forward (unstable) or backward
/// (stable) by the needed number of maps.
pub fn evaluate_global(series: &ManifoldSeries, theta: f64, s: f64, mode: Propagation) -> Result<State4> {
    let d = series.domain;
    if !(d > 0.0) {
        return Err(Error::InvalidInput("series has no fundamental domain".into()));
    }
    let shrink = match series.stability {
        Stability::Unstable => 1.0 / series.lam,
        Stability::Stable => series.lam,
    };
    let mut k = 0usize;
    let mut s0 = s;
    while s0.abs() >= d {
        s0 *= shrink;
        k += 1;
        if k > 10_000 {
            return Err(Error::InvalidInput(format!("parameter {s} too large")));
        }
    }
    let (theta0, steps) = match series.stability {
        Stability::Unstable => (theta - k as f64 * series.omega, k as i32),
        Stability::Stable => (theta + k as f64 * series.omega, -(k as i32)),
    };
    let x0 = series.eval(theta0, s0);
    match series.stability {
        Stability::Unstable => map_iterate(&x0, steps, &series.params, mode),
        Stability::Stable => {
            let mut x = x0;
            for _ in 0..k {
                x = inverse_map(&x, &series.params, mode)?;
            }
            Ok(x)
        }
    }
}

/// Unstable manifold from the stable one via time reversal:
/// `W^u(θ, s) = M W^s(-θ, s)` with `M = diag(1, -1, -1, 1)`.
pub fn symmetry_conjugate(ws: &ManifoldSeries) -> Result<ManifoldSeries> {
    if !(ws.params.is_reversible() && ws.params.theta_p0 == 0.0) {
        return Err(Error::SymmetryUnavailable(format!(
            "section phase {} breaks the time reversal",
            ws.params.theta_p0
        )));
    }
    let n = ws.n();
    let coefs = ws
        .coefs
        .iter()
        .map(|c| {
            let mut out = PeriodicGrid::zeros(n, 4);
            for i in 0..n {
                out.set_state(i, &reflect(&c.state((n - i) % n)));
            }
            out
        })
        .collect();
    Ok(ManifoldSeries {
        coefs,
        lam: 1.0 / ws.lam,
        stability: match ws.stability {
            Stability::Stable => Stability::Unstable,
            Stability::Unstable => Stability::Stable,
        },
        ..ws.clone()
    })
}

/// Writes the series file: header `N d lam flag alpha D omega eps`, then
/// `d+1` blocks of `N` rows with the four coefficient components.
pub fn write_series<W: Write>(series: &ManifoldSeries, mut out: W) -> Result<()> {
    writeln!(
        out,
        "{} {} {:.17e} {} {:.17e} {:.17e} {:.17e} {:.17e}",
        series.n(),
        series.degree(),
        series.lam,
        series.stability.name(),
        series.alpha,
        series.domain,
        series.omega,
        series.params.eps
    )?;
    for c in &series.coefs {
        for i in 0..c.n() {
            let s = c.state(i);
            writeln!(out, "{:.17e} {:.17e} {:.17e} {:.17e}", s[0], s[1], s[2], s[3])?;
        }
    }
    Ok(())
}

pub fn read_series<R: BufRead>(input: R, base: &ModelParams) -> Result<ManifoldSeries> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::parse("series header", "empty file"))??;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 8 {
        return Err(Error::parse("series header", format!("expected 8 fields, found {}", h.len())));
    }
    let num = |t: &str| t.parse::<f64>().map_err(|e| Error::parse("series header", format!("{t:?}: {e}")));
    let n: usize = h[0].parse().map_err(|e| Error::parse("series header", format!("N: {e}")))?;
    let d: usize = h[1].parse().map_err(|e| Error::parse("series header", format!("d: {e}")))?;
    let stability = match h[3] {
        "stable" => Stability::Stable,
        "unstable" => Stability::Unstable,
        other => return Err(Error::parse("series header", format!("unknown flag {other:?}"))),
    };
    let mut coefs = Vec::with_capacity(d + 1);
    for k in 0..=d {
        let mut g = PeriodicGrid::zeros(n, 4);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse("series rows", format!("missing row {i} of order {k}")))??;
            let v = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::parse("series rows", format!("{t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != 4 {
                return Err(Error::parse("series rows", format!("expected 4 fields, found {}", v.len())));
            }
            g.set(i, &v);
        }
        coefs.push(g);
    }
    Ok(ManifoldSeries {
        coefs,
        lam: num(h[2])?,
        stability,
        alpha: num(h[4])?,
        domain: num(h[5])?,
        omega: num(h[6])?,
        params: base.with_eps(num(h[7])?),
    })
}

/// Mesh file rows `k i j s x y px py valid`.
pub fn write_mesh<W: Write>(mesh: &ManifoldMesh, mut out: W) -> Result<()> {
    writeln!(out, "# k i j s x y px py valid")?;
    for p in &mesh.points {
        writeln!(
            out,
            "{} {} {} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {}",
            p.k,
            p.i,
            p.j,
            p.s,
            p.x[0],
            p.x[1],
            p.x[2],
            p.x[3],
            p.valid as u8
        )?;
    }
    Ok(())
}

/// Reads a mesh file written by [`write_mesh`].
pub fn read_mesh<R: BufRead>(input: R) -> Result<ManifoldMesh> {
    let mut points = Vec::new();
    let (mut n, mut l, mut k_max) = (0, 0, 0);
    for (row, line) in input.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 9 {
            return Err(Error::parse("mesh row", format!("line {}: expected 9 fields, found {}", row + 1, t.len())));
        }
        let int = |v: &str| v.parse::<usize>().map_err(|e| Error::parse("mesh row", format!("{v:?}: {e}")));
        let num = |v: &str| v.parse::<f64>().map_err(|e| Error::parse("mesh row", format!("{v:?}: {e}")));
        let (k, i, j) = (int(t[0])?, int(t[1])?, int(t[2])?);
        n = n.max(i + 1);
        l = l.max(j + 1);
        k_max = k_max.max(k);
        points.push(MeshPoint {
            k,
            i,
            j,
            s: num(t[3])?,
            x: State4::new(num(t[4])?, num(t[5])?, num(t[6])?, num(t[7])?),
            valid: int(t[8])? == 1,
        });
    }
    if points.len() != n * l * (k_max + 1) {
        return Err(Error::parse(
            "mesh",
            format!("{} rows do not fill a {n}x{l}x{} mesh", points.len(), k_max + 1),
        ));
    }
    Ok(ManifoldMesh { n, l, k_max, points })
}
