//! Functions on the circle sampled at `N` equally spaced angles.
//!
//! Multi-component grids (states, matrices) are stored component-major so
//! each component is one contiguous FFT input. Fourier coefficients follow
//! `a(θ) = Σ â(k) e^{ikθ}` with `â(k) = (1/N) Σ a(θ_i) e^{-ikθ_i}`; the
//! Nyquist mode is always dropped by spectral operations.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dynamics::{Mat4, State4};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Smallest allowed |1 - e^{ikω}| in cohomological solves.
pub const SMALL_DIVISOR_FLOOR: f64 = 1e-8;

/// Signed frequency of FFT bin `i`.
pub fn frequency(i: usize, n: usize) -> i64 {
    if i < n / 2 || n == 1 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Fourier coefficients of every component, same layout as the grid.
#[derive(Debug, Clone)]
pub struct Spectrum {
    n: usize,
    dim: usize,
    coef: Vec<Complex64>,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coefficient(&self, component: usize, k: i64) -> Complex64 {
        let n = self.n as i64;
        let idx = k.rem_euclid(n) as usize;
        self.coef[component * self.n + idx]
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        &self.coef[c * self.n..(c + 1) * self.n]
    }

    fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.coef[c * self.n..(c + 1) * self.n]
    }

    /// Multiplies bin `k` of every component by `f(k)`; the Nyquist bin is zeroed.
    pub fn map_modes<F: Fn(i64) -> Complex64>(&mut self, f: F) {
        let n = self.n;
        let factors: Vec<Complex64> = (0..n)
            .map(|i| {
                if n > 1 && n % 2 == 0 && i == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    f(frequency(i, n))
                }
            })
            .collect();
        for c in 0..self.dim {
            for (v, m) in self.component_mut(c).iter_mut().zip(&factors) {
                *v *= m;
            }
        }
    }

    pub fn to_grid(&self) -> PeriodicGrid {
        let n = self.n;
        let inv = plan(n, true);
        let mut data = vec![0.0; n * self.dim];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..self.dim {
            buf.copy_from_slice(self.component(c));
            inv.process(&mut buf);
            for (d, v) in data[c * n..(c + 1) * n].iter_mut().zip(&buf) {
                *d = v.re;
            }
        }
        PeriodicGrid {
            n,
            dim: self.dim,
            data,
        }
    }

    /// Evaluates the trigonometric interpolant at an arbitrary angle.
    pub fn eval(&self, theta: f64) -> Vec<f64> {
        let n = self.n;
        let phases: Vec<Complex64> = (0..n)
            .map(|i| {
                if n % 2 == 0 && i == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::from_polar(1.0, frequency(i, n) as f64 * theta)
                }
            })
            .collect();
        (0..self.dim)
            .map(|c| {
                self.component(c)
                    .iter()
                    .zip(&phases)
                    .map(|(a, p)| (a * p).re)
                    .sum()
            })
            .collect()
    }
}

/// Multiplier in a twisted equation `a(θ) Q(θ) - b(θ) Q(θ+ω) = c(θ)`.
#[derive(Debug, Clone, Copy)]
pub enum Coef<'a> {
    Const(f64),
    Grid(&'a PeriodicGrid),
}

impl Coef<'_> {
    fn at(&self, i: usize) -> f64 {
        match self {
            Coef::Const(v) => *v,
            Coef::Grid(g) => g.data[i],
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            Coef::Const(v) => v.abs(),
            Coef::Grid(g) => g.data.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

/// Which fixed-point form to iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `Q = (c + b Q(θ+ω)) / a`, contracting when |b/a| < 1.
    Forward,
    /// `Q = [(a Q - c) / b](θ-ω)`, contracting when |a/b| < 1.
    Backward,
}

/// Stability type of a contraction solve `η = λξ - ξ(θ+ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Stable,
    Unstable,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Stable => "stable",
            Mode::Unstable => "unstable",
        }
    }
}

/// Limits of the fixed-point iterations.
#[derive(Debug, Clone, Copy)]
pub struct FixedPoint {
    /// Stop when successive iterates differ by at most this (sup norm).
    pub step_tol: f64,
    pub hard_cap: usize,
}

impl Default for FixedPoint {
    fn default() -> Self {
        FixedPoint {
            step_tol: 1e-14,
            hard_cap: 100_000,
        }
    }
}

impl FixedPoint {
    /// Iteration cap for a given contraction rate: 10 log(1e-14)/log(rate).
    pub fn cap(&self, rate: f64) -> usize {
        if rate <= 0.0 {
            return 10;
        }
        let est = 10.0 * (1e-14f64).ln() / rate.ln();
        (est.ceil().max(10.0) as usize).min(self.hard_cap)
    }
}

impl PeriodicGrid {
    pub fn zeros(n: usize, dim: usize) -> Self {
        PeriodicGrid {
            n,
            dim,
            data: vec![0.0; n * dim],
        }
    }

    pub fn constant(n: usize, value: &[f64]) -> Self {
        let mut g = PeriodicGrid::zeros(n, value.len());
        for (c, v) in value.iter().enumerate() {
            g.component_mut(c).fill(*v);
        }
        g
    }

    /// Builds a grid from a function of the sample angle.
    pub fn from_fn<F: Fn(f64) -> Vec<f64>>(n: usize, dim: usize, f: F) -> Self {
        let mut g = PeriodicGrid::zeros(n, dim);
        for i in 0..n {
            let v = f(g.theta(i));
            assert_eq!(v.len(), dim, "from_fn: wrong component count");
            g.set(i, &v);
        }
        g
    }

    pub fn from_scalars(values: Vec<f64>) -> Self {
        PeriodicGrid {
            n: values.len(),
            dim: 1,
            data: values,
        }
    }

    pub fn from_states(states: &[State4]) -> Self {
        let n = states.len();
        let mut g = PeriodicGrid::zeros(n, 4);
        for (i, s) in states.iter().enumerate() {
            g.set_state(i, s);
        }
        g
    }

    pub fn from_matrices(mats: &[Mat4]) -> Self {
        let n = mats.len();
        let mut g = PeriodicGrid::zeros(n, 16);
        for (i, m) in mats.iter().enumerate() {
            g.set_matrix(i, m);
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.n as f64
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.data[c * self.n..(c + 1) * self.n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.n..(c + 1) * self.n]
    }

    /// Extracts components `start..start+len` as a new grid.
    pub fn components(&self, start: usize, len: usize) -> PeriodicGrid {
        PeriodicGrid {
            n: self.n,
            dim: len,
            data: self.data[start * self.n..(start + len) * self.n].to_vec(),
        }
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[c * self.n + i]
    }

    pub fn set_value(&mut self, i: usize, c: usize, v: f64) {
        self.data[c * self.n + i] = v;
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        (0..self.dim).map(|c| self.get(i, c)).collect()
    }

    pub fn set(&mut self, i: usize, v: &[f64]) {
        for (c, x) in v.iter().enumerate() {
            self.data[c * self.n + i] = *x;
        }
    }

    pub fn state(&self, i: usize) -> State4 {
        debug_assert!(self.dim >= 4);
        State4::new(self.get(i, 0), self.get(i, 1), self.get(i, 2), self.get(i, 3))
    }

    pub fn set_state(&mut self, i: usize, s: &State4) {
        self.set(i, s.as_slice());
    }

    /// Column-major 4×4 matrix at sample `i` (requires 16 components).
    pub fn matrix(&self, i: usize) -> Mat4 {
        debug_assert_eq!(self.dim, 16);
        Mat4::from_fn(|r, c| self.get(i, c * 4 + r))
    }

    pub fn set_matrix(&mut self, i: usize, m: &Mat4) {
        self.set(i, m.as_slice());
    }

    pub fn scalar(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn states(&self) -> Vec<State4> {
        (0..self.n).map(|i| self.state(i)).collect()
    }

    pub fn matrices(&self) -> Vec<Mat4> {
        (0..self.n).map(|i| self.matrix(i)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn spectrum(&self) -> Spectrum {
        let n = self.n;
        let fwd = plan(n, false);
        let scale = 1.0 / n as f64;
        let mut coef = vec![Complex64::new(0.0, 0.0); n * self.dim];
        for c in 0..self.dim {
            let buf = &mut coef[c * n..(c + 1) * n];
            for (b, v) in buf.iter_mut().zip(self.component(c)) {
                *b = Complex64::new(*v * scale, 0.0);
            }
            fwd.process(buf);
        }
        Spectrum {
            n,
            dim: self.dim,
            coef,
        }
    }

    fn map_spectrum<F: Fn(i64) -> Complex64>(&self, f: F) -> PeriodicGrid {
        let mut s = self.spectrum();
        s.map_modes(f);
        s.to_grid()
    }

    /// `g(θ + ω)` by multiplying mode `k` by `e^{ikω}`.
    pub fn translate(&self, omega: f64) -> PeriodicGrid {
        if omega == 0.0 {
            return self.map_spectrum(|_| Complex64::new(1.0, 0.0));
        }
        self.map_spectrum(|k| Complex64::from_polar(1.0, k as f64 * omega))
    }

    pub fn differentiate(&self) -> PeriodicGrid {
        self.map_spectrum(|k| Complex64::new(0.0, k as f64))
    }

    /// Keeps modes with |k| ≤ `keep_modes`.
    pub fn lowpass(&self, keep_modes: usize) -> PeriodicGrid {
        let keep = keep_modes as i64;
        self.map_spectrum(|k| {
            if k.abs() <= keep {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Mean of each component (the k = 0 coefficient).
    pub fn average(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|c| self.component(c).iter().sum::<f64>() / self.n as f64)
            .collect()
    }

    /// Resamples to `new_n` points by zero-padding or truncating the spectrum.
    pub fn resample(&self, new_n: usize) -> PeriodicGrid {
        if new_n == self.n {
            return self.clone();
        }
        let spec = self.spectrum();
        let mut out = Spectrum {
            n: new_n,
            dim: self.dim,
            coef: vec![Complex64::new(0.0, 0.0); new_n * self.dim],
        };
        let kmax = (self.n.min(new_n) / 2) as i64;
        for c in 0..self.dim {
            for k in -(kmax - 1)..kmax {
                let v = spec.coefficient(c, k);
                let idx = k.rem_euclid(new_n as i64) as usize;
                out.coef[c * new_n + idx] = v;
            }
        }
        out.to_grid()
    }

    /// Energy fraction carried by modes with |k| > 3N/8, the top quarter
    /// of the resolved band.
    pub fn tail_ratio(&self) -> f64 {
        let spec = self.spectrum();
        let n = self.n;
        let cut = (3 * n / 8) as i64;
        let mut total = 0.0;
        let mut tail = 0.0;
        for c in 0..self.dim {
            for (i, v) in spec.component(c).iter().enumerate() {
                let e = v.norm_sqr();
                total += e;
                if frequency(i, n).abs() > cut {
                    tail += e;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// Largest Euclidean norm over samples.
    pub fn sup_norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                (0..self.dim)
                    .map(|c| self.get(i, c).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add(&self, other: &PeriodicGrid) -> PeriodicGrid {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &PeriodicGrid) -> PeriodicGrid {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, f: f64) -> PeriodicGrid {
        PeriodicGrid {
            n: self.n,
            dim: self.dim,
            data: self.data.iter().map(|v| v * f).collect(),
        }
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &PeriodicGrid, f: F) -> PeriodicGrid {
        assert_eq!((self.n, self.dim), (other.n, other.dim), "grid shape mismatch");
        PeriodicGrid {
            n: self.n,
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// Multiplies every component pointwise by a scalar grid.
    pub fn mul_scalar_grid(&self, s: &PeriodicGrid) -> PeriodicGrid {
        assert_eq!(s.dim, 1);
        assert_eq!(s.n, self.n);
        let mut out = self.clone();
        for c in 0..self.dim {
            for (v, w) in out.component_mut(c).iter_mut().zip(&s.data) {
                *v *= w;
            }
        }
        out
    }

    /// Removes the mean of each component.
    pub fn zero_mean(&self) -> PeriodicGrid {
        let avg = self.average();
        let mut out = self.clone();
        for (c, a) in avg.iter().enumerate() {
            for v in out.component_mut(c) {
                *v -= a;
            }
        }
        out
    }
}

/// Solves `b(θ) = a(θ) - a(θ+ω)` for `a` with prescribed averages.
///
/// Returns the solution and the averages of `b` that were ignored (the
/// equation only constrains the zero-mean part).
pub fn cohomological_solve(
    b: &PeriodicGrid,
    omega: f64,
    a0: &[f64],
) -> Result<(PeriodicGrid, Vec<f64>)> {
    assert_eq!(a0.len(), b.dim, "one prescribed average per component");
    let n = b.n;
    let mut spec = b.spectrum();
    let ignored: Vec<f64> = (0..b.dim).map(|c| spec.coefficient(c, 0).re).collect();
    for i in 0..n {
        let k = frequency(i, n);
        if k == 0 || (n % 2 == 0 && i == n / 2) {
            continue;
        }
        let div = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, k as f64 * omega);
        if div.norm() < SMALL_DIVISOR_FLOOR {
            return Err(Error::SmallDivisor {
                mode: k,
                divisor: div.norm(),
            });
        }
    }
    spec.map_modes(|k| {
        if k == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, k as f64 * omega))
        }
    });
    for (c, v) in a0.iter().enumerate() {
        spec.component_mut(c)[0] = Complex64::new(*v, 0.0);
    }
    Ok((spec.to_grid(), ignored))
}

/// Solves `a(θ) Q(θ) - b(θ) Q(θ+ω) = c(θ)` by fixed-point iteration from
/// `Q = 0` in the given direction. `a`, `b` are scalars applied to every
/// component of `c`.
pub fn twisted_solve(
    a: Coef,
    b: Coef,
    c: &PeriodicGrid,
    omega: f64,
    direction: Direction,
    limits: &FixedPoint,
) -> Result<PeriodicGrid> {
    twisted_iterate(a, b, c, omega, direction, limits, &mut |_| {})
}

fn twisted_iterate(
    a: Coef,
    b: Coef,
    c: &PeriodicGrid,
    omega: f64,
    direction: Direction,
    limits: &FixedPoint,
    on_sweep: &mut dyn FnMut(f64),
) -> Result<PeriodicGrid> {
    let n = c.n;
    let rate = (0..n)
        .map(|i| {
            let (ai, bi) = (a.at(i), b.at(i));
            match direction {
                Direction::Forward => (bi / ai).abs(),
                Direction::Backward => (ai / bi).abs(),
            }
        })
        .fold(0.0, f64::max);
    if !(rate < 1.0) {
        return Err(Error::NotContracting {
            rate,
            mode: match direction {
                Direction::Forward => "forward",
                Direction::Backward => "backward",
            },
        });
    }
    let cap = limits.cap(rate);
    let mut q = PeriodicGrid::zeros(n, c.dim);
    let mut change = f64::INFINITY;
    for _ in 0..cap {
        let next = match direction {
            Direction::Forward => {
                let shifted = q.translate(omega);
                let mut out = PeriodicGrid::zeros(n, c.dim);
                for comp in 0..c.dim {
                    for i in 0..n {
                        let v = (c.get(i, comp) + b.at(i) * shifted.get(i, comp))
                            / a.at(i);
                        out.set_value(i, comp, v);
                    }
                }
                out
            }
            Direction::Backward => {
                let mut pre = PeriodicGrid::zeros(n, c.dim);
                for comp in 0..c.dim {
                    for i in 0..n {
                        let v = (a.at(i) * q.get(i, comp) - c.get(i, comp))
                            / b.at(i);
                        pre.set_value(i, comp, v);
                    }
                }
                pre.translate(-omega)
            }
        };
        change = next.sub(&q).max_abs();
        on_sweep(change);
        let scale = next.max_abs().max(1.0);
        q = next;
        if change <= limits.step_tol * scale {
            return Ok(q);
        }
    }
    if change <= 1e3 * limits.step_tol * q.max_abs().max(1.0) {
        // stalled at roundoff level just above the target
        return Ok(q);
    }
    Err(Error::IterationCap {
        iterations: cap,
        rate,
        last_change: change,
    })
}

/// [`twisted_solve`] in whichever direction contracts faster.
pub fn twisted_solve_auto(
    a: Coef,
    b: Coef,
    c: &PeriodicGrid,
    omega: f64,
    limits: &FixedPoint,
) -> Result<PeriodicGrid> {
    let (mut fwd, mut bwd) = (0.0f64, 0.0f64);
    for i in 0..c.n {
        let (ai, bi) = (a.at(i), b.at(i));
        fwd = fwd.max((bi / ai).abs());
        bwd = bwd.max((ai / bi).abs());
    }
    let direction = if fwd <= bwd {
        Direction::Forward
    } else {
        Direction::Backward
    };
    twisted_solve(a, b, c, omega, direction, limits)
}

/// Solves `η(θ) = λ(θ) ξ(θ) - ξ(θ+ω)` for `ξ`: with |λ| < 1 (stable) via
/// `ξ = [λξ - η](θ-ω)`, with |λ| > 1 (unstable) via `ξ = (η + ξ(θ+ω))/λ`.
pub fn contraction_solve(
    eta: &PeriodicGrid,
    lam: Coef,
    omega: f64,
    mode: Mode,
    limits: &FixedPoint,
) -> Result<PeriodicGrid> {
    contraction_inner(eta, lam, omega, mode, limits, &mut |_| {})
}

fn contraction_inner(
    eta: &PeriodicGrid,
    lam: Coef,
    omega: f64,
    mode: Mode,
    limits: &FixedPoint,
    on_sweep: &mut dyn FnMut(f64),
) -> Result<PeriodicGrid> {
    let lam_max = lam.max_abs();
    let lam_min = match lam {
        Coef::Const(v) => v.abs(),
        Coef::Grid(g) => g.data.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
    };
    match mode {
        Mode::Stable if lam_max >= 1.0 => Err(Error::NotContracting {
            rate: lam_max,
            mode: mode.name(),
        }),
        Mode::Unstable if lam_min <= 1.0 => Err(Error::NotContracting {
            rate: 1.0 / lam_min,
            mode: mode.name(),
        }),
        Mode::Stable => twisted_iterate(lam, Coef::Const(1.0), eta, omega, Direction::Backward, limits, on_sweep),
        Mode::Unstable => twisted_iterate(lam, Coef::Const(1.0), eta, omega, Direction::Forward, limits, on_sweep),
    }
}

/// [`contraction_solve`] that also returns the sup-norm change of every
/// sweep.
pub fn contraction_solve_traced(
    eta: &PeriodicGrid,
    lam: Coef,
    omega: f64,
    mode: Mode,
    limits: &FixedPoint,
) -> Result<(PeriodicGrid, Vec<f64>)> {
    let mut changes = Vec::new();
    let xi = contraction_inner(eta, lam, omega, mode, limits, &mut |c| changes.push(c))?;
    Ok((xi, changes))
}

/// Writes a grid as text: header `N omega`, then one row per `θ_i` with
/// the angle followed by every component.
pub fn write_grid<W: std::io::Write>(g: &PeriodicGrid, omega: f64, mut out: W) -> Result<()> {
    writeln!(out, "{} {:.17e}", g.n, omega)?;
    for i in 0..g.n {
        let mut row = format!("{:.17e}", g.theta(i));
        for c in 0..g.dim {
            row.push_str(&format!(" {:.17e}", g.get(i, c)));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Reads a grid written by [`write_grid`]; returns it with its `ω`.
pub fn read_grid<R: std::io::BufRead>(input: R) -> Result<(PeriodicGrid, f64)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::parse("grid header", "empty input"))??;
    let mut h = header.split_whitespace();
    let n: usize = h
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse("grid header", format!("bad N in {header:?}")))?;
    let omega: f64 = h
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse("grid header", format!("bad omega in {header:?}")))?;
    if n == 0 {
        return Err(Error::parse("grid header", "N must be positive"));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse("grid rows", format!("expected {n} rows, found {i}")))??;
        let vals = line
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse(format!("grid row {i}"), format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::parse("grid rows", "rows must have the same nonzero width"));
    }
    let mut g = PeriodicGrid::zeros(n, dim);
    for (i, r) in rows.iter().enumerate() {
        g.set(i, r);
    }
    Ok((g, omega))
}
