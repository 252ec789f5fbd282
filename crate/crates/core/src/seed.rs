//! Symmetric periodic orbits of the circular problem used as seeds.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};

use crate::dynamics::{
    jacobi_constant, propagate, propagate_with_stm, Mat4, ModelParams, State4,
};
use crate::error::{Error, Result};

/// `m:n` resonance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resonance {
    pub m: u32,
    pub n: u32,
}

impl fmt::Display for Resonance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.m, self.n)
    }
}

impl FromStr for Resonance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::parse("resonance", format!("expected m:n, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|e| Error::parse("resonance", e.to_string()))
        };
        Ok(Resonance {
            m: parse(a)?,
            n: parse(b)?,
        })
    }
}

/// A periodic orbit with real nontrivial multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbitSeed {
    /// Perpendicular x-axis crossing on the orbit.
    pub x0: State4,
    pub period: f64,
    pub monodromy: Mat4,
    pub lam_s: f64,
    pub lam_u: f64,
    /// Unit eigenvectors of the monodromy matrix at `x0`.
    pub v_s: State4,
    pub v_u: State4,
    pub resonance: Resonance,
}

impl PeriodicOrbitSeed {
    pub fn jacobi_constant(&self, params: &ModelParams) -> f64 {
        jacobi_constant(&self.x0, params)
    }

    /// Rotation number of the orbit seen by the stroboscopic map.
    pub fn rotation_number(&self, params: &ModelParams) -> f64 {
        2.0 * std::f64::consts::PI * params.period() / self.period
    }

    pub fn return_error(&self, params: &ModelParams) -> Result<f64> {
        let end = propagate(&self.x0, 0.0, self.period, &params.with_eps(0.0))?;
        Ok((end - self.x0).norm())
    }
}

/// Options for symmetric single shooting.
#[derive(Debug, Clone, Copy)]
pub struct ShootingOptions {
    pub max_iterations: usize,
    /// Convergence threshold on |(y, px)| at the half period.
    pub tolerance: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            max_iterations: 40,
            tolerance: 1e-13,
        }
    }
}

/// Refines a symmetric periodic orbit of the circular problem at fixed period.
///
/// The guess must lie on the x-axis with `px = 0`; `x0` and `py0` are
/// corrected until the orbit crosses the axis perpendicularly again at
/// half the period.
pub fn refine_periodic_orbit(
    guess: &State4,
    period: f64,
    resonance: Resonance,
    params: &ModelParams,
    opts: &ShootingOptions,
) -> Result<PeriodicOrbitSeed> {
    if guess[1] != 0.0 || guess[2] != 0.0 {
        return Err(Error::InvalidInput(
            "seed guess must have y = 0 and px = 0".into(),
        ));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidInput(format!("period {period} must be positive")));
    }
    let circ = params.with_eps(0.0);
    let half = 0.5 * period;
    let mut x0 = guess[0];
    let mut py0 = guess[3];
    let mut converged = false;
    let mut last = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let s0 = State4::new(x0, 0.0, 0.0, py0);
        let (s, phi) = propagate_with_stm(&s0, 0.0, half, &circ)?;
        let g = Vector2::new(s[1], s[2]);
        last = g.amax();
        if last <= opts.tolerance {
            converged = true;
            break;
        }
        let jac = Matrix2::new(phi[(1, 0)], phi[(1, 3)], phi[(2, 0)], phi[(2, 3)]);
        let step = jac.lu().solve(&(-g)).ok_or_else(|| Error::Continuation {
            parameter: "period",
            value: period,
            reason: "singular shooting Jacobian".into(),
        })?;
        x0 += step[0];
        py0 += step[1];
    }
    if !converged {
        return Err(Error::NotConverged {
            steps: opts.max_iterations,
            last,
        });
    }
    let x0 = State4::new(x0, 0.0, 0.0, py0);
    let (_, monodromy) = propagate_with_stm(&x0, 0.0, period, &circ)?;
    let (lam_s, lam_u, v_s, v_u) = hyperbolic_pair(&monodromy)?;
    Ok(PeriodicOrbitSeed {
        x0,
        period,
        monodromy,
        lam_s,
        lam_u,
        v_s,
        v_u,
        resonance,
    })
}

/// Refines a symmetric periodic orbit at a fixed axis crossing `x0`,
/// correcting `py0` and the period instead. Better conditioned than the
/// fixed-period variant when starting from two-body guesses.
pub fn refine_at_crossing(
    guess: &State4,
    period_guess: f64,
    resonance: Resonance,
    params: &ModelParams,
    opts: &ShootingOptions,
) -> Result<PeriodicOrbitSeed> {
    let circ = params.with_eps(0.0);
    let x0 = guess[0];
    let mut py0 = guess[3];
    let mut half = 0.5 * period_guess;
    let mut last = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let s0 = State4::new(x0, 0.0, 0.0, py0);
        let (s, phi) = propagate_with_stm(&s0, 0.0, half, &circ)?;
        let g = Vector2::new(s[1], s[2]);
        last = g.amax();
        if last <= opts.tolerance {
            return refine_periodic_orbit(&s0, 2.0 * half, resonance, params, opts);
        }
        let f = crate::dynamics::pcrtbp_field(&s, &circ)?;
        let jac = Matrix2::new(phi[(1, 3)], f[1], phi[(2, 3)], f[2]);
        let step = jac.lu().solve(&(-g)).ok_or_else(|| Error::Continuation {
            parameter: "x0",
            value: x0,
            reason: "singular shooting Jacobian".into(),
        })?;
        py0 += step[0];
        half += step[1];
    }
    Err(Error::NotConverged {
        steps: opts.max_iterations,
        last,
    })
}

/// Nontrivial multipliers and eigenvectors of a symplectic monodromy matrix
/// whose other two eigenvalues form the unit pair of an autonomous flow.
///
/// The trace of a 4×4 symplectic matrix with spectrum `{1, 1, λ, 1/λ}` is
/// `2 + λ + 1/λ`, which isolates `λ` without resolving the defective unit
/// block. Eigenvectors come from the null space of `M - λI`.
pub fn hyperbolic_pair(m: &Mat4) -> Result<(f64, f64, State4, State4)> {
    let q = m.trace() - 2.0;
    if q.abs() <= 2.0 {
        return Err(Error::NotWhiskered {
            detail: format!("lambda + 1/lambda = {q} gives multipliers on the unit circle"),
        });
    }
    let disc = (q * q - 4.0).sqrt();
    let (lam_u, lam_s) = if q > 0.0 {
        (0.5 * (q + disc), 0.5 * (q - disc))
    } else {
        (0.5 * (q - disc), 0.5 * (q + disc))
    };
    let v_u = null_vector(m, lam_u);
    let v_s = null_vector(m, lam_s);
    Ok((lam_s, lam_u, v_s, v_u))
}

fn null_vector(m: &Mat4, lam: f64) -> State4 {
    let a = m - Mat4::identity() * lam;
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v: State4 = v_t.row(idx).transpose();
    // fix the sign so the largest component is positive
    let imax = v.iamax();
    if v[imax] < 0.0 {
        -v
    } else {
        v
    }
}

/// Kepler-ellipse guess for an `m:n` exterior or interior resonance crossing
/// the x-axis at periapsis (`side = -1` puts it opposite m2).
pub fn kepler_guess(resonance: Resonance, eccentricity: f64, side: f64) -> (State4, f64) {
    let ratio = resonance.n as f64 / resonance.m as f64;
    let a = ratio.powf(2.0 / 3.0);
    let r = a * (1.0 - eccentricity);
    let v = ((1.0 + eccentricity) / (a * (1.0 - eccentricity))).sqrt();
    let period = 2.0 * std::f64::consts::PI * resonance.n as f64;
    (State4::new(side * r, 0.0, 0.0, side * v), period)
}

/// Traces a family of symmetric orbits by stepping the period, predicting
/// each guess by linear extrapolation from the last two solutions.
pub fn trace_family(
    start: &PeriodicOrbitSeed,
    periods: &[f64],
    params: &ModelParams,
    opts: &ShootingOptions,
) -> Vec<Result<PeriodicOrbitSeed>> {
    let mut known: Vec<(f64, State4)> = vec![(start.period, start.x0)];
    let mut out = Vec::with_capacity(periods.len());
    for &p in periods {
        let guess = match known.as_slice() {
            [.., (t0, x0), (t1, x1)] => x1 + (x1 - x0) * ((p - t1) / (t1 - t0)),
            [(_, x)] => *x,
            [] => unreachable!(),
        };
        let guess = State4::new(guess[0], 0.0, 0.0, guess[3]);
        let r = refine_periodic_orbit(&guess, p, start.resonance, params, opts);
        if let Ok(o) = &r {
            known.push((o.period, o.x0));
        }
        out.push(r);
    }
    out
}

/// Minimum distance to m2 along the orbit, sampled.
pub fn min_distance_to_m2(seed: &PeriodicOrbitSeed, samples: usize, params: &ModelParams) -> Result<f64> {
    crate::dynamics::min_distance_to_m2(&seed.x0, 0.0, seed.period, samples, &params.with_eps(0.0))
}

/// Orbit state at time `t` along the seed (circular problem).
pub fn orbit_point(seed: &PeriodicOrbitSeed, t: f64, params: &ModelParams) -> Result<State4> {
    propagate(&seed.x0, 0.0, t, &params.with_eps(0.0))
}

fn write_row(out: &mut impl Write, key: &str, vals: &[f64]) -> std::io::Result<()> {
    write!(out, "{key}")?;
    for v in vals {
        write!(out, " {v:.17e}")?;
    }
    writeln!(out)
}

/// Writes a seed file: one `key values...` line each for the resonance,
/// `x0`, the period, the multipliers, the eigenvectors and the monodromy
/// matrix (row-major).
pub fn write_seed<W: Write>(seed: &PeriodicOrbitSeed, mut out: W) -> Result<()> {
    writeln!(out, "resonance {}", seed.resonance)?;
    write_row(&mut out, "x0", seed.x0.as_slice())?;
    write_row(&mut out, "period", &[seed.period])?;
    write_row(&mut out, "multipliers", &[seed.lam_s, seed.lam_u])?;
    write_row(&mut out, "v_s", seed.v_s.as_slice())?;
    write_row(&mut out, "v_u", seed.v_u.as_slice())?;
    let rows: Vec<f64> = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| seed.monodromy[(r, c)]).collect();
    write_row(&mut out, "monodromy", &rows)?;
    Ok(())
}

pub fn read_seed<R: BufRead>(input: R) -> Result<PeriodicOrbitSeed> {
    let mut fields: HashMap<String, String> = HashMap::new();
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        fields.insert(k.to_string(), v.trim().to_string());
    }
    let get = |key: &str| fields.get(key).ok_or_else(|| Error::parse("seed file", format!("missing {key}")));
    let nums = |key: &str, len: usize| -> Result<Vec<f64>> {
        let v = get(key)?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse("seed file", format!("{key}: {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != len {
            return Err(Error::parse("seed file", format!("{key} needs {len} values, found {}", v.len())));
        }
        Ok(v)
    };
    let mult = nums("multipliers", 2)?;
    Ok(PeriodicOrbitSeed {
        x0: State4::from_column_slice(&nums("x0", 4)?),
        period: nums("period", 1)?[0],
        monodromy: Mat4::from_row_slice(&nums("monodromy", 16)?),
        lam_s: mult[0],
        lam_u: mult[1],
        v_s: State4::from_column_slice(&nums("v_s", 4)?),
        v_u: State4::from_column_slice(&nums("v_u", 4)?),
        resonance: get("resonance")?.parse()?,
    })
}
