//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion and only panics if a check cannot be evaluated at all.
//!
//! Environment:
//! - `WHISKERS_FAMILY_DIR`: directory of a downward ω-run (manifest.txt plus
//!   torus files) to verify instead of recomputing the long branch.
//! - `WHISKERS_SLOW`: run the large-ε continuation.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rustfft::num_complex::Complex64;
use whiskers::continuation::*;
use whiskers::dynamics::*;
use whiskers::grid::*;
use whiskers::jet::{jet_transport, StateJet};
use whiskers::manifold::*;
use whiskers::seed::*;
use whiskers::torus::*;

const E_TOL: f64 = 1e-6;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Outcome {
    Outcome { pass: Some(pass), detail }
}

fn skip(detail: &str) -> Outcome {
    Outcome { pass: None, detail: detail.into() }
}

fn report(id: usize, name: &str, out: whiskers::Result<Outcome>) -> Option<bool> {
    let (tag, detail, pass) = match out {
        Ok(Outcome { pass: Some(true), detail }) => ("PASS", detail, Some(true)),
        Ok(Outcome { pass: Some(false), detail }) => ("FAIL", detail, Some(false)),
        Ok(Outcome { pass: None, detail }) => ("SKIP", detail, None),
        Err(e) => ("FAIL", format!("error: {e}"), Some(false)),
    };
    // Written to the stdout handle directly so the lines survive the test
    // harness's output capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id:>2} {tag} {name}: {detail}");
    let _ = out.flush();
    pass
}

fn seed_orbit(params: &ModelParams) -> whiskers::Result<PeriodicOrbitSeed> {
    let w = 1.559620297f64;
    refine_periodic_orbit(
        &State4::new(1.033133, 0.0, 0.0, 1.054882),
        4.0 * PI * PI / w,
        Resonance { m: 3, n: 4 },
        params,
        &ShootingOptions::default(),
    )
}

fn normalized(sol: &TorusSolution) -> whiskers::Result<TorusSolution> {
    let (_, data) = compute_errors(sol)?;
    make_lambda_constant(sol, &data)
}

struct Fixture {
    torus: TorusSolution,
    unstable: Option<ManifoldSeries>,
    stable: Option<ManifoldSeries>,
    d_unstable: Option<f64>,
    d_stable: Option<f64>,
}

fn c1_torus(slot: &mut Option<TorusSolution>) -> whiskers::Result<Outcome> {
    let start = Instant::now();
    let params = ModelParams::jupiter_europa(0.0);
    let orbit = seed_orbit(&params)?;
    let init = init_from_periodic_orbit(&orbit, &params, 1024, &FixedPoint::default())?;
    let run = continue_eps(&init, 0.0094, 10, &SolverOptions::default())?;
    let secs = start.elapsed().as_secs_f64();
    let sol = run.last().expect("start member").clone();
    let (errs, _) = compute_errors(&sol)?;
    let (e, e_red) = (errs.e_sup(), errs.e_red_sup());
    let ok = sol.eps() == 0.0094 && e <= 1e-7 && e_red <= 1e-7 && secs <= 120.0;
    let detail = format!(
        "mu={:.6e} eps={} N={} |E|={e:.2e} |E_red|={e_red:.2e} omega={:.9} runtime={secs:.1}s (limit 120 s)",
        sol.params.mu,
        sol.eps(),
        sol.n(),
        sol.omega
    );
    *slot = Some(sol);
    Ok(verdict(ok, detail))
}

/// Re-evaluates the member with the smallest ω in a stored run; returns
/// `(ω, |E|, |E_red|, N)`.
fn verify_family(dir: &Path, base: &ModelParams) -> whiskers::Result<(f64, f64, f64, usize)> {
    let manifest = read_manifest(BufReader::new(File::open(dir.join("manifest.txt"))?))?;
    let (file, _) = manifest
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| whiskers::Error::InvalidInput("empty manifest".into()))?;
    let sol = read_torus(BufReader::new(File::open(dir.join(file))?), base)?;
    let (errs, _) = compute_errors(&sol)?;
    Ok((sol.omega, errs.e_sup(), errs.e_red_sup(), sol.n()))
}

fn c2_family(fix: &TorusSolution) -> whiskers::Result<Outcome> {
    let (lo_goal, hi_goal, tol) = (1.5363, 1.5672, 0.002);
    let start = normalized(fix)?;
    let up = continue_omega(
        &start,
        &OmegaSettings {
            initial_step: 5e-4,
            target: Some(hi_goal - tol),
            max_members: Some(60),
            ..OmegaSettings::default()
        },
    )?;
    let hi = up.omega_range().map_or(fix.omega, |r| r.1);
    let (lo, how) = match std::env::var_os("WHISKERS_FAMILY_DIR") {
        Some(dir) => {
            let (w, e, e_red, n) = verify_family(&PathBuf::from(dir), &fix.params)?;
            if e <= 1e-7 {
                (w, format!("stored run, lowest member N={n} |E|={e:.1e} |E_red|={e_red:.1e}"))
            } else {
                (fix.omega, format!("stored lowest member at {w:.6} is not invariant, |E|={e:.1e}"))
            }
        }
        None => {
            // The lower branch needs N = 32768 below ω ≈ 1.5555 and takes
            // hours; without a stored run only its first members are computed.
            let down = continue_omega(
                &start,
                &OmegaSettings {
                    initial_step: -5e-4,
                    max_members: Some(4),
                    ..OmegaSettings::default()
                },
            )?;
            let w = down.omega_range().map_or(fix.omega, |r| r.0);
            (w, "live run limited to 4 members (set WHISKERS_FAMILY_DIR for a stored run)".into())
        }
    };
    let ok = lo <= lo_goal + tol && hi >= hi_goal - tol;
    Ok(verdict(
        ok,
        format!(
            "omega span [{lo:.6}, {hi:.6}], need <= {:.4} and >= {:.4}; upper {} members; lower {how}",
            lo_goal + tol,
            hi_goal - tol,
            up.members.len()
        ),
    ))
}

/// Quasi-Newton run on the fixture displaced by `1e-6` along `v_s`.
fn perturbed_run(fix: &TorusSolution) -> whiskers::Result<SolverReport> {
    let sol = normalized(fix)?;
    let vs = sol.bundle(STABLE);
    let mut start = sol.clone();
    start.k = sol.k.add(&vs.scale(1e-6 / vs.sup_norm()));
    let opts = SolverOptions {
        tol: 1e-12,
        max_steps: 8,
        filter_steps: 0,
        finalize: false,
        ..SolverOptions::default()
    };
    let (_, rep) = quasi_newton_traced(&start, &opts);
    Ok(rep)
}

fn c3_quadratic(rep: &SolverReport) -> whiskers::Result<Outcome> {
    let e: Vec<f64> = rep.steps.iter().map(StepRecord::combined).collect();
    let quadratic = e.windows(2).take_while(|w| w[1] <= 10.0 * w[0] * w[0]).count();
    Ok(verdict(
        quadratic >= 2,
        format!(
            "combined errors {:?}; {quadratic} leading steps with e_(n+1) <= 10 e_n^2 (need 2)",
            e.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
    ))
}

fn c4_bundles(fix: &TorusSolution) -> whiskers::Result<Outcome> {
    let (ps, pu, pc) = fix.pairings();
    let (_, data) = compute_errors(fix)?;
    let flat = make_lambda_constant(fix, &data)?;
    let (_, data) = compute_errors(&flat)?;
    let (vt, vs, vu) = lambda_variation(&flat, &data)?;
    let ok = ps <= 1e-8 && pu <= 1e-8 && pc <= 1e-8 && vt <= 1e-9 && vs <= 1e-9 && vu <= 1e-9;
    Ok(verdict(
        ok,
        format!(
            "|W(DK,vs)|={ps:.1e} |W(DK,vu)|={pu:.1e} |W(DK,vc)-1|={pc:.1e}; variation T={vt:.1e} lam_s={vs:.1e} lam_u={vu:.1e}"
        ),
    ))
}

fn c5_ecc(rep: &SolverReport) -> whiskers::Result<Outcome> {
    let ecc: Vec<f64> = rep.steps.iter().map(|s| s.ecc_mean.abs()).collect();
    let last = *ecc.last().unwrap_or(&f64::NAN);
    let first = *ecc.first().unwrap_or(&f64::NAN);
    Ok(verdict(
        last <= 1e-7 && last < first,
        format!(
            "|mean E_CC| per step {:?}",
            ecc.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>()
        ),
    ))
}

fn slope_of(series: &ManifoldSeries, degree: usize, floor: f64) -> whiskers::Result<Option<f64>> {
    let t = series.truncated(degree);
    let mut samples = Vec::new();
    for j in 0..14 {
        let s = 0.05 * 1.4f64.powi(j);
        samples.push((s, invariance_residual(&t, s)?));
    }
    Ok(residual_slope(&samples, floor))
}

fn c6_orders(fx: &mut Fixture) -> whiskers::Result<Outcome> {
    let flat = normalized(&fx.torus)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for st in [Stability::Unstable, Stability::Stable] {
        let (series, rep) = order_by_order(&flat, st, 5, 1e-2, &OrderOptions::default())?;
        let worst = rep.sub_order.iter().map(|p| p.1).fold(0.0, f64::max);
        ok &= worst <= 1e-9 && rep.sub_order.len() == 4;
        lines.push(format!("{st:?} sub-order max {worst:.1e}"));
        if st == Stability::Unstable {
            let floor = invariance_residual(&series, 0.0)?;
            for d in [1usize, 3, 5] {
                let slope = slope_of(&series, d, floor)?;
                ok &= matches!(slope, Some(m) if (m - (d as f64 + 1.0)).abs() <= 0.3);
                lines.push(format!(
                    "slope d={d} {}",
                    slope.map_or("n/a".into(), |m| format!("{m:.3} (want {})", d + 1))
                ));
            }
            fx.unstable = Some(series);
        } else {
            fx.stable = Some(series);
        }
    }
    Ok(verdict(ok, lines.join("; ")))
}

fn c7_domain(fx: &mut Fixture) -> whiskers::Result<Outcome> {
    let mut lines = Vec::new();
    let mut ok = true;
    for series in [fx.unstable.as_mut(), fx.stable.as_mut()].into_iter().flatten() {
        let d1 = fundamental_domain(&series.truncated(1), E_TOL, 10.0)?.domain;
        let d5 = fundamental_domain(series, E_TOL, 10.0)?.domain;
        series.domain = d5;
        ok &= d5 / d1 >= 10.0;
        lines.push(format!("{:?} D1={d1:.4} D5={d5:.4} ratio {:.1}", series.stability, d5 / d1));
    }
    fx.d_unstable = fx.unstable.as_ref().map(|s| s.domain);
    fx.d_stable = fx.stable.as_ref().map(|s| s.domain);
    if lines.len() < 2 {
        return Ok(verdict(false, "manifold series unavailable".into()));
    }
    Ok(verdict(ok, lines.join("; ")))
}

/// Closest approach to m2 along `steps` maps from `x` (direct propagation).
fn min_r2_along(x: &State4, steps: usize, params: &ModelParams) -> whiskers::Result<f64> {
    let t0 = params.section_time();
    let period = params.period();
    let mut cur = *x;
    let mut best = f64::INFINITY;
    for k in 0..steps {
        let a = t0 + k as f64 * period;
        best = best.min(whiskers::dynamics::min_distance_to_m2(&cur, a, a + period, 32, params)?);
        cur = propagate(&cur, a, a + period, params)?;
    }
    Ok(best)
}

fn c8_regularization(fx: &Fixture) -> whiskers::Result<Outcome> {
    let Some(series) = fx.unstable.as_ref() else {
        return Ok(verdict(false, "unstable series unavailable".into()));
    };
    let domain = fx.d_unstable.unwrap_or(series.domain);
    let (l, k_max) = (5usize, 3usize);
    let direct = globalize_mesh(
        series,
        domain,
        l,
        k_max,
        &MeshOptions { propagation: Propagation::Direct, ..MeshOptions::default() },
    )?;
    let regular = globalize_mesh(
        series,
        domain,
        l,
        k_max,
        &MeshOptions { propagation: Propagation::Regularized, ..MeshOptions::default() },
    )?;
    let n = series.n();
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for j in 0..l {
        let s = direct.point(0, 0, j).s;
        // A layer is compared only when every trajectory in it stays clear
        // of m2, since translating a layer mixes all of its angles.
        let clear = (0..n)
            .map(|i| min_r2_along(&series.eval_at(i, s), k_max, &series.params))
            .collect::<whiskers::Result<Vec<f64>>>()
            .map(|v| v.into_iter().fold(f64::INFINITY, f64::min))
            .unwrap_or(0.0);
        if clear <= 0.01 {
            continue;
        }
        for k in 0..=k_max {
            for i in 0..n {
                let (a, b) = (direct.point(k, i, j), regular.point(k, i, j));
                if !(a.valid && b.valid) {
                    continue;
                }
                worst = worst.max((a.x - b.x).norm() / a.x.norm());
                compared += 1;
            }
        }
    }
    let p = &series.params;
    let kin = perturbation_kinematics(1.0, p)?;
    let close = State4::new((1.0 - p.mu) * kin.rho() + 5e-5, 0.0, 0.0, 3.0);
    let arc = propagate_regularized(&close, 1.0, 0.0, p)
        .and_then(|start| Ok((start, propagate_regularized(&start, 0.0, 2.0, p)?)))
        .and_then(|(start, end)| Ok((start, end, propagate_regularized(&end, 2.0, 0.0, p)?)));
    let (arc_ok, arc_note) = match arc {
        Ok((start, end, back)) => {
            let d = (back - start).amax();
            (end.iter().all(|v| v.is_finite()) && d < 1e-7, format!("arc through r2=5e-5 completes, round trip {d:.1e}"))
        }
        Err(e) => (false, format!("arc failed: {e}")),
    };
    Ok(verdict(
        compared > 0 && worst <= 1e-8 && arc_ok,
        format!("{compared} mesh points compared, max relative difference {worst:.1e}; {arc_note}"),
    ))
}

fn c9_symmetry(fx: &Fixture) -> whiskers::Result<Outcome> {
    let (Some(ws), Some(d_s)) = (fx.stable.as_ref(), fx.d_stable) else {
        return Ok(verdict(false, "stable series unavailable".into()));
    };
    let wu = symmetry_conjugate(ws)?;
    let back = symmetry_conjugate(&wu)?;
    let diff = ws.coefs.iter().zip(&back.coefs).map(|(a, b)| a.sub(b).max_abs()).fold(0.0, f64::max);
    // F(W^u(θ, s)) is M·F⁻¹(W^s(-θ, s)), the stable equation at the mapped
    // parameter λ_u·s, so the conjugate inherits the domain D_s/λ_u.
    let lam_u = 1.0 / ws.lam;
    let s = d_s / lam_u;
    let res = invariance_residual(&wu, s)?;
    Ok(verdict(
        res <= E_TOL && diff <= 1e-15,
        format!("unstable residual of M W^s(-theta, s) at s=D_s/lam_u={s:.3}: {res:.1e}; double conjugation difference {diff:.1e}"),
    ))
}

fn c10_oracles(fix: &TorusSolution) -> whiskers::Result<Outcome> {
    let n = 256;
    let omega = 2.0 * PI * (5f64.sqrt() - 1.0) / 2.0;
    let eta = PeriodicGrid::from_fn(n, 1, |t| vec![(3.0 * t).cos() + 0.4 * (7.0 * t).sin() - 0.2 * (12.0 * t).cos()]);
    let mut worst_contraction = 0.0f64;
    for (lam, mode) in [(0.5, Mode::Stable), (2.5, Mode::Unstable)] {
        let xi = contraction_solve(&eta, Coef::Const(lam), omega, mode, &FixedPoint::default())?;
        let mut spec = eta.spectrum();
        spec.map_modes(|k| Complex64::new(1.0, 0.0) / (lam - Complex64::from_polar(1.0, k as f64 * omega)));
        worst_contraction = worst_contraction.max(xi.sub(&spec.to_grid()).max_abs());
    }

    let (_, data) = compute_errors(fix)?;
    let v = fix.bundle(UNSTABLE);
    let mut worst_jet = 0.0f64;
    for i in (0..fix.n()).step_by(fix.n() / 8) {
        let jet = StateJet::new(vec![fix.k.state(i), v.state(i)]);
        let out = jet_transport(&jet, &fix.params)?;
        worst_jet = worst_jet.max((out.coefs[1] - data.df[i] * v.state(i)).amax());
    }

    let b = PeriodicGrid::from_fn(n, 1, |t| vec![(2.0 * t).sin() + 0.3 * (9.0 * t).cos() - 0.1 * (31.0 * t).sin()]);
    let (a, _) = cohomological_solve(&b, omega, &[0.0])?;
    let res = b.sub(&a.sub(&a.translate(omega))).max_abs();
    Ok(verdict(
        worst_contraction <= 1e-11 && worst_jet <= 1e-8 && res <= 1e-12,
        format!("contraction vs diagonal {worst_contraction:.1e}; jet vs DF {worst_jet:.1e}; cohomological residual {res:.1e}"),
    ))
}

fn c11_large_eps() -> whiskers::Result<Outcome> {
    if std::env::var_os("WHISKERS_SLOW").is_none() {
        return Ok(skip("slow; set WHISKERS_SLOW=1 to run"));
    }
    let start = Instant::now();
    let params = ModelParams::jupiter_europa(0.0);
    let orbit = seed_orbit(&params)?;
    let init = init_from_periodic_orbit(&orbit, &params, 1024, &FixedPoint::default())?;
    let steps = (0.206f64 / 0.0005).round() as usize;
    let run = continue_eps(&init, 0.206, steps, &SolverOptions::default());
    let secs = start.elapsed().as_secs_f64();
    Ok(match run {
        Ok(run) => verdict(
            secs <= 1800.0,
            format!("{} steps to eps={} in {secs:.0}s (limit 1800 s)", run.members.len() - 1, run.last().map_or(0.0, |s| s.eps())),
        ),
        Err(e) => verdict(false, format!("stopped after {secs:.0}s: {e}")),
    })
}

#[test]
fn acceptance() {
    // the harness has already printed "test acceptance ... " without a newline
    let _ = writeln!(std::io::stdout().lock());
    let mut torus = None;
    report(1, "torus convergence at eps=0.0094", c1_torus(&mut torus));
    let torus = torus.expect("criterion 1 produced no torus; later criteria need it");
    let mut fx = Fixture { torus, unstable: None, stable: None, d_unstable: None, d_stable: None };

    report(2, "omega-family span", c2_family(&fx.torus));
    let perturbed = perturbed_run(&fx.torus).map_err(|e| e.to_string());
    let from_run = |check: fn(&SolverReport) -> whiskers::Result<Outcome>| match &perturbed {
        Ok(rep) => check(rep),
        Err(msg) => Ok(verdict(false, format!("perturbed run failed: {msg}"))),
    };
    report(3, "quadratic convergence", from_run(c3_quadratic));
    report(4, "bundle geometry", c4_bundles(&fx.torus));
    report(5, "mean of E_CC", from_run(c5_ecc));
    report(6, "manifold order checks", c6_orders(&mut fx));
    report(7, "fundamental domain improvement", c7_domain(&mut fx));
    report(8, "regularization equivalence", c8_regularization(&fx));
    report(9, "symmetry shortcut", c9_symmetry(&fx));
    report(10, "oracle equivalences", c10_oracles(&fx.torus));
    report(11, "large-eps robustness", c11_large_eps());
}
