//! Families of invariant circles: continuation in the eccentricity at fixed
//! rotation number, and in the rotation number at fixed eccentricity.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::torus::{
    compute_errors, evaluate_map, errors_from, make_lambda_constant, quasi_newton, shrink_grid, write_torus, SolverOptions,
    SolverReport, TorusSolution, CENTER,
};

/// One converged member of a family.
#[derive(Debug, Clone)]
pub struct Member {
    pub solution: TorusSolution,
    /// Step that produced this member (0 for the start).
    pub delta: f64,
    pub report: SolverReport,
}

impl Member {
    pub fn omega(&self) -> f64 {
        self.solution.omega
    }

    pub fn eps(&self) -> f64 {
        self.solution.eps()
    }
}

/// A trial step and whether the solver accepted it.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub from: f64,
    pub delta: f64,
    pub converged: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ContinuationRun {
    pub members: Vec<Member>,
    pub attempts: Vec<Attempt>,
    /// Parameter intervals where every retry diverged.
    pub gaps: Vec<(f64, f64)>,
    /// Why the run stopped early, if it did.
    pub end: Option<String>,
}

impl ContinuationRun {
    pub fn last(&self) -> Option<&TorusSolution> {
        self.members.last().map(|m| &m.solution)
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.members.iter().map(Member::omega).collect()
    }

    pub fn omega_range(&self) -> Option<(f64, f64)> {
        let w = self.omegas();
        if w.is_empty() {
            return None;
        }
        Some((
            w.iter().copied().fold(f64::INFINITY, f64::min),
            w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ))
    }
}

/// Normalizes `Λ` to constants so the next step starts from a predictor
/// with constant twist.
fn normalized(sol: &TorusSolution) -> Result<TorusSolution> {
    let (_, data) = compute_errors(sol)?;
    make_lambda_constant(sol, &data)
}

/// Continues a converged `ε = 0` solution to `eps_f` in `n_steps` equal
/// increments, using each solution as the guess for the next system.
pub fn continue_eps(
    seed: &TorusSolution,
    eps_f: f64,
    n_steps: usize,
    opts: &SolverOptions,
) -> Result<ContinuationRun> {
    if (n_steps == 0 && eps_f != 0.0) || !eps_f.is_finite() || !(0.0..1.0).contains(&eps_f) {
        return Err(Error::InvalidInput(format!(
            "eps_f = {eps_f} with {n_steps} steps"
        )));
    }
    // Torus files keep only the averages of Λ, so every member is stored
    // with constant Λ, the start included.
    let mut cur = normalized(seed)?;
    let mut run = ContinuationRun::default();
    run.members.push(Member {
        solution: cur.clone(),
        delta: 0.0,
        report: SolverReport::default(),
    });
    if eps_f == 0.0 {
        return Ok(run);
    }
    let step = eps_f / n_steps as f64;
    for i in 1..=n_steps {
        let eps = eps_f * i as f64 / n_steps as f64;
        let mut guess = cur.clone();
        guess.params = cur.params.with_eps(eps);
        let from = cur.eps();
        match quasi_newton(&guess, opts) {
            Ok((sol, report)) => {
                run.attempts.push(Attempt {
                    from,
                    delta: step,
                    converged: true,
                    reason: None,
                });
                cur = normalized(&sol)?;
                run.members.push(Member {
                    solution: cur.clone(),
                    delta: step,
                    report,
                });
            }
            Err(e) => {
                return Err(Error::Continuation {
                    parameter: "eps",
                    value: from,
                    reason: format!("step to {eps} failed: {e}"),
                })
            }
        }
    }
    Ok(run)
}

/// Step-size policy for the rotation-number continuation. The trial step
/// is the largest of the last `window` accepted steps, halved after every
/// failure; too many halvings end the branch.
#[derive(Debug, Clone)]
pub struct StepPolicy {
    initial: f64,
    window: usize,
    max_halvings: usize,
    accepted: VecDeque<f64>,
    halvings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Advance,
    Retry,
    End,
}

impl StepPolicy {
    pub fn new(initial: f64, window: usize, max_halvings: usize) -> Self {
        StepPolicy {
            initial: initial.abs(),
            window: window.max(1),
            max_halvings,
            accepted: VecDeque::new(),
            halvings: 0,
        }
    }

    /// Largest recent accepted step, or the initial step before any.
    pub fn phi(&self) -> f64 {
        if self.accepted.is_empty() {
            self.initial
        } else {
            self.accepted.iter().copied().fold(0.0, f64::max)
        }
    }

    /// Magnitude of the next trial step.
    pub fn trial(&self) -> f64 {
        self.phi() / 2f64.powi(self.halvings as i32)
    }

    pub fn record(&mut self, converged: bool) -> Verdict {
        if converged {
            let t = self.trial();
            self.accepted.push_back(t);
            while self.accepted.len() > self.window {
                self.accepted.pop_front();
            }
            self.halvings = 0;
            Verdict::Advance
        } else if self.halvings >= self.max_halvings {
            Verdict::End
        } else {
            self.halvings += 1;
            Verdict::Retry
        }
    }

    /// Trial steps the policy produces for a sequence of verdicts.
    pub fn replay(initial: f64, window: usize, max_halvings: usize, verdicts: &[bool]) -> Vec<f64> {
        let mut p = StepPolicy::new(initial, window, max_halvings);
        let mut out = Vec::with_capacity(verdicts.len());
        for &v in verdicts {
            out.push(p.trial());
            if p.record(v) == Verdict::End {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OmegaSettings {
    /// Signed initial step; the sign picks the direction.
    pub initial_step: f64,
    pub window: usize,
    pub max_halvings: usize,
    /// Stop once ω reaches or passes this value.
    pub target: Option<f64>,
    /// Stop after this many accepted steps.
    pub max_members: Option<usize>,
    /// Smallest grid accepted members are shrunk to (`None` keeps `N`).
    pub min_n: Option<usize>,
    pub solver: SolverOptions,
}

impl Default for OmegaSettings {
    fn default() -> Self {
        OmegaSettings {
            initial_step: 1e-4,
            window: 5,
            max_halvings: 8,
            target: None,
            max_members: None,
            min_n: Some(1024),
            solver: SolverOptions::default(),
        }
    }
}

/// Guess for the circle at `ω + Δω`: `K + (Δω/T̄)·v_c`.
pub fn predict(sol: &TorusSolution, delta: f64) -> Result<TorusSolution> {
    let t = sol.t_mean();
    if t == 0.0 || !t.is_finite() {
        return Err(Error::Continuation {
            parameter: "omega",
            value: sol.omega,
            reason: "average twist vanishes".into(),
        });
    }
    let mut out = sol.clone();
    if delta != 0.0 {
        out.k = sol.k.add(&sol.bundle(CENTER).scale(delta / t));
    }
    out.omega = sol.omega + delta;
    Ok(out)
}

/// Invariance error `sup|F(K) - K(·+ω)|` of a guess.
pub fn invariance_error(sol: &TorusSolution) -> Result<f64> {
    let data = evaluate_map(&sol.k, &sol.params)?;
    Ok(errors_from(sol, &data)?.e_sup())
}

/// Predicts, solves and normalizes one member, then shrinks its grid.
fn omega_step(cur: &TorusSolution, delta: f64, settings: &OmegaSettings) -> Result<(TorusSolution, SolverReport)> {
    let (sol, report) = quasi_newton(&predict(cur, delta)?, &settings.solver)?;
    let sol = normalized(&sol)?;
    let sol = match settings.min_n {
        Some(m) if sol.n() > m => shrink_grid(&sol, &settings.solver, m)?,
        _ => sol,
    };
    Ok((sol, report))
}

/// Continues a converged solution with constant `Λ` in the rotation number.
pub fn continue_omega(start: &TorusSolution, settings: &OmegaSettings) -> Result<ContinuationRun> {
    continue_omega_with(start, settings, &mut |_| Ok(()))
}

/// [`continue_omega`] that hands every accepted member (the start
/// included) to `on_member` as soon as it is known.
pub fn continue_omega_with(
    start: &TorusSolution,
    settings: &OmegaSettings,
    on_member: &mut dyn FnMut(&Member) -> Result<()>,
) -> Result<ContinuationRun> {
    if settings.initial_step == 0.0 || !settings.initial_step.is_finite() {
        return Err(Error::InvalidInput("initial ω step must be nonzero".into()));
    }
    let dir = settings.initial_step.signum();
    let mut policy = StepPolicy::new(settings.initial_step, settings.window, settings.max_halvings);
    let mut run = ContinuationRun::default();
    let mut cur = if start.has_constant_lambda() {
        start.clone()
    } else {
        normalized(start)?
    };
    if let Some(m) = settings.min_n.filter(|&m| cur.n() > m) {
        cur = shrink_grid(&cur, &settings.solver, m)?;
    }
    run.members.push(Member {
        solution: cur.clone(),
        delta: 0.0,
        report: SolverReport::default(),
    });
    on_member(&run.members[0])?;
    let reached = |w: f64| match settings.target {
        Some(t) => (w - t) * dir >= 0.0,
        None => false,
    };
    let mut largest_failed = 0.0f64;
    loop {
        if reached(cur.omega) {
            break;
        }
        if let Some(m) = settings.max_members {
            if run.members.len() > m {
                break;
            }
        }
        let delta = dir * policy.trial();
        let mut outcome = omega_step(&cur, delta, settings);
        // Small-divisor noise builds up in the bundles over many members.
        // Retry on nearby grids with the bundles lowpassed to a quarter of it.
        let n = cur.n();
        for m in [2 * n, n, n / 2] {
            if outcome.is_ok() {
                break;
            }
            if m > settings.solver.max_n || m < 64 {
                continue;
            }
            let mut clean = cur.resample(m);
            clean.p = clean.p.lowpass(m / 4);
            outcome = omega_step(&clean, delta, settings);
        }
        let converged = outcome.is_ok();
        run.attempts.push(Attempt {
            from: cur.omega,
            delta,
            converged,
            reason: outcome.as_ref().err().map(|e| e.to_string()),
        });
        match outcome {
            Ok((sol, report)) => {
                policy.record(true);
                largest_failed = 0.0;
                cur = sol;
                run.members.push(Member {
                    solution: cur.clone(),
                    delta,
                    report,
                });
                on_member(run.members.last().expect("just pushed"))?;
            }
            Err(_) => {
                largest_failed = largest_failed.max(delta.abs());
                if policy.record(false) == Verdict::End {
                    let (a, b) = (cur.omega, cur.omega + dir * largest_failed);
                    run.gaps.push((a.min(b), a.max(b)));
                    run.end = Some(format!(
                        "no convergence within {} halvings from ω = {}",
                        settings.max_halvings, cur.omega
                    ));
                    break;
                }
            }
        }
    }
    Ok(run)
}

/// Merges runs from several seeds into one list ordered by ω, dropping
/// duplicates closer than `tol`.
pub fn merge_runs(runs: &[ContinuationRun], tol: f64) -> Vec<Member> {
    let mut all: Vec<Member> = runs.iter().flat_map(|r| r.members.iter().cloned()).collect();
    all.sort_by(|a, b| a.omega().total_cmp(&b.omega()));
    all.dedup_by(|b, a| (a.omega() - b.omega()).abs() <= tol);
    all
}

/// Writes members one at a time: a torus file each and an index
/// `manifest.txt` with `file omega eps N e e_red steps` rows, rewritten
/// after every member so an interrupted run leaves a consistent index.
pub struct RunWriter {
    dir: PathBuf,
    prefix: String,
    index: String,
    count: usize,
}

impl RunWriter {
    pub fn new(dir: &Path, prefix: &str) -> Result<RunWriter> {
        fs::create_dir_all(dir)?;
        let w = RunWriter {
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
            index: String::from("# file omega eps N e e_red steps\n"),
            count: 0,
        };
        fs::write(w.dir.join("manifest.txt"), &w.index)?;
        Ok(w)
    }

    pub fn push(&mut self, m: &Member) -> Result<()> {
        let name = format!("{}_{:04}.torus", self.prefix, self.count);
        let mut f = BufWriter::new(fs::File::create(self.dir.join(&name))?);
        write_torus(&m.solution, &mut f)?;
        f.flush()?;
        let (e, er) = m.report.final_errors();
        let _ = writeln!(
            self.index,
            "{name} {:.17e} {:.17e} {} {:.3e} {:.3e} {}",
            m.omega(),
            m.eps(),
            m.solution.n(),
            e,
            er,
            m.report.steps.len().saturating_sub(1)
        );
        fs::write(self.dir.join("manifest.txt"), &self.index)?;
        self.count += 1;
        Ok(())
    }
}

/// Writes one torus file per member plus the index `manifest.txt`.
pub fn write_run(members: &[Member], dir: &Path, prefix: &str) -> Result<()> {
    let mut w = RunWriter::new(dir, prefix)?;
    for m in members {
        w.push(m)?;
    }
    Ok(())
}

/// Reads the `(file, omega)` pairs of a manifest written by [`RunWriter`].
pub fn read_manifest<R: std::io::BufRead>(input: R) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let (Some(file), Some(w)) = (t.next(), t.next()) else {
            return Err(Error::parse("manifest", format!("short row {line:?}")));
        };
        let w = w
            .parse::<f64>()
            .map_err(|e| Error::parse("manifest", format!("{w:?}: {e}")))?;
        out.push((file.to_string(), w));
    }
    Ok(out)
}
