//! Pipeline configuration: `key = value` text files, overridden by flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use whiskers::continuation::OmegaSettings;
use whiskers::dynamics::{ModelParams, Propagation, MU_JUPITER_EUROPA};
use whiskers::manifold::{MeshOptions, OrderOptions, Stability};
use whiskers::seed::Resonance;
use whiskers::torus::SolverOptions;
use whiskers::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mu: f64,
    pub eps: f64,
    pub omega_p: f64,
    pub theta_p0: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub singularity_floor: f64,
    pub max_s_span: f64,

    pub resonance: Resonance,
    pub seed_x: f64,
    pub seed_py: f64,
    pub seed_period: f64,

    pub n: usize,
    pub eps_f: f64,
    pub n_steps_eps: usize,
    pub solver_tol: f64,
    pub max_steps: usize,
    pub filter_steps: usize,
    pub keep_fraction: f64,
    pub tail_threshold: f64,
    pub max_n: usize,
    pub finalize: bool,

    pub omega_step: f64,
    pub omega_target: Option<f64>,
    pub omega_members: Option<usize>,
    pub window: usize,
    pub max_halvings: usize,
    /// Smallest grid ω-members are shrunk to; `none` keeps their size.
    pub min_n: Option<usize>,

    pub stability: Stability,
    pub degree: usize,
    pub alpha: f64,
    pub e_tol: f64,
    pub s_max: f64,
    pub l: usize,
    pub k_max: usize,
    pub radius: f64,
    pub jump_factor: f64,
    pub propagation: Propagation,

    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let m = ModelParams::default();
        let s = SolverOptions::default();
        let w = OmegaSettings::default();
        PipelineConfig {
            mu: MU_JUPITER_EUROPA,
            eps: 0.0094,
            omega_p: m.omega_p,
            theta_p0: m.theta_p0,
            abs_tol: m.abs_tol,
            rel_tol: m.rel_tol,
            singularity_floor: m.singularity_floor,
            max_s_span: m.max_s_span,
            resonance: Resonance { m: 3, n: 4 },
            seed_x: 1.033133,
            seed_py: 1.054882,
            seed_period: 4.0 * std::f64::consts::PI.powi(2) / 1.559620297,
            n: 1024,
            eps_f: 0.0094,
            n_steps_eps: 10,
            solver_tol: s.tol,
            max_steps: s.max_steps,
            filter_steps: s.filter_steps,
            keep_fraction: s.keep_fraction,
            tail_threshold: s.tail_threshold,
            max_n: s.max_n,
            finalize: s.finalize,
            omega_step: w.initial_step,
            omega_target: None,
            omega_members: None,
            window: w.window,
            max_halvings: w.max_halvings,
            min_n: w.min_n,
            stability: Stability::Unstable,
            degree: 5,
            alpha: 1e-2,
            e_tol: 1e-6,
            s_max: 100.0,
            l: 101,
            k_max: 6,
            radius: 5.0,
            jump_factor: 10.0,
            propagation: Propagation::Auto,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::parse("config", format!("{key} = {value:?}: {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == "none" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn show<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

pub fn parse_propagation(value: &str) -> Result<Propagation> {
    match value {
        "auto" => Ok(Propagation::Auto),
        "direct" => Ok(Propagation::Direct),
        "regularized" => Ok(Propagation::Regularized),
        other => Err(bad("propagation", other, "expected auto, direct or regularized")),
    }
}

fn propagation_name(p: Propagation) -> &'static str {
    match p {
        Propagation::Auto => "auto",
        Propagation::Direct => "direct",
        Propagation::Regularized => "regularized",
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mu" => self.mu = num(key, v)?,
            "eps" => self.eps = num(key, v)?,
            "omega_p" => self.omega_p = num(key, v)?,
            "theta_p0" => self.theta_p0 = num(key, v)?,
            "abs_tol" => self.abs_tol = num(key, v)?,
            "rel_tol" => self.rel_tol = num(key, v)?,
            "singularity_floor" => self.singularity_floor = num(key, v)?,
            "max_s_span" => self.max_s_span = num(key, v)?,
            "resonance" => self.resonance = v.parse()?,
            "seed_x" => self.seed_x = num(key, v)?,
            "seed_py" => self.seed_py = num(key, v)?,
            "seed_period" => self.seed_period = num(key, v)?,
            "n" => self.n = num(key, v)?,
            "eps_f" => self.eps_f = num(key, v)?,
            "n_steps_eps" => self.n_steps_eps = num(key, v)?,
            "solver_tol" => self.solver_tol = num(key, v)?,
            "max_steps" => self.max_steps = num(key, v)?,
            "filter_steps" => self.filter_steps = num(key, v)?,
            "keep_fraction" => self.keep_fraction = num(key, v)?,
            "tail_threshold" => self.tail_threshold = num(key, v)?,
            "max_n" => self.max_n = num(key, v)?,
            "finalize" => self.finalize = num(key, v)?,
            "omega_step" => self.omega_step = num(key, v)?,
            "omega_target" => self.omega_target = optional(key, v)?,
            "omega_members" => self.omega_members = optional(key, v)?,
            "window" => self.window = num(key, v)?,
            "max_halvings" => self.max_halvings = num(key, v)?,
            "min_n" => self.min_n = optional(key, v)?,
            "stability" => {
                self.stability = match v {
                    "stable" => Stability::Stable,
                    "unstable" => Stability::Unstable,
                    other => return Err(bad(key, other, "expected stable or unstable")),
                }
            }
            "degree" => self.degree = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "e_tol" => self.e_tol = num(key, v)?,
            "s_max" => self.s_max = num(key, v)?,
            "l" => self.l = num(key, v)?,
            "k_max" => self.k_max = num(key, v)?,
            "radius" => self.radius = num(key, v)?,
            "jump_factor" => self.jump_factor = num(key, v)?,
            "propagation" => self.propagation = parse_propagation(v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(Error::parse("config", format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` text; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("config", format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&fs::read_to_string(path)?)
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("mu", format!("{:e}", self.mu)),
            ("eps", format!("{:e}", self.eps)),
            ("omega_p", format!("{:e}", self.omega_p)),
            ("theta_p0", format!("{:e}", self.theta_p0)),
            ("abs_tol", format!("{:e}", self.abs_tol)),
            ("rel_tol", format!("{:e}", self.rel_tol)),
            ("singularity_floor", format!("{:e}", self.singularity_floor)),
            ("max_s_span", format!("{:e}", self.max_s_span)),
            ("resonance", self.resonance.to_string()),
            ("seed_x", format!("{:e}", self.seed_x)),
            ("seed_py", format!("{:e}", self.seed_py)),
            ("seed_period", format!("{:e}", self.seed_period)),
            ("n", self.n.to_string()),
            ("eps_f", format!("{:e}", self.eps_f)),
            ("n_steps_eps", self.n_steps_eps.to_string()),
            ("solver_tol", format!("{:e}", self.solver_tol)),
            ("max_steps", self.max_steps.to_string()),
            ("filter_steps", self.filter_steps.to_string()),
            ("keep_fraction", format!("{:e}", self.keep_fraction)),
            ("tail_threshold", format!("{:e}", self.tail_threshold)),
            ("max_n", self.max_n.to_string()),
            ("finalize", self.finalize.to_string()),
            ("omega_step", format!("{:e}", self.omega_step)),
            ("omega_target", show(&self.omega_target)),
            ("omega_members", show(&self.omega_members)),
            ("window", self.window.to_string()),
            ("max_halvings", self.max_halvings.to_string()),
            ("min_n", show(&self.min_n)),
            ("stability", self.stability.name().to_string()),
            ("degree", self.degree.to_string()),
            ("alpha", format!("{:e}", self.alpha)),
            ("e_tol", format!("{:e}", self.e_tol)),
            ("s_max", format!("{:e}", self.s_max)),
            ("l", self.l.to_string()),
            ("k_max", self.k_max.to_string()),
            ("radius", format!("{:e}", self.radius)),
            ("jump_factor", format!("{:e}", self.jump_factor)),
            ("propagation", propagation_name(self.propagation).to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ]
    }

    /// The effective configuration in the same text form it is read from.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn model(&self) -> Result<ModelParams> {
        let m = ModelParams {
            mu: self.mu,
            eps: self.eps,
            omega_p: self.omega_p,
            theta_p0: self.theta_p0,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            singularity_floor: self.singularity_floor,
            max_s_span: self.max_s_span,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver_tol,
            max_steps: self.max_steps,
            filter_steps: self.filter_steps,
            keep_fraction: self.keep_fraction,
            tail_threshold: self.tail_threshold,
            max_n: self.max_n,
            finalize: self.finalize,
            ..SolverOptions::default()
        }
    }

    pub fn omega_settings(&self) -> OmegaSettings {
        OmegaSettings {
            initial_step: self.omega_step,
            window: self.window,
            max_halvings: self.max_halvings,
            target: self.omega_target,
            max_members: self.omega_members,
            min_n: self.min_n,
            solver: self.solver(),
        }
    }

    pub fn order_options(&self) -> OrderOptions {
        OrderOptions::default()
    }

    pub fn mesh_options(&self) -> MeshOptions {
        MeshOptions {
            propagation: self.propagation,
            radius: self.radius,
            jump_factor: self.jump_factor,
        }
    }
}
