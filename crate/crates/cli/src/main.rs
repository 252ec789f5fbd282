mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use whiskers::continuation::{continue_eps, continue_omega_with, write_run, Member, RunWriter};
use whiskers::dynamics::State4;
use whiskers::grid::FixedPoint;
use whiskers::manifold::{
    fundamental_domain, globalize_mesh, invariance_residual, order_by_order, read_mesh, read_series,
    residual_jets, write_mesh, write_series, ManifoldSeries,
};
use whiskers::seed::{read_seed, refine_periodic_orbit, write_seed, ShootingOptions};
use whiskers::torus::{
    compute_errors, finalize_bundles, init_from_periodic_orbit, lambda_variation, make_lambda_constant, read_torus,
    write_torus, TorusSolution,
};
use whiskers::{Error, Result};

use config::PipelineConfig;

/// Environment variable holding the number of worker threads.
const THREADS_VAR: &str = "WHISKERS_THREADS";

#[derive(Parser)]
#[command(name = "whiskers", version, about = "Whiskered invariant circles of the elliptic restricted three-body problem")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable); wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (same as `--set output_dir=...`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine the symmetric periodic orbit given by seed_x, seed_py, seed_period.
    SeedOrbit {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the circle of a seed orbit and continue it in eccentricity.
    ContinueEps {
        #[arg(long, conflicts_with = "torus")]
        seed: Option<PathBuf>,
        /// Start from a converged torus file instead of a seed.
        #[arg(long)]
        torus: Option<PathBuf>,
        #[arg(long)]
        eps_f: Option<f64>,
        #[arg(long)]
        n_steps: Option<usize>,
    },
    /// Continue a converged torus in the rotation number.
    ContinueOmega {
        #[arg(long)]
        torus: PathBuf,
        /// Signed initial step.
        #[arg(long, allow_hyphen_values = true)]
        step: Option<f64>,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        members: Option<usize>,
    },
    /// Recompute the bundles of a torus and make its Floquet matrix constant.
    Bundles {
        #[arg(long)]
        torus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fourier-Taylor series of the stable or unstable manifold.
    Manifold {
        #[arg(long)]
        torus: PathBuf,
        #[arg(long)]
        stability: Option<String>,
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fundamental domain of a series; rewrites the series with it.
    Domain {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        e_tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Globalize a series into a mesh of map iterates.
    Globalize {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        propagation: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-verify a torus or series file against its invariance equation.
    Check {
        #[arg(long, required_unless_present = "series")]
        torus: Option<PathBuf>,
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Columns of a mesh projection for external plotting.
    PlotData {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, value_enum, default_value = "xy")]
        projection: Projection,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Projection {
    Identity,
    Xy,
    Xypx,
}

impl Projection {
    fn columns(self) -> &'static [usize] {
        match self {
            Projection::Identity => &[0, 1, 2, 3],
            Projection::Xy => &[0, 1],
            Projection::Xypx => &[0, 1, 2],
        }
    }
}

const COORD_NAMES: [&str; 4] = ["x", "y", "px", "py"];

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::parse(THREADS_VAR, format!("expected a thread count, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    Ok(())
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::parse("--set", format!("expected KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(d) = &cli.out_dir {
        cfg.output_dir = d.clone();
    }
    let mut flag = |key: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(key, &v));
    match &cli.command {
        Command::ContinueEps { eps_f, n_steps, .. } => {
            flag("eps_f", eps_f.map(|v| v.to_string()))?;
            flag("n_steps_eps", n_steps.map(|v| v.to_string()))?;
        }
        Command::ContinueOmega { step, target, members, .. } => {
            flag("omega_step", step.map(|v| v.to_string()))?;
            flag("omega_target", target.map(|v| v.to_string()))?;
            flag("omega_members", members.map(|v| v.to_string()))?;
        }
        Command::Manifold { stability, degree, alpha, .. } => {
            flag("stability", stability.clone())?;
            flag("degree", degree.map(|v| v.to_string()))?;
            flag("alpha", alpha.map(|v| v.to_string()))?;
        }
        Command::Domain { e_tol, .. } => flag("e_tol", e_tol.map(|v| v.to_string()))?,
        Command::Globalize { l, k_max, propagation, .. } => {
            flag("l", l.map(|v| v.to_string()))?;
            flag("k_max", k_max.map(|v| v.to_string()))?;
            flag("propagation", propagation.clone())?;
        }
        _ => {}
    }
    Ok(cfg)
}

/// Records the command, the effective configuration and the artifacts.
fn write_manifest(cfg: &PipelineConfig, command: &str, artifacts: &[PathBuf]) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut text = format!("# command {command}\n");
    text.push_str(&cfg.render());
    for a in artifacts {
        text.push_str(&format!("# artifact {}\n", a.display()));
    }
    fs::write(cfg.output_dir.join(format!("{command}.manifest")), text)?;
    Ok(())
}

fn output_path(cfg: &PipelineConfig, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let p = given.clone().unwrap_or_else(|| cfg.output_dir.join(default));
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(p)
}

fn load_torus(path: &Path, cfg: &PipelineConfig) -> Result<TorusSolution> {
    read_torus(BufReader::new(File::open(path)?), &cfg.model()?)
}

fn save_torus(sol: &TorusSolution, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_torus(sol, &mut w)?;
    w.flush()?;
    Ok(())
}

fn load_series(path: &Path, cfg: &PipelineConfig) -> Result<ManifoldSeries> {
    read_series(BufReader::new(File::open(path)?), &cfg.model()?)
}

fn save_series(series: &ManifoldSeries, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_series(series, &mut w)?;
    w.flush()?;
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::SeedOrbit { .. } => "seed-orbit",
        Command::ContinueEps { .. } => "continue-eps",
        Command::ContinueOmega { .. } => "continue-omega",
        Command::Bundles { .. } => "bundles",
        Command::Manifold { .. } => "manifold",
        Command::Domain { .. } => "domain",
        Command::Globalize { .. } => "globalize",
        Command::Check { .. } => "check",
        Command::PlotData { .. } => "plot-data",
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    let cfg = effective_config(&cli)?;
    let name = command_name(&cli.command);
    for line in cfg.render().lines() {
        eprintln!("# {line}");
    }
    let mut artifacts = Vec::new();
    let mut code = ExitCode::SUCCESS;
    match &cli.command {
        Command::SeedOrbit { out } => {
            let model = cfg.model()?;
            let guess = State4::new(cfg.seed_x, 0.0, 0.0, cfg.seed_py);
            let seed = refine_periodic_orbit(&guess, cfg.seed_period, cfg.resonance, &model, &ShootingOptions::default())?;
            let path = output_path(&cfg, out, "seed.txt")?;
            write_seed(&seed, BufWriter::new(File::create(&path)?))?;
            println!(
                "resonance {} period {:.15e} lam_s {:.6e} lam_u {:.6e} return_error {:.2e}",
                seed.resonance,
                seed.period,
                seed.lam_s,
                seed.lam_u,
                seed.return_error(&model)?
            );
            artifacts.push(path);
        }
        Command::ContinueEps { seed, torus, .. } => {
            let model = cfg.model()?;
            let start = match (seed, torus) {
                (_, Some(t)) => load_torus(t, &cfg)?,
                (Some(s), None) => {
                    let orbit = read_seed(BufReader::new(File::open(s)?))?;
                    init_from_periodic_orbit(&orbit, &model, cfg.n, &FixedPoint::default())?
                }
                (None, None) => return Err(Error::InvalidInput("continue-eps needs --seed or --torus".into())),
            };
            let run = continue_eps(&start, cfg.eps_f, cfg.n_steps_eps, &cfg.solver())?;
            write_run(&run.members, &cfg.output_dir, "eps")?;
            println!("{MEMBER_HEADER}");
            run.members.iter().for_each(print_member);
            artifacts.push(cfg.output_dir.join("manifest.txt"));
        }
        Command::ContinueOmega { torus, .. } => {
            let start = load_torus(torus, &cfg)?;
            let mut writer = RunWriter::new(&cfg.output_dir, "omega")?;
            println!("{MEMBER_HEADER}");
            let run = continue_omega_with(&start, &cfg.omega_settings(), &mut |m| {
                print_member(m);
                writer.push(m)
            })?;
            let mut gaps = String::from("# omega_lo omega_hi\n");
            for (a, b) in &run.gaps {
                gaps.push_str(&format!("{a:.17e} {b:.17e}\n"));
            }
            let gap_path = cfg.output_dir.join("gaps.txt");
            fs::write(&gap_path, gaps)?;
            if let Some(reason) = &run.end {
                println!("# branch ended: {reason}");
            }
            artifacts.push(cfg.output_dir.join("manifest.txt"));
            artifacts.push(gap_path);
        }
        Command::Bundles { torus, out } => {
            let sol = load_torus(torus, &cfg)?;
            let (_, data) = compute_errors(&sol)?;
            let sol = finalize_bundles(&sol, &data, &cfg.solver())?;
            let (_, data) = compute_errors(&sol)?;
            let sol = make_lambda_constant(&sol, &data)?;
            let (errs, data) = compute_errors(&sol)?;
            let (ps, pu, pc) = sol.pairings();
            let (vt, vs, vu) = lambda_variation(&sol, &data)?;
            println!("e {:.3e} e_red {:.3e}", errs.e_sup(), errs.e_red_sup());
            println!("pairings stable {ps:.3e} unstable {pu:.3e} center {pc:.3e}");
            println!("variation T {vt:.3e} lam_s {vs:.3e} lam_u {vu:.3e}");
            println!("T {:.15e} lam_s {:.15e} lam_u {:.15e}", sol.t_mean(), sol.lam_s_mean(), sol.lam_u_mean());
            let path = output_path(&cfg, out, "bundles.torus")?;
            save_torus(&sol, &path)?;
            artifacts.push(path);
        }
        Command::Manifold { torus, out, .. } => {
            let sol = load_torus(torus, &cfg)?;
            let (series, report) = order_by_order(&sol, cfg.stability, cfg.degree, cfg.alpha, &cfg.order_options())?;
            for (k, r) in &report.sub_order {
                println!("order {k} sub-order residual {r:.3e}");
            }
            println!("lambda {:.15e} alpha {:e} halvings {}", series.lam, series.alpha, report.halvings);
            let path = output_path(&cfg, out, &format!("{}.series", cfg.stability.name()))?;
            save_series(&series, &path)?;
            artifacts.push(path);
        }
        Command::Domain { series, out, .. } => {
            let mut s = load_series(series, &cfg)?;
            let d = fundamental_domain(&s, cfg.e_tol, cfg.s_max)?;
            s.domain = d.domain;
            println!("domain {:.6e} alpha_domain {:.6e}", d.domain, d.domain * s.alpha);
            let path = out.clone().unwrap_or_else(|| series.clone());
            save_series(&s, &path)?;
            artifacts.push(path);
        }
        Command::Globalize { series, out, .. } => {
            let s = load_series(series, &cfg)?;
            let domain = if s.domain > 0.0 {
                s.domain
            } else {
                fundamental_domain(&s, cfg.e_tol, cfg.s_max)?.domain
            };
            let mesh = globalize_mesh(&s, domain, cfg.l, cfg.k_max, &cfg.mesh_options())?;
            println!("points {} valid {}", mesh.points.len(), mesh.valid_count());
            let path = output_path(&cfg, out, "mesh.txt")?;
            let mut w = BufWriter::new(File::create(&path)?);
            write_mesh(&mesh, &mut w)?;
            w.flush()?;
            artifacts.push(path);
        }
        Command::Check { torus, series } => {
            let mut worst = 0.0f64;
            if let Some(t) = torus {
                let sol = load_torus(t, &cfg)?;
                let (errs, data) = compute_errors(&sol)?;
                let (ps, pu, pc) = sol.pairings();
                let (vt, vs, vu) = lambda_variation(&sol, &data)?;
                println!("torus {} N {} omega {:.15e} eps {:e}", t.display(), sol.n(), sol.omega, sol.eps());
                println!("e {:.3e}", errs.e_sup());
                println!("e_red {:.3e}", errs.e_red_sup());
                println!("pairings stable {ps:.3e} unstable {pu:.3e} center {pc:.3e}");
                println!("lambda_variation {vt:.3e} {vs:.3e} {vu:.3e}");
                worst = worst.max(errs.e_sup()).max(errs.e_red_sup());
            }
            if let Some(p) = series {
                let s = load_series(p, &cfg)?;
                let jets = residual_jets(&s)?;
                println!("series {} degree {} lambda {:.15e}", p.display(), s.degree(), s.lam);
                for k in 0..=s.degree() {
                    let r = jets.iter().map(|j| j.coefs[k].norm()).fold(0.0, f64::max);
                    println!("order {k} residual {r:.3e}");
                    worst = worst.max(r);
                }
                if s.domain > 0.0 {
                    let r = invariance_residual(&s, s.domain)?;
                    println!("invariance residual at domain {:.6e}: {r:.3e}", s.domain);
                }
            }
            let ok = worst <= cfg.solver_tol;
            println!("status {}", if ok { "ok" } else { "above-tolerance" });
            if !ok {
                code = ExitCode::from(1);
            }
        }
        Command::PlotData { mesh, projection, out } => {
            let m = read_mesh(BufReader::new(File::open(mesh)?))?;
            let cols = projection.columns();
            let mut text = String::from("# k i j s");
            for &c in cols {
                text.push(' ');
                text.push_str(COORD_NAMES[c]);
            }
            text.push('\n');
            for p in m.points.iter().filter(|p| p.valid) {
                text.push_str(&format!("{} {} {} {:.17e}", p.k, p.i, p.j, p.s));
                for &c in cols {
                    text.push_str(&format!(" {:.17e}", p.x[c]));
                }
                text.push('\n');
            }
            match out {
                Some(path) => {
                    fs::write(path, text)?;
                    artifacts.push(path.clone());
                }
                None => std::io::stdout().lock().write_all(text.as_bytes())?,
            }
        }
    }
    write_manifest(&cfg, name, &artifacts)?;
    Ok(code)
}

const MEMBER_HEADER: &str = "# omega eps N e e_red steps";

fn print_member(m: &Member) {
    let (e, er) = m.report.final_errors();
    println!(
        "{:.12} {:.6e} {} {:.3e} {:.3e} {}",
        m.omega(),
        m.eps(),
        m.solution.n(),
        e,
        er,
        m.report.steps.len().saturating_sub(1)
    );
}
