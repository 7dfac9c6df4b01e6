use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use griffith_core::energy::SupportVariant;
use griffith_core::limits::{beta_p, beta_p_closed, phi_p, Convention};
use griffith_core::minimize::{minimize_dirichlet, DirichletProblem, MinimizeOptions};
use griffith_core::quad::build_sphere_rule;
use griffith_core::slicing::{i_u1, mu_hat_p, mu_xi};
use griffith_core::{
    audit_inequalities, f_eps, fp_eps, run_sweep, AuditSpec, BallStrategy, DirectionRule, Field, FieldConfig, Grid, Region, SweepSpec,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "griffith", version, about = "Nonlocal approximations of linearized Griffith energies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate F_eps (or the ball functional F^p_eps) of a configured field.
    Energy {
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        /// Grid spacing; defaults to eps/8.
        #[arg(long)]
        h: Option<f64>,
        /// `dyadic:L` or `greedy:K`; required when p != 1.
        #[arg(long)]
        strategy: Option<BallStrategy>,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Slice measures of a configured field on the best ball family.
    P1Explore {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value = "dyadic:1")]
        strategy: BallStrategy,
        /// Order of the sphere rule over directions.
        #[arg(long, default_value_t = 16)]
        sphere_order: usize,
        /// Transverse spacing of the slice integrals.
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Table of phi_p(A) and beta_p for a set of matrices and exponents.
    DensityTable {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3")]
        p: Vec<f64>,
        /// Number of seeded random matrices added to identity and shear.
        #[arg(long, default_value_t = 3)]
        random: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize F_eps for the 1D bar under the load t.
    Minimize {
        #[arg(long)]
        load: f64,
        #[arg(long, default_value_t = 0.02)]
        eps: f64,
        /// Grid spacing; defaults to eps/8.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 0)]
        continuation: usize,
        /// Adds a noisy start with this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.1)]
        grip: f64,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        /// Trace CSV; the final field goes to `final_field.csv` next to it.
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// eps-sweep with Richardson extrapolation from a JSON spec.
    GammaStudy {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inequality audit from a JSON spec; exits 1 if any check fails.
    Audit {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn writer(out: Option<&Path>) -> Result<csv::Writer<Box<dyn std::io::Write>>> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn write_all<T: Serialize>(out: Option<&Path>, rows: &[T]) -> Result<()> {
    let mut w = writer(out)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EnergyRow {
    eps: f64,
    p: f64,
    h: f64,
    strategy: String,
    total: f64,
    n_balls: usize,
    n_directions: usize,
    wall_ms: f64,
}

fn energy(eps: f64, p: f64, h: Option<f64>, strategy: Option<BallStrategy>, field: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = FieldConfig::load(field).with_context(|| format!("loading {}", field.display()))?;
    let rule = DirectionRule::from_params(cfg.domain.dim(), &cfg.quad)?;
    let grid = Grid::new(cfg.domain.clone(), h.unwrap_or(eps / 8.0))?;
    let f = Field::Analytic(&cfg.field, &grid);
    let start = Instant::now();
    let report = match strategy {
        None if p == 1.0 => f_eps(f, &Region::Box(cfg.domain.clone()), eps, &rule)?,
        None => bail!("p != 1 needs --strategy"),
        Some(s) => fp_eps(f, &cfg.domain, eps, p, &rule, s, SupportVariant::Domain)?,
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let row = EnergyRow {
        eps,
        p,
        h: grid.h(),
        strategy: strategy.map_or_else(|| "none".to_string(), |s| s.to_string()),
        total: report.total,
        n_balls: report.family.as_ref().map_or(0, |f| f.len()),
        n_directions: rule.len(),
        wall_ms,
    };
    write_all(out, &[row])
}

#[derive(Serialize)]
struct ExploreRow {
    ball: usize,
    xi_index: usize,
    mu_xi: f64,
    mu_hat_p: f64,
    i_u1: f64,
}

fn p1_explore(field: &Path, p: f64, strategy: BallStrategy, sphere_order: usize, h: f64, out: Option<&Path>) -> Result<()> {
    let cfg = FieldConfig::load(field).with_context(|| format!("loading {}", field.display()))?;
    let sphere = build_sphere_rule(cfg.domain.dim(), sphere_order)?;
    let best = mu_hat_p(&cfg.field, &cfg.domain, p, strategy, &sphere, h)?;
    let mut rows = Vec::new();
    for (b, ball) in best.family.balls.iter().enumerate() {
        let region = Region::Ball(ball.clone());
        let iu = i_u1(&cfg.field, &region, &sphere, h)?;
        for i in 0..sphere.len() {
            rows.push(ExploreRow {
                ball: b,
                xi_index: i,
                mu_xi: mu_xi(&cfg.field, sphere.node(i), &region, h)?,
                mu_hat_p: best.per_ball[b],
                i_u1: iu,
            });
        }
    }
    eprintln!("mu_hat_p = {} over {} balls", best.value, best.family.len());
    write_all(out, &rows)
}

#[derive(Serialize)]
struct DensityRow {
    convention: &'static str,
    n: usize,
    p: f64,
    matrix: String,
    phi_p: f64,
    beta_p: f64,
    beta_p_closed: f64,
}

fn density_table(dim: usize, ps: &[f64], random: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    use rand::{Rng, SeedableRng};
    if !(1..=3).contains(&dim) {
        bail!("dim must be 1, 2 or 3");
    }
    let rule = DirectionRule::from_params(dim, &griffith_core::RuleParams::default())?;
    let identity: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut shear = vec![vec![0.0; dim]; dim];
    if dim > 1 {
        shear[0][1] = 1.0;
    } else {
        shear[0][0] = 0.5;
    }
    let mut matrices = vec![identity, shear];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random {
        matrices.push((0..dim).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect());
    }
    let mut nu = vec![0.0; dim];
    nu[0] = 1.0;
    let mut rows = Vec::new();
    for conv in Convention::ALL {
        for &p in ps {
            let beta = beta_p(p, &nu, &rule, conv)?;
            let closed = beta_p_closed(p, dim, conv)?;
            for a in &matrices {
                rows.push(DensityRow {
                    convention: conv.name(),
                    n: dim,
                    p,
                    matrix: serde_json::to_string(a)?,
                    phi_p: phi_p(a, p, &rule, conv)?,
                    beta_p: beta,
                    beta_p_closed: closed,
                });
            }
        }
    }
    write_all(out, &rows)
}

#[derive(Serialize)]
struct TraceRow {
    iter: usize,
    eps: f64,
    energy: f64,
    grad_norm: f64,
    step: f64,
}

#[allow(clippy::too_many_arguments)]
fn minimize(load: f64, eps: f64, h: Option<f64>, continuation: usize, seed: Option<u64>, grip: f64, max_iter: usize, out: &Path) -> Result<()> {
    let h = h.unwrap_or(eps / 8.0);
    let prob = DirichletProblem::bar(load, eps, h, grip)?;
    let rule = griffith_core::build_direction_rule(1, 64, 2, 6.0)?;
    let opts = MinimizeOptions {
        max_iter,
        continuation,
        nucleation_seed: seed,
        ..Default::default()
    };
    let trace = minimize_dirichlet(&prob, &rule, &opts)?;
    let rows: Vec<TraceRow> = (0..trace.iterates.len())
        .map(|i| TraceRow {
            iter: i,
            eps: trace.eps[i],
            energy: trace.iterates[i],
            grad_norm: trace.grad_norms[i],
            step: trace.step_sizes[i],
        })
        .collect();
    write_all(Some(out), &rows)?;

    let field_path = out.with_file_name("final_field.csv");
    let u = &trace.final_field;
    let grid = u.grid();
    let n = grid.dim();
    let mut w = csv::Writer::from_path(&field_path)?;
    let mut header = vec!["cell".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..n).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for c in 0..grid.len() {
        let mut rec = vec![c.to_string()];
        rec.extend(grid.center(c).iter().map(|x| x.to_string()));
        rec.extend(u.value(c).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    eprintln!(
        "start {}: energy {} after {} iterations ({:?}); wrote {} and {}",
        trace.start,
        trace.final_energy,
        trace.iterates.len(),
        trace.stop_reason,
        out.display(),
        field_path.display()
    );
    Ok(())
}

fn gamma_study(spec: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut s = SweepSpec::load(spec).with_context(|| format!("loading {}", spec.display()))?;
    if out.is_some() {
        s.output = out;
    }
    let r = run_sweep(&s)?;
    if s.output.is_none() {
        print!("{}", r.to_csv_string()?);
    }
    eprintln!(
        "extrapolated {} (raw {}), target {}, relative error {} (raw {}), monotone {}",
        r.extrapolated, r.raw_smallest, r.target, r.relative_error, r.raw_relative_error, r.monotone
    );
    Ok(())
}

fn audit(spec: &Path, out: Option<PathBuf>) -> Result<bool> {
    let mut s = AuditSpec::load(spec).with_context(|| format!("loading {}", spec.display()))?;
    if out.is_some() {
        s.output = out;
    }
    let r = audit_inequalities(&s)?;
    if s.output.is_none() {
        print!("{}", r.to_csv_string()?);
    }
    let failed = r.rows.iter().filter(|row| !row.pass).count();
    eprintln!("{} checks, {} failed, minimum margin {}", r.rows.len(), failed, r.min_margin());
    Ok(r.all_pass)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Energy {
            eps,
            p,
            h,
            strategy,
            field,
            out,
        } => energy(eps, p, h, strategy, &field, out.as_deref()).map(|_| true),
        Command::P1Explore {
            field,
            p,
            strategy,
            sphere_order,
            h,
            out,
        } => p1_explore(&field, p, strategy, sphere_order, h, out.as_deref()).map(|_| true),
        Command::DensityTable { dim, p, random, seed, out } => density_table(dim, &p, random, seed, out.as_deref()).map(|_| true),
        Command::Minimize {
            load,
            eps,
            h,
            continuation,
            seed,
            grip,
            max_iter,
            out,
        } => minimize(load, eps, h, continuation, seed, grip, max_iter, &out).map(|_| true),
        Command::GammaStudy { spec, out } => gamma_study(&spec, out).map(|_| true),
        Command::Audit { spec, out } => audit(&spec, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
