//! Command-line front end: solve, verify, efficiency, and sensitivity
//! commands over problem files.
//!
//! Exit codes, stable for scripting:
//!
//! * `0` — success (for solve/verify: the design is certified OPTIMAL);
//! * `1` — malformed input (problem file, design file or literal);
//! * `2` — numerical failure;
//! * `3` — the command ran but the design's verdict is NOT_OPTIMAL.
//!
//! `DISCRIMAX_THREADS` caps the worker-thread count (default: all cores).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use discrimax::config::{self, ProblemConfig};
use discrimax::criteria::{self, CriterionKind, Design, Evaluator, Problem};
use discrimax::equivalence::{verify, Verdict, VerifyConfig};
use discrimax::error::{Error, Result};
use discrimax::models::DensityFamily;
use discrimax::optimizer::solve_design;
use discrimax::report::{design_arg, write_sensitivity_csv, SolveDoc};

#[derive(Parser)]
#[command(
    name = "discrimax",
    version,
    about = "Optimal discrimination designs for rival regression models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the optimal design for a problem file and certify it.
    Solve {
        /// Problem file.
        config: PathBuf,
        /// Write the result document (JSON) here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a design against the equivalence theorem.
    Verify {
        /// Problem file.
        config: PathBuf,
        /// Design: JSON file path, inline JSON, or `x:w, x:w, ...` pairs.
        #[arg(long, allow_hyphen_values = true)]
        design: String,
        /// Also write the sensitivity grid as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Optimality tolerance relative to the criterion value (the
        /// default suits designs quoted to 3-4 decimals; solver output
        /// passes far tighter).
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        /// Grid resolution for the sensitivity scan.
        #[arg(long, default_value_t = 2001)]
        grid: usize,
    },
    /// Cross-criterion efficiency matrix of one or more designs.
    Efficiency {
        /// Problem file (supplies models and densities; its criterion is
        /// the default row).
        config: PathBuf,
        /// Designs to compare (files, inline JSON, or pair literals; use
        /// `--designs=...` for a literal starting with `-`).
        #[arg(long, num_args = 1.., required = true)]
        designs: Vec<String>,
        /// Criteria rows, e.g. `T,KL,SKL_A`.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<String>,
    },
    /// Tabulate a design's sensitivity function over the design space.
    Sensitivity {
        /// Problem file.
        config: PathBuf,
        /// Design: JSON file path, inline JSON, or `x:w, x:w, ...` pairs.
        #[arg(long, allow_hyphen_values = true)]
        design: String,
        /// Output CSV path (header `x,psi`).
        #[arg(long)]
        csv: PathBuf,
        /// Grid resolution (rows in the CSV).
        #[arg(long, default_value_t = 2001)]
        grid: usize,
    },
}

fn main() -> ExitCode {
    configure_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are malformed input (exit 1); --help and
            // --version print on stdout and exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Cmd::Solve { config, output } => cmd_solve(&config, output.as_deref()),
        Cmd::Verify { config, design, csv, tol, grid } => {
            cmd_verify(&config, &design, csv.as_deref(), tol, grid)
        }
        Cmd::Efficiency { config, designs, criteria } => {
            cmd_efficiency(&config, &designs, &criteria)
        }
        Cmd::Sensitivity { config, design, csv, grid } => {
            cmd_sensitivity(&config, &design, &csv, grid)
        }
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("DISCRIMAX_THREADS") else { return };
    match v.trim().parse::<usize>() {
        Ok(n) if n >= 1 => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring invalid DISCRIMAX_THREADS value `{v}`"),
    }
}

fn verdict_exit(v: Verdict) -> ExitCode {
    match v {
        Verdict::Optimal => ExitCode::SUCCESS,
        Verdict::NotOptimal => ExitCode::from(3),
    }
}

fn print_design(points: &[f64], weights: &[f64]) {
    for (x, w) in points.iter().zip(weights) {
        println!("  x = {x:>14.7}   w = {w:.7}");
    }
}

fn vec_str(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|t| format!("{t:.7}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_solve(path: &Path, output: Option<&Path>) -> Result<ExitCode> {
    let cfg = config::load(path)?;
    let out = solve_design(&cfg.problem, &cfg.optimizer)?;
    let vc = VerifyConfig {
        seed: cfg.optimizer.seed,
        inner_starts: cfg.optimizer.inner_starts,
        ..Default::default()
    };
    let sens = verify(&cfg.problem, &out.design, &vc)?;
    println!("criterion   : {}", out.report.kind);
    println!("value       : {:.9e}", out.report.value);
    println!("design      :");
    print_design(&out.design.points, &out.design.weights);
    println!("theta2*     : {}", vec_str(&out.report.theta2_star));
    println!(
        "certificate : residual {:.3e} ({})",
        out.residual,
        if out.certified { "within target" } else { "target missed" }
    );
    println!("verdict     : {} (max violation {:.3e})", sens.verdict, sens.max_violation);
    for w in out
        .warnings
        .iter()
        .map(ToString::to_string)
        .chain(sens.warnings.iter().map(ToString::to_string))
    {
        eprintln!("warning: {w}");
    }
    if let Some(p) = output {
        std::fs::write(p, SolveDoc::new(&out, &sens).to_json()?)?;
        println!("wrote {}", p.display());
    }
    Ok(verdict_exit(sens.verdict))
}

fn load_design(arg: &str) -> Result<Design> {
    let (design, warning) = design_arg(arg)?.design()?.normalised()?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    Ok(design)
}

fn cmd_verify(
    path: &Path,
    design: &str,
    csv: Option<&Path>,
    tol: f64,
    grid: usize,
) -> Result<ExitCode> {
    let cfg = config::load(path)?;
    let d = load_design(design)?;
    let vc = VerifyConfig {
        tol_rel: tol,
        grid_n: grid,
        seed: cfg.optimizer.seed,
        inner_starts: cfg.optimizer.inner_starts,
    };
    let sens = verify(&cfg.problem, &d, &vc)?;
    println!("criterion        : {}", cfg.problem.criterion);
    println!("value            : {:.9e}", sens.value);
    println!("theta2*          : {}", vec_str(&sens.theta2_star));
    println!("max violation    : {:.6e} at x = {:.6}", sens.max_violation, sens.argmax_x);
    println!("support residuals: {}", vec_str(&sens.support_residuals));
    println!(
        "efficiency bound : {:.6}{}",
        sens.efficiency_bound,
        if sens.efficiency_bound_heuristic { " (heuristic)" } else { "" }
    );
    println!("verdict          : {}", sens.verdict);
    for w in &sens.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(p) = csv {
        let mut f = std::fs::File::create(p)?;
        write_sensitivity_csv(&mut f, &sens.psi)?;
        println!("wrote {}", p.display());
    }
    Ok(verdict_exit(sens.verdict))
}

/// Restricts a loaded problem to `kind`, keeping exactly the densities that
/// criterion consumes.
fn project(base: &Problem, kind: CriterionKind) -> Result<Problem> {
    let (need1, need2) = match kind {
        CriterionKind::T => (false, false),
        CriterionKind::Kl => (true, true),
        CriterionKind::KlNormal | CriterionKind::SklB => (false, true),
        CriterionKind::SklA => (true, false),
    };
    let pick =
        |need: bool, d: &Option<DensityFamily>, name: &str| -> Result<Option<DensityFamily>> {
            match (need, d) {
                (true, None) => Err(Error::Config {
                    line: 0,
                    field: "criteria".into(),
                    message: format!("criterion {kind} requires [{name}]"),
                }),
                (true, Some(f)) => Ok(Some(f.clone())),
                (false, _) => Ok(None),
            }
        };
    let mut p = base.clone();
    p.criterion = kind;
    p.density1 = pick(need1, &base.density1, "density1")?;
    p.density2 = pick(need2, &base.density2, "density2")?;
    p.validate().map_err(|e| Error::Config {
        line: 0,
        field: "criteria".into(),
        message: e.to_string(),
    })?;
    Ok(p)
}

fn design_label(arg: &str, index: usize) -> String {
    let s = arg.trim();
    if s.starts_with('{') || !Path::new(s).is_file() {
        return format!("design-{}", index + 1);
    }
    Path::new(s)
        .file_stem()
        .map(|t| t.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("design-{}", index + 1))
}

fn cmd_efficiency(path: &Path, designs: &[String], criteria: &[String]) -> Result<ExitCode> {
    let cfg: ProblemConfig = config::load(path)?;
    let kinds: Vec<CriterionKind> = if criteria.is_empty() {
        vec![cfg.problem.criterion]
    } else {
        criteria
            .iter()
            .map(|s| {
                CriterionKind::from_tag(s).ok_or_else(|| Error::Config {
                    line: 0,
                    field: "criteria".into(),
                    message: format!("unknown criterion `{s}` (T, KL, KLNORMAL, SKL_A, SKL_B)"),
                })
            })
            .collect::<Result<_>>()?
    };
    let loaded: Vec<(String, Design)> = designs
        .iter()
        .enumerate()
        .map(|(i, arg)| Ok((design_label(arg, i), load_design(arg)?)))
        .collect::<Result<_>>()?;

    let label_w = loaded.iter().map(|(l, _)| l.len()).max().unwrap_or(8).max(8);
    let header: Vec<String> = loaded.iter().map(|(l, _)| format!("{l:>label_w$}")).collect();
    println!("entries: criterion value / best value in the row");
    println!("{:>9}  {}", "criterion", header.join("  "));
    for &kind in &kinds {
        let p = project(&cfg.problem, kind)?;
        let ev = Evaluator::new(&p);
        let vals: Vec<f64> = loaded
            .iter()
            .map(|(_, d)| {
                Ok(ev
                    .inner_minimize(d, None, cfg.optimizer.inner_starts, cfg.optimizer.seed)?
                    .value)
            })
            .collect::<Result<_>>()?;
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cells: Vec<String> = vals
            .iter()
            .map(|&v| criteria::efficiency(v, best).map(|e| format!("{e:>label_w$.6}")))
            .collect::<Result<_>>()?;
        println!("{:>9}  {}  (best {best:.6e})", kind.tag(), cells.join("  "));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sensitivity(path: &Path, design: &str, csv: &Path, grid: usize) -> Result<ExitCode> {
    let cfg = config::load(path)?;
    let d = load_design(design)?;
    let vc = VerifyConfig {
        grid_n: grid,
        seed: cfg.optimizer.seed,
        inner_starts: cfg.optimizer.inner_starts,
        ..Default::default()
    };
    let sens = verify(&cfg.problem, &d, &vc)?;
    let mut f = std::fs::File::create(csv)?;
    write_sensitivity_csv(&mut f, &sens.psi)?;
    println!("wrote {} rows to {}", sens.psi.len(), csv.display());
    println!("max psi {:.6e} at x = {:.6}", sens.max_violation, sens.argmax_x);
    Ok(ExitCode::SUCCESS)
}
