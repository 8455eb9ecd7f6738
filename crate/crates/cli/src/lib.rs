//! Command-line front end for `ssc-core`: reads system files, runs the
//! test batteries, designs, reductions and demos, and writes a trace CSV,
//! a JSON summary and a gnuplot script per run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use ssc_core::demos::{self, REG_HORIZON};
use ssc_core::est_design::{design_estimator, EstMode, EstOptions, EstPathway};
use ssc_core::linsolve::{spectral_abscissa, Mat, C64};
use ssc_core::moments::{
    cd_from_moments, cp_from_moments, jordan_structure, moment_matrix, symmetry_check,
};
use ssc_core::mor::{
    rom_left, rom_right, rom_structural_check, rom_two_sided, steady_state_check, Rom, RomSide,
    TwoSidedForm,
};
use ssc_core::nonlinear::{
    design_nl_observer, simulate_nl_observer, vdp_certification_grid, vdp_example, VdpParams,
};
use ssc_core::sim::{simulate_lti, Trace, Vector};
use ssc_core::ssc::{column_rank_report, row_rank_report, ssc_dual, ssc_primal, TestReport};
use ssc_core::stab_design::{design_stabilizer, DesignOptions, StabMode, StabPathway};
use ssc_core::sysfile::{
    mat_to_rows, parse_eps_grid, parse_system_file, resolve_method, Method, ReduceSide, SystemFile,
};
use ssc_core::systems::{block, Plant};
use ssc_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Rows kept in demo traces written to disk.
const MAX_CSV_ROWS: usize = 4000;

#[derive(Debug, Parser)]
#[command(
    name = "ssc",
    version,
    about = "Steady-state cascade operators: tests, designs, reduction and demos"
)]
pub struct Cli {
    /// Directory for the trace, summary and plot files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Acceptance tolerance (reduce: match residual, moments: agreement).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for randomized initial conditions.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Row- and column-rank test batteries at the eigenvalues of F.
    Check { file: PathBuf },
    /// Stabilizer or estimator design.
    #[command(subcommand)]
    Design(DesignKind),
    /// Moment-matching reduced model from the driver data.
    Reduce(ReduceArgs),
    /// Free response of the driven plant (or step response without a driver).
    Simulate(SimulateArgs),
    /// Shipped demonstrations.
    #[command(subcommand)]
    Demo(DemoKind),
    /// Moment-based C_p / C_d compared with the Sylvester route.
    Moments { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum DesignKind {
    Stab(DesignArgs),
    Est(DesignArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    pub file: PathBuf,
    /// Pathway name (3a1a..3a3b, b1a..b3b) or family (3a1, b2) used with --fix.
    #[arg(long)]
    pub method: String,
    /// gain, injection or dynamics.
    #[arg(long)]
    pub fix: Option<String>,
    /// Low-gain grid `lo:hi:npts` (log spaced).
    #[arg(long)]
    pub eps_grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    pub file: PathBuf,
    /// right, left or two.
    #[arg(long, default_value = "right")]
    pub side: String,
    /// System file whose driver supplies (F, G) for two-sided matching.
    #[arg(long)]
    pub left_data: Option<PathBuf>,
    /// Two-sided parameterization: right or left.
    #[arg(long, default_value = "right")]
    pub family: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub file: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
}

#[derive(Debug, Subcommand)]
pub enum DemoKind {
    /// Four-tank regulation (all six stabilizer pathways unless --method).
    FourtankReg(FourTankArgs),
    /// Four-tank disturbance estimation (all six estimator pathways unless --method).
    FourtankEst(FourTankArgs),
    /// Linear plant driven by a Van der Pol oscillator, nonlinear observer.
    VdpObserver(VdpArgs),
}

#[derive(Debug, Args)]
pub struct FourTankArgs {
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub fix: Option<String>,
    #[arg(long)]
    pub eps_grid: Option<String>,
    #[arg(long, default_value_t = REG_HORIZON)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct VdpArgs {
    #[arg(long, default_value_t = 200.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 100.0)]
    pub kappa: f64,
}

/// Why a command stopped.
#[derive(Debug)]
enum Failure {
    Usage(String),
    /// A computation failed; the summary is written under `name`.
    Design {
        name: String,
        command: &'static str,
        error: Error,
    },
    /// The computation finished but missed a requested tolerance.
    Rejected {
        name: String,
        code: &'static str,
        message: String,
    },
}

type Run = std::result::Result<(), Failure>;

struct Ctx {
    out: PathBuf,
    tol: Option<f64>,
    seed: Option<u64>,
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            eprintln!("error: --tol must be a positive number");
            return EXIT_USAGE;
        }
    }
    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!(
            "error: cannot create output directory {}: {e}",
            cli.out.display()
        );
        return EXIT_USAGE;
    }
    let ctx = Ctx {
        out: cli.out.clone(),
        tol: cli.tol,
        seed: cli.seed,
    };
    let res = match &cli.command {
        Command::Check { file } => cmd_check(&ctx, file),
        Command::Design(DesignKind::Stab(a)) => cmd_design(&ctx, a, false),
        Command::Design(DesignKind::Est(a)) => cmd_design(&ctx, a, true),
        Command::Reduce(a) => cmd_reduce(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Demo(DemoKind::FourtankReg(a)) => cmd_fourtank(&ctx, a, false),
        Command::Demo(DemoKind::FourtankEst(a)) => cmd_fourtank(&ctx, a, true),
        Command::Demo(DemoKind::VdpObserver(a)) => cmd_vdp(&ctx, a),
        Command::Moments { file } => cmd_moments(&ctx, file),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Design {
            name,
            command,
            error,
        }) => {
            eprintln!("error [{}]: {error}", error.code());
            let summary = json!({
                "status": "error",
                "command": command,
                "code": error.code(),
                "message": error.to_string(),
            });
            report_write(write_summary(&ctx.out, &name, &summary));
            EXIT_FAILURE
        }
        Err(Failure::Rejected {
            name,
            code,
            message,
        }) => {
            eprintln!("error [{code}]: {message}");
            let path = ctx.out.join(format!("{name}.result.json"));
            let updated = fs::read_to_string(&path)
                .ok()
                .and_then(|s| serde_json::from_str::<Value>(&s).ok())
                .map(|mut v| {
                    v["status"] = json!("error");
                    v["code"] = json!(code);
                    v["message"] = json!(message);
                    v
                })
                .unwrap_or_else(|| json!({"status": "error", "code": code, "message": message}));
            report_write(write_summary(&ctx.out, &name, &updated));
            EXIT_FAILURE
        }
    }
}

fn report_write(r: std::io::Result<()>) {
    if let Err(e) = r {
        eprintln!("error: cannot write output: {e}");
    }
}

fn load(path: &Path) -> std::result::Result<SystemFile, Failure> {
    parse_system_file(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn file_name(file: &SystemFile, path: &Path) -> String {
    let raw = if file.metadata.name.trim().is_empty() {
        path.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("system")
            .to_string()
    } else {
        file.metadata.name.trim().to_string()
    };
    sanitize(&raw)
}

fn sanitize(s: &str) -> String {
    let out: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if out.is_empty() {
        "system".into()
    } else {
        out
    }
}

fn need_plant(file: &SystemFile, path: &Path) -> std::result::Result<Plant, Failure> {
    file.plant
        .clone()
        .ok_or_else(|| Failure::Usage(format!("{}: no plant section", path.display())))
}

fn need_driver(
    file: &SystemFile,
    path: &Path,
) -> std::result::Result<ssc_core::systems::Driver, Failure> {
    file.driver
        .clone()
        .ok_or_else(|| Failure::Usage(format!("{}: no driver section", path.display())))
}

fn design_err<'a>(name: &'a str, command: &'static str) -> impl Fn(Error) -> Failure + 'a {
    move |error| Failure::Design {
        name: name.to_string(),
        command,
        error,
    }
}

fn write_summary(out: &Path, name: &str, v: &Value) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(v).expect("summary serializes");
    fs::write(out.join(format!("{name}.result.json")), text + "\n")
}

/// gnuplot script for a trace CSV: one curve per selected column.
pub fn plot_script(
    csv: &str,
    trace: &Trace,
    title: &str,
    columns: &[usize],
    log_y: bool,
) -> String {
    let labels: Vec<&String> = trace
        .state_labels
        .iter()
        .chain(&trace.output_labels)
        .collect();
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot -p {title}.plot");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set title '{title}' noenhanced");
    let _ = writeln!(s, "set xlabel 't'");
    let _ = writeln!(s, "set grid");
    if log_y {
        let _ = writeln!(s, "set logscale y");
    }
    let curves: Vec<String> = columns
        .iter()
        .filter(|&&c| c < labels.len())
        .map(|&c| {
            format!(
                "'{csv}' using 1:{} skip 1 with lines title '{}' noenhanced",
                c + 2,
                labels[c]
            )
        })
        .collect();
    let _ = writeln!(s, "plot {}", curves.join(", \\\n     "));
    s
}

/// Writes `<name>.trace.csv` and `<name>.plot`; plots outputs if present,
/// states otherwise.
fn write_trace(out: &Path, name: &str, trace: &Trace, log_y: bool) -> std::io::Result<()> {
    let trace = if trace.len() > MAX_CSV_ROWS {
        trace.decimate(trace.len().div_ceil(MAX_CSV_ROWS))
    } else {
        trace.clone()
    };
    let csv = format!("{name}.trace.csv");
    fs::write(out.join(&csv), trace.to_csv())?;
    let ns = trace.state_labels.len();
    let no = trace.output_labels.len();
    let cols: Vec<usize> = if no > 0 {
        (ns..ns + no).collect()
    } else {
        (0..ns).collect()
    };
    fs::write(
        out.join(format!("{name}.plot")),
        plot_script(&csv, &trace, name, &cols, log_y),
    )
}

fn io_fail<'a>(name: &'a str, command: &'static str) -> impl Fn(std::io::Error) -> Failure + 'a {
    move |e| Failure::Design {
        name: name.to_string(),
        command,
        error: Error::Numerical(format!("writing output: {e}")),
    }
}

fn verdict_line(r: &TestReport) -> String {
    let mut s = format!(
        "rosenbrock={} francis={} dual_francis={} cp={} cd={} consistent={}",
        r.rosenbrock, r.francis, r.dual_francis, r.cp, r.cd, r.consistent
    );
    for (label, imp) in [
        ("transfer_strong", &r.transfer_strong),
        ("transfer_weak", &r.transfer_weak),
        ("converse", &r.converse),
    ] {
        if let Some(i) = imp {
            let _ = write!(s, " {label}={}", !i.violated());
        }
    }
    s
}

fn nonzero(m: &Mat) -> Option<&Mat> {
    (m.len() > 0 && m.amax() > 0.0).then_some(m)
}

fn cmd_check(ctx: &Ctx, path: &Path) -> Run {
    let file = load(path)?;
    let plant = need_plant(&file, path)?;
    let driver = need_driver(&file, path)?;
    let name = file_name(&file, path);
    let err = design_err(&name, "check");
    let row = row_rank_report(&plant, &driver.f, nonzero(&driver.g)).map_err(&err)?;
    let col = column_rank_report(&plant, &driver.f, nonzero(&driver.h)).map_err(&err)?;
    let square = plant.p() == plant.m();
    let all_row = row.verdicts().iter().all(|&v| v);
    let all_col = col.verdicts().iter().all(|&v| v);
    // square plants: the row and column conditions coincide
    let square_verdict = square.then_some(all_row && all_col);
    println!("row-rank battery:    {}", verdict_line(&row));
    println!("column-rank battery: {}", verdict_line(&col));
    match square_verdict {
        Some(v) => println!(
            "square plant:        all verdicts {v}, row/column agreement {}",
            all_row == all_col
        ),
        None => println!(
            "square plant:        not applicable (p = {}, m = {})",
            plant.p(),
            plant.m()
        ),
    }
    let summary = json!({
        "status": "ok",
        "command": "check",
        "name": name,
        "dimensions": {"n": plant.n(), "m": plant.m(), "p": plant.p(), "nu": driver.nu()},
        "row_battery": row,
        "column_battery": col,
        "square": {"applicable": square, "all_true": square_verdict, "agree": square.then_some(all_row == all_col)},
    });
    write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, "check"))
}

fn eps_grid(s: &Option<String>) -> std::result::Result<Option<Vec<f64>>, Failure> {
    s.as_deref()
        .map(parse_eps_grid)
        .transpose()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn cmd_design(ctx: &Ctx, a: &DesignArgs, est: bool) -> Run {
    let method =
        resolve_method(&a.method, a.fix.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    let grid = eps_grid(&a.eps_grid)?;
    let file = load(&a.file)?;
    let plant = need_plant(&file, &a.file)?;
    let driver = need_driver(&file, &a.file)?;
    let base = file_name(&file, &a.file);
    match (method, est) {
        (Method::Stab(p), false) => {
            let name = format!("{base}-{}", p.to_string().to_ascii_lowercase());
            let given = match p.mode() {
                StabMode::FixG => driver.g.clone(),
                StabMode::FixKeta => file.k_eta.clone().ok_or_else(|| {
                    Failure::Usage(format!("{p} needs gains.K_eta in the system file"))
                })?,
            };
            let mut opts = DesignOptions {
                q: file.tuning.q.clone(),
                r: file.tuning.r.clone(),
                q_eta: file.tuning.q_eta.clone(),
                r_eta: file.tuning.r_eta.clone(),
                ..DesignOptions::default()
            };
            if let Some(g) = grid {
                opts.eps_grid = g;
            }
            let d = design_stabilizer(&plant, &driver.f, p, &given, &opts)
                .map_err(design_err(&name, "design stab"))?;
            let abscissa = spectral_abscissa(&d.closed_loop_original)
                .map_err(design_err(&name, "design stab"))?;
            println!("{p}: closed-loop spectral abscissa {abscissa:.6e}");
            if let Some(e) = d.epsilon {
                println!("{p}: epsilon {e:.6e}");
            }
            let summary = json!({"status": "ok", "command": "design stab", "name": name, "method": p.to_string(), "abscissa": abscissa, "design": d});
            write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, "design stab"))
        }
        (Method::Est(p), true) => {
            let name = format!("{base}-{}", p.to_string().to_ascii_lowercase());
            let given = match p.mode() {
                EstMode::FixH => driver.h.clone(),
                EstMode::FixLeta => file.l_eta.clone().ok_or_else(|| {
                    Failure::Usage(format!("{p} needs gains.L_eta in the system file"))
                })?,
            };
            let mut opts = EstOptions {
                q: file.tuning.q.clone(),
                r: file.tuning.r.clone(),
                q_eta: file.tuning.q_eta.clone(),
                r_eta: file.tuning.r_eta.clone(),
                ..EstOptions::default()
            };
            if let Some(g) = grid {
                opts.eps_grid = g;
            }
            let d = design_estimator(&plant, &driver, p, &given, &opts)
                .map_err(design_err(&name, "design est"))?;
            let abscissa = spectral_abscissa(&d.error_matrix_original)
                .map_err(design_err(&name, "design est"))?;
            println!("{p}: error-dynamics spectral abscissa {abscissa:.6e}");
            if let Some(e) = d.epsilon {
                println!("{p}: epsilon {e:.6e}");
            }
            let summary = json!({"status": "ok", "command": "design est", "name": name, "method": p.to_string(), "abscissa": abscissa, "design": d});
            write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, "design est"))
        }
        (Method::Stab(p), true) => Err(Failure::Usage(format!(
            "{p} is a stabilizer method; use `design stab`"
        ))),
        (Method::Est(p), false) => Err(Failure::Usage(format!(
            "{p} is an estimator method; use `design est`"
        ))),
    }
}

fn rom_file(rom: &Rom, file: &SystemFile) -> std::result::Result<SystemFile, Error> {
    let mut metadata = file.metadata.clone();
    metadata.name = format!("{}-rom", metadata.name);
    metadata.notes = format!(
        "order-{} reduced model ({:?} matching)",
        rom.order(),
        rom.side
    );
    Ok(SystemFile {
        metadata,
        plant: Some(rom.plant()?),
        driver: file.driver.clone(),
        ..SystemFile::default()
    })
}

fn cmd_reduce(ctx: &Ctx, a: &ReduceArgs) -> Run {
    let side: ReduceSide = a.side.parse().map_err(Failure::Usage)?;
    let family = match a.family.trim().to_ascii_lowercase().as_str() {
        "right" => TwoSidedForm::RightFamily,
        "left" => TwoSidedForm::LeftFamily,
        other => {
            return Err(Failure::Usage(format!(
                "unknown --family '{other}' (expected right or left)"
            )))
        }
    };
    let file = load(&a.file)?;
    let plant = need_plant(&file, &a.file)?;
    let driver = need_driver(&file, &a.file)?;
    let name = format!("{}-rom", file_name(&file, &a.file));
    let err = design_err(&name, "reduce");
    let rom = match side {
        ReduceSide::Right => rom_right(&plant, &driver.f, &driver.h, None, None, None),
        ReduceSide::Left => rom_left(&plant, &driver.f, &driver.g, None, None, None),
        ReduceSide::Two => {
            let (f_g, g) = match &a.left_data {
                Some(p) => {
                    let other = load(p)?;
                    let d = need_driver(&other, p)?;
                    (d.f, d.g)
                }
                None => return Err(Failure::Usage("--side two needs --left-data FILE with a driver (F, G) whose spectrum avoids eig(F)".into())),
            };
            rom_two_sided(&plant, &driver.f, &driver.h, &f_g, &g, None, family)
        }
    }
    .map_err(&err)?;
    let cert_side = match side {
        ReduceSide::Right => RomSide::Right,
        ReduceSide::Left => RomSide::Left,
        ReduceSide::Two if family == TwoSidedForm::LeftFamily => RomSide::Left,
        ReduceSide::Two => RomSide::TwoSided,
    };
    let cert = rom_structural_check(&rom, cert_side).map_err(&err)?;
    let eta0 = Vector::from_element(driver.nu(), 1.0);
    let steady = steady_state_check(&plant, &rom, Some(&eta0)).map_err(&err)?;
    let tol = ctx.tol.unwrap_or(1e-8);
    println!(
        "order {} ROM, match residual {:.3e} (tolerance {tol:.1e})",
        rom.order(),
        rom.match_residual
    );
    println!(
        "structural certificate: condition {} pbh {} sound {}",
        cert.condition_holds,
        cert.pbh_holds,
        cert.is_sound()
    );
    match &steady {
        Some(s) => println!(
            "steady-state gap over [{:.3e}, {:.3e}]: {:.3e}",
            s.start, s.end, s.max_gap
        ),
        None => println!("steady-state comparison skipped (plant or ROM not Hurwitz)"),
    }
    let summary = json!({
        "status": "ok",
        "command": "reduce",
        "name": name,
        "side": a.side,
        "tolerance": tol,
        "rom": rom,
        "structural_certificate": cert,
        "steady_state": steady,
    });
    write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, "reduce"))?;
    let rf = rom_file(&rom, &file).map_err(&err)?;
    fs::write(ctx.out.join(format!("{name}.json")), rf.to_json())
        .map_err(io_fail(&name, "reduce"))?;
    if !(rom.match_residual <= tol) {
        return Err(Failure::Rejected {
            name: name.clone(),
            code: "mor.match_residual",
            message: format!(
                "match residual {:.3e} exceeds tolerance {tol:.1e}",
                rom.match_residual
            ),
        });
    }
    Ok(())
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-scale..=scale))
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Run {
    let file = load(&a.file)?;
    let plant = need_plant(&file, &a.file)?;
    let name = file_name(&file, &a.file);
    let err = design_err(&name, "simulate");
    let n = plant.n();
    let x0 = match ctx.seed {
        Some(s) => random_vector(&mut ChaCha8Rng::seed_from_u64(s), n, 1.0),
        None => Vector::zeros(n),
    };
    let mut labels: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let trace = match &file.driver {
        // driven plant: η(0) = 1, free response of the cascade
        Some(d) => {
            let nu = d.nu();
            let a_c = block(&[&[&plant.a, &(&plant.b * &d.h)], &[&Mat::zeros(nu, n), &d.f]]);
            let c_c = block(&[&[&plant.c, &(&plant.d * &d.h)]]);
            let mut s0 = Vector::from_element(n + nu, 1.0);
            s0.rows_mut(0, n).copy_from(&x0);
            labels.extend((1..=nu).map(|i| format!("eta{i}")));
            simulate_lti(
                &a_c,
                &Mat::zeros(n + nu, 0),
                &c_c,
                &Mat::zeros(plant.p(), 0),
                None,
                &s0,
                a.horizon,
                a.dt,
            )
        }
        None => {
            let m = plant.m();
            let step = move |_t: f64| Vector::from_element(m, 1.0);
            simulate_lti(
                &plant.a,
                &plant.b,
                &plant.c,
                &plant.d,
                Some(&step),
                &x0,
                a.horizon,
                a.dt,
            )
        }
    }
    .map_err(&err)?;
    let trace = trace.with_labels(labels, (1..=plant.p()).map(|i| format!("y{i}")).collect());
    write_trace(&ctx.out, &name, &trace, false).map_err(io_fail(&name, "simulate"))?;
    let y = trace
        .outputs
        .last()
        .map(|y| y.iter().copied().collect::<Vec<_>>())
        .unwrap_or_default();
    println!(
        "simulated {} samples to t = {}",
        trace.len(),
        trace.times.last().copied().unwrap_or(0.0)
    );
    let summary = json!({
        "status": "ok",
        "command": "simulate",
        "name": name,
        "seed": ctx.seed,
        "samples": trace.len(),
        "final_output": y,
        "initial_state": x0.iter().copied().collect::<Vec<_>>(),
    });
    write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, "simulate"))
}

fn pathways(
    method: &Option<String>,
    fix: &Option<String>,
    est: bool,
) -> std::result::Result<Vec<Method>, Failure> {
    match method {
        Some(m) => {
            let r = resolve_method(m, fix.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
            match (r, est) {
                (Method::Stab(_), false) | (Method::Est(_), true) => Ok(vec![r]),
                _ => Err(Failure::Usage(format!(
                    "method '{m}' does not belong to this demo"
                ))),
            }
        }
        None if fix.is_some() => Err(Failure::Usage("--fix needs --method".into())),
        None if est => Ok(EstPathway::ALL.iter().map(|&p| Method::Est(p)).collect()),
        None => Ok(StabPathway::ALL.iter().map(|&p| Method::Stab(p)).collect()),
    }
}

fn cmd_fourtank(ctx: &Ctx, a: &FourTankArgs, est: bool) -> Run {
    let grid = eps_grid(&a.eps_grid)?;
    let methods = pathways(&a.method, &a.fix, est)?;
    let mut first_failure = None;
    for method in methods {
        let r = match method {
            Method::Stab(p) => fourtank_reg_one(ctx, p, grid.clone(), a),
            Method::Est(p) => fourtank_est_one(ctx, p, grid.clone(), a),
        };
        if let Err(f) = r {
            match f {
                Failure::Usage(_) => return Err(f),
                other if first_failure.is_none() => first_failure = Some(other),
                Failure::Design {
                    name,
                    command,
                    error,
                } => {
                    eprintln!("error [{}]: {error}", error.code());
                    let summary = json!({"status": "error", "command": command, "code": error.code(), "message": error.to_string()});
                    report_write(write_summary(&ctx.out, &name, &summary));
                }
                Failure::Rejected { code, message, .. } => eprintln!("error [{code}]: {message}"),
            }
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn fourtank_reg_one(ctx: &Ctx, p: StabPathway, grid: Option<Vec<f64>>, a: &FourTankArgs) -> Run {
    let name = format!("fourtank-reg-{}", p.to_string().to_ascii_lowercase());
    let command = "demo fourtank-reg";
    let run =
        demos::run_fourtank_reg(p, grid, a.horizon, a.dt).map_err(design_err(&name, command))?;
    let ratio = if run.peak > 0.0 {
        run.final_norm / run.peak
    } else {
        0.0
    };
    let abscissa =
        spectral_abscissa(&run.design.closed_loop_original).map_err(design_err(&name, command))?;
    println!(
        "{p}: abscissa {abscissa:.4e}, |e| peak {:.4e}, final {:.4e} ({:.3}% of peak)",
        run.peak,
        run.final_norm,
        100.0 * ratio
    );
    write_trace(&ctx.out, &name, &run.trace, false).map_err(io_fail(&name, command))?;
    let summary = json!({
        "status": "ok",
        "command": command,
        "name": name,
        "method": p.to_string(),
        "abscissa": abscissa,
        "peak_output": run.peak,
        "final_output": run.final_norm,
        "final_over_peak": ratio,
        "design": run.design,
    });
    write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, command))
}

fn fourtank_est_one(ctx: &Ctx, p: EstPathway, grid: Option<Vec<f64>>, a: &FourTankArgs) -> Run {
    let name = format!("fourtank-est-{}", p.to_string().to_ascii_lowercase());
    let command = "demo fourtank-est";
    let run =
        demos::run_fourtank_est(p, grid, a.horizon, a.dt).map_err(design_err(&name, command))?;
    let rel = run.late_error / demos::DISTURBANCE_AMPLITUDE;
    println!(
        "{p}: late |d - dhat| {:.4e} ({:.3}% of amplitude), decay rate simulated {:.3e} certified {:.3e}",
        run.late_error,
        100.0 * rel,
        run.simulated_rate,
        run.certified_rate
    );
    write_trace(&ctx.out, &name, &run.trace, false).map_err(io_fail(&name, command))?;
    let summary = json!({
        "status": "ok",
        "command": command,
        "name": name,
        "method": p.to_string(),
        "late_error": run.late_error,
        "late_error_over_amplitude": rel,
        "simulated_rate": run.simulated_rate,
        "certified_rate": run.certified_rate,
        "design": run.design,
    });
    write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, command))
}

/// Initial conditions for the observer demo: plant and observer start at
/// rest, the oscillator inside the certified band, the estimate off by up
/// to 0.5 per coordinate. Seeded runs draw all of these at random.
fn vdp_initial(seed: Option<u64>) -> [Vector; 4] {
    match seed {
        None => [
            Vector::zeros(2),
            Vector::from_vec(vec![1.5, 0.5]),
            Vector::zeros(2),
            Vector::from_vec(vec![1.0, 1.0]),
        ],
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x0 = random_vector(&mut rng, 2, 1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let eta0 = Vector::from_vec(vec![
                sign * rng.gen_range(1.2..=2.0),
                rng.gen_range(-1.0..=1.0),
            ]);
            let xhat0 = random_vector(&mut rng, 2, 1.0);
            let etahat0 = &eta0 + random_vector(&mut rng, 2, 0.5);
            [x0, eta0, xhat0, etahat0]
        }
    }
}

fn cmd_vdp(ctx: &Ctx, a: &VdpArgs) -> Run {
    let name = "vdp-observer".to_string();
    let command = "demo vdp-observer";
    let err = design_err(&name, command);
    let ex = vdp_example(VdpParams::default()).map_err(&err)?;
    let grid = vdp_certification_grid(21);
    let pi = ex.pi_solution(&grid).map_err(&err)?;
    let field = ex.field();
    let design = design_nl_observer(
        &ex.plant,
        field.as_ref(),
        &pi,
        &ex.observer_inputs(0.01, a.kappa),
        &grid,
    )
    .map_err(&err)?;
    let [x0, eta0, xhat0, etahat0] = vdp_initial(ctx.seed);
    let run = simulate_nl_observer(
        &ex.plant,
        field,
        ex.output(),
        &design,
        &x0,
        &eta0,
        &xhat0,
        &etahat0,
        a.horizon,
        a.dt,
    )
    .map_err(&err)?;
    let ratio = run.final_error / run.initial_error;
    println!(
        "vdp-observer: error {:.4e} -> {:.4e} (ratio {ratio:.3e}) over t = {}",
        run.initial_error, run.final_error, a.horizon
    );
    write_trace(&ctx.out, &name, &run.trace, true).map_err(io_fail(&name, command))?;
    let v = |x: &Vector| x.iter().copied().collect::<Vec<_>>();
    let summary = json!({
        "status": "ok",
        "command": command,
        "name": name,
        "seed": ctx.seed,
        "example": ex,
        "design": design,
        "initial_conditions": {"x": v(&x0), "eta": v(&eta0), "xhat": v(&xhat0), "etahat": v(&etahat0)},
        "initial_error": run.initial_error,
        "final_error": run.final_error,
        "error_ratio": ratio,
        "step_error_estimate": run.trace.error_estimate,
    });
    write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, command))
}

fn max_gap(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn cmd_moments(ctx: &Ctx, path: &Path) -> Run {
    let file = load(path)?;
    let plant = need_plant(&file, path)?;
    let driver = need_driver(&file, path)?;
    let name = format!("{}-moments", file_name(&file, path));
    let err = design_err(&name, "moments");
    let tol = ctx.tol.unwrap_or(1e-7);
    let js = jordan_structure(&driver.f, None).map_err(&err)?;
    let cp = cp_from_moments(&plant, &js, &driver.h).map_err(&err)?;
    let cd = cd_from_moments(&plant, &js, &driver.g).map_err(&err)?;
    let cp_ref = ssc_primal(&plant, &driver.f, &driver.h).map_err(&err)?;
    let cd_ref = ssc_dual(&plant, &driver.f, &driver.g).map_err(&err)?;
    let (gp, gd) = (max_gap(&cp, &cp_ref.value), max_gap(&cd, &cd_ref.value));
    let sym = symmetry_check(&plant, &js, &driver.g, &driver.h).map_err(&err)?;
    let mut samples = Vec::new();
    for b in &js.blocks {
        let m0 = moment_matrix(&plant, b.lambda, 0).map_err(&err)?;
        let rows: Vec<Vec<(f64, f64)>> = m0
            .row_iter()
            .map(|r| r.iter().map(|z: &C64| (z.re, z.im)).collect())
            .collect();
        samples.push(
            json!({"lambda": (b.lambda.re, b.lambda.im), "block_size": b.size(), "m0": rows}),
        );
    }
    println!("C_p: moments vs Sylvester gap {gp:.3e}; C_d: gap {gd:.3e} (tolerance {tol:.1e})");
    println!(
        "semisimple F: {}; symmetry identity holds: {}",
        js.is_semisimple(),
        sym.identity
    );
    let summary = json!({
        "status": "ok",
        "command": "moments",
        "name": name,
        "tolerance": tol,
        "cp_moments": mat_to_rows(&cp),
        "cp_sylvester": mat_to_rows(&cp_ref.value),
        "cp_gap": gp,
        "cd_moments": mat_to_rows(&cd),
        "cd_sylvester": mat_to_rows(&cd_ref.value),
        "cd_gap": gd,
        "semisimple": js.is_semisimple(),
        "symmetry": sym,
        "frequency_samples": samples,
    });
    write_summary(&ctx.out, &name, &summary).map_err(io_fail(&name, "moments"))?;
    if !(gp <= tol && gd <= tol) {
        return Err(Failure::Rejected {
            name: name.clone(),
            code: "moments.disagreement",
            message: format!(
                "moment and Sylvester routes differ by {:.3e} (tolerance {tol:.1e})",
                gp.max(gd)
            ),
        });
    }
    Ok(())
}
