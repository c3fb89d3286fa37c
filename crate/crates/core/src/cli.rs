//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for bad input, 2 for numerical failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::export::{
    ensure_dir, metadata, operating_point_json, sensitivity_json, to_pretty, voltages_csv,
    write_file, write_sensitivity_csv,
};
use crate::netmodel::{BranchKind, Network};
use crate::oracle::{compare, estimate_all, OracleConfig, Scheme};
use crate::powerflow::{solve_power_flow, Method, OperatingPoint, SolverConfig};
use crate::sensitivity::solve_all;
use crate::sweep::{
    resolve_target, run_sweep, sweep_csv, PowerKind, SweepRange, TAP_SLOPE_SAMPLES,
};

#[derive(Debug, Parser)]
#[command(
    name = "unbalsens",
    version,
    about = "Voltage sensitivities of unbalanced distribution feeders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the power flow and write node voltages.
    Solve(Common),
    /// Compute and write the six sensitivity matrices.
    Sens(Common),
    /// Compare analytical sensitivities with finite differences.
    Validate(ValidateArgs),
    /// Sweep a tap or a nodal injection and record voltages with slopes.
    Sweep(SweepArgs),
    /// Print a summary of the feeder and its operating point.
    Report(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Auto,
    CurrentInjection,
    Newton,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Feeder description (JSON).
    #[arg(long)]
    pub feeder: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Tap overrides, e.g. "reg1=16,reg2=-3".
    #[arg(long, default_value = "")]
    pub taps: String,
    /// Power mismatch tolerance (p.u.).
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    /// Relaxation of the current-injection update, 0.1 to 1.
    #[arg(long, default_value_t = 1.0)]
    pub relaxation: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Threads for the finite-difference re-solves (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Power perturbation (p.u.).
    #[arg(long, default_value_t = 1e-4)]
    pub power_step: f64,
    /// Tap perturbation (taps).
    #[arg(long, default_value_t = 0.1)]
    pub tap_step: f64,
    #[arg(long, value_enum, default_value = "central")]
    pub scheme: SchemeArg,
    /// References at or below this magnitude are left out of MAPE.
    #[arg(long, default_value_t = 1e-8)]
    pub mape_floor: f64,
    /// Tolerance of the finite-difference re-solves (p.u.).
    #[arg(long, default_value_t = 1e-12)]
    pub oracle_tolerance: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Central,
    Forward,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QuantityArg {
    P,
    Q,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Regulator whose tap is swept.
    #[arg(long, conflicts_with = "node")]
    pub regulator: Option<String>,
    /// Node (bus.phase) whose injection is swept, in kW or kvar.
    #[arg(long)]
    pub node: Option<String>,
    #[arg(long, value_enum, default_value = "p")]
    pub quantity: QuantityArg,
    /// start:stop:step; defaults to -16:16:1 for taps and -1000:1000:250 for power.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
}

impl Common {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            relaxation: self.relaxation,
            method: match self.method {
                MethodArg::Auto => Method::Auto,
                MethodArg::CurrentInjection => Method::CurrentInjection,
                MethodArg::Newton => Method::Newton,
            },
            warm_start: None,
        }
    }

    fn load(&self) -> Result<(Network, Vec<f64>, SolverConfig)> {
        let net = Network::from_file(&self.feeder)?;
        let taps = net.taps_with_overrides(&self.taps)?;
        let solver = self.solver();
        solver.validate()?;
        Ok((net, taps, solver))
    }
}

fn solve(common: &Common) -> Result<(Network, OperatingPoint, SolverConfig)> {
    let (net, taps, solver) = common.load()?;
    let op = solve_power_flow(&net, &taps, &solver, None)?;
    Ok((net, op, solver))
}

fn written(out: &mut dyn Write, path: &Path) -> Result<()> {
    writeln!(out, "wrote {}", path.display()).map_err(|e| Error::Output(e.to_string()))
}

fn cmd_solve(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let (net, op, solver) = solve(c)?;
    ensure_dir(&c.out)?;
    match c.format {
        Format::Csv => {
            let path = c.out.join("voltages.csv");
            write_file(&path, &voltages_csv(&net, &op))?;
            written(out, &path)?;
            let meta = c.out.join("metadata.json");
            write_file(&meta, &to_pretty(&metadata(&net, &op, &solver)))?;
            written(out, &meta)?;
        }
        Format::Json => {
            let path = c.out.join("operating_point.json");
            write_file(&path, &to_pretty(&operating_point_json(&net, &op, &solver)))?;
            written(out, &path)?;
        }
    }
    Ok(0)
}

fn cmd_sens(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let (net, op, solver) = solve(c)?;
    let sens = solve_all(&net, &op)?;
    ensure_dir(&c.out)?;
    match c.format {
        Format::Csv => {
            for path in write_sensitivity_csv(&c.out, &net, &sens)? {
                written(out, &path)?;
            }
            let meta = c.out.join("metadata.json");
            let mut doc = metadata(&net, &op, &solver);
            doc["diagnostics"] = serde_json::to_value(&sens.diagnostics)
                .map_err(|e| Error::Output(e.to_string()))?;
            write_file(&meta, &to_pretty(&doc))?;
            written(out, &meta)?;
        }
        Format::Json => {
            let path = c.out.join("sensitivities.json");
            write_file(
                &path,
                &to_pretty(&sensitivity_json(&net, &op, &solver, &sens)),
            )?;
            written(out, &path)?;
        }
    }
    if sens.diagnostics.ill_conditioned {
        writeln!(
            out,
            "warning: condition estimate {:.3e} exceeds 1e12",
            sens.diagnostics.condition_estimate
        )
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    Ok(0)
}

fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, op, solver) = solve(&a.common)?;
    let cfg = OracleConfig {
        power_step: a.power_step,
        tap_step: a.tap_step,
        scheme: match a.scheme {
            SchemeArg::Central => Scheme::Central,
            SchemeArg::Forward => Scheme::Forward,
        },
        mape_floor: a.mape_floor,
        workers: a.workers,
        solver: SolverConfig {
            tolerance: a.oracle_tolerance,
            ..solver.clone()
        },
    };
    cfg.validate()?;
    let sens = solve_all(&net, &op)?;
    let est = estimate_all(&net, &op, &cfg)?;
    let report = compare(&net, &sens, &est, cfg.mape_floor)?;
    writeln!(out, "{report}").map_err(|e| Error::Output(e.to_string()))?;
    ensure_dir(&a.common.out)?;
    let path = match a.common.format {
        Format::Json => {
            let path = a.common.out.join("validation.json");
            let doc = serde_json::json!({
                "metadata": metadata(&net, &op, &solver),
                "oracle": {
                    "power_step_pu": cfg.power_step,
                    "tap_step": cfg.tap_step,
                    "scheme": cfg.scheme,
                    "tolerance_pu": cfg.solver.tolerance,
                },
                "report": report,
            });
            write_file(&path, &to_pretty(&doc))?;
            path
        }
        Format::Csv => {
            let path = a.common.out.join("validation.csv");
            let mut csv = String::from(
                "matrix,mape_percent,mae,max_abs_error,included,excluded,non_finite\n",
            );
            for m in &report.matrices {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    m.name,
                    crate::export::format_number(m.mape_percent),
                    crate::export::format_number(m.mae),
                    crate::export::format_number(m.max_abs_error),
                    m.included,
                    m.excluded,
                    m.non_finite
                );
            }
            write_file(&path, &csv)?;
            path
        }
    };
    written(out, &path)?;
    Ok(if report.failures.is_empty() { 0 } else { 2 })
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, taps, solver) = a.common.load()?;
    let kind = match a.quantity {
        QuantityArg::P => PowerKind::P,
        QuantityArg::Q => PowerKind::Q,
    };
    let target = resolve_target(&net, a.regulator.as_deref(), a.node.as_deref(), kind)?;
    let range = match (&a.range, &target) {
        (Some(r), _) => SweepRange::parse(r)?,
        (None, crate::sweep::SweepTarget::Tap { regulator }) => {
            let m = &net.model.regulators[*regulator].model;
            SweepRange::new(f64::from(m.tap_min), f64::from(m.tap_max), 1.0)?
        }
        (None, _) => SweepRange::new(-1000.0, 1000.0, 250.0)?,
    };
    let samples: Vec<f64> = TAP_SLOPE_SAMPLES
        .iter()
        .copied()
        .filter(|x| *x >= range.start && *x <= range.stop)
        .collect();
    let result = run_sweep(&net, &taps, &target, range, &samples, &solver)?;
    ensure_dir(&a.common.out)?;
    let path = match a.common.format {
        Format::Csv => {
            let path = a.common.out.join("sweep.csv");
            write_file(&path, &sweep_csv(&result))?;
            path
        }
        Format::Json => {
            let path = a.common.out.join("sweep.json");
            let doc = serde_json::to_value(&result).map_err(|e| Error::Output(e.to_string()))?;
            write_file(&path, &to_pretty(&doc))?;
            path
        }
    };
    written(out, &path)?;
    Ok(0)
}

fn cmd_report(c: &Common, out: &mut dyn Write) -> Result<i32> {
    let (net, op, _) = solve(c)?;
    let sens = solve_all(&net, &op)?;
    let m = &net.model;
    let mut s = String::new();
    let count = |k: BranchKind| m.branches.iter().filter(|b| b.kind == k).count();
    let _ = writeln!(s, "feeder       {}", c.feeder.display());
    let _ = writeln!(
        s,
        "buses        {} ({} nodes, {} slack)",
        m.buses.len(),
        net.node_count(),
        net.index.slack().len()
    );
    let _ = writeln!(
        s,
        "elements     {} lines, {} switches, {} transformers, {} capacitors, {} regulators",
        count(BranchKind::Line),
        count(BranchKind::Switch),
        count(BranchKind::Transformer),
        count(BranchKind::Capacitor),
        m.regulators.len()
    );
    let delta = m
        .buses
        .iter()
        .filter(|b| b.composite.delta.is_some())
        .count();
    let wye = m.buses.iter().filter(|b| b.composite.wye.is_some()).count();
    let ders: usize = m
        .buses
        .iter()
        .map(|b| b.composite.ders_1ph.len() + usize::from(b.composite.der_3ph.is_some()))
        .sum();
    let _ = writeln!(
        s,
        "attachments  {wye} wye load buses, {delta} delta load buses, {ders} DERs"
    );
    for (reg, t) in m.regulators.iter().zip(&op.taps) {
        let _ = writeln!(s, "regulator    {} tap {t}", reg.id);
    }
    let _ = writeln!(
        s,
        "power flow   {:?}, {} iterations, mismatch {:.3e} p.u.",
        op.method, op.iterations, op.mismatch
    );
    let mags = op.magnitudes();
    let (imin, imax) = (mags.argmin().0, mags.argmax().0);
    let _ = writeln!(
        s,
        "voltage min  {:.6} p.u. at {}",
        mags[imin],
        net.index.node(imin)
    );
    let _ = writeln!(
        s,
        "voltage max  {:.6} p.u. at {}",
        mags[imax],
        net.index.node(imax)
    );
    let d = &sens.diagnostics;
    let _ = writeln!(
        s,
        "sensitivity  residual {:.3e}, condition {:.3e}{}",
        d.max_residual(),
        d.condition_estimate,
        if d.ill_conditioned {
            " (ill-conditioned)"
        } else {
            ""
        }
    );
    write!(out, "{s}").map_err(|e| Error::Output(e.to_string()))?;
    Ok(0)
}

/// Runs one parsed command, writing progress to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Solve(c) => cmd_solve(c, out),
        Command::Sens(c) => cmd_sens(c, out),
        Command::Validate(a) => cmd_validate(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Report(c) => cmd_report(c, out),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
