//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on a failed check or runtime error, 2 on a
//! usage error. `ZIPGRID_THREADS` caps the number of worker threads.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use zipgrid_core::analysis::omega::{omega_scan, OmegaEntry};
use zipgrid_core::analysis::{
    closed_loop_sign_suite, ensemble_goal_metrics, equilibrium_residuals, identity_suite,
    omega_matrix, passivity_suite, segment_equilibria, AnalysisContext, SamplingBox, Variant,
};
use zipgrid_core::output::{
    scan_svg, trajectory_svg, write_ensemble_csv, write_scan_csv, write_trajectory_csv,
};
use zipgrid_core::scenario::{bundled, parse_scenario, BUNDLED};
use zipgrid_core::{check_assumptions, run_ensemble, simulate, Scenario};

pub const THREADS_ENV: &str = "ZIPGRID_THREADS";

#[derive(Parser, Debug)]
#[command(name = "zipgrid", version, about = "Stochastic ZIP-load DC network toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// CSV destination; stdout if omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Also draw the columns of `--plot` as an SVG line chart.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, default_value = "v")]
        plot: String,
    },
    /// Run independent members and write per-record statistics.
    Ensemble {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 64)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Fraction of each load segment used as its tail window.
        #[arg(long, default_value_t = 0.2)]
        tail: f64,
    },
    /// Stochastic assumptions and Ω membership at every segment's steady state.
    Check {
        #[command(flatten)]
        source: Source,
    },
    /// Solve the steady state of every load segment.
    Equilibrium {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
    },
    /// Evaluate the Ω diagonal entry over a voltage × constant-power grid.
    Scan(ScanArgs),
    /// Sampling suites for the Itô derivative of the storage functions.
    Lyapunov {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        identity_tolerance: f64,
        #[arg(long, default_value_t = 1e-9)]
        sign_tolerance: f64,
    },
    /// Print the scenario with every default filled in.
    Normalize {
        #[command(flatten)]
        source: Source,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Source {
    /// Scenario file (TOML).
    #[arg(long, short, conflicts_with = "bundled")]
    pub scenario: Option<PathBuf>,
    /// Name of a bundled scenario.
    #[arg(long)]
    pub bundled: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ScanArgs {
    #[arg(long, default_value_t = 0.045)]
    pub g_star: f64,
    #[arg(long, default_value_t = 380.0)]
    pub v_bar: f64,
    #[arg(long, default_value_t = 1e3)]
    pub pi: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    pub mu_p: f64,
    #[arg(long, default_value_t = 1.3)]
    pub mu_g: f64,
    #[arg(long, default_value_t = 60.0)]
    pub v_min: f64,
    #[arg(long, default_value_t = 800.0)]
    pub v_max: f64,
    #[arg(long, default_value_t = 5.0)]
    pub p_min: f64,
    #[arg(long, default_value_t = 200.0)]
    pub p_max: f64,
    #[arg(long, default_value_t = 100)]
    pub v_points: usize,
    #[arg(long, default_value_t = 100)]
    pub p_points: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

impl Source {
    pub fn load(&self) -> anyhow::Result<Scenario> {
        match (&self.scenario, &self.bundled) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_scenario(&text).with_context(|| format!("in {}", path.display()))
            }
            (None, Some(name)) => Ok(bundled(name)?),
            (None, None) => Ok(bundled(BUNDLED[0])?),
        }
    }
}

fn override_integration(s: &mut Scenario, seed: Option<u64>, t_end: Option<f64>, dt: Option<f64>) -> anyhow::Result<()> {
    if let Some(seed) = seed {
        s.integration.seed = seed;
    }
    if let Some(t) = t_end {
        s.integration.t_end = t;
    }
    if let Some(dt) = dt {
        let interval = s.integration.dt * s.integration.record_stride as f64;
        s.integration.dt = dt;
        s.integration.record_stride = ((interval / dt).round() as usize).max(1);
    }
    s.validate()?;
    Ok(())
}

fn write_to<F>(path: Option<&Path>, out: &mut dyn Write, f: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> zipgrid_core::Result<()>,
{
    match path {
        Some(p) => {
            let mut file = std::io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            f(&mut file)?;
            file.flush()?;
        }
        None => f(out)?,
    }
    Ok(())
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Ok,
    CheckFailed,
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Simulate {
            source,
            seed,
            t_end,
            dt,
            output,
            svg,
            plot,
        } => {
            let mut s = source.load()?;
            override_integration(&mut s, seed, t_end, dt)?;
            let (traj, failure) = match simulate(&s) {
                Ok(t) => (t, None),
                Err(f) => (f.partial.clone(), Some(f)),
            };
            write_to(output.as_deref(), out, |w| write_trajectory_csv(&traj, w))?;
            if let Some(p) = svg {
                fs::write(&p, trajectory_svg(&traj, &plot))
                    .with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(f) = failure {
                bail!("simulation stopped: {f}");
            }
            Ok(Outcome::Ok)
        }
        Command::Ensemble {
            source,
            runs,
            seed,
            t_end,
            dt,
            output,
            tail,
        } => {
            let mut s = source.load()?;
            override_integration(&mut s, None, t_end, dt)?;
            let Some(path) = output else {
                bail!("`ensemble` needs --output for the statistics CSV");
            };
            let e = run_ensemble(&s, runs, seed)?;
            write_to(Some(&path), out, |w| write_ensemble_csv(&e.stats, w))?;
            writeln!(out, "members: {} ok, {} failed", e.stats.count, runs - e.stats.count)?;
            for (r, f) in e.failures() {
                writeln!(out, "  run {r}: {f}")?;
            }
            let segments = s.loads.segments();
            let horizon = s.integration.t_end;
            for (k, seg) in segments.iter().enumerate().take_while(|(_, g)| g.start < horizon) {
                let end = segments.get(k + 1).map_or(horizon, |n| n.start.min(horizon));
                let window = (end - tail * (end - seg.start), end);
                let m = ensemble_goal_metrics(&e.stats, &s.controller.q, &s.controller.v_star, window)?;
                writeln!(
                    out,
                    "segment {k} [{:.3}, {:.3}] s: dispersion {:.6e} A ({:.4}% of mean {:.6} A), weighted voltage {:.6} V (error {:.3e})",
                    window.0,
                    window.1,
                    m.dispersion,
                    100.0 * m.relative_dispersion(),
                    m.mean_current,
                    m.weighted_voltage,
                    m.voltage_error
                )?;
            }
            Ok(if e.stats.count == runs { Outcome::Ok } else { Outcome::CheckFailed })
        }
        Command::Check { source } => {
            let s = source.load()?;
            let a = check_assumptions(&s.stochastic);
            let mut ok = true;
            for (name, flags) in [
                ("current  μ_I > σ_I²/2 - 1/2", &a.current),
                ("power    μ_P > σ_P²", &a.power),
                ("conductance μ_G > σ_G²", &a.conductance),
            ] {
                let pass = flags.iter().all(|f| *f);
                ok &= pass;
                writeln!(out, "{} assumption {name}: {flags:?}", mark(pass))?;
            }
            let sys = s.closed_loop()?;
            let eqs = segment_equilibria(&sys, &s.loads)?;
            for (k, (seg, eq)) in s.loads.segments().iter().zip(&eqs).enumerate() {
                for variant in [Variant::ZStarIPStar, Variant::ZStarIP, Variant::Zip] {
                    let r = omega_matrix(&eq.v, &eq.v, &seg.constants, &s.weights, &s.stochastic, variant)?;
                    ok &= r.member;
                    writeln!(
                        out,
                        "{} segment {k}: steady state in Ω_{} (diagonal {:?})",
                        mark(r.member),
                        variant.label(),
                        r.diagonal
                    )?;
                }
            }
            Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
        }
        Command::Equilibrium { source, tolerance } => {
            let s = source.load()?;
            let sys = s.closed_loop()?;
            let mut ok = true;
            for (k, seg) in s.loads.segments().iter().enumerate() {
                let eq = zipgrid_core::analysis::solve_equilibrium(&sys, &seg.constants)?;
                let r = equilibrium_residuals(&sys, &seg.constants, &eq);
                let pass = r.max() < tolerance;
                ok &= pass;
                writeln!(out, "segment {k} (from t = {} s), {} Newton iterations", seg.start, eq.iterations)?;
                writeln!(out, "  i_g*  = {:.12}", eq.ig_star)?;
                writeln!(out, "  I_g   = {:?}", eq.ig)?;
                writeln!(out, "  V     = {:?}", eq.v)?;
                writeln!(out, "  I     = {:?}", eq.i_line)?;
                writeln!(out, "  ξ     = {:?}", eq.xi)?;
                writeln!(out, "  {} max residual {:.3e} (tolerance {tolerance:.0e})", mark(pass), r.max())?;
            }
            Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
        }
        Command::Scan(a) => {
            let entry = OmegaEntry {
                g_star: a.g_star,
                p_star: 0.0,
                v_bar: a.v_bar,
                pi: a.pi,
                sigma: a.sigma,
                lambda: a.lambda,
                mu_p: a.mu_p,
                mu_g: a.mu_g,
            };
            let scan = omega_scan(
                entry,
                (a.v_min, a.v_max),
                (a.p_min, a.p_max),
                a.v_points,
                a.p_points,
                Variant::Zip,
            )?;
            if let Some(p) = &a.output {
                write_to(Some(p), out, |w| write_scan_csv(&scan, w))?;
            }
            if let Some(p) = &a.svg {
                fs::write(p, scan_svg(&scan)).with_context(|| format!("writing {}", p.display()))?;
            }
            let neg = scan.negative_cells();
            writeln!(
                out,
                "{} {} of {} cells positive; min L_ii = {:.6e}",
                mark(neg == 0),
                a.v_points * a.p_points - neg,
                a.v_points * a.p_points,
                scan.min()
            )?;
            Ok(if neg == 0 { Outcome::Ok } else { Outcome::CheckFailed })
        }
        Command::Lyapunov {
            source,
            samples,
            inputs,
            seed,
            identity_tolerance,
            sign_tolerance,
        } => {
            let s = source.load()?;
            let sys = s.closed_loop()?;
            let loads = &s.loads.base;
            let eq = zipgrid_core::analysis::solve_equilibrium(&sys, loads)?;
            let ctx = AnalysisContext {
                sys: &sys,
                loads,
                eq: &eq,
                weights: &s.weights,
            };
            let bx = SamplingBox::default();
            let mut ok = true;
            for variant in [Variant::ZStarIPStar, Variant::ZStarIP, Variant::Zip] {
                let r = identity_suite(&ctx, variant, samples, seed, &bx)?;
                ok &= r.passed(identity_tolerance);
                writeln!(
                    out,
                    "{} identity Ω_{}: max |direct - expanded|/(1+|direct|) = {:.3e}; closed-form defect leaves {:.3e}",
                    mark(r.passed(identity_tolerance)),
                    variant.label(),
                    r.max_scaled_error,
                    r.max_unexplained
                )?;
                let p = passivity_suite(&ctx, variant, samples, inputs, seed, sign_tolerance, &bx)?;
                ok &= p.violations == 0;
                writeln!(
                    out,
                    "{} passivity Ω_{}: {} of {} evaluations violate, max excess {:.3e}",
                    mark(p.violations == 0),
                    variant.label(),
                    p.violations,
                    p.evaluations,
                    p.max_excess
                )?;
            }
            let r = closed_loop_sign_suite(&ctx, samples, seed, sign_tolerance, &bx)?;
            ok &= r.expanded_violations == 0;
            writeln!(
                out,
                "{} closed-loop sign (expanded): max {:.3e}, {} violations",
                mark(r.expanded_violations == 0),
                r.max_expanded,
                r.expanded_violations
            )?;
            writeln!(
                out,
                "info closed-loop sign (direct): max {:.3e}, {} of {} samples positive",
                r.max_direct, r.direct_violations, r.samples
            )?;
            Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
        }
        Command::Normalize { source } => {
            let s = source.load()?;
            write!(out, "{}", s.to_toml()?)?;
            Ok(Outcome::Ok)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be a positive integer, got 0");
        }
        // A pool that is already built keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parse `args`, run the command and return the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let result = configure_threads().and_then(|_| execute(cli, out));
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::CheckFailed) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}
