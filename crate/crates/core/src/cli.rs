//! Command-line front end. Commands return their process exit code.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::SeedableRng;

use crate::check::jacobian_self_test;
use crate::scenario::{load_scenario, Simulation, TaskKind};
use crate::KinematicChain;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_SAFETY: u8 = 4;

#[derive(Parser)]
#[command(name = "hqp", about = "Hierarchical QP inverse kinematics for surgical tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write per-step CSV and summary JSON.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Control period override (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Number of steps override.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        disable_manipulability: bool,
        /// Accepted for interface symmetry; the simulation is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare analytic Jacobians against finite differences.
    Check {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the version.
    Version,
}

fn run(
    out_stream: &mut dyn Write,
    scenario: PathBuf,
    out: PathBuf,
    dt: Option<f64>,
    steps: Option<usize>,
    disable_manipulability: bool,
) -> u8 {
    let mut config = match load_scenario(&scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(dt) = dt {
        if !(dt > 0.0) {
            eprintln!("error: --dt must be > 0");
            return EXIT_CONFIG;
        }
        config.set_dt(dt);
    }
    if let Some(n) = steps {
        config.set_steps(n);
    }
    if disable_manipulability {
        config.disable(TaskKind::Manipulability);
    }

    let mut sim = Simulation::new(config);
    sim.run();
    let report = sim.report();
    if let Err(e) = report.write(&out) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    for (i, c) in report.chains.iter().enumerate() {
        let s = &c.summary;
        let _ = writeln!(
            out_stream,
            "chain {i}: steps {} ee avg {:.3e} m max {:.3e} m, rcm avg {:.3e} m max {:.3e} m, mu avg {:.4}, min clearance {}",
            s.steps,
            s.avg_ee_err_m,
            s.max_ee_err_m,
            s.avg_rcm_err_m,
            s.max_rcm_err_m,
            s.avg_mu,
            s.min_clearance_m.map_or("none".to_string(), |c| format!("{c:.4} m")),
        );
    }
    if let Some(f) = &report.failure {
        eprintln!("solver failure: {f}");
        return EXIT_SOLVER;
    }
    if !report.safety_violations.is_empty() {
        for v in &report.safety_violations {
            eprintln!("safety violation: {v}");
        }
        return EXIT_SAFETY;
    }
    EXIT_OK
}

fn check(out_stream: &mut dyn Write, chain: PathBuf, samples: usize, tol: f64, seed: u64) -> u8 {
    let chain = match KinematicChain::from_file(&chain) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let report = match jacobian_self_test(&chain, samples, tol, &mut rng) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CHECK_FAILED;
        }
    };
    let worst = report.worst().map_or(0.0, |c| c.max_error);
    let _ =
        writeln!(out_stream, "{} jacobians checked, worst deviation {worst:.3e} (tol {tol:e})", report.checks.len());
    if report.passed() {
        EXIT_OK
    } else {
        for c in report.checks.iter().filter(|c| c.max_error > tol) {
            eprintln!("sample {} frame {}: deviation {:.3e}", c.sample, c.frame, c.max_error);
        }
        EXIT_CHECK_FAILED
    }
}

/// Parse `args` (including the program name) and execute the command,
/// writing normal output to `out`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            eprint!("{}", e.render());
            return EXIT_CONFIG;
        }
        Err(e) => {
            // --help and --version
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match cli.command {
        Command::Run { scenario, out: dir, dt, steps, disable_manipulability, seed } => {
            if let Some(seed) = seed {
                log::info!("seed {seed} has no effect on a deterministic run");
            }
            run(out, scenario, dir, dt, steps, disable_manipulability)
        }
        Command::Check { chain, samples, tol, seed } => check(out, chain, samples, tol, seed),
        Command::Version => {
            let _ = writeln!(out, "hqp {}", env!("CARGO_PKG_VERSION"));
            EXIT_OK
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const Q0: &str = "[0.0, 0.5, 0.0, 1.6, 0.0, 0.74, 0.0, 0.0, 0.0, 0.0]";

    fn scenario(dir: &Path, gains: &str, obstacles: &str) -> PathBuf {
        std::fs::write(dir.join("chain.json"), crate::BUNDLED_CHAIN).unwrap();
        let text = format!(
            r#"{{
  "name": "cli", "dt": 0.001, "duration": 0.01, "gains": {gains},
  "chains": [{{"file": "chain.json", "q0": {Q0}, "trocar": {{"shaft_fraction": 0.6}},
              "trajectory": {{"type": "circle", "normal": [0, 0, 1], "radius": 0.02, "period": 10}}}}],
  "obstacles": {obstacles}
}}"#
        );
        let path = dir.join("scenario.json");
        std::fs::write(&path, text).unwrap();
        path
    }

    fn cli(args: &[&str]) -> (u8, String) {
        let mut out = Vec::new();
        let code = run_cli(std::iter::once("hqp").chain(args.iter().copied()), &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    fn run_in(dir: &Path, path: &Path, extra: &[&str]) -> (u8, String) {
        let out = dir.join("out");
        let mut args = vec!["run", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        cli(&args)
    }

    #[test]
    fn run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), "{}", "[]");
        let (code, text) = run_in(dir.path(), &path, &["--steps", "3", "--seed", "9"]);
        assert_eq!(code, EXIT_OK);
        assert!(text.starts_with("chain 0: steps 3"), "{text}");
        let csv = std::fs::read_to_string(dir.path().join("out/chain0_steps.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(dir.path().join("out/chain0_summary.json").exists());
    }

    #[test]
    fn dt_override_changes_step_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), "{}", "[]");
        let (code, text) = run_in(dir.path(), &path, &["--dt", "0.005", "--disable-manipulability"]);
        assert_eq!(code, EXIT_OK);
        assert!(text.starts_with("chain 0: steps 2"), "{text}");
        assert_eq!(run_in(dir.path(), &path, &["--dt=-1"]).0, EXIT_CONFIG);
    }

    #[test]
    fn config_errors_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        assert_eq!(run_in(dir.path(), &missing, &[]).0, EXIT_CONFIG);
        let bad = scenario(dir.path(), r#"{"eps_c": -1}"#, "[]");
        assert_eq!(run_in(dir.path(), &bad, &[]).0, EXIT_CONFIG);
        assert_eq!(cli(&["run"]).0, EXIT_CONFIG);
        assert_eq!(cli(&["frobnicate"]).0, EXIT_CONFIG);
    }

    #[test]
    fn solver_failure_exits_3() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), r#"{"k_r_tracking": 1e308}"#, "[]");
        assert_eq!(run_in(dir.path(), &path, &[]).0, EXIT_SOLVER);
    }

    #[test]
    fn penetration_exits_4() {
        let dir = tempfile::tempdir().unwrap();
        let path = scenario(dir.path(), "{}", r#"[{"type": "sphere", "center": [0.6767, 0, 0.0403], "radius": 0.01}]"#);
        assert_eq!(run_in(dir.path(), &path, &[]).0, EXIT_SAFETY);
    }

    #[test]
    fn check_command() {
        let dir = tempfile::tempdir().unwrap();
        let chain = dir.path().join("chain.json");
        std::fs::write(&chain, crate::BUNDLED_CHAIN).unwrap();
        let chain = chain.to_str().unwrap();
        let (code, text) = cli(&["check", "--chain", chain, "--samples", "3"]);
        assert_eq!(code, EXIT_OK, "{text}");
        assert_eq!(cli(&["check", "--chain", chain, "--samples", "1", "--tol", "0"]).0, EXIT_CHECK_FAILED);
        std::fs::write(dir.path().join("broken.json"), "{").unwrap();
        let broken = dir.path().join("broken.json");
        assert_eq!(cli(&["check", "--chain", broken.to_str().unwrap()]).0, EXIT_CONFIG);
    }

    #[test]
    fn version_prints_package_version() {
        let (code, text) = cli(&["version"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(text.trim(), format!("hqp {}", env!("CARGO_PKG_VERSION")));
    }
}
