//! The `ppf` command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ppf_core::error::{Error, Result};
use ppf_core::filter::{run_filter, write_diagnostics_csv, FilterConfig};
use ppf_core::model::{simulate_truth, Trajectory};
use ppf_core::resampling::Variant;

use crate::bench::{sweep, write_rows_csv};
use crate::report::speedup_report;
use crate::scenario::{generate, ScenarioKind};
use crate::verify::verify;

pub const EXIT_MISMATCH: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "ppf",
    version,
    about = "Particle filter runs, oracle verification and redistribution benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args, Debug)]
struct Output {
    /// Destination file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the SIR filter on a simulated or recorded trajectory.
    Filter {
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value = "atz", value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Horizon of the simulated trajectory.
        #[arg(long, default_value_t = 50)]
        t: usize,
        /// Resample when ESS is at most this value; defaults to N / 2.
        #[arg(long)]
        threshold: Option<f64>,
        /// Seed of the simulated trajectory; defaults to --seed.
        #[arg(long)]
        truth_seed: Option<u64>,
        /// Read measurements from this CSV instead of simulating them.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Check every variant against the sequential oracle over random inputs.
    Verify {
        #[arg(long, default_value_t = 4096)]
        n_max: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Sweep scenarios, variants, sizes and worker counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "atz,nested", value_parser = parse_variant)]
        variant: Vec<Variant>,
        /// Sizes as `a..b` (powers of two from a to b) or a comma list.
        #[arg(long, default_value = "1024..65536", value_parser = parse_sizes)]
        n: Sizes,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        p: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "random-weights", value_parser = parse_scenario)]
        scenario: Vec<ScenarioKind>,
        /// Timed iterations per cell.
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write speedup and scaling ratios here.
        #[arg(long)]
        speedup_out: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Print a generated resampling input.
    Scenario {
        #[arg(long, default_value = "random-weights", value_parser = parse_scenario)]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Clone, Debug)]
struct Sizes(Vec<usize>);

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(s: &str) -> std::result::Result<ScenarioKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sizes(s: &str) -> std::result::Result<Sizes, String> {
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad size `{v}`: {e}"))
    };
    let sizes = match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if !a.is_power_of_two() || !b.is_power_of_two() || a > b {
                return Err(format!("range `{s}` needs powers of two a <= b"));
            }
            (a.trailing_zeros()..=b.trailing_zeros())
                .map(|e| 1 << e)
                .collect()
        }
        None => s.split(',').map(num).collect::<std::result::Result<_, _>>()?,
    };
    Ok(Sizes(sizes))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    writeln!(w)?;
    Ok(())
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Filter {
            n,
            p,
            variant,
            seed,
            t,
            threshold,
            truth_seed,
            trajectory,
            output,
        } => {
            let mut cfg = FilterConfig::new(n, variant);
            cfg.workers = p;
            cfg.seed = seed;
            if let Some(nt) = threshold {
                cfg.threshold = nt;
            }
            let traj = match trajectory {
                Some(path) => Trajectory::read_csv(File::open(path)?)?,
                None => {
                    cfg.model.horizon = t;
                    simulate_truth(&cfg.model, truth_seed.unwrap_or(seed))?
                }
            };
            cfg.model.horizon = traj.len();
            let steps = run_filter(&cfg, &traj)?;
            match output.format {
                Format::Csv => write_diagnostics_csv(sink(output.out.as_deref())?, &steps)?,
                Format::Json => write_json(output.out.as_deref(), &steps)?,
            }
            Ok(0)
        }
        Command::Verify {
            n_max,
            trials,
            seed,
            output,
        } => {
            let report = verify(n_max, trials, seed)?;
            match output.format {
                Format::Csv => {
                    let mut w = sink(output.out.as_deref())?;
                    for s in &report.sizes {
                        writeln!(w, "N={} trials={} mismatches={}", s.n, s.trials, s.mismatches)?;
                        for f in &s.failures {
                            writeln!(w, "  {f}")?;
                        }
                    }
                    writeln!(w, "{} mismatches", report.mismatches())?;
                }
                Format::Json => write_json(output.out.as_deref(), &report)?,
            }
            Ok(if report.mismatches() == 0 {
                0
            } else {
                EXIT_MISMATCH
            })
        }
        Command::Bench {
            variant,
            n,
            p,
            scenario,
            trials,
            seed,
            speedup_out,
            output,
        } => {
            let rows = sweep(&scenario, &variant, &n.0, &p, trials, seed)?;
            match output.format {
                Format::Csv => write_rows_csv(sink(output.out.as_deref())?, &rows)?,
                Format::Json => write_json(output.out.as_deref(), &rows)?,
            }
            if let Some(path) = speedup_out {
                let report = speedup_report(&rows)?;
                match output.format {
                    Format::Csv => write_rows_csv(sink(Some(&path))?, &report)?,
                    Format::Json => write_json(Some(&path), &report)?,
                }
            }
            Ok(0)
        }
        Command::Scenario {
            scenario,
            n,
            seed,
            output,
        } => {
            let s = generate(scenario, n, seed)?;
            match output.format {
                Format::Csv => s.write_csv(sink(output.out.as_deref())?)?,
                Format::Json => write_json(output.out.as_deref(), &s.to_json())?,
            }
            Ok(0)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code:
/// 0 on success, 1 on a verification mismatch, 2 on usage or configuration errors.
pub fn main<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ppf_core::model::ModelParams;
    use tempfile::TempDir;

    /// Runs `ppf args... --out <file>` and returns the exit code and the file contents.
    fn ppf(dir: &TempDir, args: &[&str]) -> (u8, String) {
        let out = dir.path().join("out");
        let _ = std::fs::remove_file(&out);
        let mut argv = vec!["ppf"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--out", out.to_str().unwrap()]);
        let code = main(argv);
        (code, std::fs::read_to_string(&out).unwrap_or_default())
    }

    fn estimates(csv: &str) -> Vec<(bool, f64)> {
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("#schema=1"));
        assert_eq!(lines.next(), Some("k,ess,resampled,mu,supersteps,moved_elements"));
        lines
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[2].parse().unwrap(), f[3].parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn filter_variants_agree() {
        let dir = TempDir::new().unwrap();
        let run = |variant: &str| {
            let (code, text) = ppf(
                &dir,
                &[
                    "filter",
                    "--n",
                    "4096",
                    "--variant",
                    variant,
                    "--t",
                    "50",
                    "--seed",
                    "3",
                    "--p",
                    "2",
                ],
            );
            assert_eq!(code, 0);
            estimates(&text)
        };
        let atz = run("atz");
        let seq = run("sequential");
        assert_eq!(atz.len(), 50);
        for ((ra, a), (rs, s)) in atz.iter().zip(&seq) {
            assert_eq!(ra, rs);
            assert!((a - s).abs() <= 1e-9 * a.abs().max(s.abs()));
        }
    }

    #[test]
    fn filter_reads_a_trajectory_and_writes_json() {
        let dir = TempDir::new().unwrap();
        let traj_path = dir.path().join("traj.csv");
        let params = ModelParams {
            horizon: 7,
            ..ModelParams::default()
        };
        simulate_truth(&params, 4)
            .unwrap()
            .write_csv(File::create(&traj_path).unwrap())
            .unwrap();
        let (code, text) = ppf(
            &dir,
            &[
                "filter",
                "--n",
                "64",
                "--trajectory",
                traj_path.to_str().unwrap(),
                "--format",
                "json",
            ],
        );
        assert_eq!(code, 0);
        let steps: serde_json::Value = serde_json::from_str(&text).unwrap();
        let steps = steps.as_array().unwrap();
        assert_eq!(steps.len(), 7);
        assert!(steps
            .iter()
            .all(|s| s["ess"].as_f64().unwrap() >= 1.0 && s["stats"]["supersteps"].is_u64()));
    }

    #[test]
    fn threshold_zero_never_resamples() {
        let dir = TempDir::new().unwrap();
        let (code, text) = ppf(&dir, &["filter", "--n", "32", "--t", "10", "--threshold", "0"]);
        assert_eq!(code, 0);
        assert!(estimates(&text).iter().all(|(r, _)| !r));
    }

    #[test]
    fn usage_errors_exit_2() {
        let dir = TempDir::new().unwrap();
        for args in [
            &["filter", "--n", "12"][..],
            &["filter", "--n", "16", "--p", "32"],
            &["filter", "--variant", "best"],
            &["filter", "--threshold", "-1"],
            &["bench", "--n", "100..1000"],
            &["bench", "--scenario", "lopsided"],
            &[
                "bench",
                "--variant",
                "atz",
                "--n",
                "64",
                "--p",
                "1",
                "--speedup-out",
                "/nonexistent/dir/x.csv",
            ],
            &["verify", "--n-max", "1000"],
            &["filter", "--format", "xml"],
            &["frobnicate"],
        ] {
            assert_eq!(ppf(&dir, args).0, EXIT_USAGE, "{args:?}");
        }
        assert_eq!(main(["ppf"]), EXIT_USAGE);
        assert_eq!(main(["ppf", "--help"]), 0);
    }

    #[test]
    fn verify_reports_zero_mismatches() {
        let dir = TempDir::new().unwrap();
        let (code, text) = ppf(
            &dir,
            &["verify", "--n-max", "64", "--trials", "50", "--seed", "1"],
        );
        assert_eq!(code, 0);
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().last(), Some("0 mismatches"));

        let (_, text) = ppf(
            &dir,
            &["verify", "--n-max", "8", "--trials", "4", "--format", "json"],
        );
        let report: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(report["sizes"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn bench_writes_rows_and_ratios() {
        let dir = TempDir::new().unwrap();
        let ratios = dir.path().join("ratios.csv");
        let (code, text) = ppf(
            &dir,
            &[
                "bench",
                "--variant",
                "atz,nested,naive",
                "--n",
                "64,256",
                "--p",
                "1,4",
                "--scenario",
                "single-survivor,uniform",
                "--trials",
                "2",
                "--speedup-out",
                ratios.to_str().unwrap(),
            ],
        );
        assert_eq!(code, 0);
        assert!(text.starts_with("#schema=1\n"));
        assert_eq!(text.lines().count(), 2 + 2 * 2 * 2 * 3);
        let naive: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("single-survivor,naive,256,4,"))
            .collect();
        assert_eq!(naive.len(), 1);
        assert_eq!(naive[0].split(',').nth(8), Some("256"));

        let ratios = std::fs::read_to_string(&ratios).unwrap();
        assert!(ratios.starts_with("#schema=1\nkind,scenario,variant,n,p,pps_ratio,count_ratio\n"));
        let speedups = ratios.lines().filter(|l| l.starts_with("speedup,")).count();
        let scaling: Vec<Vec<&str>> = ratios
            .lines()
            .filter(|l| l.starts_with("scaling,"))
            .map(|l| l.split(',').collect())
            .collect();
        assert_eq!((speedups, scaling.len()), (2 * 2 * 2, 2 * 3 * 2 * 2));
        let base: Vec<&Vec<&str>> = scaling.iter().filter(|f| f[4] == "1").collect();
        assert_eq!(base.len(), 2 * 3 * 2);
        assert!(base.iter().all(|f| (f[5], f[6]) == ("1.0", "1.0")));
    }

    #[test]
    fn bench_speedup_needs_both_variants() {
        let dir = TempDir::new().unwrap();
        let ratios = dir.path().join("ratios.csv");
        let args = [
            "bench",
            "--variant",
            "atz",
            "--n",
            "64",
            "--p",
            "1",
            "--speedup-out",
            ratios.to_str().unwrap(),
        ];
        assert_eq!(ppf(&dir, &args).0, EXIT_USAGE);
    }

    #[test]
    fn scenario_prints_inputs() {
        let dir = TempDir::new().unwrap();
        let (code, text) = ppf(
            &dir,
            &["scenario", "--scenario", "uniform", "--n", "8", "--seed", "2"],
        );
        assert_eq!(code, 0);
        let counts: Vec<&str> = text
            .lines()
            .skip(2)
            .map(|l| l.split(',').nth(2).unwrap())
            .collect();
        assert_eq!(counts, ["1"; 8]);

        let (_, text) = ppf(
            &dir,
            &[
                "scenario",
                "--scenario",
                "skewed-weights",
                "--n",
                "16",
                "--format",
                "json",
            ],
        );
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let total: f64 = v["weights"]
            .as_array()
            .unwrap()
            .iter()
            .map(|w| w.as_f64().unwrap())
            .sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert_eq!(
            v["counts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c.as_u64().unwrap())
                .sum::<u64>(),
            16
        );
    }

    #[test]
    fn size_lists() {
        assert_eq!(parse_sizes("8..64").unwrap().0, [8, 16, 32, 64]);
        assert_eq!(parse_sizes("8,24").unwrap().0, [8, 24]);
        assert!(parse_sizes("64..8").is_err());
        assert!(parse_sizes("x").is_err());
    }
}
