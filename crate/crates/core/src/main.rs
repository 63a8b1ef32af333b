use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dmrc::circuit::{gen_and_tree, gen_parity, gen_random_dag, parse_circuit, Assignment, Circuit};
use dmrc::circuit_mrc::{run_nc_pipeline, LevelsSource, NcOptions};
use dmrc::crcw::{prefix_sums_machine, sort_program};
use dmrc::crcw_to_mrc::simulate_crcw;
use dmrc::mrc::{BudgetConfig, BudgetReport, Mode, RunOptions};
use dmrc::pbp::barrington_compile;
use dmrc::pbp_mrc::run_nc1_pipeline;

#[derive(Parser)]
#[command(name = "dmrc", version, about = "MapReduce round simulation of Boolean circuits and Sum-CRCW kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated circuit.
    Gen {
        #[arg(value_enum)]
        kind: GenKind,
        /// Number of inputs.
        size: usize,
        /// Depth, for `random`.
        depth: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compile a circuit to a width-5 permutation branching program.
    CompilePbp {
        circuit: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a pipeline and print the verdict.
    Run {
        #[arg(value_enum)]
        pipeline: Pipeline,
        /// Circuit file, or for `crcw` a file of integers.
        input: PathBuf,
        #[command(flatten)]
        config: RunConfig,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Parity,
    AndTree,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pipeline {
    Nc1,
    Nc,
    Crcw,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    Advisory,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelsArg {
    Mr,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernel {
    Prefix,
    Sort,
}

#[derive(Args)]
struct RunConfig {
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 64.0)]
    c_space: f64,
    #[arg(long, default_value_t = 8.0)]
    c_total: f64,
    #[arg(long, value_enum, default_value = "strict")]
    mode: ModeArg,
    /// Seeds the random assignment when `--assign` is absent.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mr")]
    levels: LevelsArg,
    /// Line-delimited JSON report, one record per round.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Assignment as a string of 0/1, variable 0 first.
    #[arg(long)]
    assign: Option<String>,
    /// Band height override for `nc`.
    #[arg(long)]
    s: Option<u64>,
    /// Kernel for `crcw`.
    #[arg(long, value_enum, default_value = "prefix")]
    kernel: Kernel,
    /// Sort domain for `crcw --kernel sort`; defaults to the largest value.
    #[arg(long)]
    domain: Option<u64>,
    /// Tree fan-in for `crcw`; defaults to `N^(1-ε)`.
    #[arg(long)]
    m: Option<u64>,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_circuit(path: &Path) -> Result<Circuit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_circuit(&text).with_context(|| format!("parsing {}", path.display()))
}

fn assignment(cfg: &RunConfig, n: usize) -> Result<Assignment> {
    match &cfg.assign {
        Some(bits) => {
            let a: Vec<bool> = bits
                .chars()
                .map(|ch| match ch {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => bail!("assignment must be 0/1 characters, found {other:?}"),
                })
                .collect::<Result<_>>()?;
            if a.len() != n {
                bail!("assignment has {} bits but the circuit has {n} inputs", a.len());
            }
            Ok(Assignment(a))
        }
        None => Ok(Assignment::random(n, &mut ChaCha8Rng::seed_from_u64(cfg.seed))),
    }
}

fn run_options(cfg: &RunConfig) -> Result<RunOptions> {
    // Pipelines always run to the end so the report is complete; strictness only
    // decides the exit code.
    Ok(RunOptions::new(
        BudgetConfig::new(cfg.epsilon, cfg.c_space, cfg.c_total)?,
        Mode::Advisory,
    ))
}

fn finish(cfg: &RunConfig, report: &BudgetReport, verdict: bool) -> Result<ExitCode> {
    if let Some(path) = &cfg.report {
        let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report.write_json_lines(&mut f)?;
        f.flush()?;
    }
    println!("rounds: {}", report.round_count());
    println!("violations: {}", report.violations.len());
    for v in report.violations.iter().take(5) {
        eprintln!("violation: {v}");
    }
    let strict = matches!(cfg.mode, ModeArg::Strict);
    Ok(ExitCode::from(exit_code(verdict, strict && !report.violations.is_empty())))
}

/// 2 on a strict-mode violation, otherwise 0 to accept and 1 to reject.
fn exit_code(verdict: bool, violated: bool) -> u8 {
    match (violated, verdict) {
        (true, _) => 2,
        (false, true) => 0,
        (false, false) => 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen {
            kind,
            size,
            depth,
            seed,
            out,
        } => {
            let c = match kind {
                GenKind::Parity => gen_parity(size)?,
                GenKind::AndTree => gen_and_tree(size)?,
                GenKind::Random => {
                    let depth = depth.context("random circuits need a depth")?;
                    gen_random_dag(size, depth, seed)?
                }
            };
            write_out(out.as_deref(), &c.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::CompilePbp { circuit, out } => {
            let c = read_circuit(&circuit)?;
            let pbp = barrington_compile(&c);
            let depth = c.depth() as u32;
            let bound = 4u128.checked_pow(depth);
            let within = bound.is_none_or(|b| pbp.len() as u128 <= b);
            write_out(out.as_deref(), &pbp.to_string())?;
            let stats = format!(
                "width: {}\nlength: {}\ndepth: {depth}\nlength <= 4^depth: {}\n",
                pbp.w,
                pbp.len(),
                if within { "yes" } else { "no" }
            );
            if out.is_some() {
                print!("{stats}");
            } else {
                eprint!("{stats}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { pipeline, input, config } => match pipeline {
            Pipeline::Nc1 => {
                let c = read_circuit(&input)?;
                let a = assignment(&config, c.n())?;
                let run = run_nc1_pipeline(&c, &a, &run_options(&config)?)?;
                println!("verdict: {}", if run.accept { "accept" } else { "reject" });
                println!("program lines: {} (padded to {})", run.params.t_orig, run.params.t);
                finish(&config, &run.report, run.accept)
            }
            Pipeline::Nc => {
                let c = read_circuit(&input)?;
                let a = assignment(&config, c.n())?;
                let opts = NcOptions {
                    run: run_options(&config)?,
                    alpha: config.alpha,
                    levels: match config.levels {
                        LevelsArg::Mr => LevelsSource::Mr,
                        LevelsArg::Oracle => LevelsSource::Oracle,
                    },
                    s: config.s,
                };
                let run = run_nc_pipeline(&c, &a, &opts)?;
                println!("verdict: {}", if run.accept { "accept" } else { "reject" });
                println!(
                    "s: {}  beta: {}  depth: {}  phases: {}",
                    run.params.s, run.params.beta, run.params.depth, run.params.phases
                );
                for st in &run.stages {
                    println!("stage {:<10} rounds {:>3}  max words {}", st.stage, st.rounds, st.max_words);
                }
                finish(&config, &run.report, run.accept)
            }
            Pipeline::Crcw => {
                let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
                let values: Vec<i64> = text
                    .split_whitespace()
                    .map(|w| w.parse::<i64>().with_context(|| format!("not an integer: {w:?}")))
                    .collect::<Result<_>>()?;
                let cfg = run_options(&config)?.config;
                let (sim, report, out) = match config.kernel {
                    Kernel::Prefix => {
                        let (machine, preload, layout) = prefix_sums_machine(&values);
                        let (sim, report) = simulate_crcw(&machine, &preload, cfg, Mode::Advisory, config.m)?;
                        let y: Vec<i64> = (0..values.len()).map(|j| sim.registers[layout.y(j)]).collect();
                        (sim, report, y)
                    }
                    Kernel::Sort => {
                        let set: Vec<u64> = values
                            .iter()
                            .map(|&v| u64::try_from(v).context("sort values must be positive"))
                            .collect::<Result<_>>()?;
                        let d = config.domain.unwrap_or_else(|| set.iter().copied().max().unwrap_or(1));
                        let (machine, preload, layout) = sort_program(&set, d)?;
                        let (sim, report) = simulate_crcw(&machine, &preload, cfg, Mode::Advisory, config.m)?;
                        let y: Vec<i64> = (0..set.len()).map(|k| sim.registers[layout.y(k)]).collect();
                        (sim, report, y)
                    }
                };
                for w in &sim.warnings {
                    eprintln!("warning: {w}");
                }
                let line: Vec<String> = out.iter().map(i64::to_string).collect();
                println!("output: {}", line.join(" "));
                println!("m: {}  height: {}", sim.plan.m, sim.plan.height);
                finish(&config, &report, true)
            }
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
