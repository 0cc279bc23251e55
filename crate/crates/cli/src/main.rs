//! `ef21`: generate problems, run and compare EF21-family experiments, and
//! run the built-in property suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ef21_core::compressor::CompressorKind;
use ef21_core::datagen::{generate_synthetic, SynthConfig};
use ef21_core::harness::{
    compare, emit_csv, emit_joint_csv, emit_svg, execute, problem_to_json, sweep, sweep_csv, Algorithm,
    CompareConfig, OutputChoice, ProblemSource, RunConfig, Series, StepsizeConfig, SweepConfig,
};
use ef21_core::objective::{LossKind, Sampling};
use ef21_core::Error;

#[derive(Parser)]
#[command(name = "ef21", version, about = "Error-feedback distributed optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic problem and a run config that uses it.
    Generate(GenerateArgs),
    /// Execute one run config.
    Run(RunArgs),
    /// Execute a list of run configs on one problem.
    Compare(RunArgs),
    /// Repeat a run over a grid of q, z or p values.
    Sweep(RunArgs),
    /// Run the property suites and print one line per suite.
    Selfcheck,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Svg,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Svg
    }

    fn svg(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Overrides the master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the number of rounds.
    #[arg(long, value_name = "N")]
    rounds: Option<u64>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct GenerateArgs {
    /// Synthetic-problem config; a small default problem without it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Overrides the generator seed and becomes the run seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Rounds written into the config skeleton.
    #[arg(long, value_name = "N", default_value_t = 1000)]
    rounds: u64,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned())
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
}

fn make_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("summaries serialize") + "\n"
}

fn override_run(cfg: &mut RunConfig, seed: Option<u64>, rounds: Option<u64>) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = rounds {
        cfg.rounds = t;
    }
}

fn default_synth() -> SynthConfig {
    SynthConfig { n: 10, d: 10, n_i: 20, l: 50.0, mu: 1.0, q: 1.0, z: 1.0, seed: 0, loss: LossKind::LinRegL2, lambda: 0.0 }
}

fn generate(args: GenerateArgs) -> Result<(), Error> {
    let mut synth = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
            serde_json::from_str(&text).map_err(|source| Error::Json { path: p.clone(), source })?
        }
        None => default_synth(),
    };
    if let Some(s) = args.seed {
        synth.seed = s;
    }
    let problem = generate_synthetic(&synth)?;
    let cfg = RunConfig {
        label: None,
        problem: ProblemSource::File { path: "problem.json".into() },
        algorithm: Algorithm::Ef21w,
        compressor: CompressorKind::Topk { k: 1 },
        stepsize: StepsizeConfig::default(),
        rounds: args.rounds,
        seed: synth.seed,
        participation: None,
        tau: 1,
        sampling: Sampling::WithReplacement,
        output_law: OutputChoice::Uniform,
        parallel: false,
    };
    cfg.validate()?;
    make_dir(&args.out)?;
    write(&args.out, "problem.json", &(problem_to_json(&problem) + "\n"))?;
    write(&args.out, "config.json", &to_json(&cfg))?;
    println!(
        "wrote problem.json ({} clients, d = {}, L = {:.6e}) and config.json to {}",
        problem.n(),
        problem.dim(),
        problem.smoothness(),
        args.out.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    override_run(&mut cfg, args.seed, args.rounds);
    let out = execute(&cfg)?;
    let name = stem(&args.config);
    make_dir(&args.out)?;
    if args.format.csv() {
        write(&args.out, &format!("{name}.csv"), &emit_csv(&out.rows)?)?;
    }
    if args.format.svg() {
        let svg = emit_svg(&[(out.summary.label.clone(), out.rows)], Series::GradNormSq)?;
        write(&args.out, &format!("{name}.svg"), &svg)?;
    }
    write(&args.out, &format!("{name}.summary.json"), &to_json(&out.summary))?;
    let s = &out.summary;
    println!(
        "{}: gamma = {:.6e}, min |grad f|^2 = {:.6e}, final f = {:.6e}, monitor violations = {}",
        s.label,
        s.gamma,
        s.min_grad_norm_sq,
        s.final_f,
        s.monitor.violations()
    );
    Ok(())
}

fn compare_cmd(args: RunArgs) -> Result<(), Error> {
    let mut cfg = CompareConfig::from_file(&args.config)?;
    cfg.runs.iter_mut().for_each(|r| override_run(r, args.seed, args.rounds));
    let (report, series) = compare(&cfg)?;
    let name = stem(&args.config);
    make_dir(&args.out)?;
    if args.format.csv() {
        write(&args.out, &format!("{name}.csv"), &emit_joint_csv(&series)?)?;
    }
    if args.format.svg() {
        write(&args.out, &format!("{name}.svg"), &emit_svg(&series, Series::GradNormSq)?)?;
    }
    write(&args.out, &format!("{name}.summary.json"), &to_json(&report))?;
    println!("threshold on |grad f|^2: {:.6e}", report.threshold);
    print!("{}", report.table());
    Ok(())
}

fn sweep_cmd(args: RunArgs) -> Result<(), Error> {
    let mut cfg = SweepConfig::from_file(&args.config)?;
    override_run(&mut cfg.base, args.seed, args.rounds);
    let (points, series) = sweep(&cfg)?;
    let name = stem(&args.config);
    make_dir(&args.out)?;
    if args.format.csv() {
        write(&args.out, &format!("{name}.csv"), &sweep_csv(cfg.param_name(), &points))?;
        write(&args.out, &format!("{name}.curves.csv"), &emit_joint_csv(&series)?)?;
    }
    if args.format.svg() {
        write(&args.out, &format!("{name}.svg"), &emit_svg(&series, Series::GradNormSq)?)?;
    }
    write(&args.out, &format!("{name}.summary.json"), &to_json(&points))?;
    for p in &points {
        println!(
            "{} = {}: gamma = {:.6e}, L_var = {:.6e}, min |grad f|^2 = {:.6e}",
            cfg.param_name(),
            p.value,
            p.summary.gamma,
            p.summary.constants.l_var,
            p.summary.min_grad_norm_sq
        );
    }
    Ok(())
}

fn selfcheck() -> ExitCode {
    let results = ef21_core::checks::run_all();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn dispatch(command: Command) -> ExitCode {
    let result = match command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Selfcheck => return selfcheck(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    // Panics are bugs, not user errors.
    std::panic::catch_unwind(|| dispatch(cli.command)).unwrap_or(ExitCode::from(2))
}
