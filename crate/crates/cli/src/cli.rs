//! Command-line front end. Long flags match manifest keys (`--stop-r` is
//! `stop_r`), so a manifest reads as the command that produced it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsm_core::{Schedule, ScheduleInputs};
use serde::Serialize;

use crate::bench::{self, BASELINES};
use crate::error::CliError;
use crate::gallery::GALLERY;
use crate::io::{read_json, write_atomic};
use crate::run::{self, Manifest, ProblemFile, RunOptions};
use crate::verify;

pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "dsm",
    version,
    about = "Continuous regularized Newton flow for F(u) = f"
)]
pub struct Cli {
    /// Directory for traces, manifests and reports.
    #[arg(long, global = true, default_value = "dsm-out")]
    pub out: PathBuf,
    /// Seed for problem construction and the start direction.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the flow on a gallery problem or problem file.
    Solve(SolveArgs),
    /// Run invariant suites: all, operator, schedule, lemma1, path, theorem.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Compare the flow with baseline methods.
    Bench(BenchArgs),
    /// Derive a schedule from constants and check its gates.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Gallery name or path to a JSON problem file.
    pub problem: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub cond: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub norm_p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptionArgs {
    #[arg(long)]
    pub r0: Option<f64>,
    /// Distance of the start point from the regularized solution at r0.
    #[arg(long)]
    pub g0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub stop_r: Option<f64>,
    #[arg(long)]
    pub stop_residual: Option<f64>,
    #[arg(long)]
    pub max_time: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub initial_step: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub tol_env: Option<f64>,
    /// Integrate even when a gate fails.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub options: OptionArgs,
    /// Re-run the problem, options and seed recorded in a manifest.
    #[arg(long, conflicts_with = "problem")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub options: OptionArgs,
    /// Comma-separated baselines; an empty list runs the flow alone.
    #[arg(long, default_value = "newton-plain,fixed-a,geometric-a")]
    pub baselines: String,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c2: f64,
    #[arg(long, default_value_t = 0.25)]
    pub g0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub eps0: f64,
    /// Tabulate r and the envelope until r falls to this value.
    #[arg(long, default_value_t = 1e-2)]
    pub until_r: f64,
    #[arg(long, default_value_t = 16)]
    pub points: usize,
}

impl ProblemArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<ProblemFile, CliError> {
        let name = self.problem.as_deref().unwrap_or("monotone-holder");
        let mut pf = if GALLERY.contains(&name) {
            ProblemFile::gallery(name, self.n, 0)
        } else if Path::new(name).is_file() {
            read_json(Path::new(name))?
        } else {
            return Err(CliError::Usage(format!(
                "'{name}' is neither a gallery problem ({}) nor a problem file",
                GALLERY.join(", ")
            )));
        };
        let p = &mut pf.params;
        if let Some(v) = self.kappa {
            p.kappa = v;
        }
        if self.scale.is_some() {
            p.scale = self.scale;
        }
        if let Some(v) = self.lambda_min {
            p.lambda_min = v;
        }
        if let Some(v) = self.cond {
            p.cond = v;
        }
        if self.rank.is_some() {
            p.rank = self.rank;
        }
        if let Some(v) = self.epsilon {
            p.epsilon = v;
        }
        if self.norm_p.is_some() {
            p.norm_p = self.norm_p;
        }
        if let Some(s) = seed {
            pf.seed = s;
        }
        Ok(pf)
    }
}

impl OptionArgs {
    fn resolve(&self) -> RunOptions {
        let mut o = RunOptions {
            r0: self.r0,
            g0: self.g0,
            stop_residual: self.stop_residual,
            max_time: self.max_time,
            force: self.force,
            ..Default::default()
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { o.$f = v; } )* };
        }
        set!(
            theta,
            stop_r,
            samples,
            rel_tol,
            abs_tol,
            initial_step,
            max_steps,
            tol_env
        );
        o
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Solve(args) => solve(cli, args),
        Command::Verify { suite } => {
            let checks = verify::run_suite(suite, cli.seed.unwrap_or(0))?;
            let (name, body) = match cli.format {
                Format::Csv => ("verify.csv", verify::checks_csv(&checks)),
                Format::Json => ("verify.json", to_json(&checks)),
            };
            write_atomic(&cli.out.join(name), body.as_bytes())?;
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
            for c in &checks {
                println!(
                    "{} {}/{} margin {:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.suite,
                    c.name,
                    c.margin
                );
            }
            println!("{} checks, {} failed", checks.len(), failed.len());
            Ok(if failed.is_empty() { 0 } else { 1 })
        }
        Command::Bench(args) => {
            let baselines = bench::parse_baselines(&args.baselines)?;
            let pf = args.problem.resolve(cli.seed)?;
            let gp = pf.build()?;
            let rows = bench::bench(&gp, &args.options.resolve(), pf.seed, &baselines)?;
            let (name, body) = match cli.format {
                Format::Csv => ("bench.csv", bench::table_csv(&rows)),
                Format::Json => ("bench.json", to_json(&rows)),
            };
            write_atomic(&cli.out.join(name), body.as_bytes())?;
            print!("{}", bench::table_csv(&rows));
            log::debug!("available baselines: {}", BASELINES.join(", "));
            Ok(0)
        }
        Command::Schedule(a) => schedule(cli, a),
    }
}

fn solve(cli: &Cli, args: &SolveArgs) -> Result<i32, CliError> {
    let (pf, opts, seed) = match &args.manifest {
        Some(path) => {
            let m: Manifest = read_json(path)?;
            let seed = m.seed;
            (m.problem, m.options, seed)
        }
        None => {
            let pf = args.problem.resolve(cli.seed)?;
            let seed = pf.seed;
            (pf, args.options.resolve(), seed)
        }
    };
    let gp = pf.build()?;
    let result = run::execute(&gp, &opts, seed)?;
    let manifest = run::manifest(&pf, &opts, seed, &result);
    write_atomic(
        &cli.out.join("manifest.json"),
        to_json(&manifest).as_bytes(),
    )?;
    if let Some(traj) = &result.trajectory {
        let (name, body) = match cli.format {
            Format::Csv => ("trace.csv", run::trace_csv(traj)),
            Format::Json => ("trace.json", run::trace_json(traj)),
        };
        write_atomic(&cli.out.join(name), body.as_bytes())?;
    }
    if !result.plan.gates.passed {
        eprint!("{}", run::gate_failure_text(&result.plan.gates));
    }
    let m = &result.metrics;
    println!(
        "{}: outcome {:?}, t = {}, r = {}, residual = {}, dist_to_y = {}",
        pf.kind,
        result.outcome,
        fmt(m.final_t),
        fmt(m.final_r),
        fmt(m.final_residual),
        fmt(m.final_dist_to_y)
    );
    if let Some(traj) = result.trajectory.as_ref().filter(|t| t.failure.is_some()) {
        eprintln!("solver: {}", traj.failure.as_deref().unwrap_or_default());
    }
    Ok(result.outcome.exit_code())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.3e}"))
}

#[derive(Serialize)]
struct ScheduleRow {
    t: f64,
    r: f64,
    envelope: f64,
}

fn schedule(cli: &Cli, a: &ScheduleArgs) -> Result<i32, CliError> {
    let s = Schedule::derive(ScheduleInputs {
        b: a.b,
        kappa: a.kappa,
        c0: a.c0,
        c1: a.c1,
        c2: a.c2,
        g0: a.g0,
        r0: a.r0,
        theta: a.theta,
        eps0: a.eps0,
    })?;
    if !(a.until_r > 0.0 && a.until_r < a.r0) || a.points < 2 {
        return Err(CliError::Usage(
            "need 0 < --until-r < --r0 and --points ≥ 2".into(),
        ));
    }
    let gates = s.validate();
    let horizon = s.time_at(a.until_r);
    let rows: Vec<ScheduleRow> = (0..a.points)
        .map(|i| {
            let t = horizon * i as f64 / (a.points - 1) as f64;
            let st = s.eval(t);
            ScheduleRow {
                t,
                r: st.r,
                envelope: st.envelope,
            }
        })
        .collect();
    let (name, body) = match cli.format {
        Format::Csv => {
            let mut body = String::from("t,r,envelope\n");
            for r in &rows {
                body.push_str(&format!("{:e},{:e},{:e}\n", r.t, r.r, r.envelope));
            }
            ("schedule.csv", body)
        }
        Format::Json => (
            "schedule.json",
            to_json(&serde_json::json!({ "schedule": s, "gates": gates, "samples": rows })),
        ),
    };
    write_atomic(&cli.out.join(name), body.as_bytes())?;
    println!(
        "k = {}, lambda = {:.6e}, c4 = {:.6e}, c6 = {:.6e}",
        s.k, s.lambda, s.c4, s.c6
    );
    for g in &gates.gates {
        println!(
            "gate {}: {}",
            g.kind.name(),
            if g.passed { "pass" } else { "FAIL" }
        );
    }
    if gates.passed {
        Ok(0)
    } else {
        eprint!("{}", run::gate_failure_text(&gates));
        Ok(2)
    }
}
