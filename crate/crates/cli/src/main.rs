//! `pathcomplete` command-line tool: graph utilities, bound and controller
//! synthesis, tightness factors, value oracles and experiment reproduction.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pathcomplete::bounds::{evaluate, solve_upper_bound, Certificate, Combiner, Objective};
use pathcomplete::control::{synthesize, Controller, SynthesisObjective};
use pathcomplete::experiments::{self, parse_orders, unit, DEFAULT_GRID_POINTS, DEFAULT_REALIZATIONS};
use pathcomplete::graph::{
    build_debruijn, exact_witness_cap, is_cocomplete, is_complete, is_path_complete, two_node_cocomplete,
    two_node_incomplete, DeBruijnSpec, LabeledGraph, PathCompleteness,
};
use pathcomplete::linalg::{vector, Vector};
use pathcomplete::oracle::{
    closed_loop_oracle, value_oracle_adaptive, write_oracle_csv, AdaptiveOptions, OracleRow, TailBound,
    DEFAULT_MAX_HORIZON, ORACLE_CSV_SCHEMA,
};
use pathcomplete::sdp::SolverOptions;
use pathcomplete::system::{
    controlled_example_system, example2_system, random_stable_system, system_from_json, system_to_json, QuadCost,
    SwitchedSystem,
};
use pathcomplete::tightness::{tightness_max_with, tightness_min_with, TightnessFile, DEFAULT_MIN_CASE_CAP};
use pathcomplete::Error;

use manifest::{manifest_path, ManifestBuilder};

const GRAPH_SCHEMA: &str = "graph-json-v1";
const SYSTEM_SCHEMA: &str = "system-json-v1";
const CERTIFICATE_SCHEMA: &str = "certificate-json-v1";
const CONTROLLER_SCHEMA: &str = "controller-json-v1";
const TIGHTNESS_SCHEMA: &str = "tightness-json-v1";

/// Exit codes (sysexits-style).
mod exit {
    pub const NOT_PATH_COMPLETE: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
    pub const USAGE: u8 = 64;
    pub const DATA: u8 = 65;
    pub const NO_INPUT: u8 = 66;
    pub const SOFTWARE: u8 = 70;
}

#[derive(Debug, Parser)]
#[command(name = "pathcomplete", version, about = "Path-complete value-function bounds for switched linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or inspect labeled graphs.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Write a system file (built-in example or seeded random system).
    System(SystemArgs),
    /// Solve the bound LMIs and write a certificate.
    Bound(BoundArgs),
    /// Compute the tightness factor of a certificate.
    Tighten(TightenArgs),
    /// Synthesize a switching-robust controller.
    Synth(SynthArgs),
    /// Evaluate the finite-horizon value oracle.
    Oracle(OracleArgs),
    /// Reproduce an experiment as CSV.
    Repro(ReproArgs),
}

#[derive(Debug, Subcommand)]
enum GraphCmd {
    /// Write a De Bruijn graph or a preset.
    Gen(GraphGenArgs),
    /// Print complete/co-complete/path-complete verdicts.
    Check(GraphCheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GraphPreset {
    /// Two-node co-complete graph.
    Fig1a,
    /// Two-node graph missing the `2` self-loop.
    Fig1b,
}

#[derive(Debug, Args)]
struct GraphGenArgs {
    #[arg(long, conflicts_with = "preset")]
    debruijn: Option<usize>,
    #[arg(long, default_value_t = 2)]
    modes: usize,
    #[arg(long)]
    dual: bool,
    #[arg(long)]
    preset: Option<GraphPreset>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GraphCheckArgs {
    graph: PathBuf,
    /// Longest witness searched; defaults to the exact cap `2^|S|`.
    #[arg(long)]
    max_witness: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SystemPreset {
    /// Two-mode autonomous example.
    Example2,
    /// Two-mode controlled example.
    Controlled,
    /// Seeded random stable system.
    Random,
}

#[derive(Debug, Args)]
struct SystemArgs {
    preset: SystemPreset,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    modes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundObjective {
    Trace,
    Pointwise,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CombinerArg {
    Min,
    Max,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "trace")]
    objective: BoundObjective,
    /// Initial state `x1,x2,...` for the pointwise objective and the printed value.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    combiner: Option<CombinerArg>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TightenArgs {
    #[arg(long)]
    cert: PathBuf,
    #[arg(long)]
    system: PathBuf,
    /// Include the nonzero multipliers in the output.
    #[arg(long)]
    multipliers: bool,
    /// Block cap for the min-combiner case.
    #[arg(long, default_value_t = DEFAULT_MIN_CASE_CAP)]
    min_case_cap: u128,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthObjective {
    Surrogate,
    Pointwise,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "surrogate")]
    objective: SynthObjective,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    system: PathBuf,
    /// Evaluation state `x1,x2,...`; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    x0: Vec<String>,
    /// Unit-circle grid of this many θ values on `[0, π]` (two-state systems).
    #[arg(long)]
    grid: Option<usize>,
    /// Closed-loop oracle under this controller; exhaustive at `--horizon`.
    #[arg(long)]
    controller: Option<PathBuf>,
    /// Certificate whose value fills the `V` column.
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Tightness file or number filling `V_over_mu`.
    #[arg(long)]
    mu: Option<String>,
    /// Largest horizon (adaptive) or the fixed closed-loop horizon.
    #[arg(long, default_value_t = DEFAULT_MAX_HORIZON)]
    horizon: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReproTarget {
    Example2,
    Table1,
    Table2,
    Fig2,
    Fig3,
    Fig4,
}

#[derive(Debug, Args)]
struct ReproArgs {
    target: ReproTarget,
    /// Graph orders, `a..b` or `a,b,c`.
    #[arg(long)]
    orders: Option<String>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    points: usize,
    #[arg(long, default_value_t = DEFAULT_REALIZATIONS)]
    realizations: usize,
    /// Table-1 configuration `n,M`; repeatable.
    #[arg(long)]
    config: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Command failure carrying its exit code.
#[derive(Debug)]
enum Failure {
    Core(Error),
    Usage(String),
    NotPathComplete,
    Capacity(String),
    Input(PathBuf, std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => exit::USAGE,
            Failure::NotPathComplete => exit::NOT_PATH_COMPLETE,
            Failure::Capacity(_) => exit::SOFTWARE,
            Failure::Input(..) => exit::NO_INPUT,
            Failure::Core(e) => match e {
                Error::Infeasible(_) => exit::INFEASIBLE,
                Error::Capacity { .. } | Error::NumericalFailure(_) => exit::SOFTWARE,
                Error::InvalidArgument(_) => exit::USAGE,
                Error::Io(_) => exit::NO_INPUT,
                _ => exit::DATA,
            },
        }
    }

    fn message(&self) -> Option<String> {
        match self {
            Failure::Core(e) => Some(e.to_string()),
            Failure::Usage(m) | Failure::Capacity(m) => Some(m.clone()),
            Failure::Input(p, e) => Some(format!("cannot read {}: {e}", p.display())),
            Failure::NotPathComplete => None,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let opts = match SolverOptions::from_env() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit::USAGE);
        }
    };
    let mut command = argv;
    if let Some(first) = command.first_mut() {
        *first = "pathcomplete".into();
    }
    let mb = ManifestBuilder::new(command, opts);
    let result = match cli.command {
        Command::Graph(GraphCmd::Gen(a)) => graph_gen(a, mb),
        Command::Graph(GraphCmd::Check(a)) => graph_check(a, mb),
        Command::System(a) => system_cmd(a, mb),
        Command::Bound(a) => bound_cmd(a, &opts, mb),
        Command::Tighten(a) => tighten_cmd(a, &opts, mb),
        Command::Synth(a) => synth_cmd(a, &opts, mb),
        Command::Oracle(a) => oracle_cmd(a, mb),
        Command::Repro(a) => repro_cmd(a, &opts, mb),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(m) = f.message() {
                eprintln!("error: {m}");
            }
            ExitCode::from(f.code())
        }
    }
}

fn read(mb: &mut ManifestBuilder, path: &Path) -> Result<String, Failure> {
    mb.read_input(path).map_err(|e| Failure::Input(path.to_path_buf(), e))
}

fn load_system(mb: &mut ManifestBuilder, path: &Path) -> Result<(SwitchedSystem, QuadCost), Failure> {
    Ok(system_from_json(&read(mb, path)?)?)
}

fn load_graph(mb: &mut ManifestBuilder, path: &Path) -> Result<LabeledGraph, Failure> {
    Ok(LabeledGraph::from_json(&read(mb, path)?)?)
}

fn parse_state(text: &str) -> Result<Vector, Failure> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match values {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(vector(&v)),
        _ => Err(Failure::Usage(format!("cannot parse state {text:?}; expected x1,x2,..."))),
    }
}

/// Writes `body` to `output` (and its manifest) or to stdout.
fn emit(mut mb: ManifestBuilder, output: Option<&Path>, schema: &'static str, body: &[u8]) -> CmdResult {
    match output {
        Some(path) => {
            fs::write(path, body).map_err(Error::from)?;
            mb.output(path, schema);
            write_manifest(mb, path)
        }
        None => {
            std::io::stdout().write_all(body).map_err(Error::from)?;
            Ok(())
        }
    }
}

fn write_manifest(mb: ManifestBuilder, primary: &Path) -> CmdResult {
    let text = serde_json::to_string_pretty(&mb.finish()).map_err(Error::from)?;
    fs::write(manifest_path(primary), text + "\n").map_err(Error::from)?;
    Ok(())
}

fn graph_gen(a: GraphGenArgs, mb: ManifestBuilder) -> CmdResult {
    let g = match (a.preset, a.debruijn) {
        (Some(GraphPreset::Fig1a), _) => two_node_cocomplete(),
        (Some(GraphPreset::Fig1b), _) => two_node_incomplete(),
        (None, Some(order)) => build_debruijn(DeBruijnSpec {
            order,
            num_modes: a.modes,
            dual: a.dual,
        })?,
        (None, None) => return Err(Failure::Usage("graph gen needs --debruijn L or --preset".into())),
    };
    let body = g.to_json() + "\n";
    emit(mb, a.output.as_deref(), GRAPH_SCHEMA, body.as_bytes())
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn graph_check(a: GraphCheckArgs, mut mb: ManifestBuilder) -> CmdResult {
    let g = load_graph(&mut mb, &a.graph)?;
    let max_len = a.max_witness.unwrap_or_else(|| exact_witness_cap(&g));
    println!("nodes: {}", g.num_nodes());
    println!("edges: {}", g.edges().len());
    println!("complete: {}", yes_no(is_complete(&g)));
    println!("co-complete: {}", yes_no(is_cocomplete(&g)));
    match is_path_complete(&g, max_len) {
        PathCompleteness::Yes => {
            println!("path-complete: yes");
            Ok(())
        }
        PathCompleteness::No { witness } => {
            println!("path-complete: no");
            let w: Vec<String> = witness.iter().map(usize::to_string).collect();
            println!("witness: {}", w.join(" "));
            Err(Failure::NotPathComplete)
        }
        PathCompleteness::Unknown { explored } => {
            println!("path-complete: unknown");
            Err(Failure::Capacity(format!(
                "path-completeness undecided after {explored} subset states"
            )))
        }
    }
}

fn system_cmd(a: SystemArgs, mut mb: ManifestBuilder) -> CmdResult {
    let (sys, cost) = match a.preset {
        SystemPreset::Example2 => example2_system(),
        SystemPreset::Controlled => controlled_example_system(),
        SystemPreset::Random => {
            mb.seed(a.seed);
            (random_stable_system(a.n, a.modes, a.seed), QuadCost::identity(a.n, None))
        }
    };
    let body = system_to_json(&sys, &cost) + "\n";
    emit(mb, a.output.as_deref(), SYSTEM_SCHEMA, body.as_bytes())
}

fn bound_cmd(a: BoundArgs, opts: &SolverOptions, mut mb: ManifestBuilder) -> CmdResult {
    let (sys, cost) = load_system(&mut mb, &a.system)?;
    let g = load_graph(&mut mb, &a.graph)?;
    let x0 = a.x0.as_deref().map(parse_state).transpose()?;
    let objective = match (a.objective, &x0) {
        (BoundObjective::Trace, _) => Objective::TraceSum,
        (BoundObjective::Pointwise, Some(x)) => Objective::Pointwise(x.clone()),
        (BoundObjective::Pointwise, None) => return Err(Failure::Usage("--objective pointwise needs --x0".into())),
    };
    let combiner = a.combiner.map(|c| match c {
        CombinerArg::Min => Combiner::Min,
        CombinerArg::Max => Combiner::Max,
    });
    let cert = solve_upper_bound(&sys, &cost, &g, &objective, combiner, opts)?;
    eprintln!("combiner: {}", cert.combiner().as_str());
    eprintln!("objective: {:.9}", cert.objective_value());
    if let Some(x) = &x0 {
        eprintln!("value: {:.9}", evaluate(&cert, x)?);
    }
    let body = cert.to_json() + "\n";
    emit(mb, a.output.as_deref(), CERTIFICATE_SCHEMA, body.as_bytes())
}

fn tighten_cmd(a: TightenArgs, opts: &SolverOptions, mut mb: ManifestBuilder) -> CmdResult {
    let cert = Certificate::from_json(&read(&mut mb, &a.cert)?)?;
    let (sys, cost) = load_system(&mut mb, &a.system)?;
    let result = match cert.combiner() {
        Combiner::Max => tightness_max_with(&cert, &sys, &cost, opts)?,
        Combiner::Min => tightness_min_with(&cert, &sys, &cost, opts, a.min_case_cap)?,
    };
    eprintln!("mu: {:.9}", result.mu);
    let file = result.to_file(&cert, a.multipliers);
    let body = serde_json::to_string_pretty(&file).map_err(Error::from)? + "\n";
    emit(mb, a.output.as_deref(), TIGHTNESS_SCHEMA, body.as_bytes())
}

fn synth_cmd(a: SynthArgs, opts: &SolverOptions, mut mb: ManifestBuilder) -> CmdResult {
    let (sys, cost) = load_system(&mut mb, &a.system)?;
    let g = load_graph(&mut mb, &a.graph)?;
    let x0 = a.x0.as_deref().map(parse_state).transpose()?;
    let objective = match (a.objective, &x0) {
        (SynthObjective::Surrogate, _) => SynthesisObjective::SurrogateVolume,
        (SynthObjective::Pointwise, Some(x)) => SynthesisObjective::Pointwise(x.clone()),
        (SynthObjective::Pointwise, None) => return Err(Failure::Usage("--objective pointwise needs --x0".into())),
    };
    let ctrl = synthesize(&sys, &cost, &g, &objective, opts)?;
    if let Some(x) = &x0 {
        eprintln!("value: {:.9}", ctrl.value(x)?);
    }
    let body = ctrl.to_json() + "\n";
    emit(mb, a.output.as_deref(), CONTROLLER_SCHEMA, body.as_bytes())
}

fn parse_mu(mb: &mut ManifestBuilder, text: &str) -> Result<f64, Failure> {
    if let Ok(v) = text.parse::<f64>() {
        return Ok(v);
    }
    let file: TightnessFile = serde_json::from_str(&read(mb, Path::new(text))?).map_err(Error::from)?;
    Ok(file.mu)
}

fn oracle_cmd(a: OracleArgs, mut mb: ManifestBuilder) -> CmdResult {
    let (sys, cost) = load_system(&mut mb, &a.system)?;
    let mut states: Vec<Vector> = a.x0.iter().map(|s| parse_state(s)).collect::<Result<_, _>>()?;
    if let Some(points) = a.grid {
        if sys.state_dim() != 2 {
            return Err(Failure::Usage("--grid needs a two-state system".into()));
        }
        states.extend(experiments::theta_grid(points).into_iter().map(unit));
    }
    if states.is_empty() {
        return Err(Failure::Usage("oracle needs --x0 or --grid".into()));
    }
    let controller = a
        .controller
        .as_deref()
        .map(|p| Ok::<_, Failure>(Controller::from_json(&read(&mut mb, p)?)?))
        .transpose()?;
    let cert = a
        .cert
        .as_deref()
        .map(|p| Ok::<_, Failure>(Certificate::from_json(&read(&mut mb, p)?)?))
        .transpose()?;
    let mu = a.mu.as_deref().map(|t| parse_mu(&mut mb, t)).transpose()?;
    let tail = TailBound::auto(&sys, &cost);
    let adaptive = AdaptiveOptions {
        max_horizon: a.horizon,
        ..AdaptiveOptions::default()
    };
    let mut rows = Vec::with_capacity(states.len());
    for x in &states {
        let result = match &controller {
            Some(ctrl) => closed_loop_oracle(ctrl, &sys, &cost, x, a.horizon, 0.0)?,
            None => value_oracle_adaptive(&sys, &cost, x, &tail, &adaptive)?,
        };
        let v = match (&cert, &controller) {
            (Some(c), _) => Some(evaluate(c, x)?),
            (None, Some(ctrl)) => Some(ctrl.value(x)?),
            (None, None) => None,
        };
        rows.push(OracleRow {
            result,
            v,
            v_over_mu: v.zip(mu).map(|(v, mu)| v / mu),
        });
    }
    let mut body = Vec::new();
    write_oracle_csv(&mut body, &rows)?;
    emit(mb, a.output.as_deref(), ORACLE_CSV_SCHEMA, &body)
}

fn parse_config(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(format!("cannot parse config {text:?}; expected n,M"));
    let (n, m) = text.split_once(',').ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
}

fn csv_bytes<T: serde::Serialize>(rows: &[T]) -> Result<Vec<u8>, Failure> {
    let mut body = Vec::new();
    experiments::write_csv(&mut body, rows)?;
    Ok(body)
}

/// `stem.suffix.csv` next to `primary`.
fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let stem = primary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    primary.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn repro_cmd(a: ReproArgs, opts: &SolverOptions, mut mb: ManifestBuilder) -> CmdResult {
    let orders = |default: &str| parse_orders(a.orders.as_deref().unwrap_or(default)).map_err(Failure::from);
    let default_name = format!("{}.csv", format!("{:?}", a.target).to_lowercase());
    let output = a.output.clone().unwrap_or_else(|| PathBuf::from(default_name));
    let mut extra: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let body = match a.target {
        ReproTarget::Example2 => {
            let report = experiments::example2(opts)?;
            eprintln!("max deviation from printed matrices: {:.6}", report.max_abs_deviation);
            csv_bytes(&report.rows())?
        }
        ReproTarget::Table1 => {
            let configs: Vec<(usize, usize)> = if a.config.is_empty() {
                vec![(2, 2), (5, 3), (8, 2)]
            } else {
                a.config.iter().map(|c| parse_config(c)).collect::<Result<_, _>>()?
            };
            mb.seed(a.seed);
            let (cells, samples) = experiments::table1(&configs, &orders("1..4")?, a.realizations, a.seed, opts)?;
            extra.push((sibling(&output, "samples"), csv_bytes(&samples)?));
            csv_bytes(&cells)?
        }
        ReproTarget::Table2 => csv_bytes(&experiments::table2(&orders("1..5")?, opts)?)?,
        ReproTarget::Fig2 => csv_bytes(&experiments::fig2(a.points, opts)?)?,
        ReproTarget::Fig3 => csv_bytes(&experiments::fig3(&orders("1..3")?, a.points, opts)?)?,
        ReproTarget::Fig4 => csv_bytes(&experiments::fig4(&orders("1..3")?, a.points, opts)?)?,
    };
    fs::write(&output, &body).map_err(Error::from)?;
    mb.output(&output, experiments::EXPERIMENT_CSV_SCHEMA);
    for (path, bytes) in &extra {
        fs::write(path, bytes).map_err(Error::from)?;
        mb.output(path, experiments::EXPERIMENT_CSV_SCHEMA);
    }
    eprintln!("wrote {}", output.display());
    write_manifest(mb, &output)
}
