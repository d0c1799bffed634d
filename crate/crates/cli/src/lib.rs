//! `pila` command-line front end.
//!
//! Every subcommand writes into its own run folder `<out>/<cmd>-<hash12>/`
//! (see [`manifest`]) and prints that folder on standard output. Exit codes:
//! 0 success, 1 invalid input or configuration, 2 runtime failure.

pub mod config;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pila_core::gnssdata::{
    generate, load_series, read_dataset_dir, split, write_dataset_dir, Dataset, DayWindow, SyntheticScenario,
};
use pila_core::mogi::{sensitivity_profile, GridSpec, MogiParams, StationGeometry, Variable};
use pila_core::trainer::{evaluate, sweep, train, Checkpoint, ModelKind, SweepAxis, SweepRow};
use serde::{Deserialize, Serialize};

use config::RunConfigFile;
use manifest::{Run, RunBuilder};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or input files (exit 1).
    Validation(String),
    /// Failure while computing (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl From<pila_core::Error> for CliError {
    fn from(e: pila_core::Error) -> Self {
        use pila_core::Error as E;
        match e {
            E::Config(_)
            | E::Parse { .. }
            | E::UnknownVariable { .. }
            | E::UnknownStation(_)
            | E::SparseStation { .. }
            | E::DimensionMismatch(_)
            | E::EmptySplit
            | E::NonFiniteInput { .. }
            | E::OutOfUnitRange { .. }
            | E::Csv(_)
            | E::Json(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "pila", version, about = "Physics-informed low-rank augmentation for Mogi source inversion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; every key has a built-in default
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, splitting and training [default: train.seed = 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base directory for run folders [default: paths.output, else ./runs]
    #[arg(long, global = true, env = "PILA_OUTPUT_DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic GNSS scenario with ground truth
    GenData,
    /// Train a model; writes checkpoint.json and history.csv
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes metrics.csv, params.csv, decomposition.csv
    Eval(EvalArgs),
    /// Train and evaluate one configuration per axis value; writes comparison.csv
    Sweep(SweepArgs),
    /// Standardized forward-model gradients over a grid; writes sensitivity.csv
    Sensitivity(SensitivityArgs),
    /// Render SVG line plots from run folders
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Dataset folder from gen-data, or an observations CSV (date,station,east_mm,north_mm,up_mm)
    /// [default: paths.data, else generate the configured scenario in memory]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out test window as START,END day indices, END exclusive
    /// [default: windows.toml of the dataset, else scenario.test_window]
    #[arg(long, value_parser = parse_window)]
    test_window: Option<DayWindow>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Model kind: pila or hvae [default: model.kind = pila]
    #[arg(long)]
    model: Option<ModelKind>,
    /// Residual rank r [default: model.rank = 4]
    #[arg(long)]
    rank: Option<usize>,
    /// Training epochs [default: train.epochs = 150]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: train.batch_size]
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// checkpoint.json or a train run folder
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Event window START,END for the capture ratio [default: windows.toml of the dataset]
    #[arg(long, value_parser = parse_window)]
    event_window: Option<DayWindow>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Axis: rank, ablation, prior or model
    #[arg(long)]
    axis: String,
    /// Comma-separated values, e.g. 1,4,8 | full,no-residual,no-prior | endstop,kl-1 | pila,hvae
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Concurrent training runs
    #[arg(long, env = "PILA_WORKERS", default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Event window START,END for the capture ratio [default: windows.toml of the dataset]
    #[arg(long, value_parser = parse_window)]
    event_window: Option<DayWindow>,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    /// One or two swept variables: x_m, y_m, depth, dv
    #[arg(long, value_delimiter = ',', required = true)]
    sweep: Vec<Variable>,
    /// Fixed values for the other variables, e.g. dv=3.7e6,depth=9.35
    /// [default: the scenario source with dv = scenario.event_total]
    #[arg(long, value_delimiter = ',')]
    fixed: Vec<String>,
    /// Grid points per swept variable
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Range override VAR=LO:HI, repeatable [default: the model bounds]
    #[arg(long)]
    range: Vec<String>,
    /// Dataset whose geometry and column spread are used
    /// [default: generate the configured scenario in memory]
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run folders holding params.csv, decomposition.csv, history.csv or comparison.csv
    #[arg(long, value_delimiter = ',', required = true)]
    input: Vec<PathBuf>,
    /// Omit the generation timestamp so repeated runs are byte-identical
    #[arg(long)]
    deterministic: bool,
}

fn parse_window(s: &str) -> Result<DayWindow, String> {
    let (a, b) = s.split_once(',').ok_or("expected START,END")?;
    let a: i64 = a.trim().parse().map_err(|_| format!("bad start `{a}`"))?;
    let b: i64 = b.trim().parse().map_err(|_| format!("bad end `{b}`"))?;
    if a >= b {
        return Err(format!("start {a} must be below end {b}"));
    }
    Ok(DayWindow::new(a, b))
}

/// Windows stored next to generated data.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Windows {
    event: [i64; 2],
    test: [i64; 2],
}

const WINDOWS_FILE: &str = "windows.toml";

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Errors go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("pila: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfigFile,
    seed: u64,
    base: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(p) => RunConfigFile::load(p)?,
            None => RunConfigFile::default(),
        };
        if let Some(s) = common.seed {
            cfg.train.seed = s;
        }
        let base = common
            .out_dir
            .clone()
            .or_else(|| cfg.paths.output.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        Ok(Self {
            seed: cfg.train.seed,
            cfg,
            base,
        })
    }

    fn apply(&mut self, m: &ModelArgs) {
        if let Some(k) = m.model {
            self.cfg.model.kind = k;
        }
        if let Some(r) = m.rank {
            self.cfg.model.rank = r;
        }
        if let Some(e) = m.epochs {
            self.cfg.train.epochs = e;
        }
        if let Some(b) = m.batch_size {
            self.cfg.train.batch_size = b;
        }
    }

    /// Canonical config with paths removed; inputs are hashed by content.
    fn canonical(&self) -> String {
        let mut c = self.cfg.clone();
        c.paths = Default::default();
        c.scenario.geometry = None;
        c.canonical()
    }

    fn builder(&self, command: &str) -> RunBuilder {
        RunBuilder::new(command, self.seed, self.canonical())
    }
}

/// Loaded or generated data plus whatever windows came with it.
struct Input {
    data: Dataset,
    windows: Option<Windows>,
    source: Option<PathBuf>,
}

fn load_input(ctx: &Ctx, explicit: Option<&Path>) -> Result<Input, CliError> {
    let path = explicit.map(Path::to_path_buf).or_else(|| ctx.cfg.paths.data.clone());
    let Some(path) = path else {
        let sc = SyntheticScenario::from_config(&ctx.cfg.scenario(), ctx.seed)?;
        let windows = Windows {
            event: [sc.event_window.start, sc.event_window.end],
            test: [sc.test_window.start, sc.test_window.end],
        };
        return Ok(Input {
            data: generate(&sc),
            windows: Some(windows),
            source: None,
        });
    };
    if path.is_dir() {
        let data = read_dataset_dir(&path)?;
        let wpath = path.join(WINDOWS_FILE);
        let windows = if wpath.exists() {
            let text = std::fs::read_to_string(&wpath).map_err(io_err(&wpath))?;
            Some(
                toml::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("{}: {}", wpath.display(), e.message())))?,
            )
        } else {
            None
        };
        Ok(Input {
            data,
            windows,
            source: Some(path),
        })
    } else if path.is_file() {
        let gpath = ctx
            .cfg
            .paths
            .geometry
            .clone()
            .ok_or_else(|| CliError::Validation("`paths.geometry` is required to load an observations CSV".into()))?;
        let geometry = StationGeometry::read_csv(&gpath)?;
        Ok(Input {
            data: load_series(&path, &geometry)?,
            windows: None,
            source: Some(path),
        })
    } else {
        Err(CliError::Validation(format!("`--data`: `{}` does not exist", path.display())))
    }
}

impl Input {
    fn test_window(&self, flag: Option<DayWindow>, ctx: &Ctx) -> DayWindow {
        flag.or_else(|| self.windows.as_ref().map(|w| DayWindow::new(w.test[0], w.test[1])))
            .unwrap_or_else(|| {
                let [a, b] = ctx.cfg.scenario.test_window;
                DayWindow::new(a, b)
            })
    }

    fn event_window(&self, flag: Option<DayWindow>) -> Option<DayWindow> {
        flag.or_else(|| self.windows.as_ref().map(|w| DayWindow::new(w.event[0], w.event[1])))
    }

    fn register(&self, b: RunBuilder) -> Result<RunBuilder, CliError> {
        match &self.source {
            Some(p) => b.input("data", p),
            None => Ok(b),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_toml(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

fn window_arg(w: Option<DayWindow>) -> String {
    w.map_or_else(|| "auto".into(), |w| format!("{},{}", w.start, w.end))
}

fn dispatch(cli: Cli) -> Result<PathBuf, CliError> {
    let mut ctx = Ctx::new(&cli.common)?;
    match &cli.command {
        Command::Train(a) => ctx.apply(&a.model),
        Command::Sweep(a) => ctx.apply(&a.model),
        _ => {}
    }
    ctx.cfg.validate()?;
    match cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Train(a) => cmd_train(&ctx, &a),
        Command::Eval(a) => cmd_eval(&ctx, &a),
        Command::Sweep(a) => cmd_sweep(&ctx, &a),
        Command::Sensitivity(a) => cmd_sensitivity(&ctx, &a),
        Command::Report(a) => report::run(&ctx.base, &a.input, a.deterministic),
    }
}

fn gen_data(ctx: &Ctx) -> Result<PathBuf, CliError> {
    let scen = ctx.cfg.scenario();
    let sc = SyntheticScenario::from_config(&scen, ctx.seed)?;
    let mut b = ctx.builder("gen-data");
    if let Some(g) = &scen.geometry {
        b = b.input("geometry", g)?;
    }
    let mut run = b.create(&ctx.base)?;
    let data = generate(&sc);
    write_dataset_dir(&data, &run.dir)?;
    for f in ["geometry.csv", "observations.csv", "truth_params.csv", "components.csv"] {
        run.path(f);
    }
    let windows = Windows {
        event: [sc.event_window.start, sc.event_window.end],
        test: [sc.test_window.start, sc.test_window.end],
    };
    write_toml(&run.path(WINDOWS_FILE), &windows)?;
    write_toml(&run.path("scenario.toml"), &scen)?;
    run.finish()
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<PathBuf, CliError> {
    let input = load_input(ctx, a.data.data.as_deref())?;
    let window = input.test_window(a.data.test_window, ctx);
    let b = input.register(ctx.builder("train"))?.arg("test_window", window_arg(Some(window)));
    let splits = split(&input.data, window, ctx.seed)?;
    let (ckpt, hist) = train(&splits, &ctx.cfg.train_config())?;
    let mut run = b.create(&ctx.base)?;
    ckpt.save(&run.path("checkpoint.json"))?;
    hist.write_csv(create(&run.path("history.csv"))?)?;
    if let Some(w) = &input.windows {
        write_toml(&run.path(WINDOWS_FILE), w)?;
    }
    run.finish()
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<PathBuf, CliError> {
    let ckpt_path = if a.checkpoint.is_dir() {
        a.checkpoint.join("checkpoint.json")
    } else {
        a.checkpoint.clone()
    };
    if !ckpt_path.is_file() {
        return Err(CliError::Validation(format!("`--checkpoint`: `{}` not found", ckpt_path.display())));
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let input = load_input(ctx, a.data.data.as_deref())?;
    let window = input.test_window(a.data.test_window, ctx);
    let event = input.event_window(a.event_window);
    let idx: Vec<usize> = (0..input.data.len())
        .filter(|&i| window.contains(input.data.days[i]))
        .collect();
    if idx.is_empty() {
        return Err(CliError::Validation(format!(
            "`--test-window`: no samples in [{}, {})",
            window.start, window.end
        )));
    }
    let test = input.data.subset(&idx);
    let b = input
        .register(ctx.builder("eval"))?
        .input("checkpoint", &ckpt_path)?
        .arg("test_window", window_arg(Some(window)))
        .arg("event_window", window_arg(event));
    let eval = evaluate(&ckpt, &test, event)?;
    let mut run = b.create(&ctx.base)?;
    eval.metrics.write_csv(create(&run.path("metrics.csv"))?)?;
    eval.write_params_csv(create(&run.path("params.csv"))?)?;
    eval.write_decomposition_csv(create(&run.path("decomposition.csv"))?, &test)?;
    run.finish()
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> Result<PathBuf, CliError> {
    let values: Vec<&str> = a.values.iter().map(String::as_str).collect();
    let axis = SweepAxis::parse(&a.axis, &values).map_err(|e| CliError::Validation(format!("`--axis`/`--values`: {e}")))?;
    if a.workers == 0 {
        return Err(CliError::Validation("`--workers` must be at least 1".into()));
    }
    let input = load_input(ctx, a.data.data.as_deref())?;
    let window = input.test_window(a.data.test_window, ctx);
    let event = input.event_window(a.event_window);
    // workers only change scheduling, so they stay out of the hash
    let b = input
        .register(ctx.builder("sweep"))?
        .arg("axis", &a.axis)
        .arg("values", a.values.join(","))
        .arg("test_window", window_arg(Some(window)))
        .arg("event_window", window_arg(event));
    let splits = split(&input.data, window, ctx.seed)?;
    let rows = sweep(&splits, &ctx.cfg.train_config(), &axis, event, a.workers)?;
    let mut run = b.create(&ctx.base)?;
    SweepRow::write_csv(&rows, create(&run.path("comparison.csv"))?)?;
    run.finish()
}

fn cmd_sensitivity(ctx: &Ctx, a: &SensitivityArgs) -> Result<PathBuf, CliError> {
    let bounds = ctx.cfg.model.bounds;
    if a.points == 0 {
        return Err(CliError::Validation("`--points` must be at least 1".into()));
    }
    let mut swept = a.sweep.clone();
    swept.dedup();
    if swept.len() > 2 {
        return Err(CliError::Validation("`--sweep` takes one or two variables".into()));
    }
    let src = ctx.cfg.scenario.source;
    let mut fixed = MogiParams::new(src.x_m, src.y_m, src.depth, ctx.cfg.scenario.event_total);
    for kv in &a.fixed {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("`--fixed`: expected VAR=VALUE, got `{kv}`")))?;
        let var: Variable = k.trim().parse()?;
        let val: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("`--fixed`: bad number `{v}` for {var}")))?;
        fixed.set(var, val);
    }
    let mut ranges: Vec<[f64; 2]> = swept.iter().map(|v| bounds.get(*v)).collect();
    for r in &a.range {
        let bad = || CliError::Validation(format!("`--range`: expected VAR=LO:HI, got `{r}`"));
        let (k, v) = r.split_once('=').ok_or_else(bad)?;
        let (lo, hi) = v.split_once(':').ok_or_else(bad)?;
        let var: Variable = k.trim().parse()?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let pos = swept
            .iter()
            .position(|s| *s == var)
            .ok_or_else(|| CliError::Validation(format!("`--range`: {var} is not swept")))?;
        ranges[pos] = [lo, hi];
    }
    let input = load_input(ctx, a.data.as_deref())?;
    let (_, std) = input.data.column_stats();
    let grid = GridSpec {
        sweeps: swept.iter().zip(&ranges).map(|(v, r)| (*v, *r, a.points)).collect(),
        fixed,
    };
    let mut b = input
        .register(ctx.builder("sensitivity"))?
        .arg("sweep", swept.iter().map(|v| v.name()).collect::<Vec<_>>().join(","))
        .arg("points", a.points)
        .arg("fixed", format!("{:?}", fixed.as_array()));
    for (v, r) in swept.iter().zip(&ranges) {
        b = b.arg(&format!("range_{v}"), format!("{:?}", r));
    }
    let table = sensitivity_profile(&bounds, &input.data.geometry, &grid, &std)?;
    let mut run: Run = b.create(&ctx.base)?;
    table.write_csv(create(&run.path("sensitivity.csv"))?)?;
    run.finish()
}
