//! Batch front end: load a model, run one command, write its reports.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use bundle_menu::envelope::solve_minimal_menu;
use bundle_menu::oracle::{builtin_fixture, compare, envelope_csv, grid_envelope, random_parametric_model};
use bundle_menu::pricing::{allocation_csv, build_prices, compute_breakpoints, expected_revenue, verify_ic_ir, IC_SLACK};
use bundle_menu::structure::{
    additive_nested_menu, check_full_tree, check_least_favorite_tree, check_pure_bundling, check_robust_ratios,
    check_tree_or_nested_conditions, check_union_quantity, quantity_table,
};
use bundle_menu::{classify, model_from_str, Bundle, ConditionReport, Error, MenuSolution, Result, VirtualModel};

mod output;

pub use output::{curves_csv, write_atomic};

pub const DEFAULT_GRID: usize = 2001;
pub const DEFAULT_TOL_ROOT: f64 = 1e-9;
/// Revenue identity tolerance, relative to the revenue once it exceeds one.
pub const REVENUE_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Compute the minimal optimal menu (menu.json).
    Solve,
    /// Label the menu pure, nested, tree or other (structure.json).
    Classify,
    /// Breakpoints and prices (prices.json, allocation.csv).
    Price,
    /// Incentive and revenue checks on the priced menu (verify.json).
    Verify,
    /// Every structural condition on the model (conditions.json).
    Check,
    /// Brute-force grid envelope and comparison (envelope.csv, compare.json).
    Oracle,
    /// Virtual value curves of the menu plus their envelope (curves.csv).
    Curves,
}

impl Command {
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Command::Solve => &["menu.json"],
            Command::Classify => &["structure.json"],
            Command::Price => &["prices.json", "allocation.csv"],
            Command::Verify => &["verify.json"],
            Command::Check => &["conditions.json"],
            Command::Oracle => &["envelope.csv", "compare.json"],
            Command::Curves => &["curves.csv"],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    File(PathBuf),
    Fixture(String),
    /// Seeded random parametric model over `2 + seed % 5` goods.
    Random(u64),
}

impl ModelSource {
    /// `fixture:NAME`, `random:SEED`, `random` (uses `seed`) or a path.
    pub fn parse(spec: &str, seed: u64) -> Result<ModelSource> {
        if let Some(name) = spec.strip_prefix("fixture:") {
            return Ok(ModelSource::Fixture(name.to_string()));
        }
        if spec == "random" {
            return Ok(ModelSource::Random(seed));
        }
        if let Some(s) = spec.strip_prefix("random:") {
            let s = s.parse().map_err(|_| Error::Argument(format!("bad random seed {s:?}")))?;
            return Ok(ModelSource::Random(s));
        }
        Ok(ModelSource::File(PathBuf::from(spec)))
    }

    pub fn load(&self) -> Result<VirtualModel> {
        match self {
            ModelSource::File(p) => model_from_str(&read(p)?),
            ModelSource::Fixture(name) => builtin_fixture(name),
            ModelSource::Random(seed) => random_parametric_model(2 + (*seed % 5) as usize, *seed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelSource,
    pub command: Command,
    pub grid_size: usize,
    pub tol_ic: f64,
    pub tol_root: f64,
    pub force: bool,
    pub output_dir: PathBuf,
    pub no_clobber: bool,
    /// A previously written menu.json to use instead of solving.
    pub menu: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model: ModelSource, command: Command, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            model,
            command,
            grid_size: DEFAULT_GRID,
            tol_ic: IC_SLACK,
            tol_root: DEFAULT_TOL_ROOT,
            force: false,
            output_dir: output_dir.into(),
            no_clobber: false,
            menu: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 11 {
            return Err(Error::Argument(format!("grid size {} below 11", self.grid_size)));
        }
        for (name, tol) in [("tol-ic", self.tol_ic), ("tol-root", self.tol_root)] {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(Error::Argument(format!("{name} must be positive, got {tol}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "bundle-menu", version, about = "Minimal optimal bundling menus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Args)]
struct Opts {
    /// Model file, fixture:NAME, random:SEED or random
    #[arg(long, global = true)]
    model: Option<String>,
    /// Grid points for checks, exports and the oracle
    #[arg(long = "grid", global = true, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// Solve even when an assumption check fails
    #[arg(long, global = true)]
    force: bool,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Slack allowed in the incentive checks
    #[arg(long = "tol-ic", global = true, default_value_t = IC_SLACK)]
    tol_ic: f64,
    /// Bound on the crossing residual at each breakpoint
    #[arg(long = "tol-root", global = true, default_value_t = DEFAULT_TOL_ROOT)]
    tol_root: f64,
    /// Seed for --model random
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Refuse to overwrite existing outputs
    #[arg(long = "no-clobber", global = true)]
    no_clobber: bool,
    /// Use this menu.json instead of solving
    #[arg(long, global = true)]
    menu: Option<PathBuf>,
}

impl Cli {
    fn into_config(self) -> Result<RunConfig> {
        let o = self.opts;
        let spec = o.model.ok_or_else(|| Error::Argument("--model is required".into()))?;
        Ok(RunConfig {
            model: ModelSource::parse(&spec, o.seed)?,
            command: self.command,
            grid_size: o.grid,
            tol_ic: o.tol_ic,
            tol_root: o.tol_root,
            force: o.force,
            output_dir: o.out,
            no_clobber: o.no_clobber,
            menu: o.menu,
        })
    }
}

/// Process exit code for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Refused(_) => 2,
        Error::Validation(_)
        | Error::Argument(_)
        | Error::Domain { .. }
        | Error::MissingParameter(_)
        | Error::Size { .. }
        | Error::Json(_) => 3,
        _ => 4,
    }
}

pub fn error_json(err: &Error) -> Value {
    let mut v = json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": exit_code(err),
    });
    if let Error::Refused(report) = err {
        v["report"] = serde_json::to_value(report).expect("report serializes");
    }
    v
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            let v = json!({ "error": "usage", "message": e.kind().to_string(), "exit_code": 3 });
            eprintln!("{v}");
            return 3;
        }
    };
    match cli.into_config().and_then(|cfg| run(&cfg)) {
        Ok(paths) => {
            let outputs: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({ "outputs": outputs }));
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

/// Runs one command and returns the files written.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let targets: Vec<PathBuf> = cfg.command.outputs().iter().map(|f| cfg.output_dir.join(f)).collect();
    if cfg.no_clobber {
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(Error::Argument(format!("{} exists and --no-clobber is set", p.display())));
        }
    }
    let model = cfg.model.load()?;
    let contents = match cfg.command {
        Command::Solve => vec![pretty(&menu(cfg, &model)?.to_json())],
        Command::Classify => {
            let sol = menu(cfg, &model)?;
            let mut v = serde_json::to_value(classify(&sol.kept)?).expect("label serializes");
            v["menu"] = keys(&sol.kept);
            vec![pretty(&v)]
        }
        Command::Price => {
            let sol = menu(cfg, &model)?;
            let schedule = build_prices(&model, &compute_breakpoints(&model, &sol)?)?;
            vec![pretty(&schedule.to_json()), allocation_csv(&model, &schedule, cfg.grid_size)?]
        }
        Command::Verify => vec![pretty(&verify(cfg, &model)?)],
        Command::Check => vec![pretty(&check(cfg, &model)?)],
        Command::Oracle => {
            let sol = menu(cfg, &model)?;
            let env = grid_envelope(&model, cfg.grid_size)?;
            let report = compare(&model, &sol, &env)?;
            let support: Vec<Bundle> = env.support.iter().copied().collect();
            let summary = json!({
                "report": report,
                "kept": keys(&sol.kept),
                "support": keys(&support),
                "grid_size": cfg.grid_size,
            });
            vec![envelope_csv(&env), pretty(&summary)]
        }
        Command::Curves => {
            let sol = menu(cfg, &model)?;
            vec![curves_csv(&model, &sol.kept, cfg.grid_size)?]
        }
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    for (path, body) in targets.iter().zip(&contents) {
        write_atomic(path, body.as_bytes(), cfg.no_clobber)?;
    }
    Ok(targets)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON serializes");
    s.push('\n');
    s
}

fn keys(bundles: &[Bundle]) -> Value {
    bundles.iter().map(|b| b.key()).collect::<Vec<_>>().into()
}

/// The menu from `--menu`, or a fresh solve.
fn menu(cfg: &RunConfig, model: &VirtualModel) -> Result<MenuSolution> {
    match &cfg.menu {
        Some(path) => load_menu(path, model),
        None => solve_minimal_menu(model, cfg.force),
    }
}

pub fn load_menu(path: &Path, model: &VirtualModel) -> Result<MenuSolution> {
    let value: Value = serde_json::from_str(&read(path)?)?;
    let sol = MenuSolution::from_json(&value, model.n())?;
    if let Some(b) = sol.kept.iter().find(|&&b| !model.has_bundle(b)) {
        return Err(Error::Validation(format!("menu bundle {b} is not in the model")));
    }
    Ok(sol)
}

fn verify(cfg: &RunConfig, model: &VirtualModel) -> Result<Value> {
    let sol = menu(cfg, model)?;
    let cuts = compute_breakpoints(model, &sol)?;
    let schedule = build_prices(model, &cuts)?;
    let ic_ir = verify_ic_ir(model, &schedule, cfg.grid_size, cfg.tol_ic)?;

    let (by_envelope, by_price) = expected_revenue(model, &schedule, 1e-10)?;
    let gap = (by_envelope - by_price).abs();
    let revenue_ok = gap <= REVENUE_TOL * by_envelope.abs().max(1.0);

    // adjacent menu bundles must tie at the cut between them
    let mut worst = 0.0f64;
    for (i, &c) in cuts.cuts.iter().enumerate() {
        let a = model.eval_virtual(cuts.assignment[i], c)?;
        let b = model.eval_virtual(cuts.assignment[i + 1], c)?;
        worst = worst.max((a - b).abs());
    }
    let cuts_ok = worst <= cfg.tol_root;

    Ok(json!({
        "holds": ic_ir.holds() && revenue_ok && cuts_ok,
        "ic_ir": ic_ir,
        "revenue_identity": {
            "holds": revenue_ok,
            "envelope_integral": by_envelope,
            "price_integral": by_price,
            "gap": gap,
        },
        "breakpoints": {
            "holds": cuts_ok,
            "cuts": cuts.cuts,
            "max_residual": worst,
            "tolerance": cfg.tol_root,
        },
        "prices": schedule.to_json(),
        "forced": sol.forced,
    }))
}

fn outcome(name: &str, r: Result<ConditionReport>) -> Value {
    match r {
        Ok(report) => serde_json::to_value(report).expect("report serializes"),
        Err(e) => json!({ "name": name, "holds": "unknown", "error": { "kind": e.kind(), "message": e.to_string() } }),
    }
}

fn check(cfg: &RunConfig, model: &VirtualModel) -> Result<Value> {
    let mut reports = vec![
        outcome("monotonic_differences", model.check_monotonic_differences(cfg.grid_size)),
        outcome("scd_star", model.check_scd_star()),
        outcome("tree_or_nested", check_tree_or_nested_conditions(model)),
        outcome("full_tree", check_full_tree(model)),
        outcome("least_favorite_tree", check_least_favorite_tree(model)),
    ];
    let mut predicted = serde_json::Map::new();
    match additive_nested_menu(model) {
        Ok((m, r)) => {
            if r.holds() {
                predicted.insert("additive_nested".into(), keys(&m));
            }
            reports.push(outcome("additive_nested", Ok(r)));
        }
        Err(e) => reports.push(outcome("additive_nested", Err(e))),
    }
    reports.push(outcome("pure_bundling", check_pure_bundling(model)));
    match check_union_quantity(model) {
        Ok((r, m)) => {
            if r.holds() {
                predicted.insert("union_quantity".into(), keys(&m));
            }
            reports.push(outcome("union_quantity", Ok(r)));
        }
        Err(e) => reports.push(outcome("union_quantity", Err(e))),
    }
    // the robust test needs a menu; assumption failures are reported above
    let sol = match &cfg.menu {
        Some(p) => load_menu(p, model)?,
        None => solve_minimal_menu(model, true)?,
    };
    let mut robust = outcome("robust_ratios", check_robust_ratios(model, &sol.kept));
    if let (true, Some(notes)) = (sol.forced, robust["notes"].as_array_mut()) {
        notes.push(json!("menu solved with failing assumptions"));
    }
    reports.push(robust);

    let quantities = quantity_table(model)
        .map(|t| serde_json::to_value(t).expect("table serializes"))
        .unwrap_or_else(|e| json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
    Ok(json!({
        "reports": reports,
        "menu": keys(&sol.kept),
        "predicted_menus": predicted,
        "sold_alone": quantities,
        "notes": model.notes(),
    }))
}
