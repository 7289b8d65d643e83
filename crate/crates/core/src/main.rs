use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use treebell::catalog::{self, Scenario};
use treebell::classical::{self, DEFAULT_CARDINALITY};
use treebell::expression::Inequality;
use treebell::extension::{build_base, extend_inequality, Base, DuplicationMap, Extension, SettingPartition};
use treebell::network::ExtensionIds;
use treebell::optimizer::AlternatingOptions;
use treebell::quantum::{critical_visibility, lhs_min, set_visibility, total_visibility, QuantumStrategy, Visibility};
use treebell::report::{linear_fit, Cell, Csv, ViolationReport};

#[derive(Parser)]
#[command(name = "treebell", version, about = "Bell-type inequalities on tree networks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply extension steps to a base inequality.
    Build(BuildArgs),
    /// Write a catalog scenario's inequality and strategy.
    Catalog(CatalogArgs),
    /// Minimize the left-hand side over weights for a quantum strategy.
    Quantum(QuantumArgs),
    /// Critical visibility of a quantum strategy.
    Vc(VcArgs),
    /// Check random or adversarial classical models against the bound.
    Classical(ClassicalArgs),
    /// Left-hand side over a range of visibilities.
    Scan(ScanArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// chsh, mermin3 or star_base(L).
    #[arg(long, conflicts_with = "network")]
    base: Option<String>,
    /// Inequality JSON to start from.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Step script: {"base"?: ..., "steps": [{"at", "L", ...}]}.
    #[arg(long)]
    steps: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CatalogArgs {
    /// chsh, mermin3, example1, example2, example3 or example4.
    name: String,
    #[arg(long = "N", default_value_t = 2)]
    n: usize,
    #[arg(long = "L", default_value_t = 2)]
    l: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Write the unscaled recursive construction instead of the reported normalization.
    #[arg(long)]
    canonical: bool,
}

#[derive(Args)]
struct Input {
    /// Inequality JSON, or a catalog name such as example4 or example2_N2_L2.
    #[arg(long)]
    ineq: String,
    /// Strategy JSON; defaults to the catalog strategy when --ineq names one.
    #[arg(long)]
    strategy: Option<PathBuf>,
}

#[derive(Args)]
struct QuantumArgs {
    #[command(flatten)]
    input: Input,
    /// Total visibility V; every source gets V^(1/N).
    #[arg(long, conflicts_with = "per_source")]
    visibility: Option<f64>,
    /// Comma-separated visibility per source, in network order.
    #[arg(long, value_delimiter = ',')]
    per_source: Option<Vec<f64>>,
    /// Also compute the critical visibility.
    #[arg(long)]
    with_vc: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VcArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct ClassicalArgs {
    #[arg(long)]
    ineq: String,
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    #[arg(long, default_value_t = DEFAULT_CARDINALITY)]
    cardinality: usize,
    /// Defaults to TREEBELL_SEED, then a fixed constant.
    #[arg(long)]
    seed: Option<u64>,
    /// Also run a hill-climbing search for the largest left-hand side.
    #[arg(long)]
    adversarial: bool,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Directory for the summary CSV and any counterexample.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    #[arg(long, default_value_t = 1.0)]
    to: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status for a classical model that breaks the bound.
const EXIT_COUNTEREXAMPLE: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Build(a) => build(a),
        Command::Catalog(a) => write_catalog(a),
        Command::Quantum(a) => quantum(a),
        Command::Vc(a) => vc(a),
        Command::Classical(a) => classical_campaign(a),
        Command::Scan(a) => scan(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let resource = e.chain().any(|c| match c.downcast_ref::<treebell::Error>() {
                Some(err) => err.is_resource_limit(),
                None => false,
            });
            ExitCode::from(if resource { 2 } else { 1 })
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepScript {
    base: Option<String>,
    #[serde(default)]
    steps: Vec<StepSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepSpec {
    at: String,
    #[serde(rename = "L")]
    l: usize,
    group: Option<String>,
    source: Option<String>,
    observers: Option<Vec<String>>,
    /// Settings of `at` per block, in label order.
    partition: Option<Vec<Vec<usize>>>,
    /// Original setting of each new setting.
    duplication: Option<Vec<usize>>,
}

impl StepSpec {
    fn to_extension(&self) -> Result<Extension> {
        let mut ext = Extension::new(self.at.clone(), self.l);
        ext.group = self.group.clone();
        ext.ids = match (&self.source, &self.observers) {
            (Some(source), Some(observers)) => {
                Some(ExtensionIds { source: source.clone(), observers: observers.clone() })
            }
            (None, None) => None,
            _ => bail!("step at '{}': give both 'source' and 'observers' or neither", self.at),
        };
        ext.partition = self.partition.clone().map(|blocks| SettingPartition { observer: self.at.clone(), blocks });
        if let Some(map) = &self.duplication {
            let originals = map.iter().max().map_or(0, |m| m + 1);
            if originals == 0 || map.len() % originals != 0 {
                bail!("step at '{}': duplication map does not repeat settings evenly", self.at);
            }
            ext.duplication = Some(DuplicationMap {
                observer: self.at.clone(),
                new_to_old: map.clone(),
                multiplicity: map.len() / originals,
            });
        }
        Ok(ext)
    }
}

fn build(a: BuildArgs) -> Result<u8> {
    let script: Option<StepScript> = a.steps.as_deref().map(read_json).transpose()?;
    let base_name = a.base.or_else(|| script.as_ref().and_then(|s| s.base.clone()));
    let mut ineq: Inequality = match (&a.network, base_name) {
        (Some(path), _) => {
            let ineq: Inequality = read_json(path)?;
            ineq.validate().map_err(treebell::Error::from)?;
            ineq
        }
        (None, Some(name)) => {
            let base: Base = name.parse().map_err(treebell::Error::from)?;
            build_base(base).map_err(treebell::Error::from)?
        }
        (None, None) => bail!("give --base, --network or a script with a base"),
    };
    for step in script.iter().flat_map(|s| &s.steps) {
        ineq = extend_inequality(&ineq, &step.to_extension()?).map_err(treebell::Error::from)?;
    }
    write_text(a.out.as_deref(), &to_json(&ineq)?)?;
    Ok(0)
}

fn write_catalog(a: CatalogArgs) -> Result<u8> {
    let s = catalog::scenario(&a.name, a.n, a.l).map_err(treebell::Error::from)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let ineq = if a.canonical { &s.canonical } else { &s.inequality };
    let ineq_path = a.out_dir.join(format!("{}.inequality.json", s.name));
    let strat_path = a.out_dir.join(format!("{}.strategy.json", s.name));
    fs::write(&ineq_path, to_json(ineq)?)?;
    fs::write(&strat_path, to_json(&s.strategy)?)?;
    println!("{}", ineq_path.display());
    println!("{}", strat_path.display());
    Ok(0)
}

/// Inequality and strategy from files, or from the catalog by name.
fn load(input: &Input) -> Result<(String, Inequality, QuantumStrategy)> {
    let path = Path::new(&input.ineq);
    let (name, ineq, fallback) = if path.exists() {
        let name = path.file_stem().map(|s| s.to_string_lossy().trim_end_matches(".inequality").to_string());
        (name.unwrap_or_default(), read_json::<Inequality>(path)?, None)
    } else {
        let s: Scenario = catalog::scenario(&input.ineq, 2, 2)
            .map_err(treebell::Error::from)
            .with_context(|| format!("'{}' is neither a file nor a catalog scenario", input.ineq))?;
        (s.name, s.inequality, Some(s.strategy))
    };
    ineq.validate().map_err(treebell::Error::from)?;
    let strategy = match (&input.strategy, fallback) {
        (Some(p), _) => read_json(p)?,
        (None, Some(s)) => s,
        (None, None) => bail!("--strategy is required when --ineq is a file"),
    };
    Ok((name, ineq, strategy))
}

fn quantum(a: QuantumArgs) -> Result<u8> {
    let (name, ineq, strategy) = load(&a.input)?;
    let vis = match (a.visibility, a.per_source) {
        (Some(v), _) => Some(Visibility::Global(v)),
        (None, Some(list)) => Some(Visibility::PerSource(list)),
        (None, None) => None,
    };
    let (strategy, v) = match vis {
        Some(vis) => set_visibility(&ineq.network, &strategy, &vis).map_err(treebell::Error::from)?,
        None => {
            let v = total_visibility(&ineq.network, &strategy);
            (strategy, v)
        }
    };
    let r = lhs_min(&ineq, &strategy, &AlternatingOptions::default()).map_err(treebell::Error::from)?;
    let vc = if a.with_vc {
        critical_visibility(&ineq, &strategy, 1e-9).map_err(treebell::Error::from)?.value()
    } else {
        None
    };
    let weights = r.outcome.minimum().map(|m| m.weights.clone());
    let report = ViolationReport::new(name, r.value, ineq.bound, weights, v, vc);
    write_text(a.out.as_deref(), &to_json(&report)?)?;
    Ok(0)
}

fn vc(a: VcArgs) -> Result<u8> {
    let (name, ineq, strategy) = load(&a.input)?;
    let result = critical_visibility(&ineq, &strategy, a.tol).map_err(treebell::Error::from)?;
    let value = match result.value() {
        Some(v) => serde_json::json!(v),
        None => serde_json::json!("none"),
    };
    let out = serde_json::json!({ "inequality": name, "V_c": value, "result": format!("{result:?}") });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}

fn load_inequality(spec: &str) -> Result<(String, Inequality)> {
    let path = Path::new(spec);
    if path.exists() {
        let ineq: Inequality = read_json(path)?;
        ineq.validate().map_err(treebell::Error::from)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().trim_end_matches(".inequality").to_string());
        return Ok((name.unwrap_or_default(), ineq));
    }
    let s = catalog::scenario(spec, 2, 2)
        .map_err(treebell::Error::from)
        .with_context(|| format!("'{spec}' is neither a file nor a catalog scenario"))?;
    Ok((s.name, s.inequality))
}

fn classical_campaign(a: ClassicalArgs) -> Result<u8> {
    let (name, ineq) = load_inequality(&a.ineq)?;
    let seed = a.seed.unwrap_or_else(treebell::default_seed);
    let summary = classical::random_campaign(&ineq, a.cardinality, a.samples, seed).map_err(treebell::Error::from)?;
    let search = if a.adversarial {
        Some(classical::adversarial_search(&ineq, a.cardinality, a.iters, seed).map_err(treebell::Error::from)?)
    } else {
        None
    };

    fs::create_dir_all(&a.out_dir)?;
    let mut csv = Csv::new(&[
        "inequality",
        "samples",
        "cardinality",
        "seed",
        "violations",
        "invariant_failures",
        "joint_fallbacks",
        "max_lhs",
        "bound",
        "adversarial_lhs",
    ]);
    csv.row(&[
        Cell::Text(name.clone()),
        Cell::Int(summary.samples),
        Cell::Int(summary.cardinality as u64),
        Cell::Int(seed),
        Cell::Int(summary.violations),
        Cell::Int(summary.invariant_failures),
        Cell::Int(summary.joint_fallbacks),
        Cell::Num(summary.max_lhs),
        Cell::Num(summary.bound),
        match &search {
            Some(s) => Cell::Num(s.lhs),
            None => Cell::Text(String::new()),
        },
    ]);
    let csv_path = a.out_dir.join(format!("{name}.classical.csv"));
    fs::write(&csv_path, csv.finish())?;
    println!("{}", csv_path.display());

    let mut code = 0;
    if let Some(cx) = &summary.counterexample {
        let path = a.out_dir.join(format!("{name}.counterexample.json"));
        fs::write(&path, to_json(cx)?)?;
        eprintln!("counterexample: {} ({})", cx.reason, path.display());
        code = EXIT_COUNTEREXAMPLE;
    }
    if let Some(s) = &search {
        if s.lhs > ineq.bound + classical::BOUND_TOL {
            let r = classical::check_model(&ineq, &s.model).map_err(treebell::Error::from)?;
            let cx = classical::Counterexample {
                index: None,
                model: s.model.clone(),
                blocks: r.blocks,
                induced: r.induced,
                lhs: r.lhs,
                bound: r.bound,
                reason: "adversarial search exceeded the classical bound".into(),
            };
            let path = a.out_dir.join(format!("{name}.adversarial_counterexample.json"));
            fs::write(&path, to_json(&cx)?)?;
            eprintln!("counterexample: {} ({})", cx.reason, path.display());
            code = EXIT_COUNTEREXAMPLE;
        }
    }
    Ok(code)
}

fn scan(a: ScanArgs) -> Result<u8> {
    let (_, ineq, strategy) = load(&a.input)?;
    if a.step.is_nan() || a.step <= 0.0 || a.to < a.from {
        bail!("need step > 0 and from <= to");
    }
    let points = ((a.to - a.from) / a.step + 1e-9).floor() as usize;
    let opts = AlternatingOptions::default();
    let mut csv = Csv::new(&["V", "lhs_min", "bound", "violated"]);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..=points {
        let v = (a.from + i as f64 * a.step).min(a.to);
        let (s, _) = set_visibility(&ineq.network, &strategy, &Visibility::Global(v)).map_err(treebell::Error::from)?;
        let r = lhs_min(&ineq, &s, &opts).map_err(treebell::Error::from)?;
        let violated = treebell::report::is_violation(r.value / ineq.bound);
        csv.row(&[Cell::Num(v), Cell::Num(r.value), Cell::Num(ineq.bound), Cell::Bool(violated)]);
        if r.value.is_finite() {
            xs.push(v);
            ys.push(r.value);
        }
    }
    write_text(a.out.as_deref(), &csv.finish())?;
    if xs.len() >= 2 {
        let (intercept, slope, residual) = linear_fit(&xs, &ys);
        eprintln!("slope {slope:.12} intercept {intercept:.3e} max residual {residual:.3e}");
    }
    Ok(0)
}
