use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use critgap::baselines::{ashworth, raff, troutbeck, TroutbeckEstimate};
use critgap::data::{read_csv, simulate, Dataset, SimulationParams};
use critgap::emulator::{emulator_profile, write_profile_csv};
use critgap::estimation::{
    bootstrap, fit_with_starts, lr_test, BootstrapOptions, FitConfig, FitResult, LrTest, ResampleUnit,
};
use critgap::gapdist::{fit as fit_gaps, GapFamily};
use critgap::models::{ClassKey, ClassSets, Conditioning, ModelKind};
use critgap::waiting::{awt_report, c_awt, observed_wait, AwtRow};
use critgap::{Error, Result};

use crate::table::{num, Table};

#[derive(Debug, Parser)]
#[command(name = "critgap", version, about = "Critical-gap estimation with perceptual distortion")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CRITGAP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ClassArgs {
    /// JSON sidecar declaring subject and opposing class labels.
    #[arg(long)]
    classes: Option<PathBuf>,
}

impl ClassArgs {
    fn load(&self) -> Result<ClassSets> {
        match &self.classes {
            Some(p) => {
                let c: ClassSets = serde_json::from_str(&read_input(p)?)?;
                c.validate()?;
                Ok(c)
            }
            None => Ok(ClassSets::default()),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a gap-acceptance CSV and summarize it.
    Validate {
        data: PathBuf,
        #[command(flatten)]
        classes: ClassArgs,
    },
    /// Estimate a critical-gap model.
    Fit(FitArgs),
    /// Emulator critical gaps from a fit result.
    Emulator {
        result: PathBuf,
        /// Waiting-time grid `start:end:step`, seconds.
        #[arg(long, conflicts_with = "r_grid")]
        w_grid: Option<String>,
        /// Rejected-gap grid `start:end[:step]`.
        #[arg(long)]
        r_grid: Option<String>,
        /// Cell for the profile as `subject,opposing` (default: first cell).
        #[arg(long)]
        cell: Option<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Computed versus observed average waiting times.
    #[command(alias = "compare")]
    Awt {
        result: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        classes: ClassArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Classical estimators next to the fitted model.
    Baseline {
        data: PathBuf,
        /// Opposing flow, vehicles per second.
        #[arg(long)]
        flow: f64,
        /// Fit result to include as the proposed method.
        #[arg(long)]
        result: Option<PathBuf>,
        /// Gap law for computed waiting times.
        #[arg(long, default_value = "empirical")]
        dist: GapFamily,
        #[command(flatten)]
        classes: ClassArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Likelihood-ratio test of nested fits.
    Lrtest {
        restricted: PathBuf,
        unrestricted: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate synthetic gap-acceptance data.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    data: PathBuf,
    #[arg(long, value_parser = parse_model)]
    model: ModelKind,
    /// Gap law used for emulator critical gaps.
    #[arg(long, default_value = "empirical")]
    dist: GapFamily,
    /// Allow alpha/beta above e^2.
    #[arg(long)]
    relax_alpha: bool,
    /// Bootstrap replicates (0 to skip).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    /// Bootstrap resampling unit.
    #[arg(long, default_value = "vehicle", value_parser = parse_unit)]
    resample: ResampleUnit,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gauss-Hermite nodes.
    #[arg(long, default_value_t = 64)]
    nodes: usize,
    #[arg(long, default_value_t = 8)]
    multistart: usize,
    /// Earlier fits of nested models used as extra starts.
    #[arg(long = "start-from")]
    start_from: Vec<PathBuf>,
    #[command(flatten)]
    classes: ClassArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    ModelKind::from_code(s).map_err(|_| {
        let codes: Vec<&str> = ModelKind::ALL.iter().map(|k| k.code()).collect();
        format!("expected one of {}", codes.join(", "))
    })
}

fn parse_unit(s: &str) -> std::result::Result<ResampleUnit, String> {
    match s {
        "vehicle" => Ok(ResampleUnit::Vehicle),
        "gap" => Ok(ResampleUnit::Gap),
        _ => Err("expected vehicle or gap".into()),
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Validate { data, classes } => validate(&data, &classes),
        Command::Fit(args) => fit(&args),
        Command::Emulator {
            result,
            w_grid,
            r_grid,
            cell,
            output,
        } => emulator(&result, w_grid.as_deref(), r_grid.as_deref(), cell.as_deref(), output.as_deref()),
        Command::Awt {
            result,
            data,
            classes,
            output,
        } => awt(&result, &data, &classes, output.as_deref()),
        Command::Baseline {
            data,
            flow,
            result,
            dist,
            classes,
            output,
        } => baseline(&data, flow, result.as_deref(), dist, &classes, output.as_deref()),
        Command::Lrtest {
            restricted,
            unrestricted,
            alpha,
            output,
        } => lrtest(&restricted, &unrestricted, alpha, output.as_deref()),
        Command::Simulate {
            params,
            n,
            seed,
            output,
        } => simulate_cmd(&params, n, seed, output.as_deref()),
    }
}

/// Reads an input file, naming it in the error.
fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_data(path: &Path, classes: &ClassArgs) -> Result<Dataset> {
    read_csv(read_input(path)?.as_bytes(), classes.load()?)
}

fn read_result(path: &Path) -> Result<FitResult> {
    FitResult::from_json(&read_input(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn validate(path: &Path, classes: &ClassArgs) -> Result<()> {
    let data = read_data(path, classes)?;
    let mut t = Table::new(&["subject", "vehicles", "rejected gaps", "observations"]);
    let mut add = |label: &str, subject: Option<&str>| {
        let keep = |s: &str| subject.is_none_or(|x| x == s);
        let vehicles = data.vehicles().filter(|v| keep(&v[0].subject_class)).count();
        let obs = data.observations().iter().filter(|o| keep(&o.subject_class));
        let (n, rej) = obs.fold((0, 0), |(n, r), o| (n + 1, r + usize::from(!o.accepted)));
        t.row(vec![label.into(), vehicles.to_string(), rej.to_string(), n.to_string()]);
    };
    for s in &data.classes().subject {
        add(s, Some(s));
    }
    add("all", None);
    print!("{t}");
    println!("digest {}", data.digest());
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    let data = read_data(&args.data, &args.classes)?;
    let mut config = FitConfig::new(args.model);
    config.relax_alpha_bound = args.relax_alpha;
    config.multistart = args.multistart;
    config.nodes = args.nodes;
    config.seed = args.seed;
    config.gap_family = args.dist;
    let previous = args
        .start_from
        .iter()
        .map(|p| read_result(p))
        .collect::<Result<Vec<_>>>()?;
    let mut result = match fit_with_starts(&data, &config, &previous) {
        Ok(r) => r,
        Err(Error::Convergence { best_ll, best }) => {
            if let Some(out) = &args.output {
                write_json(out, &*best)?;
            }
            return Err(Error::Convergence { best_ll, best });
        }
        Err(e) => return Err(e),
    };
    if args.bootstrap > 0 {
        let opts = BootstrapOptions {
            replicates: args.bootstrap,
            seed: args.seed,
            unit: args.resample,
        };
        result.bootstrap = Some(bootstrap(&data, &result, &opts)?);
    }
    match &args.output {
        Some(out) => {
            write_json(out, &result)?;
            print!("{}", fit_summary(&result));
        }
        None => println!("{}", result.to_json()?),
    }
    Ok(())
}

fn fit_summary(r: &FitResult) -> String {
    let mut out = format!(
        "model {}  n_obs {}  vehicles {}  LL {:.4}  AIC {:.4}  converged {}\n\n",
        r.model, r.n_obs, r.n_vehicles, r.max_ll, r.aic, r.converged
    );
    let boot = r.bootstrap.as_ref();
    let mut t = Table::new(&["parameter", "estimate", "se", "ci_low", "ci_high"]);
    for (i, (name, value)) in r.param_names().iter().zip(r.theta()).enumerate() {
        let ci = boot.map(|b| &b.params[i]);
        t.row(vec![
            name.clone(),
            num(Some(value), 4),
            num(ci.map(|c| c.se), 4),
            num(ci.map(|c| c.ci_low), 4),
            num(ci.map(|c| c.ci_high), 4),
        ]);
    }
    out.push_str(&t.to_string());
    if !r.emulator.is_empty() {
        let mut t = Table::new(&["emulator gap", "tau_e", "se", "ci_low", "ci_high"]);
        for (i, e) in r.emulator.iter().enumerate() {
            let ci = boot.and_then(|b| b.emulator.get(i));
            t.row(vec![
                e.label(),
                num(e.tau_e, 3),
                num(ci.map(|c| c.se), 3),
                num(ci.map(|c| c.ci_low), 3),
                num(ci.map(|c| c.ci_high), 3),
            ]);
        }
        out.push('\n');
        out.push_str(&t.to_string());
    }
    let warnings = r.warnings.iter().chain(boot.into_iter().flat_map(|b| &b.warnings));
    for w in warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    for f in &r.boundary_flags {
        out.push_str(&format!("at bound: {f}\n"));
    }
    out
}

/// Parses `start:end[:step]` into an inclusive grid.
fn parse_grid(s: &str, default_step: Option<f64>) -> Result<Vec<f64>> {
    let bad = || Error::Usage(format!("grid '{s}' is not start:end[:step]"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, end, step) = match (parts.as_slice(), default_step) {
        ([a, b, c], _) => (*a, *b, *c),
        ([a, b], Some(c)) => (*a, *b, c),
        _ => return Err(bad()),
    };
    if !(step > 0.0) || !(end >= start) || !start.is_finite() || !end.is_finite() {
        return Err(Error::Usage(format!("grid '{s}' needs start <= end and a positive step")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    if n > 100_000 {
        return Err(Error::Usage(format!("grid '{s}' has more than 100000 points")));
    }
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

fn parse_cell(s: &str) -> ClassKey {
    match s.split_once(',') {
        Some((a, b)) => ClassKey::new(a.trim(), b.trim()),
        None => ClassKey::subject_only(s.trim()),
    }
}

fn emulator(
    path: &Path,
    w_grid: Option<&str>,
    r_grid: Option<&str>,
    cell: Option<&str>,
    output: Option<&Path>,
) -> Result<()> {
    let r = read_result(path)?;
    let grid: Vec<Conditioning> = match (w_grid, r_grid) {
        (Some(g), _) => parse_grid(g, None)?.into_iter().map(Conditioning::Wait).collect(),
        (_, Some(g)) => parse_grid(g, Some(1.0))?
            .into_iter()
            .map(|x| {
                if x.fract() != 0.0 || x < 0.0 {
                    Err(Error::Usage(format!("rejected-gap counts must be whole numbers, got {x}")))
                } else {
                    Ok(Conditioning::Rejected(x as u32))
                }
            })
            .collect::<Result<_>>()?,
        (None, None) => {
            let mut t = Table::new(&["emulator gap", "tau_e"]);
            for e in &r.emulator {
                t.row(vec![e.label(), num(e.tau_e, 4)]);
            }
            return emit(output, t.to_string().as_bytes());
        }
    };
    let key = match cell {
        Some(c) => parse_cell(c),
        None => r.spec.cell_keys()[0].clone(),
    };
    let profile = emulator_profile(&r.spec, &key, &r.perception, &r.gap_distribution, &grid, r.config.nodes)?;
    let mut buf = Vec::new();
    write_profile_csv(&mut buf, &profile)?;
    emit(output, &buf)
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn digest_warning(r: &FitResult, data: &Dataset) {
    if r.data_digest != data.digest() {
        eprintln!("warning: fit result was estimated on a different dataset");
    }
}

fn awt(path: &Path, data_path: &Path, classes: &ClassArgs, output: Option<&Path>) -> Result<()> {
    let r = read_result(path)?;
    let data = read_data(data_path, classes)?;
    digest_warning(&r, &data);
    let rows = awt_report(&data, &r)?;
    let mut t = Table::new(&["subject", "vehicles", "tau_e", "C-AWT", "O-AWT", "O-AWT (sum)"]);
    for row in &rows {
        t.row(vec![
            row.subject.clone().unwrap_or_else(|| "all".into()),
            row.o_awt.vehicles.to_string(),
            num(Some(row.tau_e), 2),
            num(Some(row.c_awt), 2),
            num(Some(row.o_awt.recorded), 2),
            num(Some(row.o_awt.rejected_sum), 2),
        ]);
    }
    print!("{t}");
    if let Some(out) = output {
        write_json(out, &rows)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BaselineRow {
    method: String,
    critical_gap: Option<f64>,
    c_awt: Option<f64>,
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct BaselineReport {
    flow: f64,
    o_awt: f64,
    o_awt_rejected_sum: f64,
    troutbeck: Option<TroutbeckEstimate>,
    methods: Vec<BaselineRow>,
}

fn baseline(
    path: &Path,
    flow: f64,
    result: Option<&Path>,
    dist: GapFamily,
    classes: &ClassArgs,
    output: Option<&Path>,
) -> Result<()> {
    let data = read_data(path, classes)?;
    let d = fit_gaps(&data.gap_sizes(), dist)?;
    let observed = observed_wait(&data, None)?;
    let row = |method: &str, est: Result<f64>| match est {
        Ok(t) => {
            let (c, note) = match c_awt(t, &d) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BaselineRow {
                method: method.into(),
                critical_gap: Some(t),
                c_awt: c,
                note,
            }
        }
        Err(e) => BaselineRow {
            method: method.into(),
            critical_gap: None,
            c_awt: None,
            note: Some(e.to_string()),
        },
    };
    if !(flow > 0.0) {
        return Err(Error::Usage(format!("--flow must be positive, got {flow}")));
    }
    let tb = troutbeck(&data);
    let mut methods = vec![
        row("Raff", raff(&data)),
        row("Ashworth", ashworth(&data, flow)),
        row("Troutbeck", tb.as_ref().map(|t| t.mean).map_err(clone_err)),
    ];
    if let Some(p) = result {
        let r = read_result(p)?;
        digest_warning(&r, &data);
        let overall = awt_report(&data, &r)?
            .into_iter()
            .find(|a| a.subject.is_none())
            .map(|a: AwtRow| a.tau_e)
            .ok_or_else(|| Error::Dataset("no vehicles in dataset".into()));
        methods.push(row(&format!("Proposed ({})", r.model), overall));
    }
    let mut t = Table::new(&["method", "critical gap", "C-AWT", "O-AWT"]);
    for m in &methods {
        t.row(vec![
            m.method.clone(),
            num(m.critical_gap, 2),
            num(m.c_awt, 2),
            num(Some(observed.recorded), 2),
        ]);
    }
    print!("{t}");
    if let Ok(est) = &tb {
        println!(
            "Troutbeck used {} of {} vehicles ({:.1}% excluded)",
            est.vehicles_used,
            est.vehicles_used + est.vehicles_excluded,
            100.0 * est.excluded_fraction
        );
    }
    for m in &methods {
        if let Some(n) = &m.note {
            println!("{}: {n}", m.method);
        }
    }
    if let Some(out) = output {
        let report = BaselineReport {
            flow,
            o_awt: observed.recorded,
            o_awt_rejected_sum: observed.rejected_sum,
            troutbeck: tb.ok(),
            methods,
        };
        write_json(out, &report)?;
    }
    Ok(())
}

fn clone_err(e: &Error) -> Error {
    Error::Estimator(e.to_string())
}

#[derive(Debug, Serialize)]
struct LrReport {
    restricted: ModelKind,
    unrestricted: ModelKind,
    #[serde(flatten)]
    test: LrTest,
    alpha: f64,
    reject: bool,
}

fn lrtest(restricted: &Path, unrestricted: &Path, alpha: f64, output: Option<&Path>) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Usage(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let r = read_result(restricted)?;
    let u = read_result(unrestricted)?;
    let test = lr_test(&r, &u)?;
    let reject = test.p_value < alpha;
    println!(
        "{} vs {}: LR {:.4} on {} df, p = {:.4e}; {} the restricted model at {alpha}",
        r.model,
        u.model,
        test.statistic,
        test.df,
        test.p_value,
        if reject { "reject" } else { "do not reject" }
    );
    if let Some(out) = output {
        let report = LrReport {
            restricted: r.model,
            unrestricted: u.model,
            test,
            alpha,
            reject,
        };
        write_json(out, &report)?;
    }
    Ok(())
}

fn simulate_cmd(params: &Path, n: usize, seed: u64, output: Option<&Path>) -> Result<()> {
    let p: SimulationParams = serde_json::from_str(&read_input(params)?)
        .map_err(|e| Error::Config(format!("{}: {e}", params.display())))?;
    let data = simulate(&p, n, seed)?;
    match output {
        Some(out) => data.save_csv(out),
        None => data.write_csv(io::stdout().lock()),
    }
}
