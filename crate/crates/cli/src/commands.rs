//! Subcommands of the `streamopt` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use streamopt::calibrate::{calibrate, t_real, MeasurementRecord, DEFAULT_T_INITIAL};
use streamopt::cost::{cost_s, cost_t, extreme_schemes, CostBreakdown, StorageBreakdown, StorageConfig};
use streamopt::optimize::{optimize, sweep_streams, OptimizationResult, OptimizerConfig};
use streamopt::oracle::{enumerate_optimal, Objective, OracleLimits};
use streamopt::{Dataset, Scheme};

use crate::error::{CliError, Result};
use crate::format::{self, Instance, InstanceError};
use crate::synth::{self, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "streamopt", version, about = "Group selection lines into output streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize the stream assignment of an instance.
    Optimize(OptimizeArgs),
    /// Report read cost and storage of a scheme.
    Evaluate(EvaluateArgs),
    /// Compare a candidate scheme against a baseline.
    Compare(CompareArgs),
    /// Optimize over a list of stream counts.
    Sweep(SweepArgs),
    /// Find the optimum by exhaustive enumeration (small instances only).
    Exact(ExactArgs),
    /// Fit model terms against measured times and sizes.
    Calibrate(CalibrateArgs),
    /// Write a synthetic instance with planted clusters.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StorageArgs {
    /// Size per passing Turbo line, in kB.
    #[arg(long, default_value_t = 10.0)]
    pub base_kb: f64,
    /// Size per event and stream with persisted reconstruction, in kB.
    #[arg(long, default_value_t = 50.0)]
    pub shared_kb: f64,
}

impl StorageArgs {
    fn config(&self) -> Result<StorageConfig> {
        for (name, v) in [("--base-kb", self.base_kb), ("--shared-kb", self.shared_kb)] {
            if !v.is_finite() || v < 0.0 {
                return Err(CliError::Usage(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(StorageConfig {
            base_kb: self.base_kb,
            shared_kb: self.shared_kb,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    /// Number of random restarts.
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration cap per restart.
    #[arg(long)]
    pub max_iters: Option<usize>,
}

impl SearchArgs {
    fn config(&self, n_streams: usize) -> OptimizerConfig {
        let mut config = OptimizerConfig::default()
            .with_streams(n_streams)
            .with_restarts(self.restarts)
            .with_seed(self.seed);
        if let Some(n) = self.max_iters {
            config.max_iters = n;
        }
        config
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub streams: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub storage: StorageArgs,
    /// Scheme file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Diagnostics file; defaults to the scheme path with `.json` appended.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Extreme {
    Single,
    PerUnit,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, conflicts_with = "extreme", required_unless_present = "extreme")]
    pub scheme: Option<PathBuf>,
    /// Evaluate one of the extreme schemes instead of a file.
    #[arg(long, value_enum)]
    pub extreme: Option<Extreme>,
    #[command(flatten)]
    pub storage: StorageArgs,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub baseline: PathBuf,
    /// Candidate scheme; optimized at the baseline's stream count if absent.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub storage: StorageArgs,
    /// Write the optimized candidate here.
    #[arg(long)]
    pub scheme_out: Option<PathBuf>,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Comma-separated stream counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub streams: Vec<usize>,
    /// Normalize to this scheme instead of the first sweep point.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub storage: StorageArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub streams: usize,
    /// `T`, `S` or `weighted:<w>` for `T + w·S`.
    #[arg(long, default_value = "T")]
    pub objective: ObjectiveArg,
    /// Also list the best `k` schemes.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[command(flatten)]
    pub storage: StorageArgs,
    /// Write the optimal scheme here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveArg(pub Objective);

impl FromStr for ObjectiveArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "T" | "t" => Ok(ObjectiveArg(Objective::T)),
            "S" | "s" => Ok(ObjectiveArg(Objective::S)),
            _ => {
                let w = s
                    .strip_prefix("weighted:")
                    .ok_or_else(|| format!("unknown objective `{s}`; expected T, S or weighted:<w>"))?;
                match w.parse::<f64>() {
                    Ok(w) if w.is_finite() && w >= 0.0 => Ok(ObjectiveArg(Objective::Weighted(w))),
                    _ => Err(format!("invalid weight `{w}`")),
                }
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub measurements: PathBuf,
    /// Instance the measured schemes were built from; needed for the fits.
    #[arg(long, requires = "scheme")]
    pub instance: Option<PathBuf>,
    /// Scheme file of a measured scheme, as `SCHEME_ID=PATH`.
    #[arg(long = "scheme", value_parser = parse_scheme_binding)]
    pub scheme: Vec<(String, PathBuf)>,
    /// One regression over all schemes (`true`) or one per scheme (`false`).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub pool_schemes: bool,
    /// Job initialization time subtracted from every stream, in seconds.
    #[arg(long, default_value_t = DEFAULT_T_INITIAL)]
    pub t_initial: f64,
    #[command(flatten)]
    pub storage: StorageArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_scheme_binding(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((id, path)) if !id.is_empty() && !path.is_empty() => Ok((id.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected SCHEME_ID=PATH, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    pub events: usize,
    #[arg(long, default_value_t = 20)]
    pub modules: usize,
    #[arg(long, default_value_t = 1)]
    pub min_lines: usize,
    #[arg(long, default_value_t = 4)]
    pub max_lines: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.3)]
    pub intra_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    pub cross_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    pub prescaled_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub min_prescale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_prescale: f64,
    #[arg(long, default_value_t = 0.2)]
    pub persistreco_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instance file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the planted cluster grouping as a scheme file.
    #[arg(long)]
    pub baseline_out: Option<PathBuf>,
}

impl GenerateArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_events: self.events,
            n_modules: self.modules,
            lines_per_module: (self.min_lines, self.max_lines),
            n_clusters: self.clusters,
            intra_rate: self.intra_rate,
            cross_rate: self.cross_rate,
            prescaled_fraction: self.prescaled_fraction,
            prescale_range: (self.min_prescale, self.max_prescale),
            persist_reco_fraction: self.persistreco_fraction,
            seed: self.seed,
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Optimize(a) => cmd_optimize(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Exact(a) => cmd_exact(&a, out),
        Command::Calibrate(a) => cmd_calibrate(&a, out),
        Command::Generate(a) => cmd_generate(&a, out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes through a temporary file in the target directory, so a failed run
/// never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = read_text(path)?;
    let instance = format::parse_instance(&text).map_err(|e| match e {
        InstanceError::Parse(source) => CliError::Parse {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    log::info!(
        "{}: {} events ({} dropped), {} lines, {} modules",
        path.display(),
        instance.dataset.incidence().n_events(),
        instance.dropped_events,
        instance.dataset.catalog().n_lines(),
        instance.dataset.catalog().n_modules()
    );
    Ok(instance)
}

pub fn load_scheme(path: &Path, dataset: &Dataset) -> Result<Scheme> {
    let text = read_text(path)?;
    format::parse_scheme(&text, dataset.catalog()).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Read cost and storage of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub cost_t: CostBreakdown,
    pub cost_s: StorageBreakdown,
}

pub fn evaluate(dataset: &Dataset, scheme: &Scheme, storage: &StorageConfig) -> Result<Evaluation> {
    Ok(Evaluation {
        cost_t: cost_t(dataset.incidence(), dataset.catalog(), scheme)?,
        cost_s: cost_s(dataset.incidence(), dataset.catalog(), scheme, storage)?,
    })
}

fn check_streams(n_streams: usize, dataset: &Dataset) -> Result<()> {
    if n_streams == 0 {
        return Err(CliError::Usage("--streams must be at least 1".into()));
    }
    let n_modules = dataset.catalog().n_modules();
    if n_streams > n_modules {
        return Err(streamopt::Error::Infeasible(format!(
            "{n_streams} streams requested for {n_modules} modules"
        ))
        .into());
    }
    Ok(())
}

fn cmd_optimize(a: &OptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let storage = a.storage.config()?;
    let instance = load_instance(&a.instance)?;
    let ds = &instance.dataset;
    check_streams(a.streams, ds)?;
    let result = optimize(ds.module_incidence(), ds.catalog(), &a.search.config(a.streams))?;
    let eval = evaluate(ds, &result.best_scheme, &storage)?;

    let diagnostics_path = a.diagnostics.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".json");
        PathBuf::from(p)
    });
    let diagnostics = json!({
        "instance": a.instance,
        "n_streams": a.streams,
        "restarts": a.search.restarts,
        "seed": result.seed,
        "best_restart": result.best_restart,
        "best_loss_relaxed": result.best_loss_relaxed,
        "cost_t": eval.cost_t,
        "cost_s": eval.cost_s,
        "empty_streams": result.best_scheme.empty_streams(),
        "per_restart": result.per_restart,
    });
    let scheme_text = format::write_scheme(ds.catalog(), &result.best_scheme);
    let diagnostics_text = serde_json::to_string_pretty(&diagnostics).expect("serializable") + "\n";
    write_atomic(&a.out, scheme_text.as_bytes())?;
    write_atomic(&diagnostics_path, diagnostics_text.as_bytes())?;

    write_summary(out, &result, &eval).map_err(stdout_err)
}

fn write_summary(out: &mut dyn Write, result: &OptimizationResult, eval: &Evaluation) -> std::io::Result<()> {
    writeln!(
        out,
        "streams={} nonempty={} T={} S={} best_restart={}",
        result.best_scheme.n_streams(),
        result.best_scheme.n_nonempty_streams(),
        eval.cost_t.total,
        eval.cost_s.total,
        result.best_restart
    )
}

fn evaluation_table(eval: &Evaluation) -> String {
    let mut s = String::from("stream,units,lines,expected_events,T,S\n");
    for (i, (t, size)) in eval.cost_t.per_stream.iter().zip(&eval.cost_s.per_stream).enumerate() {
        s += &format!(
            "{i},{},{},{},{},{}\n",
            t.n_units, t.n_lines, t.expected_events, t.contribution, size
        );
    }
    let units: usize = eval.cost_t.per_stream.iter().map(|t| t.n_units).sum();
    let lines: usize = eval.cost_t.per_stream.iter().map(|t| t.n_lines).sum();
    s += &format!("total,{units},{lines},,{},{}\n", eval.cost_t.total, eval.cost_s.total);
    s
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let storage = a.storage.config()?;
    let instance = load_instance(&a.instance)?;
    let ds = &instance.dataset;
    let scheme = match (&a.scheme, a.extreme) {
        (Some(path), _) => load_scheme(path, ds)?,
        (None, Some(extreme)) => {
            let (single, per_unit) = extreme_schemes(ds.catalog());
            match extreme {
                Extreme::Single => single,
                Extreme::PerUnit => per_unit,
            }
        }
        (None, None) => return Err(CliError::Usage("--scheme or --extreme is required".into())),
    };
    let eval = evaluate(ds, &scheme, &storage)?;
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&eval).expect("serializable") + "\n";
        write_atomic(path, text.as_bytes())?;
    }
    out.write_all(evaluation_table(&eval).as_bytes()).map_err(stdout_err)
}

/// `value / reference`, with `0 / 0 = 1`.
pub fn normalized(value: f64, reference: f64) -> f64 {
    if reference == 0.0 && value == 0.0 {
        1.0
    } else {
        value / reference
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: String,
    pub n_streams: usize,
    pub nonempty_streams: usize,
    pub t: f64,
    pub s: f64,
    pub t_norm: f64,
    pub s_norm: f64,
}

impl TableRow {
    fn new(label: String, scheme: &Scheme, eval: &Evaluation, reference: (f64, f64)) -> Self {
        Self {
            label,
            n_streams: scheme.n_streams(),
            nonempty_streams: scheme.n_nonempty_streams(),
            t: eval.cost_t.total,
            s: eval.cost_s.total,
            t_norm: normalized(eval.cost_t.total, reference.0),
            s_norm: normalized(eval.cost_s.total, reference.1),
        }
    }
}

pub fn render_table(rows: &[TableRow]) -> String {
    let mut s = String::from("scheme,n_streams,nonempty_streams,T,S,T_norm,S_norm\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            r.label, r.n_streams, r.nonempty_streams, r.t, r.s, r.t_norm, r.s_norm
        );
    }
    s
}

fn emit_table(rows: &[TableRow], path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let text = render_table(rows);
    if let Some(path) = path {
        write_atomic(path, text.as_bytes())?;
    }
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let storage = a.storage.config()?;
    let instance = load_instance(&a.instance)?;
    let ds = &instance.dataset;
    let baseline = load_scheme(&a.baseline, ds)?;
    let base_eval = evaluate(ds, &baseline, &storage)?;
    let reference = (base_eval.cost_t.total, base_eval.cost_s.total);

    let candidate = match &a.scheme {
        Some(path) => load_scheme(path, ds)?,
        None => {
            check_streams(baseline.n_streams(), ds)?;
            let config = a.search.config(baseline.n_streams());
            let result = optimize(ds.module_incidence(), ds.catalog(), &config)?;
            if let Some(path) = &a.scheme_out {
                write_atomic(path, format::write_scheme(ds.catalog(), &result.best_scheme).as_bytes())?;
            }
            result.best_scheme
        }
    };
    let cand_eval = evaluate(ds, &candidate, &storage)?;
    let rows = [
        TableRow::new("baseline".into(), &baseline, &base_eval, reference),
        TableRow::new("candidate".into(), &candidate, &cand_eval, reference),
    ];
    emit_table(&rows, a.out.as_deref(), out)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let storage = a.storage.config()?;
    let instance = load_instance(&a.instance)?;
    let ds = &instance.dataset;
    for &k in &a.streams {
        check_streams(k, ds)?;
    }
    let baseline = match &a.baseline {
        Some(path) => {
            let scheme = load_scheme(path, ds)?;
            let eval = evaluate(ds, &scheme, &storage)?;
            Some((scheme, eval))
        }
        None => None,
    };
    let points = sweep_streams(ds, &a.streams, &a.search.config(1), &storage)?;
    let evals: Vec<Evaluation> = points
        .iter()
        .map(|p| Evaluation {
            cost_t: p.result.best_cost_discrete.clone(),
            cost_s: p.storage.clone(),
        })
        .collect();
    let reference = match &baseline {
        Some((_, e)) => (e.cost_t.total, e.cost_s.total),
        None => (evals[0].cost_t.total, evals[0].cost_s.total),
    };
    let mut rows = Vec::new();
    if let Some((scheme, eval)) = &baseline {
        rows.push(TableRow::new("baseline".into(), scheme, eval, reference));
    }
    for (p, eval) in points.iter().zip(&evals) {
        rows.push(TableRow::new(format!("optimized_{}", p.n_streams), &p.result.best_scheme, eval, reference));
    }
    emit_table(&rows, a.out.as_deref(), out)
}

fn cmd_exact(a: &ExactArgs, out: &mut dyn Write) -> Result<()> {
    let storage = a.storage.config()?;
    let instance = load_instance(&a.instance)?;
    let ds = &instance.dataset;
    check_streams(a.streams, ds)?;
    let result = enumerate_optimal(ds, a.streams, a.objective.0, &storage, &OracleLimits::default(), a.top_k)?;
    if let Some(path) = &a.out {
        write_atomic(path, format::write_scheme(ds.catalog(), &result.best_scheme).as_bytes())?;
    }
    let mut text = format!("evaluated={} best={}\n", result.n_evaluated, result.best_cost);
    if let Some(tail) = &result.ranked_tail {
        text += "rank,cost,assignment\n";
        for (i, (scheme, cost)) in tail.iter().enumerate() {
            let labels: Vec<String> = scheme.assignment().iter().map(usize::to_string).collect();
            text += &format!("{},{cost},{}\n", i + 1, labels.join(" "));
        }
    }
    text += &format::write_scheme(ds.catalog(), &result.best_scheme);
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    if !a.t_initial.is_finite() || a.t_initial < 0.0 {
        return Err(CliError::Usage("--t-initial must be finite and non-negative".into()));
    }
    let storage = a.storage.config()?;
    let text = read_text(&a.measurements)?;
    let measurements = format::parse_measurements(&text).map_err(|source| CliError::Parse {
        path: a.measurements.clone(),
        source,
    })?;

    let records: Vec<MeasurementRecord> = match &a.instance {
        Some(path) => model_records(path, &a.scheme, measurements, &storage)?,
        None => measurements.into_iter().map(|m| m.into_record(0.0, 0.0)).collect(),
    };

    let mut by_scheme: BTreeMap<&str, Vec<MeasurementRecord>> = BTreeMap::new();
    for r in &records {
        by_scheme.entry(r.scheme_id.as_str()).or_default().push(r.clone());
    }
    let mut t_real_by_scheme = BTreeMap::new();
    for (id, group) in &by_scheme {
        t_real_by_scheme.insert(*id, t_real(group, a.t_initial)?);
    }
    let fits = if a.instance.is_some() {
        Some(calibrate(&records, a.pool_schemes)?)
    } else {
        None
    };
    let report = json!({
        "t_initial": a.t_initial,
        "t_real": t_real_by_scheme,
        "pooled": a.pool_schemes,
        "calibration": fits,
    });
    let text = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    if let Some(path) = &a.out {
        write_atomic(path, text.as_bytes())?;
    }
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

/// Attaches per-stream model terms; stream ids are stream indices of the
/// scheme bound to the record's scheme id.
fn model_records(
    instance: &Path,
    bindings: &[(String, PathBuf)],
    measurements: Vec<format::Measurement>,
    storage: &StorageConfig,
) -> Result<Vec<MeasurementRecord>> {
    let instance = load_instance(instance)?;
    let ds = &instance.dataset;
    let mut evals = BTreeMap::new();
    for (id, path) in bindings {
        let scheme = load_scheme(path, ds)?;
        if evals.insert(id.clone(), evaluate(ds, &scheme, storage)?).is_some() {
            return Err(CliError::Usage(format!("scheme `{id}` bound twice")));
        }
    }
    measurements
        .into_iter()
        .map(|m| {
            let eval = evals
                .get(&m.scheme_id)
                .ok_or_else(|| CliError::Data(format!("no --scheme given for scheme `{}`", m.scheme_id)))?;
            let n_streams = eval.cost_t.per_stream.len();
            let stream = m
                .stream_id
                .parse::<usize>()
                .ok()
                .filter(|&s| s < n_streams)
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "stream `{}` of scheme `{}` is not a stream index below {n_streams}",
                        m.stream_id, m.scheme_id
                    ))
                })?;
            let modelled = &eval.cost_t.per_stream[stream];
            if modelled.n_lines != m.n_lines {
                log::warn!(
                    "scheme `{}` stream {stream}: measurement lists {} lines, scheme has {}",
                    m.scheme_id,
                    m.n_lines,
                    modelled.n_lines
                );
            }
            let (t_term, s_term) = (modelled.expected_events, eval.cost_s.per_stream[stream]);
            Ok(m.into_record(t_term, s_term))
        })
        .collect()
}

fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let generated = synth::generate(&a.spec())?;
    write_atomic(&a.out, generated.to_instance_text().as_bytes())?;
    if let Some(path) = &a.baseline_out {
        let text = format::write_scheme(&generated.catalog(), &generated.planted);
        write_atomic(path, text.as_bytes())?;
    }
    let kept = generated.rows.iter().filter(|r| !r.is_empty()).count();
    writeln!(
        out,
        "events={} kept={kept} lines={} modules={}",
        generated.rows.len(),
        generated.lines.len(),
        a.modules
    )
    .map_err(stdout_err)
}
