//! The `chainbinom` command line: argument parsing, dispatch and output.
//!
//! [`run`] does all the work and returns the process exit code, so the
//! binary is a thin wrapper and tests can drive the commands in-process.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use chainbinom::analysis::{bias_grid, BiasGrid};
use chainbinom::estimation::fit_sar_with;
use chainbinom::io::{coronahouse_fixture, load_csv, write_csv, DatasetFile};
use chainbinom::model::{self, HouseholdConfig};
use chainbinom::regression::{fit_glm_with_reference, LinkFunction};
use chainbinom::simulation::{coverage_experiment, simulate_study, substream, I0Rule, SimConfig, RNG_NAME};
use chainbinom::{CiMethod, Error, Horizon, HouseholdObservation};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "chainbinom", version, about = "Chain binomial household outbreak analysis")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Outbreak-size distribution for one household.
    Pmf(PmfArgs),
    /// Maximum-likelihood SAR with a confidence interval.
    Estimate(EstimateArgs),
    /// SAR regression on household covariates.
    Glm(GlmArgs),
    /// Bias of the final-size model applied to incompletely observed outbreaks.
    Bias(BiasArgs),
    /// Simulate a household study and write it as CSV.
    Simulate(SimArgs),
    /// Realised coverage of Wilks and normal intervals.
    Coverage(CoverageArgs),
}

#[derive(Debug, Args)]
struct PmfArgs {
    #[arg(long)]
    s0: u32,
    #[arg(long, default_value_t = 1)]
    i0: u32,
    #[arg(long)]
    sar: f64,
    /// Generations observed, or `final`.
    #[arg(long, default_value = "final", value_parser = parse_horizon)]
    generations: Horizon,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file, or `coronahouse` for the packaged dataset.
    #[arg(long)]
    data: String,
    /// Keep households whose covariate equals a value, as `name=value`.
    #[arg(long, value_parser = parse_pair)]
    filter: Vec<(String, String)>,
    /// Replace every household's observation horizon (a count or `final`).
    #[arg(long, value_parser = parse_horizon)]
    generations: Option<Horizon>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "wilks", value_parser = parse_ci)]
    ci: CiMethod,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Debug, Args)]
struct GlmArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated covariate names.
    #[arg(long, value_delimiter = ',')]
    predictors: Vec<String>,
    #[arg(long, default_value = "logit", value_parser = parse_link)]
    link: LinkFunction,
    /// Reference level of a categorical predictor, as `name=level`.
    #[arg(long, value_parser = parse_pair)]
    reference: Vec<(String, String)>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Debug, Args)]
struct BiasArgs {
    #[arg(long, value_delimiter = ',')]
    sars: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    s0: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    i0: Option<Vec<u32>>,
    /// Longest observation window; defaults to each household's s0.
    #[arg(long)]
    max_generations: Option<u32>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Households per study.
    #[arg(long = "n", default_value_t = 100)]
    n_households: usize,
    #[arg(long, default_value_t = 0.5)]
    sar: f64,
    #[arg(long, default_value = "final", value_parser = parse_horizon)]
    generations: Horizon,
    /// Household-size weights as `size:weight,...`.
    #[arg(long, default_value = "2:0.28,3:0.23,4:0.25,5:0.16,6:0.08", value_parser = parse_weights)]
    sizes: Weights,
    /// Index cases per household: a count, or `count:weight,...`.
    #[arg(long, default_value = "1", value_parser = parse_i0)]
    i0: I0Rule,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Write the dataset here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, default_value_t = 1000)]
    replications: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.95,0.99")]
    levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Weights(Vec<(u32, f64)>);

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    if s.eq_ignore_ascii_case("final") {
        return Ok(Horizon::Final);
    }
    match s.parse::<u32>() {
        Ok(d) if d >= 1 => Ok(Horizon::Generations(d)),
        _ => Err(format!("expected a positive generation count or `final`, got `{s}`")),
    }
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected `name=value`, got `{s}`")),
    }
}

fn parse_ci(s: &str) -> Result<CiMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_link(s: &str) -> Result<LinkFunction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    s.split(',')
        .map(|part| {
            let (k, w) = part
                .split_once(':')
                .ok_or_else(|| format!("expected `value:weight`, got `{part}`"))?;
            let k = k.trim().parse().map_err(|_| format!("bad value `{k}`"))?;
            let w = w.trim().parse().map_err(|_| format!("bad weight `{w}`"))?;
            Ok((k, w))
        })
        .collect::<Result<_, _>>()
        .map(Weights)
}

fn parse_i0(s: &str) -> Result<I0Rule, String> {
    if s.contains(':') {
        parse_weights(s).map(|w| I0Rule::Distribution(w.0))
    } else {
        s.parse().map(I0Rule::Fixed).map_err(|_| format!("bad i0 `{s}`"))
    }
}

fn weights_label(w: &[(u32, f64)]) -> String {
    w.iter().map(|(k, w)| format!("{k}:{w}")).collect::<Vec<_>>().join(",")
}

fn i0_label(rule: &I0Rule) -> String {
    match rule {
        I0Rule::Fixed(i) => i.to_string(),
        I0Rule::Distribution(d) => weights_label(d),
    }
}

/// A command failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain(_) => EXIT_USAGE,
            Error::Io(_)
            | Error::Parse { .. }
            | Error::EmptyData
            | Error::MissingCovariate { .. }
            | Error::SingularModel(_)
            | Error::DimensionMismatch { .. } => EXIT_DATA,
            Error::Overflow { .. } | Error::EnumerationCap { .. } | Error::Evaluation { .. } | Error::Unavailable(_) => {
                EXIT_NUMERIC
            }
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Tabular result plus the provenance block emitted with JSON output.
struct Report {
    meta: Map<String, Value>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

impl Report {
    fn new(method: &str, columns: Vec<&'static str>) -> Self {
        let mut meta = Map::new();
        meta.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        meta.insert("method".into(), json!(method));
        Report {
            meta,
            columns,
            rows: Vec::new(),
        }
    }

    fn meta(mut self, key: &str, value: Value) -> Self {
        self.meta.insert(key.into(), value);
        self
    }

    fn write(&self, format: Format, out: &mut dyn Write) -> Result<(), Failure> {
        match format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
                w.write_record(&self.columns).map_err(csv_failure)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(csv_cell)).map_err(csv_failure)?;
                }
                w.flush()?;
            }
            Format::Json => {
                let results: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        Value::Object(self.columns.iter().map(|c| c.to_string()).zip(row.iter().cloned()).collect())
                    })
                    .collect();
                let doc = json!({ "meta": self.meta, "results": results });
                serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| usage(e.to_string()))?;
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

fn csv_failure(e: csv::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:?}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

fn float(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn opt_float(x: Option<f64>) -> Value {
    x.map_or(Value::Null, float)
}

fn check_level(level: f64) -> Result<(), Failure> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("confidence level must lie in (0, 1), got {level}")))
    }
}

fn load_data(args: &DataArgs, err: &mut dyn Write) -> Result<(DatasetFile, Vec<HouseholdObservation>), Failure> {
    let dataset = if args.data == "coronahouse" {
        coronahouse_fixture()
    } else {
        load_csv(&args.data)?
    };
    for w in &dataset.warnings {
        writeln!(err, "warning: {w}")?;
    }
    let mut records = dataset.records.clone();
    for (name, value) in &args.filter {
        if !dataset.covariate_names.contains(name) {
            return Err(usage(format!("filter on unknown covariate `{name}`")));
        }
        records.retain(|r| r.covariates.get(name).is_some_and(|c| c.to_string() == *value));
    }
    if let Some(h) = args.generations {
        for r in &mut records {
            r.horizon = h;
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyData.into());
    }
    Ok((dataset, records))
}

fn data_meta(report: Report, args: &DataArgs, n: usize) -> Report {
    let filters: Map<String, Value> = args.filter.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    report
        .meta("data", json!(args.data))
        .meta("filter", Value::Object(filters))
        .meta("generations_override", args.generations.map_or(Value::Null, |h| json!(h.to_string())))
        .meta("n_households", json!(n))
}

fn cmd_pmf(args: &PmfArgs) -> Result<Report, Failure> {
    let config = HouseholdConfig::new(args.s0, args.i0, args.sar)?;
    let pmf = model::pmf_vector(&config, args.generations)?;
    let horizon = args.generations.to_string();
    let mut report = Report::new(
        if args.generations == Horizon::Final { "final_size_pmf" } else { "incomplete_pmf" },
        vec!["s0", "i0", "sar", "generations", "x", "probability"],
    )
    .meta("grid", json!({ "s0": args.s0, "i0": args.i0, "sar": args.sar, "generations": horizon }));
    for (x, p) in pmf.into_iter().enumerate() {
        report
            .rows
            .push(vec![json!(args.s0), json!(args.i0), float(args.sar), json!(horizon), json!(x), float(p)]);
    }
    Ok(report)
}

fn cmd_estimate(args: &EstimateArgs, err: &mut dyn Write) -> Result<Report, Failure> {
    check_level(args.level)?;
    let (_, records) = load_data(&args.data, err)?;
    let est = fit_sar_with(&records, args.ci, args.level)?;
    let mut report = data_meta(
        Report::new(&format!("maximum likelihood, {} interval", args.ci), vec![
            "n_households",
            "sar_hat",
            "std_error",
            "ci_method",
            "ci_level",
            "ci_lower",
            "ci_upper",
            "loglik",
        ]),
        &args.data,
        records.len(),
    );
    report.rows.push(vec![
        json!(records.len()),
        float(est.sar_hat),
        opt_float(est.std_error),
        json!(est.ci_method.to_string()),
        float(est.ci_level),
        float(est.ci_lower),
        float(est.ci_upper),
        float(est.loglik),
    ]);
    Ok(report)
}

fn cmd_glm(args: &GlmArgs, err: &mut dyn Write) -> Result<Report, Failure> {
    check_level(args.level)?;
    let (_, records) = load_data(&args.data, err)?;
    let reference: BTreeMap<String, String> = args.reference.iter().cloned().collect();
    let fit = fit_glm_with_reference(&records, &args.predictors, args.link, &reference)?;
    if !fit.converged {
        writeln!(err, "warning: optimiser stopped after {} iterations without converging", fit.iterations)?;
    }
    let se = fit.std_errors();
    let intervals = match fit.normal_intervals(args.level) {
        Ok(v) => Some(v),
        Err(e) => {
            writeln!(err, "warning: {e}")?;
            None
        }
    };
    let mut report = data_meta(
        Report::new(&format!("{}-link regression, normal intervals", args.link.name()), vec![
            "term", "estimate", "std_error", "ci_level", "ci_lower", "ci_upper",
        ]),
        &args.data,
        records.len(),
    )
    .meta("link", json!(args.link.name()))
    .meta("loglik", float(fit.loglik))
    .meta("converged", json!(fit.converged));
    for (k, name) in fit.predictor_names.iter().enumerate() {
        let ci = intervals.as_ref().map(|v| v[k]);
        report.rows.push(vec![
            json!(name),
            float(fit.coefficients[k]),
            opt_float(se.as_ref().map(|s| s[k])),
            float(args.level),
            opt_float(ci.map(|c| c.lower)),
            opt_float(ci.map(|c| c.upper)),
        ]);
    }
    Ok(report)
}

fn cmd_bias(args: &BiasArgs) -> Result<Report, Failure> {
    let defaults = BiasGrid::default();
    let grid = BiasGrid {
        sars: args.sars.clone().unwrap_or(defaults.sars),
        s0: args.s0.clone().unwrap_or(defaults.s0),
        i0: args.i0.clone().unwrap_or(defaults.i0),
        max_generations: args.max_generations,
    };
    let points = bias_grid(&grid)?;
    let mut report = Report::new("Kullback-Leibler closest final-size SAR", vec![
        "s0",
        "i0",
        "generations",
        "true_sar",
        "approx_sar",
        "relative_bias",
        "kl_at_min",
    ])
    .meta(
        "grid",
        json!({
            "sars": grid.sars,
            "s0": grid.s0,
            "i0": grid.i0,
            "max_generations": grid.max_generations,
        }),
    );
    for p in points {
        report.rows.push(vec![
            json!(p.s0),
            json!(p.i0),
            json!(p.generations),
            float(p.true_sar),
            float(p.approx_sar),
            float(p.relative_bias),
            float(p.kl_at_min),
        ]);
    }
    Ok(report)
}

fn sim_config(study: &StudyArgs, replications: usize) -> Result<SimConfig, Failure> {
    let sim = SimConfig {
        n_households: study.n_households,
        sar: study.sar,
        horizon: study.generations,
        household_size_dist: study.sizes.0.clone(),
        i0_rule: study.i0.clone(),
        seed: study.seed,
        replications,
    };
    sim.validate()?;
    Ok(sim)
}

fn study_meta(report: Report, sim: &SimConfig) -> Report {
    report.meta("seed", json!(sim.seed)).meta("rng", json!(RNG_NAME)).meta(
        "grid",
        json!({
            "n_households": sim.n_households,
            "sar": sim.sar,
            "generations": sim.horizon.to_string(),
            "sizes": weights_label(&sim.household_size_dist),
            "i0": i0_label(&sim.i0_rule),
            "replications": sim.replications,
        }),
    )
}

fn cmd_simulate(args: &SimArgs, format: Format, out: &mut dyn Write) -> Result<(), Failure> {
    let sim = sim_config(&args.study, 1)?;
    let records = simulate_study(&sim, &mut substream(sim.seed, 0))?;
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(&records, &[], &mut buf)?,
        Format::Json => {
            let mut report = study_meta(
                Report::new("chain binomial simulation", vec!["id", "s0", "i0", "infected", "generations"]),
                &sim,
            );
            for r in &records {
                let gens = match r.horizon {
                    Horizon::Final => Value::Null,
                    Horizon::Generations(d) => json!(d),
                };
                report
                    .rows
                    .push(vec![json!(r.id), json!(r.s0), json!(r.i0), json!(r.infected), gens]);
            }
            report.write(format, &mut buf)?;
        }
    }
    match &args.output {
        Some(path) => std::fs::write(path, buf).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

fn cmd_coverage(args: &CoverageArgs) -> Result<Report, Failure> {
    for &level in &args.levels {
        check_level(level)?;
    }
    let sim = sim_config(&args.study, args.replications)?;
    let rows = coverage_experiment(&sim, &args.levels)?;
    let sizes = weights_label(&sim.household_size_dist);
    let mut report = study_meta(
        Report::new("Wilks and normal interval coverage", vec![
            "method",
            "nominal_level",
            "realized_coverage",
            "n_estimable",
            "replications",
            "n_households",
            "sar",
            "generations",
            "sizes",
            "seed",
        ]),
        &sim,
    );
    for r in rows {
        report.rows.push(vec![
            json!(r.method.to_string()),
            float(r.nominal_level),
            opt_float(r.realized_coverage),
            json!(r.n_estimable),
            json!(r.replications),
            json!(r.n_households),
            float(r.sar),
            json!(r.horizon.to_string()),
            json!(sizes),
            json!(sim.seed),
        ]);
    }
    Ok(report)
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let report = match &cli.command {
        Command::Pmf(a) => cmd_pmf(a)?,
        Command::Estimate(a) => cmd_estimate(a, err)?,
        Command::Glm(a) => cmd_glm(a, err)?,
        Command::Bias(a) => cmd_bias(a)?,
        Command::Simulate(a) => return cmd_simulate(a, cli.format, out),
        Command::Coverage(a) => cmd_coverage(a)?,
    };
    report.write(cli.format, out)
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let informational = !e.use_stderr();
            let text = e.render().to_string();
            let _ = if informational {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return if informational { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {f}");
            f.code
        }
    }
}
