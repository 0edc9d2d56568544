//! Command-line workflows: `design`, `evaluate`, `identify` and `simulate`.
//!
//! Every command reads a single JSON [`RunConfig`]. Exit codes: 0 success,
//! 1 I/O failure, 2 configuration or input errors, 3 insufficient points or
//! infeasible joint limits, 4 unidentifiable plan.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::accuracy::{analytic_optimal_stddev, covariance, AccuracyReport};
use crate::design::{
    condition_residuals, generate_optimal_plan, optimize_plan_numeric, random_plan, score_plan,
    JointLimits, NumericOptions, PlanOptions, PlanScore, Q1Policy,
};
use crate::error::CalibError;
use crate::identification::{identify, CalibrationPlan, IdentificationResult, IdentifyOptions};
use crate::io::{self, fmt_num, Format, IoError};
use crate::kinematics::{ManipulatorModel, ParameterDeviation};
use crate::montecarlo::{
    compare_plans, sweep_points, NoiseSpec, ParameterKind, PlanComparison, TrialStatistics,
};

#[derive(Debug, Parser)]
#[command(
    name = "planar-calib",
    version,
    about = "Optimal calibration experiments for planar manipulators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an optimal calibration plan and score it.
    Design(CommandArgs),
    /// Predict identification accuracy of a plan.
    Evaluate(CommandArgs),
    /// Identify parameter deviations from measurements.
    Identify(CommandArgs),
    /// Monte Carlo comparison of empirical and analytic accuracy.
    Simulate(CommandArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommandArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Io(IoError),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Format { .. } => CliError::Input(e.to_string()),
            IoError::Io { .. } => CliError::Io(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Calib(e) => match e {
                CalibError::InsufficientPoints { .. } | CalibError::Infeasible(_) => 3,
                CalibError::RankDeficient { .. } | CalibError::SingularInformation { .. } => 4,
                CalibError::DimensionMismatch { .. }
                | CalibError::InvalidInput(_)
                | CalibError::InvalidModel(_) => 2,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorConfig {
    /// mm
    pub link_lengths: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Q1Config {
    #[default]
    Uniform,
    FixedDeg(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedPlanConfig {
    pub points: usize,
    #[serde(default)]
    pub q1_policy: Q1Config,
    #[serde(default)]
    pub phase_offsets_deg: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Generated(GeneratedPlanConfig),
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Measurement stddev, mm.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationConfig {
    /// mm
    pub dl: Vec<f64>,
    /// Per-joint angular offsets, degrees.
    pub dq_deg: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
    /// Where `simulate` writes its stddev-versus-points data.
    pub plot_path: Option<PathBuf>,
}

/// Contents of the `--config` JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manipulator: ManipulatorConfig,
    pub plan: Option<PlanSource>,
    pub noise: Option<NoiseConfig>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Per-joint `[lo, hi]` in degrees, `null` for a free joint.
    pub joint_limits_deg: Option<Vec<Option<(f64, f64)>>>,
    pub true_deviation: Option<DeviationConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Point counts for the optimal-plan sweep in `simulate`.
    #[serde(default)]
    pub sweep_points: Vec<usize>,
    /// Random plans compared against the configured plan in `simulate`.
    #[serde(default)]
    pub random_plans: usize,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_trials() -> usize {
    10_000
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), CliError> {
        let n = self.manipulator.link_lengths.len();
        ManipulatorModel::new(self.manipulator.link_lengths.clone())
            .map_err(|e| CliError::Config(format!("field manipulator.link_lengths: {e}")))?;
        if self.trials == 0 {
            return Err(CliError::Config("field trials: must be at least 1".into()));
        }
        if let Some(noise) = &self.noise {
            if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
                return Err(CliError::Config(
                    "field noise.sigma: must be non-negative".into(),
                ));
            }
        }
        if let Some(lim) = &self.joint_limits_deg {
            if lim.len() != n {
                return Err(CliError::Config(format!(
                    "field joint_limits_deg: expected {n} entries, found {}",
                    lim.len()
                )));
            }
        }
        if let Some(dev) = &self.true_deviation {
            if dev.dl.len() != n || dev.dq_deg.len() != n {
                return Err(CliError::Config(format!(
                    "field true_deviation: dl and dq_deg need {n} entries each"
                )));
            }
        }
        if let Some(PlanSource::Generated(g)) = &self.plan {
            if !g.phase_offsets_deg.is_empty() && g.phase_offsets_deg.len() + 1 != n {
                return Err(CliError::Config(format!(
                    "field plan.generated.phase_offsets_deg: expected {} entries (joints 2..n)",
                    n - 1
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ManipulatorModel, CliError> {
        ManipulatorModel::new(self.manipulator.link_lengths.clone())
            .map_err(|e| CliError::Config(e.to_string()))
    }

    fn sigma(&self) -> f64 {
        self.noise.as_ref().map_or(0.1, |n| n.sigma)
    }

    fn true_deviation(&self, links: usize) -> Result<ParameterDeviation, CliError> {
        match &self.true_deviation {
            Some(d) => {
                let dq: Vec<f64> = d.dq_deg.iter().map(|v| v.to_radians()).collect();
                Ok(ParameterDeviation::from_joint_offsets(d.dl.clone(), &dq)?)
            }
            None => Ok(ParameterDeviation::zero(links)),
        }
    }
}

impl GeneratedPlanConfig {
    fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            q1_policy: match self.q1_policy {
                Q1Config::Uniform => Q1Policy::Uniform,
                Q1Config::FixedDeg(v) => Q1Policy::Fixed(v.to_radians()),
            },
            phase_offsets: self
                .phase_offsets_deg
                .iter()
                .map(|v| v.to_radians())
                .collect(),
        }
    }
}

/// Resolved output destination for one command.
struct Output {
    path: Option<PathBuf>,
    format: Format,
}

impl Output {
    fn resolve(args: &CommandArgs, cfg: &RunConfig) -> Self {
        let path = args.out.clone().or_else(|| cfg.output.path.clone());
        let format = args
            .format
            .or(cfg.output.format)
            .or_else(|| path.as_deref().map(Format::from_path))
            .unwrap_or_default();
        Self { path, format }
    }
}

/// Text produced by a command: what goes to stdout and which files were written.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub written: Vec<PathBuf>,
}

fn resolve_plan(
    args: &CommandArgs,
    cfg: &RunConfig,
    model: &ManipulatorModel,
) -> Result<CalibrationPlan, CliError> {
    if let Some(p) = &args.plan {
        return Ok(io::read_plan(p)?);
    }
    match &cfg.plan {
        Some(PlanSource::File(p)) => Ok(io::read_plan(p)?),
        Some(PlanSource::Generated(g)) => {
            Ok(generate_optimal_plan(model, g.points, &g.plan_options())?)
        }
        None => Err(CliError::Config(
            "field plan: no plan configured and no --plan given".into(),
        )),
    }
}

fn check_plan_links(plan: &CalibrationPlan, model: &ManipulatorModel) -> Result<(), CliError> {
    if plan.links() != model.links() {
        return Err(CliError::Input(format!(
            "plan has {} joints per row but the manipulator has {} links",
            plan.links(),
            model.links()
        )));
    }
    Ok(())
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn emit(output: &Output, text: String, outcome: &mut Outcome) -> Result<(), CliError> {
    match &output.path {
        Some(p) => {
            io::write_atomic(p, text.as_bytes())?;
            outcome.written.push(p.clone());
        }
        None => outcome.stdout.push_str(&text),
    }
    Ok(())
}

fn score_report(score: &PlanScore, plan: &CalibrationPlan, method: &str, format: Format) -> String {
    let sums = condition_residuals(plan);
    match format {
        Format::Csv => {
            let mut rows = vec![
                vec!["method".into(), method.into()],
                vec!["points".into(), plan.len().to_string()],
                vec!["det_c".into(), fmt_num(score.det_c)],
                vec!["det_s".into(), fmt_num(score.det_s)],
                vec!["det_d".into(), fmt_num(score.det_d)],
                vec![
                    "condition_residual".into(),
                    fmt_num(score.condition_residual),
                ],
            ];
            for s in &sums {
                rows.push(vec![format!("c_{}", s.label()), fmt_num(s.cos_sum)]);
                rows.push(vec![format!("s_{}", s.label()), fmt_num(s.sin_sum)]);
            }
            csv_table(&["quantity", "value"], &rows)
        }
        Format::Json => {
            let conditions: Vec<_> = sums
                .iter()
                .map(|s| json!({"joints": s.label(), "cos_sum": s.cos_sum, "sin_sum": s.sin_sum}))
                .collect();
            serde_json::to_string_pretty(&json!({
                "method": method,
                "points": plan.len(),
                "det_c": score.det_c,
                "det_s": score.det_s,
                "det_d": score.det_d,
                "condition_residual": score.condition_residual,
                "conditions": conditions,
            }))
            .expect("json")
                + "\n"
        }
    }
}

pub fn cmd_design(args: &CommandArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let output = Output::resolve(args, cfg);
    let seed = args.seed.unwrap_or(cfg.seed);
    let (m, plan_opts) = match &cfg.plan {
        Some(PlanSource::Generated(g)) => (g.points, g.plan_options()),
        _ => {
            return Err(CliError::Config(
                "field plan: design needs a generated plan with a point count".into(),
            ))
        }
    };

    let limited = cfg
        .joint_limits_deg
        .as_ref()
        .is_some_and(|l| l.iter().any(Option::is_some));
    let (plan, method) = if limited {
        let limits = JointLimits::from_degrees(cfg.joint_limits_deg.as_deref().unwrap_or_default());
        let opts = NumericOptions {
            q1_policy: plan_opts.q1_policy,
            seed,
            ..NumericOptions::default()
        };
        (
            optimize_plan_numeric(&model, m, &limits, &opts)?.plan,
            "numeric",
        )
    } else {
        (generate_optimal_plan(&model, m, &plan_opts)?, "closed_form")
    };
    let plan = io::canonical_plan(&plan);
    let score = score_plan(&model, &plan)?;

    let mut outcome = Outcome::default();
    let plan_text = io::plan_to_string(&plan, output.format);
    emit(&output, plan_text, &mut outcome)?;
    outcome
        .stdout
        .push_str(&score_report(&score, &plan, method, output.format));
    Ok(outcome)
}

fn accuracy_rows(
    report: &AccuracyReport,
    bound: &AccuracyReport,
) -> Vec<(String, &'static str, f64, f64)> {
    let n = report.sigma_l.len();
    let mut rows = Vec::with_capacity(2 * n);
    for i in 0..n {
        rows.push((
            format!("sigma_dtheta_{}", i + 1),
            "deg",
            report.sigma_theta[i].to_degrees(),
            bound.sigma_theta[i].to_degrees(),
        ));
    }
    for i in 0..n {
        rows.push((
            format!("sigma_dl_{}", i + 1),
            "mm",
            report.sigma_l[i],
            bound.sigma_l[i],
        ));
    }
    rows
}

pub fn cmd_evaluate(args: &CommandArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let output = Output::resolve(args, cfg);
    let plan = resolve_plan(args, cfg, &model)?;
    check_plan_links(&plan, &model)?;
    let sigma = cfg.sigma();
    let report = covariance(&model, &plan, sigma)?;
    let bound = analytic_optimal_stddev(&model, plan.len(), sigma)?;
    let score = score_plan(&model, &plan)?;
    let rows = accuracy_rows(&report, &bound);

    let text = match output.format {
        Format::Csv => {
            let mut table: Vec<Vec<String>> = rows
                .iter()
                .map(|(q, u, v, b)| {
                    vec![
                        q.clone(),
                        u.to_string(),
                        fmt_num(*v),
                        fmt_num(*b),
                        fmt_num(v / b - 1.0),
                    ]
                })
                .collect();
            for (name, v) in [
                ("det_c", score.det_c),
                ("det_s", score.det_s),
                ("det_d", score.det_d),
                ("condition_residual", score.condition_residual),
            ] {
                table.push(vec![
                    name.into(),
                    String::new(),
                    fmt_num(v),
                    String::new(),
                    String::new(),
                ]);
            }
            csv_table(
                &["quantity", "unit", "value", "optimal_bound", "relative_gap"],
                &table,
            )
        }
        Format::Json => {
            let stddevs: Vec<_> = rows
                .iter()
                .map(|(q, u, v, b)| json!({"quantity": q, "unit": u, "value": v, "optimal_bound": b, "relative_gap": v / b - 1.0}))
                .collect();
            serde_json::to_string_pretty(&json!({
                "points": plan.len(),
                "sigma_mm": sigma,
                "stddevs": stddevs,
                "score": score,
            }))
            .expect("json")
                + "\n"
        }
    };
    let mut outcome = Outcome::default();
    emit(&output, text, &mut outcome)?;
    Ok(outcome)
}

fn identification_report(res: &IdentificationResult, format: Format) -> String {
    let dev = &res.deviation;
    let dq = dev.joint_offsets();
    let warning = (!res.converged).then(|| {
        format!(
            "identification stopped after {} iterations without reaching the step tolerance",
            res.iterations
        )
    });
    match format {
        Format::Csv => {
            let mut rows = Vec::new();
            for (i, v) in dev.dl.iter().enumerate() {
                rows.push(vec![format!("dl_{}", i + 1), "mm".into(), fmt_num(*v)]);
            }
            for (i, v) in dev.dtheta.iter().enumerate() {
                rows.push(vec![
                    format!("dtheta_{}", i + 1),
                    "deg".into(),
                    fmt_num(v.to_degrees()),
                ]);
            }
            for (i, v) in dq.iter().enumerate() {
                rows.push(vec![
                    format!("dq_{}", i + 1),
                    "deg".into(),
                    fmt_num(v.to_degrees()),
                ]);
            }
            rows.push(vec![
                "iterations".into(),
                String::new(),
                res.iterations.to_string(),
            ]);
            rows.push(vec![
                "final_residual_norm".into(),
                "mm".into(),
                fmt_num(res.final_residual_norm),
            ]);
            rows.push(vec![
                "converged".into(),
                String::new(),
                res.converged.to_string(),
            ]);
            rows.push(vec![
                "warning".into(),
                String::new(),
                warning.unwrap_or_default(),
            ]);
            csv_table(&["quantity", "unit", "value"], &rows)
        }
        Format::Json => {
            serde_json::to_string_pretty(&json!({
                "dl_mm": dev.dl,
                "dtheta_deg": dev.dtheta.iter().map(|v| v.to_degrees()).collect::<Vec<_>>(),
                "dq_deg": dq.iter().map(|v| v.to_degrees()).collect::<Vec<_>>(),
                "iterations": res.iterations,
                "final_residual_norm_mm": res.final_residual_norm,
                "converged": res.converged,
                "warning": warning,
            }))
            .expect("json")
                + "\n"
        }
    }
}

pub fn cmd_identify(args: &CommandArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let output = Output::resolve(args, cfg);
    let meas_path = args
        .measurements
        .as_ref()
        .ok_or_else(|| CliError::Input("identify needs --measurements <path>".into()))?;
    let file = io::read_measurements(meas_path)?;
    check_plan_links(&file.plan, &model)?;

    if let Some(plan_path) = &args.plan {
        let plan = io::read_plan(plan_path)?;
        if plan.len() != file.plan.len() {
            return Err(CliError::Input(format!(
                "row count mismatch: plan {} has {} rows, measurements {} has {}",
                plan_path.display(),
                plan.len(),
                meas_path.display(),
                file.plan.len()
            )));
        }
        for (i, (a, b)) in plan.configs().iter().zip(file.plan.configs()).enumerate() {
            if a.q.iter().zip(&b.q).any(|(x, y)| (x - y).abs() > 1e-9) {
                return Err(CliError::Input(format!(
                    "row {}: joint angles in measurements differ from the plan",
                    i + 1
                )));
            }
        }
    }

    let res = identify(
        &model,
        &file.plan,
        &file.measurements,
        &IdentifyOptions::default(),
    )?;
    if !res.converged {
        log::warn!(
            "identification did not converge in {} iterations",
            res.iterations
        );
    }
    let mut outcome = Outcome::default();
    emit(
        &output,
        identification_report(&res, output.format),
        &mut outcome,
    )?;
    Ok(outcome)
}

fn display_scale(kind: ParameterKind) -> (&'static str, f64) {
    match kind {
        ParameterKind::Angle => ("deg", 180.0 / std::f64::consts::PI),
        ParameterKind::Length => ("mm", 1.0),
    }
}

fn stats_rows(
    plan_idx: usize,
    rank: usize,
    det_d: f64,
    inefficiency: f64,
    s: &TrialStatistics,
) -> Vec<Vec<String>> {
    s.parameters
        .iter()
        .map(|p| {
            let (unit, k) = display_scale(p.kind);
            vec![
                plan_idx.to_string(),
                rank.to_string(),
                s.points.to_string(),
                s.trials.to_string(),
                s.excluded.to_string(),
                fmt_num(det_d),
                fmt_num(inefficiency),
                p.name.clone(),
                unit.into(),
                fmt_num(p.truth * k),
                fmt_num(p.mean_error * k),
                fmt_num(p.empirical_std * k),
                fmt_num(p.analytic_std * k),
                fmt_num(p.relative_gap()),
            ]
        })
        .collect()
}

fn stats_json(s: &TrialStatistics) -> serde_json::Value {
    let params: Vec<_> = s
        .parameters
        .iter()
        .map(|p| {
            let (unit, k) = display_scale(p.kind);
            json!({
                "parameter": p.name,
                "unit": unit,
                "truth": p.truth * k,
                "mean_error": p.mean_error * k,
                "empirical_std": p.empirical_std * k,
                "analytic_std": p.analytic_std * k,
                "relative_gap": p.relative_gap(),
            })
        })
        .collect();
    json!({
        "points": s.points,
        "trials": s.trials,
        "excluded": s.excluded,
        "exclusion_alarm": s.exclusion_alarm,
        "parameters": params,
    })
}

const STATS_HEADER: [&str; 14] = [
    "plan",
    "rank",
    "points",
    "trials",
    "excluded",
    "det_d",
    "inefficiency",
    "parameter",
    "unit",
    "truth",
    "mean_error",
    "empirical_std",
    "analytic_std",
    "relative_gap",
];

fn comparison_report(cmp: &PlanComparison, format: Format) -> String {
    match format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = cmp
                .entries
                .iter()
                .enumerate()
                .flat_map(|(rank, e)| {
                    stats_rows(e.index, rank + 1, e.score.det_d, e.inefficiency, &e.stats)
                })
                .collect();
            csv_table(&STATS_HEADER, &rows)
        }
        Format::Json => {
            let plans: Vec<_> = cmp
                .entries
                .iter()
                .enumerate()
                .map(|(rank, e)| {
                    json!({
                        "plan": e.index,
                        "rank": rank + 1,
                        "score": e.score,
                        "inefficiency": e.inefficiency,
                        "statistics": stats_json(&e.stats),
                    })
                })
                .collect();
            serde_json::to_string_pretty(&json!({ "plans": plans })).expect("json") + "\n"
        }
    }
}

fn plot_data(series: &[TrialStatistics]) -> String {
    let rows: Vec<Vec<String>> = series
        .iter()
        .flat_map(|s| {
            s.parameters.iter().map(move |p| {
                let (unit, k) = display_scale(p.kind);
                vec![
                    s.points.to_string(),
                    p.name.clone(),
                    unit.into(),
                    fmt_num(p.empirical_std * k),
                    fmt_num(p.analytic_std * k),
                ]
            })
        })
        .collect();
    csv_table(
        &[
            "points",
            "parameter",
            "unit",
            "empirical_std",
            "analytic_std",
        ],
        &rows,
    )
}

fn plot_path(cfg: &RunConfig, output: &Output) -> Option<PathBuf> {
    cfg.output.plot_path.clone().or_else(|| {
        output.path.as_ref().map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("simulate");
            p.with_file_name(format!("{stem}_plot.csv"))
        })
    })
}

pub fn cmd_simulate(args: &CommandArgs, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let output = Output::resolve(args, cfg);
    let plan = resolve_plan(args, cfg, &model)?;
    check_plan_links(&plan, &model)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let noise = NoiseSpec::new(cfg.sigma(), seed)?;
    let truth = cfg.true_deviation(model.links())?;

    let mut plans = vec![plan];
    if cfg.random_plans > 0 {
        // plan generation stream is independent of the noise streams
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_91a7);
        for _ in 0..cfg.random_plans {
            plans.push(random_plan(model.links(), plans[0].len(), &mut rng)?);
        }
    }
    let cmp = compare_plans(&model, &truth, &plans, &noise, cfg.trials)?;

    let plan_opts = match &cfg.plan {
        Some(PlanSource::Generated(g)) => g.plan_options(),
        _ => PlanOptions::default(),
    };
    let mut series = vec![cmp.by_input_order()[0].stats.clone()];
    series.extend(sweep_points(
        &model,
        &truth,
        &cfg.sweep_points,
        &plan_opts,
        &noise,
        cfg.trials,
    )?);

    let mut outcome = Outcome::default();
    emit(
        &output,
        comparison_report(&cmp, output.format),
        &mut outcome,
    )?;
    match plot_path(cfg, &output) {
        Some(p) => {
            io::write_atomic(&p, plot_data(&series).as_bytes())?;
            outcome.written.push(p);
        }
        None if !cfg.sweep_points.is_empty() => {
            outcome.stdout.push('\n');
            outcome.stdout.push_str(&plot_data(&series));
        }
        None => {}
    }
    for e in &cmp.entries {
        if e.stats.exclusion_alarm {
            let _ = writeln!(
                outcome.stdout,
                "warning: plan {} excluded {} of {} trials",
                e.index, e.stats.excluded, e.stats.trials
            );
        }
    }
    Ok(outcome)
}

type Handler = fn(&CommandArgs, &RunConfig) -> Result<Outcome, CliError>;

/// Runs one parsed command, honoring `--workers`.
pub fn execute(command: &Command) -> Result<Outcome, CliError> {
    let (args, run): (&CommandArgs, Handler) = match command {
        Command::Design(a) => (a, cmd_design),
        Command::Evaluate(a) => (a, cmd_evaluate),
        Command::Identify(a) => (a, cmd_identify),
        Command::Simulate(a) => (a, cmd_simulate),
    };
    let cfg = RunConfig::load(&args.config)?;
    match args.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| CliError::Config(format!("--workers: {e}")))?;
            pool.install(|| run(args, &cfg))
        }
        None => run(args, &cfg),
    }
}

/// Entry point shared by the binary: prints results and returns the exit code.
pub fn run_from_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            for p in &outcome.written {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
