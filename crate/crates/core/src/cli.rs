//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::assessor::{
    buckets_from_edges, evaluate, fixed_operating_point, train_assessor, AssessError, Assessor,
    AssessorConfig, EvalConfig,
};
use crate::exec::Execution;
use crate::lasso::MsaConfig;
use crate::netmodel::{cases, parse_case, NetError, Network};
use crate::powerflow::{solve_nr, FlowError, SolverOptions};
use crate::scenario::{
    generate_dataset, prepare_point, ControlRanges, ControlVector, DatasetConfig, ScenarioError,
    TrainingSet,
};
use crate::security::LimitConfig;

const DATASET_CSV: &str = "dataset.csv";
const DATASET_JSON: &str = "dataset.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Assess(#[from] AssessError),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Net(_) => "network",
            CliError::Flow(_) => "powerflow",
            CliError::Scenario(ScenarioError::FingerprintMismatch { .. }) => "fingerprint",
            CliError::Scenario(_) => "scenario",
            CliError::Assess(AssessError::NetworkMismatch { .. } | AssessError::LayoutMismatch { .. }) => {
                "fingerprint"
            }
            CliError::Assess(AssessError::SchemaVersion { .. }) => "schema",
            CliError::Assess(AssessError::Lasso(crate::lasso::LassoError::SchemaVersion { .. })) => "schema",
            CliError::Assess(_) => "assessor",
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Every tunable of a run. Loaded from `--config` (JSON) and overridden by
/// flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: Option<String>,
    pub seed: u64,
    pub samples_per_contingency: usize,
    pub load_min: f64,
    pub load_max: f64,
    pub retry_budget: usize,
    pub test_fraction: f64,
    pub ranges: ControlRanges,
    pub limits: LimitConfig,
    pub solver: SolverOptions,
    pub lasso: MsaConfig,
    /// Load-factor bucket edges.
    pub buckets: Vec<f64>,
    pub eval: EvalConfig,
    /// 0 uses every core.
    pub jobs: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        RunConfig {
            case: None,
            seed: 42,
            samples_per_contingency: d.samples_per_contingency,
            load_min: d.load_min,
            load_max: d.load_max,
            retry_budget: d.retry_budget,
            test_fraction: d.test_fraction,
            ranges: d.ranges,
            limits: d.limits,
            solver: d.solver,
            lasso: MsaConfig::default(),
            buckets: vec![0.5, 0.9, 1.1, 1.5],
            eval: EvalConfig::default(),
            jobs: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            samples_per_contingency: self.samples_per_contingency,
            load_min: self.load_min,
            load_max: self.load_max,
            ranges: self.ranges,
            retry_budget: self.retry_budget,
            test_fraction: self.test_fraction,
            limits: self.limits,
            solver: self.solver,
        }
    }

    pub fn execution(&self) -> Execution {
        if self.jobs == 0 {
            Execution::default()
        } else {
            Execution::from_jobs(self.jobs)
        }
    }
}

const CONFIG_HELP: &str = "\
CONFIG FILE (--config, JSON; unknown keys are rejected; flags win):
  case                          case file path or ieee14 | ieee118 | ieee300
  seed                          master seed (default 42)
  samples_per_contingency       samples drawn per contingency (default 50)
  load_min, load_max            load-factor range (default 0.5, 1.5)
  retry_budget                  extra draws per sample slot after a failed solve (default 10)
  test_fraction                 held-out share of converged samples (default 0.2)
  ranges.u_min, ranges.u_max    generator voltage setpoints, p.u. (0.95, 1.05)
  ranges.tap_min, ranges.tap_max, ranges.tap_step
                                transformer tap grid, p.u. (0.9, 1.1, 0.0125)
  ranges.qc_min, ranges.qc_max, ranges.qc_step
                                capacitor output grid, p.u. (0, 0.5, 0.01)
  limits.nominal                nominal voltage, p.u. (1.0)
  limits.voltage_alarm          alarm band half-width (0.05)
  limits.voltage_security       security band half-width (0.07)
  limits.flow_alarm_fraction    alarm flow as a share of the rating (0.8)
  limits.exponent_n             index exponent n, norm order 2n (2)
  solver.tolerance              mismatch tolerance, p.u. (1e-8)
  solver.max_iterations         Newton iterations (20)
  solver.flat_start             start from 1.0 p.u. / 0 deg (true)
  solver.enforce_q_limits       switch PV buses at reactive limits (false)
  lasso.steps                   adaptive reweighting steps (3)
  lasso.path.count              regularization path length (100)
  lasso.path.eps                smallest / largest lambda (1e-3)
  lasso.path.penalty_scale      penalty multiplier (1)
  lasso.validation_fraction     inner validation share for lambda selection (0.2)
  lasso.delta                   adaptive weight guard, null for infinite weights (1e-6)
  lasso.ccd.tol                 coordinate descent stopping change (1e-9)
  lasso.ccd.max_sweeps          coordinate descent sweep budget (100000)
  buckets                       load-factor bucket edges ([0.5, 0.9, 1.1, 1.5])
  eval.ranking_load_factor      load factor of the ranking comparison point (1.0)
  eval.tie_tolerance            relative gap below which ranking swaps are ties (0.01)
  eval.predict_repeats          prediction sweep repetitions for timing (5)
  jobs                          worker threads, 0 = all cores
  out                           output directory";

#[derive(Debug, Parser)]
#[command(name = "gridsec", version, about = "N-1 static security assessment with a Lasso surrogate", after_long_help = CONFIG_HELP)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// JSON run configuration; see `--help` for keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Case file (MATPOWER format) or ieee14 | ieee118 | ieee300.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples per contingency.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub load_min: Option<f64>,
    #[arg(long)]
    pub load_max: Option<f64>,
    /// Comma-separated bucket edges, e.g. 0.5,0.9,1.1,1.5.
    #[arg(long, value_delimiter = ',')]
    pub buckets: Option<Vec<f64>>,
    #[arg(long)]
    pub lambda_count: Option<usize>,
    #[arg(long)]
    pub msa_steps: Option<usize>,
    /// Worker threads; 1 runs inline, 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave the creation time out of written files.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the base-case load flow and print the solution as JSON.
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        enforce_q_limits: bool,
    },
    /// Generate a labeled contingency dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train one surrogate per load bucket.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Rank contingencies at an operating point with a trained assessor.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Operating point JSON: {"load_factor": .., "controls": {p_g, v_setpoints, taps, q_c}}.
        /// Without it, controls are drawn from --seed.
        #[arg(long)]
        point: Option<PathBuf>,
        /// Load factor when no point file is given.
        #[arg(long, default_value_t = 1.0)]
        load_factor: f64,
    },
    /// Compare a trained assessor against load-flow results.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Flow { common, .. }
            | Command::Gen { common }
            | Command::Train { common, .. }
            | Command::Rank { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }
}

/// Config file first, then flags on top.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &common.case {
        cfg.case = Some(v.clone());
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.samples {
        cfg.samples_per_contingency = v;
    }
    if let Some(v) = common.load_min {
        cfg.load_min = v;
    }
    if let Some(v) = common.load_max {
        cfg.load_max = v;
    }
    if let Some(v) = &common.buckets {
        cfg.buckets = v.clone();
    }
    if let Some(v) = common.lambda_count {
        cfg.lasso.path.count = v;
    }
    if let Some(v) = common.msa_steps {
        cfg.lasso.steps = v;
    }
    if let Some(v) = common.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = &common.out {
        cfg.out = Some(v.clone());
    }
    Ok(cfg)
}

pub fn load_case(name: &str) -> Result<Network, CliError> {
    let text = match cases::builtin(name) {
        Some(t) => t.to_string(),
        None => fs::read_to_string(name).map_err(|e| io_err(Path::new(name), e))?,
    };
    Ok(parse_case(&text)?)
}

fn require_case(cfg: &RunConfig) -> Result<Network, CliError> {
    let case = cfg
        .case
        .as_deref()
        .ok_or_else(|| CliError::Usage("--case is required".into()))?;
    load_case(case)
}

fn require_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn read_dataset(dir: &Path) -> Result<TrainingSet, CliError> {
    let csv = read(&dir.join(DATASET_CSV))?;
    let side = read(&dir.join(DATASET_JSON))?;
    Ok(TrainingSet::from_parts(&csv, &side)?)
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn cmd_flow(cfg: &RunConfig, enforce_q_limits: bool) -> Result<(), CliError> {
    let net = require_case(cfg)?;
    let opts = SolverOptions {
        enforce_q_limits: enforce_q_limits || cfg.solver.enforce_q_limits,
        ..cfg.solver
    };
    let sol = solve_nr(&net, &opts)?;
    let buses: Vec<_> = (0..net.buses.len())
        .map(|i| {
            json!({
                "id": sol.bus_ids[i],
                "v_mag": sol.v_mag[i],
                "v_ang_deg": sol.v_ang[i].to_degrees(),
                "p_inj": sol.p_inj[i],
                "q_inj": sol.q_inj[i],
            })
        })
        .collect();
    let branches: Vec<_> = net
        .branches
        .iter()
        .zip(&sol.branch_flows)
        .enumerate()
        .map(|(k, (br, f))| {
            json!({
                "index": k,
                "from": br.from_bus,
                "to": br.to_bus,
                "p_from": f.p_from,
                "q_from": f.q_from,
                "p_to": f.p_to,
                "q_to": f.q_to,
                "loss": f.loss(),
                "in_service": f.in_service,
            })
        })
        .collect();
    let gens: Vec<_> = net
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| json!({ "bus": gen.bus, "p": sol.gen_p[g], "q": sol.gen_q[g] }))
        .collect();
    let doc = json!({
        "convergence": {
            "converged": sol.converged,
            "iterations": sol.iterations,
            "max_mismatch": sol.max_mismatch,
        },
        "buses": buses,
        "branches": branches,
        "generators": gens,
    });
    let text = serde_json::to_string_pretty(&doc).expect("solution serializes") + "\n";
    match &cfg.out {
        Some(dir) => {
            let dir = require_out(&RunConfig { out: Some(dir.clone()), ..cfg.clone() })?;
            write(&dir.join("flow.json"), &text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(cfg: &RunConfig, timestamp: bool) -> Result<(), CliError> {
    let net = require_case(cfg)?;
    let out = require_out(cfg)?;
    let set = generate_dataset(&net, &cfg.dataset(), cfg.seed, cfg.execution())?;
    write(&out.join(DATASET_CSV), &set.to_csv())?;
    write(
        &out.join(DATASET_JSON),
        &(set.sidecar_json(timestamp.then(now_unix)) + "\n"),
    )
}

fn cmd_train(cfg: &RunConfig, data: &Path) -> Result<(), CliError> {
    let set = read_dataset(data)?;
    if cfg.case.is_some() {
        set.check_network(&require_case(cfg)?)?;
    }
    let out = require_out(cfg)?;
    let acfg = AssessorConfig {
        buckets: buckets_from_edges(&cfg.buckets)?,
        msa: cfg.lasso,
    };
    let a = train_assessor(&set, &acfg, cfg.execution())?;
    a.save(&out)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointFile {
    load_factor: f64,
    controls: ControlVector,
    // Solved outputs as written by `rank`; recomputed from the controls.
    #[serde(default, rename = "gen_p")]
    _gen_p: Option<Vec<f64>>,
    #[serde(default, rename = "gen_q")]
    _gen_q: Option<Vec<f64>>,
}

fn cmd_rank(cfg: &RunConfig, model: &Path, point: Option<&Path>, load_factor: f64) -> Result<(), CliError> {
    let net = require_case(cfg)?;
    let a = Assessor::load(model)?;
    a.check_network(&net)?;
    let out = require_out(cfg)?;
    let prepared = match point {
        Some(p) => {
            let pf: PointFile = serde_json::from_str(&read(p)?).map_err(|e| io_err(p, e))?;
            prepare_point(&net, &a.layout, pf.load_factor, &pf.controls, &a.solver)?
        }
        None => fixed_operating_point(&net, &a.layout, &a.ranges, &a.solver, cfg.seed, load_factor)?,
    };
    let report = a.screen_and_rank(&prepared.point)?;
    write(&out.join("ranking.csv"), &report.to_csv())?;
    write(&out.join("ranking.json"), &(report.to_json() + "\n"))?;
    let point_json = serde_json::to_string_pretty(&prepared.point).expect("point serializes");
    write(&out.join("operating_point.json"), &(point_json + "\n"))
}

fn cmd_eval(cfg: &RunConfig, model: &Path, data: &Path) -> Result<(), CliError> {
    let net = require_case(cfg)?;
    let a = Assessor::load(model)?;
    let set = read_dataset(data)?;
    set.check_network(&net)?;
    let out = require_out(cfg)?;
    let report = evaluate(&a, &net, &set, &cfg.eval, cfg.execution())?;
    write(&out.join("evaluation.csv"), &report.to_csv())?;
    write(&out.join("ranking.csv"), &report.ranking_report.to_csv())?;
    write(&out.join("summary.json"), &(report.summary_json() + "\n"))?;
    let e = &report.errors;
    log::info!(
        "{} test samples: mean |rel err| {:.3}%, max {:.3}%, timing ratio {:.1}",
        e.samples,
        e.mean_abs_rel_err_pct,
        e.max_abs_rel_err_pct,
        report.timing.ratio
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let cfg = resolve_config(common)?;
    match &cli.command {
        Command::Flow { enforce_q_limits, .. } => cmd_flow(&cfg, *enforce_q_limits),
        Command::Gen { .. } => cmd_gen(&cfg, !common.no_timestamp),
        Command::Train { data, .. } => cmd_train(&cfg, data),
        Command::Rank {
            model,
            point,
            load_factor,
            ..
        } => cmd_rank(&cfg, model, point.as_deref(), *load_factor),
        Command::Eval { model, data, .. } => cmd_eval(&cfg, model, data),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn config_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.case = Some("ieee14".into());
        cfg.lasso.delta = None;
        cfg.out = Some(PathBuf::from("/tmp/x"));
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"sead": 1}"#), Err(CliError::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"lasso": {"stepz": 1}}"#),
            Err(CliError::Config(_))
        ));
    }

    fn keys(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
        if let serde_json::Value::Object(m) = v {
            for (k, v) in m {
                let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                if v.is_object() {
                    keys(&name, v, out);
                } else {
                    out.push(name);
                }
            }
        }
    }

    #[test]
    fn help_lists_every_config_key() {
        let help = Cli::command().render_long_help().to_string();
        let v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        let mut all = Vec::new();
        keys("", &v, &mut all);
        for k in all {
            let leaf = k.rsplit('.').next().unwrap();
            assert!(help.contains(&k) || help.contains(leaf), "{k} missing from help");
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 7, "samples_per_contingency": 3, "lasso": {"steps": 2}}"#).unwrap();
        let common = Common {
            config: Some(p),
            seed: Some(9),
            msa_steps: Some(4),
            ..Default::default()
        };
        let cfg = resolve_config(&common).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.samples_per_contingency, 3);
        assert_eq!(cfg.lasso.steps, 4);
    }

    #[test]
    fn error_json_shape() {
        let e = CliError::Usage("--case is required".into());
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["kind"], "usage");
    }
}
