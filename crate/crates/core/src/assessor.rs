//! Per-load-bucket surrogate models: training, prediction, screening and
//! evaluation against the load-flow oracle.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::lasso::{msa_lasso_fit, LassoError, LassoModel, MsaConfig};
use crate::netmodel::Network;
use crate::powerflow::{solves_on_this_thread, SolverOptions};
use crate::scenario::{
    outage_index, prepare_point, sample_controls, slot_rng, Contingency, ControlRanges,
    FeatureLayout, OperatingPoint, ScenarioError, TrainingSet,
};
use crate::security::{
    classify, contingency_label, default_limits, rank_contingencies, DivergedRow, LimitConfig,
    RankEntry, RankingReport, SecurityError, SecurityState,
};

pub const ASSESSOR_SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("unknown contingency {0}")]
    UnknownContingency(String),
    #[error("load factor {0} is outside the configured buckets")]
    LoadOutOfRange(f64),
    #[error("bucket {0} has no training samples")]
    EmptyBucket(String),
    #[error("invalid buckets: {0}")]
    InvalidBuckets(String),
    #[error("layout mismatch: assessor {expected}, data {found}")]
    LayoutMismatch { expected: String, found: String },
    #[error("network mismatch: assessor {expected}, case {found}")]
    NetworkMismatch { expected: String, found: String },
    #[error("assessor schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("bucket {bucket}: {source}")]
    Fit { bucket: String, source: LassoError },
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AssessError {
    AssessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Load-factor interval `[lo, hi)`; the last bucket of a set also takes `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadBucket {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
}

pub fn default_buckets() -> Vec<LoadBucket> {
    buckets_from_edges(&[0.5, 0.9, 1.1, 1.5]).expect("valid default edges")
}

/// Contiguous buckets between consecutive edges. Three buckets are labeled
/// light/normal/heavy, one bucket `all`, other counts `b1`, `b2`, ...
pub fn buckets_from_edges(edges: &[f64]) -> Result<Vec<LoadBucket>, AssessError> {
    if edges.len() < 2 {
        return Err(AssessError::InvalidBuckets("need at least two edges".into()));
    }
    let n = edges.len() - 1;
    let label = |i: usize| match (n, i) {
        (1, _) => "all".to_string(),
        (3, 0) => "light".to_string(),
        (3, 1) => "normal".to_string(),
        (3, 2) => "heavy".to_string(),
        _ => format!("b{}", i + 1),
    };
    let buckets: Vec<LoadBucket> = edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| LoadBucket {
            label: label(i),
            lo: w[0],
            hi: w[1],
        })
        .collect();
    validate_buckets(&buckets)?;
    Ok(buckets)
}

pub fn validate_buckets(buckets: &[LoadBucket]) -> Result<(), AssessError> {
    if buckets.is_empty() {
        return Err(AssessError::InvalidBuckets("no buckets".into()));
    }
    for (i, b) in buckets.iter().enumerate() {
        if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
            return Err(AssessError::InvalidBuckets(format!("{}: [{}, {})", b.label, b.lo, b.hi)));
        }
        if i > 0 && buckets[i - 1].hi != b.lo {
            return Err(AssessError::InvalidBuckets(format!(
                "{} and {} are not contiguous",
                buckets[i - 1].label,
                b.label
            )));
        }
        if buckets[..i].iter().any(|o| o.label == b.label) {
            return Err(AssessError::InvalidBuckets(format!("duplicate label {}", b.label)));
        }
    }
    Ok(())
}

/// Index of the bucket holding `f`, lower bounds inclusive.
pub fn bucket_of(buckets: &[LoadBucket], f: f64) -> Option<usize> {
    let last = buckets.len().checked_sub(1)?;
    buckets
        .iter()
        .position(|b| b.lo <= f && f < b.hi)
        .or_else(|| (f == buckets[last].hi).then_some(last))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessorConfig {
    pub buckets: Vec<LoadBucket>,
    pub msa: MsaConfig,
}

impl Default for AssessorConfig {
    fn default() -> Self {
        AssessorConfig {
            buckets: default_buckets(),
            msa: MsaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDiagnostics {
    pub label: String,
    pub train_samples: usize,
    pub nonzero: usize,
    pub lambda: f64,
    pub train_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessor {
    pub buckets: Vec<LoadBucket>,
    pub models: Vec<LassoModel>,
    pub network_fingerprint: String,
    pub layout: FeatureLayout,
    /// Contingencies with training data.
    pub contingencies: Vec<Contingency>,
    /// Enumerated contingencies without a single converged sample.
    pub untrained: Vec<Contingency>,
    pub limits: LimitConfig,
    pub ranges: ControlRanges,
    pub solver: SolverOptions,
    pub seed: u64,
    pub diagnostics: Vec<BucketDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    /// Clamped and snapped estimate.
    pub pi_c: f64,
    pub raw: f64,
    pub state: SecurityState,
}

/// Negative estimates become 0; values within 1e-9 of 0 or 1 snap onto them.
pub fn settle(raw: f64) -> f64 {
    let v = raw.max(0.0);
    if v <= SNAP {
        0.0
    } else if (v - 1.0).abs() <= SNAP {
        1.0
    } else {
        v
    }
}

/// Fits one model per bucket on the training split of `set`.
pub fn train_assessor(
    set: &TrainingSet,
    cfg: &AssessorConfig,
    exec: Execution,
) -> Result<Assessor, AssessError> {
    validate_buckets(&cfg.buckets)?;
    cfg.msa.validate()?;
    let layout_fp = set.layout_fingerprint();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.buckets.len()];
    for &i in &set.split.train {
        let s = &set.samples[i];
        if let Some(b) = bucket_of(&cfg.buckets, s.load_factor) {
            members[b].push(i);
        }
    }
    if let Some(b) = members.iter().position(|m| m.len() < 2) {
        return Err(AssessError::EmptyBucket(cfg.buckets[b].label.clone()));
    }

    let width = set.layout.len();
    let fits = map_indexed(cfg.buckets.len(), exec, |b| {
        let rows = &members[b];
        let x = Array2::from_shape_fn((rows.len(), width), |(r, k)| set.samples[rows[r]].features[k]);
        let y = Array1::from_iter(rows.iter().map(|&i| set.samples[i].response.unwrap_or(0.0)));
        msa_lasso_fit(x.view(), y.view(), &cfg.msa).map(|mut m| {
            m.layout = Some(layout_fp.clone());
            let rmse = (rows
                .iter()
                .zip(&y)
                .map(|(&i, yi)| (m.predict(&set.samples[i].features).unwrap_or(f64::NAN) - yi).powi(2))
                .sum::<f64>()
                / rows.len() as f64)
                .sqrt();
            (m, rmse)
        })
    });

    let mut models = Vec::with_capacity(fits.len());
    let mut diagnostics = Vec::with_capacity(fits.len());
    for (b, fit) in fits.into_iter().enumerate() {
        let label = cfg.buckets[b].label.clone();
        let (m, rmse) = fit.map_err(|source| AssessError::Fit {
            bucket: label.clone(),
            source,
        })?;
        log::info!(
            "bucket {label}: {} samples, {} of {} coefficients nonzero, train rmse {rmse:.3e}",
            members[b].len(),
            m.nonzero(),
            m.dim()
        );
        diagnostics.push(BucketDiagnostics {
            label,
            train_samples: members[b].len(),
            nonzero: m.nonzero(),
            lambda: m.lambda,
            train_rmse: rmse,
        });
        models.push(m);
    }

    let (contingencies, untrained): (Vec<Contingency>, Vec<Contingency>) = set
        .contingencies
        .iter()
        .cloned()
        .partition(|c| set.converged().any(|s| s.contingency == c.id));
    Ok(Assessor {
        buckets: cfg.buckets.clone(),
        models,
        network_fingerprint: set.network_fingerprint.clone(),
        layout: set.layout.clone(),
        contingencies,
        untrained,
        limits: set.config.limits,
        ranges: set.config.ranges,
        solver: set.config.solver,
        seed: set.seed,
        diagnostics,
    })
}

impl Assessor {
    pub fn layout_fingerprint(&self) -> String {
        self.layout.fingerprint()
    }

    pub fn check_network(&self, net: &Network) -> Result<(), AssessError> {
        let found = net.fingerprint();
        if found != self.network_fingerprint {
            return Err(AssessError::NetworkMismatch {
                expected: self.network_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn contingency(&self, id: usize) -> Option<&Contingency> {
        self.contingencies.iter().find(|c| c.id == id)
    }

    pub fn bucket_for(&self, load_factor: f64) -> Result<usize, AssessError> {
        bucket_of(&self.buckets, load_factor).ok_or(AssessError::LoadOutOfRange(load_factor))
    }

    /// Estimate for one contingency at an operating point. No load flow is run.
    pub fn assess(&self, point: &OperatingPoint, contingency: usize) -> Result<Assessment, AssessError> {
        let c = self
            .contingency(contingency)
            .ok_or_else(|| AssessError::UnknownContingency(contingency_label(contingency)))?;
        let b = self.bucket_for(point.load_factor)?;
        let x = self.layout.features(point, c.outage_branch);
        let raw = self.models[b].predict(&x)?;
        let pi_c = settle(raw);
        Ok(Assessment {
            pi_c,
            raw,
            state: classify(pi_c)?,
        })
    }

    /// Every trained contingency, ranked by estimate. Contingencies without a
    /// model are listed as diverged.
    pub fn screen_and_rank(&self, point: &OperatingPoint) -> Result<RankingReport, AssessError> {
        let entries = self
            .contingencies
            .iter()
            .map(|c| {
                let a = self.assess(point, c.id)?;
                let mut e = RankEntry::new(c.id, c.from, c.to, a.pi_c);
                e.predicted = Some(a.pi_c);
                Ok(e)
            })
            .collect::<Result<Vec<_>, AssessError>>()?;
        let mut report = rank_contingencies(entries)?;
        report.diverged = self
            .untrained
            .iter()
            .map(|c| DivergedRow {
                contingency: c.label(),
                id: c.id,
                from: c.from,
                to: c.to,
                reason: if c.islanding { "islanding" } else { "no training data" }.into(),
            })
            .collect();
        Ok(report)
    }

    pub fn save(&self, dir: &Path) -> Result<(), AssessError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let files: Vec<String> = self.buckets.iter().map(|b| format!("model_{}.json", b.label)).collect();
        for (m, f) in self.models.iter().zip(&files) {
            let p = dir.join(f);
            fs::write(&p, m.to_json() + "\n").map_err(|e| io_err(&p, e))?;
        }
        let manifest = Manifest {
            schema_version: ASSESSOR_SCHEMA_VERSION,
            network_fingerprint: self.network_fingerprint.clone(),
            layout_fingerprint: self.layout_fingerprint(),
            layout: self.layout.clone(),
            buckets: self.buckets.clone(),
            model_files: files,
            contingencies: self.contingencies.clone(),
            untrained: self.untrained.clone(),
            limits: self.limits,
            ranges: self.ranges,
            solver: self.solver,
            seed: self.seed,
            diagnostics: self.diagnostics.clone(),
        };
        let p = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, text + "\n").map_err(|e| io_err(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self, AssessError> {
        let p = dir.join(MANIFEST);
        let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| io_err(&p, e))?;
        if m.schema_version != ASSESSOR_SCHEMA_VERSION {
            return Err(AssessError::SchemaVersion {
                found: m.schema_version,
                expected: ASSESSOR_SCHEMA_VERSION,
            });
        }
        let layout_fp = m.layout.fingerprint();
        if layout_fp != m.layout_fingerprint {
            return Err(AssessError::LayoutMismatch {
                expected: m.layout_fingerprint,
                found: layout_fp,
            });
        }
        validate_buckets(&m.buckets)?;
        if m.model_files.len() != m.buckets.len() {
            return Err(AssessError::InvalidBuckets("one model file per bucket expected".into()));
        }
        let mut models = Vec::with_capacity(m.model_files.len());
        for f in &m.model_files {
            let p = dir.join(f);
            let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            let model = LassoModel::from_json(&text, Some(&layout_fp))?;
            if model.dim() != m.layout.len() {
                return Err(AssessError::LayoutMismatch {
                    expected: format!("{} features", m.layout.len()),
                    found: format!("{} features", model.dim()),
                });
            }
            models.push(model);
        }
        Ok(Assessor {
            buckets: m.buckets,
            models,
            network_fingerprint: m.network_fingerprint,
            layout: m.layout,
            contingencies: m.contingencies,
            untrained: m.untrained,
            limits: m.limits,
            ranges: m.ranges,
            solver: m.solver,
            seed: m.seed,
            diagnostics: m.diagnostics,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    network_fingerprint: String,
    layout_fingerprint: String,
    layout: FeatureLayout,
    buckets: Vec<LoadBucket>,
    model_files: Vec<String>,
    contingencies: Vec<Contingency>,
    untrained: Vec<Contingency>,
    limits: LimitConfig,
    ranges: ControlRanges,
    solver: SolverOptions,
    seed: u64,
    diagnostics: Vec<BucketDiagnostics>,
}

const FIXED_POINT_STREAM: u64 = u64::MAX - 1;

/// Operating point used for ranking comparisons: controls drawn from the
/// dataset's sampling law on a reserved stream of `seed`, at `load_factor`.
/// Redraws until the intact network solves.
pub fn fixed_operating_point(
    net: &Network,
    layout: &FeatureLayout,
    ranges: &ControlRanges,
    solver: &SolverOptions,
    seed: u64,
    load_factor: f64,
) -> Result<crate::scenario::PreparedPoint, ScenarioError> {
    let mut rng = slot_rng(seed, FIXED_POINT_STREAM);
    let mut last = None;
    for _ in 0..100 {
        let controls = sample_controls(net, layout, ranges, &mut rng)?;
        match prepare_point(net, layout, load_factor, &controls, solver) {
            Ok(p) => return Ok(p),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Oracle index of every contingency at a prepared point. `None` marks a
/// failed solve.
pub fn oracle_sweep(
    prepared: &Network,
    contingencies: &[Contingency],
    limits: &LimitConfig,
    solver: &SolverOptions,
    exec: Execution,
) -> Vec<Result<f64, ScenarioError>> {
    let lim = default_limits(prepared, limits);
    map_indexed(contingencies.len(), exec, |i| {
        outage_index(prepared, contingencies[i].outage_branch, &lim, solver)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub slot: usize,
    pub contingency: String,
    pub load_factor: f64,
    pub bucket: String,
    pub oracle: f64,
    pub predicted: f64,
    pub rel_err_pct: Option<f64>,
    pub oracle_state: SecurityState,
    pub predicted_state: SecurityState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub samples: usize,
    /// Rows with a positive oracle value, over which relative errors are taken.
    pub scored: usize,
    pub mean_abs_rel_err_pct: f64,
    pub max_abs_rel_err_pct: f64,
    pub mean_abs_err: f64,
    pub max_abs_err: f64,
    /// `[oracle][predicted]` over secure, alarmed, insecure.
    pub state_confusion: [[usize; 3]; 3],
}

fn state_idx(s: SecurityState) -> usize {
    match s {
        SecurityState::Secure => 0,
        SecurityState::Alarmed => 1,
        SecurityState::Insecure => 2,
    }
}

pub fn summarize_errors(rows: &[EvalRow]) -> ErrorSummary {
    let mut out = ErrorSummary {
        samples: rows.len(),
        ..Default::default()
    };
    let mut sum_rel = 0.0;
    let mut sum_abs = 0.0;
    for r in rows {
        let abs = (r.predicted - r.oracle).abs();
        sum_abs += abs;
        out.max_abs_err = out.max_abs_err.max(abs);
        if r.oracle > 0.0 {
            if let Some(e) = r.rel_err_pct {
                out.scored += 1;
                sum_rel += e.abs();
                out.max_abs_rel_err_pct = out.max_abs_rel_err_pct.max(e.abs());
            }
        }
        out.state_confusion[state_idx(r.oracle_state)][state_idx(r.predicted_state)] += 1;
    }
    if out.scored > 0 {
        out.mean_abs_rel_err_pct = sum_rel / out.scored as f64;
    }
    if !rows.is_empty() {
        out.mean_abs_err = sum_abs / rows.len() as f64;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankComparison {
    pub load_factor: f64,
    pub contingencies: usize,
    pub exact_matches: usize,
    pub inversions: usize,
    /// Inverted pairs whose oracle values differ by at least `tie_tolerance`
    /// relative to the larger of the two.
    pub significant_inversions: Vec<(String, String)>,
    pub tie_tolerance: f64,
    pub spearman: f64,
}

impl RankComparison {
    pub fn matches_up_to_near_ties(&self) -> bool {
        self.significant_inversions.is_empty()
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Compares two orderings of the same contingencies. `oracle` and `predicted`
/// map contingency id to value.
pub fn compare_rankings(
    oracle: &[(usize, f64)],
    predicted: &[(usize, f64)],
    tie_tolerance: f64,
    load_factor: f64,
) -> Result<RankComparison, AssessError> {
    let order = |vals: &[(usize, f64)]| -> Result<Vec<usize>, AssessError> {
        let entries = vals.iter().map(|&(id, v)| RankEntry::new(id, 0, 0, v)).collect();
        Ok(rank_contingencies(entries)?.rows.iter().map(|r| r.id).collect())
    };
    let o = order(oracle)?;
    let p = order(predicted)?;
    let n = o.len();
    let pos_p = |id: usize| p.iter().position(|&x| x == id).expect("same contingency set");
    let value = |id: usize| oracle.iter().find(|e| e.0 == id).map(|e| e.1).unwrap_or(0.0);
    let exact_matches = o.iter().zip(&p).filter(|(a, b)| a == b).count();
    let mut inversions = 0;
    let mut significant = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if pos_p(o[i]) > pos_p(o[j]) {
                inversions += 1;
                if relative_gap(value(o[i]), value(o[j])) >= tie_tolerance {
                    significant.push((contingency_label(o[i]), contingency_label(o[j])));
                }
            }
        }
    }
    let d2: f64 = o
        .iter()
        .enumerate()
        .map(|(i, &id)| (i as f64 - pos_p(id) as f64).powi(2))
        .sum();
    let spearman = if n > 1 {
        1.0 - 6.0 * d2 / (n as f64 * (n as f64 * n as f64 - 1.0))
    } else {
        1.0
    };
    Ok(RankComparison {
        load_factor,
        contingencies: n,
        exact_matches,
        inversions,
        significant_inversions: significant,
        tie_tolerance,
        spearman,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub oracle_sweep_secs: f64,
    pub predict_sweep_secs: f64,
    /// oracle / predict
    pub ratio: f64,
    pub predict_path_solves: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Load factor of the fixed ranking point.
    pub ranking_load_factor: f64,
    pub tie_tolerance: f64,
    /// Repetitions of the prediction sweep; the fastest counts.
    pub predict_repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ranking_load_factor: 1.0,
            tie_tolerance: 0.01,
            predict_repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvalRow>,
    pub errors: ErrorSummary,
    pub per_bucket: Vec<(String, ErrorSummary)>,
    pub ranking: RankComparison,
    pub ranking_report: RankingReport,
    pub timing: Timing,
}

#[derive(Serialize)]
struct Summary<'a> {
    errors: &'a ErrorSummary,
    per_bucket: &'a [(String, ErrorSummary)],
    ranking: &'a RankComparison,
    timing: &'a Timing,
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "slot",
            "contingency",
            "load_factor",
            "bucket",
            "oracle",
            "predicted",
            "rel_err_pct",
            "oracle_state",
            "predicted_state",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.slot.to_string(),
                r.contingency.clone(),
                r.load_factor.to_string(),
                r.bucket.clone(),
                r.oracle.to_string(),
                r.predicted.to_string(),
                r.rel_err_pct.map(|v| v.to_string()).unwrap_or_default(),
                r.oracle_state.to_string(),
                r.predicted_state.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&Summary {
            errors: &self.errors,
            per_bucket: &self.per_bucket,
            ranking: &self.ranking,
            timing: &self.timing,
        })
        .expect("summary serializes")
    }
}

/// Paired oracle/estimate rows for the test split of `set`, plus a ranking
/// and timing comparison at a fixed operating point.
pub fn evaluate(
    a: &Assessor,
    net: &Network,
    set: &TrainingSet,
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<EvaluationReport, AssessError> {
    a.check_network(net)?;
    if set.layout_fingerprint() != a.layout_fingerprint() {
        return Err(AssessError::LayoutMismatch {
            expected: a.layout_fingerprint(),
            found: set.layout_fingerprint(),
        });
    }
    let mut rows = Vec::with_capacity(set.split.test.len());
    for &i in &set.split.test {
        let s = &set.samples[i];
        let Some(oracle) = s.response else { continue };
        let (point, _) = set.layout.decode(s.load_factor, &s.features)?;
        let est = a.assess(&point, s.contingency)?;
        rows.push(EvalRow {
            slot: s.slot,
            contingency: contingency_label(s.contingency),
            load_factor: s.load_factor,
            bucket: a.buckets[a.bucket_for(s.load_factor)?].label.clone(),
            oracle,
            predicted: est.pi_c,
            rel_err_pct: (oracle > 0.0).then(|| (est.pi_c - oracle) / oracle * 100.0),
            oracle_state: classify(oracle)?,
            predicted_state: est.state,
        });
    }
    let errors = summarize_errors(&rows);
    let per_bucket = a
        .buckets
        .iter()
        .map(|b| {
            let sub: Vec<EvalRow> = rows.iter().filter(|r| r.bucket == b.label).cloned().collect();
            (b.label.clone(), summarize_errors(&sub))
        })
        .collect();

    let fixed = fixed_operating_point(net, &a.layout, &a.ranges, &a.solver, a.seed, cfg.ranking_load_factor)?;
    // warm both paths once
    let _ = a.screen_and_rank(&fixed.point)?;
    let _ = oracle_sweep(&fixed.network, &a.contingencies[..1.min(a.contingencies.len())], &a.limits, &a.solver, Execution::Sequential);

    // Timed sweep runs inline so the ratio compares like with like; the
    // values used for ranking come from a sweep on `exec`.
    let t0 = Instant::now();
    let _ = oracle_sweep(&fixed.network, &a.contingencies, &a.limits, &a.solver, Execution::Sequential);
    let oracle_secs = t0.elapsed().as_secs_f64();
    let oracle_vals = oracle_sweep(&fixed.network, &a.contingencies, &a.limits, &a.solver, exec);

    let before = solves_on_this_thread();
    let mut predict_secs = f64::INFINITY;
    let mut predicted = RankingReport::default();
    for _ in 0..cfg.predict_repeats.max(1) {
        let t = Instant::now();
        predicted = a.screen_and_rank(&fixed.point)?;
        predict_secs = predict_secs.min(t.elapsed().as_secs_f64());
    }
    let predict_path_solves = solves_on_this_thread() - before;

    let mut oracle_pairs = Vec::new();
    let mut pred_pairs = Vec::new();
    let mut entries = Vec::new();
    let mut diverged = predicted.diverged.clone();
    for (c, o) in a.contingencies.iter().zip(&oracle_vals) {
        let o = match o {
            Ok(o) => *o,
            Err(e) => {
                log::warn!("{}: oracle solve failed at the ranking point", c.label());
                diverged.push(DivergedRow {
                    contingency: c.label(),
                    id: c.id,
                    from: c.from,
                    to: c.to,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let p = predicted
            .rows
            .iter()
            .find(|r| r.id == c.id)
            .map(|r| r.pi_c)
            .unwrap_or(0.0);
        oracle_pairs.push((c.id, o));
        pred_pairs.push((c.id, p));
        let mut e = RankEntry::new(c.id, c.from, c.to, o);
        e.oracle = Some(o);
        e.predicted = Some(p);
        entries.push(e);
    }
    let ranking = compare_rankings(&oracle_pairs, &pred_pairs, cfg.tie_tolerance, cfg.ranking_load_factor)?;
    let mut ranking_report = rank_contingencies(entries)?;
    ranking_report.diverged = diverged;

    Ok(EvaluationReport {
        rows,
        errors,
        per_bucket,
        ranking,
        ranking_report,
        timing: Timing {
            oracle_sweep_secs: oracle_secs,
            predict_sweep_secs: predict_secs,
            ratio: oracle_secs / predict_secs.max(1e-12),
            predict_path_solves,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{cases, parse_case};
    use crate::scenario::{generate_dataset, DatasetConfig};

    fn small_set(spc: usize) -> (Network, TrainingSet) {
        let net = parse_case(cases::IEEE14).unwrap();
        let cfg = DatasetConfig {
            samples_per_contingency: spc,
            ..Default::default()
        };
        let set = generate_dataset(&net, &cfg, 7, Execution::default()).unwrap();
        (net, set)
    }

    #[test]
    fn bucket_boundaries() {
        let b = default_buckets();
        assert_eq!(bucket_of(&b, 0.5), Some(0));
        assert_eq!(bucket_of(&b, 0.9), Some(1));
        assert_eq!(bucket_of(&b, 1.0999999), Some(1));
        assert_eq!(bucket_of(&b, 1.1), Some(2));
        assert_eq!(bucket_of(&b, 1.5), Some(2));
        assert_eq!(bucket_of(&b, 1.5000001), None);
        assert_eq!(bucket_of(&b, 0.49), None);
        assert_eq!(b.iter().map(|x| x.label.as_str()).collect::<Vec<_>>(), ["light", "normal", "heavy"]);
        assert!(buckets_from_edges(&[0.5, 0.4]).is_err());
        assert!(validate_buckets(&[
            LoadBucket { label: "a".into(), lo: 0.5, hi: 1.0 },
            LoadBucket { label: "b".into(), lo: 0.9, hi: 1.5 },
        ])
        .is_err());
    }

    #[test]
    fn settle_clamps_and_snaps() {
        assert_eq!(settle(-0.3), 0.0);
        assert_eq!(settle(5e-10), 0.0);
        assert_eq!(settle(1.0 + 5e-10), 1.0);
        assert_eq!(settle(0.4), 0.4);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let rows: Vec<EvalRow> = [0.0, 0.3, 1.4]
            .iter()
            .enumerate()
            .map(|(i, &v)| EvalRow {
                slot: i,
                contingency: contingency_label(i),
                load_factor: 1.0,
                bucket: "all".into(),
                oracle: v,
                predicted: v,
                rel_err_pct: (v > 0.0).then_some(0.0),
                oracle_state: classify(v).unwrap(),
                predicted_state: classify(v).unwrap(),
            })
            .collect();
        let s = summarize_errors(&rows);
        assert_eq!(s.scored, 2);
        assert_eq!(s.max_abs_rel_err_pct, 0.0);
        assert_eq!(s.state_confusion, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let vals = vec![(0, 0.2), (1, 0.9), (2, 0.5)];
        let cmp = compare_rankings(&vals, &vals, 0.01, 1.0).unwrap();
        assert_eq!(cmp.exact_matches, 3);
        assert_eq!(cmp.inversions, 0);
        assert_eq!(cmp.spearman, 1.0);
    }

    #[test]
    fn near_tie_swaps_tolerated() {
        let oracle = vec![(0, 1.000), (1, 1.005), (2, 0.5)];
        let swapped = vec![(0, 1.2), (1, 1.1), (2, 0.4)];
        let cmp = compare_rankings(&oracle, &swapped, 0.01, 1.0).unwrap();
        assert_eq!(cmp.inversions, 1);
        assert!(cmp.matches_up_to_near_ties());
        let bad = vec![(0, 0.1), (1, 1.1), (2, 0.4)];
        let cmp = compare_rankings(&oracle, &bad, 0.01, 1.0).unwrap();
        assert!(!cmp.matches_up_to_near_ties());
    }

    #[test]
    fn train_assess_rank_and_persist() {
        let (net, set) = small_set(12);
        let a = train_assessor(&set, &AssessorConfig::default(), Execution::default()).unwrap();
        assert_eq!(a.models.len(), 3);
        assert_eq!(a.contingencies.len(), 19);

        let fixed = fixed_operating_point(&net, &a.layout, &a.ranges, &a.solver, 7, 1.0).unwrap();
        let before = solves_on_this_thread();
        let report = a.screen_and_rank(&fixed.point).unwrap();
        assert_eq!(solves_on_this_thread(), before);
        assert_eq!(report.rows.len(), 19);
        let again = a.screen_and_rank(&fixed.point).unwrap();
        assert_eq!(report, again);
        for r in &report.rows {
            assert_eq!(a.assess(&fixed.point, r.id).unwrap().pi_c, r.pi_c);
        }
        assert!(report.screened().all(|r| r.state != SecurityState::Secure));
        assert!(matches!(
            a.assess(&fixed.point, 13),
            Err(AssessError::UnknownContingency(l)) if l == "L14"
        ));
        let mut far = fixed.point.clone();
        far.load_factor = 2.0;
        assert!(matches!(a.assess(&far, 0), Err(AssessError::LoadOutOfRange(_))));

        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let back = Assessor::load(dir.path()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn single_bucket_and_empty_bucket() {
        let (_, set) = small_set(6);
        let one = AssessorConfig {
            buckets: buckets_from_edges(&[0.5, 1.5]).unwrap(),
            ..Default::default()
        };
        assert_eq!(train_assessor(&set, &one, Execution::Sequential).unwrap().models.len(), 1);
        let empty = AssessorConfig {
            buckets: buckets_from_edges(&[0.1, 0.2, 1.5]).unwrap(),
            ..Default::default()
        };
        assert!(matches!(
            train_assessor(&set, &empty, Execution::Sequential),
            Err(AssessError::EmptyBucket(l)) if l == "b1"
        ));
    }
}
