//! N-1 contingency enumeration, control sampling and labeled dataset
//! generation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::netmodel::{BusId, BusKind, NetError, Network};
use crate::powerflow::{solve_nr, FlowError, SolverOptions};
use crate::security::{
    contingency_label, default_limits, security_index, LimitConfig, SecurityError, SecurityLimits,
};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{what}: range [{min}, {max}] with step {step} admits no value")]
    EmptyGrid {
        what: &'static str,
        min: f64,
        max: f64,
        step: f64,
    },
    #[error("{what}: invalid range [{min}, {max}]")]
    InvalidRange { what: String, min: f64, max: f64 },
    #[error("samples_per_contingency must be at least 1")]
    NoSamples,
    #[error("network has no admissible contingencies")]
    NoContingencies,
    #[error("no draw converged in {attempts} attempts; last failure: {last}")]
    NothingConverged { attempts: usize, last: String },
    #[error("load flow did not converge: {0}")]
    Unconverged(String),
    #[error("{what}: expected {expected} values, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dataset was generated for network {expected}, not {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Security(#[from] SecurityError),
}

/// Single-line outage. `id` is the branch index and doubles as the
/// contingency's stable identifier (label `L{id+1}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub id: usize,
    pub outage_branch: usize,
    pub from: BusId,
    pub to: BusId,
    /// Removal splits the network; the load flow cannot be solved.
    #[serde(default)]
    pub islanding: bool,
}

impl Contingency {
    pub fn label(&self) -> String {
        contingency_label(self.id)
    }
}

/// In-service branches that are the only connection of one of their end buses.
pub fn radial_branches(net: &Network) -> Vec<usize> {
    let index = net.bus_index();
    let mut degree = vec![0usize; net.buses.len()];
    for br in net.branches.iter().filter(|b| b.in_service) {
        degree[index[&br.from_bus]] += 1;
        degree[index[&br.to_bus]] += 1;
    }
    net.branches
        .iter()
        .enumerate()
        .filter(|(_, br)| {
            br.in_service && (degree[index[&br.from_bus]] == 1 || degree[index[&br.to_bus]] == 1)
        })
        .map(|(k, _)| k)
        .collect()
}

/// One contingency per in-service branch, skipping branches that are the sole
/// connection of a bus. Branches whose loss splits the remaining network are
/// kept and flagged `islanding`.
pub fn enumerate_contingencies(net: &Network) -> Vec<Contingency> {
    let radial = radial_branches(net);
    net.branches
        .iter()
        .enumerate()
        .filter(|(k, br)| br.in_service && radial.binary_search(k).is_err())
        .map(|(k, br)| Contingency {
            id: k,
            outage_branch: k,
            from: br.from_bus,
            to: br.to_bus,
            islanding: !net.is_connected(Some(k)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlRanges {
    pub u_min: f64,
    pub u_max: f64,
    pub tap_min: f64,
    pub tap_max: f64,
    pub tap_step: f64,
    /// Capacitor output bounds and step, p.u. on the system base.
    pub qc_min: f64,
    pub qc_max: f64,
    pub qc_step: f64,
}

impl Default for ControlRanges {
    fn default() -> Self {
        ControlRanges {
            u_min: 0.95,
            u_max: 1.05,
            tap_min: 0.9,
            tap_max: 1.1,
            tap_step: 0.0125,
            qc_min: 0.0,
            qc_max: 0.5,
            qc_step: 0.01,
        }
    }
}

impl ControlRanges {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        check_range("U", self.u_min, self.u_max)?;
        grid("T", self.tap_min, self.tap_max, self.tap_step)?;
        grid("Q_C", self.qc_min, self.qc_max, self.qc_step)?;
        Ok(())
    }
}

fn check_range(what: &str, min: f64, max: f64) -> Result<(), ScenarioError> {
    if !(min.is_finite() && max.is_finite() && min <= max) {
        return Err(ScenarioError::InvalidRange {
            what: what.to_string(),
            min,
            max,
        });
    }
    Ok(())
}

/// `{min, min+step, ...} ∩ [min, max]`
pub fn grid(what: &'static str, min: f64, max: f64, step: f64) -> Result<Vec<f64>, ScenarioError> {
    if !(step > 0.0 && step.is_finite() && min.is_finite() && max.is_finite() && min <= max) {
        return Err(ScenarioError::EmptyGrid { what, min, max, step });
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| min + i as f64 * step).collect())
}

fn uniform(rng: &mut ChaCha8Rng, min: f64, max: f64) -> f64 {
    if min == max {
        min
    } else {
        rng.random_range(min..=max)
    }
}

/// Fixed ordering of the observation vector:
/// `P_G ‖ Q_G ‖ U ‖ T ‖ Q_C ‖ L`. Generators and capacitors are ordered by bus
/// id, voltage-controlled buses by id, transformers and line flags by branch
/// index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub generators: Vec<usize>,
    pub voltage_buses: Vec<BusId>,
    pub transformers: Vec<usize>,
    pub capacitors: Vec<usize>,
    pub monitored: Vec<usize>,
}

impl FeatureLayout {
    pub fn for_network(net: &Network) -> Self {
        let mut generators: Vec<usize> = (0..net.generators.len()).collect();
        generators.sort_by_key(|&g| (net.generators[g].bus, g));
        let mut voltage_buses: Vec<BusId> = net
            .buses
            .iter()
            .filter(|b| b.kind != BusKind::Pq)
            .map(|b| b.id)
            .collect();
        voltage_buses.sort_unstable();
        let mut capacitors: Vec<usize> = (0..net.shunt_capacitors.len()).collect();
        capacitors.sort_by_key(|&c| (net.shunt_capacitors[c].bus, c));
        FeatureLayout {
            generators,
            voltage_buses,
            transformers: net
                .transformer_indices()
                .into_iter()
                .filter(|&k| net.branches[k].in_service)
                .collect(),
            capacitors,
            monitored: net
                .branches
                .iter()
                .enumerate()
                .filter(|(_, b)| b.in_service)
                .map(|(k, _)| k)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.generators.len()
            + self.voltage_buses.len()
            + self.transformers.len()
            + self.capacitors.len()
            + self.monitored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offsets(&self) -> [usize; 6] {
        let g = self.generators.len();
        let pg = 0;
        let qg = pg + g;
        let u = qg + g;
        let t = u + self.voltage_buses.len();
        let qc = t + self.transformers.len();
        let l = qc + self.capacitors.len();
        [pg, qg, u, t, qc, l]
    }

    pub fn names(&self, net: &Network) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        for &g in &self.generators {
            out.push(format!("P_G{}@{}", g + 1, net.generators[g].bus));
        }
        for &g in &self.generators {
            out.push(format!("Q_G{}@{}", g + 1, net.generators[g].bus));
        }
        for b in &self.voltage_buses {
            out.push(format!("U@{b}"));
        }
        for &k in &self.transformers {
            let br = &net.branches[k];
            out.push(format!("T{}@{}-{}", k + 1, br.from_bus, br.to_bus));
        }
        for &c in &self.capacitors {
            out.push(format!("Q_C{}@{}", c + 1, net.shunt_capacitors[c].bus));
        }
        for &k in &self.monitored {
            out.push(format!("L{}", k + 1));
        }
        out
    }

    /// SHA-256 over the serialized layout, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("layout serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn features(&self, point: &OperatingPoint, outage: usize) -> Vec<f64> {
        let c = &point.controls;
        let mut out = Vec::with_capacity(self.len());
        out.extend(&point.gen_p);
        out.extend(&point.gen_q);
        out.extend(&c.v_setpoints);
        out.extend(&c.taps);
        out.extend(&c.q_c);
        out.extend(self.monitored.iter().map(|&k| if k == outage { 0.0 } else { 1.0 }));
        out
    }

    /// Splits a feature vector back into its operating point and outage branch.
    pub fn decode(&self, load_factor: f64, features: &[f64]) -> Result<(OperatingPoint, Option<usize>), ScenarioError> {
        if features.len() != self.len() {
            return Err(ScenarioError::DimensionMismatch {
                what: "features",
                expected: self.len(),
                got: features.len(),
            });
        }
        let [pg, qg, u, t, qc, l] = self.offsets();
        let outage = features[l..]
            .iter()
            .position(|&f| f == 0.0)
            .map(|pos| self.monitored[pos]);
        let gen_p = features[pg..qg].to_vec();
        Ok((
            OperatingPoint {
                load_factor,
                controls: ControlVector {
                    p_g: gen_p.clone(),
                    v_setpoints: features[u..t].to_vec(),
                    taps: features[t..qc].to_vec(),
                    q_c: features[qc..l].to_vec(),
                },
                gen_p,
                gen_q: features[qg..u].to_vec(),
            },
            outage,
        ))
    }
}

/// Sampled controls in layout order. Entries for generators on the slack bus
/// are carried but not imposed, since the solve sets their output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub p_g: Vec<f64>,
    pub v_setpoints: Vec<f64>,
    pub taps: Vec<f64>,
    /// MVAr
    pub q_c: Vec<f64>,
}

impl ControlVector {
    /// Controls as stored in the network.
    pub fn from_network(net: &Network, layout: &FeatureLayout) -> Self {
        let index = net.bus_index();
        ControlVector {
            p_g: layout.generators.iter().map(|&g| net.generators[g].p_out).collect(),
            v_setpoints: layout
                .voltage_buses
                .iter()
                .map(|b| {
                    net.generators
                        .iter()
                        .find(|g| g.bus == *b)
                        .map_or(net.buses[index[b]].v_mag, |g| g.v_setpoint)
                })
                .collect(),
            taps: layout.transformers.iter().map(|&k| net.branches[k].tap).collect(),
            q_c: layout
                .capacitors
                .iter()
                .map(|&c| net.shunt_capacitors[c].q_switched)
                .collect(),
        }
    }
}

pub fn sample_controls(
    net: &Network,
    layout: &FeatureLayout,
    ranges: &ControlRanges,
    rng: &mut ChaCha8Rng,
) -> Result<ControlVector, ScenarioError> {
    check_range("U", ranges.u_min, ranges.u_max)?;
    let taps = grid("T", ranges.tap_min, ranges.tap_max, ranges.tap_step)?;
    let qc = grid("Q_C", ranges.qc_min, ranges.qc_max, ranges.qc_step)?;
    let slack = net.slack_bus().id;

    let mut p_g = Vec::with_capacity(layout.generators.len());
    for &g in &layout.generators {
        let gen = &net.generators[g];
        if gen.bus == slack {
            p_g.push(gen.p_out);
        } else {
            check_range(&format!("P_G{}", g + 1), gen.p_min, gen.p_max)?;
            p_g.push(uniform(rng, gen.p_min, gen.p_max));
        }
    }
    let v_setpoints = layout
        .voltage_buses
        .iter()
        .map(|_| uniform(rng, ranges.u_min, ranges.u_max))
        .collect();
    let taps = layout
        .transformers
        .iter()
        .map(|_| taps[rng.random_range(0..taps.len())])
        .collect();
    let q_c = layout
        .capacitors
        .iter()
        .map(|_| qc[rng.random_range(0..qc.len())] * net.base_mva)
        .collect();
    Ok(ControlVector {
        p_g,
        v_setpoints,
        taps,
        q_c,
    })
}

/// Copy of `net` with the controls imposed.
pub fn apply_controls(
    net: &Network,
    layout: &FeatureLayout,
    controls: &ControlVector,
) -> Result<Network, ScenarioError> {
    let check = |what, expected: usize, got: usize| {
        if expected == got {
            Ok(())
        } else {
            Err(ScenarioError::DimensionMismatch { what, expected, got })
        }
    };
    check("p_g", layout.generators.len(), controls.p_g.len())?;
    check("v_setpoints", layout.voltage_buses.len(), controls.v_setpoints.len())?;
    check("taps", layout.transformers.len(), controls.taps.len())?;
    check("q_c", layout.capacitors.len(), controls.q_c.len())?;

    let mut out = net.clone();
    let slack = net.slack_bus().id;
    for (&g, &p) in layout.generators.iter().zip(&controls.p_g) {
        if out.generators[g].bus != slack {
            out.generators[g].p_out = p;
        }
    }
    for (bus, &v) in layout.voltage_buses.iter().zip(&controls.v_setpoints) {
        for g in out.generators.iter_mut().filter(|g| g.bus == *bus) {
            g.v_setpoint = v;
        }
    }
    for (&k, &t) in layout.transformers.iter().zip(&controls.taps) {
        out.branches[k].tap = t;
    }
    for (&c, &q) in layout.capacitors.iter().zip(&controls.q_c) {
        out.shunt_capacitors[c].q_switched = q;
    }
    Ok(out)
}

/// Pre-contingency operating state: the imposed controls plus the generator
/// outputs of the intact network's load flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub load_factor: f64,
    pub controls: ControlVector,
    /// MW per generator in layout order, slack output as solved.
    pub gen_p: Vec<f64>,
    /// MVAr per generator in layout order, as solved.
    pub gen_q: Vec<f64>,
}

/// Scaled, controlled network and its solved intact state.
#[derive(Debug, Clone)]
pub struct PreparedPoint {
    pub network: Network,
    pub point: OperatingPoint,
}

pub fn prepare_point(
    base: &Network,
    layout: &FeatureLayout,
    load_factor: f64,
    controls: &ControlVector,
    opts: &SolverOptions,
) -> Result<PreparedPoint, ScenarioError> {
    let network = apply_controls(&base.scale_loads(load_factor)?, layout, controls)?;
    let sol = solve_nr(&network, opts)?;
    if !sol.converged {
        return Err(ScenarioError::Unconverged(format!(
            "intact network at load factor {load_factor}, mismatch {:.3e}",
            sol.max_mismatch
        )));
    }
    let pick = |v: &[f64]| layout.generators.iter().map(|&g| v[g]).collect::<Vec<_>>();
    let point = OperatingPoint {
        load_factor,
        controls: controls.clone(),
        gen_p: pick(&sol.gen_p),
        gen_q: pick(&sol.gen_q),
    };
    Ok(PreparedPoint { network, point })
}

/// Oracle value: load flow with `outage` removed, then the security index.
pub fn outage_index(
    prepared: &Network,
    outage: usize,
    limits: &SecurityLimits,
    opts: &SolverOptions,
) -> Result<f64, ScenarioError> {
    let mut net = prepared.clone();
    net.branches[outage].in_service = false;
    let sol = solve_nr(&net, opts)?;
    if !sol.converged {
        return Err(ScenarioError::Unconverged(format!(
            "outage of {}, mismatch {:.3e}",
            contingency_label(outage),
            sol.max_mismatch
        )));
    }
    Ok(security_index(&sol, limits)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub samples_per_contingency: usize,
    pub load_min: f64,
    pub load_max: f64,
    pub ranges: ControlRanges,
    /// Extra draws allowed per sample slot after a failed solve.
    pub retry_budget: usize,
    pub test_fraction: f64,
    pub limits: LimitConfig,
    pub solver: SolverOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            samples_per_contingency: 50,
            load_min: 0.5,
            load_max: 1.5,
            ranges: ControlRanges::default(),
            retry_budget: 10,
            test_fraction: 0.2,
            limits: LimitConfig::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.samples_per_contingency == 0 {
            return Err(ScenarioError::NoSamples);
        }
        check_range("load factor", self.load_min, self.load_max)?;
        if !(self.load_min > 0.0) {
            return Err(ScenarioError::InvalidRange {
                what: "load factor".into(),
                min: self.load_min,
                max: self.load_max,
            });
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(ScenarioError::InvalidRange {
                what: "test_fraction".into(),
                min: self.test_fraction,
                max: 1.0,
            });
        }
        self.ranges.validate()?;
        self.limits.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub slot: usize,
    /// Outage branch index.
    pub contingency: usize,
    pub load_factor: f64,
    /// Empty when no draw converged.
    pub features: Vec<f64>,
    pub response: Option<f64>,
    pub converged: bool,
    pub attempts: usize,
}

/// Per-slot random stream, independent of execution order.
pub fn slot_rng(seed: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot);
    rng
}

const SPLIT_STREAM: u64 = u64::MAX;

struct Generation<'a> {
    net: &'a Network,
    layout: &'a FeatureLayout,
    limits: &'a SecurityLimits,
    contingencies: &'a [Contingency],
    cfg: &'a DatasetConfig,
    seed: u64,
}

impl Generation<'_> {
    fn slot(&self, slot: usize) -> Result<(Sample, Option<String>), ScenarioError> {
        let c = &self.contingencies[slot % self.contingencies.len()];
        let mut rng = slot_rng(self.seed, slot as u64);
        let mut last = String::new();
        let mut load_factor = self.cfg.load_min;
        for attempt in 1..=self.cfg.retry_budget + 1 {
            load_factor = uniform(&mut rng, self.cfg.load_min, self.cfg.load_max);
            let controls = sample_controls(self.net, self.layout, &self.cfg.ranges, &mut rng)?;
            let outcome = prepare_point(self.net, self.layout, load_factor, &controls, &self.cfg.solver)
                .and_then(|p| {
                    let pi = outage_index(&p.network, c.outage_branch, self.limits, &self.cfg.solver)?;
                    Ok((p.point, pi))
                });
            match outcome {
                Ok((point, pi)) => {
                    return Ok((
                        Sample {
                            slot,
                            contingency: c.id,
                            load_factor,
                            features: self.layout.features(&point, c.outage_branch),
                            response: Some(pi),
                            converged: true,
                            attempts: attempt,
                        },
                        None,
                    ))
                }
                Err(e) => last = e.to_string(),
            }
        }
        log::debug!("slot {slot} ({}): gave up: {last}", c.label());
        Ok((
            Sample {
                slot,
                contingency: c.id,
                load_factor,
                features: Vec::new(),
                response: None,
                converged: false,
                attempts: self.cfg.retry_budget + 1,
            },
            Some(last),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub seed: u64,
    pub config: DatasetConfig,
    pub layout: FeatureLayout,
    pub feature_names: Vec<String>,
    pub network_fingerprint: String,
    pub contingencies: Vec<Contingency>,
    pub samples: Vec<Sample>,
    pub split: Split,
}

/// Shuffled split of the converged samples; `|test| = round(fraction * n)`.
pub fn split_indices(samples: &[Sample], fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.converged)
        .map(|(i, _)| i)
        .collect();
    let mut rng = slot_rng(seed, SPLIT_STREAM);
    idx.shuffle(&mut rng);
    let n_test = (fraction * idx.len() as f64).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Split { train, test }
}

/// Draws `samples_per_contingency` samples for every enumerated contingency,
/// sample slot `j` covering contingency `j mod n`.
pub fn generate_dataset(
    net: &Network,
    cfg: &DatasetConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainingSet, ScenarioError> {
    cfg.validate()?;
    let contingencies = enumerate_contingencies(net);
    if contingencies.is_empty() {
        return Err(ScenarioError::NoContingencies);
    }
    let layout = FeatureLayout::for_network(net);
    let limits = default_limits(net, &cfg.limits);
    let total = cfg.samples_per_contingency * contingencies.len();
    let gen = Generation {
        net,
        layout: &layout,
        limits: &limits,
        contingencies: &contingencies,
        cfg,
        seed,
    };
    let results = map_indexed(total, exec, |slot| gen.slot(slot));
    let mut samples = Vec::with_capacity(total);
    let mut last_failure = None;
    for r in results {
        let (s, failure) = r?;
        if failure.is_some() {
            last_failure = failure;
        }
        samples.push(s);
    }
    let converged = samples.iter().filter(|s| s.converged).count();
    if converged == 0 {
        return Err(ScenarioError::NothingConverged {
            attempts: total * (cfg.retry_budget + 1),
            last: last_failure.unwrap_or_default(),
        });
    }
    if converged < total {
        log::warn!("{} of {total} sample slots exhausted their retry budget", total - converged);
    }
    let retried: usize = samples.iter().map(|s| s.attempts - 1).sum();
    log::info!("generated {total} samples ({converged} converged, {retried} retries)");
    let split = split_indices(&samples, cfg.test_fraction, seed);
    Ok(TrainingSet {
        seed,
        config: cfg.clone(),
        feature_names: layout.names(net),
        layout,
        network_fingerprint: net.fingerprint(),
        contingencies,
        samples,
        split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    schema_version: u32,
    seed: u64,
    config: DatasetConfig,
    network_fingerprint: String,
    layout_fingerprint: String,
    layout: FeatureLayout,
    feature_names: Vec<String>,
    contingencies: Vec<Contingency>,
    counts: BTreeMap<String, usize>,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
}

impl TrainingSet {
    pub fn layout_fingerprint(&self) -> String {
        self.layout.fingerprint()
    }

    pub fn converged(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.converged)
    }

    pub fn contingency(&self, id: usize) -> Option<&Contingency> {
        self.contingencies.iter().find(|c| c.id == id)
    }

    pub fn check_network(&self, net: &Network) -> Result<(), ScenarioError> {
        let found = net.fingerprint();
        if found != self.network_fingerprint {
            return Err(ScenarioError::FingerprintMismatch {
                expected: self.network_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    /// One row per sample: slot, contingency, load factor, features, index,
    /// convergence flag, draw count.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["slot", "contingency", "load_factor"];
        header.extend(self.feature_names.iter().map(String::as_str));
        header.extend(["pi_c", "converged", "attempts"]);
        w.write_record(&header).expect("in-memory write");
        let width = self.layout.len();
        for s in &self.samples {
            let mut rec = Vec::with_capacity(width + 6);
            rec.push(s.slot.to_string());
            rec.push(contingency_label(s.contingency));
            rec.push(s.load_factor.to_string());
            if s.features.is_empty() {
                rec.extend(std::iter::repeat_n(String::new(), width));
            } else {
                rec.extend(s.features.iter().map(f64::to_string));
            }
            rec.push(s.response.map(|v| v.to_string()).unwrap_or_default());
            rec.push(s.converged.to_string());
            rec.push(s.attempts.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn sidecar_json(&self, created_unix: Option<u64>) -> String {
        let converged = self.converged().count();
        let counts = BTreeMap::from([
            ("samples".to_string(), self.samples.len()),
            ("converged".to_string(), converged),
            ("unconverged".to_string(), self.samples.len() - converged),
            ("train".to_string(), self.split.train.len()),
            ("test".to_string(), self.split.test.len()),
        ]);
        let side = Sidecar {
            schema_version: DATASET_SCHEMA_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            network_fingerprint: self.network_fingerprint.clone(),
            layout_fingerprint: self.layout_fingerprint(),
            layout: self.layout.clone(),
            feature_names: self.feature_names.clone(),
            contingencies: self.contingencies.clone(),
            counts,
            split: self.split.clone(),
            created_unix,
        };
        serde_json::to_string_pretty(&side).expect("sidecar serializes")
    }

    pub fn from_parts(csv_text: &str, sidecar: &str) -> Result<Self, ScenarioError> {
        let fmt = |e: &dyn std::fmt::Display| ScenarioError::Format(e.to_string());
        let side: Sidecar = serde_json::from_str(sidecar).map_err(|e| fmt(&e))?;
        if side.schema_version != DATASET_SCHEMA_VERSION {
            return Err(ScenarioError::Format(format!(
                "schema version {} (expected {DATASET_SCHEMA_VERSION})",
                side.schema_version
            )));
        }
        if side.layout.fingerprint() != side.layout_fingerprint {
            return Err(ScenarioError::Format("layout fingerprint does not match layout".into()));
        }
        let width = side.layout.len();
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let header = rdr.headers().map_err(|e| fmt(&e))?.clone();
        if header.len() != width + 6 {
            return Err(ScenarioError::DimensionMismatch {
                what: "csv columns",
                expected: width + 6,
                got: header.len(),
            });
        }
        let num = |s: &str, row: usize| -> Result<f64, ScenarioError> {
            s.parse::<f64>()
                .map_err(|_| ScenarioError::Format(format!("row {row}: bad number {s:?}")))
        };
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| fmt(&e))?;
            let slot = rec[0].parse::<usize>().map_err(|e| fmt(&e))?;
            let contingency = rec[1]
                .strip_prefix('L')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .ok_or_else(|| ScenarioError::Format(format!("row {row}: bad contingency {:?}", &rec[1])))?
                - 1;
            let load_factor = num(&rec[2], row)?;
            let converged = match &rec[width + 4] {
                "true" => true,
                "false" => false,
                other => return Err(ScenarioError::Format(format!("row {row}: bad flag {other:?}"))),
            };
            let features = if converged {
                (3..3 + width).map(|i| num(&rec[i], row)).collect::<Result<Vec<_>, _>>()?
            } else {
                Vec::new()
            };
            let response = match &rec[width + 3] {
                "" => None,
                s => Some(num(s, row)?),
            };
            let attempts = rec[width + 5].parse::<usize>().map_err(|e| fmt(&e))?;
            samples.push(Sample {
                slot,
                contingency,
                load_factor,
                features,
                response,
                converged,
                attempts,
            });
        }
        let n = samples.len();
        if side.split.train.iter().chain(&side.split.test).any(|&i| i >= n) {
            return Err(ScenarioError::Format("split index out of range".into()));
        }
        Ok(TrainingSet {
            seed: side.seed,
            config: side.config,
            layout: side.layout,
            feature_names: side.feature_names,
            network_fingerprint: side.network_fingerprint,
            contingencies: side.contingencies,
            samples,
            split: side.split,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{cases, parse_case};

    fn ieee14() -> Network {
        parse_case(cases::IEEE14).unwrap()
    }

    #[test]
    fn fourteen_bus_contingencies() {
        let net = ieee14();
        let cs = enumerate_contingencies(&net);
        assert_eq!(cs.len(), 19);
        assert!(!cs.iter().any(|c| (c.from, c.to) == (7, 8)));
        assert!(cs.iter().all(|c| !c.islanding));
        assert_eq!(radial_branches(&net).len(), 1);
    }

    #[test]
    fn tap_grid_has_seventeen_values() {
        let g = grid("T", 0.9, 1.1, 0.0125).unwrap();
        assert_eq!(g.len(), 17);
        assert!(g.iter().any(|v| (v - 1.025).abs() < 1e-12));
        assert!(g.iter().any(|v| (v - 1.075).abs() < 1e-12));
        assert!((g[16] - 1.1).abs() < 1e-12);
        assert_eq!(grid("Q_C", 0.0, 0.5, 0.01).unwrap().len(), 51);
        assert_eq!(grid("x", 0.3, 0.3, 0.1).unwrap(), vec![0.3]);
        assert!(matches!(grid("x", 0.0, 1.0, 0.0), Err(ScenarioError::EmptyGrid { .. })));
        assert!(matches!(grid("x", 1.0, 0.0, 0.1), Err(ScenarioError::EmptyGrid { .. })));
    }

    #[test]
    fn controls_stay_on_range_and_grid() {
        let net = ieee14();
        let layout = FeatureLayout::for_network(&net);
        let ranges = ControlRanges::default();
        let taps = grid("T", 0.9, 1.1, 0.0125).unwrap();
        let mut rng = slot_rng(9, 0);
        for _ in 0..200 {
            let c = sample_controls(&net, &layout, &ranges, &mut rng).unwrap();
            for (&g, &p) in layout.generators.iter().zip(&c.p_g) {
                let gen = &net.generators[g];
                assert!(p >= gen.p_min && p <= gen.p_max);
            }
            assert!(c.v_setpoints.iter().all(|v| (0.95..=1.05).contains(v)));
            assert!(c.taps.iter().all(|t| taps.contains(t)));
            for q in &c.q_c {
                let steps = q / 1.0;
                assert!((steps - steps.round()).abs() < 1e-9 && (0.0..=50.0).contains(q));
            }
        }
    }

    #[test]
    fn voltage_draws_are_uniform() {
        let mut rng = slot_rng(1, 0);
        let draws: Vec<f64> = (0..10_000).map(|_| uniform(&mut rng, 0.95, 1.05)).collect();
        let min = draws.iter().copied().fold(f64::INFINITY, f64::min);
        let max = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = draws.iter().sum::<f64>() / 1e4;
        let sigma = 0.1 / 12f64.sqrt() / 100.0;
        assert!(min >= 0.95 && max <= 1.05);
        assert!((mean - 1.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn degenerate_range_is_constant() {
        let mut net = ieee14();
        net.generators[1].p_min = 25.0;
        net.generators[1].p_max = 25.0;
        let layout = FeatureLayout::for_network(&net);
        let ranges = ControlRanges {
            u_min: 1.01,
            u_max: 1.01,
            ..Default::default()
        };
        let c = sample_controls(&net, &layout, &ranges, &mut slot_rng(0, 0)).unwrap();
        assert_eq!(c.p_g[1], 25.0);
        assert!(c.v_setpoints.iter().all(|&v| v == 1.01));
    }

    #[test]
    fn layout_shape() {
        let net = ieee14();
        let layout = FeatureLayout::for_network(&net);
        // 5 P_G, 5 Q_G, 5 U, 3 T, 1 Q_C, 20 L
        assert_eq!(layout.len(), 39);
        let names = layout.names(&net);
        assert_eq!(names[0], "P_G1@1");
        assert_eq!(names[10], "U@1");
        assert_eq!(names[18], "Q_C1@9");
        assert_eq!(names[19], "L1");
        assert_eq!(layout.fingerprint(), FeatureLayout::for_network(&net).fingerprint());
    }

    #[test]
    fn features_flag_only_the_outage() {
        let net = ieee14();
        let layout = FeatureLayout::for_network(&net);
        let controls = ControlVector::from_network(&net, &layout);
        let p = prepare_point(&net, &layout, 1.0, &controls, &SolverOptions::default()).unwrap();
        let f = layout.features(&p.point, 4);
        let flags = &f[19..];
        assert_eq!(flags.iter().filter(|&&x| x == 0.0).count(), 1);
        assert_eq!(flags[4], 0.0);
        let (back, outage) = layout.decode(1.0, &f).unwrap();
        assert_eq!(outage, Some(4));
        let mut expected = p.point.clone();
        // the slack entry decodes to its solved output
        expected.controls.p_g[0] = expected.gen_p[0];
        assert_eq!(back, expected);
    }

    #[test]
    fn small_dataset_is_deterministic_and_split() {
        let net = ieee14();
        let cfg = DatasetConfig {
            samples_per_contingency: 2,
            ..Default::default()
        };
        let a = generate_dataset(&net, &cfg, 42, Execution::Sequential).unwrap();
        let b = generate_dataset(&net, &cfg, 42, Execution::Parallel { jobs: 3 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 38);
        let conv = a.converged().count();
        assert_eq!(a.split.test.len(), (0.2 * conv as f64).round() as usize);
        assert_eq!(a.split.train.len() + a.split.test.len(), conv);
        assert!(a.split.train.iter().all(|i| !a.split.test.contains(i)));
        for s in a.converged() {
            let zeros = s.features[19..].iter().filter(|&&x| x == 0.0).count();
            assert_eq!(zeros, 1);
        }
        let c = generate_dataset(&net, &cfg, 43, Execution::Sequential).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn csv_round_trip() {
        let net = ieee14();
        let cfg = DatasetConfig {
            samples_per_contingency: 1,
            ..Default::default()
        };
        let mut set = generate_dataset(&net, &cfg, 5, Execution::Sequential).unwrap();
        set.samples[3].converged = false;
        set.samples[3].features.clear();
        set.samples[3].response = None;
        set.split = split_indices(&set.samples, 0.2, 5);
        let csv = set.to_csv();
        let side = set.sidecar_json(None);
        let back = TrainingSet::from_parts(&csv, &side).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_csv(), csv);
        assert!(back.check_network(&net).is_ok());
        let mut other = net.clone();
        other.buses[3].p_load += 1.0;
        assert!(matches!(back.check_network(&other), Err(ScenarioError::FingerprintMismatch { .. })));
    }

    #[test]
    fn zero_samples_rejected() {
        let cfg = DatasetConfig {
            samples_per_contingency: 0,
            ..Default::default()
        };
        assert_eq!(
            generate_dataset(&ieee14(), &cfg, 1, Execution::Sequential).unwrap_err(),
            ScenarioError::NoSamples
        );
    }
}
