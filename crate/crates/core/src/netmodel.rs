//! Network model and case-file parsing.
//!
//! Reads the MATPOWER-style steady-state case format (`mpc.baseMVA`,
//! `mpc.bus`, `mpc.gen`, `mpc.branch`). Other tables are skipped with a
//! warning. Buses with a positive fixed shunt susceptance are modelled as
//! switchable capacitors so the sampler can adjust them.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// MW
    pub p_load: f64,
    /// MVAr
    pub q_load: f64,
    /// MW consumed at 1 p.u. voltage
    pub g_shunt: f64,
    /// MVAr injected at 1 p.u. voltage (fixed part only)
    pub b_shunt: f64,
    pub v_mag: f64,
    /// degrees
    pub v_ang: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    /// Off-nominal turns ratio; 1.0 for lines.
    pub tap: f64,
    /// degrees
    pub shift: f64,
    /// MW; `None` when the case carries no rating (never overloaded).
    pub flow_security_limit: Option<f64>,
    pub in_service: bool,
    pub transformer: bool,
}

impl Branch {
    /// Security limit in MW, `+inf` when unrated.
    pub fn security_limit_mw(&self) -> f64 {
        self.flow_security_limit.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    pub p_out: f64,
    pub q_out: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuntCapacitor {
    pub bus: BusId,
    /// MVAr at 1 p.u.
    pub q_switched: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub shunt_capacitors: Vec<ShuntCapacitor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Bus,
    Gen,
    Branch,
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Table::Bus => "bus",
            Table::Gen => "gen",
            Table::Branch => "branch",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("missing baseMVA")]
    MissingBaseMva,
    #[error("missing table mpc.{0}")]
    MissingTable(Table),
    #[error("malformed value in table {table}, row {row}, column {column}: {text:?}")]
    Malformed {
        table: Table,
        row: usize,
        column: usize,
        text: String,
    },
    #[error("table {table}, row {row}: expected at least {expected} columns, found {found}")]
    TooFewColumns {
        table: Table,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("table {table}, row {row}, column {column}: invalid value {value} ({reason})")]
    InvalidValue {
        table: Table,
        row: usize,
        column: usize,
        value: f64,
        reason: &'static str,
    },
    #[error("table {table}, row {row}, column {column}: unknown bus {bus}")]
    DanglingBus {
        table: Table,
        row: usize,
        column: usize,
        bus: BusId,
    },
    #[error("no slack bus")]
    NoSlack,
    #[error("multiple slack buses: {0:?}")]
    MultipleSlack(Vec<BusId>),
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("load scaling factor must be positive, got {0}")]
    NonPositiveFactor(f64),
}

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

/// Default capacitor step and upper bound, in p.u. on the system base.
const CAP_STEP_PU: f64 = 0.01;
const CAP_MAX_PU: f64 = 0.5;

struct RawTable {
    rows: Vec<Vec<String>>,
}

/// Splits the case text into `name -> rows` for every `mpc.<name> = [ ... ];`
/// matrix, plus scalar assignments.
fn scan(text: &str) -> (HashMap<String, RawTable>, HashMap<String, String>) {
    let mut tables = HashMap::new();
    let mut scalars = HashMap::new();
    let mut current: Option<(String, Vec<Vec<String>>)> = None;
    let mut skipping_cell = false;

    for raw_line in text.lines() {
        let line = match raw_line.find('%') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if skipping_cell {
            if line.contains('}') {
                skipping_cell = false;
            }
            continue;
        }
        if let Some((_, rows)) = current.as_mut() {
            let (body, done) = match line.find(']') {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            for chunk in body.split(';') {
                let cells: Vec<String> = chunk
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                if !cells.is_empty() {
                    rows.push(cells);
                }
            }
            if done {
                let (name, rows) = current.take().expect("open table");
                tables.insert(name, RawTable { rows });
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some((name, value)) = rest.split_once('=') else {
            continue;
        };
        let name = name.trim().to_string();
        let value = value.trim();
        if let Some(body) = value.strip_prefix('[') {
            let mut rows = Vec::new();
            let (body, done) = match body.find(']') {
                Some(pos) => (&body[..pos], true),
                None => (body, false),
            };
            for chunk in body.split(';') {
                let cells: Vec<String> = chunk
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                if !cells.is_empty() {
                    rows.push(cells);
                }
            }
            if done {
                tables.insert(name, RawTable { rows });
            } else {
                current = Some((name, rows));
            }
        } else if value.starts_with('{') {
            log::warn!("ignoring cell array mpc.{name}");
            skipping_cell = !value.contains('}');
        } else {
            scalars.insert(name, value.trim_end_matches(';').trim().to_string());
        }
    }
    (tables, scalars)
}

fn number(table: Table, row: usize, column: usize, text: &str) -> Result<f64, NetError> {
    let parsed = match text {
        "Inf" | "inf" => Ok(f64::INFINITY),
        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
        _ => text.parse::<f64>(),
    };
    parsed.map_err(|_| NetError::Malformed {
        table,
        row,
        column,
        text: text.to_string(),
    })
}

fn numeric_rows(table: Table, raw: &RawTable, min_cols: usize) -> Result<Vec<Vec<f64>>, NetError> {
    raw.rows
        .iter()
        .enumerate()
        .map(|(i, cells)| {
            let row = i + 1;
            if cells.len() < min_cols {
                return Err(NetError::TooFewColumns {
                    table,
                    row,
                    expected: min_cols,
                    found: cells.len(),
                });
            }
            cells
                .iter()
                .enumerate()
                .map(|(j, c)| number(table, row, j + 1, c))
                .collect()
        })
        .collect()
}

fn bus_id(table: Table, row: usize, column: usize, value: f64) -> Result<BusId, NetError> {
    if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(NetError::InvalidValue {
            table,
            row,
            column,
            value,
            reason: "bus id must be a positive integer",
        });
    }
    Ok(value as BusId)
}

/// Parses case-file text into a validated [`Network`].
pub fn parse_case(text: &str) -> Result<Network, NetError> {
    let (mut tables, scalars) = scan(text);

    let base_mva = scalars
        .get("baseMVA")
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| *v > 0.0)
        .ok_or(NetError::MissingBaseMva)?;

    let bus_rows = tables.remove("bus").ok_or(NetError::MissingTable(Table::Bus))?;
    let gen_rows = tables.remove("gen").ok_or(NetError::MissingTable(Table::Gen))?;
    let branch_rows = tables
        .remove("branch")
        .ok_or(NetError::MissingTable(Table::Branch))?;
    let mut ignored: Vec<_> = tables.keys().cloned().collect();
    ignored.sort();
    for name in ignored {
        log::warn!("ignoring table mpc.{name}");
    }

    let bus_rows = numeric_rows(Table::Bus, &bus_rows, BUS_COLS)?;
    let gen_rows = numeric_rows(Table::Gen, &gen_rows, GEN_COLS)?;
    let branch_rows = numeric_rows(Table::Branch, &branch_rows, BRANCH_COLS)?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut seen = HashSet::new();
    for (i, r) in bus_rows.iter().enumerate() {
        let row = i + 1;
        let id = bus_id(Table::Bus, row, 1, r[0])?;
        if !seen.insert(id) {
            return Err(NetError::DuplicateBus(id));
        }
        let kind = match r[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            _ => {
                return Err(NetError::InvalidValue {
                    table: Table::Bus,
                    row,
                    column: 2,
                    value: r[1],
                    reason: "bus type must be 1, 2 or 3",
                })
            }
        };
        let v_mag = r[7];
        if !(v_mag > 0.0) {
            return Err(NetError::InvalidValue {
                table: Table::Bus,
                row,
                column: 8,
                value: v_mag,
                reason: "voltage magnitude must be positive",
            });
        }
        buses.push(Bus {
            id,
            kind,
            p_load: r[2],
            q_load: r[3],
            g_shunt: r[4],
            b_shunt: r[5],
            v_mag,
            v_ang: r[8],
            base_kv: r[9],
        });
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for (i, r) in gen_rows.iter().enumerate() {
        let row = i + 1;
        let bus = bus_id(Table::Gen, row, 1, r[0])?;
        if !seen.contains(&bus) {
            return Err(NetError::DanglingBus {
                table: Table::Gen,
                row,
                column: 1,
                bus,
            });
        }
        if r[7] <= 0.0 {
            log::warn!("generator row {row} at bus {bus} is out of service; skipped");
            continue;
        }
        let (p_min, p_max) = (r[9], r[8]);
        if p_min > p_max {
            return Err(NetError::InvalidValue {
                table: Table::Gen,
                row,
                column: 10,
                value: p_min,
                reason: "Pmin exceeds Pmax",
            });
        }
        let (q_min, q_max) = (r[4], r[3]);
        if q_min > q_max {
            return Err(NetError::InvalidValue {
                table: Table::Gen,
                row,
                column: 5,
                value: q_min,
                reason: "Qmin exceeds Qmax",
            });
        }
        generators.push(Generator {
            bus,
            p_out: r[1],
            q_out: r[2],
            p_min,
            p_max,
            q_min,
            q_max,
            v_setpoint: r[5],
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (i, r) in branch_rows.iter().enumerate() {
        let row = i + 1;
        let from_bus = bus_id(Table::Branch, row, 1, r[0])?;
        let to_bus = bus_id(Table::Branch, row, 2, r[1])?;
        for (column, bus) in [(1, from_bus), (2, to_bus)] {
            if !seen.contains(&bus) {
                return Err(NetError::DanglingBus {
                    table: Table::Branch,
                    row,
                    column,
                    bus,
                });
            }
        }
        if from_bus == to_bus {
            return Err(NetError::InvalidValue {
                table: Table::Branch,
                row,
                column: 2,
                value: r[1],
                reason: "branch connects a bus to itself",
            });
        }
        if r[2] == 0.0 && r[3] == 0.0 {
            return Err(NetError::InvalidValue {
                table: Table::Branch,
                row,
                column: 4,
                value: 0.0,
                reason: "zero series impedance",
            });
        }
        let rating = r[5];
        if rating < 0.0 {
            return Err(NetError::InvalidValue {
                table: Table::Branch,
                row,
                column: 6,
                value: rating,
                reason: "negative rating",
            });
        }
        let ratio = r[8];
        let transformer = ratio != 0.0 && ratio != 1.0;
        branches.push(Branch {
            from_bus,
            to_bus,
            r: r[2],
            x: r[3],
            b_charging: r[4],
            tap: if ratio == 0.0 { 1.0 } else { ratio },
            shift: r[9],
            flow_security_limit: (rating > 0.0).then_some(rating),
            in_service: r[10] > 0.0,
            transformer,
        });
    }

    // A voltage-controlled bus needs at least one in-service unit.
    let gen_buses: HashSet<BusId> = generators.iter().map(|g| g.bus).collect();
    for bus in &mut buses {
        if bus.kind == BusKind::Pv && !gen_buses.contains(&bus.id) {
            log::warn!("bus {} is PV without an in-service generator; treated as PQ", bus.id);
            bus.kind = BusKind::Pq;
        }
    }
    let slacks: Vec<BusId> = buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    match slacks.len() {
        0 => return Err(NetError::NoSlack),
        1 => {}
        _ => return Err(NetError::MultipleSlack(slacks)),
    }

    let mut shunt_capacitors = Vec::new();
    for bus in &mut buses {
        if bus.b_shunt > 0.0 {
            shunt_capacitors.push(ShuntCapacitor {
                bus: bus.id,
                q_switched: bus.b_shunt,
                q_min: 0.0,
                q_max: (CAP_MAX_PU * base_mva).max(bus.b_shunt),
                step: CAP_STEP_PU * base_mva,
            });
            bus.b_shunt = 0.0;
        }
    }

    let net = Network {
        base_mva,
        buses,
        branches,
        generators,
        shunt_capacitors,
    };
    if !net.is_connected(None) {
        log::warn!("network is not connected over in-service branches");
    }
    Ok(net)
}

impl Network {
    /// Bus id to position in `buses`.
    pub fn bus_index(&self) -> HashMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_bus(&self) -> &Bus {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    /// Indices of branches flagged as transformers.
    pub fn transformer_indices(&self) -> Vec<usize> {
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.transformer)
            .map(|(i, _)| i)
            .collect()
    }

    /// Whether every bus is reachable over in-service branches, optionally
    /// ignoring one branch.
    pub fn is_connected(&self, without: Option<usize>) -> bool {
        let comps = self.components(without);
        comps.iter().all(|&c| c == comps[0])
    }

    /// Component label for each bus (by position) over in-service branches.
    pub fn components(&self, without: Option<usize>) -> Vec<usize> {
        let index = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for (k, br) in self.branches.iter().enumerate() {
            if !br.in_service || Some(k) == without {
                continue;
            }
            let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Returns a copy with every bus load multiplied by `factor`.
    pub fn scale_loads(&self, factor: f64) -> Result<Network, NetError> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(NetError::NonPositiveFactor(factor));
        }
        let mut out = self.clone();
        for bus in &mut out.buses {
            bus.p_load *= factor;
            bus.q_load *= factor;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("network serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Bundled IEEE test cases.
pub mod cases {
    pub const IEEE14: &str = include_str!("../cases/case14.m");
    pub const IEEE118: &str = include_str!("../cases/case118.m");
    pub const IEEE300: &str = include_str!("../cases/case300.m");

    /// Resolves `ieee14` / `ieee118` / `ieee300` to bundled case text.
    pub fn builtin(name: &str) -> Option<&'static str> {
        match name {
            "ieee14" | "case14" => Some(IEEE14),
            "ieee118" | "case118" => Some(IEEE118),
            "ieee300" | "case300" => Some(IEEE300),
            _ => None,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = "
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0 0 0 0 1 1.0 0 230 1 1.1 0.9;
    2 1 0 0 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 100 -100 1.0 100 1 200 0;
];
mpc.branch = [
    1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
";

    #[test]
    fn two_bus_counts() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(
            (net.buses.len(), net.branches.len(), net.generators.len()),
            (2, 1, 1)
        );
        assert_eq!(net.branches[0].tap, 1.0);
        assert!(!net.branches[0].transformer);
        assert_eq!(net.branches[0].flow_security_limit, None);
    }

    #[test]
    fn ieee14_shape() {
        let net = parse_case(cases::IEEE14).unwrap();
        assert_eq!(net.buses.len(), 14);
        assert_eq!(net.branches.len(), 20);
        assert_eq!(net.generators.len(), 5);
        assert_eq!(net.transformer_indices().len(), 3);
        assert_eq!(net.shunt_capacitors.len(), 1);
        assert_eq!(net.shunt_capacitors[0].bus, 9);
        assert_eq!(net.shunt_capacitors[0].q_switched, 19.0);
        let loads = net.buses.iter().filter(|b| b.p_load != 0.0).count();
        assert_eq!(loads, 11);
    }

    #[test]
    fn ieee14_load_sums_exact() {
        let net = parse_case(cases::IEEE14).unwrap();
        let p: f64 = net.buses.iter().map(|b| b.p_load).sum();
        let q: f64 = net.buses.iter().map(|b| b.q_load).sum();
        // Column sums of the bundled file, summed in the same order.
        let pd = [0.0, 21.7, 94.2, 47.8, 7.6, 11.2, 0.0, 0.0, 29.5, 9.0, 3.5, 6.1, 13.5, 14.9];
        let qd = [0.0, 12.7, 19.0, -3.9, 1.6, 7.5, 0.0, 0.0, 16.6, 5.8, 1.8, 1.6, 5.8, 5.0];
        assert_eq!(p, pd.iter().sum::<f64>());
        assert_eq!(q, qd.iter().sum::<f64>());
    }

    #[test]
    fn ieee300_shape() {
        let net = parse_case(cases::IEEE300).unwrap();
        assert_eq!(net.buses.len(), 300);
        assert_eq!(net.branches.len(), 411);
        assert_eq!(net.generators.len(), 69);
    }

    #[test]
    fn multiple_slack_rejected() {
        let text = TWO_BUS.replace("2 1 0 0 0 0 1 1.0", "2 3 0 0 0 0 1 1.0");
        assert_eq!(parse_case(&text), Err(NetError::MultipleSlack(vec![1, 2])));
        assert_eq!(
            parse_case(&text).unwrap_err().to_string(),
            "multiple slack buses: [1, 2]"
        );
    }

    #[test]
    fn no_slack_rejected() {
        let text = TWO_BUS.replace("1 3 0 0 0 0 1 1.0", "1 1 0 0 0 0 1 1.0");
        assert_eq!(parse_case(&text), Err(NetError::NoSlack));
    }

    #[test]
    fn dangling_branch_reference() {
        let text = TWO_BUS.replace("1 2 0 0.1", "1 7 0 0.1");
        assert_eq!(
            parse_case(&text),
            Err(NetError::DanglingBus {
                table: Table::Branch,
                row: 1,
                column: 2,
                bus: 7
            })
        );
    }

    #[test]
    fn malformed_cell_names_position() {
        let text = TWO_BUS.replace("2 1 0 0 0 0 1 1.0 0 230", "2 1 0 x 0 0 1 1.0 0 230");
        match parse_case(&text) {
            Err(NetError::Malformed { table, row, column, .. }) => {
                assert_eq!((table, row, column), (Table::Bus, 2, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_table() {
        let text = TWO_BUS.replace("mpc.gen", "mpc.gencost");
        assert_eq!(parse_case(&text), Err(NetError::MissingTable(Table::Gen)));
    }

    #[test]
    fn short_row() {
        let text = TWO_BUS.replace("1 2 0 0.1 0 0 0 0 0 0 1 -360 360", "1 2 0 0.1 0");
        assert!(matches!(
            parse_case(&text),
            Err(NetError::TooFewColumns { table: Table::Branch, row: 1, .. })
        ));
    }

    #[test]
    fn scale_loads_identity_and_factor() {
        let net = parse_case(cases::IEEE14).unwrap();
        assert_eq!(net.scale_loads(1.0).unwrap(), net);
        let light = net.scale_loads(0.8).unwrap();
        for (a, b) in light.buses.iter().zip(&net.buses) {
            assert_eq!(a.p_load, b.p_load * 0.8);
            assert_eq!(a.q_load, b.q_load * 0.8);
            assert_eq!(a.v_mag, b.v_mag);
        }
        assert_eq!(light.branches, net.branches);
        let heavy = net.scale_loads(1.1).unwrap();
        assert_eq!(heavy.buses[2].p_load, 94.2 * 1.1);
        assert_eq!(net.scale_loads(0.0), Err(NetError::NonPositiveFactor(0.0)));
        assert!(net.scale_loads(-1.0).is_err());
    }

    #[test]
    fn parse_is_deterministic() {
        let a = parse_case(cases::IEEE118).unwrap();
        let b = parse_case(cases::IEEE118).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    proptest::proptest! {
        #[test]
        fn scale_composes(a in 0.1f64..3.0, b in 0.1f64..3.0) {
            let net = parse_case(cases::IEEE14).unwrap();
            let two = net.scale_loads(a).unwrap().scale_loads(b).unwrap();
            let one = net.scale_loads(a * b).unwrap();
            for (x, y) in two.buses.iter().zip(&one.buses) {
                proptest::prop_assert!((x.p_load - y.p_load).abs() <= 1e-12 * (1.0 + y.p_load.abs()));
                proptest::prop_assert!((x.q_load - y.q_load).abs() <= 1e-12 * (1.0 + y.q_load.abs()));
            }
        }
    }
}
