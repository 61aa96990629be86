//! Composite security index, operating-state classification and
//! contingency ranking.
//!
//! Each bus voltage and branch flow contributes a violation term that is 0
//! inside its alarm limit and grows linearly to 1 at its security limit.
//! The index is the 2n-norm of all terms.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::Network;
use crate::powerflow::FlowSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SecurityError {
    #[error("flow solution did not converge")]
    Unconverged,
    #[error("{what}: expected {expected} entries, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("security index must be non-negative, got {0}")]
    Negative(f64),
    #[error("security index is NaN for contingency {0}")]
    NotANumber(String),
    #[error("invalid limit configuration: {0}")]
    InvalidLimits(&'static str),
}

/// Fractions used to derive per-element limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitConfig {
    /// Nominal voltage, p.u.
    pub nominal: f64,
    /// Alarm band half-width as a fraction of nominal.
    pub voltage_alarm: f64,
    /// Security band half-width as a fraction of nominal.
    pub voltage_security: f64,
    /// Flow alarm limit as a fraction of the security limit.
    pub flow_alarm_fraction: f64,
    pub exponent_n: u32,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            nominal: 1.0,
            voltage_alarm: 0.05,
            voltage_security: 0.07,
            flow_alarm_fraction: 0.8,
            exponent_n: 2,
        }
    }
}

impl LimitConfig {
    pub fn validate(&self) -> Result<(), SecurityError> {
        if !(self.nominal > 0.0) {
            return Err(SecurityError::InvalidLimits("nominal voltage must be positive"));
        }
        if !(0.0 < self.voltage_alarm && self.voltage_alarm < self.voltage_security) {
            return Err(SecurityError::InvalidLimits(
                "voltage alarm band must be positive and inside the security band",
            ));
        }
        if !(self.voltage_security < 1.0) {
            return Err(SecurityError::InvalidLimits("voltage security band must be below 100%"));
        }
        if !(0.0 < self.flow_alarm_fraction && self.flow_alarm_fraction < 1.0) {
            return Err(SecurityError::InvalidLimits("flow alarm fraction must lie in (0, 1)"));
        }
        if self.exponent_n == 0 {
            return Err(SecurityError::InvalidLimits("exponent must be a positive integer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityLimits {
    pub v_alarm_max: Vec<f64>,
    pub v_alarm_min: Vec<f64>,
    pub v_security_max: Vec<f64>,
    pub v_security_min: Vec<f64>,
    /// MW, `None` for unrated branches.
    pub p_alarm: Vec<Option<f64>>,
    pub p_security: Vec<Option<f64>>,
    pub exponent_n: u32,
}

/// Uniform voltage bands around nominal and flow alarms at a fraction of
/// each branch rating.
pub fn default_limits(net: &Network, cfg: &LimitConfig) -> SecurityLimits {
    let n = net.buses.len();
    let v = |frac: f64| vec![cfg.nominal * (1.0 + frac); n];
    SecurityLimits {
        v_alarm_max: v(cfg.voltage_alarm),
        v_alarm_min: v(-cfg.voltage_alarm),
        v_security_max: v(cfg.voltage_security),
        v_security_min: v(-cfg.voltage_security),
        p_alarm: net
            .branches
            .iter()
            .map(|b| b.flow_security_limit.map(|ph| cfg.flow_alarm_fraction * ph))
            .collect(),
        p_security: net.branches.iter().map(|b| b.flow_security_limit).collect(),
        exponent_n: cfg.exponent_n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityState {
    Secure,
    Alarmed,
    Insecure,
}

impl fmt::Display for SecurityState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecurityState::Secure => "secure",
            SecurityState::Alarmed => "alarmed",
            SecurityState::Insecure => "insecure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PIcResult {
    pub value: f64,
    pub q_v_max: Vec<f64>,
    pub q_v_min: Vec<f64>,
    pub q_p: Vec<f64>,
    pub state: SecurityState,
}

/// `(Σ q^{2n})^{1/(2n)}`
pub fn composite_norm<'a>(terms: impl IntoIterator<Item = &'a f64>, exponent_n: u32) -> f64 {
    let power = 2 * exponent_n as i32;
    let sum: f64 = terms.into_iter().map(|q| q.powi(power)).sum();
    if sum == 0.0 {
        0.0
    } else {
        sum.powf(1.0 / power as f64)
    }
}

fn upper_violation(value: f64, alarm: f64, security: f64) -> f64 {
    if value > alarm {
        (value - alarm) / (security - alarm)
    } else {
        0.0
    }
}

/// Violation terms for magnitudes and active flows, plus their norm.
pub fn security_index(sol: &FlowSolution, lim: &SecurityLimits) -> Result<PIcResult, SecurityError> {
    if !sol.converged {
        return Err(SecurityError::Unconverged);
    }
    let nb = sol.v_mag.len();
    for (what, len) in [
        ("v_alarm_max", lim.v_alarm_max.len()),
        ("v_alarm_min", lim.v_alarm_min.len()),
        ("v_security_max", lim.v_security_max.len()),
        ("v_security_min", lim.v_security_min.len()),
    ] {
        if len != nb {
            return Err(SecurityError::DimensionMismatch { what, expected: nb, got: len });
        }
    }
    let nl = sol.branch_flows.len();
    if lim.p_alarm.len() != nl || lim.p_security.len() != nl {
        return Err(SecurityError::DimensionMismatch {
            what: "branch limits",
            expected: nl,
            got: lim.p_alarm.len().min(lim.p_security.len()),
        });
    }

    let q_v_max: Vec<f64> = (0..nb)
        .map(|i| upper_violation(sol.v_mag[i], lim.v_alarm_max[i], lim.v_security_max[i]))
        .collect();
    // Lower band mirrored: distance below the alarm limit over the band width.
    let q_v_min: Vec<f64> = (0..nb)
        .map(|i| upper_violation(-sol.v_mag[i], -lim.v_alarm_min[i], -lim.v_security_min[i]))
        .collect();
    let q_p: Vec<f64> = sol
        .branch_flows
        .iter()
        .enumerate()
        .map(|(j, flow)| match (lim.p_alarm[j], lim.p_security[j]) {
            (Some(pa), Some(ph)) if flow.in_service => upper_violation(flow.max_abs_p(), pa, ph),
            _ => 0.0,
        })
        .collect();

    let value = composite_norm(q_v_max.iter().chain(&q_v_min).chain(&q_p), lim.exponent_n);
    Ok(PIcResult {
        value,
        q_v_max,
        q_v_min,
        q_p,
        state: classify(value)?,
    })
}

/// 0 is secure, (0, 1] alarmed, above 1 insecure.
pub fn classify(pi_c: f64) -> Result<SecurityState, SecurityError> {
    if pi_c.is_nan() {
        return Err(SecurityError::NotANumber(String::new()));
    }
    if pi_c < 0.0 {
        return Err(SecurityError::Negative(pi_c));
    }
    Ok(if pi_c == 0.0 {
        SecurityState::Secure
    } else if pi_c <= 1.0 {
        SecurityState::Alarmed
    } else {
        SecurityState::Insecure
    })
}

/// One contingency to be ranked. `pi_c` is the ranking key; the optional
/// paired values are carried through to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    /// Outage branch index.
    pub id: usize,
    pub from: u32,
    pub to: u32,
    pub pi_c: f64,
    pub oracle: Option<f64>,
    pub predicted: Option<f64>,
}

impl RankEntry {
    pub fn new(id: usize, from: u32, to: u32, pi_c: f64) -> Self {
        Self { id, from, to, pi_c, oracle: None, predicted: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub contingency: String,
    pub id: usize,
    pub from: u32,
    pub to: u32,
    pub pi_c: f64,
    pub state: SecurityState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_err_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergedRow {
    pub contingency: String,
    pub id: usize,
    pub from: u32,
    pub to: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankingReport {
    pub rows: Vec<RankRow>,
    pub diverged: Vec<DivergedRow>,
}

/// Display label for an outage of branch `id` (1-based line number).
pub fn contingency_label(id: usize) -> String {
    format!("L{}", id + 1)
}

pub fn relative_error_pct(predicted: f64, oracle: f64) -> Option<f64> {
    (oracle != 0.0).then(|| (predicted - oracle) / oracle * 100.0)
}

/// Sorts by index descending, ties by outage id ascending.
pub fn rank_contingencies(entries: Vec<RankEntry>) -> Result<RankingReport, SecurityError> {
    let mut entries = entries;
    if let Some(bad) = entries.iter().find(|e| e.pi_c.is_nan()) {
        return Err(SecurityError::NotANumber(contingency_label(bad.id)));
    }
    entries.sort_by(|a, b| {
        b.pi_c
            .partial_cmp(&a.pi_c)
            .unwrap_or(Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    let rows = entries
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            Ok(RankRow {
                rank: k + 1,
                contingency: contingency_label(e.id),
                id: e.id,
                from: e.from,
                to: e.to,
                pi_c: e.pi_c,
                state: classify(e.pi_c)?,
                oracle: e.oracle,
                predicted: e.predicted,
                rel_err_pct: match (e.predicted, e.oracle) {
                    (Some(p), Some(o)) => relative_error_pct(p, o),
                    _ => None,
                },
            })
        })
        .collect::<Result<Vec<_>, SecurityError>>()?;
    Ok(RankingReport { rows, diverged: Vec::new() })
}

impl RankingReport {
    /// Alarmed and insecure rows, in rank order.
    pub fn screened(&self) -> impl Iterator<Item = &RankRow> {
        self.rows.iter().filter(|r| r.state != SecurityState::Secure)
    }

    fn paired(&self) -> bool {
        self.rows.iter().any(|r| r.oracle.is_some() || r.predicted.is_some())
    }

    pub fn to_csv(&self) -> String {
        let paired = self.paired();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rank", "contingency", "from", "to", "pi_c", "state"];
        if paired {
            header.extend(["oracle", "predicted", "rel_err_pct"]);
        }
        w.write_record(&header).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.rank.to_string(),
                r.contingency.clone(),
                r.from.to_string(),
                r.to.to_string(),
                r.pi_c.to_string(),
                r.state.to_string(),
            ];
            if paired {
                rec.extend([opt(r.oracle), opt(r.predicted), opt(r.rel_err_pct)]);
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerflow::BranchFlow;
    use proptest::prelude::*;

    fn solution(v: Vec<f64>, p: Vec<f64>) -> FlowSolution {
        FlowSolution {
            bus_ids: (1..=v.len() as u32).collect(),
            v_ang: vec![0.0; v.len()],
            p_inj: vec![0.0; v.len()],
            q_inj: vec![0.0; v.len()],
            v_mag: v,
            gen_p: vec![],
            gen_q: vec![],
            branch_flows: p
                .into_iter()
                .map(|x| BranchFlow { p_from: x, q_from: 0.0, p_to: -x, q_to: 0.0, in_service: true })
                .collect(),
            converged: true,
            iterations: 1,
            max_mismatch: 0.0,
        }
    }

    fn limits(nb: usize, ratings: Vec<Option<f64>>) -> SecurityLimits {
        let cfg = LimitConfig::default();
        SecurityLimits {
            v_alarm_max: vec![1.05; nb],
            v_alarm_min: vec![0.95; nb],
            v_security_max: vec![1.07; nb],
            v_security_min: vec![0.93; nb],
            p_alarm: ratings.iter().map(|r| r.map(|x| 0.8 * x)).collect(),
            p_security: ratings,
            exponent_n: cfg.exponent_n,
        }
    }

    #[test]
    fn defaults_from_network() {
        let net = crate::netmodel::parse_case(crate::netmodel::cases::IEEE14).unwrap();
        let mut net = net;
        net.branches[0].flow_security_limit = Some(100.0);
        let lim = default_limits(&net, &LimitConfig::default());
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        for i in 0..14 {
            assert!(close(lim.v_alarm_min[i], 0.95));
            assert!(close(lim.v_alarm_max[i], 1.05));
            assert!(close(lim.v_security_min[i], 0.93));
            assert!(close(lim.v_security_max[i], 1.07));
        }
        assert_eq!(lim.p_security[0], Some(100.0));
        assert_eq!(lim.p_alarm[0], Some(80.0));
        assert_eq!(lim.p_alarm[1], None);
    }

    #[test]
    fn all_within_alarm_is_secure() {
        let r = security_index(&solution(vec![0.96, 1.0, 1.04], vec![70.0]), &limits(3, vec![Some(100.0)])).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.state, SecurityState::Secure);
    }

    #[test]
    fn security_limit_gives_one() {
        let r = security_index(&solution(vec![1.07, 1.0], vec![]), &limits(2, vec![])).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert_eq!(r.state, SecurityState::Alarmed);
    }

    #[test]
    fn half_violation() {
        let r = security_index(&solution(vec![1.06, 1.0], vec![]), &limits(2, vec![])).unwrap();
        assert!((r.q_v_max[0] - 0.5).abs() < 1e-12);
        assert!((r.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bus_and_branch_at_security() {
        let r = security_index(&solution(vec![1.07, 1.0], vec![100.0]), &limits(2, vec![Some(100.0)])).unwrap();
        assert!((r.value - 2f64.powf(0.25)).abs() < 1e-12);
        assert!((r.value - 1.189207).abs() < 1e-6);
        assert_eq!(r.state, SecurityState::Insecure);
    }

    #[test]
    fn low_voltage_and_receiving_end() {
        let r = security_index(&solution(vec![0.94, 1.0], vec![]), &limits(2, vec![])).unwrap();
        assert!((r.q_v_min[0] - 0.5).abs() < 1e-12);
        let mut sol = solution(vec![1.0], vec![85.0]);
        sol.branch_flows[0].p_to = -90.0;
        let r = security_index(&sol, &limits(1, vec![Some(100.0)])).unwrap();
        assert!((r.q_p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unrated_never_violates() {
        let r = security_index(&solution(vec![1.0], vec![1e6]), &limits(1, vec![None])).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn unconverged_rejected() {
        let mut sol = solution(vec![1.0], vec![]);
        sol.converged = false;
        assert_eq!(security_index(&sol, &limits(1, vec![])), Err(SecurityError::Unconverged));
        assert!(matches!(
            security_index(&solution(vec![1.0], vec![]), &limits(2, vec![])),
            Err(SecurityError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn classification_boundaries() {
        assert_eq!(classify(0.0), Ok(SecurityState::Secure));
        assert_eq!(classify(0.5), Ok(SecurityState::Alarmed));
        assert_eq!(classify(1.0), Ok(SecurityState::Alarmed));
        assert_eq!(classify(1.0001), Ok(SecurityState::Insecure));
        assert_eq!(classify(f64::MIN_POSITIVE), Ok(SecurityState::Alarmed));
        assert_eq!(classify(-0.1), Err(SecurityError::Negative(-0.1)));
        assert!(classify(f64::NAN).is_err());
    }

    #[test]
    fn ranking_examples() {
        let rep = rank_contingencies(vec![
            RankEntry::new(5, 3, 4, 0.1470),
            RankEntry::new(12, 6, 13, 2.5532),
            RankEntry::new(16, 9, 14, 1.0499),
        ])
        .unwrap();
        let order: Vec<_> = rep.rows.iter().map(|r| r.contingency.as_str()).collect();
        assert_eq!(order, ["L13", "L17", "L6"]);
        assert_eq!(rep.rows[2].state, SecurityState::Alarmed);
        assert_eq!(rep.screened().count(), 3);

        let tied = rank_contingencies(vec![
            RankEntry::new(3, 1, 2, 0.5),
            RankEntry::new(1, 1, 2, 0.5),
            RankEntry::new(2, 1, 2, 0.5),
        ])
        .unwrap();
        assert_eq!(tied.rows.iter().map(|r| r.id).collect::<Vec<_>>(), [1, 2, 3]);

        let single = rank_contingencies(vec![RankEntry::new(0, 1, 2, 0.0)]).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.screened().count(), 0);

        assert!(rank_contingencies(vec![RankEntry::new(0, 1, 2, f64::NAN)]).is_err());
    }

    #[test]
    fn csv_layout() {
        let rep = rank_contingencies(vec![RankEntry::new(0, 1, 2, 1.5)]).unwrap();
        assert_eq!(rep.to_csv(), "rank,contingency,from,to,pi_c,state\n1,L1,1,2,1.5,insecure\n");
        let mut e = RankEntry::new(0, 1, 2, 1.5);
        e.oracle = Some(2.0);
        e.predicted = Some(1.5);
        let rep = rank_contingencies(vec![e]).unwrap();
        assert_eq!(
            rep.to_csv(),
            "rank,contingency,from,to,pi_c,state,oracle,predicted,rel_err_pct\n1,L1,1,2,1.5,insecure,2,1.5,-25\n"
        );
    }

    proptest! {
        #[test]
        fn norm_properties(q in prop::collection::vec(0.0f64..3.0, 1..20), extra in prop::collection::vec(0.0f64..3.0, 1..10)) {
            let pi = composite_norm(&q, 2);
            let max = q.iter().cloned().fold(0.0, f64::max);
            prop_assert!(pi >= max - 1e-12);
            prop_assert_eq!(pi == 0.0, q.iter().all(|&x| x == 0.0));
            let joined: Vec<f64> = q.iter().chain(&extra).cloned().collect();
            let lhs = composite_norm(&joined, 2).powi(4);
            let rhs = pi.powi(4) + composite_norm(&extra, 2).powi(4);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
            let mut rev = q.clone();
            rev.reverse();
            prop_assert!((composite_norm(&rev, 2) - pi).abs() <= 1e-12 * (1.0 + pi));
        }

        #[test]
        fn single_term_collapses(x in 0.0f64..5.0, pos in 0usize..5) {
            let mut q = vec![0.0; 5];
            q[pos] = x;
            prop_assert!((composite_norm(&q, 2) - x).abs() <= 1e-12 * (1.0 + x));
        }

        #[test]
        fn monotone_in_violation(v in 1.051f64..1.2, dv in 1e-4f64..0.05, p in 0.0f64..150.0) {
            let lim = limits(2, vec![Some(100.0)]);
            let a = security_index(&solution(vec![v, 1.0], vec![p]), &lim).unwrap();
            let b = security_index(&solution(vec![v + dv, 1.0], vec![p]), &lim).unwrap();
            prop_assert!(b.value > a.value);
            if p > 80.0 {
                let c = security_index(&solution(vec![v, 1.0], vec![p + 1.0]), &lim).unwrap();
                prop_assert!(c.value > a.value);
            }
        }

        #[test]
        fn exactly_one_state(x in 0.0f64..3.0) {
            let s = classify(x).unwrap();
            let count = [x == 0.0, x > 0.0 && x <= 1.0, x > 1.0].iter().filter(|b| **b).count();
            prop_assert_eq!(count, 1);
            prop_assert_eq!(s == SecurityState::Secure, x == 0.0);
        }

        #[test]
        fn ranking_order_independent(vals in prop::collection::vec(0u8..5, 1..12), seed in 0u64..1000) {
            let entries: Vec<RankEntry> = vals.iter().enumerate()
                .map(|(i, &v)| RankEntry::new(i, 1, 2, v as f64 * 0.5)).collect();
            let mut shuffled = entries.clone();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(rank_contingencies(entries).unwrap(), rank_contingencies(shuffled).unwrap());
        }
    }
}
