use std::collections::BTreeMap;

use num_complex::Complex64;
use super::FlowError;
use crate::netmodel::{Branch, Network};

/// Sparse bus admittance matrix in p.u., stored row-wise with columns sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub dimension: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |&(c, _)| c) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `Y * v`
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut out = vec![vec![Complex64::new(0.0, 0.0); self.dimension]; self.dimension];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                out[i][j] = y;
            }
        }
        out
    }
}

/// π-model terminal admittances `(y_ff, y_ft, y_tf, y_tt)` of one branch.
pub(crate) fn branch_admittances(br: &Branch) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
    let half_b = Complex64::new(0.0, br.b_charging / 2.0);
    let tap = Complex64::from_polar(br.tap, br.shift.to_radians());
    let ytt = ys + half_b;
    let yff = ytt / (br.tap * br.tap);
    let yft = -ys / tap.conj();
    let ytf = -ys / tap;
    (yff, yft, ytf, ytt)
}

/// Assembles the admittance matrix from in-service branches, bus shunts and
/// switched capacitors.
pub fn build_ybus(net: &Network) -> Result<AdmittanceMatrix, FlowError> {
    let index = net.bus_index();
    let n = net.buses.len();
    let mut acc: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
    let mut add = |i: usize, j: usize, y: Complex64| {
        *acc[i].entry(j).or_insert(Complex64::new(0.0, 0.0)) += y;
    };

    for (i, bus) in net.buses.iter().enumerate() {
        add(i, i, Complex64::new(bus.g_shunt, bus.b_shunt) / net.base_mva);
    }
    for cap in &net.shunt_capacitors {
        add(index[&cap.bus], index[&cap.bus], Complex64::new(0.0, cap.q_switched / net.base_mva));
    }
    for (k, br) in net.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(FlowError::ZeroImpedance(k));
        }
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        let (yff, yft, ytf, ytt) = branch_admittances(br);
        add(f, f, yff);
        add(f, t, yft);
        add(t, f, ytf);
        add(t, t, ytt);
    }

    Ok(AdmittanceMatrix {
        dimension: n,
        rows: acc.into_iter().map(|m| m.into_iter().collect()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{cases, parse_case, tests::TWO_BUS};

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn two_bus_series_reactance() {
        let net = parse_case(TWO_BUS).unwrap();
        let y = build_ybus(&net).unwrap();
        let j10 = Complex64::new(0.0, 10.0);
        assert!(close(y.get(0, 0), -j10, 1e-12));
        assert!(close(y.get(0, 1), j10, 1e-12));
        assert!(close(y.get(1, 0), j10, 1e-12));
        assert!(close(y.get(1, 1), -j10, 1e-12));
    }

    #[test]
    fn bus_shunt_on_diagonal() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.buses[1].b_shunt = 20.0; // 0.2 p.u. on 100 MVA
        let y = build_ybus(&net).unwrap();
        assert!(close(y.get(1, 1), Complex64::new(0.0, -10.0 + 0.2), 1e-12));
    }

    #[test]
    fn zero_impedance_rejected() {
        let mut net = parse_case(TWO_BUS).unwrap();
        net.branches[0].x = 0.0;
        assert_eq!(build_ybus(&net), Err(FlowError::ZeroImpedance(0)));
    }

    /// Dense loop written directly from the π-model definition.
    fn dense_oracle(net: &Network) -> Vec<Vec<Complex64>> {
        let n = net.buses.len();
        let pos = |id| net.buses.iter().position(|b| b.id == id).unwrap();
        let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for br in net.branches.iter().filter(|b| b.in_service) {
            let (f, t) = (pos(br.from_bus), pos(br.to_bus));
            let z = Complex64::new(br.r, br.x);
            let series = 1.0 / z;
            let shunt = Complex64::i() * br.b_charging * 0.5;
            let theta = br.shift * std::f64::consts::PI / 180.0;
            let a = Complex64::new(br.tap * theta.cos(), br.tap * theta.sin());
            y[f][f] += (series + shunt) / (a * a.conj());
            y[t][t] += series + shunt;
            y[f][t] -= series / a.conj();
            y[t][f] -= series / a;
        }
        for (i, b) in net.buses.iter().enumerate() {
            y[i][i] += Complex64::new(b.g_shunt, b.b_shunt) / net.base_mva;
        }
        for c in &net.shunt_capacitors {
            let i = pos(c.bus);
            y[i][i] += Complex64::new(0.0, c.q_switched) / net.base_mva;
        }
        y
    }

    #[test]
    fn ieee14_matches_dense_oracle() {
        let net = parse_case(cases::IEEE14).unwrap();
        let sparse = build_ybus(&net).unwrap().to_dense();
        let dense = dense_oracle(&net);
        for i in 0..14 {
            for j in 0..14 {
                assert!(close(sparse[i][j], dense[i][j], 1e-12), "({i},{j})");
            }
        }
    }

    #[test]
    fn symmetric_without_phase_shift() {
        for text in [cases::IEEE14, cases::IEEE118, cases::IEEE300] {
            let net = parse_case(text).unwrap();
            let y = build_ybus(&net).unwrap();
            for i in 0..y.dimension {
                for &(j, v) in y.row(i) {
                    assert!(close(v, y.get(j, i), 1e-12));
                }
                assert!(y.row(i).iter().any(|&(j, _)| j == i));
            }
        }
    }
}
