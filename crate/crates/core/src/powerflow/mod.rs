//! AC power flow: admittance matrix, polar Newton–Raphson and branch flows.

mod ybus;

use std::cell::Cell;

use num_complex::Complex64;
use rsparse::data::Sprs;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BusKind, Network};

pub use ybus::{build_ybus, AdmittanceMatrix};
pub(crate) use ybus::branch_admittances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("branch {0} has zero series impedance")]
    ZeroImpedance(usize),
    #[error("network is islanded: {islands} components over in-service branches")]
    Islanded { islands: usize },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("voltage vector has {got} entries, network has {expected} buses")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Mismatch tolerance, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub flat_start: bool,
    /// Convert PV buses to PQ when generator reactive limits are hit.
    pub enforce_q_limits: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 20,
            flat_start: true,
            enforce_q_limits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    pub bus_ids: Vec<u32>,
    /// p.u.
    pub v_mag: Vec<f64>,
    /// radians
    pub v_ang: Vec<f64>,
    /// MW
    pub p_inj: Vec<f64>,
    /// MVAr
    pub q_inj: Vec<f64>,
    /// Per generator, MW / MVAr.
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    pub branch_flows: Vec<BranchFlow>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest |P| or |Q| mismatch at the last evaluation, p.u.
    pub max_mismatch: f64,
}

impl FlowSolution {
    pub fn voltages(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    pub in_service: bool,
}

impl BranchFlow {
    /// Active loss in MW.
    pub fn loss(&self) -> f64 {
        self.p_from + self.p_to
    }

    /// Larger of the sending- and receiving-end active flow magnitudes.
    pub fn max_abs_p(&self) -> f64 {
        self.p_from.abs().max(self.p_to.abs())
    }
}

thread_local! {
    static SOLVES: Cell<u64> = const { Cell::new(0) };
}

/// Number of `solve_nr` calls made on the current thread.
pub fn solves_on_this_thread() -> u64 {
    SOLVES.with(Cell::get)
}

/// Per-branch MW/MVAr flows for the given bus voltages.
pub fn branch_flows(net: &Network, v: &[Complex64]) -> Result<Vec<BranchFlow>, FlowError> {
    if v.len() != net.buses.len() {
        return Err(FlowError::DimensionMismatch {
            expected: net.buses.len(),
            got: v.len(),
        });
    }
    let index = net.bus_index();
    Ok(net
        .branches
        .iter()
        .map(|br| {
            if !br.in_service {
                return BranchFlow {
                    p_from: 0.0,
                    q_from: 0.0,
                    p_to: 0.0,
                    q_to: 0.0,
                    in_service: false,
                };
            }
            let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
            let (yff, yft, ytf, ytt) = branch_admittances(br);
            let sf = v[f] * (yff * v[f] + yft * v[t]).conj() * net.base_mva;
            let st = v[t] * (ytf * v[f] + ytt * v[t]).conj() * net.base_mva;
            BranchFlow {
                p_from: sf.re,
                q_from: sf.im,
                p_to: st.re,
                q_to: st.im,
                in_service: true,
            }
        })
        .collect())
}

/// Complex power mismatch `V .* conj(Y V) - S` in p.u.
pub(crate) fn mismatch(y: &AdmittanceMatrix, v: &[Complex64], sbus: &[Complex64]) -> Vec<Complex64> {
    let current = y.mul(v);
    v.iter()
        .zip(&current)
        .zip(sbus)
        .map(|((vi, ii), si)| vi * ii.conj() - si)
        .collect()
}

struct Setup {
    kinds: Vec<BusKind>,
    v_set: Vec<Option<f64>>,
    /// Scheduled injection, p.u.
    sbus: Vec<Complex64>,
    gen_bus: Vec<usize>,
}

fn setup(net: &Network) -> Setup {
    let index = net.bus_index();
    let n = net.buses.len();
    let mut v_set = vec![None; n];
    let mut sbus: Vec<Complex64> = net
        .buses
        .iter()
        .map(|b| Complex64::new(-b.p_load, -b.q_load) / net.base_mva)
        .collect();
    let mut gen_bus = Vec::with_capacity(net.generators.len());
    for g in &net.generators {
        let i = index[&g.bus];
        gen_bus.push(i);
        sbus[i] += Complex64::new(g.p_out, g.q_out) / net.base_mva;
        if v_set[i].is_none() {
            v_set[i] = Some(g.v_setpoint);
        }
    }
    Setup {
        kinds: net.buses.iter().map(|b| b.kind).collect(),
        v_set,
        sbus,
        gen_bus,
    }
}

/// Solves the AC power flow with full Newton–Raphson in polar coordinates.
///
/// Non-convergence is reported through `converged = false`; topology and
/// factorization failures are errors.
pub fn solve_nr(net: &Network, opts: &SolverOptions) -> Result<FlowSolution, FlowError> {
    SOLVES.with(|c| c.set(c.get() + 1));
    if !(opts.tolerance > 0.0) {
        return Err(FlowError::InvalidOptions("tolerance must be positive"));
    }
    if opts.max_iterations == 0 {
        return Err(FlowError::InvalidOptions("max_iterations must be at least 1"));
    }
    let comps = net.components(None);
    let islands = comps.iter().max().map_or(0, |m| m + 1);
    if islands > 1 {
        return Err(FlowError::Islanded { islands });
    }

    let y = build_ybus(net)?;
    let mut st = setup(net);
    let n = net.buses.len();

    let mut v: Vec<Complex64> = (0..n)
        .map(|i| {
            let (mag, ang) = if opts.flat_start {
                (1.0, 0.0)
            } else {
                (net.buses[i].v_mag, net.buses[i].v_ang.to_radians())
            };
            let mag = match st.kinds[i] {
                BusKind::Pq => mag,
                _ => st.v_set[i].unwrap_or(mag),
            };
            Complex64::from_polar(mag, ang)
        })
        .collect();

    let mut total_iters = 0;
    let mut converged;
    let mut max_mismatch;
    let mut fixed_q: Vec<Option<f64>> = vec![None; n];
    loop {
        let run = newton(&y, &st, &mut v, opts)?;
        total_iters += run.iterations;
        converged = run.converged;
        max_mismatch = run.max_mismatch;
        if !converged || !opts.enforce_q_limits {
            break;
        }
        if !switch_q_limited(net, &y, &mut st, &v, &mut fixed_q) {
            break;
        }
    }

    let s_calc: Vec<Complex64> = {
        let current = y.mul(&v);
        v.iter().zip(&current).map(|(vi, ii)| vi * ii.conj() * net.base_mva).collect()
    };
    let (gen_p, gen_q) = dispatch(net, &st, &s_calc, &fixed_q);
    let flows = branch_flows(net, &v)?;
    Ok(FlowSolution {
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        v_mag: v.iter().map(|c| c.norm()).collect(),
        v_ang: v.iter().map(|c| c.arg()).collect(),
        p_inj: s_calc.iter().map(|s| s.re).collect(),
        q_inj: s_calc.iter().map(|s| s.im).collect(),
        gen_p,
        gen_q,
        branch_flows: flows,
        converged,
        iterations: total_iters,
        max_mismatch,
    })
}

struct NewtonRun {
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
}

fn max_norm(mis: &[Complex64], pvpq: &[usize], pq: &[usize]) -> f64 {
    let p = pvpq.iter().map(|&i| mis[i].re.abs());
    let q = pq.iter().map(|&i| mis[i].im.abs());
    p.chain(q).fold(0.0, |m, x| if x.is_nan() || m.is_nan() { f64::NAN } else { m.max(x) })
}

/// Iterations count mismatch evaluations, so an already balanced start
/// reports one iteration.
fn newton(
    y: &AdmittanceMatrix,
    st: &Setup,
    v: &mut [Complex64],
    opts: &SolverOptions,
) -> Result<NewtonRun, FlowError> {
    let n = v.len();
    let pv: Vec<usize> = (0..n).filter(|&i| st.kinds[i] == BusKind::Pv).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| st.kinds[i] == BusKind::Pq).collect();
    let mut pvpq = pv.clone();
    pvpq.extend(&pq);
    pvpq.sort_unstable();

    // Column position of each bus angle / magnitude unknown.
    let mut ang_col = vec![usize::MAX; n];
    for (k, &i) in pvpq.iter().enumerate() {
        ang_col[i] = k;
    }
    let mut mag_col = vec![usize::MAX; n];
    for (k, &i) in pq.iter().enumerate() {
        mag_col[i] = pvpq.len() + k;
    }
    let dim = pvpq.len() + pq.len();

    let mut vm: Vec<f64> = v.iter().map(|c| c.norm()).collect();
    let mut va: Vec<f64> = v.iter().map(|c| c.arg()).collect();

    let mut iterations = 0;
    loop {
        let mis = mismatch(y, v, &st.sbus);
        iterations += 1;
        let norm = max_norm(&mis, &pvpq, &pq);
        if norm.is_finite() && norm < opts.tolerance {
            return Ok(NewtonRun { converged: true, iterations, max_mismatch: norm });
        }
        if !norm.is_finite() || iterations > opts.max_iterations || dim == 0 {
            return Ok(NewtonRun { converged: false, iterations, max_mismatch: norm });
        }

        let jac = jacobian(y, v, &pvpq, &pq, &ang_col, &mag_col, dim);
        let mut rhs: Vec<f64> = pvpq
            .iter()
            .map(|&i| -mis[i].re)
            .chain(pq.iter().map(|&i| -mis[i].im))
            .collect();
        rsparse::lusol(&jac, &mut rhs, 1, 1.0)
            .map_err(|_| FlowError::SingularJacobian(iterations))?;
        if rhs.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::SingularJacobian(iterations));
        }
        for &i in &pvpq {
            va[i] += rhs[ang_col[i]];
        }
        for &i in &pq {
            vm[i] += rhs[mag_col[i]];
        }
        for i in 0..n {
            v[i] = Complex64::from_polar(vm[i], va[i]);
        }
    }
}

/// Power-flow Jacobian `[dP/dθ dP/d|V|; dQ/dθ dQ/d|V|]` in compressed columns.
fn jacobian(
    y: &AdmittanceMatrix,
    v: &[Complex64],
    pvpq: &[usize],
    pq: &[usize],
    ang_col: &[usize],
    mag_col: &[usize],
    dim: usize,
) -> Sprs<f64> {
    let current = y.mul(v);
    let unit: Vec<Complex64> = v.iter().map(|c| c / c.norm()).collect();
    let mut is_pq = vec![false; v.len()];
    for &i in pq {
        is_pq[i] = true;
    }
    let mut row_of_p = vec![usize::MAX; v.len()];
    for (k, &i) in pvpq.iter().enumerate() {
        row_of_p[i] = k;
    }
    let mut row_of_q = vec![usize::MAX; v.len()];
    for (k, &i) in pq.iter().enumerate() {
        row_of_q[i] = pvpq.len() + k;
    }

    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    for &i in pvpq {
        for &(j, yij) in y.row(i) {
            // dS_i/dθ_j and dS_i/d|V_j| off the diagonal contribution
            let mut d_ang = Complex64::i() * v[i] * (-(yij * v[j])).conj();
            let mut d_mag = v[i] * (yij * unit[j]).conj();
            if i == j {
                d_ang += Complex64::i() * v[i] * current[i].conj();
                d_mag += current[i].conj() * unit[i];
            }
            let (prow, qrow) = (row_of_p[i], row_of_q[i]);
            if ang_col[j] != usize::MAX {
                trip.push((prow, ang_col[j], d_ang.re));
                if is_pq[i] {
                    trip.push((qrow, ang_col[j], d_ang.im));
                }
            }
            if mag_col[j] != usize::MAX {
                trip.push((prow, mag_col[j], d_mag.re));
                if is_pq[i] {
                    trip.push((qrow, mag_col[j], d_mag.im));
                }
            }
        }
    }
    trip.sort_unstable_by_key(|&(r, c, _)| (c, r));

    let mut p = vec![0isize; dim + 1];
    let mut rows = Vec::with_capacity(trip.len());
    let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, x) in trip {
        if last == Some((r, c)) {
            *vals.last_mut().unwrap() += x;
            continue;
        }
        last = Some((r, c));
        rows.push(r);
        vals.push(x);
        p[c + 1] += 1;
    }
    for c in 0..dim {
        p[c + 1] += p[c];
    }
    Sprs {
        nzmax: vals.len(),
        m: dim,
        n: dim,
        p,
        i: rows,
        x: vals,
    }
}

/// Converts PV buses whose reactive output left the unit limits into PQ
/// buses pinned at the violated limit. Returns whether anything changed.
fn switch_q_limited(
    net: &Network,
    y: &AdmittanceMatrix,
    st: &mut Setup,
    v: &[Complex64],
    fixed_q: &mut [Option<f64>],
) -> bool {
    let current = y.mul(v);
    let mut changed = false;
    for (i, bus) in net.buses.iter().enumerate() {
        if st.kinds[i] != BusKind::Pv {
            continue;
        }
        let units: Vec<_> = net.generators.iter().filter(|g| g.bus == bus.id).collect();
        let (qmin, qmax) = units
            .iter()
            .fold((0.0, 0.0), |(lo, hi), g| (lo + g.q_min, hi + g.q_max));
        let q_gen = (v[i] * current[i].conj()).im * net.base_mva + bus.q_load;
        let limit = if q_gen > qmax {
            qmax
        } else if q_gen < qmin {
            qmin
        } else {
            continue;
        };
        log::debug!("bus {} hits reactive limit {limit} MVAr; switching to PQ", bus.id);
        st.kinds[i] = BusKind::Pq;
        let scheduled_q: f64 = units.iter().map(|g| g.q_out).sum();
        st.sbus[i].im += (limit - scheduled_q) / net.base_mva;
        fixed_q[i] = Some(limit);
        changed = true;
    }
    changed
}

/// Splits solved bus injections back onto individual generators.
fn dispatch(
    net: &Network,
    st: &Setup,
    s_calc: &[Complex64],
    fixed_q: &[Option<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let mut gen_p: Vec<f64> = net.generators.iter().map(|g| g.p_out).collect();
    let mut gen_q = vec![0.0; net.generators.len()];
    for (i, bus) in net.buses.iter().enumerate() {
        let units: Vec<usize> = (0..net.generators.len()).filter(|&g| st.gen_bus[g] == i).collect();
        if units.is_empty() {
            continue;
        }
        if net.buses[i].kind == BusKind::Slack {
            let others: f64 = units[1..].iter().map(|&g| net.generators[g].p_out).sum();
            gen_p[units[0]] = s_calc[i].re + bus.p_load - others;
        }
        let q_total = match fixed_q[i] {
            Some(q) => q,
            None if bus.kind == BusKind::Pq => {
                for &g in &units {
                    gen_q[g] = net.generators[g].q_out;
                }
                continue;
            }
            None => s_calc[i].im + bus.q_load,
        };
        let ranges: Vec<f64> = units
            .iter()
            .map(|&g| net.generators[g].q_max - net.generators[g].q_min)
            .collect();
        let span: f64 = ranges.iter().sum();
        for (k, &g) in units.iter().enumerate() {
            gen_q[g] = if span.is_finite() && span > 0.0 {
                q_total * ranges[k] / span
            } else {
                q_total / units.len() as f64
            };
        }
    }
    (gen_p, gen_q)
}
