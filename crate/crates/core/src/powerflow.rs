//! A-posteriori AC power flow on the feeder.
//!
//! Newton–Raphson on the polar power-mismatch equations. The slack bus is
//! held at 1.0 p.u. and 0°; every other bus is a PQ bus whose injection
//! follows the generator convention (positive = power into the network).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Converged when the largest power mismatch is below this, in p.u.
pub const MISMATCH_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("no injection given for bus {0}")]
    MissingInjection(u32),
    #[error("injection given for unknown bus {0}")]
    UnknownBus(u32),
    #[error("no convergence after {iterations} iterations, max mismatch {mismatch:e} p.u.")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {0}")]
    Singular(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    pub r_ohm_per_km: f64,
    pub x_ohm_per_km: f64,
    pub length_m: f64,
}

impl Line {
    /// Series impedance in ohms.
    pub fn impedance_ohm(&self) -> Complex64 {
        let km = self.length_m / 1000.0;
        Complex64::new(self.r_ohm_per_km * km, self.x_ohm_per_km * km)
    }
}

fn default_power_factor() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    /// Line-to-line base voltage, kV.
    pub base_kv: f64,
    /// Base power, kVA.
    pub base_kva: f64,
    pub slack_bus: u32,
    /// Lagging power factor applied to net active loads.
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    pub lines: Vec<Line>,
}

impl Network {
    /// Impedance base in ohms.
    pub fn z_base(&self) -> f64 {
        self.base_kv * self.base_kv * 1000.0 / self.base_kva
    }

    /// All buses, slack first, then ascending.
    pub fn buses(&self) -> Vec<u32> {
        let mut set: BTreeSet<u32> = self.lines.iter().flat_map(|l| [l.from, l.to]).collect();
        set.remove(&self.slack_bus);
        std::iter::once(self.slack_bus).chain(set).collect()
    }

    pub fn validate(&self) -> Result<(), PowerFlowError> {
        let bad = |m: String| Err(PowerFlowError::InvalidNetwork(m));
        if !(self.base_kv > 0.0 && self.base_kva > 0.0) {
            return bad("base voltage and power must be positive".into());
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return bad(format!("power factor must be in (0, 1], got {}", self.power_factor));
        }
        if self.lines.is_empty() {
            return bad("no lines".into());
        }
        for l in &self.lines {
            if l.from == l.to {
                return bad(format!("line {}-{} is a self loop", l.from, l.to));
            }
            let z = l.impedance_ohm();
            if !(l.length_m > 0.0 && z.re >= 0.0 && z.im >= 0.0 && z.norm() > 0.0) {
                return bad(format!("line {}-{} needs positive length and impedance", l.from, l.to));
            }
        }
        let buses = self.buses();
        let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for l in &self.lines {
            adj.entry(l.from).or_default().push(l.to);
            adj.entry(l.to).or_default().push(l.from);
        }
        if !adj.contains_key(&self.slack_bus) {
            return bad(format!("slack bus {} has no lines", self.slack_bus));
        }
        let mut seen = BTreeSet::from([self.slack_bus]);
        let mut queue = VecDeque::from([self.slack_bus]);
        while let Some(b) = queue.pop_front() {
            for &n in &adj[&b] {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        if seen.len() != buses.len() {
            return bad("network is not connected".into());
        }
        Ok(())
    }

    /// Bus admittance matrix in p.u., indexed as [`Network::buses`].
    pub fn ybus(&self) -> DMatrix<Complex64> {
        let buses = self.buses();
        let index: BTreeMap<u32, usize> = buses.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let n = buses.len();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for l in &self.lines {
            let (i, j) = (index[&l.from], index[&l.to]);
            let yl = Complex64::new(1.0, 0.0) / (l.impedance_ohm() / self.z_base());
            y[(i, i)] += yl;
            y[(j, j)] += yl;
            y[(i, j)] -= yl;
            y[(j, i)] -= yl;
        }
        y
    }
}

/// Per-bus injections in kW and kvar, generator convention.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BusInjection {
    pub p_kw: BTreeMap<u32, f64>,
    pub q_kvar: BTreeMap<u32, f64>,
}

impl BusInjection {
    /// Injections from net bus loads (positive = consuming) at a fixed
    /// lagging power factor: `P = −L`, `Q = −L·tan(acos pf)`.
    pub fn from_loads(loads: &[(u32, f64)], power_factor: f64) -> Self {
        let tan_phi = (1.0 - power_factor * power_factor).sqrt() / power_factor;
        let mut inj = Self::default();
        for &(bus, load) in loads {
            inj.p_kw.insert(bus, -load);
            inj.q_kvar.insert(bus, -load * tan_phi);
        }
        inj
    }

    pub fn zeros(buses: impl IntoIterator<Item = u32>) -> Self {
        let mut inj = Self::default();
        for b in buses {
            inj.p_kw.insert(b, 0.0);
            inj.q_kvar.insert(b, 0.0);
        }
        inj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Bus ids, slack first.
    pub buses: Vec<u32>,
    pub v_pu: Vec<f64>,
    pub angle_deg: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
    /// Power delivered by the slack bus into the feeder, kW and kvar.
    pub slack_p_kw: f64,
    pub slack_q_kvar: f64,
    /// Active losses over all lines, kW.
    pub losses_kw: f64,
}

fn injections(net: &Network, buses: &[u32], inj: &BusInjection) -> Result<(Vec<f64>, Vec<f64>), PowerFlowError> {
    let known: BTreeSet<u32> = buses.iter().copied().collect();
    for b in inj.p_kw.keys().chain(inj.q_kvar.keys()) {
        if !known.contains(b) || *b == net.slack_bus {
            return Err(PowerFlowError::UnknownBus(*b));
        }
    }
    let mut p = vec![0.0; buses.len()];
    let mut q = vec![0.0; buses.len()];
    for (i, b) in buses.iter().enumerate().skip(1) {
        p[i] = *inj.p_kw.get(b).ok_or(PowerFlowError::MissingInjection(*b))? / net.base_kva;
        q[i] = inj.q_kvar.get(b).copied().unwrap_or(0.0) / net.base_kva;
    }
    Ok((p, q))
}

/// Complex power injected at each bus for voltages `v`.
fn bus_power(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut current = Complex64::new(0.0, 0.0);
            for j in 0..n {
                current += y[(i, j)] * v[j];
            }
            v[i] * current.conj()
        })
        .collect()
}

pub fn solve_power_flow(net: &Network, inj: &BusInjection) -> Result<PowerFlowSolution, PowerFlowError> {
    net.validate()?;
    let buses = net.buses();
    let (p_spec, q_spec) = injections(net, &buses, inj)?;
    let y = net.ybus();
    let n = buses.len();
    let m = n - 1;
    let g = y.map(|c| c.re);
    let b = y.map(|c| c.im);

    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let phasors = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter().zip(va).map(|(&r, &a)| Complex64::from_polar(r, a)).collect()
    };

    let mut iterations = 0;
    loop {
        let s = bus_power(&y, &phasors(&vm, &va));
        let mut f = DVector::zeros(2 * m);
        for i in 1..n {
            f[i - 1] = p_spec[i] - s[i].re;
            f[m + i - 1] = q_spec[i] - s[i].im;
        }
        let mismatch = f.amax();
        if mismatch < MISMATCH_TOL {
            let s_slack = s[0];
            let losses: f64 = s.iter().map(|c| c.re).sum();
            return Ok(PowerFlowSolution {
                buses,
                v_pu: vm,
                angle_deg: va.iter().map(|a| a.to_degrees()).collect(),
                iterations,
                mismatch,
                slack_p_kw: s_slack.re * net.base_kva,
                slack_q_kvar: s_slack.im * net.base_kva,
                losses_kw: losses * net.base_kva,
            });
        }
        if iterations >= MAX_ITERATIONS {
            return Err(PowerFlowError::NonConvergence { iterations, mismatch });
        }
        iterations += 1;

        // Jacobian blocks [dP/dθ dP/dV; dQ/dθ dQ/dV] over non-slack buses.
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for i in 1..n {
            let (pi, qi) = (s[i].re, s[i].im);
            for k in 1..n {
                let (r, c) = (i - 1, k - 1);
                if i == k {
                    let (gii, bii) = (g[(i, i)], b[(i, i)]);
                    jac[(r, c)] = -qi - bii * vm[i] * vm[i];
                    jac[(r, m + c)] = pi / vm[i] + gii * vm[i];
                    jac[(m + r, c)] = pi - gii * vm[i] * vm[i];
                    jac[(m + r, m + c)] = qi / vm[i] - bii * vm[i];
                } else {
                    let th = va[i] - va[k];
                    let (gik, bik) = (g[(i, k)], b[(i, k)]);
                    let (sn, cs) = th.sin_cos();
                    jac[(r, c)] = vm[i] * vm[k] * (gik * sn - bik * cs);
                    jac[(r, m + c)] = vm[i] * (gik * cs + bik * sn);
                    jac[(m + r, c)] = -vm[i] * vm[k] * (gik * cs + bik * sn);
                    jac[(m + r, m + c)] = vm[i] * (gik * sn - bik * cs);
                }
            }
        }
        let dx = jac.lu().solve(&f).ok_or(PowerFlowError::Singular(iterations))?;
        for i in 1..n {
            va[i] += dx[i - 1];
            vm[i] += dx[m + i - 1];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviationReport {
    /// `max |V − 1|` in p.u. over all buses and solutions.
    pub max_voltage_dev: f64,
    pub max_angle_deg: f64,
}

pub fn deviation_report<'a>(solutions: impl IntoIterator<Item = &'a PowerFlowSolution>) -> DeviationReport {
    let mut r = DeviationReport::default();
    for s in solutions {
        for (&v, &a) in s.v_pu.iter().zip(&s.angle_deg) {
            r.max_voltage_dev = r.max_voltage_dev.max((v - 1.0).abs());
            r.max_angle_deg = r.max_angle_deg.max(a.abs());
        }
    }
    r
}

/// Solve one power flow per logged step. Buses without an entry in a
/// step's loads carry no load.
pub fn replay(net: &Network, steps: &[Vec<(u32, f64)>]) -> Result<Vec<PowerFlowSolution>, PowerFlowError> {
    let others: Vec<u32> = net.buses().into_iter().skip(1).collect();
    steps
        .iter()
        .map(|loads| {
            let mut inj = BusInjection::zeros(others.iter().copied());
            let given = BusInjection::from_loads(loads, net.power_factor);
            inj.p_kw.extend(given.p_kw);
            inj.q_kvar.extend(given.q_kvar);
            solve_power_flow(net, &inj)
        })
        .collect()
}
