//! Building and DER models.
//!
//! Each model has two faces that must agree exactly: a discrete-time update
//! law used by the plant simulation, and the linear rows it contributes to a
//! controller's LP. The rows are written from the same update law, so
//! stepping a device with the LP's own schedule reproduces the LP's predicted
//! trajectory up to solver tolerance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LpProblem, Relation};
use crate::profile::TimeGrid;

/// Slack allowed on bound checks when applying LP schedules, which are only
/// feasible up to the solver tolerance.
pub const APPLY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("state of charge {soc:.6} kWh outside [0, {capacity}]")]
    SocOutOfRange { soc: f64, capacity: f64 },
    #[error("setpoint {name} = {value} outside [0, {max}]")]
    SetpointOutOfRange { name: &'static str, value: f64, max: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), DeviceError> {
    if cond {
        Ok(())
    } else {
        Err(DeviceError::InvalidParameter(msg()))
    }
}

/// Reject a set point outside `[0, max]` beyond [`APPLY_TOL`].
pub fn check_setpoint(name: &'static str, value: f64, max: f64) -> Result<(), DeviceError> {
    if value < -APPLY_TOL || value > max + APPLY_TOL || !value.is_finite() {
        Err(DeviceError::SetpointOutOfRange { name, value, max })
    } else {
        Ok(())
    }
}

fn check_soc(soc: f64, capacity: f64) -> Result<f64, DeviceError> {
    if soc < -APPLY_TOL || soc > capacity + APPLY_TOL || !soc.is_finite() {
        Err(DeviceError::SocOutOfRange { soc, capacity })
    } else {
        Ok(soc.clamp(0.0, capacity))
    }
}

/// First-order RC thermal envelope with an hourly comfort box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcBuilding {
    /// kWh/K
    pub heat_capacity: f64,
    /// kW/K
    pub loss_coefficient: f64,
    /// °C by hour of day.
    pub comfort_min: [f64; 24],
    pub comfort_max: [f64; 24],
    pub t_init: f64,
}

impl RcBuilding {
    /// 17 °C at night, 20 °C from 07:00 to 22:00, upper bound 24 °C.
    pub fn default_comfort() -> ([f64; 24], [f64; 24]) {
        let mut min = [17.0; 24];
        for v in &mut min[7..22] {
            *v = 20.0;
        }
        (min, [24.0; 24])
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        require(self.heat_capacity > 0.0, || {
            format!("heat_capacity must be > 0, got {}", self.heat_capacity)
        })?;
        require(self.loss_coefficient >= 0.0, || {
            format!("loss_coefficient must be >= 0, got {}", self.loss_coefficient)
        })?;
        for h in 0..24 {
            require(self.comfort_min[h] <= self.comfort_max[h], || {
                format!(
                    "comfort_min {} exceeds comfort_max {} at hour {h}",
                    self.comfort_min[h], self.comfort_max[h]
                )
            })?;
        }
        Ok(())
    }
}

/// `T' = T + (dt/C)·(q_heat − U·(T − t_out))`.
pub fn step_building(t: f64, q_heat: f64, t_out: f64, dt: f64, b: &RcBuilding) -> f64 {
    t + dt / b.heat_capacity * (q_heat - b.loss_coefficient * (t - t_out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatPump {
    pub cop: f64,
    /// kW_e
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasBoiler {
    pub efficiency: f64,
    /// kW_th
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chp {
    pub eta_e: f64,
    pub eta_th: f64,
    /// kW of fuel
    pub fuel_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Battery {
    /// kWh
    pub capacity: f64,
    pub p_charge_max: f64,
    pub p_discharge_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub soc_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HotWaterTank {
    /// kWh_th
    pub capacity: f64,
    /// Fraction of the stored energy lost per hour.
    pub standing_loss: f64,
    /// kW_th, applies to both charging and discharging.
    pub q_charge_max: f64,
    pub soc_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvArray {
    /// m²
    pub area: f64,
    pub efficiency: f64,
}

/// `soc' = soc + η_c·p_c·dt − p_d/η_d·dt`, checked against `[0, capacity]`.
pub fn step_battery(soc: f64, p_c: f64, p_d: f64, dt: f64, b: &Battery) -> Result<f64, DeviceError> {
    check_setpoint("battery charge", p_c, b.p_charge_max)?;
    check_setpoint("battery discharge", p_d, b.p_discharge_max)?;
    check_soc(soc + b.eta_c * p_c * dt - p_d / b.eta_d * dt, b.capacity)
}

/// `soc' = soc·(1 − loss·dt) + (q_in − q_draw)·dt`, checked against `[0, capacity]`.
pub fn step_tank(soc: f64, q_in: f64, q_draw: f64, dt: f64, t: &HotWaterTank) -> Result<f64, DeviceError> {
    check_setpoint("tank charge", q_in, t.q_charge_max)?;
    check_setpoint("tank discharge", q_draw, t.q_charge_max)?;
    check_soc(soc * (1.0 - t.standing_loss * dt) + (q_in - q_draw) * dt, t.capacity)
}

/// Electrical output in kW for an irradiance in kW/m².
pub fn pv_output(irradiance: f64, pv: &PvArray) -> f64 {
    irradiance * pv.area * pv.efficiency
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Device {
    HeatPump(HeatPump),
    Boiler(GasBoiler),
    Chp(Chp),
    Battery(Battery),
    Tank(HotWaterTank),
    Pv(PvArray),
}

impl Device {
    pub fn name(&self) -> &'static str {
        match self {
            Device::HeatPump(_) => "heat_pump",
            Device::Boiler(_) => "boiler",
            Device::Chp(_) => "chp",
            Device::Battery(_) => "battery",
            Device::Tank(_) => "tank",
            Device::Pv(_) => "pv",
        }
    }

    pub fn is_storage(&self) -> bool {
        matches!(self, Device::Battery(_) | Device::Tank(_))
    }

    pub fn is_heat_source(&self) -> bool {
        matches!(self, Device::HeatPump(_) | Device::Boiler(_) | Device::Chp(_))
    }

    pub fn initial_soc(&self) -> Option<f64> {
        match self {
            Device::Battery(b) => Some(b.soc_init),
            Device::Tank(t) => Some(t.soc_init),
            _ => None,
        }
    }

    pub fn capacity(&self) -> Option<f64> {
        match self {
            Device::Battery(b) => Some(b.capacity),
            Device::Tank(t) => Some(t.capacity),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let name = self.name();
        let non_neg = |field: &str, v: f64| {
            require(v >= 0.0 && v.is_finite(), || {
                format!("{name}.{field} must be >= 0, got {v}")
            })
        };
        let unit = |field: &str, v: f64| {
            require(v > 0.0 && v <= 1.0, || {
                format!("{name}.{field} must be in (0, 1], got {v}")
            })
        };
        match self {
            Device::HeatPump(hp) => {
                require(hp.cop > 1.0, || format!("heat_pump.cop must be > 1, got {}", hp.cop))?;
                non_neg("p_max", hp.p_max)
            }
            Device::Boiler(b) => {
                unit("efficiency", b.efficiency)?;
                non_neg("q_max", b.q_max)
            }
            Device::Chp(c) => {
                unit("eta_e", c.eta_e)?;
                unit("eta_th", c.eta_th)?;
                require(c.eta_e + c.eta_th <= 1.0, || {
                    format!("chp.eta_e + eta_th must be <= 1, got {}", c.eta_e + c.eta_th)
                })?;
                non_neg("fuel_max", c.fuel_max)
            }
            Device::Battery(b) => {
                non_neg("capacity", b.capacity)?;
                non_neg("p_charge_max", b.p_charge_max)?;
                non_neg("p_discharge_max", b.p_discharge_max)?;
                unit("eta_c", b.eta_c)?;
                unit("eta_d", b.eta_d)?;
                require((0.0..=b.capacity).contains(&b.soc_init), || {
                    format!("battery.soc_init {} outside [0, {}]", b.soc_init, b.capacity)
                })
            }
            Device::Tank(t) => {
                non_neg("capacity", t.capacity)?;
                non_neg("q_charge_max", t.q_charge_max)?;
                require((0.0..1.0).contains(&t.standing_loss), || {
                    format!("tank.standing_loss must be in [0, 1), got {}", t.standing_loss)
                })?;
                require((0.0..=t.capacity).contains(&t.soc_init), || {
                    format!("tank.soc_init {} outside [0, {}]", t.soc_init, t.capacity)
                })
            }
            Device::Pv(p) => {
                non_neg("area", p.area)?;
                unit("efficiency", p.efficiency)
            }
        }
    }
}

/// Weather and demand series for one building, indexed by absolute step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExogenousSeries {
    /// °C
    pub t_out: Vec<f64>,
    /// kW/m²
    pub irradiance: Vec<f64>,
    /// kW_e
    pub base_load: Vec<f64>,
    /// kW_th of domestic hot water demand.
    pub dhw_draw: Vec<f64>,
}

impl ExogenousSeries {
    pub fn len(&self) -> usize {
        self.t_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out.is_empty()
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let n = self.t_out.len();
        require(
            self.irradiance.len() == n && self.base_load.len() == n && self.dhw_draw.len() == n,
            || "exogenous series must have equal lengths".into(),
        )?;
        require(n > 0, || "exogenous series are empty".into())?;
        require(self.irradiance.iter().all(|&v| v >= 0.0), || {
            "irradiance must be non-negative".into()
        })?;
        require(self.dhw_draw.iter().all(|&v| v >= 0.0), || {
            "dhw draw must be non-negative".into()
        })?;
        Ok(())
    }

    /// Values at absolute step `k`, wrapping cyclically past the end.
    pub fn at(&self, k: usize) -> ExogenousSample {
        let i = k % self.len();
        ExogenousSample {
            t_out: self.t_out[i],
            irradiance: self.irradiance[i],
            base_load: self.base_load[i],
            dhw_draw: self.dhw_draw[i],
        }
    }

    /// The `n` samples starting at absolute step `k0`.
    pub fn window(&self, k0: usize, n: usize) -> Vec<ExogenousSample> {
        (k0..k0 + n).map(|k| self.at(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExogenousSample {
    pub t_out: f64,
    pub irradiance: f64,
    pub base_load: f64,
    pub dhw_draw: f64,
}

/// Shared data a device needs to write its rows.
#[derive(Debug, Clone)]
pub struct EmitContext<'a> {
    pub grid: TimeGrid,
    pub forecast: &'a [ExogenousSample],
    pub fuel_price: f64,
    pub comfort_penalty: f64,
}

/// Variables a device created, per step.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceVars {
    HeatPump {
        power: Vec<usize>,
    },
    Boiler {
        heat: Vec<usize>,
    },
    Chp {
        fuel: Vec<usize>,
    },
    Battery {
        charge: Vec<usize>,
        discharge: Vec<usize>,
        soc: Vec<usize>,
    },
    Tank {
        charge: Vec<usize>,
        discharge: Vec<usize>,
        soc: Vec<usize>,
    },
    Pv,
}

impl DeviceVars {
    /// SoC variables at the end of each step, for storage devices.
    pub fn soc(&self) -> Option<&[usize]> {
        match self {
            DeviceVars::Battery { soc, .. } | DeviceVars::Tank { soc, .. } => Some(soc),
            _ => None,
        }
    }
}

/// What a device contributes to the bus balances, per step.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTerms {
    /// Electrical consumption as `(var, coeff)`; negative coefficients feed the bus.
    pub electric: Vec<Vec<(usize, f64)>>,
    /// Constant electrical consumption (negative for generation).
    pub electric_const: Vec<f64>,
    /// Heat delivered to the building's thermal bus.
    pub heat: Vec<Vec<(usize, f64)>>,
    pub vars: DeviceVars,
}

impl DeviceTerms {
    fn empty(n: usize, vars: DeviceVars) -> Self {
        Self {
            electric: vec![Vec::new(); n],
            electric_const: vec![0.0; n],
            heat: vec![Vec::new(); n],
            vars,
        }
    }
}

/// Append one device's variables, dynamics rows and cost terms to `lp`.
///
/// `soc0` is the starting state for storage devices and ignored otherwise.
pub fn emit_constraints(device: &Device, ctx: &EmitContext<'_>, soc0: f64, lp: &mut LpProblem) -> DeviceTerms {
    let n = ctx.grid.n_steps;
    let dt = ctx.grid.dt();
    match device {
        Device::HeatPump(hp) => {
            let power: Vec<usize> = (0..n)
                .map(|k| lp.add_named_var(format!("hp{k}"), 0.0, 0.0, hp.p_max))
                .collect();
            let mut terms = DeviceTerms::empty(n, DeviceVars::HeatPump { power: power.clone() });
            for k in 0..n {
                terms.electric[k].push((power[k], 1.0));
                terms.heat[k].push((power[k], hp.cop));
            }
            terms
        }
        Device::Boiler(b) => {
            let cost = ctx.fuel_price / b.efficiency * dt;
            let heat: Vec<usize> = (0..n)
                .map(|k| lp.add_named_var(format!("blr{k}"), cost, 0.0, b.q_max))
                .collect();
            let mut terms = DeviceTerms::empty(n, DeviceVars::Boiler { heat: heat.clone() });
            for k in 0..n {
                terms.heat[k].push((heat[k], 1.0));
            }
            terms
        }
        Device::Chp(c) => {
            let cost = ctx.fuel_price * dt;
            let fuel: Vec<usize> = (0..n)
                .map(|k| lp.add_named_var(format!("chp{k}"), cost, 0.0, c.fuel_max))
                .collect();
            let mut terms = DeviceTerms::empty(n, DeviceVars::Chp { fuel: fuel.clone() });
            for k in 0..n {
                terms.electric[k].push((fuel[k], -c.eta_e));
                terms.heat[k].push((fuel[k], c.eta_th));
            }
            terms
        }
        Device::Battery(b) => {
            let mut charge = Vec::with_capacity(n);
            let mut discharge = Vec::with_capacity(n);
            let mut soc = Vec::with_capacity(n);
            for k in 0..n {
                charge.push(lp.add_named_var(format!("bc{k}"), 0.0, 0.0, b.p_charge_max));
                discharge.push(lp.add_named_var(format!("bd{k}"), 0.0, 0.0, b.p_discharge_max));
                soc.push(lp.add_named_var(format!("bs{k}"), 0.0, 0.0, b.capacity));
            }
            for k in 0..n {
                // soc[k] - soc[k-1] - eta_c dt c + dt/eta_d d = 0
                let mut row = vec![(soc[k], 1.0), (charge[k], -b.eta_c * dt), (discharge[k], dt / b.eta_d)];
                let rhs = if k == 0 {
                    soc0
                } else {
                    row.push((soc[k - 1], -1.0));
                    0.0
                };
                lp.add_row(row, Relation::Eq, rhs);
            }
            let mut terms = DeviceTerms::empty(
                n,
                DeviceVars::Battery {
                    charge: charge.clone(),
                    discharge: discharge.clone(),
                    soc,
                },
            );
            for k in 0..n {
                terms.electric[k].push((charge[k], 1.0));
                terms.electric[k].push((discharge[k], -1.0));
            }
            terms
        }
        Device::Tank(t) => {
            let keep = 1.0 - t.standing_loss * dt;
            let mut charge = Vec::with_capacity(n);
            let mut discharge = Vec::with_capacity(n);
            let mut soc = Vec::with_capacity(n);
            for k in 0..n {
                charge.push(lp.add_named_var(format!("tc{k}"), 0.0, 0.0, t.q_charge_max));
                discharge.push(lp.add_named_var(format!("td{k}"), 0.0, 0.0, t.q_charge_max));
                soc.push(lp.add_named_var(format!("ts{k}"), 0.0, 0.0, t.capacity));
            }
            for k in 0..n {
                let mut row = vec![(soc[k], 1.0), (charge[k], -dt), (discharge[k], dt)];
                let rhs = if k == 0 {
                    keep * soc0
                } else {
                    row.push((soc[k - 1], -keep));
                    0.0
                };
                lp.add_row(row, Relation::Eq, rhs);
            }
            let mut terms = DeviceTerms::empty(
                n,
                DeviceVars::Tank {
                    charge: charge.clone(),
                    discharge: discharge.clone(),
                    soc,
                },
            );
            for k in 0..n {
                terms.heat[k].push((charge[k], -1.0));
                terms.heat[k].push((discharge[k], 1.0));
            }
            terms
        }
        Device::Pv(pv) => {
            let mut terms = DeviceTerms::empty(n, DeviceVars::Pv);
            for k in 0..n {
                terms.electric_const[k] = -pv_output(ctx.forecast[k].irradiance, pv);
            }
            terms
        }
    }
}

/// Envelope variables: space heat input, temperature at the end of each
/// step, and the comfort slack.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingVars {
    pub space_heat: Vec<usize>,
    pub temperature: Vec<usize>,
    pub comfort_slack: Vec<usize>,
}

/// Envelope dynamics plus the soft comfort box
/// `comfort_min − s ≤ T ≤ comfort_max + s`, with `s` priced at the comfort penalty.
pub fn emit_building(b: &RcBuilding, ctx: &EmitContext<'_>, t0: f64, lp: &mut LpProblem) -> BuildingVars {
    let n = ctx.grid.n_steps;
    let dt = ctx.grid.dt();
    let keep = 1.0 - dt * b.loss_coefficient / b.heat_capacity;
    let gain = dt / b.heat_capacity;
    let mut vars = BuildingVars {
        space_heat: Vec::with_capacity(n),
        temperature: Vec::with_capacity(n),
        comfort_slack: Vec::with_capacity(n),
    };
    for k in 0..n {
        vars.space_heat
            .push(lp.add_named_var(format!("qs{k}"), 0.0, 0.0, f64::INFINITY));
        vars.temperature
            .push(lp.add_named_var(format!("T{k}"), 0.0, f64::NEG_INFINITY, f64::INFINITY));
        vars.comfort_slack
            .push(lp.add_named_var(format!("sc{k}"), ctx.comfort_penalty * dt, 0.0, f64::INFINITY));
    }
    for k in 0..n {
        let drive = gain * b.loss_coefficient * ctx.forecast[k].t_out;
        let mut row = vec![(vars.temperature[k], 1.0), (vars.space_heat[k], -gain)];
        let rhs = if k == 0 {
            drive + keep * t0
        } else {
            row.push((vars.temperature[k - 1], -keep));
            drive
        };
        lp.add_row(row, Relation::Eq, rhs);

        let hour = ctx.grid.hour_of(k + 1) as usize;
        if b.comfort_min[hour].is_finite() {
            lp.add_row(
                vec![(vars.temperature[k], 1.0), (vars.comfort_slack[k], 1.0)],
                Relation::Ge,
                b.comfort_min[hour],
            );
        }
        if b.comfort_max[hour].is_finite() {
            lp.add_row(
                vec![(vars.temperature[k], 1.0), (vars.comfort_slack[k], -1.0)],
                Relation::Le,
                b.comfort_max[hour],
            );
        }
    }
    vars
}
