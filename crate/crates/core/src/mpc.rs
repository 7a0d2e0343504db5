//! Per-building MPC: builds the controller's linear program from its devices,
//! forecasts and the coordination signals, solves it, and reads back a plan.
//!
//! The objective has three parts:
//!
//! * operating cost: imports at the hourly price, exports at the export
//!   price, fuel for boilers and CHP units;
//! * comfort: a slack `s(k) >= 0` softens the comfort box and costs
//!   `comfort_penalty · s(k) · dt`;
//! * grid compliance: the aggregate `û(k) + σ(k)` may drift inside the
//!   committed band for free, and pays `grid_penalty · dt` per kW outside it.
//!
//! When a global limit is given, `|û(k) + σ(k)| <= limit` is a hard row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{
    emit_building, emit_constraints, Device, DeviceError, DeviceTerms, DeviceVars, EmitContext, ExogenousSample,
    ExogenousSeries, RcBuilding,
};
use crate::lp::{solve_lp, LpError, LpProblem, LpStatus, Relation};
use crate::profile::{tariff_price, Band, Profile, ProfileError, TariffSchedule, TimeGrid};

/// Terminal storage target as a fraction of the starting SoC.
pub const TERMINAL_FRACTION: f64 = 0.5;
/// CHF per kWh short of the terminal storage target.
pub const TERMINAL_PENALTY: f64 = 0.01;
/// CHF/kW·h on global-limit excess when the hard limit has to be relaxed.
pub const ELASTIC_LIMIT_PENALTY: f64 = 1000.0;
/// CHF/kW·h on departures of `û(k)` from the anchor plan.
pub const PROXIMAL_WEIGHT: f64 = 1e-3;

pub type ControllerId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("controller {controller}: problem is infeasible")]
    Infeasible { controller: ControllerId },
    #[error("controller {controller}: problem is unbounded")]
    Unbounded { controller: ControllerId },
    #[error("controller {controller}: {source}")]
    Solver { controller: ControllerId, source: LpError },
    #[error("controller {controller}: {source}")]
    Shape {
        controller: ControllerId,
        source: ProfileError,
    },
    #[error("controller {controller}: {source}")]
    Model {
        controller: ControllerId,
        source: DeviceError,
    },
}

impl MpcError {
    pub fn controller(&self) -> ControllerId {
        match self {
            MpcError::Infeasible { controller }
            | MpcError::Unbounded { controller }
            | MpcError::Solver { controller, .. }
            | MpcError::Shape { controller, .. }
            | MpcError::Model { controller, .. } => *controller,
        }
    }
}

/// One building and its regulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerModel {
    pub id: ControllerId,
    pub name: String,
    pub building: RcBuilding,
    pub devices: Vec<Device>,
    pub forecast: ExogenousSeries,
    pub tariff: TariffSchedule,
}

impl ControllerModel {
    pub fn validate(&self) -> Result<(), MpcError> {
        let model = |source| MpcError::Model {
            controller: self.id,
            source,
        };
        self.building.validate().map_err(model)?;
        for d in &self.devices {
            d.validate().map_err(model)?;
        }
        self.forecast.validate().map_err(model)?;
        self.tariff.validate().map_err(|source| MpcError::Shape {
            controller: self.id,
            source,
        })?;
        let finite_comfort = self
            .building
            .comfort_min
            .iter()
            .chain(&self.building.comfort_max)
            .any(|v| v.is_finite());
        let needs_heat = finite_comfort || self.forecast.dhw_draw.iter().any(|&q| q > 0.0);
        if needs_heat && !self.devices.iter().any(Device::is_heat_source) {
            return Err(model(DeviceError::InvalidParameter(
                "building has comfort bounds or hot water demand but no heat source".into(),
            )));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> PlantState {
        PlantState {
            temperature: self.building.t_init,
            storage: self.devices.iter().filter_map(Device::initial_soc).collect(),
        }
    }

    pub fn storage_count(&self) -> usize {
        self.devices.iter().filter(|d| d.is_storage()).count()
    }
}

/// Measured state handed to the controller: indoor temperature and the SoC
/// of each storage device, in fleet order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub temperature: f64,
    pub storage: Vec<f64>,
}

impl PlantState {
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.storage.len());
        v.push(self.temperature);
        v.extend_from_slice(&self.storage);
        v
    }

    pub fn from_values(values: &[f64]) -> Option<Self> {
        let (&temperature, storage) = values.split_first()?;
        Some(Self {
            temperature,
            storage: storage.to_vec(),
        })
    }
}

/// Coordination signals and state for one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcInput {
    /// Absolute step index of the first horizon step.
    pub k0: usize,
    pub x0: PlantState,
    /// Aggregate plan of every other controller over the horizon.
    pub sigma: Profile,
    /// Committed aggregate and tolerance; binds on the first `band_steps` steps.
    pub band: Option<Band>,
    pub band_steps: usize,
    pub global_limit: Option<f64>,
    /// The controller's own previous plan. Departures from it cost
    /// [`PROXIMAL_WEIGHT`] per kW, so among equal-cost plans the one closest
    /// to the anchor wins.
    pub anchor: Option<Profile>,
}

impl MpcInput {
    /// Uncoordinated input: no σ, no band, no global limit.
    pub fn local(k0: usize, x0: PlantState, horizon: usize) -> Self {
        Self {
            k0,
            x0,
            sigma: Profile::zeros(horizon),
            band: None,
            band_steps: 0,
            global_limit: None,
            anchor: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.sigma.len()
    }
}

/// Device set point for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeviceSetpoint {
    HeatPump { power: f64 },
    Boiler { heat: f64 },
    Chp { fuel: f64 },
    Battery { charge: f64, discharge: f64 },
    Tank { charge: f64, discharge: f64 },
    Pv,
}

impl DeviceSetpoint {
    fn push_values(&self, out: &mut Vec<f64>) {
        match *self {
            DeviceSetpoint::HeatPump { power } => out.push(power),
            DeviceSetpoint::Boiler { heat } => out.push(heat),
            DeviceSetpoint::Chp { fuel } => out.push(fuel),
            DeviceSetpoint::Battery { charge, discharge } | DeviceSetpoint::Tank { charge, discharge } => {
                out.push(charge);
                out.push(discharge);
            }
            DeviceSetpoint::Pv => {}
        }
    }

    fn read(device: &Device, it: &mut impl Iterator<Item = f64>) -> Option<Self> {
        Some(match device {
            Device::HeatPump(_) => DeviceSetpoint::HeatPump { power: it.next()? },
            Device::Boiler(_) => DeviceSetpoint::Boiler { heat: it.next()? },
            Device::Chp(_) => DeviceSetpoint::Chp { fuel: it.next()? },
            Device::Battery(_) => DeviceSetpoint::Battery {
                charge: it.next()?,
                discharge: it.next()?,
            },
            Device::Tank(_) => DeviceSetpoint::Tank {
                charge: it.next()?,
                discharge: it.next()?,
            },
            Device::Pv(_) => DeviceSetpoint::Pv,
        })
    }

    /// Electrical consumption of the device at this set point.
    pub fn electric_draw(&self, device: &Device, sample: &ExogenousSample) -> f64 {
        match (self, device) {
            (DeviceSetpoint::HeatPump { power }, _) => *power,
            (DeviceSetpoint::Chp { fuel }, Device::Chp(c)) => -c.eta_e * fuel,
            (DeviceSetpoint::Battery { charge, discharge }, _) => charge - discharge,
            (DeviceSetpoint::Pv, Device::Pv(pv)) => -crate::devices::pv_output(sample.irradiance, pv),
            _ => 0.0,
        }
    }

    /// Fuel burned, kW.
    pub fn fuel(&self, device: &Device) -> f64 {
        match (self, device) {
            (DeviceSetpoint::Boiler { heat }, Device::Boiler(b)) => heat / b.efficiency,
            (DeviceSetpoint::Chp { fuel }, _) => *fuel,
            _ => 0.0,
        }
    }
}

/// All set points of a building for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setpoints {
    pub space_heat: f64,
    pub devices: Vec<DeviceSetpoint>,
}

impl Setpoints {
    /// Flatten as `[space_heat, device values in fleet order...]`.
    pub fn to_values(&self) -> Vec<f64> {
        let mut out = vec![self.space_heat];
        for d in &self.devices {
            d.push_values(&mut out);
        }
        out
    }

    pub fn from_values(devices: &[Device], values: &[f64]) -> Option<Self> {
        let mut it = values.iter().copied();
        let space_heat = it.next()?;
        let devices = devices
            .iter()
            .map(|d| DeviceSetpoint::read(d, &mut it))
            .collect::<Option<Vec<_>>>()?;
        if it.next().is_some() {
            return None;
        }
        Some(Self { space_heat, devices })
    }

    /// Net electrical load at the bus for the given disturbances.
    pub fn net_load(&self, devices: &[Device], sample: &ExogenousSample) -> f64 {
        let mut net = sample.base_load;
        for (sp, d) in self.devices.iter().zip(devices) {
            net += sp.electric_draw(d, sample);
        }
        net
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Imports minus export revenue plus fuel, CHF.
    pub opex: f64,
    pub comfort: f64,
    pub grid: f64,
    /// Terminal storage shortfall penalty.
    pub terminal: f64,
    /// Elastic global-limit excess; zero unless the hard limit was relaxed.
    pub global_excess: f64,
    /// Distance from the anchor plan.
    pub proximal: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.opex + self.comfort + self.grid + self.terminal + self.global_excess + self.proximal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcPlan {
    pub controller: ControllerId,
    pub k0: usize,
    /// `û(k)`: base load plus device draws minus generation.
    pub net_load: Profile,
    pub import: Vec<f64>,
    pub export: Vec<f64>,
    /// Set points per step.
    pub schedule: Vec<Setpoints>,
    /// Predicted indoor temperature at the end of each step.
    pub temperature: Vec<f64>,
    pub comfort_slack: Vec<f64>,
    /// Predicted SoC at the end of each step, per storage device.
    pub storage: Vec<Vec<f64>>,
    pub cost: CostBreakdown,
    pub objective: f64,
    /// Set when the hard global limit was infeasible and an elastic version
    /// had to be solved instead.
    pub global_limit_relaxed: bool,
    pub pivots: usize,
}

impl MpcPlan {
    pub fn first_setpoints(&self) -> &Setpoints {
        &self.schedule[0]
    }
}

/// Variable indices of a built problem, for reading the solution back.
#[derive(Debug, Clone)]
pub struct ProblemLayout {
    pub grid: TimeGrid,
    pub import: Vec<usize>,
    pub export: Vec<usize>,
    pub building: crate::devices::BuildingVars,
    pub devices: Vec<DeviceTerms>,
    pub band_excess: Vec<(usize, usize)>,
    pub limit_excess: Vec<(usize, usize)>,
    pub terminal: Vec<usize>,
    pub proximal: Vec<(usize, usize)>,
    forecast: Vec<ExogenousSample>,
}

/// Build the controller LP. With `elastic_limit` the global limit rows get
/// penalised excess variables instead of being hard.
pub fn build_problem(model: &ControllerModel, input: &MpcInput) -> Result<(LpProblem, ProblemLayout), MpcError> {
    build_problem_with(model, input, false)
}

fn build_problem_with(
    model: &ControllerModel,
    input: &MpcInput,
    elastic_limit: bool,
) -> Result<(LpProblem, ProblemLayout), MpcError> {
    let id = model.id;
    let n = input.horizon();
    let shape = |source| MpcError::Shape { controller: id, source };
    if n == 0 {
        return Err(shape(ProfileError::InvalidGrid("empty horizon".into())));
    }
    if let Some(band) = &input.band {
        band.committed.check_len(n).map_err(shape)?;
    }
    if let Some(anchor) = &input.anchor {
        anchor.check_len(n).map_err(shape)?;
    }
    if input.x0.storage.len() != model.storage_count() {
        return Err(shape(ProfileError::LengthMismatch {
            expected: model.storage_count(),
            got: input.x0.storage.len(),
        }));
    }
    let grid = TimeGrid::hourly_from(input.k0, n);
    let dt = grid.dt();
    let tariff = &model.tariff;
    let forecast = model.forecast.window(input.k0, n);
    let ctx = EmitContext {
        grid,
        forecast: &forecast,
        fuel_price: tariff.fuel_price,
        comfort_penalty: tariff.comfort_penalty,
    };

    let mut lp = LpProblem::new();
    let mut import = Vec::with_capacity(n);
    let mut export = Vec::with_capacity(n);
    for k in 0..n {
        let price = tariff_price(tariff, grid.hour_of(k));
        import.push(lp.add_named_var(format!("imp{k}"), price * dt, 0.0, f64::INFINITY));
        export.push(lp.add_named_var(format!("exp{k}"), -tariff.export_price * dt, 0.0, f64::INFINITY));
    }

    let building = emit_building(&model.building, &ctx, input.x0.temperature, &mut lp);
    let mut storage_iter = input.x0.storage.iter();
    let mut devices = Vec::with_capacity(model.devices.len());
    for d in &model.devices {
        let soc0 = if d.is_storage() {
            *storage_iter.next().expect("storage count checked")
        } else {
            0.0
        };
        devices.push(emit_constraints(d, &ctx, soc0, &mut lp));
    }

    // Bus balances.
    for k in 0..n {
        let mut row = vec![(import[k], 1.0), (export[k], -1.0)];
        let mut rhs = forecast[k].base_load;
        for t in &devices {
            row.extend(t.electric[k].iter().map(|&(j, a)| (j, -a)));
            rhs += t.electric_const[k];
        }
        lp.add_row(row, Relation::Eq, rhs);

        let mut heat = vec![(building.space_heat[k], -1.0)];
        for t in &devices {
            heat.extend_from_slice(&t.heat[k]);
        }
        lp.add_row(heat, Relation::Eq, forecast[k].dhw_draw);
    }

    // Committed band, deadband L1 penalty.
    let mut band_excess = Vec::new();
    if let Some(band) = &input.band {
        for k in 0..input.band_steps.min(n) {
            let target = band.committed.get(k) - input.sigma.get(k);
            let up = lp.add_named_var(format!("ep{k}"), tariff.grid_penalty * dt, 0.0, f64::INFINITY);
            let down = lp.add_named_var(format!("em{k}"), tariff.grid_penalty * dt, 0.0, f64::INFINITY);
            lp.add_row(
                vec![(import[k], 1.0), (export[k], -1.0), (up, -1.0)],
                Relation::Le,
                target + band.half_width,
            );
            lp.add_row(
                vec![(import[k], 1.0), (export[k], -1.0), (down, 1.0)],
                Relation::Ge,
                target - band.half_width,
            );
            band_excess.push((up, down));
        }
    }

    // Global slack-bus limit.
    let mut limit_excess = Vec::new();
    if let Some(limit) = input.global_limit {
        for k in 0..n {
            let s = input.sigma.get(k);
            let mut upper = vec![(import[k], 1.0), (export[k], -1.0)];
            let mut lower = upper.clone();
            if elastic_limit {
                let up = lp.add_named_var(format!("gp{k}"), ELASTIC_LIMIT_PENALTY * dt, 0.0, f64::INFINITY);
                let down = lp.add_named_var(format!("gm{k}"), ELASTIC_LIMIT_PENALTY * dt, 0.0, f64::INFINITY);
                upper.push((up, -1.0));
                lower.push((down, 1.0));
                limit_excess.push((up, down));
            }
            lp.add_row(upper, Relation::Le, limit - s);
            lp.add_row(lower, Relation::Ge, -limit - s);
        }
    }

    let mut proximal = Vec::new();
    if let Some(anchor) = &input.anchor {
        for k in 0..n {
            let up = lp.add_named_var(format!("dp{k}"), PROXIMAL_WEIGHT * dt, 0.0, f64::INFINITY);
            let down = lp.add_named_var(format!("dm{k}"), PROXIMAL_WEIGHT * dt, 0.0, f64::INFINITY);
            lp.add_row(
                vec![(import[k], 1.0), (export[k], -1.0), (up, -1.0), (down, 1.0)],
                Relation::Eq,
                anchor.get(k),
            );
            proximal.push((up, down));
        }
    }

    // Soft terminal storage target.
    let mut terminal = Vec::new();
    let mut storage_iter = input.x0.storage.iter();
    for t in &devices {
        if let Some(soc) = t.vars.soc() {
            let soc0 = *storage_iter.next().expect("storage count checked");
            let short = lp.add_named_var("term", TERMINAL_PENALTY, 0.0, f64::INFINITY);
            lp.add_row(
                vec![(soc[n - 1], 1.0), (short, 1.0)],
                Relation::Ge,
                TERMINAL_FRACTION * soc0,
            );
            terminal.push(short);
        }
    }

    Ok((
        lp,
        ProblemLayout {
            grid,
            import,
            export,
            building,
            devices,
            band_excess,
            limit_excess,
            terminal,
            proximal,
            forecast,
        },
    ))
}

/// Solve the controller problem and read back the plan.
///
/// If a global limit is set and the hard problem is infeasible (typically
/// because σ alone already exceeds it), the limit is relaxed with a steep
/// penalty and [`MpcPlan::global_limit_relaxed`] is set.
pub fn solve_mpc(model: &ControllerModel, input: &MpcInput) -> Result<MpcPlan, MpcError> {
    let id = model.id;
    let solve = |elastic: bool| -> Result<_, MpcError> {
        let (lp, layout) = build_problem_with(model, input, elastic)?;
        let sol = solve_lp(&lp).map_err(|source| MpcError::Solver { controller: id, source })?;
        Ok((lp, layout, sol))
    };
    let (mut lp, mut layout, mut sol) = solve(false)?;
    let mut relaxed = false;
    if sol.status == LpStatus::Infeasible && input.global_limit.is_some() {
        log::debug!(
            "controller {id}: hard global limit infeasible at step {}, relaxing",
            input.k0
        );
        (lp, layout, sol) = solve(true)?;
        relaxed = true;
    }
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(MpcError::Infeasible { controller: id }),
        LpStatus::Unbounded => return Err(MpcError::Unbounded { controller: id }),
    }
    Ok(extract_plan(
        model,
        input,
        &lp,
        &layout,
        &sol.x,
        sol.objective_value,
        relaxed,
        sol.pivots,
    ))
}

#[allow(clippy::too_many_arguments)]
fn extract_plan(
    model: &ControllerModel,
    input: &MpcInput,
    lp: &LpProblem,
    layout: &ProblemLayout,
    x: &[f64],
    objective: f64,
    relaxed: bool,
    pivots: usize,
) -> MpcPlan {
    let n = input.horizon();
    let dt = layout.grid.dt();
    let tariff = &model.tariff;

    let mut schedule = Vec::with_capacity(n);
    let mut net = Vec::with_capacity(n);
    for k in 0..n {
        let devices: Vec<DeviceSetpoint> = layout
            .devices
            .iter()
            .map(|t| match &t.vars {
                DeviceVars::HeatPump { power } => DeviceSetpoint::HeatPump { power: x[power[k]] },
                DeviceVars::Boiler { heat } => DeviceSetpoint::Boiler { heat: x[heat[k]] },
                DeviceVars::Chp { fuel } => DeviceSetpoint::Chp { fuel: x[fuel[k]] },
                DeviceVars::Battery { charge, discharge, .. } => DeviceSetpoint::Battery {
                    charge: x[charge[k]],
                    discharge: x[discharge[k]],
                },
                DeviceVars::Tank { charge, discharge, .. } => DeviceSetpoint::Tank {
                    charge: x[charge[k]],
                    discharge: x[discharge[k]],
                },
                DeviceVars::Pv => DeviceSetpoint::Pv,
            })
            .collect();
        let sp = Setpoints {
            space_heat: x[layout.building.space_heat[k]],
            devices,
        };
        net.push(sp.net_load(&model.devices, &layout.forecast[k]));
        schedule.push(sp);
    }

    let import: Vec<f64> = layout.import.iter().map(|&j| x[j]).collect();
    let export: Vec<f64> = layout.export.iter().map(|&j| x[j]).collect();

    let mut cost = CostBreakdown::default();
    for k in 0..n {
        let price = tariff_price(tariff, layout.grid.hour_of(k));
        cost.opex += (price * import[k] - tariff.export_price * export[k]) * dt;
        cost.comfort += lp.objective[layout.building.comfort_slack[k]] * x[layout.building.comfort_slack[k]];
    }
    for t in &layout.devices {
        let fuel_vars: &[usize] = match &t.vars {
            DeviceVars::Boiler { heat } => heat,
            DeviceVars::Chp { fuel } => fuel,
            _ => &[],
        };
        cost.opex += fuel_vars.iter().map(|&j| lp.objective[j] * x[j]).sum::<f64>();
    }
    for &(up, down) in &layout.band_excess {
        cost.grid += lp.objective[up] * x[up] + lp.objective[down] * x[down];
    }
    for &(up, down) in &layout.limit_excess {
        cost.global_excess += lp.objective[up] * x[up] + lp.objective[down] * x[down];
    }
    for &(up, down) in &layout.proximal {
        cost.proximal += lp.objective[up] * x[up] + lp.objective[down] * x[down];
    }
    cost.terminal = layout.terminal.iter().map(|&j| lp.objective[j] * x[j]).sum();

    MpcPlan {
        controller: model.id,
        k0: input.k0,
        net_load: Profile::new(net).unwrap_or_else(|_| Profile::zeros(n)),
        import,
        export,
        schedule,
        temperature: layout.building.temperature.iter().map(|&j| x[j]).collect(),
        comfort_slack: layout.building.comfort_slack.iter().map(|&j| x[j]).collect(),
        storage: layout
            .devices
            .iter()
            .filter_map(|t| t.vars.soc().map(|s| s.iter().map(|&j| x[j]).collect()))
            .collect(),
        cost,
        objective,
        global_limit_relaxed: relaxed,
        pivots,
    }
}
