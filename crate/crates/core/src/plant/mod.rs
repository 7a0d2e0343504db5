//! Closed-loop receding-horizon simulation.
//!
//! Controllers plan on forecasts; the plant evolves on realized series. At
//! each midnight a day-ahead round fixes the committed profile for the next
//! 24 hours. Every hour a fresh round runs from the measured state, the band
//! binding only the hours left in the current day, and the first move of
//! each plan is applied to the true plant.

mod metrics;
mod output;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{
    commit_day_ahead, run_local, run_round, ControllerHandle, ConvergenceConfig, CoordError, IsoState, LocalController,
    RoundContext,
};
use crate::devices::{
    check_setpoint, step_battery, step_building, step_tank, Device, DeviceError, ExogenousSample, ExogenousSeries,
};
use crate::lp::TOL_FEAS;
use crate::mpc::{ControllerId, ControllerModel, DeviceSetpoint, PlantState, Setpoints};
use crate::profile::{deadband_excess, tariff_price, Band, Profile, TariffSchedule};

pub use metrics::{compute_metrics, MetricsTable};
pub use output::{format_metrics, read_metrics, read_output_dir, write_metrics, write_output_dir, OutputError};

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("day {day} hour {hour}: {source}")]
    Round {
        day: usize,
        hour: usize,
        source: CoordError,
    },
    #[error("day {day} hour {hour}, controller {controller}: {source}")]
    Device {
        day: usize,
        hour: usize,
        controller: ControllerId,
        source: DeviceError,
    },
    #[error("day {day} hour {hour}, controller {controller}: set points do not match the fleet")]
    Setpoints {
        day: usize,
        hour: usize,
        controller: ControllerId,
    },
    #[error("configuration: {0}")]
    Config(String),
}

/// AR(1) forecast errors: `e(k) = φ·e(k−1) + √(1−φ²)·σ·w(k)`, so `σ` is the
/// stationary standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub phi: f64,
    /// kW, per building.
    pub base_load_sigma: f64,
    /// kW/m², shared by all buildings.
    pub irradiance_sigma: f64,
}

fn default_phi() -> f64 {
    0.8
}

impl NoiseConfig {
    pub fn perfect() -> Self {
        Self {
            phi: default_phi(),
            base_load_sigma: 0.0,
            irradiance_sigma: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            phi: default_phi(),
            base_load_sigma: 0.3,
            irradiance_sigma: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub coordination: bool,
    pub days: usize,
    pub seed: u64,
    pub horizon: usize,
    pub half_width: f64,
    pub global_limit: Option<f64>,
    pub convergence: ConvergenceConfig,
    pub noise: NoiseConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            coordination: true,
            days: 3,
            seed: 1,
            horizon: 24,
            half_width: crate::profile::DEFAULT_BAND_HALF_WIDTH,
            global_limit: None,
            convergence: ConvergenceConfig::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: String| Err(PlantError::Config(m));
        if self.days == 0 {
            return bad("days must be >= 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.coordination && self.horizon < 24 {
            return bad(format!(
                "coordinated runs need a horizon of at least 24 steps, got {}",
                self.horizon
            ));
        }
        if !(self.half_width >= 0.0 && self.half_width.is_finite()) {
            return bad(format!("half_width must be >= 0, got {}", self.half_width));
        }
        if let Some(l) = self.global_limit {
            if !(l > 0.0) {
                return bad(format!("global_limit must be > 0, got {l}"));
            }
        }
        if !(0.0..1.0).contains(&self.noise.phi) {
            return bad(format!("noise phi must be in [0, 1), got {}", self.noise.phi));
        }
        if self.noise.base_load_sigma < 0.0 || self.noise.irradiance_sigma < 0.0 {
            return bad("noise sigmas must be >= 0".into());
        }
        self.convergence
            .validate()
            .map_err(|e| PlantError::Config(e.to_string()))
    }
}

/// True state of every building plus the clock.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub step: usize,
    pub buildings: Vec<PlantState>,
}

/// Result of applying one step's set points to a building.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PlantState,
    /// kW at the bus, positive when importing.
    pub net_load: f64,
    /// kW of fuel burned.
    pub fuel: f64,
}

/// Advance one building by one step under the given set points.
pub fn apply_step(
    model: &ControllerModel,
    state: &PlantState,
    sp: &Setpoints,
    sample: &ExogenousSample,
    dt: f64,
) -> Result<StepOutcome, DeviceError> {
    if sp.devices.len() != model.devices.len() || state.storage.len() != model.storage_count() {
        return Err(DeviceError::InvalidParameter(
            "set points do not match the fleet".into(),
        ));
    }
    check_setpoint("space heat", sp.space_heat, f64::INFINITY)?;
    let mut storage = Vec::with_capacity(state.storage.len());
    let mut socs = state.storage.iter();
    let mut fuel = 0.0;
    for (d, s) in model.devices.iter().zip(&sp.devices) {
        match (d, *s) {
            (Device::HeatPump(hp), DeviceSetpoint::HeatPump { power }) => {
                check_setpoint("heat pump power", power, hp.p_max)?
            }
            (Device::Boiler(b), DeviceSetpoint::Boiler { heat }) => check_setpoint("boiler heat", heat, b.q_max)?,
            (Device::Chp(c), DeviceSetpoint::Chp { fuel }) => check_setpoint("chp fuel", fuel, c.fuel_max)?,
            (Device::Battery(b), DeviceSetpoint::Battery { charge, discharge }) => {
                let soc = *socs.next().expect("storage count checked");
                storage.push(step_battery(soc, charge, discharge, dt, b)?);
            }
            (Device::Tank(t), DeviceSetpoint::Tank { charge, discharge }) => {
                let soc = *socs.next().expect("storage count checked");
                storage.push(step_tank(soc, charge, discharge, dt, t)?);
            }
            (Device::Pv(_), DeviceSetpoint::Pv) => {}
            _ => {
                return Err(DeviceError::InvalidParameter(format!(
                    "set point {s:?} does not fit a {}",
                    d.name()
                )))
            }
        }
        fuel += s.fuel(d);
    }
    Ok(StepOutcome {
        state: PlantState {
            temperature: step_building(state.temperature, sp.space_heat, sample.t_out, dt, &model.building),
            storage,
        },
        net_load: sp.net_load(&model.devices, sample),
        fuel,
    })
}

/// One logged forecast error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub step: usize,
    pub bus: ControllerId,
    pub base_load_error: f64,
    pub irradiance_error: f64,
}

/// Realized series for `n_steps` absolute steps: forecast plus AR(1) noise
/// on base load (per building) and irradiance (shared). Irradiance is only
/// perturbed where the forecast is positive, and both stay non-negative.
pub fn realize(
    models: &[ControllerModel],
    n_steps: usize,
    noise: &NoiseConfig,
    seed: u64,
) -> (Vec<ExogenousSeries>, Vec<NoiseRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (1.0 - noise.phi * noise.phi).sqrt();
    let mut e_irr = 0.0;
    let mut e_load = vec![0.0; models.len()];
    let mut out: Vec<ExogenousSeries> = models
        .iter()
        .map(|_| ExogenousSeries {
            t_out: Vec::with_capacity(n_steps),
            irradiance: Vec::with_capacity(n_steps),
            base_load: Vec::with_capacity(n_steps),
            dhw_draw: Vec::with_capacity(n_steps),
        })
        .collect();
    let mut log = Vec::with_capacity(n_steps * models.len());
    for k in 0..n_steps {
        let w: f64 = StandardNormal.sample(&mut rng);
        e_irr = noise.phi * e_irr + scale * noise.irradiance_sigma * w;
        for (b, m) in models.iter().enumerate() {
            let w: f64 = StandardNormal.sample(&mut rng);
            e_load[b] = noise.phi * e_load[b] + scale * noise.base_load_sigma * w;
            let f = m.forecast.at(k);
            let irradiance = if f.irradiance > 0.0 {
                (f.irradiance + e_irr).max(0.0)
            } else {
                0.0
            };
            let base_load = (f.base_load + e_load[b]).max(0.0);
            let s = &mut out[b];
            s.t_out.push(f.t_out);
            s.irradiance.push(irradiance);
            s.base_load.push(base_load);
            s.dhw_draw.push(f.dhw_draw);
            log.push(NoiseRecord {
                step: k,
                bus: m.id,
                base_load_error: base_load - f.base_load,
                irradiance_error: irradiance - f.irradiance,
            });
        }
    }
    (out, log)
}

/// An excess no larger than the solver's feasibility tolerance is rounding
/// at an active bound, not a real overshoot.
fn resolved(excess: f64) -> f64 {
    if excess <= TOL_FEAS {
        0.0
    } else {
        excess
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Aggregate the coordination round planned for this step.
    pub scheduled: f64,
    /// Aggregate actually drawn at the slack bus.
    pub realized: f64,
    /// Committed value for this step, when a band exists.
    pub committed: Option<f64>,
    /// Distance outside the band; excess within the LP feasibility
    /// tolerance is recorded as zero.
    pub violation: f64,
    /// `max(0, |realized| − global_limit)`, zero without a limit and zero
    /// within the LP feasibility tolerance.
    pub global_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub step: usize,
    pub bus: ControllerId,
    /// °C at the end of the step.
    pub temperature: f64,
    pub net_load: f64,
    /// CHF for imports, exports and fuel during the step.
    pub opex: f64,
    /// K·h outside the comfort box during the step.
    pub discomfort: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocRecord {
    pub step: usize,
    pub bus: ControllerId,
    /// Position of the device in the building's fleet.
    pub device: usize,
    pub kind: String,
    /// kWh at the end of the step.
    pub soc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundPhase {
    DayAhead,
    Intraday,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub step: usize,
    pub phase: RoundPhase,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
}

/// Settings a run was made with, persisted alongside its logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tariff: TariffSchedule,
    pub config: SimConfig,
    pub buses: Vec<ControllerId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub meta: RunMeta,
    pub steps: Vec<StepRecord>,
    pub buildings: Vec<BuildingRecord>,
    pub storage: Vec<SocRecord>,
    pub rounds: Vec<RoundRecord>,
    pub noise: Vec<NoiseRecord>,
}

impl SimResult {
    pub fn realized_profile(&self) -> Profile {
        Profile::new(self.steps.iter().map(|s| s.realized).collect()).expect("finite")
    }

    pub fn scheduled_profile(&self) -> Profile {
        Profile::new(self.steps.iter().map(|s| s.scheduled).collect()).expect("finite")
    }

    /// Net load per bus at `step`, in registration order.
    pub fn bus_loads(&self, step: usize) -> Vec<(ControllerId, f64)> {
        self.buildings
            .iter()
            .filter(|r| r.step == step)
            .map(|r| (r.bus, r.net_load))
            .collect()
    }
}

/// Run in-process controllers built from `models`.
pub fn run_closed_loop(models: &[ControllerModel], cfg: &SimConfig) -> Result<SimResult, PlantError> {
    let mut locals: Vec<LocalController> = models.iter().cloned().map(LocalController::new).collect();
    locals.sort_by_key(|c| c.model.id);
    let mut handles: Vec<&mut dyn ControllerHandle> =
        locals.iter_mut().map(|c| c as &mut dyn ControllerHandle).collect();
    run_closed_loop_with(models, &mut handles, cfg)
}

/// Run against arbitrary controller handles. `models` supply the true plant
/// and must cover the same buses as `handles`; all controllers must share a
/// tariff.
pub fn run_closed_loop_with(
    models: &[ControllerModel],
    handles: &mut [&mut dyn ControllerHandle],
    cfg: &SimConfig,
) -> Result<SimResult, PlantError> {
    cfg.validate()?;
    let mut models: Vec<&ControllerModel> = models.iter().collect();
    models.sort_by_key(|m| m.id);
    if models.is_empty() {
        return Err(PlantError::Config("no buildings".into()));
    }
    for m in &models {
        m.validate().map_err(|e| PlantError::Config(e.to_string()))?;
    }
    let tariff = models[0].tariff.clone();
    if models.iter().any(|m| m.tariff != tariff) {
        return Err(PlantError::Config("all buildings must share one tariff".into()));
    }
    let ids: Vec<ControllerId> = models.iter().map(|m| m.id).collect();
    let mut iso = IsoState::new(ids.clone(), cfg.horizon).map_err(|e| PlantError::Config(e.to_string()))?;

    let n_steps = cfg.days * 24;
    let owned: Vec<ControllerModel> = models.iter().map(|m| (*m).clone()).collect();
    let (realized, noise) = realize(&owned, n_steps, &cfg.noise, cfg.seed);
    let mut world = WorldState {
        step: 0,
        buildings: models.iter().map(|m| m.initial_state()).collect(),
    };
    let dt = 1.0;

    let mut steps = Vec::with_capacity(n_steps);
    let mut buildings = Vec::with_capacity(n_steps * models.len());
    let mut storage = Vec::new();
    let mut rounds = Vec::new();
    let mut committed: Option<Band> = None;

    for k in 0..n_steps {
        let (day, hour) = (k / 24, k % 24);
        let round_err = |source| PlantError::Round { day, hour, source };
        if cfg.coordination && hour == 0 {
            let ctx = RoundContext {
                k0: k,
                states: world.buildings.clone(),
                band: None,
                band_steps: 0,
                global_limit: cfg.global_limit,
            };
            let r = run_round(handles, &mut iso, &cfg.convergence, &ctx).map_err(round_err)?;
            rounds.push(RoundRecord {
                step: k,
                phase: RoundPhase::DayAhead,
                iterations: r.iterations_used,
                converged: r.converged,
                final_change: r.final_change,
            });
            let mut day_profile = r.aggregate.values().to_vec();
            day_profile.resize(24, 0.0);
            committed = Some(
                commit_day_ahead(
                    &crate::coordinator::RoundResult {
                        aggregate: Profile::new(day_profile).expect("finite"),
                        ..r
                    },
                    cfg.half_width,
                )
                .expect("validated half width"),
            );
        }

        let round = if cfg.coordination {
            let band = committed.as_ref().expect("day-ahead round ran at midnight");
            let remaining = 24 - hour;
            let mut window = band.committed.values()[hour..].to_vec();
            window.resize(cfg.horizon, 0.0);
            let ctx = RoundContext {
                k0: k,
                states: world.buildings.clone(),
                band: Some(Band::new(Profile::new(window).expect("finite"), band.half_width).expect("valid")),
                band_steps: remaining.min(cfg.horizon),
                global_limit: cfg.global_limit,
            };
            run_round(handles, &mut iso, &cfg.convergence, &ctx).map_err(round_err)?
        } else {
            run_local(handles, &mut iso, k, &world.buildings).map_err(round_err)?
        };
        rounds.push(RoundRecord {
            step: k,
            phase: RoundPhase::Intraday,
            iterations: round.iterations_used,
            converged: round.converged,
            final_change: round.final_change,
        });

        let price = tariff_price(&tariff, hour as u32);
        let mut total = 0.0;
        for (b, m) in models.iter().enumerate() {
            let sp = Setpoints::from_values(&m.devices, &round.first_moves[b]).ok_or(PlantError::Setpoints {
                day,
                hour,
                controller: m.id,
            })?;
            let sample = realized[b].at(k);
            let out = apply_step(m, &world.buildings[b], &sp, &sample, dt).map_err(|source| PlantError::Device {
                day,
                hour,
                controller: m.id,
                source,
            })?;
            let end_hour = (hour + 1) % 24;
            let t = out.state.temperature;
            let discomfort = ((m.building.comfort_min[end_hour] - t).max(0.0)
                + (t - m.building.comfort_max[end_hour]).max(0.0))
                * dt;
            let opex = (price * out.net_load.max(0.0) - tariff.export_price * (-out.net_load).max(0.0)
                + tariff.fuel_price * out.fuel)
                * dt;
            buildings.push(BuildingRecord {
                step: k,
                bus: m.id,
                temperature: t,
                net_load: out.net_load,
                opex,
                discomfort,
            });
            let mut soc_iter = out.state.storage.iter();
            for (j, d) in m.devices.iter().enumerate() {
                if d.is_storage() {
                    storage.push(SocRecord {
                        step: k,
                        bus: m.id,
                        device: j,
                        kind: d.name().to_string(),
                        soc: *soc_iter.next().expect("one soc per storage device"),
                    });
                }
            }
            total += out.net_load;
            world.buildings[b] = out.state;
        }
        world.step = k + 1;

        let committed_k = committed.as_ref().map(|b| b.committed.get(hour));
        steps.push(StepRecord {
            step: k,
            scheduled: round.aggregate.get(0),
            realized: total,
            committed: committed_k,
            violation: committed_k.map_or(0.0, |c| resolved(deadband_excess(total - c, cfg.half_width))),
            global_excess: cfg.global_limit.map_or(0.0, |l| resolved((total.abs() - l).max(0.0))),
        });
    }

    Ok(SimResult {
        meta: RunMeta {
            tariff,
            config: cfg.clone(),
            buses: ids,
        },
        steps,
        buildings,
        storage,
        rounds,
        noise,
    })
}
