//! Scenario files: a TOML document describing the fleet, the feeder and the
//! run defaults, with weather and demand series in sibling CSV files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::ConvergenceConfig;
use crate::devices::{Device, ExogenousSeries, RcBuilding};
use crate::mpc::{ControllerId, ControllerModel};
use crate::plant::{NoiseConfig, SimConfig};
use crate::powerflow::Network;
use crate::profile::{TariffSchedule, DEFAULT_BAND_HALF_WIDTH};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("series {path}: {message}")]
    Series { path: PathBuf, message: String },
}

/// Which demand columns of the series files a building uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadClass {
    Sfh,
    Mfh,
}

fn default_t_init() -> f64 {
    20.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingSpec {
    pub bus: ControllerId,
    pub name: String,
    pub class: LoadClass,
    /// kWh/K
    pub heat_capacity: f64,
    /// kW/K
    pub loss_coefficient: f64,
    #[serde(default = "default_t_init")]
    pub t_init: f64,
    /// °C per hour of day; defaults to 17 °C at night and 20 °C from 07:00 to 22:00.
    #[serde(default)]
    pub comfort_min: Option<Vec<f64>>,
    /// °C per hour of day; defaults to 24 °C.
    #[serde(default)]
    pub comfort_max: Option<Vec<f64>>,
    /// Multiplier on the class base load column.
    #[serde(default = "one")]
    pub load_scale: f64,
    /// Multiplier on the class hot-water column.
    #[serde(default = "one")]
    pub dhw_scale: f64,
    pub devices: Vec<Device>,
}

impl BuildingSpec {
    fn comfort(
        values: &Option<Vec<f64>>,
        default: [f64; 24],
        field: &str,
        bus: ControllerId,
    ) -> Result<[f64; 24], ScenarioError> {
        match values {
            None => Ok(default),
            Some(v) => v.as_slice().try_into().map_err(|_| {
                ScenarioError::Invalid(format!("building {bus}: {field} needs 24 values, got {}", v.len()))
            }),
        }
    }

    pub fn building(&self) -> Result<RcBuilding, ScenarioError> {
        let (min, max) = RcBuilding::default_comfort();
        Ok(RcBuilding {
            heat_capacity: self.heat_capacity,
            loss_coefficient: self.loss_coefficient,
            comfort_min: Self::comfort(&self.comfort_min, min, "comfort_min", self.bus)?,
            comfort_max: Self::comfort(&self.comfort_max, max, "comfort_max", self.bus)?,
            t_init: self.t_init,
        })
    }
}

fn default_tariff() -> String {
    "day-night".into()
}

fn default_season() -> String {
    "winter".into()
}

fn default_horizon() -> usize {
    24
}

fn default_half_width() -> f64 {
    DEFAULT_BAND_HALF_WIDTH
}

fn default_days() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tariff")]
    pub tariff: String,
    #[serde(default = "default_season")]
    pub season: String,
    #[serde(default = "default_days")]
    pub days: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default)]
    pub global_limit: Option<f64>,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Season name to CSV path, relative to the scenario file.
    pub series: BTreeMap<String, PathBuf>,
    pub network: Network,
    pub buildings: Vec<BuildingSpec>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One season's series: shared weather plus demand per load class.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonSeries {
    pub t_out: Vec<f64>,
    pub irradiance: Vec<f64>,
    pub load: BTreeMap<LoadClass, Vec<f64>>,
    pub dhw: BTreeMap<LoadClass, Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesRow {
    step: usize,
    t_out_c: f64,
    irradiance_kw_m2: f64,
    load_sfh_kw: f64,
    load_mfh_kw: f64,
    dhw_sfh_kw: f64,
    dhw_mfh_kw: f64,
}

impl SeasonSeries {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let err = |message: String| ScenarioError::Series {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
        let mut s = SeasonSeries {
            t_out: vec![],
            irradiance: vec![],
            load: BTreeMap::new(),
            dhw: BTreeMap::new(),
        };
        for (i, row) in reader.deserialize::<SeriesRow>().enumerate() {
            let row = row.map_err(|e| err(e.to_string()))?;
            if row.step != i {
                return Err(err(format!("row {} has step {}, expected {i}", i + 1, row.step)));
            }
            let values = [
                row.t_out_c,
                row.irradiance_kw_m2,
                row.load_sfh_kw,
                row.load_mfh_kw,
                row.dhw_sfh_kw,
                row.dhw_mfh_kw,
            ];
            if values.iter().any(|v| !v.is_finite()) || values[1..].iter().any(|&v| v < 0.0) {
                return Err(err(format!("step {i}: values must be finite and demands non-negative")));
            }
            s.t_out.push(row.t_out_c);
            s.irradiance.push(row.irradiance_kw_m2);
            s.load.entry(LoadClass::Sfh).or_default().push(row.load_sfh_kw);
            s.load.entry(LoadClass::Mfh).or_default().push(row.load_mfh_kw);
            s.dhw.entry(LoadClass::Sfh).or_default().push(row.dhw_sfh_kw);
            s.dhw.entry(LoadClass::Mfh).or_default().push(row.dhw_mfh_kw);
        }
        if s.t_out.is_empty() {
            return Err(err("no rows".into()));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.t_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_out.is_empty()
    }

    /// Forecast series for one building.
    pub fn for_building(&self, spec: &BuildingSpec) -> ExogenousSeries {
        ExogenousSeries {
            t_out: self.t_out.clone(),
            irradiance: self.irradiance.clone(),
            base_load: self.load[&spec.class].iter().map(|v| v * spec.load_scale).collect(),
            dhw_draw: self.dhw[&spec.class].iter().map(|v| v * spec.dhw_scale).collect(),
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base).map_err(|e| match e {
            ScenarioError::Parse { message, .. } => ScenarioError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: PathBuf::from("<scenario>"),
            message: e.to_string(),
        })?;
        s.base_dir = base_dir.to_path_buf();
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.buildings.is_empty() {
            return bad("no buildings".into());
        }
        if TariffSchedule::by_name(&self.tariff).is_none() {
            return bad(format!("unknown tariff '{}'", self.tariff));
        }
        if !self.series.contains_key(&self.season) {
            return bad(format!("season '{}' has no series file", self.season));
        }
        self.network
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let buses = self.network.buses();
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.buildings {
            if !seen.insert(b.bus) {
                return bad(format!("bus {} has two buildings", b.bus));
            }
            if b.bus == self.network.slack_bus || !buses.contains(&b.bus) {
                return bad(format!(
                    "building {} sits on bus {}, which is not a load bus",
                    b.name, b.bus
                ));
            }
            if !(b.load_scale >= 0.0 && b.dhw_scale >= 0.0) {
                return bad(format!("building {}: scales must be >= 0", b.name));
            }
            let building = b.building()?;
            building
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("building {}: {e}", b.name)))?;
            for d in &b.devices {
                d.validate()
                    .map_err(|e| ScenarioError::Invalid(format!("building {}: {e}", b.name)))?;
            }
        }
        self.sim_config(true)
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn series_path(&self, season: &str) -> Result<PathBuf, ScenarioError> {
        let rel = self
            .series
            .get(season)
            .ok_or_else(|| ScenarioError::Invalid(format!("season '{season}' has no series file")))?;
        Ok(self.base_dir.join(rel))
    }

    pub fn load_season(&self, season: &str) -> Result<SeasonSeries, ScenarioError> {
        SeasonSeries::load(&self.series_path(season)?)
    }

    /// Controllers for every building, ordered by bus.
    pub fn controllers(
        &self,
        season: &SeasonSeries,
        tariff: &TariffSchedule,
    ) -> Result<Vec<ControllerModel>, ScenarioError> {
        let mut out = Vec::with_capacity(self.buildings.len());
        for b in &self.buildings {
            let model = ControllerModel {
                id: b.bus,
                name: b.name.clone(),
                building: b.building()?,
                devices: b.devices.clone(),
                forecast: season.for_building(b),
                tariff: tariff.clone(),
            };
            model
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("building {}: {e}", b.name)))?;
            out.push(model);
        }
        out.sort_by_key(|m| m.id);
        Ok(out)
    }

    pub fn tariff_schedule(&self) -> TariffSchedule {
        TariffSchedule::by_name(&self.tariff).expect("validated tariff name")
    }

    pub fn sim_config(&self, coordination: bool) -> SimConfig {
        SimConfig {
            coordination,
            days: self.days,
            seed: self.seed,
            horizon: self.horizon,
            half_width: self.half_width,
            global_limit: self.global_limit,
            convergence: self.convergence,
            noise: self.noise,
        }
    }
}
