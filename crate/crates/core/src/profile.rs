//! Time discretization, power profiles, tariff schedules and the committed
//! band shared by every other module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value {value} at step {step}")]
    NonFinite { step: usize, value: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid tariff: {0}")]
    InvalidTariff(String),
}

/// Uniform sampling grid of a prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_hour: u32,
    pub step_hours: f64,
    pub n_steps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            start_hour: 0,
            step_hours: 1.0,
            n_steps: 24,
        }
    }
}

impl TimeGrid {
    pub fn new(start_hour: u32, step_hours: f64, n_steps: usize) -> Result<Self, ProfileError> {
        if n_steps == 0 {
            return Err(ProfileError::InvalidGrid("n_steps must be at least 1".into()));
        }
        if !(step_hours > 0.0 && step_hours.is_finite()) {
            return Err(ProfileError::InvalidGrid(format!(
                "step_hours must be positive, got {step_hours}"
            )));
        }
        Ok(Self {
            start_hour: start_hour % 24,
            step_hours,
            n_steps,
        })
    }

    /// Hourly grid of `n_steps` starting at absolute step `k0` (hour of day
    /// is `k0 mod 24`).
    pub fn hourly_from(k0: usize, n_steps: usize) -> Self {
        Self {
            start_hour: (k0 % 24) as u32,
            step_hours: 1.0,
            n_steps,
        }
    }

    /// Hour of day at the start of step `k`, wrapping across midnight.
    pub fn hour_of(&self, k: usize) -> u32 {
        let elapsed = (k as f64 * self.step_hours).floor() as u64;
        ((self.start_hour as u64 + elapsed) % 24) as u32
    }

    pub fn dt(&self) -> f64 {
        self.step_hours
    }
}

/// Power values (kW) over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(Vec<f64>);

impl Profile {
    pub fn new(values: Vec<f64>) -> Result<Self, ProfileError> {
        if let Some((step, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ProfileError::NonFinite { step, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    pub fn check_len(&self, expected: usize) -> Result<(), ProfileError> {
        if self.0.len() == expected {
            Ok(())
        } else {
            Err(ProfileError::LengthMismatch {
                expected,
                got: self.0.len(),
            })
        }
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &Profile) -> Result<Profile, ProfileError> {
        other.check_len(self.len())?;
        Ok(Profile(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Profile) -> Result<Profile, ProfileError> {
        other.check_len(self.len())?;
        Ok(Profile(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// Infinity norm of `self - other`.
    pub fn max_abs_diff(&self, other: &Profile) -> Result<f64, ProfileError> {
        other.check_len(self.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Shift the profile `by` steps towards the past, holding the last value
    /// to refill the tail. Used to realign a plan computed at an earlier step.
    pub fn shifted(&self, by: usize) -> Profile {
        let n = self.0.len();
        if n == 0 {
            return self.clone();
        }
        let last = self.0[n - 1];
        Profile((0..n).map(|k| self.0.get(k + by).copied().unwrap_or(last)).collect())
    }
}

impl From<Profile> for Vec<f64> {
    fn from(p: Profile) -> Self {
        p.0
    }
}

/// Element-wise sum of profiles, accumulated in list order.
///
/// An empty list yields an empty profile; use [`aggregate_n`] when the
/// horizon length must be preserved for an empty set.
pub fn aggregate(profiles: &[Profile]) -> Result<Profile, ProfileError> {
    let n = profiles.first().map_or(0, Profile::len);
    aggregate_n(profiles, n)
}

/// As [`aggregate`] but with an explicit horizon length, so that the empty
/// sum is the zero profile of length `n`.
pub fn aggregate_n(profiles: &[Profile], n: usize) -> Result<Profile, ProfileError> {
    let mut acc = vec![0.0; n];
    for p in profiles {
        p.check_len(n)?;
        for (a, v) in acc.iter_mut().zip(&p.0) {
            *a += v;
        }
    }
    Ok(Profile(acc))
}

/// Piecewise-constant import price by hour of day plus the flat prices and
/// penalty weights used by the controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub name: String,
    /// CHF/kWh_e, indexed by hour of day.
    pub import_price: [f64; 24],
    /// CHF/kWh_e paid for exported energy.
    pub export_price: f64,
    /// CHF/kWh of fuel energy.
    pub fuel_price: f64,
    /// Comfort violation cost, CHF/(K·h).
    pub comfort_penalty: f64,
    /// Committed-profile non-compliance cost, CHF/kW_e per hour.
    pub grid_penalty: f64,
    /// Global power limit excess cost, CHF/kW_e per hour.
    pub global_penalty: f64,
}

pub const DEFAULT_FUEL_PRICE: f64 = 0.08;
pub const DEFAULT_COMFORT_PENALTY: f64 = 10.0;
pub const DEFAULT_GRID_PENALTY: f64 = 0.5;
pub const DEFAULT_GLOBAL_PENALTY: f64 = 0.25;

impl TariffSchedule {
    fn two_level(name: &str, high: f64, low: f64, is_high: impl Fn(u32) -> bool) -> Self {
        let mut import_price = [0.0; 24];
        for (h, p) in import_price.iter_mut().enumerate() {
            *p = if is_high(h as u32) { high } else { low };
        }
        Self {
            name: name.to_string(),
            import_price,
            export_price: 0.1,
            fuel_price: DEFAULT_FUEL_PRICE,
            comfort_penalty: DEFAULT_COMFORT_PENALTY,
            grid_penalty: DEFAULT_GRID_PENALTY,
            global_penalty: DEFAULT_GLOBAL_PENALTY,
        }
    }

    /// Standard day-night tariff: 0.24 from 07:00 to 22:00, 0.13 otherwise.
    pub fn day_night() -> Self {
        Self::two_level("day-night", 0.24, 0.13, |h| (7..22).contains(&h))
    }

    /// Day-ahead tariff rewarding midday imports: 0.21 from 17:00 to 11:00,
    /// 0.16 from 11:00 to 17:00.
    pub fn ahead24() -> Self {
        Self::two_level("ahead24", 0.21, 0.16, |h| !(11..17).contains(&h))
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "day-night" | "day_night" => Some(Self::day_night()),
            "ahead24" | "24h-ahead" => Some(Self::ahead24()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let scalars = [
            ("export_price", self.export_price),
            ("fuel_price", self.fuel_price),
            ("comfort_penalty", self.comfort_penalty),
            ("grid_penalty", self.grid_penalty),
            ("global_penalty", self.global_penalty),
        ];
        for (field, v) in scalars {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ProfileError::InvalidTariff(format!(
                    "{field} must be a non-negative number, got {v}"
                )));
            }
        }
        for (h, &p) in self.import_price.iter().enumerate() {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(ProfileError::InvalidTariff(format!(
                    "import price at hour {h} must be non-negative, got {p}"
                )));
            }
            if p < self.export_price {
                return Err(ProfileError::InvalidTariff(format!(
                    "import price {p} at hour {h} is below the export price {}",
                    self.export_price
                )));
            }
        }
        Ok(())
    }

    pub fn max_import_price(&self) -> f64 {
        self.import_price.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Hours whose import price is below the daily maximum.
    pub fn is_low_tariff(&self, hour: u32) -> bool {
        tariff_price(self, hour) < self.max_import_price()
    }
}

/// Import price in CHF/kWh_e for an hour of day.
///
/// # Panics
/// If `hour` is not in `0..24`.
pub fn tariff_price(schedule: &TariffSchedule, hour: u32) -> f64 {
    assert!(hour < 24, "hour of day out of range: {hour}");
    schedule.import_price[hour as usize]
}

/// Committed aggregate profile with a symmetric tolerance band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub committed: Profile,
    pub half_width: f64,
}

pub const DEFAULT_BAND_HALF_WIDTH: f64 = 2.0;

impl Band {
    pub fn new(committed: Profile, half_width: f64) -> Result<Self, ProfileError> {
        if !(half_width >= 0.0 && half_width.is_finite()) {
            return Err(ProfileError::InvalidGrid(format!(
                "band half width must be non-negative, got {half_width}"
            )));
        }
        Ok(Self { committed, half_width })
    }

    pub fn lower(&self, k: usize) -> f64 {
        self.committed.get(k) - self.half_width
    }

    pub fn upper(&self, k: usize) -> f64 {
        self.committed.get(k) + self.half_width
    }
}

/// Per-step distance outside the band, `max(0, |actual - committed| - half_width)`.
pub fn band_violation(actual: &Profile, band: &Band) -> Result<Profile, ProfileError> {
    band.committed.check_len(actual.len())?;
    Ok(Profile(
        actual
            .0
            .iter()
            .zip(&band.committed.0)
            .map(|(a, c)| deadband_excess(*a - *c, band.half_width))
            .collect(),
    ))
}

/// `max(0, |deviation| - half_width)`.
pub fn deadband_excess(deviation: f64, half_width: f64) -> f64 {
    (deviation.abs() - half_width).max(0.0)
}
