use serde::{Deserialize, Serialize};

use super::SimResult;
use crate::profile::TariffSchedule;

/// Run-level figures computed from the logs alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    /// Mean realized slack power over steps in hours priced below the daily maximum.
    pub mean_low_tariff_kw: f64,
    pub mean_high_tariff_kw: f64,
    /// `Σ |realized|·dt`.
    pub total_energy_kwh: f64,
    pub max_abs_realized_kw: f64,
    pub max_abs_scheduled_kw: f64,
    /// Hour of day of the largest realized import; the first one on ties.
    pub peak_import_hour: u32,
    pub total_violation_kwh: f64,
    /// Mean over the steps with a nonzero violation; 0 when there are none.
    pub mean_violation_kw: f64,
    /// Violation energy over total energy.
    pub relative_violation: f64,
    pub violation_steps: usize,
    pub global_excess_kwh: f64,
    /// `grid_penalty·Σ violation + global_penalty·Σ excess`, CHF.
    pub iso_fee_chf: f64,
    pub opex_chf: f64,
    pub discomfort_kh: f64,
    pub rounds: usize,
    pub nonconverged_rounds: usize,
    pub max_iterations: usize,
    pub mean_iterations: f64,
}

impl MetricsTable {
    /// `(name, value)` pairs in a fixed order, as written to `metrics.csv`.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean_low_tariff_kw", self.mean_low_tariff_kw),
            ("mean_high_tariff_kw", self.mean_high_tariff_kw),
            ("total_energy_kwh", self.total_energy_kwh),
            ("max_abs_realized_kw", self.max_abs_realized_kw),
            ("max_abs_scheduled_kw", self.max_abs_scheduled_kw),
            ("peak_import_hour", self.peak_import_hour as f64),
            ("total_violation_kwh", self.total_violation_kwh),
            ("mean_violation_kw", self.mean_violation_kw),
            ("relative_violation", self.relative_violation),
            ("violation_steps", self.violation_steps as f64),
            ("global_excess_kwh", self.global_excess_kwh),
            ("iso_fee_chf", self.iso_fee_chf),
            ("opex_chf", self.opex_chf),
            ("discomfort_kh", self.discomfort_kh),
            ("rounds", self.rounds as f64),
            ("nonconverged_rounds", self.nonconverged_rounds as f64),
            ("max_iterations", self.max_iterations as f64),
            ("mean_iterations", self.mean_iterations),
        ]
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Table of run metrics. Low-tariff hours are those priced below the
/// tariff's maximum import price.
pub fn compute_metrics(result: &SimResult, tariff: &TariffSchedule) -> MetricsTable {
    let dt = 1.0;
    let steps = &result.steps;
    let hour = |k: usize| (k % 24) as u32;

    let mean_low_tariff_kw = mean(
        steps
            .iter()
            .filter(|s| tariff.is_low_tariff(hour(s.step)))
            .map(|s| s.realized),
    );
    let mean_high_tariff_kw = mean(
        steps
            .iter()
            .filter(|s| !tariff.is_low_tariff(hour(s.step)))
            .map(|s| s.realized),
    );
    let total_energy_kwh: f64 = steps.iter().map(|s| s.realized.abs() * dt).sum();
    let total_violation_kwh: f64 = steps.iter().map(|s| s.violation * dt).sum();
    let violation_steps = steps.iter().filter(|s| s.violation > 0.0).count();
    let global_excess_kwh: f64 = steps.iter().map(|s| s.global_excess * dt).sum();
    let mut peak = (0u32, f64::NEG_INFINITY);
    for s in steps {
        if s.realized > peak.1 {
            peak = (hour(s.step), s.realized);
        }
    }

    let rounds = &result.rounds;
    MetricsTable {
        mean_low_tariff_kw,
        mean_high_tariff_kw,
        total_energy_kwh,
        max_abs_realized_kw: steps.iter().map(|s| s.realized.abs()).fold(0.0, f64::max),
        max_abs_scheduled_kw: steps.iter().map(|s| s.scheduled.abs()).fold(0.0, f64::max),
        peak_import_hour: peak.0,
        total_violation_kwh,
        mean_violation_kw: if violation_steps == 0 {
            0.0
        } else {
            total_violation_kwh / (violation_steps as f64 * dt)
        },
        relative_violation: if total_energy_kwh > 0.0 {
            total_violation_kwh / total_energy_kwh
        } else {
            0.0
        },
        violation_steps,
        global_excess_kwh,
        iso_fee_chf: tariff.grid_penalty * total_violation_kwh + tariff.global_penalty * global_excess_kwh,
        opex_chf: result.buildings.iter().map(|b| b.opex).sum(),
        discomfort_kh: result.buildings.iter().map(|b| b.discomfort).sum(),
        rounds: rounds.len(),
        nonconverged_rounds: rounds.iter().filter(|r| !r.converged).count(),
        max_iterations: rounds.iter().map(|r| r.iterations).max().unwrap_or(0),
        mean_iterations: mean(rounds.iter().map(|r| r.iterations as f64)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{RunMeta, SimConfig, StepRecord};

    fn result(realized: &[f64], violation: &[f64]) -> SimResult {
        SimResult {
            meta: RunMeta {
                tariff: TariffSchedule::day_night(),
                config: SimConfig::default(),
                buses: vec![],
            },
            steps: realized
                .iter()
                .zip(violation)
                .enumerate()
                .map(|(k, (&r, &v))| StepRecord {
                    step: k,
                    scheduled: r,
                    realized: r,
                    committed: None,
                    violation: v,
                    global_excess: 0.0,
                })
                .collect(),
            buildings: vec![],
            storage: vec![],
            rounds: vec![],
            noise: vec![],
        }
    }

    #[test]
    fn constant_load_day() {
        let r = result(&[1.0; 24], &[0.0; 24]);
        let m = compute_metrics(&r, &TariffSchedule::day_night());
        assert_eq!(m.total_energy_kwh, 24.0);
        assert_eq!((m.mean_low_tariff_kw, m.mean_high_tariff_kw), (1.0, 1.0));
        assert_eq!(m.relative_violation, 0.0);
        assert_eq!(m.mean_violation_kw, 0.0);
    }

    #[test]
    fn violation_figures() {
        let mut v = [0.0; 24];
        v[3] = 1.0;
        v[4] = 3.0;
        let r = result(&[2.0; 24], &v);
        let t = TariffSchedule::day_night();
        let m = compute_metrics(&r, &t);
        assert_eq!(m.total_violation_kwh, 4.0);
        assert_eq!(m.mean_violation_kw, 2.0);
        assert_eq!(m.violation_steps, 2);
        assert!((m.relative_violation - 4.0 / 48.0).abs() < 1e-15);
        assert_eq!(m.iso_fee_chf, 0.5 * 4.0);
    }

    #[test]
    fn peak_hour_and_tariff_windows() {
        let mut load = [1.0; 24];
        load[13] = 9.0;
        let r = result(&load, &[0.0; 24]);
        let m = compute_metrics(&r, &TariffSchedule::ahead24());
        assert_eq!(m.peak_import_hour, 13);
        assert!(m.mean_low_tariff_kw > m.mean_high_tariff_kw);
    }
}
