#!/usr/bin/env python3
"""Regenerate the synthetic season series under scenarios/series/.

Three days per season at hourly resolution: a sinusoidal outdoor
temperature, a clear-sky irradiance bell scaled per day, and household
demand with morning and evening peaks. Output is deterministic.
"""

import csv
import math
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "scenarios" / "series"

SEASONS = {
    # mean °C, daily swing °C, peak irradiance kW/m² per day, sunrise, sunset
    "winter": dict(t_mean=-3.0, t_swing=4.0, irr=[0.22, 0.15, 0.25], rise=8, set=16.5),
    "spring": dict(t_mean=6.0, t_swing=5.0, irr=[0.30, 0.22, 0.34], rise=6.5, set=19.0),
    "summer": dict(t_mean=19.0, t_swing=6.0, irr=[0.80, 0.70, 0.85], rise=5.5, set=21.0),
}

# Household electricity, kW, by hour of day for one SFH.
SFH_LOAD = [
    0.30, 0.28, 0.27, 0.27, 0.28, 0.32, 0.55, 0.85, 0.70, 0.45, 0.40, 0.45,
    0.60, 0.50, 0.40, 0.40, 0.50, 0.75, 1.05, 1.10, 0.95, 0.75, 0.50, 0.36,
]
# Hot-water draw, kW_th, by hour of day for one SFH.
SFH_DHW = [
    0.05, 0.05, 0.05, 0.05, 0.05, 0.20, 0.90, 1.10, 0.60, 0.30, 0.20, 0.20,
    0.30, 0.20, 0.15, 0.15, 0.20, 0.40, 0.70, 0.80, 0.60, 0.40, 0.20, 0.10,
]
MFH_FACTOR = 3.5
DHW_SEASON = {"winter": 1.0, "spring": 0.9, "summer": 0.75}


def irradiance(hour, peak, rise, sunset):
    if hour <= rise or hour >= sunset:
        return 0.0
    x = (hour - rise) / (sunset - rise)
    return peak * math.sin(math.pi * x) ** 1.5


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, p in SEASONS.items():
        rows = []
        for step in range(72):
            day, hour = divmod(step, 24)
            # Coldest around 05:00, warmest around 15:00.
            t_out = p["t_mean"] - p["t_swing"] * math.cos(2 * math.pi * (hour - 5) / 24)
            # Mid-hour sample for the irradiance bell.
            irr = irradiance(hour + 0.5, p["irr"][day], p["rise"], p["set"])
            weekday = 1.0 + 0.05 * (day - 1)
            load = SFH_LOAD[hour] * weekday
            dhw = SFH_DHW[hour] * DHW_SEASON[name]
            rows.append([
                step,
                round(t_out, 3),
                round(irr, 4),
                round(load, 4),
                round(load * MFH_FACTOR, 4),
                round(dhw, 4),
                round(dhw * MFH_FACTOR, 4),
            ])
        with open(OUT / f"{name}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step", "t_out_c", "irradiance_kw_m2", "load_sfh_kw", "load_mfh_kw", "dhw_sfh_kw", "dhw_mfh_kw"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
