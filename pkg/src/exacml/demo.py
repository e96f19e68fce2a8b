"""Demo datasets: the printed weather sample plus synthetic multi-day data.

The weather database holds four station tables sampled every minute; the
traffic database holds traffic volume (every five minutes) and vehicle
speed/location (every minute) over the same period.  Station one embeds the
eleven printed rows for 2011-06-06 10:00 to 10:10 verbatim.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

from .datastore import DATETIME, DOUBLE, INTEGER, Schema, Store, table_csv
from .values import parse_time

WEATHER_SCHEMA = Schema("WeatherInfo", (
    ("SamplingTime", DATETIME),
    ("Temperature", DOUBLE),
    ("Humidity", DOUBLE),
    ("RainRate", DOUBLE),
))

TRAFFIC_SCHEMA = Schema("TrafficInfo", (
    ("SamplingTime", DATETIME),
    ("TrafficVolume", INTEGER),
))

VEHICLE_SCHEMA = Schema("VehicleInfo", (
    ("SamplingTime", DATETIME),
    ("Speed", DOUBLE),
    ("latitude", DOUBLE),
    ("longitude", DOUBLE),
))

WEATHER_CSV = """\
SamplingTime,Temperature,Humidity,RainRate
2011-06-06 10:00:00,27.2,70,0.0
2011-06-06 10:01:00,27.5,70,0.0
2011-06-06 10:02:00,27.5,73,0.0
2011-06-06 10:03:00,27.4,72,0.0
2011-06-06 10:04:00,27.3,75,0.0
2011-06-06 10:05:00,27.3,76,0.0
2011-06-06 10:06:00,27.0,77,0.1
2011-06-06 10:07:00,27.1,80,5.0
2011-06-06 10:08:00,26.8,81,14.0
2011-06-06 10:09:00,26.6,82,20.0
2011-06-06 10:10:00,26.5,85,34.4
"""

START = datetime(2011, 6, 6)


def weather_store(name="WeatherInfo"):
    """A store holding only the eleven printed weather rows."""
    store = Store()
    store.create_table(Schema(name, WEATHER_SCHEMA.columns))
    store.insert_rows(name, WEATHER_CSV)
    return store


@dataclass
class DemoDataset:
    data_id: str
    database_name: str
    owner_name: str
    owner_role: str
    tables: list = field(default_factory=list)  # (Schema, csv text)

    @property
    def credentials(self):
        return {"name": self.owner_name, "role": self.owner_role}

    def to_store(self):
        store = Store()
        for schema, body in self.tables:
            store.create_table(schema)
            store.insert_rows(schema.table_name, body)
        return store


def _weather_rows(rng, days, station):
    rows = []
    minutes = days * 24 * 60
    rain = 0.0
    offset = rng.uniform(-0.8, 0.8)
    for m in range(minutes):
        t = START + timedelta(minutes=m)
        hour = m / 60.0
        temperature = 28.5 + offset + 2.5 * math.sin((hour % 24 - 9) / 24 * 2 * math.pi)
        if rain > 0:
            rain = max(0.0, rain + rng.gauss(-0.4, 3.0)) if rng.random() > 0.03 else 0.0
        elif rng.random() < 0.004:
            rain = rng.uniform(0.1, 20.0)
        temperature -= min(rain, 30.0) * 0.05
        humidity = min(99.0, max(55.0, 88 - 3.0 * (temperature - 27) + rain * 0.4 + rng.gauss(0, 1.5)))
        rows.append((t, round(temperature + rng.gauss(0, 0.15), 1), float(round(humidity)), round(rain, 1)))
    if station == 1:
        printed = {r[0]: r for r in _printed_rows()}
        rows = [printed.get(r[0], r) for r in rows]
    return rows


def _printed_rows():
    out = []
    for line in WEATHER_CSV.splitlines()[1:]:
        t, a, b, c = line.split(",")
        out.append((parse_time(t), float(a), float(b), float(c)))
    return out


def _traffic_rows(rng, days):
    rows = []
    for m in range(0, days * 24 * 60, 5):
        hour = (m / 60.0) % 24
        rush = math.exp(-((hour - 8.5) ** 2) / 2) + math.exp(-((hour - 18.0) ** 2) / 2)
        base = 25 + 70 * rush + (15 if 7 <= hour <= 21 else 0)
        rows.append((START + timedelta(minutes=m), max(0, int(base + rng.gauss(0, 6)))))
    return rows


def _vehicle_rows(rng, days):
    rows = []
    for m in range(days * 24 * 60):
        hour = (m / 60.0) % 24
        rush = math.exp(-((hour - 8.5) ** 2) / 2) + math.exp(-((hour - 18.0) ** 2) / 2)
        speed = max(5.0, 90 - 45 * rush + rng.gauss(0, 8))
        rows.append((START + timedelta(minutes=m), round(speed, 1),
                     round(rng.uniform(1.25, 1.45), 4), round(rng.uniform(103.70, 104.00), 4)))
    return rows


def demo_datasets(days=5, seed=2011):
    """Weather (four stations) and traffic (volume + speed) datasets."""
    rng = random.Random(seed)
    weather = DemoDataset("weather1", "weather_data", "NEA", "owner")
    for station in range(1, 5):
        name = "WeatherInfo" if station == 1 else f"WeatherInfo{station}"
        schema = Schema(name, WEATHER_SCHEMA.columns)
        weather.tables.append((schema, table_csv(schema.names, _weather_rows(rng, days, station))))
    traffic = DemoDataset("traffic1", "traffic_data", "LTA", "owner")
    traffic.tables.append((TRAFFIC_SCHEMA, table_csv(TRAFFIC_SCHEMA.names, _traffic_rows(rng, days))))
    traffic.tables.append((VEHICLE_SCHEMA, table_csv(VEHICLE_SCHEMA.names, _vehicle_rows(rng, days))))
    return [weather, traffic]


def write_demo(directory, days=5, seed=2011):
    """Write each dataset's tables as ``<data_id>/<table>.csv`` + ``.schema``."""
    directory = Path(directory)
    written = []
    for dataset in demo_datasets(days, seed):
        target = directory / dataset.data_id
        target.mkdir(parents=True, exist_ok=True)
        for schema, body in dataset.tables:
            (target / f"{schema.table_name}.schema").write_text(schema.to_text())
            (target / f"{schema.table_name}.csv").write_text(body)
            written.append(target / f"{schema.table_name}.csv")
    return written
