"""Mapping of raw phone-context logs to the numeric model features.

Raw AWARE-style snapshots (battery, weather, location, screen, ...) are
reduced to small integer features by cut-off binning, weather-text lookup
and circular geofencing.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import DataFormatError

#: Text forecast -> numeric code; anything else is treated as missing.
WEATHER_CODES = {"clear": 0, "mist": 1, "clouds": 2, "rain": 3, "snow": 4}

#: Cut-off lists per binned feature.  A value v falls in bin
#: ``#{c : v > c}``, so k cut-offs produce bins 0..k.
CUTOFFS = {
    "battery_level": (10.0, 25.0, 50.0),
    "speed": (0.0, 1.0, 5.0),
    "device_off": (2.0, 10.0, 20.0, 60.0, 180.0, 540.0),
    "device_on": (2.0, 10.0, 20.0),
    "air_pressure": (900.0, 1000.0, 1100.0),
    "weather_temperature": (5.0, 10.0, 20.0, 30.0),
    "wind_degrees": (45.0, 90.0, 135.0),
    "wind_speed": (0.0, 2.0, 5.0, 10.0),
}

#: Features whose raw value feeds the model directly.
PASSTHROUGH = ("battery_adaptor", "screen_status")

#: Zone code assigned when no configured zone contains the position.
OUTSIDE_ZONE = 3

#: Column order of the contextual block in the feature matrix.
CONTEXT_FEATURE_NAMES = (
    "battery_adaptor",
    "battery_level",
    "speed",
    "device_off",
    "device_on",
    "air_pressure",
    "weather_temperature",
    "weather",
    "wind_degrees",
    "wind_speed",
    "screen_status",
    "location",
)

SENSORS = frozenset(CONTEXT_FEATURE_NAMES)

_EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class ContextSnapshot:
    """One raw context event: a sensor reading at a point in time."""

    user_id: str
    timestamp_ms: int
    sensor: str
    payload: object

    def __post_init__(self):
        if self.sensor not in SENSORS:
            raise ValueError(f"unknown context sensor {self.sensor!r}")


@dataclass(frozen=True)
class GeoZone:
    """Circular geofence; codes 0..2 name the study areas, 3 is outside."""

    code: int
    lat: float
    lon: float
    radius_m: float

    def __post_init__(self):
        if self.code not in (0, 1, 2):
            raise ValueError(f"zone code must be 0..2, got {self.code}")
        if self.radius_m <= 0:
            raise ValueError("zone radius must be positive")


@dataclass
class ContextSchema:
    """Cut-offs, weather map and geofence zones used for feature extraction."""

    cutoffs: dict = field(default_factory=lambda: dict(CUTOFFS))
    weather_codes: dict = field(default_factory=lambda: dict(WEATHER_CODES))
    zones: list = field(default_factory=list)

    def __post_init__(self):
        for name, cuts in self.cutoffs.items():
            if not cuts or any(a >= b for a, b in zip(cuts, cuts[1:])):
                raise ValueError(f"cut-offs for {name} must be strictly increasing")
        codes = list(self.weather_codes.values())
        if len(set(codes)) != len(codes):
            raise ValueError("weather map must be injective")


def discretize(value, cutoffs):
    """Bin a value against an increasing cut-off list.

    Returns the number of cut-offs strictly below the value, so k cut-offs
    yield bins 0..k.  NaN or None comes back as None (missing).
    """
    if value is None:
        return None
    value = float(value)
    if math.isnan(value):
        return None
    return sum(1 for c in cutoffs if value > c)


def map_weather(text):
    """Map a forecast string to its numeric code, case-insensitively.

    Unknown conditions return None so the imputer fills them later.
    """
    if not isinstance(text, str):
        return None
    return WEATHER_CODES.get(text.strip().lower())


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * _EARTH_RADIUS_M * math.asin(math.sqrt(a))


def assign_location(lat, lon, zones):
    """Return the lowest zone code whose circle contains the point, else 3.

    Altitude is ignored; containment is inclusive of the boundary.
    """
    best = OUTSIDE_ZONE
    for zone in zones:
        if zone.code < best and haversine_m(lat, lon, zone.lat, zone.lon) <= zone.radius_m:
            best = zone.code
    return best


def extract_context_features(snapshots, schema):
    """Turn the snapshots of one 15-minute window into the numeric features.

    For each sensor the last snapshot in the window wins; sensors with no
    snapshot produce None.  Binned sensors go through :func:`discretize`,
    weather through :func:`map_weather`, location through
    :func:`assign_location`; battery_adaptor and screen_status pass through
    unchanged.
    """
    latest = {}
    for snap in snapshots:
        prev = latest.get(snap.sensor)
        if prev is None or snap.timestamp_ms >= prev.timestamp_ms:
            latest[snap.sensor] = snap

    features = {}
    for name in CONTEXT_FEATURE_NAMES:
        snap = latest.get(name)
        if snap is None:
            features[name] = None
        elif name in schema.cutoffs:
            features[name] = discretize(snap.payload, schema.cutoffs[name])
        elif name == "weather":
            features[name] = map_weather(snap.payload)
        elif name == "location":
            lat, lon = float(snap.payload[0]), float(snap.payload[1])
            features[name] = assign_location(lat, lon, schema.zones)
        else:  # passthrough
            features[name] = None if snap.payload is None else float(snap.payload)
    return features


# -- file formats -------------------------------------------------------------

def read_context_jsonl(path):
    """Read a context log; raises DataFormatError naming the bad line."""
    snapshots = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                snapshots.append(ContextSnapshot(
                    user_id=str(rec["user_id"]),
                    timestamp_ms=int(rec["timestamp_ms"]),
                    sensor=str(rec["sensor"]),
                    payload=rec["payload"],
                ))
            except (ValueError, KeyError, TypeError) as err:
                raise DataFormatError(f"{path}:{lineno}: bad context record: {err}") from err
    return snapshots


def write_context_jsonl(path, snapshots, arrivals=None):
    with open(path, "w", encoding="utf-8") as fh:
        for i, snap in enumerate(snapshots):
            rec = {
                "user_id": snap.user_id,
                "timestamp_ms": snap.timestamp_ms,
                "sensor": snap.sensor,
                "payload": snap.payload,
            }
            if arrivals is not None:
                rec["arrival_ms"] = arrivals[i]
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_zones(path):
    """Read a zone-config JSON list of {code, lat, lon, radius_m}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return [GeoZone(code=int(z["code"]), lat=float(z["lat"]),
                        lon=float(z["lon"]), radius_m=float(z["radius_m"]))
                for z in raw]
    except (KeyError, TypeError, ValueError) as err:
        raise DataFormatError(f"{path}: bad zone config: {err}") from err


def dump_zones(path, zones):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([{"code": z.code, "lat": z.lat, "lon": z.lon, "radius_m": z.radius_m}
                   for z in zones], fh, indent=2)
        fh.write("\n")
