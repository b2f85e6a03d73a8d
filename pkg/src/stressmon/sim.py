"""Discrete-event simulation of the watch / phone / cloud collection stack.

A watch actor records a 2-minute PPG burst plus accelerometer every
15 minutes; a phone actor emits context snapshots every 1-5 minutes; a
cloud actor timestamps arrivals and runs the smart-EMA trigger rules on a
timer.  When Wi-Fi is out, watch data falls back to a slower Bluetooth
relay and context snapshots buffer until the outage ends.  A synthetic
participant's latent two-state stress process drives heart rate, context
patterns and EMA answers; the latent trace is exported only so tests can
check against ground truth.

Everything is driven by seeded generator streams and a single-threaded
event queue ordered by (time, sequence), so a given config and seed
produce byte-identical output files.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sema as sema_mod
from .context import CONTEXT_FEATURE_NAMES, ContextSnapshot, GeoZone
from .errors import ConfigError
from .signals import SensorBurst, burst_record

SLOT_MS = 15 * 60_000
DAY_MS = 86_400_000
SLOTS_PER_DAY = DAY_MS // SLOT_MS
PPG_RATE_HZ = 20.0
BURST_SECONDS = 120.0
ACCEL_RATE_HZ = 4.0
ACCEL_SECONDS = 60.0

DEFAULT_ZONES = (
    GeoZone(code=0, lat=33.6405, lon=-117.8443, radius_m=300.0),   # recreation center
    GeoZone(code=1, lat=33.6461, lon=-117.8427, radius_m=300.0),   # university premises
    GeoZone(code=2, lat=33.6500, lon=-117.8230, radius_m=300.0),   # housing
)

_WEATHER_CHOICES = ("Clear", "Clouds", "Mist", "Rain", "Snow", "Drizzle")
_WEATHER_WEIGHTS = (0.35, 0.30, 0.10, 0.14, 0.05, 0.06)


@dataclass
class NetworkParams:
    wifi_outages_ms: tuple = ()          # absolute (start, end) pairs
    wifi_latency_ms: int = 1000
    bluetooth_latency_ms: int = 45 * 60_000
    context_latency_ms: int = 5000

    def wifi_up(self, t_ms: int) -> bool:
        return not any(s <= t_ms < e for s, e in self.wifi_outages_ms)

    def outage_end_after(self, t_ms: int) -> int:
        for s, e in self.wifi_outages_ms:
            if s <= t_ms < e:
                return e
        return t_ms


@dataclass
class ParticipantParams:
    baseline_bpm_range: tuple = (62.0, 80.0)
    stress_bpm_delta: float = 10.0
    stress_dwell_minutes: float = 240.0
    calm_dwell_minutes: float = 300.0
    ema_compliance: float = 0.9
    stressed_level_weights: tuple = (0.47, 0.40, 0.065, 0.065)   # levels 2..5
    wear_start_hour: float = 7.0
    wear_end_hour: float = 23.0
    wear_jitter_minutes: float = 20.0
    ppg_noise: float = 0.08
    stress_location_probs: tuple = (0.04, 0.84, 0.05, 0.07)      # zones 0..3
    calm_location_probs: tuple = (0.18, 0.08, 0.42, 0.32)
    stress_device_off_range: tuple = (0.5, 12.0)                 # minutes
    calm_device_off_range: tuple = (45.0, 600.0)
    context_blackout_prob: float = 0.25


@dataclass
class SimConfig:
    n_users: int = 2
    days: int = 1
    seed: int = 0
    tz_offset_ms: int = 0
    sema_eval_minutes: int = 5
    network: NetworkParams = field(default_factory=NetworkParams)
    participants: ParticipantParams = field(default_factory=ParticipantParams)
    per_user: dict = field(default_factory=dict)   # user_id -> overrides
    zones: tuple = DEFAULT_ZONES

    def validate(self):
        p = self.participants
        if self.n_users < 1 or self.days < 1:
            raise ConfigError("n_users and days must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for name, prob in (("ema_compliance", p.ema_compliance),
                           ("context_blackout_prob", p.context_blackout_prob)):
            if not 0.0 <= prob <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        for probs in (p.stress_location_probs, p.calm_location_probs):
            if len(probs) != 4 or abs(sum(probs) - 1.0) > 1e-9:
                raise ConfigError("location probabilities must be 4 values summing to 1")
        if len(p.stressed_level_weights) != 4 or min(p.stressed_level_weights) < 0:
            raise ConfigError("stressed_level_weights must be 4 non-negative values")
        if not (0 < p.baseline_bpm_range[0] <= p.baseline_bpm_range[1]):
            raise ConfigError("baseline_bpm_range must be increasing and positive")
        if p.stress_dwell_minutes <= 0 or p.calm_dwell_minutes <= 0:
            raise ConfigError("dwell times must be positive")
        for s, e in self.network.wifi_outages_ms:
            if e <= s:
                raise ConfigError("wifi outage intervals must have end > start")
        return self

    @property
    def user_ids(self):
        return [f"u{i + 1:02d}" for i in range(self.n_users)]

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        try:
            net = NetworkParams(**{**raw.get("network", {}),
                                   "wifi_outages_ms": tuple(
                                       tuple(w) for w in raw.get("network", {}).get(
                                           "wifi_outages_ms", ()))})
            part_raw = dict(raw.get("participants", {}))
            for key in ("baseline_bpm_range", "stressed_level_weights",
                        "stress_location_probs", "calm_location_probs",
                        "stress_device_off_range", "calm_device_off_range"):
                if key in part_raw:
                    part_raw[key] = tuple(part_raw[key])
            part = ParticipantParams(**part_raw)
            zones = tuple(GeoZone(code=int(z["code"]), lat=float(z["lat"]),
                                  lon=float(z["lon"]), radius_m=float(z["radius_m"]))
                          for z in raw["zones"]) if "zones" in raw else DEFAULT_ZONES
            cfg = cls(n_users=int(raw.get("n_users", 2)), days=int(raw.get("days", 1)),
                      seed=int(raw.get("seed", 0)),
                      tz_offset_ms=int(raw.get("tz_offset_ms", 0)),
                      sema_eval_minutes=int(raw.get("sema_eval_minutes", 5)),
                      network=net, participants=part,
                      per_user=dict(raw.get("per_user", {})), zones=zones)
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad simulation config: {err}") from err
        return cfg.validate()

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        return cls.from_dict(raw)


def synth_ppg(bpm_trace, duration_s, rate_hz, noise_level, seed,
              start_time_ms: int = 0, user_id: str = "", pulse_width_s: float = 0.08):
    """Synthetic PPG burst: Gaussian pulses at integrated-rate beat times.

    ``bpm_trace`` may be a scalar or a per-sample array.  Returns the burst
    and the ground-truth peak times (epoch ms); two seeds differ only in
    the additive noise, never in the true peak times.
    """
    n = int(round(duration_s * rate_hz))
    bpm = np.broadcast_to(np.asarray(bpm_trace, dtype=float), (n,))
    if bpm.min() < 40.0 or bpm.max() > 180.0:
        raise ValueError("bpm trace must stay within 40..180")
    dt = 1.0 / rate_hz
    # phase[i] = integral of beat rate up to sample i; beats at integer crossings
    phase = np.concatenate(([0.0], np.cumsum(bpm / 60.0) * dt))
    t_grid = np.arange(n + 1) * dt
    n_beats = int(math.floor(phase[-1] - 1e-12)) + 1
    beat_times = np.interp(np.arange(n_beats), phase, t_grid)
    beat_times = beat_times[beat_times < duration_s - 1e-12]

    t = np.arange(n) * dt
    x = np.zeros(n)
    half = max(1, int(round(5 * pulse_width_s * rate_hz)))
    for bt in beat_times:
        c = int(round(bt * rate_hz))
        lo, hi = max(0, c - half), min(n, c + half + 1)
        x[lo:hi] += np.exp(-0.5 * ((t[lo:hi] - bt) / pulse_width_s) ** 2)
    if noise_level > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise_level, n)
    burst = SensorBurst(user_id=user_id, channel="ppg", start_time_ms=start_time_ms,
                        rate_hz=rate_hz, samples=x)
    return burst, start_time_ms + beat_times * 1000.0


@dataclass
class SimResult:
    out_dir: str
    paths: dict
    counts: dict


class _Participant:
    """Precomputed per-user ground truth: traits, wear windows, stress."""

    def __init__(self, cfg: SimConfig, index: int, user_id: str):
        self.user_id = user_id
        self.index = index
        p = cfg.participants
        over = cfg.per_user.get(user_id, {})
        rng = np.random.default_rng([cfg.seed, index, 0])
        lo, hi = p.baseline_bpm_range
        self.baseline_bpm = float(over.get("baseline_bpm", rng.uniform(lo, hi)))
        self.bpm_phase = float(rng.uniform(0, 2 * math.pi))
        self.invert_context = bool(over.get("invert_context", False))
        self.stress_dwell = float(over.get("stress_dwell_minutes", p.stress_dwell_minutes))
        self.calm_dwell = float(over.get("calm_dwell_minutes", p.calm_dwell_minutes))
        jit = p.wear_jitter_minutes * 60_000
        self.wear_windows = []
        for day in range(cfg.days):
            start = day * DAY_MS + int(p.wear_start_hour * 3_600_000 + rng.uniform(-jit, jit))
            end = day * DAY_MS + int(p.wear_end_hour * 3_600_000 + rng.uniform(-jit, jit))
            self.wear_windows.append((start, end))
        self._build_stress(cfg, np.random.default_rng([cfg.seed, index, 1]))
        self._build_blackouts(cfg, rng)
        self.delta = float(over.get("stress_bpm_delta", p.stress_bpm_delta))
        self.screen_coupled = bool(over.get("screen_coupled", False))
        self.device_on_coupled = bool(over.get("device_on_coupled", False))
        self.neutral_context = bool(over.get("neutral_context", False))
        if self.neutral_context:
            # context does not track this user's stress at all
            blend = tuple(0.5 * (a + b) for a, b in
                          zip(p.stress_location_probs, p.calm_location_probs))
            span = (min(p.stress_device_off_range[0], p.calm_device_off_range[0]),
                    max(p.stress_device_off_range[1], p.calm_device_off_range[1]))
            self.stressed_location_probs = self.calm_location_probs = blend
            self.stressed_device_off = self.calm_device_off = span
        elif self.invert_context:
            self.stressed_location_probs = p.calm_location_probs
            self.calm_location_probs = p.stress_location_probs
            self.stressed_device_off = p.calm_device_off_range
            self.calm_device_off = p.stress_device_off_range
        else:
            self.stressed_location_probs = p.stress_location_probs
            self.calm_location_probs = p.calm_location_probs
            self.stressed_device_off = p.stress_device_off_range
            self.calm_device_off = p.calm_device_off_range

    def _build_stress(self, cfg, rng):
        leave_stress = min(1.0, SLOT_MS / 60_000 / self.stress_dwell)
        leave_calm = min(1.0, SLOT_MS / 60_000 / self.calm_dwell)
        stationary = leave_calm / (leave_calm + leave_stress)
        n_slots = cfg.days * SLOTS_PER_DAY
        states = np.zeros(n_slots, dtype=np.int8)
        state = 0
        was_worn = False
        for s in range(n_slots):
            worn = self.worn(s * SLOT_MS)
            if not worn:
                state = 0          # asleep / off wrist: no stress episodes
            elif not was_worn:
                # wear start: draw from the stationary distribution so short
                # studies are not dominated by the morning calm ramp-up
                state = 1 if rng.random() < stationary else 0
            else:
                draw = rng.random()
                if state == 1 and draw < leave_stress:
                    state = 0
                elif state == 0 and draw < leave_calm:
                    state = 1
            was_worn = worn
            states[s] = state
        self.stress_slots = states

    def _build_blackouts(self, cfg, rng):
        """Per sensor/day context blackouts so some windows miss features."""
        p = cfg.participants
        self.blackouts = {name: [] for name in CONTEXT_FEATURE_NAMES}
        for name in CONTEXT_FEATURE_NAMES:
            for day in range(cfg.days):
                if rng.random() < p.context_blackout_prob:
                    start = day * DAY_MS + int(rng.uniform(6, 18) * 3_600_000)
                    self.blackouts[name].append(
                        (start, start + int(rng.uniform(2, 5) * 3_600_000)))

    def worn(self, t_ms: int) -> bool:
        day = min(len(self.wear_windows) - 1, max(0, t_ms // DAY_MS))
        start, end = self.wear_windows[day]
        return start <= t_ms < end

    def stressed(self, t_ms: int) -> bool:
        slot = min(len(self.stress_slots) - 1, max(0, t_ms // SLOT_MS))
        return bool(self.stress_slots[slot])

    def bpm_at(self, t_ms: int, jitter: float = 0.0) -> float:
        wander = 2.5 * math.sin(2 * math.pi * t_ms / 2_400_000 + self.bpm_phase)
        bpm = self.baseline_bpm + self.delta * self.stressed(t_ms) + wander + jitter
        return min(175.0, max(45.0, bpm))

    def blacked_out(self, sensor: str, t_ms: int) -> bool:
        return any(s <= t_ms < e for s, e in self.blackouts[sensor])


class _Simulation:
    def __init__(self, cfg: SimConfig, out_dir):
        self.cfg = cfg
        self.out_dir = out_dir
        self.end_ms = cfg.days * DAY_MS
        self.users = [_Participant(cfg, i, uid) for i, uid in enumerate(cfg.user_ids)]
        self.sema_states = [sema_mod.SemaState(user_id=u.user_id,
                                               tz_offset_ms=cfg.tz_offset_ms)
                            for u in self.users]
        self.newest_watch_end = [None] * cfg.n_users
        self.last_accel = [None] * cfg.n_users      # (end_ms, magnitudes, rate)
        self.ema_rngs = [np.random.default_rng([cfg.seed, i, 5])
                         for i in range(cfg.n_users)]
        self.ctx_rngs = [[np.random.default_rng([cfg.seed, i, 4, s])
                          for s in range(len(CONTEXT_FEATURE_NAMES))]
                         for i in range(cfg.n_users)]
        wrng = np.random.default_rng([cfg.seed, 6])
        blocks = cfg.days * 8
        self.weather_blocks = wrng.choice(len(_WEATHER_CHOICES), size=blocks,
                                          p=_WEATHER_WEIGHTS)
        self.heap = []
        self.seq = 0
        self.counts = {"bursts": 0, "snapshots": 0, "emas": 0,
                       "prompts": 0, "evaluations": 0}

    def push(self, t_ms, kind, data):
        heapq.heappush(self.heap, (int(t_ms), self.seq, kind, data))
        self.seq += 1

    # -- generation ------------------------------------------------------------

    def make_bursts(self, user: _Participant, slot_ms: int):
        """The four records of one slot: PPG plus three accelerometer axes."""
        cfg = self.cfg
        worn = user.worn(slot_ms)
        slot_index = slot_ms // SLOT_MS
        if worn:
            jitter = float(np.random.default_rng(
                [cfg.seed, user.index, 2, slot_index, 0]).normal(0.0, 1.2))
            ppg, _ = synth_ppg(user.bpm_at(slot_ms, jitter), BURST_SECONDS,
                               PPG_RATE_HZ, cfg.participants.ppg_noise,
                               seed=[cfg.seed, user.index, 2, slot_index, 1],
                               start_time_ms=slot_ms, user_id=user.user_id)
            ppg = SensorBurst(user_id=user.user_id, channel="ppg",
                              start_time_ms=slot_ms, rate_hz=PPG_RATE_HZ,
                              samples=np.round(ppg.samples, 3))
        else:
            # LED gated off-wrist: idle channel reads a constant zero
            ppg = SensorBurst(user_id=user.user_id, channel="ppg",
                              start_time_ms=slot_ms, rate_hz=PPG_RATE_HZ,
                              samples=np.zeros(int(BURST_SECONDS * PPG_RATE_HZ)))
        arng = np.random.default_rng([cfg.seed, user.index, 3, slot_index])
        n = int(ACCEL_SECONDS * ACCEL_RATE_HZ)
        if worn:
            base = (0.10, 0.15, 0.98)
            noise = 0.08
        else:
            base = (0.0, 0.0, 1.0)
            noise = 0.0005
        accel = [SensorBurst(user_id=user.user_id, channel=f"accel_{axis}",
                             start_time_ms=slot_ms, rate_hz=ACCEL_RATE_HZ,
                             samples=np.round(base[k] + arng.normal(0, noise, n), 4))
                 for k, axis in enumerate(("x", "y", "z"))]
        return [ppg] + accel

    def context_value(self, user: _Participant, sensor: str, t_ms: int, rng):
        hour = ((t_ms + self.cfg.tz_offset_ms) % DAY_MS) / 3_600_000.0
        stressed = user.stressed(t_ms)
        if sensor == "battery_adaptor":
            return 1 if (hour < 7.0 or hour >= 23.0) else 0
        if sensor == "battery_level":
            level = 95.0 - 70.0 * max(0.0, hour - 7.0) / 17.0 if hour >= 7.0 else 90.0
            return round(float(np.clip(level + rng.normal(0, 3), 1, 100)), 1)
        if sensor == "speed":
            return 0.0 if rng.random() < 0.5 else round(float(min(8.0, abs(rng.normal(1.2, 1.0)))), 2)
        if sensor == "device_off":
            lo, hi = user.stressed_device_off if stressed else user.calm_device_off
            return round(float(rng.uniform(lo, hi)), 1)
        if sensor == "device_on":
            if user.device_on_coupled:
                # personal habit: long phone sessions while stressed
                lo, hi = (25.0, 60.0) if stressed else (0.5, 8.0)
                return round(float(rng.uniform(lo, hi)), 1)
            return round(float(rng.uniform(0.5, 25.0)), 1)
        if sensor == "air_pressure":
            return round(float(1008.0 + 6.0 * math.sin(2 * math.pi * t_ms / DAY_MS)
                                + rng.normal(0, 1.5)), 1)
        if sensor == "weather_temperature":
            return round(float(16.0 + 7.0 * math.sin(2 * math.pi * (hour - 9.0) / 24.0)
                                + rng.normal(0, 0.8)), 1)
        if sensor == "weather":
            block = min(len(self.weather_blocks) - 1, t_ms // (3 * 3_600_000))
            return _WEATHER_CHOICES[self.weather_blocks[block]]
        if sensor == "wind_degrees":
            return round(float(rng.uniform(0, 360)), 0)
        if sensor == "wind_speed":
            return round(float(min(14.0, abs(rng.normal(3.0, 2.5)))), 2)
        if sensor == "screen_status":
            if user.screen_coupled:
                # personal habit: compulsive phone checking under stress
                return int(2 + rng.integers(0, 2)) if stressed else int(rng.integers(0, 2))
            return int(rng.integers(0, 4))
        # location: zone choice coupled to the latent stress state
        probs = user.stressed_location_probs if stressed else user.calm_location_probs
        zone_code = int(rng.choice(4, p=probs))
        return self._location_payload(zone_code, rng)

    def _location_payload(self, zone_code: int, rng):
        zones = {z.code: z for z in self.cfg.zones}
        if zone_code in zones:
            z = zones[zone_code]
            r = 0.9 * z.radius_m * math.sqrt(rng.random())
            theta = rng.uniform(0, 2 * math.pi)
            lat = z.lat + (r * math.cos(theta)) / 111_320.0
            lon = z.lon + (r * math.sin(theta)) / (111_320.0 * math.cos(math.radians(z.lat)))
        else:
            anchor = self.cfg.zones[0]
            dist = rng.uniform(5_000, 15_000)
            theta = rng.uniform(0, 2 * math.pi)
            lat = anchor.lat + (dist * math.cos(theta)) / 111_320.0
            lon = anchor.lon + (dist * math.sin(theta)) / (111_320.0 * math.cos(math.radians(anchor.lat)))
        return [round(lat, 6), round(lon, 6), round(float(rng.uniform(10, 60)), 1)]

    # -- event handlers ----------------------------------------------------------

    def run(self):
        cfg = self.cfg
        for user in self.users:
            for slot in range(cfg.days * SLOTS_PER_DAY):
                self.push(slot * SLOT_MS + int(BURST_SECONDS * 1000), "emit_bursts",
                          (user.index, slot * SLOT_MS))
            for k in range(0, self.end_ms + 1, cfg.sema_eval_minutes * 60_000):
                self.push(k, "sema_eval", user.index)
            for s_idx in range(len(CONTEXT_FEATURE_NAMES)):
                first = int(self.ctx_rngs[user.index][s_idx].uniform(0, 300_000))
                self.push(first, "emit_context", (user.index, s_idx))

        paths = self._open_writers()
        try:
            while self.heap:
                t, _, kind, data = heapq.heappop(self.heap)
                getattr(self, "_on_" + kind)(t, data)
        finally:
            self._close_writers()
        self._write_latent(paths["latent"])
        from .context import dump_zones
        dump_zones(paths["zones"], list(self.cfg.zones))
        return SimResult(out_dir=str(self.out_dir), paths=paths, counts=self.counts)

    def _on_emit_bursts(self, t, data):
        user_idx, slot_ms = data
        records = self.make_bursts(self.users[user_idx], slot_ms)
        net = self.cfg.network
        latency = net.wifi_latency_ms if net.wifi_up(t) else net.bluetooth_latency_ms
        self.push(t + latency, "arrive_bursts", (user_idx, records))

    def _on_arrive_bursts(self, t, data):
        user_idx, records = data
        mags = None
        for burst in records:
            self._fh["bursts"].write(burst_record(burst, arrival_ms=t) + "\n")
            self.counts["bursts"] += 1
            end = burst.end_time_ms
            if self.newest_watch_end[user_idx] is None or end > self.newest_watch_end[user_idx]:
                self.newest_watch_end[user_idx] = end
        accel = {b.channel: b.samples for b in records if b.channel.startswith("accel_")}
        if len(accel) == 3:
            mags = np.sqrt(accel["accel_x"] ** 2 + accel["accel_y"] ** 2
                           + accel["accel_z"] ** 2)
            end = max(b.end_time_ms for b in records if b.channel.startswith("accel_"))
            prev = self.last_accel[user_idx]
            if prev is None or end > prev[0]:
                self.last_accel[user_idx] = (end, mags, ACCEL_RATE_HZ)

    def _on_emit_context(self, t, data):
        user_idx, s_idx = data
        if t > self.end_ms:
            return
        user = self.users[user_idx]
        sensor = CONTEXT_FEATURE_NAMES[s_idx]
        rng = self.ctx_rngs[user_idx][s_idx]
        if not user.blacked_out(sensor, t):
            snap = ContextSnapshot(user_id=user.user_id, timestamp_ms=t,
                                   sensor=sensor,
                                   payload=self.context_value(user, sensor, t, rng))
            net = self.cfg.network
            if net.wifi_up(t):
                arrive = t + net.context_latency_ms
            else:
                arrive = net.outage_end_after(t) + net.context_latency_ms
            self.push(arrive, "arrive_context", snap)
        self.push(t + int(rng.uniform(60_000, 300_000)), "emit_context",
                  (user_idx, s_idx))

    def _on_arrive_context(self, t, snap):
        rec = {"user_id": snap.user_id, "timestamp_ms": snap.timestamp_ms,
               "sensor": snap.sensor, "payload": snap.payload, "arrival_ms": t}
        self._fh["context"].write(json.dumps(rec, separators=(",", ":")) + "\n")
        self.counts["snapshots"] += 1

    def _on_sema_eval(self, t, user_idx):
        if t >= self.end_ms:
            return
        state = self.sema_states[user_idx]
        accel = self.last_accel[user_idx]
        newest = self.newest_watch_end[user_idx]
        if accel is None or newest is None:
            wear = sema_mod.WearSample(magnitudes=np.empty(0), rate_hz=ACCEL_RATE_HZ,
                                       newest_data_time_ms=0)
        else:
            wear = sema_mod.WearSample(magnitudes=accel[1], rate_hz=accel[2],
                                       newest_data_time_ms=newest)
        decision = sema_mod.should_trigger(state, t, wear)
        self.counts["evaluations"] += 1
        rec = {"user_id": state.user_id, "timestamp_ms": t,
               "decision": "trigger" if decision.triggered else "skip",
               "reason": decision.reason}
        self._fh["triggers"].write(json.dumps(rec, separators=(",", ":")) + "\n")
        if decision.triggered:
            self.counts["prompts"] += 1
            rng = self.ema_rngs[user_idx]
            comply = rng.random() < self.cfg.participants.ema_compliance
            delay = int(rng.uniform(30_000, 300_000))
            if comply:
                answer_time = t + delay
                user = self.users[user_idx]
                if user.stressed(answer_time):
                    weights = np.asarray(self.cfg.participants.stressed_level_weights,
                                         dtype=float)
                    level = 2 + int(rng.choice(4, p=weights / weights.sum()))
                else:
                    level = 1
                self.push(answer_time, "ema_response", (user_idx, level))

    def _on_ema_response(self, t, data):
        user_idx, level = data
        self._fh["ema"].write(f"{t},{self.users[user_idx].user_id},{level}\n")
        self.counts["emas"] += 1

    # -- output files ------------------------------------------------------------

    def _open_writers(self):
        import os
        os.makedirs(self.out_dir, exist_ok=True)
        join = lambda name: os.path.join(str(self.out_dir), name)
        self.paths = {"bursts": join("bursts.jsonl"), "context": join("context.jsonl"),
                      "ema": join("ema.csv"), "triggers": join("triggers.jsonl"),
                      "latent": join("latent.csv"), "zones": join("zones.json")}
        self._fh = {name: open(self.paths[name], "w", encoding="utf-8", newline="")
                    for name in ("bursts", "context", "ema", "triggers")}
        self._fh["ema"].write("timestamp_ms,user_id,stress_level\n")
        return self.paths

    def _close_writers(self):
        for fh in self._fh.values():
            fh.close()

    def _write_latent(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("user_id,start_ms,end_ms,stress\n")
            for user in self.users:
                states = user.stress_slots
                run_start = 0
                for s in range(1, len(states) + 1):
                    if s == len(states) or states[s] != states[run_start]:
                        fh.write(f"{user.user_id},{run_start * SLOT_MS},"
                                 f"{s * SLOT_MS},{int(states[run_start])}\n")
                        run_start = s


def run_simulation(config: SimConfig, out_dir) -> SimResult:
    """Run the three-tier simulation; writes the five ingestion files.

    Outputs: bursts.jsonl, context.jsonl, ema.csv, triggers.jsonl,
    latent.csv (plus zones.json for the geofence config).  Rerunning with
    the same config and seed reproduces them byte for byte.
    """
    config.validate()
    return _Simulation(config, out_dir).run()
