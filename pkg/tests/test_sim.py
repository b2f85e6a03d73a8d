"""Simulator: cadence, routing, conservation, causality, determinism."""
import collections
import json

import numpy as np
import pytest

from stressmon.cli import featurize_directory
from stressmon.errors import ConfigError
from stressmon.sim import (DEFAULT_ZONES, ParticipantParams, SimConfig,
                           run_simulation, synth_ppg)


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


class TestSynthPpg:
    def test_60bpm_exact_beats(self):
        burst, peaks = synth_ppg(60.0, 120, 20.0, 0.0, seed=0)
        assert len(peaks) == 120
        assert np.allclose(np.diff(peaks), 1000.0)
        assert len(burst.samples) == 2400

    def test_ramp_beat_count(self):
        n = int(120 * 20)
        bpm = np.linspace(60.0, 90.0, n)
        _, peaks = synth_ppg(bpm, 120, 20.0, 0.0, seed=0)
        # beats = integral of rate: mean 75 BPM over 2 min -> 150
        expected = np.trapezoid(bpm / 60.0, dx=1 / 20.0)
        assert abs(len(peaks) - expected) <= 1.0

    def test_seeds_change_noise_not_truth(self):
        b1, p1 = synth_ppg(72.0, 60, 20.0, 0.1, seed=1)
        b2, p2 = synth_ppg(72.0, 60, 20.0, 0.1, seed=2)
        assert np.array_equal(p1, p2)
        assert not np.array_equal(b1.samples, b2.samples)

    def test_bpm_bounds(self):
        with pytest.raises(ValueError):
            synth_ppg(30.0, 60, 20.0, 0.0, seed=0)


class TestConfig:
    def test_from_dict_roundtrip(self):
        cfg = SimConfig.from_dict({"n_users": 3, "days": 2, "seed": 9,
                                   "network": {"wifi_outages_ms": [[0, 1000]]},
                                   "participants": {"ema_compliance": 0.5}})
        assert cfg.n_users == 3 and cfg.participants.ema_compliance == 0.5
        assert cfg.network.wifi_outages_ms == ((0, 1000),)

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            SimConfig(n_users=0).validate()
        with pytest.raises(ConfigError):
            SimConfig.from_dict({"participants": {"ema_compliance": 1.5}})
        with pytest.raises(ConfigError):
            SimConfig.from_dict({"network": {"wifi_outages_ms": [[5, 2]]}})
        with pytest.raises(ConfigError):
            SimConfig.from_dict({"participants": {"stress_location_probs": [1.0]}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            SimConfig.from_json(tmp_path / "nope.json")


class TestOutputs:
    def test_file_set(self, small_study):
        out, result = small_study
        for name in ("bursts", "context", "ema", "triggers", "latent", "zones"):
            assert (out / {"bursts": "bursts.jsonl", "context": "context.jsonl",
                           "ema": "ema.csv", "triggers": "triggers.jsonl",
                           "latent": "latent.csv", "zones": "zones.json"}[name]).exists()

    def test_burst_cadence(self, small_study):
        out, result = small_study
        records = read_jsonl(out / "bursts.jsonl")
        # 5 users x 2 days x 96 slots x 4 channels
        assert len(records) == 5 * 2 * 96 * 4
        ppg = [r for r in records if r["channel"] == "ppg"]
        assert len(ppg) == 5 * 2 * 96
        assert all(len(r["samples"]) == 2400 for r in ppg[:20])

    def test_conservation_no_duplicates(self, small_study):
        out, _ = small_study
        keys = [(r["user_id"], r["channel"], r["start_time_ms"])
                for r in read_jsonl(out / "bursts.jsonl")]
        assert len(keys) == len(set(keys))

    def test_causality(self, small_study):
        out, _ = small_study
        for r in read_jsonl(out / "bursts.jsonl"):
            end = r["start_time_ms"] + int(len(r["samples"]) / r["rate_hz"] * 1000)
            assert r["arrival_ms"] >= end
        for r in read_jsonl(out / "context.jsonl")[:2000]:
            assert r["arrival_ms"] >= r["timestamp_ms"]

    def test_ema_counts_and_levels(self, small_study):
        out, _ = small_study
        import csv
        with open(out / "ema.csv") as fh:
            rows = list(csv.DictReader(fh))
        per_day = collections.Counter()
        for r in rows:
            day = int(r["timestamp_ms"]) // 86_400_000
            per_day[(r["user_id"], day)] += 1
            assert 1 <= int(r["stress_level"]) <= 5
        assert all(c <= 7 for c in per_day.values())
        assert len(rows) > 10

    def test_trigger_cap_and_hours(self, small_study):
        out, _ = small_study
        triggers = collections.Counter()
        for r in read_jsonl(out / "triggers.jsonl"):
            if r["decision"] == "trigger":
                day, ms = divmod(r["timestamp_ms"], 86_400_000)
                assert 7 * 3_600_000 <= ms
                triggers[(r["user_id"], day)] += 1
        assert triggers and all(c <= 7 for c in triggers.values())

    def test_outage_causes_not_recent(self, small_study):
        out, _ = small_study
        # outage 10:00-14:00 on day 1: some skips in its tail must be not_recent
        tail = [r for r in read_jsonl(out / "triggers.jsonl")
                if 37_800_000 <= r["timestamp_ms"] < 50_400_000]
        assert any(r["reason"] == "not_recent" for r in tail)

    def test_outage_delays_arrivals(self, small_study):
        out, _ = small_study
        late = [r["arrival_ms"] - r["start_time_ms"]
                for r in read_jsonl(out / "bursts.jsonl")
                if r["channel"] == "ppg" and 36_000_000 <= r["start_time_ms"] < 50_000_000]
        assert max(late) > 40 * 60_000

    def test_latent_trace_shape(self, small_study):
        out, _ = small_study
        lines = (out / "latent.csv").read_text().strip().splitlines()
        assert lines[0] == "user_id,start_ms,end_ms,stress"
        spans = collections.defaultdict(list)
        for line in lines[1:]:
            u, s, e, st = line.split(",")
            assert int(st) in (0, 1)
            spans[u].append((int(s), int(e)))
        for user_spans in spans.values():
            assert user_spans[0][0] == 0
            assert user_spans[-1][1] == 2 * 86_400_000
            for (s1, e1), (s2, e2) in zip(user_spans, user_spans[1:]):
                assert e1 == s2


class TestDeterminism:
    def test_byte_identical(self, tmp_path):
        cfg = SimConfig(n_users=1, days=1, seed=77)
        run_simulation(cfg, tmp_path / "a")
        run_simulation(SimConfig(n_users=1, days=1, seed=77), tmp_path / "b")
        for name in ("bursts.jsonl", "context.jsonl", "ema.csv",
                      "triggers.jsonl", "latent.csv", "zones.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes(), name


class TestLatentCorrelation:
    def test_stressed_windows_have_higher_bpm(self, tmp_path):
        cfg = SimConfig(n_users=2, days=2, seed=5,
                        participants=ParticipantParams(stress_bpm_delta=16.0,
                                                       ema_compliance=1.0))
        run_simulation(cfg, tmp_path / "hi")
        matrix = featurize_directory(tmp_path / "hi")
        has_hrv = ~matrix.missing[:, 0]
        bpm = matrix.values[has_hrv, 0]
        lab = matrix.labels[has_hrv]
        assert bpm[lab == 1].mean() > bpm[lab == 0].mean()


class TestPersonalOverrides:
    def test_override_fields_respected(self, tmp_path):
        cfg = SimConfig(n_users=2, days=1, seed=3,
                        per_user={"u02": {"baseline_bpm": 100.0,
                                          "stress_bpm_delta": 0.0,
                                          "neutral_context": True}})
        run_simulation(cfg, tmp_path / "o")
        matrix = featurize_directory(tmp_path / "o")
        groups = np.array(matrix.groups, dtype=object)
        has_hrv = ~matrix.missing[:, 0]
        u2 = (groups == "u02") & has_hrv
        u1 = (groups == "u01") & has_hrv
        assert matrix.values[u2, 0].mean() > matrix.values[u1, 0].mean() + 10
