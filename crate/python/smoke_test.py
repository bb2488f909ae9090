"""Smoke test for the `platoon` extension module.

    pip install -e crates/py --no-build-isolation
    python python/smoke_test.py
"""

import math
import pathlib
import sys
import tempfile

import platoon

ROOT = pathlib.Path(__file__).resolve().parent.parent


def check(cond, msg):
    if not cond:
        print("FAIL:", msg)
        sys.exit(1)
    print("ok:", msg)


def main():
    cfg = platoon.Config.preset("reference").with_override("duration", "30")
    check(cfg.n_vehicles == 6 and cfg.duration == 30.0, "preset loads and overrides apply")

    tau, kp, kd, a_max, a_min = platoon.group_model(cfg)
    check(abs(tau - 0.1458333) < 1e-6 and abs(kd - 0.68) < 1e-9, "group model from consensus limits")
    check(a_max == 0.325 and a_min == -0.325, "common acceleration bounds")

    out = platoon.run(cfg)
    m = out.metrics
    check(not out.collision and m["consensus_time"] is not None, "reference run converges without collision")
    e = out.spacing_error(2)
    check(len(e) == len(out.times) and math.isnan(out.spacing_error(1)[0]), "per-vehicle series")

    again = platoon.run(platoon.Config.from_toml(cfg.to_toml()))
    check(again.csv() == out.csv(), "TOML round trip reproduces the run")

    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d) / "t.csv"
        out.write_csv(p)
        check(p.read_text() == out.csv(), "CSV written to disk")

    example = ROOT / "configs" / "two_vehicles.toml"
    if example.exists():
        check(not platoon.run(platoon.Config.from_toml(example.read_text())).collision, "example config runs")

    try:
        platoon.Config.from_toml("h = 'x'")
    except platoon.ConfigError:
        check(True, "bad config raises ConfigError")
    else:
        check(False, "bad config raises ConfigError")

    rep = platoon.replicate("cut-in")
    check(rep.passed and rep.arms == ["cut-in"], "cut-in suite passes")

    check(platoon.string_stability_gain(0.7, 1.0) < 1.0, "string stability gain below one")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
