"""Smoke test for the pyvoltreach extension.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run `python python/smoke_test.py`.
"""

import os
import tempfile

import pyvoltreach as vr


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok   {msg}")


def main():
    cfg = vr.Config()
    back = vr.Config.from_toml(cfg.to_toml())
    check(back.hash() == cfg.hash(), "config round-trips through TOML")

    try:
        vr.Config.from_toml("[td3]\ngamma = 2.0\n")
    except ValueError as e:
        check("gamma" in str(e), "invalid config raises ValueError")
    else:
        raise SystemExit("FAIL: invalid config accepted")

    sim = vr.simulate(cfg)
    labels = [label for _, label in sim["events"]]
    check(sim["termination"] == "gen", "reference run ends in generator loss")
    check(labels[0].startswith("trip"), "first event is the line trip")
    check(200.0 <= sim["collapse_time"] - 10.0 <= 400.0, "collapse 200-400 s after the trip")
    check(len(sim["t"]) == len(sim["v"]), "trajectory columns align")

    quiet = vr.Config.from_toml("[scenario]\ndisturbance = false\nhorizon_s = 60.0\n")
    check(vr.simulate(quiet)["termination"] == "horizon", "undisturbed run survives")

    dp = vr.solve_toy()
    v = dp.value_at(10.0, 1.0)
    check(0.0 <= v <= 1.0, f"DP value in [0, 1] (v*(10, 1) = {v:.4f})")
    check(dp.value_at(10.0, 0.5) <= dp.value_at(10.0, 1.0), "DP value increases with z")

    est = vr.mc_risk(env="toy", episodes=2000, seed=1)
    check(est["lo"] <= est["risk"] <= est["hi"], "MC estimate inside its interval")
    check(sum(est["failures_by_mechanism"]) == est["failures"], "mechanism counts partition failures")

    trainer = vr.Trainer(vr.Config.from_toml("[td3]\nhidden = [16, 16]\nstart_steps = 100\n"), env="toy")
    trainer.run(300)
    check(trainer.env_steps == 300, "trainer advances")
    report = trainer.compare_with_oracle()
    check(0.0 <= report["action_agreement"] <= 1.0, "oracle comparison reports")

    ens = trainer.ensemble()
    x = [0.0] * ens.state_dim
    check(-1.0 <= ens.act(x) <= 1.0, "actor output within bounds")
    check(0.0 <= ens.risk(x) <= 1.0, "learned risk within [0, 1]")
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "checkpoint.txt")
        ens.save(path)
        again = vr.load_ensemble(path)
        check(again.values(x) == ens.values(x), "checkpoint reload is exact")
    try:
        ens.act([0.0])
    except ValueError:
        check(True, "wrong feature count raises ValueError")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
