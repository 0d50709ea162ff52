"""Smoke test for the swfqe extension module. Run after building it:

    cd crates/py && maturin develop --release   # or: pip install --no-build-isolation -e crates/py
    python python/smoke_test.py
"""

import math
import tempfile

import swfqe


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok: {msg}")


def main():
    env = swfqe.Environment.garnet(seed=3, n_states=20, n_actions=2, gamma=0.9)
    check(env.n_states == 20 and env.n_actions == 2, "garnet dimensions")
    mu = env.stationary()
    check(abs(sum(mu) - 1.0) < 1e-12, "stationary distribution sums to one")

    # Q* lies in the feature span, so the projected fixed point is Q* itself
    fixed = env.projected_fixed_point()
    gap = max(abs(a - b) for a, b in zip(fixed, env.q_star))
    check(gap < 1e-8, f"realizable fixed point equals Q* (gap {gap:.1e})")

    data = swfqe.Dataset.sample(env, 4000, scheme="reset", seed=1)
    check(len(data) == 4000, "dataset size")
    back = swfqe.Dataset.from_csv(data.to_csv(), seed=1)
    check(back.transitions == data.transitions, "dataset CSV roundtrip")

    rows = swfqe.fqe(env, data, iterations=40, weighting="exact_ratio")
    check(len(rows) == 41 and rows[0]["k"] == 0, "one row per iterate")
    check(rows[-1]["err_mu"] < rows[0]["err_mu"], "SW-FQE error decreases")

    w = env.exact_ratio("reset")
    w_hat = swfqe.estimate_ratio(env, data, method="dice")
    err = swfqe.ratio_error(env, w_hat, w)
    check(math.isfinite(err) and err < 1.0, f"DICE ratio error {err:.3f}")

    baird = swfqe.Environment.baird(0.7, gamma=0.95)
    check(baird.n_states == 7 and len(baird.features[0]) == 14, "Baird shapes")

    check("garnet_main" in swfqe.preset_names(), "presets listed")
    config = """
experiment = "garnet_sweep"
name = "smoke"
seeds = 2
gamma = [0.9]
n = 300
iterations = 3
n_states = 8
n_actions = 2
"""
    with tempfile.TemporaryDirectory() as out:
        paths = swfqe.run_experiment(config, out)
        check(any(p.endswith("smoke.csv") for p in paths), "experiment writes CSVs")

    try:
        swfqe.Environment.baird(0.7, gamma=1.5)
    except ValueError as e:
        check("gamma" in str(e), "invalid gamma raises ValueError")
    else:
        raise SystemExit("FAIL: invalid gamma accepted")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
