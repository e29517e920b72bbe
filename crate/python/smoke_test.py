"""Smoke test for the Python extension.

Build and install first:  maturin build --release -m crates/py/Cargo.toml
and pip install the wheel, then run  python python/smoke_test.py
"""

import math
from pathlib import Path

import spatavg_py as sa

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def close(a, b, tol):
    return abs(a - b) <= tol


def test_smoke():
    w = sa.minimize_missing_bias_closed_form([-3.0, 1.0, 3.0])
    assert all(close(x, y, 1e-12) for x, y in zip(w, [1 / 3, 1 / 2, 1 / 6])), w

    beta, lam, obj = sa.solve_qp([[1.0, 0.0], [0.0, 4.0]])
    assert close(beta[0], 0.8, 1e-12) and close(beta[1], 0.2, 1e-12), beta
    assert close(lam, 1.6, 1e-12) and close(obj, 0.8, 1e-12)

    panel = sa.Panel.read(FIXTURES / "panel.csv")
    truth = sa.Truth.read(FIXTURES / "truth.csv", panel)
    assert panel.n_sites == 24 and len(truth) == panel.n_steps

    m = sa.estimate_moments(panel, truth, sigma_eps=0.5, alpha=0.8)
    s = sa.optimize(m, "mse")
    assert close(sum(s.beta), 1.0, 1e-9) and min(s.beta) >= 0.0
    assert s.kkt_residual <= 1e-8
    uniform = [1.0 / panel.n_sites] * panel.n_sites
    r = sa.stat_report(m, uniform)
    assert s.report["mse"] <= r["mse"]
    assert close(r["mse"], r["bias_sq"] + r["variance"], 1e-12 * r["mse"])

    p, t = sa.generate_synthetic(6, 40, corr_length=0.3, sigma_eps=0.2, seed=1)
    u = [1 / 6] * 6
    sim = sa.simulate(p, t, u, 0.7, realizations=2000, seed=3)
    exact = sa.enumerate_exact(p, t, u, 0.7)
    assert abs(sim["variance"] - exact["variance"]) <= 4 * sim["mc_stderr_var"]
    assert sa.simulate(p, t, u, 0.7, realizations=2000, seed=3) == sim

    try:
        sa.estimate_moments(panel, truth, alpha=1.5)
    except sa.SpatavgError as e:
        assert str(e).startswith("invalid-parameter"), e
    else:
        raise AssertionError("alpha 1.5 accepted")

    print("smoke test ok:", s, "mse", round(s.report["mse"], 4), "uniform", round(r["mse"], 4))
    assert not math.isnan(s.report["se"])


if __name__ == "__main__":
    test_smoke()
