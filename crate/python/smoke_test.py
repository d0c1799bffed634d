"""Smoke test for the pila_py extension.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import math

import numpy as np
import pila_py


def check_forward():
    # uplift peaks above the source and decays with distance
    stations = [(0.0, 0.0), (5.0, 0.0), (0.0, 10.0)]
    east, north, up = pila_py.forward(0.0, 0.0, 9.35, 3.7e6, stations)
    assert len(east) == len(north) == len(up) == 3
    assert up[0] > up[1] > 0 and up[0] > up[2] > 0
    assert abs(east[0]) < 1e-12 and abs(north[0]) < 1e-12
    # closed form: u_z = (1 - nu) dV d / (pi R^3), in mm
    d = 9.35e3
    expected = 0.75 * 3.7e6 * d / (math.pi * d**3) * 1e3
    assert math.isclose(up[0], expected, rel_tol=1e-12), (up[0], expected)
    # linear in dv
    _, _, up2 = pila_py.forward(0.0, 0.0, 9.35, 7.4e6, stations)
    assert np.allclose(np.array(up2), 2 * np.array(up), rtol=1e-12)


def check_synthesize():
    obs, truth = pila_py.synthesize("stations = 5\ndays = 120\ntest_window = [20, 80]\nevent_start = 30.0\nevent_duration = 20.0", 3)
    obs = np.asarray(obs)
    assert obs.shape == (120, 15)
    assert np.isfinite(obs).all()
    assert len(truth) == 120 and truth[-1][3] > truth[0][3]
    again, _ = pila_py.synthesize("stations = 5\ndays = 120\ntest_window = [20, 80]\nevent_start = 30.0\nevent_duration = 20.0", 3)
    assert np.array_equal(obs, np.asarray(again))


def check_experiment():
    metrics = pila_py.run_experiment(
        "stations = 4\ndays = 240\nevent_start = 100.0\nevent_duration = 40.0\ntest_window = [60, 180]",
        "epochs = 2\nhidden = 16\nrank = 2",
        seed=1,
    )
    assert metrics["n_test"] == 120
    assert math.isfinite(metrics["test_mse"])
    assert 0.0 <= metrics["saturation"] <= 1.0


def check_errors():
    try:
        pila_py.synthesize("bogus = 1")
    except ValueError as e:
        assert "bogus" in str(e)
    else:
        raise AssertionError("unknown key accepted")
    try:
        pila_py.forward(0.0, 0.0, -1.0, 1.0, [(0.0, 0.0)])
    except ValueError:
        pass
    else:
        raise AssertionError("negative depth accepted")


if __name__ == "__main__":
    bounds = pila_py.default_bounds()
    assert bounds["depth"] == (2.0, 20.0)
    check_forward()
    check_synthesize()
    check_experiment()
    check_errors()
    print("pila_py smoke test passed")
