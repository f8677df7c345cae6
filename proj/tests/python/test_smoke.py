"""Smoke tests for the _dlab python module (built by CMake; PYTHONPATH set by ctest)."""

import json
import math

import pytest

try:
    import dlab
except ImportError:
    import _dlab as dlab


@pytest.fixture
def target():
    return dlab.GaussianMixture(
        weights=[0.5, 0.5],
        means=[[-2.0, -2.0], [2.0, 2.0]],
        variances=[[1.0, 1.0], [1.0, 1.0]],
    )


def test_log_density_and_score(target):
    x = [0.3, -0.1]
    ld = target.log_density(x)
    assert math.isfinite(ld)
    # finite-difference check of the score
    h = 1e-6
    s = target.score(x)
    for j in range(2):
        xp = list(x)
        xm = list(x)
        xp[j] += h
        xm[j] -= h
        fd = (target.log_density(xp) - target.log_density(xm)) / (2 * h)
        assert s[j] == pytest.approx(fd, abs=1e-5)


def test_posterior_normalized(target):
    p = target.posterior([0.5, 0.5])
    assert sum(p) == pytest.approx(1.0, abs=1e-12)
    assert all(v >= 0 for v in p)


def test_perturb_moments(target):
    pert = dlab.perturb(target, 0.5, 2.0)
    mv = pert.marginal_variance()
    base = target.marginal_variance()
    for j in range(2):
        assert mv[j] == pytest.approx(0.25 * base[j] + 2.0, rel=1e-12)


def test_ancestral_shapes(target):
    sched = dlab.make_linear_schedule(1.0, 50)
    samples, nfe = dlab.sample_ancestral(target, sched, n=16, seed=7)
    assert nfe == 50
    assert len(samples) == 16 and len(samples[0]) == 2


def test_karras_grid_endpoints():
    ks = dlab.karras_steps(0.002, 80.0, 7.0, 18)
    assert ks[0] == 80.0
    assert ks[-2] == 0.002
    assert ks[-1] == 0.0
    assert all(a > b for a, b in zip(ks, ks[1:]))


def test_heun_sampler_and_metrics(target):
    cs = dlab.make_karras_schedule(0.002, 80.0)
    grid = dlab.ode_time_grid(cs, 32)
    samples, nfe = dlab.sample_ode(target, cs, grid, "heun", 400, seed=3)
    assert nfe == 2 * 32 - 1
    score = dlab.surrogate_score(target, samples)
    assert 1.0 <= score <= 2.0
    fre = dlab.frechet_to_target(target, samples)
    assert fre < 1.0


def test_estimate_order_heun():
    order = dlab.estimate_order("heun", [8, 16, 32, 64])
    assert 1.7 < order < 2.3


def test_run_grid_from_json(target):
    cfg = {
        "target": {
            "weights": [0.5, 0.5],
            "means": [[-2.0, -2.0], [2.0, 2.0]],
            "variances": [[1.0, 1.0], [1.0, 1.0]],
        },
        "grid": {
            "schedules": [{"kind": "linear", "factor": 1.0, "steps": 100}],
            "samplers": [{"kind": "ddim", "stride": 10}],
        },
        "sampling": {"n_samples": 64, "seeds": [0]},
    }
    text = json.dumps(cfg)
    out = dlab.run_grid(text, threads=1)
    assert len(out["records"]) == 1
    assert out["records"][0]["nfe"] == 10
    assert not out["failures"]
    assert len(dlab.config_hash(text)) == 16
