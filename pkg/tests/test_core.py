import math

import numpy as np
import pytest

from diffctrl.core import (
    BoxDomain,
    Ensemble,
    GaussianSpec,
    KernelConfig,
    kernel_eval,
    sample_gaussian,
    sample_uniform,
)


def test_kernel_peak_unit_gaussian():
    # peak of the unit Gaussian: 1/sqrt(2 pi)
    val = kernel_eval(KernelConfig(bandwidth=1.0), np.array([0.0]))
    assert val == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), rel=1e-15)


def test_kernel_symmetry():
    cfg = KernelConfig(bandwidth=0.7)
    r = np.array([0.3, -1.2, 0.4])
    assert kernel_eval(cfg, r) == kernel_eval(cfg, -r)


def test_kernel_hand_evaluation_2d():
    # direct arithmetic evaluation of (2 pi d^2)^(-d/2) exp(-|r|^2/(2 d^2))
    cfg = KernelConfig(bandwidth=0.5)
    expected = (2.0 * math.pi * 0.25) ** -1 * math.exp(-0.25 / (2.0 * 0.25))
    assert expected == pytest.approx(0.3861, abs=5e-5)
    assert kernel_eval(cfg, np.array([0.5, 0.0])) == pytest.approx(expected, rel=1e-14)


def test_kernel_positive_and_rejects_nonfinite():
    cfg = KernelConfig(bandwidth=0.3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert kernel_eval(cfg, rng.normal(size=3)) > 0.0
    with pytest.raises(ValueError):
        kernel_eval(cfg, np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        kernel_eval(cfg, np.array([np.inf]))


def test_kernel_bandwidth_validation():
    with pytest.raises(ValueError):
        KernelConfig(bandwidth=0.0)
    with pytest.raises(ValueError):
        KernelConfig(bandwidth=-1.0)


@pytest.mark.parametrize("d,delta", [(1, 1.0), (1, 0.3), (2, 0.5)])
def test_kernel_quadrature_normalizes(d, delta):
    # trapezoid quadrature over a wide grid; spectrally accurate for the
    # smooth, rapidly decaying integrand
    cfg = KernelConfig(bandwidth=delta)
    span = 10.0 * delta
    n = 161
    axis = np.linspace(-span, span, n)
    h = axis[1] - axis[0]
    if d == 1:
        vals = np.array([kernel_eval(cfg, np.array([x])) for x in axis])
        total = np.trapezoid(vals, dx=h)
    else:
        X, Y = np.meshgrid(axis, axis, indexing="ij")
        R2 = X**2 + Y**2
        vals = (2 * np.pi * delta**2) ** -1 * np.exp(-R2 / (2 * delta**2))
        total = np.trapezoid(np.trapezoid(vals, dx=h, axis=1), dx=h)
    assert abs(total - 1.0) < 1e-6


def test_sample_gaussian_mean_bound():
    # standard-error oracle: 3 sigma/sqrt(M) = 3 sqrt(0.2/10000) < 0.0135 < 0.02
    spec = GaussianSpec(mean=np.zeros(3), cov_scale=0.2)
    ens = sample_gaussian(spec, 10000, seed=7)
    assert np.all(np.abs(ens.states.mean(axis=0)) < 0.02)
    assert ens.states.var(axis=0).mean() == pytest.approx(0.2, rel=0.05)


def test_sample_gaussian_deterministic_and_single():
    spec = GaussianSpec(mean=np.array([1.0, -2.0]), cov_scale=0.5)
    a = sample_gaussian(spec, 100, seed=3)
    b = sample_gaussian(spec, 100, seed=3)
    assert np.array_equal(a.states, b.states)
    assert sample_gaussian(spec, 1, seed=0).m == 1


def test_sample_uniform_inside_box():
    box = BoxDomain.cube(-4.0, 4.0, 5)
    ens = sample_uniform(box, 2000, seed=11)
    assert ens.m == 2000 and ens.d == 5
    assert box.contains(ens.states)


def test_sample_uniform_mean_bound():
    # CLT oracle: 3 / sqrt(3 * 10000) < 0.0174 < 0.03 for U(-1, 1)
    box = BoxDomain.cube(-1.0, 1.0, 2)
    ens = sample_uniform(box, 10000, seed=5)
    assert np.all(np.abs(ens.states.mean(axis=0)) < 0.03)


def test_sample_uniform_rejects_unbounded():
    box = BoxDomain(np.array([-1.0, -1.0]), np.array([1.0, 1.0]), np.array([True, False]))
    with pytest.raises(ValueError):
        sample_uniform(box, 10, seed=0)


def test_sample_uniform_deterministic():
    box = BoxDomain.cube(0.0, 1.0, 3)
    assert np.array_equal(sample_uniform(box, 64, 9).states, sample_uniform(box, 64, 9).states)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        Ensemble(states=np.zeros((0, 2)))
    with pytest.raises(ValueError):
        Ensemble(states=np.array([[np.nan, 0.0]]))
    with pytest.raises(ValueError):
        Ensemble(states=np.zeros(3))


def test_box_validation():
    with pytest.raises(ValueError):
        BoxDomain(np.array([1.0]), np.array([0.0]), np.array([True]))
    # swapped bounds are fine when the coordinate is unbounded
    BoxDomain(np.array([1.0]), np.array([0.0]), np.array([False]))
