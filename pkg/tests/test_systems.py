import numpy as np
import pytest

from diffctrl.systems import (
    SmoothField,
    bracket_field,
    chained_5d,
    chow_rashevsky_rank,
    drift_eval,
    get_system,
    jacobian_self_test,
    lie_bracket,
    single_integrator,
    unicycle,
)

ALL_SYSTEMS = [single_integrator(2), single_integrator(3), chained_5d(), unicycle()]


def test_driftless_zero_input():
    for sys in ALL_SYSTEMS:
        x = np.linspace(-1, 1, sys.d)
        assert np.array_equal(drift_eval(sys, x, np.zeros(sys.m)), np.zeros(sys.d))


def test_unicycle_drift_hand_value():
    # cos 0 = 1, sin 0 = 0
    out = drift_eval(unicycle(), np.zeros(3), np.array([1.0, 0.0]))
    assert np.allclose(out, [1.0, 0.0, 0.0], atol=1e-15)


def test_chained_drift_hand_value():
    # substitute x = (0, 1, 2, 3, 0), u = (1, 0) into the chained equations
    out = drift_eval(chained_5d(), np.array([0.0, 1.0, 2.0, 3.0, 0.0]), np.array([1.0, 0.0]))
    assert np.allclose(out, [1.0, 0.0, 1.0, 2.0, 3.0], atol=1e-15)


def test_drift_linearity():
    rng = np.random.default_rng(1)
    for sys in ALL_SYSTEMS:
        for _ in range(20):
            x = rng.normal(size=sys.d)
            u = rng.normal(size=sys.m)
            v = rng.normal(size=sys.m)
            a, b = rng.normal(size=2)
            lhs = drift_eval(sys, x, a * u + b * v)
            rhs = a * drift_eval(sys, x, u) + b * drift_eval(sys, x, v)
            assert np.abs(lhs - rhs).max() < 1e-12


def test_drift_dimension_mismatch():
    with pytest.raises(ValueError):
        drift_eval(unicycle(), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        drift_eval(unicycle(), np.zeros(3), np.zeros(3))


def test_jacobian_consistency_100_points():
    rng = np.random.default_rng(2)
    for sys in ALL_SYSTEMS:
        pts = rng.normal(scale=2.0, size=(100, sys.d))
        jacobian_self_test(sys, pts, rtol=1e-6)


def test_bracket_of_constant_fields_vanishes():
    c1 = SmoothField(value=lambda x: np.array([1.0, 2.0]), jac=lambda x: np.zeros((2, 2)))
    c2 = SmoothField(value=lambda x: np.array([-3.0, 0.5]), jac=lambda x: np.zeros((2, 2)))
    assert np.array_equal(lie_bracket(c1, c2, np.zeros(2)), np.zeros(2))


def test_unicycle_bracket_hand_value():
    # -d/dtheta (cos, sin, 0) at theta = 0 gives (0, -1, 0)
    sys = unicycle()
    out = lie_bracket(sys.field(0), sys.field(1), np.zeros(3))
    assert np.allclose(out, [0.0, -1.0, 0.0], atol=1e-15)


def test_chained_bracket_hand_value():
    # d/dx2 of (1, 0, x2, x3, x4) gives (0, 0, 1, 0, 0) at any point
    sys = chained_5d()
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(size=5)
        out = lie_bracket(sys.field(1), sys.field(0), x)
        assert np.allclose(out, [0.0, 0.0, 1.0, 0.0, 0.0], atol=1e-14)


def test_bracket_antisymmetry_and_bilinearity():
    sys = unicycle()
    g0, g1 = sys.field(0), sys.field(1)
    rng = np.random.default_rng(4)

    def combo(a, fa, b, fb):
        return SmoothField(
            value=lambda x: a * fa.value(x) + b * fb.value(x),
            jac=lambda x: a * fa.jac(x) + b * fb.jac(x),
        )

    for _ in range(20):
        x = rng.normal(size=3)
        assert np.allclose(lie_bracket(g0, g1, x), -lie_bracket(g1, g0, x), atol=1e-14)
        a, b = rng.normal(size=2)
        lhs = lie_bracket(combo(a, g0, b, g1), g0, x)
        rhs = a * lie_bracket(g0, g0, x) + b * lie_bracket(g1, g0, x)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_ranks():
    assert chow_rashevsky_rank(single_integrator(3), np.zeros(3), 0) == 3
    assert chow_rashevsky_rank(unicycle(), np.zeros(3), 1) == 3
    assert chow_rashevsky_rank(chained_5d(), np.zeros(5), 3) == 5


def test_rank_monotone_and_bounded():
    rng = np.random.default_rng(5)
    for sys in ALL_SYSTEMS:
        x = rng.normal(size=sys.d)
        prev = 0
        for depth in range(4):
            r = chow_rashevsky_rank(sys, x, depth)
            assert prev <= r <= sys.d
            prev = r


def test_rank_needs_depth():
    # the unicycle fields alone span only 2 directions
    assert chow_rashevsky_rank(unicycle(), np.zeros(3), 0) == 2
    assert chow_rashevsky_rank(chained_5d(), np.zeros(5), 1) == 3


def test_bracket_field_jacobian_is_fd():
    sys = unicycle()
    bf = bracket_field(sys.field(0), sys.field(1))
    x = np.array([0.2, -0.1, 0.4])
    # value is (sin, -cos, 0); check the FD Jacobian is close to analytic
    expected = np.zeros((3, 3))
    expected[0, 2] = np.cos(x[2])
    expected[1, 2] = np.sin(x[2])
    assert np.allclose(bf.jac(x), expected, atol=1e-8)


def test_registry_lookup():
    assert get_system("unicycle").name == "unicycle"
    assert get_system("single_integrator_4").d == 4
    with pytest.raises(KeyError):
        get_system("no_such_system")
