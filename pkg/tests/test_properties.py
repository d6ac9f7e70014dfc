import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from beadstring import control as C
from beadstring import edd
from beadstring.dynamics import TransmissionOperator, simulate_characteristics
from beadstring.model import ConfigError, SampledFunction, uniform_system, validate_system

finite = st.floats(-10, 10, allow_nan=False)


@st.composite
def separated_nodes(draw, n_max=5):
    n = draw(st.integers(1, n_max))
    gaps = draw(st.lists(st.floats(0.05, 2.0), min_size=n, max_size=n))
    return np.cumsum(gaps)


@given(separated_nodes(), st.data())
def test_divided_differences_invert(lams, data):
    a = np.array(data.draw(st.lists(finite, min_size=len(lams), max_size=len(lams))))
    back = edd.dd_reconstruct(lams, edd.dd_numbers(lams, a))
    assert np.allclose(back, a, rtol=1e-9, atol=1e-9)


@given(separated_nodes(4), st.randoms(use_true_random=False))
def test_top_divided_difference_symmetric(lams, rnd):
    a = np.cos(3 * lams)
    perm = list(range(len(lams)))
    rnd.shuffle(perm)
    x = edd.dd_numbers(lams, a)[-1]
    y = edd.dd_numbers(lams[perm], a[perm])[-1]
    assert x == pytest.approx(y, rel=1e-8, abs=1e-10)


@given(st.lists(finite, min_size=2, max_size=30), st.floats(0.01, 1.0), st.floats(0, 1))
def test_interpolant_stays_in_range(vals, step, frac):
    f = SampledFunction(0.0, step, vals)
    y = float(f(frac * f.end))
    assert min(vals) - 1e-9 <= y <= max(vals) + 1e-9


@given(st.floats(-1.0, 2.0), st.floats(-3, 3), st.floats(-3, 3))
def test_validate_rejects_misplaced_masses(a, ell, M):
    raw = {"ell": ell, "masses": [{"a": a, "M": M}]}
    ok = ell > 0 and M > 0 and 0 < a < ell
    if ok:
        assert validate_system(raw).positions == (a,)
    else:
        with pytest.raises(ConfigError):
            validate_system(raw)


S = uniform_system(1.0, [0.4], [1.0], q=0.5)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_simulation_is_linear(alpha, beta):
    f = lambda t: np.sin(2 * np.asarray(t, float)) ** 2
    g = lambda t: np.asarray(t, float) ** 2
    a = simulate_characteristics(S, f, 0.8, 0.02)
    b = simulate_characteristics(S, g, 0.8, 0.02)
    c = simulate_characteristics(S, lambda t: alpha * f(t) + beta * g(t), 0.8, 0.02)
    for u, v, w in zip(a.u, b.u, c.u):
        assert np.allclose(w, alpha * u + beta * v, atol=1e-11)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.5, 6.0))
def test_transmission_round_trip(M, w):
    s = uniform_system(1.0, [0.5], [M])
    h = 2e-3
    t = h * np.arange(251)
    f = np.sin(w * t) ** 2
    Sop = TransmissionOperator(s, 1, h)
    assert np.max(np.abs(Sop.inverse(Sop.apply(f)).values - f)) < 1e-6


def test_full_control_is_linear():
    s = uniform_system(1.0, [0.4], [1.0])
    dx, T = 0.01, 2.2
    g = lambda t: np.sin(np.pi * np.asarray(t, float) / T) ** 2 * np.cos(1.3 * np.asarray(t, float))
    snap = simulate_characteristics(s, g, T, dx)
    spec = C.spectral_data(s, 10, dx)
    base = C.full_control(s, snap.u, snap.ut, T, 10, dx, spec=spec).control.values
    for alpha in (-2.0, 0.5, 3.0):
        y0 = tuple(alpha * v for v in snap.u)
        y1 = tuple(alpha * v for v in snap.ut)
        got = C.full_control(s, y0, y1, T, 10, dx, spec=spec).control.values
        assert np.allclose(got, alpha * base, atol=1e-10 * max(1.0, abs(alpha)) * np.max(np.abs(base)))
