import math

import numpy as np
import pytest

from beadstring.model import segment_grids, uniform_system, validate_system
from beadstring.spaces import check_compatibility, dual_term, end_slope, norm_W0, norm_Wm1, norms_report
from beadstring.spectral import eigen_system

S1 = uniform_system(1.0, [0.5], [1.0])


def test_W0_mixes_L2_H1_and_mass():
    xs = segment_grids(S1, 0.01)
    # int_0^.5 x^2 + int_.5^1 (x^2 + 1) + M (1/2)^2 = 13/12
    assert norm_W0(xs, list(xs), S1) ** 2 == pytest.approx(13 / 12, rel=1e-10)


def test_no_mass_W0_is_L2():
    s = validate_system({"ell": 1.0})
    xs = segment_grids(s, 0.01)
    assert norm_W0(xs, [np.sin(np.pi * xs[0])], s) ** 2 == pytest.approx(0.5, rel=1e-8)


def test_dual_term_closed_form():
    # -w'' + w = 1, w(0) = 0, w'(1/2) = 0 gives ||w||^2 = 1/2 - tanh(1/2)
    x = np.linspace(0, 0.5, 201)
    assert dual_term(x, np.ones_like(x)) == pytest.approx(0.5 - math.tanh(0.5), abs=2e-6)


def test_Wm1_second_segment_is_L2_without_mass_term():
    xs = segment_grids(S1, 0.01)
    assert norm_Wm1(xs, [0 * xs[0], 1 + 0 * xs[1]], S1) ** 2 == pytest.approx(0.5, rel=1e-12)


def test_end_slopes_are_second_order():
    x = np.linspace(0, 0.5, 51)
    assert end_slope(x ** 2, 0.01, "right") == pytest.approx(1.0, abs=1e-12)
    assert end_slope(x ** 2, 0.01, "left") == pytest.approx(0.0, abs=1e-12)


def test_compatibility_flags_nonzero_far_end():
    xs = segment_grids(S1, 0.01)
    bad = check_compatibility(S1, xs, list(xs))
    assert not bad.passed
    assert [f["location"] for f in bad.failures()] == ["ell"]
    assert check_compatibility(S1, xs, [x * (1 - x) for x in xs]).passed


def test_compatibility_flags_jump_where_continuity_is_required():
    s = uniform_system(1.0, [0.3, 0.6], [1.0, 0.5])
    xs = segment_grids(s, 0.005)
    u = [np.sin(np.pi * x) for x in xs]
    assert check_compatibility(s, xs, u).passed is not None
    u[2] = u[2] + 0.3 * np.cos(0.5 * np.pi * (xs[2] - 0.6) / 0.4)
    assert not check_compatibility(s, xs, u).passed


def test_eigenfunctions_satisfy_higher_identities():
    s = uniform_system(1.0, [0.3, 0.6], [1.0, 0.5])
    for e in eigen_system(s, 6, 0.002):
        assert check_compatibility(s, e.xs, e.phis, extra=2).passed


def test_norms_report_keys():
    xs = segment_grids(S1, 0.01)
    rep = norms_report(S1, xs, [x * (1 - x) for x in xs], [0 * x for x in xs])
    assert {"W0", "Wm1"} <= set(rep)
