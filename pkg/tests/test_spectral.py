import math

import numpy as np
import pytest
from scipy.optimize import brentq

from beadstring.model import uniform_system, validate_system
from beadstring.spectral import (G_closed_one_mass, assign_families, cluster, count_below, eigenfunction,
                                 find_frequencies, inner_M, write_spectrum_csv)

# lam*sin(lam/2) = 2 cos(lam/2) on (0, pi), (2 pi, 3 pi): centred unit mass on a unit string
ODD_ROOTS = [1.7206671780, 6.8512369190]


def test_frozen_roots_are_oracle_roots():
    g = lambda x: x * math.sin(x / 2) - 2 * math.cos(x / 2)
    for k, r in enumerate(ODD_ROOTS):
        assert brentq(g, 2 * math.pi * k + 1e-9, 2 * math.pi * k + math.pi - 1e-9) == pytest.approx(r, abs=1e-9)


def test_centred_mass_spectrum():
    f = find_frequencies(uniform_system(1.0, [0.5], [1.0]), count=3)
    assert f == pytest.approx([ODD_ROOTS[0], 2 * math.pi, ODD_ROOTS[1]], abs=1e-9)


def test_closed_form_characteristic_function():
    assert abs(G_closed_one_mass(2 * math.pi, 0.5, 0.5, 1.0)) < 1e-12
    assert abs(G_closed_one_mass(ODD_ROOTS[0], 0.5, 0.5, 1.0)) < 1e-9


def test_counting_function():
    s = uniform_system(1.0, [0.5], [1.0])
    assert count_below(s, 1.0) == 0
    assert count_below(s, 10.0) == 3


def test_free_string_modes():
    s = validate_system({"ell": 2.0})
    f = find_frequencies(s, count=4)
    assert f == pytest.approx(math.pi / 2 * np.arange(1, 5), abs=1e-10)
    e = eigenfunction(s, f[1], 0.01)
    # normalised sin(pi x): amplitude 1 on length 2
    assert np.max(np.abs(e.phis[0])) == pytest.approx(1.0, abs=1e-6)


def test_modes_are_M_orthonormal():
    s = uniform_system(1.0, [0.3, 0.6], [1.0, 0.5], q=2.0)
    lams = find_frequencies(s, count=5)
    es = [eigenfunction(s, l, 0.002) for l in lams]
    G = np.array([[inner_M(s, a.xs, a.phis, b.phis) for b in es] for a in es])
    assert np.max(np.abs(G - np.eye(5))) < 1e-7


def test_constant_potential_shifts_squares():
    # without masses q = c shifts every lam^2 by c (a mass couples to lam^2 itself)
    base = find_frequencies(validate_system({"ell": 1.0}), count=6)
    shifted = find_frequencies(validate_system({"ell": 1.0, "potentials": [{"kind": "poly", "data": [3.0]}]}),
                               count=6)
    assert shifted ** 2 == pytest.approx(base ** 2 + 3.0, abs=1e-8)


def test_clusters_and_families():
    s = uniform_system(1.0, [0.5], [1.0])
    f = find_frequencies(s, count=30)
    cs = cluster(f, s)
    assert max(cs.sizes()) <= 2 and sum(cs.sizes()) == 30
    assert [c.min() for c in cs.clusters] == sorted(c.min() for c in cs.clusters)
    fam = assign_families(f, s)
    # only the lowest frequency sits below every asymptotic slot
    assert [i for i, j, _, _ in fam if j is None] == [0]
    mir = cs.mirrored()
    assert mir.labels[0] == -len(cs.clusters)


def test_spectrum_csv_full_precision(tmp_path):
    s = uniform_system(1.0, [0.5], [1.0])
    p = tmp_path / "spec.csv"
    write_spectrum_csv(p, find_frequencies(s, count=3), s)
    text = p.read_text()
    assert "1.72066717803" in text
