import numpy as np
import pytest
from scipy.special import j1

from beadstring.goursat import KernelTable, build_kernel, edge_derivatives, interior_residual, solve_goursat
from beadstring.model import PreconditionError, uniform_system


def _const_kernel(c, y, s):
    # constant potential c: k = -c y J1(sqrt(c) z) / (sqrt(c) z), z^2 = s^2 - y^2
    z = np.sqrt(c * (s * s - y * y))
    return -c * y * (j1(z) / z if z > 0 else 0.5)


# reference values from the Bessel closed form
FROZEN = {(0.5, 1.0): -0.6690524776, (0.25, 0.75): -0.3849933109, (0.0, 0.6): 0.0}


@pytest.mark.parametrize("ys", list(FROZEN))
def test_constant_potential_kernel(ys):
    y, s = ys
    assert _const_kernel(4.0, y, s) == pytest.approx(FROZEN[ys], abs=1e-9)
    h = 0.0125
    v, _ = solve_goursat(lambda x: 4.0 + 0.0 * np.asarray(x, float), 1.0, h)
    assert v[int(round(y / h)), int(round(s / h))] == pytest.approx(FROZEN[ys], abs=2e-5)


def test_diagonal_is_half_integral_of_potential():
    q = lambda x: 1.0 + 3.0 * np.asarray(x, float) ** 2
    h = 0.02
    v, _ = solve_goursat(q, 1.0, h)
    tab = KernelTable(0.0, 1, 1.0, h, v, q)
    y = h * np.arange(v.shape[0])
    assert np.allclose(tab.diag(), -0.5 * (y + y ** 3), atol=1e-12)


def test_zero_potential_gives_zero_kernel():
    s = uniform_system(1.0, [0.5], [1.0])
    k = build_kernel(s, 0, 1, 1.0, 0.05)
    assert k.zero or np.max(np.abs(k.values)) == 0.0


def test_edge_derivative_on_boundary_line():
    # q = 1: dk/dy(0, s) = -J1(s)/s
    h = 0.01
    q = lambda x: 1.0 + 0.0 * np.asarray(x, float)
    v, _ = solve_goursat(q, 1.0, h)
    ky = edge_derivatives(KernelTable(0.0, 1, 1.0, h, v, q))["ky"]
    s = h * np.arange(1, v.shape[1])
    assert np.max(np.abs(ky[1:] - (-j1(s) / s))) < 1e-3


def test_interior_residual_shrinks():
    q = lambda x: np.cos(3 * np.asarray(x, float))
    r = []
    for h in (0.04, 0.02):
        v, _ = solve_goursat(q, 1.0, h)
        r.append(np.max(np.abs(interior_residual(KernelTable(0.0, 1, 1.0, h, v, q)))))
    assert r[1] < 0.4 * r[0]


def test_horizon_must_be_commensurate():
    with pytest.raises(PreconditionError):
        solve_goursat(lambda x: 0.0 * x, 1.0, 0.3)
