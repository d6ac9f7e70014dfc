"""The operator L = -d^2/dx^2 + q, junction conditions, and the terminal-state norms.

Functions here take per-segment samples: xs[j] and values[j] on the closed
segment j (left limit and right limit at the ends).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import solve_banded

from .model import PreconditionError, StringSystem


def _d2(u, h):
    """Second derivative; 4-point one-sided at the ends (second order)."""
    if len(u) < 4:
        raise PreconditionError("insufficient samples for a second derivative")
    d = np.empty_like(u)
    d[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / h ** 2
    d[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / h ** 2
    d[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / h ** 2
    return d


def end_slope(u, h, side):
    """First derivative at an end with the 4-point one-sided stencil."""
    if side == "left":
        return (-11 * u[0] + 18 * u[1] - 9 * u[2] + 2 * u[3]) / (6 * h)
    return (11 * u[-1] - 18 * u[-2] + 9 * u[-3] - 2 * u[-4]) / (6 * h)


def apply_L(system: StringSystem, xs, phis, n: int = 1):
    """L^n phi segmentwise; no coupling across the masses."""
    out = []
    for j, (x, v) in enumerate(zip(xs, phis)):
        v = np.asarray(v, float)
        if n > 0 and len(v) < max(4, 2 * n + 1):
            raise PreconditionError(f"segment {j} has too few samples for L^{n}")
        h = x[1] - x[0]
        qv = system.potentials[j](x)
        for _ in range(n):
            v = -_d2(v, h) + qv * v
        out.append(v)
    return out


@dataclass
class CompatibilityReport:
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e["pass"] for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e["pass"]]

    def max_residual(self) -> float:
        return max((abs(e["residual"]) for e in self.entries), default=0.0)

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "entries": self.entries}, indent=2, sort_keys=True)


def _conditions_at(i):
    """Numbers of continuity (even) and flux (odd) identities in condition C^i."""
    if i <= 0:
        return 0, 0
    c = math.ceil(i / 2)
    return c, max(0, c - 1)


def _check_field(system, xs, vals, shift, label, C, dx, dt, report, extra):
    N = system.N
    vmax = max(float(np.max(np.abs(v))) for v in vals) if vals else 0.0
    # highest L-power needed anywhere
    top = 0
    for jj in range(1, N + 2):
        ne, no = _conditions_at(jj - 1 + shift + extra)
        top = max(top, ne, no + 1)
    powers = [list(vals)]
    for _ in range(top):
        powers.append(apply_L(system, xs, powers[-1], 1))
    # frequency content estimate keeps the tolerance meaningful for oscillatory data
    if top >= 1 and vmax > 0:
        l1 = max(float(np.max(np.abs(v[2:-2]))) if len(v) > 4 else 0.0 for v in powers[1])
        kappa2 = l1 / vmax
    else:
        kappa2 = 0.0
    base = C * (dx ** 2 + dt) * (1.0 + kappa2) ** (1 + top)
    for jj in range(1, N + 2):
        i = jj - 1 + shift + extra
        ne, no = _conditions_at(i)
        if jj == N + 1:
            for n in range(ne):
                val = powers[n][N][-1]
                scale = 1.0 + vmax + abs(val)
                report.entries.append({"field": label, "location": "ell", "kind": "boundary", "order": n,
                                       "residual": float(val), "pass": bool(abs(val) <= base * scale)})
            continue
        left, right = jj - 1, jj
        h = xs[right][1] - xs[right][0]
        M = system.masses[jj - 1]
        for n in range(ne):
            a, b = powers[n][left][-1], powers[n][right][0]
            res = a - b
            scale = 1.0 + vmax + abs(a) + abs(b)
            report.entries.append({"field": label, "location": f"a_{jj}", "kind": "continuity", "order": n,
                                   "residual": float(res), "pass": bool(abs(res) <= base * scale)})
        for n in range(no):
            dl = end_slope(powers[n][left], h, "right")
            dr = end_slope(powers[n][right], h, "left")
            lnext = powers[n + 1][right][0]
            # M h'' = u_x(a+) - u_x(a-) and h'' = -(L u)(a)
            res = dl - dr - M * lnext
            scale = 1.0 + vmax + abs(dl) + abs(dr) + abs(M * lnext)
            report.entries.append({"field": label, "location": f"a_{jj}", "kind": "flux", "order": n,
                                   "residual": float(res), "pass": bool(abs(res) <= base * scale)})


def check_compatibility(system: StringSystem, xs, phi, psi=None, C: float = 10.0, dt: float = 0.0,
                        extra: int = 0) -> CompatibilityReport:
    """Junction and endpoint identities for a displacement (and optional velocity).

    The displacement is checked against C^{j-1+extra} at a_j (a_{N+1} = ell),
    the velocity one order lower.  extra > 0 probes higher orders, which
    eigenfunctions satisfy identically.
    """
    dx = float(xs[0][1] - xs[0][0])
    rep = CompatibilityReport()
    _check_field(system, xs, [np.asarray(v, float) for v in phi], 0, "u", C, dx, dt, rep, extra)
    if psi is not None:
        _check_field(system, xs, [np.asarray(v, float) for v in psi], -1, "ut", C, dx, dt, rep, extra)
    return rep


# ------------------------------------------------------------------ norms

@lru_cache(maxsize=256)
def _simpson_weights(n: int, h: float) -> np.ndarray:
    """Quadrature weights w with sum(w * y) == simpson(y, dx=h) for n samples."""
    if n < 3:
        return np.full(n, 0.5 * h)
    return simpson(np.eye(n), dx=h, axis=1)


def _integrate(y, x):
    if len(y) >= 3:
        return float(simpson(y, x=x))
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def _sobolev_features(x, v, order: int) -> np.ndarray:
    v = np.asarray(v, float)
    if len(v) < order + 3:
        raise PreconditionError(f"insufficient resolution for H^{order}")
    w = np.sqrt(_simpson_weights(len(x), float(x[1] - x[0])))
    parts = [w * v]
    d = v
    for _ in range(order):
        d = np.gradient(d, x, edge_order=2)
        parts.append(w * d)
    return np.concatenate(parts)


def sobolev_sq(x, v, order: int) -> float:
    """sum_{n <= order} ||v^(n)||^2 on one segment."""
    f = _sobolev_features(x, v, order)
    return float(f @ f)


def features_W0(xs, phis, system: StringSystem) -> np.ndarray:
    """Vector whose Euclidean norm is the discrete W0 norm (linear in phis)."""
    parts = [_sobolev_features(x, v, j) for j, (x, v) in enumerate(zip(xs, phis))]
    parts.append(np.array([math.sqrt(system.masses[j - 1]) * float(phis[j][0])
                           for j in range(1, system.N + 1)]))
    return np.concatenate(parts)


def norm_W0(xs, phis, system: StringSystem) -> float:
    f = features_W0(xs, phis, system)
    return math.sqrt(float(f @ f))


def _dual_solution(x, psi, dirichlet_right: bool):
    psi = np.asarray(psi, float)
    n = len(x) - 1
    h = x[1] - x[0]
    if dirichlet_right:
        m = n - 1
        rhs = psi[1:n].copy()
    else:
        m = n
        rhs = psi[1:].copy()
    w = np.zeros(n + 1)
    if m < 1:
        return w, h
    ab = np.zeros((3, m))
    ab[0, 1:] = -1.0 / h ** 2
    ab[1, :] = 2.0 / h ** 2 + 1.0
    ab[2, :-1] = -1.0 / h ** 2
    if not dirichlet_right and m >= 2:
        # mirrored ghost point at the free end
        ab[2, m - 2] = -2.0 / h ** 2
    w_int = solve_banded((1, 1), ab, rhs)
    if dirichlet_right:
        w[1:n] = w_int
    else:
        w[1:] = w_int
    return w, h


def _dual_features(x, psi, dirichlet_right: bool) -> np.ndarray:
    w, h = _dual_solution(x, psi, dirichlet_right)
    sw = np.sqrt(_simpson_weights(len(x), float(h)))
    return np.concatenate([math.sqrt(h) * np.diff(w) / h, sw * w])


def dual_term(x, psi, dirichlet_right: bool = False) -> float:
    """Squared dual norm of psi against H^1 functions vanishing at x[0].

    Realised through w solving -w'' + w = psi, w(x0) = 0 and w'(x1) = 0
    (or w(x1) = 0 when dirichlet_right); the value is ||w||_{H^1}^2.
    """
    f = _dual_features(x, psi, dirichlet_right)
    return float(f @ f)


def features_Wm1(xs, psis, system: StringSystem) -> np.ndarray:
    N = system.N
    parts = [_dual_features(xs[0], psis[0], dirichlet_right=(N == 0))]
    for j in range(1, N + 1):
        parts.append(_sobolev_features(xs[j], psis[j], j - 1))
    # mass terms start at the second mass
    parts.append(np.array([math.sqrt(system.masses[j - 1]) * float(psis[j][0]) for j in range(2, N + 1)]))
    return np.concatenate(parts)


def norm_Wm1(xs, psis, system: StringSystem) -> float:
    f = features_Wm1(xs, psis, system)
    return math.sqrt(float(f @ f))


def norms_report(system, xs, phi, psi=None, **kw) -> dict:
    rep = check_compatibility(system, xs, phi, psi, **kw)
    out = {"W0": norm_W0(xs, phi, system), "compatibility": json.loads(rep.to_json())}
    if psi is not None:
        out["Wm1"] = norm_Wm1(xs, psi, system)
    return out
