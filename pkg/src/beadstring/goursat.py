"""Transformation kernels for one string segment.

For a segment with base point b and direction +1 (waves moving right from b)
the kernel k(y, s), 0 <= y <= s, solves

    k_ss - k_yy + q(b + y) k = 0,    k(0, s) = 0,    k(y, y) = -1/2 int_0^y q(b + eta) d eta,

and u(x, t) = f(t - y) + int_y^t k(y, s) f(t - s) ds with y = x - b is the
half-line response to boundary data f.  Direction -1 mirrors the segment:
y = b - x and the potential is read as q(b - y).

The kernel is computed in characteristic coordinates alpha = s - y,
beta = s + y, where the problem becomes the integral equation

    k(alpha, beta) = d(beta/2) - d(alpha/2) - 1/4 int_0^alpha int_alpha^beta q k

with d the diagonal data.  Picard sweeps use trapezoidal quadrature.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import NumericalFailure, PreconditionError, StringSystem

MAX_SWEEPS = 200


def _cumtrapz(a, h, axis):
    """Cumulative trapezoid along axis, starting at 0."""
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[0] = 0.0
    np.cumsum(0.5 * h * (a[1:] + a[:-1]), axis=0, out=out[1:])
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True, eq=False)
class KernelTable:
    """k(y_m, s_n) for y_m = m*h <= ymax, s_n = n*h <= horizon, stored as values[m, n].

    Entries with n < m lie outside the triangle and are set to 0.
    """

    base: float
    direction: int
    horizon: float
    step: float
    values: np.ndarray
    qloc: object
    zero: bool = False
    sweeps: int = 0

    @property
    def nt(self) -> int:
        return self.values.shape[1] - 1

    @property
    def ny(self) -> int:
        return self.values.shape[0] - 1

    def diag(self) -> np.ndarray:
        m = np.arange(self.ny + 1)
        return self.values[m, m]

    def line(self, m: int) -> np.ndarray:
        """k(y_m, s_n) for all n (zeros below the diagonal)."""
        return self.values[m]

    def at(self, y: float, s: float) -> float:
        m = int(round(y / self.step))
        n = int(round(s / self.step))
        if abs(m * self.step - y) > 1e-9 or abs(n * self.step - s) > 1e-9:
            raise PreconditionError("kernel lookup off the grid")
        if n < m:
            return 0.0
        return float(self.values[m, n])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "t", "k"])
            for m in range(self.ny + 1):
                for n in range(m, self.nt + 1):
                    w.writerow([f"{m * self.step:.16e}", f"{n * self.step:.16e}", f"{self.values[m, n]:.16e}"])


def _diag_data(qloc, ys, h):
    """d(y) = -1/2 int_0^y q on the points ys (assumed uniform, spacing h/2)."""
    # eight sub-intervals per grid cell keep this error far below the O(h^2) kernel error
    sub = 8
    fine = np.linspace(0.0, ys[-1], (len(ys) - 1) * sub + 1) if len(ys) > 1 else np.zeros(1)
    qf = qloc(fine)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (qf[1:] + qf[:-1]) * np.diff(fine))])
    return -0.5 * cum[::sub]


def solve_goursat(qloc, horizon: float, step: float, ymax: float | None = None, tol=None):
    """Kernel values on the (y, s) grid for the local potential qloc(y)."""
    h = step
    nt = int(round(horizon / h))
    if nt < 1 or abs(nt * h - horizon) > 1e-9 * max(1.0, horizon):
        raise PreconditionError("step must divide the horizon")
    ymax = horizon if ymax is None else min(ymax, horizon)
    ny = int(round(ymax / h))
    na = nt + 1            # alpha index 0..nt
    nb = nt + ny + 1       # beta index 0..nt+ny
    alpha = h * np.arange(na)
    beta = h * np.arange(nb)
    # diagonal data at beta/2 and alpha/2 share the half-step grid
    dhalf = _diag_data(qloc, 0.5 * h * np.arange(nb), h)
    k0 = dhalf[None, :] - dhalf[:na, None]
    ygrid = 0.5 * (beta[None, :] - alpha[:, None])
    inside = ygrid >= -1e-14
    qv = np.where(inside, qloc(np.maximum(ygrid, 0.0)), 0.0)
    qsup = float(np.max(np.abs(qv))) if qv.size else 0.0
    if tol is None:
        tol = 1e-12 * (1.0 + qsup * horizon ** 2)
    k = np.where(inside, k0, 0.0)
    diag_idx = np.arange(na)
    sweeps = 0
    for sweeps in range(1, MAX_SWEEPS + 1):
        Q = qv * k
        C = _cumtrapz(Q, h, axis=1)          # int_0^beta' along beta
        D = _cumtrapz(C, h, axis=0)          # then along alpha
        Dd = D[diag_idx, diag_idx]           # D[i, i]
        knew = np.where(inside, k0 - 0.25 * (D - Dd[:, None]), 0.0)
        diff = float(np.max(np.abs(knew - k)))
        k = knew
        if diff < tol:
            break
    else:
        raise NumericalFailure("Goursat iteration did not converge; refine the step")
    # back to (y, s): alpha = n - m, beta = n + m
    vals = np.zeros((ny + 1, nt + 1))
    for m in range(ny + 1):
        n = np.arange(m, nt + 1)
        vals[m, n] = k[n - m, n + m]
    return vals, sweeps


def local_potential(system: StringSystem, segment: int, direction: int):
    nodes = system.nodes
    pot = system.potentials[segment]
    if direction > 0:
        b = nodes[segment]
        return b, (lambda y, pot=pot, b=b: pot(b + np.asarray(y)))
    b = nodes[segment + 1]
    return b, (lambda y, pot=pot, b=b: pot(b - np.asarray(y)))


@lru_cache(maxsize=64)
def _cached(system, segment, direction, nt, step, ny):
    b, qloc = local_potential(system, segment, direction)
    pot = system.potentials[segment]
    horizon = nt * step
    if pot.is_zero:
        return KernelTable(b, direction, horizon, step, np.zeros((ny + 1, nt + 1)), qloc, True, 0)
    vals, sweeps = solve_goursat(qloc, horizon, step, ny * step)
    return KernelTable(b, direction, horizon, step, vals, qloc, False, sweeps)


def build_kernel(system: StringSystem, segment: int, direction: int, horizon: float, step: float,
                 ymax: float | None = None) -> KernelTable:
    """Kernel for `segment` seen from its left end (direction +1) or right end (-1)."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    nt = int(round(horizon / step))
    if nt < 1 or abs(nt * step - horizon) > 1e-9 * max(1.0, horizon):
        raise PreconditionError("step must divide the horizon")
    ymax = horizon if ymax is None else min(ymax, horizon)
    ny = int(round(ymax / step))
    return _cached(system, segment, direction, nt, float(step), ny)


def edge_derivatives(table: KernelTable, y0: float = 0.0) -> dict:
    """One-sided second-order derivatives of k along the line y = y0.

    Returns arrays over s_n (zero for s_n < y0): "ky" = dk/dy(y0, s) and
    "ks" = dk/ds(y0, s).
    """
    h = table.step
    m = int(round(y0 / h))
    if abs(m * h - y0) > 1e-9 or m > table.ny:
        raise PreconditionError("y0 must be a grid point inside the table")
    nt = table.nt
    ky = np.zeros(nt + 1)
    ks = np.zeros(nt + 1)
    if table.zero:
        return {"ky": ky, "ks": ks}
    V = table.values
    n = np.arange(m, nt + 1)
    if m >= 2:
        ky[n] = (3 * V[m, n] - 4 * V[m - 1, n] + V[m - 2, n]) / (2 * h)
    else:
        # forward stencil needs (m+2, n), which exists only for n >= m+2
        ok = n[n >= m + 2]
        if m + 2 <= table.ny:
            ky[ok] = (-3 * V[m, ok] + 4 * V[m + 1, ok] - V[m + 2, ok]) / (2 * h)
        if m == 0:
            # k_y(0, 0) = -q(0)/2 because k(0, s) = 0 and k(y, y) = d(y)
            ky[0] = -0.5 * float(table.qloc(0.0))
            if nt >= 3:
                s = np.array([0.0, 2.0, 3.0])
                c = np.polyfit(s, ky[[0, 2, 3]], 2)
                ky[1] = np.polyval(c, 1.0)
        else:
            for nn in n[n < m + 2]:
                ky[nn] = (V[m, nn] - V[m - 1, nn]) / h if m >= 1 else 0.0
    # d/ds: central inside, forward on the diagonal, backward at the horizon
    line = V[m]
    if nt - m >= 2:
        inner = np.arange(m + 1, nt)
        ks[inner] = (line[inner + 1] - line[inner - 1]) / (2 * h)
        ks[m] = (-3 * line[m] + 4 * line[m + 1] - line[m + 2]) / (2 * h)
        ks[nt] = (3 * line[nt] - 4 * line[nt - 1] + line[nt - 2]) / (2 * h)
    return {"ky": ky, "ks": ks}


def interior_residual(table: KernelTable) -> np.ndarray:
    """Five-point residual of k_ss - k_yy + q k at interior grid points."""
    V = table.values
    h = table.step
    out = []
    for m in range(1, table.ny):
        n = np.arange(m + 2, table.nt)
        if len(n) == 0:
            continue
        kss = (V[m, n + 1] - 2 * V[m, n] + V[m, n - 1]) / h ** 2
        kyy = (V[m + 1, n] - 2 * V[m, n] + V[m - 1, n]) / h ** 2
        out.append(kss - kyy + table.qloc(m * h) * V[m, n])
    return np.concatenate(out) if out else np.zeros(0)
