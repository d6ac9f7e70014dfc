"""Wave propagation through a chain of string segments joined by point masses.

On every segment the field is split into a wave launched rightward from the
left end (boundary data p) and a wave launched leftward from the right end
(boundary data m), each written with the segment's transformation kernel:

    u = p(t - y) + int_y^t kR(y, s) p(t - s) ds  +  m(t - z) + int_z^t kL(z, s) m(t - s) ds,

with y, z the distances to the left and right ends.  Continuity at a node
fixes p and m from the node trace, and the masses obey the time-integrated
Newton law M h'(t) = int_0^t [u_x(a+) - u_x(a-)], marched with the
trapezoid rule.  Every delayed quantity depends on data at least one
segment-crossing old, so each step is explicit except for one scalar
unknown per mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .goursat import build_kernel, edge_derivatives
from .model import (
    NumericalFailure,
    PreconditionError,
    SampledFunction,
    StateSnapshot,
    StringSystem,
    grid_points,
    segment_grids,
)


def tconv(kline, a, n, lo, h):
    """Trapezoid sum h * sum_{s=lo}^{n} k[s] a[n-s] (zero if n <= lo)."""
    if n <= lo:
        return 0.0
    ks = kline[lo:n + 1]
    av = a[n - lo::-1]
    tot = float(np.dot(ks, av)) - 0.5 * (ks[0] * av[0] + ks[-1] * av[-1])
    return h * tot


def _lag(a, i):
    return a[i] if i >= 0 else 0.0


class _Seg:
    """Bookkeeping for one segment; length L in steps or None when semi-infinite."""

    def __init__(self, system, j, L, h, nt):
        self.L = L
        self.h = h
        self.p = np.zeros(nt + 1)
        self.m = np.zeros(nt + 1)
        self.intL = np.zeros(nt + 1)
        self.intR = np.zeros(nt + 1)
        self.gL = np.zeros(nt + 1)
        self.gR = np.zeros(nt + 1)
        # the table must reach across the segment even when T is shorter
        horizon = max(nt, L or 0) * h
        ymax = h * (L if L is not None else 0)
        kR = build_kernel(system, j, 1, horizon, h, ymax=max(ymax, h))
        self.zero = kR.zero
        self.kR = kR
        self.kR_y0 = edge_derivatives(kR, 0.0)["ky"]
        if L is not None:
            kL = build_kernel(system, j, -1, horizon, h, ymax=ymax)
            self.kL = kL
            self.zero = self.zero and kL.zero
            self.kR_L = kR.line(L)
            self.kR_yL = edge_derivatives(kR, L * h)["ky"]
            self.kR_LL = kR.values[L, L]
            self.kL_L = kL.line(L)
            self.kL_z0 = edge_derivatives(kL, 0.0)["ky"]
            self.kL_zL = edge_derivatives(kL, L * h)["ky"]
            self.kL_LL = kL.values[L, L]

    # waves arriving at the opposite end
    def Wp(self, n):
        v = _lag(self.p, n - self.L)
        if not self.zero:
            v += tconv(self.kR_L, self.p, n, self.L, self.h)
        return v

    def Wm(self, n):
        if self.L is None:
            return 0.0
        v = _lag(self.m, n - self.L)
        if not self.zero:
            v += tconv(self.kL_L, self.m, n, self.L, self.h)
        return v

    def _gL(self, n):
        if self.zero:
            return 0.0
        g = tconv(self.kR_y0, self.p, n, 0, self.h)
        if self.L is not None:
            g += self.kL_LL * _lag(self.m, n - self.L) - tconv(self.kL_zL, self.m, n, self.L, self.h)
        return g

    def _gR(self, n):
        if self.zero:
            return 0.0
        return (-self.kR_LL * _lag(self.p, n - self.L) + tconv(self.kR_yL, self.p, n, self.L, self.h)
                - tconv(self.kL_z0, self.m, n, 0, self.h))

    def fluxL(self, n):
        """int_0^t u_x at the left end (right limit)."""
        prev = self.intL[n - 1] if n > 0 else 0.0
        gprev = self.gL[n - 1] if n > 0 else 0.0
        integ = prev + 0.5 * self.h * (gprev + self._gL(n))
        m_in = _lag(self.m, n - self.L) if self.L is not None else 0.0
        return -self.p[n] + m_in + integ

    def fluxR(self, n):
        """int_0^t u_x at the right end (left limit)."""
        prev = self.intR[n - 1] if n > 0 else 0.0
        gprev = self.gR[n - 1] if n > 0 else 0.0
        integ = prev + 0.5 * self.h * (gprev + self._gR(n))
        return -_lag(self.p, n - self.L) + self.m[n] + integ

    def close(self, n):
        gl = self._gL(n)
        prev = self.intL[n - 1] if n > 0 else 0.0
        gp = self.gL[n - 1] if n > 0 else 0.0
        self.intL[n] = prev + 0.5 * self.h * (gp + gl)
        self.gL[n] = gl
        if self.L is not None:
            gr = self._gR(n)
            prev = self.intR[n - 1] if n > 0 else 0.0
            gp = self.gR[n - 1] if n > 0 else 0.0
            self.intR[n] = prev + 0.5 * self.h * (gp + gr)
            self.gR[n] = gr

    def field(self, n):
        """Displacement on the closed segment grid at time index n."""
        L = self.L
        y = np.arange(L + 1)
        idx_p = n - y
        idx_m = n - (L - y)
        u = np.where(idx_p >= 0, self.p[np.maximum(idx_p, 0)], 0.0)
        u = u + np.where(idx_m >= 0, self.m[np.maximum(idx_m, 0)], 0.0)
        if not self.zero:
            for k in range(L + 1):
                u[k] += tconv(self.kR.line(k), self.p, n, k, self.h)
                u[k] += tconv(self.kL.line(L - k), self.m, n, L - k, self.h)
        return u


@dataclass
class Traces:
    """Result of a chain march: node traces and per-segment wave data."""

    step: float
    h: np.ndarray          # (N, nt+1) mass displacements
    J: np.ndarray          # (N, nt+1) integrated flux jumps, M h' = J
    segs: list
    masses: tuple

    def hdot(self, n):
        return self.J[:, n] / np.asarray(self.masses)


def _sample(f, nt, h):
    t = h * np.arange(nt + 1)
    if f is None:
        return np.zeros(nt + 1)
    if isinstance(f, np.ndarray):
        out = np.zeros(nt + 1)
        k = min(len(f), nt + 1)
        out[:k] = f[:k]
        return out
    return np.asarray(f(t), dtype=float) + 0.0 * t


def march(system: StringSystem, f, nt: int, step: float, left="dirichlet", right="dirichlet",
          first=0, last=None) -> Traces:
    """March the segments first..last (inclusive) for nt steps.

    left: "dirichlet" (node trace equals f) or "incident" (rightward data of
    the first segment equals f and reflections leave the chain).
    right: "dirichlet" (zero trace at the far end) or "open" (last segment is
    semi-infinite).
    """
    last = system.N if last is None else last
    h = step
    lens = system.seg_lengths
    segs = []
    for j in range(first, last + 1):
        if j == last and right == "open":
            segs.append(_Seg(system, j, None, h, nt))
        else:
            segs.append(_Seg(system, j, grid_points(lens[j], h), h, nt))
    masses = tuple(system.masses[first:last])
    nm = len(masses)
    fv = _sample(f, nt, h)
    H = np.zeros((nm, nt + 1))
    J = np.zeros((nm, nt + 1))
    for n in range(nt + 1):
        s0 = segs[0]
        s0.p[n] = fv[n] - (s0.Wm(n) if left == "dirichlet" else 0.0)
        if right == "dirichlet":
            segs[-1].m[n] = -segs[-1].Wp(n)
        for i in range(nm):
            M = masses[i]
            A, B = segs[i], segs[i + 1]
            wp = A.Wp(n)
            wm = B.Wm(n)

            def jump(x):
                B.p[n] = x - wm
                A.m[n] = x - wp
                return B.fluxL(n) - A.fluxR(n)

            j0 = jump(0.0)
            c = jump(1.0) - j0
            hp = H[i, n - 1] if n > 0 else 0.0
            Jp = J[i, n - 1] if n > 0 else 0.0
            x = (M * hp + 0.5 * h * (Jp + j0)) / (M - 0.5 * h * c)
            H[i, n] = x
            J[i, n] = jump(x)
        for s in segs:
            s.close(n)
    return Traces(h, H, J, segs, masses)


def _check_grid(system, T, step):
    nt = grid_points(T, step) if T > 0 else 0
    for L in system.seg_lengths:
        grid_points(L, step)
    return nt


def simulate_characteristics(system: StringSystem, f, T: float, step: float,
                             reflection_budget: int | None = None, traces=False):
    """Terminal state u(., T), u_t(., T), h_j(T), h_j'(T) for boundary control f."""
    if reflection_budget is not None:
        crossings = T / min(system.seg_lengths)
        if crossings > reflection_budget:
            raise NumericalFailure(
                f"reflection budget {reflection_budget} below the {math.ceil(crossings)} crossings needed")
    nt = _check_grid(system, T, step)
    fv = _sample(f, nt, step)
    # the extra step only feeds the centred velocity; continuing f linearly
    # makes the boundary velocity the left derivative at T
    fv = np.append(fv, 2 * fv[-1] - fv[-2] if nt >= 1 else fv[-1])
    tr = march(system, fv, nt + 1, step)
    snap = snapshot_from_traces(system, tr, nt)
    return (snap, tr) if traces else snap


def snapshot_from_traces(system, tr: Traces, n: int) -> StateSnapshot:
    h = tr.step
    xs = segment_grids(system, h)
    us = tuple(s.field(n) for s in tr.segs)
    if n >= 1:
        uts = tuple((s.field(n + 1) - s.field(n - 1)) / (2 * h) for s in tr.segs)
    else:
        uts = tuple((s.field(n + 1) - s.field(n)) / h for s in tr.segs)
    return StateSnapshot(n * h, tuple(xs), us, uts, tr.h[:, n].copy(), tr.hdot(n).copy())


def propagate(f, kernel, x: float, t: float, base: float = 0.0, direction: int = 1) -> float:
    """Half-line response f(t - |x-b|) + kernel convolution, zero when |x-b| >= t."""
    h = kernel.step
    y = (x - base) * direction
    if y < -1e-12:
        raise PreconditionError("point lies behind the base in the propagation direction")
    m = int(round(y / h))
    n = int(round(t / h))
    if abs(m * h - y) > 1e-9 or abs(n * h - t) > 1e-9:
        raise PreconditionError("sampling mismatch between f and kernel")
    if m > kernel.ny or n > kernel.nt:
        raise PreconditionError("point outside the kernel horizon")
    if m >= n:
        return 0.0
    fv = _sample(f, n, h)
    return fv[n - m] + tconv(kernel.line(m), fv, n, m, h)


def reflect_fixed_end(incident, kernel, ell: float, x: float, t: float) -> float:
    """Wave reflected at the clamped end for an incident trace w(ell, .).

    incident: callable or samples of w(ell, t) on the kernel grid (from t = 0).
    kernel: leftward kernel based at ell.
    """
    h = kernel.step
    z = ell - x
    m = int(round(z / h))
    n = int(round(t / h))
    if abs(m * h - z) > 1e-9 or abs(n * h - t) > 1e-9:
        raise PreconditionError("sampling mismatch between trace and kernel")
    if n - m < 0:
        return 0.0
    w = _sample(incident, n, h)
    # reflected wave is the leftward half-line wave with data -w(ell, .)
    return -w[n - m] - tconv(kernel.line(m), w, n, m, h)


# ------------------------------------------------------------ transmission

def _smooth_rate(v, h):
    """First derivative minus h^2/12 times the third, fourth order in the interior."""
    v = np.asarray(v, float)
    n = len(v)
    if n < 2:
        return np.zeros(n)
    if n < 5:
        return np.gradient(v, h, edge_order=1 if n < 3 else 2)
    d1 = np.empty(n)
    d1[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    d1[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * h)
    d1[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * h)
    d1[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * h)
    d1[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * h)
    d3 = np.empty(n)
    d3[2:-2] = (v[4:] - 2 * v[3:-1] + 2 * v[1:-3] - v[:-4]) / (2 * h ** 3)
    d3[0] = (-5 * v[0] + 18 * v[1] - 24 * v[2] + 14 * v[3] - 3 * v[4]) / (2 * h ** 3)
    d3[1] = (-3 * v[0] + 10 * v[1] - 12 * v[2] + 6 * v[3] - v[4]) / (2 * h ** 3)
    d3[-1] = (5 * v[-1] - 18 * v[-2] + 24 * v[-3] - 14 * v[-4] + 3 * v[-5]) / (2 * h ** 3)
    d3[-2] = (3 * v[-1] - 10 * v[-2] + 12 * v[-3] - 6 * v[-4] + v[-5]) / (2 * h ** 3)
    return d1 - h * h / 12.0 * d3


class TransmissionOperator:
    """Map from the trace at node j-1 to the trace at mass j (local clocks).

    The input acts as rightward boundary data at node j-1 (for j = 1 this is
    the control), waves reflected back past node j-1 leave the picture, and
    the string continues without further masses to the right of a_j.  The
    output is h(tau) = u(a_j, tau + l_{j-1}).
    """

    def __init__(self, system: StringSystem, j: int, step: float):
        if not 1 <= j <= system.N:
            raise PreconditionError("mass index out of range")
        self.system = system
        self.j = j
        self.step = step
        self.M = system.masses[j - 1]
        self.lag = grid_points(system.seg_lengths[j - 1], step)

    def apply(self, f) -> SampledFunction:
        h = self.step
        vals = f.values if isinstance(f, SampledFunction) else np.asarray(f, float)
        nloc = len(vals) - 1
        tr = march(self.system, vals, nloc + self.lag, h, left="incident", right="open",
                   first=self.j - 1, last=self.j)
        return SampledFunction(0.0, h, tr.h[0, self.lag:].copy())

    def inverse(self, hloc, tol: float | None = None) -> SampledFunction:
        h = self.step
        hv = hloc.values if isinstance(hloc, SampledFunction) else np.asarray(hloc, float)
        scale = max(1.0, float(np.max(np.abs(hv)))) if len(hv) else 1.0
        tol = 1e-8 * scale if tol is None else tol
        if abs(hv[0]) > tol + abs(hv[1] if len(hv) > 1 else 0.0):
            raise PreconditionError("trace must vanish at the arrival time")
        nloc = len(hv) - 1
        L = self.lag
        nt = nloc + L
        system = self.system
        A = _Seg(system, self.j - 1, L, h, nt)
        B = _Seg(system, self.j, None, h, nt)
        M = self.M
        hg = np.zeros(nt + 1)
        hg[L:] = hv
        # smooth solution of the trapezoid law M (h_n - h_{n-1}) = h/2 (J_n + J_{n-1});
        # solving that recurrence directly leaves an undamped alternating mode
        # that repeated inversion amplifies
        dh = _smooth_rate(hv, h)
        for n in range(nt + 1):
            k = n - L
            B.p[n] = hg[n]
            if k < 0:
                A.m[n] = hg[n] - A.Wp(n)
                A.close(n)
                B.close(n)
                continue
            target = M * dh[k]

            def jump(y):
                A.p[k] = y
                A.m[n] = hg[n] - A.Wp(n)
                return B.fluxL(n) - A.fluxR(n)

            j0 = jump(0.0)
            c = jump(1.0) - j0
            if abs(c) < 1e-300:
                raise NumericalFailure("degenerate transmission step")
            y = (target - j0) / c
            jump(y)
            A.close(n)
            B.close(n)
        return SampledFunction(0.0, h, A.p[: nloc + 1].copy())


def mass_transmit(system: StringSystem, f, j: int, step: float) -> SampledFunction:
    return TransmissionOperator(system, j, step).apply(f)


def mass_transmit_inverse(system: StringSystem, hloc, j: int, step: float) -> SampledFunction:
    return TransmissionOperator(system, j, step).inverse(hloc)


def transmit_chain(system, f, j, step):
    """Trace at mass j (local clock of mass j) produced by input f at x = 0."""
    out = f
    for i in range(1, j + 1):
        out = TransmissionOperator(system, i, step).apply(out)
    return out


def invert_chain(system, hj, j, step):
    """S^{-j}: recover the control from the trace at mass j, one mass at a time."""
    out = hj
    for i in range(j, 0, -1):
        if i < j:
            # intermediate levels are mass trajectories, at rest on arrival;
            # the one-sided end stencil leaves a small residue there
            v = out.values.copy()
            v[0] = 0.0
            out = v
        out = TransmissionOperator(system, i, step).inverse(out)
    return out
