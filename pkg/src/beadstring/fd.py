"""Leapfrog finite differences for the string with point masses.

Independent of the kernel machinery; used as ground truth.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import PreconditionError, StateSnapshot, StringSystem, grid_points


@dataclass(frozen=True)
class FDGrid:
    dx: float
    dt: float

    @property
    def cfl(self) -> float:
        return self.dt / self.dx


def make_grid(system: StringSystem, dx: float, T: float, cfl: float = 0.9) -> FDGrid:
    """Grid with every node on a mesh point and dt dividing T."""
    for L in system.seg_lengths:
        n = grid_points(L, dx)
        if n < 3:
            raise PreconditionError("each segment needs at least three cells")
    if not 0 < cfl <= 1:
        raise PreconditionError("CFL number must lie in (0, 1]")
    nsteps = max(1, math.ceil(T / (cfl * dx) - 1e-12))
    return FDGrid(dx, T / nsteps)


def simulate_fd(system: StringSystem, f, T: float, grid: FDGrid, record=None, energy=False):
    """Terminal snapshot at time T.

    record: optional path for a `t,x,u` CSV trajectory (every stored step).
    energy: also return the discrete energy history.
    """
    dx, dt = grid.dx, grid.dt
    if dt > dx * (1 + 1e-12):
        raise PreconditionError("CFL violation: dt must not exceed dx")
    nx = grid_points(system.ell, dx)
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        raise PreconditionError("dt must divide T")
    x = dx * np.arange(nx + 1)
    mass_idx = [grid_points(a, dx) for a in system.positions]
    q = system.q(x)
    interior = np.ones(nx + 1, bool)
    interior[[0, nx]] = False
    interior[mass_idx] = False
    lam2 = (dt / dx) ** 2
    fval = (lambda t: float(f(t))) if f is not None else (lambda t: 0.0)

    def accel_inner(u):
        a = np.zeros_like(u)
        a[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx ** 2
        return a - q * u

    def mass_flux(u, k):
        right = (-3 * u[k] + 4 * u[k + 1] - u[k + 2]) / (2 * dx)
        left = (3 * u[k] - 4 * u[k - 1] + u[k - 2]) / (2 * dx)
        return right - left

    u_prev = np.zeros(nx + 1)
    u_prev[0] = fval(0.0)
    # Taylor start from rest
    u = u_prev.copy()
    acc = accel_inner(u_prev)
    u[interior] += 0.5 * dt ** 2 * acc[interior]
    for k, M in zip(mass_idx, system.masses):
        u[k] += 0.5 * dt ** 2 * mass_flux(u_prev, k) / M
    u[0] = fval(dt)
    u[nx] = 0.0
    writer = None
    fh = None
    if record is not None:
        fh = open(record, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "x", "u"])
        for uu, tt in ((u_prev, 0.0), (u, dt)):
            for xi, ui in zip(x, uu):
                writer.writerow([f"{tt:.16e}", f"{xi:.16e}", f"{ui:.16e}"])
    hist = []
    total = nsteps + 1  # one extra step for the centred velocity
    for n in range(1, total):
        acc = accel_inner(u)
        u_next = np.empty_like(u)
        u_next[interior] = 2 * u[interior] - u_prev[interior] + dt ** 2 * acc[interior]
        for k, M in zip(mass_idx, system.masses):
            u_next[k] = 2 * u[k] - u_prev[k] + dt ** 2 * mass_flux(u, k) / M
        # past T the control is continued linearly (left derivative at T)
        u_next[0] = fval((n + 1) * dt) if n < nsteps else 2 * u[0] - u_prev[0]
        u_next[nx] = 0.0
        if energy:
            hist.append(((n + 0.5) * dt, _energy(u, u_next, dx, dt, q, mass_idx, system.masses)))
        if n == nsteps:
            ut = (u_next - u_prev) / (2 * dt)
            break
        u_prev, u = u, u_next
        if writer is not None:
            for xi, ui in zip(x, u):
                writer.writerow([f"{(n + 1) * dt:.16e}", f"{xi:.16e}", f"{ui:.16e}"])
    else:  # nsteps == 0
        ut = (u - u_prev) / dt
        u = u_prev
    if fh is not None:
        fh.close()
    snap = _to_snapshot(system, x, u, ut, mass_idx, T)
    return (snap, np.array(hist)) if energy else snap


def _energy(u0, u1, dx, dt, q, mass_idx, masses):
    """Staggered discrete energy at the half step between u0 and u1."""
    vel = (u1 - u0) / dt
    is_mass = np.zeros(len(u0), bool)
    is_mass[mass_idx] = True
    kin = 0.5 * dx * np.sum(vel[~is_mass] ** 2)
    kin += 0.5 * sum(M * vel[k] ** 2 for k, M in zip(mass_idx, masses))
    pot = 0.5 * np.sum(np.diff(u0) * np.diff(u1)) / dx
    pot += 0.5 * dx * np.sum(q * u0 * u1)
    return kin + pot


def _to_snapshot(system, x, u, ut, mass_idx, T):
    cuts = [0, *mass_idx, len(x) - 1]
    xs, us, uts = [], [], []
    for j in range(len(cuts) - 1):
        sl = slice(cuts[j], cuts[j + 1] + 1)
        xs.append(x[sl].copy())
        us.append(u[sl].copy())
        uts.append(ut[sl].copy())
    h = np.array([u[k] for k in mass_idx])
    hdot = np.array([ut[k] for k in mass_idx])
    return StateSnapshot(T, tuple(xs), tuple(us), tuple(uts), h, hdot)


def resample(snap: StateSnapshot, xs_target) -> StateSnapshot:
    us, uts = [], []
    for j, xt in enumerate(xs_target):
        us.append(np.interp(xt, snap.x[j], snap.u[j]))
        uts.append(np.interp(xt, snap.x[j], snap.ut[j]))
    return StateSnapshot(snap.time, tuple(xs_target), tuple(us), tuple(uts), snap.h, snap.hdot)


def compare_states(a: StateSnapshot, b: StateSnapshot, system: StringSystem, norms=("L2", "W0", "Wm1")):
    """Gaps between two snapshots; b is resampled onto a's grid if needed."""
    from .spaces import norm_W0, norm_Wm1

    if len(a.x) != len(b.x):
        raise PreconditionError("snapshots have different segment structure")
    for xa, xb in zip(a.x, b.x):
        if xa[0] < xb[0] - 1e-9 or xa[-1] > xb[-1] + 1e-9:
            raise PreconditionError("disjoint domains")
    same = all(len(xa) == len(xb) and np.allclose(xa, xb) for xa, xb in zip(a.x, b.x))
    bb = b if same else resample(b, a.x)
    du = tuple(ua - ub for ua, ub in zip(a.u, bb.u))
    dut = tuple(ua - ub for ua, ub in zip(a.ut, bb.ut))
    rep = {}
    if "L2" in norms:
        rep["L2"] = math.sqrt(sum(_trap(d ** 2, x) for d, x in zip(du, a.x)))
        rep["L2_ut"] = math.sqrt(sum(_trap(d ** 2, x) for d, x in zip(dut, a.x)))
    if "W0" in norms:
        rep["W0"] = norm_W0(a.x, du, system)
        rep["W0_ref"] = norm_W0(a.x, bb.u, system)
    if "Wm1" in norms:
        rep["Wm1"] = norm_Wm1(a.x, dut, system)
        rep["Wm1_ref"] = norm_Wm1(a.x, bb.ut, system)
    rep["mass"] = [abs(float(x) - float(y)) for x, y in zip(a.h, b.h)]
    return rep


def _trap(y, x):
    return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))
