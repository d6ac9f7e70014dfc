"""Frequencies and eigenfunctions of -phi'' + q phi = lam^2 phi with mass jumps.

At each mass phi is continuous and phi'(a+) = phi'(a-) - M lam^2 phi(a);
phi(0) = phi(ell) = 0.  The characteristic function is G(lam) = phi(ell, lam)
for the solution started as sin(lam x).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .model import NumericalFailure, PreconditionError, StringSystem, segment_grids

BISECT_TOL = 1e-12


# ------------------------------------------------------------- shooting

def _cs(E, x):
    """cos(mu x) and sin(mu x)/mu for mu^2 = E (any sign, E -> 0 safe)."""
    E = np.asarray(E, float)
    mu = np.sqrt(np.abs(E))
    pos = E > 0
    neg = E < 0
    c = np.ones(np.broadcast(E, x).shape)
    s = np.broadcast_to(np.asarray(x, float), c.shape).astype(float).copy()
    mux = mu * x
    with np.errstate(all="ignore"):
        c = np.where(pos, np.cos(mux), np.where(neg, np.cosh(mux), 1.0))
        s = np.where(pos, np.sin(mux) / np.where(mu > 0, mu, 1.0),
                     np.where(neg, np.sinh(mux) / np.where(mu > 0, mu, 1.0), x + 0.0 * mu))
    return c, s, -E * s  # derivative of c is -E * s


def _pc_segment(qfun, E, y, yp, lo, hi, nsub, zeros=False):
    """Propagate across [lo, hi] freezing q at each sub-step midpoint.

    Exact for constant q; second order otherwise.  Vectorised over E.  With
    zeros=True also counts sign changes of phi at the sub-step nodes.
    """
    h = (hi - lo) / nsub
    qm = np.asarray(qfun(lo + h * (np.arange(nsub) + 0.5)), float) * np.ones(nsub)
    y = np.array(y, float, copy=True)
    yp = np.array(yp, float, copy=True)
    cnt = np.zeros(np.shape(y), int)
    for i in range(nsub):
        c, s, cp = _cs(E - qm[i], h)
        ny = y * c + yp * s
        yp = y * cp + yp * c
        if zeros:
            cnt += (ny * y < 0)
        y = ny
    return (y, yp, cnt) if zeros else (y, yp)


def _pc_dense(qfun, E, y, yp, x, per_cell):
    """Frozen-midpoint propagation along the grid x, sampled at every node."""
    out = np.empty(len(x))
    out[0] = y
    h = (x[1] - x[0]) / per_cell
    for i in range(len(x) - 1):
        for k in range(per_cell):
            c, s, cp = _cs(E - float(qfun(x[i] + h * (k + 0.5))), h)
            y, yp = y * c + yp * s, y * cp + yp * c
        out[i + 1] = y
    return out, float(y), float(yp)


def _nsub(length):
    return max(64, int(math.ceil(length / 2e-3)))


def _segment_map(pot, E, y, yp, lo, hi):
    """End values across one segment; Richardson on two sub-step sizes gives fourth order."""
    if pot.is_zero:
        c, s, cp = _cs(E, hi - lo)
        return y * c + yp * s, y * cp + yp * c
    if pot.kind == "poly" and len(pot.data) == 1:
        c, s, cp = _cs(E - pot.data[0], hi - lo)
        return y * c + yp * s, y * cp + yp * c
    n = _nsub(hi - lo)
    y1, p1 = _pc_segment(pot, E, y, yp, lo, hi, n)
    y2, p2 = _pc_segment(pot, E, y, yp, lo, hi, 2 * n)
    return (4 * y2 - y1) / 3, (4 * p2 - p1) / 3


def shoot_unit(system: StringSystem, E):
    """phi(ell) for phi(0) = 0, phi'(0) = 1 at eigenvalue parameter E = lam^2.

    Returns (G/lam, list of per-node (phi, phi'-right) pairs).
    """
    E = np.asarray(E, float)
    y = np.zeros_like(E)
    yp = np.ones_like(E)
    nodes = system.nodes
    record = [(y.copy(), yp.copy())]
    for j in range(system.N + 1):
        lo, hi = nodes[j], nodes[j + 1]
        pot = system.potentials[j]
        y, yp = _segment_map(pot, E, y, yp, lo, hi)
        if j < system.N:
            yp = yp - system.masses[j] * E * y
            record.append((y.copy(), yp.copy()))
    return y, record


def shoot(system: StringSystem, lam):
    """Solution started as sin(lam x): returns (node record, G(lam))."""
    lam = np.asarray(lam, float)
    g, rec = shoot_unit(system, lam ** 2)
    return [(a * lam, b * lam) for a, b in rec], g * lam


def G_closed_one_mass(lam, l0, l1, M):
    """Explicit characteristic function for one mass and q = 0."""
    lam = np.asarray(lam, float)
    return (np.sin(lam * l0) * np.cos(lam * l1)
            + (np.cos(lam * l0) - M * lam * np.sin(lam * l0)) * np.sin(lam * l1))


# ------------------------------------------------------- oscillation count

def prufer_angle(system: StringSystem, E: float) -> float:
    """Continuous phase theta(ell) with phi = r sin(theta), phi' = s r cos(theta)."""
    s = math.sqrt(max(E, 1.0))
    theta = 0.0
    nodes = system.nodes
    for j in range(system.N + 1):
        lo, hi = nodes[j], nodes[j + 1]
        pot = system.potentials[j]
        if pot.is_zero and E >= 1.0:
            # s = mu here, so the phase advances linearly
            theta += s * (hi - lo)
        else:
            theta = _prufer_rk4(pot, E, s, theta, lo, hi)
        if j < system.N:
            theta = _mass_jump(theta, system.masses[j] * E / s)
    return theta


def _mass_jump(theta, c):
    """cot(theta) -> cot(theta) - c while staying in the same half-turn."""
    k = math.floor(theta / math.pi)
    r = theta - k * math.pi
    if r == 0.0:
        return theta
    cot = math.cos(r) / math.sin(r) - c
    r_new = math.atan2(1.0, cot)  # in (0, pi)
    return k * math.pi + r_new


def _prufer_rk4(qfun, E, s, theta, lo, hi):
    n = max(32, int(math.ceil((hi - lo) * max(s, 1.0) / 0.02)))
    h = (hi - lo) / n

    def rhs(x, th):
        return s * math.cos(th) ** 2 + (E - float(qfun(x))) / s * math.sin(th) ** 2

    x = lo
    for _ in range(n):
        k1 = rhs(x, theta)
        k2 = rhs(x + 0.5 * h, theta + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h, theta + 0.5 * h * k2)
        k4 = rhs(x + h, theta + h * k3)
        theta += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x += h
    return theta


def count_below(system: StringSystem, lam):
    """Number of eigenvalues lam_n^2 < lam^2 (oscillation count); vectorised.

    Zero potential uses the exact phase; otherwise the zeros of the shooting
    solution are counted on sub-steps short enough to hold at most one zero.
    """
    lam = np.asarray(lam, float)
    if system.q_is_zero:
        out = np.array([int(math.floor(prufer_angle(system, float(v) ** 2) / math.pi + 1e-12))
                        for v in lam.ravel()]).reshape(lam.shape)
        return int(out) if out.ndim == 0 else out
    E = lam.ravel() ** 2
    y, yp = np.zeros_like(E), np.ones_like(E)
    total = np.zeros(E.shape, int)
    nodes = system.nodes
    emax = float(np.max(E)) if E.size else 0.0
    for j in range(system.N + 1):
        lo, hi = nodes[j], nodes[j + 1]
        mu = math.sqrt(max(emax + system.potentials[j].sup(), 1.0))
        n = max(_nsub(hi - lo), int(math.ceil((hi - lo) * mu)))
        y, yp, cnt = _pc_segment(system.potentials[j], E, y, yp, lo, hi, n, zeros=True)
        total += cnt
        if j < system.N:
            yp = yp - system.masses[j] * E * y
    total = total.reshape(lam.shape)
    return int(total) if total.ndim == 0 else total


# -------------------------------------------------------- root finding

def _bisect_all(system, a, b, fa, tol=BISECT_TOL):
    """Simultaneous bisection of G/lam on the brackets [a_i, b_i]."""
    a, b, fa = (np.array(v, float) for v in (a, b, fa))
    for _ in range(200):
        if a.size == 0 or np.all(b - a < tol * np.maximum(1.0, np.abs(a))):
            break
        m = 0.5 * (a + b)
        fm = shoot_unit(system, m ** 2)[0]
        same = (fm > 0) == (fa > 0)
        a = np.where(same, m, a)
        fa = np.where(same, fm, fa)
        b = np.where(same, b, m)
        hit = fm == 0.0
        a = np.where(hit, m, a)
        b = np.where(hit, m, b)
    return 0.5 * (a + b)


def _brackets(system, lo, hi, npts, depth):
    """Sign-change brackets in [lo, hi), refined where the count says roots hide."""
    grid = np.linspace(lo, hi, npts + 1)
    vals = shoot_unit(system, grid ** 2)[0]
    cnt = count_below(system, grid)
    out = []
    for i in range(npts):
        k = int(cnt[i + 1] - cnt[i])
        if k == 0:
            continue
        if k == 1 and vals[i] * vals[i + 1] < 0:
            out.append((grid[i], grid[i + 1], vals[i]))
        elif k == 1 and vals[i] == 0.0:
            out.append((grid[i], grid[i], 0.0))
        elif k == 1 and depth == 0:
            # root sits on a cell edge to working precision
            e = i if abs(vals[i]) < abs(vals[i + 1]) else i + 1
            out.append((grid[e], grid[e], 0.0))
        elif depth > 0:
            out.extend(_brackets(system, grid[i], grid[i + 1], 16, depth - 1))
        else:
            raise NumericalFailure("unresolvable eigenvalue cluster; roots coincide to working precision")
    return out


def find_frequencies(system: StringSystem, count: int | None = None, lam_max: float | None = None,
                     step: float | None = None, depth: int = 12):
    """Positive frequencies in increasing order.

    G/lam is scanned on a uniform grid; the oscillation count on the same grid
    says how many roots each cell holds, and cells where sign changes and count
    disagree are subdivided.  Brackets are then bisected together.
    """
    if count is None and lam_max is None:
        raise PreconditionError("give a count or a frequency cap")
    if count is not None:
        lam_max = (count + system.N + 1) * math.pi / system.ell
        while count_below(system, lam_max) < count:
            lam_max *= 1.25
    # keep the cap off round multiples of pi, where roots of uniform strings sit
    lam_max *= 1.0 + 1e-7 * math.sqrt(2.0)
    if step is None:
        step = math.pi / (8.0 * system.ell)
    if count_below(system, 0.0) > 0:
        warnings.warn("negative eigenvalues present; only positive frequencies returned", stacklevel=2)
    npts = max(2, int(math.ceil(lam_max / step)))
    br = _brackets(system, 1e-9, lam_max, npts, depth)
    roots = _bisect_all(system, [x[0] for x in br], [x[1] for x in br], [x[2] for x in br])
    expected = count_below(system, lam_max) - count_below(system, 1e-9)
    if len(roots) != expected:
        raise NumericalFailure(f"root count {len(roots)} disagrees with oscillation count {expected}")
    roots = np.sort(roots)
    if count is not None:
        roots = roots[:count]
    return roots


# -------------------------------------------------------- eigenfunctions

@dataclass
class EigenData:
    n: int
    lam: float
    xs: tuple
    phis: tuple
    dphi0: float

    @property
    def eigenvalue(self) -> float:
        return self.lam ** 2

    @property
    def eta(self) -> float:
        return self.lam / self.dphi0

    def at_masses(self):
        return np.array([p[0] for p in self.phis[1:]])


def _sample_solution(system, lam, dx):
    xs = segment_grids(system, dx)
    E = lam * lam
    y, yp = 0.0, lam
    phis = []
    for j, x in enumerate(xs):
        pot = system.potentials[j]
        lo = x[0]
        if pot.is_zero:
            c, s, cp = _cs(E, x - lo)
            v = y * c + yp * s
            L = x[-1] - lo
            c1, s1, cp1 = _cs(E, L)
            y, yp = float(y * c1 + yp * s1), float(y * cp1 + yp * c1)
        else:
            v1, y1, p1 = _pc_dense(pot, E, y, yp, x, 4)
            v2, y2, p2 = _pc_dense(pot, E, y, yp, x, 8)
            v = (4 * v2 - v1) / 3
            y, yp = (4 * y2 - y1) / 3, (4 * p2 - p1) / 3
        phis.append(np.asarray(v, float))
        if j < system.N:
            yp = yp - system.masses[j] * E * y
    return tuple(xs), phis


def inner_M(system, xs, u, v) -> float:
    """<u, v> = int u v + sum_j M_j u(a_j) v(a_j)."""
    tot = 0.0
    for x, a, b in zip(xs, u, v):
        tot += float(simpson(a * b, x=x))
    for j in range(system.N):
        tot += system.masses[j] * float(u[j + 1][0]) * float(v[j + 1][0])
    return tot


def eigenfunction(system: StringSystem, lam: float, dx: float, n: int = 0) -> EigenData:
    xs, phis = _sample_solution(system, lam, dx)
    nrm2 = inner_M(system, xs, phis, phis)
    if not nrm2 > 1e-300:
        raise NumericalFailure("eigenfunction has zero norm; frequency is spurious")
    nrm = math.sqrt(nrm2)
    return EigenData(n, float(lam), xs, tuple(p / nrm for p in phis), float(lam / nrm))


def eigen_system(system: StringSystem, count: int, dx: float):
    lams = find_frequencies(system, count=count)
    return [eigenfunction(system, lam, dx, i + 1) for i, lam in enumerate(lams)]


# ------------------------------------------------------------- clusters

@dataclass
class ClusterSet:
    radius: float
    clusters: list            # list of arrays, positive side, increasing
    labels: list = field(default_factory=list)

    def sizes(self):
        return [len(c) for c in self.clusters]

    def mirrored(self):
        """Clusters for -Lambda with labels -p."""
        return ClusterSet(self.radius, [-c[::-1] for c in self.clusters][::-1],
                          [-p for p in self.labels][::-1])

    def flat(self):
        return np.concatenate(self.clusters) if self.clusters else np.zeros(0)


def _components(freqs, r):
    freqs = np.sort(np.asarray(freqs, float))
    comps = []
    cur = [freqs[0]] if len(freqs) else []
    for a, b in zip(freqs[:-1], freqs[1:]):
        if b - a < 2 * r:
            cur.append(b)
        else:
            comps.append(np.array(cur))
            cur = [b]
    if cur:
        comps.append(np.array(cur))
    return comps


def assign_families(freqs, system: StringSystem):
    """Greedy matching of frequencies to the grids pi m / l_j.

    Returns list of (index, family j, m, residual) sorted by index; None family
    if no candidate remains.
    """
    lens = system.seg_lengths
    cands = []
    for i, lam in enumerate(freqs):
        for j, L in enumerate(lens):
            m0 = int(round(lam * L / math.pi))
            for m in (m0 - 1, m0, m0 + 1):
                if m >= 1:
                    cands.append((abs(lam - math.pi * m / L), i, j, m))
    cands.sort()
    used_f, used_slot = set(), set()
    out = {}
    for res, i, j, m in cands:
        if i in used_f or (j, m) in used_slot:
            continue
        used_f.add(i)
        used_slot.add((j, m))
        out[i] = (i, j, m, res)
    return [out.get(i, (i, None, None, math.inf)) for i in range(len(freqs))]


def family_gap(freqs, system) -> float:
    """Smallest gap inside any one family of the decomposition."""
    fam = assign_families(freqs, system)
    gaps = []
    for j in range(system.N + 1):
        vals = sorted(freqs[i] for i, jj, m, r in fam if jj == j)
        if len(vals) > 1:
            gaps.append(float(np.min(np.diff(vals))))
    if not gaps:
        return math.pi / max(system.seg_lengths)
    return min(gaps)


def cluster(freqs, system: StringSystem | None = None, r: float | None = None, max_size: int | None = None):
    """Group frequencies whose chain distance is below 2r."""
    freqs = np.sort(np.asarray(freqs, float))
    if max_size is None:
        max_size = (system.N + 1) if system is not None else len(freqs)
    if r is None:
        if system is None:
            raise PreconditionError("automatic radius needs the system")
        delta = family_gap(freqs, system)
        r = 0.5 * delta / (2 * system.N + 2)
    for _ in range(60):
        comps = _components(freqs, r)
        if max((len(c) for c in comps), default=0) <= max_size:
            return ClusterSet(r, comps, list(range(1, len(comps) + 1)))
        r *= 0.5
    raise NumericalFailure("cannot split frequencies into clusters of admissible size")


# ---------------------------------------------------------- asymptotics

def asymptotics_report(freqs, system: StringSystem, eig=None, delete: bool = True) -> dict:
    freqs = np.asarray(freqs, float)
    if len(freqs) < 30:
        raise PreconditionError("need at least 30 frequencies")
    fam = assign_families(freqs, system)
    ndel = 2 * system.N if delete else 0
    worst = sorted(range(len(fam)), key=lambda i: -fam[i][3])[:ndel]
    kept = [f for f in fam if f[0] not in worst]
    rep = {"deleted": sorted(worst), "families": {}, "unassigned": []}
    lens = system.seg_lengths
    for j in range(system.N + 1):
        rows = [(m, freqs[i], i) for i, jj, m, res in kept if jj == j]
        if not rows:
            continue
        scaled = [m * abs(lam - math.pi * m / lens[j]) for m, lam, _ in rows]
        entry = {"count": len(rows), "max_scaled_dev": float(max(scaled)),
                 "scaled_dev": [float(v) for v in scaled], "m": [int(m) for m, _, _ in rows]}
        if eig is not None:
            entry["dphi0"] = [float(eig[i].dphi0) for _, _, i in rows if i < len(eig) and eig[i] is not None]
        rep["families"][j] = entry
    for i, jj, m, res in fam:
        if jj is None or res > 0.5 * math.pi / lens[jj]:
            rep["unassigned"].append(i)
    if not system.q_is_zero:
        free = StringSystem(system.ell, system.positions, system.masses,
                            tuple(type(p)("poly", (0.0,), p.lo, p.hi) for p in system.potentials))
        gam = find_frequencies(free, count=len(freqs))
        n = np.arange(1, len(freqs) + 1)
        dev = n * np.abs(freqs - gam)
        rep["perturbation"] = {"max_scaled_dev": float(np.max(dev)), "scaled_dev": dev.tolist()}
    return rep


def write_spectrum_csv(path, freqs, system, eig=None):
    fam = assign_families(freqs, system)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "lambda", "family", "phi_prime_0"])
        for i, lam in enumerate(freqs):
            j = fam[i][1]
            d = eig[i].dphi0 if eig is not None else float("nan")
            w.writerow([i + 1, f"{lam:.16e}", "" if j is None else j, f"{d:.16e}"])
